//! End-to-end acceptance criteria. Each test prints one PASS/FAIL line.
//!
//! Criteria run one at a time so the reported runtimes are not inflated by
//! each other.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::Instant;

use eiformer::analysis::{
    attention_map_bytes, bench_forward, cka_matrix, extract_representations, hsic, linear_cka,
    sweep, BenchConfig, BenchStatus, RepLayer, RepStack, SweepAxis,
};
use eiformer::compute::{grad_check, GradCheckOptions, Tensor};
use eiformer::data::{
    gen_synthetic, load_dataset, save_dataset, Dataset, ScenarioSpec, SynthConfig,
};
use eiformer::model::{Arch, ForecastModel, ModelConfig};
use eiformer::train::{
    evaluate, mae, mape, rmse, train, Checkpoint, DataSource, EvalOptions, Protocol, TrainConfig,
    MAPE_EPS,
};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn serial() -> MutexGuard<'static, ()> {
    static LOCK: Mutex<()> = Mutex::new(());
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

/// Writes the verdict past the test harness's output capture, then asserts.
fn verdict(id: u8, name: &str, pass: bool, detail: String) {
    let line = format!(
        "criterion {id:>2} {name}: {} ({detail})\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "{}", line.trim_end());
}

fn gaussian(r: usize, c: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

fn random_input(b: usize, t: usize, n: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn([b, t, n, 1], |_| rng.random_range(-2.0..2.0))
}

/// Moves entity `perm[j]` of `x` into slot `j`.
fn permute_entities(x: &Tensor, perm: &[usize]) -> Tensor {
    let s = x.shape().to_vec();
    let (n, c) = (s[2], s[3]);
    let mut out = Tensor::zeros(s.clone());
    for outer in 0..s[0] * s[1] {
        for (j, &src) in perm.iter().enumerate() {
            for k in 0..c {
                out.data_mut()[(outer * n + j) * c + k] = x.data()[(outer * n + src) * c + k];
            }
        }
    }
    out
}

#[test]
fn c01_gradient_correctness() {
    let _g = serial();
    let t0 = Instant::now();
    let model = ForecastModel::new(ModelConfig {
        arch: Arch::EiFormer,
        history_len: 8,
        forecast_len: 4,
        channels: 1,
        embed_dim: 8,
        latent_count: 3,
        num_blocks: 2,
        seed: 11,
        ..ModelConfig::default()
    })
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random_input(1, 8, 4, &mut rng);
    let target = Tensor::from_fn([1, 4, 4, 1], |_| rng.random_range(-1.0..1.0));
    let ids: Vec<_> = model.params.ids().collect();
    // Squared error keeps the loss smooth everywhere.
    let loss = |tape: &mut eiformer::compute::Tape, store: &eiformer::compute::ParamStore| {
        let xv = tape.input(x.clone());
        let y = model.forward_with(tape, store, xv)?;
        let t = tape.input(target.clone());
        let e = tape.sub(y, t)?;
        let sq = tape.mul(e, e)?;
        Ok(tape.mean(sq))
    };
    let report = grad_check(loss, &model.params, &ids, GradCheckOptions::default()).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    let trainable = model.params.scalar_count(true);
    verdict(
        1,
        "gradient correctness",
        report.max_rel_error < 1e-4 && report.coords_checked == trainable && secs < 60.0,
        format!(
            "max rel err {:.2e} at {:?}, {} of {} trainable coords, {secs:.1}s",
            report.max_rel_error, report.worst, report.coords_checked, trainable
        ),
    );
}

#[test]
fn c02_frozen_keys_survive_training() {
    let _g = serial();
    let t0 = Instant::now();
    let cfg = TrainConfig {
        lr: 1e-3,
        batch_size: 4,
        max_epochs: 1,
        max_steps: Some(200),
        seed: 4,
        model: ModelConfig {
            embed_dim: 16,
            latent_count: 4,
            ..ModelConfig::default()
        },
        data: DataSource::Synthetic(SynthConfig {
            n_entities: 10,
            n_clusters: 2,
            steps: 2000,
            seed: 4,
            ..SynthConfig::default()
        }),
        ..TrainConfig::default()
    };
    let out = train(&cfg).unwrap();
    let trained = &out.checkpoint.model;
    let init = ForecastModel::new(trained.config.clone()).unwrap();
    let frozen = trained.frozen_ids();
    let frozen_same = frozen.iter().all(|&id| {
        let (a, b) = (trained.params.get(id), init.params.get(id));
        a.value
            .data()
            .iter()
            .zip(b.value.data())
            .all(|(x, y)| x.to_bits() == y.to_bits())
    });
    let (mut changed, mut total) = (0usize, 0usize);
    for (a, b) in trained.params.iter().zip(init.params.iter()) {
        if a.trainable {
            total += a.value.numel();
            changed += a
                .value
                .data()
                .iter()
                .zip(b.value.data())
                .filter(|(x, y)| x != y)
                .count();
        }
    }
    let frac = changed as f64 / total as f64;
    let steps = out.checkpoint.meta.optimizer_steps;
    let secs = t0.elapsed().as_secs_f64();
    verdict(
        2,
        "frozen-K contract",
        steps == 200 && frozen.len() == 2 && frozen_same && frac >= 0.99 && secs < 120.0,
        format!(
            "{steps} steps, {} frozen buffers unchanged={frozen_same}, {changed}/{total} trainable scalars changed ({:.2}%), {secs:.1}s",
            frozen.len(),
            100.0 * frac
        ),
    );
}

#[test]
fn c03_equivariance_and_inductiveness() {
    let _g = serial();
    let t0 = Instant::now();
    let synth = |n: usize, seed| SynthConfig {
        n_entities: n,
        n_clusters: n.min(4),
        steps: 400,
        seed,
        ..SynthConfig::default()
    };
    let cfg = TrainConfig {
        lr: 1e-3,
        max_epochs: 1,
        max_steps: Some(40),
        seed: 3,
        train_stride: 2,
        model: ModelConfig {
            embed_dim: 16,
            latent_count: 4,
            ..ModelConfig::default()
        },
        data: DataSource::Synthetic(synth(64, 3)),
        ..TrainConfig::default()
    };
    let out = train(&cfg).unwrap();
    let ckpt = &out.checkpoint;
    let model = &ckpt.model;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = random_input(2, 12, 64, &mut rng);
    let base = model.predict(&x).unwrap();
    let mut worst_perm = 0.0f64;
    for _ in 0..20 {
        let mut perm: Vec<usize> = (0..64).collect();
        perm.shuffle(&mut rng);
        let lhs = model.predict(&permute_entities(&x, &perm)).unwrap();
        worst_perm = worst_perm.max(lhs.max_abs_diff(&permute_entities(&base, &perm)).unwrap());
    }

    let mut inductive = Vec::new();
    for n in [80, 1] {
        let data = gen_synthetic(&synth(n, 5)).unwrap();
        let rep = evaluate(ckpt, &data, &EvalOptions::default());
        let ok = rep
            .as_ref()
            .is_ok_and(|r| r.average.as_ref().is_some_and(|a| a.mae.is_finite()));
        let shape_ok = model
            .predict(&random_input(1, 12, n, &mut rng))
            .is_ok_and(|y| y.shape() == [1, 12, n, 1]);
        inductive.push((n, ok && shape_ok));
    }

    let j = 17;
    let mut idx: Vec<usize> = (0..64).collect();
    idx.push(j);
    let dup = permute_entities_extend(&x, &idx);
    let y = model.predict(&dup).unwrap();
    let mut worst_dup = 0.0f64;
    for b in 0..2 {
        for f in 0..12 {
            worst_dup = worst_dup.max((y.at(&[b, f, j, 0]) - y.at(&[b, f, 64, 0])).abs());
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    verdict(
        3,
        "permutation equivariance and inductiveness",
        worst_perm < 1e-9 && worst_dup < 1e-9 && inductive.iter().all(|p| p.1),
        format!(
            "max perm diff {worst_perm:.1e} over 20 permutations, duplicate diff {worst_dup:.1e}, trained N=64 evaluates {inductive:?}, {secs:.1}s"
        ),
    );
}

/// Gathers entities `idx` (repeats allowed) along the entity axis.
fn permute_entities_extend(x: &Tensor, idx: &[usize]) -> Tensor {
    let s = x.shape();
    let (n, c) = (s[2], s[3]);
    let mut data = Vec::with_capacity(s[0] * s[1] * idx.len() * c);
    for outer in 0..s[0] * s[1] {
        for &e in idx {
            data.extend_from_slice(&x.data()[(outer * n + e) * c..(outer * n + e + 1) * c]);
        }
    }
    Tensor::new(vec![s[0], s[1], idx.len(), c], data).unwrap()
}

#[test]
fn c04_linear_versus_quadratic_scaling() {
    let _g = serial();
    let t0 = Instant::now();
    let cfg = BenchConfig {
        repeats: 7,
        ..BenchConfig::default()
    };
    let report = bench_forward(&cfg).unwrap();
    let ei = report.slope(Arch::EiFormer);
    let iv = report.slope(Arch::IVariate);
    let status = |arch, n| {
        report
            .records
            .iter()
            .find(|r| r.arch == arch && r.n == n)
            .map(|r| r.status)
    };
    let guarded_where_eiformer_runs: Vec<usize> = cfg
        .ns
        .iter()
        .copied()
        .filter(|&n| {
            status(Arch::IVariate, n) == Some(BenchStatus::OomGuard)
                && status(Arch::EiFormer, n) == Some(BenchStatus::Ok)
        })
        .collect();
    let measured_ratio = |arch: Arch| -> Vec<f64> {
        let ok: Vec<_> = report
            .records_for(arch)
            .filter(|r| r.status == BenchStatus::Ok)
            .collect();
        ok.windows(2)
            .filter(|w| w[1].n == 2 * w[0].n)
            .map(|w| w[1].attn_map_bytes as f64 / w[0].attn_map_bytes as f64)
            .collect()
    };
    let (ei_ratios, iv_ratios) = (
        measured_ratio(Arch::EiFormer),
        measured_ratio(Arch::IVariate),
    );
    let closed_form = [1usize, 3, 1000, 1 << 14].iter().all(|&n| {
        attention_map_bytes(Arch::EiFormer, 2 * n, 8)
            == 2 * attention_map_bytes(Arch::EiFormer, n, 8)
            && attention_map_bytes(Arch::IVariate, 2 * n, 8)
                == 4 * attention_map_bytes(Arch::IVariate, n, 8)
    });
    let secs = t0.elapsed().as_secs_f64();
    let pass = ei.is_some_and(|s| (0.8..=1.3).contains(&s))
        && iv.is_some_and(|s| s >= 1.6)
        && !guarded_where_eiformer_runs.is_empty()
        && !ei_ratios.is_empty()
        && ei_ratios.iter().all(|&r| r == 2.0)
        && !iv_ratios.is_empty()
        && iv_ratios.iter().all(|&r| r == 4.0)
        && closed_form
        && secs < 600.0;
    let ms: Vec<String> = report
        .records
        .iter()
        .filter_map(|r| {
            r.median_seconds
                .map(|t| format!("{:?}@{}={:.1}ms", r.arch, r.n, 1e3 * t))
        })
        .collect();
    verdict(
        4,
        "linear-vs-quadratic scaling",
        pass,
        format!(
            "eiformer slope {ei:.3?}, ivariate slope {iv:.3?}, ivariate guarded at {guarded_where_eiformer_runs:?}, byte ratios {ei_ratios:?} / {iv_ratios:?}, medians [{}], {secs:.1}s",
            ms.join(" ")
        ),
    );
}

/// `trace(H Cp H H Cq H) / (M-1)^2` with explicit loops.
fn hsic_loops(cp: &[f64], cq: &[f64], m: usize) -> f64 {
    let h = |i: usize, j: usize| if i == j { 1.0 } else { 0.0 } - 1.0 / m as f64;
    let center = |c: &[f64]| {
        let mut out = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                for a in 0..m {
                    for b in 0..m {
                        out[i * m + j] += h(i, a) * c[a * m + b] * h(b, j);
                    }
                }
            }
        }
        out
    };
    let (kp, kq) = (center(cp), center(cq));
    let mut tr = 0.0;
    for i in 0..m {
        for j in 0..m {
            tr += kp[i * m + j] * kq[j * m + i];
        }
    }
    tr / ((m - 1) * (m - 1)) as f64
}

#[test]
fn c05_cka_invariants() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (m, f) = (32, 10);
    let mut worst_inv = 0.0f64;
    for _ in 0..10 {
        let x = gaussian(m, f, &mut rng);
        let xs = row_major(&x);
        let q = gaussian(f, f, &mut rng).qr().q();
        let scale: f64 = rng.random_range(0.01..100.0);
        let xq = row_major(&(&x * &q));
        let xc: Vec<f64> = xs.iter().map(|v| v * scale).collect();
        for other in [&xs, &xq, &xc] {
            worst_inv = worst_inv.max((linear_cka(&xs, f, other, f, m).unwrap() - 1.0).abs());
        }
    }

    let mut worst_hsic = 0.0f64;
    for _ in 0..20 {
        let a = gaussian(8, 5, &mut rng);
        let b = gaussian(8, 3, &mut rng);
        let cp = row_major(&(&a * a.transpose()));
        let cq = row_major(&(&b * b.transpose()));
        worst_hsic = worst_hsic.max((hsic(&cp, &cq, 8).unwrap() - hsic_loops(&cp, &cq, 8)).abs());
    }

    let stack = |names: &[&str], rng: &mut ChaCha8Rng| RepStack {
        layers: names
            .iter()
            .map(|n| {
                let f = rng.random_range(2..9);
                RepLayer {
                    name: n.to_string(),
                    samples: 24,
                    features: f,
                    data: row_major(&gaussian(24, f, rng)),
                }
            })
            .collect(),
        flattening: "row-major".into(),
    };
    let a = stack(&["a0", "a1", "a2"], &mut rng);
    let b = stack(&["b0", "b1", "b2", "b3"], &mut rng);
    let (ab, ba) = (cka_matrix(&a, &b).unwrap(), cka_matrix(&b, &a).unwrap());
    let mut worst_t = 0.0f64;
    for i in 0..3 {
        for j in 0..4 {
            worst_t = worst_t.max((ab.get(i, j) - ba.get(j, i)).abs());
        }
    }

    let model = ForecastModel::new(ModelConfig {
        embed_dim: 8,
        latent_count: 4,
        ..ModelConfig::default()
    })
    .unwrap();
    let reps = extract_representations(&model, &random_input(16, 12, 6, &mut rng)).unwrap();
    let own = cka_matrix(&reps, &reps).unwrap();
    let worst_diag = (0..reps.layers.len())
        .map(|i| (own.get(i, i) - 1.0).abs())
        .fold(0.0, f64::max);

    verdict(
        5,
        "CKA invariants",
        worst_inv <= 1e-6 && worst_hsic <= 1e-10 && worst_t <= 1e-9 && worst_diag <= 1e-6,
        format!(
            "self/orthogonal/scale max |CKA-1| {worst_inv:.1e}, HSIC vs loop oracle {worst_hsic:.1e}, transpose {worst_t:.1e}, model self-CKA diagonal {worst_diag:.1e}"
        ),
    );
}

struct Run {
    test_mae: f64,
    secs: f64,
}

/// The shared forecasting setup: lr 1e-3 and 40 epochs for every model.
fn forecast_run(arch: Arch, scenario: u8) -> &'static Run {
    static RUNS: OnceLock<Mutex<HashMap<(u8, u8), &'static Run>>> = OnceLock::new();
    let key = (arch as u8, scenario);
    let runs = RUNS.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(r) = runs.lock().unwrap().get(&key) {
        return r;
    }
    let t0 = Instant::now();
    let cfg = TrainConfig {
        lr: 1e-3,
        max_epochs: 40,
        seed: 1,
        scenario: ScenarioSpec::new(scenario, 0.1, 1),
        model: ModelConfig {
            arch,
            ..ModelConfig::default()
        },
        data: DataSource::Synthetic(SynthConfig {
            seed: 7,
            ..SynthConfig::default()
        }),
        ..TrainConfig::default()
    };
    let out = train(&cfg).unwrap();
    // Fixed-width models need slots for unseen entities; for the others the
    // protocol changes nothing.
    let opts = EvalOptions {
        protocol: Protocol::SlotReuse,
        ..EvalOptions::default()
    };
    let report = evaluate(&out.checkpoint, &out.prepared.test, &opts).unwrap();
    let run: &'static Run = Box::leak(Box::new(Run {
        test_mae: report.average.unwrap().mae,
        secs: t0.elapsed().as_secs_f64(),
    }));
    let _ = std::io::stderr().write_all(
        format!(
            "  {arch:?} scenario {scenario}: test MAE {:.4} in {:.0}s\n",
            run.test_mae, run.secs
        )
        .as_bytes(),
    );
    runs.lock().unwrap().insert(key, run);
    run
}

#[test]
fn c06_forecasting_skill() {
    let _g = serial();
    let ei = forecast_run(Arch::EiFormer, 0);
    let lin = forecast_run(Arch::Linear, 0);
    let gain = 1.0 - ei.test_mae / lin.test_mae;
    verdict(
        6,
        "end-to-end forecasting skill",
        gain >= 0.10 && ei.secs < 600.0 && lin.secs < 600.0,
        format!(
            "eiformer MAE {:.4} ({:.0}s) vs linear {:.4} ({:.0}s), {:.1}% lower",
            ei.test_mae,
            ei.secs,
            lin.test_mae,
            lin.secs,
            100.0 * gain
        ),
    );
}

#[test]
fn c07_scenario_robustness() {
    let _g = serial();
    let runs: Vec<&Run> = [
        (Arch::EiFormer, 0),
        (Arch::EiFormer, 1),
        (Arch::FeatMlp, 0),
        (Arch::FeatMlp, 1),
    ]
    .into_iter()
    .map(|(a, s)| forecast_run(a, s))
    .collect();
    let ei_ratio = runs[1].test_mae / runs[0].test_mae;
    let fm_ratio = runs[3].test_mae / runs[2].test_mae;
    let factor = fm_ratio / ei_ratio;
    let secs: f64 = runs.iter().map(|r| r.secs).sum();
    verdict(
        7,
        "scenario robustness",
        factor >= 1.2 && secs < 1200.0,
        format!(
            "featmlp S1/S0 {fm_ratio:.3} ({:.4}/{:.4}), eiformer S1/S0 {ei_ratio:.3} ({:.4}/{:.4}), factor {factor:.3}, {secs:.0}s of training",
            runs[3].test_mae, runs[2].test_mae, runs[1].test_mae, runs[0].test_mae
        ),
    );
}

#[test]
fn c08_metric_oracles() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    let mut masks_ok = true;
    for _ in 0..50 {
        let len = rng.random_range(1..300);
        let t: Vec<f64> = (0..len)
            .map(|_| {
                if rng.random_bool(0.15) {
                    0.0
                } else {
                    rng.random_range(-50.0..50.0)
                }
            })
            .collect();
        let p: Vec<f64> = (0..len).map(|_| rng.random_range(-50.0..50.0)).collect();
        let (mut abs, mut sq, mut pct, mut used) = (0.0, 0.0, 0.0, 0usize);
        for i in 0..len {
            let e = p[i] - t[i];
            abs += e.abs();
            sq += e * e;
            if t[i] != 0.0 {
                pct += e.abs() / t[i].abs();
                used += 1;
            }
        }
        let n = len as f64;
        worst = worst.max((mae(&p, &t).unwrap() - abs / n).abs());
        worst = worst.max((rmse(&p, &t).unwrap() - (sq / n).sqrt()).abs());
        let m = mape(&p, &t, MAPE_EPS).unwrap();
        masks_ok &= m.masked == len - used;
        match m.value {
            Some(v) if used > 0 => {
                worst = worst.max(
                    (v - 100.0 * pct / used as f64).abs() / (100.0 * pct / used as f64).max(1.0),
                )
            }
            None if used == 0 => {}
            _ => masks_ok = false,
        }
    }
    let zeros = mape(&[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0], MAPE_EPS).unwrap();
    masks_ok &= zeros.value.is_none() && zeros.masked == 3;
    let partial = mape(&[1.0, 3.0], &[0.0, 2.0], MAPE_EPS).unwrap();
    masks_ok &= partial.value == Some(50.0) && partial.masked == 1;
    verdict(
        8,
        "metric oracles",
        worst <= 1e-12 && masks_ok,
        format!(
            "max deviation {worst:.1e} over 50 arrays, masking and mask counts correct={masks_ok}"
        ),
    );
}

fn eif(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_eif"))
        .args(args)
        .env_clear()
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "eif {args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Drops the columns named in `skip` from a CSV file.
fn csv_without(path: &Path, skip: &[&str]) -> String {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let keep: Vec<usize> = (0..header.len())
        .filter(|&i| !skip.contains(&header[i]))
        .collect();
    std::iter::once(header.join(","))
        .chain(lines.map(|l| {
            let cells: Vec<&str> = l.split(',').collect();
            keep.iter().map(|&i| cells[i]).collect::<Vec<_>>().join(",")
        }))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Runs every subcommand into `dir` and returns its primary outputs.
fn cli_outputs(dir: &Path, csv: &Path) -> Vec<(String, Vec<u8>)> {
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let data = s(&dir.join("data"));
    eif(&[
        "gen-data",
        "--entities",
        "12",
        "--clusters",
        "3",
        "--steps",
        "300",
        "--seed",
        "2",
        "--out",
        &data,
    ]);
    eif(&[
        "import-csv",
        "--input",
        &s(csv),
        "--layout",
        "long",
        "--out",
        &s(&dir.join("imported")),
    ]);
    let small = [
        "--dim",
        "8",
        "--latents",
        "4",
        "--epochs",
        "2",
        "--stride",
        "4",
        "--lr",
        "1e-3",
        "--seed",
        "5",
    ];
    for (name, blocks) in [("run1", "1"), ("run2", "2")] {
        let mut args = vec!["train", "--data", &data, "--blocks", blocks];
        let out = s(&dir.join(name));
        args.extend_from_slice(&small);
        args.extend(["--out", &out]);
        eif(&args);
    }
    let ck1 = s(&dir.join("run1/ckpt.eif"));
    let ck2 = s(&dir.join("run2/ckpt.eif"));
    eif(&[
        "eval",
        "--ckpt",
        &ck2,
        "--data",
        &data,
        "--out",
        &s(&dir.join("eval")),
    ]);
    eif(&[
        "cka",
        "--ckpt-a",
        &ck1,
        "--ckpt-b",
        &ck2,
        "--data",
        &data,
        "--samples",
        "16",
        "--out",
        &s(&dir.join("cka")),
    ]);
    eif(&[
        "bench",
        "--min-n",
        "64",
        "--max-n",
        "256",
        "--dim",
        "8",
        "--latents",
        "4",
        "--blocks",
        "1",
        "--budget-bytes",
        "262144",
        "--out",
        &s(&dir.join("bench")),
    ]);
    let base = dir.join("base.json");
    let cfg = TrainConfig {
        max_epochs: 1,
        train_stride: 4,
        model: ModelConfig {
            embed_dim: 8,
            latent_count: 4,
            num_blocks: 1,
            ..ModelConfig::default()
        },
        data: DataSource::Dir {
            path: dir.join("data"),
        },
        ..TrainConfig::default()
    };
    fs::write(&base, serde_json::to_string(&cfg).unwrap()).unwrap();
    eif(&[
        "sweep",
        "--axis",
        "layers",
        "--values",
        "1,2",
        "--base-config",
        &s(&base),
        "--out",
        &s(&dir.join("sweep")),
    ]);

    let mut files = Vec::new();
    for f in [
        "data/meta.json",
        "data/values.f64",
        "data/census.json",
        "imported/meta.json",
        "imported/values.f64",
        "run1/ckpt.eif",
        "run1/log.jsonl",
        "run1/test_metrics.json",
        "run1/test_metrics.csv",
        "run2/ckpt.eif",
        "eval/metrics.json",
        "eval/metrics.csv",
        "cka/cka.csv",
        "cka/cka.png",
    ] {
        files.push((f.to_string(), fs::read(dir.join(f)).unwrap()));
    }
    files.push((
        "bench/bench.csv".into(),
        csv_without(&dir.join("bench/bench.csv"), &["median_seconds"]).into_bytes(),
    ));
    files.push((
        "sweep/sweep.csv".into(),
        csv_without(&dir.join("sweep/sweep.csv"), &["wall_seconds"]).into_bytes(),
    ));
    files
}

fn small_dataset() -> Dataset {
    gen_synthetic(&SynthConfig {
        n_entities: 7,
        n_clusters: 2,
        steps: 300,
        emerge_frac: 0.2,
        seed: 6,
        ..SynthConfig::default()
    })
    .unwrap()
}

#[test]
fn c09_determinism_and_round_trips() {
    let _g = serial();
    let t0 = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut failures: Vec<String> = Vec::new();

    let cfg = TrainConfig {
        lr: 1e-3,
        max_epochs: 2,
        train_stride: 4,
        seed: 12,
        model: ModelConfig {
            embed_dim: 8,
            latent_count: 4,
            ..ModelConfig::default()
        },
        data: DataSource::Synthetic(SynthConfig {
            n_entities: 8,
            n_clusters: 2,
            steps: 300,
            seed: 12,
            ..SynthConfig::default()
        }),
        ..TrainConfig::default()
    };
    let (a, b) = (train(&cfg).unwrap(), train(&cfg).unwrap());
    let bytes = a.checkpoint.to_bytes().unwrap();
    if bytes != b.checkpoint.to_bytes().unwrap() {
        failures.push("same-seed checkpoints differ".into());
    }

    let path = dir.path().join("ckpt.eif");
    a.checkpoint.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    if back.to_bytes().unwrap() != bytes
        || !back
            .model
            .params
            .values_bitwise_eq(&a.checkpoint.model.params)
    {
        failures.push("checkpoint round trip".into());
    }
    let x = random_input(2, 12, 8, &mut ChaCha8Rng::seed_from_u64(0));
    if !back
        .model
        .predict(&x)
        .unwrap()
        .bitwise_eq(&a.checkpoint.model.predict(&x).unwrap())
    {
        failures.push("reloaded forecasts differ".into());
    }

    let d = small_dataset();
    save_dataset(&d, dir.path().join("ds")).unwrap();
    let loaded = load_dataset(dir.path().join("ds")).unwrap();
    let bits = |d: &Dataset| d.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    if loaded != d || bits(&loaded) != bits(&d) {
        failures.push("dataset round trip".into());
    }

    let csv = dir.path().join("long.csv");
    let mut text = String::from("timestamp,entity,channel,value\n");
    for t in 0..50 {
        for e in ["north", "south", "east"] {
            text += &format!(
                "{},{e},flow,{}\n",
                600 * t,
                (t as f64 * 0.37).sin() * 10.0 + 20.0
            );
        }
    }
    fs::write(&csv, text).unwrap();
    let first = cli_outputs(&dir.path().join("first"), &csv);
    let second = cli_outputs(&dir.path().join("second"), &csv);
    let cli_diffs: Vec<&str> = first
        .iter()
        .zip(&second)
        .filter(|(x, y)| x.1 != y.1)
        .map(|(x, _)| x.0.as_str())
        .collect();
    if !cli_diffs.is_empty() {
        failures.push(format!("CLI reruns differ in {cli_diffs:?}"));
    }
    verdict(
        9,
        "determinism and round trips",
        failures.is_empty(),
        format!(
            "checkpoint {} bytes, {} CLI outputs compared, problems {failures:?}, {:.1}s",
            bytes.len(),
            first.len(),
            t0.elapsed().as_secs_f64()
        ),
    );
}

#[test]
fn c10_learning_rate_sweep() {
    let _g = serial();
    let t0 = Instant::now();
    let base = TrainConfig {
        max_epochs: 3,
        train_stride: 2,
        seed: 10,
        model: ModelConfig {
            embed_dim: 16,
            latent_count: 4,
            ..ModelConfig::default()
        },
        data: DataSource::Synthetic(SynthConfig {
            n_entities: 20,
            n_clusters: 4,
            steps: 600,
            seed: 10,
            ..SynthConfig::default()
        }),
        ..TrainConfig::default()
    };
    let lrs = [1e-3, 1e-4, 1e-5];
    let report = sweep(&base, SweepAxis::Lr, &lrs).unwrap();
    let csv = report.to_csv().unwrap();
    let mut reader = csv::Reader::from_reader(csv.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .unwrap()
        .iter()
        .map(str::to_string)
        .collect();
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    let well_formed = header
        == [
            "axis",
            "value",
            "params",
            "val_mae",
            "test_mae",
            "wall_seconds",
            "status",
            "error",
        ]
        && rows.len() == 3
        && rows.iter().zip(lrs).all(|(r, lr)| {
            r.len() == header.len()
                && &r[col("axis")] == "lr"
                && r[col("value")].parse::<f64>() == Ok(lr)
                && &r[col("status")] == "ok"
                && r[col("test_mae")].parse::<f64>().is_ok_and(f64::is_finite)
        });
    let maes: Vec<&str> = rows.iter().map(|r| &r[col("test_mae")]).collect();
    verdict(
        10,
        "learning-rate sweep",
        well_formed,
        format!(
            "3-row CSV well formed={well_formed}, test MAE by lr {maes:?}, {:.1}s",
            t0.elapsed().as_secs_f64()
        ),
    );
}
