use eiformer::compute::{
    grad_check, AdamConfig, AdamState, GradCheckOptions, ParamId, ParamStore, Tape, Tensor, Var,
};
use eiformer::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

fn eval1(f: impl FnOnce(&mut Tape) -> Var) -> Tensor {
    let mut tape = Tape::new();
    let v = f(&mut tape);
    tape.value(v).clone()
}

#[test]
fn matmul_small_cases() {
    let out = eval1(|tp| {
        let a = tp.input(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let b = tp.input(t(&[2, 2], &[3.0, 4.0, 5.0, 6.0]));
        tp.matmul(a, b).unwrap()
    });
    assert_eq!(out.data(), &[3.0, 4.0, 5.0, 6.0]);
    let out = eval1(|tp| {
        let a = tp.input(t(&[1, 2], &[1.0, 2.0]));
        let b = tp.input(t(&[2, 1], &[3.0, 4.0]));
        tp.matmul(a, b).unwrap()
    });
    assert_eq!(out.data(), &[11.0]);
}

#[test]
fn matmul_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random(&[4, 5], &mut rng);
    let b = random(&[5, 3], &mut rng);
    let out = eval1(|tp| {
        let av = tp.input(a.clone());
        let bv = tp.input(b.clone());
        tp.matmul(av, bv).unwrap()
    });
    for i in 0..4 {
        for k in 0..3 {
            let mut s = 0.0;
            for j in 0..5 {
                s += a.at(&[i, j]) * b.at(&[j, k]);
            }
            assert!((out.at(&[i, k]) - s).abs() < 1e-12);
        }
    }
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut tp = Tape::new();
    let a = tp.input(Tensor::zeros([2, 3]));
    let b = tp.input(Tensor::zeros([4, 2]));
    let msg = tp.matmul(a, b).unwrap_err().to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
}

#[test]
fn matmul_broadcasts_batch_dimensions() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = random(&[2, 3, 4], &mut rng);
    let b = random(&[4, 5], &mut rng);
    let out = eval1(|tp| {
        let av = tp.input(a.clone());
        let bv = tp.input(b.clone());
        tp.matmul(av, bv).unwrap()
    });
    assert_eq!(out.shape(), &[2, 3, 5]);
    let s: f64 = (0..4).map(|j| a.at(&[1, 2, j]) * b.at(&[j, 4])).sum();
    assert!((out.at(&[1, 2, 4]) - s).abs() < 1e-12);
}

fn softmax(x: &[f64]) -> Vec<f64> {
    eval1(|tp| {
        let v = tp.input(t(&[1, x.len()], x));
        tp.softmax_rows(v).unwrap()
    })
    .data()
    .to_vec()
}

#[test]
fn softmax_examples() {
    assert_eq!(softmax(&[0.0, 0.0]), vec![0.5, 0.5]);
    for p in softmax(&[1000.0, 1000.0, 1000.0]) {
        assert!((p - 1.0 / 3.0).abs() < 1e-15);
    }
    let p = softmax(&[0.0, 3.0f64.ln()]);
    assert!((p[0] - 0.25).abs() < 1e-15 && (p[1] - 0.75).abs() < 1e-15);
}

#[test]
fn softmax_rejects_nan() {
    let mut tp = Tape::new();
    let v = tp.input(t(&[1, 2], &[0.0, f64::NAN]));
    assert!(matches!(tp.softmax_rows(v), Err(Error::Numeric(_))));
}

fn layer_norm_row(x: &[f64], eps: f64) -> Vec<f64> {
    let d = x.len();
    eval1(|tp| {
        let xv = tp.input(t(&[1, d], x));
        let g = tp.input(Tensor::full([d], 1.0));
        let b = tp.input(Tensor::zeros([d]));
        tp.layer_norm(xv, g, b, eps).unwrap()
    })
    .data()
    .to_vec()
}

#[test]
fn layer_norm_examples() {
    let y = layer_norm_row(&[1.0, 2.0, 3.0], 0.0);
    let mean = y.iter().sum::<f64>() / 3.0;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0;
    assert!(mean.abs() < 1e-12);
    assert!((var - 1.0).abs() < 1e-9);
    assert_eq!(layer_norm_row(&[5.0, 5.0, 5.0], 1e-5), vec![0.0, 0.0, 0.0]);
}

#[test]
fn layer_norm_matches_two_pass_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x: Vec<f64> = (0..9).map(|_| rng.random_range(-3.0..3.0)).collect();
    let g: Vec<f64> = (0..9).map(|_| rng.random_range(0.5..1.5)).collect();
    let b: Vec<f64> = (0..9).map(|_| rng.random_range(-0.5..0.5)).collect();
    let eps = 1e-5;
    let y = eval1(|tp| {
        let xv = tp.input(t(&[1, 9], &x));
        let gv = tp.input(t(&[9], &g));
        let bv = tp.input(t(&[9], &b));
        tp.layer_norm(xv, gv, bv, eps).unwrap()
    });
    let mean = x.iter().sum::<f64>() / 9.0;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 9.0;
    for i in 0..9 {
        let want = (x[i] - mean) / (var + eps).sqrt() * g[i] + b[i];
        assert!((y.data()[i] - want).abs() < 1e-10);
    }
}

#[test]
fn backward_of_sum_and_square() {
    let mut store = ParamStore::new();
    let w = store.add("w", t(&[3], &[1.0, 2.0, 3.0]), true);
    let mut tp = Tape::new();
    let wv = tp.param(&store, w);
    let s = tp.sum(wv);
    tp.backward(s, &mut store).unwrap();
    assert_eq!(store.get(w).grad.as_ref().unwrap().data(), &[1.0, 1.0, 1.0]);
    assert!(tp.is_empty());

    store.clear_grads();
    let wv = tp.param(&store, w);
    let sq = tp.mul(wv, wv).unwrap();
    let s = tp.sum(sq);
    tp.backward(s, &mut store).unwrap();
    assert_eq!(store.get(w).grad.as_ref().unwrap().data(), &[2.0, 4.0, 6.0]);
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut store = ParamStore::new();
    let w = store.add("w", t(&[2], &[1.0, 2.0]), true);
    let mut tp = Tape::new();
    let wv = tp.param(&store, w);
    assert!(matches!(
        tp.backward(wv, &mut store),
        Err(Error::Contract(_))
    ));
}

#[test]
fn frozen_parameter_gets_exact_zero_gradient() {
    let mut store = ParamStore::new();
    let w = store.add("w", t(&[2], &[1.0, 2.0]), true);
    let k = store.add("k", t(&[2], &[3.0, -1.0]), false);
    let mut tp = Tape::new();
    let wv = tp.param(&store, w);
    let kv = tp.param(&store, k);
    let p = tp.mul(wv, kv).unwrap();
    let s = tp.sum(p);
    tp.backward(s, &mut store).unwrap();
    assert_eq!(store.get(w).grad.as_ref().unwrap().data(), &[3.0, -1.0]);
    assert_eq!(store.get(k).grad.as_ref().unwrap().data(), &[0.0, 0.0]);
}

#[test]
fn grad_check_quadratic_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = random(&[4, 4], &mut rng);
    let mut store = ParamStore::new();
    let x = store.add("x", random(&[4, 1], &mut rng), true);
    let f = |tp: &mut Tape, s: &ParamStore| {
        let xv = tp.param(s, x);
        let av = tp.input(a.clone());
        let ax = tp.matmul(av, xv)?;
        let p = tp.mul(xv, ax)?;
        Ok(tp.sum(p))
    };
    let rep = grad_check(f, &store, &[x], GradCheckOptions::default()).unwrap();
    assert!(rep.max_rel_error < 1e-9, "{rep:?}");
}

#[test]
fn grad_check_softmax_cross_entropy() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let inputs = random(&[5, 3], &mut rng);
    let mut onehot = Tensor::zeros([5, 4]);
    for r in 0..5 {
        onehot.data_mut()[r * 4 + r % 4] = 1.0;
    }
    let mut store = ParamStore::new();
    let w = store.add("w", random(&[3, 4], &mut rng), true);
    let b = store.add("b", random(&[4], &mut rng), true);
    let f = |tp: &mut Tape, s: &ParamStore| {
        let x = tp.input(inputs.clone());
        let wv = tp.param(s, w);
        let bv = tp.param(s, b);
        let z = tp.matmul(x, wv)?;
        let z = tp.add(z, bv)?;
        let p = tp.softmax_rows(z)?;
        let lp = tp.ln(p)?;
        let y = tp.input(onehot.clone());
        let picked = tp.mul(lp, y)?;
        let total = tp.sum(picked);
        Ok(tp.scale(total, -1.0 / 5.0))
    };
    let rep = grad_check(f, &store, &[w, b], GradCheckOptions::default()).unwrap();
    assert!(rep.max_rel_error < 1e-6, "{rep:?}");
}

#[test]
fn grad_check_detects_nondeterminism() {
    use std::cell::Cell;
    let mut store = ParamStore::new();
    let w = store.add("w", t(&[1], &[1.0]), true);
    let calls = Cell::new(0.0);
    let f = |tp: &mut Tape, s: &ParamStore| {
        calls.set(calls.get() + 1.0);
        let wv = tp.param(s, w);
        let c = tp.scale(wv, calls.get());
        Ok(tp.sum(c))
    };
    assert!(matches!(
        grad_check(f, &store, &[w], GradCheckOptions::default()),
        Err(Error::Oracle(_))
    ));
}

#[test]
fn adam_frozen_parameter_survives_many_steps() {
    let mut store = ParamStore::new();
    let w = store.add("w", t(&[2], &[0.3, -0.7]), true);
    let k = store.add("k", t(&[2], &[1.5, 2.5]), false);
    let before = store.get(k).value.clone();
    let mut adam = AdamState::new(
        &store,
        AdamConfig {
            lr: 0.01,
            ..AdamConfig::default()
        },
    );
    for _ in 0..100 {
        let mut tp = Tape::new();
        let wv = tp.param(&store, w);
        let kv = tp.param(&store, k);
        let p = tp.mul(wv, kv).unwrap();
        let s = tp.sum(p);
        tp.backward(s, &mut store).unwrap();
        adam.step(&mut store).unwrap();
    }
    assert!(store.get(k).value.bitwise_eq(&before));
    assert_eq!(adam.step_count(), 100);
}

/// One randomized scalar loss per differentiable operation.
fn op_loss(
    op: usize,
    tp: &mut Tape,
    s: &ParamStore,
    ids: &[ParamId],
    aux: &[Tensor],
) -> eiformer::Result<Var> {
    let a = tp.param(s, ids[0]);
    let b = tp.param(s, ids[1]);
    let y = match op {
        0 => tp.matmul(a, b)?,
        1 => {
            let bt = tp.transpose(b)?;
            tp.add(a, bt)?
        }
        2 => {
            let bt = tp.transpose(b)?;
            tp.sub(a, bt)?
        }
        3 => {
            let bt = tp.transpose(b)?;
            tp.mul(a, bt)?
        }
        4 => tp.gelu(a),
        5 => {
            let sq = tp.mul(a, a)?;
            let one = tp.input(Tensor::full([3, 4], 1.0));
            let pos = tp.add(sq, one)?;
            tp.ln(pos)?
        }
        6 => tp.softmax_rows(a)?,
        7 => {
            let g = tp.param(s, ids[2]);
            let bb = tp.param(s, ids[3]);
            tp.layer_norm(a, g, bb, 1e-5)?
        }
        8 => {
            let r = tp.reshape(a, [2, 6])?;
            tp.permute(r, &[1, 0])?
        }
        9 => {
            let m = tp.mean(a);
            tp.scale(m, 2.5)
        }
        10 => {
            let bias = tp.param(s, ids[3]);
            tp.add(a, bias)?
        }
        _ => return tp.mean_abs_diff(a, &aux[1]),
    };
    let w =
        tp.input(aux[0].reshape(tp.shape(y).to_vec()).unwrap_or_else(|_| {
            Tensor::from_fn(tp.shape(y).to_vec(), |i| ((i * 7 % 5) as f64) - 1.7)
        }));
    let p = tp.mul(y, w)?;
    Ok(tp.sum(p))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn softmax_rows_sum_to_one(seed in any::<u64>(), scale in 1.0f64..1000.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::from_fn([4, 7], |_| rng.random_range(-1.0..1.0) * scale);
        let y = eval1(|tp| { let v = tp.input(x.clone()); tp.softmax_rows(v).unwrap() });
        for r in 0..4 {
            let s: f64 = y.data()[r * 7..(r + 1) * 7].iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn every_op_matches_finite_differences(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let ids = [
            store.add("a", random(&[3, 4], &mut rng), true),
            store.add("b", random(&[4, 3], &mut rng), true),
            store.add("g", random(&[4], &mut rng), true),
            store.add("beta", random(&[4], &mut rng), true),
        ];
        let aux = [random(&[3, 4], &mut rng), random(&[3, 4], &mut rng)];
        for op in 0..12 {
            let rep = grad_check(
                |tp: &mut Tape, s: &ParamStore| op_loss(op, tp, s, &ids, &aux),
                &store,
                &ids,
                GradCheckOptions::default(),
            ).unwrap();
            prop_assert!(rep.max_rel_error < 1e-4, "op {op}: {rep:?}");
        }
    }

    #[test]
    fn backward_is_linear_in_the_loss(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let a = store.add("a", random(&[3, 4], &mut rng), true);
        let b = store.add("b", random(&[4, 3], &mut rng), true);
        let l1 = |tp: &mut Tape, s: &ParamStore| {
            let av = tp.param(s, a);
            let bv = tp.param(s, b);
            let m = tp.matmul(av, bv).unwrap();
            let g = tp.gelu(m);
            tp.sum(g)
        };
        let l2 = |tp: &mut Tape, s: &ParamStore| {
            let av = tp.param(s, a);
            let sm = tp.softmax_rows(av).unwrap();
            let sq = tp.mul(sm, sm).unwrap();
            tp.sum(sq)
        };
        let grads = |which: u8| {
            let mut st = store.clone();
            let mut tp = Tape::new();
            let loss = match which {
                0 => l1(&mut tp, &st),
                1 => l2(&mut tp, &st),
                _ => {
                    let x = l1(&mut tp, &st);
                    let y = l2(&mut tp, &st);
                    tp.add(x, y).unwrap()
                }
            };
            tp.backward(loss, &mut st).unwrap();
            [a, b].map(|id| {
                let p = st.get(id);
                p.grad.clone().unwrap_or_else(|| Tensor::zeros(p.value.shape().to_vec()))
            })
        };
        let (g1, g2, g12) = (grads(0), grads(1), grads(2));
        for k in 0..2 {
            for i in 0..g12[k].numel() {
                let sum = g1[k].data()[i] + g2[k].data()[i];
                prop_assert!((g12[k].data()[i] - sum).abs() < 1e-10);
            }
        }
    }
}
