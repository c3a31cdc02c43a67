//! `eif`: generate data, train, evaluate, benchmark and analyse forecasters.
//!
//! Exit codes: 0 ok, 2 invalid flags, 3 numeric abort, 4 data or
//! checkpoint incompatibility, 5 every sweep run failed.

mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use eiformer::analysis::{
    bench_forward, cka_matrix, extract_representations, geometric, sweep, BenchConfig, SweepAxis,
};
use eiformer::compute::Tensor;
use eiformer::data::{
    apply_scenario, chrono_split, gen_synthetic_with_census, import_csv, load_dataset,
    make_windows, save_dataset, CsvLayout, Dataset, ScenarioSpec, SynthConfig, DEFAULT_RATIOS,
    META_FILE, VALUES_FILE,
};
use eiformer::model::{Arch, ModelConfig};
use eiformer::train::{
    evaluate_or_report, log_to_jsonl, train, Checkpoint, DataSource, EvalOptions, MetricsReport,
    Protocol, TrainConfig,
};
use eiformer::Error;
use manifest::RunManifest;

#[derive(Parser)]
#[command(
    name = "eif",
    version,
    about = "Entity-inductive spatial-temporal forecasting toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a clustered synthetic dataset.
    GenData(GenDataArgs),
    /// Convert a wide or long CSV file into a dataset directory.
    ImportCsv(ImportArgs),
    /// Split, apply a scenario, train and score on the test segment.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Time single-sample forwards over a range of entity counts.
    Bench(BenchArgs),
    /// Layer-by-layer linear CKA of one or two checkpoints.
    Cka(CkaArgs),
    /// Train one run per value of a hyper-parameter.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long, env = "EIF_ENTITIES", default_value_t = 100)]
    entities: usize,
    #[arg(long, env = "EIF_CLUSTERS", default_value_t = 5)]
    clusters: usize,
    #[arg(long, env = "EIF_STEPS", default_value_t = 2000)]
    steps: usize,
    #[arg(long, env = "EIF_SEASON", default_value_t = 24.0)]
    season: f64,
    #[arg(long, env = "EIF_NOISE", default_value_t = 0.3)]
    noise: f64,
    #[arg(long, env = "EIF_EMERGE_FRAC", default_value_t = 0.0)]
    emerge_frac: f64,
    #[arg(long, env = "EIF_VANISH_FRAC", default_value_t = 0.0)]
    vanish_frac: f64,
    #[arg(long, env = "EIF_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, env = "EIF_OUT")]
    out: PathBuf,
}

#[derive(Args)]
struct ImportArgs {
    #[arg(long, env = "EIF_INPUT")]
    input: PathBuf,
    #[arg(long, env = "EIF_LAYOUT", default_value = "wide")]
    layout: CsvLayout,
    #[arg(long, env = "EIF_OUT")]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, env = "EIF_DATA")]
    data: PathBuf,
    #[arg(long, env = "EIF_ARCH", default_value = "eiformer")]
    arch: Arch,
    #[arg(long, env = "EIF_SCENARIO", default_value_t = 0)]
    scenario: u8,
    /// Share of entities a scenario withholds or removes.
    #[arg(long, env = "EIF_FRACTION", default_value_t = 0.1)]
    fraction: f64,
    #[arg(long, env = "EIF_BLOCKS", default_value_t = 2)]
    blocks: usize,
    #[arg(long, env = "EIF_DIM", default_value_t = 32)]
    dim: usize,
    #[arg(long, env = "EIF_LATENTS", default_value_t = 8)]
    latents: usize,
    #[arg(long, env = "EIF_HIDDEN_MULT", default_value_t = 2)]
    hidden_mult: usize,
    #[arg(long, env = "EIF_HISTORY", default_value_t = 12)]
    history: usize,
    #[arg(long, env = "EIF_HORIZON", default_value_t = 12)]
    horizon: usize,
    #[arg(long, env = "EIF_LR", default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, env = "EIF_BATCH", default_value_t = 32)]
    batch: usize,
    #[arg(long, env = "EIF_EPOCHS", default_value_t = 50)]
    epochs: usize,
    #[arg(long, env = "EIF_PATIENCE", default_value_t = 10)]
    patience: usize,
    /// Gradient max-norm; 0 disables clipping.
    #[arg(long, env = "EIF_GRAD_CLIP", default_value_t = 5.0)]
    grad_clip: f64,
    #[arg(long, env = "EIF_STRIDE", default_value_t = 1)]
    stride: usize,
    #[arg(long, env = "EIF_MAX_STEPS")]
    max_steps: Option<usize>,
    #[arg(long, env = "EIF_PROTOCOL", default_value = "strict")]
    protocol: Protocol,
    #[arg(long, env = "EIF_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, env = "EIF_OUT")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, env = "EIF_CKPT")]
    ckpt: PathBuf,
    #[arg(long, env = "EIF_DATA")]
    data: PathBuf,
    #[arg(long, env = "EIF_HORIZONS", default_value = "3,6,12")]
    horizons: String,
    /// `test` re-derives the checkpoint's test segment; `all` scores the
    /// whole dataset.
    #[arg(long, env = "EIF_SEGMENT", default_value = "test")]
    segment: Segment,
    #[arg(long, env = "EIF_PROTOCOL", default_value = "strict")]
    protocol: Protocol,
    #[arg(long, env = "EIF_OUT")]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, serde::Serialize, clap::ValueEnum)]
enum Segment {
    Test,
    All,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(
        long,
        env = "EIF_ARCHS",
        default_value = "eiformer,ivariate",
        value_delimiter = ','
    )]
    archs: Vec<Arch>,
    #[arg(long, env = "EIF_MIN_N", default_value_t = 1024)]
    min_n: usize,
    #[arg(long, env = "EIF_MAX_N", default_value_t = 16384)]
    max_n: usize,
    #[arg(long, env = "EIF_FACTOR", default_value_t = 2)]
    factor: usize,
    #[arg(long, env = "EIF_REPEATS", default_value_t = 3)]
    repeats: usize,
    #[arg(long, env = "EIF_BUDGET_BYTES", default_value_t = 512 << 20)]
    budget_bytes: u64,
    #[arg(long, env = "EIF_DIM", default_value_t = 32)]
    dim: usize,
    #[arg(long, env = "EIF_LATENTS", default_value_t = 8)]
    latents: usize,
    #[arg(long, env = "EIF_BLOCKS", default_value_t = 2)]
    blocks: usize,
    #[arg(long, env = "EIF_HISTORY", default_value_t = 12)]
    history: usize,
    #[arg(long, env = "EIF_HORIZON", default_value_t = 12)]
    horizon: usize,
    #[arg(long, env = "EIF_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, env = "EIF_OUT")]
    out: PathBuf,
}

#[derive(Args)]
struct CkaArgs {
    #[arg(long, env = "EIF_CKPT_A")]
    ckpt_a: PathBuf,
    #[arg(long, env = "EIF_CKPT_B")]
    ckpt_b: Option<PathBuf>,
    #[arg(long, env = "EIF_DATA")]
    data: PathBuf,
    #[arg(long, env = "EIF_SAMPLES", default_value_t = 256)]
    samples: usize,
    #[arg(long, env = "EIF_OUT")]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, env = "EIF_AXIS")]
    axis: SweepAxis,
    /// Comma-separated values, e.g. `1e-3,1e-4,1e-5`.
    #[arg(long, env = "EIF_VALUES")]
    values: String,
    /// JSON training configuration; defaults when absent.
    #[arg(long, env = "EIF_BASE_CONFIG")]
    base_config: Option<PathBuf>,
    /// Dataset directory, overriding the base configuration's source.
    #[arg(long, env = "EIF_DATA")]
    data: Option<PathBuf>,
    #[arg(long, env = "EIF_EPOCHS")]
    epochs: Option<usize>,
    #[arg(long, env = "EIF_OUT")]
    out: PathBuf,
}

enum Failure {
    /// Flag validation; `flag` names the offending option.
    Usage(String),
    Core(Error),
    AllRunsFailed,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type CmdResult = Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

/// Re-labels a config error with the flag that feeds `field`.
fn flagged(e: Error, flags: &[(&str, &str)]) -> Failure {
    match e {
        Error::Config { field, reason } => {
            let flag = flags
                .iter()
                .find(|(f, _)| *f == field)
                .map(|(_, flag)| flag.to_string())
                .unwrap_or_else(|| field.replace('_', "-"));
            usage(format!("--{flag} {reason}"))
        }
        other => Failure::Core(other),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } => 2,
        Error::Numeric(_) | Error::NanLoss { .. } => 3,
        _ => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::ImportCsv(a) => import(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Bench(a) => bench_cmd(a),
        Command::Cka(a) => cka_cmd(a),
        Command::Sweep(a) => sweep_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::AllRunsFailed) => {
            eprintln!("error: every sweep run failed");
            ExitCode::from(5)
        }
    }
}

fn gen_data(a: GenDataArgs) -> CmdResult {
    let cfg = SynthConfig {
        n_entities: a.entities,
        n_clusters: a.clusters,
        steps: a.steps,
        season_period: a.season,
        noise_sigma: a.noise,
        emerge_frac: a.emerge_frac,
        vanish_frac: a.vanish_frac,
        seed: a.seed,
        ..SynthConfig::default()
    };
    let flags = [
        ("n_entities", "entities"),
        ("n_clusters", "clusters"),
        ("season_period", "season"),
        ("noise_sigma", "noise"),
    ];
    cfg.validate().map_err(|e| flagged(e, &flags))?;
    let manifest = RunManifest::new("gen-data", Some(a.seed), &cfg);
    let (d, census) = gen_synthetic_with_census(&cfg)?;
    save_dataset(&d, &a.out)?;
    fs::write(
        a.out.join("census.json"),
        serde_json::to_string_pretty(&census).map_err(Error::from)? + "\n",
    )
    .map_err(Error::from)?;
    manifest.write(&a.out, &[META_FILE, VALUES_FILE, "census.json"])?;
    println!(
        "T={} N={} C={} emerging={} vanishing={}",
        d.steps(),
        d.num_entities(),
        d.channels(),
        census.emerging.len(),
        census.vanishing.len()
    );
    Ok(())
}

fn import(a: ImportArgs) -> CmdResult {
    let manifest = RunManifest::new(
        "import-csv",
        None,
        serde_json::json!({ "layout": a.layout }),
    )
    .input(&a.input);
    let (d, report) = import_csv(&a.input, a.layout)?;
    save_dataset(&d, &a.out)?;
    manifest.write(&a.out, &[META_FILE, VALUES_FILE])?;
    println!(
        "{}",
        serde_json::to_string_pretty(&report).map_err(Error::from)?
    );
    Ok(())
}

fn train_config(a: &TrainArgs) -> TrainConfig {
    TrainConfig {
        lr: a.lr,
        batch_size: a.batch,
        max_epochs: a.epochs,
        patience: a.patience,
        seed: a.seed,
        grad_clip: (a.grad_clip > 0.0).then_some(a.grad_clip),
        train_stride: a.stride,
        max_steps: a.max_steps,
        scenario: ScenarioSpec::new(a.scenario, a.fraction, a.seed),
        model: ModelConfig {
            arch: a.arch,
            history_len: a.history,
            forecast_len: a.horizon,
            embed_dim: a.dim,
            latent_count: a.latents,
            num_blocks: a.blocks,
            hidden_mult: a.hidden_mult,
            seed: a.seed,
            ..ModelConfig::default()
        },
        data: DataSource::Dir {
            path: a.data.clone(),
        },
        ..TrainConfig::default()
    }
}

const TRAIN_FLAGS: [(&str, &str); 12] = [
    ("lr", "lr"),
    ("batch_size", "batch"),
    ("max_epochs", "epochs"),
    ("train_stride", "stride"),
    ("fraction", "fraction"),
    ("history_len", "history"),
    ("forecast_len", "horizon"),
    ("embed_dim", "dim"),
    ("latent_count", "latents"),
    ("num_blocks", "blocks"),
    ("hidden_mult", "hidden-mult"),
    ("grad_clip", "grad-clip"),
];

fn warn_failed(report: &MetricsReport) {
    if let Some(err) = &report.error {
        eprintln!("warning: evaluation produced no metrics: {err}");
    }
}

fn print_average(report: &MetricsReport) {
    match &report.average {
        Some(avg) => println!(
            "average MAE={} RMSE={} MAPE={}",
            avg.mae,
            avg.rmse,
            avg.mape
                .map_or("undefined".to_string(), |m| format!("{m}%"))
        ),
        None => println!("average unavailable"),
    }
}

fn train_cmd(a: TrainArgs) -> CmdResult {
    let cfg = train_config(&a);
    cfg.validate().map_err(|e| flagged(e, &TRAIN_FLAGS))?;
    let manifest = RunManifest::new(
        "train",
        Some(a.seed),
        serde_json::json!({
            "train": &cfg,
            "eval_protocol": a.protocol,
            "normalization": eiformer::train::NORMALIZATION_NOTE,
        }),
    )
    .input(&a.data);
    let outcome = train(&cfg)?;
    fs::create_dir_all(&a.out).map_err(Error::from)?;
    outcome.checkpoint.save(a.out.join("ckpt.eif"))?;
    fs::write(a.out.join("log.jsonl"), log_to_jsonl(&outcome.log)?).map_err(Error::from)?;
    let opts = EvalOptions {
        protocol: a.protocol,
        ..EvalOptions::default()
    };
    let report = evaluate_or_report(&outcome.checkpoint, &outcome.prepared.test, &opts)?;
    report.write(&a.out, "test_metrics")?;
    manifest.write(
        &a.out,
        &[
            "ckpt.eif",
            "log.jsonl",
            "test_metrics.json",
            "test_metrics.csv",
        ],
    )?;
    let meta = &outcome.checkpoint.meta;
    println!(
        "epochs={} best_epoch={} best_val_mae={} train_entities={} test_entities={}",
        meta.epochs_run,
        meta.best_epoch,
        meta.best_val_mae,
        meta.train_entities.len(),
        outcome.prepared.test.num_entities()
    );
    warn_failed(&report);
    print_average(&report);
    Ok(())
}

fn parse_horizons(text: &str) -> Result<Vec<usize>, Failure> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<usize>()
                .map_err(|_| usage(format!("--horizons `{s}` is not a positive integer")))
        })
        .collect()
}

/// The checkpoint's view of `data`: its test segment after its scenario.
fn test_segment(ckpt: &Checkpoint, data: &Dataset) -> eiformer::Result<Dataset> {
    let c = &ckpt.model.config;
    let (train, _, test) = chrono_split(data, DEFAULT_RATIOS, c.history_len + c.forecast_len)?;
    let (_, test, _) = apply_scenario(&train, &test, &ckpt.meta.scenario)?;
    Ok(test)
}

fn eval_cmd(a: EvalArgs) -> CmdResult {
    let horizons = parse_horizons(&a.horizons)?;
    let ckpt = Checkpoint::load(&a.ckpt)?;
    eiformer::train::check_horizons(&horizons, ckpt.model.config.forecast_len)
        .map_err(|e| flagged(e, &[]))?;
    let data = load_dataset(&a.data)?;
    let segment = match a.segment {
        Segment::Test => test_segment(&ckpt, &data)?,
        Segment::All => data,
    };
    let manifest = RunManifest::new(
        "eval",
        Some(ckpt.meta.seed),
        serde_json::json!({
            "horizons": &horizons,
            "segment": a.segment,
            "protocol": a.protocol,
        }),
    )
    .input(&a.ckpt)
    .input(&a.data);
    let opts = EvalOptions {
        horizons,
        protocol: a.protocol,
        ..EvalOptions::default()
    };
    let report = evaluate_or_report(&ckpt, &segment, &opts)?;
    report.write(&a.out, "metrics")?;
    manifest.write(&a.out, &["metrics.json", "metrics.csv"])?;
    warn_failed(&report);
    print_average(&report);
    Ok(())
}

fn bench_cmd(a: BenchArgs) -> CmdResult {
    let ns = geometric(a.min_n, a.max_n, a.factor)
        .map_err(|_| usage("--min-n/--max-n/--factor need 1 <= min <= max and factor >= 2"))?;
    if a.repeats < 3 {
        return Err(usage("--repeats must be at least 3"));
    }
    if a.archs.is_empty() {
        return Err(usage("--archs needs at least one architecture"));
    }
    let cfg = BenchConfig {
        archs: a.archs,
        ns,
        history_len: a.history,
        forecast_len: a.horizon,
        channels: 1,
        embed_dim: a.dim,
        latent_count: a.latents,
        num_blocks: a.blocks,
        repeats: a.repeats,
        budget_bytes: a.budget_bytes,
        seed: a.seed,
    };
    let manifest = RunManifest::new("bench", Some(a.seed), &cfg);
    let report = bench_forward(&cfg).map_err(|e| flagged(e, &[]))?;
    fs::create_dir_all(&a.out).map_err(Error::from)?;
    fs::write(a.out.join("bench.csv"), report.to_csv()?).map_err(Error::from)?;
    fs::write(a.out.join("bench.svg"), report.to_svg()).map_err(Error::from)?;
    manifest.write(&a.out, &["bench.csv", "bench.svg"])?;
    for s in &report.slopes {
        match s.slope {
            Some(v) => println!("{} slope={v:.3} over N={:?}", s.arch, s.points),
            None => println!("{} slope=undefined", s.arch),
        }
    }
    Ok(())
}

/// The first `samples` stride-1 test windows, normalized for `ckpt`.
fn cka_inputs(ckpt: &Checkpoint, raw: &Dataset, samples: usize) -> eiformer::Result<Tensor> {
    let c = &ckpt.model.config;
    let mut z = raw.values().to_vec();
    ckpt.norm.align(raw.entity_ids()).normalize(&mut z);
    let normalized = raw.with_values(z)?;
    let windows = make_windows(&normalized, c.history_len, c.forecast_len, 1, None)?;
    if windows.is_empty() {
        return Err(Error::Split("test segment yields no windows".into()));
    }
    Ok(windows.batch(0..samples.min(windows.len()))?.inputs)
}

fn cka_cmd(a: CkaArgs) -> CmdResult {
    if a.samples < 2 {
        return Err(usage("--samples must be at least 2"));
    }
    let ckpt_a = Checkpoint::load(&a.ckpt_a)?;
    let ckpt_b = a.ckpt_b.as_ref().map(Checkpoint::load).transpose()?;
    let data = load_dataset(&a.data)?;
    let raw = test_segment(&ckpt_a, &data)?;
    if let Some(b) = &ckpt_b {
        let (ca, cb) = (&ckpt_a.model.config, &b.model.config);
        if (ca.history_len, ca.forecast_len, ca.channels)
            != (cb.history_len, cb.forecast_len, cb.channels)
        {
            return Err(Error::Contract(format!(
                "checkpoints take different sample shapes: T={} C={} vs T={} C={}",
                ca.history_len, ca.channels, cb.history_len, cb.channels
            ))
            .into());
        }
    }
    let xa = cka_inputs(&ckpt_a, &raw, a.samples)?;
    let stack_a = extract_representations(&ckpt_a.model, &xa)?;
    let stack_b = match &ckpt_b {
        Some(b) => extract_representations(&b.model, &cka_inputs(b, &raw, a.samples)?)?,
        None => stack_a.clone(),
    };
    let matrix = cka_matrix(&stack_a, &stack_b)?;
    let mut manifest = RunManifest::new(
        "cka",
        Some(ckpt_a.meta.seed),
        serde_json::json!({
            "samples_requested": a.samples,
            "samples_used": matrix.samples,
            "split": "test",
            "flattening": stack_a.flattening,
        }),
    )
    .input(&a.ckpt_a)
    .input(&a.data);
    if let Some(b) = &a.ckpt_b {
        manifest = manifest.input(b);
    }
    fs::create_dir_all(&a.out).map_err(Error::from)?;
    fs::write(a.out.join("cka.csv"), matrix.to_csv()?).map_err(Error::from)?;
    matrix.write_png(a.out.join("cka.png"), 32)?;
    manifest.write(&a.out, &["cka.csv", "cka.png"])?;
    println!(
        "{}x{} CKA matrix over {} samples",
        matrix.rows.len(),
        matrix.cols.len(),
        matrix.samples
    );
    Ok(())
}

fn read_base_config(path: &Path) -> Result<TrainConfig, Failure> {
    let text = fs::read_to_string(path).map_err(Error::from)?;
    serde_json::from_str(&text).map_err(|e| usage(format!("--base-config {}: {e}", path.display())))
}

fn sweep_cmd(a: SweepArgs) -> CmdResult {
    let values = a
        .axis
        .parse_values(&a.values)
        .map_err(|e| flagged(e, &[]))?;
    let mut base = match &a.base_config {
        Some(p) => read_base_config(p)?,
        None => TrainConfig::default(),
    };
    if let Some(d) = &a.data {
        base.data = DataSource::Dir { path: d.clone() };
    }
    if let Some(e) = a.epochs {
        base.max_epochs = e;
    }
    base.validate().map_err(|e| flagged(e, &[]))?;
    let mut manifest = RunManifest::new(
        "sweep",
        Some(base.seed),
        serde_json::json!({ "axis": a.axis, "values": &values, "base": &base }),
    );
    if let Some(p) = &a.base_config {
        manifest = manifest.input(p);
    }
    let report = sweep(&base, a.axis, &values)?;
    fs::create_dir_all(&a.out).map_err(Error::from)?;
    fs::write(a.out.join("sweep.csv"), report.to_csv()?).map_err(Error::from)?;
    manifest.write(&a.out, &["sweep.csv"])?;
    for r in &report.rows {
        match &r.error {
            None => println!(
                "{}={} val_mae={} test_mae={}",
                a.axis.as_str(),
                r.value,
                r.val_mae.unwrap_or(f64::NAN),
                r.test_mae.unwrap_or(f64::NAN)
            ),
            Some(e) => eprintln!("warning: {}={} failed: {e}", a.axis.as_str(), r.value),
        }
    }
    if report.all_failed() {
        return Err(Failure::AllRunsFailed);
    }
    Ok(())
}
