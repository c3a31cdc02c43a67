//! Forward-pass runtime and memory scaling in the entity count.

use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::compute::{probe, Tensor};
use crate::error::{Error, Result};
use crate::model::{Arch, ForecastModel, ModelConfig};
use crate::par;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub archs: Vec<Arch>,
    /// Strictly increasing entity counts.
    pub ns: Vec<usize>,
    pub history_len: usize,
    pub forecast_len: usize,
    pub channels: usize,
    pub embed_dim: usize,
    pub latent_count: usize,
    pub num_blocks: usize,
    pub repeats: usize,
    /// Predicted attention-map bytes above which a point is skipped.
    pub budget_bytes: u64,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            archs: vec![Arch::EiFormer, Arch::IVariate],
            ns: geometric(1 << 10, 1 << 14, 2).expect("valid range"),
            history_len: 12,
            forecast_len: 12,
            channels: 1,
            embed_dim: 32,
            latent_count: 8,
            num_blocks: 2,
            repeats: 3,
            budget_bytes: 512 << 20,
            seed: 0,
        }
    }
}

/// `min, min·factor, …` up to and including `max`.
pub fn geometric(min: usize, max: usize, factor: usize) -> Result<Vec<usize>> {
    if min == 0 || max < min || factor < 2 {
        return Err(Error::config(
            "n range",
            "needs 1 <= min <= max and factor >= 2",
        ));
    }
    let mut out = vec![min];
    while let Some(next) = out
        .last()
        .unwrap()
        .checked_mul(factor)
        .filter(|&n| n <= max)
    {
        out.push(next);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchStatus {
    Ok,
    OomGuard,
}

impl BenchStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            BenchStatus::Ok => "ok",
            BenchStatus::OomGuard => "oom-guard",
        }
    }
}

impl FromStr for BenchStatus {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ok" => Ok(BenchStatus::Ok),
            "oom-guard" => Ok(BenchStatus::OomGuard),
            o => Err(Error::config(
                "status",
                format!("unknown bench status `{o}`"),
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub arch: Arch,
    pub n: usize,
    /// Median wall time of one forward; `None` when guarded.
    pub median_seconds: Option<f64>,
    /// Peak live tensor bytes during one forward.
    pub peak_bytes: u64,
    /// Bytes of the largest attention map (measured when run, predicted
    /// when guarded).
    pub attn_map_bytes: u64,
    pub status: BenchStatus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub arch: Arch,
    /// `None` when fewer than two ok points are available.
    pub slope: Option<f64>,
    pub points: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub records: Vec<BenchRecord>,
    pub slopes: Vec<SlopeFit>,
}

/// Bytes of one attention map for a single sample.
pub fn attention_map_bytes(arch: Arch, n: usize, latent_count: usize) -> u64 {
    let n = n as u64;
    match arch {
        Arch::EiFormer => n * latent_count as u64 * 8,
        Arch::IVariate => n * n * 8,
        // The entity-mixing weight plays the role of the map.
        Arch::FeatMlp => n * n * 8,
        Arch::Linear => 0,
    }
}

/// Attention-map bytes one forward keeps alive across all blocks.
pub fn predicted_footprint(arch: Arch, n: usize, cfg: &BenchConfig) -> u64 {
    let per_block = match arch {
        Arch::EiFormer => 2,
        Arch::IVariate | Arch::FeatMlp => 1,
        Arch::Linear => 0,
    };
    attention_map_bytes(arch, n, cfg.latent_count) * per_block * cfg.num_blocks as u64
}

fn validate(cfg: &BenchConfig) -> Result<()> {
    if cfg.archs.is_empty() {
        return Err(Error::config(
            "archs",
            "at least one architecture is required",
        ));
    }
    if cfg.ns.is_empty() || cfg.ns.windows(2).any(|w| w[0] >= w[1]) || cfg.ns[0] == 0 {
        return Err(Error::config(
            "ns",
            "entity counts must be positive and strictly increasing",
        ));
    }
    if cfg.repeats < 3 {
        return Err(Error::config("repeats", "must be at least 3"));
    }
    Ok(())
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let k = xs.len();
    if k % 2 == 1 {
        xs[k / 2]
    } else {
        0.5 * (xs[k / 2 - 1] + xs[k / 2])
    }
}

struct Point {
    arch: Arch,
    n: usize,
    model: ForecastModel,
    x: Tensor,
    times: Vec<f64>,
    peak: usize,
    attn: usize,
}

fn prepare(
    arch: Arch,
    n: usize,
    cfg: &BenchConfig,
) -> Result<std::result::Result<Point, BenchRecord>> {
    let footprint = predicted_footprint(arch, n, cfg);
    if footprint > cfg.budget_bytes {
        return Ok(Err(BenchRecord {
            arch,
            n,
            median_seconds: None,
            peak_bytes: 0,
            attn_map_bytes: attention_map_bytes(arch, n, cfg.latent_count),
            status: BenchStatus::OomGuard,
        }));
    }
    let model = ForecastModel::new(ModelConfig {
        arch,
        history_len: cfg.history_len,
        forecast_len: cfg.forecast_len,
        channels: cfg.channels,
        embed_dim: cfg.embed_dim,
        latent_count: cfg.latent_count,
        num_blocks: cfg.num_blocks,
        seed: cfg.seed,
        featmlp_entities: (arch == Arch::FeatMlp).then_some(n),
        ..ModelConfig::default()
    })?;
    let x = Tensor::from_fn([1, cfg.history_len, n, cfg.channels], |i| {
        ((i as f64) * 0.618_033_988_75).fract() - 0.5
    });
    Ok(Ok(Point {
        arch,
        n,
        model,
        x,
        times: Vec::with_capacity(cfg.repeats),
        peak: 0,
        attn: 0,
    }))
}

fn time_once(p: &mut Point) -> Result<()> {
    probe::reset();
    let base = probe::live_bytes();
    let t0 = Instant::now();
    let y = p.model.predict(&p.x)?;
    p.times.push(t0.elapsed().as_secs_f64());
    drop(y);
    p.peak = p.peak.max(probe::peak_bytes() - base);
    p.attn = p.attn.max(probe::max_attention_elements() * 8);
    Ok(())
}

/// Least-squares slope of `ln t` against `ln N` over the ok records with
/// `N >= max_ok / 10`.
pub fn fit_slope(records: &[BenchRecord], arch: Arch) -> SlopeFit {
    let ok: Vec<(usize, f64)> = records
        .iter()
        .filter(|r| r.arch == arch && r.status == BenchStatus::Ok)
        .filter_map(|r| r.median_seconds.filter(|t| *t > 0.0).map(|t| (r.n, t)))
        .collect();
    let Some(max_n) = ok.iter().map(|p| p.0).max() else {
        return SlopeFit {
            arch,
            slope: None,
            points: vec![],
        };
    };
    let pts: Vec<(usize, f64)> = ok.into_iter().filter(|p| p.0 * 10 >= max_n).collect();
    let points = pts.iter().map(|p| p.0).collect();
    if pts.len() < 2 {
        return SlopeFit {
            arch,
            slope: None,
            points,
        };
    }
    let k = pts.len() as f64;
    let xs: Vec<f64> = pts.iter().map(|p| (p.0 as f64).ln()).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / k, ys.iter().sum::<f64>() / k);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    SlopeFit {
        arch,
        slope: Some(sxy / sxx),
        points,
    }
}

pub fn bench_forward(cfg: &BenchConfig) -> Result<BenchReport> {
    validate(cfg)?;
    let mut slots = Vec::new();
    for &arch in &cfg.archs {
        for &n in &cfg.ns {
            slots.push(prepare(arch, n, cfg)?);
        }
    }
    // Repeats run round-robin over all points, so drift in machine speed
    // spreads evenly across N instead of tilting the slope.
    par::with_threads(1, || -> Result<()> {
        for p in slots.iter_mut().filter_map(|s| s.as_mut().ok()) {
            p.model.predict(&p.x)?;
        }
        for _ in 0..cfg.repeats {
            for p in slots.iter_mut().filter_map(|s| s.as_mut().ok()) {
                time_once(p)?;
            }
        }
        Ok(())
    })?;
    let records = slots
        .into_iter()
        .map(|s| match s {
            Ok(p) => BenchRecord {
                arch: p.arch,
                n: p.n,
                median_seconds: Some(median(p.times)),
                peak_bytes: p.peak as u64,
                attn_map_bytes: p.attn as u64,
                status: BenchStatus::Ok,
            },
            Err(r) => r,
        })
        .collect();
    Ok(BenchReport::from_records(records))
}

impl BenchReport {
    pub fn from_records(records: Vec<BenchRecord>) -> BenchReport {
        let mut archs: Vec<Arch> = Vec::new();
        for r in &records {
            if !archs.contains(&r.arch) {
                archs.push(r.arch);
            }
        }
        let slopes = archs.iter().map(|&a| fit_slope(&records, a)).collect();
        BenchReport { records, slopes }
    }

    pub fn slope(&self, arch: Arch) -> Option<f64> {
        self.slopes
            .iter()
            .find(|s| s.arch == arch)
            .and_then(|s| s.slope)
    }

    pub fn records_for(&self, arch: Arch) -> impl Iterator<Item = &BenchRecord> {
        self.records.iter().filter(move |r| r.arch == arch)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "arch",
            "n",
            "median_seconds",
            "peak_bytes",
            "attn_map_bytes",
            "status",
        ])?;
        for r in &self.records {
            w.write_record([
                r.arch.to_string(),
                r.n.to_string(),
                r.median_seconds.map(|t| t.to_string()).unwrap_or_default(),
                r.peak_bytes.to_string(),
                r.attn_map_bytes.to_string(),
                r.status.as_str().to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn from_csv(text: &str) -> Result<BenchReport> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let mut records = Vec::new();
        let bad = |what: &str, v: &str| Error::Ingestion(format!("bad {what} `{v}` in bench CSV"));
        for row in rdr.records() {
            let row = row?;
            if row.len() != 6 {
                return Err(Error::Ingestion(format!(
                    "bench CSV row has {} fields",
                    row.len()
                )));
            }
            records.push(BenchRecord {
                arch: row[0].parse()?,
                n: row[1].parse().map_err(|_| bad("n", &row[1]))?,
                median_seconds: if row[2].is_empty() {
                    None
                } else {
                    Some(row[2].parse().map_err(|_| bad("median_seconds", &row[2]))?)
                },
                peak_bytes: row[3].parse().map_err(|_| bad("peak_bytes", &row[3]))?,
                attn_map_bytes: row[4].parse().map_err(|_| bad("attn_map_bytes", &row[4]))?,
                status: row[5].parse()?,
            });
        }
        Ok(BenchReport::from_records(records))
    }

    /// Log-log runtime plot; guarded points are marked on the x axis.
    pub fn to_svg(&self) -> String {
        let (w, h, pad) = (640.0, 420.0, 60.0);
        let ok: Vec<&BenchRecord> = self
            .records
            .iter()
            .filter(|r| r.median_seconds.is_some())
            .collect();
        let ln = |v: f64| v.max(1e-300).ln();
        let nx: Vec<f64> = self.records.iter().map(|r| ln(r.n as f64)).collect();
        let ty: Vec<f64> = ok.iter().map(|r| ln(r.median_seconds.unwrap())).collect();
        let span = |v: &[f64]| -> (f64, f64) {
            let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if !lo.is_finite() {
                (0.0, 1.0)
            } else if hi - lo < 1e-12 {
                (lo - 0.5, hi + 0.5)
            } else {
                (lo, hi)
            }
        };
        let (x0, x1) = span(&nx);
        let (y0, y1) = span(&ty);
        let px = |v: f64| pad + (v - x0) / (x1 - x0) * (w - 2.0 * pad);
        let py = |v: f64| h - pad - (v - y0) / (y1 - y0) * (h - 2.0 * pad);
        let colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<line x1="{pad}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/><line x1="{pad}" y1="{pad}" x2="{pad}" y2="{0}" stroke="black"/>"#,
            h - pad,
            w - pad
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">entities N (log)</text>"#,
            w / 2.0,
            h - 15.0
        );
        let _ = writeln!(
            s,
            r#"<text x="15" y="{}" transform="rotate(-90 15 {})" text-anchor="middle">median forward seconds (log)</text>"#,
            h / 2.0,
            h / 2.0
        );
        for (k, fit) in self.slopes.iter().enumerate() {
            let color = colors[k % colors.len()];
            let pts: Vec<String> = self
                .records_for(fit.arch)
                .filter_map(|r| {
                    r.median_seconds
                        .map(|t| format!("{:.2},{:.2}", px(ln(r.n as f64)), py(ln(t))))
                })
                .collect();
            if !pts.is_empty() {
                let _ = writeln!(
                    s,
                    r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
                    pts.join(" ")
                );
            }
            for r in self
                .records_for(fit.arch)
                .filter(|r| r.status == BenchStatus::OomGuard)
            {
                let _ = writeln!(
                    s,
                    r#"<text x="{:.2}" y="{:.2}" fill="{color}" text-anchor="middle">x</text>"#,
                    px(ln(r.n as f64)),
                    h - pad + 14.0
                );
            }
            let label = match fit.slope {
                Some(v) => format!("{} slope {v:.2}", fit.arch),
                None => format!("{} slope n/a", fit.arch),
            };
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" fill="{color}">{label}</text>"#,
                pad + 10.0,
                pad + 16.0 * k as f64
            );
        }
        s.push_str("</svg>\n");
        s
    }
}
