//! Linear centered kernel alignment between layer representations.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::compute::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::model::ForecastModel;
use crate::par;

/// One captured layer, flattened to `[samples, features]` row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepLayer {
    pub name: String,
    pub samples: usize,
    pub features: usize,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepStack {
    pub layers: Vec<RepLayer>,
    /// How each `[N, width]` activation was laid out per sample.
    pub flattening: String,
}

impl RepStack {
    pub fn samples(&self) -> usize {
        self.layers.first().map_or(0, |l| l.samples)
    }

    pub fn names(&self) -> Vec<String> {
        self.layers.iter().map(|l| l.name.clone()).collect()
    }
}

/// Embedding output and every post-residual block output for a batch of
/// `[M, T, N, C]` inputs, each flattened to `[M, N·width]`.
pub fn extract_representations(model: &ForecastModel, x: &Tensor) -> Result<RepStack> {
    let mut tape = Tape::new();
    let xv = tape.input(x.clone());
    let (_, caps) = model.forward_captured(&mut tape, &model.params, xv)?;
    let layers = caps
        .into_iter()
        .map(|(name, v)| {
            let t = tape.value(v);
            let samples = t.shape()[0];
            RepLayer {
                name,
                samples,
                features: t.numel() / samples,
                data: t.data().to_vec(),
            }
        })
        .collect();
    Ok(RepStack {
        layers,
        flattening: "row-major [sample][entity][feature]".into(),
    })
}

fn check_gram(c: &[f64], m: usize) -> Result<()> {
    if m < 2 {
        return Err(Error::Degenerate(format!(
            "HSIC needs at least 2 samples, got {m}"
        )));
    }
    if c.len() != m * m {
        return Err(Error::Shape(format!(
            "Gram matrix has {} entries, expected {m}×{m}",
            c.len()
        )));
    }
    for i in 0..m {
        for j in i + 1..m {
            let (a, b) = (c[i * m + j], c[j * m + i]);
            if (a - b).abs() > 1e-9 * (1.0f64).max(a.abs()).max(b.abs()) {
                return Err(Error::Contract(format!(
                    "Gram matrix is not symmetric at ({i}, {j}): {a} vs {b}"
                )));
            }
        }
    }
    Ok(())
}

/// `H C H` with `H = I − 11ᵀ/m`.
fn center(c: &[f64], m: usize) -> Vec<f64> {
    let row: Vec<f64> = (0..m)
        .map(|i| c[i * m..(i + 1) * m].iter().sum::<f64>() / m as f64)
        .collect();
    let col: Vec<f64> = (0..m)
        .map(|j| (0..m).map(|i| c[i * m + j]).sum::<f64>() / m as f64)
        .collect();
    let all = row.iter().sum::<f64>() / m as f64;
    let mut out = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            out[i * m + j] = c[i * m + j] - row[i] - col[j] + all;
        }
    }
    out
}

/// `trace(A B) / (m−1)²` for already-centered `A`, `B`.
fn centered_trace(a: &[f64], b: &[f64], m: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..m {
        for j in 0..m {
            s += a[i * m + j] * b[j * m + i];
        }
    }
    s / ((m - 1) * (m - 1)) as f64
}

/// Biased HSIC `trace(H Cp H H Cq H) / (m−1)²` of two `m×m` Gram matrices.
pub fn hsic(cp: &[f64], cq: &[f64], m: usize) -> Result<f64> {
    check_gram(cp, m)?;
    check_gram(cq, m)?;
    Ok(centered_trace(&center(cp, m), &center(cq, m), m))
}

/// `D Dᵀ` of a row-major `[m, f]` matrix.
pub fn gram(d: &[f64], m: usize, f: usize) -> Vec<f64> {
    let mut g = vec![0.0; m * m];
    for i in 0..m {
        for j in i..m {
            let v: f64 = d[i * f..(i + 1) * f]
                .iter()
                .zip(&d[j * f..(j + 1) * f])
                .map(|(a, b)| a * b)
                .sum();
            g[i * m + j] = v;
            g[j * m + i] = v;
        }
    }
    g
}

struct Prepared {
    centered: Vec<f64>,
    self_hsic: f64,
}

fn prepare(d: &[f64], m: usize, f: usize) -> Result<Prepared> {
    if m < 2 {
        return Err(Error::Degenerate(format!(
            "CKA needs at least 2 samples, got {m}"
        )));
    }
    if d.len() != m * f {
        return Err(Error::Shape(format!(
            "representation has {} values, expected {m}×{f}",
            d.len()
        )));
    }
    let centered = center(&gram(d, m, f), m);
    let self_hsic = centered_trace(&centered, &centered, m);
    Ok(Prepared {
        centered,
        self_hsic,
    })
}

#[allow(clippy::neg_cmp_op_on_partial_ord)] // also rejects NaN
fn cka_of(p: &Prepared, q: &Prepared, m: usize) -> Result<f64> {
    let denom = (p.self_hsic * q.self_hsic).sqrt();
    if !(denom > f64::MIN_POSITIVE) {
        return Err(Error::Degenerate(
            "representation has zero self-HSIC (constant across samples)".into(),
        ));
    }
    Ok((centered_trace(&p.centered, &q.centered, m) / denom).clamp(0.0, 1.0))
}

/// Linear CKA of `[m, fp]` and `[m, fq]` representations, clamped to `[0, 1]`.
pub fn linear_cka(dp: &[f64], fp: usize, dq: &[f64], fq: usize, m: usize) -> Result<f64> {
    let p = prepare(dp, m, fp)?;
    let q = prepare(dq, m, fq)?;
    cka_of(&p, &q, m)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CkaMatrix {
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    /// Row-major `[rows][cols]`.
    pub values: Vec<f64>,
    pub samples: usize,
}

/// All pairwise CKA scores between the layers of `a` (rows) and `b` (cols).
pub fn cka_matrix(a: &RepStack, b: &RepStack) -> Result<CkaMatrix> {
    let m = a.samples();
    if m != b.samples() {
        return Err(Error::Contract(format!(
            "stacks have {m} and {} samples",
            b.samples()
        )));
    }
    let prep = |s: &RepStack| -> Result<Vec<Prepared>> {
        par::map(&s.layers, |l| prepare(&l.data, l.samples, l.features))
            .into_iter()
            .collect()
    };
    let pa = prep(a)?;
    let pb = prep(b)?;
    let pairs: Vec<(usize, usize)> = (0..pa.len())
        .flat_map(|i| (0..pb.len()).map(move |j| (i, j)))
        .collect();
    let values = par::map(&pairs, |&(i, j)| cka_of(&pa[i], &pb[j], m))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(CkaMatrix {
        rows: a.names(),
        cols: b.names(),
        values,
        samples: m,
    })
}

impl CkaMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols.len() + j]
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["layer".to_string()];
        header.extend(self.cols.iter().cloned());
        w.write_record(&header)?;
        for (i, r) in self.rows.iter().enumerate() {
            let mut rec = vec![r.clone()];
            rec.extend((0..self.cols.len()).map(|j| self.get(i, j).to_string()));
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Grayscale heatmap, `cell` pixels per entry; white is 1, black is 0.
    pub fn write_png(&self, path: impl AsRef<Path>, cell: u32) -> Result<()> {
        let (r, c) = (self.rows.len() as u32, self.cols.len() as u32);
        let img = image::GrayImage::from_fn(c * cell, r * cell, |x, y| {
            let v = self.get((y / cell) as usize, (x / cell) as usize);
            image::Luma([(v.clamp(0.0, 1.0) * 255.0).round() as u8])
        });
        img.save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }
}
