//! Central finite-difference oracle for tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::param::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// max |analytic − numeric| / max(1, |numeric|) over checked coordinates.
    pub max_rel_error: f64,
    /// (parameter name, flat index) of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coords_checked: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub h: f64,
    /// Per-parameter coordinate cap; `None` checks every coordinate.
    pub max_coords_per_param: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            h: 1e-5,
            max_coords_per_param: None,
            seed: 0,
        }
    }
}

fn eval<F>(f: &F, store: &ParamStore) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    tape.value(loss)
        .item()
        .ok_or_else(|| Error::Contract("grad_check: loss is not a scalar".into()))
}

/// Compares tape gradients of the scalar built by `f` against central
/// differences for the trainable parameters in `ids`.
///
/// `f` must be deterministic; two evaluations that disagree bitwise are an
/// [`Error::Oracle`].
pub fn grad_check<F>(
    f: F,
    store: &ParamStore,
    ids: &[ParamId],
    opts: GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    if !(opts.h.is_finite() && opts.h > 0.0) {
        return Err(Error::Contract("grad_check: h must be positive".into()));
    }
    let first = eval(&f, store)?;
    let second = eval(&f, store)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::Oracle(format!(
            "function is not deterministic ({first} vs {second})"
        )));
    }

    let mut analytic = store.clone();
    analytic.clear_grads();
    let mut tape = Tape::new();
    let loss = f(&mut tape, &analytic)?;
    tape.backward(loss, &mut analytic)?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut probe = store.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coords_checked: 0,
    };
    for &id in ids {
        let p = analytic.get(id);
        if !p.trainable {
            continue;
        }
        let n = p.value.numel();
        let coords: Vec<usize> = match opts.max_coords_per_param {
            Some(cap) if cap < n => sample(&mut rng, n, cap).into_vec(),
            _ => (0..n).collect(),
        };
        let grad = p
            .grad
            .as_ref()
            .map(|g| g.data().to_vec())
            .unwrap_or(vec![0.0; n]);
        for c in coords {
            let orig = store.get(id).value.data()[c];
            probe.get_mut(id).value.data_mut()[c] = orig + opts.h;
            let up = eval(&f, &probe)?;
            probe.get_mut(id).value.data_mut()[c] = orig - opts.h;
            let down = eval(&f, &probe)?;
            probe.get_mut(id).value.data_mut()[c] = orig;
            let numeric = (up - down) / (2.0 * opts.h);
            let err = (grad[c] - numeric).abs() / numeric.abs().max(1.0);
            report.coords_checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                if err >= report.max_rel_error {
                    report.worst = Some((p.name.clone(), c));
                }
            }
        }
    }
    Ok(report)
}
