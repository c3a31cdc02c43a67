//! Chronological splitting and sliding-window sampling.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Dataset;
use crate::compute::Tensor;
use crate::error::{Error, Result};

/// Default train/val/test proportions.
pub const DEFAULT_RATIOS: [f64; 3] = [0.6, 0.2, 0.2];

/// Splits `d` into contiguous `(train, val, test)` segments.
///
/// Boundaries sit at `floor(T · cumulative_ratio)`. Every segment must hold
/// at least `min_len` steps (history plus horizon for windowing callers).
pub fn chrono_split(
    d: &Dataset,
    ratios: [f64; 3],
    min_len: usize,
) -> Result<(Dataset, Dataset, Dataset)> {
    if ratios.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
        return Err(Error::Split(format!(
            "ratios must be positive, got {ratios:?}"
        )));
    }
    let total: f64 = ratios.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Split(format!("ratios sum to {total}, expected 1")));
    }
    let t = d.steps();
    let b1 = (t as f64 * ratios[0] + 1e-9).floor() as usize;
    let b2 = ((t as f64 * (ratios[0] + ratios[1]) + 1e-9).floor() as usize).min(t);
    let lens = [b1, b2 - b1, t - b2];
    for (name, len) in ["train", "val", "test"].iter().zip(lens) {
        if len == 0 || len < min_len {
            return Err(Error::Split(format!(
                "{name} segment has {len} steps, needs at least {} (T={t})",
                min_len.max(1)
            )));
        }
    }
    Ok((
        d.slice_time(0, b1)?,
        d.slice_time(b1, b2)?,
        d.slice_time(b2, t)?,
    ))
}

/// A batch of aligned history/target windows.
#[derive(Clone, Debug)]
pub struct WindowBatch {
    /// `[B, T_hist, N, C]`
    pub inputs: Tensor,
    /// `[B, F, N, C]`
    pub targets: Tensor,
    pub starts: Vec<usize>,
}

/// The window start positions over one segment.
#[derive(Clone, Debug)]
pub struct Windows<'a> {
    data: &'a Dataset,
    history: usize,
    horizon: usize,
    starts: Vec<usize>,
}

/// Window starts `0, stride, 2·stride, …` over `segment`.
///
/// A segment shorter than `history + horizon` yields an empty set; check
/// [`Windows::is_empty`]. With `shuffle_seed` the order is a seeded
/// permutation of the same starts.
pub fn make_windows(
    segment: &Dataset,
    history: usize,
    horizon: usize,
    stride: usize,
    shuffle_seed: Option<u64>,
) -> Result<Windows<'_>> {
    if history == 0 || horizon == 0 || stride == 0 {
        return Err(Error::config(
            "windows",
            "history, horizon and stride must be positive",
        ));
    }
    let len = segment.steps();
    let mut starts: Vec<usize> = if len < history + horizon {
        Vec::new()
    } else {
        (0..=(len - history - horizon) / stride)
            .map(|i| i * stride)
            .collect()
    };
    if let Some(seed) = shuffle_seed {
        starts.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    Ok(Windows {
        data: segment,
        history,
        horizon,
        starts,
    })
}

impl<'a> Windows<'a> {
    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    pub fn starts(&self) -> &[usize] {
        &self.starts
    }

    pub fn dataset(&self) -> &'a Dataset {
        self.data
    }

    /// Materializes windows `range` (indices into [`Windows::starts`]).
    pub fn batch(&self, range: std::ops::Range<usize>) -> Result<WindowBatch> {
        self.batch_of(&self.starts[range])
    }

    /// Materializes windows at explicit start positions.
    pub fn batch_of(&self, starts: &[usize]) -> Result<WindowBatch> {
        if starts.is_empty() {
            return Err(Error::Contract("empty window batch".into()));
        }
        let (n, c) = (self.data.num_entities(), self.data.channels());
        let row = n * c;
        let vals = self.data.values();
        let mut x = Vec::with_capacity(starts.len() * self.history * row);
        let mut y = Vec::with_capacity(starts.len() * self.horizon * row);
        for &s in starts {
            let mid = s + self.history;
            x.extend_from_slice(&vals[s * row..mid * row]);
            y.extend_from_slice(&vals[mid * row..(mid + self.horizon) * row]);
        }
        let b = starts.len();
        Ok(WindowBatch {
            inputs: Tensor::new(vec![b, self.history, n, c], x)?,
            targets: Tensor::new(vec![b, self.horizon, n, c], y)?,
            starts: starts.to_vec(),
        })
    }

    /// Consecutive batches of at most `size` windows in stored order.
    pub fn chunks(&self, size: usize) -> impl Iterator<Item = std::ops::Range<usize>> + '_ {
        let size = size.max(1);
        (0..self.len())
            .step_by(size)
            .map(move |lo| lo..(lo + size).min(self.len()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(t: usize, n: usize) -> Dataset {
        let values = (0..t * n)
            .map(|i| (i / n) as f64 + (i % n) as f64 * 1000.0)
            .collect();
        let ids = (0..n).map(|i| format!("e{i}")).collect();
        Dataset::new(values, t, ids, vec!["v".into()], 0, 60).unwrap()
    }

    #[test]
    fn split_lengths() {
        let (a, b, c) = chrono_split(&ramp(100, 2), DEFAULT_RATIOS, 0).unwrap();
        assert_eq!((a.steps(), b.steps(), c.steps()), (60, 20, 20));
        let (a, b, c) = chrono_split(&ramp(10, 1), DEFAULT_RATIOS, 0).unwrap();
        assert_eq!((a.steps(), b.steps(), c.steps()), (6, 2, 2));
        assert_eq!(b.value(0, 0, 0), 6.0);
        assert_eq!(c.start_time(), 8 * 60);
    }

    #[test]
    fn split_too_short() {
        assert!(matches!(
            chrono_split(&ramp(5, 1), DEFAULT_RATIOS, 8),
            Err(Error::Split(_))
        ));
        assert!(chrono_split(&ramp(10, 1), [0.5, 0.5, 0.1], 0).is_err());
    }

    #[test]
    fn window_counts() {
        let d = ramp(24, 1);
        assert_eq!(make_windows(&d, 12, 12, 1, None).unwrap().len(), 1);
        let d = ramp(25, 1);
        let w = make_windows(&d, 12, 12, 1, None).unwrap();
        assert_eq!(w.starts(), &[0, 1]);
        let d = ramp(23, 1);
        assert!(make_windows(&d, 12, 12, 1, None).unwrap().is_empty());
        let d = ramp(40, 1);
        assert_eq!(
            make_windows(&d, 12, 12, 5, None).unwrap().starts(),
            &[0, 5, 10, 15]
        );
    }

    #[test]
    fn target_follows_history() {
        let d = ramp(40, 3);
        let w = make_windows(&d, 5, 4, 1, None).unwrap();
        let b = w.batch_of(&[7]).unwrap();
        assert_eq!(b.inputs.shape(), &[1, 5, 3, 1]);
        for n in 0..3 {
            assert_eq!(b.targets.at(&[0, 0, n, 0]), d.value(7 + 5, n, 0));
            assert_eq!(b.inputs.at(&[0, 4, n, 0]), d.value(7 + 4, n, 0));
        }
    }

    #[test]
    fn shuffle_is_seeded_permutation() {
        let d = ramp(60, 1);
        let a = make_windows(&d, 4, 4, 1, Some(3)).unwrap();
        let b = make_windows(&d, 4, 4, 1, Some(3)).unwrap();
        assert_eq!(a.starts(), b.starts());
        let mut s = a.starts().to_vec();
        s.sort();
        assert_eq!(s, (0..53).collect::<Vec<_>>());
    }
}
