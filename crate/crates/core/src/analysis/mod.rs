//! Representation similarity, scaling benchmarks and sensitivity sweeps.

mod bench;
mod cka;
mod sweep;

pub use bench::{
    attention_map_bytes, bench_forward, fit_slope, geometric, predicted_footprint, BenchConfig,
    BenchRecord, BenchReport, BenchStatus, SlopeFit,
};
pub use cka::{
    cka_matrix, extract_representations, gram, hsic, linear_cka, CkaMatrix, RepLayer, RepStack,
};
pub use sweep::{apply_axis, sweep, SweepAxis, SweepReport, SweepRow};
