//! Datasets, ingestion, splitting, windowing, synthetic generation and
//! entity-set scenarios.

mod csv_import;
mod dataset;
mod io;
mod norm;
mod scenario;
mod synth;
mod windows;

pub use csv_import::{import_csv, CsvLayout, ImportReport};
pub use dataset::Dataset;
pub use io::{load_dataset, save_dataset, DATASET_FORMAT, META_FILE, VALUES_FILE};
pub use norm::{Aligned, NormStats, STD_FLOOR};
pub use scenario::{apply_scenario, ScenarioPlan, ScenarioSpec};
pub use synth::{gen_synthetic, gen_synthetic_with_census, Census, SynthConfig};
pub use windows::{chrono_split, make_windows, WindowBatch, Windows, DEFAULT_RATIOS};
