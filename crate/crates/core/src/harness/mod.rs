//! Data ingestion, splitting, metrics, experiment orchestration and exports.

mod checkpoint;
mod collapse;
mod dataset;
mod experiment;
mod io;
mod metrics;
mod synthetic;

pub use dataset::{split_meta, Dataset, Example};
pub(crate) use dataset::check_field;
pub use io::write_atomic;
pub use collapse::{collapse_trace, CollapsePoint, CollapseSettings};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, MAGIC, VERSION};
pub use experiment::{
    prepare_data, results_csv, run_experiment, run_prepared, run_seed, run_sweep, summary_csv, sweep_points, PreparedData,
    RunResult, SeedRun, SweepPoint, WeightReport, HISTOGRAM_BINS, RESULTS_HEADER,
};
pub use metrics::{accuracy, evaluate, histogram, histogram_csv, mcc, mean_std, predict, Evaluation};
pub use synthetic::{SyntheticData, SyntheticSpec};
