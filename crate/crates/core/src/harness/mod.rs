//! Evaluation protocols: seeded dual Monte Carlo splits, nested k-fold grid
//! search, repeated evaluation, training-fraction sweeps and the
//! uncertainty-vs-fraction study.

pub mod config;
pub mod eval;
pub mod grid;
pub mod report;
pub mod split;
pub mod uq;

pub use config::{DataSource, RunConfig, SweepSpec, SyntheticSpec, UqSpec};
pub use eval::{
    fraction_sweep, run_evaluation, validate_fraction_list, EvalProtocol, EvalReport, IterationResult, Preset,
    RmseStats, SweepReport, SweepRow,
};
pub use grid::{grid_search, Candidate, CandidateScore, CvResult, FitObserver, HyperGrid, NoObserver};
pub use report::{write_comparison_csv, write_iterations_csv, write_sweep_csv, write_uq_trend_csv, COMPARISON_HEADER};
pub use split::{dual_mc_split, kfold_indices, SplitFractions, SplitPlan};
pub use uq::{uq_run, uq_trend_study, UqReplicate, UqRun, UqStudy, UqTrendReport, UqTrendRow, DEFAULT_DRAWS};
