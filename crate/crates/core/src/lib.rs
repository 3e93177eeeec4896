//! Design-based estimation and cluster-robust inference for paired and
//! small-strata randomized experiments.
//!
//! The crate fits the difference-in-means and pair fixed-effects regressions,
//! computes pair-, unit- and stratum-clustered variance estimators (closed
//! forms for pairs, a general sandwich otherwise), forms t-tests, and runs
//! seeded Monte Carlo experiments measuring the size of those tests.

pub mod data;
pub mod dgp;
pub mod error;
pub mod estimators;
pub mod inference;
pub mod io;
pub mod montecarlo;
pub mod randomization;
pub mod variance;

pub use data::{
    validate_dataset, Assignment, ExperimentData, PairBlock, PotentialData, RawRow, UnitBlock,
};
pub use dgp::{null_resample, simulate_strata, Design, DgpConfig, EffectProfile};
pub use error::{Error, Result};
pub use estimators::{diff_in_means, fe_estimate, pair_effects, FitResult, ModelKind, PairEffects};
pub use inference::{t_test, Reference, TestResult};
pub use io::{read_csv, AnalysisOptions, AnalysisReport};
pub use montecarlo::{
    resampling_size_experiment, run_size_experiment, SizeExperimentSpec, SizeTable, SizeTest,
};
pub use randomization::{draw_paired_assignment, draw_stratified_assignment, Seed};
pub use variance::{
    crve_sandwich, dof_adjust, fe_ratio_decomposition, pair_sample_variance, pcve_fe, pcve_nofe,
    ucve_fe, ucve_nofe, Clustering, Estimator, RatioDecomposition, VarianceSet,
};
