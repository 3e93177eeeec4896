//! Fixtures shared by the benchmarks.

use paircluster::dgp::simulate_observed;
use paircluster::{Assignment, DgpConfig, ExperimentData, Seed};

/// One simulated experiment with `g` units per stratum, `p` strata and `n`
/// observations per unit.
pub fn experiment(g: usize, p: usize, n: usize) -> (ExperimentData, Assignment) {
    simulate_observed(&DgpConfig::new(g, p, n), Seed::new(2024)).expect("valid configuration")
}
