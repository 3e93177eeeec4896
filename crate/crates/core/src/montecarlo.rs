//! Monte Carlo size experiments.
//!
//! Every replication draws from its own seed, derived from the master seed
//! and the replication index, and results are reduced in index order. The
//! resulting tables are therefore identical for any thread count.

use std::io::Write;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Assignment, ExperimentData};
use crate::dgp::{null_resample, simulate_observed, Design, DgpConfig};
use crate::error::{Error, Result};
use crate::estimators::{diff_in_means, fe_estimate, ModelKind};
use crate::inference::{t_test, Reference};
use crate::randomization::Seed;
use crate::variance::{dof_adjust, Clustering, Estimator, VarianceSet};

/// One t-test: a clustering level crossed with a regression model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SizeTest {
    pub clustering: Clustering,
    pub model: ModelKind,
}

impl SizeTest {
    pub const ALL: [SizeTest; 4] = [
        SizeTest::new(Clustering::Block, ModelKind::NoFe),
        SizeTest::new(Clustering::Block, ModelKind::Fe),
        SizeTest::new(Clustering::Unit, ModelKind::NoFe),
        SizeTest::new(Clustering::Unit, ModelKind::Fe),
    ];

    pub const fn new(clustering: Clustering, model: ModelKind) -> Self {
        Self { clustering, model }
    }

    fn estimator(self) -> Result<Estimator> {
        Estimator::new(self.clustering, self.model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeExperimentSpec {
    pub dgp: DgpConfig,
    pub reps: usize,
    pub level: f64,
    pub tests: Vec<SizeTest>,
    pub master_seed: Seed,
    /// Worker threads; `None` uses rayon's global pool.
    pub threads: Option<usize>,
}

impl SizeExperimentSpec {
    pub fn new(dgp: DgpConfig, reps: usize, master_seed: Seed) -> Self {
        Self {
            dgp,
            reps,
            level: 0.05,
            tests: SizeTest::ALL.to_vec(),
            master_seed,
            threads: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dgp.validate()?;
        if self.reps == 0 {
            return Err(Error::InvalidParameter("reps must be at least 1".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "level {} must lie in (0, 1)",
                self.level
            )));
        }
        if self.tests.is_empty() {
            return Err(Error::InvalidParameter("no tests requested".into()));
        }
        for t in &self.tests {
            t.estimator()?;
        }
        Ok(())
    }
}

/// Outcome of one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub index: usize,
    /// One entry per requested test, in request order.
    pub t_stats: Vec<f64>,
    pub rejects: Vec<bool>,
    /// Rejections after multiplying the variance by `n / (n - K)`.
    pub dof_rejects: Vec<bool>,
    /// Unit- over block-clustered standard error of the fixed-effects
    /// estimator.
    pub se_ratio: f64,
}

/// Rejection statistics of one test at one stratum size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeCell {
    pub test: Clustering,
    pub model: ModelKind,
    #[serde(rename = "G")]
    pub g: usize,
    pub reps: usize,
    pub rejections: usize,
    pub rejection_rate: f64,
    pub mc_se: f64,
    pub mean_se_ratio: f64,
    /// `mean_se_ratio` with the `c / (c - 1)` cluster corrections that
    /// standard regression software applies to both standard errors.
    pub mean_se_ratio_cluster_adjusted: f64,
    pub dof_rejection_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SizeTable {
    pub cells: Vec<SizeCell>,
}

pub const SIZE_TABLE_HEADER: [&str; 7] = [
    "test",
    "model",
    "G",
    "reps",
    "rejection_rate",
    "mc_se",
    "mean_se_ratio",
];

impl SizeTable {
    pub fn cell(&self, test: Clustering, model: ModelKind, g: usize) -> Option<&SizeCell> {
        self.cells
            .iter()
            .find(|c| c.test == test && c.model == model && c.g == g)
    }

    pub fn extend(&mut self, other: SizeTable) {
        self.cells.extend(other.cells);
    }

    /// Writes the table as CSV with header
    /// `test,model,G,reps,rejection_rate,mc_se,mean_se_ratio`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(SIZE_TABLE_HEADER).map_err(csv_err)?;
        for c in &self.cells {
            w.write_record([
                c.test.as_str().to_string(),
                c.model.as_str().to_string(),
                c.g.to_string(),
                c.reps.to_string(),
                c.rejection_rate.to_string(),
                c.mc_se.to_string(),
                c.mean_se_ratio.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

/// Monte Carlo standard error of a rejection rate.
pub fn mc_standard_error(rate: f64, reps: usize) -> f64 {
    (rate * (1.0 - rate) / reps as f64).sqrt()
}

fn evaluate(
    index: usize,
    data: &ExperimentData,
    assignment: &Assignment,
    tests: &[SizeTest],
    tau_null: f64,
    level: f64,
) -> Result<ReplicationRecord> {
    let nofe = diff_in_means(data, assignment)?;
    let fe = fe_estimate(data, assignment)?;
    let set = VarianceSet::from_fits(data, assignment, &nofe, &fe)?;
    let n = data.n_total();

    let mut t_stats = Vec::with_capacity(tests.len());
    let mut rejects = Vec::with_capacity(tests.len());
    let mut dof_rejects = Vec::with_capacity(tests.len());
    for test in tests {
        let est = test.estimator()?;
        let v = set.get(est);
        let k = match test.model {
            ModelKind::NoFe => nofe.n_regressors,
            ModelKind::Fe => fe.n_regressors,
        };
        let r = t_test(
            set.estimate(est),
            v,
            tau_null,
            level,
            Reference::StandardNormal,
        )?;
        let r_dof = t_test(
            set.estimate(est),
            dof_adjust(v, n, k)?,
            tau_null,
            level,
            Reference::StandardNormal,
        )?;
        t_stats.push(r.t_stat);
        rejects.push(r.reject);
        dof_rejects.push(r_dof.reject);
    }
    if set.pcve_fe == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok(ReplicationRecord {
        index,
        t_stats,
        rejects,
        dof_rejects,
        se_ratio: (set.ucve_fe / set.pcve_fe).sqrt(),
    })
}

fn run_replications<F>(reps: usize, threads: Option<usize>, f: F) -> Result<Vec<ReplicationRecord>>
where
    F: Fn(usize) -> Result<ReplicationRecord> + Sync + Send,
{
    let work = || -> Vec<Result<ReplicationRecord>> { (0..reps).into_par_iter().map(&f).collect() };
    let results = match threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    };
    results
        .into_iter()
        .enumerate()
        .map(|(index, r)| {
            r.map_err(|source| Error::Replication {
                index,
                source: Box::new(source),
            })
        })
        .collect()
}

/// Ratio of the unit-level to the block-level `c / (c - 1)` factor, on the
/// standard-error scale. Undefined (NaN) with a single block.
fn cluster_adjustment(n_units: usize, n_blocks: usize) -> f64 {
    if n_blocks < 2 {
        return f64::NAN;
    }
    let f = |c: usize| c as f64 / (c - 1) as f64;
    (f(n_units) / f(n_blocks)).sqrt()
}

fn tabulate(
    records: &[ReplicationRecord],
    tests: &[SizeTest],
    g: usize,
    adjustment: f64,
) -> SizeTable {
    let reps = records.len();
    let mean_se_ratio = records.iter().map(|r| r.se_ratio).sum::<f64>() / reps as f64;
    let cells = tests
        .iter()
        .enumerate()
        .map(|(j, test)| {
            let rejections = records.iter().filter(|r| r.rejects[j]).count();
            let dof = records.iter().filter(|r| r.dof_rejects[j]).count();
            let rate = rejections as f64 / reps as f64;
            SizeCell {
                test: test.clustering,
                model: test.model,
                g,
                reps,
                rejections,
                rejection_rate: rate,
                mc_se: mc_standard_error(rate, reps),
                mean_se_ratio,
                mean_se_ratio_cluster_adjusted: mean_se_ratio * adjustment,
                dof_rejection_rate: dof as f64 / reps as f64,
            }
        })
        .collect();
    SizeTable { cells }
}

/// Simulates `spec.reps` experiments from the DGP and tests the true
/// average effect with every requested test.
pub fn run_size_experiment(spec: &SizeExperimentSpec) -> Result<SizeTable> {
    run_size_experiment_detailed(spec).map(|(table, _)| table)
}

/// Like [`run_size_experiment`], also returning the per-replication records
/// (t-statistics included) in replication order.
pub fn run_size_experiment_detailed(
    spec: &SizeExperimentSpec,
) -> Result<(SizeTable, Vec<ReplicationRecord>)> {
    spec.validate()?;
    let tau_null = spec.dgp.average_effect();
    let records = run_replications(spec.reps, spec.threads, |r| {
        let (data, assignment) = simulate_observed(&spec.dgp, spec.master_seed.derive(r as u64))?;
        evaluate(r, &data, &assignment, &spec.tests, tau_null, spec.level)
    })?;
    let dgp = &spec.dgp;
    let adjustment = cluster_adjustment(dgp.units_per_stratum * dgp.strata, dgp.strata);
    let table = tabulate(&records, &spec.tests, dgp.units_per_stratum, adjustment);
    Ok((table, records))
}

/// Runs the experiment once per stratum size in `sizes` and stacks the tables.
pub fn scan_units_per_stratum(
    spec: &SizeExperimentSpec,
    sizes: impl IntoIterator<Item = usize>,
) -> Result<SizeTable> {
    let mut table = SizeTable::default();
    for g in sizes {
        let mut s = spec.clone();
        s.dgp.units_per_stratum = g;
        table.extend(run_size_experiment(&s)?);
    }
    Ok(table)
}

/// Null-imposed resampling on observed paired data: the outcomes are held
/// fixed and only the assignment is redrawn, so every rejection is a false
/// one. Tallies all four tests.
pub fn resampling_size_experiment(
    data: &ExperimentData,
    reps: usize,
    level: f64,
    seed: Seed,
    threads: Option<usize>,
) -> Result<SizeTable> {
    data.require_paired()?;
    if reps == 0 {
        return Err(Error::InvalidParameter("reps must be at least 1".into()));
    }
    let tests = SizeTest::ALL;
    let records = run_replications(reps, threads, |r| {
        let assignment = null_resample(data, Design::Paired, seed.derive(r as u64))?;
        evaluate(r, data, &assignment, &tests, 0.0, level)
    })?;
    let adjustment = cluster_adjustment(data.n_units(), data.n_pairs());
    Ok(tabulate(&records, &tests, 2, adjustment))
}

/// Random subset of `k` pairs, fixed by `seed`.
pub fn subsample_pairs(data: &ExperimentData, k: usize, seed: Seed) -> Result<ExperimentData> {
    if k == 0 || k > data.n_pairs() {
        return Err(Error::InvalidParameter(format!(
            "cannot keep {k} of {} pairs",
            data.n_pairs()
        )));
    }
    let mut keep = sample(&mut seed.rng(), data.n_pairs(), k).into_vec();
    keep.sort_unstable();
    data.select_pairs(&keep)
}
