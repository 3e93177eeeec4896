//! Shared generators and a dense least-squares oracle for the integration
//! tests. The oracle builds the full design matrix and solves the normal
//! equations directly, without going through the library's estimators.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use paircluster::{validate_dataset, Assignment, ExperimentData, RawRow};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Box-Muller draw, independent of the library's normal generator.
pub fn normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Paired dataset with `sizes[p] = (n_1p, n_2p)`, normal outcomes with a
/// pair-level shift, and a random treated unit per pair.
pub fn paired_dataset<R: Rng>(
    rng: &mut R,
    sizes: &[(usize, usize)],
) -> (ExperimentData, Assignment) {
    let mut rows = Vec::new();
    for (p, &(n1, n2)) in sizes.iter().enumerate() {
        let shift = normal(rng);
        let first_treated = rng.random_bool(0.5);
        for (g, n) in [(0usize, n1), (1, n2)] {
            let treated = (g == 0) == first_treated;
            for _ in 0..n {
                rows.push(RawRow {
                    pair_id: format!("p{p:03}"),
                    unit_id: format!("u{g}"),
                    treatment: i64::from(treated),
                    outcome: shift + normal(rng),
                });
            }
        }
    }
    validate_dataset(&rows).expect("generated data is valid")
}

/// Every unit of every pair has the same number of observations.
pub fn balanced_sizes<R: Rng>(rng: &mut R) -> Vec<(usize, usize)> {
    let p = rng.random_range(2..=20);
    let n = rng.random_range(1..=10);
    vec![(n, n); p]
}

/// Unbalanced pair sizes; with `max_ratio` the within-pair ratio is capped.
pub fn unbalanced_sizes<R: Rng>(rng: &mut R, max_ratio: Option<usize>) -> Vec<(usize, usize)> {
    let p = rng.random_range(2..=20);
    (0..p)
        .map(|_| {
            let n1: usize = rng.random_range(1..=10);
            let n2 = match max_ratio {
                Some(r) => rng.random_range(n1.div_ceil(r)..=(n1 * r).min(10 * r)),
                None => rng.random_range(1..=10),
            };
            (n1, n2)
        })
        .collect()
}

/// Stratified dataset with `g` units per stratum and `floor(g/2)` treated.
pub fn stratified_dataset<R: Rng>(
    rng: &mut R,
    strata: usize,
    g: usize,
    max_obs: usize,
) -> (ExperimentData, Assignment) {
    let mut rows = Vec::new();
    for p in 0..strata {
        let mut order: Vec<usize> = (0..g).collect();
        for i in (1..g).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        for (rank, &unit) in order.iter().enumerate() {
            let treated = rank < g / 2;
            for _ in 0..rng.random_range(1..=max_obs) {
                rows.push(RawRow {
                    pair_id: format!("s{p:03}"),
                    unit_id: format!("u{unit:02}"),
                    treatment: i64::from(treated),
                    outcome: normal(rng) + if treated { 0.3 } else { 0.0 },
                });
            }
        }
    }
    validate_dataset(&rows).expect("generated data is valid")
}

/// Observation rows in canonical order: (block, unit, treated, outcome).
pub fn flatten(data: &ExperimentData, a: &Assignment) -> Vec<(usize, usize, bool, f64)> {
    let mut out = Vec::new();
    let mut unit_index = 0;
    for (p, pair) in data.pairs().iter().enumerate() {
        for (g, unit) in pair.units().iter().enumerate() {
            for &y in unit.outcomes() {
                out.push((p, unit_index, a.is_treated(p, g), y));
            }
            unit_index += 1;
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct DenseFit {
    pub design: DMatrix<f64>,
    pub beta: DVector<f64>,
    pub residuals: Vec<f64>,
    /// Column of the treatment coefficient.
    pub tau_col: usize,
}

/// OLS on `[1, W]` or `[W, D_1, .., D_P]` through the normal equations.
pub fn dense_fit(data: &ExperimentData, a: &Assignment, fixed_effects: bool) -> DenseFit {
    let rows = flatten(data, a);
    let n = rows.len();
    let k = if fixed_effects { data.n_pairs() + 1 } else { 2 };
    let mut x = DMatrix::zeros(n, k);
    let mut y = DVector::zeros(n);
    for (i, &(p, _, w, yi)) in rows.iter().enumerate() {
        let w = if w { 1.0 } else { 0.0 };
        if fixed_effects {
            x[(i, 0)] = w;
            x[(i, 1 + p)] = 1.0;
        } else {
            x[(i, 0)] = 1.0;
            x[(i, 1)] = w;
        }
        y[i] = yi;
    }
    let xtx = x.transpose() * &x;
    let beta = xtx
        .full_piv_lu()
        .solve(&(x.transpose() * &y))
        .expect("full-rank design");
    let residuals = (&y - &x * &beta).iter().copied().collect();
    DenseFit {
        design: x,
        beta,
        residuals,
        tau_col: if fixed_effects { 0 } else { 1 },
    }
}

/// Liang-Zeger variance of the treatment coefficient, written out with
/// explicit loops over clusters.
pub fn dense_cluster_variance(fit: &DenseFit, clusters: &[usize]) -> f64 {
    let x = &fit.design;
    let k = x.ncols();
    let bread = (x.transpose() * x).try_inverse().expect("invertible");
    let n_clusters = clusters.iter().max().map_or(0, |m| m + 1);
    let mut scores = vec![DVector::<f64>::zeros(k); n_clusters];
    for i in 0..x.nrows() {
        for j in 0..k {
            scores[clusters[i]][j] += x[(i, j)] * fit.residuals[i];
        }
    }
    let mut meat = DMatrix::<f64>::zeros(k, k);
    for s in &scores {
        meat += s * s.transpose();
    }
    let v = &bread * meat * &bread;
    v[(fit.tau_col, fit.tau_col)]
}

pub fn block_clusters(data: &ExperimentData, a: &Assignment) -> Vec<usize> {
    flatten(data, a).iter().map(|r| r.0).collect()
}

pub fn unit_clusters(data: &ExperimentData, a: &Assignment) -> Vec<usize> {
    flatten(data, a).iter().map(|r| r.1).collect()
}

pub fn singleton_clusters(data: &ExperimentData) -> Vec<usize> {
    (0..data.n_total()).collect()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}
