//! Cluster-robust (Liang-Zeger) variance estimators.
//!
//! Two routes are provided. [`crve_sandwich`] is the general sandwich
//! `(X'X)^-1 (sum_c s_c s_c') (X'X)^-1` for an arbitrary design matrix and
//! clustering. The pair-design closed forms ([`pcve_nofe`], [`ucve_nofe`],
//! [`pcve_fe`], [`ucve_fe`]) only need the per-pair sums of residuals of
//! treated and untreated observations. Blocks with more than two units go
//! through [`clustered_variance`], the sandwich specialised to the single
//! demeaned treatment regressor.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{Assignment, ExperimentData};
use crate::error::{Error, Result};
use crate::estimators::{diff_in_means, fe_estimate, FitResult, ModelKind, PairEffects};

/// Level at which scores are summed before forming the meat of the sandwich.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Clustering {
    /// Pair or stratum.
    Block,
    /// Randomization unit.
    Unit,
    /// Every observation on its own (heteroskedasticity-robust).
    Singleton,
}

impl Clustering {
    pub fn as_str(self) -> &'static str {
        match self {
            Clustering::Block => "block",
            Clustering::Unit => "unit",
            Clustering::Singleton => "singleton",
        }
    }
}

impl std::fmt::Display for Clustering {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-observation cluster labels in canonical order.
pub fn cluster_labels(data: &ExperimentData, clustering: Clustering) -> Vec<usize> {
    let mut labels = Vec::with_capacity(data.n_total());
    for (unit_index, (p, _, unit, start)) in data.units_with_offsets().enumerate() {
        match clustering {
            Clustering::Block => labels.extend(std::iter::repeat_n(p, unit.len())),
            Clustering::Unit => labels.extend(std::iter::repeat_n(unit_index, unit.len())),
            Clustering::Singleton => labels.extend(start..start + unit.len()),
        }
    }
    labels
}

/// Number of distinct clusters at a clustering level.
pub fn cluster_count(data: &ExperimentData, clustering: Clustering) -> usize {
    match clustering {
        Clustering::Block => data.n_pairs(),
        Clustering::Unit => data.n_units(),
        Clustering::Singleton => data.n_total(),
    }
}

/// General cluster-robust sandwich covariance of OLS coefficients.
pub fn crve_sandwich(
    design: &DMatrix<f64>,
    residuals: &[f64],
    clusters: &[usize],
) -> Result<DMatrix<f64>> {
    let (n, k) = design.shape();
    if residuals.len() != n || clusters.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "design has {n} rows, residuals {}, cluster labels {}",
            residuals.len(),
            clusters.len()
        )));
    }
    if k == 0 || n < k {
        return Err(Error::RankDeficient);
    }
    let xtx = design.transpose() * design;
    let bread = xtx.cholesky().ok_or(Error::RankDeficient)?.inverse();
    if bread.iter().any(|v| !v.is_finite()) {
        return Err(Error::RankDeficient);
    }

    let mut scores: BTreeMap<usize, DVector<f64>> = BTreeMap::new();
    for (i, (&e, &c)) in residuals.iter().zip(clusters).enumerate() {
        let s = scores.entry(c).or_insert_with(|| DVector::zeros(k));
        for j in 0..k {
            s[j] += e * design[(i, j)];
        }
    }
    let mut meat = DMatrix::zeros(k, k);
    for s in scores.values() {
        meat += s * s.transpose();
    }
    let v = &bread * meat * &bread;
    // Symmetrise away rounding asymmetry.
    Ok((&v + v.transpose()) * 0.5)
}

/// Treatment regressor after partialling out the intercept (no fixed
/// effects) or the pair dummies (fixed effects), one value per unit.
fn demeaned_treatment(
    data: &ExperimentData,
    assignment: &Assignment,
    model: ModelKind,
) -> Vec<Vec<f64>> {
    let w_bar_all = {
        let (t, _) = assignment.counts(data);
        t as f64 / data.n_total() as f64
    };
    data.pairs()
        .iter()
        .enumerate()
        .map(|(p, pair)| {
            let centre = match model {
                ModelKind::NoFe => w_bar_all,
                ModelKind::Fe => assignment.pair_counts(data, p).0 as f64 / pair.n_obs() as f64,
            };
            (0..pair.units().len())
                .map(|g| f64::from(u8::from(assignment.is_treated(p, g))) - centre)
                .collect()
        })
        .collect()
}

/// Cluster-robust variance of `fit.tau_hat` at the given clustering level,
/// for any block sizes. Equivalent to the `(1,1)` entry of [`crve_sandwich`]
/// on the full design, by the Frisch-Waugh-Lovell theorem.
pub fn clustered_variance(
    data: &ExperimentData,
    assignment: &Assignment,
    fit: &FitResult,
    clustering: Clustering,
) -> Result<f64> {
    if fit.residuals.len() != data.n_total() {
        return Err(Error::ShapeMismatch(format!(
            "{} residuals for {} observations",
            fit.residuals.len(),
            data.n_total()
        )));
    }
    let x = demeaned_treatment(data, assignment, fit.model_kind);
    let mut sxx = 0.0;
    let mut meat = 0.0;
    let mut start = 0;
    for (p, pair) in data.pairs().iter().enumerate() {
        let mut block_score = 0.0;
        for (g, _) in pair.units().iter().enumerate() {
            let xg = x[p][g];
            sxx += pair.units()[g].len() as f64 * xg * xg;
        }
        for (g, unit) in pair.units().iter().enumerate() {
            let xg = x[p][g];
            let e = &fit.residuals[start..start + unit.len()];
            start += unit.len();
            match clustering {
                Clustering::Singleton => meat += xg * xg * e.iter().map(|r| r * r).sum::<f64>(),
                Clustering::Unit => {
                    let s = xg * e.iter().sum::<f64>();
                    meat += s * s;
                }
                Clustering::Block => block_score += xg * e.iter().sum::<f64>(),
            }
        }
        if clustering == Clustering::Block {
            meat += block_score * block_score;
        }
    }
    if sxx <= 0.0 {
        return Err(Error::NoVariationInTreatment {
            treated: assignment.counts(data).0,
            control: assignment.counts(data).1,
        });
    }
    Ok(meat / (sxx * sxx))
}

/// Per-pair sums of residuals over treated and untreated observations.
fn residual_sums(
    data: &ExperimentData,
    assignment: &Assignment,
    residuals: &[f64],
) -> Vec<(f64, f64)> {
    let mut sums = vec![(0.0, 0.0); data.n_pairs()];
    for (p, g, unit, start) in data.units_with_offsets() {
        let s: f64 = residuals[start..start + unit.len()].iter().sum();
        if assignment.is_treated(p, g) {
            sums[p].0 += s;
        } else {
            sums[p].1 += s;
        }
    }
    sums
}

fn paired_fit_checks(
    data: &ExperimentData,
    assignment: &Assignment,
    fit: &FitResult,
    kind: ModelKind,
) -> Result<()> {
    fit.require(kind)?;
    assignment.check_paired(data)?;
    if fit.residuals.len() != data.n_total() {
        return Err(Error::ShapeMismatch(format!(
            "{} residuals for {} observations",
            fit.residuals.len(),
            data.n_total()
        )));
    }
    Ok(())
}

/// Pair-clustered variance of the difference in means:
/// `sum_p (SET_p / T - SEU_p / C)^2`.
pub fn pcve_nofe(data: &ExperimentData, assignment: &Assignment, fit: &FitResult) -> Result<f64> {
    paired_fit_checks(data, assignment, fit, ModelKind::NoFe)?;
    let (t, c) = assignment.counts(data);
    let (t, c) = (t as f64, c as f64);
    Ok(residual_sums(data, assignment, &fit.residuals)
        .iter()
        .map(|&(set, seu)| {
            let d = set / t - seu / c;
            d * d
        })
        .sum())
}

/// Unit-clustered variance of the difference in means:
/// `sum_p (SET_p^2 / T^2 + SEU_p^2 / C^2)`.
pub fn ucve_nofe(data: &ExperimentData, assignment: &Assignment, fit: &FitResult) -> Result<f64> {
    paired_fit_checks(data, assignment, fit, ModelKind::NoFe)?;
    let (t, c) = assignment.counts(data);
    let (t2, c2) = ((t * t) as f64, (c * c) as f64);
    Ok(residual_sums(data, assignment, &fit.residuals)
        .iter()
        .map(|&(set, seu)| set * set / t2 + seu * seu / c2)
        .sum())
}

/// `(omega_p^2 SET_{p,fe}^2, n_1p, n_2p)` per pair.
fn fe_terms(
    data: &ExperimentData,
    assignment: &Assignment,
    fit: &FitResult,
) -> Vec<(f64, f64, f64)> {
    let sums = residual_sums(data, assignment, &fit.residuals);
    let harmonic: Vec<f64> = data
        .pairs()
        .iter()
        .map(|pair| {
            let u = pair.units();
            1.0 / (1.0 / u[0].len() as f64 + 1.0 / u[1].len() as f64)
        })
        .collect();
    let total: f64 = harmonic.iter().sum();
    data.pairs()
        .iter()
        .zip(sums.iter().zip(&harmonic))
        .map(|(pair, (&(set, _), h))| {
            let omega = h / total;
            let u = pair.units();
            (
                omega * omega * set * set,
                u[0].len() as f64,
                u[1].len() as f64,
            )
        })
        .collect()
}

/// Pair-clustered variance of the fixed-effects estimator:
/// `sum_p omega_p^2 SET_{p,fe}^2 (1/n_1p + 1/n_2p)^2`.
pub fn pcve_fe(data: &ExperimentData, assignment: &Assignment, fit: &FitResult) -> Result<f64> {
    paired_fit_checks(data, assignment, fit, ModelKind::Fe)?;
    Ok(fe_terms(data, assignment, fit)
        .iter()
        .map(|&(a, n1, n2)| {
            let s = 1.0 / n1 + 1.0 / n2;
            a * s * s
        })
        .sum())
}

/// Unit-clustered variance of the fixed-effects estimator:
/// `sum_p omega_p^2 SET_{p,fe}^2 (1/n_1p^2 + 1/n_2p^2)`.
pub fn ucve_fe(data: &ExperimentData, assignment: &Assignment, fit: &FitResult) -> Result<f64> {
    paired_fit_checks(data, assignment, fit, ModelKind::Fe)?;
    Ok(fe_terms(data, assignment, fit)
        .iter()
        .map(|&(a, n1, n2)| a * (1.0 / (n1 * n1) + 1.0 / (n2 * n2)))
        .sum())
}

/// Software-style small-sample correction `v * n / (n - K)`.
pub fn dof_adjust(v: f64, n: usize, k: usize) -> Result<f64> {
    if n <= k {
        return Err(Error::DegenerateDof { n, k });
    }
    Ok(v * n as f64 / (n - k) as f64)
}

/// `(1/P^2) sum_p (tau_p - mean)^2`.
pub fn pair_sample_variance(effects: &PairEffects) -> f64 {
    let p = effects.n_pairs() as f64;
    let mean = effects.mean();
    effects
        .tau_p
        .iter()
        .map(|t| (t - mean) * (t - mean))
        .sum::<f64>()
        / (p * p)
}

/// Ratio of unit- to pair-clustered fixed-effects variances written as a
/// weighted average of within-pair share terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioDecomposition {
    /// `(n_1p/n_p)^2 + (n_2p/n_p)^2`, always in `[1/2, 1]`.
    pub m_p: Vec<f64>,
    /// `SET_{p,fe}^2 / sum SET_{p,fe}^2`.
    pub zeta_p: Vec<f64>,
    pub ratio: f64,
}

pub fn fe_ratio_decomposition(
    data: &ExperimentData,
    assignment: &Assignment,
    fit: &FitResult,
) -> Result<RatioDecomposition> {
    paired_fit_checks(data, assignment, fit, ModelKind::Fe)?;
    let sums = residual_sums(data, assignment, &fit.residuals);
    let total: f64 = sums.iter().map(|(set, _)| set * set).sum();
    if total == 0.0 {
        return Err(Error::ZeroResiduals);
    }
    let m_p: Vec<f64> = data
        .pairs()
        .iter()
        .map(|pair| {
            let u = pair.units();
            let n = pair.n_obs() as f64;
            let a = u[0].len() as f64 / n;
            let b = u[1].len() as f64 / n;
            a * a + b * b
        })
        .collect();
    let zeta_p: Vec<f64> = sums.iter().map(|(set, _)| set * set / total).collect();
    let ratio = m_p.iter().zip(&zeta_p).map(|(m, z)| m * z).sum();
    Ok(RatioDecomposition { m_p, zeta_p, ratio })
}

/// One of the four clustered variance estimators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    PcveNofe,
    UcveNofe,
    PcveFe,
    UcveFe,
}

impl Estimator {
    pub const ALL: [Estimator; 4] = [
        Estimator::PcveNofe,
        Estimator::UcveNofe,
        Estimator::PcveFe,
        Estimator::UcveFe,
    ];

    pub fn new(clustering: Clustering, model: ModelKind) -> Result<Self> {
        match (clustering, model) {
            (Clustering::Block, ModelKind::NoFe) => Ok(Estimator::PcveNofe),
            (Clustering::Unit, ModelKind::NoFe) => Ok(Estimator::UcveNofe),
            (Clustering::Block, ModelKind::Fe) => Ok(Estimator::PcveFe),
            (Clustering::Unit, ModelKind::Fe) => Ok(Estimator::UcveFe),
            (Clustering::Singleton, _) => Err(Error::InvalidParameter(
                "singleton clustering has no closed form estimator".into(),
            )),
        }
    }

    pub fn clustering(self) -> Clustering {
        match self {
            Estimator::PcveNofe | Estimator::PcveFe => Clustering::Block,
            Estimator::UcveNofe | Estimator::UcveFe => Clustering::Unit,
        }
    }

    pub fn model(self) -> ModelKind {
        match self {
            Estimator::PcveNofe | Estimator::UcveNofe => ModelKind::NoFe,
            Estimator::PcveFe | Estimator::UcveFe => ModelKind::Fe,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Estimator::PcveNofe => "pcve_nofe",
            Estimator::UcveNofe => "ucve_nofe",
            Estimator::PcveFe => "pcve_fe",
            Estimator::UcveFe => "ucve_fe",
        }
    }
}

/// Multiplicative small-sample factors reported next to a raw variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DofFactors {
    /// `n / (n - K)`; `None` when `n <= K`.
    pub n_over_n_minus_k: Option<f64>,
    /// `c / (c - 1)` for `c` clusters; `P / (P - 1)` under pair clustering.
    pub clusters_over_clusters_minus_one: Option<f64>,
}

/// How the variances in a [`VarianceSet`] were computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMethod {
    /// Pair-design closed forms (every block has two units).
    ClosedForm,
    /// Sandwich on the demeaned regressor (blocks of any size).
    Sandwich,
}

/// Point estimates and all four raw clustered variances for one dataset.
/// For blocks of more than two units, "pair" clustering means stratum
/// clustering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceSet {
    pub tau_hat: f64,
    pub tau_hat_fe: f64,
    pub pcve_nofe: f64,
    pub ucve_nofe: f64,
    pub pcve_fe: f64,
    pub ucve_fe: f64,
    pub dof_factors: BTreeMap<Estimator, DofFactors>,
    pub method: VarianceMethod,
    pub n_obs: usize,
    pub n_blocks: usize,
    pub n_units: usize,
}

impl VarianceSet {
    /// Fits both models and computes every estimator. Paired data uses the
    /// closed forms, other block sizes the sandwich route.
    pub fn compute(data: &ExperimentData, assignment: &Assignment) -> Result<Self> {
        let nofe = diff_in_means(data, assignment)?;
        let fe = fe_estimate(data, assignment)?;
        Self::from_fits(data, assignment, &nofe, &fe)
    }

    pub fn from_fits(
        data: &ExperimentData,
        assignment: &Assignment,
        nofe: &FitResult,
        fe: &FitResult,
    ) -> Result<Self> {
        nofe.require(ModelKind::NoFe)?;
        fe.require(ModelKind::Fe)?;
        let paired = assignment.check_paired(data).is_ok();
        let (pcve_nofe_v, ucve_nofe_v, pcve_fe_v, ucve_fe_v, method) = if paired {
            (
                pcve_nofe(data, assignment, nofe)?,
                ucve_nofe(data, assignment, nofe)?,
                pcve_fe(data, assignment, fe)?,
                ucve_fe(data, assignment, fe)?,
                VarianceMethod::ClosedForm,
            )
        } else {
            (
                clustered_variance(data, assignment, nofe, Clustering::Block)?,
                clustered_variance(data, assignment, nofe, Clustering::Unit)?,
                clustered_variance(data, assignment, fe, Clustering::Block)?,
                clustered_variance(data, assignment, fe, Clustering::Unit)?,
                VarianceMethod::Sandwich,
            )
        };

        let n = data.n_total();
        let dof_factors = Estimator::ALL
            .iter()
            .map(|&e| {
                let k = match e.model() {
                    ModelKind::NoFe => nofe.n_regressors,
                    ModelKind::Fe => fe.n_regressors,
                };
                let c = cluster_count(data, e.clustering());
                let factors = DofFactors {
                    n_over_n_minus_k: dof_adjust(1.0, n, k).ok(),
                    clusters_over_clusters_minus_one: (c > 1).then(|| c as f64 / (c - 1) as f64),
                };
                (e, factors)
            })
            .collect();

        Ok(Self {
            tau_hat: nofe.tau_hat,
            tau_hat_fe: fe.tau_hat,
            pcve_nofe: pcve_nofe_v,
            ucve_nofe: ucve_nofe_v,
            pcve_fe: pcve_fe_v,
            ucve_fe: ucve_fe_v,
            dof_factors,
            method,
            n_obs: n,
            n_blocks: data.n_pairs(),
            n_units: data.n_units(),
        })
    }

    pub fn get(&self, estimator: Estimator) -> f64 {
        match estimator {
            Estimator::PcveNofe => self.pcve_nofe,
            Estimator::UcveNofe => self.ucve_nofe,
            Estimator::PcveFe => self.pcve_fe,
            Estimator::UcveFe => self.ucve_fe,
        }
    }

    /// Point estimate the estimator refers to.
    pub fn estimate(&self, estimator: Estimator) -> f64 {
        match estimator.model() {
            ModelKind::NoFe => self.tau_hat,
            ModelKind::Fe => self.tau_hat_fe,
        }
    }
}
