//! Difference-in-means and pair fixed-effects estimators.
//!
//! The fixed-effects regression is solved through the within-block
//! transformation: demeaning outcome and treatment inside every pair leaves a
//! one-regressor problem with the same slope and the same residuals as the
//! regression with explicit pair dummies.

use serde::{Deserialize, Serialize};

use crate::data::{Assignment, ExperimentData};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Outcome on a constant and the treatment indicator.
    NoFe,
    /// Outcome on the treatment indicator and one dummy per pair.
    Fe,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::NoFe => "nofe",
            ModelKind::Fe => "fe",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Intercepts {
    Common(f64),
    PerPair(Vec<f64>),
}

/// Point estimate, intercepts and residuals of one regression.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub tau_hat: f64,
    pub intercepts: Intercepts,
    /// Residuals in canonical observation order.
    pub residuals: Vec<f64>,
    pub model_kind: ModelKind,
    /// Number of regressors `K`: 2 without fixed effects, `P + 1` with.
    pub n_regressors: usize,
}

impl FitResult {
    pub fn require(&self, kind: ModelKind) -> Result<()> {
        if self.model_kind == kind {
            Ok(())
        } else {
            Err(Error::ModelMismatch {
                expected: kind.as_str(),
                found: self.model_kind.as_str(),
            })
        }
    }
}

/// OLS of the outcome on a constant and `W`: the difference between treated
/// and control means. The intercept is the control mean.
pub fn diff_in_means(data: &ExperimentData, assignment: &Assignment) -> Result<FitResult> {
    let mut sum_t = 0.0;
    let mut sum_c = 0.0;
    let mut n_t = 0usize;
    let mut n_c = 0usize;
    for (p, g, unit, _) in data.units_with_offsets() {
        if assignment.is_treated(p, g) {
            sum_t += unit.sum();
            n_t += unit.len();
        } else {
            sum_c += unit.sum();
            n_c += unit.len();
        }
    }
    if n_t == 0 || n_c == 0 {
        return Err(Error::NoVariationInTreatment {
            treated: n_t,
            control: n_c,
        });
    }
    let alpha = sum_c / n_c as f64;
    let tau = sum_t / n_t as f64 - alpha;

    let mut residuals = Vec::with_capacity(data.n_total());
    for (p, g, unit, _) in data.units_with_offsets() {
        let fitted = if assignment.is_treated(p, g) {
            alpha + tau
        } else {
            alpha
        };
        residuals.extend(unit.outcomes().iter().map(|y| y - fitted));
    }
    Ok(FitResult {
        tau_hat: tau,
        intercepts: Intercepts::Common(alpha),
        residuals,
        model_kind: ModelKind::NoFe,
        n_regressors: 2,
    })
}

/// OLS of the outcome on `W` and pair dummies, via within-pair demeaning.
/// Works for blocks of any size as long as each block has both treated and
/// control observations.
pub fn fe_estimate(data: &ExperimentData, assignment: &Assignment) -> Result<FitResult> {
    assignment.check_contrasts(data)?;

    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut block_means = Vec::with_capacity(data.n_pairs());
    for (p, pair) in data.pairs().iter().enumerate() {
        let n_p = pair.n_obs() as f64;
        let (t_p, _) = assignment.pair_counts(data, p);
        let w_bar = t_p as f64 / n_p;
        let y_bar = pair.sum() / n_p;
        for (g, unit) in pair.units().iter().enumerate() {
            let w_tilde = f64::from(u8::from(assignment.is_treated(p, g))) - w_bar;
            sxy += w_tilde * (unit.sum() - unit.len() as f64 * y_bar);
            sxx += unit.len() as f64 * w_tilde * w_tilde;
        }
        block_means.push((w_bar, y_bar));
    }
    let tau = sxy / sxx;

    let mut residuals = Vec::with_capacity(data.n_total());
    let mut gammas = Vec::with_capacity(data.n_pairs());
    for (p, pair) in data.pairs().iter().enumerate() {
        let (w_bar, y_bar) = block_means[p];
        let gamma = y_bar - tau * w_bar;
        for (g, unit) in pair.units().iter().enumerate() {
            let fitted = gamma
                + if assignment.is_treated(p, g) {
                    tau
                } else {
                    0.0
                };
            residuals.extend(unit.outcomes().iter().map(|y| y - fitted));
        }
        gammas.push(gamma);
    }
    Ok(FitResult {
        tau_hat: tau,
        intercepts: Intercepts::PerPair(gammas),
        residuals,
        model_kind: ModelKind::Fe,
        n_regressors: data.n_pairs() + 1,
    })
}

/// Within-pair effect estimates and their fixed-effects weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEffects {
    pub tau_p: Vec<f64>,
    pub omega_p: Vec<f64>,
}

impl PairEffects {
    pub fn n_pairs(&self) -> usize {
        self.tau_p.len()
    }

    /// Unweighted mean of the pair-level estimates.
    pub fn mean(&self) -> f64 {
        self.tau_p.iter().sum::<f64>() / self.tau_p.len() as f64
    }

    /// `sum_p omega_p tau_p`, the fixed-effects estimate.
    pub fn weighted_mean(&self) -> f64 {
        self.tau_p
            .iter()
            .zip(&self.omega_p)
            .map(|(t, w)| t * w)
            .sum()
    }
}

/// Treated-minus-control unit means per pair, and weights proportional to
/// `(1/n_1p + 1/n_2p)^-1`.
pub fn pair_effects(data: &ExperimentData, assignment: &Assignment) -> Result<PairEffects> {
    assignment.check_paired(data)?;
    let mut tau_p = Vec::with_capacity(data.n_pairs());
    let mut harmonic = Vec::with_capacity(data.n_pairs());
    for (p, pair) in data.pairs().iter().enumerate() {
        let units = pair.units();
        let (t, c) = if assignment.is_treated(p, 0) {
            (&units[0], &units[1])
        } else {
            (&units[1], &units[0])
        };
        tau_p.push(t.mean() - c.mean());
        harmonic.push(1.0 / (1.0 / units[0].len() as f64 + 1.0 / units[1].len() as f64));
    }
    let total: f64 = harmonic.iter().sum();
    let omega_p = harmonic.iter().map(|h| h / total).collect();
    Ok(PairEffects { tau_p, omega_p })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{validate_dataset, RawRow};

    fn rows(spec: &[(&str, &str, i64, f64)]) -> Vec<RawRow> {
        spec.iter()
            .map(|&(p, u, t, y)| RawRow {
                pair_id: p.into(),
                unit_id: u.into(),
                treatment: t,
                outcome: y,
            })
            .collect()
    }

    fn two_pairs() -> (ExperimentData, Assignment) {
        validate_dataset(&rows(&[
            ("1", "a", 1, 2.0),
            ("1", "b", 0, 0.0),
            ("2", "a", 1, 1.0),
            ("2", "b", 0, 1.0),
        ]))
        .unwrap()
    }

    #[test]
    fn one_pair_difference() {
        let (data, a) = validate_dataset(&rows(&[("1", "t", 1, 3.0), ("1", "c", 0, 1.0)])).unwrap();
        let fit = diff_in_means(&data, &a).unwrap();
        assert_eq!(fit.tau_hat, 2.0);
        assert_eq!(fit.intercepts, Intercepts::Common(1.0));
    }

    #[test]
    fn constant_outcome_gives_zero() {
        let (data, a) = validate_dataset(&rows(&[
            ("1", "a", 1, 4.5),
            ("1", "b", 0, 4.5),
            ("2", "a", 0, 4.5),
            ("2", "b", 1, 4.5),
            ("2", "b", 1, 4.5),
        ]))
        .unwrap();
        for fit in [
            diff_in_means(&data, &a).unwrap(),
            fe_estimate(&data, &a).unwrap(),
        ] {
            assert_eq!(fit.tau_hat, 0.0);
            assert!(fit.residuals.iter().all(|&e| e == 0.0));
        }
    }

    #[test]
    fn two_pair_residuals() {
        let (data, a) = two_pairs();
        let fit = diff_in_means(&data, &a).unwrap();
        assert_eq!(fit.tau_hat, 1.0);
        assert_eq!(fit.residuals, vec![0.5, -0.5, -0.5, 0.5]);
        assert_eq!(fit.n_regressors, 2);

        let fe = fe_estimate(&data, &a).unwrap();
        assert_eq!(fe.tau_hat, 1.0);
        assert_eq!(fe.residuals, vec![0.5, -0.5, -0.5, 0.5]);
        assert_eq!(fe.n_regressors, 3);
    }

    #[test]
    fn unbalanced_single_pair() {
        let (data, a) = validate_dataset(&rows(&[
            ("1", "t", 1, 4.0),
            ("1", "t", 1, 2.0),
            ("1", "c", 0, 1.0),
        ]))
        .unwrap();
        // Treated mean (4 + 2) / 2 = 3 against control mean 1.
        let fe = fe_estimate(&data, &a).unwrap();
        assert!((fe.tau_hat - 2.0).abs() < 1e-15);
        let effects = pair_effects(&data, &a).unwrap();
        assert_eq!(effects.omega_p, vec![1.0]);
        assert_eq!(effects.tau_p, vec![2.0]);
    }

    #[test]
    fn harmonic_factor_two_thirds() {
        // (1/2 + 1)^-1 = 2/3 before normalisation; pair "2" is balanced 1/1,
        // giving (1 + 1)^-1 = 1/2.
        let (data, a) = validate_dataset(&rows(&[
            ("1", "t", 1, 4.0),
            ("1", "t", 1, 2.0),
            ("1", "c", 0, 1.0),
            ("2", "t", 1, 0.0),
            ("2", "c", 0, 0.0),
        ]))
        .unwrap();
        let effects = pair_effects(&data, &a).unwrap();
        let total = 2.0 / 3.0 + 0.5;
        assert!((effects.omega_p[0] - (2.0 / 3.0) / total).abs() < 1e-15);
        assert!((effects.omega_p[1] - 0.5 / total).abs() < 1e-15);
    }

    #[test]
    fn equal_weights_under_symmetry() {
        let (data, a) = validate_dataset(&rows(&[
            ("1", "a", 1, 1.0),
            ("1", "a", 1, 2.0),
            ("1", "b", 0, 3.0),
            ("1", "b", 0, 4.0),
            ("2", "a", 0, 5.0),
            ("2", "a", 0, 6.0),
            ("2", "b", 1, 7.0),
            ("2", "b", 1, 8.0),
        ]))
        .unwrap();
        assert_eq!(pair_effects(&data, &a).unwrap().omega_p, vec![0.5, 0.5]);
    }

    #[test]
    fn pair_level_estimates() {
        let (data, a) = two_pairs();
        let effects = pair_effects(&data, &a).unwrap();
        assert_eq!(effects.tau_p, vec![2.0, 0.0]);
        assert_eq!(effects.mean(), 1.0);
    }

    #[test]
    fn no_variation_in_treatment() {
        let data = two_pairs().0;
        let all_control = Assignment::from_layout(&data, vec![vec![false; 2]; 2]).unwrap();
        assert!(matches!(
            diff_in_means(&data, &all_control),
            Err(Error::NoVariationInTreatment {
                treated: 0,
                control: 4
            })
        ));
        assert!(matches!(
            fe_estimate(&data, &all_control),
            Err(Error::DegeneratePair { .. })
        ));
    }

    #[test]
    fn fe_on_stratum_of_three() {
        // One stratum: treated unit mean 3, controls (1, 2) -> within slope
        // is the treated-minus-control mean difference 3 - 1.5.
        let (data, a) = validate_dataset(&rows(&[
            ("s", "a", 1, 3.0),
            ("s", "b", 0, 1.0),
            ("s", "c", 0, 2.0),
            ("t", "a", 0, 0.0),
            ("t", "b", 1, 0.0),
            ("t", "c", 0, 0.0),
        ]))
        .unwrap();
        let fe = fe_estimate(&data, &a).unwrap();
        assert!((fe.tau_hat - 0.75).abs() < 1e-15);
        let first: f64 = fe.residuals[..3].iter().sum();
        assert!(first.abs() < 1e-15);
    }
}
