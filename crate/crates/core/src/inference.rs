//! Two-sided t-tests against normal reference laws.

use libm::erfc;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reference distribution of the t-statistic under the null.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reference {
    /// `N(0, 1)`, the limit under pair clustering.
    StandardNormal,
    /// `N(0, 2)`, the limit of the fixed-effects statistic under unit
    /// clustering in balanced paired designs.
    NormalVarianceTwo,
}

impl Reference {
    pub fn variance(self) -> f64 {
        match self {
            Reference::StandardNormal => 1.0,
            Reference::NormalVarianceTwo => 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub t_stat: f64,
    pub p_value: f64,
    pub reject: bool,
    pub reference: Reference,
    pub level: f64,
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// `P(|Z| > |t|)` for `Z ~ N(0, variance)`.
pub fn two_sided_p_value(t: f64, reference: Reference) -> f64 {
    let z = t.abs() / reference.variance().sqrt();
    erfc(z / std::f64::consts::SQRT_2).clamp(0.0, 1.0)
}

/// `t = (tau_hat - tau_null) / sqrt(v_hat)` with a two-sided p-value from
/// `reference`; rejects when the p-value is below `level`.
pub fn t_test(
    tau_hat: f64,
    v_hat: f64,
    tau_null: f64,
    level: f64,
    reference: Reference,
) -> Result<TestResult> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "test level {level} must lie in (0, 1)"
        )));
    }
    if !v_hat.is_finite() || v_hat < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "variance estimate {v_hat} must be finite and nonnegative"
        )));
    }
    if v_hat == 0.0 {
        return Err(Error::ZeroVariance);
    }
    let t_stat = (tau_hat - tau_null) / v_hat.sqrt();
    let p_value = two_sided_p_value(t_stat, reference);
    Ok(TestResult {
        t_stat,
        p_value,
        reject: p_value < level,
        reference,
        level,
    })
}
