//! Synthetic stratified experiments and null-imposed resampling.
//!
//! Outcomes follow `Y = W Y(1) + (1 - W) Y(0) + gamma_p` with iid standard
//! normal potential outcomes and a stratum shock `gamma_p ~ N(0, sigma2_gamma)`.
//! `sigma2_gamma` is a variance, not a standard deviation.
//!
//! Normal variates come from the inverse CDF applied to the seeded uniform
//! stream, so a seed reproduces the same data on every platform.

use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Assignment, ExperimentData, PairBlock, PotentialData, UnitBlock};
use crate::error::{Error, Result};
use crate::randomization::{draw_block, draw_paired_assignment, draw_stratified_assignment, Seed};

const ASSIGNMENT_STREAM: u64 = 1;
const OUTCOME_STREAM: u64 = 2;

/// Treatment effect added to every `Y(1)` of a stratum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectProfile {
    Zero,
    Constant(f64),
    /// One effect per stratum, fixed for the whole experiment.
    Heterogeneous(Vec<f64>),
}

impl EffectProfile {
    /// Draws `strata` effects from `N(0, sd^2)` and recentres them to mean
    /// zero, so the average effect is exactly zero for equal-sized strata.
    pub fn centered_heterogeneous(strata: usize, sd: f64, seed: Seed) -> Self {
        let mut normals = NormalStream::new(seed);
        let mut tau: Vec<f64> = (0..strata).map(|_| sd * normals.next_normal()).collect();
        let mean = tau.iter().sum::<f64>() / strata as f64;
        for t in &mut tau {
            *t -= mean;
        }
        EffectProfile::Heterogeneous(tau)
    }

    pub fn effect(&self, stratum: usize) -> f64 {
        match self {
            EffectProfile::Zero => 0.0,
            EffectProfile::Constant(tau) => *tau,
            EffectProfile::Heterogeneous(tau) => tau[stratum],
        }
    }
}

/// Parameters of the stratified data generating process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpConfig {
    /// Units per stratum, `G`.
    pub units_per_stratum: usize,
    /// Number of strata, `P`.
    pub strata: usize,
    /// Observations per unit, `n_gp`.
    pub obs_per_unit: usize,
    /// Variance of the stratum shock.
    pub sigma2_gamma: f64,
    pub effect: EffectProfile,
}

impl DgpConfig {
    pub fn new(units_per_stratum: usize, strata: usize, obs_per_unit: usize) -> Self {
        Self {
            units_per_stratum,
            strata,
            obs_per_unit,
            sigma2_gamma: 0.0,
            effect: EffectProfile::Zero,
        }
    }

    pub fn with_sigma2_gamma(mut self, sigma2_gamma: f64) -> Self {
        self.sigma2_gamma = sigma2_gamma;
        self
    }

    pub fn with_effect(mut self, effect: EffectProfile) -> Self {
        self.effect = effect;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.units_per_stratum < 2 {
            return Err(Error::InvalidParameter(format!(
                "G = {} units per stratum, at least 2 required",
                self.units_per_stratum
            )));
        }
        if self.strata < 2 {
            return Err(Error::InvalidParameter(format!(
                "P = {} strata, at least 2 required",
                self.strata
            )));
        }
        if self.obs_per_unit < 1 {
            return Err(Error::InvalidParameter(
                "at least one observation per unit is required".into(),
            ));
        }
        if !(self.sigma2_gamma >= 0.0 && self.sigma2_gamma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "sigma2_gamma = {} must be a finite nonnegative variance",
                self.sigma2_gamma
            )));
        }
        match &self.effect {
            EffectProfile::Heterogeneous(tau) if tau.len() != self.strata => {
                Err(Error::InvalidParameter(format!(
                    "{} stratum effects for {} strata",
                    tau.len(),
                    self.strata
                )))
            }
            EffectProfile::Heterogeneous(tau) if tau.iter().any(|t| !t.is_finite()) => Err(
                Error::InvalidParameter("stratum effects must be finite".into()),
            ),
            EffectProfile::Constant(tau) if !tau.is_finite() => {
                Err(Error::InvalidParameter("effect must be finite".into()))
            }
            _ => Ok(()),
        }
    }

    /// Average treatment effect over all observations.
    pub fn average_effect(&self) -> f64 {
        match &self.effect {
            EffectProfile::Zero => 0.0,
            EffectProfile::Constant(tau) => *tau,
            // Strata have equal sizes, so the observation-weighted mean is
            // the plain mean.
            EffectProfile::Heterogeneous(tau) => tau.iter().sum::<f64>() / tau.len() as f64,
        }
    }

    fn ids(&self) -> (Vec<String>, Vec<String>) {
        let pw = digits(self.strata);
        let gw = digits(self.units_per_stratum);
        (
            (0..self.strata).map(|p| format!("s{p:0pw$}")).collect(),
            (0..self.units_per_stratum)
                .map(|g| format!("u{g:0gw$}"))
                .collect(),
        )
    }
}

fn digits(n: usize) -> usize {
    n.saturating_sub(1).max(1).ilog10() as usize + 1
}

/// Inverse of the standard normal CDF (Wichura's AS 241, relative accuracy
/// about 1e-16). `u` must lie in the open interval (0, 1).
// Published coefficients, kept digit for digit.
#[allow(clippy::inconsistent_digit_grouping, clippy::excessive_precision)]
pub fn normal_quantile(u: f64) -> f64 {
    let q = u - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q
            * (((((((2509.080_928_730_122_7 * r + 33430.575_583_588_128) * r
                + 67265.770_927_008_700)
                * r
                + 45921.953_931_549_871)
                * r
                + 13731.693_765_509_461)
                * r
                + 1971.590_950_306_551_3)
                * r
                + 133.141_667_891_784_38)
                * r
                + 3.387_132_872_796_366_5)
            / (((((((5226.495_278_852_545_5 * r + 28729.085_735_721_943) * r
                + 39307.895_800_092_710)
                * r
                + 21213.794_301_586_595)
                * r
                + 5394.196_021_424_751_1)
                * r
                + 687.187_007_492_057_91)
                * r
                + 42.313_330_701_600_911)
                * r
                + 1.0);
    }
    let mut r = if q < 0.0 { u } else { 1.0 - u };
    r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        (((((((7.745_450_142_783_414_1e-4 * r + 0.022_723_844_989_269_184) * r
            + 0.241_780_725_177_450_61)
            * r
            + 1.270_458_252_452_368_4)
            * r
            + 3.647_848_324_763_204_5)
            * r
            + 5.769_497_221_460_691_4)
            * r
            + 4.630_337_846_156_545_3)
            * r
            + 1.423_437_110_749_683_5)
            / (((((((1.050_750_071_644_416_9e-9 * r + 5.475_938_084_995_344_9e-4) * r
                + 0.015_198_666_563_616_457)
                * r
                + 0.148_103_976_427_480_07)
                * r
                + 0.689_767_334_985_100_05)
                * r
                + 1.676_384_830_183_803_8)
                * r
                + 2.053_191_626_637_758_8)
                * r
                + 1.0)
    } else {
        r -= 5.0;
        (((((((2.010_334_399_292_288_1e-7 * r + 2.711_555_568_743_487_6e-5) * r
            + 0.001_242_660_947_388_078_4)
            * r
            + 0.026_532_189_526_576_123)
            * r
            + 0.296_560_571_828_504_89)
            * r
            + 1.784_826_539_917_291_3)
            * r
            + 5.463_784_911_164_114_4)
            * r
            + 6.657_904_643_501_103_3)
            / (((((((2.044_263_103_389_939_7e-15 * r + 1.421_511_758_316_446_0e-7) * r
                + 1.846_318_317_510_054_8e-5)
                * r
                + 7.868_691_311_456_132_6e-4)
                * r
                + 0.014_875_361_290_850_615)
                * r
                + 0.136_929_880_922_735_81)
                * r
                + 0.599_832_206_555_887_94)
                * r
                + 1.0)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

/// Seeded stream of standard normal variates.
pub struct NormalStream {
    rng: ChaCha8Rng,
}

impl NormalStream {
    pub fn new(seed: Seed) -> Self {
        Self { rng: seed.rng() }
    }

    /// Uniform on the open interval (0, 1), 53 bits of resolution.
    pub fn next_uniform(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next_normal(&mut self) -> f64 {
        normal_quantile(self.next_uniform())
    }
}

/// One simulated experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedExperiment {
    pub data: ExperimentData,
    pub assignment: Assignment,
    /// Potential outcomes including the stratum shock, so that selecting by
    /// the assignment reproduces the observed outcomes.
    pub potential: PotentialData,
}

/// Draws potential outcomes, the stratum shocks and a stratified assignment.
pub fn simulate_strata(config: &DgpConfig, seed: Seed) -> Result<SimulatedExperiment> {
    config.validate()?;
    let (pair_ids, unit_ids) = config.ids();
    let n = config.obs_per_unit;
    let sd_gamma = config.sigma2_gamma.sqrt();
    let total = config.strata * config.units_per_stratum * n;
    let mut y0_all = Vec::with_capacity(total);
    let mut y1_all = Vec::with_capacity(total);
    let mut pairs = Vec::with_capacity(config.strata);
    let mut treated = Vec::with_capacity(config.strata);

    for (p, pair_id) in pair_ids.iter().enumerate() {
        let w = draw_block(
            config.units_per_stratum,
            seed.derive(ASSIGNMENT_STREAM).derive(p as u64),
        );
        let mut normals = NormalStream::new(seed.derive(OUTCOME_STREAM).derive(p as u64));
        let gamma = sd_gamma * normals.next_normal();
        let tau = config.effect.effect(p);
        let mut units = Vec::with_capacity(config.units_per_stratum);
        for (g, unit_id) in unit_ids.iter().enumerate() {
            let mut observed = Vec::with_capacity(n);
            for _ in 0..n {
                let y0 = normals.next_normal() + gamma;
                let y1 = normals.next_normal() + tau + gamma;
                observed.push(if w[g] { y1 } else { y0 });
                y0_all.push(y0);
                y1_all.push(y1);
            }
            units.push(UnitBlock::new(unit_id.clone(), observed)?);
        }
        pairs.push(PairBlock::new(pair_id.clone(), units)?);
        treated.push(w);
    }
    let data = ExperimentData::new(pairs)?;
    let assignment = Assignment::from_layout(&data, treated)?;
    let potential = PotentialData::new(&data, y0_all, y1_all)?;
    Ok(SimulatedExperiment {
        data,
        assignment,
        potential,
    })
}

/// Same process as [`simulate_strata`] but draws only the outcome that is
/// observed, one normal variate per observation. The distribution of
/// `(data, assignment)` is identical; the random streams are not.
pub fn simulate_observed(config: &DgpConfig, seed: Seed) -> Result<(ExperimentData, Assignment)> {
    config.validate()?;
    let (pair_ids, unit_ids) = config.ids();
    let n = config.obs_per_unit;
    let sd_gamma = config.sigma2_gamma.sqrt();
    let mut pairs = Vec::with_capacity(config.strata);
    let mut treated = Vec::with_capacity(config.strata);

    for (p, pair_id) in pair_ids.iter().enumerate() {
        let w = draw_block(
            config.units_per_stratum,
            seed.derive(ASSIGNMENT_STREAM).derive(p as u64),
        );
        let mut normals = NormalStream::new(seed.derive(OUTCOME_STREAM).derive(p as u64));
        let gamma = sd_gamma * normals.next_normal();
        let tau = config.effect.effect(p);
        let mut units = Vec::with_capacity(config.units_per_stratum);
        for (g, unit_id) in unit_ids.iter().enumerate() {
            let shift = gamma + if w[g] { tau } else { 0.0 };
            let observed = (0..n).map(|_| normals.next_normal() + shift).collect();
            units.push(UnitBlock::new(unit_id.clone(), observed)?);
        }
        pairs.push(PairBlock::new(pair_id.clone(), units)?);
        treated.push(w);
    }
    let data = ExperimentData::new(pairs)?;
    let assignment = Assignment::from_layout(&data, treated)?;
    Ok((data, assignment))
}

/// Assignment mechanism to redraw under the null.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Design {
    Paired,
    /// Strata of exactly `G` units.
    Stratified(usize),
}

/// Redraws the assignment while holding observed outcomes fixed, so they
/// serve as both potential outcomes and the true effect is zero.
pub fn null_resample(data: &ExperimentData, design: Design, seed: Seed) -> Result<Assignment> {
    match design {
        Design::Paired => draw_paired_assignment(data, seed),
        Design::Stratified(g) => {
            if let Some(pair) = data.pairs().iter().find(|p| p.units().len() != g) {
                return Err(Error::InvalidParameter(format!(
                    "stratum `{}` has {} units, design expects {g}",
                    pair.id(),
                    pair.units().len()
                )));
            }
            draw_stratified_assignment(data, seed)
        }
    }
}

/// Assignment stream used by [`simulate_strata`], exposed so callers can
/// reproduce its draw with [`draw_stratified_assignment`].
pub fn assignment_seed(seed: Seed) -> Seed {
    seed.derive(ASSIGNMENT_STREAM)
}
