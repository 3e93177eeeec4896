//! Experiment data model.
//!
//! Observations are grouped into pairs (or strata) of randomization units.
//! Pair and unit identifiers are opaque strings and are kept sorted, so every
//! computation iterates in the same order regardless of how rows arrived.
//! Per-observation vectors produced elsewhere in the crate (residuals,
//! potential outcomes) follow this canonical order: pair, then unit, then
//! observation position within the unit.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One randomization unit and its observed outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitBlock {
    unit_id: String,
    outcomes: Vec<f64>,
    sum: f64,
}

impl UnitBlock {
    pub fn new(unit_id: impl Into<String>, outcomes: Vec<f64>) -> Result<Self> {
        let unit_id = unit_id.into();
        if outcomes.is_empty() {
            return Err(Error::EmptyInput);
        }
        if outcomes.iter().any(|y| !y.is_finite()) {
            return Err(Error::NonFiniteOutcome {
                pair_id: String::new(),
                unit_id,
            });
        }
        let sum = outcomes.iter().sum();
        Ok(Self {
            unit_id,
            outcomes,
            sum,
        })
    }

    pub fn id(&self) -> &str {
        &self.unit_id
    }

    pub fn outcomes(&self) -> &[f64] {
        &self.outcomes
    }

    /// Number of observations, `n_gp`.
    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.sum
    }

    pub fn mean(&self) -> f64 {
        self.sum / self.outcomes.len() as f64
    }
}

/// A pair (or stratum) of randomization units.
#[derive(Debug, Clone, PartialEq)]
pub struct PairBlock {
    pair_id: String,
    units: Vec<UnitBlock>,
}

impl PairBlock {
    pub fn new(pair_id: impl Into<String>, mut units: Vec<UnitBlock>) -> Result<Self> {
        let pair_id = pair_id.into();
        if units.len() < 2 {
            return Err(Error::StratumTooSmall {
                pair_id,
                units: units.len(),
            });
        }
        units.sort_by(|a, b| a.unit_id.cmp(&b.unit_id));
        if let Some(w) = units.windows(2).find(|w| w[0].unit_id == w[1].unit_id) {
            return Err(Error::InvalidParameter(format!(
                "unit id `{}` appears twice in pair `{}`",
                w[0].unit_id, pair_id
            )));
        }
        Ok(Self { pair_id, units })
    }

    pub fn id(&self) -> &str {
        &self.pair_id
    }

    pub fn units(&self) -> &[UnitBlock] {
        &self.units
    }

    /// Observations in the block, `n_p`.
    pub fn n_obs(&self) -> usize {
        self.units.iter().map(UnitBlock::len).sum()
    }

    pub fn sum(&self) -> f64 {
        self.units.iter().map(UnitBlock::sum).sum()
    }
}

/// Validated observation-level dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentData {
    pairs: Vec<PairBlock>,
    n_total: usize,
}

impl ExperimentData {
    pub fn new(mut pairs: Vec<PairBlock>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::EmptyInput);
        }
        pairs.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
        if let Some(w) = pairs.windows(2).find(|w| w[0].pair_id == w[1].pair_id) {
            return Err(Error::InvalidParameter(format!(
                "pair id `{}` appears twice",
                w[0].pair_id
            )));
        }
        let n_total = pairs.iter().map(PairBlock::n_obs).sum();
        Ok(Self { pairs, n_total })
    }

    pub fn pairs(&self) -> &[PairBlock] {
        &self.pairs
    }

    /// Number of pairs or strata, `P`.
    pub fn n_pairs(&self) -> usize {
        self.pairs.len()
    }

    /// Number of observations, `n`.
    pub fn n_total(&self) -> usize {
        self.n_total
    }

    pub fn n_units(&self) -> usize {
        self.pairs.iter().map(|p| p.units.len()).sum()
    }

    pub fn is_paired(&self) -> bool {
        self.pairs.iter().all(|p| p.units.len() == 2)
    }

    /// Fails with [`Error::NotPaired`] on the first block without exactly two units.
    pub fn require_paired(&self) -> Result<()> {
        match self.pairs.iter().find(|p| p.units.len() != 2) {
            Some(p) => Err(Error::NotPaired {
                pair_id: p.pair_id.clone(),
                units: p.units.len(),
            }),
            None => Ok(()),
        }
    }

    /// True when both units of every pair have the same number of observations.
    pub fn is_balanced_within_pairs(&self) -> bool {
        self.pairs.iter().all(|p| {
            let n0 = p.units[0].len();
            p.units.iter().all(|u| u.len() == n0)
        })
    }

    /// Iterates units in canonical order as `(pair index, unit index, unit,
    /// offset of the unit's first observation in per-observation vectors)`.
    pub fn units_with_offsets(&self) -> impl Iterator<Item = (usize, usize, &UnitBlock, usize)> {
        let mut offset = 0;
        self.pairs
            .iter()
            .enumerate()
            .flat_map(|(p, pair)| pair.units.iter().enumerate().map(move |(g, u)| (p, g, u)))
            .map(move |(p, g, unit)| {
                let start = offset;
                offset += unit.len();
                (p, g, unit, start)
            })
    }

    /// Observed outcomes flattened in canonical order.
    pub fn outcomes(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_total);
        for pair in &self.pairs {
            for unit in &pair.units {
                out.extend_from_slice(&unit.outcomes);
            }
        }
        out
    }

    /// Root-mean-square outcome, the scale used for residual tolerances.
    pub fn outcome_scale(&self) -> f64 {
        let ss: f64 = self
            .pairs
            .iter()
            .flat_map(|p| p.units.iter())
            .flat_map(|u| u.outcomes.iter())
            .map(|y| y * y)
            .sum();
        (ss / self.n_total as f64).sqrt()
    }

    /// Same layout, new outcome values given in canonical order.
    pub fn with_outcomes(&self, outcomes: &[f64]) -> Result<Self> {
        if outcomes.len() != self.n_total {
            return Err(Error::ShapeMismatch(format!(
                "{} outcomes for {} observations",
                outcomes.len(),
                self.n_total
            )));
        }
        let mut rest = outcomes;
        let mut pairs = Vec::with_capacity(self.pairs.len());
        for pair in &self.pairs {
            let mut units = Vec::with_capacity(pair.units.len());
            for unit in &pair.units {
                let (head, tail) = rest.split_at(unit.len());
                rest = tail;
                units.push(
                    UnitBlock::new(unit.unit_id.clone(), head.to_vec())
                        .map_err(|e| with_pair_id(e, &pair.pair_id))?,
                );
            }
            pairs.push(PairBlock {
                pair_id: pair.pair_id.clone(),
                units,
            });
        }
        Ok(Self {
            pairs,
            n_total: self.n_total,
        })
    }

    /// Keeps only the pairs at the given indices (in canonical order).
    pub fn select_pairs(&self, indices: &[usize]) -> Result<Self> {
        let mut pairs = Vec::with_capacity(indices.len());
        for &i in indices {
            let pair = self
                .pairs
                .get(i)
                .ok_or_else(|| Error::InvalidParameter(format!("pair index {i} out of range")))?;
            pairs.push(pair.clone());
        }
        Self::new(pairs)
    }
}

fn with_pair_id(err: Error, pair_id: &str) -> Error {
    match err {
        Error::NonFiniteOutcome { unit_id, .. } => Error::NonFiniteOutcome {
            pair_id: pair_id.to_string(),
            unit_id,
        },
        other => other,
    }
}

/// One draw of the treatment vector `W`, aligned with an [`ExperimentData`]
/// layout: `treated[p][g]` is the indicator of unit `g` in pair `p`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Assignment {
    treated: Vec<Vec<bool>>,
}

impl Assignment {
    /// Builds an assignment from indicators in canonical layout order.
    pub fn from_layout(data: &ExperimentData, treated: Vec<Vec<bool>>) -> Result<Self> {
        if treated.len() != data.n_pairs() {
            return Err(Error::AssignmentMismatch(format!(
                "{} blocks of indicators for {} pairs",
                treated.len(),
                data.n_pairs()
            )));
        }
        for (pair, w) in data.pairs.iter().zip(&treated) {
            if w.len() != pair.units.len() {
                return Err(Error::AssignmentMismatch(format!(
                    "pair `{}` has {} units but {} indicators",
                    pair.pair_id,
                    pair.units.len(),
                    w.len()
                )));
            }
        }
        Ok(Self { treated })
    }

    /// Builds an assignment from a map keyed by `(pair_id, unit_id)`; the map
    /// must cover exactly the units of `data`.
    pub fn from_map(data: &ExperimentData, map: &BTreeMap<(String, String), bool>) -> Result<Self> {
        if map.len() != data.n_units() {
            return Err(Error::AssignmentMismatch(format!(
                "{} indicators for {} units",
                map.len(),
                data.n_units()
            )));
        }
        let mut treated = Vec::with_capacity(data.n_pairs());
        for pair in &data.pairs {
            let mut w = Vec::with_capacity(pair.units.len());
            for unit in &pair.units {
                let key = (pair.pair_id.clone(), unit.unit_id.clone());
                let v = map.get(&key).ok_or_else(|| {
                    Error::AssignmentMismatch(format!(
                        "no indicator for pair `{}`, unit `{}`",
                        key.0, key.1
                    ))
                })?;
                w.push(*v);
            }
            treated.push(w);
        }
        Ok(Self { treated })
    }

    pub fn to_map(&self, data: &ExperimentData) -> BTreeMap<(String, String), bool> {
        let mut map = BTreeMap::new();
        for (pair, w) in data.pairs.iter().zip(&self.treated) {
            for (unit, &t) in pair.units.iter().zip(w) {
                map.insert((pair.pair_id.clone(), unit.unit_id.clone()), t);
            }
        }
        map
    }

    pub fn is_treated(&self, pair: usize, unit: usize) -> bool {
        self.treated[pair][unit]
    }

    pub fn pair(&self, pair: usize) -> &[bool] {
        &self.treated[pair]
    }

    pub fn blocks(&self) -> &[Vec<bool>] {
        &self.treated
    }

    /// Treated and control observation counts `(T_p, C_p)` in pair `p`.
    pub fn pair_counts(&self, data: &ExperimentData, p: usize) -> (usize, usize) {
        let mut t = 0;
        let mut c = 0;
        for (unit, &w) in data.pairs[p].units.iter().zip(&self.treated[p]) {
            if w {
                t += unit.len();
            } else {
                c += unit.len();
            }
        }
        (t, c)
    }

    /// Treated and control observation counts `(T, C)`.
    pub fn counts(&self, data: &ExperimentData) -> (usize, usize) {
        (0..data.n_pairs())
            .map(|p| self.pair_counts(data, p))
            .fold((0, 0), |(t, c), (tp, cp)| (t + tp, c + cp))
    }

    /// Per-observation treatment indicators in canonical order.
    pub fn indicators(&self, data: &ExperimentData) -> Vec<f64> {
        let mut out = Vec::with_capacity(data.n_total());
        for (pair, w) in data.pairs.iter().zip(&self.treated) {
            for (unit, &t) in pair.units.iter().zip(w) {
                let v = if t { 1.0 } else { 0.0 };
                out.extend(std::iter::repeat_n(v, unit.len()));
            }
        }
        out
    }

    /// Checks the paired-design rule: two units per pair, exactly one treated.
    pub fn check_paired(&self, data: &ExperimentData) -> Result<()> {
        data.require_paired()?;
        for (pair, w) in data.pairs.iter().zip(&self.treated) {
            if w.iter().filter(|&&t| t).count() != 1 {
                return Err(Error::DegeneratePair {
                    pair_id: pair.pair_id.clone(),
                });
            }
        }
        Ok(())
    }

    /// Checks the stratified rule: `floor(G/2)` treated units per stratum.
    pub fn check_stratified(&self, data: &ExperimentData) -> Result<()> {
        for (pair, w) in data.pairs.iter().zip(&self.treated) {
            let g = pair.units.len();
            let n_treated = w.iter().filter(|&&t| t).count();
            if n_treated != g / 2 {
                return Err(Error::AssignmentMismatch(format!(
                    "stratum `{}` has {} treated units, expected {}",
                    pair.pair_id,
                    n_treated,
                    g / 2
                )));
            }
        }
        Ok(())
    }

    /// Fails with [`Error::DegeneratePair`] when some block has only treated
    /// or only control observations.
    pub fn check_contrasts(&self, data: &ExperimentData) -> Result<()> {
        for p in 0..data.n_pairs() {
            let (t, c) = self.pair_counts(data, p);
            if t == 0 || c == 0 {
                return Err(Error::DegeneratePair {
                    pair_id: data.pairs[p].pair_id.clone(),
                });
            }
        }
        Ok(())
    }
}

/// Potential outcomes `Y(0)` and `Y(1)` per observation, in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialData {
    y0: Vec<f64>,
    y1: Vec<f64>,
}

impl PotentialData {
    pub fn new(data: &ExperimentData, y0: Vec<f64>, y1: Vec<f64>) -> Result<Self> {
        if y0.len() != data.n_total() || y1.len() != data.n_total() {
            return Err(Error::ShapeMismatch(format!(
                "potential outcomes of length {}/{} for {} observations",
                y0.len(),
                y1.len(),
                data.n_total()
            )));
        }
        Ok(Self { y0, y1 })
    }

    pub fn y0(&self) -> &[f64] {
        &self.y0
    }

    pub fn y1(&self) -> &[f64] {
        &self.y1
    }

    /// Individual effects `Y(1) - Y(0)`.
    pub fn effects(&self) -> Vec<f64> {
        self.y1.iter().zip(&self.y0).map(|(a, b)| a - b).collect()
    }

    /// Observed outcomes under `assignment`.
    pub fn observed(&self, data: &ExperimentData, assignment: &Assignment) -> Vec<f64> {
        let w = assignment.indicators(data);
        w.iter()
            .zip(self.y0.iter().zip(&self.y1))
            .map(|(&w, (&y0, &y1))| if w > 0.5 { y1 } else { y0 })
            .collect()
    }

    /// Mean potential outcome of unit `g` in pair `p`, `Ybar_gp(d)`.
    pub fn unit_mean(&self, data: &ExperimentData, p: usize, g: usize, treated: bool) -> f64 {
        let (_, _, unit, start) = data
            .units_with_offsets()
            .find(|&(pp, gg, _, _)| pp == p && gg == g)
            .expect("unit index in range");
        let y = if treated { &self.y1 } else { &self.y0 };
        y[start..start + unit.len()].iter().sum::<f64>() / unit.len() as f64
    }

    /// Per-pair mean potential outcomes `Ybar_p(d)`.
    pub fn pair_means(&self, data: &ExperimentData, treated: bool) -> Vec<f64> {
        let y = if treated { &self.y1 } else { &self.y0 };
        let mut sums = vec![0.0; data.n_pairs()];
        for (p, _, unit, start) in data.units_with_offsets() {
            sums[p] += y[start..start + unit.len()].iter().sum::<f64>();
        }
        sums.iter()
            .zip(data.pairs())
            .map(|(s, pair)| s / pair.n_obs() as f64)
            .collect()
    }

    /// Overall mean potential outcome `Ybar(d)`.
    pub fn mean(&self, treated: bool) -> f64 {
        let y = if treated { &self.y1 } else { &self.y0 };
        y.iter().sum::<f64>() / y.len() as f64
    }
}

/// One input row: an observation with its pair, unit and treatment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRow {
    pub pair_id: String,
    pub unit_id: String,
    pub treatment: i64,
    pub outcome: f64,
}

/// Groups raw rows into canonical [`ExperimentData`] and its [`Assignment`].
///
/// Blocks may hold any number of units; paired-design operations check for
/// exactly two themselves.
pub fn validate_dataset(rows: &[RawRow]) -> Result<(ExperimentData, Assignment)> {
    if rows.is_empty() {
        return Err(Error::EmptyInput);
    }
    // pair -> unit -> (treatment, outcomes)
    let mut grouped: BTreeMap<&str, BTreeMap<&str, (bool, Vec<f64>)>> = BTreeMap::new();
    for row in rows {
        let treated = match row.treatment {
            0 => false,
            1 => true,
            value => {
                return Err(Error::NonBinaryTreatment {
                    pair_id: row.pair_id.clone(),
                    unit_id: row.unit_id.clone(),
                    value,
                })
            }
        };
        if !row.outcome.is_finite() {
            return Err(Error::NonFiniteOutcome {
                pair_id: row.pair_id.clone(),
                unit_id: row.unit_id.clone(),
            });
        }
        let entry = grouped
            .entry(&row.pair_id)
            .or_default()
            .entry(&row.unit_id)
            .or_insert_with(|| (treated, Vec::new()));
        if entry.0 != treated {
            return Err(Error::MixedTreatmentWithinUnit {
                pair_id: row.pair_id.clone(),
                unit_id: row.unit_id.clone(),
            });
        }
        entry.1.push(row.outcome);
    }

    let mut pairs = Vec::with_capacity(grouped.len());
    let mut treated = Vec::with_capacity(grouped.len());
    for (pair_id, units) in grouped {
        let statuses: BTreeSet<bool> = units.values().map(|(t, _)| *t).collect();
        if statuses.len() < 2 {
            return Err(Error::DegeneratePair {
                pair_id: pair_id.to_string(),
            });
        }
        let mut blocks = Vec::with_capacity(units.len());
        let mut w = Vec::with_capacity(units.len());
        for (unit_id, (t, outcomes)) in units {
            blocks.push(UnitBlock::new(unit_id, outcomes)?);
            w.push(t);
        }
        pairs.push(PairBlock::new(pair_id, blocks)?);
        treated.push(w);
    }
    // BTreeMap iteration already yields the sorted canonical order.
    let data = ExperimentData::new(pairs)?;
    let assignment = Assignment::from_layout(&data, treated)?;
    Ok((data, assignment))
}

/// Flattens data and assignment back into rows in canonical order.
pub fn to_rows(data: &ExperimentData, assignment: &Assignment) -> Vec<RawRow> {
    let mut rows = Vec::with_capacity(data.n_total());
    for (p, pair) in data.pairs().iter().enumerate() {
        for (g, unit) in pair.units().iter().enumerate() {
            let treatment = i64::from(assignment.is_treated(p, g));
            for &outcome in unit.outcomes() {
                rows.push(RawRow {
                    pair_id: pair.id().to_string(),
                    unit_id: unit.id().to_string(),
                    treatment,
                    outcome,
                });
            }
        }
    }
    rows
}
