//! Seeded treatment assignment for paired and stratified designs.
//!
//! Every stratum draws from its own generator, seeded from the master seed and
//! the stratum index, so a draw never depends on how strata are scheduled.

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Assignment, ExperimentData};
use crate::error::{Error, Result};

/// Master seed for all randomness in the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Seed {
    pub master: u64,
}

impl Seed {
    pub const fn new(master: u64) -> Self {
        Self { master }
    }

    /// Child seed for sub-stream `stream`. Distinct streams give unrelated
    /// child seeds; the map is a pure function of `(master, stream)`.
    pub fn derive(self, stream: u64) -> Seed {
        let a = splitmix64(self.master ^ 0x6a09_e667_f3bc_c909);
        Seed::new(splitmix64(a.wrapping_add(splitmix64(stream))))
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.master)
    }
}

impl From<u64> for Seed {
    fn from(master: u64) -> Self {
        Seed::new(master)
    }
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Draws one unit per pair for treatment, each with probability 1/2,
/// independently across pairs.
pub fn draw_paired_assignment(data: &ExperimentData, seed: Seed) -> Result<Assignment> {
    data.require_paired()?;
    draw_blocks(data, seed)
}

/// Draws `floor(G/2)` treated units uniformly at random in every stratum of
/// `G` units, independently across strata.
pub fn draw_stratified_assignment(data: &ExperimentData, seed: Seed) -> Result<Assignment> {
    if let Some(pair) = data.pairs().iter().find(|p| p.units().len() < 2) {
        return Err(Error::StratumTooSmall {
            pair_id: pair.id().to_string(),
            units: pair.units().len(),
        });
    }
    draw_blocks(data, seed)
}

fn draw_blocks(data: &ExperimentData, seed: Seed) -> Result<Assignment> {
    let treated = data
        .pairs()
        .iter()
        .enumerate()
        .map(|(p, pair)| draw_block(pair.units().len(), seed.derive(p as u64)))
        .collect();
    Assignment::from_layout(data, treated)
}

/// Treatment indicators for one block of `units` units.
pub(crate) fn draw_block(units: usize, seed: Seed) -> Vec<bool> {
    let mut order: Vec<usize> = (0..units).collect();
    order.shuffle(&mut seed.rng());
    let mut w = vec![false; units];
    for &i in &order[..units / 2] {
        w[i] = true;
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{PairBlock, UnitBlock};

    fn layout(pairs: usize, units: usize) -> ExperimentData {
        let blocks = (0..pairs)
            .map(|p| {
                let units = (0..units)
                    .map(|g| UnitBlock::new(format!("u{g}"), vec![0.0]).unwrap())
                    .collect();
                PairBlock::new(format!("p{p:05}"), units).unwrap()
            })
            .collect();
        ExperimentData::new(blocks).unwrap()
    }

    #[test]
    fn single_pair_has_one_treated_unit() {
        let data = layout(1, 2);
        for s in 0..50 {
            let a = draw_paired_assignment(&data, Seed::new(s)).unwrap();
            a.check_paired(&data).unwrap();
        }
    }

    #[test]
    fn first_unit_treated_about_half_the_time() {
        // Binomial(10000, 1/2): sd of the fraction is 0.005, the band is 4 sd.
        let data = layout(10_000, 2);
        let a = draw_paired_assignment(&data, Seed::new(20240917)).unwrap();
        let first = a.blocks().iter().filter(|w| w[0]).count() as f64 / 10_000.0;
        assert!((0.48..=0.52).contains(&first), "fraction {first}");
    }

    #[test]
    fn same_seed_same_assignment() {
        let data = layout(40, 2);
        let a = draw_paired_assignment(&data, Seed::new(7)).unwrap();
        let b = draw_paired_assignment(&data, Seed::new(7)).unwrap();
        assert_eq!(a, b);
        let c = draw_paired_assignment(&data, Seed::new(8)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn paired_rejects_strata() {
        let data = layout(3, 3);
        assert!(matches!(
            draw_paired_assignment(&data, Seed::new(1)),
            Err(Error::NotPaired { units: 3, .. })
        ));
    }

    #[test]
    fn stratified_with_two_units_matches_paired_rule() {
        let data = layout(25, 2);
        let a = draw_stratified_assignment(&data, Seed::new(3)).unwrap();
        a.check_paired(&data).unwrap();
        assert_eq!(a, draw_paired_assignment(&data, Seed::new(3)).unwrap());
    }

    #[test]
    fn five_units_two_treated_three_control() {
        let data = layout(200, 5);
        let a = draw_stratified_assignment(&data, Seed::new(11)).unwrap();
        for w in a.blocks() {
            assert_eq!(w.iter().filter(|&&t| t).count(), 2);
            assert_eq!(w.iter().filter(|&&t| !t).count(), 3);
        }
    }

    #[test]
    fn three_units_each_treated_a_third_of_the_time() {
        // 12000 strata of 3: per unit Binomial(12000, 1/3), sd of the
        // frequency is sqrt(2/9/12000) = 0.0043; band of 4 sd.
        let n = 12_000;
        let data = layout(n, 3);
        let a = draw_stratified_assignment(&data, Seed::new(99)).unwrap();
        for g in 0..3 {
            let f = a.blocks().iter().filter(|w| w[g]).count() as f64 / n as f64;
            assert!((f - 1.0 / 3.0).abs() < 4.0 * 0.0043, "unit {g}: {f}");
        }
    }

    #[test]
    fn derived_seeds_differ() {
        let s = Seed::new(42);
        assert_ne!(s.derive(0), s.derive(1));
        assert_ne!(s.derive(0), Seed::new(43).derive(0));
        assert_eq!(s.derive(5), Seed::new(42).derive(5));
    }
}
