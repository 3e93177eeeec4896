//! Property-based checks of the algebraic invariants.

mod common;

use common::*;
use paircluster::data::to_rows;
use paircluster::io::{parse_csv, write_csv};
use paircluster::montecarlo::run_size_experiment;
use paircluster::*;
use proptest::prelude::*;

fn pair_sizes(balanced: bool) -> impl Strategy<Value = Vec<(usize, usize)>> {
    prop::collection::vec((1usize..=10, 1usize..=10), 2..=20).prop_map(move |v| {
        if balanced {
            v.into_iter().map(|(a, _)| (a, a)).collect()
        } else {
            v
        }
    })
}

/// Residual sums the normal equations force to zero, each as (value, scale).
fn orthogonality(data: &ExperimentData, a: &Assignment, fit: &FitResult) -> Vec<f64> {
    let mut sums = vec![0.0; data.n_pairs()];
    let mut treated = 0.0;
    let mut total = 0.0;
    for (p, g, unit, start) in data.units_with_offsets() {
        let s: f64 = fit.residuals[start..start + unit.len()].iter().sum();
        sums[p] += s;
        total += s;
        if a.is_treated(p, g) {
            treated += s;
        }
    }
    match fit.model_kind {
        ModelKind::NoFe => vec![total, treated],
        ModelKind::Fe => {
            sums.push(treated);
            sums
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn within_pair_balance_gives_equal_estimates(sizes in pair_sizes(true), seed in any::<u64>()) {
        let (data, a) = paired_dataset(&mut rng(seed), &sizes);
        let nofe = diff_in_means(&data, &a).unwrap();
        let fe = fe_estimate(&data, &a).unwrap();
        prop_assert!((nofe.tau_hat - fe.tau_hat).abs() <= 1e-12 * (1.0 + nofe.tau_hat.abs()));
    }

    #[test]
    fn balanced_identities(p in 2usize..=20, n in 1usize..=10, seed in any::<u64>()) {
        let (data, a) = paired_dataset(&mut rng(seed), &vec![(n, n); p]);
        let v = VarianceSet::compute(&data, &a).unwrap();
        let spread = pair_sample_variance(&pair_effects(&data, &a).unwrap());
        prop_assert!(rel_err(v.pcve_nofe, v.pcve_fe) <= 1e-12);
        prop_assert!(rel_err(v.pcve_fe, 2.0 * v.ucve_fe) <= 1e-12);
        prop_assert!(rel_err(v.pcve_nofe, spread) <= 1e-12);
    }

    #[test]
    fn residuals_are_orthogonal(sizes in pair_sizes(false), seed in any::<u64>()) {
        let (data, a) = paired_dataset(&mut rng(seed), &sizes);
        let scale = data.outcome_scale() * data.n_total() as f64;
        for fit in [diff_in_means(&data, &a).unwrap(), fe_estimate(&data, &a).unwrap()] {
            for s in orthogonality(&data, &a, &fit) {
                prop_assert!(s.abs() <= 1e-10 * scale, "{} on {:?}", s, fit.model_kind);
            }
        }
    }

    #[test]
    fn fe_estimate_is_weighted_pair_mean(sizes in pair_sizes(false), seed in any::<u64>()) {
        let (data, a) = paired_dataset(&mut rng(seed), &sizes);
        let fe = fe_estimate(&data, &a).unwrap();
        let effects = pair_effects(&data, &a).unwrap();
        prop_assert!((effects.omega_p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!((fe.tau_hat - effects.weighted_mean()).abs() <= 1e-10 * (1.0 + fe.tau_hat.abs()));
    }

    #[test]
    fn ratio_bounds(sizes in pair_sizes(false), seed in any::<u64>()) {
        let (data, a) = paired_dataset(&mut rng(seed), &sizes);
        let fe = fe_estimate(&data, &a).unwrap();
        let v = VarianceSet::compute(&data, &a).unwrap();
        let d = fe_ratio_decomposition(&data, &a, &fe).unwrap();
        prop_assert!(rel_err(d.ratio, v.ucve_fe / v.pcve_fe) <= 1e-10);
        prop_assert!(d.ratio >= 0.5 - 1e-12 && d.ratio <= 1.0 + 1e-12);
        let capped = sizes.iter().all(|&(a, b)| a.max(b) <= 2 * a.min(b));
        if capped {
            prop_assert!(d.ratio <= 5.0 / 9.0 + 1e-12);
        }
    }

    #[test]
    fn t_statistic_is_scale_equivariant(
        tau in -10.0f64..10.0,
        v in 1e-3f64..10.0,
        null in -1.0f64..1.0,
        c in 1e-3f64..1e3,
    ) {
        let a = t_test(tau, v, null, 0.05, Reference::StandardNormal).unwrap();
        let b = t_test(c * tau, c * c * v, c * null, 0.05, Reference::StandardNormal).unwrap();
        prop_assert!((a.t_stat - b.t_stat).abs() <= 1e-9 * (1.0 + a.t_stat.abs()));
        prop_assert!((0.0..=1.0).contains(&a.p_value));
        let wide = t_test(tau, v, null, 0.05, Reference::NormalVarianceTwo).unwrap();
        prop_assert!(wide.p_value >= a.p_value);
    }

    #[test]
    fn variances_scale_quadratically(sizes in pair_sizes(false), seed in any::<u64>(), c in 0.1f64..10.0) {
        let (data, a) = paired_dataset(&mut rng(seed), &sizes);
        let scaled: Vec<f64> = data.outcomes().iter().map(|y| c * y + 3.0).collect();
        let data2 = data.with_outcomes(&scaled).unwrap();
        let v1 = VarianceSet::compute(&data, &a).unwrap();
        let v2 = VarianceSet::compute(&data2, &a).unwrap();
        for e in paircluster::Estimator::ALL {
            prop_assert!(rel_err(v2.get(e), c * c * v1.get(e)) <= 1e-9);
        }
    }

    #[test]
    fn csv_round_trip_and_row_order(sizes in pair_sizes(false), seed in any::<u64>(), shift in any::<u64>()) {
        let (data, a) = paired_dataset(&mut rng(seed), &sizes);
        let mut buf = Vec::new();
        write_csv(&data, &a, &mut buf).unwrap();
        let (data2, a2) = parse_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(&data, &data2);
        prop_assert_eq!(&a, &a2);

        let mut rows = to_rows(&data, &a);
        let k = (shift % rows.len() as u64) as usize;
        rows.rotate_left(k);
        rows.reverse();
        let (data3, a3) = validate_dataset(&rows).unwrap();
        let v1 = VarianceSet::compute(&data, &a).unwrap();
        let v3 = VarianceSet::compute(&data3, &a3).unwrap();
        // Reordering only changes summation order.
        prop_assert!((v1.tau_hat_fe - v3.tau_hat_fe).abs() <= 1e-12 * (1.0 + v1.tau_hat_fe.abs()));
        for e in paircluster::Estimator::ALL {
            prop_assert!(rel_err(v1.get(e), v3.get(e)) <= 1e-12);
        }
    }

    #[test]
    fn stratified_draw_treats_half(g in 2usize..12, strata in 1usize..20, seed in any::<u64>()) {
        let (data, _) = stratified_dataset(&mut rng(seed), strata, g, 2);
        let a = draw_stratified_assignment(&data, Seed::new(seed)).unwrap();
        prop_assert!(a.check_stratified(&data).is_ok());
        for p in 0..data.n_pairs() {
            prop_assert_eq!(a.pair(p).iter().filter(|&&w| w).count(), g / 2);
        }
        prop_assert_eq!(a, draw_stratified_assignment(&data, Seed::new(seed)).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn size_tables_ignore_thread_count(g in 2usize..5, seed in any::<u64>(), threads in 1usize..4) {
        let mut spec = SizeExperimentSpec::new(DgpConfig::new(g, 6, 3), 40, Seed::new(seed));
        let serial = {
            spec.threads = Some(1);
            run_size_experiment(&spec).unwrap()
        };
        spec.threads = Some(threads);
        prop_assert_eq!(serial, run_size_experiment(&spec).unwrap());
    }
}
