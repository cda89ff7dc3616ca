use std::sync::Arc;

use proptest::prelude::*;
use rand::Rng;

use brier_align::domain::{
    sample_preference_dataset, AlignmentInstance, FeatureMap, FinitePolicyClass, LogLinearClass, LogLinearPolicy,
    ObservedDataset, Policy, Table,
};
use brier_align::eval::{concentrability, chi2_to_reference, duality_gap, ell_value, mix_members, policy_table, value_j};
use brier_align::mechanisms::{exp_mechanism_log_probs, max_abs_log_ratio, rr_keep_probability, Epsilon};
use brier_align::objectives::{f_beta_eta, h_dpo, square_chipo_loss, square_chipo_loss_grad, LossSpec};
use brier_align::presets;
use brier_align::rng::{from_seed, stream, stream_id};
use brier_align::solvers::{fit_finite, fit_loglinear, GDConfig, StepSchedule};

fn random_table<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Table {
    let data: Vec<f64> = (0..rows)
        .flat_map(|_| {
            let v: Vec<f64> = (0..cols).map(|_| rng.random::<f64>() + 0.01).collect();
            let s: f64 = v.iter().sum();
            v.into_iter().map(move |x| x / s)
        })
        .collect();
    Table::new(rows, cols, data).unwrap()
}

fn world(seed: u64) -> AlignmentInstance {
    AlignmentInstance::generate_bt(3, 4, 1.0, &mut from_seed(seed)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bt_preference_is_exactly_antisymmetric(seed in any::<u64>()) {
        let inst = world(seed);
        for x in 0..3 {
            for a in 0..4 {
                for b in 0..4 {
                    prop_assert_eq!(inst.ell(x, a, b), -inst.ell(x, b, a));
                }
            }
        }
    }

    #[test]
    fn datasets_are_reproducible(seed in any::<u64>(), n in 1usize..200) {
        let inst = world(7);
        let a = sample_preference_dataset(&inst, n, &mut from_seed(seed)).unwrap();
        let b = sample_preference_dataset(&inst, n, &mut from_seed(seed)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn randomized_response_is_epsilon_ldp(e in 0.0f64..8.0) {
        let keep = rr_keep_probability(Epsilon::Finite(e)).unwrap();
        // P[z = v | y] / P[z = v | y'] is keep/(1-keep) or its inverse
        let worst = (keep / (1.0 - keep)).ln().abs();
        prop_assert!(worst <= e + 1e-12);
    }

    #[test]
    fn exp_mechanism_is_epsilon_dp(
        scores in prop::collection::vec(0.0f64..200.0, 2..9),
        shifts in prop::collection::vec(-4.0f64..=4.0, 8),
        e in 0.05f64..4.0,
    ) {
        let moved: Vec<f64> = scores.iter().zip(&shifts).map(|(s, d)| (s + d).max(0.0)).collect();
        let p = exp_mechanism_log_probs(&scores, e, 4.0).unwrap();
        let q = exp_mechanism_log_probs(&moved, e, 4.0).unwrap();
        prop_assert!(max_abs_log_ratio(&p, &q) <= e + 1e-9);
    }

    #[test]
    fn dpo_and_selfplay_links_are_antisymmetric(seed in any::<u64>(), beta in 0.05f64..2.0, eta in 0.05f64..2.0) {
        let mut rng = from_seed(seed);
        let (p, q, r) = (random_table(2, 3, &mut rng), random_table(2, 3, &mut rng), random_table(2, 3, &mut rng));
        for x in 0..2 {
            for a in 0..3 {
                for b in 0..3 {
                    prop_assert_eq!(h_dpo(&p, &r, x, a, b).unwrap(), -h_dpo(&p, &r, x, b, a).unwrap());
                    prop_assert_eq!(
                        f_beta_eta(&p, &q, &r, beta, eta, x, a, b).unwrap(),
                        -f_beta_eta(&p, &q, &r, beta, eta, x, b, a).unwrap()
                    );
                }
            }
        }
    }

    #[test]
    fn fit_finite_matches_exhaustive_scan(seed in any::<u64>(), k in 1usize..10, n in 1usize..60) {
        let inst = world(seed);
        let mut rng = from_seed(seed ^ 0xabc);
        let class = FinitePolicyClass::new((0..k).map(|_| random_table(3, 4, &mut rng)).collect()).unwrap();
        let data = ObservedDataset::clean(sample_preference_dataset(&inst, n, &mut rng).unwrap());
        let spec = LossSpec::SquareChipo { beta: 0.5, r_max: 1.0, epsilon: Epsilon::Infinite };
        let (idx, val) = fit_finite(&class, |_, p| square_chipo_loss(p, &inst.pi_ref, &data, &spec)).unwrap();
        let losses: Vec<f64> =
            class.members().iter().map(|p| square_chipo_loss(p, &inst.pi_ref, &data, &spec).unwrap()).collect();
        let best = losses.iter().copied().fold(f64::INFINITY, f64::min);
        prop_assert_eq!(val, best);
        prop_assert_eq!(idx, losses.iter().position(|&l| l == best).unwrap());
    }

    #[test]
    fn concentrability_identity(seed in any::<u64>()) {
        let inst = world(seed);
        let p = random_table(3, 4, &mut from_seed(seed.wrapping_add(1)));
        let d = chi2_to_reference(&p, &inst).unwrap();
        prop_assert!((concentrability(&p, &inst) - (2.0 * d + 1.0)).abs() <= 1e-10);
    }

    #[test]
    fn duality_gap_is_nonnegative_on_the_hull(seed in any::<u64>()) {
        let sp = presets::selfplay_preset().unwrap();
        let mut rng = from_seed(seed);
        let w: Vec<f64> = (0..sp.policies.len()).map(|_| rng.random::<f64>()).collect();
        let total: f64 = w.iter().sum();
        let w: Vec<f64> = w.iter().map(|v| v / total).collect();
        let p = mix_members(&sp.policies, &w);
        prop_assert!(duality_gap(&p, &sp.instance, &sp.policies) >= -1e-9);
    }

    #[test]
    fn mixtures_evaluate_as_averages(seed in any::<u64>(), k in 1usize..6) {
        let inst = world(seed);
        let mut rng = from_seed(seed.wrapping_add(2));
        let members: Vec<Table> = (0..k).map(|_| random_table(3, 4, &mut rng)).collect();
        let other = random_table(3, 4, &mut rng);
        let mix = policy_table(&Policy::Mixture(members.clone()), &inst);
        let avg_j = members.iter().map(|m| value_j(m, &inst).unwrap()).sum::<f64>() / k as f64;
        let avg_l = members.iter().map(|m| ell_value(m, &other, &inst)).sum::<f64>() / k as f64;
        prop_assert!((value_j(&mix, &inst).unwrap() - avg_j).abs() <= 1e-12);
        prop_assert!((ell_value(&mix, &other, &inst) - avg_l).abs() <= 1e-12);
    }

    #[test]
    fn streams_depend_only_on_their_key(master in any::<u64>(), a in any::<u64>(), b in any::<u64>()) {
        prop_assume!(a != b);
        prop_assert_ne!(stream_id(master, a, "bt/data"), stream_id(master, b, "bt/data"));
        prop_assert_ne!(stream_id(master, a, "bt/data"), stream_id(master, a, "bt/channel"));
        // drawing from another cell's stream leaves this one untouched
        let mut first = stream(master, a, "bt/data");
        let x: [u64; 4] = std::array::from_fn(|_| first.random());
        let mut other = stream(master, b, "bt/data");
        let _: u64 = other.random();
        let mut again = stream(master, a, "bt/data");
        let y: [u64; 4] = std::array::from_fn(|_| again.random());
        prop_assert_eq!(x, y);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn gradient_descent_does_not_increase_the_loss(seed in any::<u64>()) {
        let mut rng = from_seed(seed);
        let inst = world(seed);
        let fm = Arc::new(FeatureMap::random(3, 4, 3, &mut rng));
        let class = LogLinearClass::new(fm.clone(), vec![-2.0; 3], vec![2.0; 3]).unwrap();
        let data = ObservedDataset::clean(sample_preference_dataset(&inst, 200, &mut rng).unwrap());
        let spec = LossSpec::SquareChipo { beta: 0.5, r_max: 1.0, epsilon: Epsilon::Infinite };
        let cfg = GDConfig { schedule: StepSchedule::Constant { step: 1e-3 }, max_iters: 200, grad_tol: 1e-8 };
        let res = fit_loglinear(
            &class,
            |t| {
                let pol = LogLinearPolicy::new(fm.clone(), t.to_vec())?;
                square_chipo_loss_grad(&pol, &inst.pi_ref, &data, &spec)
            },
            &cfg,
            &[0.0; 3],
        )
        .unwrap();
        prop_assert!(res.trajectory.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{:?}", res.trajectory);
    }
}
