//! Property tests for the numeric invariants.

use artta_core::dynbn::{symmetric_kl, BNStats, DynBnConfig, DynBnState};
use artta_core::micronet::softmax_rows;
use artta_core::replay::{mixup, MixupParams};
use artta_core::tensor::Tensor2D;
use proptest::prelude::*;

fn stats_strategy(channels: usize) -> impl Strategy<Value = BNStats> {
    (
        proptest::collection::vec(-50.0..50.0f64, channels),
        proptest::collection::vec(1e-4..25.0f64, channels),
    )
        .prop_map(|(mean, var)| BNStats::new(mean, var).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn symmetric_kl_is_symmetric_and_nonnegative(
        a in stats_strategy(4),
        b in stats_strategy(4),
    ) {
        let (dab, _) = symmetric_kl(&a, &b, 1e-5).unwrap();
        let (dba, _) = symmetric_kl(&b, &a, 1e-5).unwrap();
        prop_assert!(dab >= 0.0);
        prop_assert!((dab - dba).abs() <= 1e-12 * dab.abs().max(1.0));
        let (daa, _) = symmetric_kl(&a, &a, 1e-5).unwrap();
        prop_assert_eq!(daa, 0.0);
        if a != b {
            // Distinct distributions must be strictly separated.
            let differs = a.mean.iter().zip(&b.mean).any(|(x, y)| (x - y).abs() > 1e-9)
                || a.var.iter().zip(&b.var).any(|(x, y)| (x - y).abs() > 1e-9);
            if differs {
                prop_assert!(dab > 0.0);
            }
        }
    }

    #[test]
    fn softmax_rows_live_on_the_simplex(
        logits in proptest::collection::vec(-300.0..300.0f64, 1..24),
    ) {
        let t = Tensor2D::new(1, logits.len(), logits).unwrap();
        let p = softmax_rows(&t);
        let sum: f64 = p.row(0).iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-9);
        prop_assert!(p.row(0).iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn mixup_preserves_simplex_and_bounds(
        xt in proptest::collection::vec(0.0..1.0f64, 6),
        xs in proptest::collection::vec(0.0..1.0f64, 6),
        raw_pseudo in proptest::collection::vec(0.01..1.0f64, 8),
        label in 0usize..4,
        lambda in 0.0..=1.0f64,
    ) {
        let x_t = Tensor2D::new(2, 3, xt).unwrap();
        let x_s = Tensor2D::new(2, 3, xs).unwrap();
        let mut pseudo = Tensor2D::new(2, 4, raw_pseudo).unwrap();
        for r in 0..2 {
            let sum: f64 = pseudo.row(r).iter().sum();
            for c in 0..4 {
                let v = pseudo.get(r, c) / sum;
                pseudo.set(r, c, v);
            }
        }
        let mut y_s = Tensor2D::zeros(2, 4);
        y_s.set(0, label, 1.0);
        y_s.set(1, (label + 1) % 4, 1.0);
        let (x, y) = mixup(&x_t, &pseudo, &x_s, &y_s, lambda).unwrap();
        for row in y.iter_rows() {
            let s: f64 = row.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
        }
        for r in 0..2 {
            for c in 0..3 {
                let lo = x_t.get(r, c).min(x_s.get(r, c)) - 1e-12;
                let hi = x_t.get(r, c).max(x_s.get(r, c)) + 1e-12;
                let v = x.get(r, c);
                prop_assert!(v >= lo && v <= hi);
            }
        }
    }

    #[test]
    fn interpolation_endpoints_bitwise_for_any_stats(
        source in stats_strategy(3),
        current in stats_strategy(3),
    ) {
        for init_beta in [0.0, 1.0] {
            let cfg = DynBnConfig { gamma: 1.0, alpha: 0.0, init_beta, eps: 1e-5 };
            let mut state = DynBnState::new(source.clone(), cfg).unwrap();
            let out = state.interpolate(&current).unwrap();
            if init_beta == 0.0 {
                prop_assert_eq!(&out, &source);
            } else {
                prop_assert_eq!(&out, &current);
            }
        }
    }

    #[test]
    fn beta_ema_stays_in_unit_interval_for_any_sequence(
        seeds in proptest::collection::vec((-30.0..30.0f64, 1e-4..9.0f64), 1..40),
        gamma in 0.0..40.0f64,
        alpha in 0.0..=1.0f64,
        init_beta in 0.0..=1.0f64,
    ) {
        let source = BNStats::new(vec![0.0], vec![1.0]).unwrap();
        let cfg = DynBnConfig { gamma, alpha, init_beta, eps: 1e-5 };
        let mut state = DynBnState::new(source, cfg).unwrap();
        for (mean, var) in seeds {
            let current = BNStats::new(vec![mean], vec![var]).unwrap();
            let (_, diag) = state.update(&current).unwrap();
            prop_assert!((0.0..=1.0).contains(&diag.beta_ema));
            prop_assert!((0.0..=1.0).contains(&diag.beta_t));
        }
    }

    #[test]
    fn lambda_draws_stay_in_unit_interval(
        psi in 0.05..8.0f64,
        rho in 0.05..8.0f64,
        seed in 0u64..1000,
    ) {
        use rand::SeedableRng;
        let params = MixupParams::new(psi, rho).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..16 {
            let l = artta_core::replay::sample_lambda(&params, &mut rng);
            prop_assert!((0.0..=1.0).contains(&l));
        }
    }
}
