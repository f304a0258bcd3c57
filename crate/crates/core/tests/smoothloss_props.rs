mod common;

use fspg::smoothloss::{check_loss, check_loss_sum, smooth_abs, smoothed_local_loss};
use fspg::SmoothingParam;
use proptest::collection::vec;
use proptest::prelude::*;

fn mu(m: f64) -> SmoothingParam {
    SmoothingParam::new(m).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn check_loss_matches_pinball(u in -100.0f64..100.0, tau in 0.01f64..0.99) {
        prop_assert!((check_loss(u, tau).unwrap() - common::pinball(u, tau)).abs() < 1e-12);
    }

    #[test]
    fn smoothed_sum_matches_reference(z in vec(-5.0f64..5.0, 0..40), tau in 0.01f64..0.99, m in 0.001f64..4.0) {
        let got = smoothed_local_loss(&z, tau, mu(m));
        let want = common::smoothed_sum(&z, tau, m);
        prop_assert!((got - want).abs() <= 1e-12 * (1.0 + want.abs()));
    }

    #[test]
    fn sandwich(z in vec(-5.0f64..5.0, 1..40), tau in 0.01f64..0.99, m in 0.001f64..4.0) {
        let gap = smoothed_local_loss(&z, tau, mu(m)) - check_loss_sum(&z, tau);
        prop_assert!(gap >= -1e-12);
        prop_assert!(gap <= z.len() as f64 * m / 4.0 + 1e-12);
    }

    #[test]
    fn smooth_abs_decreases_with_mu(u in -5.0f64..5.0, m1 in 0.001f64..4.0, m2 in 0.001f64..4.0) {
        let (lo, hi) = if m1 <= m2 { (m1, m2) } else { (m2, m1) };
        prop_assert!(smooth_abs(u, mu(lo)) <= smooth_abs(u, mu(hi)) + 1e-15);
        prop_assert!(smooth_abs(u, mu(lo)) >= u.abs());
    }

    #[test]
    fn gradient_matches_finite_differences(seed in 0u64..10_000, m in 1usize..16, p in 1usize..8, tau in 0.05f64..0.95, mu_v in 0.05f64..3.0) {
        let mut r = common::rng(seed);
        let data = common::random_dataset(&mut r, 0, m, p);
        let w: Vec<f64> = (0..=p).map(|_| common::uniform(&mut r, -1.0, 1.0)).collect();
        let g = data.local_gradient(&w, mu(mu_v), tau).unwrap();
        let fd = common::numeric_gradient(|v| data.local_loss(v, mu(mu_v), tau).unwrap(), &w, 1e-6);
        for (a, b) in g.iter().zip(&fd) {
            prop_assert!((a - b).abs() <= 1e-5 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }
}
