mod common;

use fspg::{PenaltyConfig, PenaltyKind};
use proptest::prelude::*;

fn penalty_strategy() -> impl Strategy<Value = PenaltyConfig> {
    prop_oneof![
        (0.001f64..2.0, 1.05f64..8.0).prop_map(|(l, g)| PenaltyConfig::mcp(l, g).unwrap()),
        (0.001f64..2.0, 2.05f64..8.0).prop_map(|(l, g)| PenaltyConfig::scad(l, g).unwrap()),
        (0.001f64..2.0).prop_map(|l| PenaltyConfig::l1(l).unwrap()),
    ]
}

fn admissible_t(pen: &PenaltyConfig, frac: f64) -> f64 {
    match pen.prox_step_limit() {
        Some(lim) => frac * lim,
        None => frac * 5.0,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn value_matches_quadrature(pen in penalty_strategy(), w in -20.0f64..20.0) {
        let q = common::penalty_by_quadrature(pen.kind(), pen.lambda(), pen.gamma(), w);
        prop_assert!((pen.value(w) - q).abs() <= 1e-10 * (1.0 + q.abs()));
    }

    #[test]
    fn prox_matches_search(pen in penalty_strategy(), a in -10.0f64..10.0, frac in 0.01f64..0.9) {
        let t = admissible_t(&pen, frac);
        let got = pen.prox(a, t).unwrap();
        let want = common::prox_by_search(&pen, a, t);
        prop_assert!((got - want).abs() < 1e-6, "prox({a}, {t}) = {got}, search {want}");
    }

    #[test]
    fn prox_is_monotone_and_odd(pen in penalty_strategy(), a in -10.0f64..10.0, b in -10.0f64..10.0, frac in 0.01f64..0.95) {
        let t = admissible_t(&pen, frac);
        let (pa, pb) = (pen.prox(a, t).unwrap(), pen.prox(b, t).unwrap());
        if a <= b {
            prop_assert!(pa <= pb + 1e-12);
        }
        prop_assert_eq!(pen.prox(-a, t).unwrap(), -pa);
        prop_assert!(pa.abs() <= a.abs() + 1e-12);
    }

    #[test]
    fn prox_satisfies_optimality(pen in penalty_strategy(), a in -10.0f64..10.0, frac in 0.01f64..0.95) {
        // a - prox(a) must lie in t * subdifferential at prox(a)
        let t = admissible_t(&pen, frac);
        let w = pen.prox(a, t).unwrap();
        let (lo, hi) = pen.subdifferential(w);
        let r = (a - w) / t;
        prop_assert!(r >= lo - 1e-9 && r <= hi + 1e-9, "r = {r} not in [{lo}, {hi}]");
    }

    #[test]
    fn weak_convexity(pen in penalty_strategy(), x in -10.0f64..10.0, y in -10.0f64..10.0, s in 0.0f64..1.0) {
        // g + rho/2 w^2 is convex along any segment
        let rho = pen.rho().value();
        let h = |w: f64| pen.value(w) + 0.5 * rho * w * w;
        let mid = s * x + (1.0 - s) * y;
        prop_assert!(h(mid) <= s * h(x) + (1.0 - s) * h(y) + 1e-10);
    }

    #[test]
    fn value_nonnegative_and_bounded(pen in penalty_strategy(), w in -50.0f64..50.0) {
        let v = pen.value(w);
        prop_assert!(v >= 0.0);
        prop_assert!(v <= pen.lambda() * w.abs() + 1e-15);
        if pen.kind() == PenaltyKind::Mcp {
            prop_assert!(v <= pen.gamma() * pen.lambda().powi(2) / 2.0 + 1e-15);
        }
    }
}

#[test]
fn prox_rejects_steps_past_the_limit() {
    let mcp = PenaltyConfig::mcp(0.055, 2.4).unwrap();
    assert!(matches!(mcp.prox(1.0, 2.4), Err(fspg::Error::Convexity { .. })));
    let scad = PenaltyConfig::scad(0.055, 3.1).unwrap();
    assert!(scad.prox(1.0, 2.09).is_ok());
    assert!(scad.prox(1.0, 2.1).is_err());
}
