mod common;

use std::f64::consts::{LN_2, PI};

use common::{digamma_series, trigamma_series, EULER_GAMMA};
use proptest::prelude::*;
use truncsa_core::specfun::{digamma, digamma_with_error, trigamma, trigamma_with_error};

const GRID: [f64; 9] = [0.01, 0.05, 0.1, 0.5, 1.0, 2.0, 6.3, 17.0, 50.0];

#[test]
fn series_oracles_hit_closed_forms() {
    assert!((digamma_series(1.0) + EULER_GAMMA).abs() < 1e-14);
    assert!((digamma_series(0.5) + EULER_GAMMA + 2.0 * LN_2).abs() < 1e-14);
    assert!((trigamma_series(1.0) - PI * PI / 6.0).abs() < 1e-14);
    assert!((trigamma_series(0.5) - PI * PI / 2.0).abs() < 1e-13);
}

#[test]
fn kernels_match_series_on_grid() {
    for &x in &GRID {
        let (d, ds) = (digamma(x).unwrap(), digamma_series(x));
        let (t, ts) = (trigamma(x).unwrap(), trigamma_series(x));
        assert!((d - ds).abs() <= 1e-10, "digamma({x}): {d} vs {ds}");
        assert!((t - ts).abs() <= 1e-10, "trigamma({x}): {t} vs {ts}");
    }
}

#[test]
fn reference_values() {
    assert!((digamma(1.0).unwrap() - (-0.577_215_664_901_532_9)).abs() < 1e-12);
    assert!((trigamma(1.0).unwrap() - 1.644_934_066_8).abs() < 1e-10);
    let t01 = trigamma(0.1).unwrap();
    assert!((t01 - 101.4332).abs() < 1e-4, "{t01}");
}

#[test]
fn bounds_on_grid() {
    for &x in &GRID {
        let t = trigamma(x).unwrap();
        assert!(1.0 / x <= t && t <= (1.0 + x) / (x * x), "x={x}");
        assert!(digamma(x).unwrap() <= x.ln(), "x={x}");
    }
    for x in [0.1, 1.0, 10.0] {
        assert!(digamma(x).unwrap() < x.ln());
    }
}

#[test]
fn error_estimates_cover_actual_error() {
    for i in 0..=50 {
        let x = 10f64.powf(-2.0 + i as f64 * 0.08);
        let d = digamma_with_error(x).unwrap();
        let t = trigamma_with_error(x).unwrap();
        let slack = 1e-14;
        assert!(
            (d.value - digamma_series(x)).abs() <= d.est_abs_error + slack * d.value.abs().max(1.0),
            "x={x}"
        );
        assert!(
            (t.value - trigamma_series(x)).abs() <= t.est_abs_error + slack * t.value.max(1.0),
            "x={x}"
        );
    }
}

proptest! {
    #[test]
    fn kernels_match_series_anywhere(x in 0.01f64..200.0) {
        prop_assert!((digamma(x).unwrap() - digamma_series(x)).abs() <= 1e-10);
        prop_assert!((trigamma(x).unwrap() - trigamma_series(x)).abs() <= 1e-10 * trigamma_series(x).max(1.0));
    }

    // Above the shift threshold both sides use the truncated series, whose
    // error near x = 6 is a few 1e-12.
    #[test]
    fn recurrences_hold(x in 0.01f64..100.0) {
        let d = digamma(x + 1.0).unwrap() - digamma(x).unwrap();
        prop_assert!((d - 1.0 / x).abs() <= 1e-11 * (1.0 / x).max(1.0));
        let t = trigamma(x).unwrap() - trigamma(x + 1.0).unwrap();
        prop_assert!((t - 1.0 / (x * x)).abs() <= 1e-11 * (1.0 / (x * x)).max(1.0));
    }

    #[test]
    fn trigamma_bounds(x in 0.001f64..1000.0) {
        let t = trigamma(x).unwrap();
        prop_assert!(1.0 / x <= t * (1.0 + 1e-14));
        prop_assert!(t <= (1.0 + x) / (x * x) * (1.0 + 1e-14));
        prop_assert!(digamma(x).unwrap() < x.ln());
    }
}
