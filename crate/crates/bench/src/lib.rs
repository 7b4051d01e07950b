//! Benchmark fixtures shared by the criterion targets.

use std::sync::Arc;

use truncsa_core::fields::PolynomialField;
use truncsa_core::{rule_scalar, schedule_expanding, SaConfig, StateVector};

/// The septic demo with `a_t = 3t` and `U_t = [−log 3t, log 3t]`, started at 0.
pub fn septic_config(horizon: usize, seed: u64) -> SaConfig {
    SaConfig::new(
        StateVector::scalar(0.0).expect("finite"),
        rule_scalar(Arc::new(|t| 3.0 * t as f64)).expect("valid rule"),
        schedule_expanding(Arc::new(|t| (3.0 * t as f64).ln())),
        Arc::new(PolynomialField::septic_demo()),
        horizon,
        seed,
    )
    .expect("valid config")
}
