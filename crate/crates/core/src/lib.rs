//! Truncated Robbins–Monro stochastic approximation with moving random bounds,
//! matrix step-sizes and time-varying regression fields, together with the
//! recursive estimators built on it and numerical diagnostics for convergence,
//! rate and asymptotic linearity.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::sync::Arc;

pub mod diagnostics;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod expr;
pub mod fields;
pub mod noise;
pub mod sa;
pub mod specfun;
pub mod stepsize;
pub mod trajectory;
pub mod truncation;

pub type Vector = nalgebra::DVector<f64>;
pub type Matrix = nalgebra::DMatrix<f64>;

/// A real sequence indexed by the step `t ≥ 1`.
pub type TimeFn = Arc<dyn Fn(usize) -> f64 + Send + Sync>;

pub use error::{Error, Result};
pub use noise::{make_noise_gaussian, make_noise_student_t, rng_from_seed, NoiseSampler, SaRng};
pub use sa::{sa_run, sa_step, FieldModel, History, SaConfig, StateVector, StepRecord};
pub use stepsize::{
    fisher_update, rule_general, rule_optimal_from_jacobian, rule_scalar, FisherAccumulator, StepSizeRule,
};
pub use trajectory::{read_trajectories_csv, write_trajectories_csv, Trajectory};
pub use truncation::{
    admissibility_probe, schedule_expanding, schedule_fixed, schedule_gamma_mt, schedule_shrinking_aux, ConvexSet,
    RadiusRule, TruncationSchedule,
};
