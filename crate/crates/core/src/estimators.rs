//! Recursive estimators: the general linear procedure, recursive least squares
//! for AR(1), truncated recursive M-estimation and the Gamma-shape recursive MLE.
//!
//! Every estimator consumes one observation per call and never refits on a batch.

use std::io::Read;
use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::noise::SaRng;
use crate::sa::{History, StateVector};
use crate::specfun::{digamma, trigamma};
use crate::stepsize::{invert_guarded, StepSizeRule};
use crate::truncation::{TruncationSchedule, MEMBERSHIP_TOL};
use crate::{Matrix, Vector};

/// Where the gain `γ_t` of a linear procedure comes from.
#[derive(Clone, Debug)]
pub enum LinearGain {
    /// A fixed rule evaluated at the previous estimate.
    Rule(StepSizeRule),
    /// `γ_t⁻¹ = γ_{t−1}⁻¹ + β_t`, the canonical choice `Δγ_t⁻¹ = β_t`.
    AccumulateBeta,
}

pub type BetaFn<O> = Arc<dyn Fn(usize, &O) -> Matrix + Send + Sync>;
pub type HFn<O> = Arc<dyn Fn(usize, &O) -> Vector + Send + Sync>;

/// `Z_t = Z_{t−1} + γ_t (h_t − β_t Z_{t−1})` with predictable PSD `β_t`.
#[derive(Clone)]
pub struct LinearProcedure<O> {
    pub gain: LinearGain,
    pub beta: BetaFn<O>,
    pub h: HFn<O>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearState {
    pub z: Vector,
    /// Running `γ_t⁻¹`; required for [`LinearGain::AccumulateBeta`].
    pub gamma_inv: Option<Matrix>,
}

impl LinearState {
    pub fn new(z: Vector) -> Self {
        Self { z, gamma_inv: None }
    }

    pub fn with_gamma_inv(z: Vector, gamma0_inv: Matrix) -> Self {
        Self {
            z,
            gamma_inv: Some(gamma0_inv),
        }
    }
}

pub fn linear_step<O>(proc: &LinearProcedure<O>, state: &LinearState, t: usize, obs: &O) -> Result<LinearState> {
    let m = state.z.len();
    let beta = (proc.beta)(t, obs);
    let h = (proc.h)(t, obs);
    if beta.shape() != (m, m) || h.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            found: if h.len() != m { h.len() } else { beta.nrows() },
        });
    }
    let sym = (&beta + beta.transpose()) * 0.5;
    if m > 0 && sym.symmetric_eigenvalues().min() < -MEMBERSHIP_TOL * beta.amax().max(1.0) {
        return Err(Error::InvalidMatrix(format!("beta_{t} is not positive semi-definite")));
    }
    let (gamma, gamma_inv) = match &proc.gain {
        LinearGain::Rule(rule) => (rule.gamma_at(t, &state.z)?, state.gamma_inv.clone()),
        LinearGain::AccumulateBeta => {
            let prev = state
                .gamma_inv
                .as_ref()
                .ok_or_else(|| Error::Config("accumulating gain needs an initial gamma_inv".into()))?;
            let inv = prev + &beta;
            (invert_guarded(&inv, t)?, Some(inv))
        }
    };
    let z = &state.z + gamma * (h - beta * &state.z);
    Ok(LinearState { z, gamma_inv })
}

/// Recursive least-squares state for `X_t = θ X_{t−1} + ξ_t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ar1State {
    pub theta_hat: f64,
    /// `Î_t = Î_0 + Σ X_{s−1}²`
    pub info: f64,
    pub last_x: f64,
}

impl Default for Ar1State {
    fn default() -> Self {
        Self {
            theta_hat: 0.0,
            info: 1.0,
            last_x: 0.0,
        }
    }
}

impl Ar1State {
    pub fn new(theta_hat: f64, info: f64, last_x: f64) -> Result<Self> {
        if !(info > 0.0 && info.is_finite()) {
            return Err(Error::param(
                "info",
                format!("initial information must be positive, got {info}"),
            ));
        }
        Ok(Self {
            theta_hat,
            info,
            last_x,
        })
    }
}

pub fn ar1_step(state: &Ar1State, x_new: f64) -> Ar1State {
    let x_prev = state.last_x;
    let info = state.info + x_prev * x_prev;
    let theta_hat = state.theta_hat + x_prev * (x_new - state.theta_hat * x_prev) / info;
    Ar1State {
        theta_hat,
        info,
        last_x: x_new,
    }
}

/// Closed-form least squares with prior weight: `(Î_0 θ̂_0 + Σ X_{s−1}X_s) / (Î_0 + Σ X_{s−1}²)`.
///
/// `xs[0]` is `X_0`.
pub fn ar1_batch_estimate(xs: &[f64], theta0: f64, info0: f64) -> f64 {
    let (mut num, mut den) = (info0 * theta0, info0);
    for w in xs.windows(2) {
        num += w[0] * w[1];
        den += w[0] * w[0];
    }
    num / den
}

/// `X_0 = x0`, `X_t = θ X_{t−1} + ξ_t` with standard normal `ξ`; returns `X_0..X_n`.
pub fn simulate_ar1(theta: f64, x0: f64, n: usize, rng: &mut SaRng) -> Vec<f64> {
    let mut xs = Vec::with_capacity(n + 1);
    xs.push(x0);
    let mut x = x0;
    for _ in 0..n {
        let xi: f64 = StandardNormal.sample(rng);
        x = theta * x + xi;
        xs.push(x);
    }
    xs
}

/// One truncated M-estimation step `θ̂_t = Φ_{U_t}(θ̂_{t−1} + γ_t(θ̂_{t−1}) ψ_t(θ̂_{t−1}))`.
///
/// Returns the new estimate and whether the projection moved the proposal.
pub fn m_estimator_step<O>(
    psi: &dyn Fn(usize, &O, &Vector) -> Vector,
    rule: &StepSizeRule,
    schedule: &TruncationSchedule,
    state: &StateVector,
    t: usize,
    obs: &O,
) -> Result<(StateVector, bool)> {
    let z = state.as_vector();
    let gamma = rule.gamma_at(t, z)?;
    let score = psi(t, obs, z);
    if score.len() != z.len() {
        return Err(Error::DimensionMismatch {
            expected: z.len(),
            found: score.len(),
        });
    }
    let proposed = z + gamma * score;
    if proposed.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite {
            t,
            what: "proposed point",
            state: z.iter().copied().collect(),
        });
    }
    let set = schedule.set_at(t, &History::empty(z.len()))?;
    let next = set.project(&proposed);
    let truncated = next != proposed;
    Ok((StateVector::from_vector(next)?, truncated))
}

/// Recursive MLE of the Gamma(θ, 1) shape.
#[derive(Debug, Clone)]
pub struct GammaMleState {
    pub theta_hat: f64,
    /// Number of observations consumed.
    pub t: usize,
    pub schedule: TruncationSchedule,
    pub last_truncated: bool,
}

impl GammaMleState {
    pub fn new(theta0: f64, schedule: TruncationSchedule) -> Result<Self> {
        if !(theta0 > 0.0 && theta0.is_finite()) {
            return Err(Error::param("theta0", format!("must be positive, got {theta0}")));
        }
        Ok(Self {
            theta_hat: theta0,
            t: 0,
            schedule,
            last_truncated: false,
        })
    }
}

/// `θ̂_t = Φ_{U_t}(θ̂_{t−1} + [t ψ'(θ̂_{t−1})]⁻¹ (log X_t − ψ(θ̂_{t−1})))`.
pub fn gamma_mle_step(state: &GammaMleState, x_new: f64) -> Result<GammaMleState> {
    if !(x_new > 0.0 && x_new.is_finite()) {
        return Err(Error::param(
            "x",
            format!("Gamma observations must be positive, got {x_new}"),
        ));
    }
    gamma_mle_step_log(state, x_new.ln())
}

/// [`gamma_mle_step`] taking `log X_t`, for observations too small to store as `f64`.
pub fn gamma_mle_step_log(state: &GammaMleState, log_x: f64) -> Result<GammaMleState> {
    if !log_x.is_finite() {
        return Err(Error::param("log_x", format!("must be finite, got {log_x}")));
    }
    let t = state.t + 1;
    let th = state.theta_hat;
    let proposed = th + (log_x - digamma(th)?) / (t as f64 * trigamma(th)?);
    if !proposed.is_finite() {
        return Err(Error::NonFinite {
            t,
            what: "proposed point",
            state: vec![th],
        });
    }
    let set = state.schedule.set_at(t, &History::empty(1))?;
    let next = set.project(&Vector::from_element(1, proposed))[0];
    if !(next > 0.0) {
        return Err(Error::Domain {
            function: "gamma shape estimate",
            x: next,
        });
    }
    Ok(GammaMleState {
        theta_hat: next,
        t,
        schedule: state.schedule.clone(),
        last_truncated: next != proposed,
    })
}

/// Gamma(θ, 1) score `log x − ψ(θ)`.
pub fn gamma_score(log_x: f64, theta: f64) -> f64 {
    log_x - crate::specfun::digamma_unchecked(theta)
}

/// Reads observations with schema `t,x` (header required), in file order.
pub fn read_observations_csv<R: Read>(input: R) -> Result<Vec<(usize, f64)>> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    if headers.iter().map(str::trim).collect::<Vec<_>>() != ["t", "x"] {
        return Err(Error::Config(format!(
            "observation CSV must have header `t,x`, found {headers:?}"
        )));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let t = rec[0]
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::Config(format!("bad step `{}`", &rec[0])))?;
        let x = rec[1]
            .trim()
            .parse::<f64>()
            .map_err(|_| Error::Config(format!("bad observation `{}`", &rec[1])))?;
        out.push((t, x));
    }
    Ok(out)
}
