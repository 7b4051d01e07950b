//! Numerical checks of convergence, rate and asymptotic linearity on simulated paths.
//!
//! Almost-sure and in-probability statements are replaced by finite-sample
//! surrogates: exact identities where the algebra allows, Monte Carlo medians
//! at geometric checkpoints otherwise, and grid probes for drift conditions.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::sa::{FieldModel, History};
use crate::stepsize::StepSizeRule;
use crate::trajectory::Trajectory;
use crate::truncation::{ConvexSet, MEMBERSHIP_TOL};
use crate::{Matrix, Vector};

/// Relative slack allowed between consecutive Monte Carlo medians.
pub const TREND_SLACK: f64 = 0.10;

/// Residuals of `Z_t` against its linear representation
/// `Z_t* = z⁰ + γ_t(z⁰) Σ_{s≤t} ε_s(z⁰)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearityReport {
    pub checkpoints: Vec<usize>,
    pub iterates: Vec<Vector>,
    pub z_star: Vec<Vector>,
    /// `A_t (Z_t − Z_t*)`
    pub residuals: Vec<Vector>,
    pub residual_norm: Vec<f64>,
    pub norming: Vec<Matrix>,
    /// `A_t γ_t(z⁰) A_t`
    pub eta_estimate: Vec<Matrix>,
}

#[derive(Serialize)]
struct LinearityJson<'a> {
    checkpoints: &'a [usize],
    residual_norm: &'a [f64],
    eta_estimate: Vec<Vec<f64>>,
}

fn matrix_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

impl LinearityReport {
    /// `{checkpoints, residual_norm, eta_estimate}` with the η estimate at the last checkpoint.
    pub fn to_json(&self) -> serde_json::Value {
        let eta = self.eta_estimate.last().map(matrix_rows).unwrap_or_default();
        serde_json::to_value(LinearityJson {
            checkpoints: &self.checkpoints,
            residual_norm: &self.residual_norm,
            eta_estimate: eta,
        })
        .expect("plain data serializes")
    }
}

/// `a_t^δ ‖Z_t − z⁰‖²` along a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateReport {
    pub delta: f64,
    pub checkpoints: Vec<usize>,
    pub values: Vec<f64>,
}

/// 1, 2, 5, 10, 20, 50, … up to `horizon`, always ending at `horizon`.
pub fn log_checkpoints(horizon: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut decade = 1usize;
    'outer: loop {
        for k in [1, 2, 5] {
            let c = k * decade;
            if c >= horizon {
                break 'outer;
            }
            out.push(c);
        }
        decade = decade.saturating_mul(10);
    }
    if horizon > 0 {
        out.push(horizon);
    }
    out
}

fn check_checkpoints(checkpoints: &[usize], len: usize) -> Result<()> {
    if checkpoints.is_empty() {
        return Err(Error::param("checkpoints", "need at least one checkpoint"));
    }
    if checkpoints.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::param("checkpoints", "must be strictly increasing"));
    }
    if checkpoints[0] == 0 || *checkpoints.last().unwrap() > len {
        return Err(Error::param(
            "checkpoints",
            format!("must lie in 1..={len}, got {checkpoints:?}"),
        ));
    }
    Ok(())
}

/// Default norming `A_t = √a_t · I` for scalar rules.
pub fn default_norming(rule: &StepSizeRule, dim: usize) -> Option<impl Fn(usize) -> Matrix + '_> {
    rule.scalar_sequence()
        .map(move |a| move |t: usize| Matrix::identity(dim, dim) * a(t).sqrt())
}

/// Compares the trajectory with its linear representation at `checkpoints`.
///
/// `Z_t*` is rebuilt from the recorded noise-at-root draws only, so it does
/// not depend on truncation events along the path.
pub fn linearity_residual(
    traj: &Trajectory,
    field: &dyn FieldModel,
    gamma_at_root: &dyn Fn(usize) -> Result<Matrix>,
    norming: &dyn Fn(usize) -> Matrix,
    checkpoints: &[usize],
) -> Result<LinearityReport> {
    if !traj.has_root_noise() {
        return Err(Error::MissingRootNoise);
    }
    check_checkpoints(checkpoints, traj.len())?;
    let m = traj.dim();
    let root = field.root().as_vector();
    if root.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            found: root.len(),
        });
    }
    let mut report = LinearityReport {
        checkpoints: checkpoints.to_vec(),
        iterates: Vec::with_capacity(checkpoints.len()),
        z_star: Vec::with_capacity(checkpoints.len()),
        residuals: Vec::with_capacity(checkpoints.len()),
        residual_norm: Vec::with_capacity(checkpoints.len()),
        norming: Vec::with_capacity(checkpoints.len()),
        eta_estimate: Vec::with_capacity(checkpoints.len()),
    };
    let mut sum = Vector::zeros(m);
    let mut next = 0;
    for t in 1..=traj.len() {
        let e0 = traj.root_noise(t).expect("checked above");
        for (s, e) in sum.iter_mut().zip(e0) {
            *s += e;
        }
        if t != checkpoints[next] {
            continue;
        }
        let gamma = gamma_at_root(t)?;
        let a = norming(t);
        let z = traj.iterate_vector(t);
        let z_star = root + &gamma * &sum;
        let residual = &a * (&z - &z_star);
        report.residual_norm.push(residual.norm());
        report.eta_estimate.push(&a * &gamma * &a);
        report.iterates.push(z);
        report.z_star.push(z_star);
        report.residuals.push(residual);
        report.norming.push(a);
        next += 1;
        if next == checkpoints.len() {
            break;
        }
    }
    Ok(report)
}

/// `a_t^δ ‖Z_t − z⁰‖²` at `checkpoints`. A diverging sequence is reported, not an error.
pub fn rate_tracker(
    traj: &Trajectory,
    z0: &Vector,
    a: &dyn Fn(usize) -> f64,
    delta: f64,
    checkpoints: &[usize],
) -> Result<RateReport> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::param("delta", format!("must lie in (0, 1], got {delta}")));
    }
    check_checkpoints(checkpoints, traj.len())?;
    let values = checkpoints
        .iter()
        .map(|&t| a(t).powf(delta) * (traj.iterate_vector(t) - z0).norm_squared())
        .collect();
    Ok(RateReport {
        delta,
        checkpoints: checkpoints.to_vec(),
        values,
    })
}

/// Worst case of `(z − z⁰)ᵀ R_t(z)` over a grid; `≤ 0` means the drift points inward everywhere.
pub fn probe_drift_sign(field: &dyn FieldModel, z0: &Vector, t: usize, grid: &[Vector]) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::param("grid", "must be nonempty"));
    }
    let h = History::empty(z0.len());
    Ok(grid
        .iter()
        .map(|z| (z - z0).dot(&field.regression(t, z, &h)))
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Outcome of [`probe_drift_strength`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DriftStrength {
    /// `min −(z − z⁰)ᵀ R_t(z)` over grid points in the annulus and in `U_{t−1}`.
    pub value: f64,
    /// Set when no annulus point lies in `U_{t−1}`; `value` is then the conventional 1.
    pub empty_set: bool,
}

/// Surrogate for `inf_{ε ≤ ‖z−z⁰‖ ≤ 1/ε, z ∈ U_{t−1}} −(z − z⁰)ᵀ R_t(z)`.
pub fn probe_drift_strength(
    field: &dyn FieldModel,
    z0: &Vector,
    t: usize,
    eps: f64,
    grid: &[Vector],
    set: &ConvexSet,
) -> Result<DriftStrength> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::param("eps", format!("must lie in (0, 1), got {eps}")));
    }
    let (inner, outer) = (eps, 1.0 / eps);
    let annulus: Vec<&Vector> = grid
        .iter()
        .filter(|z| {
            let r = (*z - z0).norm();
            r >= inner * (1.0 - 1e-12) && r <= outer * (1.0 + 1e-12)
        })
        .collect();
    if annulus.is_empty() {
        return Err(Error::EmptyAnnulus { inner, outer });
    }
    let h = History::empty(z0.len());
    let mut best = f64::INFINITY;
    let mut any = false;
    for z in annulus.into_iter().filter(|z| set.contains(z, MEMBERSHIP_TOL)) {
        any = true;
        best = best.min(-(z - z0).dot(&field.regression(t, z, &h)));
    }
    Ok(if any {
        DriftStrength {
            value: best,
            empty_set: false,
        }
    } else {
        DriftStrength {
            value: 1.0,
            empty_set: true,
        }
    })
}

/// Fit of `‖R(z⁰ + u) + u‖ ≈ C ‖u‖^p` over shrinking radii.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LocalExpansion {
    /// `None` when every residual sits at rounding level.
    pub exponent: Option<f64>,
    pub constant: Option<f64>,
    pub exact_linear: bool,
}

impl LocalExpansion {
    /// Whether the remainder is `O(‖u‖^{1+ε})`.
    pub fn passes(&self, eps: f64) -> bool {
        self.exact_linear || self.exponent.is_some_and(|p| p >= 1.0 + eps)
    }
}

/// Log-log regression of the linearisation remainder along `direction` (default `e₁`).
///
/// Assumes `R` is scaled so that `R'(z⁰) = −I`.
pub fn probe_local_expansion(
    regression: &dyn Fn(&Vector) -> Vector,
    z0: &Vector,
    radii: &[f64],
    direction: Option<&Vector>,
) -> Result<LocalExpansion> {
    if radii.len() < 2 {
        return Err(Error::param("radii", "need at least two radii"));
    }
    if radii.iter().any(|r| !(*r > 0.0)) || radii.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::param("radii", "must be positive and strictly decreasing"));
    }
    let dir = match direction {
        Some(d) if d.norm() > 0.0 => d / d.norm(),
        Some(_) => return Err(Error::param("direction", "must be nonzero")),
        None => {
            let mut e = Vector::zeros(z0.len());
            e[0] = 1.0;
            e
        }
    };
    let mut pts = Vec::with_capacity(radii.len());
    let mut all_floor = true;
    for &r in radii {
        let u = &dir * r;
        let out = regression(&(z0 + &u));
        let rem = (&out + &u).norm();
        let floor = 64.0 * f64::EPSILON * (r + out.norm() + z0.norm());
        if rem > floor {
            all_floor = false;
        }
        pts.push((r.ln(), rem));
    }
    if all_floor {
        return Ok(LocalExpansion {
            exponent: None,
            constant: None,
            exact_linear: true,
        });
    }
    let usable: Vec<(f64, f64)> = pts
        .into_iter()
        .filter(|&(_, rem)| rem > 0.0)
        .map(|(lr, rem)| (lr, rem.ln()))
        .collect();
    if usable.len() < 2 {
        return Ok(LocalExpansion {
            exponent: None,
            constant: None,
            exact_linear: true,
        });
    }
    let n = usable.len() as f64;
    let mx = usable.iter().map(|p| p.0).sum::<f64>() / n;
    let my = usable.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = usable.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = usable.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    Ok(LocalExpansion {
        exponent: Some(slope),
        constant: Some((my - slope * mx).exp()),
        exact_linear: false,
    })
}

/// Running weighted means `(Σ_{i≤k} a_i ν_i) / (Σ_{i≤k} a_i)`.
///
/// Prefixes with zero total weight yield NaN.
pub fn toeplitz_average(weights: &[f64], values: &[f64]) -> Result<Vec<f64>> {
    if weights.len() != values.len() {
        return Err(Error::DimensionMismatch {
            expected: weights.len(),
            found: values.len(),
        });
    }
    if let Some(w) = weights.iter().find(|w| !(**w >= 0.0)) {
        return Err(Error::param("weights", format!("must be nonnegative, found {w}")));
    }
    if !(weights.iter().sum::<f64>() > 0.0) {
        return Err(Error::param("weights", "total weight must be positive"));
    }
    let (mut num, mut den) = (0.0, 0.0);
    Ok(weights
        .iter()
        .zip(values)
        .map(|(&a, &v)| {
            num += a * v;
            den += a;
            if den > 0.0 {
                num / den
            } else {
                f64::NAN
            }
        })
        .collect())
}

/// Median of finite values (NaN for an empty input).
pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

/// Linear-interpolation quantile (type 7).
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// `values[k+1] ≤ (1 + slack)·values[k]` for every consecutive pair from index `start`.
pub fn nonincreasing_with_slack(values: &[f64], slack: f64, start: usize) -> bool {
    values
        .iter()
        .skip(start)
        .collect::<Vec<_>>()
        .windows(2)
        .all(|w| *w[1] <= (1.0 + slack) * *w[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{ClosureField, GammaShapeField, LinearField, PolynomialField};
    use crate::noise::NoiseSampler;
    use crate::sa::StateVector;
    use crate::truncation::ConvexSet;
    use std::sync::Arc;

    fn scalar_grid(lo: f64, hi: f64, n: usize) -> Vec<Vector> {
        (0..n)
            .map(|i| Vector::from_element(1, lo + (hi - lo) * i as f64 / (n - 1) as f64))
            .collect()
    }

    #[test]
    fn checkpoints_are_log_spaced() {
        assert_eq!(log_checkpoints(100), vec![1, 2, 5, 10, 20, 50, 100]);
        assert_eq!(log_checkpoints(30), vec![1, 2, 5, 10, 20, 30]);
        assert_eq!(log_checkpoints(1), vec![1]);
    }

    #[test]
    fn drift_sign_on_septic_field() {
        let poly = PolynomialField::septic_demo();
        let z0 = Vector::from_element(1, 2.0);
        for t in [1usize, 10, 1000] {
            let w = (3.0 * t as f64).ln();
            let grid = scalar_grid(-w, w, 1000);
            assert!(probe_drift_sign(&poly, &z0, t, &grid).unwrap() <= 0.0);
        }
        assert_eq!(probe_drift_sign(&poly, &z0, 1, std::slice::from_ref(&z0)).unwrap(), 0.0);
        assert!(probe_drift_sign(&poly, &z0, 1, &[]).is_err());
    }

    #[test]
    fn repelling_root_fails_sign_probe() {
        let f = ClosureField::new(
            StateVector::scalar(0.0).unwrap(),
            Arc::new(|_, z: &Vector| z.clone()),
            NoiseSampler::Zero,
        );
        let grid = scalar_grid(-1.0, 1.0, 11);
        assert!(probe_drift_sign(&f, &Vector::zeros(1), 1, &grid).unwrap() > 0.0);
    }

    #[test]
    fn drift_strength_examples() {
        let lin = LinearField::new(StateVector::scalar(0.0).unwrap(), NoiseSampler::Zero);
        let z0 = Vector::zeros(1);
        let grid = scalar_grid(-10.0, 10.0, 2001);
        let ds = probe_drift_strength(&lin, &z0, 1, 0.1, &grid, &ConvexSet::WholeSpace).unwrap();
        assert!((ds.value - 0.01).abs() < 1e-12);
        assert!(!ds.empty_set);

        let far = ConvexSet::interval(50.0, 60.0).unwrap();
        let ds = probe_drift_strength(&lin, &z0, 1, 0.1, &grid, &far).unwrap();
        assert_eq!(
            ds,
            DriftStrength {
                value: 1.0,
                empty_set: true
            }
        );

        let tiny = scalar_grid(-0.01, 0.01, 5);
        assert!(matches!(
            probe_drift_strength(&lin, &z0, 1, 0.1, &tiny, &ConvexSet::WholeSpace),
            Err(Error::EmptyAnnulus { .. })
        ));

        let poly = PolynomialField::septic_demo();
        let pz0 = Vector::from_element(1, 2.0);
        let grid = scalar_grid(-3.0, 5.0, 1601);
        let set = ConvexSet::interval(-(3.0f64 * 100.0).ln(), (3.0f64 * 100.0).ln()).unwrap();
        let ds = probe_drift_strength(&poly, &pz0, 100, 0.5, &grid, &set).unwrap();
        assert!(ds.value > 0.0 && !ds.empty_set);
    }

    #[test]
    fn local_expansion_fits() {
        let z0 = Vector::from_element(1, 1.0);
        let radii: Vec<f64> = (1..=6).map(|k| 10f64.powf(-(k as f64) * 0.5)).collect();
        let quad = |z: &Vector| {
            let u = z[0] - 1.0;
            Vector::from_element(1, -u + u * u)
        };
        let fit = probe_local_expansion(&quad, &z0, &radii, None).unwrap();
        assert!((fit.exponent.unwrap() - 2.0).abs() < 1e-6);
        assert!(fit.passes(0.5));

        let lin = |z: &Vector| Vector::from_element(1, -(z[0] - 1.0));
        let fit = probe_local_expansion(&lin, &z0, &radii, None).unwrap();
        assert!(fit.exact_linear && fit.passes(0.9));

        assert!(probe_local_expansion(&lin, &z0, &[0.1, 0.2], None).is_err());
    }

    #[test]
    fn gamma_field_remainder_is_quadratic() {
        for theta in [0.1, 0.5, 2.0] {
            let f = GammaShapeField::new(theta).unwrap();
            let r = |z: &Vector| Vector::from_element(1, f.eval(z[0]));
            let radii: Vec<f64> = (0..8).map(|k| theta * 0.3 * 0.5f64.powi(k)).collect();
            let fit = probe_local_expansion(&r, &Vector::from_element(1, theta), &radii, None).unwrap();
            let p = fit.exponent.unwrap();
            assert!((p - 2.0).abs() < 0.1, "theta {theta}: p = {p}");
        }
    }

    #[test]
    fn toeplitz_examples() {
        assert!(toeplitz_average(&[1.0, 2.0, 3.0], &[4.0; 3])
            .unwrap()
            .iter()
            .all(|&v| (v - 4.0).abs() < 1e-15));
        assert!(toeplitz_average(&[1.0, -1.0], &[1.0, 1.0]).is_err());
        assert!(toeplitz_average(&[0.0, 0.0], &[1.0, 1.0]).is_err());
        let r = toeplitz_average(&[0.0, 1.0], &[7.0, 3.0]).unwrap();
        assert!(r[0].is_nan() && r[1] == 3.0);
    }

    #[test]
    fn trend_and_quantiles() {
        assert!(nonincreasing_with_slack(&[3.0, 3.2, 2.0], 0.1, 0));
        assert!(!nonincreasing_with_slack(&[3.0, 3.4, 2.0], 0.1, 0));
        assert!(nonincreasing_with_slack(&[1.0, 9.0, 3.0, 3.1], 0.1, 2));
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.25), 2.0);
    }

    #[test]
    fn rate_rejects_bad_delta() {
        let init = StateVector::scalar(0.0).unwrap();
        let mut traj = Trajectory::with_capacity(&init, 1, false);
        traj.push(&crate::sa::StepRecord {
            t: 1,
            proposed: Vector::zeros(1),
            iterate: Vector::zeros(1),
            noise: Vector::zeros(1),
            root_noise: None,
            truncated: false,
            step: Matrix::identity(1, 1),
        });
        let a = |t: usize| t as f64;
        assert!(rate_tracker(&traj, &Vector::zeros(1), &a, 0.0, &[1]).is_err());
        assert!(rate_tracker(&traj, &Vector::zeros(1), &a, 1.5, &[1]).is_err());
        assert!(rate_tracker(&traj, &Vector::zeros(1), &a, 1.0, &[1]).is_ok());
        let lin = LinearField::new(init, NoiseSampler::Zero);
        let g = |_t: usize| Ok(Matrix::identity(1, 1));
        let n = |_t: usize| Matrix::identity(1, 1);
        assert!(matches!(
            linearity_residual(&traj, &lin, &g, &n, &[1]),
            Err(Error::MissingRootNoise)
        ));
    }
}
