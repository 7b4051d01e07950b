//! Built-in regression fields.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::noise::{sample_log_gamma, NoiseSampler, SaRng};
use crate::sa::{FieldModel, History, StateVector};
use crate::specfun::{digamma, digamma_unchecked, trigamma, trigamma_unchecked};
use crate::{Matrix, Vector};

/// Coefficients `C_1..C_7` of `R(z) = −(z−z⁰)⁷ + 2(z−z⁰)⁶ − 5(z−z⁰)⁵ − 3(z−z⁰)`.
pub const SEPTIC_COEFFS: [f64; 7] = [3.0, 0.0, 0.0, 0.0, 5.0, -2.0, 1.0];

fn additive_draw(noise: &NoiseSampler, m: usize, rng: &mut SaRng) -> Vector {
    Vector::from_fn(m, |_, _| noise.sample(rng))
}

/// `R(u) = −(u − z⁰)` with state-free additive noise.
#[derive(Debug, Clone)]
pub struct LinearField {
    root: StateVector,
    noise: NoiseSampler,
}

impl LinearField {
    pub fn new(root: StateVector, noise: NoiseSampler) -> Self {
        Self { root, noise }
    }
}

impl FieldModel for LinearField {
    fn dim(&self) -> usize {
        self.root.dim()
    }

    fn root(&self) -> &StateVector {
        &self.root
    }

    fn regression(&self, _t: usize, z: &Vector, _h: &History<'_>) -> Vector {
        self.root.as_vector() - z
    }

    fn draw(&self, _t: usize, rng: &mut SaRng) -> Vector {
        additive_draw(&self.noise, self.dim(), rng)
    }

    fn noise(&self, _t: usize, _z: &Vector, draw: &Vector) -> Vector {
        draw.clone()
    }

    fn jacobian(&self, _t: usize, z: &Vector) -> Option<Matrix> {
        Some(-Matrix::identity(z.len(), z.len()))
    }
}

/// Scalar polynomial field `R(z) = −Σ_{i=1}^{l} C_i (z − z⁰)^i` with additive noise.
#[derive(Debug, Clone)]
pub struct PolynomialField {
    root: StateVector,
    coeffs: Vec<f64>,
    noise: NoiseSampler,
}

impl PolynomialField {
    /// `coeffs[i]` multiplies `(z − z⁰)^{i+1}`.
    pub fn new(root: f64, coeffs: Vec<f64>, noise: NoiseSampler) -> Result<Self> {
        if coeffs.is_empty() || coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::param("coefficients", "need at least one finite coefficient"));
        }
        Ok(Self {
            root: StateVector::scalar(root)?,
            coeffs,
            noise: noise.validated()?,
        })
    }

    /// `R(u) = −(u−z⁰)⁷ + 2(u−z⁰)⁶ − 5(u−z⁰)⁵ − 3(u−z⁰)` with root 2 and Student-t(7) noise.
    pub fn septic_demo() -> Self {
        Self::new(2.0, SEPTIC_COEFFS.to_vec(), NoiseSampler::StudentT { df: 7.0 }).expect("valid constants")
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coeffs
    }

    /// Noise-free regression value at a scalar point.
    pub fn eval(&self, z: f64) -> f64 {
        let u = z - self.root[0];
        // Horner on u·(C_1 + C_2 u + …)
        let mut acc = 0.0;
        for &c in self.coeffs.iter().rev() {
            acc = acc * u + c;
        }
        -acc * u
    }

    pub fn derivative(&self, z: f64) -> f64 {
        let u = z - self.root[0];
        let mut acc = 0.0;
        for (i, &c) in self.coeffs.iter().enumerate().rev() {
            acc = acc * u + (i as f64 + 1.0) * c;
        }
        -acc
    }
}

impl FieldModel for PolynomialField {
    fn dim(&self) -> usize {
        1
    }

    fn root(&self) -> &StateVector {
        &self.root
    }

    fn regression(&self, _t: usize, z: &Vector, _h: &History<'_>) -> Vector {
        Vector::from_element(1, self.eval(z[0]))
    }

    fn draw(&self, _t: usize, rng: &mut SaRng) -> Vector {
        additive_draw(&self.noise, 1, rng)
    }

    fn noise(&self, _t: usize, _z: &Vector, draw: &Vector) -> Vector {
        draw.clone()
    }

    fn jacobian(&self, _t: usize, z: &Vector) -> Option<Matrix> {
        Some(Matrix::from_element(1, 1, self.derivative(z[0])))
    }
}

/// Gamma(θ, 1) shape model written as stochastic approximation with step `1/t`:
/// `R(u) = (ψ(θ) − ψ(u)) / ψ'(u)` and `ε_t(u) = (log X_t − ψ(θ)) / ψ'(u)`.
///
/// The draw is `log X_t`. `R'(θ) = −1`.
#[derive(Debug, Clone)]
pub struct GammaShapeField {
    root: StateVector,
    theta: f64,
    digamma_theta: f64,
}

impl GammaShapeField {
    pub fn new(theta: f64) -> Result<Self> {
        if !(theta > 0.0 && theta.is_finite()) {
            return Err(Error::param("theta", format!("must be positive, got {theta}")));
        }
        Ok(Self {
            root: StateVector::scalar(theta)?,
            theta,
            digamma_theta: digamma(theta)?,
        })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// `R(u)`; NaN outside `u > 0`.
    pub fn eval(&self, u: f64) -> f64 {
        (self.digamma_theta - digamma_unchecked(u)) / trigamma_unchecked(u)
    }
}

impl FieldModel for GammaShapeField {
    fn dim(&self) -> usize {
        1
    }

    fn root(&self) -> &StateVector {
        &self.root
    }

    fn regression(&self, _t: usize, z: &Vector, _h: &History<'_>) -> Vector {
        Vector::from_element(1, self.eval(z[0]))
    }

    fn draw(&self, _t: usize, rng: &mut SaRng) -> Vector {
        Vector::from_element(1, sample_log_gamma(self.theta, rng))
    }

    fn noise(&self, _t: usize, z: &Vector, draw: &Vector) -> Vector {
        Vector::from_element(1, (draw[0] - self.digamma_theta) / trigamma_unchecked(z[0]))
    }
}

/// Unscaled Gamma(θ, 1) score field: `R(u) = ψ(θ) − ψ(u)`, `ε_t = log X_t − ψ(θ)`, `R'(u) = −ψ'(u)`.
///
/// Paired with the cumulative-Jacobian step rule this is the recursive MLE
/// with the accumulated Fisher information as inverse step.
#[derive(Debug, Clone)]
pub struct GammaScoreField {
    root: StateVector,
    theta: f64,
    digamma_theta: f64,
}

impl GammaScoreField {
    pub fn new(theta: f64) -> Result<Self> {
        if !(theta > 0.0 && theta.is_finite()) {
            return Err(Error::param("theta", format!("must be positive, got {theta}")));
        }
        Ok(Self {
            root: StateVector::scalar(theta)?,
            theta,
            digamma_theta: digamma(theta)?,
        })
    }
}

impl FieldModel for GammaScoreField {
    fn dim(&self) -> usize {
        1
    }

    fn root(&self) -> &StateVector {
        &self.root
    }

    fn regression(&self, _t: usize, z: &Vector, _h: &History<'_>) -> Vector {
        Vector::from_element(1, self.digamma_theta - digamma_unchecked(z[0]))
    }

    fn draw(&self, _t: usize, rng: &mut SaRng) -> Vector {
        Vector::from_element(1, sample_log_gamma(self.theta, rng))
    }

    fn noise(&self, _t: usize, _z: &Vector, draw: &Vector) -> Vector {
        Vector::from_element(1, draw[0] - self.digamma_theta)
    }

    fn jacobian(&self, _t: usize, z: &Vector) -> Option<Matrix> {
        trigamma(z[0]).ok().map(|v| Matrix::from_element(1, 1, -v))
    }
}

pub type RegressionFn = Arc<dyn Fn(usize, &Vector) -> Vector + Send + Sync>;
pub type JacobianFn = Arc<dyn Fn(usize, &Vector) -> Matrix + Send + Sync>;

/// Field from a closure with state-free additive noise; handy for experiments and tests.
#[derive(Clone)]
pub struct ClosureField {
    root: StateVector,
    regression: RegressionFn,
    jacobian: Option<JacobianFn>,
    noise: NoiseSampler,
}

impl ClosureField {
    pub fn new(root: StateVector, regression: RegressionFn, noise: NoiseSampler) -> Self {
        Self {
            root,
            regression,
            jacobian: None,
            noise,
        }
    }

    pub fn with_jacobian(mut self, jacobian: JacobianFn) -> Self {
        self.jacobian = Some(jacobian);
        self
    }
}

impl fmt::Debug for ClosureField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ClosureField")
            .field("root", &self.root)
            .field("noise", &self.noise)
            .finish_non_exhaustive()
    }
}

impl FieldModel for ClosureField {
    fn dim(&self) -> usize {
        self.root.dim()
    }

    fn root(&self) -> &StateVector {
        &self.root
    }

    fn regression(&self, t: usize, z: &Vector, _h: &History<'_>) -> Vector {
        (self.regression)(t, z)
    }

    fn draw(&self, _t: usize, rng: &mut SaRng) -> Vector {
        additive_draw(&self.noise, self.dim(), rng)
    }

    fn noise(&self, _t: usize, _z: &Vector, draw: &Vector) -> Vector {
        draw.clone()
    }

    fn jacobian(&self, t: usize, z: &Vector) -> Option<Matrix> {
        self.jacobian.as_ref().map(|j| j(t, z))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::rng_from_seed;

    #[test]
    fn fields_vanish_at_root() {
        let h = History::empty(1);
        let poly = PolynomialField::septic_demo();
        let gamma = GammaShapeField::new(0.1).unwrap();
        let score = GammaScoreField::new(2.5).unwrap();
        for t in [1usize, 10, 1000] {
            assert_eq!(poly.regression(t, &Vector::from_element(1, 2.0), &h)[0], 0.0);
            assert_eq!(gamma.regression(t, &Vector::from_element(1, 0.1), &h)[0], 0.0);
            assert_eq!(score.regression(t, &Vector::from_element(1, 2.5), &h)[0], 0.0);
        }
        let lin = LinearField::new(StateVector::new(vec![1.0, -2.0]).unwrap(), NoiseSampler::Zero);
        assert_eq!(
            lin.regression(5, lin.root().as_vector(), &History::empty(2)),
            Vector::zeros(2)
        );
    }

    #[test]
    fn septic_matches_expanded_form() {
        let poly = PolynomialField::septic_demo();
        for z in [-2.0, 0.0, 1.3, 2.0, 2.7, 5.0] {
            let u: f64 = z - 2.0;
            let expected = -u.powi(7) + 2.0 * u.powi(6) - 5.0 * u.powi(5) - 3.0 * u;
            assert!((poly.eval(z) - expected).abs() <= 1e-12 * expected.abs().max(1.0));
            let d_expected = -7.0 * u.powi(6) + 12.0 * u.powi(5) - 25.0 * u.powi(4) - 3.0;
            assert!((poly.derivative(z) - d_expected).abs() <= 1e-12 * d_expected.abs().max(1.0));
        }
        assert_eq!(poly.derivative(2.0), -3.0);
    }

    #[test]
    fn septic_drift_points_toward_root() {
        let poly = PolynomialField::septic_demo();
        for i in -400..=400 {
            let z = 2.0 + i as f64 * 0.01;
            assert!((z - 2.0) * poly.eval(z) <= 0.0);
        }
    }

    #[test]
    fn gamma_noise_is_coupled_through_draw() {
        let f = GammaShapeField::new(0.5).unwrap();
        let mut rng = rng_from_seed(9);
        let draw = f.draw(1, &mut rng);
        let h = History::empty(1);
        for u in [0.2, 0.5, 3.0] {
            let z = Vector::from_element(1, u);
            let total = f.regression(1, &z, &h)[0] + f.noise(1, &z, &draw)[0];
            let direct = (draw[0] - digamma(u).unwrap()) / trigamma(u).unwrap();
            assert!((total - direct).abs() < 1e-12 * direct.abs().max(1.0));
        }
    }

    #[test]
    fn gamma_root_noise_has_unit_information_scale() {
        // Var ε(θ) = ψ'(θ)/ψ'(θ)² = 1/ψ'(θ)
        let theta = 0.5;
        let f = GammaShapeField::new(theta).unwrap();
        let mut rng = rng_from_seed(21);
        let z = Vector::from_element(1, theta);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|t| f.sample_noise(t + 1, &z, &mut rng)[0]).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let target = 1.0 / trigamma(theta).unwrap();
        assert!(mean.abs() < 5.0 * (target / n as f64).sqrt());
        assert!((var / target - 1.0).abs() < 0.03);
    }

    #[test]
    fn invalid_parameters() {
        assert!(GammaShapeField::new(0.0).is_err());
        assert!(GammaScoreField::new(-1.0).is_err());
        assert!(PolynomialField::new(0.0, vec![], NoiseSampler::Zero).is_err());
        assert!(PolynomialField::new(0.0, vec![1.0], NoiseSampler::StudentT { df: 0.0 }).is_err());
    }
}
