//! Step-size rules `γ_t(z)` and the conditional Fisher information accumulator.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::sa::{FieldModel, History};
use crate::{Matrix, TimeFn, Vector};

/// Condition numbers above this make a step matrix unusable.
pub const MAX_CONDITION: f64 = 1e12;

/// Indices checked when a scalar sequence is validated.
const SCALAR_PROBE_LEN: usize = 10_000;

const SYMMETRY_TOL: f64 = 1e-10;

pub type MatrixFn = Arc<dyn Fn(usize, &Vector, &History<'_>) -> Matrix + Send + Sync>;
pub type IncrementFn = Arc<dyn Fn(usize, &Vector) -> Matrix + Send + Sync>;

#[derive(Clone)]
enum Rule {
    Scalar(TimeFn),
    Cumulative {
        field: Arc<dyn FieldModel>,
        gamma0_inv: Matrix,
    },
    General {
        gamma: MatrixFn,
        inverse_increment: Option<IncrementFn>,
    },
}

/// A rule producing the `m×m` step matrix `γ_t(z)`.
#[derive(Clone)]
pub struct StepSizeRule {
    rule: Rule,
}

impl fmt::Debug for StepSizeRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match &self.rule {
            Rule::Scalar(_) => "scalar",
            Rule::Cumulative { .. } => "cumulative",
            Rule::General { .. } => "general",
        };
        f.debug_struct("StepSizeRule")
            .field("kind", &kind)
            .finish_non_exhaustive()
    }
}

/// `γ_t = I / a(t)` with `a` positive and nondecreasing.
pub fn rule_scalar(a: TimeFn) -> Result<StepSizeRule> {
    let mut prev = 0.0;
    for t in 1..=SCALAR_PROBE_LEN {
        let at = a(t);
        if !(at > 0.0) || !at.is_finite() {
            return Err(Error::param("a", format!("a({t}) = {at} is not positive")));
        }
        if at < prev {
            return Err(Error::param("a", format!("a is decreasing at t = {t}: {prev} -> {at}")));
        }
        prev = at;
    }
    Ok(StepSizeRule { rule: Rule::Scalar(a) })
}

/// Cumulative-derivative rule `γ_t⁻¹(z) = γ_0⁻¹ − Σ_{s≤t} R'_s(z)`.
///
/// Inside a run the sum is accumulated at the iterate of each step, so the
/// `s`-th Jacobian is taken at `Z_{s−1}`.
pub fn rule_optimal_from_jacobian(field: Arc<dyn FieldModel>, gamma0_inv: Matrix) -> Result<StepSizeRule> {
    let m = field.dim();
    if gamma0_inv.nrows() != m || gamma0_inv.ncols() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            found: gamma0_inv.nrows(),
        });
    }
    if field.jacobian(1, field.root().as_vector()).is_none() {
        return Err(Error::param("field", "the cumulative rule needs a regression Jacobian"));
    }
    check_symmetric(&gamma0_inv)?;
    if gamma0_inv.clone().cholesky().is_none() {
        return Err(Error::param("gamma0_inv", "must be positive definite"));
    }
    Ok(StepSizeRule {
        rule: Rule::Cumulative { field, gamma0_inv },
    })
}

/// Arbitrary matrix rule, optionally with its known inverse increment `Δγ_t⁻¹(z)`.
pub fn rule_general(gamma: MatrixFn, inverse_increment: Option<IncrementFn>) -> StepSizeRule {
    StepSizeRule {
        rule: Rule::General {
            gamma,
            inverse_increment,
        },
    }
}

impl StepSizeRule {
    /// Per-trajectory state for evaluating the rule step by step.
    pub fn cursor(&self) -> StepCursor<'_> {
        StepCursor {
            rule: self,
            jacobian_sum: None,
        }
    }

    /// The scalar sequence `a_t` when this is a scalar rule.
    pub fn scalar_sequence(&self) -> Option<&TimeFn> {
        match &self.rule {
            Rule::Scalar(a) => Some(a),
            _ => None,
        }
    }

    /// `γ_t(z)` evaluated at a fixed point without trajectory context.
    ///
    /// For the cumulative rule every Jacobian in the sum is taken at `z`.
    pub fn gamma_at(&self, t: usize, z: &Vector) -> Result<Matrix> {
        match &self.rule {
            Rule::Scalar(a) => Ok(Matrix::identity(z.len(), z.len()) / a(t)),
            Rule::Cumulative { field, gamma0_inv } => {
                let mut inv = gamma0_inv.clone();
                for s in 1..=t {
                    inv -= jacobian(field.as_ref(), s, z)?;
                }
                invert_guarded(&inv, t)
            }
            Rule::General { gamma, .. } => Ok(gamma(t, z, &History::empty(z.len()))),
        }
    }

    /// `γ_t⁻¹(z) − γ_{t−1}⁻¹(z)`, when the rule knows it.
    pub fn inverse_increment(&self, t: usize, z: &Vector) -> Option<Result<Matrix>> {
        let m = z.len();
        match &self.rule {
            Rule::Scalar(a) => {
                let prev = if t <= 1 { 0.0 } else { a(t - 1) };
                Some(Ok(Matrix::identity(m, m) * (a(t) - prev)))
            }
            Rule::Cumulative { field, .. } => Some(jacobian(field.as_ref(), t, z).map(|j| -j)),
            Rule::General { inverse_increment, .. } => inverse_increment.as_ref().map(|f| Ok(f(t, z))),
        }
    }
}

/// Evaluates a [`StepSizeRule`] along one trajectory.
pub struct StepCursor<'a> {
    rule: &'a StepSizeRule,
    jacobian_sum: Option<Matrix>,
}

impl StepCursor<'_> {
    /// `γ_t(z)` for the step leaving iterate `z`. Must be called once per `t`, in order.
    pub fn gamma(&mut self, t: usize, z: &Vector, history: &History<'_>) -> Result<Matrix> {
        match &self.rule.rule {
            Rule::Scalar(a) => Ok(Matrix::identity(z.len(), z.len()) / a(t)),
            Rule::Cumulative { field, gamma0_inv } => {
                let j = jacobian(field.as_ref(), t, z)?;
                let sum = match self.jacobian_sum.take() {
                    Some(s) => s + j,
                    None => j,
                };
                let inv = gamma0_inv - &sum;
                self.jacobian_sum = Some(sum);
                invert_guarded(&inv, t)
            }
            Rule::General { gamma, .. } => Ok(gamma(t, z, history)),
        }
    }
}

fn jacobian(field: &dyn FieldModel, t: usize, z: &Vector) -> Result<Matrix> {
    field
        .jacobian(t, z)
        .ok_or_else(|| Error::param("field", "regression Jacobian unavailable"))
}

/// Inverse of `inv` after checking its 2-norm condition number.
pub fn invert_guarded(inv: &Matrix, t: usize) -> Result<Matrix> {
    if inv.len() == 1 {
        let x = inv[(0, 0)];
        return if x != 0.0 && x.is_finite() {
            Ok(Matrix::from_element(1, 1, 1.0 / x))
        } else {
            Err(Error::SingularStep {
                t,
                condition: f64::INFINITY,
            })
        };
    }
    let sv = inv.clone().singular_values();
    let (max, min) = (sv.max(), sv.min());
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(Error::SingularStep { t, condition });
    }
    inv.clone()
        .lu()
        .try_inverse()
        .ok_or(Error::SingularStep { t, condition })
}

fn check_symmetric(m: &Matrix) -> Result<()> {
    if !m.is_square() {
        return Err(Error::InvalidMatrix(format!(
            "{}x{} is not square",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidMatrix("non-finite entry".into()));
    }
    let asym = (m - m.transpose()).amax();
    if asym > SYMMETRY_TOL {
        return Err(Error::InvalidMatrix(format!(
            "asymmetry {asym:e} exceeds {SYMMETRY_TOL:e}"
        )));
    }
    Ok(())
}

/// Running conditional Fisher information `I_t = I_0 + Σ E{l_s l_sᵀ | F_{s−1}}`.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherAccumulator {
    info: Matrix,
    count: usize,
}

impl FisherAccumulator {
    pub fn new(dim: usize) -> Self {
        Self::with_initial(Matrix::zeros(dim, dim))
    }

    /// Starts from a prior information matrix `I_0` (e.g. `Î_0` of recursive least squares).
    pub fn with_initial(info: Matrix) -> Self {
        Self { info, count: 0 }
    }

    pub fn info(&self) -> &Matrix {
        &self.info
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Adds a symmetric positive semi-definite increment.
    pub fn update(&mut self, increment: &Matrix) -> Result<()> {
        if increment.shape() != self.info.shape() {
            return Err(Error::DimensionMismatch {
                expected: self.info.nrows(),
                found: increment.nrows(),
            });
        }
        check_symmetric(increment)?;
        let sym = (increment + increment.transpose()) * 0.5;
        let min_eig = sym.symmetric_eigenvalues().min();
        let scale = increment.amax().max(1.0);
        if min_eig < -SYMMETRY_TOL * scale {
            return Err(Error::InvalidMatrix(format!(
                "increment is indefinite (smallest eigenvalue {min_eig:e})"
            )));
        }
        self.info += increment;
        self.count += 1;
        Ok(())
    }

    /// Adds the outer product `l lᵀ` of a score vector.
    pub fn update_score(&mut self, score: &Vector) -> Result<()> {
        self.update(&(score * score.transpose()))
    }
}

/// Functional form of [`FisherAccumulator::update`].
pub fn fisher_update(mut acc: FisherAccumulator, increment: &Matrix) -> Result<FisherAccumulator> {
    acc.update(increment)?;
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{GammaScoreField, LinearField};
    use crate::noise::NoiseSampler;
    use crate::specfun::trigamma;
    use crate::StateVector;

    fn linear(m: usize) -> Arc<dyn FieldModel> {
        Arc::new(LinearField::new(
            StateVector::new(vec![1.0; m]).unwrap(),
            NoiseSampler::Zero,
        ))
    }

    #[test]
    fn scalar_rule_examples() {
        let r = rule_scalar(Arc::new(|t| t as f64)).unwrap();
        let z = Vector::zeros(2);
        assert_eq!(r.gamma_at(3, &z).unwrap(), Matrix::identity(2, 2) / 3.0);
        assert_eq!(r.inverse_increment(3, &z).unwrap().unwrap(), Matrix::identity(2, 2));
        let r3 = rule_scalar(Arc::new(|t| 3.0 * t as f64)).unwrap();
        assert_eq!(r3.gamma_at(1, &Vector::zeros(1)).unwrap()[(0, 0)], 1.0 / 3.0);
        assert!(rule_scalar(Arc::new(|t| 1.0 / t as f64)).is_err());
        assert!(rule_scalar(Arc::new(|t| t as f64 - 5.0)).is_err());
    }

    #[test]
    fn cumulative_rule_on_linear_field() {
        let r = rule_optimal_from_jacobian(linear(2), Matrix::identity(2, 2)).unwrap();
        let z = Vector::from_element(2, 0.3);
        for t in [1usize, 2, 7, 40] {
            let g = r.gamma_at(t, &z).unwrap();
            assert!((g - Matrix::identity(2, 2) / (1.0 + t as f64)).amax() < 1e-15);
        }
        let mut cursor = r.cursor();
        let h = History::empty(2);
        for t in 1..=5 {
            let g = cursor.gamma(t, &z, &h).unwrap();
            assert!((g[(0, 0)] - 1.0 / (1.0 + t as f64)).abs() < 1e-15);
        }
    }

    #[test]
    fn cumulative_rule_rejects_bad_regularizer() {
        assert!(rule_optimal_from_jacobian(linear(1), Matrix::zeros(1, 1)).is_err());
        assert!(rule_optimal_from_jacobian(linear(2), Matrix::identity(3, 3)).is_err());
        let no_jac = Arc::new(crate::fields::GammaShapeField::new(0.5).unwrap());
        assert!(rule_optimal_from_jacobian(no_jac, Matrix::identity(1, 1)).is_err());
    }

    #[test]
    fn cumulative_rule_singular_when_jacobians_vanish() {
        // R ≡ 0 with an indefinite-free but tiny regularizer left out: build via General Jacobian.
        let field = Arc::new(
            crate::fields::ClosureField::new(
                StateVector::new(vec![0.0]).unwrap(),
                Arc::new(|_, z: &Vector| Vector::zeros(z.len())),
                NoiseSampler::Zero,
            )
            .with_jacobian(Arc::new(|_, z: &Vector| Matrix::zeros(z.len(), z.len()))),
        );
        let rule = StepSizeRule {
            rule: Rule::Cumulative {
                field,
                gamma0_inv: Matrix::zeros(1, 1),
            },
        };
        let err = rule
            .cursor()
            .gamma(4, &Vector::zeros(1), &History::empty(1))
            .unwrap_err();
        assert!(matches!(err, Error::SingularStep { t: 4, .. }));
    }

    #[test]
    fn gamma_score_cumulative_matches_fisher_information() {
        // with a negligible regularizer the cumulative rule at fixed θ is 1 / (t ψ'(θ))
        let theta = 0.7;
        let field = Arc::new(GammaScoreField::new(theta).unwrap());
        let r = rule_optimal_from_jacobian(field, Matrix::from_element(1, 1, 1e-12)).unwrap();
        let z = Vector::from_element(1, theta);
        for t in [1usize, 10, 250] {
            let g = r.gamma_at(t, &z).unwrap()[(0, 0)];
            let expected = 1.0 / (t as f64 * trigamma(theta).unwrap());
            assert!((g - expected).abs() < 1e-10 * expected, "t={t}");
        }
    }

    #[test]
    fn ill_conditioned_matrix_rejected() {
        let m = Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1e-14]);
        assert!(matches!(invert_guarded(&m, 9), Err(Error::SingularStep { t: 9, .. })));
        let ok = Matrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let inv = invert_guarded(&ok, 1).unwrap();
        assert!((inv * ok - Matrix::identity(2, 2)).amax() < 1e-14);
    }

    #[test]
    fn fisher_examples() {
        let mut acc = FisherAccumulator::with_initial(Matrix::from_element(1, 1, 1.0));
        for x in [0.5, -1.5, 2.0] {
            acc.update_score(&Vector::from_element(1, x)).unwrap();
        }
        assert!((acc.info()[(0, 0)] - (1.0 + 0.25 + 2.25 + 4.0)).abs() < 1e-15);
        assert_eq!(acc.count(), 3);

        let before = acc.clone();
        acc.update(&Matrix::zeros(1, 1)).unwrap();
        assert_eq!(acc.info(), before.info());

        let psi1 = trigamma(0.5).unwrap();
        let mut gamma_acc = FisherAccumulator::new(1);
        for _ in 0..100 {
            gamma_acc = fisher_update(gamma_acc, &Matrix::from_element(1, 1, psi1)).unwrap();
        }
        assert!((gamma_acc.info()[(0, 0)] - 100.0 * psi1).abs() < 1e-10);
    }

    #[test]
    fn fisher_rejects_bad_increments() {
        let mut acc = FisherAccumulator::new(2);
        let asym = Matrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(acc.update(&asym).is_err());
        let indef = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(acc.update(&indef).is_err());
        assert!(acc.update(&Matrix::identity(3, 3)).is_err());
        assert_eq!(acc.count(), 0);
    }
}
