//! The truncated stochastic-approximation recursion
//!
//! ```text
//! Z_t = Φ_{U_t}( Z_{t−1} + γ_t(Z_{t−1}) · [R_t(Z_{t−1}) + ε_t(Z_{t−1})] )
//! ```
//!
//! executed one step at a time. Each step draws its randomness once through
//! [`FieldModel::draw`] and evaluates the noise both at the iterate and at the
//! root from that single draw, so the two are coupled pathwise.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::noise::{rng_from_seed, SaRng};
use crate::stepsize::{StepCursor, StepSizeRule};
use crate::trajectory::Trajectory;
use crate::truncation::{ConvexSet, TruncationSchedule};
use crate::{Matrix, Vector};

/// Above this dimension root-noise pairing is off unless requested.
pub const ROOT_NOISE_MAX_DIM: usize = 8;

/// A point of `R^m` with finite coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector(Vector);

impl StateVector {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        Self::from_vector(Vector::from_vec(coords))
    }

    pub fn scalar(x: f64) -> Result<Self> {
        Self::new(vec![x])
    }

    pub fn from_vector(v: Vector) -> Result<Self> {
        if v.is_empty() {
            return Err(Error::param("state", "dimension must be >= 1"));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                t: 0,
                what: "state",
                state: v.iter().copied().collect(),
            });
        }
        Ok(Self(v))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_vector(&self) -> &Vector {
        &self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn into_vector(self) -> Vector {
        self.0
    }
}

impl std::ops::Index<usize> for StateVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Read-only view of the steps completed so far.
#[derive(Clone, Copy)]
pub struct History<'a> {
    dim: usize,
    traj: Option<&'a Trajectory>,
}

impl<'a> History<'a> {
    pub fn empty(dim: usize) -> Self {
        Self { dim, traj: None }
    }

    pub fn of(traj: &'a Trajectory) -> Self {
        Self {
            dim: traj.dim(),
            traj: Some(traj),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of completed steps.
    pub fn len(&self) -> usize {
        self.traj.map_or(0, |t| t.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `Z_s` for `s ≥ 1`, or the starting point for `s = 0` when known.
    pub fn iterate(&self, s: usize) -> Option<&'a [f64]> {
        let traj = self.traj?;
        if s == 0 {
            traj.initial()
        } else if s <= traj.len() {
            Some(traj.iterate(s))
        } else {
            None
        }
    }

    pub fn trajectory(&self) -> Option<&'a Trajectory> {
        self.traj
    }
}

impl fmt::Debug for History<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "History(dim={}, len={})", self.dim, self.len())
    }
}

/// Regression field `R_t(z)` with its noise `ε_t(z)`, sharing the root `z⁰`.
///
/// Noise is split into a draw of the step's underlying randomness and a
/// deterministic map from (point, draw) to the noise vector. The engine draws
/// once per step and evaluates the map at both the iterate and the root.
pub trait FieldModel: Send + Sync {
    fn dim(&self) -> usize;

    /// The root `z⁰` with `R_t(z⁰) = 0` for every `t`. Diagnostics only.
    fn root(&self) -> &StateVector;

    fn regression(&self, t: usize, z: &Vector, history: &History<'_>) -> Vector;

    /// Underlying randomness for step `t`.
    fn draw(&self, t: usize, rng: &mut SaRng) -> Vector;

    /// `ε_t(z)` as a function of the step's draw.
    fn noise(&self, t: usize, z: &Vector, draw: &Vector) -> Vector;

    /// `R'_t(z)`, when known in closed form.
    fn jacobian(&self, _t: usize, _z: &Vector) -> Option<Matrix> {
        None
    }

    fn sample_noise(&self, t: usize, z: &Vector, rng: &mut SaRng) -> Vector {
        let draw = self.draw(t, rng);
        self.noise(t, z, &draw)
    }
}

/// Everything needed to run one trajectory.
#[derive(Clone)]
pub struct SaConfig {
    pub initial: StateVector,
    pub step_rule: StepSizeRule,
    pub truncation: TruncationSchedule,
    pub field: Arc<dyn FieldModel>,
    pub horizon: usize,
    pub seed: u64,
    /// `None` pairs root noise for `m ≤ ROOT_NOISE_MAX_DIM`.
    pub record_root_noise: Option<bool>,
}

impl fmt::Debug for SaConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SaConfig")
            .field("initial", &self.initial)
            .field("step_rule", &self.step_rule)
            .field("truncation", &self.truncation)
            .field("horizon", &self.horizon)
            .field("seed", &self.seed)
            .finish_non_exhaustive()
    }
}

impl SaConfig {
    pub fn new(
        initial: StateVector,
        step_rule: StepSizeRule,
        truncation: TruncationSchedule,
        field: Arc<dyn FieldModel>,
        horizon: usize,
        seed: u64,
    ) -> Result<Self> {
        let config = Self {
            initial,
            step_rule,
            truncation,
            field,
            horizon,
            seed,
            record_root_noise: None,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_initial(mut self, initial: StateVector) -> Self {
        self.initial = initial;
        self
    }

    pub fn with_root_noise(mut self, record: bool) -> Self {
        self.record_root_noise = Some(record);
        self
    }

    pub fn dim(&self) -> usize {
        self.initial.dim()
    }

    pub fn records_root_noise(&self) -> bool {
        self.record_root_noise.unwrap_or(self.dim() <= ROOT_NOISE_MAX_DIM)
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::param("horizon", "must be >= 1"));
        }
        let m = self.dim();
        for found in [
            Some(self.field.dim()),
            Some(self.field.root().dim()),
            self.truncation.dim(),
        ]
        .into_iter()
        .flatten()
        {
            if found != m {
                return Err(Error::DimensionMismatch { expected: m, found });
            }
        }
        Ok(())
    }
}

/// Everything recorded about one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: usize,
    pub proposed: Vector,
    pub iterate: Vector,
    pub noise: Vector,
    /// `ε_t(z⁰)` from the same draw as `noise`.
    pub root_noise: Option<Vector>,
    pub truncated: bool,
    pub step: Matrix,
}

fn ensure_finite(t: usize, what: &'static str, v: &Vector, state: &Vector) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            t,
            what,
            state: state.iter().copied().collect(),
        })
    }
}

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

/// One truncated step from `state` at time `t ≥ 1`.
pub fn sa_step(
    config: &SaConfig,
    cursor: &mut StepCursor<'_>,
    state: &StateVector,
    t: usize,
    history: &History<'_>,
    rng: &mut SaRng,
) -> Result<(StateVector, StepRecord)> {
    if t == 0 {
        return Err(Error::param("t", "steps are indexed from 1"));
    }
    let m = state.dim();
    let z = state.as_vector();
    let field = config.field.as_ref();

    let gamma = cursor.gamma(t, z, history)?;
    if gamma.nrows() != m || gamma.ncols() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            found: gamma.nrows(),
        });
    }
    ensure_finite(t, "step matrix", &Vector::from_column_slice(gamma.as_slice()), z)?;

    let regression = field.regression(t, z, history);
    check_dim(m, regression.len())?;
    ensure_finite(t, "regression", &regression, z)?;

    let draw = field.draw(t, rng);
    let noise = field.noise(t, z, &draw);
    check_dim(m, noise.len())?;
    ensure_finite(t, "noise", &noise, z)?;
    let root_noise = if config.records_root_noise() {
        Some(field.noise(t, field.root().as_vector(), &draw))
    } else {
        None
    };

    let proposed = z + &gamma * (regression + &noise);
    ensure_finite(t, "proposed point", &proposed, z)?;

    let set = config.truncation.set_at(t, history)?;
    if let Some(d) = set.dim() {
        check_dim(m, d)?;
    }
    let iterate = match set {
        ConvexSet::WholeSpace => proposed.clone(),
        _ => set.project(&proposed),
    };
    let truncated = iterate != proposed;
    let next = StateVector::from_vector(iterate.clone()).map_err(|_| Error::NonFinite {
        t,
        what: "projected point",
        state: z.iter().copied().collect(),
    })?;
    Ok((
        next,
        StepRecord {
            t,
            proposed,
            iterate,
            noise,
            root_noise,
            truncated,
            step: gamma,
        },
    ))
}

/// Runs the recursion for `config.horizon` steps from `config.initial`.
///
/// Deterministic in `(config, config.seed)`.
pub fn sa_run(config: &SaConfig) -> Result<Trajectory> {
    config.validate()?;
    let mut rng = rng_from_seed(config.seed);
    let mut cursor = config.step_rule.cursor();
    let mut traj = Trajectory::with_capacity(&config.initial, config.horizon, config.records_root_noise());
    let mut state = config.initial.clone();
    for t in 1..=config.horizon {
        let (next, record) = {
            let history = History::of(&traj);
            sa_step(config, &mut cursor, &state, t, &history, &mut rng)?
        };
        traj.push(&record);
        state = next;
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{ClosureField, LinearField, PolynomialField};
    use crate::noise::{make_noise_gaussian, NoiseSampler};
    use crate::stepsize::rule_scalar;
    use crate::truncation::{schedule_expanding, schedule_fixed};

    fn scalar_t() -> StepSizeRule {
        rule_scalar(Arc::new(|t| t as f64)).unwrap()
    }

    fn one_step(config: &SaConfig, state: f64, t: usize) -> (StateVector, StepRecord) {
        let mut cursor = config.step_rule.cursor();
        let mut rng = rng_from_seed(0);
        let s = StateVector::scalar(state).unwrap();
        sa_step(config, &mut cursor, &s, t, &History::empty(1), &mut rng).unwrap()
    }

    #[test]
    fn newton_like_step_lands_on_root() {
        let field = Arc::new(LinearField::new(StateVector::scalar(2.0).unwrap(), NoiseSampler::Zero));
        let cfg = SaConfig::new(
            StateVector::scalar(0.0).unwrap(),
            scalar_t(),
            TruncationSchedule::trivial(),
            field,
            1,
            0,
        )
        .unwrap();
        let (next, rec) = one_step(&cfg, 0.0, 1);
        assert_eq!(rec.proposed[0], 2.0);
        assert_eq!(next[0], 2.0);
        assert!(!rec.truncated);
    }

    #[test]
    fn proposal_clamped_onto_expanding_box() {
        // state 5, R = −(z − 4) and γ_1 = 1 propose 4; U_1 = [−log 3, log 3]
        let field = Arc::new(LinearField::new(StateVector::scalar(4.0).unwrap(), NoiseSampler::Zero));
        let cfg = SaConfig::new(
            StateVector::scalar(5.0).unwrap(),
            scalar_t(),
            schedule_expanding(Arc::new(|t| (3.0 * t as f64).ln())),
            field,
            1,
            0,
        )
        .unwrap();
        let (next, rec) = one_step(&cfg, 5.0, 1);
        assert_eq!(rec.proposed[0], 4.0);
        assert_eq!(next[0], 3f64.ln());
        assert!((next[0] - 1.0986122886681098).abs() < 1e-15);
        assert!(rec.truncated);
    }

    #[test]
    fn zero_field_is_fixed_point() {
        let root = StateVector::new(vec![0.0, 0.0]).unwrap();
        let field = Arc::new(ClosureField::new(
            root,
            Arc::new(|_, z: &Vector| Vector::zeros(z.len())),
            NoiseSampler::Zero,
        ));
        let init = StateVector::new(vec![0.3, -0.2]).unwrap();
        let cfg = SaConfig::new(
            init.clone(),
            scalar_t(),
            schedule_fixed(Vector::from_element(2, -1.0), Vector::from_element(2, 1.0)).unwrap(),
            field,
            25,
            3,
        )
        .unwrap();
        let traj = sa_run(&cfg).unwrap();
        for t in 1..=25 {
            assert_eq!(traj.iterate(t), init.as_slice());
            assert!(!traj.truncated(t));
        }
    }

    #[test]
    fn horizon_zero_rejected() {
        let field = Arc::new(LinearField::new(StateVector::scalar(0.0).unwrap(), NoiseSampler::Zero));
        let res = SaConfig::new(
            StateVector::scalar(0.0).unwrap(),
            scalar_t(),
            TruncationSchedule::trivial(),
            field,
            0,
            0,
        );
        assert!(matches!(res, Err(Error::InvalidParameter { name: "horizon", .. })));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let field = Arc::new(LinearField::new(
            StateVector::new(vec![0.0, 0.0]).unwrap(),
            NoiseSampler::Zero,
        ));
        let res = SaConfig::new(
            StateVector::scalar(0.0).unwrap(),
            scalar_t(),
            TruncationSchedule::trivial(),
            field,
            3,
            0,
        );
        assert!(matches!(res, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn blow_up_reported_with_step_and_state() {
        // a repelling cubic field with unit steps overflows quickly
        let field = Arc::new(PolynomialField::new(0.0, vec![0.0, 0.0, -1.0], NoiseSampler::Zero).unwrap());
        let cfg = SaConfig::new(
            StateVector::scalar(3.0).unwrap(),
            rule_scalar(Arc::new(|_| 1.0)).unwrap(),
            TruncationSchedule::trivial(),
            field,
            100,
            0,
        )
        .unwrap();
        match sa_run(&cfg) {
            Err(Error::NonFinite { t, state, .. }) => {
                assert!(t > 1 && t < 100);
                assert_eq!(state.len(), 1);
            }
            other => panic!("expected blow-up, got {other:?}"),
        }
    }

    #[test]
    fn root_is_stationary_without_noise() {
        let z0 = StateVector::new(vec![1.5, -0.5]).unwrap();
        let field = Arc::new(LinearField::new(z0.clone(), NoiseSampler::Zero));
        let cfg = SaConfig::new(z0.clone(), scalar_t(), TruncationSchedule::trivial(), field, 50, 1).unwrap();
        let traj = sa_run(&cfg).unwrap();
        assert!((1..=50).all(|t| traj.iterate(t) == z0.as_slice()));
    }

    #[test]
    fn root_noise_pairing_default_follows_dimension() {
        let mk = |m: usize| {
            let field = Arc::new(LinearField::new(
                StateVector::new(vec![0.0; m]).unwrap(),
                make_noise_gaussian(1.0).unwrap(),
            ));
            SaConfig::new(
                StateVector::new(vec![0.0; m]).unwrap(),
                scalar_t(),
                TruncationSchedule::trivial(),
                field,
                2,
                0,
            )
            .unwrap()
        };
        assert!(mk(8).records_root_noise());
        assert!(!mk(9).records_root_noise());
        assert!(mk(9).with_root_noise(true).records_root_noise());
        assert!(sa_run(&mk(9)).unwrap().root_noise(1).is_none());
    }
}
