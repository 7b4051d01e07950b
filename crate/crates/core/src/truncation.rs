//! Metric projection onto closed convex sets and the time-indexed truncation
//! schedules `U_t` applied after every step.

use std::fmt;
use std::ops::RangeInclusive;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::sa::History;
use crate::{TimeFn, Vector};

/// Slack used for membership checks on balls (radius arithmetic is inexact).
pub const MEMBERSHIP_TOL: f64 = 1e-12;

/// A nonempty closed convex set in `R^m`.
#[derive(Debug, Clone, PartialEq)]
pub enum ConvexSet {
    Box { lower: Vector, upper: Vector },
    Ball { center: Vector, radius: f64 },
    WholeSpace,
}

impl ConvexSet {
    pub fn boxed(lower: Vector, upper: Vector) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                expected: lower.len(),
                found: upper.len(),
            });
        }
        if lower.is_empty() {
            return Err(Error::param("lower", "box must have dimension >= 1"));
        }
        for (l, u) in lower.iter().zip(upper.iter()) {
            if l.is_nan() || u.is_nan() || l > u {
                return Err(Error::param("lower", format!("need lower <= upper, got [{l}, {u}]")));
            }
        }
        Ok(ConvexSet::Box { lower, upper })
    }

    /// Interval `[lower, upper]` in one dimension.
    pub fn interval(lower: f64, upper: f64) -> Result<Self> {
        Self::boxed(Vector::from_element(1, lower), Vector::from_element(1, upper))
    }

    pub fn ball(center: Vector, radius: f64) -> Result<Self> {
        if !(radius >= 0.0) || !radius.is_finite() {
            return Err(Error::param("radius", format!("must be finite and >= 0, got {radius}")));
        }
        if center.iter().any(|c| !c.is_finite()) {
            return Err(Error::param("center", "must be finite"));
        }
        Ok(ConvexSet::Ball { center, radius })
    }

    /// Dimension the set lives in, or `None` for the whole space.
    pub fn dim(&self) -> Option<usize> {
        match self {
            ConvexSet::Box { lower, .. } => Some(lower.len()),
            ConvexSet::Ball { center, .. } => Some(center.len()),
            ConvexSet::WholeSpace => None,
        }
    }

    /// Nearest point of the set in Euclidean norm; `z` itself when already inside.
    pub fn project(&self, z: &Vector) -> Vector {
        match self {
            ConvexSet::WholeSpace => z.clone(),
            ConvexSet::Box { lower, upper } => {
                debug_assert_eq!(z.len(), lower.len());
                Vector::from_iterator(
                    z.len(),
                    z.iter()
                        .zip(lower.iter().zip(upper.iter()))
                        .map(|(&x, (&l, &u))| x.clamp(l, u)),
                )
            }
            ConvexSet::Ball { center, radius } => {
                debug_assert_eq!(z.len(), center.len());
                let offset = z - center;
                let dist = offset.norm();
                if dist <= *radius {
                    z.clone()
                } else {
                    center + offset * (*radius / dist)
                }
            }
        }
    }

    pub fn contains(&self, z: &Vector, tol: f64) -> bool {
        match self {
            ConvexSet::WholeSpace => true,
            ConvexSet::Box { lower, upper } => z
                .iter()
                .zip(lower.iter().zip(upper.iter()))
                .all(|(&x, (&l, &u))| x >= l - tol && x <= u + tol),
            ConvexSet::Ball { center, radius } => (z - center).norm() <= radius + tol,
        }
    }

    pub fn distance(&self, z: &Vector) -> f64 {
        (z - self.project(z)).norm()
    }
}

/// How a shrinking schedule combines its two radii.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RadiusRule {
    /// `c·(1/d_t + 1/a_t)`
    #[default]
    Sum,
    /// `c·max(1/d_t, 1/a_t)`
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    Trivial,
    Fixed,
    Expanding,
    Moving,
    ShrinkingAroundAuxiliary,
}

pub type AuxFn = Arc<dyn Fn(usize, &History<'_>) -> Vector + Send + Sync>;

#[derive(Clone)]
enum Rule {
    Trivial,
    Fixed(ConvexSet),
    Expanding(TimeFn),
    Moving {
        lower: TimeFn,
        upper: TimeFn,
    },
    Shrinking {
        aux: AuxFn,
        c: f64,
        d: TimeFn,
        a: TimeFn,
        radius: RadiusRule,
    },
}

/// Time-indexed family of truncation sets `U_t`.
#[derive(Clone)]
pub struct TruncationSchedule {
    kind: ScheduleKind,
    rule: Rule,
}

impl fmt::Debug for TruncationSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TruncationSchedule")
            .field("kind", &self.kind)
            .finish_non_exhaustive()
    }
}

impl TruncationSchedule {
    /// `U_t = R^m` for all `t`.
    pub fn trivial() -> Self {
        Self {
            kind: ScheduleKind::Trivial,
            rule: Rule::Trivial,
        }
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    /// Dimension forced by the schedule, if any.
    pub fn dim(&self) -> Option<usize> {
        match &self.rule {
            Rule::Fixed(set) => set.dim(),
            _ => None,
        }
    }

    /// The set `U_t` given the trajectory so far.
    pub fn set_at(&self, t: usize, history: &History<'_>) -> Result<ConvexSet> {
        let m = history.dim();
        match &self.rule {
            Rule::Trivial => Ok(ConvexSet::WholeSpace),
            Rule::Fixed(set) => Ok(set.clone()),
            Rule::Expanding(u) => {
                let half = u(t);
                if !(half > 0.0) || !half.is_finite() {
                    return Err(Error::EmptySet {
                        t,
                        reason: format!("expanding half-width u({t}) = {half} is not positive"),
                    });
                }
                Ok(ConvexSet::Box {
                    lower: Vector::from_element(m, -half),
                    upper: Vector::from_element(m, half),
                })
            }
            Rule::Moving { lower, upper } => {
                let (lo, hi) = (lower(t), upper(t));
                if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                    return Err(Error::EmptySet {
                        t,
                        reason: format!("bounds [{lo}, {hi}] do not form an interval"),
                    });
                }
                Ok(ConvexSet::Box {
                    lower: Vector::from_element(m, lo),
                    upper: Vector::from_element(m, hi),
                })
            }
            Rule::Shrinking { aux, c, d, a, radius } => {
                let (inv_d, inv_a) = (1.0 / d(t), 1.0 / a(t));
                let r = match radius {
                    RadiusRule::Sum => c * (inv_d + inv_a),
                    RadiusRule::Max => c * inv_d.max(inv_a),
                };
                if !(r > 0.0) || !r.is_finite() {
                    return Err(Error::EmptySet {
                        t,
                        reason: format!("shrinking radius {r} is not positive"),
                    });
                }
                let center = aux(t, history);
                if center.len() != m {
                    return Err(Error::DimensionMismatch {
                        expected: m,
                        found: center.len(),
                    });
                }
                ConvexSet::ball(center, r)
            }
        }
    }
}

/// `U_t = Box[lower, upper]` for every `t`.
pub fn schedule_fixed(lower: Vector, upper: Vector) -> Result<TruncationSchedule> {
    if lower.len() != upper.len() {
        return Err(Error::DimensionMismatch {
            expected: lower.len(),
            found: upper.len(),
        });
    }
    if lower.iter().zip(upper.iter()).any(|(l, u)| !(l < u)) {
        return Err(Error::param(
            "lower",
            "fixed truncation needs lower < upper in every coordinate",
        ));
    }
    Ok(TruncationSchedule {
        kind: ScheduleKind::Fixed,
        rule: Rule::Fixed(ConvexSet::boxed(lower, upper)?),
    })
}

/// `U_t = [-u(t), u(t)]^m`. Positivity of `u` is checked whenever a set is requested.
pub fn schedule_expanding(u: TimeFn) -> TruncationSchedule {
    TruncationSchedule {
        kind: ScheduleKind::Expanding,
        rule: Rule::Expanding(u),
    }
}

/// Moving interval `[c1·(log(t+2))^{-1/2}, c2·(t+2)]` for positive parameters.
pub fn schedule_gamma_mt(c1: f64, c2: f64) -> Result<TruncationSchedule> {
    if !(c1 > 0.0 && c1.is_finite()) {
        return Err(Error::param("c1", format!("must be positive, got {c1}")));
    }
    if !(c2 > 0.0 && c2.is_finite()) {
        return Err(Error::param("c2", format!("must be positive, got {c2}")));
    }
    Ok(schedule_moving(
        Arc::new(move |t| c1 / ((t as f64 + 2.0).ln()).sqrt()),
        Arc::new(move |t| c2 * (t as f64 + 2.0)),
    ))
}

/// General moving interval `[lower(t), upper(t)]^m`.
pub fn schedule_moving(lower: TimeFn, upper: TimeFn) -> TruncationSchedule {
    TruncationSchedule {
        kind: ScheduleKind::Moving,
        rule: Rule::Moving { lower, upper },
    }
}

/// Balls around an auxiliary estimate: `U_t = Ball(aux(t), c·(1/d_t ⊕ 1/a_t))`
/// where `⊕` is `+` or `max` depending on `radius`.
pub fn schedule_shrinking_aux(
    aux: AuxFn,
    c: f64,
    d: TimeFn,
    a: TimeFn,
    radius: RadiusRule,
) -> Result<TruncationSchedule> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::param("c", format!("must be positive, got {c}")));
    }
    Ok(TruncationSchedule {
        kind: ScheduleKind::ShrinkingAroundAuxiliary,
        rule: Rule::Shrinking { aux, c, d, a, radius },
    })
}

/// First `t*` in `range` such that `z0 ∈ U_t` for every `t ∈ [t*, t_max]`,
/// or `None` when `z0 ∉ U_{t_max}`.
///
/// Sets are evaluated with an empty history, so auxiliary centres that read
/// the live trajectory see no past iterates.
pub fn admissibility_probe(
    schedule: &TruncationSchedule,
    z0: &Vector,
    range: RangeInclusive<usize>,
) -> Result<Option<usize>> {
    let history = History::empty(z0.len());
    let (start, end) = (*range.start(), *range.end());
    let mut first = None;
    for t in (start..=end).rev() {
        if schedule.set_at(t, &history)?.contains(z0, MEMBERSHIP_TOL) {
            first = Some(t);
        } else {
            break;
        }
    }
    Ok(first)
}
