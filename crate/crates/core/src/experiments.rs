//! Scenario files, multi-replication Monte Carlo and plot-ready output.
//!
//! Replication `r` of every starting point uses seed `base_seed + r` (wrapping),
//! so runs are reproducible bit for bit given the same base seed, whatever the
//! number of worker threads.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{
    linearity_residual, log_checkpoints, median, probe_drift_sign, probe_drift_strength, probe_local_expansion,
    quantile, rate_tracker, DriftStrength, LinearityReport, LocalExpansion,
};
use crate::error::{Error, Result};
use crate::estimators::{ar1_batch_estimate, ar1_step, simulate_ar1, Ar1State};
use crate::expr::TimeExpr;
use crate::fields::{GammaShapeField, LinearField, PolynomialField, SEPTIC_COEFFS};
use crate::noise::{rng_from_seed, NoiseSampler};
use crate::sa::{sa_run, FieldModel, History, SaConfig, StateVector};
use crate::stepsize::{rule_optimal_from_jacobian, rule_scalar, StepSizeRule};
use crate::trajectory::{write_trajectories_csv, Trajectory};
use crate::truncation::{
    schedule_expanding, schedule_fixed, schedule_gamma_mt, schedule_shrinking_aux, RadiusRule, TruncationSchedule,
};
use crate::{Matrix, Vector};

/// Regression model of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    /// `R(z) = −Σ C_i (z − root)^i` plus additive noise.
    Polynomial {
        root: f64,
        coefficients: Vec<f64>,
        #[serde(default)]
        noise: NoiseSampler,
    },
    /// `R(z) = root − z` plus additive noise.
    Linear {
        root: Vec<f64>,
        #[serde(default)]
        noise: NoiseSampler,
    },
    /// Gamma(θ, 1) shape estimation; starting points are initial estimates.
    GammaShape { theta: f64 },
    /// `X_t = θ X_{t−1} + ξ_t` with standard normal innovations, estimated by
    /// recursive least squares. Starting points are `θ̂_0`; step and truncation are ignored.
    Ar1 {
        theta: f64,
        #[serde(default)]
        x0: f64,
        #[serde(default = "one")]
        info0: f64,
    },
}

fn one() -> f64 {
    1.0
}

/// Step-size rule of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepSpec {
    /// `γ_t = 1/a(t)`.
    Scalar { a: TimeExpr },
    /// `γ_t⁻¹ = γ_0⁻¹ − Σ R'(Z_{s−1})`; rows of `γ_0⁻¹`.
    Optimal { gamma0_inv: Vec<Vec<f64>> },
}

impl Default for StepSpec {
    fn default() -> Self {
        StepSpec::Scalar {
            a: TimeExpr::parse("t").expect("valid"),
        }
    }
}

/// Centre of a shrinking schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuxSpec {
    /// The true root (an oracle centre, for experiments).
    Root,
    /// The previous iterate `Z_{t−1}`.
    LastIterate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RadiusSpec {
    #[default]
    Sum,
    Max,
}

/// Truncation schedule of a scenario.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TruncationSpec {
    #[default]
    Trivial,
    Fixed {
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
    /// `[−u(t), u(t)]` in every coordinate.
    Expanding {
        u: TimeExpr,
    },
    /// `[c1·(log(t+2))^{−1/2}, c2·(t+2)]`.
    GammaMt {
        c1: f64,
        c2: f64,
    },
    ShrinkingAux {
        aux: AuxSpec,
        c: f64,
        d: TimeExpr,
        a: TimeExpr,
        #[serde(default)]
        radius: RadiusSpec,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    Trajectory,
    Histogram,
    Linearity,
    Rate,
}

/// Statistic collected per replication.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    /// First coordinate of `Z_T`.
    #[default]
    FinalIterate,
    /// `√T (Z_T − z⁰)` in the first coordinate; `√Î_T (θ̂_T − θ)` for AR(1).
    ScaledError,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AutoRange {
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HistRange {
    Auto(AutoRange),
    Fixed([f64; 2]),
}

impl Default for HistRange {
    fn default() -> Self {
        HistRange::Auto(AutoRange::Auto)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistogramSpec {
    pub bins: usize,
    #[serde(default)]
    pub range: HistRange,
    #[serde(default)]
    pub statistic: Statistic,
}

impl Default for HistogramSpec {
    fn default() -> Self {
        Self {
            bins: 30,
            range: HistRange::default(),
            statistic: Statistic::default(),
        }
    }
}

/// Starting point: a scalar or a vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Start {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl Start {
    pub fn to_vec(&self) -> Vec<f64> {
        match self {
            Start::Scalar(x) => vec![*x],
            Start::Vector(v) => v.clone(),
        }
    }
}

/// A complete experiment description, usually read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub horizon: usize,
    #[serde(default = "one_rep")]
    pub replications: usize,
    pub starts: Vec<Start>,
    /// Defaults to 1, 2, 5, 10, … up to the horizon.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoints: Option<Vec<usize>>,
    #[serde(default)]
    pub outputs: Vec<OutputKind>,
    /// Exponent `δ` of the rate output `a_t^δ ‖Z_t − z⁰‖²`.
    #[serde(default = "one")]
    pub rate_delta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_root_noise: Option<bool>,
    pub model: ModelSpec,
    #[serde(default)]
    pub step: StepSpec,
    #[serde(default)]
    pub truncation: TruncationSpec,
    #[serde(default)]
    pub histogram: HistogramSpec,
}

fn one_rep() -> usize {
    1
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Sets `key` (dotted path) to `value`, parsed as a TOML value or taken as a string.
    pub fn with_override(&self, assignment: &str) -> Result<Self> {
        self.with_overrides(&[assignment])
    }

    /// Applies several `key=value` assignments, validating only the final result.
    pub fn with_overrides<S: AsRef<str>>(&self, assignments: &[S]) -> Result<Self> {
        let mut tree = toml::Value::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        for assignment in assignments {
            let assignment = assignment.as_ref();
            let (key, raw) = assignment
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
            set_path(&mut tree, key.trim(), parse_toml_value(raw.trim()))?;
        }
        let s: Scenario = tree
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        match &self.model {
            ModelSpec::Linear { root, .. } => root.len(),
            _ => 1,
        }
    }

    pub fn checkpoints(&self) -> Vec<usize> {
        self.checkpoints
            .clone()
            .unwrap_or_else(|| log_checkpoints(self.horizon))
    }

    pub fn wants(&self, kind: OutputKind) -> bool {
        self.outputs.contains(&kind)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::param("replications", "must be >= 1"));
        }
        if self.horizon == 0 {
            return Err(Error::param("horizon", "must be >= 1"));
        }
        if self.starts.is_empty() {
            return Err(Error::param("starts", "need at least one starting point"));
        }
        let m = self.dim();
        if m == 0 {
            return Err(Error::param("model.root", "must be nonempty"));
        }
        for s in &self.starts {
            let v = s.to_vec();
            if v.len() != m {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    found: v.len(),
                });
            }
        }
        if let Some(c) = &self.checkpoints {
            if c.is_empty() || c[0] == 0 || c.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::param(
                    "checkpoints",
                    "must be nonempty, positive and strictly increasing",
                ));
            }
            if *c.last().unwrap() > self.horizon {
                return Err(Error::param("checkpoints", "must not exceed the horizon"));
            }
        }
        if self.histogram.bins < 2 {
            return Err(Error::param("histogram.bins", "must be >= 2"));
        }
        if let HistRange::Fixed([lo, hi]) = self.histogram.range {
            if !(lo < hi) {
                return Err(Error::param("histogram.range", "need lower < upper"));
            }
        }
        if !(self.rate_delta > 0.0 && self.rate_delta <= 1.0) {
            return Err(Error::param("rate_delta", "must lie in (0, 1]"));
        }
        if self.is_ar1() {
            if self.wants(OutputKind::Linearity) || self.wants(OutputKind::Rate) {
                return Err(Error::Config("linearity and rate outputs need an SA model".into()));
            }
            return Ok(());
        }
        if self.wants(OutputKind::Rate) && !matches!(self.step, StepSpec::Scalar { .. }) {
            return Err(Error::Config("rate output needs a scalar step rule".into()));
        }
        // Building validates formulas, noise and dimensions.
        let field = self.build_field()?;
        self.build_step(&field)?;
        self.build_truncation(&field)?;
        Ok(())
    }

    pub fn is_ar1(&self) -> bool {
        matches!(self.model, ModelSpec::Ar1 { .. })
    }

    /// The regression field; AR(1) scenarios have none.
    pub fn build_field(&self) -> Result<Arc<dyn FieldModel>> {
        Ok(match &self.model {
            ModelSpec::Polynomial {
                root,
                coefficients,
                noise,
            } => Arc::new(PolynomialField::new(*root, coefficients.clone(), *noise)?),
            ModelSpec::Linear { root, noise } => {
                Arc::new(LinearField::new(StateVector::new(root.clone())?, noise.validated()?))
            }
            ModelSpec::GammaShape { theta } => Arc::new(GammaShapeField::new(*theta)?),
            ModelSpec::Ar1 { .. } => return Err(Error::Config("AR(1) scenarios have no regression field".into())),
        })
    }

    pub fn build_step(&self, field: &Arc<dyn FieldModel>) -> Result<StepSizeRule> {
        match &self.step {
            StepSpec::Scalar { a } => rule_scalar(a.to_fn()),
            StepSpec::Optimal { gamma0_inv } => {
                let m = self.dim();
                if gamma0_inv.len() != m || gamma0_inv.iter().any(|r| r.len() != m) {
                    return Err(Error::param("step.gamma0_inv", format!("must be {m}x{m}")));
                }
                let g = Matrix::from_fn(m, m, |i, j| gamma0_inv[i][j]);
                rule_optimal_from_jacobian(Arc::clone(field), g)
            }
        }
    }

    pub fn build_truncation(&self, field: &Arc<dyn FieldModel>) -> Result<TruncationSchedule> {
        Ok(match &self.truncation {
            TruncationSpec::Trivial => TruncationSchedule::trivial(),
            TruncationSpec::Fixed { lower, upper } => {
                schedule_fixed(Vector::from_column_slice(lower), Vector::from_column_slice(upper))?
            }
            TruncationSpec::Expanding { u } => schedule_expanding(u.to_fn()),
            TruncationSpec::GammaMt { c1, c2 } => schedule_gamma_mt(*c1, *c2)?,
            TruncationSpec::ShrinkingAux { aux, c, d, a, radius } => {
                let aux_fn: crate::truncation::AuxFn = match aux {
                    AuxSpec::Root => {
                        let root = field.root().as_vector().clone();
                        Arc::new(move |_, _| root.clone())
                    }
                    AuxSpec::LastIterate => {
                        let m = field.dim();
                        Arc::new(move |t, h: &History<'_>| {
                            h.iterate(t - 1)
                                .map(Vector::from_column_slice)
                                .unwrap_or_else(|| Vector::zeros(m))
                        })
                    }
                };
                let radius = match radius {
                    RadiusSpec::Sum => RadiusRule::Sum,
                    RadiusSpec::Max => RadiusRule::Max,
                };
                schedule_shrinking_aux(aux_fn, *c, d.to_fn(), a.to_fn(), radius)?
            }
        })
    }

    /// Configuration for one starting point; the seed is set per replication.
    pub fn sa_config(&self, start: &Start) -> Result<SaConfig> {
        let field = self.build_field()?;
        let step = self.build_step(&field)?;
        let trunc = self.build_truncation(&field)?;
        let mut config = SaConfig::new(StateVector::new(start.to_vec())?, step, trunc, field, self.horizon, 0)?;
        let need_root = self.wants(OutputKind::Linearity);
        if let Some(r) = self.record_root_noise.or(need_root.then_some(true)) {
            config = config.with_root_noise(r);
        }
        Ok(config)
    }
}

fn parse_toml_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(tree: &mut toml::Value, key: &str, value: toml::Value) -> Result<()> {
    let mut node = tree;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override key `{key}`: `{part}` is not inside a table")))?;
        if i + 1 == parts.len() {
            table.insert(part.to_string(), value);
            return Ok(());
        }
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    Err(Error::Config(format!("empty override key `{key}`")))
}

/// Binned counts of a sample.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    /// `bins + 1` increasing edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Index of the fullest bin (first one on ties).
    pub fn mode_bin(&self) -> usize {
        let max = *self.counts.iter().max().unwrap_or(&0);
        self.counts.iter().position(|&c| c == max).unwrap_or(0)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["bin_lo", "bin_hi", "count"])?;
        for (i, c) in self.counts.iter().enumerate() {
            w.write_record([
                format!("{:.16e}", self.edges[i]),
                format!("{:.16e}", self.edges[i + 1]),
                c.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<histogram csv>", e))?;
        Ok(())
    }
}

/// Equal-width histogram. Values outside a fixed range are counted in the edge bins.
pub fn emit_histogram(samples: &[f64], spec: &HistogramSpec) -> Result<Histogram> {
    if samples.is_empty() {
        return Err(Error::param("samples", "cannot bin an empty sample"));
    }
    if spec.bins < 2 {
        return Err(Error::param("bins", "must be >= 2"));
    }
    if let Some(x) = samples.iter().find(|x| !x.is_finite()) {
        return Err(Error::param("samples", format!("non-finite sample {x}")));
    }
    let (lo, hi) = match spec.range {
        HistRange::Fixed([lo, hi]) if lo < hi => (lo, hi),
        HistRange::Fixed(_) => return Err(Error::param("range", "need lower < upper")),
        HistRange::Auto(_) => {
            let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if lo == hi {
                (lo - 0.5, hi + 0.5)
            } else {
                (lo, hi)
            }
        }
    };
    let n = spec.bins;
    let width = (hi - lo) / n as f64;
    let edges: Vec<f64> = (0..=n)
        .map(|i| if i == n { hi } else { lo + width * i as f64 })
        .collect();
    let mut counts = vec![0usize; n];
    for &x in samples {
        let k = ((x - lo) / width).floor();
        let k = if k < 0.0 { 0 } else { (k as usize).min(n - 1) };
        counts[k] += 1;
    }
    Ok(Histogram { edges, counts })
}

/// Mean, variance and quantiles of one coordinate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    /// Unbiased sample variance (0 for a single value).
    pub variance: f64,
    pub q05: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
    pub q95: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let variance = if n > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Self {
            count: n,
            mean,
            variance,
            q05: quantile(values, 0.05),
            q25: quantile(values, 0.25),
            q50: quantile(values, 0.5),
            q75: quantile(values, 0.75),
            q95: quantile(values, 0.95),
        }
    }
}

/// What one replication produced.
#[derive(Debug, Clone)]
pub struct Replication {
    pub rep: usize,
    pub seed: u64,
    /// `Z_T` (or `θ̂_T` for AR(1)).
    pub final_iterate: Vec<f64>,
    pub statistic: f64,
    pub truncations: usize,
    /// Kept only when the trajectory output is requested.
    pub trajectory: Option<Trajectory>,
    /// `‖A_t(Z_t − Z_t*)‖` at the scenario checkpoints.
    pub linearity: Option<Vec<f64>>,
    pub rate: Option<Vec<f64>>,
    /// AR(1) only: batch least-squares estimate on the same sample.
    pub batch: Option<f64>,
    /// AR(1) only: the `θ̂_t` path.
    pub estimates: Option<Vec<f64>>,
}

/// All replications for one starting point, in replication order.
#[derive(Debug, Clone)]
pub struct StartResult {
    pub start: Vec<f64>,
    pub replications: Vec<Replication>,
}

impl StartResult {
    pub fn statistics(&self) -> Vec<f64> {
        self.replications.iter().map(|r| r.statistic).collect()
    }

    pub fn finals(&self, coord: usize) -> Vec<f64> {
        self.replications.iter().map(|r| r.final_iterate[coord]).collect()
    }

    /// Median over replications of the linearity residual at each checkpoint.
    pub fn median_linearity(&self) -> Option<Vec<f64>> {
        median_columns(self.replications.iter().map(|r| r.linearity.as_deref()))
    }

    pub fn median_rate(&self) -> Option<Vec<f64>> {
        median_columns(self.replications.iter().map(|r| r.rate.as_deref()))
    }
}

fn median_columns<'a>(rows: impl Iterator<Item = Option<&'a [f64]>>) -> Option<Vec<f64>> {
    let rows: Vec<&[f64]> = rows.collect::<Option<_>>()?;
    let k = rows.first()?.len();
    Some(
        (0..k)
            .map(|j| median(&rows.iter().map(|r| r[j]).collect::<Vec<_>>()))
            .collect(),
    )
}

#[derive(Debug, Clone)]
pub struct ScenarioResult {
    pub scenario: Scenario,
    pub base_seed: u64,
    pub checkpoints: Vec<usize>,
    pub starts: Vec<StartResult>,
}

/// `γ_t(z⁰)^{−1/2}`, the natural norming for a symmetric positive-definite step.
fn norming_from_gamma(gamma: &Matrix) -> Result<Matrix> {
    if gamma.nrows() == 1 {
        return Ok(Matrix::from_element(1, 1, 1.0 / gamma[(0, 0)].sqrt()));
    }
    let sym = (gamma + gamma.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    if eig.eigenvalues.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::InvalidMatrix("step at the root is not positive definite".into()));
    }
    let d = Matrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    Ok(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

/// Linearity report of one trajectory at `checkpoints`, with `A_t = γ_t(z⁰)^{−1/2}`.
pub fn linearity_report(
    traj: &Trajectory,
    field: &dyn FieldModel,
    rule: &StepSizeRule,
    checkpoints: &[usize],
) -> Result<LinearityReport> {
    let root = field.root().as_vector().clone();
    let norming_cache: std::cell::RefCell<Option<Matrix>> = Default::default();
    let gamma_at = |t: usize| {
        let g = rule.gamma_at(t, &root)?;
        *norming_cache.borrow_mut() = Some(norming_from_gamma(&g)?);
        Ok(g)
    };
    let norming = |_t: usize| norming_cache.borrow().clone().expect("gamma evaluated first");
    linearity_residual(traj, field, &gamma_at, &norming, checkpoints)
}

fn run_sa_replication(
    scenario: &Scenario,
    config: &SaConfig,
    rep: usize,
    seed: u64,
    checkpoints: &[usize],
) -> Result<Replication> {
    let config = config.clone().with_seed(seed);
    let traj = sa_run(&config)?;
    let root = config.field.root().as_vector().clone();
    let z_t = traj.final_iterate().to_vec();
    let statistic = match scenario.histogram.statistic {
        Statistic::FinalIterate => z_t[0],
        Statistic::ScaledError => (scenario.horizon as f64).sqrt() * (z_t[0] - root[0]),
    };
    let linearity = if scenario.wants(OutputKind::Linearity) {
        Some(linearity_report(&traj, config.field.as_ref(), &config.step_rule, checkpoints)?.residual_norm)
    } else {
        None
    };
    let rate = if scenario.wants(OutputKind::Rate) {
        let a = config
            .step_rule
            .scalar_sequence()
            .ok_or_else(|| Error::Config("rate output needs a scalar step rule".into()))?;
        Some(rate_tracker(&traj, &root, &|t| a(t), scenario.rate_delta, checkpoints)?.values)
    } else {
        None
    };
    Ok(Replication {
        rep,
        seed,
        final_iterate: z_t,
        statistic,
        truncations: traj.truncation_count(),
        trajectory: scenario.wants(OutputKind::Trajectory).then_some(traj),
        linearity,
        rate,
        batch: None,
        estimates: None,
    })
}

fn run_ar1_replication(scenario: &Scenario, start: f64, rep: usize, seed: u64) -> Result<Replication> {
    let ModelSpec::Ar1 { theta, x0, info0 } = scenario.model else {
        unreachable!("checked by caller")
    };
    let mut rng = rng_from_seed(seed);
    let xs = simulate_ar1(theta, x0, scenario.horizon, &mut rng);
    let mut state = Ar1State::new(start, info0, xs[0])?;
    let keep = scenario.wants(OutputKind::Trajectory);
    let mut path = Vec::with_capacity(if keep { scenario.horizon } else { 0 });
    for (t, &x) in xs.iter().enumerate().skip(1) {
        state = ar1_step(&state, x);
        if !state.theta_hat.is_finite() {
            return Err(Error::NonFinite {
                t,
                what: "AR(1) estimate",
                state: vec![state.theta_hat],
            });
        }
        if keep {
            path.push(state.theta_hat);
        }
    }
    let statistic = match scenario.histogram.statistic {
        Statistic::FinalIterate => state.theta_hat,
        Statistic::ScaledError => state.info.sqrt() * (state.theta_hat - theta),
    };
    Ok(Replication {
        rep,
        seed,
        final_iterate: vec![state.theta_hat],
        statistic,
        truncations: 0,
        trajectory: None,
        linearity: None,
        rate: None,
        batch: Some(ar1_batch_estimate(&xs, start, info0)),
        estimates: keep.then_some(path),
    })
}

/// Runs every replication of every starting point, in memory.
///
/// `jobs = 0` uses all available cores.
pub fn run_replications(scenario: &Scenario, base_seed: u64, jobs: usize) -> Result<ScenarioResult> {
    scenario.validate()?;
    let checkpoints = scenario.checkpoints();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let mut starts = Vec::with_capacity(scenario.starts.len());
    for start in &scenario.starts {
        let config = if scenario.is_ar1() {
            None
        } else {
            Some(scenario.sa_config(start)?)
        };
        let reps: Vec<Replication> = pool.install(|| {
            (0..scenario.replications)
                .into_par_iter()
                .map(|rep| {
                    let seed = base_seed.wrapping_add(rep as u64);
                    match &config {
                        Some(c) => run_sa_replication(scenario, c, rep, seed, &checkpoints),
                        None => run_ar1_replication(scenario, start.to_vec()[0], rep, seed),
                    }
                    .map_err(|e| Error::Replication {
                        rep,
                        source: Box::new(e),
                    })
                })
                .collect::<Result<Vec<_>>>()
        })?;
        starts.push(StartResult {
            start: start.to_vec(),
            replications: reps,
        });
    }
    Ok(ScenarioResult {
        scenario: scenario.clone(),
        base_seed,
        checkpoints,
        starts,
    })
}

#[derive(Serialize)]
struct StartSummary<'a> {
    start: &'a [f64],
    statistic: Statistic,
    summary: Summary,
    final_iterate: Vec<Summary>,
    truncation_fraction: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    median_linearity_residual: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    median_rate: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_batch_relative_gap: Option<f64>,
}

#[derive(Serialize)]
struct ScenarioSummary<'a> {
    name: &'a str,
    base_seed: u64,
    seed_rule: &'static str,
    horizon: usize,
    replications: usize,
    checkpoints: &'a [usize],
    starts: Vec<StartSummary<'a>>,
}

impl ScenarioResult {
    /// JSON summary with mean, variance and quantiles of the recorded statistic.
    pub fn summary_json(&self) -> serde_json::Value {
        let s = &self.scenario;
        let starts = self
            .starts
            .iter()
            .map(|sr| {
                let m = sr.start.len();
                let reps = sr.replications.len() as f64;
                let gap = sr
                    .replications
                    .iter()
                    .filter_map(|r| r.batch.map(|b| (r.final_iterate[0] - b).abs() / b.abs().max(1e-300)))
                    .fold(None, |acc: Option<f64>, g| Some(acc.map_or(g, |a| a.max(g))));
                StartSummary {
                    start: &sr.start,
                    statistic: s.histogram.statistic,
                    summary: Summary::of(&sr.statistics()),
                    final_iterate: (0..m).map(|i| Summary::of(&sr.finals(i))).collect(),
                    truncation_fraction: sr.replications.iter().map(|r| r.truncations).sum::<usize>() as f64
                        / (reps * s.horizon as f64),
                    median_linearity_residual: sr.median_linearity(),
                    median_rate: sr.median_rate(),
                    max_batch_relative_gap: gap,
                }
            })
            .collect();
        serde_json::to_value(ScenarioSummary {
            name: &s.name,
            base_seed: self.base_seed,
            seed_rule: "replication r uses base_seed + r",
            horizon: s.horizon,
            replications: s.replications,
            checkpoints: &self.checkpoints,
            starts,
        })
        .expect("plain data serializes")
    }

    /// Writes the requested CSV outputs and `<name>_summary.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let s = &self.scenario;
        let multi = self.starts.len() > 1;
        let mut written = Vec::new();
        let file = |kind: &str, k: usize| {
            if multi {
                dir.join(format!("{}_{kind}_start{k}.csv", s.name))
            } else {
                dir.join(format!("{}_{kind}.csv", s.name))
            }
        };
        for (k, sr) in self.starts.iter().enumerate() {
            if s.wants(OutputKind::Trajectory) {
                let path = file("trajectory", k);
                with_file(&path, |w| {
                    if s.is_ar1() {
                        write_ar1_paths(w, sr)
                    } else {
                        let trajs: Vec<(usize, &Trajectory)> = sr
                            .replications
                            .iter()
                            .filter_map(|r| r.trajectory.as_ref().map(|t| (r.rep, t)))
                            .collect();
                        write_trajectories_csv(w, &trajs)
                    }
                })?;
                written.push(path);
            }
            if s.wants(OutputKind::Histogram) {
                let path = file("histogram", k);
                let h = emit_histogram(&sr.statistics(), &s.histogram)?;
                with_file(&path, |w| h.write_csv(w))?;
                written.push(path);
            }
            for (kind, rows) in [
                (
                    OutputKind::Linearity,
                    sr.replications
                        .iter()
                        .map(|r| r.linearity.as_deref())
                        .collect::<Vec<_>>(),
                ),
                (
                    OutputKind::Rate,
                    sr.replications.iter().map(|r| r.rate.as_deref()).collect(),
                ),
            ] {
                if !s.wants(kind) {
                    continue;
                }
                let (name, col) = match kind {
                    OutputKind::Linearity => ("linearity", "residual_norm"),
                    _ => ("rate", "value"),
                };
                let path = file(name, k);
                with_file(&path, |w| {
                    let mut w = csv::Writer::from_writer(w);
                    w.write_record(["rep", "t", col])?;
                    for (r, row) in sr.replications.iter().zip(&rows) {
                        for (t, v) in self.checkpoints.iter().zip(row.unwrap_or(&[])) {
                            w.write_record([r.rep.to_string(), t.to_string(), format!("{v:.16e}")])?;
                        }
                    }
                    w.flush().map_err(|e| Error::io(&path, e))?;
                    Ok(())
                })?;
                written.push(path);
            }
        }
        let path = dir.join(format!("{}_summary.json", s.name));
        with_file(&path, |mut w| {
            serde_json::to_writer_pretty(&mut w, &self.summary_json())?;
            w.write_all(b"\n").map_err(|e| Error::io(&path, e))
        })?;
        written.push(path);
        Ok(written)
    }
}

fn write_ar1_paths<W: Write>(out: W, sr: &StartResult) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "rep", "theta_hat"])?;
    for r in &sr.replications {
        for (i, th) in r.estimates.iter().flatten().enumerate() {
            w.write_record([(i + 1).to_string(), r.rep.to_string(), format!("{th:.16e}")])?;
        }
    }
    w.flush().map_err(|e| Error::io("<ar1 csv>", e))?;
    Ok(())
}

fn with_file(path: &Path, body: impl FnOnce(&mut BufWriter<fs::File>) -> Result<()>) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    body(&mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Runs a scenario and writes its outputs into `out_dir`.
pub fn run_scenario(scenario: &Scenario, base_seed: u64, jobs: usize, out_dir: &Path) -> Result<Vec<PathBuf>> {
    run_replications(scenario, base_seed, jobs)?.write(out_dir)
}

/// Names accepted by [`builtin`].
pub const BUILTINS: [&str; 4] = ["poly", "gamma_mt", "gamma_ft", "ar1"];

fn expr(s: &str) -> TimeExpr {
    TimeExpr::parse(s).expect("builtin formula")
}

fn poly_base(name: &str) -> Scenario {
    Scenario {
        name: name.into(),
        horizon: 30,
        replications: 1,
        starts: vec![Start::Scalar(0.0)],
        checkpoints: None,
        outputs: vec![],
        rate_delta: 1.0,
        record_root_noise: None,
        model: ModelSpec::Polynomial {
            root: 2.0,
            coefficients: SEPTIC_COEFFS.to_vec(),
            noise: NoiseSampler::StudentT { df: 7.0 },
        },
        step: StepSpec::Scalar { a: expr("3t") },
        truncation: TruncationSpec::Expanding { u: expr("log(3t)") },
        histogram: HistogramSpec::default(),
    }
}

fn gamma_base(name: &str, truncation: TruncationSpec) -> Scenario {
    Scenario {
        name: name.into(),
        horizon: 100_000,
        replications: 200,
        starts: vec![Start::Scalar(1.0)],
        checkpoints: Some(vec![100, 1000, 10_000, 100_000]),
        outputs: vec![OutputKind::Histogram, OutputKind::Linearity, OutputKind::Rate],
        rate_delta: 1.0,
        record_root_noise: None,
        model: ModelSpec::GammaShape { theta: 0.1 },
        step: StepSpec::Scalar { a: expr("t") },
        truncation,
        histogram: HistogramSpec {
            bins: 40,
            range: HistRange::default(),
            statistic: Statistic::FinalIterate,
        },
    }
}

/// Built-in scenarios by name. `poly` expands to a path study and a histogram study.
pub fn builtin(name: &str) -> Result<Vec<Scenario>> {
    Ok(match name {
        "poly" => {
            let paths = Scenario {
                starts: vec![Start::Scalar(-2.0), Start::Scalar(0.0), Start::Scalar(5.0)],
                outputs: vec![OutputKind::Trajectory],
                ..poly_base("poly_paths")
            };
            let hist = Scenario {
                horizon: 100_000,
                replications: 500,
                checkpoints: Some(vec![100, 1000, 10_000, 100_000]),
                outputs: vec![OutputKind::Histogram],
                ..poly_base("poly_hist")
            };
            vec![paths, hist]
        }
        "gamma_mt" => vec![gamma_base("gamma_mt", TruncationSpec::GammaMt { c1: 0.1, c2: 1.0 })],
        "gamma_ft" => vec![gamma_base(
            "gamma_ft",
            TruncationSpec::Fixed {
                lower: vec![0.003],
                upper: vec![100.0],
            },
        )],
        "ar1" => vec![Scenario {
            name: "ar1".into(),
            horizon: 2000,
            replications: 1000,
            starts: vec![Start::Scalar(0.0)],
            checkpoints: None,
            outputs: vec![OutputKind::Histogram],
            rate_delta: 1.0,
            record_root_noise: None,
            model: ModelSpec::Ar1 {
                theta: 0.5,
                x0: 0.0,
                info0: 1.0,
            },
            step: StepSpec::default(),
            truncation: TruncationSpec::Trivial,
            histogram: HistogramSpec {
                bins: 40,
                range: HistRange::default(),
                statistic: Statistic::ScaledError,
            },
        }],
        other => {
            return Err(Error::Config(format!(
                "unknown builtin `{other}`; expected one of {}",
                BUILTINS.join(", ")
            )))
        }
    })
}

/// Grid probes of the drift conditions for a scalar model at the given steps.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeReport {
    pub steps: Vec<usize>,
    /// `max (z − z⁰) R_t(z)` over the grid; `≤ 0` is the sign condition.
    pub drift_sign: Vec<f64>,
    pub drift_strength: Vec<DriftStrength>,
    pub eps: f64,
    /// Remainder of `R` rescaled to unit slope at the root.
    pub local_expansion: LocalExpansion,
}

/// Probes around the root over `[z⁰ − w, z⁰ + w]`, with `w` covering the trajectory.
///
/// Scalar models only. Truncation sets come from the trajectory's own history.
pub fn probe_report(scenario: &Scenario, traj: &Trajectory, steps: &[usize], eps: f64) -> Result<ProbeReport> {
    if scenario.is_ar1() || scenario.dim() != 1 {
        return Err(Error::Config("probes need a scalar SA model".into()));
    }
    let field = scenario.build_field()?;
    let schedule = scenario.build_truncation(&field)?;
    let z0 = field.root().as_vector().clone();
    let spread = (1..=traj.len())
        .map(|t| (traj.iterate(t)[0] - z0[0]).abs())
        .fold(0.0, f64::max);
    let w = spread.max(1.0 / eps) + 1.0;
    let n = 4001;
    let grid: Vec<Vector> = (0..n)
        .map(|i| Vector::from_element(1, z0[0] - w + 2.0 * w * i as f64 / (n - 1) as f64))
        .filter(|z| !matches!(scenario.model, ModelSpec::GammaShape { .. }) || z[0] > 0.0)
        .collect();
    let mut drift_sign = Vec::with_capacity(steps.len());
    let mut drift_strength = Vec::with_capacity(steps.len());
    for &t in steps {
        if t == 0 || t > traj.len() + 1 {
            return Err(Error::param(
                "steps",
                format!("step {t} outside 1..={}", traj.len() + 1),
            ));
        }
        drift_sign.push(probe_drift_sign(field.as_ref(), &z0, t, &grid)?);
        let set = schedule.set_at(t, &History::of(traj))?;
        drift_strength.push(probe_drift_strength(field.as_ref(), &z0, t, eps, &grid, &set)?);
    }
    let h = History::empty(1);
    let slope = match field.jacobian(1, &z0) {
        Some(j) => j[(0, 0)],
        None => {
            let d = 1e-5 * (1.0 + z0[0].abs());
            let f = |x: f64| field.regression(1, &Vector::from_element(1, x), &h)[0];
            (f(z0[0] + d) - f(z0[0] - d)) / (2.0 * d)
        }
    };
    if !(slope < 0.0) {
        return Err(Error::Config(format!(
            "regression slope at the root is {slope}, not negative"
        )));
    }
    let scaled = |z: &Vector| field.regression(1, z, &h) / (-slope);
    let r0 = 0.25 * z0[0].abs().max(1.0).min(w);
    let radii: Vec<f64> = (0..10).map(|k| r0 * 0.5f64.powi(k)).collect();
    let local_expansion = probe_local_expansion(&scaled, &z0, &radii, None)?;
    Ok(ProbeReport {
        steps: steps.to_vec(),
        drift_sign,
        drift_strength,
        eps,
        local_expansion,
    })
}
