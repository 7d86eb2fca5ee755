//! Experiment configuration: TOML parsing, validation, and expansion of the
//! parameter grid into runnable points.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::FinalMetric;
use crate::compressors::Compressor;
use crate::engine::{Algorithm, AlgorithmSpec, DelayModel};
use crate::error::{Error, Result};
use crate::numerics::{RngStream, StreamPurpose, Vector};
use crate::objectives::{
    make_least_squares, make_nonconvex_radial, make_quadratic, make_star_convex_1d, LeastSquares,
    Objective,
};
use crate::oracles::GradientOracle;
use crate::schedules::{
    stepsize_cap, stepsize_preset, PresetInputs, Regime, StepsizeSchedule, WeightSchedule,
};

fn config_error(field: &str, msg: impl std::fmt::Display) -> Error {
    Error::InvalidConfig(format!("{field}: {msg}"))
}

/// A scalar or a list of values; lists expand into a grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Grid<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> Grid<T> {
    pub fn values(&self) -> Vec<T> {
        match self {
            Grid::One(v) => vec![v.clone()],
            Grid::Many(v) => v.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub objective: ObjectiveConfig,
    #[serde(default)]
    pub oracle: OracleConfig,
    pub algorithm: AlgorithmConfig,
    pub schedule: ScheduleConfig,
    pub run: RunConfig,
    #[serde(default)]
    pub report: ReportConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveConfig {
    /// quadratic, star-convex-1d, nonconvex-radial, least-squares
    pub kind: String,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_mu")]
    pub mu: f64,
    #[serde(default = "default_smoothness")]
    pub smoothness: f64,
    /// quadratic minimizer, as a constant fill value
    #[serde(default)]
    pub optimum: f64,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_noise_level")]
    pub noise_level: f64,
    #[serde(default)]
    pub data_seed: u64,
}

fn default_dim() -> usize {
    20
}
fn default_mu() -> f64 {
    0.1
}
fn default_smoothness() -> f64 {
    1.0
}
fn default_samples() -> usize {
    100
}
fn default_noise_level() -> f64 {
    0.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    /// none, additive, finite-sum, strong-growth
    #[serde(default = "default_oracle_kind")]
    pub kind: String,
    #[serde(default)]
    pub sigma_sq: f64,
    #[serde(default)]
    pub m: f64,
    /// Only Gaussian additive noise is implemented; recorded for provenance.
    #[serde(default = "default_distribution")]
    pub distribution: String,
}

fn default_oracle_kind() -> String {
    "none".into()
}
fn default_distribution() -> String {
    "gaussian".into()
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            kind: default_oracle_kind(),
            sigma_sq: 0.0,
            m: 0.0,
            distribution: default_distribution(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmConfig {
    /// sgd, dsgd, ecsgd, minibatch, localsgd
    pub kind: String,
    #[serde(default = "one_usize")]
    pub tau: Grid<usize>,
    #[serde(default = "one_usize")]
    pub workers: Grid<usize>,
    /// fixed or iid-bounded
    #[serde(default = "default_delay")]
    pub delay: String,
    /// identity, rand-drop, rand-coordinate, top-k
    #[serde(default = "default_compressor")]
    pub compressor: String,
    /// rand-drop tau, rand-coordinate delta, or top-k k
    #[serde(default)]
    pub compressor_param: Option<Grid<f64>>,
}

fn one_usize() -> Grid<usize> {
    Grid::One(1)
}
fn default_delay() -> String {
    "fixed".into()
}
fn default_compressor() -> String {
    "identity".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    /// `[family-]regime`, e.g. `dsgd-strongly-convex-decreasing`
    #[serde(default)]
    pub preset: Option<String>,
    /// constant stepsize used when no preset is given
    #[serde(default)]
    pub gamma: Option<f64>,
    /// weights for the averaged iterate when no preset is given
    #[serde(default = "default_weights")]
    pub weights: String,
    /// enforce the admissible stepsize cap
    #[serde(default = "yes")]
    pub guard: bool,
}

fn default_weights() -> String {
    "uniform".into()
}
fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub horizon: u64,
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub seed_count: Option<usize>,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    #[serde(default = "default_x0_fill")]
    pub x0_fill: f64,
    #[serde(default = "default_record_every")]
    pub record_every: u64,
    pub output: String,
}

fn default_x0_fill() -> f64 {
    1.0
}
fn default_record_every() -> u64 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportConfig {
    #[serde(default)]
    pub metric: FinalMetric,
    #[serde(default = "default_max_ratio")]
    pub max_ratio: f64,
    #[serde(default)]
    pub hitting_threshold: Option<f64>,
    #[serde(default = "default_exponent_range")]
    pub exponent_range: [f64; 2],
}

fn default_max_ratio() -> f64 {
    2.0
}
fn default_exponent_range() -> [f64; 2] {
    [-1.3, -0.7]
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            metric: FinalMetric::default(),
            max_ratio: default_max_ratio(),
            hitting_threshold: None,
            exponent_range: default_exponent_range(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// SHA-256 of the canonical JSON form of the parsed configuration.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&canonical))
    }

    pub fn seeds(&self) -> Result<Vec<u64>> {
        match (&self.run.seeds, self.run.seed_count) {
            (Some(_), Some(_)) => Err(config_error(
                "run.seeds",
                "give either an explicit list or run.seed_count, not both",
            )),
            (Some(list), None) if list.is_empty() => Err(config_error("run.seeds", "empty list")),
            (Some(list), None) => {
                let mut s = list.clone();
                s.sort_unstable();
                s.dedup();
                if s.len() != list.len() {
                    return Err(config_error("run.seeds", "duplicate seeds"));
                }
                Ok(list.clone())
            }
            (None, Some(0)) => Err(config_error("run.seed_count", "must be >= 1")),
            (None, Some(n)) => Ok((0..n as u64).map(|i| self.run.base_seed + i).collect()),
            (None, None) => Ok(vec![self.run.base_seed]),
        }
    }
}

/// A fully resolved configuration point.
#[derive(Clone, Debug)]
pub struct Point {
    pub label: String,
    pub params: BTreeMap<String, String>,
    pub spec: AlgorithmSpec,
    pub x0: Vector,
    pub kappa: Option<f64>,
    pub effective_delay: f64,
    pub cap: f64,
    pub tau: usize,
    pub workers: usize,
}

enum BuiltObjective {
    Plain(Arc<dyn Objective>),
    LeastSquares(Arc<LeastSquares>),
}

impl BuiltObjective {
    fn as_dyn(&self) -> Arc<dyn Objective> {
        match self {
            BuiltObjective::Plain(f) => f.clone(),
            BuiltObjective::LeastSquares(f) => f.clone(),
        }
    }
}

fn build_objective(c: &ObjectiveConfig) -> Result<BuiltObjective> {
    let field_err = |e: Error| match e {
        Error::InvalidParameter(m) => config_error("objective", m),
        other => other,
    };
    Ok(match c.kind.as_str() {
        "quadratic" => BuiltObjective::Plain(Arc::new(
            make_quadratic(
                c.dim,
                c.mu,
                c.smoothness,
                Vector::filled(c.dim.max(1), c.optimum),
            )
            .map_err(field_err)?,
        )),
        "star-convex-1d" => {
            if c.dim != 1 {
                return Err(config_error(
                    "objective.dim",
                    "star-convex-1d is one-dimensional",
                ));
            }
            BuiltObjective::Plain(Arc::new(make_star_convex_1d()))
        }
        "nonconvex-radial" => BuiltObjective::Plain(Arc::new(
            make_nonconvex_radial(c.dim, c.mu).map_err(field_err)?,
        )),
        "least-squares" => {
            let mut rng = RngStream::for_purpose(c.data_seed, 0, StreamPurpose::Data);
            BuiltObjective::LeastSquares(Arc::new(
                make_least_squares(c.samples, c.dim, &mut rng, c.noise_level).map_err(field_err)?,
            ))
        }
        other => {
            return Err(config_error(
                "objective.kind",
                format!(
                    "unknown objective '{other}' (expected quadratic, star-convex-1d, \
                     nonconvex-radial or least-squares)"
                ),
            ))
        }
    })
}

fn build_oracle(c: &OracleConfig, objective: &BuiltObjective) -> Result<GradientOracle> {
    if c.distribution != "gaussian" {
        return Err(config_error(
            "oracle.distribution",
            format!(
                "only 'gaussian' noise is supported, got '{}'",
                c.distribution
            ),
        ));
    }
    let field_err = |field: &'static str| {
        move |e: Error| match e {
            Error::InvalidParameter(m) => config_error(field, m),
            other => other,
        }
    };
    match c.kind.as_str() {
        "none" => Ok(GradientOracle::deterministic(objective.as_dyn())),
        "additive" => GradientOracle::additive(objective.as_dyn(), c.sigma_sq)
            .map_err(field_err("oracle.sigma_sq")),
        "strong-growth" => {
            GradientOracle::strong_growth(objective.as_dyn(), c.m).map_err(field_err("oracle.m"))
        }
        "finite-sum" => match objective {
            BuiltObjective::LeastSquares(ls) => GradientOracle::finite_sum(ls.clone()),
            BuiltObjective::Plain(_) => Err(config_error(
                "oracle.kind",
                "finite-sum sampling needs objective.kind = least-squares",
            )),
        },
        other => Err(config_error(
            "oracle.kind",
            format!(
                "unknown oracle '{other}' (expected none, additive, finite-sum or strong-growth)"
            ),
        )),
    }
}

const FAMILIES: [&str; 5] = ["sgd", "dsgd", "ecsgd", "minibatch", "localsgd"];

/// Splits a preset name into an optional algorithm family and a regime.
pub fn parse_preset(name: &str) -> Result<(Option<&'static str>, Regime)> {
    for family in FAMILIES {
        if let Some(rest) = name.strip_prefix(family).and_then(|r| r.strip_prefix('-')) {
            let regime = rest
                .parse()
                .map_err(|_| config_error("schedule.preset", format!("unknown preset '{name}'")))?;
            return Ok((Some(family), regime));
        }
    }
    let regime = name
        .parse()
        .map_err(|_| config_error("schedule.preset", format!("unknown preset '{name}'")))?;
    Ok((None, regime))
}

fn compressor_for(kind: &str, param: Option<f64>) -> Result<Compressor> {
    let need = |p: Option<f64>| {
        p.ok_or_else(|| {
            config_error(
                "algorithm.compressor_param",
                format!("'{kind}' needs a parameter"),
            )
        })
    };
    let field_err = |e: Error| match e {
        Error::InvalidParameter(m) => config_error("algorithm.compressor_param", m),
        other => other,
    };
    match kind {
        "identity" => Ok(Compressor::Identity),
        "rand-drop" => Compressor::rand_drop(need(param)?).map_err(field_err),
        "rand-coordinate" => Compressor::rand_coordinate(need(param)?).map_err(field_err),
        "top-k" => {
            let k = need(param)?;
            if k.fract() != 0.0 || k < 1.0 {
                return Err(config_error(
                    "algorithm.compressor_param",
                    format!("top-k needs a positive integer k, got {k}"),
                ));
            }
            Compressor::top_k(k as usize).map_err(field_err)
        }
        other => Err(config_error(
            "algorithm.compressor",
            format!(
                "unknown compressor '{other}' (expected identity, rand-drop, rand-coordinate or top-k)"
            ),
        )),
    }
}

fn fmt_param(v: f64) -> String {
    format!("{v}")
}

/// Expands the grid and resolves every point's algorithm, stepsize and
/// weights. Fails before anything runs if any point is invalid.
pub fn build_points(cfg: &ExperimentConfig) -> Result<Vec<Point>> {
    let objective = build_objective(&cfg.objective)?;
    let oracle = build_oracle(&cfg.oracle, &objective)?;
    let f = objective.as_dyn();
    let d = f.dim();
    if cfg.run.horizon < 1 {
        return Err(config_error("run.horizon", "must be >= 1"));
    }
    if cfg.run.record_every < 1 {
        return Err(config_error("run.record_every", "must be >= 1"));
    }
    cfg.seeds()?;
    let x0 = match &cfg.run.x0 {
        Some(v) if v.len() != d => {
            return Err(config_error(
                "run.x0",
                format!("has {} entries, objective dimension is {d}", v.len()),
            ))
        }
        Some(v) => Vector::new(v.clone()).map_err(|e| config_error("run.x0", e))?,
        None => Vector::filled(d, cfg.run.x0_fill),
    };
    let kind = cfg.algorithm.kind.as_str();
    if !FAMILIES.contains(&kind) {
        return Err(config_error(
            "algorithm.kind",
            format!(
                "unknown algorithm '{kind}' (expected one of {})",
                FAMILIES.join(", ")
            ),
        ));
    }
    let delay = match cfg.algorithm.delay.as_str() {
        "fixed" => DelayModel::Fixed,
        "iid-bounded" => DelayModel::IidBounded,
        other => {
            return Err(config_error(
                "algorithm.delay",
                format!("unknown delay model '{other}' (expected fixed or iid-bounded)"),
            ))
        }
    };
    let taus = cfg.algorithm.tau.values();
    let workers = cfg.algorithm.workers.values();
    if taus.is_empty() {
        return Err(config_error("algorithm.tau", "empty grid"));
    }
    if workers.is_empty() {
        return Err(config_error("algorithm.workers", "empty grid"));
    }
    let comp_params: Vec<Option<f64>> = match &cfg.algorithm.compressor_param {
        None => vec![None],
        Some(g) => g.values().into_iter().map(Some).collect(),
    };

    let preset = cfg
        .schedule
        .preset
        .as_deref()
        .map(parse_preset)
        .transpose()?;
    if let Some((Some(family), _)) = preset {
        if family != kind {
            return Err(config_error(
                "schedule.preset",
                format!("preset family '{family}' does not match algorithm '{kind}'"),
            ));
        }
    }
    if preset.is_some() && cfg.schedule.gamma.is_some() {
        return Err(config_error(
            "schedule.gamma",
            "give either a preset or a constant gamma, not both",
        ));
    }
    if preset.is_none() && cfg.schedule.gamma.is_none() {
        return Err(config_error(
            "schedule",
            "needs a preset or a constant gamma",
        ));
    }

    let x_star = f.x_star().cloned();
    let initial_distance_sq = x_star.as_ref().map(|s| x0.dist_sq(s)).unwrap_or(0.0);
    let initial_gap = f.value(&x0) - f.f_star();

    let mut points = Vec::new();
    for &tau in &taus {
        for &k in &workers {
            for &cp in &comp_params {
                let algorithm = match kind {
                    "sgd" => Algorithm::PlainSgd,
                    "dsgd" => Algorithm::DelayedSgd { tau, delay },
                    "minibatch" => Algorithm::MiniBatch { tau },
                    "localsgd" => Algorithm::LocalSgd { workers: k, tau },
                    _ => Algorithm::ErrorCompensated {
                        compressor: compressor_for(&cfg.algorithm.compressor, cp)?,
                    },
                };
                algorithm.validate(d).map_err(|e| match e {
                    Error::InvalidParameter(m) => config_error("algorithm", m),
                    other => other,
                })?;
                let tau_eff = algorithm.effective_delay(d);
                let cap = stepsize_cap(f.smoothness(), tau_eff, oracle.m());
                let (stepsize, weights, kappa) = match preset {
                    Some((_, regime)) => {
                        let p = stepsize_preset(
                            regime,
                            PresetInputs {
                                l: f.smoothness(),
                                mu: f.quasi_convexity(),
                                m: oracle.m(),
                                sigma_sq: oracle.sigma_sq(),
                                tau_eff,
                                horizon: cfg.run.horizon,
                                initial_distance_sq,
                                initial_gap,
                            },
                        )?;
                        (p.stepsize, p.weights, p.kappa)
                    }
                    None => {
                        let gamma = cfg.schedule.gamma.expect("checked above");
                        if !(gamma > 0.0) || !gamma.is_finite() {
                            return Err(config_error("schedule.gamma", "must be positive"));
                        }
                        let weights = match cfg.schedule.weights.as_str() {
                            "uniform" => WeightSchedule::Uniform,
                            other => {
                                return Err(config_error(
                                    "schedule.weights",
                                    format!("only 'uniform' weights go with a constant gamma, got '{other}'"),
                                ))
                            }
                        };
                        (StepsizeSchedule::unchecked_constant(gamma), weights, None)
                    }
                };
                let spec = if cfg.schedule.guard {
                    AlgorithmSpec::new(algorithm, oracle.clone(), stepsize, weights).map_err(
                        |e| match e {
                            Error::ConfigurationRejected(m) => {
                                Error::ConfigurationRejected(format!("schedule.gamma: {m}"))
                            }
                            other => other,
                        },
                    )?
                } else {
                    AlgorithmSpec::unguarded(algorithm, oracle.clone(), stepsize, weights)?
                };

                let mut label = kind.to_string();
                let mut params = BTreeMap::new();
                params.insert("objective".into(), cfg.objective.kind.clone());
                params.insert("dim".into(), d.to_string());
                params.insert("mu".into(), fmt_param(f.quasi_convexity()));
                params.insert("smoothness".into(), fmt_param(f.smoothness()));
                params.insert("oracle".into(), cfg.oracle.kind.clone());
                params.insert("sigma_sq".into(), fmt_param(oracle.sigma_sq()));
                params.insert("m".into(), fmt_param(oracle.m()));
                params.insert("algorithm".into(), kind.to_string());
                params.insert("horizon".into(), cfg.run.horizon.to_string());
                params.insert(
                    "schedule".into(),
                    cfg.schedule
                        .preset
                        .clone()
                        .unwrap_or_else(|| format!("constant-{}", fmt_param(stepsize.first()))),
                );
                match algorithm {
                    Algorithm::DelayedSgd { .. } => {
                        label.push_str(&format!("-tau{tau}"));
                        params.insert("tau".into(), tau.to_string());
                        params.insert("delay".into(), cfg.algorithm.delay.clone());
                    }
                    Algorithm::MiniBatch { .. } => {
                        label.push_str(&format!("-tau{tau}"));
                        params.insert("tau".into(), tau.to_string());
                    }
                    Algorithm::LocalSgd { .. } => {
                        label.push_str(&format!("-k{k}-tau{tau}"));
                        params.insert("tau".into(), tau.to_string());
                        params.insert("workers".into(), k.to_string());
                    }
                    Algorithm::ErrorCompensated { .. } => {
                        label.push_str(&format!("-{}", cfg.algorithm.compressor));
                        if let Some(p) = cp {
                            label.push_str(&format!("{}", p));
                        }
                        params.insert("compressor".into(), cfg.algorithm.compressor.clone());
                        params.insert(
                            "compressor_param".into(),
                            cp.map(fmt_param).unwrap_or_default(),
                        );
                    }
                    Algorithm::PlainSgd => {}
                }
                if points.iter().any(|p: &Point| p.label == label) {
                    return Err(config_error(
                        "algorithm",
                        format!("grid produces the point '{label}' twice"),
                    ));
                }
                points.push(Point {
                    label,
                    params,
                    cap: spec.cap().min(cap),
                    spec,
                    x0: x0.clone(),
                    kappa,
                    effective_delay: tau_eff,
                    tau,
                    workers: k,
                });
            }
        }
    }
    Ok(points)
}
