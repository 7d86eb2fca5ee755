//! Stepsize and averaging-weight schedules, slow-sequence validators, and
//! the stepsize presets derived from the convergence guarantees.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::numerics::Vector;

const SLOW_TOL: f64 = 1e-12;

fn check_positive(seq: &[f64], tau: f64) -> Result<()> {
    if seq.len() < 2 {
        return Err(invalid("need at least two sequence values"));
    }
    if !(tau > 0.0) {
        return Err(invalid(format!("tau must be positive, got {tau}")));
    }
    if let Some(v) = seq.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(invalid(format!(
            "sequence entries must be positive, found {v}"
        )));
    }
    Ok(())
}

/// True iff `a_{t+1} <= a_t` and `a_{t+1} (1 + 1/(2 tau)) >= a_t` on every
/// consecutive pair.
pub fn is_tau_slow_decreasing(seq: &[f64], tau: f64) -> Result<bool> {
    check_positive(seq, tau)?;
    let growth = 1.0 + 1.0 / (2.0 * tau);
    Ok(seq.windows(2).all(|w| {
        let (a, b) = (w[0], w[1]);
        b <= a * (1.0 + SLOW_TOL) && b * growth >= a * (1.0 - SLOW_TOL)
    }))
}

/// True iff the reciprocal sequence is `tau`-slow decreasing.
pub fn is_tau_slow_increasing(seq: &[f64], tau: f64) -> Result<bool> {
    check_positive(seq, tau)?;
    let inv: Vec<f64> = seq.iter().map(|v| 1.0 / v).collect();
    is_tau_slow_decreasing(&inv, tau)
}

/// `40 L (tau_eff + M) / mu`
pub fn decreasing_kappa(l: f64, mu: f64, tau_eff: f64, m: f64) -> Result<f64> {
    if !(mu > 0.0) {
        return Err(Error::RequiresStrongConvexity(mu));
    }
    if !(tau_eff >= 1.0) {
        return Err(invalid(format!(
            "effective delay must be >= 1, got {tau_eff}"
        )));
    }
    if !(l > 0.0) || !(m >= 0.0) {
        return Err(invalid(format!(
            "need L > 0 and M >= 0, got L = {l}, M = {m}"
        )));
    }
    Ok(40.0 * l * (tau_eff + m) / mu)
}

/// Largest stepsize admitted by the guarantees: `1 / (10 L (tau_eff + M))`.
pub fn stepsize_cap(l: f64, tau_eff: f64, m: f64) -> f64 {
    1.0 / (10.0 * l * (tau_eff + m))
}

/// Constant stepsize minimizing `r0 / (gamma (T+1)) + c gamma` subject to
/// `gamma <= 1 / d_cap`.
pub fn tune_constant_stepsize(r0: f64, c: f64, d_cap: f64, horizon: u64) -> f64 {
    let cap = 1.0 / d_cap;
    if c <= 0.0 {
        return cap;
    }
    cap.min((r0 / (c * (horizon as f64 + 1.0))).sqrt())
}

/// Constant stepsize for the linearly contracting case, balancing
/// `r0 exp(-a gamma T) / gamma + c gamma`:
/// `gamma = min(1/d_cap, ln(max(e, a^2 r0 T^2 / c)) / (a T))`.
///
/// This closed form follows the usual tuning argument for such recursions;
/// constants inside the logarithm are not optimized.
pub fn tune_contracting_stepsize(r0: f64, c: f64, a: f64, d_cap: f64, horizon: u64) -> f64 {
    let cap = 1.0 / d_cap;
    if c <= 0.0 || horizon == 0 || a <= 0.0 {
        return cap;
    }
    let t = horizon as f64;
    let arg = (a * a * r0 * t * t / c).max(std::f64::consts::E);
    cap.min(arg.ln() / (a * t))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StepsizeKind {
    Constant {
        gamma: f64,
    },
    /// `gamma_t = 4 / (mu (kappa + t))`
    InverseTime {
        mu: f64,
        kappa: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StepsizeSchedule {
    pub kind: StepsizeKind,
    pub cap: f64,
}

impl StepsizeSchedule {
    /// Rejects schedules whose largest stepsize exceeds `cap`.
    pub fn new(kind: StepsizeKind, cap: f64) -> Result<Self> {
        let first = match kind {
            StepsizeKind::Constant { gamma } => gamma,
            StepsizeKind::InverseTime { mu, kappa } => {
                if !(mu > 0.0) {
                    return Err(Error::RequiresStrongConvexity(mu));
                }
                if !(kappa > 0.0) {
                    return Err(invalid(format!("kappa must be positive, got {kappa}")));
                }
                4.0 / (mu * kappa)
            }
        };
        if !(first > 0.0) || !first.is_finite() {
            return Err(invalid(format!("stepsize must be positive, got {first}")));
        }
        if first > cap * (1.0 + SLOW_TOL) {
            return Err(Error::ConfigurationRejected(format!(
                "stepsize {first:e} exceeds the admissible cap {cap:e}"
            )));
        }
        Ok(StepsizeSchedule { kind, cap })
    }

    pub fn constant(gamma: f64, cap: f64) -> Result<Self> {
        Self::new(StepsizeKind::Constant { gamma }, cap)
    }

    /// A constant schedule with no cap, for experiments outside the
    /// guaranteed regime.
    pub fn unchecked_constant(gamma: f64) -> Self {
        StepsizeSchedule {
            kind: StepsizeKind::Constant { gamma },
            cap: f64::INFINITY,
        }
    }

    #[inline]
    pub fn at(&self, t: u64) -> f64 {
        match self.kind {
            StepsizeKind::Constant { gamma } => gamma,
            StepsizeKind::InverseTime { mu, kappa } => 4.0 / (mu * (kappa + t as f64)),
        }
    }

    pub fn first(&self) -> f64 {
        self.at(0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum WeightSchedule {
    Uniform,
    /// `w_t = kappa + t`
    Linear {
        kappa: f64,
    },
    /// `w_t = rho^{-(t+1)}`
    Exponential {
        rho: f64,
    },
}

impl WeightSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            WeightSchedule::Uniform => Ok(()),
            WeightSchedule::Linear { kappa } if kappa > 0.0 => Ok(()),
            WeightSchedule::Exponential { rho } if rho > 0.0 && rho <= 1.0 => Ok(()),
            w => Err(invalid(format!("invalid weight schedule {w:?}"))),
        }
    }

    /// Raw weight `w_t`; may overflow for long exponential schedules, which
    /// is why averaging goes through [`WeightedAverage`].
    pub fn weight(&self, t: u64) -> f64 {
        match *self {
            WeightSchedule::Uniform => 1.0,
            WeightSchedule::Linear { kappa } => kappa + t as f64,
            WeightSchedule::Exponential { rho } => rho.powf(-(t as f64 + 1.0)),
        }
    }
}

/// Streaming `sum_t w_t x_t / sum_t w_t` using `xbar += (w_t / W_t)(x_t - xbar)`.
#[derive(Clone, Debug)]
pub struct WeightedAverage {
    schedule: WeightSchedule,
    t: u64,
    /// `W_t / w_t`, only used by the exponential schedule
    ratio: f64,
    mean: Option<Vector>,
}

impl WeightedAverage {
    pub fn new(schedule: WeightSchedule) -> Self {
        WeightedAverage {
            schedule,
            t: 0,
            ratio: 0.0,
            mean: None,
        }
    }

    fn share(&mut self) -> f64 {
        let t = self.t as f64;
        match self.schedule {
            WeightSchedule::Uniform => 1.0 / (t + 1.0),
            WeightSchedule::Linear { kappa } => {
                (kappa + t) / ((t + 1.0) * kappa + 0.5 * t * (t + 1.0))
            }
            WeightSchedule::Exponential { rho } => {
                self.ratio = 1.0 + rho * self.ratio;
                1.0 / self.ratio
            }
        }
    }

    pub fn push(&mut self, x: &[f64]) {
        let share = self.share();
        match &mut self.mean {
            None => self.mean = Some(Vector::from_slice_unchecked(x)),
            Some(m) => m
                .iter_mut()
                .zip(x)
                .for_each(|(mi, xi)| *mi += share * (xi - *mi)),
        }
        self.t += 1;
    }

    pub fn count(&self) -> u64 {
        self.t
    }

    pub fn value(&self) -> Option<&Vector> {
        self.mean.as_ref()
    }
}

pub fn weighted_average(points: &[Vector], weights: WeightSchedule) -> Result<Vector> {
    if points.is_empty() {
        return Err(invalid("cannot average an empty sequence"));
    }
    weights.validate()?;
    let mut avg = WeightedAverage::new(weights);
    for p in points {
        avg.push(p);
    }
    Ok(avg.value().cloned().expect("non-empty"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    StronglyConvexDecreasing,
    StronglyConvexConstant,
    WeaklyConvexConstant,
    NonconvexConstant,
}

impl Regime {
    pub const ALL: [Regime; 4] = [
        Regime::StronglyConvexDecreasing,
        Regime::StronglyConvexConstant,
        Regime::WeaklyConvexConstant,
        Regime::NonconvexConstant,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::StronglyConvexDecreasing => "strongly-convex-decreasing",
            Regime::StronglyConvexConstant => "strongly-convex-constant",
            Regime::WeaklyConvexConstant => "weakly-convex-constant",
            Regime::NonconvexConstant => "nonconvex-constant",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Regime::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| invalid(format!("unknown schedule regime '{s}'")))
    }
}

/// Problem constants the presets are built from.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct PresetInputs {
    pub l: f64,
    pub mu: f64,
    pub m: f64,
    pub sigma_sq: f64,
    pub tau_eff: f64,
    pub horizon: u64,
    /// `||x_0 - x*||^2`
    pub initial_distance_sq: f64,
    /// `f(x_0) - f*`
    pub initial_gap: f64,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct StepsizePreset {
    pub regime: Regime,
    pub stepsize: StepsizeSchedule,
    pub weights: WeightSchedule,
    pub kappa: Option<f64>,
    pub cap: f64,
}

pub fn stepsize_preset(regime: Regime, p: PresetInputs) -> Result<StepsizePreset> {
    if !(p.tau_eff >= 1.0) {
        return Err(invalid(format!(
            "effective delay must be >= 1, got {}",
            p.tau_eff
        )));
    }
    if !(p.l > 0.0) || !(p.m >= 0.0) || !(p.sigma_sq >= 0.0) {
        return Err(invalid("need L > 0, M >= 0, sigma^2 >= 0"));
    }
    let cap = stepsize_cap(p.l, p.tau_eff, p.m);
    let d_cap = 1.0 / cap;
    let preset = match regime {
        Regime::StronglyConvexDecreasing => {
            let kappa = decreasing_kappa(p.l, p.mu, p.tau_eff, p.m)?;
            StepsizePreset {
                regime,
                stepsize: StepsizeSchedule::new(
                    StepsizeKind::InverseTime { mu: p.mu, kappa },
                    cap,
                )?,
                weights: WeightSchedule::Linear { kappa },
                kappa: Some(kappa),
                cap,
            }
        }
        Regime::StronglyConvexConstant => {
            let kappa = decreasing_kappa(p.l, p.mu, p.tau_eff, p.m)?;
            let gamma = tune_contracting_stepsize(
                p.initial_distance_sq,
                2.0 * p.sigma_sq,
                p.mu / 2.0,
                d_cap,
                p.horizon,
            );
            StepsizePreset {
                regime,
                stepsize: StepsizeSchedule::constant(gamma, cap)?,
                weights: WeightSchedule::Exponential {
                    rho: 1.0 - p.mu * gamma / 2.0,
                },
                kappa: Some(kappa),
                cap,
            }
        }
        Regime::WeaklyConvexConstant => {
            let gamma =
                tune_constant_stepsize(p.initial_distance_sq, 2.0 * p.sigma_sq, d_cap, p.horizon);
            StepsizePreset {
                regime,
                stepsize: StepsizeSchedule::constant(positive(gamma, cap), cap)?,
                weights: WeightSchedule::Uniform,
                kappa: None,
                cap,
            }
        }
        Regime::NonconvexConstant => {
            let gamma = tune_constant_stepsize(
                5.0 * p.initial_gap,
                4.0 * p.l * p.sigma_sq,
                d_cap,
                p.horizon,
            );
            StepsizePreset {
                regime,
                stepsize: StepsizeSchedule::constant(positive(gamma, cap), cap)?,
                weights: WeightSchedule::Uniform,
                kappa: None,
                cap,
            }
        }
    };
    Ok(preset)
}

// Starting at the optimum makes the tuner return 0; any admissible stepsize
// is then equally good.
fn positive(gamma: f64, cap: f64) -> f64 {
    if gamma > 0.0 {
        gamma
    } else {
        cap
    }
}
