//! Monte-Carlo audits of the per-step inequalities behind the convergence
//! guarantees.
//!
//! Each audit runs the algorithm for many seeds, evaluates both sides of an
//! inequality `E[lhs_t] <= E[rhs_t]` along every path, and checks the mean of
//! the paired differences `lhs_t - rhs_t` against three standard errors at
//! every `t`.

use serde::Serialize;

use crate::compressors::Compressor;
use crate::error::{invalid, Error, Result};
use crate::numerics::{dist_sq, RunningStats, Vector};
use crate::oracles::GradientOracle;
use crate::schedules::{StepsizeSchedule, WeightSchedule};

use super::{step, Algorithm, AlgorithmSpec, DelayModel, RunState, Streams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Inequality {
    DelayedError,
    CompressedError,
    LocalDispersion,
    DescentStronglyConvex,
    DescentNonconvex,
}

impl Inequality {
    pub fn name(&self) -> &'static str {
        match self {
            Inequality::DelayedError => "delayed-error-bound",
            Inequality::CompressedError => "compressed-error-bound",
            Inequality::LocalDispersion => "local-dispersion-bound",
            Inequality::DescentStronglyConvex => "descent-strongly-convex",
            Inequality::DescentNonconvex => "descent-nonconvex",
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct TimeCheck {
    pub t: u64,
    pub lhs_mean: f64,
    pub rhs_mean: f64,
    pub diff_mean: f64,
    pub diff_std_err: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct InequalityAudit {
    pub inequality: Inequality,
    pub algorithm: Algorithm,
    pub seeds: usize,
    pub horizon: u64,
    pub checks: Vec<TimeCheck>,
}

impl InequalityAudit {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> usize {
        self.checks.iter().filter(|c| !c.passed).count()
    }

    /// The check with the largest `diff_mean / diff_std_err` (or raw
    /// difference when the standard error vanishes).
    pub fn tightest(&self) -> Option<&TimeCheck> {
        let score = |c: &TimeCheck| {
            if c.diff_std_err > 0.0 {
                c.diff_mean / c.diff_std_err
            } else {
                c.diff_mean
            }
        };
        self.checks
            .iter()
            .max_by(|a, b| score(a).total_cmp(&score(b)))
    }
}

/// Shared inputs of every audit.
#[derive(Clone, Debug)]
pub struct AuditSetup {
    pub oracle: GradientOracle,
    pub stepsize: StepsizeSchedule,
    pub x0: Vector,
    pub horizon: u64,
    pub seeds: usize,
    pub base_seed: u64,
}

fn guarded_spec(setup: &AuditSetup, algorithm: Algorithm) -> Result<AlgorithmSpec> {
    AlgorithmSpec::new(
        algorithm,
        setup.oracle.clone(),
        setup.stepsize,
        WeightSchedule::Uniform,
    )
}

fn require_stepsize(setup: &AuditSetup, bound: f64, what: &str) -> Result<()> {
    let gamma = setup.stepsize.first();
    if gamma > bound * (1.0 + 1e-12) {
        return Err(Error::ConfigurationRejected(format!(
            "{what} needs stepsize <= {bound:e}, got {gamma:e}"
        )));
    }
    Ok(())
}

fn aggregate(
    inequality: Inequality,
    algorithm: Algorithm,
    setup: &AuditSetup,
    per_seed: impl Fn(u64) -> Result<Vec<(f64, f64)>>,
) -> Result<InequalityAudit> {
    if setup.seeds < 2 {
        return Err(invalid("audits need at least two seeds"));
    }
    let n = setup.horizon as usize;
    let mut lhs = vec![RunningStats::new(); n];
    let mut rhs = vec![RunningStats::new(); n];
    let mut diff = vec![RunningStats::new(); n];
    for s in 0..setup.seeds as u64 {
        let pairs = per_seed(setup.base_seed + s)?;
        for (t, (l, r)) in pairs.into_iter().enumerate() {
            lhs[t].push(l);
            rhs[t].push(r);
            diff[t].push(l - r);
        }
    }
    let checks = (0..n)
        .map(|t| {
            let d = &diff[t];
            let se = d.std_err();
            let slack_floor = 1e-12 * (1.0 + rhs[t].mean().abs());
            TimeCheck {
                t: t as u64,
                lhs_mean: lhs[t].mean(),
                rhs_mean: rhs[t].mean(),
                diff_mean: d.mean(),
                diff_std_err: se,
                passed: d.mean() <= 3.0 * se + slack_floor,
            }
        })
        .collect();
    Ok(InequalityAudit {
        inequality,
        algorithm,
        seeds: setup.seeds,
        horizon: setup.horizon,
        checks,
    })
}

/// Delayed SGD: `3L ||e_t||^2 <= (1/(16 L tau)) sum_{i=1..tau} ||grad f(x_{t-i})||^2 + gamma_t sigma^2`,
/// checked for `t = 1..T` (terms with `t - i < 0` are omitted).
pub fn audit_delayed_error(setup: &AuditSetup, tau: usize) -> Result<InequalityAudit> {
    let algorithm = Algorithm::DelayedSgd {
        tau,
        delay: DelayModel::Fixed,
    };
    let spec = guarded_spec(setup, algorithm)?;
    let objective = setup.oracle.objective().clone();
    let l = objective.smoothness();
    let sigma_sq = setup.oracle.sigma_sq();
    aggregate(Inequality::DelayedError, algorithm, setup, |seed| {
        let mut state = RunState::new(&spec, &setup.x0)?;
        let mut streams = Streams::new(seed, 1);
        let mut history: Vec<f64> = Vec::with_capacity(setup.horizon as usize);
        let mut out = Vec::with_capacity(setup.horizon as usize);
        for t in 1..=setup.horizon {
            history.push(objective.gradient(state.x()).norm_sq());
            step(&mut state, &spec, &mut streams)?;
            let lhs = 3.0 * l * state.error().norm_sq();
            let window: f64 = history.iter().rev().take(tau).sum();
            let rhs = window / (16.0 * l * tau as f64) + spec.stepsize.at(t) * sigma_sq;
            out.push((lhs, rhs));
        }
        Ok(out)
    })
}

/// Compressed SGD with error feedback:
/// `3L ||e_{t+1}||^2 <= (delta/(64 L)) sum_{i=0..t} (1 - delta/4)^{t-i} ||grad f(x_i)||^2 + gamma_t sigma^2`.
pub fn audit_compressed_error(
    setup: &AuditSetup,
    compressor: Compressor,
) -> Result<InequalityAudit> {
    let algorithm = Algorithm::ErrorCompensated { compressor };
    let spec = guarded_spec(setup, algorithm)?;
    let objective = setup.oracle.objective().clone();
    let l = objective.smoothness();
    let sigma_sq = setup.oracle.sigma_sq();
    let delta = compressor.delta(objective.dim());
    let decay = 1.0 - delta / 4.0;
    aggregate(Inequality::CompressedError, algorithm, setup, |seed| {
        let mut state = RunState::new(&spec, &setup.x0)?;
        let mut streams = Streams::new(seed, 1);
        let mut discounted = 0.0;
        let mut out = Vec::with_capacity(setup.horizon as usize);
        for t in 0..setup.horizon {
            discounted = decay * discounted + objective.gradient(state.x()).norm_sq();
            step(&mut state, &spec, &mut streams)?;
            let lhs = 3.0 * l * state.error().norm_sq();
            let rhs = delta / (64.0 * l) * discounted + spec.stepsize.at(t) * sigma_sq;
            out.push((lhs, rhs));
        }
        Ok(out)
    })
}

/// Local SGD:
/// `(1/K) sum_k 3L ||x^k_t - x~_t||^2 <= (1/(16 L tau K)) sum_k sum_{i=0..tau-1} ||grad f(x^k_{t-i})||^2 + gamma_t sigma^2 / K`,
/// checked for `t = 1..T`.
pub fn audit_local_dispersion(
    setup: &AuditSetup,
    workers: usize,
    tau: usize,
) -> Result<InequalityAudit> {
    let algorithm = Algorithm::LocalSgd { workers, tau };
    let spec = guarded_spec(setup, algorithm)?;
    let objective = setup.oracle.objective().clone();
    let l = objective.smoothness();
    let sigma_sq = setup.oracle.sigma_sq();
    let k = workers as f64;
    aggregate(Inequality::LocalDispersion, algorithm, setup, |seed| {
        let mut state = RunState::new(&spec, &setup.x0)?;
        let mut streams = Streams::new(seed, workers);
        // per-time sum over workers of ||grad f(x^k_s)||^2
        let mut history: Vec<f64> = Vec::with_capacity(setup.horizon as usize + 1);
        let mut out = Vec::with_capacity(setup.horizon as usize);
        for t in 1..=setup.horizon {
            step(&mut state, &spec, &mut streams)?;
            history.push(state.last_worker_grad_norms().iter().sum());
            let current: f64 = state
                .workers()
                .expect("local state")
                .iter()
                .map(|xk| objective.gradient(xk).norm_sq())
                .sum();
            let lhs = 3.0 * l * state.worker_dispersion();
            let past: f64 = history.iter().rev().take(tau - 1).sum();
            let rhs =
                (current + past) / (16.0 * l * tau as f64 * k) + spec.stepsize.at(t) * sigma_sq / k;
            out.push((lhs, rhs));
        }
        Ok(out)
    })
}

/// One-step progress of the virtual iterate for `mu`-quasi-convex objectives:
/// `||x~_{t+1} - x*||^2 <= (1 - mu gamma/2) ||x~_t - x*||^2 - (gamma/2)(f(x_t) - f*)
///   + gamma^2 sigma^2 + 3 L gamma ||x_t - x~_t||^2`.
pub fn audit_descent_strongly_convex(
    setup: &AuditSetup,
    algorithm: Algorithm,
) -> Result<InequalityAudit> {
    let objective = setup.oracle.objective().clone();
    let l = objective.smoothness();
    let m = setup.oracle.m();
    require_stepsize(
        setup,
        1.0 / (4.0 * l * (1.0 + m)),
        "the strongly convex descent audit",
    )?;
    let spec = guarded_spec(setup, algorithm)?;
    let x_star = objective
        .x_star()
        .ok_or_else(|| invalid("descent audit needs a known minimizer"))?
        .clone();
    let mu = objective.quasi_convexity();
    let f_star = objective.f_star();
    let sigma_sq = setup.oracle.sigma_sq();
    aggregate(
        Inequality::DescentStronglyConvex,
        algorithm,
        setup,
        |seed| {
            let mut state = RunState::new(&spec, &setup.x0)?;
            let mut streams = Streams::new(seed, algorithm.workers());
            let mut out = Vec::with_capacity(setup.horizon as usize);
            for t in 0..setup.horizon {
                let gamma = spec.stepsize.at(t);
                let before = dist_sq(state.virtual_iterate(), &x_star);
                let gap = objective.value(state.x()) - f_star;
                let lag = dist_sq(state.x(), state.virtual_iterate());
                step(&mut state, &spec, &mut streams)?;
                let lhs = dist_sq(state.virtual_iterate(), &x_star);
                let rhs = (1.0 - mu * gamma / 2.0) * before - gamma / 2.0 * gap
                    + gamma * gamma * sigma_sq
                    + 3.0 * l * gamma * lag;
                out.push((lhs, rhs));
            }
            Ok(out)
        },
    )
}

/// One-step progress in function value for smooth objectives:
/// `f(x~_{t+1}) <= f(x~_t) - (gamma/4) ||grad f(x_t)||^2 + gamma^2 L sigma^2 / 2
///   + (gamma L^2 / 2) ||x_t - x~_t||^2`.
pub fn audit_descent_nonconvex(
    setup: &AuditSetup,
    algorithm: Algorithm,
) -> Result<InequalityAudit> {
    let objective = setup.oracle.objective().clone();
    let l = objective.smoothness();
    let m = setup.oracle.m();
    require_stepsize(
        setup,
        1.0 / (2.0 * l * (1.0 + m)),
        "the non-convex descent audit",
    )?;
    let spec = guarded_spec(setup, algorithm)?;
    let sigma_sq = setup.oracle.sigma_sq();
    aggregate(Inequality::DescentNonconvex, algorithm, setup, |seed| {
        let mut state = RunState::new(&spec, &setup.x0)?;
        let mut streams = Streams::new(seed, algorithm.workers());
        let mut out = Vec::with_capacity(setup.horizon as usize);
        for t in 0..setup.horizon {
            let gamma = spec.stepsize.at(t);
            let before = objective.value(state.virtual_iterate());
            let grad_sq = objective.gradient(state.x()).norm_sq();
            let lag = dist_sq(state.x(), state.virtual_iterate());
            step(&mut state, &spec, &mut streams)?;
            let lhs = objective.value(state.virtual_iterate());
            let rhs = before - gamma / 4.0 * grad_sq
                + gamma * gamma * l * sigma_sq / 2.0
                + gamma * l * l / 2.0 * lag;
            out.push((lhs, rhs));
        }
        Ok(out)
    })
}
