//! Audit suites runnable from the command line. Each suite prints a
//! machine-readable report with per-check slacks and standard errors.

use std::sync::Arc;

use serde::Serialize;

use crate::compressors::{audit_contract, Compressor, MIN_COMPRESSOR_TRIALS};
use crate::engine::audit::{
    audit_compressed_error, audit_delayed_error, audit_descent_nonconvex,
    audit_descent_strongly_convex, audit_local_dispersion, AuditSetup, InequalityAudit,
};
use crate::engine::{Algorithm, DelayModel};
use crate::error::{Error, Result};
use crate::numerics::{RngStream, StreamPurpose, Vector};
use crate::objectives::{make_least_squares, make_quadratic, sample_ball, Objective};
use crate::oracles::{audit_noise, GradientOracle, MIN_NOISE_TRIALS};
use crate::schedules::{stepsize_cap, StepsizeSchedule};

pub const SUITES: [&str; 6] = [
    "compressor",
    "noise",
    "lemma-dsgd",
    "lemma-ecsgd",
    "lemma-local",
    "descent",
];

/// Fewest seeds accepted by the trajectory-based suites.
pub const MIN_AUDIT_SEEDS: usize = 10;

const DIM: usize = 20;
const DELAY: usize = 4;
const DROP: f64 = 4.0;
const WORKERS: usize = 4;

#[derive(Clone, Debug)]
pub struct AuditRequest {
    pub suite: String,
    /// Monte-Carlo draws per probe for `compressor` and `noise`; number of
    /// seeds for the trajectory suites.
    pub trials: usize,
    pub horizon: u64,
    pub gamma: Option<f64>,
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct AuditEntry {
    pub name: String,
    pub passed: bool,
    pub details: serde_json::Value,
}

#[derive(Clone, Debug, Serialize)]
pub struct AuditReport {
    pub suite: String,
    pub trials: usize,
    pub passed: bool,
    pub entries: Vec<AuditEntry>,
}

fn entry<T: Serialize>(name: impl Into<String>, passed: bool, details: &T) -> Result<AuditEntry> {
    Ok(AuditEntry {
        name: name.into(),
        passed,
        details: serde_json::to_value(details)?,
    })
}

fn quadratic() -> Result<Arc<dyn Objective>> {
    Ok(Arc::new(make_quadratic(DIM, 0.1, 1.0, Vector::zeros(DIM))?))
}

#[derive(Serialize)]
struct InequalitySummary {
    inequality: &'static str,
    algorithm: Algorithm,
    seeds: usize,
    horizon: u64,
    checks: usize,
    failures: usize,
    /// check with the least slack, `3 se - mean(lhs - rhs)`
    tightest_t: Option<u64>,
    tightest_slack: Option<f64>,
    tightest_diff_mean: Option<f64>,
    tightest_diff_std_err: Option<f64>,
}

fn summarize(a: &InequalityAudit) -> Result<AuditEntry> {
    let tight = a.tightest();
    let s = InequalitySummary {
        inequality: a.inequality.name(),
        algorithm: a.algorithm,
        seeds: a.seeds,
        horizon: a.horizon,
        checks: a.checks.len(),
        failures: a.failures(),
        tightest_t: tight.map(|c| c.t),
        tightest_slack: tight.map(|c| 3.0 * c.diff_std_err - c.diff_mean),
        tightest_diff_mean: tight.map(|c| c.diff_mean),
        tightest_diff_std_err: tight.map(|c| c.diff_std_err),
    };
    entry(
        format!("{}:{}", a.inequality.name(), a.algorithm.family()),
        a.passed(),
        &s,
    )
}

fn setup(req: &AuditRequest, tau_eff: f64) -> Result<AuditSetup> {
    let oracle = GradientOracle::additive(quadratic()?, 1.0)?;
    let gamma = req.gamma.unwrap_or_else(|| stepsize_cap(1.0, tau_eff, 0.0));
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidConfig("--gamma: must be positive".into()));
    }
    Ok(AuditSetup {
        oracle,
        stepsize: StepsizeSchedule::unchecked_constant(gamma),
        x0: Vector::filled(DIM, 3.0),
        horizon: req.horizon,
        seeds: req.trials,
        base_seed: req.seed,
    })
}

fn minimum_trials(suite: &str) -> usize {
    match suite {
        "compressor" => MIN_COMPRESSOR_TRIALS,
        "noise" => MIN_NOISE_TRIALS,
        _ => MIN_AUDIT_SEEDS,
    }
}

pub fn run_audit(req: &AuditRequest) -> Result<AuditReport> {
    if !SUITES.contains(&req.suite.as_str()) {
        return Err(Error::InvalidConfig(format!(
            "suite: unknown suite '{}' (expected one of {})",
            req.suite,
            SUITES.join(", ")
        )));
    }
    let min = minimum_trials(&req.suite);
    if req.trials < min {
        return Err(Error::InvalidConfig(format!(
            "--trials: suite '{}' needs at least {min}, got {}",
            req.suite, req.trials
        )));
    }
    if req.horizon < 1 {
        return Err(Error::InvalidConfig("--horizon: must be >= 1".into()));
    }
    let delayed = Algorithm::DelayedSgd {
        tau: DELAY,
        delay: DelayModel::Fixed,
    };
    let compressed = Algorithm::ErrorCompensated {
        compressor: Compressor::rand_drop(DROP)?,
    };
    let local = Algorithm::LocalSgd {
        workers: WORKERS,
        tau: DELAY,
    };
    let entries = match req.suite.as_str() {
        "compressor" => {
            let d = 16;
            let ops = [
                Compressor::rand_drop(DROP)?,
                Compressor::rand_coordinate(0.25)?,
                Compressor::top_k(1)?,
                Compressor::top_k(4)?,
                Compressor::top_k(16)?,
            ];
            let mut rng = RngStream::for_purpose(req.seed, 0, StreamPurpose::Probe);
            ops.iter()
                .map(|c| {
                    let a = audit_contract(c, d, req.trials, &mut rng)?;
                    entry(format!("{c:?}"), a.passed(), &a)
                })
                .collect::<Result<Vec<_>>>()?
        }
        "noise" => {
            let mut data = RngStream::for_purpose(req.seed, 0, StreamPurpose::Data);
            let ls = Arc::new(make_least_squares(100, DIM, &mut data, 0.1)?);
            let oracles = [
                ("additive", GradientOracle::additive(quadratic()?, 1.0)?),
                (
                    "strong-growth",
                    GradientOracle::strong_growth(quadratic()?, 1.0)?,
                ),
                ("finite-sum", GradientOracle::finite_sum(ls)?),
            ];
            let mut rng = RngStream::for_purpose(req.seed, 0, StreamPurpose::Probe);
            oracles
                .iter()
                .map(|(name, o)| {
                    let center = o
                        .objective()
                        .x_star()
                        .cloned()
                        .unwrap_or_else(|| Vector::zeros(DIM));
                    let points: Vec<Vector> = (0..100)
                        .map(|_| sample_ball(&mut rng, &center, 3.0))
                        .collect();
                    let a = audit_noise(o, &points, req.trials, &mut rng)?;
                    entry(*name, a.passed(), &a)
                })
                .collect::<Result<Vec<_>>>()?
        }
        "lemma-dsgd" => {
            let s = setup(req, delayed.effective_delay(DIM))?;
            vec![summarize(&audit_delayed_error(&s, DELAY)?)?]
        }
        "lemma-ecsgd" => {
            let s = setup(req, compressed.effective_delay(DIM))?;
            vec![summarize(&audit_compressed_error(
                &s,
                Compressor::rand_drop(DROP)?,
            )?)?]
        }
        "lemma-local" => {
            let s = setup(req, local.effective_delay(DIM))?;
            vec![summarize(&audit_local_dispersion(&s, WORKERS, DELAY)?)?]
        }
        _ => {
            let mut out = Vec::new();
            for alg in [Algorithm::PlainSgd, delayed, compressed, local] {
                let s = setup(req, alg.effective_delay(DIM))?;
                out.push(summarize(&audit_descent_strongly_convex(&s, alg)?)?);
                out.push(summarize(&audit_descent_nonconvex(&s, alg)?)?);
            }
            out
        }
    };
    Ok(AuditReport {
        suite: req.suite.clone(),
        trials: req.trials,
        passed: entries.iter().all(|e| e.passed),
        entries,
    })
}
