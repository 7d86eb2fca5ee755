//! Grid execution and artifact layout.
//!
//! ```text
//! <out>/manifest.json
//! <out>/<label>/seed-<seed>.csv
//! <out>/<label>/summary.json
//! <out>/robustness_report.json   (grids over tau)
//! <out>/variance_report.json     (grids over workers)
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{build_points, ExperimentConfig, Point};
use crate::analysis::{
    delay_robustness_report, last_decade, variance_reduction_report, EnsembleSummary,
    RobustnessOptions, RobustnessReport, VarianceOptions, VarianceReport,
};
use crate::engine::{run, Recording, Trajectory};
use crate::error::{Error, Result};

pub const OUTPUT_ROOT_VAR: &str = "ECSGD_OUTPUT_ROOT";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub const CSV_HEADER: [&str; 7] = [
    "t",
    "seed",
    "subopt",
    "grad_norm_sq",
    "err_norm_sq",
    "consistency_residual",
    "worker_dispersion",
];

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PointRecord {
    pub label: String,
    pub kappa: Option<f64>,
    pub effective_delay: f64,
    pub cap: f64,
    pub first_stepsize: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub fingerprint: String,
    pub seeds: Vec<u64>,
    pub points: Vec<PointRecord>,
    pub config: ExperimentConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SlopeFit {
    pub window: (u64, u64),
    pub slope: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PointSummary {
    pub label: String,
    pub kappa: Option<f64>,
    pub first_stepsize: f64,
    pub cap: f64,
    pub slope_fit: SlopeFit,
    pub ensemble: EnsembleSummary,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GroupReport<R> {
    /// parameters shared by every ensemble in the group
    pub fixed: BTreeMap<String, String>,
    pub report: R,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Reports {
    pub robustness: Vec<GroupReport<RobustnessReport>>,
    pub variance: Vec<GroupReport<VarianceReport>>,
}

/// Outcome of a completed run.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub output: PathBuf,
    pub manifest: Manifest,
    pub summaries: Vec<PointSummary>,
    pub reports: Reports,
}

/// A run failed after validation; `run_id` names the trajectory at fault.
#[derive(Debug)]
pub struct RunFailure {
    pub run_id: Option<String>,
    pub error: Error,
}

impl From<Error> for RunFailure {
    fn from(error: Error) -> Self {
        RunFailure {
            run_id: None,
            error,
        }
    }
}

pub fn resolve_output(cfg: &ExperimentConfig) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_VAR) {
        Some(root) if !root.is_empty() => PathBuf::from(root).join(&cfg.run.output),
        _ => PathBuf::from(&cfg.run.output),
    }
}

fn slope_fit(e: &EnsembleSummary) -> SlopeFit {
    let window = last_decade(e.horizon);
    match e.default_slope() {
        Ok(s) => SlopeFit {
            window,
            slope: Some(s),
            error: None,
        },
        Err(err) => SlopeFit {
            window,
            slope: None,
            error: Some(err.to_string()),
        },
    }
}

fn write_csv(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    w.write_record(CSV_HEADER).map_err(csv_error)?;
    for r in &traj.rows {
        w.write_record([
            r.t.to_string(),
            traj.seed.to_string(),
            format!("{:e}", r.subopt),
            format!("{:e}", r.grad_norm_sq),
            format!("{:e}", r.err_norm_sq),
            format!("{:e}", r.consistency_residual),
            format!("{:e}", r.worker_dispersion),
        ])
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Groups ensembles by every parameter except `varied` and builds one
/// report per group with at least two members.
fn grouped<R>(
    summaries: &[PointSummary],
    varied: &str,
    build: impl Fn(&[(f64, &EnsembleSummary)]) -> Result<R>,
) -> Result<Vec<GroupReport<R>>> {
    let mut groups: BTreeMap<BTreeMap<String, String>, Vec<(f64, &EnsembleSummary)>> =
        BTreeMap::new();
    for s in summaries {
        let Some(v) = s.ensemble.params.get(varied) else {
            continue;
        };
        let value: f64 = v
            .parse()
            .map_err(|_| Error::InvalidComparison(format!("'{varied}' = '{v}' is not numeric")))?;
        let mut fixed = s.ensemble.params.clone();
        fixed.remove(varied);
        groups.entry(fixed).or_default().push((value, &s.ensemble));
    }
    groups
        .into_iter()
        .filter(|(_, members)| members.len() > 1)
        .map(|(fixed, members)| {
            Ok(GroupReport {
                fixed,
                report: build(&members)?,
            })
        })
        .collect()
}

pub fn build_reports(cfg: &ExperimentConfig, summaries: &[PointSummary]) -> Result<Reports> {
    let robustness = RobustnessOptions {
        metric: cfg.report.metric,
        max_ratio: cfg.report.max_ratio,
        hitting_threshold: cfg.report.hitting_threshold,
    };
    let variance = VarianceOptions {
        metric: cfg.report.metric,
        exponent_range: (cfg.report.exponent_range[0], cfg.report.exponent_range[1]),
    };
    Ok(Reports {
        robustness: grouped(summaries, "tau", |m| delay_robustness_report(m, robustness))?,
        variance: grouped(summaries, "workers", |m| {
            variance_reduction_report(m, variance)
        })?,
    })
}

fn write_reports(dir: &Path, reports: &Reports) -> Result<()> {
    for name in ["robustness_report.json", "variance_report.json"] {
        let p = dir.join(name);
        if p.exists() {
            fs::remove_file(p)?;
        }
    }
    if !reports.robustness.is_empty() {
        write_json(&dir.join("robustness_report.json"), &reports.robustness)?;
    }
    if !reports.variance.is_empty() {
        write_json(&dir.join("variance_report.json"), &reports.variance)?;
    }
    Ok(())
}

fn staging_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".partial");
    out.with_file_name(name)
}

/// Validates, runs every (point, seed) pair on `jobs` threads, and writes
/// the artifacts. Nothing is left behind on failure.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    jobs: Option<usize>,
) -> std::result::Result<RunOutcome, RunFailure> {
    let points = build_points(cfg)?;
    let seeds = cfg.seeds()?;
    let out = resolve_output(cfg);
    if out.as_os_str().is_empty() || out.file_name().is_none() {
        return Err(Error::InvalidConfig("run.output: not a directory name".into()).into());
    }
    if out.exists() && !out.join("manifest.json").is_file() {
        return Err(Error::InvalidConfig(format!(
            "run.output: {} exists and is not a previous run's output",
            out.display()
        ))
        .into());
    }
    let staging = staging_path(&out);
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(Error::from)?;
    }
    let result = execute(cfg, &points, &seeds, &staging, jobs);
    match result {
        Ok((manifest, summaries, reports)) => {
            let finish = || -> Result<()> {
                if out.exists() {
                    fs::remove_dir_all(&out)?;
                }
                fs::rename(&staging, &out)?;
                Ok(())
            };
            if let Err(e) = finish() {
                let _ = fs::remove_dir_all(&staging);
                return Err(e.into());
            }
            Ok(RunOutcome {
                output: out,
                manifest,
                summaries,
                reports,
            })
        }
        Err(f) => {
            let _ = fs::remove_dir_all(&staging);
            Err(f)
        }
    }
}

type Executed = (Manifest, Vec<PointSummary>, Reports);

fn execute(
    cfg: &ExperimentConfig,
    points: &[Point],
    seeds: &[u64],
    dir: &Path,
    jobs: Option<usize>,
) -> std::result::Result<Executed, RunFailure> {
    fs::create_dir_all(dir).map_err(Error::from)?;
    for p in points {
        fs::create_dir_all(dir.join(&p.label)).map_err(Error::from)?;
    }
    let tasks: Vec<(usize, u64)> = (0..points.len())
        .flat_map(|i| seeds.iter().map(move |&s| (i, s)))
        .collect();
    let recording = Recording::every(cfg.run.record_every);
    let horizon = cfg.run.horizon;
    let work = || {
        tasks
            .par_iter()
            .map(|&(i, seed)| {
                let p = &points[i];
                let id = format!("{}/seed-{seed}", p.label);
                let wrap = |error| RunFailure {
                    run_id: Some(id.clone()),
                    error,
                };
                let traj = run(&p.spec, &p.x0, horizon, seed, recording).map_err(wrap)?;
                write_csv(&dir.join(&p.label).join(format!("seed-{seed}.csv")), &traj)
                    .map_err(wrap)?;
                Ok((i, traj))
            })
            .collect::<std::result::Result<Vec<_>, RunFailure>>()
    };
    let finished = match jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::InvalidConfig(format!("--jobs: {e}")))?
            .install(work)?,
        None => work()?,
    };

    let mut by_point: Vec<Vec<Trajectory>> = vec![Vec::new(); points.len()];
    for (i, traj) in finished {
        by_point[i].push(traj);
    }
    let mut summaries = Vec::with_capacity(points.len());
    for (p, trajs) in points.iter().zip(by_point) {
        let ensemble = EnsembleSummary::from_trajectories(
            p.label.clone(),
            p.params.clone(),
            p.spec.oracle.sigma_sq(),
            &trajs,
        )?;
        let summary = PointSummary {
            label: p.label.clone(),
            kappa: p.kappa,
            first_stepsize: p.spec.stepsize.first(),
            cap: p.cap,
            slope_fit: slope_fit(&ensemble),
            ensemble,
        };
        write_json(&dir.join(&p.label).join("summary.json"), &summary)?;
        summaries.push(summary);
    }
    let reports = build_reports(cfg, &summaries)?;
    write_reports(dir, &reports)?;
    let manifest = Manifest {
        tool: "ecsgd".into(),
        version: VERSION.into(),
        fingerprint: cfg.fingerprint(),
        seeds: seeds.to_vec(),
        points: points
            .iter()
            .map(|p| PointRecord {
                label: p.label.clone(),
                kappa: p.kappa,
                effective_delay: p.effective_delay,
                cap: p.cap,
                first_stepsize: p.spec.stepsize.first(),
            })
            .collect(),
        config: cfg.clone(),
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok((manifest, summaries, reports))
}

/// Rebuilds the cross-point reports of an existing output directory.
pub fn regenerate_reports(dir: &Path) -> Result<Reports> {
    let text = fs::read_to_string(dir.join("manifest.json")).map_err(|e| {
        Error::InvalidConfig(format!("{}: no readable manifest ({e})", dir.display()))
    })?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    let mut summaries = Vec::with_capacity(manifest.points.len());
    for p in &manifest.points {
        let text = fs::read_to_string(dir.join(&p.label).join("summary.json"))?;
        summaries.push(serde_json::from_str::<PointSummary>(&text)?);
    }
    let reports = build_reports(&manifest.config, &summaries)?;
    write_reports(dir, &reports)?;
    Ok(reports)
}
