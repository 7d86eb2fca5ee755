//! Seed aggregation, rate fitting, and cross-configuration comparisons.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::engine::{FinalMetrics, MetricRow, Trajectory};
use crate::error::{Error, Result};
use crate::numerics::RunningStats;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_err: f64,
}

impl Estimate {
    fn from_stats(s: &RunningStats) -> Self {
        Estimate {
            mean: s.mean(),
            std_err: if s.count() > 1 { s.std_err() } else { 0.0 },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FinalMetric {
    LastSubopt,
    #[default]
    AverageSubopt,
    MeanSubopt,
    MeanGradNormSq,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalSummary {
    pub last_subopt: Estimate,
    pub average_subopt: Estimate,
    pub mean_subopt: Estimate,
    pub mean_grad_norm_sq: Estimate,
    pub last_grad_norm_sq: Estimate,
    pub max_relative_consistency: f64,
}

impl FinalSummary {
    pub fn get(&self, metric: FinalMetric) -> Estimate {
        match metric {
            FinalMetric::LastSubopt => self.last_subopt,
            FinalMetric::AverageSubopt => self.average_subopt,
            FinalMetric::MeanSubopt => self.mean_subopt,
            FinalMetric::MeanGradNormSq => self.mean_grad_norm_sq,
        }
    }
}

/// Mean and standard error across seeds, per recorded iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub label: String,
    /// Configuration values identifying the ensemble; comparisons require
    /// all but the varied key to agree.
    pub params: BTreeMap<String, String>,
    pub sigma_sq: f64,
    pub horizon: u64,
    pub seeds: Vec<u64>,
    pub times: Vec<u64>,
    pub subopt: Vec<Estimate>,
    pub grad_norm_sq: Vec<Estimate>,
    pub err_norm_sq: Vec<Estimate>,
    pub worker_dispersion: Vec<Estimate>,
    pub final_metrics: FinalSummary,
}

impl EnsembleSummary {
    /// Aggregates trajectories; the result does not depend on their order.
    pub fn from_trajectories(
        label: impl Into<String>,
        params: BTreeMap<String, String>,
        sigma_sq: f64,
        trajectories: &[Trajectory],
    ) -> Result<Self> {
        let first = trajectories
            .first()
            .ok_or_else(|| Error::InvalidComparison("no trajectories to aggregate".into()))?;
        let mut sorted: Vec<&Trajectory> = trajectories.iter().collect();
        sorted.sort_by_key(|t| t.seed);
        let times: Vec<u64> = first.rows.iter().map(|r| r.t).collect();
        let horizon = first.summary.horizon;
        for tr in &sorted {
            if tr.summary.horizon != horizon
                || tr.rows.len() != times.len()
                || tr.rows.iter().zip(&times).any(|(r, t)| r.t != *t)
            {
                return Err(Error::InvalidComparison(format!(
                    "seed {} was recorded on a different time grid",
                    tr.seed
                )));
            }
        }
        let column = |f: &dyn Fn(&MetricRow) -> f64| -> Vec<Estimate> {
            (0..times.len())
                .map(|i| {
                    let s: RunningStats = sorted.iter().map(|tr| f(&tr.rows[i])).collect();
                    Estimate::from_stats(&s)
                })
                .collect()
        };
        let fin = |f: &dyn Fn(&FinalMetrics) -> f64| -> Estimate {
            let s: RunningStats = sorted.iter().map(|tr| f(&tr.summary)).collect();
            Estimate::from_stats(&s)
        };
        Ok(EnsembleSummary {
            label: label.into(),
            params,
            sigma_sq,
            horizon,
            seeds: sorted.iter().map(|t| t.seed).collect(),
            subopt: column(&|r| r.subopt),
            grad_norm_sq: column(&|r| r.grad_norm_sq),
            err_norm_sq: column(&|r| r.err_norm_sq),
            worker_dispersion: column(&|r| r.worker_dispersion),
            final_metrics: FinalSummary {
                last_subopt: fin(&|m| m.last_subopt),
                average_subopt: fin(&|m| m.average_subopt),
                mean_subopt: fin(&|m| m.mean_subopt),
                mean_grad_norm_sq: fin(&|m| m.mean_grad_norm_sq),
                last_grad_norm_sq: fin(&|m| m.last_grad_norm_sq),
                max_relative_consistency: sorted
                    .iter()
                    .map(|t| t.summary.max_relative_consistency)
                    .fold(0.0, f64::max),
            },
            times,
        })
    }

    pub fn mean_subopt_series(&self) -> Vec<f64> {
        self.subopt.iter().map(|e| e.mean).collect()
    }

    /// Slope of `log mean suboptimality` against `log t` over the last
    /// decade of recorded iterations.
    pub fn default_slope(&self) -> Result<f64> {
        fit_rate_slope(
            &self.times,
            &self.mean_subopt_series(),
            last_decade(self.horizon),
        )
    }
}

pub fn last_decade(horizon: u64) -> (u64, u64) {
    ((horizon / 10).max(1), horizon)
}

pub const MIN_FIT_POINTS: usize = 10;

/// Least-squares slope of `log y` against `log t` over `t` in `window`
/// (inclusive).
pub fn fit_rate_slope(times: &[u64], values: &[f64], window: (u64, u64)) -> Result<f64> {
    let points: Vec<(f64, f64)> = times
        .iter()
        .zip(values)
        .filter(|(t, _)| **t >= window.0 && **t <= window.1 && **t > 0)
        .map(|(t, v)| (*t as f64, *v))
        .collect();
    if points.len() < MIN_FIT_POINTS {
        return Err(Error::CannotFit(format!(
            "window {window:?} holds {} points, need {MIN_FIT_POINTS}",
            points.len()
        )));
    }
    if let Some((t, v)) = points.iter().find(|(_, v)| !(*v > 0.0)) {
        return Err(Error::CannotFit(format!(
            "non-positive value {v} at t = {t}"
        )));
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|(t, v)| (t.ln(), v.ln())).collect();
    Ok(log_log_slope(&logs))
}

fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = points.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// First recorded time at which `values` drops to `threshold` or below.
pub fn hitting_time(times: &[u64], values: &[f64], threshold: f64) -> Option<u64> {
    times
        .iter()
        .zip(values)
        .find(|(_, v)| **v <= threshold)
        .map(|(t, _)| *t)
}

fn check_comparable(ensembles: &[(f64, &EnsembleSummary)], varied: &str) -> Result<()> {
    let Some((_, first)) = ensembles.first() else {
        return Err(Error::InvalidComparison("no ensembles to compare".into()));
    };
    let strip = |p: &BTreeMap<String, String>| {
        let mut p = p.clone();
        p.remove(varied);
        p
    };
    let reference = strip(&first.params);
    for (_, e) in ensembles {
        if e.horizon != first.horizon {
            return Err(Error::InvalidComparison(format!(
                "'{}' has horizon {}, '{}' has {}",
                e.label, e.horizon, first.label, first.horizon
            )));
        }
        let p = strip(&e.params);
        if p != reference {
            let key = reference
                .keys()
                .chain(p.keys())
                .find(|k| reference.get(*k) != p.get(*k))
                .cloned()
                .unwrap_or_default();
            return Err(Error::InvalidComparison(format!(
                "'{}' and '{}' differ in '{key}' besides '{varied}'",
                e.label, first.label
            )));
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct RobustnessOptions {
    pub metric: FinalMetric,
    /// Flag when the largest pairwise ratio of final values exceeds this.
    pub max_ratio: f64,
    /// Also report when the mean suboptimality first reaches this level.
    pub hitting_threshold: Option<f64>,
}

impl Default for RobustnessOptions {
    fn default() -> Self {
        RobustnessOptions {
            metric: FinalMetric::AverageSubopt,
            max_ratio: 2.0,
            hitting_threshold: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DelayRow {
    pub tau: f64,
    pub label: String,
    pub final_value: Estimate,
    /// final value relative to the smallest delay
    pub ratio_to_baseline: f64,
    pub hitting_time: Option<u64>,
    pub hitting_ratio_to_baseline: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub metric: FinalMetric,
    pub rows: Vec<DelayRow>,
    pub max_pairwise_ratio: f64,
    pub threshold: f64,
    pub flagged: bool,
}

/// Compares ensembles that differ only in the delay `tau`.
pub fn delay_robustness_report(
    ensembles: &[(f64, &EnsembleSummary)],
    options: RobustnessOptions,
) -> Result<RobustnessReport> {
    check_comparable(ensembles, "tau")?;
    let mut sorted = ensembles.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let base = sorted[0].1;
    let base_value = base.final_metrics.get(options.metric).mean;
    let hit = |e: &EnsembleSummary| {
        options
            .hitting_threshold
            .and_then(|eps| hitting_time(&e.times, &e.mean_subopt_series(), eps))
    };
    let base_hit = hit(base);
    let rows: Vec<DelayRow> = sorted
        .iter()
        .map(|(tau, e)| {
            let value = e.final_metrics.get(options.metric);
            let h = hit(e);
            DelayRow {
                tau: *tau,
                label: e.label.clone(),
                final_value: value,
                ratio_to_baseline: value.mean / base_value,
                hitting_time: h,
                hitting_ratio_to_baseline: match (h, base_hit) {
                    (Some(a), Some(b)) if b > 0 => Some(a as f64 / b as f64),
                    _ => None,
                },
            }
        })
        .collect();
    let values: Vec<f64> = rows.iter().map(|r| r.final_value.mean).collect();
    let hi = values.iter().cloned().fold(f64::MIN, f64::max);
    let lo = values.iter().cloned().fold(f64::MAX, f64::min);
    let max_ratio = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    Ok(RobustnessReport {
        metric: options.metric,
        rows,
        max_pairwise_ratio: max_ratio,
        threshold: options.max_ratio,
        flagged: max_ratio > options.max_ratio,
    })
}

pub const OPTIMIZATION_DOMINATED: &str = "optimization-dominated; 1/K check not applicable";

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct VarianceOptions {
    pub metric: FinalMetric,
    pub exponent_range: (f64, f64),
}

impl Default for VarianceOptions {
    fn default() -> Self {
        VarianceOptions {
            metric: FinalMetric::AverageSubopt,
            exponent_range: (-1.3, -0.7),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WorkerRow {
    pub workers: f64,
    pub label: String,
    pub final_value: Estimate,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VarianceReport {
    pub metric: FinalMetric,
    pub rows: Vec<WorkerRow>,
    /// Slope of `log final value` against `log K`.
    pub exponent: Option<f64>,
    pub exponent_range: (f64, f64),
    pub within_range: Option<bool>,
    pub note: Option<String>,
}

/// Compares ensembles that differ only in the number of workers `K`.
pub fn variance_reduction_report(
    ensembles: &[(f64, &EnsembleSummary)],
    options: VarianceOptions,
) -> Result<VarianceReport> {
    check_comparable(ensembles, "workers")?;
    let mut sorted = ensembles.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let rows: Vec<WorkerRow> = sorted
        .iter()
        .map(|(k, e)| WorkerRow {
            workers: *k,
            label: e.label.clone(),
            final_value: e.final_metrics.get(options.metric),
        })
        .collect();
    let mut report = VarianceReport {
        metric: options.metric,
        rows,
        exponent: None,
        exponent_range: options.exponent_range,
        within_range: None,
        note: None,
    };
    if sorted.iter().any(|(_, e)| e.sigma_sq == 0.0) {
        report.note = Some(OPTIMIZATION_DOMINATED.to_string());
        return Ok(report);
    }
    if sorted.len() < 2 {
        report.note = Some("single worker count; no exponent to fit".to_string());
        return Ok(report);
    }
    if let Some(r) = report.rows.iter().find(|r| !(r.final_value.mean > 0.0)) {
        return Err(Error::CannotFit(format!(
            "non-positive final value at K = {}",
            r.workers
        )));
    }
    let logs: Vec<(f64, f64)> = report
        .rows
        .iter()
        .map(|r| (r.workers.ln(), r.final_value.mean.ln()))
        .collect();
    let slope = log_log_slope(&logs);
    report.exponent = Some(slope);
    report.within_range =
        Some(slope >= options.exponent_range.0 && slope <= options.exponent_range.1);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{FinalMetrics, MetricRow};
    use crate::numerics::RngStream;
    use proptest::prelude::*;

    fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<u64> {
        (0..n)
            .map(|i| (lo * (hi / lo).powf(i as f64 / (n - 1) as f64)).round() as u64)
            .collect()
    }

    #[test]
    fn exact_power_laws() {
        let t = log_grid(100.0, 1e5, 30);
        let inv: Vec<f64> = t.iter().map(|t| 3.0 / *t as f64).collect();
        let slope = fit_rate_slope(&t, &inv, (100, 100_000)).unwrap();
        assert!((slope + 1.0).abs() < 1e-6);
        let flat = vec![0.7; t.len()];
        assert!(fit_rate_slope(&t, &flat, (100, 100_000)).unwrap().abs() < 1e-6);
    }

    #[test]
    fn noisy_square_root_law() {
        let t = log_grid(1_000.0, 1e5, 40);
        let mut rng = RngStream::new(17, 0);
        let vals: Vec<f64> = t
            .iter()
            .map(|t| 2.0 / (*t as f64).sqrt() * (1.0 + 0.01 * rng.standard_normal()))
            .collect();
        let slope = fit_rate_slope(&t, &vals, (1_000, 100_000)).unwrap();
        assert!((-0.55..=-0.45).contains(&slope), "{slope}");
    }

    #[test]
    fn fit_errors() {
        let t: Vec<u64> = (1..=20).collect();
        let mut v = vec![1.0; 20];
        v[5] = 0.0;
        assert!(matches!(
            fit_rate_slope(&t, &v, (1, 20)),
            Err(Error::CannotFit(_))
        ));
        assert!(matches!(
            fit_rate_slope(&t, &[1.0; 20], (1, 5)),
            Err(Error::CannotFit(_))
        ));
    }

    fn trajectory(seed: u64, scale: f64) -> Trajectory {
        let rows = (0..=10)
            .map(|t| MetricRow {
                t,
                subopt: scale / (t + 1) as f64,
                grad_norm_sq: scale,
                err_norm_sq: 0.0,
                consistency_residual: 0.0,
                worker_dispersion: 0.0,
            })
            .collect();
        Trajectory {
            seed,
            rows,
            summary: FinalMetrics {
                horizon: 10,
                last_subopt: scale / 11.0,
                average_subopt: scale,
                mean_subopt: scale,
                mean_grad_norm_sq: scale,
                last_grad_norm_sq: scale,
                max_relative_consistency: 0.0,
            },
        }
    }

    fn ensemble(
        label: &str,
        key: &str,
        value: &str,
        scales: &[f64],
        sigma_sq: f64,
    ) -> EnsembleSummary {
        let trs: Vec<Trajectory> = scales
            .iter()
            .enumerate()
            .map(|(i, s)| trajectory(i as u64, *s))
            .collect();
        let mut params = BTreeMap::new();
        params.insert(key.to_string(), value.to_string());
        params.insert("objective".to_string(), "quadratic".to_string());
        EnsembleSummary::from_trajectories(label, params, sigma_sq, &trs).unwrap()
    }

    #[test]
    fn standard_error_is_sample_std_over_root_n() {
        let e = ensemble("a", "tau", "1", &[1.0, 2.0, 3.0, 4.0], 1.0);
        let s = e.final_metrics.average_subopt;
        assert_eq!(s.mean, 2.5);
        let sd = (((1.5f64).powi(2) * 2.0 + 0.5f64.powi(2) * 2.0) / 3.0).sqrt();
        assert!((s.std_err - sd / 2.0).abs() < 1e-15);
    }

    #[test]
    fn single_tau_report_has_one_row() {
        let e = ensemble("a", "tau", "1", &[1.0, 2.0], 1.0);
        let r = delay_robustness_report(&[(1.0, &e)], RobustnessOptions::default()).unwrap();
        assert_eq!(r.rows.len(), 1);
        assert_eq!(r.max_pairwise_ratio, 1.0);
        assert!(!r.flagged);
    }

    #[test]
    fn robustness_ratios_and_flags() {
        let a = ensemble("a", "tau", "1", &[1.0, 1.0], 1.0);
        let b = ensemble("b", "tau", "4", &[3.0, 3.0], 1.0);
        let r =
            delay_robustness_report(&[(4.0, &b), (1.0, &a)], RobustnessOptions::default()).unwrap();
        assert_eq!(r.rows[0].tau, 1.0);
        assert_eq!(r.rows[1].ratio_to_baseline, 3.0);
        assert!(r.flagged);
    }

    #[test]
    fn mismatched_configs_are_rejected() {
        let a = ensemble("a", "tau", "1", &[1.0], 1.0);
        let mut b = ensemble("b", "tau", "2", &[1.0], 1.0);
        b.params.insert("objective".into(), "radial".into());
        let err = delay_robustness_report(&[(1.0, &a), (2.0, &b)], RobustnessOptions::default());
        assert!(matches!(err, Err(Error::InvalidComparison(_))));
        let c = ensemble("c", "workers", "4", &[1.0], 1.0);
        assert!(
            variance_reduction_report(&[(1.0, &a), (4.0, &c)], VarianceOptions::default()).is_err()
        );
    }

    #[test]
    fn variance_exponent_and_noiseless_guard() {
        let e1 = ensemble("k1", "workers", "1", &[1.0], 1.0);
        let e4 = ensemble("k4", "workers", "4", &[0.25], 1.0);
        let e16 = ensemble("k16", "workers", "16", &[1.0 / 16.0], 1.0);
        let r = variance_reduction_report(
            &[(1.0, &e1), (4.0, &e4), (16.0, &e16)],
            VarianceOptions::default(),
        )
        .unwrap();
        assert!((r.exponent.unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(r.within_range, Some(true));

        let z1 = ensemble("k1", "workers", "1", &[1.0], 0.0);
        let z4 = ensemble("k4", "workers", "4", &[1.0], 0.0);
        let r = variance_reduction_report(&[(1.0, &z1), (4.0, &z4)], VarianceOptions::default())
            .unwrap();
        assert_eq!(r.note.as_deref(), Some(OPTIMIZATION_DOMINATED));
        assert!(r.exponent.is_none());
    }

    #[test]
    fn hitting_time_is_first_crossing() {
        assert_eq!(hitting_time(&[0, 5, 10], &[1.0, 0.1, 0.01], 0.1), Some(5));
        assert_eq!(hitting_time(&[0, 5], &[1.0, 0.5], 0.1), None);
    }

    proptest! {
        #[test]
        fn aggregation_is_permutation_invariant(
            scales in proptest::collection::vec(0.01f64..100.0, 2..12),
            rot in 0usize..12,
        ) {
            let trs: Vec<Trajectory> = scales
                .iter()
                .enumerate()
                .map(|(i, s)| trajectory(i as u64 * 7 + 3, *s))
                .collect();
            let mut shuffled = trs.clone();
            let n = shuffled.len();
            shuffled.rotate_left(rot % n);
            shuffled.swap(0, n - 1);
            let a = EnsembleSummary::from_trajectories("x", BTreeMap::new(), 1.0, &trs).unwrap();
            let b = EnsembleSummary::from_trajectories("x", BTreeMap::new(), 1.0, &shuffled).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn recovers_exact_exponents(p in -3.0f64..1.0, c in 0.01f64..100.0) {
            let t: Vec<u64> = (1..=50).map(|i| i * 100).collect();
            let v: Vec<f64> = t.iter().map(|t| c * (*t as f64).powf(p)).collect();
            let slope = fit_rate_slope(&t, &v, (100, 5_000)).unwrap();
            prop_assert!((slope - p).abs() < 1e-6);
        }
    }
}
