//! The error-feedback recursion
//!
//! ```text
//! x_{t+1} = x_t - v_t
//! e_{t+1} = e_t + gamma_t g_t - v_t
//! ```
//!
//! driven by a per-algorithm choice of the applied update `v_t`. The virtual
//! iterate `x~_t = x_t - e_t` obeys the plain SGD recursion
//! `x~_{t+1} = x~_t - gamma_t g_t` and is tracked alongside.

pub mod audit;

use serde::Serialize;

use crate::compressors::Compressor;
use crate::error::{invalid, Error, Result};
use crate::numerics::{dist_sq, RngStream, StreamPurpose, Vector};
use crate::oracles::GradientOracle;
use crate::schedules::{stepsize_cap, StepsizeSchedule, WeightSchedule, WeightedAverage};

/// Suboptimality above which a run is declared divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DelayModel {
    /// Every gradient is applied exactly `tau` steps after it was computed.
    Fixed,
    /// Each gradient gets an independent delay uniform on `0..=tau`; all
    /// gradients due at a step are applied together.
    IidBounded,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Algorithm {
    PlainSgd,
    DelayedSgd { tau: usize, delay: DelayModel },
    ErrorCompensated { compressor: Compressor },
    MiniBatch { tau: usize },
    LocalSgd { workers: usize, tau: usize },
}

impl Algorithm {
    pub fn family(&self) -> &'static str {
        match self {
            Algorithm::PlainSgd => "sgd",
            Algorithm::DelayedSgd { .. } => "dsgd",
            Algorithm::ErrorCompensated { .. } => "ecsgd",
            Algorithm::MiniBatch { .. } => "minibatch",
            Algorithm::LocalSgd { .. } => "localsgd",
        }
    }

    pub fn workers(&self) -> usize {
        match *self {
            Algorithm::LocalSgd { workers, .. } => workers,
            _ => 1,
        }
    }

    /// The delay-like parameter entering the stepsize cap and `kappa`:
    /// `tau` for delayed and mini-batch SGD, `2 / delta` for compression,
    /// `tau K` for local SGD.
    pub fn effective_delay(&self, d: usize) -> f64 {
        match *self {
            Algorithm::PlainSgd => 1.0,
            Algorithm::DelayedSgd { tau, .. } | Algorithm::MiniBatch { tau } => tau as f64,
            Algorithm::ErrorCompensated { compressor } => 2.0 / compressor.delta(d),
            Algorithm::LocalSgd { workers, tau } => (tau * workers) as f64,
        }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        match *self {
            Algorithm::PlainSgd => Ok(()),
            Algorithm::DelayedSgd { tau, .. } | Algorithm::MiniBatch { tau } if tau < 1 => {
                Err(invalid(format!("{} needs tau >= 1", self.family())))
            }
            Algorithm::ErrorCompensated { compressor } => compressor.validate_dim(d),
            Algorithm::LocalSgd { workers, tau } if workers < 1 || tau < 1 => Err(invalid(
                format!("local SGD needs K >= 1 and tau >= 1, got K = {workers}, tau = {tau}"),
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct AlgorithmSpec {
    pub algorithm: Algorithm,
    pub oracle: GradientOracle,
    pub stepsize: StepsizeSchedule,
    pub weights: WeightSchedule,
    cap: f64,
}

impl AlgorithmSpec {
    /// Builds a spec whose stepsizes must respect `1 / (10 L (tau_eff + M))`.
    pub fn new(
        algorithm: Algorithm,
        oracle: GradientOracle,
        stepsize: StepsizeSchedule,
        weights: WeightSchedule,
    ) -> Result<Self> {
        let mut spec = Self::unguarded(algorithm, oracle, stepsize, weights)?;
        let d = spec.oracle.objective().dim();
        let algorithm_cap = stepsize_cap(
            spec.oracle.objective().smoothness(),
            algorithm.effective_delay(d),
            spec.oracle.m(),
        );
        spec.cap = algorithm_cap.min(stepsize.cap);
        if stepsize.first() > spec.cap * (1.0 + 1e-12) {
            return Err(Error::ConfigurationRejected(format!(
                "stepsize {:e} exceeds the admissible cap {:e} for {}",
                stepsize.first(),
                spec.cap,
                algorithm.family()
            )));
        }
        Ok(spec)
    }

    /// Builds a spec without the algorithm's stepsize cap.
    pub fn unguarded(
        algorithm: Algorithm,
        oracle: GradientOracle,
        stepsize: StepsizeSchedule,
        weights: WeightSchedule,
    ) -> Result<Self> {
        algorithm.validate(oracle.objective().dim())?;
        weights.validate()?;
        Ok(AlgorithmSpec {
            algorithm,
            oracle,
            stepsize,
            weights,
            cap: stepsize.cap,
        })
    }

    pub fn cap(&self) -> f64 {
        self.cap
    }

    pub fn effective_delay(&self) -> f64 {
        self.algorithm
            .effective_delay(self.oracle.objective().dim())
    }
}

/// Random streams used by one run: one oracle stream per worker, plus
/// streams for compression and delay sampling.
#[derive(Clone, Debug)]
pub struct Streams {
    pub oracle: Vec<RngStream>,
    pub compressor: RngStream,
    pub delay: RngStream,
}

impl Streams {
    pub fn new(seed: u64, workers: usize) -> Self {
        Streams {
            oracle: (0..workers as u32)
                .map(|k| RngStream::for_purpose(seed, k, StreamPurpose::Oracle))
                .collect(),
            compressor: RngStream::for_purpose(seed, 0, StreamPurpose::Compressor),
            delay: RngStream::for_purpose(seed, 0, StreamPurpose::Delay),
        }
    }
}

#[derive(Clone, Debug)]
enum Pending {
    None,
    /// Ring buffer of scheduled updates indexed by due time mod `tau + 1`.
    Delayed {
        slots: Vec<Vector>,
    },
    Workers(Vec<Vector>),
}

#[derive(Clone, Debug)]
pub struct RunState {
    t: u64,
    x: Vector,
    e: Vector,
    x_tilde: Vector,
    pending: Pending,
    grad: Vector,
    sample: Vector,
    update: Vector,
    worker_grad_sq: Vec<f64>,
}

impl RunState {
    pub fn new(spec: &AlgorithmSpec, x0: &Vector) -> Result<Self> {
        let d = spec.oracle.objective().dim();
        if x0.dim() != d {
            return Err(invalid(format!(
                "x0 has dimension {}, objective has {d}",
                x0.dim()
            )));
        }
        let pending = match spec.algorithm {
            Algorithm::DelayedSgd { tau, .. } => Pending::Delayed {
                slots: vec![Vector::zeros(d); tau + 1],
            },
            Algorithm::LocalSgd { workers, .. } => Pending::Workers(vec![x0.clone(); workers]),
            _ => Pending::None,
        };
        Ok(RunState {
            t: 0,
            x: x0.clone(),
            e: Vector::zeros(d),
            x_tilde: x0.clone(),
            pending,
            grad: Vector::zeros(d),
            sample: Vector::zeros(d),
            update: Vector::zeros(d),
            worker_grad_sq: vec![0.0; spec.algorithm.workers()],
        })
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    /// The iterate `x_t` (the worker average for local SGD).
    pub fn x(&self) -> &Vector {
        &self.x
    }

    pub fn error(&self) -> &Vector {
        &self.e
    }

    pub fn virtual_iterate(&self) -> &Vector {
        &self.x_tilde
    }

    pub fn workers(&self) -> Option<&[Vector]> {
        match &self.pending {
            Pending::Workers(w) => Some(w),
            _ => None,
        }
    }

    /// `||grad f(x^k_{t-1})||^2` per worker from the most recent step.
    pub fn last_worker_grad_norms(&self) -> &[f64] {
        &self.worker_grad_sq
    }

    /// Sum of the updates still waiting to be applied (delayed SGD only).
    pub fn pending_sum(&self) -> Option<Vector> {
        match &self.pending {
            Pending::Delayed { slots } => {
                let mut s = Vector::zeros(self.x.dim());
                slots.iter().for_each(|v| s.axpy(1.0, v));
                Some(s)
            }
            _ => None,
        }
    }

    /// `||x~_t - (x_t - e_t)||`
    pub fn consistency_residual(&self) -> f64 {
        self.x_tilde
            .iter()
            .zip(self.x.iter().zip(self.e.iter()))
            .map(|(xt, (x, e))| (xt - (x - e)).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// `(1/K) sum_k ||x^k_t - x~_t||^2`; zero outside local SGD.
    pub fn worker_dispersion(&self) -> f64 {
        match &self.pending {
            Pending::Workers(w) => {
                w.iter().map(|xk| dist_sq(xk, &self.x_tilde)).sum::<f64>() / w.len() as f64
            }
            _ => 0.0,
        }
    }
}

/// Advances `state` by one step of the algorithm in `spec`.
pub fn step(state: &mut RunState, spec: &AlgorithmSpec, streams: &mut Streams) -> Result<()> {
    if let Algorithm::LocalSgd { .. } = spec.algorithm {
        return step_local(state, spec, streams);
    }
    let t = state.t;
    let gamma = checked_stepsize(spec, t)?;
    let RunState {
        x,
        e,
        x_tilde,
        pending,
        grad,
        sample,
        update,
        worker_grad_sq,
        ..
    } = state;
    spec.oracle
        .sample_with_gradient(x, &mut streams.oracle[0], grad, sample);
    worker_grad_sq[0] = grad.norm_sq();

    match spec.algorithm {
        Algorithm::PlainSgd => {
            update
                .iter_mut()
                .zip(sample.iter())
                .for_each(|(u, g)| *u = gamma * g);
        }
        Algorithm::DelayedSgd { tau, delay } => {
            let Pending::Delayed { slots } = pending else {
                unreachable!("delayed state without a queue")
            };
            let lag = match delay {
                DelayModel::Fixed => tau,
                DelayModel::IidBounded => streams.delay.below(tau + 1),
            };
            let n = slots.len() as u64;
            let due = ((t + lag as u64) % n) as usize;
            slots[due].axpy(gamma, sample);
            let now = (t % n) as usize;
            update.copy_from_slice(&slots[now]);
            slots[now].set_zero();
        }
        Algorithm::ErrorCompensated { compressor } => {
            // p = e + gamma g is stored in e; v = C(p); e <- p - v below
            e.axpy(gamma, sample);
            compressor.compress_into(e, &mut streams.compressor, update)?;
            e.iter_mut().zip(update.iter()).for_each(|(ei, v)| *ei -= v);
            apply(x, x_tilde, update, sample, gamma);
            state.t += 1;
            return Ok(());
        }
        Algorithm::MiniBatch { tau } => {
            e.axpy(gamma, sample);
            if (t + 1).is_multiple_of(tau as u64) {
                update.copy_from_slice(e);
                e.set_zero();
            } else {
                update.set_zero();
            }
            apply(x, x_tilde, update, sample, gamma);
            state.t += 1;
            return Ok(());
        }
        Algorithm::LocalSgd { .. } => unreachable!(),
    }
    // e <- e + gamma g - v
    e.iter_mut()
        .zip(sample.iter().zip(update.iter()))
        .for_each(|(ei, (g, v))| *ei += gamma * g - v);
    apply(x, x_tilde, update, sample, gamma);
    state.t += 1;
    Ok(())
}

fn apply(x: &mut [f64], x_tilde: &mut [f64], update: &[f64], sample: &[f64], gamma: f64) {
    x.iter_mut().zip(update).for_each(|(xi, v)| *xi -= v);
    x_tilde
        .iter_mut()
        .zip(sample)
        .for_each(|(xi, g)| *xi -= gamma * g);
}

fn checked_stepsize(spec: &AlgorithmSpec, t: u64) -> Result<f64> {
    let gamma = spec.stepsize.at(t);
    if gamma > spec.cap * (1.0 + 1e-12) {
        return Err(Error::ConfigurationRejected(format!(
            "stepsize {gamma:e} at t = {t} exceeds the admissible cap {:e}",
            spec.cap
        )));
    }
    Ok(gamma)
}

/// One local SGD step: every worker takes its own stochastic step, and all
/// workers are replaced by their mean whenever `tau` divides `t + 1`.
pub fn step_local(state: &mut RunState, spec: &AlgorithmSpec, streams: &mut Streams) -> Result<()> {
    let Algorithm::LocalSgd { workers, tau } = spec.algorithm else {
        return Err(invalid("step_local needs a local SGD spec"));
    };
    let t = state.t;
    let gamma = checked_stepsize(spec, t)?;
    let RunState {
        x,
        e,
        x_tilde,
        pending,
        grad,
        sample,
        update,
        worker_grad_sq,
        ..
    } = state;
    let Pending::Workers(locals) = pending else {
        unreachable!("local state without workers")
    };
    let inv_k = 1.0 / workers as f64;
    // update accumulates the mean stochastic gradient
    update.set_zero();
    for (k, xk) in locals.iter_mut().enumerate() {
        spec.oracle
            .sample_with_gradient(xk, &mut streams.oracle[k], grad, sample);
        worker_grad_sq[k] = grad.norm_sq();
        xk.iter_mut()
            .zip(sample.iter())
            .for_each(|(xi, g)| *xi -= gamma * g);
        update.axpy(inv_k, sample);
    }
    if (t + 1).is_multiple_of(tau as u64) && workers > 1 {
        let mut mean = Vector::zeros(x.dim());
        locals.iter().for_each(|xk| mean.axpy(1.0, xk));
        mean.scale(inv_k);
        locals.iter_mut().for_each(|xk| xk.copy_from_slice(&mean));
    }
    // new x is the worker mean; v = x_t - x_{t+1}
    let mut next = Vector::zeros(x.dim());
    if workers == 1 {
        next.copy_from_slice(&locals[0]);
    } else {
        locals.iter().for_each(|xk| next.axpy(1.0, xk));
        next.scale(inv_k);
    }
    for i in 0..x.len() {
        let v = x[i] - next[i];
        e[i] += gamma * update[i] - v;
        x_tilde[i] -= gamma * update[i];
    }
    x.copy_from_slice(&next);
    state.t += 1;
    Ok(())
}

/// Metrics of the iterate `x_t` at one recorded time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MetricRow {
    pub t: u64,
    pub subopt: f64,
    pub grad_norm_sq: f64,
    pub err_norm_sq: f64,
    pub consistency_residual: f64,
    pub worker_dispersion: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FinalMetrics {
    pub horizon: u64,
    /// `f(x_T) - f*`
    pub last_subopt: f64,
    /// `f(xbar_T) - f*` for the weighted average of `x_0..x_T`
    pub average_subopt: f64,
    /// `(1/(T+1)) sum_t (f(x_t) - f*)`
    pub mean_subopt: f64,
    /// `(1/(T+1)) sum_t ||grad f(x_t)||^2`
    pub mean_grad_norm_sq: f64,
    pub last_grad_norm_sq: f64,
    /// `max_t ||x~_t - (x_t - e_t)|| / (1 + ||x_t||)`
    pub max_relative_consistency: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Trajectory {
    pub seed: u64,
    pub rows: Vec<MetricRow>,
    pub summary: FinalMetrics,
}

/// Which times to keep in `Trajectory::rows`: every `stride`-th iteration,
/// plus the last one.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Recording {
    pub stride: u64,
}

impl Recording {
    pub fn every(stride: u64) -> Self {
        Recording {
            stride: stride.max(1),
        }
    }

    pub fn none() -> Self {
        Recording { stride: u64::MAX }
    }

    fn keeps(&self, t: u64, horizon: u64) -> bool {
        t == horizon || (self.stride != u64::MAX && t.is_multiple_of(self.stride))
    }
}

/// Runs `horizon` steps from `x0` with seed `seed`, recording `x_0..x_T`.
pub fn run(
    spec: &AlgorithmSpec,
    x0: &Vector,
    horizon: u64,
    seed: u64,
    recording: Recording,
) -> Result<Trajectory> {
    if horizon < 1 {
        return Err(invalid("horizon must be >= 1"));
    }
    let objective = spec.oracle.objective().clone();
    let f_star = objective.f_star();
    let mut state = RunState::new(spec, x0)?;
    let mut streams = Streams::new(seed, spec.algorithm.workers());
    let mut average = WeightedAverage::new(spec.weights);
    let mut grad = Vector::zeros(x0.dim());
    let mut rows = Vec::new();
    let (mut sum_subopt, mut sum_grad, mut worst_consistency) = (0.0, 0.0, 0.0f64);
    let mut last = (0.0, 0.0);
    for t in 0..=horizon {
        let x = state.x();
        let subopt = objective.value(x) - f_star;
        if !(subopt <= DIVERGENCE_THRESHOLD) || !x.is_finite() {
            return Err(Error::Diverged {
                iteration: t,
                reason: format!("suboptimality {subopt:e}"),
            });
        }
        objective.gradient_into(x, &mut grad);
        let grad_sq = grad.norm_sq();
        let residual = state.consistency_residual();
        worst_consistency = worst_consistency.max(residual / (1.0 + x.norm()));
        sum_subopt += subopt;
        sum_grad += grad_sq;
        average.push(x);
        last = (subopt, grad_sq);
        if recording.keeps(t, horizon) {
            rows.push(MetricRow {
                t,
                subopt,
                grad_norm_sq: grad_sq,
                err_norm_sq: state.error().norm_sq(),
                consistency_residual: residual,
                worker_dispersion: state.worker_dispersion(),
            });
        }
        if t < horizon {
            step(&mut state, spec, &mut streams)?;
        }
    }
    let n = (horizon + 1) as f64;
    let xbar = average.value().expect("at least one point");
    Ok(Trajectory {
        seed,
        rows,
        summary: FinalMetrics {
            horizon,
            last_subopt: last.0,
            average_subopt: objective.value(xbar) - f_star,
            mean_subopt: sum_subopt / n,
            mean_grad_norm_sq: sum_grad / n,
            last_grad_norm_sq: last.1,
            max_relative_consistency: worst_consistency,
        },
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use proptest::prelude::*;

    use super::*;
    use crate::objectives::{make_quadratic, Objective};

    fn scalar_quadratic() -> Arc<dyn Objective> {
        Arc::new(make_quadratic(1, 1.0, 1.0, Vector::zeros(1)).unwrap())
    }

    fn spec(algorithm: Algorithm, oracle: GradientOracle, gamma: f64) -> AlgorithmSpec {
        AlgorithmSpec::unguarded(
            algorithm,
            oracle,
            StepsizeSchedule::unchecked_constant(gamma),
            WeightSchedule::Uniform,
        )
        .unwrap()
    }

    fn trajectory(spec: &AlgorithmSpec, x0: &Vector, steps: usize, seed: u64) -> Vec<RunState> {
        let mut state = RunState::new(spec, x0).unwrap();
        let mut streams = Streams::new(seed, spec.algorithm.workers());
        let mut out = vec![state.clone()];
        for _ in 0..steps {
            step(&mut state, spec, &mut streams).unwrap();
            out.push(state.clone());
        }
        out
    }

    fn dsgd(tau: usize) -> Algorithm {
        Algorithm::DelayedSgd {
            tau,
            delay: DelayModel::Fixed,
        }
    }

    #[test]
    fn delayed_hand_unrolled() {
        let s = spec(
            dsgd(2),
            GradientOracle::deterministic(scalar_quadratic()),
            0.1,
        );
        let states = trajectory(&s, &Vector::filled(1, 1.0), 6, 0);
        let xs: Vec<f64> = states.iter().map(|s| s.x()[0]).collect();
        let expected = [1.0, 1.0, 1.0, 0.9, 0.8, 0.7, 0.61];
        for (a, b) in xs.iter().zip(expected) {
            assert!((a - b).abs() <= 1e-15, "{xs:?}");
        }
        assert!((states[3].error()[0] - 0.2).abs() <= 1e-15);
        assert!((states[3].virtual_iterate()[0] - 0.7).abs() <= 1e-15);
        assert!(states[3].consistency_residual() <= 1e-15);
    }

    #[test]
    fn unit_delay_is_sgd_with_stale_gradient() {
        let f = scalar_quadratic();
        let s = spec(dsgd(1), GradientOracle::deterministic(f), 0.3);
        let xs: Vec<f64> = trajectory(&s, &Vector::filled(1, 2.0), 8, 0)
            .iter()
            .map(|s| s.x()[0])
            .collect();
        let mut direct = vec![2.0, 2.0];
        for t in 1..8 {
            let next = direct[t] - 0.3 * direct[t - 1];
            direct.push(next);
        }
        assert_eq!(xs, direct);
    }

    #[test]
    fn plain_sgd_closed_form() {
        let s = spec(
            Algorithm::PlainSgd,
            GradientOracle::deterministic(scalar_quadratic()),
            0.5,
        );
        let traj = run(&s, &Vector::filled(1, 1.0), 10, 0, Recording::none()).unwrap();
        let expected = 0.5f64.powi(20) / 2.0;
        assert!((traj.summary.last_subopt - expected).abs() <= 1e-20);
        assert_eq!(traj.rows.len(), 1);
    }

    fn noisy_quadratic() -> (Arc<dyn Objective>, GradientOracle) {
        let f: Arc<dyn Objective> =
            Arc::new(make_quadratic(6, 0.1, 1.0, Vector::filled(6, 0.5)).unwrap());
        let o = GradientOracle::additive(f.clone(), 1.0).unwrap();
        (f, o)
    }

    #[test]
    fn identity_compression_is_plain_sgd() {
        let (_, o) = noisy_quadratic();
        let x0 = Vector::filled(6, 3.0);
        let a = trajectory(&spec(Algorithm::PlainSgd, o.clone(), 0.05), &x0, 200, 7);
        let b = trajectory(
            &spec(
                Algorithm::ErrorCompensated {
                    compressor: Compressor::Identity,
                },
                o,
                0.05,
            ),
            &x0,
            200,
            7,
        );
        for (sa, sb) in a.iter().zip(&b) {
            assert_eq!(sa.x(), sb.x());
            assert_eq!(sb.error().norm_sq(), 0.0);
        }
    }

    #[test]
    fn single_worker_local_is_plain_sgd() {
        let (_, o) = noisy_quadratic();
        let x0 = Vector::filled(6, -1.0);
        let a = trajectory(&spec(Algorithm::PlainSgd, o.clone(), 0.05), &x0, 300, 3);
        let b = trajectory(
            &spec(Algorithm::LocalSgd { workers: 1, tau: 4 }, o, 0.05),
            &x0,
            300,
            3,
        );
        for (sa, sb) in a.iter().zip(&b) {
            assert_eq!(sa.x(), sb.x());
            assert_eq!(sb.workers().unwrap()[0], *sa.x());
        }
    }

    #[test]
    fn deterministic_workers_stay_identical() {
        let f: Arc<dyn Objective> =
            Arc::new(make_quadratic(4, 0.1, 1.0, Vector::filled(4, 0.5)).unwrap());
        let s = spec(
            Algorithm::LocalSgd { workers: 5, tau: 3 },
            GradientOracle::deterministic(f),
            0.1,
        );
        for st in trajectory(&s, &Vector::filled(4, 2.0), 50, 0) {
            let w = st.workers().unwrap();
            assert!(w.iter().all(|xk| xk == &w[0]));
        }
    }

    #[test]
    fn dispersion_resets_at_sync() {
        let (_, o) = noisy_quadratic();
        let s = spec(Algorithm::LocalSgd { workers: 4, tau: 5 }, o, 0.05);
        let states = trajectory(&s, &Vector::filled(6, 1.0), 100, 9);
        for st in &states {
            let w = st.workers().unwrap();
            let spread = w
                .iter()
                .map(|xk| dist_sq(xk, st.virtual_iterate()).sqrt())
                .fold(0.0, f64::max);
            if st.t() % 5 == 0 {
                assert!(spread <= 1e-12, "t = {}: {spread}", st.t());
            } else if st.t() % 5 == 4 {
                assert!(spread > 0.0);
            }
        }
    }

    #[test]
    fn minibatch_error_vanishes_at_sync() {
        let (_, o) = noisy_quadratic();
        let s = spec(Algorithm::MiniBatch { tau: 4 }, o, 0.02);
        for st in trajectory(&s, &Vector::filled(6, 1.0), 100, 1) {
            if st.t() % 4 == 0 {
                assert_eq!(st.error().norm_sq(), 0.0);
            }
        }
    }

    #[test]
    fn guarded_spec_rejects_large_steps() {
        let (_, o) = noisy_quadratic();
        let err = AlgorithmSpec::new(
            dsgd(4),
            o.clone(),
            StepsizeSchedule::unchecked_constant(0.1),
            WeightSchedule::Uniform,
        )
        .unwrap_err();
        assert!(matches!(err, Error::ConfigurationRejected(_)));
        assert!(AlgorithmSpec::new(
            dsgd(4),
            o,
            StepsizeSchedule::unchecked_constant(0.025),
            WeightSchedule::Uniform,
        )
        .is_ok());
    }

    #[test]
    fn divergence_is_reported_with_iteration() {
        let s = spec(
            Algorithm::PlainSgd,
            GradientOracle::deterministic(scalar_quadratic()),
            3.0,
        );
        match run(&s, &Vector::filled(1, 1.0), 100, 0, Recording::none()) {
            Err(Error::Diverged { iteration, .. }) => assert!(iteration > 10 && iteration < 100),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn invalid_parameters_rejected() {
        let (_, o) = noisy_quadratic();
        assert!(AlgorithmSpec::unguarded(
            dsgd(0),
            o.clone(),
            StepsizeSchedule::unchecked_constant(0.01),
            WeightSchedule::Uniform
        )
        .is_err());
        assert!(AlgorithmSpec::unguarded(
            Algorithm::ErrorCompensated {
                compressor: Compressor::TopK { k: 7 }
            },
            o,
            StepsizeSchedule::unchecked_constant(0.01),
            WeightSchedule::Uniform
        )
        .is_err());
    }

    fn algorithm_strategy() -> impl Strategy<Value = Algorithm> {
        prop_oneof![
            Just(Algorithm::PlainSgd),
            (1usize..6).prop_map(dsgd),
            (1usize..6).prop_map(|tau| Algorithm::DelayedSgd {
                tau,
                delay: DelayModel::IidBounded
            }),
            (1.0f64..6.0).prop_map(|tau| Algorithm::ErrorCompensated {
                compressor: Compressor::RandDrop { tau }
            }),
            (1usize..6).prop_map(|k| Algorithm::ErrorCompensated {
                compressor: Compressor::TopK { k }
            }),
            (1usize..6).prop_map(|tau| Algorithm::MiniBatch { tau }),
            (1usize..5, 1usize..5).prop_map(|(workers, tau)| Algorithm::LocalSgd { workers, tau }),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn virtual_iterate_identity(alg in algorithm_strategy(), seed in any::<u64>(), gamma in 0.001f64..0.05) {
            let (_, o) = noisy_quadratic();
            let s = spec(alg, o, gamma);
            for st in trajectory(&s, &Vector::filled(6, 2.0), 150, seed) {
                prop_assert!(st.consistency_residual() <= 1e-10 * (1.0 + st.x().norm()));
            }
        }

        #[test]
        fn delayed_error_equals_pending_sum(tau in 1usize..8, iid in any::<bool>(), seed in any::<u64>()) {
            let (_, o) = noisy_quadratic();
            let delay = if iid { DelayModel::IidBounded } else { DelayModel::Fixed };
            let s = spec(Algorithm::DelayedSgd { tau, delay }, o, 0.01);
            for st in trajectory(&s, &Vector::filled(6, 2.0), 100, seed) {
                let pending = st.pending_sum().unwrap();
                prop_assert!(dist_sq(&pending, st.error()).sqrt() <= 1e-12);
            }
        }

        #[test]
        fn same_seed_same_trajectory(alg in algorithm_strategy(), seed in any::<u64>()) {
            let (_, o) = noisy_quadratic();
            let s = spec(alg, o, 0.01);
            let a = trajectory(&s, &Vector::filled(6, 1.0), 40, seed);
            let b = trajectory(&s, &Vector::filled(6, 1.0), 40, seed);
            for (sa, sb) in a.iter().zip(&b) {
                prop_assert_eq!(sa.x(), sb.x());
            }
        }
    }
}
