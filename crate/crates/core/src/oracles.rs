//! Stochastic gradient oracles with declared noise constants `(M, sigma^2)`.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{invalid, Result};
use crate::numerics::{dist_sq, fill_gaussian, norm_sq, RngStream, RunningStats, Vector};
use crate::objectives::{FiniteSum, Objective};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NoiseKind {
    None,
    /// `g = grad f(x) + xi` with `xi` Gaussian, `E||xi||^2 = sigma_sq`.
    Additive {
        sigma_sq: f64,
    },
    /// `g = grad f_i(x)` for a uniformly drawn component `i`.
    FiniteSumSampling,
    /// `g = (1 + eta) grad f(x)` with `eta ~ U[-sqrt(3M), sqrt(3M)]`.
    StrongGrowth {
        m: f64,
    },
}

/// Which second-moment bound the oracle promises to satisfy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseAssumption {
    /// `E||xi||^2 <= M ||grad f(x)||^2 + sigma^2`
    Relative,
    /// `E||xi||^2 <= 2 L M (f(x) - f*) + sigma^2`
    Suboptimality,
}

#[derive(Clone, Debug)]
pub struct GradientOracle {
    objective: Arc<dyn Objective>,
    finite_sum: Option<Arc<dyn FiniteSum>>,
    kind: NoiseKind,
    m: f64,
    sigma_sq: f64,
    noise_smoothness: f64,
}

impl GradientOracle {
    pub fn deterministic(objective: Arc<dyn Objective>) -> Self {
        let l = objective.smoothness();
        GradientOracle {
            objective,
            finite_sum: None,
            kind: NoiseKind::None,
            m: 0.0,
            sigma_sq: 0.0,
            noise_smoothness: l,
        }
    }

    pub fn additive(objective: Arc<dyn Objective>, sigma_sq: f64) -> Result<Self> {
        if !(sigma_sq >= 0.0) || !sigma_sq.is_finite() {
            return Err(invalid(format!("sigma_sq must be >= 0, got {sigma_sq}")));
        }
        if sigma_sq == 0.0 {
            return Ok(Self::deterministic(objective));
        }
        let l = objective.smoothness();
        Ok(GradientOracle {
            objective,
            finite_sum: None,
            kind: NoiseKind::Additive { sigma_sq },
            m: 0.0,
            sigma_sq,
            noise_smoothness: l,
        })
    }

    /// Uniform component sampling. Declares `M = 6` and
    /// `sigma^2 = 3 (1/n) sum_i ||grad f_i(x*)||^2`, valid for the
    /// suboptimality form of the bound with the component smoothness.
    pub fn finite_sum<F: FiniteSum + 'static>(objective: Arc<F>) -> Result<Self> {
        let x_star = objective
            .x_star()
            .ok_or_else(|| invalid("finite-sum sampling needs a known minimizer"))?
            .clone();
        let n = objective.components();
        let mut g = vec![0.0; objective.dim()];
        let second_moment = (0..n)
            .map(|i| {
                objective.component_gradient_into(i, &x_star, &mut g);
                norm_sq(&g)
            })
            .sum::<f64>()
            / n as f64;
        let noise_smoothness = objective.component_smoothness();
        Ok(GradientOracle {
            objective: objective.clone(),
            finite_sum: Some(objective),
            kind: NoiseKind::FiniteSumSampling,
            m: 6.0,
            sigma_sq: 3.0 * second_moment,
            noise_smoothness,
        })
    }

    pub fn strong_growth(objective: Arc<dyn Objective>, m: f64) -> Result<Self> {
        if !(m >= 0.0) || !m.is_finite() {
            return Err(invalid(format!("M must be >= 0, got {m}")));
        }
        let l = objective.smoothness();
        Ok(GradientOracle {
            objective,
            finite_sum: None,
            kind: NoiseKind::StrongGrowth { m },
            m,
            sigma_sq: 0.0,
            noise_smoothness: l,
        })
    }

    pub fn objective(&self) -> &Arc<dyn Objective> {
        &self.objective
    }

    pub fn kind(&self) -> NoiseKind {
        self.kind
    }

    pub fn m(&self) -> f64 {
        self.m
    }

    pub fn sigma_sq(&self) -> f64 {
        self.sigma_sq
    }

    pub fn assumption(&self) -> NoiseAssumption {
        match self.kind {
            NoiseKind::FiniteSumSampling => NoiseAssumption::Suboptimality,
            _ => NoiseAssumption::Relative,
        }
    }

    /// Smoothness constant entering the suboptimality form of the bound.
    pub fn noise_smoothness(&self) -> f64 {
        self.noise_smoothness
    }

    /// Writes the exact gradient into `grad` and a stochastic gradient into
    /// `out`.
    pub fn sample_with_gradient(
        &self,
        x: &[f64],
        rng: &mut RngStream,
        grad: &mut [f64],
        out: &mut [f64],
    ) {
        self.objective.gradient_into(x, grad);
        match self.kind {
            NoiseKind::None => out.copy_from_slice(grad),
            NoiseKind::Additive { sigma_sq } => {
                fill_gaussian(rng, sigma_sq.sqrt(), out);
                out.iter_mut().zip(grad.iter()).for_each(|(o, g)| *o += g);
            }
            NoiseKind::FiniteSumSampling => {
                let fs = self.finite_sum.as_ref().expect("finite-sum oracle");
                let i = rng.below(fs.components());
                fs.component_gradient_into(i, x, out);
            }
            NoiseKind::StrongGrowth { m } => {
                let half_width = (3.0 * m).sqrt();
                let eta = half_width * (2.0 * rng.uniform() - 1.0);
                out.iter_mut()
                    .zip(grad.iter())
                    .for_each(|(o, g)| *o = (1.0 + eta) * g);
            }
        }
    }

    pub fn sample_into(&self, x: &[f64], rng: &mut RngStream, out: &mut [f64]) {
        let mut grad = vec![0.0; x.len()];
        self.sample_with_gradient(x, rng, &mut grad, out);
    }

    pub fn sample(&self, x: &[f64], rng: &mut RngStream) -> Vector {
        let mut out = Vector::zeros(x.len());
        self.sample_into(x, rng, &mut out);
        out
    }

    /// Exact `E||xi||^2` at `x` when it is available in closed form or by
    /// enumeration.
    pub fn exact_noise(&self, x: &[f64]) -> Option<f64> {
        match self.kind {
            NoiseKind::None => Some(0.0),
            NoiseKind::Additive { sigma_sq } => Some(sigma_sq),
            NoiseKind::StrongGrowth { m } => Some(m * self.objective.gradient(x).norm_sq()),
            NoiseKind::FiniteSumSampling => {
                let fs = self.finite_sum.as_ref()?;
                let full = fs.gradient(x);
                let mut g = vec![0.0; x.len()];
                let n = fs.components();
                Some(
                    (0..n)
                        .map(|i| {
                            fs.component_gradient_into(i, x, &mut g);
                            dist_sq(&g, &full)
                        })
                        .sum::<f64>()
                        / n as f64,
                )
            }
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PointNoise {
    pub estimate: f64,
    pub std_err: f64,
    pub exact: bool,
    pub relative_bound: f64,
    pub suboptimality_bound: f64,
    pub relative_slack: f64,
    pub suboptimality_slack: f64,
    pub violated: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct NoiseAudit {
    pub kind: NoiseKind,
    pub assumption: NoiseAssumption,
    pub m: f64,
    pub sigma_sq: f64,
    pub trials: usize,
    pub points: Vec<PointNoise>,
}

impl NoiseAudit {
    pub fn violations(&self) -> usize {
        self.points.iter().filter(|p| p.violated).count()
    }

    pub fn passed(&self) -> bool {
        self.violations() == 0
    }
}

pub const MIN_NOISE_TRIALS: usize = 1_000;

/// Estimates `E||g - grad f(x)||^2` at each point and compares it against
/// both forms of the declared bound. Finite-sum oracles are enumerated
/// exactly; the rest use `trials` Monte-Carlo draws. A point is flagged when
/// the estimate exceeds the oracle's declared bound by more than three
/// standard errors.
pub fn audit_noise(
    oracle: &GradientOracle,
    points: &[Vector],
    trials: usize,
    rng: &mut RngStream,
) -> Result<NoiseAudit> {
    if trials < MIN_NOISE_TRIALS {
        return Err(invalid(format!(
            "noise audit needs at least {MIN_NOISE_TRIALS} trials, got {trials}"
        )));
    }
    let objective = oracle.objective();
    let l = oracle.noise_smoothness();
    let mut audited = Vec::with_capacity(points.len());
    for x in points {
        let d = x.dim();
        let mut grad = vec![0.0; d];
        let mut g = vec![0.0; d];
        let (estimate, std_err, exact) = match oracle.kind() {
            NoiseKind::FiniteSumSampling => (oracle.exact_noise(x).unwrap_or(0.0), 0.0, true),
            _ => {
                let stats: RunningStats = (0..trials)
                    .map(|_| {
                        oracle.sample_with_gradient(x, rng, &mut grad, &mut g);
                        dist_sq(&g, &grad)
                    })
                    .collect();
                (stats.mean(), stats.std_err(), false)
            }
        };
        let grad_sq = objective.gradient(x).norm_sq();
        let gap = (objective.value(x) - objective.f_star()).max(0.0);
        let relative_bound = oracle.m() * grad_sq + oracle.sigma_sq();
        let suboptimality_bound = 2.0 * l * oracle.m() * gap + oracle.sigma_sq();
        let declared = match oracle.assumption() {
            NoiseAssumption::Relative => relative_bound,
            NoiseAssumption::Suboptimality => suboptimality_bound,
        };
        let tolerance = 3.0 * std_err + 1e-12 * (1.0 + declared.abs());
        audited.push(PointNoise {
            estimate,
            std_err,
            exact,
            relative_bound,
            suboptimality_bound,
            relative_slack: relative_bound - estimate,
            suboptimality_slack: suboptimality_bound - estimate,
            violated: estimate > declared + tolerance,
        });
    }
    Ok(NoiseAudit {
        kind: oracle.kind(),
        assumption: oracle.assumption(),
        m: oracle.m(),
        sigma_sq: oracle.sigma_sq(),
        trials,
        points: audited,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::StreamPurpose;
    use crate::objectives::{
        make_least_squares, make_nonconvex_radial, make_quadratic, sample_ball,
    };

    fn quadratic() -> Arc<dyn Objective> {
        Arc::new(make_quadratic(5, 0.1, 1.0, Vector::filled(5, 1.0)).unwrap())
    }

    fn points(center: &[f64], count: usize, seed: u64) -> Vec<Vector> {
        let mut rng = RngStream::new(seed, 99);
        (0..count)
            .map(|_| sample_ball(&mut rng, center, 5.0))
            .collect()
    }

    #[test]
    fn deterministic_oracle_returns_gradient() {
        let f = quadratic();
        let o = GradientOracle::deterministic(f.clone());
        let x = [0.3, -1.0, 2.0, 0.0, 1.5];
        let mut rng = RngStream::new(1, 0);
        assert_eq!(o.sample(&x, &mut rng), f.gradient(&x));
        assert_eq!((o.m(), o.sigma_sq()), (0.0, 0.0));
    }

    #[test]
    fn additive_oracle_mean_and_second_moment() {
        let f = quadratic();
        let o = GradientOracle::additive(f.clone(), 1.0).unwrap();
        let x = [0.3, -1.0, 2.0, 0.0, 1.5];
        let grad = f.gradient(&x);
        let mut rng = RngStream::for_purpose(3, 0, StreamPurpose::Oracle);
        let n = 100_000;
        let mut mean = [0.0; 5];
        let mut noise = RunningStats::new();
        for _ in 0..n {
            let g = o.sample(&x, &mut rng);
            mean.iter_mut()
                .zip(g.iter())
                .for_each(|(m, v)| *m += v / n as f64);
            noise.push(dist_sq(&g, &grad));
        }
        let tol = 0.02 * grad.norm() + 0.02;
        for (m, g) in mean.iter().zip(grad.iter()) {
            assert!((m - g).abs() <= tol);
        }
        assert!((0.98..=1.02).contains(&noise.mean()), "{}", noise.mean());
    }

    #[test]
    fn finite_sum_declares_six_and_three_times_noise_at_optimum() {
        let ls = Arc::new(make_least_squares(40, 3, &mut RngStream::new(5, 0), 0.5).unwrap());
        let o = GradientOracle::finite_sum(ls.clone()).unwrap();
        assert_eq!(o.m(), 6.0);
        let expected = 3.0 * ls.gradient_second_moment_at_optimum();
        assert!((o.sigma_sq() - expected).abs() <= 1e-14 * expected);
        assert_eq!(o.assumption(), NoiseAssumption::Suboptimality);
    }

    #[test]
    fn finite_sum_sampling_is_unbiased_under_enumeration() {
        let ls = Arc::new(make_least_squares(30, 4, &mut RngStream::new(6, 0), 0.5).unwrap());
        let x = [0.5, -0.2, 1.0, 2.0];
        let mut acc = vec![0.0; 4];
        let mut g = vec![0.0; 4];
        for i in 0..30 {
            ls.component_gradient_into(i, &x, &mut g);
            acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b / 30.0);
        }
        let full = ls.gradient(&x);
        assert!(dist_sq(&acc, &full).sqrt() <= 1e-12 * (1.0 + full.norm()));
    }

    #[test]
    fn finite_sum_noise_at_optimum_is_exact_second_moment() {
        let ls = Arc::new(make_least_squares(50, 3, &mut RngStream::new(7, 0), 1.0).unwrap());
        let o = GradientOracle::finite_sum(ls.clone()).unwrap();
        let x_star = ls.x_star().unwrap().clone();
        let report = audit_noise(&o, &[x_star], 1_000, &mut RngStream::new(1, 0)).unwrap();
        let p = &report.points[0];
        assert!(p.exact);
        // the gradient vanishes at x*, so the noise is the raw second moment
        let direct = ls.gradient_second_moment_at_optimum();
        assert!((p.estimate - direct).abs() <= 1e-12 * direct);
        assert!((p.estimate - o.sigma_sq() / 3.0).abs() <= 1e-12 * direct);
        assert!(report.passed());
    }

    #[test]
    fn deterministic_audit_has_full_slack() {
        let f = quadratic();
        let o = GradientOracle::deterministic(f);
        let pts = points(&[1.0; 5], 5, 2);
        let report = audit_noise(&o, &pts, 1_000, &mut RngStream::new(1, 0)).unwrap();
        for p in &report.points {
            assert_eq!(p.estimate, 0.0);
            assert_eq!(p.relative_slack, p.relative_bound);
        }
    }

    #[test]
    fn strong_growth_noise_vanishes_at_stationary_point() {
        let f: Arc<dyn Objective> = Arc::new(make_nonconvex_radial(3, 0.0).unwrap());
        let o = GradientOracle::strong_growth(f, 2.0).unwrap();
        let report =
            audit_noise(&o, &[Vector::zeros(3)], 1_000, &mut RngStream::new(2, 0)).unwrap();
        assert_eq!(report.points[0].estimate, 0.0);
    }

    #[test]
    fn audit_rejects_small_budgets() {
        let o = GradientOracle::deterministic(quadratic());
        assert!(audit_noise(&o, &[Vector::zeros(5)], 999, &mut RngStream::new(0, 0)).is_err());
    }

    #[test]
    fn shipped_oracles_pass_their_own_audit() {
        let f = quadratic();
        let ls = Arc::new(make_least_squares(40, 5, &mut RngStream::new(8, 0), 0.7).unwrap());
        let oracles = [
            GradientOracle::deterministic(f.clone()),
            GradientOracle::additive(f.clone(), 1.0).unwrap(),
            GradientOracle::strong_growth(f.clone(), 1.5).unwrap(),
            GradientOracle::finite_sum(ls.clone()).unwrap(),
        ];
        let near_quadratic = points(&[1.0; 5], 100, 4);
        let near_ls = points(ls.x_star().unwrap(), 100, 5);
        for (k, o) in oracles.iter().enumerate() {
            let pts = if k == 3 { &near_ls } else { &near_quadratic };
            let report =
                audit_noise(o, pts, 10_000, &mut RngStream::new(10 + k as u64, 0)).unwrap();
            assert!(
                report.passed(),
                "oracle {k}: {} violations",
                report.violations()
            );
        }
    }

    #[test]
    fn invalid_constants_rejected() {
        assert!(GradientOracle::additive(quadratic(), -1.0).is_err());
        assert!(GradientOracle::strong_growth(quadratic(), f64::NAN).is_err());
    }
}
