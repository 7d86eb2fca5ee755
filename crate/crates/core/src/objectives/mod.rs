//! Test objectives with known minimizers and certified constants.
//!
//! Every objective reports its optimal value `f*`, a minimizer `x*` when one
//! is known, an upper bound `L` on the Lipschitz constant of its gradient, and
//! the quasi-convexity constant `mu` with respect to `x*`.

mod least_squares;
mod quadratic;
mod radial;
mod star;

use std::fmt::Debug;

use serde::{Deserialize, Serialize};

use crate::numerics::{dist_sq, dot, norm_sq, RngStream, Vector};

pub use least_squares::{make_least_squares, LeastSquares};
pub use quadratic::{make_quadratic, Quadratic};
pub use radial::{make_nonconvex_radial, NonconvexRadial};
pub use star::{make_star_convex_1d, StarConvex1d};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConvexityClass {
    StronglyQuasiConvex,
    WeaklyQuasiConvex,
    NonConvex,
}

pub trait Objective: Send + Sync + Debug {
    fn dim(&self) -> usize;

    fn value(&self, x: &[f64]) -> f64;

    fn gradient_into(&self, x: &[f64], out: &mut [f64]);

    fn gradient(&self, x: &[f64]) -> Vector {
        let mut g = Vector::zeros(self.dim());
        self.gradient_into(x, &mut g);
        g
    }

    fn f_star(&self) -> f64;

    fn x_star(&self) -> Option<&Vector>;

    /// Certified upper bound on the gradient Lipschitz constant.
    fn smoothness(&self) -> f64;

    /// Quasi-convexity constant `mu` with respect to `x*` (0 when weakly
    /// quasi-convex or non-convex).
    fn quasi_convexity(&self) -> f64;

    fn class(&self) -> ConvexityClass;

    fn name(&self) -> &'static str;

    fn suboptimality(&self, x: &[f64]) -> f64 {
        self.value(x) - self.f_star()
    }
}

/// An objective of the form `f(x) = (1/n) sum_i f_i(x)`.
pub trait FiniteSum: Objective {
    fn components(&self) -> usize;

    fn component_value(&self, i: usize, x: &[f64]) -> f64;

    fn component_gradient_into(&self, i: usize, x: &[f64], out: &mut [f64]);

    /// Common smoothness constant of the individual components.
    fn component_smoothness(&self) -> f64;
}

/// Outcome of sampling an objective's declared constants.
#[derive(Clone, Debug, Default, Serialize)]
pub struct Certification {
    pub samples: usize,
    pub lipschitz_violations: usize,
    pub gradient_bound_violations: usize,
    pub quasi_convexity_violations: usize,
    /// max over pairs of `||grad(x) - grad(y)|| / ||x - y||`
    pub worst_lipschitz_ratio: f64,
    /// max over points of `||grad(x)||^2 / (2 (f(x) - f*))`
    pub worst_gradient_ratio: f64,
    pub constants_consistent: bool,
}

impl Certification {
    pub fn passed(&self) -> bool {
        self.constants_consistent
            && self.lipschitz_violations == 0
            && self.gradient_bound_violations == 0
            && self.quasi_convexity_violations == 0
    }
}

/// Uniform point in the ball of radius `radius` around `center`.
pub fn sample_ball(rng: &mut RngStream, center: &[f64], radius: f64) -> Vector {
    let d = center.len();
    let mut dir: Vec<f64> = (0..d).map(|_| rng.standard_normal()).collect();
    let n = norm_sq(&dir).sqrt().max(f64::MIN_POSITIVE);
    let r = radius * rng.uniform().powf(1.0 / d as f64);
    for (v, c) in dir.iter_mut().zip(center) {
        *v = c + r * *v / n;
    }
    Vector::from_slice_unchecked(&dir)
}

/// Checks the declared `L`, `mu`, `f*`, `x*` of `objective` on `samples`
/// random points (and consecutive pairs) in a ball of `radius` around `x*`
/// (or the origin when `x*` is unknown).
pub fn certify(
    objective: &dyn Objective,
    samples: usize,
    radius: f64,
    rng: &mut RngStream,
) -> Certification {
    const REL: f64 = 1e-9;
    let d = objective.dim();
    let center = objective
        .x_star()
        .map(|v| v.as_slice().to_vec())
        .unwrap_or_else(|| vec![0.0; d]);
    let l = objective.smoothness();
    let mu = objective.quasi_convexity();
    let f_star = objective.f_star();
    let mut report = Certification {
        samples,
        constants_consistent: l >= mu,
        ..Default::default()
    };
    let mut prev: Option<(Vector, Vector)> = None;
    for _ in 0..samples {
        let x = sample_ball(rng, &center, radius);
        let g = objective.gradient(&x);
        let gap = objective.value(&x) - f_star;
        let g_sq = g.norm_sq();

        let allowed = 2.0 * l * gap;
        if g_sq > allowed * (1.0 + REL) + 1e-14 {
            report.gradient_bound_violations += 1;
        }
        if gap > 0.0 {
            report.worst_gradient_ratio = report.worst_gradient_ratio.max(g_sq / (2.0 * gap));
        }

        if objective.class() != ConvexityClass::NonConvex {
            let diff = x.sub(&center);
            let lhs = gap + 0.5 * mu * diff.norm_sq();
            let rhs = dot(&g, &diff);
            if lhs > rhs + REL * (lhs.abs() + rhs.abs()) + 1e-14 {
                report.quasi_convexity_violations += 1;
            }
        }

        if let Some((px, pg)) = &prev {
            let dx = dist_sq(&x, px).sqrt();
            let dg = dist_sq(&g, pg).sqrt();
            if dx > 0.0 {
                report.worst_lipschitz_ratio = report.worst_lipschitz_ratio.max(dg / dx);
                if dg > l * dx * (1.0 + REL) {
                    report.lipschitz_violations += 1;
                }
            }
        }
        prev = Some((x, g));
    }
    report
}
