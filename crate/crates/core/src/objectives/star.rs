use crate::numerics::Vector;

use super::{ConvexityClass, Objective};

/// `f(x) = |x| (1 - exp(-|x|))`: smooth and star-convex around 0, not convex.
///
/// Smoothness: for `s = |x| > 0`, `f''(x) = (2 - s) exp(-s)`, which ranges over
/// `[-exp(-3), 2]` and tends to 2 from both sides at the origin, so
/// `f'` is continuous with `sup |f''| = 2`. The certified `L = 2` is
/// therefore the tight constant.
#[derive(Clone, Debug)]
pub struct StarConvex1d {
    x_star: Vector,
}

pub fn make_star_convex_1d() -> StarConvex1d {
    StarConvex1d {
        x_star: Vector::zeros(1),
    }
}

impl StarConvex1d {
    pub const SMOOTHNESS: f64 = 2.0;

    pub fn derivative(x: f64) -> f64 {
        let s = x.abs();
        if s == 0.0 {
            return 0.0;
        }
        let e = (-s).exp();
        x.signum() * (-(-s).exp_m1() + s * e)
    }
}

impl Objective for StarConvex1d {
    fn dim(&self) -> usize {
        1
    }

    fn value(&self, x: &[f64]) -> f64 {
        let s = x[0].abs();
        -s * (-s).exp_m1()
    }

    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        out[0] = Self::derivative(x[0]);
    }

    fn f_star(&self) -> f64 {
        0.0
    }

    fn x_star(&self) -> Option<&Vector> {
        Some(&self.x_star)
    }

    fn smoothness(&self) -> f64 {
        Self::SMOOTHNESS
    }

    fn quasi_convexity(&self) -> f64 {
        0.0
    }

    fn class(&self) -> ConvexityClass {
        ConvexityClass::WeaklyQuasiConvex
    }

    fn name(&self) -> &'static str {
        "star-convex-1d"
    }
}
