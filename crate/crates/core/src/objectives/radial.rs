use crate::error::{invalid, Result};
use crate::numerics::{dot, norm_sq, Vector};

use super::{ConvexityClass, Objective};

/// Radial extension of a positive function on the unit sphere:
///
/// `f(x) = h(r) g(x / r) + (mu / 2) r^2` with `r = ||x||`,
/// `h(r) = r (1 - exp(-r))` and `g(u) = 2 + sin(3 u_1) cos(2 u_2)`,
/// extended by `f(0) = 0`.
///
/// Along every ray `<grad f(x), x> - f(x) - (mu/2) r^2 = g(u) r^2 exp(-r) >= 0`,
/// so `f` is `mu`-quasi-convex around the origin while the angular factor makes
/// it non-convex.
///
/// Smoothness bound: differentiating `grad f = h' g u + (h / r) P grad g + mu x`
/// (with `P = I - u u^T`) along a unit direction and using `|h''| <= 2`,
/// `h' / r <= 2`, `h / r^2 <= 1` and `(h' r - h) / r^2 = exp(-r) <= 1` gives
/// `||Hess f|| <= 4 g_max + 5 G1 + G2 + mu`, where on the unit sphere
/// `g_max = 3`, `G1 = sup ||grad g|| <= sqrt(13)` and
/// `G2 = sup ||Hess g||_F <= 13`. The certified constant is that sum.
#[derive(Clone, Debug)]
pub struct NonconvexRadial {
    d: usize,
    mu: f64,
    x_star: Vector,
}

pub fn make_nonconvex_radial(d: usize, mu: f64) -> Result<NonconvexRadial> {
    if d < 2 {
        return Err(invalid(format!("radial objective needs d >= 2, got {d}")));
    }
    if !(mu >= 0.0) || !mu.is_finite() {
        return Err(invalid(format!("mu must be >= 0, got {mu}")));
    }
    Ok(NonconvexRadial {
        d,
        mu,
        x_star: Vector::zeros(d),
    })
}

const G_MAX: f64 = 3.0;
const G_HESSIAN_BOUND: f64 = 13.0;

fn angular(u: &[f64]) -> f64 {
    2.0 + (3.0 * u[0]).sin() * (2.0 * u[1]).cos()
}

fn angular_gradient(u: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    out[0] = 3.0 * (3.0 * u[0]).cos() * (2.0 * u[1]).cos();
    out[1] = -2.0 * (3.0 * u[0]).sin() * (2.0 * u[1]).sin();
}

impl NonconvexRadial {
    pub fn certified_smoothness(mu: f64) -> f64 {
        4.0 * G_MAX + 5.0 * 13f64.sqrt() + G_HESSIAN_BOUND + mu
    }
}

impl Objective for NonconvexRadial {
    fn dim(&self) -> usize {
        self.d
    }

    fn value(&self, x: &[f64]) -> f64 {
        let r2 = norm_sq(x);
        if r2 == 0.0 {
            return 0.0;
        }
        let r = r2.sqrt();
        let u: Vec<f64> = x.iter().map(|v| v / r).collect();
        -r * (-r).exp_m1() * angular(&u) + 0.5 * self.mu * r2
    }

    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        let r2 = norm_sq(x);
        if r2 == 0.0 {
            out.iter_mut().for_each(|v| *v = 0.0);
            return;
        }
        let r = r2.sqrt();
        let e = (-r).exp();
        let one_minus_e = -(-r).exp_m1();
        let h_prime = one_minus_e + r * e;
        let h_over_r = one_minus_e;
        let u: Vec<f64> = x.iter().map(|v| v / r).collect();
        let g = angular(&u);
        angular_gradient(&u, out);
        let radial_part = dot(out, &u);
        for i in 0..self.d {
            let tangential = out[i] - radial_part * u[i];
            out[i] = h_prime * g * u[i] + h_over_r * tangential + self.mu * x[i];
        }
    }

    fn f_star(&self) -> f64 {
        0.0
    }

    fn x_star(&self) -> Option<&Vector> {
        Some(&self.x_star)
    }

    fn smoothness(&self) -> f64 {
        Self::certified_smoothness(self.mu)
    }

    fn quasi_convexity(&self) -> f64 {
        self.mu
    }

    fn class(&self) -> ConvexityClass {
        if self.mu > 0.0 {
            ConvexityClass::StronglyQuasiConvex
        } else {
            ConvexityClass::WeaklyQuasiConvex
        }
    }

    fn name(&self) -> &'static str {
        "nonconvex-radial"
    }
}
