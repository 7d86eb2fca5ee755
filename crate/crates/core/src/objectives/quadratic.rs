use crate::error::{invalid, Result};
use crate::numerics::{dot, Vector};

use super::{ConvexityClass, Objective};

/// `f(x) = 1/2 (x - x*)^T A (x - x*)` with `A = H D H`, where `D` holds the
/// eigenvalues (log-spaced in `[mu, L]`) and `H` is a fixed Householder
/// reflection so `A` is dense but applies in `O(d)`.
#[derive(Clone, Debug)]
pub struct Quadratic {
    eigenvalues: Vec<f64>,
    reflector: Vec<f64>,
    x_star: Vector,
    mu: f64,
    l: f64,
}

pub fn make_quadratic(d: usize, mu: f64, l: f64, x_star: Vector) -> Result<Quadratic> {
    if d == 0 || x_star.dim() != d {
        return Err(invalid(format!(
            "x_star has dimension {}, expected {d} >= 1",
            x_star.dim()
        )));
    }
    if !(mu > 0.0) || !mu.is_finite() || !l.is_finite() {
        return Err(invalid(format!("need 0 < mu <= L, got mu = {mu}, L = {l}")));
    }
    if mu > l {
        return Err(invalid(format!("mu = {mu} exceeds L = {l}")));
    }
    let eigenvalues = if d == 1 {
        vec![l]
    } else {
        let ratio = l / mu;
        (0..d)
            .map(|i| {
                if i == 0 {
                    mu
                } else if i == d - 1 {
                    l
                } else {
                    mu * ratio.powf(i as f64 / (d - 1) as f64)
                }
            })
            .collect()
    };
    let raw: Vec<f64> = (1..=d).map(|i| i as f64).collect();
    let n = dot(&raw, &raw).sqrt();
    let reflector = raw.iter().map(|v| v / n).collect();
    Ok(Quadratic {
        eigenvalues,
        reflector,
        x_star,
        mu,
        l,
    })
}

impl Quadratic {
    fn reflect(&self, y: &mut [f64]) {
        let s = 2.0 * dot(&self.reflector, y);
        y.iter_mut()
            .zip(&self.reflector)
            .for_each(|(yi, vi)| *yi -= s * vi);
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Applies `A` to `y` in place.
    pub fn apply(&self, y: &mut [f64]) {
        self.reflect(y);
        y.iter_mut()
            .zip(&self.eigenvalues)
            .for_each(|(yi, li)| *yi *= li);
        self.reflect(y);
    }

    /// Dense `A`, row-major.
    pub fn matrix(&self) -> Vec<Vec<f64>> {
        let d = self.eigenvalues.len();
        (0..d)
            .map(|i| {
                let mut e = vec![0.0; d];
                e[i] = 1.0;
                self.apply(&mut e);
                e
            })
            .collect()
    }
}

impl Objective for Quadratic {
    fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let mut y: Vec<f64> = x
            .iter()
            .zip(self.x_star.iter())
            .map(|(a, b)| a - b)
            .collect();
        self.reflect(&mut y);
        0.5 * y
            .iter()
            .zip(&self.eigenvalues)
            .map(|(yi, li)| li * yi * yi)
            .sum::<f64>()
    }

    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut()
            .zip(x.iter().zip(self.x_star.iter()))
            .for_each(|(o, (a, b))| *o = a - b);
        self.apply(out);
    }

    fn f_star(&self) -> f64 {
        0.0
    }

    fn x_star(&self) -> Option<&Vector> {
        Some(&self.x_star)
    }

    fn smoothness(&self) -> f64 {
        self.l
    }

    fn quasi_convexity(&self) -> f64 {
        self.mu
    }

    fn class(&self) -> ConvexityClass {
        ConvexityClass::StronglyQuasiConvex
    }

    fn name(&self) -> &'static str {
        "quadratic"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;
    use crate::objectives::certify;
    use crate::objectives::testing::{finite_difference_gradient, relative_error};

    fn matvec(a: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
        a.iter().map(|row| dot(row, v)).collect()
    }

    // plain power iteration on the dense matrix; smallest eigenvalue via
    // the shifted matrix L*I - A
    fn power_iteration(a: &[Vec<f64>], iters: usize) -> f64 {
        let d = a.len();
        let mut v: Vec<f64> = (0..d).map(|i| 1.0 + 0.1 * i as f64).collect();
        let mut lambda = 0.0;
        for _ in 0..iters {
            let w = matvec(a, &v);
            let n = dot(&w, &w).sqrt();
            lambda = dot(&v, &w) / dot(&v, &v);
            v = w.iter().map(|x| x / n).collect();
        }
        lambda
    }

    #[test]
    fn scalar_case() {
        let q = make_quadratic(1, 1.0, 1.0, Vector::zeros(1)).unwrap();
        assert_eq!(q.value(&[2.0]), 2.0);
        assert_eq!(q.gradient(&[2.0]).as_slice(), &[2.0]);
    }

    #[test]
    fn optimum_has_zero_value_and_gradient() {
        let xs = Vector::new((0..5).map(|i| i as f64 - 2.0).collect()).unwrap();
        let q = make_quadratic(5, 0.2, 3.0, xs.clone()).unwrap();
        assert_eq!(q.value(&xs), q.f_star());
        assert!(q.gradient(&xs).norm() == 0.0);
    }

    #[test]
    fn mu_above_l_is_rejected() {
        assert!(make_quadratic(3, 2.0, 1.0, Vector::zeros(3)).is_err());
        assert!(make_quadratic(3, 0.0, 1.0, Vector::zeros(3)).is_err());
        assert!(make_quadratic(3, 0.1, 1.0, Vector::zeros(2)).is_err());
    }

    #[test]
    fn power_iteration_recovers_spectrum_ends() {
        let q = make_quadratic(20, 0.1, 1.0, Vector::zeros(20)).unwrap();
        let a = q.matrix();
        // the matrix is symmetric and not diagonal
        assert!(a[0][1].abs() > 1e-6);
        assert!((a[0][1] - a[1][0]).abs() < 1e-14);
        let top = power_iteration(&a, 5_000);
        let shifted: Vec<Vec<f64>> = a
            .iter()
            .enumerate()
            .map(|(i, row)| {
                row.iter()
                    .enumerate()
                    .map(|(j, v)| if i == j { 1.0 - v } else { -v })
                    .collect()
            })
            .collect();
        let bottom = 1.0 - power_iteration(&shifted, 5_000);
        assert!((top - 1.0).abs() < 0.01, "top {top}");
        assert!((bottom - 0.1).abs() < 0.001, "bottom {bottom}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let q = make_quadratic(8, 0.1, 2.0, Vector::filled(8, 0.5)).unwrap();
        let mut rng = RngStream::new(5, 0);
        for _ in 0..100 {
            let x = crate::objectives::sample_ball(&mut rng, &[0.0; 8], 10.0);
            let fd = finite_difference_gradient(&q, &x, 1e-5);
            assert!(relative_error(&fd, &q.gradient(&x)) < 1e-5);
        }
    }

    #[test]
    fn declared_constants_hold() {
        let q = make_quadratic(20, 0.1, 1.0, Vector::filled(20, 1.0)).unwrap();
        let report = certify(&q, 1_000, 10.0, &mut RngStream::new(9, 0));
        assert!(report.passed(), "{report:?}");
    }
}
