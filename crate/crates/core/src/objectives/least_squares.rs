use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{invalid, Error, Result};
use crate::numerics::{dot, RngStream, Vector};

use super::{ConvexityClass, FiniteSum, Objective};

const DEGENERATE_EIGENVALUE: f64 = 1e-10;

/// `f(x) = (1/n) sum_i 1/2 (b_i - <x, a_i>)^2` with Gaussian rows `a_i`.
#[derive(Clone, Debug)]
pub struct LeastSquares {
    n: usize,
    d: usize,
    /// row-major `n x d`
    rows: Vec<f64>,
    targets: Vec<f64>,
    x_true: Vector,
    x_star: Vector,
    f_star: f64,
    lambda_max: f64,
    lambda_min: f64,
    component_smoothness: f64,
}

/// Draws a least-squares problem. `x_true` and the rows are standard Gaussian;
/// `b_i = <x_true, a_i> + noise_level * N(0, 1)`.
pub fn make_least_squares(
    n: usize,
    d: usize,
    rng: &mut RngStream,
    noise_level: f64,
) -> Result<LeastSquares> {
    if d == 0 || n < d {
        return Err(invalid(format!("need n >= d >= 1, got n = {n}, d = {d}")));
    }
    if !(noise_level >= 0.0) || !noise_level.is_finite() {
        return Err(invalid(format!(
            "noise_level must be >= 0, got {noise_level}"
        )));
    }
    let x_true: Vec<f64> = (0..d).map(|_| rng.standard_normal()).collect();
    let rows: Vec<f64> = (0..n * d).map(|_| rng.standard_normal()).collect();
    let targets: Vec<f64> = rows
        .chunks_exact(d)
        .map(|a| dot(a, &x_true) + noise_level * rng.standard_normal())
        .collect();
    LeastSquares::from_data(rows, targets, d, Vector::new(x_true)?)
}

impl LeastSquares {
    pub fn from_data(rows: Vec<f64>, targets: Vec<f64>, d: usize, x_true: Vector) -> Result<Self> {
        let n = targets.len();
        if rows.len() != n * d {
            return Err(invalid("row buffer does not match n x d"));
        }
        let a = DMatrix::from_row_slice(n, d, &rows);
        let hessian = (a.transpose() * &a) / n as f64;
        let eig = SymmetricEigen::new(hessian.clone());
        let lambda_max = eig.eigenvalues.max();
        let lambda_min = eig.eigenvalues.min();
        if lambda_min <= DEGENERATE_EIGENVALUE {
            return Err(Error::DegenerateDesign { lambda_min });
        }
        let rhs = a.transpose() * DVector::from_column_slice(&targets) / n as f64;
        let chol = hessian
            .cholesky()
            .ok_or(Error::DegenerateDesign { lambda_min })?;
        let x_star = Vector::new(chol.solve(&rhs).as_slice().to_vec())?;
        let component_smoothness = rows.chunks_exact(d).map(|a| dot(a, a)).fold(0.0, f64::max);
        let mut ls = LeastSquares {
            n,
            d,
            rows,
            targets,
            x_true,
            x_star,
            f_star: 0.0,
            lambda_max,
            lambda_min,
            component_smoothness,
        };
        ls.f_star = ls.value(&ls.x_star.clone());
        Ok(ls)
    }

    pub fn x_true(&self) -> &Vector {
        &self.x_true
    }

    pub fn lambda_min(&self) -> f64 {
        self.lambda_min
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.d..(i + 1) * self.d]
    }

    fn residual(&self, i: usize, x: &[f64]) -> f64 {
        self.targets[i] - dot(self.row(i), x)
    }

    /// `(1/n) sum_i ||grad f_i(x*)||^2`
    pub fn gradient_second_moment_at_optimum(&self) -> f64 {
        let mut g = vec![0.0; self.d];
        (0..self.n)
            .map(|i| {
                self.component_gradient_into(i, &self.x_star, &mut g);
                dot(&g, &g)
            })
            .sum::<f64>()
            / self.n as f64
    }
}

impl Objective for LeastSquares {
    fn dim(&self) -> usize {
        self.d
    }

    fn value(&self, x: &[f64]) -> f64 {
        (0..self.n)
            .map(|i| 0.5 * self.residual(i, x).powi(2))
            .sum::<f64>()
            / self.n as f64
    }

    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..self.n {
            let r = self.residual(i, x);
            out.iter_mut()
                .zip(self.row(i))
                .for_each(|(o, a)| *o -= r * a);
        }
        let inv = 1.0 / self.n as f64;
        out.iter_mut().for_each(|o| *o *= inv);
    }

    fn f_star(&self) -> f64 {
        self.f_star
    }

    fn x_star(&self) -> Option<&Vector> {
        Some(&self.x_star)
    }

    /// Largest eigenvalue of the empirical covariance `(1/n) sum a_i a_i^T`.
    fn smoothness(&self) -> f64 {
        self.lambda_max
    }

    fn quasi_convexity(&self) -> f64 {
        self.lambda_min
    }

    fn class(&self) -> ConvexityClass {
        ConvexityClass::StronglyQuasiConvex
    }

    fn name(&self) -> &'static str {
        "least-squares"
    }
}

impl FiniteSum for LeastSquares {
    fn components(&self) -> usize {
        self.n
    }

    fn component_value(&self, i: usize, x: &[f64]) -> f64 {
        0.5 * self.residual(i, x).powi(2)
    }

    fn component_gradient_into(&self, i: usize, x: &[f64], out: &mut [f64]) {
        let r = self.residual(i, x);
        out.iter_mut()
            .zip(self.row(i))
            .for_each(|(o, a)| *o = -r * a);
    }

    /// `max_i ||a_i||^2`, the smoothness constant shared by every component.
    fn component_smoothness(&self) -> f64 {
        self.component_smoothness
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::dist_sq;
    use crate::objectives::testing::{finite_difference_gradient, relative_error};
    use crate::objectives::{certify, sample_ball};

    #[test]
    fn interpolation_setting_recovers_truth() {
        let ls = make_least_squares(50, 5, &mut RngStream::new(1, 0), 0.0).unwrap();
        assert!(ls.f_star().abs() < 1e-20);
        assert!(dist_sq(ls.x_star().unwrap(), ls.x_true()).sqrt() < 1e-8);
        assert!(ls.gradient_second_moment_at_optimum() < 1e-20);
    }

    #[test]
    fn full_gradient_is_mean_of_components() {
        let ls = make_least_squares(40, 4, &mut RngStream::new(2, 0), 0.5).unwrap();
        let mut rng = RngStream::new(3, 0);
        for _ in 0..20 {
            let x = sample_ball(&mut rng, &[0.0; 4], 3.0);
            let full = ls.gradient(&x);
            let mut acc = vec![0.0; 4];
            let mut g = vec![0.0; 4];
            for i in 0..ls.components() {
                ls.component_gradient_into(i, &x, &mut g);
                acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b / 40.0);
            }
            assert!(relative_error(&acc, &full) < 1e-12);
            let mean_val = (0..40).map(|i| ls.component_value(i, &x)).sum::<f64>() / 40.0;
            assert!((mean_val - ls.value(&x)).abs() < 1e-12 * (1.0 + mean_val));
        }
    }

    #[test]
    fn gradient_vanishes_at_optimum() {
        let ls = make_least_squares(30, 3, &mut RngStream::new(4, 0), 1.0).unwrap();
        assert!(ls.gradient(ls.x_star().unwrap()).norm() < 1e-12);
        assert!(ls.f_star() > 0.0);
    }

    #[test]
    fn degenerate_design_is_reported() {
        // duplicated rows span a 1-d subspace in R^2
        let rows = vec![1.0, 2.0, 1.0, 2.0, 2.0, 4.0];
        let err = LeastSquares::from_data(rows, vec![1.0, 1.0, 2.0], 2, Vector::zeros(2));
        assert!(matches!(err, Err(Error::DegenerateDesign { .. })));
        assert!(make_least_squares(2, 3, &mut RngStream::new(1, 0), 0.0).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let ls = make_least_squares(25, 3, &mut RngStream::new(6, 0), 0.3).unwrap();
        let mut rng = RngStream::new(7, 0);
        for _ in 0..100 {
            let x = sample_ball(&mut rng, &[0.0; 3], 10.0);
            let fd = finite_difference_gradient(&ls, &x, 1e-5);
            assert!(relative_error(&fd, &ls.gradient(&x)) < 1e-5);
        }
    }

    #[test]
    fn finite_sum_noise_bound_by_enumeration() {
        // E_i ||grad f_i(x) - grad f(x)||^2 <= 12 L (f(x) - f*) + 3 E_i ||grad f_i(x*)||^2
        let ls = make_least_squares(60, 4, &mut RngStream::new(10, 0), 0.7).unwrap();
        let l = ls.component_smoothness();
        let at_opt = ls.gradient_second_moment_at_optimum();
        let mut rng = RngStream::new(11, 0);
        let mut g = vec![0.0; 4];
        for _ in 0..100 {
            let x = sample_ball(&mut rng, ls.x_star().unwrap(), 10.0);
            let full = ls.gradient(&x);
            let spread = (0..60)
                .map(|i| {
                    ls.component_gradient_into(i, &x, &mut g);
                    dist_sq(&g, &full)
                })
                .sum::<f64>()
                / 60.0;
            let bound = 12.0 * l * (ls.value(&x) - ls.f_star()) + 3.0 * at_opt;
            assert!(spread <= bound, "{spread} > {bound}");
        }
    }

    #[test]
    fn declared_constants_hold() {
        let ls = make_least_squares(80, 6, &mut RngStream::new(13, 0), 0.5).unwrap();
        let report = certify(&ls, 1_000, 10.0, &mut RngStream::new(14, 0));
        assert!(report.passed(), "{report:?}");
    }
}
