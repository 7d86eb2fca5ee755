//! Dense vectors, reproducible random streams, and streaming statistics.

use std::ops::{Deref, DerefMut};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Result};

/// A dense real vector of fixed dimension.
///
/// Construction through [`Vector::new`] rejects non-finite entries. Arithmetic
/// helpers do not re-check; the engine's divergence guard catches overflow.
#[derive(Clone, Debug, PartialEq)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(invalid("vector dimension must be at least 1"));
        }
        if let Some(i) = entries.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("entry {i} is not finite")));
        }
        Ok(Self(entries))
    }

    pub fn zeros(d: usize) -> Self {
        assert!(d >= 1, "vector dimension must be at least 1");
        Self(vec![0.0; d])
    }

    pub fn filled(d: usize, value: f64) -> Self {
        assert!(d >= 1, "vector dimension must be at least 1");
        Self(vec![value; d])
    }

    /// Builds a vector from a slice, skipping the finiteness check.
    pub(crate) fn from_slice_unchecked(entries: &[f64]) -> Self {
        Self(entries.to_vec())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        dot(&self.0, other)
    }

    pub fn norm_sq(&self) -> f64 {
        norm_sq(&self.0)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// `self += alpha * x`
    pub fn axpy(&mut self, alpha: f64, x: &[f64]) {
        axpy(&mut self.0, alpha, x);
    }

    pub fn scale(&mut self, alpha: f64) {
        self.0.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn sub(&self, other: &[f64]) -> Vector {
        debug_assert_eq!(self.dim(), other.len());
        Self(self.0.iter().zip(other).map(|(a, b)| a - b).collect())
    }

    pub fn dist_sq(&self, other: &[f64]) -> f64 {
        dist_sq(&self.0, other)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn set_zero(&mut self) {
        self.0.iter_mut().for_each(|v| *v = 0.0);
    }
}

impl Deref for Vector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Vector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    debug_assert_eq!(y.len(), x.len());
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += alpha * xi);
}

/// What a random stream is used for. Each purpose gets a disjoint stream id
/// so draws for one purpose never shift draws for another.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StreamPurpose {
    Oracle = 1,
    Compressor = 2,
    Delay = 3,
    Data = 4,
    Probe = 5,
}

/// A reproducible random stream keyed by `(seed, stream id)`.
///
/// Backed by ChaCha8 with the stream id mapped onto the cipher's stream
/// counter, so every `(seed, stream)` pair yields the same sequence on every
/// platform and independently of which other streams were drawn from.
#[derive(Clone, Debug)]
pub struct RngStream {
    rng: ChaCha8Rng,
    seed: u64,
    stream: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng, seed, stream }
    }

    /// Stream for `(seed, worker, purpose)`.
    pub fn for_purpose(seed: u64, worker: u32, purpose: StreamPurpose) -> Self {
        Self::new(seed, ((purpose as u64) << 32) | worker as u64)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform index in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }
}

/// Fills `out` with i.i.d. zero-mean Gaussian coordinates of variance
/// `sigma^2 / d`, so that `E||xi||^2 = sigma^2`.
pub fn fill_gaussian(rng: &mut RngStream, sigma: f64, out: &mut [f64]) {
    let coord_std = sigma / (out.len() as f64).sqrt();
    for v in out.iter_mut() {
        *v = coord_std * rng.standard_normal();
    }
}

/// Draws a Gaussian vector in dimension `d` with `E||xi||^2 = sigma^2`.
pub fn gaussian_vector(rng: &mut RngStream, d: usize, sigma: f64) -> Result<Vector> {
    if d == 0 {
        return Err(invalid("dimension must be at least 1"));
    }
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(invalid(format!(
            "sigma must be finite and >= 0, got {sigma}"
        )));
    }
    let mut out = Vector::zeros(d);
    if sigma > 0.0 {
        fill_gaussian(rng, sigma, &mut out);
    }
    Ok(out)
}

/// Streaming mean and variance (Welford).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunningStats {
    count: u64,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    /// Combines two accumulators (Chan et al. pairwise update).
    pub fn merge(&mut self, other: &RunningStats) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = other.clone();
            return;
        }
        let n = (self.count + other.count) as f64;
        let delta = other.mean - self.mean;
        self.mean += delta * other.count as f64 / n;
        self.m2 += other.m2 + delta * delta * (self.count as f64) * (other.count as f64) / n;
        self.count += other.count;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance; zero with fewer than two samples.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    pub fn std_dev(&self) -> f64 {
        self.variance().sqrt()
    }

    /// Standard error of the mean.
    pub fn std_err(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.std_dev() / (self.count as f64).sqrt()
        }
    }
}

impl FromIterator<f64> for RunningStats {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = Self::new();
        iter.into_iter().for_each(|x| s.push(x));
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_sigma_gives_zero_vector() {
        let mut rng = RngStream::new(1, 0);
        let v = gaussian_vector(&mut rng, 3, 0.0).unwrap();
        assert_eq!(v.as_slice(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn negative_sigma_is_rejected() {
        let mut rng = RngStream::new(1, 0);
        assert!(gaussian_vector(&mut rng, 3, -1.0).is_err());
        assert!(gaussian_vector(&mut rng, 0, 1.0).is_err());
    }

    #[test]
    fn gaussian_second_moment_matches_declared_sigma() {
        let mut rng = RngStream::new(1, 0);
        let stats: RunningStats = (0..100_000)
            .map(|_| gaussian_vector(&mut rng, 4, 2.0).unwrap().norm_sq())
            .collect();
        assert!(
            (3.96..=4.04).contains(&stats.mean()),
            "mean {}",
            stats.mean()
        );
    }

    #[test]
    fn same_stream_is_bit_identical() {
        let a = gaussian_vector(&mut RngStream::new(7, 3), 5, 1.5).unwrap();
        let b = gaussian_vector(&mut RngStream::new(7, 3), 5, 1.5).unwrap();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        let c = gaussian_vector(&mut RngStream::new(7, 4), 5, 1.5).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn purposes_map_to_distinct_streams() {
        let a = RngStream::for_purpose(3, 0, StreamPurpose::Oracle);
        let b = RngStream::for_purpose(3, 0, StreamPurpose::Compressor);
        let c = RngStream::for_purpose(3, 1, StreamPurpose::Oracle);
        assert_ne!(a.stream(), b.stream());
        assert_ne!(a.stream(), c.stream());
    }

    #[test]
    fn vector_rejects_non_finite() {
        assert!(Vector::new(vec![1.0, f64::NAN]).is_err());
        assert!(Vector::new(vec![f64::INFINITY]).is_err());
        assert!(Vector::new(vec![]).is_err());
        assert!(Vector::new(vec![1.0, -2.0]).is_ok());
    }

    #[test]
    fn running_stats_on_uniform_grid_matches_closed_form() {
        // midpoint grid on [0, 1): exact mean 1/2, variance -> 1/12
        let n = 10_000;
        let stats: RunningStats = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        assert!((stats.mean() - 0.5).abs() / 0.5 < 1e-3);
        assert!((stats.variance() - 1.0 / 12.0).abs() * 12.0 < 1e-3);
    }

    #[test]
    fn running_stats_on_random_uniform_draws() {
        let mut rng = RngStream::new(11, 0);
        let xs: Vec<f64> = (0..10_000).map(|_| rng.uniform()).collect();
        let stats: RunningStats = xs.iter().copied().collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        assert!(((stats.mean() - mean) / mean).abs() < 1e-10);
        assert!(((stats.variance() - var) / var).abs() < 1e-10);
        // sampling error at n = 1e4 is ~0.6% on the mean
        assert!((stats.mean() - 0.5).abs() < 4.0 * stats.std_err());
    }

    proptest! {
        #[test]
        fn running_stats_matches_two_pass(xs in prop::collection::vec(-1e3f64..1e3, 2..200)) {
            let s: RunningStats = xs.iter().copied().collect();
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            prop_assert!((s.mean() - mean).abs() <= 1e-10 * (1.0 + mean.abs()));
            prop_assert!((s.variance() - var).abs() <= 1e-10 * (1.0 + var));
        }

        #[test]
        fn merge_equals_sequential(xs in prop::collection::vec(-10f64..10.0, 1..50),
                                   ys in prop::collection::vec(-10f64..10.0, 1..50)) {
            let mut a: RunningStats = xs.iter().copied().collect();
            let b: RunningStats = ys.iter().copied().collect();
            let all: RunningStats = xs.iter().chain(ys.iter()).copied().collect();
            a.merge(&b);
            prop_assert_eq!(a.count(), all.count());
            prop_assert!((a.mean() - all.mean()).abs() < 1e-10);
            prop_assert!((a.variance() - all.variance()).abs() < 1e-9);
        }
    }
}
