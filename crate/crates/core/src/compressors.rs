//! Biased compression operators with a declared contraction parameter `delta`:
//! `E||x - C(x)||^2 <= (1 - delta) ||x||^2`.

use serde::Serialize;

use crate::error::{invalid, Result};
use crate::numerics::{dist_sq, norm_sq, RngStream, RunningStats, Vector};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Compressor {
    Identity,
    /// Sends the whole vector with probability `1 / tau`, nothing otherwise.
    RandDrop {
        tau: f64,
    },
    /// Keeps each coordinate independently with probability `delta`.
    RandCoordinate {
        delta: f64,
    },
    /// Keeps the `k` largest-magnitude coordinates; ties go to the lower index.
    TopK {
        k: usize,
    },
}

impl Compressor {
    pub fn rand_drop(tau: f64) -> Result<Self> {
        if !(tau >= 1.0) || !tau.is_finite() {
            return Err(invalid(format!("rand-drop needs tau >= 1, got {tau}")));
        }
        Ok(Compressor::RandDrop { tau })
    }

    pub fn rand_coordinate(delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(invalid(format!(
                "rand-coordinate needs delta in (0, 1], got {delta}"
            )));
        }
        Ok(Compressor::RandCoordinate { delta })
    }

    pub fn top_k(k: usize) -> Result<Self> {
        if k < 1 {
            return Err(invalid("top-k needs k >= 1"));
        }
        Ok(Compressor::TopK { k })
    }

    pub fn validate_dim(&self, d: usize) -> Result<()> {
        match *self {
            Compressor::TopK { k } if k > d => {
                Err(invalid(format!("top-k with k = {k} exceeds dimension {d}")))
            }
            _ => Ok(()),
        }
    }

    /// Declared `delta` on `R^d`.
    pub fn delta(&self, d: usize) -> f64 {
        match *self {
            Compressor::Identity => 1.0,
            Compressor::RandDrop { tau } => 1.0 / tau,
            Compressor::RandCoordinate { delta } => delta,
            Compressor::TopK { k } => k.min(d) as f64 / d as f64,
        }
    }

    pub fn is_deterministic(&self) -> bool {
        matches!(self, Compressor::Identity | Compressor::TopK { .. })
    }

    pub fn compress_into(&self, x: &[f64], rng: &mut RngStream, out: &mut [f64]) -> Result<()> {
        self.validate_dim(x.len())?;
        match *self {
            Compressor::Identity => out.copy_from_slice(x),
            Compressor::RandDrop { tau } => {
                if rng.bernoulli(1.0 / tau) {
                    out.copy_from_slice(x);
                } else {
                    out.iter_mut().for_each(|v| *v = 0.0);
                }
            }
            Compressor::RandCoordinate { delta } => {
                for (o, v) in out.iter_mut().zip(x) {
                    *o = if rng.bernoulli(delta) { *v } else { 0.0 };
                }
            }
            Compressor::TopK { k } => {
                let mut order: Vec<usize> = (0..x.len()).collect();
                // stable sort keeps lower indices first among equal magnitudes
                order.sort_by(|&a, &b| x[b].abs().total_cmp(&x[a].abs()));
                out.iter_mut().for_each(|v| *v = 0.0);
                for &i in &order[..k] {
                    out[i] = x[i];
                }
            }
        }
        Ok(())
    }

    pub fn compress(&self, x: &[f64], rng: &mut RngStream) -> Result<Vector> {
        let mut out = Vector::zeros(x.len());
        self.compress_into(x, rng, &mut out)?;
        Ok(out)
    }

    /// `E||x - C(x)||^2` in closed form.
    pub fn expected_residual(&self, x: &[f64]) -> Result<f64> {
        let sq = norm_sq(x);
        Ok(match *self {
            Compressor::Identity => 0.0,
            // two outcomes: x with prob 1/tau (residual 0), 0 otherwise (residual ||x||^2)
            Compressor::RandDrop { tau } => (1.0 - 1.0 / tau) * sq,
            Compressor::RandCoordinate { delta } => (1.0 - delta) * sq,
            Compressor::TopK { .. } => {
                let c = self.compress(x, &mut RngStream::new(0, 0))?;
                dist_sq(x, &c)
            }
        })
    }
}

/// Probe vectors used to search for the worst-case residual ratio:
/// every basis vector, the all-ones vector, `gaussians` random Gaussian
/// vectors, and a spike on a random coordinate over a small uniform floor.
pub fn probe_vectors(d: usize, gaussians: usize, rng: &mut RngStream) -> Vec<Vector> {
    let mut probes = Vec::with_capacity(d + gaussians + 2);
    for i in 0..d {
        let mut e = Vector::zeros(d);
        e[i] = 1.0;
        probes.push(e);
    }
    probes.push(Vector::filled(d, 1.0));
    for _ in 0..gaussians {
        let mut g = Vector::zeros(d);
        g.iter_mut().for_each(|v| *v = rng.standard_normal());
        probes.push(g);
    }
    let mut spike = Vector::filled(d, 1e-3);
    spike[rng.below(d)] = 1.0;
    probes.push(spike);
    probes
}

#[derive(Clone, Debug, Serialize)]
pub struct ProbeResult {
    pub norm_sq: f64,
    /// Monte-Carlo mean of `||x - C(x)||^2 / ||x||^2`
    pub mean_ratio: f64,
    pub std_err: f64,
    pub exact_ratio: f64,
    pub violated: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ContractAudit {
    pub compressor: Compressor,
    pub dim: usize,
    pub declared_delta: f64,
    pub estimated_delta: f64,
    pub trials: usize,
    pub probes: Vec<ProbeResult>,
}

impl ContractAudit {
    pub fn passed(&self) -> bool {
        self.probes.iter().all(|p| !p.violated)
    }
}

pub const MIN_COMPRESSOR_TRIALS: usize = 1_000;

const PROBE_GAUSSIANS: usize = 4;

/// Runs the contract check on every probe vector. A probe is flagged when
/// its mean residual ratio exceeds `1 - delta` by more than three standard
/// errors.
pub fn audit_contract(
    c: &Compressor,
    d: usize,
    trials: usize,
    rng: &mut RngStream,
) -> Result<ContractAudit> {
    if trials < MIN_COMPRESSOR_TRIALS {
        return Err(invalid(format!(
            "compressor audit needs at least {MIN_COMPRESSOR_TRIALS} trials, got {trials}"
        )));
    }
    if d == 0 {
        return Err(invalid("dimension must be >= 1"));
    }
    c.validate_dim(d)?;
    let declared = c.delta(d);
    let probes = probe_vectors(d, PROBE_GAUSSIANS, rng);
    let mut out = Vector::zeros(d);
    let mut results = Vec::with_capacity(probes.len());
    for x in &probes {
        let sq = x.norm_sq();
        let draws = if c.is_deterministic() { 1 } else { trials };
        let mut stats = RunningStats::new();
        for _ in 0..draws {
            c.compress_into(x, rng, &mut out)?;
            stats.push(dist_sq(x, &out) / sq);
        }
        let se = if draws > 1 { stats.std_err() } else { 0.0 };
        let bound = 1.0 - declared;
        results.push(ProbeResult {
            norm_sq: sq,
            mean_ratio: stats.mean(),
            std_err: se,
            exact_ratio: c.expected_residual(x)? / sq,
            violated: stats.mean() > bound + 3.0 * se + 1e-12,
        });
    }
    let worst = results.iter().map(|p| p.mean_ratio).fold(0.0, f64::max);
    Ok(ContractAudit {
        compressor: *c,
        dim: d,
        declared_delta: declared,
        estimated_delta: 1.0 - worst,
        trials,
        probes: results,
    })
}

/// `1 - max_probe E||x - C(x)||^2 / ||x||^2`, each expectation estimated
/// with `trials` draws.
pub fn estimate_delta(c: &Compressor, d: usize, trials: usize, rng: &mut RngStream) -> Result<f64> {
    Ok(audit_contract(c, d, trials, rng)?.estimated_delta)
}
