//! Reference solutions for the scalar linear Gaussian model
//! `s' = a s + b + σ w`, `s_0 ~ U[β_0, γ_0]`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::AxisBox;
use crate::kernels::std_normal_mass;
use crate::truncation::kappa;

/// Trajectories simulated per random stream.
pub const MC_CHUNK: u64 = 1 << 14;

/// Minimum number of trajectories accepted by [`mc_invariance`].
pub const MC_MIN_TRIALS: u64 = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyticLinGauss {
    pub a: f64,
    pub b: f64,
    pub sigma: f64,
    pub beta0: f64,
    pub gamma0: f64,
}

impl AnalyticLinGauss {
    pub fn new(a: f64, b: f64, sigma: f64, beta0: f64, gamma0: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite()) {
            return Err(Error::invalid("a and b must be finite"));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::invalid("sigma must be positive"));
        }
        if !(beta0 < gamma0 && beta0.is_finite() && gamma0.is_finite()) {
            return Err(Error::invalid("initial interval needs beta0 < gamma0"));
        }
        Ok(AnalyticLinGauss {
            a,
            b,
            sigma,
            beta0,
            gamma0,
        })
    }

    /// `c_t = b κ(t, a)`.
    pub fn drift(&self, t: usize) -> f64 {
        self.b * kappa(t, self.a)
    }

    /// `σ_t = σ sqrt(κ(t, a²))`.
    pub fn std_dev(&self, t: usize) -> f64 {
        self.sigma * kappa(t, self.a * self.a).sqrt()
    }

    /// Exact `π_t(x)`; requires `a > 0`.
    pub fn density(&self, t: usize, x: f64) -> Result<f64> {
        if self.a <= 0.0 {
            return Err(Error::Unsupported("analytic density needs a > 0".into()));
        }
        let width = self.gamma0 - self.beta0;
        if t == 0 {
            return Ok(if (self.beta0..=self.gamma0).contains(&x) {
                1.0 / width
            } else {
                0.0
            });
        }
        let at = self.a.powi(t as i32);
        let c = self.drift(t);
        let s = self.std_dev(t);
        let lo = (x - c - at * self.gamma0) / s;
        let hi = (x - c - at * self.beta0) / s;
        Ok(std_normal_mass(lo, hi) / (at * width))
    }

    /// `π_t` on every point of `xs`.
    pub fn density_on(&self, t: usize, xs: &[f64]) -> Result<Vec<f64>> {
        xs.iter().map(|&x| self.density(t, x)).collect()
    }

    /// Interval holding all but `~1e-15` of the mass of `π_t`.
    pub fn effective_support(&self, t: usize) -> (f64, f64) {
        let at = self.a.powi(t as i32);
        let c = self.drift(t);
        let (p, q) = (c + at * self.beta0, c + at * self.gamma0);
        let s = if t == 0 { 0.0 } else { 8.5 * self.std_dev(t) };
        (p.min(q) - s, p.max(q) + s)
    }
}

/// Monte Carlo estimate of `P{s_0, ..., s_N ∈ A}` with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub trials: u64,
    pub hits: u64,
}

/// Simulates `trials` trajectories of the linear Gaussian model.
///
/// Trajectories are grouped in chunks of [`MC_CHUNK`]; chunk `k` draws from
/// `ChaCha8Rng::seed_from_u64(seed)` on stream `k`, so the result does not
/// depend on the thread count.
pub fn mc_invariance(
    params: &AnalyticLinGauss,
    safe_set: &AxisBox,
    horizon: usize,
    trials: u64,
    seed: u64,
) -> Result<McEstimate> {
    if safe_set.dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: safe_set.dim(),
        });
    }
    if trials < MC_MIN_TRIALS {
        return Err(Error::invalid(format!("at least {MC_MIN_TRIALS} trials are required")));
    }
    let (lo, hi) = (safe_set.lower()[0], safe_set.upper()[0]);
    let chunks = trials.div_ceil(MC_CHUNK);
    let p = *params;
    let hits: u64 = (0..chunks)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k);
            let n = MC_CHUNK.min(trials - k * MC_CHUNK);
            let mut count = 0u64;
            for _ in 0..n {
                let mut x = rng.random_range(p.beta0..p.gamma0);
                let mut inside = x >= lo && x <= hi;
                for _ in 0..horizon {
                    let w: f64 = rng.sample(StandardNormal);
                    x = p.a * x + p.b + p.sigma * w;
                    if !(x >= lo && x <= hi) {
                        inside = false;
                        break;
                    }
                }
                count += inside as u64;
            }
            count
        })
        .sum();
    let estimate = hits as f64 / trials as f64;
    Ok(McEstimate {
        estimate,
        stderr: (estimate * (1.0 - estimate) / trials as f64).sqrt(),
        trials,
        hits,
    })
}
