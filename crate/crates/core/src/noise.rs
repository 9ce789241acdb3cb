//! Gradient perturbations for the noisy iteration.
//!
//! Every draw is keyed by `(master_seed, agent, iteration)`: the agent's stream is a ChaCha8
//! generator seeded from a mix of the master seed and agent index, and the iteration selects the
//! generator's 64-bit stream. Draws therefore never depend on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::scalar::Scalar;

/// Default fraction of the variance budget actually used.
pub const DEFAULT_SAFETY_FACTOR: f64 = 0.5;

const MAX_REDRAWS: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NoiseError {
    #[error("{name} must be positive and finite, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("safety factor must lie in (0, 1], got {0}")]
    SafetyFactor(f64),
    #[error("per-coordinate variance {variance:e} exceeds the budget {budget:e} (safety factor {safety} x lambda_min(W) eps^2 / (m n))")]
    BudgetExceeded {
        variance: f64,
        budget: f64,
        safety: f64,
    },
    #[error("sphere sample degenerated after {0} redraws")]
    Degenerate(usize),
}

fn positive<T: Scalar>(name: &'static str, value: T) -> Result<T, NoiseError> {
    if value.is_finite() && value > T::zero() {
        Ok(value)
    } else {
        Err(NoiseError::NonPositive {
            name,
            value: value.as_f64(),
        })
    }
}

/// Per-coordinate variance budget `σ²_max(ε) = λ_min(W) ε² / (m n)`.
pub fn sigma_max_sq<T: Scalar>(epsilon: T, m: usize, n: usize, lambda_min_w: T) -> Result<T, NoiseError> {
    let epsilon = positive("epsilon", epsilon)?;
    let lambda_min_w = positive("lambda_min(W)", lambda_min_w)?;
    if m == 0 || n == 0 {
        return Err(NoiseError::NonPositive {
            name: if m == 0 { "agent count" } else { "dimension" },
            value: 0.0,
        });
    }
    Ok(lambda_min_w * epsilon * epsilon / T::from_usize_lossy(m * n))
}

/// Sphere radius at the scaled budget: `r = sqrt(safety · n · σ²_max(ε))`, so `r²/n = safety · σ²_max`.
pub fn sphere_radius_for<T: Scalar>(
    epsilon: T,
    m: usize,
    n: usize,
    lambda_min_w: T,
    safety_factor: T,
) -> Result<T, NoiseError> {
    check_safety(safety_factor)?;
    let budget = sigma_max_sq(epsilon, m, n, lambda_min_w)?;
    Ok((safety_factor * T::from_usize_lossy(n) * budget).sqrt())
}

fn check_safety<T: Scalar>(s: T) -> Result<(), NoiseError> {
    if s > T::zero() && s <= T::one() {
        Ok(())
    } else {
        Err(NoiseError::SafetyFactor(s.as_f64()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseKind<T> {
    None,
    /// Uniform on the sphere of the given radius in ℝⁿ.
    Sphere { radius: T },
    /// Independent coordinates with the given standard deviation.
    Gaussian { std: T },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec<T> {
    pub kind: NoiseKind<T>,
    /// The `ε` the variance budget derives from, when the spec is tied to one.
    pub epsilon: Option<T>,
    pub safety_factor: T,
}

impl<T: Scalar> Default for NoiseSpec<T> {
    fn default() -> Self {
        Self::none()
    }
}

impl<T: Scalar> NoiseSpec<T> {
    pub fn none() -> Self {
        Self {
            kind: NoiseKind::None,
            epsilon: None,
            safety_factor: T::lit(DEFAULT_SAFETY_FACTOR),
        }
    }

    pub fn sphere(radius: T) -> Self {
        Self {
            kind: NoiseKind::Sphere { radius },
            ..Self::none()
        }
    }

    pub fn gaussian(std: T) -> Self {
        Self {
            kind: NoiseKind::Gaussian { std },
            ..Self::none()
        }
    }

    /// Sphere noise sized to `safety_factor · σ²_max(ε)`.
    pub fn sphere_at_budget(
        epsilon: T,
        safety_factor: T,
        m: usize,
        n: usize,
        lambda_min_w: T,
    ) -> Result<Self, NoiseError> {
        let radius = sphere_radius_for(epsilon, m, n, lambda_min_w, safety_factor)?;
        Ok(Self {
            kind: NoiseKind::Sphere { radius },
            epsilon: Some(epsilon),
            safety_factor,
        })
    }

    /// Gaussian noise with `σ² = safety_factor · σ²_max(ε)`.
    pub fn gaussian_at_budget(
        epsilon: T,
        safety_factor: T,
        m: usize,
        n: usize,
        lambda_min_w: T,
    ) -> Result<Self, NoiseError> {
        check_safety(safety_factor)?;
        let var = safety_factor * sigma_max_sq(epsilon, m, n, lambda_min_w)?;
        Ok(Self {
            kind: NoiseKind::Gaussian { std: var.sqrt() },
            epsilon: Some(epsilon),
            safety_factor,
        })
    }

    pub fn is_none(&self) -> bool {
        matches!(self.kind, NoiseKind::None)
    }

    /// Realized per-coordinate variance: `r²/n` for the sphere, `σ²` for Gaussian.
    pub fn per_coordinate_variance(&self, n: usize) -> T {
        match self.kind {
            NoiseKind::None => T::zero(),
            NoiseKind::Sphere { radius } => radius * radius / T::from_usize_lossy(n),
            NoiseKind::Gaussian { std } => std * std,
        }
    }

    /// Checks parameter positivity and, when `ε` is set, the scaled variance budget.
    pub fn validate(&self, m: usize, n: usize, lambda_min_w: T) -> Result<(), NoiseError> {
        check_safety(self.safety_factor)?;
        match self.kind {
            NoiseKind::None => {}
            NoiseKind::Sphere { radius } => {
                positive("sphere radius", radius)?;
            }
            NoiseKind::Gaussian { std } => {
                positive("gaussian std", std)?;
            }
        }
        if let Some(eps) = self.epsilon {
            let budget = self.safety_factor * sigma_max_sq(eps, m, n, lambda_min_w)?;
            let variance = self.per_coordinate_variance(n);
            // a few ulps of slack so that a radius computed at the budget passes
            if variance > budget * (T::one() + T::epsilon() * T::lit(16.0)) {
                return Err(NoiseError::BudgetExceeded {
                    variance: variance.as_f64(),
                    budget: budget.as_f64(),
                    safety: self.safety_factor.as_f64(),
                });
            }
        }
        Ok(())
    }
}

/// Reproducible per-agent random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RandomStream {
    master_seed: u64,
    agent: usize,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RandomStream {
    pub fn new(master_seed: u64, agent: usize) -> Self {
        Self { master_seed, agent }
    }

    pub fn agent(&self) -> usize {
        self.agent
    }

    /// Generator for one `(agent, iteration)` pair.
    pub fn rng_at(&self, iteration: u64) -> ChaCha8Rng {
        let key = splitmix64(splitmix64(self.master_seed) ^ (self.agent as u64).wrapping_mul(0xd6e8_feb8_6659_fd93));
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        rng.set_stream(iteration);
        rng
    }

    /// Fills `out` with the perturbation for `iteration`.
    pub fn sample_into<T: Scalar>(
        &self,
        spec: &NoiseSpec<T>,
        iteration: u64,
        out: &mut [T],
    ) -> Result<(), NoiseError> {
        match spec.kind {
            NoiseKind::None => {
                out.iter_mut().for_each(|v| *v = T::zero());
                Ok(())
            }
            NoiseKind::Gaussian { std } => {
                let mut rng = self.rng_at(iteration);
                for v in out.iter_mut() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *v = std * T::lit(z);
                }
                Ok(())
            }
            NoiseKind::Sphere { radius } => {
                let mut rng = self.rng_at(iteration);
                let mut g = vec![0.0f64; out.len()];
                for _ in 0..MAX_REDRAWS {
                    g.iter_mut().for_each(|v| *v = StandardNormal.sample(&mut rng));
                    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if norm > f64::MIN_POSITIVE && norm.is_finite() {
                        let r = radius.as_f64();
                        for (o, &v) in out.iter_mut().zip(&g) {
                            *o = T::lit(r * (v / norm));
                        }
                        return Ok(());
                    }
                }
                Err(NoiseError::Degenerate(MAX_REDRAWS))
            }
        }
    }

    pub fn sample<T: Scalar>(
        &self,
        spec: &NoiseSpec<T>,
        iteration: u64,
        n: usize,
    ) -> Result<Vec<T>, NoiseError> {
        let mut out = vec![T::zero(); n];
        self.sample_into(spec, iteration, &mut out)?;
        Ok(out)
    }
}

/// One stream per agent under a shared master seed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NoiseStreams {
    streams: Vec<RandomStream>,
}

impl NoiseStreams {
    pub fn new(master_seed: u64, agents: usize) -> Self {
        Self {
            streams: (0..agents).map(|i| RandomStream::new(master_seed, i)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.streams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.streams.is_empty()
    }

    pub fn stream(&self, agent: usize) -> &RandomStream {
        &self.streams[agent]
    }
}
