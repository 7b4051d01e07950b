//! State-free noise samplers and the random-stream type shared by every run.

use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Random stream owned by a single trajectory.
pub type SaRng = rand_chacha::ChaCha8Rng;

/// Seeded stream; equal seeds give equal streams on every platform.
pub fn rng_from_seed(seed: u64) -> SaRng {
    use rand::SeedableRng;
    SaRng::seed_from_u64(seed)
}

/// Mean-zero additive noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseSampler {
    #[default]
    Zero,
    Gaussian {
        sigma: f64,
    },
    StudentT {
        df: f64,
    },
}

pub fn make_noise_gaussian(sigma: f64) -> Result<NoiseSampler> {
    NoiseSampler::Gaussian { sigma }.validated()
}

pub fn make_noise_student_t(df: f64) -> Result<NoiseSampler> {
    NoiseSampler::StudentT { df }.validated()
}

impl NoiseSampler {
    pub fn validated(self) -> Result<Self> {
        match self {
            NoiseSampler::Zero => {}
            NoiseSampler::Gaussian { sigma } => {
                if !(sigma > 0.0 && sigma.is_finite()) {
                    return Err(Error::param("sigma", format!("must be positive, got {sigma}")));
                }
            }
            NoiseSampler::StudentT { df } => {
                if !(df > 0.0 && df.is_finite()) {
                    return Err(Error::param("df", format!("must be positive, got {df}")));
                }
            }
        }
        Ok(self)
    }

    /// One draw. Student-t is `N / sqrt(χ²_df / df)` with both parts from `rng`.
    pub fn sample(&self, rng: &mut SaRng) -> f64 {
        match *self {
            NoiseSampler::Zero => 0.0,
            NoiseSampler::Gaussian { sigma } => {
                let n: f64 = StandardNormal.sample(rng);
                sigma * n
            }
            NoiseSampler::StudentT { df } => {
                let n: f64 = StandardNormal.sample(rng);
                let chi2 = ChiSquared::new(df).expect("validated df").sample(rng);
                n / (chi2 / df).sqrt()
            }
        }
    }

    /// Theoretical variance (infinite for Student-t with df ≤ 2).
    pub fn variance(&self) -> f64 {
        match *self {
            NoiseSampler::Zero => 0.0,
            NoiseSampler::Gaussian { sigma } => sigma * sigma,
            NoiseSampler::StudentT { df } if df > 2.0 => df / (df - 2.0),
            NoiseSampler::StudentT { .. } => f64::INFINITY,
        }
    }
}

/// `log X` for `X ~ Gamma(shape, 1)`.
///
/// Small shapes use `X = Y·U^{1/shape}` with `Y ~ Gamma(shape + 1, 1)` and take
/// the logarithm analytically, so draws that would underflow `f64` stay finite.
pub fn sample_log_gamma(shape: f64, rng: &mut SaRng) -> f64 {
    if shape >= 1.0 {
        Gamma::new(shape, 1.0).expect("positive shape").sample(rng).ln()
    } else {
        let y = Gamma::new(shape + 1.0, 1.0).expect("positive shape").sample(rng);
        // (0, 1]
        let u = 1.0 - rng.random::<f64>();
        y.ln() + u.ln() / shape
    }
}
