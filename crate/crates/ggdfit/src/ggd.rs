//! The shifted (three-parameter) gamma density used to model pixel
//! intensities: translation γ, scale β > 0, shape ρ > 0.
//!
//! f(x) = (x−γ)^{ρ−1} exp(−(x−γ)/β) / (β^ρ Γ(ρ)) for x > γ, else 0.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Gamma as GammaDist};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;
use crate::special::{ln_gamma, reg_inc_gamma};

/// Errors from constructing the domain types of this module.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum GgdError {
    #[error("invalid parameters: {0}")]
    InvalidParams(&'static str),
    #[error("sample must contain at least one value")]
    EmptySample,
    #[error("sample values must all be finite")]
    NonFiniteValue,
}

/// Names one coordinate of the parameter triple.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum ParamName {
    Gamma,
    Beta,
    Rho,
}

impl ParamName {
    pub const ALL: [ParamName; 3] = [ParamName::Gamma, ParamName::Beta, ParamName::Rho];

    pub fn label(&self) -> &'static str {
        match self {
            ParamName::Gamma => "gamma",
            ParamName::Beta => "beta",
            ParamName::Rho => "rho",
        }
    }
}

impl std::fmt::Display for ParamName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Parameter triple θ = (γ, β, ρ): translation, scale, shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GgdParams<T> {
    /// Translation (location), same units as the data.
    pub gamma: T,
    /// Scale, > 0.
    pub beta: T,
    /// Shape, > 0.
    pub rho: T,
}

impl<T: Real> GgdParams<T> {
    /// Validates γ finite, β > 0, ρ > 0.
    pub fn new(gamma: T, beta: T, rho: T) -> Result<Self, GgdError> {
        if !gamma.is_finite() {
            return Err(GgdError::InvalidParams("gamma must be finite"));
        }
        if !(beta > T::zero()) || !beta.is_finite() {
            return Err(GgdError::InvalidParams("beta must be positive and finite"));
        }
        if !(rho > T::zero()) || !rho.is_finite() {
            return Err(GgdError::InvalidParams("rho must be positive and finite"));
        }
        Ok(Self { gamma, beta, rho })
    }

    /// Density at `x`. Total: 0 on x ≤ γ.
    pub fn pdf(&self, x: T) -> T {
        if x <= self.gamma {
            return T::zero();
        }
        self.log_pdf(x).exp()
    }

    /// ln f(x); −∞ for x ≤ γ. Evaluated fully in log space so large ρ
    /// never overflows.
    pub fn log_pdf(&self, x: T) -> T {
        if x <= self.gamma {
            return T::neg_infinity();
        }
        let z = x - self.gamma;
        (self.rho - T::one()) * z.ln() - z / self.beta
            - self.rho * self.beta.ln()
            - ln_gamma(self.rho).expect("rho > 0 by invariant")
    }

    /// Distribution function P(ρ, (x−γ)/β); 0 for x ≤ γ.
    pub fn cdf(&self, x: T) -> T {
        if x <= self.gamma {
            return T::zero();
        }
        if x.is_infinite() {
            return T::one();
        }
        let z = (x - self.gamma) / self.beta;
        reg_inc_gamma(self.rho, z).expect("valid params by invariant")
    }

    /// Mean γ + βρ.
    pub fn mean(&self) -> T {
        self.gamma + self.beta * self.rho
    }

    /// Variance β²ρ.
    pub fn variance(&self) -> T {
        self.beta * self.beta * self.rho
    }

    /// Skewness 2/√ρ.
    pub fn skewness(&self) -> T {
        T::of(2.0) / self.rho.sqrt()
    }

    /// Reads one coordinate by name.
    pub fn get(&self, which: ParamName) -> T {
        match which {
            ParamName::Gamma => self.gamma,
            ParamName::Beta => self.beta,
            ParamName::Rho => self.rho,
        }
    }

    /// Replaces one coordinate by name.
    pub fn with(&self, which: ParamName, value: T) -> Self {
        let mut p = *self;
        match which {
            ParamName::Gamma => p.gamma = value,
            ParamName::Beta => p.beta = value,
            ParamName::Rho => p.rho = value,
        }
        p
    }

    /// Draws `n` independent values, deterministic in `seed`.
    ///
    /// Standard gamma variates come from a rejection sampler valid for all
    /// ρ > 0 (shape-boost below 1), then are scaled by β and shifted by γ.
    /// Draws are produced in f64 and narrowed, so f32 and f64 streams agree.
    pub fn sample(&self, n: usize, seed: u64) -> Sample<T> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        self.sample_with(&mut rng, n)
    }

    /// As [`GgdParams::sample`] with caller-owned generator state.
    pub fn sample_with(&self, rng: &mut ChaCha12Rng, n: usize) -> Sample<T> {
        assert!(n >= 1, "sample size must be at least 1");
        let dist = GammaDist::new(self.rho.as_f64(), 1.0).expect("rho > 0 by invariant");
        let gamma = self.gamma.as_f64();
        let beta = self.beta.as_f64();
        let values = (0..n)
            .map(|_| T::of(gamma + beta * dist.sample(rng)))
            .collect();
        Sample { values }
    }
}

/// A set of positive-real intensity observations from one image.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    values: Vec<T>,
}

impl<T: Real> Sample<T> {
    /// Validates n ≥ 1 and all values finite.
    pub fn new(values: Vec<T>) -> Result<Self, GgdError> {
        if values.is_empty() {
            return Err(GgdError::EmptySample);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(GgdError::NonFiniteValue);
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    /// Smallest observation; the support constraint is γ < min.
    pub fn min_value(&self) -> T {
        self.values.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn max_value(&self) -> T {
        self.values.iter().copied().fold(T::neg_infinity(), T::max)
    }

    pub fn mean(&self) -> T {
        self.values.iter().copied().sum::<T>() / T::of_usize(self.n())
    }

    /// Unbiased variance (n−1 denominator); 0 for n = 1.
    pub fn variance(&self) -> T {
        if self.n() < 2 {
            return T::zero();
        }
        let m = self.mean();
        let ss = self
            .values
            .iter()
            .map(|&v| (v - m) * (v - m))
            .sum::<T>();
        ss / T::of_usize(self.n() - 1)
    }

    /// Moment-coefficient skewness g1 = m3 / m2^{3/2} with biased central
    /// moments; 0 when the sample is constant.
    pub fn skewness(&self) -> T {
        let m = self.mean();
        let n = T::of_usize(self.n());
        let m2 = self.values.iter().map(|&v| (v - m) * (v - m)).sum::<T>() / n;
        if m2 == T::zero() {
            return T::zero();
        }
        let m3 = self
            .values
            .iter()
            .map(|&v| (v - m) * (v - m) * (v - m))
            .sum::<T>()
            / n;
        m3 / m2.powf(T::of(1.5))
    }

    /// Maps every value through `f`, e.g. for affine-equivariance checks.
    pub fn map(&self, f: impl Fn(T) -> T) -> Result<Self, GgdError> {
        Self::new(self.values.iter().map(|&v| f(v)).collect())
    }
}
