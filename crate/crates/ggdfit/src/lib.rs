//! Fitting shifted (three-parameter) gamma distributions to pixel-intensity
//! samples, benchmarking the estimators, and running the downstream
//! goodness-of-fit / significance-screening / classification pipeline.
//!
//! The numerical kernels are generic over the [`scalar::Real`] scalar
//! (f32 or f64); the orchestration layers are concrete in f64. All
//! randomness flows through explicitly seeded ChaCha12 generators, so
//! every stochastic operation is reproducible from its seed.

// negated comparisons like `!(beta > 0)` are deliberate: they reject NaN
// along with the out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// frozen reference tables keep all 17 digits
#![allow(clippy::excessive_precision)]

pub mod benchmark;
pub mod classify;
pub mod cohort;
pub mod estimation;
pub mod gof;
pub mod hypothesis;
pub mod ggd;
pub(crate) mod linalg;
pub mod pipeline;
pub mod scalar;
pub mod special;

pub use estimation::{FitConfig, FitResult, Method};
pub use ggd::{GgdParams, Sample};
pub use scalar::Real;

/// Double-precision instantiations used throughout the pipeline.
pub type GgdParamsF64 = GgdParams<f64>;
pub type SampleF64 = Sample<f64>;
pub type FitResultF64 = FitResult<f64>;
pub type FitConfigF64 = FitConfig<f64>;

/// Single-precision instantiations, for callers that trade accuracy for
/// memory.
pub type GgdParamsF32 = GgdParams<f32>;
pub type SampleF32 = Sample<f32>;
