//! Maximum-likelihood estimation of the shifted gamma parameters by three
//! interchangeable methods sharing one moment-based initialization:
//!
//! * natural gradient — score preconditioned by the inverse Fisher matrix,
//!   step normalized to length λ;
//! * Newton descent — score preconditioned by the inverse observed Hessian,
//!   step scaled by λ, with a gradient fallback when the Hessian misbehaves;
//! * analytical — β and ρ eliminated through their stationarity closed
//!   forms, leaving a safeguarded 1-D root solve in γ.

use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ggd::{GgdParams, Sample};
use crate::linalg::{norm3, solve3, Mat3, Vec3};
use crate::scalar::Real;
use crate::special::{digamma, ln_gamma, trigamma};

/// Estimator selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    NaturalGradient,
    Newton,
    Analytical,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::NaturalGradient, Method::Newton, Method::Analytical];

    /// Stable label used in CSV output.
    pub fn label(&self) -> &'static str {
        match self {
            Method::NaturalGradient => "natural_gradient",
            Method::Newton => "newton",
            Method::Analytical => "analytical",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Error raised by the estimation operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum FitError {
    /// min(sample) ≤ γ: the support condition of the density is violated.
    #[error("invalid support: sample minimum must exceed gamma")]
    InvalidSupport,
    /// Fisher matrix requested with ρ ≤ 2, where its (γ,γ) entry is undefined.
    #[error("shape out of range: fisher matrix requires rho > 2")]
    ShapeOutOfRange,
    /// Moment initialization could not produce a start point.
    #[error("initialization failure: {0}")]
    InitFailure(&'static str),
    /// A linear solve or root bracket failed irrecoverably.
    #[error("numeric failure: {0}")]
    NumericFailure(&'static str),
    /// Fits need at least three observations.
    #[error("too few observations: fits require n >= 3")]
    TooFewObservations,
}

/// Solver settings. λ is the step size of the gradient updates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig<T> {
    /// Step size λ.
    pub step_size: T,
    pub max_iters: usize,
    /// Stop when |ΔL| ≤ rel_tol · (1 + |L|) between accepted iterates.
    pub rel_tol: T,
    /// Margin keeping γ ≤ min(x) − eps_support. `None` resolves to
    /// 1e-6 · (max − min) of the sample being fitted.
    pub eps_support: Option<T>,
    /// Margin keeping ρ ≥ 2 + eps_shape during preconditioned iteration.
    pub eps_shape: T,
}

impl<T: Real> Default for FitConfig<T> {
    fn default() -> Self {
        Self {
            step_size: T::of(0.1),
            max_iters: 1000,
            rel_tol: T::of(1e-8),
            eps_support: None,
            eps_shape: T::of(1e-3),
        }
    }
}

impl<T: Real> FitConfig<T> {
    fn resolved_eps_support(&self, sample: &Sample<T>) -> T {
        match self.eps_support {
            Some(e) => e,
            None => {
                let range = sample.max_value() - sample.min_value();
                if range > T::zero() {
                    T::of(1e-6) * range
                } else {
                    T::of(1e-12)
                }
            }
        }
    }
}

/// One accepted iterate of a fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint<T> {
    pub iteration: usize,
    pub params: GgdParams<T>,
    pub log_likelihood: T,
}

/// Outcome of a fit: the estimate, its log-likelihood, and the path taken.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult<T> {
    pub params: GgdParams<T>,
    pub log_likelihood: T,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<TracePoint<T>>,
    pub method: Method,
    /// Wall-clock seconds spent in the fit call, initialization included.
    pub elapsed_s: f64,
}

/// Sums over the sample at a fixed γ shared by the score, the Hessian and
/// the profile equations: Σ(x−γ), Σ(x−γ)⁻¹, Σ(x−γ)⁻², Σ ln(x−γ).
struct ProfileSums<T> {
    s1: T,
    s2: T,
    s3: T,
    sln: T,
}

fn profile_sums<T: Real>(sample: &Sample<T>, gamma: T) -> Result<ProfileSums<T>, FitError> {
    let mut s1 = T::zero();
    let mut s2 = T::zero();
    let mut s3 = T::zero();
    let mut sln = T::zero();
    for &x in sample.values() {
        let z = x - gamma;
        if !(z > T::zero()) {
            return Err(FitError::InvalidSupport);
        }
        let inv = z.recip();
        s1 = s1 + z;
        s2 = s2 + inv;
        s3 = s3 + inv * inv;
        sln = sln + z.ln();
    }
    Ok(ProfileSums { s1, s2, s3, sln })
}

fn ll_from_parts<T: Real>(n: T, s1: T, sln: T, params: &GgdParams<T>) -> T {
    (params.rho - T::one()) * sln - s1 / params.beta
        - n * params.rho * params.beta.ln()
        - n * ln_gamma(params.rho).expect("rho > 0 by invariant")
}

/// Log-likelihood of the sample under `params`:
/// −Nρ ln β − N ln Γ(ρ) + (ρ−1) Σ ln(xₙ−γ) − Σ (xₙ−γ)/β.
pub fn log_likelihood<T: Real>(sample: &Sample<T>, params: &GgdParams<T>) -> Result<T, FitError> {
    let mut s1 = T::zero();
    let mut sln = T::zero();
    for &x in sample.values() {
        let z = x - params.gamma;
        if !(z > T::zero()) {
            return Err(FitError::InvalidSupport);
        }
        s1 = s1 + z;
        sln = sln + z.ln();
    }
    Ok(ll_from_parts(T::of_usize(sample.n()), s1, sln, params))
}

/// Score vector (∂L/∂γ, ∂L/∂β, ∂L/∂ρ).
pub fn score<T: Real>(sample: &Sample<T>, params: &GgdParams<T>) -> Result<Vec3<T>, FitError> {
    let sums = profile_sums(sample, params.gamma)?;
    Ok(score_from_sums(T::of_usize(sample.n()), &sums, params))
}

fn score_from_sums<T: Real>(n: T, sums: &ProfileSums<T>, params: &GgdParams<T>) -> Vec3<T> {
    let b = params.beta;
    let r = params.rho;
    [
        -(r - T::one()) * sums.s2 + n / b,
        -n * r / b + sums.s1 / (b * b),
        -n * digamma(r).expect("rho > 0 by invariant") - n * b.ln() + sums.sln,
    ]
}

/// Fisher information matrix for `n` observations. Requires ρ > 2: the
/// (γ,γ) entry is 1/(β²(ρ−2)).
pub fn fisher_matrix<T: Real>(n: usize, params: &GgdParams<T>) -> Result<Mat3<T>, FitError> {
    let b = params.beta;
    let r = params.rho;
    if !(r > T::of(2.0)) {
        return Err(FitError::ShapeOutOfRange);
    }
    let nf = T::of_usize(n);
    let b2 = b * b;
    let one = T::one();
    let f01 = nf / b2;
    let f02 = nf / (b * (r - one));
    let f12 = nf / b;
    Ok([
        [nf / (b2 * (r - T::of(2.0))), f01, f02],
        [f01, nf * r / b2, f12],
        [f02, f12, nf * trigamma(r).expect("rho > 2 here")],
    ])
}

/// Observed Hessian of the log-likelihood (symmetric by construction).
pub fn hessian<T: Real>(sample: &Sample<T>, params: &GgdParams<T>) -> Result<Mat3<T>, FitError> {
    let sums = profile_sums(sample, params.gamma)?;
    Ok(hessian_from_sums(T::of_usize(sample.n()), &sums, params))
}

fn hessian_from_sums<T: Real>(n: T, sums: &ProfileSums<T>, params: &GgdParams<T>) -> Mat3<T> {
    let b = params.beta;
    let r = params.rho;
    let b2 = b * b;
    let h_gg = -(r - T::one()) * sums.s3;
    let h_gb = -n / b2;
    let h_gr = -sums.s2;
    let h_bb = n * r / b2 - T::of(2.0) * sums.s1 / (b2 * b);
    let h_br = -n / b;
    let h_rr = -n * trigamma(r).expect("rho > 0 by invariant");
    [[h_gg, h_gb, h_gr], [h_gb, h_bb, h_br], [h_gr, h_br, h_rr]]
}

/// Inverts exact population moments (mean m, variance s², skewness g > 0)
/// of a shifted gamma to its parameters: ρ = 4/g², β = s·g/2, γ = m − 2s/g.
pub fn init_from_moments<T: Real>(m: T, s2: T, g: T) -> Result<GgdParams<T>, FitError> {
    if !(s2 > T::zero()) {
        return Err(FitError::InitFailure("sample variance is zero"));
    }
    if !(g > T::zero()) {
        return Err(FitError::InitFailure("nonpositive sample skewness"));
    }
    let s = s2.sqrt();
    let two = T::of(2.0);
    let rho = T::of(4.0) / (g * g);
    let beta = s * g / two;
    let gamma = m - two * s / g;
    GgdParams::new(gamma, beta, rho).map_err(|_| FitError::InitFailure("degenerate moments"))
}

fn project<T: Real>(gamma: T, beta: T, rho: T, min_x: T, eps_sup: T, eps_shape: T) -> GgdParams<T> {
    GgdParams {
        gamma: gamma.min(min_x - eps_sup),
        beta: beta.max(T::of(1e-12)),
        rho: rho.max(T::of(2.0) + eps_shape),
    }
}

/// Pseudo method of moments start point, clamped into the feasible region
/// (γ ≤ min − eps_support, ρ ≥ 2 + eps_shape) with the default margins.
pub fn moment_init<T: Real>(sample: &Sample<T>) -> Result<GgdParams<T>, FitError> {
    let cfg = FitConfig::<T>::default();
    moment_init_with(sample, cfg.resolved_eps_support(sample), cfg.eps_shape)
}

fn moment_init_with<T: Real>(
    sample: &Sample<T>,
    eps_sup: T,
    eps_shape: T,
) -> Result<GgdParams<T>, FitError> {
    if sample.n() < 3 {
        return Err(FitError::TooFewObservations);
    }
    let p = init_from_moments(sample.mean(), sample.variance(), sample.skewness())?;
    Ok(project(p.gamma, p.beta, p.rho, sample.min_value(), eps_sup, eps_shape))
}

/// Below this sample skewness the inversion ρ̂ = 4/g² explodes (γ̂ runs to
/// −∞ like −2s/g); such samples start from the flat-skewness fallback.
const MIN_INIT_SKEWNESS: f64 = 0.1;

/// Moment start with the flat-skewness fallback, so every sample with
/// positive variance gets a feasible, bounded initial point.
fn init_with_fallback<T: Real>(
    sample: &Sample<T>,
    eps_sup: T,
    eps_shape: T,
) -> Result<GgdParams<T>, FitError> {
    if sample.n() < 3 {
        return Err(FitError::TooFewObservations);
    }
    if sample.skewness() >= T::of(MIN_INIT_SKEWNESS) {
        return moment_init_with(sample, eps_sup, eps_shape);
    }
    let s2 = sample.variance();
    if !(s2 > T::zero()) {
        return Err(FitError::InitFailure("constant sample"));
    }
    let s = s2.sqrt();
    let m = sample.mean();
    let gamma = sample.min_value() - s;
    let rho = ((m - gamma) * (m - gamma) / s2).max(T::of(2.0) + eps_shape);
    let beta = s2 / (m - gamma);
    Ok(project(gamma, beta, rho, sample.min_value(), eps_sup, eps_shape))
}

enum Preconditioner {
    Fisher,
    Hessian,
}

/// Shared ascent loop for the two preconditioned gradient methods.
///
/// On a step that would decrease the log-likelihood the step size is halved
/// up to 30 times within the iteration. The next iteration starts from
/// twice the last accepted size, capped at the configured λ, so the
/// endgame does not re-run the whole cascade every iteration. Every
/// iterate is projected back into the feasible region.
fn iterate<T: Real>(
    sample: &Sample<T>,
    start: GgdParams<T>,
    config: &FitConfig<T>,
    kind: Preconditioner,
    method: Method,
) -> Result<FitResult<T>, FitError> {
    let t0 = Instant::now();
    let n = sample.n();
    let nf = T::of_usize(n);
    let min_x = sample.min_value();
    let eps_sup = config.resolved_eps_support(sample);
    let eps_shape = config.eps_shape;

    let mut theta = project(start.gamma, start.beta, start.rho, min_x, eps_sup, eps_shape);
    let mut ll = log_likelihood(sample, &theta)?;
    let mut trace = vec![TracePoint { iteration: 0, params: theta, log_likelihood: ll }];
    let mut converged = false;
    let mut iterations = 0usize;
    let mut lam = config.step_size;

    while iterations < config.max_iters {
        let sums = profile_sums(sample, theta.gamma)?;
        let grad = score_from_sums(nf, &sums, &theta);

        // Direction of movement; always an ascent direction for the Fisher
        // branch since the Fisher matrix is positive definite for ρ > 2.
        let mut dir: Vec3<T> = match kind {
            Preconditioner::Fisher => {
                let f = fisher_matrix(n, &theta)?;
                let d = solve3(&f, &grad)
                    .ok_or(FitError::NumericFailure("singular fisher matrix"))?;
                let norm = norm3(&d);
                if !(norm > T::zero()) || !norm.is_finite() {
                    converged = true;
                    break;
                }
                [d[0] / norm, d[1] / norm, d[2] / norm]
            }
            Preconditioner::Hessian => {
                let h = hessian_from_sums(nf, &sums, &theta);
                let newton = solve3(&h, &grad).map(|d| [-d[0], -d[1], -d[2]]);
                let ascent = newton.filter(|d| {
                    let dot = d[0] * grad[0] + d[1] * grad[1] + d[2] * grad[2];
                    dot > T::zero() && d.iter().all(|v| v.is_finite())
                });
                match ascent {
                    Some(d) => d,
                    None => {
                        // Indefinite or singular Hessian: fall back to a
                        // normalized gradient step.
                        let g_norm = norm3(&grad);
                        if !(g_norm > T::zero()) || !g_norm.is_finite() {
                            converged = true;
                            break;
                        }
                        [grad[0] / g_norm, grad[1] / g_norm, grad[2] / g_norm]
                    }
                }
            }
        };

        // At an active bound, drop the component pushing into it so the
        // step length goes to the free coordinates instead of being eaten
        // by the projection.
        if theta.gamma >= min_x - eps_sup && dir[0] > T::zero() {
            dir[0] = T::zero();
        }
        if theta.rho <= T::of(2.0) + eps_shape && dir[2] < T::zero() {
            dir[2] = T::zero();
        }
        if theta.beta <= T::of(1e-12) && dir[1] < T::zero() {
            dir[1] = T::zero();
        }
        let free_norm = norm3(&dir);
        if !(free_norm > T::zero()) {
            // every ascent component is blocked: constrained stationary
            converged = true;
            break;
        }
        if matches!(kind, Preconditioner::Fisher) {
            dir = [dir[0] / free_norm, dir[1] / free_norm, dir[2] / free_norm];
        }

        lam = (lam * T::of(2.0)).min(config.step_size);
        let mut accepted = None;
        for _ in 0..=30 {
            let cand = project(
                theta.gamma + lam * dir[0],
                theta.beta + lam * dir[1],
                theta.rho + lam * dir[2],
                min_x,
                eps_sup,
                eps_shape,
            );
            if let Ok(ll_new) = log_likelihood(sample, &cand) {
                if ll_new.is_finite() && ll_new >= ll {
                    accepted = Some((cand, ll_new));
                    break;
                }
            }
            lam = lam * T::of(0.5);
        }

        let (next, ll_new) = match accepted {
            Some(a) => a,
            None => {
                // No step of any length improves the likelihood.
                converged = true;
                break;
            }
        };

        iterations += 1;
        trace.push(TracePoint { iteration: iterations, params: next, log_likelihood: ll_new });
        let delta = (ll_new - ll).abs();
        theta = next;
        ll = ll_new;
        if delta <= config.rel_tol * (T::one() + ll.abs()) {
            converged = true;
            break;
        }
    }

    Ok(FitResult {
        params: theta,
        log_likelihood: ll,
        iterations,
        converged,
        trace,
        method,
        elapsed_s: t0.elapsed().as_secs_f64(),
    })
}

/// Natural-gradient (Fisher-scoring) fit from the moment initialization:
/// θ ← θ + (λ/‖F⁻¹∇L‖) · F⁻¹∇L.
pub fn fit_natural_gradient<T: Real>(
    sample: &Sample<T>,
    config: &FitConfig<T>,
) -> Result<FitResult<T>, FitError> {
    let start = init_with_fallback(
        sample,
        config.resolved_eps_support(sample),
        config.eps_shape,
    )?;
    fit_natural_gradient_from(sample, start, config)
}

/// Natural-gradient fit from an explicit start point.
pub fn fit_natural_gradient_from<T: Real>(
    sample: &Sample<T>,
    start: GgdParams<T>,
    config: &FitConfig<T>,
) -> Result<FitResult<T>, FitError> {
    if sample.n() < 3 {
        return Err(FitError::TooFewObservations);
    }
    iterate(sample, start, config, Preconditioner::Fisher, Method::NaturalGradient)
}

/// Hessian-preconditioned Newton fit from the moment initialization:
/// θ ← θ + λ · (−H⁻¹) ∇L, with step halving and a gradient fallback.
pub fn fit_newton<T: Real>(
    sample: &Sample<T>,
    config: &FitConfig<T>,
) -> Result<FitResult<T>, FitError> {
    let start = init_with_fallback(
        sample,
        config.resolved_eps_support(sample),
        config.eps_shape,
    )?;
    fit_newton_from(sample, start, config)
}

/// Newton fit from an explicit start point.
pub fn fit_newton_from<T: Real>(
    sample: &Sample<T>,
    start: GgdParams<T>,
    config: &FitConfig<T>,
) -> Result<FitResult<T>, FitError> {
    if sample.n() < 3 {
        return Err(FitError::TooFewObservations);
    }
    iterate(sample, start, config, Preconditioner::Hessian, Method::Newton)
}

/// Closed-form β and ρ at a fixed γ, from the stationarity of the
/// log-likelihood in γ and β, plus the profile equation value
/// h(γ) = −NΨ(ρ) − N ln β + Σ ln(x−γ) and its derivative h'(γ).
struct ProfilePoint<T> {
    beta: T,
    rho: T,
    h: T,
    h_prime: T,
    s1: T,
    sln: T,
}

fn profile_point<T: Real>(sample: &Sample<T>, gamma: T) -> Result<ProfilePoint<T>, FitError> {
    let sums = profile_sums(sample, gamma)?;
    let n = T::of_usize(sample.n());
    let p = sums.s1 * sums.s2;
    let d = p - n * n;
    // Chebyshev's sum inequality gives p ≥ n², equality only for a
    // constant sample.
    if !(d > T::zero()) {
        return Err(FitError::NumericFailure("degenerate profile denominator"));
    }
    let beta = d / (n * sums.s2);
    let rho = p / d;
    let h = -n * digamma(rho).expect("rho > 1 here") - n * beta.ln() + sums.sln;
    let p_prime = -n * sums.s2 + sums.s1 * sums.s3;
    let rho_prime = -n * n * p_prime / (d * d);
    let beta_prime = (p_prime * sums.s2 - d * sums.s3) / (n * sums.s2 * sums.s2);
    let h_prime =
        -n * trigamma(rho).expect("rho > 1 here") * rho_prime - n * beta_prime / beta - sums.s2;
    Ok(ProfilePoint { beta, rho, h, h_prime, s1: sums.s1, sln: sums.sln })
}

/// Profile-likelihood ("analytical") fit: safeguarded 1-D Newton with
/// bisection fallback on the γ equation, β(γ) and ρ(γ) substituted back.
pub fn fit_analytical<T: Real>(
    sample: &Sample<T>,
    config: &FitConfig<T>,
) -> Result<FitResult<T>, FitError> {
    let t0 = Instant::now();
    if sample.n() < 3 {
        return Err(FitError::TooFewObservations);
    }
    let n = T::of_usize(sample.n());
    let eps_sup = config.resolved_eps_support(sample);
    let hi = sample.min_value() - eps_sup;

    let s2v = sample.variance();
    if !(s2v > T::zero()) {
        return Err(FitError::InitFailure("constant sample"));
    }
    let sd = s2v.sqrt();

    // h(γ) rises to +∞ as γ → min(x)⁻ and tends to 0 from below as
    // γ → −∞ for positively skewed data, crossing zero exactly once.
    let at_hi = profile_point(sample, hi)?;
    if !(at_hi.h > T::zero()) {
        return Err(FitError::NumericFailure("no sign change in gamma bracket"));
    }

    // Expand the bracket leftwards until h < 0. Negative-skew samples have
    // no root (the likelihood degenerates towards γ → −∞) and fail here;
    // so do near-symmetric ones whose root sits absurdly far left (the cap
    // at 1e5 standard deviations corresponds to ρ beyond 1e10).
    let mut lo = hi - sd;
    let mut at_lo = profile_point(sample, lo)?;
    let mut width = sd;
    while !(at_lo.h < T::zero()) {
        width = width * T::of(2.0);
        if width > T::of(1e5) * sd {
            return Err(FitError::NumericFailure("no sign change in gamma bracket"));
        }
        lo = hi - width;
        at_lo = profile_point(sample, lo)?;
    }

    let mut bracket = (lo, hi);
    let mut x = (lo + hi) * T::of(0.5);
    let mut point = profile_point(sample, x)?;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0usize;
    let tol_x = T::of(1e-13) * (sd + x.abs());

    let record = |tr: &mut Vec<TracePoint<T>>, it: usize, g: T, pt: &ProfilePoint<T>| {
        let params = GgdParams { gamma: g, beta: pt.beta, rho: pt.rho };
        let ll = ll_from_parts(n, pt.s1, pt.sln, &params);
        tr.push(TracePoint { iteration: it, params, log_likelihood: ll });
    };
    record(&mut trace, 0, x, &point);

    for _ in 0..config.max_iters {
        if point.h == T::zero() {
            converged = true;
            break;
        }
        if point.h < T::zero() {
            bracket.0 = x;
        } else {
            bracket.1 = x;
        }
        // Newton candidate, bisection whenever it leaves the bracket.
        let newton = x - point.h / point.h_prime;
        let next = if newton.is_finite() && newton > bracket.0 && newton < bracket.1 {
            newton
        } else {
            (bracket.0 + bracket.1) * T::of(0.5)
        };
        let step = (next - x).abs();
        x = next;
        point = profile_point(sample, x)?;
        iterations += 1;
        record(&mut trace, iterations, x, &point);
        if step <= tol_x {
            converged = true;
            break;
        }
    }

    let last = trace.last().expect("trace has the initial point");
    Ok(FitResult {
        params: last.params,
        log_likelihood: last.log_likelihood,
        iterations,
        converged,
        trace,
        method: Method::Analytical,
        elapsed_s: t0.elapsed().as_secs_f64(),
    })
}

/// Runs the chosen estimator.
pub fn fit<T: Real>(
    sample: &Sample<T>,
    method: Method,
    config: &FitConfig<T>,
) -> Result<FitResult<T>, FitError> {
    match method {
        Method::NaturalGradient => fit_natural_gradient(sample, config),
        Method::Newton => fit_newton(sample, config),
        Method::Analytical => fit_analytical(sample, config),
    }
}
