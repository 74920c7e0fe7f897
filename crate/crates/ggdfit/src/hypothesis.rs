//! Two-sample significance screening of the fitted parameters across
//! depths: Welch's T statistic with Welch–Satterthwaite degrees of freedom,
//! two-sided Student-T p-values, a four-way significance label, and the
//! Bayes factor counterpart with its rejection threshold.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{ClassLabel, Depth};
use crate::ggd::{GgdParams, ParamName};
use crate::scalar::Real;
use crate::special::reg_inc_beta;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TestError {
    #[error("degenerate groups: both sample variances are zero")]
    DegenerateGroups,
    #[error("group needs at least two values")]
    GroupTooSmall,
}

/// Per-class summary of one parameter at one depth: the values themselves,
/// their mean and unbiased variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub values: Vec<f64>,
    pub n: usize,
    pub mean: f64,
    pub s2: f64,
}

impl GroupStats {
    pub fn new(values: Vec<f64>) -> Result<Self, TestError> {
        let n = values.len();
        if n < 2 {
            return Err(TestError::GroupTooSmall);
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let s2 = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        Ok(Self { values, n, mean, s2 })
    }
}

/// Welch's two-sample statistic and its degrees of freedom:
/// t = (m_H − m_S) / √(s²_H/n₁ + s²_S/n₂), ν by Welch–Satterthwaite.
pub fn welch_t(h: &GroupStats, s: &GroupStats) -> Result<(f64, f64), TestError> {
    if h.s2 == 0.0 && s.s2 == 0.0 {
        return Err(TestError::DegenerateGroups);
    }
    let (n1, n2) = (h.n as f64, s.n as f64);
    let a = h.s2 / n1;
    let b = s.s2 / n2;
    let t = (h.mean - s.mean) / (a + b).sqrt();
    let nu = (a + b) * (a + b)
        / (h.s2 * h.s2 / (n1 * n1 * (n1 - 1.0)) + s.s2 * s.s2 / (n2 * n2 * (n2 - 1.0)));
    Ok((t, nu))
}

/// Two-sided Student-T tail probability beyond |t|, via the regularized
/// incomplete beta: p = I_{ν/(ν+t²)}(ν/2, 1/2).
pub fn p_value<T: Real>(t: T, nu: T) -> T {
    assert!(nu > T::zero(), "p_value requires nu > 0");
    if t.is_infinite() {
        return T::zero();
    }
    let x = nu / (nu + t * t);
    reg_inc_beta(nu * T::of(0.5), T::of(0.5), x).expect("arguments in domain")
}

/// The four decision rules on the p-value.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum SignificanceLabel {
    NotSignificant,
    MarginallySignificant,
    Significant,
    HighlySignificant,
}

impl SignificanceLabel {
    pub fn label(&self) -> &'static str {
        match self {
            SignificanceLabel::NotSignificant => "not_significant",
            SignificanceLabel::MarginallySignificant => "marginally_significant",
            SignificanceLabel::Significant => "significant",
            SignificanceLabel::HighlySignificant => "highly_significant",
        }
    }
}

impl fmt::Display for SignificanceLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// p > 0.10 → not; p ∈ [0.05, 0.10] → marginally; p ∈ [0.01, 0.05) →
/// significant; p < 0.01 → highly significant.
pub fn significance_label(p: f64) -> SignificanceLabel {
    if p > 0.10 {
        SignificanceLabel::NotSignificant
    } else if p >= 0.05 {
        SignificanceLabel::MarginallySignificant
    } else if p >= 0.01 {
        SignificanceLabel::Significant
    } else {
        SignificanceLabel::HighlySignificant
    }
}

/// |t| threshold at false-alarm probability `pfa` for a two-sided test with
/// `nu` degrees of freedom, solved from the p-value by bisection.
pub fn t_pfa_threshold(pfa: f64, nu: f64) -> f64 {
    assert!(pfa > 0.0 && pfa < 1.0 && nu > 0.0);
    let (mut lo, mut hi) = (0.0f64, 2.0f64);
    while p_value(hi, nu) > pfa {
        hi *= 2.0;
        if hi > 1e12 {
            break;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if p_value(mid, nu) > pfa {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 * (1.0 + hi) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Options for the Bayes-factor computation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BayesConfig {
    /// False-alarm probability defining T_PFA (default 0.05).
    pub pfa: f64,
    /// Use ν + T² in the numerator instead of the ν + T form. The ν + T
    /// form is the default; the squared variant is available for
    /// sensitivity analysis since it is what the rejection behaviour of a
    /// T-statistic at large |T| suggests.
    pub squared_numerator: bool,
}

impl Default for BayesConfig {
    fn default() -> Self {
        Self { pfa: 0.05, squared_numerator: false }
    }
}

/// Bayes factor with its rejection threshold √(να*).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BayesFactor {
    pub bf: f64,
    pub threshold: f64,
    pub reject: bool,
}

/// BF = ((ν + T) / (ν + (T − √(να*))²))^{(n₁+n₂)/2} with
/// α = [(T²_PFA/ν) + 1]^{(n₁+n₂)/2} and α* = α^{2/(n₁+n₂−1)} − 1;
/// the null is rejected when BF > √(να*). T_PFA is computed from the
/// configured PFA at the realized ν, not hard-coded.
pub fn bayes_factor_with(cfg: &BayesConfig, t: f64, nu: f64, n1: usize, n2: usize) -> BayesFactor {
    assert!(nu > 0.0, "bayes_factor requires nu > 0");
    let m = (n1 + n2) as f64;
    let t_pfa = t_pfa_threshold(cfg.pfa, nu);
    let alpha = (t_pfa * t_pfa / nu + 1.0).powf(m / 2.0);
    let alpha_star = alpha.powf(2.0 / (m - 1.0)) - 1.0;
    let threshold = (nu * alpha_star).sqrt();
    let numerator = if cfg.squared_numerator { nu + t * t } else { nu + t };
    let bf = (numerator / (nu + (t - threshold) * (t - threshold))).powf(m / 2.0);
    BayesFactor { bf, threshold, reject: bf > threshold }
}

/// [`bayes_factor_with`] at the default configuration (PFA 0.05, ν + T
/// numerator).
pub fn bayes_factor(t: f64, nu: f64, n1: usize, n2: usize) -> BayesFactor {
    bayes_factor_with(&BayesConfig::default(), t, nu, n1, n2)
}

/// One (parameter, depth) cell of the screening scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthScan {
    pub depth: Depth,
    pub parameter: ParamName,
    pub t: f64,
    pub nu: f64,
    pub p_value: f64,
    pub bayes_factor: f64,
    pub label: SignificanceLabel,
    pub reject_h0_t: bool,
    pub reject_h0_bf: bool,
}

/// A depth skipped by the scan, with the reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedDepth {
    pub depth: Depth,
    pub reason: String,
}

/// Table-style summary per parameter: contiguous runs of depths whose
/// |T| exceeds T_PFA, the maximal-|T| depth, and the depths within 10% of
/// the maximal score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub parameter: ParamName,
    pub significant_ranges: Vec<(Depth, Depth)>,
    pub peak: Option<DepthScan>,
    pub near_peak_range: Option<(Depth, Depth)>,
}

/// Full scan output plus the empirical agreement between the T-test and
/// Bayes-factor decisions (reported, not asserted).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub rows: Vec<DepthScan>,
    pub skipped: Vec<SkippedDepth>,
    pub summaries: Vec<ParamSummary>,
    /// Fraction of rows where reject_h0_t == reject_h0_bf.
    pub t_bf_agreement: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanConfig {
    pub pfa: f64,
    pub bayes: BayesConfig,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self { pfa: 0.05, bayes: BayesConfig::default() }
    }
}

/// Runs the Welch scan for every (depth, parameter) cell of a cohort of
/// per-patient fitted parameters. Depths with fewer than two patients per
/// class are skipped with a reason. Rows come out sorted by (parameter,
/// depth).
pub fn scan_depths(
    per_patient_fits: &BTreeMap<String, BTreeMap<Depth, GgdParams<f64>>>,
    labels: &BTreeMap<String, ClassLabel>,
    cfg: &ScanConfig,
) -> ScanReport {
    let mut depths: Vec<Depth> = Vec::new();
    for fits in per_patient_fits.values() {
        for &d in fits.keys() {
            if !depths.contains(&d) {
                depths.push(d);
            }
        }
    }
    depths.sort();

    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for &depth in &depths {
        let mut healthy: Vec<GgdParams<f64>> = Vec::new();
        let mut lentigo: Vec<GgdParams<f64>> = Vec::new();
        for (patient, fits) in per_patient_fits {
            let Some(p) = fits.get(&depth) else { continue };
            match labels.get(patient) {
                Some(ClassLabel::Healthy) => healthy.push(*p),
                Some(ClassLabel::Lentigo) => lentigo.push(*p),
                _ => {}
            }
        }
        if healthy.len() < 2 || lentigo.len() < 2 {
            skipped.push(SkippedDepth {
                depth,
                reason: format!(
                    "insufficient group: {} healthy, {} lentigo",
                    healthy.len(),
                    lentigo.len()
                ),
            });
            continue;
        }
        for parameter in ParamName::ALL {
            let h = GroupStats::new(healthy.iter().map(|p| p.get(parameter)).collect())
                .expect("group size checked above");
            let s = GroupStats::new(lentigo.iter().map(|p| p.get(parameter)).collect())
                .expect("group size checked above");
            match welch_t(&h, &s) {
                Ok((t, nu)) => {
                    let p = p_value(t, nu);
                    let bayes = bayes_factor_with(&cfg.bayes, t, nu, h.n, s.n);
                    rows.push(DepthScan {
                        depth,
                        parameter,
                        t,
                        nu,
                        p_value: p,
                        bayes_factor: bayes.bf,
                        label: significance_label(p),
                        reject_h0_t: t.abs() > t_pfa_threshold(cfg.pfa, nu),
                        reject_h0_bf: bayes.reject,
                    });
                }
                Err(e) => skipped.push(SkippedDepth {
                    depth,
                    reason: format!("{parameter}: {e}"),
                }),
            }
        }
    }
    rows.sort_by_key(|r| (r.parameter, r.depth));

    let summaries = ParamName::ALL
        .iter()
        .map(|&parameter| summarize_parameter(parameter, &rows))
        .collect();
    let agree = rows.iter().filter(|r| r.reject_h0_t == r.reject_h0_bf).count();
    let t_bf_agreement =
        if rows.is_empty() { 1.0 } else { agree as f64 / rows.len() as f64 };
    ScanReport { rows, skipped, summaries, t_bf_agreement }
}

fn summarize_parameter(parameter: ParamName, rows: &[DepthScan]) -> ParamSummary {
    let mine: Vec<&DepthScan> = rows.iter().filter(|r| r.parameter == parameter).collect();
    let mut ranges = Vec::new();
    let mut run_start: Option<Depth> = None;
    let mut prev: Option<Depth> = None;
    for r in &mine {
        if r.reject_h0_t {
            if run_start.is_none() {
                run_start = Some(r.depth);
            }
            prev = Some(r.depth);
        } else if let (Some(s), Some(e)) = (run_start.take(), prev.take()) {
            ranges.push((s, e));
        }
    }
    if let (Some(s), Some(e)) = (run_start, prev) {
        ranges.push((s, e));
    }
    let peak = mine
        .iter()
        .max_by(|a, b| a.t.abs().partial_cmp(&b.t.abs()).expect("finite t"))
        .map(|r| (*r).clone());
    let near_peak_range = peak.as_ref().map(|p| {
        let cutoff = 0.9 * p.t.abs();
        let band: Vec<Depth> =
            mine.iter().filter(|r| r.t.abs() >= cutoff).map(|r| r.depth).collect();
        (*band.iter().min().unwrap(), *band.iter().max().unwrap())
    });
    ParamSummary { parameter, significant_ranges: ranges, peak, near_peak_range }
}

/// Writes scan rows as CSV:
/// `parameter,depth_um,t,nu,p_value,bayes_factor,label,reject_t,reject_bf`.
pub fn write_csv<W: Write>(rows: &[DepthScan], out: &mut W) -> std::io::Result<()> {
    writeln!(out, "parameter,depth_um,t,nu,p_value,bayes_factor,label,reject_t,reject_bf")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.parameter,
            r.depth,
            r.t,
            r.nu,
            r.p_value,
            r.bayes_factor,
            r.label,
            r.reject_h0_t,
            r.reject_h0_bf
        )?;
    }
    Ok(())
}
