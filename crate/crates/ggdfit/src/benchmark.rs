//! Synthetic estimator benchmarks: per-parameter bias, variance and
//! mean-squared error over M realizations, with wall-clock timing, for the
//! three fitting methods — either over a grid of sample sizes or sweeping
//! one true parameter while the others stay fixed.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimation::{fit, FitConfig, Method};
use crate::ggd::{GgdParams, ParamName, Sample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum BenchError {
    #[error("invalid experiment config: {0}")]
    InvalidConfig(&'static str),
}

/// One synthetic experiment: draw M samples per cell from `truth`, fit with
/// every requested method, and summarize estimator error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub truth: GgdParams<f64>,
    /// Sample sizes, ascending.
    pub sample_sizes: Vec<usize>,
    /// Realizations per cell (M).
    pub realizations: usize,
    pub methods: Vec<Method>,
    pub seed: u64,
    /// Present for the second experiment: vary one parameter over these
    /// values, keeping the other two at `truth`.
    #[serde(default)]
    pub sweep: Option<(ParamName, Vec<f64>)>,
    #[serde(default = "default_fit_config")]
    pub fit: FitConfig<f64>,
}

fn default_fit_config() -> FitConfig<f64> {
    FitConfig::default()
}

impl ExperimentConfig {
    fn validate(&self) -> Result<(), BenchError> {
        if self.realizations < 2 {
            return Err(BenchError::InvalidConfig("realizations must be at least 2"));
        }
        if self.sample_sizes.is_empty() {
            return Err(BenchError::InvalidConfig("sample_sizes must be nonempty"));
        }
        if self.sample_sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(BenchError::InvalidConfig("sample_sizes must be strictly ascending"));
        }
        if self.methods.is_empty() {
            return Err(BenchError::InvalidConfig("methods must be nonempty"));
        }
        Ok(())
    }
}

/// Summary statistics of one (method, n[, sweep value]) cell.
///
/// `rmse` is the mean of (θ̂ − θ)² per parameter, i.e. bias² + variance;
/// [`MetricRow::rmse_sqrt`] gives its square root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub method: Method,
    pub n: usize,
    pub sweep: Option<(ParamName, f64)>,
    /// θ − mean(θ̂), per parameter (γ, β, ρ).
    pub bias: [f64; 3],
    /// Population variance of θ̂ over the included realizations.
    pub variance: [f64; 3],
    /// Mean squared error per parameter.
    pub rmse: [f64; 3],
    /// Mean wall-clock seconds per included fit (varies run to run).
    pub mean_time_s: f64,
    /// Fraction of the M realizations whose fit converged; only those
    /// enter the moments above.
    pub conv_rate: f64,
}

impl MetricRow {
    /// Square root of the mean-squared-error column, per parameter.
    pub fn rmse_sqrt(&self) -> [f64; 3] {
        [self.rmse[0].sqrt(), self.rmse[1].sqrt(), self.rmse[2].sqrt()]
    }
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for realization `i` of the cell with sample size `n`: a SplitMix64
/// chain over (master, n, i). The method is deliberately not mixed in, so
/// every estimator fits the identical sample of each realization.
pub fn derive_seed(master: u64, n: usize, i: usize) -> u64 {
    mix(mix(mix(master) ^ n as u64) ^ i as u64)
}

struct Outcome {
    params: Option<GgdParams<f64>>,
    converged: bool,
    elapsed_s: f64,
}

/// Accumulates one cell's outcomes into a [`MetricRow`]. A realization
/// enters the moments only when its fit converged: hard failures and
/// budget-exhausted fits alike are excluded and show up as a lowered
/// convergence rate. Estimates whose fit diverged (samples with no
/// interior likelihood maximum exist at small n) would otherwise swamp
/// every moment with ridge-walk artifacts.
fn summarize(
    truth: &GgdParams<f64>,
    method: Method,
    n: usize,
    sweep: Option<(ParamName, f64)>,
    outcomes: &[Outcome],
) -> MetricRow {
    let m_total = outcomes.len();
    let truth_v = [truth.gamma, truth.beta, truth.rho];
    let mut included = 0usize;
    let mut sum = [0.0f64; 3];
    let mut sum_sq = [0.0f64; 3];
    let mut sq_err = [0.0f64; 3];
    let mut time_acc = 0.0f64;
    let mut converged = 0usize;
    for o in outcomes {
        if o.converged {
            converged += 1;
        }
        let Some(p) = o.params.filter(|_| o.converged) else { continue };
        included += 1;
        time_acc += o.elapsed_s;
        let est = [p.gamma, p.beta, p.rho];
        for k in 0..3 {
            sum[k] += est[k];
            sum_sq[k] += est[k] * est[k];
            let e = est[k] - truth_v[k];
            sq_err[k] += e * e;
        }
    }
    let mf = included.max(1) as f64;
    let mut bias = [0.0; 3];
    let mut variance = [0.0; 3];
    let mut rmse = [0.0; 3];
    for k in 0..3 {
        let mean = sum[k] / mf;
        bias[k] = truth_v[k] - mean;
        variance[k] = (sum_sq[k] / mf - mean * mean).max(0.0);
        rmse[k] = sq_err[k] / mf;
    }
    MetricRow {
        method,
        n,
        sweep,
        bias,
        variance,
        rmse,
        mean_time_s: time_acc / mf,
        conv_rate: converged as f64 / m_total as f64,
    }
}

fn run_cells(
    config: &ExperimentConfig,
    truth: &GgdParams<f64>,
    sweep: Option<(ParamName, f64)>,
    rows: &mut Vec<MetricRow>,
) {
    let m = config.realizations;
    for &n in &config.sample_sizes {
        // one shared sample per realization, reused by every method
        let samples: Vec<Sample<f64>> = (0..m)
            .into_par_iter()
            .map(|i| truth.sample(n, derive_seed(config.seed, n, i)))
            .collect();
        for &method in &config.methods {
            let outcomes: Vec<Outcome> = samples
                .par_iter()
                .map(|s| match fit(s, method, &config.fit) {
                    Ok(r) => Outcome {
                        params: Some(r.params),
                        converged: r.converged,
                        elapsed_s: r.elapsed_s,
                    },
                    Err(_) => Outcome { params: None, converged: false, elapsed_s: 0.0 },
                })
                .collect();
            rows.push(summarize(truth, method, n, sweep, &outcomes));
        }
    }
}

/// First experiment: fixed truth, varying sample size.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<MetricRow>, BenchError> {
    config.validate()?;
    let mut rows = Vec::new();
    run_cells(config, &config.truth, None, &mut rows);
    Ok(rows)
}

/// Second experiment: one parameter swept over its listed values.
pub fn run_sweep(config: &ExperimentConfig) -> Result<Vec<MetricRow>, BenchError> {
    config.validate()?;
    let Some((param, values)) = &config.sweep else {
        return Err(BenchError::InvalidConfig("sweep requires a swept parameter"));
    };
    if values.len() < 2 {
        return Err(BenchError::InvalidConfig("sweep needs at least two values"));
    }
    let mut rows = Vec::new();
    for &v in values {
        let truth = config.truth.with(*param, v);
        run_cells(config, &truth, Some((*param, v)), &mut rows);
    }
    Ok(rows)
}

/// Writes the metric table as CSV (UTF-8, '.' decimal separator).
pub fn write_csv<W: Write>(rows: &[MetricRow], out: &mut W) -> std::io::Result<()> {
    writeln!(
        out,
        "method,n,sweep_param,sweep_value,bias_g,bias_b,bias_r,\
         var_g,var_b,var_r,rmse_g,rmse_b,rmse_r,time_s,conv_rate"
    )?;
    for r in rows {
        let (sp, sv) = match r.sweep {
            Some((p, v)) => (p.label().to_string(), v.to_string()),
            None => (String::new(), String::new()),
        };
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.method,
            r.n,
            sp,
            sv,
            r.bias[0],
            r.bias[1],
            r.bias[2],
            r.variance[0],
            r.variance[1],
            r.variance[2],
            r.rmse[0],
            r.rmse[1],
            r.rmse[2],
            r.mean_time_s,
            r.conv_rate
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn truth() -> GgdParams<f64> {
        GgdParams::new(2.0, 15.0, 4.0).unwrap()
    }

    fn base_config() -> ExperimentConfig {
        ExperimentConfig {
            truth: truth(),
            sample_sizes: vec![100, 300],
            realizations: 30,
            methods: vec![Method::NaturalGradient, Method::Analytical],
            seed: 99,
            sweep: None,
            fit: FitConfig::default(),
        }
    }

    #[test]
    fn perfect_estimator_has_zero_error() {
        let outcomes: Vec<Outcome> = (0..10)
            .map(|_| Outcome { params: Some(truth()), converged: true, elapsed_s: 0.1 })
            .collect();
        let row = summarize(&truth(), Method::NaturalGradient, 50, None, &outcomes);
        assert_eq!(row.bias, [0.0; 3]);
        assert_eq!(row.variance, [0.0; 3]);
        assert_eq!(row.rmse, [0.0; 3]);
        assert_eq!(row.conv_rate, 1.0);
    }

    #[test]
    fn failure_accounting_is_exact() {
        let mut outcomes: Vec<Outcome> = (0..8)
            .map(|_| Outcome { params: Some(truth()), converged: true, elapsed_s: 0.0 })
            .collect();
        outcomes.push(Outcome { params: None, converged: false, elapsed_s: 0.0 });
        outcomes.push(Outcome { params: None, converged: false, elapsed_s: 0.0 });
        let row = summarize(&truth(), Method::Newton, 50, None, &outcomes);
        let failures = 2.0;
        assert_eq!(row.conv_rate + failures / 10.0, 1.0);
    }

    #[test]
    fn rmse_identity_holds_on_every_row() {
        let rows = run_experiment(&base_config()).unwrap();
        assert_eq!(rows.len(), 4);
        for r in &rows {
            for k in 0..3 {
                let lhs = r.rmse[k];
                let rhs = r.bias[k] * r.bias[k] + r.variance[k];
                assert!(
                    (lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()),
                    "identity broke: {lhs} vs {rhs}"
                );
            }
        }
    }

    #[test]
    fn identical_configs_give_identical_tables() {
        let a = run_experiment(&base_config()).unwrap();
        let b = run_experiment(&base_config()).unwrap();
        for (x, y) in a.iter().zip(&b) {
            // every field except wall-clock time is bit-reproducible
            assert_eq!(x.method, y.method);
            assert_eq!(x.n, y.n);
            assert_eq!(x.bias, y.bias);
            assert_eq!(x.variance, y.variance);
            assert_eq!(x.rmse, y.rmse);
            assert_eq!(x.conv_rate, y.conv_rate);
        }
    }

    #[test]
    fn sweep_covers_the_cross_product() {
        let mut cfg = base_config();
        cfg.sample_sizes = vec![100];
        cfg.realizations = 10;
        cfg.sweep = Some((ParamName::Rho, vec![3.0, 4.0, 5.0]));
        let rows = run_sweep(&cfg).unwrap();
        assert_eq!(rows.len(), 3 * 1 * 2);
        for &v in &[3.0, 4.0, 5.0] {
            for &m in &cfg.methods {
                assert!(rows
                    .iter()
                    .any(|r| r.sweep == Some((ParamName::Rho, v)) && r.method == m));
            }
        }
    }

    #[test]
    fn sweep_at_base_truth_reproduces_the_plain_experiment() {
        let mut cfg = base_config();
        cfg.sample_sizes = vec![100];
        cfg.realizations = 15;
        let plain = run_experiment(&cfg).unwrap();
        cfg.sweep = Some((ParamName::Beta, vec![15.0, 30.0]));
        let swept = run_sweep(&cfg).unwrap();
        for p in &plain {
            let s = swept
                .iter()
                .find(|r| {
                    r.method == p.method && r.sweep == Some((ParamName::Beta, 15.0))
                })
                .unwrap();
            assert_eq!(s.bias, p.bias);
            assert_eq!(s.rmse, p.rmse);
        }
    }

    #[test]
    fn large_n_sweep_rows_beat_small_n_rows() {
        let mut cfg = base_config();
        cfg.sample_sizes = vec![100, 10_000];
        cfg.realizations = 12;
        cfg.methods = vec![Method::NaturalGradient];
        cfg.sweep = Some((ParamName::Rho, vec![3.0, 4.0, 5.0]));
        let rows = run_sweep(&cfg).unwrap();
        let mut better = 0usize;
        let mut total = 0usize;
        for &v in &[3.0, 4.0, 5.0] {
            let find = |n: usize| {
                rows.iter()
                    .find(|r| r.n == n && r.sweep == Some((ParamName::Rho, v)))
                    .unwrap()
            };
            let small = find(100);
            let large = find(10_000);
            for k in 0..3 {
                total += 1;
                if large.rmse[k] < small.rmse[k] {
                    better += 1;
                }
            }
        }
        assert!(
            better as f64 >= 0.8 * total as f64,
            "only {better}/{total} sweep cells improved at N=10^4"
        );
    }

    #[test]
    fn config_validation() {
        let mut cfg = base_config();
        cfg.realizations = 1;
        assert!(run_experiment(&cfg).is_err());
        let mut cfg = base_config();
        cfg.sample_sizes = vec![300, 100];
        assert!(run_experiment(&cfg).is_err());
        let cfg = base_config();
        assert!(run_sweep(&cfg).is_err());
        let mut cfg = base_config();
        cfg.sweep = Some((ParamName::Rho, vec![4.0]));
        assert!(run_sweep(&cfg).is_err());
    }

    #[test]
    fn csv_has_the_documented_header_and_shape() {
        let mut cfg = base_config();
        cfg.sample_sizes = vec![100];
        cfg.realizations = 5;
        cfg.methods = vec![Method::Analytical];
        let rows = run_experiment(&cfg).unwrap();
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "method,n,sweep_param,sweep_value,bias_g,bias_b,bias_r,\
             var_g,var_b,var_r,rmse_g,rmse_b,rmse_r,time_s,conv_rate"
        );
        let row = lines.next().unwrap();
        assert!(row.starts_with("analytical,100,,,"));
        assert_eq!(row.split(',').count(), 15);
    }

    #[test]
    fn seed_derivation_separates_cells() {
        let a = derive_seed(1, 100, 0);
        let b = derive_seed(1, 100, 1);
        let c = derive_seed(1, 200, 0);
        let d = derive_seed(2, 100, 0);
        assert!(a != b && a != c && a != d && b != c);
        assert_eq!(a, derive_seed(1, 100, 0));
    }

    #[test]
    fn bias_shrinks_within_crlb_scale() {
        // light version of the acceptance check: |bias| of the mean over M
        // fits stays within a few CRLB standard errors
        let mut cfg = base_config();
        cfg.sample_sizes = vec![500];
        cfg.realizations = 40;
        cfg.methods = vec![Method::NaturalGradient];
        let rows = run_experiment(&cfg).unwrap();
        let r = &rows[0];
        assert!(r.conv_rate > 0.9);
        // rough CRLB sigmas at n=500 for (2,15,4): computed from the Fisher
        // matrix diagonal inverse
        let f = crate::estimation::fisher_matrix(500, &truth()).unwrap();
        for k in 0..3 {
            let mut e = [0.0; 3];
            e[k] = 1.0;
            let sigma = crate::linalg::solve3(&f, &e).unwrap()[k].sqrt();
            assert!(
                r.bias[k].abs() < 4.0 * sigma / (cfg.realizations as f64).sqrt() + 0.05 * sigma,
                "bias {} too large vs sigma {sigma}",
                r.bias[k]
            );
        }
    }
}
