//! End-to-end orchestration: ingest patient stacks, fit every image,
//! summarize goodness of fit, average parameter curves over random stack
//! selections, screen depths for significance, classify patients, and
//! write the report bundle.

pub mod ingest;
pub mod report;
pub mod synth;

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::{leave_one_out, FeatureVector, LooOutcome};
use crate::cohort::{ClassLabel, Depth, ImageKey, PatientStack};
use crate::estimation::{fit, FitConfig, FitResult, Method};
use crate::ggd::{GgdParams, ParamName};
use crate::gof;
use crate::hypothesis::{scan_depths, BayesConfig, ScanConfig, ScanReport};

pub use ingest::{ingest, read_image, IngestError};
pub use report::{ClassificationReport, DepthCurvePoint, Manifest, StageStatus};
pub use synth::{generate_synthetic_cohort, synth_stacks, CohortSpec, CohortTruth, SynthFormat};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("stage {stage} failed: {message}")]
    Stage { stage: &'static str, message: String },
}

/// Settings of a full pipeline run, read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Cohort directory in the ingest layout.
    pub input_root: PathBuf,
    /// Where the report bundle goes.
    pub out_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::estimator")]
    pub estimator: Method,
    #[serde(default)]
    pub fit: FitConfig<f64>,
    /// Random stack selections averaged for the depth curves.
    #[serde(default = "defaults::selection_repeats")]
    pub selection_repeats: usize,
    /// Depth window (µm) whose estimates become classifier features.
    #[serde(default = "defaults::depth_window_um")]
    pub depth_window_um: (f64, f64),
    #[serde(default = "defaults::pfa")]
    pub pfa: f64,
    /// Use the ν + T² Bayes-factor numerator variant.
    #[serde(default)]
    pub bayes_squared_numerator: bool,
    #[serde(default = "defaults::svm_c")]
    pub svm_c: f64,
    /// Leave-one-out acquisition-selection repeats.
    #[serde(default = "defaults::loo_repeats")]
    pub loo_repeats: usize,
}

mod defaults {
    use crate::estimation::Method;

    pub fn estimator() -> Method {
        Method::NaturalGradient
    }
    pub fn selection_repeats() -> usize {
        300
    }
    pub fn depth_window_um() -> (f64, f64) {
        (40.0, 60.0)
    }
    pub fn pfa() -> f64 {
        0.05
    }
    pub fn svm_c() -> f64 {
        1.0
    }
    pub fn loo_repeats() -> usize {
        100
    }
}

/// An image whose fit failed, with the reason; failures never abort a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitFailure {
    pub key: ImageKey,
    pub reason: String,
}

/// Fits one image with the chosen estimator, working in units of the
/// sample standard deviation and mapping the estimate back through the
/// affine equivariance of the family. The step size of the gradient
/// methods is an absolute length, so intensity units (8-bit vs 16-bit
/// images) must not change the iteration geometry.
pub fn fit_image(
    sample: &crate::ggd::Sample<f64>,
    method: Method,
    config: &FitConfig<f64>,
) -> Result<FitResult<f64>, crate::estimation::FitError> {
    let sd = sample.variance().sqrt();
    if !(sd > 0.0) || !sd.is_finite() {
        return fit(sample, method, config);
    }
    let scaled = sample.map(|x| x / sd).expect("scaling keeps values finite");
    let mut result = fit(&scaled, method, config)?;
    let n = sample.n() as f64;
    let ll_shift = n * sd.ln();
    let rescale = |p: &GgdParams<f64>| GgdParams {
        gamma: p.gamma * sd,
        beta: p.beta * sd,
        rho: p.rho,
    };
    result.params = rescale(&result.params);
    result.log_likelihood -= ll_shift;
    for point in &mut result.trace {
        point.params = rescale(&point.params);
        point.log_likelihood -= ll_shift;
    }
    Ok(result)
}

/// Fits every image of every stack with the chosen estimator. Each input
/// image lands either in the fit map or in the failure list.
pub fn fit_all(
    stacks: &[PatientStack],
    method: Method,
    config: &FitConfig<f64>,
) -> (BTreeMap<ImageKey, FitResult<f64>>, Vec<FitFailure>) {
    let images: Vec<(ImageKey, &crate::ggd::Sample<f64>)> =
        stacks.iter().flat_map(|s| s.images()).collect();
    let outcomes: Vec<(ImageKey, Result<FitResult<f64>, String>)> = images
        .into_par_iter()
        .map(|(key, sample)| {
            let r = fit_image(sample, method, config).map_err(|e| e.to_string());
            (key, r)
        })
        .collect();
    let mut fits = BTreeMap::new();
    let mut failures = Vec::new();
    for (key, outcome) in outcomes {
        match outcome {
            Ok(f) => {
                fits.insert(key, f);
            }
            Err(reason) => failures.push(FitFailure { key, reason }),
        }
    }
    (fits, failures)
}

/// Picks one acquisition per patient, uniformly at random.
pub fn select_acquisitions(
    stacks: &[PatientStack],
    rng: &mut ChaCha12Rng,
) -> BTreeMap<String, usize> {
    stacks
        .iter()
        .map(|s| (s.patient.clone(), rng.gen_range(0..s.acquisitions.len())))
        .collect()
}

/// Per-depth, per-class mean and standard deviation of the estimates,
/// averaged over `repeats` random stack selections. The reported std is
/// the selection-to-selection spread of the class mean curve.
pub fn average_over_selections(
    stacks: &[PatientStack],
    fits: &BTreeMap<ImageKey, FitResult<f64>>,
    repeats: usize,
    seed: u64,
) -> Vec<DepthCurvePoint> {
    assert!(repeats >= 1);
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    // (label, parameter, depth) -> per-repeat class means
    let mut curves: BTreeMap<(ClassLabel, ParamName, Depth), Vec<f64>> = BTreeMap::new();
    for _ in 0..repeats {
        let selection = select_acquisitions(stacks, &mut rng);
        let mut acc: BTreeMap<(ClassLabel, ParamName, Depth), (f64, usize)> = BTreeMap::new();
        for stack in stacks {
            if stack.label == ClassLabel::Unlabeled {
                continue;
            }
            let acq = selection[&stack.patient];
            for &depth in stack.acquisitions[acq].keys() {
                let key = ImageKey { patient: stack.patient.clone(), acquisition: acq, depth };
                let Some(fit) = fits.get(&key) else { continue };
                for param in ParamName::ALL {
                    let slot = acc.entry((stack.label, param, depth)).or_insert((0.0, 0));
                    slot.0 += fit.params.get(param);
                    slot.1 += 1;
                }
            }
        }
        for (key, (sum, count)) in acc {
            curves.entry(key).or_default().push(sum / count as f64);
        }
    }
    curves
        .into_iter()
        .map(|((label, parameter, depth), means)| {
            // identical selections (e.g. single-acquisition patients) must
            // report exactly zero spread, not division-rounding residue
            if means.iter().all(|m| *m == means[0]) {
                return DepthCurvePoint { label, parameter, depth, mean: means[0], std: 0.0 };
            }
            let n = means.len() as f64;
            let mean = means.iter().sum::<f64>() / n;
            let var = means.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / n;
            DepthCurvePoint { label, parameter, depth, mean, std: var.sqrt() }
        })
        .collect()
}

/// Per-patient fits at one selection, keyed for the depth scan.
pub fn selection_fits(
    stacks: &[PatientStack],
    fits: &BTreeMap<ImageKey, FitResult<f64>>,
    selection: &BTreeMap<String, usize>,
) -> BTreeMap<String, BTreeMap<Depth, GgdParams<f64>>> {
    let mut out = BTreeMap::new();
    for stack in stacks {
        let acq = selection[&stack.patient];
        let mut per_depth = BTreeMap::new();
        for &depth in stack.acquisitions[acq].keys() {
            let key = ImageKey { patient: stack.patient.clone(), acquisition: acq, depth };
            if let Some(fit) = fits.get(&key) {
                per_depth.insert(depth, fit.params);
            }
        }
        out.insert(stack.patient.clone(), per_depth);
    }
    out
}

/// A view of the stacks keeping only the selected acquisition per patient,
/// for the single-selection KS summary.
fn selected_view(
    stacks: &[PatientStack],
    selection: &BTreeMap<String, usize>,
) -> Vec<PatientStack> {
    stacks
        .iter()
        .map(|s| {
            let acq = selection[&s.patient];
            PatientStack::new(
                s.patient.clone(),
                s.label,
                vec![s.acquisitions[acq].clone()],
            )
            .expect("one acquisition is always consistent")
        })
        .collect()
}

fn selected_fits_view(
    stacks: &[PatientStack],
    fits: &BTreeMap<ImageKey, FitResult<f64>>,
    selection: &BTreeMap<String, usize>,
) -> BTreeMap<ImageKey, GgdParams<f64>> {
    let mut out = BTreeMap::new();
    for stack in stacks {
        let acq = selection[&stack.patient];
        for &depth in stack.acquisitions[acq].keys() {
            let key = ImageKey { patient: stack.patient.clone(), acquisition: acq, depth };
            if let Some(fit) = fits.get(&key) {
                out.insert(
                    ImageKey { patient: stack.patient.clone(), acquisition: 0, depth },
                    fit.params,
                );
            }
        }
    }
    out
}

/// Builds per-(patient, acquisition) feature vectors from one parameter's
/// estimates at the depths inside the window. Acquisitions missing a fit
/// at any window depth contribute no variant.
pub fn build_features(
    stacks: &[PatientStack],
    fits: &BTreeMap<ImageKey, FitResult<f64>>,
    parameter: ParamName,
    window_um: (f64, f64),
) -> Result<Vec<FeatureVector>, PipelineError> {
    let labeled: Vec<&PatientStack> =
        stacks.iter().filter(|s| s.label != ClassLabel::Unlabeled).collect();
    let Some(first) = labeled.first() else {
        return Err(PipelineError::Stage {
            stage: "classify",
            message: "no labeled patients".into(),
        });
    };
    let window_depths: Vec<Depth> = first
        .depths()
        .into_iter()
        .filter(|d| d.um() >= window_um.0 && d.um() <= window_um.1)
        .collect();
    if window_depths.is_empty() {
        return Err(PipelineError::Stage {
            stage: "classify",
            message: format!(
                "no depths inside the {:?} µm window",
                window_um
            ),
        });
    }
    let mut features = Vec::new();
    for stack in &labeled {
        let mut any = false;
        for acq in 0..stack.acquisitions.len() {
            let mut row = Vec::with_capacity(window_depths.len());
            let mut complete = true;
            for &depth in &window_depths {
                let key = ImageKey { patient: stack.patient.clone(), acquisition: acq, depth };
                match fits.get(&key) {
                    Some(f) => row.push(f.params.get(parameter)),
                    None => {
                        complete = false;
                        break;
                    }
                }
            }
            if complete {
                features.push(FeatureVector {
                    patient: stack.patient.clone(),
                    label: stack.label,
                    features: row,
                });
                any = true;
            }
        }
        if !any {
            return Err(PipelineError::Stage {
                stage: "classify",
                message: format!("patient {} has no complete feature vector", stack.patient),
            });
        }
    }
    Ok(features)
}

/// What a completed run returns to the caller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub n_patients: usize,
    pub n_images: usize,
    pub n_fit_failures: usize,
    pub t_bf_agreement: f64,
    pub classifications: BTreeMap<String, ClassificationReport>,
    pub stages: Vec<StageStatus>,
}

struct StageClock {
    stages: Vec<StageStatus>,
}

impl StageClock {
    fn new() -> Self {
        Self { stages: Vec::new() }
    }

    fn run<T, F>(&mut self, name: &'static str, f: F) -> Result<T, PipelineError>
    where
        F: FnOnce() -> Result<T, String>,
    {
        let t0 = Instant::now();
        match f() {
            Ok(v) => {
                self.stages.push(StageStatus {
                    name: name.into(),
                    status: "ok".into(),
                    seconds: t0.elapsed().as_secs_f64(),
                });
                Ok(v)
            }
            Err(message) => {
                self.stages.push(StageStatus {
                    name: name.into(),
                    status: "failed".into(),
                    seconds: t0.elapsed().as_secs_f64(),
                });
                Err(PipelineError::Stage { stage: name, message })
            }
        }
    }
}

/// Executes the whole pipeline and writes the report bundle into
/// `config.out_dir`. On a stage failure the manifest is still written,
/// with the failed stage marked.
pub fn run(config: &RunConfig) -> Result<RunSummary, PipelineError> {
    let out = &config.out_dir;
    fs::create_dir_all(out).map_err(|e| PipelineError::Stage {
        stage: "setup",
        message: format!("cannot create {}: {e}", out.display()),
    })?;

    let mut clock = StageClock::new();
    let result = run_stages(config, &mut clock);
    let manifest = Manifest {
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: config.seed,
        config: config.clone(),
        stages: clock.stages.clone(),
        failed_stage: result.as_ref().err().map(|e| match e {
            PipelineError::Stage { stage, .. } => stage.to_string(),
        }),
        selection_note:
            "KS summary and depth scan use the first seeded stack selection".into(),
    };
    report::write_json(&out.join("manifest.json"), &manifest).map_err(|e| {
        PipelineError::Stage { stage: "report", message: e.to_string() }
    })?;
    let mut summary = result?;
    summary.stages = clock.stages;
    Ok(summary)
}

fn run_stages(config: &RunConfig, clock: &mut StageClock) -> Result<RunSummary, PipelineError> {
    let out = &config.out_dir;
    let io = |e: std::io::Error| e.to_string();

    let stacks = clock.run("ingest", || {
        ingest(&config.input_root).map_err(|e| e.to_string())
    })?;

    let (fits, failures) = clock.run("fit", || {
        let (fits, failures) = fit_all(&stacks, config.estimator, &config.fit);
        report::write_file(&out.join("fits.csv"), |buf| report::write_fits_csv(&fits, buf))
            .map_err(io)?;
        report::write_file(&out.join("fit_failures.csv"), |buf| {
            report::write_failures_csv(&failures, buf)
        })
        .map_err(io)?;
        Ok((fits, failures))
    })?;

    // the one seeded selection shared by the KS summary and the scan
    let selection = {
        let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
        select_acquisitions(&stacks, &mut rng)
    };

    clock.run("gof", || {
        let view = selected_view(&stacks, &selection);
        let view_fits = selected_fits_view(&stacks, &fits, &selection);
        let rows = gof::mean_ks_by_depth(&view, &view_fits).map_err(|e| e.to_string())?;
        report::write_file(&out.join("ks_by_depth.csv"), |buf| gof::write_csv(&rows, buf))
            .map_err(io)?;
        Ok(())
    })?;

    clock.run("averages", || {
        let points =
            average_over_selections(&stacks, &fits, config.selection_repeats, config.seed);
        report::write_file(&out.join("params_by_depth.csv"), |buf| {
            report::write_params_by_depth_csv(&points, buf)
        })
        .map_err(io)?;
        Ok(())
    })?;

    let scan = clock.run("scan", || {
        let per_patient = selection_fits(&stacks, &fits, &selection);
        let labels: BTreeMap<String, ClassLabel> =
            stacks.iter().map(|s| (s.patient.clone(), s.label)).collect();
        let scan_cfg = ScanConfig {
            pfa: config.pfa,
            bayes: BayesConfig {
                pfa: config.pfa,
                squared_numerator: config.bayes_squared_numerator,
            },
        };
        let report: ScanReport = scan_depths(&per_patient, &labels, &scan_cfg);
        report::write_file(&out.join("scan.csv"), |buf| {
            crate::hypothesis::write_csv(&report.rows, buf)
        })
        .map_err(io)?;
        report::write_json(&out.join("scan_summary.json"), &report).map_err(io)?;
        Ok(report)
    })?;

    let classifications = clock.run("classify", || {
        let mut reports = BTreeMap::new();
        for parameter in [ParamName::Beta, ParamName::Rho] {
            let features =
                build_features(&stacks, &fits, parameter, config.depth_window_um)
                    .map_err(|e| e.to_string())?;
            let outcome: LooOutcome =
                leave_one_out(&features, config.svm_c, config.loo_repeats, config.seed)
                    .map_err(|e| e.to_string())?;
            let report = ClassificationReport::from_outcome(parameter, &outcome);
            report::write_json(
                &out.join(format!("classification_{parameter}.json")),
                &report,
            )
            .map_err(io)?;
            report::write_file(
                &out.join(format!("classification_{parameter}.csv")),
                |buf| crate::classify::write_confusion_csv(parameter.label(), &outcome, buf),
            )
            .map_err(io)?;
            reports.insert(parameter.label().to_string(), report);
        }
        Ok(reports)
    })?;

    Ok(RunSummary {
        out_dir: out.clone(),
        n_patients: stacks.len(),
        n_images: stacks.iter().map(|s| s.images().count()).sum(),
        n_fit_failures: failures.len(),
        t_bf_agreement: scan.t_bf_agreement,
        classifications,
        stages: Vec::new(),
    })
}
