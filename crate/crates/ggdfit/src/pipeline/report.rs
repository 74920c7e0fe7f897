//! Report files written by a pipeline run. Every writer is deterministic
//! given its inputs; wall-clock timings go only into the manifest.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classify::LooOutcome;
use crate::cohort::{ClassLabel, Depth, ImageKey};
use crate::estimation::FitResult;
use crate::ggd::ParamName;

use super::{FitFailure, RunConfig};

/// `patient,acquisition,depth_um,gamma,beta,rho,log_likelihood,iterations,converged`
pub fn write_fits_csv<W: Write>(
    fits: &BTreeMap<ImageKey, FitResult<f64>>,
    out: &mut W,
) -> std::io::Result<()> {
    writeln!(
        out,
        "patient,acquisition,depth_um,gamma,beta,rho,log_likelihood,iterations,converged"
    )?;
    for (key, fit) in fits {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            key.patient,
            key.acquisition,
            key.depth,
            fit.params.gamma,
            fit.params.beta,
            fit.params.rho,
            fit.log_likelihood,
            fit.iterations,
            fit.converged
        )?;
    }
    Ok(())
}

/// `patient,acquisition,depth_um,reason`
pub fn write_failures_csv<W: Write>(
    failures: &[FitFailure],
    out: &mut W,
) -> std::io::Result<()> {
    writeln!(out, "patient,acquisition,depth_um,reason")?;
    for f in failures {
        writeln!(
            out,
            "{},{},{},{}",
            f.key.patient,
            f.key.acquisition,
            f.key.depth,
            f.reason.replace(',', ";")
        )?;
    }
    Ok(())
}

/// One point of the per-depth average curves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthCurvePoint {
    pub label: ClassLabel,
    pub parameter: ParamName,
    pub depth: Depth,
    pub mean: f64,
    pub std: f64,
}

/// `class,parameter,depth_um,mean,std`
pub fn write_params_by_depth_csv<W: Write>(
    points: &[DepthCurvePoint],
    out: &mut W,
) -> std::io::Result<()> {
    writeln!(out, "class,parameter,depth_um,mean,std")?;
    for p in points {
        writeln!(out, "{},{},{},{},{}", p.label, p.parameter, p.depth, p.mean, p.std)?;
    }
    Ok(())
}

/// Classification report object: averaged confusion counts plus the four
/// table-rounded percentages (null when undefined).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub parameter: ParamName,
    pub tp: f64,
    #[serde(rename = "fn")]
    pub fn_: f64,
    pub fp: f64,
    pub tn: f64,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub precision: Option<f64>,
    pub accuracy: Option<f64>,
}

impl ClassificationReport {
    pub fn from_outcome(parameter: ParamName, outcome: &LooOutcome) -> Self {
        let cm = &outcome.confusion;
        let m = outcome.metrics.rounded();
        ClassificationReport {
            parameter,
            tp: cm.true_positive,
            fn_: cm.false_negative,
            fp: cm.false_positive,
            tn: cm.true_negative,
            sensitivity: m.sensitivity,
            specificity: m.specificity,
            precision: m.precision,
            accuracy: m.accuracy,
        }
    }
}

/// Wall-clock and status of one pipeline stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageStatus {
    pub name: String,
    pub status: String,
    /// Wall-clock seconds; the only non-deterministic report field, which
    /// is why the manifest is excluded from byte-level reproducibility.
    pub seconds: f64,
}

/// Run manifest tying one report bundle together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub crate_version: String,
    pub seed: u64,
    pub config: RunConfig,
    pub stages: Vec<StageStatus>,
    /// Set when a stage aborted the run.
    pub failed_stage: Option<String>,
    /// The KS summary and the depth scan use the first seeded stack
    /// selection rather than both acquisitions.
    pub selection_note: String,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    let mut json = serde_json::to_string_pretty(value)?;
    json.push('\n');
    fs::write(path, json)
}

pub fn write_file<F>(path: &Path, f: F) -> std::io::Result<PathBuf>
where
    F: FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
{
    let mut buf = Vec::new();
    f(&mut buf)?;
    fs::write(path, buf)?;
    Ok(path.to_path_buf())
}
