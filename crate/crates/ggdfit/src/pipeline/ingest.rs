//! Loading patient stacks from disk. Expected layout:
//! `root/<patient_id>/<label>/<acq_k>/<depth_um_x100>.(pgm|csv)` with depth
//! file names as fixed-point µm×100 integers (4950.pgm = 49.5 µm).
//! PGM is binary 8- or 16-bit (P5); CSV is one value per line. Files with
//! other extensions are ignored.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::cohort::{ClassLabel, CohortError, Depth, PatientStack};
use crate::ggd::Sample;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unknown label directory {path} (expected healthy, lentigo or unlabeled)")]
    UnknownLabel { path: PathBuf },
    #[error("patient directory {path} must contain exactly one label directory")]
    NotOneLabel { path: PathBuf },
    #[error("file name {path} is not a µm×100 depth integer")]
    BadDepthName { path: PathBuf },
    #[error("malformed PGM {path}: {reason}")]
    MalformedPgm { path: PathBuf, reason: String },
    #[error("malformed CSV {path} line {line}: {reason}")]
    MalformedCsv { path: PathBuf, line: usize, reason: String },
    #[error("image {path} contains no pixels")]
    EmptyImage { path: PathBuf },
    #[error(transparent)]
    Cohort(#[from] CohortError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io { path: path.to_path_buf(), source }
}

/// Reads one intensity image, dispatching on the file extension.
pub fn read_image(path: &Path) -> Result<Sample<f64>, IngestError> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    let values = match ext.as_str() {
        "pgm" => read_pgm(path)?,
        "csv" => read_csv(path)?,
        other => {
            return Err(IngestError::MalformedPgm {
                path: path.to_path_buf(),
                reason: format!("unsupported extension {other:?}"),
            })
        }
    };
    if values.is_empty() {
        return Err(IngestError::EmptyImage { path: path.to_path_buf() });
    }
    Sample::new(values).map_err(|_| IngestError::EmptyImage { path: path.to_path_buf() })
}

/// Binary PGM (P5), 8-bit for maxval < 256, 16-bit big-endian otherwise.
fn read_pgm(path: &Path) -> Result<Vec<f64>, IngestError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let bad = |reason: &str| IngestError::MalformedPgm {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };

    if bytes.len() < 2 || &bytes[0..2] != b"P5" {
        return Err(bad("missing P5 magic"));
    }
    // header tokens: width, height, maxval; '#' starts a comment to EOL
    let mut pos = 2usize;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        while pos < bytes.len() {
            match bytes[pos] {
                b' ' | b'\t' | b'\r' | b'\n' => pos += 1,
                b'#' => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if pos == start {
            return Err(bad("truncated header"));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("digits are ascii");
        *field = text.parse().map_err(|_| bad("header field out of range"))?;
    }
    let [width, height, maxval] = fields;
    if maxval == 0 || maxval > 65535 {
        return Err(bad("maxval must be in 1..=65535"));
    }
    // single whitespace byte separates header and raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(bad("missing raster separator"));
    }
    pos += 1;
    let pixels = width * height;
    let data = &bytes[pos..];
    if maxval < 256 {
        if data.len() != pixels {
            return Err(bad(&format!("expected {pixels} bytes, found {}", data.len())));
        }
        Ok(data.iter().map(|&b| b as f64).collect())
    } else {
        if data.len() != 2 * pixels {
            return Err(bad(&format!("expected {} bytes, found {}", 2 * pixels, data.len())));
        }
        Ok(data
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64)
            .collect())
    }
}

/// One f64 per line; blank lines are not allowed except a trailing newline.
fn read_csv(path: &Path) -> Result<Vec<f64>, IngestError> {
    let mut text = String::new();
    fs::File::open(path)
        .map_err(io_err(path))?
        .read_to_string(&mut text)
        .map_err(io_err(path))?;
    let mut values = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() && idx + 1 == text.lines().count() {
            continue;
        }
        let v: f64 = trimmed.parse().map_err(|_| IngestError::MalformedCsv {
            path: path.to_path_buf(),
            line: idx + 1,
            reason: format!("not a number: {trimmed:?}"),
        })?;
        values.push(v);
    }
    Ok(values)
}

fn sorted_dirs(path: &Path) -> Result<Vec<PathBuf>, IngestError> {
    let mut dirs = Vec::new();
    for entry in fs::read_dir(path).map_err(io_err(path))? {
        let entry = entry.map_err(io_err(path))?;
        if entry.file_type().map_err(io_err(path))?.is_dir() {
            dirs.push(entry.path());
        }
    }
    dirs.sort();
    Ok(dirs)
}

/// Loads every patient stack under `root`. An empty directory yields an
/// empty list; malformed content names the offending path.
pub fn ingest(root: &Path) -> Result<Vec<PatientStack>, IngestError> {
    let mut stacks = Vec::new();
    for patient_dir in sorted_dirs(root)? {
        let patient = patient_dir
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default()
            .to_string();
        let label_dirs = sorted_dirs(&patient_dir)?;
        if label_dirs.len() != 1 {
            return Err(IngestError::NotOneLabel { path: patient_dir });
        }
        let label_dir = &label_dirs[0];
        let label_name = label_dir.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let label = ClassLabel::parse(label_name)
            .ok_or_else(|| IngestError::UnknownLabel { path: label_dir.clone() })?;

        let mut acquisitions = Vec::new();
        for acq_dir in sorted_dirs(label_dir)? {
            let mut images: BTreeMap<Depth, Sample<f64>> = BTreeMap::new();
            let mut files: Vec<PathBuf> = Vec::new();
            for entry in fs::read_dir(&acq_dir).map_err(io_err(&acq_dir))? {
                let entry = entry.map_err(io_err(&acq_dir))?;
                if entry.file_type().map_err(io_err(&acq_dir))?.is_file() {
                    files.push(entry.path());
                }
            }
            files.sort();
            for file in files {
                let ext = file
                    .extension()
                    .and_then(|e| e.to_str())
                    .unwrap_or("")
                    .to_ascii_lowercase();
                if ext != "pgm" && ext != "csv" {
                    continue;
                }
                let stem = file.file_stem().and_then(|s| s.to_str()).unwrap_or("");
                let depth: u32 = stem
                    .parse()
                    .map_err(|_| IngestError::BadDepthName { path: file.clone() })?;
                images.insert(Depth(depth), read_image(&file)?);
            }
            if !images.is_empty() {
                acquisitions.push(images);
            }
        }
        if acquisitions.is_empty() {
            continue;
        }
        stacks.push(PatientStack::new(patient, label, acquisitions)?);
    }
    Ok(stacks)
}
