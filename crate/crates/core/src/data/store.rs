//! Canonical on-disk samples and DICOM import.
//!
//! Each sample `<id>` is stored as
//! - `<id>.raw`: rows × cols u16 little endian, intensity `v · 65535` for `v ∈ [0, 1]`;
//! - `<id>.mask.raw`: one byte per pixel, 0 or 1;
//! - `<id>.json`: `{rows, cols, spacing_mm: [sy, sx], case_id, slice_id}`;
//! - `<id>.contour.txt` (optional): the expert contour.
//!
//! A dataset directory may also hold `split.json` with a [`DatasetSplit`].

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::dicom::read_dicom;
use super::{parse_contour, rasterize, serialize_contour, split_patients, CineSample, DatasetSplit};
use crate::{Error, Grid, Result};

pub const SPLIT_FILE: &str = "split.json";

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    rows: usize,
    cols: usize,
    /// `[row spacing, column spacing]`.
    spacing_mm: [f64; 2],
    case_id: String,
    slice_id: String,
}

fn format_err(path: &Path, message: impl Into<String>) -> Error {
    Error::SampleFormat { path: path.display().to_string(), message: message.into() }
}

/// File stem for a sample: `<case>_<slice>` with path-unsafe characters replaced.
pub fn sample_id(sample: &CineSample) -> String {
    format!("{}_{}", sample.case_id, sample.slice_id)
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect()
}

pub fn save_sample(dir: &Path, sample: &CineSample) -> Result<String> {
    let id = sample_id(sample);
    let raw: Vec<u8> = sample
        .image
        .as_slice()
        .iter()
        .flat_map(|&v| ((v.clamp(0.0, 1.0) * 65535.0).round() as u16).to_le_bytes())
        .collect();
    fs::write(dir.join(format!("{id}.raw")), raw)?;
    fs::write(dir.join(format!("{id}.mask.raw")), sample.mask.as_slice())?;
    let (sx, sy) = sample.spacing_mm;
    let sidecar = Sidecar {
        rows: sample.rows(),
        cols: sample.cols(),
        spacing_mm: [sy, sx],
        case_id: sample.case_id.clone(),
        slice_id: sample.slice_id.clone(),
    };
    fs::write(dir.join(format!("{id}.json")), serde_json::to_string_pretty(&sidecar)?)?;
    if let Some(c) = &sample.contour {
        fs::write(dir.join(format!("{id}.contour.txt")), serialize_contour(c))?;
    }
    Ok(id)
}

pub fn load_sample(dir: &Path, id: &str) -> Result<CineSample> {
    let json_path = dir.join(format!("{id}.json"));
    let sidecar: Sidecar = serde_json::from_str(&fs::read_to_string(&json_path)?)
        .map_err(|e| format_err(&json_path, e.to_string()))?;
    let n = sidecar.rows * sidecar.cols;

    let raw_path = dir.join(format!("{id}.raw"));
    let raw = fs::read(&raw_path)?;
    if raw.len() != 2 * n {
        return Err(format_err(&raw_path, format!("expected {} bytes, found {}", 2 * n, raw.len())));
    }
    let pixels = raw.chunks_exact(2).map(|b| u16::from_le_bytes([b[0], b[1]]) as f64 / 65535.0).collect();

    let mask_path = dir.join(format!("{id}.mask.raw"));
    let mask = fs::read(&mask_path)?;
    if mask.len() != n {
        return Err(format_err(&mask_path, format!("expected {n} bytes, found {}", mask.len())));
    }
    if mask.iter().any(|&v| v > 1) {
        return Err(format_err(&mask_path, "mask values must be 0 or 1"));
    }

    let image = Grid::from_vec(sidecar.rows, sidecar.cols, pixels).expect("length checked");
    let mask = Grid::from_vec(sidecar.rows, sidecar.cols, mask).expect("length checked");
    let [sy, sx] = sidecar.spacing_mm;
    let mut sample = CineSample::new(image, mask, (sx, sy), sidecar.case_id, sidecar.slice_id)?;
    let contour_path = dir.join(format!("{id}.contour.txt"));
    if contour_path.exists() {
        sample.contour = Some(parse_contour(&fs::read_to_string(contour_path)?)?);
    }
    Ok(sample)
}

/// Write every sample and, when given, the split.
pub fn save_dataset(dir: &Path, samples: &[CineSample], split: Option<&DatasetSplit>) -> Result<()> {
    fs::create_dir_all(dir)?;
    for s in samples {
        save_sample(dir, s)?;
    }
    if let Some(split) = split {
        fs::write(dir.join(SPLIT_FILE), serde_json::to_string_pretty(split)?)?;
    }
    Ok(())
}

/// Load every sample in `dir`, ordered by id.
pub fn load_dataset(dir: &Path) -> Result<Vec<CineSample>> {
    let mut ids: Vec<String> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            let id = name.strip_suffix(".json")?;
            (name != SPLIT_FILE).then(|| id.to_string())
        })
        .collect();
    ids.sort();
    if ids.is_empty() {
        return Err(format_err(dir, "no samples found"));
    }
    ids.iter().map(|id| load_sample(dir, id)).collect()
}

/// The stored split, or an even three-way split of the cases with seed 0.
pub fn load_split(dir: &Path, samples: &[CineSample]) -> Result<DatasetSplit> {
    let path = dir.join(SPLIT_FILE);
    if path.exists() {
        return Ok(serde_json::from_str(&fs::read_to_string(path)?)?);
    }
    split_patients(&super::case_ids(samples), (1, 1, 1), 0)
}

fn files_with_suffix(dir: &Path, suffix: &str, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            files_with_suffix(&path, suffix, out)?;
        } else if path.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with(suffix)) {
            out.push(path);
        }
    }
    Ok(())
}

/// Pair every `*.dcm` under `dicom_dir` with an inner (endocardial) contour
/// file `<stem>-icontour*.txt` under `contour_dir`. Slices without a contour
/// are skipped. The case id is the DICOM PatientID, or the parent directory
/// name when absent.
pub fn import_dicom(dicom_dir: &Path, contour_dir: &Path) -> Result<Vec<CineSample>> {
    let mut images = Vec::new();
    files_with_suffix(dicom_dir, ".dcm", &mut images)?;
    let mut contours = Vec::new();
    files_with_suffix(contour_dir, ".txt", &mut contours)?;
    images.sort();

    let mut samples = Vec::new();
    for path in images {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let prefix = format!("{stem}-icontour");
        let Some(contour_path) = contours
            .iter()
            .find(|c| c.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with(&prefix)))
        else {
            log::debug!("no inner contour for {}", path.display());
            continue;
        };
        let img = read_dicom(&fs::read(&path)?)?;
        let contour = parse_contour(&fs::read_to_string(contour_path)?)?;
        let (rows, cols) = img.pixels.dims();
        let mask = rasterize(&contour, rows, cols)?;
        let case_id = img.metadata.get("PatientID").filter(|s| !s.is_empty()).cloned().unwrap_or_else(|| {
            path.parent().and_then(|p| p.file_name()).and_then(|n| n.to_str()).unwrap_or("case").to_string()
        });
        samples.push(
            CineSample::new(img.pixels.min_max_normalized(), mask, img.spacing_mm, case_id, stem)?.with_contour(contour),
        );
    }
    if samples.is_empty() {
        return Err(Error::Empty("no DICOM slice with a matching contour file"));
    }
    Ok(samples)
}
