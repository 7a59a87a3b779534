//! Data ingestion: DICOM slices, contour files, patient-wise splits, synthetic
//! phantoms and the canonical on-disk sample format.
//!
//! Contour coordinates are 0-based pixel coordinates with `x` = column and
//! `y` = row. Pixel `(i, j)` has its centre at `(x, y) = (j, i)`.

pub mod dicom;
mod contour_file;
mod phantom;
mod split;
pub mod store;

pub use contour_file::{parse_contour, rasterize, serialize_contour};
pub use phantom::{synth_phantom, PhantomGeometry};
pub use split::{split_patients, DatasetSplit, Subset};

use crate::grid::Mask;
use crate::metrics::ContourPolyline;
use crate::{Error, Grid, Result};

/// Plausible in-plane MRI pixel spacing; values outside only trigger a warning.
pub const PLAUSIBLE_SPACING_MM: (f64, f64) = (0.1, 10.0);

/// One short-axis slice with its left-ventricle mask.
#[derive(Clone, Debug, PartialEq)]
pub struct CineSample {
    pub image: Grid<f64>,
    pub mask: Mask,
    /// `(sx, sy)`: column spacing, row spacing.
    pub spacing_mm: (f64, f64),
    pub case_id: String,
    pub slice_id: String,
    /// Expert contour when the sample came from a contour file.
    pub contour: Option<ContourPolyline>,
}

impl CineSample {
    pub fn new(
        image: Grid<f64>,
        mask: Mask,
        spacing_mm: (f64, f64),
        case_id: impl Into<String>,
        slice_id: impl Into<String>,
    ) -> Result<Self> {
        if image.dims() != mask.dims() {
            return Err(Error::InvalidSize(format!(
                "image is {:?} but mask is {:?}",
                image.dims(),
                mask.dims()
            )));
        }
        if !mask.is_binary() {
            return Err(Error::InvalidConfig("mask values must be 0 or 1".into()));
        }
        let (sx, sy) = spacing_mm;
        if !(sx > 0.0 && sy > 0.0 && sx.is_finite() && sy.is_finite()) {
            return Err(Error::InvalidConfig(format!("pixel spacing must be positive, got {spacing_mm:?}")));
        }
        let (lo, hi) = PLAUSIBLE_SPACING_MM;
        if !(lo..=hi).contains(&sx) || !(lo..=hi).contains(&sy) {
            log::warn!("pixel spacing {spacing_mm:?} mm is outside the plausible MRI range [{lo}, {hi}]");
        }
        Ok(Self { image, mask, spacing_mm, case_id: case_id.into(), slice_id: slice_id.into(), contour: None })
    }

    pub fn with_contour(mut self, contour: ContourPolyline) -> Self {
        self.contour = Some(contour);
        self
    }

    pub fn rows(&self) -> usize {
        self.image.rows()
    }

    pub fn cols(&self) -> usize {
        self.image.cols()
    }
}

/// Ids of the distinct cases in `samples`, in first-seen order.
pub fn case_ids(samples: &[CineSample]) -> Vec<String> {
    let mut seen = std::collections::BTreeSet::new();
    samples.iter().filter(|s| seen.insert(s.case_id.clone())).map(|s| s.case_id.clone()).collect()
}
