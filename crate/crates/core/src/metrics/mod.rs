//! Segmentation metrics: Dice, sensitivity and average perpendicular
//! distance (APD), plus per-slice records and their aggregate report.

mod contour;
mod report;

pub use contour::{extract_all_contours, extract_contour, ContourPolyline};
pub use report::{aggregate, MetricsReport, SliceRecord};

use crate::grid::Mask;
use crate::{Error, Result};

fn check_shapes(a: &Mask, b: &Mask) -> Result<()> {
    if a.dims() != b.dims() {
        let s = |m: &Mask| crate::Shape::new(1, 1, m.rows(), m.cols());
        return Err(Error::ShapeMismatch { left: s(a), right: s(b) });
    }
    Ok(())
}

/// `(|P ∩ T|, |P|, |T|)`.
fn overlap(pred: &Mask, truth: &Mask) -> (usize, usize, usize) {
    pred.as_slice().iter().zip(truth.as_slice()).fold((0, 0, 0), |(i, p, t), (&a, &b)| {
        let (a, b) = (a != 0, b != 0);
        (i + (a && b) as usize, p + a as usize, t + b as usize)
    })
}

/// `2|P ∩ T| / (|P| + |T|)`; two empty masks agree perfectly (1.0).
pub fn dice(pred: &Mask, truth: &Mask) -> Result<f64> {
    check_shapes(pred, truth)?;
    let (inter, p, t) = overlap(pred, truth);
    if p + t == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (p + t) as f64)
}

/// `TP / (TP + FN)`; undefined (`None`) when the truth mask is empty.
pub fn sensitivity(pred: &Mask, truth: &Mask) -> Result<Option<f64>> {
    check_shapes(pred, truth)?;
    let (inter, _, t) = overlap(pred, truth);
    Ok((t > 0).then(|| inter as f64 / t as f64))
}

/// Which contour(s) the distances are measured from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ApdMode {
    /// Mean distance from automatic vertices to the manual polyline.
    #[default]
    Directed,
    /// Mean of both directed distances.
    Symmetric,
}

/// Distance from `p` to the segment `a–b`.
pub fn point_segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 { (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    (p.0 - (a.0 + t * dx)).hypot(p.1 - (a.1 + t * dy))
}

fn directed(from: &ContourPolyline, to: &ContourPolyline, (sx, sy): (f64, f64)) -> f64 {
    let scale = |p: (f64, f64)| (p.0 * sx, p.1 * sy);
    let segs: Vec<_> = to.segments().map(|(a, b)| (scale(a), scale(b))).collect();
    let total: f64 = from
        .points()
        .iter()
        .map(|&p| {
            let p = scale(p);
            segs.iter().map(|&(a, b)| point_segment_distance(p, a, b)).fold(f64::INFINITY, f64::min)
        })
        .sum();
    total / from.len() as f64
}

/// Average perpendicular distance in millimetres. `spacing_mm` is
/// `(column spacing, row spacing)`, i.e. `(sx, sy)`.
pub fn apd(auto: &ContourPolyline, manual: &ContourPolyline, spacing_mm: (f64, f64), mode: ApdMode) -> Result<f64> {
    for c in [auto, manual] {
        if c.len() < 3 {
            return Err(Error::DegenerateContour(format!("{} points, need at least 3", c.len())));
        }
    }
    if !(spacing_mm.0 > 0.0 && spacing_mm.1 > 0.0) {
        return Err(Error::InvalidConfig(format!("pixel spacing must be positive, got {spacing_mm:?}")));
    }
    let forward = directed(auto, manual, spacing_mm);
    Ok(match mode {
        ApdMode::Directed => forward,
        ApdMode::Symmetric => 0.5 * (forward + directed(manual, auto, spacing_mm)),
    })
}

/// Dice, sensitivity and APD of one slice.
///
/// APD compares the contour of the largest predicted component against
/// `truth_contour` when given, otherwise against the contour of `truth`. It is
/// absent when either mask is empty.
pub fn evaluate_slice(
    case: &str,
    slice: &str,
    pred: &Mask,
    truth: &Mask,
    truth_contour: Option<&ContourPolyline>,
    spacing_mm: (f64, f64),
    mode: ApdMode,
) -> Result<SliceRecord> {
    let d = dice(pred, truth)?;
    let s = sensitivity(pred, truth)?;
    let empty_pred = pred.count_foreground() == 0;
    let manual = match truth_contour {
        Some(c) => Some(c.clone()),
        None if truth.count_foreground() > 0 => Some(extract_contour(truth)?),
        None => None,
    };
    let apd_mm = match (empty_pred, manual) {
        (false, Some(manual)) => Some(apd(&extract_contour(pred)?, &manual, spacing_mm, mode)?),
        _ => None,
    };
    Ok(SliceRecord { case: case.into(), slice: slice.into(), dice: d, sensitivity: s, apd_mm, empty_pred })
}
