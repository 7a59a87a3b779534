//! Contour text files (`x y` per line) and polygon rasterization.

use crate::grid::Mask;
use crate::metrics::{point_segment_distance, ContourPolyline};
use crate::{Error, Grid, Result};

/// Parse one `x y` pair per non-empty line into a closed polyline.
///
/// Consecutive repeated points and a closing point equal to the first are
/// dropped.
pub fn parse_contour(text: &str) -> Result<ContourPolyline> {
    let mut points: Vec<(f64, f64)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| Error::ContourParse { line: i + 1, message };
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [x, y] = fields[..] else {
            return Err(err(format!("expected two numbers, found {} fields", fields.len())));
        };
        let parse = |s: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(format!("{s:?} is not a finite number")))
        };
        let p = (parse(x)?, parse(y)?);
        if points.last() != Some(&p) {
            points.push(p);
        }
    }
    if points.len() > 1 && points.first() == points.last() {
        points.pop();
    }
    ContourPolyline::closed(points)
}

/// Inverse of [`parse_contour`]: `x y\n` per vertex, shortest exact decimal.
pub fn serialize_contour(contour: &ContourPolyline) -> String {
    contour.points().iter().map(|(x, y)| format!("{x} {y}\n")).collect()
}

fn on_boundary(p: (f64, f64), contour: &ContourPolyline) -> bool {
    contour.segments().any(|(a, b)| point_segment_distance(p, a, b) <= 1e-9)
}

fn inside_even_odd(p: (f64, f64), pts: &[(f64, f64)]) -> bool {
    let mut inside = false;
    let mut j = pts.len() - 1;
    for i in 0..pts.len() {
        let (xi, yi) = pts[i];
        let (xj, yj) = pts[j];
        if (yi > p.1) != (yj > p.1) && p.0 < xi + (p.1 - yi) * (xj - xi) / (yj - yi) {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Pixel `(i, j)` is foreground iff its centre `(j, i)` lies inside the
/// polygon (even-odd rule) or on one of its edges.
pub fn rasterize(contour: &ContourPolyline, rows: usize, cols: usize) -> Result<Mask> {
    if !contour.is_closed() {
        return Err(Error::OpenContour);
    }
    let pts = contour.points();
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    Ok(Grid::from_fn(rows, cols, |i, j| {
        let p = (j as f64, i as f64);
        if p.0 < x0 - 1e-9 || p.0 > x1 + 1e-9 || p.1 < y0 - 1e-9 || p.1 > y1 + 1e-9 {
            return 0;
        }
        (on_boundary(p, contour) || inside_even_odd(p, pts)) as u8
    }))
}
