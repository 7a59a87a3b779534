//! Closed polylines and marching-squares contour extraction.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::grid::Mask;
use crate::{Error, Result};

/// Ordered `(x, y)` vertices in pixel coordinates: `x` is the column, `y` the
/// row, both 0-based with integer values at pixel centers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContourPolyline {
    points: Vec<(f64, f64)>,
    closed: bool,
}

impl ContourPolyline {
    /// Closed contours need at least three vertices; consecutive vertices
    /// (including last→first when closed) must differ.
    pub fn new(points: Vec<(f64, f64)>, closed: bool) -> Result<Self> {
        if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(Error::DegenerateContour("non-finite vertex".into()));
        }
        let min = if closed { 3 } else { 2 };
        if points.len() < min {
            return Err(Error::DegenerateContour(format!("{} points, need at least {min}", points.len())));
        }
        let wraps = closed.then(|| (points[points.len() - 1], points[0]));
        if let Some(i) = points.windows(2).position(|w| w[0] == w[1]) {
            return Err(Error::DegenerateContour(format!("vertices {i} and {} coincide", i + 1)));
        }
        if let Some((a, b)) = wraps {
            if a == b {
                return Err(Error::DegenerateContour("first and last vertex coincide".into()));
            }
        }
        Ok(Self { points, closed })
    }

    pub fn closed(points: Vec<(f64, f64)>) -> Result<Self> {
        Self::new(points, true)
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Segments in order, including the closing one for closed contours.
    pub fn segments(&self) -> impl Iterator<Item = ((f64, f64), (f64, f64))> + '_ {
        let n = self.points.len();
        let count = if self.closed { n } else { n - 1 };
        (0..count).map(move |i| (self.points[i], self.points[(i + 1) % n]))
    }

    pub fn length(&self) -> f64 {
        self.segments().map(|(a, b)| (b.0 - a.0).hypot(b.1 - a.1)).sum()
    }

    /// Shoelace area; positive for counter-clockwise order in raw `(x, y)`.
    pub fn signed_area(&self) -> f64 {
        signed_area(&self.points)
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self { points: self.points.iter().map(|(x, y)| (x + dx, y + dy)).collect(), closed: self.closed }
    }
}

fn signed_area(points: &[(f64, f64)]) -> f64 {
    let n = points.len();
    0.5 * (0..n)
        .map(|i| {
            let (a, b) = (points[i], points[(i + 1) % n]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum::<f64>()
}

// Edge midpoints and corners of a marching-squares cell, in doubled integer
// coordinates so that keys are exact.
#[derive(Clone, Copy)]
enum Edge {
    Top,
    Right,
    Bottom,
    Left,
}

#[derive(Clone, Copy)]
enum Corner {
    TopLeft,
    TopRight,
    BottomRight,
    BottomLeft,
}

type Key = (i64, i64);

fn edge_point(e: Edge, r: i64, c: i64) -> Key {
    match e {
        Edge::Top => (2 * c + 1, 2 * r),
        Edge::Right => (2 * c + 2, 2 * r + 1),
        Edge::Bottom => (2 * c + 1, 2 * r + 2),
        Edge::Left => (2 * c, 2 * r + 1),
    }
}

fn corner_point(k: Corner, r: i64, c: i64) -> Key {
    match k {
        Corner::TopLeft => (2 * c, 2 * r),
        Corner::TopRight => (2 * c + 2, 2 * r),
        Corner::BottomRight => (2 * c + 2, 2 * r + 2),
        Corner::BottomLeft => (2 * c, 2 * r + 2),
    }
}

/// Unoriented segments of a cell plus the corner used to orient each one.
/// Diagonal (saddle) configurations keep the two foreground corners apart.
fn cell_segments(tl: bool, tr: bool, br: bool, bl: bool) -> Vec<(Edge, Edge, Corner)> {
    use Corner::*;
    use Edge::*;
    let code = (tl as u8) << 3 | (tr as u8) << 2 | (br as u8) << 1 | bl as u8;
    match code {
        0b0000 | 0b1111 => vec![],
        0b1000 | 0b0111 => vec![(Left, Top, TopLeft)],
        0b0100 | 0b1011 => vec![(Top, Right, TopRight)],
        0b0010 | 0b1101 => vec![(Right, Bottom, BottomRight)],
        0b0001 | 0b1110 => vec![(Bottom, Left, BottomLeft)],
        0b1100 | 0b0011 => vec![(Left, Right, TopLeft)],
        0b0110 | 0b1001 => vec![(Top, Bottom, TopLeft)],
        0b1010 => vec![(Left, Top, TopLeft), (Right, Bottom, BottomRight)],
        0b0101 => vec![(Top, Right, TopRight), (Bottom, Left, BottomLeft)],
        _ => unreachable!(),
    }
}

/// All closed iso-contours at level 0.5 of a binary mask sampled at pixel
/// centers. Outer boundaries come out counter-clockwise (positive area),
/// holes clockwise.
pub fn extract_all_contours(mask: &Mask) -> Vec<ContourPolyline> {
    let (rows, cols) = (mask.rows() as i64, mask.cols() as i64);
    let at = |r: i64, c: i64| r >= 0 && c >= 0 && r < rows && c < cols && *mask.get(r as usize, c as usize) != 0;

    let mut next: HashMap<Key, Key> = HashMap::new();
    for r in -1..rows {
        for c in -1..cols {
            let (tl, tr, br, bl) = (at(r, c), at(r, c + 1), at(r + 1, c + 1), at(r + 1, c));
            for (e1, e2, k) in cell_segments(tl, tr, br, bl) {
                let (p, q) = (edge_point(e1, r, c), edge_point(e2, r, c));
                let kp = corner_point(k, r, c);
                let cross = (q.0 - p.0) * (kp.1 - p.1) - (q.1 - p.1) * (kp.0 - p.0);
                let fg = match k {
                    Corner::TopLeft => tl,
                    Corner::TopRight => tr,
                    Corner::BottomRight => br,
                    Corner::BottomLeft => bl,
                };
                let (p, q) = if (cross > 0) == fg { (p, q) } else { (q, p) };
                next.insert(p, q);
            }
        }
    }

    let mut starts: Vec<Key> = next.keys().copied().collect();
    starts.sort_unstable_by_key(|&(x, y)| (y, x));
    let mut loops = Vec::new();
    for start in starts {
        let Some(mut cur) = next.remove(&start) else { continue };
        let mut pts = vec![start];
        while cur != start {
            pts.push(cur);
            cur = next.remove(&cur).expect("marching squares segments always close");
        }
        let pts: Vec<(f64, f64)> = pts.into_iter().map(|(x, y)| (x as f64 / 2.0, y as f64 / 2.0)).collect();
        loops.push(ContourPolyline { points: pts, closed: true });
    }
    loops
}

/// Outer contour of the largest foreground component (by enclosed area).
pub fn extract_contour(mask: &Mask) -> Result<ContourPolyline> {
    extract_all_contours(mask)
        .into_iter()
        .filter(|c| c.signed_area() > 0.0)
        .max_by(|a, b| a.signed_area().total_cmp(&b.signed_area()))
        .ok_or(Error::NoContour)
}
