//! Row-major 2-D grids for images and masks.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Self { rows, cols, data: vec![value; rows * cols] }
    }
}

impl<T> Grid<T> {
    /// Returns `None` when `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Option<Self> {
        (data.len() == rows * cols).then_some(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> &T {
        &self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid { rows: self.rows, cols: self.cols, data: self.data.iter().map(f).collect() }
    }
}

impl Grid<f64> {
    /// Bilinear sample at fractional `(r, c)`; out-of-range coordinates are
    /// clamped onto the border.
    pub fn sample_bilinear(&self, r: f64, c: f64) -> f64 {
        let r = r.clamp(0.0, (self.rows - 1) as f64);
        let c = c.clamp(0.0, (self.cols - 1) as f64);
        let r0 = r.floor() as usize;
        let c0 = c.floor() as usize;
        let r1 = (r0 + 1).min(self.rows - 1);
        let c1 = (c0 + 1).min(self.cols - 1);
        let fr = r - r0 as f64;
        let fc = c - c0 as f64;
        let top = *self.get(r0, c0) * (1.0 - fc) + *self.get(r0, c1) * fc;
        let bottom = *self.get(r1, c0) * (1.0 - fc) + *self.get(r1, c1) * fc;
        top * (1.0 - fr) + bottom * fr
    }

    /// Rescale to `[0, 1]`; a constant grid maps to zeros.
    pub fn min_max_normalized(&self) -> Grid<f64> {
        let (lo, hi) = self
            .data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let span = hi - lo;
        if !(span > 0.0) {
            return self.map(|_| 0.0);
        }
        self.map(|&v| (v - lo) / span)
    }
}

impl<T: Copy> Grid<T> {
    /// Nearest-neighbour sample at fractional `(r, c)`, clamped onto the border.
    pub fn sample_nearest(&self, r: f64, c: f64) -> T {
        let r = r.round().clamp(0.0, (self.rows - 1) as f64) as usize;
        let c = c.round().clamp(0.0, (self.cols - 1) as f64) as usize;
        *self.get(r, c)
    }
}

/// Binary mask: 0 = background, 1 = foreground.
pub type Mask = Grid<u8>;

impl Grid<u8> {
    pub fn count_foreground(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v <= 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_hits_grid_points_exactly() {
        let g = Grid::from_fn(3, 4, |r, c| (r * 10 + c) as f64 * 0.37 - 1.1);
        for r in 0..3 {
            for c in 0..4 {
                assert_eq!(g.sample_bilinear(r as f64, c as f64), *g.get(r, c));
            }
        }
        assert!((g.sample_bilinear(0.5, 0.5) - (g.get(0, 0) + g.get(1, 1) + g.get(0, 1) + g.get(1, 0)) / 4.0).abs() < 1e-12);
    }

    #[test]
    fn border_is_replicated() {
        let g = Grid::from_fn(2, 2, |r, c| (r * 2 + c) as f64);
        assert_eq!(g.sample_bilinear(-3.0, -3.0), 0.0);
        assert_eq!(g.sample_bilinear(5.0, 5.0), 3.0);
        assert_eq!(g.sample_nearest(-1.0, 9.0), 1.0);
    }
}
