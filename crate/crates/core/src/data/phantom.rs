//! Synthetic short-axis slices: a bright elliptical blood pool inside a
//! myocardial ring over a noisy background.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::CineSample;
use crate::{Error, Grid, Result};

/// Pixel spacing of every phantom slice, in mm.
pub const PHANTOM_SPACING_MM: f64 = 1.3;

/// Shape parameters of one phantom, in pixel units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhantomGeometry {
    /// Cavity centre `(x, y)`.
    pub center: (f64, f64),
    /// Cavity semi-axes.
    pub semi_axes: (f64, f64),
    /// Rotation of the first semi-axis, radians.
    pub angle: f64,
    /// Myocardial wall thickness.
    pub wall: f64,
    pub blood_level: f64,
    pub wall_level: f64,
    pub background_level: f64,
    /// Intensity change per pixel along `(x, y)`.
    pub ramp: (f64, f64),
    pub noise_std: f64,
}

impl PhantomGeometry {
    /// Geometry of phantom `index` in the dataset drawn with `seed`.
    pub fn draw(size: usize, seed: u64, index: usize) -> Self {
        let mut rng = crate::rng::stream(seed, &[index as u64, 0]);
        let s = size as f64;
        let half = (s - 1.0) / 2.0;
        let jitter = s / 8.0;
        let a = rng.random_range(0.12..0.2) * s;
        let b = a * rng.random_range(0.7..1.0);
        let ramp_mag = rng.random_range(0.0..0.1) / s;
        let ramp_dir: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        Self {
            center: (half + rng.random_range(-jitter..=jitter), half + rng.random_range(-jitter..=jitter)),
            semi_axes: (a, b),
            angle: rng.random_range(0.0..std::f64::consts::PI),
            wall: rng.random_range(0.05..0.09) * s,
            blood_level: rng.random_range(0.8..1.0),
            wall_level: rng.random_range(0.35..0.5),
            background_level: rng.random_range(0.1..0.2),
            ramp: (ramp_mag * ramp_dir.cos(), ramp_mag * ramp_dir.sin()),
            noise_std: rng.random_range(0.03..0.06),
        }
    }

    /// Elliptic radius of `(x, y)` for an ellipse grown by `grow` pixels; `≤ 1` is inside.
    fn radius(&self, x: f64, y: f64, grow: f64) -> f64 {
        let (dx, dy) = (x - self.center.0, y - self.center.1);
        let (c, s) = (self.angle.cos(), self.angle.sin());
        let u = (dx * c + dy * s) / (self.semi_axes.0 + grow);
        let v = (-dx * s + dy * c) / (self.semi_axes.1 + grow);
        (u * u + v * v).sqrt()
    }

    pub fn in_cavity(&self, x: f64, y: f64) -> bool {
        self.radius(x, y, 0.0) <= 1.0
    }

    pub fn in_wall(&self, x: f64, y: f64) -> bool {
        !self.in_cavity(x, y) && self.radius(x, y, self.wall) <= 1.0
    }

    pub fn cavity_area(&self) -> f64 {
        std::f64::consts::PI * self.semi_axes.0 * self.semi_axes.1
    }

    /// Ramanujan's approximation of the cavity perimeter.
    pub fn cavity_perimeter(&self) -> f64 {
        let (a, b) = self.semi_axes;
        std::f64::consts::PI * (3.0 * (a + b) - ((3.0 * a + b) * (a + 3.0 * b)).sqrt())
    }
}

/// `count` phantoms of `size × size` pixels, one slice per case. The image is
/// min-max normalized to `[0, 1]`; the mask is the blood pool.
pub fn synth_phantom(count: usize, size: usize, seed: u64) -> Result<Vec<CineSample>> {
    if size < 32 {
        return Err(Error::InvalidSize(format!("phantom size must be at least 32, got {size}")));
    }
    (0..count)
        .map(|i| {
            let g = PhantomGeometry::draw(size, seed, i);
            let mut rng = crate::rng::stream(seed, &[i as u64, 1]);
            let noise = Normal::new(0.0, g.noise_std).expect("positive std");
            let image = Grid::from_fn(size, size, |r, c| {
                let (x, y) = (c as f64, r as f64);
                let base = if g.in_cavity(x, y) {
                    g.blood_level
                } else if g.in_wall(x, y) {
                    g.wall_level
                } else {
                    g.background_level
                };
                base + g.ramp.0 * x + g.ramp.1 * y + noise.sample(&mut rng)
            });
            let mask = Grid::from_fn(size, size, |r, c| g.in_cavity(c as f64, r as f64) as u8);
            CineSample::new(
                image.min_max_normalized(),
                mask,
                (PHANTOM_SPACING_MM, PHANTOM_SPACING_MM),
                format!("phantom{i:04}"),
                "0",
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn contract() {
        let set = synth_phantom(32, 64, 1).unwrap();
        assert_eq!(set.len(), 32);
        for s in &set {
            assert!(s.mask.count_foreground() > 0);
            assert_eq!(s.image.dims(), (64, 64));
            assert_eq!(s.spacing_mm, (1.3, 1.3));
            assert!(s.image.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
        }
        assert!(synth_phantom(1, 31, 1).is_err());
    }

    #[test]
    fn mask_area_near_ellipse_area() {
        for (i, s) in synth_phantom(16, 64, 5).unwrap().iter().enumerate() {
            let g = PhantomGeometry::draw(64, 5, i);
            let area = s.mask.count_foreground() as f64;
            assert!((area - g.cavity_area()).abs() <= g.cavity_perimeter(), "{area} vs {}", g.cavity_area());
        }
    }

    #[test]
    fn deterministic() {
        assert_eq!(synth_phantom(4, 32, 9).unwrap(), synth_phantom(4, 32, 9).unwrap());
        assert_ne!(synth_phantom(1, 32, 9).unwrap(), synth_phantom(1, 32, 10).unwrap());
    }

    #[test]
    fn cavity_is_brightest_on_average() {
        let s = &synth_phantom(1, 64, 2).unwrap()[0];
        let (mut fg, mut bg) = (Vec::new(), Vec::new());
        for (v, m) in s.image.as_slice().iter().zip(s.mask.as_slice()) {
            if *m == 1 { fg.push(*v) } else { bg.push(*v) }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean(&fg) > mean(&bg) + 0.3);
    }
}
