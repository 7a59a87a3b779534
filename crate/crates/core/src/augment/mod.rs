//! Geometric augmentation of image/mask pairs: elastic deformation, affine
//! transforms and rotation.
//!
//! Every transform inverse-maps output pixels into the input, samples the
//! image bilinearly and the mask by nearest neighbour, and replicates the
//! border for out-of-range coordinates. Grid dimensions never change.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::CineSample;
use crate::grid::Mask;
use crate::rng::StreamRng;
use crate::{Error, Exec, Grid, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineRanges {
    /// Isotropic scale factor range.
    pub scale: (f64, f64),
    /// Horizontal shear factor range (`x += shear · y`).
    pub shear: (f64, f64),
    /// Maximum absolute translation in pixels, per axis.
    pub translate: f64,
}

impl AffineRanges {
    pub fn identity() -> Self {
        Self { scale: (1.0, 1.0), shear: (0.0, 0.0), translate: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Displacement magnitude in pixels.
    pub elastic_alpha: f64,
    /// Gaussian smoothing standard deviation in pixels.
    pub elastic_sigma: f64,
    /// Maximum absolute rotation angle.
    pub rotate_degrees: f64,
    pub affine: AffineRanges,
    pub p_elastic: f64,
    pub p_rotate: f64,
    pub p_affine: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            elastic_alpha: 34.0,
            elastic_sigma: 4.0,
            rotate_degrees: 15.0,
            affine: AffineRanges { scale: (0.9, 1.1), shear: (-0.1, 0.1), translate: 4.0 },
            p_elastic: 0.5,
            p_rotate: 0.5,
            p_affine: 0.5,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    /// A configuration that never transforms anything.
    pub fn disabled() -> Self {
        Self { p_elastic: 0.0, p_rotate: 0.0, p_affine: 0.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        for (name, v) in [
            ("elastic_alpha", self.elastic_alpha),
            ("elastic_sigma", self.elastic_sigma),
            ("rotate_degrees", self.rotate_degrees),
            ("affine.translate", self.affine.translate),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a finite value >= 0, got {v}"));
            }
        }
        for (name, p) in [("p_elastic", self.p_elastic), ("p_rotate", self.p_rotate), ("p_affine", self.p_affine)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must be in [0, 1], got {p}"));
            }
        }
        let (lo, hi) = self.affine.scale;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return bad(format!("affine scale range must satisfy 0 < lo <= hi, got ({lo}, {hi})"));
        }
        let (lo, hi) = self.affine.shear;
        if !(lo <= hi && lo.is_finite() && hi.is_finite()) {
            return bad(format!("affine shear range must satisfy lo <= hi, got ({lo}, {hi})"));
        }
        Ok(())
    }
}

fn check_shapes(image: &Grid<f64>, mask: &Mask) -> Result<()> {
    if image.dims() != mask.dims() {
        return Err(Error::InvalidSize(format!("image is {:?} but mask is {:?}", image.dims(), mask.dims())));
    }
    Ok(())
}

/// Resample both grids through `source(r, c) -> (r', c')`.
fn warp(image: &Grid<f64>, mask: &Mask, source: impl Fn(usize, usize) -> (f64, f64)) -> (Grid<f64>, Mask) {
    let (rows, cols) = image.dims();
    let mut out_image = Grid::filled(rows, cols, 0.0);
    let mut out_mask = Grid::filled(rows, cols, 0u8);
    for r in 0..rows {
        for c in 0..cols {
            let (sr, sc) = source(r, c);
            out_image.set(r, c, image.sample_bilinear(sr, sc));
            out_mask.set(r, c, mask.sample_nearest(sr, sc));
        }
    }
    (out_image, out_mask)
}

/// Normalized Gaussian kernel truncated at `3σ`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let k: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = k.iter().sum();
    k.into_iter().map(|v| v / total).collect()
}

/// Separable convolution; taps falling outside the grid are dropped and the
/// remaining weights renormalized.
fn smooth(field: &Grid<f64>, kernel: &[f64]) -> Grid<f64> {
    let (rows, cols) = field.dims();
    let radius = (kernel.len() / 2) as i64;
    let pass = |g: &Grid<f64>, along_rows: bool| {
        let len = if along_rows { rows } else { cols } as i64;
        Grid::from_fn(rows, cols, |r, c| {
            let at = if along_rows { r } else { c } as i64;
            let (mut acc, mut weight) = (0.0, 0.0);
            for (i, w) in kernel.iter().enumerate() {
                let j = at + i as i64 - radius;
                if (0..len).contains(&j) {
                    let v = if along_rows { g.get(j as usize, c) } else { g.get(r, j as usize) };
                    acc += w * v;
                    weight += w;
                }
            }
            acc / weight
        })
    };
    pass(&pass(field, false), true)
}

/// Random displacement field `(dx, dy)`: uniform noise in `[-1, 1)`, smoothed
/// with a Gaussian of std `sigma`, scaled by `alpha`.
pub fn displacement_field(rows: usize, cols: usize, alpha: f64, sigma: f64, rng: &mut StreamRng) -> (Grid<f64>, Grid<f64>) {
    let kernel = gaussian_kernel(sigma);
    let mut draw = || {
        let raw = Grid::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0));
        smooth(&raw, &kernel).map(|v| alpha * v)
    };
    let dx = draw();
    let dy = draw();
    (dx, dy)
}

pub fn elastic(image: &Grid<f64>, mask: &Mask, alpha: f64, sigma: f64, rng: &mut StreamRng) -> Result<(Grid<f64>, Mask)> {
    check_shapes(image, mask)?;
    let (dx, dy) = displacement_field(image.rows(), image.cols(), alpha, sigma, rng);
    Ok(warp(image, mask, |r, c| (r as f64 + dy.get(r, c), c as f64 + dx.get(r, c))))
}

/// Rotate counter-clockwise (in `x` right, `y` up terms) by `degrees` about the grid centre.
pub fn rotate_by(image: &Grid<f64>, mask: &Mask, degrees: f64) -> Result<(Grid<f64>, Mask)> {
    check_shapes(image, mask)?;
    if degrees == 0.0 {
        return Ok((image.clone(), mask.clone()));
    }
    let (cr, cc) = ((image.rows() as f64 - 1.0) / 2.0, (image.cols() as f64 - 1.0) / 2.0);
    let (s, c) = degrees.to_radians().sin_cos();
    // Output (x, y) = R(θ)·(source - centre) with y pointing down, so the
    // source is R(-θ) applied to the output offset.
    Ok(warp(image, mask, |r, col| {
        let (x, y) = (col as f64 - cc, r as f64 - cr);
        let sx = c * x - s * y;
        let sy = s * x + c * y;
        (cr + sy, cc + sx)
    }))
}

/// Rotation by an angle drawn uniformly from `[-degrees, degrees]`.
pub fn rotate(image: &Grid<f64>, mask: &Mask, degrees: f64, rng: &mut StreamRng) -> Result<(Grid<f64>, Mask)> {
    let angle = if degrees > 0.0 { rng.random_range(-degrees..=degrees) } else { 0.0 };
    rotate_by(image, mask, angle)
}

/// One concrete affine map about the grid centre: `q = S·H·(p − c) + c + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineParams {
    pub scale: f64,
    pub shear: f64,
    /// `(tx, ty)` in pixels; `tx > 0` moves content to larger column indices.
    pub translate: (f64, f64),
}

impl AffineParams {
    pub fn sample(ranges: &AffineRanges, rng: &mut StreamRng) -> Self {
        let draw = |rng: &mut StreamRng, (lo, hi): (f64, f64)| if lo < hi { rng.random_range(lo..=hi) } else { lo };
        let scale = draw(rng, ranges.scale);
        let shear = draw(rng, ranges.shear);
        let t = ranges.translate;
        let tx = draw(rng, (-t, t));
        let ty = draw(rng, (-t, t));
        Self { scale, shear, translate: (tx, ty) }
    }
}

pub fn affine_with(image: &Grid<f64>, mask: &Mask, p: AffineParams) -> Result<(Grid<f64>, Mask)> {
    check_shapes(image, mask)?;
    if !(p.scale > 0.0) {
        return Err(Error::InvalidConfig(format!("affine scale must be positive, got {}", p.scale)));
    }
    let (cr, cc) = ((image.rows() as f64 - 1.0) / 2.0, (image.cols() as f64 - 1.0) / 2.0);
    Ok(warp(image, mask, |r, c| {
        let x = (c as f64 - cc - p.translate.0) / p.scale;
        let y = (r as f64 - cr - p.translate.1) / p.scale;
        (cr + y, cc + x - p.shear * y)
    }))
}

pub fn affine(image: &Grid<f64>, mask: &Mask, config: &AugmentConfig, rng: &mut StreamRng) -> Result<(Grid<f64>, Mask, f64)> {
    config.validate()?;
    let p = AffineParams::sample(&config.affine, rng);
    let (i, m) = affine_with(image, mask, p)?;
    Ok((i, m, p.scale))
}

/// Apply each transform with its probability, in the order affine, elastic,
/// rotation. The random stream is keyed by `(config.seed, sample_index)`.
///
/// An applied scale `s` divides the pixel spacing by `s`. The expert contour
/// is dropped once any transform has been applied.
pub fn pipeline(sample: &CineSample, config: &AugmentConfig, sample_index: u64) -> Result<CineSample> {
    config.validate()?;
    check_shapes(&sample.image, &sample.mask)?;
    let mut rng = crate::rng::stream(config.seed, &[sample_index]);
    let coins: [f64; 3] = [rng.random(), rng.random(), rng.random()];
    let mut out = sample.clone();
    let mut touched = false;
    if coins[0] < config.p_affine {
        let (image, mask, scale) = affine(&out.image, &out.mask, config, &mut rng)?;
        out.image = image;
        out.mask = mask;
        out.spacing_mm = (out.spacing_mm.0 / scale, out.spacing_mm.1 / scale);
        touched = true;
    }
    if coins[1] < config.p_elastic {
        (out.image, out.mask) = elastic(&out.image, &out.mask, config.elastic_alpha, config.elastic_sigma, &mut rng)?;
        touched = true;
    }
    if coins[2] < config.p_rotate {
        (out.image, out.mask) = rotate(&out.image, &out.mask, config.rotate_degrees, &mut rng)?;
        touched = true;
    }
    if touched {
        out.contour = None;
    }
    Ok(out)
}

/// [`pipeline`] over a batch; `indices[i]` keys the stream of `samples[i]`.
/// Results come back in input order whatever the execution strategy.
pub fn augment_batch(exec: Exec, samples: &[&CineSample], config: &AugmentConfig, indices: &[u64]) -> Result<Vec<CineSample>> {
    if samples.len() != indices.len() {
        return Err(Error::InvalidConfig(format!("{} samples but {} indices", samples.len(), indices.len())));
    }
    exec.try_map(samples.len(), |i| pipeline(samples[i], config, indices[i]))
}

/// Originals followed by `copies` augmented versions of each sample.
pub fn expand(samples: &[CineSample], copies: usize, config: &AugmentConfig) -> Result<Vec<CineSample>> {
    let mut out = samples.to_vec();
    for k in 0..copies {
        for (i, s) in samples.iter().enumerate() {
            out.push(pipeline(s, config, (k * samples.len() + i) as u64)?);
        }
    }
    Ok(out)
}
