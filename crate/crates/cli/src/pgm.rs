//! Binary greyscale (P5) image output.

use std::io::Write;
use std::path::Path;

use lvseg::grid::Mask;
use lvseg::Grid;

fn write(path: &Path, rows: usize, cols: usize, pixels: impl Iterator<Item = u8>) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(out, "P5\n{cols} {rows}\n255\n")?;
    out.write_all(&pixels.collect::<Vec<u8>>())?;
    out.flush()
}

/// Intensities stretched to the full 0..=255 range.
pub fn write_image(path: &Path, image: &Grid<f64>) -> std::io::Result<()> {
    let scaled = image.min_max_normalized();
    write(path, image.rows(), image.cols(), scaled.as_slice().iter().map(|v| (v * 255.0).round() as u8))
}

/// Foreground white, background black.
pub fn write_mask(path: &Path, mask: &Mask) -> std::io::Result<()> {
    write(path, mask.rows(), mask.cols(), mask.as_slice().iter().map(|&m| if m > 0 { 255 } else { 0 }))
}
