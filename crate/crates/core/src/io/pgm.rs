//! Binary PGM (P5) image grids.

use std::path::Path;

use super::write_atomic;
use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;

/// Tiles each row of `images` (values in `[0, 1]`, `height * width` pixels,
/// row-major) into a grid `columns` wide with one-pixel black gutters.
pub fn encode_pgm_grid(images: &DenseMatrix, height: usize, width: usize, columns: usize) -> Result<Vec<u8>> {
    if height * width != images.cols() || height == 0 || width == 0 {
        return Err(Error::shape(format!(
            "rows of {} pixels cannot be shown as {height}x{width} images",
            images.cols()
        )));
    }
    let columns = columns.clamp(1, images.rows().max(1));
    let grid_rows = images.rows().div_ceil(columns).max(1);
    let (gw, gh) = (columns * (width + 1) + 1, grid_rows * (height + 1) + 1);
    let mut pixels = vec![0u8; gw * gh];
    for (k, img) in images.iter_rows().enumerate() {
        let (oy, ox) = (1 + (k / columns) * (height + 1), 1 + (k % columns) * (width + 1));
        for r in 0..height {
            for c in 0..width {
                let v = img[r * width + c];
                let v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
                pixels[(oy + r) * gw + ox + c] = (v * 255.0).round() as u8;
            }
        }
    }
    let mut out = format!("P5\n{gw} {gh}\n255\n").into_bytes();
    out.extend_from_slice(&pixels);
    Ok(out)
}

pub fn save_pgm_grid(path: impl AsRef<Path>, images: &DenseMatrix, height: usize, width: usize, columns: usize) -> Result<()> {
    write_atomic(path.as_ref(), &encode_pgm_grid(images, height, width, columns)?)
}

/// Side length when `pixels` is a perfect square.
pub fn square_side(pixels: usize) -> Option<usize> {
    let s = (pixels as f64).sqrt().round() as usize;
    (s > 0 && s * s == pixels).then_some(s)
}
