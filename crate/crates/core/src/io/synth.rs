//! Bundled synthetic tasks: Gaussian latent classes and 8×8 digit glyphs.

use crate::numerics::{DenseMatrix, Rng};

/// Class means `±separation · 1` (class 0 negative) with isotropic `sigma`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TwoGaussian {
    pub dim: usize,
    pub separation: f64,
    pub sigma: f64,
}

impl Default for TwoGaussian {
    fn default() -> Self {
        TwoGaussian { dim: 2, separation: 2.0, sigma: 0.5 }
    }
}

impl TwoGaussian {
    pub fn mean(&self, class: usize) -> f64 {
        if class == 0 {
            -self.separation
        } else {
            self.separation
        }
    }

    /// `n` rows with alternating labels.
    pub fn sample(&self, n: usize, rng: &mut Rng) -> (DenseMatrix, Vec<usize>) {
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let z = DenseMatrix::from_fn(n, self.dim, |r, _| self.mean(labels[r]) + self.sigma * rng.standard_normal());
        (z, labels)
    }

    /// `log N(z; μ_y, σ² I)` per row.
    pub fn log_density(&self, z: &DenseMatrix, labels: &[usize]) -> Vec<f64> {
        let var = self.sigma * self.sigma;
        let norm = -0.5 * self.dim as f64 * (2.0 * std::f64::consts::PI * var).ln();
        z.iter_rows()
            .zip(labels)
            .map(|(row, &y)| {
                let m = self.mean(y);
                norm - row.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (2.0 * var)
            })
            .collect()
    }
}

/// A fixed smooth embedding `x = sigmoid(z W + b)` of latents into `[0, 1]^n`,
/// giving an autoencoder something object-like to compress.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectEmbedding {
    weight: DenseMatrix,
    bias: Vec<f64>,
}

impl ObjectEmbedding {
    pub fn new(latent_dim: usize, object_dim: usize, rng: &mut Rng) -> Self {
        let scale = 1.0 / (latent_dim as f64).sqrt();
        let weight = DenseMatrix::from_fn(latent_dim, object_dim, |_, _| scale * rng.standard_normal());
        let bias = (0..object_dim).map(|_| 0.3 * rng.standard_normal()).collect();
        ObjectEmbedding { weight, bias }
    }

    pub fn apply(&self, z: &DenseMatrix) -> DenseMatrix {
        let mut x = z.matmul(&self.weight).expect("latent width matches the embedding");
        for r in 0..x.rows() {
            for (v, b) in x.row_mut(r).iter_mut().zip(&self.bias) {
                *v = 1.0 / (1.0 + (-(*v + b)).exp());
            }
        }
        x
    }
}

/// Latents with `attributes` independent binary attributes; attribute `j`
/// moves coordinate `j` to `±separation`, other coordinates are `N(0, σ²)`.
pub fn binary_attribute_latents(
    n: usize,
    dim: usize,
    attributes: usize,
    separation: f64,
    sigma: f64,
    rng: &mut Rng,
) -> (DenseMatrix, DenseMatrix) {
    assert!(attributes <= dim, "each attribute needs its own coordinate");
    let y = DenseMatrix::from_fn(n, attributes, |_, _| rng.below(2) as f64);
    let z = DenseMatrix::from_fn(n, dim, |r, c| {
        let centre = if c < attributes { separation * (2.0 * y.get(r, c) - 1.0) } else { 0.0 };
        centre + sigma * rng.standard_normal()
    });
    (z, y)
}

pub const GLYPH_SIDE: usize = 8;

/// Stroke polylines for the ten digits in unit-square coordinates (`x` right,
/// `y` down).
fn glyph_strokes(digit: usize) -> Vec<Vec<(f64, f64)>> {
    let ring = |cx: f64, cy: f64, rx: f64, ry: f64| -> Vec<(f64, f64)> {
        (0..=16)
            .map(|k| {
                let t = k as f64 / 16.0 * std::f64::consts::TAU;
                (cx + rx * t.cos(), cy + ry * t.sin())
            })
            .collect()
    };
    match digit {
        0 => vec![ring(0.5, 0.5, 0.24, 0.34)],
        1 => vec![vec![(0.33, 0.3), (0.52, 0.14), (0.52, 0.86)]],
        2 => vec![vec![(0.25, 0.3), (0.4, 0.15), (0.62, 0.15), (0.74, 0.3), (0.7, 0.46), (0.25, 0.85), (0.78, 0.85)]],
        3 => vec![vec![(0.25, 0.17), (0.72, 0.17), (0.45, 0.46), (0.7, 0.58), (0.72, 0.76), (0.55, 0.86), (0.25, 0.82)]],
        4 => vec![vec![(0.64, 0.86), (0.64, 0.14), (0.2, 0.62), (0.82, 0.62)]],
        5 => vec![vec![(0.75, 0.15), (0.3, 0.15), (0.28, 0.45), (0.6, 0.42), (0.75, 0.6), (0.65, 0.83), (0.25, 0.82)]],
        6 => vec![vec![(0.7, 0.14), (0.36, 0.38), (0.27, 0.64), (0.4, 0.86), (0.64, 0.84), (0.73, 0.64), (0.55, 0.5), (0.3, 0.6)]],
        7 => vec![vec![(0.22, 0.15), (0.78, 0.15), (0.42, 0.86)]],
        8 => vec![ring(0.5, 0.31, 0.17, 0.16), ring(0.5, 0.67, 0.21, 0.19)],
        9 => vec![ring(0.48, 0.34, 0.19, 0.18), vec![(0.67, 0.34), (0.6, 0.86)]],
        _ => panic!("digit {digit} out of range"),
    }
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 { 0.0 } else { (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0) };
    let (qx, qy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    (qx * qx + qy * qy).sqrt()
}

/// Random-affine jitter applied to every glyph.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GlyphJitter {
    /// Standard deviation of the rotation angle, radians.
    pub rotation: f64,
    /// Scale drawn uniformly from `[1 - scale, 1 + scale]` per axis.
    pub scale: f64,
    /// Translation drawn uniformly from `[-shift, shift]` per axis.
    pub shift: f64,
    /// Stroke half-width drawn from `[thickness.0, thickness.1]`.
    pub thickness: (f64, f64),
    /// Additive pixel noise standard deviation (clamped to `[0, 1]` after).
    pub noise: f64,
}

impl Default for GlyphJitter {
    fn default() -> Self {
        GlyphJitter { rotation: 0.15, scale: 0.12, shift: 0.08, thickness: (0.05, 0.1), noise: 0.05 }
    }
}

/// Renders one jittered digit as `GLYPH_SIDE²` row-major pixels in `[0, 1]`.
pub fn render_digit(digit: usize, jitter: &GlyphJitter, rng: &mut Rng) -> Vec<f64> {
    let strokes = glyph_strokes(digit);
    let angle = jitter.rotation * rng.standard_normal();
    let (sx, sy) = (
        rng.uniform_in(1.0 - jitter.scale, 1.0 + jitter.scale),
        rng.uniform_in(1.0 - jitter.scale, 1.0 + jitter.scale),
    );
    let (tx, ty) = (rng.uniform_in(-jitter.shift, jitter.shift), rng.uniform_in(-jitter.shift, jitter.shift));
    let half = rng.uniform_in(jitter.thickness.0, jitter.thickness.1);
    let (sin, cos) = angle.sin_cos();
    let soft = 0.5 / GLYPH_SIDE as f64;
    let n = GLYPH_SIDE as f64;
    let mut px = Vec::with_capacity(GLYPH_SIDE * GLYPH_SIDE);
    for r in 0..GLYPH_SIDE {
        for c in 0..GLYPH_SIDE {
            // Pull the pixel centre back into glyph coordinates.
            let (x, y) = ((c as f64 + 0.5) / n - 0.5 - tx, (r as f64 + 0.5) / n - 0.5 - ty);
            let (x, y) = ((cos * x + sin * y) / sx + 0.5, (-sin * x + cos * y) / sy + 0.5);
            let d = strokes
                .iter()
                .flat_map(|s| s.windows(2).map(move |w| (w[0], w[1])))
                .map(|(a, b)| segment_distance((x, y), a, b))
                .fold(f64::INFINITY, f64::min);
            let ink = (1.0 - (d - half) / soft).clamp(0.0, 1.0);
            px.push((ink + jitter.noise * rng.standard_normal()).clamp(0.0, 1.0));
        }
    }
    px
}

/// `n` digit images (`n × 64`) with labels cycling through `0..10`.
pub fn digit_glyphs(n: usize, jitter: &GlyphJitter, rng: &mut Rng) -> (DenseMatrix, Vec<usize>) {
    let labels: Vec<usize> = (0..n).map(|i| i % 10).collect();
    let mut data = Vec::with_capacity(n * GLYPH_SIDE * GLYPH_SIDE);
    for &l in &labels {
        data.extend(render_digit(l, jitter, rng));
    }
    (DenseMatrix::new(n, GLYPH_SIDE * GLYPH_SIDE, data).expect("sizes agree"), labels)
}
