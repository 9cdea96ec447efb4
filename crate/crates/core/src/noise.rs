//! Random fields: iid Gaussian, block noise and the α-mixed noise used by the
//! high-resolution stage.
//!
//! Block noise is built by summing an `s×s` window of iid noise with toroidal
//! wraparound and dividing by `s`. The result has marginal variance `σ²` and the
//! separable triangular covariance returned by [`block_covariance_oracle`].

use rand::Rng;
use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::field::ImageField;
use crate::rng::{standard_normal, RandomSource};

/// Noise scale, block kernel and block-noise mixing weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub sigma: f64,
    pub kernel: usize,
    pub alpha: f64,
}

impl NoiseSpec {
    pub fn new(sigma: f64, kernel: usize, alpha: f64) -> Result<Self> {
        let spec = Self {
            sigma,
            kernel,
            alpha,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(invalid(
                "sigma",
                format!("must be positive, got {}", self.sigma),
            ));
        }
        if self.kernel == 0 {
            return Err(invalid("kernel", "block kernel size must be positive"));
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(invalid(
                "alpha",
                format!("must be non-negative, got {}", self.alpha),
            ));
        }
        Ok(())
    }

    fn check_fits(&self, h: usize, w: usize) -> Result<()> {
        if self.kernel > h.min(w) {
            return Err(invalid(
                "kernel",
                format!("kernel {} exceeds field {h}x{w}", self.kernel),
            ));
        }
        Ok(())
    }
}

/// iid `N(0, σ²)` field.
pub fn gaussian_field<R: Rng + ?Sized>(
    h: usize,
    w: usize,
    sigma: f64,
    rng: &mut R,
) -> Result<ImageField> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(invalid("sigma", format!("must be positive, got {sigma}")));
    }
    if h == 0 || w == 0 {
        return Err(invalid("shape", "field dimensions must be positive"));
    }
    let values = (0..h * w).map(|_| sigma * standard_normal(rng)).collect();
    Ok(ImageField::from_raw(h, w, values))
}

/// `Block[s](ε)_{x,y} = (1/s) Σ_{i,j<s} ε_{x−i, y−j}` with toroidal indexing.
pub fn block_from_field(eps: &ImageField, kernel: usize) -> Result<ImageField> {
    let (h, w) = eps.shape();
    if kernel == 0 || kernel > h.min(w) {
        return Err(invalid(
            "kernel",
            format!("kernel {kernel} must be in 1..={}", h.min(w)),
        ));
    }
    let src = eps.values();
    // Horizontal window sums, then vertical.
    let mut rows = vec![0.0; h * w];
    for x in 0..h {
        for y in 0..w {
            let mut acc = 0.0;
            for j in 0..kernel {
                acc += src[x * w + (y + w - j) % w];
            }
            rows[x * w + y] = acc;
        }
    }
    let scale = 1.0 / kernel as f64;
    let mut out = vec![0.0; h * w];
    for x in 0..h {
        for y in 0..w {
            let mut acc = 0.0;
            for i in 0..kernel {
                acc += rows[((x + h - i) % h) * w + y];
            }
            out[x * w + y] = acc * scale;
        }
    }
    Ok(ImageField::from_raw(h, w, out))
}

/// Block noise with marginal variance `σ²`: [`block_from_field`] of an iid `N(0, σ²)` field.
pub fn block_noise<R: Rng + ?Sized>(
    h: usize,
    w: usize,
    spec: &NoiseSpec,
    rng: &mut R,
) -> Result<ImageField> {
    spec.validate()?;
    spec.check_fits(h, w)?;
    let eps = gaussian_field(h, w, spec.sigma, rng)?;
    block_from_field(&eps, spec.kernel)
}

/// Toroidal distance along an axis of length `len`.
pub fn toroidal_distance(offset: i64, len: usize) -> usize {
    let len = len as i64;
    let d = offset.rem_euclid(len);
    d.min(len - d) as usize
}

/// Analytic block-noise covariance between pixels `offset_x` columns and
/// `offset_y` rows apart: `(σ²/s²)·max(0, s − dis_x)·max(0, s − dis_y)`.
pub fn block_covariance_oracle(
    offset_x: i64,
    offset_y: i64,
    spec: &NoiseSpec,
    h: usize,
    w: usize,
) -> f64 {
    let s = spec.kernel as f64;
    let dx = toroidal_distance(offset_x, w) as f64;
    let dy = toroidal_distance(offset_y, h) as f64;
    spec.sigma * spec.sigma / (s * s) * (s - dx).max(0.0) * (s - dy).max(0.0)
}

/// `(ε + α·Block[s](ε′)) / √(1 + α²)` with independent `ε, ε′ ~ N(0, σ²)`.
pub fn mixed_noise<R: Rng + ?Sized>(
    h: usize,
    w: usize,
    spec: &NoiseSpec,
    rng: &mut R,
) -> Result<ImageField> {
    spec.validate()?;
    let eps = gaussian_field(h, w, spec.sigma, rng)?;
    if spec.alpha == 0.0 {
        return Ok(eps);
    }
    spec.check_fits(h, w)?;
    let block = block_noise(h, w, spec, rng)?;
    let norm = 1.0 / (1.0 + spec.alpha * spec.alpha).sqrt();
    let values = eps
        .values()
        .iter()
        .zip(block.values())
        .map(|(e, b)| norm * (e + spec.alpha * b))
        .collect();
    Ok(ImageField::from_raw(h, w, values))
}

/// Which generator a covariance report exercises.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    Gaussian,
    Block,
    Mixed,
}

impl std::str::FromStr for NoiseKind {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(NoiseKind::Gaussian),
            "block" => Ok(NoiseKind::Block),
            "mixed" => Ok(NoiseKind::Mixed),
            other => Err(invalid("kind", format!("unknown noise kind `{other}`"))),
        }
    }
}

pub fn generate<R: Rng + ?Sized>(
    kind: NoiseKind,
    h: usize,
    w: usize,
    spec: &NoiseSpec,
    rng: &mut R,
) -> Result<ImageField> {
    match kind {
        NoiseKind::Gaussian => gaussian_field(h, w, spec.sigma, rng),
        NoiseKind::Block => block_noise(h, w, spec, rng),
        NoiseKind::Mixed => mixed_noise(h, w, spec, rng),
    }
}

/// Analytic covariance for any [`NoiseKind`].
pub fn covariance_oracle(
    kind: NoiseKind,
    offset_x: i64,
    offset_y: i64,
    spec: &NoiseSpec,
    h: usize,
    w: usize,
) -> f64 {
    let iid = if toroidal_distance(offset_x, w) == 0 && toroidal_distance(offset_y, h) == 0 {
        spec.sigma * spec.sigma
    } else {
        0.0
    };
    match kind {
        NoiseKind::Gaussian => iid,
        NoiseKind::Block => block_covariance_oracle(offset_x, offset_y, spec, h, w),
        NoiseKind::Mixed => {
            let a2 = spec.alpha * spec.alpha;
            (iid + a2 * block_covariance_oracle(offset_x, offset_y, spec, h, w)) / (1.0 + a2)
        }
    }
}

/// One row of a covariance report: `dx,dy,analytic,empirical,stderr`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceRow {
    pub dx: i64,
    pub dy: i64,
    pub analytic: f64,
    pub empirical: f64,
    pub stderr: f64,
}

impl CovarianceRow {
    /// Deviation in standard errors.
    pub fn z_score(&self) -> f64 {
        if self.stderr == 0.0 {
            if self.empirical == self.analytic {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (self.empirical - self.analytic) / self.stderr
        }
    }
}

/// Monte-Carlo covariance between pixel `(0, 0)` and every offset in
/// `[-radius, radius]²`, one independent field per draw.
pub fn covariance_report(
    kind: NoiseKind,
    spec: &NoiseSpec,
    h: usize,
    w: usize,
    radius: i64,
    draws: usize,
    source: RandomSource,
) -> Result<Vec<CovarianceRow>> {
    spec.validate()?;
    if draws < 2 {
        return Err(invalid("draws", "need at least two draws"));
    }
    let offsets: Vec<(i64, i64)> = (-radius..=radius)
        .flat_map(|dy| (-radius..=radius).map(move |dx| (dx, dy)))
        .collect();
    let n_off = offsets.len();
    // Per-draw products, reduced in draw order for thread-count independence.
    let products: Vec<Vec<f64>> = (0..draws)
        .into_par_iter()
        .map(|d| {
            let mut rng = source.stream(d as u64);
            let field = generate(kind, h, w, spec, &mut rng)?;
            let a = field.get(0, 0);
            Ok(offsets
                .iter()
                .map(|&(dx, dy)| {
                    let i = dy.rem_euclid(h as i64) as usize;
                    let j = dx.rem_euclid(w as i64) as usize;
                    a * field.get(i, j)
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let n = draws as f64;
    let mut rows = Vec::with_capacity(n_off);
    for (k, &(dx, dy)) in offsets.iter().enumerate() {
        let mean = products.iter().map(|p| p[k]).sum::<f64>() / n;
        let var = products.iter().map(|p| (p[k] - mean).powi(2)).sum::<f64>() / (n - 1.0);
        rows.push(CovarianceRow {
            dx,
            dy,
            analytic: covariance_oracle(kind, dx, dy, spec, h, w),
            empirical: mean,
            stderr: (var / n).sqrt(),
        });
    }
    Ok(rows)
}

pub fn write_covariance_csv<W: std::io::Write>(rows: &[CovarianceRow], mut out: W) -> Result<()> {
    writeln!(out, "dx,dy,analytic,empirical,stderr")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{:.12e},{:.12e},{:.12e}",
            r.dx, r.dy, r.analytic, r.empirical, r.stderr
        )?;
    }
    Ok(())
}
