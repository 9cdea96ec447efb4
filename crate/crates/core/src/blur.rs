//! Heat-dissipation blur operators and the forward corruption process.
//!
//! A blur operator is diagonal in a (possibly tiled) DCT basis. For tile size
//! `bh×bw` the decay of coefficient `(i, j)` is
//! `exp(−π²((i mod bh)²/bh² + (j mod bw)²/bw²)·τ)`. A single global tile gives
//! ordinary blurring diffusion; `k×k` tiles blur every patch independently,
//! and as `τ → ∞` each patch collapses to its mean.

use std::f64::consts::PI;

use rand::Rng;

use crate::error::{invalid, Result};
use crate::field::{FreqField, ImageField, Tiling};
use crate::noise::mixed_noise;
use crate::schedule::{blur_schedule, ScheduleConfig};
use crate::spectral::{dct2_tiled, idct2};

/// `Λ_(i·W+j) = −π²(i²/H² + j²/W²)` for the global DCT basis.
pub fn lambda_matrix(h: usize, w: usize) -> Vec<f64> {
    lambda_tiled(h, w, (h, w))
}

fn lambda_tiled(h: usize, w: usize, block: (usize, usize)) -> Vec<f64> {
    let (bh, bw) = (block.0 as f64, block.1 as f64);
    let mut out = Vec::with_capacity(h * w);
    for i in 0..h {
        let a = (i % block.0) as f64;
        for j in 0..w {
            let b = (j % block.1) as f64;
            out.push(-PI * PI * (a * a / (bh * bh) + b * b / (bw * bw)));
        }
    }
    out
}

/// Diagonal per-frequency decay `exp(Λτ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlurOperator {
    height: usize,
    width: usize,
    block: (usize, usize),
    tau: f64,
    decay: Vec<f64>,
}

impl BlurOperator {
    pub fn new(h: usize, w: usize, tiling: Tiling, tau: f64) -> Result<Self> {
        if h == 0 || w == 0 {
            return Err(invalid("shape", "field dimensions must be positive"));
        }
        if !(tau >= 0.0) || !tau.is_finite() {
            return Err(invalid(
                "tau",
                format!("must be a non-negative number, got {tau}"),
            ));
        }
        let block = tiling.block_dims(h, w)?;
        let decay = lambda_tiled(h, w, block)
            .into_iter()
            .map(|l| (l * tau).exp())
            .collect();
        Ok(Self {
            height: h,
            width: w,
            block,
            tau,
            decay,
        })
    }

    pub fn identity(h: usize, w: usize, tiling: Tiling) -> Result<Self> {
        Self::new(h, w, tiling, 0.0)
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn block(&self) -> (usize, usize) {
        self.block
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn decay(&self) -> &[f64] {
        &self.decay
    }

    /// Per-coefficient multiplication in the operator's basis.
    pub fn apply_freq(&self, u: &FreqField) -> Result<FreqField> {
        self.check_basis(u)?;
        let coeffs = u
            .coeffs()
            .iter()
            .zip(&self.decay)
            .map(|(c, d)| c * d)
            .collect();
        Ok(FreqField::from_raw(
            self.height,
            self.width,
            self.block,
            coeffs,
        ))
    }

    /// `V D Vᵀ x`.
    pub fn apply_image(&self, x: &ImageField) -> Result<ImageField> {
        let u = dct2_tiled(x, self.tiling())?;
        idct2(&self.apply_freq(&u)?)
    }

    /// Operator for `τ₁ + τ₂`; the product of the two diagonals.
    pub fn compose(&self, other: &BlurOperator) -> Result<BlurOperator> {
        if self.shape() != other.shape() || self.block != other.block {
            return Err(invalid("blur", "operators act on different bases"));
        }
        Ok(BlurOperator {
            height: self.height,
            width: self.width,
            block: self.block,
            tau: self.tau + other.tau,
            decay: self
                .decay
                .iter()
                .zip(&other.decay)
                .map(|(a, b)| a * b)
                .collect(),
        })
    }

    pub fn tiling(&self) -> Tiling {
        if self.block == (self.height, self.width) {
            Tiling::Global
        } else {
            Tiling::Patch(self.block.0)
        }
    }

    fn check_basis(&self, u: &FreqField) -> Result<()> {
        if u.shape() != self.shape() || u.block() != self.block {
            return Err(invalid(
                "blur",
                format!(
                    "operator basis {:?}/{:?} does not match field {:?}/{:?}",
                    self.shape(),
                    self.block,
                    u.shape(),
                    u.block()
                ),
            ));
        }
        Ok(())
    }
}

/// Patch-wise blur on `k×k` tiles; `k` must divide both dimensions.
pub fn patch_blur_operator(h: usize, w: usize, k: usize, tau: f64) -> Result<BlurOperator> {
    if k == 0 || !h.is_multiple_of(k) || !w.is_multiple_of(k) {
        return Err(invalid(
            "patch",
            format!("patch size {k} does not divide {h}x{w}"),
        ));
    }
    BlurOperator::new(h, w, Tiling::Patch(k), tau)
}

/// Whole-image blur.
pub fn global_blur_operator(h: usize, w: usize, tau: f64) -> Result<BlurOperator> {
    BlurOperator::new(h, w, Tiling::Global, tau)
}

/// Blur operator of a stage at grid time `t`.
pub fn blur_at(h: usize, w: usize, t: f64, cfg: &ScheduleConfig) -> Result<BlurOperator> {
    BlurOperator::new(h, w, cfg.patch, blur_schedule(t, cfg)?)
}

/// Noise level the forward process uses at time `t ∈ [0, 1]`: the truncated
/// schedule evaluated at `max(t, t_min)`.
pub fn noise_level(t: f64, cfg: &ScheduleConfig) -> f64 {
    cfg.sampler_sigma(t.max(cfg.t_min))
}

/// One draw of the forward process together with its ingredients.
#[derive(Debug, Clone)]
pub struct Corruption {
    pub x_t: ImageField,
    /// `V D_t Vᵀ x`, the mean of `x_t`.
    pub blurred: ImageField,
    pub sigma: f64,
    pub tau: f64,
}

/// `x_t = V D_t Vᵀ x + σ′(t)·(ε + α·Block[s](ε′))/√(1+α²)`.
pub fn corrupt<R: Rng + ?Sized>(
    x: &ImageField,
    t: f64,
    cfg: &ScheduleConfig,
    rng: &mut R,
) -> Result<Corruption> {
    if !(0.0..=1.0).contains(&t) {
        return Err(invalid("t", format!("must lie in [0, 1], got {t}")));
    }
    let (h, w) = x.shape();
    let op = blur_at(h, w, t, cfg)?;
    // Zero blur is the identity; skipping the transform keeps the plain
    // noising path bit-exact.
    let blurred = if op.tau() == 0.0 {
        x.clone()
    } else {
        op.apply_image(x)?
    };
    let sigma = noise_level(t, cfg);
    let noise = mixed_noise(h, w, &cfg.noise_spec(sigma), rng)?;
    Ok(Corruption {
        x_t: blurred.add_scaled(&noise, 1.0)?,
        blurred,
        sigma,
        tau: op.tau(),
    })
}

/// The corrupted image alone; see [`corrupt`].
pub fn forward_corrupt<R: Rng + ?Sized>(
    x: &ImageField,
    t: f64,
    cfg: &ScheduleConfig,
    rng: &mut R,
) -> Result<ImageField> {
    Ok(corrupt(x, t, cfg, rng)?.x_t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::gaussian_field;
    use crate::rng::RandomSource;
    use crate::spectral::{dct2, downsample_mean, upsample_nearest};

    fn random(h: usize, w: usize, seed: u64) -> ImageField {
        gaussian_field(h, w, 1.0, &mut RandomSource::new(seed).stream(0)).unwrap()
    }

    #[test]
    fn lambda_values() {
        let l = lambda_matrix(4, 4);
        assert_eq!(l[0], 0.0);
        let l11 = l[4 + 1];
        assert!((l11 + PI * PI / 8.0).abs() < 1e-12);
        assert!((l[3 * 4 + 3] - 9.0 * l11).abs() < 1e-12);
    }

    #[test]
    fn zero_tau_is_identity() {
        let op = patch_blur_operator(8, 8, 4, 0.0).unwrap();
        assert!(op.decay().iter().all(|d| *d == 1.0));
        let x = random(8, 8, 1);
        assert!(op.apply_image(&x).unwrap().max_abs_diff(&x) < 1e-12);
    }

    #[test]
    fn patch_constant_image_is_fixed() {
        let low = random(4, 4, 2);
        let up = upsample_nearest(&low, 4).unwrap();
        for tau in [0.3, 2.0, 50.0] {
            let op = patch_blur_operator(16, 16, 4, tau).unwrap();
            assert!(op.apply_image(&up).unwrap().max_abs_diff(&up) < 1e-10);
        }
    }

    #[test]
    fn large_tau_gives_patch_means() {
        let k = 4;
        // exp(-π²τ/k²) < 1e-8
        let tau = 8.0 * 10f64.ln() * (k * k) as f64 / (PI * PI) * 1.01;
        let x = random(16, 16, 3);
        let op = patch_blur_operator(16, 16, k, tau).unwrap();
        let out = op.apply_image(&x).unwrap();
        let oracle = upsample_nearest(&downsample_mean(&x, k).unwrap(), k).unwrap();
        assert!(out.max_abs_diff(&oracle) < 1e-6);
    }

    #[test]
    fn per_patch_decomposition() {
        let x = random(8, 12, 4);
        let op = patch_blur_operator(8, 12, 4, 0.7).unwrap();
        let whole = op.apply_image(&x).unwrap();
        let local = global_blur_operator(4, 4, 0.7).unwrap();
        for p in 0..2 {
            for q in 0..3 {
                let patch = ImageField::from_fn(4, 4, |i, j| x.get(4 * p + i, 4 * q + j));
                let out = local.apply_image(&patch).unwrap();
                for i in 0..4 {
                    for j in 0..4 {
                        assert!((whole.get(4 * p + i, 4 * q + j) - out.get(i, j)).abs() < 1e-10);
                    }
                }
            }
        }
    }

    #[test]
    fn semigroup_in_tau() {
        let x = random(8, 8, 5);
        for tiling in [Tiling::Global, Tiling::Patch(4), Tiling::Patch(2)] {
            let a = BlurOperator::new(8, 8, tiling, 0.4).unwrap();
            let b = BlurOperator::new(8, 8, tiling, 1.1).unwrap();
            let ab = BlurOperator::new(8, 8, tiling, 1.5).unwrap();
            let two = b.apply_image(&a.apply_image(&x).unwrap()).unwrap();
            assert!(two.max_abs_diff(&ab.apply_image(&x).unwrap()) < 1e-10);
            let composed = a.compose(&b).unwrap();
            for (c, d) in composed.decay().iter().zip(ab.decay()) {
                assert!((c - d).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn decay_bounds_and_dc() {
        for tau in [0.0, 0.5, 4.5, 1e3] {
            let op = patch_blur_operator(8, 8, 4, tau).unwrap();
            let probe = FreqField::zeros(8, 8, Tiling::Patch(4)).unwrap();
            for i in 0..8 {
                for j in 0..8 {
                    let d = op.decay()[i * 8 + j];
                    assert!(d > 0.0 || tau > 100.0);
                    assert!(d <= 1.0);
                    if probe.is_dc(i, j) {
                        assert_eq!(d, 1.0);
                    }
                }
            }
        }
    }

    #[test]
    fn rejects_bad_patch_and_basis() {
        assert!(patch_blur_operator(8, 6, 4, 1.0).is_err());
        let op = patch_blur_operator(8, 8, 4, 1.0).unwrap();
        let u = dct2(&random(8, 8, 6)).unwrap();
        assert!(op.apply_freq(&u).is_err());
    }

    #[test]
    fn degenerate_corruption_is_plain_edm() {
        let cfg = ScheduleConfig {
            t_s: 0.9,
            ..ScheduleConfig::default()
        };
        let x = random(8, 8, 7);
        let src = RandomSource::new(9);
        let c = corrupt(&x, 0.4, &cfg, &mut src.stream(0)).unwrap();
        let eps = gaussian_field(8, 8, c.sigma, &mut src.stream(0)).unwrap();
        assert!(c.x_t.max_abs_diff(&x.add_scaled(&eps, 1.0).unwrap()) < 1e-12);
        assert_eq!(c.tau, 0.0);
    }

    #[test]
    fn t_zero_stays_close_to_input() {
        let cfg = ScheduleConfig::relay_stage(4);
        let x = random(8, 8, 8);
        let y = forward_corrupt(&x, 0.0, &cfg, &mut RandomSource::new(1).stream(0)).unwrap();
        let sigma = noise_level(0.0, &cfg);
        // Mixed noise at s=4 can reach a few σ per pixel; 6σ is far in the tail.
        assert!(
            y.max_abs_diff(&x) < 6.0 * sigma,
            "{} vs σ={sigma}",
            y.max_abs_diff(&x)
        );
    }
}
