//! Exact posterior-mean denoiser for Gaussian data diagonal in a DCT basis.

use rand::Rng;

use super::Denoiser;
use crate::blur::BlurOperator;
use crate::error::{invalid, Error, Result};
use crate::field::{FreqField, ImageField, Tiling};
use crate::rng::standard_normal;
use crate::schedule::{blur_schedule, ScheduleConfig};
use crate::spectral::{dct2_tiled, idct2};

/// Independent Gaussian prior `u₀,f ~ N(μ_f, c_f)` over the coefficients of a
/// (possibly tiled) DCT basis.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianToyPrior {
    mean: FreqField,
    var: Vec<f64>,
}

impl GaussianToyPrior {
    pub fn new(mean: FreqField, var: Vec<f64>) -> Result<Self> {
        if var.len() != mean.len() {
            return Err(Error::InvalidData(format!(
                "expected {} prior variances, got {}",
                mean.len(),
                var.len()
            )));
        }
        if let Some(v) = var.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
            return Err(invalid(
                "var",
                format!("prior variances must be positive, got {v}"),
            ));
        }
        Ok(Self { mean, var })
    }

    /// Prior whose variance depends only on each coefficient's frequency pair.
    pub fn from_spectrum(mean: FreqField, mut var_of: impl FnMut(f64, f64) -> f64) -> Result<Self> {
        let (h, w) = mean.shape();
        let mut var = Vec::with_capacity(h * w);
        for i in 0..h {
            for j in 0..w {
                let (fy, fx) = mean.frequency(i, j);
                var.push(var_of(fy, fx));
            }
        }
        Self::new(mean, var)
    }

    /// Zero-mean prior with power-law spectrum `c_f = amplitude / (floor + |f|²)^(exponent/2)`.
    pub fn power_law(
        h: usize,
        w: usize,
        tiling: Tiling,
        amplitude: f64,
        exponent: f64,
        floor: f64,
    ) -> Result<Self> {
        let mean = FreqField::zeros(h, w, tiling)?;
        Self::from_spectrum(mean, |fy, fx| {
            amplitude / (floor + fy * fy + fx * fx).powf(exponent / 2.0)
        })
    }

    pub fn mean(&self) -> &FreqField {
        &self.mean
    }

    pub fn var(&self) -> &[f64] {
        &self.var
    }

    pub fn shape(&self) -> (usize, usize) {
        self.mean.shape()
    }

    pub fn tiling(&self) -> Tiling {
        self.mean.tiling()
    }

    /// Prior mean in pixel space.
    pub fn mean_image(&self) -> Result<ImageField> {
        idct2(&self.mean)
    }

    /// Per-pixel marginal variance `Σ_f c_f·V(p, f)²`.
    pub fn pixel_variance(&self) -> Result<ImageField> {
        let (h, w) = self.shape();
        let block = self.mean.block();
        let mut out = vec![0.0; h * w];
        // The basis vectors of distinct coefficients are orthonormal, so the
        // variance of pixel p is the squared-weighted sum over coefficients.
        for idx in 0..h * w {
            let mut unit = vec![0.0; h * w];
            unit[idx] = self.var[idx].sqrt();
            let img = idct2(&FreqField::from_raw(h, w, block, unit))?;
            for (o, v) in out.iter_mut().zip(img.values()) {
                *o += v * v;
            }
        }
        Ok(ImageField::from_raw(h, w, out))
    }

    /// One exact draw in frequency space.
    pub fn sample_freq<R: Rng + ?Sized>(&self, rng: &mut R) -> FreqField {
        let (h, w) = self.shape();
        let coeffs = self
            .mean
            .coeffs()
            .iter()
            .zip(&self.var)
            .map(|(m, c)| m + c.sqrt() * standard_normal(rng))
            .collect();
        FreqField::from_raw(h, w, self.mean.block(), coeffs)
    }

    /// One exact draw in pixel space.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ImageField> {
        idct2(&self.sample_freq(rng))
    }

    /// Per-coefficient posterior variance `c·σ²/(c·d² + σ²)` given `d·u₀ + σε`.
    pub fn posterior_variance(&self, sigma: f64, blur: &BlurOperator) -> Result<Vec<f64>> {
        check_blur(&self.mean, blur)?;
        Ok(self
            .var
            .iter()
            .zip(blur.decay())
            .map(|(c, d)| c * sigma * sigma / (c * d * d + sigma * sigma))
            .collect())
    }
}

fn check_blur(u: &FreqField, blur: &BlurOperator) -> Result<()> {
    if blur.shape() != u.shape() || blur.block() != u.block() {
        return Err(invalid(
            "blur",
            format!(
                "operator basis {:?}/{:?} does not match field {:?}/{:?}",
                blur.shape(),
                blur.block(),
                u.shape(),
                u.block()
            ),
        ));
    }
    Ok(())
}

/// Posterior mean `E[u₀ | u_t]` for `u_t = d·u₀ + σε`, coefficient by coefficient:
/// `μ + c·d/(c·d² + σ²)·(u_t − d·μ)`.
pub fn analytic_denoiser(
    prior: &GaussianToyPrior,
    u_t: &FreqField,
    sigma: f64,
    blur: &BlurOperator,
) -> Result<FreqField> {
    prior.mean.same_basis(u_t)?;
    check_blur(u_t, blur)?;
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(invalid("sigma", format!("must be positive, got {sigma}")));
    }
    let s2 = sigma * sigma;
    let coeffs = u_t
        .coeffs()
        .iter()
        .zip(prior.mean.coeffs())
        .zip(prior.var.iter().zip(blur.decay()))
        .map(|((u, m), (c, d))| m + c * d / (c * d * d + s2) * (u - d * m))
        .collect();
    let (h, w) = u_t.shape();
    Ok(FreqField::from_raw(h, w, u_t.block(), coeffs))
}

/// [`analytic_denoiser`] behind the [`Denoiser`] interface.
///
/// The blur amount is recovered from `σ` through the stage schedule, so the
/// denoiser is exact for corruptions `V D_t Vᵀ x + σ′(t)·ε` with isotropic `ε`.
/// Block-noise mixing (`α > 0`) makes it an approximation.
#[derive(Debug, Clone)]
pub struct AnalyticDenoiser {
    pub prior: GaussianToyPrior,
    pub schedule: ScheduleConfig,
}

impl AnalyticDenoiser {
    pub fn new(prior: GaussianToyPrior, schedule: ScheduleConfig) -> Result<Self> {
        schedule.validate()?;
        if schedule.sigma_b_max > 0.0 {
            let (h, w) = prior.shape();
            if schedule.patch.block_dims(h, w)? != prior.mean.block() {
                return Err(invalid(
                    "patch",
                    format!(
                        "blurring tiling {} differs from the prior basis {}",
                        schedule.patch,
                        prior.tiling()
                    ),
                ));
            }
        }
        Ok(Self { prior, schedule })
    }

    /// Blur operator the schedule pairs with noise level `sigma`.
    pub fn blur_for_sigma(&self, sigma: f64) -> Result<BlurOperator> {
        let (h, w) = self.prior.shape();
        let t = self.schedule.time_for_sigma(sigma);
        BlurOperator::new(h, w, self.prior.tiling(), blur_schedule(t, &self.schedule)?)
    }
}

impl Denoiser for AnalyticDenoiser {
    fn denoise(&self, x: &ImageField, sigma: f64, _label: Option<usize>) -> Result<ImageField> {
        if x.shape() != self.prior.shape() {
            return Err(Error::ShapeMismatch {
                expected: self.prior.shape(),
                actual: x.shape(),
            });
        }
        let u = dct2_tiled(x, self.prior.tiling())?;
        let blur = self.blur_for_sigma(sigma)?;
        idct2(&analytic_denoiser(&self.prior, &u, sigma, &blur)?)
    }
}
