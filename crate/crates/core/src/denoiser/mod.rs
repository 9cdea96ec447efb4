//! Denoisers `D(x_t, σ) ≈ x`, their preconditioning, guidance and training loss.

mod analytic;
pub mod checkpoint;
mod conv;
mod loss;

pub use analytic::{analytic_denoiser, AnalyticDenoiser, GaussianToyPrior};
pub use conv::{ConvDenoiserParams, MAX_CLASSES, MAX_PARAMS};
pub use loss::{batch_loss, batch_loss_and_grad, rdm_loss, rdm_loss_value, LossSample};

use crate::error::{invalid, Result};
use crate::field::ImageField;

/// Estimator of the clean image from a corrupted one at noise level `sigma`.
///
/// Implementations must be pure: the same input, `sigma` and label always give
/// the same output.
pub trait Denoiser: Sync {
    fn denoise(&self, x: &ImageField, sigma: f64, label: Option<usize>) -> Result<ImageField>;
}

impl<D: Denoiser + ?Sized> Denoiser for &D {
    fn denoise(&self, x: &ImageField, sigma: f64, label: Option<usize>) -> Result<ImageField> {
        (**self).denoise(x, sigma, label)
    }
}

/// Skip, output, input and noise-embedding coefficients of the preconditioned denoiser.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preconditioning {
    pub c_skip: f64,
    pub c_out: f64,
    pub c_in: f64,
    pub c_noise: f64,
}

impl Preconditioning {
    pub fn new(sigma: f64, sigma_data: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(invalid("sigma", format!("must be positive, got {sigma}")));
        }
        let s2 = sigma * sigma;
        let d2 = sigma_data * sigma_data;
        let norm = (s2 + d2).sqrt();
        Ok(Self {
            c_skip: d2 / (s2 + d2),
            c_out: sigma * sigma_data / norm,
            c_in: 1.0 / norm,
            c_noise: sigma.ln() / 4.0,
        })
    }
}

/// `D(x, σ) = c_skip(σ)·x + c_out(σ)·raw`.
pub fn precondition(
    raw: &ImageField,
    input: &ImageField,
    sigma: f64,
    sigma_data: f64,
) -> Result<ImageField> {
    raw.ensure_same_shape(input)?;
    let p = Preconditioning::new(sigma, sigma_data)?;
    input.scaled(p.c_skip).add_scaled(raw, p.c_out)
}

/// Classifier-free guidance: `uncond + w·(cond − uncond)`.
pub fn cfg_combine(cond: &ImageField, uncond: &ImageField, w: f64) -> Result<ImageField> {
    uncond.ensure_same_shape(cond)?;
    let values = uncond
        .values()
        .iter()
        .zip(cond.values())
        .map(|(u, c)| u + w * (c - u))
        .collect();
    Ok(ImageField::from_raw(
        uncond.height(),
        uncond.width(),
        values,
    ))
}

/// Wraps a class-conditional denoiser with classifier-free guidance.
#[derive(Debug, Clone)]
pub struct GuidedDenoiser<D> {
    pub inner: D,
    pub weight: f64,
}

impl<D: Denoiser> Denoiser for GuidedDenoiser<D> {
    fn denoise(&self, x: &ImageField, sigma: f64, label: Option<usize>) -> Result<ImageField> {
        let uncond = self.inner.denoise(x, sigma, None)?;
        match label {
            None => Ok(uncond),
            Some(l) => {
                let cond = self.inner.denoise(x, sigma, Some(l))?;
                cfg_combine(&cond, &uncond, self.weight)
            }
        }
    }
}

/// Returns a fixed clean image whatever the input; the "oracle" of sampler checks.
#[derive(Debug, Clone)]
pub struct FixedDenoiser {
    pub clean: ImageField,
}

impl Denoiser for FixedDenoiser {
    fn denoise(&self, x: &ImageField, _sigma: f64, _label: Option<usize>) -> Result<ImageField> {
        x.ensure_same_shape(&self.clean)?;
        Ok(self.clean.clone())
    }
}
