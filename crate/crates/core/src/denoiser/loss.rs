//! Training objective `‖D(x_t, σ′(t)) − x‖²` over the stage's forward corruption.

use rand::Rng;
use rayon::prelude::*;

use super::{ConvDenoiserParams, Denoiser};
use crate::blur::{corrupt, Corruption};
use crate::error::{invalid, Result};
use crate::field::ImageField;
use crate::schedule::ScheduleConfig;

/// One training example: a clean image with its corruption and optional label.
#[derive(Debug, Clone)]
pub struct LossSample {
    pub clean: ImageField,
    pub corruption: Corruption,
    pub label: Option<usize>,
}

impl LossSample {
    /// Corrupts `x` at time `t ∈ (0, 1)` with the stage's blur and noise.
    pub fn draw<R: Rng + ?Sized>(
        x: &ImageField,
        t: f64,
        cfg: &ScheduleConfig,
        label: Option<usize>,
        rng: &mut R,
    ) -> Result<Self> {
        if !(t > 0.0 && t < 1.0) {
            return Err(invalid(
                "t",
                format!("training time must lie in (0, 1), got {t}"),
            ));
        }
        Ok(Self {
            clean: x.clone(),
            corruption: corrupt(x, t, cfg, rng)?,
            label,
        })
    }

    /// Pixel-mean squared error of any denoiser on this example.
    pub fn loss<D: Denoiser + ?Sized>(&self, den: &D) -> Result<f64> {
        let est = den.denoise(&self.corruption.x_t, self.corruption.sigma, self.label)?;
        self.clean.ensure_same_shape(&est)?;
        Ok(est
            .values()
            .iter()
            .zip(self.clean.values())
            .map(|(d, x)| (d - x) * (d - x))
            .sum::<f64>()
            / self.clean.len() as f64)
    }

    /// Loss and parameter gradient of the convolutional denoiser.
    pub fn loss_and_grad(&self, params: &ConvDenoiserParams) -> Result<(f64, Vec<f64>)> {
        params.loss_and_grad(
            &self.clean,
            &self.corruption.x_t,
            self.corruption.sigma,
            self.label,
        )
    }
}

/// Loss of one freshly corrupted example together with its exact gradient.
pub fn rdm_loss<R: Rng + ?Sized>(
    params: &ConvDenoiserParams,
    x: &ImageField,
    t: f64,
    cfg: &ScheduleConfig,
    label: Option<usize>,
    rng: &mut R,
) -> Result<(f64, Vec<f64>)> {
    LossSample::draw(x, t, cfg, label, rng)?.loss_and_grad(params)
}

/// Loss of one freshly corrupted example for an arbitrary denoiser.
pub fn rdm_loss_value<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    den: &D,
    x: &ImageField,
    t: f64,
    cfg: &ScheduleConfig,
    label: Option<usize>,
    rng: &mut R,
) -> Result<f64> {
    LossSample::draw(x, t, cfg, label, rng)?.loss(den)
}

/// Mean loss and gradient over a batch.
///
/// Per-example gradients are computed in parallel and summed in batch order,
/// so the result does not depend on the number of threads.
pub fn batch_loss_and_grad(
    params: &ConvDenoiserParams,
    batch: &[LossSample],
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(invalid("batch", "empty batch"));
    }
    let parts: Vec<(f64, Vec<f64>)> = batch
        .par_iter()
        .map(|s| s.loss_and_grad(params))
        .collect::<Result<_>>()?;
    let n = batch.len() as f64;
    let mut grad = vec![0.0; params.len()];
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += l;
        for (acc, v) in grad.iter_mut().zip(g) {
            *acc += v;
        }
    }
    grad.iter_mut().for_each(|g| *g /= n);
    Ok((loss / n, grad))
}

/// Mean loss of any denoiser over a batch, in batch order.
pub fn batch_loss<D: Denoiser + ?Sized>(den: &D, batch: &[LossSample]) -> Result<f64> {
    if batch.is_empty() {
        return Err(invalid("batch", "empty batch"));
    }
    let parts: Vec<f64> = batch
        .par_iter()
        .map(|s| s.loss(den))
        .collect::<Result<_>>()?;
    Ok(parts.iter().sum::<f64>() / batch.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::{AnalyticDenoiser, FixedDenoiser, GaussianToyPrior};
    use crate::field::Tiling;
    use crate::rng::{standard_normal, RandomSource};

    #[test]
    fn oracle_denoiser_has_zero_loss() {
        let x = ImageField::from_fn(8, 8, |i, j| ((i + 2 * j) % 5) as f64 / 4.0 - 0.5);
        let cfg = ScheduleConfig::relay_stage(4);
        let mut rng = RandomSource::new(1).stream(0);
        let oracle = FixedDenoiser { clean: x.clone() };
        assert_eq!(
            rdm_loss_value(&oracle, &x, 0.5, &cfg, None, &mut rng).unwrap(),
            0.0
        );
        assert!(rdm_loss_value(&oracle, &x, 1.0, &cfg, None, &mut rng).is_err());
    }

    /// Plain-noise corruption without blur reproduces `x + σ′(t)·ε` exactly.
    #[test]
    fn unblurred_corruption_is_plain_noise() {
        let cfg = ScheduleConfig::default();
        let x = ImageField::from_fn(4, 4, |i, j| (i * j) as f64 / 9.0);
        let mut a = RandomSource::new(8).stream(0);
        let mut b = a.clone();
        let s = LossSample::draw(&x, 0.3, &cfg, None, &mut a).unwrap();
        let sigma = cfg.sampler_sigma(0.3);
        let eps = ImageField::from_fn(4, 4, |_, _| standard_normal(&mut b));
        let plain = x.add_scaled(&eps, sigma).unwrap();
        assert_eq!(s.corruption.sigma, sigma);
        assert!(s
            .corruption
            .x_t
            .values()
            .iter()
            .zip(plain.values())
            .all(|(u, v)| u.to_bits() == v.to_bits()));
    }

    #[test]
    fn analytic_loss_equals_posterior_variance() {
        let cfg = ScheduleConfig::default();
        let prior = GaussianToyPrior::power_law(4, 4, Tiling::Global, 0.2, 1.5, 0.3).unwrap();
        let den = AnalyticDenoiser::new(prior.clone(), cfg.clone()).unwrap();
        let t = 0.4;
        let sigma = cfg.sampler_sigma(t);
        let expected: f64 = prior
            .var()
            .iter()
            .map(|c| c * sigma * sigma / (c + sigma * sigma))
            .sum::<f64>()
            / 16.0;
        let src = RandomSource::new(4);
        let n = 10_000;
        let losses: Vec<f64> = (0..n)
            .map(|k| {
                let mut rng = src.stream(k);
                let x = prior.sample(&mut rng).unwrap();
                rdm_loss_value(&den, &x, t, &cfg, None, &mut rng).unwrap()
            })
            .collect();
        let mean = losses.iter().sum::<f64>() / n as f64;
        let var = losses.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let se = (var / n as f64).sqrt();
        assert!(
            (mean - expected).abs() < 3.0 * se,
            "{mean} vs {expected} (se {se})"
        );
    }

    #[test]
    fn batch_gradient_is_mean_of_examples() {
        let mut rng = RandomSource::new(13).stream(0);
        let p = ConvDenoiserParams::init(3, 0, 0.5, &mut rng).unwrap();
        let cfg = ScheduleConfig::relay_stage(2);
        let batch: Vec<LossSample> = (0..5)
            .map(|_| {
                let x = ImageField::from_fn(4, 4, |_, _| 0.5 * standard_normal(&mut rng));
                LossSample::draw(&x, 0.5, &cfg, None, &mut rng).unwrap()
            })
            .collect();
        let (l, g) = batch_loss_and_grad(&p, &batch).unwrap();
        let mut acc = vec![0.0; p.len()];
        let mut lsum = 0.0;
        for s in &batch {
            let (li, gi) = s.loss_and_grad(&p).unwrap();
            lsum += li;
            acc.iter_mut().zip(&gi).for_each(|(a, v)| *a += v);
        }
        assert!((l - lsum / 5.0).abs() < 1e-15);
        assert!(acc.iter().zip(&g).all(|(a, b)| (a / 5.0 - b).abs() < 1e-15));
        assert!((batch_loss(&p, &batch).unwrap() - l).abs() < 1e-15);
    }
}
