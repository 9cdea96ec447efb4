//! Matched Gaussian priors at both relay resolutions, with exact denoisers.
//!
//! The high-resolution prior is diagonal in the `k×k` patch DCT basis with a
//! variance depending only on the local frequency. Averaging each patch of a
//! high-resolution draw gives the low-resolution prior: iid pixels with
//! variance `c₀₀/k²` around the block means of the high-resolution mean.

use rayon::prelude::*;

use super::RelayConfig;
use crate::denoiser::{AnalyticDenoiser, GaussianToyPrior};
use crate::error::{invalid, Result};
use crate::field::{ImageField, Tiling};
use crate::rng::RandomSource;
use crate::spectral::{dct2_tiled, downsample_mean};

/// Per-frequency variance `amplitude / (floor + |f|²)^(exponent/2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerLaw {
    pub amplitude: f64,
    pub exponent: f64,
    pub floor: f64,
}

impl Default for PowerLaw {
    fn default() -> Self {
        Self {
            amplitude: 0.5,
            exponent: 2.0,
            floor: 0.25,
        }
    }
}

impl PowerLaw {
    pub fn variance(&self, fy: f64, fx: f64) -> f64 {
        self.amplitude / (self.floor + fy * fy + fx * fx).powf(self.exponent / 2.0)
    }
}

/// The Gaussian relay problem: both priors and the stage configuration.
#[derive(Debug, Clone)]
pub struct GaussianRelay {
    pub high: GaussianToyPrior,
    pub low: GaussianToyPrior,
    pub config: RelayConfig,
}

impl GaussianRelay {
    /// Builds both priors. The high-resolution mean is
    /// `mean_amplitude·cos(2πi/H)·cos(2πj/W)`.
    pub fn new(config: RelayConfig, spectrum: PowerLaw, mean_amplitude: f64) -> Result<Self> {
        config.validate()?;
        if !(spectrum.amplitude > 0.0 && spectrum.floor > 0.0) {
            return Err(invalid("spectrum", "amplitude and floor must be positive"));
        }
        let (k, n) = (config.factor, config.high_res());
        let tiling = if k == 1 {
            Tiling::Global
        } else {
            Tiling::Patch(k)
        };
        let two_pi = 2.0 * std::f64::consts::PI;
        let mean_img = ImageField::from_fn(n, n, |i, j| {
            mean_amplitude
                * (two_pi * i as f64 / n as f64).cos()
                * (two_pi * j as f64 / n as f64).cos()
        });
        let high = GaussianToyPrior::from_spectrum(dct2_tiled(&mean_img, tiling)?, |fy, fx| {
            spectrum.variance(fy, fx)
        })?;
        let dc_var = spectrum.variance(0.0, 0.0) / (k * k) as f64;
        let low_mean = dct2_tiled(&downsample_mean(&mean_img, k)?, Tiling::Global)?;
        let low = GaussianToyPrior::from_spectrum(low_mean, |_, _| dc_var)?;
        Ok(Self { high, low, config })
    }

    /// Exact posterior-mean denoisers for stage 1 and stage 2.
    pub fn denoisers(&self) -> Result<(AnalyticDenoiser, AnalyticDenoiser)> {
        Ok((
            AnalyticDenoiser::new(self.low.clone(), self.config.stage1.clone())?,
            AnalyticDenoiser::new(self.high.clone(), self.config.stage2.clone())?,
        ))
    }

    /// `count` direct high-resolution prior draws; draw `i` uses stream `i`.
    pub fn reference_corpus(&self, count: usize, source: RandomSource) -> Result<Vec<ImageField>> {
        (0..count)
            .into_par_iter()
            .map(|i| self.high.sample(&mut source.stream(i as u64)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RandomSource;

    #[test]
    fn low_prior_is_block_mean_of_high() {
        let g = GaussianRelay::new(RelayConfig::default(), PowerLaw::default(), 0.3).unwrap();
        let src = RandomSource::new(3);
        let n = 4000;
        let mut acc = vec![0.0; 64];
        let mut acc2 = vec![0.0; 64];
        for i in 0..n {
            let x = g.high.sample(&mut src.stream(i)).unwrap();
            let d = downsample_mean(&x, 4).unwrap();
            for (k, v) in d.values().iter().enumerate() {
                acc[k] += v;
                acc2[k] += v * v;
            }
        }
        let mean = g.low.mean_image().unwrap();
        let var = g.low.var()[0];
        let se = (var / n as f64).sqrt();
        for k in 0..64 {
            let m = acc[k] / n as f64;
            let v = acc2[k] / n as f64 - m * m;
            assert!((m - mean.values()[k]).abs() < 4.5 * se, "pixel {k}");
            assert!((v / var - 1.0).abs() < 0.1, "pixel {k}: {v} vs {var}");
        }
        assert!(g.low.var().iter().all(|v| *v == var));
    }
}
