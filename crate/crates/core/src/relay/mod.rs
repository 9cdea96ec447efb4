//! Two-stage relay generation: a low-resolution sample, nearest upsampling,
//! then a blurred high-resolution stage that starts from the upsampled image.

mod dataset;
mod gaussian;
mod quality;
mod sweep;
mod train;

pub use dataset::{ToyDataset, CHECKER_CELLS};
pub use gaussian::{GaussianRelay, PowerLaw};
pub use quality::{coefficient_moments, corpus_psd, default_bins, pixel_moments, QualityReport};
pub use sweep::{
    budget_allocations, eta_sweep, nfe_sweep, write_eta_csv, write_nfe_csv, Allocation, EtaRow,
    NfeRow, ETA_GRID,
};
pub use train::{train_toy, Adam, TrainConfig, TrainLogRow, TrainOutcome};

use rand::Rng;
use rayon::prelude::*;

use crate::denoiser::Denoiser;
use crate::error::{invalid, Result};
use crate::field::{ImageField, Tiling};
use crate::rng::RandomSource;
use crate::sampler::{sample, SampleOptions, SamplerInit, SamplerTrace};
use crate::schedule::ScheduleConfig;
use crate::spectral::{downsample_mean, upsample_nearest};

/// Denoiser evaluations of an `n`-step second-order run: `2n − 1` (0 for no steps).
pub fn heun_nfe(steps: usize) -> usize {
    (2 * steps).saturating_sub(1)
}

/// Relay cost: high-resolution evaluations plus one tenth (rounded up) of the
/// low-resolution ones.
pub fn effective_nfe(stage1_steps: usize, stage2_steps: usize) -> usize {
    heun_nfe(stage2_steps) + heun_nfe(stage1_steps).div_ceil(10)
}

/// Both stages of a relay run.
#[derive(Debug, Clone, PartialEq)]
pub struct RelayConfig {
    /// Side of the low-resolution image.
    pub low_res: usize,
    /// Upsampling factor, equal to the stage-2 blur patch size.
    pub factor: usize,
    /// Low-resolution stage: no blur, iid noise.
    pub stage1: ScheduleConfig,
    /// High-resolution stage: patch blur, block noise, truncated schedule.
    pub stage2: ScheduleConfig,
}

impl Default for RelayConfig {
    /// 8→32 relay with 20 low-resolution and 40 high-resolution steps.
    fn default() -> Self {
        Self {
            low_res: 8,
            factor: 4,
            stage1: ScheduleConfig {
                n_steps: 20,
                ..ScheduleConfig::default()
            },
            stage2: ScheduleConfig {
                n_steps: 40,
                ..ScheduleConfig::relay_stage(4)
            },
        }
    }
}

impl RelayConfig {
    pub fn high_res(&self) -> usize {
        self.low_res * self.factor
    }

    /// `(stage1_steps, stage2_steps)`.
    pub fn nfe_split(&self) -> (usize, usize) {
        (self.stage1.n_steps, self.stage2.n_steps)
    }

    pub fn effective_nfe(&self) -> usize {
        effective_nfe(self.stage1.n_steps, self.stage2.n_steps)
    }

    pub fn validate(&self) -> Result<()> {
        if self.low_res == 0 || self.factor == 0 {
            return Err(invalid("factor", "resolutions must be positive"));
        }
        self.stage1.validate()?;
        self.stage2.validate()?;
        if self.stage1.sigma_b_max != 0.0 || self.stage1.alpha != 0.0 {
            return Err(invalid(
                "stage1",
                "the low-resolution stage uses no blur and iid noise",
            ));
        }
        let high = self.high_res();
        let block = self.stage2.patch.block_dims(high, high)?;
        let identity_ok = self.factor == 1 && self.stage2.sigma_b_max == 0.0;
        if block != (self.factor, self.factor) && !identity_ok {
            return Err(invalid(
                "patch",
                format!(
                    "stage-2 patch {} must equal the upsampling factor {}",
                    self.stage2.patch, self.factor
                ),
            ));
        }
        if self.stage2.alpha > 0.0 {
            self.stage2.noise_spec(1.0).validate()?;
            if self.stage2.kernel > high {
                return Err(invalid("kernel", "block kernel exceeds the image"));
            }
        }
        self.stage1.patch.block_dims(self.low_res, self.low_res)?;
        Ok(())
    }

    /// Stage-2 tiling implied by `factor`.
    pub fn patch_tiling(&self) -> Tiling {
        Tiling::Patch(self.factor)
    }
}

/// Everything produced by one relay run.
#[derive(Debug, Clone)]
pub struct RelayOutput {
    pub image: ImageField,
    pub stage1: ImageField,
    pub upsampled: ImageField,
    pub trace1: SamplerTrace,
    pub trace2: SamplerTrace,
    pub effective_nfe: usize,
    /// Mean `|block mean of output − stage-1 pixel|`: how far stage 2 moved
    /// the low frequencies it started from.
    pub patch_deviation: f64,
}

/// Runs both stages. `label` conditions both denoisers.
pub fn run_relay<D1: Denoiser + ?Sized, D2: Denoiser + ?Sized, R: Rng + ?Sized>(
    cfg: &RelayConfig,
    stage1: &D1,
    stage2: &D2,
    label: Option<usize>,
    rng: &mut R,
) -> Result<RelayOutput> {
    cfg.validate()?;
    let opts = SampleOptions {
        label,
        record_states: false,
    };
    let init = SamplerInit::PureNoise {
        height: cfg.low_res,
        width: cfg.low_res,
    };
    let (low, trace1) = sample(stage1, &cfg.stage1, init, opts, rng)?;
    let upsampled = upsample_nearest(&low, cfg.factor)?;
    let (image, trace2) = sample(
        stage2,
        &cfg.stage2,
        SamplerInit::Relay(&upsampled),
        opts,
        rng,
    )?;
    let back = downsample_mean(&image, cfg.factor)?;
    let patch_deviation = back
        .values()
        .iter()
        .zip(low.values())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / low.len() as f64;
    let effective_nfe = trace2.nfe + trace1.nfe.div_ceil(10);
    Ok(RelayOutput {
        image,
        stage1: low,
        upsampled,
        trace1,
        trace2,
        effective_nfe,
        patch_deviation,
    })
}

/// One image of a generated corpus.
#[derive(Debug, Clone)]
pub struct RelaySample {
    pub image: ImageField,
    pub label: Option<usize>,
    pub patch_deviation: f64,
}

/// `count` independent relay runs; run `i` uses stream `i` of `source`.
///
/// With `classes > 0` run `i` is conditioned on class `i mod classes`, giving
/// exactly balanced class quotas. Results are in run order whatever the
/// thread count.
pub fn generate_corpus<D1: Denoiser, D2: Denoiser>(
    cfg: &RelayConfig,
    stage1: &D1,
    stage2: &D2,
    count: usize,
    classes: usize,
    source: RandomSource,
) -> Result<Vec<RelaySample>> {
    cfg.validate()?;
    (0..count)
        .into_par_iter()
        .map(|i| {
            let label = (classes > 0).then(|| i % classes);
            let mut rng = source.stream(i as u64);
            let out = run_relay(cfg, stage1, stage2, label, &mut rng)?;
            Ok(RelaySample {
                image: out.image,
                label,
                patch_deviation: out.patch_deviation,
            })
        })
        .collect()
}
