//! Stochasticity and step-allocation sweeps over relay configurations.
//!
//! Every cell of a sweep draws its corpus from the same random source, so
//! cells differ only in the swept setting (common random numbers).

use std::io::Write;

use super::{effective_nfe, generate_corpus, QualityReport, RelayConfig};
use crate::denoiser::Denoiser;
use crate::error::{invalid, Result};
use crate::field::ImageField;
use crate::rng::RandomSource;

/// Default stochasticity grid for the eta sweep.
pub const ETA_GRID: [f64; 8] = [0.0, 0.10, 0.15, 0.20, 0.25, 0.30, 0.40, 0.50];

/// A split of a step budget between the two stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Allocation {
    /// Budget `N` the allocation belongs to.
    pub total: usize,
    /// Strategy index `n`: `10n` low-resolution steps, `N/2 − n` high-resolution steps.
    pub n: usize,
    pub stage1_steps: usize,
    pub stage2_steps: usize,
}

impl Allocation {
    pub fn effective_nfe(&self) -> usize {
        effective_nfe(self.stage1_steps, self.stage2_steps)
    }
}

/// Strategies `n = 1, 2, 3` at each budget: `10n` stage-1 steps and
/// `N/2 − n` stage-2 steps. Every allocation costs `N − 1` effective evaluations.
pub fn budget_allocations(totals: &[usize]) -> Result<Vec<Allocation>> {
    let mut out = Vec::new();
    for &total in totals {
        if total % 2 != 0 || total / 2 <= 3 {
            return Err(invalid(
                "totals",
                format!("budget {total} must be even and above 6"),
            ));
        }
        for n in 1..=3 {
            out.push(Allocation {
                total,
                n,
                stage1_steps: 10 * n,
                stage2_steps: total / 2 - n,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NfeRow {
    pub allocation: Allocation,
    pub quality: QualityReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EtaRow {
    pub eta: f64,
    pub quality: QualityReport,
}

impl EtaRow {
    /// `ODE` for the deterministic sampler, `SDE` otherwise.
    pub fn mode(&self) -> &'static str {
        if self.eta == 0.0 {
            "ODE"
        } else {
            "SDE"
        }
    }
}

fn evaluate<D1: Denoiser, D2: Denoiser>(
    cfg: &RelayConfig,
    stage1: &D1,
    stage2: &D2,
    reference: &[ImageField],
    samples: usize,
    source: RandomSource,
) -> Result<QualityReport> {
    let corpus = generate_corpus(cfg, stage1, stage2, samples, 0, source)?;
    let images: Vec<ImageField> = corpus.into_iter().map(|s| s.image).collect();
    let n = cfg.high_res();
    QualityReport::compare(&images, reference, super::default_bins(n, n), None)
}

/// Quality of each step allocation, all other settings from `base`.
pub fn nfe_sweep<D1: Denoiser, D2: Denoiser>(
    base: &RelayConfig,
    allocations: &[Allocation],
    stage1: &D1,
    stage2: &D2,
    reference: &[ImageField],
    samples: usize,
    source: RandomSource,
) -> Result<Vec<NfeRow>> {
    allocations
        .iter()
        .map(|a| {
            let mut cfg = base.clone();
            cfg.stage1.n_steps = a.stage1_steps;
            cfg.stage2.n_steps = a.stage2_steps;
            Ok(NfeRow {
                allocation: *a,
                quality: evaluate(&cfg, stage1, stage2, reference, samples, source)?,
            })
        })
        .collect()
}

/// Quality for each stage-2 `η`, all other settings from `base`.
pub fn eta_sweep<D1: Denoiser, D2: Denoiser>(
    base: &RelayConfig,
    etas: &[f64],
    stage1: &D1,
    stage2: &D2,
    reference: &[ImageField],
    samples: usize,
    source: RandomSource,
) -> Result<Vec<EtaRow>> {
    etas.iter()
        .map(|&eta| {
            let mut cfg = base.clone();
            cfg.stage2.eta = eta;
            Ok(EtaRow {
                eta,
                quality: evaluate(&cfg, stage1, stage2, reference, samples, source)?,
            })
        })
        .collect()
}

pub fn write_nfe_csv<W: Write>(rows: &[NfeRow], mut out: W) -> Result<()> {
    writeln!(
        out,
        "total_n,strategy_n,stage1_steps,stage2_steps,effective_nfe,spectral_distance,mean_error,var_error"
    )?;
    for r in rows {
        let a = &r.allocation;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            a.total,
            a.n,
            a.stage1_steps,
            a.stage2_steps,
            a.effective_nfe(),
            r.quality.spectral_distance,
            r.quality.mean_error,
            r.quality.var_error
        )?;
    }
    Ok(())
}

pub fn write_eta_csv<W: Write>(rows: &[EtaRow], mut out: W) -> Result<()> {
    writeln!(out, "eta,mode,spectral_distance,mean_error,var_error")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.eta,
            r.mode(),
            r.quality.spectral_distance,
            r.quality.mean_error,
            r.quality.var_error
        )?;
    }
    Ok(())
}
