//! Noise and blur schedules.
//!
//! The noise level follows the log-normal quantile schedule
//! `σ(t) = exp(P_mean + P_std·Φ⁻¹(t))`. The high-resolution stage uses the
//! truncated schedule `σ′(t) = σ(t_s·t)`, and blurring uses
//! `σ_B(t) = σ_B,max·sin²(πt/2)` with dissipation time `τ(t) = σ_B(t)²/2`.

use std::f64::consts::{FRAC_PI_2, SQRT_2};
use std::io::Write;

use crate::error::{invalid, Result};
use crate::field::Tiling;
use crate::noise::NoiseSpec;

/// Every parameter of one diffusion stage.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleConfig {
    /// Mean of `ln σ`.
    pub p_mean: f64,
    /// Standard deviation of `ln σ`.
    pub p_std: f64,
    /// Truncation point `t_s ∈ (0, 1]`; 1 disables truncation.
    pub t_s: f64,
    /// Blur scale at `t = 1`; 0 disables blurring.
    pub sigma_b_max: f64,
    /// Sampler steps `N`.
    pub n_steps: usize,
    /// Sampler stochasticity `η ∈ [0, 1)`.
    pub eta: f64,
    /// Block-noise mixing weight `α`.
    pub alpha: f64,
    /// Block-noise kernel `s`.
    pub kernel: usize,
    /// Tiling of the blur operator and of the sampler's frequency basis.
    pub patch: Tiling,
    /// Data standard deviation used by the denoiser preconditioning.
    pub sigma_data: f64,
    /// Lower end of the sampler's time grid.
    pub t_min: f64,
    /// Draw a fresh noise sample for the second-order correction instead of
    /// reusing the Euler proposal's draw.
    pub fresh_correction_noise: bool,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            p_mean: -1.2,
            p_std: 1.2,
            t_s: 1.0,
            sigma_b_max: 0.0,
            n_steps: 40,
            eta: 0.2,
            alpha: 0.0,
            kernel: 1,
            patch: Tiling::Global,
            sigma_data: 0.5,
            t_min: 1e-3,
            fresh_correction_noise: false,
        }
    }
}

impl ScheduleConfig {
    /// High-resolution relay stage: patch-wise blur with block size `k`,
    /// block noise with kernel `k` mixed at `α = 0.15`.
    pub fn relay_stage(k: usize) -> Self {
        Self {
            t_s: 0.8,
            sigma_b_max: 2.0,
            alpha: 0.15,
            kernel: k,
            patch: Tiling::Patch(k),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.p_mean.is_finite() {
            return Err(invalid("p_mean", "must be finite"));
        }
        if !(self.p_std > 0.0) || !self.p_std.is_finite() {
            return Err(invalid(
                "p_std",
                format!("must be positive, got {}", self.p_std),
            ));
        }
        if !(self.t_s > 0.0 && self.t_s <= 1.0) {
            return Err(invalid(
                "t_s",
                format!("must lie in (0, 1], got {}", self.t_s),
            ));
        }
        if !(self.sigma_b_max >= 0.0) || !self.sigma_b_max.is_finite() {
            return Err(invalid("sigma_b_max", "must be a non-negative number"));
        }
        if !(self.eta >= 0.0 && self.eta < 1.0) {
            return Err(invalid(
                "eta",
                format!("must lie in [0, 1), got {}", self.eta),
            ));
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(invalid("alpha", "must be a non-negative number"));
        }
        if self.kernel == 0 {
            return Err(invalid("kernel", "must be positive"));
        }
        if let Tiling::Patch(0) = self.patch {
            return Err(invalid("patch", "must be positive"));
        }
        if !(self.sigma_data > 0.0) || !self.sigma_data.is_finite() {
            return Err(invalid("sigma_data", "must be positive"));
        }
        if !(self.t_min > 0.0 && self.t_min < 0.5) {
            return Err(invalid(
                "t_min",
                format!("must lie in (0, 0.5), got {}", self.t_min),
            ));
        }
        Ok(())
    }

    /// Noise specification at scale `sigma` with this stage's kernel and `α`.
    pub fn noise_spec(&self, sigma: f64) -> NoiseSpec {
        NoiseSpec {
            sigma,
            kernel: self.kernel,
            alpha: self.alpha,
        }
    }

    /// Sampler time grid `t_0 < … < t_N`, uniform over `[t_min, 1]`.
    pub fn time_grid(&self) -> Vec<f64> {
        let n = self.n_steps;
        if n == 0 {
            return vec![1.0];
        }
        (0..=n)
            .map(|i| self.t_min + (1.0 - self.t_min) * i as f64 / n as f64)
            .collect()
    }

    /// Noise level the sampler uses at grid time `t`: `σ(t_s·t)`, with the
    /// schedule argument capped at `1 − t_min` so that `t_s = 1` stays finite.
    pub fn sampler_sigma(&self, t: f64) -> f64 {
        let arg = (self.t_s * t).min(1.0 - self.t_min);
        log_normal_sigma(arg, self.p_mean, self.p_std)
    }

    /// Grid time whose [`sampler_sigma`](Self::sampler_sigma) equals `sigma`.
    pub fn time_for_sigma(&self, sigma: f64) -> f64 {
        let z = (sigma.ln() - self.p_mean) / self.p_std;
        (norm_cdf(z) / self.t_s).clamp(0.0, 1.0)
    }
}

/// Standard normal CDF.
pub fn norm_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / SQRT_2)
}

/// Standard normal quantile `Φ⁻¹(p)` for `p ∈ (0, 1)`.
///
/// Acklam's rational approximation (relative error below 1.2e-9) followed by
/// one Halley step against the erfc-based CDF, which brings the result to
/// within a few ulps.
pub fn norm_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.02425;

    let x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };

    // Halley refinement. In the upper tail work with the complement to keep precision.
    let (err, x) = if p > 0.5 {
        (-(0.5 * libm::erfc(x / SQRT_2) - (1.0 - p)), x)
    } else {
        (norm_cdf(x) - p, x)
    };
    let u = err * (2.0 * std::f64::consts::PI).sqrt() * (0.5 * x * x).exp();
    x - u / (1.0 + 0.5 * x * u)
}

fn log_normal_sigma(t: f64, p_mean: f64, p_std: f64) -> f64 {
    (p_mean + p_std * norm_quantile(t)).exp()
}

/// `σ(t) = exp(Φ⁻¹(t)·P_std + P_mean)` for `t ∈ (0, 1)`.
pub fn sigma_schedule(t: f64, cfg: &ScheduleConfig) -> Result<f64> {
    if !(t > 0.0 && t < 1.0) {
        return Err(invalid(
            "t",
            format!("noise schedule needs t in (0, 1), got {t}"),
        ));
    }
    Ok(log_normal_sigma(t, cfg.p_mean, cfg.p_std))
}

/// Truncated schedule `σ′(t) = σ(t_s·t)` for `t ∈ (0, 1]`.
pub fn truncated_sigma(t: f64, cfg: &ScheduleConfig) -> Result<f64> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(invalid(
            "t",
            format!("truncated schedule needs t in (0, 1], got {t}"),
        ));
    }
    if !(cfg.t_s > 0.0 && cfg.t_s <= 1.0) {
        return Err(invalid(
            "t_s",
            format!("must lie in (0, 1], got {}", cfg.t_s),
        ));
    }
    sigma_schedule(cfg.t_s * t, cfg)
}

/// Blur scale `σ_B(t) = σ_B,max·sin²(πt/2)`.
pub fn blur_sigma(t: f64, cfg: &ScheduleConfig) -> f64 {
    let s = (FRAC_PI_2 * t).sin();
    cfg.sigma_b_max * s * s
}

/// Dissipation time `τ(t) = σ_B(t)²/2` for `t ∈ [0, 1]`.
pub fn blur_schedule(t: f64, cfg: &ScheduleConfig) -> Result<f64> {
    if !(0.0..=1.0).contains(&t) {
        return Err(invalid(
            "t",
            format!("blur schedule needs t in [0, 1], got {t}"),
        ));
    }
    if t == 1.0 {
        return Ok(cfg.sigma_b_max * cfg.sigma_b_max / 2.0);
    }
    let sb = blur_sigma(t, cfg);
    Ok(sb * sb / 2.0)
}

/// Writes `t,sigma,sigma_trunc,tau` rows at `points` interior times.
pub fn write_schedule_table<W: Write>(
    cfg: &ScheduleConfig,
    points: usize,
    mut out: W,
) -> Result<()> {
    cfg.validate()?;
    writeln!(out, "t,sigma,sigma_trunc,tau")?;
    for i in 1..=points {
        let t = i as f64 / (points + 1) as f64;
        writeln!(
            out,
            "{:.6},{:.12e},{:.12e},{:.12e}",
            t,
            sigma_schedule(t, cfg)?,
            truncated_sigma(t, cfg)?,
            blur_schedule(t, cfg)?
        )?;
    }
    Ok(())
}
