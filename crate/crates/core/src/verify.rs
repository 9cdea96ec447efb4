//! Self-checking invariant suites behind `rdm verify`.
//!
//! Every suite is deterministic given its [`RandomSource`], compares the
//! implementation against an independent oracle, and may emit CSV artifacts.

use std::time::{Duration, Instant};

use rand::Rng;

use crate::blur::patch_blur_operator;
use crate::denoiser::{rdm_loss, AnalyticDenoiser, ConvDenoiserParams, GaussianToyPrior};
use crate::error::{invalid, Result};
use crate::field::{ImageField, Tiling};
use crate::noise::{covariance_report, mixed_noise, write_covariance_csv, NoiseKind, NoiseSpec};
use crate::rng::{open_unit, standard_normal, RandomSource};
use crate::sampler::{heun_step_fn, marginal_consistency_check, ode_reduction_check, StageGrid};
use crate::schedule::{blur_schedule, sigma_schedule, truncated_sigma, ScheduleConfig};
use crate::spectral::{dct2, dct2_tiled, downsample_mean, idct2, upsample_nearest};

pub const SUITES: &[&str] = &[
    "dct",
    "covariance",
    "mixed-variance",
    "schedule",
    "patch-blur",
    "ode",
    "consistency",
    "gradient",
];

/// Result of one suite before timing.
#[derive(Debug, Clone)]
pub struct SuiteOutcome {
    pub passed: bool,
    pub detail: String,
    /// `(file name, bytes)` artifacts.
    pub artifacts: Vec<(String, Vec<u8>)>,
}

impl SuiteOutcome {
    fn new(passed: bool, detail: String) -> Self {
        Self {
            passed,
            detail,
            artifacts: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub name: &'static str,
    pub outcome: SuiteOutcome,
    pub elapsed: Duration,
}

impl SuiteReport {
    pub fn line(&self) -> String {
        format!(
            "{} {:<15} {:>8.2}s  {}",
            if self.outcome.passed { "PASS" } else { "FAIL" },
            self.name,
            self.elapsed.as_secs_f64(),
            self.outcome.detail
        )
    }
}

pub fn run_suite(name: &str, source: RandomSource) -> Result<SuiteReport> {
    let name = *SUITES.iter().find(|s| **s == name).ok_or_else(|| {
        invalid(
            "suite",
            format!(
                "unknown suite `{name}`; expected one of {}",
                SUITES.join(", ")
            ),
        )
    })?;
    let start = Instant::now();
    let outcome = match name {
        "dct" => dct_suite(source)?,
        "covariance" => covariance_suite(source)?,
        "mixed-variance" => mixed_variance_suite(source)?,
        "schedule" => schedule_suite(source)?,
        "patch-blur" => patch_blur_suite(source)?,
        "ode" => ode_suite(source)?,
        "consistency" => consistency_suite(source)?,
        "gradient" => gradient_suite(source)?,
        _ => unreachable!(),
    };
    Ok(SuiteReport {
        name,
        outcome,
        elapsed: start.elapsed(),
    })
}

/// Runs `suites` in order, each on its own fork of `source`.
pub fn run_suites(suites: &[&str], source: RandomSource) -> Result<Vec<SuiteReport>> {
    suites
        .iter()
        .map(|s| {
            let idx = SUITES.iter().position(|x| x == s).unwrap_or(usize::MAX) as u64;
            run_suite(s, source.fork(idx))
        })
        .collect()
}

/// Two-sided z threshold holding the family of `tests` comparisons to the
/// false-alarm rate of a single 3-SE test (Bonferroni).
pub fn family_threshold(tests: usize) -> f64 {
    let alpha = 2.0 * (1.0 - crate::schedule::norm_cdf(3.0));
    -crate::schedule::norm_quantile(alpha / (2.0 * tests.max(1) as f64))
}

fn random_field<R: Rng + ?Sized>(h: usize, w: usize, rng: &mut R) -> ImageField {
    ImageField::from_fn(h, w, |_, _| standard_normal(rng))
}

/// Orthonormal DCT-II by direct summation.
fn naive_dct(x: &ImageField) -> Vec<f64> {
    use std::f64::consts::PI;
    let (h, w) = x.shape();
    let c = |k: usize, n: usize| {
        if k == 0 {
            (1.0 / n as f64).sqrt()
        } else {
            (2.0 / n as f64).sqrt()
        }
    };
    let mut out = vec![0.0; h * w];
    for a in 0..h {
        for b in 0..w {
            let mut s = 0.0;
            for i in 0..h {
                for j in 0..w {
                    s += x.get(i, j)
                        * (PI * (2 * i + 1) as f64 * a as f64 / (2 * h) as f64).cos()
                        * (PI * (2 * j + 1) as f64 * b as f64 / (2 * w) as f64).cos();
                }
            }
            out[a * w + b] = c(a, h) * c(b, w) * s;
        }
    }
    out
}

fn dct_suite(source: RandomSource) -> Result<SuiteOutcome> {
    let mut rng = source.stream(0);
    let (mut round, mut parseval, mut direct) = (0.0f64, 0.0f64, 0.0f64);
    for &(h, w) in &[(8, 8), (6, 10), (32, 32), (1, 7)] {
        let x = random_field(h, w, &mut rng);
        let u = dct2(&x)?;
        round = round.max(idct2(&u)?.max_abs_diff(&x));
        parseval = parseval.max((u.sum_sq() - x.sum_sq()).abs() / x.sum_sq());
        let naive = naive_dct(&x);
        direct = direct.max(
            u.coeffs()
                .iter()
                .zip(&naive)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max),
        );
    }
    // Patch tiling: each block transforms like a standalone image.
    let x = random_field(16, 16, &mut rng);
    let tiled = dct2_tiled(&x, Tiling::Patch(4))?;
    round = round.max(idct2(&tiled)?.max_abs_diff(&x));
    for bi in 0..4 {
        for bj in 0..4 {
            let patch = ImageField::from_fn(4, 4, |i, j| x.get(4 * bi + i, 4 * bj + j));
            let naive = naive_dct(&patch);
            for a in 0..4 {
                for b in 0..4 {
                    direct =
                        direct.max((tiled.get(4 * bi + a, 4 * bj + b) - naive[a * 4 + b]).abs());
                }
            }
        }
    }
    let passed = round < 1e-12 && parseval < 1e-12 && direct < 1e-12;
    Ok(SuiteOutcome::new(
        passed,
        format!("round-trip {round:.1e}, Parseval rel {parseval:.1e}, vs direct sum {direct:.1e}"),
    ))
}

fn covariance_suite(source: RandomSource) -> Result<SuiteOutcome> {
    let mut worst: f64 = 0.0;
    let mut tests = 0;
    let mut artifacts = Vec::new();
    for (i, s) in [1usize, 2, 4].into_iter().enumerate() {
        let spec = NoiseSpec::new(1.0, s, 0.0)?;
        let rows = covariance_report(
            NoiseKind::Block,
            &spec,
            32,
            32,
            2,
            100_000,
            source.fork(i as u64),
        )?;
        worst = rows.iter().map(|r| r.z_score().abs()).fold(worst, f64::max);
        tests += rows.len();
        let mut csv = Vec::new();
        write_covariance_csv(&rows, &mut csv)?;
        artifacts.push((format!("covariance_s{s}.csv"), csv));
    }
    let limit = family_threshold(tests);
    Ok(SuiteOutcome {
        passed: worst < limit,
        detail: format!("block s=1,2,4 on 32x32, 5x5 offsets, 1e5 draws: worst |z| {worst:.2} (< {limit:.2} over {tests} offsets)"),
        artifacts,
    })
}

fn mixed_variance_suite(source: RandomSource) -> Result<SuiteOutcome> {
    let (h, w, draws) = (16usize, 16usize, 20_000usize);
    let mut worst: f64 = 0.0;
    let mut summary = Vec::new();
    for (i, alpha) in [0.0, 0.15, 0.5, 1.0, 2.0].into_iter().enumerate() {
        let spec = NoiseSpec::new(1.3, 4, alpha)?;
        let src = source.fork(i as u64);
        // Per-draw spatial mean of x²; draws are independent, so the standard
        // error of the pooled mean follows from their spread.
        let per: Vec<f64> = (0..draws)
            .map(|d| {
                Ok(mixed_noise(h, w, &spec, &mut src.stream(d as u64))?.sum_sq() / (h * w) as f64)
            })
            .collect::<Result<_>>()?;
        let n = draws as f64;
        let mean = per.iter().sum::<f64>() / n;
        let se = (per.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
        let z = (mean - spec.sigma * spec.sigma) / se;
        worst = worst.max(z.abs());
        summary.push(format!(
            "a={alpha}: {:.4}",
            mean / (spec.sigma * spec.sigma)
        ));
    }
    let limit = family_threshold(summary.len());
    Ok(SuiteOutcome::new(
        worst < limit,
        format!(
            "variance / sigma^2 [{}], worst |z| {worst:.2} (< {limit:.2})",
            summary.join(", ")
        ),
    ))
}

fn schedule_suite(source: RandomSource) -> Result<SuiteOutcome> {
    let mut rng = source.stream(0);
    let mut trunc: f64 = 0.0;
    for _ in 0..100 {
        let t = open_unit(&mut rng);
        let cfg = ScheduleConfig {
            t_s: open_unit(&mut rng),
            ..ScheduleConfig::default()
        };
        let want = (cfg.p_mean + cfg.p_std * crate::schedule::norm_quantile(cfg.t_s * t)).exp();
        let got = truncated_sigma(t, &cfg)?;
        trunc = trunc
            .max((got - want).abs() / want)
            .max((got - sigma_schedule(cfg.t_s * t, &cfg)?).abs() / want);
    }
    let mut endpoints = true;
    for s in [0.5, 1.0, 2.0, 3.0] {
        let cfg = ScheduleConfig {
            sigma_b_max: s,
            ..ScheduleConfig::default()
        };
        endpoints &= blur_schedule(0.0, &cfg)? == 0.0 && blur_schedule(1.0, &cfg)? == s * s / 2.0;
    }
    let mut monotone = true;
    for t_s in [1.0, 0.8, 0.5] {
        let cfg = ScheduleConfig {
            t_s,
            n_steps: 40,
            ..ScheduleConfig::relay_stage(4)
        };
        monotone &= StageGrid::new(8, 8, &cfg).is_ok();
        monotone &= sigma_schedule(0.6, &cfg)? > sigma_schedule(0.5, &cfg)?;
    }
    Ok(SuiteOutcome::new(
        trunc < 1e-12 && endpoints && monotone,
        format!("truncation rel err {trunc:.1e} (< 1e-12), blur endpoints exact: {endpoints}, grids monotone: {monotone}"),
    ))
}

fn patch_blur_suite(source: RandomSource) -> Result<SuiteOutcome> {
    let mut rng = source.stream(0);
    let mut worst: f64 = 0.0;
    for k in [2usize, 4, 8] {
        // Slowest nonzero mode decays as exp(−π²τ/k²); push it below 1e-8.
        let tau = (k * k) as f64 * (1e-8f64).ln().abs() / std::f64::consts::PI.powi(2) * 1.01;
        let op = patch_blur_operator(32, 32, k, tau)?;
        for _ in 0..5 {
            let x = random_field(32, 32, &mut rng);
            let oracle = upsample_nearest(&downsample_mean(&x, k)?, k)?;
            // Independent per-patch mean for the oracle's oracle.
            let direct = ImageField::from_fn(32, 32, |i, j| {
                let (bi, bj) = (i / k * k, j / k * k);
                let mut s = 0.0;
                for a in 0..k {
                    for b in 0..k {
                        s += x.get(bi + a, bj + b);
                    }
                }
                s / (k * k) as f64
            });
            worst = worst
                .max(op.apply_image(&x)?.max_abs_diff(&direct))
                .max(oracle.max_abs_diff(&direct));
        }
    }
    Ok(SuiteOutcome::new(
        worst < 1e-6,
        format!("terminal state vs per-patch mean, k=2,4,8 on 32x32: max err {worst:.1e} (< 1e-6)"),
    ))
}

fn ode_suite(source: RandomSource) -> Result<SuiteOutcome> {
    let cfg = ScheduleConfig {
        n_steps: 18,
        eta: 0.0,
        ..ScheduleConfig::default()
    };
    let prior = GaussianToyPrior::power_law(8, 8, Tiling::Global, 0.5, 2.0, 0.25)?;
    let den = AnalyticDenoiser::new(prior, cfg.clone())?;
    let r = ode_reduction_check(&den, &cfg, (8, 8), 100, heun_step_fn, source)?;
    Ok(SuiteOutcome::new(
        r.max_abs_err < 1e-10,
        format!(
            "eta=0, no blur, {} states vs reference EDM step: max err {:.1e} (< 1e-10)",
            r.states, r.max_abs_err
        ),
    ))
}

/// Mean image used as `u₀` by the consistency suite.
pub fn consistency_target(size: usize) -> ImageField {
    ImageField::from_fn(size, size, |i, j| ((i * 3 + 2 * j) % 7) as f64 / 6.0 - 0.5)
}

fn consistency_suite(source: RandomSource) -> Result<SuiteOutcome> {
    let etas = [0.0, 0.2, 0.5];
    let mut reports = Vec::new();
    for (i, eta) in etas.into_iter().enumerate() {
        let cfg = ScheduleConfig {
            n_steps: 10,
            eta,
            ..ScheduleConfig::relay_stage(4)
        };
        let u0 = dct2_tiled(&consistency_target(8), cfg.patch)?;
        reports.push(marginal_consistency_check(
            &u0,
            &cfg,
            10_000,
            8,
            source.fork(i as u64),
        )?);
    }
    let limit = family_threshold(reports.iter().map(|r| r.rows.len()).sum());
    let mut passed = true;
    let mut parts = Vec::new();
    let mut artifacts = Vec::new();
    for (eta, rep) in etas.iter().zip(&reports) {
        let (lo, hi) = rep.var_ratio_range();
        passed &= rep.passes(limit, 0.05);
        parts.push(format!(
            "eta={eta}: |mean| {:.2} SE, var [{lo:.3},{hi:.3}]",
            rep.max_abs_mean_err()
        ));
        let mut csv = Vec::new();
        rep.write_csv(&mut csv)?;
        artifacts.push((format!("consistency_eta{eta}.csv"), csv));
    }
    Ok(SuiteOutcome {
        passed,
        detail: format!(
            "N=10, 8x8, 1e4 trajectories: {} (mean < {limit:.2} SE, var within 5%)",
            parts.join("; ")
        ),
        artifacts,
    })
}

fn gradient_suite(source: RandomSource) -> Result<SuiteOutcome> {
    let cfg = ScheduleConfig::relay_stage(4);
    let delta = 1e-5;
    let mut worst: f64 = 0.0;
    for seed in 0..5u64 {
        let src = source.fork(seed);
        let mut rng = src.stream(0);
        let p = ConvDenoiserParams::init(8, 3, cfg.sigma_data, &mut rng)?.randomized(0.3, &mut rng);
        let x = random_field(8, 8, &mut rng).scaled(0.5);
        let t = 0.05 + 0.9 * open_unit(&mut rng);
        let label = Some(rng.random_range(0..3));
        // Same stream for every evaluation, hence the same corruption.
        let loss_at = |q: &ConvDenoiserParams| rdm_loss(q, &x, t, &cfg, label, &mut src.stream(1));
        let (_, grad) = loss_at(&p)?;
        for _ in 0..20 {
            let idx = rng.random_range(0..p.len());
            let (mut hi, mut lo) = (p.clone(), p.clone());
            hi.values_mut()[idx] += delta;
            lo.values_mut()[idx] -= delta;
            let fd = (loss_at(&hi)?.0 - loss_at(&lo)?.0) / (2.0 * delta);
            let rel = (fd - grad[idx]).abs() / fd.abs().max(grad[idx].abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(SuiteOutcome::new(
        worst < 1e-4,
        format!("5 seeds x 20 params vs central differences: worst rel err {worst:.1e} (< 1e-4)"),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_suite_is_rejected() {
        assert!(run_suite("nope", RandomSource::new(0)).is_err());
    }

    #[test]
    fn fast_suites_pass() {
        for s in ["dct", "schedule", "patch-blur", "ode", "gradient"] {
            let r = run_suite(s, RandomSource::new(0)).unwrap();
            assert!(r.outcome.passed, "{}", r.line());
        }
    }

    /// Unblurred deterministic Heun step written with an explicit `γ`:
    /// `u + σ_n(γ − 1)·(d_n + d_{n−1})/2`, which is exact for `γ = σ_{n−1}/σ_n`.
    fn replica_step(
        s: &crate::sampler::SamplerState,
        den: &AnalyticDenoiser,
        g: &StageGrid,
        gamma: f64,
    ) -> Result<crate::sampler::SamplerState> {
        use crate::denoiser::Denoiser;
        let (sn, sp) = (g.sigma[s.n], g.sigma[s.n - 1]);
        let x = idct2(&s.u)?;
        let slope = |x: &ImageField, sig: f64| -> Result<ImageField> {
            Ok(x.add_scaled(&den.denoise(x, sig, None)?, -1.0)?
                .scaled(1.0 / sig))
        };
        let dn = slope(&x, sn)?;
        let euler = x.add_scaled(&dn, sn * (gamma - 1.0))?;
        let out = if s.n == 1 {
            euler
        } else {
            let dp = slope(&euler, sp)?;
            x.add_scaled(&dn.add_scaled(&dp, 1.0)?, 0.5 * sn * (gamma - 1.0))?
        };
        Ok(g.state(s.n - 1, dct2(&out)?))
    }

    /// Mutation check: tampering with `γ` must make the ODE suite fail.
    #[test]
    fn tampered_gamma_fails_ode_reduction() {
        fn exact(
            s: &crate::sampler::SamplerState,
            d: &AnalyticDenoiser,
            g: &StageGrid,
            _: &ScheduleConfig,
            _: &mut crate::rng::NoiseRng,
        ) -> Result<crate::sampler::SamplerState> {
            replica_step(s, d, g, g.sigma[s.n - 1] / g.sigma[s.n])
        }
        fn tampered(
            s: &crate::sampler::SamplerState,
            d: &AnalyticDenoiser,
            g: &StageGrid,
            _: &ScheduleConfig,
            _: &mut crate::rng::NoiseRng,
        ) -> Result<crate::sampler::SamplerState> {
            // √(1 − η²) applied with η = 0.2 although the run is deterministic.
            replica_step(s, d, g, 0.96f64.sqrt() * g.sigma[s.n - 1] / g.sigma[s.n])
        }
        let cfg = ScheduleConfig {
            n_steps: 18,
            eta: 0.0,
            ..ScheduleConfig::default()
        };
        let prior = GaussianToyPrior::power_law(8, 8, Tiling::Global, 0.5, 2.0, 0.25).unwrap();
        let den = AnalyticDenoiser::new(prior, cfg.clone()).unwrap();
        let ok = ode_reduction_check(&den, &cfg, (8, 8), 50, exact, RandomSource::new(1)).unwrap();
        assert!(ok.max_abs_err < 1e-10, "{ok:?}");
        let bad =
            ode_reduction_check(&den, &cfg, (8, 8), 50, tampered, RandomSource::new(1)).unwrap();
        assert!(bad.max_abs_err > 1e-3, "{bad:?}");
    }

    #[test]
    fn family_threshold_reduces_to_three_sigma() {
        assert!((family_threshold(1) - 3.0).abs() < 1e-9);
        // Bonferroni over 75 comparisons.
        let z = family_threshold(75);
        let tail = 2.0 * (1.0 - crate::schedule::norm_cdf(z));
        assert!((tail * 75.0 - 2.0 * (1.0 - crate::schedule::norm_cdf(3.0))).abs() < 1e-9);
        assert!(z > 4.0 && z < 4.3);
    }

    #[test]
    fn naive_dct_is_orthonormal() {
        let x = ImageField::from_fn(3, 3, |i, j| if (i, j) == (1, 2) { 1.0 } else { 0.0 });
        let u = naive_dct(&x);
        assert!((u.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-14);
    }
}
