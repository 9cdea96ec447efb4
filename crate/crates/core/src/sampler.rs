//! Stochastic first/second-order sampler in the blurred frequency basis.
//!
//! With `d_n = (u_n − û₀)/σ_n`, `γ_n = √(1−η²)·σ_{n−1}/σ_n` and
//! `δ_n = η·σ_{n−1}`, one step reads
//!
//! ```text
//! u_{n−1} = (D_{n−1} + γ_n(I − D_n))·u_n + σ_n(γ_n·D_n − D_{n−1})·d_n + δ_n·ε̃
//! ```
//!
//! where `D_n` is the blur operator at `t_n` and `ε̃` the DCT of mixed block
//! noise. The second-order variant re-evaluates the denoiser at the proposal
//! and repeats the step with the averaged `d`.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;

use crate::blur::BlurOperator;
use crate::denoiser::Denoiser;
use crate::error::{invalid, Error, Result};
use crate::field::{FreqField, ImageField};
use crate::noise::mixed_noise;
use crate::rng::{standard_normal, RandomSource};
use crate::schedule::{blur_schedule, ScheduleConfig};
use crate::spectral::{dct2_tiled, idct2, radial_bin_index};

/// Time, noise level and blur at every grid point `t_0 < … < t_N`.
#[derive(Debug, Clone)]
pub struct StageGrid {
    pub t: Vec<f64>,
    pub sigma: Vec<f64>,
    pub blur: Vec<BlurOperator>,
}

impl StageGrid {
    pub fn new(h: usize, w: usize, cfg: &ScheduleConfig) -> Result<Self> {
        cfg.validate()?;
        let t = cfg.time_grid();
        let sigma: Vec<f64> = t.iter().map(|&t| cfg.sampler_sigma(t)).collect();
        if sigma.windows(2).any(|p| !(p[0] < p[1])) {
            return Err(invalid(
                "t_s",
                "noise levels along the grid are not strictly increasing",
            ));
        }
        let blur = t
            .iter()
            .map(|&t| BlurOperator::new(h, w, cfg.patch, blur_schedule(t, cfg)?))
            .collect::<Result<_>>()?;
        Ok(Self { t, sigma, blur })
    }

    pub fn steps(&self) -> usize {
        self.t.len() - 1
    }

    pub fn shape(&self) -> (usize, usize) {
        self.blur[0].shape()
    }

    /// Sampler state at grid index `n` holding `u`.
    pub fn state(&self, n: usize, u: FreqField) -> SamplerState {
        SamplerState {
            n,
            t: self.t[n],
            sigma: self.sigma[n],
            u,
        }
    }
}

/// Sampler position: step index, time, noise level and frequency-space state.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerState {
    pub n: usize,
    pub t: f64,
    pub sigma: f64,
    pub u: FreqField,
}

/// `(γ_n, δ_n)` for a step from `sigma_n` down to `sigma_prev`.
pub fn step_coefficients(sigma_n: f64, sigma_prev: f64, eta: f64) -> (f64, f64) {
    (
        (1.0 - eta * eta).sqrt() * sigma_prev / sigma_n,
        eta * sigma_prev,
    )
}

/// `d_n = (u_n − û₀)/σ_n`.
fn gradient_term(u: &FreqField, u0_hat: &FreqField, sigma: f64) -> Result<FreqField> {
    u.same_basis(u0_hat)?;
    let coeffs = u
        .coeffs()
        .iter()
        .zip(u0_hat.coeffs())
        .map(|(a, b)| (a - b) / sigma)
        .collect();
    Ok(FreqField::from_raw(
        u.height(),
        u.width(),
        u.block(),
        coeffs,
    ))
}

/// DCT of a unit-scale mixed-noise field in the stage's basis.
pub fn injected_noise<R: Rng + ?Sized>(
    h: usize,
    w: usize,
    cfg: &ScheduleConfig,
    rng: &mut R,
) -> Result<FreqField> {
    dct2_tiled(&mixed_noise(h, w, &cfg.noise_spec(1.0), rng)?, cfg.patch)
}

/// Applies the update from `state` to `n − 1` with gradient term `d`.
fn transition(
    state: &SamplerState,
    d: &FreqField,
    grid: &StageGrid,
    eta: f64,
    noise: Option<&FreqField>,
) -> Result<SamplerState> {
    let n = state.n;
    let (s_n, s_p) = (grid.sigma[n], grid.sigma[n - 1]);
    let (gamma, delta) = step_coefficients(s_n, s_p, eta);
    let (dn, dp) = (grid.blur[n].decay(), grid.blur[n - 1].decay());
    let mut out: Vec<f64> = (0..state.u.len())
        .map(|k| {
            let u = state.u.coeffs()[k];
            (dp[k] + gamma * (1.0 - dn[k])) * u + s_n * (gamma * dn[k] - dp[k]) * d.coeffs()[k]
        })
        .collect();
    if let Some(eps) = noise {
        for (o, e) in out.iter_mut().zip(eps.coeffs()) {
            *o += delta * e;
        }
    }
    let u = FreqField::from_raw(state.u.height(), state.u.width(), state.u.block(), out);
    Ok(grid.state(n - 1, u))
}

fn check_step(state: &SamplerState, grid: &StageGrid) -> Result<()> {
    if state.n == 0 || state.n > grid.steps() {
        return Err(invalid(
            "n",
            format!(
                "cannot step from index {} on a {}-step grid",
                state.n,
                grid.steps()
            ),
        ));
    }
    if state.u.shape() != grid.shape() || state.u.block() != grid.blur[0].block() {
        return Err(Error::ShapeMismatch {
            expected: grid.shape(),
            actual: state.u.shape(),
        });
    }
    Ok(())
}

fn draw_noise<R: Rng + ?Sized>(
    grid: &StageGrid,
    cfg: &ScheduleConfig,
    rng: &mut R,
) -> Result<Option<FreqField>> {
    if cfg.eta == 0.0 {
        return Ok(None);
    }
    let (h, w) = grid.shape();
    injected_noise(h, w, cfg, rng).map(Some)
}

/// First-order step given the clean estimate `u0_hat` at `state`.
pub fn euler_step<R: Rng + ?Sized>(
    state: &SamplerState,
    u0_hat: &FreqField,
    grid: &StageGrid,
    cfg: &ScheduleConfig,
    rng: &mut R,
) -> Result<SamplerState> {
    check_step(state, grid)?;
    let d = gradient_term(&state.u, u0_hat, state.sigma)?;
    let noise = draw_noise(grid, cfg, rng)?;
    transition(state, &d, grid, cfg.eta, noise.as_ref())
}

/// Result of one second-order step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: SamplerState,
    /// Gradient term actually used: `d_n`, or `(d_n + d_{n−1})/2` after correction.
    pub d: FreqField,
    /// Denoiser evaluations spent.
    pub nfe: usize,
}

fn estimate<D: Denoiser + ?Sized>(
    den: &D,
    u: &FreqField,
    sigma: f64,
    cfg: &ScheduleConfig,
    label: Option<usize>,
) -> Result<FreqField> {
    let x = idct2(u)?;
    let out = den.denoise(&x, sigma, label)?;
    x.ensure_same_shape(&out)?;
    if !out.is_finite() {
        return Err(Error::InvalidData(format!(
            "denoiser produced non-finite output at σ = {sigma}"
        )));
    }
    dct2_tiled(&out, cfg.patch)
}

/// Second-order step. The correction (skipped at `n = 1`) reuses the Euler
/// proposal's noise unless `cfg.fresh_correction_noise` is set.
pub fn heun_step<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    state: &SamplerState,
    den: &D,
    grid: &StageGrid,
    cfg: &ScheduleConfig,
    label: Option<usize>,
    rng: &mut R,
) -> Result<StepOutcome> {
    check_step(state, grid)?;
    let u0_hat = estimate(den, &state.u, state.sigma, cfg, label)?;
    let d = gradient_term(&state.u, &u0_hat, state.sigma)?;
    let noise = draw_noise(grid, cfg, rng)?;
    let proposal = transition(state, &d, grid, cfg.eta, noise.as_ref())?;
    if state.n == 1 {
        return Ok(StepOutcome {
            state: proposal,
            d,
            nfe: 1,
        });
    }
    let u0_prop = estimate(den, &proposal.u, proposal.sigma, cfg, label)?;
    let d_prop = gradient_term(&proposal.u, &u0_prop, proposal.sigma)?;
    let avg: Vec<f64> = d
        .coeffs()
        .iter()
        .zip(d_prop.coeffs())
        .map(|(a, b)| 0.5 * (a + b))
        .collect();
    let d_avg = FreqField::from_raw(d.height(), d.width(), d.block(), avg);
    let noise = if cfg.fresh_correction_noise {
        draw_noise(grid, cfg, rng)?
    } else {
        noise
    };
    Ok(StepOutcome {
        state: transition(state, &d_avg, grid, cfg.eta, noise.as_ref())?,
        d: d_avg,
        nfe: 2,
    })
}

/// Starting point of a sampler run.
#[derive(Debug, Clone, Copy)]
pub enum SamplerInit<'a> {
    /// `u_N ~ N(0, σ_N² I)` on an `height×width` grid.
    PureNoise { height: usize, width: usize },
    /// `u_N = D_N Vᵀ x + σ_N Vᵀ(mixed noise)` from an upsampled previous stage.
    Relay(&'a ImageField),
}

/// Initial state `u_N` for `init`.
pub fn initial_state<R: Rng + ?Sized>(
    init: SamplerInit<'_>,
    grid: &StageGrid,
    cfg: &ScheduleConfig,
    rng: &mut R,
) -> Result<SamplerState> {
    let n = grid.steps();
    let sigma = grid.sigma[n];
    let (h, w) = grid.shape();
    let u = match init {
        SamplerInit::PureNoise { height, width } => {
            if (height, width) != (h, w) {
                return Err(Error::ShapeMismatch {
                    expected: (h, w),
                    actual: (height, width),
                });
            }
            let block = cfg.patch.block_dims(h, w)?;
            let coeffs = (0..h * w).map(|_| sigma * standard_normal(rng)).collect();
            FreqField::from_raw(h, w, block, coeffs)
        }
        SamplerInit::Relay(x) => {
            if x.shape() != (h, w) {
                return Err(Error::ShapeMismatch {
                    expected: (h, w),
                    actual: x.shape(),
                });
            }
            let mean = grid.blur[n].apply_freq(&dct2_tiled(x, cfg.patch)?)?;
            let noise = dct2_tiled(&mixed_noise(h, w, &cfg.noise_spec(sigma), rng)?, cfg.patch)?;
            let coeffs = mean
                .coeffs()
                .iter()
                .zip(noise.coeffs())
                .map(|(m, e)| m + e)
                .collect();
            FreqField::from_raw(h, w, mean.block(), coeffs)
        }
    };
    Ok(grid.state(n, u))
}

/// One row of a [`SamplerTrace`].
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub n: usize,
    pub t: f64,
    pub sigma: f64,
    pub mean_abs_u: f64,
    /// Mean `|d|` of the step leaving this state; 0 at `n = 0`.
    pub mean_abs_d: f64,
}

/// Per-state diagnostics of one run, from `n = N` down to 0.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SamplerTrace {
    pub rows: Vec<TraceRow>,
    /// Full states in the same order, when requested.
    pub states: Vec<SamplerState>,
    /// Gradient terms of each step (`N` entries), when states are requested.
    pub gradients: Vec<FreqField>,
    pub nfe: usize,
}

impl SamplerTrace {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "n,t,sigma,mean_abs_u,mean_abs_d")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{}",
                r.n, r.t, r.sigma, r.mean_abs_u, r.mean_abs_d
            )?;
        }
        Ok(())
    }
}

fn mean_abs(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum::<f64>() / v.len() as f64
}

/// Run options besides the stage configuration.
#[derive(Debug, Clone, Copy, Default)]
pub struct SampleOptions {
    pub label: Option<usize>,
    pub record_states: bool,
}

/// Runs the second-order sampler from `init` down to `t_0` and returns `V u_0`.
///
/// With `n_steps = 0` the result is the initial state itself.
pub fn sample<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    den: &D,
    cfg: &ScheduleConfig,
    init: SamplerInit<'_>,
    opts: SampleOptions,
    rng: &mut R,
) -> Result<(ImageField, SamplerTrace)> {
    let (h, w) = match init {
        SamplerInit::PureNoise { height, width } => (height, width),
        SamplerInit::Relay(x) => x.shape(),
    };
    let grid = StageGrid::new(h, w, cfg)?;
    let mut state = initial_state(init, &grid, cfg, rng)?;
    let mut trace = SamplerTrace::default();
    while state.n > 0 {
        let step = heun_step(&state, den, &grid, cfg, opts.label, rng)?;
        trace.nfe += step.nfe;
        trace.rows.push(TraceRow {
            n: state.n,
            t: state.t,
            sigma: state.sigma,
            mean_abs_u: mean_abs(state.u.coeffs()),
            mean_abs_d: mean_abs(step.d.coeffs()),
        });
        if opts.record_states {
            trace.states.push(state);
            trace.gradients.push(step.d);
        }
        state = step.state;
    }
    trace.rows.push(TraceRow {
        n: 0,
        t: state.t,
        sigma: state.sigma,
        mean_abs_u: mean_abs(state.u.coeffs()),
        mean_abs_d: 0.0,
    });
    let out = idct2(&state.u)?;
    if opts.record_states {
        trace.states.push(state);
    }
    Ok((out, trace))
}

/// Per-step, per-radial-bin summary of the marginal consistency check.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyRow {
    pub n: usize,
    pub freq_bin: usize,
    /// Number of coefficients pooled in this bin.
    pub count: usize,
    /// Pooled standardized mean error `Σ_f z_f / √count`, each `z_f` in units of `σ_n/√M`.
    pub mean_err_sigmas: f64,
    /// Mean over the bin of empirical variance divided by `σ_n²`.
    pub var_ratio: f64,
    /// Largest per-coefficient `|z_f|` in the bin.
    pub max_abs_z: f64,
    /// Per-coefficient variance ratios furthest from 1.
    pub worst_var_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyReport {
    pub trajectories: usize,
    pub eta: f64,
    pub rows: Vec<ConsistencyRow>,
    /// Coefficient-step pairs whose individual `|z|` exceeds 3.
    pub coeff_mean_exceedances: usize,
    /// Coefficient-step pairs whose individual variance ratio leaves `[0.95, 1.05]`.
    pub coeff_var_exceedances: usize,
    pub coeff_tests: usize,
}

impl ConsistencyReport {
    pub fn max_abs_mean_err(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.mean_err_sigmas.abs())
            .fold(0.0, f64::max)
    }

    pub fn var_ratio_range(&self) -> (f64, f64) {
        self.rows
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
                (lo.min(r.var_ratio), hi.max(r.var_ratio))
            })
    }

    /// Every bin within `mean_sigmas` standard errors and `var_tol` relative variance.
    pub fn passes(&self, mean_sigmas: f64, var_tol: f64) -> bool {
        self.rows
            .iter()
            .all(|r| r.mean_err_sigmas.abs() < mean_sigmas && (r.var_ratio - 1.0).abs() <= var_tol)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "n,freq_bin,mean_err_sigmas,var_ratio")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{}",
                r.n, r.freq_bin, r.mean_err_sigmas, r.var_ratio
            )?;
        }
        Ok(())
    }
}

const CONSISTENCY_CHUNKS: usize = 64;

/// Monte-Carlo check that the sampler transition preserves the forward marginals.
///
/// Every trajectory starts from `u_N ~ N(D_N u₀, σ_N² I)` and applies the
/// first-order update with the true `u₀` in place of the denoiser estimate.
/// At every step the empirical mean and variance of each coefficient are
/// compared with `D_n u₀` and `σ_n²`. The injected noise is isotropic, the
/// setting in which the marginal identity holds; `cfg.alpha` is ignored.
pub fn marginal_consistency_check(
    u0: &FreqField,
    cfg: &ScheduleConfig,
    trajectories: usize,
    n_bins: usize,
    source: RandomSource,
) -> Result<ConsistencyReport> {
    if trajectories < 2 {
        return Err(invalid("trajectories", "need at least two trajectories"));
    }
    if n_bins == 0 {
        return Err(invalid("n_bins", "need at least one bin"));
    }
    let iso = ScheduleConfig {
        alpha: 0.0,
        ..cfg.clone()
    };
    let (h, w) = u0.shape();
    let grid = StageGrid::new(h, w, &iso)?;
    if u0.block() != grid.blur[0].block() {
        return Err(invalid("patch", "u0 is not expressed in the stage's basis"));
    }
    let steps = grid.steps();
    let px = h * w;

    // Per chunk: sums and sums of squared deviations from the target mean,
    // indexed [n][coefficient]. Deviations keep the variance well conditioned.
    let chunk_len = trajectories.div_ceil(CONSISTENCY_CHUNKS);
    let partials: Vec<(Vec<f64>, Vec<f64>)> = (0..CONSISTENCY_CHUNKS)
        .into_par_iter()
        .map(|c| -> Result<(Vec<f64>, Vec<f64>)> {
            let mut sum = vec![0.0; (steps + 1) * px];
            let mut sq = vec![0.0; (steps + 1) * px];
            let begin = c * chunk_len;
            let end = ((c + 1) * chunk_len).min(trajectories);
            let mut rng = source.stream(c as u64);
            let mut target = Vec::with_capacity(steps + 1);
            for n in 0..=steps {
                target.push(grid.blur[n].apply_freq(u0)?);
            }
            for _ in begin..end {
                let coeffs = target[steps]
                    .coeffs()
                    .iter()
                    .map(|m| m + grid.sigma[steps] * standard_normal(&mut rng))
                    .collect();
                let mut state = grid.state(steps, FreqField::from_raw(h, w, u0.block(), coeffs));
                loop {
                    let n = state.n;
                    for (k, (&u, &m)) in state.u.coeffs().iter().zip(target[n].coeffs()).enumerate()
                    {
                        sum[n * px + k] += u - m;
                        sq[n * px + k] += (u - m) * (u - m);
                    }
                    if n == 0 {
                        break;
                    }
                    state = euler_step(&state, u0, &grid, &iso, &mut rng)?;
                }
            }
            Ok((sum, sq))
        })
        .collect::<Result<_>>()?;

    let mut sum = vec![0.0; (steps + 1) * px];
    let mut sq = vec![0.0; (steps + 1) * px];
    for (s, q) in &partials {
        sum.iter_mut().zip(s).for_each(|(a, b)| *a += b);
        sq.iter_mut().zip(q).for_each(|(a, b)| *a += b);
    }

    let m = trajectories as f64;
    let bins = radial_bin_index(h, w, u0.block(), n_bins);
    let mut rows = Vec::new();
    let (mut mean_exc, mut var_exc) = (0, 0);
    for n in (0..=steps).rev() {
        let sigma = grid.sigma[n];
        let mut z_sum = vec![0.0; n_bins];
        let mut r_sum = vec![0.0; n_bins];
        let mut count = vec![0usize; n_bins];
        let mut max_z = vec![0.0f64; n_bins];
        let mut worst = vec![1.0f64; n_bins];
        for k in 0..px {
            let mean_dev = sum[n * px + k] / m;
            let var = (sq[n * px + k] - m * mean_dev * mean_dev) / (m - 1.0);
            let z = mean_dev / (sigma / m.sqrt());
            let ratio = var / (sigma * sigma);
            let b = bins[k];
            z_sum[b] += z;
            r_sum[b] += ratio;
            count[b] += 1;
            max_z[b] = max_z[b].max(z.abs());
            if (ratio - 1.0).abs() > (worst[b] - 1.0).abs() {
                worst[b] = ratio;
            }
            mean_exc += usize::from(z.abs() >= 3.0);
            var_exc += usize::from((ratio - 1.0).abs() > 0.05);
        }
        for b in 0..n_bins {
            if count[b] == 0 {
                continue;
            }
            rows.push(ConsistencyRow {
                n,
                freq_bin: b,
                count: count[b],
                mean_err_sigmas: z_sum[b] / (count[b] as f64).sqrt(),
                var_ratio: r_sum[b] / count[b] as f64,
                max_abs_z: max_z[b],
                worst_var_ratio: worst[b],
            });
        }
    }
    Ok(ConsistencyReport {
        trajectories,
        eta: cfg.eta,
        rows,
        coeff_mean_exceedances: mean_exc,
        coeff_var_exceedances: var_exc,
        coeff_tests: (steps + 1) * px,
    })
}

/// One sampler step under test: `(state, denoiser, grid, cfg, rng) → next state`.
pub type StepFn<D> = fn(
    &SamplerState,
    &D,
    &StageGrid,
    &ScheduleConfig,
    &mut crate::rng::NoiseRng,
) -> Result<SamplerState>;

/// The production second-order step as a [`StepFn`].
pub fn heun_step_fn<D: Denoiser>(
    state: &SamplerState,
    den: &D,
    grid: &StageGrid,
    cfg: &ScheduleConfig,
    rng: &mut crate::rng::NoiseRng,
) -> Result<SamplerState> {
    Ok(heun_step(state, den, grid, cfg, None, rng)?.state)
}

/// Reference deterministic second-order step of the plain probability-flow
/// ODE `du/dσ = (u − D(u, σ))/σ`, written independently of the blurred update.
pub fn edm_ode_step<D: Denoiser + ?Sized>(
    u: &ImageField,
    den: &D,
    sigma_n: f64,
    sigma_prev: f64,
    correct: bool,
) -> Result<ImageField> {
    let slope = |x: &ImageField, s: f64| -> Result<ImageField> {
        let d = den.denoise(x, s, None)?;
        Ok(x.add_scaled(&d, -1.0)?.scaled(1.0 / s))
    };
    let h = sigma_prev - sigma_n;
    let d_n = slope(u, sigma_n)?;
    let euler = u.add_scaled(&d_n, h)?;
    if !correct {
        return Ok(euler);
    }
    let d_p = slope(&euler, sigma_prev)?;
    u.add_scaled(&d_n.add_scaled(&d_p, 1.0)?, 0.5 * h)
}

/// Outcome of [`ode_reduction_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct OdeReduction {
    pub states: usize,
    /// Largest absolute pixel difference between the step and the reference.
    pub max_abs_err: f64,
}

/// Compares `step` with [`edm_ode_step`] on random states, with `η = 0` and no blur.
///
/// Each of the `states` trials picks a random step index and a random state
/// and applies both updates once.
pub fn ode_reduction_check<D: Denoiser>(
    den: &D,
    base: &ScheduleConfig,
    (h, w): (usize, usize),
    states: usize,
    step: StepFn<D>,
    source: RandomSource,
) -> Result<OdeReduction> {
    let cfg = ScheduleConfig {
        eta: 0.0,
        sigma_b_max: 0.0,
        ..base.clone()
    };
    let grid = StageGrid::new(h, w, &cfg)?;
    let block = cfg.patch.block_dims(h, w)?;
    let errs: Vec<f64> = (0..states)
        .into_par_iter()
        .map(|k| -> Result<f64> {
            let mut rng = source.stream(k as u64);
            let n = rng.random_range(1..=grid.steps());
            let sigma = grid.sigma[n];
            let coeffs = (0..h * w)
                .map(|_| sigma * standard_normal(&mut rng))
                .collect();
            let state = grid.state(n, FreqField::from_raw(h, w, block, coeffs));
            let x = idct2(&state.u)?;
            let got = idct2(&step(&state, den, &grid, &cfg, &mut rng)?.u)?;
            let want = edm_ode_step(&x, den, sigma, grid.sigma[n - 1], n != 1)?;
            Ok(got.max_abs_diff(&want))
        })
        .collect::<Result<_>>()?;
    Ok(OdeReduction {
        states,
        max_abs_err: errs.into_iter().fold(0.0, f64::max),
    })
}
