//! Subcommand bodies. Each reads its settings from the merged configuration,
//! writes artifacts through [`OutputDir`] and returns whether it succeeded.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;

use rdm_core::config::ExperimentConfig;
use rdm_core::denoiser::{
    AnalyticDenoiser, ConvDenoiserParams, Denoiser, GaussianToyPrior, GuidedDenoiser,
};
use rdm_core::noise::{covariance_report, generate, write_covariance_csv, NoiseKind, NoiseSpec};
use rdm_core::pgm::{read_pgm, Depth};
use rdm_core::relay::{
    budget_allocations, eta_sweep, generate_corpus, nfe_sweep, run_relay, train_toy, write_eta_csv,
    write_nfe_csv, GaussianRelay, QualityReport, ToyDataset,
};
use rdm_core::sampler::{sample, SampleOptions, SamplerInit};
use rdm_core::schedule::write_schedule_table;
use rdm_core::spectral::{dct2, psd_curve, SpectrumCurve};
use rdm_core::verify::{run_suites, SUITES};
use rdm_core::{ImageField, RandomSource};

use crate::output::OutputDir;
use crate::Usage;

pub struct Ctx<'a> {
    pub cfg: &'a ExperimentConfig,
    pub source: RandomSource,
    pub out: &'a mut OutputDir,
}

/// Reads a typed key, reporting parse failures as usage errors.
fn get<T: std::str::FromStr>(cfg: &ExperimentConfig, key: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    Ok(cfg.get(key).map_err(Usage::from)?)
}

fn depth(cfg: &ExperimentConfig) -> Result<Depth> {
    match get::<u32>(cfg, "depth")? {
        8 => Ok(Depth::Eight),
        16 => Ok(Depth::Sixteen),
        d => Err(Usage(format!("bad value for `depth`: {d} (expected 8 or 16)")).into()),
    }
}

fn write_pgm(out: &mut OutputDir, rel: &str, img: &ImageField, depth: Depth) -> Result<()> {
    out.write(rel, &rdm_core::pgm::encode_pgm(img, depth))
}

/// A single PGM file, or every `.pgm` in a directory in name order.
fn input_images(path: &Path) -> Result<Vec<(String, ImageField)>> {
    let mut files: Vec<PathBuf> = if path.is_dir() {
        std::fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("pgm")))
            .collect()
    } else {
        vec![path.to_path_buf()]
    };
    files.sort();
    if files.is_empty() {
        bail!("no .pgm files in {}", path.display());
    }
    files
        .iter()
        .map(|p| {
            let stem = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            Ok((
                stem,
                read_pgm(p).with_context(|| format!("reading {}", p.display()))?,
            ))
        })
        .collect()
}

fn required_input(cfg: &ExperimentConfig) -> Result<PathBuf> {
    match cfg.raw("input").map_err(Usage::from)? {
        Some(p) => Ok(PathBuf::from(p)),
        None => Err(Usage("missing input: pass --input or set `input`".into()).into()),
    }
}

pub fn spectra(ctx: Ctx) -> Result<bool> {
    let bins: usize = get(ctx.cfg, "bins")?;
    if bins == 0 {
        return Err(Usage("bad value for `bins`: must be positive".into()).into());
    }
    let images = input_images(&required_input(ctx.cfg)?)?;
    let mut curves = Vec::new();
    for (stem, img) in &images {
        let curve = psd_curve(&dct2(img)?, bins)?;
        ctx.out
            .write_with(&format!("psd_{stem}.csv"), |b| curve.write_csv(b))?;
        curves.push(curve);
    }
    if images.windows(2).all(|p| p[0].1.shape() == p[1].1.shape()) {
        let mean = SpectrumCurve::average(&curves)?;
        ctx.out.write_with("psd_mean.csv", |b| mean.write_csv(b))?;
    } else {
        eprintln!("note: images differ in size; skipping psd_mean.csv");
    }
    println!("{} image(s), {bins} bins", images.len());
    Ok(true)
}

pub fn noise(ctx: Ctx) -> Result<bool> {
    let cfg = ctx.cfg;
    let kind: NoiseKind = cfg
        .get::<String>("noise_kind")
        .map_err(Usage::from)?
        .parse()
        .map_err(|e: rdm_core::Error| Usage(e.to_string()))?;
    let size: usize = get(cfg, "size")?;
    let spec = NoiseSpec::new(1.0, get(cfg, "noise_kernel")?, get(cfg, "noise_alpha")?)
        .map_err(Usage::from)?;
    let (samples, draws, radius, bins): (usize, usize, i64, usize) = (
        get(cfg, "samples")?,
        get(cfg, "draws")?,
        get(cfg, "radius")?,
        get(cfg, "bins")?,
    );
    let depth = depth(cfg)?;
    let fields_src = ctx.source.fork(0);
    let fields: Vec<ImageField> = (0..samples)
        .into_par_iter()
        .map(|i| generate(kind, size, size, &spec, &mut fields_src.stream(i as u64)))
        .collect::<rdm_core::Result<_>>()?;
    // ±3σ spans the PGM range.
    for (i, f) in fields.iter().enumerate() {
        write_pgm(
            ctx.out,
            &format!("noise_{i:03}.pgm"),
            &f.scaled(1.0 / 3.0),
            depth,
        )?;
    }
    if !fields.is_empty() && bins > 0 {
        let curves = fields
            .iter()
            .map(|f| psd_curve(&dct2(f)?, bins))
            .collect::<rdm_core::Result<Vec<_>>>()?;
        let mean = SpectrumCurve::average(&curves)?;
        ctx.out.write_with("psd.csv", |b| mean.write_csv(b))?;
    }
    let rows = covariance_report(kind, &spec, size, size, radius, draws, ctx.source.fork(1))?;
    ctx.out
        .write_with("covariance.csv", |b| write_covariance_csv(&rows, b))?;
    let worst = rows.iter().map(|r| r.z_score().abs()).fold(0.0, f64::max);
    println!(
        "{samples} field(s) {size}x{size}; covariance over {draws} draws, worst |z| {worst:.2}"
    );
    Ok(true)
}

fn gaussian_prior(
    cfg: &ExperimentConfig,
    size: usize,
    tiling: rdm_core::Tiling,
) -> Result<GaussianToyPrior> {
    let law = cfg.power_law().map_err(Usage::from)?;
    Ok(GaussianToyPrior::from_spectrum(
        rdm_core::FreqField::zeros(size, size, tiling)?,
        |fy, fx| law.variance(fy, fx),
    )?)
}

pub fn forward(ctx: Ctx) -> Result<bool> {
    let cfg = ctx.cfg;
    let schedule = cfg.schedule().map_err(Usage::from)?;
    let times: Vec<f64> = cfg.get_list("times").map_err(Usage::from)?;
    if let Some(t) = times.iter().find(|t| !(**t >= 0.0 && **t <= 1.0)) {
        return Err(Usage(format!("bad value for `times`: {t} outside [0, 1]")).into());
    }
    let depth = depth(cfg)?;
    let clean = match cfg.raw("input").map_err(Usage::from)? {
        Some(p) => input_images(Path::new(p))?.remove(0).1,
        None => {
            let size: usize = get(cfg, "size")?;
            gaussian_prior(cfg, size, rdm_core::Tiling::Global)?
                .sample(&mut ctx.source.fork(0).stream(0))?
        }
    };
    write_pgm(ctx.out, "clean.pgm", &clean, depth)?;
    let src = ctx.source.fork(1);
    for (k, &t) in times.iter().enumerate() {
        let x = rdm_core::blur::forward_corrupt(&clean, t, &schedule, &mut src.stream(k as u64))?;
        write_pgm(ctx.out, &format!("forward_t{t:.3}.pgm"), &x, depth)?;
    }
    ctx.out
        .write_with("schedule.csv", |b| write_schedule_table(&schedule, 99, b))?;
    println!(
        "{} corrupted image(s) of a {}x{} field",
        times.len(),
        clean.height(),
        clean.width()
    );
    Ok(true)
}

pub fn train(ctx: Ctx) -> Result<bool> {
    let tc = ctx.cfg.train().map_err(Usage::from)?;
    let data = ToyDataset::checkerboard(get(ctx.cfg, "board_size")?);
    data.validate().map_err(Usage::from)?;
    let outcome = train_toy(&data, &tc, ctx.source)?;
    ctx.out
        .write_with("train_log.csv", |b| outcome.write_log_csv(b))?;
    let path = ctx.out.path("model.rdmk")?;
    outcome.params.save(&path)?;
    println!(
        "{} steps, {} parameters: eval loss {:.5} -> {:.5} (ratio {:.3})",
        tc.steps,
        outcome.params.len(),
        outcome.initial_eval_loss,
        outcome.final_eval_loss,
        outcome.final_eval_loss / outcome.initial_eval_loss
    );
    Ok(true)
}

fn sample_batch<D: Denoiser>(
    ctx: &mut Ctx,
    den: &D,
    schedule: &rdm_core::schedule::ScheduleConfig,
    size: usize,
    label: Option<usize>,
) -> Result<()> {
    let samples: usize = get(ctx.cfg, "samples")?;
    let depth = depth(ctx.cfg)?;
    let src = ctx.source;
    let opts = SampleOptions {
        label,
        record_states: false,
    };
    let init = SamplerInit::PureNoise {
        height: size,
        width: size,
    };
    let runs: Vec<_> = (0..samples)
        .into_par_iter()
        .map(|i| sample(den, schedule, init, opts, &mut src.stream(i as u64)))
        .collect::<rdm_core::Result<_>>()?;
    for (i, (img, trace)) in runs.iter().enumerate() {
        write_pgm(ctx.out, &format!("sample_{i:03}.pgm"), img, depth)?;
        if i == 0 {
            ctx.out.write_with("trace.csv", |b| trace.write_csv(b))?;
        }
    }
    let nfe = runs.first().map(|r| r.1.nfe).unwrap_or(0);
    println!(
        "{samples} sample(s) {size}x{size}, {} steps, {nfe} evaluations each",
        schedule.n_steps
    );
    Ok(())
}

pub fn sample_cmd(mut ctx: Ctx) -> Result<bool> {
    let cfg = ctx.cfg;
    let size: usize = get(cfg, "size")?;
    let label: Option<usize> = cfg.get_opt("label").map_err(Usage::from)?;
    match get::<String>(cfg, "denoiser")?.as_str() {
        "analytic" => {
            let schedule = cfg.schedule().map_err(Usage::from)?;
            let prior = gaussian_prior(cfg, size, schedule.patch)?;
            let den = AnalyticDenoiser::new(prior, schedule.clone()).map_err(Usage::from)?;
            sample_batch(&mut ctx, &den, &schedule, size, None)?;
        }
        "conv" => {
            let path = cfg
                .raw("checkpoint")
                .map_err(Usage::from)?
                .ok_or_else(|| Usage("the conv denoiser needs --checkpoint".into()))?;
            let params = ConvDenoiserParams::load(path)
                .with_context(|| format!("loading checkpoint {path}"))?;
            if let Some(l) = label {
                if l >= params.classes() {
                    return Err(Usage(format!(
                        "bad value for `label`: {l} but the checkpoint has {} classes",
                        params.classes()
                    ))
                    .into());
                }
            }
            let mut schedule = cfg.schedule().map_err(Usage::from)?;
            if !cfg.is_set("sigma_data") {
                schedule.sigma_data = params.sigma_data();
            }
            let den = GuidedDenoiser {
                inner: params,
                weight: get(cfg, "guidance")?,
            };
            sample_batch(&mut ctx, &den, &schedule, size, label)?;
        }
        other => {
            return Err(Usage(format!(
                "bad value for `denoiser`: `{other}` (expected analytic or conv)"
            ))
            .into())
        }
    }
    Ok(true)
}

fn gaussian_relay(cfg: &ExperimentConfig) -> Result<GaussianRelay> {
    let relay = cfg.relay().map_err(Usage::from)?;
    let law = cfg.power_law().map_err(Usage::from)?;
    Ok(GaussianRelay::new(relay, law, get(cfg, "mean_amplitude")?).map_err(Usage::from)?)
}

pub fn relay(ctx: Ctx) -> Result<bool> {
    let problem = gaussian_relay(ctx.cfg)?;
    let rc = &problem.config;
    let (d1, d2) = problem.denoisers()?;
    let samples: usize = get(ctx.cfg, "samples")?;
    let reference: usize = get(ctx.cfg, "reference")?;
    let depth = depth(ctx.cfg)?;
    let runs_src = ctx.source.fork(0);
    let corpus = generate_corpus(rc, &d1, &d2, samples, 0, runs_src)?;
    for (i, s) in corpus.iter().enumerate() {
        write_pgm(ctx.out, &format!("relay_{i:03}.pgm"), &s.image, depth)?;
    }
    // Run 0 again for its stage-1 image and traces; same stream, same result.
    if samples > 0 {
        let first = run_relay(rc, &d1, &d2, None, &mut runs_src.stream(0))?;
        write_pgm(ctx.out, "stage1_000.pgm", &first.stage1, depth)?;
        ctx.out
            .write_with("trace_stage1.csv", |b| first.trace1.write_csv(b))?;
        ctx.out
            .write_with("trace_stage2.csv", |b| first.trace2.write_csv(b))?;
    }
    ctx.out.write_with("relay_summary.csv", |b| {
        writeln!(b, "sample,patch_deviation")?;
        for (i, s) in corpus.iter().enumerate() {
            writeln!(b, "{i},{}", s.patch_deviation)?;
        }
        Ok(())
    })?;
    if reference > 0 && samples > 1 {
        let refs = problem.reference_corpus(reference, ctx.source.fork(1))?;
        let images: Vec<ImageField> = corpus.into_iter().map(|s| s.image).collect();
        let n = rc.high_res();
        let q = QualityReport::compare(&images, &refs, rdm_core::relay::default_bins(n, n), None)?;
        ctx.out.write_with("quality.csv", |b| {
            writeln!(b, "spectral_distance,mean_error,var_error")?;
            writeln!(
                b,
                "{},{},{}",
                q.spectral_distance, q.mean_error, q.var_error
            )?;
            Ok(())
        })?;
        println!(
            "spectral distance {:.4}, mean error {:.4}, variance error {:.4}",
            q.spectral_distance, q.mean_error, q.var_error
        );
    }
    println!(
        "{samples} relay sample(s) {}->{}; steps ({}, {}), eta {}, effective NFE {}",
        rc.low_res,
        rc.high_res(),
        rc.stage1.n_steps,
        rc.stage2.n_steps,
        rc.stage2.eta,
        rc.effective_nfe()
    );
    Ok(true)
}

pub fn sweep(ctx: Ctx) -> Result<bool> {
    let which = get::<String>(ctx.cfg, "sweep")?;
    let (do_eta, do_nfe) = match which.as_str() {
        "eta" => (true, false),
        "nfe" => (false, true),
        "all" => (true, true),
        other => {
            return Err(Usage(format!(
                "bad value for `sweep`: `{other}` (expected eta, nfe or all)"
            ))
            .into())
        }
    };
    let problem = gaussian_relay(ctx.cfg)?;
    let (d1, d2) = problem.denoisers()?;
    let samples: usize = get(ctx.cfg, "samples")?;
    let refs = problem.reference_corpus(get(ctx.cfg, "reference")?, ctx.source.fork(1))?;
    // Every cell shares one source: differences between cells are not sampling noise.
    let cells = ctx.source.fork(0);
    if do_eta {
        let etas: Vec<f64> = ctx.cfg.get_list("etas").map_err(Usage::from)?;
        let rows = eta_sweep(&problem.config, &etas, &d1, &d2, &refs, samples, cells)
            .map_err(Usage::from)?;
        ctx.out
            .write_with("eta_sweep.csv", |b| write_eta_csv(&rows, b))?;
        println!("eta sweep: {} cells x {samples} samples", rows.len());
    }
    if do_nfe {
        let totals: Vec<usize> = ctx.cfg.get_list("totals").map_err(Usage::from)?;
        let allocs = budget_allocations(&totals).map_err(Usage::from)?;
        let rows = nfe_sweep(&problem.config, &allocs, &d1, &d2, &refs, samples, cells)
            .map_err(Usage::from)?;
        ctx.out
            .write_with("nfe_sweep.csv", |b| write_nfe_csv(&rows, b))?;
        println!("NFE sweep: {} allocations x {samples} samples", rows.len());
    }
    Ok(true)
}

pub fn verify(ctx: Ctx) -> Result<bool> {
    let suite = get::<String>(ctx.cfg, "suite")?;
    let names: Vec<&str> = if suite == "all" {
        SUITES.to_vec()
    } else {
        suite
            .split(',')
            .map(str::trim)
            .map(|s| {
                SUITES.iter().copied().find(|x| *x == s).ok_or_else(|| {
                    Usage(format!(
                        "unknown suite `{s}`; expected all or one of {}",
                        SUITES.join(", ")
                    ))
                })
            })
            .collect::<std::result::Result<_, _>>()?
    };
    let reports = run_suites(&names, ctx.source)?;
    let mut total = 0.0;
    for r in &reports {
        println!("{}", r.line());
        total += r.elapsed.as_secs_f64();
        for (name, bytes) in &r.outcome.artifacts {
            ctx.out.write(&format!("verify/{name}"), bytes)?;
        }
    }
    ctx.out.write_with("verify_summary.csv", |b| {
        writeln!(b, "suite,result,detail")?;
        for r in &reports {
            let status = if r.outcome.passed { "PASS" } else { "FAIL" };
            writeln!(
                b,
                "{},{},\"{}\"",
                r.name,
                status,
                r.outcome.detail.replace('"', "'")
            )?;
        }
        Ok(())
    })?;
    let failed = reports.iter().filter(|r| !r.outcome.passed).count();
    println!(
        "{} suite(s), {failed} failed, {total:.2}s total",
        reports.len()
    );
    Ok(failed == 0)
}
