//! `rdm`: command-line front end.
//!
//! Exit codes: 0 on success, 1 on runtime failure (including a failed
//! verification suite), 2 on usage errors such as unknown configuration keys.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{value_parser, Arg, ArgAction, ArgMatches, Command};

use rdm_core::config::{key_spec, ExperimentConfig, SCHEMA};
use rdm_core::RandomSource;

use commands::Ctx;
use output::OutputDir;

/// A usage error: exit code 2.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

impl From<rdm_core::Error> for Usage {
    fn from(e: rdm_core::Error) -> Self {
        Usage(e.to_string())
    }
}

const SCHEDULE_KEYS: &[&str] = &[
    "p_mean",
    "p_std",
    "t_s",
    "sigma_b_max",
    "steps",
    "eta",
    "alpha",
    "kernel",
    "patch",
    "sigma_data",
    "t_min",
    "fresh_correction_noise",
];

const PRIOR_KEYS: &[&str] = &[
    "prior_amplitude",
    "prior_exponent",
    "prior_floor",
    "mean_amplitude",
];
const RELAY_KEYS: &[&str] = &["low_res", "factor", "stage1_steps", "stage1_eta"];

struct Sub {
    name: &'static str,
    about: &'static str,
    keys: Vec<&'static str>,
}

fn subcommands() -> Vec<Sub> {
    let cat = |parts: &[&[&'static str]]| parts.concat();
    vec![
        Sub {
            name: "spectra",
            about: "Radially binned power spectra of PGM images (per image and mean)",
            keys: vec!["input", "bins"],
        },
        Sub {
            name: "noise",
            about: "Draw iid, block or mixed noise fields; empirical vs analytic covariance",
            keys: vec![
                "noise_kind",
                "size",
                "noise_kernel",
                "noise_alpha",
                "samples",
                "draws",
                "radius",
                "bins",
                "depth",
            ],
        },
        Sub {
            name: "forward",
            about: "Corrupt an image with the blurring forward process at several times",
            keys: cat(&[
                &["input", "size", "times", "depth"],
                PRIOR_KEYS,
                SCHEDULE_KEYS,
            ]),
        },
        Sub {
            name: "train",
            about: "Train the convolutional denoiser on toy checkerboards",
            keys: cat(&[
                &[
                    "train_steps",
                    "batch",
                    "lr",
                    "hidden",
                    "label_dropout",
                    "eval_size",
                    "eval_every",
                    "board_size",
                ],
                SCHEDULE_KEYS,
            ]),
        },
        Sub {
            name: "sample",
            about: "Single-stage sampling with the analytic or a trained denoiser",
            keys: cat(&[
                &[
                    "denoiser",
                    "checkpoint",
                    "label",
                    "guidance",
                    "samples",
                    "size",
                    "depth",
                ],
                PRIOR_KEYS,
                SCHEDULE_KEYS,
            ]),
        },
        Sub {
            name: "relay",
            about: "Two-stage relay on the Gaussian toy problem (schedule keys configure stage 2)",
            keys: cat(&[
                &["samples", "reference", "depth"],
                RELAY_KEYS,
                PRIOR_KEYS,
                SCHEDULE_KEYS,
            ]),
        },
        Sub {
            name: "sweep",
            about: "Eta and step-allocation sweeps of the Gaussian relay",
            keys: cat(&[
                &["sweep", "etas", "totals", "samples", "reference"],
                RELAY_KEYS,
                PRIOR_KEYS,
                SCHEDULE_KEYS,
            ]),
        },
        Sub {
            name: "verify",
            about: "Run the invariant suites; nonzero exit if any fails",
            keys: vec!["suite"],
        },
    ]
}

fn config_reference() -> String {
    let mut s = String::from(
        "Configuration keys (file `key = value`, `--set key=value`, or the matching flag):\n",
    );
    for k in SCHEMA {
        let d = match k.default {
            "" if SCHEDULE_KEYS.contains(&k.name) => "stage-dependent",
            "" => "none",
            d => d,
        };
        s.push_str(&format!("  {:<24} {} [default: {d}]\n", k.name, k.help));
    }
    s
}

fn cli() -> Command {
    let mut root = Command::new("rdm")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Relay diffusion toolkit: spectra, noise, forward process, training, sampling, relay runs and verification")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .after_long_help(config_reference());
    for sub in subcommands() {
        let mut cmd = Command::new(sub.name)
            .about(sub.about)
            .arg(
                Arg::new("config")
                    .long("config")
                    .value_name("PATH")
                    .value_parser(value_parser!(PathBuf))
                    .help("Experiment file of `key = value` lines; every flag overrides it"),
            )
            .arg(
                Arg::new("seed")
                    .long("seed")
                    .value_name("N")
                    .default_value("0")
                    .value_parser(value_parser!(u64))
                    .help("Random seed; recorded in the manifest"),
            )
            .arg(
                Arg::new("out")
                    .long("out")
                    .value_name("DIR")
                    .default_value("rdm-out")
                    .value_parser(value_parser!(PathBuf))
                    .help("Output directory; receives every artifact and manifest.txt"),
            )
            .arg(
                Arg::new("set")
                    .long("set")
                    .value_name("KEY=VALUE")
                    .action(ArgAction::Append)
                    .help("Override any configuration key (repeatable); see `rdm --help` for the list"),
            );
        for &key in &sub.keys {
            let spec = key_spec(key).expect("subcommand keys come from the schema");
            let default = if spec.default.is_empty() {
                String::new()
            } else {
                format!(", default {}", spec.default)
            };
            cmd = cmd.arg(
                Arg::new(key)
                    .long(key.replace('_', "-"))
                    .value_name("VALUE")
                    .help(format!("{} [config: {key}{default}]", spec.help)),
            );
        }
        root = root.subcommand(cmd);
    }
    root
}

/// File, then `--set` overrides, then named flags.
fn merged_config(m: &ArgMatches, keys: &[&str]) -> Result<ExperimentConfig> {
    let mut cfg = match m.get_one::<PathBuf>("config") {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Usage(format!("cannot read config {}: {e}", p.display())))?;
            ExperimentConfig::parse(&text).map_err(|e| Usage(format!("{}: {e}", p.display())))?
        }
        None => ExperimentConfig::default(),
    };
    for a in m.get_many::<String>("set").into_iter().flatten() {
        cfg.apply_override(a).map_err(Usage::from)?;
    }
    for &k in keys {
        if let Some(v) = m.get_one::<String>(k) {
            cfg.set(k, v).map_err(Usage::from)?;
        }
    }
    Ok(cfg)
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("RDMK_THREADS") {
        let n: usize = v.trim().parse().ok().filter(|n| *n > 0).ok_or_else(|| {
            Usage(format!(
                "RDMK_THREADS must be a positive integer, got `{v}`"
            ))
        })?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    Ok(())
}

fn run(m: &ArgMatches) -> Result<bool> {
    configure_threads()?;
    let (name, sm) = m.subcommand().expect("subcommand required");
    let subs = subcommands();
    let sub = subs
        .iter()
        .find(|s| s.name == name)
        .expect("known subcommand");
    let cfg = merged_config(sm, &sub.keys)?;
    let seed = *sm.get_one::<u64>("seed").expect("defaulted");
    let mut out = OutputDir::create(sm.get_one::<PathBuf>("out").expect("defaulted"))?;
    let ctx = Ctx {
        cfg: &cfg,
        source: RandomSource::new(seed),
        out: &mut out,
    };
    let ok = match name {
        "spectra" => commands::spectra(ctx)?,
        "noise" => commands::noise(ctx)?,
        "forward" => commands::forward(ctx)?,
        "train" => commands::train(ctx)?,
        "sample" => commands::sample_cmd(ctx)?,
        "relay" => commands::relay(ctx)?,
        "sweep" => commands::sweep(ctx)?,
        "verify" => commands::verify(ctx)?,
        _ => unreachable!(),
    };
    out.finish(seed, name)?;
    Ok(ok)
}

fn is_usage(e: &anyhow::Error) -> bool {
    e.downcast_ref::<Usage>().is_some()
        || matches!(
            e.downcast_ref::<rdm_core::Error>(),
            Some(rdm_core::Error::UnknownKey { .. } | rdm_core::Error::BadValue { .. })
        )
}

fn main() -> ExitCode {
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(&matches) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) if is_usage(&e) => {
            eprintln!("usage error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_definition_is_consistent() {
        cli().debug_assert();
    }

    #[test]
    fn every_flag_names_its_config_key() {
        for sub in subcommands() {
            let cmd = cli().find_subcommand(sub.name).unwrap().clone();
            for key in &sub.keys {
                let arg = cmd.get_arguments().find(|a| a.get_id() == *key).unwrap();
                assert!(arg
                    .get_help()
                    .unwrap()
                    .to_string()
                    .contains(&format!("[config: {key}")));
            }
        }
    }
}
