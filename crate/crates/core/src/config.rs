//! Plain-text experiment configuration.
//!
//! One `key = value` pair per line; `#` starts a comment that runs to the end
//! of the line; blank lines are ignored. Every key must appear in [`SCHEMA`].
//! Later assignments (including command-line overrides applied with
//! [`ExperimentConfig::set`]) replace earlier ones.
//!
//! Schedule keys are overlays: a key that is not set keeps the value of the
//! stage it is applied to, so the same file can drive single-stage and relay
//! runs whose defaults differ.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::relay::{PowerLaw, RelayConfig, TrainConfig};
use crate::schedule::ScheduleConfig;

/// One documented configuration key.
#[derive(Debug, Clone, Copy)]
pub struct KeySpec {
    pub name: &'static str,
    /// Default as written in a file; empty when the default depends on the stage.
    pub default: &'static str,
    pub help: &'static str,
}

const fn key(name: &'static str, default: &'static str, help: &'static str) -> KeySpec {
    KeySpec {
        name,
        default,
        help,
    }
}

/// Every recognised key.
pub const SCHEMA: &[KeySpec] = &[
    // Schedule (single stage, or stage 2 of a relay).
    key(
        "p_mean",
        "-1.2",
        "mean of ln(sigma) in the log-normal schedule",
    ),
    key("p_std", "1.2", "standard deviation of ln(sigma)"),
    key(
        "t_s",
        "",
        "truncation point in (0, 1]; 1 disables truncation (relay stage 2: 0.8)",
    ),
    key(
        "sigma_b_max",
        "",
        "blur scale at t = 1; 0 disables blurring (relay stage 2: 2)",
    ),
    key(
        "steps",
        "",
        "sampler steps N (single stage: 40; relay stage 2: 40)",
    ),
    key(
        "eta",
        "0.2",
        "sampler stochasticity in [0, 1); 0 is the deterministic sampler",
    ),
    key(
        "alpha",
        "",
        "block-noise mixing weight (relay stage 2: 0.15)",
    ),
    key(
        "kernel",
        "",
        "block-noise kernel size (relay stage 2: the factor)",
    ),
    key(
        "patch",
        "",
        "blur tiling: `global` or a patch size (relay stage 2: the factor)",
    ),
    key(
        "sigma_data",
        "0.5",
        "data standard deviation used by the preconditioning",
    ),
    key(
        "t_min",
        "",
        "lower end of the sampler time grid (single stage 1e-3; relay 1e-2)",
    ),
    key(
        "fresh_correction_noise",
        "false",
        "draw new noise for the second-order correction",
    ),
    // Relay.
    key("low_res", "8", "side of the low-resolution image"),
    key("factor", "4", "upsampling factor and stage-2 patch size"),
    key("stage1_steps", "20", "low-resolution sampler steps"),
    key("stage1_eta", "0.2", "low-resolution sampler stochasticity"),
    // Gaussian toy prior.
    key("prior_amplitude", "0.5", "power-law spectrum amplitude"),
    key("prior_exponent", "2", "power-law spectrum exponent"),
    key(
        "prior_floor",
        "0.25",
        "power-law spectrum floor added to |f|^2",
    ),
    key(
        "mean_amplitude",
        "0.3",
        "amplitude of the prior's cosine mean image",
    ),
    // Fields.
    key("size", "32", "side of generated fields"),
    key(
        "noise_kind",
        "block",
        "noise generator: gaussian, block or mixed",
    ),
    key(
        "noise_alpha",
        "0.5",
        "mixing weight for the `mixed` noise generator",
    ),
    key("noise_kernel", "4", "block size for block and mixed noise"),
    key(
        "draws",
        "10000",
        "Monte-Carlo draws for covariance estimates",
    ),
    key(
        "radius",
        "2",
        "covariance offsets span [-radius, radius] on both axes",
    ),
    key("bins", "32", "radial frequency bins"),
    key("input", "", "input PGM file or directory of PGM files"),
    key(
        "times",
        "0.1,0.3,0.5,0.7,0.9",
        "comma-separated diffusion times",
    ),
    key("depth", "8", "PGM output bit depth: 8 or 16"),
    // Training.
    key("train_steps", "500", "optimisation steps"),
    key("batch", "32", "examples per step"),
    key("lr", "0.001", "learning rate"),
    key(
        "hidden",
        "16",
        "hidden channels of the convolutional denoiser",
    ),
    key(
        "label_dropout",
        "0.1",
        "probability of training without the class label",
    ),
    key("eval_size", "256", "size of the fixed evaluation set"),
    key("eval_every", "50", "evaluation interval in steps"),
    key("board_size", "8", "checkerboard side"),
    // Sampling.
    key(
        "denoiser",
        "analytic",
        "denoiser: analytic (Gaussian prior) or conv (checkpoint)",
    ),
    key(
        "checkpoint",
        "",
        "RDMK checkpoint for the convolutional denoiser",
    ),
    key("label", "", "class label for conditional sampling"),
    key(
        "guidance",
        "1",
        "guidance weight; 1 is plain conditional sampling",
    ),
    key("samples", "16", "number of samples"),
    // Sweeps.
    key("sweep", "all", "which sweep to run: eta, nfe or all"),
    key(
        "etas",
        "0,0.1,0.15,0.2,0.25,0.3,0.4,0.5",
        "comma-separated eta grid",
    ),
    key("totals", "20,40,80", "comma-separated NFE budgets"),
    key(
        "reference",
        "2000",
        "reference corpus size for quality metrics",
    ),
    // Verification.
    key("suite", "all", "verification suite name or `all`"),
];

pub fn key_spec(name: &str) -> Option<&'static KeySpec> {
    SCHEMA.iter().find(|k| k.name == name)
}

/// Parsed key/value assignments.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentConfig {
    values: BTreeMap<String, String>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("line {}: expected `key = value`", n + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if key_spec(key).is_none() {
            return Err(Error::UnknownKey {
                key: key.to_string(),
            });
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("override `{assignment}` is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn is_set(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    /// Explicit value, or the documented default.
    pub fn raw(&self, key: &str) -> Result<Option<&str>> {
        let spec = key_spec(key).ok_or_else(|| Error::UnknownKey {
            key: key.to_string(),
        })?;
        let v = self
            .values
            .get(key)
            .map(String::as_str)
            .unwrap_or(spec.default);
        Ok(if v.is_empty() { None } else { Some(v) })
    }

    pub fn get_opt<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)?.map(|v| parse_value(key, v)).transpose()
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.get_opt(key)?.ok_or_else(|| Error::BadValue {
            key: key.to_string(),
            reason: "no value and no default".into(),
        })
    }

    /// Comma-separated list.
    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(key)? {
            None => Ok(Vec::new()),
            Some(v) => v
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| parse_value(key, s))
                .collect(),
        }
    }

    /// Overlays the schedule keys that are set onto `base`.
    pub fn overlay_schedule(&self, base: ScheduleConfig) -> Result<ScheduleConfig> {
        let mut s = base;
        overlay(self, "p_mean", &mut s.p_mean)?;
        overlay(self, "p_std", &mut s.p_std)?;
        overlay(self, "t_s", &mut s.t_s)?;
        overlay(self, "sigma_b_max", &mut s.sigma_b_max)?;
        overlay(self, "steps", &mut s.n_steps)?;
        overlay(self, "eta", &mut s.eta)?;
        overlay(self, "alpha", &mut s.alpha)?;
        overlay(self, "kernel", &mut s.kernel)?;
        overlay(self, "patch", &mut s.patch)?;
        overlay(self, "sigma_data", &mut s.sigma_data)?;
        overlay(self, "t_min", &mut s.t_min)?;
        overlay(
            self,
            "fresh_correction_noise",
            &mut s.fresh_correction_noise,
        )?;
        s.validate().map_err(bad)?;
        Ok(s)
    }

    /// Single-stage schedule.
    pub fn schedule(&self) -> Result<ScheduleConfig> {
        self.overlay_schedule(ScheduleConfig::default())
    }

    /// Two-stage relay. Stage 1 takes `stage1_steps`, `stage1_eta` and the
    /// shared `p_mean`, `p_std`, `sigma_data`, `t_min`; stage 2 takes every
    /// schedule key.
    pub fn relay(&self) -> Result<RelayConfig> {
        let low_res: usize = self.get("low_res")?;
        let factor: usize = self.get("factor")?;
        if factor == 0 {
            return Err(bad_value("factor", "must be positive"));
        }
        let t_min = self.get_opt("t_min")?.unwrap_or(1e-2);
        let mut stage1 = ScheduleConfig {
            n_steps: self.get("stage1_steps")?,
            eta: self.get("stage1_eta")?,
            t_min,
            ..ScheduleConfig::default()
        };
        overlay(self, "p_mean", &mut stage1.p_mean)?;
        overlay(self, "p_std", &mut stage1.p_std)?;
        overlay(self, "sigma_data", &mut stage1.sigma_data)?;
        let stage2 = self.overlay_schedule(ScheduleConfig {
            n_steps: 40,
            t_min,
            ..ScheduleConfig::relay_stage(factor)
        })?;
        let cfg = RelayConfig {
            low_res,
            factor,
            stage1,
            stage2,
        };
        cfg.validate().map_err(bad)?;
        Ok(cfg)
    }

    pub fn train(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            steps: self.get("train_steps")?,
            batch: self.get("batch")?,
            lr: self.get("lr")?,
            hidden: self.get("hidden")?,
            label_dropout: self.get("label_dropout")?,
            eval_size: self.get("eval_size")?,
            eval_every: self.get("eval_every")?,
            schedule: self.schedule()?,
        };
        cfg.validate().map_err(bad)?;
        Ok(cfg)
    }

    pub fn power_law(&self) -> Result<PowerLaw> {
        Ok(PowerLaw {
            amplitude: self.get("prior_amplitude")?,
            exponent: self.get("prior_exponent")?,
            floor: self.get("prior_floor")?,
        })
    }
}

fn parse_value<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| Error::BadValue {
        key: key.to_string(),
        reason: format!("`{v}`: {e}"),
    })
}

fn overlay<T: FromStr>(cfg: &ExperimentConfig, key: &str, slot: &mut T) -> Result<()>
where
    T::Err: std::fmt::Display,
{
    if let Some(v) = cfg.values.get(key) {
        *slot = parse_value(key, v)?;
    }
    Ok(())
}

fn bad_value(key: &str, reason: &str) -> Error {
    Error::BadValue {
        key: key.to_string(),
        reason: reason.to_string(),
    }
}

/// Parameter validation failures surface as bad values of the named key.
fn bad(e: Error) -> Error {
    match e {
        Error::InvalidParameter { name, reason } => Error::BadValue {
            key: name.to_string(),
            reason,
        },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Tiling;

    #[test]
    fn parses_comments_and_overrides() {
        let mut cfg =
            ExperimentConfig::parse("# header\neta = 0.3  # trailing\n\n steps=12\n").unwrap();
        assert_eq!(cfg.get::<f64>("eta").unwrap(), 0.3);
        cfg.apply_override("eta=0.1").unwrap();
        let s = cfg.schedule().unwrap();
        assert_eq!((s.eta, s.n_steps), (0.1, 12));
        assert_eq!(s.sigma_b_max, 0.0);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = ExperimentConfig::parse("eta=0.2\nbogus_key = 3\n").unwrap_err();
        match err {
            Error::UnknownKey { key } => assert_eq!(key, "bogus_key"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(ExperimentConfig::default()
            .apply_override("nope=1")
            .is_err());
        assert!(ExperimentConfig::parse("no equals sign").is_err());
    }

    #[test]
    fn bad_values_name_the_key() {
        let cfg = ExperimentConfig::parse("eta = 1.5").unwrap();
        match cfg.schedule().unwrap_err() {
            Error::BadValue { key, .. } => assert_eq!(key, "eta"),
            other => panic!("unexpected {other:?}"),
        }
        let cfg = ExperimentConfig::parse("steps = many").unwrap();
        assert!(matches!(cfg.schedule(), Err(Error::BadValue { .. })));
    }

    #[test]
    fn relay_overlay_keeps_stage_defaults() {
        let cfg = ExperimentConfig::parse("eta = 0.5\nstage1_steps = 10").unwrap();
        let r = cfg.relay().unwrap();
        assert_eq!(r.stage1.n_steps, 10);
        assert_eq!(r.stage1.sigma_b_max, 0.0);
        assert_eq!(r.stage2.eta, 0.5);
        assert_eq!(r.stage2.patch, Tiling::Patch(4));
        assert_eq!(r.stage2.sigma_b_max, 2.0);
        assert_eq!((r.stage1.t_min, r.stage2.t_min), (1e-2, 1e-2));
    }

    #[test]
    fn lists_and_defaults() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.get_list::<usize>("totals").unwrap(), vec![20, 40, 80]);
        assert_eq!(cfg.get_opt::<usize>("label").unwrap(), None);
        assert_eq!(cfg.train().unwrap(), TrainConfig::default());
        for k in SCHEMA {
            assert!(!k.help.is_empty());
            assert_eq!(
                SCHEMA.iter().filter(|o| o.name == k.name).count(),
                1,
                "{}",
                k.name
            );
        }
    }
}
