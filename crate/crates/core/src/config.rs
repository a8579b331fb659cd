//! Run configuration: line-oriented `section.key = value` text.
//!
//! `#` starts a comment. Every key has a default; unknown keys, repeated keys
//! and unparsable values are config errors. The top-level `seed` key seeds
//! augmentation, student initialization, the split and the probe head.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::augment::CropConfig;
use crate::distill::{CenterInit, DistillConfig, EmaGranularity};
use crate::error::{Error, Result};
use crate::probe::ProbeSettings;
use crate::vit::ModelConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub crop: CropConfig,
    pub distill: DistillConfig,
    pub probe: ProbeSettings,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::tiny();
        RunConfig {
            crop: CropConfig {
                out_size: model.image_size,
                ..CropConfig::default()
            },
            distill: DistillConfig {
                proj_dim: model.proj_dim,
                ..DistillConfig::default()
            },
            model,
            probe: ProbeSettings::default(),
            seed: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "1" => Ok(true),
        "false" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {value:?}"))),
    }
}

impl RunConfig {
    /// Parses config text on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::BTreeSet::new();
        let mut crop_size_set = false;
        let mut proj_set = false;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: {key} set twice", n + 1)));
            }
            match key {
                "crop.out_size" => crop_size_set = true,
                "distill.proj_dim" => proj_set = true,
                _ => {}
            }
            cfg.set(key, value)
                .map_err(|e| Error::Config(format!("line {}: {}", n + 1, strip(e))))?;
        }
        if !crop_size_set {
            cfg.crop.out_size = cfg.model.image_size;
        }
        if !proj_set {
            cfg.distill.proj_dim = cfg.model.proj_dim;
        }
        cfg.sync_seeds();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Pushes the top-level seed into every component.
    pub fn sync_seeds(&mut self) {
        self.crop.seed = self.seed;
        self.distill.seed = self.seed;
        self.probe.seed = self.seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.crop.validate()?;
        self.distill.validate()?;
        if self.crop.out_size != self.model.image_size {
            return Err(Error::Config(format!(
                "crop.out_size {} must equal model.image_size {}",
                self.crop.out_size, self.model.image_size
            )));
        }
        if self.distill.proj_dim != self.model.proj_dim {
            return Err(Error::Config(format!(
                "distill.proj_dim {} must equal model.proj_dim {}",
                self.distill.proj_dim, self.model.proj_dim
            )));
        }
        if !(self.probe.lr > 0.0) || !(self.probe.weight_decay >= 0.0) {
            return Err(Error::Config("probe.lr must be positive and probe.weight_decay >= 0".into()));
        }
        Ok(())
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let m = &mut self.model;
        let c = &mut self.crop;
        let d = &mut self.distill;
        let p = &mut self.probe;
        match key {
            "seed" => self.seed = parse(key, v)?,
            "model.image_size" => m.image_size = parse(key, v)?,
            "model.patch_size" => m.patch_size = parse(key, v)?,
            "model.channels" => m.channels = parse(key, v)?,
            "model.embed_dim" => m.embed_dim = parse(key, v)?,
            "model.depth" => m.depth = parse(key, v)?,
            "model.heads" => m.heads = parse(key, v)?,
            "model.mlp_ratio" => m.mlp_ratio = parse(key, v)?,
            "model.proj_dim" => m.proj_dim = parse(key, v)?,
            "crop.n_global" => c.n_global = parse(key, v)?,
            "crop.n_local" => c.n_local = parse(key, v)?,
            "crop.global_scale_min" => c.global_scale.0 = parse(key, v)?,
            "crop.global_scale_max" => c.global_scale.1 = parse(key, v)?,
            "crop.local_scale_min" => c.local_scale.0 = parse(key, v)?,
            "crop.local_scale_max" => c.local_scale.1 = parse(key, v)?,
            "crop.out_size" => c.out_size = parse(key, v)?,
            "crop.flip_prob" => c.flip_prob = parse(key, v)?,
            "crop.grayscale_prob" => c.grayscale_prob = parse(key, v)?,
            "distill.tau_teacher" => d.tau_teacher = parse(key, v)?,
            "distill.tau_student" => d.tau_student = parse(key, v)?,
            "distill.proj_dim" => d.proj_dim = parse(key, v)?,
            "distill.lambda_ema" => d.lambda_ema = parse(key, v)?,
            "distill.ema_granularity" => {
                d.ema_granularity = match v {
                    "epoch" => EmaGranularity::PerEpoch,
                    "step" => EmaGranularity::PerStep,
                    _ => return Err(Error::Config(format!("{key}: expected epoch or step, got {v:?}"))),
                }
            }
            "distill.centering" => d.centering = parse_bool(key, v)?,
            "distill.center_momentum" => d.center_momentum = parse(key, v)?,
            "distill.center_init" => {
                d.center_init = match v {
                    "zero" => CenterInit::Zero,
                    "first_batch" => CenterInit::FirstBatch,
                    _ => return Err(Error::Config(format!("{key}: expected zero or first_batch, got {v:?}"))),
                }
            }
            "distill.lr" => d.optimizer.lr = parse(key, v)?,
            "distill.beta1" => d.optimizer.beta1 = parse(key, v)?,
            "distill.beta2" => d.optimizer.beta2 = parse(key, v)?,
            "distill.eps" => d.optimizer.eps = parse(key, v)?,
            "distill.weight_decay" => d.optimizer.weight_decay = parse(key, v)?,
            "distill.epochs" => d.epochs = parse(key, v)?,
            "distill.batch_size" => d.batch_size = parse(key, v)?,
            "probe.lr" => p.lr = parse(key, v)?,
            "probe.epochs" => p.epochs = parse(key, v)?,
            "probe.weight_decay" => p.weight_decay = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Canonical text form; `parse(to_text())` reproduces the config.
    pub fn to_text(&self) -> String {
        let (m, c, d, p) = (&self.model, &self.crop, &self.distill, &self.probe);
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").expect("string write");
        kv("seed", self.seed.to_string());
        kv("model.image_size", m.image_size.to_string());
        kv("model.patch_size", m.patch_size.to_string());
        kv("model.channels", m.channels.to_string());
        kv("model.embed_dim", m.embed_dim.to_string());
        kv("model.depth", m.depth.to_string());
        kv("model.heads", m.heads.to_string());
        kv("model.mlp_ratio", m.mlp_ratio.to_string());
        kv("model.proj_dim", m.proj_dim.to_string());
        kv("crop.n_global", c.n_global.to_string());
        kv("crop.n_local", c.n_local.to_string());
        kv("crop.global_scale_min", format!("{:?}", c.global_scale.0));
        kv("crop.global_scale_max", format!("{:?}", c.global_scale.1));
        kv("crop.local_scale_min", format!("{:?}", c.local_scale.0));
        kv("crop.local_scale_max", format!("{:?}", c.local_scale.1));
        kv("crop.out_size", c.out_size.to_string());
        kv("crop.flip_prob", format!("{:?}", c.flip_prob));
        kv("crop.grayscale_prob", format!("{:?}", c.grayscale_prob));
        kv("distill.tau_teacher", format!("{:?}", d.tau_teacher));
        kv("distill.tau_student", format!("{:?}", d.tau_student));
        kv("distill.proj_dim", d.proj_dim.to_string());
        kv("distill.lambda_ema", format!("{:?}", d.lambda_ema));
        kv("distill.ema_granularity", d.ema_granularity.as_str().to_string());
        kv("distill.centering", d.centering.to_string());
        kv("distill.center_momentum", format!("{:?}", d.center_momentum));
        kv("distill.center_init", d.center_init.as_str().to_string());
        kv("distill.lr", format!("{:?}", d.optimizer.lr));
        kv("distill.beta1", format!("{:?}", d.optimizer.beta1));
        kv("distill.beta2", format!("{:?}", d.optimizer.beta2));
        kv("distill.eps", format!("{:?}", d.optimizer.eps));
        kv("distill.weight_decay", format!("{:?}", d.optimizer.weight_decay));
        kv("distill.epochs", d.epochs.to_string());
        kv("distill.batch_size", d.batch_size.to_string());
        kv("probe.lr", format!("{:?}", p.lr));
        kv("probe.epochs", p.epochs.to_string());
        kv("probe.weight_decay", format!("{:?}", p.weight_decay));
        s
    }

    /// Checkpoint metadata entries: the resolved config under `config` plus `seed`.
    pub fn metadata(&self) -> Vec<(String, String)> {
        vec![
            ("config".to_string(), self.to_text()),
            ("seed".to_string(), self.seed.to_string()),
        ]
    }
}

fn strip(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        other => other.to_string(),
    }
}
