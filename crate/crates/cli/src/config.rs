//! Flat `key = value` configuration with `[section]` headers.
//!
//! ```text
//! # comment
//! [pretrain]
//! epochs = 25          # becomes pretrain.epochs
//! ```
//!
//! Resolution order, later wins: preset, config file, `--set key=value`.
//! Every key is known in advance; unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use tcssl_core::losses::LossConfig;
use tcssl_core::nn::{AdamConfig, EncoderArch, PhaseArch};
use tcssl_core::sampler::SamplerConfig;
use tcssl_core::synth::SynthConfig;
use tcssl_core::train::{FinetuneConfig, PretrainConfig, PretrainMethod};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Desk,
    Paper,
}

const DESK: &[(&str, &str)] = &[
    ("synth.num_phases", "7"),
    ("synth.feature_dim", "16"),
    ("synth.min_duration", "60"),
    ("synth.max_duration", "300"),
    ("synth.prototype_scale", "2.0"),
    ("synth.drift_step", "0.02"),
    ("synth.noise_std", "1.0"),
    ("synth.fps", "1"),
    ("synth.skip_probability", "0.1"),
    ("synth.mixing_layers", "1"),
    ("synth.mixing_gain", "0.3"),
    ("model.encoder_hidden", "64"),
    ("model.embedding_dim", "32"),
    ("model.lstm_hidden", "64"),
    ("sampler.delta_seconds", "30"),
    ("sampler.delta_seconds_second_order", "15"),
    ("sampler.gamma_seconds", "120"),
    ("sampler.tuples_per_video", "250"),
    ("loss.margin_contrastive", "2"),
    ("loss.margin_ranking", "2"),
    ("loss.second_order_weight", "0.5"),
    ("pretrain.epochs", "25"),
    ("pretrain.batch_size", "64"),
    ("pretrain.learning_rate", "1e-4"),
    ("adam.beta1", "0.9"),
    ("adam.beta2", "0.999"),
    ("adam.epsilon", "1e-8"),
    ("finetune.batch_frames", "128"),
    ("finetune.accumulate_batches", "3"),
    ("finetune.stop_train_accuracy", "0.999"),
    ("finetune.max_epochs", "20"),
    ("finetune.learning_rate", "1e-4"),
    ("finetune.frames_per_second", "1"),
    ("finetune.frozen_layers", ""),
    ("retrieval.query_stride", "50"),
];

const PAPER_OVERRIDES: &[(&str, &str)] = &[
    ("synth.feature_dim", "2048"),
    ("synth.noise_std", "0.5"),
    ("synth.fps", "5"),
    ("synth.mixing_layers", "0"),
    ("model.encoder_hidden", ""),
    ("model.embedding_dim", "4096"),
    ("model.lstm_hidden", "512"),
    ("finetune.max_epochs", "100"),
];

/// Fully resolved settings; every known key has a value.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    pub fn preset(preset: Preset) -> Self {
        let mut values: BTreeMap<String, String> =
            DESK.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        if preset == Preset::Paper {
            for (k, v) in PAPER_OVERRIDES {
                values.insert(k.to_string(), v.to_string());
            }
        }
        Self { values }
    }

    /// Preset, then `file`, then `overrides`.
    pub fn resolve(preset: Preset, file: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut cfg = Self::preset(preset);
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
            for (k, v) in parse(&text)? {
                cfg.set(&k, &v)?;
            }
        }
        for item in overrides {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects key=value, got {item:?}")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Rebuilds a config from a resolved map, e.g. one stored in a manifest.
    pub fn from_resolved(values: BTreeMap<String, String>) -> Result<Self, CliError> {
        let mut cfg = Self::preset(Preset::Desk);
        for (k, v) in &values {
            cfg.set(k, v)?;
        }
        if cfg.values.len() != values.len() {
            return Err(CliError::Usage("resolved config is missing keys".into()));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => Err(CliError::Usage(format!("unknown config key {key:?}"))),
        }
    }

    pub fn values(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("unknown key {key}"))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, CliError> {
        let raw = self.raw(key);
        raw.parse()
            .map_err(|_| CliError::Usage(format!("config key {key}: cannot parse {raw:?}")))
    }

    /// Comma-separated list; empty string is the empty list.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>, CliError> {
        let raw = self.raw(key);
        raw.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|_| CliError::Usage(format!("config key {key}: cannot parse list item {s:?}")))
            })
            .collect()
    }

    fn validate(&self) -> Result<(), CliError> {
        self.synth()?.validate().map_err(usage)?;
        self.encoder_arch(1)?.validate().map_err(usage)?;
        for m in PretrainMethod::ALL {
            self.pretrain(m, 1.0)?.validate().map_err(usage)?;
        }
        self.finetune()?.validate().map_err(usage)?;
        let fps: f64 = self.get("finetune.frames_per_second")?;
        if !(fps.is_finite() && fps > 0.0) {
            return Err(CliError::Usage("finetune.frames_per_second must be positive".into()));
        }
        if self.get::<usize>("retrieval.query_stride")? == 0 {
            return Err(CliError::Usage("retrieval.query_stride must be positive".into()));
        }
        Ok(())
    }

    pub fn synth(&self) -> Result<SynthConfig, CliError> {
        Ok(SynthConfig {
            num_phases: self.get("synth.num_phases")?,
            feature_dim: self.get("synth.feature_dim")?,
            min_duration: self.get("synth.min_duration")?,
            max_duration: self.get("synth.max_duration")?,
            prototype_scale: self.get("synth.prototype_scale")?,
            drift_step: self.get("synth.drift_step")?,
            noise_std: self.get("synth.noise_std")?,
            fps: self.get("synth.fps")?,
            skip_probability: self.get("synth.skip_probability")?,
            mixing_layers: self.get("synth.mixing_layers")?,
            mixing_gain: self.get("synth.mixing_gain")?,
        })
    }

    pub fn encoder_arch(&self, input_dim: usize) -> Result<EncoderArch, CliError> {
        Ok(EncoderArch {
            input_dim,
            hidden: self.list("model.encoder_hidden")?,
            embedding_dim: self.get("model.embedding_dim")?,
        })
    }

    pub fn phase_arch(&self, input_dim: usize, num_phases: usize) -> Result<PhaseArch, CliError> {
        Ok(PhaseArch {
            encoder: self.encoder_arch(input_dim)?,
            lstm_hidden: self.get("model.lstm_hidden")?,
            num_phases,
        })
    }

    fn adam(&self, lr_key: &str) -> Result<AdamConfig, CliError> {
        Ok(AdamConfig {
            lr: self.get(lr_key)?,
            beta1: self.get("adam.beta1")?,
            beta2: self.get("adam.beta2")?,
            epsilon: self.get("adam.epsilon")?,
        })
    }

    /// The close-window half-width that `method` uses.
    pub fn delta_seconds(&self, method: PretrainMethod) -> Result<f64, CliError> {
        match method {
            PretrainMethod::Contrastive2 => self.get("sampler.delta_seconds_second_order"),
            _ => self.get("sampler.delta_seconds"),
        }
    }

    pub fn pretrain(&self, method: PretrainMethod, data_fps: f64) -> Result<PretrainConfig, CliError> {
        Ok(PretrainConfig {
            method,
            epochs: self.get("pretrain.epochs")?,
            batch_size: self.get("pretrain.batch_size")?,
            sampler: SamplerConfig {
                delta_seconds: self.delta_seconds(method)?,
                gamma_seconds: self.get("sampler.gamma_seconds")?,
                frames_per_second: data_fps,
                tuples_per_video: self.get("sampler.tuples_per_video")?,
            },
            loss: LossConfig {
                margin_contrastive: self.get("loss.margin_contrastive")?,
                margin_ranking: self.get("loss.margin_ranking")?,
                second_order_weight: self.get("loss.second_order_weight")?,
            },
            adam: self.adam("pretrain.learning_rate")?,
        })
    }

    pub fn finetune(&self) -> Result<FinetuneConfig, CliError> {
        Ok(FinetuneConfig {
            batch_frames: self.get("finetune.batch_frames")?,
            accumulate_batches: self.get("finetune.accumulate_batches")?,
            stop_train_accuracy: self.get("finetune.stop_train_accuracy")?,
            max_epochs: self.get("finetune.max_epochs")?,
            adam: self.adam("finetune.learning_rate")?,
        })
    }

    /// Frame stride that brings `data_fps` down to the phase-model rate.
    pub fn phase_stride(&self, data_fps: f64) -> Result<usize, CliError> {
        let target: f64 = self.get("finetune.frames_per_second")?;
        let ratio = data_fps / target;
        let stride = ratio.round();
        if stride < 1.0 || (ratio - stride).abs() > 1e-6 {
            return Err(CliError::Usage(format!(
                "finetune.frames_per_second = {target} does not divide the data rate {data_fps}"
            )));
        }
        Ok(stride as usize)
    }
}

fn usage(e: tcssl_core::Error) -> CliError {
    CliError::Usage(e.to_string())
}

/// Parses the config grammar into `(section.key, value)` pairs in file order.
pub fn parse(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut section = String::new();
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: &str| CliError::Usage(format!("config line {}: {msg}", n + 1));
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest.strip_suffix(']').ok_or_else(|| err("unterminated section header"))?.trim();
            if name.is_empty() || name.contains(char::is_whitespace) {
                return Err(err("bad section name"));
            }
            section = name.to_string();
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| err("expected key = value"))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(err("empty key"));
        }
        let key = if section.is_empty() { k.to_string() } else { format!("{section}.{k}") };
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}
