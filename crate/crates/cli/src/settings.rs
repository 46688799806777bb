//! Flat `key = value` run configuration.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use gate_core::corpus::{SynthConfig, Task};
use gate_core::encoder::EncoderConfig;
use gate_core::syntax::{default_schedule, DeltaSchedule};
use gate_core::training::TrainConfig;

use crate::CliError;

pub const KEYS: &[&str] = &[
    // inputs and outputs
    "train_treebank",
    "train_instances",
    "dev_treebank",
    "dev_instances",
    "treebank",
    "instances",
    "features",
    "dev_features",
    "checkpoint",
    "predictions",
    "resume",
    // encoder
    "task",
    "d_model",
    "n_layers",
    "n_heads",
    "ffn_dim",
    "dropout",
    "word_emb_dim",
    "feature_emb_dim",
    "delta",
    "attention_mode",
    "position_embedding",
    "trigger_type_feature",
    "max_len",
    // optimization
    "lr",
    "lr_decay",
    "decay_start_epoch",
    "batch_size",
    "max_grad_norm",
    "epochs",
    "seed",
    // synthetic corpus
    "synth_count",
    "synth_min_len",
    "synth_max_len",
    "synth_k",
    "synth_forms",
    "synth_positive_rate",
    "synth_positive_label",
    // gradient check
    "gradcheck_eps",
];

#[derive(Clone, Debug, Default)]
pub struct Settings {
    values: BTreeMap<String, String>,
    /// Keys given on the command line; their relative paths stay relative to
    /// the working directory.
    from_cli: BTreeSet<String>,
    /// Directory relative paths in the config file resolve against.
    base: Option<PathBuf>,
}

fn check_key(key: &str) -> Result<(), String> {
    if KEYS.contains(&key) {
        Ok(())
    } else {
        Err(format!("unknown key `{key}`"))
    }
}

impl Settings {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut values = BTreeMap::new();
        for (k, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| CliError::usage(format!("config line {}: {msg}", k + 1));
            let Some((key, value)) = line.split_once('=') else {
                return Err(err(format!("expected `key = value`, got `{line}`")));
            };
            let key = key.trim();
            check_key(key).map_err(err)?;
            if values.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(err(format!("duplicate key `{key}`")));
            }
        }
        Ok(Settings {
            values,
            ..Settings::default()
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        let mut s = Self::parse(&text)?;
        s.base = path.parent().map(Path::to_path_buf);
        Ok(s)
    }

    /// Applies a `key=value` override.
    pub fn set(&mut self, assignment: &str) -> Result<(), CliError> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("--set expects KEY=VALUE, got `{assignment}`")))?;
        let key = key.trim();
        check_key(key).map_err(CliError::usage)?;
        self.set_flag(key, value.trim());
        Ok(())
    }

    pub fn set_flag(&mut self, key: &str, value: impl Display) {
        self.values.insert(key.to_string(), value.to_string());
        self.from_cli.insert(key.to_string());
    }

    pub fn get<T>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        debug_assert!(KEYS.contains(&key), "{key}");
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| CliError::usage(format!("bad value `{v}` for `{key}`: {e}"))),
        }
    }

    pub fn get_or<T>(&self, key: &str, default: T) -> Result<T, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        let v = PathBuf::from(self.values.get(key)?);
        Some(match &self.base {
            Some(base) if v.is_relative() && !self.from_cli.contains(key) => base.join(v),
            _ => v,
        })
    }

    pub fn require_path(&self, key: &str) -> Result<PathBuf, CliError> {
        self.path(key)
            .ok_or_else(|| CliError::usage(format!("missing required setting `{key}`")))
    }

    pub fn task(&self) -> Result<Task, CliError> {
        self.get_or("task", Task::Re)
    }

    /// Encoder settings on top of `base`. A `delta` of `default` (or none)
    /// selects the tuned schedule; `unbounded` opens every head.
    pub fn encoder(&self, base: EncoderConfig) -> Result<EncoderConfig, CliError> {
        let mut c = base;
        c.task = self.get_or("task", c.task)?;
        c.d_model = self.get_or("d_model", c.d_model)?;
        c.n_layers = self.get_or("n_layers", c.n_layers)?;
        c.n_heads = self.get_or("n_heads", c.n_heads)?;
        c.ffn_dim = self.get_or("ffn_dim", c.ffn_dim)?;
        c.dropout = self.get_or("dropout", c.dropout)?;
        c.word_emb_dim = self.get_or("word_emb_dim", c.word_emb_dim)?;
        c.feature_emb_dim = self.get_or("feature_emb_dim", c.feature_emb_dim)?;
        c.attention_mode = self.get_or("attention_mode", c.attention_mode)?;
        c.position_embedding = self.get_or("position_embedding", c.position_embedding)?;
        c.trigger_type_feature = self.get_or("trigger_type_feature", c.trigger_type_feature)?;
        c.max_len = self.get_or("max_len", c.max_len)?;
        c.external_word_features = self.values.contains_key("features");
        let delta: Option<String> = self.get("delta")?;
        c.delta_schedule = match delta.as_deref() {
            None | Some("default") => default_schedule(c.task, c.n_heads).map_err(CliError::usage)?,
            Some("unbounded" | "all-unbounded") => DeltaSchedule::unbounded(c.n_heads),
            Some(list) => list
                .parse()
                .map_err(|e| CliError::usage(format!("bad value `{list}` for `delta`: {e}")))?,
        };
        c.validate().map_err(CliError::usage)?;
        Ok(c)
    }

    pub fn train(&self) -> Result<TrainConfig, CliError> {
        let d = TrainConfig::with_epochs(self.get_or("epochs", 50)?);
        let c = TrainConfig {
            lr: self.get_or("lr", d.lr)?,
            lr_decay: self.get_or("lr_decay", d.lr_decay)?,
            decay_start_epoch: self.get_or("decay_start_epoch", d.decay_start_epoch)?,
            batch_size: self.get_or("batch_size", d.batch_size)?,
            max_grad_norm: self.get_or("max_grad_norm", d.max_grad_norm)?,
            seed: self.get_or("seed", d.seed)?,
            ..d
        };
        c.validate().map_err(CliError::usage)?;
        Ok(c)
    }

    pub fn synth(&self) -> Result<SynthConfig, CliError> {
        let d = SynthConfig::default();
        Ok(SynthConfig {
            count: self.get_or("synth_count", d.count)?,
            min_len: self.get_or("synth_min_len", d.min_len)?,
            max_len: self.get_or("synth_max_len", d.max_len)?,
            k: self.get_or("synth_k", d.k)?,
            task: self.task()?,
            n_forms: self.get_or("synth_forms", d.n_forms)?,
            positive_label: self.get_or("synth_positive_label", d.positive_label)?,
            positive_rate: self.get_or("synth_positive_rate", d.positive_rate)?,
            span_types: d.span_types,
        })
    }
}

impl FromStr for Settings {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        Settings::parse(s)
    }
}
