//! Flat `key = value` settings.
//!
//! Each subcommand starts from its own defaults, then applies the config
//! file, then command-line flags. The resolved map is echoed to
//! `config.txt`; feeding that file back with `--config` reruns the
//! experiment exactly.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};

use aploss_core::baselines::SmoothApConfig;
use aploss_core::synth::{SynthKind, SynthSpec};
use aploss_core::trainer::{Batching, LossKind, ModelKind, TrainConfig};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    pub fn set(&mut self, key: &str, value: impl Display) {
        self.values.insert(key.to_string(), value.to_string());
    }

    pub fn contains(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    /// Overrides an existing key; unknown keys are rejected.
    pub fn overlay(&mut self, key: &str, value: &str, source: &str) -> Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => bail!("{source}: unknown key `{key}` for this experiment"),
        }
    }

    pub fn overlay_file(&mut self, path: &Path) -> Result<()> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        for (key, value) in parse(&text).with_context(|| format!("parsing {}", path.display()))? {
            self.overlay(&key, &value, &path.display().to_string())?;
        }
        Ok(())
    }

    pub fn str(&self, key: &str) -> Result<&str> {
        self.values
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| anyhow!("missing key `{key}`"))
    }

    pub fn get<T>(&self, key: &str) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        let raw = self.str(key)?;
        raw.parse()
            .map_err(|e| anyhow!("key `{key}`: cannot parse `{raw}`: {e}"))
    }

    pub fn flag(&self, key: &str) -> Result<bool> {
        match self.str(key)? {
            "true" | "on" | "yes" | "1" => Ok(true),
            "false" | "off" | "no" | "0" => Ok(false),
            other => bail!("key `{key}`: expected on/off, got `{other}`"),
        }
    }

    /// `none` or a value.
    pub fn optional<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        if self.str(key)? == "none" {
            Ok(None)
        } else {
            self.get(key).map(Some)
        }
    }

    /// `none` or a comma-separated list.
    pub fn list<T>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T: FromStr,
        T::Err: Display,
    {
        let raw = self.str(key)?;
        if raw == "none" {
            return Ok(None);
        }
        raw.split(',')
            .map(|item| {
                let item = item.trim();
                item.parse()
                    .map_err(|e| anyhow!("key `{key}`: cannot parse `{item}`: {e}"))
            })
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }

    pub fn as_map(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    /// One `key = value` line per entry, sorted by key.
    pub fn echo(&self) -> String {
        self.values
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}

/// Parses `key = value` lines; blank lines and `#` comments are skipped.
pub fn parse(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("line {}: expected `key = value`", n + 1))?;
        let key = key.trim();
        if key.is_empty() {
            bail!("line {}: empty key", n + 1);
        }
        out.push((key.to_string(), value.trim().to_string()));
    }
    Ok(out)
}

pub fn join<T: Display>(items: &[T]) -> String {
    items
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

fn optional_text<T: Display>(value: &Option<T>) -> String {
    value
        .as_ref()
        .map_or_else(|| "none".to_string(), ToString::to_string)
}

pub fn put_train(s: &mut Settings, c: &TrainConfig) {
    s.set("loss_kind", c.loss_kind.as_str());
    s.set("learning_rate", c.learning_rate);
    s.set("momentum", c.momentum);
    s.set("weight_decay", c.weight_decay);
    s.set("batch_size", c.batch_size);
    s.set("epochs", c.epochs);
    s.set("max_steps", optional_text(&c.max_steps));
    s.set("delta", c.delta);
    s.set("piecewise", c.piecewise);
    s.set("interpolated", c.interpolated);
    s.set("batching", c.batching.as_str());
    s.set("seed", c.seed);
    match c.model {
        ModelKind::Linear => {
            s.set("model", "linear");
            s.set("hidden", 8);
        }
        ModelKind::Mlp { hidden } => {
            s.set("model", "mlp");
            s.set("hidden", hidden);
        }
    }
    s.set(
        "init_params",
        c.init_params
            .as_deref()
            .map_or_else(|| "none".to_string(), join),
    );
    s.set("temperature", c.smooth.temperature);
    s.set("epsilon", c.smooth.epsilon);
    s.set("log_space", c.smooth.log_space);
    s.set("stop_at_convergence", c.stop_at_convergence);
}

pub fn train_config(s: &Settings) -> Result<TrainConfig> {
    let model = match s.str("model")? {
        "linear" => ModelKind::Linear,
        "mlp" => ModelKind::Mlp {
            hidden: s.get("hidden")?,
        },
        other => bail!("key `model`: expected linear or mlp, got `{other}`"),
    };
    let config = TrainConfig {
        loss_kind: s.get::<LossKind>("loss_kind")?,
        learning_rate: s.get("learning_rate")?,
        momentum: s.get("momentum")?,
        weight_decay: s.get("weight_decay")?,
        batch_size: s.get("batch_size")?,
        epochs: s.get("epochs")?,
        max_steps: s.optional("max_steps")?,
        delta: s.get("delta")?,
        piecewise: s.flag("piecewise")?,
        interpolated: s.flag("interpolated")?,
        batching: s.get::<Batching>("batching")?,
        seed: s.get("seed")?,
        model,
        init_params: s.list("init_params")?,
        smooth: SmoothApConfig {
            temperature: s.get("temperature")?,
            epsilon: s.get("epsilon")?,
            log_space: s.flag("log_space")?,
        },
        stop_at_convergence: s.flag("stop_at_convergence")?,
    };
    config.validate()?;
    Ok(config)
}

/// Dataset keys; the dataset seed is the shared `seed` key.
pub fn put_synth(s: &mut Settings, spec: &SynthSpec) {
    s.set("data_kind", spec.kind.as_str());
    s.set("n_pos", spec.n_pos);
    s.set("n_neg", spec.n_neg);
    s.set("dim", spec.dim);
    s.set("margin", spec.margin);
    s.set("noise", spec.noise);
    s.set("n_images", spec.n_images);
    s.set("seed", spec.seed);
}

pub fn synth_spec(s: &Settings) -> Result<SynthSpec> {
    Ok(SynthSpec {
        kind: s.get::<SynthKind>("data_kind")?,
        n_pos: s.get("n_pos")?,
        n_neg: s.get("n_neg")?,
        dim: s.get("dim")?,
        margin: s.get("margin")?,
        noise: s.get("noise")?,
        n_images: s.get("n_images")?,
        seed: s.get("seed")?,
    })
}
