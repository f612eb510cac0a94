//! Flat `key=value` run configuration with dotted keys
//! (`model.hidden=256`, `train.lr0=1e-4`) and command-line overrides.

use crate::data::FeatureCombo;
use crate::error::{EriError, Result};
use crate::model::{ModelConfig, Pooling};
use crate::optim::TrainConfig;
use crate::synth::SynthConfig;
use indexmap::IndexMap;
use std::path::Path;
use std::str::FromStr;

#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    entries: IndexMap<String, String>,
    /// Keys actually read, so the effective-config echo shows defaults too.
    resolved: std::cell::RefCell<IndexMap<String, String>>,
}

impl RunConfig {
    pub fn new() -> Self {
        Self::default()
    }

    /// Lines of `key=value`; blank lines and `#` comments are skipped.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = RunConfig::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            cfg.set_line(line).map_err(|e| {
                EriError::Config(format!("{}:{}: {e}", path.display(), i + 1))
            })?;
        }
        Ok(cfg)
    }

    /// One `key=value` assignment, as in `--set model.hidden=32`.
    pub fn set_line(&mut self, line: &str) -> Result<()> {
        let (key, value) = line.split_once('=').ok_or_else(|| {
            EriError::Config(format!("expected key=value, got {line:?}"))
        })?;
        let key = key.trim();
        if key.is_empty() {
            return Err(EriError::Config(format!("empty key in {line:?}")));
        }
        self.entries.insert(key.to_string(), value.trim().to_string());
        Ok(())
    }

    fn lookup<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T: ToString,
    {
        let out = match self.entries.get(key) {
            Some(raw) => raw.parse::<T>().map_err(|_| {
                EriError::Config(format!("cannot parse {key}={raw}"))
            })?,
            None => default,
        };
        self.resolved
            .borrow_mut()
            .insert(key.to_string(), out.to_string());
        Ok(out)
    }

    fn lookup_str(&self, key: &str, default: &str) -> String {
        let out = self
            .entries
            .get(key)
            .cloned()
            .unwrap_or_else(|| default.to_string());
        self.resolved
            .borrow_mut()
            .insert(key.to_string(), out.clone());
        out
    }

    /// Every key that was consulted, with the value in effect (explicit or
    /// default), in a stable order.
    pub fn effective(&self) -> Vec<(String, String)> {
        let mut items: Vec<(String, String)> = self
            .resolved
            .borrow()
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        items.sort();
        items
    }

    /// Keys present in the config that were never consulted — usually typos.
    pub fn unused_keys(&self) -> Vec<String> {
        let resolved = self.resolved.borrow();
        self.entries
            .keys()
            .filter(|k| !resolved.contains_key(*k))
            .cloned()
            .collect()
    }

    pub fn min_train_valid_frames(&self) -> Result<usize> {
        self.lookup(
            "data.min_train_valid_frames",
            crate::data::MIN_TRAIN_VALID_FRAMES,
        )
    }

    pub fn feature_combo(&self) -> Result<FeatureCombo> {
        FeatureCombo::parse(&self.lookup_str(
            "features.combo",
            "resnet,au_occurrence,au_intensity,audio",
        ))
    }

    /// Architecture settings; stream dims and flags are filled in later from
    /// the data and feature combo.
    pub fn model_config(&self) -> Result<ModelConfig> {
        let d = ModelConfig::default();
        let pooling = match self.lookup_str("model.pooling", "regression_token").as_str() {
            "regression_token" => Pooling::RegressionToken,
            "mean" => Pooling::Mean,
            other => {
                return Err(EriError::Config(format!(
                    "model.pooling must be regression_token or mean, got {other}"
                )))
            }
        };
        let cfg = ModelConfig {
            gru_layers: self.lookup("model.gru_layers", d.gru_layers)?,
            hidden: self.lookup("model.hidden", d.hidden)?,
            encoder_blocks: self.lookup("model.encoder_blocks", d.encoder_blocks)?,
            heads: self.lookup("model.heads", d.heads)?,
            dropout: self.lookup("model.dropout", d.dropout)?,
            output_dim: self.lookup("model.output_dim", d.output_dim)?,
            seed: self.lookup("model.seed", d.seed)?,
            pooling,
            ..d
        };
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let d = TrainConfig::default();
        Ok(TrainConfig {
            lr0: self.lookup("train.lr0", d.lr0)?,
            decay_factor: self.lookup("train.decay_factor", d.decay_factor)?,
            decay_every: self.lookup("train.decay_every", d.decay_every)?,
            weight_decay: self.lookup("train.weight_decay", d.weight_decay)?,
            beta1: self.lookup("train.beta1", d.beta1)?,
            beta2: self.lookup("train.beta2", d.beta2)?,
            adam_eps: self.lookup("train.adam_eps", d.adam_eps)?,
            epochs: self.lookup("train.epochs", d.epochs)?,
            batch_size: self.lookup("train.batch_size", d.batch_size)?,
            seed: self.lookup("train.seed", d.seed)?,
        })
    }

    pub fn synth_config(&self) -> Result<SynthConfig> {
        let d = SynthConfig::default();
        Ok(SynthConfig {
            n_samples: self.lookup("synth.n_samples", d.n_samples)?,
            t_min: self.lookup("synth.t_min", d.t_min)?,
            t_max: self.lookup("synth.t_max", d.t_max)?,
            d_v: self.lookup("synth.d_v", d.d_v)?,
            d_a: self.lookup("synth.d_a", d.d_a)?,
            k_events: self.lookup("synth.k_events", d.k_events)?,
            amp_min: self.lookup("synth.amp_min", d.amp_min)?,
            amp_max: self.lookup("synth.amp_max", d.amp_max)?,
            noise_sigma: self.lookup("synth.noise_sigma", d.noise_sigma)?,
            tau: self.lookup("synth.tau", d.tau)?,
            visual_gain: self.lookup("synth.visual_gain", d.visual_gain)?,
            audio_gain: self.lookup("synth.audio_gain", d.audio_gain)?,
            block_structured: self.lookup(
                "synth.block_structured",
                d.block_structured,
            )?,
            train_frac: self.lookup("synth.train_frac", d.train_frac)?,
            val_frac: self.lookup("synth.val_frac", d.val_frac)?,
            seed: self.lookup("synth.seed", d.seed)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_parsing_and_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(
            &path,
            "# architecture\nmodel.hidden = 32\ntrain.lr0=0.001\n\nsynth.seed=5\n",
        )
        .unwrap();
        let mut cfg = RunConfig::from_file(&path).unwrap();
        cfg.set_line("model.hidden=64").unwrap();
        let m = cfg.model_config().unwrap();
        assert_eq!(m.hidden, 64);
        let t = cfg.train_config().unwrap();
        assert_eq!(t.lr0, 0.001);
        // untouched keys fall back to defaults
        assert_eq!(t.epochs, TrainConfig::default().epochs);
        assert_eq!(cfg.synth_config().unwrap().seed, 5);
        assert!(cfg.unused_keys().is_empty());
    }

    #[test]
    fn malformed_lines_are_config_errors() {
        let mut cfg = RunConfig::new();
        assert!(cfg.set_line("no-equals-sign").is_err());
        assert!(cfg.set_line("=5").is_err());
        cfg.set_line("model.hidden=not_a_number").unwrap();
        assert!(cfg.model_config().is_err());
    }

    #[test]
    fn effective_config_includes_defaults_and_overrides() {
        let mut cfg = RunConfig::new();
        cfg.set_line("train.epochs=3").unwrap();
        cfg.train_config().unwrap();
        let eff: IndexMap<String, String> = cfg.effective().into_iter().collect();
        assert_eq!(eff["train.epochs"], "3");
        assert_eq!(eff["train.lr0"], "0.0001");
        assert_eq!(eff["train.weight_decay"], "0.5");
    }

    #[test]
    fn unused_keys_are_reported() {
        let mut cfg = RunConfig::new();
        cfg.set_line("train.lr=0.1").unwrap(); // typo for train.lr0
        cfg.train_config().unwrap();
        assert_eq!(cfg.unused_keys(), vec!["train.lr".to_string()]);
    }

    #[test]
    fn pooling_values() {
        let mut cfg = RunConfig::new();
        cfg.set_line("model.pooling=mean").unwrap();
        assert_eq!(cfg.model_config().unwrap().pooling, Pooling::Mean);
        cfg.set_line("model.pooling=max").unwrap();
        assert!(cfg.model_config().is_err());
    }
}
