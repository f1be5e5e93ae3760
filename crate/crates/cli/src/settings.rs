//! Configuration resolution: defaults, then a key=value file, then flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use thermo_core::config::KeyValues;
use thermo_core::data::SynthConfig;
use thermo_core::model::ModelSpec;
use thermo_core::motionflow::FarnebackConfig;
use thermo_core::rtpipeline::StreamConfig;
use thermo_core::train::TrainConfig;

use crate::args::ModelArgs;

pub const RESOLVED: &str = "config.resolved";
pub const SEED_ENV: &str = "THERMO_SEED";

/// Keys outside the `model.` and `train.` sections.
const OTHER_KEYS: &[&str] = &[
    "data.source",
    "data.manifest",
    "data.flow_cache",
    "data.subset",
    "data.hop",
    "synth.n_fall",
    "synth.n_nonfall",
    "synth.frames",
    "synth.noise",
    "synth.seed",
    "flow.preset",
    "eval.threshold",
    "stream.fps",
    "stream.budget_ms",
    "stream.threshold",
    "stream.cooldown",
];

/// Resolved settings for one command.
#[derive(Clone, Debug, Default)]
pub struct RunConfig {
    pub kv: KeyValues,
}

impl RunConfig {
    /// Settings persisted beside `weights` (if any), then `--config`, then
    /// `--variant`/`--scale`. Naming a variant or scale drops inherited
    /// `model.*` keys so the preset is rebuilt cleanly.
    pub fn for_weights(weights: Option<&Path>, model: &ModelArgs) -> anyhow::Result<Self> {
        let mut kv = KeyValues::new();
        if let Some(dir) = weights.and_then(Path::parent) {
            let resolved = dir.join(RESOLVED);
            if resolved.exists() {
                kv = KeyValues::load(&resolved)?;
            }
        }
        let mut rc = Self { kv };
        rc.apply_model_args(model)?;
        Ok(rc)
    }

    pub fn from_args(model: &ModelArgs) -> anyhow::Result<Self> {
        Self::for_weights(None, model)
    }

    fn apply_model_args(&mut self, model: &ModelArgs) -> anyhow::Result<()> {
        if let Some(path) = &model.config {
            let file = KeyValues::load(path).with_context(|| format!("reading config {}", path.display()))?;
            self.kv.merge(&file);
        }
        if model.variant.is_some() || model.scale.is_some() {
            let mut kept = KeyValues::new();
            for (k, v) in self.kv.iter() {
                if !k.starts_with("model.") || k == "model.variant" || k == "model.scale" {
                    kept.set(k, v);
                }
            }
            self.kv = kept;
        }
        if let Some(v) = &model.variant {
            self.kv.set("model.variant", v.as_str());
        }
        if let Some(s) = &model.scale {
            self.kv.set("model.scale", s.as_str());
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.kv.set(key, value.to_string());
    }

    pub fn set_opt(&mut self, key: &str, value: Option<impl ToString>) {
        if let Some(v) = value {
            self.set(key, v);
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.kv.get(key)
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.get(key).map(PathBuf::from)
    }

    pub fn parsed<T: std::str::FromStr>(&self, key: &str) -> anyhow::Result<Option<T>> {
        Ok(self.kv.parsed(key)?)
    }

    fn check_keys(&self) -> anyhow::Result<()> {
        for (k, _) in self.kv.iter() {
            if !(k.starts_with("model.") || k.starts_with("train.") || OTHER_KEYS.contains(&k)) {
                bail!("unknown configuration key {k:?}");
            }
        }
        Ok(())
    }

    /// Flag, then `train.seed`, then `THERMO_SEED`, then 0; stored back as
    /// `train.seed`.
    pub fn resolve_seed(&mut self, flag: Option<u64>) -> anyhow::Result<u64> {
        let seed = match flag {
            Some(s) => s,
            None => match self.parsed::<u64>("train.seed")? {
                Some(s) => s,
                None => env_seed()?.unwrap_or(0),
            },
        };
        self.set("train.seed", seed);
        Ok(seed)
    }

    pub fn model_spec(&self) -> anyhow::Result<ModelSpec> {
        self.check_keys()?;
        let spec = ModelSpec::from_config(&self.kv)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn train_config(&self) -> anyhow::Result<TrainConfig> {
        Ok(TrainConfig::from_config(&self.kv)?)
    }

    pub fn flow_config(&self) -> anyhow::Result<FarnebackConfig> {
        let cfg = match self.get("flow.preset") {
            Some(p) => FarnebackConfig::preset(p)?,
            None => FarnebackConfig::default(),
        };
        Ok(cfg)
    }

    /// Synthetic data matching the model's window and extents.
    pub fn synth_config(&self, spec: &ModelSpec) -> anyhow::Result<SynthConfig> {
        if spec.height != spec.width {
            bail!("synthetic data needs square frames, model is {}x{}", spec.height, spec.width);
        }
        let seed = match self.parsed::<u64>("synth.seed")? {
            Some(s) => s,
            None => self.parsed::<u64>("train.seed")?.unwrap_or(0),
        };
        let mut cfg = SynthConfig::new(250, 250, spec.height, seed);
        cfg.frames = spec.frames;
        if let Some(n) = self.parsed("synth.n_fall")? {
            cfg.n_fall = n;
        }
        if let Some(n) = self.parsed("synth.n_nonfall")? {
            cfg.n_nonfall = n;
        }
        if let Some(n) = self.parsed("synth.frames")? {
            cfg.frames = n;
        }
        if let Some(n) = self.parsed("synth.noise")? {
            cfg.noise = n;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn stream_config(&self, spec: &ModelSpec) -> anyhow::Result<StreamConfig> {
        let mut cfg = StreamConfig {
            flow_enabled: spec.variant.uses_motion(),
            flow: self.flow_config()?,
            ..StreamConfig::default()
        };
        if let Some(v) = self.parsed("stream.fps")? {
            cfg.fps = v;
        }
        if let Some(v) = self.parsed("stream.budget_ms")? {
            cfg.budget_ms = v;
        }
        if let Some(v) = self.parsed("stream.threshold")? {
            cfg.threshold = v;
        }
        if let Some(v) = self.parsed("stream.cooldown")? {
            cfg.cooldown = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical form: every model and training field spelled out, other
    /// sections as given.
    pub fn resolved(&self, spec: &ModelSpec, train: Option<&TrainConfig>) -> anyhow::Result<KeyValues> {
        let mut kv = self.kv.clone();
        kv.merge(&KeyValues::parse(&spec.to_config())?);
        if let Some(t) = train {
            kv.merge(&KeyValues::parse(&t.to_config())?);
        }
        Ok(kv)
    }

    pub fn write_resolved(&self, dir: &Path, spec: &ModelSpec, train: Option<&TrainConfig>) -> anyhow::Result<KeyValues> {
        let kv = self.resolved(spec, train)?;
        log::info!("resolved configuration:\n{}", kv.render().trim_end());
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(RESOLVED);
        std::fs::write(&path, kv.render()).with_context(|| format!("writing {}", path.display()))?;
        Ok(kv)
    }
}

fn env_seed() -> anyhow::Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) => Ok(Some(s.trim().parse().with_context(|| format!("{SEED_ENV}={s:?} is not a seed"))?)),
        Err(_) => Ok(None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("run.cfg");
        std::fs::write(&file, "model.variant=m3\nmodel.dense_units=32\ntrain.seed=9\n").unwrap();
        let args = ModelArgs {
            config: Some(file.clone()),
            ..ModelArgs::default()
        };
        let mut rc = RunConfig::from_args(&args).unwrap();
        assert_eq!(rc.model_spec().unwrap().dense_units, 32);
        assert_eq!(rc.resolve_seed(None).unwrap(), 9);
        assert_eq!(rc.resolve_seed(Some(4)).unwrap(), 4);
        assert_eq!(rc.get("train.seed"), Some("4"));

        let args = ModelArgs {
            config: Some(file),
            variant: Some("m2".into()),
            scale: None,
        };
        let rc = RunConfig::from_args(&args).unwrap();
        let spec = rc.model_spec().unwrap();
        assert_eq!((spec.variant.name(), spec.dense_units), ("m2", 64));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut rc = RunConfig::default();
        rc.set("data.bogus", 1);
        assert!(rc.model_spec().is_err());
    }
}
