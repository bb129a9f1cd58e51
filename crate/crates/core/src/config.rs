//! Flat `key = value` configuration with dotted section prefixes.
//!
//! Lines starting with `#` are comments. Later assignments win, so
//! command-line overrides are applied with [`Config::set`] after loading.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use indexmap::IndexMap;

use crate::dataset::{SplitSpec, SynthSpec};
use crate::error::{Error, Result};
use crate::fisher::GmmFitOptions;
use crate::router::QualityThresholds;
use crate::vit::{TrainOptions, VitConfig};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    entries: IndexMap<String, String>,
}

const SCALAR_KEYS: &[&str] = &[
    "seed",
    "jobs",
    "threshold",
    "router.lap_var_min",
    "router.hp_mad_max",
    "train.epochs",
    "train.learning_rate",
    "train.batch_size",
    "gmm.max_iters",
    "gmm.tol",
    "synth.count",
    "synth.size",
    "synth.channels",
    "synth.fg_min",
    "synth.fg_max",
    "synth.noise_min",
    "synth.noise_max",
    "synth.blur_lengths",
    "synth.grit",
    "split.train_fraction",
];

fn known(key: &str) -> bool {
    if SCALAR_KEYS.contains(&key) {
        return true;
    }
    match key.strip_prefix("model.") {
        Some(k) => VitConfig::default().to_pairs().iter().any(|(name, _)| name == k),
        None => false,
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got '{line}'", n + 1)))?;
            cfg.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Sets one key; unknown keys are rejected so typos surface.
    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        if !known(key) {
            return Err(Error::Config(format!("unknown config key '{key}'")));
        }
        self.entries.insert(key.to_string(), value.into());
        Ok(())
    }

    /// Applies a `key=value` override as given on the command line.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override '{pair}' is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.raw(key)
            .map(|v| {
                v.parse()
                    .map_err(|_| Error::Config(format!("bad value '{v}' for '{key}'")))
            })
            .transpose()
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn seed(&self) -> Result<u64> {
        self.get_or("seed", 0)
    }

    /// Model configuration from the `model.*` keys over the defaults.
    pub fn vit_config(&self) -> Result<VitConfig> {
        let mut cfg = VitConfig::default();
        let pairs: Vec<(&str, &str)> = self
            .entries
            .iter()
            .filter_map(|(k, v)| k.strip_prefix("model.").map(|k| (k, v.as_str())))
            .collect();
        cfg.apply_pairs(pairs)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_options(&self) -> Result<TrainOptions> {
        let d = TrainOptions::default();
        Ok(TrainOptions {
            epochs: self.get_or("train.epochs", d.epochs)?,
            learning_rate: self.get_or("train.learning_rate", d.learning_rate)?,
            batch_size: self.get_or("train.batch_size", d.batch_size)?,
            seed: self.seed()?,
        })
    }

    pub fn gmm_options(&self, components: usize) -> Result<GmmFitOptions> {
        let d = GmmFitOptions::default();
        Ok(GmmFitOptions {
            components,
            seed: self.seed()?,
            max_iters: self.get_or("gmm.max_iters", d.max_iters)?,
            tol: self.get_or("gmm.tol", d.tol)?,
        })
    }

    pub fn synth_spec(&self) -> Result<SynthSpec> {
        let d = SynthSpec::default();
        let blur_lengths = match self.raw("synth.blur_lengths") {
            None => d.blur_lengths,
            Some(v) => v
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("bad blur length '{s}'")))
                })
                .collect::<Result<_>>()?,
        };
        let spec = SynthSpec {
            size: self.get_or("synth.size", d.size)?,
            channels: self.get_or("synth.channels", d.channels)?,
            fg_fraction: (
                self.get_or("synth.fg_min", d.fg_fraction.0)?,
                self.get_or("synth.fg_max", d.fg_fraction.1)?,
            ),
            noise_sigma: (
                self.get_or("synth.noise_min", d.noise_sigma.0)?,
                self.get_or("synth.noise_max", d.noise_sigma.1)?,
            ),
            blur_lengths,
            grit_density: self.get_or("synth.grit", d.grit_density)?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn split_spec(&self) -> Result<SplitSpec> {
        Ok(SplitSpec {
            train_fraction: self.get_or("split.train_fraction", 0.8)?,
            seed: self.seed()?,
        })
    }

    /// Router thresholds, if both are present.
    pub fn thresholds(&self) -> Result<Option<QualityThresholds>> {
        match (self.get("router.lap_var_min")?, self.get("router.hp_mad_max")?) {
            (Some(l), Some(h)) => Ok(Some(QualityThresholds::new(l, h)?)),
            (None, None) => Ok(None),
            _ => Err(Error::Config(
                "router.lap_var_min and router.hp_mad_max must be given together".into(),
            )),
        }
    }

    pub fn set_thresholds(&mut self, th: &QualityThresholds) {
        // `{:?}` on f64 prints the shortest string that parses back exactly
        self.entries.insert("router.lap_var_min".into(), format!("{:?}", th.lap_var_min));
        self.entries.insert("router.hp_mad_max".into(), format!("{:?}", th.hp_mad_max));
    }
}

impl fmt::Display for Config {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_override() {
        let mut c = Config::parse("# comment\nseed = 4\n\nmodel.layers=2\ntrain.epochs = 3\n").unwrap();
        assert_eq!(c.seed().unwrap(), 4);
        c.set_pair("train.epochs=9").unwrap();
        assert_eq!(c.train_options().unwrap().epochs, 9);
        assert_eq!(c.vit_config().unwrap().layers, 2);
        assert_eq!(Config::parse(&c.to_string()).unwrap(), c);
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        assert!(Config::parse("sede = 1").is_err());
        assert!(Config::parse("seed 1").is_err());
        let c = Config::parse("seed = x").unwrap();
        assert!(c.seed().is_err());
        assert!(Config::parse("router.lap_var_min = 1").unwrap().thresholds().is_err());
    }

    #[test]
    fn thresholds_roundtrip_exactly() {
        let th = QualityThresholds::new(0.1 + 0.2, 1.0 / 3.0).unwrap();
        let mut c = Config::default();
        c.set_thresholds(&th);
        let back = Config::parse(&c.to_string()).unwrap().thresholds().unwrap().unwrap();
        assert_eq!(back, th);
    }

    #[test]
    fn synth_lists() {
        let c = Config::parse("synth.blur_lengths = 5, 7\nsynth.size = 32").unwrap();
        let s = c.synth_spec().unwrap();
        assert_eq!(s.blur_lengths, vec![5, 7]);
        assert_eq!(s.size, 32);
        assert!(Config::parse("synth.blur_lengths = 4").unwrap().synth_spec().is_err());
    }
}
