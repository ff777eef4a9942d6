//! Effective configuration: preset, then config file, then flags.

use std::path::Path;

use anyhow::{bail, Context};
use hfbrt::brt::BrtHyperParams;
use hfbrt::config::ScenarioConfig;
use hfbrt::training::TrainConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSettings {
    pub snr_grid_db: Vec<f64>,
    /// Samples per sweep point.
    pub samples: usize,
    pub seed: u64,
    /// Path sets drawn for the Monte-Carlo PMF check.
    pub mc_samples: usize,
    pub bench_batch_sizes: Vec<usize>,
    pub bench_subcarriers: Vec<usize>,
    pub bench_warmup: usize,
    pub bench_reps: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            snr_grid_db: vec![0.0, 5.0, 10.0, 15.0, 20.0],
            samples: 2000,
            seed: 0,
            mc_samples: 1_000_000,
            bench_batch_sizes: vec![1, 2, 4, 8, 16],
            bench_subcarriers: vec![1, 8, 32],
            bench_warmup: 2,
            bench_reps: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    pub scenario: ScenarioConfig,
    pub model: BrtHyperParams,
    pub train: TrainConfig,
    pub eval: EvalSettings,
}

const SECTIONS: [&str; 4] = ["scenario", "model", "train", "eval"];

fn merge<T: Serialize + DeserializeOwned>(base: &T, overrides: Option<&Value>, section: &str) -> anyhow::Result<T> {
    let mut table = match Value::try_from(base)? {
        Value::Table(t) => t,
        _ => unreachable!("sections serialize as tables"),
    };
    match overrides {
        None => {}
        Some(Value::Table(o)) => table.extend(o.clone()),
        Some(_) => bail!("[{section}] must be a table"),
    }
    Value::Table(table).try_into().with_context(|| format!("invalid [{section}] section"))
}

impl Settings {
    /// Full-scale defaults, or the desk-scale preset when `toy` is set.
    pub fn preset(toy: bool) -> Self {
        if toy {
            let (scenario, model, train) = hfbrt::training::toy_preset();
            Self { scenario, model, train, eval: EvalSettings::default() }
        } else {
            let scenario = ScenarioConfig::baseline();
            let model = BrtHyperParams::full_scale(scenario.token_width(), scenario.subcarriers);
            Self { scenario, model, train: TrainConfig::full_scale(), eval: EvalSettings::default() }
        }
    }

    /// Applies a TOML document on top of the preset. Model sizes that the
    /// file leaves out follow the (possibly overridden) scenario.
    pub fn from_toml(text: &str, toy: bool, base_scenario: Option<ScenarioConfig>) -> anyhow::Result<Self> {
        let file: Table = toml::from_str(text).context("config is not valid TOML")?;
        if let Some(k) = file.keys().find(|k| !SECTIONS.contains(&k.as_str())) {
            bail!("unknown config section [{k}]; expected one of {SECTIONS:?}");
        }
        let preset = Self::preset(toy);
        let scenario: ScenarioConfig = merge(&base_scenario.unwrap_or(preset.scenario), file.get("scenario"), "scenario")?;
        let model_base = if toy {
            BrtHyperParams::toy(scenario.token_width(), scenario.subcarriers)
        } else {
            BrtHyperParams { token_width: scenario.token_width(), tokens: scenario.subcarriers, state_tokens: scenario.subcarriers, ..preset.model }
        };
        let s = Self {
            model: merge(&model_base, file.get("model"), "model")?,
            train: merge(&preset.train, file.get("train"), "train")?,
            eval: merge(&preset.eval, file.get("eval"), "eval")?,
            scenario,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: Option<&Path>, toy: bool, base_scenario: Option<ScenarioConfig>) -> anyhow::Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
            None => String::new(),
        };
        Self::from_toml(&text, toy, base_scenario)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.scenario.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if self.model.token_width != self.scenario.token_width() {
            bail!("model token_width {} differs from scenario width {}", self.model.token_width, self.scenario.token_width());
        }
        if self.eval.samples == 0 || self.eval.bench_reps == 0 {
            bail!("eval samples and bench_reps must be >= 1");
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("settings serialize")
    }

    pub fn hash_hex(&self) -> String {
        Sha256::digest(self.to_toml().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_overrides() {
        let s = Settings::from_toml("[scenario]\nsubcarriers = 4\n[train]\nepochs = 3\n", true, None).unwrap();
        assert_eq!(s.scenario.subcarriers, 4);
        assert_eq!(s.model.tokens, 4);
        assert_eq!(s.train.epochs, 3);
        assert_eq!(s.model.hidden, 32);
        let back = Settings::from_toml(&s.to_toml(), false, None).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn rejects_unknown_keys() {
        assert!(Settings::from_toml("[scenario]\nbogus = 1\n", true, None).is_err());
        assert!(Settings::from_toml("[other]\n", true, None).is_err());
        assert!(Settings::from_toml("[train]\nbatch_size = 0\n", true, None).is_err());
    }
}
