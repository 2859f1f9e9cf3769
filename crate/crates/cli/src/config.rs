use std::path::Path;

use anyhow::{Context, Result};
use robustag::corpus::{EvalCondition, SyntheticCorpusConfig};
use robustag::trainer::RunConfig;
use serde::{Deserialize, Serialize};

use crate::UsageError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Full-size model: 59,049-sample input, 512-dim embedding, 50 tags.
    Full,
    /// 2,187-sample input, 64-dim embedding, 8 tags; trains on a CPU.
    Desk,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalOptions {
    pub conditions: Vec<EvalCondition>,
    /// Seeds the eval-set crops and mixtures; kept apart from the training seed.
    pub seed: u64,
    pub noise_count: usize,
}

/// Everything a run reads from its config file, with all defaults filled in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: Preset,
    pub corpus: SyntheticCorpusConfig,
    pub run: RunConfig,
    pub eval: EvalOptions,
}

impl ExperimentConfig {
    pub fn defaults(preset: Preset) -> Self {
        let (run, corpus) = match preset {
            Preset::Full => {
                let corpus = SyntheticCorpusConfig {
                    track_duration_s: 3.0,
                    noise_duration_s: 4.0,
                    ..SyntheticCorpusConfig::default()
                };
                (RunConfig::default(), corpus)
            }
            Preset::Desk => (RunConfig::desk(), SyntheticCorpusConfig::default()),
        };
        Self {
            preset,
            eval: EvalOptions {
                conditions: EvalCondition::default_grid(),
                seed: 4242,
                noise_count: run.augment.noise_count,
            },
            corpus,
            run,
        }
    }

    /// Reads `path` over the defaults of the preset it names (desk if absent).
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::defaults(Preset::Desk));
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).with_context(|| format!("config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let user: toml::Table = toml::from_str(text).map_err(|e| UsageError(e.to_string()))?;
        let preset = match user.get("preset") {
            None => Preset::Desk,
            Some(v) => v
                .clone()
                .try_into()
                .map_err(|e| UsageError(format!("preset: {e}")))?,
        };
        let mut merged = toml::Table::try_from(Self::defaults(preset)).expect("defaults serialize");
        merge(&mut merged, user);
        let cfg: Self = toml::Value::Table(merged)
            .try_into()
            .map_err(|e| UsageError(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus
            .validate()
            .map_err(|e| UsageError(e.to_string()))?;
        self.run.validate().map_err(|e| UsageError(e.to_string()))?;
        if self.eval.conditions.is_empty() {
            return Err(UsageError("eval.conditions is empty".into()).into());
        }
        if ![1, 2, 4].contains(&self.eval.noise_count) {
            return Err(UsageError("eval.noise_count must be 1, 2 or 4".into()).into());
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Overlays `user` onto `base`, descending into tables; arrays and scalars
/// are replaced whole.
fn merge(base: &mut toml::Table, user: toml::Table) {
    for (key, value) in user {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(u)) => merge(b, u),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        for preset in [Preset::Desk, Preset::Full] {
            let cfg = ExperimentConfig::defaults(preset);
            assert_eq!(ExperimentConfig::parse(&cfg.to_toml()).unwrap(), cfg);
        }
    }

    #[test]
    fn partial_file_keeps_other_defaults() {
        let cfg =
            ExperimentConfig::parse("[run]\nseed = 7\n[run.stage3]\nmax_epochs = 3\n").unwrap();
        let mut want = ExperimentConfig::defaults(Preset::Desk);
        want.run.seed = 7;
        want.run.stage3.max_epochs = 3;
        assert_eq!(cfg, want);
    }

    #[test]
    fn preset_selects_the_model() {
        let cfg = ExperimentConfig::parse("preset = \"full\"\n").unwrap();
        assert_eq!(cfg.run.model.encoder.input_length, 59_049);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(ExperimentConfig::parse("[run]\nsede = 1\n").is_err());
        assert!(ExperimentConfig::parse("[run.augment]\ninput_length = 100\n").is_err());
        assert!(ExperimentConfig::parse("[eval]\nnoise_count = 3\n").is_err());
    }
}
