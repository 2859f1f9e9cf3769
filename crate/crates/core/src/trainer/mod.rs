//! Three-stage training (contrastive pretraining, domain-classifier
//! pretraining, adversarial finetuning) and the two-step baseline/oracle
//! variants, with checkpointing and early stopping.

mod checkpoint;
mod data;
mod stages;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{AugmentConfig, CorpusError, EvalCondition, ExperimentSetting};
use crate::evalkit::EvalError;
use crate::netlab::{Collection, GrlConfig, ModelConfig, NetError, DEFAULT_TEMPERATURE};

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, EarlyStopState};
pub use data::TrainingData;
pub use stages::{
    resume, run_stage1, run_stage2, run_stage3, EpochRecord, Precision, StageOptions, StageOutcome,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("missing checkpoint: {0}")]
    MissingCheckpoint(String),
    #[error("missing input: {0}")]
    MissingArtifact(String),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("checkpoint does not match the configuration: {0}")]
    ConfigMismatch(String),
    #[error("{stage:?} diverged at epoch {epoch}, step {step}: {detail}")]
    DivergenceDetected {
        stage: StageKind,
        epoch: usize,
        step: usize,
        detail: String,
    },
    #[error("frozen collection {0:?} changed during the stage")]
    FreezeViolation(Collection),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    FePretrain,
    DcPretrain,
    AdversarialFinetune,
}

impl StageKind {
    pub fn index(self) -> usize {
        match self {
            StageKind::FePretrain => 1,
            StageKind::DcPretrain => 2,
            StageKind::AdversarialFinetune => 3,
        }
    }

    pub fn dir_name(self) -> &'static str {
        match self {
            StageKind::FePretrain => "stage1",
            StageKind::DcPretrain => "stage2",
            StageKind::AdversarialFinetune => "stage3",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossName {
    Ntxent,
    DomainBce,
    /// Tag loss alone (two-step settings).
    TagBce,
    /// Tag loss plus the weighted domain losses.
    Total,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopMetric {
    /// Mean macro AUC over the noisy validation conditions.
    MeanNoisyValidAuc,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EarlyStop {
    pub metric: StopMetric,
    pub patience: usize,
}

/// Optimizer settings and length of one stage.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSchedule {
    pub learning_rate: f64,
    pub max_epochs: usize,
    #[serde(default)]
    pub early_stop: Option<EarlyStop>,
}

/// What a stage trains, keeps fixed and minimizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingStagePlan {
    pub stage: StageKind,
    pub trainable: Vec<Collection>,
    pub frozen: Vec<Collection>,
    pub losses: Vec<LossName>,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub early_stop: Option<EarlyStop>,
}

impl TrainingStagePlan {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TrainError::Config(format!("{:?} plan: {m}", self.stage)));
        let mut all: Vec<Collection> = self.trainable.iter().chain(&self.frozen).copied().collect();
        all.sort();
        if all != Collection::ALL.to_vec() {
            return bad("trainable and frozen must partition {fe, dc, lp}");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be positive");
        }
        let ok = match self.stage {
            StageKind::FePretrain => {
                self.trainable == [Collection::Fe] && self.losses == [LossName::Ntxent]
            }
            StageKind::DcPretrain => {
                self.trainable == [Collection::Dc]
                    && self.frozen.contains(&Collection::Fe)
                    && self.losses == [LossName::DomainBce]
            }
            StageKind::AdversarialFinetune => {
                self.trainable == [Collection::Fe, Collection::Lp]
                    && self.frozen == [Collection::Dc]
                    && (self.losses == [LossName::Total] || self.losses == [LossName::TagBce])
            }
        };
        if !ok {
            return bad("collections or losses do not fit the stage");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchConfig {
    /// Tracks per contrastive batch (each contributes two views).
    pub stage1: usize,
    pub source: usize,
    pub target: usize,
}

impl Default for BatchConfig {
    fn default() -> Self {
        Self {
            stage1: 48,
            source: 16,
            target: 16,
        }
    }
}

/// Frozen validation data used for early stopping and domain probing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidationConfig {
    pub conditions: Vec<EvalCondition>,
    /// Seed of the frozen validation and probe sets; independent of the
    /// training seed so every run is scored on the same items.
    pub seed: u64,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self {
            conditions: EvalCondition::default_grid(),
            seed: 1234,
        }
    }
}

/// Everything that determines a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub setting: ExperimentSetting,
    pub seed: u64,
    pub precision: Precision,
    pub model: ModelConfig,
    pub augment: AugmentConfig,
    pub batch: BatchConfig,
    pub grl: GrlConfig,
    pub temperature: f64,
    pub stage1: StageSchedule,
    pub stage2: StageSchedule,
    pub stage3: StageSchedule,
    pub validation: ValidationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            setting: ExperimentSetting::proposed_a(),
            seed: 0,
            precision: Precision::F32,
            model: ModelConfig::full(),
            augment: AugmentConfig::default(),
            batch: BatchConfig::default(),
            grl: GrlConfig::default(),
            temperature: DEFAULT_TEMPERATURE,
            stage1: StageSchedule {
                learning_rate: 3e-4,
                max_epochs: 20,
                early_stop: None,
            },
            stage2: StageSchedule {
                learning_rate: 1e-4,
                max_epochs: 10,
                early_stop: None,
            },
            stage3: StageSchedule {
                learning_rate: 1e-4,
                max_epochs: 30,
                early_stop: Some(EarlyStop {
                    metric: StopMetric::MeanNoisyValidAuc,
                    patience: 10,
                }),
            },
            validation: ValidationConfig::default(),
        }
    }
}

impl RunConfig {
    /// Desk-scale geometry: 2,187-sample inputs, 64-dim embeddings, 8 tags.
    pub fn desk() -> Self {
        let model = ModelConfig::desk();
        Self {
            augment: AugmentConfig {
                input_length: model.encoder.input_length,
                ..AugmentConfig::default()
            },
            model,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.setting.validate()?;
        self.model.validate()?;
        self.augment.validate()?;
        self.grl.validate()?;
        if self.augment.input_length != self.model.encoder.input_length {
            return Err(TrainError::Config(format!(
                "augment.input_length {} differs from the encoder input length {}",
                self.augment.input_length, self.model.encoder.input_length
            )));
        }
        if self.batch.stage1 < 2
            || self.batch.source < 2
            || (self.setting.uses_target() && self.batch.target < 2)
        {
            return Err(TrainError::Config("batch sizes must be at least 2".into()));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(TrainError::Config("temperature must be positive".into()));
        }
        if self.validation.conditions.is_empty() {
            return Err(TrainError::Config(
                "validation needs at least one condition".into(),
            ));
        }
        if self.stage3.early_stop.is_some()
            && !self.validation.conditions.iter().any(|c| c.is_noisy())
        {
            return Err(TrainError::Config(
                "early stopping needs a noisy validation condition".into(),
            ));
        }
        for plan in self.plans() {
            plan.validate()?;
        }
        Ok(())
    }

    /// Stage plans in execution order. Two-step settings skip stage 2 and
    /// finetune on the tag loss alone.
    pub fn plans(&self) -> Vec<TrainingStagePlan> {
        let mut plans = vec![TrainingStagePlan {
            stage: StageKind::FePretrain,
            trainable: vec![Collection::Fe],
            frozen: vec![Collection::Dc, Collection::Lp],
            losses: vec![LossName::Ntxent],
            learning_rate: self.stage1.learning_rate,
            max_epochs: self.stage1.max_epochs,
            early_stop: self.stage1.early_stop,
        }];
        if self.setting.uses_dc {
            plans.push(TrainingStagePlan {
                stage: StageKind::DcPretrain,
                trainable: vec![Collection::Dc],
                frozen: vec![Collection::Fe, Collection::Lp],
                losses: vec![LossName::DomainBce],
                learning_rate: self.stage2.learning_rate,
                max_epochs: self.stage2.max_epochs,
                early_stop: self.stage2.early_stop,
            });
        }
        plans.push(TrainingStagePlan {
            stage: StageKind::AdversarialFinetune,
            trainable: vec![Collection::Fe, Collection::Lp],
            frozen: vec![Collection::Dc],
            losses: vec![if self.setting.uses_dc {
                LossName::Total
            } else {
                LossName::TagBce
            }],
            learning_rate: self.stage3.learning_rate,
            max_epochs: self.stage3.max_epochs,
            early_stop: self.stage3.early_stop,
        });
        plans
    }

    pub fn plan(&self, stage: StageKind) -> Option<TrainingStagePlan> {
        self.plans().into_iter().find(|p| p.stage == stage)
    }

    /// Hash of the canonical JSON form; resuming requires an exact match.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_learning_rates_follow_the_schedule() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.stage1.learning_rate, 3e-4);
        assert_eq!(cfg.stage2.learning_rate, 1e-4);
        assert_eq!(cfg.stage3.learning_rate, 1e-4);
        assert_eq!(
            cfg.batch,
            BatchConfig {
                stage1: 48,
                source: 16,
                target: 16
            }
        );
        cfg.validate().unwrap();
        RunConfig::desk().validate().unwrap();
    }

    #[test]
    fn two_step_settings_have_no_dc_stage() {
        for setting in [ExperimentSetting::baseline(), ExperimentSetting::oracle()] {
            let cfg = RunConfig {
                setting,
                ..RunConfig::desk()
            };
            let plans = cfg.plans();
            assert_eq!(plans.len(), 2);
            assert!(plans.iter().all(|p| p.stage != StageKind::DcPretrain));
            assert_eq!(plans[1].losses, vec![LossName::TagBce]);
        }
        let plans = RunConfig::desk().plans();
        assert_eq!(plans.len(), 3);
        assert_eq!(plans[2].losses, vec![LossName::Total]);
        assert_eq!(plans[1].frozen, vec![Collection::Fe, Collection::Lp]);
    }

    #[test]
    fn plan_invariants_are_checked() {
        let mut plan = RunConfig::desk().plan(StageKind::DcPretrain).unwrap();
        plan.trainable = vec![Collection::Dc, Collection::Fe];
        plan.frozen = vec![Collection::Lp];
        assert!(plan.validate().is_err());
        let mut plan = RunConfig::desk()
            .plan(StageKind::AdversarialFinetune)
            .unwrap();
        plan.losses = vec![LossName::Ntxent];
        assert!(plan.validate().is_err());
        let mut plan = RunConfig::desk().plan(StageKind::FePretrain).unwrap();
        plan.learning_rate = 0.0;
        assert!(plan.validate().is_err());
    }

    #[test]
    fn config_round_trips_and_fingerprints() {
        let cfg = RunConfig::desk();
        let json = serde_json::to_string(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.fingerprint(), cfg.fingerprint());
        let other = RunConfig {
            seed: 1,
            ..cfg.clone()
        };
        assert_ne!(other.fingerprint(), cfg.fingerprint());
        let bad = RunConfig {
            augment: AugmentConfig::default(),
            ..cfg
        };
        assert!(matches!(bad.validate(), Err(TrainError::Config(_))));
    }
}
