use std::path::Path;

use crate::corpus::{
    build_eval_set, build_probe_set, load_manifest, load_noise_manifest, AudioBank, EvalCondition,
    EvalSet, NoiseRecord, ProbeSet, Split, SyntheticCorpus, TrackRecord, EXTRA_FILE,
    NOISE_TEST_FILE, NOISE_TRAIN_FILE, NOISE_VALID_FILE, PRETRAIN_FILE, TRACKS_FILE,
};

use super::{Result, RunConfig, TrainError};

/// Manifests plus decoded audio for one corpus.
#[derive(Clone, Debug)]
pub struct TrainingData {
    pub pretrain: Vec<TrackRecord>,
    pub tracks: Vec<TrackRecord>,
    pub extra: Vec<TrackRecord>,
    pub noise_train: Vec<String>,
    pub noise_valid: Vec<String>,
    pub noise_test: Vec<String>,
    pub bank: AudioBank,
}

fn ids(noises: &[NoiseRecord]) -> Vec<String> {
    noises.iter().map(|n| n.id.clone()).collect()
}

impl TrainingData {
    fn assemble(
        pretrain: Vec<TrackRecord>,
        tracks: Vec<TrackRecord>,
        extra: Vec<TrackRecord>,
        noises: [&[NoiseRecord]; 3],
    ) -> Result<Self> {
        let mut bank = AudioBank::new();
        bank.load_tracks(pretrain.iter().chain(&tracks).chain(&extra))?;
        bank.load_noises(noises.iter().flat_map(|n| n.iter()))?;
        Ok(Self {
            pretrain,
            tracks,
            extra,
            noise_train: ids(noises[0]),
            noise_valid: ids(noises[1]),
            noise_test: ids(noises[2]),
            bank,
        })
    }

    pub fn from_synthetic(corpus: &SyntheticCorpus) -> Result<Self> {
        Self::assemble(
            corpus.pretrain.clone(),
            corpus.tracks.clone(),
            corpus.extra.clone(),
            [&corpus.noise_train, &corpus.noise_valid, &corpus.noise_test],
        )
    }

    /// Loads the standard manifest set from `dir`. The extra pool is read
    /// from `extra` when given, else from the default file if present.
    pub fn load_dir(dir: &Path, extra: Option<&Path>) -> Result<Self> {
        let need = |name: &str| {
            let p = dir.join(name);
            if p.exists() {
                Ok(p)
            } else {
                Err(TrainError::MissingArtifact(format!(
                    "manifest {} not found",
                    p.display()
                )))
            }
        };
        let extra_path = match extra {
            Some(p) if p.is_relative() && !p.exists() => Some(dir.join(p)),
            Some(p) => Some(p.to_path_buf()),
            None => Some(dir.join(EXTRA_FILE)).filter(|p| p.exists()),
        };
        let extra = match extra_path {
            Some(p) => load_manifest(&p)?,
            None => Vec::new(),
        };
        Self::assemble(
            load_manifest(&need(PRETRAIN_FILE)?)?,
            load_manifest(&need(TRACKS_FILE)?)?,
            extra,
            [
                &load_noise_manifest(&need(NOISE_TRAIN_FILE)?)?,
                &load_noise_manifest(&need(NOISE_VALID_FILE)?)?,
                &load_noise_manifest(&need(NOISE_TEST_FILE)?)?,
            ],
        )
    }

    pub fn split(&self, split: Split) -> Vec<TrackRecord> {
        self.tracks
            .iter()
            .filter(|r| r.split == split)
            .cloned()
            .collect()
    }

    /// Checks that tagged records match the model's tag count.
    pub fn check_tags(&self, n_tags: usize) -> Result<()> {
        for r in &self.tracks {
            if let Some(t) = &r.tags {
                if t.len() != n_tags {
                    return Err(TrainError::Config(format!(
                        "track {} has {} tags but the model predicts {n_tags}",
                        r.id,
                        t.len()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn validation_set(&self, cfg: &RunConfig) -> Result<EvalSet> {
        Ok(build_eval_set(
            &self.split(Split::Valid),
            &cfg.validation.conditions,
            cfg.validation.seed,
            &self.bank,
            &self.noise_valid,
            cfg.augment.noise_count,
            cfg.augment.input_length,
        )?)
    }

    /// Test set under `conditions`, mixed from the test-only noise pool.
    pub fn test_set(
        &self,
        conditions: &[EvalCondition],
        seed: u64,
        noise_count: usize,
        input_length: usize,
    ) -> Result<EvalSet> {
        Ok(build_eval_set(
            &self.split(Split::Test),
            conditions,
            seed,
            &self.bank,
            &self.noise_test,
            noise_count,
            input_length,
        )?)
    }

    /// Balanced clean/noisy probe built from the validation tracks.
    pub fn probe_set(&self, cfg: &RunConfig, seed: u64) -> Result<ProbeSet> {
        Ok(build_probe_set(
            &self.split(Split::Valid),
            seed,
            &self.bank,
            &self.noise_valid,
            cfg.augment.noise_count,
            cfg.augment.snr_range_db,
            cfg.augment.input_length,
        )?)
    }

    /// Balanced clean/noisy probe from the test tracks and test noises, for
    /// measuring a DC on items no stage has seen.
    pub fn test_probe_set(&self, cfg: &RunConfig, seed: u64) -> Result<ProbeSet> {
        Ok(build_probe_set(
            &self.split(Split::Test),
            seed,
            &self.bank,
            &self.noise_test,
            cfg.augment.noise_count,
            cfg.augment.snr_range_db,
            cfg.augment.input_length,
        )?)
    }
}
