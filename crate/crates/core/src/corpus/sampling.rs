use std::collections::{HashMap, HashSet};

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::signal::{fit_length, mix_at_snr, random_offset, rms, AudioClip};

use super::{
    AudioBank, CorpusError, Domain, ExperimentSetting, Result, SettingName, Split, TrackRecord,
};

/// Augmentation and mixing knobs shared by the samplers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub input_length: usize,
    /// Chance that a pretraining view is mixed with noise.
    pub noise_probability: f64,
    pub snr_range_db: (f64, f64),
    /// Pretraining views are scaled by a gain drawn from +/- this many dB.
    pub gain_jitter_db: f64,
    /// Noises summed into every target mixture (1, 2 or 4).
    pub noise_count: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            input_length: crate::signal::FULL_INPUT_LENGTH,
            noise_probability: 0.5,
            snr_range_db: (-10.0, 10.0),
            gain_jitter_db: 3.0,
            noise_count: 1,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CorpusError::Setting(m));
        if self.input_length == 0 {
            return bad("input_length must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.noise_probability) {
            return bad(format!(
                "noise_probability {} outside [0, 1]",
                self.noise_probability
            ));
        }
        let (lo, hi) = self.snr_range_db;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return bad(format!("bad SNR range ({lo}, {hi})"));
        }
        if !(self.gain_jitter_db.is_finite() && self.gain_jitter_db >= 0.0) {
            return bad("gain_jitter_db must be >= 0".into());
        }
        if ![1, 2, 4].contains(&self.noise_count) {
            return bad(format!(
                "noise_count must be 1, 2 or 4, got {}",
                self.noise_count
            ));
        }
        Ok(())
    }
}

/// Pretraining batch: `view_i[k]` and `view_j[k]` come from the same track.
#[derive(Clone, Debug, PartialEq)]
pub struct Stage1Batch {
    pub ids: Vec<String>,
    pub view_i: Vec<Vec<f32>>,
    pub view_j: Vec<Vec<f32>>,
    /// Whether each view was mixed with noise.
    pub noisy: Vec<[bool; 2]>,
}

impl Stage1Batch {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Crop of a noise clip that is not silent (gated noise can be).
fn noise_crop<R: Rng + ?Sized>(clip: &AudioClip, n: usize, rng: &mut R) -> AudioClip {
    let mut crop = fit_length(clip, n, random_offset(clip.len(), n, rng));
    for _ in 0..16 {
        if rms(&crop) > 1e-6 {
            break;
        }
        crop = fit_length(clip, n, random_offset(clip.len(), n, rng));
    }
    crop
}

fn pick_noises<'a, R: Rng + ?Sized>(
    bank: &'a AudioBank,
    ids: &'a [String],
    count: usize,
    rng: &mut R,
) -> Result<Vec<(&'a str, &'a AudioClip)>> {
    if ids.is_empty() {
        return Err(CorpusError::EmptyPool("noise".into()));
    }
    // distinct noises when the pool allows it
    let picks: Vec<usize> = if ids.len() >= count {
        sample_indices(rng, ids.len(), count).into_vec()
    } else {
        (0..count).map(|_| rng.gen_range(0..ids.len())).collect()
    };
    picks
        .into_iter()
        .map(|i| Ok((ids[i].as_str(), bank.noise(&ids[i])?)))
        .collect()
}

/// Mixes a music crop with `count` noise crops at `snr_db`.
pub(crate) fn noisy_mixture<R: Rng + ?Sized>(
    music: &AudioClip,
    bank: &AudioBank,
    noise_ids: &[String],
    count: usize,
    snr_db: f64,
    rng: &mut R,
) -> Result<(AudioClip, Vec<String>)> {
    let n = music.len();
    let picked = pick_noises(bank, noise_ids, count, rng)?;
    let crops: Vec<AudioClip> = picked.iter().map(|(_, c)| noise_crop(c, n, rng)).collect();
    let mixed = mix_at_snr(music, &crops, snr_db).map_err(|source| CorpusError::Signal {
        id: picked[0].0.to_string(),
        source,
    })?;
    Ok((
        mixed,
        picked.into_iter().map(|(id, _)| id.to_string()).collect(),
    ))
}

fn crop<R: Rng + ?Sized>(bank: &AudioBank, id: &str, n: usize, rng: &mut R) -> Result<AudioClip> {
    let clip = bank.track(id)?;
    Ok(fit_length(clip, n, random_offset(clip.len(), n, rng)))
}

/// Two augmented views per drawn track: independent crop, optional single
/// noise at a random SNR, then gain jitter.
pub fn sample_stage1_batch<R: Rng + ?Sized>(
    records: &[TrackRecord],
    noise_ids: &[String],
    bank: &AudioBank,
    cfg: &AugmentConfig,
    batch_size: usize,
    rng: &mut R,
) -> Result<Stage1Batch> {
    if records.is_empty() {
        return Err(CorpusError::EmptyPool("pretraining tracks".into()));
    }
    let chosen: Vec<usize> = if records.len() >= batch_size {
        sample_indices(rng, records.len(), batch_size).into_vec()
    } else {
        (0..batch_size)
            .map(|_| rng.gen_range(0..records.len()))
            .collect()
    };
    let ids: Vec<String> = chosen.iter().map(|&i| records[i].id.clone()).collect();
    stage1_views(&ids, noise_ids, bank, cfg, rng)
}

/// Builds the two views for an explicit list of track ids.
pub fn stage1_views<R: Rng + ?Sized>(
    ids: &[String],
    noise_ids: &[String],
    bank: &AudioBank,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<Stage1Batch> {
    let mut batch = Stage1Batch {
        ids: ids.to_vec(),
        view_i: Vec::with_capacity(ids.len()),
        view_j: Vec::with_capacity(ids.len()),
        noisy: Vec::with_capacity(ids.len()),
    };
    for id in ids {
        let mut flags = [false; 2];
        let mut views = Vec::with_capacity(2);
        for flag in &mut flags {
            let mut view = crop(bank, id, cfg.input_length, rng)?;
            if rng.gen_bool(cfg.noise_probability) {
                let snr = rng.gen_range(cfg.snr_range_db.0..=cfg.snr_range_db.1);
                view = noisy_mixture(&view, bank, noise_ids, 1, snr, rng)?.0;
                *flag = true;
            }
            let jitter_db = rng.gen_range(-cfg.gain_jitter_db..=cfg.gain_jitter_db);
            views.push(view.scaled(10f64.powf(jitter_db / 20.0)).into_samples());
        }
        batch.view_j.push(views.pop().expect("two views"));
        batch.view_i.push(views.pop().expect("two views"));
        batch.noisy.push(flags);
    }
    Ok(batch)
}

/// A tagged source-domain track.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledTrack {
    pub id: String,
    pub tags: Vec<u8>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetOrigin {
    Main,
    Extra,
}

/// Target pool as the setting may see it. Under the proposed settings the
/// tags have been dropped when the pool is built.
#[derive(Clone, Debug, PartialEq)]
enum TargetPool {
    Labeled(Vec<LabeledTrack>),
    Unlabeled(Vec<String>),
}

impl TargetPool {
    fn len(&self) -> usize {
        match self {
            TargetPool::Labeled(v) => v.len(),
            TargetPool::Unlabeled(v) => v.len(),
        }
    }

    fn id(&self, i: usize) -> &str {
        match self {
            TargetPool::Labeled(v) => &v[i].id,
            TargetPool::Unlabeled(v) => &v[i],
        }
    }
}

/// The track pools one setting trains on during stages 2 and 3.
#[derive(Clone, Debug)]
pub struct TrainingPools {
    setting: SettingName,
    source: Vec<LabeledTrack>,
    target: TargetPool,
    extra: Vec<String>,
    noises: Vec<String>,
    noise_refs: HashMap<String, Vec<String>>,
}

impl TrainingPools {
    /// `tracks` is the main manifest (only train-split records are used);
    /// `extra` is the extra unlabeled pool, read only under proposed_b.
    pub fn new(
        setting: &ExperimentSetting,
        tracks: &[TrackRecord],
        extra: &[TrackRecord],
        noise_ids: Vec<String>,
    ) -> Result<Self> {
        setting.validate()?;
        let train = |d: Domain| {
            tracks
                .iter()
                .filter(move |r| r.split == Split::Train && r.domain == d)
        };
        let source = train(Domain::Source)
            .map(|r| {
                Ok(LabeledTrack {
                    id: r.id.clone(),
                    tags: r
                        .tags
                        .clone()
                        .ok_or_else(|| CorpusError::MissingTags(r.id.clone()))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if source.is_empty() {
            return Err(CorpusError::EmptyPool("source".into()));
        }

        let mut noise_refs = HashMap::new();
        let target = if !setting.uses_target() {
            TargetPool::Unlabeled(Vec::new())
        } else if setting.target_tagged {
            TargetPool::Labeled(
                train(Domain::Target)
                    .map(|r| {
                        Ok(LabeledTrack {
                            id: r.id.clone(),
                            tags: r
                                .tags
                                .clone()
                                .ok_or_else(|| CorpusError::MissingTags(r.id.clone()))?,
                        })
                    })
                    .collect::<Result<_>>()?,
            )
        } else {
            TargetPool::Unlabeled(train(Domain::Target).map(|r| r.id.clone()).collect())
        };
        let extra_records: &[TrackRecord] = if setting.name == SettingName::ProposedB {
            extra
        } else {
            &[]
        };
        let extra: Vec<String> = extra_records.iter().map(|r| r.id.clone()).collect();
        if setting.uses_target() {
            for r in train(Domain::Target).chain(extra_records) {
                if !r.noise_refs.is_empty() {
                    noise_refs.insert(r.id.clone(), r.noise_refs.clone());
                }
            }
            if target.len() == 0 {
                return Err(CorpusError::EmptyPool("target".into()));
            }
            if setting.name == SettingName::ProposedB && extra.is_empty() {
                return Err(CorpusError::EmptyPool("extra unlabeled".into()));
            }
            if noise_ids.is_empty() {
                return Err(CorpusError::EmptyPool("noise".into()));
            }
        }

        let source_ids: HashSet<&str> = source.iter().map(|t| t.id.as_str()).collect();
        for i in 0..target.len() {
            if source_ids.contains(target.id(i)) {
                return Err(CorpusError::OverlapViolation(target.id(i).to_string()));
            }
        }
        if let Some(id) = extra.iter().find(|id| source_ids.contains(id.as_str())) {
            return Err(CorpusError::OverlapViolation(id.clone()));
        }
        Ok(Self {
            setting: setting.name,
            source,
            target,
            extra,
            noises: noise_ids,
            noise_refs,
        })
    }

    pub fn setting(&self) -> SettingName {
        self.setting
    }

    pub fn source(&self) -> &[LabeledTrack] {
        &self.source
    }

    pub fn n_target(&self) -> usize {
        self.target.len()
    }

    pub fn n_extra(&self) -> usize {
        self.extra.len()
    }

    pub fn noise_ids(&self) -> &[String] {
        &self.noises
    }

    pub fn uses_target(&self) -> bool {
        self.target.len() > 0
    }

    fn target_draw<R: Rng + ?Sized>(&self, rng: &mut R) -> (&str, TargetOrigin, Option<&[u8]>) {
        let total = self.target.len() + self.extra.len();
        let k = rng.gen_range(0..total);
        if k < self.target.len() {
            let tags = match &self.target {
                TargetPool::Labeled(v) => Some(v[k].tags.as_slice()),
                TargetPool::Unlabeled(_) => None,
            };
            (self.target.id(k), TargetOrigin::Main, tags)
        } else {
            (
                &self.extra[k - self.target.len()],
                TargetOrigin::Extra,
                None,
            )
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SourceItem {
    pub id: String,
    pub waveform: Vec<f32>,
    pub tags: Vec<u8>,
}

/// A noisy target mixture. It carries no tags.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetItem {
    pub id: String,
    pub waveform: Vec<f32>,
    pub origin: TargetOrigin,
    pub snr_db: f64,
    pub noise_ids: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stage23Batch {
    pub src: Vec<SourceItem>,
    pub trg: Vec<TargetItem>,
    /// Present only when the setting is allowed to see target tags.
    pub trg_tags: Option<Vec<Vec<u8>>>,
}

impl Stage23Batch {
    pub fn src_domain_labels(&self) -> Vec<u8> {
        vec![0; self.src.len()]
    }

    pub fn trg_domain_labels(&self) -> Vec<u8> {
        vec![1; self.trg.len()]
    }
}

/// Builds a batch from explicit source indices plus `n_target` fresh target
/// mixtures. Source crops draw from `src_rng` and target mixtures from
/// `trg_rng`, so settings that differ only in their target half see the
/// same source data.
pub fn assemble_stage23_batch<R1: Rng + ?Sized, R2: Rng + ?Sized>(
    pools: &TrainingPools,
    bank: &AudioBank,
    cfg: &AugmentConfig,
    src_indices: &[usize],
    n_target: usize,
    src_rng: &mut R1,
    trg_rng: &mut R2,
) -> Result<Stage23Batch> {
    let mut src = Vec::with_capacity(src_indices.len());
    for &i in src_indices {
        let t = &pools.source[i];
        src.push(SourceItem {
            id: t.id.clone(),
            waveform: crop(bank, &t.id, cfg.input_length, src_rng)?.into_samples(),
            tags: t.tags.clone(),
        });
    }
    let mut trg = Vec::new();
    let mut trg_tags = matches!(pools.target, TargetPool::Labeled(_)).then(Vec::new);
    if pools.uses_target() {
        for _ in 0..n_target {
            let (id, origin, tags) = pools.target_draw(trg_rng);
            let music = crop(bank, id, cfg.input_length, trg_rng)?;
            let snr = trg_rng.gen_range(cfg.snr_range_db.0..=cfg.snr_range_db.1);
            let noise_pool = pools.noise_refs.get(id).unwrap_or(&pools.noises);
            let (mixed, noise_ids) =
                noisy_mixture(&music, bank, noise_pool, cfg.noise_count, snr, trg_rng)?;
            if let (Some(all), Some(t)) = (trg_tags.as_mut(), tags) {
                all.push(t.to_vec());
            }
            trg.push(TargetItem {
                id: id.to_string(),
                waveform: mixed.into_samples(),
                origin,
                snr_db: snr,
                noise_ids,
            });
        }
    }
    let src_ids: HashSet<&str> = src.iter().map(|s| s.id.as_str()).collect();
    if let Some(t) = trg.iter().find(|t| src_ids.contains(t.id.as_str())) {
        return Err(CorpusError::OverlapViolation(t.id.clone()));
    }
    Ok(Stage23Batch { src, trg, trg_tags })
}

/// Random stage-2/3 batch: `batch_size` distinct source tracks and, when the
/// setting has a target half, `batch_size` target mixtures.
pub fn sample_stage23_batch<R: Rng + ?Sized>(
    pools: &TrainingPools,
    bank: &AudioBank,
    cfg: &AugmentConfig,
    batch_size: usize,
    rng: &mut R,
) -> Result<Stage23Batch> {
    let n = pools.source.len();
    let idx: Vec<usize> = if n >= batch_size {
        sample_indices(rng, n, batch_size).into_vec()
    } else {
        (0..batch_size).map(|_| rng.gen_range(0..n)).collect()
    };
    let mut trg_rng = rand_chacha::ChaCha8Rng::seed_from_u64(rng.gen());
    assemble_stage23_batch(pools, bank, cfg, &idx, batch_size, rng, &mut trg_rng)
}
