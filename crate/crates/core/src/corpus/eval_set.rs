use rand::Rng;

use crate::seeding::stream;
use crate::signal::{fit_length, random_offset};

use super::sampling::noisy_mixture;
use super::{AudioBank, CorpusError, EvalCondition, Result, TrackRecord};

#[derive(Clone, Debug, PartialEq)]
pub struct EvalItem {
    pub track: usize,
    pub condition: usize,
    pub waveform: Vec<f32>,
}

/// Every track rendered once per condition. Crop offsets, noise picks and
/// noise offsets are fixed by the seed.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSet {
    pub conditions: Vec<EvalCondition>,
    pub track_ids: Vec<String>,
    pub tags: Vec<Vec<u8>>,
    /// Condition-major: all tracks of condition 0, then condition 1, ...
    pub items: Vec<EvalItem>,
}

impl EvalSet {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn n_tracks(&self) -> usize {
        self.track_ids.len()
    }

    pub fn condition_items(&self, condition: usize) -> &[EvalItem] {
        let n = self.n_tracks();
        &self.items[condition * n..(condition + 1) * n]
    }
}

/// Renders `records` under every condition. Noisy conditions mix
/// `noise_count` noises from `noise_ids`.
pub fn build_eval_set(
    records: &[TrackRecord],
    conditions: &[EvalCondition],
    seed: u64,
    bank: &AudioBank,
    noise_ids: &[String],
    noise_count: usize,
    input_length: usize,
) -> Result<EvalSet> {
    let tags = records
        .iter()
        .map(|r| {
            r.tags
                .clone()
                .ok_or_else(|| CorpusError::MissingTags(r.id.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut items = Vec::with_capacity(records.len() * conditions.len());
    for (c, cond) in conditions.iter().enumerate() {
        for (t, rec) in records.iter().enumerate() {
            let clip = bank.track(&rec.id)?;
            // the crop is shared by all conditions of a track
            let offset = random_offset(
                clip.len(),
                input_length,
                &mut stream(seed, "eval-crop", t as u64),
            );
            let music = fit_length(clip, input_length, offset);
            let waveform = match cond {
                EvalCondition::Clean => music.into_samples(),
                EvalCondition::SnrDb(snr) => {
                    let mut rng = stream(seed, "eval-noise", (t * conditions.len() + c) as u64);
                    let pool = if rec.noise_refs.is_empty() {
                        noise_ids
                    } else {
                        &rec.noise_refs
                    };
                    noisy_mixture(&music, bank, pool, noise_count, *snr, &mut rng)?
                        .0
                        .into_samples()
                }
            };
            items.push(EvalItem {
                track: t,
                condition: c,
                waveform,
            });
        }
    }
    Ok(EvalSet {
        conditions: conditions.to_vec(),
        track_ids: records.iter().map(|r| r.id.clone()).collect(),
        tags,
        items,
    })
}

/// Balanced clean/noisy waveforms for measuring how well a domain classifier
/// separates the domains. One clean crop and one mixture per track.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeSet {
    pub clean: Vec<Vec<f32>>,
    pub noisy: Vec<Vec<f32>>,
}

pub fn build_probe_set(
    records: &[TrackRecord],
    seed: u64,
    bank: &AudioBank,
    noise_ids: &[String],
    noise_count: usize,
    snr_range_db: (f64, f64),
    input_length: usize,
) -> Result<ProbeSet> {
    let mut set = ProbeSet {
        clean: Vec::with_capacity(records.len()),
        noisy: Vec::with_capacity(records.len()),
    };
    for (t, rec) in records.iter().enumerate() {
        let clip = bank.track(&rec.id)?;
        let mut rng = stream(seed, "probe", t as u64);
        let clean = fit_length(
            clip,
            input_length,
            random_offset(clip.len(), input_length, &mut rng),
        );
        let music = fit_length(
            clip,
            input_length,
            random_offset(clip.len(), input_length, &mut rng),
        );
        let snr = rng.gen_range(snr_range_db.0..=snr_range_db.1);
        let pool = if rec.noise_refs.is_empty() {
            noise_ids
        } else {
            &rec.noise_refs
        };
        let noisy = noisy_mixture(&music, bank, pool, noise_count, snr, &mut rng)?.0;
        set.clean.push(clean.into_samples());
        set.noisy.push(noisy.into_samples());
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::sampling::tests::small_corpus;
    use crate::corpus::Split;
    use crate::signal::rms_of;

    #[test]
    fn product_structure_and_clean_items() {
        let (c, bank) = small_corpus();
        let test: Vec<_> = c.split(Split::Test).into_iter().take(10).collect();
        let noise: Vec<String> = c.noise_test.iter().map(|n| n.id.clone()).collect();
        let grid = EvalCondition::default_grid();
        let set = build_eval_set(&test, &grid, 7, &bank, &noise, 2, 243).unwrap();
        assert_eq!(set.len(), 50);
        assert_eq!(set.condition_items(3).len(), 10);
        for item in set.condition_items(0) {
            let clip = bank.track(&test[item.track].id).unwrap().samples();
            let window = clip.windows(243).any(|w| w == item.waveform.as_slice());
            assert!(window, "clean item is not a crop of its source");
        }
        assert_eq!(
            set,
            build_eval_set(&test, &grid, 7, &bank, &noise, 2, 243).unwrap()
        );
        assert_ne!(
            set,
            build_eval_set(&test, &grid, 8, &bank, &noise, 2, 243).unwrap()
        );
    }

    #[test]
    fn noisy_items_hit_their_snr() {
        let (c, bank) = small_corpus();
        let test = c.split(Split::Test);
        let noise: Vec<String> = c.noise_test.iter().map(|n| n.id.clone()).collect();
        let grid = EvalCondition::default_grid();
        let set = build_eval_set(&test, &grid, 1, &bank, &noise, 1, 243).unwrap();
        for (ci, cond) in grid.iter().enumerate().skip(1) {
            let EvalCondition::SnrDb(target) = cond else {
                unreachable!()
            };
            for (clean, noisy) in set.condition_items(0).iter().zip(set.condition_items(ci)) {
                let residual: Vec<f32> = noisy
                    .waveform
                    .iter()
                    .zip(&clean.waveform)
                    .map(|(n, m)| n - m)
                    .collect();
                let snr = 20.0 * (rms_of(&clean.waveform) / rms_of(&residual)).log10();
                assert!((snr - target).abs() < 0.05, "{snr} vs {target}");
            }
        }
    }

    #[test]
    fn unlabeled_records_are_refused() {
        let (c, bank) = small_corpus();
        let err = build_eval_set(&c.pretrain, &[EvalCondition::Clean], 0, &bank, &[], 1, 243)
            .unwrap_err();
        assert!(matches!(err, CorpusError::MissingTags(_)));
    }

    #[test]
    fn probe_set_is_balanced() {
        let (c, bank) = small_corpus();
        let valid = c.split(Split::Valid);
        let noise: Vec<String> = c.noise_valid.iter().map(|n| n.id.clone()).collect();
        let p = build_probe_set(&valid, 4, &bank, &noise, 2, (-10.0, 10.0), 243).unwrap();
        assert_eq!(p.clean.len(), valid.len());
        assert_eq!(p.noisy.len(), valid.len());
        assert_eq!(
            p,
            build_probe_set(&valid, 4, &bank, &noise, 2, (-10.0, 10.0), 243).unwrap()
        );
    }
}
