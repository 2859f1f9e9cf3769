//! Procedural desk corpus whose tags follow from the synthesis parameters.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::seeding::{stream, subseed};
use crate::signal::{
    synth, write_wav, BurstParams, MusicParams, NoiseParams, SynthParams, SynthSpec, WavFormat,
};

use super::{
    write_manifest, write_noise_manifest, AudioSource, CorpusError, Domain, NoiseRecord, Result,
    Split, TrackRecord,
};

pub const TAG_NAMES: [&str; 8] = [
    "low", "mid_low", "mid_high", "high", "bright", "pulsing", "dyad", "vibrato",
];

/// Fundamental bands for the four pitch tags (Hz).
const BANDS: [(f64, f64); 4] = [
    (110.0, 150.0),
    (190.0, 260.0),
    (330.0, 450.0),
    (560.0, 760.0),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticCorpusConfig {
    pub seed: u64,
    /// Records in the main manifest, across all splits and domains.
    pub n_tracks: usize,
    pub target_fraction: f64,
    pub valid_fraction: f64,
    pub test_fraction: f64,
    pub n_extra: usize,
    pub n_pretrain: usize,
    pub n_noise_train: usize,
    pub n_noise_valid: usize,
    pub n_noise_test: usize,
    pub track_duration_s: f64,
    pub noise_duration_s: f64,
    pub sample_rate_hz: u32,
    /// Chance that each of the four binary tags is on.
    pub tag_probability: f64,
}

impl Default for SyntheticCorpusConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_tracks: 240,
            target_fraction: 0.25,
            valid_fraction: 0.15,
            test_fraction: 0.25,
            n_extra: 24,
            n_pretrain: 192,
            n_noise_train: 16,
            n_noise_valid: 8,
            n_noise_test: 8,
            track_duration_s: 0.5,
            noise_duration_s: 1.0,
            sample_rate_hz: crate::signal::SAMPLE_RATE_HZ,
            tag_probability: 0.5,
        }
    }
}

impl SyntheticCorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let fractions = [
            self.target_fraction,
            self.valid_fraction,
            self.test_fraction,
        ];
        if fractions.iter().any(|f| !(0.0..=1.0).contains(f))
            || fractions.iter().sum::<f64>() >= 1.0
        {
            return Err(CorpusError::Setting(
                "split fractions must be in [0,1] and leave room for source".into(),
            ));
        }
        if !(self.track_duration_s > 0.0 && self.noise_duration_s > 0.0) {
            return Err(CorpusError::Setting("durations must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.tag_probability) {
            return Err(CorpusError::Setting(
                "tag_probability outside [0, 1]".into(),
            ));
        }
        Ok(())
    }

    /// (source train, target train, valid, test) counts.
    pub fn split_counts(&self) -> (usize, usize, usize, usize) {
        let n = self.n_tracks as f64;
        let target = (n * self.target_fraction).round() as usize;
        let valid = (n * self.valid_fraction).round() as usize;
        let test = (n * self.test_fraction).round() as usize;
        let source = self.n_tracks.saturating_sub(target + valid + test);
        (source, target, valid, test)
    }
}

/// Tags implied by a music spec, or `None` for noise.
pub fn derive_tags(spec: &SynthSpec) -> Option<Vec<u8>> {
    let SynthParams::Music(p) = &spec.params else {
        return None;
    };
    let mid = 0.5 * (p.f0_range_hz.0 + p.f0_range_hz.1);
    let mut tags = vec![0u8; TAG_NAMES.len()];
    for (k, (lo, hi)) in BANDS.iter().enumerate() {
        if (*lo..=*hi).contains(&mid) {
            tags[k] = 1;
        }
    }
    tags[4] = u8::from(p.n_harmonics >= 8);
    tags[5] = u8::from(p.tremolo_hz > 0.0 && p.tremolo_depth >= 0.5);
    tags[6] = u8::from(p.interval_ratio.is_some());
    tags[7] = u8::from(p.vibrato_depth >= 0.01);
    Some(tags)
}

fn music_spec(cfg: &SyntheticCorpusConfig, family: &str, index: u64) -> SynthSpec {
    let mut rng = stream(cfg.seed, family, index);
    let band = BANDS[rng.gen_range(0..BANDS.len())];
    let mut on = || rng.gen_bool(cfg.tag_probability);
    let (bright, pulsing, dyad, vibrato) = (on(), on(), on(), on());
    let params = MusicParams {
        f0_range_hz: band,
        n_harmonics: if bright {
            rng.gen_range(10..=14)
        } else {
            rng.gen_range(2..=4)
        },
        harmonic_rolloff: if bright {
            rng.gen_range(0.5..0.8)
        } else {
            rng.gen_range(1.4..1.8)
        },
        tremolo_hz: if pulsing {
            rng.gen_range(25.0..40.0)
        } else {
            0.0
        },
        tremolo_depth: if pulsing { 0.9 } else { 0.0 },
        vibrato_depth: if vibrato { 0.03 } else { 0.0 },
        vibrato_hz: if vibrato {
            rng.gen_range(12.0..18.0)
        } else {
            0.0
        },
        interval_ratio: dyad.then(|| [1.25, 1.5][rng.gen_range(0..2)]),
        level_rms: 0.1,
    };
    SynthSpec {
        seed: subseed(cfg.seed, &format!("{family}-{index}")),
        duration_s: cfg.track_duration_s,
        sample_rate_hz: cfg.sample_rate_hz,
        params: SynthParams::Music(params),
    }
}

fn noise_spec(cfg: &SyntheticCorpusConfig, family: &str, index: u64) -> SynthSpec {
    let mut rng = stream(cfg.seed, family, index);
    let tilt = [3.0, 6.0, 4.5, 6.0][(index % 4) as usize];
    // every other noise is gated into bursts
    let burst = (index % 8 >= 4).then(|| BurstParams {
        rate_hz: rng.gen_range(8.0..14.0),
        duty: rng.gen_range(0.4..0.6),
    });
    SynthSpec {
        seed: subseed(cfg.seed, &format!("{family}-{index}")),
        duration_s: cfg.noise_duration_s,
        sample_rate_hz: cfg.sample_rate_hz,
        params: SynthParams::Noise(NoiseParams {
            tilt_db_per_octave: tilt + rng.gen_range(-1.0..1.0),
            burst,
            level_rms: 0.1,
        }),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AudioMode {
    /// Render every clip to `audio/<id>.wav` and reference it by path.
    Wav,
    /// Keep synthesis specs in the manifests; audio is rendered on load.
    Inline,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub n_tags: usize,
    pub tracks: Vec<TrackRecord>,
    pub extra: Vec<TrackRecord>,
    pub pretrain: Vec<TrackRecord>,
    pub noise_train: Vec<NoiseRecord>,
    pub noise_valid: Vec<NoiseRecord>,
    pub noise_test: Vec<NoiseRecord>,
}

pub const TRACKS_FILE: &str = "tracks.jsonl";
pub const EXTRA_FILE: &str = "extra.jsonl";
pub const PRETRAIN_FILE: &str = "pretrain.jsonl";
pub const NOISE_TRAIN_FILE: &str = "noise_train.jsonl";
pub const NOISE_VALID_FILE: &str = "noise_valid.jsonl";
pub const NOISE_TEST_FILE: &str = "noise_test.jsonl";

impl SyntheticCorpus {
    pub fn generate(cfg: &SyntheticCorpusConfig) -> Result<Self> {
        cfg.validate()?;
        let (n_src, n_trg, n_valid, _) = cfg.split_counts();
        let track = |family: &str, prefix: &str, i: usize, domain, split, tagged: bool| {
            let spec = music_spec(cfg, family, i as u64);
            TrackRecord {
                id: format!("{prefix}-{i:04}"),
                tags: if tagged { derive_tags(&spec) } else { None },
                source: AudioSource::Synth(spec),
                domain,
                split,
                noise_refs: vec![],
            }
        };
        let tracks = (0..cfg.n_tracks)
            .map(|i| {
                let (domain, split) = if i < n_src {
                    (Domain::Source, Split::Train)
                } else if i < n_src + n_trg {
                    (Domain::Target, Split::Train)
                } else if i < n_src + n_trg + n_valid {
                    (Domain::Source, Split::Valid)
                } else {
                    (Domain::Source, Split::Test)
                };
                track("track", "trk", i, domain, split, true)
            })
            .collect();
        let extra = (0..cfg.n_extra)
            .map(|i| track("extra", "ext", i, Domain::Target, Split::Train, false))
            .collect();
        let pretrain = (0..cfg.n_pretrain)
            .map(|i| track("pretrain", "pre", i, Domain::Source, Split::Train, false))
            .collect();
        let noises = |family: &str, n: usize| {
            (0..n)
                .map(|i| NoiseRecord {
                    id: format!("{family}-{i:03}"),
                    source: AudioSource::Synth(noise_spec(cfg, family, i as u64)),
                })
                .collect()
        };
        Ok(Self {
            n_tags: TAG_NAMES.len(),
            tracks,
            extra,
            pretrain,
            noise_train: noises("noise-train", cfg.n_noise_train),
            noise_valid: noises("noise-valid", cfg.n_noise_valid),
            noise_test: noises("noise-test", cfg.n_noise_test),
        })
    }

    pub fn split(&self, split: Split) -> Vec<TrackRecord> {
        self.tracks
            .iter()
            .filter(|r| r.split == split)
            .cloned()
            .collect()
    }

    /// Writes the six manifests (and audio files in [`AudioMode::Wav`]).
    /// Returns the paths written.
    pub fn write(&self, dir: &Path, mode: AudioMode) -> Result<Vec<PathBuf>> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| CorpusError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        let mut written = Vec::new();
        let audio_dir = dir.join("audio");
        if mode == AudioMode::Wav {
            fs::create_dir_all(&audio_dir).map_err(io(&audio_dir))?;
        }
        let mut render = |id: &str, source: &AudioSource| -> Result<AudioSource> {
            match (mode, source) {
                (AudioMode::Wav, AudioSource::Synth(spec)) => {
                    let rel = PathBuf::from("audio").join(format!("{id}.wav"));
                    let path = dir.join(&rel);
                    let wrap = |source| CorpusError::Signal {
                        id: id.to_string(),
                        source,
                    };
                    write_wav(&path, &synth(spec).map_err(wrap)?, WavFormat::Float32)
                        .map_err(wrap)?;
                    written.push(path);
                    Ok(AudioSource::Path(rel))
                }
                _ => Ok(source.clone()),
            }
        };
        let mut tracks = |records: &[TrackRecord]| -> Result<Vec<TrackRecord>> {
            records
                .iter()
                .map(|r| {
                    Ok(TrackRecord {
                        source: render(&r.id, &r.source)?,
                        ..r.clone()
                    })
                })
                .collect()
        };
        let main = tracks(&self.tracks)?;
        let extra = tracks(&self.extra)?;
        let pretrain = tracks(&self.pretrain)?;
        let mut noises = |records: &[NoiseRecord]| -> Result<Vec<NoiseRecord>> {
            records
                .iter()
                .map(|r| {
                    Ok(NoiseRecord {
                        id: r.id.clone(),
                        source: render(&r.id, &r.source)?,
                    })
                })
                .collect()
        };
        let nz = [
            (NOISE_TRAIN_FILE, noises(&self.noise_train)?),
            (NOISE_VALID_FILE, noises(&self.noise_valid)?),
            (NOISE_TEST_FILE, noises(&self.noise_test)?),
        ];
        for (name, recs) in [
            (TRACKS_FILE, &main),
            (EXTRA_FILE, &extra),
            (PRETRAIN_FILE, &pretrain),
        ] {
            let path = dir.join(name);
            write_manifest(&path, self.n_tags, recs)?;
            written.push(path);
        }
        for (name, recs) in &nz {
            let path = dir.join(name);
            write_noise_manifest(&path, recs)?;
            written.push(path);
        }
        Ok(written)
    }
}
