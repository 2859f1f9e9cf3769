use std::collections::HashMap;

use crate::signal::{
    normalize_rms, read_wav_at, resample, synth, AudioClip, DEFAULT_TARGET_RMS, SAMPLE_RATE_HZ,
};

use super::{AudioSource, CorpusError, NoiseRecord, Result, TrackRecord};

/// Decoded clips keyed by record id, all at the working sample rate.
///
/// Music is normalized to a common RMS on load. Noise keeps its own level
/// since mixing rescales it anyway.
#[derive(Clone, Debug, Default)]
pub struct AudioBank {
    tracks: HashMap<String, AudioClip>,
    noises: HashMap<String, AudioClip>,
}

fn render(id: &str, source: &AudioSource) -> Result<AudioClip> {
    let wrap = |source| CorpusError::Signal {
        id: id.to_string(),
        source,
    };
    match source {
        AudioSource::Path(p) => read_wav_at(p, SAMPLE_RATE_HZ).map_err(wrap),
        AudioSource::Synth(spec) => {
            let clip = synth(spec).map_err(wrap)?;
            Ok(if clip.sample_rate_hz() == SAMPLE_RATE_HZ {
                clip
            } else {
                resample(&clip, SAMPLE_RATE_HZ)
            })
        }
    }
}

impl AudioBank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn load_tracks<'a>(
        &mut self,
        records: impl IntoIterator<Item = &'a TrackRecord>,
    ) -> Result<()> {
        for r in records {
            if self.tracks.contains_key(&r.id) {
                continue;
            }
            let clip = render(&r.id, &r.source)?;
            let clip =
                normalize_rms(&clip, DEFAULT_TARGET_RMS).map_err(|source| CorpusError::Signal {
                    id: r.id.clone(),
                    source,
                })?;
            self.tracks.insert(r.id.clone(), clip);
        }
        Ok(())
    }

    pub fn load_noises<'a>(
        &mut self,
        records: impl IntoIterator<Item = &'a NoiseRecord>,
    ) -> Result<()> {
        for r in records {
            if !self.noises.contains_key(&r.id) {
                let clip = render(&r.id, &r.source)?;
                self.noises.insert(r.id.clone(), clip);
            }
        }
        Ok(())
    }

    pub fn track(&self, id: &str) -> Result<&AudioClip> {
        self.tracks
            .get(id)
            .ok_or_else(|| CorpusError::UnknownAudio(id.to_string()))
    }

    pub fn noise(&self, id: &str) -> Result<&AudioClip> {
        self.noises
            .get(id)
            .ok_or_else(|| CorpusError::UnknownAudio(id.to_string()))
    }

    pub fn n_tracks(&self) -> usize {
        self.tracks.len()
    }

    pub fn n_noises(&self) -> usize {
        self.noises.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Domain, Split};
    use crate::signal::{rms, write_wav, MusicParams, SynthParams, SynthSpec, WavFormat};

    #[test]
    fn path_and_synth_sources_agree_and_are_normalized() {
        let spec = SynthSpec {
            seed: 3,
            duration_s: 0.2,
            sample_rate_hz: 22_050,
            params: SynthParams::Music(MusicParams {
                level_rms: 0.3,
                ..MusicParams::default()
            }),
        };
        let dir = tempfile::tempdir().unwrap();
        let wav = dir.path().join("a.wav");
        write_wav(&wav, &synth(&spec).unwrap(), WavFormat::Float32).unwrap();
        let rec = |id: &str, source| TrackRecord {
            id: id.into(),
            source,
            tags: None,
            domain: Domain::Source,
            split: Split::Train,
            noise_refs: vec![],
        };
        let mut bank = AudioBank::new();
        bank.load_tracks(&[
            rec("s", AudioSource::Synth(spec)),
            rec("p", AudioSource::Path(wav)),
        ])
        .unwrap();
        let (s, p) = (bank.track("s").unwrap(), bank.track("p").unwrap());
        assert_eq!(s.samples(), p.samples());
        assert!((rms(s) - DEFAULT_TARGET_RMS).abs() < 1e-6);
        assert!(matches!(
            bank.track("zzz"),
            Err(CorpusError::UnknownAudio(_))
        ));
    }

    #[test]
    fn foreign_rate_synth_is_resampled() {
        let spec = SynthSpec {
            seed: 1,
            duration_s: 0.5,
            sample_rate_hz: 44_100,
            params: SynthParams::Music(MusicParams::default()),
        };
        let mut bank = AudioBank::new();
        bank.load_noises(&[NoiseRecord {
            id: "n".into(),
            source: AudioSource::Synth(spec),
        }])
        .unwrap();
        let clip = bank.noise("n").unwrap();
        assert_eq!(clip.sample_rate_hz(), SAMPLE_RATE_HZ);
        assert!((clip.len() as i64 - 11_025).abs() <= 1);
    }
}
