//! Waveform-level operations: RMS normalization, SNR-exact mixing, length
//! fitting, resampling, procedural synthesis and WAV I/O.
//!
//! Everything here is a pure function over immutable clips. Samples are stored
//! as `f32`; gains and energies are computed in `f64`.

mod resample;
mod synth;
mod wav;

pub use resample::resample;
pub use synth::{
    synth, synth_music, synth_noise, BurstParams, MusicParams, NoiseParams, SynthKind, SynthParams,
    SynthSpec,
};
pub use wav::{read_wav, read_wav_at, write_wav, WavFormat};

use rand::Rng;
use thiserror::Error;

/// Working sample rate of the whole pipeline.
pub const SAMPLE_RATE_HZ: u32 = 22_050;

/// Model input length at full scale (3^10 samples).
pub const FULL_INPUT_LENGTH: usize = 59_049;

/// RMS level music clips are normalized to before mixing.
pub const DEFAULT_TARGET_RMS: f64 = 0.1;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("clip has zero energy")]
    ZeroEnergy,
    #[error("clip mismatch: expected {expected_len} samples at {expected_rate} Hz, got {len} at {rate} Hz")]
    LengthMismatch {
        expected_len: usize,
        expected_rate: u32,
        len: usize,
        rate: u32,
    },
    #[error("at least one noise clip is required")]
    NoNoise,
    #[error("invalid clip: {0}")]
    InvalidClip(String),
    #[error("bad synthesis spec: {0}")]
    BadSpec(String),
    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
}

pub type Result<T, E = SignalError> = std::result::Result<T, E>;

/// Fixed-rate mono waveform. Non-empty, all samples finite.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    samples: Vec<f32>,
    sample_rate_hz: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate_hz: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(SignalError::InvalidClip("empty sample buffer".into()));
        }
        if sample_rate_hz == 0 {
            return Err(SignalError::InvalidClip(
                "sample rate must be positive".into(),
            ));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(SignalError::InvalidClip(format!(
                "non-finite sample at index {i}"
            )));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    /// Multiplies every sample by `gain`.
    pub fn scaled(&self, gain: f64) -> AudioClip {
        AudioClip {
            samples: self
                .samples
                .iter()
                .map(|&s| (s as f64 * gain) as f32)
                .collect(),
            sample_rate_hz: self.sample_rate_hz,
        }
    }

    fn same_shape(&self, other: &AudioClip) -> Result<()> {
        if self.len() != other.len() || self.sample_rate_hz != other.sample_rate_hz {
            return Err(SignalError::LengthMismatch {
                expected_len: self.len(),
                expected_rate: self.sample_rate_hz,
                len: other.len(),
                rate: other.sample_rate_hz,
            });
        }
        Ok(())
    }
}

/// Root-mean-square amplitude. Zero for a silent clip.
pub fn rms(clip: &AudioClip) -> f64 {
    rms_of(clip.samples())
}

pub(crate) fn rms_of(samples: &[f32]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let energy: f64 = samples.iter().map(|&s| (s as f64) * (s as f64)).sum();
    (energy / samples.len() as f64).sqrt()
}

/// Scales `clip` so its RMS equals `target_rms`.
pub fn normalize_rms(clip: &AudioClip, target_rms: f64) -> Result<AudioClip> {
    let current = rms(clip);
    if current == 0.0 {
        return Err(SignalError::ZeroEnergy);
    }
    Ok(clip.scaled(target_rms / current))
}

/// The noise side of a mixture before it is added to the music.
#[derive(Clone, Debug)]
pub struct NoisePlan {
    /// Equal-RMS sum of the input noises, at the mean RMS of the inputs.
    pub composite: Vec<f64>,
    /// Gain applied to `composite` to reach the requested SNR.
    pub gain: f64,
}

/// Computes the composite noise and the gain that puts it `snr_db` below the
/// music. SNR is measured on full-clip RMS.
pub fn plan_noise(music: &AudioClip, noises: &[AudioClip], snr_db: f64) -> Result<NoisePlan> {
    if noises.is_empty() {
        return Err(SignalError::NoNoise);
    }
    for noise in noises {
        music.same_shape(noise)?;
    }
    let music_rms = rms(music);
    if music_rms == 0.0 {
        return Err(SignalError::ZeroEnergy);
    }
    let levels: Vec<f64> = noises.iter().map(rms).collect();
    if levels.contains(&0.0) {
        return Err(SignalError::ZeroEnergy);
    }
    let common = levels.iter().sum::<f64>() / levels.len() as f64;

    let mut composite = vec![0.0f64; music.len()];
    for (noise, level) in noises.iter().zip(&levels) {
        let scale = common / level;
        for (acc, &s) in composite.iter_mut().zip(noise.samples()) {
            *acc += s as f64 * scale;
        }
    }
    let composite_rms =
        (composite.iter().map(|v| v * v).sum::<f64>() / composite.len() as f64).sqrt();
    if composite_rms == 0.0 {
        // Noises that cancel exactly.
        return Err(SignalError::ZeroEnergy);
    }
    let gain = music_rms / composite_rms * 10f64.powf(-snr_db / 20.0);
    Ok(NoisePlan { composite, gain })
}

/// Adds the composite of `noises` to `music` at `snr_db`.
pub fn mix_at_snr(music: &AudioClip, noises: &[AudioClip], snr_db: f64) -> Result<AudioClip> {
    let plan = plan_noise(music, noises, snr_db)?;
    let samples = music
        .samples()
        .iter()
        .zip(&plan.composite)
        .map(|(&m, &n)| (m as f64 + plan.gain * n) as f32)
        .collect();
    Ok(AudioClip {
        samples,
        sample_rate_hz: music.sample_rate_hz,
    })
}

/// Crops or loop-pads `clip` to exactly `n_samples`.
///
/// Longer clips are cropped starting at `offset` (clamped to the last valid
/// start). Shorter clips are repeated periodically, starting at
/// `offset % len`.
pub fn fit_length(clip: &AudioClip, n_samples: usize, offset: usize) -> AudioClip {
    assert!(n_samples > 0, "n_samples must be positive");
    let src = clip.samples();
    let len = src.len();
    let samples = if len >= n_samples {
        let start = offset.min(len - n_samples);
        src[start..start + n_samples].to_vec()
    } else {
        let start = offset % len;
        (0..n_samples).map(|i| src[(start + i) % len]).collect()
    };
    AudioClip {
        samples,
        sample_rate_hz: clip.sample_rate_hz,
    }
}

/// Draws a crop offset suitable for [`fit_length`].
pub fn random_offset<R: Rng + ?Sized>(len: usize, n_samples: usize, rng: &mut R) -> usize {
    if len > n_samples {
        rng.gen_range(0..=len - n_samples)
    } else {
        rng.gen_range(0..len.max(1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn clip(samples: Vec<f32>) -> AudioClip {
        AudioClip::new(samples, SAMPLE_RATE_HZ).unwrap()
    }

    fn random_clip(rng: &mut ChaCha8Rng, len: usize, amp: f32) -> AudioClip {
        clip((0..len).map(|_| rng.gen_range(-amp..amp)).collect())
    }

    fn measured_snr(music: &AudioClip, mixed: &AudioClip) -> f64 {
        let residual: Vec<f32> = mixed
            .samples()
            .iter()
            .zip(music.samples())
            .map(|(&y, &m)| ((y as f64) - (m as f64)) as f32)
            .collect();
        20.0 * (rms(music) / rms_of(&residual)).log10()
    }

    #[test]
    fn rejects_invalid_clips() {
        assert!(AudioClip::new(vec![], 22_050).is_err());
        assert!(AudioClip::new(vec![0.0, f32::NAN], 22_050).is_err());
        assert!(AudioClip::new(vec![0.0], 0).is_err());
    }

    #[test]
    fn rms_reference_values() {
        assert_eq!(rms(&clip(vec![0.0; 64])), 0.0);
        assert!((rms(&clip(vec![0.5; 64])) - 0.5).abs() < 1e-12);
        let period = 100;
        let sine: Vec<f32> = (0..period * 10)
            .map(|i| (2.0 * std::f64::consts::PI * i as f64 / period as f64).sin() as f32)
            .collect();
        assert!((rms(&clip(sine)) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-4);
    }

    #[test]
    fn normalize_halves_when_target_is_half() {
        // rms 0.2 -> 0.1: every sample halves
        let c = clip(vec![0.2, -0.2, 0.2, -0.2]);
        let out = normalize_rms(&c, 0.1).unwrap();
        for (a, b) in out.samples().iter().zip(c.samples()) {
            assert!((a - b / 2.0).abs() < 1e-7);
        }
        let same = normalize_rms(&c, 0.2).unwrap();
        assert_eq!(same.samples(), c.samples());
    }

    #[test]
    fn normalize_random_clip_hits_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = random_clip(&mut rng, 5000, 0.7);
        let out = normalize_rms(&c, 0.05).unwrap();
        assert!((rms(&out) - 0.05).abs() / 0.05 < 1e-6);
    }

    #[test]
    fn normalize_silence_is_an_error() {
        assert!(matches!(
            normalize_rms(&clip(vec![0.0; 8]), 0.1),
            Err(SignalError::ZeroEnergy)
        ));
    }

    #[test]
    fn noise_gain_reference_values() {
        let music = clip(vec![0.1, -0.1, 0.1, -0.1]);
        let noise = clip(vec![0.1, 0.1, -0.1, -0.1]);
        let plan = plan_noise(&music, std::slice::from_ref(&noise), 0.0).unwrap();
        assert!((plan.gain - 1.0).abs() < 1e-9);
        let plan = plan_noise(&music, &[noise], 20.0).unwrap();
        assert!((plan.gain - 0.1).abs() < 1e-9);
    }

    #[test]
    fn two_noise_mixture_measures_requested_snr() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let music = random_clip(&mut rng, 4096, 0.3);
        let noises = vec![
            random_clip(&mut rng, 4096, 0.05),
            random_clip(&mut rng, 4096, 0.9),
        ];
        let mixed = mix_at_snr(&music, &noises, -5.0).unwrap();
        assert!((measured_snr(&music, &mixed) + 5.0).abs() < 0.05);
    }

    #[test]
    fn mixing_rejects_bad_inputs() {
        let music = clip(vec![0.1; 16]);
        assert!(matches!(
            mix_at_snr(&music, &[], 0.0),
            Err(SignalError::NoNoise)
        ));
        assert!(matches!(
            mix_at_snr(&music, &[clip(vec![0.1; 15])], 0.0),
            Err(SignalError::LengthMismatch { .. })
        ));
        assert!(matches!(
            mix_at_snr(&music, &[clip(vec![0.0; 16])], 0.0),
            Err(SignalError::ZeroEnergy)
        ));
        assert!(matches!(
            mix_at_snr(&clip(vec![0.0; 16]), &[clip(vec![0.1; 16])], 0.0),
            Err(SignalError::ZeroEnergy)
        ));
    }

    #[test]
    fn fit_length_cases() {
        let exact = clip((0..59_049).map(|i| (i % 7) as f32 / 7.0).collect());
        assert_eq!(fit_length(&exact, 59_049, 0), exact);

        let long = clip((0..118_098).map(|i| (i % 13) as f32 / 13.0).collect());
        let cropped = fit_length(&long, 59_049, 0);
        assert_eq!(cropped.samples(), &long.samples()[..59_049]);

        let short = clip((0..30_000).map(|i| (i as f32 / 30_000.0) - 0.5).collect());
        let padded = fit_length(&short, 59_049, 0);
        assert_eq!(padded.len(), 59_049);
        for (i, &s) in padded.samples().iter().enumerate() {
            assert_eq!(s, short.samples()[i % 30_000]);
        }
    }

    #[test]
    fn fit_length_clamps_out_of_range_offsets() {
        let c = clip((0..10).map(|i| i as f32).collect());
        assert_eq!(fit_length(&c, 4, 100).samples(), &[6.0, 7.0, 8.0, 9.0]);
    }

    proptest! {
        #[test]
        fn mixture_snr_is_exact(seed in any::<u64>(), n_noises in prop::sample::select(vec![1usize, 2, 4]), snr in -10.0f64..10.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let music = random_clip(&mut rng, 2187, 0.5);
            let noises: Vec<_> = (0..n_noises).map(|_| {
                let amp = rng.gen_range(0.01f32..1.0);
                random_clip(&mut rng, 2187, amp)
            }).collect();
            let mixed = mix_at_snr(&music, &noises, snr).unwrap();
            prop_assert!((measured_snr(&music, &mixed) - snr).abs() < 0.05);
        }

        #[test]
        fn mixing_is_scale_covariant_in_music(seed in any::<u64>(), alpha in 0.1f64..4.0, snr in -10.0f64..10.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let music = random_clip(&mut rng, 512, 0.2);
            let noises = vec![random_clip(&mut rng, 512, 0.3), random_clip(&mut rng, 512, 0.1)];
            let a = mix_at_snr(&music.scaled(alpha), &noises, snr).unwrap();
            let b = mix_at_snr(&music, &noises, snr).unwrap().scaled(alpha);
            for (x, y) in a.samples().iter().zip(b.samples()) {
                prop_assert!((x - y).abs() < 1e-6);
            }
        }

        #[test]
        fn normalize_is_idempotent(seed in any::<u64>(), target in 0.01f64..0.5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = random_clip(&mut rng, 777, 1.0);
            let once = normalize_rms(&c, target).unwrap();
            let twice = normalize_rms(&once, target).unwrap();
            for (x, y) in once.samples().iter().zip(twice.samples()) {
                prop_assert!((x - y).abs() < 1e-6);
            }
        }

        #[test]
        fn fit_length_always_exact(len in 1usize..5000, n in 1usize..5000, offset in any::<usize>()) {
            let c = clip((0..len).map(|i| i as f32).collect());
            prop_assert_eq!(fit_length(&c, n, offset).len(), n);
        }
    }
}
