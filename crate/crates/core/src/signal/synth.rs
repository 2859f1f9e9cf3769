//! Deterministic procedural audio: harmonic "music" and tilted, optionally
//! gated, noise. These stand in for real recordings in desk-scale runs.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{rms_of, AudioClip, Result, SignalError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    Music,
    Noise,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    pub duration_s: f64,
    pub sample_rate_hz: u32,
    #[serde(flatten)]
    pub params: SynthParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SynthParams {
    Music(MusicParams),
    Noise(NoiseParams),
}

/// Knobs of the harmonic generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MusicParams {
    /// Fundamental is drawn uniformly from this range (Hz).
    pub f0_range_hz: (f64, f64),
    pub n_harmonics: u32,
    /// Harmonic k has amplitude k^-rolloff.
    pub harmonic_rolloff: f64,
    /// Amplitude-modulation rate in Hz; 0 disables it.
    pub tremolo_hz: f64,
    pub tremolo_depth: f64,
    /// Frequency-modulation depth as a fraction of the fundamental; 0 disables it.
    pub vibrato_depth: f64,
    pub vibrato_hz: f64,
    /// Frequency ratio of an optional second voice.
    pub interval_ratio: Option<f64>,
    pub level_rms: f64,
}

impl Default for MusicParams {
    fn default() -> Self {
        Self {
            f0_range_hz: (220.0, 220.0),
            n_harmonics: 4,
            harmonic_rolloff: 1.0,
            tremolo_hz: 0.0,
            tremolo_depth: 0.0,
            vibrato_depth: 0.0,
            vibrato_hz: 0.0,
            interval_ratio: None,
            level_rms: 0.1,
        }
    }
}

/// Knobs of the noise generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    /// Spectral slope in dB per octave; 0 is white, -3 pink, -6 brown.
    pub tilt_db_per_octave: f64,
    pub burst: Option<BurstParams>,
    pub level_rms: f64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            tilt_db_per_octave: 0.0,
            burst: None,
            level_rms: 0.1,
        }
    }
}

/// On/off gating that imitates applause or crowd bursts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BurstParams {
    pub rate_hz: f64,
    /// Fraction of each period that is sounding.
    pub duty: f64,
}

impl SynthSpec {
    pub fn kind(&self) -> SynthKind {
        match self.params {
            SynthParams::Music(_) => SynthKind::Music,
            SynthParams::Noise(_) => SynthKind::Noise,
        }
    }

    pub fn n_samples(&self) -> usize {
        (self.duration_s * self.sample_rate_hz as f64).round() as usize
    }

    fn validate(&self) -> Result<()> {
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(SignalError::BadSpec(format!(
                "duration must be positive, got {}",
                self.duration_s
            )));
        }
        if self.sample_rate_hz == 0 {
            return Err(SignalError::BadSpec("sample rate must be positive".into()));
        }
        if self.n_samples() == 0 {
            return Err(SignalError::BadSpec(
                "duration shorter than one sample".into(),
            ));
        }
        let level = match &self.params {
            SynthParams::Music(p) => {
                let (lo, hi) = p.f0_range_hz;
                if !(lo > 0.0 && hi >= lo) {
                    return Err(SignalError::BadSpec(format!("bad f0 range ({lo}, {hi})")));
                }
                if p.n_harmonics == 0 {
                    return Err(SignalError::BadSpec("need at least one harmonic".into()));
                }
                p.level_rms
            }
            SynthParams::Noise(p) => {
                if let Some(b) = &p.burst {
                    if !(b.rate_hz > 0.0 && b.duty > 0.0 && b.duty < 1.0) {
                        return Err(SignalError::BadSpec(
                            "burst needs rate > 0 and duty in (0,1)".into(),
                        ));
                    }
                }
                p.level_rms
            }
        };
        if !(0.05..=0.5).contains(&level) {
            return Err(SignalError::BadSpec(format!(
                "level_rms {level} outside [0.05, 0.5]"
            )));
        }
        Ok(())
    }
}

/// Generates the clip described by `spec`, whatever its kind.
pub fn synth(spec: &SynthSpec) -> Result<AudioClip> {
    match spec.kind() {
        SynthKind::Music => synth_music(spec),
        SynthKind::Noise => synth_noise(spec),
    }
}

pub fn synth_music(spec: &SynthSpec) -> Result<AudioClip> {
    let SynthParams::Music(p) = &spec.params else {
        return Err(SignalError::BadSpec("expected a music spec".into()));
    };
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let rate = spec.sample_rate_hz as f64;
    let n = spec.n_samples();
    let (lo, hi) = p.f0_range_hz;
    let f0 = if hi > lo { rng.gen_range(lo..hi) } else { lo };

    let mut voices = vec![(f0, 1.0)];
    if let Some(ratio) = p.interval_ratio {
        voices.push((f0 * ratio, 0.6));
    }
    let nyquist = rate / 2.0;
    let tremolo_phase = rng.gen_range(0.0..2.0 * PI);
    let vibrato_phase = rng.gen_range(0.0..2.0 * PI);
    let swell_phase = rng.gen_range(0.0..2.0 * PI);

    let mut out = vec![0.0f64; n];
    for &(base, voice_gain) in &voices {
        for k in 1..=p.n_harmonics {
            let partial = base * k as f64;
            if partial >= nyquist {
                break;
            }
            let amp = voice_gain * (k as f64).powf(-p.harmonic_rolloff);
            let mut phase = rng.gen_range(0.0..2.0 * PI);
            for (i, acc) in out.iter_mut().enumerate() {
                let t = i as f64 / rate;
                *acc += amp * phase.sin();
                let wobble =
                    1.0 + p.vibrato_depth * (2.0 * PI * p.vibrato_hz * t + vibrato_phase).sin();
                phase += 2.0 * PI * partial * wobble / rate;
            }
        }
    }
    for (i, acc) in out.iter_mut().enumerate() {
        let t = i as f64 / rate;
        // slow swell, well below the tremolo band
        let swell = 0.85 + 0.15 * (2.0 * PI * 0.7 * t + swell_phase).sin();
        let tremolo = if p.tremolo_hz > 0.0 {
            1.0 - p.tremolo_depth
                * 0.5
                * (1.0 + (2.0 * PI * p.tremolo_hz * t + tremolo_phase).sin())
        } else {
            1.0
        };
        *acc *= swell * tremolo;
    }
    finish(out, p.level_rms, spec.sample_rate_hz)
}

pub fn synth_noise(spec: &SynthSpec) -> Result<AudioClip> {
    let SynthParams::Noise(p) = &spec.params else {
        return Err(SignalError::BadSpec("expected a noise spec".into()));
    };
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let rate = spec.sample_rate_hz as f64;
    let n = spec.n_samples();

    let mut spectrum: Vec<Complex<f64>> = (0..n)
        .map(|_| Complex::new(gaussian(&mut rng), 0.0))
        .collect();
    if p.tilt_db_per_octave != 0.0 {
        let mut planner = FftPlanner::new();
        planner.plan_fft_forward(n).process(&mut spectrum);
        // amplitude slope: tilt dB/octave == exponent tilt / (20 log10 2)
        let exponent = p.tilt_db_per_octave / (20.0 * 2f64.log10());
        let floor_hz = 20.0;
        spectrum[0] = Complex::new(0.0, 0.0);
        for (bin, value) in spectrum.iter_mut().enumerate().skip(1) {
            let folded = bin.min(n - bin);
            let freq = (folded as f64 * rate / n as f64).max(floor_hz);
            *value *= (freq / 1000.0).powf(exponent);
        }
        planner.plan_fft_inverse(n).process(&mut spectrum);
    }
    let mut out: Vec<f64> = spectrum.iter().map(|c| c.re).collect();

    if let Some(burst) = &p.burst {
        let period = rate / burst.rate_hz;
        let on_len = burst.duty * period;
        let ramp = (on_len * 0.1).clamp(1.0, 64.0);
        let offset = rng.gen_range(0.0..period);
        for (i, acc) in out.iter_mut().enumerate() {
            let pos = (i as f64 + offset) % period;
            let gate = if pos >= on_len {
                0.0
            } else {
                (pos / ramp).min((on_len - pos) / ramp).min(1.0)
            };
            *acc *= gate;
        }
    }
    finish(out, p.level_rms, spec.sample_rate_hz)
}

fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

fn finish(samples: Vec<f64>, level_rms: f64, rate: u32) -> Result<AudioClip> {
    let as_f32: Vec<f32> = samples.iter().map(|&s| s as f32).collect();
    let current = rms_of(&as_f32);
    if current == 0.0 {
        return Err(SignalError::ZeroEnergy);
    }
    let gain = level_rms / current;
    AudioClip::new(samples.iter().map(|&s| (s * gain) as f32).collect(), rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::rms;

    fn music_spec(seed: u64, f0: f64) -> SynthSpec {
        SynthSpec {
            seed,
            duration_s: 0.5,
            sample_rate_hz: 22_050,
            params: SynthParams::Music(MusicParams {
                f0_range_hz: (f0, f0),
                ..MusicParams::default()
            }),
        }
    }

    fn noise_spec(seed: u64, tilt: f64, burst: Option<BurstParams>) -> SynthSpec {
        SynthSpec {
            seed,
            duration_s: 1.0,
            sample_rate_hz: 22_050,
            params: SynthParams::Noise(NoiseParams {
                tilt_db_per_octave: tilt,
                burst,
                level_rms: 0.1,
            }),
        }
    }

    /// Power of the DFT bin at `freq`, by direct summation.
    fn bin_power(samples: &[f32], rate: f64, freq: f64) -> f64 {
        let (mut re, mut im) = (0.0, 0.0);
        for (t, &x) in samples.iter().enumerate() {
            let angle = 2.0 * PI * freq * t as f64 / rate;
            re += x as f64 * angle.cos();
            im -= x as f64 * angle.sin();
        }
        re * re + im * im
    }

    #[test]
    fn music_is_deterministic_by_seed() {
        let a = synth_music(&music_spec(7, 220.0)).unwrap();
        let b = synth_music(&music_spec(7, 220.0)).unwrap();
        let c = synth_music(&music_spec(8, 220.0)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn music_peak_sits_at_the_fundamental() {
        let clip = synth_music(&music_spec(1, 220.0)).unwrap();
        // 0.5 s at 22,050 Hz gives 2 Hz bins; scan 100..1000 Hz.
        let mut best = (0.0, 0.0);
        let mut freq = 100.0;
        while freq <= 1000.0 {
            let p = bin_power(clip.samples(), 22_050.0, freq);
            if p > best.1 {
                best = (freq, p);
            }
            freq += 2.0;
        }
        assert!((best.0 - 220.0).abs() <= 2.0, "peak at {}", best.0);
    }

    #[test]
    fn music_length_and_level() {
        let mut spec = music_spec(3, 220.0);
        spec.duration_s = 2.7;
        let clip = synth_music(&spec).unwrap();
        assert_eq!(clip.len(), 59_535);
        let level = rms(&clip);
        assert!((0.05..=0.5).contains(&level));
    }

    #[test]
    fn rejects_bad_specs() {
        let mut spec = music_spec(3, 220.0);
        spec.duration_s = 0.0;
        assert!(matches!(synth_music(&spec), Err(SignalError::BadSpec(_))));
        spec.duration_s = -1.0;
        assert!(matches!(synth_music(&spec), Err(SignalError::BadSpec(_))));
        assert!(matches!(
            synth_music(&noise_spec(1, 0.0, None)),
            Err(SignalError::BadSpec(_))
        ));
        assert!(matches!(
            synth_noise(&music_spec(1, 220.0)),
            Err(SignalError::BadSpec(_))
        ));
    }

    #[test]
    fn noise_is_deterministic_by_seed() {
        let a = synth_noise(&noise_spec(5, -3.0, None)).unwrap();
        let b = synth_noise(&noise_spec(5, -3.0, None)).unwrap();
        assert_eq!(a, b);
    }

    /// Mean per-bin power in octave bands, via direct DFT on a decimated bin grid.
    fn octave_band_db(samples: &[f32], rate: f64) -> Vec<f64> {
        let n = samples.len() as f64;
        let mut bands = Vec::new();
        let mut lo = 125.0;
        while lo * 2.0 <= 8000.0 {
            let hi = lo * 2.0;
            let mut total = 0.0;
            let mut count = 0;
            let mut k = (lo * n / rate).ceil();
            let step = ((hi - lo) * n / rate / 40.0).max(1.0).floor();
            while k * rate / n < hi {
                total += bin_power(samples, rate, k * rate / n);
                count += 1;
                k += step;
            }
            bands.push(10.0 * (total / count as f64).log10());
            lo = hi;
        }
        bands
    }

    #[test]
    fn white_noise_is_flat_across_octaves() {
        let clip = synth_noise(&noise_spec(9, 0.0, None)).unwrap();
        let bands = octave_band_db(clip.samples(), 22_050.0);
        let mean = bands.iter().sum::<f64>() / bands.len() as f64;
        for b in &bands {
            assert!((b - mean).abs() < 6.0, "bands {bands:?}");
        }
    }

    #[test]
    fn tilted_noise_falls_per_octave() {
        let clip = synth_noise(&noise_spec(9, -6.0, None)).unwrap();
        let bands = octave_band_db(clip.samples(), 22_050.0);
        let slope = (bands[bands.len() - 1] - bands[0]) / (bands.len() - 1) as f64;
        assert!((slope + 6.0).abs() < 2.0, "bands {bands:?}");
    }

    #[test]
    fn burst_noise_has_silent_stretches() {
        let spec = noise_spec(
            4,
            -3.0,
            Some(BurstParams {
                rate_hz: 6.0,
                duty: 0.5,
            }),
        );
        let clip = synth_noise(&spec).unwrap();
        let silent = clip.samples().iter().filter(|s| s.abs() < 1e-9).count();
        assert!(silent as f64 / clip.len() as f64 > 0.10);
        assert!((rms(&clip) - 0.1).abs() < 1e-6);
    }

    #[test]
    fn spec_round_trips_through_json() {
        let spec = noise_spec(
            1,
            -3.0,
            Some(BurstParams {
                rate_hz: 4.0,
                duty: 0.3,
            }),
        );
        let text = serde_json::to_string(&spec).unwrap();
        assert!(text.contains("\"kind\":\"noise\""));
        let back: SynthSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);
    }
}
