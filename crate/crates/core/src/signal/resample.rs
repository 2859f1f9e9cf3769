use std::f64::consts::PI;

use super::AudioClip;

/// Zero crossings of the sinc kernel on each side of the centre tap.
const KERNEL_ZEROS: f64 = 24.0;

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Blackman window on [-1, 1].
fn blackman(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        return 0.0;
    }
    let phase = PI * (u + 1.0);
    0.42 - 0.5 * phase.cos() + 0.08 * (2.0 * phase).cos()
}

/// Band-limited resampling with a Blackman-windowed sinc kernel.
///
/// When downsampling, the kernel cutoff drops to the new Nyquist frequency.
/// Samples outside the clip are treated as zero.
pub fn resample(clip: &AudioClip, target_rate_hz: u32) -> AudioClip {
    assert!(target_rate_hz > 0, "target rate must be positive");
    let source_rate = clip.sample_rate_hz();
    if source_rate == target_rate_hz {
        return clip.clone();
    }
    let ratio = target_rate_hz as f64 / source_rate as f64;
    let cutoff = ratio.min(1.0);
    let half_width = KERNEL_ZEROS / cutoff;
    let input = clip.samples();
    let out_len = ((input.len() as f64 * ratio).round() as usize).max(1);

    let samples = (0..out_len)
        .map(|n| {
            let centre = n as f64 / ratio;
            let first = (centre - half_width).ceil().max(0.0) as usize;
            let last = ((centre + half_width).floor() as usize).min(input.len() - 1);
            let mut acc = 0.0f64;
            for (k, &x) in input.iter().enumerate().take(last + 1).skip(first) {
                let dt = centre - k as f64;
                acc += x as f64 * cutoff * sinc(cutoff * dt) * blackman(dt / half_width);
            }
            acc as f32
        })
        .collect();
    AudioClip::new(samples, target_rate_hz).expect("resampled clip is finite and non-empty")
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Frequency of the largest DFT bin within [lo_hz, hi_hz], computed directly.
    fn dft_peak_hz(samples: &[f32], rate: u32, lo_hz: f64, hi_hz: f64) -> f64 {
        let n = samples.len();
        let hz_per_bin = rate as f64 / n as f64;
        let first = ((lo_hz / hz_per_bin).floor() as usize).max(1);
        let last = ((hi_hz / hz_per_bin).ceil() as usize).min(n / 2);
        let (mut best_bin, mut best_power) = (0usize, 0.0f64);
        for bin in first..=last {
            let (mut re, mut im) = (0.0f64, 0.0f64);
            for (t, &x) in samples.iter().enumerate() {
                let angle = -2.0 * PI * (bin * t % n) as f64 / n as f64;
                re += x as f64 * angle.cos();
                im += x as f64 * angle.sin();
            }
            let power = re * re + im * im;
            if power > best_power {
                best_power = power;
                best_bin = bin;
            }
        }
        best_bin as f64 * rate as f64 / n as f64
    }

    fn sine(freq: f64, rate: u32, len: usize) -> AudioClip {
        let samples = (0..len)
            .map(|i| (2.0 * PI * freq * i as f64 / rate as f64).sin() as f32 * 0.5)
            .collect();
        AudioClip::new(samples, rate).unwrap()
    }

    #[test]
    fn same_rate_is_identity() {
        let c = sine(440.0, 22_050, 1000);
        assert_eq!(resample(&c, 22_050), c);
    }

    #[test]
    fn halving_the_rate_halves_the_length() {
        let c = sine(440.0, 44_100, 2 * 5000);
        let out = resample(&c, 22_050);
        assert_eq!(out.sample_rate_hz(), 22_050);
        assert!((out.len() as i64 - 5000).abs() <= 1);
        assert!((out.duration_s() - c.duration_s()).abs() <= 1.0 / 22_050.0);
    }

    #[test]
    fn spectral_peak_survives_downsampling() {
        // 22,050 output samples give 1 Hz bins.
        let c = sine(440.0, 44_100, 44_100);
        let out = resample(&c, 22_050);
        let peak = dft_peak_hz(out.samples(), 22_050, 100.0, 2000.0);
        assert!((peak - 440.0).abs() <= 2.0, "peak at {peak}");
    }

    #[test]
    fn upsampling_preserves_amplitude_in_the_interior() {
        let c = sine(300.0, 16_000, 16_000);
        let out = resample(&c, 22_050);
        let interior = &out.samples()[2000..out.len() - 2000];
        let peak = interior.iter().fold(0.0f32, |m, &x| m.max(x.abs()));
        assert!((peak - 0.5).abs() < 0.01, "peak {peak}");
    }

    #[test]
    fn content_above_new_nyquist_is_removed() {
        let c = sine(15_000.0, 44_100, 8820);
        let out = resample(&c, 22_050);
        let interior = &out.samples()[500..out.len() - 500];
        let level = super::super::rms_of(interior);
        assert!(level < 0.01, "aliased energy {level}");
    }
}
