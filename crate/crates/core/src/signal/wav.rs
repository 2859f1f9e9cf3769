use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::{resample, AudioClip, Result, SignalError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WavFormat {
    Pcm16,
    Float32,
}

/// Reads a WAV file. Multi-channel files are averaged down to mono.
pub fn read_wav(path: &Path) -> Result<AudioClip> {
    let mut reader = WavReader::open(path)?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .collect::<std::result::Result<_, _>>()?,
        (SampleFormat::Int, bits) if bits <= 32 => {
            let scale = 1.0 / (1u64 << (bits - 1)) as f32;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f32 * scale))
                .collect::<std::result::Result<_, _>>()?
        }
        (format, bits) => {
            return Err(SignalError::InvalidClip(format!(
                "unsupported wav subtype {format:?}/{bits}"
            )))
        }
    };
    let mono = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(channels)
            .map(|frame| frame.iter().sum::<f32>() / channels as f32)
            .collect()
    };
    AudioClip::new(mono, spec.sample_rate)
}

/// Reads a WAV file and resamples it to `rate_hz` when needed.
pub fn read_wav_at(path: &Path, rate_hz: u32) -> Result<AudioClip> {
    Ok(resample(&read_wav(path)?, rate_hz))
}

pub fn write_wav(path: &Path, clip: &AudioClip, format: WavFormat) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate_hz(),
        bits_per_sample: match format {
            WavFormat::Pcm16 => 16,
            WavFormat::Float32 => 32,
        },
        sample_format: match format {
            WavFormat::Pcm16 => SampleFormat::Int,
            WavFormat::Float32 => SampleFormat::Float,
        },
    };
    let mut writer = WavWriter::create(path, spec)?;
    for &s in clip.samples() {
        match format {
            WavFormat::Float32 => writer.write_sample(s)?,
            WavFormat::Pcm16 => {
                let q = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
                writer.write_sample(q)?
            }
        }
    }
    writer.finalize()?;
    Ok(())
}
