//! Mono 16-bit PCM WAV files.

use std::path::Path;

use codecsep_core::Waveform;
use hound::{SampleFormat, WavSpec, WavWriter};

use crate::error::{Error, Result};

const FULL_SCALE: f32 = 32768.0;

/// Quantizes one sample to PCM16, clamping to the representable range.
pub fn to_pcm16(x: f32) -> i16 {
    (x * FULL_SCALE).round().clamp(-32768.0, 32767.0) as i16
}

pub fn from_pcm16(v: i16) -> f32 {
    v as f32 / FULL_SCALE
}

pub fn write_wav(path: &Path, wave: &Waveform) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let wav_err = |source| Error::Wav { path: path.to_path_buf(), source };
    let mut writer = WavWriter::create(path, spec).map_err(wav_err)?;
    for &x in &wave.samples {
        writer.write_sample(to_pcm16(x)).map_err(wav_err)?;
    }
    writer.finalize().map_err(wav_err)
}

pub fn read_wav(path: &Path) -> Result<Waveform> {
    let wav_err = |source| Error::Wav { path: path.to_path_buf(), source };
    let reader = hound::WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::WavFormat { path: path.into(), detail: format!("{} channels, expected mono", spec.channels) });
    }
    if spec.sample_format != SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::WavFormat {
            path: path.into(),
            detail: format!("{:?} {}-bit, expected 16-bit PCM", spec.sample_format, spec.bits_per_sample),
        });
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(from_pcm16))
        .collect::<Result<Vec<f32>, _>>()
        .map_err(wav_err)?;
    Ok(Waveform::new(samples, spec.sample_rate)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pcm16_quantization_bound() {
        for i in -1000..=1000 {
            let x = i as f32 / 1000.0 * 0.999;
            assert!((from_pcm16(to_pcm16(x)) - x).abs() <= 0.5 / FULL_SCALE + 1e-9);
        }
        assert_eq!(to_pcm16(2.0), i16::MAX);
        assert_eq!(to_pcm16(-2.0), i16::MIN);
        assert_eq!(to_pcm16(1.0), i16::MAX);
    }
}
