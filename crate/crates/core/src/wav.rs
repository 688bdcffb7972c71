//! WAV reading and writing (16-bit PCM or 32-bit float, 16 kHz, 1-8 channels).

use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::signal::{WaveBuffer, SAMPLE_RATE};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleFormat {
    Pcm16,
    Float32,
}

const MAX_CHANNELS: usize = 8;

pub fn read_wav(path: impl AsRef<Path>) -> Result<WaveBuffer> {
    let mut reader = hound::WavReader::open(path.as_ref())?;
    let spec = reader.spec();
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::Data(format!(
            "{}: sample rate {} Hz, expected {SAMPLE_RATE}",
            path.as_ref().display(),
            spec.sample_rate
        )));
    }
    let channels = spec.channels as usize;
    if channels == 0 || channels > MAX_CHANNELS {
        return Err(Error::Data(format!("unsupported channel count {channels}")));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()?,
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()?,
        (fmt, bits) => {
            return Err(Error::Data(format!(
                "unsupported sample format {fmt:?}/{bits}"
            )))
        }
    };
    let len = interleaved.len() / channels;
    let samples = Array2::from_shape_fn((channels, len), |(c, i)| interleaved[i * channels + c]);
    WaveBuffer::new(samples, SAMPLE_RATE)
}

pub fn write_wav(path: impl AsRef<Path>, wave: &WaveBuffer, format: SampleFormat) -> Result<()> {
    let channels = wave.channels();
    if channels > MAX_CHANNELS {
        return Err(Error::invalid(format!("{channels} channels exceeds {MAX_CHANNELS}")));
    }
    let spec = hound::WavSpec {
        channels: channels as u16,
        sample_rate: wave.sample_rate,
        bits_per_sample: match format {
            SampleFormat::Pcm16 => 16,
            SampleFormat::Float32 => 32,
        },
        sample_format: match format {
            SampleFormat::Pcm16 => hound::SampleFormat::Int,
            SampleFormat::Float32 => hound::SampleFormat::Float,
        },
    };
    let mut writer = hound::WavWriter::create(path.as_ref(), spec)?;
    for i in 0..wave.len() {
        for c in 0..channels {
            let v = wave.samples[[c, i]];
            match format {
                SampleFormat::Pcm16 => {
                    let q = (v * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                    writer.write_sample(q)?;
                }
                SampleFormat::Float32 => writer.write_sample(v as f32)?,
            }
        }
    }
    writer.finalize()?;
    Ok(())
}
