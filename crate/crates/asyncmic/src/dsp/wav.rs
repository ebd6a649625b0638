//! WAV read/write (32-bit float and 16-bit PCM).

use std::path::Path;

use crate::error::Result;

pub fn write_f32(path: &Path, x: &[f64], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut w = hound::WavWriter::create(path, spec)?;
    for &v in x {
        w.write_sample(v as f32)?;
    }
    w.finalize()?;
    Ok(())
}

pub fn write_pcm16(path: &Path, x: &[f64], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec)?;
    for &v in x {
        let s = (v.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        w.write_sample(s)?;
    }
    w.finalize()?;
    Ok(())
}

/// Read a mono or multi-channel WAV; channels are averaged down to mono.
/// Returns samples in [-1, 1] and the file's sample rate.
pub fn read(path: &Path) -> Result<(Vec<f64>, u32)> {
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    let ch = spec.channels as usize;
    let raw: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()?,
        hound::SampleFormat::Int => {
            let denom = (1i64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / denom))
                .collect::<std::result::Result<_, _>>()?
        }
    };
    let mono: Vec<f64> = raw
        .chunks(ch)
        .map(|frame| frame.iter().sum::<f64>() / ch as f64)
        .collect();
    Ok((mono, spec.sample_rate))
}
