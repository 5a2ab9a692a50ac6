//! Mono RIFF/WAVE I/O (16-bit PCM and 32-bit float).

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavFormat {
    Pcm16,
    Float32,
}

fn wav_err(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(source) => Error::io(path, source),
        other => Error::WavFormat {
            path: path.to_path_buf(),
            detail: other.to_string(),
        },
    }
}

pub fn write_wav(path: &Path, samples: &[f64], sample_rate: u32, format: WavFormat) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: match format {
            WavFormat::Pcm16 => 16,
            WavFormat::Float32 => 32,
        },
        sample_format: match format {
            WavFormat::Pcm16 => hound::SampleFormat::Int,
            WavFormat::Float32 => hound::SampleFormat::Float,
        },
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| wav_err(path, e))?;
    for &s in samples {
        match format {
            WavFormat::Pcm16 => {
                let v = (s.clamp(-1.0, 1.0) * i16::MAX as f64).round() as i16;
                w.write_sample(v)
            }
            WavFormat::Float32 => w.write_sample(s as f32),
        }
        .map_err(|e| wav_err(path, e))?;
    }
    w.finalize().map_err(|e| wav_err(path, e))
}

/// Reads a mono file; a sample rate other than `expected_rate` is an error.
pub fn read_wav(path: &Path, expected_rate: u32) -> Result<Vec<f64>> {
    if !path.exists() {
        return Err(Error::MissingAudio(path.to_path_buf()));
    }
    let mut r = hound::WavReader::open(path).map_err(|e| wav_err(path, e))?;
    let spec = r.spec();
    if spec.channels != 1 {
        return Err(Error::WavFormat {
            path: path.to_path_buf(),
            detail: format!("{} channels, expected mono", spec.channels),
        });
    }
    if spec.sample_rate != expected_rate {
        return Err(Error::SampleRate {
            path: path.to_path_buf(),
            expected: expected_rate,
            found: spec.sample_rate,
        });
    }
    match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => r
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / i16::MAX as f64).map_err(|e| wav_err(path, e)))
            .collect(),
        (hound::SampleFormat::Float, 32) => r
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64).map_err(|e| wav_err(path, e)))
            .collect(),
        (fmt, bits) => Err(Error::WavFormat {
            path: path.to_path_buf(),
            detail: format!("{bits}-bit {fmt:?} is not supported"),
        }),
    }
}
