use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::WaveForm;
use crate::error::{contract_err, Error, Result};

const FULL_SCALE: f64 = 32768.0;

/// Reads a 16-bit PCM mono file. When `expected_rate` is given, a mismatch
/// is a contract error naming both rates.
pub fn read_wav(path: &Path, expected_rate: Option<u32>) -> Result<WaveForm> {
    let reader = WavReader::open(path).map_err(|e| hound_err(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != SampleFormat::Int {
        return Err(Error::data(
            path,
            format!(
                "expected 16-bit PCM mono, found {} channel(s), {} bits, {:?}",
                spec.channels, spec.bits_per_sample, spec.sample_format
            ),
        ));
    }
    if let Some(rate) = expected_rate {
        if spec.sample_rate != rate {
            return Err(contract_err!(
                "{}: sample rate {} Hz, expected {} Hz",
                path.display(),
                spec.sample_rate,
                rate
            ));
        }
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / FULL_SCALE))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| hound_err(path, e))?;
    Ok(WaveForm::new(samples, spec.sample_rate))
}

/// Writes 16-bit PCM mono, rounding to the nearest level and clipping to full scale.
pub fn write_wav(path: &Path, wave: &WaveForm) -> Result<()> {
    let spec = WavSpec { channels: 1, sample_rate: wave.sample_rate, bits_per_sample: 16, sample_format: SampleFormat::Int };
    let mut w = WavWriter::create(path, spec).map_err(|e| hound_err(path, e))?;
    for &x in &wave.samples {
        if !x.is_finite() {
            return Err(Error::Numerical(format!("non-finite sample while writing {}", path.display())));
        }
        let q = (x * FULL_SCALE).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
        w.write_sample(q).map_err(|e| hound_err(path, e))?;
    }
    w.finalize().map_err(|e| hound_err(path, e))
}

fn hound_err(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::data(path, other),
    }
}
