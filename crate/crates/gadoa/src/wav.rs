//! WAV ingestion and export.
//!
//! The reader accepts 16-bit PCM mono files at any rate and resamples to the
//! pipeline rate by linear interpolation; that keeps the dependency surface
//! small but band-limits poorly, so treat resampled corpora as approximate.
//! The writer emits 16-bit PCM multichannel files at 8 kHz.

use std::path::Path;

use crate::error::{Error, Result};
use crate::room::MultichannelSignal;

/// Read a 16-bit PCM mono WAV file and resample it to `target_fs`.
pub fn read_mono(path: &Path, target_fs: f64) -> Result<Vec<f64>> {
    let mut reader = hound::WavReader::open(path)
        .map_err(|e| Error::Ingestion(format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Ingestion(format!(
            "{}: expected mono, got {} channels",
            path.display(),
            spec.channels
        )));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::Ingestion(format!(
            "{}: expected 16-bit PCM",
            path.display()
        )));
    }
    let samples: Vec<f64> = reader
        .samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Ingestion(format!("{}: {e}", path.display())))?;
    if samples.is_empty() {
        return Err(Error::Ingestion(format!("{}: empty file", path.display())));
    }
    Ok(resample_linear(&samples, spec.sample_rate as f64, target_fs))
}

/// Linear-interpolation resampler.
pub fn resample_linear(x: &[f64], from_fs: f64, to_fs: f64) -> Vec<f64> {
    if (from_fs - to_fs).abs() < 1e-9 {
        return x.to_vec();
    }
    let n_out = ((x.len() as f64) * to_fs / from_fs).floor() as usize;
    let ratio = from_fs / to_fs;
    (0..n_out)
        .map(|i| {
            let t = i as f64 * ratio;
            let i0 = t.floor() as usize;
            let frac = t - i0 as f64;
            let a = x[i0.min(x.len() - 1)];
            let b = x[(i0 + 1).min(x.len() - 1)];
            a + frac * (b - a)
        })
        .collect()
}

/// Write a multichannel signal as 16-bit PCM. Samples are scaled by the
/// largest channel magnitude to use the full range without clipping.
pub fn write_multichannel(path: &Path, sig: &MultichannelSignal) -> Result<()> {
    let spec = hound::WavSpec {
        channels: sig.channels.len() as u16,
        sample_rate: sig.fs as u32,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let peak = sig
        .channels
        .iter()
        .flatten()
        .fold(0.0f64, |a, &v| a.max(v.abs()));
    let scale = if peak > 0.0 { 0.99 / peak } else { 1.0 };
    let mut writer = hound::WavWriter::create(path, spec)
        .map_err(|e| Error::Ingestion(format!("{}: {e}", path.display())))?;
    let len = sig.channels[0].len();
    for i in 0..len {
        for ch in &sig.channels {
            let v = (ch[i] * scale * 32767.0).round().clamp(-32768.0, 32767.0) as i16;
            writer
                .write_sample(v)
                .map_err(|e| Error::Ingestion(format!("{}: {e}", path.display())))?;
        }
    }
    writer
        .finalize()
        .map_err(|e| Error::Ingestion(format!("{}: {e}", path.display())))?;
    Ok(())
}
