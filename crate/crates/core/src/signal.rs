//! Source signals and calibrated measurement noise.

use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::dsp::{mean, rms};
use crate::error::{invalid, Error, Result};
use crate::room::ObservationSet;
use crate::seeding::{child_seed, rng_from};

/// Sample rate assigned to synthetic sources.
pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

/// Minimum length for which spectral shaping is defined.
pub const MIN_PINK_LEN: usize = 16;

/// A sampled waveform emitted by the unknown source.
///
/// Construction guarantees a non-empty, finite, non-silent sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSignal {
    samples: Vec<f64>,
    sample_rate: u32,
    label: String,
}

impl SourceSignal {
    pub fn new(samples: Vec<f64>, sample_rate: u32, label: impl Into<String>) -> Result<Self> {
        if samples.is_empty() {
            return Err(invalid("source signal must have at least one sample"));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(invalid("source signal contains non-finite samples"));
        }
        if rms(&samples) == 0.0 {
            return Err(invalid("source signal is silent"));
        }
        if sample_rate == 0 {
            return Err(invalid("sample rate must be positive"));
        }
        Ok(SourceSignal {
            samples,
            sample_rate,
            label: label.into(),
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// A contiguous excerpt; fails if the excerpt would be silent.
    pub fn excerpt(&self, start: usize, len: usize) -> Result<SourceSignal> {
        if start + len > self.samples.len() {
            return Err(invalid(format!(
                "excerpt [{start}, {}) exceeds {} samples",
                start + len,
                self.samples.len()
            )));
        }
        SourceSignal::new(
            self.samples[start..start + len].to_vec(),
            self.sample_rate,
            self.label.clone(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub ratio_s: f64,
    pub seed: u64,
}

pub fn gen_white_noise(length: usize, seed: u64) -> Result<SourceSignal> {
    if length == 0 {
        return Err(invalid("white noise length must be at least 1"));
    }
    let mut rng = rng_from(seed);
    let samples: Vec<f64> = (0..length).map(|_| StandardNormal.sample(&mut rng)).collect();
    SourceSignal::new(samples, DEFAULT_SAMPLE_RATE, "white")
}

/// Pink (1/f power) noise by spectral shaping of Gaussian white noise.
///
/// Each positive-frequency bin is scaled by `1/sqrt(k)`, the DC bin is
/// zeroed, and the result is normalized to zero mean and unit variance.
pub fn gen_pink_noise(length: usize, seed: u64) -> Result<SourceSignal> {
    if length < MIN_PINK_LEN {
        return Err(invalid(format!(
            "pink noise needs at least {MIN_PINK_LEN} samples, got {length}"
        )));
    }
    let mut rng = rng_from(seed);
    let mut buf: Vec<Complex<f64>> = (0..length)
        .map(|_| Complex::new(StandardNormal.sample(&mut rng), 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(length).process(&mut buf);
    buf[0] = Complex::new(0.0, 0.0);
    for (k, bin) in buf.iter_mut().enumerate().skip(1) {
        let freq = k.min(length - k) as f64;
        *bin /= freq.sqrt();
    }
    planner.plan_fft_inverse(length).process(&mut buf);
    let mut samples: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let mu = mean(&samples);
    samples.iter_mut().for_each(|v| *v -= mu);
    let sd = rms(&samples);
    samples.iter_mut().for_each(|v| *v /= sd);
    SourceSignal::new(samples, DEFAULT_SAMPLE_RATE, "pink")
}

/// Read a mono RIFF/WAVE file (16-bit integer or 32-bit float PCM).
pub fn load_audio_file(path: impl AsRef<Path>) -> Result<SourceSignal> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::NotFound(path.to_path_buf()));
    }
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::Io(io),
        other => Error::UnsupportedFormat(other.to_string()),
    })?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::UnsupportedFormat(format!(
            "{} channels; only mono files are accepted",
            spec.channels
        )));
    }
    let wav_err = |e: hound::Error| Error::UnsupportedFormat(e.to_string());
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| f64::from(v) / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err)?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| f64::from(v).clamp(-1.0, 1.0)))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err)?,
        (fmt, bits) => {
            return Err(Error::UnsupportedFormat(format!(
                "{bits}-bit {fmt:?} samples; expected 16-bit int or 32-bit float"
            )))
        }
    };
    SourceSignal::new(samples, spec.sample_rate, format!("file:{}", path.display()))
}

/// Add white Gaussian noise to each recording, with per-channel RMS equal to
/// `ratio_s` times that channel's clean RMS.
pub fn inject_noise(clean: &ObservationSet, spec: &NoiseSpec) -> Result<ObservationSet> {
    if !(spec.ratio_s.is_finite() && spec.ratio_s >= 0.0) {
        return Err(invalid(format!(
            "noise ratio must be non-negative, got {}",
            spec.ratio_s
        )));
    }
    clean.check_shape()?;
    if spec.ratio_s == 0.0 {
        return Ok(clean.clone());
    }
    let mut recordings = Vec::with_capacity(clean.n_mics());
    for (n, rec) in clean.recordings.iter().enumerate() {
        let target = spec.ratio_s * rms(rec);
        if target == 0.0 {
            return Err(invalid(format!("recording {n} is silent")));
        }
        let mut rng = rng_from(child_seed(spec.seed, n as u64));
        let noise: Vec<f64> = (0..rec.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let scale = target / rms(&noise);
        recordings.push(rec.iter().zip(&noise).map(|(x, e)| x + scale * e).collect());
    }
    ObservationSet::new(recordings, clean.sample_rate, spec.ratio_s)
}

/// Noise-to-signal amplitude ratio for a signal-to-noise level in dB.
pub fn db_to_ratio(db: f64) -> f64 {
    10f64.powf(-db / 20.0)
}

pub fn ratio_to_db(ratio: f64) -> f64 {
    20.0 * (1.0 / ratio).log10()
}
