//! Mono audio buffers: WAV ingestion/export and band-limited resampling.

use std::path::Path;

use crate::error::{Error, Result};

/// Rate every pipeline stage runs at; audio is resampled on ingestion.
pub const STANDARD_RATE: u32 = 16_000;

#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub id: String,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32, id: impl Into<String>) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidValue("non-finite audio sample".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
            id: id.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        (self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64).sqrt()
    }

    /// Writes 16-bit linear PCM, clipping to [-1, 1].
    pub fn save_wav(&self, path: &Path) -> Result<()> {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(path, spec)?;
        for &s in &self.samples {
            w.write_sample((s.clamp(-1.0, 1.0) * 32767.0).round() as i16)?;
        }
        w.finalize()?;
        Ok(())
    }

    pub fn save_wav_f32(&self, path: &Path) -> Result<()> {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        let mut w = hound::WavWriter::create(path, spec)?;
        for &s in &self.samples {
            w.write_sample(s as f32)?;
        }
        w.finalize()?;
        Ok(())
    }
}

/// Reads a mono linear-PCM WAV (16-bit integer or 32-bit float).
pub fn load_wav(path: &Path) -> Result<AudioBuffer> {
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "missing file"),
        ));
    }
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Multichannel(spec.channels));
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()?,
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()?,
        (fmt, bits) => {
            return Err(Error::UnsupportedEncoding(format!("{fmt:?} {bits}-bit")));
        }
    };
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    AudioBuffer::new(samples, spec.sample_rate, id)
}

const ZERO_CROSSINGS: usize = 32;
const KAISER_BETA: f64 = 9.0;
const CUTOFF_FRACTION: f64 = 0.95;

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..64 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Polyphase windowed-sinc (Kaiser) rational resampler.
pub fn resample(a: &AudioBuffer, target_rate: u32) -> Result<AudioBuffer> {
    if target_rate == 0 {
        return Err(Error::InvalidArgument("target rate must be positive".into()));
    }
    if target_rate == a.sample_rate {
        return Ok(a.clone());
    }
    let g = gcd(a.sample_rate as u64, target_rate as u64);
    let up = (target_rate as u64 / g) as usize;
    let down = (a.sample_rate as u64 / g) as usize;
    let out_len = ((a.len() as f64) * up as f64 / down as f64).round() as usize;

    // cutoff in cycles per input sample, relative to the input Nyquist
    let rho = CUTOFF_FRACTION * (up as f64 / down as f64).min(1.0);
    let half_width = (ZERO_CROSSINGS as f64 / rho).ceil() as isize;
    let taps = 2 * half_width as usize;
    let i0_beta = bessel_i0(KAISER_BETA);
    let kernel = |tau: f64| -> f64 {
        let r = tau / half_width as f64;
        if r.abs() >= 1.0 {
            return 0.0;
        }
        let w = bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / i0_beta;
        let x = std::f64::consts::PI * rho * tau;
        let sinc = if x.abs() < 1e-12 { 1.0 } else { x.sin() / x };
        rho * sinc * w
    };
    // one table per output phase; tap j multiplies x[base - half_width + 1 + j]
    let phases: Vec<Vec<f64>> = (0..up)
        .map(|p| {
            let frac = p as f64 / up as f64;
            (0..taps)
                .map(|j| {
                    let k = -half_width + 1 + j as isize;
                    kernel(frac - k as f64)
                })
                .collect()
        })
        .collect();

    let x = &a.samples;
    let n_in = x.len() as isize;
    let mut out = Vec::with_capacity(out_len);
    for n in 0..out_len {
        let pos = n * down;
        let base = (pos / up) as isize;
        let table = &phases[pos % up];
        let start = base - half_width + 1;
        let mut acc = 0.0;
        for (j, h) in table.iter().enumerate() {
            let k = start + j as isize;
            if k >= 0 && k < n_in {
                acc += h * x[k as usize];
            }
        }
        out.push(acc);
    }
    AudioBuffer::new(out, target_rate, a.id.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, rate: u32, secs: f64, amp: f64) -> AudioBuffer {
        let n = (rate as f64 * secs) as usize;
        let s = (0..n)
            .map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / rate as f64).sin())
            .collect();
        AudioBuffer::new(s, rate, "sine").unwrap()
    }

    #[test]
    fn identity_rate_is_noop() {
        let a = sine(440.0, 16_000, 0.1, 0.5);
        assert_eq!(resample(&a, 16_000).unwrap(), a);
    }

    #[test]
    fn upsample_length_doubles() {
        let a = AudioBuffer::new(vec![0.0; 8000], 8000, "z").unwrap();
        assert_eq!(resample(&a, 16_000).unwrap().len(), 16_000);
    }

    #[test]
    fn tone_rms_preserved_44k_to_16k() {
        let a = sine(440.0, 44_100, 1.0, 0.8);
        let b = resample(&a, 16_000).unwrap();
        assert_eq!(b.len(), 16_000);
        // analytic RMS of a sine is amp/sqrt(2); skip the kernel's edge transient
        let edge = 200;
        let core = &b.samples[edge..b.len() - edge];
        let rms = (core.iter().map(|s| s * s).sum::<f64>() / core.len() as f64).sqrt();
        let reference = 0.8 / 2f64.sqrt();
        let db = 20.0 * (rms / reference).log10();
        assert!(db.abs() < 0.5, "rms deviation {db} dB");
    }

    #[test]
    fn resampled_tone_matches_analytic_sine() {
        let a = sine(1000.0, 48_000, 0.5, 0.5);
        let b = resample(&a, 16_000).unwrap();
        for n in 500..7500 {
            let want = 0.5 * (2.0 * std::f64::consts::PI * 1000.0 * n as f64 / 16_000.0).sin();
            assert!((b.samples[n] - want).abs() < 1e-3, "sample {n}");
        }
    }

    #[test]
    fn zero_rate_rejected() {
        let a = sine(440.0, 16_000, 0.01, 0.5);
        assert!(resample(&a, 0).is_err());
        assert!(AudioBuffer::new(vec![0.0], 0, "x").is_err());
    }
}
