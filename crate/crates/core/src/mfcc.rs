//! Mel-frequency cepstral coefficients, the baseline acoustic feature.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::frontend::frame_hop;

#[derive(Debug, Clone, PartialEq)]
pub struct MfccConfig {
    pub n_coeffs: usize,
    pub n_mel: usize,
    pub window: f64,
    pub frame_period: f64,
    pub fft_len: usize,
    /// Floor applied to mel-band energies before the logarithm.
    pub energy_floor: f64,
}

impl Default for MfccConfig {
    fn default() -> Self {
        Self {
            n_coeffs: 13,
            n_mel: 26,
            window: 0.025,
            frame_period: 0.010,
            fft_len: 512,
            energy_floor: 1e-10,
        }
    }
}

/// Row-major `n_frames × n_coeffs` cepstra.
#[derive(Debug, Clone, PartialEq)]
pub struct MfccMatrix {
    pub n_coeffs: usize,
    pub data: Vec<f64>,
}

impl MfccMatrix {
    pub fn n_frames(&self) -> usize {
        self.data.len() / self.n_coeffs.max(1)
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.n_coeffs..(t + 1) * self.n_coeffs]
    }

    pub fn truncate(&mut self, frames: usize) {
        self.data.truncate(frames * self.n_coeffs);
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filters over `fft_len/2 + 1` bins, row-major.
fn mel_filters(n_mel: usize, fft_len: usize, rate: f64) -> Vec<Vec<f64>> {
    let n_bins = fft_len / 2 + 1;
    let top = hz_to_mel(rate / 2.0);
    let edges: Vec<f64> = (0..n_mel + 2)
        .map(|i| mel_to_hz(top * i as f64 / (n_mel + 1) as f64))
        .collect();
    (0..n_mel)
        .map(|m| {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..n_bins)
                .map(|b| {
                    let f = b as f64 * rate / fft_len as f64;
                    if f <= lo || f >= hi {
                        0.0
                    } else if f <= mid {
                        (f - lo) / (mid - lo)
                    } else {
                        (hi - f) / (hi - mid)
                    }
                })
                .collect()
        })
        .collect()
}

/// MFCCs with frames centered on the auditory pipeline's 10 ms grid, so both
/// streams have `floor(len / hop)` frames.
///
/// `c0` is the mean log mel energy and `c_k = (2/M) sum_m log E_m cos(pi k (m + 1/2) / M)`,
/// so silence gives `c0 = ln(floor)` and scaling the input only shifts `c0`.
pub fn mfcc_baseline(a: &AudioBuffer, cfg: &MfccConfig) -> Result<MfccMatrix> {
    if cfg.n_coeffs == 0 || cfg.n_coeffs > cfg.n_mel {
        return Err(Error::InvalidArgument("n_coeffs must be in 1..=n_mel".into()));
    }
    let rate = a.sample_rate as f64;
    let hop = frame_hop(a.sample_rate, cfg.frame_period);
    let win = (cfg.window * rate).round() as usize;
    if win > cfg.fft_len {
        return Err(Error::InvalidArgument("window longer than FFT".into()));
    }
    let n_frames = a.len() / hop;
    let hamming: Vec<f64> = (0..win)
        .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (win - 1) as f64).cos())
        .collect();
    let filters = mel_filters(cfg.n_mel, cfg.fft_len, rate);
    let fft = FftPlanner::new().plan_fft_forward(cfg.fft_len);
    let mut buf = vec![Complex64::new(0.0, 0.0); cfg.fft_len];
    let mut log_e = vec![0.0; cfg.n_mel];
    let mut data = Vec::with_capacity(n_frames * cfg.n_coeffs);
    for t in 0..n_frames {
        let center = (t * hop + hop / 2) as isize;
        let start = center - (win / 2) as isize;
        buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
        for (i, w) in hamming.iter().enumerate() {
            let idx = start + i as isize;
            if idx >= 0 && (idx as usize) < a.len() {
                buf[i] = Complex64::new(a.samples[idx as usize] * w, 0.0);
            }
        }
        fft.process(&mut buf);
        let power: Vec<f64> = buf[..cfg.fft_len / 2 + 1].iter().map(|c| c.norm_sqr()).collect();
        for (e, filt) in log_e.iter_mut().zip(&filters) {
            let energy: f64 = filt.iter().zip(&power).map(|(h, p)| h * p).sum();
            *e = energy.max(cfg.energy_floor).ln();
        }
        let m = cfg.n_mel as f64;
        for k in 0..cfg.n_coeffs {
            let c = if k == 0 {
                log_e.iter().sum::<f64>() / m
            } else {
                2.0 / m
                    * log_e
                        .iter()
                        .enumerate()
                        .map(|(i, e)| e * (PI * k as f64 * (i as f64 + 0.5) / m).cos())
                        .sum::<f64>()
            };
            data.push(c);
        }
    }
    Ok(MfccMatrix {
        n_coeffs: cfg.n_coeffs,
        data,
    })
}
