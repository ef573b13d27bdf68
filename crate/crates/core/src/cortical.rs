//! Cortical (spectro-temporal modulation) analysis of auditory spectrograms.
//!
//! Each STRF is separable in the 2-D Fourier domain of the spectrogram: a
//! Mexican-hat spectral response peaked at the scale (cycles/octave) times a
//! gamma-shaped temporal response peaked at the rate (Hz). Direction comes from
//! keeping one quadrant of the transform: positive temporal frequency paired
//! with positive spectral frequency responds to downward-moving ripples,
//! positive with negative to upward ones. Keeping a single quadrant makes the
//! output analytic, so its magnitude is the modulation envelope.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::frontend::{AuditorySpectrogram, DEFAULT_CHANNELS, DEFAULT_CHANNELS_PER_OCTAVE};
use crate::tv::FRAME_PERIOD;

pub const DEFAULT_SCALES: [f64; 4] = [1.0, 2.0, 4.0, 8.0];
pub const DEFAULT_RATES: [f64; 5] = [2.0, 4.0, 8.0, 16.0, 32.0];

/// Frames of zero padding appended before the temporal transform.
const TIME_PAD_FRAMES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    /// Spectral pattern drifting toward lower frequencies over time.
    Downward,
    Upward,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Downward => 1.0,
            Direction::Upward => -1.0,
        }
    }

    pub fn mirrored(self) -> Self {
        match self {
            Direction::Downward => Direction::Upward,
            Direction::Upward => Direction::Downward,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrfBank {
    pub scales: Vec<f64>,
    pub rates: Vec<f64>,
    pub frame_period: f64,
    pub n_freq_channels: usize,
    pub channels_per_octave: usize,
}

/// Gamma-shaped temporal magnitude response with unit peak at `|w| = rate`.
pub fn temporal_response(w: f64, rate: f64) -> f64 {
    let x = w.abs() / rate;
    x * x * (2.0 * (1.0 - x)).exp()
}

/// Second-derivative-of-Gaussian spectral magnitude response with unit peak at
/// `|omega| = scale`.
pub fn spectral_response(omega: f64, scale: f64) -> f64 {
    let x2 = (omega / scale).powi(2);
    x2 * (1.0 - x2).exp()
}

impl StrfBank {
    pub fn n_scales(&self) -> usize {
        self.scales.len()
    }

    /// Number of signed rates: every rate in both directions.
    pub fn n_signed_rates(&self) -> usize {
        2 * self.rates.len()
    }

    pub fn n_filters(&self) -> usize {
        self.n_scales() * self.n_signed_rates()
    }

    pub fn frame_len(&self) -> usize {
        self.n_filters() * self.n_freq_channels
    }

    /// Signed rate axis: downward rates (positive) then upward rates (negative).
    pub fn signed_rates(&self) -> Vec<f64> {
        self.rates.iter().copied().chain(self.rates.iter().map(|r| -r)).collect()
    }

    pub fn rate_index(&self, rate_idx: usize, dir: Direction) -> usize {
        match dir {
            Direction::Downward => rate_idx,
            Direction::Upward => self.rates.len() + rate_idx,
        }
    }

    pub fn split_rate_index(&self, signed_idx: usize) -> (usize, Direction) {
        if signed_idx < self.rates.len() {
            (signed_idx, Direction::Downward)
        } else {
            (signed_idx - self.rates.len(), Direction::Upward)
        }
    }

    /// Full 2-D response at temporal frequency `w` (Hz) and spectral frequency
    /// `omega` (cycles/octave), including the factor 2 from the one-sided
    /// quadrant so a matched ripple of depth `d` yields magnitude `d`.
    pub fn response(&self, scale_idx: usize, signed_rate_idx: usize, w: f64, omega: f64) -> f64 {
        let (ri, dir) = self.split_rate_index(signed_rate_idx);
        if w <= 0.0 || omega * dir.sign() <= 0.0 {
            return 0.0;
        }
        2.0 * temporal_response(w, self.rates[ri]) * spectral_response(omega, self.scales[scale_idx])
    }
}

/// Builds the bank; rates must stay below the frame-rate Nyquist and scales
/// below the channel-density Nyquist.
pub fn design_strf_bank(
    scales: &[f64],
    rates: &[f64],
    frame_period: f64,
    n_freq_channels: usize,
) -> Result<StrfBank> {
    design_strf_bank_cpo(scales, rates, frame_period, n_freq_channels, DEFAULT_CHANNELS_PER_OCTAVE)
}

pub fn design_strf_bank_cpo(
    scales: &[f64],
    rates: &[f64],
    frame_period: f64,
    n_freq_channels: usize,
    channels_per_octave: usize,
) -> Result<StrfBank> {
    let increasing = |v: &[f64]| !v.is_empty() && v[0] > 0.0 && v.windows(2).all(|w| w[1] > w[0]);
    if !increasing(scales) || !increasing(rates) {
        return Err(Error::InvalidArgument(
            "scales and rates must be positive and strictly increasing".into(),
        ));
    }
    if !(frame_period > 0.0) || n_freq_channels == 0 || channels_per_octave == 0 {
        return Err(Error::InvalidArgument("invalid STRF grid".into()));
    }
    let rate_nyquist = 0.5 / frame_period;
    if let Some(r) = rates.iter().find(|r| **r >= rate_nyquist) {
        return Err(Error::InvalidArgument(format!(
            "rate {r} Hz at or above frame Nyquist {rate_nyquist} Hz"
        )));
    }
    let scale_nyquist = channels_per_octave as f64 / 2.0;
    if let Some(s) = scales.iter().find(|s| **s >= scale_nyquist) {
        return Err(Error::InvalidArgument(format!(
            "scale {s} c/o at or above channel Nyquist {scale_nyquist} c/o"
        )));
    }
    Ok(StrfBank {
        scales: scales.to_vec(),
        rates: rates.to_vec(),
        frame_period,
        n_freq_channels,
        channels_per_octave,
    })
}

pub fn default_strf_bank() -> StrfBank {
    design_strf_bank(&DEFAULT_SCALES, &DEFAULT_RATES, FRAME_PERIOD, DEFAULT_CHANNELS).unwrap()
}

/// Per-frame `scale × signed-rate × frequency` modulation magnitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct CorticalSequence {
    pub n_frames: usize,
    pub dims: [usize; 3],
    /// Row-major `n_frames × dims[0] × dims[1] × dims[2]`.
    pub data: Vec<f64>,
    pub scales: Vec<f64>,
    pub signed_rates: Vec<f64>,
    pub center_freqs: Vec<f64>,
}

impl CorticalSequence {
    pub fn from_frames(dims: [usize; 3], data: Vec<f64>) -> Result<Self> {
        let len = dims.iter().product::<usize>();
        if len == 0 || data.len() % len != 0 {
            return Err(Error::ShapeMismatch(format!(
                "{} values do not fill frames of {dims:?}",
                data.len()
            )));
        }
        Ok(Self {
            n_frames: data.len() / len,
            dims,
            data,
            scales: (0..dims[0]).map(|i| i as f64).collect(),
            signed_rates: (0..dims[1]).map(|i| i as f64).collect(),
            center_freqs: (0..dims[2]).map(|i| i as f64).collect(),
        })
    }

    pub fn frame_len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let n = self.frame_len();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.frame_len())
    }

    pub fn get(&self, t: usize, s: usize, r: usize, f: usize) -> f64 {
        self.data[((t * self.dims[0] + s) * self.dims[1] + r) * self.dims[2] + f]
    }

    /// Mean magnitude of every (scale, signed rate) channel over frames and
    /// frequency; row-major `scales × signed_rates`.
    pub fn channel_means(&self) -> Vec<f64> {
        let [ns, nr, nf] = self.dims;
        let mut out = vec![0.0; ns * nr];
        for frame in self.frames() {
            for (c, chunk) in frame.chunks_exact(nf).enumerate() {
                out[c] += chunk.iter().sum::<f64>();
            }
        }
        let denom = (self.n_frames * nf).max(1) as f64;
        out.iter_mut().for_each(|v| *v /= denom);
        out
    }
}

fn signed_bin(i: usize, n: usize) -> f64 {
    if i <= n / 2 {
        i as f64
    } else {
        i as f64 - n as f64
    }
}

/// Filters the spectrogram with every STRF and samples the magnitude at each
/// frame.
pub fn cortical_transform(sp: &AuditorySpectrogram, bank: &StrfBank) -> Result<CorticalSequence> {
    if sp.n_channels != bank.n_freq_channels {
        return Err(Error::ShapeMismatch(format!(
            "spectrogram has {} channels, bank expects {}",
            sp.n_channels, bank.n_freq_channels
        )));
    }
    let n_frames = sp.n_frames();
    let nch = sp.n_channels;
    let (ns, nr) = (bank.n_scales(), bank.n_signed_rates());
    let dims = [ns, nr, nch];
    let frame_len = ns * nr * nch;
    let mut data = vec![0.0; n_frames * frame_len];
    if n_frames == 0 {
        return Ok(CorticalSequence {
            n_frames,
            dims,
            data,
            scales: bank.scales.clone(),
            signed_rates: bank.signed_rates(),
            center_freqs: sp.channel_center_freqs.clone(),
        });
    }

    let nt = (n_frames + TIME_PAD_FRAMES).next_power_of_two();
    let nf = (2 * nch).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fft_t = planner.plan_fft_forward(nt);
    let ifft_t = planner.plan_fft_inverse(nt);
    let fft_f = planner.plan_fft_forward(nf);
    let ifft_f = planner.plan_fft_inverse(nf);

    // spectral transform of every frame, then temporal transform of every
    // spectral bin: grid[w][omega], row-major nt × nf
    let mut grid = vec![Complex64::new(0.0, 0.0); nt * nf];
    for t in 0..n_frames {
        let row = &mut grid[t * nf..(t + 1) * nf];
        for (c, v) in row.iter_mut().zip(sp.frame(t)) {
            *c = Complex64::new(*v, 0.0);
        }
        fft_f.process(row);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); nt];
    for n in 0..nf {
        for (w, c) in col.iter_mut().enumerate() {
            *c = grid[w * nf + n];
        }
        fft_t.process(&mut col);
        for (w, c) in col.iter().enumerate() {
            grid[w * nf + n] = *c;
        }
    }

    let rate_hz: Vec<f64> = (0..nt).map(|i| signed_bin(i, nt) / (nt as f64 * bank.frame_period)).collect();
    let omega_cpo: Vec<f64> = (0..nf)
        .map(|i| signed_bin(i, nf) * bank.channels_per_octave as f64 / nf as f64)
        .collect();
    let positive_rows: Vec<usize> = (0..nt).filter(|&w| rate_hz[w] > 0.0).collect();
    let norm = 1.0 / (nt * nf) as f64;

    let mut spectral = vec![Complex64::new(0.0, 0.0); positive_rows.len() * nch];
    let mut row = vec![Complex64::new(0.0, 0.0); nf];
    for si in 0..ns {
        for dir in [Direction::Downward, Direction::Upward] {
            // spectral filtering and inverse spectral transform, kept rows w > 0
            for (pi, &w) in positive_rows.iter().enumerate() {
                for (n, c) in row.iter_mut().enumerate() {
                    let om = omega_cpo[n];
                    *c = if om * dir.sign() > 0.0 {
                        grid[w * nf + n] * spectral_response(om, bank.scales[si])
                    } else {
                        Complex64::new(0.0, 0.0)
                    };
                }
                ifft_f.process(&mut row);
                spectral[pi * nch..(pi + 1) * nch].copy_from_slice(&row[..nch]);
            }
            for ri in 0..bank.rates.len() {
                let rate = bank.rates[ri];
                let sri = bank.rate_index(ri, dir);
                for k in 0..nch {
                    col.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
                    for (pi, &w) in positive_rows.iter().enumerate() {
                        col[w] = spectral[pi * nch + k] * (2.0 * temporal_response(rate_hz[w], rate));
                    }
                    ifft_t.process(&mut col);
                    for t in 0..n_frames {
                        data[t * frame_len + (si * nr + sri) * nch + k] = col[t].norm() * norm;
                    }
                }
            }
        }
    }
    Ok(CorticalSequence {
        n_frames,
        dims,
        data,
        scales: bank.scales.clone(),
        signed_rates: bank.signed_rates(),
        center_freqs: sp.channel_center_freqs.clone(),
    })
}

/// Moving-ripple spectrogram `1 + depth*cos(2*pi*(rate*t + sign*scale*x))` on a
/// log-frequency axis `x` in octaves (`channel / channels_per_octave`).
/// Downward ripples use `sign = +1`.
pub fn ripple_stimulus(
    rate: f64,
    scale: f64,
    direction: Direction,
    duration: f64,
    depth: f64,
) -> Result<AuditorySpectrogram> {
    ripple_stimulus_on(rate, scale, direction, duration, depth, DEFAULT_CHANNELS, DEFAULT_CHANNELS_PER_OCTAVE)
}

pub fn ripple_stimulus_on(
    rate: f64,
    scale: f64,
    direction: Direction,
    duration: f64,
    depth: f64,
    n_channels: usize,
    channels_per_octave: usize,
) -> Result<AuditorySpectrogram> {
    if rate.abs() >= 0.5 / FRAME_PERIOD {
        return Err(Error::InvalidArgument(format!("ripple rate {rate} Hz above frame Nyquist")));
    }
    let n_frames = (duration / FRAME_PERIOD + 1e-9).floor() as usize;
    let mut frames = Vec::with_capacity(n_frames * n_channels);
    for t in 0..n_frames {
        let time = t as f64 * FRAME_PERIOD;
        for k in 0..n_channels {
            let x = k as f64 / channels_per_octave as f64;
            frames.push(1.0 + depth * (2.0 * PI * (rate * time + direction.sign() * scale * x)).cos());
        }
    }
    let cfs = (0..n_channels)
        .map(|k| 2f64.powf(k as f64 / channels_per_octave as f64))
        .collect();
    AuditorySpectrogram::new(frames, n_channels, cfs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_bank_shape() {
        let b = default_strf_bank();
        assert_eq!(b.n_filters(), 40);
        assert_eq!(b.n_signed_rates(), 10);
        assert_eq!(b.frame_len(), 5120);
        assert_eq!(b.signed_rates(), vec![2.0, 4.0, 8.0, 16.0, 32.0, -2.0, -4.0, -8.0, -16.0, -32.0]);
    }

    #[test]
    fn rate_above_nyquist_rejected() {
        assert!(design_strf_bank(&DEFAULT_SCALES, &[2.0, 64.0], FRAME_PERIOD, 128).is_err());
        assert!(design_strf_bank(&DEFAULT_SCALES, &[4.0, 2.0], FRAME_PERIOD, 128).is_err());
        assert!(design_strf_bank(&[1.0, 16.0], &DEFAULT_RATES, FRAME_PERIOD, 128).is_err());
    }

    #[test]
    fn temporal_peak_location() {
        let b = default_strf_bank();
        let si = 1; // scale 2
        let sri = b.rate_index(2, Direction::Downward); // +8 Hz
        let (best, _) = (1..5000)
            .map(|i| i as f64 * 0.01)
            .map(|w| (w, b.response(si, sri, w, 2.0)))
            .fold((0.0, f64::MIN), |acc, x| if x.1 > acc.1 { x } else { acc });
        assert!((7.0..=9.0).contains(&best), "peak at {best}");
    }

    #[test]
    fn seeds_have_unit_peaks() {
        assert!((temporal_response(8.0, 8.0) - 1.0).abs() < 1e-15);
        assert!((spectral_response(-2.0, 2.0) - 1.0).abs() < 1e-15);
        assert_eq!(temporal_response(0.0, 4.0), 0.0);
        assert_eq!(spectral_response(0.0, 4.0), 0.0);
    }

    #[test]
    fn ripple_construction() {
        let sp = ripple_stimulus(4.0, 2.0, Direction::Downward, 2.0, 0.8).unwrap();
        assert_eq!(sp.n_frames(), 200);
        assert!(sp.frames.iter().all(|v| *v >= 0.2 - 1e-12 && *v <= 1.8 + 1e-12));
        let flat = ripple_stimulus(4.0, 2.0, Direction::Upward, 0.5, 0.0).unwrap();
        assert!(flat.frames.iter().all(|v| *v == 1.0));
        // maxima of the t=0 column profile: one per period, scale * 128/24 periods
        let sp = ripple_stimulus(4.0, 3.0, Direction::Upward, 0.1, 1.0).unwrap();
        let col = sp.frame(0);
        let crossings = col.windows(2).filter(|w| (w[0] - 1.0) > 0.0 && (w[1] - 1.0) <= 0.0).count();
        assert_eq!(crossings, 16);
        assert!(ripple_stimulus(60.0, 1.0, Direction::Upward, 1.0, 1.0).is_err());
    }

    #[test]
    fn zero_spectrogram_gives_zero_cortical() {
        let sp = AuditorySpectrogram::new(vec![0.0; 30 * 128], 128, vec![1.0; 128]).unwrap();
        let c = cortical_transform(&sp, &default_strf_bank()).unwrap();
        assert_eq!(c.n_frames, 30);
        assert_eq!(c.frame_len(), 5120);
        assert!(c.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn channel_mismatch() {
        let sp = AuditorySpectrogram::new(vec![0.0; 64], 64, vec![1.0; 64]).unwrap();
        assert!(cortical_transform(&sp, &default_strf_bank()).is_err());
    }
}
