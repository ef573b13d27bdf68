//! Auditory front end: constant-Q cochlear filterbank, hair-cell transduction,
//! lateral inhibition across channels and 10 ms leaky frame integration.
//!
//! Cochlear filters are zero-phase magnitude responses applied per utterance
//! in the frequency domain, so all channels are time-aligned. Each response is
//! a Gaussian on the log-frequency axis with a gentle low-frequency skirt and a
//! steep high-frequency edge just above the center frequency. The lateral
//! inhibitory network responds to the across-channel slope, so the steep edge
//! places a tone's response at the channel whose center frequency matches it.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::tv::FRAME_PERIOD;

pub const DEFAULT_CHANNELS: usize = 128;
pub const DEFAULT_CHANNELS_PER_OCTAVE: usize = 24;
pub const DEFAULT_MIN_CF: f64 = 180.0;
pub const DEFAULT_Q: f64 = 4.0;

/// Width of the high-frequency edge, in octaves above the center frequency,
/// at which the response is down 3 dB.
const HIGH_EDGE_OCTAVES: f64 = 1.0 / 48.0;
const HALF_POWER: f64 = std::f64::consts::FRAC_1_SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HairCellParams {
    /// Gain of the `tanh` compression.
    pub gain: f64,
    /// Membrane low-pass cutoff in Hz.
    pub membrane_cutoff: f64,
}

impl Default for HairCellParams {
    fn default() -> Self {
        Self {
            gain: 8.0,
            membrane_cutoff: 4000.0,
        }
    }
}

/// Leaky-integration time constant of the frame integrator, seconds.
pub const INTEGRATION_TAU: f64 = 0.008;

#[derive(Debug, Clone, PartialEq)]
pub struct CochlearFilterbank {
    pub sample_rate: u32,
    pub channels_per_octave: usize,
    pub min_center_freq: f64,
    pub q: f64,
    center_freqs: Vec<f64>,
    /// Low-side -3 dB point, octaves below the center frequency.
    low_edge_octaves: f64,
}

impl CochlearFilterbank {
    pub fn n_channels(&self) -> usize {
        self.center_freqs.len()
    }

    pub fn center_freqs(&self) -> &[f64] {
        &self.center_freqs
    }

    /// Magnitude response of channel `k` at frequency `f` (Hz); zero phase.
    pub fn response(&self, k: usize, f: f64) -> f64 {
        let f = f.abs();
        if f <= 0.0 {
            return 0.0;
        }
        let u = (f / self.center_freqs[k]).log2();
        let width = if u > 0.0 { HIGH_EDGE_OCTAVES } else { self.low_edge_octaves };
        HALF_POWER.powf((u / width).powi(2))
    }

    /// -3 dB band edges of channel `k`, Hz.
    pub fn band_edges(&self, k: usize) -> (f64, f64) {
        let cf = self.center_freqs[k];
        (cf * 2f64.powf(-self.low_edge_octaves), cf * 2f64.powf(HIGH_EDGE_OCTAVES))
    }

    pub fn impulse_response(&self, k: usize, len: usize) -> Vec<f64> {
        let mut spec: Vec<Complex64> = (0..len)
            .map(|i| {
                let f = bin_freq(i, len, self.sample_rate as f64);
                Complex64::new(self.response(k, f), 0.0)
            })
            .collect();
        FftPlanner::new().plan_fft_inverse(len).process(&mut spec);
        spec.iter().map(|c| c.re / len as f64).collect()
    }
}

fn bin_freq(i: usize, n: usize, rate: f64) -> f64 {
    let i = if i <= n / 2 { i as f64 } else { i as f64 - n as f64 };
    i * rate / n as f64
}

/// Designs a geometric constant-Q bank: `cf[k] = min_cf * 2^(k / channels_per_octave)`.
pub fn design_cochlear_filterbank(
    sample_rate: u32,
    n_channels: usize,
    channels_per_octave: usize,
    min_center_freq: f64,
) -> Result<CochlearFilterbank> {
    design_cochlear_filterbank_q(sample_rate, n_channels, channels_per_octave, min_center_freq, DEFAULT_Q)
}

pub fn design_cochlear_filterbank_q(
    sample_rate: u32,
    n_channels: usize,
    channels_per_octave: usize,
    min_center_freq: f64,
    q: f64,
) -> Result<CochlearFilterbank> {
    if n_channels == 0 || channels_per_octave == 0 || !(min_center_freq > 0.0) || sample_rate == 0 {
        return Err(Error::InvalidArgument("filterbank parameters must be positive".into()));
    }
    let top = min_center_freq * 2f64.powf((n_channels - 1) as f64 / channels_per_octave as f64);
    let nyquist = sample_rate as f64 / 2.0;
    if top >= nyquist {
        return Err(Error::InvalidArgument(format!(
            "top center frequency {top:.1} Hz exceeds Nyquist {nyquist} Hz"
        )));
    }
    // bandwidth cf/q between the -3 dB edges: cf*2^hi - cf*2^-lo = cf/q
    let hi = 2f64.powf(HIGH_EDGE_OCTAVES);
    if !(q > 0.0) || hi - 1.0 / q <= 0.0 {
        return Err(Error::InvalidArgument(format!("Q {q} too small")));
    }
    let low_edge_octaves = -(hi - 1.0 / q).log2();
    let step = 1.0 / channels_per_octave as f64;
    let center_freqs = (0..n_channels)
        .map(|k| min_center_freq * 2f64.powf(k as f64 * step))
        .collect();
    Ok(CochlearFilterbank {
        sample_rate,
        channels_per_octave,
        min_center_freq,
        q,
        center_freqs,
        low_edge_octaves,
    })
}

/// Channel-major multichannel signal, `n_channels × n_samples`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSignals {
    pub n_channels: usize,
    pub n_samples: usize,
    pub sample_rate: u32,
    pub data: Vec<f64>,
}

impl ChannelSignals {
    pub fn zeros(n_channels: usize, n_samples: usize, sample_rate: u32) -> Self {
        Self {
            n_channels,
            n_samples,
            sample_rate,
            data: vec![0.0; n_channels * n_samples],
        }
    }

    pub fn channel(&self, k: usize) -> &[f64] {
        &self.data[k * self.n_samples..(k + 1) * self.n_samples]
    }

    pub fn channel_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.data[k * self.n_samples..(k + 1) * self.n_samples]
    }

    pub fn rms(&self, k: usize) -> f64 {
        let c = self.channel(k);
        (c.iter().map(|x| x * x).sum::<f64>() / c.len().max(1) as f64).sqrt()
    }
}

/// Filters the audio through every cochlear channel.
pub fn cochlear_filter(a: &AudioBuffer, fb: &CochlearFilterbank) -> Result<ChannelSignals> {
    if a.sample_rate != fb.sample_rate {
        return Err(Error::RateMismatch {
            expected: fb.sample_rate,
            actual: a.sample_rate,
        });
    }
    let n = a.len();
    let nch = fb.n_channels();
    let mut out = ChannelSignals::zeros(nch, n, a.sample_rate);
    if n == 0 {
        return Ok(out);
    }
    // half a second of padding absorbs the filters' ringing without wrap-around
    let nfft = (n + a.sample_rate as usize / 2).next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(nfft);
    let inv = planner.plan_fft_inverse(nfft);

    let mut spectrum: Vec<Complex64> = a
        .samples
        .iter()
        .map(|&s| Complex64::new(s, 0.0))
        .chain(std::iter::repeat(Complex64::new(0.0, 0.0)))
        .take(nfft)
        .collect();
    fwd.process(&mut spectrum);
    let freqs: Vec<f64> = (0..nfft).map(|i| bin_freq(i, nfft, a.sample_rate as f64)).collect();

    let scale = 1.0 / nfft as f64;
    let mut buf = vec![Complex64::new(0.0, 0.0); nfft];
    let mut scratch = vec![Complex64::new(0.0, 0.0); inv.get_inplace_scratch_len()];
    // responses are real and even, so two channels share one inverse FFT:
    // IFFT(X*(Ha + i*Hb)) = ya + i*yb
    for pair in (0..nch).step_by(2) {
        let (ka, kb) = (pair, pair + 1);
        for (i, (b, x)) in buf.iter_mut().zip(&spectrum).enumerate() {
            let ha = fb.response(ka, freqs[i]);
            let hb = if kb < nch { fb.response(kb, freqs[i]) } else { 0.0 };
            *b = x * Complex64::new(ha, hb);
        }
        inv.process_with_scratch(&mut buf, &mut scratch);
        for (o, b) in out.channel_mut(ka).iter_mut().zip(&buf) {
            *o = b.re * scale;
        }
        if kb < nch {
            for (o, b) in out.channel_mut(kb).iter_mut().zip(&buf) {
                *o = b.im * scale;
            }
        }
    }
    Ok(out)
}

/// Hair-cell transduction per channel: first difference, `tanh(gain*u)`
/// compression, then a one-pole membrane low-pass.
pub fn haircell_stage(x: &ChannelSignals, params: HairCellParams) -> ChannelSignals {
    let mut out = x.clone();
    let a = (-2.0 * PI * params.membrane_cutoff / x.sample_rate as f64).exp();
    for k in 0..x.n_channels {
        let ch = out.channel_mut(k);
        let mut prev_in = 0.0;
        let mut state = 0.0;
        for v in ch.iter_mut() {
            let d = *v - prev_in;
            prev_in = *v;
            let g = (params.gain * d).tanh();
            state = a * state + (1.0 - a) * g;
            *v = state;
        }
    }
    out
}

/// Lateral inhibition: channel k minus channel k-1 (channel 0 passes), then
/// half-wave rectification.
pub fn lateral_inhibition(x: &ChannelSignals) -> ChannelSignals {
    let mut out = ChannelSignals::zeros(x.n_channels, x.n_samples, x.sample_rate);
    for k in 0..x.n_channels {
        let cur = x.channel(k);
        let dst = &mut out.data[k * x.n_samples..(k + 1) * x.n_samples];
        if k == 0 {
            for (d, c) in dst.iter_mut().zip(cur) {
                *d = c.max(0.0);
            }
        } else {
            let below = x.channel(k - 1);
            for ((d, c), b) in dst.iter_mut().zip(cur).zip(below) {
                *d = (c - b).max(0.0);
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditorySpectrogram {
    /// Row-major `n_frames × n_channels`.
    pub frames: Vec<f64>,
    pub n_channels: usize,
    pub channel_center_freqs: Vec<f64>,
}

impl AuditorySpectrogram {
    pub fn new(frames: Vec<f64>, n_channels: usize, channel_center_freqs: Vec<f64>) -> Result<Self> {
        if n_channels == 0 || frames.len() % n_channels != 0 {
            return Err(Error::ShapeMismatch(format!(
                "{} values do not fill rows of {n_channels} channels",
                frames.len()
            )));
        }
        if channel_center_freqs.len() != n_channels {
            return Err(Error::ShapeMismatch("center frequency count".into()));
        }
        Ok(Self {
            frames,
            n_channels,
            channel_center_freqs,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.frames.len() / self.n_channels
    }

    pub fn frame_period(&self) -> f64 {
        FRAME_PERIOD
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.frames[t * self.n_channels..(t + 1) * self.n_channels]
    }

    pub fn get(&self, t: usize, k: usize) -> f64 {
        self.frames[t * self.n_channels + k]
    }

    pub fn truncate(&mut self, frames: usize) {
        self.frames.truncate(frames * self.n_channels);
    }

    /// Time-averaged activation per channel.
    pub fn channel_means(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.n_channels];
        for row in self.frames.chunks_exact(self.n_channels) {
            for (a, v) in m.iter_mut().zip(row) {
                *a += v;
            }
        }
        let t = self.n_frames().max(1) as f64;
        m.iter_mut().for_each(|v| *v /= t);
        m
    }
}

pub fn frame_hop(sample_rate: u32, frame_period: f64) -> usize {
    (sample_rate as f64 * frame_period).round() as usize
}

/// Leaky integration (8 ms time constant) sampled at the end of every frame;
/// `floor(duration / frame_period)` frames.
pub fn frame_integrate(x: &ChannelSignals, frame_period: f64, center_freqs: &[f64]) -> Result<AuditorySpectrogram> {
    let hop = frame_hop(x.sample_rate, frame_period);
    if hop == 0 {
        return Err(Error::InvalidArgument("frame period shorter than a sample".into()));
    }
    let n_frames = x.n_samples / hop;
    let beta = (-1.0 / (INTEGRATION_TAU * x.sample_rate as f64)).exp();
    let mut frames = vec![0.0; n_frames * x.n_channels];
    for k in 0..x.n_channels {
        let mut state = 0.0;
        let ch = x.channel(k);
        for t in 0..n_frames {
            for &v in &ch[t * hop..(t + 1) * hop] {
                state = beta * state + (1.0 - beta) * v;
            }
            frames[t * x.n_channels + k] = state;
        }
    }
    AuditorySpectrogram::new(frames, x.n_channels, center_freqs.to_vec())
}

/// Full auditory spectrogram: cochlear filter, hair cells, lateral inhibition
/// and frame integration.
pub fn audspec(a: &AudioBuffer, fb: &CochlearFilterbank) -> Result<AuditorySpectrogram> {
    audspec_with(a, fb, HairCellParams::default())
}

pub fn audspec_with(a: &AudioBuffer, fb: &CochlearFilterbank, hc: HairCellParams) -> Result<AuditorySpectrogram> {
    let y = cochlear_filter(a, fb)?;
    let y = haircell_stage(&y, hc);
    let y = lateral_inhibition(&y);
    frame_integrate(&y, FRAME_PERIOD, fb.center_freqs())
}
