//! Synthetic paired speech/articulation corpus.
//!
//! Tract variables are independent band-limited Gaussian processes mapped
//! into fixed ranges. Audio is produced from them by a small source-filter
//! synthesizer: a pulse train plus aspiration noise, a high-shelf tilt
//! driven by LP, two cascaded resonators whose center frequency and bandwidth
//! follow (TBCL, TBCD) and (TTCL, TTCD), and an LA-driven output level. Every
//! acoustic parameter is a smooth monotone function of one tract variable, so
//! the inverse mapping exists locally.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::audio::{AudioBuffer, STANDARD_RATE};
use crate::dataset::{make_splits, DatasetManifest, ManifestEntry, SplitMode};
use crate::error::{Error, Result};
use crate::tv::{TvTrajectory, FRAME_PERIOD, N_TV};

/// `[min, max]` of each tract variable (LA, LP, TBCD, TTCD in mm; TBCL,
/// TTCL in degrees).
pub const TV_RANGES: [(f64, f64); N_TV] = [
    (0.0, 20.0),
    (5.0, 15.0),
    (80.0, 180.0),
    (0.0, 15.0),
    (20.0, 80.0),
    (0.0, 12.0),
];

/// Standard deviations of the unit process mapped onto half a range.
const RANGE_SPREAD: f64 = 2.5;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n_speakers: usize,
    pub utterances_per_speaker: usize,
    pub duration: f64,
    pub seed: u64,
    pub sample_rate: u32,
    /// Cutoff of the trajectory low-pass filter (Hz).
    pub trajectory_bandwidth: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_speakers: 12,
            utterances_per_speaker: 16,
            duration: 3.0,
            seed: 7,
            sample_rate: STANDARD_RATE,
            trajectory_bandwidth: 8.0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_speakers == 0 || self.utterances_per_speaker == 0 {
            return Err(Error::InvalidArgument("synthetic corpus must be non-empty".into()));
        }
        if !(self.duration >= FRAME_PERIOD) || !self.duration.is_finite() {
            return Err(Error::InvalidArgument(format!("duration {} s too short", self.duration)));
        }
        if self.sample_rate < 8000 {
            return Err(Error::InvalidArgument(format!("sample rate {} too low", self.sample_rate)));
        }
        let nyq = 0.5 / FRAME_PERIOD;
        if !(self.trajectory_bandwidth > 0.0 && self.trajectory_bandwidth < nyq) {
            return Err(Error::InvalidArgument(format!(
                "trajectory bandwidth must lie in (0, {nyq}) Hz"
            )));
        }
        Ok(())
    }

    pub fn n_frames(&self) -> usize {
        (self.duration * self.sample_rate as f64).round() as usize / (self.sample_rate as f64 * FRAME_PERIOD) as usize
    }
}

/// Voice characteristics fixed per speaker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeakerParams {
    pub f0: f64,
    /// Multiplies both resonator center frequencies (vocal tract length).
    pub formant_scale: f64,
    pub noise_level: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthUtterance {
    pub utt_id: String,
    pub speaker_id: String,
    pub audio: AudioBuffer,
    pub tv: TvTrajectory,
}

fn stream_seed(seed: u64, speaker: usize, utt: u64) -> u64 {
    let mut x = seed ^ 0x9e37_79b9_7f4a_7c15;
    for v in [speaker as u64, utt] {
        x = (x ^ v).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        x ^= x >> 31;
    }
    x
}

pub fn speaker_params(seed: u64, speaker: usize) -> SpeakerParams {
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, speaker, u64::MAX));
    SpeakerParams {
        f0: rng.gen_range(100.0..180.0),
        formant_scale: rng.gen_range(0.96..1.04),
        noise_level: rng.gen_range(0.02..0.08),
    }
}

/// Windowed-sinc low-pass taps (Hamming), unit DC gain.
fn lowpass_taps(cutoff: f64, rate: f64, half: usize) -> Vec<f64> {
    let fc = cutoff / rate;
    let n = 2 * half + 1;
    let mut h: Vec<f64> = (0..n)
        .map(|i| {
            let m = i as f64 - half as f64;
            let sinc = if m == 0.0 { 2.0 * fc } else { (2.0 * PI * fc * m).sin() / (PI * m) };
            sinc * (0.54 - 0.46 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
        })
        .collect();
    let sum: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= sum);
    h
}

/// Unit-variance band-limited Gaussian sequence of length `n` at `rate` Hz.
fn band_limited_noise<R: Rng>(rng: &mut R, n: usize, cutoff: f64, rate: f64) -> Vec<f64> {
    let taps = lowpass_taps(cutoff, rate, 40);
    let norm = taps.iter().map(|t| t * t).sum::<f64>().sqrt();
    let raw: Vec<f64> = (0..n + taps.len() - 1).map(|_| StandardNormal.sample(rng)).collect();
    (0..n)
        .map(|i| raw[i..i + taps.len()].iter().zip(&taps).map(|(x, h)| x * h).sum::<f64>() / norm)
        .collect()
}

/// Random tract-variable trajectory of `n` frames within [`TV_RANGES`].
pub fn synth_trajectory<R: Rng>(rng: &mut R, n: usize, bandwidth: f64) -> TvTrajectory {
    let mut values = vec![0.0; n * N_TV];
    for (k, (lo, hi)) in TV_RANGES.iter().enumerate() {
        let z = band_limited_noise(rng, n, bandwidth, 1.0 / FRAME_PERIOD);
        let mid = 0.5 * (lo + hi);
        let half = 0.5 * (hi - lo);
        for (t, v) in z.iter().enumerate() {
            values[t * N_TV + k] = (mid + half * v / RANGE_SPREAD).clamp(*lo, *hi);
        }
    }
    TvTrajectory::new(values).expect("finite by construction")
}

fn unit(k: usize, v: f64) -> f64 {
    let (lo, hi) = TV_RANGES[k];
    (v - lo) / (hi - lo)
}

/// Linear interpolation of frame-rate values to sample `i`.
fn interp(frames: &[f64], i: usize, samples_per_frame: f64) -> f64 {
    let pos = i as f64 / samples_per_frame;
    let j = pos.floor() as usize;
    if j + 1 >= frames.len() {
        return *frames.last().unwrap();
    }
    let f = pos - j as f64;
    frames[j] * (1.0 - f) + frames[j + 1] * f
}

/// Klatt-style two-pole resonator with per-sample coefficients.
struct Resonator {
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn step(&mut self, x: f64, freq: f64, bw: f64, rate: f64) -> f64 {
        let c = -(-2.0 * PI * bw / rate).exp();
        let b = 2.0 * (-PI * bw / rate).exp() * (2.0 * PI * freq / rate).cos();
        let a = 1.0 - b - c;
        let y = a * x + b * self.y1 + c * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

const SHELF_KNEE: f64 = 1000.0;

/// Renders audio for a trajectory. `rng` drives pitch drift and aspiration
/// noise only.
pub fn synthesize_audio<R: Rng>(
    tv: &TvTrajectory,
    speaker: &SpeakerParams,
    sample_rate: u32,
    rng: &mut R,
) -> Result<AudioBuffer> {
    if tv.is_empty() {
        return Err(Error::InvalidArgument("empty trajectory".into()));
    }
    let rate = sample_rate as f64;
    let spf = rate * FRAME_PERIOD;
    let n = (tv.n_frames() as f64 * spf).round() as usize;
    let ch: Vec<Vec<f64>> = (0..N_TV).map(|k| tv.channel(k).iter().map(|v| unit(k, *v)).collect()).collect();
    let drift = band_limited_noise(rng, tv.n_frames(), 2.0, 1.0 / FRAME_PERIOD);

    let mut phase = 0.0;
    let mut low = 0.0;
    let shelf = 1.0 - (-2.0 * PI * SHELF_KNEE / rate).exp();
    let mut r1 = Resonator { y1: 0.0, y2: 0.0 };
    let mut r2 = Resonator { y1: 0.0, y2: 0.0 };
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let la = interp(&ch[0], i, spf);
        let lp = interp(&ch[1], i, spf);
        let tbcl = interp(&ch[2], i, spf);
        let tbcd = interp(&ch[3], i, spf);
        let ttcl = interp(&ch[4], i, spf);
        let ttcd = interp(&ch[5], i, spf);
        let f0 = speaker.f0 * (1.0 + 0.06 * interp(&drift, i, spf));

        phase += f0 / rate;
        let mut src = 0.0;
        if phase >= 1.0 {
            phase -= 1.0;
            src = 1.0;
        }
        let noise: f64 = StandardNormal.sample(rng);
        src += speaker.noise_level * noise;

        // high shelf: +12 dB above the knee at LP = 0, -12 dB at LP = 1
        low += shelf * (src - low);
        let tilt = low + (src - low) * 10f64.powf(12.0 * (1.0 - 2.0 * lp) / 20.0);

        let f1 = speaker.formant_scale * (250.0 + 750.0 * tbcl);
        let b1 = 40.0 + 960.0 * tbcd;
        let f2 = speaker.formant_scale * (1200.0 + 2300.0 * ttcl);
        let b2 = 60.0 + 1440.0 * ttcd;
        let y = r2.step(r1.step(tilt, f1, b1, rate), f2, b2, rate);

        let level = 10f64.powf((30.0 * la - 30.0) / 20.0);
        out.push((level * y).clamp(-1.0, 1.0));
    }
    AudioBuffer::new(out, sample_rate, "")
}

fn synth_one(spec: &SynthSpec, speaker: usize, utt: usize) -> Result<SynthUtterance> {
    let params = speaker_params(spec.seed, speaker);
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(spec.seed, speaker, utt as u64));
    let tv = synth_trajectory(&mut rng, spec.n_frames(), spec.trajectory_bandwidth);
    let mut audio = synthesize_audio(&tv, &params, spec.sample_rate, &mut rng)?;
    let utt_id = format!("spk{speaker:02}_utt{utt:02}");
    audio.id = utt_id.clone();
    Ok(SynthUtterance {
        utt_id,
        speaker_id: format!("spk{speaker:02}"),
        audio,
        tv,
    })
}

/// Every utterance, speaker-major. Each one is a pure function of
/// `(spec, speaker, utterance)`, so the result does not depend on thread
/// scheduling.
pub fn synth_dataset(spec: &SynthSpec) -> Result<Vec<SynthUtterance>> {
    spec.validate()?;
    (0..spec.n_speakers * spec.utterances_per_speaker)
        .into_par_iter()
        .map(|i| synth_one(spec, i / spec.utterances_per_speaker, i % spec.utterances_per_speaker))
        .collect()
}

/// Split fractions giving 8/2/2 speakers for the default corpus.
pub const DEFAULT_FRACTIONS: (f64, f64, f64) = (8.0 / 12.0, 2.0 / 12.0, 2.0 / 12.0);

/// Writes `wav/<utt>.wav`, `tv/<utt>.csv` and `manifest.csv` under `dir`
/// (paths in the manifest are relative to it) and returns the split manifest.
pub fn write_synth_dataset(
    spec: &SynthSpec,
    dir: &Path,
    mode: SplitMode,
    fractions: (f64, f64, f64),
) -> Result<DatasetManifest> {
    let utts = synth_dataset(spec)?;
    for sub in ["wav", "tv"] {
        let p = dir.join(sub);
        std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let entries = utts
        .par_iter()
        .map(|u| {
            let audio_path = PathBuf::from("wav").join(format!("{}.wav", u.utt_id));
            let tv_path = PathBuf::from("tv").join(format!("{}.csv", u.utt_id));
            u.audio.save_wav(&dir.join(&audio_path))?;
            u.tv.save_csv(&dir.join(&tv_path))?;
            Ok(ManifestEntry {
                utt_id: u.utt_id.clone(),
                speaker_id: u.speaker_id.clone(),
                audio_path,
                tv_path,
                split: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = make_splits(&DatasetManifest::new(entries)?, mode, fractions, spec.seed)?;
    manifest.save(&dir.join("manifest.csv"))?;
    Ok(manifest)
}
