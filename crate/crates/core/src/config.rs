//! Experiment configuration (TOML) and the content hashes that tie artifacts
//! to the settings that produced them.
//!
//! Each stage hashes only the sections it depends on, so tuning the smoother
//! does not invalidate extracted features:
//!
//! | artifact          | sections hashed                              |
//! |-------------------|----------------------------------------------|
//! | features, basis   | data, frontend, cortical                     |
//! | checkpoint        | the above plus reduction and model           |
//! | report            | checkpoint hash plus eval                    |

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::SplitMode;
use crate::error::{Error, Result};
use crate::mlp::{MlpArchitecture, TrainConfig};
use crate::synth::SynthSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub n_speakers: usize,
    pub utterances_per_speaker: usize,
    pub duration: f64,
    pub trajectory_bandwidth: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        let s = SynthSpec::default();
        Self {
            n_speakers: s.n_speakers,
            utterances_per_speaker: s.utterances_per_speaker,
            duration: s.duration,
            trajectory_bandwidth: s.trajectory_bandwidth,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Dataset root; manifest paths are relative to it.
    pub root: PathBuf,
    pub manifest: PathBuf,
    pub split_mode: SplitMode,
    pub split_fractions: [f64; 3],
    pub seed: u64,
    pub synth: SynthSection,
}

impl Default for DataSection {
    fn default() -> Self {
        let (a, b, c) = crate::synth::DEFAULT_FRACTIONS;
        Self {
            root: PathBuf::from("data"),
            manifest: PathBuf::from("manifest.csv"),
            split_mode: SplitMode::BySpeaker,
            split_fractions: [a, b, c],
            seed: 7,
            synth: SynthSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrontendSection {
    pub sample_rate: u32,
    pub n_channels: usize,
    pub channels_per_octave: usize,
    pub min_center_freq: f64,
    pub q: f64,
    /// Gain of the hair-cell `tanh` compression.
    pub haircell_gain: f64,
    /// Hair-cell membrane low-pass cutoff (Hz).
    pub membrane_cutoff: f64,
}

impl Default for FrontendSection {
    fn default() -> Self {
        use crate::frontend::*;
        Self {
            sample_rate: crate::audio::STANDARD_RATE,
            n_channels: DEFAULT_CHANNELS,
            channels_per_octave: DEFAULT_CHANNELS_PER_OCTAVE,
            min_center_freq: DEFAULT_MIN_CF,
            q: DEFAULT_Q,
            haircell_gain: HairCellParams::default().gain,
            membrane_cutoff: HairCellParams::default().membrane_cutoff,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorticalSection {
    pub scales: Vec<f64>,
    pub rates: Vec<f64>,
}

impl Default for CorticalSection {
    fn default() -> Self {
        Self {
            scales: crate::cortical::DEFAULT_SCALES.to_vec(),
            rates: crate::cortical::DEFAULT_RATES.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    #[default]
    Cortical,
    Mfcc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReductionSection {
    pub feature: FeatureKind,
    /// `(k_s, k_r, k_f)`.
    pub truncation: [usize; 3],
    pub context: usize,
    /// Context used when `feature = "mfcc"`.
    pub mfcc_context: usize,
    pub mfcc_coeffs: usize,
}

impl Default for ReductionSection {
    fn default() -> Self {
        Self {
            feature: FeatureKind::Cortical,
            truncation: [4, 5, 7],
            context: 7,
            mfcc_context: 17,
            mfcc_coeffs: 13,
        }
    }
}

impl ReductionSection {
    pub fn frame_dim(&self) -> usize {
        match self.feature {
            FeatureKind::Cortical => self.truncation.iter().product(),
            FeatureKind::Mfcc => self.mfcc_coeffs,
        }
    }

    pub fn active_context(&self) -> usize {
        match self.feature {
            FeatureKind::Cortical => self.context,
            FeatureKind::Mfcc => self.mfcc_context,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.frame_dim() * self.active_context()
    }

    /// Report tag: `cortical_<dim>` or `mfcc`.
    pub fn feature_tag(&self) -> String {
        match self.feature {
            FeatureKind::Cortical => format!("cortical_{}", self.input_dim()),
            FeatureKind::Mfcc => "mfcc".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// Optional declared input width, checked against the reduction section.
    pub input_dim: Option<usize>,
    pub hidden_layers: usize,
    pub width: usize,
    pub dropout_input: f64,
    pub dropout_hidden: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub patience: usize,
    pub seed: u64,
    /// Train on at most this many randomly chosen training frames (0 = all).
    pub max_train_frames: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            input_dim: None,
            hidden_layers: 6,
            width: 512,
            dropout_input: 0.1,
            dropout_hidden: 0.2,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            learning_rate: t.learning_rate,
            patience: t.patience,
            seed: 0,
            max_train_frames: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub kalman_q: f64,
    pub kalman_r: f64,
    /// Grid-search `(q, r)` on the dev split instead of using the values above.
    pub tune_kalman: bool,
    pub q_grid: Vec<f64>,
    pub r_grid: Vec<f64>,
    pub forward_only: bool,
    pub per_utterance: bool,
    pub plots: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            kalman_q: crate::kalman::DEFAULT_Q,
            kalman_r: crate::kalman::DEFAULT_R,
            tune_kalman: true,
            q_grid: vec![0.1, 1.0, 10.0, 100.0, 1000.0],
            r_grid: vec![0.001, 0.01, 0.1, 1.0],
            forward_only: false,
            per_utterance: false,
            plots: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub work_dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            work_dir: PathBuf::from("work"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub data: DataSection,
    pub frontend: FrontendSection,
    pub cortical: CorticalSection,
    pub reduction: ReductionSection,
    pub model: ModelSection,
    pub eval: EvalSection,
    pub output: OutputSection,
}

fn digest(parts: &[String]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
}

fn canonical<T: Serialize>(v: &T) -> String {
    toml::to_string(v).expect("config sections serialize")
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`; relative data and output directories are resolved
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(base) = path.parent() {
            for p in [&mut cfg.data.root, &mut cfg.output.work_dir] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        canonical(self)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let f = &self.frontend;
        if !(f.haircell_gain > 0.0 && f.membrane_cutoff > 0.0) {
            return bad("hair-cell gain and membrane cutoff must be positive".into());
        }
        let r = &self.reduction;
        if r.active_context() % 2 == 0 {
            return bad(format!("context {} must be odd", r.active_context()));
        }
        let n_rates = 2 * self.cortical.rates.len();
        let dims = [self.cortical.scales.len(), n_rates, self.frontend.n_channels];
        if r.feature == FeatureKind::Cortical {
            for m in 0..3 {
                if r.truncation[m] == 0 || r.truncation[m] > dims[m] {
                    return bad(format!("truncation {:?} exceeds tensor dims {dims:?}", r.truncation));
                }
            }
        }
        if let Some(d) = self.model.input_dim {
            if d != r.input_dim() {
                return bad(format!(
                    "model input_dim {d} does not match reduction: {} values/frame × context {} = {}",
                    r.frame_dim(),
                    r.active_context(),
                    r.input_dim()
                ));
            }
        }
        self.architecture().validate().map_err(|e| Error::Config(e.to_string()))?;
        let f = self.data.split_fractions;
        if f.iter().any(|v| !(*v > 0.0)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad(format!("split fractions {f:?} must be positive and sum to 1"));
        }
        if !(self.eval.kalman_q > 0.0 && self.eval.kalman_r > 0.0) {
            return bad("Kalman q and r must be positive".into());
        }
        if self.eval.tune_kalman
            && (self.eval.q_grid.is_empty()
                || self.eval.r_grid.is_empty()
                || self.eval.q_grid.iter().chain(&self.eval.r_grid).any(|v| !(*v > 0.0)))
        {
            return bad("Kalman grids must be non-empty and positive".into());
        }
        if self.model.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        Ok(())
    }

    pub fn architecture(&self) -> MlpArchitecture {
        MlpArchitecture {
            input_dim: self.reduction.input_dim(),
            hidden_layers: self.model.hidden_layers,
            hidden_width: self.model.width,
            output_dim: crate::tv::N_TV,
            dropout_input: self.model.dropout_input,
            dropout_hidden: self.model.dropout_hidden,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.model.batch_size,
            max_epochs: self.model.max_epochs,
            learning_rate: self.model.learning_rate,
            patience: self.model.patience,
            seed: self.model.seed,
        }
    }

    pub fn synth_spec(&self) -> SynthSpec {
        let s = &self.data.synth;
        SynthSpec {
            n_speakers: s.n_speakers,
            utterances_per_speaker: s.utterances_per_speaker,
            duration: s.duration,
            seed: self.data.seed,
            sample_rate: self.frontend.sample_rate,
            trajectory_bandwidth: s.trajectory_bandwidth,
        }
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.data.root.join(&self.data.manifest)
    }

    /// Hash of everything feature extraction depends on. Directory locations
    /// are excluded so a moved dataset keeps its hash.
    pub fn feature_hash(&self) -> String {
        let mut data = self.data.clone();
        data.root = PathBuf::new();
        digest(&[canonical(&data), canonical(&self.frontend), canonical(&self.cortical)])
    }

    pub fn model_hash(&self) -> String {
        digest(&[self.feature_hash(), canonical(&self.reduction), canonical(&self.model)])
    }

    pub fn report_hash(&self) -> String {
        digest(&[self.model_hash(), canonical(&self.eval)])
    }
}
