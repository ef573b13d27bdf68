//! End-to-end inversion: feature extraction, reduction, regression and
//! smoothing, plus the on-disk stages driven by the command-line tool.
//!
//! Work directory layout:
//!
//! ```text
//! features/<utt>.ftc         audspec, cortical and mfcc records (f32)
//! basis.ftc, energy.csv      HOSVD basis and per-mode energy report
//! fit_reduce_inputs.txt      feature files the basis was fit on
//! models/<name>.mlp          checkpoint, with <name>_log.csv, <name>_kalman.toml
//!                            and <name>_inputs.txt
//! reports/<name>.csv         evaluation report (+ .provenance, per-utterance
//!                            CSV and SVG plots when enabled)
//! summary.csv                all reports in one table
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::{load_wav, resample, AudioBuffer};
use crate::config::{ExperimentConfig, FeatureKind, ReductionSection};
use crate::cortical::{cortical_transform, design_strf_bank_cpo, CorticalSequence, StrfBank};
use crate::dataset::{align_frames, DatasetManifest, ManifestEntry, Split};
use crate::error::{Error, Result};
use crate::eval::{
    per_utterance_scores, save_svg, score_concatenated, write_per_utterance_csv, write_report_csv,
    EvalReport,
};
use crate::frontend::{audspec_with, design_cochlear_filterbank_q, AuditorySpectrogram, CochlearFilterbank, HairCellParams};
use crate::ftc::{self, FtcData, FtcTensor};
use crate::hosvd::{
    fit_hosvd_tagged, load_basis, project, save_basis, stack_context, write_energy_csv, HosvdBasis, ModeCovariances,
};
use crate::kalman::{kalman_smooth, KalmanParams};
use crate::mfcc::{mfcc_baseline, MfccConfig};
use crate::mlp::{load_model, save_model, train, write_train_log, MlpModel, TrainReport};
use crate::synth::write_synth_dataset;
use crate::tv::{load_tv_csv, TvTrajectory, FRAME_PERIOD, N_TV};

/// Audio-side feature computation shared by every stage.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    pub sample_rate: u32,
    pub filterbank: CochlearFilterbank,
    pub haircell: HairCellParams,
    pub strf: StrfBank,
    pub mfcc: MfccConfig,
}

impl FeatureExtractor {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        let f = &cfg.frontend;
        let filterbank =
            design_cochlear_filterbank_q(f.sample_rate, f.n_channels, f.channels_per_octave, f.min_center_freq, f.q)?;
        let strf = design_strf_bank_cpo(
            &cfg.cortical.scales,
            &cfg.cortical.rates,
            FRAME_PERIOD,
            f.n_channels,
            f.channels_per_octave,
        )?;
        Ok(Self {
            sample_rate: f.sample_rate,
            filterbank,
            haircell: HairCellParams {
                gain: f.haircell_gain,
                membrane_cutoff: f.membrane_cutoff,
            },
            strf,
            mfcc: MfccConfig {
                n_coeffs: cfg.reduction.mfcc_coeffs,
                ..MfccConfig::default()
            },
        })
    }

    pub fn tensor_dims(&self) -> [usize; 3] {
        [self.strf.n_scales(), self.strf.n_signed_rates(), self.filterbank.n_channels()]
    }

    /// Resamples to the pipeline rate when needed.
    pub fn prepare(&self, a: &AudioBuffer) -> Result<AudioBuffer> {
        if a.sample_rate == self.sample_rate {
            Ok(a.clone())
        } else {
            resample(a, self.sample_rate)
        }
    }

    pub fn auditory(&self, a: &AudioBuffer) -> Result<AuditorySpectrogram> {
        audspec_with(&self.prepare(a)?, &self.filterbank, self.haircell)
    }

    pub fn cortical(&self, sp: &AuditorySpectrogram) -> Result<CorticalSequence> {
        cortical_transform(sp, &self.strf)
    }

    pub fn mfcc(&self, a: &AudioBuffer) -> Result<Vec<f64>> {
        Ok(mfcc_baseline(&self.prepare(a)?, &self.mfcc)?.data)
    }
}

/// Keeps the first `n` frames.
pub fn truncate_cortical(seq: &mut CorticalSequence, n: usize) {
    let len = seq.frame_len();
    seq.data.truncate(n * len);
    seq.n_frames = seq.n_frames.min(n);
}

/// Regressor inputs for one utterance: reduced cortical frames (or MFCC
/// frames) stacked with their context.
pub fn cortical_inputs(
    seq: &CorticalSequence,
    basis: &HosvdBasis,
    reduction: &ReductionSection,
) -> Result<Vec<f64>> {
    let red = project(seq, basis, reduction.truncation)?;
    stack_context(&red.data, red.frame_len(), reduction.context)
}

pub fn mfcc_inputs(mfcc: &[f64], reduction: &ReductionSection) -> Result<Vec<f64>> {
    stack_context(mfcc, reduction.mfcc_coeffs, reduction.mfcc_context)
}

/// Row-major feature/target matrices assembled from several utterances.
#[derive(Debug, Clone, Default)]
pub struct FrameSet {
    pub dim: usize,
    pub features: Vec<f64>,
    pub targets: Vec<f64>,
    pub utterances: Vec<(String, usize)>,
}

impl FrameSet {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ..Self::default()
        }
    }

    pub fn n_frames(&self) -> usize {
        self.targets.len() / N_TV
    }

    /// Appends one utterance, truncating inputs and targets to their common
    /// length.
    pub fn push(&mut self, utt_id: &str, inputs: &[f64], tv: &TvTrajectory) -> Result<()> {
        if inputs.len() % self.dim != 0 {
            return Err(Error::ShapeMismatch(format!("inputs for {utt_id} are not {} wide", self.dim)));
        }
        let n = align_frames(inputs.len() / self.dim, tv)?;
        self.features.extend_from_slice(&inputs[..n * self.dim]);
        self.targets.extend_from_slice(&tv.values()[..n * N_TV]);
        self.utterances.push((utt_id.to_string(), n));
        Ok(())
    }

    /// Keeps `max` randomly chosen frames (all when `max` is 0 or larger
    /// than the set), preserving their order.
    pub fn subsample(&self, max: usize, seed: u64) -> FrameSet {
        let n = self.n_frames();
        if max == 0 || max >= n {
            return self.clone();
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        idx.truncate(max);
        idx.sort_unstable();
        let mut out = FrameSet::new(self.dim);
        for i in idx {
            out.features.extend_from_slice(&self.features[i * self.dim..(i + 1) * self.dim]);
            out.targets.extend_from_slice(&self.targets[i * N_TV..(i + 1) * N_TV]);
        }
        out.utterances = vec![("subsample".into(), max)];
        out
    }

    /// Per-utterance `(id, truth)` slices of the targets.
    pub fn truths(&self) -> Result<Vec<(String, TvTrajectory)>> {
        let mut off = 0;
        self.utterances
            .iter()
            .map(|(id, n)| {
                let t = TvTrajectory::new(self.targets[off * N_TV..(off + n) * N_TV].to_vec())?;
                let rows = (off, *n);
                off += rows.1;
                Ok((id.clone(), t))
            })
            .collect()
    }

    pub fn utterance_features(&self) -> Vec<&[f64]> {
        let mut off = 0;
        self.utterances
            .iter()
            .map(|(_, n)| {
                let s = &self.features[off * self.dim..(off + n) * self.dim];
                off += n;
                s
            })
            .collect()
    }
}

/// Normalized-unit smoother settings saved next to a checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmootherSettings {
    pub q: f64,
    pub r: f64,
    pub forward_only: bool,
}

impl SmootherSettings {
    pub fn params(&self, model: &MlpModel<f32>) -> KalmanParams {
        let std: [f64; N_TV] = std::array::from_fn(|k| model.target_norm.std[k] as f64);
        let mut p = KalmanParams::normalized(self.q, self.r, &std);
        p.forward_only = self.forward_only;
        p
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SmootherFile {
    provenance: String,
    q: f64,
    r: f64,
}

/// Trained network plus everything needed to run it on new audio.
#[derive(Debug, Clone)]
pub struct InversionModel {
    pub extractor: FeatureExtractor,
    pub reduction: ReductionSection,
    pub basis: Option<HosvdBasis>,
    pub model: MlpModel<f32>,
    pub smoother: Option<SmootherSettings>,
}

impl InversionModel {
    pub fn inputs_for(&self, audio: &AudioBuffer) -> Result<Vec<f64>> {
        match self.reduction.feature {
            FeatureKind::Cortical => {
                let basis = self
                    .basis
                    .as_ref()
                    .ok_or_else(|| Error::InvalidArgument("cortical model needs a basis".into()))?;
                let seq = self.extractor.cortical(&self.extractor.auditory(audio)?)?;
                cortical_inputs(&seq, basis, &self.reduction)
            }
            FeatureKind::Mfcc => mfcc_inputs(&self.extractor.mfcc(audio)?, &self.reduction),
        }
    }

    /// Raw network output for precomputed inputs.
    pub fn predict_inputs(&self, inputs: &[f64]) -> Result<TvTrajectory> {
        self.model.predict(inputs)
    }

    pub fn smooth(&self, raw: &TvTrajectory) -> Result<TvTrajectory> {
        match &self.smoother {
            Some(s) if !raw.is_empty() => kalman_smooth(raw, &s.params(&self.model)),
            _ => Ok(raw.clone()),
        }
    }

    /// Audio in, smoothed tract variables out (one row per 10 ms frame).
    pub fn invert(&self, audio: &AudioBuffer) -> Result<TvTrajectory> {
        let inputs = self.inputs_for(audio)?;
        self.smooth(&self.predict_inputs(&inputs)?)
    }
}

/// Scores predictions on a frame set; `smoother` of `None` scores the raw
/// network output.
pub fn score_frame_set(
    inv: &InversionModel,
    set: &FrameSet,
    feature_tag: &str,
    context: usize,
) -> Result<(EvalReport, Vec<(TvTrajectory, TvTrajectory)>)> {
    let truths = set.truths()?;
    let pairs = set
        .utterance_features()
        .into_par_iter()
        .zip(truths.par_iter())
        .map(|(x, (_, truth))| Ok((inv.smooth(&inv.predict_inputs(x)?)?, truth.clone())))
        .collect::<Result<Vec<_>>>()?;
    let ppmc = score_concatenated(&pairs)?;
    let model_desc = format!(
        "mlp {}x{} in {}",
        inv.model.arch.hidden_layers, inv.model.arch.hidden_width, inv.model.arch.input_dim
    );
    let mut report = EvalReport::new(feature_tag, context, &model_desc, ppmc);
    let ids: Vec<String> = truths.iter().map(|(id, _)| id.clone()).collect();
    report.per_utterance = per_utterance_scores(&ids, &pairs);
    Ok((report, pairs))
}

/// Grid-searches smoother settings on a (dev) frame set.
pub fn tune_smoother(
    inv: &InversionModel,
    set: &FrameSet,
    q_grid: &[f64],
    r_grid: &[f64],
    forward_only: bool,
) -> Result<SmootherSettings> {
    let truths = set.truths()?;
    let pairs = set
        .utterance_features()
        .into_par_iter()
        .zip(truths.par_iter())
        .map(|(x, (_, t))| Ok((inv.predict_inputs(x)?, t.clone())))
        .collect::<Result<Vec<_>>>()?;
    let std: [f64; N_TV] = std::array::from_fn(|k| inv.model.target_norm.std[k] as f64);
    let mut best: Option<(SmootherSettings, f64)> = None;
    // walk the grid one point at a time so ties resolve to the earliest
    for &q in q_grid {
        for &r in r_grid {
            let mut p = KalmanParams::normalized(q, r, &std);
            p.forward_only = forward_only;
            let smoothed = pairs
                .iter()
                .map(|(e, t)| Ok((kalman_smooth(e, &p)?, t.clone())))
                .collect::<Result<Vec<_>>>()?;
            let score = crate::eval::mean(&score_concatenated(&smoothed)?);
            if best.map_or(true, |(_, s)| score > s) {
                best = Some((SmootherSettings { q, r, forward_only }, score));
            }
        }
    }
    best.map(|(s, _)| s)
        .ok_or_else(|| Error::InvalidArgument("empty smoother grid".into()))
}

// ---------------------------------------------------------------------------
// On-disk stages

pub fn feature_path(work: &Path, utt_id: &str) -> PathBuf {
    work.join("features").join(format!("{utt_id}.ftc"))
}

pub fn model_name(cfg: &ExperimentConfig) -> String {
    format!("{}_w{}", cfg.reduction.feature_tag(), cfg.model.width)
}

pub fn checkpoint_path(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output.work_dir.join("models").join(format!("{}.mlp", model_name(cfg)))
}

fn sidecar(checkpoint: &Path, suffix: &str) -> PathBuf {
    let stem = checkpoint.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    checkpoint.with_file_name(format!("{stem}{suffix}"))
}

fn create_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if jobs == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

pub fn load_manifest(cfg: &ExperimentConfig) -> Result<DatasetManifest> {
    let m = DatasetManifest::load(&cfg.manifest_path())?;
    if m.entries.iter().any(|e| e.split.is_none()) {
        return Err(Error::SchemaMismatch("manifest entries must all carry a split".into()));
    }
    Ok(m)
}

/// Writes the synthetic corpus under `data.root`. Existing output is only
/// replaced with `force`.
pub fn stage_synth(cfg: &ExperimentConfig, force: bool) -> Result<DatasetManifest> {
    let path = cfg.manifest_path();
    if path.exists() && !force {
        let existing = DatasetManifest::load(&path)?;
        let spec = cfg.synth_spec();
        if existing.entries.len() == spec.n_speakers * spec.utterances_per_speaker {
            log::info!("{} exists; pass --force to regenerate", path.display());
            return Ok(existing);
        }
        return Err(Error::InvalidArgument(format!(
            "{} exists with a different corpus; pass --force to overwrite",
            path.display()
        )));
    }
    create_dir(&cfg.data.root)?;
    let [a, b, c] = cfg.data.split_fractions;
    let m = write_synth_dataset(&cfg.synth_spec(), &cfg.data.root, cfg.data.split_mode, (a, b, c))?;
    if cfg.data.manifest != Path::new("manifest.csv") {
        m.save(&path)?;
    }
    Ok(m)
}

pub fn load_entry(cfg: &ExperimentConfig, e: &ManifestEntry) -> Result<(AudioBuffer, TvTrajectory)> {
    let audio = load_wav(&cfg.data.root.join(&e.audio_path))?;
    let tv = load_tv_csv(&cfg.data.root.join(&e.tv_path))?;
    Ok((audio, tv))
}

fn stored_provenance(path: &Path) -> Result<Option<String>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let rec = FtcTensor::read(&mut BufReader::new(f))?;
    Ok(rec.and_then(|r| r.meta("provenance").map(str::to_string)))
}

fn extract_one(cfg: &ExperimentConfig, ex: &FeatureExtractor, e: &ManifestEntry, out: &Path, hash: &str) -> Result<()> {
    let (audio, _) = load_entry(cfg, e)?;
    let sp = ex.auditory(&audio)?;
    let cort = ex.cortical(&sp)?;
    let mfcc = ex.mfcc(&audio)?;
    let t = sp.n_frames() as u64;
    let [s, r, f] = cort.dims.map(|d| d as u64);
    let tag = |rec: FtcTensor, section: &str| {
        rec.with_meta("section", section)
            .with_meta("provenance", hash)
            .with_meta("utt_id", &e.utt_id)
            .with_meta("frame_period_ms", 10)
    };
    let f32s = |v: &[f64]| FtcData::F32(v.iter().map(|x| *x as f32).collect());
    let records = vec![
        tag(FtcTensor::new(vec![t, sp.n_channels as u64], f32s(&sp.frames))?, "audspec"),
        tag(FtcTensor::new(vec![t, s, r, f], f32s(&cort.data))?, "cortical"),
        tag(
            FtcTensor::new(vec![(mfcc.len() / ex.mfcc.n_coeffs) as u64, ex.mfcc.n_coeffs as u64], f32s(&mfcc))?,
            "mfcc",
        ),
    ];
    // write then rename so an interrupted run never leaves a partial file
    let tmp = out.with_extension("ftc.part");
    ftc::write_file(&tmp, &records)?;
    std::fs::rename(&tmp, out).map_err(|err| Error::io(out, err))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ExtractSummary {
    pub computed: usize,
    pub skipped: usize,
}

/// Writes `features/<utt>.ftc` for every manifest entry. Files already
/// carrying the current feature hash are skipped; files from another
/// configuration are a provenance error unless `force` is set.
pub fn stage_extract(cfg: &ExperimentConfig, jobs: usize, force: bool) -> Result<ExtractSummary> {
    let manifest = load_manifest(cfg)?;
    let ex = FeatureExtractor::from_config(cfg)?;
    let hash = cfg.feature_hash();
    let dir = cfg.output.work_dir.join("features");
    create_dir(&dir)?;
    let mut todo = Vec::new();
    let mut summary = ExtractSummary::default();
    for e in &manifest.entries {
        let out = feature_path(&cfg.output.work_dir, &e.utt_id);
        if out.exists() {
            match stored_provenance(&out) {
                Ok(Some(h)) if h == hash => {
                    summary.skipped += 1;
                    continue;
                }
                Ok(other) if !force => {
                    return Err(Error::Provenance(format!(
                        "{} was extracted with configuration {:?}, current is {hash}; rerun with --force",
                        out.display(),
                        other.unwrap_or_default()
                    )));
                }
                Err(err) if !force => {
                    return Err(Error::Provenance(format!(
                        "{} is unreadable ({err}); rerun with --force",
                        out.display()
                    )));
                }
                _ => {}
            }
        }
        todo.push((e, out));
    }
    summary.computed = todo.len();
    with_pool(jobs, || {
        todo.par_iter()
            .map(|(e, out)| extract_one(cfg, &ex, e, out, &hash))
            .collect::<Result<Vec<_>>>()
    })??;
    Ok(summary)
}

/// One section of a feature file, checked against `hash`.
pub fn read_feature_section(path: &Path, section: &str, hash: &str) -> Result<FtcTensor> {
    let records = ftc::read_file(path)?;
    let rec = records
        .into_iter()
        .find(|r| r.meta("section") == Some(section))
        .ok_or_else(|| Error::Corrupt(format!("{} lacks a {section} record", path.display())))?;
    let stored = rec.meta("provenance").unwrap_or("");
    if stored != hash {
        return Err(Error::Provenance(format!(
            "{} has provenance {stored:?}, expected {hash}",
            path.display()
        )));
    }
    Ok(rec)
}

pub fn read_cortical(path: &Path, hash: &str) -> Result<CorticalSequence> {
    let rec = read_feature_section(path, "cortical", hash)?;
    if rec.rank() != 4 {
        return Err(Error::Corrupt(format!("{}: cortical record is not rank 4", path.display())));
    }
    let dims = [rec.dims[1] as usize, rec.dims[2] as usize, rec.dims[3] as usize];
    CorticalSequence::from_frames(dims, rec.data.to_f64())
}

/// Fits the basis on train-split entries only; any other split is refused.
pub fn fit_basis_on(cfg: &ExperimentConfig, entries: &[&ManifestEntry], jobs: usize) -> Result<HosvdBasis> {
    if let Some(e) = entries.iter().find(|e| e.split != Some(Split::Train)) {
        return Err(Error::InvalidArgument(format!(
            "refusing to fit the basis on {} from the {} split",
            e.utt_id,
            e.split.map(|s| s.as_str()).unwrap_or("unassigned")
        )));
    }
    if entries.is_empty() {
        return Err(Error::InvalidArgument("no training utterances".into()));
    }
    let hash = cfg.feature_hash();
    let dims = FeatureExtractor::from_config(cfg)?.tensor_dims();
    let acc = with_pool(jobs, || {
        entries
            .par_iter()
            .map(|e| {
                let seq = read_cortical(&feature_path(&cfg.output.work_dir, &e.utt_id), &hash)?;
                let mut acc = ModeCovariances::new(dims);
                acc.accumulate(&seq)?;
                Ok(acc)
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let mut total = ModeCovariances::new(dims);
    // fixed merge order keeps the sums independent of scheduling
    for a in &acc {
        total.merge(a)?;
    }
    fit_hosvd_tagged(&total, &hash)
}

pub fn stage_fit_reduce(cfg: &ExperimentConfig, jobs: usize) -> Result<HosvdBasis> {
    let manifest = load_manifest(cfg)?;
    let train: Vec<&ManifestEntry> = manifest.split(Split::Train).collect();
    let basis = fit_basis_on(cfg, &train, jobs)?;
    let work = &cfg.output.work_dir;
    save_basis(&basis, &work.join("basis.ftc"))?;
    let energy = work.join("energy.csv");
    write_energy_csv(&basis, File::create(&energy).map_err(|e| Error::io(&energy, e))?)?;
    let list: String = train.iter().map(|e| format!("{}\n", e.utt_id)).collect();
    let p = work.join("fit_reduce_inputs.txt");
    std::fs::write(&p, list).map_err(|e| Error::io(&p, e))?;
    Ok(basis)
}

pub fn load_checked_basis(cfg: &ExperimentConfig) -> Result<HosvdBasis> {
    let path = cfg.output.work_dir.join("basis.ftc");
    if !path.exists() {
        return Err(Error::InvalidArgument(format!(
            "missing basis {}; run fit-reduce first",
            path.display()
        )));
    }
    let basis = load_basis(&path)?;
    if basis.config_hash != cfg.feature_hash() {
        return Err(Error::Provenance(format!(
            "basis {} has provenance {:?}, configuration expects {}",
            path.display(),
            basis.config_hash,
            cfg.feature_hash()
        )));
    }
    Ok(basis)
}

/// Builds regressor inputs and targets for one split from stored features.
pub fn frame_set_from_disk(
    cfg: &ExperimentConfig,
    manifest: &DatasetManifest,
    split: Split,
    basis: Option<&HosvdBasis>,
    jobs: usize,
) -> Result<FrameSet> {
    let hash = cfg.feature_hash();
    let entries: Vec<&ManifestEntry> = manifest.split(split).collect();
    let red = &cfg.reduction;
    let rows = with_pool(jobs, || {
        entries
            .par_iter()
            .map(|e| {
                let path = feature_path(&cfg.output.work_dir, &e.utt_id);
                let inputs = match red.feature {
                    FeatureKind::Cortical => {
                        let seq = read_cortical(&path, &hash)?;
                        cortical_inputs(&seq, basis.expect("cortical features need a basis"), red)?
                    }
                    FeatureKind::Mfcc => {
                        let rec = read_feature_section(&path, "mfcc", &hash)?;
                        mfcc_inputs(&rec.data.to_f64(), red)?
                    }
                };
                let tv = load_tv_csv(&cfg.data.root.join(&e.tv_path))?;
                Ok((e.utt_id.clone(), inputs, tv))
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let mut set = FrameSet::new(red.input_dim());
    for (id, x, tv) in &rows {
        set.push(id, x, tv)?;
    }
    Ok(set)
}

fn basis_for(cfg: &ExperimentConfig) -> Result<Option<HosvdBasis>> {
    match cfg.reduction.feature {
        FeatureKind::Cortical => Ok(Some(load_checked_basis(cfg)?)),
        FeatureKind::Mfcc => Ok(None),
    }
}

pub fn stage_train(cfg: &ExperimentConfig, jobs: usize) -> Result<(PathBuf, TrainReport)> {
    cfg.validate()?;
    let manifest = load_manifest(cfg)?;
    let basis = basis_for(cfg)?;
    let train_set = frame_set_from_disk(cfg, &manifest, Split::Train, basis.as_ref(), jobs)?;
    let dev_set = frame_set_from_disk(cfg, &manifest, Split::Dev, basis.as_ref(), jobs)?;
    let fit_set = train_set.subsample(cfg.model.max_train_frames, cfg.model.seed);
    log::info!(
        "training on {} frames ({} available), dev {} frames",
        fit_set.n_frames(),
        train_set.n_frames(),
        dev_set.n_frames()
    );
    let (mut model, report) = train::<f32>(
        &cfg.architecture(),
        &fit_set.features,
        &fit_set.targets,
        &dev_set.features,
        &dev_set.targets,
        &cfg.train_config(),
    )?;
    model.provenance.config_hash = cfg.model_hash();

    let ckpt = checkpoint_path(cfg);
    create_dir(ckpt.parent().unwrap())?;
    save_model(&model, &ckpt)?;
    let log_path = sidecar(&ckpt, "_log.csv");
    write_train_log(&report, File::create(&log_path).map_err(|e| Error::io(&log_path, e))?)?;
    let inputs: String = manifest
        .entries
        .iter()
        .filter(|e| e.split == Some(Split::Train))
        .map(|e| format!("{}\n", e.utt_id))
        .collect();
    let p = sidecar(&ckpt, "_inputs.txt");
    std::fs::write(&p, inputs).map_err(|e| Error::io(&p, e))?;

    // tune the smoother on dev with the reloaded (single-precision) model
    let inv = InversionModel {
        extractor: FeatureExtractor::from_config(cfg)?,
        reduction: cfg.reduction.clone(),
        basis,
        model: load_model(&ckpt)?,
        smoother: None,
    };
    let settings = if cfg.eval.tune_kalman {
        tune_smoother(&inv, &dev_set, &cfg.eval.q_grid, &cfg.eval.r_grid, cfg.eval.forward_only)?
    } else {
        SmootherSettings {
            q: cfg.eval.kalman_q,
            r: cfg.eval.kalman_r,
            forward_only: cfg.eval.forward_only,
        }
    };
    save_smoother(&sidecar(&ckpt, "_kalman.toml"), &settings, &cfg.model_hash())?;
    Ok((ckpt, report))
}

fn save_smoother(path: &Path, s: &SmootherSettings, provenance: &str) -> Result<()> {
    let text = toml::to_string(&SmootherFile {
        provenance: provenance.to_string(),
        q: s.q,
        r: s.r,
    })
    .map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load_smoother(path: &Path, provenance: &str, forward_only: bool) -> Result<SmootherSettings> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let f: SmootherFile = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    if f.provenance != provenance {
        return Err(Error::Provenance(format!(
            "{} belongs to model {:?}, not {provenance}",
            path.display(),
            f.provenance
        )));
    }
    Ok(SmootherSettings {
        q: f.q,
        r: f.r,
        forward_only,
    })
}

/// Loads a checkpoint with its basis and smoother, verifying that all of
/// them come from `cfg`.
pub fn load_inversion_model(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<InversionModel> {
    let model = load_model(checkpoint)?;
    let expected = cfg.model_hash();
    if model.provenance.config_hash != expected {
        return Err(Error::Provenance(format!(
            "checkpoint {} has provenance {:?}, configuration expects {expected}",
            checkpoint.display(),
            model.provenance.config_hash
        )));
    }
    let smoother = if cfg.eval.tune_kalman {
        load_smoother(&sidecar(checkpoint, "_kalman.toml"), &expected, cfg.eval.forward_only)?
    } else {
        SmootherSettings {
            q: cfg.eval.kalman_q,
            r: cfg.eval.kalman_r,
            forward_only: cfg.eval.forward_only,
        }
    };
    Ok(InversionModel {
        extractor: FeatureExtractor::from_config(cfg)?,
        reduction: cfg.reduction.clone(),
        basis: basis_for(cfg)?,
        model,
        smoother: Some(smoother),
    })
}

pub fn stage_eval(cfg: &ExperimentConfig, checkpoint: Option<&Path>, jobs: usize) -> Result<(PathBuf, EvalReport)> {
    let ckpt = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| checkpoint_path(cfg));
    let inv = load_inversion_model(cfg, &ckpt)?;
    let manifest = load_manifest(cfg)?;
    let test = frame_set_from_disk(cfg, &manifest, Split::Test, inv.basis.as_ref(), jobs)?;
    let (report, pairs) = score_frame_set(&inv, &test, &cfg.reduction.feature_tag(), cfg.reduction.active_context())?;

    let dir = cfg.output.work_dir.join("reports");
    create_dir(&dir)?;
    let name = ckpt.file_stem().and_then(|s| s.to_str()).unwrap_or("model").to_string();
    let out = dir.join(format!("{name}.csv"));
    write_report_csv(std::slice::from_ref(&report), File::create(&out).map_err(|e| Error::io(&out, e))?)?;
    let prov = format!(
        "report_hash={}\nmodel_hash={}\nfeature_hash={}\ncheckpoint={}\n",
        cfg.report_hash(),
        cfg.model_hash(),
        cfg.feature_hash(),
        ckpt.display()
    );
    let p = dir.join(format!("{name}.provenance"));
    std::fs::write(&p, prov).map_err(|e| Error::io(&p, e))?;
    if cfg.eval.per_utterance {
        let p = dir.join(format!("{name}_utterances.csv"));
        write_per_utterance_csv(&report, File::create(&p).map_err(|e| Error::io(&p, e))?)?;
    }
    if cfg.eval.plots {
        let plots = dir.join(format!("{name}_plots"));
        create_dir(&plots)?;
        for ((id, _), (est, truth)) in test.utterances.iter().zip(&pairs) {
            save_svg(&plots.join(format!("{id}.svg")), id, est, truth)?;
        }
    }
    Ok((out, report))
}

pub fn stage_infer(cfg: &ExperimentConfig, checkpoint: &Path, wav: &Path, out: &Path) -> Result<TvTrajectory> {
    let inv = load_inversion_model(cfg, checkpoint)?;
    let audio = load_wav(wav)?;
    let tv = inv.invert(&audio)?;
    tv.save_csv(out)?;
    Ok(tv)
}

/// Collects every report under `reports/` into `summary.csv`, one row per
/// checkpoint, with the checkpoint name appended as a `model` column.
pub fn stage_report(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = cfg.output.work_dir.join("reports");
    let mut rows: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let listing = std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
    for entry in listing {
        let path = entry.map_err(|e| Error::io(&dir, e))?.path();
        let name = path.file_name().and_then(|s| s.to_str()).unwrap_or("");
        if !name.ends_with(".csv") || name.ends_with("_utterances.csv") {
            continue;
        }
        let mut rdr = csv::Reader::from_path(&path)?;
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if header != crate::eval::REPORT_HEADER {
            return Err(Error::SchemaMismatch(format!("{} is not a report", path.display())));
        }
        for rec in rdr.records() {
            let mut row: Vec<String> = rec?.iter().map(str::to_string).collect();
            row.push(name.trim_end_matches(".csv").to_string());
            rows.insert(row.last().unwrap().clone(), row);
        }
    }
    let out = cfg.output.work_dir.join("summary.csv");
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(&out)?;
    let mut header: Vec<&str> = crate::eval::REPORT_HEADER.to_vec();
    header.push("model");
    w.write_record(&header)?;
    for row in rows.values() {
        w.write_record(row)?;
    }
    w.flush().map_err(|e| Error::io(&out, e))?;
    Ok(out)
}

// ---------------------------------------------------------------------------
// In-memory run

/// Synthetic corpus with auditory spectrograms cached, ready for repeated
/// reduction and training runs without touching disk.
#[derive(Debug, Clone)]
pub struct PreparedCorpus {
    pub manifest: DatasetManifest,
    pub spectrograms: BTreeMap<String, AuditorySpectrogram>,
    pub mfcc: BTreeMap<String, Vec<f64>>,
    pub truths: BTreeMap<String, TvTrajectory>,
}

impl PreparedCorpus {
    /// Generates the configured synthetic corpus and runs the front end.
    pub fn synthesize(cfg: &ExperimentConfig, ex: &FeatureExtractor) -> Result<Self> {
        let spec = cfg.synth_spec();
        let utts = crate::synth::synth_dataset(&spec)?;
        let entries = utts
            .iter()
            .map(|u| ManifestEntry {
                utt_id: u.utt_id.clone(),
                speaker_id: u.speaker_id.clone(),
                audio_path: PathBuf::from("wav").join(format!("{}.wav", u.utt_id)),
                tv_path: PathBuf::from("tv").join(format!("{}.csv", u.utt_id)),
                split: None,
            })
            .collect();
        let [a, b, c] = cfg.data.split_fractions;
        let manifest = crate::dataset::make_splits(
            &DatasetManifest::new(entries)?,
            cfg.data.split_mode,
            (a, b, c),
            spec.seed,
        )?;
        let computed = utts
            .par_iter()
            .map(|u| Ok((u.utt_id.clone(), ex.auditory(&u.audio)?, ex.mfcc(&u.audio)?)))
            .collect::<Result<Vec<_>>>()?;
        let mut out = Self {
            manifest,
            spectrograms: BTreeMap::new(),
            mfcc: BTreeMap::new(),
            truths: BTreeMap::new(),
        };
        for ((id, sp, m), u) in computed.into_iter().zip(utts) {
            out.spectrograms.insert(id.clone(), sp);
            out.mfcc.insert(id.clone(), m);
            out.truths.insert(id, u.tv);
        }
        Ok(out)
    }

    pub fn ids(&self, split: Split) -> Vec<&str> {
        self.manifest.split(split).map(|e| e.utt_id.as_str()).collect()
    }

    /// HOSVD basis from the train split.
    pub fn fit_basis(&self, ex: &FeatureExtractor, tag: &str) -> Result<HosvdBasis> {
        let dims = ex.tensor_dims();
        let parts = self
            .ids(Split::Train)
            .par_iter()
            .map(|id| {
                let mut acc = ModeCovariances::new(dims);
                acc.accumulate(&ex.cortical(&self.spectrograms[*id])?)?;
                Ok(acc)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut total = ModeCovariances::new(dims);
        for p in &parts {
            total.merge(p)?;
        }
        fit_hosvd_tagged(&total, tag)
    }

    /// Inputs and targets for one split under the given reduction settings.
    pub fn frame_set(
        &self,
        ex: &FeatureExtractor,
        split: Split,
        basis: Option<&HosvdBasis>,
        red: &ReductionSection,
    ) -> Result<FrameSet> {
        let ids = self.ids(split);
        let rows = ids
            .par_iter()
            .map(|id| match red.feature {
                FeatureKind::Cortical => {
                    let basis = basis.ok_or_else(|| Error::InvalidArgument("cortical features need a basis".into()))?;
                    cortical_inputs(&ex.cortical(&self.spectrograms[*id])?, basis, red)
                }
                FeatureKind::Mfcc => mfcc_inputs(&self.mfcc[*id], red),
            })
            .collect::<Result<Vec<_>>>()?;
        let mut set = FrameSet::new(red.input_dim());
        for (id, x) in ids.iter().zip(&rows) {
            set.push(id, x, &self.truths[*id])?;
        }
        Ok(set)
    }
}

/// Outcome of one train-and-score run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub model: InversionModel,
    pub train: TrainReport,
    pub report: EvalReport,
    /// Test score of the unsmoothed network output.
    pub raw_report: EvalReport,
}

/// Trains on the train split, tunes the smoother on dev and scores test,
/// using `reduction` in place of the configured reduction.
pub fn run_prepared(
    cfg: &ExperimentConfig,
    ex: &FeatureExtractor,
    corpus: &PreparedCorpus,
    basis: Option<&HosvdBasis>,
    reduction: &ReductionSection,
) -> Result<RunOutcome> {
    let mut cfg = cfg.clone();
    cfg.reduction = reduction.clone();
    cfg.model.input_dim = None;
    cfg.validate()?;
    let train_set = corpus.frame_set(ex, Split::Train, basis, reduction)?;
    let dev_set = corpus.frame_set(ex, Split::Dev, basis, reduction)?;
    let test_set = corpus.frame_set(ex, Split::Test, basis, reduction)?;
    let fit_set = train_set.subsample(cfg.model.max_train_frames, cfg.model.seed);
    let (model, train_report) = train::<f32>(
        &cfg.architecture(),
        &fit_set.features,
        &fit_set.targets,
        &dev_set.features,
        &dev_set.targets,
        &cfg.train_config(),
    )?;
    let mut inv = InversionModel {
        extractor: ex.clone(),
        reduction: reduction.clone(),
        basis: basis.cloned(),
        model,
        smoother: None,
    };
    let tag = reduction.feature_tag();
    let ctx = reduction.active_context();
    let (raw_report, _) = score_frame_set(&inv, &test_set, &tag, ctx)?;
    inv.smoother = Some(if cfg.eval.tune_kalman {
        tune_smoother(&inv, &dev_set, &cfg.eval.q_grid, &cfg.eval.r_grid, cfg.eval.forward_only)?
    } else {
        SmootherSettings {
            q: cfg.eval.kalman_q,
            r: cfg.eval.kalman_r,
            forward_only: cfg.eval.forward_only,
        }
    });
    let (report, _) = score_frame_set(&inv, &test_set, &tag, ctx)?;
    Ok(RunOutcome {
        model: inv,
        train: train_report,
        report,
        raw_report,
    })
}
