//! Per-mode HOSVD of cortical frame tensors.
//!
//! Each frame is a `scale × rate × frequency` tensor. Rather than
//! concatenating every training frame into one large tensor, the mode-n
//! unfoldings' Gram matrices are accumulated frame by frame: the left
//! singular vectors of an unfolding are the eigenvectors of its Gram matrix,
//! and the eigenvalues are the squared singular values. Bases fit this way
//! project each frame to a truncated core
//! `T ×₁ U_sᵀ ×₂ U_rᵀ ×₃ U_fᵀ` and reconstruct with the untransposed bases.

use std::io::Write;
use std::path::Path;

use crate::cortical::CorticalSequence;
use crate::error::{Error, Result};
use crate::ftc::{self, FtcData, FtcTensor};
use crate::linalg::{dgemm, symmetric_eigen};

pub const MODE_NAMES: [&str; 3] = ["scale", "rate", "frequency"];

/// Gram matrices of the three mode unfoldings, summed over frames.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeCovariances {
    pub dims: [usize; 3],
    /// Row-major `dims[m] × dims[m]` per mode.
    pub matrices: [Vec<f64>; 3],
    pub frame_count: u64,
}

impl ModeCovariances {
    pub fn new(dims: [usize; 3]) -> Self {
        Self {
            dims,
            matrices: [
                vec![0.0; dims[0] * dims[0]],
                vec![0.0; dims[1] * dims[1]],
                vec![0.0; dims[2] * dims[2]],
            ],
            frame_count: 0,
        }
    }

    fn frame_len(&self) -> usize {
        self.dims.iter().product()
    }

    /// Adds `unfold_m(T) unfold_m(T)ᵀ` for every frame in `frames`
    /// (row-major `n × dims`).
    pub fn accumulate_frames(&mut self, frames: &[f64]) -> Result<()> {
        let len = self.frame_len();
        if frames.len() % len != 0 {
            return Err(Error::ShapeMismatch(format!(
                "{} values do not fill {:?} frames",
                frames.len(),
                self.dims
            )));
        }
        let n = frames.len() / len;
        if n == 0 {
            return Ok(());
        }
        let [ns, nr, nf] = self.dims;
        // frequency mode: all frames stacked as (n·ns·nr) × nf, C_f += BᵀB
        dgemm(nf, n * ns * nr, nf, 1.0, frames, true, frames, false, 1.0, &mut self.matrices[2]);
        for frame in frames.chunks_exact(len) {
            // scale mode: frame is ns × (nr·nf)
            dgemm(ns, nr * nf, ns, 1.0, frame, false, frame, true, 1.0, &mut self.matrices[0]);
            // rate mode: sum over scales of the nr × nf slices
            for slice in frame.chunks_exact(nr * nf) {
                dgemm(nr, nf, nr, 1.0, slice, false, slice, true, 1.0, &mut self.matrices[1]);
            }
        }
        self.frame_count += n as u64;
        Ok(())
    }

    pub fn accumulate(&mut self, seq: &CorticalSequence) -> Result<()> {
        if seq.dims != self.dims {
            return Err(Error::ShapeMismatch(format!(
                "sequence frames {:?}, accumulator expects {:?}",
                seq.dims, self.dims
            )));
        }
        self.accumulate_frames(&seq.data)
    }

    /// Adds another partial accumulator.
    pub fn merge(&mut self, other: &ModeCovariances) -> Result<()> {
        if other.dims != self.dims {
            return Err(Error::ShapeMismatch("accumulator dims differ".into()));
        }
        for (a, b) in self.matrices.iter_mut().zip(&other.matrices) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        self.frame_count += other.frame_count;
        Ok(())
    }

    pub fn traces(&self) -> [f64; 3] {
        let mut t = [0.0; 3];
        for m in 0..3 {
            let d = self.dims[m];
            t[m] = (0..d).map(|i| self.matrices[m][i * d + i]).sum();
        }
        t
    }
}

/// Functional form of [`ModeCovariances::accumulate`].
pub fn accumulate_mode_covariances(seq: &CorticalSequence, mut acc: ModeCovariances) -> Result<ModeCovariances> {
    acc.accumulate(seq)?;
    Ok(acc)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeBasis {
    pub dim: usize,
    /// Row-major `dim × dim`, eigenvectors in columns.
    pub vectors: Vec<f64>,
    /// Descending.
    pub eigenvalues: Vec<f64>,
}

impl ModeBasis {
    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.dim).map(|i| self.vectors[i * self.dim + j]).collect()
    }

    /// Leading `k` columns as a row-major `dim × k` matrix.
    pub fn leading(&self, k: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim * k);
        for i in 0..self.dim {
            out.extend_from_slice(&self.vectors[i * self.dim..i * self.dim + k]);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HosvdBasis {
    pub modes: [ModeBasis; 3],
    pub frame_count: u64,
    pub config_hash: String,
}

pub fn fit_hosvd(acc: &ModeCovariances) -> Result<HosvdBasis> {
    fit_hosvd_tagged(acc, "")
}

pub fn fit_hosvd_tagged(acc: &ModeCovariances, config_hash: &str) -> Result<HosvdBasis> {
    if acc.frame_count == 0 {
        return Err(Error::InvalidArgument("no frames accumulated".into()));
    }
    let modes = std::array::from_fn(|m| {
        let d = acc.dims[m];
        let e = symmetric_eigen(&acc.matrices[m], d);
        ModeBasis {
            dim: d,
            vectors: e.vectors,
            eigenvalues: e.values,
        }
    });
    Ok(HosvdBasis {
        modes,
        frame_count: acc.frame_count,
        config_hash: config_hash.to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Scale = 0,
    Rate = 1,
    Frequency = 2,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Scale, Mode::Rate, Mode::Frequency];

    pub fn name(self) -> &'static str {
        MODE_NAMES[self as usize]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeSpectrum {
    pub mode: Mode,
    pub eigenvalues: Vec<f64>,
    /// `λ_j / Σ_k λ_k`, after clamping negative round-off to zero.
    pub alpha: Vec<f64>,
}

pub fn pc_energy(basis: &HosvdBasis, mode: Mode) -> Result<ModeSpectrum> {
    let ev = &basis.modes[mode as usize].eigenvalues;
    let clamped: Vec<f64> = ev.iter().map(|v| v.max(0.0)).collect();
    let total: f64 = clamped.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidValue(format!("{} mode spectrum is all zero", mode.name())));
    }
    Ok(ModeSpectrum {
        mode,
        eigenvalues: ev.clone(),
        alpha: clamped.iter().map(|v| v / total).collect(),
    })
}

/// Writes the `mode,index,eigenvalue,alpha` energy report.
pub fn write_energy_csv<W: Write>(basis: &HosvdBasis, w: W) -> Result<()> {
    let mut wr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    wr.write_record(["mode", "index", "eigenvalue", "alpha"])?;
    for mode in Mode::ALL {
        let spec = pc_energy(basis, mode)?;
        for (j, (ev, a)) in spec.eigenvalues.iter().zip(&spec.alpha).enumerate() {
            wr.write_record([mode.name().to_string(), j.to_string(), format!("{ev:e}"), format!("{a:e}")])?;
        }
    }
    wr.flush().map_err(|e| Error::io("<energy csv>", e))?;
    Ok(())
}

/// Per-frame cores of a truncated projection.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedSequence {
    pub n_frames: usize,
    pub trunc: [usize; 3],
    /// Row-major `n_frames × k_s × k_r × k_f`.
    pub data: Vec<f64>,
    pub basis_hash: String,
}

impl ReducedSequence {
    pub fn frame_len(&self) -> usize {
        self.trunc.iter().product()
    }
}

fn check_trunc(basis: &HosvdBasis, trunc: [usize; 3]) -> Result<()> {
    for m in 0..3 {
        if trunc[m] == 0 || trunc[m] > basis.modes[m].dim {
            return Err(Error::InvalidArgument(format!(
                "truncation {trunc:?} outside 1..={} for the {} mode",
                basis.modes[m].dim, MODE_NAMES[m]
            )));
        }
    }
    Ok(())
}

/// `core = T ×₁ U_s[:, :k_s]ᵀ ×₂ U_r[:, :k_r]ᵀ ×₃ U_f[:, :k_f]ᵀ` per frame.
pub fn project(seq: &CorticalSequence, basis: &HosvdBasis, trunc: [usize; 3]) -> Result<ReducedSequence> {
    let dims = [basis.modes[0].dim, basis.modes[1].dim, basis.modes[2].dim];
    if seq.dims != dims {
        return Err(Error::ShapeMismatch(format!(
            "sequence frames {:?} do not match basis {dims:?}",
            seq.dims
        )));
    }
    check_trunc(basis, trunc)?;
    let [ns, nr, nf] = dims;
    let [ks, kr, kf] = trunc;
    let n = seq.n_frames;
    let us = basis.modes[0].leading(ks);
    let ur = basis.modes[1].leading(kr);
    let uf = basis.modes[2].leading(kf);

    // frequency mode for all frames at once: (n·ns·nr) × nf times nf × kf
    let mut x1 = vec![0.0; n * ns * nr * kf];
    dgemm(n * ns * nr, nf, kf, 1.0, &seq.data, false, &uf, false, 0.0, &mut x1);
    let mut data = vec![0.0; n * ks * kr * kf];
    let mut x2 = vec![0.0; ns * kr * kf];
    for t in 0..n {
        let f1 = &x1[t * ns * nr * kf..(t + 1) * ns * nr * kf];
        for s in 0..ns {
            // U_rᵀ (kr × nr) times the nr × kf slice
            dgemm(
                kr,
                nr,
                kf,
                1.0,
                &ur,
                true,
                &f1[s * nr * kf..(s + 1) * nr * kf],
                false,
                0.0,
                &mut x2[s * kr * kf..(s + 1) * kr * kf],
            );
        }
        // U_sᵀ (ks × ns) times ns × (kr·kf)
        dgemm(ks, ns, kr * kf, 1.0, &us, true, &x2, false, 0.0, &mut data[t * ks * kr * kf..(t + 1) * ks * kr * kf]);
    }
    Ok(ReducedSequence {
        n_frames: n,
        trunc,
        data,
        basis_hash: basis.config_hash.clone(),
    })
}

/// `T̂ = core ×₁ U_s[:, :k_s] ×₂ U_r[:, :k_r] ×₃ U_f[:, :k_f]` per frame.
pub fn reconstruct(red: &ReducedSequence, basis: &HosvdBasis) -> Result<CorticalSequence> {
    check_trunc(basis, red.trunc)?;
    if red.basis_hash != basis.config_hash {
        return Err(Error::Provenance(format!(
            "reduced sequence from basis {:?}, reconstructing with {:?}",
            red.basis_hash, basis.config_hash
        )));
    }
    let dims = [basis.modes[0].dim, basis.modes[1].dim, basis.modes[2].dim];
    let [ns, nr, nf] = dims;
    let [ks, kr, kf] = red.trunc;
    let n = red.n_frames;
    let us = basis.modes[0].leading(ks);
    let ur = basis.modes[1].leading(kr);
    let uf = basis.modes[2].leading(kf);

    let mut x2 = vec![0.0; n * ns * nr * kf];
    let mut y1 = vec![0.0; ns * kr * kf];
    for t in 0..n {
        let core = &red.data[t * ks * kr * kf..(t + 1) * ks * kr * kf];
        // U_s (ns × ks) times ks × (kr·kf)
        dgemm(ns, ks, kr * kf, 1.0, &us, false, core, false, 0.0, &mut y1);
        let out = &mut x2[t * ns * nr * kf..(t + 1) * ns * nr * kf];
        for s in 0..ns {
            dgemm(
                nr,
                kr,
                kf,
                1.0,
                &ur,
                false,
                &y1[s * kr * kf..(s + 1) * kr * kf],
                false,
                0.0,
                &mut out[s * nr * kf..(s + 1) * nr * kf],
            );
        }
    }
    let mut data = vec![0.0; n * ns * nr * nf];
    dgemm(n * ns * nr, kf, nf, 1.0, &x2, false, &uf, true, 0.0, &mut data);
    CorticalSequence::from_frames(dims, data)
}

/// Stacks each frame with its neighbours `t - c/2 ..= t + c/2` (edges
/// replicated), in time order; row-major `n_frames × (frame_dim·context)`.
pub fn stack_context(frames: &[f64], frame_dim: usize, context: usize) -> Result<Vec<f64>> {
    if context % 2 == 0 {
        return Err(Error::InvalidArgument(format!("context {context} must be odd")));
    }
    if frame_dim == 0 || frames.is_empty() || frames.len() % frame_dim != 0 {
        return Err(Error::InvalidArgument("empty or ragged frame sequence".into()));
    }
    let n = frames.len() / frame_dim;
    let half = (context / 2) as isize;
    let mut out = Vec::with_capacity(n * frame_dim * context);
    for t in 0..n as isize {
        for o in -half..=half {
            let src = (t + o).clamp(0, n as isize - 1) as usize;
            out.extend_from_slice(&frames[src * frame_dim..(src + 1) * frame_dim]);
        }
    }
    Ok(out)
}

/// Row-major `time × (k_s·k_r·k_f·context)` regressor inputs.
pub fn vectorize_with_context(red: &ReducedSequence, context: usize) -> Result<Vec<f64>> {
    if red.n_frames == 0 {
        return Err(Error::InvalidArgument("empty reduced sequence".into()));
    }
    stack_context(&red.data, red.frame_len(), context)
}

/// Saves the basis as six FTC records: `<mode>.U` and `<mode>.lambda` for
/// each mode.
pub fn save_basis(basis: &HosvdBasis, path: &Path) -> Result<()> {
    let mut records = Vec::new();
    for (m, mb) in basis.modes.iter().enumerate() {
        let d = mb.dim as u64;
        for (part, dims, data) in [
            ("U", vec![d, d], mb.vectors.clone()),
            ("lambda", vec![d], mb.eigenvalues.clone()),
        ] {
            records.push(
                FtcTensor::new(dims, FtcData::F64(data))?
                    .with_meta("section", format!("{}.{part}", MODE_NAMES[m]))
                    .with_meta("frame_count", basis.frame_count)
                    .with_meta("provenance", &basis.config_hash),
            );
        }
    }
    ftc::write_file(path, &records)
}

pub fn load_basis(path: &Path) -> Result<HosvdBasis> {
    let records = ftc::read_file(path)?;
    let find = |section: String| -> Result<&FtcTensor> {
        records
            .iter()
            .find(|r| r.meta("section") == Some(section.as_str()))
            .ok_or_else(|| Error::Corrupt(format!("basis file lacks section {section}")))
    };
    let mut modes = Vec::with_capacity(3);
    let mut hash = None;
    let mut frames = 0;
    for name in MODE_NAMES {
        let u = find(format!("{name}.U"))?;
        let l = find(format!("{name}.lambda"))?;
        let d = l.dims.first().copied().unwrap_or(0) as usize;
        if u.dims != [d as u64, d as u64] {
            return Err(Error::Corrupt(format!("{name} basis is not {d}×{d}")));
        }
        hash.get_or_insert_with(|| u.meta("provenance").unwrap_or("").to_string());
        frames = u.meta("frame_count").and_then(|v| v.parse().ok()).unwrap_or(0);
        modes.push(ModeBasis {
            dim: d,
            vectors: u.data.to_f64(),
            eigenvalues: l.data.to_f64(),
        });
    }
    let modes: [ModeBasis; 3] = modes.try_into().unwrap();
    Ok(HosvdBasis {
        modes,
        frame_count: frames,
        config_hash: hash.unwrap_or_default(),
    })
}
