//! Feed-forward regressor from contextualized features to the six tract
//! variables: affine layers with ReLU hidden units, identity output, inverted
//! dropout, z-score normalization of inputs and targets, Adam training.

mod adam;
mod checkpoint;
mod train;

use std::fmt::Debug;

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::linalg::{dgemm, sgemm};
use crate::tv::{TvTrajectory, N_TV};

pub use adam::{adam_step, AdamState};
pub use checkpoint::{decode_model, encode_model, load_model, save_model, MAGIC as CHECKPOINT_MAGIC};
pub use train::{train, write_train_log, EpochStats, TrainConfig, TrainReport};

/// Floor for normalization standard deviations.
pub const STD_FLOOR: f64 = 1e-8;

/// Scalar type the network computes in.
pub trait Real: Float + Default + Debug + Send + Sync + 'static {
    #[allow(clippy::too_many_arguments)]
    fn gemm(m: usize, k: usize, n: usize, a: &[Self], ta: bool, b: &[Self], tb: bool, beta: Self, c: &mut [Self]);
    fn lit(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    fn gemm(m: usize, k: usize, n: usize, a: &[f32], ta: bool, b: &[f32], tb: bool, beta: f32, c: &mut [f32]) {
        sgemm(m, k, n, 1.0, a, ta, b, tb, beta, c)
    }
    fn lit(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn gemm(m: usize, k: usize, n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool, beta: f64, c: &mut [f64]) {
        dgemm(m, k, n, 1.0, a, ta, b, tb, beta, c)
    }
    fn lit(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlpArchitecture {
    pub input_dim: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub output_dim: usize,
    pub dropout_input: f64,
    pub dropout_hidden: f64,
}

impl MlpArchitecture {
    pub fn new(input_dim: usize, hidden_layers: usize, hidden_width: usize) -> Self {
        Self {
            input_dim,
            hidden_layers,
            hidden_width,
            output_dim: N_TV,
            dropout_input: 0.1,
            dropout_hidden: 0.2,
        }
    }

    pub fn without_dropout(mut self) -> Self {
        self.dropout_input = 0.0;
        self.dropout_hidden = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_width == 0 || self.output_dim == 0 {
            return Err(Error::InvalidArgument("layer widths must be positive".into()));
        }
        for p in [self.dropout_input, self.dropout_hidden] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::InvalidArgument(format!("dropout {p} outside [0, 1)")));
            }
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every affine layer, input to output.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_layers + 1);
        let mut prev = self.input_dim;
        for _ in 0..self.hidden_layers {
            dims.push((prev, self.hidden_width));
            prev = self.hidden_width;
        }
        dims.push((prev, self.output_dim));
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub fan_in: usize,
    pub fan_out: usize,
    /// Offset of the row-major `fan_in × fan_out` weights in the parameter vector.
    pub weight_offset: usize,
    pub bias_offset: usize,
}

fn layout(arch: &MlpArchitecture) -> Vec<LayerShape> {
    let mut off = 0;
    arch.layer_dims()
        .into_iter()
        .map(|(fan_in, fan_out)| {
            let s = LayerShape {
                fan_in,
                fan_out,
                weight_offset: off,
                bias_offset: off + fan_in * fan_out,
            };
            off += fan_in * fan_out + fan_out;
            s
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Normalization<T> {
    pub mean: Vec<T>,
    pub std: Vec<T>,
}

impl<T: Real> Normalization<T> {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![T::zero(); dim],
            std: vec![T::one(); dim],
        }
    }

    /// Per-column mean and (population) standard deviation of a row-major
    /// matrix, std floored at [`STD_FLOOR`].
    pub fn fit(rows: &[f64], dim: usize) -> Self {
        let n = (rows.len() / dim).max(1) as f64;
        let mut mean = vec![0.0; dim];
        for row in rows.chunks_exact(dim) {
            mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for row in rows.chunks_exact(dim) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        Self {
            mean: mean.iter().map(|m| T::lit(*m)).collect(),
            std: var
                .iter()
                .map(|s| T::lit((s / n).sqrt().max(STD_FLOOR)))
                .collect(),
        }
    }

    pub fn apply(&self, rows: &[f64]) -> Vec<T> {
        let dim = self.mean.len();
        rows.chunks_exact(dim)
            .flat_map(|row| {
                row.iter()
                    .zip(&self.mean)
                    .zip(&self.std)
                    .map(|((v, m), s)| (T::lit(*v) - *m) / *s)
            })
            .collect()
    }

    pub fn invert(&self, rows: &[T]) -> Vec<f64> {
        let dim = self.mean.len();
        rows.chunks_exact(dim)
            .flat_map(|row| row.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| (*v * *s + *m).as_f64()))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Provenance {
    pub seed: u64,
    pub epochs: u32,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel<T> {
    pub arch: MlpArchitecture,
    pub params: Vec<T>,
    pub layers: Vec<LayerShape>,
    pub feature_norm: Normalization<T>,
    pub target_norm: Normalization<T>,
    pub provenance: Provenance,
}

/// He-normal weights for ReLU layers, fan-in scaled normal for the output
/// layer, zero biases.
pub fn init_mlp<T: Real>(arch: &MlpArchitecture, seed: u64) -> Result<MlpModel<T>> {
    arch.validate()?;
    let layers = layout(arch);
    let mut params = vec![T::zero(); arch.param_count()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_layers = layers.len();
    for (l, shape) in layers.iter().enumerate() {
        let gain = if l + 1 == n_layers { 1.0 } else { 2.0 };
        let normal = Normal::new(0.0, (gain / shape.fan_in as f64).sqrt()).unwrap();
        for w in &mut params[shape.weight_offset..shape.bias_offset] {
            *w = T::lit(normal.sample(&mut rng));
        }
    }
    Ok(MlpModel {
        arch: *arch,
        params,
        layers,
        feature_norm: Normalization::identity(arch.input_dim),
        target_norm: Normalization::identity(arch.output_dim),
        provenance: Provenance {
            seed,
            ..Provenance::default()
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardMode {
    Eval,
    /// Dropout active; masks drawn from a generator seeded with this value.
    Train(u64),
}

/// Activations of one forward pass, kept for back-propagation.
struct Trace<T> {
    /// Input to each affine layer (post-dropout), row-major `n × fan_in`.
    inputs: Vec<Vec<T>>,
    /// Pre-activations of hidden layers.
    pre: Vec<Vec<T>>,
    /// Scaled dropout masks (`0` or `1/(1-p)`) applied to each layer input.
    masks: Vec<Option<Vec<T>>>,
    output: Vec<T>,
}

fn dropout_mask<T: Real, R: Rng>(len: usize, p: f64, rng: &mut R) -> Vec<T> {
    let keep = T::lit(1.0 / (1.0 - p));
    (0..len)
        .map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep })
        .collect()
}

impl<T: Real> MlpModel<T> {
    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn weights(&self, layer: usize) -> &[T] {
        let s = self.layers[layer];
        &self.params[s.weight_offset..s.bias_offset]
    }

    pub fn bias(&self, layer: usize) -> &[T] {
        let s = self.layers[layer];
        &self.params[s.bias_offset..s.bias_offset + s.fan_out]
    }

    fn check_width(&self, len: usize) -> Result<usize> {
        if len % self.arch.input_dim != 0 {
            return Err(Error::ShapeMismatch(format!(
                "batch of {len} values is not a multiple of input width {}",
                self.arch.input_dim
            )));
        }
        Ok(len / self.arch.input_dim)
    }

    /// Runs the network on already-normalized inputs.
    fn trace(&self, x: &[T], n: usize, mode: ForwardMode) -> Trace<T> {
        let mut rng = match mode {
            ForwardMode::Train(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
            ForwardMode::Eval => None,
        };
        let n_layers = self.layers.len();
        let mut inputs = Vec::with_capacity(n_layers);
        let mut pre = Vec::with_capacity(n_layers - 1);
        let mut masks = Vec::with_capacity(n_layers);
        let mut current = x.to_vec();
        for (l, shape) in self.layers.iter().enumerate() {
            let p = if l == 0 { self.arch.dropout_input } else { self.arch.dropout_hidden };
            let mask = match rng.as_mut() {
                Some(r) if p > 0.0 => {
                    let m: Vec<T> = dropout_mask(current.len(), p, r);
                    current.iter_mut().zip(&m).for_each(|(v, k)| *v = *v * *k);
                    Some(m)
                }
                _ => None,
            };
            masks.push(mask);
            let mut z = Vec::with_capacity(n * shape.fan_out);
            for _ in 0..n {
                z.extend_from_slice(self.bias(l));
            }
            T::gemm(n, shape.fan_in, shape.fan_out, &current, false, self.weights(l), false, T::one(), &mut z);
            inputs.push(std::mem::take(&mut current));
            if l + 1 < n_layers {
                current = z.iter().map(|v| v.max(T::zero())).collect();
                pre.push(z);
            } else {
                current = z;
            }
        }
        Trace {
            inputs,
            pre,
            masks,
            output: current,
        }
    }

    /// Network output in normalized target space for normalized inputs.
    pub fn forward_normalized(&self, x: &[T], mode: ForwardMode) -> Result<Vec<T>> {
        let n = self.check_width(x.len())?;
        Ok(self.trace(x, n, mode).output)
    }

    /// Maps raw features (row-major `n × input_dim`) to tract variables in
    /// physical units.
    pub fn forward(&self, batch: &[f64], mode: ForwardMode) -> Result<Vec<f64>> {
        self.check_width(batch.len())?;
        let x = self.feature_norm.apply(batch);
        let y = self.forward_normalized(&x, mode)?;
        Ok(self.target_norm.invert(&y))
    }

    /// Which hidden units are active (pre-activation > 0) for raw inputs,
    /// layer by layer and row by row. Finite-difference checks use this to
    /// detect perturbations that cross a ReLU kink.
    pub fn relu_pattern(&self, batch: &[f64], mode: ForwardMode) -> Result<Vec<bool>> {
        let n = self.check_width(batch.len())?;
        let x = self.feature_norm.apply(batch);
        let tr = self.trace(&x, n, mode);
        Ok(tr.pre.iter().flatten().map(|z| *z > T::zero()).collect())
    }

    /// Hidden-layer pre-activations for raw inputs, one vector per layer.
    pub fn preactivations(&self, batch: &[f64], mode: ForwardMode) -> Result<Vec<Vec<f64>>> {
        let n = self.check_width(batch.len())?;
        let x = self.feature_norm.apply(batch);
        let tr = self.trace(&x, n, mode);
        Ok(tr.pre.iter().map(|l| l.iter().map(|v| v.as_f64()).collect()).collect())
    }

    /// Mean squared error over all `n × 6` entries in normalized target space
    /// and its gradient with respect to every parameter. Inputs and targets
    /// are already normalized.
    pub fn loss_and_grads_normalized(&self, x: &[T], targets: &[T], mode: ForwardMode) -> Result<(T, Vec<T>)> {
        let n = self.check_width(x.len())?;
        let out_dim = self.arch.output_dim;
        if targets.len() != n * out_dim {
            return Err(Error::ShapeMismatch(format!(
                "{} targets for {n} rows of {out_dim} outputs",
                targets.len()
            )));
        }
        let tr = self.trace(x, n, mode);
        let count = T::lit((n * out_dim) as f64);
        let mut loss = T::zero();
        let two = T::lit(2.0);
        let mut delta: Vec<T> = tr
            .output
            .iter()
            .zip(targets)
            .map(|(y, t)| {
                let r = *y - *t;
                loss = loss + r * r;
                two * r / count
            })
            .collect();
        loss = loss / count;

        let mut grads = vec![T::zero(); self.params.len()];
        for l in (0..self.layers.len()).rev() {
            let s = self.layers[l];
            let (gw, gb) = grads[s.weight_offset..s.bias_offset + s.fan_out].split_at_mut(s.fan_in * s.fan_out);
            T::gemm(s.fan_in, n, s.fan_out, &tr.inputs[l], true, &delta, false, T::zero(), gw);
            for row in delta.chunks_exact(s.fan_out) {
                gb.iter_mut().zip(row).for_each(|(g, d)| *g = *g + *d);
            }
            if l == 0 {
                break;
            }
            // gradient w.r.t. this layer's input, back through dropout and ReLU
            let mut upstream = vec![T::zero(); n * s.fan_in];
            T::gemm(n, s.fan_out, s.fan_in, &delta, false, self.weights(l), true, T::zero(), &mut upstream);
            if let Some(mask) = &tr.masks[l] {
                upstream.iter_mut().zip(mask).for_each(|(g, m)| *g = *g * *m);
            }
            for (g, z) in upstream.iter_mut().zip(&tr.pre[l - 1]) {
                if *z <= T::zero() {
                    *g = T::zero();
                }
            }
            delta = upstream;
        }
        Ok((loss, grads))
    }

    /// Loss and gradients for raw features and raw targets.
    pub fn loss_and_grads(&self, batch: &[f64], targets: &[f64], mode: ForwardMode) -> Result<(f64, Vec<T>)> {
        self.check_width(batch.len())?;
        let x = self.feature_norm.apply(batch);
        if targets.len() % self.arch.output_dim != 0 {
            return Err(Error::ShapeMismatch("ragged target matrix".into()));
        }
        let t = self.target_norm.apply(targets);
        let (loss, grads) = self.loss_and_grads_normalized(&x, &t, mode)?;
        Ok((loss.as_f64(), grads))
    }

    /// Eval-mode inference on `T × input_dim` features.
    pub fn predict(&self, features: &[f64]) -> Result<TvTrajectory> {
        if features.is_empty() {
            return Ok(TvTrajectory::empty());
        }
        if self.arch.output_dim != N_TV {
            return Err(Error::ShapeMismatch(format!("model has {} outputs", self.arch.output_dim)));
        }
        TvTrajectory::new(self.forward(features, ForwardMode::Eval)?)
    }
}
