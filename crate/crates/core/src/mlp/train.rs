use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{adam_step, init_mlp, AdamState, ForwardMode, MlpArchitecture, MlpModel, Normalization, Real};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            max_epochs: 100,
            learning_rate: 1e-3,
            patience: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean batch loss with dropout active, normalized target space.
    pub train_mse: f64,
    /// Eval-mode loss on the dev set, normalized target space.
    pub dev_mse: f64,
    pub seconds: f64,
}

impl PartialEq for EpochStats {
    /// Wall time is excluded.
    fn eq(&self, other: &Self) -> bool {
        self.epoch == other.epoch && self.train_mse == other.train_mse && self.dev_mse == other.dev_mse
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: usize,
    pub best_dev_mse: f64,
    pub stopped_early: bool,
}

/// `epoch,train_mse,dev_mse,seconds`
pub fn write_train_log<W: Write>(report: &TrainReport, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["epoch", "train_mse", "dev_mse", "seconds"])?;
    for e in &report.epochs {
        wr.write_record([
            e.epoch.to_string(),
            format!("{:.8}", e.train_mse),
            format!("{:.8}", e.dev_mse),
            format!("{:.3}", e.seconds),
        ])?;
    }
    wr.flush().map_err(|e| Error::io("<train log>", e))
}

fn eval_mse<T: Real>(model: &MlpModel<T>, x: &[T], y: &[T], batch: usize) -> Result<f64> {
    let d = model.arch.input_dim;
    let o = model.arch.output_dim;
    let n = x.len() / d;
    let mut total = 0.0;
    for start in (0..n).step_by(batch.max(1)) {
        let end = (start + batch).min(n);
        let out = model.forward_normalized(&x[start * d..end * d], ForwardMode::Eval)?;
        total += out
            .iter()
            .zip(&y[start * o..end * o])
            .map(|(a, b)| (*a - *b).as_f64().powi(2))
            .sum::<f64>();
    }
    Ok(total / (n * o) as f64)
}

/// Trains a fresh network on row-major features/targets. Normalization
/// statistics come from the training set; the weights with the lowest dev
/// loss are returned.
#[allow(clippy::too_many_arguments)]
pub fn train<T: Real>(
    arch: &MlpArchitecture,
    train_x: &[f64],
    train_y: &[f64],
    dev_x: &[f64],
    dev_y: &[f64],
    cfg: &TrainConfig,
) -> Result<(MlpModel<T>, TrainReport)> {
    let d = arch.input_dim;
    let o = arch.output_dim;
    if train_x.len() % d != 0 || dev_x.len() % d != 0 {
        return Err(Error::ShapeMismatch(format!("feature rows are not {d} wide")));
    }
    let n = train_x.len() / d;
    let n_dev = dev_x.len() / d;
    if train_y.len() != n * o || dev_y.len() != n_dev * o {
        return Err(Error::ShapeMismatch("feature and target row counts differ".into()));
    }
    if n == 0 || n_dev == 0 {
        return Err(Error::InvalidArgument("training and dev sets must be non-empty".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }

    let mut model: MlpModel<T> = init_mlp(arch, cfg.seed)?;
    model.feature_norm = Normalization::fit(train_x, d);
    model.target_norm = Normalization::fit(train_y, o);
    let tx = model.feature_norm.apply(train_x);
    let ty = model.target_norm.apply(train_y);
    let dx = model.feature_norm.apply(dev_x);
    let dy = model.target_norm.apply(dev_y);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f_ba7c4);
    let mut adam = AdamState::new(model.param_count(), cfg.learning_rate);
    let mut order: Vec<usize> = (0..n).collect();
    let mut bx = Vec::with_capacity(cfg.batch_size * d);
    let mut by = Vec::with_capacity(cfg.batch_size * o);

    let mut best_params = model.params.clone();
    let mut best_dev = f64::INFINITY;
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut epochs = Vec::new();
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut n_batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            bx.clear();
            by.clear();
            for &i in chunk {
                bx.extend_from_slice(&tx[i * d..(i + 1) * d]);
                by.extend_from_slice(&ty[i * o..(i + 1) * o]);
            }
            let (loss, grads) = model.loss_and_grads_normalized(&bx, &by, ForwardMode::Train(rng.next_u64()))?;
            let loss = loss.as_f64();
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged(format!("non-finite loss at epoch {epoch}")));
            }
            adam_step(&mut adam, &mut model.params, &grads);
            loss_sum += loss;
            n_batches += 1;
        }
        let dev_mse = eval_mse(&model, &dx, &dy, 1024)?;
        if !dev_mse.is_finite() {
            return Err(Error::Diverged(format!("non-finite dev loss at epoch {epoch}")));
        }
        let stats = EpochStats {
            epoch,
            train_mse: loss_sum / n_batches as f64,
            dev_mse,
            seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: train {:.5} dev {:.5} ({:.1}s)",
            stats.train_mse,
            stats.dev_mse,
            stats.seconds
        );
        epochs.push(stats);
        if dev_mse < best_dev {
            best_dev = dev_mse;
            best_epoch = epoch;
            best_params.copy_from_slice(&model.params);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > cfg.patience {
                stopped_early = true;
                break;
            }
        }
    }
    model.params = best_params;
    model.provenance.epochs = best_epoch as u32;
    Ok((
        model,
        TrainReport {
            epochs,
            best_epoch,
            best_dev_mse: best_dev,
            stopped_early,
        },
    ))
}
