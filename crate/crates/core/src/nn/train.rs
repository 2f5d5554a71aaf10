//! Mini-batch training with trajectory-stratified validation, early
//! stopping, and best-epoch parameter restoration.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::model::{backward, layer_sizes, mse_loss, Mode, Model, Params, TrainMeta};
use super::optim::Adam;
use crate::features::Dataset;
use crate::geometry::wrap_angle;
use crate::seeding::child_rng;
use crate::{Error, Result};

/// Hyperparameters and bookkeeping knobs for one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Node factor `k` scaling the first hidden layer.
    pub node_factor: f64,
    /// Dropout rate `p` on hidden activations.
    pub dropout: f64,
    /// Adam learning rate `r`.
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Fraction of samples earmarked for validation (by whole trajectories).
    pub val_fraction: f64,
    pub seed: u64,
}

impl TrainConfig {
    /// Standard knobs around the given hyperparameter triple.
    pub fn new(node_factor: f64, dropout: f64, learning_rate: f64, seed: u64) -> TrainConfig {
        TrainConfig {
            node_factor,
            dropout,
            learning_rate,
            batch_size: 32,
            max_epochs: 500,
            patience: 25,
            val_fraction: 0.2,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.node_factor > 0.0 && self.node_factor <= 1.0) {
            return Err(Error::Train(format!(
                "node factor must be in (0, 1], got {}",
                self.node_factor
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Train(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Train(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Train(format!(
                "validation fraction must be in (0, 1), got {}",
                self.val_fraction
            )));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Train(
                "batch size and epoch budget must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Loss history entry; losses are mean squared position errors (m^2) in
/// inference mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
}

/// Splits sample indices into train/validation by whole trajectories, so no
/// trajectory straddles the boundary. Deterministic in the seed.
pub(crate) fn split_by_trajectory(
    dataset: &Dataset,
    val_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut traj_ids = dataset.trajectory_ids();
    if traj_ids.len() < 2 {
        return Err(Error::Train(format!(
            "trajectory-stratified split needs at least 2 trajectories, got {}",
            traj_ids.len()
        )));
    }
    let mut rng = child_rng(seed, "split", &[]);
    traj_ids.shuffle(&mut rng);
    let n_val = ((val_fraction * traj_ids.len() as f64).round() as usize)
        .max(1)
        .min(traj_ids.len() - 1);
    let val_set: std::collections::HashSet<usize> = traj_ids[..n_val].iter().copied().collect();
    let mut train_idx = Vec::new();
    let mut val_idx = Vec::new();
    for (i, s) in dataset.samples.iter().enumerate() {
        if val_set.contains(&s.traj) {
            val_idx.push(i);
        } else {
            train_idx.push(i);
        }
    }
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(Error::Train("train/validation split came up empty".into()));
    }
    Ok((train_idx, val_idx))
}

/// Per-input center/scale over the valid (unmasked) feature entries of the
/// given rows. The entries are wrapped angles, so the center is the
/// circular mean and the scale is the RMS of the re-wrapped deviations;
/// this parks each slot's wrap discontinuity at the antipode of its typical
/// value. Inputs that never appear valid, or are constant, fall back to
/// (0, 1) so standardization is a no-op there.
fn normalization_stats(dataset: &Dataset, rows: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let width = dataset.n_anchors - 1;
    let mut cos_sum = vec![0.0; width];
    let mut sin_sum = vec![0.0; width];
    let mut count = vec![0usize; width];
    for &i in rows {
        let f = &dataset.samples[i].features;
        for j in 0..width {
            if f.mask[j] {
                cos_sum[j] += f.values[j].cos();
                sin_sum[j] += f.values[j].sin();
                count[j] += 1;
            }
        }
    }
    let mean: Vec<f64> = (0..width)
        .map(|j| {
            if count[j] > 0 {
                sin_sum[j].atan2(cos_sum[j])
            } else {
                0.0
            }
        })
        .collect();
    let mut var = vec![0.0; width];
    for &i in rows {
        let f = &dataset.samples[i].features;
        for j in 0..width {
            if f.mask[j] {
                let d = wrap_angle(f.values[j] - mean[j]);
                var[j] += d * d;
            }
        }
    }
    let std = var
        .iter()
        .zip(&count)
        .map(|(&v, &c)| {
            if c == 0 {
                1.0
            } else {
                let s = (v / c as f64).sqrt();
                if s < 1e-9 {
                    1.0
                } else {
                    s
                }
            }
        })
        .collect();
    (mean, std)
}

fn mean_mse(model: &Model, dataset: &Dataset, rows: &[usize]) -> Result<f64> {
    let mut total = 0.0;
    for &i in rows {
        let s = &dataset.samples[i];
        total += mse_loss(s.label, model.predict(&s.features)?);
    }
    Ok(total / rows.len() as f64)
}

/// Trains a network on the dataset's labels (which may themselves be
/// estimates). Returns the model restored to its best-validation epoch,
/// plus the full loss history up to the stopping point.
pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<(Model, Vec<EpochStats>)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Empty("cannot train on an empty dataset".into()));
    }
    let dims = layer_sizes(dataset.n_anchors, config.node_factor)?;
    let (train_idx, val_idx) = split_by_trajectory(dataset, config.val_fraction, config.seed)?;
    let (norm_mean, norm_std) = normalization_stats(dataset, &train_idx);

    // RMS of each input as the network will see it (standardized entries
    // plus sentinels), so first-layer initialization can account for
    // sentinel-heavy slots
    let width = dataset.n_anchors - 1;
    let mut input_rms = vec![0.0; width];
    for &i in &train_idx {
        let f = &dataset.samples[i].features;
        for j in 0..width {
            let x = if f.mask[j] {
                wrap_angle(f.values[j] - norm_mean[j]) / norm_std[j]
            } else {
                crate::features::SENTINEL
            };
            input_rms[j] += x * x;
        }
    }
    for r in &mut input_rms {
        *r = (*r / train_idx.len() as f64).sqrt();
    }

    let mut init_rng = child_rng(config.seed, "init", &[]);
    let mut model = Model::new_random(
        dims,
        config.node_factor,
        dataset
            .roster_fingerprint
            .clone()
            .unwrap_or_else(|| "unrecorded".into()),
        TrainMeta {
            sigma: dataset.sigma,
            label_source: dataset
                .samples
                .first()
                .map(|s| s.label_source.as_str().to_string()),
            seed: config.seed,
        },
        Some(&input_rms),
        &mut init_rng,
    );
    model.norm_mean = norm_mean;
    model.norm_std = norm_std;
    // start the output layer at the unconditional label mean so the first
    // epochs refine structure instead of chasing the room-scale offset
    let n_train = train_idx.len() as f64;
    model.params.biases[2] = train_idx
        .iter()
        .fold(vec![0.0, 0.0], |mut acc, &i| {
            acc[0] += dataset.samples[i].label.x / n_train;
            acc[1] += dataset.samples[i].label.y / n_train;
            acc
        });

    let mut adam = Adam::new(dims);
    let mut epoch_rng = child_rng(config.seed, "epochs", &[]);
    let mut order = train_idx.clone();
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, Params)> = None;
    let mut stale_epochs = 0usize;

    for epoch in 0..config.max_epochs {
        order.shuffle(&mut epoch_rng);
        for batch in order.chunks(config.batch_size) {
            let mut grads = Params::zeros(dims);
            for &i in batch {
                let s = &dataset.samples[i];
                let (_, cache) = model.forward(
                    &s.features,
                    Mode::Train {
                        dropout: config.dropout,
                        rng: &mut epoch_rng,
                    },
                )?;
                let g = backward(&model, &cache, s.label)?;
                grads.add_scaled(&g, 1.0 / batch.len() as f64);
            }
            adam.step(&mut model.params, &grads, config.learning_rate)?;
        }
        let train_mse = mean_mse(&model, dataset, &train_idx)?;
        let val_mse = mean_mse(&model, dataset, &val_idx)?;
        if !train_mse.is_finite() || !val_mse.is_finite() {
            return Err(Error::Train(format!(
                "loss diverged at epoch {epoch}: train {train_mse}, val {val_mse}"
            )));
        }
        history.push(EpochStats {
            epoch,
            train_mse,
            val_mse,
        });
        if best.as_ref().map_or(true, |(b, _, _)| val_mse < *b) {
            best = Some((val_mse, epoch, model.params.clone()));
            stale_epochs = 0;
        } else {
            stale_epochs += 1;
            if stale_epochs >= config.patience {
                break;
            }
        }
    }

    let (_, _, best_params) = best.expect("at least one epoch ran");
    model.params = best_params;
    Ok((model, history))
}

/// Validation MSE of the best epoch in a history.
pub fn best_val_mse(history: &[EpochStats]) -> Option<(f64, usize)> {
    history
        .iter()
        .map(|e| (e.val_mse, e.epoch))
        .min_by(|a, b| a.0.total_cmp(&b.0))
}
