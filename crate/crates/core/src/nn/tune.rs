//! Exhaustive hyperparameter search over (node factor, dropout, learning
//! rate), scored by best-epoch validation MSE on a shared split.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{layer_sizes, LayerDims, Model};
use super::train::{best_val_mse, train, TrainConfig};
use crate::features::Dataset;
use crate::{Error, Result};

/// The 21-point learning-rate ladder: ten multiplicative steps per decade
/// from 1e-4 to 1e-2, both endpoints included.
pub fn learning_rate_ladder() -> Vec<f64> {
    (0..=20).map(|i| 10f64.powf(-4.0 + i as f64 / 10.0)).collect()
}

/// Search space; the default reproduces the full 3 x 3 x 21 grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneGrid {
    pub node_factors: Vec<f64>,
    pub dropouts: Vec<f64>,
    pub learning_rates: Vec<f64>,
}

impl Default for TuneGrid {
    fn default() -> Self {
        TuneGrid {
            node_factors: vec![0.6, 0.7, 0.8],
            dropouts: vec![0.0, 0.05, 0.10],
            learning_rates: learning_rate_ladder(),
        }
    }
}

impl TuneGrid {
    pub fn len(&self) -> usize {
        self.node_factors.len() * self.dropouts.len() * self.learning_rates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn combos(&self, seed: u64) -> Vec<TrainConfig> {
        let mut out = Vec::with_capacity(self.len());
        for &k in &self.node_factors {
            for &p in &self.dropouts {
                for &r in &self.learning_rates {
                    // one shared seed: every cell sees the same split and
                    // draw schedule, so scores differ only by hyperparameters
                    out.push(TrainConfig::new(k, p, r, seed));
                }
            }
        }
        out
    }
}

/// One grid cell's outcome. Failed cells carry the error text instead of a
/// score and always sort behind scored ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardEntry {
    pub node_factor: f64,
    pub dropout: f64,
    pub learning_rate: f64,
    pub dims: LayerDims,
    pub n_params: usize,
    pub val_mse: Option<f64>,
    pub best_epoch: Option<usize>,
    pub error: Option<String>,
}

/// Ranking: validation MSE ascending, ties to the smaller model, then the
/// smaller learning rate; unscored (failed) cells last.
pub(crate) fn rank_key(e: &LeaderboardEntry) -> (f64, usize, f64) {
    (
        e.val_mse.unwrap_or(f64::INFINITY),
        e.n_params,
        e.learning_rate,
    )
}

/// Trains every grid cell and returns the winning configuration, its model,
/// and the full sorted leaderboard. Cell failures are recorded, not fatal;
/// only a grid with zero successes errors out.
pub fn tune(
    dataset: &Dataset,
    grid: &TuneGrid,
    seed: u64,
) -> Result<(TrainConfig, Model, Vec<LeaderboardEntry>)> {
    if grid.is_empty() {
        return Err(Error::Train("hyperparameter grid is empty".into()));
    }
    let combos = grid.combos(seed);
    let mut cells: Vec<(LeaderboardEntry, Option<Model>)> = combos
        .par_iter()
        .map(|config| {
            let dims = match layer_sizes(dataset.n_anchors, config.node_factor) {
                Ok(d) => d,
                Err(e) => {
                    return (
                        LeaderboardEntry {
                            node_factor: config.node_factor,
                            dropout: config.dropout,
                            learning_rate: config.learning_rate,
                            dims: LayerDims {
                                n_input: 0,
                                n_hidden1: 0,
                                n_hidden2: 0,
                                n_output: 2,
                            },
                            n_params: 0,
                            val_mse: None,
                            best_epoch: None,
                            error: Some(e.to_string()),
                        },
                        None,
                    )
                }
            };
            let mut entry = LeaderboardEntry {
                node_factor: config.node_factor,
                dropout: config.dropout,
                learning_rate: config.learning_rate,
                dims,
                n_params: dims.n_params(),
                val_mse: None,
                best_epoch: None,
                error: None,
            };
            match train(dataset, config) {
                Ok((model, history)) => {
                    let (val, epoch) = best_val_mse(&history).expect("non-empty history");
                    entry.val_mse = Some(val);
                    entry.best_epoch = Some(epoch);
                    (entry, Some(model))
                }
                Err(e) => {
                    entry.error = Some(e.to_string());
                    (entry, None)
                }
            }
        })
        .collect();

    cells.sort_by(|(a, _), (b, _)| {
        let (av, ap, ar) = rank_key(a);
        let (bv, bp, br) = rank_key(b);
        av.total_cmp(&bv)
            .then(ap.cmp(&bp))
            .then(ar.total_cmp(&br))
    });
    let winner = cells
        .iter()
        .position(|(e, _)| e.val_mse.is_some())
        .ok_or_else(|| {
            Error::Train(format!(
                "all {} grid cells failed; first error: {}",
                cells.len(),
                cells
                    .first()
                    .and_then(|(e, _)| e.error.clone())
                    .unwrap_or_default()
            ))
        })?;
    let (entry, model) = cells[winner].clone();
    let config = TrainConfig::new(
        entry.node_factor,
        entry.dropout,
        entry.learning_rate,
        seed,
    );
    let leaderboard = cells.into_iter().map(|(e, _)| e).collect();
    Ok((config, model.expect("winner trained"), leaderboard))
}
