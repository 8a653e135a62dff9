use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{mean_rp5, train_neural, TrainOptions};
use crate::data::{Dataset, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::models::{Classifier, ModelConfig, BATCH_SIZES, DROPOUTS, ENC_LAYERS, ENC_UNITS, WORD_DROPOUTS};

/// Reruns of the selected configuration.
pub const RUNS_PER_CONFIG: usize = 5;

/// Finite search space; the default is the published grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSpace {
    pub enc_units: Vec<usize>,
    pub enc_layers: Vec<usize>,
    pub batch_sizes: Vec<usize>,
    pub dropouts: Vec<f64>,
    pub word_dropouts: Vec<f64>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            enc_units: ENC_UNITS.to_vec(),
            enc_layers: ENC_LAYERS.to_vec(),
            batch_sizes: BATCH_SIZES.to_vec(),
            dropouts: DROPOUTS.to_vec(),
            word_dropouts: WORD_DROPOUTS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuneOptions {
    pub budget: usize,
    pub seed: u64,
    pub space: SearchSpace,
    /// Epoch budget, patience and optimizer for every run; its seed is
    /// replaced per run.
    pub train: TrainOptions,
}

impl Default for TuneOptions {
    fn default() -> Self {
        Self {
            budget: 20,
            seed: 0,
            space: SearchSpace::default(),
            train: TrainOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchTrial {
    pub config: ModelConfig,
    pub seed: u64,
    pub dev_rp5: f64,
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub dev_rp5: f64,
    pub test_rp5: Option<f64>,
}

/// The selected configuration rerun with [`RUNS_PER_CONFIG`] seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub config: ModelConfig,
    pub runs: Vec<RunResult>,
    pub mean_dev_rp5: f64,
    pub mean_test_rp5: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneOutcome {
    pub best: ModelConfig,
    pub trials: Vec<SearchTrial>,
    pub winner: TrialResult,
}

/// Every point of `space` applied to `base`, in a fixed order.
pub fn grid(base: &ModelConfig, space: &SearchSpace) -> Vec<ModelConfig> {
    let custom = *space != SearchSpace::default();
    let mut out = Vec::new();
    for &enc_units in &space.enc_units {
        for &enc_layers in &space.enc_layers {
            for &batch_size in &space.batch_sizes {
                for &dropout in &space.dropouts {
                    for &word_dropout in &space.word_dropouts {
                        out.push(ModelConfig {
                            enc_units,
                            enc_layers,
                            batch_size,
                            dropout,
                            word_dropout,
                            override_ranges: base.override_ranges || custom,
                            ..base.clone()
                        });
                    }
                }
            }
        }
    }
    out
}

/// `budget` distinct grid points in seeded random order; a budget at least
/// the grid size enumerates the whole grid.
pub fn sample_grid(base: &ModelConfig, space: &SearchSpace, budget: usize, seed: u64) -> Result<Vec<ModelConfig>> {
    if budget < 1 {
        return Err(Error::Config("search budget must be at least 1".into()));
    }
    let mut points = grid(base, space);
    if points.is_empty() {
        return Err(Error::Config("search space is empty".into()));
    }
    points.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    points.truncate(budget);
    Ok(points)
}

fn run_seed(base: u64, run: usize) -> u64 {
    base.wrapping_mul(1_000).wrapping_add(run as u64 + 1)
}

/// Random search by dev RP@5, then [`RUNS_PER_CONFIG`] reruns of the winner.
/// Ties go to the earlier sampled configuration.
pub fn tune(dataset: &Dataset, embeddings: &EmbeddingMatrix, base: &ModelConfig, opts: &TuneOptions) -> Result<TuneOutcome> {
    if !base.architecture.is_neural() {
        return Err(Error::Config(format!("{} has no hyper-parameters to tune", base.architecture)));
    }
    let configs = sample_grid(base, &opts.space, opts.budget, opts.seed)?;
    for c in &configs {
        c.validate()?;
    }
    let train_opts = |seed| TrainOptions {
        seed,
        ..opts.train.clone()
    };
    let trials: Vec<SearchTrial> = configs
        .par_iter()
        .map(|config| {
            let t = train_neural(dataset, embeddings, config, &train_opts(opts.seed), &mut |_| {})?;
            log::info!(
                "trial units {} layers {} batch {} dropout {} word dropout {}: dev RP@5 {:.4}",
                config.enc_units,
                config.enc_layers,
                config.batch_size,
                config.dropout,
                config.word_dropout,
                t.state.best_dev_rp5.unwrap_or(0.0)
            );
            Ok(SearchTrial {
                config: config.clone(),
                seed: opts.seed,
                dev_rp5: t.state.best_dev_rp5.unwrap_or(0.0),
                epochs: t.state.epoch,
            })
        })
        .collect::<Result<_>>()?;
    let mut best = 0;
    for (i, t) in trials.iter().enumerate() {
        if t.dev_rp5 > trials[best].dev_rp5 {
            best = i;
        }
    }
    let config = trials[best].config.clone();
    let runs: Vec<RunResult> = (0..RUNS_PER_CONFIG)
        .into_par_iter()
        .map(|r| {
            let seed = run_seed(opts.seed, r);
            let t = train_neural(dataset, embeddings, &config, &train_opts(seed), &mut |_| {})?;
            let Classifier::Neural(model) = &t.classifier else { unreachable!() };
            let test_rp5 = if dataset.test.is_empty() {
                None
            } else {
                Some(mean_rp5(&model.predict_all(&dataset.test)?, &dataset.test))
            };
            Ok(RunResult {
                seed,
                dev_rp5: t.state.best_dev_rp5.unwrap_or(0.0),
                test_rp5,
            })
        })
        .collect::<Result<_>>()?;
    let n = runs.len() as f64;
    let mean_dev_rp5 = runs.iter().map(|r| r.dev_rp5).sum::<f64>() / n;
    let mean_test_rp5 = runs.iter().map(|r| r.test_rp5).sum::<Option<f64>>().map(|s| s / n);
    Ok(TuneOutcome {
        best: config.clone(),
        trials,
        winner: TrialResult {
            config,
            runs,
            mean_dev_rp5,
            mean_test_rp5,
        },
    })
}
