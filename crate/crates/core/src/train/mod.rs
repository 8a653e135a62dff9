//! Training: masked BCE, Adam, the epoch loop with early stopping on dev
//! RP@5, resumable state, evaluation, grid search and attention export.

mod attention;
mod optim;
mod tune;

pub use attention::{export_attention, AttentionHead, AttentionRecord, SectionAttention};
pub use optim::{Adam, AdamConfig, MOMENT_PREFIX};
pub use tune::{grid, sample_grid, tune, RunResult, SearchSpace, SearchTrial, TrialResult, TuneOptions, TuneOutcome, RUNS_PER_CONFIG};

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Bucket, Dataset, EmbeddingMatrix, Split, TokenizedDocument};
use crate::error::{Error, Result};
use crate::metrics::{bucketed_report, ndcg_at_k, r_precision_at_k, rank, EvalReport, Predictions, RankingScope};
use crate::models::{
    Architecture, CheckpointMeta, Classifier, Documents, Ensemble, ExactMatch, LogReg, LogRegOptions, ModelConfig,
    NeuralModel, Prepared, ScoreMatrix,
};
use crate::nn::Dropout;
use crate::tensor::{Gradients, ParamId, Tape, Tensor, Var};

/// Early stopping and reporting use RP@K and nDCG@K at this K.
pub const DEV_K: usize = 5;
pub const DEFAULT_EPOCHS: usize = 200;
pub const DEFAULT_PATIENCE: usize = 5;
/// L2 strengths tried for the logistic regression baseline.
pub const LOGREG_L2: [f64; 3] = [1e-5, 1e-4, 1e-3];
const RESUME_PREFIX: &str = "resume.";

/// One-hot gold vector.
pub fn targets(labels: &[usize], num_labels: usize) -> Vec<f64> {
    let mut y = vec![0.0; num_labels];
    for &l in labels {
        y[l] = 1.0;
    }
    y
}

/// Loss mask over label columns: zero-shot columns are excluded for
/// zero-shot models, everything else counts.
pub fn loss_mask(architecture: Architecture, buckets: &[Bucket]) -> Vec<f64> {
    buckets
        .iter()
        .map(|&b| {
            if architecture.is_zero_shot() && b == Bucket::ZeroShot {
                0.0
            } else {
                1.0
            }
        })
        .collect()
}

/// Masked mean binary cross-entropy of probabilities `p` against gold
/// label indices.
pub fn bce_loss(tape: &mut Tape<'_>, p: Var, gold: &[usize], mask: &[f64]) -> Result<Var> {
    let y = targets(gold, mask.len());
    Ok(tape.bce(p, &y, mask)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    pub epochs: usize,
    /// Epochs without dev improvement before stopping; `0` never stops early.
    pub patience: usize,
    pub seed: u64,
    pub optimizer: AdamConfig,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: DEFAULT_EPOCHS,
            patience: DEFAULT_PATIENCE,
            seed: 0,
            optimizer: AdamConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub dev_rp5: f64,
    pub dev_ndcg5: f64,
    pub improved: bool,
}

/// Everything besides parameters needed to continue a run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainState {
    /// Epochs completed.
    pub epoch: usize,
    pub best_epoch: usize,
    pub best_dev_rp5: Option<f64>,
    pub best_dev_loss: Option<f64>,
    /// Consecutive epochs without improvement.
    pub bad_epochs: usize,
    pub stopped_early: bool,
    pub seed: u64,
    pub optimizer_step: u64,
    pub options: Option<TrainOptions>,
    pub history: Vec<EpochLog>,
    /// Per-member states of an ensemble.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub members: Vec<TrainState>,
    /// Selected L2 strength for the logistic regression baseline.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logreg_l2: Option<f64>,
}

/// A trained classifier with its state and any extra checkpoint arrays.
#[derive(Debug, Clone)]
pub struct Trained {
    pub classifier: Classifier,
    pub state: TrainState,
    pub extra_arrays: Vec<(String, Tensor)>,
}

impl Trained {
    pub fn meta(&self, dataset: &Dataset) -> Result<CheckpointMeta> {
        Ok(CheckpointMeta {
            label_ids: dataset.catalog.ids(),
            buckets: dataset.catalog.buckets(),
            vocab_hash: dataset.vocab_hash.clone(),
            train_state: serde_json::to_value(&self.state)?,
        })
    }

    pub fn save(&self, path: &Path, dataset: &Dataset) -> Result<()> {
        self.classifier.save(path, &self.meta(dataset)?, self.extra_arrays.clone())
    }
}

/// Loads a checkpoint and checks it was trained on `dataset`'s label set
/// and vocabulary.
pub fn load_checkpoint(path: &Path, dataset: &Dataset) -> Result<(Classifier, CheckpointMeta)> {
    let (classifier, meta, _) = Classifier::load(path)?;
    if meta.label_ids != dataset.catalog.ids() {
        return Err(Error::Checkpoint(format!("{}: label set differs from the dataset's", path.display())));
    }
    if classifier.architecture().is_neural() && meta.vocab_hash != dataset.vocab_hash {
        return Err(Error::Checkpoint(format!("{}: vocabulary differs from the dataset's", path.display())));
    }
    Ok((classifier, meta))
}

fn doc_gradient(
    model: &NeuralModel,
    input: &Prepared,
    gold: &[usize],
    mask: &[f64],
    dropout: Option<&mut Dropout>,
) -> Result<(f64, Gradients)> {
    let mut tape = Tape::new(&model.store);
    let (p, _) = model.forward(&mut tape, input, dropout)?;
    let loss = bce_loss(&mut tape, p, gold, mask)?;
    let value = tape.value(loss).item();
    Ok((value, tape.backward(loss)?))
}

/// Dev loss, RP@5 and nDCG@5 over all labels.
fn dev_metrics(model: &NeuralModel, inputs: &[Prepared], docs: &[TokenizedDocument], mask: &[f64]) -> Result<(f64, f64, f64)> {
    let rows: Vec<(f64, f64, f64)> = inputs
        .par_iter()
        .zip(docs)
        .map(|(input, doc)| {
            let mut tape = Tape::new(&model.store);
            let (p, _) = model.forward(&mut tape, input, None)?;
            let loss = bce_loss(&mut tape, p, &doc.labels, mask)?;
            let ranking = rank(tape.value(p).data());
            Ok((
                tape.value(loss).item(),
                r_precision_at_k(&doc.labels, &ranking, DEV_K).unwrap_or(0.0),
                ndcg_at_k(&doc.labels, &ranking, DEV_K).unwrap_or(0.0),
            ))
        })
        .collect::<Result<_>>()?;
    let n = rows.len().max(1) as f64;
    let (l, r, g) = rows
        .iter()
        .fold((0.0, 0.0, 0.0), |acc, &(l, r, g)| (acc.0 + l, acc.1 + r, acc.2 + g));
    Ok((l / n, r / n, g / n))
}

fn trainable_values(model: &NeuralModel) -> Vec<(ParamId, Tensor)> {
    model
        .store
        .trainable_ids()
        .into_iter()
        .map(|id| (id, model.store.value(id).clone()))
        .collect()
}

fn restore(model: &mut NeuralModel, values: &[(ParamId, Tensor)]) {
    for (id, t) in values {
        model.store.get_mut(*id).value = t.clone();
    }
}

/// Dropout stream for the document at `position` of an epoch.
fn dropout_rng(seed: u64, epoch: usize, position: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xD50F_D50F_D50F_D50F);
    rng.set_stream(((epoch as u64) << 32) | position as u64);
    rng
}

fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// A neural training run in progress: the current parameters, the best ones
/// seen so far and the optimizer.
pub struct NeuralRun<'a> {
    dataset: &'a Dataset,
    pub model: NeuralModel,
    pub adam: Adam,
    pub state: TrainState,
    best: Vec<(ParamId, Tensor)>,
    mask: Vec<f64>,
    train_inputs: Vec<Prepared>,
    dev_inputs: Vec<Prepared>,
}

impl<'a> NeuralRun<'a> {
    pub fn new(dataset: &'a Dataset, embeddings: &EmbeddingMatrix, config: &ModelConfig, opts: &TrainOptions) -> Result<Self> {
        config.validate()?;
        let model = NeuralModel::new(config, &dataset.catalog, embeddings, opts.seed)?;
        let adam = Adam::new(opts.optimizer, &model.store);
        let state = TrainState {
            seed: opts.seed,
            options: Some(opts.clone()),
            ..TrainState::default()
        };
        Self::assemble(dataset, model, adam, state, None)
    }

    fn assemble(
        dataset: &'a Dataset,
        model: NeuralModel,
        adam: Adam,
        state: TrainState,
        best: Option<Vec<(ParamId, Tensor)>>,
    ) -> Result<Self> {
        let prepare = |docs: &[TokenizedDocument]| -> Result<Vec<Prepared>> { docs.iter().map(|d| model.prepare(d)).collect() };
        let train_inputs = prepare(&dataset.train)?;
        let dev_inputs = prepare(&dataset.dev)?;
        let mask = loss_mask(model.architecture(), &dataset.catalog.buckets());
        let best = best.unwrap_or_else(|| trainable_values(&model));
        Ok(Self {
            dataset,
            model,
            adam,
            state,
            best,
            mask,
            train_inputs,
            dev_inputs,
        })
    }

    /// Continues a run saved by [`Trained::save`]. The options' epoch budget
    /// may differ from the original run's.
    pub fn resume(dataset: &'a Dataset, path: &Path, opts: &TrainOptions) -> Result<Self> {
        let (classifier, meta, arrays) = Classifier::load(path)?;
        let Classifier::Neural(best_model) = classifier else {
            return Err(Error::Checkpoint("only neural checkpoints can be resumed".into()));
        };
        if meta.vocab_hash != dataset.vocab_hash || meta.label_ids != dataset.catalog.ids() {
            return Err(Error::Checkpoint("checkpoint was trained on a different dataset".into()));
        }
        let mut state: TrainState = serde_json::from_value(meta.train_state)?;
        let best = trainable_values(&best_model);
        let mut model = best_model;
        for (name, t) in &arrays {
            let Some(param) = name.strip_prefix(RESUME_PREFIX) else { continue };
            let id = model
                .store
                .id(param)
                .ok_or_else(|| Error::Checkpoint(format!("resume state for unknown parameter {param}")))?;
            if t.shape() != model.store.value(id).shape() {
                return Err(Error::Checkpoint(format!("resume state {name} has the wrong shape")));
            }
            model.store.get_mut(id).value = t.clone();
        }
        let adam = Adam::from_arrays(opts.optimizer, state.optimizer_step, &model.store, &arrays)?;
        state.options = Some(opts.clone());
        state.seed = opts.seed;
        Self::assemble(dataset, model, adam, state, Some(best))
    }

    fn options(&self) -> TrainOptions {
        self.state.options.clone().unwrap_or_default()
    }

    pub fn finished(&self) -> bool {
        self.state.stopped_early || self.state.epoch >= self.options().epochs
    }

    /// Runs one epoch of mini-batch training followed by dev evaluation.
    pub fn epoch(&mut self) -> Result<EpochLog> {
        let opts = self.options();
        let epoch = self.state.epoch + 1;
        let started = Instant::now();
        let batch_size = self.model.config.batch_size.max(1);
        let order = epoch_order(opts.seed, epoch, self.train_inputs.len());
        let (rate, word_rate) = (self.model.config.dropout, self.model.config.word_dropout);
        let mut total_loss = 0.0;
        for (b, chunk) in order.chunks(batch_size).enumerate() {
            let model = &self.model;
            let results: Vec<(f64, Gradients)> = chunk
                .par_iter()
                .enumerate()
                .map(|(j, &i)| {
                    let mut dropout = Dropout::new(rate, word_rate, dropout_rng(opts.seed, epoch, b * batch_size + j));
                    doc_gradient(model, &self.train_inputs[i], &self.dataset.train[i].labels, &self.mask, Some(&mut dropout))
                })
                .collect::<Result<_>>()?;
            let mut grads = Gradients::empty(self.model.store.len());
            for (loss, g) in &results {
                total_loss += loss;
                grads.add_assign(g);
            }
            grads.scale(1.0 / chunk.len() as f64);
            self.adam.update(&mut self.model.store, &grads).map_err(|e| match e {
                Error::Numeric(m) => Error::Numeric(format!("epoch {epoch}, batch {}: {m}", b + 1)),
                other => other,
            })?;
        }
        let train_loss = total_loss / self.train_inputs.len().max(1) as f64;
        if !train_loss.is_finite() {
            return Err(Error::Numeric(format!("epoch {epoch}: training loss diverged ({train_loss})")));
        }
        let (dev_loss, dev_rp5, dev_ndcg5) = dev_metrics(&self.model, &self.dev_inputs, &self.dataset.dev, &self.mask)?;
        if !dev_loss.is_finite() {
            return Err(Error::Numeric(format!("epoch {epoch}: dev loss diverged ({dev_loss})")));
        }
        let improved = match (self.state.best_dev_rp5, self.state.best_dev_loss) {
            (Some(r), Some(l)) => dev_rp5 > r || (dev_rp5 == r && dev_loss < l),
            _ => true,
        };
        let s = &mut self.state;
        s.epoch = epoch;
        s.optimizer_step = self.adam.step;
        if improved {
            s.best_epoch = epoch;
            s.best_dev_rp5 = Some(dev_rp5);
            s.best_dev_loss = Some(dev_loss);
            s.bad_epochs = 0;
            self.best = trainable_values(&self.model);
        } else {
            s.bad_epochs += 1;
            if opts.patience > 0 && s.bad_epochs >= opts.patience {
                s.stopped_early = true;
            }
        }
        let log = EpochLog {
            epoch,
            train_loss,
            dev_loss,
            dev_rp5,
            dev_ndcg5,
            improved,
        };
        s.history.push(log.clone());
        log::info!(
            "{} epoch {epoch}: train loss {train_loss:.5}, dev loss {dev_loss:.5}, dev RP@5 {dev_rp5:.4}, nDCG@5 {dev_ndcg5:.4}{} ({:.1}s)",
            self.model.architecture(),
            if improved { " *" } else { "" },
            started.elapsed().as_secs_f64()
        );
        Ok(log)
    }

    /// Trains until the epoch budget or patience runs out, calling `observer`
    /// after every epoch.
    pub fn run(&mut self, observer: &mut dyn FnMut(&EpochLog)) -> Result<()> {
        if !self.finished() && self.dev_inputs.is_empty() {
            return Err(Error::Config("early stopping needs a non-empty dev split".into()));
        }
        while !self.finished() {
            let log = self.epoch()?;
            observer(&log);
        }
        Ok(())
    }

    /// The best-dev model plus the state needed to resume.
    pub fn finish(self) -> Trained {
        let mut resume: Vec<(String, Tensor)> = self
            .model
            .store
            .trainable_ids()
            .into_iter()
            .map(|id| {
                let p = self.model.store.get(id);
                (format!("{RESUME_PREFIX}{}", p.name), p.value.clone())
            })
            .collect();
        resume.extend(self.adam.arrays(&self.model.store));
        let mut model = self.model;
        restore(&mut model, &self.best);
        Trained {
            classifier: Classifier::Neural(model),
            state: self.state,
            extra_arrays: resume,
        }
    }
}

pub fn train_neural(
    dataset: &Dataset,
    embeddings: &EmbeddingMatrix,
    config: &ModelConfig,
    opts: &TrainOptions,
    observer: &mut dyn FnMut(&EpochLog),
) -> Result<Trained> {
    if !config.architecture.is_neural() {
        return Err(Error::Config(format!("{} is not a neural architecture", config.architecture)));
    }
    let mut run = NeuralRun::new(dataset, embeddings, config, opts)?;
    run.run(observer)?;
    Ok(run.finish())
}

fn label_targets(docs: &[TokenizedDocument]) -> Vec<Vec<usize>> {
    docs.iter().map(|d| d.labels.clone()).collect()
}

fn mean_rp5(scores: &[Vec<f64>], docs: &[TokenizedDocument]) -> f64 {
    let total: f64 = scores
        .iter()
        .zip(docs)
        .map(|(s, d)| r_precision_at_k(&d.labels, &rank(s), DEV_K).unwrap_or(0.0))
        .sum();
    total / docs.len().max(1) as f64
}

/// Fits the tf-idf logistic regression, choosing L2 on dev RP@5.
pub fn train_logreg(dataset: &Dataset, config: &ModelConfig, seed: u64) -> Result<Trained> {
    let train_text = dataset.texts(Split::Train)?;
    let dev_text = dataset.texts(Split::Dev)?;
    let targets = label_targets(&dataset.train);
    let mut best: Option<(f64, LogReg)> = None;
    for l2 in LOGREG_L2 {
        let opts = LogRegOptions {
            l2,
            seed,
            ..LogRegOptions::default()
        };
        let model = LogReg::fit(&train_text, &targets, dataset.catalog.len(), config.logreg_features, &opts)?;
        let rp = mean_rp5(&model.predict_all(&dev_text), &dataset.dev);
        log::info!("logreg l2 {l2:e}: dev RP@5 {rp:.4}");
        if best.as_ref().is_none_or(|(b, _)| rp > *b) {
            best = Some((rp, model));
        }
    }
    let (rp, model) = best.expect("at least one L2 value");
    Ok(Trained {
        state: TrainState {
            seed,
            best_dev_rp5: Some(rp),
            logreg_l2: Some(model.l2),
            ..TrainState::default()
        },
        classifier: Classifier::Logreg(model),
        extra_arrays: Vec::new(),
    })
}

/// Trains BIGRU-LWAN and Z-BIGRU-LWAN with the same settings and seed.
pub fn train_ensemble(
    dataset: &Dataset,
    embeddings: &EmbeddingMatrix,
    config: &ModelConfig,
    opts: &TrainOptions,
    observer: &mut dyn FnMut(&EpochLog),
) -> Result<Trained> {
    let member = |arch| ModelConfig {
        architecture: arch,
        ..config.clone()
    };
    let f = train_neural(dataset, embeddings, &member(Architecture::BigruLwan), opts, observer)?;
    let z = train_neural(dataset, embeddings, &member(Architecture::ZBigruLwan), opts, observer)?;
    let (Classifier::Neural(frequent), Classifier::Neural(zero_shot)) = (f.classifier, z.classifier) else {
        unreachable!("members are neural")
    };
    Ok(Trained {
        classifier: Classifier::Ensemble(Ensemble {
            frequent,
            zero_shot,
            buckets: dataset.catalog.buckets(),
        }),
        state: TrainState {
            seed: opts.seed,
            options: Some(opts.clone()),
            members: vec![f.state, z.state],
            ..TrainState::default()
        },
        extra_arrays: Vec::new(),
    })
}

/// Trains any architecture.
pub fn train(
    dataset: &Dataset,
    embeddings: &EmbeddingMatrix,
    config: &ModelConfig,
    opts: &TrainOptions,
    observer: &mut dyn FnMut(&EpochLog),
) -> Result<Trained> {
    config.validate()?;
    match config.architecture {
        Architecture::ExactMatch => Ok(Trained {
            classifier: Classifier::ExactMatch(ExactMatch::from_catalog(&dataset.catalog)),
            state: TrainState {
                seed: opts.seed,
                ..TrainState::default()
            },
            extra_arrays: Vec::new(),
        }),
        Architecture::Logreg => train_logreg(dataset, config, opts.seed),
        Architecture::EnsembleLwan => train_ensemble(dataset, embeddings, config, opts, observer),
        _ => train_neural(dataset, embeddings, config, opts, observer),
    }
}

/// Scores a split, loading document text for the text baselines.
pub fn score_split(classifier: &Classifier, dataset: &Dataset, split: Split) -> Result<ScoreMatrix> {
    let texts = if classifier.needs_text() {
        Some(dataset.texts(split)?)
    } else {
        None
    };
    classifier.score(
        Documents {
            docs: dataset.split(split),
            texts: texts.as_deref(),
        },
        &dataset.catalog.ids(),
    )
}

/// Bucketed report for already computed scores.
pub fn report_scores(
    scores: &ScoreMatrix,
    dataset: &Dataset,
    split: Split,
    ks: &[usize],
    ranking: RankingScope,
    threshold: f64,
) -> Result<EvalReport> {
    let preds = Predictions::from_scores(scores, threshold);
    let gold = label_targets(dataset.split(split));
    let buckets = dataset.catalog.buckets();
    let mut report = bucketed_report(&preds, &gold, Some(&buckets), ks, ranking, threshold)?;
    report.split = Some(split.name().to_owned());
    Ok(report)
}

/// Scores a split and builds the bucketed report.
pub fn evaluate(
    classifier: &Classifier,
    dataset: &Dataset,
    split: Split,
    ks: &[usize],
    ranking: RankingScope,
    threshold: f64,
) -> Result<(ScoreMatrix, EvalReport)> {
    let scores = score_split(classifier, dataset, split)?;
    let mut report = report_scores(&scores, dataset, split, ks, ranking, threshold)?;
    report.model = Some(classifier.architecture().name().to_owned());
    Ok((scores, report))
}

#[cfg(test)]
mod tests;
