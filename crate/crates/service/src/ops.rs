//! Blocking implementations of the service operations.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use xmtc_core::data::{ingest as ingest_corpus, Dataset, EmbeddingMatrix, Split};
use xmtc_core::metrics::{
    bucketed_report, randomization_test, read_gold, read_predictions, EvalReport, GoldFile, PredictionsFile,
    SigTestResult,
};
use xmtc_core::models::Classifier;
use xmtc_core::protocol::{
    AttnRequest, EvalRequest, GoldSource, IngestRequest, IngestResponse, MetricsRequest, SigTestRequest, TrainRequest,
    TrainResponse, TuneRequest,
};
use xmtc_core::train::{
    evaluate, export_attention, load_checkpoint, train as train_model, AttentionRecord, EpochLog, NeuralRun,
    TuneOutcome,
};
use xmtc_core::{DataError, Error, Result};

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_owned(),
        source,
    }
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => fs::create_dir_all(p).map_err(|e| io_error(p, e)),
        _ => Ok(()),
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    create_parent(path)?;
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).map_err(|e| io_error(path, e))
}

fn load_dataset(dir: &Path) -> Result<(Dataset, EmbeddingMatrix)> {
    Dataset::load(dir)
}

fn check_ks(ks: &[usize]) -> Result<()> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::Config("K values must be positive and at least one is required".into()));
    }
    Ok(())
}

pub fn ingest(req: &IngestRequest) -> Result<IngestResponse> {
    let (ds, emb) = ingest_corpus(&req.corpus_dir, &req.descriptors, &req.embeddings, req.dim)?;
    ds.save(&req.out, &emb)?;
    Ok(IngestResponse {
        out: req.out.clone(),
        report: ds.report,
    })
}

pub fn train(req: &TrainRequest, observer: &mut dyn FnMut(&EpochLog)) -> Result<TrainResponse> {
    let (ds, emb) = load_dataset(&req.dataset)?;
    let trained = match &req.resume {
        Some(path) => {
            let mut run = NeuralRun::resume(&ds, path, &req.options)?;
            if run.model.config != req.config {
                return Err(Error::Config(format!(
                    "{} was trained with a different configuration",
                    path.display()
                )));
            }
            run.run(observer)?;
            run.finish()
        }
        None => train_model(&ds, &emb, &req.config, &req.options, observer)?,
    };
    create_parent(&req.out)?;
    trained.save(&req.out, &ds)?;
    Ok(TrainResponse {
        checkpoint: req.out.clone(),
        state: trained.state,
    })
}

pub fn tune(req: &TuneRequest) -> Result<TuneOutcome> {
    let (ds, emb) = load_dataset(&req.dataset)?;
    xmtc_core::train::tune(&ds, &emb, &req.base, &req.options)
}

pub fn eval(req: &EvalRequest) -> Result<EvalReport> {
    check_ks(&req.ks)?;
    let (ds, _) = load_dataset(&req.dataset)?;
    let (classifier, _) = load_checkpoint(&req.checkpoint, &ds)?;
    let (scores, report) = evaluate(&classifier, &ds, req.split, &req.ks, req.ranking, req.threshold)?;
    if let Some(out) = &req.predictions_out {
        write_json(out, &PredictionsFile::from_scores(&scores))?;
    }
    Ok(report)
}

fn dataset_gold(ds: &Dataset, split: Split) -> GoldFile {
    GoldFile {
        docs: ds
            .split(split)
            .iter()
            .map(|d| {
                let ids = d.labels.iter().map(|&l| ds.catalog.get(l).id.clone()).collect();
                (d.doc_id.clone(), ids)
            })
            .collect(),
    }
}

/// Every label id mentioned by the predictions files or the gold labels,
/// sorted.
fn label_universe(files: &[&PredictionsFile], gold: &GoldFile) -> Vec<String> {
    let mut all: BTreeSet<String> = gold.docs.values().flatten().cloned().collect();
    for f in files {
        all.extend(f.mentioned_labels());
    }
    all.into_iter().collect()
}

pub fn sigtest(req: &SigTestRequest) -> Result<SigTestResult> {
    let a = read_predictions(&req.a)?;
    let b = read_predictions(&req.b)?;
    let (gold, label_ids) = match &req.gold {
        GoldSource::File(path) => {
            let gold = read_gold(path)?;
            let labels = label_universe(&[&a, &b], &gold);
            (gold, labels)
        }
        GoldSource::Dataset { dataset, split } => {
            let (ds, _) = load_dataset(dataset)?;
            (dataset_gold(&ds, *split), ds.catalog.ids())
        }
    };
    let (pa, gold_idx) = a.resolve(&gold, &label_ids, req.threshold)?;
    let (pb, _) = b.resolve(&gold, &label_ids, req.threshold)?;
    randomization_test(&pa, &pb, &gold_idx, req.metric, req.iterations, req.seed)
}

pub fn attn(req: &AttnRequest) -> Result<AttentionRecord> {
    let (ds, emb) = load_dataset(&req.dataset)?;
    let (classifier, _) = load_checkpoint(&req.checkpoint, &ds)?;
    let Classifier::Neural(model) = &classifier else {
        return Err(Error::Config(format!(
            "attention export needs a single neural model, not {}",
            classifier.architecture()
        )));
    };
    let (_, doc) = ds
        .find(&req.doc_id)
        .ok_or_else(|| DataError::UnknownDocument(req.doc_id.clone()))?;
    export_attention(model, doc, &ds.catalog, &emb, req.top_k)
}

pub fn metrics(req: &MetricsRequest) -> Result<EvalReport> {
    check_ks(&req.ks)?;
    let preds = read_predictions(&req.predictions)?;
    let gold = read_gold(&req.gold)?;
    let (label_ids, buckets) = match &req.dataset {
        Some(dir) => {
            let (ds, _) = load_dataset(dir)?;
            (ds.catalog.ids(), Some(ds.catalog.buckets()))
        }
        None => (label_universe(&[&preds], &gold), None),
    };
    let (p, g) = preds.resolve(&gold, &label_ids, req.threshold)?;
    bucketed_report(&p, &g, buckets.as_deref(), &req.ks, req.ranking, req.threshold)
}
