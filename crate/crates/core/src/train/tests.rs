use super::*;
use crate::data::synthetic::{generate, SyntheticConfig};
use crate::data::Dataset;

fn dataset(zero_shot: usize) -> (Dataset, EmbeddingMatrix) {
    let corpus = generate(&SyntheticConfig {
        train_docs: 16,
        dev_docs: 6,
        test_docs: 6,
        labels: 5,
        zero_shot_labels: zero_shot,
        vocabulary: 60,
        embedding_dim: 6,
        min_filler: 4,
        max_filler: 8,
        seed: 11,
        ..SyntheticConfig::default()
    })
    .unwrap();
    Dataset::build(&corpus.corpus, &corpus.descriptors, &corpus.embedding_matrix().unwrap()).unwrap()
}

fn small(arch: Architecture) -> ModelConfig {
    ModelConfig {
        architecture: arch,
        enc_units: 5,
        batch_size: 4,
        dropout: 0.1,
        word_dropout: 0.02,
        kernel_width: 3,
        override_ranges: true,
        ..ModelConfig::default()
    }
}

fn opts(epochs: usize) -> TrainOptions {
    TrainOptions {
        epochs,
        patience: 0,
        seed: 3,
        optimizer: AdamConfig {
            learning_rate: 0.01,
            ..AdamConfig::default()
        },
    }
}

fn neural(t: &Trained) -> &NeuralModel {
    match &t.classifier {
        Classifier::Neural(m) => m,
        _ => panic!("not neural"),
    }
}

#[test]
fn bce_examples() {
    let store = crate::tensor::ParamStore::new();
    let mut tape = Tape::new(&store);
    let p = tape.constant(Tensor::vector(vec![1.0, 0.0, 1.0]));
    let l = bce_loss(&mut tape, p, &[0, 2], &[1.0; 3]).unwrap();
    assert!(tape.value(l).item() <= 1e-6);
    let half = tape.constant(Tensor::vector(vec![0.5; 4]));
    let l = bce_loss(&mut tape, half, &[1], &[1.0; 4]).unwrap();
    assert!((tape.value(l).item() - std::f64::consts::LN_2).abs() < 1e-12);
}

#[test]
fn masked_labels_get_no_decoder_gradient() {
    let (ds, emb) = dataset(0);
    let model = NeuralModel::new(&small(Architecture::BigruLwan), &ds.catalog, &emb, 1).unwrap();
    let mut mask = vec![1.0; ds.catalog.len()];
    mask[1] = 0.0;
    mask[3] = 0.0;
    let input = model.prepare(&ds.train[0]).unwrap();
    let (_, g) = doc_gradient(&model, &input, &ds.train[0].labels, &mask, None).unwrap();
    let (w, b) = model.label_decoder().unwrap();
    let gw = g.get(w).unwrap();
    let gb = g.get(b).unwrap();
    for l in 0..ds.catalog.len() {
        let masked = mask[l] == 0.0;
        assert_eq!(gw.row(l).iter().all(|&v| v == 0.0), masked, "row {l}");
        assert_eq!(gb.data()[l] == 0.0, masked);
    }
}

#[test]
fn zero_shot_mask_follows_buckets() {
    let b = [Bucket::Frequent, Bucket::ZeroShot, Bucket::FewShot];
    assert_eq!(loss_mask(Architecture::ZBigruLwan, &b), vec![1.0, 0.0, 1.0]);
    assert_eq!(loss_mask(Architecture::BigruLwan, &b), vec![1.0; 3]);
}

#[test]
fn zero_epochs_keep_initialization() {
    let (ds, emb) = dataset(0);
    let config = small(Architecture::BigruAtt);
    let t = train(&ds, &emb, &config, &opts(0), &mut |_| {}).unwrap();
    let init = NeuralModel::new(&config, &ds.catalog, &emb, 3).unwrap();
    assert_eq!(neural(&t).store, init.store);
    assert_eq!(t.state.epoch, 0);
    assert!(t.state.history.is_empty());
}

#[test]
fn training_reduces_loss_and_keeps_best_dev() {
    let (ds, emb) = dataset(0);
    let mut seen = Vec::new();
    let t = train(
        &ds,
        &emb,
        &small(Architecture::CnnLwan),
        &TrainOptions { patience: 3, ..opts(25) },
        &mut |l| seen.push(l.clone()),
    )
    .unwrap();
    let h = &t.state.history;
    assert_eq!(&seen, h);
    assert!(h.last().unwrap().train_loss < h[0].train_loss);
    let best = t.state.best_dev_rp5.unwrap();
    assert!(h.iter().all(|e| e.dev_rp5 <= best));
    let m = neural(&t);
    let dev_inputs: Vec<Prepared> = ds.dev.iter().map(|d| m.prepare(d).unwrap()).collect();
    let mask = loss_mask(m.architecture(), &ds.catalog.buckets());
    let (_, rp, _) = dev_metrics(m, &dev_inputs, &ds.dev, &mask).unwrap();
    assert_eq!(rp, best);
    if t.state.stopped_early {
        assert_eq!(t.state.bad_epochs, 3);
        assert_eq!(t.state.epoch, t.state.best_epoch + 3);
    }
}

#[test]
fn same_seed_same_run() {
    let (ds, emb) = dataset(0);
    let dir = tempfile::tempdir().unwrap();
    let config = small(Architecture::BigruLwan);
    let paths = [dir.path().join("a.ckpt"), dir.path().join("b.ckpt")];
    let mut logs = Vec::new();
    for p in &paths {
        let t = train(&ds, &emb, &config, &opts(3), &mut |_| {}).unwrap();
        t.save(p, &ds).unwrap();
        logs.push(t.state.history);
    }
    assert_eq!(logs[0], logs[1]);
    assert_eq!(std::fs::read(&paths[0]).unwrap(), std::fs::read(&paths[1]).unwrap());
    let other = train(&ds, &emb, &config, &TrainOptions { seed: 4, ..opts(3) }, &mut |_| {}).unwrap();
    assert_ne!(other.state.history, logs[0]);
}

#[test]
fn resume_matches_uninterrupted_run() {
    let (ds, emb) = dataset(0);
    let dir = tempfile::tempdir().unwrap();
    let config = small(Architecture::BigruAtt);
    let full = train(&ds, &emb, &config, &opts(5), &mut |_| {}).unwrap();

    let first = train(&ds, &emb, &config, &opts(2), &mut |_| {}).unwrap();
    let path = dir.path().join("part.ckpt");
    first.save(&path, &ds).unwrap();
    let mut run = NeuralRun::resume(&ds, &path, &opts(5)).unwrap();
    run.run(&mut |_| {}).unwrap();
    let resumed = run.finish();
    assert_eq!(resumed.state.history, full.state.history);
    assert_eq!(neural(&resumed).store, neural(&full).store);
    assert_eq!(resumed.extra_arrays, full.extra_arrays);
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let (ds, emb) = dataset(2);
    let dir = tempfile::tempdir().unwrap();
    for arch in Architecture::NEURAL {
        let t = train(&ds, &emb, &small(arch), &opts(1), &mut |_| {}).unwrap();
        let path = dir.path().join(format!("{arch}.ckpt"));
        t.save(&path, &ds).unwrap();
        let (c, meta, _) = Classifier::load(&path).unwrap();
        assert_eq!(c, t.classifier, "{arch}");
        assert_eq!(meta.train_state, serde_json::to_value(&t.state).unwrap());
        let a = score_split(&c, &ds, Split::Test).unwrap();
        let b = score_split(&t.classifier, &ds, Split::Test).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn zero_shot_training_keeps_label_vectors() {
    let (ds, emb) = dataset(2);
    let config = small(Architecture::ZCnnLwan);
    let init = NeuralModel::new(&config, &ds.catalog, &emb, 3).unwrap();
    let t = train(&ds, &emb, &config, &opts(4), &mut |_| {}).unwrap();
    let m = neural(&t);
    let u = m.label_vectors().unwrap();
    assert_eq!(m.store.value(u), init.store.value(init.label_vectors().unwrap()));
    assert_eq!(m.store.value(m.embeddings()), init.store.value(init.embeddings()));
    assert_ne!(m.store, init.store);
}

#[test]
fn ensemble_trains_both_members() {
    let (ds, emb) = dataset(2);
    let config = small(Architecture::EnsembleLwan);
    let t = train(&ds, &emb, &config, &opts(2), &mut |_| {}).unwrap();
    assert_eq!(t.state.members.len(), 2);
    let f = train(&ds, &emb, &small(Architecture::BigruLwan), &opts(2), &mut |_| {}).unwrap();
    let Classifier::Ensemble(e) = &t.classifier else { panic!() };
    assert_eq!(e.frequent, *neural(&f));
    let es = score_split(&t.classifier, &ds, Split::Test).unwrap();
    let fs = score_split(&f.classifier, &ds, Split::Test).unwrap();
    let buckets = ds.catalog.buckets();
    for (re, rf) in es.scores.iter().zip(&fs.scores) {
        for l in 0..buckets.len() {
            if buckets[l] != Bucket::ZeroShot {
                assert_eq!(re[l].to_bits(), rf[l].to_bits());
            }
        }
    }
}

#[test]
fn text_baselines_train_from_corpus_dir() {
    let corpus = generate(&SyntheticConfig {
        train_docs: 30,
        labels: 4,
        seed: 5,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let paths = corpus.write(dir.path()).unwrap();
    let (ds, emb) = crate::data::ingest(&paths.corpus_dir, &paths.descriptors, &paths.embeddings, None).unwrap();
    let config = ModelConfig {
        logreg_features: 500,
        ..ModelConfig::for_architecture(Architecture::Logreg)
    };
    let t = train(&ds, &emb, &config, &opts(0), &mut |_| {}).unwrap();
    assert!(LOGREG_L2.contains(&t.state.logreg_l2.unwrap()));
    let (_, report) = evaluate(&t.classifier, &ds, Split::Dev, &[5], RankingScope::Restricted, 0.5).unwrap();
    assert!(report.scopes[0].at(5).unwrap().rp > 0.5, "{}", report.to_text());

    let exact = train(&ds, &emb, &ModelConfig::for_architecture(Architecture::ExactMatch), &opts(0), &mut |_| {}).unwrap();
    let (scores, report) = evaluate(&exact.classifier, &ds, Split::Test, &[1, 5], RankingScope::Restricted, 0.5).unwrap();
    assert!(scores.scores.iter().flatten().all(|&v| v == 0.0 || v == 1.0));
    assert_eq!(report.model.as_deref(), Some("exact-match"));

    let mut no_dir = ds.clone();
    no_dir.corpus_dir = None;
    assert!(matches!(train(&no_dir, &emb, &config, &opts(0), &mut |_| {}), Err(Error::Config(_))));
}

#[test]
fn attention_export_shapes() {
    let (ds, emb) = dataset(0);
    let doc = &ds.test[0];
    let att = NeuralModel::new(&small(Architecture::BigruAtt), &ds.catalog, &emb, 1).unwrap();
    let r = export_attention(&att, doc, &ds.catalog, &emb, 5).unwrap();
    assert_eq!(r.heads.len(), 1);
    assert_eq!(r.tokens.len(), r.heads[0].weights.len());
    assert!((r.heads[0].weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);

    let lwan = NeuralModel::new(&small(Architecture::BigruLwan), &ds.catalog, &emb, 1).unwrap();
    let r = export_attention(&lwan, doc, &ds.catalog, &emb, 5).unwrap();
    assert_eq!(r.heads.len(), 5);
    for h in &r.heads {
        assert!((h.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    assert!(r.heads.windows(2).all(|w| w[0].score >= w[1].score));

    let han = NeuralModel::new(&small(Architecture::Han), &ds.catalog, &emb, 1).unwrap();
    let r = export_attention(&han, doc, &ds.catalog, &emb, 5).unwrap();
    assert_eq!(r.sections.len(), doc.sections.len());
    assert!((r.sections.iter().map(|s| s.weight).sum::<f64>() - 1.0).abs() < 1e-12);

    let one = TokenizedDocument {
        doc_id: "one".into(),
        sections: vec![vec![doc.sections[0][0]]],
        labels: vec![0],
    };
    let r = export_attention(&lwan, &one, &ds.catalog, &emb, 5).unwrap();
    assert!(r.heads.iter().all(|h| h.weights == vec![1.0]));
    let r = export_attention(&att, &one, &ds.catalog, &emb, 5).unwrap();
    assert_eq!(r.heads[0].weights, vec![1.0]);

    let hss = NeuralModel::new(&small(Architecture::MaxHss), &ds.catalog, &emb, 1).unwrap();
    assert!(matches!(export_attention(&hss, doc, &ds.catalog, &emb, 5), Err(Error::Config(_))));
}

#[test]
fn tune_small_space() {
    let (ds, emb) = dataset(0);
    let space = SearchSpace {
        enc_units: vec![3, 4],
        enc_layers: vec![1],
        batch_sizes: vec![8],
        dropouts: vec![0.0, 0.1],
        word_dropouts: vec![0.0],
    };
    let t = TuneOptions {
        budget: 3,
        seed: 2,
        space,
        train: opts(2),
    };
    let out = tune(&ds, &emb, &small(Architecture::CnnLwan), &t).unwrap();
    assert_eq!(out.trials.len(), 3);
    assert_eq!(out.winner.runs.len(), RUNS_PER_CONFIG);
    let best = out.trials.iter().map(|x| x.dev_rp5).fold(f64::MIN, f64::max);
    let first_best = out.trials.iter().find(|x| x.dev_rp5 == best).unwrap();
    assert_eq!(out.best, first_best.config);
    assert_eq!(out, tune(&ds, &emb, &small(Architecture::CnnLwan), &t).unwrap());
    assert!(tune(&ds, &emb, &small(Architecture::CnnLwan), &TuneOptions { budget: 0, ..t.clone() }).is_err());
    assert!(tune(&ds, &emb, &ModelConfig::for_architecture(Architecture::Logreg), &t).is_err());
}
