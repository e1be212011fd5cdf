//! Training loop: seeded shuffled batching, one reparameterization draw per
//! document per step, per-epoch checkpointing and JSON-lines metrics.

use std::io::Write;
use std::path::PathBuf;

use avitopics::aviad::AviadModel;
use avitopics::avijst::{joint_top_words, AvijstModel};
use avitopics::avitm::{top_words, AvitmModel};
use avitopics::corpus::{BowCorpus, SeedPrior};
use avitopics::diffcore::{Adam, DiffError, Tape, Tensor2};
use avitopics::eval::npmi;
use avitopics::priors::PriorError;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use thiserror::Error;

use crate::checkpoint::{
    param_entries, save, seed_entries, vocab_hash, CheckpointError, CheckpointManifest,
    TrainedModel, FORMAT_VERSION,
};
use crate::config::{ModelKind, TrainConfig};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("prior: {0}")]
    Prior(#[from] PriorError),
    #[error("aviad training requires seed assignments")]
    MissingSeeds,
    #[error("document {doc} has label {label}, but S = {s}")]
    LabelOutOfRange { doc: usize, label: usize, s: usize },
    #[error("nonfinite loss at epoch {epoch}: {source}; last good checkpoint retained")]
    NonFinite { epoch: usize, source: DiffError },
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] CheckpointError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub reconstruction: f64,
    pub kl: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classification: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub npmi: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labeled_accuracy: Option<f64>,
}

pub struct TrainResult {
    pub model: TrainedModel,
    pub records: Vec<EpochRecord>,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub steps: u64,
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor2 {
    Tensor2::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

fn gather_rows(dense: &[Vec<f64>], idx: &[usize]) -> Tensor2 {
    Tensor2::from_fn(idx.len(), dense[idx[0]].len(), |r, c| dense[idx[r]][c])
}

pub fn train_model(
    config: &TrainConfig,
    corpus: &BowCorpus,
    seeds: Option<&SeedPrior>,
) -> Result<TrainResult, TrainError> {
    let v = corpus.vocab_size();
    let num_docs = corpus.num_docs();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let dense: Vec<Vec<f64>> = corpus.docs.iter().map(|d| d.to_dense(v)).collect();

    let mut model = match config.model {
        ModelKind::Avitm => TrainedModel::Avitm(AvitmModel::new(
            config.k,
            v,
            &config.hidden,
            config.alpha,
            &mut rng,
        )?),
        ModelKind::Aviad => {
            let base = AvitmModel::new(config.k, v, &config.hidden, config.alpha, &mut rng)?;
            let prior = seeds.ok_or(TrainError::MissingSeeds)?.clone();
            TrainedModel::Aviad(AviadModel::new(base, prior, config.lambda_seed))
        }
        ModelKind::Avijst => {
            for (i, doc) in corpus.docs.iter().enumerate() {
                if let Some(label) = doc.label {
                    if label >= config.s {
                        return Err(TrainError::LabelOutOfRange {
                            doc: i,
                            label,
                            s: config.s,
                        });
                    }
                }
            }
            TrainedModel::Avijst(AvijstModel::new(
                config.k,
                config.s,
                v,
                &config.hidden,
                config.alpha,
                config.gamma,
                config.lambda_nu,
                config.pi_sampling,
                &mut rng,
            )?)
        }
    };

    let mut main_opt;
    let mut cls_opt = None;
    match &model {
        TrainedModel::Avitm(m) => {
            let ids: Vec<_> = m.store.ids().collect();
            main_opt = Adam::new(config.lr, &ids, &m.store);
        }
        TrainedModel::Aviad(m) => {
            let ids: Vec<_> = m.base.store.ids().collect();
            main_opt = Adam::new(config.lr, &ids, &m.base.store);
        }
        TrainedModel::Avijst(m) => {
            main_opt = Adam::new(config.lr, &m.main_param_ids(), &m.store);
            cls_opt = Some(Adam::new(
                config.classifier_lr,
                &m.classifier_param_ids(),
                &m.store,
            ));
        }
    }

    std::fs::create_dir_all(&config.output)?;
    let checkpoint_path = config.output.join("checkpoint.bin");
    let metrics_path = config.output.join("metrics.jsonl");
    let mut metrics_file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&metrics_path)?;

    let labeled: Vec<usize> = (0..num_docs).filter(|&i| corpus.docs[i].label.is_some()).collect();
    let unlabeled: Vec<usize> = (0..num_docs).filter(|&i| corpus.docs[i].label.is_none()).collect();

    let mut records = Vec::with_capacity(config.epochs);
    let mut steps: u64 = 0;
    let mut labeled_order = labeled.clone();
    let mut labeled_cursor = labeled_order.len(); // forces a shuffle on first use

    for epoch in 0..config.epochs {
        let mut docs_seen = 0usize;
        let mut sums = (0.0, 0.0, 0.0); // total, reconstruction, kl
        let mut seed_sum: Option<f64> = None;
        let mut ce_sum: Option<f64> = None;
        let mut ce_docs = 0usize;

        let fail = |epoch, source| TrainError::NonFinite { epoch, source };

        match &mut model {
            TrainedModel::Avitm(m) => {
                let mut order: Vec<usize> = (0..num_docs).collect();
                order.shuffle(&mut rng);
                for chunk in order.chunks(config.batch_size) {
                    let w = gather_rows(&dense, chunk);
                    let eps = normal_matrix(&mut rng, chunk.len(), m.k);
                    let mut tape = Tape::new();
                    let loss = m.build_loss(&mut tape, &w, &eps);
                    tape.backward(loss.total).map_err(|e| fail(epoch, e))?;
                    tape.accumulate_param_grads(&mut m.store);
                    main_opt.step(&mut m.store).map_err(|e| fail(epoch, e))?;
                    steps += 1;
                    docs_seen += chunk.len();
                    sums.0 += tape.scalar(loss.total);
                    sums.1 += tape.scalar(loss.reconstruction);
                    sums.2 += tape.scalar(loss.kl);
                }
            }
            TrainedModel::Aviad(m) => {
                let mut order: Vec<usize> = (0..num_docs).collect();
                order.shuffle(&mut rng);
                for chunk in order.chunks(config.batch_size) {
                    let w = gather_rows(&dense, chunk);
                    let eps = normal_matrix(&mut rng, chunk.len(), m.base.k);
                    let mut tape = Tape::new();
                    let loss = m.build_loss(&mut tape, &w, &eps);
                    tape.backward(loss.total).map_err(|e| fail(epoch, e))?;
                    tape.accumulate_param_grads(&mut m.base.store);
                    main_opt.step(&mut m.base.store).map_err(|e| fail(epoch, e))?;
                    steps += 1;
                    docs_seen += chunk.len();
                    sums.0 += tape.scalar(loss.total);
                    sums.1 += tape.scalar(loss.reconstruction);
                    sums.2 += tape.scalar(loss.kl);
                    if let Some(s) = loss.seed {
                        *seed_sum.get_or_insert(0.0) += tape.scalar(s);
                    }
                }
            }
            TrainedModel::Avijst(m) => {
                // each step takes one unlabeled batch, then one labeled batch
                // while labels exist; a pool that is empty is skipped
                let mut batches: Vec<Vec<usize>> = Vec::new();
                if unlabeled.is_empty() {
                    let mut order = labeled.clone();
                    order.shuffle(&mut rng);
                    for chunk in order.chunks(config.batch_size) {
                        batches.push(chunk.to_vec());
                    }
                } else {
                    let mut order = unlabeled.clone();
                    order.shuffle(&mut rng);
                    for chunk in order.chunks(config.batch_size) {
                        batches.push(chunk.to_vec());
                        if labeled.is_empty() {
                            continue;
                        }
                        let take = config.batch_size.min(labeled_order.len());
                        let mut picked = Vec::with_capacity(take);
                        for _ in 0..take {
                            if labeled_cursor >= labeled_order.len() {
                                labeled_order.shuffle(&mut rng);
                                labeled_cursor = 0;
                            }
                            picked.push(labeled_order[labeled_cursor]);
                            labeled_cursor += 1;
                        }
                        batches.push(picked);
                    }
                }
                for chunk in &batches {
                    let w = gather_rows(&dense, chunk);
                    let labels: Vec<Option<usize>> =
                        chunk.iter().map(|&i| corpus.docs[i].label).collect();
                    let theta_eps: Vec<Tensor2> = (0..m.s)
                        .map(|_| normal_matrix(&mut rng, chunk.len(), m.k))
                        .collect();
                    let pi_eps = match m.pi_sampling {
                        avitopics::avijst::PiSampling::Deterministic => None,
                        avitopics::avijst::PiSampling::Reparameterized => {
                            Some(normal_matrix(&mut rng, chunk.len(), m.s))
                        }
                    };
                    let mut tape = Tape::new();
                    let loss = m.build_loss(&mut tape, &w, &labels, &theta_eps, pi_eps.as_ref());
                    tape.backward(loss.total).map_err(|e| fail(epoch, e))?;
                    tape.accumulate_param_grads(&mut m.store);
                    main_opt.step(&mut m.store).map_err(|e| fail(epoch, e))?;
                    cls_opt
                        .as_mut()
                        .expect("avijst has a classifier group")
                        .step(&mut m.store)
                        .map_err(|e| fail(epoch, e))?;
                    steps += 1;
                    docs_seen += chunk.len();
                    sums.0 += tape.scalar(loss.total);
                    sums.1 += tape.scalar(loss.reconstruction);
                    sums.2 += tape.scalar(loss.kl_pi)
                        + loss.kl_theta.iter().map(|&t| tape.scalar(t)).sum::<f64>();
                    if let Some(ce) = loss.classification {
                        *ce_sum.get_or_insert(0.0) += tape.scalar(ce);
                        ce_docs += labels.iter().flatten().count();
                    }
                }
            }
        }

        let per_doc = 1.0 / docs_seen.max(1) as f64;
        let mut record = EpochRecord {
            epoch,
            loss: sums.0 * per_doc,
            reconstruction: sums.1 * per_doc,
            kl: sums.2 * per_doc,
            seed_loss: seed_sum,
            classification: ce_sum.map(|s| s / ce_docs.max(1) as f64),
            npmi: None,
            labeled_accuracy: None,
        };

        if config.npmi_every > 0 && (epoch + 1) % config.npmi_every == 0 {
            let n = config.npmi_top_n.min(v);
            if n >= 2 {
                let topics = ranked_topics(&model, n);
                if let Ok(report) = npmi(&topics, corpus, n, 1e-12) {
                    record.npmi = Some(report.mean);
                }
            }
        }
        if let TrainedModel::Avijst(m) = &model {
            if !labeled.is_empty() {
                record.labeled_accuracy =
                    Some(labeled_argmax_accuracy(m, corpus, &dense, &labeled, config.batch_size));
            }
        }

        serde_json::to_writer(&mut metrics_file, &record).map_err(std::io::Error::from)?;
        metrics_file.write_all(b"\n")?;
        metrics_file.flush()?;
        records.push(record);

        let manifest = build_manifest(config, &model, corpus, steps);
        save(&checkpoint_path, &manifest, model.store())?;
    }

    Ok(TrainResult {
        model,
        records,
        checkpoint: checkpoint_path,
        metrics: metrics_path,
        steps,
    })
}

/// Ranked top-word id lists for whatever the model's topics are.
pub fn ranked_topics(model: &TrainedModel, n: usize) -> Vec<Vec<usize>> {
    let ids = |list: Vec<Vec<(usize, f64)>>| -> Vec<Vec<usize>> {
        list.into_iter()
            .map(|t| t.into_iter().map(|(w, _)| w).collect())
            .collect()
    };
    match model {
        TrainedModel::Avitm(m) => ids(top_words(&m.topic_word_weights(), n).expect("n <= v")),
        TrainedModel::Aviad(m) => {
            ids(top_words(&m.base.topic_word_weights(), n).expect("n <= v"))
        }
        TrainedModel::Avijst(m) => {
            let betas: Vec<_> = (0..m.s).map(|s| m.topic_word_weights(s)).collect();
            joint_top_words(&betas, n)
                .expect("n <= v")
                .into_iter()
                .flat_map(ids)
                .collect()
        }
    }
}

fn labeled_argmax_accuracy(
    model: &AvijstModel,
    corpus: &BowCorpus,
    dense: &[Vec<f64>],
    labeled: &[usize],
    batch_size: usize,
) -> f64 {
    let mut correct = 0usize;
    for chunk in labeled.chunks(batch_size) {
        let w = gather_rows(dense, chunk);
        let pi = model.classify_sentiment(&w);
        for (r, &doc) in chunk.iter().enumerate() {
            let row = pi.row(r);
            let pred = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite"))
                .map(|(i, _)| i)
                .expect("s >= 1");
            if corpus.docs[doc].label == Some(pred) {
                correct += 1;
            }
        }
    }
    correct as f64 / labeled.len() as f64
}

pub fn build_manifest(
    config: &TrainConfig,
    model: &TrainedModel,
    corpus: &BowCorpus,
    steps: u64,
) -> CheckpointManifest {
    let seeds = match model {
        TrainedModel::Aviad(m) => Some(seed_entries(&m.seed)),
        _ => None,
    };
    CheckpointManifest {
        format_version: FORMAT_VERSION,
        model: config.model,
        k: config.k,
        s: match model {
            TrainedModel::Avijst(m) => m.s,
            _ => 1,
        },
        v: corpus.vocab_size(),
        hidden: config.hidden.clone(),
        alpha: config.alpha,
        gamma: config.gamma,
        lambda_seed: config.lambda_seed,
        lambda_nu: config.lambda_nu,
        pi_sampling: config.pi_sampling,
        step: steps,
        config_hash: config.hash(),
        vocab_hash: vocab_hash(&corpus.vocabulary),
        vocabulary: corpus.vocabulary.terms().to_vec(),
        seeds,
        params: param_entries(model.store()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use avitopics::corpus::{BowDocument, Vocabulary};
    use std::collections::BTreeMap;

    fn tiny_corpus(labels: &[Option<usize>]) -> BowCorpus {
        let vocab =
            Vocabulary::from_terms((0..6).map(|i| format!("w{i}")).collect()).unwrap();
        let docs = labels
            .iter()
            .enumerate()
            .map(|(id, &label)| {
                let mut counts = BTreeMap::new();
                counts.insert(id % 6, 2u32);
                counts.insert((id + 3) % 6, 1u32);
                BowDocument { id, counts, label }
            })
            .collect();
        BowCorpus::new(vocab, docs)
    }

    fn tiny_config(dir: &std::path::Path, model: ModelKind) -> TrainConfig {
        TrainConfig {
            model,
            k: 2,
            s: 2,
            epochs: 2,
            batch_size: 4,
            hidden: vec![8],
            npmi_every: 1,
            npmi_top_n: 3,
            output: dir.to_path_buf(),
            ..TrainConfig::default()
        }
    }

    #[test]
    fn avitm_smoke_run_writes_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = tiny_corpus(&[None; 8]);
        let config = tiny_config(dir.path(), ModelKind::Avitm);
        let result = train_model(&config, &corpus, None).unwrap();
        assert_eq!(result.records.len(), 2);
        assert!(result.records.iter().all(|r| r.loss.is_finite()));
        assert!(result.records[0].npmi.is_some());
        assert!(result.checkpoint.exists());
        let text = std::fs::read_to_string(&result.metrics).unwrap();
        // JSON-lines: every line parses on its own
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        for line in lines {
            let parsed: serde_json::Value = serde_json::from_str(line).unwrap();
            assert!(parsed.get("loss").is_some());
        }
    }

    #[test]
    fn aviad_without_seeds_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = tiny_corpus(&[None; 4]);
        let config = tiny_config(dir.path(), ModelKind::Aviad);
        assert!(matches!(
            train_model(&config, &corpus, None),
            Err(TrainError::MissingSeeds)
        ));
    }

    #[test]
    fn avijst_trains_without_labels_and_rejects_bad_ones() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = tiny_corpus(&[None; 6]);
        let config = tiny_config(dir.path(), ModelKind::Avijst);
        let result = train_model(&config, &corpus, None).unwrap();
        assert!(result.records.iter().all(|r| r.classification.is_none()));
        assert!(result.records.iter().all(|r| r.labeled_accuracy.is_none()));

        let bad = tiny_corpus(&[Some(5), None, None, None]);
        assert!(matches!(
            train_model(&config, &bad, None),
            Err(TrainError::LabelOutOfRange { label: 5, .. })
        ));
    }

    #[test]
    fn avijst_mixed_labels_logs_ce_and_accuracy() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = tiny_corpus(&[Some(0), None, Some(1), None, None, None]);
        let config = tiny_config(dir.path(), ModelKind::Avijst);
        let result = train_model(&config, &corpus, None).unwrap();
        for r in &result.records {
            assert!(r.classification.is_some());
            let acc = r.labeled_accuracy.unwrap();
            assert!((0.0..=1.0).contains(&acc));
        }
    }

    #[test]
    fn same_seed_same_checkpoint_bytes() {
        let corpus = tiny_corpus(&[None; 8]);
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let mut c1 = tiny_config(d1.path(), ModelKind::Avitm);
        c1.npmi_every = 0;
        let mut c2 = tiny_config(d2.path(), ModelKind::Avitm);
        c2.npmi_every = 0;
        let r1 = train_model(&c1, &corpus, None).unwrap();
        let r2 = train_model(&c2, &corpus, None).unwrap();
        // output path differs between the two configs, so compare the blobs
        // after the manifest rather than whole files
        let b1 = std::fs::read(&r1.checkpoint).unwrap();
        let b2 = std::fs::read(&r2.checkpoint).unwrap();
        let skip1 = manifest_end(&b1);
        let skip2 = manifest_end(&b2);
        assert_eq!(&b1[skip1..], &b2[skip2..]);
    }

    fn manifest_end(bytes: &[u8]) -> usize {
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        16 + len
    }
}
