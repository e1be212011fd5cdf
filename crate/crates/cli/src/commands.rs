//! The work behind each subcommand, separated from argument parsing so the
//! operations are callable (and testable) as a library.

use std::path::{Path, PathBuf};

use avitopics::avijst::{sentiment_top_words, AvijstModel};
use avitopics::avitm::{top_words, TopWordsError};
use avitopics::corpus::{load_labeled_corpus, parse_seed_file, BowCorpus, CorpusError, Vocabulary};
use avitopics::diffcore::Tensor2;
use avitopics::eval::{
    accuracy, align_topics, aspect_report, npmi, ClassificationReport, CoherenceReport, EvalError,
    TopicAlignment,
};
use avitopics::genmodel::{
    sample_jst_corpus, sample_lda_corpus, GenError, SyntheticManifest, SyntheticSpec,
};
use serde::Serialize;
use thiserror::Error;

use crate::checkpoint::{load, rebuild_model, vocab_hash, CheckpointError, TrainedModel};
use crate::config::{ModelKind, TrainConfig};
use crate::train::{ranked_topics, train_model, TrainError, TrainResult};

#[derive(Debug, Error)]
pub enum CommandError {
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    TopWords(#[from] TopWordsError),
    #[error(transparent)]
    Gen(#[from] GenError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest: {0}")]
    Json(#[from] serde_json::Error),
    #[error("corpus has no labeled documents to score")]
    NoLabels,
    #[error("synthetic manifest dims {manifest:?} do not match checkpoint dims {checkpoint:?}")]
    ManifestDims {
        manifest: (usize, usize, usize),
        checkpoint: (usize, usize, usize),
    },
}

pub fn cmd_train(config: &TrainConfig) -> Result<TrainResult, CommandError> {
    config.validate()?;
    let vocab = Vocabulary::load(&config.vocab)?;
    let corpus = load_labeled_corpus(&config.corpus, config.labels.as_deref(), &vocab)?;
    let seeds = match &config.seeds {
        Some(path) => Some(parse_seed_file(path, &vocab, config.k)?),
        None => None,
    };
    Ok(train_model(config, &corpus, seeds.as_ref())?)
}

type NamedWords = Vec<(String, f64)>;

#[derive(Debug, Serialize)]
pub struct TopWordsReport {
    pub model: ModelKind,
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub topics: Option<Vec<NamedWords>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sentiment_topics: Option<Vec<Vec<NamedWords>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sentiment_words: Option<Vec<NamedWords>>,
}

impl TopWordsReport {
    pub fn text(&self) -> String {
        fn row(words: &NamedWords) -> String {
            words
                .iter()
                .map(|(w, p)| format!("{w} ({p:.4})"))
                .collect::<Vec<_>>()
                .join("  ")
        }
        let mut out = String::new();
        if let Some(topics) = &self.topics {
            for (k, words) in topics.iter().enumerate() {
                out.push_str(&format!("topic {k}: {}\n", row(words)));
            }
        }
        if let Some(st) = &self.sentiment_topics {
            for (s, topics) in st.iter().enumerate() {
                for (k, words) in topics.iter().enumerate() {
                    out.push_str(&format!("sentiment {s} topic {k}: {}\n", row(words)));
                }
            }
        }
        if let Some(sw) = &self.sentiment_words {
            for (s, words) in sw.iter().enumerate() {
                out.push_str(&format!("sentiment {s} nu: {}\n", row(words)));
            }
        }
        out
    }
}

fn name_words(vocab: &Vocabulary, ranked: Vec<Vec<(usize, f64)>>) -> Vec<NamedWords> {
    ranked
        .into_iter()
        .map(|words| {
            words
                .into_iter()
                .map(|(id, p)| (vocab.term(id).to_string(), p))
                .collect()
        })
        .collect()
}

pub fn cmd_topwords(checkpoint: &Path, n: usize) -> Result<TopWordsReport, CommandError> {
    let (manifest, store) = load(checkpoint)?;
    let model = rebuild_model(&manifest, &store)?;
    let vocab = manifest.vocabulary()?;
    let report = match &model {
        TrainedModel::Avitm(m) => TopWordsReport {
            model: manifest.model,
            n,
            topics: Some(name_words(&vocab, top_words(&m.topic_word_weights(), n)?)),
            sentiment_topics: None,
            sentiment_words: None,
        },
        TrainedModel::Aviad(m) => TopWordsReport {
            model: manifest.model,
            n,
            topics: Some(name_words(
                &vocab,
                top_words(&m.base.topic_word_weights(), n)?,
            )),
            sentiment_topics: None,
            sentiment_words: None,
        },
        TrainedModel::Avijst(m) => {
            let mut per_sentiment = Vec::with_capacity(m.s);
            for s in 0..m.s {
                per_sentiment.push(name_words(
                    &vocab,
                    top_words(&m.topic_word_weights(s), n)?,
                ));
            }
            TopWordsReport {
                model: manifest.model,
                n,
                topics: None,
                sentiment_topics: Some(per_sentiment),
                sentiment_words: Some(name_words(
                    &vocab,
                    sentiment_top_words(&m.sentiment_word_weights(), n)?,
                )),
            }
        }
    };
    Ok(report)
}

#[derive(Debug, Serialize)]
pub struct AlignmentSection {
    /// One entry per β slice (avitm/aviad: one; avijst: S).
    pub per_slice: Vec<TopicAlignment>,
    pub mean_cosine: f64,
}

#[derive(Debug, Serialize)]
pub struct EvalReport {
    pub coherence: CoherenceReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classification: Option<ClassificationReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sentiment_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alignment: Option<AlignmentSection>,
}

impl EvalReport {
    pub fn text(&self) -> String {
        let mut out = String::from("== coherence ==\n");
        out.push_str(&self.coherence.text_table());
        if let Some(c) = &self.classification {
            out.push_str("== classification ==\n");
            out.push_str(&c.text_table());
        }
        if let Some(a) = &self.sentiment_accuracy {
            out.push_str(&format!("sentiment accuracy: {a:.4}\n"));
        }
        if let Some(align) = &self.alignment {
            out.push_str("== alignment vs ground truth ==\n");
            for (s, a) in align.per_slice.iter().enumerate() {
                out.push_str(&format!(
                    "slice {s}: matched {:?}, cosines {:?}\n",
                    a.matched_true,
                    a.cosines
                        .iter()
                        .map(|c| (c * 1e4).round() / 1e4)
                        .collect::<Vec<_>>()
                ));
            }
            out.push_str(&format!("mean cosine: {:.4}\n", align.mean_cosine));
        }
        out
    }
}

fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite"))
        .map(|(i, _)| i)
        .expect("nonempty row")
}

fn dense_batches(corpus: &BowCorpus, batch: usize) -> impl Iterator<Item = (Vec<usize>, Tensor2)> + '_ {
    let v = corpus.vocab_size();
    let idx: Vec<usize> = (0..corpus.num_docs()).collect();
    idx.chunks(batch)
        .map(|chunk| {
            let w = Tensor2::from_fn(chunk.len(), v, |r, c| {
                *corpus.docs[chunk[r]].to_dense(v).get(c).expect("dense row")
            });
            (chunk.to_vec(), w)
        })
        .collect::<Vec<_>>()
        .into_iter()
}

fn learned_slices(model: &TrainedModel) -> Vec<Tensor2> {
    match model {
        TrainedModel::Avitm(m) => vec![m.topic_word_weights().normalized()],
        TrainedModel::Aviad(m) => vec![m.base.topic_word_weights().normalized()],
        TrainedModel::Avijst(m) => (0..m.s)
            .map(|s| m.topic_word_weights(s).normalized())
            .collect(),
    }
}

pub struct EvalArgs<'a> {
    pub checkpoint: &'a Path,
    pub corpus: &'a Path,
    pub labels: Option<&'a Path>,
    pub vocab: Option<&'a Path>,
    pub synthetic_manifest: Option<&'a Path>,
    pub top_n: usize,
}

pub fn cmd_eval(args: &EvalArgs) -> Result<EvalReport, CommandError> {
    let (manifest, store) = load(args.checkpoint)?;
    let model = rebuild_model(&manifest, &store)?;
    let vocab = manifest.vocabulary()?;
    if let Some(vocab_path) = args.vocab {
        let provided = Vocabulary::load(vocab_path)?;
        let provided_hash = vocab_hash(&provided);
        if provided_hash != manifest.vocab_hash {
            return Err(CheckpointError::VocabHashMismatch {
                checkpoint: manifest.vocab_hash.clone(),
                provided: provided_hash,
            }
            .into());
        }
    }
    let corpus = load_labeled_corpus(args.corpus, args.labels, &vocab)?;

    let top_n = args.top_n.min(corpus.vocab_size());
    let coherence = npmi(&ranked_topics(&model, top_n), &corpus, top_n, 1e-12)?;

    // alignment against a synthetic ground-truth manifest
    let alignment = match args.synthetic_manifest {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            let truth: SyntheticManifest = serde_json::from_str(&text)?;
            let learned = learned_slices(&model);
            let dims = (truth.s, truth.k, truth.v);
            let have = (
                learned.len(),
                manifest.k,
                manifest.v,
            );
            if dims != have {
                return Err(CommandError::ManifestDims {
                    manifest: dims,
                    checkpoint: have,
                });
            }
            let per_slice: Vec<TopicAlignment> = learned
                .iter()
                .zip(&truth.true_beta)
                .map(|(l, t)| {
                    let rows: Vec<Vec<f64>> = t.clone();
                    align_topics(l, &Tensor2::from_rows(&rows))
                })
                .collect::<Result<_, _>>()?;
            let mean_cosine =
                per_slice.iter().map(|a| a.mean_cosine).sum::<f64>() / per_slice.len() as f64;
            Some(AlignmentSection {
                per_slice,
                mean_cosine,
            })
        }
        None => None,
    };

    // classification over the labeled subset
    let labeled: Vec<usize> = (0..corpus.num_docs())
        .filter(|&i| corpus.docs[i].label.is_some())
        .collect();
    let (classification, sentiment_accuracy) = if labeled.is_empty() {
        (None, None)
    } else {
        let gold: Vec<usize> = labeled
            .iter()
            .map(|&i| corpus.docs[i].label.expect("filtered"))
            .collect();
        match &model {
            TrainedModel::Avijst(m) => {
                let mut preds = Vec::with_capacity(labeled.len());
                let v = corpus.vocab_size();
                for chunk in labeled.chunks(256) {
                    let w = Tensor2::from_fn(chunk.len(), v, |r, c| {
                        corpus.docs[chunk[r]].to_dense(v)[c]
                    });
                    let pi = m.classify_sentiment(&w);
                    for r in 0..chunk.len() {
                        preds.push(argmax(pi.row(r)));
                    }
                }
                let report = aspect_report(&preds, &gold, m.s)?;
                let acc = accuracy(&preds, &gold)?;
                (Some(report), Some(acc))
            }
            TrainedModel::Avitm(m) => {
                let mapping = alignment
                    .as_ref()
                    .map(|a| a.per_slice[0].matched_true.clone());
                let preds = theta_predictions(m, &corpus, &labeled, mapping.as_deref());
                (Some(aspect_report(&preds, &gold, m.k)?), None)
            }
            TrainedModel::Aviad(m) => {
                // seed-defined topic index IS the class index
                let preds = theta_predictions(&m.base, &corpus, &labeled, None);
                (Some(aspect_report(&preds, &gold, m.base.k)?), None)
            }
        }
    };

    Ok(EvalReport {
        coherence,
        classification,
        sentiment_accuracy,
        alignment,
    })
}

fn theta_predictions(
    model: &avitopics::avitm::AvitmModel,
    corpus: &BowCorpus,
    docs: &[usize],
    mapping: Option<&[usize]>,
) -> Vec<usize> {
    let v = corpus.vocab_size();
    let mut preds = Vec::with_capacity(docs.len());
    for chunk in docs.chunks(256) {
        let w = Tensor2::from_fn(chunk.len(), v, |r, c| corpus.docs[chunk[r]].to_dense(v)[c]);
        let theta = model.infer_theta(&w);
        for r in 0..chunk.len() {
            let k = argmax(theta.row(r));
            preds.push(mapping.map_or(k, |m| m[k]));
        }
    }
    preds
}

#[derive(Debug, Serialize)]
pub struct DocDigest {
    pub doc: usize,
    pub sentiment: usize,
    pub sentiment_prob: f64,
    /// Top-2 topics under the predicted sentiment, with proportions.
    pub topics: Vec<(usize, f64)>,
}

#[derive(Debug, Serialize)]
pub struct SummarizeReport {
    pub digests: Vec<DocDigest>,
    /// rollup[sentiment][topic] = number of documents
    pub rollup: Vec<Vec<usize>>,
}

impl SummarizeReport {
    pub fn text(&self) -> String {
        let mut out = String::new();
        for d in &self.digests {
            let topics = d
                .topics
                .iter()
                .map(|(k, p)| format!("topic {k} ({p:.3})"))
                .collect::<Vec<_>>()
                .join(", ");
            out.push_str(&format!(
                "doc {}: sentiment {} ({:.3}); {topics}\n",
                d.doc, d.sentiment, d.sentiment_prob
            ));
        }
        out.push_str("rollup (rows = sentiment, cols = topic):\n");
        for row in &self.rollup {
            let cells = row
                .iter()
                .map(|c| format!("{c:>6}"))
                .collect::<Vec<_>>()
                .join(" ");
            out.push_str(&cells);
            out.push('\n');
        }
        out
    }
}

pub fn cmd_summarize(checkpoint: &Path, docs: &Path) -> Result<SummarizeReport, CommandError> {
    let (manifest, store) = load(checkpoint)?;
    let model = match rebuild_model(&manifest, &store)? {
        TrainedModel::Avijst(m) => m,
        other => {
            return Err(CheckpointError::KindMismatch {
                expected: "avijst".into(),
                found: other.kind(),
            }
            .into())
        }
    };
    let vocab = manifest.vocabulary()?;
    let corpus = load_labeled_corpus(docs, None, &vocab)?;
    Ok(summarize_corpus(&model, &corpus))
}

pub fn summarize_corpus(model: &AvijstModel, corpus: &BowCorpus) -> SummarizeReport {
    let mut digests = Vec::with_capacity(corpus.num_docs());
    let mut rollup = vec![vec![0usize; model.k]; model.s];
    for (chunk, w) in dense_batches(corpus, 256) {
        let pi = model.classify_sentiment(&w);
        let thetas = model.infer_thetas(&w);
        for (r, &doc) in chunk.iter().enumerate() {
            let sentiment = argmax(pi.row(r));
            let theta_row = thetas[sentiment].row(r);
            let mut ranked: Vec<(usize, f64)> =
                theta_row.iter().copied().enumerate().collect();
            ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite").then(a.0.cmp(&b.0)));
            ranked.truncate(2);
            rollup[sentiment][ranked[0].0] += 1;
            digests.push(DocDigest {
                doc,
                sentiment,
                sentiment_prob: pi.get(r, sentiment),
                topics: ranked,
            });
        }
    }
    SummarizeReport { digests, rollup }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SyntheticKind {
    Lda,
    Jst,
}

pub struct GenArgs {
    pub kind: SyntheticKind,
    pub out: PathBuf,
    pub seed: u64,
    pub label_fraction: Option<f64>,
    pub gamma: Option<f64>,
    pub num_docs: Option<usize>,
}

pub fn cmd_gen_synthetic(args: &GenArgs) -> Result<SyntheticSpec, CommandError> {
    let mut spec = match args.kind {
        SyntheticKind::Lda => SyntheticSpec::lda_desk(args.seed),
        SyntheticKind::Jst => SyntheticSpec::jst_desk(args.seed),
    };
    if let Some(f) = args.label_fraction {
        spec.label_fraction = f;
    }
    if let Some(g) = args.gamma {
        spec.gamma = g;
    }
    if let Some(n) = args.num_docs {
        spec.num_docs = n;
    }
    let corpus = match args.kind {
        SyntheticKind::Lda => sample_lda_corpus(&spec)?,
        SyntheticKind::Jst => sample_jst_corpus(&spec)?,
    };
    corpus.write_files(&args.out)?;
    Ok(spec)
}
