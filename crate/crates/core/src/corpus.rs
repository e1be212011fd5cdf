//! Vocabulary construction, bag-of-words corpora, seed and label files.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("vocabulary is empty after filtering")]
    EmptyVocabulary,
    #[error("document has no in-vocabulary tokens")]
    EmptyDocument,
    #[error("document {line} has no in-vocabulary tokens")]
    EmptyDocumentAt { line: usize },
    #[error("seed file has {actual} aspect lines, expected {expected}")]
    SeedLineCount { expected: usize, actual: usize },
    #[error("seed file line {line} is malformed (want `name<TAB>word word ...`)")]
    SeedFormat { line: usize },
    #[error("no seed word survived vocabulary filtering")]
    NoSeedsSurvived,
    #[error("{docs} documents but {labels} labels")]
    LabelCountMismatch { docs: usize, labels: usize },
    #[error("label file line {line}: `{value}` is not an integer")]
    BadLabel { line: usize, value: String },
    #[error("vocabulary file line {line} is malformed (want `token<TAB>id` sorted by id)")]
    VocabFormat { line: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Dense token ↔ id bijection. Ids are assigned by descending corpus
/// frequency, ties by token string.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    terms: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl Vocabulary {
    pub fn from_terms(terms: Vec<String>) -> Result<Self, CorpusError> {
        if terms.is_empty() {
            return Err(CorpusError::EmptyVocabulary);
        }
        let mut index = BTreeMap::new();
        for (i, t) in terms.iter().enumerate() {
            let clash = index.insert(t.clone(), i);
            assert!(clash.is_none(), "duplicate vocabulary term {t:?}");
        }
        Ok(Vocabulary { terms, index })
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn term(&self, id: usize) -> &str {
        &self.terms[id]
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        let mut out = String::new();
        for (i, t) in self.terms.iter().enumerate() {
            out.push_str(t);
            out.push('\t');
            out.push_str(&i.to_string());
            out.push('\n');
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = fs::read_to_string(path)?;
        let mut terms = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let (token, id) = line
                .split_once('\t')
                .ok_or(CorpusError::VocabFormat { line: i + 1 })?;
            let id: usize = id
                .trim()
                .parse()
                .map_err(|_| CorpusError::VocabFormat { line: i + 1 })?;
            if id != i {
                return Err(CorpusError::VocabFormat { line: i + 1 });
            }
            terms.push(token.to_string());
        }
        Vocabulary::from_terms(terms)
    }
}

/// One document as sparse token counts plus an optional class label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BowDocument {
    pub id: usize,
    pub counts: BTreeMap<usize, u32>,
    pub label: Option<usize>,
}

impl BowDocument {
    pub fn total_count(&self) -> u64 {
        self.counts.values().map(|&c| c as u64).sum()
    }

    /// Dense count vector of length `v`.
    pub fn to_dense(&self, v: usize) -> Vec<f64> {
        let mut row = vec![0.0; v];
        for (&id, &c) in &self.counts {
            row[id] = c as f64;
        }
        row
    }
}

#[derive(Debug, Clone)]
pub struct BowCorpus {
    pub vocabulary: Vocabulary,
    pub docs: Vec<BowDocument>,
    pub num_labeled: usize,
}

impl BowCorpus {
    pub fn new(vocabulary: Vocabulary, docs: Vec<BowDocument>) -> Self {
        let num_labeled = docs.iter().filter(|d| d.label.is_some()).count();
        for d in &docs {
            for &id in d.counts.keys() {
                assert!(id < vocabulary.len(), "doc {} has token id {id} ≥ V", d.id);
            }
        }
        BowCorpus {
            vocabulary,
            docs,
            num_labeled,
        }
    }

    pub fn num_docs(&self) -> usize {
        self.docs.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocabulary.len()
    }
}

/// Per-seed-word target topic distributions (rows of the prior matrix).
#[derive(Debug, Clone)]
pub struct SeedPrior {
    pub assignments: BTreeMap<usize, Vec<f64>>,
    /// Seed words skipped because they are not in the vocabulary.
    pub oov_words: Vec<String>,
    pub k: usize,
}

impl SeedPrior {
    pub fn num_seeds(&self) -> usize {
        self.assignments.len()
    }
}

/// Keeps tokens seen at least `min_count` times; if more than `max_vocab`
/// survive, keeps the most frequent. Ties break by token string, and ids
/// follow the same order.
pub fn build_vocabulary(
    raw_docs: &[Vec<String>],
    min_count: u32,
    max_vocab: usize,
) -> Result<Vocabulary, CorpusError> {
    let mut freq: BTreeMap<&str, u32> = BTreeMap::new();
    for doc in raw_docs {
        for tok in doc {
            *freq.entry(tok).or_insert(0) += 1;
        }
    }
    let mut kept: Vec<(&str, u32)> = freq.into_iter().filter(|&(_, c)| c >= min_count).collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    kept.truncate(max_vocab);
    if kept.is_empty() {
        return Err(CorpusError::EmptyVocabulary);
    }
    Vocabulary::from_terms(kept.into_iter().map(|(t, _)| t.to_string()).collect())
}

/// Counts in-vocabulary tokens; out-of-vocabulary tokens are dropped.
pub fn to_bow(tokens: &[String], vocab: &Vocabulary) -> Result<BowDocument, CorpusError> {
    assert!(!vocab.is_empty(), "to_bow with empty vocabulary");
    let mut counts = BTreeMap::new();
    for tok in tokens {
        if let Some(id) = vocab.id(tok) {
            *counts.entry(id).or_insert(0u32) += 1;
        }
    }
    if counts.is_empty() {
        return Err(CorpusError::EmptyDocument);
    }
    Ok(BowDocument {
        id: 0,
        counts,
        label: None,
    })
}

/// Parses `name<TAB>word word ...`, one line per aspect, exactly `k` lines.
///
/// An in-vocabulary seed word listed under one aspect gets that aspect's
/// one-hot row; a word listed under several aspects gets their uniform
/// mixture. Out-of-vocabulary words are collected (and logged), not fatal.
pub fn parse_seed_file(path: &Path, vocab: &Vocabulary, k: usize) -> Result<SeedPrior, CorpusError> {
    let text = fs::read_to_string(path)?;
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    if lines.len() != k {
        return Err(CorpusError::SeedLineCount {
            expected: k,
            actual: lines.len(),
        });
    }
    let mut aspects_of: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    let mut oov_words = Vec::new();
    for (aspect, line) in lines.iter().enumerate() {
        let (_, words) = line
            .split_once('\t')
            .ok_or(CorpusError::SeedFormat { line: aspect + 1 })?;
        for word in words.split_whitespace() {
            match vocab.id(word) {
                Some(id) => {
                    aspects_of.entry(id).or_default().insert(aspect);
                }
                None => {
                    log::warn!("seed word {word:?} not in vocabulary, skipped");
                    oov_words.push(word.to_string());
                }
            }
        }
    }
    if aspects_of.is_empty() {
        return Err(CorpusError::NoSeedsSurvived);
    }
    let assignments = aspects_of
        .into_iter()
        .map(|(id, aspects)| {
            let mut row = vec![0.0; k];
            let w = 1.0 / aspects.len() as f64;
            for a in aspects {
                row[a] = w;
            }
            (id, row)
        })
        .collect();
    Ok(SeedPrior {
        assignments,
        oov_words,
        k,
    })
}

/// Loads one whitespace-tokenized document per line, with an optional
/// parallel label file (`-1` = unlabeled).
pub fn load_labeled_corpus(
    doc_path: &Path,
    label_path: Option<&Path>,
    vocab: &Vocabulary,
) -> Result<BowCorpus, CorpusError> {
    let text = fs::read_to_string(doc_path)?;
    let doc_lines: Vec<&str> = text.lines().collect();

    let labels: Vec<Option<usize>> = match label_path {
        None => vec![None; doc_lines.len()],
        Some(lp) => {
            let ltext = fs::read_to_string(lp)?;
            let raw: Vec<&str> = ltext.lines().collect();
            if raw.len() != doc_lines.len() {
                return Err(CorpusError::LabelCountMismatch {
                    docs: doc_lines.len(),
                    labels: raw.len(),
                });
            }
            raw.iter()
                .enumerate()
                .map(|(i, s)| {
                    let v: i64 = s.trim().parse().map_err(|_| CorpusError::BadLabel {
                        line: i + 1,
                        value: s.to_string(),
                    })?;
                    Ok(if v < 0 { None } else { Some(v as usize) })
                })
                .collect::<Result<_, CorpusError>>()?
        }
    };

    let mut docs = Vec::with_capacity(doc_lines.len());
    for (i, line) in doc_lines.iter().enumerate() {
        let tokens: Vec<String> = line.split_whitespace().map(str::to_string).collect();
        let mut doc =
            to_bow(&tokens, vocab).map_err(|_| CorpusError::EmptyDocumentAt { line: i + 1 })?;
        doc.id = i;
        doc.label = labels[i];
        docs.push(doc);
    }
    Ok(BowCorpus::new(vocab.clone(), docs))
}
