//! Forward samplers for the LDA and JST generative processes.
//!
//! Corpora come with full ground truth (β, per-doc θ/π, per-token
//! assignments), so recovery tests have exact oracles. Everything is
//! deterministic under the spec seed.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{BowCorpus, BowDocument, Vocabulary};
use crate::diffcore::Tensor2;

#[derive(Debug, Error)]
pub enum GenError {
    #[error("synthetic spec invalid: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocLength {
    Fixed(usize),
    Poisson(f64),
}

/// Everything needed to sample a corpus with known truth.
///
/// `s = 1` is LDA mode: π is the degenerate point [1]. `beta` holds one
/// K×V matrix per sentiment, rows on the V-simplex.
#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub k: usize,
    pub s: usize,
    pub v: usize,
    pub num_docs: usize,
    pub doc_length: DocLength,
    pub alpha: f64,
    pub gamma: f64,
    pub beta: Vec<Tensor2>,
    /// Fraction of documents whose label is revealed to the trainer.
    pub label_fraction: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Desk-scale LDA corpus: V=200, K=3, 2000 docs of length 50, α=0.1.
    pub fn lda_desk(seed: u64) -> Self {
        SyntheticSpec {
            k: 3,
            s: 1,
            v: 200,
            num_docs: 2000,
            doc_length: DocLength::Fixed(50),
            alpha: 0.1,
            gamma: 1.0,
            beta: vec![planted_topic_beta(3, 200)],
            label_fraction: 1.0,
            seed,
        }
    }

    /// Desk-scale JST corpus: S=2 on top of the LDA dimensions, with 8-token
    /// sentiment-exclusive blocks and topic blocks shared across sentiments.
    pub fn jst_desk(seed: u64) -> Self {
        SyntheticSpec {
            k: 3,
            s: 2,
            v: 200,
            num_docs: 2000,
            doc_length: DocLength::Fixed(50),
            alpha: 0.1,
            gamma: 1.0,
            beta: planted_jst_beta(3, 200, 2, 8, 0.3),
            label_fraction: 1.0,
            seed,
        }
    }

    fn validate(&self) -> Result<(), GenError> {
        if self.k == 0 || self.s == 0 || self.v == 0 || self.num_docs == 0 {
            return Err(GenError::InvalidSpec("zero dimension".into()));
        }
        if !(self.alpha > 0.0) || !(self.gamma > 0.0) {
            return Err(GenError::InvalidSpec("nonpositive concentration".into()));
        }
        if !(0.0..=1.0).contains(&self.label_fraction) {
            return Err(GenError::InvalidSpec("label_fraction outside [0,1]".into()));
        }
        if let DocLength::Poisson(m) = self.doc_length {
            if !(m > 0.0) {
                return Err(GenError::InvalidSpec("nonpositive poisson mean".into()));
            }
        }
        if self.beta.len() != self.s {
            return Err(GenError::InvalidSpec(format!(
                "beta has {} sentiment slices, expected {}",
                self.beta.len(),
                self.s
            )));
        }
        for (si, b) in self.beta.iter().enumerate() {
            if b.shape() != (self.k, self.v) {
                return Err(GenError::InvalidSpec(format!(
                    "beta[{si}] is {:?}, expected ({}, {})",
                    b.shape(),
                    self.k,
                    self.v
                )));
            }
            for r in 0..b.rows() {
                let sum: f64 = b.row(r).iter().sum();
                if (sum - 1.0).abs() > 1e-6 || b.row(r).iter().any(|&p| p < 0.0) {
                    return Err(GenError::InvalidSpec(format!(
                        "beta[{si}] row {r} is not on the simplex"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// K disjoint uniform blocks covering [0, V); the last block takes the
/// remainder.
pub fn planted_topic_beta(k: usize, v: usize) -> Tensor2 {
    assert!(k >= 1 && v >= k, "need at least one word per topic");
    let base = v / k;
    let mut beta = Tensor2::zeros(k, v);
    for topic in 0..k {
        let start = topic * base;
        let end = if topic == k - 1 { v } else { start + base };
        let p = 1.0 / (end - start) as f64;
        for w in start..end {
            beta.set(topic, w, p);
        }
    }
    beta
}

/// JST ground truth: the first `s·excl` tokens form per-sentiment exclusive
/// blocks; the rest is split into K topic blocks shared by every sentiment.
/// Each β_{s,k} row puts `mix` mass uniformly on sentiment block s and the
/// rest on topic block k, so sentiment identity lives only in the exclusive
/// tokens.
pub fn planted_jst_beta(k: usize, v: usize, s: usize, excl: usize, mix: f64) -> Vec<Tensor2> {
    assert!((0.0..1.0).contains(&mix));
    let shared_start = s * excl;
    assert!(v > shared_start + k, "vocabulary too small for the blocks");
    let topic_block = planted_topic_beta(k, v - shared_start);
    (0..s)
        .map(|si| {
            let mut b = Tensor2::zeros(k, v);
            for topic in 0..k {
                for w in 0..excl {
                    b.set(topic, si * excl + w, mix / excl as f64);
                }
                for w in 0..(v - shared_start) {
                    let p = topic_block.get(topic, w);
                    if p > 0.0 {
                        b.set(topic, shared_start + w, (1.0 - mix) * p);
                    }
                }
            }
            b
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ManifestDoc {
    pub theta: Vec<Vec<f64>>,
    pub pi: Vec<f64>,
    pub label: usize,
}

/// Ground truth emitted alongside the corpus files.
#[derive(Debug, Serialize, Deserialize)]
pub struct SyntheticManifest {
    pub k: usize,
    pub s: usize,
    pub v: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub seed: u64,
    pub label_fraction: f64,
    pub true_beta: Vec<Vec<Vec<f64>>>,
    pub docs: Vec<ManifestDoc>,
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    /// What a trainer sees: labels present only on the revealed subset.
    pub corpus: BowCorpus,
    pub true_labels: Vec<usize>,
    /// Per doc, per sentiment: θ_s (LDA mode has the single s = 0 row).
    pub true_theta: Vec<Tensor2>,
    /// Per doc π; [1.0] in LDA mode.
    pub true_pi: Vec<Vec<f64>>,
    /// Per doc, per token position: the sampled (l, z).
    pub assignments: Vec<Vec<(usize, usize)>>,
    /// Per doc token ids in sampled order.
    pub tokens: Vec<Vec<usize>>,
    pub spec: SyntheticSpec,
}

fn sample_dirichlet<R: Rng>(rng: &mut R, alpha: f64, dim: usize) -> Vec<f64> {
    if dim == 1 {
        return vec![1.0];
    }
    let g = Gamma::new(alpha, 1.0).expect("validated alpha");
    loop {
        let draws: Vec<f64> = (0..dim).map(|_| g.sample(rng)).collect();
        let sum: f64 = draws.iter().sum();
        if sum.is_finite() && sum > 1e-300 {
            return draws.into_iter().map(|d| d / sum).collect();
        }
    }
}

fn sample_categorical<R: Rng>(rng: &mut R, p: &[f64]) -> usize {
    let total: f64 = p.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    let mut last = 0;
    for (i, &pi) in p.iter().enumerate() {
        if pi <= 0.0 {
            continue;
        }
        last = i;
        u -= pi;
        if u <= 0.0 {
            return i;
        }
    }
    last
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn doc_len<R: Rng>(rng: &mut R, dist: DocLength) -> usize {
    match dist {
        DocLength::Fixed(n) => n.max(1),
        DocLength::Poisson(mean) => {
            let draw: f64 = Poisson::new(mean).expect("validated mean").sample(rng);
            (draw as usize).max(1)
        }
    }
}

fn synthetic_vocabulary(v: usize) -> Vocabulary {
    let width = (v.max(2) - 1).to_string().len();
    Vocabulary::from_terms((0..v).map(|i| format!("w{i:0width$}")).collect()).unwrap()
}

/// θ ~ Dir(α); per position z ~ Mult(θ), w ~ Mult(β_z). The recorded label
/// is the dominant planted topic argmax θ.
pub fn sample_lda_corpus(spec: &SyntheticSpec) -> Result<SyntheticCorpus, GenError> {
    if spec.s != 1 {
        return Err(GenError::InvalidSpec(format!(
            "lda mode requires s = 1, got {}",
            spec.s
        )));
    }
    sample_joint(spec)
}

/// π ~ Dir(γ), θ_s ~ Dir(α); per position l ~ Mult(π), z ~ Mult(θ_l),
/// w ~ Mult(β_{l,z}). The recorded label is argmax π. S = 1 degenerates to
/// the LDA sampler.
pub fn sample_jst_corpus(spec: &SyntheticSpec) -> Result<SyntheticCorpus, GenError> {
    sample_joint(spec)
}

fn sample_joint(spec: &SyntheticSpec) -> Result<SyntheticCorpus, GenError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let vocab = synthetic_vocabulary(spec.v);

    let mut docs = Vec::with_capacity(spec.num_docs);
    let mut true_labels = Vec::with_capacity(spec.num_docs);
    let mut true_theta = Vec::with_capacity(spec.num_docs);
    let mut true_pi = Vec::with_capacity(spec.num_docs);
    let mut assignments = Vec::with_capacity(spec.num_docs);
    let mut tokens = Vec::with_capacity(spec.num_docs);

    for d in 0..spec.num_docs {
        let pi = sample_dirichlet(&mut rng, spec.gamma, spec.s);
        let mut theta = Tensor2::zeros(spec.s, spec.k);
        for si in 0..spec.s {
            let row = sample_dirichlet(&mut rng, spec.alpha, spec.k);
            theta.row_mut(si).copy_from_slice(&row);
        }
        let n = doc_len(&mut rng, spec.doc_length);

        let mut doc_assign = Vec::with_capacity(n);
        let mut doc_tokens = Vec::with_capacity(n);
        let mut counts: BTreeMap<usize, u32> = BTreeMap::new();
        for _ in 0..n {
            let l = sample_categorical(&mut rng, &pi);
            let z = sample_categorical(&mut rng, theta.row(l));
            let w = sample_categorical(&mut rng, spec.beta[l].row(z));
            doc_assign.push((l, z));
            doc_tokens.push(w);
            *counts.entry(w).or_insert(0) += 1;
        }

        let label = if spec.s > 1 {
            argmax(&pi)
        } else {
            argmax(theta.row(0))
        };
        let revealed = rng.gen::<f64>() < spec.label_fraction;
        docs.push(BowDocument {
            id: d,
            counts,
            label: revealed.then_some(label),
        });
        true_labels.push(label);
        true_theta.push(theta);
        true_pi.push(pi);
        assignments.push(doc_assign);
        tokens.push(doc_tokens);
    }

    Ok(SyntheticCorpus {
        corpus: BowCorpus::new(vocab, docs),
        true_labels,
        true_theta,
        true_pi,
        assignments,
        tokens,
        spec: spec.clone(),
    })
}

impl SyntheticCorpus {
    pub fn manifest(&self) -> SyntheticManifest {
        SyntheticManifest {
            k: self.spec.k,
            s: self.spec.s,
            v: self.spec.v,
            alpha: self.spec.alpha,
            gamma: self.spec.gamma,
            seed: self.spec.seed,
            label_fraction: self.spec.label_fraction,
            true_beta: self
                .spec
                .beta
                .iter()
                .map(|b| (0..b.rows()).map(|r| b.row(r).to_vec()).collect())
                .collect(),
            docs: (0..self.corpus.num_docs())
                .map(|d| ManifestDoc {
                    theta: (0..self.spec.s)
                        .map(|si| self.true_theta[d].row(si).to_vec())
                        .collect(),
                    pi: self.true_pi[d].clone(),
                    label: self.true_labels[d],
                })
                .collect(),
        }
    }

    /// Writes corpus.txt, labels.txt, vocab.tsv and manifest.json into `dir`.
    pub fn write_files(&self, dir: &Path) -> Result<(), GenError> {
        fs::create_dir_all(dir)?;
        let vocab = &self.corpus.vocabulary;

        let mut text = String::new();
        for doc_tokens in &self.tokens {
            let line: Vec<&str> = doc_tokens.iter().map(|&w| vocab.term(w)).collect();
            text.push_str(&line.join(" "));
            text.push('\n');
        }
        fs::write(dir.join("corpus.txt"), text)?;

        let mut labels = String::new();
        for doc in &self.corpus.docs {
            match doc.label {
                Some(l) => labels.push_str(&l.to_string()),
                None => labels.push_str("-1"),
            }
            labels.push('\n');
        }
        fs::write(dir.join("labels.txt"), labels)?;

        vocab
            .save(&dir.join("vocab.tsv"))
            .map_err(|e| GenError::InvalidSpec(e.to_string()))?;
        fs::write(
            dir.join("manifest.json"),
            serde_json::to_string_pretty(&self.manifest())?,
        )?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planted_beta_rows_are_disjoint_and_normalized() {
        let b = planted_topic_beta(3, 10);
        for r in 0..3 {
            let sum: f64 = b.row(r).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
        for w in 0..10 {
            let supports = (0..3).filter(|&r| b.get(r, w) > 0.0).count();
            assert_eq!(supports, 1, "word {w} in {supports} blocks");
        }
    }

    #[test]
    fn planted_jst_beta_shares_topic_blocks() {
        let betas = planted_jst_beta(3, 40, 2, 4, 0.3);
        assert_eq!(betas.len(), 2);
        for b in &betas {
            for r in 0..3 {
                let sum: f64 = b.row(r).iter().sum();
                assert!((sum - 1.0).abs() < 1e-12);
            }
        }
        // sentiment 0's exclusive block is untouched by sentiment 1 and vice versa
        for w in 0..4 {
            assert!(betas[0].get(0, w) > 0.0);
            assert_eq!(betas[1].get(0, w), 0.0);
            assert!(betas[1].get(0, 4 + w) > 0.0);
            assert_eq!(betas[0].get(0, 4 + w), 0.0);
        }
        // shared region has identical support across sentiments
        for k in 0..3 {
            for w in 8..40 {
                assert_eq!(
                    betas[0].get(k, w) > 0.0,
                    betas[1].get(k, w) > 0.0,
                    "k={k} w={w}"
                );
            }
        }
    }

    #[test]
    fn every_token_lies_in_its_assigned_topic_support() {
        let spec = SyntheticSpec {
            num_docs: 50,
            ..SyntheticSpec::lda_desk(3)
        };
        let c = sample_lda_corpus(&spec).unwrap();
        for d in 0..50 {
            for (pos, &w) in c.tokens[d].iter().enumerate() {
                let (l, z) = c.assignments[d][pos];
                assert!(spec.beta[l].get(z, w) > 0.0);
            }
        }
    }

    #[test]
    fn concentrated_alpha_keeps_docs_in_dominant_block() {
        let spec = SyntheticSpec {
            num_docs: 100,
            alpha: 0.001,
            ..SyntheticSpec::lda_desk(4)
        };
        let c = sample_lda_corpus(&spec).unwrap();
        for d in 0..100 {
            let dom = c.true_labels[d];
            let in_block = c.assignments[d].iter().filter(|&&(_, z)| z == dom).count();
            assert!(
                in_block * 10 >= c.tokens[d].len() * 9,
                "doc {d}: {in_block}/{}",
                c.tokens[d].len()
            );
        }
    }

    #[test]
    fn fixed_seed_reproduces_corpus() {
        let spec = SyntheticSpec {
            num_docs: 30,
            ..SyntheticSpec::jst_desk(9)
        };
        let a = sample_jst_corpus(&spec).unwrap();
        let b = sample_jst_corpus(&spec).unwrap();
        assert_eq!(a.tokens, b.tokens);
        assert_eq!(a.true_labels, b.true_labels);
        assert_eq!(a.true_pi, b.true_pi);
    }

    #[test]
    fn fixed_doc_length_is_exact() {
        let spec = SyntheticSpec {
            num_docs: 20,
            doc_length: DocLength::Fixed(17),
            ..SyntheticSpec::lda_desk(1)
        };
        let c = sample_lda_corpus(&spec).unwrap();
        assert!(c.tokens.iter().all(|t| t.len() == 17));
    }

    #[test]
    fn poisson_doc_length_has_plausible_mean() {
        let spec = SyntheticSpec {
            num_docs: 500,
            doc_length: DocLength::Poisson(30.0),
            ..SyntheticSpec::lda_desk(2)
        };
        let c = sample_lda_corpus(&spec).unwrap();
        let mean: f64 = c.tokens.iter().map(|t| t.len() as f64).sum::<f64>() / 500.0;
        assert!((mean - 30.0).abs() < 1.0, "mean {mean}");
    }

    #[test]
    fn label_fraction_masks_labels() {
        let spec = SyntheticSpec {
            num_docs: 400,
            label_fraction: 0.1,
            ..SyntheticSpec::jst_desk(5)
        };
        let c = sample_jst_corpus(&spec).unwrap();
        let revealed = c.corpus.num_labeled;
        assert!(revealed > 10 && revealed < 90, "revealed {revealed}");
        for doc in &c.corpus.docs {
            if let Some(l) = doc.label {
                assert_eq!(l, c.true_labels[doc.id]);
            }
        }
    }

    #[test]
    fn jst_sentiment_blocks_dominate_their_docs() {
        // docs with a decisive π majority draw most tokens via that
        // sentiment, whose exclusive block is then the only sentiment signal
        let spec = SyntheticSpec {
            num_docs: 300,
            gamma: 0.2,
            ..SyntheticSpec::jst_desk(7)
        };
        let c = sample_jst_corpus(&spec).unwrap();
        let mut decisive = 0;
        let mut majority_ok = 0;
        for d in 0..300 {
            let pi = &c.true_pi[d];
            if pi.iter().cloned().fold(0.0, f64::max) < 0.8 {
                continue;
            }
            decisive += 1;
            let lab = c.true_labels[d];
            let from_label = c.assignments[d].iter().filter(|&&(l, _)| l == lab).count();
            if from_label * 2 > c.tokens[d].len() {
                majority_ok += 1;
            }
        }
        assert!(decisive > 150, "only {decisive} decisive docs");
        assert_eq!(majority_ok, decisive);
    }

    #[test]
    fn write_files_round_trips_through_loaders() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec {
            num_docs: 25,
            label_fraction: 0.5,
            ..SyntheticSpec::jst_desk(11)
        };
        let c = sample_jst_corpus(&spec).unwrap();
        c.write_files(dir.path()).unwrap();

        let vocab = crate::corpus::Vocabulary::load(&dir.path().join("vocab.tsv")).unwrap();
        assert_eq!(vocab, c.corpus.vocabulary);
        let loaded = crate::corpus::load_labeled_corpus(
            &dir.path().join("corpus.txt"),
            Some(&dir.path().join("labels.txt")),
            &vocab,
        )
        .unwrap();
        assert_eq!(loaded.num_docs(), 25);
        assert_eq!(loaded.num_labeled, c.corpus.num_labeled);
        for (a, b) in loaded.docs.iter().zip(&c.corpus.docs) {
            assert_eq!(a.counts, b.counts);
            assert_eq!(a.label, b.label);
        }

        let manifest: SyntheticManifest =
            serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap())
                .unwrap();
        assert_eq!(manifest.docs.len(), 25);
        assert_eq!(manifest.true_beta.len(), 2);
        assert_eq!(manifest.true_beta[0].len(), 3);
    }
}
