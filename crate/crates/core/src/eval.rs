//! Scoring: NPMI topic coherence, alignment of learned topics against a
//! reference β, and classification reports for aspect/sentiment predictions.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::BowCorpus;
use crate::diffcore::Tensor2;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("top_n must be at least 2, got {0}")]
    TopNTooSmall(usize),
    #[error("topic {topic} has {have} ranked words, need {need}")]
    NotEnoughWords {
        topic: usize,
        have: usize,
        need: usize,
    },
    #[error("word id {0} outside vocabulary of size {1}")]
    WordOutOfRange(usize, usize),
    #[error("dimension mismatch: learned {learned:?} vs reference {reference:?}")]
    DimMismatch {
        learned: (usize, usize),
        reference: (usize, usize),
    },
    #[error("prediction/gold length mismatch: {predictions} vs {gold}")]
    LengthMismatch { predictions: usize, gold: usize },
    #[error("label {value} outside [0, {classes})")]
    LabelOutOfRange { value: usize, classes: usize },
    #[error("empty input")]
    Empty,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoherenceReport {
    pub per_topic: Vec<f64>,
    pub mean: f64,
    pub top_n: usize,
}

impl CoherenceReport {
    pub fn text_table(&self) -> String {
        let mut out = String::from("topic  npmi\n");
        for (k, v) in self.per_topic.iter().enumerate() {
            out.push_str(&format!("{k:>5}  {v:>8.4}\n"));
        }
        out.push_str(&format!(" mean  {:>8.4}\n", self.mean));
        out
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    pub empty_support: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub classes: Vec<ClassMetrics>,
    pub accuracy: f64,
    /// confusion[gold][predicted]
    pub confusion: Vec<Vec<usize>>,
}

impl ClassificationReport {
    pub fn macro_f1(&self) -> f64 {
        let sum: f64 = self.classes.iter().map(|c| c.f1).sum();
        sum / self.classes.len() as f64
    }

    pub fn text_table(&self) -> String {
        let mut out = String::from("class  precision  recall      f1  support\n");
        for (c, m) in self.classes.iter().enumerate() {
            let note = if m.empty_support { "  (empty)" } else { "" };
            out.push_str(&format!(
                "{c:>5}  {:>9.4}  {:>6.4}  {:>6.4}  {:>7}{note}\n",
                m.precision, m.recall, m.f1, m.support
            ));
        }
        out.push_str(&format!("accuracy: {:.4}\n", self.accuracy));
        out
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TopicAlignment {
    /// matched_true[learned_row] = reference row it was paired with
    pub matched_true: Vec<usize>,
    /// cosine of each pair, indexed by learned row
    pub cosines: Vec<f64>,
    pub mean_cosine: f64,
}

/// Coherence of ranked topic word lists under document-level co-occurrence.
/// For each unordered top-n pair, NPMI = ln((p_ij + ε)/(p_i p_j)) / −ln(p_ij + ε)
/// with probabilities from document frequencies; a topic scores the pair mean.
pub fn npmi(
    topics: &[Vec<usize>],
    corpus: &BowCorpus,
    top_n: usize,
    epsilon: f64,
) -> Result<CoherenceReport, EvalError> {
    if top_n < 2 {
        return Err(EvalError::TopNTooSmall(top_n));
    }
    let num_docs = corpus.num_docs();
    if num_docs == 0 {
        return Err(EvalError::Empty);
    }
    let v = corpus.vocab_size();
    for (k, t) in topics.iter().enumerate() {
        if t.len() < top_n {
            return Err(EvalError::NotEnoughWords {
                topic: k,
                have: t.len(),
                need: top_n,
            });
        }
        for &w in &t[..top_n] {
            if w >= v {
                return Err(EvalError::WordOutOfRange(w, v));
            }
        }
    }

    // presence bitmaps for exactly the words the topics rank
    let mut needed: Vec<usize> = topics
        .iter()
        .flat_map(|t| t[..top_n].iter().copied())
        .collect();
    needed.sort_unstable();
    needed.dedup();
    let slot = |w: usize| needed.binary_search(&w).expect("collected above");
    let mut present = vec![vec![false; num_docs]; needed.len()];
    for (d, doc) in corpus.docs.iter().enumerate() {
        for (&w, &c) in &doc.counts {
            if c > 0 {
                if let Ok(i) = needed.binary_search(&w) {
                    present[i][d] = true;
                }
            }
        }
    }
    let df = |w: usize| present[slot(w)].iter().filter(|&&b| b).count();
    let joint = |a: usize, b: usize| {
        present[slot(a)]
            .iter()
            .zip(&present[slot(b)])
            .filter(|(&x, &y)| x && y)
            .count()
    };

    let d = num_docs as f64;
    let per_topic: Vec<f64> = topics
        .iter()
        .map(|t| {
            let words = &t[..top_n];
            let mut sum = 0.0;
            let mut pairs = 0usize;
            for i in 0..top_n {
                for j in (i + 1)..top_n {
                    let p_i = df(words[i]) as f64 / d;
                    let p_j = df(words[j]) as f64 / d;
                    pairs += 1;
                    if p_i == 0.0 || p_j == 0.0 {
                        // a never-observed word carries no co-occurrence
                        // evidence; score the pair as independent
                        continue;
                    }
                    let p_ij = joint(words[i], words[j]) as f64 / d + epsilon;
                    sum += (p_ij / (p_i * p_j)).ln() / -p_ij.ln();
                }
            }
            sum / pairs as f64
        })
        .collect();
    let mean = per_topic.iter().sum::<f64>() / per_topic.len().max(1) as f64;
    Ok(CoherenceReport {
        per_topic,
        mean,
        top_n,
    })
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Pair learned rows with reference rows by repeatedly taking the highest
/// remaining cosine (greedy, no replacement). Ties break toward lower indices.
pub fn align_topics(learned: &Tensor2, reference: &Tensor2) -> Result<TopicAlignment, EvalError> {
    if learned.shape() != reference.shape() {
        return Err(EvalError::DimMismatch {
            learned: learned.shape(),
            reference: reference.shape(),
        });
    }
    let k = learned.rows();
    if k == 0 {
        return Err(EvalError::Empty);
    }
    let sim = Tensor2::from_fn(k, k, |i, j| cosine(learned.row(i), reference.row(j)));
    let mut matched_true = vec![usize::MAX; k];
    let mut cosines = vec![0.0; k];
    let mut used_learned = vec![false; k];
    let mut used_true = vec![false; k];
    for _ in 0..k {
        let mut best = (f64::NEG_INFINITY, 0, 0);
        for i in 0..k {
            if used_learned[i] {
                continue;
            }
            for j in 0..k {
                if used_true[j] {
                    continue;
                }
                if sim.get(i, j) > best.0 {
                    best = (sim.get(i, j), i, j);
                }
            }
        }
        let (c, i, j) = best;
        used_learned[i] = true;
        used_true[j] = true;
        matched_true[i] = j;
        cosines[i] = c;
    }
    let mean_cosine = cosines.iter().sum::<f64>() / k as f64;
    Ok(TopicAlignment {
        matched_true,
        cosines,
        mean_cosine,
    })
}

/// Per-class precision/recall/F1 from the confusion counts. A class with no
/// gold examples reports recall 0 and is flagged.
pub fn aspect_report(
    predictions: &[usize],
    gold: &[usize],
    classes: usize,
) -> Result<ClassificationReport, EvalError> {
    if predictions.len() != gold.len() {
        return Err(EvalError::LengthMismatch {
            predictions: predictions.len(),
            gold: gold.len(),
        });
    }
    if predictions.is_empty() {
        return Err(EvalError::Empty);
    }
    for &l in predictions.iter().chain(gold) {
        if l >= classes {
            return Err(EvalError::LabelOutOfRange { value: l, classes });
        }
    }
    let mut confusion = vec![vec![0usize; classes]; classes];
    for (&p, &g) in predictions.iter().zip(gold) {
        confusion[g][p] += 1;
    }
    let class_metrics = (0..classes)
        .map(|c| {
            let tp = confusion[c][c];
            let support: usize = confusion[c].iter().sum();
            let predicted: usize = (0..classes).map(|g| confusion[g][c]).sum();
            let precision = if predicted == 0 {
                0.0
            } else {
                tp as f64 / predicted as f64
            };
            let recall = if support == 0 {
                0.0
            } else {
                tp as f64 / support as f64
            };
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                precision,
                recall,
                f1,
                support,
                empty_support: support == 0,
            }
        })
        .collect();
    let correct = predictions.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(ClassificationReport {
        classes: class_metrics,
        accuracy: correct as f64 / predictions.len() as f64,
        confusion,
    })
}

/// Fraction of positions where prediction equals gold.
pub fn accuracy(predictions: &[usize], gold: &[usize]) -> Result<f64, EvalError> {
    if predictions.len() != gold.len() {
        return Err(EvalError::LengthMismatch {
            predictions: predictions.len(),
            gold: gold.len(),
        });
    }
    if predictions.is_empty() {
        return Err(EvalError::Empty);
    }
    let correct = predictions.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(correct as f64 / predictions.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{BowCorpus, BowDocument, Vocabulary};
    use approx::assert_abs_diff_eq;
    use itertools::Itertools;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const EPS: f64 = 1e-12;

    fn corpus_from_docs(v: usize, docs: &[&[usize]]) -> BowCorpus {
        let terms: Vec<String> = (0..v).map(|i| format!("w{i}")).collect();
        let vocab = Vocabulary::from_terms(terms).unwrap();
        let docs = docs
            .iter()
            .enumerate()
            .map(|(id, words)| {
                let mut counts = std::collections::BTreeMap::new();
                for &w in *words {
                    *counts.entry(w).or_insert(0u32) += 1;
                }
                BowDocument {
                    id,
                    counts,
                    label: None,
                }
            })
            .collect();
        BowCorpus::new(vocab, docs)
    }

    #[test]
    fn npmi_perfect_association_approaches_one() {
        // both words in half the docs, always together
        let corpus = corpus_from_docs(4, &[&[0, 1], &[0, 1], &[2], &[3]]);
        let report = npmi(&[vec![0, 1]], &corpus, 2, EPS).unwrap();
        assert!(report.per_topic[0] > 0.99, "{}", report.per_topic[0]);
        // smoothing inside the joint overshoots 1 by O(epsilon)
        assert!(report.per_topic[0] <= 1.0 + 1e-9);
    }

    #[test]
    fn npmi_exact_independence_is_zero() {
        // p(0) = p(1) = 1/2, joint = 1/4 = product
        let corpus = corpus_from_docs(3, &[&[0], &[0, 1], &[1], &[2]]);
        let report = npmi(&[vec![0, 1]], &corpus, 2, EPS).unwrap();
        assert_abs_diff_eq!(report.per_topic[0], 0.0, epsilon = 1e-9);
    }

    #[test]
    fn npmi_matches_hand_counted_oracle() {
        // docs: {0,1} {0,2} {1,2} {0,1,2}; every df = 3/4, every joint = 2/4
        let corpus = corpus_from_docs(3, &[&[0, 1], &[0, 2], &[1, 2], &[0, 1, 2]]);
        let report = npmi(&[vec![0, 1, 2]], &corpus, 3, EPS).unwrap();
        let p = 0.75;
        let pj = 0.5 + EPS;
        let pair = (pj / (p * p)).ln() / -pj.ln();
        assert_abs_diff_eq!(report.per_topic[0], pair, epsilon = 1e-9);
        assert_abs_diff_eq!(report.mean, pair, epsilon = 1e-9);
    }

    #[test]
    fn npmi_counts_multiplicity_once() {
        // repeated tokens within a doc do not inflate document frequency
        let corpus = corpus_from_docs(2, &[&[0, 0, 0, 1], &[0, 1, 1], &[0], &[1]]);
        let plain = corpus_from_docs(2, &[&[0, 1], &[0, 1], &[0], &[1]]);
        let a = npmi(&[vec![0, 1]], &corpus, 2, EPS).unwrap();
        let b = npmi(&[vec![0, 1]], &plain, 2, EPS).unwrap();
        assert_eq!(a.per_topic[0].to_bits(), b.per_topic[0].to_bits());
    }

    #[test]
    fn npmi_unseen_word_scores_as_independent() {
        let corpus = corpus_from_docs(3, &[&[0], &[0], &[0]]);
        let report = npmi(&[vec![0, 1, 2]], &corpus, 3, EPS).unwrap();
        assert_eq!(report.per_topic[0], 0.0);
    }

    #[test]
    fn npmi_input_validation() {
        let corpus = corpus_from_docs(2, &[&[0, 1]]);
        assert!(matches!(
            npmi(&[vec![0, 1]], &corpus, 1, EPS),
            Err(EvalError::TopNTooSmall(1))
        ));
        assert!(matches!(
            npmi(&[vec![0]], &corpus, 2, EPS),
            Err(EvalError::NotEnoughWords { .. })
        ));
        assert!(matches!(
            npmi(&[vec![0, 7]], &corpus, 2, EPS),
            Err(EvalError::WordOutOfRange(7, 2))
        ));
    }

    #[test]
    fn npmi_invariant_to_document_order() {
        let a = corpus_from_docs(3, &[&[0, 1], &[0, 2], &[1, 2], &[0, 1, 2]]);
        let b = corpus_from_docs(3, &[&[0, 1, 2], &[1, 2], &[0, 2], &[0, 1]]);
        let ra = npmi(&[vec![0, 1, 2]], &a, 3, EPS).unwrap();
        let rb = npmi(&[vec![0, 1, 2]], &b, 3, EPS).unwrap();
        assert_abs_diff_eq!(ra.per_topic[0], rb.per_topic[0], epsilon = 1e-15);
    }

    #[test]
    fn align_identical_and_permuted() {
        let m = Tensor2::from_rows(&[
            vec![0.7, 0.1, 0.1, 0.1],
            vec![0.1, 0.7, 0.1, 0.1],
            vec![0.1, 0.1, 0.7, 0.1],
        ]);
        let a = align_topics(&m, &m).unwrap();
        assert_eq!(a.matched_true, vec![0, 1, 2]);
        for c in &a.cosines {
            assert_abs_diff_eq!(*c, 1.0, epsilon = 1e-12);
        }

        let permuted = Tensor2::from_rows(&[m.row(2).to_vec(), m.row(0).to_vec(), m.row(1).to_vec()]);
        let a = align_topics(&permuted, &m).unwrap();
        assert_eq!(a.matched_true, vec![2, 0, 1]);
        assert_abs_diff_eq!(a.mean_cosine, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn align_rejects_dimension_mismatch() {
        let a = Tensor2::zeros(2, 3);
        let b = Tensor2::zeros(2, 4);
        assert!(matches!(
            align_topics(&a, &b),
            Err(EvalError::DimMismatch { .. })
        ));
    }

    #[test]
    fn greedy_alignment_matches_exhaustive_for_small_k() {
        use crate::genmodel::planted_topic_beta;
        use rand_distr::{Distribution, Gamma};
        let mut rng = ChaCha8Rng::seed_from_u64(91);
        let gamma = Gamma::new(0.5, 1.0).unwrap();
        for trial in 0..20 {
            let k = 2 + trial % 3; // 2..=4
            let truth = planted_topic_beta(k, 12);
            let noisy = Tensor2::from_fn(k, 12, |i, j| {
                0.7 * truth.get(i, j) + 0.3 * gamma.sample(&mut rng) / 12.0
            });
            let greedy = align_topics(&noisy, &truth).unwrap();
            let best = (0..k)
                .permutations(k)
                .map(|perm| {
                    perm.iter()
                        .enumerate()
                        .map(|(i, &j)| cosine(noisy.row(i), truth.row(j)))
                        .sum::<f64>()
                        / k as f64
                })
                .fold(f64::NEG_INFINITY, f64::max);
            assert_abs_diff_eq!(greedy.mean_cosine, best, epsilon = 1e-12);
        }
    }

    #[test]
    fn aspect_report_hand_example() {
        let report = aspect_report(&[0, 0, 1], &[0, 1, 1], 2).unwrap();
        assert_abs_diff_eq!(report.classes[0].precision, 0.5);
        assert_abs_diff_eq!(report.classes[0].recall, 1.0);
        assert_abs_diff_eq!(report.classes[0].f1, 2.0 / 3.0, epsilon = 1e-15);
        assert_eq!(report.confusion, vec![vec![1, 0], vec![1, 1]]);
        assert_abs_diff_eq!(report.accuracy, 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn aspect_report_perfect_predictions() {
        let report = aspect_report(&[0, 1, 2, 1], &[0, 1, 2, 1], 3).unwrap();
        for m in &report.classes {
            assert_eq!(m.precision, 1.0);
            assert_eq!(m.recall, 1.0);
            assert_eq!(m.f1, 1.0);
            assert!(!m.empty_support);
        }
        assert_eq!(report.accuracy, 1.0);
    }

    #[test]
    fn aspect_report_flags_empty_support() {
        let report = aspect_report(&[0, 0], &[0, 0], 2).unwrap();
        assert!(report.classes[1].empty_support);
        assert_eq!(report.classes[1].recall, 0.0);
        assert!(!report.classes[0].empty_support);
        // confusion row sums equal supports
        for (row, m) in report.confusion.iter().zip(&report.classes) {
            assert_eq!(row.iter().sum::<usize>(), m.support);
        }
    }

    #[test]
    fn aspect_report_validation() {
        assert!(matches!(
            aspect_report(&[0], &[0, 1], 2),
            Err(EvalError::LengthMismatch { .. })
        ));
        assert!(matches!(
            aspect_report(&[2], &[0], 2),
            Err(EvalError::LabelOutOfRange { value: 2, .. })
        ));
        assert!(matches!(aspect_report(&[], &[], 2), Err(EvalError::Empty)));
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[1, 0, 1], &[1, 0, 1]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0, 1, 0], &[1, 0, 1]).unwrap(), 0.0);
        assert_abs_diff_eq!(
            accuracy(&[1, 0, 1], &[1, 1, 1]).unwrap(),
            2.0 / 3.0,
            epsilon = 1e-15
        );
        assert!(accuracy(&[], &[]).is_err());
    }

    #[test]
    fn reports_serialize_and_render() {
        let report = aspect_report(&[0, 0, 1], &[0, 1, 1], 2).unwrap();
        let json = serde_json::to_string(&report).unwrap();
        let back: ClassificationReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.confusion, report.confusion);
        let table = report.text_table();
        assert!(table.contains("precision"));
        assert!(table.contains("accuracy: 0.6667"));

        let coherence = CoherenceReport {
            per_topic: vec![0.25, -0.5],
            mean: -0.125,
            top_n: 10,
        };
        let table = coherence.text_table();
        assert!(table.contains("0.2500"));
        assert!(table.contains("-0.1250"));
        serde_json::to_string(&coherence).unwrap();
    }

    proptest! {
        #[test]
        fn f1_is_harmonic_mean_of_reported_p_and_r(
            seed in 0u64..500,
            n in 1usize..40,
            classes in 1usize..5,
        ) {
            use rand::Rng;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pred: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
            let gold: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
            let report = aspect_report(&pred, &gold, classes).unwrap();
            for m in &report.classes {
                prop_assert!(m.precision >= 0.0 && m.precision <= 1.0);
                prop_assert!(m.recall >= 0.0 && m.recall <= 1.0);
                let expected = if m.precision + m.recall == 0.0 {
                    0.0
                } else {
                    2.0 * m.precision * m.recall / (m.precision + m.recall)
                };
                prop_assert!((m.f1 - expected).abs() < 1e-12);
            }
            let total: usize = report.classes.iter().map(|c| c.support).sum();
            prop_assert_eq!(total, n);
        }

        #[test]
        fn npmi_within_unit_interval(seed in 0u64..200) {
            use rand::Rng;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v = 6;
            let docs: Vec<Vec<usize>> = (0..12)
                .map(|_| (0..5).map(|_| rng.gen_range(0..v)).collect())
                .collect();
            let doc_refs: Vec<&[usize]> = docs.iter().map(|d| d.as_slice()).collect();
            let corpus = corpus_from_docs(v, &doc_refs);
            let topics = vec![vec![0, 1, 2], vec![3, 4, 5]];
            let report = npmi(&topics, &corpus, 3, EPS).unwrap();
            for t in &report.per_topic {
                prop_assert!(*t >= -1.0 - 1e-9 && *t <= 1.0 + 1e-9, "npmi {}", t);
            }
        }
    }
}
