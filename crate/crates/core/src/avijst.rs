//! Joint sentiment/topic VAE: S document-topic posteriors from a shared
//! trunk, a sentiment classifier head, a collapsed decoder over π·θ·β with
//! the sentiment-word matrix ν mixed in, and a semi-supervised
//! cross-entropy term on labeled documents.

use rand::Rng;

use crate::avitm::{top_words, TopWordsError, TopicWordWeights, LOG_EPS};
use crate::diffcore::{
    softmax_rows, Activation, DenseLayer, ParamId, ParamStore, Tape, Tensor2, Var, WeightInit,
};
use crate::priors::{
    kl_sum_on_tape, reparameterize_on_tape, DirichletPrior, GaussianPosterior, PriorError,
};

/// How q(π|w) enters the bound: `Deterministic` feeds the classifier's
/// softmax straight into the decoder and scores its logits against the
/// prior as a unit-variance Gaussian mean; `Reparameterized` adds a
/// (μ, log σ²) head pair for π and samples like θ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PiSampling {
    Deterministic,
    Reparameterized,
}

/// Unnormalized sentiment-word weights; rows normalize over V.
#[derive(Debug, Clone)]
pub struct SentimentWordWeights {
    pub raw: Tensor2,
}

impl SentimentWordWeights {
    pub fn normalized(&self) -> Tensor2 {
        softmax_rows(&self.raw)
    }
}

pub struct AvijstModel {
    pub store: ParamStore,
    trunk: Vec<DenseLayer>,
    theta_heads: Vec<(DenseLayer, DenseLayer)>,
    classifier: Vec<DenseLayer>,
    classifier_out: DenseLayer,
    classifier_logvar: Option<DenseLayer>,
    /// One K×V slice per sentiment.
    pub beta: Vec<ParamId>,
    pub nu: ParamId,
    pub lambda_nu: f64,
    pub theta_prior: DirichletPrior,
    pub pi_prior: DirichletPrior,
    pub pi_sampling: PiSampling,
    pub k: usize,
    pub s: usize,
    pub v: usize,
}

pub struct AvijstLoss {
    pub total: Var,
    pub reconstruction: Var,
    pub kl_theta: Vec<Var>,
    pub kl_pi: Var,
    /// Absent when the batch carries no labels, keeping the unlabeled graph
    /// bitwise identical.
    pub classification: Option<Var>,
}

/// Posterior bundle from one encoder pass.
pub struct JointPosterior {
    pub thetas: Vec<GaussianPosterior>,
    pub pi_logits: Tensor2,
    pub pi_log_sigma: Option<Tensor2>,
}

#[allow(clippy::too_many_arguments)]
impl AvijstModel {
    pub fn new<R: Rng>(
        k: usize,
        s: usize,
        v: usize,
        hidden: &[usize],
        alpha: f64,
        gamma: f64,
        lambda_nu: f64,
        pi_sampling: PiSampling,
        rng: &mut R,
    ) -> Result<Self, PriorError> {
        assert!(k >= 1 && s >= 1 && v >= 1, "empty model dimensions");
        assert!(!hidden.is_empty(), "encoder needs at least one hidden layer");
        assert!(lambda_nu >= 0.0, "negative nu weight");
        let theta_prior = DirichletPrior::symmetric(alpha, k)?;
        let pi_prior = DirichletPrior::symmetric(gamma, s)?;
        let mut store = ParamStore::new();

        let mut trunk = Vec::new();
        let mut fan_in = v;
        for (i, &h) in hidden.iter().enumerate() {
            trunk.push(DenseLayer::new(
                &mut store,
                &format!("trunk.{i}"),
                fan_in,
                h,
                Activation::Softplus,
                WeightInit::Xavier,
                rng,
            ));
            fan_in = h;
        }
        let theta_heads = (0..s)
            .map(|si| {
                let mu = DenseLayer::new(
                    &mut store,
                    &format!("theta.{si}.mu"),
                    fan_in,
                    k,
                    Activation::Linear,
                    WeightInit::Xavier,
                    rng,
                );
                let lv = DenseLayer::new(
                    &mut store,
                    &format!("theta.{si}.logvar"),
                    fan_in,
                    k,
                    Activation::Linear,
                    WeightInit::Xavier,
                    rng,
                );
                (mu, lv)
            })
            .collect();

        let mut classifier = Vec::new();
        let mut cls_in = v;
        for (i, &h) in hidden.iter().enumerate() {
            classifier.push(DenseLayer::new(
                &mut store,
                &format!("classifier.{i}"),
                cls_in,
                h,
                Activation::Softplus,
                WeightInit::Xavier,
                rng,
            ));
            cls_in = h;
        }
        let classifier_out = DenseLayer::new(
            &mut store,
            "classifier.out",
            cls_in,
            s,
            Activation::Linear,
            WeightInit::Xavier,
            rng,
        );
        let classifier_logvar = match pi_sampling {
            PiSampling::Deterministic => None,
            PiSampling::Reparameterized => Some(DenseLayer::new(
                &mut store,
                "classifier.logvar",
                cls_in,
                s,
                Activation::Linear,
                WeightInit::Xavier,
                rng,
            )),
        };

        let beta_init = rand_distr::Normal::new(0.0, 0.02).unwrap();
        let beta = (0..s)
            .map(|si| {
                store.register(
                    &format!("beta.{si}"),
                    Tensor2::from_fn(k, v, |_, _| {
                        rand_distr::Distribution::sample(&beta_init, rng)
                    }),
                )
            })
            .collect();
        // zeros: ν departs only when it explains sentiment-correlated mass
        let nu = store.register("nu", Tensor2::zeros(s, v));

        Ok(AvijstModel {
            store,
            trunk,
            theta_heads,
            classifier,
            classifier_out,
            classifier_logvar,
            beta,
            nu,
            lambda_nu,
            theta_prior,
            pi_prior,
            pi_sampling,
            k,
            s,
            v,
        })
    }

    /// Trunk, θ heads, β and ν: everything but the classifier stack.
    pub fn main_param_ids(&self) -> Vec<ParamId> {
        let cls: Vec<ParamId> = self.classifier_param_ids();
        self.store.ids().filter(|id| !cls.contains(id)).collect()
    }

    /// The classifier stack, trained at its own learning rate.
    pub fn classifier_param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for l in &self.classifier {
            ids.push(l.weight);
            ids.push(l.bias);
        }
        ids.push(self.classifier_out.weight);
        ids.push(self.classifier_out.bias);
        if let Some(l) = &self.classifier_logvar {
            ids.push(l.weight);
            ids.push(l.bias);
        }
        ids
    }

    fn encode_on_tape(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        w: Var,
    ) -> (Vec<(Var, Var)>, Var, Option<Var>) {
        let mut h = w;
        for layer in &self.trunk {
            h = layer.forward(tape, store, h);
        }
        let thetas = self
            .theta_heads
            .iter()
            .map(|(mu, lv)| {
                (
                    mu.forward(tape, store, h),
                    lv.forward(tape, store, h),
                )
            })
            .collect();

        let mut c = w;
        for layer in &self.classifier {
            c = layer.forward(tape, store, c);
        }
        let logits = self.classifier_out.forward(tape, store, c);
        let pi_logvar = self
            .classifier_logvar
            .as_ref()
            .map(|l| l.forward(tape, store, c));
        (thetas, logits, pi_logvar)
    }

    /// S θ posteriors plus the π head outputs, values only.
    pub fn encode_joint(&self, w: &Tensor2) -> JointPosterior {
        assert_eq!(w.cols(), self.v, "document dimension mismatch");
        let mut tape = Tape::new();
        let wv = tape.constant(w.clone());
        let (thetas, logits, pi_logvar) = self.encode_on_tape(&self.store, &mut tape, wv);
        JointPosterior {
            thetas: thetas
                .into_iter()
                .map(|(mu, lv)| {
                    GaussianPosterior::new(tape.value(mu).clone(), tape.value(lv).clone())
                })
                .collect(),
            pi_logits: tape.value(logits).clone(),
            pi_log_sigma: pi_logvar.map(|v| tape.value(v).clone()),
        }
    }

    pub fn build_loss(
        &self,
        tape: &mut Tape,
        w: &Tensor2,
        labels: &[Option<usize>],
        theta_eps: &[Tensor2],
        pi_eps: Option<&Tensor2>,
    ) -> AvijstLoss {
        self.build_loss_with(&self.store, tape, w, labels, theta_eps, pi_eps)
    }

    /// The negated bound of the joint model plus cross-entropy on labeled
    /// docs: Σ_s KL(q(θ_s)‖p(θ)) + KL(q(π)‖p(π)) − Σ_d w_dᵀ log p_d − Σ_{labeled} log q(l_d).
    pub fn build_loss_with(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        w: &Tensor2,
        labels: &[Option<usize>],
        theta_eps: &[Tensor2],
        pi_eps: Option<&Tensor2>,
    ) -> AvijstLoss {
        let batch = w.rows();
        assert!(batch >= 1, "empty batch");
        assert_eq!(w.cols(), self.v, "document dimension mismatch");
        assert_eq!(labels.len(), batch, "labels length mismatch");
        assert_eq!(theta_eps.len(), self.s, "need one epsilon slab per sentiment");
        for e in theta_eps {
            assert_eq!(e.shape(), (batch, self.k), "theta epsilon shape mismatch");
        }
        for l in labels.iter().flatten() {
            assert!(*l < self.s, "label {l} out of range for S = {}", self.s);
        }

        let wv = tape.constant(w.clone());
        let (theta_posts, logits, pi_logvar) = self.encode_on_tape(store, tape, wv);

        // π as used by the decoder
        let (pi, kl_pi) = match self.pi_sampling {
            PiSampling::Deterministic => {
                let pi = tape.softmax_rows(logits);
                let unit_lv = tape.constant(Tensor2::zeros(batch, self.s));
                let kl = kl_sum_on_tape(tape, logits, unit_lv, &self.pi_prior);
                (pi, kl)
            }
            PiSampling::Reparameterized => {
                let lv = pi_logvar.expect("reparameterized mode has a logvar head");
                let eps = pi_eps.expect("reparameterized mode needs pi epsilon");
                assert_eq!(eps.shape(), (batch, self.s), "pi epsilon shape mismatch");
                let z = reparameterize_on_tape(tape, logits, lv, eps);
                let pi = tape.softmax_rows(z);
                let kl = kl_sum_on_tape(tape, logits, lv, &self.pi_prior);
                (pi, kl)
            }
        };

        // p = [Σ_s π_s · (θ_s σ(β_s)) + λ (π σ(ν))] / (1 + λ)
        let mut mix: Option<Var> = None;
        let mut kl_theta = Vec::with_capacity(self.s);
        for si in 0..self.s {
            let (mu, lv) = theta_posts[si];
            let z = reparameterize_on_tape(tape, mu, lv, &theta_eps[si]);
            let theta = tape.softmax_rows(z);
            let beta = tape.param(store, self.beta[si]);
            let beta_sm = tape.softmax_rows(beta);
            let p_s = tape.matmul(theta, beta_sm);
            let pi_col = tape.column(pi, si);
            let weighted = tape.mul_col(p_s, pi_col);
            mix = Some(match mix {
                None => weighted,
                Some(acc) => tape.add(acc, weighted),
            });
            kl_theta.push(kl_sum_on_tape(tape, mu, lv, &self.theta_prior));
        }
        let mut p = mix.expect("s >= 1");
        if self.lambda_nu > 0.0 {
            let nu = tape.param(store, self.nu);
            let nu_sm = tape.softmax_rows(nu);
            let nu_mix = tape.matmul(pi, nu_sm);
            let nu_mix = tape.scale(nu_mix, self.lambda_nu);
            p = tape.add(p, nu_mix);
            p = tape.scale(p, 1.0 / (1.0 + self.lambda_nu));
        }
        let p = tape.add_scalar(p, LOG_EPS);
        let logp = tape.ln(p);
        let weighted = tape.mul_elem(wv, logp);
        let reconstruction = tape.sum(weighted);

        let mut kl_total = kl_pi;
        for &kt in &kl_theta {
            kl_total = tape.add(kl_total, kt);
        }
        let mut total = tape.sub(kl_total, reconstruction);

        // cross-entropy −log q(π = label | w) on labeled docs only
        let num_labeled = labels.iter().flatten().count();
        let classification = if num_labeled > 0 {
            let mut mask = Tensor2::zeros(batch, self.s);
            for (d, l) in labels.iter().enumerate() {
                if let Some(l) = l {
                    mask.set(d, *l, 1.0);
                }
            }
            let log_q = tape.log_softmax_rows(logits);
            let mask = tape.constant(mask);
            let picked = tape.mul_elem(mask, log_q);
            let sum = tape.sum(picked);
            let ce = tape.scale(sum, -1.0);
            total = tape.add(total, ce);
            Some(ce)
        } else {
            None
        };

        AvijstLoss {
            total,
            reconstruction,
            kl_theta,
            kl_pi,
            classification,
        }
    }

    /// softmax of the classifier logits, one row per document.
    pub fn classify_sentiment(&self, w: &Tensor2) -> Tensor2 {
        softmax_rows(&self.encode_joint(w).pi_logits)
    }

    /// Mean-of-posterior θ_s for every sentiment, no sampling.
    pub fn infer_thetas(&self, w: &Tensor2) -> Vec<Tensor2> {
        self.encode_joint(w)
            .thetas
            .iter()
            .map(|q| softmax_rows(&q.mu0))
            .collect()
    }

    pub fn sentiment_word_weights(&self) -> SentimentWordWeights {
        SentimentWordWeights {
            raw: self.store.value(self.nu).clone(),
        }
    }

    pub fn topic_word_weights(&self, sentiment: usize) -> TopicWordWeights {
        TopicWordWeights {
            raw: self.store.value(self.beta[sentiment]).clone(),
        }
    }
}

/// Plain decoder for frozen parameters: rows of
/// [Σ_s π_s (θ_s σ(β_s)) + λ π σ(ν)] / (1 + λ).
pub fn decode_joint(
    pi: &Tensor2,
    thetas: &[Tensor2],
    betas: &[TopicWordWeights],
    nu: &SentimentWordWeights,
    lambda_nu: f64,
) -> Tensor2 {
    let s = pi.cols();
    assert_eq!(thetas.len(), s, "theta slab count mismatch");
    assert_eq!(betas.len(), s, "beta slab count mismatch");
    let batch = pi.rows();
    let v = betas[0].raw.cols();
    let mut p = Tensor2::zeros(batch, v);
    for si in 0..s {
        let p_s = thetas[si].matmul(&betas[si].normalized());
        for d in 0..batch {
            let w = pi.get(d, si);
            for (acc, &x) in p.row_mut(d).iter_mut().zip(p_s.row(d)) {
                *acc += w * x;
            }
        }
    }
    if lambda_nu > 0.0 {
        let nu_mix = pi.matmul(&nu.normalized());
        p.add_scaled(&nu_mix, lambda_nu);
        p = p.map(|x| x / (1.0 + lambda_nu));
    }
    p
}

/// Top-n tokens per sentiment row of softmaxed ν.
pub fn sentiment_top_words(
    nu: &SentimentWordWeights,
    n: usize,
) -> Result<Vec<Vec<(usize, f64)>>, TopWordsError> {
    top_words(
        &TopicWordWeights {
            raw: nu.raw.clone(),
        },
        n,
    )
}

/// Top-n tokens per (sentiment, topic) row.
pub fn joint_top_words(
    betas: &[TopicWordWeights],
    n: usize,
) -> Result<Vec<Vec<Vec<(usize, f64)>>>, TopWordsError> {
    betas.iter().map(|b| top_words(b, n)).collect()
}
