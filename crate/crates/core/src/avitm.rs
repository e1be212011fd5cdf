//! Baseline autoencoded topic model: Gaussian encoder over θ logits,
//! collapsed multinomial decoder p(w | θ, β) = θ · σ(β).

use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::diffcore::{
    softmax_rows, Activation, DenseLayer, ParamId, ParamStore, Tape, Tensor2, Var, WeightInit,
};
use crate::priors::{
    kl_sum_on_tape, reparameterize_on_tape, DirichletPrior, GaussianPosterior, PriorError,
};

/// Floor inside the reconstruction log so empty mixture entries cannot
/// produce −∞.
pub const LOG_EPS: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum TopWordsError {
    #[error("requested {n} top words but vocabulary has {v}")]
    TooMany { n: usize, v: usize },
}

/// Unnormalized topic-word weights; rows become distributions under
/// per-topic softmax over the vocabulary.
#[derive(Debug, Clone)]
pub struct TopicWordWeights {
    pub raw: Tensor2,
}

impl TopicWordWeights {
    pub fn normalized(&self) -> Tensor2 {
        softmax_rows(&self.raw)
    }
}

/// Rows = θ · σ(β); each output row is a distribution over the vocabulary.
pub fn decode_mixture(theta: &Tensor2, beta: &TopicWordWeights) -> Tensor2 {
    theta.matmul(&beta.normalized())
}

/// Per-topic (token id, probability) lists, highest probability first, ties
/// by token id.
pub fn top_words(
    beta: &TopicWordWeights,
    n: usize,
) -> Result<Vec<Vec<(usize, f64)>>, TopWordsError> {
    let probs = beta.normalized();
    let v = probs.cols();
    if n > v {
        return Err(TopWordsError::TooMany { n, v });
    }
    Ok((0..probs.rows())
        .map(|k| {
            let mut ranked: Vec<(usize, f64)> = probs.row(k).iter().copied().enumerate().collect();
            ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            ranked.truncate(n);
            ranked
        })
        .collect())
}

pub struct AvitmModel {
    pub store: ParamStore,
    trunk: Vec<DenseLayer>,
    mu_head: DenseLayer,
    logvar_head: DenseLayer,
    pub beta: ParamId,
    pub prior: DirichletPrior,
    pub k: usize,
    pub v: usize,
}

/// Handles to the loss components on a tape; `total = kl − reconstruction`.
pub struct AvitmLoss {
    pub total: Var,
    pub reconstruction: Var,
    pub kl: Var,
}

impl AvitmModel {
    pub fn new<R: Rng>(
        k: usize,
        v: usize,
        hidden: &[usize],
        alpha: f64,
        rng: &mut R,
    ) -> Result<Self, PriorError> {
        assert!(k >= 1 && v >= 1, "empty model dimensions");
        assert!(!hidden.is_empty(), "encoder needs at least one hidden layer");
        let prior = DirichletPrior::symmetric(alpha, k)?;
        let mut store = ParamStore::new();

        let mut trunk = Vec::new();
        let mut fan_in = v;
        for (i, &h) in hidden.iter().enumerate() {
            trunk.push(DenseLayer::new(
                &mut store,
                &format!("encoder.{i}"),
                fan_in,
                h,
                Activation::Softplus,
                WeightInit::Xavier,
                rng,
            ));
            fan_in = h;
        }
        let mu_head = DenseLayer::new(
            &mut store,
            "encoder.mu",
            fan_in,
            k,
            Activation::Linear,
            WeightInit::Xavier,
            rng,
        );
        let logvar_head = DenseLayer::new(
            &mut store,
            "encoder.logvar",
            fan_in,
            k,
            Activation::Linear,
            WeightInit::Xavier,
            rng,
        );
        let beta_init = Normal::new(0.0, 0.02).unwrap();
        let beta = store.register(
            "beta",
            Tensor2::from_fn(k, v, |_, _| beta_init.sample(rng)),
        );

        Ok(AvitmModel {
            store,
            trunk,
            mu_head,
            logvar_head,
            beta,
            prior,
            k,
            v,
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.store.ids().collect()
    }

    /// Encoder forward on an existing tape; returns (μ0, log σ0²) nodes.
    pub fn encode_on_tape(&self, store: &ParamStore, tape: &mut Tape, w: Var) -> (Var, Var) {
        let mut h = w;
        for layer in &self.trunk {
            h = layer.forward(tape, store, h);
        }
        let mu = self.mu_head.forward(tape, store, h);
        let logvar = self.logvar_head.forward(tape, store, h);
        (mu, logvar)
    }

    pub fn encode(&self, w: &Tensor2) -> GaussianPosterior {
        assert_eq!(w.cols(), self.v, "document dimension mismatch");
        let mut tape = Tape::new();
        let wv = tape.constant(w.clone());
        let (mu, lv) = self.encode_on_tape(&self.store, &mut tape, wv);
        GaussianPosterior::new(tape.value(mu).clone(), tape.value(lv).clone())
    }

    /// Builds loss = Σ_d [KL_d − w_dᵀ log(σ(μ + σε) · σ(β))] on the tape.
    pub fn build_loss(&self, tape: &mut Tape, w: &Tensor2, epsilon: &Tensor2) -> AvitmLoss {
        self.build_loss_with(&self.store, tape, w, epsilon)
    }

    /// Same as [`build_loss`](Self::build_loss) with an explicit parameter
    /// store, so finite-difference checks can rebuild from a perturbed copy.
    pub fn build_loss_with(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        w: &Tensor2,
        epsilon: &Tensor2,
    ) -> AvitmLoss {
        assert!(w.rows() >= 1, "empty batch");
        assert_eq!(w.cols(), self.v, "document dimension mismatch");
        assert_eq!(epsilon.shape(), (w.rows(), self.k), "epsilon shape mismatch");

        let wv = tape.constant(w.clone());
        let (mu, logvar) = self.encode_on_tape(store, tape, wv);
        let z = reparameterize_on_tape(tape, mu, logvar, epsilon);
        let theta = tape.softmax_rows(z);

        let beta = tape.param(store, self.beta);
        let beta_sm = tape.softmax_rows(beta);
        let p = tape.matmul(theta, beta_sm);
        let p = tape.add_scalar(p, LOG_EPS);
        let logp = tape.ln(p);
        let weighted = tape.mul_elem(wv, logp);
        let reconstruction = tape.sum(weighted);

        let kl = kl_sum_on_tape(tape, mu, logvar, &self.prior);
        let total = tape.sub(kl, reconstruction);
        AvitmLoss {
            total,
            reconstruction,
            kl,
        }
    }

    /// softmax(μ0(w)) per document: the mean-of-posterior proportions, no
    /// sampling.
    pub fn infer_theta(&self, w: &Tensor2) -> Tensor2 {
        softmax_rows(&self.encode(w).mu0)
    }

    pub fn topic_word_weights(&self) -> TopicWordWeights {
        TopicWordWeights {
            raw: self.store.value(self.beta).clone(),
        }
    }
}
