//! Seed-word-guided aspect discovery: the baseline model plus a square loss
//! pulling seed words' per-word topic distributions toward their priors.

use crate::avitm::{AvitmLoss, AvitmModel};
use crate::corpus::SeedPrior;
use crate::diffcore::{softmax_rows, ParamStore, Tape, Tensor2, Var};

pub struct AviadModel {
    pub base: AvitmModel,
    pub seed: SeedPrior,
    pub lambda_seed: f64,
}

pub struct AviadLoss {
    pub total: Var,
    pub reconstruction: Var,
    pub kl: Var,
    /// Absent when λ = 0, keeping the λ=0 graph identical to the baseline.
    pub seed: Option<Var>,
}

impl AviadModel {
    pub fn new(base: AvitmModel, seed: SeedPrior, lambda_seed: f64) -> Self {
        assert!(lambda_seed >= 0.0, "negative seed weight");
        assert_eq!(seed.k, base.k, "seed prior K mismatch");
        assert!(
            seed.assignments.keys().all(|&id| id < base.v),
            "seed token id out of vocabulary"
        );
        AviadModel {
            base,
            seed,
            lambda_seed,
        }
    }

    /// γ: every word's topic distribution, softmax over K of the βᵀ rows.
    pub fn gamma_matrix(&self) -> Tensor2 {
        softmax_rows(&self.base.store.value(self.base.beta).transpose())
    }

    /// λ Σ_{n∈S} ‖σ(γ_n) − γ_n^prior‖².
    pub fn seed_prior_loss(&self) -> f64 {
        if self.lambda_seed == 0.0 {
            return 0.0;
        }
        let gamma = self.gamma_matrix();
        let mut total = 0.0;
        for (&id, prior_row) in &self.seed.assignments {
            for (g, p) in gamma.row(id).iter().zip(prior_row) {
                let d = g - p;
                total += d * d;
            }
        }
        self.lambda_seed * total
    }

    /// Seed term on the tape: selects the seed rows of βᵀ, softmaxes them,
    /// and sums squared distance to the prior rows. None when λ = 0.
    pub fn build_seed_loss(&self, store: &ParamStore, tape: &mut Tape) -> Option<Var> {
        if self.lambda_seed == 0.0 {
            return None;
        }
        assert!(!self.seed.assignments.is_empty(), "empty seed set");
        let n = self.seed.num_seeds();
        let mut select = Tensor2::zeros(n, self.base.v);
        let mut prior = Tensor2::zeros(n, self.base.k);
        for (row, (&id, prior_row)) in self.seed.assignments.iter().enumerate() {
            select.set(row, id, 1.0);
            prior.row_mut(row).copy_from_slice(prior_row);
        }

        let beta = tape.param(store, self.base.beta);
        let beta_t = tape.transpose(beta);
        let select = tape.constant(select);
        let logits = tape.matmul(select, beta_t);
        let gamma = tape.softmax_rows(logits);
        let prior = tape.constant(prior);
        let diff = tape.sub(gamma, prior);
        let sq = tape.square(diff);
        let sum = tape.sum(sq);
        Some(tape.scale(sum, self.lambda_seed))
    }

    /// Baseline loss plus the seed term, added once per batch. At λ = 0 the
    /// returned graph is the baseline graph itself.
    pub fn build_loss(&self, tape: &mut Tape, w: &Tensor2, epsilon: &Tensor2) -> AviadLoss {
        self.build_loss_with(&self.base.store, tape, w, epsilon)
    }

    pub fn build_loss_with(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        w: &Tensor2,
        epsilon: &Tensor2,
    ) -> AviadLoss {
        let AvitmLoss {
            total,
            reconstruction,
            kl,
        } = self.base.build_loss_with(store, tape, w, epsilon);
        match self.build_seed_loss(store, tape) {
            None => AviadLoss {
                total,
                reconstruction,
                kl,
                seed: None,
            },
            Some(seed) => AviadLoss {
                total: tape.add(total, seed),
                reconstruction,
                kl,
                seed: Some(seed),
            },
        }
    }
}
