//! Dirichlet priors in softmax basis, diagonal-Gaussian KL, reparameterization.
//!
//! A Dirichlet over the simplex is approximated by a Gaussian over logits
//! whose moments have closed form; the variational posterior is a diagonal
//! Gaussian, so the KL regularizer is exact.

use thiserror::Error;

use crate::diffcore::{Tape, Tensor2, Var};

#[derive(Debug, Error)]
pub enum PriorError {
    #[error("dirichlet concentration must be positive, got alpha[{index}] = {value}")]
    NonPositiveAlpha { index: usize, value: f64 },
    #[error("dirichlet concentration vector is empty")]
    EmptyAlpha,
}

/// Gaussian moments of a Dirichlet(α) mapped to the softmax basis:
/// μ1k = log α_k − (1/K) Σ_i log α_i,
/// Σ1kk = (1/α_k)(1 − 2/K) + (1/K²) Σ_i 1/α_i.
pub fn laplace_approximation(alpha: &[f64]) -> Result<(Vec<f64>, Vec<f64>), PriorError> {
    if alpha.is_empty() {
        return Err(PriorError::EmptyAlpha);
    }
    for (index, &value) in alpha.iter().enumerate() {
        if !(value > 0.0) {
            return Err(PriorError::NonPositiveAlpha { index, value });
        }
    }
    let k = alpha.len() as f64;
    let logs: Vec<f64> = alpha.iter().map(|a| a.ln()).collect();
    // Difference form: symmetric α gives exactly zero per coordinate.
    let mu1: Vec<f64> = logs
        .iter()
        .map(|&la| logs.iter().map(|&li| la - li).sum::<f64>() / k)
        .collect();
    let inv_sum: f64 = alpha.iter().map(|a| 1.0 / a).sum();
    let sigma1: Vec<f64> = alpha
        .iter()
        .map(|a| (1.0 / a) * (1.0 - 2.0 / k) + inv_sum / (k * k))
        .collect();
    Ok((mu1, sigma1))
}

/// A Dirichlet concentration together with its softmax-basis Gaussian.
///
/// K = 1 is the degenerate simplex: the Laplace variance collapses to 0 and
/// any KL against this prior is defined as 0 (the distribution is the
/// constant point regardless of the logit).
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletPrior {
    pub alpha: Vec<f64>,
    pub mu1: Vec<f64>,
    pub sigma1_diag: Vec<f64>,
}

impl DirichletPrior {
    pub fn new(alpha: &[f64]) -> Result<Self, PriorError> {
        let (mu1, sigma1_diag) = laplace_approximation(alpha)?;
        Ok(DirichletPrior {
            alpha: alpha.to_vec(),
            mu1,
            sigma1_diag,
        })
    }

    pub fn symmetric(alpha: f64, k: usize) -> Result<Self, PriorError> {
        Self::new(&vec![alpha; k])
    }

    pub fn dim(&self) -> usize {
        self.alpha.len()
    }

    /// True when the simplex has a single vertex (K = 1) and the Laplace
    /// variance is zero.
    pub fn is_degenerate(&self) -> bool {
        self.dim() == 1
    }
}

/// Diagonal-Gaussian variational parameters for a batch of documents.
#[derive(Debug, Clone)]
pub struct GaussianPosterior {
    pub mu0: Tensor2,
    pub log_sigma0: Tensor2,
}

impl GaussianPosterior {
    pub fn new(mu0: Tensor2, log_sigma0: Tensor2) -> Self {
        assert_eq!(mu0.shape(), log_sigma0.shape(), "posterior shape mismatch");
        GaussianPosterior { mu0, log_sigma0 }
    }

    pub fn batch(&self) -> usize {
        self.mu0.rows()
    }

    pub fn dim(&self) -> usize {
        self.mu0.cols()
    }

    /// z = μ0 + exp(½ log σ0²) ⊙ ε.
    pub fn reparameterize(&self, epsilon: &Tensor2) -> Tensor2 {
        assert_eq!(self.mu0.shape(), epsilon.shape(), "epsilon shape mismatch");
        let mut z = self.mu0.clone();
        for ((zi, &lv), &e) in z
            .data_mut()
            .iter_mut()
            .zip(self.log_sigma0.data())
            .zip(epsilon.data())
        {
            *zi += (0.5 * lv).exp() * e;
        }
        z
    }
}

/// Closed-form KL(N(μ0, diag e^lv) ‖ N(μ1, diag σ1²)) for one row.
pub fn gaussian_kl(mu0: &[f64], log_sigma0: &[f64], mu1: &[f64], sigma1_diag: &[f64]) -> f64 {
    assert_eq!(mu0.len(), log_sigma0.len(), "kl dimension mismatch");
    assert_eq!(mu0.len(), mu1.len(), "kl dimension mismatch");
    assert_eq!(mu0.len(), sigma1_diag.len(), "kl dimension mismatch");
    let mut total = 0.0;
    for i in 0..mu0.len() {
        let s0 = log_sigma0[i].exp();
        let s1 = sigma1_diag[i];
        let d = mu1[i] - mu0[i];
        total += s0 / s1 + d * d / s1 - 1.0 + s1.ln() - log_sigma0[i];
    }
    0.5 * total
}

/// KL of every posterior row against the prior; zero for a degenerate prior.
pub fn gaussian_kl_rows(q: &GaussianPosterior, prior: &DirichletPrior) -> Vec<f64> {
    assert_eq!(q.dim(), prior.dim(), "kl dimension mismatch");
    if prior.is_degenerate() {
        return vec![0.0; q.batch()];
    }
    (0..q.batch())
        .map(|i| {
            gaussian_kl(
                q.mu0.row(i),
                q.log_sigma0.row(i),
                &prior.mu1,
                &prior.sigma1_diag,
            )
        })
        .collect()
}

/// Tape version of [`gaussian_kl`] summed over the batch: `mu` and
/// `log_sigma` are batch × K nodes. Returns a scalar Var; for a degenerate
/// prior the contribution is the constant 0.
pub fn kl_sum_on_tape(tape: &mut Tape, mu: Var, log_sigma: Var, prior: &DirichletPrior) -> Var {
    let (_, cols) = tape.value(mu).shape();
    assert_eq!(cols, prior.dim(), "kl dimension mismatch");
    assert_eq!(
        tape.value(mu).shape(),
        tape.value(log_sigma).shape(),
        "posterior shape mismatch"
    );
    if prior.is_degenerate() {
        return tape.constant(Tensor2::zeros(1, 1));
    }
    let inv_s1: Vec<f64> = prior.sigma1_diag.iter().map(|s| 1.0 / s).collect();
    let neg_mu1: Vec<f64> = prior.mu1.iter().map(|m| -m).collect();
    // ln σ1² − 1, the per-coordinate constant part.
    let const_part: Vec<f64> = prior.sigma1_diag.iter().map(|s| s.ln() - 1.0).collect();

    let inv_s1 = tape.constant_row(&inv_s1);
    let neg_mu1 = tape.constant_row(&neg_mu1);
    let const_part = tape.constant_row(&const_part);

    let var0 = tape.exp(log_sigma);
    let trace = tape.mul_row(var0, inv_s1);
    let diff = tape.add_row(mu, neg_mu1);
    let diff2 = tape.square(diff);
    let maha = tape.mul_row(diff2, inv_s1);
    let t = tape.add(trace, maha);
    let t = tape.sub(t, log_sigma);
    let t = tape.add_row(t, const_part);
    let total = tape.sum(t);
    tape.scale(total, 0.5)
}

/// Tape version of the reparameterization: z = μ0 + exp(½ lv) ⊙ ε with ε
/// entering as a constant, so gradients flow to μ0 and lv only.
pub fn reparameterize_on_tape(tape: &mut Tape, mu: Var, log_sigma: Var, epsilon: &Tensor2) -> Var {
    assert_eq!(
        tape.value(mu).shape(),
        epsilon.shape(),
        "epsilon shape mismatch"
    );
    let half = tape.scale(log_sigma, 0.5);
    let sd = tape.exp(half);
    let eps = tape.constant(epsilon.clone());
    let scaled = tape.mul_elem(sd, eps);
    tape.add(mu, scaled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::gradcheck::check_gradients;
    use crate::diffcore::ParamStore;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn symmetric_alpha_centers_at_zero_exactly() {
        for k in [1, 2, 3, 7, 50] {
            let (mu1, _) = laplace_approximation(&vec![0.37; k]).unwrap();
            assert!(mu1.iter().all(|&m| m == 0.0));
        }
    }

    #[test]
    fn laplace_matches_hand_value() {
        // α = 0.1, K = 3: 10·(1/3) + 30/9 = 20/3
        let (mu1, sigma1) = laplace_approximation(&[0.1, 0.1, 0.1]).unwrap();
        for (&m, &s) in mu1.iter().zip(&sigma1) {
            assert_abs_diff_eq!(m, 0.0, epsilon = 1e-15);
            assert_abs_diff_eq!(s, 20.0 / 3.0, epsilon = 1e-4);
        }
    }

    #[test]
    fn asymmetric_alpha_hand_check() {
        let alpha = [0.5, 2.0];
        let (mu1, sigma1) = laplace_approximation(&alpha).unwrap();
        // μ1 = (ln .5 − (ln .5 + ln 2)/2, ln 2 − ...) = (−ln 2, ln 2)
        assert_abs_diff_eq!(mu1[0], -(2.0f64.ln()), epsilon = 1e-12);
        assert_abs_diff_eq!(mu1[1], 2.0f64.ln(), epsilon = 1e-12);
        // Σ1kk = (1/α_k)(1 − 1) + (1/4)(2 + 0.5) = 0.625 for both
        assert_abs_diff_eq!(sigma1[0], 0.625, epsilon = 1e-12);
        assert_abs_diff_eq!(sigma1[1], 0.625, epsilon = 1e-12);
    }

    #[test]
    fn nonpositive_alpha_rejected() {
        assert!(matches!(
            laplace_approximation(&[0.1, 0.0]),
            Err(PriorError::NonPositiveAlpha { index: 1, .. })
        ));
        assert!(laplace_approximation(&[-1.0]).is_err());
        assert!(matches!(
            laplace_approximation(&[]),
            Err(PriorError::EmptyAlpha)
        ));
    }

    #[test]
    fn degenerate_prior_has_zero_variance() {
        let p = DirichletPrior::symmetric(0.1, 1).unwrap();
        assert!(p.is_degenerate());
        assert_abs_diff_eq!(p.sigma1_diag[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.mu1[0], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn kl_of_identical_gaussians_is_zero() {
        let mu = [0.3, -1.2, 4.0];
        let s1 = [0.7, 2.0, 6.6667];
        let lv: Vec<f64> = s1.iter().map(|s: &f64| s.ln()).collect();
        let kl = gaussian_kl(&mu, &lv, &mu, &s1);
        assert_abs_diff_eq!(kl, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn kl_unit_shift_is_half() {
        // K=1, μ0=0, μ1=1, both unit variance
        assert_abs_diff_eq!(gaussian_kl(&[0.0], &[0.0], &[1.0], &[1.0]), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn reparameterize_at_zero_noise_returns_mean() {
        let q = GaussianPosterior::new(
            Tensor2::from_rows(&[vec![1.0, -2.0]]),
            Tensor2::from_rows(&[vec![0.3, -0.1]]),
        );
        let z = q.reparameterize(&Tensor2::zeros(1, 2));
        assert_eq!(z.data(), q.mu0.data());
    }

    #[test]
    fn reparameterize_unit_variance_adds_noise() {
        let q = GaussianPosterior::new(
            Tensor2::from_rows(&[vec![1.0, -2.0]]),
            Tensor2::zeros(1, 2),
        );
        let e = Tensor2::from_rows(&[vec![0.5, -0.25]]);
        let z = q.reparameterize(&e);
        assert_eq!(z.data(), &[1.5, -2.25]);
    }

    #[test]
    fn reparameterized_sample_mean_approaches_mu() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let q = GaussianPosterior::new(
            Tensor2::from_rows(&[vec![0.8]]),
            Tensor2::from_rows(&[vec![(0.25f64).ln()]]),
        );
        let mut sum = 0.0;
        for _ in 0..n {
            let e: f64 = StandardNormal.sample(&mut rng);
            sum += q.reparameterize(&Tensor2::from_vec(1, 1, vec![e])).data()[0];
        }
        let mean = sum / n as f64;
        let three_se = 3.0 * 0.5 / (n as f64).sqrt();
        assert!((mean - 0.8).abs() < three_se, "mean {mean}");
    }

    #[test]
    fn tape_kl_matches_closed_form_and_fd() {
        let prior = DirichletPrior::new(&[0.1, 0.4, 1.3]).unwrap();
        let mut store = ParamStore::new();
        let mu = store.register(
            "mu",
            Tensor2::from_rows(&[vec![0.2, -0.5, 1.0], vec![0.0, 0.3, -2.0]]),
        );
        let lv = store.register(
            "lv",
            Tensor2::from_rows(&[vec![-0.3, 0.1, 0.4], vec![0.2, -1.0, 0.0]]),
        );

        let build = |store: &ParamStore, tape: &mut Tape| {
            let m = tape.param(store, mu);
            let l = tape.param(store, lv);
            kl_sum_on_tape(tape, m, l, &prior)
        };
        let mut tape = Tape::new();
        let loss = build(&store, &mut tape);

        let q = GaussianPosterior::new(store.value(mu).clone(), store.value(lv).clone());
        let expected: f64 = gaussian_kl_rows(&q, &prior).iter().sum();
        assert_abs_diff_eq!(tape.scalar(loss), expected, epsilon = 1e-10);

        tape.backward(loss).unwrap();
        tape.accumulate_param_grads(&mut store);
        let report = check_gradients(
            &mut store,
            &[mu, lv],
            |s| {
                let mut t = Tape::new();
                let l = build(s, &mut t);
                t.scalar(l)
            },
            1e-5,
            1e-4,
        );
        assert_eq!(report.within_tol, report.checked, "{report:?}");
    }

    #[test]
    fn tape_reparameterize_matches_plain_and_fd() {
        let mut store = ParamStore::new();
        let mu = store.register("mu", Tensor2::from_rows(&[vec![0.2, -0.5]]));
        let lv = store.register("lv", Tensor2::from_rows(&[vec![-0.3, 0.8]]));
        let eps = Tensor2::from_rows(&[vec![1.5, -0.7]]);

        let build = |store: &ParamStore, tape: &mut Tape| {
            let m = tape.param(store, mu);
            let l = tape.param(store, lv);
            let z = reparameterize_on_tape(tape, m, l, &eps);
            let sq = tape.square(z);
            tape.sum(sq)
        };
        let mut tape = Tape::new();
        let loss = build(&store, &mut tape);

        let q = GaussianPosterior::new(store.value(mu).clone(), store.value(lv).clone());
        let z = q.reparameterize(&eps);
        let expected: f64 = z.data().iter().map(|x| x * x).sum();
        assert_abs_diff_eq!(tape.scalar(loss), expected, epsilon = 1e-12);

        tape.backward(loss).unwrap();
        tape.accumulate_param_grads(&mut store);
        let report = check_gradients(
            &mut store,
            &[mu, lv],
            |s| {
                let mut t = Tape::new();
                let l = build(s, &mut t);
                t.scalar(l)
            },
            1e-5,
            1e-4,
        );
        assert_eq!(report.within_tol, report.checked, "{report:?}");
    }

    proptest! {
        #[test]
        fn kl_is_nonnegative(
            mu0 in proptest::collection::vec(-5.0f64..5.0, 1..6),
            lv in proptest::collection::vec(-3.0f64..3.0, 1..6),
            mu1 in proptest::collection::vec(-5.0f64..5.0, 1..6),
            s1 in proptest::collection::vec(0.05f64..10.0, 1..6),
        ) {
            let k = mu0.len().min(lv.len()).min(mu1.len()).min(s1.len());
            let kl = gaussian_kl(&mu0[..k], &lv[..k], &mu1[..k], &s1[..k]);
            prop_assert!(kl >= -1e-12, "kl = {kl}");
        }

        #[test]
        fn symmetric_mu1_is_zero(alpha in 0.01f64..20.0, k in 1usize..12) {
            let (mu1, _) = laplace_approximation(&vec![alpha; k]).unwrap();
            prop_assert!(mu1.iter().all(|&m| m == 0.0));
        }
    }
}
