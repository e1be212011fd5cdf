//! Finite-difference verification of tape gradients.

use super::{ParamId, ParamStore};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub within_tol: usize,
    pub worst_rel_err: f64,
    pub worst_coord: Option<(String, usize)>,
}

impl GradCheckReport {
    pub fn pass_fraction(&self) -> f64 {
        if self.checked == 0 {
            1.0
        } else {
            self.within_tol as f64 / self.checked as f64
        }
    }
}

/// Compares the gradients already accumulated in `store` against central
/// differences of `loss_fn`.
///
/// Relative error per coordinate is |a − n| / max(|a|, |n|, 1e-3); the floor
/// keeps near-zero coordinates from blowing up the ratio.
pub fn check_gradients<F>(
    store: &mut ParamStore,
    params: &[ParamId],
    mut loss_fn: F,
    h: f64,
    tol: f64,
) -> GradCheckReport
where
    F: FnMut(&ParamStore) -> f64,
{
    let mut report = GradCheckReport {
        checked: 0,
        within_tol: 0,
        worst_rel_err: 0.0,
        worst_coord: None,
    };
    for &id in params {
        let n = store.value(id).len();
        for i in 0..n {
            let orig = store.value(id).data()[i];
            store.value_mut(id).data_mut()[i] = orig + h;
            let up = loss_fn(store);
            store.value_mut(id).data_mut()[i] = orig - h;
            let down = loss_fn(store);
            store.value_mut(id).data_mut()[i] = orig;

            let numeric = (up - down) / (2.0 * h);
            let analytic = store.grad(id).data()[i];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3);
            report.checked += 1;
            if rel <= tol {
                report.within_tol += 1;
            }
            if rel > report.worst_rel_err {
                report.worst_rel_err = rel;
                report.worst_coord = Some((store.name(id).to_string(), i));
            }
        }
    }
    report
}
