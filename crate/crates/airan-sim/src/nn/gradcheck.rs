//! Central-finite-difference gradient verification.
//!
//! The closure rebuilds the forward graph from the store on every call, so
//! any stochastic pieces (dropout masks, sampled noise) must be captured
//! outside the closure to keep the loss a deterministic function of the
//! parameters.

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use crate::{Result, Scalar};

pub struct GradReport {
    /// Worst relative error over parameter tensors (2-norm ratio).
    pub max_rel_err: f64,
    pub worst_param: String,
}

/// Compare analytic gradients against central differences for every scalar
/// in `store`. `build` must construct the loss node from the current store
/// contents. Relative error per tensor is
/// `‖g_a − g_fd‖₂ / max(‖g_a‖₂ + ‖g_fd‖₂, 1e-8)`.
pub fn finite_diff_check<S: Scalar>(
    store: &mut ParamStore<S>,
    h: f64,
    build: impl Fn(&mut Graph<S>, &ParamStore<S>) -> Result<Var>,
) -> Result<GradReport> {
    // Analytic pass.
    store.zero_grads();
    let mut g = Graph::new();
    let loss = build(&mut g, store)?;
    g.backward(loss)?;
    g.apply_grads(store, 0);

    let analytic: Vec<Vec<f64>> =
        store.ids().map(|id| store.grad(id).to_f64_vec()).collect();

    let mut max_rel_err = 0.0f64;
    let mut worst_param = String::new();
    let ids: Vec<ParamId> = store.ids().collect();
    for (pi, &id) in ids.iter().enumerate() {
        let n = store.value(id).len();
        let mut fd = vec![0.0f64; n];
        for j in 0..n {
            let orig = store.value(id).values()[j];
            let hs = S::c(h);

            store.value_mut(id).values_mut()[j] = orig + hs;
            let mut gp = Graph::new();
            let lp = build(&mut gp, store)?;
            let fp = gp.value(lp).item().f64();

            store.value_mut(id).values_mut()[j] = orig - hs;
            let mut gm = Graph::new();
            let lm = build(&mut gm, store)?;
            let fm = gm.value(lm).item().f64();

            store.value_mut(id).values_mut()[j] = orig;
            fd[j] = (fp - fm) / (2.0 * h);
        }
        let ga = &analytic[pi];
        let diff: f64 = ga.iter().zip(&fd).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let na: f64 = ga.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nf: f64 = fd.iter().map(|b| b * b).sum::<f64>().sqrt();
        let rel = diff / (na + nf).max(1e-8);
        if rel > max_rel_err {
            max_rel_err = rel;
            worst_param = store.name(id).to_string();
        }
    }
    store.zero_grads();
    Ok(GradReport { max_rel_err, worst_param })
}
