//! Central finite-difference comparison against the tape gradients.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::params::ParamStore;

/// Outcome of [`check_gradients`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// `(parameter name, flat index)` of the worst entry.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// Denominator floor for the relative error, so that entries whose true
/// gradient is essentially zero are judged on absolute error instead.
pub const REL_FLOOR: f64 = 1e-6;

/// Compares the backward pass of `loss` with central differences of step `h`
/// over every weight in `store`. `loss` must build a scalar on the given graph.
pub fn check_gradients<F>(store: &mut ParamStore, h: f64, loss: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    store.zero_grad();
    let mut g = Graph::new();
    let out = loss(&mut g, store)?;
    g.backward(out, store)?;

    let eval = |store: &ParamStore| -> Result<f64> {
        let mut g = Graph::inference();
        let out = loss(&mut g, store)?;
        Ok(g.value(out).item())
    };

    let mut report = GradCheck { max_rel_error: 0.0, max_abs_error: 0.0, worst: None, checked: 0 };
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let analytic = store.grad(id).clone();
        for j in 0..analytic.len() {
            let orig = store.value(id).data()[j];
            store.value_mut(id).data_mut()[j] = orig + h;
            let up = eval(store)?;
            store.value_mut(id).data_mut()[j] = orig - h;
            let down = eval(store)?;
            store.value_mut(id).data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.data()[j];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(REL_FLOOR);
            report.checked += 1;
            report.max_abs_error = report.max_abs_error.max(abs);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((store.name(id).to_string(), j));
            }
        }
    }
    store.zero_grad();
    Ok(report)
}
