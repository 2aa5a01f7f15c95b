//! Central finite-difference verification of reverse-mode gradients.
//!
//! The numerical side only ever evaluates forward values, so it is independent
//! of every backward rule it checks.

use super::{Graph, NodeId, ParamStore};
use crate::error::Result;
use crate::tensor::Tensor;

/// Default finite-difference step.
pub const STEP: f64 = 1e-5;

/// Denominator floor so exactly-zero gradients compare cleanly.
const FLOOR: f64 = 1e-6;

/// `|a - n| / max(|a| + |n|, floor)` over whole tensors (Euclidean norms).
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).powi(2))
        .sum::<f64>()
        .sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / (na + nn).max(FLOOR)
}

/// Check gradients of a scalar function with respect to free input tensors.
/// Returns one relative error per input.
pub fn check_inputs<F>(inputs: &[Tensor<f64>], f: F) -> Result<Vec<f64>>
where
    F: Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = values.iter().map(|t| g.variable(t.clone())).collect();
        let loss = f(&mut g, &ids)?;
        Ok(g.value(loss).item())
    };

    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let loss = f(&mut g, &ids)?;
    g.backward(loss)?;

    let mut errors = Vec::with_capacity(inputs.len());
    for (k, id) in ids.iter().enumerate() {
        let analytic = g
            .grad(*id)
            .map(Tensor::into_data)
            .unwrap_or_else(|| vec![0.0; inputs[k].numel()]);
        let mut numeric = vec![0.0; inputs[k].numel()];
        let mut probe = inputs.to_vec();
        for (j, slot) in numeric.iter_mut().enumerate() {
            let orig = inputs[k].data()[j];
            probe[k].data_mut()[j] = orig + STEP;
            let up = eval(&probe)?;
            probe[k].data_mut()[j] = orig - STEP;
            let down = eval(&probe)?;
            probe[k].data_mut()[j] = orig;
            *slot = (up - down) / (2.0 * STEP);
        }
        errors.push(relative_error(&analytic, &numeric));
    }
    Ok(errors)
}

/// Check gradients of a scalar function with respect to every parameter in
/// `store`. Returns `(name, relative error)` per parameter.
pub fn check_params<F>(store: &ParamStore<f64>, f: F) -> Result<Vec<(String, f64)>>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<NodeId>,
{
    let mut work = store.clone();
    work.zero_grads();
    let mut g = Graph::new();
    let loss = f(&mut g, &work)?;
    g.backward(loss)?;
    g.accumulate_param_grads(&mut work);
    let analytic: Vec<Vec<f64>> = work.iter().map(|p| p.grad.data().to_vec()).collect();

    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let loss = f(&mut g, s)?;
        Ok(g.value(loss).item())
    };

    let mut report = Vec::with_capacity(store.len());
    let ids: Vec<_> = store.ids().collect();
    for (k, id) in ids.into_iter().enumerate() {
        let n = work.get(id).value.numel();
        let mut numeric = vec![0.0; n];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let orig = work.get(id).value.data()[j];
            work.get_mut(id).value.data_mut()[j] = orig + STEP;
            let up = eval(&work)?;
            work.get_mut(id).value.data_mut()[j] = orig - STEP;
            let down = eval(&work)?;
            work.get_mut(id).value.data_mut()[j] = orig;
            *slot = (up - down) / (2.0 * STEP);
        }
        report.push((
            work.get(id).name.clone(),
            relative_error(&analytic[k], &numeric),
        ));
    }
    Ok(report)
}
