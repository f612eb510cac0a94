//! Central-difference verification of analytic gradients.

use crate::error::Result;
use crate::graph::{Graph, NodeId};
use crate::params::ParamStore;
use crate::tensor::Tensor;
use indexmap::IndexMap;

/// Relative error between an analytic and a numeric derivative.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / f64::max(1e-8, analytic.abs() + numeric.abs())
}

/// Analytic gradients of the scalar built by `build` w.r.t. every parameter
/// in `params`. The builder must register the parameters it uses on the
/// graph via [`Graph::param`] with their store names.
pub fn analytic_grads<F>(build: &F, params: &ParamStore) -> Result<IndexMap<String, Tensor>>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<NodeId>,
{
    let mut graph = Graph::new();
    let loss = build(&mut graph, params)?;
    graph.backward(loss)?;
    let mut out = IndexMap::new();
    for (name, id) in graph.params() {
        let p = params.value(name)?;
        let g = graph
            .grad(*id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(p.rows(), p.cols()));
        out.insert(name.clone(), g);
    }
    Ok(out)
}

fn eval<F>(build: &F, params: &ParamStore) -> Result<f64>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<NodeId>,
{
    let mut graph = Graph::new();
    let loss = build(&mut graph, params)?;
    Ok(graph.value(loss).item())
}

/// Central-difference gradients, one forward pair per parameter coordinate.
pub fn numeric_grads<F>(
    build: &F,
    params: &ParamStore,
    eps: f64,
) -> Result<IndexMap<String, Tensor>>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<NodeId>,
{
    let mut work = params.clone();
    let names: Vec<String> = params.names().cloned().collect();
    let mut out = IndexMap::new();
    for name in names {
        let shape = params.value(&name)?.shape();
        let mut g = Tensor::zeros(shape[0], shape[1]);
        for idx in 0..g.len() {
            let orig = work.value(&name)?.data()[idx];
            work.get_mut(&name).unwrap().value.data_mut()[idx] = orig + eps;
            let f_plus = eval(build, &work)?;
            work.get_mut(&name).unwrap().value.data_mut()[idx] = orig - eps;
            let f_minus = eval(build, &work)?;
            work.get_mut(&name).unwrap().value.data_mut()[idx] = orig;
            g.data_mut()[idx] = (f_plus - f_minus) / (2.0 * eps);
        }
        out.insert(name, g);
    }
    Ok(out)
}

/// Max relative error between analytic and central-difference gradients
/// over every coordinate of every parameter.
pub fn grad_check<F>(build: F, params: &ParamStore, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<NodeId>,
{
    let analytic = analytic_grads(&build, params)?;
    let numeric = numeric_grads(&build, params, eps)?;
    let mut max_err: f64 = 0.0;
    for (name, a) in &analytic {
        let n = &numeric[name];
        for (av, nv) in a.data().iter().zip(n.data()) {
            max_err = max_err.max(rel_error(*av, *nv));
        }
    }
    Ok(max_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Result;

    fn linear_builder(g: &mut Graph, p: &ParamStore) -> Result<NodeId> {
        // f = 3·w₀ + 2·w₁ (linear: central differences are exact)
        let w = g.param("w", p.value("w")?.clone());
        let c = g.input(Tensor::row_vector(vec![3.0, 2.0]));
        let prod = g.mul(w, c)?;
        Ok(g.sum(prod))
    }

    #[test]
    fn linear_is_exact() {
        let mut p = ParamStore::new();
        p.register("w", Tensor::row_vector(vec![0.7, -1.2]), true)
            .unwrap();
        let err = grad_check(linear_builder, &p, 1e-5).unwrap();
        assert!(err < 1e-10, "err = {err}");
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let mut p = ParamStore::new();
        p.register("w", Tensor::row_vector(vec![0.7, -1.2]), true)
            .unwrap();
        let analytic = analytic_grads(&linear_builder, &p).unwrap();
        let numeric = numeric_grads(&linear_builder, &p, 1e-5).unwrap();
        let mut max_err: f64 = 0.0;
        for (name, a) in &analytic {
            let n = &numeric[name];
            for (av, nv) in a.data().iter().zip(n.data()) {
                max_err = max_err.max(rel_error(av * 1.1, *nv));
            }
        }
        assert!(max_err > 1e-2, "corruption not detected: {max_err}");
    }
}
