//! Central finite-difference checks for the graph's backward pass.

use super::{Graph, ParamStore, Tensor, TensorError, Var};

/// Denominator floor for the relative error, so that gradients that are zero
/// analytically are compared on an absolute scale.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Location of the worst element, e.g. `param conv.w[3]` or `input 0[5]`.
    pub worst: String,
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares analytic gradients of the scalar built by `build` against central
/// differences with step `h`, for every parameter and every input element.
pub fn check_gradients<F>(
    params: &ParamStore<f64>,
    inputs: &[Tensor<f64>],
    h: f64,
    build: F,
) -> Result<GradCheck, TensorError>
where
    F: Fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var, TensorError>,
{
    let eval = |store: &ParamStore<f64>, inputs: &[Tensor<f64>]| -> Result<f64, TensorError> {
        let mut g = Graph::new(store);
        let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
        let out = build(&mut g, &vars)?;
        Ok(g.scalar(out))
    };

    let mut g = Graph::new(params);
    let vars: Vec<Var> = inputs.iter().map(|t| g.input_with_grad(t.clone())).collect();
    let out = build(&mut g, &vars)?;
    let grads = g.backward(out)?;

    let mut report = GradCheck {
        max_rel_error: 0.0,
        checked: 0,
        worst: String::new(),
    };
    let mut note = |a: f64, n: f64, what: String| {
        let e = rel_error(a, n);
        report.checked += 1;
        if e > report.max_rel_error || report.worst.is_empty() {
            report.max_rel_error = e.max(report.max_rel_error);
            report.worst = what;
        }
    };

    let mut store = params.clone();
    for (id, name, t) in params.iter() {
        let analytic = grads.param(id).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]);
        for (k, &a) in analytic.iter().enumerate() {
            let orig = t.data()[k];
            store.get_mut(id).data_mut()[k] = orig + h;
            let up = eval(&store, inputs)?;
            store.get_mut(id).data_mut()[k] = orig - h;
            let down = eval(&store, inputs)?;
            store.get_mut(id).data_mut()[k] = orig;
            note(a, (up - down) / (2.0 * h), format!("param {name}[{k}]"));
        }
    }

    let mut perturbed = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.wrt(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; inputs[i].len()]);
        for (k, &a) in analytic.iter().enumerate() {
            let orig = inputs[i].data()[k];
            perturbed[i].data_mut()[k] = orig + h;
            let up = eval(&store, &perturbed)?;
            perturbed[i].data_mut()[k] = orig - h;
            let down = eval(&store, &perturbed)?;
            perturbed[i].data_mut()[k] = orig;
            note(a, (up - down) / (2.0 * h), format!("input {i}[{k}]"));
        }
    }
    Ok(report)
}
