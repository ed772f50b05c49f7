use super::graph::{Graph, Var};
use super::matrix::Matrix;
use super::store::ParamStore;
use crate::error::Result;

/// Relative error between an analytic and a numeric derivative, guarded so
/// near-zero pairs compare absolutely.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

pub fn max_rel_error(analytic: &Matrix, numeric: &Matrix) -> Result<f64> {
    Ok(analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| rel_error(a, n))
        .fold(0.0, f64::max))
}

#[derive(Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `"name[i]"` of the worst-matching entry.
    pub worst: String,
    /// Total scalar entries compared.
    pub checked: usize,
}

/// Compare backprop gradients against central finite differences for every
/// parameter in the store.
///
/// `build` must construct the same scalar loss each time it is called from
/// the current store values (inputs it closes over stay fixed; everything
/// that should be differentiated must come from the store). The analytic
/// gradient is taken from one backward pass; each parameter entry is then
/// perturbed by `±h` and the loss re-evaluated.
pub fn check_gradients<F>(store: &mut ParamStore, h: f64, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let eval = |store: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let loss = build(&mut g, store)?;
        Ok(g.value(loss).get(0, 0))
    };

    // analytic pass
    store.zero_grads();
    let mut g = Graph::new();
    let loss = build(&mut g, store)?;
    g.backward(loss)?;
    g.write_grads(store)?;
    let names: Vec<String> = store.names().map(str::to_string).collect();
    let analytic: Vec<Matrix> = names
        .iter()
        .map(|n| store.grad(n).map(Matrix::clone))
        .collect::<Result<_>>()?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: String::new(),
        checked: 0,
    };
    for (name, grads) in names.iter().zip(&analytic) {
        let base = store.value(name)?.clone();
        for i in 0..base.len() {
            let orig = base.data()[i];

            let mut plus = base.clone();
            plus.data_mut()[i] = orig + h;
            store.set_value(name, plus)?;
            let l_plus = eval(store)?;

            let mut minus = base.clone();
            minus.data_mut()[i] = orig - h;
            store.set_value(name, minus)?;
            let l_minus = eval(store)?;

            store.set_value(name, base.clone())?;

            let numeric = (l_plus - l_minus) / (2.0 * h);
            let err = rel_error(grads.data()[i], numeric);
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = format!("{name}[{i}]");
            }
        }
    }
    store.zero_grads();
    Ok(report)
}
