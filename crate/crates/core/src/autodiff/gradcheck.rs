use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Max relative error between the analytic gradient of `build` at `input`
/// and a central finite difference with step `h`.
///
/// The relative error of one element is
/// `|analytic − numeric| / max(|analytic|, 1e-6)`.
pub fn grad_check<F>(build: F, input: &Tensor<f64>, h: f64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    grad_check_many(|g, vars| build(g, vars[0]), std::slice::from_ref(input), h)
}

/// [`grad_check`] over several inputs at once; the error is the max over all of them.
pub fn grad_check_many<F>(build: F, inputs: &[Tensor<f64>], h: f64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(Error::invalid(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let eval = |tensors: &[Tensor<f64>], track: bool| -> Result<(Graph<f64>, Vec<Var>, Var)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = tensors
            .iter()
            .map(|t| g.leaf(t.clone().with_requires_grad(track)))
            .collect();
        let loss = build(&mut g, &vars)?;
        Ok((g, vars, loss))
    };

    let (mut g, vars, loss) = eval(inputs, true)?;
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            g.grad(v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect();

    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut worst = 0.0f64;
    for (k, grads) in analytic.iter().enumerate() {
        for (i, &a) in grads.iter().enumerate() {
            let orig = work[k].data()[i];
            work[k].data_mut()[i] = orig + h;
            let (g1, _, l1) = eval(&work, false)?;
            let plus = g1.value(l1).item();
            work[k].data_mut()[i] = orig - h;
            let (g2, _, l2) = eval(&work, false)?;
            let minus = g2.value(l2).item();
            work[k].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let rel = (a - numeric).abs() / a.abs().max(1e-6);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
