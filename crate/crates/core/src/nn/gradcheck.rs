//! Central finite-difference checks for graph-built functions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::graph::{Graph, Var};
use crate::error::Result;

/// Step used by the finite-difference oracle.
pub const FD_STEP: f64 = 1e-5;

/// Relative error between an analytic and a numeric derivative. Values
/// smaller than `1e-2` in magnitude are compared on an absolute scale of
/// `1e-2` so round-off in near-zero derivatives does not dominate.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-2)
}

/// Compares reverse-mode gradients against central differences.
///
/// `build` must construct the same function on every call (fix any
/// randomness inside it). Non-scalar outputs are reduced to a scalar by a
/// fixed random projection. Returns the largest relative error over all
/// input coordinates.
pub fn max_gradient_error<F>(inputs: &[(Vec<f64>, Vec<usize>)], build: F) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Vec<f64>], track: bool| -> Result<(Graph, Vec<Var>, Var)> {
        let mut g = Graph::new();
        let vars = values
            .iter()
            .zip(inputs)
            .map(|(v, (_, shape))| {
                if track {
                    g.input_with_grad(v.clone(), shape)
                } else {
                    g.input(v.clone(), shape)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let out = build(&mut g, &vars)?;
        let n = g.value(out).len();
        let root = if n == 1 {
            out
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(0x6772_6164);
            let w: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
            let shape = g.shape(out).to_vec();
            let wv = g.input(w, &shape)?;
            let prod = g.mul(out, wv)?;
            g.sum(prod)
        };
        Ok((g, vars, root))
    };

    let base: Vec<Vec<f64>> = inputs.iter().map(|(v, _)| v.clone()).collect();
    let (mut g, vars, root) = eval(&base, true)?;
    g.backward(root)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| g.grad(v).expect("tracked input").to_vec())
        .collect();

    let mut worst = 0.0f64;
    let mut probe = base.clone();
    for (i, (values, _)) in inputs.iter().enumerate() {
        for k in 0..values.len() {
            probe[i][k] = values[k] + FD_STEP;
            let (gp, _, rp) = eval(&probe, false)?;
            probe[i][k] = values[k] - FD_STEP;
            let (gm, _, rm) = eval(&probe, false)?;
            probe[i][k] = values[k];
            let numeric = (gp.scalar(rp) - gm.scalar(rm)) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(analytic[i][k], numeric));
        }
    }
    Ok(worst)
}
