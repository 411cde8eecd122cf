//! Central finite-difference gradient oracle.
//!
//! The loss is a fixed random projection `Σ wᵢ·outᵢ` of the op output, so every
//! output element contributes to every checked gradient.

use hournas::tensor::{Graph, Tensor, Var};

pub const EPS: f64 = 1e-5;

fn projection(n: usize) -> Vec<f64> {
    (0..n).map(|i| (1.3 * i as f64 + 0.7).cos() + 0.1).collect()
}

fn loss_of<F>(inputs: &[Tensor<f64>], build: &F) -> f64
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Var,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = build(&mut g, &vars);
    let w = projection(g.value(out).numel());
    g.data(out).iter().zip(&w).map(|(a, b)| a * b).sum()
}

/// Max over inputs of `max|analytic − numeric| / max|numeric|`.
///
/// `checked[i]` selects which inputs receive gradients (others are constants).
pub fn max_relative_error<F>(inputs: &[Tensor<f64>], checked: &[bool], build: F) -> f64
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Var,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs
        .iter()
        .zip(checked)
        .map(|(t, &c)| if c { g.leaf(t.clone()) } else { g.constant(t.clone()) })
        .collect();
    let out = build(&mut g, &vars);
    let w = projection(g.value(out).numel());
    let proj = g.mul_const(out, &w).unwrap();
    let loss = g.sum(proj);
    g.backward(loss).unwrap();

    let mut worst: f64 = 0.0;
    for (i, &c) in checked.iter().enumerate() {
        if !c {
            continue;
        }
        let analytic = g
            .grad(vars[i])
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; inputs[i].numel()]);
        let mut numeric = vec![0.0; inputs[i].numel()];
        for k in 0..inputs[i].numel() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[k] += EPS;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[k] -= EPS;
            numeric[k] = (loss_of(&plus, &build) - loss_of(&minus, &build)) / (2.0 * EPS);
        }
        let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-8);
        let diff = analytic
            .iter()
            .zip(&numeric)
            .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
        worst = worst.max(diff / scale);
    }
    worst
}
