//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use respscreen::frameio::Label;
use respscreen::net::{loss, ModelParams};

pub const FD_STEP: f64 = 1e-5;

/// Central-difference gradient of the loss with respect to every parameter,
/// in block order.
pub fn numeric_gradient(model: &ModelParams, inputs: &[f64], label: Label) -> Vec<Vec<f64>> {
    let f = |m: &ModelParams| loss(&m.forward_unchecked(inputs).unwrap().probabilities, label);
    let sizes: Vec<usize> = model.blocks().iter().map(|b| b.values.len()).collect();
    let mut out = Vec::new();
    for (bi, &n) in sizes.iter().enumerate() {
        let mut g = Vec::with_capacity(n);
        for i in 0..n {
            let mut plus = model.clone();
            plus.blocks_mut()[bi].values[i] += FD_STEP;
            let mut minus = model.clone();
            minus.blocks_mut()[bi].values[i] -= FD_STEP;
            g.push((f(&plus) - f(&minus)) / (2.0 * FD_STEP));
        }
        out.push(g);
    }
    out
}

/// `|a − n| / max(|a|, |n|, floor)`; the floor keeps exact-zero gradients
/// from dividing finite-difference round-off by zero.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Largest relative error over all parameters, with the offending block.
pub fn gradient_check(model: &ModelParams, inputs: &[f64], label: Label) -> (f64, String) {
    let analytic = model.backward(inputs, label).unwrap().grads;
    let numeric = numeric_gradient(model, inputs, label);
    let mut worst = (0.0, String::new());
    for (block, num) in analytic.blocks().iter().zip(&numeric) {
        for (a, n) in block.values.iter().zip(num) {
            let e = relative_error(*a, *n);
            if e > worst.0 {
                worst = (e, block.name.clone());
            }
        }
    }
    worst
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}
