//! Numerically stable scalar and row kernels shared by the graph ops and
//! the free-standing helpers.

use super::tensor::Tensor;

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub(crate) fn log_softmax(z: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(z);
    z.iter().map(|v| v - lse).collect()
}

/// `sum_i p_i ln(p_i n)` with `0 ln 0 = 0`.
pub(crate) fn kl_to_uniform(p: &[f64]) -> f64 {
    let n = p.len() as f64;
    p.iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| v * (v * n).ln())
        .sum()
}

pub(crate) fn kl_uniform_from_logits(z: &[f64]) -> f64 {
    let n = z.len() as f64;
    let logp = log_softmax(z);
    logp.iter()
        .map(|&l| {
            let p = l.exp();
            if p > 0.0 {
                p * (l + n.ln())
            } else {
                0.0
            }
        })
        .sum::<f64>()
        .max(0.0)
}

pub(crate) fn cross_entropy(z: &[f64], target: usize) -> f64 {
    log_sum_exp(z) - z[target]
}

pub(crate) fn rowwise(t: &Tensor, f: impl Fn(&[f64]) -> Vec<f64>) -> Tensor {
    let mut out = Vec::with_capacity(t.len());
    for row in t.row_iter() {
        out.extend(f(row));
    }
    Tensor::new(vec![t.rows(), t.cols()], out).expect("rowwise keeps shape")
}
