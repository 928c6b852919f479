//! Minimal reverse-mode automatic differentiation over dense `f64` tensors,
//! plus the Adam update rule.
//!
//! A [`Graph`] is rebuilt for every forward pass. Leaves are either
//! constants (frozen weights, data) or parameters (anything we want a
//! gradient for); gradients only flow into nodes that depend on a parameter.

mod adam;
mod graph;
pub(crate) mod kernels;
mod mlp;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use graph::{Graph, NodeId};
pub use mlp::{mlp_forward, Activation, Layer, Mlp, MlpNodes};
pub use tensor::Tensor;

use crate::error::{Error, Result};

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &Tensor) -> Tensor {
    kernels::rowwise(logits, kernels::softmax).reshape(logits.shape().to_vec()).expect("same size")
}

/// `KL(p || uniform) = sum_i p_i ln(p_i n)`, with `0 ln 0 = 0`.
///
/// Clamped at zero so round-off on a uniform input never reports a negative
/// divergence.
pub fn kl_to_uniform(probs: &Tensor) -> f64 {
    kernels::kl_to_uniform(probs.data()).max(0.0)
}

/// `-log softmax(logits)[target]`, evaluated through log-sum-exp.
pub fn cross_entropy(logits: &Tensor, target: usize) -> Result<f64> {
    if target >= logits.len() {
        return Err(Error::invalid(format!(
            "target {} out of range for {} logits",
            target,
            logits.len()
        )));
    }
    Ok(kernels::cross_entropy(logits.data(), target))
}

/// Central finite-difference gradient of `f` at `x`.
pub fn numeric_gradient(x: &Tensor, step: f64, mut f: impl FnMut(&Tensor) -> f64) -> Tensor {
    let mut probe = x.clone();
    let mut out = Tensor::zeros(x.shape().to_vec());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let up = f(&probe);
        probe.data_mut()[i] = orig - step;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (up - down) / (2.0 * step);
    }
    out
}

/// `||a - b|| / max(||a||, ||b||, floor)`.
pub fn relative_error(a: &Tensor, b: &Tensor, floor: f64) -> f64 {
    let diff: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    diff / a.norm().max(b.norm()).max(floor)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_symmetric_pair() {
        let p = softmax(&Tensor::vector(vec![0.0, 0.0]));
        assert_eq!(p.data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_large_equal_logits() {
        let p = softmax(&Tensor::vector(vec![1000.0; 3]));
        for v in p.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_of_log_weights() {
        let z = Tensor::vector(vec![1f64.ln(), 2f64.ln(), 3f64.ln()]);
        let p = softmax(&z);
        for (v, e) in p.data().iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
            assert!((v - e).abs() < 1e-15);
        }
        assert!((p.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kl_uniform_is_zero() {
        assert_eq!(kl_to_uniform(&Tensor::vector(vec![0.25; 4])), 0.0);
    }

    #[test]
    fn kl_one_hot_pair() {
        let v = kl_to_uniform(&Tensor::vector(vec![1.0, 0.0]));
        assert!((v - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_examples() {
        let ce = cross_entropy(&Tensor::vector(vec![0.0, 0.0]), 0).unwrap();
        assert!((ce - 2f64.ln()).abs() < 1e-15);

        let ce = cross_entropy(&Tensor::vector(vec![1.0, 2.0, 3.0]), 2).unwrap();
        let e = 1f64.exp() + 2f64.exp() + 3f64.exp();
        let expected = -(3f64.exp() / e).ln();
        assert!((ce - expected).abs() < 1e-14);
        assert!((ce - 0.4076).abs() < 1e-4);

        let ce = cross_entropy(&Tensor::vector(vec![0.0, 800.0]), 1).unwrap();
        assert!(ce < 1e-300);

        assert!(cross_entropy(&Tensor::vector(vec![0.0, 0.0]), 2).is_err());
    }
}
