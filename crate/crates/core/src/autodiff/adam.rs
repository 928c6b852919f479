use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Moment accumulators and hyperparameters for bias-corrected Adam.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    /// Zeroed state for parameters shaped like `params`, with the usual
    /// defaults `beta1 = 0.9`, `beta2 = 0.999`, `eps = 1e-8`.
    pub fn new(params: &[Tensor]) -> Self {
        Self::with_betas(params, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(params: &[Tensor], beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.v
    }
}

/// One Adam update applied in place to `params`.
///
/// Rejects shape-misaligned inputs and non-finite gradients before touching
/// any parameter or moment.
pub fn adam_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape(
            "adam_step",
            format!(
                "{} params, {} grads, {} moment buffers",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        ));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || p.len() != state.m[i].len() {
            return Err(Error::shape(
                "adam_step",
                format!(
                    "tensor {}: param {:?}, grad {:?}, moments {}",
                    i,
                    p.shape(),
                    g.shape(),
                    state.m[i].len()
                ),
            ));
        }
        if !g.is_finite() {
            return Err(Error::NonFinite {
                what: format!("gradient for parameter tensor {}", i),
                step: state.step as usize + 1,
            });
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for (((x, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *x -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![Tensor::vector(vec![1.0, -2.0])];
        let g = vec![Tensor::vector(vec![0.0, 0.0])];
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &g, &mut s, 0.1).unwrap();
        assert_eq!(p[0].data(), &[1.0, -2.0]);
        assert_eq!(s.step_count(), 1);
    }

    #[test]
    fn first_step_closed_form() {
        // m_hat = g, v_hat = g^2, so the update is lr * g / (|g| + eps).
        let mut p = vec![Tensor::scalar(0.0)];
        let g = vec![Tensor::scalar(1.0)];
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &g, &mut s, 0.1).unwrap();
        let expected = -0.1 / (1.0 + 1e-8);
        assert!((p[0].item() - expected).abs() < 1e-15);
        assert!((p[0].item() + 0.0999999990).abs() < 1e-9);
    }

    #[test]
    fn opposite_gradients_give_mirrored_updates() {
        let mut p = vec![Tensor::vector(vec![0.0, 0.0])];
        let g = vec![Tensor::vector(vec![0.3, -0.3])];
        let mut s = AdamState::new(&p);
        for _ in 0..3 {
            adam_step(&mut p, &g, &mut s, 0.05).unwrap();
        }
        let d0 = p[0].data()[0];
        let d1 = p[0].data()[1];
        assert_eq!(d0, -d1);
        assert!(d0 < 0.0);
    }

    #[test]
    fn non_finite_gradient_aborts_without_update() {
        let mut p = vec![Tensor::vector(vec![1.0, 1.0])];
        let g = vec![Tensor::vector(vec![f64::NAN, 0.0])];
        let mut s = AdamState::new(&p);
        let err = adam_step(&mut p, &g, &mut s, 0.1).unwrap_err();
        assert!(matches!(err, Error::NonFinite { step: 1, .. }));
        assert_eq!(p[0].data(), &[1.0, 1.0]);
        assert_eq!(s.step_count(), 0);
    }

    #[test]
    fn misaligned_shapes_rejected() {
        let mut p = vec![Tensor::vector(vec![1.0, 1.0])];
        let g = vec![Tensor::vector(vec![1.0])];
        let mut s = AdamState::new(&p);
        assert!(adam_step(&mut p, &g, &mut s, 0.1).is_err());
    }

    #[test]
    fn step_counter_strictly_increases() {
        let mut p = vec![Tensor::scalar(0.0)];
        let g = vec![Tensor::scalar(0.2)];
        let mut s = AdamState::new(&p);
        let mut last = s.step_count();
        for _ in 0..5 {
            adam_step(&mut p, &g, &mut s, 0.01).unwrap();
            assert!(s.step_count() > last);
            last = s.step_count();
        }
    }
}
