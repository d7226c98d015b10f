//! Adam with bias-corrected moments and weight decay coupled to the
//! learning rate.
//!
//! Update rule per parameter θ with gradient g, step count t:
//!
//! ```text
//! m ← β₁·m + (1−β₁)·g          m̂ = m / (1 − β₁ᵗ)
//! v ← β₂·v + (1−β₂)·g²         v̂ = v / (1 − β₂ᵗ)
//! θ ← θ − lr·m̂/(√v̂ + ε) − lr·wd·θ
//! ```
//!
//! Defaults: lr 1e-3, weight decay 1e-5, β₁ 0.9, β₂ 0.999, ε 1e-8.

use super::Network;
use crate::matrix::Matrix;
use crate::{Error, Result};

pub const DEFAULT_LR: f64 = 1e-3;
pub const DEFAULT_WEIGHT_DECAY: f64 = 1e-5;
const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// Optimizer state: one first/second moment pair per parameter, in the
/// network's trainable-parameter visit order.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl AdamState {
    /// State for an explicit list of parameter shapes (moments start at 0).
    pub fn new(shapes: &[(usize, usize)], lr: f64, weight_decay: f64) -> AdamState {
        AdamState {
            lr,
            weight_decay,
            step: 0,
            m: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
            v: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
        }
    }

    /// State sized for a network's trainable parameters.
    pub fn for_network(net: &mut Network, lr: f64, weight_decay: f64) -> AdamState {
        let mut shapes = Vec::new();
        net.visit_trainable(|_, p, _| shapes.push(p.shape()));
        AdamState::new(&shapes, lr, weight_decay)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Advances the step counter; call once per batch, before the updates.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Applies the Adam update to parameter `idx` in place.
    pub fn update(&mut self, idx: usize, param: &mut Matrix, grad: &Matrix) -> Result<()> {
        if self.step == 0 {
            return Err(Error::State("adam update before begin_step".into()));
        }
        let (m, v) = match (self.m.get_mut(idx), self.v.get_mut(idx)) {
            (Some(m), Some(v)) => (m, v),
            _ => {
                return Err(Error::Argument(format!(
                    "adam parameter index {idx} out of range ({} parameters)",
                    self.m.len()
                )))
            }
        };
        if m.shape() != param.shape() || param.shape() != grad.shape() {
            return Err(Error::Shape(format!(
                "adam update {idx}: state {}x{}, param {}x{}, grad {}x{}",
                m.rows(),
                m.cols(),
                param.rows(),
                param.cols(),
                grad.rows(),
                grad.cols()
            )));
        }
        let bc1 = 1.0 - BETA1.powi(self.step as i32);
        let bc2 = 1.0 - BETA2.powi(self.step as i32);
        let (lr, wd) = (self.lr, self.weight_decay);
        for ((p, g), (mi, vi)) in param
            .as_mut_slice()
            .iter_mut()
            .zip(grad.as_slice().iter())
            .zip(m.as_mut_slice().iter_mut().zip(v.as_mut_slice().iter_mut()))
        {
            *mi = BETA1 * *mi + (1.0 - BETA1) * g;
            *vi = BETA2 * *vi + (1.0 - BETA2) * g * g;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + EPS) + lr * wd * *p;
        }
        Ok(())
    }

    /// One optimizer step over every trainable parameter of the network,
    /// consuming the gradients stored by the latest backward pass.
    pub fn step_network(&mut self, net: &mut Network) -> Result<()> {
        self.begin_step();
        let mut idx = 0;
        let mut first_err: Option<Error> = None;
        // The visitor has no early exit; remember the first failure.
        net.visit_trainable(|_, p, g| {
            if first_err.is_none() {
                if let Err(e) = self.update(idx, p, g) {
                    first_err = Some(e);
                }
            }
            idx += 1;
        });
        match first_err {
            None => Ok(()),
            Some(e) => Err(e),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_matches_analytic_value() {
        // θ=0, g=1, wd=0: m̂=1, v̂=1 after bias correction, so
        // θ₁ = −lr/(1+ε) ≈ −0.000999999…
        let mut adam = AdamState::new(&[(1, 1)], 1e-3, 0.0);
        let mut p = Matrix::zeros(1, 1);
        let g = Matrix::from_vec(1, 1, vec![1.0]).unwrap();
        adam.begin_step();
        adam.update(0, &mut p, &g).unwrap();
        let expect = -1e-3 / (1.0 + 1e-8);
        assert!((p[(0, 0)] - expect).abs() <= 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_parameter_unchanged() {
        let mut adam = AdamState::new(&[(2, 2)], 1e-3, 0.0);
        let mut p = Matrix::from_fn(2, 2, |r, c| (r + c) as f64);
        let orig = p.clone();
        let g = Matrix::zeros(2, 2);
        for _ in 0..10 {
            adam.begin_step();
            adam.update(0, &mut p, &g).unwrap();
        }
        assert_eq!(p, orig);
    }

    #[test]
    fn descends_a_quadratic() {
        // f(θ) = θ², ∇f = 2θ, from θ=1. The normalized step moves at most
        // ≈lr per iteration, so reaching the minimum takes a few thousand
        // steps; once near it, the iterate collapses onto 0.
        let mut adam = AdamState::new(&[(1, 1)], 1e-3, 0.0);
        let mut p = Matrix::from_vec(1, 1, vec![1.0]).unwrap();
        for _ in 0..4000 {
            let g = p.scale(2.0);
            adam.begin_step();
            adam.update(0, &mut p, &g).unwrap();
        }
        assert!(p[(0, 0)].abs() < 1e-6, "θ after 4000 steps: {}", p[(0, 0)]);
    }

    #[test]
    fn weight_decay_shrinks_parameters_without_gradient() {
        let mut adam = AdamState::new(&[(1, 1)], 1e-3, 0.1);
        let mut p = Matrix::from_vec(1, 1, vec![1.0]).unwrap();
        let g = Matrix::zeros(1, 1);
        adam.begin_step();
        adam.update(0, &mut p, &g).unwrap();
        assert!((p[(0, 0)] - (1.0 - 1e-3 * 0.1)).abs() <= 1e-15);
    }

    #[test]
    fn update_before_begin_step_is_a_state_error() {
        let mut adam = AdamState::new(&[(1, 1)], 1e-3, 0.0);
        let mut p = Matrix::zeros(1, 1);
        let g = Matrix::zeros(1, 1);
        assert!(matches!(adam.update(0, &mut p, &g), Err(Error::State(_))));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut adam = AdamState::new(&[(1, 2)], 1e-3, 0.0);
        let mut p = Matrix::zeros(2, 1);
        let g = Matrix::zeros(2, 1);
        adam.begin_step();
        assert!(matches!(adam.update(0, &mut p, &g), Err(Error::Shape(_))));
    }
}
