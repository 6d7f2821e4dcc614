//! Soft spiking neuron: soft-thresholded identity forward with a sigmoid
//! surrogate gradient on the backward pass.
//!
//! Forward passes the raw input through wherever it exceeds the threshold
//! and emits zero otherwise (zero at exactly the threshold). The true
//! derivative is discontinuous there, so backpropagation substitutes
//! `sigmoid(beta * (x - theta))`, which saturates to the true derivative
//! away from the threshold and stays smooth across it.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::graph::{sigmoid, BackwardArgs, Graph, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsnParams {
    /// Firing threshold, in membrane-potential units.
    pub theta: f64,
    /// Steepness of the surrogate sigmoid; must be positive.
    pub beta: f64,
}

impl Default for SsnParams {
    fn default() -> Self {
        // theta = 0 makes the forward coincide with the rectifier; beta = 2
        // keeps the surrogate smooth and non-vanishing over typical ranges.
        SsnParams {
            theta: 0.0,
            beta: 2.0,
        }
    }
}

impl SsnParams {
    pub fn new(theta: f64, beta: f64) -> Result<Self> {
        if !(beta > 0.0) {
            return Err(crate::error::CoreError::Config(format!(
                "ssn beta must be > 0, got {beta}"
            )));
        }
        if !theta.is_finite() && theta != f64::NEG_INFINITY {
            return Err(crate::error::CoreError::Config(format!(
                "ssn theta must be finite (or -inf for pass-through), got {theta}"
            )));
        }
        Ok(SsnParams { theta, beta })
    }
}

/// Elementwise forward: `x` where `x > theta`, else 0.
pub fn ssn_forward(x: &Tensor, p: SsnParams) -> Tensor {
    let data: Vec<f64> = x
        .data()
        .iter()
        .map(|&v| if v > p.theta { v } else { 0.0 })
        .collect();
    Tensor::new(x.shape(), data).expect("shape preserved")
}

/// Surrogate backward: `upstream * sigmoid(beta * (x - theta))` elementwise.
/// This replaces the true derivative during backpropagation.
pub fn ssn_backward(x: &Tensor, p: SsnParams, upstream: &Tensor) -> Tensor {
    assert_eq!(x.shape(), upstream.shape(), "ssn upstream shape");
    let data: Vec<f64> = x
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&v, &u)| u * surrogate(v, p))
        .collect();
    Tensor::new(x.shape(), data).expect("shape preserved")
}

/// The surrogate derivative itself: `sigmoid(beta * (x - theta))`.
pub fn surrogate(x: f64, p: SsnParams) -> f64 {
    sigmoid(p.beta * (x - p.theta))
}

impl Graph {
    pub fn ssn(&mut self, x: Var, p: SsnParams) -> Var {
        let out = ssn_forward(self.value(x), p);
        let track = self.any_requires_grad(&[x]);
        let backward = track.then(|| {
            Box::new(move |args: BackwardArgs<'_>| {
                let x = args.parents[0];
                let g: Vec<f64> = x
                    .data()
                    .iter()
                    .zip(args.upstream)
                    .map(|(&v, &u)| u * surrogate(v, p))
                    .collect();
                vec![Some(Tensor::new(x.shape(), g).expect("shape"))]
            }) as Box<dyn Fn(BackwardArgs<'_>) -> Vec<Option<Tensor>>>
        });
        self.push(out, vec![x], track, backward)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(theta: f64, beta: f64) -> SsnParams {
        SsnParams { theta, beta }
    }

    #[test]
    fn forward_above_below_and_at_threshold() {
        let x = Tensor::from_vec(vec![2.0, 0.5, 1.0]);
        let y = ssn_forward(&x, p(1.0, 2.0));
        // above passes through, below suppressed, exactly-at-threshold is 0
        assert_eq!(y.data(), &[2.0, 0.0, 0.0]);
    }

    #[test]
    fn backward_at_threshold_is_half() {
        let x = Tensor::from_vec(vec![1.0]);
        let up = Tensor::from_vec(vec![1.0]);
        let g = ssn_backward(&x, p(1.0, 5.0), &up);
        assert_eq!(g.data(), &[0.5]);
    }

    #[test]
    fn backward_matches_logistic_value() {
        // beta=2, x-theta=1 -> sigma(2) ~= 0.880797
        let x = Tensor::from_vec(vec![1.0]);
        let up = Tensor::from_vec(vec![1.0]);
        let g = ssn_backward(&x, p(0.0, 2.0), &up);
        assert!((g.data()[0] - 0.8807970779778823).abs() < 1e-12);
    }

    #[test]
    fn backward_saturates_at_ten_over_beta() {
        let beta = 4.0;
        let hi = Tensor::from_vec(vec![10.0 / beta]);
        let lo = Tensor::from_vec(vec![-10.0 / beta]);
        let up = Tensor::from_vec(vec![1.0]);
        assert!((ssn_backward(&hi, p(0.0, beta), &up).data()[0] - 1.0).abs() < 1e-4);
        assert!(ssn_backward(&lo, p(0.0, beta), &up).data()[0].abs() < 1e-4);
    }

    #[test]
    fn idempotent_when_theta_nonnegative_or_inputs_nonnegative() {
        let cases = [
            (p(0.5, 2.0), vec![-2.0, 0.1, 0.5, 0.9, 3.0]), // theta >= 0
            (p(-1.0, 2.0), vec![0.0, 0.3, 2.0, 5.0]),      // all x >= 0
        ];
        for (params, xs) in cases {
            let x = Tensor::from_vec(xs);
            let once = ssn_forward(&x, params);
            let twice = ssn_forward(&once, params);
            assert_eq!(once.data(), twice.data());
        }
    }

    #[test]
    fn surrogate_strictly_increasing_in_x() {
        let params = p(0.3, 1.7);
        let mut prev = f64::NEG_INFINITY;
        for i in 0..100 {
            let x = -5.0 + i as f64 * 0.1;
            let s = surrogate(x, params);
            assert!(s > prev);
            prev = s;
        }
    }

    #[test]
    fn surrogate_approaches_step_for_large_beta() {
        let params = p(0.0, 1e4);
        for &x in &[0.01, 0.05, 1.0] {
            assert!((surrogate(x, params) - 1.0).abs() < 1e-6);
            assert!(surrogate(-x, params).abs() < 1e-6);
        }
    }

    #[test]
    fn graph_op_applies_surrogate_not_true_derivative() {
        let mut g = Graph::new(true);
        let x = g.leaf(Tensor::from_vec(vec![0.2, -0.2]), true);
        let params = p(0.0, 2.0);
        let y = g.ssn(x, params);
        let loss = g.sum_all(y);
        g.backward(loss).unwrap();
        let grad = g.grad(x).unwrap();
        assert!((grad.data()[0] - surrogate(0.2, params)).abs() < 1e-15);
        assert!((grad.data()[1] - surrogate(-0.2, params)).abs() < 1e-15);
    }
}
