use serde::{Deserialize, Serialize};

use super::Parameters;
use crate::error::{shape_err, Result, ZsdError};

/// Heavy-ball momentum: `v <- mu v - lr g`, `p <- p + v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdState {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Vec<Vec<f64>>,
}

impl Default for SgdState {
    fn default() -> Self {
        Self::new(0.01, 0.9)
    }
}

impl SgdState {
    pub fn new(learning_rate: f64, momentum: f64) -> Self {
        Self {
            learning_rate,
            momentum,
            velocity: Vec::new(),
        }
    }

    pub fn velocity(&self) -> &[Vec<f64>] {
        &self.velocity
    }

    /// Applies one update. Nothing is modified when a gradient is non-finite
    /// or shapes disagree.
    pub fn step<P: Parameters + ?Sized>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let grads = grads.tensors();
        let mut params = params.tensors_mut();
        if grads.len() != params.len() {
            return Err(shape_err("SgdState::step tensors", params.len(), grads.len()));
        }
        for (p, g) in params.iter().zip(&grads) {
            if p.len() != g.len() {
                return Err(shape_err("SgdState::step tensor", p.len(), g.len()));
            }
        }
        if grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(ZsdError::NonFiniteGradient);
        }
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| vec![0.0; p.len()]).collect();
        } else if self.velocity.len() != params.len()
            || self.velocity.iter().zip(&params).any(|(v, p)| v.len() != p.len())
        {
            return Err(shape_err("SgdState velocity", "buffers matching parameters", "stale buffers"));
        }
        let (mu, lr) = (self.momentum, self.learning_rate);
        for ((p, g), v) in params.iter_mut().zip(&grads).zip(&mut self.velocity) {
            for ((pi, gi), vi) in p.iter_mut().zip(g.iter()).zip(v.iter_mut()) {
                *vi = mu * *vi - lr * gi;
                *pi += *vi;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Clone)]
    struct Flat(Vec<f64>);

    impl Parameters for Flat {
        fn tensors(&self) -> Vec<&[f64]> {
            vec![&self.0]
        }
        fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
            vec![&mut self.0]
        }
    }

    #[test]
    fn zero_momentum_is_plain_descent() {
        let mut p = Flat(vec![1.0, -2.0]);
        let g = Flat(vec![0.5, 1.0]);
        let mut sgd = SgdState::new(0.1, 0.0);
        sgd.step(&mut p, &g).unwrap();
        assert_eq!(p.0, vec![1.0 - 0.05, -2.0 - 0.1]);
        sgd.step(&mut p, &g).unwrap();
        assert_eq!(p.0, vec![1.0 - 0.05 - 0.05, -2.0 - 0.1 - 0.1]);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Flat(vec![3.0]);
        let mut sgd = SgdState::default();
        sgd.step(&mut p, &Flat(vec![0.0])).unwrap();
        assert_eq!(p.0, vec![3.0]);
    }

    #[test]
    fn two_momentum_steps_unroll() {
        // v1 = -lr g, v2 = mu v1 - lr g  =>  total = -0.01 g - 0.019 g
        let g = 2.0;
        let mut p = Flat(vec![0.0]);
        let mut sgd = SgdState::new(0.01, 0.9);
        sgd.step(&mut p, &Flat(vec![g])).unwrap();
        sgd.step(&mut p, &Flat(vec![g])).unwrap();
        assert!((p.0[0] - (-0.01 * g - 0.019 * g)).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_rejected_without_update() {
        let mut p = Flat(vec![1.0, 1.0]);
        let mut sgd = SgdState::default();
        let err = sgd.step(&mut p, &Flat(vec![0.1, f64::NAN])).unwrap_err();
        assert!(matches!(err, ZsdError::NonFiniteGradient));
        assert_eq!(p.0, vec![1.0, 1.0]);
        assert!(sgd.velocity().is_empty());
    }
}
