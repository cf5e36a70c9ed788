//! First-order optimizers.
//!
//! The update rules are written once, per scalar, over any `Float`. Network
//! parameters stay `f32`; optimizer state is kept in `f64`.

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::model::{Gradients, ParameterSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Rmsprop,
    Sgd,
    Adagrad,
    Adadelta,
}

impl OptimizerKind {
    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Rmsprop => "rmsprop",
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adagrad => "adagrad",
            OptimizerKind::Adadelta => "adadelta",
        }
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const RMSPROP_RHO: f64 = 0.9;
pub const ADADELTA_RHO: f64 = 0.95;
pub const EPSILON: f64 = 1e-7;

/// Per-scalar optimizer state.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Moments<T> {
    pub first: T,
    pub second: T,
}

fn c<T: Float>(v: f64) -> T {
    T::from(v).expect("constant representable")
}

/// One update of a single parameter `p` with gradient `g`; `t` is the
/// 1-based step count. Returns the new parameter value.
pub fn update_scalar<T: Float>(kind: OptimizerKind, lr: T, t: u64, p: T, g: T, s: &mut Moments<T>) -> T {
    let one = T::one();
    let eps = c::<T>(EPSILON);
    match kind {
        OptimizerKind::Sgd => p - lr * g,
        OptimizerKind::Adam => {
            let (b1, b2) = (c::<T>(ADAM_BETA1), c::<T>(ADAM_BETA2));
            s.first = b1 * s.first + (one - b1) * g;
            s.second = b2 * s.second + (one - b2) * g * g;
            let ti = t.min(i32::MAX as u64) as i32;
            let m_hat = s.first / (one - b1.powi(ti));
            let v_hat = s.second / (one - b2.powi(ti));
            p - lr * m_hat / (v_hat.sqrt() + eps)
        }
        OptimizerKind::Rmsprop => {
            let rho = c::<T>(RMSPROP_RHO);
            s.second = rho * s.second + (one - rho) * g * g;
            p - lr * g / (s.second.sqrt() + eps)
        }
        OptimizerKind::Adagrad => {
            s.second = s.second + g * g;
            p - lr * g / (s.second.sqrt() + eps)
        }
        OptimizerKind::Adadelta => {
            let rho = c::<T>(ADADELTA_RHO);
            s.second = rho * s.second + (one - rho) * g * g;
            let dx = -((s.first + eps).sqrt() / (s.second + eps).sqrt()) * g;
            s.first = rho * s.first + (one - rho) * dx * dx;
            p + lr * dx
        }
    }
}

/// Optimizer over a whole parameter set.
#[derive(Clone, Debug)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    step: u64,
    state: Vec<Vec<Moments<f64>>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, params: &ParameterSet) -> Self {
        Self {
            kind,
            step: 0,
            state: params.tensors.iter().map(|t| vec![Moments::default(); t.data.len()]).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update to every trainable tensor with a gradient.
    pub fn apply(&mut self, params: &mut ParameterSet, grads: &Gradients, lr: f64) {
        self.step += 1;
        let t = self.step;
        for ((tensor, g), state) in params.tensors.iter_mut().zip(&grads.per_tensor).zip(&mut self.state) {
            let Some(g) = g else { continue };
            if !tensor.trainable {
                continue;
            }
            for ((p, &gi), s) in tensor.data.iter_mut().zip(g).zip(state.iter_mut()) {
                *p = update_scalar(self.kind, lr, t, *p as f64, gi as f64, s) as f32;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // f(x) = 0.5 * a * x^2, so the gradient at x0 is a * x0.
    const A: f64 = 2.0;
    const X0: f64 = 1.5;
    const LR: f64 = 0.01;

    fn one_step(kind: OptimizerKind) -> f64 {
        let mut s = Moments::default();
        update_scalar(kind, LR, 1, X0, A * X0, &mut s)
    }

    #[test]
    fn sgd_textbook() {
        assert!((one_step(OptimizerKind::Sgd) - (1.5 - 0.01 * 3.0)).abs() < 1e-10);
    }

    #[test]
    fn adam_textbook() {
        // m = 0.1 g, v = 0.001 g^2; bias correction restores g and g^2.
        let g = 3.0f64;
        let expect = X0 - LR * g / (g + 1e-7);
        assert!((one_step(OptimizerKind::Adam) - expect).abs() < 1e-10);
    }

    #[test]
    fn rmsprop_textbook() {
        let g = 3.0f64;
        let v = 0.1 * g * g;
        let expect = X0 - LR * g / (v.sqrt() + 1e-7);
        assert!((one_step(OptimizerKind::Rmsprop) - expect).abs() < 1e-10);
    }

    #[test]
    fn adagrad_textbook() {
        let g = 3.0f64;
        let expect = X0 - LR * g / (3.0 + 1e-7);
        assert!((one_step(OptimizerKind::Adagrad) - expect).abs() < 1e-10);
    }

    #[test]
    fn adadelta_textbook() {
        let g = 3.0f64;
        let eg2 = 0.05 * g * g;
        let dx = -(1e-7f64).sqrt() / (eg2 + 1e-7).sqrt() * g;
        let expect = X0 + LR * dx;
        assert!((one_step(OptimizerKind::Adadelta) - expect).abs() < 1e-10);
    }

    #[test]
    fn second_adam_step_uses_bias_correction() {
        let mut s = Moments::default();
        let x1 = update_scalar(OptimizerKind::Adam, LR, 1, X0, A * X0, &mut s);
        let x2 = update_scalar(OptimizerKind::Adam, LR, 2, x1, A * x1, &mut s);
        let (g1, g2) = (A * X0, A * x1);
        let m = 0.9 * 0.1 * g1 + 0.1 * g2;
        let v = 0.999 * 0.001 * g1 * g1 + 0.001 * g2 * g2;
        let m_hat = m / (1.0 - 0.81);
        let v_hat = v / (1.0 - 0.999f64.powi(2));
        let expect = x1 - LR * m_hat / (v_hat.sqrt() + 1e-7);
        assert!((x2 - expect).abs() < 1e-10);
    }

    #[test]
    fn every_optimizer_descends_on_quadratic() {
        for kind in [
            OptimizerKind::Adam,
            OptimizerKind::Rmsprop,
            OptimizerKind::Sgd,
            OptimizerKind::Adagrad,
        ] {
            let mut s = Moments::default();
            let mut x = X0;
            for t in 1..=200 {
                x = update_scalar(kind, 0.05, t, x, A * x, &mut s);
            }
            assert!(x.abs() < X0 * 0.5, "{kind:?} ended at {x}");
        }
    }
}
