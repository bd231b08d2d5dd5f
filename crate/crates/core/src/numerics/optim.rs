use alloc::vec;
use alloc::vec::Vec;

use super::{ParamLayout, Real};
use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerSpec {
    pub kind: OptimizerKind,
    pub lr: f64,
}

impl OptimizerSpec {
    pub fn sgd(lr: f64) -> Self {
        OptimizerSpec { kind: OptimizerKind::Sgd, lr }
    }

    pub fn adam(lr: f64) -> Self {
        OptimizerSpec { kind: OptimizerKind::Adam, lr }
    }
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        OptimizerSpec::adam(1e-3)
    }
}

#[derive(Debug, Clone)]
pub struct OptimizerState<T> {
    spec: OptimizerSpec,
    /// First and second Adam moments; empty for SGD.
    moments: Option<(Vec<T>, Vec<T>)>,
    step: u64,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(spec: OptimizerSpec) -> Result<Self> {
        if !(spec.lr.is_finite() && spec.lr > 0.0) {
            return Err(Error::Config(alloc::format!("learning rate must be positive, got {}", spec.lr)));
        }
        Ok(OptimizerState {
            spec,
            moments: None,
            step: 0,
        })
    }

    pub fn spec(&self) -> OptimizerSpec {
        self.spec
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Updates `weights` in place. A non-finite gradient entry aborts before
    /// anything is modified and names the owning layer.
    pub fn step(&mut self, layout: &ParamLayout, weights: &mut [T], grad: &[T]) -> Result<()> {
        if weights.len() != grad.len() || weights.len() != layout.total_len() {
            return Err(Error::dim(
                "optimizer_step",
                &[layout.total_len(), layout.total_len()],
                &[weights.len(), grad.len()],
            ));
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::Training(alloc::format!(
                "non-finite gradient in layer {}",
                layout.owner(i).unwrap_or("?")
            )));
        }
        self.step += 1;
        let lr = T::lit(self.spec.lr);
        match self.spec.kind {
            OptimizerKind::Sgd => {
                for (w, &g) in weights.iter_mut().zip(grad) {
                    *w -= lr * g;
                }
            }
            OptimizerKind::Adam => {
                let (m, v) = self
                    .moments
                    .get_or_insert_with(|| (vec![T::zero(); grad.len()], vec![T::zero(); grad.len()]));
                let (b1, b2) = (T::lit(ADAM_BETA1), T::lit(ADAM_BETA2));
                let t = self.step as i32;
                let c1 = T::one() - b1.powi(t);
                let c2 = T::one() - b2.powi(t);
                let eps = T::lit(ADAM_EPS);
                for i in 0..grad.len() {
                    let g = grad[i];
                    m[i] = b1 * m[i] + (T::one() - b1) * g;
                    v[i] = b2 * v[i] + (T::one() - b2) * g * g;
                    let m_hat = m[i] / c1;
                    let v_hat = v[i] / c2;
                    weights[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}
