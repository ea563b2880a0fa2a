use serde::{Deserialize, Serialize};

use super::{NnError, ParamStore};

/// RMSProp: `s <- rho s + (1 - rho) g^2`, `theta <- theta - lr g / (sqrt(s) + eps)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmsProp {
    pub lr: f64,
    pub rho: f64,
    pub eps: f64,
}

impl RmsProp {
    pub fn new(lr: f64, rho: f64, eps: f64) -> Result<Self, NnError> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(NnError::Config(format!("learning rate must be positive, got {lr}")));
        }
        if !(0.0..1.0).contains(&rho) {
            return Err(NnError::Config(format!("rho must lie in [0, 1), got {rho}")));
        }
        if eps.is_nan() || eps <= 0.0 {
            return Err(NnError::Config(format!("eps must be positive, got {eps}")));
        }
        Ok(Self { lr, rho, eps })
    }

    /// Applies one update to every non-frozen tensor, then zeroes all gradients.
    pub fn step(&self, store: &mut ParamStore) {
        for t in store.iter_mut() {
            if !t.frozen {
                for ((theta, s), &g) in t.values.iter_mut().zip(&mut t.opt_state).zip(&t.grad) {
                    *s = self.rho * *s + (1.0 - self.rho) * g * g;
                    *theta -= self.lr * g / (s.sqrt() + self.eps);
                }
            }
            t.zero_grad();
        }
    }
}

impl Default for RmsProp {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            rho: 0.9,
            eps: 1e-8,
        }
    }
}

pub fn rmsprop_update(store: &mut ParamStore, lr: f64, rho: f64, eps: f64) -> Result<(), NnError> {
    RmsProp::new(lr, rho, eps)?.step(store);
    Ok(())
}
