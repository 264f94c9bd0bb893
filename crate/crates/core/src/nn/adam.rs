use serde::{Deserialize, Serialize};

use super::store::ParameterStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Adam {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }

    /// One bias-corrected Adam update. `grads` must be aligned with the store's
    /// iteration order. Any non-finite gradient rejects the whole step and
    /// leaves the store untouched.
    pub fn step(&self, store: &mut ParameterStore, grads: &[Vec<f64>]) -> Result<()> {
        if grads.len() != store.len() {
            return Err(Error::shape(
                "adam",
                format!(
                    "{} gradient arrays for {} parameters",
                    grads.len(),
                    store.len()
                ),
            ));
        }
        let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
        for (&id, g) in ids.iter().zip(grads) {
            let e = store.get(id);
            if g.len() != e.data.len() {
                return Err(Error::shape(
                    "adam",
                    format!(
                        "gradient for `{}` has {} entries, expected {}",
                        e.name,
                        g.len(),
                        e.data.len()
                    ),
                ));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient(e.name.clone()));
            }
        }
        store.step += 1;
        let t = store.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (&id, g) in ids.iter().zip(grads) {
            let e = store.get_mut(id);
            for k in 0..g.len() {
                e.m[k] = self.beta1 * e.m[k] + (1.0 - self.beta1) * g[k];
                e.v[k] = self.beta2 * e.v[k] + (1.0 - self.beta2) * g[k] * g[k];
                let m_hat = e.m[k] / bc1;
                let v_hat = e.v[k] / bc2;
                e.data[k] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(x: f64) -> ParameterStore {
        let mut s = ParameterStore::new();
        s.add("x", &[1], vec![x]).unwrap();
        s
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut s = scalar_store(1.5);
        Adam::default().step(&mut s, &[vec![0.0]]).unwrap();
        assert_eq!(s.get(s.find("x").unwrap()).data, vec![1.5]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = g, v̂ = g², so the update is lr · g / (|g| + eps)
        let mut s = scalar_store(0.0);
        Adam::with_lr(0.1).step(&mut s, &[vec![1.0]]).unwrap();
        let x = s.get(s.find("x").unwrap()).data[0];
        assert!((x + 0.1 / (1.0 + 1e-8)).abs() < 1e-15, "{x}");
    }

    #[test]
    fn identical_inputs_give_identical_results() {
        let mut a = scalar_store(0.3);
        let mut b = scalar_store(0.3);
        for g in [0.5, -1.25, 3.0] {
            Adam::default().step(&mut a, &[vec![g]]).unwrap();
            Adam::default().step(&mut b, &[vec![g]]).unwrap();
        }
        assert_eq!(a, b);
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut s = scalar_store(2.0);
        let err = Adam::default().step(&mut s, &[vec![f64::NAN]]).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient(ref n) if n == "x"));
        assert_eq!(s.step, 0);
        assert_eq!(s.get(s.find("x").unwrap()).data, vec![2.0]);
    }
}
