//! AdamW with decoupled weight decay and bias-corrected moments.

use std::collections::BTreeMap;

use crate::error::{contract, Result};
use crate::{ParamStore, Scalar};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment buffers of one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamW<T> {
    pub config: AdamWConfig,
    step: u64,
    moments: BTreeMap<String, Moments<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    /// Rebuilds optimizer state from persisted parts.
    pub fn from_parts(config: AdamWConfig, step: u64, moments: BTreeMap<String, Moments<T>>) -> Self {
        Self { config, step, moments }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> &BTreeMap<String, Moments<T>> {
        &self.moments
    }

    /// Applies one update to every parameter in `store` using its gradient.
    ///
    /// Fails without touching any parameter if a gradient is missing.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        for (name, p) in store.iter() {
            if p.grad().is_none() {
                return Err(contract(format!("parameter `{name}` has no gradient")));
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = T::of(1.0 - c.beta1.powi(t));
        let bc2 = T::of(1.0 - c.beta2.powi(t));
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (lr, eps) = (T::of(c.lr), T::of(c.eps));
        let decay = T::one() - T::of(c.lr * c.weight_decay);

        for (name, p) in store.iter_mut() {
            let n = p.numel();
            let mom = self.moments.entry(name.to_string()).or_insert_with(|| Moments {
                m: vec![T::zero(); n],
                v: vec![T::zero(); n],
            });
            if mom.m.len() != n {
                return Err(contract(format!("moment shape mismatch for `{name}`")));
            }
            let grad = p.grad().unwrap().to_vec();
            let data = p.data_mut();
            for i in 0..n {
                let g = grad[i];
                data[i] *= decay;
                mom.m[i] = b1 * mom.m[i] + (T::one() - b1) * g;
                mom.v[i] = b2 * mom.v[i] + (T::one() - b2) * g * g;
                let m_hat = mom.m[i] / bc1;
                let v_hat = mom.v[i] / bc2;
                data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tensor;

    fn store(vals: &[f64], grad: Option<Vec<f64>>) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::new(&[vals.len()], vals.to_vec()).unwrap())
            .unwrap();
        s.get_mut("w").unwrap().set_grad(grad);
        s
    }

    #[test]
    fn zero_grad_no_decay_is_identity() {
        let mut s = store(&[1.0, -2.0], Some(vec![0.0, 0.0]));
        let mut opt = AdamW::new(AdamWConfig::default());
        opt.step(&mut s).unwrap();
        assert_eq!(s.get("w").unwrap().data(), &[1.0, -2.0]);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let g = vec![0.3, -5.0, 1e-3];
        let mut s = store(&[0.0, 0.0, 0.0], Some(g.clone()));
        let cfg = AdamWConfig {
            lr: 1e-2,
            ..Default::default()
        };
        let mut opt = AdamW::new(cfg);
        opt.step(&mut s).unwrap();
        // m̂ = g, v̂ = g², so the step is lr·g/(|g|+ε).
        for (p, gi) in s.get("w").unwrap().data().iter().zip(&g) {
            let expected = -cfg.lr * gi / (gi.abs() + cfg.eps);
            assert!((p - expected).abs() < 1e-12, "{p} vs {expected}");
            assert!((p + cfg.lr * gi.signum()).abs() < 1e-6 * cfg.lr / gi.abs().min(1.0));
        }
    }

    #[test]
    fn decay_only_shrinks_multiplicatively() {
        let mut s = store(&[2.0, -4.0], Some(vec![0.0, 0.0]));
        let cfg = AdamWConfig {
            lr: 0.1,
            weight_decay: 0.5,
            ..Default::default()
        };
        let mut opt = AdamW::new(cfg);
        opt.step(&mut s).unwrap();
        let f = 1.0 - 0.1 * 0.5;
        assert_eq!(s.get("w").unwrap().data(), &[2.0 * f, -4.0 * f]);
    }

    #[test]
    fn missing_grad_names_parameter() {
        let mut s = store(&[1.0], None);
        let err = AdamW::new(AdamWConfig::default()).step(&mut s).unwrap_err();
        assert!(err.to_string().contains("`w`"));
    }

    #[test]
    fn step_counter_increments() {
        let mut s = store(&[1.0], Some(vec![0.5]));
        let mut opt = AdamW::new(AdamWConfig::default());
        for i in 1..=5 {
            opt.step(&mut s).unwrap();
            assert_eq!(opt.step_count(), i);
        }
    }
}
