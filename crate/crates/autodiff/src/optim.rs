//! First-order optimizers over named parameter sets.

use crate::error::{AutodiffError, Result};
use crate::params::Params;
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of a single tensor. `step` is the
/// 1-based index of this update.
pub fn adam_update<T: Real>(param: &mut [T], grad: &[T], m: &mut [T], v: &mut [T], step: u64, cfg: &AdamConfig) {
    let b1 = T::from_f64_lossy(cfg.beta1);
    let b2 = T::from_f64_lossy(cfg.beta2);
    let c1 = T::from_f64_lossy(1.0 - cfg.beta1.powi(step as i32));
    let c2 = T::from_f64_lossy(1.0 - cfg.beta2.powi(step as i32));
    let lr = T::from_f64_lossy(cfg.lr);
    let eps = T::from_f64_lossy(cfg.eps);
    for (((p, &g), m), v) in param.iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
        *m = b1 * *m + (T::one() - b1) * g;
        *v = b2 * *v + (T::one() - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Adam with lazily created per-parameter moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    first: Params<T>,
    second: Params<T>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: Params::new(),
            second: Params::new(),
        }
    }

    /// Restores a previously captured state.
    pub fn from_state(config: AdamConfig, step: u64, first: Params<T>, second: Params<T>) -> Self {
        Self {
            config,
            step,
            first,
            second,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &Params<T> {
        &self.first
    }

    pub fn second_moments(&self) -> &Params<T> {
        &self.second
    }

    /// Applies one update to every parameter that has a gradient.
    pub fn step(&mut self, params: &mut Params<T>, grads: &Params<T>) -> Result<()> {
        for (name, g) in grads.iter() {
            let p = params.require(name)?;
            if p.shape() != g.shape() {
                return Err(AutodiffError::shape(
                    "adam_step",
                    format!("{name}: param {:?} vs grad {:?}", p.shape(), g.shape()),
                ));
            }
        }
        self.step += 1;
        for (name, g) in grads.iter() {
            if !self.first.contains(name) {
                self.first.insert(name, Tensor::zeros(g.shape().to_vec()))?;
                self.second.insert(name, Tensor::zeros(g.shape().to_vec()))?;
            }
            let p = params.get_mut(name).expect("checked above");
            let m = self.first.get_mut(name).expect("inserted");
            let v = self.second.get_mut(name).expect("inserted");
            adam_update(p.data_mut(), g.data(), m.data_mut(), v.data_mut(), self.step, &self.config);
        }
        Ok(())
    }
}

/// Plain gradient descent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sgd {
    pub lr: f64,
}

impl Sgd {
    pub fn step<T: Real>(&self, params: &mut Params<T>, grads: &Params<T>) -> Result<()> {
        let lr = T::from_f64_lossy(self.lr);
        for (name, g) in grads.iter() {
            let p = params
                .get_mut(name)
                .ok_or_else(|| AutodiffError::UnknownParam(name.to_string()))?;
            if p.shape() != g.shape() {
                return Err(AutodiffError::shape("sgd_step", name.to_string()));
            }
            for (p, &g) in p.data_mut().iter_mut().zip(g.data()) {
                *p -= lr * g;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64) -> Params<f64> {
        let mut p = Params::new();
        p.insert("w", Tensor::full([3], value)).unwrap();
        p
    }

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let cfg = AdamConfig::default();
        let mut params = single(1.0);
        let mut adam = Adam::new(cfg);
        adam.step(&mut params, &single(0.5)).unwrap();
        let before = params.clone();
        let m_before = adam.first_moments().get("w").unwrap().data()[0];
        let v_before = adam.second_moments().get("w").unwrap().data()[0];
        // A zero gradient still moves params while m is nonzero, so measure
        // the moments and the pure zero-moment case separately.
        adam.step(&mut params, &single(0.0)).unwrap();
        assert_eq!(adam.first_moments().get("w").unwrap().data()[0], 0.9 * m_before);
        assert_eq!(adam.second_moments().get("w").unwrap().data()[0], 0.999 * v_before);
        assert_ne!(params, before);

        let mut fresh = single(1.0);
        let mut adam = Adam::new(cfg);
        adam.step(&mut fresh, &single(0.0)).unwrap();
        assert_eq!(fresh, single(1.0));
    }

    #[test]
    fn constant_gradient_update_tends_to_lr_sign() {
        // With constant g, m_hat = g and v_hat = g^2 exactly after bias
        // correction, so every step moves by lr * |g| / (|g| + eps).
        let cfg = AdamConfig::default();
        let mut params = single(0.0);
        let mut adam = Adam::new(cfg);
        let grad = single(-0.3);
        let mut prev = 0.0;
        for _ in 0..200 {
            adam.step(&mut params, &grad).unwrap();
            let now = params.get("w").unwrap().data()[0];
            let delta = now - prev;
            assert!((delta - cfg.lr).abs() < 1e-9, "delta {delta}");
            prev = now;
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut params = single(0.0);
        let mut bad = Params::new();
        bad.insert("w", Tensor::<f64>::zeros([2])).unwrap();
        let mut adam = Adam::new(AdamConfig::default());
        assert!(adam.step(&mut params, &bad).is_err());
        assert_eq!(adam.step_count(), 0);
    }

    #[test]
    fn deterministic_runs() {
        let run = || {
            let mut params = single(0.25);
            let mut adam = Adam::new(AdamConfig::default());
            for i in 0..10 {
                adam.step(&mut params, &single((i as f64 * 0.7).sin())).unwrap();
            }
            (params, adam)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn sgd_moves_against_gradient() {
        let mut params = single(1.0);
        Sgd { lr: 0.1 }.step(&mut params, &single(2.0)).unwrap();
        assert!(params.get("w").unwrap().data().iter().all(|&v| (v - 0.8).abs() < 1e-12));
    }
}
