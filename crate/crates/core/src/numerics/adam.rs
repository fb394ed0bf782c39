use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{ParamStore, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments per parameter slot, grown on demand so adapters
/// attached mid-run get fresh state.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    moments: Vec<Option<(Tensor, Tensor)>>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        AdamState {
            config,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update over every trainable parameter, then clears gradients.
/// A trainable parameter the loss never reached counts as a zero gradient.
pub fn adam_step(store: &mut ParamStore, state: &mut AdamState) -> Result<()> {
    if let Some((_, p)) = store
        .iter()
        .find(|(_, p)| p.grad.as_ref().is_some_and(|g| !g.is_finite()))
    {
        return Err(Error::Numerics(alloc::format!(
            "adam_step: non-finite gradient for `{}`",
            p.name
        )));
    }
    state.step += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    let t = state.step as f64;
    let bc1 = 1.0 - libm::pow(beta1, t);
    let bc2 = 1.0 - libm::pow(beta2, t);
    for (id, p) in store.iter_mut() {
        if !p.trainable {
            p.grad = None;
            continue;
        }
        let g = p
            .grad
            .take()
            .unwrap_or_else(|| Tensor::zeros(p.value.rows(), p.value.cols()));
        if state.moments.len() <= id.0 {
            state.moments.resize(id.0 + 1, None);
        }
        let (m, v) = state.moments[id.0].get_or_insert_with(|| {
            let (r, c) = (p.value.rows(), p.value.cols());
            (Tensor::zeros(r, c), Tensor::zeros(r, c))
        });
        let w = p.value.data_mut();
        for (((w, &g), m), v) in w
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let mhat = *m / bc1;
            let vhat = *v / bc2;
            *w -= lr * mhat / (libm::sqrt(vhat) + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(v: f64, trainable: bool) -> (ParamStore, super::super::ParamId) {
        let mut s = ParamStore::new();
        let id = s.insert("theta", Tensor::scalar(v), trainable).unwrap();
        (s, id)
    }

    #[test]
    fn constant_positive_gradient_decreases_monotonically() {
        let (mut s, id) = scalar_store(1.0, true);
        let mut st = AdamState::new(AdamConfig::default());
        let mut prev = 1.0;
        for _ in 0..50 {
            s.accumulate_grad(id, &Tensor::scalar(0.3)).unwrap();
            adam_step(&mut s, &mut st).unwrap();
            let now = s.value(id).item().unwrap();
            assert!(now < prev);
            prev = now;
        }
        assert!(s.get(id).grad.is_none());
    }

    #[test]
    fn frozen_parameter_unchanged() {
        let mut s = ParamStore::new();
        let frozen = s.insert("frozen", Tensor::scalar(2.5), false).unwrap();
        let live = s.insert("live", Tensor::scalar(1.0), true).unwrap();
        let mut st = AdamState::new(AdamConfig::default());
        for _ in 0..100 {
            s.accumulate_grad(frozen, &Tensor::scalar(1.0)).unwrap();
            s.accumulate_grad(live, &Tensor::scalar(1.0)).unwrap();
            adam_step(&mut s, &mut st).unwrap();
        }
        assert_eq!(s.value(frozen).item().unwrap(), 2.5);
        assert_eq!(st.step_count(), 100);
    }

    #[test]
    fn quadratic_bowl_converges() {
        // f(θ) = θ², lr = 0.1, θ₀ = 1.
        let (mut s, id) = scalar_store(1.0, true);
        let mut st = AdamState::new(AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        });
        let mut reached = None;
        for step in 1..=500 {
            let theta = s.value(id).item().unwrap();
            s.accumulate_grad(id, &Tensor::scalar(2.0 * theta)).unwrap();
            adam_step(&mut s, &mut st).unwrap();
            if s.value(id).item().unwrap().abs() < 1e-3 && reached.is_none() {
                reached = Some(step);
            }
        }
        assert!(reached.is_some(), "final θ = {}", s.value(id).item().unwrap());
        assert!(s.value(id).item().unwrap().abs() < 1e-3);
    }

    #[test]
    fn unreached_parameter_stays_put() {
        let (mut s, id) = scalar_store(1.0, true);
        let mut st = AdamState::new(AdamConfig::default());
        adam_step(&mut s, &mut st).unwrap();
        assert_eq!(s.value(id).item().unwrap(), 1.0);
        s.accumulate_grad(id, &Tensor::scalar(f64::NAN)).unwrap();
        assert!(adam_step(&mut s, &mut st).is_err());
    }
}
