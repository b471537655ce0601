use serde::{Deserialize, Serialize};

use crate::error::{BatError, Result};
use crate::numerics::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamWConfig {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamWConfig { lr, weight_decay, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates, one vector per parameter.
#[derive(Clone, Debug, Default)]
pub struct AdamState {
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One AdamW update from the gradients held in `store`. Decay shrinks each
/// parameter by `lr · weight_decay` before the Adam step.
pub fn optimizer_step(store: &mut ParamStore, state: &mut AdamState, cfg: &AdamWConfig) -> Result<()> {
    if let Some(p) = store.iter().find(|p| p.grad.iter().any(|g| !g.is_finite())) {
        return Err(BatError::Numeric { op: p.name.clone(), detail: "non-finite gradient".into() });
    }
    if state.m.len() != store.len() || state.m.iter().zip(store.iter()).any(|(m, p)| m.len() != p.grad.len()) {
        state.m = store.iter().map(|p| vec![0.0; p.grad.len()]).collect();
        state.v = state.m.clone();
        state.step = 0;
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let shrink = 1.0 - cfg.lr * cfg.weight_decay;
    for ((p, m), v) in store.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        let data = p.tensor.data_mut();
        for i in 0..data.len() {
            let g = p.grad[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            let mhat = m[i] / c1;
            let vhat = v[i] / c2;
            data[i] = data[i] * shrink - cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Init, Tensor};

    fn scalar_store(v: f64, g: f64) -> ParamStore {
        let mut s = ParamStore::new();
        let id = s.insert("w", Tensor::from_vec(vec![v])).unwrap();
        s.get_mut(id).grad[0] = g;
        s
    }

    #[test]
    fn zero_gradient_no_decay_is_identity() {
        let mut s = ParamStore::new();
        s.init("w", &[3, 2], Init::Normal(1.0), 4).unwrap();
        let before = s.by_name("w").unwrap().tensor.clone();
        optimizer_step(&mut s, &mut AdamState::new(), &AdamWConfig::new(0.1, 0.0)).unwrap();
        assert_eq!(s.by_name("w").unwrap().tensor, before);
    }

    #[test]
    fn first_step_is_minus_lr() {
        let mut s = scalar_store(0.0, 1.0);
        optimizer_step(&mut s, &mut AdamState::new(), &AdamWConfig::new(0.1, 0.0)).unwrap();
        let got = s.by_name("w").unwrap().tensor.data()[0];
        assert!((got + 0.1 / (1.0 + 1e-8)).abs() < 1e-15, "{got}");
    }

    #[test]
    fn decoupled_decay() {
        let mut s = scalar_store(2.0, 0.0);
        optimizer_step(&mut s, &mut AdamState::new(), &AdamWConfig::new(0.1, 0.01)).unwrap();
        assert!((s.by_name("w").unwrap().tensor.data()[0] - 2.0 * 0.999).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut s = scalar_store(1.0, f64::NAN);
        match optimizer_step(&mut s, &mut AdamState::new(), &AdamWConfig::new(0.1, 0.0)) {
            Err(BatError::Numeric { op, .. }) => assert_eq!(op, "w"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn quadratic_loss_decreases_monotonically() {
        let target = [1.5, -0.5, 3.0];
        let mut s = ParamStore::new();
        let id = s.insert("w", Tensor::zeros(&[3])).unwrap();
        let loss = |s: &ParamStore| -> f64 {
            s.get(id).tensor.data().iter().zip(target).map(|(w, t)| (w - t) * (w - t)).sum()
        };
        let mut state = AdamState::new();
        let cfg = AdamWConfig::new(1e-3, 0.0);
        let mut prev = loss(&s);
        for _ in 0..100 {
            let g: Vec<f64> = s.get(id).tensor.data().iter().zip(target).map(|(w, t)| 2.0 * (w - t)).collect();
            s.get_mut(id).grad.copy_from_slice(&g);
            optimizer_step(&mut s, &mut state, &cfg).unwrap();
            let now = loss(&s);
            assert!(now < prev);
            prev = now;
        }
    }
}
