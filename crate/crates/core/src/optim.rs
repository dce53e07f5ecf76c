//! Named parameter storage and the Adam optimizer.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Gradients keyed by parameter name.
pub type Grads<S> = BTreeMap<String, Tensor<S>>;

#[derive(Debug, Clone, PartialEq)]
struct Moments<S> {
    m: Tensor<S>,
    v: Tensor<S>,
}

/// Trainable parameters plus Adam state.
///
/// Iteration order is the lexicographic order of names, which keeps
/// checkpoints and updates deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<S> {
    params: BTreeMap<String, Tensor<S>>,
    moments: BTreeMap<String, Moments<S>>,
    step: u64,
}

impl<S: Scalar> Default for ParamStore<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore {
            params: BTreeMap::new(),
            moments: BTreeMap::new(),
            step: 0,
        }
    }

    /// Adds or replaces a parameter; its Adam moments restart at zero.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<S>) {
        let name = name.into();
        self.moments.insert(
            name.clone(),
            Moments {
                m: Tensor::zeros(value.shape()),
                v: Tensor::zeros(value.shape()),
            },
        );
        self.params.insert(name, value);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<S>> {
        self.params
            .get(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<S>> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<S>)> {
        self.params.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.params.values().map(|t| t.len()).sum()
    }

    /// Number of Adam steps taken so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    /// Records parameter `name` on `tape`.
    pub fn bind(&self, tape: &mut Tape<S>, name: &str) -> Result<Var> {
        Ok(tape.param(name, self.get(name)?.clone()))
    }

    /// Same parameters in another precision, with fresh optimizer state.
    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        let mut out = ParamStore::new();
        for (name, t) in &self.params {
            out.insert(name.clone(), t.cast());
        }
        out
    }

    pub fn into_tensors(self) -> BTreeMap<String, Tensor<S>> {
        self.params
    }

    pub fn from_tensors(tensors: BTreeMap<String, Tensor<S>>) -> Self {
        let mut store = ParamStore::new();
        for (name, t) in tensors {
            store.insert(name, t);
        }
        store
    }
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of every parameter in `store`.
///
/// `grads` must contain exactly the parameters of the store.
pub fn adam_step<S: Scalar>(store: &mut ParamStore<S>, grads: &Grads<S>, cfg: &AdamConfig) -> Result<()> {
    for name in store.params.keys() {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::MissingGradient(name.clone()))?;
        if g.shape() != store.params[name].shape() {
            return Err(Error::shape(
                "adam_step",
                format!("gradient for `{name}` has shape {:?}, parameter {:?}", g.shape(), store.params[name].shape()),
            ));
        }
    }
    if let Some(extra) = grads.keys().find(|k| !store.params.contains_key(*k)) {
        return Err(Error::UnknownParameter(extra.clone()));
    }

    store.step += 1;
    let t = store.step as i32;
    let bc1 = 1.0 - libm::pow(cfg.beta1, t as f64);
    let bc2 = 1.0 - libm::pow(cfg.beta2, t as f64);
    let (b1, b2) = (S::from_f64(cfg.beta1), S::from_f64(cfg.beta2));
    let (one_b1, one_b2) = (S::from_f64(1.0 - cfg.beta1), S::from_f64(1.0 - cfg.beta2));
    let (lr, eps) = (S::from_f64(cfg.lr), S::from_f64(cfg.eps));
    let (inv_bc1, inv_bc2) = (S::from_f64(1.0 / bc1), S::from_f64(1.0 / bc2));

    for (name, p) in store.params.iter_mut() {
        let g = &grads[name];
        let mom = store.moments.get_mut(name).expect("moments track params");
        let (m, v) = (mom.m.data_mut(), mom.v.data_mut());
        for (((pi, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + one_b1 * gi;
            *vi = b2 * *vi + one_b2 * gi * gi;
            let m_hat = *mi * inv_bc1;
            let v_hat = *vi * inv_bc2;
            *pi -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Rescales `grads` in place so their global L2 norm is at most `max_norm`.
///
/// Returns the norm before clipping and whether clipping was applied.
pub fn clip_global_norm<S: Scalar>(grads: &mut Grads<S>, max_norm: f64) -> (f64, bool) {
    let norm = libm::sqrt(grads.values().map(|g| g.sum_squares()).sum::<f64>());
    if norm > max_norm && norm.is_finite() {
        let factor = S::from_f64(max_norm / norm);
        for g in grads.values_mut() {
            g.scale(factor);
        }
        (norm, true)
    } else {
        (norm, false)
    }
}

/// Names of parameters whose values differ between two stores.
pub fn changed_params<S: Scalar>(a: &ParamStore<S>, b: &ParamStore<S>) -> Vec<String> {
    a.iter()
        .filter(|(name, t)| b.get(name).map(|u| u != *t).unwrap_or(true))
        .map(|(name, _)| name.clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn scalar_store(p: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("p", Tensor::scalar(p));
        s
    }

    fn grads_of(g: f64) -> Grads<f64> {
        let mut m = Grads::new();
        m.insert("p".into(), Tensor::scalar(g));
        m
    }

    /// Independent scalar Adam recurrence.
    fn reference_adam(mut p: f64, grads: &[f64], cfg: &AdamConfig) -> f64 {
        let (mut m, mut v) = (0.0, 0.0);
        for (i, &g) in grads.iter().enumerate() {
            let t = (i + 1) as f64;
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
            let mh = m / (1.0 - cfg.beta1.powf(t));
            let vh = v / (1.0 - cfg.beta2.powf(t));
            p -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
        }
        p
    }

    #[test]
    fn zero_gradient_is_a_no_op_and_advances_step() {
        let mut s = ParamStore::<f32>::new();
        s.insert("w", Tensor::from_f64(&[2, 2], &[1.0, -2.0, 3.5, 0.25]).unwrap());
        let before = s.clone();
        let mut g = Grads::new();
        g.insert("w".into(), Tensor::zeros(&[2, 2]));
        adam_step(&mut s, &g, &AdamConfig::default()).unwrap();
        assert_eq!(s.get("w").unwrap(), before.get("w").unwrap());
        assert_eq!(s.step(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        let mut s = scalar_store(1.0);
        adam_step(&mut s, &grads_of(1.0), &cfg).unwrap();
        let p = s.get("p").unwrap().item();
        assert!((p - (1.0 - 0.1 / (1.0 + 1e-8))).abs() < 1e-12, "{p}");
        assert!((p - 0.9).abs() < 1e-8);
    }

    #[test]
    fn two_steps_match_scalar_reference() {
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        let mut s = scalar_store(1.0);
        adam_step(&mut s, &grads_of(1.0), &cfg).unwrap();
        adam_step(&mut s, &grads_of(1.0), &cfg).unwrap();
        let expected = reference_adam(1.0, &[1.0, 1.0], &cfg);
        assert!((s.get("p").unwrap().item() - expected).abs() < 1e-12);
        assert_eq!(s.step(), 2);
    }

    #[test]
    fn missing_and_unknown_gradients_are_rejected() {
        let mut s = scalar_store(1.0);
        let err = adam_step(&mut s, &Grads::new(), &AdamConfig::default()).unwrap_err();
        assert_eq!(err, Error::MissingGradient("p".into()));
        let mut g = grads_of(1.0);
        g.insert("q".into(), Tensor::scalar(0.0));
        assert!(matches!(
            adam_step(&mut s, &g, &AdamConfig::default()),
            Err(Error::UnknownParameter(_))
        ));
        assert_eq!(s.step(), 0);
    }

    #[test]
    fn clipping_caps_the_global_norm() {
        let mut g = Grads::<f64>::new();
        g.insert("a".into(), Tensor::from_f64(&[2], &[300.0, 400.0]).unwrap());
        let (norm, clipped) = clip_global_norm(&mut g, 100.0);
        assert_eq!(norm, 500.0);
        assert!(clipped);
        assert_eq!(g["a"].data(), &[60.0, 80.0]);
        let (_, clipped) = clip_global_norm(&mut g, 100.0);
        assert!(!clipped);
        let _ = vec![0];
    }
}
