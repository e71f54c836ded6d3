//! Named parameter storage, Adam, and reduce-on-plateau scheduling.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, Result};
use crate::scalar::Float;
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::Tensor;

/// Ordered collection of named learnable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Float> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<usize> {
        let name = name.into();
        if self.index_of(&name).is_some() {
            return Err(invalid("param_store", format!("duplicate parameter {name}")));
        }
        self.names.push(name);
        self.tensors.push(tensor);
        Ok(self.names.len() - 1)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Records every parameter on `tape` as a gradient-tracked leaf.
    pub fn bind<'t>(&self, tape: &'t Tape<T>) -> BoundParams<'t, T> {
        BoundParams {
            vars: self.tensors.iter().map(|t| tape.param(t)).collect(),
        }
    }

    pub fn cast<U: Float>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }
}

/// Parameters of a [`ParamStore`] recorded on one tape, in store order.
pub struct BoundParams<'t, T: Float> {
    vars: Vec<Var<'t, T>>,
}

impl<'t, T: Float> BoundParams<'t, T> {
    pub fn var(&self, index: usize) -> Var<'t, T> {
        self.vars[index]
    }

    pub fn vars(&self) -> &[Var<'t, T>] {
        &self.vars
    }

    /// Gradient per parameter, in store order.
    pub fn gradients(&self, grads: &Gradients<T>) -> Vec<Tensor<T>> {
        self.vars.iter().map(|&v| grads.wrt(v)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.00027,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moments are kept in `f64` regardless of the
/// parameter precision.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new<T: Float>(config: AdamConfig, params: &ParamStore<T>) -> Self {
        Self {
            config,
            step: 0,
            first: params.tensors().iter().map(|t| vec![0.0; t.len()]).collect(),
            second: params.tensors().iter().map(|t| vec![0.0; t.len()]).collect(),
        }
    }

    pub fn lr(&self) -> f64 {
        self.config.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step<T: Float>(&mut self, params: &mut ParamStore<T>, grads: &[Tensor<T>]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(mismatch("adam_step", &[params.len()], &[grads.len()]));
        }
        for (p, g) in params.tensors().iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(mismatch("adam_step", p.shape(), g.shape()));
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (i, (p, g)) in params.tensors_mut().iter_mut().zip(grads).enumerate() {
            let m = &mut self.first[i];
            let v = &mut self.second[i];
            for (j, (w, &gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                let gv = gv.as_f64();
                m[j] = beta1 * m[j] + (1.0 - beta1) * gv;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gv * gv;
                let update = lr * (m[j] / bc1) / ((v[j] / bc2).sqrt() + eps);
                *w = T::of(w.as_f64() - update);
            }
        }
        Ok(())
    }
}

/// Multiplies the learning rate by `factor` once the best observed loss
/// has not improved for `patience` consecutive epochs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub factor: f64,
    pub patience: usize,
    best: f64,
    stale: usize,
}

impl Default for PlateauScheduler {
    fn default() -> Self {
        Self::new(0.1, 20)
    }
}

impl PlateauScheduler {
    pub fn new(factor: f64, patience: usize) -> Self {
        Self {
            factor,
            patience,
            best: f64::INFINITY,
            stale: 0,
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    /// Records one epoch's validation loss and returns the learning rate to
    /// use next.
    pub fn observe(&mut self, loss: f64, lr: f64) -> f64 {
        if loss < self.best {
            self.best = loss;
            self.stale = 0;
            return lr;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            self.stale = 0;
            lr * self.factor
        } else {
            lr
        }
    }

    /// Learning rate after replaying `losses` from `lr`.
    pub fn replay(&mut self, losses: &[f64], lr: f64) -> f64 {
        losses.iter().fold(lr, |lr, &l| self.observe(l, lr))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(values: &[f64]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::from_f64(&[values.len()], values).unwrap())
            .unwrap();
        s
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut params = store(&[0.5, -1.0, 2.0]);
        let before = params.clone();
        let mut adam = Adam::new(AdamConfig::default(), &params);
        for _ in 0..3 {
            adam.step(&mut params, &[Tensor::zeros(&[3])]).unwrap();
        }
        assert_eq!(params, before);
    }

    #[test]
    fn first_step_matches_closed_form() {
        // m1 = (1-b1) g, v1 = (1-b2) g^2, bias-corrected to g and g^2:
        // w1 = w0 - lr * g / (|g| + eps).
        let cfg = AdamConfig {
            lr: 0.01,
            ..AdamConfig::default()
        };
        let grads = [0.3, -2.0, 1e-3];
        let mut params = store(&[1.0, 1.0, 1.0]);
        let mut adam = Adam::new(cfg, &params);
        adam.step(&mut params, &[Tensor::from_f64(&[3], &grads).unwrap()])
            .unwrap();
        for (w, g) in params.tensors()[0].data().iter().zip(grads) {
            let expect = 1.0 - 0.01 * g / (g.abs() + 1e-8);
            assert!((w - expect).abs() < 1e-12, "{w} vs {expect}");
        }
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let mut params = store(&[0.25, 4.0]);
        let before = params.clone();
        let mut adam = Adam::new(AdamConfig { lr: 0.0, ..AdamConfig::default() }, &params);
        adam.step(&mut params, &[Tensor::from_f64(&[2], &[1.0, -3.0]).unwrap()])
            .unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn default_learning_rate() {
        assert_eq!(AdamConfig::default().lr, 0.00027);
    }

    #[test]
    fn adam_rejects_shape_mismatch() {
        let mut params = store(&[1.0, 2.0]);
        let mut adam = Adam::new(AdamConfig::default(), &params);
        assert!(adam.step(&mut params, &[Tensor::zeros(&[3])]).is_err());
    }

    #[test]
    fn strictly_decreasing_losses_keep_rate() {
        let losses: Vec<f64> = (0..50).map(|i| 10.0 - i as f64 * 0.1).collect();
        assert_eq!(PlateauScheduler::default().replay(&losses, 1.0), 1.0);
    }

    #[test]
    fn twenty_flat_epochs_decay_rate() {
        let mut losses = vec![1.0];
        losses.extend(std::iter::repeat_n(1.0, 20));
        let lr = PlateauScheduler::default().replay(&losses, 1.0);
        assert!((lr - 0.1).abs() < 1e-15);
    }

    #[test]
    fn nineteen_flat_then_improvement_keeps_rate() {
        let mut losses = vec![1.0];
        losses.extend(std::iter::repeat_n(1.0, 19));
        losses.push(0.5);
        losses.extend(std::iter::repeat_n(0.5, 19));
        assert_eq!(PlateauScheduler::default().replay(&losses, 1.0), 1.0);
    }

    #[test]
    fn patience_resets_after_decay() {
        let losses = vec![1.0; 41];
        let lr = PlateauScheduler::default().replay(&losses, 1.0);
        assert!((lr - 0.01).abs() < 1e-15);
    }
}
