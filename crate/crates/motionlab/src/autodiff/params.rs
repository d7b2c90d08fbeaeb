//! Named parameter storage and the SGD optimizer.

use super::{GraphError, Tensor};
use indexmap::IndexMap;

/// Named trainable tensors with matching gradient accumulators.
///
/// Iteration order is insertion order everywhere (checkpoint layout,
/// gradient clipping, SGD updates), which keeps training bit-reproducible.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    entries: IndexMap<String, Entry>,
}

#[derive(Debug, Clone)]
struct Entry {
    value: Tensor,
    grad: Tensor,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a new parameter; names must be unique.
    pub fn define(&mut self, name: &str, value: Tensor) -> Result<(), GraphError> {
        if self.entries.contains_key(name) {
            return Err(GraphError::DuplicateParam {
                name: name.to_string(),
            });
        }
        let grad = Tensor::zeros(value.shape());
        self.entries.insert(name.to_string(), Entry { value, grad });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.entries.values().map(|e| e.value.len()).sum()
    }

    pub fn slot_of(&self, name: &str) -> Option<usize> {
        self.entries.get_index_of(name)
    }

    pub fn name_of(&self, slot: usize) -> Option<&str> {
        self.entries.get_index(slot).map(|(k, _)| k.as_str())
    }

    pub fn value(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name).map(|e| &e.value)
    }

    pub fn value_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name).map(|e| &mut e.value)
    }

    pub fn value_by_slot(&self, slot: usize) -> Option<&Tensor> {
        self.entries.get_index(slot).map(|(_, e)| &e.value)
    }

    pub fn grad(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name).map(|e| &e.grad)
    }

    /// Insertion-ordered `(name, value)` pairs.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, e)| (k.as_str(), &e.value))
    }

    pub fn zero_grads(&mut self) {
        for e in self.entries.values_mut() {
            e.grad.data_mut().fill(0.0);
        }
    }

    /// Adds `delta` into the gradient accumulator of the given slot.
    pub(crate) fn accumulate_grad(&mut self, slot: usize, delta: &Tensor) {
        let entry = self
            .entries
            .get_index_mut(slot)
            .map(|(_, e)| e)
            .expect("gradient for unknown parameter slot");
        debug_assert_eq!(entry.grad.shape(), delta.shape());
        for (g, d) in entry.grad.data_mut().iter_mut().zip(delta.data()) {
            *g += d;
        }
    }

    /// Global L2 norm over all gradients.
    pub fn grad_norm(&self) -> f64 {
        self.entries
            .values()
            .map(|e| e.grad.norm_squared())
            .sum::<f64>()
            .sqrt()
    }

    /// Scales every gradient in place.
    pub fn scale_grads(&mut self, factor: f64) {
        for e in self.entries.values_mut() {
            for g in e.grad.data_mut() {
                *g *= factor;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.entries.values().all(|e| e.value.is_finite())
    }
}

/// Hyperparameters of the SGD optimizer.
///
/// The learning rate follows a step decay schedule,
/// `lr(step) = lr0 * decay_factor^floor(step / decay_every)`; gradients are
/// clipped to a global L2 norm of `clip_norm` beforehand (0 disables), and
/// `momentum` blends in an exponential average of past gradients (0, the
/// default, is plain SGD).
#[derive(Debug, Clone, Copy)]
pub struct SgdConfig {
    pub lr0: f64,
    pub decay_every: usize,
    pub decay_factor: f64,
    pub momentum: f64,
    pub clip_norm: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            lr0: 0.001,
            decay_every: 10_000,
            decay_factor: 0.9,
            momentum: 0.0,
            clip_norm: 5.0,
        }
    }
}

/// Stochastic gradient descent with step decay, optional momentum, and
/// global-norm gradient clipping.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub config: SgdConfig,
    step: usize,
    velocity: Vec<Tensor>,
}

impl Sgd {
    pub fn new(config: SgdConfig) -> Self {
        Sgd {
            config,
            step: 0,
            velocity: Vec::new(),
        }
    }

    /// Steps already taken.
    pub fn step_count(&self) -> usize {
        self.step
    }

    /// Restores the step counter (checkpoint resume).
    pub fn set_step(&mut self, step: usize) {
        self.step = step;
    }

    /// Learning rate that the next update will use.
    pub fn effective_lr(&self) -> f64 {
        let k = if self.config.decay_every == 0 {
            0
        } else {
            self.step / self.config.decay_every
        };
        self.config.lr0 * self.config.decay_factor.powi(k as i32)
    }

    /// Applies one update from the accumulated gradients, then advances the
    /// step counter. Gradients are left untouched; callers zero them when
    /// starting the next accumulation.
    pub fn apply(&mut self, params: &mut ParamSet) {
        if self.config.clip_norm > 0.0 {
            let norm = params.grad_norm();
            if norm > self.config.clip_norm {
                params.scale_grads(self.config.clip_norm / norm);
            }
        }
        let lr = self.effective_lr();
        if self.velocity.len() != params.len() {
            self.velocity = params
                .iter()
                .map(|(_, v)| Tensor::zeros(v.shape()))
                .collect();
        }
        let momentum = self.config.momentum;
        for (slot, entry) in params.entries.values_mut().enumerate() {
            let vel = &mut self.velocity[slot];
            for ((p, g), v) in entry
                .value
                .data_mut()
                .iter_mut()
                .zip(entry.grad.data())
                .zip(vel.data_mut())
            {
                *v = momentum * *v + g;
                *p -= lr * *v;
            }
        }
        self.step += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn define_rejects_duplicates() {
        let mut p = ParamSet::new();
        p.define("w", Tensor::zeros(&[2, 2])).unwrap();
        assert!(matches!(
            p.define("w", Tensor::zeros(&[2])).unwrap_err(),
            GraphError::DuplicateParam { .. }
        ));
    }

    #[test]
    fn iteration_follows_insertion_order() {
        let mut p = ParamSet::new();
        for name in ["zeta", "alpha", "mid"] {
            p.define(name, Tensor::zeros(&[1])).unwrap();
        }
        let names: Vec<&str> = p.iter().map(|(n, _)| n).collect();
        assert_eq!(names, ["zeta", "alpha", "mid"]);
        assert_eq!(p.slot_of("alpha"), Some(1));
        assert_eq!(p.name_of(2), Some("mid"));
    }

    #[test]
    fn lr_schedule_decays_in_steps() {
        let mut sgd = Sgd::new(SgdConfig {
            lr0: 0.001,
            decay_every: 10_000,
            decay_factor: 0.9,
            momentum: 0.0,
            clip_norm: 0.0,
        });
        assert_eq!(sgd.effective_lr(), 0.001);
        sgd.set_step(9_999);
        assert_eq!(sgd.effective_lr(), 0.001);
        sgd.set_step(10_000);
        assert!((sgd.effective_lr() - 0.0009).abs() < 1e-18);
        sgd.set_step(25_000);
        assert!((sgd.effective_lr() - 0.001 * 0.81).abs() < 1e-18);
    }

    #[test]
    fn clipping_rescales_to_global_norm() {
        let mut p = ParamSet::new();
        p.define("a", Tensor::zeros(&[2])).unwrap();
        p.define("b", Tensor::zeros(&[1])).unwrap();
        p.accumulate_grad(0, &Tensor::from_vec(&[2], vec![3.0, 0.0]).unwrap());
        p.accumulate_grad(1, &Tensor::from_vec(&[1], vec![4.0]).unwrap());
        assert!((p.grad_norm() - 5.0).abs() < 1e-15);
        let mut sgd = Sgd::new(SgdConfig {
            lr0: 1.0,
            decay_every: 0,
            decay_factor: 1.0,
            momentum: 0.0,
            clip_norm: 1.0,
        });
        sgd.apply(&mut p);
        // Update = -lr * clipped grad = -(3/5, 0) and -(4/5).
        assert!((p.value("a").unwrap().data()[0] + 0.6).abs() < 1e-15);
        assert!((p.value("b").unwrap().data()[0] + 0.8).abs() < 1e-15);
    }

    #[test]
    fn momentum_accumulates_velocity() {
        let mut p = ParamSet::new();
        p.define("w", Tensor::zeros(&[1])).unwrap();
        let mut sgd = Sgd::new(SgdConfig {
            lr0: 1.0,
            decay_every: 0,
            decay_factor: 1.0,
            momentum: 0.5,
            clip_norm: 0.0,
        });
        // Constant unit gradient: velocity 1, 1.5, 1.75 -> value -1, -2.5, -4.25.
        for expected in [-1.0, -2.5, -4.25] {
            p.zero_grads();
            p.accumulate_grad(0, &Tensor::from_vec(&[1], vec![1.0]).unwrap());
            sgd.apply(&mut p);
            let v = p.value("w").unwrap().data()[0];
            assert!((v - expected).abs() < 1e-15, "{v} vs {expected}");
        }
    }
}
