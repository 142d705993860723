use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{NnError, Tensor};
use crate::Scalar;

/// Handle into a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Gradient buffers shaped like the parameters of one store. Workers can
/// fill private copies and merge them afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads<T> {
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> Grads<T> {
    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn zero(&mut self) {
        self.tensors.iter_mut().for_each(|t| t.fill(T::zero()));
    }

    /// Element-wise `self += other`, in parameter order.
    pub fn merge(&mut self, other: &Grads<T>) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            super::add_assign(a.data_mut(), b.data());
        }
    }

    pub fn scale(&mut self, factor: T) {
        for t in &mut self.tensors {
            t.data_mut().iter_mut().for_each(|x| *x = *x * factor);
        }
    }
}

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
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Slot<T> {
    name: String,
    value: Tensor<T>,
    m: Tensor<T>,
    v: Tensor<T>,
    trainable: bool,
}

/// Named parameters with their gradients and Adam state.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    slots: Vec<Slot<T>>,
    grads: Grads<T>,
    step: u64,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { slots: Vec::new(), grads: Grads { tensors: Vec::new() }, step: 0 }
    }

    pub fn add(&mut self, name: &str, value: Tensor<T>) -> Result<ParamId, NnError> {
        if self.id(name).is_some() {
            return Err(NnError::DuplicateParameter(name.to_string()));
        }
        let zeros = Tensor::zeros(value.shape());
        self.grads.tensors.push(zeros.clone());
        self.slots.push(Slot { name: name.to_string(), value, m: zeros.clone(), v: zeros, trainable: true });
        Ok(ParamId(self.slots.len() - 1))
    }

    pub fn add_zeros(&mut self, name: &str, shape: &[usize]) -> Result<ParamId, NnError> {
        self.add(name, Tensor::zeros(shape))
    }

    /// Uniform in ±1/√fan_in where fan_in is the last dimension.
    pub fn add_uniform<R: Rng + ?Sized>(&mut self, name: &str, shape: &[usize], rng: &mut R) -> Result<ParamId, NnError> {
        let mut t = Tensor::zeros(shape);
        let bound = 1.0 / (t.cols() as f64).sqrt();
        for x in t.data_mut() {
            *x = T::cast(rng.random_range(-bound..bound));
        }
        self.add(name, t)
    }

    pub fn add_normal<R: Rng + ?Sized>(&mut self, name: &str, shape: &[usize], std: f64, rng: &mut R) -> Result<ParamId, NnError> {
        let normal = Normal::new(0.0, std).expect("std must be finite and non-negative");
        let mut t = Tensor::zeros(shape);
        for x in t.data_mut() {
            *x = T::cast(normal.sample(rng));
        }
        self.add(name, t)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.slots.iter().position(|s| s.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.slots.len()).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.slots[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.slots[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.slots[id.0].value
    }

    pub fn grads(&self) -> &Grads<T> {
        &self.grads
    }

    pub fn grads_mut(&mut self) -> &mut Grads<T> {
        &mut self.grads
    }

    /// Zeroed gradient buffers with this store's layout.
    pub fn new_grads(&self) -> Grads<T> {
        Grads { tensors: self.slots.iter().map(|s| Tensor::zeros(s.value.shape())).collect() }
    }

    /// Adds externally computed gradients to the store's buffers.
    pub fn accumulate(&mut self, grads: &Grads<T>) {
        self.grads.merge(grads);
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.slots[id.0].trainable = trainable;
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.slots[id.0].trainable
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn n_scalars(&self) -> usize {
        self.slots.iter().map(|s| s.value.len()).sum()
    }

    /// One Adam update with bias correction. Frozen parameters are skipped.
    /// All gradients are checked before anything is modified; they are
    /// zeroed afterwards.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<(), NnError> {
        for (slot, g) in self.slots.iter().zip(&self.grads.tensors) {
            if slot.trainable && !g.all_finite() {
                return Err(NnError::NonFiniteGradient(slot.name.clone()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::cast(cfg.beta1), T::cast(cfg.beta2));
        let c1 = T::one() - b1.powi(t);
        let c2 = T::one() - b2.powi(t);
        let (lr, eps) = (T::cast(cfg.lr), T::cast(cfg.eps));
        for (slot, g) in self.slots.iter_mut().zip(&mut self.grads.tensors) {
            if slot.trainable {
                let it = slot
                    .value
                    .data_mut()
                    .iter_mut()
                    .zip(slot.m.data_mut().iter_mut())
                    .zip(slot.v.data_mut().iter_mut())
                    .zip(g.data());
                for (((p, m), v), &gi) in it {
                    *m = b1 * *m + (T::one() - b1) * gi;
                    *v = b2 * *v + (T::one() - b2) * gi * gi;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
            g.fill(T::zero());
        }
        Ok(())
    }

    /// Replaces values by name, checking shapes. Adam state is reset.
    pub fn load_values(&mut self, values: Vec<(String, Tensor<f64>)>) -> Result<(), NnError> {
        if values.len() != self.slots.len() {
            return Err(NnError::Checkpoint(format!(
                "expected {} parameters, found {}",
                self.slots.len(),
                values.len()
            )));
        }
        for (name, t) in values {
            let id = self
                .id(&name)
                .ok_or_else(|| NnError::Checkpoint(format!("unknown parameter {name}")))?;
            let slot = &mut self.slots[id.0];
            if slot.value.shape() != t.shape() {
                return Err(NnError::ShapeMismatch {
                    expected: format!("{name} {:?}", slot.value.shape()),
                    found: format!("{:?}", t.shape()),
                });
            }
            for (dst, &src) in slot.value.data_mut().iter_mut().zip(t.data()) {
                *dst = T::cast(src);
            }
            slot.m.fill(T::zero());
            slot.v.fill(T::zero());
        }
        self.step = 0;
        self.grads.zero();
        Ok(())
    }

    /// Values as 64-bit tensors in insertion order.
    pub fn export_values(&self) -> Vec<(String, Tensor<f64>)> {
        self.slots
            .iter()
            .map(|s| {
                let data = s.value.data().iter().map(|x| x.to_f64_lossy()).collect();
                (s.name.clone(), Tensor::from_vec(s.value.shape(), data).expect("shape preserved"))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn store() -> (ParamStore<f64>, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::from_vec(&[3], vec![1.0, -2.0, 0.5]).unwrap()).unwrap();
        (s, id)
    }

    #[test]
    fn zero_grads_leave_params() {
        let (mut s, id) = store();
        s.adam_step(&AdamConfig::default()).unwrap();
        assert_eq!(s.value(id).data(), &[1.0, -2.0, 0.5]);
        assert_eq!(s.step(), 1);
    }

    #[test]
    fn first_step_moves_by_lr_against_sign() {
        let (mut s, id) = store();
        s.grads_mut().get_mut(id).data_mut().copy_from_slice(&[3.0, -0.01, 250.0]);
        let cfg = AdamConfig { lr: 0.01, ..Default::default() };
        s.adam_step(&cfg).unwrap();
        let moved: Vec<f64> = s.value(id).data().iter().zip([1.0, -2.0, 0.5]).map(|(a, b)| a - b).collect();
        for (d, sign) in moved.iter().zip([-1.0, 1.0, -1.0]) {
            assert!((d - sign * 0.01).abs() < 1e-6, "{d}");
        }
        assert!(s.grads().get(id).data().iter().all(|g| *g == 0.0));
    }

    #[test]
    fn nan_grad_rejected_before_update() {
        let (mut s, id) = store();
        s.grads_mut().get_mut(id).data_mut()[1] = f64::NAN;
        assert!(matches!(s.adam_step(&AdamConfig::default()), Err(NnError::NonFiniteGradient(n)) if n == "w"));
        assert_eq!(s.value(id).data(), &[1.0, -2.0, 0.5]);
        assert_eq!(s.step(), 0);
    }

    #[test]
    fn frozen_params_do_not_move() {
        let (mut s, id) = store();
        s.set_trainable(id, false);
        s.grads_mut().get_mut(id).fill(1.0);
        s.adam_step(&AdamConfig::default()).unwrap();
        assert_eq!(s.value(id).data(), &[1.0, -2.0, 0.5]);
    }

    #[test]
    fn init_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = ParamStore::<f64>::new();
        let w = s.add_uniform("w", &[8, 16], &mut rng).unwrap();
        assert!(s.value(w).data().iter().all(|x| x.abs() <= 0.25));
        let e = s.add_normal("e", &[100, 10], 0.1, &mut rng).unwrap();
        let data = s.value(e).data();
        let mean = data.iter().sum::<f64>() / data.len() as f64;
        let var = data.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / data.len() as f64;
        assert!(mean.abs() < 0.02 && (var.sqrt() - 0.1).abs() < 0.01);
        assert!(s.add_zeros("w", &[1]).is_err());
    }

    #[test]
    fn values_round_trip_with_shape_check() {
        let (mut s, id) = store();
        let exported = s.export_values();
        s.value_mut(id).fill(0.0);
        s.load_values(exported.clone()).unwrap();
        assert_eq!(s.value(id).data(), &[1.0, -2.0, 0.5]);
        let bad = vec![("w".to_string(), Tensor::zeros(&[4]))];
        assert!(matches!(s.load_values(bad), Err(NnError::ShapeMismatch { .. })));
    }
}
