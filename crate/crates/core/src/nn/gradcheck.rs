use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Grads, ParamStore};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub h: f64,
    /// Share of each tensor's entries that is probed.
    pub fraction: f64,
    /// Lower bound on probes per tensor (capped by its size).
    pub min_per_tensor: usize,
    pub seed: u64,
    /// Lower bound of the relative-error denominator. Raise it for deep
    /// graphs where some gradients are smaller than the roundoff of the loss.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { h: 1e-5, fraction: 0.01, min_per_tensor: 4, seed: 0, floor: 1e-8 }
    }
}

/// Compares analytic gradients against central differences on a random
/// subset of trainable entries and returns the largest relative error
/// `|g_a − g_n| / max(|g_a|, |g_n|, floor)`.
///
/// `loss` must be deterministic. When given a gradient buffer it must add
/// its analytic gradients to it.
pub fn gradient_check<T, F>(mut loss: F, store: &mut ParamStore<T>, cfg: &GradCheckConfig) -> f64
where
    T: Scalar,
    F: FnMut(&ParamStore<T>, Option<&mut Grads<T>>) -> T,
{
    let mut analytic = store.new_grads();
    loss(store, Some(&mut analytic));

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let h = T::cast(cfg.h);
    let mut worst = 0.0f64;
    let ids: Vec<_> = store.ids().filter(|&id| store.is_trainable(id)).collect();
    for id in ids {
        let n = store.value(id).len();
        let k = ((n as f64 * cfg.fraction).ceil() as usize).max(cfg.min_per_tensor).min(n);
        for i in index::sample(&mut rng, n, k).iter() {
            let orig = store.value(id).data()[i];
            store.value_mut(id).data_mut()[i] = orig + h;
            let up = loss(store, None);
            store.value_mut(id).data_mut()[i] = orig - h;
            let down = loss(store, None);
            store.value_mut(id).data_mut()[i] = orig;

            let numeric = ((up - down) / (h + h)).to_f64_lossy();
            let exact = analytic.get(id).data()[i].to_f64_lossy();
            let denom = exact.abs().max(numeric.abs()).max(cfg.floor);
            worst = worst.max((exact - numeric).abs() / denom);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{dot, Tensor};

    #[test]
    fn linear_loss_is_exact() {
        let x = [0.5, -1.5, 2.0, 3.25];
        let mut store = ParamStore::<f64>::new();
        let id = store.add("theta", Tensor::from_vec(&[4], vec![0.1, 0.2, 0.3, 0.4]).unwrap()).unwrap();
        let cfg = GradCheckConfig { fraction: 1.0, ..Default::default() };
        let err = gradient_check(
            |s: &ParamStore<f64>, g: Option<&mut Grads<f64>>| {
                if let Some(g) = g {
                    g.get_mut(id).data_mut().copy_from_slice(&x);
                }
                dot(s.value(id).data(), &x)
            },
            &mut store,
            &cfg,
        );
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("theta", Tensor::from_vec(&[3], vec![0.4, -0.3, 1.2]).unwrap()).unwrap();
        let cfg = GradCheckConfig { fraction: 1.0, ..Default::default() };
        let err = gradient_check(
            |s: &ParamStore<f64>, g: Option<&mut Grads<f64>>| {
                let v = s.value(id).data();
                if let Some(g) = g {
                    // Forgot the factor 2.
                    g.get_mut(id).data_mut().copy_from_slice(v);
                }
                v.iter().map(|x| x * x).sum()
            },
            &mut store,
            &cfg,
        );
        assert!(err > 1e-2);
    }

    #[test]
    fn parameters_are_restored() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("theta", Tensor::from_vec(&[2], vec![0.25, 0.5]).unwrap()).unwrap();
        let before = store.clone();
        gradient_check(
            |s: &ParamStore<f64>, _g: Option<&mut Grads<f64>>| s.value(id).data().iter().map(|x| x.sin()).sum(),
            &mut store,
            &GradCheckConfig::default(),
        );
        assert_eq!(store, before);
    }
}
