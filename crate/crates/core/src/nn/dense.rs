use rand::Rng;

use super::tensor::{matvec, matvec_t_acc, outer_acc};
use super::{add_assign, Grads, NnError, ParamId, ParamStore};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Identity,
}

/// `y = act(W x + b)` with `W: out × in`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub n_in: usize,
    pub n_out: usize,
    pub act: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseCache<T> {
    pub x: Vec<T>,
    pub y: Vec<T>,
}

impl Dense {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        n_in: usize,
        n_out: usize,
        act: Activation,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        let w = store.add_uniform(&format!("{name}.w"), &[n_out, n_in], rng)?;
        let b = store.add_zeros(&format!("{name}.b"), &[n_out])?;
        Ok(Dense { w, b, n_in, n_out, act })
    }

    pub fn forward<T: Scalar>(&self, store: &ParamStore<T>, x: &[T]) -> Result<DenseCache<T>, NnError> {
        if x.len() != self.n_in {
            return Err(NnError::ShapeMismatch {
                expected: format!("input of {}", self.n_in),
                found: format!("{}", x.len()),
            });
        }
        let mut y = matvec(store.value(self.w), x);
        add_assign(&mut y, store.value(self.b).data());
        if self.act == Activation::Tanh {
            y.iter_mut().for_each(|v| *v = v.tanh());
        }
        Ok(DenseCache { x: x.to_vec(), y })
    }

    /// Accumulates parameter grads and returns `dL/dx`.
    pub fn backward<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        grads: &mut Grads<T>,
        cache: &DenseCache<T>,
        dy: &[T],
    ) -> Vec<T> {
        let da: Vec<T> = match self.act {
            Activation::Tanh => dy.iter().zip(&cache.y).map(|(&g, &y)| g * (T::one() - y * y)).collect(),
            Activation::Identity => dy.to_vec(),
        };
        outer_acc(grads.get_mut(self.w), &da, &cache.x);
        add_assign(grads.get_mut(self.b).data_mut(), &da);
        let mut dx = vec![T::zero(); self.n_in];
        matvec_t_acc(store.value(self.w), &da, &mut dx);
        dx
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::nn::{gradient_check, GradCheckConfig, Tensor};

    #[test]
    fn zero_layer_outputs_zero() {
        let mut store = ParamStore::<f64>::new();
        let w = store.add_zeros("w", &[3, 2]).unwrap();
        let b = store.add_zeros("b", &[3]).unwrap();
        let d = Dense { w, b, n_in: 2, n_out: 3, act: Activation::Tanh };
        assert_eq!(d.forward(&store, &[0.3, -4.0]).unwrap().y, vec![0.0; 3]);
        assert!(matches!(d.forward(&store, &[1.0]), Err(NnError::ShapeMismatch { .. })));
    }

    #[test]
    fn scalar_case() {
        let (wv, bv, xv) = (0.7, -0.2, 1.3);
        let mut store = ParamStore::<f64>::new();
        let w = store.add("w", Tensor::from_vec(&[1, 1], vec![wv]).unwrap()).unwrap();
        let b = store.add("b", Tensor::from_vec(&[1], vec![bv]).unwrap()).unwrap();
        let d = Dense { w, b, n_in: 1, n_out: 1, act: Activation::Tanh };
        let cache = d.forward(&store, &[xv]).unwrap();
        let y = (wv * xv + bv).tanh();
        assert!((cache.y[0] - y).abs() < 1e-15);
        let mut g = store.new_grads();
        let dx = d.backward(&store, &mut g, &cache, &[1.0]);
        assert!((g.get(w).data()[0] - (1.0 - y * y) * xv).abs() < 1e-15);
        assert!((g.get(b).data()[0] - (1.0 - y * y)).abs() < 1e-15);
        assert!((dx[0] - (1.0 - y * y) * wv).abs() < 1e-15);
    }

    #[test]
    fn matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::<f64>::new();
        let d = Dense::new(&mut store, "d", 5, 4, Activation::Tanh, &mut rng).unwrap();
        let x = [0.3, -0.7, 1.1, 0.05, -0.4];
        let target = [0.2, -0.1, 0.5, 0.0];
        let cfg = GradCheckConfig { fraction: 1.0, ..Default::default() };
        let err = gradient_check(
            |s: &ParamStore<f64>, g: Option<&mut Grads<f64>>| {
                let c = d.forward(s, &x).unwrap();
                let loss: f64 = c.y.iter().zip(&target).map(|(y, t)| 0.5 * (y - t) * (y - t)).sum();
                if let Some(g) = g {
                    let dy: Vec<f64> = c.y.iter().zip(&target).map(|(y, t)| y - t).collect();
                    d.backward(s, g, &c, &dy);
                }
                loss
            },
            &mut store,
            &cfg,
        );
        assert!(err < 1e-6, "{err}");
    }
}
