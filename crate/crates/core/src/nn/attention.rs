use rand::Rng;

use super::tensor::{matvec, matvec_t_acc, outer_acc};
use super::{add_assign, dot, Grads, NnError, ParamId, ParamStore};
use crate::Scalar;

/// Additive attention pooling with a learned global query:
/// `s_t = uᵀ tanh(W_a h_t + b_a)`, `α = softmax(s)`, output `Σ α_t h_t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Attention {
    pub wa: ParamId,
    pub ba: ParamId,
    pub u: ParamId,
    pub d_h: usize,
    pub d_a: usize,
}

#[derive(Debug, Clone)]
pub struct AttentionCache<T> {
    pub hs: Vec<Vec<T>>,
    pub a: Vec<Vec<T>>,
    pub weights: Vec<T>,
}

impl Attention {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        d_h: usize,
        d_a: usize,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        Ok(Attention {
            wa: store.add_uniform(&format!("{name}.wa"), &[d_a, d_h], rng)?,
            ba: store.add_zeros(&format!("{name}.ba"), &[d_a])?,
            u: store.add_uniform(&format!("{name}.u"), &[d_a], rng)?,
            d_h,
            d_a,
        })
    }

    pub fn forward<T: Scalar>(&self, store: &ParamStore<T>, hs: &[Vec<T>]) -> Result<(Vec<T>, AttentionCache<T>), NnError> {
        if hs.is_empty() {
            return Err(NnError::EmptySequence);
        }
        if let Some(bad) = hs.iter().find(|h| h.len() != self.d_h) {
            return Err(NnError::ShapeMismatch { expected: format!("state of {}", self.d_h), found: format!("{}", bad.len()) });
        }
        let u = store.value(self.u).data();
        let mut a = Vec::with_capacity(hs.len());
        let mut scores = Vec::with_capacity(hs.len());
        for h in hs {
            let mut at = matvec(store.value(self.wa), h);
            add_assign(&mut at, store.value(self.ba).data());
            at.iter_mut().for_each(|v| *v = v.tanh());
            scores.push(dot(u, &at));
            a.push(at);
        }
        let max = scores.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = scores.iter().map(|&s| (s - max).exp()).collect();
        let total: T = exps.iter().copied().sum();
        let weights: Vec<T> = exps.iter().map(|&e| e / total).collect();

        let mut out = vec![T::zero(); self.d_h];
        for (h, &w) in hs.iter().zip(&weights) {
            for (o, &v) in out.iter_mut().zip(h) {
                *o = *o + w * v;
            }
        }
        Ok((out, AttentionCache { hs: hs.to_vec(), a, weights }))
    }

    /// Returns gradients on each input state.
    pub fn backward<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        grads: &mut Grads<T>,
        cache: &AttentionCache<T>,
        d_out: &[T],
    ) -> Vec<Vec<T>> {
        let u = store.value(self.u).data();
        let d_weights: Vec<T> = cache.hs.iter().map(|h| dot(d_out, h)).collect();
        let mean = dot(&cache.weights, &d_weights);
        let mut d_hs = Vec::with_capacity(cache.hs.len());
        for (t, h) in cache.hs.iter().enumerate() {
            let w = cache.weights[t];
            let mut dh: Vec<T> = d_out.iter().map(|&g| w * g).collect();
            let ds = w * (d_weights[t] - mean);
            let at = &cache.a[t];
            add_assign(
                grads.get_mut(self.u).data_mut(),
                &at.iter().map(|&v| ds * v).collect::<Vec<_>>(),
            );
            let dpre: Vec<T> = at.iter().zip(u).map(|(&a, &ui)| ds * ui * (T::one() - a * a)).collect();
            outer_acc(grads.get_mut(self.wa), &dpre, h);
            add_assign(grads.get_mut(self.ba).data_mut(), &dpre);
            matvec_t_acc(store.value(self.wa), &dpre, &mut dh);
            d_hs.push(dh);
        }
        d_hs
    }
}
