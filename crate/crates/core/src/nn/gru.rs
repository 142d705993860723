use rand::Rng;

use super::tensor::{matvec, matvec_t_acc, outer_acc};
use super::{add_assign, sigmoid, Grads, NnError, ParamId, ParamStore};
use crate::Scalar;

/// GRU cell. Every gate reads the concatenation `[x; h]`:
///
/// ```text
/// z  = σ(W_z [x; h] + b_z)
/// r  = σ(W_r [x; h] + b_r)
/// n  = tanh(W_n [x; r ⊙ h] + b_n)
/// h' = (1 − z) ⊙ n + z ⊙ h
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GruCell {
    pub wz: ParamId,
    pub bz: ParamId,
    pub wr: ParamId,
    pub br: ParamId,
    pub wn: ParamId,
    pub bn: ParamId,
    pub n_in: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone)]
struct StepCache<T> {
    xh: Vec<T>,
    xrh: Vec<T>,
    z: Vec<T>,
    r: Vec<T>,
    n: Vec<T>,
}

fn gate<T: Scalar>(store: &ParamStore<T>, w: ParamId, b: ParamId, input: &[T]) -> Vec<T> {
    let mut a = matvec(store.value(w), input);
    add_assign(&mut a, store.value(b).data());
    a
}

impl GruCell {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        n_in: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        let shape = [hidden, n_in + hidden];
        Ok(GruCell {
            wz: store.add_uniform(&format!("{name}.wz"), &shape, rng)?,
            bz: store.add_zeros(&format!("{name}.bz"), &[hidden])?,
            wr: store.add_uniform(&format!("{name}.wr"), &shape, rng)?,
            br: store.add_zeros(&format!("{name}.br"), &[hidden])?,
            wn: store.add_uniform(&format!("{name}.wn"), &shape, rng)?,
            bn: store.add_zeros(&format!("{name}.bn"), &[hidden])?,
            n_in,
            hidden,
        })
    }

    fn step<T: Scalar>(&self, store: &ParamStore<T>, x: &[T], h: &[T]) -> (Vec<T>, StepCache<T>) {
        let mut xh = x.to_vec();
        xh.extend_from_slice(h);
        let z: Vec<T> = gate(store, self.wz, self.bz, &xh).into_iter().map(sigmoid).collect();
        let r: Vec<T> = gate(store, self.wr, self.br, &xh).into_iter().map(sigmoid).collect();
        let mut xrh = x.to_vec();
        xrh.extend(r.iter().zip(h).map(|(&r, &h)| r * h));
        let n: Vec<T> = gate(store, self.wn, self.bn, &xrh).into_iter().map(T::tanh).collect();
        let h_new = (0..self.hidden)
            .map(|i| (T::one() - z[i]) * n[i] + z[i] * h[i])
            .collect();
        (h_new, StepCache { xh, xrh, z, r, n })
    }

    /// Backward through one step. Returns `(dx, dh_prev)`.
    fn step_backward<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        grads: &mut Grads<T>,
        c: &StepCache<T>,
        dh_new: &[T],
    ) -> (Vec<T>, Vec<T>) {
        let (ni, nh) = (self.n_in, self.hidden);
        let h = &c.xh[ni..];
        let mut dh: Vec<T> = (0..nh).map(|i| dh_new[i] * c.z[i]).collect();
        let dan: Vec<T> = (0..nh)
            .map(|i| dh_new[i] * (T::one() - c.z[i]) * (T::one() - c.n[i] * c.n[i]))
            .collect();
        let daz: Vec<T> = (0..nh)
            .map(|i| dh_new[i] * (h[i] - c.n[i]) * c.z[i] * (T::one() - c.z[i]))
            .collect();

        outer_acc(grads.get_mut(self.wn), &dan, &c.xrh);
        add_assign(grads.get_mut(self.bn).data_mut(), &dan);
        let mut dxrh = vec![T::zero(); ni + nh];
        matvec_t_acc(store.value(self.wn), &dan, &mut dxrh);

        let mut dar = vec![T::zero(); nh];
        for i in 0..nh {
            let drh = dxrh[ni + i];
            dh[i] = dh[i] + drh * c.r[i];
            dar[i] = drh * h[i] * c.r[i] * (T::one() - c.r[i]);
        }

        let mut dxh = vec![T::zero(); ni + nh];
        outer_acc(grads.get_mut(self.wz), &daz, &c.xh);
        add_assign(grads.get_mut(self.bz).data_mut(), &daz);
        matvec_t_acc(store.value(self.wz), &daz, &mut dxh);
        outer_acc(grads.get_mut(self.wr), &dar, &c.xh);
        add_assign(grads.get_mut(self.br).data_mut(), &dar);
        matvec_t_acc(store.value(self.wr), &dar, &mut dxh);

        let mut dx = dxrh[..ni].to_vec();
        add_assign(&mut dx, &dxh[..ni]);
        add_assign(&mut dh, &dxh[ni..]);
        (dx, dh)
    }
}

/// Stacked GRU layers run from a zero initial state; layer `l + 1` reads the
/// hidden states of layer `l`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GruStack {
    pub layers: Vec<GruCell>,
}

#[derive(Debug, Clone)]
pub struct GruStackCache<T> {
    steps: Vec<Vec<StepCache<T>>>,
}

impl GruStack {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        n_in: usize,
        hidden: usize,
        n_layers: usize,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        let layers = (0..n_layers)
            .map(|l| GruCell::new(store, &format!("{name}.{l}"), if l == 0 { n_in } else { hidden }, hidden, rng))
            .collect::<Result<_, _>>()?;
        Ok(GruStack { layers })
    }

    /// Hidden states of the top layer, one per input.
    pub fn forward<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        inputs: &[Vec<T>],
    ) -> Result<(Vec<Vec<T>>, GruStackCache<T>), NnError> {
        if inputs.is_empty() {
            return Err(NnError::EmptySequence);
        }
        let n_in = self.layers.first().map_or(inputs[0].len(), |c| c.n_in);
        if let Some(bad) = inputs.iter().find(|x| x.len() != n_in) {
            return Err(NnError::ShapeMismatch { expected: format!("input of {n_in}"), found: format!("{}", bad.len()) });
        }
        let mut seq = inputs.to_vec();
        let mut steps = Vec::with_capacity(self.layers.len());
        for cell in &self.layers {
            let mut h = vec![T::zero(); cell.hidden];
            let mut caches = Vec::with_capacity(seq.len());
            let mut out = Vec::with_capacity(seq.len());
            for x in &seq {
                let (h_new, c) = cell.step(store, x, &h);
                caches.push(c);
                out.push(h_new.clone());
                h = h_new;
            }
            steps.push(caches);
            seq = out;
        }
        Ok((seq, GruStackCache { steps }))
    }

    /// Backpropagation through time. `d_out[t]` is the gradient on the top
    /// layer's state at step `t`; returns gradients on the inputs.
    pub fn backward<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        grads: &mut Grads<T>,
        cache: &GruStackCache<T>,
        d_out: &[Vec<T>],
    ) -> Vec<Vec<T>> {
        let mut d_seq = d_out.to_vec();
        for (cell, caches) in self.layers.iter().zip(&cache.steps).rev() {
            let mut d_in = vec![Vec::new(); caches.len()];
            let mut carry = vec![T::zero(); cell.hidden];
            for t in (0..caches.len()).rev() {
                let mut dh = d_seq[t].clone();
                add_assign(&mut dh, &carry);
                let (dx, dh_prev) = cell.step_backward(store, grads, &caches[t], &dh);
                d_in[t] = dx;
                carry = dh_prev;
            }
            d_seq = d_in;
        }
        d_seq
    }
}
