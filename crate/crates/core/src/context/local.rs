use crate::nn::{add_assign, bce_multilabel, AttentionCache, DenseCache, Grads, GruStackCache, ParamStore};
use crate::token_model::{EmbedMode, TokenCache};
use crate::tokenize::{LocalSample, NoteEvent};
use crate::Scalar;

use super::{ContextError, ContextNet, Fusion};

/// A positive sample and its negatives: one context, several candidates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocalGroup {
    pub melodic: Vec<NoteEvent>,
    pub harmonic: Vec<NoteEvent>,
    pub candidates: Vec<(NoteEvent, [bool; 4])>,
}

impl LocalGroup {
    pub fn n_rows(&self) -> usize {
        self.candidates.len()
    }
}

/// Merges consecutive samples that share both contexts.
pub fn group_samples(samples: &[LocalSample]) -> Vec<LocalGroup> {
    let mut groups: Vec<LocalGroup> = Vec::new();
    for s in samples {
        match groups.last_mut() {
            Some(g) if !s.is_positive() && g.melodic == s.melodic && g.harmonic == s.harmonic => {
                g.candidates.push((s.candidate, s.labels));
            }
            _ => groups.push(LocalGroup {
                melodic: s.melodic.clone(),
                harmonic: s.harmonic.clone(),
                candidates: vec![(s.candidate, s.labels)],
            }),
        }
    }
    groups
}

/// Mean losses over all candidate rows of a batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchLoss<T> {
    pub total: T,
    pub melodic: Option<T>,
    pub harmonic: Option<T>,
    pub rows: usize,
}

/// Forward record of the note-level melody network.
#[derive(Debug, Clone)]
pub(crate) struct MelodyPass<T> {
    tokens: Vec<TokenCache<T>>,
    rnn: GruStackCache<T>,
    att: AttentionCache<T>,
    pub out: Vec<T>,
}

#[derive(Debug, Clone)]
pub(crate) struct HarmonyPass<T> {
    tokens: Vec<TokenCache<T>>,
    att: AttentionCache<T>,
    pub out: Vec<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Branch {
    Melodic,
    Harmonic,
}

impl ContextNet {
    /// Token embeddings (melodic mode) through the GRU stack and attention.
    pub(crate) fn melody_forward<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        base: &[T],
        events: &[NoteEvent],
    ) -> Result<MelodyPass<T>, ContextError> {
        if events.is_empty() {
            return Err(ContextError::EmptyContext);
        }
        let mut xs = Vec::with_capacity(events.len());
        let mut tokens = Vec::with_capacity(events.len());
        for e in events {
            let (x, c) = self.token.embed(store, base, e, EmbedMode::Melodic)?;
            xs.push(x);
            tokens.push(c);
        }
        let (hs, rnn) = self.melody_rnn.forward(store, &xs)?;
        let (out, att) = self.melody_att.forward(store, &hs)?;
        Ok(MelodyPass { tokens, rnn, att, out })
    }

    pub(crate) fn melody_backward<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        grads: &mut Grads<T>,
        pass: &MelodyPass<T>,
        d_out: &[T],
        d_base: &mut [T],
    ) {
        let d_hs = self.melody_att.backward(store, grads, &pass.att, d_out);
        let d_xs = self.melody_rnn.backward(store, grads, &pass.rnn, &d_hs);
        for (c, dx) in pass.tokens.iter().zip(&d_xs) {
            self.token.embed_backward(store, grads, c, dx, d_base);
        }
    }

    /// Token embeddings (harmonic mode) pooled by attention, no recurrence.
    pub(crate) fn harmony_forward<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        base: &[T],
        events: &[NoteEvent],
    ) -> Result<HarmonyPass<T>, ContextError> {
        if events.is_empty() {
            return Err(ContextError::EmptyContext);
        }
        let mut xs = Vec::with_capacity(events.len());
        let mut tokens = Vec::with_capacity(events.len());
        for e in events {
            let (x, c) = self.token.embed(store, base, e, EmbedMode::Harmonic)?;
            xs.push(x);
            tokens.push(c);
        }
        let (out, att) = self.harmony_att.forward(store, &xs)?;
        Ok(HarmonyPass { tokens, att, out })
    }

    fn harmony_backward<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        grads: &mut Grads<T>,
        pass: &HarmonyPass<T>,
        d_out: &[T],
        d_base: &mut [T],
    ) {
        let d_xs = self.harmony_att.backward(store, grads, &pass.att, d_out);
        for (c, dx) in pass.tokens.iter().zip(&d_xs) {
            self.token.embed_backward(store, grads, c, dx, d_base);
        }
    }

    pub fn encode_melodic_ctx<T: Scalar>(&self, store: &ParamStore<T>, events: &[NoteEvent]) -> Result<Vec<T>, ContextError> {
        let base = self.token.octave_base(store);
        Ok(self.melody_forward(store, &base, events)?.out)
    }

    pub fn encode_harmonic_ctx<T: Scalar>(&self, store: &ParamStore<T>, events: &[NoteEvent]) -> Result<Vec<T>, ContextError> {
        let base = self.token.octave_base(store);
        Ok(self.harmony_forward(store, &base, events)?.out)
    }

    /// Logits for one candidate given a branch's context vector. Returns the
    /// logits, the candidate's token cache and both head caches.
    #[allow(clippy::type_complexity)]
    fn head_forward<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        base: &[T],
        branch: Branch,
        h: &[T],
        candidate: &NoteEvent,
    ) -> Result<([T; 4], TokenCache<T>, [DenseCache<T>; 2]), ContextError> {
        let (mode, head) = match branch {
            Branch::Melodic => (EmbedMode::Melodic, &self.head_m),
            Branch::Harmonic => (EmbedMode::Harmonic, &self.head_h),
        };
        // The center's IOI against itself is always 0.
        let cand = NoteEvent { ioi: 0, ..*candidate };
        let (e, tc) = self.token.embed(store, base, &cand, mode)?;
        let mut x = h.to_vec();
        x.extend_from_slice(&e);
        let c0 = head[0].forward(store, &x)?;
        let c1 = head[1].forward(store, &c0.y)?;
        let logits = [c1.y[0], c1.y[1], c1.y[2], c1.y[3]];
        Ok((logits, tc, [c0, c1]))
    }

    /// Accumulates head and candidate gradients; adds the context gradient to `dh`.
    fn head_backward<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        grads: &mut Grads<T>,
        branch: Branch,
        caches: &(TokenCache<T>, [DenseCache<T>; 2]),
        dz: &[T; 4],
        dh: &mut [T],
        d_base: &mut [T],
    ) {
        let head = match branch {
            Branch::Melodic => &self.head_m,
            Branch::Harmonic => &self.head_h,
        };
        let (tc, [c0, c1]) = caches;
        let d_hidden = head[1].backward(store, grads, c1, dz);
        let dx = head[0].backward(store, grads, c0, &d_hidden);
        let d = self.cfg.d;
        add_assign(dh, &dx[..d]);
        self.token.embed_backward(store, grads, tc, &dx[d..], d_base);
    }

    /// Logits of the melodic and harmonic branch for one candidate.
    pub fn predict_labels<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        melodic: &[NoteEvent],
        harmonic: &[NoteEvent],
        candidate: &NoteEvent,
    ) -> Result<(Option<[T; 4]>, Option<[T; 4]>), ContextError> {
        let base = self.token.octave_base(store);
        let mut out = (None, None);
        if self.branch_active(Branch::Melodic) {
            let h = self.melody_forward(store, &base, melodic)?.out;
            out.0 = Some(self.head_forward(store, &base, Branch::Melodic, &h, candidate)?.0);
        }
        if self.branch_active(Branch::Harmonic) {
            let h = self.harmony_forward(store, &base, harmonic)?.out;
            out.1 = Some(self.head_forward(store, &base, Branch::Harmonic, &h, candidate)?.0);
        }
        Ok(out)
    }

    fn branch_active(&self, branch: Branch) -> bool {
        !matches!((self.cfg.fusion, branch), (Fusion::Melody, Branch::Harmonic) | (Fusion::Harmony, Branch::Melodic))
    }

    /// Mean BCE of a batch under the configured fusion. With `grads` the
    /// gradient of the returned total is accumulated into it.
    pub fn batch_loss<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        groups: &[&LocalGroup],
        mut grads: Option<&mut Grads<T>>,
    ) -> Result<BatchLoss<T>, ContextError> {
        let rows: usize = groups.iter().map(|g| g.n_rows()).sum();
        if rows == 0 {
            return Err(ContextError::EmptyBatch);
        }
        let d = self.cfg.d;
        let (wm, wh) = self.branch_weights(store);
        let inv_rows = T::one() / T::cast(rows as f64);
        let base = self.token.octave_base(store);
        let mut d_base = vec![T::zero(); d];
        let mut sums = [T::zero(); 2];

        for group in groups {
            for (bi, branch) in [Branch::Melodic, Branch::Harmonic].into_iter().enumerate() {
                if !self.branch_active(branch) {
                    continue;
                }
                let weight = if bi == 0 { wm } else { wh };
                let (h, mel, har) = match branch {
                    Branch::Melodic => {
                        let p = self.melody_forward(store, &base, &group.melodic)?;
                        (p.out.clone(), Some(p), None)
                    }
                    Branch::Harmonic => {
                        let p = self.harmony_forward(store, &base, &group.harmonic)?;
                        (p.out.clone(), None, Some(p))
                    }
                };
                let mut dh = vec![T::zero(); d];
                for (cand, labels) in &group.candidates {
                    let (logits, tc, dc) = self.head_forward(store, &base, branch, &h, cand)?;
                    let (loss, mut dz) = bce_multilabel(&logits, labels);
                    sums[bi] = sums[bi] + loss;
                    if let Some(g) = grads.as_deref_mut() {
                        dz.iter_mut().for_each(|x| *x = *x * weight * inv_rows);
                        self.head_backward(store, g, branch, &(tc, dc), &dz, &mut dh, &mut d_base);
                    }
                }
                if let Some(g) = grads.as_deref_mut() {
                    if let Some(p) = &mel {
                        self.melody_backward(store, g, p, &dh, &mut d_base);
                    }
                    if let Some(p) = &har {
                        self.harmony_backward(store, g, p, &dh, &mut d_base);
                    }
                }
            }
        }

        let melodic = self.branch_active(Branch::Melodic).then(|| sums[0] * inv_rows);
        let harmonic = self.branch_active(Branch::Harmonic).then(|| sums[1] * inv_rows);
        let total = wm * melodic.unwrap_or(T::zero()) + wh * harmonic.unwrap_or(T::zero());
        if let Some(g) = grads {
            self.token.octave_base_backward(g, &d_base);
            if let (Fusion::Wt, Some(lm), Some(lh)) = (self.cfg.fusion, melodic, harmonic) {
                // dL/da = α(1 − α)(L_m − L_h)
                let da = wm * wh * (lm - lh);
                let ga = g.get_mut(self.alpha).data_mut();
                ga[0] = ga[0] + da;
            }
        }
        Ok(BatchLoss { total, melodic, harmonic, rows })
    }
}
