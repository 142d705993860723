use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{dot, sigmoid, Grads, ParamStore};
use crate::tokenize::{GlobalCorpus, NoteEvent, PhraseKind, Split};
use crate::Scalar;

use super::local::MelodyPass;
use super::train::{run_epochs, EpochStats, FinetuneConfig, TrainLog};
use super::{ContextError, ContextModel, ContextNet, Stage};

/// Which global context a fine-tuning run (and its scorer) uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GlobalMode {
    /// Following melody phrase.
    GM,
    /// Aligned accompaniment phrases.
    GH,
}

impl GlobalMode {
    pub fn stage(self) -> Stage {
        match self {
            GlobalMode::GM => Stage::GM,
            GlobalMode::GH => Stage::GH,
        }
    }

    fn candidate_kind(self, kind: PhraseKind) -> bool {
        match self {
            GlobalMode::GM => kind == PhraseKind::Melody,
            GlobalMode::GH => kind != PhraseKind::Melody,
        }
    }
}

impl std::str::FromStr for GlobalMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "GM" | "gm" => Ok(GlobalMode::GM),
            "GH" | "gh" => Ok(GlobalMode::GH),
            _ => Err(format!("unknown mode {s:?} (expected GM or GH)")),
        }
    }
}

impl ContextNet {
    /// A phrase's events through the note-level melody network.
    pub fn encode_phrase<T: Scalar>(&self, store: &ParamStore<T>, events: &[NoteEvent]) -> Result<Vec<T>, ContextError> {
        self.encode_melodic_ctx(store, events)
    }

    /// Phrase-level GRU stack then attention.
    pub fn encode_period<T: Scalar>(&self, store: &ParamStore<T>, phrases: &[Vec<T>]) -> Result<Vec<T>, ContextError> {
        if phrases.is_empty() {
            return Err(ContextError::EmptyContext);
        }
        let (hs, _) = self.period_rnn.forward(store, phrases)?;
        Ok(self.period_att.forward(store, &hs)?.0)
    }

    /// Attention pooling over phrase vectors.
    pub fn encode_track<T: Scalar>(&self, store: &ParamStore<T>, phrases: &[Vec<T>]) -> Result<Vec<T>, ContextError> {
        if phrases.is_empty() {
            return Err(ContextError::EmptyContext);
        }
        Ok(self.track_att.forward(store, phrases)?.0)
    }

    /// Query-side vector of a phrase.
    pub fn query_vector<T: Scalar>(&self, store: &ParamStore<T>, events: &[NoteEvent]) -> Result<Vec<T>, ContextError> {
        self.encode_phrase(store, events)
    }

    /// Candidate-side vector: the phrase itself for GM, the track path for GH.
    pub fn candidate_vector<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        mode: GlobalMode,
        events: &[NoteEvent],
    ) -> Result<Vec<T>, ContextError> {
        let v = self.encode_phrase(store, events)?;
        match mode {
            GlobalMode::GM => Ok(v),
            GlobalMode::GH => self.encode_track(store, &[v]),
        }
    }

    /// `σ(q · c)` with both sides encoded for `mode`.
    pub fn score_pair<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        mode: GlobalMode,
        query: &[NoteEvent],
        candidate: &[NoteEvent],
    ) -> Result<T, ContextError> {
        let q = self.query_vector(store, query)?;
        let c = self.candidate_vector(store, mode, candidate)?;
        Ok(sigmoid(dot(&q, &c)))
    }

    /// Mean binary cross-entropy of `σ(q · c)` over `(query, candidate, label)`
    /// rows, with gradients when `grads` is given.
    pub(crate) fn pair_loss<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        corpus: &GlobalCorpus,
        mode: GlobalMode,
        rows: &[(u32, u32, bool)],
        mut grads: Option<&mut Grads<T>>,
    ) -> Result<T, ContextError> {
        if rows.is_empty() {
            return Err(ContextError::EmptyBatch);
        }
        let inv = T::one() / T::cast(rows.len() as f64);
        let base = self.token.octave_base(store);
        let mut d_base = vec![T::zero(); self.cfg.d];
        let events = |id: u32| &corpus.phrases[id as usize].events;
        let mut total = T::zero();

        // Rows sharing a query reuse its forward pass.
        let mut by_query: BTreeMap<u32, Vec<(u32, bool)>> = BTreeMap::new();
        for &(q, c, y) in rows {
            by_query.entry(q).or_default().push((c, y));
        }
        for (q, cands) in by_query {
            let qp = self.melody_forward(store, &base, events(q))?;
            let mut dq = vec![T::zero(); self.cfg.d];
            for (c, y) in cands {
                let cp: MelodyPass<T> = self.melody_forward(store, &base, events(c))?;
                let track = match mode {
                    GlobalMode::GM => None,
                    GlobalMode::GH => Some(self.track_att.forward(store, std::slice::from_ref(&cp.out))?),
                };
                let v = track.as_ref().map_or(&cp.out, |(v, _)| v);
                let z = dot(&qp.out, v);
                let yv = if y { T::one() } else { T::zero() };
                total = total + z.max(T::zero()) - yv * z + (-z.abs()).exp().ln_1p();
                if let Some(g) = grads.as_deref_mut() {
                    let dz = (sigmoid(z) - yv) * inv;
                    for (a, &b) in dq.iter_mut().zip(v) {
                        *a = *a + dz * b;
                    }
                    let dv: Vec<T> = qp.out.iter().map(|&a| dz * a).collect();
                    let d_phrase = match &track {
                        Some((_, cache)) => self.track_att.backward(store, g, cache, &dv).remove(0),
                        None => dv,
                    };
                    self.melody_backward(store, g, &cp, &d_phrase, &mut d_base);
                }
            }
            if let Some(g) = grads.as_deref_mut() {
                self.melody_backward(store, g, &qp, &dq, &mut d_base);
            }
        }
        if let Some(g) = grads {
            self.token.octave_base_backward(g, &d_base);
        }
        Ok(total * inv)
    }
}

/// Positive pairs of `split` and the candidate pool negatives are drawn from.
fn pairs_and_pool(corpus: &GlobalCorpus, mode: GlobalMode, split: Split) -> (Vec<(u32, u32)>, Vec<u32>) {
    let pairs = match mode {
        GlobalMode::GM => &corpus.melodic_pairs,
        GlobalMode::GH => &corpus.harmonic_pairs,
    };
    let pairs: Vec<(u32, u32)> = pairs.iter().copied().filter(|&(q, _)| corpus.song_split(q) == split).collect();
    let pool = (0..corpus.phrases.len() as u32)
        .filter(|&i| corpus.song_split(i) == split && mode.candidate_kind(corpus.phrases[i as usize].kind))
        .collect();
    (pairs, pool)
}

/// Adds one negative per positive, drawn uniformly from phrases of other
/// songs as in the ranking tasks, resampling whenever the draw is a true
/// partner of the query.
fn with_negatives<R: Rng + ?Sized>(
    corpus: &GlobalCorpus,
    pairs: &[(u32, u32)],
    pool: &[u32],
    positives: &BTreeMap<u32, BTreeSet<u32>>,
    rng: &mut R,
) -> Result<Vec<(u32, u32, bool)>, ContextError> {
    let song = |id: u32| corpus.phrases[id as usize].song;
    let mut rows = Vec::with_capacity(2 * pairs.len());
    for &(q, c) in pairs {
        let taken = &positives[&q];
        let allowed = |p: u32| song(p) != song(q) && !taken.contains(&p);
        if !pool.iter().any(|&p| allowed(p)) {
            return Err(ContextError::EmptyPairs);
        }
        let neg = loop {
            let cand = pool[rng.random_range(0..pool.len())];
            if allowed(cand) {
                break cand;
            }
        };
        rows.push((q, c, true));
        rows.push((q, neg, false));
    }
    Ok(rows)
}

fn partner_sets(pairs: &[(u32, u32)]) -> BTreeMap<u32, BTreeSet<u32>> {
    let mut m: BTreeMap<u32, BTreeSet<u32>> = BTreeMap::new();
    for &(q, c) in pairs {
        m.entry(q).or_default().insert(c);
    }
    m
}

/// Fine-tunes a pretrained model on global phrase pairs of the training
/// split with 1:1 negative sampling. Held-out pairs, with a fixed draw of
/// negatives, give the per-epoch held-out BCE.
pub fn finetune_global<T: Scalar>(
    model: &mut ContextModel<T>,
    corpus: &GlobalCorpus,
    mode: GlobalMode,
    cfg: &FinetuneConfig,
    on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainLog, ContextError> {
    if model.meta.stage != Stage::Pretrain {
        return Err(ContextError::NotPretrained(format!("checkpoint stage is {}", model.meta.stage.as_str())));
    }
    if corpus.vocab_hash != model.vocab.hash() {
        return Err(ContextError::Config("corpus and checkpoint use different vocabularies".into()));
    }
    cfg.validate()?;
    let (train_pairs, train_pool) = pairs_and_pool(corpus, mode, Split::Train);
    if train_pairs.is_empty() {
        return Err(ContextError::EmptyPairs);
    }
    let train_partners = partner_sets(&train_pairs);

    // Held-out negatives may come from any split, as in the ranking tasks;
    // a single held-out song would otherwise have none.
    let (held_pairs, _) = pairs_and_pool(corpus, mode, Split::Heldout);
    let held_rows = if held_pairs.is_empty() {
        None
    } else {
        let pool: Vec<u32> = (0..corpus.phrases.len() as u32)
            .filter(|&i| mode.candidate_kind(corpus.phrases[i as usize].kind))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
        Some(with_negatives(corpus, &held_pairs, &pool, &partner_sets(&held_pairs), &mut rng)?)
    };

    // Epoch-0 training loss uses its own fixed draw so the training stream
    // is independent of it.
    let initial_rows = {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5851_f42d_4c95_7f2d);
        with_negatives(corpus, &train_pairs, &train_pool, &train_partners, &mut rng)?
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let net = model.net.clone();
    let mut order = train_pairs.clone();
    let log = run_epochs(
        &mut model.store,
        &cfg.adam(),
        cfg.epochs,
        |store| net.pair_loss(store, corpus, mode, &initial_rows, None),
        |store| held_rows.as_ref().map(|rows| net.pair_loss(store, corpus, mode, rows, None)).transpose(),
        |store, batch_no, grads| {
            if batch_no == 0 {
                order.shuffle(&mut rng);
            }
            let lo = batch_no * cfg.batch_size;
            if lo >= order.len() {
                return Ok(None);
            }
            let chunk = &order[lo..(lo + cfg.batch_size).min(order.len())];
            let rows = with_negatives(corpus, chunk, &train_pool, &train_partners, &mut rng)?;
            Ok(Some((net.pair_loss(store, corpus, mode, &rows, Some(grads))?, rows.len())))
        },
        on_epoch,
    )?;
    model.meta.stage = mode.stage();
    model.meta.corpus_hash = corpus.content_hash();
    model.meta.epoch = cfg.epochs;
    model.meta.heldout_bce = log.epochs.last().and_then(|e| e.heldout_bce);
    Ok(log)
}
