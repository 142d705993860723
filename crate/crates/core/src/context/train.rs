use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{AdamConfig, Grads, NnError, ParamStore};
use crate::tokenize::LocalSample;
use crate::Scalar;

use super::local::{group_samples, LocalGroup};
use super::{ContextError, ContextModel, Stage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Positives per minibatch; each brings its negatives along.
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub heldout_fraction: f64,
    pub negatives_per_positive: usize,
    /// Keep the fusion weight logit at its initial value.
    pub freeze_alpha: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 32,
            epochs: 20,
            seed: 7,
            heldout_fraction: 0.1,
            negatives_per_positive: 4,
            freeze_alpha: false,
        }
    }
}

fn check_optimizer(lr: f64, beta1: f64, beta2: f64, batch_size: usize) -> Result<(), ContextError> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(ContextError::Config(format!("lr must be positive, got {lr}")));
    }
    if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
        return Err(ContextError::Config("Adam betas must lie in [0, 1)".into()));
    }
    if batch_size == 0 {
        return Err(ContextError::Config("batch_size must be positive".into()));
    }
    Ok(())
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ContextError> {
        check_optimizer(self.lr, self.beta1, self.beta2, self.batch_size)?;
        if !(0.0..1.0).contains(&self.heldout_fraction) {
            return Err(ContextError::Config("heldout_fraction must lie in [0, 1)".into()));
        }
        if self.negatives_per_positive != 4 {
            return Err(ContextError::Config("negatives_per_positive is fixed at 4 (one per corruption level)".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, beta1: self.beta1, beta2: self.beta2, eps: self.eps }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Positive pairs per minibatch.
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, batch_size: 16, epochs: 10, seed: 7 }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<(), ContextError> {
        check_optimizer(self.lr, self.beta1, self.beta2, self.batch_size)
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, beta1: self.beta1, beta2: self.beta2, eps: self.eps }
    }
}

/// Losses after an epoch; epoch 0 is the untrained model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_bce: f64,
    pub heldout_bce: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochStats>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_bce,holdout_bce\n");
        for e in &self.epochs {
            let held = e.heldout_bce.map(|h| h.to_string()).unwrap_or_default();
            s.push_str(&format!("{},{},{}\n", e.epoch, e.train_bce, held));
        }
        s
    }

    pub fn final_train_bce(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.train_bce)
    }
}

/// Shared epoch loop. `batch` fills the gradient buffer for minibatch
/// `batch_no` of the current epoch and returns its mean loss and row count,
/// or `None` once the epoch is exhausted.
#[allow(clippy::too_many_arguments)]
pub(crate) fn run_epochs<T, E, H, B>(
    store: &mut ParamStore<T>,
    adam: &AdamConfig,
    epochs: usize,
    mut initial_train: E,
    mut heldout: H,
    mut batch: B,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainLog, ContextError>
where
    T: Scalar,
    E: FnMut(&ParamStore<T>) -> Result<T, ContextError>,
    H: FnMut(&ParamStore<T>) -> Result<Option<T>, ContextError>,
    B: FnMut(&ParamStore<T>, usize, &mut Grads<T>) -> Result<Option<(T, usize)>, ContextError>,
{
    let mut log = TrainLog::default();
    let first = EpochStats {
        epoch: 0,
        train_bce: initial_train(store)?.to_f64_lossy(),
        heldout_bce: heldout(store)?.map(|h| h.to_f64_lossy()),
    };
    on_epoch(&first);
    log.epochs.push(first);

    let mut grads = store.new_grads();
    for epoch in 1..=epochs {
        let (mut sum, mut rows) = (0.0, 0usize);
        let mut batch_no = 0;
        while let Some((loss, n)) = batch(store, batch_no, &mut grads)? {
            if !loss.is_finite() {
                return Err(ContextError::DivergedLoss { epoch });
            }
            store.accumulate(&grads);
            grads.zero();
            match store.adam_step(adam) {
                Err(NnError::NonFiniteGradient(_)) => return Err(ContextError::DivergedLoss { epoch }),
                other => other?,
            }
            sum += loss.to_f64_lossy() * n as f64;
            rows += n;
            batch_no += 1;
        }
        if rows == 0 {
            return Err(ContextError::EmptyBatch);
        }
        let stats = EpochStats {
            epoch,
            train_bce: sum / rows as f64,
            heldout_bce: heldout(store)?.map(|h| h.to_f64_lossy()),
        };
        if stats.heldout_bce.is_some_and(|h| !h.is_finite()) {
            return Err(ContextError::DivergedLoss { epoch });
        }
        log::debug!("epoch {epoch}: train {:.5} held-out {:?}", stats.train_bce, stats.heldout_bce);
        on_epoch(&stats);
        log.epochs.push(stats);
    }
    Ok(log)
}

/// Splits groups into train and held-out parts with a seeded shuffle.
pub(crate) fn split_groups(n: usize, heldout_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_held = ((n as f64 * heldout_fraction).round() as usize).min(n.saturating_sub(1));
    let train = idx.split_off(n_held);
    (train, idx)
}

/// Local-context pretraining with shuffled minibatch Adam.
///
/// Samples are regrouped into positives with their negatives; a seeded
/// share of groups is held out for the per-epoch held-out BCE.
pub fn train_local<T: Scalar>(
    model: &mut ContextModel<T>,
    samples: &[LocalSample],
    cfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainLog, ContextError> {
    cfg.validate()?;
    let groups = group_samples(samples);
    if groups.is_empty() {
        return Err(ContextError::EmptyCorpus);
    }
    let (mut train, held) = split_groups(groups.len(), cfg.heldout_fraction, cfg.seed);
    let held: Vec<&LocalGroup> = held.iter().map(|&i| &groups[i]).collect();
    if cfg.freeze_alpha {
        model.store.set_trainable(model.net.alpha, false);
    }

    let net = model.net.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let all_train: Vec<&LocalGroup> = train.iter().map(|&i| &groups[i]).collect();
    let log = run_epochs(
        &mut model.store,
        &cfg.adam(),
        cfg.epochs,
        |s| Ok(net.batch_loss(s, &all_train, None)?.total),
        |s| {
            if held.is_empty() {
                Ok(None)
            } else {
                Ok(Some(net.batch_loss(s, &held, None)?.total))
            }
        },
        |s, batch_no, grads| {
            if batch_no == 0 {
                train.shuffle(&mut rng);
            }
            let lo = batch_no * cfg.batch_size;
            if lo >= train.len() {
                return Ok(None);
            }
            let chunk: Vec<&LocalGroup> = train[lo..(lo + cfg.batch_size).min(train.len())]
                .iter()
                .map(|&i| &groups[i])
                .collect();
            let l = net.batch_loss(s, &chunk, Some(grads))?;
            Ok(Some((l.total, l.rows)))
        },
        on_epoch,
    )?;
    model.meta.stage = Stage::Pretrain;
    model.meta.epoch = cfg.epochs;
    model.meta.heldout_bce = log.epochs.last().and_then(|e| e.heldout_bce);
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::local::tests::toy_groups;
    use crate::context::{Fusion, ModelConfig};
    use crate::tokenize::Vocabulary;

    fn samples(n: usize, seed: u64, vocab: &Vocabulary) -> Vec<LocalSample> {
        toy_groups(n, seed, vocab)
            .into_iter()
            .flat_map(|g| {
                let (m, h) = (g.melodic, g.harmonic);
                g.candidates.into_iter().map(move |(candidate, labels)| LocalSample {
                    melodic: m.clone(),
                    harmonic: h.clone(),
                    candidate,
                    labels,
                })
            })
            .collect()
    }

    fn model(fusion: Fusion) -> ContextModel<f64> {
        let vocab = Vocabulary::with_chords(["C-E-G".parse().unwrap()]);
        ContextModel::new(vocab, &ModelConfig { d: 8, rnn_layers: 1, fusion, ..Default::default() }, 3).unwrap()
    }

    #[test]
    fn epoch_zero_is_near_ln2_and_training_helps() {
        let mut m = model(Fusion::Wt);
        let data = samples(40, 1, &m.vocab);
        let cfg = TrainConfig { epochs: 15, lr: 0.01, batch_size: 8, heldout_fraction: 0.2, ..Default::default() };
        let log = train_local(&mut m, &data, &cfg, |_| {}).unwrap();
        let first = log.epochs[0];
        assert!((first.heldout_bce.unwrap() - std::f64::consts::LN_2).abs() < 0.05);
        assert!(log.final_train_bce().unwrap() < first.train_bce);
        assert!(log.to_csv().starts_with("epoch,train_bce,holdout_bce\n0,"));
    }

    #[test]
    fn same_seed_same_curve() {
        let vocab = model(Fusion::Wt).vocab;
        let data = samples(12, 2, &vocab);
        let cfg = TrainConfig { epochs: 3, batch_size: 4, ..Default::default() };
        let run = || {
            let mut m = model(Fusion::Wt);
            let log = train_local(&mut m, &data, &cfg, |_| {}).unwrap();
            (log, m.store.export_values())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn frozen_alpha_tracks_avg() {
        let vocab = model(Fusion::Wt).vocab;
        let data = samples(10, 3, &vocab);
        let cfg = TrainConfig { epochs: 2, batch_size: 5, freeze_alpha: true, ..Default::default() };
        let mut wt = model(Fusion::Wt);
        let mut avg = model(Fusion::Avg);
        let a = train_local(&mut wt, &data, &cfg, |_| {}).unwrap();
        let b = train_local(&mut avg, &data, &cfg, |_| {}).unwrap();
        assert_eq!(wt.net.alpha_value(&wt.store), 0.5);
        for (x, y) in a.epochs.iter().zip(&b.epochs) {
            assert!((x.train_bce - y.train_bce).abs() < 1e-12);
        }
    }

    #[test]
    fn bad_inputs() {
        let mut m = model(Fusion::Wt);
        assert!(matches!(train_local(&mut m, &[], &TrainConfig::default(), |_| {}), Err(ContextError::EmptyCorpus)));
        let cfg = TrainConfig { negatives_per_positive: 3, ..Default::default() };
        assert!(matches!(train_local(&mut m, &[], &cfg, |_| {}), Err(ContextError::Config(_))));
    }

    #[test]
    fn diverging_run_is_reported() {
        let mut m = model(Fusion::Wt);
        let data = samples(4, 4, &m.vocab);
        let w = m.net.head_m[1].w;
        m.store.value_mut(w).data_mut()[0] = f64::NAN;
        let cfg = TrainConfig { epochs: 1, heldout_fraction: 0.0, ..Default::default() };
        let err = train_local(&mut m, &data, &cfg, |_| {}).unwrap_err();
        assert!(matches!(err, ContextError::DivergedLoss { epoch: 1 }));
    }

    #[test]
    fn split_is_seeded_partition() {
        let (a, b) = split_groups(20, 0.1, 9);
        assert_eq!((a.len(), b.len()), (18, 2));
        let mut all: Vec<usize> = a.iter().chain(&b).copied().collect();
        all.sort();
        assert_eq!(all, (0..20).collect::<Vec<_>>());
        assert_eq!(split_groups(20, 0.1, 9), (a, b));
        assert_eq!(split_groups(1, 0.5, 0).0.len(), 1);
    }
}
