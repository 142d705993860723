//! Ranking tasks over phrases: melody completion and accompaniment
//! assignment, scored by MAP and hits@k.
//!
//! `.rnk` instance files:
//!
//! ```text
//! "RNK1" | u8 task (0 melody completion, 1 accompaniment) | 32-byte corpus sha256
//! u32 n_instances
//! record: u32 query | u8 n_candidates | u32 candidate... | u8 n_relevant | u8 index...
//! ```

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{self, Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::{ContextError, ContextNet, GlobalMode};
use crate::nn::{dot, sigmoid, ParamStore};
use crate::tokenize::{GlobalCorpus, PhraseKind, Split};
use crate::Scalar;

/// Candidates per ranking instance.
pub const N_CANDIDATES: usize = 50;
/// Cut-offs reported as hits@k.
pub const HITS_AT: [usize; 4] = [1, 5, 10, 25];

const RNK_MAGIC: &[u8; 4] = b"RNK1";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no ranking instances")]
    EmptyInstances,
    #[error("only {available} negatives available, need {needed}")]
    InsufficientPool { available: usize, needed: usize },
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
    #[error("instance file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Context(#[from] ContextError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    MelodyCompletion,
    Accompaniment,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::MelodyCompletion => "melody_completion",
            Task::Accompaniment => "accompaniment",
        }
    }

    /// Scoring mode a task uses when the checkpoint has not been fine-tuned.
    pub fn default_mode(self) -> GlobalMode {
        match self {
            Task::MelodyCompletion => GlobalMode::GM,
            Task::Accompaniment => GlobalMode::GH,
        }
    }
}

impl std::str::FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "melody_completion" | "melody" => Ok(Task::MelodyCompletion),
            "accompaniment" => Ok(Task::Accompaniment),
            _ => Err(format!("unknown task {s:?} (expected melody_completion or accompaniment)")),
        }
    }
}

/// A query phrase with candidate phrase ids; `relevant` holds sorted
/// candidate indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankingInstance {
    pub query: u32,
    pub candidates: Vec<u32>,
    pub relevant: Vec<usize>,
}

impl RankingInstance {
    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: String| Err(EvalError::InvalidInstance(m));
        if self.candidates.is_empty() || self.candidates.len() > usize::from(u8::MAX) {
            return bad(format!("{} candidates", self.candidates.len()));
        }
        if self.relevant.is_empty() {
            return bad("no relevant candidate".into());
        }
        if self.relevant.windows(2).any(|w| w[0] >= w[1]) {
            return bad("relevant indices are not strictly increasing".into());
        }
        if self.relevant.iter().any(|&r| r >= self.candidates.len()) {
            return bad("relevant index out of range".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub map: f64,
    pub hits: BTreeMap<usize, f64>,
    pub n_instances: usize,
}

/// JSON report written by the evaluation command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub task: Task,
    pub mode: GlobalMode,
    pub map: f64,
    pub hits: BTreeMap<usize, f64>,
    pub n_instances: usize,
    pub seed: u64,
    pub corpus_hash: String,
}

/// Draws `need` distinct phrases from `pool`, then inserts the positives
/// and shuffles so the relevant positions carry no information.
fn assemble<R: Rng + ?Sized>(
    query: u32,
    positives: &[u32],
    pool: &[u32],
    rng: &mut R,
) -> Result<RankingInstance, EvalError> {
    let need = N_CANDIDATES
        .checked_sub(positives.len())
        .filter(|&n| n > 0 || !positives.is_empty())
        .ok_or_else(|| EvalError::InvalidInstance(format!("{} positives exceed {N_CANDIDATES}", positives.len())))?;
    if pool.len() < need {
        return Err(EvalError::InsufficientPool { available: pool.len(), needed: need });
    }
    let mut cands: Vec<(u32, bool)> = positives.iter().map(|&p| (p, true)).collect();
    cands.extend(index::sample(rng, pool.len(), need).iter().map(|i| (pool[i], false)));
    cands.shuffle(rng);
    Ok(RankingInstance {
        query,
        relevant: cands.iter().enumerate().filter(|(_, c)| c.1).map(|(i, _)| i).collect(),
        candidates: cands.into_iter().map(|c| c.0).collect(),
    })
}

fn query_song_filter(corpus: &GlobalCorpus, split: Option<Split>) -> impl Fn(u32) -> bool + '_ {
    move |q| split.is_none_or(|s| corpus.song_split(q) == s)
}

/// Candidate pools keyed by song: all phrases of `kind_ok` from other songs.
fn pools_by_song(corpus: &GlobalCorpus, kind_ok: impl Fn(PhraseKind) -> bool) -> impl Fn(u32) -> Vec<u32> + '_ {
    let ids: Vec<u32> =
        (0..corpus.phrases.len() as u32).filter(|&i| kind_ok(corpus.phrases[i as usize].kind)).collect();
    move |song| ids.iter().copied().filter(|&i| corpus.phrases[i as usize].song != song).collect()
}

/// One instance per melodic pair whose query lies in `split` (all splits if
/// `None`): the true successor plus 49 distinct melody phrases of other
/// songs.
pub fn build_melody_completion_set(
    corpus: &GlobalCorpus,
    split: Option<Split>,
    seed: u64,
) -> Result<Vec<RankingInstance>, EvalError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let in_split = query_song_filter(corpus, split);
    let pool_for = pools_by_song(corpus, |k| k == PhraseKind::Melody);
    let mut cache: HashMap<u32, Vec<u32>> = HashMap::new();
    let mut out = Vec::new();
    for &(q, next) in corpus.melodic_pairs.iter().filter(|p| in_split(p.0)) {
        let song = corpus.phrases[q as usize].song;
        let pool = cache.entry(song).or_insert_with(|| pool_for(song));
        out.push(assemble(q, &[next], pool, &mut rng)?);
    }
    Ok(out)
}

/// One instance per melody phrase with aligned accompaniment: all `N` true
/// accompaniment phrases plus `50 − N` distinct accompaniment phrases of
/// other songs.
pub fn build_accompaniment_set(
    corpus: &GlobalCorpus,
    split: Option<Split>,
    seed: u64,
) -> Result<Vec<RankingInstance>, EvalError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let in_split = query_song_filter(corpus, split);
    let pool_for = pools_by_song(corpus, |k| k != PhraseKind::Melody);
    let mut partners: BTreeMap<u32, BTreeSet<u32>> = BTreeMap::new();
    for &(q, c) in corpus.harmonic_pairs.iter().filter(|p| in_split(p.0)) {
        partners.entry(q).or_default().insert(c);
    }
    let mut cache: HashMap<u32, Vec<u32>> = HashMap::new();
    let mut out = Vec::new();
    for (q, pos) in partners {
        let song = corpus.phrases[q as usize].song;
        let pool = cache.entry(song).or_insert_with(|| pool_for(song));
        let pos: Vec<u32> = pos.into_iter().collect();
        out.push(assemble(q, &pos, pool, &mut rng)?);
    }
    Ok(out)
}

pub fn build_set(corpus: &GlobalCorpus, task: Task, split: Option<Split>, seed: u64) -> Result<Vec<RankingInstance>, EvalError> {
    match task {
        Task::MelodyCompletion => build_melody_completion_set(corpus, split, seed),
        Task::Accompaniment => build_accompaniment_set(corpus, split, seed),
    }
}

/// Scores every candidate of an instance; higher ranks first.
pub trait Scorer: Sync {
    fn score(&self, instance: &RankingInstance, instance_no: usize) -> Result<Vec<f64>, EvalError>;
}

/// I.i.d. uniform scores, seeded per instance.
#[derive(Debug, Clone, Copy)]
pub struct RandomScorer {
    pub seed: u64,
}

impl Scorer for RandomScorer {
    fn score(&self, instance: &RankingInstance, instance_no: usize) -> Result<Vec<f64>, EvalError> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(instance_no as u64);
        Ok(instance.candidates.iter().map(|_| rng.random::<f64>()).collect())
    }
}

/// `σ(q · c)` from a trained network, with every phrase encoded once.
#[derive(Debug, Clone)]
pub struct ModelScorer {
    queries: HashMap<u32, Vec<f64>>,
    candidates: HashMap<u32, Vec<f64>>,
}

impl ModelScorer {
    pub fn new<T: Scalar>(
        net: &ContextNet,
        store: &ParamStore<T>,
        corpus: &GlobalCorpus,
        mode: GlobalMode,
        instances: &[RankingInstance],
    ) -> Result<Self, EvalError> {
        let q_ids: BTreeSet<u32> = instances.iter().map(|i| i.query).collect();
        let c_ids: BTreeSet<u32> = instances.iter().flat_map(|i| i.candidates.iter().copied()).collect();
        let lossy = |v: Vec<T>| v.into_iter().map(|x| x.to_f64_lossy()).collect::<Vec<f64>>();
        let events = |id: u32| -> Result<_, EvalError> {
            corpus
                .phrases
                .get(id as usize)
                .map(|p| p.events.as_slice())
                .ok_or_else(|| EvalError::InvalidInstance(format!("phrase {id} is not in the corpus")))
        };
        let queries = q_ids
            .into_par_iter()
            .map(|id| Ok((id, lossy(net.query_vector(store, events(id)?)?))))
            .collect::<Result<_, EvalError>>()?;
        let candidates = c_ids
            .into_par_iter()
            .map(|id| Ok((id, lossy(net.candidate_vector(store, mode, events(id)?)?))))
            .collect::<Result<_, EvalError>>()?;
        Ok(ModelScorer { queries, candidates })
    }
}

impl Scorer for ModelScorer {
    fn score(&self, instance: &RankingInstance, _: usize) -> Result<Vec<f64>, EvalError> {
        let missing = |id| EvalError::InvalidInstance(format!("phrase {id} was not encoded"));
        let q = self.queries.get(&instance.query).ok_or_else(|| missing(instance.query))?;
        instance
            .candidates
            .iter()
            .map(|c| Ok(sigmoid(dot(q, self.candidates.get(c).ok_or_else(|| missing(*c))?))))
            .collect()
    }
}

/// 1-based ranks of the relevant candidates after a descending sort with
/// ties broken by candidate index, and the instance's average precision.
pub fn average_precision(scores: &[f64], relevant: &[usize]) -> (f64, Vec<usize>) {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut ranks: Vec<usize> =
        order.iter().enumerate().filter(|(_, c)| relevant.contains(c)).map(|(r, _)| r + 1).collect();
    ranks.sort_unstable();
    let ap = ranks.iter().enumerate().map(|(hit, &r)| (hit + 1) as f64 / r as f64).sum::<f64>() / ranks.len() as f64;
    (ap, ranks)
}

pub fn rank_and_score(instances: &[RankingInstance], scorer: &dyn Scorer) -> Result<MetricReport, EvalError> {
    if instances.is_empty() {
        return Err(EvalError::EmptyInstances);
    }
    let per: Vec<(f64, usize)> = instances
        .par_iter()
        .enumerate()
        .map(|(n, inst)| {
            inst.validate()?;
            let scores = scorer.score(inst, n)?;
            if scores.len() != inst.candidates.len() {
                return Err(EvalError::InvalidInstance(format!("scorer returned {} scores", scores.len())));
            }
            let (ap, ranks) = average_precision(&scores, &inst.relevant);
            Ok((ap, ranks[0]))
        })
        .collect::<Result<_, EvalError>>()?;
    let n = per.len() as f64;
    Ok(MetricReport {
        map: per.iter().map(|p| p.0).sum::<f64>() / n,
        hits: HITS_AT.iter().map(|&k| (k, per.iter().filter(|p| p.1 <= k).count() as f64 / n)).collect(),
        n_instances: per.len(),
    })
}

pub fn write_rnk<W: Write>(w: &mut W, task: Task, corpus_hash: &[u8; 32], instances: &[RankingInstance]) -> Result<(), EvalError> {
    w.write_all(RNK_MAGIC)?;
    w.write_u8(match task {
        Task::MelodyCompletion => 0,
        Task::Accompaniment => 1,
    })?;
    w.write_all(corpus_hash)?;
    let n = u32::try_from(instances.len()).map_err(|_| EvalError::Format("too many instances".into()))?;
    w.write_u32::<LittleEndian>(n)?;
    for inst in instances {
        inst.validate()?;
        w.write_u32::<LittleEndian>(inst.query)?;
        w.write_u8(inst.candidates.len() as u8)?;
        for &c in &inst.candidates {
            w.write_u32::<LittleEndian>(c)?;
        }
        w.write_u8(inst.relevant.len() as u8)?;
        for &r in &inst.relevant {
            w.write_u8(r as u8)?;
        }
    }
    Ok(())
}

pub fn read_rnk<R: Read>(r: &mut R) -> Result<(Task, [u8; 32], Vec<RankingInstance>), EvalError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != RNK_MAGIC {
        return Err(EvalError::Format("bad magic, expected RNK1".into()));
    }
    let task = match r.read_u8()? {
        0 => Task::MelodyCompletion,
        1 => Task::Accompaniment,
        t => return Err(EvalError::Format(format!("task tag {t}"))),
    };
    let mut hash = [0u8; 32];
    r.read_exact(&mut hash)?;
    let n = r.read_u32::<LittleEndian>()? as usize;
    let mut out = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        let query = r.read_u32::<LittleEndian>()?;
        let nc = usize::from(r.read_u8()?);
        let candidates = (0..nc).map(|_| r.read_u32::<LittleEndian>()).collect::<Result<_, _>>()?;
        let nr = usize::from(r.read_u8()?);
        let relevant = (0..nr).map(|_| r.read_u8().map(usize::from)).collect::<Result<_, _>>()?;
        let inst = RankingInstance { query, candidates, relevant };
        inst.validate().map_err(|e| EvalError::Format(e.to_string()))?;
        out.push(inst);
    }
    Ok((task, hash, out))
}

/// Mean of the phrase encodings of a song's melody phrases.
pub fn song_embedding<T: Scalar>(
    net: &ContextNet,
    store: &ParamStore<T>,
    corpus: &GlobalCorpus,
    song: u32,
) -> Result<Vec<T>, EvalError> {
    let phrases: Vec<_> =
        corpus.phrases.iter().filter(|p| p.song == song && p.kind == PhraseKind::Melody).collect();
    if phrases.is_empty() {
        return Err(ContextError::EmptyContext.into());
    }
    let mut acc = vec![T::zero(); net.cfg.d];
    for p in &phrases {
        for (a, x) in acc.iter_mut().zip(net.encode_phrase(store, &p.events)?) {
            *a = *a + x;
        }
    }
    let inv = T::one() / T::cast(phrases.len() as f64);
    Ok(acc.into_iter().map(|a| a * inv).collect())
}

/// Song vectors in the `.vec` text layout, one `song:<name>` line each.
/// Songs without melody phrases are skipped.
pub fn write_song_vectors<T: Scalar, W: Write>(
    net: &ContextNet,
    store: &ParamStore<T>,
    corpus: &GlobalCorpus,
    mode: &str,
    mut out: W,
) -> Result<usize, EvalError> {
    writeln!(out, "PIRHDY d={} mode={} songs", net.cfg.d, mode)?;
    let mut written = 0;
    for (i, song) in corpus.songs.iter().enumerate() {
        let v = match song_embedding(net, store, corpus, i as u32) {
            Ok(v) => v,
            Err(EvalError::Context(ContextError::EmptyContext)) => continue,
            Err(e) => return Err(e),
        };
        write!(out, "song:{}", song.name.replace(char::is_whitespace, "_"))?;
        for x in v {
            write!(out, " {}", x.to_f64_lossy())?;
        }
        writeln!(out)?;
        written += 1;
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::{ContextModel, ModelConfig};
    use crate::tokenize::{NoteEvent, PhraseRecord, SongEntry, Vocabulary};

    struct Fixed(Vec<Vec<f64>>);

    impl Scorer for Fixed {
        fn score(&self, _: &RankingInstance, n: usize) -> Result<Vec<f64>, EvalError> {
            Ok(self.0[n].clone())
        }
    }

    fn inst(n: usize, relevant: &[usize]) -> RankingInstance {
        RankingInstance { query: 0, candidates: (0..n as u32).collect(), relevant: relevant.to_vec() }
    }

    /// `songs` songs of `per_song` melody phrases, each followed by its
    /// successor, and `acc` accompaniment phrases aligned with every
    /// melody phrase.
    fn corpus(songs: u32, per_song: u32, acc: u8) -> GlobalCorpus {
        let mut c = GlobalCorpus::default();
        for s in 0..songs {
            c.songs.push(SongEntry { name: format!("song {s}"), split: if s == 0 { Split::Heldout } else { Split::Train } });
            let mut prev = None;
            for k in 0..per_song {
                let ev = NoteEvent { ioi: 0, chroma: (s + k) as u16 % 12, octave: 4, velocity: 5, state: 0 };
                let id = c.phrases.len() as u32;
                c.phrases.push(PhraseRecord { song: s, kind: PhraseKind::Melody, start_step: k * 128, events: vec![ev; 4] });
                if let Some(p) = prev {
                    c.melodic_pairs.push((p, id));
                }
                prev = Some(id);
                for o in 0..acc {
                    let a = c.phrases.len() as u32;
                    c.phrases.push(PhraseRecord {
                        song: s,
                        kind: PhraseKind::Accompaniment(o + 2),
                        start_step: k * 128,
                        events: vec![NoteEvent { octave: o + 2, ..ev }; 4],
                    });
                    c.harmonic_pairs.push((id, a));
                }
            }
        }
        c
    }

    #[test]
    fn single_relevant_examples() {
        let mut first = vec![0.0; 50];
        first[7] = 1.0;
        let r = rank_and_score(&[inst(50, &[7])], &Fixed(vec![first])).unwrap();
        assert_eq!((r.map, r.hits[&1]), (1.0, 1.0));

        let scores: Vec<f64> = (0..50).map(|i| -(i as f64)).collect();
        let r = rank_and_score(&[inst(50, &[3])], &Fixed(vec![scores])).unwrap();
        assert_eq!(r.map, 0.25);
        assert_eq!((r.hits[&1], r.hits[&5]), (0.0, 1.0));
    }

    #[test]
    fn ties_break_by_index() {
        let (ap, ranks) = average_precision(&[0.5; 5], &[2]);
        assert_eq!(ranks, vec![3]);
        assert!((ap - 1.0 / 3.0).abs() < 1e-15);
        // Relevant at ranks 1 and 3: (1/1 + 2/3) / 2.
        let (ap, ranks) = average_precision(&[0.9, 0.1, 0.5, 0.8, 0.2], &[0, 2]);
        assert_eq!(ranks, vec![1, 3]);
        assert!((ap - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn empty_and_invalid() {
        assert!(matches!(rank_and_score(&[], &RandomScorer { seed: 0 }), Err(EvalError::EmptyInstances)));
        assert!(inst(5, &[]).validate().is_err());
        assert!(inst(5, &[5]).validate().is_err());
        assert!(inst(5, &[2, 1]).validate().is_err());
        assert!(rank_and_score(&[inst(5, &[0])], &Fixed(vec![vec![0.0; 4]])).is_err());
    }

    #[test]
    fn builders_follow_count_rules() {
        let c = corpus(6, 10, 3);
        let mel = build_melody_completion_set(&c, None, 1).unwrap();
        assert_eq!(mel.len(), c.melodic_pairs.len());
        for (i, &(q, next)) in mel.iter().zip(&c.melodic_pairs) {
            assert_eq!((i.query, i.candidates.len(), i.relevant.len()), (q, 50, 1));
            assert_eq!(i.candidates[i.relevant[0]], next);
            let distinct: BTreeSet<_> = i.candidates.iter().collect();
            assert_eq!(distinct.len(), 50);
            let song = c.phrases[q as usize].song;
            for (k, &cand) in i.candidates.iter().enumerate() {
                if k != i.relevant[0] {
                    assert_ne!(c.phrases[cand as usize].song, song);
                    assert_eq!(c.phrases[cand as usize].kind, PhraseKind::Melody);
                }
            }
        }
        let acc = build_accompaniment_set(&c, None, 1).unwrap();
        assert_eq!(acc.len(), 60);
        for i in &acc {
            assert_eq!((i.candidates.len(), i.relevant.len()), (50, 3));
            assert_eq!(i.candidates.iter().collect::<BTreeSet<_>>().len(), 50);
            assert!(i.candidates.iter().all(|&p| c.phrases[p as usize].kind != PhraseKind::Melody));
        }
        assert_eq!(mel, build_melody_completion_set(&c, None, 1).unwrap());
        assert_ne!(mel, build_melody_completion_set(&c, None, 2).unwrap());
        let held = build_melody_completion_set(&c, Some(Split::Heldout), 1).unwrap();
        assert_eq!(held.len(), 9);
    }

    #[test]
    fn one_period_song_gives_one_instance() {
        let mut c = corpus(8, 8, 0);
        c.melodic_pairs.retain(|&(q, _)| c.phrases[q as usize].song != 0 || q == 0);
        assert_eq!(build_melody_completion_set(&c, Some(Split::Heldout), 3).unwrap().len(), 1);
    }

    #[test]
    fn small_pool_is_an_error() {
        let c = corpus(3, 10, 0);
        assert!(matches!(
            build_melody_completion_set(&c, None, 0),
            Err(EvalError::InsufficientPool { available: 20, needed: 49 })
        ));
    }

    #[test]
    fn perfect_scorer() {
        let c = corpus(6, 10, 2);
        let set = build_accompaniment_set(&c, None, 4).unwrap();
        let scores =
            set.iter().map(|i| (0..50).map(|k| if i.relevant.contains(&k) { 1.0 } else { 0.0 }).collect()).collect();
        let r = rank_and_score(&set, &Fixed(scores)).unwrap();
        assert_eq!(r.map, 1.0);
        assert!(r.hits.values().all(|&h| h == 1.0));
    }

    #[test]
    fn rnk_round_trip() {
        let c = corpus(6, 10, 2);
        let set = build_accompaniment_set(&c, None, 5).unwrap();
        let mut buf = Vec::new();
        write_rnk(&mut buf, Task::Accompaniment, &[7; 32], &set).unwrap();
        let (task, hash, back) = read_rnk(&mut buf.as_slice()).unwrap();
        assert_eq!((task, hash), (Task::Accompaniment, [7; 32]));
        assert_eq!(back, set);
        buf[0] = b'X';
        assert!(read_rnk(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn model_scorer_matches_score_pair() {
        let c = corpus(6, 10, 1);
        let m = ContextModel::<f64>::new(Vocabulary::basic(), &ModelConfig { d: 6, rnn_layers: 1, ..Default::default() }, 2)
            .unwrap();
        for mode in [GlobalMode::GM, GlobalMode::GH] {
            let set = build_accompaniment_set(&c, None, 0).unwrap();
            let scorer = ModelScorer::new(&m.net, &m.store, &c, mode, &set[..2]).unwrap();
            let got = scorer.score(&set[1], 1).unwrap();
            let q = &c.phrases[set[1].query as usize].events;
            for (k, &cand) in set[1].candidates.iter().enumerate() {
                let want = m.net.score_pair(&m.store, mode, q, &c.phrases[cand as usize].events).unwrap();
                assert_eq!(got[k], want);
            }
        }
    }

    #[test]
    fn song_vectors() {
        let c = corpus(2, 3, 0);
        let m = ContextModel::<f64>::new(Vocabulary::basic(), &ModelConfig { d: 4, rnn_layers: 1, ..Default::default() }, 2)
            .unwrap();
        let v = song_embedding(&m.net, &m.store, &c, 1).unwrap();
        let mean: Vec<f64> = (0..4)
            .map(|j| (3..6).map(|p| m.net.encode_phrase(&m.store, &c.phrases[p].events).unwrap()[j]).sum::<f64>() / 3.0)
            .collect();
        for (a, b) in v.iter().zip(&mean) {
            assert!((a - b).abs() < 1e-15);
        }
        let mut out = Vec::new();
        assert_eq!(write_song_vectors(&m.net, &m.store, &c, "GM", &mut out).unwrap(), 2);
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("PIRHDY d=4 mode=GM songs\nsong:song_0 "));
        assert_eq!(text.lines().nth(2).unwrap().split(' ').count(), 5);
    }
}
