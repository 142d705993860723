//! Token embedding and fusion: one d-vector per note event.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::nn::{add_assign, sinusoidal_encode, Activation, Dense, DenseCache, Embedding, Grads, NnError, ParamStore};
use crate::tokenize::{NoteEvent, Vocabulary, STATE_SYMBOLS, VELOCITY_SYMBOLS};
use crate::Scalar;

/// Optional token features. Chroma is always present.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FeatureSet {
    pub octave: bool,
    pub ioi: bool,
    pub state: bool,
    pub velocity: bool,
}

impl FeatureSet {
    pub const ALL: FeatureSet = FeatureSet { octave: true, ioi: true, state: true, velocity: true };
    pub const CHROMA: FeatureSet = FeatureSet { octave: false, ioi: false, state: false, velocity: false };

    fn names(&self) -> Vec<&'static str> {
        let mut v = vec!["chroma"];
        for (on, name) in [(self.octave, "octave"), (self.ioi, "ioi"), (self.state, "state"), (self.velocity, "velocity")] {
            if on {
                v.push(name);
            }
        }
        v
    }
}

impl Default for FeatureSet {
    fn default() -> Self {
        FeatureSet::ALL
    }
}

impl fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.names().join(","))
    }
}

impl FromStr for FeatureSet {
    type Err = String;

    /// Comma-separated list such as `chroma,octave,state`.
    fn from_str(s: &str) -> Result<Self, String> {
        let mut set = FeatureSet::CHROMA;
        let mut chroma = false;
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "chroma" => chroma = true,
                "octave" => set.octave = true,
                "ioi" => set.ioi = true,
                "state" => set.state = true,
                "velocity" => set.velocity = true,
                other => return Err(format!("unknown feature {other:?}")),
            }
        }
        if !chroma {
            return Err("feature list must include chroma".into());
        }
        Ok(set)
    }
}

impl Serialize for FeatureSet {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.names().serialize(s)
    }
}

impl<'de> Deserialize<'de> for FeatureSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let names = Vec::<String>::deserialize(d)?;
        names.join(",").parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbedMode {
    Melodic,
    Harmonic,
}

/// Embedding tables plus the two fusion layers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenModel {
    pub d: usize,
    pub features: FeatureSet,
    pub chroma: Embedding,
    pub velocity: Embedding,
    pub state: Embedding,
    pub fuse_melodic: Dense,
    pub fuse_harmonic: Dense,
}

/// Forward record of one embedded event.
#[derive(Debug, Clone)]
pub struct TokenCache<T> {
    event: NoteEvent,
    mode: EmbedMode,
    dense: DenseCache<T>,
}

impl TokenModel {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        vocab: &Vocabulary,
        d: usize,
        features: FeatureSet,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        if !d.is_multiple_of(2) {
            return Err(NnError::OddDimension(d));
        }
        let chroma = Embedding::new(store, "token.chroma", vocab.chroma_len(), d, rng)?;
        let velocity = Embedding::new(store, "token.velocity", VELOCITY_SYMBOLS.len(), d, rng)?;
        let state = Embedding::new(store, "token.state", STATE_SYMBOLS.len(), d, rng)?;
        let extra = usize::from(features.velocity) + usize::from(features.state);
        let n_mel = d * (1 + usize::from(features.ioi) + extra);
        let fuse_melodic = Dense::new(store, "token.fuse_m", n_mel, d, Activation::Tanh, rng)?;
        let fuse_harmonic = Dense::new(store, "token.fuse_h", d * (1 + extra), d, Activation::Tanh, rng)?;
        Ok(TokenModel { d, features, chroma, velocity, state, fuse_melodic, fuse_harmonic })
    }

    /// Mean of the twelve pitch-class rows.
    pub fn octave_base<T: Scalar>(&self, store: &ParamStore<T>) -> Vec<T> {
        let table = store.value(self.chroma.table);
        let mut base = vec![T::zero(); self.d];
        for pc in 0..12 {
            add_assign(&mut base, table.row(pc));
        }
        let twelfth = T::cast(1.0 / 12.0);
        base.iter_mut().for_each(|x| *x = *x * twelfth);
        base
    }

    /// Spreads the gradient on the octave base evenly over the pitch-class rows.
    pub fn octave_base_backward<T: Scalar>(&self, grads: &mut Grads<T>, d_base: &[T]) {
        let twelfth = T::cast(1.0 / 12.0);
        let share: Vec<T> = d_base.iter().map(|&g| g * twelfth).collect();
        let table = grads.get_mut(self.chroma.table);
        for pc in 0..12 {
            add_assign(table.row_mut(pc), &share);
        }
    }

    /// `c + o·𝕆`, or the bare chroma vector when octave is disabled.
    pub fn pitch_repr<T: Scalar>(&self, store: &ParamStore<T>, base: &[T], chroma: usize, octave: u8) -> Result<Vec<T>, NnError> {
        let mut p = self.chroma.forward(store, chroma)?;
        if self.features.octave {
            let o = T::cast(f64::from(octave));
            for (x, &b) in p.iter_mut().zip(base) {
                *x = *x + o * b;
            }
        }
        Ok(p)
    }

    fn fusion(&self, mode: EmbedMode) -> &Dense {
        match mode {
            EmbedMode::Melodic => &self.fuse_melodic,
            EmbedMode::Harmonic => &self.fuse_harmonic,
        }
    }

    pub fn embed<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        base: &[T],
        event: &NoteEvent,
        mode: EmbedMode,
    ) -> Result<(Vec<T>, TokenCache<T>), NnError> {
        let mut x = self.pitch_repr(store, base, usize::from(event.chroma), event.octave)?;
        if mode == EmbedMode::Melodic && self.features.ioi {
            x.extend(sinusoidal_encode::<T>(event.ioi, self.d)?);
        }
        if self.features.velocity {
            x.extend_from_slice(self.velocity.row(store, usize::from(event.velocity))?);
        }
        if self.features.state {
            x.extend_from_slice(self.state.row(store, usize::from(event.state))?);
        }
        let dense = self.fusion(mode).forward(store, &x)?;
        Ok((dense.y.clone(), TokenCache { event: *event, mode, dense }))
    }

    /// Backward of [`TokenModel::embed`]; the octave-base share goes to `d_base`.
    pub fn embed_backward<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        grads: &mut Grads<T>,
        cache: &TokenCache<T>,
        dy: &[T],
        d_base: &mut [T],
    ) {
        let d = self.d;
        let dx = self.fusion(cache.mode).backward(store, grads, &cache.dense, dy);
        let e = &cache.event;
        let dp = &dx[..d];
        // Indices were validated in the forward pass.
        add_assign(grads.get_mut(self.chroma.table).row_mut(usize::from(e.chroma)), dp);
        if self.features.octave && e.octave > 0 {
            let o = T::cast(f64::from(e.octave));
            for (b, &g) in d_base.iter_mut().zip(dp) {
                *b = *b + o * g;
            }
        }
        let mut at = d;
        if cache.mode == EmbedMode::Melodic && self.features.ioi {
            at += d;
        }
        if self.features.velocity {
            add_assign(grads.get_mut(self.velocity.table).row_mut(usize::from(e.velocity)), &dx[at..at + d]);
            at += d;
        }
        if self.features.state {
            add_assign(grads.get_mut(self.state.table).row_mut(usize::from(e.state)), &dx[at..at + d]);
        }
    }

    /// Writes the embedding tables as `.vec` text: a header, then one line per
    /// symbol. Symbols carry a table prefix so names never collide.
    pub fn write_vec<T: Scalar, W: Write>(
        &self,
        store: &ParamStore<T>,
        vocab: &Vocabulary,
        mode: &str,
        mut out: W,
    ) -> std::io::Result<()> {
        writeln!(out, "PIRHDY d={} mode={}", self.d, mode)?;
        let mut line = |name: String, row: &[T]| -> std::io::Result<()> {
            write!(out, "{name}")?;
            for x in row {
                write!(out, " {}", x.to_f64_lossy())?;
            }
            writeln!(out)
        };
        let chroma = store.value(self.chroma.table);
        for (i, sym) in vocab.chroma_symbols().iter().enumerate() {
            line(format!("chroma:{sym}"), chroma.row(i))?;
        }
        let velocity = store.value(self.velocity.table);
        for (i, sym) in VELOCITY_SYMBOLS.iter().enumerate() {
            line(format!("velocity:{sym}"), velocity.row(i))?;
        }
        let state = store.value(self.state.table);
        for (i, sym) in STATE_SYMBOLS.iter().enumerate() {
            line(format!("state:{sym}"), state.row(i))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::nn::{gradient_check, GradCheckConfig, Tensor};

    fn model(features: FeatureSet, seed: u64) -> (ParamStore<f64>, TokenModel) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vocab = Vocabulary::with_chords(["C-E-G".parse().unwrap()]);
        let tm = TokenModel::new(&mut store, &vocab, 4, features, &mut rng).unwrap();
        (store, tm)
    }

    fn ev(ioi: i32) -> NoteEvent {
        NoteEvent { ioi, chroma: 9, octave: 4, velocity: 6, state: 0 }
    }

    #[test]
    fn feature_list_parsing() {
        assert_eq!("chroma,octave,ioi,state,velocity".parse::<FeatureSet>().unwrap(), FeatureSet::ALL);
        assert_eq!("chroma".parse::<FeatureSet>().unwrap(), FeatureSet::CHROMA);
        assert!("octave".parse::<FeatureSet>().is_err());
        assert!("chroma,tempo".parse::<FeatureSet>().is_err());
        let json = serde_json::to_string(&FeatureSet { state: true, ..FeatureSet::CHROMA }).unwrap();
        assert_eq!(json, r#"["chroma","state"]"#);
        assert_eq!(serde_json::from_str::<FeatureSet>(&json).unwrap().to_string(), "chroma,state");
    }

    #[test]
    fn octave_base_is_pitch_class_mean() {
        let (mut store, tm) = model(FeatureSet::ALL, 0);
        let table = store.value_mut(tm.chroma.table);
        table.fill(0.0);
        table.row_mut(0).copy_from_slice(&[1.0, 2.0, 3.0, 4.0]);
        table.row_mut(5).copy_from_slice(&[-1.0, -2.0, -3.0, -4.0]);
        // REST and chord rows are excluded.
        table.row_mut(12).fill(50.0);
        table.row_mut(13).fill(50.0);
        assert_eq!(tm.octave_base(&store), vec![0.0; 4]);
        for pc in 0..12 {
            store.value_mut(tm.chroma.table).row_mut(pc).copy_from_slice(&[0.5, -0.25, 1.0, 0.0]);
        }
        let base = tm.octave_base(&store);
        for (b, e) in base.iter().zip([0.5, -0.25, 1.0, 0.0]) {
            assert!((b - e).abs() < 1e-15);
        }

        let mut g = store.new_grads();
        tm.octave_base_backward(&mut g, &[12.0, 0.0, 0.0, 24.0]);
        for pc in 0..12 {
            assert_eq!(g.get(tm.chroma.table).row(pc), &[1.0, 0.0, 0.0, 2.0]);
        }
        assert_eq!(g.get(tm.chroma.table).row(12), &[0.0; 4]);
    }

    #[test]
    fn pitch_is_linear_in_octave() {
        let (store, tm) = model(FeatureSet::ALL, 1);
        let base = tm.octave_base(&store);
        for c in 0..14 {
            let p0 = tm.pitch_repr(&store, &base, c, 0).unwrap();
            assert_eq!(p0, store.value(tm.chroma.table).row(c));
            for o in 0..10u8 {
                let lo = tm.pitch_repr(&store, &base, c, o).unwrap();
                let hi = tm.pitch_repr(&store, &base, c, o + 1).unwrap();
                for j in 0..4 {
                    assert!((hi[j] - lo[j] - base[j]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn pitch_repr_small_example() {
        let mut store = ParamStore::<f64>::new();
        let chroma = store.add("c", Tensor::from_vec(&[13, 2], vec![0.0; 26]).unwrap()).unwrap();
        let tm = TokenModel {
            d: 2,
            features: FeatureSet::ALL,
            chroma: Embedding { table: chroma, rows: 13, d: 2 },
            ..model(FeatureSet::ALL, 0).1
        };
        store.value_mut(chroma).row_mut(3).copy_from_slice(&[0.0, 1.0]);
        assert_eq!(tm.pitch_repr(&store, &[1.0, 0.0], 3, 4).unwrap(), vec![4.0, 1.0]);
    }

    #[test]
    fn zero_parameters_give_zero() {
        let (mut store, tm) = model(FeatureSet::ALL, 2);
        for id in store.ids().collect::<Vec<_>>() {
            store.value_mut(id).fill(0.0);
        }
        let base = tm.octave_base(&store);
        for mode in [EmbedMode::Melodic, EmbedMode::Harmonic] {
            assert_eq!(tm.embed(&store, &base, &ev(5), mode).unwrap().0, vec![0.0; 4]);
        }
    }

    #[test]
    fn ioi_matters_only_in_melodic_mode() {
        let (store, tm) = model(FeatureSet::ALL, 3);
        let base = tm.octave_base(&store);
        let h0 = tm.embed(&store, &base, &ev(0), EmbedMode::Harmonic).unwrap().0;
        for ioi in -32..=32 {
            assert_eq!(tm.embed(&store, &base, &ev(ioi), EmbedMode::Harmonic).unwrap().0, h0);
        }
        let m0 = tm.embed(&store, &base, &ev(0), EmbedMode::Melodic).unwrap().0;
        let m8 = tm.embed(&store, &base, &ev(8), EmbedMode::Melodic).unwrap().0;
        assert_ne!(m0, m8);
    }

    #[test]
    fn chroma_only_ignores_other_features() {
        let (store, tm) = model(FeatureSet::CHROMA, 4);
        let base = tm.octave_base(&store);
        let reference = tm.embed(&store, &base, &ev(0), EmbedMode::Melodic).unwrap().0;
        let other = NoteEvent { ioi: -12, chroma: 9, octave: 7, velocity: 1, state: 2 };
        assert_eq!(tm.embed(&store, &base, &other, EmbedMode::Melodic).unwrap().0, reference);
        assert_eq!(store.value(tm.fuse_melodic.w).shape(), &[4, 4]);
    }

    #[test]
    fn bad_index() {
        let (store, tm) = model(FeatureSet::ALL, 5);
        let base = tm.octave_base(&store);
        let e = NoteEvent { chroma: 14, ..ev(0) };
        assert!(matches!(tm.embed(&store, &base, &e, EmbedMode::Melodic), Err(NnError::IndexOutOfRange { .. })));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let (mut store, tm) = model(FeatureSet::ALL, 6);
        let events = [ev(-8), NoteEvent { ioi: 3, chroma: 13, octave: 5, velocity: 2, state: 1 }, ev(0)];
        let proj = [0.3, -0.8, 0.5, 1.1];
        let cfg = GradCheckConfig { fraction: 1.0, ..Default::default() };
        let err = gradient_check(
            |s: &ParamStore<f64>, g: Option<&mut Grads<f64>>| {
                let base = tm.octave_base(s);
                let mut loss = 0.0;
                let mut caches = Vec::new();
                for (i, e) in events.iter().enumerate() {
                    let mode = if i == 1 { EmbedMode::Harmonic } else { EmbedMode::Melodic };
                    let (y, c) = tm.embed(s, &base, e, mode).unwrap();
                    loss += y.iter().zip(&proj).map(|(a, b)| a * b).sum::<f64>();
                    caches.push(c);
                }
                if let Some(g) = g {
                    let mut d_base = vec![0.0; 4];
                    for c in &caches {
                        tm.embed_backward(s, g, c, &proj, &mut d_base);
                    }
                    tm.octave_base_backward(g, &d_base);
                }
                loss
            },
            &mut store,
            &cfg,
        );
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn vec_export_layout() {
        let (store, tm) = model(FeatureSet::ALL, 7);
        let vocab = Vocabulary::with_chords(["C-E-G".parse().unwrap()]);
        let mut buf = Vec::new();
        tm.write_vec(&store, &vocab, "GM", &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "PIRHDY d=4 mode=GM");
        assert_eq!(lines.len(), 1 + 14 + 11 + 4);
        assert!(lines[1].starts_with("chroma:C "));
        assert!(lines[14].starts_with("chroma:C-E-G "));
        assert!(lines.iter().skip(1).all(|l| l.split(' ').count() == 5));
    }
}
