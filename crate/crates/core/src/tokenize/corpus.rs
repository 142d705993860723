//! Binary corpus files.
//!
//! `.prc` holds local training samples:
//!
//! ```text
//! "PRC1" | u32 vocab_hash | u32 record_count
//! record: u8 n_melodic | u8 n_harmonic | events... | candidate | u8 label_mask
//! event:  i16 ioi | u16 chroma | u8 octave | u8 velocity | u8 state
//! ```
//!
//! `.gpc` holds phrases and global phrase pairs:
//!
//! ```text
//! "GPC1" | u32 vocab_hash
//! u32 n_songs,   song:   u16 name_len | name | u8 split (0 train, 1 held-out)
//! u32 n_phrases, phrase: u32 song | u8 kind (0 melody, 1 accompaniment) | u8 octave
//!                        | u32 start_step | u16 n_events | events...
//! u32 n_melodic_pairs,  (u32 phrase, u32 phrase)...
//! u32 n_harmonic_pairs, (u32 phrase, u32 phrase)...
//! ```
//!
//! All integers little-endian.

use std::io::{self, Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{LocalSample, NoteEvent};

const PRC_MAGIC: &[u8; 4] = b"PRC1";
const GPC_MAGIC: &[u8; 4] = b"GPC1";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("bad magic: expected {expected}")]
    BadMagic { expected: &'static str },
    #[error("{0} does not fit the record format")]
    OutOfRange(String),
    #[error("corrupt corpus: {0}")]
    Corrupt(String),
}

fn write_event<W: Write>(w: &mut W, e: &NoteEvent) -> Result<(), CorpusError> {
    let ioi = i16::try_from(e.ioi).map_err(|_| CorpusError::OutOfRange(format!("IOI {}", e.ioi)))?;
    w.write_i16::<LittleEndian>(ioi)?;
    w.write_u16::<LittleEndian>(e.chroma)?;
    w.write_u8(e.octave)?;
    w.write_u8(e.velocity)?;
    w.write_u8(e.state)?;
    Ok(())
}

fn read_event<R: Read>(r: &mut R) -> Result<NoteEvent, CorpusError> {
    Ok(NoteEvent {
        ioi: i32::from(r.read_i16::<LittleEndian>()?),
        chroma: r.read_u16::<LittleEndian>()?,
        octave: r.read_u8()?,
        velocity: r.read_u8()?,
        state: r.read_u8()?,
    })
}

fn check_magic<R: Read>(r: &mut R, magic: &[u8; 4], name: &'static str) -> Result<(), CorpusError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    if &buf != magic {
        return Err(CorpusError::BadMagic { expected: name });
    }
    Ok(())
}

fn len_u8(n: usize, what: &str) -> Result<u8, CorpusError> {
    u8::try_from(n).map_err(|_| CorpusError::OutOfRange(format!("{what} count {n}")))
}

pub fn write_prc<W: Write>(w: &mut W, vocab_hash: u32, samples: &[LocalSample]) -> Result<(), CorpusError> {
    w.write_all(PRC_MAGIC)?;
    w.write_u32::<LittleEndian>(vocab_hash)?;
    let count = u32::try_from(samples.len()).map_err(|_| CorpusError::OutOfRange("record count".into()))?;
    w.write_u32::<LittleEndian>(count)?;
    for s in samples {
        w.write_u8(len_u8(s.melodic.len(), "melodic")?)?;
        w.write_u8(len_u8(s.harmonic.len(), "harmonic")?)?;
        for e in s.melodic.iter().chain(&s.harmonic) {
            write_event(w, e)?;
        }
        write_event(w, &s.candidate)?;
        w.write_u8(s.label_mask())?;
    }
    Ok(())
}

/// Returns the vocabulary hash and the records.
pub fn read_prc<R: Read>(r: &mut R) -> Result<(u32, Vec<LocalSample>), CorpusError> {
    check_magic(r, PRC_MAGIC, "PRC1")?;
    let hash = r.read_u32::<LittleEndian>()?;
    let count = r.read_u32::<LittleEndian>()? as usize;
    let mut samples = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let n_m = usize::from(r.read_u8()?);
        let n_h = usize::from(r.read_u8()?);
        let melodic = (0..n_m).map(|_| read_event(r)).collect::<Result<_, _>>()?;
        let harmonic = (0..n_h).map(|_| read_event(r)).collect::<Result<_, _>>()?;
        let candidate = read_event(r)?;
        let mask = r.read_u8()?;
        if mask > 0x0f {
            return Err(CorpusError::Corrupt(format!("label mask {mask:#x}")));
        }
        samples.push(LocalSample { melodic, harmonic, candidate, labels: LocalSample::labels_from_mask(mask) });
    }
    Ok((hash, samples))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Heldout,
}

/// Deterministic song split: a seeded shuffle marks `round(n · fraction)`
/// songs as held out.
pub fn assign_splits(n: usize, heldout_fraction: f64, seed: u64) -> Vec<Split> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_held = ((n as f64) * heldout_fraction).round() as usize;
    let mut splits = vec![Split::Train; n];
    for &i in order.iter().take(n_held.min(n)) {
        splits[i] = Split::Heldout;
    }
    splits
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SongEntry {
    pub name: String,
    pub split: Split,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PhraseKind {
    Melody,
    Accompaniment(u8),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhraseRecord {
    pub song: u32,
    pub kind: PhraseKind,
    pub start_step: u32,
    pub events: Vec<NoteEvent>,
}

/// Phrases of a corpus plus melodic and harmonic pairs over phrase ids.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GlobalCorpus {
    pub vocab_hash: u32,
    pub songs: Vec<SongEntry>,
    pub phrases: Vec<PhraseRecord>,
    pub melodic_pairs: Vec<(u32, u32)>,
    pub harmonic_pairs: Vec<(u32, u32)>,
}

impl GlobalCorpus {
    pub fn song_split(&self, phrase: u32) -> Split {
        self.songs[self.phrases[phrase as usize].song as usize].split
    }

    /// SHA-256 over the serialized corpus.
    pub fn content_digest(&self) -> [u8; 32] {
        let mut buf = Vec::new();
        write_gpc(&mut buf, self).expect("in-memory write");
        Sha256::digest(&buf).into()
    }

    /// [`GlobalCorpus::content_digest`], hex-encoded.
    pub fn content_hash(&self) -> String {
        hex(&self.content_digest())
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Hex-encoded SHA-256 of arbitrary bytes, used to tag checkpoints with the
/// corpus file they were trained on.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

pub fn write_gpc<W: Write>(w: &mut W, corpus: &GlobalCorpus) -> Result<(), CorpusError> {
    let u32_of = |n: usize, what: &str| {
        u32::try_from(n).map_err(|_| CorpusError::OutOfRange(format!("{what} count {n}")))
    };
    w.write_all(GPC_MAGIC)?;
    w.write_u32::<LittleEndian>(corpus.vocab_hash)?;
    w.write_u32::<LittleEndian>(u32_of(corpus.songs.len(), "song")?)?;
    for song in &corpus.songs {
        let name = song.name.as_bytes();
        let len = u16::try_from(name.len()).map_err(|_| CorpusError::OutOfRange("song name".into()))?;
        w.write_u16::<LittleEndian>(len)?;
        w.write_all(name)?;
        w.write_u8(match song.split {
            Split::Train => 0,
            Split::Heldout => 1,
        })?;
    }
    w.write_u32::<LittleEndian>(u32_of(corpus.phrases.len(), "phrase")?)?;
    for p in &corpus.phrases {
        w.write_u32::<LittleEndian>(p.song)?;
        let (kind, octave) = match p.kind {
            PhraseKind::Melody => (0, 0),
            PhraseKind::Accompaniment(o) => (1, o),
        };
        w.write_u8(kind)?;
        w.write_u8(octave)?;
        w.write_u32::<LittleEndian>(p.start_step)?;
        let n = u16::try_from(p.events.len()).map_err(|_| CorpusError::OutOfRange("phrase length".into()))?;
        w.write_u16::<LittleEndian>(n)?;
        for e in &p.events {
            write_event(w, e)?;
        }
    }
    for pairs in [&corpus.melodic_pairs, &corpus.harmonic_pairs] {
        w.write_u32::<LittleEndian>(u32_of(pairs.len(), "pair")?)?;
        for &(a, b) in pairs.iter() {
            w.write_u32::<LittleEndian>(a)?;
            w.write_u32::<LittleEndian>(b)?;
        }
    }
    Ok(())
}

pub fn read_gpc<R: Read>(r: &mut R) -> Result<GlobalCorpus, CorpusError> {
    check_magic(r, GPC_MAGIC, "GPC1")?;
    let vocab_hash = r.read_u32::<LittleEndian>()?;
    let n_songs = r.read_u32::<LittleEndian>()? as usize;
    let mut songs = Vec::with_capacity(n_songs.min(1 << 16));
    for _ in 0..n_songs {
        let len = usize::from(r.read_u16::<LittleEndian>()?);
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| CorpusError::Corrupt("song name is not UTF-8".into()))?;
        let split = match r.read_u8()? {
            0 => Split::Train,
            1 => Split::Heldout,
            other => return Err(CorpusError::Corrupt(format!("split tag {other}"))),
        };
        songs.push(SongEntry { name, split });
    }
    let n_phrases = r.read_u32::<LittleEndian>()? as usize;
    let mut phrases = Vec::with_capacity(n_phrases.min(1 << 20));
    for _ in 0..n_phrases {
        let song = r.read_u32::<LittleEndian>()?;
        if song as usize >= songs.len() {
            return Err(CorpusError::Corrupt(format!("phrase refers to song {song}")));
        }
        let kind = match (r.read_u8()?, r.read_u8()?) {
            (0, _) => PhraseKind::Melody,
            (1, o) => PhraseKind::Accompaniment(o),
            (k, _) => return Err(CorpusError::Corrupt(format!("phrase kind {k}"))),
        };
        let start_step = r.read_u32::<LittleEndian>()?;
        let n = usize::from(r.read_u16::<LittleEndian>()?);
        let events = (0..n).map(|_| read_event(r)).collect::<Result<_, _>>()?;
        phrases.push(PhraseRecord { song, kind, start_step, events });
    }
    let mut read_pairs = || -> Result<Vec<(u32, u32)>, CorpusError> {
        let n = r.read_u32::<LittleEndian>()? as usize;
        let mut pairs = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let a = r.read_u32::<LittleEndian>()?;
            let b = r.read_u32::<LittleEndian>()?;
            if a as usize >= phrases.len() || b as usize >= phrases.len() {
                return Err(CorpusError::Corrupt(format!("pair ({a}, {b}) out of range")));
            }
            pairs.push((a, b));
        }
        Ok(pairs)
    };
    let melodic_pairs = read_pairs()?;
    let harmonic_pairs = read_pairs()?;
    Ok(GlobalCorpus { vocab_hash, songs, phrases, melodic_pairs, harmonic_pairs })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn event() -> impl Strategy<Value = NoteEvent> {
        (-512i32..512, 0u16..700, 0u8..11, 0u8..11, 0u8..4).prop_map(|(ioi, chroma, octave, velocity, state)| {
            NoteEvent { ioi, chroma, octave, velocity, state }
        })
    }

    fn sample() -> impl Strategy<Value = LocalSample> {
        (
            prop::collection::vec(event(), 0..6),
            prop::collection::vec(event(), 0..11),
            event(),
            0u8..16,
        )
            .prop_map(|(melodic, harmonic, candidate, mask)| LocalSample {
                melodic,
                harmonic,
                candidate,
                labels: LocalSample::labels_from_mask(mask),
            })
    }

    proptest! {
        #[test]
        fn prc_round_trip(hash in any::<u32>(), samples in prop::collection::vec(sample(), 0..20)) {
            let mut buf = Vec::new();
            write_prc(&mut buf, hash, &samples).unwrap();
            let (h, back) = read_prc(&mut buf.as_slice()).unwrap();
            prop_assert_eq!(h, hash);
            prop_assert_eq!(back, samples);
        }
    }

    #[test]
    fn prc_header_layout() {
        let mut buf = Vec::new();
        write_prc(&mut buf, 0x0403_0201, &[]).unwrap();
        assert_eq!(buf, b"PRC1\x01\x02\x03\x04\x00\x00\x00\x00");
        assert!(matches!(read_prc(&mut &b"PRC2\0\0\0\0\0\0\0\0"[..]), Err(CorpusError::BadMagic { .. })));
    }

    #[test]
    fn gpc_round_trip() {
        let e = NoteEvent { ioi: 3, chroma: 14, octave: 4, velocity: 5, state: 1 };
        let corpus = GlobalCorpus {
            vocab_hash: 7,
            songs: vec![
                SongEntry { name: "a.mid".into(), split: Split::Train },
                SongEntry { name: "b.mid".into(), split: Split::Heldout },
            ],
            phrases: vec![
                PhraseRecord { song: 0, kind: PhraseKind::Melody, start_step: 0, events: vec![e; 4] },
                PhraseRecord { song: 1, kind: PhraseKind::Accompaniment(4), start_step: 128, events: vec![e] },
            ],
            melodic_pairs: vec![(0, 1)],
            harmonic_pairs: vec![(0, 1), (1, 0)],
        };
        let mut buf = Vec::new();
        write_gpc(&mut buf, &corpus).unwrap();
        assert_eq!(read_gpc(&mut buf.as_slice()).unwrap(), corpus);
        assert_eq!(corpus.content_hash().len(), 64);
        assert_eq!(corpus.song_split(1), Split::Heldout);
    }

    #[test]
    fn splits_are_seeded() {
        let a = assign_splits(20, 0.25, 5);
        assert_eq!(a, assign_splits(20, 0.25, 5));
        assert_eq!(a.iter().filter(|s| **s == Split::Heldout).count(), 5);
    }
}
