//! Grid-aligned note events, vocabularies, phrase segmentation and training
//! sample extraction.

mod corpus;
mod grid;
mod samples;
mod segment;
mod vocab;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use corpus::{
    assign_splits, read_gpc, read_prc, sha256_hex, write_gpc, write_prc, CorpusError, GlobalCorpus,
    PhraseKind, PhraseRecord, SongEntry, Split,
};
pub use grid::{chordify, gridify, Constituent, GridSong};
pub use samples::{extract_global_pairs, extract_local_samples, negative_samples, GlobalPairs, LocalSample};
pub use segment::{phrase_events, phrase_windows, segment, Phrase, SegmentConfig, Segmentation, TrackRef};
pub use vocab::{build_vocabulary, Vocabulary};

pub const PITCH_CLASS_NAMES: [&str; 12] =
    ["C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"];
pub const VELOCITY_SYMBOLS: [&str; 11] =
    ["pppp", "ppp", "pp", "p", "mp", "mf", "f", "ff", "fff", "ffff", "R"];
pub const STATE_SYMBOLS: [&str; 4] = ["on", "hold", "off", "r"];

/// Chroma index of the rest symbol in every vocabulary.
pub const REST_CHROMA: u16 = 12;
/// Velocity index of the rest symbol.
pub const REST_VELOCITY: u8 = 10;
pub const N_OCTAVES: u8 = 11;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TokenizeError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("song rejected: {periods} period(s), {required} required")]
    SongRejected { periods: usize, required: usize },
    #[error("symbol {0} is not in the vocabulary")]
    UnknownSymbol(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error(transparent)]
    Midi(#[from] crate::midi::MidiError),
}

/// Per-step phase of a note.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NoteState {
    #[serde(rename = "on")]
    On = 0,
    #[serde(rename = "hold")]
    Hold = 1,
    #[serde(rename = "off")]
    Off = 2,
    #[serde(rename = "r")]
    Rest = 3,
}

impl NoteState {
    pub fn index(self) -> u8 {
        self as u8
    }
}

/// Maps a MIDI velocity onto the ten dynamic markings; `None` is a rest.
pub fn quantize_velocity(velocity: Option<u8>) -> u8 {
    match velocity {
        None => REST_VELOCITY,
        Some(v) => ((u32::from(v) * 10 / 128) as u8).min(9),
    }
}

/// A chroma-vocabulary symbol: a pitch class, the rest, or a chord given as
/// a 12-bit pitch-class set (bit 0 = C).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ChromaSymbol {
    Pitch(u8),
    Rest,
    Chord(u16),
}

impl ChromaSymbol {
    /// Canonical symbol for a set of sounding pitch classes.
    pub fn from_mask(mask: u16) -> Self {
        match mask.count_ones() {
            0 => ChromaSymbol::Rest,
            1 => ChromaSymbol::Pitch(mask.trailing_zeros() as u8),
            _ => ChromaSymbol::Chord(mask & 0x0fff),
        }
    }

    pub fn is_rest(self) -> bool {
        self == ChromaSymbol::Rest
    }
}

impl fmt::Display for ChromaSymbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            ChromaSymbol::Pitch(pc) => f.write_str(PITCH_CLASS_NAMES[usize::from(pc)]),
            ChromaSymbol::Rest => f.write_str("R"),
            ChromaSymbol::Chord(mask) => {
                let names: Vec<&str> = (0..12)
                    .filter(|pc| mask & (1 << pc) != 0)
                    .map(|pc| PITCH_CLASS_NAMES[pc])
                    .collect();
                f.write_str(&names.join("-"))
            }
        }
    }
}

impl FromStr for ChromaSymbol {
    type Err = TokenizeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "R" {
            return Ok(ChromaSymbol::Rest);
        }
        let mut mask = 0u16;
        for part in s.split('-') {
            let pc = PITCH_CLASS_NAMES
                .iter()
                .position(|n| *n == part)
                .ok_or_else(|| TokenizeError::UnknownSymbol(s.to_string()))?;
            mask |= 1 << pc;
        }
        let sym = ChromaSymbol::from_mask(mask);
        // Only canonical spellings are accepted.
        if sym.to_string() != s {
            return Err(TokenizeError::UnknownSymbol(s.to_string()));
        }
        Ok(sym)
    }
}

impl Serialize for ChromaSymbol {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ChromaSymbol {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One grid step of one track.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "(ChromaSymbol, u8, u8, NoteState)", into = "(ChromaSymbol, u8, u8, NoteState)")]
pub struct Cell {
    pub chroma: ChromaSymbol,
    pub octave: u8,
    pub velocity: u8,
    pub state: NoteState,
}

impl Cell {
    pub const REST: Cell = Cell {
        chroma: ChromaSymbol::Rest,
        octave: 0,
        velocity: REST_VELOCITY,
        state: NoteState::Rest,
    };

    pub fn is_rest(&self) -> bool {
        self.chroma.is_rest()
    }
}

impl From<(ChromaSymbol, u8, u8, NoteState)> for Cell {
    fn from((chroma, octave, velocity, state): (ChromaSymbol, u8, u8, NoteState)) -> Self {
        Cell { chroma, octave, velocity, state }
    }
}

impl From<Cell> for (ChromaSymbol, u8, u8, NoteState) {
    fn from(c: Cell) -> Self {
        (c.chroma, c.octave, c.velocity, c.state)
    }
}

/// The five-feature token: IOI in grid steps plus vocabulary indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NoteEvent {
    pub ioi: i32,
    pub chroma: u16,
    pub octave: u8,
    pub velocity: u8,
    pub state: u8,
}

impl NoteEvent {
    pub fn from_cell(cell: &Cell, ioi: i32, vocab: &Vocabulary) -> Result<Self, TokenizeError> {
        let chroma = vocab
            .chroma_index(cell.chroma)
            .ok_or_else(|| TokenizeError::UnknownSymbol(cell.chroma.to_string()))?;
        Ok(NoteEvent {
            ioi,
            chroma,
            octave: if cell.is_rest() { 0 } else { cell.octave },
            velocity: cell.velocity,
            state: cell.state.index(),
        })
    }

    pub fn is_rest(&self) -> bool {
        self.chroma == REST_CHROMA
    }

    /// Feature `j` in label order (chroma, octave, velocity, state).
    pub fn feature(&self, j: usize) -> u16 {
        match j {
            0 => self.chroma,
            1 => u16::from(self.octave),
            2 => u16::from(self.velocity),
            3 => u16::from(self.state),
            _ => panic!("feature index {j} out of range"),
        }
    }

    pub fn set_feature(&mut self, j: usize, value: u16) {
        match j {
            0 => self.chroma = value,
            1 => self.octave = value as u8,
            2 => self.velocity = value as u8,
            3 => self.state = value as u8,
            _ => panic!("feature index {j} out of range"),
        }
    }
}
