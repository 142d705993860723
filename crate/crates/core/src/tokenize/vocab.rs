use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ChromaSymbol, GridSong, TokenizeError, STATE_SYMBOLS, VELOCITY_SYMBOLS};

/// Index maps for the chroma, velocity and state vocabularies.
///
/// Chroma indices 0–11 are the pitch classes, 12 is the rest, and chords
/// follow in order of first appearance in the corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    chroma: Vec<ChromaSymbol>,
    index: HashMap<ChromaSymbol, u16>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VocabularyFile {
    chroma: Vec<String>,
    velocity: Vec<String>,
    state: Vec<String>,
}

impl Vocabulary {
    /// Vocabulary without any chords.
    pub fn basic() -> Self {
        let mut chroma: Vec<ChromaSymbol> = (0..12).map(ChromaSymbol::Pitch).collect();
        chroma.push(ChromaSymbol::Rest);
        Self::from_symbols(chroma)
    }

    fn from_symbols(chroma: Vec<ChromaSymbol>) -> Self {
        let index = chroma
            .iter()
            .enumerate()
            .map(|(i, s)| (*s, i as u16))
            .collect();
        Vocabulary { chroma, index }
    }

    pub fn with_chords(chords: impl IntoIterator<Item = ChromaSymbol>) -> Self {
        let mut vocab = Self::basic();
        for chord in chords {
            vocab.insert(chord);
        }
        vocab
    }

    fn insert(&mut self, sym: ChromaSymbol) {
        if !self.index.contains_key(&sym) {
            self.index.insert(sym, self.chroma.len() as u16);
            self.chroma.push(sym);
        }
    }

    pub fn chroma_len(&self) -> usize {
        self.chroma.len()
    }

    pub fn velocity_len(&self) -> usize {
        VELOCITY_SYMBOLS.len()
    }

    pub fn state_len(&self) -> usize {
        STATE_SYMBOLS.len()
    }

    pub fn total_len(&self) -> usize {
        self.chroma_len() + self.velocity_len() + self.state_len()
    }

    pub fn chord_count(&self) -> usize {
        self.chroma.len() - 13
    }

    pub fn chroma_index(&self, sym: ChromaSymbol) -> Option<u16> {
        self.index.get(&sym).copied()
    }

    pub fn chroma_symbol(&self, index: u16) -> Option<ChromaSymbol> {
        self.chroma.get(usize::from(index)).copied()
    }

    pub fn chroma_symbols(&self) -> Vec<String> {
        self.chroma.iter().map(ToString::to_string).collect()
    }

    /// UTF-8 JSON with the three symbol arrays in index order.
    pub fn to_json(&self) -> String {
        let file = VocabularyFile {
            chroma: self.chroma_symbols(),
            velocity: VELOCITY_SYMBOLS.iter().map(|s| s.to_string()).collect(),
            state: STATE_SYMBOLS.iter().map(|s| s.to_string()).collect(),
        };
        serde_json::to_string_pretty(&file).expect("vocabulary serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, TokenizeError> {
        let file: VocabularyFile = serde_json::from_str(text)
            .map_err(|e| TokenizeError::InvalidGrid(format!("vocabulary file: {e}")))?;
        if file.velocity != VELOCITY_SYMBOLS || file.state != STATE_SYMBOLS {
            return Err(TokenizeError::InvalidGrid(
                "vocabulary file has non-standard velocity or state symbols".into(),
            ));
        }
        let symbols = file
            .chroma
            .iter()
            .map(|s| s.parse())
            .collect::<Result<Vec<ChromaSymbol>, _>>()?;
        let basic = Self::basic();
        if symbols.len() < 13 || symbols[..13] != basic.chroma[..] {
            return Err(TokenizeError::InvalidGrid(
                "chroma vocabulary must start with the 12 pitch classes and R".into(),
            ));
        }
        let vocab = Self::from_symbols(symbols);
        if vocab.index.len() != vocab.chroma.len() {
            return Err(TokenizeError::InvalidGrid("duplicate chroma symbols".into()));
        }
        Ok(vocab)
    }

    /// First four bytes (little-endian) of the SHA-256 of the JSON form.
    pub fn hash(&self) -> u32 {
        let digest = Sha256::digest(self.to_json().as_bytes());
        u32::from_le_bytes([digest[0], digest[1], digest[2], digest[3]])
    }
}

/// Chroma vocabulary over a corpus: pitch classes, rest, then every distinct
/// chord in time order of first appearance.
pub fn build_vocabulary(corpus: &[GridSong]) -> Result<Vocabulary, TokenizeError> {
    if corpus.is_empty() {
        return Err(TokenizeError::EmptyCorpus);
    }
    let mut vocab = Vocabulary::basic();
    for song in corpus {
        for step in 0..song.n_steps {
            for cells in song.accompaniment.values() {
                let sym = cells[step].chroma;
                if matches!(sym, ChromaSymbol::Chord(_)) {
                    vocab.insert(sym);
                }
            }
        }
    }
    Ok(vocab)
}
