use serde::{Deserialize, Serialize};

use super::{Cell, GridSong, NoteEvent, TokenizeError, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TrackRef {
    Melody,
    Accompaniment(u8),
}

/// A four-bar window of one track.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Phrase {
    pub track: TrackRef,
    pub start_step: usize,
    pub end_step: usize,
    /// Fraction of non-rest steps.
    pub valid_ratio: f64,
}

impl Phrase {
    pub fn len(&self) -> usize {
        self.end_step - self.start_step
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn same_span(&self, other: &Phrase) -> bool {
        self.start_step == other.start_step && self.end_step == other.end_step
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmentConfig {
    pub melodic_valid: f64,
    pub harmonic_valid: f64,
    pub min_periods: usize,
    pub bars_per_phrase: usize,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        SegmentConfig {
            melodic_valid: 0.75,
            harmonic_valid: 0.50,
            min_periods: 2,
            bars_per_phrase: 4,
        }
    }
}

/// Surviving phrases of one song.
#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub phrase_len: usize,
    pub melody: Vec<Phrase>,
    pub accompaniment: Vec<Phrase>,
    /// Index pairs into `melody` of directly consecutive phrases.
    pub periods: Vec<(usize, usize)>,
}

impl Segmentation {
    /// Whether `step` of `track` lies in a surviving phrase.
    pub fn covers(&self, track: TrackRef, step: usize) -> bool {
        let list = match track {
            TrackRef::Melody => &self.melody,
            TrackRef::Accompaniment(_) => &self.accompaniment,
        };
        list.iter()
            .any(|p| p.track == track && p.start_step <= step && step < p.end_step)
    }
}

/// Consecutive non-overlapping windows of `phrase_len` steps covering the song.
/// The last window may run past `n_steps`; those steps count as rests.
pub fn phrase_windows(n_steps: usize, phrase_len: usize) -> Vec<(usize, usize)> {
    (0..n_steps.div_ceil(phrase_len))
        .map(|k| (k * phrase_len, (k + 1) * phrase_len))
        .collect()
}

fn valid_ratio(cells: &[Cell], start: usize, end: usize) -> f64 {
    let upper = end.min(cells.len());
    let valid = if start < upper {
        cells[start..upper].iter().filter(|c| !c.is_rest()).count()
    } else {
        0
    };
    valid as f64 / (end - start) as f64
}

/// Cuts every track into four-bar phrases, drops sparse ones and rejects
/// songs with too few periods.
pub fn segment(song: &GridSong, cfg: &SegmentConfig) -> Result<Segmentation, TokenizeError> {
    song.validate()?;
    let phrase_len = cfg.bars_per_phrase * song.steps_per_bar;
    if phrase_len == 0 {
        return Err(TokenizeError::InvalidGrid("zero-length phrases".into()));
    }
    let windows = phrase_windows(song.n_steps, phrase_len);

    let mut melody = Vec::new();
    let mut window_of = Vec::new();
    for (k, &(start, end)) in windows.iter().enumerate() {
        let ratio = valid_ratio(&song.melody, start, end);
        if ratio >= cfg.melodic_valid {
            melody.push(Phrase { track: TrackRef::Melody, start_step: start, end_step: end, valid_ratio: ratio });
            window_of.push(k);
        }
    }
    let mut accompaniment = Vec::new();
    for (&octave, cells) in &song.accompaniment {
        for &(start, end) in &windows {
            let ratio = valid_ratio(cells, start, end);
            if ratio >= cfg.harmonic_valid {
                accompaniment.push(Phrase {
                    track: TrackRef::Accompaniment(octave),
                    start_step: start,
                    end_step: end,
                    valid_ratio: ratio,
                });
            }
        }
    }
    let periods: Vec<(usize, usize)> = (1..melody.len())
        .filter(|&i| window_of[i] == window_of[i - 1] + 1)
        .map(|i| (i - 1, i))
        .collect();
    if periods.len() < cfg.min_periods {
        return Err(TokenizeError::SongRejected { periods: periods.len(), required: cfg.min_periods });
    }
    Ok(Segmentation { phrase_len, melody, accompaniment, periods })
}

/// Every step of a phrase as a note event, IOI relative to the phrase start.
pub fn phrase_events(song: &GridSong, phrase: &Phrase, vocab: &Vocabulary) -> Result<Vec<NoteEvent>, TokenizeError> {
    let cells = match phrase.track {
        TrackRef::Melody => &song.melody,
        TrackRef::Accompaniment(octave) => song
            .accompaniment
            .get(&octave)
            .ok_or_else(|| TokenizeError::InvalidGrid(format!("no accompaniment octave {octave}")))?,
    };
    (phrase.start_step..phrase.end_step)
        .map(|step| {
            let cell = cells.get(step).copied().unwrap_or(Cell::REST);
            NoteEvent::from_cell(&cell, (step - phrase.start_step) as i32, vocab)
        })
        .collect()
}
