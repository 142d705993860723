use std::collections::BTreeMap;

use num_rational::Rational64;
use serde::{Deserialize, Serialize};

use super::{quantize_velocity, Cell, ChromaSymbol, NoteState, TokenizeError};
use crate::midi::{select_melody_track, split_by_octave, TimedNote, TimedSong, GRID_DIVISION};

/// A song on the 1/32-note grid: one monophonic melody track and one
/// chordified sub-track per accompaniment octave.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSong {
    pub name: String,
    pub steps_per_bar: usize,
    pub n_steps: usize,
    pub melody: Vec<Cell>,
    pub accompaniment: BTreeMap<u8, Vec<Cell>>,
}

impl GridSong {
    pub fn validate(&self) -> Result<(), TokenizeError> {
        if self.steps_per_bar == 0 {
            return Err(TokenizeError::InvalidGrid("steps_per_bar is zero".into()));
        }
        if self.melody.len() != self.n_steps
            || self.accompaniment.values().any(|c| c.len() != self.n_steps)
        {
            return Err(TokenizeError::InvalidGrid("track lengths differ from n_steps".into()));
        }
        Ok(())
    }
}

/// A note sounding at one step of an accompaniment sub-track.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Constituent {
    pub pitch: u8,
    pub velocity: u8,
    /// The note's first step is this step.
    pub starts: bool,
    /// The note's last step is this step.
    pub ends: bool,
}

/// Collapses simultaneous notes of one octave sub-track into one cell.
pub fn chordify(octave: u8, notes: &[Constituent]) -> Cell {
    if notes.is_empty() {
        return Cell::REST;
    }
    let mask = notes.iter().fold(0u16, |m, n| m | (1 << (n.pitch % 12)));
    let velocity = notes.iter().map(|n| n.velocity).max().unwrap_or(0);
    let state = if notes.iter().any(|n| n.starts) {
        NoteState::On
    } else if notes.iter().all(|n| n.ends) {
        NoteState::Off
    } else {
        NoteState::Hold
    };
    Cell {
        chroma: ChromaSymbol::from_mask(mask),
        octave,
        velocity: quantize_velocity(Some(velocity)),
        state,
    }
}

fn to_steps(r: Rational64) -> Result<usize, TokenizeError> {
    let s = r * GRID_DIVISION;
    if !s.is_integer() || *s.numer() < 0 {
        return Err(TokenizeError::InvalidGrid(format!("time {r} is not on the grid")));
    }
    Ok(*s.numer() as usize)
}

fn step_state(onset: usize, end: usize, step: usize) -> NoteState {
    if step == onset {
        NoteState::On
    } else if step + 1 == end {
        NoteState::Off
    } else {
        NoteState::Hold
    }
}

fn note_span(n: &TimedNote) -> Result<(usize, usize), TokenizeError> {
    let onset = to_steps(n.onset)?;
    Ok((onset, onset + to_steps(n.duration)?.max(1)))
}

fn melody_cells(notes: &[TimedNote], n_steps: usize) -> Result<Vec<Cell>, TokenizeError> {
    // Winner per step: highest pitch, then latest onset.
    let mut winner: Vec<Option<(u8, usize, usize, u8)>> = vec![None; n_steps];
    for note in notes {
        let (onset, end) = note_span(note)?;
        for slot in &mut winner[onset..end] {
            let better = match slot {
                None => true,
                Some((pitch, on, _, _)) => (note.pitch, onset) > (*pitch, *on),
            };
            if better {
                *slot = Some((note.pitch, onset, end, note.velocity));
            }
        }
    }
    Ok(winner
        .iter()
        .enumerate()
        .map(|(step, w)| match *w {
            None => Cell::REST,
            Some((pitch, onset, end, velocity)) => Cell {
                chroma: ChromaSymbol::Pitch(pitch % 12),
                octave: pitch / 12,
                velocity: quantize_velocity(Some(velocity)),
                state: step_state(onset, end, step),
            },
        })
        .collect())
}

fn accompaniment_cells(octave: u8, notes: &[TimedNote], n_steps: usize) -> Result<Vec<Cell>, TokenizeError> {
    let mut sounding: Vec<Vec<Constituent>> = vec![Vec::new(); n_steps];
    for note in notes {
        let (onset, end) = note_span(note)?;
        for (step, slot) in sounding.iter_mut().enumerate().take(end).skip(onset) {
            slot.push(Constituent {
                pitch: note.pitch,
                velocity: note.velocity,
                starts: step == onset,
                ends: step + 1 == end,
            });
        }
    }
    Ok(sounding.iter().map(|c| chordify(octave, c)).collect())
}

/// Lays a normalized song onto the grid.
///
/// The melody track is chosen by [`select_melody_track`]; all other pitched
/// tracks are merged and split by octave. The step count is rounded up to
/// whole bars.
pub fn gridify(song: &TimedSong) -> Result<GridSong, TokenizeError> {
    let steps_per_bar = to_steps(song.bar_length)?;
    if steps_per_bar == 0 {
        return Err(TokenizeError::InvalidGrid("bar length below one step".into()));
    }
    let melody_id = select_melody_track(song)?;
    let melody_notes = &song.track(melody_id).expect("selected track exists").notes;
    let accompaniment_notes: Vec<TimedNote> = song
        .tracks
        .iter()
        .filter(|t| t.id != melody_id && !t.is_drum())
        .flat_map(|t| t.notes.iter().copied())
        .collect();

    let mut last = 0usize;
    for note in melody_notes.iter().chain(&accompaniment_notes) {
        last = last.max(note_span(note)?.1);
    }
    let n_steps = last.div_ceil(steps_per_bar).max(1) * steps_per_bar;

    let melody = melody_cells(melody_notes, n_steps)?;
    let accompaniment = split_by_octave(&accompaniment_notes)
        .into_iter()
        .map(|(octave, notes)| Ok((octave, accompaniment_cells(octave, &notes, n_steps)?)))
        .collect::<Result<BTreeMap<_, _>, TokenizeError>>()?;

    Ok(GridSong {
        name: song.source.clone(),
        steps_per_bar,
        n_steps,
        melody,
        accompaniment,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::midi::TimedTrack;

    fn n(onset: i64, steps: i64, pitch: u8, velocity: u8) -> TimedNote {
        TimedNote {
            onset: Rational64::new(onset, 32),
            duration: Rational64::new(steps, 32),
            pitch,
            velocity,
        }
    }

    fn song(tracks: Vec<Vec<TimedNote>>) -> TimedSong {
        TimedSong {
            tracks: tracks
                .into_iter()
                .enumerate()
                .map(|(id, notes)| TimedTrack { id, channel: id as u8, notes })
                .collect(),
            bar_length: Rational64::from_integer(1),
            key: None,
            source: "t".into(),
        }
    }

    fn states(cells: &[Cell]) -> Vec<NoteState> {
        cells.iter().map(|c| c.state).collect()
    }

    #[test]
    fn quarter_note_states() {
        let g = gridify(&song(vec![vec![n(0, 8, 69, 64)]])).unwrap();
        let mut expected = vec![NoteState::On];
        expected.extend([NoteState::Hold; 6]);
        expected.push(NoteState::Off);
        assert_eq!(states(&g.melody[..8]), expected);
        assert_eq!(g.melody[0].chroma, ChromaSymbol::Pitch(9));
        assert_eq!(g.melody[0].octave, 5);
        assert_eq!(g.n_steps, 32);
        assert!(g.melody[8..].iter().all(|c| *c == Cell::REST));
    }

    #[test]
    fn thirty_second_note_is_on() {
        let g = gridify(&song(vec![vec![n(3, 1, 60, 64)]])).unwrap();
        assert_eq!(g.melody[3].state, NoteState::On);
    }

    #[test]
    fn empty_bar_is_rest() {
        let g = gridify(&song(vec![vec![n(32, 8, 60, 64)]])).unwrap();
        assert_eq!(g.n_steps, 64);
        assert!(g.melody[..32].iter().all(|c| c.state == NoteState::Rest && c.is_rest()));
    }

    #[test]
    fn melody_is_monophonic_highest_wins() {
        let g = gridify(&song(vec![vec![n(0, 16, 60, 64), n(4, 4, 67, 64)]])).unwrap();
        assert_eq!(g.melody[3].chroma, ChromaSymbol::Pitch(0));
        assert_eq!(g.melody[4].chroma, ChromaSymbol::Pitch(7));
        assert_eq!(g.melody[4].state, NoteState::On);
        assert_eq!(g.melody[8].chroma, ChromaSymbol::Pitch(0));
    }

    #[test]
    fn chordify_rules() {
        let c = |pitch, starts, ends| Constituent { pitch, velocity: 64, starts, ends };
        let dfb = chordify(4, &[c(50, true, false), c(53, true, false), c(59, true, false)]);
        assert_eq!(dfb.chroma.to_string(), "D-F-B");
        assert_eq!(dfb.velocity, 5);
        assert_eq!(dfb.state, NoteState::On);
        assert_eq!(chordify(4, &[c(52, false, false)]).chroma, ChromaSymbol::Pitch(4));
        assert_eq!(chordify(4, &[c(48, false, false), c(52, false, true)]).state, NoteState::Hold);
        assert_eq!(chordify(4, &[c(48, false, true), c(52, false, true)]).state, NoteState::Off);
        assert_eq!(chordify(4, &[c(48, true, false), c(52, false, true)]).state, NoteState::On);
        let loud = chordify(4, &[Constituent { velocity: 127, ..c(48, true, true) }, c(52, true, true)]);
        assert_eq!(loud.velocity, 9);
    }

    #[test]
    fn accompaniment_splits_by_octave() {
        let g = gridify(&song(vec![
            vec![n(0, 32, 72, 64)],
            vec![n(0, 32, 48, 64), n(0, 32, 52, 64), n(0, 32, 36, 64)],
        ]))
        .unwrap();
        assert_eq!(g.accompaniment.keys().copied().collect::<Vec<_>>(), vec![3, 4]);
        assert_eq!(g.accompaniment[&4][0].chroma.to_string(), "C-E");
        assert_eq!(g.accompaniment[&3][5].state, NoteState::Hold);
        assert_eq!(g.accompaniment[&3][31].state, NoteState::Off);
        g.validate().unwrap();
    }
}
