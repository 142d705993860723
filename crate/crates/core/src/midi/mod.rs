//! MIDI ingestion: parsing, notational time, key normalization and track roles.

mod key;
mod smf;
mod time;

use num_rational::Rational64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use key::{detect_key, transpose_to_c, transposition_offset, KEY_PROFILE_MAJOR, KEY_PROFILE_MINOR};
pub use smf::{parse_smf, EventKind, MidiSong, MidiTrack, ParseWarning, TimedEvent};
pub use time::{normalize_time, GRID_DIVISION};

/// MIDI channel 10 (zero-based 9) carries unpitched percussion.
pub const DRUM_CHANNEL: u8 = 9;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MidiError {
    #[error("malformed header: {0}")]
    MalformedHeader(&'static str),
    #[error("unsupported file: {0}")]
    UnsupportedFormat(String),
    #[error("chunk truncated at byte {offset}")]
    TruncatedChunk { offset: usize },
    #[error("malformed event at byte {offset}: {reason}")]
    MalformedEvent { offset: usize, reason: &'static str },
    #[error("song contains no notes")]
    EmptySong,
}

/// A note in notational time: onset and duration in whole notes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TimedNote {
    pub onset: Rational64,
    pub duration: Rational64,
    pub pitch: u8,
    pub velocity: u8,
}

impl TimedNote {
    pub fn end(&self) -> Rational64 {
        self.onset + self.duration
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Major,
    Minor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KeySource {
    Meta,
    Estimated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Key {
    pub tonic: u8,
    pub mode: Mode,
    pub source: KeySource,
}

impl Key {
    /// Key named by a key-signature meta event.
    pub fn from_signature(sharps: i8, minor: bool) -> Self {
        let major_tonic = (i32::from(sharps) * 7).rem_euclid(12) as u8;
        if minor {
            Key { tonic: (major_tonic + 9) % 12, mode: Mode::Minor, source: KeySource::Meta }
        } else {
            Key { tonic: major_tonic, mode: Mode::Major, source: KeySource::Meta }
        }
    }
}

/// One pitched voice: the notes of one (MIDI track, channel) pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimedTrack {
    pub id: usize,
    pub channel: u8,
    pub notes: Vec<TimedNote>,
}

impl TimedTrack {
    pub fn is_drum(&self) -> bool {
        self.channel == DRUM_CHANNEL
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimedSong {
    pub tracks: Vec<TimedTrack>,
    /// Bar length in whole notes.
    pub bar_length: Rational64,
    /// Key from the first key-signature meta, or the key after transposition.
    pub key: Option<Key>,
    pub source: String,
}

impl TimedSong {
    pub fn note_count(&self) -> usize {
        self.tracks.iter().map(|t| t.notes.len()).sum()
    }

    pub fn track(&self, id: usize) -> Option<&TimedTrack> {
        self.tracks.iter().find(|t| t.id == id)
    }

    /// JSON dump: `tracks` maps track ids to
    /// `[onset_num, onset_den, dur_num, dur_den, pitch, velocity]` rows.
    pub fn to_json(&self) -> serde_json::Value {
        let tracks: serde_json::Map<String, serde_json::Value> = self
            .tracks
            .iter()
            .map(|t| {
                let rows: Vec<serde_json::Value> = t
                    .notes
                    .iter()
                    .map(|n| {
                        serde_json::json!([
                            n.onset.numer(),
                            n.onset.denom(),
                            n.duration.numer(),
                            n.duration.denom(),
                            n.pitch,
                            n.velocity
                        ])
                    })
                    .collect();
                (t.id.to_string(), serde_json::Value::Array(rows))
            })
            .collect();
        serde_json::json!({
            "source": self.source,
            "bar_length": [self.bar_length.numer(), self.bar_length.denom()],
            "key": self.key,
            "tracks": tracks,
        })
    }
}

fn weighted_mean_pitch(notes: &[TimedNote]) -> Option<Rational64> {
    let total: Rational64 = notes.iter().map(|n| n.duration).sum();
    if notes.is_empty() || total == Rational64::from_integer(0) {
        return None;
    }
    let weighted: Rational64 = notes
        .iter()
        .map(|n| n.duration * Rational64::from_integer(i64::from(n.pitch)))
        .sum();
    Some(weighted / total)
}

/// Picks the pitched track with the highest duration-weighted mean pitch.
///
/// Drum-channel tracks are never candidates. Ties go to the lower track id.
pub fn select_melody_track(song: &TimedSong) -> Result<usize, MidiError> {
    let mut best: Option<(usize, Rational64)> = None;
    for track in song.tracks.iter().filter(|t| !t.is_drum()) {
        if let Some(mean) = weighted_mean_pitch(&track.notes) {
            let better = match best {
                None => true,
                Some((id, b)) => mean > b || (mean == b && track.id < id),
            };
            if better {
                best = Some((track.id, mean));
            }
        }
    }
    best.map(|(id, _)| id).ok_or(MidiError::EmptySong)
}

/// Groups notes into sub-tracks by octave (`pitch / 12`), ascending.
pub fn split_by_octave(notes: &[TimedNote]) -> Vec<(u8, Vec<TimedNote>)> {
    let mut buckets: Vec<Vec<TimedNote>> = vec![Vec::new(); 11];
    for note in notes {
        buckets[usize::from(note.pitch / 12)].push(*note);
    }
    buckets
        .into_iter()
        .enumerate()
        .filter(|(_, b)| !b.is_empty())
        .map(|(o, b)| (o as u8, b))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn note(onset: (i64, i64), dur: (i64, i64), pitch: u8) -> TimedNote {
        TimedNote {
            onset: Rational64::new(onset.0, onset.1),
            duration: Rational64::new(dur.0, dur.1),
            pitch,
            velocity: 80,
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
            source: String::new(),
        }
    }

    #[test]
    fn melody_is_highest_mean_track() {
        let s = song(vec![vec![note((0, 1), (1, 4), 70)], vec![note((0, 1), (1, 4), 50)]]);
        assert_eq!(select_melody_track(&s).unwrap(), 0);
        let s = song(vec![vec![note((0, 1), (1, 4), 50)], vec![note((0, 1), (1, 4), 70)]]);
        assert_eq!(select_melody_track(&s).unwrap(), 1);
    }

    #[test]
    fn melody_tie_goes_to_lower_track() {
        let s = song(vec![
            vec![note((0, 1), (1, 4), 60)],
            vec![note((0, 1), (1, 8), 58), note((1, 8), (1, 8), 62)],
        ]);
        assert_eq!(select_melody_track(&s).unwrap(), 0);
    }

    #[test]
    fn melody_mean_is_duration_weighted() {
        // Count-weighted mean of track 1 is 70, duration-weighted is 52.
        let s = song(vec![
            vec![note((0, 1), (1, 1), 60)],
            vec![note((0, 1), (1, 32), 90), note((1, 32), (31, 32), 50)],
        ]);
        assert_eq!(select_melody_track(&s).unwrap(), 0);
    }

    #[test]
    fn drums_and_empty_songs() {
        let mut s = song(vec![vec![note((0, 1), (1, 4), 40)], vec![note((0, 1), (1, 4), 80)]]);
        s.tracks[1].channel = DRUM_CHANNEL;
        assert_eq!(select_melody_track(&s).unwrap(), 0);
        assert_eq!(select_melody_track(&song(vec![vec![]])), Err(MidiError::EmptySong));
    }

    #[test]
    fn octave_split() {
        let notes = [note((0, 1), (1, 4), 60), note((0, 1), (1, 4), 64), note((0, 1), (1, 4), 36)];
        let split = split_by_octave(&notes);
        assert_eq!(split.len(), 2);
        assert_eq!(split[0].0, 3);
        assert_eq!(split[0].1.iter().map(|n| n.pitch).collect::<Vec<_>>(), vec![36]);
        assert_eq!(split[1].0, 5);
        assert_eq!(split[1].1.iter().map(|n| n.pitch).collect::<Vec<_>>(), vec![60, 64]);
        assert!(split_by_octave(&[]).is_empty());
        assert_eq!(split_by_octave(&notes[..2]).len(), 1);
    }

    #[test]
    fn key_signature_mapping() {
        assert_eq!(Key::from_signature(0, false).tonic, 0);
        assert_eq!(Key::from_signature(1, false).tonic, 7);
        assert_eq!(Key::from_signature(-1, false).tonic, 5);
        assert_eq!(Key::from_signature(0, true).tonic, 9);
        assert_eq!(Key::from_signature(1, true).tonic, 4);
    }
}
