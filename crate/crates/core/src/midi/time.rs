use std::collections::{BTreeMap, HashMap, VecDeque};

use num_rational::Rational64;

use super::{EventKind, Key, MidiError, MidiSong, TimedNote, TimedSong, TimedTrack};

/// Grid steps per whole note (1/32-note resolution).
pub const GRID_DIVISION: i64 = 32;

/// Rounds `ticks / tpq` quarter notes to the nearest 1/32-note step, halves up.
fn ticks_to_steps(ticks: u64, tpq: u16) -> i64 {
    // steps = ticks * 8 / tpq
    let num = ticks as i128 * 8;
    let den = i128::from(tpq);
    ((2 * num + den) / (2 * den)) as i64
}

/// Converts tick times into whole-note units snapped to the 1/32-note grid.
///
/// Each (MIDI track, channel) pair with notes becomes one [`TimedTrack`];
/// ids follow (track index, channel) order. Durations shorter than one grid
/// step are raised to one step.
pub fn normalize_time(song: &MidiSong) -> Result<TimedSong, MidiError> {
    let tpq = song.ticks_per_quarter;
    if tpq == 0 {
        return Err(MidiError::MalformedHeader("zero ticks per quarter note"));
    }

    let mut first_time_sig: Option<(u64, usize, u8, u8)> = None;
    let mut first_key: Option<(u64, usize, i8, bool)> = None;
    let mut tracks = Vec::new();

    for (track_index, track) in song.tracks.iter().enumerate() {
        let mut by_channel: BTreeMap<u8, Vec<TimedNote>> = BTreeMap::new();
        let mut open: HashMap<(u8, u8), VecDeque<(u64, u8)>> = HashMap::new();
        for event in &track.events {
            match event.kind {
                EventKind::NoteOn { channel, pitch, velocity } => {
                    open.entry((channel, pitch)).or_default().push_back((event.tick, velocity));
                }
                EventKind::NoteOff { channel, pitch } => {
                    if let Some((start, velocity)) =
                        open.get_mut(&(channel, pitch)).and_then(VecDeque::pop_front)
                    {
                        let onset = ticks_to_steps(start, tpq);
                        let duration = ticks_to_steps(event.tick - start, tpq).max(1);
                        by_channel.entry(channel).or_default().push(TimedNote {
                            onset: Rational64::new(onset, GRID_DIVISION),
                            duration: Rational64::new(duration, GRID_DIVISION),
                            pitch,
                            velocity,
                        });
                    }
                }
                EventKind::TimeSignature { numerator, denominator_pow } => {
                    let candidate = (event.tick, track_index, numerator, denominator_pow);
                    if first_time_sig.is_none_or(|f| (f.0, f.1) > (event.tick, track_index)) {
                        first_time_sig = Some(candidate);
                    }
                }
                EventKind::KeySignature { sharps, minor } => {
                    let candidate = (event.tick, track_index, sharps, minor);
                    if first_key.is_none_or(|f| (f.0, f.1) > (event.tick, track_index)) {
                        first_key = Some(candidate);
                    }
                }
                EventKind::Tempo(_) => {}
            }
        }
        for (channel, mut notes) in by_channel {
            notes.sort_by_key(|n| (n.onset, n.pitch, n.duration));
            tracks.push(TimedTrack { id: tracks.len(), channel, notes });
        }
    }

    if tracks.iter().all(|t| t.notes.is_empty()) {
        return Err(MidiError::EmptySong);
    }

    let bar_length = match first_time_sig {
        Some((_, _, num, pow)) if num > 0 && pow < 16 => {
            let den = 1i64 << pow;
            // Bars snap to the grid as well, never below one step.
            let steps = ((2 * i64::from(num) * GRID_DIVISION + den) / (2 * den)).max(1);
            Rational64::new(steps, GRID_DIVISION)
        }
        _ => Rational64::from_integer(1),
    };

    Ok(TimedSong {
        tracks,
        bar_length,
        key: first_key.map(|(_, _, sharps, minor)| Key::from_signature(sharps, minor)),
        source: song.source_path.clone(),
    })
}
