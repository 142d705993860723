use super::{Key, KeySource, MidiError, Mode, TimedSong};

/// Krumhansl–Kessler probe-tone ratings, tonic first.
pub const KEY_PROFILE_MAJOR: [f64; 12] =
    [6.35, 2.23, 3.48, 2.33, 4.38, 4.09, 2.52, 5.19, 2.39, 3.66, 2.29, 2.88];
pub const KEY_PROFILE_MINOR: [f64; 12] =
    [6.33, 2.68, 3.52, 5.38, 2.60, 3.53, 2.54, 4.75, 3.98, 2.69, 3.34, 3.17];

fn pearson(x: &[f64; 12], y: &[f64; 12]) -> f64 {
    let mx = x.iter().sum::<f64>() / 12.0;
    let my = y.iter().sum::<f64>() / 12.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..12 {
        let (dx, dy) = (x[i] - mx, y[i] - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

/// Key of the song: the key-signature meta if present, otherwise the
/// Krumhansl–Schmuckler estimate over a duration-weighted pitch-class
/// histogram of all pitched notes.
///
/// Among the 24 candidate keys, ties resolve to the lower tonic, then major.
pub fn detect_key(song: &TimedSong) -> Result<Key, MidiError> {
    if song.note_count() == 0 {
        return Err(MidiError::EmptySong);
    }
    if let Some(key) = song.key.filter(|k| k.source == KeySource::Meta) {
        return Ok(key);
    }
    let mut histogram = [0.0f64; 12];
    let mut any = false;
    for track in song.tracks.iter().filter(|t| !t.is_drum()) {
        for note in &track.notes {
            histogram[usize::from(note.pitch % 12)] +=
                *note.duration.numer() as f64 / *note.duration.denom() as f64;
            any = true;
        }
    }
    if !any {
        return Err(MidiError::EmptySong);
    }

    let mut best = (f64::NEG_INFINITY, 0u8, Mode::Major);
    for tonic in 0..12u8 {
        for (mode, profile) in [(Mode::Major, &KEY_PROFILE_MAJOR), (Mode::Minor, &KEY_PROFILE_MINOR)] {
            let mut rotated = [0.0; 12];
            for (pc, slot) in rotated.iter_mut().enumerate() {
                *slot = profile[(pc + 12 - usize::from(tonic)) % 12];
            }
            let r = pearson(&histogram, &rotated);
            if r > best.0 {
                best = (r, tonic, mode);
            }
        }
    }
    Ok(Key { tonic: best.1, mode: best.2, source: KeySource::Estimated })
}

/// Signed semitone shift in `[-6, 5]` moving the tonic to C (major) or A (minor).
pub fn transposition_offset(key: &Key) -> i32 {
    let target = match key.mode {
        Mode::Major => 0,
        Mode::Minor => 9,
    };
    (target - i32::from(key.tonic) + 6).rem_euclid(12) - 6
}

/// Shifts every pitch so the song sits in C major or A minor. Pitches are
/// clamped to the MIDI range.
pub fn transpose_to_c(song: &TimedSong, key: &Key) -> TimedSong {
    let offset = transposition_offset(key);
    let mut out = song.clone();
    for track in out.tracks.iter_mut().filter(|t| !t.is_drum()) {
        for note in &mut track.notes {
            note.pitch = (i32::from(note.pitch) + offset).clamp(0, 127) as u8;
        }
    }
    out.key = Some(Key {
        tonic: (i32::from(key.tonic) + offset).rem_euclid(12) as u8,
        mode: key.mode,
        source: key.source,
    });
    out
}
