use rand::seq::index;
use rand::Rng;

use super::{
    GridSong, NoteEvent, NoteState, Segmentation, TokenizeError, TrackRef, Vocabulary, N_OCTAVES,
    STATE_SYMBOLS, VELOCITY_SYMBOLS,
};

/// One local-context training record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocalSample {
    /// On-state melody neighbours, IOI relative to the center onset, ascending.
    pub melodic: Vec<NoteEvent>,
    /// Accompaniment events sounding at the center onset, IOI 0, by octave.
    pub harmonic: Vec<NoteEvent>,
    pub candidate: NoteEvent,
    /// Feature matches in order (chroma, octave, velocity, state).
    pub labels: [bool; 4],
}

impl LocalSample {
    pub fn is_positive(&self) -> bool {
        self.labels == [true; 4]
    }

    pub fn label_mask(&self) -> u8 {
        self.labels
            .iter()
            .enumerate()
            .fold(0, |m, (j, &b)| m | (u8::from(b) << j))
    }

    pub fn labels_from_mask(mask: u8) -> [bool; 4] {
        [mask & 1 != 0, mask & 2 != 0, mask & 4 != 0, mask & 8 != 0]
    }
}

/// Positive samples centered on every on-state melody event inside a
/// surviving melodic phrase.
///
/// The melodic context is the `w_m` previous and `w_m` next on-state melody
/// events; the harmonic context is every sounding accompaniment cell at the
/// center step within `w_h` octaves of the center, taken from surviving
/// harmonic phrases. Centers without a full melodic window or without any
/// harmonic event are skipped.
pub fn extract_local_samples(
    song: &GridSong,
    seg: &Segmentation,
    vocab: &Vocabulary,
    w_m: usize,
    w_h: usize,
) -> Result<Vec<LocalSample>, TokenizeError> {
    let onsets: Vec<usize> = song
        .melody
        .iter()
        .enumerate()
        .filter(|(_, c)| c.state == NoteState::On)
        .map(|(s, _)| s)
        .collect();

    let mut samples = Vec::new();
    for (i, &center_step) in onsets.iter().enumerate() {
        if i < w_m || i + w_m >= onsets.len() || !seg.covers(TrackRef::Melody, center_step) {
            continue;
        }
        let center_cell = &song.melody[center_step];
        let candidate = NoteEvent::from_cell(center_cell, 0, vocab)?;

        let mut harmonic = Vec::new();
        for (&octave, cells) in &song.accompaniment {
            let cell = &cells[center_step];
            if cell.is_rest()
                || usize::from(octave.abs_diff(center_cell.octave)) > w_h
                || !seg.covers(TrackRef::Accompaniment(octave), center_step)
            {
                continue;
            }
            harmonic.push(NoteEvent::from_cell(cell, 0, vocab)?);
        }
        if harmonic.is_empty() {
            continue;
        }

        let melodic = onsets[i - w_m..=i + w_m]
            .iter()
            .filter(|&&s| s != center_step)
            .map(|&s| NoteEvent::from_cell(&song.melody[s], s as i32 - center_step as i32, vocab))
            .collect::<Result<Vec<_>, _>>()?;

        samples.push(LocalSample { melodic, harmonic, candidate, labels: [true; 4] });
    }
    Ok(samples)
}

/// The four corruption levels of a positive sample: level `k` replaces a
/// uniformly chosen set of `k` features of the candidate with different,
/// uniformly drawn values. IOI is never touched.
pub fn negative_samples<R: Rng + ?Sized>(
    positive: &LocalSample,
    vocab: &Vocabulary,
    rng: &mut R,
) -> [LocalSample; 4] {
    let sizes = [
        vocab.chroma_len(),
        usize::from(N_OCTAVES),
        VELOCITY_SYMBOLS.len(),
        STATE_SYMBOLS.len(),
    ];
    std::array::from_fn(|level| {
        let k = level + 1;
        let mut sample = positive.clone();
        sample.labels = [true; 4];
        for j in index::sample(rng, 4, k).iter() {
            let original = usize::from(positive.candidate.feature(j));
            let mut value = rng.random_range(0..sizes[j] - 1);
            if value >= original {
                value += 1;
            }
            sample.candidate.set_feature(j, value as u16);
            sample.labels[j] = false;
        }
        sample
    })
}

/// Phrase pairs for global fine-tuning, as indices into a [`Segmentation`].
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GlobalPairs {
    /// (melody phrase, following melody phrase).
    pub melodic: Vec<(usize, usize)>,
    /// (melody phrase, accompaniment phrase over the same span).
    pub harmonic: Vec<(usize, usize)>,
}

pub fn extract_global_pairs(seg: &Segmentation) -> GlobalPairs {
    let harmonic = seg
        .melody
        .iter()
        .enumerate()
        .flat_map(|(m, mp)| {
            seg.accompaniment
                .iter()
                .enumerate()
                .filter(move |(_, ap)| ap.same_span(mp))
                .map(move |(a, _)| (m, a))
        })
        .collect();
    GlobalPairs { melodic: seg.periods.clone(), harmonic }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::tokenize::{segment, Cell, ChromaSymbol, Phrase, SegmentConfig, REST_CHROMA};

    fn on(pc: u8, octave: u8) -> Cell {
        Cell { chroma: ChromaSymbol::Pitch(pc), octave, velocity: 5, state: NoteState::On }
    }

    fn hold(c: Cell) -> Cell {
        Cell { state: NoteState::Hold, ..c }
    }

    /// Fig.-7-like song: D, A, G quarter notes (8 steps each) at octave 4
    /// with a sustained D-F-B chord at octave 4 and a C at octave 6.
    fn fig7_song() -> (GridSong, Segmentation) {
        let n = 3 * 128;
        let mut melody = Vec::new();
        for pc in [2u8, 9, 7].iter().cycle().take(n / 8) {
            melody.push(on(*pc, 4));
            melody.extend(std::iter::repeat_n(hold(on(*pc, 4)), 7));
        }
        let dfb = Cell {
            chroma: "D-F-B".parse().unwrap(),
            octave: 4,
            velocity: 5,
            state: NoteState::Hold,
        };
        let mut chord = vec![dfb; n];
        chord[0].state = NoteState::On;
        let mut acc = BTreeMap::new();
        acc.insert(4, chord);
        acc.insert(6, vec![hold(on(0, 6)); n]);
        acc.insert(3, vec![hold(on(0, 3)); n]);
        let song = GridSong { name: "fig7".into(), steps_per_bar: 32, n_steps: n, melody, accompaniment: acc };
        let seg = segment(&song, &SegmentConfig::default()).unwrap();
        (song, seg)
    }

    fn vocab() -> Vocabulary {
        Vocabulary::with_chords(["D-F-B".parse().unwrap()])
    }

    #[test]
    fn fig7_contexts() {
        let (song, seg) = fig7_song();
        let v = vocab();
        let samples = extract_local_samples(&song, &seg, &v, 1, 0).unwrap();
        // Second on-event (A at step 8) is the first usable center.
        let s = &samples[0];
        assert_eq!(s.candidate, NoteEvent { ioi: 0, chroma: 9, octave: 4, velocity: 5, state: 0 });
        assert_eq!(
            s.melodic,
            vec![
                NoteEvent { ioi: -8, chroma: 2, octave: 4, velocity: 5, state: 0 },
                NoteEvent { ioi: 8, chroma: 7, octave: 4, velocity: 5, state: 0 },
            ]
        );
        let dfb = v.chroma_index("D-F-B".parse().unwrap()).unwrap();
        assert_eq!(s.harmonic, vec![NoteEvent { ioi: 0, chroma: dfb, octave: 4, velocity: 5, state: 1 }]);
        assert!(s.is_positive());
    }

    #[test]
    fn first_on_event_is_skipped() {
        let (song, seg) = fig7_song();
        let samples = extract_local_samples(&song, &seg, &vocab(), 1, 10).unwrap();
        let onsets = song.melody.iter().filter(|c| c.state == NoteState::On).count();
        assert_eq!(samples.len(), onsets - 2);
    }

    #[test]
    fn octave_window_limits_harmony() {
        let (song, seg) = fig7_song();
        let samples = extract_local_samples(&song, &seg, &vocab(), 1, 1).unwrap();
        let octaves: Vec<u8> = samples[0].harmonic.iter().map(|e| e.octave).collect();
        assert_eq!(octaves, vec![3, 4]);
    }

    #[test]
    fn melodic_context_is_sorted_on_events() {
        let (song, seg) = fig7_song();
        for s in extract_local_samples(&song, &seg, &vocab(), 2, 10).unwrap() {
            assert_eq!(s.melodic.len(), 4);
            assert!(s.melodic.iter().all(|e| e.state == 0 && e.ioi != 0));
            assert!(s.melodic.windows(2).all(|w| w[0].ioi < w[1].ioi));
            assert!(s.harmonic.iter().all(|e| e.ioi == 0));
        }
    }

    #[test]
    fn negative_levels() {
        let (song, seg) = fig7_song();
        let v = vocab();
        let pos = extract_local_samples(&song, &seg, &v, 1, 10).unwrap().remove(0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let negs = negative_samples(&pos, &v, &mut rng);
            for (level, neg) in negs.iter().enumerate() {
                let k = level + 1;
                assert_eq!(neg.labels.iter().filter(|b| **b).count(), 4 - k);
                assert_eq!(neg.melodic, pos.melodic);
                assert_eq!(neg.harmonic, pos.harmonic);
                assert_eq!(neg.candidate.ioi, 0);
                for j in 0..4 {
                    let same = neg.candidate.feature(j) == pos.candidate.feature(j);
                    assert_eq!(same, neg.labels[j]);
                }
            }
            assert_eq!(negs[3].labels, [false; 4]);
        }
    }

    #[test]
    fn single_replacement_of_chroma_labels() {
        let (song, seg) = fig7_song();
        let v = vocab();
        let pos = extract_local_samples(&song, &seg, &v, 1, 10).unwrap().remove(0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut seen = false;
        for _ in 0..100 {
            let neg = &negative_samples(&pos, &v, &mut rng)[0];
            if neg.candidate.chroma != pos.candidate.chroma {
                assert_eq!(neg.labels, [false, true, true, true]);
                assert_eq!(neg.label_mask(), 0b1110);
                seen = true;
            }
        }
        assert!(seen);
    }

    #[test]
    fn global_pairs() {
        let (song, seg) = fig7_song();
        let pairs = extract_global_pairs(&seg);
        assert_eq!(pairs.melodic, vec![(0, 1), (1, 2)]);
        // Three melody phrases, three accompaniment octaves each.
        assert_eq!(pairs.harmonic.len(), 9);
        let _ = song;

        let mut seg2 = seg.clone();
        seg2.accompaniment.retain(|p: &Phrase| p.start_step != 0);
        assert_eq!(extract_global_pairs(&seg2).harmonic.len(), 6);
        assert!(extract_global_pairs(&seg2).harmonic.iter().all(|&(m, _)| m != 0));
    }

    #[test]
    fn rest_candidate_index() {
        assert_eq!(NoteEvent::from_cell(&Cell::REST, 0, &vocab()).unwrap().chroma, REST_CHROMA);
    }
}
