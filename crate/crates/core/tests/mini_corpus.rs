//! Library pipeline over the bundled mini-corpus, without the CLI.

use std::fs;
use std::path::Path;

use pirhdy::context::{train_local, ContextModel, ModelConfig, TrainConfig};
use pirhdy::midi::{detect_key, normalize_time, parse_smf, transpose_to_c, KeySource, Mode};
use pirhdy::tokenize::{
    build_vocabulary, extract_local_samples, gridify, negative_samples, segment, GridSong, LocalSample, SegmentConfig,
    TokenizeError,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn grids() -> Vec<(String, Result<GridSong, TokenizeError>)> {
    grids_and_sources().into_iter().map(|(n, g, _)| (n, g)).collect()
}

fn grids_and_sources() -> Vec<(String, Result<GridSong, TokenizeError>, KeySource)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mini-corpus");
    let mut files: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    files
        .iter()
        .map(|f| {
            let song = parse_smf(&fs::read(f).unwrap()).unwrap();
            let timed = normalize_time(&song).unwrap();
            let key = detect_key(&timed).unwrap();
            let normalized = transpose_to_c(&timed, &key);
            let k = normalized.key.unwrap();
            assert_eq!(k.tonic, if k.mode == Mode::Major { 0 } else { 9 });
            let grid = gridify(&normalized).and_then(|g| segment(&g, &SegmentConfig::default()).map(|_| g));
            (f.file_name().unwrap().to_string_lossy().into_owned(), grid, key.source)
        })
        .collect()
}

fn samples(songs: &[GridSong]) -> Vec<LocalSample> {
    let vocab = build_vocabulary(songs).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut out = Vec::new();
    for song in songs {
        let seg = segment(song, &SegmentConfig::default()).unwrap();
        for pos in extract_local_samples(song, &seg, &vocab, 2, 4).unwrap() {
            let negs = negative_samples(&pos, &vocab, &mut rng);
            out.push(pos);
            out.extend(negs);
        }
    }
    out
}

#[test]
fn two_songs_rely_on_key_estimation() {
    let estimated = grids_and_sources().iter().filter(|(_, _, s)| *s == KeySource::Estimated).count();
    assert_eq!(estimated, 2);
}

#[test]
fn only_the_fragment_is_rejected() {
    let all = grids();
    assert_eq!(all.len(), 20);
    for (name, g) in &all {
        match g {
            Ok(_) => assert_ne!(name, "s20_fragment.mid"),
            Err(TokenizeError::SongRejected { periods, required }) => {
                assert_eq!(name, "s20_fragment.mid");
                assert!(periods < required);
            }
            Err(e) => panic!("{name}: {e}"),
        }
    }
}

#[test]
fn scalar_type_only_changes_roundoff() {
    let songs: Vec<GridSong> = grids().into_iter().filter_map(|(_, g)| g.ok()).collect();
    let vocab = build_vocabulary(&songs).unwrap();
    let data: Vec<LocalSample> = samples(&songs).into_iter().take(200).collect();
    let model_cfg = ModelConfig { d: 8, ..Default::default() };
    let cfg = TrainConfig { epochs: 3, batch_size: 8, lr: 3e-3, ..Default::default() };

    let mut m64 = ContextModel::<f64>::new(vocab.clone(), &model_cfg, 3).unwrap();
    let mut m32 = ContextModel::<f32>::new(vocab, &model_cfg, 3).unwrap();
    let l64 = train_local(&mut m64, &data, &cfg, |_| {}).unwrap();
    let l32 = train_local(&mut m32, &data, &cfg, |_| {}).unwrap();

    assert!(l64.epochs.last().unwrap().train_bce < l64.epochs[0].train_bce);
    for (a, b) in l64.epochs.iter().zip(&l32.epochs) {
        assert!((a.train_bce - b.train_bce).abs() < 1e-3, "epoch {}: {} vs {}", a.epoch, a.train_bce, b.train_bce);
    }
}
