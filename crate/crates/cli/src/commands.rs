//! One function per subcommand. Each returns whether the run was complete
//! or produced a partial result worth a non-zero exit.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use log::{info, warn};
use pirhdy::context::{finetune_global, train_local, EpochStats, GlobalMode, Stage, TrainLog};
use pirhdy::eval::{self, EvalReport, ModelScorer, RandomScorer, RankingInstance, Scorer, Task};
use pirhdy::midi::{detect_key, normalize_time, parse_smf, transpose_to_c, ParseWarning};
use pirhdy::tokenize::{
    assign_splits, build_vocabulary, extract_global_pairs, extract_local_samples, gridify, negative_samples,
    phrase_events, read_gpc, read_prc, segment, sha256_hex, write_gpc, write_prc, GlobalCorpus, GridSong,
    LocalSample, PhraseKind, PhraseRecord, SegmentConfig, SongEntry, Split, TokenizeError, TrackRef,
    Vocabulary,
};
use pirhdy::Model;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{CorpusConfig, PipelineConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// Some inputs failed but the outputs were written.
    Partial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FileStatus {
    Ok,
    SongRejected,
    ParseError,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub file: String,
    pub status: FileStatus,
    pub detail: Option<String>,
    pub warnings: Vec<String>,
    /// Grid dump relative to the output directory.
    pub grid: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub ok: usize,
    pub song_rejected: usize,
    pub failed: usize,
    pub files: Vec<ManifestEntry>,
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    create_parent(path)?;
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

/// Files in `dir` with one of `exts`, sorted by name.
fn list_files(dir: &Path, exts: &[&str]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("reading directory {}", dir.display()))? {
        let path = entry?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if path.is_file() && ext.is_some_and(|e| exts.contains(&e.as_str())) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

enum Processed {
    Ok(GridSong, Vec<String>),
    Failed(FileStatus, String, Vec<String>),
}

fn process_midi(path: &Path, seg: &SegmentConfig) -> Processed {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) => return Processed::Failed(FileStatus::Error, e.to_string(), Vec::new()),
    };
    let mut song = match parse_smf(&bytes) {
        Ok(s) => s,
        Err(e) => return Processed::Failed(FileStatus::ParseError, e.to_string(), Vec::new()),
    };
    song.source_path = stem(path);
    let warnings: Vec<String> = song
        .warnings
        .iter()
        .map(|w| match w {
            ParseWarning::DanglingNoteOn { track, channel, pitch } => {
                format!("note {pitch} on track {track} channel {channel} never ended")
            }
        })
        .collect();
    let result = (|| -> Result<GridSong, TokenizeError> {
        let timed = normalize_time(&song)?;
        let key = detect_key(&timed)?;
        let grid = gridify(&transpose_to_c(&timed, &key))?;
        segment(&grid, seg)?;
        Ok(grid)
    })();
    match result {
        Ok(grid) => Processed::Ok(grid, warnings),
        Err(e @ TokenizeError::SongRejected { .. }) => Processed::Failed(FileStatus::SongRejected, e.to_string(), warnings),
        Err(e) => Processed::Failed(FileStatus::Error, e.to_string(), warnings),
    }
}

/// Parses, normalizes and grids every MIDI file of `midi_dir`. Songs that
/// survive segmentation are dumped to `out/grids/<stem>.json`; every file
/// gets a manifest entry.
pub fn preprocess(midi_dir: &Path, out: &Path, seg: &SegmentConfig) -> Result<(Manifest, Outcome)> {
    let files = list_files(midi_dir, &["mid", "midi"])?;
    if files.is_empty() {
        bail!("no .mid files in {}", midi_dir.display());
    }
    let grids_dir = out.join("grids");
    if grids_dir.is_dir() {
        // Drop dumps from earlier runs so the directory mirrors this manifest.
        for old in list_files(&grids_dir, &["json"])? {
            fs::remove_file(&old).with_context(|| format!("removing {}", old.display()))?;
        }
    }
    fs::create_dir_all(&grids_dir).with_context(|| format!("creating {}", grids_dir.display()))?;

    let processed: Vec<Processed> = files.par_iter().map(|f| process_midi(f, seg)).collect();
    let mut manifest = Manifest { ok: 0, song_rejected: 0, failed: 0, files: Vec::new() };
    for (path, p) in files.iter().zip(processed) {
        let entry = match p {
            Processed::Ok(grid, warnings) => {
                let rel = format!("grids/{}.json", stem(path));
                write_json(&out.join(&rel), &grid)?;
                manifest.ok += 1;
                ManifestEntry { file: file_name(path), status: FileStatus::Ok, detail: None, warnings, grid: Some(rel) }
            }
            Processed::Failed(status, detail, warnings) => {
                if status == FileStatus::SongRejected {
                    manifest.song_rejected += 1;
                } else {
                    manifest.failed += 1;
                    warn!("{}: {detail}", path.display());
                }
                ManifestEntry { file: file_name(path), status, detail: Some(detail), warnings, grid: None }
            }
        };
        manifest.files.push(entry);
    }
    write_json(&out.join("manifest.json"), &manifest)?;
    info!("preprocess: {} ok, {} rejected, {} failed", manifest.ok, manifest.song_rejected, manifest.failed);
    let outcome = if manifest.failed == 0 { Outcome::Success } else { Outcome::Partial };
    Ok((manifest, outcome))
}

/// Grid dumps from a preprocess output directory or a bare grids directory.
pub fn load_grids(dir: &Path) -> Result<Vec<GridSong>> {
    let dir = if dir.join("grids").is_dir() { dir.join("grids") } else { dir.to_path_buf() };
    let files = list_files(&dir, &["json"])?;
    if files.is_empty() {
        bail!("no grid dumps in {}", dir.display());
    }
    files
        .iter()
        .map(|f| {
            let text = fs::read_to_string(f).with_context(|| format!("reading {}", f.display()))?;
            let grid: GridSong = serde_json::from_str(&text).with_context(|| format!("parsing {}", f.display()))?;
            grid.validate().with_context(|| format!("grid {}", f.display()))?;
            Ok(grid)
        })
        .collect()
}

pub fn load_vocab(path: &Path) -> Result<Vocabulary> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Vocabulary::from_json(&text).with_context(|| format!("parsing vocabulary {}", path.display()))
}

pub fn vocab(grids: &Path, out: &Path) -> Result<Vocabulary> {
    let songs = load_grids(grids)?;
    let vocab = build_vocabulary(&songs)?;
    write_file(out, vocab.to_json().as_bytes())?;
    info!("vocabulary: {} chroma symbols ({} chords)", vocab.chroma_len(), vocab.chord_count());
    Ok(vocab)
}

/// Local samples of one song: every positive followed by its four
/// negatives, drawn from a stream owned by the song.
fn song_samples(song: &GridSong, idx: usize, vocab: &Vocabulary, seg: &SegmentConfig, w_m: usize, w_h: usize, seed: u64)
    -> Result<Option<Vec<LocalSample>>> {
    let s = match segment(song, seg) {
        Ok(s) => s,
        Err(TokenizeError::SongRejected { .. }) => return Ok(None),
        Err(e) => return Err(e).with_context(|| format!("segmenting {}", song.name)),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(idx as u64);
    let mut out = Vec::new();
    for pos in extract_local_samples(song, &s, vocab, w_m, w_h)? {
        let negs = negative_samples(&pos, vocab, &mut rng);
        out.push(pos);
        out.extend(negs);
    }
    Ok(Some(out))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSummary {
    pub samples: usize,
    pub songs: usize,
    pub phrases: usize,
    pub melodic_pairs: usize,
    pub harmonic_pairs: usize,
}

/// Builds the local `.prc` and global `.gpc` files at `<prefix>.prc` and
/// `<prefix>.gpc`.
pub fn corpus(
    grids: &Path,
    vocab_path: &Path,
    w_m: usize,
    w_h: usize,
    seg: &SegmentConfig,
    cfg: &CorpusConfig,
    prefix: &Path,
) -> Result<CorpusSummary> {
    let songs = load_grids(grids)?;
    let vocab = load_vocab(vocab_path)?;
    let per_song: Vec<Option<Vec<LocalSample>>> = songs
        .par_iter()
        .enumerate()
        .map(|(i, s)| song_samples(s, i, &vocab, seg, w_m, w_h, cfg.seed))
        .collect::<Result<_>>()?;

    let kept: Vec<usize> = (0..songs.len()).filter(|&i| per_song[i].is_some()).collect();
    for i in (0..songs.len()).filter(|i| per_song[*i].is_none()) {
        warn!("{}: too few periods, skipped", songs[i].name);
    }
    let samples: Vec<LocalSample> = per_song.into_iter().flatten().flatten().collect();
    let splits = assign_splits(kept.len(), cfg.heldout_fraction, cfg.seed);

    let mut global = GlobalCorpus { vocab_hash: vocab.hash(), ..Default::default() };
    for (song_no, (&i, split)) in kept.iter().zip(splits).enumerate() {
        let song = &songs[i];
        let seg_out = segment(song, seg)?;
        global.songs.push(SongEntry { name: song.name.clone(), split });
        let melody_base = global.phrases.len() as u32;
        for p in &seg_out.melody {
            global.phrases.push(PhraseRecord {
                song: song_no as u32,
                kind: PhraseKind::Melody,
                start_step: p.start_step as u32,
                events: phrase_events(song, p, &vocab)?,
            });
        }
        let acc_base = global.phrases.len() as u32;
        for p in &seg_out.accompaniment {
            let TrackRef::Accompaniment(octave) = p.track else { unreachable!("accompaniment phrase on melody track") };
            global.phrases.push(PhraseRecord {
                song: song_no as u32,
                kind: PhraseKind::Accompaniment(octave),
                start_step: p.start_step as u32,
                events: phrase_events(song, p, &vocab)?,
            });
        }
        let pairs = extract_global_pairs(&seg_out);
        global.melodic_pairs.extend(pairs.melodic.iter().map(|&(a, b)| (melody_base + a as u32, melody_base + b as u32)));
        global.harmonic_pairs.extend(pairs.harmonic.iter().map(|&(m, a)| (melody_base + m as u32, acc_base + a as u32)));
    }

    let mut prc = Vec::new();
    write_prc(&mut prc, vocab.hash(), &samples)?;
    write_file(&prefix.with_extension("prc"), &prc)?;
    let mut gpc = Vec::new();
    write_gpc(&mut gpc, &global)?;
    write_file(&prefix.with_extension("gpc"), &gpc)?;
    let summary = CorpusSummary {
        samples: samples.len(),
        songs: global.songs.len(),
        phrases: global.phrases.len(),
        melodic_pairs: global.melodic_pairs.len(),
        harmonic_pairs: global.harmonic_pairs.len(),
    };
    info!("corpus: {summary:?}");
    Ok(summary)
}

fn log_path(model_out: &Path) -> PathBuf {
    model_out.with_extension("csv")
}

fn log_epoch(what: &'static str) -> impl FnMut(&EpochStats) {
    move |e| match e.heldout_bce {
        Some(h) => info!("{what} epoch {}: train {:.6} held-out {:.6}", e.epoch, e.train_bce, h),
        None => info!("{what} epoch {}: train {:.6}", e.epoch, e.train_bce),
    }
}

pub fn read_local_corpus(path: &Path) -> Result<(Vec<u8>, u32, Vec<LocalSample>)> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let (hash, samples) = read_prc(&mut bytes.as_slice()).with_context(|| format!("parsing {}", path.display()))?;
    Ok((bytes, hash, samples))
}

pub fn read_global_corpus(path: &Path) -> Result<GlobalCorpus> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    read_gpc(&mut bytes.as_slice()).with_context(|| format!("parsing {}", path.display()))
}

/// Pretrains a fresh model on a `.prc` corpus; writes the checkpoint, its
/// sidecar and a CSV loss log next to it.
pub fn train(corpus_path: &Path, vocab_path: &Path, cfg: &PipelineConfig, out: &Path) -> Result<(Model, TrainLog)> {
    let vocab = load_vocab(vocab_path)?;
    let (bytes, hash, samples) = read_local_corpus(corpus_path)?;
    if hash != vocab.hash() {
        bail!("{} was built with a different vocabulary than {}", corpus_path.display(), vocab_path.display());
    }
    let mut model = Model::new(vocab, &cfg.model, cfg.train.seed)?;
    let log = train_local(&mut model, &samples, &cfg.train, log_epoch("train"))
        .with_context(|| format!("training on {}", corpus_path.display()))?;
    model.meta.corpus_hash = sha256_hex(&bytes);
    create_parent(out)?;
    model.save(out).with_context(|| format!("writing {}", out.display()))?;
    write_file(&log_path(out), log.to_csv().as_bytes())?;
    Ok((model, log))
}

pub fn load_model(path: &Path) -> Result<Model> {
    Model::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

pub fn finetune(checkpoint: &Path, pairs: &Path, mode: GlobalMode, cfg: &PipelineConfig, out: &Path) -> Result<(Model, TrainLog)> {
    let mut model = load_model(checkpoint)?;
    let corpus = read_global_corpus(pairs)?;
    let log = finetune_global(&mut model, &corpus, mode, &cfg.finetune, log_epoch("finetune"))
        .with_context(|| format!("fine-tuning {} on {}", checkpoint.display(), pairs.display()))?;
    create_parent(out)?;
    model.save(out).with_context(|| format!("writing {}", out.display()))?;
    write_file(&log_path(out), log.to_csv().as_bytes())?;
    Ok((model, log))
}

/// Scoring mode: explicit, else the checkpoint's fine-tuning stage, else the
/// task's natural mode.
pub fn scoring_mode(model: &Model, task: Task, explicit: Option<GlobalMode>) -> GlobalMode {
    explicit.unwrap_or(match model.meta.stage {
        Stage::GM => GlobalMode::GM,
        Stage::GH => GlobalMode::GH,
        Stage::Pretrain => task.default_mode(),
    })
}

#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    pub task: Option<Task>,
    pub mode: Option<GlobalMode>,
    /// Rank with i.i.d. random scores instead of the model.
    pub random: bool,
    /// Read instances from this `.rnk` file instead of building them.
    pub instances_in: Option<PathBuf>,
    /// Also write the instances used.
    pub instances_out: Option<PathBuf>,
}

pub fn evaluate(checkpoint: &Path, corpus_path: &Path, cfg: &PipelineConfig, opts: &EvalOptions, out: &Path) -> Result<EvalReport> {
    let model = load_model(checkpoint)?;
    let corpus = read_global_corpus(corpus_path)?;
    if corpus.vocab_hash != model.vocab.hash() {
        bail!("{} and {} use different vocabularies", corpus_path.display(), checkpoint.display());
    }
    let digest = corpus.content_digest();
    let (task, instances): (Task, Vec<RankingInstance>) = match &opts.instances_in {
        Some(path) => {
            let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
            let (task, hash, inst) = eval::read_rnk(&mut bytes.as_slice()).with_context(|| format!("parsing {}", path.display()))?;
            if hash != digest {
                bail!("{} was built from a different corpus", path.display());
            }
            if opts.task.is_some_and(|t| t != task) {
                bail!("{} holds {} instances", path.display(), task.as_str());
            }
            (task, inst)
        }
        None => {
            let task = opts.task.unwrap_or(Task::MelodyCompletion);
            let split = cfg.eval.heldout_only.then_some(Split::Heldout);
            (task, eval::build_set(&corpus, task, split, cfg.eval.seed)?)
        }
    };
    if let Some(path) = &opts.instances_out {
        let mut buf = Vec::new();
        eval::write_rnk(&mut buf, task, &digest, &instances)?;
        write_file(path, &buf)?;
    }
    let mode = scoring_mode(&model, task, opts.mode);
    let scorer: Box<dyn Scorer> = if opts.random {
        Box::new(RandomScorer { seed: cfg.eval.seed })
    } else {
        Box::new(ModelScorer::new(&model.net, &model.store, &corpus, mode, &instances)?)
    };
    let metrics = eval::rank_and_score(&instances, scorer.as_ref())?;
    let report = EvalReport {
        task,
        mode,
        map: metrics.map,
        hits: metrics.hits,
        n_instances: metrics.n_instances,
        seed: cfg.eval.seed,
        corpus_hash: hex(&digest),
    };
    write_json(out, &report)?;
    info!("{}: MAP {:.4} over {} instances", task.as_str(), report.map, report.n_instances);
    Ok(report)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Token embeddings, or song vectors when `songs` names a `.gpc` corpus.
pub fn export(checkpoint: &Path, songs: Option<&Path>, out: &Path) -> Result<()> {
    let model = load_model(checkpoint)?;
    let mode = model.meta.stage.as_str();
    create_parent(out)?;
    let file = fs::File::create(out).with_context(|| format!("creating {}", out.display()))?;
    let mut w = BufWriter::new(file);
    match songs {
        None => model.net.token.write_vec(&model.store, &model.vocab, mode, &mut w)?,
        Some(path) => {
            let corpus = read_global_corpus(path)?;
            if corpus.vocab_hash != model.vocab.hash() {
                return Err(anyhow!("{} and {} use different vocabularies", path.display(), checkpoint.display()));
            }
            eval::write_song_vectors(&model.net, &model.store, &corpus, mode, &mut w)?;
        }
    }
    w.flush().with_context(|| format!("writing {}", out.display()))
}
