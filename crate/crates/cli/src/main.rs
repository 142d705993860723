use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use pirhdy::context::{Fusion, GlobalMode};
use pirhdy::eval::Task;
use pirhdy::token_model::FeatureSet;
use pirhdy_cli::commands::{self, EvalOptions};
use pirhdy_cli::{Outcome, PipelineConfig};

/// Note-event embeddings for symbolic music.
#[derive(Debug, Parser)]
#[command(name = "pirhdy", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

/// Overrides applied on top of the config file.
#[derive(Debug, Args)]
struct Common {
    /// Pipeline config (JSON); unknown keys are rejected.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for the command's random draws.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Melodic context half-width in notes.
    #[arg(long = "w-m", global = true)]
    w_m: Option<usize>,
    /// Harmonic context width in octaves.
    #[arg(long = "w-h", global = true)]
    w_h: Option<usize>,
    #[arg(long, global = true, value_parser = parse_fusion)]
    fusion: Option<Fusion>,
    /// Comma-separated token features, e.g. chroma,octave,ioi,state,velocity.
    #[arg(long, global = true, value_parser = parse_features)]
    features: Option<FeatureSet>,
}

fn parse_fusion(s: &str) -> Result<Fusion, String> {
    s.parse()
}

fn parse_features(s: &str) -> Result<FeatureSet, String> {
    s.parse()
}

fn parse_mode(s: &str) -> Result<GlobalMode, String> {
    s.parse()
}

fn parse_task(s: &str) -> Result<Task, String> {
    s.parse()
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// MIDI files to grid dumps plus a manifest.
    Preprocess {
        midi_dir: Option<PathBuf>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Vocabulary JSON from grid dumps.
    Vocab {
        grids: Option<PathBuf>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Local samples (.prc) and global phrase pairs (.gpc).
    Corpus {
        grids: Option<PathBuf>,
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// Output prefix; `.prc` and `.gpc` are appended.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Pretrain on local contexts.
    Train {
        corpus: Option<PathBuf>,
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Fine-tune a pretrained checkpoint on global phrase pairs.
    Finetune {
        checkpoint: PathBuf,
        pairs: PathBuf,
        #[arg(long, value_parser = parse_mode)]
        mode: GlobalMode,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Ranking evaluation; writes a JSON report.
    Eval {
        checkpoint: PathBuf,
        corpus: PathBuf,
        #[arg(long, value_parser = parse_task)]
        task: Option<Task>,
        /// Scoring mode; defaults to the checkpoint's fine-tuning stage.
        #[arg(long, value_parser = parse_mode)]
        mode: Option<GlobalMode>,
        /// Score with uniform random numbers (baseline).
        #[arg(long)]
        random: bool,
        /// Rank queries from every song instead of the held-out split.
        #[arg(long)]
        all_songs: bool,
        /// Reuse instances from a .rnk file.
        #[arg(long)]
        instances: Option<PathBuf>,
        /// Write the instances to a .rnk file.
        #[arg(long)]
        save_instances: Option<PathBuf>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Token embeddings (.vec), or song vectors with --songs.
    Export {
        checkpoint: PathBuf,
        /// Global corpus whose songs are embedded.
        #[arg(long)]
        songs: Option<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
    },
}

fn config(common: &Common) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::load_or_default(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
        cfg.finetune.seed = seed;
        cfg.corpus.seed = seed;
        cfg.eval.seed = seed;
    }
    if let Some(w) = common.w_m {
        cfg.model.w_m = w;
    }
    if let Some(w) = common.w_h {
        cfg.model.w_h = w;
    }
    if let Some(f) = common.fusion {
        cfg.model.fusion = f;
    }
    if let Some(f) = common.features {
        cfg.model.features = f;
    }
    cfg.validate().context("invalid settings")?;
    Ok(cfg)
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("PIRHDY_THREADS") {
        let n: usize = v.parse().with_context(|| format!("PIRHDY_THREADS={v:?} is not a count"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the thread pool")?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<Outcome> {
    init_threads()?;
    let cfg = config(&cli.common)?;
    let p = &cfg.paths;
    let vocab_path = |v: Option<PathBuf>| v.unwrap_or_else(|| p.vocab_out.clone());
    match cli.cmd {
        Cmd::Preprocess { midi_dir, out } => {
            let midi_dir = midi_dir.unwrap_or_else(|| p.midi_dir.clone());
            let out = out.unwrap_or_else(|| p.preprocess_out.clone());
            let (manifest, outcome) = commands::preprocess(&midi_dir, &out, &cfg.segment)?;
            println!("{} ok, {} rejected, {} failed", manifest.ok, manifest.song_rejected, manifest.failed);
            return Ok(outcome);
        }
        Cmd::Vocab { grids, out } => {
            let v = commands::vocab(&grids.unwrap_or_else(|| p.preprocess_out.clone()), &vocab_path(out))?;
            println!("chroma {} (13 + {} chords), velocity {}, state {}", v.chroma_len(), v.chord_count(), v.velocity_len(), v.state_len());
        }
        Cmd::Corpus { grids, vocab, out } => {
            let s = commands::corpus(
                &grids.unwrap_or_else(|| p.preprocess_out.clone()),
                &vocab_path(vocab),
                cfg.model.w_m,
                cfg.model.w_h,
                &cfg.segment,
                &cfg.corpus,
                &out.unwrap_or_else(|| p.corpus_out.clone()),
            )?;
            println!(
                "{} local samples; {} songs, {} phrases, {} melodic and {} harmonic pairs",
                s.samples, s.songs, s.phrases, s.melodic_pairs, s.harmonic_pairs
            );
        }
        Cmd::Train { corpus, vocab, out } => {
            let corpus = corpus.unwrap_or_else(|| p.corpus_out.with_extension("prc"));
            let out = out.unwrap_or_else(|| p.model_out.clone());
            let (_, log) = commands::train(&corpus, &vocab_path(vocab), &cfg, &out)?;
            if let Some(last) = log.epochs.last() {
                println!("epoch {}: train BCE {:.6}", last.epoch, last.train_bce);
            }
        }
        Cmd::Finetune { checkpoint, pairs, mode, out } => {
            let (_, log) = commands::finetune(&checkpoint, &pairs, mode, &cfg, &out)?;
            if let Some(last) = log.epochs.last() {
                println!("epoch {}: train BCE {:.6}", last.epoch, last.train_bce);
            }
        }
        Cmd::Eval { checkpoint, corpus, task, mode, random, all_songs, instances, save_instances, out } => {
            let mut cfg = cfg.clone();
            if all_songs {
                cfg.eval.heldout_only = false;
            }
            let opts = EvalOptions { task, mode, random, instances_in: instances, instances_out: save_instances };
            let out = out.unwrap_or_else(|| cfg.paths.report_out.clone());
            let r = commands::evaluate(&checkpoint, &corpus, &cfg, &opts, &out)?;
            println!("MAP {:.4}, hits@1/5/10/25 {:?} over {} instances", r.map, r.hits.values().collect::<Vec<_>>(), r.n_instances);
        }
        Cmd::Export { checkpoint, songs, out } => commands::export(&checkpoint, songs.as_deref(), &out)?,
    }
    Ok(Outcome::Success)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::Partial) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
