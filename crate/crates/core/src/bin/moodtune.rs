use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use moodtune::classifier::{
    fit_lyric_classifier, label_songs, train_mood_classifier, InputPipeline, LyricOptions,
    TrainedClassifier,
};
use moodtune::corpus::{read_jsonl, write_jsonl};
use moodtune::emotion::{EmotionDistribution, EmotionLabel, DEFAULT_MOOD_THRESHOLD};
use moodtune::gateway::{serve, Service, ServiceConfig};
use moodtune::image::{load_image_dir, save_image_dir};
use moodtune::ledger::{verify_serialized, FileStore, Ledger, LedgerRecord, RecordKind, SystemClock};
use moodtune::nn::TrainConfig;
use moodtune::recommender::{Catalog, InteractionStore, SongRecord, Weights, DEFAULT_BLEND};
use moodtune::synthetic::{glyph_dataset, keyword_corpus};

#[derive(Parser)]
#[command(name = "moodtune", version, about = "Emotion-aware music recommendation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Modality {
    Lyrics,
    Image,
}

#[derive(Subcommand)]
enum Command {
    /// Train a classifier and save a checkpoint.
    Train {
        /// JSON-lines song corpus, or a directory of PGM images with --modality image.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        epochs: usize,
        #[arg(long, value_enum, default_value_t = Modality::Lyrics)]
        modality: Modality,
    },
    /// Print accuracy, per-class precision/recall/F1 and the confusion matrix.
    Evaluate {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
    },
    /// Load a catalog and write song_metadata and emotion_tag records.
    Ingest {
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        chain: PathBuf,
        /// Lyric classifier for predicted tags.
        #[arg(long)]
        ckpt: Option<PathBuf>,
    },
    /// Rank the catalog for one user and mood without starting a server.
    Recommend {
        #[arg(long)]
        user: String,
        #[arg(long)]
        emotion: EmotionLabel,
        #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u16).range(1..=100))]
        k: u16,
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        interactions: Option<PathBuf>,
        #[arg(long, default_value_t = 0.6)]
        alpha: f64,
        #[arg(long, default_value_t = 0.3)]
        beta: f64,
        #[arg(long, default_value_t = 0.1)]
        gamma: f64,
        #[arg(long, default_value_t = DEFAULT_BLEND)]
        blend: f64,
    },
    /// Start the HTTP service.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Ledger maintenance.
    Ledger {
        #[command(subcommand)]
        action: LedgerAction,
    },
    /// Write a seeded synthetic dataset.
    Synth {
        #[command(subcommand)]
        kind: SynthKind,
    },
}

#[derive(Subcommand)]
enum LedgerAction {
    /// Exit 0 when the chain file verifies, 1 otherwise.
    Verify {
        #[arg(long)]
        chain: PathBuf,
    },
}

#[derive(Subcommand)]
enum SynthKind {
    /// Keyword lyric corpus as JSON lines.
    Lyrics {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 40)]
        per_class: usize,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
    },
    /// Glyph images as <label>_<n>.pgm.
    Images {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 40)]
        per_class: usize,
        #[arg(long, default_value_t = 0.1)]
        noise: f32,
        #[arg(long, default_value_t = 5)]
        seed: u64,
    },
}

/// Argument values clap cannot check on its own; exits with status 2.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(e: impl std::fmt::Display) -> anyhow::Error {
    UsageError(e.to_string()).into()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<UsageError>() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Train {
            corpus,
            out,
            seed,
            epochs,
            modality,
        } => {
            let cfg = TrainConfig {
                seed,
                epochs,
                ..TrainConfig::default()
            };
            cfg.validate().map_err(usage)?;
            let training = match modality {
                Modality::Lyrics => {
                    let songs = read_jsonl(&corpus)?;
                    fit_lyric_classifier(&songs, &LyricOptions::default(), &cfg)?
                }
                Modality::Image => {
                    let images = load_image_dir(&corpus)?;
                    train_mood_classifier(&images, DEFAULT_MOOD_THRESHOLD, &cfg)?
                }
            };
            for (epoch, loss) in training.loss_history.iter().enumerate() {
                println!("epoch {:>3}  loss {loss:.6}", epoch + 1);
            }
            training.classifier.save(&out)?;
            println!("saved {}", out.display());
        }
        Command::Evaluate { corpus, ckpt } => {
            let classifier = TrainedClassifier::load(&ckpt)?;
            let metrics = match classifier.pipeline() {
                InputPipeline::Lyrics(p) => {
                    let songs = read_jsonl(&corpus)?;
                    classifier.evaluate(&label_songs(&songs, p)?)?
                }
                InputPipeline::MoodImage { .. } => classifier.evaluate(&load_image_dir(&corpus)?)?,
            };
            print!("{metrics}");
        }
        Command::Ingest {
            catalog,
            chain,
            ckpt,
        } => {
            let songs = load_catalog(&catalog, ckpt.as_deref())?;
            let mut ledger = Ledger::open(Box::new(FileStore::new(&chain)), Arc::new(SystemClock))?;
            for s in &songs {
                let now = ledger.now();
                let mut records = vec![LedgerRecord::new(
                    RecordKind::SongMetadata,
                    json!({
                        "song_id": s.song_id,
                        "title": s.title,
                        "artist": s.artist,
                        "catalog_ref": s.catalog_ref,
                    }),
                    "system",
                    now,
                )];
                records.push(tag_record(&s.song_id, &s.curated_tags, "curated", now));
                if let Some(p) = &s.predicted_tags {
                    records.push(tag_record(&s.song_id, p, "classifier", now));
                }
                ledger.append_at(records, now)?;
            }
            println!("ingested {} songs into {}", songs.len(), chain.display());
        }
        Command::Recommend {
            user,
            emotion,
            k,
            catalog,
            ckpt,
            interactions,
            alpha,
            beta,
            gamma,
            blend,
        } => {
            let weights = Weights::new(alpha, beta, gamma).map_err(usage)?;
            if !(0.0..=1.0).contains(&blend) {
                return Err(usage("blend must lie in [0, 1]"));
            }
            let songs = load_catalog(&catalog, ckpt.as_deref())?;
            let catalog = Catalog::new(songs, blend)?;
            let store = match interactions {
                Some(p) => InteractionStore::open(p)?,
                None => InteractionStore::new(),
            };
            let mood = EmotionDistribution::one_hot(emotion);
            let recs = catalog.recommend(&user, &mood, &store, k.into(), &weights, &HashSet::new())?;
            println!("{:<4} {:<20} {:>7} {:>9} {:>7} {:>7}  title", "rank", "song", "score", "affinity", "cf", "content");
            for (i, r) in recs.iter().enumerate() {
                let title = catalog.get(&r.song_id).map_or("", |s| s.title.as_str());
                println!(
                    "{:<4} {:<20} {:>7.4} {:>9.4} {:>7.4} {:>7.4}  {title}",
                    i + 1,
                    r.song_id,
                    r.score,
                    r.components.emotion_affinity,
                    r.components.cf_score,
                    r.components.content_score,
                );
            }
        }
        Command::Serve { config } => {
            let cfg = ServiceConfig::load(&config)?;
            let service = Arc::new(Service::from_config(cfg, Arc::new(SystemClock))?);
            tokio::runtime::Runtime::new()?.block_on(serve(service))?;
        }
        Command::Ledger {
            action: LedgerAction::Verify { chain },
        } => {
            let bytes = std::fs::read(&chain).with_context(|| format!("reading {}", chain.display()))?;
            let v = verify_serialized(&bytes);
            let blocks = bytes.split(|b| *b == b'\n').filter(|l| !l.is_empty()).count();
            match v.first_bad_index {
                None => println!("ok: {blocks} blocks verified"),
                Some(i) => {
                    println!("corrupt: first bad block {i}");
                    return Ok(ExitCode::from(1));
                }
            }
        }
        Command::Synth { kind } => match kind {
            SynthKind::Lyrics {
                out,
                per_class,
                seed,
            } => {
                write_jsonl(&out, &keyword_corpus(per_class, seed))?;
                println!("wrote {}", out.display());
            }
            SynthKind::Images {
                out,
                per_class,
                noise,
                seed,
            } => {
                if !(0.0..=1.0).contains(&noise) {
                    return Err(usage("noise must lie in [0, 1]"));
                }
                save_image_dir(&out, &glyph_dataset(per_class, noise, seed))?;
                println!("wrote {}", out.display());
            }
        },
    }
    Ok(ExitCode::SUCCESS)
}

fn load_catalog(path: &Path, ckpt: Option<&Path>) -> Result<Vec<SongRecord>> {
    let entries = read_jsonl(path).with_context(|| format!("loading {}", path.display()))?;
    let classifier = ckpt.map(TrainedClassifier::load).transpose()?;
    entries
        .iter()
        .map(|e| match &classifier {
            Some(c) => SongRecord::from_entry_with(e, c),
            None => SongRecord::from_entry(e),
        })
        .collect::<Result<_, _>>()
        .map_err(Into::into)
}

fn tag_record(song: &str, tags: &EmotionDistribution, source: &str, now: i64) -> LedgerRecord {
    LedgerRecord::new(
        RecordKind::EmotionTag,
        json!({"song_id": song, "tags": tags, "source": source}),
        "system",
        now,
    )
}
