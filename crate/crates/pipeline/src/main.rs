use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use post_core::dataset::{load_manifest, plan_folds, synth::synth_dataset, FoldPlan};
use post_models::{DetectorConfig, LandmarkNetConfig};
use post_pipeline::service::{serve, AppState, Interpretation, ServiceConfig};
use post_pipeline::{evaluate, Dataset, EvalConfig, ModelTrainer, RunKind, RunStore, Scorer};

#[derive(Parser)]
#[command(name = "post", about = "Glans detection, landmark localisation and POST scoring")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Detector,
    Landmarks,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with a manifest.
    Synth {
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 256)]
        size: u32,
    },
    /// Write a k-fold plan for a manifest.
    Plan {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value_t = 0.2)]
        val_frac: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one network on one fold's training split.
    Train {
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        fold_plan: PathBuf,
        #[arg(long, default_value_t = 0)]
        fold: usize,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-validated evaluation; several landmark configs give ablation rows.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        fold_plan: PathBuf,
        /// Comma-separated detector and/or landmark config files.
        #[arg(long, value_delimiter = ',')]
        configs: Vec<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score one image.
    Score {
        image: PathBuf,
        #[arg(long)]
        detector: PathBuf,
        #[arg(long)]
        landmarks: PathBuf,
        #[arg(long)]
        json: bool,
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Serve the scoring API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long)]
        token_file: Option<PathBuf>,
        #[arg(long)]
        detector: PathBuf,
        #[arg(long)]
        landmarks: PathBuf,
        /// JSON list of {min, max, text} rows.
        #[arg(long)]
        interpretations: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        max_body_mb: usize,
    },
}

enum ConfigFile {
    Detector(DetectorConfig),
    Landmarks(LandmarkNetConfig),
}

fn read_config(path: &Path) -> Result<ConfigFile> {
    let value: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?)?;
    let has = |k: &str| value.get(k).is_some();
    if has("stream_widths") || has("heatmap_size") || has("stages") {
        Ok(ConfigFile::Landmarks(serde_json::from_value(value)?))
    } else if has("grid_size") || has("channels") || has("conf_threshold") {
        Ok(ConfigFile::Detector(serde_json::from_value(value)?))
    } else {
        bail!("{}: cannot tell a detector config from a landmark config", path.display())
    }
}

fn load_plan(path: &Path) -> Result<FoldPlan> {
    Ok(FoldPlan::from_json(&fs::read_to_string(path)?)?)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Synth { count, seed, out, size } => {
            let records = synth_dataset(count, seed, (size, size), &out)?;
            println!("wrote {} images and {}", records.len(), out.join("manifest.jsonl").display());
        }
        Command::Plan {
            manifest,
            k,
            val_frac,
            seed,
            out,
        } => {
            let plan = plan_folds(&load_manifest(&manifest)?, k, val_frac, seed)?;
            fs::write(&out, plan.to_json())?;
        }
        Command::Train {
            kind,
            manifest,
            fold_plan,
            fold,
            config,
            out,
        } => {
            let data = Dataset::load(&manifest)?;
            let plan = load_plan(&fold_plan)?;
            if fold >= plan.k {
                bail!("fold {fold} out of range for a {}-fold plan", plan.k);
            }
            let split = plan.split(fold);
            let parsed = config.as_deref().map(read_config).transpose()?;
            let mut cfg = EvalConfig::default();
            let model = match (kind, parsed) {
                (Kind::Detector, parsed) => {
                    match parsed {
                        Some(ConfigFile::Detector(c)) => cfg.detector = c,
                        Some(ConfigFile::Landmarks(_)) => bail!("landmark config given for a detector run"),
                        None => {}
                    }
                    ModelTrainer::new(cfg).train_detector(&split, &data)?
                }
                (Kind::Landmarks, parsed) => {
                    let lm = match parsed {
                        Some(ConfigFile::Landmarks(c)) => c,
                        Some(ConfigFile::Detector(_)) => bail!("detector config given for a landmark run"),
                        None => LandmarkNetConfig::default(),
                    };
                    ModelTrainer::new(cfg).train_landmarks(&split, &data, &lm)?
                }
            };
            model.save(&out)?;
            println!("saved {} (val loss {:.6})", out.display(), model.provenance.val_loss);
        }
        Command::Eval {
            manifest,
            fold_plan,
            configs,
            seed,
            store,
            out,
        } => {
            let data = Dataset::load(&manifest)?;
            let plan = load_plan(&fold_plan)?;
            let mut cfg = EvalConfig {
                seed,
                landmarks: Vec::new(),
                ..EvalConfig::default()
            };
            for path in &configs {
                match read_config(path)? {
                    ConfigFile::Detector(c) => cfg.detector = c,
                    ConfigFile::Landmarks(c) => cfg.landmarks.push(c),
                }
            }
            if cfg.landmarks.is_empty() {
                cfg.landmarks.push(LandmarkNetConfig::default());
            }
            let mut trainer = ModelTrainer::new(cfg.clone());
            let output = evaluate(&data, &plan, &cfg, &mut trainer)?;
            let text = serde_json::to_string_pretty(&output)?;
            if let Some(dir) = store {
                let id = RunStore::open(dir)?.append(RunKind::Eval, &output)?;
                eprintln!("stored run {id}");
            }
            match out {
                Some(path) => fs::write(path, text)?,
                None => println!("{text}"),
            }
        }
        Command::Score {
            image,
            detector,
            landmarks,
            json,
            store,
        } => {
            let scorer = Scorer::load(&detector, &landmarks)?;
            let bytes = fs::read(&image)?;
            let id = image.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let report = scorer.score_bytes(&id, &bytes)?;
            if let Some(dir) = store {
                let run = RunStore::open(dir)?.append(RunKind::Score, &report)?;
                eprintln!("stored run {run}");
            }
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                let p = &report.post;
                println!(
                    "{}: POST {:.4} (left {:.4}, right {:.4}), box confidence {:.3}",
                    report.image_id, p.score, p.ratio_left, p.ratio_right, report.bbox.confidence
                );
            }
        }
        Command::Serve {
            port,
            host,
            token_file,
            detector,
            landmarks,
            interpretations,
            max_body_mb,
        } => {
            let token = token_file
                .map(|p| fs::read_to_string(p).map(|t| t.trim().to_string()))
                .transpose()?;
            if token.as_deref() == Some("") {
                bail!("token file is empty");
            }
            let interpretations: Vec<Interpretation> = match interpretations {
                Some(p) => serde_json::from_str(&fs::read_to_string(p)?)?,
                None => Vec::new(),
            };
            let config = ServiceConfig {
                token,
                max_body_bytes: max_body_mb * 1024 * 1024,
                interpretations,
                ..ServiceConfig::default()
            };
            let state = AppState::new(Scorer::load(&detector, &landmarks)?, config);
            let addr: SocketAddr = format!("{host}:{port}").parse()?;
            tokio::runtime::Runtime::new()?.block_on(serve(addr, state))?;
        }
    }
    Ok(())
}
