use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use think::checkpoint;
use think::commands;
use think::config::{ExperimentConfig, Profile};
use think::io::write_atomic;

#[derive(Parser)]
#[command(name = "think", version, about = "Teamwork-generation dialogue model harness")]
struct Cli {
    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base hyperparameter profile.
    #[arg(long, global = true, value_enum)]
    profile: Option<Profile>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Extra `key=value` overrides, applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the vocabulary and response n-gram listings from a pair file.
    Prepare {
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Train a generator pool and write checkpoints.
    Train {
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Directory with `vocab.txt` from `prepare` (defaults to --out).
        #[arg(long)]
        prepared: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Continue from the checkpoint's stored step and epoch.
        #[arg(long)]
        resume: bool,
    },
    /// Greedy responses for every context in a file.
    Generate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Defaults to `<out>/responses.tsv`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Metric report for generated responses against references.
    Evaluate {
        #[arg(long)]
        generated: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long, default_value = "THINK")]
        model: String,
        /// Word-vector file, or `model` for the checkpoint's embeddings.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        prepared: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Defaults to `<out>/report.json`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// mix_coh table over several metric reports.
    Compare {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        /// Defaults to `<out>/compare.json`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Topic-classification probe of the semantics extractor.
    ProbeClassify {
        /// `label<TAB>sentence` file; a synthetic keyword dataset is used when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Sentences per topic for the synthetic dataset.
        #[arg(long, default_value_t = 200)]
        synthetic: usize,
        #[arg(long)]
        shuffle_labels: bool,
        /// Defaults to `<out>/probe.json`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Dump the row selections of generator 0 for one sentence and plot them.
    InspectDeform {
        #[arg(long)]
        sentence: String,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

impl Command {
    fn checkpoint(&self) -> Option<&Path> {
        match self {
            Command::Train { checkpoint, .. }
            | Command::Generate { checkpoint, .. }
            | Command::Evaluate { checkpoint, .. }
            | Command::InspectDeform { checkpoint, .. } => checkpoint.as_deref(),
            _ => None,
        }
    }
}

/// Config precedence: profile, then config file (or a checkpoint's stored
/// config when no file is given), then `--set`, then dedicated flags.
fn resolve(cli: &Cli) -> Result<ExperimentConfig> {
    let base = cli.profile.unwrap_or(Profile::Desk);
    let mut cfg = match (&cli.config, cli.command.checkpoint()) {
        (Some(path), _) => ExperimentConfig::load(path, base)?,
        (None, Some(dir)) if dir.join(checkpoint::MANIFEST).exists() && !matches!(cli.command, Command::Train { .. }) => {
            let mut c = ExperimentConfig::from_map(&checkpoint::read_manifest(dir)?.config)?;
            if let Some(p) = cli.profile {
                c.set("profile", p.name())?;
            }
            c
        }
        _ => ExperimentConfig::profile(base),
    };
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .with_context(|| format!("--set expects KEY=VALUE, got {kv:?}"))?;
        cfg.set(k.trim(), v)?;
    }
    if let Some(s) = cli.seed {
        cfg.train.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    match &cli.command {
        Command::Prepare { corpus } => {
            if corpus.is_some() {
                cfg.corpus = corpus.clone();
            }
        }
        Command::Train { corpus, prepared, .. } => {
            if corpus.is_some() {
                cfg.corpus = corpus.clone();
            }
            if prepared.is_some() {
                cfg.prepared = prepared.clone();
            }
        }
        Command::Evaluate { embeddings, prepared, .. } => {
            if embeddings.is_some() {
                cfg.embeddings = embeddings.clone();
            }
            if prepared.is_some() {
                cfg.prepared = prepared.clone();
            }
        }
        _ => {}
    }
    if let Some(dir) = cli.command.checkpoint() {
        cfg.checkpoint = Some(dir.to_path_buf());
    }
    Ok(cfg)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve(&cli)?;
    match &cli.command {
        Command::Prepare { .. } => {
            let s = commands::prepare(&cfg)?;
            println!("pairs {}  vocabulary {}", s.pairs, s.vocab_size);
            for (n, count) in s.ngrams {
                println!("{n}-grams {count}");
            }
            println!("wrote {}", cfg.out.display());
        }
        Command::Train { resume, .. } => {
            let s = commands::train(&cfg, *resume, |e| {
                log::info!("epoch {} mean_loss {:.5} lr {:.6}", e.epoch, e.mean_loss, e.lr);
            })?;
            if let Some(last) = s.history.last() {
                println!("epoch {} step {} loss {:.5}", last.epoch, s.step, last.mean_loss);
            }
            println!("train greedy accuracy {:.4}", s.train_accuracy);
            println!("checkpoint {}", s.checkpoint.display());
        }
        Command::Generate { input, output, .. } => {
            let out = output.clone().unwrap_or_else(|| cfg.out.join("responses.tsv"));
            let rows = commands::generate(&cfg, input, &out)?;
            println!("{} responses written to {}", rows.len(), out.display());
        }
        Command::Evaluate { generated, reference, model, output, .. } => {
            let r = commands::evaluate(&cfg, generated, reference, model)?;
            let out = output.clone().unwrap_or_else(|| cfg.out.join("report.json"));
            write_json(&out, &r)?;
            println!("{}", serde_json::to_string_pretty(&r)?);
        }
        Command::Compare { reports, output } => {
            let (cmp, text) = commands::compare(reports)?;
            let out = output.clone().unwrap_or_else(|| cfg.out.join("compare.json"));
            write_json(&out, &cmp)?;
            print!("{text}");
        }
        Command::ProbeClassify { data, synthetic, shuffle_labels, output } => {
            let dataset = match data {
                Some(p) => commands::read_probe_data(p)?,
                None => commands::synthetic_probe_data(*synthetic, cfg.train.seed),
            };
            let r = commands::probe(&dataset, &commands::probe_config(&cfg, *shuffle_labels))?;
            let out = output.clone().unwrap_or_else(|| cfg.out.join("probe.json"));
            write_json(&out, &r)?;
            print!("{}", commands::probe_text(&r));
        }
        Command::InspectDeform { sentence, .. } => {
            let (r, files) = commands::inspect_deform(&cfg, sentence)?;
            if r.truncated {
                eprintln!("warning: sentence longer than the context length was truncated");
            }
            print!("{}", think::inspect::dump_text(&r));
            println!("wrote {}, {}", files.json.display(), files.svg.display());
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
