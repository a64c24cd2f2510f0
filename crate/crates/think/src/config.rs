//! Flat `key = value` experiment configuration with named profiles.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use think_core::deform::Discretizer;
use think_core::model::ModelConfig;
use think_core::train::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Profile {
    /// Small dimensions that train on one CPU core.
    Desk,
    /// Full-size hyperparameters.
    Paper,
}

impl Profile {
    pub fn name(self) -> &'static str {
        match self {
            Profile::Desk => "desk",
            Profile::Paper => "paper",
        }
    }
}

impl FromStr for Profile {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            other => bail!("unknown profile {other:?} (expected desk or paper)"),
        }
    }
}

/// Everything a command needs: model shape, training settings and file locations.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub profile: Profile,
    /// Cap on vocabulary size; the model uses the size of the prepared vocabulary.
    pub max_vocab: usize,
    pub c_len: usize,
    pub r_len: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    pub k: usize,
    pub heads: usize,
    pub p: usize,
    pub train: TrainConfig,
    /// Epochs between intermediate checkpoints; 0 saves only at the end.
    pub checkpoint_every: usize,
    pub corpus: Option<PathBuf>,
    /// Directory holding `vocab.txt` and `ngrams-{n}.txt`.
    pub prepared: Option<PathBuf>,
    /// Word-vector file for the embedding metrics, or the literal `model`.
    pub embeddings: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: PathBuf,
}

pub const KEYS: [&str; 25] = [
    "profile",
    "max_vocab",
    "c_len",
    "r_len",
    "embed_dim",
    "hidden",
    "k",
    "heads",
    "p",
    "batch_size",
    "epochs",
    "init_lr",
    "warmup_steps",
    "smoothing",
    "l2",
    "seed",
    "clip_norm",
    "discretizer",
    "gumbel_tau",
    "checkpoint_every",
    "corpus",
    "prepared",
    "embeddings",
    "checkpoint",
    "out",
];

impl ExperimentConfig {
    pub fn profile(profile: Profile) -> Self {
        match profile {
            Profile::Desk => Self {
                profile,
                max_vocab: 2000,
                c_len: 10,
                r_len: 10,
                embed_dim: 64,
                hidden: 64,
                k: 3,
                heads: 2,
                p: 4,
                train: TrainConfig {
                    batch_size: 8,
                    epochs: 100,
                    init_lr: 5e-3,
                    warmup_steps: 40,
                    ..TrainConfig::default()
                },
                checkpoint_every: 0,
                corpus: None,
                prepared: None,
                embeddings: None,
                checkpoint: None,
                out: PathBuf::from("out"),
            },
            Profile::Paper => Self {
                profile,
                max_vocab: 23_000,
                c_len: 25,
                r_len: 25,
                embed_dim: 256,
                hidden: 256,
                k: 3,
                heads: 6,
                p: 8,
                train: TrainConfig {
                    batch_size: 64,
                    epochs: 100,
                    init_lr: 1e-3,
                    warmup_steps: 4000,
                    ..TrainConfig::default()
                },
                checkpoint_every: 1,
                ..Self::profile(Profile::Desk)
            },
        }
    }

    /// Model shape for a vocabulary of `vocab_size` entries.
    pub fn model(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            c_len: self.c_len,
            r_len: self.r_len,
            vocab_size,
            embed_dim: self.embed_dim,
            hidden: self.hidden,
            k: self.k,
            heads: self.heads,
            p: self.p,
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let t = &mut self.train;
        match key {
            "profile" => {
                let keep = (self.corpus.take(), self.prepared.take(), self.embeddings.take());
                let keep_ckpt = (self.checkpoint.take(), self.out.clone());
                *self = Self::profile(v.parse()?);
                (self.corpus, self.prepared, self.embeddings) = keep;
                (self.checkpoint, self.out) = keep_ckpt;
            }
            "max_vocab" => self.max_vocab = num(key, v)?,
            "c_len" => self.c_len = num(key, v)?,
            "r_len" => self.r_len = num(key, v)?,
            "embed_dim" => self.embed_dim = num(key, v)?,
            "hidden" => self.hidden = num(key, v)?,
            "k" => self.k = num(key, v)?,
            "heads" => self.heads = num(key, v)?,
            "p" => self.p = num(key, v)?,
            "batch_size" => t.batch_size = num(key, v)?,
            "epochs" => t.epochs = num(key, v)?,
            "init_lr" => t.init_lr = num(key, v)?,
            "warmup_steps" => t.warmup_steps = num(key, v)?,
            "smoothing" => t.smoothing = num(key, v)?,
            "l2" => t.l2 = num(key, v)?,
            "seed" => t.seed = num(key, v)?,
            "clip_norm" => t.clip_norm = num(key, v)?,
            "discretizer" => {
                t.discretizer = match v {
                    "argmax" => Discretizer::Argmax,
                    "gumbel" => Discretizer::Gumbel {
                        tau: match t.discretizer {
                            Discretizer::Gumbel { tau } => tau,
                            Discretizer::Argmax => 1.0,
                        },
                    },
                    other => bail!("discretizer must be argmax or gumbel, got {other:?}"),
                }
            }
            "gumbel_tau" => {
                let tau = num(key, v)?;
                t.discretizer = Discretizer::Gumbel { tau };
            }
            "checkpoint_every" => self.checkpoint_every = num(key, v)?,
            "corpus" => self.corpus = path(v),
            "prepared" => self.prepared = path(v),
            "embeddings" => self.embeddings = path(v),
            "checkpoint" => self.checkpoint = path(v),
            "out" => self.out = PathBuf::from(v),
            other => bail!("unknown config key {other:?}"),
        }
        Ok(())
    }

    /// Applies `key = value` lines. `#` starts a comment; blank lines are skipped.
    /// A `profile` line is applied before every other key regardless of position.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("{origin}:{}: expected key = value", i + 1))?;
            entries.push((i + 1, k.trim().to_string(), v.trim().to_string()));
        }
        entries.sort_by_key(|(_, k, _)| k != "profile");
        for (line, k, v) in entries {
            self.set(&k, &v).with_context(|| format!("{origin}:{line}"))?;
        }
        Ok(())
    }

    pub fn load(path: &Path, base: Profile) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg = Self::profile(base);
        cfg.apply_text(&text, &path.display().to_string())?;
        Ok(cfg)
    }

    pub fn to_map(&self) -> BTreeMap<String, String> {
        let t = &self.train;
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("profile", self.profile.name().into());
        put("max_vocab", self.max_vocab.to_string());
        put("c_len", self.c_len.to_string());
        put("r_len", self.r_len.to_string());
        put("embed_dim", self.embed_dim.to_string());
        put("hidden", self.hidden.to_string());
        put("k", self.k.to_string());
        put("heads", self.heads.to_string());
        put("p", self.p.to_string());
        put("batch_size", t.batch_size.to_string());
        put("epochs", t.epochs.to_string());
        put("init_lr", t.init_lr.to_string());
        put("warmup_steps", t.warmup_steps.to_string());
        put("smoothing", t.smoothing.to_string());
        put("l2", t.l2.to_string());
        put("seed", t.seed.to_string());
        put("clip_norm", t.clip_norm.to_string());
        match t.discretizer {
            Discretizer::Argmax => put("discretizer", "argmax".into()),
            Discretizer::Gumbel { tau } => {
                put("discretizer", "gumbel".into());
                put("gumbel_tau", tau.to_string());
            }
        }
        put("checkpoint_every", self.checkpoint_every.to_string());
        let paths = [
            ("corpus", &self.corpus),
            ("prepared", &self.prepared),
            ("embeddings", &self.embeddings),
            ("checkpoint", &self.checkpoint),
        ];
        for (k, p) in paths {
            if let Some(p) = p {
                put(k, p.display().to_string());
            }
        }
        put("out", self.out.display().to_string());
        m
    }

    /// Rebuilds a config from [`ExperimentConfig::to_map`] output.
    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        let base = match map.get("profile") {
            Some(p) => p.parse()?,
            None => Profile::Desk,
        };
        let mut cfg = Self::profile(base);
        let mut text = String::new();
        for (k, v) in map {
            let _ = writeln!(text, "{k} = {v}");
        }
        cfg.apply_text(&text, "manifest")?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.to_map() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.model(4).validate()?;
        self.train.validate()?;
        if self.max_vocab < 4 {
            bail!("max_vocab must be at least 4");
        }
        Ok(())
    }

    pub fn prepared_dir(&self) -> &Path {
        self.prepared.as_deref().unwrap_or(&self.out)
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.out.join("checkpoint"))
    }
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e| anyhow!("invalid value {v:?} for {key}: {e}"))
}

fn path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}
