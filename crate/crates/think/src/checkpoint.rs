//! Checkpoint directories: `manifest.json`, `vocab.txt` and one little-endian
//! f32 blob per named parameter array.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use think_core::corpus::Vocabulary;
use think_core::model::{GeneratorPool, ModelConfig};
use think_core::train::TrainConfig;
use think_core::Params;

use crate::config::ExperimentConfig;
use crate::io::{read_vocab, vocab_text, write_atomic, VOCAB_FILE};

pub const MANIFEST: &str = "manifest.json";
pub const LOCK: &str = "train.lock";
const FORMAT: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: u32,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Optimizer steps taken.
    pub step: u64,
    /// Completed epochs.
    pub epoch: usize,
    pub vocab: String,
    /// The experiment configuration that produced this checkpoint, as flat keys.
    pub config: BTreeMap<String, String>,
    pub arrays: Vec<ArrayEntry>,
}

pub struct Checkpoint {
    pub manifest: Manifest,
    pub pool: GeneratorPool<f32>,
    pub vocab: Vocabulary,
}

impl Checkpoint {
    pub fn config(&self) -> Result<ExperimentConfig> {
        ExperimentConfig::from_map(&self.manifest.config)
    }
}

fn blob_name(name: &str) -> String {
    format!("{name}.bin")
}

/// Writes every array, then the vocabulary, then the manifest, each through a
/// temp file and rename, so a reader never sees a manifest without its blobs.
pub fn save(
    dir: &Path,
    pool: &GeneratorPool<f32>,
    vocab: &Vocabulary,
    config: &ExperimentConfig,
    step: u64,
    epoch: usize,
) -> Result<Manifest> {
    if vocab.len() != pool.config().vocab_size {
        bail!(
            "vocabulary has {} entries but the model expects {}",
            vocab.len(),
            pool.config().vocab_size
        );
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut arrays = Vec::new();
    let mut result = Ok(());
    pool.visit("", &mut |p| {
        if result.is_err() {
            return;
        }
        let file = blob_name(&p.name);
        let mut bytes = Vec::with_capacity(p.data.len() * 4);
        for v in p.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        result = write_atomic(&dir.join(&file), &bytes);
        arrays.push(ArrayEntry {
            name: p.name,
            shape: p.shape,
            file,
        });
    });
    result?;
    write_atomic(&dir.join(VOCAB_FILE), vocab_text(vocab).as_bytes())?;
    let manifest = Manifest {
        format: FORMAT,
        model: *pool.config(),
        train: config.train,
        step,
        epoch,
        vocab: VOCAB_FILE.to_string(),
        config: config.to_map(),
        arrays,
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    write_atomic(&dir.join(MANIFEST), json.as_bytes())?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path)
        .with_context(|| format!("no checkpoint at {} (missing {MANIFEST})", dir.display()))?;
    let m: Manifest = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if m.format != FORMAT {
        bail!("{}: unsupported checkpoint format {}", path.display(), m.format);
    }
    Ok(m)
}

pub fn load(dir: &Path) -> Result<Checkpoint> {
    let manifest = read_manifest(dir)?;
    let model = manifest.model;
    model.validate()?;
    let vocab = read_vocab(&dir.join(&manifest.vocab))?;
    if vocab.len() != model.vocab_size {
        bail!(
            "vocab/config mismatch: {} has {} entries, manifest declares vocab_size {}",
            manifest.vocab,
            vocab.len(),
            model.vocab_size
        );
    }
    let mut pool = GeneratorPool::<f32>::zeros(model)?;

    let mut expected: Vec<(String, Vec<usize>)> = Vec::new();
    pool.visit("", &mut |p| expected.push((p.name, p.shape)));
    let by_name: BTreeMap<&str, &ArrayEntry> =
        manifest.arrays.iter().map(|a| (a.name.as_str(), a)).collect();
    if let Some(extra) = manifest
        .arrays
        .iter()
        .find(|a| !expected.iter().any(|(n, _)| *n == a.name))
    {
        bail!("array {}: not part of the declared model", extra.name);
    }
    let mut blobs = Vec::with_capacity(expected.len());
    for (name, shape) in &expected {
        let entry = by_name
            .get(name.as_str())
            .ok_or_else(|| anyhow!("array {name}: missing from manifest"))?;
        if &entry.shape != shape {
            bail!(
                "array {name}: manifest shape {:?} does not match model shape {shape:?}",
                entry.shape
            );
        }
        let path = dir.join(&entry.file);
        let bytes = fs::read(&path).with_context(|| format!("array {name}: missing blob {}", path.display()))?;
        let len: usize = shape.iter().product();
        if bytes.len() != len * 4 {
            bail!(
                "array {name}: blob has {} bytes, shape {shape:?} needs {}",
                bytes.len(),
                len * 4
            );
        }
        blobs.push(
            bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect::<Vec<f32>>(),
        );
    }
    let mut i = 0;
    pool.visit_mut(&mut |s| {
        s.copy_from_slice(&blobs[i]);
        i += 1;
    });
    Ok(Checkpoint {
        manifest,
        pool,
        vocab,
    })
}

/// Marks a checkpoint directory as owned by a running `train`.
pub struct TrainLock {
    path: PathBuf,
}

impl TrainLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(LOCK);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                use std::io::Write;
                writeln!(f, "{}", std::process::id())?;
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => bail!(
                "{} is locked by another training run (remove {} if that run is gone)",
                dir.display(),
                path.display()
            ),
            Err(e) => Err(e).with_context(|| format!("creating {}", path.display())),
        }
    }
}

impl Drop for TrainLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
