//! One function per subcommand. Each writes its artifacts and returns what it
//! produced so callers can print or assert on it.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use think_core::corpus::{encode_pair, tokenize, EncodedPair, NgramVocabulary, Vocabulary, EOS};
use think_core::metrics::{evaluate as run_metrics, EmbeddingTable, ResponseItem, ResponseSet};
use think_core::model::GeneratorPool;
use think_core::probe::{run_probe, synthetic_keyword_dataset, ProbeConfig, ProbeDataset, ProbeReport};
use think_core::train::{greedy_accuracy, EpochStats, Trainer};

use crate::checkpoint::{self, Checkpoint, TrainLock};
use crate::config::ExperimentConfig;
use crate::inspect::{self, InspectReport};
use crate::io::{self, ngram_file, write_atomic, NGRAM_ORDERS, VOCAB_FILE};
use crate::report::{self, Comparison, MetricReport};

pub const HISTORY_FILE: &str = "history.csv";

fn create_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn corpus_path(cfg: &ExperimentConfig) -> Result<&Path> {
    cfg.corpus
        .as_deref()
        .ok_or_else(|| anyhow!("no corpus configured (set corpus = <pairs.tsv>)"))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrepareSummary {
    pub pairs: usize,
    pub vocab_size: usize,
    /// `(n, distinct n-grams)` per order.
    pub ngrams: Vec<(usize, usize)>,
}

/// Vocabulary plus response n-gram listings for orders 3, 4 and 5, written to `out`.
pub fn prepare(cfg: &ExperimentConfig) -> Result<PrepareSummary> {
    let pairs = io::read_pairs(corpus_path(cfg)?)?;
    let vocab = Vocabulary::build(&pairs, cfg.max_vocab)?;
    create_out(&cfg.out)?;
    write_atomic(&cfg.out.join(VOCAB_FILE), io::vocab_text(&vocab).as_bytes())?;
    let responses: Vec<&[String]> = pairs.iter().map(|p| p.response.as_slice()).collect();
    let mut ngrams = Vec::new();
    for n in NGRAM_ORDERS {
        let grams = NgramVocabulary::build(&responses, n)?;
        write_atomic(&cfg.out.join(ngram_file(n)), io::ngram_text(&grams).as_bytes())?;
        ngrams.push((n, grams.len()));
    }
    Ok(PrepareSummary {
        pairs: pairs.len(),
        vocab_size: vocab.len(),
        ngrams,
    })
}

fn prepared_vocab(cfg: &ExperimentConfig) -> Result<Vocabulary> {
    let path = cfg.prepared_dir().join(VOCAB_FILE);
    if !path.exists() {
        bail!("{} not found; run `think prepare` first", path.display());
    }
    io::read_vocab(&path)
}

fn encode_corpus(cfg: &ExperimentConfig, vocab: &Vocabulary) -> Result<Vec<EncodedPair>> {
    let pairs = io::read_pairs(corpus_path(cfg)?)?;
    Ok(pairs
        .iter()
        .map(|p| encode_pair(p, vocab, cfg.c_len, cfg.r_len))
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub history: Vec<EpochStats>,
    pub step: u64,
    pub epoch: usize,
    /// Greedy gold-token accuracy on the training pairs after the last epoch.
    pub train_accuracy: f64,
    pub checkpoint: PathBuf,
}

fn history_csv(rows: &[EpochStats]) -> String {
    let mut s = String::from("epoch,mean_loss,lr\n");
    for r in rows {
        s.push_str(&format!("{},{},{}\n", r.epoch, r.mean_loss, r.lr));
    }
    s
}

fn read_history(path: &Path) -> Result<Vec<EpochStats>> {
    let Ok(text) = fs::read_to_string(path) else {
        return Ok(Vec::new());
    };
    text.lines()
        .skip(1)
        .enumerate()
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            let bad = || anyhow!("{}:{}: malformed history row", path.display(), i + 2);
            if f.len() != 3 {
                return Err(bad());
            }
            Ok(EpochStats {
                epoch: f[0].parse().map_err(|_| bad())?,
                mean_loss: f[1].parse().map_err(|_| bad())?,
                lr: f[2].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

/// Trains from scratch, or from the stored step when `resume` is set and the
/// checkpoint directory holds a manifest. Runs until `epochs` are complete.
pub fn train(cfg: &ExperimentConfig, resume: bool, mut on_epoch: impl FnMut(&EpochStats)) -> Result<TrainSummary> {
    cfg.validate()?;
    let vocab = prepared_vocab(cfg)?;
    let data = encode_corpus(cfg, &vocab)?;
    let model = cfg.model(vocab.len());
    let dir = cfg.checkpoint_dir();
    let _lock = TrainLock::acquire(&dir)?;
    let history_path = dir.join(HISTORY_FILE);

    let resuming = resume && dir.join(checkpoint::MANIFEST).exists();
    let (mut trainer, mut history) = if resuming {
        let ck = checkpoint::load(&dir)?;
        if ck.manifest.model != model {
            bail!(
                "checkpoint model {:?} does not match the configured model {:?}",
                ck.manifest.model,
                model
            );
        }
        if ck.vocab != vocab {
            bail!("checkpoint vocabulary differs from {}", cfg.prepared_dir().join(VOCAB_FILE).display());
        }
        let mut h = read_history(&history_path)?;
        h.truncate(ck.manifest.epoch);
        let t = Trainer::resume(ck.pool, cfg.train, ck.manifest.step, ck.manifest.epoch)?;
        (t, h)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
        let pool = GeneratorPool::<f32>::init(model, &mut rng)?;
        (Trainer::new(pool, cfg.train)?, Vec::new())
    };

    while trainer.epoch() < cfg.train.epochs {
        let stats = trainer.train_epoch(&data)?;
        on_epoch(&stats);
        history.push(stats);
        write_atomic(&history_path, history_csv(&history).as_bytes())?;
        let last = trainer.epoch() == cfg.train.epochs;
        if last || (cfg.checkpoint_every > 0 && trainer.epoch() % cfg.checkpoint_every == 0) {
            checkpoint::save(&dir, &trainer.pool, &vocab, cfg, trainer.step(), trainer.epoch())?;
        }
    }
    if !dir.join(checkpoint::MANIFEST).exists() {
        checkpoint::save(&dir, &trainer.pool, &vocab, cfg, trainer.step(), trainer.epoch())?;
    }
    Ok(TrainSummary {
        train_accuracy: greedy_accuracy(&trainer.pool, &data)?,
        step: trainer.step(),
        epoch: trainer.epoch(),
        history,
        checkpoint: dir,
    })
}

/// Greedy responses for every context line of `input`, written as
/// `context<TAB>response` lines to `output`.
pub fn generate(cfg: &ExperimentConfig, input: &Path, output: &Path) -> Result<Vec<(String, String)>> {
    let ck = checkpoint::load(&cfg.checkpoint_dir())?;
    let contexts = io::read_contexts(input)?;
    let rows = contexts
        .into_iter()
        .map(|c| {
            let r = ck.pool.respond(&ck.vocab, &c)?;
            Ok((c, r))
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(parent) = output.parent() {
        create_out(parent)?;
    }
    write_atomic(output, io::format_rows(&rows).as_bytes())?;
    Ok(rows)
}

/// Word vectors of a trained model, one per non-special vocabulary entry.
pub fn model_embeddings(ck: &Checkpoint) -> Result<EmbeddingTable> {
    let mut t = EmbeddingTable::new(ck.pool.embedding.cols());
    for (id, tok) in ck.vocab.tokens().iter().enumerate().skip(EOS + 1) {
        let v = ck.pool.embedding.row(id).iter().map(|&x| x as f64).collect();
        t.insert(tok.clone(), v)?;
    }
    Ok(t)
}

fn metric_table(cfg: &ExperimentConfig) -> Result<EmbeddingTable> {
    match cfg.embeddings.as_deref() {
        Some(p) if p == Path::new("model") => model_embeddings(&checkpoint::load(&cfg.checkpoint_dir())?),
        Some(p) => io::read_embeddings(p),
        None => bail!("no embedding table: set embeddings = <vectors.txt> or embeddings = model"),
    }
}

/// Metric report of `generated` against aligned `reference` pairs.
///
/// N-gram vocabularies come from the prepared directory when present there,
/// otherwise from the reference responses.
pub fn evaluate(cfg: &ExperimentConfig, generated: &Path, reference: &Path, model: &str) -> Result<MetricReport> {
    let gen = io::read_rows(generated)?;
    let refs = io::read_rows(reference)?;
    if gen.len() != refs.len() {
        bail!(
            "{} has {} rows but {} has {}",
            generated.display(),
            gen.len(),
            reference.display(),
            refs.len()
        );
    }
    let items: Vec<ResponseItem> = gen
        .iter()
        .zip(&refs)
        .map(|((c, g), (_, r))| ResponseItem {
            context: tokenize(c),
            generated: tokenize(g),
            reference: tokenize(r),
        })
        .collect();
    let set = ResponseSet { items };
    let reference_tokens = set.references();
    let vocabs = NGRAM_ORDERS
        .iter()
        .map(|&n| {
            let path = cfg.prepared_dir().join(ngram_file(n));
            if path.exists() {
                io::read_ngrams(&path, n)
            } else {
                Ok(NgramVocabulary::build(&reference_tokens, n)?)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let table = metric_table(cfg)?;
    let summary = run_metrics(&set, &vocabs, &table);
    Ok(MetricReport::new(model, &summary))
}

pub fn compare(paths: &[PathBuf]) -> Result<(Comparison, String)> {
    let reports = paths.iter().map(|p| report::read_scores(p)).collect::<Result<Vec<_>>>()?;
    report::compare(&reports)
}

/// `label<TAB>sentence` per line.
pub fn read_probe_data(path: &Path) -> Result<ProbeDataset> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (label, sentence) = line
            .split_once('\t')
            .ok_or_else(|| anyhow!("{}:{}: expected label<TAB>sentence", path.display(), i + 1))?;
        let tokens = tokenize(sentence);
        if tokens.is_empty() {
            bail!("{}:{}: empty sentence", path.display(), i + 1);
        }
        rows.push((label.trim().to_string(), tokens));
    }
    Ok(ProbeDataset::from_labeled(rows)?)
}

/// Probe settings drawn from the experiment: the extractor shape, the context
/// length as sentence length, and the seed.
pub fn probe_config(cfg: &ExperimentConfig, shuffle_labels: bool) -> ProbeConfig {
    ProbeConfig {
        max_len: cfg.c_len,
        embed_dim: cfg.embed_dim,
        k: cfg.k,
        heads: cfg.heads,
        p: cfg.p,
        seed: cfg.train.seed,
        shuffle_labels,
        ..ProbeConfig::default()
    }
}

pub fn probe(dataset: &ProbeDataset, probe_cfg: &ProbeConfig) -> Result<ProbeReport> {
    Ok(run_probe(dataset, probe_cfg)?.0)
}

pub fn synthetic_probe_data(per_topic: usize, seed: u64) -> ProbeDataset {
    synthetic_keyword_dataset(per_topic, seed)
}

pub fn probe_text(r: &ProbeReport) -> String {
    let mut s = format!(
        "{:<12} {:>9} {:>9} {:>9} {:>8}\n",
        "class", "precision", "recall", "f1", "support"
    );
    for c in &r.classes {
        s.push_str(&format!(
            "{:<12} {:>9.4} {:>9.4} {:>9.4} {:>8}\n",
            c.label, c.precision, c.recall, c.f1, c.support
        ));
    }
    s.push_str(&format!(
        "accuracy {:.4} (train {}, test {})\n",
        r.accuracy, r.train_size, r.test_size
    ));
    s
}

pub struct InspectFiles {
    pub json: PathBuf,
    pub text: PathBuf,
    pub svg: PathBuf,
}

/// Trace dump (JSON and text) and jittered scatter plot for one sentence.
pub fn inspect_deform(cfg: &ExperimentConfig, sentence: &str) -> Result<(InspectReport, InspectFiles)> {
    let ck = checkpoint::load(&cfg.checkpoint_dir())?;
    let report = inspect::inspect(&ck.pool, &ck.vocab, sentence)?;
    create_out(&cfg.out)?;
    let files = InspectFiles {
        json: cfg.out.join("deform_trace.json"),
        text: cfg.out.join("deform_trace.txt"),
        svg: cfg.out.join("deform_scatter.svg"),
    };
    write_atomic(&files.json, serde_json::to_string_pretty(&report)?.as_bytes())?;
    write_atomic(&files.text, inspect::dump_text(&report).as_bytes())?;
    write_atomic(&files.svg, inspect::scatter_svg(&report, cfg.train.seed).as_bytes())?;
    Ok((report, files))
}
