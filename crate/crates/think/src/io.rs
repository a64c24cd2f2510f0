//! Text file formats: pair TSV, vocabulary listing, n-gram listings, word vectors.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use think_core::corpus::{tokenize, DialoguePair, NgramVocabulary, Vocabulary};
use think_core::metrics::EmbeddingTable;

pub const VOCAB_FILE: &str = "vocab.txt";
pub const NGRAM_ORDERS: [usize; 3] = [3, 4, 5];

pub fn ngram_file(n: usize) -> String {
    format!("ngrams-{n}.txt")
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

/// Writes through a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = temp_sibling(path);
    {
        let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("renaming {} into place", path.display()))
}

fn temp_sibling(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(format!(".tmp{}", std::process::id()));
    path.with_file_name(name)
}

/// One `context<TAB>response` pair per line. Blank lines are skipped.
pub fn parse_pairs(text: &str, origin: &str) -> Result<Vec<DialoguePair>> {
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (c, r) = line
            .split_once('\t')
            .ok_or_else(|| anyhow!("{origin}:{}: expected context<TAB>response", i + 1))?;
        let pair = DialoguePair::from_text(c, r).map_err(|e| anyhow!("{origin}:{}: {e}", i + 1))?;
        pairs.push(pair);
    }
    if pairs.is_empty() {
        bail!(think_core::Error::EmptyCorpus);
    }
    Ok(pairs)
}

pub fn read_pairs(path: &Path) -> Result<Vec<DialoguePair>> {
    parse_pairs(&read(path)?, &path.display().to_string())
}

/// Raw `(context, response)` strings of a pair file, for files where the
/// response may legitimately be empty (generated output).
pub fn read_rows(path: &Path) -> Result<Vec<(String, String)>> {
    let text = read(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (c, r) = line
            .split_once('\t')
            .ok_or_else(|| anyhow!("{}:{}: expected context<TAB>response", path.display(), i + 1))?;
        rows.push((c.to_string(), r.to_string()));
    }
    Ok(rows)
}

/// Contexts for generation: the first tab-separated field of each non-blank line.
pub fn read_contexts(path: &Path) -> Result<Vec<String>> {
    Ok(read(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split('\t').next().unwrap_or("").trim().to_string())
        .collect())
}

pub fn format_rows(rows: &[(String, String)]) -> String {
    let mut s = String::new();
    for (c, r) in rows {
        s.push_str(c);
        s.push('\t');
        s.push_str(r);
        s.push('\n');
    }
    s
}

pub fn vocab_text(vocab: &Vocabulary) -> String {
    let mut s = vocab.tokens().join("\n");
    s.push('\n');
    s
}

pub fn read_vocab(path: &Path) -> Result<Vocabulary> {
    let text = read(path)?;
    Vocabulary::from_listing(text.lines().map(str::to_string))
        .with_context(|| format!("parsing vocabulary {}", path.display()))
}

pub fn ngram_text(vocab: &NgramVocabulary) -> String {
    let mut s = String::new();
    for g in vocab.iter() {
        s.push_str(&g.join(" "));
        s.push('\n');
    }
    s
}

pub fn read_ngrams(path: &Path, n: usize) -> Result<NgramVocabulary> {
    let text = read(path)?;
    let mut grams = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let g = tokenize(line);
        if g.len() != n {
            bail!("{}:{}: expected {n} tokens, found {}", path.display(), i + 1, g.len());
        }
        grams.push(g);
    }
    Ok(NgramVocabulary::from_grams(n, grams)?)
}

/// `token v1 v2 … vd` per line; every line must have the same `d`.
pub fn parse_embeddings(text: &str, origin: &str) -> Result<EmbeddingTable> {
    let mut table: Option<EmbeddingTable> = None;
    for (i, line) in text.lines().enumerate() {
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else { continue };
        let vector = fields
            .map(|f| f.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| anyhow!("{origin}:{}: {e}", i + 1))?;
        if vector.is_empty() {
            bail!("{origin}:{}: token {token:?} has no vector", i + 1);
        }
        let t = table.get_or_insert_with(|| EmbeddingTable::new(vector.len()));
        t.insert(token.to_lowercase(), vector)
            .map_err(|e| anyhow!("{origin}:{}: {e}", i + 1))?;
    }
    table.ok_or_else(|| anyhow!("{origin}: no word vectors"))
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingTable> {
    parse_embeddings(&read(path)?, &path.display().to_string())
}
