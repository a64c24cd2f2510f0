//! Response-quality metrics.
//!
//! - diversity: `distinct-n` and the grammar-gated `q_phrase-n`;
//! - word level: sentence BLEU-{1,2,3} averaged into `avg_B`;
//! - embedding level: embedding-{average, greedy, extrema} averaged into `avg_E`;
//! - sentence level: context/response `coherence`;
//! - `mix_coh`: share-normalized sum of the three levels across a model set.
//!
//! Sequences are token slices; an empty generated response contributes zero to
//! every per-item score.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
#[allow(unused_imports)]
use num_traits::Float;
use crate::corpus::NgramVocabulary;
use crate::{Error, Result};

/// Additive floor used for BLEU precisions with no matching n-gram.
pub const BLEU_SMOOTHING: f64 = 0.1;

fn ngrams<S: AsRef<[String]>>(responses: &[S], n: usize) -> impl Iterator<Item = &[String]> {
    responses
        .iter()
        .flat_map(move |r| r.as_ref().windows(n.max(1)).filter(move |_| n > 0))
}

/// Unique n-grams over all responses divided by total n-gram occurrences.
pub fn distinct_n<S: AsRef<[String]>>(responses: &[S], n: usize) -> f64 {
    let mut total = 0usize;
    let mut unique = BTreeSet::new();
    for g in ngrams(responses, n) {
        total += 1;
        unique.insert(g);
    }
    ratio(unique.len(), total)
}

/// Unique response n-grams that also occur in the reference n-gram vocabulary,
/// divided by total n-gram occurrences. The order is the vocabulary's.
pub fn q_phrase_n<S: AsRef<[String]>>(responses: &[S], vocab: &NgramVocabulary) -> f64 {
    let mut total = 0usize;
    let mut effective = BTreeSet::new();
    for g in ngrams(responses, vocab.order()) {
        total += 1;
        if vocab.contains(g) {
            effective.insert(g);
        }
    }
    ratio(effective.len(), total)
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn counts(tokens: &[String], n: usize) -> BTreeMap<&[String], usize> {
    let mut m = BTreeMap::new();
    for g in tokens.windows(n) {
        *m.entry(g).or_insert(0) += 1;
    }
    m
}

/// Sentence-level cumulative BLEU-`max_n` with uniform weights, brevity
/// penalty and [`BLEU_SMOOTHING`] for zero-match orders.
///
/// Orders longer than the candidate are dropped, so a candidate identical to
/// its reference always scores 1. An empty candidate scores 0.
pub fn sentence_bleu(candidate: &[String], reference: &[String], max_n: usize) -> f64 {
    let c = candidate.len();
    if c == 0 || max_n == 0 {
        return 0.0;
    }
    let orders = max_n.min(c);
    let mut log_sum = 0.0;
    for n in 1..=orders {
        let cand = counts(candidate, n);
        let refc = counts(reference, n);
        let matched: usize = cand
            .iter()
            .map(|(g, &k)| k.min(refc.get(g).copied().unwrap_or(0)))
            .sum();
        let total = (c - n + 1) as f64;
        let p = if matched > 0 {
            matched as f64 / total
        } else {
            BLEU_SMOOTHING / total
        };
        log_sum += p.ln();
    }
    let r = reference.len() as f64;
    let bp = if c as f64 > r || r == 0.0 {
        1.0
    } else {
        (1.0 - r / c as f64).exp()
    };
    bp * (log_sum / orders as f64).exp()
}

/// Mean sentence BLEU-1, BLEU-2, BLEU-3 over aligned pairs.
pub fn bleu_scores<S: AsRef<[String]>>(responses: &[S], references: &[S]) -> [f64; 3] {
    let mut out = [0.0; 3];
    if responses.is_empty() {
        return out;
    }
    for (r, g) in responses.iter().zip(references) {
        for (n, slot) in out.iter_mut().enumerate() {
            *slot += sentence_bleu(r.as_ref(), g.as_ref(), n + 1);
        }
    }
    out.iter_mut().for_each(|v| *v /= responses.len() as f64);
    out
}

/// `avg_B`: mean of BLEU-{1,2,3}.
pub fn bleu_avg<S: AsRef<[String]>>(responses: &[S], references: &[S]) -> f64 {
    bleu_scores(responses, references).iter().sum::<f64>() / 3.0
}

/// Word vectors for the embedding metrics; unknown tokens are zero vectors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            vectors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, token: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::shape("embedding vector", self.dim, vector.len()));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding vector"));
        }
        self.vectors.insert(token.into(), vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(token).map(Vec::as_slice)
    }

    fn mean(&self, tokens: &[String]) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim];
        for t in tokens {
            if let Some(v) = self.get(t) {
                acc.iter_mut().zip(v).for_each(|(a, b)| *a += b);
            }
        }
        if !tokens.is_empty() {
            acc.iter_mut().for_each(|a| *a /= tokens.len() as f64);
        }
        acc
    }

    fn extrema(&self, tokens: &[String]) -> Vec<f64> {
        let mut acc = vec![0.0f64; self.dim];
        for v in tokens.iter().filter_map(|t| self.get(t)) {
            for (a, &x) in acc.iter_mut().zip(v) {
                if x.abs() > a.abs() {
                    *a = x;
                }
            }
        }
        acc
    }
}

/// Cosine similarity; 0 when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

pub fn embedding_average(response: &[String], reference: &[String], table: &EmbeddingTable) -> f64 {
    cosine(&table.mean(response), &table.mean(reference))
}

pub fn embedding_extrema(response: &[String], reference: &[String], table: &EmbeddingTable) -> f64 {
    cosine(&table.extrema(response), &table.extrema(reference))
}

/// Symmetrized greedy matching over in-vocabulary tokens.
pub fn embedding_greedy(response: &[String], reference: &[String], table: &EmbeddingTable) -> f64 {
    let a: Vec<&[f64]> = response.iter().filter_map(|t| table.get(t)).collect();
    let b: Vec<&[f64]> = reference.iter().filter_map(|t| table.get(t)).collect();
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let one_way = |x: &[&[f64]], y: &[&[f64]]| {
        x.iter()
            .map(|u| y.iter().map(|v| cosine(u, v)).fold(f64::NEG_INFINITY, f64::max))
            .sum::<f64>()
            / x.len() as f64
    };
    (one_way(&a, &b) + one_way(&b, &a)) / 2.0
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EmbeddingScores {
    pub average: f64,
    pub greedy: f64,
    pub extrema: f64,
}

impl EmbeddingScores {
    /// `avg_E`: mean of the three.
    pub fn avg(&self) -> f64 {
        (self.average + self.greedy + self.extrema) / 3.0
    }
}

/// Set means of the three embedding metrics.
pub fn embedding_metrics<S: AsRef<[String]>>(
    responses: &[S],
    references: &[S],
    table: &EmbeddingTable,
) -> EmbeddingScores {
    let mut s = EmbeddingScores::default();
    if responses.is_empty() {
        return s;
    }
    for (r, g) in responses.iter().zip(references) {
        let (r, g) = (r.as_ref(), g.as_ref());
        s.average += embedding_average(r, g, table);
        s.greedy += embedding_greedy(r, g, table);
        s.extrema += embedding_extrema(r, g, table);
    }
    let n = responses.len() as f64;
    s.average /= n;
    s.greedy /= n;
    s.extrema /= n;
    s
}

/// Cosine between the mean word vectors of context and response.
pub fn coherence(context: &[String], response: &[String], table: &EmbeddingTable) -> f64 {
    cosine(&table.mean(context), &table.mean(response))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ResponseItem {
    pub context: Vec<String>,
    pub generated: Vec<String>,
    pub reference: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ResponseSet {
    pub items: Vec<ResponseItem>,
}

impl ResponseSet {
    pub fn generated(&self) -> Vec<&[String]> {
        self.items.iter().map(|i| i.generated.as_slice()).collect()
    }

    pub fn references(&self) -> Vec<&[String]> {
        self.items.iter().map(|i| i.reference.as_slice()).collect()
    }
}

/// Every scalar of the metric suite for one response set.
#[derive(Clone, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricSummary {
    pub items: usize,
    /// `(n, distinct-n)`.
    pub distinct: Vec<(usize, f64)>,
    /// `(n, q_phrase-n)`.
    pub q_phrase: Vec<(usize, f64)>,
    pub bleu: [f64; 3],
    pub avg_b: f64,
    pub embedding: EmbeddingScores,
    pub avg_e: f64,
    pub coherence: f64,
}

/// Runs the full suite. `distinct` is reported for every gram vocabulary order.
pub fn evaluate(set: &ResponseSet, gram_vocabs: &[NgramVocabulary], table: &EmbeddingTable) -> MetricSummary {
    let generated = set.generated();
    let references = set.references();
    let bleu = bleu_scores(&generated, &references);
    let embedding = embedding_metrics(&generated, &references, table);
    let coherence = if set.items.is_empty() {
        0.0
    } else {
        set.items
            .iter()
            .map(|i| coherence(&i.context, &i.generated, table))
            .sum::<f64>()
            / set.items.len() as f64
    };
    MetricSummary {
        items: set.items.len(),
        distinct: gram_vocabs
            .iter()
            .map(|v| (v.order(), distinct_n(&generated, v.order())))
            .collect(),
        q_phrase: gram_vocabs
            .iter()
            .map(|v| (v.order(), q_phrase_n(&generated, v)))
            .collect(),
        bleu,
        avg_b: bleu.iter().sum::<f64>() / 3.0,
        avg_e: embedding.avg(),
        embedding,
        coherence,
    }
}

/// Raw per-model inputs to `mix_coh`.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelScores {
    pub model: String,
    pub avg_b: f64,
    pub avg_e: f64,
    pub coherence: f64,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelScoreRow {
    pub model: String,
    pub avg_b: f64,
    pub avg_e: f64,
    pub coherence: f64,
    pub b_score: f64,
    pub e_score: f64,
    pub c_score: f64,
    pub mix_coh: f64,
}

/// Normalizes each component by its sum over the model set; `mix_coh` is the
/// sum of a model's three shares. A component whose sum is zero scores 0 for
/// every model.
pub fn mix_coh(models: &[ModelScores]) -> Vec<ModelScoreRow> {
    let sum_b: f64 = models.iter().map(|m| m.avg_b).sum();
    let sum_e: f64 = models.iter().map(|m| m.avg_e).sum();
    let sum_c: f64 = models.iter().map(|m| m.coherence).sum();
    let share = |v: f64, s: f64| if s == 0.0 { 0.0 } else { v / s };
    models
        .iter()
        .map(|m| {
            let b = share(m.avg_b, sum_b);
            let e = share(m.avg_e, sum_e);
            let c = share(m.coherence, sum_c);
            ModelScoreRow {
                model: m.model.clone(),
                avg_b: m.avg_b,
                avg_e: m.avg_e,
                coherence: m.coherence,
                b_score: b,
                e_score: e,
                c_score: c,
                mix_coh: b + e + c,
            }
        })
        .collect()
}
