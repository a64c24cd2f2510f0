//! JSON metric reports and the cross-model comparison table.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use think_core::metrics::{mix_coh, EmbeddingScores, MetricSummary, ModelScoreRow, ModelScores};

pub const SCHEMA: &str = "think-metrics/1";
pub const COMPARE_SCHEMA: &str = "think-compare/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingReport {
    pub average: f64,
    pub greedy: f64,
    pub extrema: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub schema: String,
    pub model: String,
    pub items: usize,
    /// Keyed by n.
    pub distinct: BTreeMap<String, f64>,
    pub q_phrase: BTreeMap<String, f64>,
    pub bleu: [f64; 3],
    pub avg_b: f64,
    pub embedding: EmbeddingReport,
    pub avg_e: f64,
    pub coherence: f64,
}

impl MetricReport {
    pub fn new(model: &str, s: &MetricSummary) -> Self {
        let keyed = |v: &[(usize, f64)]| v.iter().map(|(n, x)| (n.to_string(), *x)).collect();
        let EmbeddingScores { average, greedy, extrema } = s.embedding;
        Self {
            schema: SCHEMA.to_string(),
            model: model.to_string(),
            items: s.items,
            distinct: keyed(&s.distinct),
            q_phrase: keyed(&s.q_phrase),
            bleu: s.bleu,
            avg_b: s.avg_b,
            embedding: EmbeddingReport { average, greedy, extrema },
            avg_e: s.avg_e,
            coherence: s.coherence,
        }
    }
}

/// The part of a report that comparison needs. Other fields are ignored so
/// hand-keyed reports with only these columns load too.
#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct ReportScores {
    pub schema: String,
    pub model: String,
    pub avg_b: f64,
    pub avg_e: f64,
    pub coherence: f64,
    #[serde(default)]
    pub q_phrase: BTreeMap<String, f64>,
}

pub fn read_scores(path: &Path) -> Result<ReportScores> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let s: ReportScores = serde_json::from_str(&text)
        .with_context(|| format!("report schema mismatch in {}", path.display()))?;
    if s.schema != SCHEMA {
        bail!(
            "report schema mismatch in {}: expected {SCHEMA:?}, found {:?}",
            path.display(),
            s.schema
        );
    }
    Ok(s)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Comparison {
    pub schema: String,
    pub rows: Vec<ModelScoreRow>,
}

pub fn compare(reports: &[ReportScores]) -> Result<(Comparison, String)> {
    if reports.is_empty() {
        bail!("compare needs at least one report");
    }
    let scores: Vec<ModelScores> = reports
        .iter()
        .map(|r| ModelScores {
            model: r.model.clone(),
            avg_b: r.avg_b,
            avg_e: r.avg_e,
            coherence: r.coherence,
        })
        .collect();
    let rows = mix_coh(&scores);
    let text = table(reports, &rows);
    Ok((
        Comparison {
            schema: COMPARE_SCHEMA.to_string(),
            rows,
        },
        text,
    ))
}

fn table(reports: &[ReportScores], rows: &[ModelScoreRow]) -> String {
    let orders: Vec<String> = {
        let mut o: Vec<String> = reports.iter().flat_map(|r| r.q_phrase.keys().cloned()).collect();
        o.sort_by_key(|k| k.parse::<usize>().unwrap_or(usize::MAX));
        o.dedup();
        o
    };
    let width = rows.iter().map(|r| r.model.len()).max().unwrap_or(5).max(5);
    let mut s = String::new();
    let _ = write!(s, "{:<width$}", "Model");
    for n in &orders {
        let _ = write!(s, "  {:>10}", format!("q_phrase-{n}"));
    }
    let _ = writeln!(s, "  {:>8}  {:>8}  {:>9}  {:>8}", "avg(B)", "avg(E)", "coherence", "mix_coh");
    for (r, rep) in rows.iter().zip(reports) {
        let _ = write!(s, "{:<width$}", r.model);
        for n in &orders {
            match rep.q_phrase.get(n) {
                Some(v) => {
                    let _ = write!(s, "  {v:>10.4}");
                }
                None => {
                    let _ = write!(s, "  {:>10}", "-");
                }
            }
        }
        let _ = writeln!(
            s,
            "  {:>8.4}  {:>8.4}  {:>9.4}  {:>8.4}",
            r.avg_b, r.avg_e, r.coherence, r.mix_coh
        );
    }
    s
}
