//! Deformation traces of one sentence: which source row each position copies.

use std::fmt::Write as _;

use anyhow::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use think_core::corpus::{encode_context, tokenize, Vocabulary, PAD_TOKEN};
use think_core::model::GeneratorPool;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadTrace {
    pub head: usize,
    /// `selected[i]` is the source row copied into position `i`.
    pub selected: Vec<usize>,
    /// Soft translation probabilities `P`, row per target position.
    pub p: Vec<Vec<f32>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InspectReport {
    pub sentence: String,
    /// Tokens as fed to the extractor, padded to the context length.
    pub tokens: Vec<String>,
    pub truncated: bool,
    pub generator: usize,
    pub heads: Vec<HeadTrace>,
}

/// Traces of generator 0, whose input is exactly the encoded context.
pub fn inspect(pool: &GeneratorPool<f32>, vocab: &Vocabulary, sentence: &str) -> Result<InspectReport> {
    let c_len = pool.config().c_len;
    let words = tokenize(sentence);
    let truncated = words.len() > c_len;
    if truncated {
        log::warn!(
            "sentence has {} tokens, truncated to the context length {c_len}",
            words.len()
        );
    }
    let ids = encode_context(&words, vocab, c_len);
    let x = pool.embed(&ids)?;
    let traces = pool.generators[0].extractor.inspect(&x)?;
    let tokens = ids
        .iter()
        .map(|&i| vocab.token(i).unwrap_or(PAD_TOKEN).to_string())
        .collect();
    let heads = traces
        .into_iter()
        .enumerate()
        .map(|(h, t)| HeadTrace {
            head: h,
            selected: t.selected,
            p: (0..t.p.rows()).map(|r| t.p.row(r).to_vec()).collect(),
        })
        .collect();
    Ok(InspectReport {
        sentence: sentence.to_string(),
        tokens,
        truncated,
        generator: 0,
        heads,
    })
}

/// One line per head and position: `head <h> pos <i> <token> <- <j> <token>`.
pub fn dump_text(r: &InspectReport) -> String {
    let mut s = String::new();
    if r.truncated {
        let _ = writeln!(s, "# warning: sentence truncated to {} tokens", r.tokens.len());
    }
    for h in &r.heads {
        for (i, &j) in h.selected.iter().enumerate() {
            let _ = writeln!(
                s,
                "head {} pos {i} {} <- {j} {}",
                h.head, r.tokens[i], r.tokens[j]
            );
        }
    }
    s
}

const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf",
];

/// Scatter of (target position, selected source) with seeded jitter of
/// ±0.25 on the abscissa and ±0.125 on the ordinate.
pub fn scatter_svg(r: &InspectReport, seed: u64) -> String {
    let n = r.tokens.len().max(1) as f64;
    let (cell, left, top, right, bottom) = (48.0, 110.0, 30.0, 120.0, 110.0);
    let w = left + n * cell + right;
    let h = top + n * cell + bottom;
    let x_of = |v: f64| left + (v + 0.5) * cell;
    let y_of = |v: f64| top + (v + 0.5) * cell;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    for (i, tok) in r.tokens.iter().enumerate() {
        let c = i as f64;
        let _ = writeln!(
            s,
            r##"<line x1="{x}" y1="{t}" x2="{x}" y2="{b}" stroke="#eee"/><line x1="{l}" y1="{y}" x2="{rr}" y2="{y}" stroke="#eee"/>"##,
            x = x_of(c),
            y = y_of(c),
            t = top,
            b = top + n * cell,
            l = left,
            rr = left + n * cell
        );
        let tok = escape(tok);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{tok}</text>"#,
            left - 6.0,
            y_of(c) + 4.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{x}" y="{y}" text-anchor="end" transform="rotate(-45 {x} {y})">{tok}</text>"#,
            x = x_of(c),
            y = top + n * cell + 14.0
        );
    }
    for hd in &r.heads {
        let color = COLORS[hd.head % COLORS.len()];
        for (i, &j) in hd.selected.iter().enumerate() {
            let dx: f64 = rng.random_range(-0.25..=0.25);
            let dy: f64 = rng.random_range(-0.125..=0.125);
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="5" fill="{color}" fill-opacity="0.75"/>"#,
                x_of(i as f64 + dx),
                y_of(j as f64 + dy)
            );
        }
        let ly = top + 16.0 * hd.head as f64 + 10.0;
        let lx = left + n * cell + 16.0;
        let _ = writeln!(
            s,
            r#"<circle cx="{lx}" cy="{ly}" r="5" fill="{color}"/><text x="{}" y="{}">head {}</text>"#,
            lx + 10.0,
            ly + 4.0,
            hd.head
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">target position</text>"#,
        left + n * cell / 2.0,
        h - 8.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{y}" text-anchor="middle" transform="rotate(-90 14 {y})">selected source</text>"#,
        y = top + n * cell / 2.0
    );
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
