//! Reference forward pass written with plain nested loops over `Vec<Vec<f64>>`.
//!
//! It reads parameters straight out of the public fields and shares no code
//! with the library's matrix helpers. The straight-through estimator is
//! modelled as `P_h(θ) = onehot(sel₀) - P(θ₀) + P(θ)`, with `sel₀` and `P(θ₀)`
//! frozen at the base point, so central differences of [`surrogate_loss`]
//! give exactly the gradient that straight-through backprop should produce.

#![allow(dead_code)]

use think_core::model::GeneratorPool;
use think_core::{Matrix, Params};

pub type Grid = Vec<Vec<f64>>;

pub fn grid(m: &Matrix<f64>) -> Grid {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

/// `out[l][c] = b[c] + Σ_a Σ_d x[l+a][d] · K[a·m+d][c]`
pub fn conv(x: &Grid, kernel: &Matrix<f64>, bias: &[f64], k: usize) -> Grid {
    let m = x[0].len();
    let len = x.len() + 1 - k;
    let mut out = vec![vec![0.0; bias.len()]; len];
    for l in 0..len {
        for c in 0..bias.len() {
            let mut s = bias[c];
            for a in 0..k {
                for d in 0..m {
                    s += x[l + a][d] * kernel[(a * m + d, c)];
                }
            }
            out[l][c] = s;
        }
    }
    out
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

/// `softmax_row(M_fᵀ · W)`
pub fn probs(m_f: &Grid, w: &Matrix<f64>) -> Grid {
    let n = w.cols();
    (0..n)
        .map(|i| {
            let logits: Vec<f64> = (0..n)
                .map(|j| (0..m_f.len()).map(|l| m_f[l][i] * w[(l, j)]).sum())
                .collect();
            softmax(&logits)
        })
        .collect()
}

pub fn first_max(v: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

/// Distance between the largest and second-largest entry.
pub fn top_gap(v: &[f64]) -> f64 {
    let b = first_max(v);
    let second = v
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != b)
        .map(|(_, &x)| x)
        .fold(f64::NEG_INFINITY, f64::max);
    v[b] - second
}

/// Base-point quantities held constant by the straight-through surrogate,
/// indexed `[generator][head]`.
#[derive(Clone, Debug)]
pub struct Frozen {
    pub p0: Vec<Vec<Grid>>,
    pub sel: Vec<Vec<Vec<usize>>>,
}

pub struct Step {
    pub logits: Vec<f64>,
    /// Hidden pre-activations, used to stay away from ReLU kinks.
    pub hidden: Vec<f64>,
    /// Smallest top-1/top-2 gap over every row of every head's `P`.
    pub min_gap: f64,
}

fn embed(pool: &GeneratorPool<f64>, ids: &[usize]) -> Grid {
    ids.iter().map(|&t| pool.embedding.row(t).to_vec()).collect()
}

fn kernel_height(kernel: &Matrix<f64>, m: usize) -> usize {
    kernel.rows() / m
}

/// Generator `pos` on input `x`. With `frozen = None` the hard selection is
/// the argmax of the current `P`, which is the plain inference forward.
pub fn generator(
    pool: &GeneratorPool<f64>,
    pos: usize,
    x: &Grid,
    frozen: Option<(&[Grid], &[Vec<usize>])>,
) -> (Step, Vec<Grid>, Vec<Vec<usize>>) {
    let g = &pool.generators[pos];
    let n = x.len();
    let m = x[0].len();
    let mut features = Vec::new();
    let mut all_p = Vec::new();
    let mut all_sel = Vec::new();
    let mut min_gap = f64::INFINITY;
    for (h, head) in g.extractor.heads.iter().enumerate() {
        let k = kernel_height(&head.first_kernel, m);
        let m_f = conv(x, &head.first_kernel, &head.first_bias, k);
        let p = probs(&m_f, &head.translation);
        for row in &p {
            min_gap = min_gap.min(top_gap(row));
        }
        let (p0, sel): (Grid, Vec<usize>) = match frozen {
            Some((p0s, sels)) => (p0s[h].clone(), sels[h].clone()),
            None => (p.clone(), p.iter().map(|r| first_max(r)).collect()),
        };
        let mut x_def = vec![vec![0.0; m]; n];
        for i in 0..n {
            for j in 0..n {
                let hard = if sel[i] == j { 1.0 } else { 0.0 };
                let ph = hard - p0[i][j] + p[i][j];
                for d in 0..m {
                    x_def[i][d] += ph * x[j][d];
                }
            }
        }
        let f = conv(&x_def, &head.final_kernel, &head.final_bias, k);
        for row in &f {
            features.extend_from_slice(row);
        }
        all_p.push(p);
        all_sel.push(sel);
    }
    let mlp = &g.mlp;
    let hidden: Vec<f64> = (0..mlp.b1.len())
        .map(|j| mlp.b1[j] + (0..features.len()).map(|i| features[i] * mlp.w1[(i, j)]).sum::<f64>())
        .collect();
    let logits: Vec<f64> = (0..mlp.b2.len())
        .map(|j| {
            mlp.b2[j]
                + (0..hidden.len())
                    .map(|i| hidden[i].max(0.0) * mlp.w2[(i, j)])
                    .sum::<f64>()
        })
        .collect();
    (Step { logits, hidden, min_gap }, all_p, all_sel)
}

pub fn active(response: &[usize]) -> usize {
    match response.iter().position(|&t| t == 2) {
        Some(i) => i + 1,
        None => response.len(),
    }
}

/// `Σ_j q_j (log Z - l_j)` with `q = 1-ε` on gold and `ε/(V-1)` elsewhere.
pub fn smoothed_ce(logits: &[f64], gold: usize, eps: f64) -> f64 {
    let v = logits.len();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_z = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    (0..v)
        .map(|j| {
            let q = if j == gold { 1.0 - eps } else { eps / (v - 1) as f64 };
            q * (log_z - logits[j])
        })
        .sum()
}

fn prefix_ids(context: &[usize], response: &[usize], pos: usize) -> Vec<usize> {
    context.iter().chain(&response[..pos]).copied().collect()
}

/// Freezes the base-point selections for every active generator.
pub fn freeze(pool: &GeneratorPool<f64>, context: &[usize], response: &[usize]) -> Frozen {
    let mut p0 = Vec::new();
    let mut sel = Vec::new();
    for pos in 0..active(response) {
        let x = embed(pool, &prefix_ids(context, response, pos));
        let (_, p, s) = generator(pool, pos, &x, None);
        p0.push(p);
        sel.push(s);
    }
    Frozen { p0, sel }
}

/// Teacher-forced mean loss under the straight-through surrogate, plus the
/// smallest ReLU margin and argmax gap seen on the way.
pub fn surrogate_loss(
    pool: &GeneratorPool<f64>,
    context: &[usize],
    response: &[usize],
    eps: f64,
    frozen: &Frozen,
) -> (f64, f64, f64) {
    let act = active(response);
    let mut total = 0.0;
    let mut margin = f64::INFINITY;
    let mut gap = f64::INFINITY;
    for pos in 0..act {
        let x = embed(pool, &prefix_ids(context, response, pos));
        let (step, _, _) = generator(pool, pos, &x, Some((&frozen.p0[pos], &frozen.sel[pos])));
        total += smoothed_ce(&step.logits, response[pos], eps);
        margin = step.hidden.iter().fold(margin, |a, h| a.min(h.abs()));
        gap = gap.min(step.min_gap);
    }
    (total / act as f64, margin, gap)
}

/// Logits of generator `pos` under plain argmax inference.
pub fn inference_logits(pool: &GeneratorPool<f64>, ids: &[usize], pos: usize) -> Vec<f64> {
    generator(pool, pos, &embed(pool, ids), None).0.logits
}

/// Adds `delta` to the `index`-th scalar parameter in visit order.
pub fn nudge<P: Params<f64>>(params: &mut P, index: usize, delta: f64) {
    let mut offset = 0;
    params.visit_mut(&mut |s| {
        if index >= offset && index < offset + s.len() {
            s[index - offset] += delta;
        }
        offset += s.len();
    });
}

/// Central differences of the surrogate loss for every parameter.
pub fn numeric_gradient(
    pool: &GeneratorPool<f64>,
    context: &[usize],
    response: &[usize],
    eps: f64,
    h: f64,
) -> Vec<f64> {
    let frozen = freeze(pool, context, response);
    let mut work = pool.clone();
    (0..pool.param_count())
        .map(|i| {
            nudge(&mut work, i, h);
            let up = surrogate_loss(&work, context, response, eps, &frozen).0;
            nudge(&mut work, i, -2.0 * h);
            let down = surrogate_loss(&work, context, response, eps, &frozen).0;
            nudge(&mut work, i, h);
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖a - b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

pub struct Instance {
    pub pool: GeneratorPool<f64>,
    pub context: Vec<usize>,
    pub response: Vec<usize>,
}

/// A small random pool and teacher-forcing pair. Token ids cover the whole
/// vocabulary, EOS included, so masking is exercised too.
pub fn random_instance(seed: u64) -> Instance {
    use rand::{Rng, SeedableRng};
    use think_core::model::ModelConfig;

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let c_len = rng.random_range(2..=4);
    let cfg = ModelConfig {
        c_len,
        r_len: rng.random_range(1..=3),
        vocab_size: rng.random_range(5..=8),
        embed_dim: rng.random_range(2..=4),
        hidden: rng.random_range(3..=6),
        k: rng.random_range(1..=c_len.min(3)),
        heads: rng.random_range(1..=2),
        p: rng.random_range(1..=3),
    };
    let mut pool = GeneratorPool::<f64>::init(cfg, &mut rng).expect("valid config");
    // Non-zero biases so every array gets a generic gradient.
    pool.visit_mut(&mut |s| {
        for v in s.iter_mut() {
            if *v == 0.0 {
                *v = rng.random_range(-0.5..0.5);
            }
        }
    });
    let context = (0..cfg.c_len).map(|_| rng.random_range(0..cfg.vocab_size)).collect();
    let response = (0..cfg.r_len).map(|_| rng.random_range(0..cfg.vocab_size)).collect();
    Instance { pool, context, response }
}
