//! Generator pool and control center.
//!
//! Generator `i` (0-based) produces response token `i` from the embedded
//! concatenation of the context and the `i` tokens before it, so it consumes
//! exactly `c_len + i` rows. All generators share one embedding table; every
//! other parameter is private to its position.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, RngCore};

#[cfg(not(feature = "std"))]
#[allow(unused_imports)]
use num_traits::Float;
use crate::corpus::{self, Vocabulary, EOS};
use crate::deform::{argmax, reborrow, fill_uniform, softmax_in_place, DeformTrace, Discretizer, SeConfig, SemanticsExtractor};
use crate::matrix::{affine, affine_backward};
use crate::params::{join, ParamRef, Params};
use crate::{Error, Matrix, Result, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelConfig {
    pub c_len: usize,
    pub r_len: usize,
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    pub k: usize,
    pub heads: usize,
    pub p: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("c_len", self.c_len),
            ("r_len", self.r_len),
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("hidden", self.hidden),
            ("k", self.k),
            ("heads", self.heads),
            ("p", self.p),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::InvalidConfig(alloc::format!("{name} must be positive")));
            }
        }
        if self.k > self.c_len {
            return Err(Error::InvalidConfig(alloc::format!(
                "k={} exceeds c_len={}",
                self.k,
                self.c_len
            )));
        }
        Ok(())
    }

    /// Number of generators, one per response position.
    pub fn generators(&self) -> usize {
        self.r_len
    }

    /// Input rows of generator `position` (0-based).
    pub fn input_rows(&self, position: usize) -> usize {
        self.c_len + position
    }

    pub fn se_config(&self, position: usize) -> SeConfig {
        SeConfig {
            n: self.input_rows(position),
            m: self.embed_dim,
            k: self.k,
            heads: self.heads,
            p: self.p,
        }
    }
}

/// One hidden layer with ReLU; the output layer has no activation.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    pub w1: Matrix<T>,
    pub b1: Vec<T>,
    pub w2: Matrix<T>,
    pub b2: Vec<T>,
}

impl<T: Scalar> Mlp<T> {
    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Self {
            w1: Matrix::zeros(input, hidden),
            b1: vec![T::zero(); hidden],
            w2: Matrix::zeros(hidden, output),
            b2: vec![T::zero(); output],
        }
    }

    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, output: usize, rng: &mut R) -> Self {
        let mut mlp = Self::zeros(input, hidden, output);
        fill_uniform(mlp.w1.as_mut_slice(), 1.0 / (input as f64).sqrt(), rng);
        fill_uniform(mlp.w2.as_mut_slice(), 1.0 / (hidden as f64).sqrt(), rng);
        mlp
    }

    /// Returns `(pre-activation hidden, logits)`.
    pub fn forward(&self, x: &[T]) -> (Vec<T>, Vec<T>) {
        let mut pre = vec![T::zero(); self.b1.len()];
        affine(x, &self.w1, &self.b1, &mut pre);
        let act: Vec<T> = pre.iter().map(|&v| v.max(T::zero())).collect();
        let mut out = vec![T::zero(); self.b2.len()];
        affine(&act, &self.w2, &self.b2, &mut out);
        (pre, out)
    }

    fn backward(&self, x: &[T], pre: &[T], d_out: &[T], grads: &mut Self) -> Vec<T> {
        let act: Vec<T> = pre.iter().map(|&v| v.max(T::zero())).collect();
        let mut d_act = vec![T::zero(); act.len()];
        affine_backward(&act, &self.w2, d_out, &mut grads.w2, &mut grads.b2, Some(&mut d_act));
        for (d, &z) in d_act.iter_mut().zip(pre) {
            if z <= T::zero() {
                *d = T::zero();
            }
        }
        let mut dx = vec![T::zero(); x.len()];
        affine_backward(x, &self.w1, &d_act, &mut grads.w1, &mut grads.b1, Some(&mut dx));
        dx
    }
}

impl<T: Scalar> Params<T> for Mlp<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(ParamRef<'a, T>)) {
        f(ParamRef {
            name: join(prefix, "w1"),
            shape: vec![self.w1.rows(), self.w1.cols()],
            data: self.w1.as_slice(),
        });
        f(ParamRef {
            name: join(prefix, "b1"),
            shape: vec![self.b1.len()],
            data: &self.b1,
        });
        f(ParamRef {
            name: join(prefix, "w2"),
            shape: vec![self.w2.rows(), self.w2.cols()],
            data: self.w2.as_slice(),
        });
        f(ParamRef {
            name: join(prefix, "b2"),
            shape: vec![self.b2.len()],
            data: &self.b2,
        });
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [T])) {
        f(self.w1.as_mut_slice());
        f(&mut self.b1);
        f(self.w2.as_mut_slice());
        f(&mut self.b2);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generator<T> {
    pub extractor: SemanticsExtractor<T>,
    pub mlp: Mlp<T>,
}

impl<T: Scalar> Params<T> for Generator<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(ParamRef<'a, T>)) {
        self.extractor.visit(&join(prefix, "se"), f);
        self.mlp.visit(&join(prefix, "mlp"), f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [T])) {
        self.extractor.visit_mut(f);
        self.mlp.visit_mut(f);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorOutput<T> {
    pub logits: Vec<T>,
    pub token: usize,
}

/// Activations of one generator call, kept for the backward pass.
struct GeneratorCache<T> {
    traces: Vec<DeformTrace<T>>,
    features: Vec<T>,
    hidden_pre: Vec<T>,
    logits: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorPool<T> {
    config: ModelConfig,
    /// Shared `V × m` embedding table.
    pub embedding: Matrix<T>,
    pub generators: Vec<Generator<T>>,
}

impl<T: Scalar> GeneratorPool<T> {
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let generators = (0..config.generators())
            .map(|i| {
                let se = config.se_config(i);
                Ok(Generator {
                    extractor: SemanticsExtractor::zeros(se)?,
                    mlp: Mlp::zeros(se.feature_len(), config.hidden, config.vocab_size),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            embedding: Matrix::zeros(config.vocab_size, config.embed_dim),
            generators,
            config,
        })
    }

    /// Random initialization: embeddings uniform in `±1`, every weight matrix
    /// uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut embedding = Matrix::zeros(config.vocab_size, config.embed_dim);
        fill_uniform(embedding.as_mut_slice(), 1.0, rng);
        let generators = (0..config.generators())
            .map(|i| {
                let se = config.se_config(i);
                Ok(Generator {
                    extractor: SemanticsExtractor::init(se, rng)?,
                    mlp: Mlp::init(se.feature_len(), config.hidden, config.vocab_size, rng),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            config,
            embedding,
            generators,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Embeds a token id sequence, one row per id.
    pub fn embed(&self, ids: &[usize]) -> Result<Matrix<T>> {
        let m = self.config.embed_dim;
        let mut out = Matrix::zeros(ids.len(), m);
        for (r, &id) in ids.iter().enumerate() {
            if id >= self.config.vocab_size {
                return Err(Error::TokenOutOfRange {
                    id,
                    size: self.config.vocab_size,
                });
            }
            out.row_mut(r).copy_from_slice(self.embedding.row(id));
        }
        Ok(out)
    }

    fn check_position(&self, position: usize, x: &Matrix<T>) -> Result<()> {
        if position >= self.generators.len() {
            return Err(Error::InvalidConfig(alloc::format!(
                "generator position {position} out of range (pool has {})",
                self.generators.len()
            )));
        }
        let expected = self.config.input_rows(position);
        if x.rows() != expected {
            return Err(Error::GeneratorInput {
                position,
                expected,
                actual: x.rows(),
            });
        }
        if x.cols() != self.config.embed_dim {
            return Err(Error::shape("generator input width", self.config.embed_dim, x.cols()));
        }
        Ok(())
    }

    fn run_generator(
        &self,
        position: usize,
        x: &Matrix<T>,
        discretizer: Discretizer,
        noise: Option<&mut dyn RngCore>,
    ) -> Result<GeneratorCache<T>> {
        self.check_position(position, x)?;
        let g = &self.generators[position];
        let (features, traces) = g.extractor.forward(x, discretizer, noise)?;
        let (hidden_pre, logits) = g.mlp.forward(&features);
        Ok(GeneratorCache {
            traces,
            features,
            hidden_pre,
            logits,
        })
    }

    /// Logits of generator `position` (0-based) for an embedded input of
    /// `c_len + position` rows.
    pub fn generator_forward(&self, position: usize, x: &Matrix<T>) -> Result<GeneratorOutput<T>> {
        let cache = self.run_generator(position, x, Discretizer::Argmax, None)?;
        if cache.logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("generator logits"));
        }
        Ok(GeneratorOutput {
            token: argmax(&cache.logits),
            logits: cache.logits,
        })
    }

    /// Greedy control-center loop: generator `i` reads the context plus the
    /// `i` tokens emitted so far. Always returns `r_len` ids.
    pub fn generate(&self, context: &[usize]) -> Result<Vec<usize>> {
        self.generate_with_logits(context).map(|(ids, _)| ids)
    }

    /// [`GeneratorPool::generate`] plus the logits row of every step.
    pub fn generate_with_logits(&self, context: &[usize]) -> Result<(Vec<usize>, Matrix<T>)> {
        if context.len() != self.config.c_len {
            return Err(Error::shape("context length", self.config.c_len, context.len()));
        }
        let mut seq: Vec<usize> = context.to_vec();
        let mut logits = Matrix::zeros(self.config.r_len, self.config.vocab_size);
        for i in 0..self.config.r_len {
            let x = self.embed(&seq)?;
            let out = self.generator_forward(i, &x)?;
            logits.row_mut(i).copy_from_slice(&out.logits);
            seq.push(out.token);
        }
        Ok((seq.split_off(self.config.c_len), logits))
    }

    /// Text in, text out: tokenize, encode, generate, cut at EOS, join by spaces.
    pub fn respond(&self, vocab: &Vocabulary, context: &str) -> Result<String> {
        let ids = corpus::encode_context(&corpus::tokenize(context), vocab, self.config.c_len);
        let out = self.generate(&ids)?;
        Ok(vocab.decode_text(&out))
    }

    fn check_pair(&self, context: &[usize], response: &[usize]) -> Result<()> {
        if context.len() != self.config.c_len {
            return Err(Error::shape("context length", self.config.c_len, context.len()));
        }
        if response.len() != self.config.r_len {
            return Err(Error::shape("response length", self.config.r_len, response.len()));
        }
        Ok(())
    }

    /// Row `i` is generator `i` applied to the first `c_len + i` rows of
    /// `Embed(context ++ response)`: gold prefixes only.
    pub fn teacher_forcing_logits(&self, context: &[usize], response: &[usize]) -> Result<Matrix<T>> {
        self.check_pair(context, response)?;
        let full = self.embed_concat(context, response)?;
        let mut out = Matrix::zeros(self.config.r_len, self.config.vocab_size);
        for i in 0..self.config.r_len {
            let x = self.prefix(&full, i);
            let o = self.generator_forward(i, &x)?;
            out.row_mut(i).copy_from_slice(&o.logits);
        }
        Ok(out)
    }

    fn embed_concat(&self, context: &[usize], response: &[usize]) -> Result<Matrix<T>> {
        let mut ids = Vec::with_capacity(context.len() + response.len());
        ids.extend_from_slice(context);
        ids.extend_from_slice(response);
        self.embed(&ids)
    }

    fn prefix(&self, full: &Matrix<T>, position: usize) -> Matrix<T> {
        let rows = self.config.input_rows(position);
        Matrix::from_vec(rows, full.cols(), full.row_block(0, rows).to_vec())
            .expect("prefix block has rows*cols entries")
    }

    /// Teacher-forced label-smoothed cross-entropy of one pair (no L2 term),
    /// with gradients scaled by `scale` accumulated into `grads`.
    #[allow(clippy::too_many_arguments)]
    pub fn loss_and_grad(
        &self,
        context: &[usize],
        response: &[usize],
        smoothing: T,
        scale: T,
        grads: &mut Self,
        discretizer: Discretizer,
        mut noise: Option<&mut dyn RngCore>,
    ) -> Result<T> {
        self.check_pair(context, response)?;
        let ids: Vec<usize> = context.iter().chain(response).copied().collect();
        let full = self.embed(&ids)?;
        let active = active_positions(response);
        let count = T::lit(active as f64);
        let mut total = T::zero();
        for (i, &gold) in response.iter().enumerate().take(active) {
            let x = self.prefix(&full, i);
            let cache = self.run_generator(i, &x, discretizer, reborrow(&mut noise))?;
            let (loss, mut d_logits) = smoothed_cross_entropy(&cache.logits, gold, smoothing);
            total += loss;
            let s = scale / count;
            d_logits.iter_mut().for_each(|v| *v *= s);

            let g = &self.generators[i];
            let gg = &mut grads.generators[i];
            let d_features = g.mlp.backward(&cache.features, &cache.hidden_pre, &d_logits, &mut gg.mlp);
            let mut dx = Matrix::zeros(x.rows(), x.cols());
            g.extractor.backward(&x, &cache.traces, &d_features, &mut gg.extractor, &mut dx);
            for (r, &id) in ids.iter().take(x.rows()).enumerate() {
                for (e, &d) in grads.embedding.row_mut(id).iter_mut().zip(dx.row(r)) {
                    *e += d;
                }
            }
        }
        Ok(total / count)
    }

    /// `Σ θ²` over every parameter, embedding included.
    pub fn l2_norm_sq(&self) -> T {
        self.squared_norm()
    }
}

impl<T: Scalar> Params<T> for GeneratorPool<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(ParamRef<'a, T>)) {
        f(ParamRef {
            name: join(prefix, "embedding"),
            shape: vec![self.embedding.rows(), self.embedding.cols()],
            data: self.embedding.as_slice(),
        });
        for (i, g) in self.generators.iter().enumerate() {
            g.visit(&join(prefix, &alloc::format!("gen{i}")), f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [T])) {
        f(self.embedding.as_mut_slice());
        for g in &mut self.generators {
            g.visit_mut(f);
        }
    }
}

/// Positions that contribute to the loss: everything up to and including the
/// first EOS, or all positions when there is none.
pub fn active_positions(response: &[usize]) -> usize {
    response
        .iter()
        .position(|&t| t == EOS)
        .map_or(response.len(), |i| i + 1)
}

/// Cross-entropy against the smoothed target (`1 - ε` on `gold`,
/// `ε / (V - 1)` elsewhere) and its gradient w.r.t. the logits.
pub fn smoothed_cross_entropy<T: Scalar>(logits: &[T], gold: usize, smoothing: T) -> (T, Vec<T>) {
    let v = logits.len();
    let mut probs = logits.to_vec();
    softmax_in_place(&mut probs);
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let log_z = max + logits.iter().map(|&l| (l - max).exp()).sum::<T>().ln();
    let off = if v > 1 {
        smoothing / T::lit((v - 1) as f64)
    } else {
        T::zero()
    };
    let on = T::one() - smoothing;
    let mut loss = T::zero();
    let mut grad = probs;
    for (j, (g, &l)) in grad.iter_mut().zip(logits).enumerate() {
        let q = if j == gold { on } else { off };
        if q != T::zero() {
            loss += q * (log_z - l);
        }
        *g -= q;
    }
    (loss, grad)
}

/// Mean smoothed cross-entropy over the active positions of `response`, plus
/// `λ · Σ θ²` over the pool's parameters.
pub fn sequence_loss<T: Scalar>(
    logits: &Matrix<T>,
    response: &[usize],
    smoothing: T,
    l2: T,
    pool: &GeneratorPool<T>,
) -> Result<T> {
    if logits.rows() != response.len() {
        return Err(Error::shape("logit rows", response.len(), logits.rows()));
    }
    let active = active_positions(response);
    let mut total = T::zero();
    for (i, &gold) in response.iter().enumerate().take(active) {
        total += smoothed_cross_entropy(logits.row(i), gold, smoothing).0;
    }
    let data = if active == 0 {
        T::zero()
    } else {
        total / T::lit(active as f64)
    };
    let reg = if l2 == T::zero() {
        T::zero()
    } else {
        l2 * pool.l2_norm_sq()
    };
    Ok(data + reg)
}
