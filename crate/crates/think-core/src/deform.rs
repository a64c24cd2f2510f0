//! Discretely-deformable convolution and the multi-head semantics extractor.
//!
//! For an input `X` of `n` rows (tokens) by `m` columns (embedding dims) a
//! single head computes
//!
//! ```text
//! M_f     = conv(X, K)                 L × n   (valid, stride 1, L = n - k + 1)
//! P       = softmax_rows(M_fᵀ · W)     n × n   P[i, j]: token j moves to position i
//! P_h     = onehot(argmax_rows(P))     n × n   straight-through: dP_h/dP = I
//! X_def   = P_h · X                    n × m   row i is a copy of one row of X
//! f_final = conv(X_def, K_final)       L × p
//! ```
//!
//! and the extractor concatenates the flattened `f_final` of every head.
//! Every head reads the full input with its own parameters.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, RngCore};

#[cfg(not(feature = "std"))]
#[allow(unused_imports)]
use num_traits::Float;
use crate::matrix::{affine, affine_backward, dot};
use crate::params::{join, ParamRef, Params};
use crate::{Error, Matrix, Result, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SeConfig {
    /// Input rows.
    pub n: usize,
    /// Embedding dimension.
    pub m: usize,
    /// Receptive field (kernel height).
    pub k: usize,
    pub heads: usize,
    /// Output channels of the final convolution.
    pub p: usize,
}

impl SeConfig {
    pub fn new(n: usize, m: usize, k: usize, heads: usize, p: usize) -> Result<Self> {
        let cfg = Self { n, m, k, heads, p };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k > self.n {
            return Err(Error::InvalidConfig(alloc::format!(
                "receptive field k={} must satisfy 1 <= k <= n={}",
                self.k,
                self.n
            )));
        }
        if self.m == 0 || self.heads == 0 || self.p == 0 {
            return Err(Error::InvalidConfig(
                "m, heads and p must all be positive".to_string(),
            ));
        }
        Ok(())
    }

    /// Convolution output length `n - k + 1`.
    pub fn out_len(&self) -> usize {
        self.n - self.k + 1
    }

    /// Length of the concatenated feature vector, `heads * L * p`.
    pub fn feature_len(&self) -> usize {
        self.heads * self.out_len() * self.p
    }
}

/// How the soft translation probabilities are hardened.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Discretizer {
    /// Row argmax of the softmax, straight-through gradient.
    #[default]
    Argmax,
    /// Gumbel noise added to the logits and softmax at temperature `tau`
    /// before the argmax. Only applied when a noise source is supplied.
    Gumbel { tau: f64 },
}

/// Trainable arrays of one head.
///
/// Kernels are stored as `(k·m) × channels` matrices: row `a·m + d` holds the
/// weights for window row `a`, embedding dim `d`. Their logical shape is
/// `(k, m, 1, channels)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DeformHead<T> {
    pub first_kernel: Matrix<T>,
    pub first_bias: Vec<T>,
    pub translation: Matrix<T>,
    pub final_kernel: Matrix<T>,
    pub final_bias: Vec<T>,
}

impl<T: Scalar> DeformHead<T> {
    pub fn zeros(cfg: &SeConfig) -> Self {
        let window = cfg.k * cfg.m;
        Self {
            first_kernel: Matrix::zeros(window, cfg.n),
            first_bias: vec![T::zero(); cfg.n],
            translation: Matrix::zeros(cfg.out_len(), cfg.n),
            final_kernel: Matrix::zeros(window, cfg.p),
            final_bias: vec![T::zero(); cfg.p],
        }
    }

    /// Kernels and translation matrix uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn init<R: Rng + ?Sized>(cfg: &SeConfig, rng: &mut R) -> Self {
        let mut h = Self::zeros(cfg);
        let window = (cfg.k * cfg.m) as f64;
        fill_uniform(h.first_kernel.as_mut_slice(), 1.0 / window.sqrt(), rng);
        fill_uniform(
            h.translation.as_mut_slice(),
            1.0 / (cfg.out_len() as f64).sqrt(),
            rng,
        );
        fill_uniform(h.final_kernel.as_mut_slice(), 1.0 / window.sqrt(), rng);
        h
    }

    fn check(&self, cfg: &SeConfig) -> Result<()> {
        let window = cfg.k * cfg.m;
        let expect = [
            ("first kernel", self.first_kernel.shape(), (window, cfg.n)),
            ("translation matrix", self.translation.shape(), (cfg.out_len(), cfg.n)),
            ("final kernel", self.final_kernel.shape(), (window, cfg.p)),
            ("first bias", (1, self.first_bias.len()), (1, cfg.n)),
            ("final bias", (1, self.final_bias.len()), (1, cfg.p)),
        ];
        for (what, got, want) in expect {
            if got != want {
                return Err(Error::shape(
                    what,
                    alloc::format!("{want:?}"),
                    alloc::format!("{got:?}"),
                ));
            }
        }
        Ok(())
    }

    /// Runs the head on `x` and returns every intermediate.
    ///
    /// `noise` is only consulted in [`Discretizer::Gumbel`] mode.
    pub fn forward(
        &self,
        cfg: &SeConfig,
        x: &Matrix<T>,
        discretizer: Discretizer,
        noise: Option<&mut dyn RngCore>,
    ) -> Result<DeformTrace<T>> {
        check_input(cfg, x)?;
        let m_f = conv_valid(x, &self.first_kernel, &self.first_bias, cfg.k)?;
        let (p, temperature) = match (discretizer, noise) {
            (Discretizer::Gumbel { tau }, Some(rng)) => {
                let mut logits = m_f.transpose().matmul(&self.translation)?;
                if !logits.is_finite() {
                    return Err(Error::NonFinite("translation logits"));
                }
                let tau = T::lit(tau);
                for v in logits.as_mut_slice() {
                    *v = (*v + gumbel(rng)) / tau;
                }
                softmax_rows(&mut logits);
                (logits, tau)
            }
            _ => (translation_probabilities(&m_f, &self.translation)?, T::one()),
        };
        let selected = argmax_rows(&p);
        let x_deform = gather_rows(x, &selected);
        let f_final = conv_valid(&x_deform, &self.final_kernel, &self.final_bias, cfg.k)?;
        Ok(DeformTrace {
            m_f,
            p,
            selected,
            x_deform,
            f_final,
            temperature,
        })
    }

    /// Accumulates parameter gradients into `grads` and the input gradient
    /// into `dx`, given the gradient of the loss w.r.t. `f_final`.
    pub fn backward(
        &self,
        cfg: &SeConfig,
        x: &Matrix<T>,
        trace: &DeformTrace<T>,
        d_final: &Matrix<T>,
        grads: &mut Self,
        dx: &mut Matrix<T>,
    ) {
        let n = cfg.n;
        let mut d_xdef = Matrix::zeros(n, cfg.m);
        conv_valid_backward(
            &trace.x_deform,
            &self.final_kernel,
            cfg.k,
            d_final,
            &mut grads.final_kernel,
            &mut grads.final_bias,
            Some(&mut d_xdef),
        );

        // X_def = P_h X: dP_h = dX_def Xᵀ, dX += P_hᵀ dX_def.
        // Straight-through: dP = dP_h.
        let mut d_p = Matrix::zeros(n, n);
        for i in 0..n {
            let gi = d_xdef.row(i);
            for j in 0..n {
                d_p[(i, j)] = dot(gi, x.row(j));
            }
            let src = trace.selected[i];
            for (a, &b) in dx.row_mut(src).iter_mut().zip(gi) {
                *a += b;
            }
        }

        let d_logits = softmax_rows_backward(&trace.p, &d_p, trace.temperature);

        // logits = M_fᵀ W: dM_f[l, i] = Σ_j dS[i, j] W[l, j]; dW[l, j] += Σ_i M_f[l, i] dS[i, j].
        let l_out = cfg.out_len();
        let mut d_mf = Matrix::zeros(l_out, n);
        for l in 0..l_out {
            let w_row = self.translation.row(l);
            for i in 0..n {
                d_mf[(l, i)] = dot(d_logits.row(i), w_row);
            }
            let gw = grads.translation.row_mut(l);
            for i in 0..n {
                let coef = trace.m_f[(l, i)];
                if coef != T::zero() {
                    for (g, &s) in gw.iter_mut().zip(d_logits.row(i)) {
                        *g += coef * s;
                    }
                }
            }
        }

        conv_valid_backward(
            x,
            &self.first_kernel,
            cfg.k,
            &d_mf,
            &mut grads.first_kernel,
            &mut grads.first_bias,
            Some(dx),
        );
    }
}

impl<T: Scalar> Params<T> for DeformHead<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(ParamRef<'a, T>)) {
        let (window_n, n) = self.first_kernel.shape();
        let (_, p) = self.final_kernel.shape();
        let m = window_n / self.k();
        let k = self.k();
        f(ParamRef {
            name: join(prefix, "first_kernel"),
            shape: vec![k, m, 1, n],
            data: self.first_kernel.as_slice(),
        });
        f(ParamRef {
            name: join(prefix, "first_bias"),
            shape: vec![n],
            data: &self.first_bias,
        });
        f(ParamRef {
            name: join(prefix, "translation"),
            shape: vec![self.translation.rows(), self.translation.cols()],
            data: self.translation.as_slice(),
        });
        f(ParamRef {
            name: join(prefix, "final_kernel"),
            shape: vec![k, m, 1, p],
            data: self.final_kernel.as_slice(),
        });
        f(ParamRef {
            name: join(prefix, "final_bias"),
            shape: vec![p],
            data: &self.final_bias,
        });
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [T])) {
        f(self.first_kernel.as_mut_slice());
        f(&mut self.first_bias);
        f(self.translation.as_mut_slice());
        f(self.final_kernel.as_mut_slice());
        f(&mut self.final_bias);
    }
}

impl<T: Scalar> DeformHead<T> {
    // n = L + k - 1 and L is the translation matrix height.
    fn k(&self) -> usize {
        self.first_kernel.cols() + 1 - self.translation.rows()
    }
}

/// Intermediates of one head's forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct DeformTrace<T> {
    /// First convolution output, `L × n`.
    pub m_f: Matrix<T>,
    /// Translation probabilities, `n × n`, rows sum to one.
    pub p: Matrix<T>,
    /// Column of the one in each row of `P_h`: the source row copied to position `i`.
    pub selected: Vec<usize>,
    pub x_deform: Matrix<T>,
    /// Final convolution output, `L × p`.
    pub f_final: Matrix<T>,
    temperature: T,
}

impl<T: Scalar> DeformTrace<T> {
    /// The hard selection matrix `P_h`.
    pub fn p_hard(&self) -> Matrix<T> {
        one_hot(&self.selected, self.p.cols())
    }
}

/// Multi-head extractor: one [`DeformHead`] per head, outputs concatenated.
#[derive(Clone, Debug, PartialEq)]
pub struct SemanticsExtractor<T> {
    config: SeConfig,
    pub heads: Vec<DeformHead<T>>,
}

impl<T: Scalar> SemanticsExtractor<T> {
    pub fn zeros(config: SeConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            heads: (0..config.heads).map(|_| DeformHead::zeros(&config)).collect(),
            config,
        })
    }

    pub fn init<R: Rng + ?Sized>(config: SeConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            heads: (0..config.heads)
                .map(|_| DeformHead::init(&config, rng))
                .collect(),
            config,
        })
    }

    /// Assembles an extractor from explicit heads; all must match `config`.
    pub fn from_heads(config: SeConfig, heads: Vec<DeformHead<T>>) -> Result<Self> {
        config.validate()?;
        if heads.len() != config.heads {
            return Err(Error::shape("head count", config.heads, heads.len()));
        }
        for h in &heads {
            h.check(&config)?;
        }
        Ok(Self { config, heads })
    }

    pub fn config(&self) -> &SeConfig {
        &self.config
    }

    /// Concatenated, flattened `f_final` of every head plus the per-head traces.
    pub fn forward(
        &self,
        x: &Matrix<T>,
        discretizer: Discretizer,
        mut noise: Option<&mut dyn RngCore>,
    ) -> Result<(Vec<T>, Vec<DeformTrace<T>>)> {
        check_input(&self.config, x)?;
        let mut features = Vec::with_capacity(self.config.feature_len());
        let mut traces = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let t = head.forward(&self.config, x, discretizer, reborrow(&mut noise))?;
            features.extend_from_slice(t.f_final.as_slice());
            traces.push(t);
        }
        Ok((features, traces))
    }

    /// Deterministic feature vector `f_se`.
    pub fn extract(&self, x: &Matrix<T>) -> Result<Vec<T>> {
        self.forward(x, Discretizer::Argmax, None).map(|(f, _)| f)
    }

    /// Deterministic per-head traces.
    pub fn inspect(&self, x: &Matrix<T>) -> Result<Vec<DeformTrace<T>>> {
        self.forward(x, Discretizer::Argmax, None).map(|(_, t)| t)
    }

    pub fn backward(
        &self,
        x: &Matrix<T>,
        traces: &[DeformTrace<T>],
        d_features: &[T],
        grads: &mut Self,
        dx: &mut Matrix<T>,
    ) {
        let chunk = self.config.out_len() * self.config.p;
        for (h, head) in self.heads.iter().enumerate() {
            let d_final = Matrix::from_vec(
                self.config.out_len(),
                self.config.p,
                d_features[h * chunk..(h + 1) * chunk].to_vec(),
            )
            .expect("feature chunk has L*p entries");
            head.backward(&self.config, x, &traces[h], &d_final, &mut grads.heads[h], dx);
        }
    }
}

impl<T: Scalar> Params<T> for SemanticsExtractor<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(ParamRef<'a, T>)) {
        for (i, h) in self.heads.iter().enumerate() {
            h.visit(&join(prefix, &alloc::format!("head{i}")), f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [T])) {
        for h in &mut self.heads {
            h.visit_mut(f);
        }
    }
}

fn check_input<T: Scalar>(cfg: &SeConfig, x: &Matrix<T>) -> Result<()> {
    if x.shape() != (cfg.n, cfg.m) {
        return Err(Error::shape(
            "extractor input",
            alloc::format!("({}, {})", cfg.n, cfg.m),
            alloc::format!("{:?}", x.shape()),
        ));
    }
    Ok(())
}

/// Valid 1-D convolution over rows with stride 1.
///
/// `kernel` is `(k·m) × channels`; output is `(n - k + 1) × channels` with
/// `out[l, c] = bias[c] + Σ_{a<k, d<m} x[l + a, d] · kernel[a·m + d, c]`.
pub fn conv_valid<T: Scalar>(
    x: &Matrix<T>,
    kernel: &Matrix<T>,
    bias: &[T],
    k: usize,
) -> Result<Matrix<T>> {
    let (n, m) = x.shape();
    if k == 0 || k > n {
        return Err(Error::shape("convolution input rows", alloc::format!(">= {k}"), n));
    }
    if kernel.rows() != k * m {
        return Err(Error::shape("convolution kernel rows", k * m, kernel.rows()));
    }
    if bias.len() != kernel.cols() {
        return Err(Error::shape("convolution bias", kernel.cols(), bias.len()));
    }
    let l_out = n - k + 1;
    let mut out = Matrix::zeros(l_out, kernel.cols());
    for l in 0..l_out {
        affine(x.row_block(l, k), kernel, bias, out.row_mut(l));
    }
    Ok(out)
}

/// Backward of [`conv_valid`]; accumulates into the gradient buffers.
pub fn conv_valid_backward<T: Scalar>(
    x: &Matrix<T>,
    kernel: &Matrix<T>,
    k: usize,
    d_out: &Matrix<T>,
    d_kernel: &mut Matrix<T>,
    d_bias: &mut [T],
    mut dx: Option<&mut Matrix<T>>,
) {
    for l in 0..d_out.rows() {
        affine_backward(
            x.row_block(l, k),
            kernel,
            d_out.row(l),
            d_kernel,
            d_bias,
            dx.as_deref_mut().map(|d| d.row_block_mut(l, k)),
        );
    }
}

/// Row-wise softmax of `M_fᵀ · W`.
pub fn translation_probabilities<T: Scalar>(m_f: &Matrix<T>, w: &Matrix<T>) -> Result<Matrix<T>> {
    if m_f.shape() != w.shape() {
        return Err(Error::shape(
            "translation matrix",
            alloc::format!("{:?}", m_f.shape()),
            alloc::format!("{:?}", w.shape()),
        ));
    }
    if !m_f.is_finite() || !w.is_finite() {
        return Err(Error::NonFinite("translation inputs"));
    }
    let mut logits = m_f.transpose().matmul(w)?;
    if !logits.is_finite() {
        return Err(Error::NonFinite("translation logits"));
    }
    softmax_rows(&mut logits);
    Ok(logits)
}

pub(crate) fn softmax_rows<T: Scalar>(m: &mut Matrix<T>) {
    for r in 0..m.rows() {
        softmax_in_place(m.row_mut(r));
    }
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}

fn softmax_rows_backward<T: Scalar>(p: &Matrix<T>, d_p: &Matrix<T>, temperature: T) -> Matrix<T> {
    let mut out = Matrix::zeros(p.rows(), p.cols());
    for i in 0..p.rows() {
        let pr = p.row(i);
        let gr = d_p.row(i);
        let inner = dot(pr, gr);
        for ((o, &pv), &gv) in out.row_mut(i).iter_mut().zip(pr).zip(gr) {
            *o = pv * (gv - inner) / temperature;
        }
    }
    out
}

/// Index of the largest entry per row; ties go to the lowest index.
pub fn argmax_rows<T: Scalar>(p: &Matrix<T>) -> Vec<usize> {
    (0..p.rows()).map(|r| argmax(p.row(r))).collect()
}

pub(crate) fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Forward value of the straight-through discretization: a one-hot row at each
/// row's argmax. The backward pass is the identity, see [`discretize_backward`].
pub fn discretize<T: Scalar>(p: &Matrix<T>) -> Matrix<T> {
    one_hot(&argmax_rows(p), p.cols())
}

/// Gradient w.r.t. `P` given the gradient w.r.t. `P_h`: the identity map.
pub fn discretize_backward<T: Scalar>(d_hard: &Matrix<T>) -> Matrix<T> {
    d_hard.clone()
}

/// `P_h · X`.
pub fn deform<T: Scalar>(p_hard: &Matrix<T>, x: &Matrix<T>) -> Result<Matrix<T>> {
    if p_hard.rows() != p_hard.cols() {
        return Err(Error::shape(
            "selection matrix",
            "square",
            alloc::format!("{:?}", p_hard.shape()),
        ));
    }
    p_hard.matmul(x)
}

fn one_hot<T: Scalar>(selected: &[usize], cols: usize) -> Matrix<T> {
    let mut m = Matrix::zeros(selected.len(), cols);
    for (r, &c) in selected.iter().enumerate() {
        m[(r, c)] = T::one();
    }
    m
}

fn gather_rows<T: Scalar>(x: &Matrix<T>, selected: &[usize]) -> Matrix<T> {
    let mut out = Matrix::zeros(selected.len(), x.cols());
    for (r, &src) in selected.iter().enumerate() {
        out.row_mut(r).copy_from_slice(x.row(src));
    }
    out
}

/// Shortens the trait-object lifetime so the source can be lent repeatedly.
pub(crate) fn reborrow<'s>(noise: &'s mut Option<&mut dyn RngCore>) -> Option<&'s mut dyn RngCore> {
    match noise {
        Some(r) => Some(&mut **r),
        None => None,
    }
}

fn gumbel<T: Scalar>(rng: &mut dyn RngCore) -> T {
    // u in (0, 1)
    let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    T::lit(-num_traits::Float::ln(-num_traits::Float::ln(u)))
}

pub(crate) fn fill_uniform<T: Scalar, R: Rng + ?Sized>(dst: &mut [T], bound: f64, rng: &mut R) {
    for v in dst {
        *v = T::lit(rng.random_range(-bound..bound));
    }
}
