//! Topic-classification probe: embedding → semantics extractor → one affine
//! layer, trained with cross-entropy. Used to check that the extractor picks
//! out topic keywords.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[cfg(not(feature = "std"))]
#[allow(unused_imports)]
use num_traits::Float;
use crate::corpus::{encode_context, Vocabulary};
use crate::deform::{argmax, fill_uniform, Discretizer, SeConfig, SemanticsExtractor};
use crate::matrix::{affine, affine_backward};
use crate::model::smoothed_cross_entropy;
use crate::optim::{Adam, AdamConfig};
use crate::params::{join, ParamRef, Params};
use crate::{Error, Matrix, Result, Scalar};

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeDataset {
    pub sentences: Vec<Vec<String>>,
    pub labels: Vec<usize>,
    pub label_names: Vec<String>,
}

impl ProbeDataset {
    /// Builds from `(label, tokens)` rows; label ids follow first appearance.
    pub fn from_labeled(rows: impl IntoIterator<Item = (String, Vec<String>)>) -> Result<Self> {
        let mut ds = Self {
            sentences: Vec::new(),
            labels: Vec::new(),
            label_names: Vec::new(),
        };
        for (label, tokens) in rows {
            if tokens.is_empty() {
                return Err(Error::EmptyText("probe sentence"));
            }
            let id = match ds.label_names.iter().position(|l| *l == label) {
                Some(i) => i,
                None => {
                    ds.label_names.push(label);
                    ds.label_names.len() - 1
                }
            };
            ds.sentences.push(tokens);
            ds.labels.push(id);
        }
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sentences.len() != self.labels.len() {
            return Err(Error::shape("probe labels", self.sentences.len(), self.labels.len()));
        }
        if self.sentences.iter().any(Vec::is_empty) {
            return Err(Error::EmptyText("probe sentence"));
        }
        let mut used: Vec<usize> = self.labels.clone();
        used.sort_unstable();
        used.dedup();
        if used.len() < 2 {
            return Err(Error::TooFewLabels(used.len()));
        }
        if used.last().copied().unwrap_or(0) >= self.label_names.len() {
            return Err(Error::InvalidConfig("label id without a name".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn num_labels(&self) -> usize {
        self.label_names.len()
    }
}

const TOPIC_KEYWORDS: [(&str, [&str; 6]); 4] = [
    ("health", ["doctor", "fever", "medicine", "hospital", "headache", "nurse"]),
    ("politics", ["election", "senator", "vote", "parliament", "policy", "minister"]),
    ("finance", ["bank", "loan", "stock", "interest", "invest", "salary"]),
    ("school", ["major", "scholarship", "exam", "teacher", "homework", "campus"]),
];

const FILLER: [&str; 24] = [
    "i", "you", "the", "a", "is", "was", "my", "your", "about", "think", "really", "today",
    "we", "should", "talk", "maybe", "it", "that", "very", "new", "what", "did", "with", "on",
];

/// Sentences of 4 to 8 filler words with exactly one topic keyword at a random
/// position; the keyword alone determines the label.
pub fn synthetic_keyword_dataset(per_topic: usize, seed: u64) -> ProbeDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sentences = Vec::with_capacity(per_topic * TOPIC_KEYWORDS.len());
    let mut labels = Vec::with_capacity(sentences.capacity());
    for (label, (_, keywords)) in TOPIC_KEYWORDS.iter().enumerate() {
        for _ in 0..per_topic {
            let len = rng.random_range(4..=8);
            let mut s: Vec<String> = (0..len)
                .map(|_| FILLER[rng.random_range(0..FILLER.len())].to_string())
                .collect();
            let pos = rng.random_range(0..len);
            s[pos] = keywords[rng.random_range(0..keywords.len())].to_string();
            sentences.push(s);
            labels.push(label);
        }
    }
    ProbeDataset {
        sentences,
        labels,
        label_names: TOPIC_KEYWORDS.iter().map(|(t, _)| t.to_string()).collect(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ProbeConfig {
    /// Padded sentence length (extractor input rows).
    pub max_len: usize,
    pub embed_dim: usize,
    pub k: usize,
    pub heads: usize,
    pub p: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub test_fraction: f64,
    pub seed: u64,
    /// Permute labels across sentences before splitting (chance-level control).
    pub shuffle_labels: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            max_len: 8,
            embed_dim: 16,
            k: 3,
            heads: 2,
            p: 4,
            epochs: 15,
            batch_size: 16,
            lr: 0.01,
            test_fraction: 0.2,
            seed: 0,
            shuffle_labels: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeClassifier<T> {
    pub embedding: Matrix<T>,
    pub extractor: SemanticsExtractor<T>,
    pub weights: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> ProbeClassifier<T> {
    pub fn init<R: Rng + ?Sized>(vocab_size: usize, se: SeConfig, labels: usize, rng: &mut R) -> Result<Self> {
        let mut embedding = Matrix::zeros(vocab_size, se.m);
        fill_uniform(embedding.as_mut_slice(), 1.0, rng);
        let extractor = SemanticsExtractor::init(se, rng)?;
        let mut weights = Matrix::zeros(se.feature_len(), labels);
        fill_uniform(weights.as_mut_slice(), 1.0 / (se.feature_len() as f64).sqrt(), rng);
        Ok(Self {
            embedding,
            extractor,
            weights,
            bias: vec![T::zero(); labels],
        })
    }

    fn embed(&self, ids: &[usize]) -> Matrix<T> {
        Matrix::from_fn(ids.len(), self.embedding.cols(), |r, c| self.embedding[(ids[r], c)])
    }

    pub fn logits(&self, ids: &[usize]) -> Result<Vec<T>> {
        let f = self.extractor.extract(&self.embed(ids))?;
        let mut out = vec![T::zero(); self.bias.len()];
        affine(&f, &self.weights, &self.bias, &mut out);
        Ok(out)
    }

    pub fn predict(&self, ids: &[usize]) -> Result<usize> {
        self.logits(ids).map(|l| argmax(&l))
    }

    /// Cross-entropy of one example; gradients scaled by `scale` accumulate into `grads`.
    pub fn loss_and_grad(&self, ids: &[usize], label: usize, scale: T, grads: &mut Self) -> Result<T> {
        let x = self.embed(ids);
        let (f, traces) = self.extractor.forward(&x, Discretizer::Argmax, None)?;
        let mut logits = vec![T::zero(); self.bias.len()];
        affine(&f, &self.weights, &self.bias, &mut logits);
        let (loss, mut d) = smoothed_cross_entropy(&logits, label, T::zero());
        d.iter_mut().for_each(|v| *v *= scale);
        let mut d_f = vec![T::zero(); f.len()];
        affine_backward(&f, &self.weights, &d, &mut grads.weights, &mut grads.bias, Some(&mut d_f));
        let mut dx = Matrix::zeros(x.rows(), x.cols());
        self.extractor.backward(&x, &traces, &d_f, &mut grads.extractor, &mut dx);
        for (r, &id) in ids.iter().enumerate() {
            for (e, &g) in grads.embedding.row_mut(id).iter_mut().zip(dx.row(r)) {
                *e += g;
            }
        }
        Ok(loss)
    }
}

impl<T: Scalar> Params<T> for ProbeClassifier<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(ParamRef<'a, T>)) {
        f(ParamRef {
            name: join(prefix, "embedding"),
            shape: vec![self.embedding.rows(), self.embedding.cols()],
            data: self.embedding.as_slice(),
        });
        self.extractor.visit(&join(prefix, "se"), f);
        f(ParamRef {
            name: join(prefix, "weights"),
            shape: vec![self.weights.rows(), self.weights.cols()],
            data: self.weights.as_slice(),
        });
        f(ParamRef {
            name: join(prefix, "bias"),
            shape: vec![self.bias.len()],
            data: &self.bias,
        });
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [T])) {
        f(self.embedding.as_mut_slice());
        self.extractor.visit_mut(f);
        f(self.weights.as_mut_slice());
        f(&mut self.bias);
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ClassStats {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// `counts[gold][predicted]`.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn new(labels: usize) -> Self {
        Self {
            counts: vec![vec![0; labels]; labels],
        }
    }

    pub fn record(&mut self, gold: usize, predicted: usize) {
        self.counts[gold][predicted] += 1;
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let correct: usize = (0..self.counts.len()).map(|i| self.counts[i][i]).sum();
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            correct as f64 / total as f64
        }
    }

    /// Per-class precision, recall and F1; undefined ratios are reported as 0.
    pub fn class_stats(&self, names: &[String]) -> Vec<ClassStats> {
        let n = self.counts.len();
        (0..n)
            .map(|c| {
                let tp = self.counts[c][c] as f64;
                let predicted: usize = (0..n).map(|g| self.counts[g][c]).sum();
                let support: usize = self.counts[c].iter().sum();
                let precision = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
                let recall = if support == 0 { 0.0 } else { tp / support as f64 };
                let f1 = if precision + recall == 0.0 {
                    0.0
                } else {
                    2.0 * precision * recall / (precision + recall)
                };
                ClassStats {
                    label: names.get(c).cloned().unwrap_or_else(|| alloc::format!("{c}")),
                    precision,
                    recall,
                    f1,
                    support,
                }
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ProbeReport {
    pub accuracy: f64,
    pub classes: Vec<ClassStats>,
    pub confusion: ConfusionMatrix,
    pub train_size: usize,
    pub test_size: usize,
}

/// Seeded split, training and held-out evaluation.
pub fn run_probe(dataset: &ProbeDataset, cfg: &ProbeConfig) -> Result<(ProbeReport, ProbeClassifier<f32>)> {
    dataset.validate()?;
    if !(0.0 < cfg.test_fraction && cfg.test_fraction < 1.0) {
        return Err(Error::InvalidConfig("test_fraction must lie in (0, 1)".into()));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::InvalidConfig("epochs and batch_size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut labels = dataset.labels.clone();
    if cfg.shuffle_labels {
        labels.shuffle(&mut rng);
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng);
    let test_n = ((dataset.len() as f64) * cfg.test_fraction).round().max(1.0) as usize;
    let (test_idx, train_idx) = order.split_at(test_n.min(dataset.len() - 1));

    let vocab = Vocabulary::from_token_stream(
        train_idx
            .iter()
            .flat_map(|&i| dataset.sentences[i].iter().map(String::as_str)),
        usize::MAX,
    )?;
    let encode = |i: usize| encode_context(&dataset.sentences[i], &vocab, cfg.max_len);
    let train: Vec<(Vec<usize>, usize)> = train_idx.iter().map(|&i| (encode(i), labels[i])).collect();
    let test: Vec<(Vec<usize>, usize)> = test_idx.iter().map(|&i| (encode(i), labels[i])).collect();

    let se = SeConfig::new(cfg.max_len, cfg.embed_dim, cfg.k, cfg.heads, cfg.p)?;
    let mut model = ProbeClassifier::<f32>::init(vocab.len(), se, dataset.num_labels(), &mut rng)?;
    let mut adam = Adam::new(AdamConfig::default(), &model);
    let mut batch_order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        batch_order.shuffle(&mut rng);
        for (b, chunk) in batch_order.chunks(cfg.batch_size).enumerate() {
            let mut grads = model.zeros_like();
            let scale = 1.0 / chunk.len() as f32;
            let mut loss = 0.0f32;
            for &i in chunk {
                loss += model.loss_and_grad(&train[i].0, train[i].1, scale, &mut grads)? * scale;
            }
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch: epoch + 1, batch: b });
            }
            adam.step(&mut model, &grads, cfg.lr);
        }
    }

    let mut confusion = ConfusionMatrix::new(dataset.num_labels());
    for (ids, gold) in &test {
        confusion.record(*gold, model.predict(ids)?);
    }
    Ok((
        ProbeReport {
            accuracy: confusion.accuracy(),
            classes: confusion.class_stats(&dataset.label_names),
            confusion,
            train_size: train.len(),
            test_size: test.len(),
        },
        model,
    ))
}
