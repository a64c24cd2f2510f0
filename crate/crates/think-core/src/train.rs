//! Teacher-forced training loop.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[cfg(not(feature = "std"))]
#[allow(unused_imports)]
use num_traits::Float;
use crate::corpus::EncodedPair;
use crate::deform::Discretizer;
use crate::model::{active_positions, GeneratorPool};
use crate::optim::{clip_global_norm, lr_schedule, Adam, AdamConfig};
use crate::{Error, Params, Result, Scalar};

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub init_lr: f64,
    pub warmup_steps: u64,
    /// Label-smoothing mass ε.
    pub smoothing: f64,
    /// L2 weight λ.
    pub l2: f64,
    pub seed: u64,
    pub clip_norm: f64,
    pub discretizer: Discretizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            epochs: 100,
            init_lr: 1e-3,
            warmup_steps: 4000,
            smoothing: 0.1,
            l2: 1e-6,
            seed: 0,
            clip_norm: 5.0,
            discretizer: Discretizer::Argmax,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 || self.warmup_steps == 0 {
            return Err(Error::InvalidConfig(
                "batch_size, epochs and warmup_steps must be positive".into(),
            ));
        }
        if self.init_lr.is_nan() || self.init_lr <= 0.0 {
            return Err(Error::InvalidConfig("init_lr must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.smoothing) {
            return Err(Error::InvalidConfig("smoothing must lie in [0, 1)".into()));
        }
        if self.l2.is_nan() || self.l2 < 0.0 || self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return Err(Error::InvalidConfig("l2 must be >= 0 and clip_norm > 0".into()));
        }
        if let Discretizer::Gumbel { tau } = self.discretizer {
            if tau.is_nan() || tau <= 0.0 {
                return Err(Error::InvalidConfig("gumbel temperature must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn lr(&self, step: u64) -> f64 {
        lr_schedule(step, self.init_lr, self.warmup_steps)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    pub mean_loss: f64,
    /// Rate used by the epoch's last step.
    pub lr: f64,
}

pub struct Trainer<T> {
    pub pool: GeneratorPool<T>,
    config: TrainConfig,
    adam: Adam<T>,
    step: u64,
    epoch: usize,
    history: Vec<EpochStats>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(pool: GeneratorPool<T>, config: TrainConfig) -> Result<Self> {
        Self::resume(pool, config, 0, 0)
    }

    /// Continues from a stored optimizer step and epoch count. Adam moments
    /// restart from zero.
    pub fn resume(pool: GeneratorPool<T>, config: TrainConfig, step: u64, epoch: usize) -> Result<Self> {
        config.validate()?;
        let adam = Adam::new(AdamConfig::default(), &pool);
        Ok(Self {
            pool,
            config,
            adam,
            step,
            epoch,
            history: Vec::new(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Optimizer steps taken so far, including any resumed count.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn history(&self) -> &[EpochStats] {
        &self.history
    }

    pub fn into_parts(self) -> (GeneratorPool<T>, Vec<EpochStats>) {
        (self.pool, self.history)
    }

    /// One gradient step on `batch`; returns the batch loss including the L2 term.
    pub fn train_batch(&mut self, batch: &[&EncodedPair], index: usize) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::EmptyData);
        }
        let cfg = self.config;
        let mut grads = self.pool.zeros_like();
        let scale = T::lit(1.0 / batch.len() as f64);
        let smoothing = T::lit(cfg.smoothing);
        let mut noise = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
        noise.set_stream(self.step + 1);
        let mut data_loss = T::zero();
        for pair in batch {
            let noise_ref: Option<&mut dyn rand::RngCore> = match cfg.discretizer {
                Discretizer::Gumbel { .. } => Some(&mut noise),
                Discretizer::Argmax => None,
            };
            data_loss += self.pool.loss_and_grad(
                &pair.context,
                &pair.response,
                smoothing,
                scale,
                &mut grads,
                cfg.discretizer,
                noise_ref,
            )? * scale;
        }
        let loss = if cfg.l2 > 0.0 {
            let lambda = T::lit(cfg.l2);
            let two_lambda = lambda + lambda;
            grads.zip_mut(&self.pool, &mut |_, g, p| {
                for (gv, &pv) in g.iter_mut().zip(p) {
                    *gv += two_lambda * pv;
                }
            });
            data_loss + lambda * self.pool.l2_norm_sq()
        } else {
            data_loss
        };
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch: self.epoch + 1,
                batch: index,
            });
        }
        clip_global_norm(&mut grads, T::lit(cfg.clip_norm));
        self.step += 1;
        let lr = cfg.lr(self.step);
        self.adam.step(&mut self.pool, &grads, lr);
        Ok(loss.as_f64())
    }

    /// One pass over `data` in a seeded shuffled order.
    pub fn train_epoch(&mut self, data: &[EncodedPair]) -> Result<EpochStats> {
        if data.is_empty() {
            return Err(Error::EmptyData);
        }
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(self.epoch as u64);
        order.shuffle(&mut rng);

        let mut total = 0.0;
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(self.config.batch_size).enumerate() {
            let batch: Vec<&EncodedPair> = chunk.iter().map(|&i| &data[i]).collect();
            total += self.train_batch(&batch, b)?;
            batches += 1;
        }
        self.epoch += 1;
        let stats = EpochStats {
            epoch: self.epoch,
            mean_loss: total / batches as f64,
            lr: self.config.lr(self.step),
        };
        self.history.push(stats);
        Ok(stats)
    }

    /// Runs epochs until `config.epochs` have been completed, reporting each.
    pub fn train(
        &mut self,
        data: &[EncodedPair],
        mut on_epoch: impl FnMut(&EpochStats, &GeneratorPool<T>),
    ) -> Result<&[EpochStats]> {
        while self.epoch < self.config.epochs {
            let stats = self.train_epoch(data)?;
            on_epoch(&stats, &self.pool);
        }
        Ok(&self.history)
    }
}

/// Fraction of loss-bearing gold positions (up to and including the first
/// EOS) that free-running greedy generation reproduces.
pub fn greedy_accuracy<T: Scalar>(pool: &GeneratorPool<T>, data: &[EncodedPair]) -> Result<f64> {
    let mut hit = 0usize;
    let mut total = 0usize;
    for pair in data {
        let out = pool.generate(&pair.context)?;
        let active = active_positions(&pair.response);
        total += active;
        hit += out[..active]
            .iter()
            .zip(&pair.response[..active])
            .filter(|(a, b)| a == b)
            .count();
    }
    Ok(if total == 0 { 0.0 } else { hit as f64 / total as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{encode_pair, DialoguePair, Vocabulary};
    use crate::model::ModelConfig;

    fn toy() -> (Vec<EncodedPair>, ModelConfig) {
        let pairs = [
            ("hello there", "hi"),
            ("how are you", "fine thanks"),
            ("what time is it", "noon"),
            ("good night", "sleep well"),
        ]
        .iter()
        .map(|(c, r)| DialoguePair::from_text(c, r).unwrap())
        .collect::<Vec<_>>();
        let vocab = Vocabulary::build(&pairs, 50).unwrap();
        let cfg = ModelConfig {
            c_len: 4,
            r_len: 3,
            vocab_size: vocab.len(),
            embed_dim: 8,
            hidden: 16,
            k: 2,
            heads: 2,
            p: 3,
        };
        (pairs.iter().map(|p| encode_pair(p, &vocab, 4, 3)).collect(), cfg)
    }

    fn train_cfg() -> TrainConfig {
        TrainConfig {
            batch_size: 2,
            epochs: 3,
            init_lr: 0.01,
            warmup_steps: 2,
            seed: 7,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn seeded_runs_are_identical() {
        let (data, cfg) = toy();
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let pool = GeneratorPool::<f64>::init(cfg, &mut rng).unwrap();
            let mut t = Trainer::new(pool, train_cfg()).unwrap();
            t.train(&data, |_, _| {}).unwrap();
            let (pool, hist) = t.into_parts();
            (pool, hist)
        };
        let (p1, h1) = run();
        let (p2, h2) = run();
        assert_eq!(h1, h2);
        assert_eq!(p1, p2);
        assert_eq!(h1.len(), 3);
    }

    #[test]
    fn step_counter_and_lr() {
        let (data, cfg) = toy();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pool = GeneratorPool::<f32>::init(cfg, &mut rng).unwrap();
        let mut t = Trainer::new(pool, train_cfg()).unwrap();
        let s = t.train_epoch(&data).unwrap();
        assert_eq!(t.step(), 2);
        assert_eq!(s.lr, train_cfg().lr(2));
    }

    #[test]
    fn gumbel_training_is_seeded() {
        let (data, cfg) = toy();
        let tc = TrainConfig {
            discretizer: Discretizer::Gumbel { tau: 1.0 },
            ..train_cfg()
        };
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let pool = GeneratorPool::<f64>::init(cfg, &mut rng).unwrap();
            let mut t = Trainer::new(pool, tc).unwrap();
            t.train(&data, |_, _| {}).unwrap().to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn non_finite_loss_names_batch() {
        let (data, cfg) = toy();
        let mut pool = GeneratorPool::<f64>::zeros(cfg).unwrap();
        pool.generators[0].mlp.b2[0] = f64::NAN;
        let mut t = Trainer::new(pool, train_cfg()).unwrap();
        let err = t.train_epoch(&data).unwrap_err();
        assert_eq!(err, Error::NonFiniteLoss { epoch: 1, batch: 0 });
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(TrainConfig { smoothing: 1.0, ..train_cfg() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..train_cfg() }.validate().is_err());
        assert!(TrainConfig { init_lr: 0.0, ..train_cfg() }.validate().is_err());
    }

    #[test]
    fn empty_data_rejected() {
        let (_, cfg) = toy();
        let pool = GeneratorPool::<f32>::zeros(cfg).unwrap();
        let mut t = Trainer::new(pool, train_cfg()).unwrap();
        assert_eq!(t.train_epoch(&[]), Err(Error::EmptyData));
    }
}
