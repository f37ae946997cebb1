//! Supervised projection-head training.
//!
//! The head starts at identity (plus small seeded noise), so an untrained head
//! retrieves exactly like the unsupervised baseline. Each epoch shuffles the
//! anchors, and every mini-batch draws one positive and one negative per anchor
//! from its mined sets before taking an SGD step at the cosine-annealed rate.

mod head;
mod loss;
mod schedule;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use head::ProjectionHead;
pub use loss::{
    contrastive_loss, contrastive_loss_with, head_loss, loss_and_gradient, loss_gradient, HeadGradient,
    InBatchNegatives, Triplet,
};
pub use schedule::cosine_annealing_lr;

use crate::embedding_store::EmbeddingSet;
use crate::error::{Error, Result};
use crate::mining::ContrastiveSets;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr0: f64,
    pub lr_min: f64,
    pub batch_size: usize,
    pub momentum: f64,
    pub seed: u64,
    /// Softmax temperature. At 1.0 the easy cross-category negatives dominate
    /// the softmax and the head learns nothing beyond the raw embedding; a low
    /// temperature concentrates the loss on same-category competitors.
    pub temperature: f64,
    /// Std of the gaussian noise added to the identity initialization.
    pub init_noise: f64,
    pub with_bias: bool,
    pub in_batch_negatives: InBatchNegatives,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr0: 0.005,
            lr_min: 0.0,
            batch_size: 32,
            momentum: 0.0,
            seed: 0,
            temperature: 0.05,
            init_noise: 1e-3,
            with_bias: false,
            in_batch_negatives: InBatchNegatives::Anchors,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParams(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            return bad("lr0 must be finite and >= 0");
        }
        if !(self.lr_min >= 0.0 && self.lr_min <= self.lr0) {
            return bad("lr_min must lie in [0, lr0]");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be >= 2");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be positive");
        }
        if !(self.init_noise >= 0.0 && self.init_noise.is_finite()) {
            return bad("init_noise must be finite and >= 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,lr\n");
        for e in &self.epochs {
            writeln!(out, "{},{},{}", e.epoch, e.loss, e.lr).unwrap();
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

pub fn initial_head(dim: usize, config: &TrainConfig) -> ProjectionHead {
    let mut head = ProjectionHead::identity(dim, config.with_bias);
    if config.init_noise > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        for w in head.weights_mut() {
            *w += config.init_noise * rng.sample::<f64, _>(StandardNormal);
        }
    }
    head
}

struct Anchor<'a> {
    vector: &'a [f64],
    positives: Vec<&'a [f64]>,
    negatives: Vec<&'a [f64]>,
}

fn resolve_anchors<'a>(set: &'a EmbeddingSet, sets: &ContrastiveSets) -> Result<Vec<Anchor<'a>>> {
    let lookup = |id: &String| -> Result<&'a [f64]> {
        set.get(id)
            .map(|r| r.vector.as_slice())
            .ok_or_else(|| Error::UnknownId(id.clone()))
    };
    set.sources()
        .map(|r| {
            let mined = sets.get(&r.id).ok_or_else(|| Error::MissingSets(r.id.clone()))?;
            if mined.positives.is_empty() || mined.negatives.is_empty() {
                return Err(Error::MissingSets(r.id.clone()));
            }
            Ok(Anchor {
                vector: &r.vector,
                positives: mined.positives.iter().map(lookup).collect::<Result<_>>()?,
                negatives: mined.negatives.iter().map(lookup).collect::<Result<_>>()?,
            })
        })
        .collect()
}

/// Trains a head over every source-role record of `set` as an anchor.
/// Bit-deterministic given `config.seed`.
pub fn train(set: &EmbeddingSet, sets: &ContrastiveSets, config: &TrainConfig) -> Result<(ProjectionHead, TrainLog)> {
    config.validate()?;
    let anchors = resolve_anchors(set, sets)?;
    if anchors.is_empty() {
        return Err(Error::NoCandidates("training set has no source records".into()));
    }
    let mut head = initial_head(set.dimension(), config);
    let mut velocity = vec![0.0; head.num_params()];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..anchors.len()).collect();
    let mut log = TrainLog::default();

    for t in 0..config.epochs {
        let lr = cosine_annealing_lr(t, config.epochs, config.lr0, config.lr_min);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<Triplet<'_>> = chunk
                .iter()
                .map(|&i| {
                    let a = &anchors[i];
                    let positive = a.positives[rng.random_range(0..a.positives.len())];
                    let negative = a.negatives[rng.random_range(0..a.negatives.len())];
                    Triplet {
                        anchor: a.vector,
                        positive,
                        negative,
                    }
                })
                .collect();
            let (loss, grad) = loss_and_gradient(&batch, &head, config.temperature, config.in_batch_negatives)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch: t + 1 });
            }
            loss_sum += loss * chunk.len() as f64;
            sgd_step(&mut head, &grad, &mut velocity, lr, config.momentum);
        }
        let loss = loss_sum / anchors.len() as f64;
        if !loss.is_finite() || head.weights().iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFiniteLoss { epoch: t + 1 });
        }
        log.epochs.push(EpochLog { epoch: t + 1, loss, lr });
    }
    Ok((head, log))
}

fn sgd_step(head: &mut ProjectionHead, grad: &HeadGradient, velocity: &mut [f64], lr: f64, momentum: f64) {
    let nw = head.weights().len();
    let (vw, vb) = velocity.split_at_mut(nw);
    for ((w, g), v) in head.weights_mut().iter_mut().zip(&grad.weights).zip(vw) {
        *v = momentum * *v + g;
        *w -= lr * *v;
    }
    if let (Some(b), Some(gb)) = (head.bias_mut(), grad.bias.as_ref()) {
        for ((bi, g), v) in b.iter_mut().zip(gb).zip(vb) {
            *v = momentum * *v + g;
            *bi -= lr * *v;
        }
    }
}
