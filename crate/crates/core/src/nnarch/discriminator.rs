//! Strided convolutional discriminator emitting feature points.

use super::checkpoint::{Checkpoint, ModelKind};
use super::ernb::Ernb;
use super::layers::{BatchNorm, Builder, Conv2d, Dense, Init};
use super::{NetConfig, Network};
use crate::block::BlockTensor;
use crate::error::{invalid, Result};
use crate::spheregan::FeatureBatch;
use crate::tensor::{no_grad, Params, Tensor};

/// `(width multiplier, stride)` of the batch-normalized stages after the
/// first convolution.
pub const DISC_STAGES: [(usize, usize); 7] = [(1, 2), (2, 1), (2, 2), (4, 1), (4, 2), (8, 1), (8, 2)];

const LEAK: f64 = 0.2;

/// First convolution (no normalization), a non-local block, seven
/// strided conv + batch-norm stages with a second non-local block before
/// the last one, and a dense projection to the feature dimension. The
/// scalar output layer of a classifier discriminator is absent.
#[derive(Debug)]
pub struct Discriminator {
    cfg: NetConfig,
    params: Params<f32>,
    first: Conv2d,
    ernb_first: Ernb,
    stages: Vec<(Conv2d, BatchNorm)>,
    ernb_last: Ernb,
    dense: Dense,
}

impl Discriminator {
    pub fn new(cfg: &NetConfig) -> Result<Self> {
        cfg.validate()?;
        let init = Init::Uniform(1.0);
        let mut params = Params::new();
        // separate stream from the generator built on the same seed
        let mut rng = Builder::seeded_rng(cfg.seed ^ 0xd15c);
        let mut b = Builder::new(&mut params, &mut rng);
        let w = cfg.disc_width;
        let first = b.conv("first", 3, w, 3, 1, init)?;
        let ernb_first = Ernb::build(&mut b, "ernb_first", w, cfg.nonlocal_pool, init, init)?;
        let mut stages = Vec::new();
        let mut ci = w;
        for (i, &(mult, stride)) in DISC_STAGES.iter().enumerate() {
            let co = w * mult;
            let conv = b.conv(&format!("stage{i}.conv"), ci, co, 3, stride, init)?;
            let bn = b.batch_norm(&format!("stage{i}.bn"), co)?;
            stages.push((conv, bn));
            ci = co;
        }
        let ernb_last = Ernb::build(&mut b, "ernb_last", 8 * w, cfg.nonlocal_pool, init, init)?;
        let side = cfg.block_size / 16;
        let dense = b.dense("dense", side * side * 8 * w, cfg.feature_dim, init)?;
        Ok(Discriminator {
            cfg: cfg.clone(),
            params,
            first,
            ernb_first,
            stages,
            ernb_last,
            dense,
        })
    }

    /// Rebuilds the discriminator described by `ckpt` and loads its weights.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let d = Self::new(&ckpt.config)?;
        d.load_checkpoint(ckpt)?;
        Ok(d)
    }

    /// `(B, feature_dim)` feature points for `(B, 3, S, S)` input.
    pub fn forward(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        let (b, c, h, w) = x.dims4()?;
        let s = self.cfg.block_size;
        if c != 3 || h != s || w != s {
            return Err(invalid(format!(
                "discriminator expects (B, 3, {s}, {s}) blocks, got {:?}",
                x.shape()
            )));
        }
        let mut h = self.first.forward(x)?.leaky_relu(LEAK);
        h = self.ernb_first.forward(&h)?;
        let last = self.stages.len() - 1;
        for (i, (conv, bn)) in self.stages.iter().enumerate() {
            if i == last {
                h = self.ernb_last.forward(&h)?;
            }
            h = bn.forward(&conv.forward(&h)?)?.leaky_relu(LEAK);
        }
        let flat = h.reshape(&[b, h.numel() / b])?;
        Ok(self.dense.forward(&flat)?.leaky_relu(LEAK))
    }

    /// Feature points for a batch of blocks, without gradient recording.
    pub fn features(&self, blocks: &BlockTensor) -> Result<FeatureBatch> {
        let _guard = no_grad();
        FeatureBatch::from_tensor(&self.forward(&blocks.to_tensor())?)
    }
}

impl Network for Discriminator {
    const KIND: ModelKind = ModelKind::Discriminator;

    fn config(&self) -> &NetConfig {
        &self.cfg
    }

    fn params(&self) -> &Params<f32> {
        &self.params
    }
}
