//! The enhancement generator.

use super::checkpoint::{Checkpoint, ModelKind};
use super::ernb::Ernb;
use super::layers::{Builder, Conv2d, Init};
use super::mul2res::Mul2Res;
use super::{NetConfig, Network};
use crate::block::BlockTensor;
use crate::error::{invalid, Result};
use crate::tensor::{no_grad, Params, Tensor};

/// Gain of the tail convolution when it is not zero-initialized, keeping
/// the untrained network close to the identity.
const TAIL_GAIN: f64 = 0.1;

/// Blocks per forward pass in [`CveNet::enhance`].
pub const ENHANCE_CHUNK: usize = 4;

/// Head convolution, non-local block, a cascade of multi-branch blocks each
/// followed by a 1x1 convolution over the concatenation of the cascade
/// input and every block output so far, a second non-local block and a
/// tail convolution back to three channels, plus a global skip.
#[derive(Debug)]
pub struct CveNet {
    cfg: NetConfig,
    params: Params<f32>,
    pub(crate) head: Conv2d,
    pub(crate) ernb_in: Ernb,
    pub(crate) blocks: Vec<Mul2Res>,
    pub(crate) cascades: Vec<Conv2d>,
    pub(crate) ernb_out: Ernb,
    pub(crate) tail: Conv2d,
}

impl CveNet {
    pub fn new(cfg: &NetConfig) -> Result<Self> {
        cfg.validate()?;
        Self::build(cfg, Init::Uniform(1.0))
    }

    /// Rebuilds the generator described by `ckpt` and loads its weights.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let g = Self::new(&ckpt.config)?;
        g.load_checkpoint(ckpt)?;
        Ok(g)
    }

    /// Every convolution starts at zero (bias included).
    pub fn zeroed(cfg: &NetConfig) -> Result<Self> {
        cfg.validate()?;
        Self::build(cfg, Init::Zero)
    }

    fn build(cfg: &NetConfig, init: Init) -> Result<Self> {
        let mut params = Params::new();
        let mut rng = Builder::seeded_rng(cfg.seed);
        let mut b = Builder::new(&mut params, &mut rng);
        let f = cfg.width;
        let head = b.conv("head", 3, f, 3, 1, init)?;
        let ernb_in = Ernb::build(&mut b, "ernb_in", f, cfg.nonlocal_pool, init, init)?;
        let mut blocks = Vec::new();
        let mut cascades = Vec::new();
        for i in 0..cfg.num_mul2res {
            blocks.push(Mul2Res::build(&mut b, &format!("mul2res{i}"), f, cfg.ecbam_reduction, init)?);
            cascades.push(b.conv(&format!("cascade{i}"), (i + 2) * f, f, 1, 1, init)?);
        }
        let ernb_out = Ernb::build(&mut b, "ernb_out", f, cfg.nonlocal_pool, init, init)?;
        let tail_init = match init {
            Init::Uniform(g) if !cfg.zero_tail => Init::Uniform(g * TAIL_GAIN),
            _ => Init::Zero,
        };
        let tail = b.conv("tail", f, 3, 3, 1, tail_init)?;
        Ok(CveNet {
            cfg: cfg.clone(),
            params,
            head,
            ernb_in,
            blocks,
            cascades,
            ernb_out,
            tail,
        })
    }

    fn check_input(&self, x: &Tensor<f32>) -> Result<()> {
        let (_, c, h, w) = x.dims4()?;
        let s = self.cfg.block_size;
        if c != 3 || h != s || w != s {
            return Err(invalid(format!(
                "generator expects (B, 3, {s}, {s}) blocks, got {:?}",
                x.shape()
            )));
        }
        Ok(())
    }

    /// Training-path forward over `(B, 3, S, S)`; the output is not clipped.
    pub fn forward(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.check_input(x)?;
        let h = self.head.forward(x)?.mish();
        let x0 = self.ernb_in.forward(&h)?;
        let mut cascade = vec![x0.clone()];
        let mut cur = x0;
        for (block, fuse) in self.blocks.iter().zip(&self.cascades) {
            cascade.push(block.forward(&cur)?);
            cur = fuse.forward(&Tensor::concat(&cascade, 1)?)?.mish();
        }
        let h = self.ernb_out.forward(&cur)?;
        self.tail.forward(&h)?.add(x)
    }

    /// Inference over blocks: no gradient recording, output clipped to [0, 1].
    pub fn enhance(&self, blocks: &BlockTensor) -> Result<BlockTensor> {
        let _guard = no_grad();
        let mut out = Vec::new();
        for start in (0..blocks.batch()).step_by(ENHANCE_CHUNK) {
            let idx: Vec<usize> = (start..(start + ENHANCE_CHUNK).min(blocks.batch())).collect();
            let y = self.forward(&blocks.select(&idx).to_tensor())?;
            out.push(BlockTensor::from_tensor(&y)?);
        }
        if out.is_empty() {
            return Err(invalid("no blocks to enhance"));
        }
        let mut joined = BlockTensor::stack(&out)?;
        joined.clip_unit();
        Ok(joined)
    }
}

impl Network for CveNet {
    const KIND: ModelKind = ModelKind::Generator;

    fn config(&self) -> &NetConfig {
        &self.cfg
    }

    fn params(&self) -> &Params<f32> {
        &self.params
    }
}
