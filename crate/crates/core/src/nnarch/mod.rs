//! The enhancement generator, the feature-point discriminator and their
//! building blocks. Tensors are NCHW `f32`; blocks enter as
//! [`BlockTensor`](crate::BlockTensor) values in Y, Cb, Cr order.

mod checkpoint;
mod discriminator;
mod ecbam;
mod ernb;
mod generator;
pub(crate) mod layers;
mod mul2res;

pub use checkpoint::{Checkpoint, ModelKind, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use discriminator::{Discriminator, DISC_STAGES};
pub use ecbam::{Ecbam, SPATIAL_KERNEL};
pub use ernb::Ernb;
pub use generator::CveNet;
pub use layers::{BatchNorm, Conv2d, Dense, ResUnit};
pub use mul2res::{Branch, Level2, Mul2Res, BRANCH_KERNELS};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Params;

/// Architecture hyperparameters shared by the generator and discriminator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    /// Generator feature-map count `F`.
    pub width: usize,
    pub num_mul2res: usize,
    /// Channel-attention bottleneck ratio.
    pub ecbam_reduction: usize,
    pub seed: u64,
    /// Max-pool factor applied to non-local keys and values.
    pub nonlocal_pool: usize,
    /// Spatial side of the square input blocks.
    pub block_size: usize,
    /// Start the generator's tail convolution at zero, making it the
    /// identity map through the global skip.
    pub zero_tail: bool,
    /// Discriminator base width (64 in the strided stack it follows).
    pub disc_width: usize,
    /// Dimension of the discriminator's feature points.
    pub feature_dim: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            width: 64,
            num_mul2res: 4,
            ecbam_reduction: 16,
            seed: 0,
            nonlocal_pool: 2,
            block_size: 96,
            zero_tail: false,
            disc_width: 64,
            feature_dim: 1024,
        }
    }
}

impl NetConfig {
    /// A small configuration for tests and desk-scale runs.
    pub fn desk(width: usize, block_size: usize) -> Self {
        NetConfig {
            width,
            num_mul2res: 2,
            ecbam_reduction: 2,
            nonlocal_pool: 4,
            block_size,
            disc_width: 4,
            feature_dim: 32,
            ..NetConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.width < 4 || self.width % 4 != 0 {
            return fail(format!("width {} must be a positive multiple of 4", self.width));
        }
        if self.num_mul2res == 0 {
            return fail("at least one multi-branch block is required".into());
        }
        if self.ecbam_reduction == 0 || self.width % self.ecbam_reduction != 0 {
            return fail(format!(
                "width {} not divisible by attention reduction {}",
                self.width, self.ecbam_reduction
            ));
        }
        if self.nonlocal_pool == 0 {
            return fail("non-local pooling factor must be positive".into());
        }
        if self.block_size < 16 || self.block_size % 16 != 0 {
            return fail(format!("block size {} must be a positive multiple of 16", self.block_size));
        }
        if self.disc_width < 2 || self.disc_width % 2 != 0 {
            return fail(format!("discriminator width {} must be even", self.disc_width));
        }
        if self.feature_dim == 0 {
            return fail("feature dimension must be positive".into());
        }
        Ok(())
    }
}

/// Common surface of trainable networks.
pub trait Network {
    const KIND: ModelKind;

    fn config(&self) -> &NetConfig;

    fn params(&self) -> &Params<f32>;

    fn parameter_count(&self) -> usize {
        self.params().num_elements()
    }

    fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::from_params(Self::KIND, self.config(), self.params())
    }

    /// Overwrites parameters from `ckpt`, rejecting a different kind,
    /// configuration or parameter layout.
    fn load_checkpoint(&self, ckpt: &Checkpoint) -> Result<()> {
        ckpt.apply(Self::KIND, self.config(), self.params())
    }
}

/// `x * tanh(softplus(x))`
pub fn mish(x: f64) -> f64 {
    let sp = if x > 20.0 { x } else { x.exp().ln_1p() };
    x * sp.tanh()
}
