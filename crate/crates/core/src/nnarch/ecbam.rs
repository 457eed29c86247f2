//! Channel and spatial attention followed by concatenation fusion.

use super::layers::{Builder, Conv2d, Init};
use crate::error::{invalid, Error, Result};
use crate::tensor::Tensor;

/// Kernel of the spatial attention convolution.
pub const SPATIAL_KERNEL: usize = 7;

/// Channel attention (shared bottleneck over average and max pooled
/// descriptors) then spatial attention (convolution over channel-wise
/// average and max maps). The gated features are concatenated with the
/// module input and fused by a 1x1 convolution.
#[derive(Clone, Debug)]
pub struct Ecbam {
    channels: usize,
    pub(crate) mlp1: Conv2d,
    pub(crate) mlp2: Conv2d,
    pub(crate) spatial: Conv2d,
    pub(crate) fuse: Conv2d,
}

impl Ecbam {
    pub(crate) fn build(b: &mut Builder, name: &str, c: usize, c_out: usize, reduction: usize, init: Init) -> Result<Self> {
        if reduction == 0 || c % reduction != 0 {
            return Err(invalid(format!("{c} channels not divisible by attention reduction {reduction}")));
        }
        let mut s = b.scope(name);
        let hidden = c / reduction;
        Ok(Ecbam {
            channels: c,
            mlp1: s.conv("mlp1", c, hidden, 1, 1, init)?,
            mlp2: s.conv("mlp2", hidden, c, 1, 1, init)?,
            spatial: s.conv("spatial", 2, 1, SPATIAL_KERNEL, 1, init)?,
            fuse: s.conv("fuse", 2 * c, c_out, 1, 1, init)?,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// `(B, C, 1, 1)` channel gate.
    pub fn channel_gate(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        let b = x.shape()[0];
        let pooled = Tensor::concat(&[x.mean_axes(&[2, 3])?, x.max_axes(&[2, 3])?], 0)?;
        let e = self.mlp2.forward(&self.mlp1.forward(&pooled)?.mish())?;
        Ok(e.narrow(0, 0, b)?.add(&e.narrow(0, b, b)?)?.sigmoid())
    }

    /// `(B, 1, H, W)` spatial gate.
    pub fn spatial_gate(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        let maps = Tensor::concat(&[x.mean_axes(&[1])?, x.max_axes(&[1])?], 1)?;
        Ok(self.spatial.forward(&maps)?.sigmoid())
    }

    pub fn forward(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        let (_, c, _, _) = x.dims4()?;
        if c != self.channels {
            return Err(Error::ShapeMismatch {
                op: "ecbam",
                lhs: x.shape().to_vec(),
                rhs: vec![self.channels],
            });
        }
        let xc = x.mul(&self.channel_gate(x)?)?;
        let xs = xc.mul(&self.spatial_gate(&xc)?)?;
        self.fuse.forward(&Tensor::concat(&[xs, x.clone()], 1)?)
    }
}
