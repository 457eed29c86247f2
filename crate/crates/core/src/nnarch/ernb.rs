//! Residual non-local block with concatenation fusion and a long skip.

use super::layers::{Builder, Conv2d, Init, ResUnit};
use crate::error::{invalid, Result};
use crate::tensor::Tensor;

/// Embedded dot-product non-local attention with channel-halved
/// embeddings. Keys and values are max-pooled by `pool` to bound the
/// affinity size. The attended features are concatenated with the input,
/// fused by a 1x1 convolution and a residual unit, projected back and
/// added to the input.
#[derive(Clone, Debug)]
pub struct Ernb {
    channels: usize,
    pool: usize,
    pub(crate) theta: Conv2d,
    pub(crate) phi: Conv2d,
    pub(crate) g: Conv2d,
    pub(crate) fuse_in: Conv2d,
    pub(crate) res: ResUnit,
    pub(crate) fuse_out: Conv2d,
}

impl Ernb {
    pub(crate) fn build(b: &mut Builder, name: &str, c: usize, pool: usize, init: Init, out_init: Init) -> Result<Self> {
        if c < 2 || c % 2 != 0 {
            return Err(invalid(format!("non-local block needs an even channel count, got {c}")));
        }
        if pool == 0 {
            return Err(invalid("non-local pooling factor must be positive"));
        }
        let e = c / 2;
        let mut s = b.scope(name);
        Ok(Ernb {
            channels: c,
            pool,
            theta: s.conv("theta", c, e, 1, 1, init)?,
            phi: s.conv("phi", c, e, 1, 1, init)?,
            g: s.conv("g", c, e, 1, 1, init)?,
            fuse_in: s.conv("fuse_in", c + e, c, 1, 1, init)?,
            res: ResUnit::build(&mut s, "res", c, 3, init)?,
            fuse_out: s.conv("fuse_out", c, c, 1, 1, out_init)?,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    fn pooled(&self, t: Tensor<f32>) -> Result<Tensor<f32>> {
        let (_, _, h, w) = t.dims4()?;
        if self.pool > 1 && h >= self.pool && w >= self.pool {
            t.max_pool2d(self.pool)
        } else {
            Ok(t)
        }
    }

    fn flat(t: &Tensor<f32>) -> Result<Tensor<f32>> {
        let (b, c, h, w) = t.dims4()?;
        t.reshape(&[b, c, h * w])
    }

    /// Row-stochastic `(B, HW, HW')` attention of every position over the
    /// pooled key positions.
    pub fn affinity(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        let q = Self::flat(&self.theta.forward(x)?)?;
        let k = Self::flat(&self.pooled(self.phi.forward(x)?)?)?;
        q.matmul_t(&k, true, false)?.softmax_last()
    }

    /// Attended values `(B, C/2, H, W)`, computed without materializing
    /// the affinity.
    pub fn nonlocal(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        let (b, _, h, w) = x.dims4()?;
        let q = Self::flat(&self.theta.forward(x)?)?;
        let k = Self::flat(&self.pooled(self.phi.forward(x)?)?)?;
        let v = Self::flat(&self.pooled(self.g.forward(x)?)?)?;
        q.attention(&k, &v)?.reshape(&[b, self.channels / 2, h, w])
    }

    pub fn forward(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        let y = self.nonlocal(x)?;
        let z = self.fuse_in.forward(&Tensor::concat(&[x.clone(), y], 1)?)?.mish();
        let z = self.res.forward(&z)?;
        x.add(&self.fuse_out.forward(&z)?)
    }
}
