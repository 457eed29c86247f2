//! Two-level multi-branch residual block.

use super::ecbam::Ecbam;
use super::layers::{Builder, Conv2d, Init, ResUnit};
use crate::error::{invalid, Result};
use crate::tensor::Tensor;

/// Kernel sizes of the four parallel branches at both levels.
pub const BRANCH_KERNELS: [usize; 4] = [1, 3, 5, 7];

/// Second level: four residual units with kernels 1/3/5/7 on `c` channels,
/// concatenated and fused back to `c` channels by attention, plus a skip.
#[derive(Clone, Debug)]
pub struct Level2 {
    pub(crate) units: Vec<ResUnit>,
    pub(crate) attention: Ecbam,
}

impl Level2 {
    fn build(b: &mut Builder, name: &str, c: usize, reduction: usize, init: Init) -> Result<Self> {
        let mut s = b.scope(name);
        let units = BRANCH_KERNELS
            .iter()
            .enumerate()
            .map(|(i, &k)| ResUnit::build(&mut s, &format!("unit{i}"), c, k, init))
            .collect::<Result<_>>()?;
        let attention = Ecbam::build(&mut s, "ecbam", 4 * c, c, reduction, init)?;
        Ok(Level2 { units, attention })
    }

    pub fn forward(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        let parts = self.units.iter().map(|u| u.forward(x)).collect::<Result<Vec<_>>>()?;
        x.add(&self.attention.forward(&Tensor::concat(&parts, 1)?)?)
    }
}

/// One first-level branch: a leading `k x k` convolution to `F/4`
/// channels followed by a second-level block.
#[derive(Clone, Debug)]
pub struct Branch {
    pub(crate) lead: Conv2d,
    pub(crate) inner: Level2,
}

impl Branch {
    pub fn forward(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.inner.forward(&self.lead.forward(x)?.mish())
    }
}

/// Four first-level branches with kernels 1/3/5/7, concatenated back to
/// `F` channels, passed through attention and added to the block input.
#[derive(Clone, Debug)]
pub struct Mul2Res {
    width: usize,
    pub(crate) branches: Vec<Branch>,
    pub(crate) attention: Ecbam,
}

impl Mul2Res {
    pub(crate) fn build(b: &mut Builder, name: &str, width: usize, reduction: usize, init: Init) -> Result<Self> {
        if width < 4 || width % 4 != 0 {
            return Err(invalid(format!("multi-branch width {width} must be a positive multiple of 4")));
        }
        let c = width / 4;
        let mut s = b.scope(name);
        let mut branches = Vec::with_capacity(4);
        for (i, &k) in BRANCH_KERNELS.iter().enumerate() {
            let mut bs = s.scope(&format!("branch{i}"));
            branches.push(Branch {
                lead: bs.conv("lead", width, c, k, 1, init)?,
                inner: Level2::build(&mut bs, "level2", c, reduction, init)?,
            });
        }
        let attention = Ecbam::build(&mut s, "ecbam", width, width, reduction, init)?;
        Ok(Mul2Res {
            width,
            branches,
            attention,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn forward(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        let parts = self.branches.iter().map(|br| br.forward(x)).collect::<Result<Vec<_>>>()?;
        x.add(&self.attention.forward(&Tensor::concat(&parts, 1)?)?)
    }
}
