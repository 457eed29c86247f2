//! Parameterized layers and the deterministic builder that registers them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::tensor::{Params, Tensor, Var};

/// How a layer's weights start out.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Init {
    /// Uniform in `+-gain * sqrt(3 / fan_in)`.
    Uniform(f64),
    Zero,
}

/// Registers named parameters in construction order, drawing initial
/// values from one seeded stream.
pub(crate) struct Builder<'a> {
    params: &'a mut Params<f32>,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a> Builder<'a> {
    pub fn new(params: &'a mut Params<f32>, rng: &'a mut ChaCha8Rng) -> Self {
        Builder {
            params,
            rng,
            prefix: String::new(),
        }
    }

    pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    pub fn scope(&mut self, name: &str) -> Builder<'_> {
        let prefix = self.name(name);
        Builder {
            params: &mut *self.params,
            rng: &mut *self.rng,
            prefix,
        }
    }

    fn name(&self, leaf: &str) -> String {
        if self.prefix.is_empty() {
            leaf.to_string()
        } else {
            format!("{}.{leaf}", self.prefix)
        }
    }

    fn var(&mut self, leaf: &str, shape: &[usize], data: Vec<f32>) -> Result<Var<f32>> {
        let var = Var::new(shape, data)?;
        self.params.insert(self.name(leaf), var.clone())?;
        Ok(var)
    }

    fn uniform(&mut self, n: usize, fan_in: usize, init: Init) -> Vec<f32> {
        match init {
            Init::Zero => vec![0.0; n],
            Init::Uniform(gain) => {
                let b = (gain * (3.0 / fan_in as f64).sqrt()) as f32;
                (0..n).map(|_| self.rng.gen_range(-b..=b)).collect()
            }
        }
    }

    /// Square `k x k` convolution with same-padding and zero bias.
    pub fn conv(&mut self, name: &str, ci: usize, co: usize, k: usize, stride: usize, init: Init) -> Result<Conv2d> {
        if ci == 0 || co == 0 || k % 2 == 0 || stride == 0 {
            return Err(invalid(format!("conv `{name}`: {ci}->{co}, kernel {k}, stride {stride}")));
        }
        let mut b = self.scope(name);
        let w = b.uniform(co * ci * k * k, ci * k * k, init);
        let weight = b.var("weight", &[co, ci, k, k], w)?;
        let bias = b.var("bias", &[co], vec![0.0; co])?;
        Ok(Conv2d {
            weight,
            bias,
            stride,
            pad: k / 2,
        })
    }

    pub fn dense(&mut self, name: &str, din: usize, dout: usize, init: Init) -> Result<Dense> {
        let mut b = self.scope(name);
        let w = b.uniform(dout * din, din, init);
        let weight = b.var("weight", &[dout, din], w)?;
        let bias = b.var("bias", &[1, dout], vec![0.0; dout])?;
        Ok(Dense { weight, bias })
    }

    pub fn batch_norm(&mut self, name: &str, c: usize) -> Result<BatchNorm> {
        let mut b = self.scope(name);
        let gamma = b.var("gamma", &[1, c, 1, 1], vec![1.0; c])?;
        let beta = b.var("beta", &[1, c, 1, 1], vec![0.0; c])?;
        Ok(BatchNorm { gamma, beta })
    }
}

/// 2-D convolution layer over NCHW tensors.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub(crate) weight: Var<f32>,
    pub(crate) bias: Var<f32>,
    stride: usize,
    pad: usize,
}

impl Conv2d {
    pub fn forward(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        x.conv2d(&self.weight.tensor(), Some(&self.bias.tensor()), self.stride, (self.pad, self.pad))
    }

    pub fn weight(&self) -> &Var<f32> {
        &self.weight
    }

    pub fn bias(&self) -> &Var<f32> {
        &self.bias
    }
}

/// Fully connected layer over `(B, D)` rows.
#[derive(Clone, Debug)]
pub struct Dense {
    weight: Var<f32>,
    bias: Var<f32>,
}

impl Dense {
    pub fn forward(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        x.matmul_t(&self.weight.tensor(), false, true)?.add(&self.bias.tensor())
    }
}

/// Batch normalization using the statistics of the current batch.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    gamma: Var<f32>,
    beta: Var<f32>,
}

pub(crate) const BN_EPS: f64 = 1e-5;

impl BatchNorm {
    pub fn forward(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        let mean = x.mean_axes(&[0, 2, 3])?;
        let centered = x.sub(&mean)?;
        let var = centered.sqr().mean_axes(&[0, 2, 3])?;
        let inv = var.affine(1.0, BN_EPS).sqrt().recip();
        centered.mul(&inv)?.mul(&self.gamma.tensor())?.add(&self.beta.tensor())
    }
}

/// `x + mish(c2(mish(c1(x))))` with two `k x k` convolutions.
#[derive(Clone, Debug)]
pub struct ResUnit {
    pub(crate) c1: Conv2d,
    pub(crate) c2: Conv2d,
}

impl ResUnit {
    pub(crate) fn build(b: &mut Builder, name: &str, c: usize, k: usize, init: Init) -> Result<Self> {
        let mut s = b.scope(name);
        Ok(ResUnit {
            c1: s.conv("conv1", c, c, k, 1, init)?,
            c2: s.conv("conv2", c, c, k, 1, init)?,
        })
    }

    pub fn forward(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        let h = self.c1.forward(x)?.mish();
        x.add(&self.c2.forward(&h)?.mish())
    }
}
