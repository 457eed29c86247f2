//! Batches of normalized 4:4:4 image blocks.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Number of colour channels in a block (Y, Cb, Cr).
pub const CHANNELS: usize = 3;

/// A batch of `B x H x W x 3` YCbCr blocks with samples in `[0, 1]`.
///
/// Indexing follows the `(batch, row, column, channel)` convention; the
/// storage is planar (`B x 3 x H x W`) so it maps onto network tensors
/// without a copy.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockTensor {
    batch: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl BlockTensor {
    /// Builds a batch from planar `B x 3 x H x W` samples.
    pub fn from_planar(batch: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != batch * CHANNELS * height * width {
            return Err(Error::InvalidInput(format!(
                "block batch {batch}x{height}x{width}x{CHANNELS} needs {} samples, got {}",
                batch * CHANNELS * height * width,
                data.len()
            )));
        }
        Ok(BlockTensor {
            batch,
            height,
            width,
            data,
        })
    }

    /// Builds a batch from interleaved `B x H x W x 3` samples.
    pub fn from_interleaved(batch: usize, height: usize, width: usize, data: &[f32]) -> Result<Self> {
        let mut out = Self::filled(batch, height, width, 0.0);
        if data.len() != out.data.len() {
            return Err(Error::InvalidInput(format!(
                "interleaved block batch needs {} samples, got {}",
                out.data.len(),
                data.len()
            )));
        }
        for b in 0..batch {
            for y in 0..height {
                for x in 0..width {
                    for c in 0..CHANNELS {
                        out.set(b, y, x, c, data[((b * height + y) * width + x) * CHANNELS + c]);
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn filled(batch: usize, height: usize, width: usize, v: f32) -> Self {
        BlockTensor {
            batch,
            height,
            width,
            data: vec![v; batch * CHANNELS * height * width],
        }
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// `(B, H, W, C)`
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.batch, self.height, self.width, CHANNELS)
    }

    /// Planar `B x 3 x H x W` samples.
    pub fn planar(&self) -> &[f32] {
        &self.data
    }

    pub fn planar_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    fn offset(&self, b: usize, y: usize, x: usize, c: usize) -> usize {
        ((b * CHANNELS + c) * self.height + y) * self.width + x
    }

    pub fn get(&self, b: usize, y: usize, x: usize, c: usize) -> f32 {
        self.data[self.offset(b, y, x, c)]
    }

    pub fn set(&mut self, b: usize, y: usize, x: usize, c: usize, v: f32) {
        let o = self.offset(b, y, x, c);
        self.data[o] = v;
    }

    /// Interleaved `B x H x W x 3` copy of the samples.
    pub fn to_interleaved(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.data.len());
        for b in 0..self.batch {
            for y in 0..self.height {
                for x in 0..self.width {
                    for c in 0..CHANNELS {
                        out.push(self.get(b, y, x, c));
                    }
                }
            }
        }
        out
    }

    /// One sample of the batch as a single-element batch.
    pub fn sample(&self, b: usize) -> BlockTensor {
        self.select(&[b])
    }

    /// Gathers the listed samples, in order, into a new batch.
    pub fn select(&self, idx: &[usize]) -> BlockTensor {
        let per = CHANNELS * self.height * self.width;
        let mut data = Vec::with_capacity(idx.len() * per);
        for &i in idx {
            data.extend_from_slice(&self.data[i * per..(i + 1) * per]);
        }
        BlockTensor {
            batch: idx.len(),
            height: self.height,
            width: self.width,
            data,
        }
    }

    /// Stacks batches with equal block geometry.
    pub fn stack(parts: &[BlockTensor]) -> Result<BlockTensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidInput("stack of zero block batches".into()))?;
        let mut data = Vec::new();
        let mut batch = 0;
        for p in parts {
            if (p.height, p.width) != (first.height, first.width) {
                return Err(Error::ShapeMismatch {
                    op: "stack blocks",
                    lhs: vec![first.height, first.width],
                    rhs: vec![p.height, p.width],
                });
            }
            data.extend_from_slice(&p.data);
            batch += p.batch;
        }
        Ok(BlockTensor {
            batch,
            height: first.height,
            width: first.width,
            data,
        })
    }

    /// Clamps every sample into `[0, 1]`.
    pub fn clip_unit(&mut self) {
        self.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// True when every sample is finite and inside `[0, 1]`.
    pub fn in_unit_range(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }

    /// Constant NCHW tensor view of the batch.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::from_vec(
            &[self.batch, CHANNELS, self.height, self.width],
            self.data.iter().map(|&v| T::lit(v as f64)).collect(),
        )
        .expect("block geometry is consistent")
    }

    /// Reads a `(B, 3, H, W)` tensor back into a block batch.
    pub fn from_tensor<T: Real>(t: &Tensor<T>) -> Result<BlockTensor> {
        let (n, c, h, w) = t.dims4()?;
        if c != CHANNELS {
            return Err(Error::InvalidInput(format!(
                "block tensor needs {CHANNELS} channels, got {c}"
            )));
        }
        Self::from_planar(n, h, w, t.data().iter().map(|v| v.as_f64() as f32).collect())
    }
}
