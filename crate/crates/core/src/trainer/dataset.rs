//! Aligned degraded/target block pairs.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::block::BlockTensor;
use crate::error::{invalid, Error, Result};

/// The coding tool a dataset is prepared for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tool {
    /// Post-processing of full-resolution decoded frames.
    Pp,
    /// Spatial resolution adaptation: half-resolution coding, then
    /// nearest-neighbour upsampling before enhancement.
    Sra,
}

impl Tool {
    pub fn name(self) -> &'static str {
        match self {
            Tool::Pp => "pp",
            Tool::Sra => "sra",
        }
    }
}

impl fmt::Display for Tool {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Tool {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pp" => Ok(Tool::Pp),
            "sra" => Ok(Tool::Sra),
            _ => Err(invalid(format!("unknown tool `{s}` (expected pp or sra)"))),
        }
    }
}

/// Training pairs for one QP sub-group: `degraded[i]` is the coded
/// version of `target[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PairDataset {
    pub degraded: BlockTensor,
    pub target: BlockTensor,
    pub qp: u32,
    pub tool: Tool,
}

impl PairDataset {
    pub fn new(degraded: BlockTensor, target: BlockTensor, qp: u32, tool: Tool) -> Result<Self> {
        let ds = PairDataset {
            degraded,
            target,
            qp,
            tool,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.degraded.dims() != self.target.dims() {
            return Err(invalid(format!(
                "degraded blocks {:?} and targets {:?} differ",
                self.degraded.dims(),
                self.target.dims()
            )));
        }
        if self.degraded.height() != self.degraded.width() {
            return Err(invalid("training blocks must be square"));
        }
        for (name, b) in [("degraded", &self.degraded), ("target", &self.target)] {
            if !b.all_finite() {
                return Err(Error::NonFinite(format!("{name} blocks")));
            }
            if !b.in_unit_range() {
                return Err(invalid(format!("{name} blocks outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.degraded.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn block_size(&self) -> usize {
        self.degraded.height()
    }

    /// Degraded and target blocks at `idx`.
    pub fn batch(&self, idx: &[usize]) -> (BlockTensor, BlockTensor) {
        (self.degraded.select(idx), self.target.select(idx))
    }

    /// Smooth random colour patterns as targets and a noisy, slightly
    /// blurred copy as the degraded side, for smoke tests and demos.
    pub fn synthetic(n: usize, size: usize, noise: f32, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let plane = size * size;
        let mut target = Vec::with_capacity(n * 3 * plane);
        for _ in 0..n {
            for c in 0..3 {
                let (fx, fy): (f32, f32) = (rng.gen_range(0.5..3.0), rng.gen_range(0.5..3.0));
                let (px, py): (f32, f32) = (rng.gen_range(0.0..std::f32::consts::TAU), rng.gen_range(0.0..std::f32::consts::TAU));
                let base = if c == 0 { 0.5 } else { 0.45 + 0.1 * rng.gen::<f32>() };
                let amp = if c == 0 { 0.35 } else { 0.1 };
                for y in 0..size {
                    for x in 0..size {
                        let u = x as f32 / size as f32 * std::f32::consts::TAU;
                        let v = y as f32 / size as f32 * std::f32::consts::TAU;
                        let val = base + amp * (fx * u + px).sin() * (fy * v + py).cos();
                        target.push(val.clamp(0.0, 1.0));
                    }
                }
            }
        }
        let mut degraded = target.clone();
        for p in 0..n * 3 {
            let src = &target[p * plane..(p + 1) * plane];
            let dst = &mut degraded[p * plane..(p + 1) * plane];
            for y in 0..size {
                for x in 0..size {
                    // horizontal 3-tap blur plus noise
                    let l = src[y * size + x.saturating_sub(1)];
                    let r = src[y * size + (x + 1).min(size - 1)];
                    let blur = 0.25 * l + 0.5 * src[y * size + x] + 0.25 * r;
                    dst[y * size + x] = (blur + noise * rng.gen_range(-1.0f32..1.0)).clamp(0.0, 1.0);
                }
            }
        }
        PairDataset::new(
            BlockTensor::from_planar(n, size, size, degraded)?,
            BlockTensor::from_planar(n, size, size, target)?,
            37,
            Tool::Pp,
        )
    }
}
