//! Post-processing (PP) and spatial resolution adaptation (SRA) workflows.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::codec::{codec_run, CodecAdapter};
use super::convert::{downsample2x, nn_upsample2x, normalized_444};
use super::frame::PlanarFrame;
use super::tiling::{aggregate_blocks, segment_blocks_with, BLOCK_SIZE, OVERLAP};
use crate::block::{BlockTensor, CHANNELS};
use crate::error::{invalid, Result};
use crate::nnarch::{CveNet, Network};
use crate::trainer::{PairDataset, Tool};

/// A coded sequence seen from both sides of the codec.
#[derive(Clone, Debug, PartialEq)]
pub struct Degraded {
    /// Decoder output, at half resolution for SRA.
    pub coded: Vec<PlanarFrame>,
    /// Network input at source resolution: `coded` for PP, its 2x
    /// nearest-neighbour upsampling for SRA.
    pub restored: Vec<PlanarFrame>,
    pub bytes: u64,
}

/// Runs the tool's coding path on `frames` at `qp`.
pub fn degrade(frames: &[PlanarFrame], adapter: &CodecAdapter, qp: u32, tool: Tool) -> Result<Degraded> {
    match tool {
        Tool::Pp => {
            let out = codec_run(frames, adapter, qp)?;
            Ok(Degraded {
                restored: out.frames.clone(),
                coded: out.frames,
                bytes: out.bytes,
            })
        }
        Tool::Sra => {
            let low = frames.iter().map(downsample2x).collect::<Result<Vec<_>>>()?;
            let out = codec_run(&low, adapter, qp)?;
            Ok(Degraded {
                restored: out.frames.iter().map(nn_upsample2x).collect::<Result<_>>()?,
                coded: out.frames,
                bytes: out.bytes,
            })
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PairConfig {
    /// Pairs per QP sub-group.
    pub pairs_per_qp: usize,
    pub block_size: usize,
    pub seed: u64,
}

impl Default for PairConfig {
    fn default() -> Self {
        PairConfig {
            pairs_per_qp: 64,
            block_size: BLOCK_SIZE,
            seed: 0,
        }
    }
}

/// A random crop: source frame index and top-left corner.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Crop {
    pub frame: usize,
    pub x: usize,
    pub y: usize,
}

/// Seeded crop positions shared by every QP sub-group.
pub fn crop_plan(sources: &[PlanarFrame], count: usize, block: usize, seed: u64) -> Result<Vec<Crop>> {
    if sources.is_empty() {
        return Err(invalid("no source frames"));
    }
    if let Some(f) = sources.iter().find(|f| f.width() < block || f.height() < block) {
        return Err(invalid(format!("{}x{} source is smaller than a {block}px crop", f.width(), f.height())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| {
            let frame = rng.gen_range(0..sources.len());
            let f = &sources[frame];
            Crop {
                frame,
                x: rng.gen_range(0..=f.width() - block),
                y: rng.gen_range(0..=f.height() - block),
            }
        })
        .collect())
}

fn crop_blocks(planes: &[Vec<f32>], dims: &[(usize, usize)], crops: &[Crop], bs: usize) -> Result<BlockTensor> {
    let mut data = Vec::with_capacity(crops.len() * CHANNELS * bs * bs);
    for c in crops {
        let (w, h) = dims[c.frame];
        let src = &planes[c.frame];
        for ch in 0..CHANNELS {
            for y in c.y..c.y + bs {
                let row = (ch * h + y) * w;
                data.extend_from_slice(&src[row + c.x..row + c.x + bs]);
            }
        }
    }
    BlockTensor::from_planar(crops.len(), bs, bs, data)
}

/// Aligned degraded/target 4:4:4 crops, one dataset per QP. Each source
/// frame is coded on its own; crops are drawn once from `cfg.seed`.
pub fn build_training_pairs(
    sources: &[PlanarFrame],
    adapter: &CodecAdapter,
    qps: &[u32],
    tool: Tool,
    cfg: &PairConfig,
) -> Result<Vec<PairDataset>> {
    if qps.is_empty() {
        return Err(invalid("no QPs requested"));
    }
    let crops = crop_plan(sources, cfg.pairs_per_qp, cfg.block_size, cfg.seed)?;
    let dims: Vec<_> = sources.iter().map(|f| (f.width(), f.height())).collect();
    let targets = sources.iter().map(normalized_444).collect::<Result<Vec<_>>>()?;
    let target = crop_blocks(&targets, &dims, &crops, cfg.block_size)?;
    qps.iter()
        .map(|&qp| {
            let degraded = sources
                .iter()
                .map(|f| {
                    let d = degrade(std::slice::from_ref(f), adapter, qp, tool)?;
                    normalized_444(&d.restored[0])
                })
                .collect::<Result<Vec<_>>>()?;
            let degraded = crop_blocks(&degraded, &dims, &crops, cfg.block_size)?;
            PairDataset::new(degraded, target.clone(), qp, tool)
        })
        .collect()
}

/// Segment, enhance and re-aggregate each frame with `generator`.
pub fn pp_enhance(frames: &[PlanarFrame], generator: &CveNet) -> Result<Vec<PlanarFrame>> {
    let bs = generator.config().block_size;
    frames
        .iter()
        .map(|f| {
            let (blocks, map) = segment_blocks_with(f, bs, OVERLAP)?;
            aggregate_blocks(&generator.enhance(&blocks)?, &map)
        })
        .collect()
}

/// 2x nearest-neighbour upsampling followed by the PP path.
pub fn sra_restore(frames: &[PlanarFrame], generator: &CveNet) -> Result<Vec<PlanarFrame>> {
    let up = frames.iter().map(nn_upsample2x).collect::<Result<Vec<_>>>()?;
    pp_enhance(&up, generator)
}

/// Applies the tool's decoder-side path to decoder output.
pub fn enhance_decoded(coded: &[PlanarFrame], generator: &CveNet, tool: Tool) -> Result<Vec<PlanarFrame>> {
    match tool {
        Tool::Pp => pp_enhance(coded, generator),
        Tool::Sra => sra_restore(coded, generator),
    }
}
