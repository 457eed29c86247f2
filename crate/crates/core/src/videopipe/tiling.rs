//! Overlapping block tiling of frames and averaging re-aggregation.

use serde::{Deserialize, Serialize};

use super::convert::{denormalize_444, normalized_444};
use super::frame::{ChromaFormat, PlanarFrame};
use crate::block::{BlockTensor, CHANNELS};
use crate::error::{invalid, Result};

pub const BLOCK_SIZE: usize = 96;
pub const OVERLAP: usize = 4;

/// Block origins along one axis of length `len >= block`: multiples of
/// `stride`, with the final block clamped to end at the edge.
pub fn axis_offsets(len: usize, block: usize, stride: usize) -> Vec<usize> {
    let mut out = vec![0];
    while out.last().unwrap() + block < len {
        let next = (out.last().unwrap() + stride).min(len - block);
        out.push(next);
    }
    out
}

/// Block layout over one frame.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileMap {
    pub frame_width: usize,
    pub frame_height: usize,
    /// Canvas size after replication padding up to one block.
    pub padded_width: usize,
    pub padded_height: usize,
    pub block_size: usize,
    pub overlap: usize,
    pub bit_depth: u8,
    pub chroma: ChromaFormat,
    /// Top-left `(x, y)` of every block, row-major.
    pub origins: Vec<(usize, usize)>,
}

impl TileMap {
    pub fn new(frame_width: usize, frame_height: usize, block_size: usize, overlap: usize) -> Result<Self> {
        if block_size == 0 || overlap >= block_size {
            return Err(invalid(format!("block size {block_size} with overlap {overlap}")));
        }
        if frame_width == 0 || frame_height == 0 {
            return Err(invalid("empty frame"));
        }
        let (pw, ph) = (frame_width.max(block_size), frame_height.max(block_size));
        let stride = block_size - overlap;
        let xs = axis_offsets(pw, block_size, stride);
        let ys = axis_offsets(ph, block_size, stride);
        Ok(TileMap {
            frame_width,
            frame_height,
            padded_width: pw,
            padded_height: ph,
            block_size,
            overlap,
            bit_depth: 8,
            chroma: ChromaFormat::Yuv444,
            origins: ys.iter().flat_map(|&y| xs.iter().map(move |&x| (x, y))).collect(),
        })
    }

    pub fn stride(&self) -> usize {
        self.block_size - self.overlap
    }

    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    /// Number of blocks covering each canvas pixel, row-major.
    pub fn coverage(&self) -> Vec<u32> {
        let mut c = vec![0u32; self.padded_width * self.padded_height];
        let bs = self.block_size;
        for &(ox, oy) in &self.origins {
            for y in oy..oy + bs {
                c[y * self.padded_width + ox..y * self.padded_width + ox + bs]
                    .iter_mut()
                    .for_each(|v| *v += 1);
            }
        }
        c
    }
}

/// Planar canvas of `f` in 4:4:4, edge-replicated to at least one block.
fn padded_canvas(f: &PlanarFrame, map: &TileMap) -> Result<Vec<f32>> {
    let src = normalized_444(f)?;
    let (w, h) = (f.width(), f.height());
    let (pw, ph) = (map.padded_width, map.padded_height);
    if (pw, ph) == (w, h) {
        return Ok(src);
    }
    let mut out = vec![0.0; CHANNELS * pw * ph];
    for c in 0..CHANNELS {
        for y in 0..ph {
            for x in 0..pw {
                out[(c * ph + y) * pw + x] = src[(c * h + y.min(h - 1)) * w + x.min(w - 1)];
            }
        }
    }
    Ok(out)
}

/// Cuts `f` into `block_size` blocks overlapping by `overlap` pixels.
pub fn segment_blocks_with(f: &PlanarFrame, block_size: usize, overlap: usize) -> Result<(BlockTensor, TileMap)> {
    let mut map = TileMap::new(f.width(), f.height(), block_size, overlap)?;
    map.bit_depth = f.bit_depth();
    map.chroma = f.chroma_format();
    let canvas = padded_canvas(f, &map)?;
    let (pw, ph, bs) = (map.padded_width, map.padded_height, block_size);
    let mut data = Vec::with_capacity(map.len() * CHANNELS * bs * bs);
    for &(ox, oy) in &map.origins {
        for c in 0..CHANNELS {
            for y in oy..oy + bs {
                let row = (c * ph + y) * pw;
                data.extend_from_slice(&canvas[row + ox..row + ox + bs]);
            }
        }
    }
    Ok((BlockTensor::from_planar(map.len(), bs, bs, data)?, map))
}

/// Cuts `f` into 96x96 blocks overlapping by 4 pixels.
pub fn segment_blocks(f: &PlanarFrame) -> Result<(BlockTensor, TileMap)> {
    segment_blocks_with(f, BLOCK_SIZE, OVERLAP)
}

/// Per-pixel mean of all covering blocks, cropped to the frame, as planar
/// `3 x H x W` samples in `[0, 1]`.
pub fn aggregate_normalized(blocks: &BlockTensor, map: &TileMap) -> Result<Vec<f32>> {
    let bs = map.block_size;
    if blocks.batch() != map.len() || blocks.height() != bs || blocks.width() != bs {
        return Err(invalid(format!(
            "{} blocks of {}x{} do not match a tile map of {} blocks of {bs}x{bs}",
            blocks.batch(),
            blocks.height(),
            blocks.width(),
            map.len()
        )));
    }
    let (pw, ph) = (map.padded_width, map.padded_height);
    if map.origins.iter().any(|&(x, y)| x + bs > pw || y + bs > ph) {
        return Err(invalid("tile map places blocks outside the canvas"));
    }
    let mut acc = vec![0.0f64; CHANNELS * pw * ph];
    let cover = map.coverage();
    let src = blocks.planar();
    for (b, &(ox, oy)) in map.origins.iter().enumerate() {
        for c in 0..CHANNELS {
            for y in 0..bs {
                let from = ((b * CHANNELS + c) * bs + y) * bs;
                let to = (c * ph + oy + y) * pw + ox;
                for (a, &v) in acc[to..to + bs].iter_mut().zip(&src[from..from + bs]) {
                    *a += v as f64;
                }
            }
        }
    }
    let (w, h) = (map.frame_width, map.frame_height);
    let mut out = Vec::with_capacity(CHANNELS * w * h);
    for c in 0..CHANNELS {
        for y in 0..h {
            for x in 0..w {
                let n = cover[y * pw + x];
                if n == 0 {
                    return Err(invalid(format!("pixel ({x}, {y}) is not covered by any block")));
                }
                out.push((acc[(c * ph + y) * pw + x] / n as f64) as f32);
            }
        }
    }
    Ok(out)
}

/// Reassembles a frame in the tile map's original format.
pub fn aggregate_blocks(blocks: &BlockTensor, map: &TileMap) -> Result<PlanarFrame> {
    let data = aggregate_normalized(blocks, map)?;
    denormalize_444(&data, map.frame_width, map.frame_height, map.bit_depth, map.chroma)
}
