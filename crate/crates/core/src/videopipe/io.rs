//! Raw planar YUV and Y4M readers/writers, PNG block dumps and the pair
//! manifest.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Rgb};
use serde::{Deserialize, Serialize};

use super::frame::{ChromaFormat, PlanarFrame, Plane};
use crate::block::BlockTensor;
use crate::error::{invalid, Result};
use crate::trainer::{PairDataset, Tool};

const PLANES: [Plane; 3] = [Plane::Y, Plane::Cb, Plane::Cr];

/// Format of a headerless planar YUV file.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawFormat {
    pub width: usize,
    pub height: usize,
    pub bit_depth: u8,
    pub chroma: ChromaFormat,
}

impl RawFormat {
    pub fn of(f: &PlanarFrame) -> Self {
        RawFormat {
            width: f.width(),
            height: f.height(),
            bit_depth: f.bit_depth(),
            chroma: f.chroma_format(),
        }
    }

    fn bytes_per_sample(&self) -> usize {
        if self.bit_depth > 8 {
            2
        } else {
            1
        }
    }

    /// Bytes of one frame.
    pub fn frame_bytes(&self) -> usize {
        let (cw, ch) = self.chroma.chroma_dims(self.width, self.height);
        (self.width * self.height + 2 * cw * ch) * self.bytes_per_sample()
    }
}

fn write_samples(out: &mut impl Write, f: &PlanarFrame) -> Result<()> {
    let wide = f.bit_depth() > 8;
    let mut buf = Vec::new();
    for p in PLANES {
        for &s in f.plane(p) {
            if wide {
                buf.extend_from_slice(&s.to_le_bytes());
            } else {
                buf.push(s as u8);
            }
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

fn parse_samples(bytes: &[u8], fmt: &RawFormat) -> Result<PlanarFrame> {
    let wide = fmt.bit_depth > 8;
    let samples: Vec<u16> = if wide {
        bytes.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect()
    } else {
        bytes.iter().map(|&b| b as u16).collect()
    };
    let n = fmt.width * fmt.height;
    let (cw, ch) = fmt.chroma.chroma_dims(fmt.width, fmt.height);
    let c = cw * ch;
    PlanarFrame::from_planes(
        fmt.width,
        fmt.height,
        fmt.bit_depth,
        fmt.chroma,
        samples[..n].to_vec(),
        samples[n..n + c].to_vec(),
        samples[n + c..n + 2 * c].to_vec(),
    )
}

/// Writes frames as planar YUV, 8-bit samples as bytes and deeper samples
/// as little-endian `u16`.
pub fn write_yuv(path: &Path, frames: &[PlanarFrame]) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    if let Some(first) = frames.first() {
        let fmt = RawFormat::of(first);
        for f in frames {
            if RawFormat::of(f) != fmt {
                return Err(invalid("all frames of a YUV file must share one format"));
            }
            write_samples(&mut out, f)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads every frame of a planar YUV file.
pub fn read_yuv(path: &Path, fmt: RawFormat) -> Result<Vec<PlanarFrame>> {
    PlanarFrame::new(fmt.width, fmt.height, fmt.bit_depth, fmt.chroma)?;
    let bytes = fs::read(path)?;
    let fb = fmt.frame_bytes();
    if bytes.len() % fb != 0 {
        return Err(invalid(format!(
            "{} holds {} bytes, not a multiple of the {fb}-byte frame size",
            path.display(),
            bytes.len()
        )));
    }
    bytes.chunks_exact(fb).map(|c| parse_samples(c, &fmt)).collect()
}

/// A Y4M stream: frames plus frame rate.
#[derive(Clone, Debug, PartialEq)]
pub struct Y4mVideo {
    pub frames: Vec<PlanarFrame>,
    pub fps_num: u32,
    pub fps_den: u32,
}

impl Y4mVideo {
    pub fn fps(&self) -> f64 {
        self.fps_num as f64 / self.fps_den as f64
    }
}

fn y4m_colorspace(fmt: &RawFormat) -> &'static str {
    match (fmt.chroma, fmt.bit_depth) {
        (ChromaFormat::Yuv420, 8) => "420jpeg",
        (ChromaFormat::Yuv444, 8) => "444",
        (ChromaFormat::Yuv420, _) => "420p10",
        (ChromaFormat::Yuv444, _) => "444p10",
    }
}

pub fn write_y4m(path: &Path, video: &Y4mVideo) -> Result<()> {
    let first = video.frames.first().ok_or_else(|| invalid("a Y4M stream needs at least one frame"))?;
    let fmt = RawFormat::of(first);
    let mut out = BufWriter::new(fs::File::create(path)?);
    writeln!(
        out,
        "YUV4MPEG2 W{} H{} F{}:{} Ip A1:1 C{}",
        fmt.width,
        fmt.height,
        video.fps_num,
        video.fps_den,
        y4m_colorspace(&fmt)
    )?;
    for f in &video.frames {
        if RawFormat::of(f) != fmt {
            return Err(invalid("all frames of a Y4M stream must share one format"));
        }
        out.write_all(b"FRAME\n")?;
        write_samples(&mut out, f)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_y4m(path: &Path) -> Result<Y4mVideo> {
    let mut r = BufReader::new(fs::File::open(path)?);
    let mut header = String::new();
    r.read_line(&mut header)?;
    let mut tokens = header.split_whitespace();
    if tokens.next() != Some("YUV4MPEG2") {
        return Err(invalid(format!("{} is not a Y4M file", path.display())));
    }
    let (mut w, mut h, mut num, mut den) = (0usize, 0usize, 30u32, 1u32);
    let mut cs = "420jpeg".to_string();
    let bad = |t: &str| invalid(format!("malformed Y4M header token `{t}`"));
    for t in tokens {
        let (tag, val) = t.split_at(1);
        match tag {
            "W" => w = val.parse().map_err(|_| bad(t))?,
            "H" => h = val.parse().map_err(|_| bad(t))?,
            "F" => {
                let (a, b) = val.split_once(':').ok_or_else(|| bad(t))?;
                num = a.parse().map_err(|_| bad(t))?;
                den = b.parse().map_err(|_| bad(t))?;
            }
            "C" => cs = val.to_string(),
            _ => {}
        }
    }
    let (chroma, bit_depth) = match cs.as_str() {
        "420" | "420jpeg" | "420paldv" | "420mpeg2" => (ChromaFormat::Yuv420, 8),
        "444" => (ChromaFormat::Yuv444, 8),
        "420p10" => (ChromaFormat::Yuv420, 10),
        "444p10" => (ChromaFormat::Yuv444, 10),
        other => return Err(invalid(format!("unsupported Y4M colourspace `{other}`"))),
    };
    if den == 0 {
        return Err(invalid("Y4M frame rate has a zero denominator"));
    }
    let fmt = RawFormat {
        width: w,
        height: h,
        bit_depth,
        chroma,
    };
    PlanarFrame::new(w, h, bit_depth, chroma)?;
    let mut frames = Vec::new();
    let mut buf = vec![0u8; fmt.frame_bytes()];
    loop {
        let mut line = String::new();
        if r.read_line(&mut line)? == 0 {
            break;
        }
        if !line.starts_with("FRAME") {
            return Err(invalid("expected a Y4M FRAME marker"));
        }
        r.read_exact(&mut buf)?;
        frames.push(parse_samples(&buf, &fmt)?);
    }
    Ok(Y4mVideo {
        frames,
        fps_num: num,
        fps_den: den,
    })
}

/// Stores block `b` of a batch as a 16-bit RGB PNG holding Y, Cb, Cr.
pub fn save_block_png(blocks: &BlockTensor, b: usize, path: &Path) -> Result<()> {
    let (_, h, w, _) = blocks.dims();
    let img = ImageBuffer::<Rgb<u16>, Vec<u16>>::from_fn(w as u32, h as u32, |x, y| {
        let px = |c| (blocks.get(b, y as usize, x as usize, c).clamp(0.0, 1.0) * 65535.0).round() as u16;
        Rgb([px(0), px(1), px(2)])
    });
    img.save(path)?;
    Ok(())
}

/// Loads a block written by [`save_block_png`] as a batch of one.
pub fn load_block_png(path: &Path) -> Result<BlockTensor> {
    let img = image::open(path)?.into_rgb16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f32> = img.pixels().flat_map(|p| p.0.map(|v| v as f32 / 65535.0)).collect();
    BlockTensor::from_interleaved(1, h, w, &data)
}

/// One row of the pair manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub degraded: String,
    pub target: String,
    pub qp: u32,
    pub tool: Tool,
}

pub const MANIFEST: &str = "manifest.csv";

/// Dumps every pair as PNGs under `dir` and writes `dir/manifest.csv`
/// with paths relative to `dir`.
pub fn save_pairs(dir: &Path, sets: &[PairDataset]) -> Result<PathBuf> {
    fs::create_dir_all(dir.join("blocks"))?;
    let manifest = dir.join(MANIFEST);
    let mut w = csv::Writer::from_path(&manifest)?;
    for ds in sets {
        for i in 0..ds.len() {
            let stem = format!("blocks/{}_qp{}_{i:06}", ds.tool, ds.qp);
            let row = ManifestRow {
                degraded: format!("{stem}_deg.png"),
                target: format!("{stem}_tgt.png"),
                qp: ds.qp,
                tool: ds.tool,
            };
            save_block_png(&ds.degraded, i, &dir.join(&row.degraded))?;
            save_block_png(&ds.target, i, &dir.join(&row.target))?;
            w.serialize(&row)?;
        }
    }
    w.flush()?;
    Ok(manifest)
}

/// Reads a manifest back into one dataset per `(qp, tool)` group, in order
/// of first appearance. Relative paths resolve against the manifest's
/// directory.
pub fn load_pairs(manifest: &Path) -> Result<Vec<PairDataset>> {
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut r = csv::Reader::from_path(manifest)?;
    let mut groups: Vec<((u32, Tool), Vec<BlockTensor>, Vec<BlockTensor>)> = Vec::new();
    for row in r.deserialize::<ManifestRow>() {
        let row = row?;
        let deg = load_block_png(&base.join(&row.degraded))?;
        let tgt = load_block_png(&base.join(&row.target))?;
        let key = (row.qp, row.tool);
        match groups.iter_mut().find(|g| g.0 == key) {
            Some(g) => {
                g.1.push(deg);
                g.2.push(tgt);
            }
            None => groups.push((key, vec![deg], vec![tgt])),
        }
    }
    groups
        .into_iter()
        .map(|((qp, tool), d, t)| PairDataset::new(BlockTensor::stack(&d)?, BlockTensor::stack(&t)?, qp, tool))
        .collect()
}
