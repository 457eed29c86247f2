//! Codec adapter: an external encoder/decoder command pair, or a built-in
//! intra DCT stub with an HEVC-like QP ladder.

use std::path::Path;
use std::process::Command;

use serde::{Deserialize, Serialize};

use super::frame::{PlanarFrame, Plane};
use super::io::{read_yuv, write_yuv, RawFormat};
use crate::error::{invalid, Error, Result};

/// The default QP ladder.
pub const QP_LADDER: [u32; 4] = [22, 27, 32, 37];
/// Highest accepted QP.
pub const MAX_QP: u32 = 51;
/// Fixed per-frame header overhead of the stub's byte count.
pub const STUB_FRAME_HEADER_BYTES: u64 = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum CodecMode {
    /// Intra-only 8x8 DCT with uniform quantization.
    BuiltinStub,
    /// Shell command templates run through `sh -c`. Placeholders:
    /// `{input} {output} {qp} {width} {height} {fps} {bitdepth}`.
    ExternalCommand { encode: String, decode: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CodecAdapter {
    #[serde(flatten)]
    pub mode: CodecMode,
    pub qps: Vec<u32>,
    pub fps: f64,
}

impl Default for CodecAdapter {
    fn default() -> Self {
        CodecAdapter {
            mode: CodecMode::BuiltinStub,
            qps: QP_LADDER.to_vec(),
            fps: 30.0,
        }
    }
}

/// Decoded frames and the payload size.
#[derive(Clone, Debug, PartialEq)]
pub struct CodecOutput {
    pub frames: Vec<PlanarFrame>,
    pub bytes: u64,
}

impl CodecOutput {
    /// `bytes * 8 * fps / frames / 1000`.
    pub fn bitrate_kbps(&self, fps: f64) -> f64 {
        self.bytes as f64 * 8.0 * fps / self.frames.len().max(1) as f64 / 1000.0
    }
}

impl CodecAdapter {
    pub fn stub() -> Self {
        Self::default()
    }

    pub fn external(encode: impl Into<String>, decode: impl Into<String>) -> Self {
        CodecAdapter {
            mode: CodecMode::ExternalCommand {
                encode: encode.into(),
                decode: decode.into(),
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.qps.is_empty() || self.qps.iter().any(|&q| q > MAX_QP) {
            return Err(Error::Config(format!("QP ladder {:?} must be non-empty with QPs <= {MAX_QP}", self.qps)));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::Config("frame rate must be positive".into()));
        }
        if let CodecMode::ExternalCommand { encode, decode } = &self.mode {
            if encode.trim().is_empty() || decode.trim().is_empty() {
                return Err(Error::Config("external codec needs encode and decode commands".into()));
            }
        }
        Ok(())
    }
}

/// Codes `frames` at `qp`.
pub fn codec_run(frames: &[PlanarFrame], adapter: &CodecAdapter, qp: u32) -> Result<CodecOutput> {
    adapter.validate()?;
    if qp > MAX_QP {
        return Err(invalid(format!("QP {qp} exceeds {MAX_QP}")));
    }
    let Some(first) = frames.first() else {
        return Err(invalid("nothing to code"));
    };
    if frames.iter().any(|f| !f.same_format(first)) {
        return Err(invalid("all frames of a coded sequence must share one format"));
    }
    match &adapter.mode {
        CodecMode::BuiltinStub => {
            let mut out = Vec::with_capacity(frames.len());
            let mut bytes = 0;
            for f in frames {
                let (g, b) = stub_code_frame(f, qp);
                out.push(g);
                bytes += b;
            }
            Ok(CodecOutput { frames: out, bytes })
        }
        CodecMode::ExternalCommand { encode, decode } => external_run(frames, adapter.fps, encode, decode, qp),
    }
}

/// Quantizer step `2^((qp - 4) / 6)` on the 8-bit scale, multiplied by
/// `2^(bit_depth - 8)` so a QP means the same relative step at any depth.
pub fn quant_step(qp: u32, bit_depth: u8) -> f64 {
    2f64.powf((qp as f64 - 4.0) / 6.0) * 2f64.powi(bit_depth as i32 - 8)
}

const N: usize = 8;

fn dct_basis() -> [[f64; N]; N] {
    let mut c = [[0.0; N]; N];
    for (k, row) in c.iter_mut().enumerate() {
        let a = if k == 0 { (1.0 / N as f64).sqrt() } else { (2.0 / N as f64).sqrt() };
        for (n, v) in row.iter_mut().enumerate() {
            *v = a * ((2 * n + 1) as f64 * k as f64 * std::f64::consts::PI / (2 * N) as f64).cos();
        }
    }
    c
}

/// Zig-zag scan order of an 8x8 block.
fn zigzag() -> [usize; N * N] {
    let mut order = [0; N * N];
    let mut i = 0;
    for s in 0..2 * N - 1 {
        let range: Vec<usize> = (0..N).filter(|&y| s >= y && s - y < N).collect();
        let ys: Vec<usize> = if s % 2 == 0 { range.into_iter().rev().collect() } else { range };
        for y in ys {
            order[i] = y * N + (s - y);
            i += 1;
        }
    }
    order
}

/// Exp-Golomb order-0 code length of `u`.
fn eg_bits(u: u64) -> u64 {
    2 * (63 - (u + 1).leading_zeros() as u64) + 1
}

/// Bits for one quantized block: a coded flag, then `(run, level)`
/// pairs in zig-zag order and an end marker.
fn block_bits(levels: &[i64; N * N], scan: &[usize; N * N]) -> u64 {
    if levels.iter().all(|&l| l == 0) {
        return 1;
    }
    let mut bits = 1;
    let mut run = 0;
    for &i in scan {
        let l = levels[i];
        if l == 0 {
            run += 1;
        } else {
            let mag = 2 * l.unsigned_abs() - 1 + (l < 0) as u64;
            bits += eg_bits(run) + eg_bits(mag);
            run = 0;
        }
    }
    bits + 1
}

fn stub_code_plane(src: &[u16], w: usize, h: usize, step: f64, max: u16, out: &mut [u16]) -> u64 {
    let c = dct_basis();
    let scan = zigzag();
    let mut bits = 0;
    let mut blk = [[0.0f64; N]; N];
    let mut tmp = [[0.0f64; N]; N];
    for by in (0..h).step_by(N) {
        for bx in (0..w).step_by(N) {
            // edge blocks replicate the last row/column
            for (y, row) in blk.iter_mut().enumerate() {
                for (x, v) in row.iter_mut().enumerate() {
                    *v = src[(by + y).min(h - 1) * w + (bx + x).min(w - 1)] as f64;
                }
            }
            // coefficients C B C^T
            for k in 0..N {
                for x in 0..N {
                    tmp[k][x] = (0..N).map(|y| c[k][y] * blk[y][x]).sum();
                }
            }
            let mut levels = [0i64; N * N];
            for k in 0..N {
                for l in 0..N {
                    let coef: f64 = (0..N).map(|x| tmp[k][x] * c[l][x]).sum();
                    levels[k * N + l] = (coef / step).round() as i64;
                }
            }
            bits += block_bits(&levels, &scan);
            // reconstruction C^T Q C
            for k in 0..N {
                for x in 0..N {
                    tmp[k][x] = (0..N).map(|l| levels[k * N + l] as f64 * step * c[l][x]).sum();
                }
            }
            for y in 0..N.min(h - by) {
                for x in 0..N.min(w - bx) {
                    let v: f64 = (0..N).map(|k| c[k][y] * tmp[k][x]).sum();
                    out[(by + y) * w + bx + x] = v.round().clamp(0.0, max as f64) as u16;
                }
            }
        }
    }
    bits
}

/// Decoded frame and entropy-proxy byte count of one stub-coded frame.
pub fn stub_code_frame(f: &PlanarFrame, qp: u32) -> (PlanarFrame, u64) {
    let step = quant_step(qp, f.bit_depth());
    let mut out = f.clone();
    let mut bits = 0;
    for p in [Plane::Y, Plane::Cb, Plane::Cr] {
        let (w, h) = f.plane_dims(p);
        bits += stub_code_plane(f.plane(p), w, h, step, f.max_value(), out.plane_mut(p));
    }
    (out, bits.div_ceil(8) + STUB_FRAME_HEADER_BYTES)
}

fn fill_template(t: &str, input: &Path, output: &Path, qp: u32, fmt: &RawFormat, fps: f64) -> String {
    t.replace("{input}", &input.display().to_string())
        .replace("{output}", &output.display().to_string())
        .replace("{qp}", &qp.to_string())
        .replace("{width}", &fmt.width.to_string())
        .replace("{height}", &fmt.height.to_string())
        .replace("{fps}", &fps.to_string())
        .replace("{bitdepth}", &fmt.bit_depth.to_string())
}

fn run_shell(cmd: &str) -> Result<()> {
    let out = Command::new("sh").arg("-c").arg(cmd).output()?;
    if out.status.success() {
        Ok(())
    } else {
        Err(Error::Codec {
            command: cmd.to_string(),
            status: out.status.code(),
            output: format!(
                "{}{}",
                String::from_utf8_lossy(&out.stdout),
                String::from_utf8_lossy(&out.stderr)
            ),
        })
    }
}

fn external_run(frames: &[PlanarFrame], fps: f64, encode: &str, decode: &str, qp: u32) -> Result<CodecOutput> {
    let fmt = RawFormat::of(&frames[0]);
    let dir = tempfile::tempdir()?;
    let (src, stream, rec) = (dir.path().join("input.yuv"), dir.path().join("stream.bin"), dir.path().join("decoded.yuv"));
    write_yuv(&src, frames)?;
    run_shell(&fill_template(encode, &src, &stream, qp, &fmt, fps))?;
    let bytes = std::fs::metadata(&stream)
        .map_err(|e| invalid(format!("encoder produced no bitstream at {}: {e}", stream.display())))?
        .len();
    run_shell(&fill_template(decode, &stream, &rec, qp, &fmt, fps))?;
    let decoded = read_yuv(&rec, fmt)?;
    if decoded.len() != frames.len() {
        return Err(invalid(format!(
            "decoder returned {} frames for {} coded",
            decoded.len(),
            frames.len()
        )));
    }
    Ok(CodecOutput { frames: decoded, bytes })
}
