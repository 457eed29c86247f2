//! Chroma conversion, 2x resampling and float normalization.

use super::frame::{ChromaFormat, PlanarFrame, Plane};
use crate::error::{invalid, Result};

const PLANES: [Plane; 3] = [Plane::Y, Plane::Cb, Plane::Cr];

/// Lanczos window size `a`.
pub const LANCZOS_A: f64 = 3.0;

/// 4:2:0 to 4:4:4 by nearest-neighbour chroma replication.
pub fn convert_420_to_444(f: &PlanarFrame) -> Result<PlanarFrame> {
    if f.chroma_format() != ChromaFormat::Yuv420 {
        return Err(invalid("expected a 4:2:0 frame"));
    }
    let (w, h) = (f.width(), f.height());
    let (cw, _) = f.chroma_dims();
    let up = |p: Plane| {
        let src = f.plane(p);
        (0..w * h).map(|i| src[(i / w / 2) * cw + (i % w) / 2]).collect::<Vec<_>>()
    };
    PlanarFrame::from_planes(
        w,
        h,
        f.bit_depth(),
        ChromaFormat::Yuv444,
        f.plane(Plane::Y).to_vec(),
        up(Plane::Cb),
        up(Plane::Cr),
    )
}

/// 4:4:4 to 4:2:0 by 2x2 chroma averaging, rounding halves up.
pub fn convert_444_to_420(f: &PlanarFrame) -> Result<PlanarFrame> {
    if f.chroma_format() != ChromaFormat::Yuv444 {
        return Err(invalid("expected a 4:4:4 frame"));
    }
    let (w, h) = (f.width(), f.height());
    if w % 2 != 0 || h % 2 != 0 {
        return Err(invalid(format!("4:2:0 needs even dimensions, got {w}x{h}")));
    }
    let (cw, ch) = (w / 2, h / 2);
    let down = |p: Plane| {
        let s = f.plane(p);
        let mut out = Vec::with_capacity(cw * ch);
        for y in 0..ch {
            for x in 0..cw {
                let i = 2 * y * w + 2 * x;
                let sum = s[i] as u32 + s[i + 1] as u32 + s[i + w] as u32 + s[i + w + 1] as u32;
                out.push(((sum + 2) / 4) as u16);
            }
        }
        out
    };
    PlanarFrame::from_planes(
        w,
        h,
        f.bit_depth(),
        ChromaFormat::Yuv420,
        f.plane(Plane::Y).to_vec(),
        down(Plane::Cb),
        down(Plane::Cr),
    )
}

/// Converts to 4:4:4, replicating chroma when needed.
pub fn to_444(f: &PlanarFrame) -> Result<PlanarFrame> {
    match f.chroma_format() {
        ChromaFormat::Yuv444 => Ok(f.clone()),
        ChromaFormat::Yuv420 => convert_420_to_444(f),
    }
}

/// Converts a 4:4:4 frame to `chroma`.
pub fn from_444(f: &PlanarFrame, chroma: ChromaFormat) -> Result<PlanarFrame> {
    match chroma {
        ChromaFormat::Yuv444 => to_444(f),
        ChromaFormat::Yuv420 => convert_444_to_420(&to_444(f)?),
    }
}

/// `sinc(x) sinc(x / a)` for `|x| < a`, zero outside.
pub fn lanczos(x: f64, a: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else if x.abs() >= a {
        0.0
    } else {
        let px = std::f64::consts::PI * x;
        a * px.sin() * (px / a).sin() / (px * px)
    }
}

/// Normalized taps of the 2x Lanczos decimator: output sample `i` sits at
/// input position `2i + 0.5` and sees inputs `2i - 5 ..= 2i + 6`.
/// Returned as `(offset from 2i, weight)`.
pub fn decimation_taps() -> Vec<(isize, f64)> {
    let raw: Vec<(isize, f64)> = (-5..=6)
        .map(|k| (k, lanczos((k as f64 - 0.5) / 2.0, LANCZOS_A)))
        .collect();
    let sum: f64 = raw.iter().map(|t| t.1).sum();
    raw.into_iter().map(|(k, w)| (k, w / sum)).collect()
}

fn decimate_plane(src: &[u16], w: usize, h: usize, max: u16) -> Vec<u16> {
    let taps = decimation_taps();
    let (ow, oh) = (w / 2, h / 2);
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    // horizontal pass in f64, then vertical
    let mut mid = vec![0.0f64; ow * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            mid[y * ow + x] = taps
                .iter()
                .map(|&(k, t)| t * row[clamp(2 * x as isize + k, w)] as f64)
                .sum();
        }
    }
    let mut out = Vec::with_capacity(ow * oh);
    for y in 0..oh {
        for x in 0..ow {
            let v: f64 = taps.iter().map(|&(k, t)| t * mid[clamp(2 * y as isize + k, h) * ow + x]).sum();
            out.push(v.round().clamp(0.0, max as f64) as u16);
        }
    }
    out
}

/// Halves both dimensions with a separable Lanczos3 filter and edge
/// clamping; every plane is filtered independently.
pub fn downsample2x(f: &PlanarFrame) -> Result<PlanarFrame> {
    let (w, h) = (f.width(), f.height());
    let align = match f.chroma_format() {
        ChromaFormat::Yuv420 => 4,
        ChromaFormat::Yuv444 => 2,
    };
    if w % align != 0 || h % align != 0 {
        return Err(invalid(format!(
            "2x downsampling of a {w}x{h} {:?} frame needs dimensions divisible by {align}",
            f.chroma_format()
        )));
    }
    let planes: Vec<Vec<u16>> = PLANES
        .iter()
        .map(|&p| {
            let (pw, ph) = f.plane_dims(p);
            decimate_plane(f.plane(p), pw, ph, f.max_value())
        })
        .collect();
    let [y, cb, cr]: [Vec<u16>; 3] = planes.try_into().expect("three planes");
    PlanarFrame::from_planes(w / 2, h / 2, f.bit_depth(), f.chroma_format(), y, cb, cr)
}

/// Doubles both dimensions by exact nearest-neighbour replication.
pub fn nn_upsample2x(f: &PlanarFrame) -> Result<PlanarFrame> {
    let up = |p: Plane| {
        let (pw, ph) = f.plane_dims(p);
        let s = f.plane(p);
        let ow = 2 * pw;
        (0..4 * pw * ph).map(|i| s[(i / ow / 2) * pw + (i % ow) / 2]).collect::<Vec<_>>()
    };
    PlanarFrame::from_planes(
        2 * f.width(),
        2 * f.height(),
        f.bit_depth(),
        f.chroma_format(),
        up(Plane::Y),
        up(Plane::Cb),
        up(Plane::Cr),
    )
}

/// Planar `3 x H x W` samples of the 4:4:4 version of `f`, scaled to `[0, 1]`.
pub fn normalized_444(f: &PlanarFrame) -> Result<Vec<f32>> {
    let g = to_444(f)?;
    let scale = 1.0 / g.max_value() as f32;
    Ok(PLANES.iter().flat_map(|&p| g.plane(p).iter().map(move |&s| s as f32 * scale)).collect())
}

/// Inverse of [`normalized_444`]: rounds, clamps and converts to `chroma`.
pub fn denormalize_444(
    data: &[f32],
    width: usize,
    height: usize,
    bit_depth: u8,
    chroma: ChromaFormat,
) -> Result<PlanarFrame> {
    let n = width * height;
    if data.len() != 3 * n {
        return Err(invalid(format!("{width}x{height} 4:4:4 frame needs {} samples, got {}", 3 * n, data.len())));
    }
    let max = ((1u32 << bit_depth) - 1) as f32;
    let plane = |i: usize| {
        data[i * n..(i + 1) * n]
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * max).round() as u16)
            .collect::<Vec<_>>()
    };
    let f = PlanarFrame::from_planes(width, height, bit_depth, ChromaFormat::Yuv444, plane(0), plane(1), plane(2))?;
    from_444(&f, chroma)
}
