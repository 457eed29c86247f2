//! Frame and sequence quality, including the external metric adapter.

use std::process::Command;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::metrics::{ms_ssim_weighted, psnr, ssim, MS_SSIM_WEIGHTS, WINDOW};
use crate::tensor::{no_grad, Tensor};
use crate::videopipe::{write_yuv, PlanarFrame, Plane};

/// Per-frame PSNR is capped here so identical frames average finitely.
pub const PSNR_CAP: f64 = 100.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quality {
    pub psnr: f64,
    pub ssim: f64,
    pub msssim: f64,
}

fn luma_tensor(f: &PlanarFrame) -> Result<Tensor<f64>> {
    let max = f.max_value() as f64;
    let data = f.plane(Plane::Y).iter().map(|&s| s as f64 / max).collect();
    Tensor::from_vec(&[1, 1, f.height(), f.width()], data)
}

/// Scales of MS-SSIM that fit `h x w`: the standard four when possible,
/// fewer (with the leading weights) on small frames.
pub fn msssim_scales(h: usize, w: usize) -> usize {
    (1..=MS_SSIM_WEIGHTS.len()).rev().find(|&s| h.min(w) >= WINDOW << (s - 1)).unwrap_or(0)
}

/// Luma PSNR (capped), SSIM and MS-SSIM of one frame pair.
pub fn frame_quality(reference: &PlanarFrame, distorted: &PlanarFrame) -> Result<Quality> {
    if !reference.same_format(distorted) {
        return Err(invalid("quality of frames with different formats"));
    }
    let p = psnr(reference, distorted)?.min(PSNR_CAP);
    let _g = no_grad();
    let (a, b) = (luma_tensor(reference)?, luma_tensor(distorted)?);
    let s = ssim(&a, &b)?.item()?;
    let scales = msssim_scales(reference.height(), reference.width());
    let ms = if scales == 0 {
        f64::NAN
    } else {
        ms_ssim_weighted(&a, &b, &MS_SSIM_WEIGHTS[..scales])?.item()?
    };
    Ok(Quality {
        psnr: p,
        ssim: s,
        msssim: ms,
    })
}

/// Frame-averaged quality of a sequence.
pub fn sequence_quality(reference: &[PlanarFrame], distorted: &[PlanarFrame]) -> Result<Quality> {
    if reference.len() != distorted.len() || reference.is_empty() {
        return Err(invalid(format!(
            "{} reference frames against {} distorted",
            reference.len(),
            distorted.len()
        )));
    }
    let mut acc = [0.0; 3];
    for (r, d) in reference.iter().zip(distorted) {
        let q = frame_quality(r, d)?;
        acc[0] += q.psnr;
        acc[1] += q.ssim;
        acc[2] += q.msssim;
    }
    let n = reference.len() as f64;
    Ok(Quality {
        psnr: acc[0] / n,
        ssim: acc[1] / n,
        msssim: acc[2] / n,
    })
}

/// A full-reference metric computed by another program, such as VMAF.
/// The command sees `{reference} {distorted} {width} {height}
/// {bitdepth}` and must print the score as the last number on stdout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExternalMetric {
    pub name: String,
    pub command: String,
}

impl ExternalMetric {
    pub fn score(&self, reference: &[PlanarFrame], distorted: &[PlanarFrame]) -> Result<f64> {
        let first = reference.first().ok_or_else(|| invalid("no frames to score"))?;
        let dir = tempfile::tempdir()?;
        let (rp, dp) = (dir.path().join("reference.yuv"), dir.path().join("distorted.yuv"));
        write_yuv(&rp, reference)?;
        write_yuv(&dp, distorted)?;
        let cmd = self
            .command
            .replace("{reference}", &rp.display().to_string())
            .replace("{distorted}", &dp.display().to_string())
            .replace("{width}", &first.width().to_string())
            .replace("{height}", &first.height().to_string())
            .replace("{bitdepth}", &first.bit_depth().to_string());
        let out = Command::new("sh").arg("-c").arg(&cmd).output()?;
        let stdout = String::from_utf8_lossy(&out.stdout).to_string();
        if !out.status.success() {
            return Err(Error::Codec {
                command: cmd,
                status: out.status.code(),
                output: format!("{stdout}{}", String::from_utf8_lossy(&out.stderr)),
            });
        }
        stdout
            .split(|c: char| c.is_whitespace() || c == ',' || c == ':' || c == '=')
            .filter_map(|t| t.parse::<f64>().ok())
            .rfind(|v| v.is_finite())
            .ok_or_else(|| invalid(format!("{} printed no score: `{}`", self.name, stdout.trim())))
    }
}
