use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Side of the Gaussian SSIM window.
pub const WINDOW: usize = 11;
/// Standard deviation of the Gaussian SSIM window.
pub const SIGMA: f64 = 1.5;
/// Dynamic range of normalized samples.
const DYNAMIC_RANGE: f64 = 1.0;
pub const C1: f64 = (0.01 * DYNAMIC_RANGE) * (0.01 * DYNAMIC_RANGE);
pub const C2: f64 = (0.03 * DYNAMIC_RANGE) * (0.03 * DYNAMIC_RANGE);

/// Standard five-scale MS-SSIM exponents truncated to the four scales that
/// fit a 96x96 block; [`ms_ssim`] renormalizes them.
pub const MS_SSIM_WEIGHTS: [f64; 4] = [0.0448, 0.2856, 0.3001, 0.2363];

/// Floor applied to per-scale contrast-structure terms before exponentiation.
const MS_FLOOR: f64 = 1e-8;

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps() -> [f64; WINDOW] {
    let mut g = [0.0; WINDOW];
    let c = (WINDOW / 2) as f64;
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= s);
    g
}

fn check_pair<T: Real>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<(usize, usize, usize)> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let (n, _, h, w) = a.dims4()?;
    Ok((n, h, w))
}

fn luma<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    x.narrow(1, 0, 1)
}

/// Per-pixel SSIM and contrast-structure maps of single-channel batches
/// under valid Gaussian filtering.
fn ssim_maps<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    let (n, h, w) = check_pair("ssim", a, b)?;
    if h < WINDOW || w < WINDOW {
        return Err(Error::InvalidInput(format!(
            "ssim needs at least {WINDOW}x{WINDOW} samples, got {h}x{w}"
        )));
    }
    let taps: Vec<T> = gaussian_taps().iter().map(|&v| T::lit(v)).collect();
    let gv = Tensor::from_vec(&[1, 1, WINDOW, 1], taps.clone())?;
    let gh = Tensor::from_vec(&[1, 1, 1, WINDOW], taps)?;
    let stacked = Tensor::concat(&[a.clone(), b.clone(), a.sqr(), b.sqr(), a.mul(b)?], 0)?;
    let f = stacked.conv2d(&gv, None, 1, (0, 0))?.conv2d(&gh, None, 1, (0, 0))?;
    let part = |i: usize| f.narrow(0, i * n, n);
    let (mu_a, mu_b, e_aa, e_bb, e_ab) = (part(0)?, part(1)?, part(2)?, part(3)?, part(4)?);
    let mu_aa = mu_a.sqr();
    let mu_bb = mu_b.sqr();
    let mu_ab = mu_a.mul(&mu_b)?;
    let var_a = e_aa.sub(&mu_aa)?;
    let var_b = e_bb.sub(&mu_bb)?;
    let cov = e_ab.sub(&mu_ab)?;
    let cs = cov
        .affine(2.0, C2)
        .div(&var_a.add(&var_b)?.affine(1.0, C2))?;
    let lum = mu_ab
        .affine(2.0, C1)
        .div(&mu_aa.add(&mu_bb)?.affine(1.0, C1))?;
    Ok((lum.mul(&cs)?, cs))
}

/// Mean SSIM of the luma channels of two `(B, C, H, W)` batches, in `[-1, 1]`.
pub fn ssim<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    check_pair("ssim", a, b)?;
    let (map, _) = ssim_maps(&luma(a)?, &luma(b)?)?;
    Ok(map.mean_all())
}

/// `(1 - SSIM) / 2`, in `[0, 1]`.
pub fn ssim_loss<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(ssim(a, b)?.affine(-0.5, 0.5))
}

/// Luma MS-SSIM with the default four-scale weights.
pub fn ms_ssim<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    ms_ssim_weighted(a, b, &MS_SSIM_WEIGHTS)
}

/// Luma MS-SSIM with one scale per weight. Weights are renormalized to sum
/// to one, scales are separated by 2x2 average pooling, and the result is
/// averaged over the batch. Lies in `[0, 1]`.
pub fn ms_ssim_weighted<T: Real>(a: &Tensor<T>, b: &Tensor<T>, weights: &[f64]) -> Result<Tensor<T>> {
    let (_, h, w) = check_pair("ms_ssim", a, b)?;
    let sum: f64 = weights.iter().sum();
    if weights.is_empty() || weights.iter().any(|&w| w < 0.0) || sum <= 0.0 {
        return Err(Error::InvalidInput(format!("invalid ms-ssim weights {weights:?}")));
    }
    let scales = weights.len();
    let need = WINDOW << (scales - 1);
    if h < need || w < need {
        return Err(Error::InvalidInput(format!(
            "{scales}-scale ms-ssim needs at least {need}x{need} samples, got {h}x{w}"
        )));
    }
    let (mut a, mut b) = (luma(a)?, luma(b)?);
    let mut acc: Option<Tensor<T>> = None;
    for (j, &wj) in weights.iter().enumerate() {
        let (s, cs) = ssim_maps(&a, &b)?;
        let term = if j + 1 == scales { s } else { cs };
        let v = term
            .mean_axes(&[1, 2, 3])?
            .clamp(MS_FLOOR, f64::INFINITY)
            .powf(wj / sum);
        acc = Some(match acc {
            None => v,
            Some(p) => p.mul(&v)?,
        });
        if j + 1 < scales {
            a = a.avg_pool2d(2)?;
            b = b.avg_pool2d(2)?;
        }
    }
    Ok(acc.expect("at least one scale").mean_all())
}

/// `1 - MS-SSIM`, in `[0, 1]`.
pub fn msssim_loss<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(ms_ssim(a, b)?.affine(-1.0, 1.0))
}
