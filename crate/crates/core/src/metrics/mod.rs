//! Image-quality losses, PSNR and rank correlation.
//!
//! The six training losses all lie in `[0, 1]` and vanish for identical
//! inputs. Tensor-valued versions are differentiable and operate on
//! `(B, C, H, W)` batches; [`LossSuite`] evaluates all six at once.

mod ssim;

pub use ssim::{
    gaussian_taps, ms_ssim, ms_ssim_weighted, msssim_loss, ssim, ssim_loss, C1, C2, MS_SSIM_WEIGHTS,
    SIGMA, WINDOW,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::block::BlockTensor;
use crate::error::{Error, Result};
use crate::tensor::{no_grad, Real, Tensor};
use crate::videopipe::{PlanarFrame, Plane};

fn same_shape<T: Real>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(Error::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        })
    }
}

/// Mean absolute difference.
pub fn l1_loss<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("l1_loss", a, b)?;
    Ok(a.sub(b)?.abs().mean_all())
}

/// Mean squared difference.
pub fn l2_loss<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("l2_loss", a, b)?;
    Ok(a.sub(b)?.sqr().mean_all())
}

/// Mean absolute difference of first-order forward differences along
/// rows and columns of a `(B, C, H, W)` pair. Borders are edge-replicated,
/// so the last difference along each axis is zero; the horizontal and
/// vertical terms are averaged and halved to land in `[0, 1]`.
pub fn gradient_loss<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("gradient_loss", a, b)?;
    let (_, _, h, w) = a.dims4()?;
    let d = a.sub(b)?;
    let count = d.numel() as f64;
    // Differencing the residual equals differencing each side.
    let axis_term = |axis: usize, len: usize| -> Result<Tensor<T>> {
        if len < 2 {
            return Ok(Tensor::scalar(T::zero()));
        }
        let fwd = d.narrow(axis, 1, len - 1)?.sub(&d.narrow(axis, 0, len - 1)?)?;
        Ok(fwd.abs().sum_all().scale(1.0 / count))
    };
    let gx = axis_term(3, w)?;
    let gy = axis_term(2, h)?;
    Ok(gx.add(&gy)?.scale(0.25))
}

/// Deterministic map from image batches to feature maps.
pub trait FeatureExtractor<T: Real>: Send + Sync {
    fn extract(&self, x: &Tensor<T>) -> Result<Tensor<T>>;
}

/// Features equal to the input, reducing [`feature_loss`] to [`l2_loss`].
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityFeatures;

impl<T: Real> FeatureExtractor<T> for IdentityFeatures {
    fn extract(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(x.clone())
    }
}

/// Fixed random-weight convolution stack (3x3 kernels, Mish between
/// layers), a hermetic stand-in for a pretrained perceptual network.
#[derive(Clone, Debug)]
pub struct ConvFeatures {
    layers: Vec<ConvLayerWeights>,
}

#[derive(Clone, Debug)]
struct ConvLayerWeights {
    shape: [usize; 4],
    weight: Vec<f64>,
    bias: Vec<f64>,
}

impl ConvFeatures {
    /// Default stack `3 -> 8 -> 8 -> 8`.
    pub fn new(seed: u64) -> Self {
        Self::with_channels(seed, &[3, 8, 8, 8])
    }

    /// Stack with the given channel progression; weights are uniform with
    /// unit-variance fan-in scaling, biases zero.
    pub fn with_channels(seed: u64, channels: &[usize]) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = channels
            .windows(2)
            .map(|c| {
                let (ci, co) = (c[0], c[1]);
                let bound = (3.0 / (ci * 9) as f64).sqrt();
                ConvLayerWeights {
                    shape: [co, ci, 3, 3],
                    weight: (0..co * ci * 9).map(|_| rng.gen_range(-bound..bound)).collect(),
                    bias: vec![0.0; co],
                }
            })
            .collect();
        ConvFeatures { layers }
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }
}

impl<T: Real> FeatureExtractor<T> for ConvFeatures {
    fn extract(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut h = x.clone();
        for (i, l) in self.layers.iter().enumerate() {
            let w = Tensor::from_vec(&l.shape, l.weight.iter().map(|&v| T::lit(v)).collect())?;
            let b = Tensor::from_vec(&[l.shape[0]], l.bias.iter().map(|&v| T::lit(v)).collect())?;
            h = h.conv2d(&w, Some(&b), 1, (1, 1))?;
            if i + 1 < self.layers.len() {
                h = h.mish();
            }
        }
        Ok(h)
    }
}

/// Mean squared feature difference divided by `normalizer`, clamped to `[0, 1]`.
pub fn feature_loss<T: Real>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    extractor: &dyn FeatureExtractor<T>,
    normalizer: f64,
) -> Result<Tensor<T>> {
    same_shape("feature_loss", a, b)?;
    if normalizer <= 0.0 || !normalizer.is_finite() {
        return Err(Error::InvalidInput(format!("feature normalizer {normalizer}")));
    }
    let fa = extractor.extract(a)?;
    let fb = extractor.extract(b)?;
    same_shape("feature_loss features", &fa, &fb)?;
    Ok(fa.sub(&fb)?.sqr().mean_all().scale(1.0 / normalizer).clamp(0.0, 1.0))
}

/// Names of the six loss components, in [`LossVector`] order.
pub const LOSS_NAMES: [&str; 6] = ["l1", "l2", "grad", "feat", "ssim_loss", "msssim_loss"];

/// The six single losses of one compared pair.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossVector {
    pub l1: f64,
    pub l2: f64,
    pub grad: f64,
    pub feat: f64,
    pub ssim_loss: f64,
    pub msssim_loss: f64,
}

impl LossVector {
    pub fn from_array(v: [f64; 6]) -> Self {
        LossVector {
            l1: v[0],
            l2: v[1],
            grad: v[2],
            feat: v[3],
            ssim_loss: v[4],
            msssim_loss: v[5],
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.l1, self.l2, self.grad, self.feat, self.ssim_loss, self.msssim_loss]
    }

    /// Every component finite and inside `[0, 1]`.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in LOSS_NAMES.iter().zip(self.to_array()) {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidInput(format!("loss {name} = {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// One calibration row: measured losses of a distorted sequence and its
/// subjective score.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityRecord {
    pub sequence_id: String,
    pub losses: LossVector,
    pub subjective_score: f64,
}

/// Evaluates all six losses with a fixed feature extractor.
pub struct LossSuite {
    pub extractor: Box<dyn FeatureExtractor<f64>>,
    pub feature_normalizer: f64,
}

impl Default for LossSuite {
    fn default() -> Self {
        LossSuite {
            extractor: Box::new(ConvFeatures::new(0)),
            feature_normalizer: 1.0,
        }
    }
}

impl LossSuite {
    /// Losses between two batches, averaged over the batch. The SSIM terms
    /// need at least 88x88 blocks.
    pub fn measure(&self, a: &BlockTensor, b: &BlockTensor) -> Result<LossVector> {
        let _g = no_grad();
        let (ta, tb) = (a.to_tensor::<f64>(), b.to_tensor::<f64>());
        let v = LossVector {
            l1: l1_loss(&ta, &tb)?.item()?,
            l2: l2_loss(&ta, &tb)?.item()?,
            grad: gradient_loss(&ta, &tb)?.item()?,
            feat: feature_loss(&ta, &tb, self.extractor.as_ref(), self.feature_normalizer)?.item()?,
            ssim_loss: ssim_loss(&ta, &tb)?.item()?,
            msssim_loss: msssim_loss(&ta, &tb)?.item()?,
        };
        // Rounding can push an exact zero a hair negative.
        Ok(LossVector::from_array(v.to_array().map(|x| x.clamp(0.0, 1.0))))
    }
}

/// PSNR in dB for a given mean squared error and peak; `+inf` when the
/// error is zero.
pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

/// Luma PSNR of two frames with equal format, peak `2^bit_depth - 1`.
pub fn psnr(a: &PlanarFrame, b: &PlanarFrame) -> Result<f64> {
    if (a.width(), a.height(), a.bit_depth()) != (b.width(), b.height(), b.bit_depth()) {
        return Err(Error::InvalidInput(format!(
            "psnr of {}x{}@{} against {}x{}@{}",
            a.width(),
            a.height(),
            a.bit_depth(),
            b.width(),
            b.height(),
            b.bit_depth()
        )));
    }
    let ya = a.plane(Plane::Y);
    let yb = b.plane(Plane::Y);
    let se: f64 = ya
        .iter()
        .zip(yb)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(psnr_from_mse(se / ya.len() as f64, a.max_value() as f64))
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation; `None` when undefined.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    let r = sxy / (sxx * syy).sqrt();
    (sxx > 0.0 && syy > 0.0 && r.is_finite()).then(|| r.clamp(-1.0, 1.0))
}

/// Spearman rank correlation with average ranks for ties. `None` for
/// fewer than two points, unequal lengths, non-finite values or a
/// constant input.
pub fn srocc(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 || x.iter().chain(y).any(|v| !v.is_finite()) {
        return None;
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::testutil::{check_grad, rand_leaf};
    use crate::videopipe::ChromaFormat;

    fn t(shape: &[usize], v: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(shape, v).unwrap()
    }

    #[test]
    fn l1_l2_examples() {
        let zeros = Tensor::<f64>::zeros(&[2, 3, 4, 4]);
        let ones = Tensor::<f64>::full(&[2, 3, 4, 4], 1.0);
        assert_eq!(l1_loss(&zeros, &ones).unwrap().item().unwrap(), 1.0);
        assert_eq!(l2_loss(&zeros, &ones).unwrap().item().unwrap(), 1.0);
        assert_eq!(l1_loss(&ones, &ones).unwrap().item().unwrap(), 0.0);
        let half = Tensor::<f64>::full(&[1, 3, 4, 4], 0.5);
        let q = Tensor::<f64>::full(&[1, 3, 4, 4], 0.75);
        assert_eq!(l1_loss(&half, &q).unwrap().item().unwrap(), 0.25);
        assert_eq!(l2_loss(&half, &q).unwrap().item().unwrap(), 0.0625);
        assert!(l1_loss(&zeros, &half).is_err());
    }

    /// Pixel-loop gradient loss with explicit edge replication.
    fn brute_gradient(a: &[f64], b: &[f64], planes: usize, h: usize, w: usize) -> f64 {
        let at = |v: &[f64], p: usize, y: usize, x: usize| v[(p * h + y.min(h - 1)) * w + x.min(w - 1)];
        let (mut sx, mut sy) = (0.0, 0.0);
        for p in 0..planes {
            for y in 0..h {
                for x in 0..w {
                    let dxa = at(a, p, y, x + 1) - at(a, p, y, x);
                    let dxb = at(b, p, y, x + 1) - at(b, p, y, x);
                    let dya = at(a, p, y + 1, x) - at(a, p, y, x);
                    let dyb = at(b, p, y + 1, x) - at(b, p, y, x);
                    sx += (dxa - dxb).abs();
                    sy += (dya - dyb).abs();
                }
            }
        }
        let n = (planes * h * w) as f64;
        (sx / n + sy / n) / 2.0 / 2.0
    }

    #[test]
    fn gradient_loss_examples() {
        let (h, w) = (6, 8);
        let c1 = Tensor::<f64>::full(&[1, 3, h, w], 0.2);
        let c2 = Tensor::<f64>::full(&[1, 3, h, w], 0.9);
        assert_eq!(gradient_loss(&c1, &c2).unwrap().item().unwrap(), 0.0);
        let step: Vec<f64> = (0..3 * h * w).map(|i| if i % w < w / 2 { 0.0 } else { 1.0 }).collect();
        let flat = vec![0.5; 3 * h * w];
        let got = gradient_loss(&t(&[1, 3, h, w], step.clone()), &t(&[1, 3, h, w], flat.clone()))
            .unwrap()
            .item()
            .unwrap();
        let want = brute_gradient(&step, &flat, 3, h, w);
        assert!((got - want).abs() < 1e-15);
        assert!((want - 1.0 / 32.0).abs() < 1e-15);
        let a = rand_leaf(&[2, 3, 5, 7], 1, 0.0, 1.0);
        let b = rand_leaf(&[2, 3, 5, 7], 2, 0.0, 1.0);
        let got = gradient_loss(&a, &b).unwrap().item().unwrap();
        assert!((got - brute_gradient(a.data(), b.data(), 6, 5, 7)).abs() < 1e-14);
        // checkerboard against its complement is the extreme case
        let cb: Vec<f64> = (0..h * w).map(|i| ((i / w + i % w) % 2) as f64).collect();
        let inv: Vec<f64> = cb.iter().map(|v| 1.0 - v).collect();
        let g = gradient_loss(&t(&[1, 1, h, w], cb), &t(&[1, 1, h, w], inv)).unwrap().item().unwrap();
        assert!(g <= 1.0 && g > 0.8);
    }

    #[test]
    fn feature_loss_examples() {
        let a = rand_leaf(&[2, 3, 8, 8], 3, 0.0, 1.0).detach();
        let b = rand_leaf(&[2, 3, 8, 8], 4, 0.0, 1.0).detach();
        let conv = ConvFeatures::new(7);
        assert_eq!(feature_loss(&a, &a, &conv, 1.0).unwrap().item().unwrap(), 0.0);
        let id = feature_loss(&a, &b, &IdentityFeatures, 1.0).unwrap().item().unwrap();
        assert_eq!(id, l2_loss(&a, &b).unwrap().item().unwrap());
        // straight-line re-evaluation of the random stack
        let first = feature_loss(&a, &b, &conv, 1.0).unwrap().item().unwrap();
        let again = feature_loss(&a, &b, &ConvFeatures::new(7), 1.0).unwrap().item().unwrap();
        assert_eq!(first, again);
        let fa = conv.extract(&a).unwrap();
        let fb = conv.extract(&b).unwrap();
        let mse = fa.data().iter().zip(fb.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>()
            / fa.numel() as f64;
        assert!((first - mse.min(1.0)).abs() < 1e-15);
        assert!(first > 0.0);
        assert!(feature_loss(&a, &b, &conv, 0.0).is_err());
    }

    #[test]
    fn tensor_losses_pass_gradient_checks() {
        let a = rand_leaf(&[1, 3, 5, 6], 5, 0.1, 0.9);
        let b = rand_leaf(&[1, 3, 5, 6], 6, 0.1, 0.9);
        let ins = [a, b];
        check_grad(&ins, |v| l1_loss(&v[0], &v[1]).unwrap(), 1e-4);
        check_grad(&ins, |v| l2_loss(&v[0], &v[1]).unwrap(), 1e-4);
        check_grad(&ins, |v| gradient_loss(&v[0], &v[1]).unwrap(), 1e-4);
        let conv = ConvFeatures::new(1);
        check_grad(&ins, |v| feature_loss(&v[0], &v[1], &conv, 1.0).unwrap(), 1e-4);
    }

    #[test]
    fn loss_suite_identity_and_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data: Vec<f32> = (0..2 * 3 * 96 * 96).map(|_| rng.gen_range(0.0..1.0)).collect();
        let a = BlockTensor::from_planar(2, 96, 96, data).unwrap();
        let suite = LossSuite::default();
        let same = suite.measure(&a, &a).unwrap();
        assert_eq!(same.to_array(), [0.0; 6]);
        let mut b = a.clone();
        b.planar_mut().iter_mut().for_each(|v| *v = (*v * 0.7 + 0.1).min(1.0));
        let lv = suite.measure(&a, &b).unwrap();
        lv.validate().unwrap();
        assert!(lv.to_array().iter().all(|&v| v > 0.0));
        let back = suite.measure(&b, &a).unwrap();
        for (x, y) in lv.to_array().iter().zip(back.to_array()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn psnr_examples() {
        assert_eq!(psnr_from_mse(0.01, 1.0), 20.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mk = |rng: &mut ChaCha8Rng| {
            let y: Vec<u16> = (0..16 * 8).map(|_| rng.gen_range(0..256)).collect();
            PlanarFrame::from_planes(16, 8, 8, ChromaFormat::Yuv420, y, vec![0; 32], vec![0; 32]).unwrap()
        };
        let (a, b) = (mk(&mut rng), mk(&mut rng));
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let mut se = 0.0;
        for yy in 0..8 {
            for xx in 0..16 {
                let d = a.get(Plane::Y, xx, yy) as f64 - b.get(Plane::Y, xx, yy) as f64;
                se += d * d;
            }
        }
        let want = 10.0 * (255.0f64 * 255.0 / (se / 128.0)).log10();
        assert!((psnr(&a, &b).unwrap() - want).abs() < 1e-12);
        let c = PlanarFrame::new(16, 10, 8, ChromaFormat::Yuv420).unwrap();
        assert!(psnr(&a, &c).is_err());
    }

    #[test]
    fn srocc_examples() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let rev: Vec<f64> = x.iter().rev().copied().collect();
        assert!((srocc(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        assert!((srocc(&x, &rev).unwrap() + 1.0).abs() < 1e-15);
        // ranks [1, 2.5, 2.5, 4] vs [1, 2, 3, 4]: cov 4.5/4 over sqrt(4.5/4 * 5/4)
        let r = srocc(&[1.0, 2.0, 2.0, 4.0], &[10.0, 20.0, 30.0, 40.0]).unwrap();
        assert!((r - (4.5 / (4.5f64 * 5.0).sqrt())).abs() < 1e-15);
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
        assert!(srocc(&[1.0], &[2.0]).is_none());
        assert!(srocc(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_none());
        assert!(srocc(&[1.0, 2.0], &[1.0]).is_none());
        assert!(srocc(&[1.0, f64::NAN], &[1.0, 2.0]).is_none());
    }
}
