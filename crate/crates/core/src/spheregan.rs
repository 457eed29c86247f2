//! Hypersphere geometry for the relativistic sphere GAN objective.
//!
//! Feature points `x` in `R^n` are lifted onto the unit n-sphere by the
//! inverse stereographic projection `T(x) = (2x, s - 1) / (s + 1)` with
//! `s = |x|^2`; `N = (0, .., 0, 1)` is the north pole. Distances are
//! moments `d^m = arccos^m(cos angle)` of the great-circle angle.
//!
//! Scalar `f64` routines carry closed-form gradients (and the mixed second
//! derivative of the relativistic distance) for the finite-difference
//! harness; the `*_tensor` routines build differentiable training losses.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::tensor::{Real, Tensor};

/// Clamp margin keeping the relativistic cosine strictly inside `(-1, 1)`.
pub const COS_MARGIN: f64 = 1e-7;

/// Points with `|A|` above this are too close to the arccos singularity
/// for a meaningful finite-difference check.
pub const GRADCHECK_LIMIT: f64 = 1.0 - 1e-3;

/// How real and fake rows are matched in the relativistic term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pairing {
    /// Row `i` of the real batch against row `i` of the fake batch.
    #[default]
    Index,
    /// Mean over all `B x B` real/fake combinations.
    CrossProduct,
}

/// Objective hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReSphereConfig {
    /// Number of moments `M`.
    pub moments: u32,
    /// Weight of the adversarial term in the full generator loss.
    pub adv_weight: f64,
    /// Feature dimension `n`.
    pub feature_dim: usize,
    pub pairing: Pairing,
}

impl Default for ReSphereConfig {
    fn default() -> Self {
        ReSphereConfig {
            moments: 3,
            adv_weight: 0.005,
            feature_dim: 1024,
            pairing: Pairing::Index,
        }
    }
}

impl ReSphereConfig {
    pub fn validate(&self) -> Result<()> {
        if self.moments < 1 {
            return Err(Error::Config("moment count must be at least 1".into()));
        }
        if !(self.adv_weight >= 0.0 && self.adv_weight.is_finite()) {
            return Err(Error::Config(format!("adversarial weight {}", self.adv_weight)));
        }
        if self.feature_dim == 0 {
            return Err(Error::Config("feature dimension must be positive".into()));
        }
        Ok(())
    }
}

/// `B x n` feature points, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBatch {
    rows: usize,
    dim: usize,
    data: Vec<f64>,
}

impl FeatureBatch {
    pub fn new(rows: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * dim {
            return Err(invalid(format!(
                "feature batch {rows}x{dim} needs {} values, got {}",
                rows * dim,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature batch".into()));
        }
        Ok(FeatureBatch { rows, dim, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != dim) {
            return Err(invalid("ragged feature rows"));
        }
        Self::new(rows.len(), dim, rows.concat())
    }

    pub fn from_tensor<T: Real>(t: &Tensor<T>) -> Result<Self> {
        match *t.shape() {
            [r, d] => Self::new(r, d, t.data().iter().map(|v| v.as_f64()).collect()),
            _ => Err(invalid(format!("feature tensor must be rank 2, got {:?}", t.shape()))),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Rows reordered by `perm`.
    pub fn permuted(&self, perm: &[usize]) -> FeatureBatch {
        let data = perm.iter().flat_map(|&i| self.row(i).iter().copied()).collect();
        FeatureBatch {
            rows: perm.len(),
            dim: self.dim,
            data,
        }
    }

    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::from_vec(&[self.rows, self.dim], self.data.iter().map(|&v| T::lit(v)).collect())
            .expect("feature batch geometry")
    }
}

fn sq_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_finite(x: &[f64]) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite("feature point".into()))
    }
}

/// A point on the unit n-sphere embedded in `R^(n+1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpherePoint {
    pub coords: Vec<f64>,
}

impl SpherePoint {
    pub fn norm(&self) -> f64 {
        sq_norm(&self.coords).sqrt()
    }

    pub fn dot(&self, other: &SpherePoint) -> f64 {
        dot(&self.coords, &other.coords)
    }

    pub fn north_pole(n: usize) -> SpherePoint {
        let mut coords = vec![0.0; n + 1];
        coords[n] = 1.0;
        SpherePoint { coords }
    }
}

/// `T(x) = (2x / (s + 1), (s - 1) / (s + 1))`
pub fn inverse_stereographic(x: &[f64]) -> Result<SpherePoint> {
    check_finite(x)?;
    let s = sq_norm(x);
    let inv = 1.0 / (s + 1.0);
    let mut coords: Vec<f64> = x.iter().map(|v| 2.0 * v * inv).collect();
    // 1 - 2/(s+1) keeps precision for large s
    coords.push(1.0 - 2.0 * inv);
    Ok(SpherePoint { coords })
}

/// `N . T(x)`
pub fn north_pole_cos(x: &[f64]) -> f64 {
    1.0 - 2.0 / (sq_norm(x) + 1.0)
}

/// `arccos^m(N . T(x))`
pub fn north_pole_distance(x: &[f64], m: u32) -> f64 {
    north_pole_cos(x).clamp(-1.0, 1.0).acos().powi(m as i32)
}

/// Unclamped relativistic cosine `A = T(x_r) . T(x_f)` in closed form.
pub fn relativistic_cos(xr: &[f64], xf: &[f64]) -> f64 {
    let (sr, sf) = (sq_norm(xr), sq_norm(xf));
    (sr * sf - sr - sf + 4.0 * dot(xr, xf) + 1.0) / ((sr + 1.0) * (sf + 1.0))
}

/// `arccos^m(A)` with `A` clamped to `[-1 + COS_MARGIN, 1 - COS_MARGIN]`.
pub fn relativistic_distance(xr: &[f64], xf: &[f64], m: u32) -> f64 {
    let a = relativistic_cos(xr, xf).clamp(-1.0 + COS_MARGIN, 1.0 - COS_MARGIN);
    a.acos().powi(m as i32)
}

/// First and second derivatives of `g(A) = arccos^m(A)`.
fn moment_derivs(a: f64, m: u32) -> (f64, f64) {
    let m = m as f64;
    let t = a.acos();
    let q = 1.0 - a * a;
    let g1 = -m * t.powf(m - 1.0) / q.sqrt();
    let g2_first = if m == 1.0 { 0.0 } else { m * (m - 1.0) * t.powf(m - 2.0) / q };
    let g2 = g2_first - m * t.powf(m - 1.0) * a / q.powf(1.5);
    (g1, g2)
}

/// Gradient of [`north_pole_distance`] with respect to `x`.
pub fn north_pole_distance_grad(x: &[f64], m: u32) -> Vec<f64> {
    let s = sq_norm(x);
    let c = north_pole_cos(x);
    let (g1, _) = moment_derivs(c, m);
    // dc/dx = 4x / (s+1)^2
    let k = g1 * 4.0 / ((s + 1.0) * (s + 1.0));
    x.iter().map(|v| k * v).collect()
}

/// `(dA/dx_r, dA/dx_f)`
pub fn relativistic_cos_grad(xr: &[f64], xf: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (sr, sf) = (sq_norm(xr), sq_norm(xf));
    let d = (sr + 1.0) * (sf + 1.0);
    let a = relativistic_cos(xr, xf);
    let side = |x: &[f64], y: &[f64], sy: f64| -> Vec<f64> {
        x.iter()
            .zip(y)
            .map(|(xi, yi)| (2.0 * xi * (sy - 1.0) + 4.0 * yi - 2.0 * a * xi * (sy + 1.0)) / d)
            .collect()
    };
    (side(xr, xf, sf), side(xf, xr, sr))
}

/// Mixed second derivative `d^2 A / dx_r dx_f` as a row-major `n x n`
/// matrix indexed `[i (real), j (fake)]`.
pub fn relativistic_cos_mixed_hessian(xr: &[f64], xf: &[f64]) -> Vec<f64> {
    let n = xr.len();
    let (sr, sf) = (sq_norm(xr), sq_norm(xf));
    let d = (sr + 1.0) * (sf + 1.0);
    let a = relativistic_cos(xr, xf);
    let (gr, gf) = relativistic_cos_grad(xr, xf);
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let delta = if i == j { 4.0 } else { 0.0 };
            // derivative of the numerator of dA/dx_r[i] with respect to x_f[j]
            let du = 4.0 * xr[i] * xf[j] + delta - 2.0 * xr[i] * (gf[j] * (sf + 1.0) + 2.0 * a * xf[j]);
            h[i * n + j] = (du - gr[i] * 2.0 * xf[j] * (sr + 1.0)) / d;
        }
    }
    h
}

/// Gradients of [`relativistic_distance`] with respect to `x_r` and `x_f`
/// at an unclamped point.
pub fn relativistic_distance_grad(xr: &[f64], xf: &[f64], m: u32) -> (Vec<f64>, Vec<f64>) {
    let a = relativistic_cos(xr, xf);
    let (g1, _) = moment_derivs(a, m);
    let (gr, gf) = relativistic_cos_grad(xr, xf);
    (gr.iter().map(|v| g1 * v).collect(), gf.iter().map(|v| g1 * v).collect())
}

/// Mixed second derivative of `arccos^m(A)`:
/// `g''(A) dA/dx_r (dA/dx_f)^T + g'(A) d^2A/dx_r dx_f`, row-major `[i, j]`.
pub fn relativistic_distance_mixed_hessian(xr: &[f64], xf: &[f64], m: u32) -> Vec<f64> {
    let n = xr.len();
    let a = relativistic_cos(xr, xf);
    let (g1, g2) = moment_derivs(a, m);
    let (gr, gf) = relativistic_cos_grad(xr, xf);
    let ha = relativistic_cos_mixed_hessian(xr, xf);
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] = g2 * gr[i] * gf[j] + g1 * ha[i * n + j];
        }
    }
    h
}

/// Outcome of a finite-difference comparison.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradcheckReport {
    /// Norm-wise relative error of the analytic gradient.
    pub grad_rel_error: f64,
    /// Largest absolute analytic gradient entry.
    pub grad_max_abs: f64,
    /// Norm-wise relative error of the analytic mixed second derivative
    /// (relativistic distance only).
    pub hessian_rel_error: Option<f64>,
    pub hessian_max_abs: Option<f64>,
    /// Cosine at the checked point.
    pub cos: f64,
}

impl GradcheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.grad_rel_error.max(self.hessian_rel_error.unwrap_or(0.0))
    }

    pub fn all_finite(&self) -> bool {
        self.grad_max_abs.is_finite() && self.hessian_max_abs.is_none_or(|v| v.is_finite())
    }
}

fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = sq_norm(a).sqrt().max(sq_norm(b).sqrt()).max(1e-300);
    diff / scale
}

/// Central differences of a scalar function at `point` with step `h`.
pub fn numeric_gradient(f: impl Fn(&[f64]) -> f64, point: &[f64], h: f64) -> Vec<f64> {
    let mut x = point.to_vec();
    (0..point.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(&x);
            x[i] = orig - h;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Norm-wise relative error between `grad(point)` and central differences
/// of `f`, plus the largest analytic entry.
pub fn check_gradient(
    f: impl Fn(&[f64]) -> f64,
    grad: impl Fn(&[f64]) -> Vec<f64>,
    point: &[f64],
    h: f64,
) -> (f64, f64) {
    let analytic = grad(point);
    let numeric = numeric_gradient(f, point, h);
    let max_abs = analytic.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    (rel_error(&analytic, &numeric), max_abs)
}

fn check_step(h: f64) -> Result<()> {
    if h > 0.0 && h.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("finite-difference step {h}")))
    }
}

/// Checks the gradient of `d^m(N, T(x))`. Points whose cosine is within
/// `1e-3` of `+-1` are rejected.
pub fn gradcheck_north_pole(x: &[f64], m: u32, h: f64) -> Result<GradcheckReport> {
    check_finite(x)?;
    check_step(h)?;
    let c = north_pole_cos(x);
    if c.abs() > GRADCHECK_LIMIT {
        return Err(invalid(format!("degenerate point: north-pole cosine {c}")));
    }
    let (err, max_abs) = check_gradient(
        |p| north_pole_distance(p, m),
        |p| north_pole_distance_grad(p, m),
        x,
        h,
    );
    Ok(GradcheckReport {
        grad_rel_error: err,
        grad_max_abs: max_abs,
        hessian_rel_error: None,
        hessian_max_abs: None,
        cos: c,
    })
}

/// Checks the gradient of `d^m(T(x_r), T(x_f))` with respect to both
/// arguments, and its mixed second derivative against central differences
/// of the analytic `x_r` gradient along `x_f`.
pub fn gradcheck_relativistic(xr: &[f64], xf: &[f64], m: u32, h: f64) -> Result<GradcheckReport> {
    check_finite(xr)?;
    check_finite(xf)?;
    check_step(h)?;
    if xr.len() != xf.len() {
        return Err(invalid(format!("feature lengths {} and {}", xr.len(), xf.len())));
    }
    let a = relativistic_cos(xr, xf);
    if a.abs() > GRADCHECK_LIMIT {
        return Err(invalid(format!("degenerate point: relativistic cosine {a}")));
    }
    let n = xr.len();
    let joint: Vec<f64> = xr.iter().chain(xf).copied().collect();
    let (err, max_abs) = check_gradient(
        |p| relativistic_distance(&p[..n], &p[n..], m),
        |p| {
            let (gr, gf) = relativistic_distance_grad(&p[..n], &p[n..], m);
            gr.into_iter().chain(gf).collect()
        },
        &joint,
        h,
    );
    let analytic = relativistic_distance_mixed_hessian(xr, xf, m);
    let mut numeric = vec![0.0; n * n];
    let mut f = xf.to_vec();
    for j in 0..n {
        let orig = f[j];
        f[j] = orig + h;
        let (up, _) = relativistic_distance_grad(xr, &f, m);
        f[j] = orig - h;
        let (down, _) = relativistic_distance_grad(xr, &f, m);
        f[j] = orig;
        for i in 0..n {
            numeric[i * n + j] = (up[i] - down[i]) / (2.0 * h);
        }
    }
    Ok(GradcheckReport {
        grad_rel_error: err,
        grad_max_abs: max_abs,
        hessian_rel_error: Some(rel_error(&analytic, &numeric)),
        hessian_max_abs: Some(analytic.iter().fold(0.0f64, |m, v| m.max(v.abs()))),
        cos: a,
    })
}

fn check_batches(real: &FeatureBatch, fake: &FeatureBatch) -> Result<()> {
    if real.rows() != fake.rows() || real.dim() != fake.dim() {
        return Err(invalid(format!(
            "real batch {}x{} against fake batch {}x{}",
            real.rows(),
            real.dim(),
            fake.rows(),
            fake.dim()
        )));
    }
    if real.rows() == 0 {
        return Err(invalid("empty feature batch"));
    }
    Ok(())
}

/// Batch means of the three distance families, summed over moments.
struct Terms {
    north_fake: f64,
    north_real: f64,
    relativistic: f64,
}

fn terms(real: &FeatureBatch, fake: &FeatureBatch, cfg: &ReSphereConfig) -> Result<Terms> {
    cfg.validate()?;
    check_batches(real, fake)?;
    let b = real.rows();
    let mut t = Terms {
        north_fake: 0.0,
        north_real: 0.0,
        relativistic: 0.0,
    };
    for m in 1..=cfg.moments {
        let mean = |f: &dyn Fn(usize) -> f64| (0..b).map(f).sum::<f64>() / b as f64;
        t.north_fake += mean(&|i| north_pole_distance(fake.row(i), m));
        t.north_real += mean(&|i| north_pole_distance(real.row(i), m));
        t.relativistic += match cfg.pairing {
            Pairing::Index => mean(&|i| relativistic_distance(real.row(i), fake.row(i), m)),
            Pairing::CrossProduct => {
                mean(&|i| mean(&|j| relativistic_distance(real.row(i), fake.row(j), m)))
            }
        };
    }
    Ok(t)
}

/// `-sum_m E[d^m(N, T(x_f))] + sum_m E[d^m(T(x_r), T(x_f))]`
pub fn generator_adv_loss(real: &FeatureBatch, fake: &FeatureBatch, cfg: &ReSphereConfig) -> Result<f64> {
    let t = terms(real, fake, cfg)?;
    Ok(-t.north_fake + t.relativistic)
}

/// `sum_m E[d^m(N, T(x_f))] - sum_m E[d^m(N, T(x_r))] - sum_m E[d^m(T(x_r), T(x_f))]`
pub fn discriminator_loss(real: &FeatureBatch, fake: &FeatureBatch, cfg: &ReSphereConfig) -> Result<f64> {
    let t = terms(real, fake, cfg)?;
    Ok(t.north_fake - t.north_real - t.relativistic)
}

/// `sum_m E[d^m(T(x_r), T(x_f))]` alone.
pub fn relativistic_term(real: &FeatureBatch, fake: &FeatureBatch, cfg: &ReSphereConfig) -> Result<f64> {
    Ok(terms(real, fake, cfg)?.relativistic)
}

fn check_tensor_batches<T: Real>(real: &Tensor<T>, fake: &Tensor<T>) -> Result<()> {
    match (real.shape(), fake.shape()) {
        ([a, n], [b, k]) if a == b && n == k && *a > 0 => Ok(()),
        _ => Err(Error::ShapeMismatch {
            op: "sphere loss",
            lhs: real.shape().to_vec(),
            rhs: fake.shape().to_vec(),
        }),
    }
}

/// `(B, 1)` north-pole angles of a `(B, n)` batch.
fn north_angle_tensor<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let s = x.sqr().sum_axes(&[1])?;
    Ok(s.affine(1.0, 1.0).recip().affine(-2.0, 1.0).acos())
}

/// Relativistic angles: `(B, 1)` for index pairing, `(B, B)` for the cross
/// product.
fn relativistic_angle_tensor<T: Real>(real: &Tensor<T>, fake: &Tensor<T>, pairing: Pairing) -> Result<Tensor<T>> {
    let sr = real.sqr().sum_axes(&[1])?;
    let sf = fake.sqr().sum_axes(&[1])?;
    let (d, sf) = match pairing {
        Pairing::Index => (real.mul(fake)?.sum_axes(&[1])?, sf),
        Pairing::CrossProduct => {
            let b = sf.numel();
            (real.matmul_t(fake, false, true)?, sf.reshape(&[1, b])?)
        }
    };
    let num = sr
        .mul(&sf)?
        .sub(&sr)?
        .sub(&sf)?
        .add(&d.scale(4.0))?
        .affine(1.0, 1.0);
    let den = sr.affine(1.0, 1.0).mul(&sf.affine(1.0, 1.0))?;
    Ok(num.div(&den)?.clamp(-1.0 + COS_MARGIN, 1.0 - COS_MARGIN).acos())
}

fn moment_sum<T: Real>(angle: &Tensor<T>, moments: u32) -> Result<Tensor<T>> {
    let mut acc = angle.mean_all();
    for m in 2..=moments {
        acc = acc.add(&angle.powf(m as f64).mean_all())?;
    }
    Ok(acc)
}

/// Differentiable [`generator_adv_loss`] over `(B, n)` tensors.
pub fn generator_adv_loss_tensor<T: Real>(
    real: &Tensor<T>,
    fake: &Tensor<T>,
    cfg: &ReSphereConfig,
) -> Result<Tensor<T>> {
    cfg.validate()?;
    check_tensor_batches(real, fake)?;
    let nf = moment_sum(&north_angle_tensor(fake)?, cfg.moments)?;
    let rel = moment_sum(&relativistic_angle_tensor(real, fake, cfg.pairing)?, cfg.moments)?;
    rel.sub(&nf)
}

/// Differentiable [`discriminator_loss`] over `(B, n)` tensors.
pub fn discriminator_loss_tensor<T: Real>(
    real: &Tensor<T>,
    fake: &Tensor<T>,
    cfg: &ReSphereConfig,
) -> Result<Tensor<T>> {
    cfg.validate()?;
    check_tensor_batches(real, fake)?;
    let nf = moment_sum(&north_angle_tensor(fake)?, cfg.moments)?;
    let nr = moment_sum(&north_angle_tensor(real)?, cfg.moments)?;
    let rel = moment_sum(&relativistic_angle_tensor(real, fake, cfg.pairing)?, cfg.moments)?;
    nf.sub(&nr)?.sub(&rel)
}
