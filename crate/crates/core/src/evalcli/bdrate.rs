//! Bjøntegaard delta bitrate between two rate-quality curves.

use std::fmt;
use std::str::FromStr;

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Minimum number of points for the cubic fit.
pub const MIN_POINTS: usize = 4;

/// Quality metric of a curve.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricId {
    Psnr,
    Ssim,
    MsSsim,
    External,
}

impl MetricId {
    pub const ALL: [MetricId; 4] = [MetricId::Psnr, MetricId::Ssim, MetricId::MsSsim, MetricId::External];

    pub fn name(self) -> &'static str {
        match self {
            MetricId::Psnr => "psnr",
            MetricId::Ssim => "ssim",
            MetricId::MsSsim => "msssim",
            MetricId::External => "external",
        }
    }
}

impl fmt::Display for MetricId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Rate-quality points ordered by bitrate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RDCurve {
    /// `(bitrate_kbps, quality)` pairs.
    pub points: Vec<(f64, f64)>,
    pub metric: MetricId,
}

impl RDCurve {
    /// Sorts by bitrate and validates.
    pub fn new(mut points: Vec<(f64, f64)>, metric: MetricId) -> Result<Self> {
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        let c = RDCurve { points, metric };
        c.validate()?;
        Ok(c)
    }

    /// At least four finite points with positive, strictly increasing
    /// bitrates. Quality falling with rate only logs a warning.
    pub fn validate(&self) -> Result<()> {
        if self.points.len() < MIN_POINTS {
            return Err(invalid(format!(
                "BD-rate needs at least {MIN_POINTS} points, got {}",
                self.points.len()
            )));
        }
        if self.points.iter().any(|&(r, q)| !(r > 0.0 && r.is_finite() && q.is_finite())) {
            return Err(invalid("curve points need positive finite bitrates and finite qualities"));
        }
        if self.points.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(invalid("curve bitrates must be strictly increasing"));
        }
        if self.points.windows(2).any(|w| w[1].1 < w[0].1) {
            warn!("{} curve quality decreases with bitrate", self.metric);
        }
        Ok(())
    }

    pub fn quality_range(&self) -> (f64, f64) {
        let q = self.points.iter().map(|p| p.1);
        (q.clone().fold(f64::INFINITY, f64::min), q.fold(f64::NEG_INFINITY, f64::max))
    }

    /// `(quality, log10 bitrate)` samples.
    fn log_samples(&self) -> Vec<(f64, f64)> {
        self.points.iter().map(|&(r, q)| (q, r.log10())).collect()
    }
}

/// Interpolation of log-rate over quality.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BdMethod {
    /// Least-squares cubic polynomial, the classical formulation.
    #[default]
    Cubic,
    /// Piecewise cubic Hermite interpolation (monotone slopes).
    Pchip,
}

impl FromStr for BdMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cubic" => Ok(BdMethod::Cubic),
            "pchip" => Ok(BdMethod::Pchip),
            _ => Err(invalid(format!("unknown BD-rate method `{s}`"))),
        }
    }
}

/// Cubic `log10(rate) = p(quality)` fitted in a normalized variable.
#[derive(Clone, Debug, PartialEq)]
pub struct CubicFit {
    /// Coefficients of `t^0..t^3` with `t = (q - center) / scale`.
    pub coeffs: [f64; 4],
    pub center: f64,
    pub scale: f64,
}

impl CubicFit {
    pub fn fit(samples: &[(f64, f64)]) -> Result<Self> {
        let n = samples.len();
        let center = samples.iter().map(|s| s.0).sum::<f64>() / n as f64;
        let spread = samples.iter().map(|s| (s.0 - center).abs()).fold(0.0, f64::max);
        if !(spread > 0.0) {
            return Err(invalid("cubic fit needs distinct quality values"));
        }
        let a = DMatrix::from_fn(n, 4, |i, j| ((samples[i].0 - center) / spread).powi(j as i32));
        let b = DVector::from_iterator(n, samples.iter().map(|s| s.1));
        let x = a
            .svd(true, true)
            .solve(&b, 1e-12)
            .map_err(|e| invalid(format!("cubic fit failed: {e}")))?;
        Ok(CubicFit {
            coeffs: [x[0], x[1], x[2], x[3]],
            center,
            scale: spread,
        })
    }

    pub fn eval(&self, q: f64) -> f64 {
        let t = (q - self.center) / self.scale;
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * t + c)
    }

    /// Exact integral over `[lo, hi]` in quality units.
    pub fn integral(&self, lo: f64, hi: f64) -> f64 {
        let anti = |q: f64| {
            let t = (q - self.center) / self.scale;
            self.coeffs.iter().enumerate().map(|(k, &c)| c * t.powi(k as i32 + 1) / (k + 1) as f64).sum::<f64>()
        };
        self.scale * (anti(hi) - anti(lo))
    }
}

/// Fritsch-Carlson monotone cubic Hermite interpolant.
#[derive(Clone, Debug, PartialEq)]
pub struct Pchip {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

impl Pchip {
    pub fn new(samples: &[(f64, f64)]) -> Result<Self> {
        let mut s = samples.to_vec();
        s.sort_by(|a, b| a.0.total_cmp(&b.0));
        if s.len() < 2 || s.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(invalid("piecewise interpolation needs strictly increasing qualities"));
        }
        let (x, y): (Vec<f64>, Vec<f64>) = s.into_iter().unzip();
        let n = x.len();
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
        let mut d = vec![0.0; n];
        if n == 2 {
            d = vec![delta[0]; 2];
        } else {
            for i in 1..n - 1 {
                if delta[i - 1] * delta[i] > 0.0 {
                    let (w1, w2) = (2.0 * h[i] + h[i - 1], h[i] + 2.0 * h[i - 1]);
                    d[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
                }
            }
            let end = |h0: f64, h1: f64, d0: f64, d1: f64| {
                let v = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
                if v.signum() != d0.signum() {
                    0.0
                } else if d0.signum() != d1.signum() && v.abs() > 3.0 * d0.abs() {
                    3.0 * d0
                } else {
                    v
                }
            };
            d[0] = end(h[0], h[1], delta[0], delta[1]);
            d[n - 1] = end(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
        }
        Ok(Pchip { x, y, d })
    }

    pub fn eval(&self, q: f64) -> f64 {
        let n = self.x.len();
        let i = self.x.partition_point(|&v| v <= q).clamp(1, n - 1) - 1;
        let h = self.x[i + 1] - self.x[i];
        let t = (q - self.x[i]) / h;
        let (t2, t3) = (t * t, t * t * t);
        (2.0 * t3 - 3.0 * t2 + 1.0) * self.y[i]
            + (t3 - 2.0 * t2 + t) * h * self.d[i]
            + (-2.0 * t3 + 3.0 * t2) * self.y[i + 1]
            + (t3 - t2) * h * self.d[i + 1]
    }

    /// Exact integral: Simpson's rule on every knot interval intersecting
    /// `[lo, hi]`, which is exact for cubics.
    pub fn integral(&self, lo: f64, hi: f64) -> f64 {
        let mut cuts = vec![lo];
        cuts.extend(self.x.iter().copied().filter(|&v| v > lo && v < hi));
        cuts.push(hi);
        cuts.windows(2)
            .map(|w| {
                let (a, b) = (w[0], w[1]);
                (b - a) / 6.0 * (self.eval(a) + 4.0 * self.eval(0.5 * (a + b)) + self.eval(b))
            })
            .sum()
    }
}

/// Overlapping quality interval of two curves.
pub fn overlap(anchor: &RDCurve, test: &RDCurve) -> Result<(f64, f64)> {
    let (a0, a1) = anchor.quality_range();
    let (t0, t1) = test.quality_range();
    let (lo, hi) = (a0.max(t0), a1.min(t1));
    if !(hi > lo) {
        return Err(invalid(format!(
            "quality ranges [{a0}, {a1}] and [{t0}, {t1}] do not overlap"
        )));
    }
    Ok((lo, hi))
}

/// Mean `log10(rate_test) - log10(rate_anchor)` over the quality overlap.
pub fn mean_log_rate_difference(anchor: &RDCurve, test: &RDCurve, method: BdMethod) -> Result<f64> {
    anchor.validate()?;
    test.validate()?;
    if anchor.metric != test.metric {
        return Err(invalid(format!("comparing a {} curve with a {} curve", anchor.metric, test.metric)));
    }
    let (lo, hi) = overlap(anchor, test)?;
    let (ia, it) = match method {
        BdMethod::Cubic => {
            let (fa, ft) = (CubicFit::fit(&anchor.log_samples())?, CubicFit::fit(&test.log_samples())?);
            (fa.integral(lo, hi), ft.integral(lo, hi))
        }
        BdMethod::Pchip => {
            let (fa, ft) = (Pchip::new(&anchor.log_samples())?, Pchip::new(&test.log_samples())?);
            (fa.integral(lo, hi), ft.integral(lo, hi))
        }
    };
    Ok((it - ia) / (hi - lo))
}

/// BD-rate in percent; negative means the test needs less bitrate.
pub fn bd_rate_with(anchor: &RDCurve, test: &RDCurve, method: BdMethod) -> Result<f64> {
    Ok((10f64.powf(mean_log_rate_difference(anchor, test, method)?) - 1.0) * 100.0)
}

/// Cubic BD-rate in percent.
pub fn bd_rate(anchor: &RDCurve, test: &RDCurve) -> Result<f64> {
    bd_rate_with(anchor, test, BdMethod::Cubic)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(p: &[(f64, f64)]) -> RDCurve {
        RDCurve::new(p.to_vec(), MetricId::Psnr).unwrap()
    }

    /// Exact interpolating cubic by Gaussian elimination on the raw
    /// Vandermonde system.
    fn interp(pts: &[(f64, f64)]) -> [f64; 4] {
        let mut m: Vec<[f64; 5]> = pts.iter().map(|&(r, q)| [1.0, q, q * q, q * q * q, r.log10()]).collect();
        for c in 0..4 {
            let p = (c..4).max_by(|&a, &b| m[a][c].abs().total_cmp(&m[b][c].abs())).unwrap();
            m.swap(c, p);
            for r in 0..4 {
                if r != c {
                    let f = m[r][c] / m[c][c];
                    for k in 0..5 {
                        m[r][k] -= f * m[c][k];
                    }
                }
            }
        }
        [m[0][4] / m[0][0], m[1][4] / m[1][1], m[2][4] / m[2][2], m[3][4] / m[3][3]]
    }

    fn dense_oracle(a: &[(f64, f64)], t: &[(f64, f64)]) -> f64 {
        let (pa, pt) = (interp(a), interp(t));
        let ev = |c: &[f64; 4], q: f64| c[0] + c[1] * q + c[2] * q * q + c[3] * q * q * q;
        let lo = a[0].1.max(t[0].1);
        let hi = a[3].1.min(t[3].1);
        let n = 200_000;
        let h = (hi - lo) / n as f64;
        let mut s = 0.0;
        for i in 0..=n {
            let q = lo + i as f64 * h;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            s += w * (ev(&pt, q) - ev(&pa, q));
        }
        (10f64.powf(s * h / (hi - lo)) - 1.0) * 100.0
    }

    const ANCHOR: [(f64, f64); 4] = [(100.0, 30.0), (200.0, 33.0), (400.0, 36.0), (800.0, 39.0)];
    const TEST: [(f64, f64); 4] = [(120.0, 30.5), (230.0, 33.2), (430.0, 36.1), (900.0, 39.3)];

    #[test]
    fn identities() {
        let a = curve(&ANCHOR);
        assert!(bd_rate(&a, &a).unwrap().abs() < 1e-12);
        let half = curve(&ANCHOR.map(|(r, q)| (r * 0.5, q)));
        assert!((bd_rate(&a, &half).unwrap() + 50.0).abs() < 1e-9);
        assert!((bd_rate_with(&a, &half, BdMethod::Pchip).unwrap() + 50.0).abs() < 1e-9);
    }

    #[test]
    fn derived_case_matches_dense_integration() {
        let got = bd_rate(&curve(&ANCHOR), &curve(&TEST)).unwrap();
        let want = dense_oracle(&ANCHOR, &TEST);
        assert!(((got - want) / want).abs() < 5e-4, "{got} vs {want}");
        assert!(got > 0.0);
        let p = bd_rate_with(&curve(&ANCHOR), &curve(&TEST), BdMethod::Pchip).unwrap();
        assert!((p - got).abs() < 2.0, "pchip {p} vs cubic {got}");
    }

    #[test]
    fn constant_quality_gain() {
        // +1 dB at every rate on a log-linear curve: log10 r = (q - 20) / 10
        let a: Vec<_> = [30.0, 33.0, 36.0, 39.0].iter().map(|&q| (10f64.powf((q - 20.0) / 10.0), q)).collect();
        let t: Vec<_> = a.iter().map(|&(r, q)| (r, q + 1.0)).collect();
        let got = bd_rate(&curve(&a), &curve(&t)).unwrap();
        let closed = (10f64.powf(-0.1) - 1.0) * 100.0;
        assert!((got - closed).abs() < 1e-9);
        let oracle = dense_oracle(
            &[a[0], a[1], a[2], a[3]],
            &[t[0], t[1], t[2], t[3]],
        );
        assert!((got - oracle).abs() < 1e-6);
    }

    #[test]
    fn rejections() {
        assert!(RDCurve::new(ANCHOR[..3].to_vec(), MetricId::Psnr).is_err());
        assert!(RDCurve::new(vec![(1.0, 1.0), (1.0, 2.0), (2.0, 3.0), (3.0, 4.0)], MetricId::Psnr).is_err());
        assert!(RDCurve::new(vec![(0.0, 1.0), (1.0, 2.0), (2.0, 3.0), (3.0, 4.0)], MetricId::Psnr).is_err());
        let far = curve(&ANCHOR.map(|(r, q)| (r, q + 20.0)));
        assert!(bd_rate(&curve(&ANCHOR), &far).is_err());
        let ssim = RDCurve::new(ANCHOR.to_vec(), MetricId::Ssim).unwrap();
        assert!(bd_rate(&curve(&ANCHOR), &ssim).is_err());
        assert_eq!("pchip".parse::<BdMethod>().unwrap(), BdMethod::Pchip);
    }

    #[test]
    fn least_squares_with_more_points() {
        let pts: Vec<_> = (0..7).map(|i| (50.0 * 1.5f64.powi(i), 28.0 + 2.0 * i as f64 + 0.1 * (i % 2) as f64)).collect();
        let fit = CubicFit::fit(&curve(&pts).log_samples()).unwrap();
        // normal equations on the normalized basis must hold at the solution
        let resid: Vec<f64> = pts.iter().map(|&(r, q)| fit.eval(q) - r.log10()).collect();
        for k in 0..4 {
            let g: f64 = pts.iter().zip(&resid).map(|(&(_, q), e)| e * ((q - fit.center) / fit.scale).powi(k)).sum();
            assert!(g.abs() < 1e-10);
        }
        let pchip = Pchip::new(&curve(&pts).log_samples()).unwrap();
        for &(r, q) in &pts {
            assert!((pchip.eval(q) - r.log10()).abs() < 1e-12);
        }
    }
}
