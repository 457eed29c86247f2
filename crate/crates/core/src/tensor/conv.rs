//! Direct 2-D convolution and pooling in NCHW layout.
//!
//! The networks here have few channels per layer, where a direct
//! row-by-row multiply-accumulate beats im2col by a wide margin. Pointwise
//! (1x1, stride 1) convolutions go through GEMM instead.

use super::{linalg::gemm, Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
struct Geom {
    n: usize,
    ci: usize,
    h: usize,
    w: usize,
    co: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    ph: usize,
    pw: usize,
    oh: usize,
    ow: usize,
}

impl Geom {
    fn pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.ph == 0 && self.pw == 0
    }

    /// Output-column range whose input column `ox*s + kx - pw` is in bounds.
    fn ox_range(&self, kx: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let off = kx as isize - self.pw as isize;
        // ox*s + off >= 0  and  ox*s + off <= w-1
        let lo = if off >= 0 { 0 } else { (-off + s - 1) / s };
        let hi = (self.w as isize - 1 - off).div_euclid(s) + 1;
        let hi = hi.min(self.ow as isize).max(0);
        (lo.max(0) as usize, hi.max(lo) as usize)
    }

    fn iy(&self, oy: usize, ky: usize) -> Option<usize> {
        let iy = (oy * self.stride + ky) as isize - self.ph as isize;
        (iy >= 0 && (iy as usize) < self.h).then_some(iy as usize)
    }
}

fn conv_forward<T: Real>(g: &Geom, x: &[T], wt: &[T], bias: Option<&[T]>) -> Vec<T> {
    let (hw, ohw) = (g.h * g.w, g.oh * g.ow);
    let mut out = vec![T::zero(); g.n * g.co * ohw];
    for n in 0..g.n {
        let xn = &x[n * g.ci * hw..(n + 1) * g.ci * hw];
        let on = &mut out[n * g.co * ohw..(n + 1) * g.co * ohw];
        if g.pointwise() {
            // out[co, p] = sum_ci w[co, ci] * x[ci, p]
            gemm(g.co, g.ci, hw, wt, (g.ci, 1), xn, (hw, 1), on, (hw, 1), T::zero());
        } else {
            for co in 0..g.co {
                let op = &mut on[co * ohw..(co + 1) * ohw];
                for ci in 0..g.ci {
                    let xp = &xn[ci * hw..(ci + 1) * hw];
                    let wk = &wt[(co * g.ci + ci) * g.kh * g.kw..(co * g.ci + ci + 1) * g.kh * g.kw];
                    for ky in 0..g.kh {
                        for oy in 0..g.oh {
                            let Some(iy) = g.iy(oy, ky) else { continue };
                            let xrow = &xp[iy * g.w..(iy + 1) * g.w];
                            let orow = &mut op[oy * g.ow..(oy + 1) * g.ow];
                            for kx in 0..g.kw {
                                let wv = wk[ky * g.kw + kx];
                                let (lo, hi) = g.ox_range(kx);
                                if lo >= hi {
                                    continue;
                                }
                                if g.stride == 1 {
                                    let i0 = lo + kx - g.pw;
                                    let src = &xrow[i0..i0 + (hi - lo)];
                                    for (o, &s) in orow[lo..hi].iter_mut().zip(src) {
                                        *o += wv * s;
                                    }
                                } else {
                                    for ox in lo..hi {
                                        orow[ox] += wv * xrow[ox * g.stride + kx - g.pw];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        if let Some(b) = bias {
            for co in 0..g.co {
                on[co * ohw..(co + 1) * ohw].iter_mut().for_each(|v| *v += b[co]);
            }
        }
    }
    out
}

fn conv_grad_input<T: Real>(g: &Geom, wt: &[T], gy: &[T]) -> Vec<T> {
    let (hw, ohw) = (g.h * g.w, g.oh * g.ow);
    let mut gx = vec![T::zero(); g.n * g.ci * hw];
    for n in 0..g.n {
        let gyn = &gy[n * g.co * ohw..(n + 1) * g.co * ohw];
        let gxn = &mut gx[n * g.ci * hw..(n + 1) * g.ci * hw];
        if g.pointwise() {
            // gx[ci, p] = sum_co w[co, ci] * gy[co, p]
            gemm(g.ci, g.co, hw, wt, (1, g.ci), gyn, (hw, 1), gxn, (hw, 1), T::zero());
            continue;
        }
        for co in 0..g.co {
            let gp = &gyn[co * ohw..(co + 1) * ohw];
            for ci in 0..g.ci {
                let xp = &mut gxn[ci * hw..(ci + 1) * hw];
                let wk = &wt[(co * g.ci + ci) * g.kh * g.kw..(co * g.ci + ci + 1) * g.kh * g.kw];
                for ky in 0..g.kh {
                    for oy in 0..g.oh {
                        let Some(iy) = g.iy(oy, ky) else { continue };
                        let grow = &gp[oy * g.ow..(oy + 1) * g.ow];
                        let xrow = &mut xp[iy * g.w..(iy + 1) * g.w];
                        for kx in 0..g.kw {
                            let wv = wk[ky * g.kw + kx];
                            let (lo, hi) = g.ox_range(kx);
                            if lo >= hi {
                                continue;
                            }
                            if g.stride == 1 {
                                let i0 = lo + kx - g.pw;
                                for (d, &s) in xrow[i0..i0 + (hi - lo)].iter_mut().zip(&grow[lo..hi]) {
                                    *d += wv * s;
                                }
                            } else {
                                for ox in lo..hi {
                                    xrow[ox * g.stride + kx - g.pw] += wv * grow[ox];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    gx
}

fn conv_grad_weight<T: Real>(g: &Geom, x: &[T], gy: &[T]) -> Vec<T> {
    let (hw, ohw) = (g.h * g.w, g.oh * g.ow);
    let kk = g.kh * g.kw;
    let mut gw = vec![T::zero(); g.co * g.ci * kk];
    for n in 0..g.n {
        let xn = &x[n * g.ci * hw..(n + 1) * g.ci * hw];
        let gyn = &gy[n * g.co * ohw..(n + 1) * g.co * ohw];
        if g.pointwise() {
            // gw[co, ci] += sum_p gy[co, p] * x[ci, p]
            gemm(g.co, hw, g.ci, gyn, (hw, 1), xn, (1, hw), &mut gw, (g.ci, 1), T::one());
            continue;
        }
        for co in 0..g.co {
            let gp = &gyn[co * ohw..(co + 1) * ohw];
            for ci in 0..g.ci {
                let xp = &xn[ci * hw..(ci + 1) * hw];
                let wk = &mut gw[(co * g.ci + ci) * kk..(co * g.ci + ci + 1) * kk];
                for ky in 0..g.kh {
                    for oy in 0..g.oh {
                        let Some(iy) = g.iy(oy, ky) else { continue };
                        let grow = &gp[oy * g.ow..(oy + 1) * g.ow];
                        let xrow = &xp[iy * g.w..(iy + 1) * g.w];
                        for kx in 0..g.kw {
                            let (lo, hi) = g.ox_range(kx);
                            if lo >= hi {
                                continue;
                            }
                            let mut acc = T::zero();
                            if g.stride == 1 {
                                let i0 = lo + kx - g.pw;
                                for (&a, &b) in grow[lo..hi].iter().zip(&xrow[i0..i0 + (hi - lo)]) {
                                    acc += a * b;
                                }
                            } else {
                                for ox in lo..hi {
                                    acc += grow[ox] * xrow[ox * g.stride + kx - g.pw];
                                }
                            }
                            wk[ky * g.kw + kx] += acc;
                        }
                    }
                }
            }
        }
    }
    gw
}

impl<T: Real> Tensor<T> {
    /// Cross-correlation of `self` (N, Ci, H, W) with `weight` (Co, Ci, kh, kw).
    pub fn conv2d(
        &self,
        weight: &Tensor<T>,
        bias: Option<&Tensor<T>>,
        stride: usize,
        padding: (usize, usize),
    ) -> Result<Tensor<T>> {
        let (n, ci, h, w) = self.dims4()?;
        let (co, wci, kh, kw) = weight.dims4()?;
        if wci != ci {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: self.shape().to_vec(),
                rhs: weight.shape().to_vec(),
            });
        }
        if let Some(b) = bias {
            if b.shape() != [co] {
                return Err(Error::ShapeMismatch {
                    op: "conv2d bias",
                    lhs: vec![co],
                    rhs: b.shape().to_vec(),
                });
            }
        }
        let (ph, pw) = padding;
        if stride == 0 || h + 2 * ph < kh || w + 2 * pw < kw {
            return Err(Error::InvalidInput(format!(
                "conv2d kernel {kh}x{kw} (stride {stride}, pad {ph},{pw}) does not fit input {h}x{w}"
            )));
        }
        let g = Geom {
            n,
            ci,
            h,
            w,
            co,
            kh,
            kw,
            stride,
            ph,
            pw,
            oh: (h + 2 * ph - kh) / stride + 1,
            ow: (w + 2 * pw - kw) / stride + 1,
        };
        let data = conv_forward(&g, self.data(), weight.data(), bias.map(|b| b.data()));
        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        Ok(Tensor::from_op(
            vec![n, co, g.oh, g.ow],
            data,
            parents,
            move |p: &[Tensor<T>], _out: &[T], gy: &[T]| {
                let gx = p[0].requires_grad().then(|| conv_grad_input(&g, p[1].data(), gy));
                let gw = p[1].requires_grad().then(|| conv_grad_weight(&g, p[0].data(), gy));
                let mut res = vec![gx, gw];
                if p.len() == 3 {
                    res.push(p[2].requires_grad().then(|| {
                        let ohw = g.oh * g.ow;
                        let mut gb = vec![T::zero(); g.co];
                        for n in 0..g.n {
                            for (co, b) in gb.iter_mut().enumerate() {
                                let s = (n * g.co + co) * ohw;
                                *b += gy[s..s + ohw].iter().copied().sum::<T>();
                            }
                        }
                        gb
                    }));
                }
                res
            },
        ))
    }

    /// Non-overlapping `k x k` average pooling (trailing rows/columns dropped).
    pub fn avg_pool2d(&self, k: usize) -> Result<Tensor<T>> {
        let (n, c, h, w) = self.dims4()?;
        if k == 0 || h < k || w < k {
            return Err(Error::InvalidInput(format!("avg_pool2d({k}) on {h}x{w}")));
        }
        let (oh, ow) = (h / k, w / k);
        let scale = T::lit(1.0 / (k * k) as f64);
        let x = self.data();
        let mut out = vec![T::zero(); n * c * oh * ow];
        for p in 0..n * c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut s = T::zero();
                    for dy in 0..k {
                        for dx in 0..k {
                            s += x[p * h * w + (oy * k + dy) * w + ox * k + dx];
                        }
                    }
                    out[p * oh * ow + oy * ow + ox] = s * scale;
                }
            }
        }
        Ok(Tensor::from_op(
            vec![n, c, oh, ow],
            out,
            vec![self.clone()],
            move |_p: &[Tensor<T>], _o: &[T], g: &[T]| {
                let mut gx = vec![T::zero(); n * c * h * w];
                for p in 0..n * c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let v = g[p * oh * ow + oy * ow + ox] * scale;
                            for dy in 0..k {
                                for dx in 0..k {
                                    gx[p * h * w + (oy * k + dy) * w + ox * k + dx] = v;
                                }
                            }
                        }
                    }
                }
                vec![Some(gx)]
            },
        ))
    }

    /// Non-overlapping `k x k` max pooling (trailing rows/columns dropped).
    pub fn max_pool2d(&self, k: usize) -> Result<Tensor<T>> {
        let (n, c, h, w) = self.dims4()?;
        if k == 0 || h < k || w < k {
            return Err(Error::InvalidInput(format!("max_pool2d({k}) on {h}x{w}")));
        }
        let (oh, ow) = (h / k, w / k);
        let x = self.data();
        let mut out = vec![T::zero(); n * c * oh * ow];
        let mut arg = vec![0usize; out.len()];
        for p in 0..n * c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = p * h * w + oy * k * w + ox * k;
                    for dy in 0..k {
                        for dx in 0..k {
                            let i = p * h * w + (oy * k + dy) * w + ox * k + dx;
                            if x[i] > x[best] {
                                best = i;
                            }
                        }
                    }
                    let o = p * oh * ow + oy * ow + ox;
                    out[o] = x[best];
                    arg[o] = best;
                }
            }
        }
        let total = n * c * h * w;
        Ok(Tensor::from_op(
            vec![n, c, oh, ow],
            out,
            vec![self.clone()],
            move |_p: &[Tensor<T>], _o: &[T], g: &[T]| {
                let mut gx = vec![T::zero(); total];
                for (o, &i) in arg.iter().enumerate() {
                    gx[i] += g[o];
                }
                vec![Some(gx)]
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::super::testutil::{check_grad, rand_leaf};
    use super::*;

    fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, ph: usize, pw: usize) -> Vec<f64> {
        let (n, ci, h, wd) = x.dims4().unwrap();
        let (co, _, kh, kw) = w.dims4().unwrap();
        let oh = (h + 2 * ph - kh) / stride + 1;
        let ow = (wd + 2 * pw - kw) / stride + 1;
        let mut out = vec![0.0; n * co * oh * ow];
        for b in 0..n {
            for o in 0..co {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut s = 0.0;
                        for c in 0..ci {
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let iy = (oy * stride + ky) as isize - ph as isize;
                                    let ix = (ox * stride + kx) as isize - pw as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    s += x.data()[((b * ci + c) * h + iy as usize) * wd + ix as usize]
                                        * w.data()[((o * ci + c) * kh + ky) * kw + kx];
                                }
                            }
                        }
                        out[((b * co + o) * oh + oy) * ow + ox] = s;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_naive_loop() {
        let cases = [(3, 1, 1, 1), (5, 1, 2, 2), (1, 1, 0, 0), (3, 2, 1, 1), (7, 2, 3, 3), (4, 2, 1, 1)];
        for (i, &(k, s, ph, pw)) in cases.iter().enumerate() {
            let x = rand_leaf(&[2, 3, 9, 10], 10 + i as u64, -1.0, 1.0);
            let w = rand_leaf(&[4, 3, k, k], 20 + i as u64, -1.0, 1.0);
            let y = x.conv2d(&w, None, s, (ph, pw)).unwrap();
            let r = naive_conv(&x, &w, s, ph, pw);
            assert_eq!(y.numel(), r.len());
            for (a, b) in y.data().iter().zip(&r) {
                assert!((a - b).abs() < 1e-12, "case {i}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn rectangular_kernel_matches_naive_loop() {
        let x = rand_leaf(&[1, 2, 12, 13], 3, -1.0, 1.0);
        let w = rand_leaf(&[1, 2, 1, 5], 4, -1.0, 1.0);
        let y = x.conv2d(&w, None, 1, (0, 0)).unwrap();
        assert_eq!(y.shape(), &[1, 1, 12, 9]);
        let r = naive_conv(&x, &w, 1, 0, 0);
        for (a, b) in y.data().iter().zip(&r) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_gradients() {
        for &(k, s, p) in &[(3, 1, 1), (1, 1, 0), (3, 2, 1), (5, 1, 2)] {
            let x = rand_leaf(&[2, 2, 6, 7], 1, -1.0, 1.0);
            let w = rand_leaf(&[3, 2, k, k], 2, -1.0, 1.0);
            let b = rand_leaf(&[3], 3, -1.0, 1.0);
            check_grad(
                &[x, w, b],
                |v| v[0].conv2d(&v[1], Some(&v[2]), s, (p, p)).unwrap().sqr().sum_all(),
                1e-6,
            );
        }
    }

    #[test]
    fn pooling() {
        let x = rand_leaf(&[2, 2, 6, 6], 9, -1.0, 1.0);
        check_grad(&[x.clone()], |v| v[0].avg_pool2d(2).unwrap().sqr().sum_all(), 1e-6);
        check_grad(&[x.clone()], |v| v[0].max_pool2d(2).unwrap().sqr().sum_all(), 1e-6);
        let y = x.avg_pool2d(2).unwrap();
        let d = x.data();
        assert!((y.data()[0] - (d[0] + d[1] + d[6] + d[7]) / 4.0).abs() < 1e-15);
        let m = x.max_pool2d(3).unwrap();
        assert_eq!(m.shape(), &[2, 2, 2, 2]);
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let x = Tensor::<f32>::zeros(&[1, 3, 8, 8]);
        let w = Tensor::<f32>::zeros(&[2, 4, 3, 3]);
        assert!(x.conv2d(&w, None, 1, (1, 1)).is_err());
    }
}
