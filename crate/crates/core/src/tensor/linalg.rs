use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Extent in elements touched by an `r x c` view with the given strides.
fn extent(r: usize, c: usize, (rs, cs): (usize, usize)) -> usize {
    if r == 0 || c == 0 {
        0
    } else {
        (r - 1) * rs + (c - 1) * cs + 1
    }
}

/// `c = a * b + beta * c` for an `m x k` by `k x n` product over strided
/// row-major views.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    sa: (usize, usize),
    b: &[T],
    sb: (usize, usize),
    c: &mut [T],
    sc: (usize, usize),
    beta: T,
) {
    assert!(a.len() >= extent(m, k, sa));
    assert!(b.len() >= extent(k, n, sb));
    assert!(c.len() >= extent(m, n, sc));
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: bounds asserted above; `c` is uniquely borrowed.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            sa.0 as isize,
            sa.1 as isize,
            b.as_ptr(),
            sb.0 as isize,
            sb.1 as isize,
            beta,
            c.as_mut_ptr(),
            sc.0 as isize,
            sc.1 as isize,
        )
    }
}

fn batch_dims(t: &Tensor<impl Real>) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [r, c] => Ok((1, r, c)),
        [b, r, c] => Ok((b, r, c)),
        _ => Err(Error::InvalidInput(format!(
            "matmul expects rank 2 or 3, got {:?}",
            t.shape()
        ))),
    }
}

impl<T: Real> Tensor<T> {
    /// Batched product `op(a) * op(b)`, where `op` transposes the trailing two
    /// dimensions when the matching flag is set. Rank-3 operands must share
    /// the batch size.
    pub fn matmul_t(&self, rhs: &Tensor<T>, trans_a: bool, trans_b: bool) -> Result<Tensor<T>> {
        let (ba, ra, ca) = batch_dims(self)?;
        let (bb, rb, cb) = batch_dims(rhs)?;
        let (m, k) = if trans_a { (ca, ra) } else { (ra, ca) };
        let (k2, n) = if trans_b { (cb, rb) } else { (rb, cb) };
        if k != k2 || (ba != bb && self.rank() == 3 && rhs.rank() == 3) {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.shape().to_vec(),
                rhs: rhs.shape().to_vec(),
            });
        }
        let batch = ba.max(bb);
        if (ba != batch && ba != 1) || (bb != batch && bb != 1) {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.shape().to_vec(),
                rhs: rhs.shape().to_vec(),
            });
        }
        // element (i, j) of op(a) lives at i*sa.0 + j*sa.1
        let sa = if trans_a { (1, ca) } else { (ca, 1) };
        let sb = if trans_b { (1, cb) } else { (cb, 1) };
        let (a_step, b_step) = (if ba == 1 { 0 } else { ra * ca }, if bb == 1 { 0 } else { rb * cb });
        let mut out = vec![T::zero(); batch * m * n];
        for bi in 0..batch {
            gemm(
                m,
                k,
                n,
                &self.data()[bi * a_step..],
                sa,
                &rhs.data()[bi * b_step..],
                sb,
                &mut out[bi * m * n..(bi + 1) * m * n],
                (n, 1),
                T::zero(),
            );
        }
        let shape = if self.rank() == 3 || rhs.rank() == 3 {
            vec![batch, m, n]
        } else {
            vec![m, n]
        };
        Ok(Tensor::from_op(
            shape,
            out,
            vec![self.clone(), rhs.clone()],
            move |p: &[Tensor<T>], _o: &[T], g: &[T]| {
                let (a, b) = (p[0].data(), p[1].data());
                // d op(a) = g * op(b)^T, written straight into a's storage layout
                let ga = p[0].requires_grad().then(|| {
                    let mut ga = vec![T::zero(); a.len()];
                    let store = if trans_a { (1, ca) } else { (ca, 1) };
                    for bi in 0..batch {
                        let beta = if ba == 1 { T::one() } else { T::zero() };
                        gemm(
                            m,
                            n,
                            k,
                            &g[bi * m * n..],
                            (n, 1),
                            &b[bi * b_step..],
                            (sb.1, sb.0),
                            &mut ga[bi * a_step..],
                            store,
                            beta,
                        );
                    }
                    ga
                });
                // d op(b) = op(a)^T * g
                let gb = p[1].requires_grad().then(|| {
                    let mut gb = vec![T::zero(); b.len()];
                    let store = if trans_b { (1, cb) } else { (cb, 1) };
                    for bi in 0..batch {
                        let beta = if bb == 1 { T::one() } else { T::zero() };
                        gemm(
                            k,
                            m,
                            n,
                            &a[bi * a_step..],
                            (sa.1, sa.0),
                            &g[bi * m * n..],
                            (n, 1),
                            &mut gb[bi * b_step..],
                            store,
                            beta,
                        );
                    }
                    gb
                });
                vec![ga, gb]
            },
        ))
    }

    pub fn matmul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.matmul_t(rhs, false, false)
    }

    /// Numerically stable softmax over the last dimension.
    pub fn softmax_last(&self) -> Result<Tensor<T>> {
        let d = *self
            .shape()
            .last()
            .ok_or_else(|| Error::InvalidInput("softmax of rank-0 tensor".into()))?;
        let x = self.data();
        let mut out = vec![T::zero(); x.len()];
        for (row, orow) in x.chunks(d).zip(out.chunks_mut(d)) {
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for (o, &v) in orow.iter_mut().zip(row) {
                *o = (v - mx).exp();
                s += *o;
            }
            orow.iter_mut().for_each(|o| *o /= s);
        }
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            move |_p: &[Tensor<T>], y: &[T], g: &[T]| {
                let mut gx = vec![T::zero(); y.len()];
                for ((yr, gr), xr) in y.chunks(d).zip(g.chunks(d)).zip(gx.chunks_mut(d)) {
                    let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for ((x, &yv), &gv) in xr.iter_mut().zip(yr).zip(gr) {
                        *x = yv * (gv - dot);
                    }
                }
                vec![Some(gx)]
            },
        ))
    }
}
