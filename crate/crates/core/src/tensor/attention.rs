//! Fused dot-product attention over channel-major embeddings.
//!
//! Rows of the score matrix are processed in chunks and the softmax is
//! recomputed in the backward pass, so the full `N x M` affinity is never
//! stored.

use super::{linalg::gemm, Real, Tensor};
use crate::error::{Error, Result};

const ROW_CHUNK: usize = 128;

fn softmax_rows<T: Real>(s: &mut [T], m: usize) {
    for row in s.chunks_mut(m) {
        let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - mx).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
}

/// `P = softmax(Q[:, r0..r0+r]^T K)` for one `(e, n)` query lane.
fn scores<T: Real>(q: &[T], k: &[T], e: usize, n: usize, m: usize, r0: usize, r: usize, p: &mut [T]) {
    gemm(r, e, m, &q[r0..], (1, n), k, (m, 1), p, (m, 1), T::zero());
    softmax_rows(&mut p[..r * m], m);
}

impl<T: Real> Tensor<T> {
    /// For queries `self` `(B, E, N)` and keys/values `(B, E, M)`, returns
    /// `(B, E, N)` with column `n` equal to `sum_m softmax_m(q_n . k_m) v_m`.
    pub fn attention(&self, keys: &Tensor<T>, values: &Tensor<T>) -> Result<Tensor<T>> {
        let (b, e, n) = match *self.shape() {
            [b, e, n] => (b, e, n),
            _ => return Err(Error::InvalidInput(format!("attention queries {:?}", self.shape()))),
        };
        let m = match (keys.shape(), values.shape()) {
            ([kb, ke, km], [vb, ve, vm]) if *kb == b && *vb == b && *ke == e && *ve == e && km == vm => *km,
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "attention",
                    lhs: keys.shape().to_vec(),
                    rhs: values.shape().to_vec(),
                })
            }
        };
        let (q, k, v) = (self.data(), keys.data(), values.data());
        let mut out = vec![T::zero(); b * e * n];
        let mut p = vec![T::zero(); ROW_CHUNK * m];
        for bi in 0..b {
            let (qb, kb, vb) = (&q[bi * e * n..], &k[bi * e * m..], &v[bi * e * m..]);
            let ob = &mut out[bi * e * n..(bi + 1) * e * n];
            for r0 in (0..n).step_by(ROW_CHUNK) {
                let r = ROW_CHUNK.min(n - r0);
                scores(qb, kb, e, n, m, r0, r, &mut p);
                // out[:, r0..r0+r] = V P^T
                gemm(e, m, r, vb, (m, 1), &p, (1, m), &mut ob[r0..], (n, 1), T::zero());
            }
        }
        Ok(Tensor::from_op(
            vec![b, e, n],
            out,
            vec![self.clone(), keys.clone(), values.clone()],
            move |parents: &[Tensor<T>], _out: &[T], g: &[T]| {
                let (q, k, v) = (parents[0].data(), parents[1].data(), parents[2].data());
                let mut gq = vec![T::zero(); b * e * n];
                let mut gk = vec![T::zero(); b * e * m];
                let mut gv = vec![T::zero(); b * e * m];
                let mut p = vec![T::zero(); ROW_CHUNK * m];
                let mut dp = vec![T::zero(); ROW_CHUNK * m];
                for bi in 0..b {
                    let (qb, kb, vb) = (&q[bi * e * n..], &k[bi * e * m..], &v[bi * e * m..]);
                    let gb = &g[bi * e * n..(bi + 1) * e * n];
                    let gqb = &mut gq[bi * e * n..(bi + 1) * e * n];
                    let gkb = &mut gk[bi * e * m..(bi + 1) * e * m];
                    let gvb = &mut gv[bi * e * m..(bi + 1) * e * m];
                    for r0 in (0..n).step_by(ROW_CHUNK) {
                        let r = ROW_CHUNK.min(n - r0);
                        scores(qb, kb, e, n, m, r0, r, &mut p);
                        // dV += G P
                        gemm(e, r, m, &gb[r0..], (n, 1), &p, (m, 1), gvb, (m, 1), T::one());
                        // dP = G^T V
                        gemm(r, e, m, &gb[r0..], (1, n), vb, (m, 1), &mut dp, (m, 1), T::zero());
                        for (pr, dr) in p.chunks(m).zip(dp.chunks_mut(m)).take(r) {
                            let dot: T = pr.iter().zip(dr.iter()).map(|(&a, &b)| a * b).sum();
                            for (d, &pv) in dr.iter_mut().zip(pr) {
                                *d = pv * (*d - dot);
                            }
                        }
                        // dQ[:, chunk] = K dS^T and dK += Q[:, chunk] dS
                        gemm(e, m, r, kb, (m, 1), &dp, (1, m), &mut gqb[r0..], (n, 1), T::zero());
                        gemm(e, r, m, &qb[r0..], (n, 1), &dp, (m, 1), gkb, (m, 1), T::one());
                    }
                }
                vec![Some(gq), Some(gk), Some(gv)]
            },
        ))
    }
}
