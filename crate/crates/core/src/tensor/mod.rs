//! Minimal reverse-mode automatic differentiation over dense row-major
//! tensors, sized for the desk-scale networks in this crate.
//!
//! A [`Tensor`] is an immutable value plus (optionally) the operation that
//! produced it. Calling [`Tensor::backward`] on a scalar walks the recorded
//! graph and returns the gradients of every leaf that requires them.
//! Image tensors use NCHW layout throughout.

mod attention;
mod conv;
mod linalg;
mod ops;
mod optim;
mod param;

pub use optim::{Adam, AdamConfig};
pub use param::{Params, Var};

use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};

/// Floating-point element type of a tensor.
pub trait Real:
    num_traits::Float
    + num_traits::FromPrimitive
    + Default
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + 'static
{
    fn lit(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `c = alpha * a * b + beta * c` over strided matrices.
    ///
    /// # Safety
    /// The pointers and strides must describe valid, non-overlapping
    /// allocations for `m x k`, `k x n` and `m x n` matrices.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Real for f32 {
    fn lit(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f64 {
    fn lit(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Disables graph recording on the current thread until dropped.
pub struct NoGradGuard {
    prev: bool,
}

impl Drop for NoGradGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|g| g.set(self.prev));
    }
}

pub fn no_grad() -> NoGradGuard {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    NoGradGuard { prev }
}

fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Backward rule of one recorded operation: given the parents, the output
/// values and the output gradient, return one optional gradient per parent.
pub(crate) trait Backward<T: Real>: Send + Sync {
    fn backward(&self, parents: &[Tensor<T>], out: &[T], grad: &[T]) -> Vec<Option<Vec<T>>>;
}

impl<T, F> Backward<T> for F
where
    T: Real,
    F: Fn(&[Tensor<T>], &[T], &[T]) -> Vec<Option<Vec<T>>> + Send + Sync,
{
    fn backward(&self, parents: &[Tensor<T>], out: &[T], grad: &[T]) -> Vec<Option<Vec<T>>> {
        self(parents, out, grad)
    }
}

struct GradFn<T: Real> {
    parents: Vec<Tensor<T>>,
    op: Box<dyn Backward<T>>,
}

struct Node<T: Real> {
    id: u64,
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    grad_fn: Option<GradFn<T>>,
}

impl<T: Real> Drop for Node<T> {
    // Unlinks long parent chains iteratively so dropping a deep graph
    // cannot overflow the stack.
    fn drop(&mut self) {
        let mut stack = match self.grad_fn.take() {
            Some(g) => g.parents,
            None => return,
        };
        while let Some(t) = stack.pop() {
            if let Ok(mut node) = Arc::try_unwrap(t.0) {
                if let Some(g) = node.grad_fn.take() {
                    stack.extend(g.parents);
                }
            }
        }
    }
}

#[derive(Clone)]
pub struct Tensor<T: Real = f32>(Arc<Node<T>>);

impl<T: Real> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        s[d] = s[d + 1] * shape[d + 1];
    }
    s
}

impl<T: Real> Tensor<T> {
    fn make(shape: Vec<usize>, data: Vec<T>, requires_grad: bool, grad_fn: Option<GradFn<T>>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor(Arc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            requires_grad,
            grad_fn,
        }))
    }

    /// Constant tensor (no gradient tracking).
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(Error::InvalidInput(format!(
                "shape {shape:?} needs {} elements, got {}",
                numel(shape),
                data.len()
            )));
        }
        Ok(Self::make(shape.to_vec(), data, false, None))
    }

    /// Leaf tensor whose gradient is collected by [`Tensor::backward`].
    pub fn leaf(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let t = Self::from_vec(shape, data)?;
        Ok(Self::make(t.0.shape.clone(), t.0.data.clone(), true, None))
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        Self::make(shape.to_vec(), vec![v; numel(shape)], false, None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn scalar(v: T) -> Self {
        Self::full(&[1], v)
    }

    pub(crate) fn from_op<B: Backward<T> + 'static>(
        shape: Vec<usize>,
        data: Vec<T>,
        parents: Vec<Tensor<T>>,
        op: B,
    ) -> Self {
        let rg = grad_enabled() && parents.iter().any(|p| p.requires_grad());
        let grad_fn = rg.then(|| GradFn {
            parents,
            op: Box::new(op),
        });
        Self::make(shape, data, rg, grad_fn)
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.0.data.clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.grad_fn.is_none()
    }

    /// Same values, cut from the graph.
    pub fn detach(&self) -> Self {
        Self::make(self.0.shape.clone(), self.0.data.clone(), false, None)
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.numel() != 1 {
            return Err(Error::InvalidInput(format!(
                "item() on tensor of shape {:?}",
                self.shape()
            )));
        }
        Ok(self.0.data[0])
    }

    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match *self.shape() {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::InvalidInput(format!(
                "expected a rank-4 tensor, got {:?}",
                self.shape()
            ))),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.0.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor::make(
            self.0.shape.clone(),
            self.0.data.iter().map(|&v| U::lit(v.as_f64())).collect(),
            false,
            None,
        )
    }

    /// Reverse-mode sweep from this single-element tensor.
    pub fn backward(&self) -> Result<Grads<T>> {
        if self.numel() != 1 {
            return Err(Error::InvalidInput(format!(
                "backward() needs a scalar, got shape {:?}",
                self.shape()
            )));
        }
        let mut grads = Grads {
            map: HashMap::new(),
        };
        if !self.requires_grad() {
            return Ok(grads);
        }

        // Post-order over nodes that require gradients.
        let mut order: Vec<&Tensor<T>> = Vec::new();
        let mut seen: HashSet<u64> = HashSet::new();
        let mut stack: Vec<(&Tensor<T>, bool)> = vec![(self, false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !seen.insert(t.id()) {
                continue;
            }
            stack.push((t, true));
            if let Some(gf) = &t.0.grad_fn {
                for p in &gf.parents {
                    if p.requires_grad() && !seen.contains(&p.id()) {
                        stack.push((p, false));
                    }
                }
            }
        }

        grads.map.insert(self.id(), vec![T::one()]);
        for t in order.into_iter().rev() {
            let Some(gf) = &t.0.grad_fn else { continue };
            let Some(g) = grads.map.remove(&t.id()) else {
                continue;
            };
            let contribs = gf.op.backward(&gf.parents, &t.0.data, &g);
            debug_assert_eq!(contribs.len(), gf.parents.len());
            for (p, c) in gf.parents.iter().zip(contribs) {
                let (true, Some(c)) = (p.requires_grad(), c) else {
                    continue;
                };
                debug_assert_eq!(c.len(), p.numel());
                match grads.map.get_mut(&p.id()) {
                    Some(acc) => acc.iter_mut().zip(&c).for_each(|(a, b)| *a += *b),
                    None => {
                        grads.map.insert(p.id(), c);
                    }
                }
            }
        }
        Ok(grads)
    }
}

/// Gradients of the leaves reached by a backward pass, keyed by tensor id.
pub struct Grads<T: Real> {
    map: HashMap<u64, Vec<T>>,
}

impl<T: Real> Grads<T> {
    pub fn get(&self, t: &Tensor<T>) -> Option<&[T]> {
        self.map.get(&t.id()).map(|v| v.as_slice())
    }

    pub fn get_var(&self, v: &Var<T>) -> Option<&[T]> {
        self.get(&v.tensor())
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Euclidean norm of the gradients of `params`.
    pub fn global_norm(&self, params: &Params<T>) -> f64 {
        params
            .iter()
            .filter_map(|(_, v)| self.get_var(v))
            .flat_map(|g| g.iter().map(|x| x.as_f64() * x.as_f64()))
            .sum::<f64>()
            .sqrt()
    }

    /// Scales every gradient of `params` so their joint norm is at most
    /// `max_norm`; returns the norm before clipping.
    pub fn clip_norm(&mut self, params: &Params<T>, max_norm: f64) -> f64 {
        let norm = self.global_norm(params);
        if norm > max_norm && norm.is_finite() {
            let f = T::lit(max_norm / norm);
            for (_, v) in params.iter() {
                if let Some(g) = self.map.get_mut(&v.tensor().id()) {
                    g.iter_mut().for_each(|x| *x *= f);
                }
            }
        }
        norm
    }
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub fn rand_leaf(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..numel(shape)).map(|_| rng.gen_range(lo..hi)).collect();
        Tensor::leaf(shape, data).unwrap()
    }

    /// Central-difference check of d f / d inputs for every coordinate.
    pub fn check_grad<F>(inputs: &[Tensor<f64>], f: F, tol: f64)
    where
        F: Fn(&[Tensor<f64>]) -> Tensor<f64>,
    {
        let out = f(inputs);
        let grads = out.backward().unwrap();
        let h = 1e-6;
        for (idx, x) in inputs.iter().enumerate() {
            let analytic = grads.get(x).map(|g| g.to_vec()).unwrap_or(vec![0.0; x.numel()]);
            let mut numeric = vec![0.0; x.numel()];
            for i in 0..x.numel() {
                let eval = |delta: f64| {
                    let mut d = x.to_vec();
                    d[i] += delta;
                    let mut perturbed = inputs.to_vec();
                    perturbed[idx] = Tensor::from_vec(x.shape(), d).unwrap();
                    f(&perturbed).item().unwrap()
                };
                numeric[i] = (eval(h) - eval(-h)) / (2.0 * h);
            }
            let diff: f64 = analytic
                .iter()
                .zip(&numeric)
                .map(|(a, n)| (a - n).powi(2))
                .sum::<f64>()
                .sqrt();
            let scale = analytic
                .iter()
                .map(|a| a * a)
                .sum::<f64>()
                .sqrt()
                .max(numeric.iter().map(|a| a * a).sum::<f64>().sqrt())
                .max(1e-12);
            assert!(
                diff / scale < tol,
                "input {idx}: rel err {} (analytic {:?}, numeric {:?})",
                diff / scale,
                &analytic[..analytic.len().min(6)],
                &numeric[..numeric.len().min(6)]
            );
        }
    }

    /// Directional central-difference check along `dirs` random
    /// directions spanning all inputs jointly; suited to large inputs.
    pub fn check_grad_dir<F>(inputs: &[Tensor<f64>], f: F, tol: f64, dirs: usize)
    where
        F: Fn(&[Tensor<f64>]) -> Tensor<f64>,
    {
        let grads = f(inputs).backward().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let h = 1e-6;
        for d in 0..dirs {
            let v: Vec<Vec<f64>> = inputs
                .iter()
                .map(|x| (0..x.numel()).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let analytic: f64 = inputs
                .iter()
                .zip(&v)
                .map(|(x, v)| {
                    grads
                        .get(x)
                        .map(|g| g.iter().zip(v).map(|(a, b)| a * b).sum::<f64>())
                        .unwrap_or(0.0)
                })
                .sum();
            let eval = |s: f64| {
                let moved: Vec<Tensor<f64>> = inputs
                    .iter()
                    .zip(&v)
                    .map(|(x, v)| {
                        let d = x.data().iter().zip(v).map(|(a, b)| a + s * b).collect();
                        Tensor::from_vec(x.shape(), d).unwrap()
                    })
                    .collect();
                f(&moved).item().unwrap()
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12);
            assert!(rel < tol, "direction {d}: analytic {analytic} numeric {numeric} rel {rel}");
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shared_parent_accumulates() {
        let x = Tensor::<f64>::leaf(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let y = x.mul(&x).unwrap().add(&x).unwrap().sum_all();
        let g = y.backward().unwrap();
        assert_eq!(g.get(&x).unwrap(), &[3.0, 5.0, 7.0]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let x = Tensor::<f64>::leaf(&[2], vec![1.0, 2.0]).unwrap();
        let c = Tensor::<f64>::from_vec(&[2], vec![5.0, 6.0]).unwrap();
        let g = x.mul(&c).unwrap().sum_all().backward().unwrap();
        assert!(g.get(&c).is_none());
        assert_eq!(g.get(&x).unwrap(), &[5.0, 6.0]);
    }

    #[test]
    fn no_grad_stops_recording() {
        let x = Tensor::<f32>::leaf(&[2], vec![1.0, 2.0]).unwrap();
        let y = {
            let _g = no_grad();
            x.exp()
        };
        assert!(!y.requires_grad());
        assert!(x.exp().requires_grad());
    }

    #[test]
    fn deep_chain_drops_without_overflow() {
        let x = Tensor::<f32>::leaf(&[1], vec![0.5]).unwrap();
        let mut y = x.clone();
        for _ in 0..200_000 {
            y = y.affine(1.0, 0.0);
        }
        let g = y.sum_all().backward().unwrap();
        assert_eq!(g.get(&x).unwrap(), &[1.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let x = Tensor::<f32>::leaf(&[2], vec![1.0, 2.0]).unwrap();
        assert!(x.exp().backward().is_err());
    }
}
