use super::{numel, strides, Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub(crate) enum Unary {
    Neg,
    Exp,
    Ln,
    Sqrt,
    Abs,
    Sqr,
    Tanh,
    Sigmoid,
    Mish,
    Relu,
    LeakyRelu(f64),
    Acos,
    Sin,
    Asin,
    Asinh,
    Expm1,
    Powf(f64),
    Clamp(f64, f64),
    Affine(f64, f64),
    Recip,
}

/// `tanh(softplus(x)) = w / (w + 2)` with `w = e^x (e^x + 2)`, so Mish
/// needs a single exponential.
fn mish<T: Real>(x: T) -> T {
    if x > T::lit(20.0) {
        return x;
    }
    let n = x.exp();
    let w = n * (n + T::lit(2.0));
    x * w / (w + T::lit(2.0))
}

fn mish_derivative<T: Real>(x: T) -> T {
    if x > T::lit(20.0) {
        return T::one();
    }
    let n = x.exp();
    let w = n * (n + T::lit(2.0));
    let d = w + T::lit(2.0);
    w / d + x * T::lit(4.0) * n * (n + T::one()) / (d * d)
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl Unary {
    fn apply<T: Real>(self, x: T) -> T {
        match self {
            Unary::Neg => -x,
            Unary::Exp => x.exp(),
            Unary::Ln => x.ln(),
            Unary::Sqrt => x.sqrt(),
            Unary::Abs => x.abs(),
            Unary::Sqr => x * x,
            Unary::Tanh => x.tanh(),
            Unary::Sigmoid => sigmoid(x),
            Unary::Mish => mish(x),
            Unary::Relu => x.max(T::zero()),
            Unary::LeakyRelu(a) => {
                if x > T::zero() {
                    x
                } else {
                    x * T::lit(a)
                }
            }
            Unary::Acos => x.max(-T::one()).min(T::one()).acos(),
            Unary::Sin => x.sin(),
            Unary::Asin => x.max(-T::one()).min(T::one()).asin(),
            Unary::Asinh => x.asinh(),
            Unary::Expm1 => x.exp_m1(),
            Unary::Powf(p) => x.powf(T::lit(p)),
            Unary::Clamp(lo, hi) => x.max(T::lit(lo)).min(T::lit(hi)),
            Unary::Affine(m, a) => x * T::lit(m) + T::lit(a),
            Unary::Recip => x.recip(),
        }
    }

    fn derivative<T: Real>(self, x: T, y: T) -> T {
        let one = T::one();
        match self {
            Unary::Neg => -one,
            Unary::Exp => y,
            Unary::Ln => x.recip(),
            Unary::Sqrt => T::lit(0.5) / y,
            Unary::Abs => {
                if x > T::zero() {
                    one
                } else if x < T::zero() {
                    -one
                } else {
                    T::zero()
                }
            }
            Unary::Sqr => T::lit(2.0) * x,
            Unary::Tanh => one - y * y,
            Unary::Sigmoid => y * (one - y),
            Unary::Mish => mish_derivative(x),
            Unary::Relu => {
                if x > T::zero() {
                    one
                } else {
                    T::zero()
                }
            }
            Unary::LeakyRelu(a) => {
                if x > T::zero() {
                    one
                } else {
                    T::lit(a)
                }
            }
            // Finite at the domain boundary so a saturated argument cannot
            // inject an infinite gradient.
            Unary::Acos => -(one - x * x).max(T::epsilon()).sqrt().recip(),
            Unary::Sin => x.cos(),
            Unary::Asin => (one - x * x).max(T::epsilon()).sqrt().recip(),
            Unary::Asinh => (x * x + one).sqrt().recip(),
            Unary::Expm1 => y + one,
            Unary::Powf(p) => T::lit(p) * x.powf(T::lit(p - 1.0)),
            Unary::Clamp(lo, hi) => {
                if x >= T::lit(lo) && x <= T::lit(hi) {
                    one
                } else {
                    T::zero()
                }
            }
            Unary::Affine(m, _) => T::lit(m),
            Unary::Recip => -y * y,
        }
    }
}

/// Odometer over a multi-index, yielding the flat offsets into two
/// (possibly broadcast) operands.
fn for_each_pair(shape: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let n = numel(shape);
    if n == 0 {
        return;
    }
    let rank = shape.len();
    if rank == 0 {
        f(0, 0, 0);
        return;
    }
    let last = rank - 1;
    let inner = shape[last];
    let mut idx = vec![0usize; rank];
    let (mut oa, mut ob) = (0usize, 0usize);
    let mut o = 0;
    loop {
        for i in 0..inner {
            f(o + i, oa + i * sa[last], ob + i * sb[last]);
        }
        o += inner;
        if o >= n {
            break;
        }
        // carry into the outer dimensions
        let mut d = last;
        loop {
            if d == 0 {
                return;
            }
            d -= 1;
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < shape[d] {
                break;
            }
            oa -= sa[d] * shape[d];
            ob -= sb[d] * shape[d];
            idx[d] = 0;
        }
    }
}

fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let s = strides(shape);
    shape
        .iter()
        .zip(out)
        .zip(s)
        .map(|((&d, &o), st)| if d == 1 && o != 1 { 0 } else { st })
        .collect()
}

fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let mismatch = || Error::ShapeMismatch {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    };
    if a.len() != b.len() {
        return Err(mismatch());
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Ok(x),
            (1, _) => Ok(y),
            (_, 1) => Ok(x),
            _ => Err(mismatch()),
        })
        .collect()
}

#[derive(Clone, Copy, Debug)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

impl<T: Real> Tensor<T> {
    fn unary(&self, op: Unary) -> Tensor<T> {
        let data: Vec<T> = self.data().iter().map(|&x| op.apply(x)).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            move |p: &[Tensor<T>], out: &[T], g: &[T]| {
                let x = p[0].data();
                vec![Some(
                    x.iter()
                        .zip(out)
                        .zip(g)
                        .map(|((&x, &y), &g)| g * op.derivative(x, y))
                        .collect(),
                )]
            },
        )
    }

    pub fn neg(&self) -> Tensor<T> {
        self.unary(Unary::Neg)
    }
    pub fn exp(&self) -> Tensor<T> {
        self.unary(Unary::Exp)
    }
    pub fn ln(&self) -> Tensor<T> {
        self.unary(Unary::Ln)
    }
    pub fn sqrt(&self) -> Tensor<T> {
        self.unary(Unary::Sqrt)
    }
    pub fn abs(&self) -> Tensor<T> {
        self.unary(Unary::Abs)
    }
    pub fn sqr(&self) -> Tensor<T> {
        self.unary(Unary::Sqr)
    }
    pub fn tanh(&self) -> Tensor<T> {
        self.unary(Unary::Tanh)
    }
    pub fn sigmoid(&self) -> Tensor<T> {
        self.unary(Unary::Sigmoid)
    }
    /// `x * tanh(softplus(x))`
    pub fn mish(&self) -> Tensor<T> {
        self.unary(Unary::Mish)
    }
    pub fn relu(&self) -> Tensor<T> {
        self.unary(Unary::Relu)
    }
    pub fn leaky_relu(&self, slope: f64) -> Tensor<T> {
        self.unary(Unary::LeakyRelu(slope))
    }
    /// Arc-cosine of the argument clamped to `[-1, 1]`; the derivative is
    /// kept finite at the boundary.
    pub fn acos(&self) -> Tensor<T> {
        self.unary(Unary::Acos)
    }
    pub fn sin(&self) -> Tensor<T> {
        self.unary(Unary::Sin)
    }
    pub fn asin(&self) -> Tensor<T> {
        self.unary(Unary::Asin)
    }
    pub fn asinh(&self) -> Tensor<T> {
        self.unary(Unary::Asinh)
    }
    pub fn expm1(&self) -> Tensor<T> {
        self.unary(Unary::Expm1)
    }
    pub fn powf(&self, p: f64) -> Tensor<T> {
        self.unary(Unary::Powf(p))
    }
    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor<T> {
        self.unary(Unary::Clamp(lo, hi))
    }
    /// `x * mul + add`
    pub fn affine(&self, mul: f64, add: f64) -> Tensor<T> {
        self.unary(Unary::Affine(mul, add))
    }
    pub fn recip(&self) -> Tensor<T> {
        self.unary(Unary::Recip)
    }
    pub fn scale(&self, s: f64) -> Tensor<T> {
        self.affine(s, 0.0)
    }

    fn binary(&self, rhs: &Tensor<T>, op: Binary) -> Result<Tensor<T>> {
        let name = match op {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
            Binary::Div => "div",
        };
        let f = move |a: T, b: T| match op {
            Binary::Add => a + b,
            Binary::Sub => a - b,
            Binary::Mul => a * b,
            Binary::Div => a / b,
        };
        let a_shape = self.shape().to_vec();
        let b_shape = rhs.shape().to_vec();
        if a_shape == b_shape {
            let data = self.data().iter().zip(rhs.data()).map(|(&a, &b)| f(a, b)).collect();
            return Ok(Tensor::from_op(
                a_shape,
                data,
                vec![self.clone(), rhs.clone()],
                move |p: &[Tensor<T>], _out: &[T], g: &[T]| {
                    let (a, b) = (p[0].data(), p[1].data());
                    let (ga, gb) = match op {
                        Binary::Add => (
                            p[0].requires_grad().then(|| g.to_vec()),
                            p[1].requires_grad().then(|| g.to_vec()),
                        ),
                        Binary::Sub => (
                            p[0].requires_grad().then(|| g.to_vec()),
                            p[1].requires_grad().then(|| g.iter().map(|&v| -v).collect()),
                        ),
                        Binary::Mul => (
                            p[0].requires_grad()
                                .then(|| g.iter().zip(b).map(|(&g, &b)| g * b).collect()),
                            p[1].requires_grad()
                                .then(|| g.iter().zip(a).map(|(&g, &a)| g * a).collect()),
                        ),
                        Binary::Div => (
                            p[0].requires_grad()
                                .then(|| g.iter().zip(b).map(|(&g, &b)| g / b).collect()),
                            p[1].requires_grad().then(|| {
                                g.iter()
                                    .zip(a)
                                    .zip(b)
                                    .map(|((&g, &a), &b)| -g * a / (b * b))
                                    .collect()
                            }),
                        ),
                    };
                    vec![ga, gb]
                },
            ));
        }

        let out_shape = broadcast_shape(name, &a_shape, &b_shape)?;
        let sa = broadcast_strides(&a_shape, &out_shape);
        let sb = broadcast_strides(&b_shape, &out_shape);
        let mut data = vec![T::zero(); numel(&out_shape)];
        {
            let (a, b) = (self.data(), rhs.data());
            for_each_pair(&out_shape, &sa, &sb, |o, ia, ib| data[o] = f(a[ia], b[ib]));
        }
        let shape_c = out_shape.clone();
        Ok(Tensor::from_op(
            out_shape,
            data,
            vec![self.clone(), rhs.clone()],
            move |p: &[Tensor<T>], _out: &[T], g: &[T]| {
                let (a, b) = (p[0].data(), p[1].data());
                let mut ga = p[0].requires_grad().then(|| vec![T::zero(); a.len()]);
                let mut gb = p[1].requires_grad().then(|| vec![T::zero(); b.len()]);
                for_each_pair(&shape_c, &sa, &sb, |o, ia, ib| {
                    let (da, db) = match op {
                        Binary::Add => (T::one(), T::one()),
                        Binary::Sub => (T::one(), -T::one()),
                        Binary::Mul => (b[ib], a[ia]),
                        Binary::Div => (T::one() / b[ib], -a[ia] / (b[ib] * b[ib])),
                    };
                    if let Some(ga) = ga.as_mut() {
                        ga[ia] += g[o] * da;
                    }
                    if let Some(gb) = gb.as_mut() {
                        gb[ib] += g[o] * db;
                    }
                });
                vec![ga, gb]
            },
        ))
    }

    /// Elementwise sum with size-1 broadcasting between equal-rank operands.
    pub fn add(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(rhs, Binary::Add)
    }
    pub fn sub(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(rhs, Binary::Sub)
    }
    pub fn mul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(rhs, Binary::Mul)
    }
    pub fn div(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(rhs, Binary::Div)
    }

    pub fn sum_all(&self) -> Tensor<T> {
        let s: T = self.data().iter().copied().sum();
        let n = self.numel();
        Tensor::from_op(
            vec![1],
            vec![s],
            vec![self.clone()],
            move |_p: &[Tensor<T>], _o: &[T], g: &[T]| vec![Some(vec![g[0]; n])],
        )
    }

    pub fn mean_all(&self) -> Tensor<T> {
        let n = self.numel().max(1);
        self.sum_all().scale(1.0 / n as f64)
    }

    fn reduce_layout(&self, axes: &[usize]) -> Result<(Vec<usize>, Vec<usize>)> {
        let shape = self.shape();
        let mut out = shape.to_vec();
        for &a in axes {
            if a >= shape.len() {
                return Err(Error::InvalidInput(format!(
                    "reduction axis {a} out of range for {shape:?}"
                )));
            }
            out[a] = 1;
        }
        // strides into the output for each input dimension (0 on reduced axes)
        let os = strides(&out);
        let map: Vec<usize> = (0..shape.len())
            .map(|d| if out[d] == 1 && shape[d] != 1 { 0 } else { os[d] })
            .collect();
        Ok((out, map))
    }

    /// Sum over `axes`, keeping them as size-1 dimensions.
    pub fn sum_axes(&self, axes: &[usize]) -> Result<Tensor<T>> {
        let (out_shape, map) = self.reduce_layout(axes)?;
        let in_shape = self.shape().to_vec();
        let ident = strides(&in_shape);
        let mut data = vec![T::zero(); numel(&out_shape)];
        let x = self.data();
        for_each_pair(&in_shape, &ident, &map, |_, i, o| data[o] += x[i]);
        Ok(Tensor::from_op(
            out_shape,
            data,
            vec![self.clone()],
            move |p: &[Tensor<T>], _out: &[T], g: &[T]| {
                let mut gx = vec![T::zero(); p[0].numel()];
                for_each_pair(&in_shape, &ident, &map, |_, i, o| gx[i] = g[o]);
                vec![Some(gx)]
            },
        ))
    }

    pub fn mean_axes(&self, axes: &[usize]) -> Result<Tensor<T>> {
        let count: usize = axes.iter().map(|&a| self.shape().get(a).copied().unwrap_or(1)).product();
        Ok(self.sum_axes(axes)?.scale(1.0 / count.max(1) as f64))
    }

    /// Maximum over `axes` (keepdim); the gradient goes to the first maximiser.
    pub fn max_axes(&self, axes: &[usize]) -> Result<Tensor<T>> {
        let (out_shape, map) = self.reduce_layout(axes)?;
        let in_shape = self.shape().to_vec();
        let ident = strides(&in_shape);
        let n_out = numel(&out_shape);
        let mut data = vec![T::neg_infinity(); n_out];
        let mut arg = vec![usize::MAX; n_out];
        let x = self.data();
        for_each_pair(&in_shape, &ident, &map, |_, i, o| {
            if arg[o] == usize::MAX || x[i] > data[o] {
                data[o] = x[i];
                arg[o] = i;
            }
        });
        Ok(Tensor::from_op(
            out_shape,
            data,
            vec![self.clone()],
            move |p: &[Tensor<T>], _out: &[T], g: &[T]| {
                let mut gx = vec![T::zero(); p[0].numel()];
                for (o, &i) in arg.iter().enumerate() {
                    gx[i] += g[o];
                }
                vec![Some(gx)]
            },
        ))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if numel(shape) != self.numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        Ok(Tensor::from_op(
            shape.to_vec(),
            self.to_vec(),
            vec![self.clone()],
            |_p: &[Tensor<T>], _o: &[T], g: &[T]| vec![Some(g.to_vec())],
        ))
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
        let shape = self.shape().to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::InvalidInput(format!(
                "narrow({axis}, {start}, {len}) out of range for {shape:?}"
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let full = shape[axis];
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let x = self.data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            data.extend_from_slice(&x[base..base + len * inner]);
        }
        Ok(Tensor::from_op(
            out_shape,
            data,
            vec![self.clone()],
            move |_p: &[Tensor<T>], _out: &[T], g: &[T]| {
                let mut gx = vec![T::zero(); outer * full * inner];
                for o in 0..outer {
                    let base = (o * full + start) * inner;
                    gx[base..base + len * inner]
                        .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                vec![Some(gx)]
            },
        ))
    }

    /// Joins tensors along `axis`; all other dimensions must agree.
    pub fn concat(parts: &[Tensor<T>], axis: usize) -> Result<Tensor<T>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidInput("concat of zero tensors".into()))?;
        let base_shape = first.shape().to_vec();
        if axis >= base_shape.len() {
            return Err(Error::InvalidInput(format!("concat axis {axis} for {base_shape:?}")));
        }
        for p in parts {
            let s = p.shape();
            let ok = s.len() == base_shape.len()
                && s.iter()
                    .zip(&base_shape)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !ok {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: base_shape.clone(),
                    rhs: s.to_vec(),
                });
            }
        }
        let outer: usize = base_shape[..axis].iter().product();
        let inner: usize = base_shape[axis + 1..].iter().product();
        let sizes: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let total: usize = sizes.iter().sum();
        let mut out_shape = base_shape.clone();
        out_shape[axis] = total;
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (p, &sz) in parts.iter().zip(&sizes) {
                let chunk = sz * inner;
                data.extend_from_slice(&p.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        Ok(Tensor::from_op(
            out_shape,
            data,
            parts.to_vec(),
            move |p: &[Tensor<T>], _out: &[T], g: &[T]| {
                let mut offset = 0;
                let mut res = Vec::with_capacity(p.len());
                for (i, &sz) in sizes.iter().enumerate() {
                    if !p[i].requires_grad() {
                        res.push(None);
                        offset += sz;
                        continue;
                    }
                    let chunk = sz * inner;
                    let mut gp = Vec::with_capacity(outer * chunk);
                    for o in 0..outer {
                        let start = (o * total + offset) * inner;
                        gp.extend_from_slice(&g[start..start + chunk]);
                    }
                    res.push(Some(gp));
                    offset += sz;
                }
                res
            },
        ))
    }
}
