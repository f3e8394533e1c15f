//! Reverse-mode differentiation over dense row-major feature matrices.
//!
//! Values live on a [`Tape`]; every op records its inputs and a single
//! [`Tape::backward`] pass returns gradients for every recorded node. Node
//! features are stored one row per node, so linear layers are `X·W`.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub type Tensor = DMatrix<f64>;

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    /// The `i`-th node; on a tape from [`Tape::with_leaves`] this is leaf `i`.
    pub const fn new(i: usize) -> Self {
        Self(i)
    }

    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Min(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Affine(Var, f64),
    Clamp(Var, f64, f64),
    Sigmoid(Var),
    Softplus(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Normalize(Var, f64),
    Concat(Vec<Var>),
    Gather(Var, Arc<Vec<usize>>),
    ScatterAdd(Var, Arc<Vec<usize>>),
    SegmentSoftmax(Var, Arc<Vec<usize>>, usize),
    RowSum(Var),
    Sum(Var),
    Slice(Var, usize, usize),
}

/// Names accepted by [`Tape::apply`].
pub const REGISTERED_OPS: &[&str] = &[
    "matmul", "add", "sub", "mul", "min", "add_row", "mul_row", "mul_col", "sigmoid", "softplus", "relu", "exp", "log",
    "layer_norm", "row_sum", "sum",
];

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape(t: &Tensor) -> (usize, usize) {
    (t.nrows(), t.ncols())
}

fn build(msg: String) -> Error {
    Error::Build(msg)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + eˣ)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp()
    } else {
        x.exp().ln_1p()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Tape whose first `params.len()` leaves are the given tensors, so that
    /// `Var(i)` refers to parameter `i`.
    pub fn with_leaves<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let mut t = Self::new();
        for p in params {
            t.leaf(p.clone());
        }
        t
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Scalar value of a `1×1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[(0, 0)]
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn constant_scalar(&mut self, x: f64) -> Var {
        self.leaf(Tensor::from_element(1, 1, x))
    }

    /// Dispatches a registered op by name; unknown names are build errors.
    pub fn apply(&mut self, name: &str, args: &[Var]) -> Result<Var> {
        let arity = |n: usize| -> Result<()> {
            if args.len() == n {
                Ok(())
            } else {
                Err(build(format!("op {name} takes {n} arguments, got {}", args.len())))
            }
        };
        match name {
            "matmul" | "add" | "sub" | "mul" | "min" | "add_row" | "mul_row" | "mul_col" => arity(2)?,
            "sigmoid" | "softplus" | "relu" | "exp" | "log" | "layer_norm" | "row_sum" | "sum" => arity(1)?,
            _ => return Err(build(format!("unregistered op {name:?}"))),
        }
        match name {
            "matmul" => self.matmul(args[0], args[1]),
            "add" => self.add(args[0], args[1]),
            "sub" => self.sub(args[0], args[1]),
            "mul" => self.mul(args[0], args[1]),
            "min" => self.min(args[0], args[1]),
            "add_row" => self.add_row(args[0], args[1]),
            "mul_row" => self.mul_row(args[0], args[1]),
            "mul_col" => self.mul_col(args[0], args[1]),
            "sigmoid" => Ok(self.sigmoid(args[0])),
            "softplus" => Ok(self.softplus(args[0])),
            "relu" => Ok(self.relu(args[0])),
            "exp" => Ok(self.exp(args[0])),
            "log" => Ok(self.log(args[0])),
            "layer_norm" => Ok(self.normalize(args[0], 1e-5)),
            "row_sum" => Ok(self.row_sum(args[0])),
            _ => Ok(self.sum(args[0])),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ncols() != vb.nrows() {
            return Err(build(format!("matmul {:?} x {:?}", shape(va), shape(vb))));
        }
        let v = va * vb;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    fn same(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (shape(self.value(a)), shape(self.value(b)));
        if sa != sb {
            return Err(build(format!("{what} {sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same(a, b, "add")?;
        let v = self.value(a) + self.value(b);
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same(a, b, "sub")?;
        let v = self.value(a) - self.value(b);
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same(a, b, "mul")?;
        let v = self.value(a).component_mul(self.value(b));
        Ok(self.push(v, Op::Mul(a, b)))
    }

    /// Elementwise minimum; ties send the gradient to `a`.
    pub fn min(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same(a, b, "min")?;
        let v = self.value(a).zip_map(self.value(b), f64::min);
        Ok(self.push(v, Op::Min(a, b)))
    }

    /// `a + 1·bᵀ` with `b` a `1×c` row.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if vb.nrows() != 1 || vb.ncols() != va.ncols() {
            return Err(build(format!("add_row {:?} + {:?}", shape(va), shape(vb))));
        }
        let mut v = va.clone();
        for mut r in v.row_iter_mut() {
            r += vb.row(0);
        }
        Ok(self.push(v, Op::AddRow(a, b)))
    }

    /// Scales every column `j` of `a` by `b[j]`.
    pub fn mul_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if vb.nrows() != 1 || vb.ncols() != va.ncols() {
            return Err(build(format!("mul_row {:?} * {:?}", shape(va), shape(vb))));
        }
        let mut v = va.clone();
        for mut r in v.row_iter_mut() {
            r.component_mul_assign(&vb.row(0));
        }
        Ok(self.push(v, Op::MulRow(a, b)))
    }

    /// Scales every row `i` of `a` by `c[i]` (`c` is `n×1`).
    pub fn mul_col(&mut self, a: Var, c: Var) -> Result<Var> {
        let (va, vc) = (self.value(a), self.value(c));
        if vc.ncols() != 1 || vc.nrows() != va.nrows() {
            return Err(build(format!("mul_col {:?} * {:?}", shape(va), shape(vc))));
        }
        let mut v = va.clone();
        for (i, mut r) in v.row_iter_mut().enumerate() {
            r *= vc[(i, 0)];
        }
        Ok(self.push(v, Op::MulCol(a, c)))
    }

    /// `scale·a + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let v = self.value(a).map(|x| scale * x + shift);
        self.push(v, Op::Affine(a, scale))
    }

    /// Clamp to `[lo, hi]`; the gradient is zero unless `lo < x < hi`.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let v = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(v, Op::Clamp(a, lo, hi))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.value(a).map(softplus);
        self.push(v, Op::Softplus(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::ln);
        self.push(v, Op::Log(a))
    }

    /// Row-wise `(x − mean)/sqrt(var + ε)` without affine parameters.
    pub fn normalize(&mut self, a: Var, eps: f64) -> Var {
        let mut v = self.value(a).clone();
        let c = v.ncols() as f64;
        for mut r in v.row_iter_mut() {
            let mean = r.sum() / c;
            let var = r.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / c;
            let inv = 1.0 / (var + eps).sqrt();
            r.apply(|x| *x = (*x - mean) * inv);
        }
        self.push(v, Op::Normalize(a, eps))
    }

    /// LayerNorm with per-feature gain and bias rows.
    pub fn layer_norm(&mut self, a: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let n = self.normalize(a, eps);
        let g = self.mul_row(n, gain)?;
        self.add_row(g, bias)
    }

    /// Horizontal concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map(|&p| self.value(p).nrows()).ok_or_else(|| build("empty concat".into()))?;
        if parts.iter().any(|&p| self.value(p).nrows() != rows) {
            return Err(build("concat row mismatch".into()));
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).ncols()).sum();
        let mut v = Tensor::zeros(rows, cols);
        let mut c0 = 0;
        for &p in parts {
            let x = self.value(p);
            v.columns_mut(c0, x.ncols()).copy_from(x);
            c0 += x.ncols();
        }
        Ok(self.push(v, Op::Concat(parts.to_vec())))
    }

    /// Columns `[start, start + len)`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let x = self.value(a);
        if start + len > x.ncols() {
            return Err(build(format!("slice {start}+{len} of {} columns", x.ncols())));
        }
        let v = x.columns(start, len).into_owned();
        Ok(self.push(v, Op::Slice(a, start, len)))
    }

    /// Rows `idx[e]` of `a`, in order.
    pub fn gather(&mut self, a: Var, idx: Arc<Vec<usize>>) -> Result<Var> {
        let x = self.value(a);
        if idx.iter().any(|&i| i >= x.nrows()) {
            return Err(build("gather index out of range".into()));
        }
        let v = Tensor::from_fn(idx.len(), x.ncols(), |e, j| x[(idx[e], j)]);
        Ok(self.push(v, Op::Gather(a, idx)))
    }

    /// `out[idx[e]] += a[e]` into an `n`-row result.
    pub fn scatter_add(&mut self, a: Var, idx: Arc<Vec<usize>>, n: usize) -> Result<Var> {
        let x = self.value(a);
        if idx.len() != x.nrows() || idx.iter().any(|&i| i >= n) {
            return Err(build("scatter index mismatch".into()));
        }
        let mut v = Tensor::zeros(n, x.ncols());
        for (e, &i) in idx.iter().enumerate() {
            let r = x.row(e).into_owned();
            let mut o = v.row_mut(i);
            o += r;
        }
        Ok(self.push(v, Op::ScatterAdd(a, idx)))
    }

    /// Softmax of an `E×1` column within each segment `seg[e]`.
    pub fn segment_softmax(&mut self, a: Var, seg: Arc<Vec<usize>>, nseg: usize) -> Result<Var> {
        let x = self.value(a);
        if x.ncols() != 1 || seg.len() != x.nrows() || seg.iter().any(|&s| s >= nseg) {
            return Err(build("segment softmax needs a column and matching segments".into()));
        }
        let mut mx = vec![f64::NEG_INFINITY; nseg];
        for (e, &s) in seg.iter().enumerate() {
            mx[s] = mx[s].max(x[(e, 0)]);
        }
        let mut den = vec![0.0; nseg];
        let mut v = Tensor::zeros(x.nrows(), 1);
        for (e, &s) in seg.iter().enumerate() {
            v[(e, 0)] = (x[(e, 0)] - mx[s]).exp();
            den[s] += v[(e, 0)];
        }
        for (e, &s) in seg.iter().enumerate() {
            v[(e, 0)] /= den[s];
        }
        Ok(self.push(v, Op::SegmentSoftmax(a, seg, nseg)))
    }

    pub fn row_sum(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let v = Tensor::from_fn(x.nrows(), 1, |i, _| x.row(i).sum());
        self.push(v, Op::RowSum(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::from_element(1, 1, self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    /// Gradients of the `1×1` node `loss` with respect to every leaf.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if shape(self.value(loss)) != (1, 1) {
            return Err(build("backward needs a scalar loss".into()));
        }
        let mut g: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        g[loss.0] = Some(Tensor::from_element(1, 1, 1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(gi) = g[i].take() else { continue };
            let out = &node.value;
            let mut acc = |v: Var, d: Tensor| match &mut g[v.0] {
                Some(t) => *t += d,
                slot @ None => *slot = Some(d),
            };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    acc(*a, &gi * self.value(*b).transpose());
                    acc(*b, self.value(*a).transpose() * &gi);
                }
                Op::Add(a, b) => {
                    acc(*a, gi.clone());
                    acc(*b, gi);
                }
                Op::Sub(a, b) => {
                    acc(*b, -&gi);
                    acc(*a, gi);
                }
                Op::Mul(a, b) => {
                    acc(*a, gi.component_mul(self.value(*b)));
                    acc(*b, gi.component_mul(self.value(*a)));
                }
                Op::Min(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let ga = Tensor::from_fn(gi.nrows(), gi.ncols(), |r, c| if va[(r, c)] <= vb[(r, c)] { gi[(r, c)] } else { 0.0 });
                    acc(*b, &gi - &ga);
                    acc(*a, ga);
                }
                Op::AddRow(a, b) => {
                    acc(*b, Tensor::from_fn(1, gi.ncols(), |_, c| gi.column(c).sum()));
                    acc(*a, gi);
                }
                Op::MulRow(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    acc(*b, Tensor::from_fn(1, gi.ncols(), |_, c| gi.column(c).dot(&va.column(c))));
                    acc(*a, Tensor::from_fn(gi.nrows(), gi.ncols(), |r, c| gi[(r, c)] * vb[(0, c)]));
                }
                Op::MulCol(a, c) => {
                    let (va, vc) = (self.value(*a), self.value(*c));
                    acc(*c, Tensor::from_fn(gi.nrows(), 1, |r, _| gi.row(r).dot(&va.row(r))));
                    acc(*a, Tensor::from_fn(gi.nrows(), gi.ncols(), |r, col| gi[(r, col)] * vc[(r, 0)]));
                }
                Op::Affine(a, s) => acc(*a, gi * *s),
                Op::Clamp(a, lo, hi) => {
                    let x = self.value(*a);
                    acc(*a, gi.zip_map(x, |d, x| if x > *lo && x < *hi { d } else { 0.0 }));
                }
                Op::Sigmoid(a) => acc(*a, gi.zip_map(out, |d, s| d * s * (1.0 - s))),
                Op::Softplus(a) => acc(*a, gi.zip_map(self.value(*a), |d, x| d * sigmoid(x))),
                Op::Relu(a) => acc(*a, gi.zip_map(self.value(*a), |d, x| if x > 0.0 { d } else { 0.0 })),
                Op::Exp(a) => acc(*a, gi.component_mul(out)),
                Op::Log(a) => acc(*a, gi.zip_map(self.value(*a), |d, x| d / x)),
                Op::Normalize(a, eps) => {
                    let x = self.value(*a);
                    let c = x.ncols() as f64;
                    let mut d = Tensor::zeros(x.nrows(), x.ncols());
                    for r in 0..x.nrows() {
                        let mean = x.row(r).sum() / c;
                        let var = x.row(r).iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c;
                        let inv = 1.0 / (var + eps).sqrt();
                        let gm = gi.row(r).sum() / c;
                        let gy = gi.row(r).dot(&out.row(r)) / c;
                        for j in 0..x.ncols() {
                            d[(r, j)] = inv * (gi[(r, j)] - gm - out[(r, j)] * gy);
                        }
                    }
                    acc(*a, d);
                }
                Op::Concat(parts) => {
                    let mut c0 = 0;
                    for p in parts {
                        let w = self.value(*p).ncols();
                        acc(*p, gi.columns(c0, w).into_owned());
                        c0 += w;
                    }
                }
                Op::Slice(a, start, len) => {
                    let x = self.value(*a);
                    let mut d = Tensor::zeros(x.nrows(), x.ncols());
                    d.columns_mut(*start, *len).copy_from(&gi);
                    acc(*a, d);
                }
                Op::Gather(a, idx) => {
                    let x = self.value(*a);
                    let mut d = Tensor::zeros(x.nrows(), x.ncols());
                    for (e, &r) in idx.iter().enumerate() {
                        let src = gi.row(e).into_owned();
                        let mut o = d.row_mut(r);
                        o += src;
                    }
                    acc(*a, d);
                }
                Op::ScatterAdd(a, idx) => {
                    acc(*a, Tensor::from_fn(idx.len(), gi.ncols(), |e, c| gi[(idx[e], c)]));
                }
                Op::SegmentSoftmax(a, seg, nseg) => {
                    let mut dot = vec![0.0; *nseg];
                    for (e, &s) in seg.iter().enumerate() {
                        dot[s] += gi[(e, 0)] * out[(e, 0)];
                    }
                    acc(*a, Tensor::from_fn(seg.len(), 1, |e, _| out[(e, 0)] * (gi[(e, 0)] - dot[seg[e]])));
                }
                Op::RowSum(a) => {
                    let x = self.value(*a);
                    acc(*a, Tensor::from_fn(x.nrows(), x.ncols(), |r, _| gi[(r, 0)]));
                }
                Op::Sum(a) => {
                    let x = self.value(*a);
                    acc(*a, Tensor::from_element(x.nrows(), x.ncols(), gi[(0, 0)]));
                }
            }
        }
        Ok(Gradients { g })
    }
}

/// Leaf gradients from one backward pass; unreached leaves read as zero.
#[derive(Clone, Debug)]
pub struct Gradients {
    g: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.g.get(v.0).and_then(|x| x.as_ref())
    }

    /// Gradient of `v`, zero-filled to `like`'s shape when unreached.
    pub fn or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(like.nrows(), like.ncols()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(r: usize, c: usize, v: &[f64]) -> Tensor {
        Tensor::from_row_slice(r, c, v)
    }

    #[test]
    fn sum_of_squares_gradient() {
        let p = t(2, 2, &[1.0, -2.0, 0.5, 3.0]);
        let mut tape = Tape::with_leaves([&p]);
        let sq = tape.mul(Var(0), Var(0)).unwrap();
        let l = tape.sum(sq);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(Var(0)).unwrap(), &(p * 2.0));
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let p = t(1, 3, &[1.0, 2.0, 3.0]);
        let mut tape = Tape::with_leaves([&p]);
        let z = tape.affine(Var(0), 0.0, 4.0);
        let l = tape.sum(z);
        let g = tape.backward(l).unwrap();
        assert!(g.or_zeros(Var(0), &p).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn unknown_op_is_a_build_error() {
        let mut tape = Tape::new();
        let a = tape.constant_scalar(1.0);
        assert!(matches!(tape.apply("conv2d", &[a]), Err(Error::Build(_))));
        assert!(tape.apply("sigmoid", &[a]).is_ok());
        assert!(matches!(tape.apply("add", &[a]), Err(Error::Build(_))));
    }

    #[test]
    fn segment_softmax_sums_to_one() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(5, 1, &[0.3, -1.0, 2.0, 7.0, 0.0]));
        let s = tape.segment_softmax(x, Arc::new(vec![0, 0, 1, 1, 1]), 3).unwrap();
        let v = tape.value(s);
        assert!((v[(0, 0)] + v[(1, 0)] - 1.0).abs() < 1e-15);
        assert!((v[(2, 0)] + v[(3, 0)] + v[(4, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn softplus_limits() {
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((softplus(25.0) - 25.0).abs() < 1e-6);
        assert!(softplus(-50.0) > 0.0);
    }
}
