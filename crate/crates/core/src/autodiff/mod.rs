//! Reverse-mode differentiation over dense `f64` tensors.
//!
//! A [`Graph`] is a tape: every operation appends a node whose parents were
//! appended earlier, so the tape is topologically ordered by construction and
//! [`Graph::backward`] is a single reverse sweep. Shapes are checked when a
//! node is created. Complex quantities are carried as pairs of real tensors
//! (see [`complex`]), so every derivative is an ordinary real one.

mod adam;
pub mod complex;
mod conv;
mod gemm;

use std::rc::Rc;

use crate::error::{Error, Result};

pub use adam::{learning_rate, Adam};

/// Row-major dense tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Dimension(format!("shape {shape:?} holds {n} values, got {}", data.len())));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        Self { shape: shape.to_vec(), data: vec![v; shape.iter().product()] }
    }

    pub fn scalar(v: f64) -> Self {
        Self { shape: vec![1], data: vec![v] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div { num: Var, den: Var, eps: f64 },
    Affine(Var, f64),
    MatMul(Var, Var),
    Conv2d { x: Var, w: Var, b: Option<Var> },
    Relu(Var),
    Abs(Var),
    Hypot(Var, Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    SumAxis0(Var),
    Reshape(Var),
    Concat1(Vec<Var>),
    Slice1 { x: Var, start: usize },
    RepeatBatch(Var),
    LocalMean { x: Var, taps: Rc<Vec<f64>> },
}

#[derive(Debug, Clone)]
struct Node {
    value: Rc<Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Expression tape.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node of a graph.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `v`; zeros where `v` does not influence the
    /// output or was created as a constant.
    pub fn wrt(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => Tensor { shape: self.shapes[v.0].clone(), data: g.clone() },
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }
}

fn same_shape(what: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::Dimension(format!("{what}: shapes {:?} and {:?}", a.shape, b.shape)));
    }
    Ok(())
}

fn accumulate(slot: &mut Option<Vec<f64>>, len: usize, f: impl FnOnce(&mut [f64])) {
    let g = slot.get_or_insert_with(|| vec![0.0; len]);
    f(g);
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value: Rc::new(value), op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let needs = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.push(value, op, needs)
    }

    /// Differentiable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Shared constant, avoiding a copy of large operators.
    pub fn constant_rc(&mut self, t: Rc<Tensor>) -> Var {
        self.nodes.push(Node { value: t, op: Op::Leaf, needs_grad: false });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    /// The single value of a one-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data[0]
    }

    fn zip(&mut self, what: &str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(what, ta, tb)?;
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| f(*x, *y)).collect();
        let t = Tensor { shape: ta.shape.clone(), data };
        Ok(self.derived(t, op, &[a, b]))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let ta = self.value(a);
        let t = Tensor { shape: ta.shape.clone(), data: ta.data.iter().map(|x| f(*x)).collect() };
        self.derived(t, op, &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Elementwise `num / den`, defined as 0 (with zero gradient) wherever
    /// `|den| < eps`.
    pub fn safe_div(&mut self, num: Var, den: Var, eps: f64) -> Result<Var> {
        self.zip("div", num, den, move |n, d| if d.abs() < eps { 0.0 } else { n / d }, Op::Div { num, den, eps })
    }

    /// `scale · a + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        self.map(a, |x| scale * x + shift, Op::Affine(a, scale))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.affine(a, s, 0.0)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.map(a, f64::abs, Op::Abs(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.map(a, |x| x * x, Op::Square(a))
    }

    /// `sqrt(a² + b²)`, the magnitude of the complex pair `(a, b)`. The
    /// subgradient at the origin is taken as zero.
    pub fn hypot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("hypot", a, b, f64::hypot, Op::Hypot(a, b))
    }

    /// Sum of all entries, shape `[1]`.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        self.derived(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    /// Mean of all entries, shape `[1]`.
    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data.iter().sum::<f64>() / t.len() as f64;
        self.derived(Tensor::scalar(s), Op::Mean(a), &[a])
    }

    /// Sum over the leading axis: `[A, rest..] -> [rest..]`.
    pub fn sum_axis0(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.shape.len() < 2 {
            return Err(Error::Dimension(format!("sum_axis0 needs rank >= 2, got {:?}", t.shape)));
        }
        let inner: usize = t.shape[1..].iter().product();
        let mut data = vec![0.0; inner];
        for row in t.data.chunks(inner) {
            for (d, v) in data.iter_mut().zip(row) {
                *d += v;
            }
        }
        let out = Tensor { shape: t.shape[1..].to_vec(), data };
        Ok(self.derived(out, Op::SumAxis0(a), &[a]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if shape.iter().product::<usize>() != t.len() {
            return Err(Error::Dimension(format!("reshape {:?} -> {shape:?}", t.shape)));
        }
        let out = Tensor { shape: shape.to_vec(), data: t.data.clone() };
        Ok(self.derived(out, Op::Reshape(a), &[a]))
    }

    /// Concatenation along axis 1 (channels of `[N, C, ..]`).
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.value(*parts.first().ok_or_else(|| Error::Dimension("concat of nothing".into()))?);
        if first.shape.len() < 2 {
            return Err(Error::Dimension("concat_channels needs rank >= 2".into()));
        }
        let (n, rest) = (first.shape[0], first.shape[2..].to_vec());
        let inner: usize = rest.iter().product();
        let mut channels = 0;
        for p in parts {
            let s = self.shape(*p);
            if s.len() != first.shape.len() || s[0] != n || s[2..] != rest[..] {
                return Err(Error::Dimension(format!("concat_channels: {:?} vs {:?}", s, first.shape)));
            }
            channels += s[1];
        }
        let mut data = Vec::with_capacity(n * channels * inner);
        for b in 0..n {
            for p in parts {
                let t = self.value(*p);
                let block = t.shape[1] * inner;
                data.extend_from_slice(&t.data[b * block..(b + 1) * block]);
            }
        }
        let mut shape = vec![n, channels];
        shape.extend(rest);
        Ok(self.derived(Tensor { shape, data }, Op::Concat1(parts.to_vec()), parts))
    }

    /// Channels `start..start + len` of `[N, C, ..]`.
    pub fn slice_channels(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        if t.shape.len() < 2 || start + len > t.shape[1] {
            return Err(Error::Dimension(format!("slice_channels {start}..{} of {:?}", start + len, t.shape)));
        }
        let inner: usize = t.shape[2..].iter().product();
        let c = t.shape[1];
        let mut data = Vec::with_capacity(t.shape[0] * len * inner);
        for b in 0..t.shape[0] {
            data.extend_from_slice(&t.data[(b * c + start) * inner..(b * c + start + len) * inner]);
        }
        let mut shape = t.shape.clone();
        shape[1] = len;
        Ok(self.derived(Tensor { shape, data }, Op::Slice1 { x: a, start }, &[a]))
    }

    /// Tiles `[1, ..]` into `[n, ..]`.
    pub fn repeat_batch(&mut self, a: Var, n: usize) -> Result<Var> {
        let t = self.value(a);
        if t.shape.first() != Some(&1) {
            return Err(Error::Dimension(format!("repeat_batch needs a leading axis of 1, got {:?}", t.shape)));
        }
        let mut shape = t.shape.clone();
        shape[0] = n;
        let data = t.data.repeat(n);
        Ok(self.derived(Tensor { shape, data }, Op::RepeatBatch(a), &[a]))
    }

    /// `A B` for rank-2 tensors.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape.len() != 2 || tb.shape.len() != 2 || ta.shape[1] != tb.shape[0] {
            return Err(Error::Dimension(format!("matmul {:?} x {:?}", ta.shape, tb.shape)));
        }
        let (m, k, n) = (ta.shape[0], ta.shape[1], tb.shape[1]);
        let mut c = vec![0.0; m * n];
        gemm::gemm(m, k, n, &ta.data, false, &tb.data, false, &mut c, 0.0);
        Ok(self.derived(Tensor { shape: vec![m, n], data: c }, Op::MatMul(a, b), &[a, b]))
    }

    /// Same-padded, stride-1 convolution of `x: [N, C, H, W]` with odd
    /// kernels `w: [O, C, kh, kw]` and optional bias `b: [O]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let out = conv::forward(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        let mut parents = vec![x, w];
        parents.extend(b);
        Ok(self.derived(out, Op::Conv2d { x, w, b }, &parents))
    }

    /// Weighted local means over the last two axes with the separable window
    /// `taps ⊗ taps`, keeping only fully contained positions.
    pub fn local_mean(&mut self, x: Var, taps: Rc<Vec<f64>>) -> Result<Var> {
        let out = conv::local_mean(self.value(x), &taps)?;
        Ok(self.derived(out, Op::LocalMean { x, taps }, &[x]))
    }

    /// Gradients of the one-element node `loss`.
    ///
    /// Nodes only ever reference earlier nodes, so a reverse sweep over the
    /// tape visits every node after all of its consumers.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Dimension(format!("backward needs a scalar, got shape {:?}", self.shape(loss))));
        }
        let shapes: Vec<Vec<usize>> = self.nodes.iter().map(|n| n.value.shape.clone()).collect();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(&node.op, &node.value, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads, shapes })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(&self, op: &Op, out: &Tensor, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| &self.nodes[v.0].value.data;
        let mut acc = |v: Var, f: &dyn Fn(&mut [f64])| {
            if self.wants(v) {
                accumulate(&mut grads[v.0], self.nodes[v.0].value.len(), f);
            }
        };
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, &|ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                acc(*b, &|gb| gb.iter_mut().zip(g).for_each(|(x, y)| *x += y));
            }
            Op::Sub(a, b) => {
                acc(*a, &|ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                acc(*b, &|gb| gb.iter_mut().zip(g).for_each(|(x, y)| *x -= y));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                acc(*a, &|ga| (0..g.len()).for_each(|i| ga[i] += g[i] * vb[i]));
                acc(*b, &|gb| (0..g.len()).for_each(|i| gb[i] += g[i] * va[i]));
            }
            Op::Div { num, den, eps } => {
                let (vn, vd) = (val(*num), val(*den));
                let live = |i: usize| vd[i].abs() >= *eps;
                acc(*num, &|gn| (0..g.len()).filter(|&i| live(i)).for_each(|i| gn[i] += g[i] / vd[i]));
                acc(*den, &|gd| {
                    (0..g.len()).filter(|&i| live(i)).for_each(|i| gd[i] -= g[i] * vn[i] / (vd[i] * vd[i]))
                });
            }
            Op::Affine(a, s) => acc(*a, &|ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += s * y)),
            Op::Relu(a) => {
                let va = val(*a);
                acc(*a, &|ga| (0..g.len()).filter(|&i| va[i] > 0.0).for_each(|i| ga[i] += g[i]));
            }
            Op::Abs(a) => {
                let va = val(*a);
                acc(*a, &|ga| {
                    (0..g.len()).for_each(|i| {
                        if va[i] != 0.0 {
                            ga[i] += g[i] * va[i].signum()
                        }
                    })
                });
            }
            Op::Square(a) => {
                let va = val(*a);
                acc(*a, &|ga| (0..g.len()).for_each(|i| ga[i] += 2.0 * va[i] * g[i]));
            }
            Op::Hypot(a, b) => {
                let (va, vb, h) = (val(*a), val(*b), &out.data);
                acc(*a, &|ga| (0..g.len()).filter(|&i| h[i] > 0.0).for_each(|i| ga[i] += g[i] * va[i] / h[i]));
                acc(*b, &|gb| (0..g.len()).filter(|&i| h[i] > 0.0).for_each(|i| gb[i] += g[i] * vb[i] / h[i]));
            }
            Op::Sum(a) => acc(*a, &|ga| ga.iter_mut().for_each(|x| *x += g[0])),
            Op::Mean(a) => {
                let n = self.nodes[a.0].value.len() as f64;
                acc(*a, &|ga| ga.iter_mut().for_each(|x| *x += g[0] / n));
            }
            Op::SumAxis0(a) => acc(*a, &|ga| {
                for row in ga.chunks_mut(g.len()) {
                    row.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
            }),
            Op::Reshape(a) => acc(*a, &|ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y)),
            Op::Concat1(parts) => {
                let n = out.shape[0];
                let inner: usize = out.shape[2..].iter().product();
                let total = out.shape[1] * inner;
                let mut offset = 0;
                for p in parts {
                    let block = self.nodes[p.0].value.shape[1] * inner;
                    acc(*p, &|gp| {
                        for b in 0..n {
                            for j in 0..block {
                                gp[b * block + j] += g[b * total + offset + j];
                            }
                        }
                    });
                    offset += block;
                }
            }
            Op::Slice1 { x, start } => {
                let xs = &self.nodes[x.0].value.shape;
                let inner: usize = xs[2..].iter().product();
                let (c, len) = (xs[1], out.shape[1]);
                acc(*x, &|gx| {
                    for b in 0..xs[0] {
                        for j in 0..len * inner {
                            gx[(b * c + start) * inner + j] += g[b * len * inner + j];
                        }
                    }
                });
            }
            Op::RepeatBatch(a) => acc(*a, &|ga| {
                for chunk in g.chunks(ga.len()) {
                    ga.iter_mut().zip(chunk).for_each(|(x, y)| *x += y);
                }
            }),
            Op::MatMul(a, b) => {
                let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let (m, k, n) = (ta.shape[0], ta.shape[1], tb.shape[1]);
                // dA = G Bᵀ, dB = Aᵀ G
                acc(*a, &|ga| gemm::gemm(m, n, k, g, false, &tb.data, true, ga, 1.0));
                acc(*b, &|gb| gemm::gemm(k, m, n, &ta.data, true, g, false, gb, 1.0));
            }
            Op::Conv2d { x, w, b } => {
                let (tx, tw) = (&self.nodes[x.0].value, &self.nodes[w.0].value);
                let (gx, gw, gb) = conv::backward(tx, tw, g, self.wants(*x), self.wants(*w));
                if let Some(gx) = gx {
                    acc(*x, &|t| t.iter_mut().zip(&gx).for_each(|(p, q)| *p += q));
                }
                if let Some(gw) = gw {
                    acc(*w, &|t| t.iter_mut().zip(&gw).for_each(|(p, q)| *p += q));
                }
                if let Some(b) = b {
                    acc(*b, &|t| t.iter_mut().zip(&gb).for_each(|(p, q)| *p += q));
                }
            }
            Op::LocalMean { x, taps } => {
                let tx = &self.nodes[x.0].value;
                acc(*x, &|gx| conv::local_mean_backward(&tx.shape, taps, g, gx));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_derivative() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(3.0));
        let y = g.square(x);
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.wrt(x).data, vec![6.0]);
    }

    #[test]
    fn linear_composite_is_exact() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(0.7));
        let y = g.affine(x, -2.5, 4.0);
        assert_eq!(g.backward(y).unwrap().wrt(x).data, vec![-2.5]);
    }

    #[test]
    fn unused_and_constant_nodes_get_zero() {
        let mut g = Graph::new();
        let x = g.param(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        let unused = g.param(Tensor::new(vec![2], vec![5.0, 6.0]).unwrap());
        let c = g.constant(Tensor::new(vec![2], vec![3.0, 4.0]).unwrap());
        let p = g.mul(x, c).unwrap();
        let s = g.sum(p);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.wrt(x).data, vec![3.0, 4.0]);
        assert_eq!(grads.wrt(unused).data, vec![0.0, 0.0]);
        assert_eq!(grads.wrt(c).data, vec![0.0, 0.0]);
    }

    #[test]
    fn shape_errors_at_build_time() {
        let mut g = Graph::new();
        let a = g.param(Tensor::zeros(&[2, 3]));
        let b = g.param(Tensor::zeros(&[3, 2]));
        assert!(g.add(a, b).is_err());
        assert!(g.matmul(a, a).is_err());
        assert!(g.matmul(a, b).is_ok());
        assert!(g.reshape(a, &[5]).is_err());
        assert!(g.slice_channels(a, 2, 2).is_err());
        assert!(g.backward(a).is_err());
    }
}
