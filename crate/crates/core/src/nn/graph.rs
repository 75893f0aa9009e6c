use std::collections::HashMap;
use std::hash::{DefaultHasher, Hash, Hasher};

use super::{ParamSet, Tensor};
use crate::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// A differentiable operation implemented outside the built-in set. The
/// forward value is computed by the caller; the op only maps an output
/// gradient to one gradient per input.
pub trait CustomOp {
    fn backward(&self, grad_out: &[f64]) -> Vec<Vec<f64>>;

    /// Hash of the discrete choices made in the forward pass.
    fn signature(&self) -> u64 {
        0
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Silu(Var),
    MaxRows(Var, Vec<usize>),
    Concat(Vec<Var>),
    Reshape(Var),
    Sum(Var),
    Square(Var),
    Abs(Var),
    CrossEntropy(Var, usize, Vec<f64>),
    Custom(Vec<Var>, Box<dyn CustomOp>),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Reverse-mode tape. Nodes are appended in evaluation order, so the node
/// index is a topological order.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<usize, Var>,
    signature: Vec<u64>,
}

/// Gradients of one scalar with respect to every node.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    /// Hashes of every discrete choice recorded so far (max-pool winners and
    /// custom-op signatures).
    pub fn signature(&self) -> &[u64] {
        &self.signature
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dims2()
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    /// A constant input.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Parameter `index` of `params`; repeated calls return the same node.
    pub fn param(&mut self, params: &ParamSet, index: usize) -> Var {
        if let Some(&v) = self.params.get(&index) {
            return v;
        }
        let mut t = params.tensor(index).clone();
        t.zero_grad();
        let v = self.push(t, Op::Leaf);
        self.params.insert(index, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(Error::ShapeMismatch(format!("matmul {m}x{k} by {k2}x{n}")));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.data(a), (k, 1), self.data(b), (n, 1), &mut out);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b)))
    }

    /// Adds the `1 × c` row `b` to every row of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (r, c) = self.dims(x);
        if self.dims(b) != (1, c) {
            return Err(Error::ShapeMismatch(format!("bias {:?} for {r}x{c}", self.dims(b))));
        }
        let bias = self.data(b);
        let out: Vec<f64> = self.data(x).iter().enumerate().map(|(i, v)| v + bias[i % c]).collect();
        Ok(self.push(Tensor::matrix(r, c, out)?, Op::AddRow(x, b)))
    }

    fn binary(&mut self, a: Var, b: Var, f: fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (da, db) = (self.data(a), self.data(b));
        if da.len() != db.len() {
            return Err(Error::ShapeMismatch(format!("elementwise {} vs {}", da.len(), db.len())));
        }
        let out = da.iter().zip(db).map(|(x, y)| f(*x, *y)).collect();
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(Tensor::new(shape, out)?, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = &self.nodes[a.0].value;
        let out = t.data().iter().map(|&x| f(x)).collect();
        let shape = t.shape().to_vec();
        self.push(Tensor::new(shape, out).expect("same shape"), op)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, |x| s * x, Op::Scale(a, s))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * sigmoid(x), Op::Silu(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, f64::abs, Op::Abs(a))
    }

    /// Column-wise maximum over rows; ties go to the lowest row.
    pub fn max_rows(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.dims(x);
        if r == 0 {
            return Err(Error::Empty("max over zero rows"));
        }
        let d = self.data(x);
        let mut arg = vec![0usize; c];
        let mut out = d[..c].to_vec();
        for i in 1..r {
            let row = &d[i * c..(i + 1) * c];
            for j in 0..c {
                if row[j] > out[j] {
                    out[j] = row[j];
                    arg[j] = i;
                }
            }
        }
        let mut h = DefaultHasher::new();
        arg.hash(&mut h);
        self.signature.push(h.finish());
        Ok(self.push(Tensor::row(out), Op::MaxRows(x, arg)))
    }

    /// Concatenates flattened inputs into one row.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let out: Vec<f64> = parts.iter().flat_map(|v| self.data(*v).iter().copied()).collect();
        self.push(Tensor::row(out), Op::Concat(parts.to_vec()))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(a).clone().reshaped(shape)?;
        Ok(self.push(t, Op::Reshape(a)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.data(a).iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.data(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Softmax cross-entropy of a logit row against a class index.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let z = self.data(logits);
        if label >= z.len() {
            return Err(Error::ShapeMismatch(format!("label {label} for {} classes", z.len())));
        }
        let p = softmax(z);
        let loss = log_sum_exp(z) - z[label];
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy(logits, label, p)))
    }

    /// Weighted sum `Σ wᵢ·vᵢ` of scalars.
    pub fn weighted_sum(&mut self, terms: &[(f64, Var)]) -> Result<Var> {
        let mut acc: Option<Var> = None;
        for &(w, v) in terms {
            let s = self.scale(v, w);
            acc = Some(match acc {
                None => s,
                Some(a) => self.add(a, s)?,
            });
        }
        acc.ok_or(Error::Empty("weighted sum"))
    }

    /// Records a custom op whose forward value was computed by the caller.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor, op: Box<dyn CustomOp>) -> Var {
        self.signature.push(op.signature());
        self.push(value, Op::Custom(inputs.to_vec(), op))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "backward needs a scalar, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Gradient of every parameter of `params`, zero where unused.
    pub fn param_grads(&self, grads: &Gradients, params: &ParamSet) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = (0..params.len()).map(|i| vec![0.0; params.tensor(i).len()]).collect();
        for (&idx, &v) in &self.params {
            if let Some(g) = grads.wrt(v) {
                out[idx].copy_from_slice(g);
            }
        }
        out
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let acc = |grads: &mut [Option<Vec<f64>>], v: Var, f: &dyn Fn(usize) -> f64| {
            let n = self.nodes[v.0].value.len();
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; n]);
            for (k, s) in slot.iter_mut().enumerate() {
                *s += f(k);
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let (_, n) = self.dims(*b);
                let ga = grads[a.0].get_or_insert_with(|| vec![0.0; m * k]);
                gemm(m, n, k, g, (n, 1), self.data(*b), (1, n), ga);
                let gb = grads[b.0].get_or_insert_with(|| vec![0.0; k * n]);
                gemm(k, m, n, self.data(*a), (1, k), g, (n, 1), gb);
            }
            Op::AddRow(x, b) => {
                acc(grads, *x, &|k| g[k]);
                let (r, c) = self.dims(*x);
                let mut gb = vec![0.0; c];
                for row in 0..r {
                    for j in 0..c {
                        gb[j] += g[row * c + j];
                    }
                }
                acc(grads, *b, &|k| gb[k]);
            }
            Op::Add(a, b) => {
                acc(grads, *a, &|k| g[k]);
                acc(grads, *b, &|k| g[k]);
            }
            Op::Sub(a, b) => {
                acc(grads, *a, &|k| g[k]);
                acc(grads, *b, &|k| -g[k]);
            }
            Op::Mul(a, b) => {
                let (da, db) = (self.data(*a), self.data(*b));
                acc(grads, *a, &|k| g[k] * db[k]);
                acc(grads, *b, &|k| g[k] * da[k]);
            }
            Op::Scale(a, s) => acc(grads, *a, &|k| s * g[k]),
            Op::Silu(a) => {
                let x = self.data(*a);
                acc(grads, *a, &|k| {
                    let s = sigmoid(x[k]);
                    g[k] * s * (1.0 + x[k] * (1.0 - s))
                });
            }
            Op::MaxRows(x, arg) => {
                let (_, c) = self.dims(*x);
                let n = self.nodes[x.0].value.len();
                let slot = grads[x.0].get_or_insert_with(|| vec![0.0; n]);
                for (j, &r) in arg.iter().enumerate() {
                    slot[r * c + j] += g[j];
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = self.nodes[p.0].value.len();
                    acc(grads, *p, &|k| g[off + k]);
                    off += n;
                }
            }
            Op::Reshape(a) => acc(grads, *a, &|k| g[k]),
            Op::Sum(a) => acc(grads, *a, &|_| g[0]),
            Op::Square(a) => {
                let x = self.data(*a);
                acc(grads, *a, &|k| 2.0 * x[k] * g[k]);
            }
            Op::Abs(a) => {
                let x = self.data(*a);
                acc(grads, *a, &|k| sign(x[k]) * g[k]);
            }
            Op::CrossEntropy(z, label, p) => {
                acc(grads, *z, &|k| g[0] * (p[k] - if k == *label { 1.0 } else { 0.0 }));
            }
            Op::Custom(inputs, op) => {
                let local = op.backward(g);
                for (v, lg) in inputs.iter().zip(&local) {
                    acc(grads, *v, &|k| lg[k]);
                }
            }
        }
    }
}

/// `c += a · b` for row-major `a: m×k`, `b: k×n`; strides are (row, col).
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], sa: (usize, usize), b: &[f64], sb: (usize, usize), c: &mut [f64]) {
    debug_assert!(c.len() >= m * n);
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    // SAFETY: the strides address exactly the m×k, k×n and m×n blocks held
    // by `a`, `b` and `c`, whose lengths the callers derive from the same
    // dimensions.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            sa.0 as isize,
            sa.1 as isize,
            b.as_ptr(),
            sb.0 as isize,
            sb.1 as isize,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(z);
    z.iter().map(|v| (v - lse).exp()).collect()
}
