//! Dense f64 tensors and a reverse-mode autodiff tape.
//!
//! A `Tensor` is a plain row-major value. Differentiable computation happens
//! on a `Tape`: leaves are inserted with [`Tape::leaf`] or [`Tape::constant`],
//! every op pushes a new node, and [`Tape::backward`] consumes the tape and
//! returns the gradients of a scalar loss with respect to every
//! `requires_grad` leaf. One tape lives for exactly one loss evaluation.
//!
//! Every forward op validates shapes and rejects non-finite outputs, so a
//! NaN or Inf surfaces as an error at the op that produced it instead of
//! poisoning the training run silently.

use crate::error::{Error, Result};

/// Dense row-major f64 tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        // a zero leading dim is an empty batch; zero inner dims are bugs
        if shape.iter().skip(1).any(|&d| d == 0) {
            return Err(Error::Invalid(format!("zero dimension in shape {shape:?}")));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(
                "new",
                format!("shape {shape:?} implies {numel} elements, got {}", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor { shape, data: vec![0.0; numel] }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { shape: vec![1], data: vec![v] }
    }

    /// Build a (rows, cols) matrix from a flat row-major buffer.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Scalar value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(Error::shape("item", format!("expected scalar, got shape {:?}", self.shape)));
        }
        Ok(self.data[0])
    }

    pub fn rows(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[..self.shape.len() - 1].iter().product()
        } else {
            1
        }
    }

    /// Size of the last axis.
    pub fn last_dim(&self) -> usize {
        *self.shape.last().unwrap_or(&1)
    }

    /// Row `r` of a rank-2 view (leading dims flattened).
    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.last_dim();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Stack the given rows of `self` into a new matrix.
    pub fn gather_rows(&self, indices: &[usize]) -> Result<Tensor> {
        let c = self.last_dim();
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            if i >= self.rows() {
                return Err(Error::Invalid(format!("row index {i} out of range ({} rows)", self.rows())));
            }
            data.extend_from_slice(self.row(i));
        }
        Tensor::matrix(indices.len(), c, data)
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    /// `[m, n] + [n]`, bias broadcast over rows.
    AddBias(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Concat(Var, Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Softmax(Var),
    Log(Var),
    Mean(Var),
    Sum(Var),
    SquaredError(Var, Var),
    /// Per-row `-sum(t * ln p)`; inputs are probabilities and one-hot targets.
    CrossEntropy(Var, Var),
    /// `k * x + b` elementwise; only the slope `k` matters for gradients.
    Affine(Var, f64),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Reverse-mode autodiff tape. One tape per loss evaluation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by the original `Var`s.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `v`, zero tensor if the node never
    /// received a gradient contribution.
    pub fn get(&self, v: Var, shape: &[usize]) -> Tensor {
        match &self.grads[v.0] {
            Some(t) => t.clone(),
            None => Tensor::zeros(shape.to_vec()),
        }
    }

    pub fn take(&mut self, v: Var, shape: &[usize]) -> Tensor {
        self.grads[v.0].take().unwrap_or_else(|| Tensor::zeros(shape.to_vec()))
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Insert a leaf that participates in gradient computation.
    pub fn leaf(&mut self, value: &Tensor) -> Var {
        self.push_unchecked(value.clone(), Op::Leaf, true)
    }

    /// Insert a leaf treated as a constant.
    pub fn constant(&mut self, value: &Tensor) -> Var {
        self.push_unchecked(value.clone(), Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push_unchecked(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, needs_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        Ok(self.push_unchecked(value, op, needs_grad))
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    // ---- forward ops ----------------------------------------------------

    /// Matrix product `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape().len() != 2 || vb.shape().len() != 2 || va.shape()[1] != vb.shape()[0] {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?}", va.shape(), vb.shape()),
            ));
        }
        let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
        let out = matmul_raw(va.data(), vb.data(), m, k, n);
        self.push("matmul", Tensor::matrix(m, n, out)?, Op::MatMul(a, b), self.needs(a) || self.needs(b))
    }

    /// Elementwise add; also accepts a rank-1 `b` broadcast over the rows of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() == vb.shape() {
            let data: Vec<f64> = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
            let t = Tensor::new(va.shape().to_vec(), data)?;
            return self.push("add", t, Op::Add(a, b), self.needs(a) || self.needs(b));
        }
        if vb.shape().len() == 1 && vb.last_dim() == va.last_dim() {
            let c = va.last_dim();
            let mut data = va.data().to_vec();
            for (i, x) in data.iter_mut().enumerate() {
                *x += vb.data()[i % c];
            }
            let t = Tensor::new(va.shape().to_vec(), data)?;
            return self.push("add", t, Op::AddBias(a, b), self.needs(a) || self.needs(b));
        }
        Err(Error::shape("add", format!("{:?} + {:?}", va.shape(), vb.shape())))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::shape("sub", format!("{:?} - {:?}", va.shape(), vb.shape())));
        }
        let data: Vec<f64> = va.data().iter().zip(vb.data()).map(|(x, y)| x - y).collect();
        let t = Tensor::new(va.shape().to_vec(), data)?;
        self.push("sub", t, Op::Sub(a, b), self.needs(a) || self.needs(b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::shape("mul", format!("{:?} * {:?}", va.shape(), vb.shape())));
        }
        let data: Vec<f64> = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let t = Tensor::new(va.shape().to_vec(), data)?;
        self.push("mul", t, Op::Mul(a, b), self.needs(a) || self.needs(b))
    }

    /// Concatenate along the last axis; leading dims must match.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.rows() != vb.rows() || va.shape().len() != vb.shape().len() {
            return Err(Error::shape("concat", format!("{:?} ++ {:?}", va.shape(), vb.shape())));
        }
        let (ca, cb) = (va.last_dim(), vb.last_dim());
        let rows = va.rows();
        let mut data = Vec::with_capacity(rows * (ca + cb));
        for r in 0..rows {
            data.extend_from_slice(va.row(r));
            data.extend_from_slice(vb.row(r));
        }
        let mut shape = va.shape().to_vec();
        *shape.last_mut().unwrap() = ca + cb;
        self.push("concat", Tensor::new(shape, data)?, Op::Concat(a, b), self.needs(a) || self.needs(b))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        let data: Vec<f64> = va.data().iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
        let t = Tensor::new(va.shape().to_vec(), data)?;
        self.push("relu", t, Op::Relu(a), self.needs(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        let va = self.value(a);
        let data: Vec<f64> = va.data().iter().map(|&x| if x > 0.0 { x } else { slope * x }).collect();
        let t = Tensor::new(va.shape().to_vec(), data)?;
        self.push("leaky_relu", t, Op::LeakyRelu(a, slope), self.needs(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        let data: Vec<f64> = va.data().iter().map(|&x| sigmoid_scalar(x)).collect();
        let t = Tensor::new(va.shape().to_vec(), data)?;
        self.push("sigmoid", t, Op::Sigmoid(a), self.needs(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        let data: Vec<f64> = va.data().iter().map(|&x| x.tanh()).collect();
        let t = Tensor::new(va.shape().to_vec(), data)?;
        self.push("tanh", t, Op::Tanh(a), self.needs(a))
    }

    /// Row-wise softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        let c = va.last_dim();
        let mut data = Vec::with_capacity(va.numel());
        for r in 0..va.rows() {
            let row = va.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|&x| (x - max).exp()).collect();
            let denom: f64 = exps.iter().sum();
            data.extend(exps.iter().map(|e| e / denom));
        }
        debug_assert_eq!(data.len() % c, 0);
        let t = Tensor::new(va.shape().to_vec(), data)?;
        self.push("softmax", t, Op::Softmax(a), self.needs(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        let data: Vec<f64> = va.data().iter().map(|&x| x.ln()).collect();
        let t = Tensor::new(va.shape().to_vec(), data)?;
        self.push("log", t, Op::Log(a), self.needs(a))
    }

    /// Mean over all elements, scalar result.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        let n = va.numel() as f64;
        let s: f64 = va.data().iter().sum();
        self.push("mean", Tensor::scalar(s / n), Op::Mean(a), self.needs(a))
    }

    /// Sum over all elements, scalar result.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        let s: f64 = va.data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(a), self.needs(a))
    }

    /// Elementwise `(a - b)^2`.
    pub fn squared_error(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::shape("squared_error", format!("{:?} vs {:?}", va.shape(), vb.shape())));
        }
        let data: Vec<f64> = va.data().iter().zip(vb.data()).map(|(x, y)| (x - y) * (x - y)).collect();
        let t = Tensor::new(va.shape().to_vec(), data)?;
        self.push("squared_error", t, Op::SquaredError(a, b), self.needs(a) || self.needs(b))
    }

    /// Per-row categorical cross-entropy of probabilities against one-hot
    /// targets: `[b, c], [b, c] -> [b]`.
    pub fn cross_entropy(&mut self, probs: Var, onehot: Var) -> Result<Var> {
        let (vp, vt) = (self.value(probs), self.value(onehot));
        if vp.shape() != vt.shape() {
            return Err(Error::shape("cross_entropy", format!("{:?} vs {:?}", vp.shape(), vt.shape())));
        }
        let rows = vp.rows();
        let mut data = Vec::with_capacity(rows);
        for r in 0..rows {
            let ce: f64 = vp
                .row(r)
                .iter()
                .zip(vt.row(r))
                .map(|(&p, &t)| if t == 0.0 { 0.0 } else { -t * p.ln() })
                .sum();
            data.push(ce);
        }
        let t = Tensor::new(vec![rows], data)?;
        self.push("cross_entropy", t, Op::CrossEntropy(probs, onehot), self.needs(probs) || self.needs(onehot))
    }

    /// Elementwise `k * a + b` with constants `k`, `b`.
    pub fn affine(&mut self, a: Var, k: f64, b: f64) -> Result<Var> {
        let va = self.value(a);
        let data: Vec<f64> = va.data().iter().map(|&x| k * x + b).collect();
        let t = Tensor::new(va.shape().to_vec(), data)?;
        self.push("affine", t, Op::Affine(a, k), self.needs(a))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.affine(a, -1.0, 0.0)
    }

    /// `1 - a`, the usual critic complement.
    pub fn one_minus(&mut self, a: Var) -> Result<Var> {
        self.affine(a, -1.0, 1.0)
    }

    // ---- backward -------------------------------------------------------

    /// Reverse pass from a scalar loss. Consumes the tape (one tape per
    /// loss evaluation) and returns per-node gradients.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::Invalid("backward on empty tape".into()));
        }
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.nodes[loss.0].value.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::new(self.nodes[loss.0].value.shape().to_vec(), vec![1.0])?);

        for idx in (0..self.nodes.len()).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.accumulate_into_parents(idx, &g, &mut grads);
            // Leaves keep their gradient; interior nodes drop it.
            if matches!(self.nodes[idx].op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate_into_parents(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        match node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(a), self.value(b));
                let (m, k) = (va.shape()[0], va.shape()[1]);
                let n = vb.shape()[1];
                if self.needs(a) {
                    // dA = dC * B^T
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        for j in 0..n {
                            let gij = g.data()[i * n + j];
                            if gij != 0.0 {
                                for p in 0..k {
                                    da[i * k + p] += gij * vb.data()[p * n + j];
                                }
                            }
                        }
                    }
                    accumulate(grads, a, Tensor { shape: vec![m, k], data: da });
                }
                if self.needs(b) {
                    // dB = A^T * dC
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        for p in 0..k {
                            let aip = va.data()[i * k + p];
                            if aip != 0.0 {
                                for j in 0..n {
                                    db[p * n + j] += aip * g.data()[i * n + j];
                                }
                            }
                        }
                    }
                    accumulate(grads, b, Tensor { shape: vec![k, n], data: db });
                }
            }
            Op::Add(a, b) => {
                if self.needs(a) {
                    accumulate(grads, a, g.clone());
                }
                if self.needs(b) {
                    accumulate(grads, b, g.clone());
                }
            }
            Op::AddBias(a, b) => {
                if self.needs(a) {
                    accumulate(grads, a, g.clone());
                }
                if self.needs(b) {
                    let c = self.value(b).numel();
                    let mut db = vec![0.0; c];
                    for (i, &gv) in g.data().iter().enumerate() {
                        db[i % c] += gv;
                    }
                    accumulate(grads, b, Tensor { shape: vec![c], data: db });
                }
            }
            Op::Sub(a, b) => {
                if self.needs(a) {
                    accumulate(grads, a, g.clone());
                }
                if self.needs(b) {
                    let data = g.data().iter().map(|v| -v).collect();
                    accumulate(grads, b, Tensor { shape: g.shape().to_vec(), data });
                }
            }
            Op::Mul(a, b) => {
                if self.needs(a) {
                    let data = g.data().iter().zip(self.value(b).data()).map(|(gv, bv)| gv * bv).collect();
                    accumulate(grads, a, Tensor { shape: g.shape().to_vec(), data });
                }
                if self.needs(b) {
                    let data = g.data().iter().zip(self.value(a).data()).map(|(gv, av)| gv * av).collect();
                    accumulate(grads, b, Tensor { shape: g.shape().to_vec(), data });
                }
            }
            Op::Concat(a, b) => {
                let (va, vb) = (self.value(a), self.value(b));
                let (ca, cb) = (va.last_dim(), vb.last_dim());
                let rows = va.rows();
                if self.needs(a) {
                    let mut da = Vec::with_capacity(rows * ca);
                    for r in 0..rows {
                        da.extend_from_slice(&g.data()[r * (ca + cb)..r * (ca + cb) + ca]);
                    }
                    accumulate(grads, a, Tensor { shape: va.shape().to_vec(), data: da });
                }
                if self.needs(b) {
                    let mut db = Vec::with_capacity(rows * cb);
                    for r in 0..rows {
                        db.extend_from_slice(&g.data()[r * (ca + cb) + ca..(r + 1) * (ca + cb)]);
                    }
                    accumulate(grads, b, Tensor { shape: vb.shape().to_vec(), data: db });
                }
            }
            Op::Relu(a) => {
                if self.needs(a) {
                    let data = g
                        .data()
                        .iter()
                        .zip(self.value(a).data())
                        .map(|(gv, &x)| if x > 0.0 { *gv } else { 0.0 })
                        .collect();
                    accumulate(grads, a, Tensor { shape: g.shape().to_vec(), data });
                }
            }
            Op::LeakyRelu(a, slope) => {
                if self.needs(a) {
                    let data = g
                        .data()
                        .iter()
                        .zip(self.value(a).data())
                        .map(|(gv, &x)| if x > 0.0 { *gv } else { slope * gv })
                        .collect();
                    accumulate(grads, a, Tensor { shape: g.shape().to_vec(), data });
                }
            }
            Op::Sigmoid(a) => {
                if self.needs(a) {
                    let data = g
                        .data()
                        .iter()
                        .zip(node.value.data())
                        .map(|(gv, &s)| gv * s * (1.0 - s))
                        .collect();
                    accumulate(grads, a, Tensor { shape: g.shape().to_vec(), data });
                }
            }
            Op::Tanh(a) => {
                if self.needs(a) {
                    let data = g
                        .data()
                        .iter()
                        .zip(node.value.data())
                        .map(|(gv, &t)| gv * (1.0 - t * t))
                        .collect();
                    accumulate(grads, a, Tensor { shape: g.shape().to_vec(), data });
                }
            }
            Op::Softmax(a) => {
                if self.needs(a) {
                    let p = node.value.data();
                    let c = node.value.last_dim();
                    let mut dx = vec![0.0; p.len()];
                    for r in 0..node.value.rows() {
                        let off = r * c;
                        let dot: f64 = (0..c).map(|j| g.data()[off + j] * p[off + j]).sum();
                        for j in 0..c {
                            dx[off + j] = p[off + j] * (g.data()[off + j] - dot);
                        }
                    }
                    accumulate(grads, a, Tensor { shape: g.shape().to_vec(), data: dx });
                }
            }
            Op::Log(a) => {
                if self.needs(a) {
                    let data = g.data().iter().zip(self.value(a).data()).map(|(gv, &x)| gv / x).collect();
                    accumulate(grads, a, Tensor { shape: g.shape().to_vec(), data });
                }
            }
            Op::Mean(a) => {
                if self.needs(a) {
                    let va = self.value(a);
                    let gv = g.data()[0] / va.numel() as f64;
                    accumulate(grads, a, Tensor { shape: va.shape().to_vec(), data: vec![gv; va.numel()] });
                }
            }
            Op::Sum(a) => {
                if self.needs(a) {
                    let va = self.value(a);
                    let gv = g.data()[0];
                    accumulate(grads, a, Tensor { shape: va.shape().to_vec(), data: vec![gv; va.numel()] });
                }
            }
            Op::SquaredError(a, b) => {
                let (va, vb) = (self.value(a), self.value(b));
                if self.needs(a) {
                    let data = g
                        .data()
                        .iter()
                        .zip(va.data().iter().zip(vb.data()))
                        .map(|(gv, (x, y))| gv * 2.0 * (x - y))
                        .collect();
                    accumulate(grads, a, Tensor { shape: va.shape().to_vec(), data });
                }
                if self.needs(b) {
                    let data = g
                        .data()
                        .iter()
                        .zip(va.data().iter().zip(vb.data()))
                        .map(|(gv, (x, y))| gv * -2.0 * (x - y))
                        .collect();
                    accumulate(grads, b, Tensor { shape: vb.shape().to_vec(), data });
                }
            }
            Op::CrossEntropy(p, t) => {
                let (vp, vt) = (self.value(p), self.value(t));
                let c = vp.last_dim();
                if self.needs(p) {
                    let mut dp = vec![0.0; vp.numel()];
                    for r in 0..vp.rows() {
                        let gr = g.data()[r];
                        for j in 0..c {
                            let tv = vt.data()[r * c + j];
                            if tv != 0.0 {
                                dp[r * c + j] = gr * (-tv / vp.data()[r * c + j]);
                            }
                        }
                    }
                    accumulate(grads, p, Tensor { shape: vp.shape().to_vec(), data: dp });
                }
                if self.needs(t) {
                    let mut dt = vec![0.0; vt.numel()];
                    for r in 0..vt.rows() {
                        let gr = g.data()[r];
                        for j in 0..c {
                            dt[r * c + j] = gr * -vp.data()[r * c + j].ln();
                        }
                    }
                    accumulate(grads, t, Tensor { shape: vt.shape().to_vec(), data: dt });
                }
            }
            Op::Affine(a, k) => {
                if self.needs(a) {
                    let data = g.data().iter().map(|gv| k * gv).collect();
                    accumulate(grads, a, Tensor { shape: g.shape().to_vec(), data });
                }
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, contribution: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, c) in existing.data.iter_mut().zip(contribution.data) {
                *e += c;
            }
        }
        slot => *slot = Some(contribution),
    }
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    // ikj order keeps the inner loop sequential over both b and out.
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    out
}
