use super::tensor::{matmul_nn, matmul_nt, matmul_tn, Tensor};
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
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
    AddRow(Var, Var),
    AddCol(Var, Var),
    SubCol(Var, Var),
    Neg(Var),
    Exp(Var),
    Log(Var),
    Relu(Var),
    Sigmoid(Var),
    Softplus(Var),
    Square(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    SumAxis(Var, usize),
    LogSumExp(Var, usize),
    Softmax(Var, usize),
    SliceRows(Var, usize),
    Transpose(Var),
    GaussLogDensity(Var, Var, Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A dynamically built reverse-mode computation graph.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order and the backward sweep simply walks it in reverse.
/// The graph is rebuilt for every minibatch.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to every node of a graph.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradient for `v`, or zeros of the right shape when nothing flowed into it.
    pub fn wrt(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        self.grads[v.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

fn axis_check(op: &'static str, axis: usize) -> Result<()> {
    if axis > 1 {
        return Err(Error::Contract(format!("{op}: axis {axis} out of range")));
    }
    Ok(())
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn stable_softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
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

    /// A leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> Result<f64> {
        self.value(v).item()
    }

    fn push_raw(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, parents: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite {
                what: format!("output of {name}"),
            });
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        Ok(self.push_raw(value, op, requires_grad))
    }

    fn dims(&self, v: Var) -> Result<(usize, usize)> {
        self.value(v).dims2()
    }

    fn unary(&mut self, name: &'static str, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        self.dims(a)?;
        let value = self.value(a).map(f);
        self.push(name, value, op, &[a])
    }

    fn zip(&mut self, name: &'static str, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.value(a).same_dims(self.value(b), name)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        self.push(name, value, op, &[a, b])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a)?;
        let (k2, n) = self.dims(b)?;
        if k != k2 {
            return Err(Error::shape("matmul", self.value(a).shape(), self.value(b).shape()));
        }
        let data = matmul_nn(self.value(a).data(), self.value(b).data(), m, k, n);
        self.push("matmul", Tensor::matrix(m, n, data)?, Op::MatMul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// `a (m×n) + row (1×n)` broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.dims(a)?;
        if self.dims(row)? != (1, n) {
            return Err(Error::shape("add_row", self.value(a).shape(), self.value(row).shape()));
        }
        let r = self.value(row).data();
        let mut data = self.value(a).data().to_vec();
        for i in 0..m {
            for (x, &y) in data[i * n..(i + 1) * n].iter_mut().zip(r) {
                *x += y;
            }
        }
        self.push("add_row", Tensor::matrix(m, n, data)?, Op::AddRow(a, row), &[a, row])
    }

    /// `a (m×n) + col (m×1)` broadcast over columns.
    pub fn add_col(&mut self, a: Var, col: Var) -> Result<Var> {
        self.col_broadcast("add_col", a, col, 1.0)
    }

    /// `a (m×n) - col (m×1)` broadcast over columns.
    pub fn sub_col(&mut self, a: Var, col: Var) -> Result<Var> {
        self.col_broadcast("sub_col", a, col, -1.0)
    }

    fn col_broadcast(&mut self, name: &'static str, a: Var, col: Var, sign: f64) -> Result<Var> {
        let (m, n) = self.dims(a)?;
        if self.dims(col)? != (m, 1) {
            return Err(Error::shape(name, self.value(a).shape(), self.value(col).shape()));
        }
        let c = self.value(col).data();
        let mut data = self.value(a).data().to_vec();
        for i in 0..m {
            for x in &mut data[i * n..(i + 1) * n] {
                *x += sign * c[i];
            }
        }
        let op = if sign > 0.0 { Op::AddCol(a, col) } else { Op::SubCol(a, col) };
        self.push(name, Tensor::matrix(m, n, data)?, op, &[a, col])
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.unary("neg", a, Op::Neg(a), |x| -x)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary("exp", a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(bad) = self.value(a).data().iter().find(|&&x| x <= 0.0 || x.is_nan()) {
            return Err(Error::domain("log", format!("non-positive input {bad}")));
        }
        self.unary("log", a, Op::Log(a), f64::ln)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary("relu", a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary("sigmoid", a, Op::Sigmoid(a), stable_sigmoid)
    }

    /// `ln(1 + eˣ)`, evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.unary("softplus", a, Op::Softplus(a), stable_softplus)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary("square", a, Op::Square(a), |x| x * x)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary("scale", a, Op::Scale(a, c), |x| c * x)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary("add_scalar", a, Op::AddScalar(a), |x| x + c)
    }

    /// Clamp into `[lo, hi]`; the gradient is zero where the clamp is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        self.unary("clamp", a, Op::Clamp(a, lo, hi), |x| x.clamp(lo, hi))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(Error::Contract("mean of an empty tensor".into()));
        }
        let s = t.sum() / t.len() as f64;
        self.push("mean", Tensor::scalar(s), Op::Mean(a), &[a])
    }

    /// Sum along `axis`: 0 gives `1×n`, 1 gives `m×1`.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        axis_check("sum_axis", axis)?;
        let (m, n) = self.dims(a)?;
        let x = self.value(a).data();
        let value = if axis == 1 {
            let data = (0..m).map(|i| x[i * n..(i + 1) * n].iter().sum()).collect();
            Tensor::matrix(m, 1, data)?
        } else {
            let mut data = vec![0.0; n];
            for i in 0..m {
                for (d, &v) in data.iter_mut().zip(&x[i * n..(i + 1) * n]) {
                    *d += v;
                }
            }
            Tensor::matrix(1, n, data)?
        };
        self.push("sum_axis", value, Op::SumAxis(a, axis), &[a])
    }

    /// Overflow-safe `ln Σ exp` along `axis`.
    pub fn logsumexp(&mut self, a: Var, axis: usize) -> Result<Var> {
        axis_check("logsumexp", axis)?;
        let t = self.value(a);
        let lanes = lanes(t, axis)?;
        let data: Vec<f64> = lanes.iter().map(|lane| lse(lane)).collect();
        let (m, n) = t.dims2()?;
        let value = if axis == 1 {
            Tensor::matrix(m, 1, data)?
        } else {
            Tensor::matrix(1, n, data)?
        };
        self.push("logsumexp", value, Op::LogSumExp(a, axis), &[a])
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        axis_check("softmax", axis)?;
        let t = self.value(a);
        let (m, n) = t.dims2()?;
        let mut out = vec![0.0; m * n];
        for (l, lane) in lanes(t, axis)?.iter().enumerate() {
            let max = lane.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = lane.iter().map(|x| (x - max).exp()).collect();
            let total: f64 = e.iter().sum();
            for (p, ep) in e.iter().enumerate() {
                let (i, j) = if axis == 1 { (l, p) } else { (p, l) };
                out[i * n + j] = ep / total;
            }
        }
        self.push("softmax", Tensor::matrix(m, n, out)?, Op::Softmax(a, axis), &[a])
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.dims(a)?;
        if start > end || end > m {
            return Err(Error::Contract(format!(
                "slice_rows {start}..{end} of a matrix with {m} rows"
            )));
        }
        let data = self.value(a).data()[start * n..end * n].to_vec();
        self.push("slice_rows", Tensor::matrix(end - start, n, data)?, Op::SliceRows(a, start), &[a])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).transpose()?;
        self.push("transpose", value, Op::Transpose(a), &[a])
    }

    /// `out[i,k] = ln N(z_i | mean_k, diag(exp(log_var_k)))` for `z: B×D`,
    /// `mean, log_var: K×D`.
    pub fn gauss_log_density(&mut self, z: Var, mean: Var, log_var: Var) -> Result<Var> {
        let (b, d) = self.dims(z)?;
        let (k, d2) = self.dims(mean)?;
        if d != d2 {
            return Err(Error::shape("gauss_log_density", self.value(z).shape(), self.value(mean).shape()));
        }
        self.value(mean).same_dims(self.value(log_var), "gauss_log_density")?;
        let (zv, mv, lv) = (self.value(z).data(), self.value(mean).data(), self.value(log_var).data());
        let mut out = vec![0.0; b * k];
        for i in 0..b {
            let zi = &zv[i * d..(i + 1) * d];
            for c in 0..k {
                let mut acc = 0.0;
                for j in 0..d {
                    let diff = zi[j] - mv[c * d + j];
                    acc += LN_2PI + lv[c * d + j] + diff * diff * (-lv[c * d + j]).exp();
                }
                out[i * k + c] = -0.5 * acc;
            }
        }
        self.push(
            "gauss_log_density",
            Tensor::matrix(b, k, out)?,
            Op::GaussLogDensity(z, mean, log_var),
            &[z, mean, log_var],
        )
    }

    /// Reverse sweep from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(Error::Contract(format!(
                "backward from non-scalar root of shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::new(self.value(root).shape().to_vec(), vec![1.0])?);
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.requires_grad {
                self.propagate(&node.op, &node.value, &g, &mut grads)?;
            }
            grads[idx] = Some(g);
        }
        grads.resize(self.nodes.len(), None);
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) -> Result<()> {
        if !self.nodes[v.0].requires_grad {
            return Ok(());
        }
        let g = g.reshape(self.value(v).shape().to_vec())?;
        match &mut grads[v.0] {
            Some(existing) => {
                for (e, x) in existing.data_mut().iter_mut().zip(g.data()) {
                    *e += x;
                }
            }
            slot @ None => *slot = Some(g),
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, op: &Op, out: &Tensor, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let gd = g.data();
        let elementwise = |x: &Tensor, f: &dyn Fn(usize, f64) -> f64| -> Result<Tensor> {
            let data = x.data().iter().enumerate().map(|(i, &v)| f(i, v)).collect();
            Tensor::new(x.shape().to_vec(), data)
        };
        match *op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(a)?;
                let (_, n) = self.dims(b)?;
                if self.wants(a) {
                    let da = matmul_nt(gd, self.value(b).data(), m, n, k);
                    self.accumulate(grads, a, Tensor::matrix(m, k, da)?)?;
                }
                if self.wants(b) {
                    let db = matmul_tn(self.value(a).data(), gd, m, k, n);
                    self.accumulate(grads, b, Tensor::matrix(k, n, db)?)?;
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, a, g.clone())?;
                self.accumulate(grads, b, g.clone())?;
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, a, g.clone())?;
                self.accumulate(grads, b, g.map(|x| -x))?;
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(a).data(), self.value(b).data());
                if self.wants(a) {
                    self.accumulate(grads, a, elementwise(g, &|i, x| x * vb[i])?)?;
                }
                if self.wants(b) {
                    self.accumulate(grads, b, elementwise(g, &|i, x| x * va[i])?)?;
                }
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, a, g.clone())?;
                if self.wants(row) {
                    let (m, n) = g.dims2()?;
                    let mut dr = vec![0.0; n];
                    for i in 0..m {
                        for (d, &x) in dr.iter_mut().zip(&gd[i * n..(i + 1) * n]) {
                            *d += x;
                        }
                    }
                    self.accumulate(grads, row, Tensor::row(dr))?;
                }
            }
            Op::AddCol(a, col) | Op::SubCol(a, col) => {
                let sign = if matches!(op, Op::AddCol(..)) { 1.0 } else { -1.0 };
                self.accumulate(grads, a, g.clone())?;
                if self.wants(col) {
                    let (m, n) = g.dims2()?;
                    let dc = (0..m).map(|i| sign * gd[i * n..(i + 1) * n].iter().sum::<f64>()).collect();
                    self.accumulate(grads, col, Tensor::matrix(m, 1, dc)?)?;
                }
            }
            Op::Neg(a) => self.accumulate(grads, a, g.map(|x| -x))?,
            Op::Exp(a) => {
                let o = out.data();
                self.accumulate(grads, a, elementwise(g, &|i, x| x * o[i])?)?;
            }
            Op::Log(a) => {
                let xa = self.value(a).data();
                self.accumulate(grads, a, elementwise(g, &|i, x| x / xa[i])?)?;
            }
            Op::Relu(a) => {
                let xa = self.value(a).data();
                self.accumulate(grads, a, elementwise(g, &|i, x| if xa[i] > 0.0 { x } else { 0.0 })?)?;
            }
            Op::Sigmoid(a) => {
                let o = out.data();
                self.accumulate(grads, a, elementwise(g, &|i, x| x * o[i] * (1.0 - o[i]))?)?;
            }
            Op::Softplus(a) => {
                let xa = self.value(a).data();
                self.accumulate(grads, a, elementwise(g, &|i, x| x * stable_sigmoid(xa[i]))?)?;
            }
            Op::Square(a) => {
                let xa = self.value(a).data();
                self.accumulate(grads, a, elementwise(g, &|i, x| 2.0 * x * xa[i])?)?;
            }
            Op::Scale(a, c) => self.accumulate(grads, a, g.map(|x| c * x))?,
            Op::AddScalar(a) => self.accumulate(grads, a, g.clone())?,
            Op::Clamp(a, lo, hi) => {
                let xa = self.value(a).data();
                let pass = |v: f64| v > lo && v < hi;
                self.accumulate(grads, a, elementwise(g, &|i, x| if pass(xa[i]) { x } else { 0.0 })?)?;
            }
            Op::Sum(a) => {
                let s = g.item()?;
                self.accumulate(grads, a, self.value(a).map(|_| s))?;
            }
            Op::Mean(a) => {
                let s = g.item()? / self.value(a).len() as f64;
                self.accumulate(grads, a, self.value(a).map(|_| s))?;
            }
            Op::SumAxis(a, axis) => {
                let (m, n) = self.dims(a)?;
                let mut d = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        d[i * n + j] = if axis == 1 { gd[i] } else { gd[j] };
                    }
                }
                self.accumulate(grads, a, Tensor::matrix(m, n, d)?)?;
            }
            Op::LogSumExp(a, axis) => {
                let (m, n) = self.dims(a)?;
                let (x, y) = (self.value(a).data(), out.data());
                let mut d = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        let l = if axis == 1 { i } else { j };
                        d[i * n + j] = gd[l] * (x[i * n + j] - y[l]).exp();
                    }
                }
                self.accumulate(grads, a, Tensor::matrix(m, n, d)?)?;
            }
            Op::Softmax(a, axis) => {
                let (m, n) = self.dims(a)?;
                let s = out.data();
                let mut d = vec![0.0; m * n];
                let lanes = if axis == 1 { m } else { n };
                let width = if axis == 1 { n } else { m };
                let at = |l: usize, p: usize| if axis == 1 { l * n + p } else { p * n + l };
                for l in 0..lanes {
                    let dot: f64 = (0..width).map(|p| gd[at(l, p)] * s[at(l, p)]).sum();
                    for p in 0..width {
                        let q = at(l, p);
                        d[q] = s[q] * (gd[q] - dot);
                    }
                }
                self.accumulate(grads, a, Tensor::matrix(m, n, d)?)?;
            }
            Op::SliceRows(a, start) => {
                let (m, n) = self.dims(a)?;
                let mut d = vec![0.0; m * n];
                d[start * n..start * n + gd.len()].copy_from_slice(gd);
                self.accumulate(grads, a, Tensor::matrix(m, n, d)?)?;
            }
            Op::Transpose(a) => self.accumulate(grads, a, g.transpose()?)?,
            Op::GaussLogDensity(z, mean, log_var) => {
                let (b, d) = self.dims(z)?;
                let (k, _) = self.dims(mean)?;
                let (zv, mv, lv) = (self.value(z).data(), self.value(mean).data(), self.value(log_var).data());
                let prec: Vec<f64> = lv.iter().map(|v| (-v).exp()).collect();
                let mut dz = vec![0.0; b * d];
                let mut dm = vec![0.0; k * d];
                let mut dl = vec![0.0; k * d];
                for i in 0..b {
                    for c in 0..k {
                        let gic = gd[i * k + c];
                        if gic == 0.0 {
                            continue;
                        }
                        for j in 0..d {
                            let diff = zv[i * d + j] - mv[c * d + j];
                            let scaled = diff * prec[c * d + j];
                            dz[i * d + j] -= gic * scaled;
                            dm[c * d + j] += gic * scaled;
                            dl[c * d + j] -= 0.5 * gic * (1.0 - diff * scaled);
                        }
                    }
                }
                if self.wants(z) {
                    self.accumulate(grads, z, Tensor::matrix(b, d, dz)?)?;
                }
                if self.wants(mean) {
                    self.accumulate(grads, mean, Tensor::matrix(k, d, dm)?)?;
                }
                if self.wants(log_var) {
                    self.accumulate(grads, log_var, Tensor::matrix(k, d, dl)?)?;
                }
            }
        }
        Ok(())
    }
}

/// Lanes of a matrix along `axis`: rows for axis 1, columns for axis 0.
fn lanes(t: &Tensor, axis: usize) -> Result<Vec<Vec<f64>>> {
    let (m, n) = t.dims2()?;
    let x = t.data();
    Ok(if axis == 1 {
        (0..m).map(|i| x[i * n..(i + 1) * n].to_vec()).collect()
    } else {
        (0..n).map(|j| (0..m).map(|i| x[i * n + j]).collect()).collect()
    })
}

/// `ln Σ exp(x)` with the max shifted out.
pub fn lse(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}
