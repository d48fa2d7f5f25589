use crate::error::{Error, Result};

use super::tensor::{gemm_acc, gemm_nt_acc, gemm_tn_acc, Tensor};

/// Handle to a node recorded on a [`Tape`].
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
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    BroadcastRows(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Tanh(Var),
    Abs(Var),
    PowConst(Var, f64),
    Concat(Var, Var, usize),
    MaxOverRows(Var, Vec<usize>),
    SoftmaxRows(Var),
    SoftmaxCrossEntropy(Var, Vec<usize>, Tensor),
    Sum(Var),
    UpperWeightedSum(Var, Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a computation for reverse-mode differentiation.
///
/// Nodes can only reference nodes created before them, so insertion order is
/// a topological order and the graph is acyclic by construction.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`; zeros if `var` does not
    /// influence the loss.
    pub fn get(&self, var: Var) -> Tensor {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[var.0]),
        }
    }

    pub fn take(&mut self, var: Var) -> Tensor {
        self.grads[var.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[var.0]))
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// An input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.value(x).map(f);
        let rg = self.rg(x);
        self.push(value, op, rg)
    }

    fn elementwise(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape(name, va, vb)?;
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, op, rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let (m, k) = va.dims2("matmul")?;
        let (k2, n) = vb.dims2("matmul")?;
        if k != k2 {
            return Err(Error::Shape {
                op: "matmul",
                left: va.shape().to_vec(),
                right: vb.shape().to_vec(),
            });
        }
        let mut out = vec![0.0; m * n];
        gemm_acc(va.data(), vb.data(), &mut out, m, k, n);
        let value = Tensor::matrix(m, n, out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).transpose()?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Transpose(x), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Adds the `1 × d` row `bias` to every row of `x` (`n × d`). This is the
    /// only broadcasting the tape performs implicitly.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (vx, vb) = (self.value(x), self.value(bias));
        let (n, d) = vx.dims2("add_row")?;
        if vb.shape() != [1, d] {
            return Err(Error::Shape {
                op: "add_row",
                left: vx.shape().to_vec(),
                right: vb.shape().to_vec(),
            });
        }
        let mut data = vx.data().to_vec();
        for row in data.chunks_exact_mut(d) {
            for (v, b) in row.iter_mut().zip(vb.data()) {
                *v += b;
            }
        }
        let value = Tensor::matrix(n, d, data)?;
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(value, Op::AddRow(x, bias), rg))
    }

    /// Repeats a `1 × d` row `n` times.
    pub fn broadcast_rows(&mut self, x: Var, n: usize) -> Result<Var> {
        let vx = self.value(x);
        let (r, d) = vx.dims2("broadcast_rows")?;
        if r != 1 {
            return Err(Error::Shape {
                op: "broadcast_rows",
                left: vx.shape().to_vec(),
                right: vec![1, d],
            });
        }
        if n == 0 {
            return Err(Error::Empty {
                op: "broadcast_rows",
            });
        }
        let data = vx.data().repeat(n);
        let value = Tensor::matrix(n, d, data)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::BroadcastRows(x), rg))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Op::Scale(x, c), |v| c * v)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Op::AddScalar(x), |v| v + c)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), f64::tanh)
    }

    /// Elementwise absolute value; the subgradient at 0 is 0.
    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, Op::Abs(x), f64::abs)
    }

    /// Elementwise `base^x` for a constant `base > 0`.
    pub fn pow_const(&mut self, base: f64, exponent: Var) -> Result<Var> {
        if !(base > 0.0 && base.is_finite()) {
            return Err(Error::Config(format!(
                "pow_const base must be positive and finite, got {base}"
            )));
        }
        Ok(self.unary(exponent, Op::PowConst(exponent, base), |v| base.powf(v)))
    }

    /// Concatenates two rank-2 tensors along `axis` (0 = rows, 1 = columns).
    pub fn concat(&mut self, a: Var, b: Var, axis: usize) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let (ra, ca) = va.dims2("concat")?;
        let (rb, cb) = vb.dims2("concat")?;
        let value = match axis {
            0 => {
                if ca != cb {
                    return Err(Error::Shape {
                        op: "concat",
                        left: va.shape().to_vec(),
                        right: vb.shape().to_vec(),
                    });
                }
                let mut data = va.data().to_vec();
                data.extend_from_slice(vb.data());
                Tensor::matrix(ra + rb, ca, data)?
            }
            1 => {
                if ra != rb {
                    return Err(Error::Shape {
                        op: "concat",
                        left: va.shape().to_vec(),
                        right: vb.shape().to_vec(),
                    });
                }
                let mut data = Vec::with_capacity(ra * (ca + cb));
                for i in 0..ra {
                    data.extend_from_slice(va.row_slice(i));
                    data.extend_from_slice(vb.row_slice(i));
                }
                Tensor::matrix(ra, ca + cb, data)?
            }
            _ => {
                return Err(Error::Axis {
                    op: "concat",
                    axis,
                    rank: 2,
                })
            }
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Concat(a, b, axis), rg))
    }

    /// Column-wise maximum over the rows of `n × d`, giving `1 × d`. The
    /// gradient goes to one row per column, the lowest index on ties.
    pub fn max_over_rows(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let (n, d) = vx.dims2("max_over_rows")?;
        if n == 0 || d == 0 {
            return Err(Error::Empty {
                op: "max_over_rows",
            });
        }
        let mut best = vx.row_slice(0).to_vec();
        let mut argmax = vec![0usize; d];
        for i in 1..n {
            for (j, &v) in vx.row_slice(i).iter().enumerate() {
                if v > best[j] {
                    best[j] = v;
                    argmax[j] = i;
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::row(best), Op::MaxOverRows(x, argmax), rg))
    }

    /// Row-wise softmax of `n × k` logits.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let (n, k) = vx.dims2("softmax_rows")?;
        if k == 0 {
            return Err(Error::Empty { op: "softmax_rows" });
        }
        let mut data = Vec::with_capacity(n * k);
        for i in 0..n {
            data.extend(softmax(vx.row_slice(i)));
        }
        let value = Tensor::matrix(n, k, data)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::SoftmaxRows(x), rg))
    }

    /// Mean over rows of `-log softmax(logits)[target]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let vl = self.value(logits);
        let (n, k) = vl.dims2("softmax_cross_entropy")?;
        if n == 0 {
            return Err(Error::Empty {
                op: "softmax_cross_entropy",
            });
        }
        if targets.len() != n {
            return Err(Error::Length {
                what: "cross-entropy targets",
                expected: n,
                found: targets.len(),
            });
        }
        let mut probs = Vec::with_capacity(n * k);
        let mut total = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            if t >= k {
                return Err(Error::ClassIndex {
                    index: t,
                    classes: k,
                });
            }
            let row = vl.row_slice(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[t];
            probs.extend(softmax(row));
        }
        let value = Tensor::scalar(total / n as f64);
        let probs = Tensor::matrix(n, k, probs)?;
        let rg = self.rg(logits);
        Ok(self.push(
            value,
            Op::SoftmaxCrossEntropy(logits, targets.to_vec(), probs),
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(total), Op::Sum(x), rg)
    }

    /// `Σ_{i<j} x[i][j] · w[i][j]` over the strict upper triangle of two
    /// `n × n` matrices, summed row by row in index order.
    pub fn upper_weighted_sum(&mut self, x: Var, w: Var) -> Result<Var> {
        let (vx, vw) = (self.value(x), self.value(w));
        same_shape("upper_weighted_sum", vx, vw)?;
        let (n, m) = vx.dims2("upper_weighted_sum")?;
        if n != m {
            return Err(Error::Shape {
                op: "upper_weighted_sum",
                left: vx.shape().to_vec(),
                right: vec![n, n],
            });
        }
        let mut total = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                total += vx.get(i, j) * vw.get(i, j);
            }
        }
        let rg = self.rg(x) || self.rg(w);
        Ok(self.push(Tensor::scalar(total), Op::UpperWeightedSum(x, w), rg))
    }

    /// Reverse pass from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss {
                shape: lv.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::filled(lv.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }

        let shapes = self
            .nodes
            .iter()
            .map(|n| n.value.shape().to_vec())
            .collect();
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], target: Var, delta: Tensor) {
        if !self.rg(target) {
            return;
        }
        match &mut grads[target.0] {
            Some(g) => g.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k) = va.dims2("matmul")?;
                let n = vb.cols();
                if self.rg(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm_nt_acc(g.data(), vb.data(), &mut da, m, n, k);
                    self.accumulate(grads, *a, Tensor::matrix(m, k, da)?);
                }
                if self.rg(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm_tn_acc(va.data(), g.data(), &mut db, m, k, n);
                    self.accumulate(grads, *b, Tensor::matrix(k, n, db)?);
                }
            }
            Op::Transpose(x) => self.accumulate(grads, *x, g.transpose()?),
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    self.accumulate(grads, *a, zip_map(g, vb, |gv, bv| gv * bv));
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, zip_map(g, va, |gv, av| gv * av));
                }
            }
            Op::AddRow(x, bias) => {
                self.accumulate(grads, *x, g.clone());
                if self.rg(*bias) {
                    self.accumulate(grads, *bias, column_sums(g));
                }
            }
            Op::BroadcastRows(x) => self.accumulate(grads, *x, column_sums(g)),
            Op::Scale(x, c) => self.accumulate(grads, *x, g.map(|v| c * v)),
            Op::AddScalar(x) => self.accumulate(grads, *x, g.clone()),
            Op::Sigmoid(x) => {
                self.accumulate(grads, *x, zip_map(g, out, |gv, s| gv * s * (1.0 - s)))
            }
            Op::Tanh(x) => self.accumulate(grads, *x, zip_map(g, out, |gv, t| gv * (1.0 - t * t))),
            Op::Abs(x) => {
                let vx = self.value(*x);
                let d = zip_map(g, vx, |gv, xv| {
                    if xv > 0.0 {
                        gv
                    } else if xv < 0.0 {
                        -gv
                    } else {
                        0.0
                    }
                });
                self.accumulate(grads, *x, d);
            }
            Op::PowConst(x, base) => {
                let ln = base.ln();
                self.accumulate(grads, *x, zip_map(g, out, |gv, p| gv * p * ln));
            }
            Op::Concat(a, b, axis) => {
                let (ra, ca) = self.value(*a).dims2("concat")?;
                let (rb, cb) = self.value(*b).dims2("concat")?;
                let (da, db) = if *axis == 0 {
                    let split = ra * ca;
                    (
                        Tensor::matrix(ra, ca, g.data()[..split].to_vec())?,
                        Tensor::matrix(rb, cb, g.data()[split..].to_vec())?,
                    )
                } else {
                    let mut da = Vec::with_capacity(ra * ca);
                    let mut db = Vec::with_capacity(rb * cb);
                    for i in 0..ra {
                        let row = g.row_slice(i);
                        da.extend_from_slice(&row[..ca]);
                        db.extend_from_slice(&row[ca..]);
                    }
                    (Tensor::matrix(ra, ca, da)?, Tensor::matrix(rb, cb, db)?)
                };
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *b, db);
            }
            Op::MaxOverRows(x, argmax) => {
                let vx = self.value(*x);
                let d = vx.cols();
                let mut dx = Tensor::zeros(vx.shape());
                for (j, &i) in argmax.iter().enumerate() {
                    dx.data_mut()[i * d + j] = g.data()[j];
                }
                self.accumulate(grads, *x, dx);
            }
            Op::SoftmaxRows(x) => {
                let (n, k) = out.dims2("softmax_rows")?;
                let mut dx = Vec::with_capacity(n * k);
                for i in 0..n {
                    let s = out.row_slice(i);
                    let gr = g.row_slice(i);
                    let dot: f64 = s.iter().zip(gr).map(|(a, b)| a * b).sum();
                    dx.extend(s.iter().zip(gr).map(|(sv, gv)| sv * (gv - dot)));
                }
                self.accumulate(grads, *x, Tensor::matrix(n, k, dx)?);
            }
            Op::SoftmaxCrossEntropy(logits, targets, probs) => {
                let (n, k) = probs.dims2("softmax_cross_entropy")?;
                let scale = g.item() / n as f64;
                let mut dx = probs.data().to_vec();
                for (i, &t) in targets.iter().enumerate() {
                    dx[i * k + t] -= 1.0;
                }
                for v in &mut dx {
                    *v *= scale;
                }
                self.accumulate(grads, *logits, Tensor::matrix(n, k, dx)?);
            }
            Op::Sum(x) => {
                let gv = g.item();
                self.accumulate(grads, *x, Tensor::filled(self.value(*x).shape(), gv));
            }
            Op::UpperWeightedSum(x, w) => {
                let gv = g.item();
                let (vx, vw) = (self.value(*x), self.value(*w));
                let n = vx.rows();
                if self.rg(*x) {
                    self.accumulate(grads, *x, upper_scaled(vw, n, gv));
                }
                if self.rg(*w) {
                    self.accumulate(grads, *w, upper_scaled(vx, n, gv));
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn softmax(row: &[f64]) -> impl Iterator<Item = f64> + '_ {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let denom: f64 = row.iter().map(|v| (v - max).exp()).sum();
    row.iter().map(move |v| (v - max).exp() / denom)
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::new(a.shape().to_vec(), data).expect("zip_map of equal shapes")
}

fn column_sums(g: &Tensor) -> Tensor {
    let d = g.cols();
    let mut out = vec![0.0; d];
    for row in g.data().chunks_exact(d) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    Tensor::row(out)
}

fn upper_scaled(m: &Tensor, n: usize, scale: f64) -> Tensor {
    let mut out = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in (i + 1)..n {
            out.data_mut()[i * n + j] = scale * m.get(i, j);
        }
    }
    out
}
