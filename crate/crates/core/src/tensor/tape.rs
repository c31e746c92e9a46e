use super::{gemm, log_softmax_in_place, matmul_dims, softmax_in_place, Activation, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    BatchMatMul { a: Var, b: Var, transpose_b: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Activation(Var, Activation),
    Softmax(Var),
    LogSoftmax(Var),
    AddConst(Var),
    Reshape(Var),
    SelectStep(Var, usize),
    ConcatCols(Vec<Var>),
    LayerNorm { x: Var, inv_std: Vec<f64> },
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records operations in evaluation order; the node list is topologically
/// sorted by construction since every op only refers to earlier handles.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
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

    /// Records a leaf; gradient tracking follows the tensor's own flag.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let rg = tensor.is_requires_grad();
        self.push_raw(tensor, Op::Leaf, rg)
    }

    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.push_raw(tensor.requires_grad(false), Op::Leaf, false)
    }

    pub fn param(&mut self, tensor: Tensor) -> Var {
        self.push_raw(tensor.requires_grad(true), Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient accumulated for `v` by [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<f64>> {
        self.nodes[v.0].value.take_grad()
    }

    fn push_raw(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(
        &mut self,
        op_name: &'static str,
        shape: Vec<usize>,
        data: Vec<f64>,
        op: Op,
    ) -> Result<Var> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericInstability { op: op_name });
        }
        let rg = self.op_requires_grad(&op);
        Ok(self.push_raw(Tensor::from_parts(shape, data), op, rg))
    }

    fn op_requires_grad(&self, op: &Op) -> bool {
        let rg = |v: &Var| self.nodes[v.0].requires_grad;
        match op {
            Op::Leaf => false,
            Op::MatMul(a, b)
            | Op::BatchMatMul { a, b, .. }
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b)
            | Op::MulRow(a, b) => rg(a) || rg(b),
            Op::Scale(a, _)
            | Op::Activation(a, _)
            | Op::Softmax(a)
            | Op::LogSoftmax(a)
            | Op::AddConst(a)
            | Op::Reshape(a)
            | Op::SelectStep(a, _)
            | Op::LayerNorm { x: a, .. }
            | Op::Sum(a)
            | Op::Mean(a) => rg(a),
            Op::ConcatCols(vs) => vs.iter().any(rg),
        }
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::ShapeMismatch {
                op,
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k, n) = matmul_dims(self.value(a), self.value(b))?;
        let mut out = vec![0.0; m * n];
        gemm(
            self.value(a).data(),
            self.value(b).data(),
            &mut out,
            m,
            k,
            n,
            false,
            false,
        );
        self.push("matmul", vec![m, n], out, Op::MatMul(a, b))
    }

    /// Batched product of 3-D tensors `[B×m×k]·[B×k×n]`, or `[B×m×k]·[B×n×k]ᵀ`
    /// when `transpose_b` is set.
    pub fn bmm(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let bad = || Error::ShapeMismatch {
            op: "bmm",
            left: sa.clone(),
            right: sb.clone(),
        };
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(bad());
        }
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let (kb, n) = if transpose_b {
            (sb[2], sb[1])
        } else {
            (sb[1], sb[2])
        };
        if kb != k {
            return Err(bad());
        }
        let mut out = vec![0.0; batch * m * n];
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        for i in 0..batch {
            gemm(
                &ad[i * m * k..(i + 1) * m * k],
                &bd[i * k * n..(i + 1) * k * n],
                &mut out[i * m * n..(i + 1) * m * n],
                m,
                k,
                n,
                false,
                transpose_b,
            );
        }
        self.push(
            "bmm",
            vec![batch, m, n],
            out,
            Op::BatchMatMul { a, b, transpose_b },
        )
    }

    fn zip_with(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(name, shape, data, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let data = self.value(a).data().iter().map(|x| x * c).collect();
        let shape = self.shape(a).to_vec();
        self.push("scale", shape, data, Op::Scale(a, c))
    }

    fn row_broadcast(&mut self, name: &'static str, x: Var, row: Var, mul: bool) -> Result<Var> {
        let (_, cols) = self.value(x).rows_cols();
        if self.value(row).len() != cols {
            return Err(Error::ShapeMismatch {
                op: name,
                left: self.shape(x).to_vec(),
                right: self.shape(row).to_vec(),
            });
        }
        let r = self.value(row).data();
        let data = self
            .value(x)
            .data()
            .chunks(cols)
            .flat_map(|chunk| {
                chunk
                    .iter()
                    .zip(r)
                    .map(move |(&v, &w)| if mul { v * w } else { v + w })
            })
            .collect();
        let shape = self.shape(x).to_vec();
        let op = if mul {
            Op::MulRow(x, row)
        } else {
            Op::AddRow(x, row)
        };
        self.push(name, shape, data, op)
    }

    /// Adds a bias vector to every row (last-axis broadcast).
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        self.row_broadcast("add_row", x, row, false)
    }

    /// Multiplies every row by a gain vector (last-axis broadcast).
    pub fn mul_row(&mut self, x: Var, row: Var) -> Result<Var> {
        self.row_broadcast("mul_row", x, row, true)
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        if kind == Activation::Linear {
            return Ok(x);
        }
        let data = self
            .value(x)
            .data()
            .iter()
            .map(|&v| kind.apply(v))
            .collect();
        let shape = self.shape(x).to_vec();
        self.push("activation", shape, data, Op::Activation(x, kind))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Relu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Tanh)
    }

    /// Softmax over the last axis; `-inf` inputs get exactly zero weight.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let (_, cols) = self.value(x).rows_cols();
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(cols) {
            softmax_in_place(row)?;
        }
        let shape = self.shape(x).to_vec();
        self.push("softmax", shape, data, Op::Softmax(x))
    }

    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let (_, cols) = self.value(x).rows_cols();
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(cols) {
            log_softmax_in_place(row)?;
        }
        let shape = self.shape(x).to_vec();
        self.push("log_softmax", shape, data, Op::LogSoftmax(x))
    }

    /// Adds a constant whose shape equals the trailing axes of `x`,
    /// broadcasting over the leading ones.
    pub fn add_const(&mut self, x: Var, c: &Tensor) -> Result<Var> {
        let data = self.broadcast_const(x, c, "add_const")?;
        let shape = self.shape(x).to_vec();
        self.push("add_const", shape, data, Op::AddConst(x))
    }

    /// Adds an additive mask (entries 0 or `-inf`). The result may hold
    /// `-inf`, which only [`Tape::softmax`] should consume.
    pub fn add_mask(&mut self, x: Var, mask: &Tensor) -> Result<Var> {
        let data = self.broadcast_const(x, mask, "add_mask")?;
        if data.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::NumericInstability { op: "add_mask" });
        }
        let shape = self.shape(x).to_vec();
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push_raw(Tensor::from_parts(shape, data), Op::AddConst(x), rg))
    }

    fn broadcast_const(&self, x: Var, c: &Tensor, op: &'static str) -> Result<Vec<f64>> {
        let xs = self.shape(x);
        let cs = c.shape();
        if cs.len() > xs.len() || xs[xs.len() - cs.len()..] != *cs {
            return Err(Error::ShapeMismatch {
                op,
                left: xs.to_vec(),
                right: cs.to_vec(),
            });
        }
        let cd = c.data();
        Ok(self
            .value(x)
            .data()
            .chunks(cd.len())
            .flat_map(|chunk| chunk.iter().zip(cd).map(|(a, b)| a + b))
            .collect())
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).reshape(shape)?;
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push_raw(t, Op::Reshape(x), rg))
    }

    /// Picks step `t` out of a `[B×T×F]` tensor, giving `[B×F]`.
    pub fn select_step(&mut self, x: Var, t: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || t >= s[1] {
            return Err(Error::ShapeMismatch {
                op: "select_step",
                left: s,
                right: vec![t],
            });
        }
        let (b, steps, f) = (s[0], s[1], s[2]);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(b * f);
        for i in 0..b {
            let off = (i * steps + t) * f;
            data.extend_from_slice(&src[off..off + f]);
        }
        self.push("select_step", vec![b, f], data, Op::SelectStep(x, t))
    }

    /// Concatenates 2-D tensors with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of nothing".into()))?;
        let rows = self.shape(*first)[0];
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            if s.len() != 2 || s[0] != rows {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    left: self.shape(*first).to_vec(),
                    right: s.to_vec(),
                });
            }
            total += s[1];
        }
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                let c = self.shape(*p)[1];
                data.extend_from_slice(&self.value(*p).data()[r * c..(r + 1) * c]);
            }
        }
        self.push(
            "concat_cols",
            vec![rows, total],
            data,
            Op::ConcatCols(parts.to_vec()),
        )
    }

    /// Normalizes each last-axis row to zero mean and unit variance.
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        let (rows, cols) = self.value(x).rows_cols();
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(src.len());
        let mut inv_std = Vec::with_capacity(rows);
        for row in src.chunks(cols) {
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
            let s = 1.0 / (var + eps).sqrt();
            inv_std.push(s);
            data.extend(row.iter().map(|v| (v - mean) * s));
        }
        let shape = self.shape(x).to_vec();
        self.push("layer_norm", shape, data, Op::LayerNorm { x, inv_std })
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push("sum", vec![1], vec![s], Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push("mean", vec![1], vec![s], Op::Mean(x))
    }

    /// Mean squared error between two equally shaped tensors.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let d = self.sub(pred, target)?;
        let sq = self.mul(d, d)?;
        self.mean(sq)
    }

    /// Reverse pass from a scalar loss. Gradients land in each recorded
    /// tensor's grad slot and accumulate over repeated uses of a leaf.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        if self.nodes.is_empty() {
            return Err(Error::InvalidArgument("empty tape".into()));
        }
        let ls = self.shape(loss);
        if ls.iter().product::<usize>() != 1 {
            return Err(Error::NonScalarLoss(ls.to_vec()));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.requires_grad {
                self.backprop_node(idx, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }

        for (idx, g) in grads.into_iter().enumerate() {
            let node = &mut self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let g = g.unwrap_or_else(|| vec![0.0; node.value.len()]);
            node.value.grad = Some(g);
        }
        for node in &mut self.nodes[loss.0 + 1..] {
            if node.requires_grad {
                node.value.grad = Some(vec![0.0; node.value.len()]);
            }
        }
        Ok(())
    }

    fn backprop_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let val = |v: &Var| self.nodes[v.0].value.data();
        let rg = |v: &Var| self.nodes[v.0].requires_grad;
        let y = node.value.data();

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if rg(a) {
                    let ga = slot(grads, *a, m * k);
                    gemm(g, val(b), ga, m, n, k, false, true);
                }
                if rg(b) {
                    let gb = slot(grads, *b, k * n);
                    gemm(val(a), g, gb, k, m, n, true, false);
                }
            }
            Op::BatchMatMul { a, b, transpose_b } => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (batch, m, k) = (sa[0], sa[1], sa[2]);
                let n = if *transpose_b { sb[1] } else { sb[2] };
                let (ad, bd) = (val(a), val(b));
                if rg(a) {
                    let ga = slot(grads, *a, batch * m * k);
                    for i in 0..batch {
                        let gi = &g[i * m * n..(i + 1) * m * n];
                        let bi = &bd[i * k * n..(i + 1) * k * n];
                        let out = &mut ga[i * m * k..(i + 1) * m * k];
                        // dA = dC·Bᵀ, or dC·B when B was stored transposed
                        gemm(gi, bi, out, m, n, k, false, !*transpose_b);
                    }
                }
                if rg(b) {
                    let gb = slot(grads, *b, batch * k * n);
                    for i in 0..batch {
                        let gi = &g[i * m * n..(i + 1) * m * n];
                        let ai = &ad[i * m * k..(i + 1) * m * k];
                        let out = &mut gb[i * k * n..(i + 1) * k * n];
                        if *transpose_b {
                            gemm(gi, ai, out, n, m, k, true, false);
                        } else {
                            gemm(ai, gi, out, k, m, n, true, false);
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                if rg(a) {
                    axpy(slot(grads, *a, g.len()), g, 1.0);
                }
                if rg(b) {
                    axpy(slot(grads, *b, g.len()), g, 1.0);
                }
            }
            Op::Sub(a, b) => {
                if rg(a) {
                    axpy(slot(grads, *a, g.len()), g, 1.0);
                }
                if rg(b) {
                    axpy(slot(grads, *b, g.len()), g, -1.0);
                }
            }
            Op::Mul(a, b) => {
                if a == b {
                    let ga = slot(grads, *a, g.len());
                    for ((o, gv), av) in ga.iter_mut().zip(g).zip(val(a)) {
                        *o += 2.0 * gv * av;
                    }
                    return;
                }
                if rg(a) {
                    let bv = val(b);
                    let ga = slot(grads, *a, g.len());
                    for ((o, gv), w) in ga.iter_mut().zip(g).zip(bv) {
                        *o += gv * w;
                    }
                }
                if rg(b) {
                    let av = val(a);
                    let gb = slot(grads, *b, g.len());
                    for ((o, gv), w) in gb.iter_mut().zip(g).zip(av) {
                        *o += gv * w;
                    }
                }
            }
            Op::Scale(a, c) => axpy(slot(grads, *a, g.len()), g, *c),
            Op::AddRow(x, row) => {
                let cols = self.value(*row).len();
                if rg(x) {
                    axpy(slot(grads, *x, g.len()), g, 1.0);
                }
                if rg(row) {
                    let gr = slot(grads, *row, cols);
                    for chunk in g.chunks(cols) {
                        axpy(gr, chunk, 1.0);
                    }
                }
            }
            Op::MulRow(x, row) => {
                let cols = self.value(*row).len();
                let (xd, rd) = (val(x), val(row));
                if rg(x) {
                    let gx = slot(grads, *x, g.len());
                    for (gc, oc) in g.chunks(cols).zip(gx.chunks_mut(cols)) {
                        for ((o, gv), w) in oc.iter_mut().zip(gc).zip(rd) {
                            *o += gv * w;
                        }
                    }
                }
                if rg(row) {
                    let gr = slot(grads, *row, cols);
                    for (gc, xc) in g.chunks(cols).zip(xd.chunks(cols)) {
                        for ((o, gv), xv) in gr.iter_mut().zip(gc).zip(xc) {
                            *o += gv * xv;
                        }
                    }
                }
            }
            Op::Activation(x, kind) => {
                let xd = val(x);
                let gx = slot(grads, *x, g.len());
                for (((o, gv), xv), yv) in gx.iter_mut().zip(g).zip(xd).zip(y) {
                    *o += gv * kind.derivative(*xv, *yv);
                }
            }
            Op::Softmax(x) => {
                let (_, cols) = node.value.rows_cols();
                let gx = slot(grads, *x, g.len());
                for ((yc, gc), oc) in y.chunks(cols).zip(g.chunks(cols)).zip(gx.chunks_mut(cols)) {
                    let dot: f64 = yc.iter().zip(gc).map(|(a, b)| a * b).sum();
                    for ((o, yv), gv) in oc.iter_mut().zip(yc).zip(gc) {
                        *o += yv * (gv - dot);
                    }
                }
            }
            Op::LogSoftmax(x) => {
                let (_, cols) = node.value.rows_cols();
                let gx = slot(grads, *x, g.len());
                for ((yc, gc), oc) in y.chunks(cols).zip(g.chunks(cols)).zip(gx.chunks_mut(cols)) {
                    let total: f64 = gc.iter().sum();
                    for ((o, yv), gv) in oc.iter_mut().zip(yc).zip(gc) {
                        *o += gv - yv.exp() * total;
                    }
                }
            }
            Op::AddConst(x) | Op::Reshape(x) => axpy(slot(grads, *x, g.len()), g, 1.0),
            Op::SelectStep(x, t) => {
                let s = self.shape(*x);
                let (b, steps, f) = (s[0], s[1], s[2]);
                let gx = slot(grads, *x, b * steps * f);
                for i in 0..b {
                    let off = (i * steps + t) * f;
                    axpy(&mut gx[off..off + f], &g[i * f..(i + 1) * f], 1.0);
                }
            }
            Op::ConcatCols(parts) => {
                let (rows, total) = (node.value.shape()[0], node.value.shape()[1]);
                let mut offset = 0;
                for p in parts {
                    let c = self.shape(*p)[1];
                    if rg(p) {
                        let gp = slot(grads, *p, rows * c);
                        for r in 0..rows {
                            let src = &g[r * total + offset..r * total + offset + c];
                            axpy(&mut gp[r * c..(r + 1) * c], src, 1.0);
                        }
                    }
                    offset += c;
                }
            }
            Op::LayerNorm { x, inv_std } => {
                let (_, cols) = node.value.rows_cols();
                let n = cols as f64;
                let gx = slot(grads, *x, g.len());
                for (((yc, gc), oc), s) in y
                    .chunks(cols)
                    .zip(g.chunks(cols))
                    .zip(gx.chunks_mut(cols))
                    .zip(inv_std)
                {
                    let mean_g = gc.iter().sum::<f64>() / n;
                    let mean_gy = gc.iter().zip(yc).map(|(a, b)| a * b).sum::<f64>() / n;
                    for ((o, gv), yv) in oc.iter_mut().zip(gc).zip(yc) {
                        *o += s * (gv - mean_g - yv * mean_gy);
                    }
                }
            }
            Op::Sum(x) => {
                let len = self.value(*x).len();
                for o in slot(grads, *x, len).iter_mut() {
                    *o += g[0];
                }
            }
            Op::Mean(x) => {
                let len = self.value(*x).len();
                let d = g[0] / len as f64;
                for o in slot(grads, *x, len).iter_mut() {
                    *o += d;
                }
            }
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn axpy(dst: &mut [f64], src: &[f64], c: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += c * s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn sum_gives_ones() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[2, 3], &[1.0, -2.0, 3.0, 0.5, 0.0, 9.0]));
        let s = tape.sum(x).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn square_grad() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[1], &[3.0]));
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[6.0]);
    }

    #[test]
    fn leaf_reuse_accumulates() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[1], &[2.0]));
        let a = tape.scale(x, 3.0).unwrap();
        let b = tape.add(a, x).unwrap();
        tape.backward(b).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[4.0]);
    }

    #[test]
    fn backward_twice_rejected() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[1], &[2.0]));
        let s = tape.sum(x).unwrap();
        tape.backward(s).unwrap();
        assert!(matches!(tape.backward(s), Err(Error::TapeConsumed)));
        assert_eq!(tape.grad(x).unwrap(), &[1.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[2], &[2.0, 1.0]));
        assert!(matches!(tape.backward(x), Err(Error::NonScalarLoss(_))));
        assert!(matches!(
            Tape::new().backward(Var(0)),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn constants_get_no_grad() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[2], &[2.0, 1.0]));
        let c = tape.constant(t(&[2], &[5.0, 5.0]));
        let y = tape.mul(x, c).unwrap();
        let s = tape.sum(y).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[5.0, 5.0]);
        assert!(tape.grad(c).is_none());
    }

    #[test]
    fn overflow_is_reported() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[1], &[1e200]));
        let y = tape.mul(x, x);
        assert!(matches!(y, Err(Error::NumericInstability { op: "mul" })));
    }

    #[test]
    fn masked_softmax_zero_weight_and_grad() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[2, 2], &[0.3, 0.9, -1.0, 2.0]));
        let mask = Tensor::mask(vec![2, 2], vec![0.0, f64::NEG_INFINITY, 0.0, 0.0]).unwrap();
        let m = tape.add_mask(x, &mask).unwrap();
        let p = tape.softmax(m).unwrap();
        assert_eq!(tape.value(p).data()[0], 1.0);
        assert_eq!(tape.value(p).data()[1], 0.0);
        let w = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let y = tape.mul(p, w).unwrap();
        let s = tape.sum(y).unwrap();
        tape.backward(s).unwrap();
        let g = tape.grad(x).unwrap();
        assert_eq!(g[0], 0.0);
        assert_eq!(g[1], 0.0);
    }
}
