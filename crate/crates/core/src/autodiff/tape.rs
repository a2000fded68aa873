//! Reverse-mode tape over dense row-major tensors.
//!
//! Every op validates shapes, computes its output eagerly, rejects
//! non-finite results, and appends a record holding the input handles plus
//! whatever the backward rule needs. [`Tape::backward`] walks the records in
//! reverse exactly once.

use std::fmt;
use std::str::FromStr;

use super::{Gradients, ParamId, ParamSet, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Value {
    Owned(Tensor),
    Param(ParamId),
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatVec(Var, Var),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    MulRow(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Sqrt(Var),
    Neg(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sum(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    Softmax(Var, f64),
    SqDist(Var, Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Value,
    op: Op,
}

/// Op kinds addressable by name through [`Tape::apply`].
#[derive(Debug, Clone, PartialEq)]
pub enum OpKind {
    MatVec,
    MatMul,
    Add,
    Sub,
    ElementwiseMul,
    Sigmoid,
    Tanh,
    Exp,
    Negate,
    Scale(f64),
    Sum,
    Concat,
    RowSelect(Vec<usize>),
    SoftmaxWithTemperature(f64),
    SquaredEuclideanRows,
    CrossEntropyWithLogits(Vec<usize>),
}

impl FromStr for OpKind {
    type Err = Error;

    /// Parses `name` or `name:arg` (e.g. `scale:0.5`, `row-select:0,2`).
    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let bad = || Error::UnknownOp(s.to_string());
        let float = |a: Option<&str>| -> Result<f64> {
            a.ok_or_else(bad)?.trim().parse().map_err(|_| bad())
        };
        let ids = |a: Option<&str>| -> Result<Vec<usize>> {
            a.ok_or_else(bad)?
                .split(',')
                .map(|t| t.trim().parse().map_err(|_| bad()))
                .collect()
        };
        let plain = |k: OpKind| if arg.is_some() { Err(bad()) } else { Ok(k) };
        match name {
            "matvec" => plain(OpKind::MatVec),
            "matmul" => plain(OpKind::MatMul),
            "add" => plain(OpKind::Add),
            "sub" => plain(OpKind::Sub),
            "elementwise-mul" => plain(OpKind::ElementwiseMul),
            "sigmoid" => plain(OpKind::Sigmoid),
            "tanh" => plain(OpKind::Tanh),
            "exp" => plain(OpKind::Exp),
            "negate" => plain(OpKind::Negate),
            "sum" => plain(OpKind::Sum),
            "concat" => plain(OpKind::Concat),
            "squared-euclidean-rows" => plain(OpKind::SquaredEuclideanRows),
            "scale" => Ok(OpKind::Scale(float(arg)?)),
            "softmax-with-temperature" => Ok(OpKind::SoftmaxWithTemperature(float(arg)?)),
            "row-select" => Ok(OpKind::RowSelect(ids(arg)?)),
            "cross-entropy-with-logits" => Ok(OpKind::CrossEntropyWithLogits(ids(arg)?)),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            OpKind::MatVec => "matvec",
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::ElementwiseMul => "elementwise-mul",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Tanh => "tanh",
            OpKind::Exp => "exp",
            OpKind::Negate => "negate",
            OpKind::Scale(_) => "scale",
            OpKind::Sum => "sum",
            OpKind::Concat => "concat",
            OpKind::RowSelect(_) => "row-select",
            OpKind::SoftmaxWithTemperature(_) => "softmax-with-temperature",
            OpKind::SquaredEuclideanRows => "squared-euclidean-rows",
            OpKind::CrossEntropyWithLogits(_) => "cross-entropy-with-logits",
        };
        f.write_str(name)
    }
}

/// Recording context for one forward/backward pass.
///
/// Parameters are referenced, not copied; the tape borrows the
/// [`ParamSet`] for its whole lifetime.
pub struct Tape<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
    recording: bool,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
            recording: true,
        }
    }

    /// Forward-only tape; [`Tape::backward`] refuses it.
    pub fn inference(params: &'p ParamSet) -> Self {
        Tape {
            recording: false,
            ..Tape::new(params)
        }
    }

    /// Whether gradients may be taken through this tape.
    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf for a parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Result<Var> {
        let slot = self
            .param_vars
            .get(id.0)
            .ok_or_else(|| Error::BrokenTape(format!("parameter {} not in this set", id.0)))?;
        if let Some(v) = slot {
            return Ok(*v);
        }
        let var = Var(self.nodes.len());
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Leaf,
        });
        self.param_vars[id.0] = Some(var);
        Ok(var)
    }

    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        self.push(t, Op::Leaf, "constant")
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.params.value(*id),
        }
    }

    fn val(&self, v: Var) -> Result<&Tensor> {
        if v.0 >= self.nodes.len() {
            return Err(Error::BrokenTape(format!("node {} does not exist", v.0)));
        }
        Ok(self.value(v))
    }

    fn push(&mut self, t: Tensor, op: Op, name: &'static str) -> Result<Var> {
        if !t.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        self.nodes.push(Node {
            value: Value::Owned(t),
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(&Tensor, &Tensor)> {
        let (x, y) = (self.val(a)?, self.val(b)?);
        if x.shape() != y.shape() {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", x.shape(), y.shape()),
            ));
        }
        Ok((x, y))
    }

    fn zip_with(
        &mut self,
        op: Op,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let (x, y) = self.same_shape(name, a, b)?;
        let data = x
            .data()
            .iter()
            .zip(y.data())
            .map(|(&p, &q)| f(p, q))
            .collect();
        let t = Tensor::from_parts(x.shape().to_vec(), data);
        self.push(t, op, name)
    }

    fn map(&mut self, op: Op, name: &'static str, a: Var, f: impl Fn(f64) -> f64) -> Result<Var> {
        let x = self.val(a)?;
        let t = Tensor::from_parts(x.shape().to_vec(), x.data().iter().map(|&v| f(v)).collect());
        self.push(t, op, name)
    }

    fn as_matrix(&self, op: &'static str, v: Var) -> Result<(&Tensor, usize, usize)> {
        let t = self.val(v)?;
        if t.shape().len() > 2 {
            return Err(Error::shape(
                op,
                format!("expected a matrix, got {:?}", t.shape()),
            ));
        }
        Ok((t, t.rows(), t.cols()))
    }

    /// `W x` for `W: [m, n]`, `x: [n]`.
    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let (wt, m, n) = self.as_matrix("matvec", w)?;
        let xt = self.val(x)?;
        if wt.shape().len() != 2 || xt.shape() != [n] {
            return Err(Error::shape(
                "matvec",
                format!("{:?} x {:?}", wt.shape(), xt.shape()),
            ));
        }
        let mut out = vec![0.0; m];
        gemm(
            m,
            n,
            1,
            wt.data(),
            (n, 1),
            xt.data(),
            (1, 1),
            0.0,
            &mut out,
            (1, 1),
        );
        self.push(Tensor::from_parts(vec![m], out), Op::MatVec(w, x), "matvec")
    }

    /// `a b` for `a: [m, k]`, `b: [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (at, m, k) = self.as_matrix("matmul", a)?;
        let (bt, k2, n) = self.as_matrix("matmul", b)?;
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?}", at.shape(), bt.shape()),
            ));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            at.data(),
            (k, 1),
            bt.data(),
            (n, 1),
            0.0,
            &mut out,
            (n, 1),
        );
        self.push(
            Tensor::from_parts(vec![m, n], out),
            Op::MatMul(a, b),
            "matmul",
        )
    }

    /// `a bᵀ` for `a: [m, k]`, `b: [n, k]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (at, m, k) = self.as_matrix("matmul_nt", a)?;
        let (bt, n, k2) = self.as_matrix("matmul_nt", b)?;
        if k != k2 {
            return Err(Error::shape(
                "matmul_nt",
                format!("{:?} x {:?}ᵀ", at.shape(), bt.shape()),
            ));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            at.data(),
            (k, 1),
            bt.data(),
            (1, k),
            0.0,
            &mut out,
            (n, 1),
        );
        self.push(
            Tensor::from_parts(vec![m, n], out),
            Op::MatMulNt(a, b),
            "matmul_nt",
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(Op::Add(a, b), "add", a, b, |p, q| p + q)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(Op::Sub(a, b), "sub", a, b, |p, q| p - q)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(Op::Mul(a, b), "mul", a, b, |p, q| p * q)
    }

    fn broadcast_row(
        &mut self,
        name: &'static str,
        x: Var,
        b: Var,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let (xt, _, c) = self.as_matrix(name, x)?;
        let bt = self.val(b)?;
        if bt.len() != c || bt.rows() != 1 {
            return Err(Error::shape(
                name,
                format!("{:?} with row {:?}", xt.shape(), bt.shape()),
            ));
        }
        let row = bt.data();
        let data = xt
            .data()
            .chunks_exact(c)
            .flat_map(|r| r.iter().zip(row).map(|(&v, &w)| f(v, w)))
            .collect();
        let t = Tensor::from_parts(xt.shape().to_vec(), data);
        self.push(t, op, name)
    }

    /// Row-wise `x + b` with `b` broadcast over rows.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        self.broadcast_row("add_bias", x, b, Op::AddBias(x, b), |v, w| v + w)
    }

    /// Row-wise `x ⊙ p` with `p` broadcast over rows.
    pub fn mul_row(&mut self, x: Var, p: Var) -> Result<Var> {
        self.broadcast_row("mul_row", x, p, Op::MulRow(x, p), |v, w| v * w)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.map(Op::Sigmoid(a), "sigmoid", a, sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.map(Op::Tanh(a), "tanh", a, f64::tanh)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.map(Op::Exp(a), "exp", a, f64::exp)
    }

    /// Elementwise square root; the derivative at exactly zero is taken as 0.
    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        let x = self.val(a)?;
        if x.data().iter().any(|&v| v < 0.0) {
            return Err(Error::NonFinite { op: "sqrt" });
        }
        self.map(Op::Sqrt(a), "sqrt", a, f64::sqrt)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.map(Op::Neg(a), "negate", a, |v| -v)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.map(Op::Scale(a, s), "scale", a, |v| v * s)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        self.map(Op::AddScalar(a), "add_scalar", a, |v| v + s)
    }

    /// `1 - a`, elementwise.
    pub fn one_minus(&mut self, a: Var) -> Result<Var> {
        let n = self.neg(a)?;
        self.add_scalar(n, 1.0)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.val(a)?.data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), "sum")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat_cols", "no inputs"))?;
        let rows = self.as_matrix("concat_cols", *first)?.1;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (_, r, c) = self.as_matrix("concat_cols", p)?;
            if r != rows {
                return Err(Error::shape(
                    "concat_cols",
                    format!("row counts {rows} vs {r}"),
                ));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let shape = if self.value(*first).shape().len() == 1 {
            vec![total]
        } else {
            vec![rows, total]
        };
        self.push(
            Tensor::from_parts(shape, out),
            Op::ConcatCols(parts.to_vec()),
            "concat_cols",
        )
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat_rows", "no inputs"))?;
        let cols = self.as_matrix("concat_rows", *first)?.2;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (t, r, c) = self.as_matrix("concat_rows", p)?;
            if c != cols {
                return Err(Error::shape(
                    "concat_rows",
                    format!("column counts {cols} vs {c}"),
                ));
            }
            rows += r;
            out.extend_from_slice(t.data());
        }
        self.push(
            Tensor::from_parts(vec![rows, cols], out),
            Op::ConcatRows(parts.to_vec()),
            "concat_rows",
        )
    }

    /// Rows `start..start + len`.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (t, r, c) = self.as_matrix("slice_rows", x)?;
        if len == 0 || start + len > r {
            return Err(Error::shape(
                "slice_rows",
                format!("{start}+{len} of {r} rows"),
            ));
        }
        let data = t.data()[start * c..(start + len) * c].to_vec();
        self.push(
            Tensor::from_parts(vec![len, c], data),
            Op::SliceRows(x, start),
            "slice_rows",
        )
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (t, r, c) = self.as_matrix("slice_cols", x)?;
        if len == 0 || start + len > c {
            return Err(Error::shape(
                "slice_cols",
                format!("{start}+{len} of {c} columns"),
            ));
        }
        let data = t
            .data()
            .chunks_exact(c)
            .flat_map(|row| &row[start..start + len])
            .copied()
            .collect();
        let shape = if t.shape().len() == 1 {
            vec![len]
        } else {
            vec![r, len]
        };
        self.push(
            Tensor::from_parts(shape, data),
            Op::SliceCols(x, start),
            "slice_cols",
        )
    }

    /// Row selection (`row-select`); indices may repeat.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (t, r, c) = self.as_matrix("row_select", x)?;
        if idx.is_empty() {
            return Err(Error::shape("row_select", "no rows selected"));
        }
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= r {
                return Err(Error::shape("row_select", format!("row {i} of {r}")));
            }
            data.extend_from_slice(&t.data()[i * c..(i + 1) * c]);
        }
        self.push(
            Tensor::from_parts(vec![idx.len(), c], data),
            Op::GatherRows(x, idx.to_vec()),
            "row_select",
        )
    }

    /// Row-wise `softmax(x / tau)`, max-subtracted.
    pub fn softmax(&mut self, x: Var, tau: f64) -> Result<Var> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "temperature must be positive, got {tau}"
            )));
        }
        let t = self.val(x)?;
        if t.shape().len() > 2 {
            return Err(Error::shape("softmax", format!("{:?}", t.shape())));
        }
        let c = t.cols();
        let mut out = Vec::with_capacity(t.len());
        for row in t.data().chunks_exact(c) {
            out.extend(softmax_row(row, tau));
        }
        self.push(
            Tensor::from_parts(t.shape().to_vec(), out),
            Op::Softmax(x, tau),
            "softmax",
        )
    }

    /// Pairwise squared distances between the rows of `u: [n, d]` and the
    /// columns of `s: [d, k]`, giving `[n, k]`.
    pub fn sq_dist(&mut self, u: Var, s: Var) -> Result<Var> {
        let (ut, n, d) = self.as_matrix("sq_dist", u)?;
        let (st, d2, k) = self.as_matrix("sq_dist", s)?;
        if d != d2 || st.shape().len() != 2 {
            return Err(Error::shape(
                "sq_dist",
                format!("{:?} vs {:?}", ut.shape(), st.shape()),
            ));
        }
        let mut out = vec![0.0; n * k];
        for i in 0..n {
            let row = ut.row(i);
            for (r, &uv) in row.iter().enumerate() {
                let srow = &st.data()[r * k..(r + 1) * k];
                let o = &mut out[i * k..(i + 1) * k];
                for (acc, &sv) in o.iter_mut().zip(srow) {
                    let diff = uv - sv;
                    *acc += diff * diff;
                }
            }
        }
        self.push(
            Tensor::from_parts(vec![n, k], out),
            Op::SqDist(u, s),
            "sq_dist",
        )
    }

    /// Mean over rows of `logsumexp(row) - row[target]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (t, n, c) = self.as_matrix("cross_entropy", logits)?;
        if targets.len() != n {
            return Err(Error::shape(
                "cross_entropy",
                format!("{n} rows, {} targets", targets.len()),
            ));
        }
        let mut probs = Vec::with_capacity(n * c);
        let mut loss = 0.0;
        for (row, &y) in t.data().chunks_exact(c).zip(targets) {
            if y >= c {
                return Err(Error::shape(
                    "cross_entropy",
                    format!("target {y} of {c} classes"),
                ));
            }
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
            loss += z.ln() + max - row[y];
            probs.extend(row.iter().map(|v| (v - max).exp() / z));
        }
        let op = Op::CrossEntropy {
            logits,
            targets: targets.to_vec(),
            probs,
        };
        self.push(Tensor::scalar(loss / n as f64), op, "cross_entropy")
    }

    /// Name-addressed dispatch over the core op set.
    pub fn apply(&mut self, kind: &OpKind, inputs: &[Var]) -> Result<Var> {
        let arity = |n: usize| -> Result<()> {
            if inputs.len() == n {
                Ok(())
            } else {
                Err(Error::shape(
                    "apply",
                    format!("{kind} takes {n} inputs, got {}", inputs.len()),
                ))
            }
        };
        match kind {
            OpKind::MatVec => arity(2).and_then(|_| self.matvec(inputs[0], inputs[1])),
            OpKind::MatMul => arity(2).and_then(|_| self.matmul(inputs[0], inputs[1])),
            OpKind::Add => arity(2).and_then(|_| self.add(inputs[0], inputs[1])),
            OpKind::Sub => arity(2).and_then(|_| self.sub(inputs[0], inputs[1])),
            OpKind::ElementwiseMul => arity(2).and_then(|_| self.mul(inputs[0], inputs[1])),
            OpKind::Sigmoid => arity(1).and_then(|_| self.sigmoid(inputs[0])),
            OpKind::Tanh => arity(1).and_then(|_| self.tanh(inputs[0])),
            OpKind::Exp => arity(1).and_then(|_| self.exp(inputs[0])),
            OpKind::Negate => arity(1).and_then(|_| self.neg(inputs[0])),
            OpKind::Scale(s) => arity(1).and_then(|_| self.scale(inputs[0], *s)),
            OpKind::Sum => arity(1).and_then(|_| self.sum(inputs[0])),
            OpKind::Concat => self.concat_cols(inputs),
            OpKind::RowSelect(idx) => arity(1).and_then(|_| self.gather_rows(inputs[0], idx)),
            OpKind::SoftmaxWithTemperature(tau) => {
                arity(1).and_then(|_| self.softmax(inputs[0], *tau))
            }
            OpKind::SquaredEuclideanRows => {
                arity(2).and_then(|_| self.sq_dist(inputs[0], inputs[1]))
            }
            OpKind::CrossEntropyWithLogits(t) => {
                arity(1).and_then(|_| self.cross_entropy(inputs[0], t))
            }
        }
    }

    /// Propagates d`loss`/d(node) back to every parameter leaf.
    ///
    /// Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        if !self.recording {
            return Err(Error::BrokenTape("backward on an inference tape".into()));
        }
        let lt = self.val(loss)?;
        if lt.len() != 1 {
            return Err(Error::NonScalarLoss(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut out: Vec<Option<Vec<f64>>> = vec![None; self.params.len()];

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let y = self.value(Var(i));
            match &node.op {
                Op::Leaf => {
                    if let Value::Param(id) = node.value {
                        out[id.0] = Some(g);
                    }
                }
                Op::MatVec(w, x) => {
                    let (wt, xt) = (self.value(*w), self.value(*x));
                    let (m, n) = (wt.rows(), wt.cols());
                    let gw = slot(&mut grads, *w, m * n);
                    gemm(m, 1, n, &g, (1, 1), xt.data(), (1, 1), 1.0, gw, (n, 1));
                    let gx = slot(&mut grads, *x, n);
                    gemm(n, m, 1, wt.data(), (1, n), &g, (1, 1), 1.0, gx, (1, 1));
                }
                Op::MatMul(a, b) => {
                    let (at, bt) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (at.rows(), at.cols(), bt.cols());
                    let ga = slot(&mut grads, *a, m * k);
                    gemm(m, n, k, &g, (n, 1), bt.data(), (1, n), 1.0, ga, (k, 1));
                    let gb = slot(&mut grads, *b, k * n);
                    gemm(k, m, n, at.data(), (1, k), &g, (n, 1), 1.0, gb, (n, 1));
                }
                Op::MatMulNt(a, b) => {
                    let (at, bt) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (at.rows(), at.cols(), bt.rows());
                    let ga = slot(&mut grads, *a, m * k);
                    gemm(m, n, k, &g, (n, 1), bt.data(), (k, 1), 1.0, ga, (k, 1));
                    let gb = slot(&mut grads, *b, n * k);
                    gemm(n, m, k, &g, (1, n), at.data(), (k, 1), 1.0, gb, (k, 1));
                }
                Op::Add(a, b) => {
                    axpy(slot(&mut grads, *a, g.len()), &g, 1.0);
                    axpy(slot(&mut grads, *b, g.len()), &g, 1.0);
                }
                Op::Sub(a, b) => {
                    axpy(slot(&mut grads, *a, g.len()), &g, 1.0);
                    axpy(slot(&mut grads, *b, g.len()), &g, -1.0);
                }
                Op::Mul(a, b) => {
                    let (at, bt) = (self.value(*a), self.value(*b));
                    let ga = slot(&mut grads, *a, g.len());
                    for ((acc, gv), bv) in ga.iter_mut().zip(&g).zip(bt.data()) {
                        *acc += gv * bv;
                    }
                    let gb = slot(&mut grads, *b, g.len());
                    for ((acc, gv), av) in gb.iter_mut().zip(&g).zip(at.data()) {
                        *acc += gv * av;
                    }
                }
                Op::AddBias(x, b) => {
                    let c = self.value(*b).len();
                    axpy(slot(&mut grads, *x, g.len()), &g, 1.0);
                    let gb = slot(&mut grads, *b, c);
                    for row in g.chunks_exact(c) {
                        axpy(gb, row, 1.0);
                    }
                }
                Op::MulRow(x, p) => {
                    let (xt, pt) = (self.value(*x), self.value(*p));
                    let c = pt.len();
                    let gx = slot(&mut grads, *x, g.len());
                    for (grow, acc) in g.chunks_exact(c).zip(gx.chunks_exact_mut(c)) {
                        for ((a, gv), pv) in acc.iter_mut().zip(grow).zip(pt.data()) {
                            *a += gv * pv;
                        }
                    }
                    let gp = slot(&mut grads, *p, c);
                    for (grow, xrow) in g.chunks_exact(c).zip(xt.data().chunks_exact(c)) {
                        for ((a, gv), xv) in gp.iter_mut().zip(grow).zip(xrow) {
                            *a += gv * xv;
                        }
                    }
                }
                Op::Sigmoid(a) => {
                    let ga = slot(&mut grads, *a, g.len());
                    for ((acc, gv), yv) in ga.iter_mut().zip(&g).zip(y.data()) {
                        *acc += gv * yv * (1.0 - yv);
                    }
                }
                Op::Tanh(a) => {
                    let ga = slot(&mut grads, *a, g.len());
                    for ((acc, gv), yv) in ga.iter_mut().zip(&g).zip(y.data()) {
                        *acc += gv * (1.0 - yv * yv);
                    }
                }
                Op::Exp(a) => {
                    let ga = slot(&mut grads, *a, g.len());
                    for ((acc, gv), yv) in ga.iter_mut().zip(&g).zip(y.data()) {
                        *acc += gv * yv;
                    }
                }
                Op::Sqrt(a) => {
                    let ga = slot(&mut grads, *a, g.len());
                    for ((acc, gv), yv) in ga.iter_mut().zip(&g).zip(y.data()) {
                        if *yv > 0.0 {
                            *acc += gv / (2.0 * yv);
                        }
                    }
                }
                Op::Neg(a) => axpy(slot(&mut grads, *a, g.len()), &g, -1.0),
                Op::Scale(a, s) => axpy(slot(&mut grads, *a, g.len()), &g, *s),
                Op::AddScalar(a) => axpy(slot(&mut grads, *a, g.len()), &g, 1.0),
                Op::Sum(a) => {
                    let n = self.value(*a).len();
                    slot(&mut grads, *a, n).iter_mut().for_each(|v| *v += g[0]);
                }
                Op::ConcatCols(parts) => {
                    let rows = y.rows();
                    let total = y.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        let gp = slot(&mut grads, p, rows * w);
                        for r in 0..rows {
                            axpy(
                                &mut gp[r * w..(r + 1) * w],
                                &g[r * total + offset..r * total + offset + w],
                                1.0,
                            );
                        }
                        offset += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.value(p).len();
                        axpy(slot(&mut grads, p, n), &g[offset..offset + n], 1.0);
                        offset += n;
                    }
                }
                Op::SliceRows(x, start) => {
                    let xt = self.value(*x);
                    let c = xt.cols();
                    let gx = slot(&mut grads, *x, xt.len());
                    axpy(&mut gx[start * c..start * c + g.len()], &g, 1.0);
                }
                Op::SliceCols(x, start) => {
                    let xt = self.value(*x);
                    let c = xt.cols();
                    let w = y.cols();
                    let gx = slot(&mut grads, *x, xt.len());
                    for (grow, acc) in g.chunks_exact(w).zip(gx.chunks_exact_mut(c)) {
                        axpy(&mut acc[*start..start + w], grow, 1.0);
                    }
                }
                Op::GatherRows(x, idx) => {
                    let xt = self.value(*x);
                    let c = xt.cols();
                    let gx = slot(&mut grads, *x, xt.len());
                    for (grow, &i) in g.chunks_exact(c).zip(idx) {
                        axpy(&mut gx[i * c..(i + 1) * c], grow, 1.0);
                    }
                }
                Op::Softmax(x, tau) => {
                    let c = y.cols();
                    let gx = slot(&mut grads, *x, g.len());
                    for ((grow, yrow), acc) in g
                        .chunks_exact(c)
                        .zip(y.data().chunks_exact(c))
                        .zip(gx.chunks_exact_mut(c))
                    {
                        let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                        for ((a, gv), yv) in acc.iter_mut().zip(grow).zip(yrow) {
                            *a += yv * (gv - dot) / tau;
                        }
                    }
                }
                Op::SqDist(u, s) => {
                    let (ut, st) = (self.value(*u), self.value(*s));
                    let (n, d, k) = (ut.rows(), ut.cols(), st.cols());
                    let mut gu = vec![0.0; n * d];
                    let mut gs = vec![0.0; d * k];
                    for i in 0..n {
                        let grow = &g[i * k..(i + 1) * k];
                        for r in 0..d {
                            let uv = ut.data()[i * d + r];
                            let srow = &st.data()[r * k..(r + 1) * k];
                            let gsrow = &mut gs[r * k..(r + 1) * k];
                            let mut acc = 0.0;
                            for ((gv, sv), gsv) in grow.iter().zip(srow).zip(gsrow.iter_mut()) {
                                let t = 2.0 * gv * (uv - sv);
                                acc += t;
                                *gsv -= t;
                            }
                            gu[i * d + r] = acc;
                        }
                    }
                    axpy(slot(&mut grads, *u, n * d), &gu, 1.0);
                    axpy(slot(&mut grads, *s, d * k), &gs, 1.0);
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                } => {
                    let n = targets.len();
                    let c = probs.len() / n;
                    let scale = g[0] / n as f64;
                    let gl = slot(&mut grads, *logits, probs.len());
                    for (r, &t) in targets.iter().enumerate() {
                        for j in 0..c {
                            let onehot = if j == t { 1.0 } else { 0.0 };
                            gl[r * c + j] += scale * (probs[r * c + j] - onehot);
                        }
                    }
                }
            }
        }
        Ok(Gradients { per_param: out })
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn axpy(acc: &mut [f64], x: &[f64], a: f64) {
    for (y, v) in acc.iter_mut().zip(x) {
        *y += a * v;
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-subtracted `softmax(row / tau)`.
pub(crate) fn softmax_row(row: &[f64], tau: f64) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| ((v - max) / tau).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// `c = a·b + beta·c` on strided row-major views; strides are `(row, col)`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_stride: (usize, usize),
    b: &[f64],
    b_stride: (usize, usize),
    beta: f64,
    c: &mut [f64],
    c_stride: (usize, usize),
) {
    let extent = |rows: usize, cols: usize, (rs, cs): (usize, usize)| {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * rs + (cols - 1) * cs + 1
        }
    };
    assert!(a.len() >= extent(m, k, a_stride));
    assert!(b.len() >= extent(k, n, b_stride));
    assert!(c.len() >= extent(m, n, c_stride));
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_stride.0 as isize,
            a_stride.1 as isize,
            b.as_ptr(),
            b_stride.0 as isize,
            b_stride.1 as isize,
            beta,
            c.as_mut_ptr(),
            c_stride.0 as isize,
            c_stride.1 as isize,
        );
    }
}
