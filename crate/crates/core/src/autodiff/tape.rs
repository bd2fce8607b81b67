use super::gemm::{gemm, View};
use super::params::ParamStore;
use super::{AutodiffError, Tensor};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Gelu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Ln(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    Reshape(Var),
    SelectCols { src: Var, start: usize },
    ConcatCols(Vec<Var>),
    PermuteCols(Var, Vec<usize>),
    SelectStep { src: Var, t: usize },
    StackSteps(Vec<Var>),
    Conv1d(Box<ConvSaved>),
    RowMap(Box<RowMapSaved>),
}

#[derive(Debug)]
struct ConvSaved {
    x: Var,
    w: Var,
    b: Var,
    stride: usize,
    pad_left: usize,
    k: usize,
    len_out: usize,
    cols: Vec<f64>,
}

#[derive(Debug)]
struct RowMapSaved {
    x: Var,
    params: Var,
    /// `[rows, n_out, 1 + n_params]` local Jacobian.
    jac: Vec<f64>,
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Reverse-mode computation graph.
///
/// Nodes are appended in evaluation order, so the tape is acyclic by
/// construction and the reverse sweep is a single backwards pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    bindings: Vec<(String, Var)>,
}

/// Counters produced by a backward sweep.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Diagnostics {
    /// Number of non-finite gradient components observed on any node.
    pub non_finite: usize,
    /// Number of non-finite forward values on nodes the sweep passed through.
    pub non_finite_values: usize,
}

/// Gradients of one scalar output with respect to every upstream node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    pub diagnostics: Diagnostics,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v`, or zeros when `v` does not influence the output.
    pub fn get_or_zeros(&self, tape: &Tape, v: Var) -> Vec<f64> {
        self.get(v)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; tape.value(v).len()])
    }
}

fn shape_err(msg: impl Into<String>) -> AutodiffError {
    AutodiffError::Shape(msg.into())
}

pub(crate) fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Padding applied on the left so that `len_out = ceil(len / stride)`.
pub fn conv_padding(len: usize, kernel: usize, stride: usize) -> (usize, usize) {
    let len_out = len.div_ceil(stride);
    let needed = ((len_out - 1) * stride + kernel).saturating_sub(len);
    (needed / 2, len_out)
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

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Input that does not receive gradients.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Free input that receives gradients.
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Bind a named parameter. Frozen entries enter the graph as constants.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var, AutodiffError> {
        let entry = store
            .entry(name)
            .ok_or_else(|| AutodiffError::UnknownParam(name.to_string()))?;
        let frozen = entry.frozen;
        let v = self.push(entry.value.clone(), Op::Leaf, !frozen);
        if !frozen {
            self.bindings.push((name.to_string(), v));
        }
        Ok(v)
    }

    /// Trainable parameters bound on this tape, in binding order.
    pub fn bindings(&self) -> &[(String, Var)] {
        &self.bindings
    }

    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<(), AutodiffError> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(format!(
                "{op}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn zip(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = Tensor::new(self.shape(a), data).expect("shape preserved");
        let ng = self.ng(a) || self.ng(b);
        self.push(t, op, ng)
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let data = self.value(a).data().iter().map(|&x| f(x)).collect();
        let t = Tensor::new(self.shape(a), data).expect("shape preserved");
        let ng = self.ng(a);
        self.push(t, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape(a, b, "add")?;
        Ok(self.zip(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape(a, b, "sub")?;
        Ok(self.zip(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape(a, b, "mul")?;
        Ok(self.zip(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    /// `a[..., n] + row[n]`, broadcasting the row over the leading axes.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, AutodiffError> {
        let n = self.value(a).last_dim();
        if self.value(row).len() != n {
            return Err(shape_err(format!(
                "add_row: {:?} with row {:?}",
                self.shape(a),
                self.shape(row)
            )));
        }
        let r = self.value(row).data().to_vec();
        let mut t = self.value(a).clone();
        for chunk in t.data_mut().chunks_mut(n) {
            for (x, y) in chunk.iter_mut().zip(&r) {
                *x += y;
            }
        }
        let ng = self.ng(a) || self.ng(row);
        Ok(self.push(t, Op::AddRow(a, row), ng))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.map(a, Op::Scale(a, c), |x| x * c)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.map(a, Op::AddScalar(a), |x| x + c)
    }

    /// `1 - a`.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.add_scalar(neg, 1.0)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        self.map(a, Op::Gelu(a), gelu_scalar)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, Op::Tanh(a), f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, Op::Exp(a), f64::exp)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.map(a, Op::Ln(a), f64::ln)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.map(a, Op::Square(a), |x| x * x)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Mean(a), ng)
    }

    /// Sum over the last axis: `[m, n] -> [m]`.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let n = t.last_dim();
        let data: Vec<f64> = t.data().chunks(n).map(|c| c.iter().sum()).collect();
        let m = data.len();
        let ng = self.ng(a);
        self.push(
            Tensor::new(&[m], data).expect("row sums"),
            Op::RowSum(a),
            ng,
        )
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        let t = self.value(a).clone().reshaped(shape)?;
        let ng = self.ng(a);
        Ok(self.push(t, Op::Reshape(a), ng))
    }

    /// `a[m, k] · b[k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err(format!("matmul: {sa:?} · {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            1.0,
            View::rows(self.value(a).data(), k),
            View::rows(self.value(b).data(), n),
            0.0,
            &mut out,
            n,
            1,
        );
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::new(&[m, n], out)?, Op::MatMul(a, b), ng))
    }

    /// `x[..., k] · w[n, k]ᵀ -> [..., n]` (dense-layer product).
    pub fn matmul_t(&mut self, x: Var, w: Var) -> Result<Var, AutodiffError> {
        let k = self.value(x).last_dim();
        let sw = self.shape(w);
        if sw.len() != 2 || sw[1] != k || self.value(x).rank() == 0 {
            return Err(shape_err(format!(
                "matmul_t: {:?} · {:?}ᵀ",
                self.shape(x),
                sw
            )));
        }
        let n = sw[0];
        let m = self.value(x).leading();
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            1.0,
            View::rows(self.value(x).data(), k),
            View::trans(self.value(w).data(), k),
            0.0,
            &mut out,
            n,
            1,
        );
        let mut shape = self.shape(x).to_vec();
        *shape.last_mut().expect("rank ≥ 1") = n;
        let ng = self.ng(x) || self.ng(w);
        Ok(self.push(Tensor::new(&shape, out)?, Op::MatMulT(x, w), ng))
    }

    /// Columns `start..start + len` of a `[m, n]` array.
    pub fn select_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let s = self.shape(a);
        if s.len() != 2 || start + len > s[1] {
            return Err(shape_err(format!("select_cols {start}+{len} of {s:?}")));
        }
        let (m, n) = (s[0], s[1]);
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(m * len);
        for r in 0..m {
            out.extend_from_slice(&src[r * n + start..r * n + start + len]);
        }
        let ng = self.ng(a);
        Ok(self.push(
            Tensor::new(&[m, len], out)?,
            Op::SelectCols { src: a, start },
            ng,
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let m = match parts.first() {
            Some(&p) => self.shape(p).first().copied().unwrap_or(0),
            None => return Err(shape_err("concat_cols of nothing")),
        };
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 || s[0] != m {
                return Err(shape_err(format!("concat_cols: part {s:?}, rows {m}")));
            }
            widths.push(s[1]);
        }
        let n: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * n);
        for r in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(
            Tensor::new(&[m, n], out)?,
            Op::ConcatCols(parts.to_vec()),
            ng,
        ))
    }

    /// `out[:, j] = a[:, perm[j]]`.
    pub fn permute_cols(&mut self, a: Var, perm: &[usize]) -> Result<Var, AutodiffError> {
        let s = self.shape(a);
        if s.len() != 2 || perm.len() != s[1] {
            return Err(shape_err(format!("permute_cols {perm:?} of {s:?}")));
        }
        let mut seen = vec![false; perm.len()];
        for &p in perm {
            if p >= perm.len() || std::mem::replace(&mut seen[p], true) {
                return Err(AutodiffError::Contract(format!(
                    "{perm:?} is not a permutation"
                )));
            }
        }
        let n = s[1];
        let src = self.value(a).data();
        let out: Vec<f64> = src
            .chunks(n)
            .flat_map(|row| perm.iter().map(move |&p| row[p]))
            .collect();
        let shape = s.to_vec();
        let ng = self.ng(a);
        Ok(self.push(
            Tensor::new(&shape, out)?,
            Op::PermuteCols(a, perm.to_vec()),
            ng,
        ))
    }

    /// Step `t` of a `[batch, len, feat]` sequence.
    pub fn select_step(&mut self, a: Var, t: usize) -> Result<Var, AutodiffError> {
        let s = self.shape(a);
        if s.len() != 3 || t >= s[1] {
            return Err(shape_err(format!("select_step {t} of {s:?}")));
        }
        let (b, l, f) = (s[0], s[1], s[2]);
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(b * f);
        for i in 0..b {
            let off = (i * l + t) * f;
            out.extend_from_slice(&src[off..off + f]);
        }
        let ng = self.ng(a);
        Ok(self.push(Tensor::new(&[b, f], out)?, Op::SelectStep { src: a, t }, ng))
    }

    /// Stack `[batch, feat]` steps into `[batch, len, feat]`.
    pub fn stack_steps(&mut self, steps: &[Var]) -> Result<Var, AutodiffError> {
        let first = *steps
            .first()
            .ok_or_else(|| shape_err("stack_steps of nothing"))?;
        let s = self.shape(first).to_vec();
        if s.len() != 2 || steps.iter().any(|&v| self.shape(v) != s.as_slice()) {
            return Err(shape_err("stack_steps: mismatched steps"));
        }
        let (b, f, l) = (s[0], s[1], steps.len());
        let mut out = vec![0.0; b * l * f];
        for (t, &v) in steps.iter().enumerate() {
            let src = self.value(v).data();
            for i in 0..b {
                out[(i * l + t) * f..(i * l + t + 1) * f].copy_from_slice(&src[i * f..(i + 1) * f]);
            }
        }
        let ng = steps.iter().any(|&v| self.ng(v));
        Ok(self.push(
            Tensor::new(&[b, l, f], out)?,
            Op::StackSteps(steps.to_vec()),
            ng,
        ))
    }

    /// 1-D cross-correlation: `x[batch, c_in, len]`, `w[c_out, c_in, k]`,
    /// `b[c_out]`, zero padded so that `len_out = ceil(len / stride)`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, stride: usize) -> Result<Var, AutodiffError> {
        if stride < 1 {
            return Err(AutodiffError::Contract("conv1d stride must be ≥ 1".into()));
        }
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        if sx.len() != 3 || sw.len() != 3 || sx[1] != sw[1] || self.value(b).len() != sw[0] {
            return Err(shape_err(format!(
                "conv1d: x {sx:?}, w {sw:?}, b {:?}",
                self.shape(b)
            )));
        }
        let (batch, c_in, len) = (sx[0], sx[1], sx[2]);
        let (c_out, k) = (sw[0], sw[2]);
        if len < k {
            return Err(AutodiffError::Contract(format!(
                "conv1d: sequence length {len} shorter than kernel {k}"
            )));
        }
        let (pad_left, len_out) = conv_padding(len, k, stride);
        let ck = c_in * k;
        let xs = self.value(x).data();
        let mut cols = vec![0.0; batch * len_out * ck];
        for bi in 0..batch {
            for o in 0..len_out {
                let row = &mut cols[(bi * len_out + o) * ck..(bi * len_out + o + 1) * ck];
                for ci in 0..c_in {
                    for kk in 0..k {
                        let pos = (o * stride + kk) as isize - pad_left as isize;
                        if pos >= 0 && (pos as usize) < len {
                            row[ci * k + kk] = xs[(bi * c_in + ci) * len + pos as usize];
                        }
                    }
                }
            }
        }
        let mut out = vec![0.0; batch * c_out * len_out];
        let ws = self.value(w).data();
        for bi in 0..batch {
            gemm(
                len_out,
                ck,
                c_out,
                1.0,
                View::rows(&cols[bi * len_out * ck..(bi + 1) * len_out * ck], ck),
                View::trans(ws, ck),
                0.0,
                &mut out[bi * c_out * len_out..(bi + 1) * c_out * len_out],
                1,
                len_out,
            );
        }
        let bias = self.value(b).data();
        for bi in 0..batch {
            for (co, &bv) in bias.iter().enumerate() {
                let off = (bi * c_out + co) * len_out;
                for v in &mut out[off..off + len_out] {
                    *v += bv;
                }
            }
        }
        let ng = self.ng(x) || self.ng(w) || self.ng(b);
        let saved = ConvSaved {
            x,
            w,
            b,
            stride,
            pad_left,
            k,
            len_out,
            cols,
        };
        Ok(self.push(
            Tensor::new(&[batch, c_out, len_out], out)?,
            Op::Conv1d(Box::new(saved)),
            ng,
        ))
    }

    /// Row-local map with a caller-supplied Jacobian.
    ///
    /// Row `r` of the output (`n_out` values) is a function of `x[r]` and
    /// `params[r, :]`; `jac` holds `[rows, n_out, 1 + n_params]` partials.
    pub fn row_map(
        &mut self,
        x: Var,
        params: Var,
        outputs: Tensor,
        jac: Vec<f64>,
    ) -> Result<Var, AutodiffError> {
        let rows = self.value(x).len();
        let sp = self.shape(params);
        if sp.len() != 2 || sp[0] != rows || outputs.rank() != 2 || outputs.shape()[0] != rows {
            return Err(shape_err(format!(
                "row_map: x {:?}, params {sp:?}, outputs {:?}",
                self.shape(x),
                outputs.shape()
            )));
        }
        let n_out = outputs.shape()[1];
        if jac.len() != rows * n_out * (1 + sp[1]) {
            return Err(shape_err("row_map: Jacobian size"));
        }
        let ng = self.ng(x) || self.ng(params);
        Ok(self.push(
            outputs,
            Op::RowMap(Box::new(RowMapSaved { x, params, jac })),
            ng,
        ))
    }

    /// Reverse sweep from a single-element output.
    pub fn backward(&self, out: Var) -> Result<Gradients, AutodiffError> {
        let ov = self.value(out);
        if ov.len() != 1 {
            return Err(AutodiffError::NotScalar(ov.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; out.0 + 1];
        grads[out.0] = Some(vec![1.0]);
        let mut diagnostics = Diagnostics::default();
        for i in (0..=out.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            diagnostics.non_finite += g.iter().filter(|v| !v.is_finite()).count();
            diagnostics.non_finite_values +=
                node.value.data().iter().filter(|v| !v.is_finite()).count();
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads, diagnostics })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.ng(v) {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.value(v).len()]);
            f(slot);
        };
        let val = |v: Var| self.value(v).data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, &mut |s| add_into(s, g));
                acc(*b, &mut |s| add_into(s, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |s| add_into(s, g));
                acc(*b, &mut |s| s.iter_mut().zip(g).for_each(|(x, y)| *x -= y));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                acc(*a, &mut |s| {
                    for ((x, gi), y) in s.iter_mut().zip(g).zip(vb) {
                        *x += gi * y;
                    }
                });
                acc(*b, &mut |s| {
                    for ((x, gi), y) in s.iter_mut().zip(g).zip(va) {
                        *x += gi * y;
                    }
                });
            }
            Op::AddRow(a, r) => {
                acc(*a, &mut |s| add_into(s, g));
                let n = self.value(*r).len();
                acc(*r, &mut |s| {
                    for chunk in g.chunks(n) {
                        add_into(s, chunk);
                    }
                });
            }
            Op::Scale(a, c) => acc(*a, &mut |s| {
                s.iter_mut().zip(g).for_each(|(x, y)| *x += c * y)
            }),
            Op::AddScalar(a) | Op::Reshape(a) => acc(*a, &mut |s| add_into(s, g)),
            Op::Gelu(a) => {
                let va = val(*a);
                acc(*a, &mut |s| {
                    for ((x, gi), &xi) in s.iter_mut().zip(g).zip(va) {
                        *x += gi * gelu_grad(xi);
                    }
                });
            }
            Op::Tanh(a) => {
                let out = node.value.data();
                acc(*a, &mut |s| {
                    for ((x, gi), y) in s.iter_mut().zip(g).zip(out) {
                        *x += gi * (1.0 - y * y);
                    }
                });
            }
            Op::Sigmoid(a) => {
                let out = node.value.data();
                acc(*a, &mut |s| {
                    for ((x, gi), y) in s.iter_mut().zip(g).zip(out) {
                        *x += gi * y * (1.0 - y);
                    }
                });
            }
            Op::Exp(a) => {
                let out = node.value.data();
                acc(*a, &mut |s| {
                    for ((x, gi), y) in s.iter_mut().zip(g).zip(out) {
                        *x += gi * y;
                    }
                });
            }
            Op::Ln(a) => {
                let va = val(*a);
                acc(*a, &mut |s| {
                    for ((x, gi), y) in s.iter_mut().zip(g).zip(va) {
                        *x += gi / y;
                    }
                });
            }
            Op::Square(a) => {
                let va = val(*a);
                acc(*a, &mut |s| {
                    for ((x, gi), y) in s.iter_mut().zip(g).zip(va) {
                        *x += 2.0 * gi * y;
                    }
                });
            }
            Op::Sum(a) => acc(*a, &mut |s| s.iter_mut().for_each(|x| *x += g[0])),
            Op::Mean(a) => {
                let n = self.value(*a).len() as f64;
                acc(*a, &mut |s| s.iter_mut().for_each(|x| *x += g[0] / n));
            }
            Op::RowSum(a) => {
                let n = self.value(*a).last_dim();
                acc(*a, &mut |s| {
                    for (chunk, gi) in s.chunks_mut(n).zip(g) {
                        chunk.iter_mut().for_each(|x| *x += gi);
                    }
                });
            }
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                let (va, vb) = (val(*a), val(*b));
                // dA = G · Bᵀ ; dB = Aᵀ · G
                acc(*a, &mut |s| {
                    gemm(
                        m,
                        n,
                        k,
                        1.0,
                        View::rows(g, n),
                        View::trans(vb, n),
                        1.0,
                        s,
                        k,
                        1,
                    )
                });
                acc(*b, &mut |s| {
                    gemm(
                        k,
                        m,
                        n,
                        1.0,
                        View::trans(va, k),
                        View::rows(g, n),
                        1.0,
                        s,
                        n,
                        1,
                    )
                });
            }
            Op::MatMulT(x, w) => {
                let k = self.value(*x).last_dim();
                let n = self.shape(*w)[0];
                let m = self.value(*x).leading();
                let (vx, vw) = (val(*x), val(*w));
                // dX = G · W ; dW = Gᵀ · X
                acc(*x, &mut |s| {
                    gemm(
                        m,
                        n,
                        k,
                        1.0,
                        View::rows(g, n),
                        View::rows(vw, k),
                        1.0,
                        s,
                        k,
                        1,
                    )
                });
                acc(*w, &mut |s| {
                    gemm(
                        n,
                        m,
                        k,
                        1.0,
                        View::trans(g, n),
                        View::rows(vx, k),
                        1.0,
                        s,
                        k,
                        1,
                    )
                });
            }
            Op::SelectCols { src, start } => {
                let n = self.shape(*src)[1];
                let len = node.value.shape()[1];
                acc(*src, &mut |s| {
                    for (r, gr) in g.chunks(len).enumerate() {
                        add_into(&mut s[r * n + start..r * n + start + len], gr);
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let n = node.value.shape()[1];
                let mut off = 0;
                for &p in parts {
                    let w = self.shape(p)[1];
                    acc(p, &mut |s| {
                        for (r, sr) in s.chunks_mut(w).enumerate() {
                            add_into(sr, &g[r * n + off..r * n + off + w]);
                        }
                    });
                    off += w;
                }
            }
            Op::PermuteCols(a, perm) => {
                let n = perm.len();
                acc(*a, &mut |s| {
                    for (sr, gr) in s.chunks_mut(n).zip(g.chunks(n)) {
                        for (j, &p) in perm.iter().enumerate() {
                            sr[p] += gr[j];
                        }
                    }
                });
            }
            Op::SelectStep { src, t } => {
                let s3 = self.shape(*src);
                let (l, f) = (s3[1], s3[2]);
                acc(*src, &mut |s| {
                    for (i, gr) in g.chunks(f).enumerate() {
                        let off = (i * l + t) * f;
                        add_into(&mut s[off..off + f], gr);
                    }
                });
            }
            Op::StackSteps(steps) => {
                let s3 = node.value.shape();
                let (b, l, f) = (s3[0], s3[1], s3[2]);
                for (t, &v) in steps.iter().enumerate() {
                    acc(v, &mut |s| {
                        for i in 0..b {
                            let off = (i * l + t) * f;
                            add_into(&mut s[i * f..(i + 1) * f], &g[off..off + f]);
                        }
                    });
                }
            }
            Op::Conv1d(c) => self.conv_backward(c, g, &mut acc),
            Op::RowMap(rm) => {
                let n_out = node.value.shape()[1];
                let n_p = self.shape(rm.params)[1];
                let stride = 1 + n_p;
                acc(rm.x, &mut |s| {
                    for (r, x) in s.iter_mut().enumerate() {
                        for o in 0..n_out {
                            *x += g[r * n_out + o] * rm.jac[(r * n_out + o) * stride];
                        }
                    }
                });
                acc(rm.params, &mut |s| {
                    for (r, sr) in s.chunks_mut(n_p).enumerate() {
                        for o in 0..n_out {
                            let go = g[r * n_out + o];
                            if go == 0.0 {
                                continue;
                            }
                            let j =
                                &rm.jac[(r * n_out + o) * stride + 1..(r * n_out + o + 1) * stride];
                            sr.iter_mut().zip(j).for_each(|(x, d)| *x += go * d);
                        }
                    }
                });
            }
        }
    }

    fn conv_backward(
        &self,
        c: &ConvSaved,
        g: &[f64],
        acc: &mut dyn FnMut(Var, &mut dyn FnMut(&mut [f64])),
    ) {
        let sx = self.shape(c.x);
        let (batch, c_in, len) = (sx[0], sx[1], sx[2]);
        let c_out = self.shape(c.w)[0];
        let (k, lo) = (c.k, c.len_out);
        let ck = c_in * k;
        acc(c.b, &mut |s| {
            for bi in 0..batch {
                for (co, x) in s.iter_mut().enumerate() {
                    let off = (bi * c_out + co) * lo;
                    *x += g[off..off + lo].iter().sum::<f64>();
                }
            }
        });
        acc(c.w, &mut |s| {
            for bi in 0..batch {
                let gb = &g[bi * c_out * lo..(bi + 1) * c_out * lo];
                gemm(
                    c_out,
                    lo,
                    ck,
                    1.0,
                    View::rows(gb, lo),
                    View::rows(&c.cols[bi * lo * ck..(bi + 1) * lo * ck], ck),
                    1.0,
                    s,
                    ck,
                    1,
                );
            }
        });
        let ws = self.value(c.w).data();
        acc(c.x, &mut |s| {
            let mut dcols = vec![0.0; lo * ck];
            for bi in 0..batch {
                let gb = &g[bi * c_out * lo..(bi + 1) * c_out * lo];
                gemm(
                    lo,
                    c_out,
                    ck,
                    1.0,
                    View::trans(gb, lo),
                    View::rows(ws, ck),
                    0.0,
                    &mut dcols,
                    ck,
                    1,
                );
                for o in 0..lo {
                    for ci in 0..c_in {
                        for kk in 0..k {
                            let pos = (o * c.stride + kk) as isize - c.pad_left as isize;
                            if pos >= 0 && (pos as usize) < len {
                                s[(bi * c_in + ci) * len + pos as usize] +=
                                    dcols[o * ck + ci * k + kk];
                            }
                        }
                    }
                }
            }
        });
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(x, y)| *x += y);
}
