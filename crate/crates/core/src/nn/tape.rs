//! Reverse-mode differentiation over a linear tape of matrix operations.

use super::params::{Gradients, ParamId, ParamStore};
use super::{Matrix, NnError};

/// Added to masked logits before the softmax.
pub const MASK_LOGIT: f64 = -1e9;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Input,
    Param(ParamId),
    /// `x · w + b` with `b` a 1×n row broadcast over rows.
    Linear(Var, Var, Var),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    MulConst(Var, Matrix),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Square(Var),
    ConcatCols(Vec<Var>),
    Reshape(Var),
    GatherRows(Var, Vec<usize>),
    SliceCols(Var, usize),
    /// Row `r` scaled by `s[r % s.len()]`, `s` an n×1 column.
    ScaleRowsCyclic(Var, Var),
    /// Sums consecutive groups of rows.
    SegmentSum(Var, usize),
    LogSoftmax(Var),
    Pick(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
    Clamp(Var, f64, f64),
    Min(Var, Var),
}

#[derive(Clone, Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

/// Records a forward computation so its gradient can be replayed backwards.
pub struct Tape<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

impl<'p> Tape<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Self { store, nodes: Vec::new(), param_vars: vec![None; store.len()] }
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.shape(), (1, 1), "not a scalar");
        m.get(0, 0)
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Input)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.index()] {
            return v;
        }
        let v = self.push(self.store.get(id).value.clone(), Op::Param(id));
        self.param_vars[id.index()] = Some(v);
        v
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let mut out = self.value(x).matmul(self.value(w));
        let bias = self.value(b);
        assert_eq!((1, out.cols()), bias.shape(), "bias must be 1x{}", out.cols());
        for r in 0..out.rows() {
            for (o, bb) in out.row_mut(r).iter_mut().zip(bias.data()) {
                *o += bb;
            }
        }
        self.push(out, Op::Linear(x, w, b))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(out, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).map(|x| x * k);
        self.push(out, Op::Scale(a, k))
    }

    pub fn add_const(&mut self, a: Var, c: &Matrix) -> Var {
        let out = self.value(a).zip_map(c, |x, y| x + y);
        self.push(out, Op::AddConst(a))
    }

    pub fn mul_const(&mut self, a: Var, c: Matrix) -> Var {
        let out = self.value(a).zip_map(&c, |x, y| x * y);
        self.push(out, Op::MulConst(a, c))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(stable_sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        self.push(out, Op::Exp(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * x);
        self.push(out, Op::Square(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut c0 = 0;
            for &p in parts {
                let m = self.value(p);
                assert_eq!(m.rows(), rows, "concat_cols row mismatch");
                out.row_mut(r)[c0..c0 + m.cols()].copy_from_slice(m.row(r));
                c0 += m.cols();
            }
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    /// Reinterprets the row-major data with a new shape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let out = Matrix::from_vec(rows, cols, self.value(a).data().to_vec());
        self.push(out, Op::Reshape(a))
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let src = self.value(a);
        let mut out = Matrix::zeros(idx.len(), src.cols());
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r).copy_from_slice(src.row(i));
        }
        self.push(out, Op::GatherRows(a, idx.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let src = self.value(a);
        assert!(start + len <= src.cols(), "slice out of range");
        let mut out = Matrix::zeros(src.rows(), len);
        for r in 0..src.rows() {
            out.row_mut(r).copy_from_slice(&src.row(r)[start..start + len]);
        }
        self.push(out, Op::SliceCols(a, start))
    }

    pub fn scale_rows_cyclic(&mut self, a: Var, s: Var) -> Var {
        let sv = self.value(s);
        assert_eq!(sv.cols(), 1, "row scales must be a column");
        let n = sv.rows();
        let mut out = self.value(a).clone();
        for r in 0..out.rows() {
            let k = sv.get(r % n, 0);
            for x in out.row_mut(r) {
                *x *= k;
            }
        }
        self.push(out, Op::ScaleRowsCyclic(a, s))
    }

    pub fn segment_sum(&mut self, a: Var, group: usize) -> Var {
        let src = self.value(a);
        assert_eq!(src.rows() % group, 0, "rows not divisible by group");
        let mut out = Matrix::zeros(src.rows() / group, src.cols());
        for r in 0..src.rows() {
            for (o, x) in out.row_mut(r / group).iter_mut().zip(src.row(r)) {
                *o += x;
            }
        }
        self.push(out, Op::SegmentSum(a, group))
    }

    /// Row-wise log-softmax; entries where `allowed` is false get
    /// [`MASK_LOGIT`] added first, so their probability underflows to zero.
    pub fn log_softmax(&mut self, a: Var, allowed: Option<&[bool]>) -> Var {
        let x = match allowed {
            Some(mask) => {
                let src = self.value(a);
                assert_eq!(mask.len(), src.len(), "mask shape");
                let bias = Matrix::from_vec(
                    src.rows(),
                    src.cols(),
                    mask.iter().map(|&ok| if ok { 0.0 } else { MASK_LOGIT }).collect(),
                );
                self.add_const(a, &bias)
            }
            None => a,
        };
        let src = self.value(x);
        let mut out = src.clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for v in row {
                *v -= lse;
            }
        }
        self.push(out, Op::LogSoftmax(x))
    }

    /// One entry per row, `out[r] = a[r, cols[r]]`.
    pub fn pick(&mut self, a: Var, cols: &[usize]) -> Var {
        let src = self.value(a);
        assert_eq!(cols.len(), src.rows(), "one column per row");
        let out = Matrix::from_vec(src.rows(), 1, cols.iter().enumerate().map(|(r, &c)| src.get(r, c)).collect());
        self.push(out, Op::Pick(a, cols.to_vec()))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Matrix::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let out = Matrix::scalar(m.sum() / m.len() as f64);
        self.push(out, Op::Mean(a))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(out, Op::Clamp(a, lo, hi))
    }

    /// Elementwise minimum; ties send the gradient to `a`.
    pub fn min(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), f64::min);
        self.push(out, Op::Min(a, b))
    }

    /// Gradients of the scalar `loss` with respect to every parameter used.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NnError> {
        if self.nodes.is_empty() || loss.0 >= self.nodes.len() {
            return Err(NnError::NoForward);
        }
        if self.value(loss).shape() != (1, 1) {
            return Err(NnError::Shape(format!("loss must be 1x1, got {:?}", self.value(loss).shape())));
        }
        let mut adj: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Matrix::scalar(1.0));
        let mut grads: Vec<Option<Matrix>> = vec![None; self.store.len()];

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {}
                Op::Param(id) => accumulate(&mut grads[id.index()], g),
                Op::Linear(x, w, b) => {
                    let gx = g.matmul_t(self.value(*w));
                    let gw = self.value(*x).t_matmul(&g);
                    let mut gb = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, v) in gb.data_mut().iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut adj[x.0], gx);
                    accumulate(&mut adj[w.0], gw);
                    accumulate(&mut adj[b.0], gb);
                }
                Op::MatMul(a, b) => {
                    let ga = g.matmul_t(self.value(*b));
                    let gb = self.value(*a).t_matmul(&g);
                    accumulate(&mut adj[a.0], ga);
                    accumulate(&mut adj[b.0], gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj[a.0], g.clone());
                    accumulate(&mut adj[b.0], g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj[b.0], g.map(|x| -x));
                    accumulate(&mut adj[a.0], g);
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(self.value(*b), |x, y| x * y);
                    let gb = g.zip_map(self.value(*a), |x, y| x * y);
                    accumulate(&mut adj[a.0], ga);
                    accumulate(&mut adj[b.0], gb);
                }
                Op::Scale(a, k) => accumulate(&mut adj[a.0], g.map(|x| x * k)),
                Op::AddConst(a) => accumulate(&mut adj[a.0], g),
                Op::MulConst(a, c) => accumulate(&mut adj[a.0], g.zip_map(c, |x, y| x * y)),
                Op::Sigmoid(a) => accumulate(&mut adj[a.0], g.zip_map(&node.value, |x, y| x * y * (1.0 - y))),
                Op::Tanh(a) => accumulate(&mut adj[a.0], g.zip_map(&node.value, |x, y| x * (1.0 - y * y))),
                Op::Exp(a) => accumulate(&mut adj[a.0], g.zip_map(&node.value, |x, y| x * y)),
                Op::Square(a) => accumulate(&mut adj[a.0], g.zip_map(self.value(*a), |x, y| 2.0 * x * y)),
                Op::ConcatCols(parts) => {
                    let mut c0 = 0;
                    for p in parts {
                        let (rows, cols) = self.value(*p).shape();
                        let mut gp = Matrix::zeros(rows, cols);
                        for r in 0..rows {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[c0..c0 + cols]);
                        }
                        c0 += cols;
                        accumulate(&mut adj[p.0], gp);
                    }
                }
                Op::Reshape(a) => {
                    let (rows, cols) = self.value(*a).shape();
                    accumulate(&mut adj[a.0], Matrix::from_vec(rows, cols, g.into_vec()));
                }
                Op::GatherRows(a, idx) => {
                    let (rows, cols) = self.value(*a).shape();
                    let mut ga = Matrix::zeros(rows, cols);
                    for (r, &i) in idx.iter().enumerate() {
                        for (o, v) in ga.row_mut(i).iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut adj[a.0], ga);
                }
                Op::SliceCols(a, start) => {
                    let (rows, cols) = self.value(*a).shape();
                    let mut ga = Matrix::zeros(rows, cols);
                    for r in 0..rows {
                        ga.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut adj[a.0], ga);
                }
                Op::ScaleRowsCyclic(a, s) => {
                    let av = self.value(*a);
                    let sv = self.value(*s);
                    let n = sv.rows();
                    let mut ga = g.clone();
                    let mut gs = Matrix::zeros(n, 1);
                    for r in 0..g.rows() {
                        let k = sv.get(r % n, 0);
                        let dot: f64 = g.row(r).iter().zip(av.row(r)).map(|(x, y)| x * y).sum();
                        gs.data_mut()[r % n] += dot;
                        for x in ga.row_mut(r) {
                            *x *= k;
                        }
                    }
                    accumulate(&mut adj[a.0], ga);
                    accumulate(&mut adj[s.0], gs);
                }
                Op::SegmentSum(a, group) => {
                    let (rows, cols) = self.value(*a).shape();
                    let mut ga = Matrix::zeros(rows, cols);
                    for r in 0..rows {
                        ga.row_mut(r).copy_from_slice(g.row(r / group));
                    }
                    accumulate(&mut adj[a.0], ga);
                }
                Op::LogSoftmax(a) => {
                    let y = &node.value;
                    let mut ga = g.clone();
                    for r in 0..g.rows() {
                        let total: f64 = g.row(r).iter().sum();
                        for (o, &lp) in ga.row_mut(r).iter_mut().zip(y.row(r)) {
                            *o -= lp.exp() * total;
                        }
                    }
                    accumulate(&mut adj[a.0], ga);
                }
                Op::Pick(a, cols) => {
                    let (rows, ncols) = self.value(*a).shape();
                    let mut ga = Matrix::zeros(rows, ncols);
                    for (r, &c) in cols.iter().enumerate() {
                        ga.set(r, c, g.get(r, 0));
                    }
                    accumulate(&mut adj[a.0], ga);
                }
                Op::Sum(a) => {
                    let (rows, cols) = self.value(*a).shape();
                    accumulate(&mut adj[a.0], Matrix::filled(rows, cols, g.get(0, 0)));
                }
                Op::Mean(a) => {
                    let (rows, cols) = self.value(*a).shape();
                    let k = g.get(0, 0) / (rows * cols) as f64;
                    accumulate(&mut adj[a.0], Matrix::filled(rows, cols, k));
                }
                Op::Clamp(a, lo, hi) => {
                    let ga = g.zip_map(self.value(*a), |x, v| if v < *lo || v > *hi { 0.0 } else { x });
                    accumulate(&mut adj[a.0], ga);
                }
                Op::Min(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    let ga = Matrix::from_vec(
                        g.rows(),
                        g.cols(),
                        (0..g.len()).map(|k| if av.data()[k] <= bv.data()[k] { g.data()[k] } else { 0.0 }).collect(),
                    );
                    let gb = g.zip_map(&ga, |x, y| x - y);
                    accumulate(&mut adj[a.0], ga);
                    accumulate(&mut adj[b.0], gb);
                }
            }
        }
        Ok(Gradients::new(grads))
    }
}

fn accumulate(slot: &mut Option<Matrix>, g: Matrix) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}

pub fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
