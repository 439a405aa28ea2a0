use std::collections::HashMap;

use super::matrix::{gemm, Matrix};
use super::params::{Grads, ParamId, ParamStore};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    LayerNormRows(Var, Vec<f64>),
    Transpose(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    Gather(Var, Vec<Option<usize>>),
    SumAll(Var),
    RowSums(Var),
}

struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

/// A reverse-mode autodiff tape. Build one per forward pass.
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::with_capacity(256),
            params: HashMap::new(),
        }
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        let needs_grad = match &op {
            Op::Leaf => false,
            Op::Param(_) => true,
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b)
            | Op::MulRow(a, b)
            | Op::MulCol(a, b) => self.ng(*a) || self.ng(*b),
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Tanh(a)
            | Op::Relu(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::SoftmaxRows(a)
            | Op::LogSoftmaxRows(a)
            | Op::LayerNormRows(a, _)
            | Op::Transpose(a)
            | Op::SliceCols(a, _)
            | Op::SliceRows(a, _)
            | Op::Gather(a, _)
            | Op::SumAll(a)
            | Op::RowSums(a) => self.ng(*a),
            Op::ConcatCols(vs) | Op::ConcatRows(vs) => vs.iter().any(|v| self.ng(*v)),
        };
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
        self.nodes[v.0].value.to_scalar()
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// A constant input; no gradient flows into it.
    pub fn constant(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Leaf)
    }

    /// Registers (once per graph) a trainable parameter.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(v) = self.params.get(&id) {
            return *v;
        }
        let v = self.push(store.value(id).clone(), Op::Param(id));
        self.params.insert(id, v);
        v
    }

    /// Same value, no gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let m = self.value(v).clone();
        self.constant(m)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let m = self.value(a).matmul(self.value(b));
        self.push(m, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let m = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(m, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let m = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(m, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let m = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(m, Op::Mul(a, b))
    }

    /// Adds a `1 x n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (am, r) = (self.value(a), self.value(row));
        assert_eq!(r.shape(), (1, am.cols()), "add_row shape mismatch");
        let mut m = am.clone();
        for i in 0..m.rows() {
            for (x, y) in m.row_mut(i).iter_mut().zip(r.data()) {
                *x += y;
            }
        }
        self.push(m, Op::AddRow(a, row))
    }

    /// Multiplies every row of `a` elementwise by a `1 x n` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (am, r) = (self.value(a), self.value(row));
        assert_eq!(r.shape(), (1, am.cols()), "mul_row shape mismatch");
        let mut m = am.clone();
        for i in 0..m.rows() {
            for (x, y) in m.row_mut(i).iter_mut().zip(r.data()) {
                *x *= y;
            }
        }
        self.push(m, Op::MulRow(a, row))
    }

    /// Scales row `i` of `a` by entry `i` of the `n x 1` column `col`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let (am, c) = (self.value(a), self.value(col));
        assert_eq!(c.shape(), (am.rows(), 1), "mul_col shape mismatch");
        let mut m = am.clone();
        for i in 0..m.rows() {
            let s = c.get(i, 0);
            for x in m.row_mut(i) {
                *x *= s;
            }
        }
        self.push(m, Op::MulCol(a, col))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let m = self.value(a).map(|x| x * s);
        self.push(m, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let m = self.value(a).map(|x| x + s);
        self.push(m, Op::AddScalar(a))
    }

    /// Forward value `m`, identity gradient into `a` (straight-through).
    pub fn with_value(&mut self, a: Var, m: Matrix) -> Var {
        assert_eq!(self.shape(a), m.shape(), "with_value shape mismatch");
        self.push(m, Op::AddScalar(a))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let m = self.value(a).map(f64::tanh);
        self.push(m, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let m = self.value(a).map(|x| x.max(0.0));
        self.push(m, Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let m = self.value(a).map(f64::exp);
        self.push(m, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let m = self.value(a).map(f64::ln);
        self.push(m, Op::Log(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut m = self.value(a).clone();
        for i in 0..m.rows() {
            let p = super::matrix::softmax(m.row(i));
            m.row_mut(i).copy_from_slice(&p);
        }
        self.push(m, Op::SoftmaxRows(a))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let mut m = self.value(a).clone();
        for i in 0..m.rows() {
            let p = super::matrix::log_softmax(m.row(i));
            m.row_mut(i).copy_from_slice(&p);
        }
        self.push(m, Op::LogSoftmaxRows(a))
    }

    /// Per-row standardization without affine terms.
    pub fn layer_norm_rows(&mut self, a: Var, eps: f64) -> Var {
        let mut m = self.value(a).clone();
        let n = m.cols() as f64;
        let mut inv_std = Vec::with_capacity(m.rows());
        for i in 0..m.rows() {
            let row = m.row_mut(i);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            let s = 1.0 / (var + eps).sqrt();
            for x in row.iter_mut() {
                *x = (*x - mean) * s;
            }
            inv_std.push(s);
        }
        self.push(m, Op::LayerNormRows(a, inv_std))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let m = self.value(a).transpose();
        self.push(m, Op::Transpose(a))
    }

    pub fn concat_cols(&mut self, vs: &[Var]) -> Var {
        let rows = self.value(vs[0]).rows();
        let cols: usize = vs.iter().map(|v| self.value(*v).cols()).sum();
        let mut m = Matrix::zeros(rows, cols);
        for i in 0..rows {
            let mut off = 0;
            for v in vs {
                let src = self.value(*v);
                assert_eq!(src.rows(), rows, "concat_cols row mismatch");
                m.row_mut(i)[off..off + src.cols()].copy_from_slice(src.row(i));
                off += src.cols();
            }
        }
        self.push(m, Op::ConcatCols(vs.to_vec()))
    }

    pub fn concat_rows(&mut self, vs: &[Var]) -> Var {
        let cols = self.value(vs[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for v in vs {
            let src = self.value(*v);
            assert_eq!(src.cols(), cols, "concat_rows column mismatch");
            data.extend_from_slice(src.data());
            rows += src.rows();
        }
        self.push(Matrix::from_vec(rows, cols, data), Op::ConcatRows(vs.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let src = self.value(a);
        assert!(start + len <= src.cols(), "slice_cols out of range");
        let mut m = Matrix::zeros(src.rows(), len);
        for i in 0..src.rows() {
            m.row_mut(i).copy_from_slice(&src.row(i)[start..start + len]);
        }
        self.push(m, Op::SliceCols(a, start))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let src = self.value(a);
        assert!(start + len <= src.rows(), "slice_rows out of range");
        let c = src.cols();
        let m = Matrix::from_vec(len, c, src.data()[start * c..(start + len) * c].to_vec());
        self.push(m, Op::SliceRows(a, start))
    }

    /// Builds a `rows x cols` matrix whose flat entry `i` is `a.flat[idx[i]]`
    /// (or zero for `None`).
    pub fn gather(&mut self, a: Var, idx: Vec<Option<usize>>, rows: usize, cols: usize) -> Var {
        assert_eq!(idx.len(), rows * cols, "gather index length mismatch");
        let src = self.value(a).data();
        let data = idx
            .iter()
            .map(|i| i.map_or(0.0, |j| src[j]))
            .collect::<Vec<_>>();
        self.push(Matrix::from_vec(rows, cols, data), Op::Gather(a, idx))
    }

    /// Selects rows of `a` by index (repeats allowed).
    pub fn select_rows(&mut self, a: Var, which: &[usize]) -> Var {
        let c = self.value(a).cols();
        let idx = which
            .iter()
            .flat_map(|&r| (0..c).map(move |j| Some(r * c + j)))
            .collect();
        self.gather(a, idx, which.len(), c)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Matrix::scalar(s), Op::SumAll(a))
    }

    pub fn row_sums(&mut self, a: Var) -> Var {
        let src = self.value(a);
        let data = (0..src.rows()).map(|i| src.row(i).iter().sum()).collect();
        let m = Matrix::from_vec(src.rows(), 1, data);
        self.push(m, Op::RowSums(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Backpropagates from a scalar node and returns gradients for every
    /// parameter that took part in the forward pass.
    pub fn backward(&self, root: Var, store: &ParamStore) -> Grads {
        assert_eq!(self.shape(root), (1, 1), "backward needs a scalar root");
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Matrix::scalar(1.0));
        let mut out = Grads::zeros_like(store);
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            if let Op::Param(id) = node.op {
                out.accumulate(id, &g);
            }
        }
        out
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let acc = |v: Var, d: Matrix, grads: &mut [Option<Matrix>]| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&d),
                slot @ None => *slot = Some(d),
            }
        };
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    let mut da = Matrix::zeros(av.rows(), av.cols());
                    gemm(false, g, true, bv, &mut da, 0.0);
                    acc(*a, da, grads);
                }
                if self.ng(*b) {
                    let mut db = Matrix::zeros(bv.rows(), bv.cols());
                    gemm(true, av, false, g, &mut db, 0.0);
                    acc(*b, db, grads);
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone(), grads);
                acc(*b, g.clone(), grads);
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone(), grads);
                acc(*b, g.map(|x| -x), grads);
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    acc(*a, g.zip_map(self.value(*b), |x, y| x * y), grads);
                }
                if self.ng(*b) {
                    acc(*b, g.zip_map(self.value(*a), |x, y| x * y), grads);
                }
            }
            Op::AddRow(a, r) => {
                acc(*a, g.clone(), grads);
                if self.ng(*r) {
                    acc(*r, g.col_sums(), grads);
                }
            }
            Op::MulRow(a, r) => {
                let (av, rv) = (self.value(*a), self.value(*r));
                if self.ng(*a) {
                    let mut da = g.clone();
                    for i in 0..da.rows() {
                        for (x, y) in da.row_mut(i).iter_mut().zip(rv.data()) {
                            *x *= y;
                        }
                    }
                    acc(*a, da, grads);
                }
                if self.ng(*r) {
                    acc(*r, g.zip_map(av, |x, y| x * y).col_sums(), grads);
                }
            }
            Op::MulCol(a, c) => {
                let (av, cv) = (self.value(*a), self.value(*c));
                if self.ng(*a) {
                    let mut da = g.clone();
                    for i in 0..da.rows() {
                        let s = cv.get(i, 0);
                        for x in da.row_mut(i) {
                            *x *= s;
                        }
                    }
                    acc(*a, da, grads);
                }
                if self.ng(*c) {
                    let data = (0..av.rows())
                        .map(|i| g.row(i).iter().zip(av.row(i)).map(|(x, y)| x * y).sum())
                        .collect();
                    acc(*c, Matrix::from_vec(av.rows(), 1, data), grads);
                }
            }
            Op::Scale(a, s) => acc(*a, g.map(|x| x * s), grads),
            Op::AddScalar(a) => acc(*a, g.clone(), grads),
            Op::Tanh(a) => acc(*a, g.zip_map(&node.value, |x, y| x * (1.0 - y * y)), grads),
            Op::Relu(a) => acc(
                *a,
                g.zip_map(self.value(*a), |x, y| if y > 0.0 { x } else { 0.0 }),
                grads,
            ),
            Op::Exp(a) => acc(*a, g.zip_map(&node.value, |x, y| x * y), grads),
            Op::Log(a) => acc(*a, g.zip_map(self.value(*a), |x, y| x / y), grads),
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let mut d = Matrix::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    let dot: f64 = g.row(i).iter().zip(y.row(i)).map(|(a, b)| a * b).sum();
                    for j in 0..y.cols() {
                        d.set(i, j, y.get(i, j) * (g.get(i, j) - dot));
                    }
                }
                acc(*a, d, grads);
            }
            Op::LogSoftmaxRows(a) => {
                let y = &node.value;
                let mut d = Matrix::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    let gs: f64 = g.row(i).iter().sum();
                    for j in 0..y.cols() {
                        d.set(i, j, g.get(i, j) - y.get(i, j).exp() * gs);
                    }
                }
                acc(*a, d, grads);
            }
            Op::LayerNormRows(a, inv_std) => {
                let y = &node.value;
                let n = y.cols() as f64;
                let mut d = Matrix::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    let gm = g.row(i).iter().sum::<f64>() / n;
                    let gy = g.row(i).iter().zip(y.row(i)).map(|(a, b)| a * b).sum::<f64>() / n;
                    for j in 0..y.cols() {
                        d.set(i, j, inv_std[i] * (g.get(i, j) - gm - y.get(i, j) * gy));
                    }
                }
                acc(*a, d, grads);
            }
            Op::Transpose(a) => acc(*a, g.transpose(), grads),
            Op::ConcatCols(vs) => {
                let mut off = 0;
                for v in vs {
                    let c = self.value(*v).cols();
                    if self.ng(*v) {
                        let mut d = Matrix::zeros(g.rows(), c);
                        for i in 0..g.rows() {
                            d.row_mut(i).copy_from_slice(&g.row(i)[off..off + c]);
                        }
                        acc(*v, d, grads);
                    }
                    off += c;
                }
            }
            Op::ConcatRows(vs) => {
                let mut off = 0;
                let c = g.cols();
                for v in vs {
                    let r = self.value(*v).rows();
                    if self.ng(*v) {
                        let d = Matrix::from_vec(r, c, g.data()[off * c..(off + r) * c].to_vec());
                        acc(*v, d, grads);
                    }
                    off += r;
                }
            }
            Op::SliceCols(a, start) => {
                let src = self.value(*a);
                let mut d = Matrix::zeros(src.rows(), src.cols());
                for i in 0..g.rows() {
                    d.row_mut(i)[*start..*start + g.cols()].copy_from_slice(g.row(i));
                }
                acc(*a, d, grads);
            }
            Op::SliceRows(a, start) => {
                let src = self.value(*a);
                let mut d = Matrix::zeros(src.rows(), src.cols());
                let c = src.cols();
                d.data_mut()[start * c..(start + g.rows()) * c].copy_from_slice(g.data());
                acc(*a, d, grads);
            }
            Op::Gather(a, idx) => {
                let src = self.value(*a);
                let mut d = Matrix::zeros(src.rows(), src.cols());
                let dd = d.data_mut();
                for (gi, i) in g.data().iter().zip(idx) {
                    if let Some(j) = i {
                        dd[*j] += gi;
                    }
                }
                acc(*a, d, grads);
            }
            Op::SumAll(a) => {
                let (r, c) = self.shape(*a);
                acc(*a, Matrix::filled(r, c, g.to_scalar()), grads);
            }
            Op::RowSums(a) => {
                let (r, c) = self.shape(*a);
                let mut d = Matrix::zeros(r, c);
                for i in 0..r {
                    let s = g.get(i, 0);
                    for x in d.row_mut(i) {
                        *x = s;
                    }
                }
                acc(*a, d, grads);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_vec(
            rows,
            cols,
            (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
    }

    /// Checks d(loss)/d(param) against central differences.
    fn check(store: &mut ParamStore, loss: impl Fn(&mut Graph, &ParamStore) -> Var) {
        let mut g = Graph::new();
        let root = loss(&mut g, store);
        let grads = g.backward(root, store);
        for id in store.ids() {
            let analytic = grads.get(id).clone();
            for k in 0..store.value(id).len() {
                let orig = store.value(id).data()[k];
                let h = 1e-6;
                store.value_mut(id).data_mut()[k] = orig + h;
                let mut g1 = Graph::new();
                let r1 = loss(&mut g1, store);
                let up = g1.scalar(r1);
                store.value_mut(id).data_mut()[k] = orig - h;
                let mut g2 = Graph::new();
                let r2 = loss(&mut g2, store);
                let down = g2.scalar(r2);
                store.value_mut(id).data_mut()[k] = orig;
                let fd = (up - down) / (2.0 * h);
                let an = analytic.data()[k];
                let err = (fd - an).abs() / (fd.abs() + an.abs()).max(1e-6);
                assert!(err < 1e-5, "param {} entry {k}: fd {fd} vs analytic {an}", store.name(id));
            }
        }
    }

    #[test]
    fn gradients_of_every_op_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let a = store.add("a", random(3, 4, &mut rng));
        let b = store.add("b", random(4, 2, &mut rng));
        let r = store.add("r", random(1, 4, &mut rng));
        let c = store.add("c", random(3, 1, &mut rng).map(|x| x + 2.0));
        check(&mut store, |g, s| {
            let a = g.param(s, a);
            let b = g.param(s, b);
            let r = g.param(s, r);
            let c = g.param(s, c);
            let x = g.add_row(a, r);
            let x = g.mul_row(x, r);
            let x = g.layer_norm_rows(x, 1e-5);
            let x = g.tanh(x);
            let y = g.matmul(x, b);
            let y = g.relu(y);
            let y2 = g.log_softmax_rows(y);
            let y3 = g.softmax_rows(y2);
            let e = g.exp(y3);
            let l = g.log(e);
            let cc = g.concat_cols(&[l, y2]);
            let cr = g.concat_rows(&[cc, cc]);
            let sl = g.slice_cols(cr, 1, 2);
            let sr = g.slice_rows(sl, 2, 3);
            let m = g.mul_col(sr, c);
            let t = g.transpose(m);
            let tt = g.matmul(t, m);
            let sel = g.select_rows(tt, &[1, 0, 1]);
            let gath = g.gather(sel, vec![Some(0), None, Some(5), Some(3)], 2, 2);
            let rs = g.row_sums(gath);
            let q = g.mul(rs, rs);
            let q = g.sub(q, rs);
            let q = g.scale(q, 0.7);
            let q = g.add_scalar(q, 1.0);
            let q2 = g.add(q, q);
            g.sum(q2)
        });
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut store = ParamStore::new();
        let a = store.add("a", Matrix::scalar(2.0));
        let mut g = Graph::new();
        let av = g.param(&store, a);
        let d = g.detach(av);
        let y = g.mul(d, d);
        let s = g.sum(y);
        let grads = g.backward(s, &store);
        assert_eq!(grads.get(a).data(), &[0.0]);
    }
}
