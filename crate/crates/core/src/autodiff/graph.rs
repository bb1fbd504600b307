//! Tape of tensor operations with reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so walking the tape backwards
//! visits every node after all of its consumers.

use super::tensor::{gemm, Tensor};
use super::AutodiffError;

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
    MatMul(Var, Var),
    /// `x + b` with `b` a single row broadcast over the rows of `x`.
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    /// Column-wise max over rows; `argmax[c]` is the winning row.
    MaxPoolRows(Var, Vec<usize>),
    RepeatRows(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Reshape(Var),
    SliceCols(Var, usize),
    SelectRows(Var, Vec<usize>),
    SelectCols(Var, Vec<usize>),
    /// Row-wise map with per-row Jacobians stored as `rows x out x in`.
    RowMap(Var, Vec<f64>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros shaped like `like` when nothing reached it.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.rows(), like.cols()))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn shape_err(what: &str, a: (usize, usize), b: (usize, usize)) -> AutodiffError {
    AutodiffError::Shape(format!("{what}: {}x{} vs {}x{}", a.0, a.1, b.0, b.1))
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

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.rows() {
            return Err(shape_err("matmul", av.shape(), bv.shape()));
        }
        let (m, k, n) = (av.rows(), av.cols(), bv.cols());
        let mut out = Tensor::zeros(m, n);
        gemm(m, k, n, 1.0, av.data(), false, bv.data(), false, 0.0, out.data_mut());
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var, AutodiffError> {
        let (xv, bv) = (self.value(x), self.value(b));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(shape_err("add_bias", xv.shape(), bv.shape()));
        }
        let mut out = xv.clone();
        let cols = xv.cols();
        for row in out.data_mut().chunks_mut(cols) {
            for (o, bb) in row.iter_mut().zip(bv.data()) {
                *o += bb;
            }
        }
        let rg = self.rg(&[x, b]);
        Ok(self.push(out, Op::AddBias(x, b), rg))
    }

    fn binary(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor, AutodiffError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err(what, av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::new(av.rows(), av.cols(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let out = self.binary(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let out = self.binary(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let out = self.binary(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let out = self.value(a).map(f);
        let rg = self.rg(&[a]);
        self.push(out, op, rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, Op::Scale(a, s), |x| x * s)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, Op::AddScalar(a), |x| x + s)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log(a), f64::ln)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, Op::Clamp(a, lo, hi), |x| x.clamp(lo, hi))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Column-wise maximum over rows. Ties go to the lowest row index.
    pub fn max_pool_rows(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let av = self.value(a);
        if av.rows() == 0 {
            return Err(AutodiffError::Shape("max-pool over zero rows".into()));
        }
        let cols = av.cols();
        let mut best = av.row_slice(0).to_vec();
        let mut argmax = vec![0usize; cols];
        for r in 1..av.rows() {
            for (c, v) in av.row_slice(r).iter().enumerate() {
                if *v > best[c] {
                    best[c] = *v;
                    argmax[c] = r;
                }
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::row(&best), Op::MaxPoolRows(a, argmax), rg))
    }

    pub fn repeat_rows(&mut self, a: Var, n: usize) -> Result<Var, AutodiffError> {
        let av = self.value(a);
        if av.rows() != 1 {
            return Err(AutodiffError::Shape("repeat_rows expects a single row".into()));
        }
        let data = av.data().repeat(n);
        let out = Tensor::new(n, av.cols(), data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::RepeatRows(a), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let rows = self.value(parts[0]).rows();
        if parts.iter().any(|p| self.value(*p).rows() != rows) {
            return Err(AutodiffError::Shape("concat_cols with differing row counts".into()));
        }
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row_slice(r));
            }
        }
        let out = Tensor::new(rows, cols, data)?;
        let rg = self.rg(parts);
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let cols = self.value(parts[0]).cols();
        if parts.iter().any(|p| self.value(*p).cols() != cols) {
            return Err(AutodiffError::Shape("concat_rows with differing column counts".into()));
        }
        let rows: usize = parts.iter().map(|p| self.value(*p).rows()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for p in parts {
            data.extend_from_slice(self.value(*p).data());
        }
        let out = Tensor::new(rows, cols, data)?;
        let rg = self.rg(parts);
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var, AutodiffError> {
        let out = Tensor::new(rows, cols, self.value(a).data().to_vec())?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Reshape(a), rg))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let av = self.value(a);
        if start + len > av.cols() {
            return Err(AutodiffError::Shape(format!(
                "slice {start}..{} of {} columns",
                start + len,
                av.cols()
            )));
        }
        let mut data = Vec::with_capacity(av.rows() * len);
        for r in 0..av.rows() {
            data.extend_from_slice(&av.row_slice(r)[start..start + len]);
        }
        let out = Tensor::new(av.rows(), len, data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::SliceCols(a, start), rg))
    }

    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var, AutodiffError> {
        let av = self.value(a);
        if rows.iter().any(|r| *r >= av.rows()) {
            return Err(AutodiffError::Shape("row index out of range".into()));
        }
        let mut data = Vec::with_capacity(rows.len() * av.cols());
        for r in rows {
            data.extend_from_slice(av.row_slice(*r));
        }
        let out = Tensor::new(rows.len(), av.cols(), data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::SelectRows(a, rows.to_vec()), rg))
    }

    pub fn select_cols(&mut self, a: Var, cols: &[usize]) -> Result<Var, AutodiffError> {
        let av = self.value(a);
        if cols.iter().any(|c| *c >= av.cols()) {
            return Err(AutodiffError::Shape("column index out of range".into()));
        }
        let mut data = Vec::with_capacity(av.rows() * cols.len());
        for r in 0..av.rows() {
            let row = av.row_slice(r);
            data.extend(cols.iter().map(|c| row[*c]));
        }
        let out = Tensor::new(av.rows(), cols.len(), data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::SelectCols(a, cols.to_vec()), rg))
    }

    /// Applies a differentiable row-wise function supplied as values plus
    /// Jacobians: `f(row)` returns the output row and its `out x in`
    /// Jacobian (row-major).
    pub fn row_map<E>(
        &mut self,
        a: Var,
        out_cols: usize,
        mut f: impl FnMut(&[f64]) -> Result<(Vec<f64>, Vec<f64>), E>,
    ) -> Result<Var, E>
    where
        E: From<AutodiffError>,
    {
        let av = self.value(a);
        let (rows, in_cols) = av.shape();
        let mut data = Vec::with_capacity(rows * out_cols);
        let mut jac = Vec::with_capacity(rows * out_cols * in_cols);
        for r in 0..rows {
            let (y, j) = f(av.row_slice(r))?;
            if y.len() != out_cols || j.len() != out_cols * in_cols {
                return Err(AutodiffError::Shape("row_map output has the wrong size".into()).into());
            }
            data.extend_from_slice(&y);
            jac.extend_from_slice(&j);
        }
        let out = Tensor::new(rows, out_cols, data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::RowMap(a, jac), rg))
    }

    /// Reverse pass from a scalar output.
    pub fn backward(&self, root: Var) -> Result<Gradients, AutodiffError> {
        if self.value(root).len() != 1 {
            return Err(AutodiffError::Shape("backward from a non-scalar".into()));
        }
        self.backward_with_seed(root, Tensor::scalar(1.0))
    }

    /// Reverse pass seeded with an arbitrary cotangent for `root`.
    pub fn backward_with_seed(&self, root: Var, seed: Tensor) -> Result<Gradients, AutodiffError> {
        if seed.shape() != self.value(root).shape() {
            return Err(shape_err("seed", seed.shape(), self.value(root).shape()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(seed);
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(&node.op, &node.value, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| {
            let (r, c) = self.nodes[v.0].value.shape();
            Tensor::zeros(r, c)
        });
        f(slot.data_mut());
    }

    fn propagate(&self, op: &Op, out: &Tensor, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                self.accumulate(grads, *a, |da| gemm(m, n, k, 1.0, gd, false, bv.data(), true, 1.0, da));
                self.accumulate(grads, *b, |db| gemm(k, m, n, 1.0, av.data(), true, gd, false, 1.0, db));
            }
            Op::AddBias(x, b) => {
                self.accumulate(grads, *x, |dx| add_into(dx, gd));
                let cols = out.cols();
                self.accumulate(grads, *b, |db| {
                    for row in gd.chunks(cols) {
                        add_into(db, row);
                    }
                });
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |d| add_into(d, gd));
                self.accumulate(grads, *b, |d| add_into(d, gd));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, |d| add_into(d, gd));
                self.accumulate(grads, *b, |d| {
                    for (x, y) in d.iter_mut().zip(gd) {
                        *x -= y;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |d| {
                    for i in 0..d.len() {
                        d[i] += gd[i] * bv[i];
                    }
                });
                self.accumulate(grads, *b, |d| {
                    for i in 0..d.len() {
                        d[i] += gd[i] * av[i];
                    }
                });
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, |d| {
                for (x, y) in d.iter_mut().zip(gd) {
                    *x += s * y;
                }
            }),
            Op::AddScalar(a) => self.accumulate(grads, *a, |d| add_into(d, gd)),
            Op::Relu(a) => {
                let od = out.data();
                self.accumulate(grads, *a, |d| {
                    for i in 0..d.len() {
                        if od[i] > 0.0 {
                            d[i] += gd[i];
                        }
                    }
                })
            }
            Op::Exp(a) => {
                let od = out.data();
                self.accumulate(grads, *a, |d| {
                    for i in 0..d.len() {
                        d[i] += gd[i] * od[i];
                    }
                })
            }
            Op::Log(a) => {
                let av = self.value(*a).data();
                self.accumulate(grads, *a, |d| {
                    for i in 0..d.len() {
                        d[i] += gd[i] / av[i];
                    }
                })
            }
            Op::Square(a) => {
                let av = self.value(*a).data();
                self.accumulate(grads, *a, |d| {
                    for i in 0..d.len() {
                        d[i] += 2.0 * av[i] * gd[i];
                    }
                })
            }
            Op::Clamp(a, lo, hi) => {
                let av = self.value(*a).data();
                self.accumulate(grads, *a, |d| {
                    for i in 0..d.len() {
                        if av[i] > *lo && av[i] < *hi {
                            d[i] += gd[i];
                        }
                    }
                })
            }
            Op::Sum(a) => {
                let s = gd[0];
                self.accumulate(grads, *a, |d| {
                    for x in d.iter_mut() {
                        *x += s;
                    }
                })
            }
            Op::MaxPoolRows(a, argmax) => {
                let cols = out.cols();
                self.accumulate(grads, *a, |d| {
                    for (c, r) in argmax.iter().enumerate() {
                        d[r * cols + c] += gd[c];
                    }
                })
            }
            Op::RepeatRows(a) => {
                let cols = out.cols();
                self.accumulate(grads, *a, |d| {
                    for row in gd.chunks(cols) {
                        add_into(d, row);
                    }
                })
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let pc = self.value(*p).cols();
                    let total = out.cols();
                    self.accumulate(grads, *p, |d| {
                        for (r, drow) in d.chunks_mut(pc).enumerate() {
                            add_into(drow, &gd[r * total + offset..r * total + offset + pc]);
                        }
                    });
                    offset += pc;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = self.value(*p).len();
                    self.accumulate(grads, *p, |d| add_into(d, &gd[offset..offset + n]));
                    offset += n;
                }
            }
            Op::Reshape(a) => self.accumulate(grads, *a, |d| add_into(d, gd)),
            Op::SliceCols(a, start) => {
                let in_cols = self.value(*a).cols();
                let len = out.cols();
                self.accumulate(grads, *a, |d| {
                    for (r, grow) in gd.chunks(len).enumerate() {
                        add_into(&mut d[r * in_cols + start..r * in_cols + start + len], grow);
                    }
                })
            }
            Op::SelectRows(a, rows) => {
                let cols = out.cols();
                self.accumulate(grads, *a, |d| {
                    for (i, r) in rows.iter().enumerate() {
                        add_into(&mut d[r * cols..(r + 1) * cols], &gd[i * cols..(i + 1) * cols]);
                    }
                })
            }
            Op::SelectCols(a, cols) => {
                let in_cols = self.value(*a).cols();
                let n = cols.len();
                self.accumulate(grads, *a, |d| {
                    for (r, grow) in gd.chunks(n).enumerate() {
                        for (j, c) in cols.iter().enumerate() {
                            d[r * in_cols + c] += grow[j];
                        }
                    }
                })
            }
            Op::RowMap(a, jac) => {
                let in_cols = self.value(*a).cols();
                let out_cols = out.cols();
                self.accumulate(grads, *a, |d| {
                    for r in 0..out.rows() {
                        let jr = &jac[r * out_cols * in_cols..(r + 1) * out_cols * in_cols];
                        let grow = &gd[r * out_cols..(r + 1) * out_cols];
                        let drow = &mut d[r * in_cols..(r + 1) * in_cols];
                        for (o, go) in grow.iter().enumerate() {
                            if *go == 0.0 {
                                continue;
                            }
                            for (i, dv) in drow.iter_mut().enumerate() {
                                *dv += go * jr[o * in_cols + i];
                            }
                        }
                    }
                })
            }
        }
    }
}

fn add_into(d: &mut [f64], g: &[f64]) {
    for (x, y) in d.iter_mut().zip(g) {
        *x += y;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::{grad_check, GradCheckOptions};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64, lo: f64, hi: f64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols).map(|_| rng.gen_range(lo..hi)).collect();
        Tensor::new(rows, cols, data).unwrap()
    }

    fn check(f: impl Fn(&mut Graph, Var) -> Result<Var, AutodiffError>, x: Tensor) {
        let report = grad_check(f, &x, &GradCheckOptions::default()).unwrap();
        assert!(report.passed(), "max rel err {} at {:?}", report.max_rel_error, report.failures);
    }

    #[test]
    fn linear_sum_matches_to_machine_precision() {
        let x = random(3, 4, 1, -1.0, 1.0);
        let report = grad_check(|g, x| Ok(g.sum(x)), &x, &GradCheckOptions::default()).unwrap();
        assert!(report.max_rel_error < 1e-10);
    }

    #[test]
    fn primitive_gradients_match_finite_differences() {
        let w = random(4, 3, 2, -1.0, 1.0);
        let other = random(3, 4, 3, -1.0, 1.0);
        check(
            |g, x| {
                let w = g.constant(w.clone());
                let y = g.matmul(x, w)?;
                let y = g.square(y);
                Ok(g.sum(y))
            },
            random(3, 4, 4, -1.0, 1.0),
        );
        check(
            |g, x| {
                let o = g.constant(other.clone());
                let y = g.mul(x, o)?;
                let z = g.add(y, x)?;
                Ok(g.sum(z))
            },
            random(3, 4, 5, -1.0, 1.0),
        );
        check(
            |g, x| {
                let y = g.relu(x);
                let y = g.square(y);
                Ok(g.sum(y))
            },
            // keep away from the kink
            random(3, 4, 6, -1.0, 1.0).map(|v| if v.abs() < 0.1 { v + 0.3 } else { v }),
        );
        check(
            |g, x| {
                let y = g.exp(x);
                let z = g.log(y);
                let z = g.mul(z, y)?;
                Ok(g.sum(z))
            },
            random(2, 3, 7, -1.0, 1.0),
        );
        check(
            |g, x| {
                let y = g.log(x);
                Ok(g.sum(y))
            },
            random(2, 3, 8, 0.5, 2.0),
        );
        check(
            |g, x| {
                let p = g.max_pool_rows(x)?;
                let p = g.square(p);
                Ok(g.sum(p))
            },
            random(6, 4, 9, -1.0, 1.0),
        );
    }

    #[test]
    fn structural_ops_route_gradients() {
        check(
            |g, x| {
                let a = g.slice_cols(x, 1, 2)?;
                let b = g.select_rows(x, &[2, 0])?;
                let b = g.select_cols(b, &[3, 0])?;
                let c = g.concat_rows(&[a, b])?;
                let d = g.concat_cols(&[c, c])?;
                let r = g.reshape(d, 4, 5)?;
                let s = g.square(r);
                let s = g.scale(s, 0.7);
                let s = g.add_scalar(s, 2.0);
                let s = g.clamp(s, -10.0, 10.0);
                Ok(g.sum(s))
            },
            random(3, 4, 10, -1.0, 1.0),
        );
        check(
            |g, x| {
                let row = g.select_rows(x, &[1])?;
                let rep = g.repeat_rows(row, 3)?;
                let y = g.sub(rep, x)?;
                let b = g.constant(Tensor::row(&[0.1, 0.2, -0.3, 0.4]));
                let y = g.add_bias(y, b)?;
                let y = g.square(y);
                Ok(g.sum(y))
            },
            random(3, 4, 11, -1.0, 1.0),
        );
    }

    #[test]
    fn row_map_uses_supplied_jacobians() {
        // f(x, y) = (x*y, x + y)
        check(
            |g, x| {
                let y = g.row_map::<AutodiffError>(x, 2, |r| {
                    Ok((vec![r[0] * r[1], r[0] + r[1]], vec![r[1], r[0], 1.0, 1.0]))
                })?;
                let y = g.square(y);
                Ok(g.sum(y))
            },
            random(3, 2, 12, -1.0, 1.0),
        );
    }

    #[test]
    fn max_pool_ties_go_to_lowest_row() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(3, 2, vec![1.0, 5.0, 1.0, 5.0, 0.0, 5.0]).unwrap());
        let p = g.max_pool_rows(x).unwrap();
        let s = g.sum(p);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let c = g.constant(Tensor::row(&[1.0, 2.0]));
        let x = g.leaf(Tensor::row(&[3.0, 4.0]));
        let y = g.mul(c, x).unwrap();
        let s = g.sum(y);
        let grads = g.backward(s).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(x).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn shape_errors_are_reported() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::zeros(2, 3));
        let b = g.leaf(Tensor::zeros(2, 3));
        assert!(g.matmul(a, b).is_err());
        assert!(g.slice_cols(a, 2, 2).is_err());
        let e = g.leaf(Tensor::zeros(0, 3));
        assert!(g.max_pool_rows(e).is_err());
        assert!(g.backward(a).is_err());
    }
}
