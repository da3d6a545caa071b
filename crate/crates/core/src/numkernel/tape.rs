//! Matrix-level reverse-mode tape.
//!
//! A [`Tape`] records one forward pass. Every op stores its value together
//! with the handles of its inputs, and [`Tape::backward`] walks the record in
//! reverse, accumulating adjoints. Tapes are rebuilt for every forward pass.

use super::kernels::{self, gemm, leaky_sigmoid, leaky_sigmoid_grad, sigmoid, NORM_EPS, PRED_FLOOR};
use super::Matrix;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Deliberate gradient bugs, used as negative controls for gradient checks.
#[doc(hidden)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradFault {
    /// Leaky ReLU backward passes negative inputs with slope 1.
    LeakyReluSlope,
    /// Softmax backward drops the `-(dy . y)` centring term.
    SoftmaxJacobian,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Transpose(Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Scale(Var, f64),
    DivScalar(Var, Var),
    Exp(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    LeakySigmoid(Var, f64),
    ConcatCols(Var, Var),
    RowBlock(Var, usize),
    GatherRows(Var, Vec<usize>),
    PairSum(Var, Var),
    Reshape(Var),
    NormalizeRows(Var),
    RowDot(Var, Var),
    MixPair(Var, Var, Var),
    SoftmaxRows(Var),
    KlRows(Var, Matrix),
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    fault: Option<GradFault>,
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Grads {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Grads {
    /// Gradient with respect to `v`; exactly zero when `v` did not influence
    /// the output.
    pub fn wrt(&self, v: Var) -> Matrix {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
    }

    pub fn touched(&self, v: Var) -> bool {
        self.grads[v.0].is_some()
    }
}

fn shape_err(op: &'static str, a: &Matrix, b: &Matrix) -> Error {
    Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape()))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    #[doc(hidden)]
    pub fn with_fault(fault: GradFault) -> Self {
        Self { nodes: Vec::new(), fault: Some(fault) }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Scalar value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[(0, 0)]
    }

    pub fn leaf(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = kernels::matmul(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    /// `a * b^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = kernels::matmul_nt(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::MatMulNt(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let v = kernels::add_bias(self.value(a), self.value(bias))?;
        Ok(self.push(v, Op::AddBias(a, bias)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(shape_err("add", x, y));
        }
        let mut v = x.clone();
        v.axpy(1.0, y);
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x * s);
        self.push(v, Op::Scale(a, s))
    }

    /// Divides every entry of `a` by the `1 x 1` node `s`.
    pub fn div_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        let sv = self.value(s);
        if sv.shape() != (1, 1) {
            return Err(Error::shape("div_scalar", format!("divisor {:?}", sv.shape())));
        }
        let d = sv[(0, 0)];
        let v = self.value(a).map(|x| x / d);
        Ok(self.push(v, Op::DivScalar(a, s)))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = kernels::relu(self.value(a));
        self.push(v, Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let v = kernels::leaky_relu(self.value(a), slope);
        self.push(v, Op::LeakyRelu(a, slope))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn leaky_sigmoid(&mut self, a: Var, gamma: f64) -> Var {
        let v = self.value(a).map(|x| leaky_sigmoid(x, gamma));
        self.push(v, Op::LeakySigmoid(a, gamma))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = kernels::concat_cols(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::ConcatCols(a, b)))
    }

    /// Rows `start..start + len` of `a`.
    pub fn row_block(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let x = self.value(a);
        if start + len > x.rows() {
            return Err(Error::shape(
                "row_block",
                format!("rows {start}..{} of {:?}", start + len, x.shape()),
            ));
        }
        let idx: Vec<usize> = (start..start + len).collect();
        let v = x.select_rows(&idx);
        Ok(self.push(v, Op::RowBlock(a, start)))
    }

    /// Row `idx[k]` of `a` becomes row `k` of the output.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let x = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= x.rows()) {
            return Err(Error::shape("gather_rows", format!("row {bad} of {:?}", x.shape())));
        }
        let v = x.select_rows(idx);
        Ok(self.push(v, Op::GatherRows(a, idx.to_vec())))
    }

    /// All pairwise row sums: output row `i * C + j` is `a_i + b_j`.
    pub fn pair_sum(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.cols() != y.cols() {
            return Err(shape_err("pair_sum", x, y));
        }
        let (br, cr, k) = (x.rows(), y.rows(), x.cols());
        let mut data = Vec::with_capacity(br * cr * k);
        for i in 0..br {
            let xi = x.row(i);
            for j in 0..cr {
                data.extend(xi.iter().zip(y.row(j)).map(|(p, q)| p + q));
            }
        }
        let v = Matrix::from_raw(br * cr, k, data);
        Ok(self.push(v, Op::PairSum(a, b)))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let x = self.value(a);
        if x.len() != rows * cols {
            return Err(Error::shape("reshape", format!("{:?} to ({rows}, {cols})", x.shape())));
        }
        let v = Matrix::from_raw(rows, cols, x.as_slice().to_vec());
        Ok(self.push(v, Op::Reshape(a)))
    }

    pub fn normalize_rows(&mut self, a: Var) -> Var {
        let v = kernels::l2_normalize_rows(self.value(a));
        self.push(v, Op::NormalizeRows(a))
    }

    /// Row-wise dot products, `B x 1`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(shape_err("row_dot", x, y));
        }
        let data = x.row_iter().zip(y.row_iter()).map(|(p, q)| dot(p, q)).collect();
        let v = Matrix::from_raw(x.rows(), 1, data);
        Ok(self.push(v, Op::RowDot(a, b)))
    }

    /// Row-wise convex mix `w_i0 * a_i + w_i1 * b_i` with `w` of shape `B x 2`.
    pub fn mix_pair(&mut self, w: Var, a: Var, b: Var) -> Result<Var> {
        let (wv, x, y) = (self.value(w), self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(shape_err("mix_pair", x, y));
        }
        if wv.shape() != (x.rows(), 2) {
            return Err(Error::shape("mix_pair", format!("weights {:?}", wv.shape())));
        }
        let v = Matrix::from_fn(x.rows(), x.cols(), |i, j| {
            wv[(i, 0)] * x[(i, j)] + wv[(i, 1)] * y[(i, j)]
        });
        Ok(self.push(v, Op::MixPair(w, a, b)))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for i in 0..v.rows() {
            kernels::softmax_in_place(v.row_mut(i), 1.0);
        }
        self.push(v, Op::SoftmaxRows(a))
    }

    /// Mean row KL divergence from a constant `target` to `pred`.
    pub fn kl_rows(&mut self, target: &Matrix, pred: Var) -> Result<Var> {
        let loss = kernels::kl_rows(target, self.value(pred))?;
        Ok(self.push(Matrix::scalar(loss), Op::KlRows(pred, target.clone())))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Matrix::scalar(s), Op::Sum(a))
    }

    /// Reverse sweep from `output`, seeded with ones.
    pub fn backward(&self, output: Var) -> Grads {
        let n = output.0 + 1;
        let mut grads: Vec<Option<Matrix>> = vec![None; n];
        let out = self.value(output);
        grads[output.0] = Some(Matrix::filled(out.rows(), out.cols(), 1.0));

        for idx in (0..n).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        Grads {
            shapes: self.nodes[..n].iter().map(|n| n.value.shape()).collect(),
            grads,
        }
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                accumulate(grads, *a, gemm(g, false, val(*b), true));
                accumulate(grads, *b, gemm(val(*a), true, g, false));
            }
            Op::MatMulNt(a, b) => {
                accumulate(grads, *a, gemm(g, false, val(*b), false));
                accumulate(grads, *b, gemm(g, true, val(*a), false));
            }
            Op::Transpose(a) => accumulate(grads, *a, g.transpose()),
            Op::AddBias(a, bias) => {
                accumulate(grads, *a, g.clone());
                let mut gb = Matrix::zeros(1, g.cols());
                for r in g.row_iter() {
                    for (s, x) in gb.as_mut_slice().iter_mut().zip(r) {
                        *s += x;
                    }
                }
                accumulate(grads, *bias, gb);
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Scale(a, s) => accumulate(grads, *a, g.map(|x| x * s)),
            Op::DivScalar(a, s) => {
                let d = val(*s)[(0, 0)];
                accumulate(grads, *a, g.map(|x| x / d));
                let num: f64 = g.as_slice().iter().zip(val(*a).as_slice()).map(|(p, q)| p * q).sum();
                accumulate(grads, *s, Matrix::scalar(-num / (d * d)));
            }
            Op::Exp(a) => accumulate(grads, *a, hadamard(g, y)),
            Op::Relu(a) => {
                let x = val(*a);
                accumulate(grads, *a, zip_map(g, x, |gi, xi| if xi > 0.0 { gi } else { 0.0 }));
            }
            Op::LeakyRelu(a, slope) => {
                let slope = if self.fault == Some(GradFault::LeakyReluSlope) { 1.0 } else { *slope };
                let x = val(*a);
                accumulate(grads, *a, zip_map(g, x, |gi, xi| if xi > 0.0 { gi } else { slope * gi }));
            }
            Op::Sigmoid(a) => accumulate(grads, *a, zip_map(g, y, |gi, yi| gi * yi * (1.0 - yi))),
            Op::LeakySigmoid(a, gamma) => {
                let x = val(*a);
                accumulate(grads, *a, zip_map(g, x, |gi, xi| gi * leaky_sigmoid_grad(xi, *gamma)));
            }
            Op::ConcatCols(a, b) => {
                let ca = val(*a).cols();
                let cb = val(*b).cols();
                let ga = Matrix::from_fn(g.rows(), ca, |i, j| g[(i, j)]);
                let gb = Matrix::from_fn(g.rows(), cb, |i, j| g[(i, ca + j)]);
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
            Op::RowBlock(a, start) => {
                let x = val(*a);
                let mut ga = Matrix::zeros(x.rows(), x.cols());
                for i in 0..g.rows() {
                    ga.row_mut(start + i).copy_from_slice(g.row(i));
                }
                accumulate(grads, *a, ga);
            }
            Op::GatherRows(a, idx) => {
                let x = val(*a);
                let mut ga = Matrix::zeros(x.rows(), x.cols());
                for (k, &i) in idx.iter().enumerate() {
                    for (s, v) in ga.row_mut(i).iter_mut().zip(g.row(k)) {
                        *s += v;
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::PairSum(a, b) => {
                let (br, cr) = (val(*a).rows(), val(*b).rows());
                let k = g.cols();
                let mut ga = Matrix::zeros(br, k);
                let mut gb = Matrix::zeros(cr, k);
                for i in 0..br {
                    for j in 0..cr {
                        let gr = g.row(i * cr + j);
                        for (s, v) in ga.row_mut(i).iter_mut().zip(gr) {
                            *s += v;
                        }
                        for (s, v) in gb.row_mut(j).iter_mut().zip(gr) {
                            *s += v;
                        }
                    }
                }
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
            Op::Reshape(a) => {
                let (r, c) = val(*a).shape();
                accumulate(grads, *a, Matrix::from_raw(r, c, g.as_slice().to_vec()));
            }
            Op::NormalizeRows(a) => {
                let x = val(*a);
                let mut ga = g.clone();
                for i in 0..x.rows() {
                    let norm = dot(x.row(i), x.row(i)).sqrt();
                    if norm > NORM_EPS {
                        let yi = y.row(i);
                        let proj = dot(yi, g.row(i));
                        for (s, yv) in ga.row_mut(i).iter_mut().zip(yi) {
                            *s = (*s - yv * proj) / norm;
                        }
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::RowDot(a, b) => {
                let (x, z) = (val(*a), val(*b));
                let ga = Matrix::from_fn(x.rows(), x.cols(), |i, j| g[(i, 0)] * z[(i, j)]);
                let gb = Matrix::from_fn(x.rows(), x.cols(), |i, j| g[(i, 0)] * x[(i, j)]);
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
            Op::MixPair(w, a, b) => {
                let (wv, x, z) = (val(*w), val(*a), val(*b));
                let gw = Matrix::from_fn(x.rows(), 2, |i, k| {
                    let src = if k == 0 { x.row(i) } else { z.row(i) };
                    dot(g.row(i), src)
                });
                let ga = Matrix::from_fn(x.rows(), x.cols(), |i, j| wv[(i, 0)] * g[(i, j)]);
                let gb = Matrix::from_fn(x.rows(), x.cols(), |i, j| wv[(i, 1)] * g[(i, j)]);
                accumulate(grads, *w, gw);
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
            Op::SoftmaxRows(a) => {
                let centre = self.fault != Some(GradFault::SoftmaxJacobian);
                let mut ga = Matrix::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    let yi = y.row(i);
                    let gi = g.row(i);
                    let proj = if centre { dot(yi, gi) } else { 0.0 };
                    for ((s, yv), gv) in ga.row_mut(i).iter_mut().zip(yi).zip(gi) {
                        *s = yv * (gv - proj);
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::KlRows(pred, target) => {
                let p = val(*pred);
                let scale = g[(0, 0)] / p.rows().max(1) as f64;
                let gp = zip_map(target, p, |t, pv| {
                    if t > 0.0 && pv > PRED_FLOOR { -scale * t / pv } else { 0.0 }
                });
                accumulate(grads, *pred, gp);
            }
            Op::Sum(a) => {
                let (r, c) = val(*a).shape();
                accumulate(grads, *a, Matrix::filled(r, c, g[(0, 0)]));
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(acc) => acc.axpy(1.0, &g),
        slot @ None => *slot = Some(g),
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn hadamard(a: &Matrix, b: &Matrix) -> Matrix {
    zip_map(a, b, |x, y| x * y)
}

fn zip_map(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    let data = a.as_slice().iter().zip(b.as_slice()).map(|(&x, &y)| f(x, y)).collect();
    Matrix::from_raw(a.rows(), a.cols(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkernel::finite_difference_gradient;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const STEP: f64 = 1e-4;
    const TOL: f64 = 1e-5;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn max_rel_err(a: &Matrix, n: &Matrix) -> f64 {
        a.as_slice()
            .iter()
            .zip(n.as_slice())
            .filter(|(x, y)| x.abs() + y.abs() >= 1e-8)
            .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()))
            .fold(0.0, f64::max)
    }

    /// Builds `f` on a fresh tape for the given inputs and checks every
    /// input's analytic gradient against central differences.
    fn check(inputs: &[Matrix], f: impl Fn(&mut Tape, &[Var]) -> Var) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|m| tape.leaf(m.clone())).collect();
        let out = f(&mut tape, &vars);
        let grads = tape.backward(out);
        for (k, m) in inputs.iter().enumerate() {
            let numeric = finite_difference_gradient(
                |x| {
                    let mut t = Tape::new();
                    let vs: Vec<Var> = inputs
                        .iter()
                        .enumerate()
                        .map(|(j, mm)| t.leaf(if j == k { x.clone() } else { mm.clone() }))
                        .collect();
                    let o = f(&mut t, &vs);
                    t.scalar(o)
                },
                m,
                STEP,
            );
            let err = max_rel_err(&grads.wrt(vars[k]), &numeric);
            assert!(err < TOL, "input {k}: rel err {err}");
        }
    }

    /// Weighted sum so that every output entry gets a distinct adjoint.
    fn probe(t: &mut Tape, v: Var, seed: u64) -> Var {
        let (r, c) = t.value(v).shape();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = t.leaf(random(&mut rng, r, c));
        let dotted = t.row_dot(v, w).unwrap();
        t.sum(dotted)
    }

    #[test]
    fn gradients_of_every_kernel_match_finite_differences() {
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random(&mut rng, 3, 4);
            let b = random(&mut rng, 4, 5);
            let c = random(&mut rng, 2, 4);
            let bias = random(&mut rng, 1, 4);
            let s = Matrix::scalar(rng.random_range(0.5..2.0));

            check(&[a.clone(), b.clone()], |t, v| {
                let o = t.matmul(v[0], v[1]).unwrap();
                probe(t, o, seed)
            });
            check(&[a.clone(), c.clone()], |t, v| {
                let o = t.matmul_nt(v[0], v[1]).unwrap();
                probe(t, o, seed)
            });
            check(std::slice::from_ref(&a), |t, v| {
                let o = t.transpose(v[0]);
                probe(t, o, seed)
            });
            check(&[a.clone(), bias.clone()], |t, v| {
                let o = t.add_bias(v[0], v[1]).unwrap();
                probe(t, o, seed)
            });
            check(&[a.clone(), s.clone()], |t, v| {
                let o = t.div_scalar(v[0], v[1]).unwrap();
                probe(t, o, seed)
            });
            check(std::slice::from_ref(&s), |t, v| {
                let o = t.exp(v[0]);
                probe(t, o, seed)
            });
            check(std::slice::from_ref(&a), |t, v| {
                let o = t.relu(v[0]);
                probe(t, o, seed)
            });
            check(std::slice::from_ref(&a), |t, v| {
                let o = t.leaky_relu(v[0], 0.01);
                probe(t, o, seed)
            });
            check(std::slice::from_ref(&a), |t, v| {
                let o = t.sigmoid(v[0]);
                probe(t, o, seed)
            });
            check(std::slice::from_ref(&a), |t, v| {
                let o = t.leaky_sigmoid(v[0], 0.1);
                probe(t, o, seed)
            });
            check(&[a.clone(), c.clone()], |t, v| {
                let o = t.row_block(v[0], 1, 2).unwrap();
                let o = t.concat_cols(o, v[1]).unwrap();
                probe(t, o, seed)
            });
            check(std::slice::from_ref(&a), |t, v| {
                let o = t.gather_rows(v[0], &[2, 0, 2, 1]).unwrap();
                probe(t, o, seed)
            });
            check(&[a.clone(), c.clone()], |t, v| {
                let o = t.pair_sum(v[0], v[1]).unwrap();
                let o = t.reshape(o, 12, 2).unwrap();
                probe(t, o, seed)
            });
            check(std::slice::from_ref(&a), |t, v| {
                let o = t.normalize_rows(v[0]);
                probe(t, o, seed)
            });
            check(std::slice::from_ref(&a), |t, v| {
                let o = t.softmax_rows(v[0]);
                probe(t, o, seed)
            });
            check(&[random(&mut rng, 3, 2), a.clone(), random(&mut rng, 3, 4)], |t, v| {
                let o = t.mix_pair(v[0], v[1], v[2]).unwrap();
                probe(t, o, seed)
            });
            let target = kernels::row_softmax(&random(&mut rng, 3, 4), 0.5).unwrap();
            check(std::slice::from_ref(&a), |t, v| {
                let p = t.softmax_rows(v[0]);
                t.kl_rows(&target, p).unwrap()
            });
        }
    }

    #[test]
    fn untouched_leaves_get_exact_zero() {
        let mut t = Tape::new();
        let a = t.leaf(Matrix::filled(2, 2, 1.0));
        let unused = t.leaf(Matrix::filled(3, 1, 5.0));
        let s = t.sum(a);
        let g = t.backward(s);
        assert!(!g.touched(unused));
        assert_eq!(g.wrt(unused), Matrix::zeros(3, 1));
        assert_eq!(g.wrt(a), Matrix::filled(2, 2, 1.0));
    }

    #[test]
    fn shape_errors_are_reported() {
        let mut t = Tape::new();
        let a = t.leaf(Matrix::zeros(2, 3));
        let b = t.leaf(Matrix::zeros(2, 2));
        assert!(matches!(t.matmul(a, b), Err(Error::Shape { .. })));
        assert!(matches!(t.add(a, b), Err(Error::Shape { .. })));
        assert!(matches!(t.row_block(a, 1, 2), Err(Error::Shape { .. })));
        assert!(matches!(t.gather_rows(a, &[2]), Err(Error::Shape { .. })));
        assert!(matches!(t.reshape(a, 4, 2), Err(Error::Shape { .. })));
    }
}
