//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! The graph is rebuilt per forward pass (define-by-run): ops append nodes to
//! a [`Tape`] in topological order, and [`Tape::backward`] walks the nodes in
//! reverse accumulating vector-Jacobian products. Leaves registered with
//! [`Tape::leaf`] receive gradients; [`Tape::constant`] nodes do not and cut
//! the backward walk short.
//!
//! Probabilities are clamped to [`PROB_CLAMP`] before any logarithm, so no op
//! produces NaN/Inf for inputs in its documented domain.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Lower clamp applied to probabilities before logarithms.
pub const PROB_CLAMP: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Constant,
    /// [m,k] x [k,n] -> [m,n]
    MatMul(Var, Var),
    /// [m,n] + [n] broadcast over rows
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Tanh(Var),
    /// ln(max(x, PROB_CLAMP)); derivative 0 in the clamped region
    LnClamped(Var),
    /// rowwise stable softmax on [m,n]
    SoftmaxRows(Var),
    /// [m,n] -> [m]
    SumRows(Var),
    /// any shape -> scalar
    SumAll(Var),
    MeanAll(Var),
    /// pick a[i, idx[i]] -> [m]
    SelectCols(Var, Vec<usize>),
}

struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct GradStore {
    grads: Vec<Option<Tensor>>,
}

impl GradStore {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`, or zeros of the given shape if the loss never touched it.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor {
        match self.get(v) {
            Some(g) => g.clone(),
            None => Tensor::zeros(shape.to_vec()),
        }
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Register a gradient-tracked input.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t, true)
    }

    /// Register a constant; backward never flows into it.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Op::Constant, t, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn binary_elementwise(&mut self, a: Var, b: Var, context: &'static str) -> Result<()> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !ta.same_shape(tb) {
            return Err(Error::ShapeMismatch {
                context,
                expected: ta.shape().to_vec(),
                got: tb.shape().to_vec(),
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !ta.is_matrix() || !tb.is_matrix() || ta.cols() != tb.rows() {
            return Err(Error::ShapeMismatch {
                context: "matmul",
                expected: ta.shape().to_vec(),
                got: tb.shape().to_vec(),
            });
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let mut out = vec![0.0; m * n];
        let (da, db) = (ta.data(), tb.data());
        for i in 0..m {
            for p in 0..k {
                let aip = da[i * k + p];
                let brow = &db[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += aip * brow[j];
                }
            }
        }
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(Op::MatMul(a, b), Tensor::from_vec(vec![m, n], out)?, rg))
    }

    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(bias));
        if !ta.is_matrix() || tb.shape() != [ta.cols()] {
            return Err(Error::ShapeMismatch {
                context: "add_bias",
                expected: vec![ta.cols()],
                got: tb.shape().to_vec(),
            });
        }
        let (m, n) = (ta.rows(), ta.cols());
        let mut out = ta.data().to_vec();
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] += tb.data()[j];
            }
        }
        let rg = self.requires(a) || self.requires(bias);
        Ok(self.push(Op::AddBias(a, bias), Tensor::from_vec(vec![m, n], out)?, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise(a, b, "add")?;
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(Op::Add(a, b), Tensor::from_vec(shape, out)?, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise(a, b, "sub")?;
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x - y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(Op::Sub(a, b), Tensor::from_vec(shape, out)?, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise(a, b, "mul")?;
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(Op::Mul(a, b), Tensor::from_vec(shape, out)?, rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out: Vec<f64> = self.value(a).data().iter().map(|x| x * c).collect();
        let shape = self.value(a).shape().to_vec();
        let rg = self.requires(a);
        self.push(
            Op::Scale(a, c),
            Tensor::from_vec(shape, out).expect("shape preserved"),
            rg,
        )
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out: Vec<f64> = self.value(a).data().iter().map(|x| x + c).collect();
        let shape = self.value(a).shape().to_vec();
        let rg = self.requires(a);
        self.push(
            Op::AddScalar(a),
            Tensor::from_vec(shape, out).expect("shape preserved"),
            rg,
        )
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out: Vec<f64> = self.value(a).data().iter().map(|x| x.max(0.0)).collect();
        let shape = self.value(a).shape().to_vec();
        let rg = self.requires(a);
        self.push(
            Op::Relu(a),
            Tensor::from_vec(shape, out).expect("shape preserved"),
            rg,
        )
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out: Vec<f64> = self.value(a).data().iter().map(|x| x.tanh()).collect();
        let shape = self.value(a).shape().to_vec();
        let rg = self.requires(a);
        self.push(
            Op::Tanh(a),
            Tensor::from_vec(shape, out).expect("shape preserved"),
            rg,
        )
    }

    /// ln(max(x, PROB_CLAMP)).
    pub fn ln_clamped(&mut self, a: Var) -> Var {
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .map(|x| x.max(PROB_CLAMP).ln())
            .collect();
        let shape = self.value(a).shape().to_vec();
        let rg = self.requires(a);
        self.push(
            Op::LnClamped(a),
            Tensor::from_vec(shape, out).expect("shape preserved"),
            rg,
        )
    }

    /// Rowwise stable softmax of a [m,n] matrix.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        if !ta.is_matrix() {
            return Err(Error::ShapeMismatch {
                context: "softmax_rows",
                expected: vec![0, 0],
                got: ta.shape().to_vec(),
            });
        }
        let (m, n) = (ta.rows(), ta.cols());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = ta.row(i);
            let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let mut sum = 0.0;
            for j in 0..n {
                let e = (row[j] - max).exp();
                out[i * n + j] = e;
                sum += e;
            }
            for j in 0..n {
                out[i * n + j] /= sum;
            }
        }
        let rg = self.requires(a);
        Ok(self.push(
            Op::SoftmaxRows(a),
            Tensor::from_vec(vec![m, n], out)?,
            rg,
        ))
    }

    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        if !ta.is_matrix() {
            return Err(Error::ShapeMismatch {
                context: "sum_rows",
                expected: vec![0, 0],
                got: ta.shape().to_vec(),
            });
        }
        let m = ta.rows();
        let out: Vec<f64> = (0..m).map(|i| ta.row(i).iter().sum()).collect();
        let rg = self.requires(a);
        Ok(self.push(Op::SumRows(a), Tensor::from_vec(vec![m], out)?, rg))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().sum();
        let rg = self.requires(a);
        self.push(Op::SumAll(a), Tensor::scalar(s), rg)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s: f64 = t.data().iter().sum::<f64>() / t.len() as f64;
        let rg = self.requires(a);
        self.push(Op::MeanAll(a), Tensor::scalar(s), rg)
    }

    /// out[i] = a[i, idx[i]] for a [m,n] matrix.
    pub fn select_cols(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let ta = self.value(a);
        if !ta.is_matrix() || idx.len() != ta.rows() {
            return Err(Error::ShapeMismatch {
                context: "select_cols",
                expected: vec![ta.rows()],
                got: vec![idx.len()],
            });
        }
        let n = ta.cols();
        for &j in idx {
            if j >= n {
                return Err(Error::InvalidLabel {
                    index: j,
                    classes: n,
                });
            }
        }
        let out: Vec<f64> = idx.iter().enumerate().map(|(i, &j)| ta.row(i)[j]).collect();
        let m = ta.rows();
        let rg = self.requires(a);
        Ok(self.push(
            Op::SelectCols(a, idx.to_vec()),
            Tensor::from_vec(vec![m], out)?,
            rg,
        ))
    }

    /// Reverse pass from a scalar loss. Returns one gradient slot per node;
    /// constants and untouched nodes stay `None`.
    pub fn backward(&self, loss: Var) -> Result<GradStore> {
        let loss_node = &self.nodes[loss.0];
        if !loss_node.value.is_scalar() {
            return Err(Error::NotScalar {
                shape: loss_node.value.shape().to_vec(),
            });
        }
        if !loss_node.requires_grad {
            return Err(Error::NoGradGraph);
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(grad) = grads[i].take() else {
                continue;
            };
            let g = grad.data();
            match &self.nodes[i].op {
                Op::Leaf | Op::Constant => {
                    grads[i] = Some(grad);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                    if self.requires(*a) {
                        // dA = G . B^T
                        let mut da = vec![0.0; m * k];
                        for i2 in 0..m {
                            for j in 0..n {
                                let gij = g[i2 * n + j];
                                for p in 0..k {
                                    da[i2 * k + p] += gij * tb.data()[p * n + j];
                                }
                            }
                        }
                        self.accumulate(&mut grads, *a, &da)?;
                    }
                    if self.requires(*b) {
                        // dB = A^T . G
                        let mut db = vec![0.0; k * n];
                        for i2 in 0..m {
                            for p in 0..k {
                                let aip = ta.data()[i2 * k + p];
                                for j in 0..n {
                                    db[p * n + j] += aip * g[i2 * n + j];
                                }
                            }
                        }
                        self.accumulate(&mut grads, *b, &db)?;
                    }
                }
                Op::AddBias(a, bias) => {
                    if self.requires(*a) {
                        self.accumulate(&mut grads, *a, g)?;
                    }
                    if self.requires(*bias) {
                        let ta = &self.nodes[a.0].value;
                        let (m, n) = (ta.rows(), ta.cols());
                        let mut db = vec![0.0; n];
                        for i2 in 0..m {
                            for j in 0..n {
                                db[j] += g[i2 * n + j];
                            }
                        }
                        self.accumulate(&mut grads, *bias, &db)?;
                    }
                }
                Op::Add(a, b) => {
                    if self.requires(*a) {
                        self.accumulate(&mut grads, *a, g)?;
                    }
                    if self.requires(*b) {
                        self.accumulate(&mut grads, *b, g)?;
                    }
                }
                Op::Sub(a, b) => {
                    if self.requires(*a) {
                        self.accumulate(&mut grads, *a, g)?;
                    }
                    if self.requires(*b) {
                        let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                        self.accumulate(&mut grads, *b, &neg)?;
                    }
                }
                Op::Mul(a, b) => {
                    if self.requires(*a) {
                        let vb = self.nodes[b.0].value.data();
                        let da: Vec<f64> = g.iter().zip(vb).map(|(x, y)| x * y).collect();
                        self.accumulate(&mut grads, *a, &da)?;
                    }
                    if self.requires(*b) {
                        let va = self.nodes[a.0].value.data();
                        let db: Vec<f64> = g.iter().zip(va).map(|(x, y)| x * y).collect();
                        self.accumulate(&mut grads, *b, &db)?;
                    }
                }
                Op::Scale(a, c) => {
                    let da: Vec<f64> = g.iter().map(|x| x * c).collect();
                    self.accumulate(&mut grads, *a, &da)?;
                }
                Op::AddScalar(a) => {
                    self.accumulate(&mut grads, *a, g)?;
                }
                Op::Relu(a) => {
                    let va = self.nodes[a.0].value.data();
                    // subgradient at 0 is 0
                    let da: Vec<f64> = g
                        .iter()
                        .zip(va)
                        .map(|(x, v)| if *v > 0.0 { *x } else { 0.0 })
                        .collect();
                    self.accumulate(&mut grads, *a, &da)?;
                }
                Op::Tanh(a) => {
                    let y = self.nodes[i].value.data();
                    let da: Vec<f64> = g.iter().zip(y).map(|(x, t)| x * (1.0 - t * t)).collect();
                    self.accumulate(&mut grads, *a, &da)?;
                }
                Op::LnClamped(a) => {
                    let va = self.nodes[a.0].value.data();
                    let da: Vec<f64> = g
                        .iter()
                        .zip(va)
                        .map(|(x, v)| if *v >= PROB_CLAMP { x / v } else { 0.0 })
                        .collect();
                    self.accumulate(&mut grads, *a, &da)?;
                }
                Op::SoftmaxRows(a) => {
                    let y = &self.nodes[i].value;
                    let (m, n) = (y.rows(), y.cols());
                    let mut da = vec![0.0; m * n];
                    for i2 in 0..m {
                        let yrow = y.row(i2);
                        let grow = &g[i2 * n..(i2 + 1) * n];
                        let dot: f64 = yrow.iter().zip(grow).map(|(p, x)| p * x).sum();
                        for j in 0..n {
                            da[i2 * n + j] = yrow[j] * (grow[j] - dot);
                        }
                    }
                    self.accumulate(&mut grads, *a, &da)?;
                }
                Op::SumRows(a) => {
                    let ta = &self.nodes[a.0].value;
                    let (m, n) = (ta.rows(), ta.cols());
                    let mut da = vec![0.0; m * n];
                    for i2 in 0..m {
                        for j in 0..n {
                            da[i2 * n + j] = g[i2];
                        }
                    }
                    self.accumulate(&mut grads, *a, &da)?;
                }
                Op::SumAll(a) => {
                    let n = self.nodes[a.0].value.len();
                    let da = vec![g[0]; n];
                    self.accumulate(&mut grads, *a, &da)?;
                }
                Op::MeanAll(a) => {
                    let n = self.nodes[a.0].value.len();
                    let da = vec![g[0] / n as f64; n];
                    self.accumulate(&mut grads, *a, &da)?;
                }
                Op::SelectCols(a, idx) => {
                    let ta = &self.nodes[a.0].value;
                    let (m, n) = (ta.rows(), ta.cols());
                    let mut da = vec![0.0; m * n];
                    for (i2, &j) in idx.iter().enumerate() {
                        da[i2 * n + j] = g[i2];
                    }
                    self.accumulate(&mut grads, *a, &da)?;
                }
            }
        }
        Ok(GradStore { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, delta: &[f64]) -> Result<()> {
        match &mut grads[v.0] {
            Some(existing) => {
                for (e, d) in existing.data_mut().iter_mut().zip(delta) {
                    *e += d;
                }
            }
            slot @ None => {
                let shape = self.nodes[v.0].value.shape().to_vec();
                *slot = Some(Tensor::from_vec(shape, delta.to_vec())?);
            }
        }
        Ok(())
    }
}

/// Max relative error between the reverse-mode gradient of `build` at `point`
/// and a central finite difference with step `h`. The error per coordinate is
/// `|ad - fd| / max(|ad|, |fd|, 1)`.
pub fn finite_diff_check<F>(build: F, point: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if h <= 0.0 {
        return Err(Error::InvalidConfig("finite_diff_check requires h > 0".into()));
    }
    // Reverse-mode gradient.
    let mut tape = Tape::new();
    let x = tape.leaf(point.clone());
    let loss = build(&mut tape, x)?;
    if !tape.value(loss).is_scalar() {
        return Err(Error::NotScalar {
            shape: tape.value(loss).shape().to_vec(),
        });
    }
    let store = tape.backward(loss)?;
    let ad = store.get_or_zeros(x, point.shape());

    // Central differences, coordinate by coordinate.
    let eval = |t: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let x = tape.constant(t.clone());
        let loss = build(&mut tape, x)?;
        tape.value(loss).item()
    };
    let mut worst = 0.0f64;
    let mut probe = point.clone();
    for i in 0..point.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let f_plus = eval(&probe)?;
        probe.data_mut()[i] = orig - h;
        let f_minus = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let fd = (f_plus - f_minus) / (2.0 * h);
        let a = ad.data()[i];
        let err = (a - fd).abs() / a.abs().max(fd.abs()).max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        Tensor::from_vec(shape, data).unwrap()
    }

    #[test]
    fn matmul_forward() {
        let mut tape = Tape::new();
        let a = tape.constant(t(vec![2, 2], vec![1., 2., 3., 4.]));
        let b = tape.constant(t(vec![2, 2], vec![5., 6., 7., 8.]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[19., 22., 43., 50.]);
    }

    #[test]
    fn backward_sum_of_leaf_is_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(vec![3], vec![1., -2., 0.5]));
        let s = tape.sum_all(x);
        let store = tape.backward(s).unwrap();
        assert_eq!(store.get(x).unwrap().data(), &[1., 1., 1.]);
    }

    #[test]
    fn backward_zero_times_anything_is_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(vec![2], vec![3., 4.]));
        let scaled = tape.scale(x, 0.0);
        let s = tape.sum_all(scaled);
        let store = tape.backward(s).unwrap();
        assert_eq!(store.get(x).unwrap().data(), &[0., 0.]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(vec![2], vec![1., 2.]));
        assert!(matches!(tape.backward(x), Err(Error::NotScalar { .. })));
    }

    #[test]
    fn backward_requires_graph() {
        let mut tape = Tape::new();
        let x = tape.constant(t(vec![1], vec![2.0]));
        let s = tape.sum_all(x);
        assert!(matches!(tape.backward(s), Err(Error::NoGradGraph)));
    }

    #[test]
    fn grad_of_constant_loss_wrt_unused_input_is_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(vec![2], vec![1., 2.]));
        let y = tape.leaf(t(vec![2], vec![3., 4.]));
        let s = tape.sum_all(y);
        let store = tape.backward(s).unwrap();
        assert!(store.get(x).is_none());
        assert_eq!(store.get_or_zeros(x, &[2]).data(), &[0., 0.]);
        let _ = x;
    }

    #[test]
    fn softmax_rows_shift_invariant() {
        let mut tape = Tape::new();
        let a = tape.constant(t(vec![1, 2], vec![1000.7, 1000.0]));
        let b = tape.constant(t(vec![1, 2], vec![0.7, 0.0]));
        let pa = tape.softmax_rows(a).unwrap();
        let pb = tape.softmax_rows(b).unwrap();
        let (va, vb) = (tape.value(pa).clone(), tape.value(pb).clone());
        assert!(va.max_abs_diff(&vb).unwrap() < 1e-12);
    }

    #[test]
    fn finite_diff_quadratic_is_tight() {
        // f(x) = sum(x*x); exact gradient 2x, central difference exact up to rounding
        let point = t(vec![3], vec![0.3, -1.2, 2.0]);
        let err = finite_diff_check(
            |tape, x| {
                let sq = tape.mul(x, x)?;
                Ok(tape.sum_all(sq))
            },
            &point,
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-8, "err = {err}");
    }

    #[test]
    fn finite_diff_constant_is_zero() {
        let point = t(vec![2], vec![0.5, -0.5]);
        let err = finite_diff_check(
            |tape, x| {
                let zero = tape.scale(x, 0.0);
                let s = tape.sum_all(zero);
                Ok(tape.add_scalar(s, 42.0))
            },
            &point,
            1e-4,
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn finite_diff_ce_of_softmax() {
        // cross-entropy of softmax toward class 0
        let point = t(vec![1, 3], vec![0.3, -0.7, 1.1]);
        let err = finite_diff_check(
            |tape, x| {
                let p = tape.softmax_rows(x)?;
                let py = tape.select_cols(p, &[0])?;
                let lp = tape.ln_clamped(py);
                let neg = tape.scale(lp, -1.0);
                Ok(tape.mean_all(neg))
            },
            &point,
            1e-6,
        )
        .unwrap();
        assert!(err <= 1e-4, "err = {err}");
    }

    #[test]
    fn all_ops_match_finite_differences() {
        use rand::Rng;
        let mut rng = crate::rng::stream(999, &[1]);
        let rand_t = |rng: &mut rand_chacha::ChaCha8Rng, shape: Vec<usize>| {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            t(shape, data)
        };

        // matmul + add_bias + tanh chain wrt the matrix input
        let point = rand_t(&mut rng, vec![2, 3]);
        let w = rand_t(&mut rng, vec![3, 4]);
        let b = rand_t(&mut rng, vec![4]);
        let err = finite_diff_check(
            |tape, x| {
                let wv = tape.constant(w.clone());
                let bv = tape.constant(b.clone());
                let h = tape.matmul(x, wv)?;
                let h = tape.add_bias(h, bv)?;
                let h = tape.tanh(h);
                Ok(tape.sum_all(h))
            },
            &point,
            1e-6,
        )
        .unwrap();
        assert!(err <= 1e-4, "matmul chain err = {err}");

        // elementwise mix: (x - c) * x + softplus-free path through ln_clamped(relu + 1)
        let point = rand_t(&mut rng, vec![6]);
        let c = rand_t(&mut rng, vec![6]);
        let err = finite_diff_check(
            |tape, x| {
                let cv = tape.constant(c.clone());
                let d = tape.sub(x, cv)?;
                let prod = tape.mul(d, x)?;
                let r = tape.relu(x);
                let shifted = tape.add_scalar(r, 1.0);
                let l = tape.ln_clamped(shifted);
                let both = tape.add(prod, l)?;
                Ok(tape.mean_all(both))
            },
            &point,
            1e-6,
        )
        .unwrap();
        assert!(err <= 1e-4, "elementwise err = {err}");

        // rowwise reductions + select
        let point = rand_t(&mut rng, vec![3, 4]);
        let err = finite_diff_check(
            |tape, x| {
                let p = tape.softmax_rows(x)?;
                let lp = tape.ln_clamped(p);
                let plp = tape.mul(p, lp)?;
                let rows = tape.sum_rows(plp)?;
                let s1 = tape.sum_all(rows);
                let sel = tape.select_cols(x, &[1, 0, 3])?;
                let s2 = tape.mean_all(sel);
                let s2w = tape.scale(s2, 0.25);
                tape.add(s1, s2w)
            },
            &point,
            1e-6,
        )
        .unwrap();
        assert!(err <= 1e-4, "reduction err = {err}");
    }

    #[test]
    fn gradient_accumulates_over_shared_use() {
        // loss = sum(x) + sum(x) -> gradient 2
        let mut tape = Tape::new();
        let x = tape.leaf(t(vec![2], vec![1., 2.]));
        let s1 = tape.sum_all(x);
        let s2 = tape.sum_all(x);
        let total = tape.add(s1, s2).unwrap();
        let store = tape.backward(total).unwrap();
        assert_eq!(store.get(x).unwrap().data(), &[2., 2.]);
    }
}
