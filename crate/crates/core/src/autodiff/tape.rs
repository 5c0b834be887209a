use super::kernels;
use super::tensor::Tensor;
use crate::error::{shape_err, Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Affine { x: Var, w: Var, b: Var },
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Sum(Var),
    Mean(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Min(Var, Var),
    Max(Var, Var),
    Clip { x: Var, lo: Vec<f64>, hi: Vec<f64> },
    Square(Var),
    Scale(Var, f64),
    /// Saves the row-wise softmax probabilities.
    CategoricalLogProb { logits: Var, actions: Vec<usize>, probs: Vec<f64> },
    CategoricalEntropy { logits: Var, probs: Vec<f64>, log_probs: Vec<f64> },
    GaussianLogProb { mean: Var, log_std: Var, actions: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Eagerly evaluated computation record.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradients of one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `v`; zeros when `v` does not influence the output.
    pub fn wrt(&self, v: Var) -> Tensor {
        let shape = self.shapes[v.0].clone();
        match &self.grads[v.0] {
            Some(g) => Tensor::from_parts(shape, g.clone()),
            None => Tensor::zeros(&shape),
        }
    }

    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }
}

fn same_shape(a: &Tensor, b: &Tensor, op: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(shape_err(format!("{op}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn checked(shape: Vec<usize>, data: Vec<f64>, op: &str) -> Result<Tensor> {
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(op.to_string()));
    }
    Ok(Tensor::from_parts(shape, data))
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf (input or parameter).
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Leaf cloned from a borrowed tensor.
    pub fn leaf_ref(&mut self, t: &Tensor) -> Var {
        self.push(t.clone(), Op::Leaf)
    }

    /// `x w + b` with `x` of shape `[in]` or `[rows, in]`, `w: [in, out]`, `b: [out]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let (rows, inp) = xv
            .as_matrix_dims()
            .ok_or_else(|| shape_err(format!("affine input rank {:?}", xv.shape())))?;
        let (win, out) = match wv.shape() {
            [i, o] => (*i, *o),
            s => return Err(shape_err(format!("affine weight must be rank 2, got {s:?}"))),
        };
        if win != inp || bv.shape() != [out] {
            return Err(shape_err(format!(
                "affine: x {:?}, w {:?}, b {:?}",
                xv.shape(),
                wv.shape(),
                bv.shape()
            )));
        }
        let y = kernels::affine(xv.data(), wv.data(), bv.data(), rows, inp, out);
        let shape = if xv.shape().len() == 1 { vec![out] } else { vec![rows, out] };
        let value = checked(shape, y, "affine")?;
        Ok(self.push(value, Op::Affine { x, w, b }))
    }

    fn unary(&mut self, a: Var, name: &str, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let av = self.value(a);
        let data = av.data().iter().map(|&v| f(v)).collect();
        let value = checked(av.shape().to_vec(), data, name)?;
        Ok(self.push(value, op))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "tanh", f64::tanh, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "exp", f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "log", f64::ln, Op::Log(a))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "square", |v| v * v, Op::Square(a))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(a, "scale", |v| c * v, Op::Scale(a, c))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        let value = checked(vec![], vec![s], "sum")?;
        Ok(self.push(value, Op::Sum(a)))
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if av.is_empty() {
            return Err(shape_err("mean of empty tensor"));
        }
        let m = av.data().iter().sum::<f64>() / av.len() as f64;
        let value = checked(vec![], vec![m], "mean")?;
        Ok(self.push(value, Op::Mean(a)))
    }

    fn binary(&mut self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape(av, bv, name)?;
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = checked(av.shape().to_vec(), data, name)?;
        Ok(self.push(value, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    /// Elementwise minimum. At ties the gradient flows to `a` only.
    pub fn min(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "min", |x, y| if x <= y { x } else { y }, Op::Min(a, b))
    }

    /// Elementwise maximum. At ties the gradient flows to `a` only.
    pub fn max(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "max", |x, y| if x >= y { x } else { y }, Op::Max(a, b))
    }

    /// Elementwise clamp into `[lo, hi]` with constant bounds. The gradient
    /// passes where `lo <= x <= hi` and is zero strictly outside.
    pub fn clip(&mut self, x: Var, lo: &[f64], hi: &[f64]) -> Result<Var> {
        let xv = self.value(x);
        if lo.len() != xv.len() || hi.len() != xv.len() {
            return Err(shape_err(format!(
                "clip bounds {}/{} for {} values",
                lo.len(),
                hi.len(),
                xv.len()
            )));
        }
        let data = xv
            .data()
            .iter()
            .zip(lo.iter().zip(hi))
            .map(|(&v, (&l, &h))| v.max(l).min(h))
            .collect();
        let value = checked(xv.shape().to_vec(), data, "clip")?;
        Ok(self.push(value, Op::Clip { x, lo: lo.to_vec(), hi: hi.to_vec() }))
    }

    /// Log mass of `actions[i]` under the softmax of row `i` of `logits`.
    pub fn categorical_log_prob(&mut self, logits: Var, actions: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        let (rows, cols) = lv
            .as_matrix_dims()
            .ok_or_else(|| shape_err("categorical_log_prob logits must be rank 1 or 2"))?;
        if actions.len() != rows {
            return Err(shape_err(format!("{} actions for {rows} rows", actions.len())));
        }
        if let Some(a) = actions.iter().find(|&&a| a >= cols) {
            return Err(Error::InvalidAction(format!("action {a} with {cols} categories")));
        }
        let lsm = kernels::log_softmax(lv.data(), rows, cols);
        let out = actions.iter().enumerate().map(|(r, &a)| lsm[r * cols + a]).collect();
        let probs = lsm.iter().map(|v| v.exp()).collect();
        let value = checked(vec![rows], out, "categorical_log_prob")?;
        Ok(self.push(
            value,
            Op::CategoricalLogProb { logits, actions: actions.to_vec(), probs },
        ))
    }

    /// Row-wise entropy of the softmax of `logits`.
    pub fn categorical_entropy(&mut self, logits: Var) -> Result<Var> {
        let lv = self.value(logits);
        let (rows, cols) = lv
            .as_matrix_dims()
            .ok_or_else(|| shape_err("categorical_entropy logits must be rank 1 or 2"))?;
        let log_probs = kernels::log_softmax(lv.data(), rows, cols);
        let probs: Vec<f64> = log_probs.iter().map(|v| v.exp()).collect();
        let ent = (0..rows)
            .map(|r| {
                -(0..cols)
                    .map(|c| {
                        let p = probs[r * cols + c];
                        if p > 0.0 { p * log_probs[r * cols + c] } else { 0.0 }
                    })
                    .sum::<f64>()
            })
            .collect();
        let value = checked(vec![rows], ent, "categorical_entropy")?;
        Ok(self.push(value, Op::CategoricalEntropy { logits, probs, log_probs }))
    }

    /// Diagonal-Gaussian log density of each action row. `mean: [rows, d]`,
    /// `log_std: [d]` shared across rows, `actions`: `rows*d` values.
    pub fn gaussian_log_prob(&mut self, mean: Var, log_std: Var, actions: &[f64]) -> Result<Var> {
        let (mv, sv) = (self.value(mean), self.value(log_std));
        let (rows, d) = mv
            .as_matrix_dims()
            .ok_or_else(|| shape_err("gaussian_log_prob mean must be rank 1 or 2"))?;
        if sv.shape() != [d] || actions.len() != rows * d {
            return Err(shape_err(format!(
                "gaussian_log_prob: mean {:?}, log_std {:?}, {} action values",
                mv.shape(),
                sv.shape(),
                actions.len()
            )));
        }
        let out = (0..rows)
            .map(|r| {
                kernels::gaussian_log_density(
                    &mv.data()[r * d..(r + 1) * d],
                    sv.data(),
                    &actions[r * d..(r + 1) * d],
                )
            })
            .collect();
        let value = checked(vec![rows], out, "gaussian_log_prob")?;
        Ok(self.push(value, Op::GaussianLogProb { mean, log_std, actions: actions.to_vec() }))
    }

    /// Reverse pass from `output` seeded with `seed`. A tape can be
    /// differentiated once; a second call fails with [`Error::TapeConsumed`].
    pub fn backward(&mut self, output: Var, seed: &Tensor) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        let out_shape = self.value(output).shape();
        if seed.shape() != out_shape {
            return Err(shape_err(format!("seed {:?} for output {:?}", seed.shape(), out_shape)));
        }
        self.consumed = true;

        let n = output.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(seed.data().to_vec());

        fn acc(grads: &mut [Option<Vec<f64>>], v: Var, delta: Vec<f64>) {
            match &mut grads[v.0] {
                Some(g) => g.iter_mut().zip(delta).for_each(|(a, d)| *a += d),
                slot @ None => *slot = Some(delta),
            }
        }

        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let val = node.value.data();
            match &node.op {
                Op::Leaf => {}
                Op::Affine { x, w, b } => {
                    let (xv, wv) = (self.value(*x), self.value(*w));
                    let (rows, inp) = xv.as_matrix_dims().unwrap();
                    let out = wv.shape()[1];
                    acc(&mut grads, *x, kernels::matmul_bt(&g, wv.data(), rows, inp, out));
                    acc(&mut grads, *w, kernels::matmul_at(xv.data(), &g, rows, inp, out));
                    let mut db = vec![0.0; out];
                    for r in 0..rows {
                        for (d, gv) in db.iter_mut().zip(&g[r * out..(r + 1) * out]) {
                            *d += gv;
                        }
                    }
                    acc(&mut grads, *b, db);
                }
                Op::Tanh(a) => {
                    let d = g.iter().zip(val).map(|(gv, y)| gv * (1.0 - y * y)).collect();
                    acc(&mut grads, *a, d);
                }
                Op::Exp(a) => {
                    let d = g.iter().zip(val).map(|(gv, y)| gv * y).collect();
                    acc(&mut grads, *a, d);
                }
                Op::Log(a) => {
                    let av = self.value(*a).data();
                    let d = g.iter().zip(av).map(|(gv, x)| gv / x).collect();
                    acc(&mut grads, *a, d);
                }
                Op::Sum(a) => {
                    let len = self.value(*a).len();
                    acc(&mut grads, *a, vec![g[0]; len]);
                }
                Op::Mean(a) => {
                    let len = self.value(*a).len();
                    acc(&mut grads, *a, vec![g[0] / len as f64; len]);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, g.iter().map(|v| -v).collect());
                    acc(&mut grads, *a, g.clone());
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                    acc(&mut grads, *a, g.iter().zip(bv).map(|(gv, y)| gv * y).collect());
                    acc(&mut grads, *b, g.iter().zip(av).map(|(gv, x)| gv * x).collect());
                }
                Op::Div(a, b) => {
                    let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                    acc(&mut grads, *a, g.iter().zip(bv).map(|(gv, y)| gv / y).collect());
                    let db = g
                        .iter()
                        .zip(av.iter().zip(bv))
                        .map(|(gv, (x, y))| -gv * x / (y * y))
                        .collect();
                    acc(&mut grads, *b, db);
                }
                Op::Min(a, b) | Op::Max(a, b) => {
                    let is_min = matches!(node.op, Op::Min(..));
                    let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                    let mut da = vec![0.0; g.len()];
                    let mut db = vec![0.0; g.len()];
                    for k in 0..g.len() {
                        let pick_a = if is_min { av[k] <= bv[k] } else { av[k] >= bv[k] };
                        if pick_a {
                            da[k] = g[k];
                        } else {
                            db[k] = g[k];
                        }
                    }
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::Clip { x, lo, hi } => {
                    let xv = self.value(*x).data();
                    let d = (0..g.len())
                        .map(|k| if xv[k] >= lo[k] && xv[k] <= hi[k] { g[k] } else { 0.0 })
                        .collect();
                    acc(&mut grads, *x, d);
                }
                Op::Square(a) => {
                    let av = self.value(*a).data();
                    acc(&mut grads, *a, g.iter().zip(av).map(|(gv, x)| 2.0 * gv * x).collect());
                }
                Op::Scale(a, c) => {
                    acc(&mut grads, *a, g.iter().map(|gv| c * gv).collect());
                }
                Op::CategoricalLogProb { logits, actions, probs } => {
                    let cols = probs.len() / actions.len().max(1);
                    let mut d: Vec<f64> = probs.iter().map(|p| -p).collect();
                    for (r, &a) in actions.iter().enumerate() {
                        d[r * cols + a] += 1.0;
                        for c in 0..cols {
                            d[r * cols + c] *= g[r];
                        }
                    }
                    acc(&mut grads, *logits, d);
                }
                Op::CategoricalEntropy { logits, probs, log_probs } => {
                    let rows = g.len();
                    let cols = probs.len() / rows.max(1);
                    let mut d = vec![0.0; probs.len()];
                    for r in 0..rows {
                        let h = val[r];
                        for c in 0..cols {
                            let k = r * cols + c;
                            d[k] = -g[r] * probs[k] * (log_probs[k] + h);
                        }
                    }
                    acc(&mut grads, *logits, d);
                }
                Op::GaussianLogProb { mean, log_std, actions } => {
                    let (mv, sv) = (self.value(*mean).data(), self.value(*log_std).data());
                    let d = sv.len();
                    let rows = g.len();
                    let mut dm = vec![0.0; rows * d];
                    let mut ds = vec![0.0; d];
                    for r in 0..rows {
                        for j in 0..d {
                            let k = r * d + j;
                            let var = (2.0 * sv[j]).exp();
                            let diff = actions[k] - mv[k];
                            dm[k] = g[r] * diff / var;
                            ds[j] += g[r] * (diff * diff / var - 1.0);
                        }
                    }
                    acc(&mut grads, *mean, dm);
                    acc(&mut grads, *log_std, ds);
                }
            }
            grads[i] = Some(g);
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grad_check(build: impl Fn(&mut Tape, &[Var]) -> Var, inputs: &[Tensor]) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf_ref(t)).collect();
        let out = build(&mut tape, &vars);
        let grads = tape.backward(out, &Tensor::scalar(1.0).unwrap()).unwrap();
        let h = 1e-5;
        for (vi, input) in inputs.iter().enumerate() {
            let analytic = grads.wrt(vars[vi]);
            for k in 0..input.len() {
                let eval = |delta: f64| {
                    let mut t = Tape::new();
                    let vs: Vec<Var> = inputs
                        .iter()
                        .enumerate()
                        .map(|(j, x)| {
                            let mut x = x.clone();
                            if j == vi {
                                x.data_mut()[k] += delta;
                            }
                            t.leaf(x)
                        })
                        .collect();
                    let o = build(&mut t, &vs);
                    t.value(o).item()
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let a = analytic.data()[k];
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
                assert!(rel < 1e-4, "input {vi}[{k}]: analytic {a}, fd {fd}");
            }
        }
    }

    #[test]
    fn affine_identity() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]).unwrap());
        let w = tape.leaf(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let b = tape.leaf(Tensor::vector(vec![0.0, 0.0]).unwrap());
        let y = tape.affine(x, w, b).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 2.0]);
    }

    #[test]
    fn tanh_at_origin_and_sum_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![0.0, 0.0]).unwrap());
        let t = tape.tanh(x).unwrap();
        assert_eq!(tape.value(t).data(), &[0.0, 0.0]);
        let s = tape.sum(t).unwrap();
        let g = tape.backward(s, &Tensor::scalar(1.0).unwrap()).unwrap();
        assert_eq!(g.wrt(x).data(), &[1.0, 1.0]);
    }

    #[test]
    fn square_value_and_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0).unwrap());
        let y = tape.square(x).unwrap();
        assert_eq!(tape.value(y).item(), 9.0);
        let g = tape.backward(y, &Tensor::scalar(1.0).unwrap()).unwrap();
        assert_eq!(g.wrt(x).item(), 6.0);
    }

    #[test]
    fn constant_graph_has_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, -2.0]).unwrap());
        let c = tape.leaf(Tensor::vector(vec![4.0, 5.0]).unwrap());
        let s = tape.sum(c).unwrap();
        let g = tape.backward(s, &Tensor::scalar(1.0).unwrap()).unwrap();
        assert_eq!(g.wrt(x).data(), &[0.0, 0.0]);
    }

    #[test]
    fn tape_cannot_be_consumed_twice() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(1.0).unwrap());
        let y = tape.exp(x).unwrap();
        let seed = Tensor::scalar(1.0).unwrap();
        tape.backward(y, &seed).unwrap();
        assert!(matches!(tape.backward(y, &seed), Err(Error::TapeConsumed)));
    }

    #[test]
    fn seed_shape_mismatch() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]).unwrap());
        let y = tape.tanh(x).unwrap();
        assert!(matches!(
            tape.backward(y, &Tensor::scalar(1.0).unwrap()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::vector(vec![1.0, 2.0]).unwrap());
        let b = tape.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap());
        assert!(matches!(tape.add(a, b), Err(Error::Shape(_))));
        let w = tape.leaf(Tensor::matrix(3, 1, vec![1.0; 3]).unwrap());
        let bias = tape.leaf(Tensor::vector(vec![0.0]).unwrap());
        assert!(matches!(tape.affine(a, w, bias), Err(Error::Shape(_))));
    }

    #[test]
    fn non_finite_intermediate_is_an_error() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, -1.0]).unwrap());
        assert!(matches!(tape.log(x), Err(Error::NonFinite(_))));
        let big = tape.leaf(Tensor::scalar(1000.0).unwrap());
        assert!(matches!(tape.exp(big), Err(Error::NonFinite(_))));
    }

    #[test]
    fn composite_gradients_match_finite_differences() {
        let logits = Tensor::matrix(2, 3, vec![0.3, -0.2, 1.1, 0.0, 0.5, -0.7]).unwrap();
        grad_check(
            |t, v| {
                let lp = t.categorical_log_prob(v[0], &[2, 1]).unwrap();
                let e = t.categorical_entropy(v[0]).unwrap();
                let s = t.add(lp, e).unwrap();
                t.sum(s).unwrap()
            },
            &[logits],
        );
        let mean = Tensor::matrix(2, 2, vec![0.1, -0.4, 0.7, 0.2]).unwrap();
        let log_std = Tensor::vector(vec![-0.3, 0.2]).unwrap();
        grad_check(
            |t, v| {
                let lp = t.gaussian_log_prob(v[0], v[1], &[0.5, 0.0, -1.0, 0.3]).unwrap();
                t.mean(lp).unwrap()
            },
            &[mean, log_std],
        );
    }

    #[test]
    fn elementwise_gradients_match_finite_differences() {
        let a = Tensor::vector(vec![0.4, 1.3, 2.2]).unwrap();
        let b = Tensor::vector(vec![1.7, 0.6, 2.9]).unwrap();
        grad_check(
            |t, v| {
                let d = t.div(v[0], v[1]).unwrap();
                let m = t.mul(d, v[0]).unwrap();
                let l = t.log(v[1]).unwrap();
                let s = t.sub(m, l).unwrap();
                let mn = t.min(s, v[0]).unwrap();
                let mx = t.max(mn, v[1]).unwrap();
                let c = t.clip(mx, &[0.0, 0.0, 0.0], &[2.0, 2.0, 2.0]).unwrap();
                let sq = t.square(c).unwrap();
                let e = t.exp(sq).unwrap();
                let sc = t.scale(e, 0.5).unwrap();
                t.mean(sc).unwrap()
            },
            &[a, b],
        );
    }

    #[test]
    fn min_tie_routes_gradient_to_first_argument() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::vector(vec![1.0]).unwrap());
        let b = tape.leaf(Tensor::vector(vec![1.0]).unwrap());
        let m = tape.min(a, b).unwrap();
        let s = tape.sum(m).unwrap();
        let g = tape.backward(s, &Tensor::scalar(1.0).unwrap()).unwrap();
        assert_eq!(g.wrt(a).data(), &[1.0]);
        assert_eq!(g.wrt(b).data(), &[0.0]);
    }

    #[test]
    fn clip_outside_has_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![-1.0, 0.5, 3.0]).unwrap());
        let c = tape.clip(x, &[0.0; 3], &[1.0; 3]).unwrap();
        assert_eq!(tape.value(c).data(), &[0.0, 0.5, 1.0]);
        let s = tape.sum(c).unwrap();
        let g = tape.backward(s, &Tensor::scalar(1.0).unwrap()).unwrap();
        assert_eq!(g.wrt(x).data(), &[0.0, 1.0, 0.0]);
    }
}
