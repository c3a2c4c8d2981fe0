//! Small dense reverse-mode automatic differentiation engine.
//!
//! Every tensor is 2-D (`[rows, cols]`), except biases which are 1-D and
//! scalar losses which have shape `[1]`. Operations are recorded on a
//! [`Tape`] in execution order; [`Tape::backward`] walks it in reverse.

use std::fmt;
use std::rc::Rc;

use crate::cell_graph::LEAKY_RELU_SLOPE;

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}{:?}", self.shape, self.data)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AdError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("{0}")]
    Contract(String),
}

fn shape_err<T>(op: &'static str, left: &[usize], right: &[usize]) -> Result<T, AdError> {
    Err(AdError::Shape {
        op,
        left: left.to_vec(),
        right: right.to_vec(),
    })
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor, AdError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(AdError::Contract(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Tensor {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Tensor, AdError> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn vector(data: Vec<f64>) -> Tensor {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Tensor {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        if self.shape.len() > 1 {
            self.shape[1]
        } else {
            1
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    fn add_assign(&mut self, other: &Tensor) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Linear { ws: Vec<Var>, xs: Vec<Var>, b: Option<Var> },
    Blend(Var, Var, Var),
    Prod(Var, Var),
    Sum(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    LeakyRelu(Var),
    MulConst(Var, Rc<Tensor>),
    Embed { table: Var, ids: Vec<usize> },
    ConcatRows(Vec<Var>),
    SoftmaxXent { logits: Var, targets: Vec<usize>, probs: Tensor },
}

#[derive(Debug)]
struct Entry {
    op: Op,
    value: Tensor,
}

/// Records forward computations for a later backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    entries: Vec<Entry>,
}

fn check_finite(op: &'static str, t: &Tensor) -> Result<(), AdError> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(AdError::NonFinite { op })
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.entries[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.entries[v.0].value.shape
    }

    fn push(&mut self, op: Op, value: Tensor, name: &'static str) -> Result<Var, AdError> {
        check_finite(name, &value)?;
        self.entries.push(Entry { op, value });
        Ok(Var(self.entries.len() - 1))
    }

    pub fn leaf(&mut self, value: Tensor) -> Result<Var, AdError> {
        self.push(Op::Leaf, value, "leaf")
    }

    /// `sum_i xs[i] · ws[i]^T + b`; `xs[i]` is `[B, in_i]`, `ws[i]` is `[out, in_i]`, `b` is `[out]`.
    pub fn linear(&mut self, ws: &[Var], xs: &[Var], b: Option<Var>) -> Result<Var, AdError> {
        if ws.len() != xs.len() || ws.is_empty() {
            return Err(AdError::Contract(format!(
                "linear needs one weight per input, got {} weights for {} inputs",
                ws.len(),
                xs.len()
            )));
        }
        let batch = self.value(xs[0]).rows();
        let out = self.value(ws[0]).rows();
        for (&w, &x) in ws.iter().zip(xs) {
            let (wt, xt) = (self.value(w), self.value(x));
            if wt.shape.len() != 2 || xt.shape.len() != 2 || wt.shape[1] != xt.shape[1] {
                return shape_err("linear", &wt.shape, &xt.shape);
            }
            if wt.shape[0] != out || xt.shape[0] != batch {
                return shape_err("linear", &wt.shape, &xt.shape);
            }
        }
        let mut y = Tensor::zeros(&[batch, out]);
        if let Some(b) = b {
            let bt = self.value(b);
            if bt.shape != [out] {
                return shape_err("linear bias", &bt.shape, &[out]);
            }
            for r in 0..batch {
                y.data[r * out..(r + 1) * out].copy_from_slice(&bt.data);
            }
        }
        for (&w, &x) in ws.iter().zip(xs) {
            let (wt, xt) = (self.value(w), self.value(x));
            let k = wt.shape[1];
            for r in 0..batch {
                let xr = &xt.data[r * k..(r + 1) * k];
                let yr = &mut y.data[r * out..(r + 1) * out];
                for (o, yo) in yr.iter_mut().enumerate() {
                    let wr = &wt.data[o * k..(o + 1) * k];
                    *yo += dot(xr, wr);
                }
            }
        }
        self.push(
            Op::Linear {
                ws: ws.to_vec(),
                xs: xs.to_vec(),
                b,
            },
            y,
            "linear",
        )
    }

    fn same_shape(&self, op: &'static str, vars: &[Var]) -> Result<(), AdError> {
        let s0 = self.shape(vars[0]);
        for &v in &vars[1..] {
            if self.shape(v) != s0 {
                return shape_err(op, s0, self.shape(v));
            }
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (at, bt) = (self.value(a), self.value(b));
        Tensor {
            shape: at.shape.clone(),
            data: at.data.iter().zip(&bt.data).map(|(&x, &y)| f(x, y)).collect(),
        }
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let at = self.value(a);
        Tensor {
            shape: at.shape.clone(),
            data: at.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// `z * x + (1 - z) * y`.
    pub fn blend(&mut self, z: Var, x: Var, y: Var) -> Result<Var, AdError> {
        self.same_shape("blend", &[z, x, y])?;
        let (zt, xt, yt) = (self.value(z), self.value(x), self.value(y));
        let data = zt
            .data
            .iter()
            .zip(&xt.data)
            .zip(&yt.data)
            .map(|((&z, &x), &y)| z * x + (1.0 - z) * y)
            .collect();
        let value = Tensor {
            shape: zt.shape.clone(),
            data,
        };
        self.push(Op::Blend(z, x, y), value, "blend")
    }

    pub fn prod(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.same_shape("prod", &[a, b])?;
        let value = self.zip_map(a, b, |x, y| x * y);
        self.push(Op::Prod(a, b), value, "prod")
    }

    pub fn sum(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.same_shape("sum", &[a, b])?;
        let value = self.zip_map(a, b, |x, y| x + y);
        self.push(Op::Sum(a, b), value, "sum")
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, AdError> {
        let value = self.map(a, |x| x * c);
        self.push(Op::Scale(a, c), value, "scale")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, AdError> {
        let value = self.map(a, f64::tanh);
        self.push(Op::Tanh(a), value, "tanh")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, AdError> {
        let value = self.map(a, sigmoid);
        self.push(Op::Sigmoid(a), value, "sigmoid")
    }

    pub fn leaky_relu(&mut self, a: Var) -> Result<Var, AdError> {
        let value = self.map(a, |x| if x > 0.0 { x } else { LEAKY_RELU_SLOPE * x });
        self.push(Op::LeakyRelu(a), value, "leaky_relu")
    }

    /// Element-wise product with a constant tensor (dropout masks).
    pub fn mul_const(&mut self, a: Var, mask: Rc<Tensor>) -> Result<Var, AdError> {
        if self.shape(a) != mask.shape() {
            return shape_err("mul_const", self.shape(a), mask.shape());
        }
        let at = self.value(a);
        let value = Tensor {
            shape: at.shape.clone(),
            data: at.data.iter().zip(&mask.data).map(|(x, m)| x * m).collect(),
        };
        self.push(Op::MulConst(a, mask), value, "mul_const")
    }

    /// Gathers rows of `table` (`[V, E]`) into `[ids.len(), E]`.
    pub fn embed(&mut self, table: Var, ids: &[usize]) -> Result<Var, AdError> {
        let tt = self.value(table);
        if tt.shape.len() != 2 {
            return shape_err("embed", &tt.shape, &[ids.len()]);
        }
        let (v, e) = (tt.shape[0], tt.shape[1]);
        let mut data = Vec::with_capacity(ids.len() * e);
        for &id in ids {
            if id >= v {
                return Err(AdError::Contract(format!("token id {id} out of vocabulary {v}")));
            }
            data.extend_from_slice(&tt.data[id * e..(id + 1) * e]);
        }
        let value = Tensor {
            shape: vec![ids.len(), e],
            data,
        };
        self.push(
            Op::Embed {
                table,
                ids: ids.to_vec(),
            },
            value,
            "embed",
        )
    }

    /// Stacks `[r_i, C]` tensors into `[sum r_i, C]`.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, AdError> {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.shape.len() != 2 || t.cols() != cols {
                return shape_err("concat_rows", &self.value(parts[0]).shape, &t.shape);
            }
            rows += t.rows();
            data.extend_from_slice(&t.data);
        }
        let value = Tensor {
            shape: vec![rows, cols],
            data,
        };
        self.push(Op::ConcatRows(parts.to_vec()), value, "concat_rows")
    }

    /// Mean softmax cross-entropy of `logits` (`[N, V]`) against `targets`.
    /// Returns the scalar loss; probabilities are available via [`Tape::probs`].
    pub fn softmax_xent(&mut self, logits: Var, targets: &[usize]) -> Result<Var, AdError> {
        let lt = self.value(logits);
        if lt.shape.len() != 2 || lt.rows() != targets.len() {
            return shape_err("softmax_xent", &lt.shape, &[targets.len()]);
        }
        let (n, v) = (lt.rows(), lt.cols());
        let mut probs = Tensor::zeros(&[n, v]);
        let mut loss = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            if t >= v {
                return Err(AdError::Contract(format!("target {t} out of vocabulary {v}")));
            }
            let row = lt.row(r);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let pr = &mut probs.data[r * v..(r + 1) * v];
            let mut z = 0.0;
            for (p, &x) in pr.iter_mut().zip(row) {
                *p = (x - m).exp();
                z += *p;
            }
            for p in pr.iter_mut() {
                *p /= z;
            }
            loss += z.ln() + m - row[t];
        }
        let value = Tensor::scalar(loss / n as f64);
        self.push(
            Op::SoftmaxXent {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            value,
            "softmax_xent",
        )
    }

    /// Softmax probabilities saved by a `softmax_xent` node.
    pub fn probs(&self, loss: Var) -> Option<&Tensor> {
        match &self.entries[loss.0].op {
            Op::SoftmaxXent { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Reverse-mode gradients of scalar `loss` with respect to every recorded value.
    pub fn backward(&self, loss: Var) -> Result<Gradients, AdError> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(AdError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(&lv.shape, 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else {
                continue;
            };
            let entry = &self.entries[i];
            self.backprop(&entry.op, &entry.value, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backprop(&self, op: &Op, out: &Tensor, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut acc = |v: Var, delta: Tensor| match &mut grads[v.0] {
            Some(t) => t.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        };
        let elementwise = |a: Var, f: &dyn Fn(usize) -> f64| -> Tensor {
            let shape = self.shape(a).to_vec();
            Tensor::from_fn(&shape, |k| g.data[k] * f(k))
        };
        match op {
            Op::Leaf => {}
            Op::Linear { ws, xs, b } => {
                let (batch, out_dim) = (g.rows(), g.cols());
                if let Some(b) = b {
                    let mut db = Tensor::zeros(&[out_dim]);
                    for r in 0..batch {
                        for (d, &gv) in db.data.iter_mut().zip(g.row(r)) {
                            *d += gv;
                        }
                    }
                    acc(*b, db);
                }
                for (&w, &x) in ws.iter().zip(xs) {
                    let (wt, xt) = (self.value(w), self.value(x));
                    let k = wt.shape[1];
                    let mut dw = Tensor::zeros(&wt.shape);
                    let mut dx = Tensor::zeros(&xt.shape);
                    for r in 0..batch {
                        let gr = g.row(r);
                        let xr = &xt.data[r * k..(r + 1) * k];
                        let dxr = &mut dx.data[r * k..(r + 1) * k];
                        for (o, &go) in gr.iter().enumerate() {
                            if go == 0.0 {
                                continue;
                            }
                            axpy(go, &wt.data[o * k..(o + 1) * k], dxr);
                            axpy(go, xr, &mut dw.data[o * k..(o + 1) * k]);
                        }
                    }
                    acc(w, dw);
                    acc(x, dx);
                }
            }
            Op::Blend(z, x, y) => {
                let (zt, xt, yt) = (self.value(*z), self.value(*x), self.value(*y));
                acc(*z, elementwise(*z, &|k| xt.data[k] - yt.data[k]));
                acc(*x, elementwise(*x, &|k| zt.data[k]));
                acc(*y, elementwise(*y, &|k| 1.0 - zt.data[k]));
            }
            Op::Prod(a, b) => {
                let (at, bt) = (self.value(*a), self.value(*b));
                acc(*a, elementwise(*a, &|k| bt.data[k]));
                acc(*b, elementwise(*b, &|k| at.data[k]));
            }
            Op::Sum(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Scale(a, c) => acc(*a, elementwise(*a, &|_| *c)),
            Op::Tanh(a) => acc(*a, elementwise(*a, &|k| 1.0 - out.data[k] * out.data[k])),
            Op::Sigmoid(a) => acc(*a, elementwise(*a, &|k| out.data[k] * (1.0 - out.data[k]))),
            Op::LeakyRelu(a) => {
                let at = self.value(*a);
                acc(
                    *a,
                    elementwise(*a, &|k| if at.data[k] > 0.0 { 1.0 } else { LEAKY_RELU_SLOPE }),
                )
            }
            Op::MulConst(a, mask) => acc(*a, elementwise(*a, &|k| mask.data[k])),
            Op::Embed { table, ids } => {
                let tt = self.value(*table);
                let e = tt.shape[1];
                let mut dt = Tensor::zeros(&tt.shape);
                for (r, &id) in ids.iter().enumerate() {
                    for (d, &gv) in dt.data[id * e..(id + 1) * e].iter_mut().zip(g.row(r)) {
                        *d += gv;
                    }
                }
                acc(*table, dt);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).numel();
                    let shape = self.shape(p).to_vec();
                    acc(
                        p,
                        Tensor {
                            shape,
                            data: g.data[offset..offset + n].to_vec(),
                        },
                    );
                    offset += n;
                }
            }
            Op::SoftmaxXent {
                logits,
                targets,
                probs,
            } => {
                let n = targets.len() as f64;
                let v = probs.cols();
                let scale = g.data[0] / n;
                let mut dl = probs.clone();
                for (r, &t) in targets.iter().enumerate() {
                    dl.data[r * v + t] -= 1.0;
                }
                for d in dl.data.iter_mut() {
                    *d *= scale;
                }
                acc(*logits, dl);
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` when `v` does not influence the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`, zero-filled when `v` does not influence the loss.
    pub fn get_or_zeros(&self, tape: &Tape, v: Var) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(tape.shape(v)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(tape: &mut Tape, vals: &[f64]) -> Var {
        tape.leaf(Tensor::matrix(1, vals.len(), vals.to_vec()).unwrap())
            .unwrap()
    }

    #[test]
    fn blend_endpoints() {
        let mut t = Tape::new();
        let x = row(&mut t, &[1.0, -2.0]);
        let y = row(&mut t, &[5.0, 7.0]);
        let z0 = row(&mut t, &[0.0, 0.0]);
        let z1 = row(&mut t, &[1.0, 1.0]);
        let b0 = t.blend(z0, x, y).unwrap();
        let b1 = t.blend(z1, x, y).unwrap();
        assert_eq!(t.value(b0).data(), &[5.0, 7.0]);
        assert_eq!(t.value(b1).data(), &[1.0, -2.0]);

        let zh = row(&mut t, &[0.5]);
        let x2 = row(&mut t, &[2.0]);
        let y4 = row(&mut t, &[4.0]);
        let b = t.blend(zh, x2, y4).unwrap();
        assert_eq!(t.value(b).data(), &[3.0]);
    }

    #[test]
    fn activations_at_zero() {
        let mut t = Tape::new();
        let z = row(&mut t, &[0.0]);
        let s = t.sigmoid(z).unwrap();
        let th = t.tanh(z).unwrap();
        let lr = t.leaky_relu(z).unwrap();
        assert_eq!(t.value(s).item(), 0.5);
        assert_eq!(t.value(th).item(), 0.0);
        assert_eq!(t.value(lr).item(), 0.0);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(z).unwrap().item(), 0.25);
    }

    #[test]
    fn leaky_relu_slope() {
        let mut t = Tape::new();
        let x = row(&mut t, &[-3.0, 2.0]);
        let y = t.leaky_relu(x).unwrap();
        assert_eq!(t.value(y).data(), &[-0.03, 2.0]);
    }

    #[test]
    fn unused_parameter_gets_zero() {
        let mut t = Tape::new();
        let x = row(&mut t, &[0.3]);
        let unused = row(&mut t, &[1.0, 2.0]);
        let y = t.tanh(x).unwrap();
        let g = t.backward(y).unwrap();
        assert!(g.get(unused).is_none());
        assert_eq!(g.get_or_zeros(&t, unused).data(), &[0.0, 0.0]);
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let mut t = Tape::new();
        let a = row(&mut t, &[1.0, 2.0]);
        let b = row(&mut t, &[1.0, 2.0, 3.0]);
        match t.prod(a, b) {
            Err(AdError::Shape { left, right, .. }) => {
                assert_eq!(left, vec![1, 2]);
                assert_eq!(right, vec![1, 3]);
            }
            other => panic!("expected shape error, got {other:?}"),
        }
        let err = t.linear(&[a], &[b], None).unwrap_err();
        assert!(err.to_string().contains("[1, 2]") && err.to_string().contains("[1, 3]"));
    }

    #[test]
    fn non_finite_rejected() {
        let mut t = Tape::new();
        assert!(matches!(
            t.leaf(Tensor::scalar(f64::NAN)),
            Err(AdError::NonFinite { .. })
        ));
        let big = row(&mut t, &[1e300]);
        assert!(matches!(t.prod(big, big), Err(AdError::NonFinite { op: "prod" })));
    }

    #[test]
    fn backward_needs_scalar() {
        let mut t = Tape::new();
        let a = row(&mut t, &[1.0, 2.0]);
        assert!(matches!(t.backward(a), Err(AdError::Contract(_))));
    }

    #[test]
    fn softmax_xent_of_uniform_logits() {
        let mut t = Tape::new();
        let logits = t.leaf(Tensor::zeros(&[3, 10])).unwrap();
        let loss = t.softmax_xent(logits, &[0, 4, 9]).unwrap();
        assert!((t.value(loss).item() - 10f64.ln()).abs() < 1e-15);
        let p = t.probs(loss).unwrap();
        assert!(p.data().iter().all(|&v| (v - 0.1).abs() < 1e-15));
    }

    #[test]
    fn linear_matches_manual() {
        let mut t = Tape::new();
        let w = t.leaf(Tensor::matrix(2, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap()).unwrap();
        let x = t.leaf(Tensor::matrix(1, 3, vec![1., 0., -1.]).unwrap()).unwrap();
        let b = t.leaf(Tensor::vector(vec![0.5, -0.5])).unwrap();
        let y = t.linear(&[w], &[x], Some(b)).unwrap();
        assert_eq!(t.value(y).data(), &[-1.5, -2.5]);
    }

    #[test]
    fn embed_gradient_scatters() {
        let mut t = Tape::new();
        let table = t.leaf(Tensor::matrix(3, 2, vec![0.; 6]).unwrap()).unwrap();
        let e = t.embed(table, &[2, 2, 0]).unwrap();
        let w = t.leaf(Tensor::matrix(1, 2, vec![1.0, 10.0]).unwrap()).unwrap();
        let y = t.linear(&[w], &[e], None).unwrap();
        let loss = t.softmax_xent(y, &[0, 0, 0]).unwrap();
        let g = t.backward(loss).unwrap();
        // Single-class softmax: zero gradient everywhere.
        assert!(g.get(table).unwrap().data().iter().all(|&v| v == 0.0));
    }
}
