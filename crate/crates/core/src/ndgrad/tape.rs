use std::collections::HashMap;

use super::ops;
use super::{GradError, ParamId, ParamStore, Tensor};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param(#[allow(dead_code)] ParamId),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Exp(Var),
    Square(Var),
    Softplus(Var),
    Tanh(Var),
    Clamp(Var, f64, f64),
    Scale(Var, f64),
    AddScalar(Var, #[allow(dead_code)] f64),
    SumAll(Var),
    SumRows(Var),
    Concat(Var, Var),
    Slice(Var, usize, usize),
}

#[cfg_attr(not(debug_assertions), allow(dead_code))]
impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::AddBias(..) => "add_bias",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Exp(_) => "exp",
            Op::Square(_) => "square",
            Op::Softplus(_) => "softplus",
            Op::Tanh(_) => "tanh",
            Op::Clamp(..) => "clamp",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::SumAll(_) => "sum",
            Op::SumRows(_) => "sum_rows",
            Op::Concat(..) => "concat",
            Op::Slice(..) => "slice",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match *self {
            Op::Leaf | Op::Param(_) => vec![],
            Op::MatMul(a, b)
            | Op::AddBias(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Concat(a, b) => vec![a, b],
            Op::Exp(a)
            | Op::Square(a)
            | Op::Softplus(a)
            | Op::Tanh(a)
            | Op::Clamp(a, ..)
            | Op::Scale(a, _)
            | Op::AddScalar(a, _)
            | Op::SumAll(a)
            | Op::SumRows(a)
            | Op::Slice(a, ..) => vec![a],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Define-by-run record of primitive applications.
///
/// Nodes are appended in evaluation order, so every input of node `k` has
/// an index below `k`. A tape is built per forward pass and dropped after
/// [`Tape::backward`].
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

/// Gradients of one scalar with respect to every node of a tape.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
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

    /// Scalar value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var, GradError> {
        #[cfg(debug_assertions)]
        {
            let inputs_finite = op.inputs().iter().all(|i| self.nodes[i.0].value.is_finite());
            if inputs_finite && !value.is_finite() {
                return Err(GradError::NonFinite { op: op.name() });
            }
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a constant input (data, noise). Gradients still flow to it
    /// but are never written back anywhere.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a parameter leaf. Repeated calls for the same id return the
    /// same node, so gradients from every use accumulate in one place.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            value: store.value(id).clone(),
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        v
    }

    /// A leaf holding the current value of `v`, cut off from its history.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.leaf(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        let out = ops::matmul(self.value(a), self.value(b))?;
        self.push(out, Op::MatMul(a, b))
    }

    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var, GradError> {
        let out = ops::add_bias(self.value(a), self.value(bias))?;
        self.push(out, Op::AddBias(a, bias))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        let out = ops::add(self.value(a), self.value(b))?;
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        let out = ops::sub(self.value(a), self.value(b))?;
        self.push(out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        let out = ops::mul(self.value(a), self.value(b))?;
        self.push(out, Op::Mul(a, b))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, GradError> {
        let out = ops::exp(self.value(a));
        self.push(out, Op::Exp(a))
    }

    pub fn square(&mut self, a: Var) -> Result<Var, GradError> {
        let out = ops::square(self.value(a));
        self.push(out, Op::Square(a))
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var, GradError> {
        let out = ops::softplus(self.value(a));
        self.push(out, Op::Softplus(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, GradError> {
        let out = ops::tanh(self.value(a));
        self.push(out, Op::Tanh(a))
    }

    /// Elementwise clamp; the gradient is zero wherever the bound is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var, GradError> {
        let out = ops::clamp(self.value(a), lo, hi);
        self.push(out, Op::Clamp(a, lo, hi))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var, GradError> {
        let out = ops::scale(self.value(a), s);
        self.push(out, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var, GradError> {
        let out = ops::add_scalar(self.value(a), s);
        self.push(out, Op::AddScalar(a, s))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, GradError> {
        let out = ops::sum_all(self.value(a));
        self.push(out, Op::SumAll(a))
    }

    pub fn sum_rows(&mut self, a: Var) -> Result<Var, GradError> {
        let out = ops::sum_rows(self.value(a))?;
        self.push(out, Op::SumRows(a))
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        let out = ops::concat(self.value(a), self.value(b))?;
        self.push(out, Op::Concat(a, b))
    }

    pub fn slice(&mut self, a: Var, start: usize, end: usize) -> Result<Var, GradError> {
        let out = ops::slice(self.value(a), start, end)?;
        self.push(out, Op::Slice(a, start, end))
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients, GradError> {
        let out_val = self.value(output);
        if out_val.len() != 1 {
            return Err(GradError::NonScalarOutput(out_val.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Tensor::from_parts(out_val.shape().to_vec(), vec![1.0]));

        for k in (0..=output.0).rev() {
            let Some(g) = grads[k].take() else { continue };
            let node = &self.nodes[k];
            self.propagate(&node.op, &node.value, &g, &mut grads);
            grads[k] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Backward pass that adds each parameter's gradient into `store`.
    pub fn backward_into(&self, output: Var, store: &mut ParamStore) -> Result<(), GradError> {
        let grads = self.backward(output)?;
        for (&id, &v) in &self.params {
            if let Some(g) = grads.wrt(v) {
                let target = &mut store.get_mut(id).grad;
                for (t, &d) in target.data_mut().iter_mut().zip(g.data()) {
                    *t += d;
                }
            }
        }
        Ok(())
    }

    fn propagate(&self, op: &Op, out: &Tensor, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        match *op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (m, k) = val(a).dims2().expect("checked in forward");
                let n = val(b).cols();
                let da = ops::matmul_nt(g.data(), val(b).data(), m, k, n);
                let db = ops::matmul_tn(val(a).data(), g.data(), m, k, n);
                accumulate(grads, a, val(a).shape(), da);
                accumulate(grads, b, val(b).shape(), db);
            }
            Op::AddBias(a, bias) => {
                let n = val(bias).len();
                let mut db = vec![0.0; n];
                for row in g.data().chunks(n) {
                    for (d, &x) in db.iter_mut().zip(row) {
                        *d += x;
                    }
                }
                accumulate(grads, a, val(a).shape(), g.data().to_vec());
                accumulate(grads, bias, val(bias).shape(), db);
            }
            Op::Add(a, b) => {
                accumulate(grads, a, val(a).shape(), g.data().to_vec());
                accumulate(grads, b, val(b).shape(), g.data().to_vec());
            }
            Op::Sub(a, b) => {
                accumulate(grads, a, val(a).shape(), g.data().to_vec());
                accumulate(grads, b, val(b).shape(), g.data().iter().map(|x| -x).collect());
            }
            Op::Mul(a, b) => {
                let da = zip(g.data(), val(b).data(), |x, y| x * y);
                let db = zip(g.data(), val(a).data(), |x, y| x * y);
                accumulate(grads, a, val(a).shape(), da);
                accumulate(grads, b, val(b).shape(), db);
            }
            Op::Exp(a) => {
                let d = zip(g.data(), out.data(), |x, e| x * e);
                accumulate(grads, a, val(a).shape(), d);
            }
            Op::Square(a) => {
                let d = zip(g.data(), val(a).data(), |x, v| 2.0 * v * x);
                accumulate(grads, a, val(a).shape(), d);
            }
            Op::Softplus(a) => {
                let d = zip(g.data(), val(a).data(), |x, v| x * ops::sigmoid(v));
                accumulate(grads, a, val(a).shape(), d);
            }
            Op::Tanh(a) => {
                let d = zip(g.data(), out.data(), |x, t| x * (1.0 - t * t));
                accumulate(grads, a, val(a).shape(), d);
            }
            Op::Clamp(a, lo, hi) => {
                let d = zip(g.data(), val(a).data(), |x, v| if v > lo && v < hi { x } else { 0.0 });
                accumulate(grads, a, val(a).shape(), d);
            }
            Op::Scale(a, s) => {
                accumulate(grads, a, val(a).shape(), g.data().iter().map(|x| s * x).collect());
            }
            Op::AddScalar(a, _) => {
                accumulate(grads, a, val(a).shape(), g.data().to_vec());
            }
            Op::SumAll(a) => {
                let d = vec![g.data()[0]; val(a).len()];
                accumulate(grads, a, val(a).shape(), d);
            }
            Op::SumRows(a) => {
                let (m, n) = val(a).dims2().expect("checked in forward");
                let mut d = Vec::with_capacity(m * n);
                for &gi in g.data() {
                    d.extend(std::iter::repeat(gi).take(n));
                }
                accumulate(grads, a, val(a).shape(), d);
            }
            Op::Concat(a, b) => {
                let na = val(a).cols();
                let nb = val(b).cols();
                let mut da = Vec::with_capacity(val(a).len());
                let mut db = Vec::with_capacity(val(b).len());
                for row in g.data().chunks(na + nb) {
                    da.extend_from_slice(&row[..na]);
                    db.extend_from_slice(&row[na..]);
                }
                accumulate(grads, a, val(a).shape(), da);
                accumulate(grads, b, val(b).shape(), db);
            }
            Op::Slice(a, start, end) => {
                let n = val(a).cols();
                let w = end - start;
                let mut d = vec![0.0; val(a).len()];
                for (i, row) in g.data().chunks(w).enumerate() {
                    d[i * n + start..i * n + end].copy_from_slice(row);
                }
                accumulate(grads, a, val(a).shape(), d);
            }
        }
    }
}

fn zip(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, shape: &[usize], d: Vec<f64>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, x) in existing.data_mut().iter_mut().zip(d) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(Tensor::from_parts(shape.to_vec(), d)),
    }
}
