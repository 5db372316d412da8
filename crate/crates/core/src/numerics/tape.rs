use std::collections::{BTreeMap, HashMap};

use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::Tensor;
use super::NumericError;
use crate::scalar::Scalar;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

type Derivative<T> = Box<dyn Fn(T) -> T>;

enum Op<T> {
    Leaf,
    Param,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddRow(Var, Var),
    Scale(Var, Var),
    ScaleConst(Var, T),
    AddConst(Var),
    MatMul(Var, Var),
    Transpose(Var),
    SelectRows(Var, Vec<usize>),
    SoftmaxRows(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Clamp(Var, T, T),
    L2Norm(Var),
    Sum(Var),
    Mean(Var),
    MaskedFill(Var, Vec<bool>),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    Custom(Var, Derivative<T>),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Records tensor operations so that [`Tape::backward`] can replay them in
/// reverse. One tape per worker; tapes are never shared.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, Var>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn same_shape<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<(), NumericError> {
    if a.dims() != b.dims() {
        return Err(NumericError::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

fn zip_map<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let (r, c) = a.dims();
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(vec![r, c], data)
}

fn as_matrix<T: Scalar>(t: Tensor<T>) -> Tensor<T> {
    let (r, c) = t.dims();
    Tensor::new(vec![r, c], t.into_data())
}

fn softmax_rows<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (r, c) = x.dims();
    let mut out = Vec::with_capacity(r * c);
    for i in 0..r {
        let row = x.row(i);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = row.iter().map(|&v| (v - max).exp()).collect();
        let total: T = exps.iter().copied().sum();
        out.extend(exps.into_iter().map(|e| e / total));
    }
    Tensor::new(vec![r, c], out)
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op_name: &'static str, value: Tensor<T>, op: Op<T>) -> Result<Var, NumericError> {
        if !value.is_finite() {
            return Err(NumericError::NonFinite { op: op_name });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a constant input. Its gradient is computed but not reported.
    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var, NumericError> {
        self.push("constant", as_matrix(value), Op::Leaf)
    }

    pub fn scalar(&mut self, value: T) -> Result<Var, NumericError> {
        self.constant(Tensor::scalar(value))
    }

    /// Records (once per tape) the current value of a learnable parameter.
    pub fn param(&mut self, store: &ParamStore<T>, name: &str) -> Result<Var, NumericError> {
        let id = store
            .id(name)
            .ok_or_else(|| NumericError::UnknownParam(name.to_string()))?;
        self.param_by_id(store, id)
    }

    pub fn param_by_id(&mut self, store: &ParamStore<T>, id: ParamId) -> Result<Var, NumericError> {
        if let Some(&v) = self.params.get(&id) {
            return Ok(v);
        }
        let value = as_matrix(store.value(id).clone());
        let v = self.push("param", value, Op::Param)?;
        self.params.insert(id, v);
        Ok(v)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("add", x, y)?;
        let out = zip_map(x, y, |p, q| p + q);
        self.push("add", out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("sub", x, y)?;
        let out = zip_map(x, y, |p, q| p - q);
        self.push("sub", out, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("mul", x, y)?;
        let out = zip_map(x, y, |p, q| p * q);
        self.push("mul", out, Op::Mul(a, b))
    }

    /// Elementwise quotient.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("div", x, y)?;
        let out = zip_map(x, y, |p, q| p / q);
        self.push("div", out, Op::Div(a, b))
    }

    /// `matrix + row`, the row vector added to every row.
    pub fn add_row(&mut self, matrix: Var, row: Var) -> Result<Var, NumericError> {
        let (x, y) = (self.value(matrix), self.value(row));
        let (r, c) = x.dims();
        if y.dims() != (1, c) {
            return Err(NumericError::shape("add_row", x.shape(), y.shape()));
        }
        let mut out = x.clone();
        for i in 0..r {
            for (o, &b) in out.row_mut(i).iter_mut().zip(y.data()) {
                *o += b;
            }
        }
        self.push("add_row", as_matrix(out), Op::AddRow(matrix, row))
    }

    /// Tensor times a recorded `1×1` scalar.
    pub fn scale(&mut self, a: Var, s: Var) -> Result<Var, NumericError> {
        let (x, y) = (self.value(a), self.value(s));
        if y.len() != 1 {
            return Err(NumericError::shape("scale", x.shape(), y.shape()));
        }
        let k = y.item();
        let out = x.map(|v| v * k);
        self.push("scale", out, Op::Scale(a, s))
    }

    pub fn scale_const(&mut self, a: Var, k: T) -> Result<Var, NumericError> {
        let out = self.value(a).map(|v| v * k);
        self.push("scale_const", out, Op::ScaleConst(a, k))
    }

    pub fn add_const(&mut self, a: Var, k: T) -> Result<Var, NumericError> {
        let out = self.value(a).map(|v| v + k);
        self.push("add_const", out, Op::AddConst(a))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.cols() != y.rows() {
            return Err(NumericError::shape("matmul", x.shape(), y.shape()));
        }
        let out = x.matmul(y);
        self.push("matmul", out, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, NumericError> {
        let out = self.value(a).transpose();
        self.push("transpose", out, Op::Transpose(a))
    }

    /// Row gather; with a parameter table this is an embedding lookup.
    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var, NumericError> {
        let x = self.value(a);
        let (r, c) = x.dims();
        if let Some(&bad) = rows.iter().find(|&&i| i >= r) {
            return Err(NumericError::shape("select_rows", x.shape(), &[bad]));
        }
        let mut data = Vec::with_capacity(rows.len() * c);
        for &i in rows {
            data.extend_from_slice(x.row(i));
        }
        let out = Tensor::new(vec![rows.len(), c], data);
        self.push("select_rows", out, Op::SelectRows(a, rows.to_vec()))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var, NumericError> {
        let out = softmax_rows(self.value(a));
        self.push("softmax_rows", out, Op::SoftmaxRows(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, NumericError> {
        let out = self.value(a).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push("relu", out, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, NumericError> {
        let out = self.value(a).map(|v| {
            if v >= T::zero() {
                T::one() / (T::one() + (-v).exp())
            } else {
                let e = v.exp();
                e / (T::one() + e)
            }
        });
        self.push("sigmoid", out, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, NumericError> {
        let out = self.value(a).map(T::tanh);
        self.push("tanh", out, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, NumericError> {
        let out = self.value(a).map(T::exp);
        self.push("exp", out, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var, NumericError> {
        let out = self.value(a).map(T::ln);
        self.push("log", out, Op::Log(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var, NumericError> {
        let out = self.value(a).map(T::sqrt);
        self.push("sqrt", out, Op::Sqrt(a))
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(&mut self, a: Var, lo: T, hi: T) -> Result<Var, NumericError> {
        let out = self.value(a).map(|v| v.max(lo).min(hi));
        self.push("clamp", out, Op::Clamp(a, lo, hi))
    }

    /// Frobenius norm as a `1×1` tensor. The subgradient at zero is zero.
    pub fn l2_norm(&mut self, a: Var) -> Result<Var, NumericError> {
        let out = Tensor::scalar(self.value(a).squared_norm().sqrt());
        self.push("l2_norm", out, Op::L2Norm(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, NumericError> {
        let out = Tensor::scalar(self.value(a).data().iter().copied().sum());
        self.push("sum", out, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, NumericError> {
        let x = self.value(a);
        let n = T::from_usize_lossy(x.len());
        let out = Tensor::scalar(x.data().iter().copied().sum::<T>() / n);
        self.push("mean", out, Op::Mean(a))
    }

    /// Overwrites the entries where `mask` is true with `fill`.
    pub fn masked_fill(&mut self, a: Var, mask: &[bool], fill: T) -> Result<Var, NumericError> {
        let x = self.value(a);
        if mask.len() != x.len() {
            return Err(NumericError::shape("masked_fill", x.shape(), &[mask.len()]));
        }
        let mut out = x.clone();
        for (v, &m) in out.data_mut().iter_mut().zip(mask) {
            if m {
                *v = fill;
            }
        }
        self.push("masked_fill", as_matrix(out), Op::MaskedFill(a, mask.to_vec()))
    }

    /// Stacks tensors with equal column counts vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NumericError> {
        let first = self.value(*parts.first().ok_or(NumericError::EmptyConcat)?);
        let c = first.cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != c {
                return Err(NumericError::shape("concat_rows", self.value(parts[0]).shape(), t.shape()));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let out = Tensor::new(vec![rows, c], data);
        self.push("concat_rows", out, Op::ConcatRows(parts.to_vec()))
    }

    /// Places tensors with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericError> {
        let first = self.value(*parts.first().ok_or(NumericError::EmptyConcat)?);
        let r = first.rows();
        let mut total = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rows() != r {
                return Err(NumericError::shape("concat_cols", self.value(parts[0]).shape(), t.shape()));
            }
            total += t.cols();
        }
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let out = Tensor::new(vec![r, total], data);
        self.push("concat_cols", out, Op::ConcatCols(parts.to_vec()))
    }

    /// Elementwise map with a caller-supplied derivative.
    pub fn custom_unary(
        &mut self,
        a: Var,
        f: impl Fn(T) -> T,
        df: impl Fn(T) -> T + 'static,
    ) -> Result<Var, NumericError> {
        let out = self.value(a).map(f);
        self.push("custom_unary", out, Op::Custom(a, Box::new(df)))
    }

    /// Reverse pass from a scalar. Returns one gradient per parameter in
    /// `store`; parameters that are absent from the tape or unreachable from
    /// `loss` receive zeros.
    pub fn backward(&self, loss: Var, store: &ParamStore<T>) -> Result<Gradients<T>, NumericError> {
        let adjoints = self.adjoints(loss)?;
        let mut by_name = BTreeMap::new();
        for (id, name) in store.iter_ids() {
            let grad = match self.params.get(&id).and_then(|v| adjoints[v.0].as_ref()) {
                Some(g) => Tensor::new(store.value(id).shape().to_vec(), g.data().to_vec()),
                None => store.value(id).zeros_like(),
            };
            by_name.insert(name.to_string(), grad);
        }
        Ok(Gradients::new(by_name))
    }

    /// Gradient of a scalar `loss` with respect to every recorded node.
    pub fn gradients_wrt(&self, loss: Var, wrt: &[Var]) -> Result<Vec<Tensor<T>>, NumericError> {
        let adjoints = self.adjoints(loss)?;
        Ok(wrt
            .iter()
            .map(|v| adjoints[v.0].clone().unwrap_or_else(|| self.value(*v).zeros_like()))
            .collect())
    }

    fn adjoints(&self, loss: Var) -> Result<Vec<Option<Tensor<T>>>, NumericError> {
        let out = self.value(loss);
        if out.len() != 1 {
            return Err(NumericError::NonScalar(out.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::full(out.rows(), out.cols(), T::one()));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(grads)
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, delta: Tensor<T>| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        };
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                acc(*a, zip_map(g, val(*b), |p, q| p * q));
                acc(*b, zip_map(g, val(*a), |p, q| p * q));
            }
            Op::Div(a, b) => {
                let (x, y) = (val(*a), val(*b));
                acc(*a, zip_map(g, y, |p, q| p / q));
                let gb: Vec<T> = g
                    .data()
                    .iter()
                    .zip(x.data().iter().zip(y.data()))
                    .map(|(&gv, (&xv, &yv))| -gv * xv / (yv * yv))
                    .collect();
                acc(*b, Tensor::new(vec![g.rows(), g.cols()], gb));
            }
            Op::AddRow(m, row) => {
                acc(*m, g.clone());
                let (r, c) = g.dims();
                let mut sums = vec![T::zero(); c];
                for i in 0..r {
                    for (s, &v) in sums.iter_mut().zip(g.row(i)) {
                        *s += v;
                    }
                }
                acc(*row, Tensor::new(vec![1, c], sums));
            }
            Op::Scale(a, s) => {
                let k = val(*s).item();
                acc(*a, g.map(|v| v * k));
                let ds: T = g.data().iter().zip(val(*a).data()).map(|(&p, &q)| p * q).sum();
                acc(*s, Tensor::scalar(ds));
            }
            Op::ScaleConst(a, k) => {
                let k = *k;
                acc(*a, g.map(|v| v * k));
            }
            Op::AddConst(a) => acc(*a, g.clone()),
            Op::MatMul(a, b) => {
                let (x, y) = (val(*a), val(*b));
                acc(*a, g.matmul(&y.transpose()));
                acc(*b, x.transpose().matmul(g));
            }
            Op::Transpose(a) => acc(*a, g.transpose()),
            Op::SelectRows(a, rows) => {
                let src = val(*a);
                let mut d = Tensor::zeros(src.rows(), src.cols());
                for (k, &i) in rows.iter().enumerate() {
                    for (o, &v) in d.row_mut(i).iter_mut().zip(g.row(k)) {
                        *o += v;
                    }
                }
                acc(*a, d);
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let (r, c) = y.dims();
                let mut d = Vec::with_capacity(r * c);
                for i in 0..r {
                    let (yr, gr) = (y.row(i), g.row(i));
                    let inner: T = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                    d.extend(yr.iter().zip(gr).map(|(&p, &q)| p * (q - inner)));
                }
                acc(*a, Tensor::new(vec![r, c], d));
            }
            Op::Relu(a) => acc(
                *a,
                zip_map(g, val(*a), |p, q| if q > T::zero() { p } else { T::zero() }),
            ),
            Op::Sigmoid(a) => acc(*a, zip_map(g, &node.value, |p, y| p * y * (T::one() - y))),
            Op::Tanh(a) => acc(*a, zip_map(g, &node.value, |p, y| p * (T::one() - y * y))),
            Op::Exp(a) => acc(*a, zip_map(g, &node.value, |p, y| p * y)),
            Op::Log(a) => acc(*a, zip_map(g, val(*a), |p, x| p / x)),
            Op::Sqrt(a) => acc(*a, zip_map(g, &node.value, |p, y| p / (T::lit(2.0) * y))),
            Op::Clamp(a, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                acc(
                    *a,
                    zip_map(g, val(*a), |p, x| if x < lo || x > hi { T::zero() } else { p }),
                )
            }
            Op::L2Norm(a) => {
                let n = node.value.item();
                let gs = g.item();
                let d = if n > T::zero() {
                    val(*a).map(|x| gs * x / n)
                } else {
                    val(*a).zeros_like()
                };
                acc(*a, d);
            }
            Op::Sum(a) => {
                let x = val(*a);
                acc(*a, Tensor::full(x.rows(), x.cols(), g.item()));
            }
            Op::Mean(a) => {
                let x = val(*a);
                let v = g.item() / T::from_usize_lossy(x.len());
                acc(*a, Tensor::full(x.rows(), x.cols(), v));
            }
            Op::MaskedFill(a, mask) => {
                let mut d = g.clone();
                for (v, &m) in d.data_mut().iter_mut().zip(mask) {
                    if m {
                        *v = T::zero();
                    }
                }
                acc(*a, d);
            }
            Op::ConcatRows(parts) => {
                let c = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let r = val(p).rows();
                    let slice = g.data()[offset * c..(offset + r) * c].to_vec();
                    acc(p, Tensor::new(vec![r, c], slice));
                    offset += r;
                }
            }
            Op::ConcatCols(parts) => {
                let r = g.rows();
                let mut offset = 0;
                for &p in parts {
                    let c = val(p).cols();
                    let mut d = Vec::with_capacity(r * c);
                    for i in 0..r {
                        d.extend_from_slice(&g.row(i)[offset..offset + c]);
                    }
                    acc(p, Tensor::new(vec![r, c], d));
                    offset += c;
                }
            }
            Op::Custom(a, df) => acc(*a, zip_map(g, val(*a), |p, x| p * df(x))),
        }
    }
}
