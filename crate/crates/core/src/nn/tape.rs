//! Reverse-mode differentiation over 2-D real tensors.

use ndarray::{s, Array1, Array2, Axis, Zip};

use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

const LN_EPS: f64 = 1e-8;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `a + b` with `b` a single row broadcast over rows.
    AddRow(Var, Var),
    /// `a * b` with `b` a single row broadcast over rows.
    MulRow(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Sigmoid(Var),
    Tanh(Var),
    /// Row-wise normalization to zero mean, unit variance.
    Normalize { x: Var, inv_std: Array1<f64> },
    SoftmaxRows(Var),
    Attention { q: Var, k: Var, v: Var, groups: usize, heads: usize, probs: Vec<Array2<f64>> },
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    TileRows(Var, usize),
    SumAll(Var),
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Array2<f64>>>,
    done: bool,
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_prime(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_rows_inplace(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
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

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Gradient of the last backward pass with respect to `v`, if it was reached.
    pub fn grad(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn input(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Input)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id))
    }

    fn check(&self, what: &str, ok: bool, a: Var, b: Var) -> Result<()> {
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "{what}: incompatible shapes {:?} and {:?}",
                self.value(a).dim(),
                self.value(b).dim()
            )))
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check("matmul", self.value(a).ncols() == self.value(b).nrows(), a, b)?;
        let v = self.value(a).dot(self.value(b));
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check("add", self.value(a).dim() == self.value(b).dim(), a, b)?;
        let v = self.value(a) + self.value(b);
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check("sub", self.value(a).dim() == self.value(b).dim(), a, b)?;
        let v = self.value(a) - self.value(b);
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check("mul", self.value(a).dim() == self.value(b).dim(), a, b)?;
        let v = self.value(a) * self.value(b);
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(row));
        self.check("add_row", vb.nrows() == 1 && vb.ncols() == va.ncols(), a, row)?;
        let v = va + vb;
        Ok(self.push(v, Op::AddRow(a, row)))
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(row));
        self.check("mul_row", vb.nrows() == 1 && vb.ncols() == va.ncols(), a, row)?;
        let v = va * vb;
        Ok(self.push(v, Op::MulRow(a, row)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        self.push(v, Op::Scale(a, c))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(gelu);
        self.push(v, Op::Gelu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    /// Normalizes each row to zero mean and unit variance (no affine part).
    pub fn normalize_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let n = x.ncols() as f64;
        let mut out = x.clone();
        let mut inv_std = Array1::zeros(x.nrows());
        for (i, mut row) in out.rows_mut().into_iter().enumerate() {
            let mean = row.sum() / n;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|v| v * v).sum::<f64>() / n;
            let is = 1.0 / (var + LN_EPS).sqrt();
            row.mapv_inplace(|v| v * is);
            inv_std[i] = is;
        }
        self.push(out, Op::Normalize { x: a, inv_std })
    }

    /// Layer normalization with per-column gain and bias rows.
    pub fn layer_norm(&mut self, a: Var, gain: Var, bias: Var) -> Result<Var> {
        let n = self.normalize_rows(a);
        let g = self.mul_row(n, gain)?;
        self.add_row(g, bias)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        softmax_rows_inplace(&mut v);
        self.push(v, Op::SoftmaxRows(a))
    }

    /// Scaled dot-product attention. `q`, `k`, `v` hold `groups` independent
    /// sequences stacked along rows; columns split into `heads` equal heads.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, groups: usize, heads: usize) -> Result<Var> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        if qv.dim() != kv.dim() || qv.dim() != vv.dim() {
            return Err(Error::InvalidArgument(format!(
                "attention inputs differ in shape: {:?} {:?} {:?}",
                qv.dim(),
                kv.dim(),
                vv.dim()
            )));
        }
        let (rows, d) = qv.dim();
        if groups == 0 || rows % groups != 0 || heads == 0 || d % heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "attention: {rows}x{d} does not split into {groups} groups and {heads} heads"
            )));
        }
        let n = rows / groups;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = Array2::zeros((rows, d));
        let mut probs = Vec::with_capacity(groups * heads);
        for g in 0..groups {
            for h in 0..heads {
                let (r0, c0) = (g * n, h * dh);
                let qs = qv.slice(s![r0..r0 + n, c0..c0 + dh]);
                let ks = kv.slice(s![r0..r0 + n, c0..c0 + dh]);
                let vs = vv.slice(s![r0..r0 + n, c0..c0 + dh]);
                let mut sc = qs.dot(&ks.t()) * scale;
                if sc.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Numerical("non-finite attention logits".into()));
                }
                softmax_rows_inplace(&mut sc);
                debug_assert!(sc.rows().into_iter().all(|r| (r.sum() - 1.0).abs() < 1e-9));
                out.slice_mut(s![r0..r0 + n, c0..c0 + dh]).assign(&sc.dot(&vs));
                probs.push(sc);
            }
        }
        Ok(self.push(out, Op::Attention { q, k, v, groups, heads, probs }))
    }

    /// Attention weights of the most recent attention node for `(group, head)`.
    pub fn attention_probs(&self, node: Var, group: usize, head: usize) -> Option<&Array2<f64>> {
        match &self.nodes[node.0].op {
            Op::Attention { probs, heads, .. } => probs.get(group * heads + head),
            _ => None,
        }
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Result<Var> {
        let x = self.value(a);
        if start + width > x.ncols() {
            return Err(Error::InvalidArgument(format!(
                "column slice {start}..{} of a {}-column tensor",
                start + width,
                x.ncols()
            )));
        }
        let v = x.slice(s![.., start..start + width]).to_owned();
        Ok(self.push(v, Op::SliceCols(a, start)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of nothing".into()))?;
        let rows = self.value(first).nrows();
        if parts.iter().any(|&p| self.value(p).nrows() != rows) {
            return Err(Error::InvalidArgument("concat_cols: row counts differ".into()));
        }
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(self.push(v, Op::ConcatCols(parts.to_vec())))
    }

    /// Stacks `times` copies of `a` vertically.
    pub fn tile_rows(&mut self, a: Var, times: usize) -> Result<Var> {
        if times == 0 {
            return Err(Error::InvalidArgument("tile_rows needs at least one copy".into()));
        }
        let x = self.value(a);
        let views: Vec<_> = (0..times).map(|_| x.view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(self.push(v, Op::TileRows(a, times)))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(v, Op::SumAll(a))
    }

    /// Backpropagates from a scalar node.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore) -> Result<()> {
        if self.value(loss).dim() != (1, 1) {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar, got {:?}",
                self.value(loss).dim()
            )));
        }
        self.backward_with(loss, Array2::ones((1, 1)), store)
    }

    /// Backpropagates an upstream gradient `seed` from `out`. Parameter
    /// gradients are added into `store`.
    pub fn backward_with(&mut self, out: Var, seed: Array2<f64>, store: &mut ParamStore) -> Result<()> {
        if self.done {
            return Err(Error::BackwardTwice);
        }
        if seed.dim() != self.value(out).dim() {
            return Err(Error::InvalidArgument("seed gradient shape differs from the output".into()));
        }
        self.done = true;
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(seed);
        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads, store);
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Array2<f64>, grads: &mut [Option<Array2<f64>>], store: &mut ParamStore) {
        let acc = |grads: &mut [Option<Array2<f64>>], v: Var, d: Array2<f64>| match &mut grads[v.0] {
            Some(x) => *x += &d,
            slot @ None => *slot = Some(d),
        };
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Input => {}
            Op::Param(id) => store.accumulate(*id, g),
            Op::MatMul(a, b) => {
                acc(grads, *a, g.dot(&val(*b).t()));
                acc(grads, *b, val(*a).t().dot(g));
            }
            Op::Add(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, -g);
            }
            Op::Mul(a, b) => {
                acc(grads, *a, g * val(*b));
                acc(grads, *b, g * val(*a));
            }
            Op::AddRow(a, r) => {
                acc(grads, *a, g.clone());
                acc(grads, *r, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::MulRow(a, r) => {
                acc(grads, *a, g * val(*r));
                acc(grads, *r, (g * val(*a)).sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::Scale(a, c) => acc(grads, *a, g * *c),
            Op::Gelu(a) => {
                let mut d = val(*a).mapv(gelu_prime);
                d *= g;
                acc(grads, *a, d);
            }
            Op::Sigmoid(a) => {
                let mut d = node.value.mapv(|y| y * (1.0 - y));
                d *= g;
                acc(grads, *a, d);
            }
            Op::Tanh(a) => {
                let mut d = node.value.mapv(|y| 1.0 - y * y);
                d *= g;
                acc(grads, *a, d);
            }
            Op::Normalize { x, inv_std } => {
                // dx = inv_std * (g - mean(g) - y * mean(g * y))
                let y = &node.value;
                let n = y.ncols() as f64;
                let mut d = Array2::zeros(y.dim());
                Zip::from(d.rows_mut())
                    .and(g.rows())
                    .and(y.rows())
                    .and(inv_std)
                    .for_each(|mut dr, gr, yr, &is| {
                        let mg = gr.sum() / n;
                        let mgy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / n;
                        Zip::from(&mut dr).and(gr).and(yr).for_each(|d, &gv, &yv| *d = is * (gv - mg - yv * mgy));
                    });
                acc(grads, *x, d);
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let mut d = g * y;
                for (mut dr, yr) in d.rows_mut().into_iter().zip(y.rows()) {
                    let s = dr.sum();
                    Zip::from(&mut dr).and(yr).for_each(|d, &yv| *d -= yv * s);
                }
                acc(grads, *a, d);
            }
            Op::Attention { q, k, v, groups, heads, probs } => {
                let (qv, kv, vv) = (val(*q), val(*k), val(*v));
                let (rows, d) = qv.dim();
                let n = rows / groups;
                let dh = d / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let mut dq = Array2::zeros((rows, d));
                let mut dk = Array2::zeros((rows, d));
                let mut dv = Array2::zeros((rows, d));
                for gi in 0..*groups {
                    for h in 0..*heads {
                        let p = &probs[gi * heads + h];
                        let (r0, c0) = (gi * n, h * dh);
                        let go = g.slice(s![r0..r0 + n, c0..c0 + dh]);
                        let qs = qv.slice(s![r0..r0 + n, c0..c0 + dh]);
                        let ks = kv.slice(s![r0..r0 + n, c0..c0 + dh]);
                        let vs = vv.slice(s![r0..r0 + n, c0..c0 + dh]);
                        dv.slice_mut(s![r0..r0 + n, c0..c0 + dh]).assign(&p.t().dot(&go));
                        let dp = go.dot(&vs.t());
                        let mut ds = &dp * p;
                        for (mut dr, pr) in ds.rows_mut().into_iter().zip(p.rows()) {
                            let sum = dr.sum();
                            Zip::from(&mut dr).and(pr).for_each(|d, &pv| *d -= pv * sum);
                        }
                        ds *= scale;
                        dq.slice_mut(s![r0..r0 + n, c0..c0 + dh]).assign(&ds.dot(&ks));
                        dk.slice_mut(s![r0..r0 + n, c0..c0 + dh]).assign(&ds.t().dot(&qs));
                    }
                }
                acc(grads, *q, dq);
                acc(grads, *k, dk);
                acc(grads, *v, dv);
            }
            Op::SliceCols(a, start) => {
                let mut d = Array2::zeros(val(*a).dim());
                d.slice_mut(s![.., *start..*start + g.ncols()]).assign(g);
                acc(grads, *a, d);
            }
            Op::ConcatCols(parts) => {
                let mut c = 0;
                for &p in parts {
                    let w = val(p).ncols();
                    acc(grads, p, g.slice(s![.., c..c + w]).to_owned());
                    c += w;
                }
            }
            Op::TileRows(a, times) => {
                let n = val(*a).nrows();
                let mut d = Array2::zeros(val(*a).dim());
                for i in 0..*times {
                    d += &g.slice(s![i * n..(i + 1) * n, ..]);
                }
                acc(grads, *a, d);
            }
            Op::SumAll(a) => acc(grads, *a, Array2::from_elem(val(*a).dim(), g[[0, 0]])),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_rule_on_scalars() {
        let mut store = ParamStore::new();
        let mut t = Tape::new();
        let x = t.input(Array2::from_elem((1, 1), 3.0));
        let y = t.input(Array2::from_elem((1, 1), -2.0));
        let z = t.mul(x, y).unwrap();
        t.backward(z, &mut store).unwrap();
        assert_eq!(t.grad(x).unwrap()[[0, 0]], -2.0);
        assert_eq!(t.grad(y).unwrap()[[0, 0]], 3.0);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut store = ParamStore::new();
        let mut t = Tape::new();
        let x = t.input(Array2::from_shape_fn((3, 4), |(i, j)| (i * 4 + j) as f64));
        let s = t.sum_all(x);
        t.backward(s, &mut store).unwrap();
        assert!(t.grad(x).unwrap().iter().all(|&g| g == 1.0));
    }

    #[test]
    fn second_backward_is_rejected() {
        let mut store = ParamStore::new();
        let mut t = Tape::new();
        let x = t.input(Array2::ones((2, 2)));
        let s = t.sum_all(x);
        t.backward(s, &mut store).unwrap();
        assert!(matches!(t.backward(s, &mut store), Err(Error::BackwardTwice)));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut t = Tape::new();
        let x = t.input(Array2::from_shape_fn((4, 5), |(i, j)| (i as f64 - j as f64) * 30.0));
        let y = t.softmax_rows(x);
        for r in t.value(y).rows() {
            assert!((r.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn normalized_rows_have_zero_mean_unit_variance() {
        let mut t = Tape::new();
        let x = t.input(Array2::from_shape_fn((3, 16), |(i, j)| ((i + 1) * j) as f64 * 0.37 - 2.0));
        let y = t.normalize_rows(x);
        for r in t.value(y).rows() {
            let mean = r.sum() / 16.0;
            let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn sigmoid_is_bounded() {
        let mut t = Tape::new();
        let x = t.input(Array2::from_shape_fn((1, 7), |(_, j)| (j as f64 - 3.0) * 10.0));
        let y = t.sigmoid(x);
        assert!(t.value(y).iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(t.value(y).iter().skip(1).take(5).all(|&v| v > 0.0 && v < 1.0));
    }
}
