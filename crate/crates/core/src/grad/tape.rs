//! Reverse-mode differentiation over a recorded sequence of matrix ops.
//!
//! A [`Tape`] borrows parameter vectors for its lifetime. Each op records its
//! output value eagerly, and [`Tape::backward`] walks the record in reverse
//! from a scalar loss.

use crate::error::{Error, Result};
use crate::grad::matrix::{gemm, Matrix, Trans};
use crate::grad::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

/// Per-row transform applied by [`Tape::hybrid_head`]. Columns not covered by
/// any segment pass through unchanged.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Segment {
    Softmax { start: usize, len: usize },
    /// `(tanh(x) + 1) / 2`
    HalfTanh { index: usize },
}

#[derive(Debug, Clone)]
enum Op<F> {
    Leaf,
    Affine {
        x: usize,
        set: usize,
        offset: usize,
        fan_in: usize,
        fan_out: usize,
    },
    Tanh(usize),
    Silu(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, F),
    AddScalar(usize),
    Concat(Vec<usize>),
    Columns { x: usize, start: usize },
    Min(usize, usize),
    Square(usize),
    Sum(usize),
    RowSum(usize),
    MaskFill { x: usize, keep: Vec<bool> },
    Hybrid { x: usize, segments: Vec<Segment> },
}

struct Node<F> {
    value: Matrix<F>,
    op: Op<F>,
    needs_grad: bool,
}

struct ParamSet<'a, F> {
    data: &'a [F],
    trainable: bool,
}

pub struct Tape<'a, F: Real> {
    nodes: Vec<Node<F>>,
    params: Vec<ParamSet<'a, F>>,
}

/// Result of [`Tape::backward`].
pub struct Gradients<F> {
    params: Vec<Vec<F>>,
    nodes: Vec<Option<Matrix<F>>>,
}

impl<F: Real> Gradients<F> {
    /// Gradient for a registered parameter set; empty for frozen sets.
    pub fn param(&self, id: ParamId) -> &[F] {
        &self.params[id.0]
    }

    pub fn take_param(&mut self, id: ParamId) -> Vec<F> {
        std::mem::take(&mut self.params[id.0])
    }

    /// Gradient for an [`Tape::input`] leaf, if it influenced the loss.
    pub fn wrt(&self, v: Var) -> Option<&Matrix<F>> {
        self.nodes[v.0].as_ref()
    }
}

fn shape_err(op: &str, a: (usize, usize), b: (usize, usize)) -> Error {
    Error::Contract(format!("{op}: incompatible shapes {a:?} and {b:?}"))
}

fn sigmoid<F: Real>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

fn accumulate<F: Real>(slot: &mut Option<Matrix<F>>, g: Matrix<F>) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}

impl<'a, F: Real> Default for Tape<'a, F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a, F: Real> Tape<'a, F> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a parameter vector. Frozen sets still pass gradients to
    /// their inputs but receive none themselves.
    pub fn params(&mut self, data: &'a [F], trainable: bool) -> ParamId {
        self.params.push(ParamSet { data, trainable });
        ParamId(self.params.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix<F> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Matrix<F>, op: Op<F>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A leaf that receives no gradient.
    pub fn constant(&mut self, value: Matrix<F>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf whose gradient is reported by [`Gradients::wrt`].
    pub fn input(&mut self, value: Matrix<F>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// `x W + b` with `W` (`fan_in x fan_out`, row-major) followed by `b`
    /// starting at `offset` inside parameter set `p`.
    pub fn affine(
        &mut self,
        x: Var,
        p: ParamId,
        offset: usize,
        fan_in: usize,
        fan_out: usize,
    ) -> Result<Var> {
        let xv = self.value(x);
        if xv.cols() != fan_in {
            return Err(shape_err("affine", xv.shape(), (fan_in, fan_out)));
        }
        let data = self.params[p.0].data;
        if data.len() < offset + (fan_in + 1) * fan_out {
            return Err(Error::Contract("affine layer exceeds its parameter vector".into()));
        }
        let w = &data[offset..offset + fan_in * fan_out];
        let b = &data[offset + fan_in * fan_out..offset + (fan_in + 1) * fan_out];
        let rows = xv.rows();
        let mut out = Matrix::zeros(rows, fan_out);
        for i in 0..rows {
            out.row_mut(i).copy_from_slice(b);
        }
        gemm(
            rows,
            fan_in,
            fan_out,
            F::one(),
            xv.data(),
            Trans::No,
            w,
            Trans::No,
            F::one(),
            out.data_mut(),
        );
        let needs = self.needs(x) || self.params[p.0].trainable;
        Ok(self.push(
            out,
            Op::Affine {
                x: x.0,
                set: p.0,
                offset,
                fan_in,
                fan_out,
            },
            needs,
        ))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| a.tanh());
        let n = self.needs(x);
        self.push(v, Op::Tanh(x.0), n)
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| a * sigmoid(a));
        let n = self.needs(x);
        self.push(v, Op::Silu(x.0), n)
    }

    fn binary(
        &mut self,
        name: &str,
        a: Var,
        b: Var,
        f: impl Fn(F, F) -> F,
        op: Op<F>,
    ) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err(name, va.shape(), vb.shape()));
        }
        let v = va.zip_map(vb, f);
        let n = self.needs(a) || self.needs(b);
        Ok(self.push(v, op, n))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a.0, b.0))
    }

    /// Elementwise minimum; ties send the gradient to `a`.
    pub fn min(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("min", a, b, |x, y| if x <= y { x } else { y }, Op::Min(a.0, b.0))
    }

    pub fn scale(&mut self, x: Var, c: F) -> Var {
        let v = self.value(x).map(|a| a * c);
        let n = self.needs(x);
        self.push(v, Op::Scale(x.0, c), n)
    }

    pub fn add_scalar(&mut self, x: Var, c: F) -> Var {
        let v = self.value(x).map(|a| a + c);
        let n = self.needs(x);
        self.push(v, Op::AddScalar(x.0), n)
    }

    pub fn square(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| a * a);
        let n = self.needs(x);
        self.push(v, Op::Square(x.0), n)
    }

    /// Sum of every entry, as a `1 x 1` matrix.
    pub fn sum(&mut self, x: Var) -> Var {
        let v = Matrix::filled(1, 1, self.value(x).sum());
        let n = self.needs(x);
        self.push(v, Op::Sum(x.0), n)
    }

    /// Per-row sum, as a column.
    pub fn row_sum(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = (0..xv.rows()).map(|i| xv.row(i).iter().copied().sum()).collect();
        let v = Matrix::from_vec(xv.rows(), 1, data).expect("one value per row");
        let n = self.needs(x);
        self.push(v, Op::RowSum(x.0), n)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Matrix<F>> = parts.iter().map(|p| self.value(*p)).collect();
        let v = Matrix::hcat(&values)?;
        let n = parts.iter().any(|p| self.needs(*p));
        Ok(self.push(v, Op::Concat(parts.iter().map(|p| p.0).collect()), n))
    }

    pub fn columns(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if start + len > xv.cols() {
            return Err(Error::Contract(format!(
                "column block {start}+{len} outside width {}",
                xv.cols()
            )));
        }
        let v = xv.columns(start, len);
        let n = self.needs(x);
        Ok(self.push(v, Op::Columns { x: x.0, start }, n))
    }

    /// Replaces entries where `keep` is false by `fill`; those entries pass
    /// no gradient.
    pub fn mask_fill(&mut self, x: Var, keep: Vec<bool>, fill: F) -> Result<Var> {
        let xv = self.value(x);
        if keep.len() != xv.data().len() {
            return Err(Error::Contract("mask does not match its input".into()));
        }
        let data = xv
            .data()
            .iter()
            .zip(&keep)
            .map(|(&a, &k)| if k { a } else { fill })
            .collect();
        let v = Matrix::from_vec(xv.rows(), xv.cols(), data)?;
        let n = self.needs(x);
        Ok(self.push(v, Op::MaskFill { x: x.0, keep }, n))
    }

    pub fn hybrid_head(&mut self, x: Var, segments: Vec<Segment>) -> Result<Var> {
        let xv = self.value(x);
        for s in &segments {
            let end = match *s {
                Segment::Softmax { start, len } => start + len,
                Segment::HalfTanh { index } => index + 1,
            };
            if end > xv.cols() {
                return Err(Error::Contract("head segment outside its input".into()));
            }
        }
        let mut v = xv.clone();
        for i in 0..v.rows() {
            let row = v.row_mut(i);
            for s in &segments {
                match *s {
                    Segment::Softmax { start, len } => softmax_in_place(&mut row[start..start + len]),
                    Segment::HalfTanh { index } => {
                        row[index] = (row[index].tanh() + F::one()) * F::of(0.5)
                    }
                }
            }
        }
        let n = self.needs(x);
        Ok(self.push(v, Op::Hybrid { x: x.0, segments }, n))
    }

    /// Gradients of the `1 x 1` node `loss` with respect to every trainable
    /// parameter set and every [`Tape::input`] leaf.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {shape:?}"
            )));
        }
        let mut params: Vec<Vec<F>> = self
            .params
            .iter()
            .map(|p| {
                if p.trainable {
                    vec![F::zero(); p.data.len()]
                } else {
                    Vec::new()
                }
            })
            .collect();
        let mut grads: Vec<Option<Matrix<F>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Matrix::filled(1, 1, F::one()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                grads[i] = None;
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let needs = |j: usize| self.nodes[j].needs_grad;
            let val = |j: usize| &self.nodes[j].value;
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                }
                Op::Affine {
                    x,
                    set,
                    offset,
                    fan_in,
                    fan_out,
                } => {
                    let (x, set, offset, fan_in, fan_out) = (*x, *set, *offset, *fan_in, *fan_out);
                    let xv = val(x);
                    let rows = xv.rows();
                    if self.params[set].trainable {
                        let pg = &mut params[set];
                        let (gw, gb) = pg[offset..offset + (fan_in + 1) * fan_out]
                            .split_at_mut(fan_in * fan_out);
                        gemm(
                            fan_in,
                            rows,
                            fan_out,
                            F::one(),
                            xv.data(),
                            Trans::Yes,
                            g.data(),
                            Trans::No,
                            F::one(),
                            gw,
                        );
                        for r in 0..rows {
                            for (b, &d) in gb.iter_mut().zip(g.row(r)) {
                                *b += d;
                            }
                        }
                    }
                    if needs(x) {
                        let w = &self.params[set].data[offset..offset + fan_in * fan_out];
                        let mut gx = Matrix::zeros(rows, fan_in);
                        gemm(
                            rows,
                            fan_out,
                            fan_in,
                            F::one(),
                            g.data(),
                            Trans::No,
                            w,
                            Trans::Yes,
                            F::zero(),
                            gx.data_mut(),
                        );
                        accumulate(&mut grads[x], gx);
                    }
                }
                Op::Tanh(x) => {
                    let gx = g.zip_map(&node.value, |d, y| d * (F::one() - y * y));
                    accumulate(&mut grads[*x], gx);
                }
                Op::Silu(x) => {
                    let gx = g.zip_map(val(*x), |d, a| {
                        let s = sigmoid(a);
                        d * s * (F::one() + a * (F::one() - s))
                    });
                    accumulate(&mut grads[*x], gx);
                }
                Op::Add(a, b) => {
                    if needs(*b) {
                        accumulate(&mut grads[*b], g.clone());
                    }
                    if needs(*a) {
                        accumulate(&mut grads[*a], g);
                    }
                }
                Op::Sub(a, b) => {
                    if needs(*b) {
                        accumulate(&mut grads[*b], g.map(|d| -d));
                    }
                    if needs(*a) {
                        accumulate(&mut grads[*a], g);
                    }
                }
                Op::Mul(a, b) => {
                    if needs(*a) {
                        accumulate(&mut grads[*a], g.zip_map(val(*b), |d, y| d * y));
                    }
                    if needs(*b) {
                        accumulate(&mut grads[*b], g.zip_map(val(*a), |d, y| d * y));
                    }
                }
                Op::Min(a, b) => {
                    let (va, vb) = (val(*a), val(*b));
                    if needs(*a) {
                        let mut ga = g.clone();
                        for ((d, &x), &y) in ga.data_mut().iter_mut().zip(va.data()).zip(vb.data()) {
                            if x > y {
                                *d = F::zero();
                            }
                        }
                        accumulate(&mut grads[*a], ga);
                    }
                    if needs(*b) {
                        let mut gb = g;
                        for ((d, &x), &y) in gb.data_mut().iter_mut().zip(va.data()).zip(vb.data()) {
                            if x <= y {
                                *d = F::zero();
                            }
                        }
                        accumulate(&mut grads[*b], gb);
                    }
                }
                Op::Scale(x, c) => {
                    let c = *c;
                    accumulate(&mut grads[*x], g.map(|d| d * c));
                }
                Op::AddScalar(x) => accumulate(&mut grads[*x], g),
                Op::Square(x) => {
                    let gx = g.zip_map(val(*x), |d, a| d * (a + a));
                    accumulate(&mut grads[*x], gx);
                }
                Op::Sum(x) => {
                    let (r, c) = val(*x).shape();
                    accumulate(&mut grads[*x], Matrix::filled(r, c, g.get(0, 0)));
                }
                Op::RowSum(x) => {
                    let (r, c) = val(*x).shape();
                    let mut gx = Matrix::zeros(r, c);
                    for i in 0..r {
                        let d = g.get(i, 0);
                        gx.row_mut(i).iter_mut().for_each(|v| *v = d);
                    }
                    accumulate(&mut grads[*x], gx);
                }
                Op::Concat(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let w = val(p).cols();
                        if needs(p) {
                            accumulate(&mut grads[p], g.columns(start, w));
                        }
                        start += w;
                    }
                }
                Op::Columns { x, start } => {
                    let (r, c) = val(*x).shape();
                    let mut gx = Matrix::zeros(r, c);
                    for i in 0..r {
                        gx.row_mut(i)[*start..*start + g.cols()].copy_from_slice(g.row(i));
                    }
                    accumulate(&mut grads[*x], gx);
                }
                Op::MaskFill { x, keep } => {
                    let mut gx = g;
                    for (d, &k) in gx.data_mut().iter_mut().zip(keep) {
                        if !k {
                            *d = F::zero();
                        }
                    }
                    accumulate(&mut grads[*x], gx);
                }
                Op::Hybrid { x, segments } => {
                    let y = &node.value;
                    let mut gx = g;
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = gx.row_mut(r);
                        for s in segments {
                            match *s {
                                Segment::Softmax { start, len } => {
                                    let block = start..start + len;
                                    let dot: F = gr[block.clone()]
                                        .iter()
                                        .zip(&yr[block.clone()])
                                        .map(|(&d, &p)| d * p)
                                        .sum();
                                    for j in block {
                                        gr[j] = yr[j] * (gr[j] - dot);
                                    }
                                }
                                Segment::HalfTanh { index } => {
                                    let p = yr[index];
                                    gr[index] = gr[index] * F::of(2.0) * p * (F::one() - p);
                                }
                            }
                        }
                    }
                    accumulate(&mut grads[*x], gx);
                }
            }
        }
        Ok(Gradients {
            params,
            nodes: grads,
        })
    }
}

/// Numerically stable softmax over a slice.
pub fn softmax_in_place<F: Real>(xs: &mut [F]) {
    let max = xs.iter().copied().fold(F::neg_infinity(), F::max);
    let mut total = F::zero();
    for v in xs.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in xs.iter_mut() {
        *v = *v / total;
    }
}
