//! Reverse-mode differentiation over [`Array`] values.
//!
//! A [`Tape`] records every operation applied to its variables. Leaves may
//! borrow their arrays, so binding a large parameter set costs no copies.
//! [`Tape::backward`] walks the record in reverse from a scalar loss.

use std::borrow::Cow;

use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::numerics::{ops, Array};
use crate::scalar::Scalar;
use crate::syntax::{AttentionMask, DistanceMatrix};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulT(Var, Var),
    Add(Var, Var),
    /// Adds a `1 × d` row to every row.
    AddRow(Var, Var),
    Scale(Var, T),
    Transpose(Var),
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Relu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        xhat: Array<T>,
        inv_std: Vec<T>,
        bias: Var,
    },
    Mul {
        x: Var,
        factor: Array<T>,
    },
    MaskedSoftmax(Var),
    Reweight {
        p: Var,
        inv_d: Array<T>,
        z: Vec<T>,
    },
    MaxPoolRows {
        x: Var,
        argmax: Vec<usize>,
    },
    SliceRows {
        x: Var,
        begin: usize,
    },
    GatherRows {
        table: Var,
        idx: Vec<usize>,
    },
    Softmax(Var),
    CrossEntropy {
        logits: Var,
        target: usize,
        probs: Array<T>,
    },
    Sum(Var),
    SumSquares(Var),
}

struct Node<'a, T: Scalar> {
    value: Cow<'a, Array<T>>,
    op: Op<T>,
}

/// Operation record from inputs to a scalar loss.
pub struct Tape<'a, T: Scalar> {
    nodes: Vec<Node<'a, T>>,
}

impl<T: Scalar> Default for Tape<'_, T> {
    fn default() -> Self {
        Tape { nodes: Vec::new() }
    }
}

/// Gradients indexed by [`Var`]. Variables the loss does not depend on have none.
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Array<T>>>,
    shapes: Vec<[usize; 2]>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Array<T>> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of `v`, zero-filled when the loss does not reach it.
    pub fn wrt(&self, v: Var) -> Array<T> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let [r, c] = self.shapes[v.0];
                Array::zeros(r, c)
            }
        }
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Array<T>>, g: Array<T>) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += *b;
            }
        }
        None => *slot = Some(g),
    }
}

impl<'a, T: Scalar> Tape<'a, T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array<T>, op: Op<T>) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_checked(&mut self, value: Array<T>, op: Op<T>, name: &'static str) -> Result<Var> {
        let value = value.ensure_finite(name)?;
        Ok(self.push(value, op))
    }

    /// Records a borrowed input.
    pub fn leaf(&mut self, value: &'a Array<T>) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(value),
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records an owned input.
    pub fn constant(&mut self, value: Array<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Array<T> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> Result<T> {
        let a = self.value(v);
        if a.shape() != [1, 1] {
            return Err(Error::Shape {
                op: "scalar",
                detail: format!("{:?}", a.shape()),
            });
        }
        Ok(a.data()[0])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push_checked(out, Op::MatMul(a, b), "matmul")
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul_t(self.value(b))?;
        self.push_checked(out, Op::MatMulT(a, b), "matmul_t")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        self.push_checked(out, Op::Add(a, b), "add")
    }

    /// Broadcast-adds the `1 × d` row `bias` to each row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.shape() != [1, xv.cols()] {
            return Err(Error::Shape {
                op: "add_row",
                detail: format!("bias {:?} for {:?}", bv.shape(), xv.shape()),
            });
        }
        let mut out = xv.clone();
        for i in 0..out.rows() {
            for (o, &b) in out.row_mut(i).iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        self.push_checked(out, Op::AddRow(x, bias), "add_row")
    }

    pub fn scale(&mut self, x: Var, s: T) -> Result<Var> {
        let out = self.value(x).scale(s);
        self.push_checked(out, Op::Scale(x, s), "scale")
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let out = self.value(x).transpose();
        self.push(out, Op::Transpose(x))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let values: Vec<&Array<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Array::concat(&values, axis)?;
        Ok(self.push(
            out,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = ops::relu(self.value(x));
        self.push(out, Op::Relu(x))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (xv, gv, bv) = (self.value(x), self.value(gain), self.value(bias));
        ops::check_affine(xv, gv, bv)?;
        let (xhat, inv_std) = ops::normalize_rows(xv);
        let mut out = xhat.clone();
        for i in 0..out.rows() {
            for (j, v) in out.row_mut(i).iter_mut().enumerate() {
                *v = *v * gv.data()[j] + bv.data()[j];
            }
        }
        self.push_checked(
            out,
            Op::LayerNorm {
                x,
                gain,
                xhat,
                inv_std,
                bias,
            },
            "layer_norm",
        )
    }

    /// Inverted dropout; returns `x` itself when not training.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, rng: &mut R, train: bool) -> Result<Var> {
        ops::check_rate(rate)?;
        if !train || rate == 0.0 {
            return Ok(x);
        }
        let [r, c] = self.value(x).shape();
        let factor = ops::dropout_mask(r, c, rate, rng)?;
        let data = self
            .value(x)
            .data()
            .iter()
            .zip(factor.data())
            .map(|(&a, &m)| a * m)
            .collect();
        let out = Array::from_vec(r, c, data)?;
        Ok(self.push(out, Op::Mul { x, factor }))
    }

    pub fn masked_softmax(&mut self, scores: Var, mask: &AttentionMask) -> Result<Var> {
        let out = ops::masked_softmax(self.value(scores), mask)?;
        Ok(self.push(out, Op::MaskedSoftmax(scores)))
    }

    /// Distance reweighting of an attention matrix, see [`ops::distance_reweight`].
    pub fn distance_reweight(&mut self, p: Var, d: &DistanceMatrix, mask: &AttentionMask) -> Result<Var> {
        let (out, z) = ops::distance_reweight(self.value(p), d, mask)?;
        let n = d.len();
        let mut inv_d = Array::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if mask.allows(i, j) {
                    inv_d.set(i, j, T::one() / T::of(f64::from(d.get(i, j))));
                }
            }
        }
        Ok(self.push(out, Op::Reweight { p, inv_d, z }))
    }

    pub fn max_pool_rows(&mut self, x: Var) -> Result<Var> {
        let (out, argmax) = ops::max_pool_rows(self.value(x))?;
        Ok(self.push(out, Op::MaxPoolRows { x, argmax }))
    }

    /// Rows `begin..end` of `x`.
    pub fn slice_rows(&mut self, x: Var, begin: usize, end: usize) -> Result<Var> {
        let xv = self.value(x);
        if begin > end || end > xv.rows() {
            return Err(Error::Shape {
                op: "slice_rows",
                detail: format!("[{begin}, {end}) of {} rows", xv.rows()),
            });
        }
        let c = xv.cols();
        let out = Array::from_vec(end - begin, c, xv.data()[begin * c..end * c].to_vec())?;
        Ok(self.push(out, Op::SliceRows { x, begin }))
    }

    /// Embedding lookup: row `idx[k]` of `table` becomes output row `k`.
    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        if let Some(&bad) = idx.iter().find(|&&i| i >= tv.rows()) {
            return Err(Error::Shape {
                op: "gather_rows",
                detail: format!("index {bad} into {} rows", tv.rows()),
            });
        }
        let c = tv.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(tv.row(i));
        }
        let out = Array::from_vec(idx.len(), c, data)?;
        Ok(self.push(
            out,
            Op::GatherRows {
                table,
                idx: idx.to_vec(),
            },
        ))
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let out = ops::softmax_rows(self.value(x));
        self.push(out, Op::Softmax(x))
    }

    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let (loss, probs) = ops::cross_entropy(self.value(logits), target)?;
        Ok(self.push(
            Array::row_vector(vec![loss]),
            Op::CrossEntropy { logits, target, probs },
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Array::row_vector(vec![s]), Op::Sum(x))
    }

    pub fn sum_squares(&mut self, x: Var) -> Var {
        let s = self.value(x).norm_sq();
        self.push(Array::row_vector(vec![s]), Op::SumSquares(x))
    }

    /// Arithmetic mean of same-shaped values.
    pub fn mean(&mut self, xs: &[Var]) -> Result<Var> {
        let (&first, rest) = xs.split_first().ok_or_else(|| invalid("mean of nothing"))?;
        let mut acc = first;
        for &x in rest {
            acc = self.add(acc, x)?;
        }
        self.scale(acc, T::one() / T::of(xs.len() as f64))
    }

    /// Gradients of the scalar `loss` with respect to every recorded value.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).shape() != [1, 1] {
            return Err(Error::Shape {
                op: "backward",
                detail: format!("loss must be scalar, got {:?}", self.value(loss).shape()),
            });
        }
        let mut grads: Vec<Option<Array<T>>> = Vec::new();
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(Array::filled(1, 1, T::one()));

        for k in (0..=loss.0).rev() {
            let Some(g) = grads[k].take() else { continue };
            let node = &self.nodes[k];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = g.matmul_t(self.value(*b))?;
                    let gb = self.value(*a).t_matmul(&g)?;
                    accumulate(&mut grads[a.0], ga);
                    accumulate(&mut grads[b.0], gb);
                }
                Op::MatMulT(a, b) => {
                    // y = a bᵀ: ∂a = g b, ∂b = gᵀ a
                    let ga = g.matmul(self.value(*b))?;
                    let gb = g.t_matmul(self.value(*a))?;
                    accumulate(&mut grads[a.0], ga);
                    accumulate(&mut grads[b.0], gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[a.0], g.clone());
                    accumulate(&mut grads[b.0], g.clone());
                }
                Op::AddRow(x, bias) => {
                    let mut gb = Array::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (o, &v) in gb.data_mut().iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads[x.0], g.clone());
                    accumulate(&mut grads[bias.0], gb);
                }
                Op::Scale(x, s) => accumulate(&mut grads[x.0], g.scale(*s)),
                Op::Transpose(x) => accumulate(&mut grads[x.0], g.transpose()),
                Op::Concat { parts, axis } => {
                    let mut offset = 0;
                    for p in parts {
                        let [r, c] = self.value(*p).shape();
                        let piece = if *axis == 0 {
                            let cols = g.cols();
                            Array::from_vec(r, c, g.data()[offset * cols..(offset + r) * cols].to_vec())?
                        } else {
                            let mut data = Vec::with_capacity(r * c);
                            for i in 0..r {
                                data.extend_from_slice(&g.row(i)[offset..offset + c]);
                            }
                            Array::from_vec(r, c, data)?
                        };
                        offset += if *axis == 0 { r } else { c };
                        accumulate(&mut grads[p.0], piece);
                    }
                }
                Op::Relu(x) => {
                    let xv = self.value(*x);
                    let data = g
                        .data()
                        .iter()
                        .zip(xv.data())
                        .map(|(&gv, &v)| if v > T::zero() { gv } else { T::zero() })
                        .collect();
                    accumulate(&mut grads[x.0], Array::from_vec(g.rows(), g.cols(), data)?);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    xhat,
                    inv_std,
                    bias,
                } => {
                    let gv = self.value(*gain);
                    let (rows, cols) = (g.rows(), g.cols());
                    let d = T::of(cols as f64);
                    let mut ggain = Array::zeros(1, cols);
                    let mut gbias = Array::zeros(1, cols);
                    let mut gx = Array::zeros(rows, cols);
                    for i in 0..rows {
                        let (gr, xr) = (g.row(i), xhat.row(i));
                        let mut sum_dxhat = T::zero();
                        let mut sum_dxhat_xhat = T::zero();
                        for j in 0..cols {
                            ggain.data_mut()[j] += gr[j] * xr[j];
                            gbias.data_mut()[j] += gr[j];
                            let dxh = gr[j] * gv.data()[j];
                            sum_dxhat += dxh;
                            sum_dxhat_xhat += dxh * xr[j];
                        }
                        let s = inv_std[i] / d;
                        let out = gx.row_mut(i);
                        for j in 0..cols {
                            let dxh = gr[j] * gv.data()[j];
                            out[j] = s * (d * dxh - sum_dxhat - xr[j] * sum_dxhat_xhat);
                        }
                    }
                    accumulate(&mut grads[x.0], gx);
                    accumulate(&mut grads[gain.0], ggain);
                    accumulate(&mut grads[bias.0], gbias);
                }
                Op::Mul { x, factor } => {
                    let data = g.data().iter().zip(factor.data()).map(|(&a, &m)| a * m).collect();
                    accumulate(&mut grads[x.0], Array::from_vec(g.rows(), g.cols(), data)?);
                }
                Op::MaskedSoftmax(x) | Op::Softmax(x) => {
                    // ∂s_ij = p_ij (g_ij - Σ_k g_ik p_ik); forbidden p_ij = 0 stay 0
                    let p = &node.value;
                    let mut gx = Array::zeros(g.rows(), g.cols());
                    for i in 0..g.rows() {
                        let (pr, gr) = (p.row(i), g.row(i));
                        let dot: T = pr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        for (o, (&pv, &gv)) in gx.row_mut(i).iter_mut().zip(pr.iter().zip(gr)) {
                            *o = pv * (gv - dot);
                        }
                    }
                    accumulate(&mut grads[x.0], gx);
                }
                Op::Reweight { p, inv_d, z } => {
                    // y = w / Z, w = p / D: ∂w_ij = (g_ij - Σ_k g_ik y_ik) / Z_i
                    let y = &node.value;
                    let mut gp = Array::zeros(g.rows(), g.cols());
                    for i in 0..g.rows() {
                        let (yr, gr) = (y.row(i), g.row(i));
                        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        let inv_row = inv_d.row(i);
                        for (j, o) in gp.row_mut(i).iter_mut().enumerate() {
                            *o = (gr[j] - dot) / z[i] * inv_row[j];
                        }
                    }
                    accumulate(&mut grads[p.0], gp);
                }
                Op::MaxPoolRows { x, argmax } => {
                    let [r, c] = self.value(*x).shape();
                    let mut gx = Array::zeros(r, c);
                    for (j, &i) in argmax.iter().enumerate() {
                        gx.set(i, j, g.data()[j]);
                    }
                    accumulate(&mut grads[x.0], gx);
                }
                Op::SliceRows { x, begin } => {
                    let [r, c] = self.value(*x).shape();
                    let mut gx = Array::zeros(r, c);
                    gx.data_mut()[begin * c..begin * c + g.len()].copy_from_slice(g.data());
                    accumulate(&mut grads[x.0], gx);
                }
                Op::GatherRows { table, idx } => {
                    let [r, c] = self.value(*table).shape();
                    let mut gt = Array::zeros(r, c);
                    for (k, &i) in idx.iter().enumerate() {
                        for (o, &v) in gt.row_mut(i).iter_mut().zip(g.row(k)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads[table.0], gt);
                }
                Op::CrossEntropy { logits, target, probs } => {
                    let s = g.data()[0];
                    let mut gl = probs.clone();
                    gl.data_mut()[*target] -= T::one();
                    accumulate(&mut grads[logits.0], gl.scale(s));
                }
                Op::Sum(x) => {
                    let [r, c] = self.value(*x).shape();
                    accumulate(&mut grads[x.0], Array::filled(r, c, g.data()[0]));
                }
                Op::SumSquares(x) => {
                    let s = g.data()[0] + g.data()[0];
                    accumulate(&mut grads[x.0], self.value(*x).scale(s));
                }
            }
            grads[k] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        Ok(Gradients { grads, shapes })
    }
}
