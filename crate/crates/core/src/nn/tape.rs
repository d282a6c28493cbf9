//! Single-use reverse-mode tape over [`Matrix`] values.
//!
//! A tape records one forward pass for one sample. Parameters are read in
//! place from the borrowed [`ParamStore`]; `backward` accumulates into a
//! caller-owned [`Grads`] so several tapes can share one buffer.

use super::{Grads, Matrix, ParamId, ParamStore};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Input,
    Param(ParamId),
    Gather { table: ParamId, ids: Vec<usize> },
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        normed: Matrix,
        rstd: Vec<f64>,
    },
    Softmax { x: Var },
    SliceCols { x: Var, start: usize },
    SliceRows { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    MeanRows { x: Var, keep: Option<Vec<bool>>, count: usize },
    L2Normalize { x: Var, norms: Vec<f64> },
}

struct Node {
    // `None` for parameters, which are read from the store.
    value: Option<Matrix>,
    op: Op,
}

pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(m), _) => m,
            (None, Op::Param(id)) => self.params.get(*id),
            _ => unreachable!("non-parameter node without value"),
        }
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Input)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        Var(self.nodes.len() - 1)
    }

    /// Rows `ids` of parameter `table`.
    pub fn gather(&mut self, table: ParamId, ids: &[usize]) -> Var {
        let t = self.params.get(table);
        let mut out = Matrix::zeros(ids.len(), t.cols());
        for (r, &i) in ids.iter().enumerate() {
            out.row_mut(r).copy_from_slice(t.row(i));
        }
        self.push(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul_t(self.value(b));
        self.push(v, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        self.push(v, Op::Add(a, b))
    }

    /// Adds the `1 × c` row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let b = self.value(bias);
        assert_eq!(b.rows(), 1, "bias must be a row vector");
        let mut v = self.value(a).clone();
        assert_eq!(v.cols(), b.cols(), "bias width mismatch");
        for r in 0..v.rows() {
            for (o, &x) in v.row_mut(r).iter_mut().zip(b.row(0)) {
                *o += x;
            }
        }
        self.push(v, Op::AddRow(a, bias))
    }

    pub fn scale(&mut self, a: Var, f: f64) -> Var {
        let mut v = self.value(a).clone();
        v.scale(f);
        self.push(v, Op::Scale(a, f))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for x in v.data_mut() {
            let u = GELU_C * (*x + 0.044715 * *x * *x * *x);
            *x = 0.5 * *x * (1.0 + u.tanh());
        }
        self.push(v, Op::Gelu(a))
    }

    /// Row-wise layer normalization with affine `gamma`, `beta` (`1 × c`).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let g = self.value(gamma).row(0).to_vec();
        let b = self.value(beta).row(0).to_vec();
        let mut normed = Matrix::zeros(rows, cols);
        let mut out = Matrix::zeros(rows, cols);
        let mut rstd = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let s = 1.0 / (var + LN_EPS).sqrt();
            rstd.push(s);
            for c in 0..cols {
                let n = (row[c] - mean) * s;
                normed.set(r, c, n);
                out.set(r, c, n * g[c] + b[c]);
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normed,
                rstd,
            },
        )
    }

    /// Row-wise softmax. Columns with `keep[c] == false` get probability
    /// exactly zero and do not take part in the normalizer.
    pub fn softmax(&mut self, x: Var, keep: Option<&[bool]>) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        if let Some(k) = keep {
            assert_eq!(k.len(), cols, "mask width mismatch");
        }
        let live = |c: usize| keep.is_none_or(|k| k[c]);
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let row = xv.row(r);
            let max = (0..cols)
                .filter(|&c| live(c))
                .map(|c| row[c])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for c in 0..cols {
                if live(c) {
                    let e = (row[c] - max).exp();
                    out.set(r, c, e);
                    sum += e;
                }
            }
            if sum > 0.0 {
                for v in out.row_mut(r) {
                    *v /= sum;
                }
            }
        }
        self.push(out, Op::Softmax { x })
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = self.value(x);
        assert!(start + len <= xv.cols(), "column slice out of range");
        let mut out = Matrix::zeros(xv.rows(), len);
        for r in 0..xv.rows() {
            out.row_mut(r).copy_from_slice(&xv.row(r)[start..start + len]);
        }
        self.push(out, Op::SliceCols { x, start })
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Var {
        let v = self.value(x).slice_rows(start, len);
        self.push(v, Op::SliceRows { x, start })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.rows(), rows, "concat_cols row mismatch");
            for r in 0..rows {
                out.row_mut(r)[offset..offset + pv.cols()].copy_from_slice(pv.row(r));
            }
            offset += pv.cols();
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let mats: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Matrix::vstack(&mats);
        self.push(v, Op::ConcatRows(parts.to_vec()))
    }

    /// Mean over rows (optionally only rows with `keep[r]`), giving `1 × c`.
    pub fn mean_rows(&mut self, x: Var, keep: Option<&[bool]>) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let mut out = vec![0.0; cols];
        let mut count = 0;
        for r in 0..rows {
            if keep.is_none_or(|k| k[r]) {
                count += 1;
                for (o, &v) in out.iter_mut().zip(xv.row(r)) {
                    *o += v;
                }
            }
        }
        assert!(count > 0, "mean over zero rows");
        for o in &mut out {
            *o /= count as f64;
        }
        self.push(
            Matrix::row_vector(out),
            Op::MeanRows {
                x,
                keep: keep.map(<[bool]>::to_vec),
                count,
            },
        )
    }

    /// Divides each row by its L2 norm. Rows must be non-zero.
    pub fn l2_normalize(&mut self, x: Var) -> Var {
        let mut v = self.value(x).clone();
        let mut norms = Vec::with_capacity(v.rows());
        for r in 0..v.rows() {
            let n = super::l2_norm(v.row(r));
            norms.push(n);
            for e in v.row_mut(r) {
                *e /= n;
            }
        }
        self.push(v, Op::L2Normalize { x, norms })
    }

    /// Propagates `seed` (the gradient of some scalar with respect to
    /// `output`) back through the tape, adding parameter gradients to `grads`.
    pub fn backward(&self, output: Var, seed: Matrix, grads: &mut Grads) {
        assert_eq!(
            seed.shape(),
            self.value(output).shape(),
            "seed shape must match output"
        );
        let mut g: Vec<Option<Matrix>> = (0..=output.0).map(|_| None).collect();
        g[output.0] = Some(seed);

        for idx in (0..=output.0).rev() {
            let Some(dy) = g[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param(id) => grads.get_mut(*id).add_assign(&dy),
                Op::Gather { table, ids } => {
                    let gt = grads.get_mut(*table);
                    for (r, &i) in ids.iter().enumerate() {
                        for (o, &d) in gt.row_mut(i).iter_mut().zip(dy.row(r)) {
                            *o += d;
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let da = dy.matmul_t(self.value(*b));
                    let db = self.value(*a).t_matmul(&dy);
                    accumulate(&mut g, *a, da);
                    accumulate(&mut g, *b, db);
                }
                Op::MatMulT(a, b) => {
                    // y = a bᵀ: da = dy b, db = dyᵀ a
                    let da = dy.matmul(self.value(*b));
                    let db = dy.t_matmul(self.value(*a));
                    accumulate(&mut g, *a, da);
                    accumulate(&mut g, *b, db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut g, *a, dy.clone());
                    accumulate(&mut g, *b, dy);
                }
                Op::AddRow(a, bias) => {
                    let mut db = vec![0.0; dy.cols()];
                    for r in 0..dy.rows() {
                        for (o, &d) in db.iter_mut().zip(dy.row(r)) {
                            *o += d;
                        }
                    }
                    accumulate(&mut g, *bias, Matrix::row_vector(db));
                    accumulate(&mut g, *a, dy);
                }
                Op::Scale(a, f) => {
                    let mut d = dy;
                    d.scale(*f);
                    accumulate(&mut g, *a, d);
                }
                Op::Gelu(a) => {
                    let x = self.value(*a);
                    let mut d = dy;
                    for (dv, &xv) in d.data_mut().iter_mut().zip(x.data()) {
                        let u = GELU_C * (xv + 0.044715 * xv * xv * xv);
                        let t = u.tanh();
                        let du = GELU_C * (1.0 + 3.0 * 0.044715 * xv * xv);
                        *dv *= 0.5 * (1.0 + t) + 0.5 * xv * (1.0 - t * t) * du;
                    }
                    accumulate(&mut g, *a, d);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    normed,
                    rstd,
                } => {
                    let gv = self.value(*gamma).row(0);
                    let (rows, cols) = dy.shape();
                    let mut dx = Matrix::zeros(rows, cols);
                    let mut dg = vec![0.0; cols];
                    let mut db = vec![0.0; cols];
                    for r in 0..rows {
                        let dyr = dy.row(r);
                        let nr = normed.row(r);
                        let mut sum_dn = 0.0;
                        let mut sum_dn_n = 0.0;
                        for c in 0..cols {
                            dg[c] += dyr[c] * nr[c];
                            db[c] += dyr[c];
                            let dn = dyr[c] * gv[c];
                            sum_dn += dn;
                            sum_dn_n += dn * nr[c];
                        }
                        let n = cols as f64;
                        for c in 0..cols {
                            let dn = dyr[c] * gv[c];
                            dx.set(r, c, rstd[r] / n * (n * dn - sum_dn - nr[c] * sum_dn_n));
                        }
                    }
                    accumulate(&mut g, *x, dx);
                    accumulate(&mut g, *gamma, Matrix::row_vector(dg));
                    accumulate(&mut g, *beta, Matrix::row_vector(db));
                }
                Op::Softmax { x } => {
                    let p = node.value.as_ref().expect("softmax value");
                    let mut dx = Matrix::zeros(p.rows(), p.cols());
                    for r in 0..p.rows() {
                        let pr = p.row(r);
                        let dr = dy.row(r);
                        let s: f64 = pr.iter().zip(dr).map(|(a, b)| a * b).sum();
                        for c in 0..p.cols() {
                            dx.set(r, c, pr[c] * (dr[c] - s));
                        }
                    }
                    accumulate(&mut g, *x, dx);
                }
                Op::SliceCols { x, start } => {
                    let xv = self.value(*x);
                    let mut dx = Matrix::zeros(xv.rows(), xv.cols());
                    for r in 0..dy.rows() {
                        dx.row_mut(r)[*start..*start + dy.cols()].copy_from_slice(dy.row(r));
                    }
                    accumulate(&mut g, *x, dx);
                }
                Op::SliceRows { x, start } => {
                    let xv = self.value(*x);
                    let mut dx = Matrix::zeros(xv.rows(), xv.cols());
                    for r in 0..dy.rows() {
                        dx.row_mut(start + r).copy_from_slice(dy.row(r));
                    }
                    accumulate(&mut g, *x, dx);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        let mut dp = Matrix::zeros(dy.rows(), w);
                        for r in 0..dy.rows() {
                            dp.row_mut(r).copy_from_slice(&dy.row(r)[offset..offset + w]);
                        }
                        offset += w;
                        accumulate(&mut g, p, dp);
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let h = self.value(p).rows();
                        accumulate(&mut g, p, dy.slice_rows(offset, h));
                        offset += h;
                    }
                }
                Op::MeanRows { x, keep, count } => {
                    let xv = self.value(*x);
                    let mut dx = Matrix::zeros(xv.rows(), xv.cols());
                    let inv = 1.0 / *count as f64;
                    for r in 0..xv.rows() {
                        if keep.as_ref().is_none_or(|k| k[r]) {
                            for (o, &d) in dx.row_mut(r).iter_mut().zip(dy.row(0)) {
                                *o = d * inv;
                            }
                        }
                    }
                    accumulate(&mut g, *x, dx);
                }
                Op::L2Normalize { x, norms } => {
                    let y = node.value.as_ref().expect("normalize value");
                    let mut dx = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let dr = dy.row(r);
                        let proj: f64 = yr.iter().zip(dr).map(|(a, b)| a * b).sum();
                        for c in 0..y.cols() {
                            dx.set(r, c, (dr[c] - yr[c] * proj) / norms[r]);
                        }
                    }
                    accumulate(&mut g, *x, dx);
                }
            }
        }
    }
}

fn accumulate(g: &mut [Option<Matrix>], v: Var, d: Matrix) {
    match &mut g[v.0] {
        Some(existing) => existing.add_assign(&d),
        slot @ None => *slot = Some(d),
    }
}
