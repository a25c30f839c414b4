//! Reverse-mode automatic differentiation over 2-D tensors.
//!
//! A [`Tape`] records every operation eagerly; [`Tape::backward`] walks it in
//! reverse and returns one gradient per recorded node. Parameters are bound
//! by name from a [`ParamStore`] so their gradients can be accumulated back.

use crate::nn::params::ParamStore;
use crate::nn::tensor::{gemm, gemm_nt, gemm_tn, Tensor};
use crate::error::Result;

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
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Exp(Var),
    Ln(Var),
    LogSigmoid(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    SumCols(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    SelectRows(Var, Vec<usize>),
    L2NormRows(Var),
    PairwiseAdd(Var, Var),
    StackSeq(Vec<Var>),
    BlockMatMulNt(Var, Var, usize),
    BlockMatMul(Var, Var, usize),
    BlockMeanRows(Var, usize),
    Pick(Var, Vec<(usize, usize, f64)>),
    StudentT(Var, Var),
    Rince(Var, f64, f64),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// One gradient slot per tape node; `None` where no gradient flowed.
pub struct Gradients(Vec<Option<Tensor>>);

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.0.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros shaped like `like` when nothing flowed.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&[like.rows(), like.cols()]))
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
}

fn softmax_row(row: &[f64], support: Option<&[f64]>, out: &mut [f64]) {
    let allowed = |j: usize| support.is_none_or(|s| s[j] != 0.0);
    let mut max = f64::NEG_INFINITY;
    for (j, &x) in row.iter().enumerate() {
        if allowed(j) && x > max {
            max = x;
        }
    }
    if max == f64::NEG_INFINITY {
        out.iter_mut().for_each(|o| *o = 0.0);
        return;
    }
    let mut total = 0.0;
    for (j, &x) in row.iter().enumerate() {
        let e = if allowed(j) && x != f64::NEG_INFINITY {
            (x - max).exp()
        } else {
            0.0
        };
        out[j] = e;
        total += e;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
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

    pub fn bound_params(&self) -> &[(String, Var)] {
        &self.params
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn val(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// A value that never receives gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A leaf that receives gradient but is not a named parameter.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Binds a named parameter from `store`; its gradient can later be
    /// accumulated with [`ParamStore::accumulate`].
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some((_, v)) = self.params.iter().find(|(n, _)| n == name) {
            return Ok(*v);
        }
        let t = store.get(name)?.clone();
        let v = self.push(t, Op::Leaf, true);
        self.params.push((name.to_string(), v));
        Ok(v)
    }

    /// Binds a named parameter as a constant (no gradient, not accumulated).
    pub fn frozen(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        Ok(self.constant(store.get(name)?.clone()))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.val(a), self.val(b));
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        assert_eq!(k, tb.rows(), "matmul inner dimension");
        let out = Tensor::matrix(m, n, gemm(ta.data(), tb.data(), m, k, n)).unwrap();
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::MatMul(a, b), ng)
    }

    /// `a * b^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.val(a), self.val(b));
        let (m, k, n) = (ta.rows(), ta.cols(), tb.rows());
        assert_eq!(k, tb.cols(), "matmul_nt inner dimension");
        let out = Tensor::matrix(m, n, gemm_nt(ta.data(), tb.data(), m, k, n)).unwrap();
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::MatMulNt(a, b), ng)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.val(a).transpose();
        let ng = self.ng(a);
        self.push(out, Op::Transpose(a), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert!(self.val(a).same_shape(self.val(b)), "add shape");
        let out = self.val(a).zip_map(self.val(b), |x, y| x + y);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert!(self.val(a).same_shape(self.val(b)), "sub shape");
        let out = self.val(a).zip_map(self.val(b), |x, y| x - y);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Sub(a, b), ng)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert!(self.val(a).same_shape(self.val(b)), "mul shape");
        let out = self.val(a).zip_map(self.val(b), |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Mul(a, b), ng)
    }

    /// `a (m x n) + row (1 x n)` broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (ta, tr) = (self.val(a), self.val(row));
        let n = ta.cols();
        assert_eq!(tr.len(), n, "add_row width");
        let mut out = ta.clone();
        for (i, x) in out.data_mut().iter_mut().enumerate() {
            *x += tr.data()[i % n];
        }
        let out = out.reshape(&[ta.rows(), n]).unwrap();
        let ng = self.ng(a) || self.ng(row);
        self.push(out, Op::AddRow(a, row), ng)
    }

    /// `a (m x n)` with row `i` scaled by `col[i]`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let (ta, tc) = (self.val(a), self.val(col));
        let n = ta.cols();
        assert_eq!(tc.len(), ta.rows(), "mul_col height");
        let mut out = Tensor::zeros(&[ta.rows(), n]);
        for (i, x) in out.data_mut().iter_mut().enumerate() {
            *x = ta.data()[i] * tc.data()[i / n];
        }
        let ng = self.ng(a) || self.ng(col);
        self.push(out, Op::MulCol(a, col), ng)
    }

    pub fn scale(&mut self, a: Var, f: f64) -> Var {
        let out = self.val(a).map(|x| x * f);
        let ng = self.ng(a);
        self.push(out, Op::Scale(a, f), ng)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.val(a).map(|x| x + c);
        let ng = self.ng(a);
        self.push(out, Op::AddScalar(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.val(a).map(f64::tanh);
        let ng = self.ng(a);
        self.push(out, Op::Tanh(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.val(a).map(sigmoid);
        let ng = self.ng(a);
        self.push(out, Op::Sigmoid(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.val(a).map(|x| x.max(0.0));
        let ng = self.ng(a);
        self.push(out, Op::Relu(a), ng)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let out = self.val(a).map(|x| if x > 0.0 { x } else { slope * x });
        let ng = self.ng(a);
        self.push(out, Op::LeakyRelu(a, slope), ng)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.val(a).map(f64::exp);
        let ng = self.ng(a);
        self.push(out, Op::Exp(a), ng)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let out = self.val(a).map(f64::ln);
        let ng = self.ng(a);
        self.push(out, Op::Ln(a), ng)
    }

    /// Numerically stable `ln(sigmoid(x))`.
    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        let out = self.val(a).map(log_sigmoid);
        let ng = self.ng(a);
        self.push(out, Op::LogSigmoid(a), ng)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.val(a).map(|x| x * x);
        let ng = self.ng(a);
        self.push(out, Op::Square(a), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.val(a).sum());
        let ng = self.ng(a);
        self.push(out, Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.val(a);
        let out = Tensor::scalar(t.sum() / t.len() as f64);
        let ng = self.ng(a);
        self.push(out, Op::Mean(a), ng)
    }

    /// Row sums: `m x n -> m x 1`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let t = self.val(a);
        let data = (0..t.rows()).map(|r| t.row_slice(r).iter().sum()).collect();
        let out = Tensor::column(data);
        let ng = self.ng(a);
        self.push(out, Op::SumCols(a), ng)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let t = self.val(a);
        let mut out = Tensor::zeros(&[t.rows(), t.cols()]);
        let c = t.cols();
        for r in 0..t.rows() {
            softmax_row(t.row_slice(r), None, &mut out.data_mut()[r * c..(r + 1) * c]);
        }
        let ng = self.ng(a);
        self.push(out, Op::SoftmaxRows(a), ng)
    }

    /// Row softmax restricted to the entries where `support` is nonzero;
    /// unsupported entries get weight exactly zero. Rows with empty support
    /// produce all zeros, so callers validate masks beforehand.
    pub fn masked_softmax_rows(&mut self, a: Var, support: &Tensor) -> Var {
        let t = self.val(a);
        assert!(t.same_shape(support), "masked softmax support shape");
        let mut out = Tensor::zeros(&[t.rows(), t.cols()]);
        let c = t.cols();
        for r in 0..t.rows() {
            softmax_row(
                t.row_slice(r),
                Some(support.row_slice(r)),
                &mut out.data_mut()[r * c..(r + 1) * c],
            );
        }
        let ng = self.ng(a);
        self.push(out, Op::SoftmaxRows(a), ng)
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let t = self.val(a);
        let mut out = Tensor::zeros(&[t.rows(), t.cols()]);
        let c = t.cols();
        for r in 0..t.rows() {
            let row = t.row_slice(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            for j in 0..c {
                out.data_mut()[r * c + j] = row[j] - lse;
            }
        }
        let ng = self.ng(a);
        self.push(out, Op::LogSoftmaxRows(a), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.val(parts[0]).rows();
        let total: usize = parts.iter().map(|p| self.val(*p).cols()).sum();
        let mut out = Tensor::zeros(&[rows, total]);
        let mut off = 0;
        for p in parts {
            let t = self.val(*p);
            assert_eq!(t.rows(), rows, "concat_cols height");
            let c = t.cols();
            for r in 0..rows {
                out.data_mut()[r * total + off..r * total + off + c]
                    .copy_from_slice(t.row_slice(r));
            }
            off += c;
        }
        let ng = parts.iter().any(|p| self.ng(*p));
        self.push(out, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.val(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let t = self.val(*p);
            assert_eq!(t.cols(), cols, "concat_rows width");
            data.extend_from_slice(t.data());
            rows += t.rows();
        }
        let out = Tensor::matrix(rows, cols, data).unwrap();
        let ng = parts.iter().any(|p| self.ng(*p));
        self.push(out, Op::ConcatRows(parts.to_vec()), ng)
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let t = self.val(a);
        assert!(start < end && end <= t.cols(), "slice_cols range");
        let w = end - start;
        let mut out = Tensor::zeros(&[t.rows(), w]);
        for r in 0..t.rows() {
            out.data_mut()[r * w..(r + 1) * w].copy_from_slice(&t.row_slice(r)[start..end]);
        }
        let ng = self.ng(a);
        self.push(out, Op::SliceCols(a, start), ng)
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let t = self.val(a);
        assert!(start < end && end <= t.rows(), "slice_rows range");
        let c = t.cols();
        let out = Tensor::matrix(end - start, c, t.data()[start * c..end * c].to_vec()).unwrap();
        let ng = self.ng(a);
        self.push(out, Op::SliceRows(a, start), ng)
    }

    pub fn select_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let t = self.val(a);
        let c = t.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(t.row_slice(i));
        }
        let out = Tensor::matrix(idx.len(), c, data).unwrap();
        let ng = self.ng(a);
        self.push(out, Op::SelectRows(a, idx.to_vec()), ng)
    }

    /// Each row divided by its Euclidean norm; all-zero rows stay zero.
    pub fn l2_normalize_rows(&mut self, a: Var) -> Var {
        let t = self.val(a);
        let c = t.cols();
        let mut out = t.clone().reshape(&[t.rows(), c]).unwrap();
        for r in 0..t.rows() {
            let row = &mut out.data_mut()[r * c..(r + 1) * c];
            let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 0.0 {
                row.iter_mut().for_each(|x| *x /= n);
            }
        }
        let ng = self.ng(a);
        self.push(out, Op::L2NormRows(a), ng)
    }

    /// `out[i][j] = a[i] + b[j]` for column vectors `a (n x 1)`, `b (m x 1)`.
    pub fn pairwise_add(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.val(a), self.val(b));
        let (n, m) = (ta.len(), tb.len());
        let mut out = Tensor::zeros(&[n, m]);
        for i in 0..n {
            for j in 0..m {
                out.data_mut()[i * m + j] = ta.data()[i] + tb.data()[j];
            }
        }
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::PairwiseAdd(a, b), ng)
    }

    /// Stacks `L` per-step matrices (each `B x H`) into one `(B*L) x H`
    /// matrix whose row `b*L + t` is row `b` of step `t`.
    pub fn stack_seq(&mut self, steps: &[Var]) -> Var {
        let l = steps.len();
        let (b, h) = (self.val(steps[0]).rows(), self.val(steps[0]).cols());
        let mut out = Tensor::zeros(&[b * l, h]);
        for (t, s) in steps.iter().enumerate() {
            let st = self.val(*s);
            assert_eq!((st.rows(), st.cols()), (b, h), "stack_seq step shape");
            for bi in 0..b {
                let row = bi * l + t;
                out.data_mut()[row * h..(row + 1) * h].copy_from_slice(st.row_slice(bi));
            }
        }
        let ng = steps.iter().any(|s| self.ng(*s));
        self.push(out, Op::StackSeq(steps.to_vec()), ng)
    }

    /// Per-block `a_b * b_b^T` for consecutive blocks of `block` rows.
    pub fn block_matmul_nt(&mut self, a: Var, b: Var, block: usize) -> Var {
        let (ta, tb) = (self.val(a), self.val(b));
        let (rows, k) = (ta.rows(), ta.cols());
        assert_eq!(rows % block, 0, "block size");
        assert_eq!((tb.rows(), tb.cols()), (rows, k), "block_matmul_nt shapes");
        let mut out = Tensor::zeros(&[rows, block]);
        for blk in 0..rows / block {
            let base = blk * block;
            let res = gemm_nt(
                &ta.data()[base * k..(base + block) * k],
                &tb.data()[base * k..(base + block) * k],
                block,
                k,
                block,
            );
            out.data_mut()[base * block..(base + block) * block].copy_from_slice(&res);
        }
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::BlockMatMulNt(a, b, block), ng)
    }

    /// Per-block `a_b (L x L) * b_b (L x n)`.
    pub fn block_matmul(&mut self, a: Var, b: Var, block: usize) -> Var {
        let (ta, tb) = (self.val(a), self.val(b));
        let rows = ta.rows();
        let n = tb.cols();
        assert_eq!(ta.cols(), block, "block_matmul weights width");
        assert_eq!(tb.rows(), rows, "block_matmul rows");
        let mut out = Tensor::zeros(&[rows, n]);
        for blk in 0..rows / block {
            let base = blk * block;
            let res = gemm(
                &ta.data()[base * block..(base + block) * block],
                &tb.data()[base * n..(base + block) * n],
                block,
                block,
                n,
            );
            out.data_mut()[base * n..(base + block) * n].copy_from_slice(&res);
        }
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::BlockMatMul(a, b, block), ng)
    }

    /// Mean of each consecutive block of rows: `(B*L) x n -> B x n`.
    pub fn block_mean_rows(&mut self, a: Var, block: usize) -> Var {
        let t = self.val(a);
        let n = t.cols();
        let nb = t.rows() / block;
        let mut out = Tensor::zeros(&[nb, n]);
        for blk in 0..nb {
            for r in 0..block {
                let src = t.row_slice(blk * block + r);
                for j in 0..n {
                    out.data_mut()[blk * n + j] += src[j] / block as f64;
                }
            }
        }
        let ng = self.ng(a);
        self.push(out, Op::BlockMeanRows(a, block), ng)
    }

    /// `sum_k w_k * a[r_k][c_k]` as a scalar.
    pub fn pick(&mut self, a: Var, entries: &[(usize, usize, f64)]) -> Var {
        let t = self.val(a);
        let s = entries.iter().map(|&(r, c, w)| w * t.at(r, c)).sum();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Pick(a, entries.to_vec()), ng)
    }

    /// Student-t (one degree of freedom) soft assignment of each row of `z`
    /// to each row of `centroids`, normalized per row.
    pub fn student_t(&mut self, z: Var, centroids: Var) -> Var {
        let (tz, tm) = (self.val(z), self.val(centroids));
        let (b, d, k) = (tz.rows(), tz.cols(), tm.rows());
        assert_eq!(tm.cols(), d, "student_t dims");
        let mut out = Tensor::zeros(&[b, k]);
        for i in 0..b {
            let zi = tz.row_slice(i);
            let mut total = 0.0;
            for j in 0..k {
                let dist: f64 = zi
                    .iter()
                    .zip(tm.row_slice(j))
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum();
                let u = 1.0 / (1.0 + dist);
                out.data_mut()[i * k + j] = u;
                total += u;
            }
            for j in 0..k {
                out.data_mut()[i * k + j] /= total;
            }
        }
        let ng = self.ng(z) || self.ng(centroids);
        self.push(out, Op::StudentT(z, centroids), ng)
    }

    /// Robust InfoNCE over a square similarity matrix whose diagonal holds
    /// the positive pairs; averaged over every off-diagonal negative.
    pub fn rince(&mut self, sims: Var, q: f64, lambda: f64) -> Var {
        let t = self.val(sims);
        let b = t.rows();
        assert_eq!(t.cols(), b, "rince needs a square similarity matrix");
        let mut total = 0.0;
        for i in 0..b {
            let a = (q * t.at(i, i)).exp();
            for j in 0..b {
                if i == j {
                    continue;
                }
                let n = (q * t.at(i, j)).exp();
                total += -a / q + (lambda * (a + n)).powf(q) / q;
            }
        }
        let value = total / (b * (b - 1)) as f64;
        let ng = self.ng(sims);
        self.push(Tensor::scalar(value), Op::Rince(sims, q, lambda), ng)
    }

    /// Reverse pass from `root`, seeding its gradient with ones.
    pub fn backward(&self, root: Var) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        let rv = &self.nodes[root.0].value;
        grads[root.0] = Some(Tensor::filled(&[rv.rows(), rv.cols()], 1.0));

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                grads[idx] = Some(g);
                continue;
            }
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients(grads)
    }

    fn acc(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.val(*a), self.val(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if self.ng(*a) {
                    let da = gemm_nt(g.data(), tb.data(), m, n, k);
                    self.acc(grads, *a, Tensor::matrix(m, k, da).unwrap());
                }
                if self.ng(*b) {
                    let db = gemm_tn(ta.data(), g.data(), m, k, n);
                    self.acc(grads, *b, Tensor::matrix(k, n, db).unwrap());
                }
            }
            Op::MatMulNt(a, b) => {
                let (ta, tb) = (self.val(*a), self.val(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.rows());
                if self.ng(*a) {
                    let da = gemm(g.data(), tb.data(), m, n, k);
                    self.acc(grads, *a, Tensor::matrix(m, k, da).unwrap());
                }
                if self.ng(*b) {
                    let db = gemm_tn(g.data(), ta.data(), m, n, k);
                    self.acc(grads, *b, Tensor::matrix(n, k, db).unwrap());
                }
            }
            Op::Transpose(a) => self.acc(grads, *a, g.transpose()),
            Op::Add(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.val(*a), self.val(*b));
                if self.ng(*a) {
                    self.acc(grads, *a, g.zip_map(tb, |x, y| x * y));
                }
                if self.ng(*b) {
                    self.acc(grads, *b, g.zip_map(ta, |x, y| x * y));
                }
            }
            Op::AddRow(a, row) => {
                self.acc(grads, *a, g.clone());
                if self.ng(*row) {
                    let n = g.cols();
                    let mut dr = vec![0.0; n];
                    for (i, x) in g.data().iter().enumerate() {
                        dr[i % n] += x;
                    }
                    let shape = self.val(*row).shape().to_vec();
                    self.acc(grads, *row, Tensor::new(shape, dr).unwrap());
                }
            }
            Op::MulCol(a, col) => {
                let (ta, tc) = (self.val(*a), self.val(*col));
                let n = ta.cols();
                if self.ng(*a) {
                    let mut da = g.clone();
                    for (i, x) in da.data_mut().iter_mut().enumerate() {
                        *x *= tc.data()[i / n];
                    }
                    self.acc(grads, *a, da);
                }
                if self.ng(*col) {
                    let mut dc = vec![0.0; tc.len()];
                    for (i, (x, y)) in g.data().iter().zip(ta.data()).enumerate() {
                        dc[i / n] += x * y;
                    }
                    let shape = tc.shape().to_vec();
                    self.acc(grads, *col, Tensor::new(shape, dc).unwrap());
                }
            }
            Op::Scale(a, f) => self.acc(grads, *a, g.map(|x| x * f)),
            Op::AddScalar(a) => self.acc(grads, *a, g.clone()),
            Op::Tanh(a) => self.acc(grads, *a, g.zip_map(y, |d, t| d * (1.0 - t * t))),
            Op::Sigmoid(a) => self.acc(grads, *a, g.zip_map(y, |d, s| d * s * (1.0 - s))),
            Op::Relu(a) => {
                let x = self.val(*a);
                self.acc(grads, *a, g.zip_map(x, |d, x| if x > 0.0 { d } else { 0.0 }));
            }
            Op::LeakyRelu(a, slope) => {
                let x = self.val(*a);
                let s = *slope;
                self.acc(grads, *a, g.zip_map(x, |d, x| if x > 0.0 { d } else { s * d }));
            }
            Op::Exp(a) => self.acc(grads, *a, g.zip_map(y, |d, e| d * e)),
            Op::Ln(a) => {
                let x = self.val(*a);
                self.acc(grads, *a, g.zip_map(x, |d, x| d / x));
            }
            Op::LogSigmoid(a) => {
                let x = self.val(*a);
                self.acc(grads, *a, g.zip_map(x, |d, x| d * sigmoid(-x)));
            }
            Op::Square(a) => {
                let x = self.val(*a);
                self.acc(grads, *a, g.zip_map(x, |d, x| 2.0 * d * x));
            }
            Op::Sum(a) => {
                let x = self.val(*a);
                self.acc(grads, *a, Tensor::filled(&[x.rows(), x.cols()], g.item()));
            }
            Op::Mean(a) => {
                let x = self.val(*a);
                let v = g.item() / x.len() as f64;
                self.acc(grads, *a, Tensor::filled(&[x.rows(), x.cols()], v));
            }
            Op::SumCols(a) => {
                let x = self.val(*a);
                let n = x.cols();
                let mut da = Tensor::zeros(&[x.rows(), n]);
                for (i, d) in da.data_mut().iter_mut().enumerate() {
                    *d = g.data()[i / n];
                }
                self.acc(grads, *a, da);
            }
            Op::SoftmaxRows(a) => {
                let c = y.cols();
                let mut da = Tensor::zeros(&[y.rows(), c]);
                for r in 0..y.rows() {
                    let yr = y.row_slice(r);
                    let gr = g.row_slice(r);
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for j in 0..c {
                        da.data_mut()[r * c + j] = yr[j] * (gr[j] - dot);
                    }
                }
                self.acc(grads, *a, da);
            }
            Op::LogSoftmaxRows(a) => {
                let c = y.cols();
                let mut da = Tensor::zeros(&[y.rows(), c]);
                for r in 0..y.rows() {
                    let yr = y.row_slice(r);
                    let gr = g.row_slice(r);
                    let gs: f64 = gr.iter().sum();
                    for j in 0..c {
                        da.data_mut()[r * c + j] = gr[j] - yr[j].exp() * gs;
                    }
                }
                self.acc(grads, *a, da);
            }
            Op::ConcatCols(parts) => {
                let total = g.cols();
                let mut off = 0;
                for p in parts {
                    let w = self.val(*p).cols();
                    if self.ng(*p) {
                        let rows = g.rows();
                        let mut dp = Tensor::zeros(&[rows, w]);
                        for r in 0..rows {
                            dp.data_mut()[r * w..(r + 1) * w]
                                .copy_from_slice(&g.data()[r * total + off..r * total + off + w]);
                        }
                        self.acc(grads, *p, dp);
                    }
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let c = g.cols();
                let mut off = 0;
                for p in parts {
                    let h = self.val(*p).rows();
                    if self.ng(*p) {
                        let dp = Tensor::matrix(h, c, g.data()[off * c..(off + h) * c].to_vec())
                            .unwrap();
                        self.acc(grads, *p, dp);
                    }
                    off += h;
                }
            }
            Op::SliceCols(a, start) => {
                let x = self.val(*a);
                let (c, w) = (x.cols(), g.cols());
                let mut da = Tensor::zeros(&[x.rows(), c]);
                for r in 0..x.rows() {
                    da.data_mut()[r * c + start..r * c + start + w].copy_from_slice(g.row_slice(r));
                }
                self.acc(grads, *a, da);
            }
            Op::SliceRows(a, start) => {
                let x = self.val(*a);
                let c = x.cols();
                let mut da = Tensor::zeros(&[x.rows(), c]);
                da.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                self.acc(grads, *a, da);
            }
            Op::SelectRows(a, idx) => {
                let x = self.val(*a);
                let c = x.cols();
                let mut da = Tensor::zeros(&[x.rows(), c]);
                for (k, &i) in idx.iter().enumerate() {
                    for j in 0..c {
                        da.data_mut()[i * c + j] += g.data()[k * c + j];
                    }
                }
                self.acc(grads, *a, da);
            }
            Op::L2NormRows(a) => {
                let x = self.val(*a);
                let c = x.cols();
                let mut da = Tensor::zeros(&[x.rows(), c]);
                for r in 0..x.rows() {
                    let xr = x.row_slice(r);
                    let n = xr.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if n == 0.0 {
                        continue;
                    }
                    let yr = y.row_slice(r);
                    let gr = g.row_slice(r);
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for j in 0..c {
                        da.data_mut()[r * c + j] = (gr[j] - yr[j] * dot) / n;
                    }
                }
                self.acc(grads, *a, da);
            }
            Op::PairwiseAdd(a, b) => {
                let (n, m) = (g.rows(), g.cols());
                if self.ng(*a) {
                    let da: Vec<f64> = (0..n).map(|i| g.row_slice(i).iter().sum()).collect();
                    let shape = self.val(*a).shape().to_vec();
                    self.acc(grads, *a, Tensor::new(shape, da).unwrap());
                }
                if self.ng(*b) {
                    let mut db = vec![0.0; m];
                    for i in 0..n {
                        for (j, d) in db.iter_mut().enumerate() {
                            *d += g.at(i, j);
                        }
                    }
                    let shape = self.val(*b).shape().to_vec();
                    self.acc(grads, *b, Tensor::new(shape, db).unwrap());
                }
            }
            Op::StackSeq(steps) => {
                let l = steps.len();
                let h = g.cols();
                let b = g.rows() / l;
                for (t, s) in steps.iter().enumerate() {
                    if !self.ng(*s) {
                        continue;
                    }
                    let mut ds = Tensor::zeros(&[b, h]);
                    for bi in 0..b {
                        ds.data_mut()[bi * h..(bi + 1) * h].copy_from_slice(g.row_slice(bi * l + t));
                    }
                    self.acc(grads, *s, ds);
                }
            }
            Op::BlockMatMulNt(a, b, block) => {
                let block = *block;
                let (ta, tb) = (self.val(*a), self.val(*b));
                let (rows, k) = (ta.rows(), ta.cols());
                let mut da = Tensor::zeros(&[rows, k]);
                let mut db = Tensor::zeros(&[rows, k]);
                for blk in 0..rows / block {
                    let base = blk * block;
                    let gb = &g.data()[base * block..(base + block) * block];
                    let ab = &ta.data()[base * k..(base + block) * k];
                    let bb = &tb.data()[base * k..(base + block) * k];
                    let dab = gemm(gb, bb, block, block, k);
                    let dbb = gemm_tn(gb, ab, block, block, k);
                    da.data_mut()[base * k..(base + block) * k].copy_from_slice(&dab);
                    db.data_mut()[base * k..(base + block) * k].copy_from_slice(&dbb);
                }
                if self.ng(*a) {
                    self.acc(grads, *a, da);
                }
                if self.ng(*b) {
                    self.acc(grads, *b, db);
                }
            }
            Op::BlockMatMul(a, b, block) => {
                let block = *block;
                let (ta, tb) = (self.val(*a), self.val(*b));
                let rows = ta.rows();
                let n = tb.cols();
                let mut da = Tensor::zeros(&[rows, block]);
                let mut db = Tensor::zeros(&[rows, n]);
                for blk in 0..rows / block {
                    let base = blk * block;
                    let gb = &g.data()[base * n..(base + block) * n];
                    let ab = &ta.data()[base * block..(base + block) * block];
                    let bb = &tb.data()[base * n..(base + block) * n];
                    let dab = gemm_nt(gb, bb, block, n, block);
                    let dbb = gemm_tn(ab, gb, block, block, n);
                    da.data_mut()[base * block..(base + block) * block].copy_from_slice(&dab);
                    db.data_mut()[base * n..(base + block) * n].copy_from_slice(&dbb);
                }
                if self.ng(*a) {
                    self.acc(grads, *a, da);
                }
                if self.ng(*b) {
                    self.acc(grads, *b, db);
                }
            }
            Op::BlockMeanRows(a, block) => {
                let x = self.val(*a);
                let n = x.cols();
                let mut da = Tensor::zeros(&[x.rows(), n]);
                for r in 0..x.rows() {
                    let src = g.row_slice(r / block);
                    for j in 0..n {
                        da.data_mut()[r * n + j] = src[j] / *block as f64;
                    }
                }
                self.acc(grads, *a, da);
            }
            Op::Pick(a, entries) => {
                let x = self.val(*a);
                let mut da = Tensor::zeros(&[x.rows(), x.cols()]);
                let c = x.cols();
                for &(r, col, w) in entries {
                    da.data_mut()[r * c + col] += w * g.item();
                }
                self.acc(grads, *a, da);
            }
            Op::StudentT(z, mu) => {
                let (tz, tm) = (self.val(*z), self.val(*mu));
                let (b, d, k) = (tz.rows(), tz.cols(), tm.rows());
                let mut dz = Tensor::zeros(&[b, d]);
                let mut dm = Tensor::zeros(&[k, d]);
                for i in 0..b {
                    let zi = tz.row_slice(i);
                    let qi = y.row_slice(i);
                    let gi = g.row_slice(i);
                    let mut u = vec![0.0; k];
                    for (j, uj) in u.iter_mut().enumerate() {
                        let dist: f64 = zi
                            .iter()
                            .zip(tm.row_slice(j))
                            .map(|(x, y)| (x - y) * (x - y))
                            .sum();
                        *uj = 1.0 / (1.0 + dist);
                    }
                    let s: f64 = u.iter().sum();
                    let gq: f64 = gi.iter().zip(qi).map(|(a, b)| a * b).sum();
                    for j in 0..k {
                        let du = (gi[j] - gq) / s;
                        let gd = du * -(u[j] * u[j]);
                        let mj = tm.row_slice(j);
                        for p in 0..d {
                            let diff = 2.0 * (zi[p] - mj[p]) * gd;
                            dz.data_mut()[i * d + p] += diff;
                            dm.data_mut()[j * d + p] -= diff;
                        }
                    }
                }
                if self.ng(*z) {
                    self.acc(grads, *z, dz);
                }
                if self.ng(*mu) {
                    self.acc(grads, *mu, dm);
                }
            }
            Op::Rince(sims, q, lambda) => {
                let (q, lambda) = (*q, *lambda);
                let t = self.val(*sims);
                let b = t.rows();
                let scale = g.item() / (b * (b - 1)) as f64;
                let mut ds = Tensor::zeros(&[b, b]);
                for i in 0..b {
                    let a = (q * t.at(i, i)).exp();
                    let mut dpos = 0.0;
                    for j in 0..b {
                        if i == j {
                            continue;
                        }
                        let n = (q * t.at(i, j)).exp();
                        let inner = (lambda * (a + n)).powf(q - 1.0);
                        dpos += -a + q * lambda * a * inner;
                        ds.data_mut()[i * b + j] = scale * q * lambda * n * inner;
                    }
                    ds.data_mut()[i * b + i] = scale * dpos;
                }
                self.acc(grads, *sims, ds);
            }
        }
    }
}
