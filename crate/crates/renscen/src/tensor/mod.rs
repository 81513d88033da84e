//! Reverse-mode automatic differentiation on a flat tape of 2-D tensors.
//!
//! Every operation evaluates eagerly and records itself on the [`Tape`].
//! The backward pass replays the tape in reverse and *emits new tape nodes*
//! for each vector-Jacobian product instead of writing into side buffers.
//! Because gradients are themselves tape nodes, a scalar built from a
//! gradient (e.g. the norm of an input gradient) can be differentiated
//! again — which is exactly what the discriminator's gradient penalty
//! needs.
//!
//! Shapes are strictly 2-D (`rows x cols`); vectors are thin matrices and
//! scalars are `1x1`. Shape mismatches are programming errors and panic at
//! the call site. Data-dependent numeric failures are surfaced through
//! [`Tape::check_finite`] so model code can abort with context instead.

pub mod adam;
mod backward;
pub mod gradcheck;

pub use adam::{clip_global_norm, AdamHyper, AdamState};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

/// Recorded operation, with enough auxiliary data to derive its VJP.
#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    Neg(TensorId),
    Scale(TensorId, f64),
    AddScalar(TensorId),
    /// Elementwise product with a constant matrix (no gradient to the mask).
    MulConst(TensorId, std::sync::Arc<Vec<f64>>),
    /// Leaky ReLU; the stored mask holds the local derivative (1 or slope).
    Lrelu(TensorId, std::sync::Arc<Vec<f64>>),
    /// Clamp into `[lo, hi]`; mask holds 1 inside the range, 0 outside.
    Clip(TensorId, std::sync::Arc<Vec<f64>>),
    /// Elementwise `max(x, c)`; mask holds 1 where `x > c`.
    ClampMin(TensorId, std::sync::Arc<Vec<f64>>),
    Exp(TensorId),
    Ln(TensorId),
    Sqrt(TensorId),
    SoftmaxRows(TensorId),
    Transpose(TensorId),
    Reshape(TensorId),
    SumAll(TensorId),
    SumRows(TensorId),
    SumCols(TensorId),
    BroadcastRows(TensorId),
    BroadcastCols(TensorId),
    BroadcastScalar(TensorId),
    GatherRows(TensorId, std::sync::Arc<Vec<usize>>),
    /// Scatter-add rows of the input into a zero matrix (adjoint of gather).
    ScatterRows(TensorId, std::sync::Arc<Vec<usize>>),
    GatherCells(TensorId, std::sync::Arc<Vec<usize>>),
    ScatterCells(TensorId, std::sync::Arc<Vec<usize>>),
    SliceRows(TensorId, usize),
    SliceCols(TensorId, usize),
    PlaceRows(TensorId, usize),
    PlaceCols(TensorId, usize),
    /// im2col for 1-D convolution: `(kernel, pad, stride, in_len)`.
    Unfold1d(TensorId, usize, usize, usize),
    /// col2im scatter-add, the adjoint of [`Op::Unfold1d`].
    Fold1d(TensorId, usize, usize, usize, usize),
    Add(TensorId, TensorId),
    Sub(TensorId, TensorId),
    Mul(TensorId, TensorId),
    Div(TensorId, TensorId),
    Matmul(TensorId, TensorId),
    ConcatRows(TensorId, TensorId),
    ConcatCols(TensorId, TensorId),
}

#[derive(Debug)]
pub(crate) struct Node {
    pub(crate) data: Vec<f64>,
    pub(crate) rows: usize,
    pub(crate) cols: usize,
    pub(crate) op: Op,
    /// Leaf marked as a trainable input of the current computation.
    pub(crate) requires_grad: bool,
    /// True if any `requires_grad` leaf is an ancestor; prunes backward work.
    pub(crate) needs_grad: bool,
    /// Filled for `requires_grad` leaves by [`Tape::backward`].
    pub(crate) grad: Option<Vec<f64>>,
}

/// Flat computation tape. Nodes are append-only and topologically ordered
/// by construction, so a reverse scan visits consumers before producers.
#[derive(Debug, Default)]
pub struct Tape {
    pub(crate) nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn rows(&self, id: TensorId) -> usize {
        self.nodes[id.0].rows
    }

    pub fn cols(&self, id: TensorId) -> usize {
        self.nodes[id.0].cols
    }

    pub fn dims(&self, id: TensorId) -> (usize, usize) {
        (self.rows(id), self.cols(id))
    }

    pub fn data(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].data
    }

    /// Value of a `1x1` node.
    pub fn value(&self, id: TensorId) -> f64 {
        let n = &self.nodes[id.0];
        assert!(n.rows == 1 && n.cols == 1, "value() needs a 1x1 node, got {}x{}", n.rows, n.cols);
        n.data[0]
    }

    /// Gradient written by [`Tape::backward`] for a `requires_grad` leaf.
    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    /// Errors if the node holds any NaN or infinity.
    pub fn check_finite(&self, id: TensorId, context: &str) -> Result<(), crate::error::NumericError> {
        if self.nodes[id.0].data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(crate::error::NumericError::NonFinite { context: context.to_string() })
        }
    }

    fn push(&mut self, data: Vec<f64>, rows: usize, cols: usize, op: Op, requires_grad: bool, needs_grad: bool) -> TensorId {
        debug_assert_eq!(data.len(), rows * cols, "data length must match shape");
        self.nodes.push(Node { data, rows, cols, op, requires_grad, needs_grad, grad: None });
        TensorId(self.nodes.len() - 1)
    }

    fn ng(&self, id: TensorId) -> bool {
        self.nodes[id.0].needs_grad
    }

    // ── Leaves ──────────────────────────────────────────────────────────

    /// New leaf tensor. `requires_grad` marks it as a backward target.
    pub fn leaf(&mut self, data: Vec<f64>, rows: usize, cols: usize, requires_grad: bool) -> TensorId {
        assert_eq!(data.len(), rows * cols, "leaf data length {} != {}x{}", data.len(), rows, cols);
        self.push(data, rows, cols, Op::Leaf, requires_grad, requires_grad)
    }

    /// Constant leaf (no gradient).
    pub fn constm(&mut self, data: Vec<f64>, rows: usize, cols: usize) -> TensorId {
        self.leaf(data, rows, cols, false)
    }

    pub fn constf(&mut self, v: f64) -> TensorId {
        self.constm(vec![v], 1, 1)
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> TensorId {
        self.constm(vec![0.0; rows * cols], rows, cols)
    }

    pub fn ones(&mut self, rows: usize, cols: usize) -> TensorId {
        self.constm(vec![1.0; rows * cols], rows, cols)
    }

    // ── Elementwise unary ──────────────────────────────────────────────

    pub fn neg(&mut self, a: TensorId) -> TensorId {
        let (r, c) = self.dims(a);
        let data = self.data(a).iter().map(|v| -v).collect();
        let ng = self.ng(a);
        self.push(data, r, c, Op::Neg(a), false, ng)
    }

    pub fn scale(&mut self, a: TensorId, k: f64) -> TensorId {
        let (r, c) = self.dims(a);
        let data = self.data(a).iter().map(|v| v * k).collect();
        let ng = self.ng(a);
        self.push(data, r, c, Op::Scale(a, k), false, ng)
    }

    pub fn add_scalar(&mut self, a: TensorId, k: f64) -> TensorId {
        let (r, c) = self.dims(a);
        let data = self.data(a).iter().map(|v| v + k).collect();
        let ng = self.ng(a);
        self.push(data, r, c, Op::AddScalar(a), false, ng)
    }

    /// Elementwise product with a constant mask of the same shape.
    pub fn mul_const(&mut self, a: TensorId, mask: &[f64]) -> TensorId {
        let (r, c) = self.dims(a);
        assert_eq!(mask.len(), r * c, "mul_const mask length {} != {}x{}", mask.len(), r, c);
        let data = self.data(a).iter().zip(mask).map(|(v, m)| v * m).collect();
        let ng = self.ng(a);
        self.push(data, r, c, Op::MulConst(a, std::sync::Arc::new(mask.to_vec())), false, ng)
    }

    /// Leaky ReLU with the given negative-side slope.
    pub fn lrelu(&mut self, a: TensorId, slope: f64) -> TensorId {
        let (r, c) = self.dims(a);
        let mut dmask = Vec::with_capacity(r * c);
        let data = self
            .data(a)
            .iter()
            .map(|&v| {
                if v >= 0.0 {
                    dmask.push(1.0);
                    v
                } else {
                    dmask.push(slope);
                    v * slope
                }
            })
            .collect();
        let ng = self.ng(a);
        self.push(data, r, c, Op::Lrelu(a, std::sync::Arc::new(dmask)), false, ng)
    }

    pub fn relu(&mut self, a: TensorId) -> TensorId {
        self.lrelu(a, 0.0)
    }

    /// Clamp into `[lo, hi]`; gradient is zero outside the range.
    /// Returns the node and the number of clipped entries.
    pub fn clip(&mut self, a: TensorId, lo: f64, hi: f64) -> (TensorId, usize) {
        assert!(lo < hi, "clip needs lo < hi");
        let (r, c) = self.dims(a);
        let mut mask = Vec::with_capacity(r * c);
        let mut clipped = 0usize;
        let data = self
            .data(a)
            .iter()
            .map(|&v| {
                if v < lo {
                    mask.push(0.0);
                    clipped += 1;
                    lo
                } else if v > hi {
                    mask.push(0.0);
                    clipped += 1;
                    hi
                } else {
                    mask.push(1.0);
                    v
                }
            })
            .collect();
        let ng = self.ng(a);
        let id = self.push(data, r, c, Op::Clip(a, std::sync::Arc::new(mask)), false, ng);
        (id, clipped)
    }

    /// Elementwise `max(x, c)`; subgradient 0 at the kink.
    pub fn clamp_min(&mut self, a: TensorId, c: f64) -> TensorId {
        let (r, cc) = self.dims(a);
        let mut mask = Vec::with_capacity(r * cc);
        let data = self
            .data(a)
            .iter()
            .map(|&v| {
                if v > c {
                    mask.push(1.0);
                    v
                } else {
                    mask.push(0.0);
                    c
                }
            })
            .collect();
        let ng = self.ng(a);
        self.push(data, r, cc, Op::ClampMin(a, std::sync::Arc::new(mask)), false, ng)
    }

    pub fn exp(&mut self, a: TensorId) -> TensorId {
        let (r, c) = self.dims(a);
        let data = self.data(a).iter().map(|v| v.exp()).collect();
        let ng = self.ng(a);
        self.push(data, r, c, Op::Exp(a), false, ng)
    }

    pub fn ln(&mut self, a: TensorId) -> TensorId {
        let (r, c) = self.dims(a);
        let data = self.data(a).iter().map(|v| v.ln()).collect();
        let ng = self.ng(a);
        self.push(data, r, c, Op::Ln(a), false, ng)
    }

    pub fn sqrt(&mut self, a: TensorId) -> TensorId {
        let (r, c) = self.dims(a);
        let data = self.data(a).iter().map(|v| v.sqrt()).collect();
        let ng = self.ng(a);
        self.push(data, r, c, Op::Sqrt(a), false, ng)
    }

    /// Row-wise softmax with the usual max-shift for stability.
    pub fn softmax_rows(&mut self, a: TensorId) -> TensorId {
        let (r, c) = self.dims(a);
        assert!(c > 0, "softmax_rows on empty rows");
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            let row = &self.data(a)[i * c..(i + 1) * c];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let out = &mut data[i * c..(i + 1) * c];
            let mut sum = 0.0;
            for (o, &v) in out.iter_mut().zip(row) {
                *o = (v - m).exp();
                sum += *o;
            }
            for o in out.iter_mut() {
                *o /= sum;
            }
        }
        let ng = self.ng(a);
        self.push(data, r, c, Op::SoftmaxRows(a), false, ng)
    }

    // ── Shape ops ──────────────────────────────────────────────────────

    pub fn transpose(&mut self, a: TensorId) -> TensorId {
        let (r, c) = self.dims(a);
        let src = self.data(a);
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = src[i * c + j];
            }
        }
        let ng = self.ng(a);
        self.push(data, c, r, Op::Transpose(a), false, ng)
    }

    /// Row-major reinterpretation with the same element count.
    pub fn reshape(&mut self, a: TensorId, rows: usize, cols: usize) -> TensorId {
        let (r, c) = self.dims(a);
        assert_eq!(r * c, rows * cols, "reshape {}x{} -> {}x{} changes element count", r, c, rows, cols);
        let data = self.data(a).to_vec();
        let ng = self.ng(a);
        self.push(data, rows, cols, Op::Reshape(a), false, ng)
    }

    // ── Reductions and broadcasts ──────────────────────────────────────

    pub fn sum_all(&mut self, a: TensorId) -> TensorId {
        let s: f64 = self.data(a).iter().sum();
        let ng = self.ng(a);
        self.push(vec![s], 1, 1, Op::SumAll(a), false, ng)
    }

    /// Sum over the row axis: `r x c -> 1 x c`.
    pub fn sum_rows(&mut self, a: TensorId) -> TensorId {
        let (r, c) = self.dims(a);
        let mut data = vec![0.0; c];
        for i in 0..r {
            for (slot, &v) in data.iter_mut().zip(&self.data(a)[i * c..(i + 1) * c]) {
                *slot += v;
            }
        }
        let ng = self.ng(a);
        self.push(data, 1, c, Op::SumRows(a), false, ng)
    }

    /// Sum over the column axis: `r x c -> r x 1`.
    pub fn sum_cols(&mut self, a: TensorId) -> TensorId {
        let (r, c) = self.dims(a);
        let data: Vec<f64> =
            (0..r).map(|i| self.data(a)[i * c..(i + 1) * c].iter().sum()).collect();
        let ng = self.ng(a);
        self.push(data, r, 1, Op::SumCols(a), false, ng)
    }

    /// Repeat a `1 x c` row down to `rows x c`.
    pub fn broadcast_rows(&mut self, a: TensorId, rows: usize) -> TensorId {
        let (r, c) = self.dims(a);
        assert_eq!(r, 1, "broadcast_rows needs a 1xC input, got {}x{}", r, c);
        let mut data = Vec::with_capacity(rows * c);
        for _ in 0..rows {
            data.extend_from_slice(self.data(a));
        }
        let ng = self.ng(a);
        self.push(data, rows, c, Op::BroadcastRows(a), false, ng)
    }

    /// Repeat an `r x 1` column out to `r x cols`.
    pub fn broadcast_cols(&mut self, a: TensorId, cols: usize) -> TensorId {
        let (r, c) = self.dims(a);
        assert_eq!(c, 1, "broadcast_cols needs an Rx1 input, got {}x{}", r, c);
        let mut data = Vec::with_capacity(r * cols);
        for i in 0..r {
            let v = self.data(a)[i];
            data.extend(std::iter::repeat_n(v, cols));
        }
        let ng = self.ng(a);
        self.push(data, r, cols, Op::BroadcastCols(a), false, ng)
    }

    /// Fill an `rows x cols` matrix with a `1x1` scalar.
    pub fn broadcast_scalar(&mut self, a: TensorId, rows: usize, cols: usize) -> TensorId {
        let (r, c) = self.dims(a);
        assert!(r == 1 && c == 1, "broadcast_scalar needs a 1x1 input");
        let v = self.data(a)[0];
        let ng = self.ng(a);
        self.push(vec![v; rows * cols], rows, cols, Op::BroadcastScalar(a), false, ng)
    }

    // ── Indexing ───────────────────────────────────────────────────────

    /// Select rows by index (duplicates allowed).
    pub fn gather_rows(&mut self, a: TensorId, idx: &[usize]) -> TensorId {
        let (r, c) = self.dims(a);
        assert!(idx.iter().all(|&i| i < r), "gather_rows index out of range (rows={r})");
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(&self.data(a)[i * c..(i + 1) * c]);
        }
        let ng = self.ng(a);
        self.push(data, idx.len(), c, Op::GatherRows(a, std::sync::Arc::new(idx.to_vec())), false, ng)
    }

    /// Scatter-add the rows of `a` into a zero `out_rows x c` matrix;
    /// row `i` of `a` is added at row `idx[i]`. Adjoint of [`Self::gather_rows`].
    pub fn scatter_rows(&mut self, a: TensorId, idx: &[usize], out_rows: usize) -> TensorId {
        let (r, c) = self.dims(a);
        assert_eq!(idx.len(), r, "scatter_rows needs one index per input row");
        assert!(idx.iter().all(|&i| i < out_rows), "scatter_rows index out of range");
        let mut data = vec![0.0; out_rows * c];
        for (i, &dst) in idx.iter().enumerate() {
            let src = &self.data(a)[i * c..(i + 1) * c];
            for j in 0..c {
                data[dst * c + j] += src[j];
            }
        }
        let ng = self.ng(a);
        self.push(data, out_rows, c, Op::ScatterRows(a, std::sync::Arc::new(idx.to_vec())), false, ng)
    }

    /// Select individual cells by flat index into a new `rows x cols` node.
    pub fn gather_cells(&mut self, a: TensorId, idx: &[usize], rows: usize, cols: usize) -> TensorId {
        let (r, c) = self.dims(a);
        assert_eq!(idx.len(), rows * cols, "gather_cells index count != output shape");
        assert!(idx.iter().all(|&i| i < r * c), "gather_cells index out of range");
        let data = idx.iter().map(|&i| self.data(a)[i]).collect();
        let ng = self.ng(a);
        self.push(data, rows, cols, Op::GatherCells(a, std::sync::Arc::new(idx.to_vec())), false, ng)
    }

    /// Scatter-add cells of `a` into a zero `rows x cols` matrix at flat
    /// indices. Adjoint of [`Self::gather_cells`].
    pub fn scatter_cells(&mut self, a: TensorId, idx: &[usize], rows: usize, cols: usize) -> TensorId {
        let (r, c) = self.dims(a);
        assert_eq!(idx.len(), r * c, "scatter_cells needs one index per input cell");
        assert!(idx.iter().all(|&i| i < rows * cols), "scatter_cells index out of range");
        let mut data = vec![0.0; rows * cols];
        for (v, &dst) in self.data(a).iter().zip(idx.iter()) {
            data[dst] += v;
        }
        let ng = self.ng(a);
        self.push(data, rows, cols, Op::ScatterCells(a, std::sync::Arc::new(idx.to_vec())), false, ng)
    }

    /// Rows `[r0, r1)` as a new node.
    pub fn slice_rows(&mut self, a: TensorId, r0: usize, r1: usize) -> TensorId {
        let (r, c) = self.dims(a);
        assert!(r0 < r1 && r1 <= r, "slice_rows [{r0},{r1}) out of {r} rows");
        let data = self.data(a)[r0 * c..r1 * c].to_vec();
        let ng = self.ng(a);
        self.push(data, r1 - r0, c, Op::SliceRows(a, r0), false, ng)
    }

    /// Columns `[c0, c1)` as a new node.
    pub fn slice_cols(&mut self, a: TensorId, c0: usize, c1: usize) -> TensorId {
        let (r, c) = self.dims(a);
        assert!(c0 < c1 && c1 <= c, "slice_cols [{c0},{c1}) out of {c} cols");
        let w = c1 - c0;
        let mut data = Vec::with_capacity(r * w);
        for i in 0..r {
            data.extend_from_slice(&self.data(a)[i * c + c0..i * c + c1]);
        }
        let ng = self.ng(a);
        self.push(data, r, w, Op::SliceCols(a, c0), false, ng)
    }

    /// Embed `a` into a zero matrix of `out_rows` rows starting at row `r0`.
    pub fn place_rows(&mut self, a: TensorId, r0: usize, out_rows: usize) -> TensorId {
        let (r, c) = self.dims(a);
        assert!(r0 + r <= out_rows, "place_rows overflows target");
        let mut data = vec![0.0; out_rows * c];
        data[r0 * c..(r0 + r) * c].copy_from_slice(self.data(a));
        let ng = self.ng(a);
        self.push(data, out_rows, c, Op::PlaceRows(a, r0), false, ng)
    }

    /// Embed `a` into a zero matrix of `out_cols` columns starting at `c0`.
    pub fn place_cols(&mut self, a: TensorId, c0: usize, out_cols: usize) -> TensorId {
        let (r, c) = self.dims(a);
        assert!(c0 + c <= out_cols, "place_cols overflows target");
        let mut data = vec![0.0; r * out_cols];
        for i in 0..r {
            data[i * out_cols + c0..i * out_cols + c0 + c].copy_from_slice(&self.data(a)[i * c..(i + 1) * c]);
        }
        let ng = self.ng(a);
        self.push(data, r, out_cols, Op::PlaceCols(a, c0), false, ng)
    }

    // ── Convolution support ────────────────────────────────────────────

    /// im2col on a `C x L` signal: output `(C*kernel) x L_out` where
    /// `L_out = (L + 2*pad - kernel)/stride + 1`; out-of-range taps read 0.
    pub fn unfold1d(&mut self, a: TensorId, kernel: usize, pad: usize, stride: usize) -> TensorId {
        let (ch, l) = self.dims(a);
        assert!(kernel >= 1 && stride >= 1, "unfold1d needs kernel, stride >= 1");
        assert!(l + 2 * pad >= kernel, "unfold1d kernel longer than padded signal");
        let l_out = (l + 2 * pad - kernel) / stride + 1;
        let mut data = vec![0.0; ch * kernel * l_out];
        for c in 0..ch {
            for t in 0..kernel {
                let row = c * kernel + t;
                for j in 0..l_out {
                    let src = (j * stride + t) as isize - pad as isize;
                    if src >= 0 && (src as usize) < l {
                        data[row * l_out + j] = self.data(a)[c * l + src as usize];
                    }
                }
            }
        }
        let ng = self.ng(a);
        self.push(data, ch * kernel, l_out, Op::Unfold1d(a, kernel, pad, stride), false, ng)
    }

    /// col2im scatter-add: maps a `(C*kernel) x L_out` matrix back onto the
    /// original `C x in_len` signal layout. Adjoint of [`Self::unfold1d`].
    pub fn fold1d(&mut self, a: TensorId, kernel: usize, pad: usize, stride: usize, in_len: usize) -> TensorId {
        let (rk, l_out) = self.dims(a);
        assert!(rk % kernel == 0, "fold1d rows not divisible by kernel");
        let ch = rk / kernel;
        assert_eq!(
            (in_len + 2 * pad - kernel) / stride + 1,
            l_out,
            "fold1d length mismatch: in_len {in_len}, got {l_out} columns"
        );
        let mut data = vec![0.0; ch * in_len];
        for c in 0..ch {
            for t in 0..kernel {
                let row = c * kernel + t;
                for j in 0..l_out {
                    let dst = (j * stride + t) as isize - pad as isize;
                    if dst >= 0 && (dst as usize) < in_len {
                        data[c * in_len + dst as usize] += self.data(a)[row * l_out + j];
                    }
                }
            }
        }
        let ng = self.ng(a);
        self.push(data, ch, in_len, Op::Fold1d(a, kernel, pad, stride, in_len), false, ng)
    }

    // ── Binary ops ─────────────────────────────────────────────────────

    fn same_shape(&self, a: TensorId, b: TensorId, what: &str) -> (usize, usize) {
        let (ra, ca) = self.dims(a);
        let (rb, cb) = self.dims(b);
        assert!(ra == rb && ca == cb, "{what} on mismatched shapes {ra}x{ca} vs {rb}x{cb}");
        (ra, ca)
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (r, c) = self.same_shape(a, b, "add");
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x + y).collect();
        let ng = self.ng(a) || self.ng(b);
        self.push(data, r, c, Op::Add(a, b), false, ng)
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (r, c) = self.same_shape(a, b, "sub");
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x - y).collect();
        let ng = self.ng(a) || self.ng(b);
        self.push(data, r, c, Op::Sub(a, b), false, ng)
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (r, c) = self.same_shape(a, b, "mul");
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x * y).collect();
        let ng = self.ng(a) || self.ng(b);
        self.push(data, r, c, Op::Mul(a, b), false, ng)
    }

    pub fn div(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (r, c) = self.same_shape(a, b, "div");
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x / y).collect();
        let ng = self.ng(a) || self.ng(b);
        self.push(data, r, c, Op::Div(a, b), false, ng)
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (m, ka) = self.dims(a);
        let (kb, n) = self.dims(b);
        assert_eq!(ka, kb, "matmul inner dims differ: {m}x{ka} . {kb}x{n}");
        let mut data = vec![0.0; m * n];
        matmul_kernel(self.data(a), self.data(b), &mut data, m, ka, n);
        let ng = self.ng(a) || self.ng(b);
        self.push(data, m, n, Op::Matmul(a, b), false, ng)
    }

    pub fn concat_rows(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (ra, ca) = self.dims(a);
        let (rb, cb) = self.dims(b);
        assert_eq!(ca, cb, "concat_rows needs equal column counts ({ca} vs {cb})");
        let mut data = Vec::with_capacity((ra + rb) * ca);
        data.extend_from_slice(self.data(a));
        data.extend_from_slice(self.data(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(data, ra + rb, ca, Op::ConcatRows(a, b), false, ng)
    }

    pub fn concat_cols(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (ra, ca) = self.dims(a);
        let (rb, cb) = self.dims(b);
        assert_eq!(ra, rb, "concat_cols needs equal row counts ({ra} vs {rb})");
        let mut data = Vec::with_capacity(ra * (ca + cb));
        for i in 0..ra {
            data.extend_from_slice(&self.data(a)[i * ca..(i + 1) * ca]);
            data.extend_from_slice(&self.data(b)[i * cb..(i + 1) * cb]);
        }
        let ng = self.ng(a) || self.ng(b);
        self.push(data, ra, ca + cb, Op::ConcatCols(a, b), false, ng)
    }

    // ── Composite building blocks ──────────────────────────────────────

    /// Mean over all entries as a `1x1` node.
    pub fn mean_all(&mut self, a: TensorId) -> TensorId {
        let (r, c) = self.dims(a);
        let s = self.sum_all(a);
        self.scale(s, 1.0 / (r * c) as f64)
    }

    /// Sum of squared entries as a `1x1` node.
    pub fn sum_squares(&mut self, a: TensorId) -> TensorId {
        let sq = self.mul(a, a);
        self.sum_all(sq)
    }

    /// 1-D convolution via im2col: weights `C_out x (C_in*kernel)`, bias
    /// `C_out x 1`, input `C_in x L`; output `C_out x L_out`.
    pub fn conv1d(
        &mut self,
        x: TensorId,
        weight: TensorId,
        bias: TensorId,
        kernel: usize,
        pad: usize,
        stride: usize,
    ) -> TensorId {
        let (c_in, _) = self.dims(x);
        let (c_out, wk) = self.dims(weight);
        assert_eq!(wk, c_in * kernel, "conv1d weight cols {wk} != C_in*kernel {}", c_in * kernel);
        assert_eq!(self.dims(bias), (c_out, 1), "conv1d bias must be C_out x 1");
        let u = self.unfold1d(x, kernel, pad, stride);
        let y = self.matmul(weight, u);
        let l_out = self.cols(y);
        let b = self.broadcast_cols(bias, l_out);
        self.add(y, b)
    }

    /// Max-pool each row of a `C x L` node with window and stride 2.
    /// `L` must be even. Ties resolve to the earlier position.
    pub fn maxpool2(&mut self, a: TensorId) -> TensorId {
        let (ch, l) = self.dims(a);
        assert!(l % 2 == 0 && l > 0, "maxpool2 needs even positive length, got {l}");
        let half = l / 2;
        let mut idx = Vec::with_capacity(ch * half);
        for c in 0..ch {
            for j in 0..half {
                let i0 = c * l + 2 * j;
                idx.push(if self.data(a)[i0] >= self.data(a)[i0 + 1] { i0 } else { i0 + 1 });
            }
        }
        self.gather_cells(a, &idx, ch, half)
    }

    /// Row-wise layer normalization with learnable `gamma`, `beta` (`1 x C`).
    pub fn layer_norm_rows(&mut self, x: TensorId, gamma: TensorId, beta: TensorId, eps: f64) -> TensorId {
        let (l, c) = self.dims(x);
        assert_eq!(self.dims(gamma), (1, c), "layer_norm gamma must be 1 x C");
        assert_eq!(self.dims(beta), (1, c), "layer_norm beta must be 1 x C");
        let mu = self.sum_cols(x);
        let mu = self.scale(mu, 1.0 / c as f64);
        let mu_b = self.broadcast_cols(mu, c);
        let centered = self.sub(x, mu_b);
        let sq = self.mul(centered, centered);
        let var = self.sum_cols(sq);
        let var = self.scale(var, 1.0 / c as f64);
        let var = self.add_scalar(var, eps);
        let std = self.sqrt(var);
        let std_b = self.broadcast_cols(std, c);
        let normed = self.div(centered, std_b);
        let g = self.broadcast_rows(gamma, l);
        let b = self.broadcast_rows(beta, l);
        let scaled = self.mul(normed, g);
        self.add(scaled, b)
    }

    /// Per-column (channel) instance normalization over the row axis:
    /// each column is shifted to zero mean and scaled to unit variance,
    /// stabilized by `eps` inside the square root.
    pub fn instance_norm_cols(&mut self, x: TensorId, eps: f64) -> TensorId {
        let (l, c) = self.dims(x);
        let mu = self.sum_rows(x);
        let mu = self.scale(mu, 1.0 / l as f64);
        let mu_b = self.broadcast_rows(mu, l);
        let centered = self.sub(x, mu_b);
        let sq = self.mul(centered, centered);
        let var = self.sum_rows(sq);
        let var = self.scale(var, 1.0 / l as f64);
        let var = self.add_scalar(var, eps);
        let std = self.sqrt(var);
        let std_b = self.broadcast_rows(std, l);
        let _ = c;
        self.div(centered, std_b)
    }
}

/// Cache-friendly `i-k-j` matrix multiply: `c[m x n] = a[m x k] . b[k x n]`.
pub(crate) fn matmul_kernel(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += aip * bv;
            }
        }
    }
}
