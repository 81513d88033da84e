//! Reverse pass: vector-Jacobian products emitted as new tape nodes.
//!
//! Because each VJP is built from ordinary ops, a value derived from a
//! gradient node (such as the norm of an input gradient) remains
//! differentiable — calling the reverse pass again propagates through the
//! first pass's nodes. The pruning flag `needs_grad` keeps dead branches
//! (constants, detached inputs) out of the work list.

use super::{Op, Tape, TensorId};

impl Tape {
    /// Graph-mode reverse pass from a `1x1` loss. Returns, for each entry
    /// of `wrt`, the tape node holding `d loss / d wrt[i]` — `None` when
    /// the loss does not depend on it.
    pub fn grad_graph(&mut self, loss: TensorId, wrt: &[TensorId]) -> Vec<Option<TensorId>> {
        let (lr, lc) = self.dims(loss);
        assert!(lr == 1 && lc == 1, "grad_graph needs a scalar loss, got {lr}x{lc}");

        let n = self.nodes.len();
        let mut grads: Vec<Option<TensorId>> = vec![None; n];
        grads[loss.0] = Some(self.ones(1, 1));

        for i in (0..=loss.0).rev() {
            let g = match grads[i] {
                Some(g) => g,
                None => continue,
            };
            if !self.nodes[i].needs_grad {
                continue;
            }
            let op = self.nodes[i].op.clone();
            let out = TensorId(i);
            match op {
                Op::Leaf => {}
                Op::Neg(a) => {
                    let c = self.neg(g);
                    self.accum(&mut grads, a, c);
                }
                Op::Scale(a, k) => {
                    let c = self.scale(g, k);
                    self.accum(&mut grads, a, c);
                }
                Op::AddScalar(a) => {
                    self.accum(&mut grads, a, g);
                }
                Op::MulConst(a, mask) => {
                    let c = self.mul_const(g, &mask);
                    self.accum(&mut grads, a, c);
                }
                Op::Lrelu(a, dmask) => {
                    let c = self.mul_const(g, &dmask);
                    self.accum(&mut grads, a, c);
                }
                Op::Clip(a, mask) => {
                    let c = self.mul_const(g, &mask);
                    self.accum(&mut grads, a, c);
                }
                Op::ClampMin(a, mask) => {
                    let c = self.mul_const(g, &mask);
                    self.accum(&mut grads, a, c);
                }
                Op::Exp(a) => {
                    let c = self.mul(g, out);
                    self.accum(&mut grads, a, c);
                }
                Op::Ln(a) => {
                    let c = self.div(g, a);
                    self.accum(&mut grads, a, c);
                }
                Op::Sqrt(a) => {
                    // d sqrt/da = 1/(2 sqrt(a)); the clamp keeps the VJP
                    // finite at 0, where downstream factors are 0 anyway
                    // (std of identical values, norm of a zero vector).
                    let two_y = self.scale(out, 2.0);
                    let safe = self.clamp_min(two_y, 1e-12);
                    let c = self.div(g, safe);
                    self.accum(&mut grads, a, c);
                }
                Op::SoftmaxRows(a) => {
                    let cdim = self.cols(out);
                    let gs = self.mul(g, out);
                    let dots = self.sum_cols(gs);
                    let dots_b = self.broadcast_cols(dots, cdim);
                    let diff = self.sub(g, dots_b);
                    let c = self.mul(out, diff);
                    self.accum(&mut grads, a, c);
                }
                Op::Transpose(a) => {
                    let c = self.transpose(g);
                    self.accum(&mut grads, a, c);
                }
                Op::Reshape(a) => {
                    let (r, cdim) = self.dims(a);
                    let c = self.reshape(g, r, cdim);
                    self.accum(&mut grads, a, c);
                }
                Op::SumAll(a) => {
                    let (r, cdim) = self.dims(a);
                    let c = self.broadcast_scalar(g, r, cdim);
                    self.accum(&mut grads, a, c);
                }
                Op::SumRows(a) => {
                    let r = self.rows(a);
                    let c = self.broadcast_rows(g, r);
                    self.accum(&mut grads, a, c);
                }
                Op::SumCols(a) => {
                    let cdim = self.cols(a);
                    let c = self.broadcast_cols(g, cdim);
                    self.accum(&mut grads, a, c);
                }
                Op::BroadcastRows(a) => {
                    let c = self.sum_rows(g);
                    self.accum(&mut grads, a, c);
                }
                Op::BroadcastCols(a) => {
                    let c = self.sum_cols(g);
                    self.accum(&mut grads, a, c);
                }
                Op::BroadcastScalar(a) => {
                    let c = self.sum_all(g);
                    self.accum(&mut grads, a, c);
                }
                Op::GatherRows(a, idx) => {
                    let r = self.rows(a);
                    let c = self.scatter_rows(g, &idx, r);
                    self.accum(&mut grads, a, c);
                }
                Op::ScatterRows(a, idx) => {
                    let c = self.gather_rows(g, &idx);
                    self.accum(&mut grads, a, c);
                }
                Op::GatherCells(a, idx) => {
                    let (r, cdim) = self.dims(a);
                    let c = self.scatter_cells(g, &idx, r, cdim);
                    self.accum(&mut grads, a, c);
                }
                Op::ScatterCells(a, idx) => {
                    let (r, cdim) = self.dims(a);
                    let c = self.gather_cells(g, &idx, r, cdim);
                    self.accum(&mut grads, a, c);
                }
                Op::SliceRows(a, r0) => {
                    let r = self.rows(a);
                    let c = self.place_rows(g, r0, r);
                    self.accum(&mut grads, a, c);
                }
                Op::SliceCols(a, c0) => {
                    let cdim = self.cols(a);
                    let c = self.place_cols(g, c0, cdim);
                    self.accum(&mut grads, a, c);
                }
                Op::PlaceRows(a, r0) => {
                    let r = self.rows(a);
                    let c = self.slice_rows(g, r0, r0 + r);
                    self.accum(&mut grads, a, c);
                }
                Op::PlaceCols(a, c0) => {
                    let cdim = self.cols(a);
                    let c = self.slice_cols(g, c0, c0 + cdim);
                    self.accum(&mut grads, a, c);
                }
                Op::Unfold1d(a, k, p, s) => {
                    let in_len = self.cols(a);
                    let c = self.fold1d(g, k, p, s, in_len);
                    self.accum(&mut grads, a, c);
                }
                Op::Fold1d(a, k, p, s, _in_len) => {
                    let c = self.unfold1d(g, k, p, s);
                    self.accum(&mut grads, a, c);
                }
                Op::Add(a, b) => {
                    self.accum(&mut grads, a, g);
                    self.accum(&mut grads, b, g);
                }
                Op::Sub(a, b) => {
                    self.accum(&mut grads, a, g);
                    let c = self.neg(g);
                    self.accum(&mut grads, b, c);
                }
                Op::Mul(a, b) => {
                    if self.nodes[a.0].needs_grad {
                        let c = self.mul(g, b);
                        self.accum(&mut grads, a, c);
                    }
                    if self.nodes[b.0].needs_grad {
                        let c = self.mul(g, a);
                        self.accum(&mut grads, b, c);
                    }
                }
                Op::Div(a, b) => {
                    if self.nodes[a.0].needs_grad {
                        let c = self.div(g, b);
                        self.accum(&mut grads, a, c);
                    }
                    if self.nodes[b.0].needs_grad {
                        let gy = self.mul(g, out);
                        let gyb = self.div(gy, b);
                        let c = self.neg(gyb);
                        self.accum(&mut grads, b, c);
                    }
                }
                Op::Matmul(a, b) => {
                    if self.nodes[a.0].needs_grad {
                        let bt = self.transpose(b);
                        let c = self.matmul(g, bt);
                        self.accum(&mut grads, a, c);
                    }
                    if self.nodes[b.0].needs_grad {
                        let at = self.transpose(a);
                        let c = self.matmul(at, g);
                        self.accum(&mut grads, b, c);
                    }
                }
                Op::ConcatRows(a, b) => {
                    let ra = self.rows(a);
                    let rb = self.rows(b);
                    if self.nodes[a.0].needs_grad {
                        let c = self.slice_rows(g, 0, ra);
                        self.accum(&mut grads, a, c);
                    }
                    if self.nodes[b.0].needs_grad {
                        let c = self.slice_rows(g, ra, ra + rb);
                        self.accum(&mut grads, b, c);
                    }
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.cols(a);
                    let cb = self.cols(b);
                    if self.nodes[a.0].needs_grad {
                        let c = self.slice_cols(g, 0, ca);
                        self.accum(&mut grads, a, c);
                    }
                    if self.nodes[b.0].needs_grad {
                        let c = self.slice_cols(g, ca, ca + cb);
                        self.accum(&mut grads, b, c);
                    }
                }
            }
        }

        wrt.iter().map(|id| grads[id.0]).collect()
    }

    /// Value-mode reverse pass: computes `d loss / d leaf` for every
    /// `requires_grad` leaf and stores it in the leaf's `grad` slot
    /// (zeros when the loss does not depend on the leaf). Returns the ids
    /// of all leaves that received a gradient.
    pub fn backward(&mut self, loss: TensorId) -> Vec<TensorId> {
        let targets: Vec<TensorId> = (0..self.nodes.len())
            .filter(|&i| self.nodes[i].requires_grad)
            .map(TensorId)
            .collect();
        let grad_nodes = self.grad_graph(loss, &targets);
        for (&t, gn) in targets.iter().zip(grad_nodes) {
            let data = match gn {
                Some(g) => self.nodes[g.0].data.clone(),
                None => vec![0.0; self.nodes[t.0].rows * self.nodes[t.0].cols],
            };
            self.nodes[t.0].grad = Some(data);
        }
        targets
    }

    fn accum(&mut self, grads: &mut [Option<TensorId>], target: TensorId, contrib: TensorId) {
        if !self.nodes[target.0].needs_grad {
            return;
        }
        grads[target.0] = Some(match grads[target.0] {
            Some(existing) => self.add(existing, contrib),
            None => contrib,
        });
    }
}
