//! Central finite-difference verification of tape gradients.
//!
//! A check rebuilds the computation from scratch for every probed
//! coordinate (the tape is cheap), compares `d loss / d x[i]` from
//! [`Tape::backward`] against `(f(x+h) - f(x-h)) / 2h`, and reports the
//! worst deviation. Exhaustive checks suit op-sized inputs; the sampled
//! variant probes a deterministic random subset of coordinates for whole
//! networks, where exhaustive differencing would be quadratic.

use super::{Tape, TensorId};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One probed coordinate that failed, with both derivative estimates.
#[derive(Debug, Clone)]
pub struct GradMismatch {
    pub tensor: usize,
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Summary of a finite-difference comparison.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub coords_checked: usize,
    pub max_abs_diff: f64,
    pub worst: Option<GradMismatch>,
}

/// Default perturbation and tolerances used across the test suite.
pub const FD_EPS: f64 = 1e-5;
pub const FD_RTOL: f64 = 1e-4;
pub const FD_ATOL: f64 = 1e-7;

fn loss_value<F>(f: &F, inputs: &[(Vec<f64>, usize, usize)]) -> f64
where
    F: Fn(&mut Tape, &[TensorId]) -> TensorId,
{
    let mut tape = Tape::new();
    let ids: Vec<TensorId> = inputs
        .iter()
        .map(|(d, r, c)| tape.leaf(d.clone(), *r, *c, true))
        .collect();
    let out = f(&mut tape, &ids);
    tape.value(out)
}

/// Central difference of the scalar loss w.r.t. coordinate `coord` of
/// input tensor `tensor`.
pub fn central_difference<F>(
    f: &F,
    inputs: &[(Vec<f64>, usize, usize)],
    tensor: usize,
    coord: usize,
    h: f64,
) -> f64
where
    F: Fn(&mut Tape, &[TensorId]) -> TensorId,
{
    let mut plus = inputs.to_vec();
    plus[tensor].0[coord] += h;
    let mut minus = inputs.to_vec();
    minus[tensor].0[coord] -= h;
    (loss_value(f, &plus) - loss_value(f, &minus)) / (2.0 * h)
}

fn run_check<F>(
    f: &F,
    inputs: &[(Vec<f64>, usize, usize)],
    coords: &[(usize, usize)],
    h: f64,
    rtol: f64,
    atol: f64,
) -> Result<GradCheckReport, GradCheckReport>
where
    F: Fn(&mut Tape, &[TensorId]) -> TensorId,
{
    let mut tape = Tape::new();
    let ids: Vec<TensorId> = inputs
        .iter()
        .map(|(d, r, c)| tape.leaf(d.clone(), *r, *c, true))
        .collect();
    let out = f(&mut tape, &ids);
    tape.backward(out);
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| tape.grad(id).expect("requires_grad leaf must have a gradient").to_vec())
        .collect();

    let mut report = GradCheckReport { coords_checked: 0, max_abs_diff: 0.0, worst: None };
    let mut failed = false;
    for &(ti, ci) in coords {
        let num = central_difference(f, inputs, ti, ci, h);
        let ana = analytic[ti][ci];
        let diff = (ana - num).abs();
        report.coords_checked += 1;
        if diff > report.max_abs_diff {
            report.max_abs_diff = diff;
        }
        if diff > atol + rtol * ana.abs().max(num.abs()) {
            failed = true;
            let worse = report
                .worst
                .as_ref()
                .map(|w| diff > (w.analytic - w.numeric).abs())
                .unwrap_or(true);
            if worse {
                report.worst = Some(GradMismatch { tensor: ti, coord: ci, analytic: ana, numeric: num });
            }
        }
    }
    if failed {
        Err(report)
    } else {
        Ok(report)
    }
}

/// Check every coordinate of every input. `f` must build a `1x1` loss from
/// leaves created in the order of `inputs`.
pub fn check_grads<F>(
    f: F,
    inputs: &[(Vec<f64>, usize, usize)],
    h: f64,
    rtol: f64,
    atol: f64,
) -> Result<GradCheckReport, GradCheckReport>
where
    F: Fn(&mut Tape, &[TensorId]) -> TensorId,
{
    let coords: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(ti, (d, _, _))| (0..d.len()).map(move |ci| (ti, ci)))
        .collect();
    run_check(&f, inputs, &coords, h, rtol, atol)
}

/// Check a deterministic random subset: up to `per_tensor` coordinates of
/// each input tensor, drawn from a seeded stream.
pub fn check_grads_sampled<F>(
    f: F,
    inputs: &[(Vec<f64>, usize, usize)],
    per_tensor: usize,
    seed: u64,
    h: f64,
    rtol: f64,
    atol: f64,
) -> Result<GradCheckReport, GradCheckReport>
where
    F: Fn(&mut Tape, &[TensorId]) -> TensorId,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coords = Vec::new();
    for (ti, (d, _, _)) in inputs.iter().enumerate() {
        if d.len() <= per_tensor {
            coords.extend((0..d.len()).map(|ci| (ti, ci)));
        } else {
            for _ in 0..per_tensor {
                coords.push((ti, rng.random_range(0..d.len())));
            }
        }
    }
    run_check(&f, inputs, &coords, h, rtol, atol)
}

/// Deterministic pseudo-random matrix for building check inputs.
pub fn seeded_matrix(seed: u64, rows: usize, cols: usize, scale: f64) -> (Vec<f64>, usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols).map(|_| (rng.random_range(-1.0..1.0)) * scale).collect();
    (data, rows, cols)
}
