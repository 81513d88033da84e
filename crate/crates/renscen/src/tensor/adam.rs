//! Adam optimizer with bias correction, over lists of parameter tensors.

/// Optimizer hyperparameters. `beta1/beta2/eps` follow the common defaults.
#[derive(Debug, Clone, Copy)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamHyper {
    pub fn with_lr(lr: f64) -> Self {
        AdamHyper { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moment accumulators for a fixed list of parameter tensors,
/// plus the shared step counter `t`.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    /// Accumulators shaped after the given parameter lengths.
    pub fn new(lens: &[usize]) -> Self {
        AdamState {
            m: lens.iter().map(|&l| vec![0.0; l]).collect(),
            v: lens.iter().map(|&l| vec![0.0; l]).collect(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One update over all tensors. `params[i]` and `grads[i]` must match
    /// the lengths given at construction. Returns an error context string
    /// if any gradient is non-finite (the caller aborts with diagnostics).
    pub fn step(
        &mut self,
        params: &mut [&mut [f64]],
        grads: &[Vec<f64>],
        hyper: AdamHyper,
    ) -> Result<(), String> {
        assert_eq!(params.len(), self.m.len(), "adam: tensor count changed");
        assert_eq!(grads.len(), self.m.len(), "adam: gradient count mismatch");
        for (i, g) in grads.iter().enumerate() {
            if !g.iter().all(|v| v.is_finite()) {
                return Err(format!("non-finite gradient in tensor {i}"));
            }
        }
        self.t += 1;
        let bc1 = 1.0 - hyper.beta1.powi(self.t as i32);
        let bc2 = 1.0 - hyper.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            assert_eq!(p.len(), m.len(), "adam: tensor length changed");
            assert_eq!(g.len(), m.len(), "adam: gradient length mismatch");
            for j in 0..m.len() {
                m[j] = hyper.beta1 * m[j] + (1.0 - hyper.beta1) * g[j];
                v[j] = hyper.beta2 * v[j] + (1.0 - hyper.beta2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                p[j] -= hyper.lr * mhat / (vhat.sqrt() + hyper.eps);
            }
        }
        Ok(())
    }
}

/// Scale all gradients so their global L2 norm does not exceed `max_norm`.
/// Returns `(norm_before, fired)`.
pub fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) -> (f64, bool) {
    let sq: f64 = grads.iter().flat_map(|g| g.iter()).map(|v| v * v).sum();
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let k = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.iter_mut() {
                *v *= k;
            }
        }
        (norm, true)
    } else {
        (norm, false)
    }
}
