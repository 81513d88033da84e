//! Loss terms for both networks: variety (best-of-N), decaying
//! auxiliary, adversarial, the noise remedy, their weighted total, and
//! the critic's hinge pair with an R1-style gradient penalty.
//!
//! Every function builds the loss on the tape and returns its `1x1`
//! node, so one backward pass reaches the parameters through whichever
//! terms the caller combined.

use crate::config::TrainConfig;
use crate::tensor::{Tape, TensorId};

/// Weights and sampling counts of the composite forecaster loss.
#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    pub va: f64,
    pub au: f64,
    pub ad: f64,
    pub gp: f64,
    /// Decay rate of the auxiliary term (`exp(-eps * n)`).
    pub eps_decay: f64,
    /// Dropout-pattern draws per step.
    pub n_f: usize,
    /// Latent draws per step.
    pub n_n: usize,
}

impl LossWeights {
    pub fn from_train(cfg: &TrainConfig) -> Self {
        LossWeights {
            va: cfg.lambda_va,
            au: cfg.lambda_au,
            ad: cfg.lambda_ad,
            gp: cfg.lambda_gp,
            eps_decay: cfg.epsilon,
            n_f: cfg.n_f,
            n_n: cfg.n_n,
        }
    }

    // negated comparisons so NaN fails validation rather than passing it
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), String> {
        let named = [
            ("lambda_va", self.va),
            ("lambda_au", self.au),
            ("lambda_ad", self.ad),
            ("lambda_gp", self.gp),
            ("epsilon", self.eps_decay),
        ];
        for (name, v) in named {
            if !(v >= 0.0) {
                return Err(format!("{name} must be non-negative, got {v}"));
            }
        }
        if self.n_f == 0 || self.n_n == 0 {
            return Err("n_f and n_n must be positive".into());
        }
        Ok(())
    }
}

/// Squared L2 distance between two equal-shaped tensors.
fn sq_dist(tape: &mut Tape, y: TensorId, x: TensorId) -> TensorId {
    let d = tape.sub(y, x);
    tape.sum_squares(d)
}

/// Mean squared L2 error of a forecast set against the target.
pub fn mean_sq_error(tape: &mut Tape, y: TensorId, forecasts: &[TensorId]) -> TensorId {
    assert!(!forecasts.is_empty(), "need at least one forecast");
    let mut acc = sq_dist(tape, y, forecasts[0]);
    for &f in &forecasts[1..] {
        let d = sq_dist(tape, y, f);
        acc = tape.add(acc, d);
    }
    tape.scale(acc, 1.0 / forecasts.len() as f64)
}

/// Best-of-candidates loss: the smallest squared L2 distance to the
/// target. The argmin is chosen off-tape (ties to the first), so the
/// gradient flows only through the winning candidate.
pub fn variety_loss(tape: &mut Tape, y: TensorId, candidates: &[TensorId]) -> TensorId {
    assert!(!candidates.is_empty(), "variety loss needs at least one candidate");
    let dists: Vec<TensorId> = candidates.iter().map(|&c| sq_dist(tape, y, c)).collect();
    let mut best = 0;
    for (i, &d) in dists.iter().enumerate().skip(1) {
        if tape.value(d) < tape.value(dists[best]) {
            best = i;
        }
    }
    dists[best]
}

/// Decaying imitation term: `exp(-eps * n)` times the mean squared
/// error over every forecast drawn this step. `n` is the decay counter
/// (epochs by default; see `TrainConfig::decay_unit`).
pub fn auxiliary_loss(
    tape: &mut Tape,
    y: TensorId,
    forecasts: &[TensorId],
    n: f64,
    eps: f64,
) -> TensorId {
    let m = mean_sq_error(tape, y, forecasts);
    tape.scale(m, (-eps * n).exp())
}

/// Generator-side adversarial term: the mean of the negated critic
/// scores on generated samples.
pub fn adversarial_loss_f(tape: &mut Tape, scores: &[TensorId]) -> TensorId {
    assert!(!scores.is_empty(), "need at least one score");
    let mut acc = scores[0];
    for &s in &scores[1..] {
        acc = tape.add(acc, s);
    }
    tape.scale(acc, -1.0 / scores.len() as f64)
}

/// Noise remedy: mean squared L2 error over the latent-only forecast
/// draws, pulling the noise-conditional mean toward the target.
pub fn remedy_term(tape: &mut Tape, y: TensorId, noise_forecasts: &[TensorId]) -> TensorId {
    mean_sq_error(tape, y, noise_forecasts)
}

/// Composite forecaster loss:
/// `w.va * variety + w.au * auxiliary + w.ad * adversarial + remedy`.
pub fn forecaster_loss(
    tape: &mut Tape,
    variety: TensorId,
    auxiliary: TensorId,
    adversarial: TensorId,
    remedy: TensorId,
    w: &LossWeights,
) -> TensorId {
    let a = tape.scale(variety, w.va);
    let b = tape.scale(auxiliary, w.au);
    let c = tape.scale(adversarial, w.ad);
    let ab = tape.add(a, b);
    let abc = tape.add(ab, c);
    tape.add(abc, remedy)
}

/// Critic hinge pair: `L+ = mean max(0, 1 + fake)` and
/// `L- = mean max(0, 1 - real)`. Both are zero exactly when the scores
/// clear their margins (fake <= -1, real >= +1).
pub fn hinge_loss_d(
    tape: &mut Tape,
    fake_scores: &[TensorId],
    real_scores: &[TensorId],
) -> (TensorId, TensorId) {
    assert!(!fake_scores.is_empty() && !real_scores.is_empty(), "empty score batch");
    let mean_hinge = |tape: &mut Tape, scores: &[TensorId], flip: bool| {
        let mut acc = None;
        for &s in scores {
            let signed = if flip { tape.neg(s) } else { s };
            let margin = tape.add_scalar(signed, 1.0);
            let h = tape.relu(margin);
            acc = Some(match acc {
                None => h,
                Some(a) => tape.add(a, h),
            });
        }
        let total = acc.unwrap();
        tape.scale(total, 1.0 / scores.len() as f64)
    };
    let l_plus = mean_hinge(tape, fake_scores, false);
    let l_minus = mean_hinge(tape, real_scores, true);
    (l_plus, l_minus)
}

/// R1-style penalty: for each `(score, targets)` pair, the L2 norm of
/// the score's gradient w.r.t. the targets (jointly), averaged over the
/// batch; `squared` penalizes the squared norm instead. Built in graph
/// mode, so the result is itself differentiable. Errors if a score is
/// structurally independent of every target.
pub fn gradient_penalty(
    tape: &mut Tape,
    items: &[(TensorId, Vec<TensorId>)],
    squared: bool,
) -> Result<TensorId, String> {
    assert!(!items.is_empty(), "empty penalty batch");
    let mut acc = None;
    for (i, (score, wrt)) in items.iter().enumerate() {
        let grads = tape.grad_graph(*score, wrt);
        let mut ss = None;
        for g in grads.into_iter().flatten() {
            let s = tape.sum_squares(g);
            ss = Some(match ss {
                None => s,
                Some(a) => tape.add(a, s),
            });
        }
        let ss = ss.ok_or_else(|| format!("score {i} does not depend on its penalty targets"))?;
        let term = if squared {
            ss
        } else {
            // the floor only matters at exactly zero gradient, where the
            // norm's derivative is undefined anyway; it keeps backward finite
            let safe = tape.clamp_min(ss, 1e-24);
            tape.sqrt(safe)
        };
        acc = Some(match acc {
            None => term,
            Some(a) => tape.add(a, term),
        });
    }
    let total = acc.unwrap();
    Ok(tape.scale(total, 1.0 / items.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use crate::discriminator::{discriminate_batch, init_discriminator};
    use crate::tensor::gradcheck::{central_difference, seeded_matrix};

    #[test]
    fn weights_bridge_config_and_reject_negatives() {
        let cfg = TrainConfig::default();
        let w = LossWeights::from_train(&cfg);
        assert_eq!((w.va, w.au, w.ad), (0.5, 0.5, 1.0));
        assert_eq!((w.gp, w.eps_decay), (3.0, 0.05));
        assert_eq!((w.n_f, w.n_n), (8, 2));
        assert!(w.validate().is_ok());
        assert!(LossWeights { va: -0.1, ..w }.validate().is_err());
        assert!(LossWeights { eps_decay: f64::NAN, ..w }.validate().is_err());
        assert!(LossWeights { n_n: 0, ..w }.validate().is_err());
    }

    #[test]
    fn variety_with_one_candidate_is_the_squared_error() {
        let mut tape = Tape::new();
        let y = tape.leaf(vec![1.0, 2.0], 1, 2, false);
        let x = tape.leaf(vec![0.0, 4.0], 1, 2, false);
        let v = variety_loss(&mut tape, y, &[x]);
        assert_eq!(tape.value(v), 1.0 + 4.0);
        let same = variety_loss(&mut tape, y, &[y]);
        assert_eq!(tape.value(same), 0.0);
    }

    #[test]
    fn variety_takes_the_minimum_and_stays_below_the_mean() {
        let mut tape = Tape::new();
        let (yd, _, _) = seeded_matrix(1, 2, 3, 1.0);
        let y = tape.leaf(yd.clone(), 2, 3, false);
        let cands: Vec<TensorId> = (0..3)
            .map(|i| {
                let (d, _, _) = seeded_matrix(2 + i, 2, 3, 1.0);
                tape.leaf(d, 2, 3, false)
            })
            .collect();
        let v = variety_loss(&mut tape, y, &cands);
        let dists: Vec<f64> = cands
            .iter()
            .map(|&c| tape.data(c).iter().zip(&yd).map(|(a, b)| (a - b) * (a - b)).sum())
            .collect();
        let want = dists.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!((tape.value(v) - want).abs() < 1e-12);
        // min <= mean: the variety term never exceeds the undecayed auxiliary
        let aux = auxiliary_loss(&mut tape, y, &cands, 0.0, 0.05);
        assert!(tape.value(v) <= tape.value(aux) + 1e-12);
    }

    #[test]
    fn variety_gradient_skips_the_losing_candidates() {
        let mut tape = Tape::new();
        let y = tape.leaf(vec![0.0, 0.0], 1, 2, false);
        let near = tape.leaf(vec![0.1, 0.0], 1, 2, true);
        let far = tape.leaf(vec![5.0, 5.0], 1, 2, true);
        let v = variety_loss(&mut tape, y, &[far, near]);
        tape.backward(v);
        assert_eq!(tape.grad(near).unwrap(), &[0.2, 0.0]);
        let loser = tape.grad(far).map(|g| g.to_vec()).unwrap_or_default();
        assert!(loser.iter().all(|&g| g == 0.0), "loser received gradient {loser:?}");
    }

    #[test]
    #[should_panic(expected = "at least one candidate")]
    fn variety_rejects_an_empty_candidate_set() {
        let mut tape = Tape::new();
        let y = tape.zeros(1, 2);
        variety_loss(&mut tape, y, &[]);
    }

    #[test]
    fn auxiliary_decay_follows_the_exponential() {
        let mut tape = Tape::new();
        let y = tape.zeros(1, 1);
        let a = tape.leaf(vec![1.0], 1, 1, false);
        let b = tape.leaf(vec![3.0], 1, 1, false);
        // undecayed mean of {1, 9} is 5
        let at0 = auxiliary_loss(&mut tape, y, &[a, b], 0.0, 0.05);
        assert_eq!(tape.value(at0), 5.0);
        let at100 = auxiliary_loss(&mut tape, y, &[a, b], 100.0, 0.05);
        assert!((tape.value(at100) - 5.0 * (-5.0f64).exp()).abs() < 1e-15);
        let late = auxiliary_loss(&mut tape, y, &[a, b], 1e6, 0.05);
        assert!(tape.value(late) < 1e-200, "decay never reaches zero");
    }

    #[test]
    fn adversarial_is_the_negated_mean_score() {
        let mut tape = Tape::new();
        let zeros: Vec<TensorId> = (0..3).map(|_| tape.zeros(1, 1)).collect();
        let z = adversarial_loss_f(&mut tape, &zeros);
        assert_eq!(tape.value(z), 0.0);
        let ones: Vec<TensorId> = (0..3).map(|_| tape.ones(1, 1)).collect();
        let o = adversarial_loss_f(&mut tape, &ones);
        assert_eq!(tape.value(o), -1.0);
        let mixed = vec![tape.constf(2.0), tape.constf(-1.0), tape.constf(0.5)];
        let m = adversarial_loss_f(&mut tape, &mixed);
        assert!((tape.value(m) - -(2.0 - 1.0 + 0.5) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn remedy_averages_squared_errors() {
        let mut tape = Tape::new();
        let y = tape.zeros(1, 1);
        let a = tape.leaf(vec![1.0], 1, 1, false);
        let b = tape.leaf(vec![3.0], 1, 1, false);
        let r = remedy_term(&mut tape, y, &[a, b]);
        assert_eq!(tape.value(r), 5.0);
        let single = remedy_term(&mut tape, y, &[b]);
        assert_eq!(tape.value(single), 9.0);
        let exact = remedy_term(&mut tape, y, &[y, y]);
        assert_eq!(tape.value(exact), 0.0);
    }

    #[test]
    fn forecaster_loss_is_the_documented_weighted_sum() {
        let mut tape = Tape::new();
        let w = LossWeights::from_train(&TrainConfig::default());
        let zero = tape.zeros(1, 1);
        let l0 = forecaster_loss(&mut tape, zero, zero, zero, zero, &w);
        assert_eq!(tape.value(l0), 0.0);
        let one = tape.ones(1, 1);
        let l1 = forecaster_loss(&mut tape, one, one, one, one, &w);
        assert_eq!(tape.value(l1), 3.0); // 0.5 + 0.5 + 1.0 + 1.0
        // linearity in a single component
        let two = tape.constf(2.0);
        let l2 = forecaster_loss(&mut tape, two, one, one, one, &w);
        assert_eq!(tape.value(l2) - tape.value(l1), 0.5);
    }

    #[test]
    fn zero_adversarial_weight_silences_its_gradient() {
        let mut tape = Tape::new();
        let w = LossWeights { ad: 0.0, ..LossWeights::from_train(&TrainConfig::default()) };
        let score = tape.leaf(vec![0.7], 1, 1, true);
        let ad = adversarial_loss_f(&mut tape, &[score]);
        let one = tape.ones(1, 1);
        let loss = forecaster_loss(&mut tape, one, one, ad, one, &w);
        tape.backward(loss);
        let g = tape.grad(score).map(|g| g.to_vec()).unwrap_or(vec![0.0]);
        assert_eq!(g, vec![0.0], "disabled adversarial term still trains");
    }

    #[test]
    fn hinge_terms_respect_their_margins() {
        let mut tape = Tape::new();
        let at = |tape: &mut Tape, v: f64| tape.constf(v);
        // fake at the boundary and inside the margin
        let fm1 = at(&mut tape, -1.0);
        let f0 = at(&mut tape, 0.0);
        let r2 = at(&mut tape, 2.0);
        let r0 = at(&mut tape, 0.0);
        let (lp, lm) = hinge_loss_d(&mut tape, &[fm1], &[r2]);
        assert_eq!(tape.value(lp), 0.0);
        assert_eq!(tape.value(lm), 0.0);
        let (lp2, lm2) = hinge_loss_d(&mut tape, &[f0], &[r0]);
        assert_eq!(tape.value(lp2), 1.0);
        assert_eq!(tape.value(lm2), 1.0);
        // means over a mixed batch
        let (lp3, lm3) = hinge_loss_d(&mut tape, &[fm1, f0], &[r2, r0]);
        assert_eq!(tape.value(lp3), 0.5);
        assert_eq!(tape.value(lm3), 0.5);
    }

    #[test]
    fn penalty_on_a_linear_score_is_the_weight_norm() {
        let mut tape = Tape::new();
        let w = vec![3.0, 4.0, 0.0, 0.0, 0.0, 12.0]; // norm 13
        let (xd, _, _) = seeded_matrix(9, 2, 3, 1.0);
        let x = tape.leaf(xd, 2, 3, true);
        let score = {
            let prod = tape.mul_const(x, &w);
            tape.sum_all(prod)
        };
        let gp = gradient_penalty(&mut tape, &[(score, vec![x])], false).unwrap();
        assert!((tape.value(gp) - 13.0).abs() < 1e-12);
        let gp2 = gradient_penalty(&mut tape, &[(score, vec![x])], true).unwrap();
        assert!((tape.value(gp2) - 169.0).abs() < 1e-9);
    }

    #[test]
    fn penalty_handles_flat_and_detached_scores() {
        let mut tape = Tape::new();
        let x = tape.leaf(vec![0.5, -0.5], 1, 2, true);
        // flat: weights are zero, but the input still participates
        let flat = {
            let prod = tape.mul_const(x, &[0.0, 0.0]);
            tape.sum_all(prod)
        };
        let gp = gradient_penalty(&mut tape, &[(flat, vec![x])], false).unwrap();
        assert!(tape.value(gp) < 1e-9, "flat score should cost ~0");
        // detached: the score never touches the window at all
        let stray = tape.constf(1.0);
        assert!(gradient_penalty(&mut tape, &[(stray, vec![x])], false).is_err());
    }

    #[test]
    fn penalty_matches_finite_difference_norm_through_the_critic() {
        let cfg = ModelConfig {
            n_t: 16,
            n_lag: 8,
            n_m: 8,
            heads: 2,
            n_sites: 2,
            disc_channels: 4,
            enc_channels: vec!["a:power".into()],
            dec_channels: vec!["a:power".into()],
            ..ModelConfig::default()
        };
        let store = init_discriminator(&cfg, 5);
        let input = seeded_matrix(41, cfg.n_t, cfg.n_sites, 0.5);

        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let x = tape.leaf(input.0.clone(), cfg.n_t, cfg.n_sites, true);
        let score = discriminate_batch(&mut tape, &cfg, &bound, &[x])[0];
        let gp = gradient_penalty(&mut tape, &[(score, vec![x])], false).unwrap();

        let f = |tape: &mut Tape, ids: &[TensorId]| {
            let bound = store.bind(tape);
            discriminate_batch(tape, &cfg, &bound, &[ids[0]])[0]
        };
        let mut ss = 0.0;
        for coord in 0..input.0.len() {
            let d = central_difference(&f, std::slice::from_ref(&input), 0, coord, 1e-5);
            ss += d * d;
        }
        let want = ss.sqrt();
        let got = tape.value(gp);
        assert!(
            (got - want).abs() / want.max(1e-12) < 1e-3,
            "penalty {got} vs finite differences {want}"
        );
    }

    #[test]
    fn penalty_averages_over_the_batch() {
        let mut tape = Tape::new();
        let xa = tape.leaf(vec![1.0, 0.0], 1, 2, true);
        let xb = tape.leaf(vec![0.0, 1.0], 1, 2, true);
        let sa = {
            let p = tape.mul_const(xa, &[3.0, 4.0]); // grad norm 5
            tape.sum_all(p)
        };
        let sb = {
            let p = tape.mul_const(xb, &[5.0, 12.0]); // grad norm 13
            tape.sum_all(p)
        };
        let gp =
            gradient_penalty(&mut tape, &[(sa, vec![xa]), (sb, vec![xb])], false).unwrap();
        assert!((tape.value(gp) - 9.0).abs() < 1e-12);
    }
}
