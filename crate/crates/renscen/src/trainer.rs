//! Alternating adversarial training: per outer epoch, `n_d` critic
//! updates on fresh batches, then one forecaster update whose loss is
//! assembled from a Monte-Carlo grid of `n_f` dropout masks crossed with
//! `n_n` latent draws.
//!
//! "Epoch" here is one outer iteration of that schedule, *not* a full
//! pass over the data — batches are drawn uniformly with replacement, so
//! an epoch touches at most `(n_d + 1) * batch` samples. Every random
//! choice (batch membership, critic window offsets, masks, latents,
//! attention subsampling) flows from named substreams of the config
//! seed, so a `(seed, config, data)` triple fully determines the run.

use std::time::Instant;

use thiserror::Error;

use crate::config::{DecayUnit, ModelConfig, RunConfig, TrainConfig, TuningSpace};
use crate::data::window::{SplitIndices, WindowSet, WindowedSample};
use crate::discriminator::{discriminate_batch, init_discriminator};
use crate::embed::discriminator_input;
use crate::error::NumericError;
use crate::forecaster::{
    completed_window, forecast_forward, init_forecaster, sample_mask, DropoutMask, LatentDraw,
};
use crate::metrics::rmse;
use crate::objectives::{
    adversarial_loss_f, auxiliary_loss, forecaster_loss, gradient_penalty, hinge_loss_d,
    remedy_term, variety_loss, LossWeights,
};
use crate::params::ParamStore;
use crate::scenario::sample_scenarios;
use crate::seedstream::{stream, subseed};
use crate::tensor::adam::{clip_global_norm, AdamHyper, AdamState};
use crate::tensor::{Tape, TensorId};

/// Both networks' parameters.
#[derive(Debug, Clone)]
pub struct ModelState {
    pub forecaster: ParamStore,
    pub discriminator: ParamStore,
}

impl ModelState {
    /// Fresh initialization; each tensor draws from its own named
    /// substream, so the two networks never share randomness.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        ModelState {
            forecaster: init_forecaster(cfg, seed),
            discriminator: init_discriminator(cfg, seed),
        }
    }
}

/// Which network an optimizer step updated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Critic,
    Forecaster,
}

impl Phase {
    fn tag(self) -> char {
        match self {
            Phase::Critic => 'D',
            Phase::Forecaster => 'F',
        }
    }
}

/// Telemetry for one optimizer step. Components that do not belong to
/// the step's phase are zero: critic steps fill the hinge/penalty
/// columns, forecaster steps the variety/auxiliary/adversarial/remedy
/// columns. Component values are pre-weight; `loss` is the weighted sum
/// actually differentiated.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub phase: Phase,
    pub loss: f64,
    pub variety: f64,
    pub auxiliary: f64,
    pub adversarial: f64,
    pub remedy: f64,
    pub hinge_fake: f64,
    pub hinge_real: f64,
    pub grad_penalty: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    pub clipped: bool,
    pub wall_ms: f64,
}

/// One validation pass.
#[derive(Debug, Clone, Copy)]
pub struct ValRecord {
    pub epoch: usize,
    pub score: f64,
}

/// Full training telemetry; one [`StepRecord`] per optimizer step with a
/// monotone step index.
#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub validations: Vec<ValRecord>,
    /// Steps on which the global-norm clip fired.
    pub clip_count: usize,
    /// Periodic checkpoint snapshots taken.
    pub checkpoints: usize,
}

impl TrainLog {
    /// Step records as CSV, one row per optimizer step.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "step,epoch,phase,loss,variety,auxiliary,adversarial,remedy,\
             hinge_fake,hinge_real,grad_penalty,grad_norm,clipped,wall_ms\n",
        );
        for r in &self.steps {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.step,
                r.epoch,
                r.phase.tag(),
                r.loss,
                r.variety,
                r.auxiliary,
                r.adversarial,
                r.remedy,
                r.hinge_fake,
                r.hinge_real,
                r.grad_penalty,
                r.grad_norm,
                u8::from(r.clipped),
                r.wall_ms,
            ));
        }
        out
    }

    fn push(&mut self, rec: StepRecord) {
        if rec.clipped {
            self.clip_count += 1;
        }
        self.steps.push(rec);
    }
}

/// What a completed run hands back.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: ModelState,
    pub log: TrainLog,
    /// Parameters at the best validation score, if validation ran.
    pub best: Option<(ValRecord, ModelState)>,
}

/// Training failures. A numeric abort carries the last periodic
/// checkpoint (the initial state if none was taken yet) so the caller
/// can persist something usable.
#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training setup: {msg}")]
    Invalid { msg: String },
    #[error("training aborted at epoch {epoch}: {source}")]
    Aborted {
        epoch: usize,
        #[source]
        source: NumericError,
        last_good: Box<ModelState>,
        log: Box<TrainLog>,
    },
}

/// Uniform draw with replacement from an index pool.
fn draw_batch<R: rand::Rng>(rng: &mut R, pool: &[usize], b: usize) -> Vec<usize> {
    use rand::RngExt;
    (0..b).map(|_| pool[rng.random_range(0..pool.len())]).collect()
}

/// Dropout mask for one draw, or `None` when dropout is disabled.
fn draw_mask(store: &ParamStore, p: f64, seed: u64) -> Option<DropoutMask> {
    if p > 0.0 {
        Some(sample_mask(store, p, seed).expect("validated dropout probability"))
    } else {
        None
    }
}

/// Mean of already-built scalar nodes.
fn mean_of(tape: &mut Tape, ids: &[TensorId]) -> TensorId {
    let mut acc = ids[0];
    for &id in &ids[1..] {
        acc = tape.add(acc, id);
    }
    tape.scale(acc, 1.0 / ids.len() as f64)
}

/// A sample's completed trajectory (known prefix + fresh forecast),
/// computed value-only on a scratch tape.
#[allow(clippy::too_many_arguments)]
fn fake_window_values<R: rand::Rng>(
    cfg: &ModelConfig,
    store: &ParamStore,
    sample: &WindowedSample,
    z: &LatentDraw,
    mask: Option<&DropoutMask>,
    rng: &mut R,
) -> Result<Vec<f64>, NumericError> {
    let mut tape = Tape::new();
    let bound = store.bind_frozen(&mut tape);
    let out = forecast_forward(&mut tape, cfg, store, &bound, sample, z, mask, rng)?;
    let full = completed_window(&mut tape, sample, cfg.n_sites, cfg.n_lag, out.forecast);
    Ok(tape.data(full).to_vec())
}

/// One critic update: hinge loss on a fresh real batch vs. a fresh
/// generated batch, plus the weighted gradient penalty.
#[allow(clippy::too_many_arguments)]
fn critic_step(
    cfg: &ModelConfig,
    tcfg: &TrainConfig,
    w: &LossWeights,
    ws: &WindowSet,
    split: &SplitIndices,
    state: &mut ModelState,
    adam_d: &mut AdamState,
    epoch: usize,
    d_iter: usize,
    step: usize,
) -> Result<StepRecord, NumericError> {
    let t0 = Instant::now();
    let e = epoch as u64;
    let i = d_iter as u64;
    let mut rng_batch = stream(tcfg.seed, "dbatch", &[e, i]);
    let members = draw_batch(&mut rng_batch, &split.train, tcfg.batch);
    let mut rng_sparse = stream(tcfg.seed, "sparse", &[e, i]);

    // generated batch, value-only: the critic step treats it as data
    let mut fake_data = Vec::with_capacity(members.len());
    for (m, &idx) in members.iter().enumerate() {
        let mseed = subseed(tcfg.seed, "dmask", &[e, i, m as u64]);
        let mask = draw_mask(&state.forecaster, cfg.p_dropout, mseed);
        let z = LatentDraw::from_seed(cfg.d_z, subseed(tcfg.seed, "dz", &[e, i, m as u64]));
        fake_data.push(fake_window_values(
            cfg,
            &state.forecaster,
            &ws.samples[idx],
            &z,
            mask.as_ref(),
            &mut rng_sparse,
        )?);
    }
    let real_data: Vec<Vec<f64>> = (0..tcfg.batch)
        .map(|_| {
            let site_major = ws.dis_window(split.dis_node_limit, &mut rng_batch);
            discriminator_input(&site_major, cfg.n_sites, cfg.n_t)
        })
        .collect();

    let mut tape = Tape::new();
    let bound_d = state.discriminator.bind(&mut tape);
    let fakes: Vec<TensorId> =
        fake_data.into_iter().map(|d| tape.constm(d, cfg.n_t, cfg.n_sites)).collect();
    // real windows are differentiable leaves so the penalty can take
    // gradients with respect to the critic's input
    let reals: Vec<TensorId> =
        real_data.into_iter().map(|d| tape.leaf(d, cfg.n_t, cfg.n_sites, true)).collect();

    let fake_scores = discriminate_batch(&mut tape, cfg, &bound_d, &fakes);
    let real_scores = discriminate_batch(&mut tape, cfg, &bound_d, &reals);
    let (l_plus, l_minus) = hinge_loss_d(&mut tape, &fake_scores, &real_scores);

    let items: Vec<(TensorId, Vec<TensorId>)> = if tcfg.r1_on_params {
        real_scores.iter().map(|&s| (s, bound_d.ids().to_vec())).collect()
    } else {
        real_scores.iter().zip(&reals).map(|(&s, &r)| (s, vec![r])).collect()
    };
    let gp = gradient_penalty(&mut tape, &items, tcfg.r1_squared)
        .expect("critic scores depend on their penalty targets by construction");

    let hinge = tape.add(l_plus, l_minus);
    let weighted_gp = tape.scale(gp, w.gp);
    let loss = tape.add(hinge, weighted_gp);
    let loss_v = tape.value(loss);
    if !loss_v.is_finite() {
        return Err(NumericError::NonFiniteLoss { iter: step, context: "critic loss".into() });
    }

    tape.backward(loss);
    let mut grads = state.discriminator.collect_grads(&tape, &bound_d);
    let (grad_norm, clipped) = clip_global_norm(&mut grads, tcfg.grad_clip);
    if !grad_norm.is_finite() {
        return Err(NumericError::NonFiniteLoss { iter: step, context: "critic gradients".into() });
    }
    state
        .discriminator
        .step(adam_d, &grads, AdamHyper::with_lr(tcfg.alpha))
        .expect("gradients are collected in store order");

    Ok(StepRecord {
        step,
        epoch,
        phase: Phase::Critic,
        loss: loss_v,
        variety: 0.0,
        auxiliary: 0.0,
        adversarial: 0.0,
        remedy: 0.0,
        hinge_fake: tape.value(l_plus),
        hinge_real: tape.value(l_minus),
        grad_penalty: tape.value(gp),
        grad_norm,
        clipped,
        wall_ms: t0.elapsed().as_secs_f64() * 1e3,
    })
}

/// One forecaster update: an `n_f x n_n` (mask x latent) grid of
/// forwards per batch member feeds the variety/auxiliary/adversarial
/// terms, and `n_n` deterministic-weight forwards feed the remedy term.
#[allow(clippy::too_many_arguments)]
fn forecaster_step(
    cfg: &ModelConfig,
    tcfg: &TrainConfig,
    w: &LossWeights,
    ws: &WindowSet,
    split: &SplitIndices,
    state: &mut ModelState,
    adam_f: &mut AdamState,
    epoch: usize,
    step: usize,
) -> Result<StepRecord, NumericError> {
    let t0 = Instant::now();
    let e = epoch as u64;
    let mut rng_batch = stream(tcfg.seed, "fbatch", &[e]);
    let members = draw_batch(&mut rng_batch, &split.train, tcfg.batch);
    let mut rng_sparse = stream(tcfg.seed, "sparse", &[e, u64::MAX]);
    let decay_n = match tcfg.decay_unit {
        DecayUnit::Epoch => epoch as f64,
        DecayUnit::Step => step as f64,
    };

    let mut tape = Tape::new();
    let bound_f = state.forecaster.bind(&mut tape);
    let bound_d = state.discriminator.bind_frozen(&mut tape);

    let (mut var_terms, mut aux_terms, mut adv_terms, mut rem_terms) =
        (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (m, &idx) in members.iter().enumerate() {
        let sample = &ws.samples[idx];
        let mu = m as u64;
        let y_data = discriminator_input(&sample.target, cfg.n_sites, cfg.lead());
        let y = tape.constm(y_data, cfg.lead(), cfg.n_sites);

        let latents: Vec<LatentDraw> = (0..tcfg.n_n)
            .map(|n| LatentDraw::from_seed(cfg.d_z, subseed(tcfg.seed, "fz", &[e, mu, n as u64])))
            .collect();

        let mut grid = Vec::with_capacity(tcfg.n_f * tcfg.n_n);
        let mut windows = Vec::with_capacity(tcfg.n_f * tcfg.n_n);
        for f in 0..tcfg.n_f {
            let mseed = subseed(tcfg.seed, "fmask", &[e, mu, f as u64]);
            let mask = draw_mask(&state.forecaster, cfg.p_dropout, mseed);
            for z in &latents {
                let out = forecast_forward(
                    &mut tape,
                    cfg,
                    &state.forecaster,
                    &bound_f,
                    sample,
                    z,
                    mask.as_ref(),
                    &mut rng_sparse,
                )?;
                grid.push(out.forecast);
                windows.push(completed_window(&mut tape, sample, cfg.n_sites, cfg.n_lag, out.forecast));
            }
        }
        let scores = discriminate_batch(&mut tape, cfg, &bound_d, &windows);

        let mut noise_draws = Vec::with_capacity(tcfg.n_n);
        for z in &latents {
            let out = forecast_forward(
                &mut tape,
                cfg,
                &state.forecaster,
                &bound_f,
                sample,
                z,
                None,
                &mut rng_sparse,
            )?;
            noise_draws.push(out.forecast);
        }

        var_terms.push(variety_loss(&mut tape, y, &grid));
        aux_terms.push(auxiliary_loss(&mut tape, y, &grid, decay_n, w.eps_decay));
        adv_terms.push(adversarial_loss_f(&mut tape, &scores));
        rem_terms.push(remedy_term(&mut tape, y, &noise_draws));
    }

    let variety = mean_of(&mut tape, &var_terms);
    let auxiliary = mean_of(&mut tape, &aux_terms);
    let adversarial = mean_of(&mut tape, &adv_terms);
    let remedy = mean_of(&mut tape, &rem_terms);
    let loss = forecaster_loss(&mut tape, variety, auxiliary, adversarial, remedy, w);
    let loss_v = tape.value(loss);
    if !loss_v.is_finite() {
        return Err(NumericError::NonFiniteLoss { iter: step, context: "forecaster loss".into() });
    }

    tape.backward(loss);
    let mut grads = state.forecaster.collect_grads(&tape, &bound_f);
    let (grad_norm, clipped) = clip_global_norm(&mut grads, tcfg.grad_clip);
    if !grad_norm.is_finite() {
        return Err(NumericError::NonFiniteLoss {
            iter: step,
            context: "forecaster gradients".into(),
        });
    }
    state
        .forecaster
        .step(adam_f, &grads, AdamHyper::with_lr(tcfg.alpha))
        .expect("gradients are collected in store order");

    Ok(StepRecord {
        step,
        epoch,
        phase: Phase::Forecaster,
        loss: loss_v,
        variety: tape.value(variety),
        auxiliary: tape.value(auxiliary),
        adversarial: tape.value(adversarial),
        remedy: tape.value(remedy),
        hinge_fake: 0.0,
        hinge_real: 0.0,
        grad_penalty: 0.0,
        grad_norm,
        clipped,
        wall_ms: t0.elapsed().as_secs_f64() * 1e3,
    })
}

/// Mean RMSE of the scenario-grid mean track over the given windows.
/// Fully deterministic under `seed`; every window gets its own substream
/// so scores are comparable across calls.
pub fn validate(
    cfg: &ModelConfig,
    store: &ParamStore,
    ws: &WindowSet,
    indices: &[usize],
    n_f: usize,
    n_n: usize,
    seed: u64,
) -> Result<f64, NumericError> {
    assert!(!indices.is_empty(), "validation needs at least one window");
    let mut total = 0.0;
    for &idx in indices {
        let sample = &ws.samples[idx];
        let set =
            sample_scenarios(cfg, store, sample, n_f, n_n, subseed(seed, "val", &[idx as u64]))?;
        let actual = discriminator_input(&sample.target, cfg.n_sites, cfg.lead());
        total += rmse(&set.mean_track, &actual);
    }
    Ok(total / indices.len() as f64)
}

/// Run the full alternating schedule. Aborts on the first non-finite
/// loss or gradient, handing back the last periodic checkpoint.
pub fn train(
    cfg: &ModelConfig,
    tcfg: &TrainConfig,
    ws: &WindowSet,
    split: &SplitIndices,
    init: ModelState,
) -> Result<TrainOutcome, Box<TrainError>> {
    let invalid = |msg: String| Box::new(TrainError::Invalid { msg });
    cfg.validate().map_err(|m| invalid(m.to_string()))?;
    tcfg.validate().map_err(|m| invalid(m.to_string()))?;
    let w = LossWeights::from_train(tcfg);
    w.validate().map_err(|m| invalid(m.to_string()))?;
    if split.train.is_empty() {
        return Err(invalid("empty training split".into()));
    }
    if split.dis_node_limit < ws.n_t {
        return Err(invalid(format!(
            "critic pool of {} nodes cannot fit an {}-node window",
            split.dis_node_limit, ws.n_t
        )));
    }
    let want_validation = tcfg.validate_every > 0;
    if want_validation && split.val.is_empty() {
        return Err(invalid("validation enabled but the validation split is empty".into()));
    }

    let mut state = init;
    let mut adam_f = AdamState::new(&state.forecaster.lens());
    let mut adam_d = AdamState::new(&state.discriminator.lens());
    let mut log = TrainLog::default();
    let mut last_good = state.clone();
    let mut best: Option<(ValRecord, ModelState)> = None;
    let val_seed = subseed(tcfg.seed, "valfix", &[]);

    let mut step = 0usize;
    for epoch in 0..tcfg.n_ep {
        let abort = |err: NumericError, log: &TrainLog, last_good: &ModelState| {
            Box::new(TrainError::Aborted {
                epoch,
                source: err,
                last_good: Box::new(last_good.clone()),
                log: Box::new(log.clone()),
            })
        };
        for d_iter in 0..tcfg.n_d {
            match critic_step(cfg, tcfg, &w, ws, split, &mut state, &mut adam_d, epoch, d_iter, step) {
                Ok(rec) => log.push(rec),
                Err(e) => return Err(abort(e, &log, &last_good)),
            }
            step += 1;
        }
        match forecaster_step(cfg, tcfg, &w, ws, split, &mut state, &mut adam_f, epoch, step) {
            Ok(rec) => log.push(rec),
            Err(e) => return Err(abort(e, &log, &last_good)),
        }
        step += 1;

        if want_validation && (epoch + 1).is_multiple_of(tcfg.validate_every) {
            let score =
                validate(cfg, &state.forecaster, ws, &split.val, tcfg.n_f, tcfg.n_n, val_seed)
                    .map_err(|e| abort(e, &log, &last_good))?;
            let rec = ValRecord { epoch, score };
            log.validations.push(rec);
            if best.as_ref().is_none_or(|(b, _)| score < b.score) {
                best = Some((rec, state.clone()));
            }
        }
        if tcfg.checkpoint_every > 0 && (epoch + 1).is_multiple_of(tcfg.checkpoint_every) {
            last_good = state.clone();
            log.checkpoints += 1;
        }
    }

    Ok(TrainOutcome { state, log, best })
}

/// One random-search trial: the sampled configuration and its
/// validation score (`inf` when the trial aborted on a numeric failure).
#[derive(Debug, Clone)]
pub struct TrialRecord {
    pub trial: usize,
    pub run: RunConfig,
    pub score: f64,
}

/// Random hyperparameter search: sample `space.trials` configurations,
/// train each for `space.epochs_per_trial` epochs, and return the one
/// with the best validation score together with the full trial log.
/// Window geometry and model width stay fixed; only the knobs in
/// [`TuningSpace`] vary.
pub fn random_search(
    cfg: &ModelConfig,
    base: &TrainConfig,
    space: &TuningSpace,
    ws: &WindowSet,
    split: &SplitIndices,
    seed: u64,
) -> Result<(RunConfig, Vec<TrialRecord>), Box<TrainError>> {
    use rand::RngExt;
    if space.trials == 0 {
        return Err(Box::new(TrainError::Invalid { msg: "search budget must be >= 1".into() }));
    }
    let sample_range = |rng: &mut rand_chacha::ChaCha8Rng, r: &crate::config::Range| {
        if r.lo == r.hi {
            r.lo
        } else {
            rng.random_range(r.lo..r.hi)
        }
    };
    let mut rng = stream(seed, "tune", &[]);
    let mut records: Vec<TrialRecord> = Vec::with_capacity(space.trials);
    for trial in 0..space.trials {
        // log-uniform for the rate, uniform for everything else; a
        // degenerate range skips the transform so the point survives exactly
        let alpha = if space.alpha.lo == space.alpha.hi {
            space.alpha.lo
        } else {
            rng.random_range(space.alpha.lo.ln()..space.alpha.hi.ln()).exp()
        };
        let mut model = cfg.clone();
        model.p_dropout = sample_range(&mut rng, &space.p_dropout);
        let tcfg = TrainConfig {
            n_ep: space.epochs_per_trial,
            alpha,
            batch: space.batch[rng.random_range(0..space.batch.len())],
            n_d: rng.random_range(space.n_d.0..=space.n_d.1),
            n_f: rng.random_range(space.n_f.0..=space.n_f.1),
            n_n: rng.random_range(space.n_n.0..=space.n_n.1),
            lambda_gp: sample_range(&mut rng, &space.lambda_gp),
            seed: subseed(seed, "trial", &[trial as u64]),
            ..base.clone()
        };

        let init = ModelState::init(&model, tcfg.seed);
        let score = match train(&model, &tcfg, ws, split, init) {
            Ok(outcome) => validate(
                &model,
                &outcome.state.forecaster,
                ws,
                &split.val,
                tcfg.n_f,
                tcfg.n_n,
                subseed(seed, "tscore", &[trial as u64]),
            )
            .unwrap_or(f64::INFINITY),
            Err(e) => match *e {
                TrainError::Invalid { .. } => return Err(e),
                // a diverged trial is a bad configuration, not a search failure
                TrainError::Aborted { .. } => f64::INFINITY,
            },
        };
        records.push(TrialRecord {
            trial,
            run: RunConfig { model, train: tcfg, tuning: None },
            score,
        });
    }

    let best = records
        .iter()
        .filter(|r| r.score.is_finite())
        .min_by(|a, b| a.score.partial_cmp(&b.score).unwrap())
        .ok_or_else(|| Box::new(TrainError::Invalid { msg: "every trial diverged".into() }))?;
    Ok((best.run.clone(), records.clone()))
}
