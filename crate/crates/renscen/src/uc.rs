//! Toy two-stage stochastic unit commitment driven by scenario sets.
//!
//! A single-bus system: first-stage on/off schedules for a handful of
//! thermal units are chosen by exhaustive enumeration against the scenario
//! set's dispatch costs, then the fixed commitment is re-dispatched on the
//! observed renewable path to measure how much the scenario set's expected
//! cost deviates from reality. No network, ramping, or min-up/down
//! constraints — the enumeration stays exact and the cost-deviation
//! semantics are preserved.
//!
//! Second-stage dispatch is a one-hour linear program solved greedily:
//! renewables serve load first (surplus curtails at the curtailment
//! penalty), committed units fill the rest in ascending marginal-cost
//! order within their limits, and any residual imbalance is priced at the
//! shedding penalty. For this linear structure the merit order is provably
//! optimal; the tests check it against an LP vertex-enumeration oracle.

use serde::{Deserialize, Serialize};

use crate::error::UcError;

/// Load shedding penalty, $/MWh.
pub const SHED_PENALTY: f64 = 1000.0;
/// Renewable curtailment penalty, $/MWh.
pub const CURTAIL_PENALTY: f64 = 40.0;
/// Enumeration cap: schedules are capped at `2^MAX_ENUM_BITS`.
pub const MAX_ENUM_BITS: usize = 20;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThermalUnit {
    /// Minimum stable output while committed, MW.
    pub p_min: f64,
    /// Maximum output, MW.
    pub p_max: f64,
    /// Variable cost, $/MWh.
    pub marginal_cost: f64,
    /// Hourly fixed cost while committed, $/h.
    pub no_load_cost: f64,
    /// One-off cost per off-to-on transition, $.
    pub startup_cost: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Penalties {
    pub shed: f64,
    pub curtail: f64,
}

impl Default for Penalties {
    fn default() -> Self {
        Penalties { shed: SHED_PENALTY, curtail: CURTAIL_PENALTY }
    }
}

/// One day-ahead commitment problem: units, hourly loads, and the
/// scenario set's renewable paths.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UcInstance {
    pub units: Vec<ThermalUnit>,
    /// Hours in the horizon.
    pub horizon: usize,
    /// MW per hour, length `horizon`.
    pub load: Vec<f64>,
    /// Renewable MW per hour per scenario, each length `horizon`.
    pub scenarios: Vec<Vec<f64>>,
    pub penalties: Penalties,
    /// Hours per commitment block: units hold one on/off state per block,
    /// so enumeration covers `2^(units x blocks)` schedules.
    pub block_hours: usize,
}

impl UcInstance {
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must fail validation
    pub fn validate(&self) -> Result<(), UcError> {
        let invalid = |msg: String| Err(UcError::Invalid { msg });
        if self.units.is_empty() {
            return invalid("at least one thermal unit is required".into());
        }
        if self.horizon == 0 || self.block_hours == 0 {
            return invalid("horizon and block_hours must be positive".into());
        }
        if self.load.len() != self.horizon {
            return invalid(format!(
                "load has {} hours, horizon is {}",
                self.load.len(),
                self.horizon
            ));
        }
        for (i, u) in self.units.iter().enumerate() {
            if !(u.p_min >= 0.0 && u.p_max >= u.p_min) {
                return invalid(format!("unit {i}: need 0 <= p_min <= p_max"));
            }
            if !(u.marginal_cost >= 0.0 && u.no_load_cost >= 0.0 && u.startup_cost >= 0.0) {
                return invalid(format!("unit {i}: costs must be non-negative"));
            }
        }
        if self.load.iter().any(|&l| !(l >= 0.0)) {
            return invalid("loads must be non-negative".into());
        }
        if self.scenarios.is_empty() {
            return invalid("at least one scenario is required".into());
        }
        for (s, path) in self.scenarios.iter().enumerate() {
            if path.len() != self.horizon {
                return invalid(format!("scenario {s} has {} hours", path.len()));
            }
            if path.iter().any(|&r| !(r >= 0.0)) {
                return invalid(format!("scenario {s} has negative renewables"));
            }
        }
        let max_marginal =
            self.units.iter().map(|u| u.marginal_cost).fold(f64::NEG_INFINITY, f64::max);
        if !(self.penalties.shed > max_marginal && self.penalties.curtail > max_marginal) {
            return invalid(format!(
                "penalties (shed {}, curtail {}) must exceed the highest marginal cost {}",
                self.penalties.shed, self.penalties.curtail, max_marginal
            ));
        }
        Ok(())
    }

    /// Commitment blocks covering the horizon (last may be shorter).
    pub fn blocks(&self) -> usize {
        self.horizon.div_ceil(self.block_hours)
    }
}

/// One hour's least-cost dispatch under a fixed commitment.
///
/// `shed` is signed: positive is unserved load, negative is surplus
/// thermal output a minimum-generation bind forces onto the bus; both are
/// priced at the shedding penalty. The balance identity
/// `thermal + renewable_used + shed = load` holds exactly by construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DispatchResult {
    /// MW per unit; zero for uncommitted units.
    pub output: Vec<f64>,
    pub renewable_used: f64,
    pub shed: f64,
    pub curtail: f64,
    /// Variable cost: marginal energy plus both penalties. Commitment
    /// fixed costs are accounted at the schedule level.
    pub cost: f64,
}

/// Merit-order dispatch of one hour: renewables first, committed units by
/// ascending marginal cost within `[p_min, p_max]`, imbalance shed.
pub fn dispatch(
    committed: &[bool],
    load: f64,
    renewable: f64,
    units: &[ThermalUnit],
    pen: &Penalties,
) -> DispatchResult {
    assert_eq!(committed.len(), units.len(), "one flag per unit");
    let p_min_sum: f64 =
        units.iter().zip(committed).filter(|(_, &c)| c).map(|(u, _)| u.p_min).sum();

    // Every MWh of renewable used is free; alternatives (thermal energy,
    // shedding, dumping) all cost more, so use as much as the committed
    // minimum generation leaves room for.
    let renewable_used = renewable.min((load - p_min_sum).max(0.0));
    let curtail = renewable - renewable_used;
    let residual = load - renewable_used;

    // Fill residual load by merit order above the committed minimums.
    let mut output = vec![0.0; units.len()];
    for (i, u) in units.iter().enumerate() {
        if committed[i] {
            output[i] = u.p_min;
        }
    }
    let mut remaining = (residual - p_min_sum).max(0.0);
    let mut order: Vec<usize> = (0..units.len()).filter(|&i| committed[i]).collect();
    order.sort_by(|&a, &b| {
        units[a]
            .marginal_cost
            .partial_cmp(&units[b].marginal_cost)
            .unwrap()
            .then(a.cmp(&b))
    });
    for i in order {
        let headroom = units[i].p_max - units[i].p_min;
        let take = remaining.min(headroom);
        output[i] += take;
        remaining -= take;
    }

    let thermal: f64 = output.iter().sum();
    // Exact balance residual: unserved load (positive) or forced surplus
    // (negative, when committed minimums exceed the residual load).
    let shed = load - thermal - renewable_used;

    let energy_cost: f64 =
        output.iter().zip(units).map(|(&p, u)| p * u.marginal_cost).sum();
    let cost = energy_cost + pen.shed * shed.abs() + pen.curtail * curtail;
    DispatchResult { output, renewable_used, shed, curtail, cost }
}

/// Dispatch outcomes and cost of one scenario under a fixed commitment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioOutcome {
    /// Variable dispatch cost summed over the horizon (no fixed costs).
    pub dispatch_cost: f64,
    /// Unserved energy over the horizon, MWh (positive part of shed).
    pub shed_mwh: f64,
    /// Curtailed renewable energy over the horizon, MWh.
    pub curtail_mwh: f64,
    pub hourly: Vec<DispatchResult>,
}

/// Run one renewable path against a fixed commitment.
pub fn run_schedule(
    commitment: &[Vec<bool>],
    load: &[f64],
    renewables: &[f64],
    units: &[ThermalUnit],
    pen: &Penalties,
) -> ScenarioOutcome {
    let horizon = load.len();
    assert_eq!(renewables.len(), horizon, "one renewable value per hour");
    let mut hourly = Vec::with_capacity(horizon);
    let (mut cost, mut shed_mwh, mut curtail_mwh) = (0.0, 0.0, 0.0);
    for t in 0..horizon {
        let committed: Vec<bool> = commitment.iter().map(|row| row[t]).collect();
        let d = dispatch(&committed, load[t], renewables[t], units, pen);
        cost += d.cost;
        shed_mwh += d.shed.max(0.0);
        curtail_mwh += d.curtail;
        hourly.push(d);
    }
    ScenarioOutcome { dispatch_cost: cost, shed_mwh, curtail_mwh, hourly }
}

/// Fixed cost of a commitment matrix: no-load per committed hour plus
/// startup on every off-to-on transition (initial state: off).
pub fn fixed_cost(commitment: &[Vec<bool>], units: &[ThermalUnit]) -> f64 {
    let mut cost = 0.0;
    for (row, u) in commitment.iter().zip(units) {
        let mut prev = false;
        for &on in row {
            if on {
                cost += u.no_load_cost;
                if !prev {
                    cost += u.startup_cost;
                }
            }
            prev = on;
        }
    }
    cost
}

/// A first-stage decision with its scenario-stage outcomes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UcDecision {
    /// On/off per unit per hour.
    pub commitment: Vec<Vec<bool>>,
    /// Mean scenario dispatch cost plus commitment fixed costs.
    pub expected_cost: f64,
    pub fixed_cost: f64,
    pub per_scenario: Vec<ScenarioOutcome>,
    /// Filled by re-dispatch against the observed path.
    pub actual_cost: Option<f64>,
}

fn schedule_commitment(
    code: u64,
    units: usize,
    blocks: usize,
    block_hours: usize,
    horizon: usize,
) -> Vec<Vec<bool>> {
    (0..units)
        .map(|u| {
            (0..horizon)
                .map(|t| {
                    let b = t / block_hours;
                    code >> (u * blocks + b) & 1 == 1
                })
                .collect()
        })
        .collect()
}

/// Exhaustively enumerate block-granular commitment schedules and keep
/// the one with minimal expected cost (ties: smallest schedule code).
pub fn solve_two_stage(instance: &UcInstance) -> Result<UcDecision, UcError> {
    instance.validate()?;
    let blocks = instance.blocks();
    let bits = instance.units.len() * blocks;
    if bits > MAX_ENUM_BITS {
        return Err(UcError::EnumerationBound {
            units: instance.units.len(),
            blocks,
            bits,
            max_bits: MAX_ENUM_BITS,
        });
    }

    let n_scen = instance.scenarios.len() as f64;
    let mut best: Option<(f64, u64)> = None;
    for code in 0..(1u64 << bits) {
        let commitment = schedule_commitment(
            code,
            instance.units.len(),
            blocks,
            instance.block_hours,
            instance.horizon,
        );
        let fixed = fixed_cost(&commitment, &instance.units);
        let mut mean_dispatch = 0.0;
        for path in &instance.scenarios {
            mean_dispatch += run_schedule(
                &commitment,
                &instance.load,
                path,
                &instance.units,
                &instance.penalties,
            )
            .dispatch_cost;
        }
        let expected = fixed + mean_dispatch / n_scen;
        if best.is_none_or(|(c, _)| expected < c) {
            best = Some((expected, code));
        }
    }

    let (expected_cost, code) = best.expect("at least the all-off schedule was scored");
    let commitment = schedule_commitment(
        code,
        instance.units.len(),
        blocks,
        instance.block_hours,
        instance.horizon,
    );
    let per_scenario: Vec<ScenarioOutcome> = instance
        .scenarios
        .iter()
        .map(|path| {
            run_schedule(&commitment, &instance.load, path, &instance.units, &instance.penalties)
        })
        .collect();
    let fixed = fixed_cost(&commitment, &instance.units);
    Ok(UcDecision {
        commitment,
        expected_cost,
        fixed_cost: fixed,
        per_scenario,
        actual_cost: None,
    })
}

/// Re-dispatch a fixed decision on the observed renewable path and fill
/// in its actual cost.
pub fn redispatch_actual(
    instance: &UcInstance,
    decision: &mut UcDecision,
    observed: &[f64],
) -> ScenarioOutcome {
    let outcome = run_schedule(
        &decision.commitment,
        &instance.load,
        observed,
        &instance.units,
        &instance.penalties,
    );
    decision.actual_cost = Some(decision.fixed_cost + outcome.dispatch_cost);
    outcome
}

/// One day of the rolling evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DayOutcome {
    pub expected_cost: f64,
    pub actual_cost: f64,
    /// `|expected - actual|`, the forecast-quality axis.
    pub deviation: f64,
    /// Unserved energy in the real-time re-dispatch, MWh.
    pub shed_mwh: f64,
    /// Curtailed energy in the real-time re-dispatch, MWh.
    pub curtail_mwh: f64,
}

/// Aggregates over a rolling multi-day run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RollingReport {
    pub days: Vec<DayOutcome>,
    pub total_expected: f64,
    pub total_actual: f64,
    pub mean_abs_deviation: f64,
    pub total_shed_mwh: f64,
    pub total_curtail_mwh: f64,
}

/// Day-by-day: solve on scenarios, fix the commitment, re-dispatch on the
/// observed path, and record cost deviation and violation totals.
pub fn rolling_evaluation(
    instances: &[UcInstance],
    observations: &[Vec<f64>],
) -> Result<RollingReport, UcError> {
    if instances.len() != observations.len() {
        return Err(UcError::Invalid {
            msg: format!(
                "{} instances vs {} observation days",
                instances.len(),
                observations.len()
            ),
        });
    }
    if instances.is_empty() {
        return Err(UcError::Invalid { msg: "rolling evaluation needs at least one day".into() });
    }
    let mut days = Vec::with_capacity(instances.len());
    for (inst, obs) in instances.iter().zip(observations) {
        if obs.len() != inst.horizon {
            return Err(UcError::Invalid {
                msg: format!("observed path has {} hours, horizon is {}", obs.len(), inst.horizon),
            });
        }
        let mut decision = solve_two_stage(inst)?;
        let outcome = redispatch_actual(inst, &mut decision, obs);
        let actual = decision.actual_cost.expect("set by redispatch");
        days.push(DayOutcome {
            expected_cost: decision.expected_cost,
            actual_cost: actual,
            deviation: (decision.expected_cost - actual).abs(),
            shed_mwh: outcome.shed_mwh,
            curtail_mwh: outcome.curtail_mwh,
        });
    }
    let n = days.len() as f64;
    Ok(RollingReport {
        total_expected: days.iter().map(|d| d.expected_cost).sum(),
        total_actual: days.iter().map(|d| d.actual_cost).sum(),
        mean_abs_deviation: days.iter().map(|d| d.deviation).sum::<f64>() / n,
        total_shed_mwh: days.iter().map(|d| d.shed_mwh).sum(),
        total_curtail_mwh: days.iter().map(|d| d.curtail_mwh).sum(),
        days,
    })
}

/// Out-of-sample stress figures for a fixed decision.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OosReport {
    pub average_cost: f64,
    pub worst_cost: f64,
    pub total_shed_mwh: f64,
    pub total_curtail_mwh: f64,
    pub per_realization_cost: Vec<f64>,
}

/// Re-dispatch a fixed decision over Monte-Carlo renewable realizations.
pub fn out_of_sample_test(
    instance: &UcInstance,
    decision: &UcDecision,
    realizations: &[Vec<f64>],
) -> Result<OosReport, UcError> {
    if realizations.is_empty() {
        return Err(UcError::Invalid { msg: "no realizations supplied".into() });
    }
    let mut costs = Vec::with_capacity(realizations.len());
    let (mut shed, mut curtail) = (0.0, 0.0);
    for path in realizations {
        if path.len() != instance.horizon {
            return Err(UcError::Invalid {
                msg: format!("realization has {} hours, horizon is {}", path.len(), instance.horizon),
            });
        }
        let o = run_schedule(
            &decision.commitment,
            &instance.load,
            path,
            &instance.units,
            &instance.penalties,
        );
        costs.push(decision.fixed_cost + o.dispatch_cost);
        shed += o.shed_mwh;
        curtail += o.curtail_mwh;
    }
    let average = costs.iter().sum::<f64>() / costs.len() as f64;
    let worst = costs.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    Ok(OosReport {
        average_cost: average,
        worst_cost: worst,
        total_shed_mwh: shed,
        total_curtail_mwh: curtail,
        per_realization_cost: costs,
    })
}
