//! Forecast verification: deterministic errors and probabilistic scores
//! for ensembles of sampled trajectories.
//!
//! Every score works on one or more [`ScenarioDay`] units — an ensemble of
//! flat `lead x n_sites` trajectories plus the matching observed track.
//! Averages over a test horizon treat each (day, node) cell equally, and
//! per-day figures are exposed alongside the aggregate report so rolling
//! evaluations can be dumped to CSV.
//!
//! Conventions frozen by the oracle tests:
//! - Empirical quantiles are order statistics with linear interpolation
//!   (index `(n-1)q`, the "type 7" rule).
//! - CRPS uses the closed-form ensemble kernel
//!   `mean|X - y| - 0.5 mean|X - X'|` over all `n^2` ordered pairs, which
//!   equals the squared-CDF-difference integral exactly.
//! - The variogram score's `k`-distance between two site sequences is the
//!   vector `k`-norm of their difference (`k = 1`: absolute sum, `k = 2`:
//!   Euclidean).

use serde::{Deserialize, Serialize};

use crate::scenario::ScenarioSet;

/// One evaluation unit: an ensemble of trajectories over a single day
/// plus the observed track, all flat `lead x n_sites` row-major.
#[derive(Debug, Clone)]
pub struct ScenarioDay {
    pub tracks: Vec<Vec<f64>>,
    pub actual: Vec<f64>,
    pub n_sites: usize,
}

impl ScenarioDay {
    pub fn new(tracks: Vec<Vec<f64>>, actual: Vec<f64>, n_sites: usize) -> Result<Self, String> {
        if tracks.is_empty() {
            return Err("ensemble must hold at least one trajectory".into());
        }
        if actual.is_empty() {
            return Err("observed track must be non-empty".into());
        }
        if n_sites == 0 || !actual.len().is_multiple_of(n_sites) {
            return Err(format!(
                "track length {} is not a whole number of {n_sites}-site nodes",
                actual.len()
            ));
        }
        if tracks.iter().any(|t| t.len() != actual.len()) {
            return Err("every trajectory must match the observed track's shape".into());
        }
        Ok(ScenarioDay { tracks, actual, n_sites })
    }

    /// Pair a sampled scenario set with the day's observed track.
    pub fn from_set(set: &ScenarioSet, actual: Vec<f64>) -> Result<Self, String> {
        Self::new(set.scenarios.clone(), actual, set.n_sites)
    }

    pub fn cells(&self) -> usize {
        self.actual.len()
    }

    /// Ensemble values at one flat cell index, across all trajectories.
    pub fn cell_values(&self, c: usize) -> Vec<f64> {
        self.tracks.iter().map(|t| t[c]).collect()
    }

    /// Per-cell ensemble mean, the deterministic track scored by RMSE.
    pub fn mean_track(&self) -> Vec<f64> {
        let n = self.tracks.len() as f64;
        let mut m = vec![0.0; self.cells()];
        for t in &self.tracks {
            for (acc, &v) in m.iter_mut().zip(t) {
                *acc += v;
            }
        }
        for v in m.iter_mut() {
            *v /= n;
        }
        m
    }

    /// One site's sequence out of a flat track.
    fn site_series(track: &[f64], n_sites: usize, site: usize) -> Vec<f64> {
        track.iter().skip(site).step_by(n_sites).copied().collect()
    }
}

/// Grids and levels the probabilistic scores are evaluated on.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreOptions {
    /// Quantile levels for the pinball score, each in (0, 1).
    pub quantile_grid: Vec<f64>,
    /// Nominal central coverage levels for APD, each in (0, 1).
    pub coverage_grid: Vec<f64>,
    /// Exceedance thresholds for the Brier score (deciles of capacity
    /// for capacity-normalized power).
    pub brier_thresholds: Vec<f64>,
    /// Winkler interval miss level: the central (1 - alpha) interval.
    pub winkler_alpha: f64,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        let deciles: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
        ScoreOptions {
            quantile_grid: deciles.clone(),
            coverage_grid: deciles.clone(),
            brier_thresholds: deciles,
            winkler_alpha: 0.1,
        }
    }
}

impl ScoreOptions {
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must fail validation
    pub fn validate(&self) -> Result<(), String> {
        for (name, grid) in
            [("quantile_grid", &self.quantile_grid), ("coverage_grid", &self.coverage_grid)]
        {
            if grid.is_empty() {
                return Err(format!("{name} must be non-empty"));
            }
            if grid.iter().any(|&q| !(q > 0.0 && q < 1.0)) {
                return Err(format!("{name} levels must lie in (0,1)"));
            }
        }
        if self.brier_thresholds.is_empty() {
            return Err("brier_thresholds must be non-empty".into());
        }
        if !(self.winkler_alpha > 0.0 && self.winkler_alpha < 1.0) {
            return Err(format!("winkler_alpha must lie in (0,1), got {}", self.winkler_alpha));
        }
        Ok(())
    }
}

/// The aggregate verification report over a test horizon.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rmse_avg: f64,
    pub s_score: f64,
    pub pinball_avg: f64,
    pub brier_avg: f64,
    pub crps_avg: f64,
    pub ss_crps: f64,
    pub energy: f64,
    pub winkler: f64,
    pub variogram_k1: f64,
    pub variogram_k2: f64,
    pub apd_pct: f64,
}

impl MetricsReport {
    /// Defensive range checks on the published figures.
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must fail validation
    pub fn validate(&self) -> Result<(), String> {
        let non_neg = [
            ("rmse_avg", self.rmse_avg),
            ("s_score", self.s_score),
            ("pinball_avg", self.pinball_avg),
            ("brier_avg", self.brier_avg),
            ("crps_avg", self.crps_avg),
            ("energy", self.energy),
            ("winkler", self.winkler),
            ("variogram_k1", self.variogram_k1),
            ("variogram_k2", self.variogram_k2),
        ];
        for (name, v) in non_neg {
            if !(v >= 0.0) {
                return Err(format!("{name} must be non-negative, got {v}"));
            }
        }
        if !(self.ss_crps <= 1.0) {
            return Err(format!("ss_crps cannot exceed 1, got {}", self.ss_crps));
        }
        if !(0.0..=100.0).contains(&self.apd_pct) {
            return Err(format!("apd_pct must lie in [0,100], got {}", self.apd_pct));
        }
        Ok(())
    }
}

/// Per-day figures behind the aggregate report, for rolling CSV dumps.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DayMetrics {
    pub rmse: f64,
    pub mae: f64,
    pub s_score: f64,
    pub crps: f64,
    pub pinball: f64,
    pub brier: f64,
    pub energy: f64,
    pub winkler: f64,
    pub variogram_k1: f64,
    pub variogram_k2: f64,
}

/// Empirical quantile by linear interpolation of order statistics
/// (index `(n-1) q`). `sorted` must be ascending and non-empty.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    assert!((0.0..=1.0).contains(&q), "quantile level {q} outside [0,1]");
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Closed-form ensemble CRPS against one observation:
/// `mean|X - y| - 0.5 mean|X - X'|` over all ordered pairs.
pub fn crps_ensemble(samples: &[f64], y: f64) -> Result<f64, String> {
    if samples.is_empty() {
        return Err("CRPS of an empty ensemble".into());
    }
    let n = samples.len() as f64;
    let dev: f64 = samples.iter().map(|&x| (x - y).abs()).sum::<f64>() / n;
    let mut pairs = 0.0;
    for &a in samples {
        for &b in samples {
            pairs += (a - b).abs();
        }
    }
    Ok(dev - 0.5 * pairs / (n * n))
}

/// Mean ensemble CRPS over every (day, node) cell of the horizon.
pub fn crps_avg(days: &[ScenarioDay]) -> Result<f64, String> {
    if days.is_empty() {
        return Err("CRPS over an empty horizon".into());
    }
    let mut acc = 0.0;
    let mut cells = 0usize;
    for day in days {
        for c in 0..day.cells() {
            acc += crps_ensemble(&day.cell_values(c), day.actual[c])?;
        }
        cells += day.cells();
    }
    Ok(acc / cells as f64)
}

/// CRPS skill against the point forecast's mean absolute error:
/// `1 - crps / mae`. Positive when the ensemble beats the point forecast.
#[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must fail the gate
pub fn ss_crps(crps: f64, mae_point_forecast: f64) -> Result<f64, String> {
    if !(mae_point_forecast > 0.0) {
        return Err(format!(
            "CRPS skill needs a positive point-forecast MAE, got {mae_point_forecast}"
        ));
    }
    Ok(1.0 - crps / mae_point_forecast)
}

/// Energy score of one day's ensemble: first term pulls trajectories
/// toward the observation, second rewards internal spread.
pub fn energy_score(tracks: &[Vec<f64>], y: &[f64]) -> f64 {
    assert!(!tracks.is_empty(), "energy score of an empty ensemble");
    let n = tracks.len() as f64;
    let l2 = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
    };
    let pull: f64 = tracks.iter().map(|t| l2(t, y)).sum::<f64>() / n;
    let mut spread = 0.0;
    for a in tracks {
        for b in tracks {
            spread += l2(a, b);
        }
    }
    pull - spread / (2.0 * n * n)
}

/// Winkler interval score at miss level `alpha`, averaged over nodes:
/// interval width plus `2/alpha` times the distance of any miss.
pub fn winkler_score(day: &ScenarioDay, alpha: f64) -> f64 {
    assert!(day.tracks.len() >= 2, "interval needs at least two members");
    assert!(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0,1)");
    let mut acc = 0.0;
    for c in 0..day.cells() {
        let mut v = day.cell_values(c);
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let l = quantile_sorted(&v, alpha / 2.0);
        let u = quantile_sorted(&v, 1.0 - alpha / 2.0);
        let y = day.actual[c];
        acc += (u - l) + (2.0 / alpha) * ((l - y).max(0.0) + (y - u).max(0.0));
    }
    acc / day.cells() as f64
}

/// Pinball loss of the ensemble's empirical quantiles, averaged over the
/// level grid and nodes.
pub fn pinball_avg(day: &ScenarioDay, grid: &[f64]) -> f64 {
    assert!(!grid.is_empty(), "pinball needs at least one level");
    let mut acc = 0.0;
    for c in 0..day.cells() {
        let mut v = day.cell_values(c);
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let y = day.actual[c];
        for &q in grid {
            let pred = quantile_sorted(&v, q);
            acc += if y >= pred { q * (y - pred) } else { (1.0 - q) * (pred - y) };
        }
    }
    acc / (day.cells() * grid.len()) as f64
}

/// Brier score of exceedance events, averaged over thresholds and nodes.
pub fn brier_avg(day: &ScenarioDay, thresholds: &[f64]) -> f64 {
    assert!(!thresholds.is_empty(), "Brier needs at least one threshold");
    let n = day.tracks.len() as f64;
    let mut acc = 0.0;
    for c in 0..day.cells() {
        let v = day.cell_values(c);
        let y = day.actual[c];
        for &tau in thresholds {
            let p = v.iter().filter(|&&x| x > tau).count() as f64 / n;
            let event = if y > tau { 1.0 } else { 0.0 };
            acc += (p - event) * (p - event);
        }
    }
    acc / (day.cells() * thresholds.len()) as f64
}

/// Spatial variogram score of order `k`: for every site pair, how far the
/// ensemble-average `k`-distance drifts from the observed one.
pub fn variogram_score(
    y_sites: &[Vec<f64>],
    scenario_sites: &[Vec<Vec<f64>>],
    k: u32,
) -> Result<f64, String> {
    if y_sites.is_empty() || scenario_sites.is_empty() {
        return Err("variogram needs at least one site and one scenario".into());
    }
    let n_sites = y_sites.len();
    if scenario_sites.iter().any(|s| s.len() != n_sites) {
        return Err("every scenario must cover the same sites as the actual field".into());
    }
    assert!(k == 1 || k == 2, "variogram order must be 1 or 2");
    let dist = |a: &[f64], b: &[f64]| -> f64 {
        match k {
            1 => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
            _ => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
        }
    };
    let n_s = scenario_sites.len() as f64;
    let mut acc = 0.0;
    for i in 0..n_sites {
        for j in 0..n_sites {
            let observed = dist(&y_sites[i], &y_sites[j]);
            let ensemble: f64 =
                scenario_sites.iter().map(|s| dist(&s[i], &s[j])).sum::<f64>() / n_s;
            acc += (observed - ensemble).abs();
        }
    }
    Ok(acc)
}

/// Split one day into per-site sequences and score its spatial variogram.
pub fn variogram_day(day: &ScenarioDay, k: u32) -> Result<f64, String> {
    let per_site = |track: &[f64]| -> Vec<Vec<f64>> {
        (0..day.n_sites).map(|s| ScenarioDay::site_series(track, day.n_sites, s)).collect()
    };
    let y_sites = per_site(&day.actual);
    let scen_sites: Vec<Vec<Vec<f64>>> = day.tracks.iter().map(|t| per_site(t)).collect();
    variogram_score(&y_sites, &scen_sites, k)
}

/// Root-mean-square error of a deterministic track.
pub fn rmse(track: &[f64], y: &[f64]) -> f64 {
    assert_eq!(track.len(), y.len(), "aligned shapes required");
    let ss: f64 = track.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    (ss / y.len() as f64).sqrt()
}

/// Mean absolute error of a deterministic track.
pub fn mae(track: &[f64], y: &[f64]) -> f64 {
    assert_eq!(track.len(), y.len(), "aligned shapes required");
    track.iter().zip(y).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64
}

/// Competition-style deterministic score: `(RMSE + MAE) / 2`.
pub fn s_score(track: &[f64], y: &[f64]) -> f64 {
    (rmse(track, y) + mae(track, y)) / 2.0
}

/// Average proportion deviation: how far empirical central-interval
/// coverage drifts from nominal, in percent, pooled over all cells.
pub fn apd(days: &[ScenarioDay], coverage_grid: &[f64]) -> f64 {
    assert!(!coverage_grid.is_empty(), "APD needs at least one coverage level");
    assert!(!days.is_empty(), "APD over an empty horizon");
    let mut acc = 0.0;
    for &cov in coverage_grid {
        let (mut hits, mut total) = (0usize, 0usize);
        for day in days {
            for c in 0..day.cells() {
                let mut v = day.cell_values(c);
                v.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let lo = quantile_sorted(&v, (1.0 - cov) / 2.0);
                let hi = quantile_sorted(&v, (1.0 + cov) / 2.0);
                let y = day.actual[c];
                if y >= lo && y <= hi {
                    hits += 1;
                }
                total += 1;
            }
        }
        acc += (hits as f64 / total as f64 - cov).abs();
    }
    acc / coverage_grid.len() as f64 * 100.0
}

/// All per-day figures for one evaluation unit.
pub fn day_metrics(day: &ScenarioDay, opts: &ScoreOptions) -> Result<DayMetrics, String> {
    let mean = day.mean_track();
    let mut crps_acc = 0.0;
    for c in 0..day.cells() {
        crps_acc += crps_ensemble(&day.cell_values(c), day.actual[c])?;
    }
    Ok(DayMetrics {
        rmse: rmse(&mean, &day.actual),
        mae: mae(&mean, &day.actual),
        s_score: s_score(&mean, &day.actual),
        crps: crps_acc / day.cells() as f64,
        pinball: pinball_avg(day, &opts.quantile_grid),
        brier: brier_avg(day, &opts.brier_thresholds),
        energy: energy_score(&day.tracks, &day.actual),
        winkler: winkler_score(day, opts.winkler_alpha),
        variogram_k1: variogram_day(day, 1)?,
        variogram_k2: variogram_day(day, 2)?,
    })
}

/// Score a whole test horizon: per-day figures plus the aggregate report.
///
/// `point_forecasts` supplies the reference deterministic tracks whose
/// MAE anchors the CRPS skill score, one per day.
pub fn metrics_report(
    days: &[ScenarioDay],
    point_forecasts: &[Vec<f64>],
    opts: &ScoreOptions,
) -> Result<(MetricsReport, Vec<DayMetrics>), String> {
    opts.validate()?;
    if days.is_empty() {
        return Err("evaluation horizon is empty".into());
    }
    if point_forecasts.len() != days.len() {
        return Err("one point-forecast track per day is required".into());
    }
    if days.iter().any(|d| d.tracks.len() < 2) {
        return Err("interval scores need at least two trajectories per day".into());
    }

    let per_day: Vec<DayMetrics> =
        days.iter().map(|d| day_metrics(d, opts)).collect::<Result<_, _>>()?;

    let mean_over = |f: fn(&DayMetrics) -> f64| -> f64 {
        per_day.iter().map(f).sum::<f64>() / per_day.len() as f64
    };

    let mut mae_pf_acc = 0.0;
    let mut cells = 0usize;
    for (day, pf) in days.iter().zip(point_forecasts) {
        if pf.len() != day.actual.len() {
            return Err("point forecast shape must match the observed track".into());
        }
        mae_pf_acc += pf.iter().zip(&day.actual).map(|(a, b)| (a - b).abs()).sum::<f64>();
        cells += day.cells();
    }
    let mae_pf = mae_pf_acc / cells as f64;

    let crps = crps_avg(days)?;
    let report = MetricsReport {
        rmse_avg: mean_over(|d| d.rmse),
        s_score: mean_over(|d| d.s_score),
        pinball_avg: mean_over(|d| d.pinball),
        brier_avg: mean_over(|d| d.brier),
        crps_avg: crps,
        ss_crps: ss_crps(crps, mae_pf)?,
        energy: mean_over(|d| d.energy),
        winkler: mean_over(|d| d.winkler),
        variogram_k1: mean_over(|d| d.variogram_k1),
        variogram_k2: mean_over(|d| d.variogram_k2),
        apd_pct: apd(days, &opts.coverage_grid),
    };
    report.validate()?;
    Ok((report, per_day))
}
