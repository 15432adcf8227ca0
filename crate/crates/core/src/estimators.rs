//! One-sample survival estimators for LBRC data, all case-weighted.
//!
//! Three backends estimate the unbiased survival function:
//!
//! - [`km_ltrc`]: product-limit estimator with the risk set adjusted for
//!   left truncation (conditional-likelihood NPMLE). Uses only the entry
//!   times as a conditioning device.
//! - [`mfle`]: nonparametric maximum full-likelihood estimator. An EM
//!   fixed-point iteration places mass on the distinct observed times, and
//!   the length-bias transformation maps those masses to the unbiased
//!   distribution. The log-survival view uses the discretized hazard so the
//!   log stays finite at the last observed time.
//! - [`mcle`]: composite conditional-likelihood estimator. Exploits the
//!   symmetry of truncation and residual times to obtain a closed-form
//!   cumulative hazard that counts each uncensored subject from both ends.
//!
//! Conventions: stored curves are right-continuous, so the value at grid
//! index `j` is the survival immediately after the jump at `t_j`. Weighted
//! calls with integer weights agree with calls on the correspondingly
//! replicated dataset.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curves::{CurveError, DistinctTimeGrid, StepCurve};
use crate::dataset::{CaseWeights, Dataset};

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("effective sample is empty (all case weights zero)")]
    EmptySample,
    #[error("all observations censored; the full-likelihood fit needs at least one event")]
    AllCensored,
    #[error("weights length {weights} does not match sample size {n}")]
    WeightsLength { weights: usize, n: usize },
    #[error("mass vector length {masses} does not match grid length {grid}")]
    MassLength { masses: usize, grid: usize },
    #[error("mass vector has negative entry at index {0}")]
    NegativeMass(usize),
    #[error(transparent)]
    Curve(#[from] CurveError),
}

/// Hazard jumps are clamped just below 1 so the log product stays finite.
const LOG_JUMP_CAP: f64 = 1.0 - 1e-10;

/// Which estimator serves a fit or a prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    LtrcKm,
    Mfle,
    Mcle,
}

impl std::fmt::Display for Backend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Backend::LtrcKm => "ltrc-km",
            Backend::Mfle => "mfle",
            Backend::Mcle => "mcle",
        })
    }
}

/// EM controls for [`mfle`]. `tol` bounds the max-abs change of the mass
/// vector between iterations. The 20-iteration cap used for bulk forest
/// work is a speed preset, not the default.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub tol: f64,
    pub max_iter: usize,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub track_loglik: bool,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            tol: 1e-8,
            max_iter: 1000,
            track_loglik: false,
        }
    }
}

impl EmConfig {
    /// Speed preset for ensembles: cap the EM at 20 iterations.
    pub fn capped() -> Self {
        EmConfig {
            max_iter: 20,
            ..EmConfig::default()
        }
    }
}

/// A fitted survival estimate: the curve itself plus the backend-specific
/// log-survival view used by influence scores.
pub trait SurvivalFit {
    fn survival(&self) -> &StepCurve;
    fn grid(&self) -> &DistinctTimeGrid;
    /// `log S(t)` under the backend's convention; finite for all `t >= 0`.
    fn log_survival_at(&self, t: f64) -> f64;
}

/// Evaluate a grid-aligned prefix vector as a right-continuous step
/// function that is 0 before the first grid point.
fn eval_prefix(grid: &DistinctTimeGrid, prefix: &[f64], t: f64) -> f64 {
    match grid.count_leq(t) {
        0 => 0.0,
        k => prefix[k - 1],
    }
}

/// Node-local view of the effective sample (records with positive weight),
/// aggregated on the distinct-time grid.
struct NodeContext {
    grid: DistinctTimeGrid,
    /// Grid position of each effective record's observed time.
    positions: Vec<usize>,
    /// Effective record indices into the dataset.
    indices: Vec<usize>,
    /// Per grid point: total weight of records observed there.
    total_weight: Vec<f64>,
    /// Per grid point: weight of events observed there.
    event_weight: Vec<f64>,
    weight_total: f64,
    event_total: f64,
}

impl NodeContext {
    fn build(ds: &Dataset, w: &CaseWeights) -> Result<Self, EstimatorError> {
        if w.len() != ds.n() {
            return Err(EstimatorError::WeightsLength {
                weights: w.len(),
                n: ds.n(),
            });
        }
        let indices = w.support();
        if indices.is_empty() {
            return Err(EstimatorError::EmptySample);
        }
        let grid = DistinctTimeGrid::from_observed(indices.iter().map(|i| ds.time()[*i]))?;
        let mut total_weight = vec![0.0; grid.len()];
        let mut event_weight = vec![0.0; grid.len()];
        let mut positions = Vec::with_capacity(indices.len());
        let mut weight_total = 0.0;
        let mut event_total = 0.0;
        for &i in &indices {
            let pos = grid
                .position(ds.time()[i])
                .expect("observed time is on the grid");
            positions.push(pos);
            let wi = w[i];
            total_weight[pos] += wi;
            weight_total += wi;
            if ds.is_event(i) {
                event_weight[pos] += wi;
                event_total += wi;
            }
        }
        Ok(NodeContext {
            grid,
            positions,
            indices,
            total_weight,
            event_weight,
            weight_total,
            event_total,
        })
    }

    /// Per grid point `u`: total weight of effective records with
    /// `value <= u`, for the supplied per-record value accessor.
    fn cum_weight_leq(
        &self,
        ds: &Dataset,
        w: &CaseWeights,
        value: impl Fn(&Dataset, usize) -> f64,
        events_only: bool,
    ) -> Vec<f64> {
        let mut items: Vec<(f64, f64)> = self
            .indices
            .iter()
            .filter(|i| !events_only || ds.is_event(**i))
            .map(|&i| (value(ds, i), w[i]))
            .collect();
        items.sort_unstable_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let mut out = Vec::with_capacity(self.grid.len());
        let mut acc = 0.0;
        let mut k = 0;
        for &u in self.grid.times() {
            while k < items.len() && items[k].0 <= u {
                acc += items[k].1;
                k += 1;
            }
            out.push(acc);
        }
        out
    }

    /// Weight of records observed strictly before each grid point.
    fn weight_before(&self, events_only: bool) -> Vec<f64> {
        let src = if events_only {
            &self.event_weight
        } else {
            &self.total_weight
        };
        let mut out = Vec::with_capacity(src.len());
        let mut acc = 0.0;
        for v in src {
            out.push(acc);
            acc += v;
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Risk-set adjusted Kaplan-Meier (LTRC).
// ---------------------------------------------------------------------------

/// Product-limit fit on the node's distinct-time grid.
#[derive(Debug, Clone)]
pub struct KmFit {
    survival: StepCurve,
    /// Prefix sums of `ln(1 - jump)` with jumps capped below 1.
    log_prefix: Vec<f64>,
}

impl SurvivalFit for KmFit {
    fn survival(&self) -> &StepCurve {
        &self.survival
    }

    fn grid(&self) -> &DistinctTimeGrid {
        self.survival.grid()
    }

    fn log_survival_at(&self, t: f64) -> f64 {
        eval_prefix(self.survival.grid(), &self.log_prefix, t)
    }
}

/// Weighted product-limit estimator with the left-truncation adjusted risk
/// set: the hazard jump at `u` is the event weight at `u` over the weight of
/// subjects with `entry <= u <= time`. Unit weights give the unweighted
/// estimator.
pub fn km_ltrc(ds: &Dataset, w: &CaseWeights) -> Result<KmFit, EstimatorError> {
    let ctx = NodeContext::build(ds, w)?;
    let entry_leq = ctx.cum_weight_leq(ds, w, |d, i| d.entry()[i], false);
    let time_before = ctx.weight_before(false);

    let h = ctx.grid.len();
    let mut values = Vec::with_capacity(h);
    let mut log_prefix = Vec::with_capacity(h);
    let mut surv = 1.0;
    let mut log_acc = 0.0;
    for j in 0..h {
        let at_risk = entry_leq[j] - time_before[j];
        let jump = if ctx.event_weight[j] > 0.0 {
            ctx.event_weight[j] / at_risk
        } else {
            0.0
        };
        surv *= 1.0 - jump;
        values.push(surv.max(0.0));
        log_acc += (1.0 - jump.min(LOG_JUMP_CAP)).ln();
        log_prefix.push(log_acc);
    }
    let survival = StepCurve::survival(ctx.grid, values)?;
    Ok(KmFit {
        survival,
        log_prefix,
    })
}

// ---------------------------------------------------------------------------
// Maximum full-likelihood estimator (EM).
// ---------------------------------------------------------------------------

/// Converged (or iteration-capped) full-likelihood fit.
#[derive(Debug, Clone)]
pub struct MfleFit {
    grid: DistinctTimeGrid,
    /// Masses of the observed-time distribution at the grid points.
    observed_masses: Vec<f64>,
    /// Masses of the unbiased failure distribution at the grid points.
    unbiased_masses: Vec<f64>,
    /// Discretized hazard jumps; the last jump is 1 by construction.
    hazard_jumps: Vec<f64>,
    survival: StepCurve,
    /// Prefix sums of the hazard jumps: `-log S` view.
    hazard_prefix: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    /// Observed-data log-likelihood after each EM step, when tracking is on.
    pub loglik_trace: Option<Vec<f64>>,
}

impl MfleFit {
    pub fn observed_masses(&self) -> &[f64] {
        &self.observed_masses
    }

    pub fn unbiased_masses(&self) -> &[f64] {
        &self.unbiased_masses
    }

    pub fn hazard_jumps(&self) -> &[f64] {
        &self.hazard_jumps
    }
}

impl SurvivalFit for MfleFit {
    fn survival(&self) -> &StepCurve {
        &self.survival
    }

    fn grid(&self) -> &DistinctTimeGrid {
        &self.grid
    }

    fn log_survival_at(&self, t: f64) -> f64 {
        -eval_prefix(&self.grid, &self.hazard_prefix, t)
    }
}

struct EmWorkspace<'a> {
    ctx: &'a NodeContext,
    /// Censored effective records as (grid position, weight).
    censored: Vec<(usize, f64)>,
    inv_times: Vec<f64>,
}

impl<'a> EmWorkspace<'a> {
    fn new(ds: &Dataset, w: &CaseWeights, ctx: &'a NodeContext) -> Self {
        let censored = ctx
            .indices
            .iter()
            .zip(&ctx.positions)
            .filter(|(i, _)| !ds.is_event(**i))
            .map(|(i, pos)| (*pos, w[*i]))
            .collect();
        let inv_times = ctx.grid.times().iter().map(|t| 1.0 / t).collect();
        EmWorkspace {
            ctx,
            censored,
            inv_times,
        }
    }

    /// Reverse cumulative sums of `q_k / t_k`.
    fn tail_sums(&self, masses: &[f64]) -> Vec<f64> {
        let h = masses.len();
        let mut out = vec![0.0; h];
        let mut acc = 0.0;
        for j in (0..h).rev() {
            acc += masses[j] * self.inv_times[j];
            out[j] = acc;
        }
        out
    }

    /// One EM update of the observed-time mass vector; renormalized to sum 1.
    fn step(&self, masses: &[f64]) -> Vec<f64> {
        let h = masses.len();
        let tails = self.tail_sums(masses);
        let mut bucket = vec![0.0; h];
        for &(pos, wi) in &self.censored {
            bucket[pos] += wi / tails[pos].max(f64::MIN_POSITIVE);
        }
        let mut prefix = 0.0;
        let mut next = Vec::with_capacity(h);
        for j in 0..h {
            prefix += bucket[j];
            next.push(
                (self.ctx.event_weight[j] + masses[j] * self.inv_times[j] * prefix)
                    / self.ctx.weight_total,
            );
        }
        let total: f64 = next.iter().sum();
        if total > 0.0 {
            for v in next.iter_mut() {
                *v /= total;
            }
        }
        next
    }

    /// Weighted observed-data log-likelihood of a mass vector.
    fn loglik(&self, masses: &[f64]) -> f64 {
        let tails = self.tail_sums(masses);
        let mut total = 0.0;
        for j in 0..masses.len() {
            if self.ctx.event_weight[j] > 0.0 {
                total += self.ctx.event_weight[j] * masses[j].ln();
            }
        }
        for &(pos, wi) in &self.censored {
            total += wi * tails[pos].ln();
        }
        total
    }
}

/// Weighted nonparametric maximum full-likelihood estimator, computed by EM
/// from a uniform interior start. Stops when the max-abs mass change drops
/// below `cfg.tol` or at `cfg.max_iter`; hitting the cap is not an error and
/// the final residual is recorded on the fit.
pub fn mfle(ds: &Dataset, w: &CaseWeights, cfg: &EmConfig) -> Result<MfleFit, EstimatorError> {
    let ctx = NodeContext::build(ds, w)?;
    if ctx.event_total <= 0.0 {
        return Err(EstimatorError::AllCensored);
    }
    let ws = EmWorkspace::new(ds, w, &ctx);
    let h = ctx.grid.len();
    let mut masses = vec![1.0 / h as f64; h];
    let mut trace = cfg.track_loglik.then(Vec::new);
    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    while iterations < cfg.max_iter {
        let next = ws.step(&masses);
        residual = masses
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if let Some(t) = trace.as_mut() {
            t.push(ws.loglik(&next));
        }
        masses = next;
        iterations += 1;
        if residual < cfg.tol {
            break;
        }
    }

    let tails = ws.tail_sums(&masses);
    let total_tail = tails[0];
    let unbiased: Vec<f64> = (0..h)
        .map(|j| masses[j] * ws.inv_times[j] / total_tail)
        .collect();

    // Survival values as exact suffix sums of the unbiased masses: the
    // stored value at t_j is the mass strictly beyond t_j.
    let mut values = vec![0.0; h];
    let mut acc = 0.0;
    for j in (0..h).rev() {
        values[j] = acc;
        acc += unbiased[j];
    }

    let mut tail = acc; // sum of all unbiased masses
    let mut hazard_jumps = Vec::with_capacity(h);
    for j in 0..h {
        let jump = if j == h - 1 {
            1.0
        } else if tail > 0.0 {
            (unbiased[j] / tail).min(1.0)
        } else {
            0.0
        };
        hazard_jumps.push(jump);
        tail -= unbiased[j];
    }
    let mut hazard_prefix = Vec::with_capacity(h);
    let mut cum = 0.0;
    for &l in &hazard_jumps {
        cum += l;
        hazard_prefix.push(cum);
    }

    let survival = StepCurve::survival(ctx.grid.clone(), values)?;
    Ok(MfleFit {
        grid: ctx.grid,
        observed_masses: masses,
        unbiased_masses: unbiased,
        hazard_jumps,
        survival,
        hazard_prefix,
        iterations,
        residual,
        loglik_trace: trace,
    })
}

/// Weighted observed-data log-likelihood of an observed-time mass vector on
/// the effective sample's grid. Used to assert EM ascent.
pub fn em_loglik(ds: &Dataset, w: &CaseWeights, masses: &[f64]) -> Result<f64, EstimatorError> {
    let ctx = NodeContext::build(ds, w)?;
    if masses.len() != ctx.grid.len() {
        return Err(EstimatorError::MassLength {
            masses: masses.len(),
            grid: ctx.grid.len(),
        });
    }
    if let Some(j) = masses.iter().position(|m| *m < 0.0) {
        return Err(EstimatorError::NegativeMass(j));
    }
    let ws = EmWorkspace::new(ds, w, &ctx);
    Ok(ws.loglik(masses))
}

// ---------------------------------------------------------------------------
// Composite conditional-likelihood estimator.
// ---------------------------------------------------------------------------

/// Closed-form composite-likelihood fit.
#[derive(Debug, Clone)]
pub struct McleFit {
    cum_hazard: StepCurve,
    survival: StepCurve,
    /// Number of hazard jumps that exceeded 1 and were clamped for the
    /// survival curve (the cumulative hazard is kept unclamped).
    pub clamped_jumps: usize,
}

impl McleFit {
    pub fn cum_hazard(&self) -> &StepCurve {
        &self.cum_hazard
    }
}

impl SurvivalFit for McleFit {
    fn survival(&self) -> &StepCurve {
        &self.survival
    }

    fn grid(&self) -> &DistinctTimeGrid {
        self.survival.grid()
    }

    fn log_survival_at(&self, t: f64) -> f64 {
        -self.cum_hazard.eval_unchecked(t)
    }
}

/// Weighted composite conditional-likelihood estimator. The cumulative
/// hazard jump at `u` is twice the event weight at `u` divided by a risk
/// total that counts subjects at risk from the truncation side and, for
/// events, also from the residual side. Survival is the product form over
/// the jumps; unit weights give the unweighted estimator.
pub fn mcle(ds: &Dataset, w: &CaseWeights) -> Result<McleFit, EstimatorError> {
    let ctx = NodeContext::build(ds, w)?;
    let entry_leq = ctx.cum_weight_leq(ds, w, |d, i| d.entry()[i], false);
    let residual_event_leq = ctx.cum_weight_leq(ds, w, |d, i| d.residual()[i], true);
    let time_before = ctx.weight_before(false);
    let event_before = ctx.weight_before(true);

    let h = ctx.grid.len();
    let mut hazard_values = Vec::with_capacity(h);
    let mut surv_values = Vec::with_capacity(h);
    let mut cum = 0.0;
    let mut surv = 1.0;
    let mut clamped = 0;
    for j in 0..h {
        let jump = if ctx.event_weight[j] > 0.0 {
            let denom = (entry_leq[j] - time_before[j])
                + (residual_event_leq[j] - event_before[j]);
            2.0 * ctx.event_weight[j] / denom
        } else {
            0.0
        };
        cum += jump;
        hazard_values.push(cum);
        if jump > 1.0 {
            clamped += 1;
        }
        surv *= 1.0 - jump.min(1.0);
        surv_values.push(surv.max(0.0));
    }
    let cum_hazard = StepCurve::cumulative_hazard(ctx.grid.clone(), hazard_values)?;
    let survival = StepCurve::survival(ctx.grid, surv_values)?;
    Ok(McleFit {
        cum_hazard,
        survival,
        clamped_jumps: clamped,
    })
}

// ---------------------------------------------------------------------------
// Backend dispatch.
// ---------------------------------------------------------------------------

/// A fit from any backend, usable wherever a [`SurvivalFit`] is expected.
#[derive(Debug, Clone)]
pub enum FittedCurve {
    Km(KmFit),
    Mfle(MfleFit),
    Mcle(McleFit),
}

impl SurvivalFit for FittedCurve {
    fn survival(&self) -> &StepCurve {
        match self {
            FittedCurve::Km(f) => f.survival(),
            FittedCurve::Mfle(f) => f.survival(),
            FittedCurve::Mcle(f) => f.survival(),
        }
    }

    fn grid(&self) -> &DistinctTimeGrid {
        match self {
            FittedCurve::Km(f) => f.grid(),
            FittedCurve::Mfle(f) => f.grid(),
            FittedCurve::Mcle(f) => f.grid(),
        }
    }

    fn log_survival_at(&self, t: f64) -> f64 {
        match self {
            FittedCurve::Km(f) => f.log_survival_at(t),
            FittedCurve::Mfle(f) => f.log_survival_at(t),
            FittedCurve::Mcle(f) => f.log_survival_at(t),
        }
    }
}

impl Backend {
    pub fn fit(
        self,
        ds: &Dataset,
        w: &CaseWeights,
        em: &EmConfig,
    ) -> Result<FittedCurve, EstimatorError> {
        Ok(match self {
            Backend::LtrcKm => FittedCurve::Km(km_ltrc(ds, w)?),
            Backend::Mfle => FittedCurve::Mfle(mfle(ds, w, em)?),
            Backend::Mcle => FittedCurve::Mcle(mcle(ds, w)?),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{LbrcRecord, Schema};
    use approx::assert_abs_diff_eq;

    pub(crate) fn bare_dataset(rows: &[(f64, f64, u8)]) -> Dataset {
        let records = rows
            .iter()
            .map(|&(entry, time, status)| LbrcRecord::new(entry, time, status, vec![]))
            .collect();
        Dataset::new(records, Schema::default()).unwrap()
    }

    fn replicate(rows: &[(f64, f64, u8)], counts: &[u32]) -> Dataset {
        let mut expanded = Vec::new();
        for (row, &c) in rows.iter().zip(counts) {
            for _ in 0..c {
                expanded.push(*row);
            }
        }
        bare_dataset(&expanded)
    }

    #[test]
    fn km_matches_hand_product_limit() {
        let ds = bare_dataset(&[(1.0, 2.0, 1), (0.0, 3.0, 1)]);
        let fit = km_ltrc(&ds, &CaseWeights::unit(2)).unwrap();
        assert_abs_diff_eq!(fit.survival().eval_at(2.0).unwrap(), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.survival().eval_at(3.0).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn km_with_no_events_is_flat() {
        let ds = bare_dataset(&[(0.0, 1.0, 0)]);
        let fit = km_ltrc(&ds, &CaseWeights::unit(1)).unwrap();
        assert_eq!(fit.survival().eval_at(10.0).unwrap(), 1.0);
        assert_eq!(fit.log_survival_at(10.0), 0.0);
    }

    #[test]
    fn km_reduces_to_standard_km_without_truncation() {
        let ds = bare_dataset(&[(0.0, 1.0, 1), (0.0, 2.0, 1), (0.0, 3.0, 1)]);
        let fit = km_ltrc(&ds, &CaseWeights::unit(3)).unwrap();
        let s = fit.survival();
        assert_abs_diff_eq!(s.eval_at(1.0).unwrap(), 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.eval_at(2.0).unwrap(), 1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.eval_at(3.0).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn mfle_closed_form_without_censoring() {
        let ds = bare_dataset(&[(0.0, 1.0, 1), (0.5, 2.0, 1), (1.0, 3.0, 1)]);
        let fit = mfle(&ds, &CaseWeights::unit(3), &EmConfig::default()).unwrap();
        for (got, want) in fit.observed_masses().iter().zip([1.0 / 3.0; 3]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-10);
        }
        let p = fit.unbiased_masses();
        assert_abs_diff_eq!(p[0], 6.0 / 11.0, epsilon = 1e-10);
        assert_abs_diff_eq!(p[1], 3.0 / 11.0, epsilon = 1e-10);
        assert_abs_diff_eq!(p[2], 2.0 / 11.0, epsilon = 1e-10);
        let s = fit.survival();
        assert_abs_diff_eq!(s.eval_at(1.0).unwrap(), 5.0 / 11.0, epsilon = 1e-10);
        assert_abs_diff_eq!(s.eval_at(2.0).unwrap(), 2.0 / 11.0, epsilon = 1e-10);
        assert_abs_diff_eq!(s.eval_at(3.0).unwrap(), 0.0, epsilon = 1e-10);
        let l = fit.hazard_jumps();
        assert_abs_diff_eq!(l[0], 6.0 / 11.0, epsilon = 1e-10);
        assert_abs_diff_eq!(l[1], 3.0 / 5.0, epsilon = 1e-10);
        assert_abs_diff_eq!(l[2], 1.0, epsilon = 0.0);
        // log-survival view is the negated hazard prefix
        assert_abs_diff_eq!(
            fit.log_survival_at(2.5),
            -(6.0 / 11.0 + 3.0 / 5.0),
            epsilon = 1e-10
        );
    }

    #[test]
    fn mfle_degenerate_single_event() {
        let ds = bare_dataset(&[(0.3, 1.7, 1)]);
        let fit = mfle(&ds, &CaseWeights::unit(1), &EmConfig::default()).unwrap();
        assert_abs_diff_eq!(fit.observed_masses()[0], 1.0, epsilon = 1e-12);
        assert_eq!(fit.survival().eval_at(1.7).unwrap(), 0.0);
        assert_eq!(fit.hazard_jumps()[0], 1.0);
    }

    #[test]
    fn mfle_rejects_all_censored() {
        let ds = bare_dataset(&[(0.0, 1.0, 0), (0.0, 2.0, 0)]);
        let err = mfle(&ds, &CaseWeights::unit(2), &EmConfig::default()).unwrap_err();
        assert!(matches!(err, EstimatorError::AllCensored));
    }

    /// Fixed point of the EM on a censored sample, cross-checked against an
    /// independent implementation of the limiting equation.
    #[test]
    fn mfle_censored_fixed_point() {
        let rows = [
            (0.5, 1.0, 1),
            (0.2, 2.0, 0),
            (1.0, 2.5, 1),
            (0.1, 2.5, 0),
            (2.0, 4.0, 1),
        ];
        let ds = bare_dataset(&rows);
        let cfg = EmConfig {
            tol: 1e-12,
            max_iter: 100_000,
            track_loglik: true,
        };
        let fit = mfle(&ds, &CaseWeights::unit(5), &cfg).unwrap();
        let q = fit.observed_masses();
        assert_abs_diff_eq!(q[0], 0.2, epsilon = 1e-6);
        assert_abs_diff_eq!(q[1], 0.0, epsilon = 1e-6);
        assert_abs_diff_eq!(q[2], 0.484139157, epsilon = 1e-6);
        assert_abs_diff_eq!(q[3], 0.315860843, epsilon = 1e-6);
        let s = fit.survival();
        assert_abs_diff_eq!(s.eval_at(1.0).unwrap(), 0.57682783, epsilon = 1e-6);
        assert_abs_diff_eq!(s.eval_at(2.0).unwrap(), 0.57682783, epsilon = 1e-6);
        assert_abs_diff_eq!(s.eval_at(2.5).unwrap(), 0.1670794, epsilon = 1e-6);
        assert_abs_diff_eq!(s.eval_at(4.0).unwrap(), 0.0, epsilon = 1e-12);
        let trace = fit.loglik_trace.as_ref().unwrap();
        assert_abs_diff_eq!(*trace.last().unwrap(), -6.08662072533612, epsilon = 1e-8);
        // EM ascent, with slack for roundoff
        for w in trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-10);
        }
        // invariants: masses sum to one, hazard consistent with masses
        assert_abs_diff_eq!(q.iter().sum::<f64>(), 1.0, epsilon = 1e-10);
        let p = fit.unbiased_masses();
        assert_abs_diff_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-10);
        let mut tail: f64 = p.iter().sum();
        for (j, l) in fit.hazard_jumps().iter().enumerate() {
            if j < p.len() - 1 {
                assert_abs_diff_eq!(*l, p[j] / tail, epsilon = 1e-10);
            } else {
                assert_eq!(*l, 1.0);
            }
            tail -= p[j];
        }
    }

    #[test]
    fn em_loglik_matches_direct_sum() {
        let ds = bare_dataset(&[(0.0, 1.0, 1), (0.0, 2.0, 1), (0.0, 3.0, 1)]);
        let w = CaseWeights::unit(3);
        let ll = em_loglik(&ds, &w, &[1.0 / 3.0; 3]).unwrap();
        assert_abs_diff_eq!(ll, 3.0 * (1.0_f64 / 3.0).ln(), epsilon = 1e-12);

        let single = bare_dataset(&[(0.2, 1.0, 1)]);
        let ll1 = em_loglik(&single, &CaseWeights::unit(1), &[1.0]).unwrap();
        assert_abs_diff_eq!(ll1, 0.0, epsilon = 1e-15);

        assert!(em_loglik(&ds, &w, &[0.5, 0.5]).is_err());
        assert!(em_loglik(&ds, &w, &[0.5, 0.6, -0.1]).is_err());
    }

    #[test]
    fn mcle_matches_hand_evaluation() {
        let ds = bare_dataset(&[(0.5, 2.0, 1), (1.0, 3.0, 1)]);
        let fit = mcle(&ds, &CaseWeights::unit(2)).unwrap();
        assert_abs_diff_eq!(
            fit.cum_hazard().eval_at(2.0).unwrap(),
            0.5,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            fit.cum_hazard().eval_at(3.0).unwrap(),
            1.5,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(fit.survival().eval_at(2.0).unwrap(), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.survival().eval_at(3.0).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn mcle_censored_case_from_independent_oracle() {
        let ds = bare_dataset(&[
            (0.5, 1.0, 1),
            (0.2, 2.0, 0),
            (1.0, 2.5, 1),
            (0.1, 2.5, 0),
            (2.0, 4.0, 1),
        ]);
        let fit = mcle(&ds, &CaseWeights::unit(5)).unwrap();
        let jumps = [0.4, 0.0, 0.4, 1.0];
        let mut cum = 0.0;
        for (t, j) in [1.0, 2.0, 2.5, 4.0].iter().zip(jumps) {
            cum += j;
            assert_abs_diff_eq!(fit.cum_hazard().eval_at(*t).unwrap(), cum, epsilon = 1e-12);
        }
        assert_eq!(fit.clamped_jumps, 0);
    }

    #[test]
    fn mcle_single_censored_record_is_flat() {
        let ds = bare_dataset(&[(0.5, 2.0, 0)]);
        let fit = mcle(&ds, &CaseWeights::unit(1)).unwrap();
        assert_eq!(fit.survival().eval_at(5.0).unwrap(), 1.0);
        assert_eq!(fit.cum_hazard().eval_at(5.0).unwrap(), 0.0);
    }

    #[test]
    fn mcle_symmetric_in_entry_and_residual_when_uncensored() {
        let rows = [(0.5, 2.0, 1), (1.0, 3.5, 1), (0.2, 0.9, 1), (2.0, 2.6, 1)];
        let swapped: Vec<(f64, f64, u8)> = rows
            .iter()
            .map(|&(a, z, d)| {
                let v = z - a;
                (v, z, d)
            })
            .collect();
        let f1 = mcle(&bare_dataset(&rows), &CaseWeights::unit(4)).unwrap();
        let f2 = mcle(&bare_dataset(&swapped), &CaseWeights::unit(4)).unwrap();
        for (a, b) in f1
            .cum_hazard()
            .values()
            .iter()
            .zip(f2.cum_hazard().values())
        {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
        }
    }

    #[test]
    fn integer_weights_equal_replicated_data() {
        let rows = [
            (0.5, 1.0, 1),
            (0.2, 2.0, 0),
            (1.0, 2.5, 1),
            (0.1, 2.7, 0),
            (2.0, 4.0, 1),
        ];
        let counts = [2u32, 1, 3, 1, 2];
        let ds = bare_dataset(&rows);
        let w = CaseWeights::from_counts(&counts);
        let replicated = replicate(&rows, &counts);
        let wu = CaseWeights::unit(replicated.n());

        let km_w = km_ltrc(&ds, &w).unwrap();
        let km_r = km_ltrc(&replicated, &wu).unwrap();
        for (a, b) in km_w.survival().values().iter().zip(km_r.survival().values()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-10);
        }

        let cfg = EmConfig::default();
        let mf_w = mfle(&ds, &w, &cfg).unwrap();
        let mf_r = mfle(&replicated, &wu, &cfg).unwrap();
        for (a, b) in mf_w.survival().values().iter().zip(mf_r.survival().values()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-10);
        }
        for (a, b) in mf_w.hazard_jumps().iter().zip(mf_r.hazard_jumps()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-10);
        }

        let mc_w = mcle(&ds, &w).unwrap();
        let mc_r = mcle(&replicated, &wu).unwrap();
        for (a, b) in mc_w
            .cum_hazard()
            .values()
            .iter()
            .zip(mc_r.cum_hazard().values())
        {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
        }
    }

    #[test]
    fn empty_effective_sample_is_an_error() {
        let ds = bare_dataset(&[(0.0, 1.0, 1)]);
        let w = CaseWeights::new(vec![0.0]).unwrap();
        assert!(matches!(
            km_ltrc(&ds, &w),
            Err(EstimatorError::EmptySample)
        ));
        assert!(matches!(mcle(&ds, &w), Err(EstimatorError::EmptySample)));
    }
}
