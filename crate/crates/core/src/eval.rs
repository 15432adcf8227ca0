//! Evaluation metrics: IPCW Brier score and its time-integrated version,
//! integrated squared distance against an analytic truth, and the
//! backward/forward recurrence-time diagnostic for the stationarity
//! assumption.

use thiserror::Error;

use crate::curves::{CurveError, StepCurve};
use crate::dataset::{CaseWeights, DataError, Dataset, LbrcRecord, Schema};
use crate::estimators::{km_ltrc, EstimatorError, SurvivalFit};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("prediction count {got} does not match sample size {want}")]
    PredictionCount { got: usize, want: usize },
    #[error("censoring survival vanishes at t = {t} while subjects remain at risk")]
    CensoringMassZero { t: f64 },
    #[error("no evaluable subjects")]
    NoSubjects,
    #[error("diagnostic times must be positive; offending record {0}")]
    NonPositiveTime(usize),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Curve(#[from] CurveError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Reverse Kaplan-Meier estimate of the censoring survival on the observed
/// time scale (event indicator flipped, no truncation adjustment).
#[derive(Debug, Clone)]
pub struct CensoringCurve {
    curve: StepCurve,
}

impl CensoringCurve {
    pub fn from_dataset(ds: &Dataset) -> Result<Self, EvalError> {
        let records = (0..ds.n())
            .map(|i| LbrcRecord::new(0.0, ds.time()[i], 1 - ds.status()[i], vec![]))
            .collect();
        let flipped = Dataset::new(records, Schema::default())?;
        let fit = km_ltrc(&flipped, &CaseWeights::unit(ds.n()))?;
        Ok(CensoringCurve {
            curve: fit.survival().clone(),
        })
    }

    pub fn curve(&self) -> &StepCurve {
        &self.curve
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.curve.eval_unchecked(t)
    }
}

/// Shared state for Brier evaluations over one dataset: the censoring curve
/// and the set of subjects whose IPCW weight is well defined.
pub struct BrierContext<'a> {
    ds: &'a Dataset,
    ghat: CensoringCurve,
    /// False where an event subject's weight needs a vanished `G(Z_i)`.
    usable: Vec<bool>,
    pub excluded_subjects: usize,
}

impl<'a> BrierContext<'a> {
    pub fn new(ds: &'a Dataset) -> Result<Self, EvalError> {
        let ghat = CensoringCurve::from_dataset(ds)?;
        let usable: Vec<bool> = (0..ds.n())
            .map(|i| !(ds.is_event(i) && ghat.eval(ds.time()[i]) <= 0.0))
            .collect();
        let excluded_subjects = usable.iter().filter(|u| !**u).count();
        Ok(BrierContext {
            ds,
            ghat,
            usable,
            excluded_subjects,
        })
    }

    /// IPCW-weighted mean squared error of the survival predictions at `t`.
    /// `None` when the censoring survival vanishes at `t` while subjects are
    /// still at risk there.
    fn score_at<S: AsRef<StepCurve>>(&self, predictions: &[Option<S>], t: f64) -> Option<f64> {
        let g_t = self.ghat.eval(t);
        let mut total = 0.0;
        let mut n_included = 0usize;
        for i in 0..self.ds.n() {
            let Some(pred) = predictions[i].as_ref() else {
                continue;
            };
            if !self.usable[i] {
                continue;
            }
            n_included += 1;
            let z = self.ds.time()[i];
            let s_hat = pred.as_ref().eval_unchecked(t);
            if z > t {
                if g_t <= 0.0 {
                    return None;
                }
                total += (1.0 - s_hat).powi(2) / g_t;
            } else if self.ds.is_event(i) {
                total += (0.0 - s_hat).powi(2) / self.ghat.eval(z);
            }
            // censored on or before t: weight zero
        }
        if n_included == 0 {
            return Some(0.0);
        }
        Some(total / n_included as f64)
    }
}

impl AsRef<StepCurve> for StepCurve {
    fn as_ref(&self) -> &StepCurve {
        self
    }
}

/// Brier score at a single time point, one prediction per subject.
pub fn brier(ds: &Dataset, predictions: &[StepCurve], t: f64) -> Result<f64, EvalError> {
    if predictions.len() != ds.n() {
        return Err(EvalError::PredictionCount {
            got: predictions.len(),
            want: ds.n(),
        });
    }
    let ctx = BrierContext::new(ds)?;
    let preds: Vec<Option<&StepCurve>> = predictions.iter().map(Some).collect();
    ctx.score_at(&preds, t)
        .ok_or(EvalError::CensoringMassZero { t })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IbsResult {
    pub value: f64,
    /// Subjects with no usable IPCW weight or no prediction.
    pub excluded_subjects: usize,
    /// Integration knots skipped because the censoring survival vanished.
    pub excluded_times: usize,
}

/// Integrated Brier score over `[0, max Z]`, normalized by `max Z`. The
/// integrand is piecewise constant between distinct observed times, so the
/// step integral over those knots is exact. Subjects with `None` predictions
/// (e.g. no out-of-bag coverage) are excluded and counted.
pub fn ibs<S: AsRef<StepCurve>>(
    ds: &Dataset,
    predictions: &[Option<S>],
) -> Result<IbsResult, EvalError> {
    if predictions.len() != ds.n() {
        return Err(EvalError::PredictionCount {
            got: predictions.len(),
            want: ds.n(),
        });
    }
    let ctx = BrierContext::new(ds)?;
    let missing = (0..ds.n())
        .filter(|&i| predictions[i].is_none() && ctx.usable[i])
        .count();

    let mut knots: Vec<f64> = Vec::with_capacity(ds.n() + 1);
    knots.push(0.0);
    knots.extend_from_slice(ds.time());
    knots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    knots.dedup();
    let horizon = *knots.last().unwrap();
    if !(horizon > 0.0) {
        return Err(EvalError::NoSubjects);
    }

    let mut total = 0.0;
    let mut excluded_times = 0usize;
    for k in 0..knots.len() - 1 {
        let width = knots[k + 1] - knots[k];
        match ctx.score_at(predictions, knots[k]) {
            Some(bs) => total += bs * width,
            None => excluded_times += 1,
        }
    }
    Ok(IbsResult {
        value: total / horizon,
        excluded_subjects: ctx.excluded_subjects + missing,
        excluded_times,
    })
}

/// Average integrated squared distance between an analytic conditional
/// survival function and step-function predictions over `[0, horizon]`,
/// normalized by the horizon. Exact in the step component; the smooth
/// component is handled by Simpson's rule on the prediction grid refined
/// with 2048 uniform points.
pub fn integrated_l2<F>(truth: F, predictions: &[StepCurve], horizon: f64) -> f64
where
    F: Fn(usize, f64) -> f64,
{
    const REFINEMENT: usize = 2048;
    if predictions.is_empty() || !(horizon > 0.0) {
        return 0.0;
    }
    let uniform: Vec<f64> = (0..=REFINEMENT)
        .map(|k| horizon * k as f64 / REFINEMENT as f64)
        .collect();
    let mut total = 0.0;
    for (i, pred) in predictions.iter().enumerate() {
        let mut knots: Vec<f64> = uniform.clone();
        knots.extend(
            pred.grid()
                .times()
                .iter()
                .copied()
                .filter(|t| *t < horizon),
        );
        knots.sort_by(|a, b| a.partial_cmp(b).unwrap());
        knots.dedup();
        let mut acc = 0.0;
        for w in knots.windows(2) {
            let (a, b) = (w[0], w[1]);
            let c = pred.eval_unchecked(a);
            let f = |t: f64| (truth(i, t) - c).powi(2);
            acc += (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b));
        }
        total += acc / horizon;
    }
    total / predictions.len() as f64
}

/// Kaplan-Meier curves of the backward recurrence time (entry; fully
/// observed) and the forward recurrence time (residual; censored where the
/// event indicator is 0). Under stationarity of the onset process the two
/// curves estimate the same distribution, so a large gap flags a violation.
pub fn stationarity_curves(ds: &Dataset) -> Result<(StepCurve, StepCurve), EvalError> {
    if let Some(i) = (0..ds.n()).find(|&i| ds.entry()[i] <= 0.0 || ds.residual()[i] <= 0.0) {
        return Err(EvalError::NonPositiveTime(i));
    }
    let km_of = |times: &[f64], status: Box<dyn Fn(usize) -> u8>| -> Result<StepCurve, EvalError> {
        let records = times
            .iter()
            .enumerate()
            .map(|(i, t)| LbrcRecord::new(0.0, *t, status(i), vec![]))
            .collect();
        let plain = Dataset::new(records, Schema::default())?;
        let fit = km_ltrc(&plain, &CaseWeights::unit(times.len()))?;
        Ok(fit.survival().clone())
    };
    let backward = km_of(ds.entry(), Box::new(|_| 1))?;
    let status = ds.status().to_vec();
    let forward = km_of(ds.residual(), Box::new(move |i| status[i]))?;
    Ok((backward, forward))
}

/// Largest absolute gap between two survival curves over both jump sets.
pub fn sup_distance(a: &StepCurve, b: &StepCurve) -> f64 {
    let mut sup: f64 = 0.0;
    for (x, y) in [(a, b), (b, a)] {
        for (j, t) in x.grid().times().iter().enumerate() {
            let other = y.eval_unchecked(*t);
            sup = sup.max((x.values()[j] - other).abs());
            sup = sup.max((x.left_limit(j) - other).abs());
        }
    }
    sup
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curves::DistinctTimeGrid;
    use approx::assert_abs_diff_eq;

    fn bare_dataset(rows: &[(f64, f64, u8)]) -> Dataset {
        let records = rows
            .iter()
            .map(|&(entry, time, status)| LbrcRecord::new(entry, time, status, vec![]))
            .collect();
        Dataset::new(records, Schema::default()).unwrap()
    }

    fn flat_curve(grid_times: Vec<f64>, level: f64) -> StepCurve {
        let h = grid_times.len();
        StepCurve::survival(DistinctTimeGrid::new(grid_times).unwrap(), vec![level; h]).unwrap()
    }

    #[test]
    fn brier_zero_for_perfect_prediction_before_events() {
        let ds = bare_dataset(&[(0.0, 2.0, 1), (0.0, 3.0, 1)]);
        let preds = vec![flat_curve(vec![5.0], 1.0), flat_curve(vec![5.0], 1.0)];
        // all subjects still at risk at t=1 and predictions say survival 1
        assert_abs_diff_eq!(brier(&ds, &preds, 1.0).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn brier_single_subject_formula() {
        let ds = bare_dataset(&[(0.0, 2.0, 1)]);
        let preds = vec![flat_curve(vec![0.5], 0.7)];
        assert_abs_diff_eq!(brier(&ds, &preds, 1.0).unwrap(), 0.09, epsilon = 1e-12);
    }

    #[test]
    fn brier_constant_half_no_censoring() {
        let ds = bare_dataset(&[(0.0, 2.0, 1), (0.0, 3.0, 1), (0.0, 4.0, 1), (0.0, 5.0, 1)]);
        let preds: Vec<StepCurve> = (0..4).map(|_| flat_curve(vec![0.1], 0.5)).collect();
        assert_abs_diff_eq!(brier(&ds, &preds, 1.0).unwrap(), 0.25, epsilon = 1e-12);
    }

    #[test]
    fn ibs_perfect_indicator_predictions_without_censoring() {
        let rows = [(0.0, 1.0, 1), (0.0, 2.0, 1), (0.0, 3.0, 1)];
        let ds = bare_dataset(&rows);
        // indicator prediction: survival 1 before the subject's own event, 0 after
        let preds: Vec<Option<StepCurve>> = rows
            .iter()
            .map(|&(_, z, _)| {
                Some(
                    StepCurve::survival(DistinctTimeGrid::new(vec![z]).unwrap(), vec![0.0])
                        .unwrap(),
                )
            })
            .collect();
        let out = ibs(&ds, &preds).unwrap();
        assert_abs_diff_eq!(out.value, 0.0, epsilon = 1e-12);
        assert_eq!(out.excluded_subjects, 0);
        assert_eq!(out.excluded_times, 0);
    }

    #[test]
    fn ibs_matches_quadrature_oracle() {
        // predictions dropping to 0.5 at the first observed time, no
        // censoring: the Brier curve is piecewise constant between observed
        // times and the step integral must match fine-grid quadrature of
        // the same integrand.
        let rows = [(0.0, 1.0, 1), (0.0, 2.0, 1), (0.0, 3.5, 1), (0.0, 4.0, 1)];
        let ds = bare_dataset(&rows);
        let pred = flat_curve(vec![1.0], 0.5);
        let preds: Vec<Option<StepCurve>> = (0..4).map(|_| Some(pred.clone())).collect();
        let out = ibs(&ds, &preds).unwrap();

        // quadrature oracle on a fine uniform grid; no censoring means all
        // IPCW weights are 1
        let horizon = 4.0;
        let steps = 400_000;
        let mut quad = 0.0;
        for k in 0..steps {
            let t = horizon * (k as f64 + 0.5) / steps as f64;
            let mut bs = 0.0;
            for &(_, z, _) in &rows {
                let ind = if z > t { 1.0 } else { 0.0 };
                bs += (ind - pred.eval_at(t).unwrap()).powi(2);
            }
            quad += bs / 4.0 * (horizon / steps as f64);
        }
        quad /= horizon;
        assert_abs_diff_eq!(out.value, quad, epsilon = 1e-6);
    }

    #[test]
    fn ibs_invariant_under_duplication() {
        let rows = [(0.5, 1.5, 1), (0.2, 2.0, 0), (0.0, 3.0, 1)];
        let doubled = [rows.as_slice(), rows.as_slice()].concat();
        let ds1 = bare_dataset(&rows);
        let ds2 = bare_dataset(&doubled);
        let make_preds = |n: usize| -> Vec<Option<StepCurve>> {
            (0..n)
                .map(|i| Some(flat_curve(vec![1.0, 2.0], [0.8, 0.5, 0.3][i % 3])))
                .collect()
        };
        let a = ibs(&ds1, &make_preds(3)).unwrap();
        let b = ibs(&ds2, &make_preds(6)).unwrap();
        assert_abs_diff_eq!(a.value, b.value, epsilon = 1e-12);
    }

    #[test]
    fn ibs_counts_missing_predictions() {
        let ds = bare_dataset(&[(0.0, 1.0, 1), (0.0, 2.0, 1)]);
        let preds = vec![Some(flat_curve(vec![1.0], 0.5)), None];
        let out = ibs(&ds, &preds).unwrap();
        assert_eq!(out.excluded_subjects, 1);
    }

    #[test]
    fn integrated_l2_zero_when_exact_and_offset_squares() {
        // prediction effectively constant 0.6 from the origin on
        let pred = flat_curve(vec![1e-12], 0.6);
        let exact = integrated_l2(|_, _| 0.6, std::slice::from_ref(&pred), 3.0);
        assert_abs_diff_eq!(exact, 0.0, epsilon = 1e-10);

        // constant offset of 0.1 integrates to 0.01
        let offset = integrated_l2(|_, _| 0.7, std::slice::from_ref(&pred), 3.0);
        assert_abs_diff_eq!(offset, 0.01, epsilon = 1e-10);
    }

    #[test]
    fn integrated_l2_handles_smooth_truth() {
        // prediction identically 1; truth exp(-t); closed form of the
        // integral of (1 - e^-t)^2 over [0,H]
        let pred = StepCurve::survival(
            DistinctTimeGrid::new(vec![10.0]).unwrap(),
            vec![1.0],
        )
        .unwrap();
        let h = 2.0;
        let got = integrated_l2(|_, t| (-t).exp(), std::slice::from_ref(&pred), h);
        let exact = (h - 2.0 * (1.0 - (-h).exp()) + 0.5 * (1.0 - (-2.0 * h).exp())) / h;
        assert_abs_diff_eq!(got, exact, epsilon = 1e-9);
    }

    #[test]
    fn stationarity_curves_hand_km() {
        let ds = bare_dataset(&[(1.0, 2.0, 1), (2.0, 3.5, 1)]);
        let (backward, _forward) = stationarity_curves(&ds).unwrap();
        assert_abs_diff_eq!(backward.eval_at(1.0).unwrap(), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(backward.eval_at(2.0).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn stationarity_all_censored_forward_curve_is_flat() {
        let ds = bare_dataset(&[(1.0, 2.0, 0), (2.0, 3.5, 0)]);
        let (_, forward) = stationarity_curves(&ds).unwrap();
        assert_eq!(forward.eval_at(100.0).unwrap(), 1.0);
    }

    #[test]
    fn stationarity_rejects_zero_entry() {
        let ds = bare_dataset(&[(0.0, 2.0, 1)]);
        assert!(matches!(
            stationarity_curves(&ds),
            Err(EvalError::NonPositiveTime(0))
        ));
    }

    #[test]
    fn sup_distance_sees_interior_gaps() {
        let a = flat_curve(vec![1.0], 0.2);
        let b = flat_curve(vec![1.5], 0.2);
        // a drops at 1.0 while b is still 1 there
        assert_abs_diff_eq!(sup_distance(&a, &b), 0.8, epsilon = 1e-12);
    }
}
