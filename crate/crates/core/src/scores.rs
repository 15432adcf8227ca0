//! Per-subject influence scores feeding the linear-statistic machinery.
//!
//! Both score kinds reduce a subject's `(time, entry, status)` triple to a
//! scalar. The conditional (LTRC) score is the extended log-rank score
//! `status + log S(time) - log S(entry)` under the node-local risk-adjusted
//! Kaplan-Meier. The full-likelihood (LBRC) score replaces the entry term
//! with a node-level constant, the ratio of the integrals of `S log S` and
//! `S` over the node grid, with `S` taken from the selected backend's
//! log-survival view so the log term and the integral come from one
//! consistent object. Scores are recomputed at every node from the
//! node-local fit.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curves::{integrate_step, CurveError, StepCurve, Transform};
use crate::dataset::{CaseWeights, Dataset};
use crate::estimators::{km_ltrc, mcle, mfle, Backend, EmConfig, EstimatorError, SurvivalFit};

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Curve(#[from] CurveError),
}

/// Which influence score drives splitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreSpec {
    /// Conditional-likelihood log-rank score with the risk-adjusted KM.
    Ltrc,
    /// Full-likelihood score backed by the closed-form estimator.
    LbrcMcle,
    /// Full-likelihood score backed by the EM full-likelihood estimator.
    LbrcMfle,
}

impl ScoreSpec {
    pub fn backend(self) -> Backend {
        match self {
            ScoreSpec::Ltrc => Backend::LtrcKm,
            ScoreSpec::LbrcMcle => Backend::Mcle,
            ScoreSpec::LbrcMfle => Backend::Mfle,
        }
    }
}

impl std::fmt::Display for ScoreSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ScoreSpec::Ltrc => "ltrc",
            ScoreSpec::LbrcMcle => "lbrc-c",
            ScoreSpec::LbrcMfle => "lbrc-f",
        })
    }
}

/// Scalar scores for the node sample; entries outside the effective sample
/// (zero weight) are left at 0 and never enter a weighted statistic.
#[derive(Debug, Clone)]
pub struct InfluenceScores {
    pub values: Vec<f64>,
    pub spec: ScoreSpec,
}

/// Extended log-rank scores from the node-local weighted risk-adjusted KM.
pub fn ltrc_scores(ds: &Dataset, w: &CaseWeights) -> Result<InfluenceScores, ScoreError> {
    let fit = km_ltrc(ds, w)?;
    let mut values = vec![0.0; ds.n()];
    for i in w.support() {
        values[i] = f64::from(ds.status()[i]) + fit.log_survival_at(ds.time()[i])
            - fit.log_survival_at(ds.entry()[i]);
    }
    Ok(InfluenceScores {
        values,
        spec: ScoreSpec::Ltrc,
    })
}

/// Full-likelihood scores under the requested backend. The subtracted ratio
/// `∫ S log S / ∫ S` is one node-level constant; integration runs over
/// `[0, t_h]` of the node grid, the support of the fitted estimator.
pub fn lbrc_scores(
    ds: &Dataset,
    w: &CaseWeights,
    backend: Backend,
    em: &EmConfig,
) -> Result<InfluenceScores, ScoreError> {
    let (fit, spec): (Box<dyn SurvivalFit>, ScoreSpec) = match backend {
        Backend::Mfle => (Box::new(mfle(ds, w, em)?), ScoreSpec::LbrcMfle),
        _ => (Box::new(mcle(ds, w)?), ScoreSpec::LbrcMcle),
    };
    let ratio = log_survival_ratio(fit.as_ref())?;
    let mut values = vec![0.0; ds.n()];
    for i in w.support() {
        values[i] = f64::from(ds.status()[i]) + fit.log_survival_at(ds.time()[i]) - ratio;
    }
    Ok(InfluenceScores { values, spec })
}

/// Compute node scores per the requested spec.
pub fn compute_scores(
    ds: &Dataset,
    w: &CaseWeights,
    spec: ScoreSpec,
    em: &EmConfig,
) -> Result<InfluenceScores, ScoreError> {
    match spec {
        ScoreSpec::Ltrc => ltrc_scores(ds, w),
        ScoreSpec::LbrcMcle => lbrc_scores(ds, w, Backend::Mcle, em),
        ScoreSpec::LbrcMfle => lbrc_scores(ds, w, Backend::Mfle, em),
    }
}

/// `∫ S log S dt / ∫ S dt` over the fit's grid, with `S = exp(log-survival
/// view)`. Always `<= 0`: the numerator is nonpositive and the denominator
/// strictly positive.
fn log_survival_ratio(fit: &dyn SurvivalFit) -> Result<f64, ScoreError> {
    let grid = fit.grid().clone();
    let values: Vec<f64> = grid
        .times()
        .iter()
        .map(|t| fit.log_survival_at(*t).exp())
        .collect();
    let upper = grid.last();
    let curve = StepCurve::survival(grid, values)?;
    let denom = integrate_step(Transform::Identity, &curve, upper)?;
    let numer = integrate_step(Transform::SLogS, &curve, upper)?;
    Ok(numer / denom)
}
