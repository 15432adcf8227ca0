//! Conditional-inference survival trees.
//!
//! Each node tests the global null of independence between the influence
//! scores and the candidate covariates through weighted linear statistics
//! standardized by their permutation-conditional mean and covariance. The
//! covariate with the smallest multiplicity-adjusted p-value is selected,
//! the best binary split of that covariate maximizes the absolute
//! standardized two-sample statistic, and recursion stops when the adjusted
//! p-value exceeds the significance level or the size constraints bind.
//!
//! P-values are asymptotic chi-square by default, with an optional Monte
//! Carlo permutation alternative for small nodes.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

use crate::curves::{CurveError, StepCurve};
use crate::dataset::{CaseWeights, Column, CovValue, CovariateKind, Dataset};
use crate::estimators::{Backend, EmConfig, EstimatorError, SurvivalFit};
use crate::rng::substream;
use crate::scores::{compute_scores, InfluenceScores, ScoreError, ScoreSpec};

#[derive(Debug, Error)]
pub enum TreeError {
    #[error("invalid tree configuration: {0}")]
    InvalidConfig(String),
    #[error("node sample is empty")]
    EmptySample,
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Curve(#[from] CurveError),
    #[error("covariate vector length {got} does not match schema length {want}")]
    CovariateLength { got: usize, want: usize },
}

/// Tree controls. Standalone trees test at `alpha = 0.05` and consider all
/// covariates at every node; forest member trees switch off the test
/// (`alpha = 1`) and regulate complexity through `mtry` and the size
/// constraints instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    pub alpha: f64,
    pub min_split: f64,
    pub min_bucket: f64,
    pub min_prob: f64,
    pub max_depth: Option<usize>,
    /// Covariates sampled per node; `None` means all.
    pub mtry: Option<usize>,
    pub score: ScoreSpec,
    pub predict: Backend,
    pub em: EmConfig,
    /// Monte Carlo permutation p-values with this replication count instead
    /// of the chi-square asymptotics; requires integer case weights.
    pub mc_permutations: Option<usize>,
}

impl TreeConfig {
    pub fn standalone(score: ScoreSpec, predict: Backend) -> Self {
        TreeConfig {
            alpha: 0.05,
            min_split: 20.0,
            min_bucket: 7.0,
            min_prob: 0.01,
            max_depth: None,
            mtry: None,
            score,
            predict,
            em: EmConfig::default(),
            mc_permutations: None,
        }
    }

    /// Member-tree controls for a forest over `n` training subjects:
    /// no test-based stopping, size thresholds adapted to `sqrt(n)`.
    pub fn forest_member(score: ScoreSpec, predict: Backend, n: usize) -> Self {
        let sqrt_n = (n as f64).sqrt().ceil();
        TreeConfig {
            alpha: 1.0,
            min_split: sqrt_n.max(20.0),
            min_bucket: sqrt_n.max(7.0),
            ..TreeConfig::standalone(score, predict)
        }
    }

    fn check(&self, m: usize) -> Result<(), TreeError> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(TreeError::InvalidConfig(format!(
                "alpha {} outside (0, 1]",
                self.alpha
            )));
        }
        if self.min_bucket > self.min_split {
            return Err(TreeError::InvalidConfig(format!(
                "min_bucket {} exceeds min_split {}",
                self.min_bucket, self.min_split
            )));
        }
        if !(0.0..1.0).contains(&self.min_prob) {
            return Err(TreeError::InvalidConfig(format!(
                "min_prob {} outside [0, 1)",
                self.min_prob
            )));
        }
        if let Some(k) = self.mtry {
            if k == 0 || (m > 0 && k > m) {
                return Err(TreeError::InvalidConfig(format!(
                    "mtry {k} outside [1, {m}]"
                )));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Linear statistics and conditional moments.
// ---------------------------------------------------------------------------

/// Transformed view of one covariate column: identity for numeric, 1-based
/// rank for ordered, one indicator per level for categorical.
#[derive(Debug, Clone, Copy)]
pub enum GColumn<'a> {
    Scalar(&'a [f64]),
    Rank(&'a [u32]),
    Indicator { levels: &'a [u32], n_levels: usize },
}

impl<'a> GColumn<'a> {
    pub fn from_dataset(ds: &'a Dataset, j: usize) -> Self {
        match (ds.column(j), &ds.schema().fields[j].kind) {
            (Column::Numeric(v), _) => GColumn::Scalar(v),
            (Column::Level(v), CovariateKind::Ordered { .. }) => GColumn::Rank(v),
            (Column::Level(v), _) => GColumn::Indicator {
                levels: v,
                n_levels: ds.schema().fields[j].kind.n_levels().unwrap_or(0),
            },
        }
    }

    fn dim(&self) -> usize {
        match self {
            GColumn::Scalar(_) | GColumn::Rank(_) => 1,
            GColumn::Indicator { n_levels, .. } => *n_levels,
        }
    }

    fn scalar_at(&self, i: usize) -> f64 {
        match self {
            GColumn::Scalar(v) => v[i],
            GColumn::Rank(v) => f64::from(v[i]) + 1.0,
            GColumn::Indicator { .. } => unreachable!("indicator columns are not scalar"),
        }
    }
}

/// Weighted mean and variance of the scores over the node, the ingredients
/// of the permutation-conditional moments.
#[derive(Debug, Clone, Copy)]
pub struct NodeMoments {
    pub weight_total: f64,
    pub score_mean: f64,
    pub score_var: f64,
}

pub fn node_moments(scores: &[f64], w: &[f64], members: &[usize]) -> NodeMoments {
    let weight_total: f64 = members.iter().map(|&i| w[i]).sum();
    let score_mean = members.iter().map(|&i| w[i] * scores[i]).sum::<f64>() / weight_total;
    let score_var = members
        .iter()
        .map(|&i| w[i] * (scores[i] - score_mean).powi(2))
        .sum::<f64>()
        / weight_total;
    NodeMoments {
        weight_total,
        score_mean,
        score_var,
    }
}

#[derive(Debug, Clone)]
enum QuadForm {
    /// Zero variance: statistic defined as 0 with p-value 1.
    Degenerate,
    Scalar {
        sigma: f64,
    },
    Spectral {
        /// Column-major eigenvectors, retained eigenvalues.
        vectors: Vec<f64>,
        values: Vec<f64>,
        dim: usize,
    },
}

/// A standardized weighted linear statistic for one covariate.
#[derive(Debug, Clone)]
pub struct LinearStatistic {
    pub statistic: Vec<f64>,
    pub mean: Vec<f64>,
    /// Row-major `p x p` permutation-conditional covariance.
    pub covariance: Vec<f64>,
    /// Quadratic form `(T - mu)' Sigma^+ (T - mu)`; for scalar statistics
    /// this is the squared standardized statistic.
    pub c_value: f64,
    /// Rank of the covariance; degrees of freedom of the reference.
    pub dof: usize,
    pub p_value: f64,
    quad: QuadForm,
}

impl LinearStatistic {
    /// Re-evaluate the quadratic form for another statistic vector, reusing
    /// the observed moments (which are permutation-invariant).
    fn c_of(&self, t: &[f64]) -> f64 {
        match &self.quad {
            QuadForm::Degenerate => 0.0,
            QuadForm::Scalar { sigma } => (t[0] - self.mean[0]).powi(2) / sigma,
            QuadForm::Spectral {
                vectors,
                values,
                dim,
            } => {
                let mut c = 0.0;
                for (k, lambda) in values.iter().enumerate() {
                    let mut proj = 0.0;
                    for r in 0..*dim {
                        proj += vectors[k * dim + r] * (t[r] - self.mean[r]);
                    }
                    c += proj * proj / lambda;
                }
                c
            }
        }
    }
}

fn chi_square_sf(c: f64, dof: usize) -> f64 {
    ChiSquared::new(dof as f64)
        .map(|d| d.sf(c).clamp(0.0, 1.0))
        .unwrap_or(1.0)
}

/// Weighted linear statistic `T = sum_i w_i g(x_i) u_i` with its
/// permutation-conditional mean and covariance, the standardized quadratic
/// form, and the asymptotic chi-square p-value.
pub fn linear_statistic(
    g: &GColumn<'_>,
    scores: &[f64],
    w: &[f64],
    members: &[usize],
    moments: &NodeMoments,
) -> LinearStatistic {
    let p = g.dim();
    let wt = moments.weight_total;

    let mut sum_g = vec![0.0; p];
    let mut t = vec![0.0; p];
    // sum_i w_i g g' : dense for scalar, diagonal for indicators
    let mut sum_gg = vec![0.0; p * p];
    match g {
        GColumn::Scalar(_) | GColumn::Rank(_) => {
            for &i in members {
                let gi = g.scalar_at(i);
                sum_g[0] += w[i] * gi;
                sum_gg[0] += w[i] * gi * gi;
                t[0] += w[i] * gi * scores[i];
            }
        }
        GColumn::Indicator { levels, .. } => {
            for &i in members {
                let l = levels[i] as usize;
                sum_g[l] += w[i];
                sum_gg[l * p + l] += w[i];
                t[l] += w[i] * scores[i];
            }
        }
    }

    let mean: Vec<f64> = sum_g.iter().map(|s| s * moments.score_mean).collect();
    let mut covariance = vec![0.0; p * p];
    if wt > 1.0 {
        let a = wt / (wt - 1.0) * moments.score_var;
        let b = moments.score_var / (wt - 1.0);
        for r in 0..p {
            for c in 0..p {
                covariance[r * p + c] = a * sum_gg[r * p + c] - b * sum_g[r] * sum_g[c];
            }
        }
    }

    let degenerate = |t: Vec<f64>, mean: Vec<f64>, covariance: Vec<f64>| LinearStatistic {
        statistic: t,
        mean,
        covariance,
        c_value: 0.0,
        dof: 0,
        p_value: 1.0,
        quad: QuadForm::Degenerate,
    };

    if wt <= 1.0 || moments.score_var <= 0.0 {
        return degenerate(t, mean, covariance);
    }

    if p == 1 {
        let sigma = covariance[0];
        // relative floor: a constant covariate cancels to roundoff here
        let tol = 1e-12 * moments.score_var * sum_gg[0].abs().max(1.0);
        if !(sigma > tol) {
            return degenerate(t, mean, covariance);
        }
        let c = (t[0] - mean[0]).powi(2) / sigma;
        LinearStatistic {
            p_value: chi_square_sf(c, 1),
            c_value: c,
            dof: 1,
            quad: QuadForm::Scalar { sigma },
            statistic: t,
            mean,
            covariance,
        }
    } else {
        let mat = DMatrix::from_row_slice(p, p, &covariance);
        let eig = mat.symmetric_eigen();
        let max_eig = eig.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(*v));
        let tol = max_eig * 1e-12;
        let mut vectors = Vec::new();
        let mut values = Vec::new();
        for (k, lambda) in eig.eigenvalues.iter().enumerate() {
            if *lambda > tol && *lambda > 0.0 {
                values.push(*lambda);
                vectors.extend(eig.eigenvectors.column(k).iter().copied());
            }
        }
        if values.is_empty() {
            return degenerate(t, mean, covariance);
        }
        let quad = QuadForm::Spectral {
            vectors,
            values,
            dim: p,
        };
        let stat = LinearStatistic {
            statistic: t,
            mean,
            covariance,
            c_value: 0.0,
            dof: 0,
            p_value: 1.0,
            quad,
        };
        let c = stat.c_of(&stat.statistic);
        let dof = match &stat.quad {
            QuadForm::Spectral { values, .. } => values.len(),
            _ => unreachable!(),
        };
        LinearStatistic {
            c_value: c,
            dof,
            p_value: chi_square_sf(c, dof),
            ..stat
        }
    }
}

/// Monte Carlo permutation p-value for one covariate. The node's expanded
/// sample (records replicated by their integer weights) is permuted `b`
/// times and the quadratic form recomputed against the observed moments.
/// Returns `None` when the weights are not integer-valued.
fn monte_carlo_p(
    g: &GColumn<'_>,
    scores: &[f64],
    w: &[f64],
    members: &[usize],
    stat: &LinearStatistic,
    b: usize,
    rng: &mut ChaCha8Rng,
) -> Option<f64> {
    if matches!(stat.quad, QuadForm::Degenerate) {
        return Some(1.0);
    }
    let mut units: Vec<usize> = Vec::new();
    for &i in members {
        let k = w[i].round();
        if (w[i] - k).abs() > 1e-9 || k < 1.0 {
            return None;
        }
        for _ in 0..k as usize {
            units.push(i);
        }
    }
    let p = g.dim();
    let mut u: Vec<f64> = units.iter().map(|&i| scores[i]).collect();
    let mut hits = 0usize;
    let mut t = vec![0.0; p];
    for _ in 0..b {
        // Fisher-Yates
        for k in (1..u.len()).rev() {
            let j = rng.random_range(0..=k);
            u.swap(k, j);
        }
        t.iter_mut().for_each(|v| *v = 0.0);
        for (unit, ui) in units.iter().zip(&u) {
            match g {
                GColumn::Scalar(_) | GColumn::Rank(_) => t[0] += g.scalar_at(*unit) * ui,
                GColumn::Indicator { levels, .. } => t[levels[*unit] as usize] += ui,
            }
        }
        if stat.c_of(&t) >= stat.c_value - 1e-12 {
            hits += 1;
        }
    }
    Some((1 + hits) as f64 / (b + 1) as f64)
}

// ---------------------------------------------------------------------------
// Variable selection.
// ---------------------------------------------------------------------------

/// One tested candidate covariate.
#[derive(Debug, Clone)]
pub struct CandidateTest {
    pub covariate: usize,
    pub c_value: f64,
    pub p_raw: f64,
    pub p_adjusted: f64,
}

#[derive(Debug, Clone)]
pub struct Selection {
    pub tests: Vec<CandidateTest>,
    /// Selected covariate and its adjusted p-value (smallest, ties broken
    /// by covariate index).
    pub best: Option<(usize, f64)>,
}

impl Selection {
    pub fn rejects_at(&self, alpha: f64) -> bool {
        self.best.is_some_and(|(_, p)| p <= alpha)
    }
}

/// Test each candidate covariate against the scores, Bonferroni-adjust over
/// the candidate count, and pick the smallest adjusted p-value.
pub fn select_variable(
    ds: &Dataset,
    w: &CaseWeights,
    scores: &InfluenceScores,
    candidates: &[usize],
    mc: Option<(usize, &mut ChaCha8Rng)>,
) -> Selection {
    let members = w.support();
    let moments = node_moments(&scores.values, w, &members);
    let k = candidates.len() as f64;
    let mut tests = Vec::with_capacity(candidates.len());
    let mut mc = mc;
    for &j in candidates {
        let g = GColumn::from_dataset(ds, j);
        let stat = linear_statistic(&g, &scores.values, w, &members, &moments);
        let p_raw = match &mut mc {
            Some((b, rng)) => {
                monte_carlo_p(&g, &scores.values, w, &members, &stat, *b, rng)
                    .unwrap_or(stat.p_value)
            }
            None => stat.p_value,
        };
        tests.push(CandidateTest {
            covariate: j,
            c_value: stat.c_value,
            p_raw,
            p_adjusted: (p_raw * k).min(1.0),
        });
    }
    let best = tests
        .iter()
        .min_by(|a, b| {
            a.p_adjusted
                .partial_cmp(&b.p_adjusted)
                .unwrap()
                .then(a.covariate.cmp(&b.covariate))
        })
        .map(|t| (t.covariate, t.p_adjusted));
    Selection { tests, best }
}

// ---------------------------------------------------------------------------
// Split search.
// ---------------------------------------------------------------------------

/// A fitted binary split. Cut rules send `value <= cut` left; subset rules
/// send the listed levels left, with levels unseen at fit time routed to the
/// majority side recorded on the node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SplitRule {
    Cut { covariate: usize, cut: f64 },
    Subset {
        covariate: usize,
        left: Vec<u32>,
        right: Vec<u32>,
    },
}

impl SplitRule {
    pub fn covariate(&self) -> usize {
        match self {
            SplitRule::Cut { covariate, .. } | SplitRule::Subset { covariate, .. } => *covariate,
        }
    }

    /// True when `x` routes left; `None` for a level unseen at fit time.
    fn routes_left(&self, x: &CovValue) -> Option<bool> {
        match self {
            SplitRule::Cut { cut, .. } => Some(x.rank_value() <= *cut),
            SplitRule::Subset { left, right, .. } => match x {
                CovValue::Level(l) => {
                    if left.contains(l) {
                        Some(true)
                    } else if right.contains(l) {
                        Some(false)
                    } else {
                        None
                    }
                }
                CovValue::Numeric(_) => None,
            },
        }
    }
}

/// Exhaustive categorical subset search is bounded to this many observed
/// levels; beyond it, levels are ordered by mean score and cut like an
/// ordered covariate.
const MAX_EXHAUSTIVE_LEVELS: usize = 10;

struct SplitCandidate {
    stat: f64,
    rule: SplitRule,
    left_weight: f64,
    right_weight: f64,
}

/// Standardized absolute two-sample statistic of a left-group with weight
/// `wl` and weighted score sum `tl`.
fn split_statistic(wl: f64, tl: f64, m: &NodeMoments) -> f64 {
    let wr = m.weight_total - wl;
    let sigma = m.score_var * wl * wr / (m.weight_total - 1.0);
    if sigma > 0.0 {
        (tl - wl * m.score_mean).abs() / sigma.sqrt()
    } else {
        0.0
    }
}

/// Best admissible binary split of covariate `j`, maximizing the absolute
/// standardized two-sample statistic; `None` when no admissible split
/// exists.
pub fn best_split(
    ds: &Dataset,
    w: &CaseWeights,
    scores: &InfluenceScores,
    j: usize,
    min_child_weight: f64,
) -> Option<SplitRule> {
    let members = w.support();
    let moments = node_moments(&scores.values, w, &members);
    if moments.weight_total <= 1.0 {
        return None;
    }
    let admissible = |wl: f64, wr: f64| wl >= min_child_weight && wr >= min_child_weight;
    let mut best: Option<SplitCandidate> = None;
    let mut consider = |cand: SplitCandidate| {
        if admissible(cand.left_weight, cand.right_weight)
            && best.as_ref().is_none_or(|b| cand.stat > b.stat)
        {
            best = Some(cand);
        }
    };

    let is_exhaustive_categorical = matches!(
        ds.schema().fields[j].kind,
        CovariateKind::Categorical { .. }
    );
    match (ds.column(j), is_exhaustive_categorical) {
        (Column::Level(levels), true) => {
            let n_levels = ds.schema().fields[j].kind.n_levels().unwrap();
            let mut level_w = vec![0.0; n_levels];
            let mut level_t = vec![0.0; n_levels];
            for &i in &members {
                let l = levels[i] as usize;
                level_w[l] += w[i];
                level_t[l] += w[i] * scores.values[i];
            }
            let observed: Vec<u32> = (0..n_levels as u32)
                .filter(|l| level_w[*l as usize] > 0.0)
                .collect();
            if observed.len() < 2 {
                return None;
            }
            if observed.len() <= MAX_EXHAUSTIVE_LEVELS {
                // fix the first observed level on the left to visit each
                // unordered partition once
                let k = observed.len() - 1;
                for mask in 0..(1u32 << k) - 1 {
                    let mut left = vec![observed[0]];
                    for (b, l) in observed[1..].iter().enumerate() {
                        if mask & (1 << b) != 0 {
                            left.push(*l);
                        }
                    }
                    let (mut wl, mut tl) = (0.0, 0.0);
                    for l in &left {
                        wl += level_w[*l as usize];
                        tl += level_t[*l as usize];
                    }
                    let right: Vec<u32> = observed
                        .iter()
                        .filter(|l| !left.contains(l))
                        .copied()
                        .collect();
                    consider(SplitCandidate {
                        stat: split_statistic(wl, tl, &moments),
                        left_weight: wl,
                        right_weight: moments.weight_total - wl,
                        rule: SplitRule::Subset {
                            covariate: j,
                            left,
                            right,
                        },
                    });
                }
            } else {
                let mut ordered = observed.clone();
                ordered.sort_by(|a, b| {
                    let ma = level_t[*a as usize] / level_w[*a as usize];
                    let mb = level_t[*b as usize] / level_w[*b as usize];
                    ma.partial_cmp(&mb).unwrap().then(a.cmp(b))
                });
                let (mut wl, mut tl) = (0.0, 0.0);
                for cut in 0..ordered.len() - 1 {
                    wl += level_w[ordered[cut] as usize];
                    tl += level_t[ordered[cut] as usize];
                    let mut left = ordered[..=cut].to_vec();
                    left.sort_unstable();
                    let mut right = ordered[cut + 1..].to_vec();
                    right.sort_unstable();
                    consider(SplitCandidate {
                        stat: split_statistic(wl, tl, &moments),
                        left_weight: wl,
                        right_weight: moments.weight_total - wl,
                        rule: SplitRule::Subset {
                            covariate: j,
                            left,
                            right,
                        },
                    });
                }
            }
        }
        _ => {
            // numeric or ordered: sweep cutpoints between consecutive
            // distinct values
            let g = GColumn::from_dataset(ds, j);
            let mut items: Vec<(f64, f64, f64)> = members
                .iter()
                .map(|&i| (g.scalar_at(i), w[i], w[i] * scores.values[i]))
                .collect();
            items.sort_unstable_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            let (mut wl, mut tl) = (0.0, 0.0);
            let mut idx = 0;
            while idx < items.len() {
                let v = items[idx].0;
                while idx < items.len() && items[idx].0 == v {
                    wl += items[idx].1;
                    tl += items[idx].2;
                    idx += 1;
                }
                if idx == items.len() {
                    break;
                }
                consider(SplitCandidate {
                    stat: split_statistic(wl, tl, &moments),
                    left_weight: wl,
                    right_weight: moments.weight_total - wl,
                    rule: SplitRule::Cut {
                        covariate: j,
                        cut: 0.5 * (v + items[idx].0),
                    },
                });
            }
        }
    }
    best.map(|b| b.rule)
}

// ---------------------------------------------------------------------------
// Tree growth.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NodeKind {
    Split {
        rule: SplitRule,
        /// Heavier child at fit time; receives unseen categorical levels.
        majority_left: bool,
        children: [usize; 2],
    },
    Leaf {
        /// Training indices with positive weight in this node.
        members: Vec<usize>,
        /// Set when the node has no events, so a full-likelihood prediction
        /// falls back to the composite estimator here.
        mfle_fallback: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub depth: usize,
    /// Smallest adjusted p-value seen at this node, when a test ran.
    pub p_value: Option<f64>,
    pub kind: NodeKind,
}

/// A fitted tree. Terminal nodes retain their member indices so that
/// prediction can refit the chosen estimator on the node sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeModel {
    pub nodes: Vec<TreeNode>,
    pub config: TreeConfig,
    pub n_train: usize,
    pub seed: u64,
}

struct Grower<'a> {
    ds: &'a Dataset,
    config: &'a TreeConfig,
    rng: ChaCha8Rng,
    nodes: Vec<TreeNode>,
    min_child_weight: f64,
}

impl<'a> Grower<'a> {
    fn leaf(&mut self, members: Vec<usize>, depth: usize, p_value: Option<f64>) -> usize {
        let mfle_fallback = !members.iter().any(|&i| self.ds.is_event(i));
        self.nodes.push(TreeNode {
            depth,
            p_value,
            kind: NodeKind::Leaf {
                members,
                mfle_fallback,
            },
        });
        self.nodes.len() - 1
    }

    fn draw_candidates(&mut self) -> Vec<usize> {
        let m = self.ds.m();
        let k = self.config.mtry.unwrap_or(m).min(m);
        if k >= m {
            (0..m).collect()
        } else {
            let mut picked = rand::seq::index::sample(&mut self.rng, m, k).into_vec();
            picked.sort_unstable();
            picked
        }
    }

    fn grow(&mut self, w: &CaseWeights, depth: usize) -> Result<usize, TreeError> {
        let members = w.support();
        if members.is_empty() {
            return Err(TreeError::EmptySample);
        }
        let depth_ok = self.config.max_depth.map_or(true, |cap| depth < cap);
        if !depth_ok || w.total() < self.config.min_split || members.len() < 2 {
            return Ok(self.leaf(members, depth, None));
        }
        if self.config.score == ScoreSpec::LbrcMfle && !members.iter().any(|&i| self.ds.is_event(i))
        {
            // full-likelihood scores are undefined without events
            return Ok(self.leaf(members, depth, None));
        }

        let scores = compute_scores(self.ds, w, self.config.score, &self.config.em)?;
        let candidates = self.draw_candidates();
        if candidates.is_empty() {
            return Ok(self.leaf(members, depth, None));
        }
        let selection = {
            let mc = self.config.mc_permutations;
            let mut rng = self.rng.clone();
            let sel = select_variable(
                self.ds,
                w,
                &scores,
                &candidates,
                mc.map(|b| (b, &mut rng)),
            );
            self.rng = rng;
            sel
        };
        let Some((best_j, p_adj)) = selection.best else {
            return Ok(self.leaf(members, depth, None));
        };
        if p_adj > self.config.alpha {
            return Ok(self.leaf(members, depth, Some(p_adj)));
        }
        let Some(rule) = best_split(self.ds, w, &scores, best_j, self.min_child_weight) else {
            return Ok(self.leaf(members, depth, Some(p_adj)));
        };

        let mut left_w = vec![0.0; self.ds.n()];
        let mut right_w = vec![0.0; self.ds.n()];
        let col = self.ds.column(rule.covariate());
        for &i in &members {
            match rule.routes_left(&col.value(i)) {
                Some(true) => left_w[i] = w[i],
                Some(false) => right_w[i] = w[i],
                None => unreachable!("fitted split covers all observed levels"),
            }
        }
        let left_w = CaseWeights::new(left_w).expect("weights stay valid");
        let right_w = CaseWeights::new(right_w).expect("weights stay valid");
        let majority_left = left_w.total() >= right_w.total();

        let node_id = self.nodes.len();
        self.nodes.push(TreeNode {
            depth,
            p_value: Some(p_adj),
            kind: NodeKind::Leaf {
                members: Vec::new(),
                mfle_fallback: false,
            },
        });
        let left_id = self.grow(&left_w, depth + 1)?;
        let right_id = self.grow(&right_w, depth + 1)?;
        self.nodes[node_id].kind = NodeKind::Split {
            rule,
            majority_left,
            children: [left_id, right_id],
        };
        Ok(node_id)
    }
}

/// Grow a conditional-inference tree on the weighted sample. Deterministic
/// for a fixed `(data, config, seed)` triple.
pub fn grow_tree(
    ds: &Dataset,
    w: &CaseWeights,
    config: &TreeConfig,
    seed: u64,
) -> Result<TreeModel, TreeError> {
    config.check(ds.m())?;
    if w.total() <= 0.0 {
        return Err(TreeError::EmptySample);
    }
    let mut grower = Grower {
        ds,
        config,
        rng: substream(seed, "tree-nodes", 0),
        nodes: Vec::new(),
        min_child_weight: config.min_bucket.max(config.min_prob * w.total()),
    };
    let root = grower.grow(w, 0)?;
    debug_assert_eq!(root, 0);
    Ok(TreeModel {
        nodes: grower.nodes,
        config: config.clone(),
        n_train: ds.n(),
        seed,
    })
}

impl TreeModel {
    pub fn leaf_ids(&self) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&i| matches!(self.nodes[i].kind, NodeKind::Leaf { .. }))
            .collect()
    }

    pub fn n_leaves(&self) -> usize {
        self.leaf_ids().len()
    }

    pub fn leaf_members(&self, leaf: usize) -> &[usize] {
        match &self.nodes[leaf].kind {
            NodeKind::Leaf { members, .. } => members,
            NodeKind::Split { .. } => panic!("node {leaf} is not a leaf"),
        }
    }

    /// Route a covariate vector to its terminal node id.
    pub fn route(&self, x: &[CovValue]) -> Result<usize, TreeError> {
        let mut node = 0;
        loop {
            match &self.nodes[node].kind {
                NodeKind::Leaf { .. } => return Ok(node),
                NodeKind::Split {
                    rule,
                    majority_left,
                    children,
                } => {
                    if rule.covariate() >= x.len() {
                        return Err(TreeError::CovariateLength {
                            got: x.len(),
                            want: rule.covariate() + 1,
                        });
                    }
                    let left = rule
                        .routes_left(&x[rule.covariate()])
                        .unwrap_or(*majority_left);
                    node = children[usize::from(!left)];
                }
            }
        }
    }

    /// Fit the prediction backend on a terminal node's members with unit
    /// weights. No-event leaves fall back from the full-likelihood
    /// estimator to the composite one.
    pub fn leaf_curve(&self, ds: &Dataset, leaf: usize) -> Result<StepCurve, TreeError> {
        let (members, fallback) = match &self.nodes[leaf].kind {
            NodeKind::Leaf {
                members,
                mfle_fallback,
            } => (members, *mfle_fallback),
            NodeKind::Split { .. } => panic!("node {leaf} is not a leaf"),
        };
        let mut w = vec![0.0; ds.n()];
        for &i in members {
            w[i] = 1.0;
        }
        let w = CaseWeights::new(w).expect("unit membership weights are valid");
        let backend = match self.config.predict {
            Backend::Mfle if fallback => Backend::Mcle,
            b => b,
        };
        let fit = backend.fit(ds, &w, &self.config.em)?;
        Ok(fit.survival().clone())
    }

    /// Survival prediction for one covariate vector.
    pub fn predict(&self, ds: &Dataset, x: &[CovValue]) -> Result<StepCurve, TreeError> {
        if x.len() != ds.m() {
            return Err(TreeError::CovariateLength {
                got: x.len(),
                want: ds.m(),
            });
        }
        let leaf = self.route(x)?;
        self.leaf_curve(ds, leaf)
    }
}

/// Caches terminal-node curves across repeated predictions from one tree.
pub struct TreePredictor<'a> {
    model: &'a TreeModel,
    ds: &'a Dataset,
    cache: HashMap<usize, Arc<StepCurve>>,
}

impl<'a> TreePredictor<'a> {
    pub fn new(model: &'a TreeModel, ds: &'a Dataset) -> Self {
        TreePredictor {
            model,
            ds,
            cache: HashMap::new(),
        }
    }

    pub fn predict(&mut self, x: &[CovValue]) -> Result<Arc<StepCurve>, TreeError> {
        let leaf = self.model.route(x)?;
        if let Some(curve) = self.cache.get(&leaf) {
            return Ok(Arc::clone(curve));
        }
        let curve = Arc::new(self.model.leaf_curve(self.ds, leaf)?);
        self.cache.insert(leaf, Arc::clone(&curve));
        Ok(curve)
    }
}
