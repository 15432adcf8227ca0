//! Bootstrap forests of conditional-inference trees.
//!
//! Member trees grow on with-replacement bootstrap multiplicities with the
//! independence test switched off; complexity is regulated by `mtry` and the
//! size constraints. Prediction aggregates terminal-node co-membership into
//! nearest-neighbor weights and feeds them to the weighted one-sample
//! estimator, so the ensemble inherits every survival-curve invariant from
//! the estimators. Out-of-bag weights drive `mtry` tuning by integrated
//! Brier score.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cit::{grow_tree, TreeConfig, TreeError, TreeModel};
use crate::curves::StepCurve;
use crate::dataset::{CaseWeights, CovValue, Dataset};
use crate::estimators::{Backend, EstimatorError, SurvivalFit};
use crate::eval::{ibs, EvalError, IbsResult};
use crate::rng::{derive_seed, substream};
use crate::scores::ScoreSpec;

#[derive(Debug, Error)]
pub enum ForestError {
    #[error("invalid forest configuration: {0}")]
    InvalidConfig(String),
    #[error("subject {0} is in-bag for every tree; no out-of-bag coverage")]
    NoOobCoverage(usize),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Forest controls. `tree` carries the member-tree settings (no test-based
/// stopping, `sqrt(n)`-adapted size constraints); `mtry` overrides the
/// member config at growth time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub tree: TreeConfig,
    pub mtry: usize,
    pub bootstrap: bool,
    pub seed: u64,
}

impl ForestConfig {
    /// Defaults for a sample of `n` subjects and `m` covariates: 100 trees,
    /// `mtry = ceil(sqrt(m))`.
    pub fn new(score: ScoreSpec, predict: Backend, n: usize, m: usize, seed: u64) -> Self {
        ForestConfig {
            n_trees: 100,
            tree: TreeConfig::forest_member(score, predict, n),
            mtry: default_mtry(m),
            bootstrap: true,
            seed,
        }
    }

    fn check(&self) -> Result<(), ForestError> {
        if self.n_trees == 0 {
            return Err(ForestError::InvalidConfig("n_trees must be >= 1".into()));
        }
        Ok(())
    }

    fn member_config(&self) -> TreeConfig {
        TreeConfig {
            mtry: Some(self.mtry),
            ..self.tree.clone()
        }
    }
}

pub fn default_mtry(m: usize) -> usize {
    (m as f64).sqrt().ceil() as usize
}

/// Candidate grid `{1, ceil(sqrt(m)), ceil(m/4), ceil(m/2), ceil(3m/4), m}`,
/// deduplicated and sorted.
pub fn default_tune_grid(m: usize) -> Vec<usize> {
    let mut grid = vec![
        1,
        default_mtry(m),
        m.div_ceil(4),
        m.div_ceil(2),
        (3 * m).div_ceil(4),
        m,
    ];
    grid.sort_unstable();
    grid.dedup();
    grid.retain(|k| *k >= 1 && *k <= m);
    grid
}

/// A fitted forest: member trees plus their bootstrap multiplicities. The
/// out-of-bag set of tree `b` is the set of indices with multiplicity 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<TreeModel>,
    pub inbag: Vec<Vec<u32>>,
    pub config: ForestConfig,
    pub n_train: usize,
}

/// Grow `n_trees` bootstrap trees. Tree `b` draws its multiplicities and its
/// node-level randomness from substreams of `(seed, b)` only, so the forest
/// is reproducible regardless of worker count.
pub fn grow_forest(ds: &Dataset, config: &ForestConfig) -> Result<ForestModel, ForestError> {
    config.check()?;
    let member_config = config.member_config();
    let n = ds.n();
    let results: Vec<Result<(TreeModel, Vec<u32>), TreeError>> = (0..config.n_trees)
        .into_par_iter()
        .map(|b| {
            let mut counts = vec![0u32; n];
            if config.bootstrap {
                let mut rng = substream(config.seed, "bootstrap", b as u64);
                for _ in 0..n {
                    counts[rng.random_range(0..n)] += 1;
                }
            } else {
                counts.fill(1);
            }
            let w = CaseWeights::from_counts(&counts);
            let tree_seed = derive_seed(config.seed, "tree", b as u64);
            let tree = grow_tree(ds, &w, &member_config, tree_seed)?;
            Ok((tree, counts))
        })
        .collect();
    let mut trees = Vec::with_capacity(config.n_trees);
    let mut inbag = Vec::with_capacity(config.n_trees);
    for r in results {
        let (tree, counts) = r?;
        trees.push(tree);
        inbag.push(counts);
    }
    Ok(ForestModel {
        trees,
        inbag,
        config: config.clone(),
        n_train: n,
    })
}

/// Which member trees contribute to a weight computation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TreeFilter {
    All,
    /// Only trees for which the given training subject is out of bag.
    OobFor(usize),
}

/// Nearest-neighbor weights over the training subjects; nonnegative and
/// summing to one whenever at least one tree contributes.
#[derive(Debug, Clone, PartialEq)]
pub struct ForestWeights {
    pub values: Vec<f64>,
}

/// Average, over the selected trees, of normalized bootstrap multiplicities
/// within the terminal node that `x` falls into.
pub fn forest_weights(
    model: &ForestModel,
    x: &[CovValue],
    filter: TreeFilter,
) -> Result<ForestWeights, ForestError> {
    let mut values = vec![0.0; model.n_train];
    let mut used = 0usize;
    for (tree, counts) in model.trees.iter().zip(&model.inbag) {
        if let TreeFilter::OobFor(i) = filter {
            if counts[i] != 0 {
                continue;
            }
        }
        used += 1;
        let leaf = tree.route(x)?;
        let members = tree.leaf_members(leaf);
        let total: f64 = members.iter().map(|&i| f64::from(counts[i])).sum();
        for &i in members {
            values[i] += f64::from(counts[i]) / total;
        }
    }
    if used == 0 {
        let subject = match filter {
            TreeFilter::OobFor(i) => i,
            TreeFilter::All => usize::MAX,
        };
        return Err(ForestError::NoOobCoverage(subject));
    }
    for v in values.iter_mut() {
        *v /= used as f64;
    }
    Ok(ForestWeights { values })
}

/// Weighted one-sample fit of the forest's prediction backend under the
/// nearest-neighbor weights for `x`, over the full training sample.
pub fn predict_forest(
    model: &ForestModel,
    ds: &Dataset,
    x: &[CovValue],
) -> Result<StepCurve, ForestError> {
    let weights = forest_weights(model, x, TreeFilter::All)?;
    predict_with_weights(model, ds, weights)
}

fn predict_with_weights(
    model: &ForestModel,
    ds: &Dataset,
    weights: ForestWeights,
) -> Result<StepCurve, ForestError> {
    let w = CaseWeights::new(weights.values).expect("forest weights are nonnegative");
    let fit = model.config.tree.predict.fit(ds, &w, &model.config.tree.em)?;
    Ok(fit.survival().clone())
}

/// Out-of-bag survival curve of each training subject, used by tuning.
/// Subjects with no out-of-bag coverage, or whose weighted fit is not
/// computable (e.g. an all-censored weight support under the
/// full-likelihood backend), yield `None` and are counted by the caller.
pub fn oob_predictions(model: &ForestModel, ds: &Dataset) -> Vec<Option<StepCurve>> {
    (0..ds.n())
        .into_par_iter()
        .map(|i| {
            let weights = forest_weights(model, &ds.covariate_row(i), TreeFilter::OobFor(i)).ok()?;
            predict_with_weights(model, ds, weights).ok()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneOutcome {
    pub chosen: usize,
    /// Per-candidate `(mtry, out-of-bag integrated Brier score)`.
    pub candidates: Vec<(usize, f64)>,
    /// Subjects excluded from at least one candidate's IBS average.
    pub skipped_subjects: usize,
}

/// Pick `mtry` by minimizing the out-of-bag integrated Brier score of the
/// unbiased survival predictions across the candidate grid. Ties go to the
/// smaller candidate.
pub fn tune_mtry(
    ds: &Dataset,
    base: &ForestConfig,
    grid: &[usize],
) -> Result<TuneOutcome, ForestError> {
    let mut grid: Vec<usize> = grid.to_vec();
    grid.sort_unstable();
    grid.dedup();
    if grid.is_empty() {
        return Err(ForestError::InvalidConfig("empty tuning grid".into()));
    }
    if grid.iter().any(|k| *k < 1 || *k > ds.m()) {
        return Err(ForestError::InvalidConfig(format!(
            "tuning grid {grid:?} outside [1, {}]",
            ds.m()
        )));
    }
    let mut candidates = Vec::with_capacity(grid.len());
    let mut skipped = 0usize;
    for &mtry in &grid {
        let config = ForestConfig {
            mtry,
            ..base.clone()
        };
        let forest = grow_forest(ds, &config)?;
        let preds = oob_predictions(&forest, ds);
        let IbsResult {
            value,
            excluded_subjects,
            ..
        } = ibs(ds, &preds)?;
        skipped = skipped.max(excluded_subjects);
        candidates.push((mtry, value));
    }
    let chosen = candidates
        .iter()
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)))
        .map(|c| c.0)
        .expect("grid is nonempty");
    Ok(TuneOutcome {
        chosen,
        candidates,
        skipped_subjects: skipped,
    })
}
