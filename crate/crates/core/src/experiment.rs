//! Experiment orchestration: factorial simulation sweeps with tidy CSV
//! output, and wall-clock benchmarking of the fitting methods.

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cif::{
    default_tune_grid, grow_forest, predict_forest, tune_mtry, ForestConfig, ForestError,
};
use crate::cit::{grow_tree, TreeConfig, TreeError, TreeModel, TreePredictor};
use crate::curves::StepCurve;
use crate::dataset::{CaseWeights, CovValue, Dataset};
use crate::estimators::{Backend, EmConfig, EstimatorError, SurvivalFit};
use crate::eval::integrated_l2;
use crate::rng::derive_seed;
use crate::scores::ScoreSpec;
use crate::simgen::{
    recovery_check, sample_lbrc, sample_unbiased_test, FamilyKind, Law, Layout, ResolvedScenario,
    ScenarioSpec, SimError, TrueModel,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// The fitting methods compared by the simulation experiments: pooled
/// one-sample estimators, single trees, and tuned-or-fixed-mtry forests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    OneSampleLtrc,
    OneSampleMfle,
    OneSampleMcle,
    CitLtrc,
    /// Full-likelihood construction and prediction.
    CitFF,
    /// Composite construction and prediction.
    CitCC,
    /// Full-likelihood construction, composite prediction.
    CitFC,
    /// Composite construction, full-likelihood prediction.
    CitCF,
    CifLtrc,
    CifMcle,
    CifMfle,
}

impl Method {
    pub const ALL: [Method; 11] = [
        Method::OneSampleLtrc,
        Method::OneSampleMfle,
        Method::OneSampleMcle,
        Method::CitLtrc,
        Method::CitFF,
        Method::CitCC,
        Method::CitFC,
        Method::CitCF,
        Method::CifLtrc,
        Method::CifMcle,
        Method::CifMfle,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Method::OneSampleLtrc => "km1",
            Method::OneSampleMfle => "mfle1",
            Method::OneSampleMcle => "mcle1",
            Method::CitLtrc => "cit-ltrc",
            Method::CitFF => "cit-ff",
            Method::CitCC => "cit-cc",
            Method::CitFC => "cit-fc",
            Method::CitCF => "cit-cf",
            Method::CifLtrc => "cif-ltrc",
            Method::CifMcle => "cif-c",
            Method::CifMfle => "cif-f",
        }
    }

    pub fn parse(code: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.code() == code)
    }

    pub fn is_tree(self) -> bool {
        matches!(
            self,
            Method::CitLtrc | Method::CitFF | Method::CitCC | Method::CitFC | Method::CitCF
        )
    }

    pub fn is_forest(self) -> bool {
        matches!(self, Method::CifLtrc | Method::CifMcle | Method::CifMfle)
    }

    /// Influence-score spec and prediction backend of the method.
    pub fn score_and_predict(self) -> (ScoreSpec, Backend) {
        match self {
            Method::OneSampleLtrc | Method::CitLtrc | Method::CifLtrc => {
                (ScoreSpec::Ltrc, Backend::LtrcKm)
            }
            Method::OneSampleMfle | Method::CitFF | Method::CifMfle => {
                (ScoreSpec::LbrcMfle, Backend::Mfle)
            }
            Method::OneSampleMcle | Method::CitCC | Method::CifMcle => {
                (ScoreSpec::LbrcMcle, Backend::Mcle)
            }
            Method::CitFC => (ScoreSpec::LbrcMfle, Backend::Mcle),
            Method::CitCF => (ScoreSpec::LbrcMcle, Backend::Mfle),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StructureKind {
    Tree,
    Linear,
    Nonlinear,
}

impl StructureKind {
    pub fn law(self, family: FamilyKind) -> Result<Law, SimError> {
        match self {
            StructureKind::Tree => Ok(Law::tree(family)),
            StructureKind::Linear => Law::linear(family),
            StructureKind::Nonlinear => Law::nonlinear(family),
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            StructureKind::Tree => "tree",
            StructureKind::Linear => "linear",
            StructureKind::Nonlinear => "nonlinear",
        }
    }

    pub fn parse(code: &str) -> Option<Self> {
        [
            StructureKind::Tree,
            StructureKind::Linear,
            StructureKind::Nonlinear,
        ]
        .into_iter()
        .find(|s| s.code() == code)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioDef {
    pub structure: StructureKind,
    pub family: FamilyKind,
    pub n: usize,
    pub censoring: f64,
}

/// How forests choose `mtry` inside an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MtrySetting {
    /// `ceil(sqrt(m))`.
    Default,
    Fixed(usize),
    /// Out-of-bag tuning over the given grid (`None` = built-in grid).
    Tune(Option<Vec<usize>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub scenarios: Vec<ScenarioDef>,
    pub methods: Vec<Method>,
    pub trials: usize,
    pub seed: u64,
    pub n_trees: usize,
    pub mtry: MtrySetting,
    pub em: EmConfig,
    /// Significance level for standalone trees.
    pub alpha: f64,
}

impl ExperimentPlan {
    pub fn new(scenarios: Vec<ScenarioDef>, methods: Vec<Method>, trials: usize, seed: u64) -> Self {
        ExperimentPlan {
            scenarios,
            methods,
            trials,
            seed,
            n_trees: 100,
            mtry: MtrySetting::Default,
            em: EmConfig::default(),
            alpha: 0.05,
        }
    }

    fn check(&self) -> Result<(), ExperimentError> {
        if self.trials == 0 {
            return Err(ExperimentError::InvalidPlan("trials must be >= 1".into()));
        }
        if self.methods.is_empty() {
            return Err(ExperimentError::InvalidPlan("methods list is empty".into()));
        }
        if self.scenarios.is_empty() {
            return Err(ExperimentError::InvalidPlan("scenario grid is empty".into()));
        }
        Ok(())
    }
}

/// Fit one method and predict the test points. Also returns the fitted tree
/// for structure-recovery scoring when the method is a single tree.
pub fn fit_predict(
    method: Method,
    ds: &Dataset,
    test_xs: &[Vec<CovValue>],
    plan: &ExperimentPlan,
    fit_seed: u64,
) -> Result<(Vec<StepCurve>, Option<TreeModel>), MethodError> {
    let (score, predict) = method.score_and_predict();
    if method.is_tree() {
        let mut config = TreeConfig::standalone(score, predict);
        config.alpha = plan.alpha;
        config.em = plan.em;
        let model = grow_tree(ds, &CaseWeights::unit(ds.n()), &config, fit_seed)?;
        let mut predictor = TreePredictor::new(&model, ds);
        let mut curves = Vec::with_capacity(test_xs.len());
        for x in test_xs {
            curves.push((*predictor.predict(x)?).clone());
        }
        Ok((curves, Some(model)))
    } else if method.is_forest() {
        let mut config = ForestConfig::new(score, predict, ds.n(), ds.m(), fit_seed);
        config.n_trees = plan.n_trees;
        config.tree.em = plan.em;
        match &plan.mtry {
            MtrySetting::Default => {}
            MtrySetting::Fixed(k) => config.mtry = *k,
            MtrySetting::Tune(grid) => {
                let grid = grid.clone().unwrap_or_else(|| default_tune_grid(ds.m()));
                config.mtry = tune_mtry(ds, &config, &grid)?.chosen;
            }
        }
        let forest = grow_forest(ds, &config)?;
        let curves = test_xs
            .par_iter()
            .map(|x| predict_forest(&forest, ds, x))
            .collect::<Result<Vec<_>, _>>()?;
        Ok((curves, None))
    } else {
        let w = CaseWeights::unit(ds.n());
        let fit = predict.fit(ds, &w, &plan.em)?;
        let curve = fit.survival().clone();
        Ok((vec![curve; test_xs.len()], None))
    }
}

#[derive(Debug, Error)]
pub enum MethodError {
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
}

/// Run the factorial sweep and emit tidy rows
/// `trial,method,structure,family,n,cens,metric,value`. Per-trial failures
/// become `status` rows; they never abort the sweep. Deterministic per
/// `(plan, seed)`, independent of worker count.
pub fn run_experiment(
    plan: &ExperimentPlan,
    out: &mut dyn Write,
) -> Result<(), ExperimentError> {
    plan.check()?;
    writeln!(out, "trial,method,structure,family,n,cens,metric,value")?;
    for (scenario_idx, def) in plan.scenarios.iter().enumerate() {
        let scenario = Arc::new(
            ScenarioSpec {
                law: def.structure.law(def.family)?,
                layout: Layout::Paper30,
                n: def.n,
                target_censoring: def.censoring,
                seed: derive_seed(plan.seed, "scenario", scenario_idx as u64),
            }
            .resolve()?,
        );
        let rows: Vec<Vec<String>> = (0..plan.trials)
            .into_par_iter()
            .map(|trial| {
                trial_rows(plan, def, &scenario, scenario_idx, trial)
            })
            .collect();
        for trial in rows {
            for row in trial {
                writeln!(out, "{row}")?;
            }
        }
    }
    Ok(())
}

fn trial_rows(
    plan: &ExperimentPlan,
    def: &ScenarioDef,
    scenario: &ResolvedScenario,
    scenario_idx: usize,
    trial: usize,
) -> Vec<String> {
    let mut rows = Vec::new();
    let tag = |method: Method, metric: &str, value: f64| {
        format!(
            "{trial},{},{},{},{},{},{metric},{value}",
            method.code(),
            def.structure.code(),
            def.family,
            def.n,
            def.censoring
        )
    };
    let stream = (scenario_idx * plan.trials + trial) as u64;
    let data = sample_lbrc(scenario, derive_seed(plan.seed, "trial-data", stream));
    let (ds, _truth) = match data {
        Ok(d) => d,
        Err(_) => {
            for &method in &plan.methods {
                rows.push(tag(method, "status", 1.0));
            }
            return rows;
        }
    };
    let (test_xs, test_failures) =
        sample_unbiased_test(scenario, def.n, derive_seed(plan.seed, "trial-test", stream));
    let horizon = test_failures.iter().copied().fold(0.0_f64, f64::max);
    let truth = TrueModel::new(&scenario.spec.law);

    for (method_idx, &method) in plan.methods.iter().enumerate() {
        let fit_seed = derive_seed(
            plan.seed,
            "fit",
            (stream * plan.methods.len() as u64) + method_idx as u64,
        );
        match fit_predict(method, &ds, &test_xs, plan, fit_seed) {
            Ok((curves, tree)) => {
                let l2 = integrated_l2(
                    |i, t| truth.survival(&test_xs[i], t),
                    &curves,
                    horizon,
                );
                rows.push(tag(method, "l2", l2));
                if let (Some(model), StructureKind::Tree) = (tree, def.structure) {
                    let recovered = recovery_check(&model);
                    rows.push(tag(method, "recovery", f64::from(u8::from(recovered))));
                }
            }
            Err(_) => rows.push(tag(method, "status", 1.0)),
        }
    }
    rows
}

// ---------------------------------------------------------------------------
// Benchmarks.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub method: Method,
    pub n: usize,
    pub median_seconds: f64,
}

/// Median wall-clock fit time per method and sample size over `reps`
/// repetitions, on the tree-structured decreasing-hazard scenario at 20%
/// censoring.
pub fn bench(
    methods: &[Method],
    sizes: &[usize],
    reps: usize,
    seed: u64,
) -> Result<Vec<BenchRow>, ExperimentError> {
    if reps == 0 || methods.is_empty() || sizes.is_empty() {
        return Err(ExperimentError::InvalidPlan(
            "bench needs methods, sizes and reps >= 1".into(),
        ));
    }
    let reps = reps.max(3);
    let plan = ExperimentPlan::new(vec![], methods.to_vec(), 1, seed);
    let mut out = Vec::new();
    for &n in sizes {
        let scenario = ScenarioSpec {
            law: Law::tree(FamilyKind::Wd),
            layout: Layout::Paper30,
            n,
            target_censoring: 0.2,
            seed: derive_seed(seed, "bench-scenario", n as u64),
        }
        .resolve()?;
        for &method in methods {
            let mut times = Vec::with_capacity(reps);
            for rep in 0..reps {
                let (ds, _) = sample_lbrc(
                    &scenario,
                    derive_seed(seed, "bench-data", (n * 131 + rep) as u64),
                )?;
                let started = Instant::now();
                let fitted = fit_predict(method, &ds, &[], &plan, rep as u64);
                let elapsed = started.elapsed().as_secs_f64();
                if fitted.is_ok() {
                    times.push(elapsed);
                }
            }
            times.sort_by(|a, b| a.partial_cmp(b).unwrap());
            if times.is_empty() {
                continue;
            }
            out.push(BenchRow {
                method,
                n,
                median_seconds: times[times.len() / 2],
            });
        }
    }
    Ok(out)
}

pub fn write_bench_csv(rows: &[BenchRow], out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(out, "method,n,median_seconds")?;
    for row in rows {
        writeln!(out, "{},{},{}", row.method.code(), row.n, row.median_seconds)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_codes_round_trip() {
        for m in Method::ALL {
            assert_eq!(Method::parse(m.code()), Some(m));
        }
        assert_eq!(Method::parse("nope"), None);
    }

    #[test]
    fn minimal_plan_emits_expected_rows() {
        let plan = ExperimentPlan::new(
            vec![ScenarioDef {
                structure: StructureKind::Linear,
                family: FamilyKind::Wi,
                n: 60,
                censoring: 0.0,
            }],
            vec![Method::OneSampleMcle],
            2,
            7,
        );
        let mut buf = Vec::new();
        run_experiment(&plan, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.trim().lines().collect();
        assert_eq!(lines[0], "trial,method,structure,family,n,cens,metric,value");
        assert_eq!(lines.len(), 3); // header + one l2 row per trial
        assert!(lines[1].starts_with("0,mcle1,linear,wi,60,0,l2,"));
        assert!(lines[2].starts_with("1,mcle1,linear,wi,60,0,l2,"));
    }

    #[test]
    fn tree_scenarios_also_emit_recovery_rows() {
        let plan = ExperimentPlan::new(
            vec![ScenarioDef {
                structure: StructureKind::Tree,
                family: FamilyKind::Wi,
                n: 80,
                censoring: 0.0,
            }],
            vec![Method::CitCC],
            1,
            3,
        );
        let mut buf = Vec::new();
        run_experiment(&plan, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains(",l2,"));
        assert!(text.contains(",recovery,"));
    }

    #[test]
    fn reruns_are_byte_identical() {
        let plan = ExperimentPlan::new(
            vec![ScenarioDef {
                structure: StructureKind::Nonlinear,
                family: FamilyKind::Wd,
                n: 50,
                censoring: 0.2,
            }],
            vec![Method::OneSampleLtrc, Method::CitCC],
            2,
            11,
        );
        let mut a = Vec::new();
        run_experiment(&plan, &mut a).unwrap();
        let mut b = Vec::new();
        run_experiment(&plan, &mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_plans_are_rejected() {
        let empty_methods = ExperimentPlan::new(
            vec![ScenarioDef {
                structure: StructureKind::Linear,
                family: FamilyKind::Wi,
                n: 10,
                censoring: 0.0,
            }],
            vec![],
            1,
            0,
        );
        assert!(run_experiment(&empty_methods, &mut Vec::new()).is_err());
    }

    #[test]
    fn bench_produces_positive_medians() {
        let rows = bench(&[Method::CitCC], &[60], 3, 5).unwrap();
        assert_eq!(rows.len(), 1);
        assert!(rows[0].median_seconds > 0.0);
        let mut buf = Vec::new();
        write_bench_csv(&rows, &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("method,n,"));
    }
}
