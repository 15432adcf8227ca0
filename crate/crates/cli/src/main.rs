//! `lbtree`: survival trees and forests for length-biased right-censored
//! data.
//!
//! Subcommands: `simulate`, `fit`, `tune`, `predict`, `evaluate`, `scores`,
//! `experiment`, `bench`. Every command is deterministic given `--seed`.
//! Flags may be supplied through a JSON config file (`--config`); explicit
//! flags win on conflict. Exit codes: 0 success, 2 validation error,
//! 3 runtime/numeric error.

use std::fmt::Display;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lbtree_core::cif::{default_tune_grid, grow_forest, predict_forest, tune_mtry, ForestConfig};
use lbtree_core::cit::{grow_tree, TreeConfig};
use lbtree_core::curves::StepCurve;
use lbtree_core::dataset::{CaseWeights, CovValue, CovariateKind, Dataset, Schema};
use lbtree_core::estimators::{Backend, EmConfig};
use lbtree_core::eval::{ibs, integrated_l2, stationarity_curves, BrierContext};
use lbtree_core::experiment::{
    bench, run_experiment, write_bench_csv, ExperimentPlan, Method, MtrySetting, ScenarioDef,
    StructureKind,
};
use lbtree_core::model_io::{load_model, save_forest, save_tree, ModelEnvelope, SavedModel};
use lbtree_core::scores::{compute_scores, ScoreSpec};
use lbtree_core::simgen::{
    sample_lbrc, sample_unbiased_test, FamilyKind, Layout, ScenarioSpec, TrueModel,
};

// ---------------------------------------------------------------------------
// Errors and exit codes.
// ---------------------------------------------------------------------------

enum CliError {
    /// Bad inputs: arguments, files, schemas. Exit code 2.
    Validation(String),
    /// Failures while computing. Exit code 3.
    Runtime(String),
}

impl CliError {
    fn validation(err: impl Display) -> Self {
        CliError::Validation(err.to_string())
    }

    fn runtime(err: impl Display) -> Self {
        CliError::Runtime(err.to_string())
    }

    fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Runtime(m) => m,
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

// ---------------------------------------------------------------------------
// Config-file merging: flags win, config fills the gaps.
// ---------------------------------------------------------------------------

struct ConfigFile(serde_json::Map<String, serde_json::Value>);

impl ConfigFile {
    fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(ConfigFile(serde_json::Map::new()));
        };
        let file = File::open(path)
            .map_err(|e| CliError::Validation(format!("cannot open config {path:?}: {e}")))?;
        let value: serde_json::Value = serde_json::from_reader(file)
            .map_err(|e| CliError::Validation(format!("config {path:?}: {e}")))?;
        match value {
            serde_json::Value::Object(map) => Ok(ConfigFile(map)),
            _ => Err(CliError::Validation(format!(
                "config {path:?} must hold a JSON object keyed by flag names"
            ))),
        }
    }

    fn get<T: serde::de::DeserializeOwned>(&self, key: &str) -> CliResult<Option<T>> {
        match self.0.get(key) {
            None => Ok(None),
            Some(v) => serde_json::from_value(v.clone())
                .map(Some)
                .map_err(|e| CliError::Validation(format!("config key `{key}`: {e}"))),
        }
    }

    /// Flag value if given, else config value, else the default.
    fn or<T: serde::de::DeserializeOwned>(
        &self,
        flag: Option<T>,
        key: &str,
        default: T,
    ) -> CliResult<T> {
        Ok(match flag {
            Some(v) => v,
            None => self.get(key)?.unwrap_or(default),
        })
    }

    fn opt<T: serde::de::DeserializeOwned>(&self, flag: Option<T>, key: &str) -> CliResult<Option<T>> {
        Ok(match flag {
            Some(v) => Some(v),
            None => self.get(key)?,
        })
    }
}

// ---------------------------------------------------------------------------
// CLI surface.
// ---------------------------------------------------------------------------

#[derive(Parser)]
#[command(
    name = "lbtree",
    version,
    about = "Survival trees and forests for length-biased right-censored data"
)]
struct Cli {
    /// JSON config file supplying flag defaults (flags win on conflict).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an LBRC sample from a benchmark scenario.
    Simulate(SimulateArgs),
    /// Fit a conditional-inference tree or forest.
    Fit(FitArgs),
    /// Tune forest mtry by out-of-bag integrated Brier score.
    Tune(TuneArgs),
    /// Predict survival curves for new covariate rows from a saved model.
    Predict(PredictArgs),
    /// Evaluate a saved model (IPCW integrated Brier score or integrated
    /// squared distance to analytic truth), or the stationarity diagnostic.
    Evaluate(EvaluateArgs),
    /// Emit per-subject influence scores.
    Scores(ScoresArgs),
    /// Run a factorial simulation sweep to a tidy CSV.
    Experiment(ExperimentArgs),
    /// Time the fitting methods across sample sizes.
    Bench(BenchArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// tree | linear | nonlinear
    #[arg(long)]
    structure: Option<String>,
    /// wd | wi | lgn | bat
    #[arg(long)]
    family: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    /// Target censoring proportion in [0, 0.9].
    #[arg(long)]
    cens: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Covariate layout: paper30 | null6.
    #[arg(long)]
    layout: Option<String>,
    /// Output data CSV.
    #[arg(long)]
    out: PathBuf,
    /// Write the covariate schema JSON here.
    #[arg(long)]
    schema_out: Option<PathBuf>,
    /// Write latent truth (t_unbiased, c_latent, leaf_id) here.
    #[arg(long)]
    truth_out: Option<PathBuf>,
    /// Add analytic survival on a fixed 256-point grid to the truth CSV.
    #[arg(long)]
    truth_grid: bool,
}

#[derive(Args)]
struct FitArgs {
    /// cit | cif
    #[arg(long)]
    method: Option<String>,
    /// Splitting score: ltrc | lbrc-c | lbrc-f.
    #[arg(long)]
    score: Option<String>,
    /// Prediction backend: ltrc | mcle | mfle.
    #[arg(long)]
    predict: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    minsplit: Option<f64>,
    #[arg(long)]
    minbucket: Option<f64>,
    #[arg(long)]
    minprob: Option<f64>,
    #[arg(long)]
    maxdepth: Option<usize>,
    /// Covariates per node: an integer, or `tune` (cif only).
    #[arg(long)]
    mtry: Option<String>,
    /// Comma-separated tuning grid, e.g. 1,6,15,30.
    #[arg(long)]
    tune_grid: Option<String>,
    #[arg(long)]
    ntrees: Option<usize>,
    #[arg(long)]
    em_tol: Option<f64>,
    #[arg(long)]
    em_max_iter: Option<usize>,
    /// Monte Carlo permutation p-values with this replication count.
    #[arg(long)]
    perm: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TuneArgs {
    #[arg(long)]
    score: Option<String>,
    #[arg(long)]
    predict: Option<String>,
    #[arg(long)]
    ntrees: Option<usize>,
    #[arg(long)]
    tune_grid: Option<String>,
    #[arg(long)]
    em_tol: Option<f64>,
    #[arg(long)]
    em_max_iter: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    /// Per-candidate out-of-bag IBS CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Training data CSV used at fit time (terminal nodes refit on it).
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    /// Covariate-only CSV of rows to predict.
    #[arg(long)]
    data: PathBuf,
    /// Long-format curve CSV (row,t,value).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// ibs | l2 | stationarity
    #[arg(long)]
    metric: String,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Evaluation data (defaults to the training data for ibs).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Scenario description for the l2 metric.
    #[arg(long)]
    structure: Option<String>,
    #[arg(long)]
    family: Option<String>,
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Per-time trace CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ScoresArgs {
    /// ltrc | lbrc-c | lbrc-f
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    em_tol: Option<f64>,
    #[arg(long)]
    em_max_iter: Option<usize>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Comma-separated structures (tree,linear,nonlinear).
    #[arg(long)]
    structures: Option<String>,
    /// Comma-separated families (wd,wi,lgn,bat).
    #[arg(long)]
    families: Option<String>,
    /// Comma-separated sample sizes.
    #[arg(long)]
    ns: Option<String>,
    /// Comma-separated censoring rates.
    #[arg(long)]
    cens: Option<String>,
    /// Comma-separated method codes
    /// (km1,mfle1,mcle1,cit-ltrc,cit-ff,cit-cc,cit-fc,cit-cf,cif-ltrc,cif-c,cif-f).
    #[arg(long)]
    methods: Option<String>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    ntrees: Option<usize>,
    /// Forest mtry: an integer, `default`, or `tune`.
    #[arg(long)]
    mtry: Option<String>,
    #[arg(long)]
    tune_grid: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    em_max_iter: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    methods: Option<String>,
    #[arg(long)]
    ns: Option<String>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

// ---------------------------------------------------------------------------
// Shared parsing helpers.
// ---------------------------------------------------------------------------

fn parse_structure(s: &str) -> CliResult<StructureKind> {
    StructureKind::parse(s)
        .ok_or_else(|| CliError::Validation(format!("unknown structure `{s}`")))
}

fn parse_family(s: &str) -> CliResult<FamilyKind> {
    match s {
        "wd" => Ok(FamilyKind::Wd),
        "wi" => Ok(FamilyKind::Wi),
        "lgn" => Ok(FamilyKind::Lgn),
        "bat" => Ok(FamilyKind::Bat),
        other => Err(CliError::Validation(format!("unknown family `{other}`"))),
    }
}

fn parse_score(s: &str) -> CliResult<ScoreSpec> {
    match s {
        "ltrc" => Ok(ScoreSpec::Ltrc),
        "lbrc-c" => Ok(ScoreSpec::LbrcMcle),
        "lbrc-f" => Ok(ScoreSpec::LbrcMfle),
        other => Err(CliError::Validation(format!("unknown score `{other}`"))),
    }
}

fn parse_backend(s: &str) -> CliResult<Backend> {
    match s {
        "ltrc" => Ok(Backend::LtrcKm),
        "mcle" => Ok(Backend::Mcle),
        "mfle" => Ok(Backend::Mfle),
        other => Err(CliError::Validation(format!(
            "unknown prediction backend `{other}`"
        ))),
    }
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> CliResult<Vec<T>> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.parse::<T>()
                .map_err(|_| CliError::Validation(format!("bad {what} entry `{p}`")))
        })
        .collect()
}

fn default_backend(score: ScoreSpec) -> Backend {
    score.backend()
}

fn load_dataset(data: &Path, schema: &Path) -> CliResult<Dataset> {
    Dataset::load_csv(data, schema).map_err(CliError::validation)
}

fn create_out(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Runtime(format!("cannot create {path:?}: {e}")))
}

fn em_config(cfg: &ConfigFile, tol: Option<f64>, max_iter: Option<usize>) -> CliResult<EmConfig> {
    let defaults = EmConfig::default();
    Ok(EmConfig {
        tol: cfg.or(tol, "em-tol", defaults.tol)?,
        max_iter: cfg.or(max_iter, "em-max-iter", defaults.max_iter)?,
        track_loglik: false,
    })
}

/// Covariate-only CSV keyed by the schema's column names.
fn load_covariate_rows(path: &Path, schema: &Schema) -> CliResult<Vec<Vec<CovValue>>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| CliError::Validation(format!("cannot read {path:?}: {e}")))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(CliError::validation)?
        .iter()
        .map(str::to_string)
        .collect();
    let expected: Vec<&str> = schema.fields.iter().map(|f| f.name.as_str()).collect();
    if headers != expected {
        return Err(CliError::Validation(format!(
            "prediction header {headers:?} does not match schema columns {expected:?}"
        )));
    }
    let mut rows = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(CliError::validation)?;
        let mut row = Vec::with_capacity(schema.len());
        for (j, field) in schema.fields.iter().enumerate() {
            let raw = record
                .get(j)
                .ok_or_else(|| {
                    CliError::Validation(format!("row {}: missing column {}", idx + 1, field.name))
                })?
                .trim();
            let value = match &field.kind {
                CovariateKind::Numeric => CovValue::Numeric(raw.parse().map_err(|e| {
                    CliError::Validation(format!("row {}, `{}`: {e}", idx + 1, field.name))
                })?),
                CovariateKind::Ordered { levels } | CovariateKind::Categorical { levels } => {
                    match levels.iter().position(|l| l == raw) {
                        Some(pos) => CovValue::Level(pos as u32),
                        None => {
                            return Err(CliError::Validation(format!(
                                "row {}, `{}`: unknown level `{raw}`",
                                idx + 1,
                                field.name
                            )))
                        }
                    }
                }
            };
            row.push(value);
        }
        rows.push(row);
    }
    Ok(rows)
}

fn write_curve_rows(
    out: &mut impl Write,
    row: usize,
    curve: &StepCurve,
) -> std::io::Result<()> {
    writeln!(out, "{row},0,{}", curve.value_before())?;
    for (t, v) in curve.grid().times().iter().zip(curve.values()) {
        writeln!(out, "{row},{t},{v}")?;
    }
    Ok(())
}

fn scenario_from_parts(
    structure: StructureKind,
    family: FamilyKind,
    layout: Layout,
    n: usize,
    cens: f64,
    seed: u64,
) -> CliResult<lbtree_core::simgen::ResolvedScenario> {
    let law = structure.law(family).map_err(CliError::validation)?;
    ScenarioSpec {
        law,
        layout,
        n,
        target_censoring: cens,
        seed,
    }
    .resolve()
    .map_err(|e| match e {
        lbtree_core::simgen::SimError::InvalidScenario(_) => CliError::validation(e),
        other => CliError::runtime(other),
    })
}

// ---------------------------------------------------------------------------
// Subcommand implementations.
// ---------------------------------------------------------------------------

fn run_simulate(args: SimulateArgs, cfg: &ConfigFile) -> CliResult {
    let structure = parse_structure(&cfg.or(args.structure, "structure", "tree".into())?)?;
    let family = parse_family(&cfg.or(args.family, "family", "wd".into())?)?;
    let layout = match cfg.or(args.layout, "layout", "paper30".into())?.as_str() {
        "paper30" => Layout::Paper30,
        "null6" => Layout::SelectionNull6,
        other => return Err(CliError::Validation(format!("unknown layout `{other}`"))),
    };
    let n = cfg.or(args.n, "n", 200)?;
    let cens = cfg.or(args.cens, "cens", 0.0)?;
    let seed = cfg.or(args.seed, "seed", 0)?;

    let scenario = scenario_from_parts(structure, family, layout, n, cens, seed)?;
    let (ds, truth) = sample_lbrc(&scenario, seed).map_err(CliError::runtime)?;
    ds.save_csv(&args.out).map_err(CliError::runtime)?;
    if let Some(schema_out) = &args.schema_out {
        ds.schema().save_json(schema_out).map_err(CliError::runtime)?;
    }
    if let Some(truth_out) = &args.truth_out {
        let mut w = create_out(truth_out)?;
        let truth_model = TrueModel::new(&scenario.spec.law);
        let grid_len = if args.truth_grid { 256 } else { 0 };
        let horizon = scenario.tau / 1.5;
        let mut header = "t_unbiased,c_latent,leaf_id".to_string();
        for g in 0..grid_len {
            header.push_str(&format!(",s_{g:03}"));
        }
        writeln!(w, "{header}").map_err(CliError::runtime)?;
        for i in 0..ds.n() {
            let leaf = truth.leaf[i]
                .map(|l| l.to_string())
                .unwrap_or_default();
            let mut line = format!("{},{},{leaf}", truth.failure[i], truth.censoring[i]);
            for g in 0..grid_len {
                let t = horizon * (g + 1) as f64 / grid_len as f64;
                line.push_str(&format!(",{}", truth_model.survival(&ds.covariate_row(i), t)));
            }
            writeln!(w, "{line}").map_err(CliError::runtime)?;
        }
        w.flush().map_err(CliError::runtime)?;
    }
    eprintln!(
        "simulated {} subjects (tau {:.4}, censoring rate {:.6})",
        ds.n(),
        scenario.tau,
        scenario.censoring_rate
    );
    Ok(())
}

enum MtryArg {
    Default,
    Fixed(usize),
    Tune,
}

fn parse_mtry(raw: Option<String>) -> CliResult<MtryArg> {
    match raw.as_deref() {
        None | Some("default") => Ok(MtryArg::Default),
        Some("tune") => Ok(MtryArg::Tune),
        Some(k) => k
            .parse::<usize>()
            .map(MtryArg::Fixed)
            .map_err(|_| CliError::Validation(format!("bad mtry `{k}`"))),
    }
}

fn run_fit(args: FitArgs, cfg: &ConfigFile) -> CliResult {
    let ds = load_dataset(&args.data, &args.schema)?;
    let method = cfg.or(args.method, "method", "cit".into())?;
    let score = parse_score(&cfg.or(args.score, "score", "lbrc-f".into())?)?;
    let predict = match cfg.opt(args.predict, "predict")? {
        Some(p) => parse_backend(&p)?,
        None => default_backend(score),
    };
    let em = em_config(cfg, args.em_tol, args.em_max_iter)?;
    let seed = cfg.or(args.seed, "seed", 0)?;
    let mtry = parse_mtry(cfg.opt(args.mtry, "mtry")?)?;

    match method.as_str() {
        "cit" => {
            let mut config = TreeConfig::standalone(score, predict);
            config.alpha = cfg.or(args.alpha, "alpha", config.alpha)?;
            config.min_split = cfg.or(args.minsplit, "minsplit", config.min_split)?;
            config.min_bucket = cfg.or(args.minbucket, "minbucket", config.min_bucket)?;
            config.min_prob = cfg.or(args.minprob, "minprob", config.min_prob)?;
            config.max_depth = cfg.opt(args.maxdepth, "maxdepth")?;
            config.mc_permutations = cfg.opt(args.perm, "perm")?;
            config.em = em;
            if let MtryArg::Fixed(k) = mtry {
                config.mtry = Some(k);
            }
            let model = grow_tree(&ds, &CaseWeights::unit(ds.n()), &config, seed)
                .map_err(classify_tree_error)?;
            save_tree(&args.out, &model, ds.schema()).map_err(CliError::runtime)?;
            eprintln!(
                "tree with {} leaves saved to {:?}",
                model.n_leaves(),
                args.out
            );
        }
        "cif" => {
            let mut config = ForestConfig::new(score, predict, ds.n(), ds.m(), seed);
            config.n_trees = cfg.or(args.ntrees, "ntrees", config.n_trees)?;
            config.tree.em = em;
            if let Some(v) = cfg.opt(args.minsplit, "minsplit")? {
                config.tree.min_split = v;
            }
            if let Some(v) = cfg.opt(args.minbucket, "minbucket")? {
                config.tree.min_bucket = v;
            }
            if let Some(v) = cfg.opt(args.minprob, "minprob")? {
                config.tree.min_prob = v;
            }
            match mtry {
                MtryArg::Default => {}
                MtryArg::Fixed(k) => config.mtry = k,
                MtryArg::Tune => {
                    let grid = match cfg.opt(args.tune_grid, "tune-grid")? {
                        Some(s) => parse_list::<usize>(&s, "tune-grid")?,
                        None => default_tune_grid(ds.m()),
                    };
                    let outcome =
                        tune_mtry(&ds, &config, &grid).map_err(classify_forest_error)?;
                    eprintln!("tuned mtry = {}", outcome.chosen);
                    config.mtry = outcome.chosen;
                }
            }
            let forest = grow_forest(&ds, &config).map_err(classify_forest_error)?;
            save_forest(&args.out, &forest, ds.schema()).map_err(CliError::runtime)?;
            eprintln!(
                "forest of {} trees (mtry {}) saved to {:?}",
                forest.trees.len(),
                forest.config.mtry,
                args.out
            );
        }
        other => {
            return Err(CliError::Validation(format!(
                "unknown fit method `{other}` (expected cit or cif)"
            )))
        }
    }
    Ok(())
}

fn classify_tree_error(e: lbtree_core::cit::TreeError) -> CliError {
    match e {
        lbtree_core::cit::TreeError::InvalidConfig(_) => CliError::validation(e),
        other => CliError::runtime(other),
    }
}

fn classify_forest_error(e: lbtree_core::cif::ForestError) -> CliError {
    match e {
        lbtree_core::cif::ForestError::InvalidConfig(_) => CliError::validation(e),
        lbtree_core::cif::ForestError::Tree(t) => classify_tree_error(t),
        other => CliError::runtime(other),
    }
}

fn run_tune(args: TuneArgs, cfg: &ConfigFile) -> CliResult {
    let ds = load_dataset(&args.data, &args.schema)?;
    let score = parse_score(&cfg.or(args.score, "score", "lbrc-c".into())?)?;
    let predict = match cfg.opt(args.predict, "predict")? {
        Some(p) => parse_backend(&p)?,
        None => default_backend(score),
    };
    let seed = cfg.or(args.seed, "seed", 0)?;
    let mut config = ForestConfig::new(score, predict, ds.n(), ds.m(), seed);
    config.n_trees = cfg.or(args.ntrees, "ntrees", config.n_trees)?;
    config.tree.em = em_config(cfg, args.em_tol, args.em_max_iter)?;
    let grid = match cfg.opt(args.tune_grid, "tune-grid")? {
        Some(s) => parse_list::<usize>(&s, "tune-grid")?,
        None => default_tune_grid(ds.m()),
    };
    let outcome = tune_mtry(&ds, &config, &grid).map_err(classify_forest_error)?;
    let mut w = create_out(&args.out)?;
    writeln!(w, "mtry,oob_ibs").map_err(CliError::runtime)?;
    for (mtry, value) in &outcome.candidates {
        writeln!(w, "{mtry},{value}").map_err(CliError::runtime)?;
    }
    w.flush().map_err(CliError::runtime)?;
    println!("tuned-mtry {}", outcome.chosen);
    if outcome.skipped_subjects > 0 {
        eprintln!(
            "{} subjects lacked usable out-of-bag curves",
            outcome.skipped_subjects
        );
    }
    Ok(())
}

fn load_envelope_with_train(
    model: &Path,
    train: &Path,
    schema: &Path,
) -> CliResult<(ModelEnvelope, Dataset)> {
    let envelope = load_model(model).map_err(CliError::validation)?;
    let ds = load_dataset(train, schema)?;
    envelope
        .check_training_data(&ds)
        .map_err(CliError::validation)?;
    Ok((envelope, ds))
}

fn predict_all(
    envelope: &ModelEnvelope,
    train: &Dataset,
    rows: &[Vec<CovValue>],
) -> CliResult<Vec<StepCurve>> {
    match &envelope.model {
        SavedModel::Tree(tree) => {
            let mut predictor = lbtree_core::cit::TreePredictor::new(tree, train);
            rows.iter()
                .map(|x| {
                    predictor
                        .predict(x)
                        .map(|c| (*c).clone())
                        .map_err(CliError::runtime)
                })
                .collect()
        }
        SavedModel::Forest(forest) => rows
            .iter()
            .map(|x| predict_forest(forest, train, x).map_err(CliError::runtime))
            .collect(),
    }
}

fn run_predict(args: PredictArgs) -> CliResult {
    let (envelope, train) = load_envelope_with_train(&args.model, &args.train, &args.schema)?;
    let rows = load_covariate_rows(&args.data, &envelope.schema)?;
    let curves = predict_all(&envelope, &train, &rows)?;
    let mut w = create_out(&args.out)?;
    writeln!(w, "row,t,value").map_err(CliError::runtime)?;
    for (i, curve) in curves.iter().enumerate() {
        write_curve_rows(&mut w, i, curve).map_err(CliError::runtime)?;
    }
    w.flush().map_err(CliError::runtime)?;
    eprintln!("wrote {} curves to {:?}", curves.len(), args.out);
    Ok(())
}

fn require<T>(value: Option<T>, flag: &str) -> CliResult<T> {
    value.ok_or_else(|| CliError::Validation(format!("--{flag} is required for this metric")))
}

fn run_evaluate(args: EvaluateArgs, cfg: &ConfigFile) -> CliResult {
    match args.metric.as_str() {
        "ibs" => {
            let model = require(args.model, "model")?;
            let train_path = require(args.train, "train")?;
            let schema = require(args.schema, "schema")?;
            let (envelope, train) = load_envelope_with_train(&model, &train_path, &schema)?;
            let eval_ds = match &args.data {
                Some(path) => load_dataset(path, &schema)?,
                None => train.clone(),
            };
            let rows: Vec<Vec<CovValue>> =
                (0..eval_ds.n()).map(|i| eval_ds.covariate_row(i)).collect();
            let curves = predict_all(&envelope, &train, &rows)?;
            let preds: Vec<Option<StepCurve>> = curves.into_iter().map(Some).collect();
            let result = ibs(&eval_ds, &preds).map_err(CliError::runtime)?;
            println!("ibs {}", result.value);
            if let Some(out) = &args.out {
                let ctx = BrierContext::new(&eval_ds).map_err(CliError::runtime)?;
                let mut w = create_out(out)?;
                writeln!(w, "t,brier").map_err(CliError::runtime)?;
                let mut knots: Vec<f64> = eval_ds.time().to_vec();
                knots.sort_by(|a, b| a.partial_cmp(b).unwrap());
                knots.dedup();
                for t in knots {
                    if let Ok(bs) = lbtree_core::eval::brier(
                        &eval_ds,
                        &preds
                            .iter()
                            .map(|p| p.clone().expect("all predictions present"))
                            .collect::<Vec<_>>(),
                        t,
                    ) {
                        writeln!(w, "{t},{bs}").map_err(CliError::runtime)?;
                    }
                }
                drop(ctx);
                w.flush().map_err(CliError::runtime)?;
            }
        }
        "l2" => {
            let model = require(args.model, "model")?;
            let train_path = require(args.train, "train")?;
            let schema = require(args.schema, "schema")?;
            let (envelope, train) = load_envelope_with_train(&model, &train_path, &schema)?;
            let structure =
                parse_structure(&cfg.or(args.structure, "structure", "tree".into())?)?;
            let family = parse_family(&cfg.or(args.family, "family", "wd".into())?)?;
            let n_test = cfg.or(args.n_test, "n-test", 200)?;
            let seed = cfg.or(args.seed, "seed", 0)?;
            if envelope.schema != Layout::Paper30.schema() {
                return Err(CliError::Validation(
                    "l2 evaluation needs a model trained on the 30-covariate scenario layout"
                        .into(),
                ));
            }
            let scenario =
                scenario_from_parts(structure, family, Layout::Paper30, n_test.max(1), 0.0, seed)?;
            let (xs, failures) = sample_unbiased_test(&scenario, n_test, seed);
            let horizon = failures.iter().copied().fold(0.0_f64, f64::max);
            let curves = predict_all(&envelope, &train, &xs)?;
            let truth = TrueModel::new(&scenario.spec.law);
            let value = integrated_l2(|i, t| truth.survival(&xs[i], t), &curves, horizon);
            println!("l2 {value}");
            if let Some(out) = &args.out {
                let mut w = create_out(out)?;
                writeln!(w, "t,mean_sq_diff").map_err(CliError::runtime)?;
                for g in 1..=256 {
                    let t = horizon * g as f64 / 256.0;
                    let mut total = 0.0;
                    for (i, c) in curves.iter().enumerate() {
                        total += (truth.survival(&xs[i], t)
                            - c.eval_at(t).map_err(CliError::runtime)?)
                        .powi(2);
                    }
                    writeln!(w, "{t},{}", total / curves.len() as f64)
                        .map_err(CliError::runtime)?;
                }
                w.flush().map_err(CliError::runtime)?;
            }
        }
        "stationarity" => {
            let train_path = require(args.train, "train")?;
            let schema = require(args.schema, "schema")?;
            let ds = load_dataset(&train_path, &schema)?;
            let (backward, forward) = stationarity_curves(&ds).map_err(CliError::runtime)?;
            let sup = lbtree_core::eval::sup_distance(&backward, &forward);
            println!("stationarity-sup-distance {sup}");
            if let Some(out) = &args.out {
                let mut w = create_out(out)?;
                writeln!(w, "curve,t,value").map_err(CliError::runtime)?;
                for (name, curve) in [("backward", &backward), ("forward", &forward)] {
                    writeln!(w, "{name},0,{}", curve.value_before()).map_err(CliError::runtime)?;
                    for (t, v) in curve.grid().times().iter().zip(curve.values()) {
                        writeln!(w, "{name},{t},{v}").map_err(CliError::runtime)?;
                    }
                }
                w.flush().map_err(CliError::runtime)?;
            }
        }
        other => {
            return Err(CliError::Validation(format!(
                "unknown metric `{other}` (expected ibs, l2 or stationarity)"
            )))
        }
    }
    Ok(())
}

fn run_scores(args: ScoresArgs, cfg: &ConfigFile) -> CliResult {
    let ds = load_dataset(&args.data, &args.schema)?;
    let spec = parse_score(&cfg.or(args.backend, "backend", "lbrc-f".into())?)?;
    let em = em_config(cfg, args.em_tol, args.em_max_iter)?;
    let scores = compute_scores(&ds, &CaseWeights::unit(ds.n()), spec, &em)
        .map_err(CliError::runtime)?;
    let mut w = create_out(&args.out)?;
    writeln!(w, "index,score").map_err(CliError::runtime)?;
    for (i, u) in scores.values.iter().enumerate() {
        writeln!(w, "{i},{u}").map_err(CliError::runtime)?;
    }
    w.flush().map_err(CliError::runtime)?;
    Ok(())
}

fn run_experiment_cmd(args: ExperimentArgs, cfg: &ConfigFile) -> CliResult {
    let structures = cfg.or(args.structures, "structures", "tree".into())?;
    let families = cfg.or(args.families, "families", "wd".into())?;
    let ns = cfg.or(args.ns, "ns", "200".into())?;
    let cens = cfg.or(args.cens, "cens", "0.2".into())?;
    let methods_raw = cfg.or(args.methods, "methods", "cit-cc,cit-ltrc".into())?;

    let mut scenarios = Vec::new();
    for s in structures.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let structure = parse_structure(s)?;
        for f in families.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let family = parse_family(f)?;
            for n in parse_list::<usize>(&ns, "ns")? {
                for c in parse_list::<f64>(&cens, "cens")? {
                    scenarios.push(ScenarioDef {
                        structure,
                        family,
                        n,
                        censoring: c,
                    });
                }
            }
        }
    }
    let methods: Vec<Method> = methods_raw
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|code| {
            Method::parse(code)
                .ok_or_else(|| CliError::Validation(format!("unknown method `{code}`")))
        })
        .collect::<CliResult<_>>()?;

    let mut plan = ExperimentPlan::new(
        scenarios,
        methods,
        cfg.or(args.trials, "trials", 10)?,
        cfg.or(args.seed, "seed", 0)?,
    );
    plan.n_trees = cfg.or(args.ntrees, "ntrees", plan.n_trees)?;
    plan.alpha = cfg.or(args.alpha, "alpha", plan.alpha)?;
    if let Some(cap) = cfg.opt(args.em_max_iter, "em-max-iter")? {
        plan.em.max_iter = cap;
    }
    plan.mtry = match parse_mtry(cfg.opt(args.mtry, "mtry")?)? {
        MtryArg::Default => MtrySetting::Default,
        MtryArg::Fixed(k) => MtrySetting::Fixed(k),
        MtryArg::Tune => MtrySetting::Tune(match cfg.opt(args.tune_grid, "tune-grid")? {
            Some(s) => Some(parse_list::<usize>(&s, "tune-grid")?),
            None => None,
        }),
    };

    let mut w = create_out(&args.out)?;
    run_experiment(&plan, &mut w).map_err(|e| match e {
        lbtree_core::experiment::ExperimentError::InvalidPlan(_) => CliError::validation(e),
        other => CliError::runtime(other),
    })?;
    w.flush().map_err(CliError::runtime)?;
    Ok(())
}

fn run_bench(args: BenchArgs, cfg: &ConfigFile) -> CliResult {
    let methods_raw = cfg.or(args.methods, "methods", "cit-cc,cit-ff".into())?;
    let methods: Vec<Method> = methods_raw
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|code| {
            Method::parse(code)
                .ok_or_else(|| CliError::Validation(format!("unknown method `{code}`")))
        })
        .collect::<CliResult<_>>()?;
    let ns = parse_list::<usize>(&cfg.or(args.ns, "ns", "100,200,400".into())?, "ns")?;
    let reps = cfg.or(args.reps, "reps", 3)?;
    let seed = cfg.or(args.seed, "seed", 0)?;
    let rows = bench(&methods, &ns, reps, seed).map_err(CliError::runtime)?;
    let mut w = create_out(&args.out)?;
    write_bench_csv(&rows, &mut w).map_err(CliError::runtime)?;
    w.flush().map_err(CliError::runtime)?;
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    let cfg = ConfigFile::load(cli.config.as_deref())?;
    match cli.command {
        Command::Simulate(args) => run_simulate(args, &cfg),
        Command::Fit(args) => run_fit(args, &cfg),
        Command::Tune(args) => run_tune(args, &cfg),
        Command::Predict(args) => run_predict(args),
        Command::Evaluate(args) => run_evaluate(args, &cfg),
        Command::Scores(args) => run_scores(args, &cfg),
        Command::Experiment(args) => run_experiment_cmd(args, &cfg),
        Command::Bench(args) => run_bench(args, &cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message());
            ExitCode::from(err.code())
        }
    }
}
