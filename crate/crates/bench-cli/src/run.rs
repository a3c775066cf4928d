//! `gen` and `train`: synthetic data files and replicated training runs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crossnet::dataio::{self, RunResult, SplitSpec};
use crossnet::evalx::{abs_ate_error, pehe, policy_risk, PolicySpec};
use crossnet::nets::ModelParams;
use crossnet::synthgen::{mix_seed, suite_entry, SampleSet, Setting, SynthConfig};
use crossnet::trainer::{self, predict_cate, ModelKind, TrainConfig};
use rayon::prelude::*;

use crate::config::{Experiment, ExperimentConfig};
use crate::error::CliError;

/// One row of the `gen` manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub file: String,
    pub setting: Setting,
    pub size: usize,
    pub rep: usize,
    pub split: &'static str,
    pub seed: u64,
    pub rows: usize,
}

pub const MANIFEST_NAME: &str = "manifest.csv";

fn synth_base(cfg: &ExperimentConfig, setting: Setting) -> SynthConfig {
    SynthConfig {
        setting,
        seed: cfg.seed,
        ..cfg.synth.clone()
    }
}

/// Write train and test CSVs for every (setting, size, replication) plus a
/// manifest into `dir`.
pub fn cmd_gen(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<ManifestRow>, CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))?;
    let mut manifest = Vec::new();
    for &setting in &cfg.settings {
        let base = synth_base(cfg, setting);
        for &size in &cfg.sizes {
            for rep in cfg.replications() {
                let entry = suite_entry(&base, size, cfg.n_test, rep)?;
                for (split, seed, data) in [
                    ("train", entry.train_seed, &entry.train),
                    ("test", entry.test_seed, &entry.test),
                ] {
                    let file = format!("synthetic_{setting}_n{size}_rep{rep}_{split}.csv");
                    dataio::write_potential_outcomes(&dir.join(&file), data)?;
                    manifest.push(ManifestRow {
                        file,
                        setting,
                        size,
                        rep,
                        split,
                        seed,
                        rows: data.len(),
                    });
                }
            }
        }
    }
    let mut text = String::from("file,setting,size,rep,split,seed,rows\n");
    for m in &manifest {
        let _ = writeln!(
            text,
            "{},{},{},{},{},{},{}",
            m.file, m.setting, m.size, m.rep, m.split, m.seed, m.rows
        );
    }
    let path = dir.join(MANIFEST_NAME);
    std::fs::write(&path, text)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
    Ok(manifest)
}

/// What one training run is evaluated on.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Unit {
    Synthetic {
        setting: Setting,
        size: usize,
        rep: usize,
    },
    Ihdp {
        rep: usize,
    },
    Jobs {
        rep: usize,
    },
}

impl Unit {
    fn rep(self) -> usize {
        match self {
            Unit::Synthetic { rep, .. } | Unit::Ihdp { rep } | Unit::Jobs { rep } => rep,
        }
    }

    fn dataset(self) -> String {
        match self {
            Unit::Synthetic { setting, size, .. } => format!("synthetic-{setting}-n{size}"),
            Unit::Ihdp { .. } => "ihdp".into(),
            Unit::Jobs { .. } => "jobs".into(),
        }
    }

    /// Training seed, shared by every method on this unit.
    fn seed(self, base: u64) -> u64 {
        match self {
            Unit::Synthetic { setting, size, rep } => {
                mix_seed(base, &[setting as u64, size as u64, rep as u64, 7])
            }
            Unit::Ihdp { rep } => mix_seed(base, &[rep as u64, 8]),
            Unit::Jobs { rep } => mix_seed(base, &[rep as u64, 9]),
        }
    }
}

fn units(cfg: &ExperimentConfig) -> Result<Vec<Unit>, CliError> {
    let reps = cfg.replications();
    Ok(match cfg.experiment {
        Experiment::Synthetic => {
            let mut out = Vec::new();
            for &setting in &cfg.settings {
                for &size in &cfg.sizes {
                    out.extend(
                        reps.clone()
                            .map(|rep| Unit::Synthetic { setting, size, rep }),
                    );
                }
            }
            out
        }
        Experiment::Ihdp => reps.map(|rep| Unit::Ihdp { rep }).collect(),
        Experiment::Jobs => reps.map(|rep| Unit::Jobs { rep }).collect(),
        Experiment::Gradcheck => {
            return Err(CliError::config(
                "experiment gradcheck is run with the gradcheck command",
            ))
        }
    })
}

/// Train `method`, choosing CrossNet's λ from the grid by validation factual
/// loss when a grid is configured.
fn fit(
    cfg: &ExperimentConfig,
    method: ModelKind,
    seed: u64,
    train: &SampleSet,
    val: Option<&SampleSet>,
) -> crossnet::Result<ModelParams> {
    let base = cfg.train_config(method, seed);
    let run = |tc: &TrainConfig| match val {
        Some(v) => trainer::train_with_validation(train, v, tc, &mut |_| {}),
        None => trainer::train(train, tc),
    };
    if method != ModelKind::CrossNet || cfg.lambda_grid.is_empty() {
        return Ok(run(&base)?.0);
    }
    let mut best: Option<(f64, ModelParams)> = None;
    for &lambda in &cfg.lambda_grid {
        let (params, hist) = run(&TrainConfig {
            lambda,
            ..base.clone()
        })?;
        let score = hist.best_val().factual();
        if best.as_ref().is_none_or(|(s, _)| score < *s) {
            best = Some((score, params));
        }
    }
    Ok(best.expect("grid is nonempty").1)
}

fn effect_metrics(params: &ModelParams, data: &SampleSet) -> crossnet::Result<(f64, f64)> {
    let tau = predict_cate(params, data.x.view())?;
    let truth = data
        .cate
        .as_ref()
        .ok_or_else(|| crossnet::Error::NotFound {
            path: PathBuf::from("<true effects>"),
            replication: None,
        })?;
    Ok((
        pehe(tau.view(), truth.view())?,
        abs_ate_error(tau.view(), truth.view())?,
    ))
}

/// Policy risk, or `None` with a warning when a cell is empty.
fn risk_or_none(
    params: &ModelParams,
    data: &SampleSet,
    spec: &PolicySpec,
    what: &str,
) -> crossnet::Result<Option<f64>> {
    let tau = predict_cate(params, data.x.view())?;
    let randomized = data.randomized.as_ref().ok_or_else(|| {
        crossnet::Error::InvalidArgument("jobs data lacks the randomized flag".into())
    })?;
    match policy_risk(tau.view(), data.y.view(), &data.t, randomized, spec) {
        Ok(r) => Ok(Some(r)),
        Err(crossnet::Error::UndefinedCell(msg)) => {
            eprintln!("warning: {what} policy risk undefined: {msg}");
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

fn run_unit(
    cfg: &ExperimentConfig,
    method: ModelKind,
    unit: Unit,
    jobs: Option<&SampleSet>,
    row: &mut RunResult,
) -> crossnet::Result<()> {
    let seed = row.seed;
    match unit {
        Unit::Synthetic { setting, size, rep } => {
            let entry = suite_entry(&synth_base(cfg, setting), size, cfg.n_test, rep)?;
            let params = fit(cfg, method, seed, &entry.train, None)?;
            row.pehe_in = Some(effect_metrics(&params, &entry.train)?.0);
            let (p, a) = effect_metrics(&params, &entry.test)?;
            row.pehe_out = Some(p);
            row.ate_err = Some(a);
        }
        Unit::Ihdp { rep } => {
            let (train, test) = dataio::load_ihdp(&cfg.data_dir, rep)?;
            let params = fit(cfg, method, seed, &train, None)?;
            row.pehe_in = Some(effect_metrics(&params, &train)?.0);
            let (p, a) = effect_metrics(&params, &test)?;
            row.pehe_out = Some(p);
            row.ate_err = Some(a);
        }
        Unit::Jobs { rep } => {
            let data = jobs.expect("jobs data is loaded before dispatch");
            let (tr, va, te) = dataio::split(
                data,
                &SplitSpec::standard(mix_seed(cfg.seed, &[rep as u64, 10])),
            )?;
            let params = fit(cfg, method, seed, &tr, Some(&va))?;
            let spec = PolicySpec {
                threshold: cfg.policy_threshold,
            };
            let within = tr.concat(&va)?;
            row.policy_risk_in = risk_or_none(&params, &within, &spec, "within-sample")?;
            row.policy_risk_out = risk_or_none(&params, &te, &spec, "out-of-sample")?;
            if !row.has_metric() {
                return Err(crossnet::Error::UndefinedCell(
                    "policy risk undefined on every split".into(),
                ));
            }
        }
    }
    Ok(())
}

/// Rows of a training experiment plus the worst failure, if any.
#[derive(Debug)]
pub struct TrainOutcome {
    pub results: Vec<RunResult>,
    pub error: Option<CliError>,
}

/// Run every (method, replication) of `cfg` without touching the results
/// file. Rows come back in a fixed order regardless of `cfg.parallel`;
/// failed runs produce a row with every metric empty.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<TrainOutcome, CliError> {
    cfg.validate()?;
    let units = units(cfg)?;
    let jobs = match cfg.experiment {
        Experiment::Jobs => {
            let load = dataio::load_jobs(&cfg.jobs_path())?;
            for w in &load.warnings {
                eprintln!("warning: {}: {w}", cfg.jobs_path().display());
            }
            Some(load.data)
        }
        _ => None,
    };
    let tasks: Vec<(ModelKind, Unit)> = units
        .iter()
        .flat_map(|&u| cfg.methods.iter().map(move |&m| (m, u)))
        .collect();
    let total = tasks.len();
    let work = |&(method, unit): &(ModelKind, Unit)| -> (RunResult, Option<CliError>) {
        let start = Instant::now();
        let mut row = RunResult {
            method: method.to_string(),
            dataset: unit.dataset(),
            rep: unit.rep(),
            seed: unit.seed(cfg.seed),
            pehe_in: None,
            pehe_out: None,
            policy_risk_in: None,
            policy_risk_out: None,
            ate_err: None,
            wall_seconds: 0.0,
            config_hash: cfg.fingerprint(method),
        };
        let res = run_unit(cfg, method, unit, jobs.as_ref(), &mut row);
        row.wall_seconds = start.elapsed().as_secs_f64();
        match res {
            Ok(()) => {
                eprintln!(
                    "{method} {} rep {}: {} ({:.1}s)",
                    row.dataset,
                    row.rep,
                    headline(&row),
                    row.wall_seconds
                );
                (row, None)
            }
            Err(e) => {
                eprintln!("{method} {} rep {} failed: {e}", row.dataset, row.rep);
                let failed = RunResult {
                    pehe_in: None,
                    pehe_out: None,
                    policy_risk_in: None,
                    policy_risk_out: None,
                    ate_err: None,
                    ..row
                };
                (failed, Some(CliError::from(e)))
            }
        }
    };
    eprintln!("running {total} training runs");
    let outputs: Vec<(RunResult, Option<CliError>)> = if cfg.parallel > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.parallel)
            .build()
            .map_err(|e| CliError::config(format!("thread pool: {e}")))?;
        pool.install(|| tasks.par_iter().map(work).collect())
    } else {
        tasks.iter().map(work).collect()
    };
    let mut error = None;
    let mut results = Vec::with_capacity(total);
    for (row, err) in outputs {
        results.push(row);
        if let Some(e) = err {
            error = Some(CliError::worst(error, e));
        }
    }
    Ok(TrainOutcome { results, error })
}

fn headline(row: &RunResult) -> String {
    match (row.pehe_out, row.policy_risk_out) {
        (Some(p), _) => format!("pehe_out {p:.4}"),
        (None, Some(r)) => format!("policy_risk_out {r:.4}"),
        _ => "no out-of-sample metric".into(),
    }
}

pub const DEFAULT_RESULTS: &str = "results.csv";

/// Run the experiment and write its rows to `out`, after any rows already
/// there when `append` is set. Rows are written even when some runs failed.
pub fn cmd_train(
    cfg: &ExperimentConfig,
    out: &Path,
    append: bool,
) -> Result<Vec<RunResult>, CliError> {
    let outcome = run_experiment(cfg)?;
    let mut rows = if append && out.exists() {
        dataio::read_results(out)?
    } else {
        Vec::new()
    };
    rows.extend(outcome.results.iter().cloned());
    dataio::write_results(&rows, out)?;
    match outcome.error {
        Some(e) => Err(e),
        None => Ok(outcome.results),
    }
}
