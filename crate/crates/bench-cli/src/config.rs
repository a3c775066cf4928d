//! Flat `key = value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key has a
//! default, so an empty file is a valid configuration. Command-line flags are
//! applied on top of the file with [`ExperimentConfig::set`].

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crossnet::matdiv::Flavor;
use crossnet::nets::Activation;
use crossnet::synthgen::{Setting, SynthConfig};
use crossnet::trainer::{LossKind, ModelKind, TrainConfig};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Synthetic,
    Ihdp,
    Jobs,
    Gradcheck,
}

impl FromStr for Experiment {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s.trim().to_ascii_lowercase().as_str() {
            "synthetic" => Ok(Experiment::Synthetic),
            "ihdp" => Ok(Experiment::Ihdp),
            "jobs" => Ok(Experiment::Jobs),
            "gradcheck" => Ok(Experiment::Gradcheck),
            other => Err(CliError::config(format!("unknown experiment `{other}`"))),
        }
    }
}

impl std::fmt::Display for Experiment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Experiment::Synthetic => "synthetic",
            Experiment::Ihdp => "ihdp",
            Experiment::Jobs => "jobs",
            Experiment::Gradcheck => "gradcheck",
        })
    }
}

/// Shape of the tiny model used by `gradcheck`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckConfig {
    pub n: usize,
    pub d: usize,
    pub rep_width: usize,
    pub head_width: usize,
    pub step: f64,
    pub tol: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            n: 16,
            d: 5,
            rep_width: 4,
            head_width: 8,
            step: 1e-5,
            tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub methods: Vec<ModelKind>,
    /// Shared training settings; `model_kind` and `seed` are set per run.
    pub train: TrainConfig,
    /// Candidate penalty weights for CrossNet, chosen per replication by the
    /// validation factual loss. Empty means `train.lambda` is used as is.
    pub lambda_grid: Vec<f64>,
    /// `None` picks mse for continuous outcomes and bce for Jobs.
    pub loss: Option<LossKind>,
    pub synth: SynthConfig,
    pub settings: Vec<Setting>,
    pub sizes: Vec<usize>,
    pub n_test: usize,
    pub data_dir: PathBuf,
    pub jobs_file: String,
    pub policy_threshold: f64,
    pub rep_start: usize,
    pub reps: usize,
    pub seed: u64,
    /// Output path; each command has its own default.
    pub out: Option<PathBuf>,
    pub parallel: usize,
    pub gradcheck: GradcheckConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: Experiment::Synthetic,
            methods: ModelKind::ALL.to_vec(),
            train: TrainConfig::default(),
            lambda_grid: Vec::new(),
            loss: None,
            synth: SynthConfig::new(Setting::S2, 2000, 0),
            settings: vec![Setting::S2],
            sizes: vec![500, 1000, 2000, 5000],
            n_test: 1000,
            data_dir: PathBuf::from("data"),
            jobs_file: "jobs.csv".into(),
            policy_threshold: 0.0,
            rep_start: 1,
            reps: 10,
            seed: 2024,
            out: None,
            parallel: 1,
            gradcheck: GradcheckConfig::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .trim()
        .parse()
        .map_err(|_| CliError::config(format!("bad value `{value}` for `{key}`")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, CliError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool, CliError> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(CliError::config(format!(
            "bad boolean `{value}` for `{key}`"
        ))),
    }
}

fn join<T: std::fmt::Display>(items: &[T]) -> String {
    items
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

impl ExperimentConfig {
    /// Defaults overridden by the file at `path`.
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    pub fn from_text(text: &str) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::config(format!("line {}: expected key = value", lineno + 1))
            })?;
            cfg.set(k.trim(), v.trim())
                .map_err(|e| CliError::config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(cfg)
    }

    /// Apply one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let t = &mut self.train;
        match key {
            "experiment" => self.experiment = parse(key, value)?,
            "methods" => self.methods = parse_list(key, value)?,
            "lambda" => t.lambda = parse(key, value)?,
            "lambda_grid" => self.lambda_grid = parse_list(key, value)?,
            "sigma" => t.divergence.sigma = parse(key, value)?,
            "jitter" => t.divergence.jitter = parse(key, value)?,
            "flavor" => t.divergence.flavor = parse::<Flavor>(key, value)?,
            "symmetrize" => t.divergence.symmetrize = parse_bool(key, value)?,
            "standardize_penalty" => t.standardize_penalty = parse_bool(key, value)?,
            "cfr_alpha" => t.cfr_alpha = parse(key, value)?,
            "loss" => {
                self.loss = match value.trim() {
                    "auto" | "" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "rep_layers" => t.rep_layers = parse_list(key, value)?,
            "head_layers" => t.head_layers = parse_list(key, value)?,
            "activation" => t.activation = parse::<Activation>(key, value)?,
            "learning_rate" => t.learning_rate = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "max_epochs" => t.max_epochs = parse(key, value)?,
            "patience" => t.patience = parse(key, value)?,
            "val_fraction" => t.val_fraction = parse(key, value)?,
            "min_group_per_batch" => t.min_group_per_batch = parse(key, value)?,
            "full_sample_diagnostic" => t.full_sample_diagnostic = parse_bool(key, value)?,
            "settings" => self.settings = parse_list(key, value)?,
            "sizes" => self.sizes = parse_list(key, value)?,
            "n_test" => self.n_test = parse(key, value)?,
            "d" => self.synth.d = parse(key, value)?,
            "d_c" => self.synth.d_c = parse(key, value)?,
            "d_o" => self.synth.d_o = parse(key, value)?,
            "d_t" => self.synth.d_t = parse(key, value)?,
            "xi" => self.synth.xi = parse(key, value)?,
            "noise_sd" => self.synth.noise_sd = parse(key, value)?,
            "data_dir" => self.data_dir = PathBuf::from(value),
            "jobs_file" => self.jobs_file = value.to_string(),
            "policy_threshold" => self.policy_threshold = parse(key, value)?,
            "rep_start" => self.rep_start = parse(key, value)?,
            "reps" => self.reps = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "out" => self.out = Some(PathBuf::from(value)),
            "parallel" => self.parallel = parse(key, value)?,
            "gradcheck_n" => self.gradcheck.n = parse(key, value)?,
            "gradcheck_d" => self.gradcheck.d = parse(key, value)?,
            "gradcheck_rep_width" => self.gradcheck.rep_width = parse(key, value)?,
            "gradcheck_head_width" => self.gradcheck.head_width = parse(key, value)?,
            "gradcheck_step" => self.gradcheck.step = parse(key, value)?,
            "gradcheck_tol" => self.gradcheck.tol = parse(key, value)?,
            other => return Err(CliError::config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.reps == 0 || self.rep_start == 0 {
            return Err(CliError::config(
                "replication range is empty (reps and rep_start must be ≥ 1)",
            ));
        }
        if self.methods.is_empty() {
            return Err(CliError::config("no methods selected"));
        }
        if self.parallel == 0 {
            return Err(CliError::config("parallel must be at least 1"));
        }
        if self.experiment == Experiment::Synthetic {
            if self.settings.is_empty() || self.sizes.is_empty() {
                return Err(CliError::config("synthetic runs need settings and sizes"));
            }
            if self.n_test == 0 {
                return Err(CliError::config("n_test must be positive"));
            }
        }
        if self
            .lambda_grid
            .iter()
            .any(|l| !(l.is_finite() && *l >= 0.0))
        {
            return Err(CliError::config("lambda_grid entries must be nonnegative"));
        }
        for m in &self.methods {
            self.train_config(*m, 0).validate()?;
        }
        Ok(())
    }

    pub fn replications(&self) -> std::ops::RangeInclusive<usize> {
        self.rep_start..=self.rep_start + self.reps - 1
    }

    pub fn loss_kind(&self) -> LossKind {
        self.loss.unwrap_or(match self.experiment {
            Experiment::Jobs => LossKind::Bce,
            _ => LossKind::Mse,
        })
    }

    /// Training settings for one run of `method`.
    pub fn train_config(&self, method: ModelKind, seed: u64) -> TrainConfig {
        TrainConfig {
            model_kind: method,
            loss_kind: self.loss_kind(),
            seed,
            ..self.train.clone()
        }
    }

    pub fn jobs_path(&self) -> PathBuf {
        self.data_dir.join(&self.jobs_file)
    }

    /// Canonical text of everything that shapes the results of `method`,
    /// excluding seeds, paths and parallelism.
    pub fn canonical(&self, method: ModelKind) -> String {
        let t = self.train_config(method, 0);
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        kv("experiment", self.experiment.to_string());
        kv("model", method.to_string());
        kv("lambda", t.lambda.to_string());
        kv("lambda_grid", join(&self.lambda_grid));
        kv("sigma", t.divergence.sigma.to_string());
        kv("jitter", t.divergence.jitter.to_string());
        kv("flavor", t.divergence.flavor.to_string());
        kv("symmetrize", t.divergence.symmetrize.to_string());
        kv("standardize_penalty", t.standardize_penalty.to_string());
        kv("cfr_alpha", t.cfr_alpha.to_string());
        kv("loss", t.loss_kind.to_string());
        kv("rep_layers", join(&t.rep_layers));
        kv("head_layers", join(&t.head_layers));
        kv("activation", t.activation.to_string());
        kv("learning_rate", t.learning_rate.to_string());
        kv("batch_size", t.batch_size.to_string());
        kv("max_epochs", t.max_epochs.to_string());
        kv("patience", t.patience.to_string());
        kv("val_fraction", t.val_fraction.to_string());
        kv("min_group_per_batch", t.min_group_per_batch.to_string());
        match self.experiment {
            Experiment::Synthetic => {
                let c = &self.synth;
                kv("n_test", self.n_test.to_string());
                kv("d", c.d.to_string());
                kv("blocks", format!("{},{},{}", c.d_c, c.d_o, c.d_t));
                kv("xi", c.xi.to_string());
                kv("noise_sd", c.noise_sd.to_string());
            }
            Experiment::Jobs => kv("policy_threshold", self.policy_threshold.to_string()),
            _ => {}
        }
        s
    }

    /// Short hash of [`Self::canonical`].
    pub fn fingerprint(&self, method: ModelKind) -> String {
        let digest = Sha256::digest(self.canonical(method).as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}
