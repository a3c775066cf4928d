//! Dataset I/O: IHDP and Jobs loaders, stratified splits, covariate
//! standardization and result persistence.
//!
//! Potential-outcome CSV files (IHDP, synthetic) use the header
//! `t,y_factual,y_cfactual,mu0,mu1,x1..xd`; synthetic files append a
//! `propensity` column before the covariates. Jobs files use
//! `t,y,e,x1..x17` with `y = 1` meaning unemployed.

use std::fs::File;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthgen::SampleSet;

pub const IHDP_COVARIATES: usize = 25;
pub const IHDP_TOTAL_ROWS: usize = 747;
pub const IHDP_TREATED_ROWS: usize = 139;
pub const JOBS_COVARIATES: usize = 17;

/// Train/validation/test proportions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub stratify_by_t: bool,
    pub seed: u64,
}

impl SplitSpec {
    /// 63/27/10, stratified.
    pub fn standard(seed: u64) -> Self {
        Self {
            train_frac: 0.63,
            val_frac: 0.27,
            test_frac: 0.10,
            stratify_by_t: true,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let f = [self.train_frac, self.val_frac, self.test_frac];
        if f.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidSplit(format!(
                "fractions must be positive, got {f:?}"
            )));
        }
        if (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidSplit(format!(
                "fractions must sum to 1, got {f:?}"
            )));
        }
        Ok(())
    }
}

/// Allocate `n` items to parts with the largest-remainder rule.
fn allocate(n: usize, fracs: &[f64]) -> Vec<usize> {
    let raw: Vec<f64> = fracs.iter().map(|f| f * n as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut left = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..fracs.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = raw[a] - raw[a].floor();
        let rb = raw[b] - raw[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &k in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[k] += 1;
        left -= 1;
    }
    counts
}

/// Partition row indices `0..t.len()` into `fracs.len()` disjoint parts.
///
/// With `stratify`, each treatment group is shuffled and allocated
/// separately, so every part keeps the group proportions to within one unit.
/// Every part must receive at least one row from every stratum. Indices in
/// each part are returned in ascending order.
pub fn partition_indices(
    t: &[u8],
    fracs: &[f64],
    stratify: bool,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    let strata: Vec<Vec<usize>> = if stratify {
        let ctrl: Vec<usize> = (0..t.len()).filter(|&i| t[i] == 0).collect();
        let trt: Vec<usize> = (0..t.len()).filter(|&i| t[i] == 1).collect();
        vec![ctrl, trt]
    } else {
        vec![(0..t.len()).collect()]
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut parts = vec![Vec::new(); fracs.len()];
    for (s, mut idx) in strata.into_iter().enumerate() {
        idx.shuffle(&mut rng);
        let counts = allocate(idx.len(), fracs);
        if let Some(k) = counts.iter().position(|&c| c == 0) {
            return Err(Error::InvalidSplit(format!(
                "part {k} would receive no rows from stratum {s} ({} rows)",
                idx.len()
            )));
        }
        let mut start = 0;
        for (part, c) in parts.iter_mut().zip(counts) {
            part.extend_from_slice(&idx[start..start + c]);
            start += c;
        }
    }
    for p in &mut parts {
        p.sort_unstable();
    }
    Ok(parts)
}

/// Split into (train, validation, test).
pub fn split(data: &SampleSet, spec: &SplitSpec) -> Result<(SampleSet, SampleSet, SampleSet)> {
    spec.validate()?;
    let parts = partition_indices(
        &data.t,
        &[spec.train_frac, spec.val_frac, spec.test_frac],
        spec.stratify_by_t,
        spec.seed,
    )?;
    Ok((
        data.subset(&parts[0]),
        data.subset(&parts[1]),
        data.subset(&parts[2]),
    ))
}

/// Per-column affine standardization fitted on one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    /// Columns whose fitted values are all 0 or 1; these pass through.
    pub binary: Vec<bool>,
}

impl Standardizer {
    pub fn fit(x: &Array2<f64>) -> Result<Self> {
        let n = x.nrows();
        if n < 2 {
            return Err(Error::InsufficientSample { needed: 2, got: n });
        }
        let mut mean = Vec::with_capacity(x.ncols());
        let mut sd = Vec::with_capacity(x.ncols());
        let mut binary = Vec::with_capacity(x.ncols());
        for col in x.columns() {
            let m = col.sum() / n as f64;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64;
            let s = var.sqrt();
            mean.push(m);
            sd.push(if s > 0.0 { s } else { 1.0 });
            binary.push(col.iter().all(|&v| v == 0.0 || v == 1.0));
        }
        Ok(Self { mean, sd, binary })
    }

    pub fn transform(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.mean.len() {
            return Err(Error::invalid(format!(
                "standardizer fitted on {} columns, got {}",
                self.mean.len(),
                x.ncols()
            )));
        }
        let mut out = x.clone();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            if !self.binary[j] {
                col.mapv_inplace(|v| (v - self.mean[j]) / self.sd[j]);
            }
        }
        Ok(out)
    }
}

fn open_csv(path: &Path, replication: Option<usize>) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound {
            path: path.to_path_buf(),
            replication,
        },
        _ => Error::Io {
            path: path.to_path_buf(),
            source: e,
        },
    })?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(file))
}

fn format_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::Format {
        file: path.to_path_buf(),
        detail: detail.into(),
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    format_err(path, e.to_string())
}

/// Read a numeric CSV with an exact header; returns rows of floats.
fn read_numeric(
    path: &Path,
    header: &[String],
    replication: Option<usize>,
) -> Result<Vec<Vec<f64>>> {
    let mut rdr = open_csv(path, replication)?;
    let got: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    if got != header {
        return Err(format_err(
            path,
            format!(
                "expected {} columns with header {}, got {}",
                header.len(),
                header.join(","),
                got.join(",")
            ),
        ));
    }
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        if rec.len() != header.len() {
            return Err(format_err(
                path,
                format!(
                    "row {} has {} fields, expected {}",
                    line + 1,
                    rec.len(),
                    header.len()
                ),
            ));
        }
        let row = rec
            .iter()
            .enumerate()
            .map(|(j, f)| {
                f.trim().parse::<f64>().map_err(|_| {
                    format_err(
                        path,
                        format!("row {} column {}: cannot parse {f:?}", line + 1, header[j]),
                    )
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

fn covariate_names(d: usize) -> impl Iterator<Item = String> {
    (1..=d).map(|j| format!("x{j}"))
}

fn potential_outcome_header(d: usize, with_propensity: bool) -> Vec<String> {
    let mut h: Vec<String> = ["t", "y_factual", "y_cfactual", "mu0", "mu1"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    if with_propensity {
        h.push("propensity".into());
    }
    h.extend(covariate_names(d));
    h
}

fn parse_treatment(path: &Path, row: usize, v: f64) -> Result<u8> {
    match v {
        0.0 => Ok(0),
        1.0 => Ok(1),
        _ => Err(format_err(
            path,
            format!("row {row}: treatment must be 0 or 1, got {v}"),
        )),
    }
}

/// Read a potential-outcome CSV with `d` covariates.
pub fn read_potential_outcomes(path: &Path, d: usize, with_propensity: bool) -> Result<SampleSet> {
    read_potential_outcomes_rep(path, d, with_propensity, None)
}

fn read_potential_outcomes_rep(
    path: &Path,
    d: usize,
    with_propensity: bool,
    replication: Option<usize>,
) -> Result<SampleSet> {
    let header = potential_outcome_header(d, with_propensity);
    let rows = read_numeric(path, &header, replication)?;
    let n = rows.len();
    let off = if with_propensity { 6 } else { 5 };
    let mut t = Vec::with_capacity(n);
    for (i, r) in rows.iter().enumerate() {
        t.push(parse_treatment(path, i + 1, r[0])?);
    }
    let col = |j: usize| Array1::from_iter(rows.iter().map(|r| r[j]));
    let x = Array2::from_shape_fn((n, d), |(i, j)| rows[i][off + j]);
    let mu0 = col(3);
    let mu1 = col(4);
    let s = SampleSet {
        x,
        t,
        y: col(1),
        y_cf: Some(col(2)),
        cate: Some(&mu1 - &mu0),
        mu0: Some(mu0),
        mu1: Some(mu1),
        propensity: with_propensity.then(|| col(5)),
        randomized: None,
    };
    s.validate().map_err(|e| format_err(path, e.to_string()))?;
    Ok(s)
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn create_writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn write_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => io_err(path, io),
        other => format_err(path, format!("{other:?}")),
    }
}

/// Write a sample with full ground truth in the potential-outcome schema.
/// The `propensity` column is written when the sample carries one.
pub fn write_potential_outcomes(path: &Path, data: &SampleSet) -> Result<()> {
    let missing = |what: &str| Error::invalid(format!("sample has no {what} column"));
    let y_cf = data
        .y_cf
        .as_ref()
        .ok_or_else(|| missing("counterfactual"))?;
    let mu0 = data.mu0.as_ref().ok_or_else(|| missing("mu0"))?;
    let mu1 = data.mu1.as_ref().ok_or_else(|| missing("mu1"))?;
    let prop = data.propensity.as_ref();
    let mut w = create_writer(path)?;
    w.write_record(potential_outcome_header(data.dim(), prop.is_some()))
        .map_err(|e| write_err(path, e))?;
    for i in 0..data.len() {
        let mut rec = vec![
            data.t[i].to_string(),
            data.y[i].to_string(),
            y_cf[i].to_string(),
            mu0[i].to_string(),
            mu1[i].to_string(),
        ];
        if let Some(p) = prop {
            rec.push(p[i].to_string());
        }
        rec.extend(data.x.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(|e| write_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn ihdp_paths(dir: &Path, replication: usize) -> (PathBuf, PathBuf) {
    (
        dir.join(format!("ihdp_train_{replication}.csv")),
        dir.join(format!("ihdp_test_{replication}.csv")),
    )
}

/// Load one IHDP replication as (train, test), with continuous covariates
/// standardized by train-file statistics.
pub fn load_ihdp(dir: &Path, replication: usize) -> Result<(SampleSet, SampleSet)> {
    let (train_path, test_path) = ihdp_paths(dir, replication);
    let mut train =
        read_potential_outcomes_rep(&train_path, IHDP_COVARIATES, false, Some(replication))?;
    let mut test =
        read_potential_outcomes_rep(&test_path, IHDP_COVARIATES, false, Some(replication))?;
    let total = train.len() + test.len();
    let treated = train.n_treated() + test.n_treated();
    if total != IHDP_TOTAL_ROWS || treated != IHDP_TREATED_ROWS {
        return Err(format_err(
            &train_path,
            format!(
                "replication {replication}: expected {IHDP_TOTAL_ROWS} rows ({IHDP_TREATED_ROWS} treated) \
                 across {} and {}, found {total} ({treated} treated)",
                train_path.display(),
                test_path.display()
            ),
        ));
    }
    let st = Standardizer::fit(&train.x)?;
    train.x = st.transform(&train.x)?;
    test.x = st.transform(&test.x)?;
    Ok((train, test))
}

/// Result of reading a Jobs file, with non-fatal schema findings.
#[derive(Debug, Clone, PartialEq)]
pub struct JobsLoad {
    pub data: SampleSet,
    pub warnings: Vec<String>,
}

/// Load the Jobs CSV. The stored outcome is flipped to employment
/// (`y = 1 − unemployed`) so that larger is better, and continuous
/// covariates are standardized over the whole file.
pub fn load_jobs(path: &Path) -> Result<JobsLoad> {
    let mut header: Vec<String> = ["t", "y", "e"].iter().map(|s| s.to_string()).collect();
    header.extend(covariate_names(JOBS_COVARIATES));
    let rows = read_numeric(path, &header, None)?;
    let n = rows.len();
    let mut t = Vec::with_capacity(n);
    let mut e = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for (i, r) in rows.iter().enumerate() {
        t.push(parse_treatment(path, i + 1, r[0])?);
        let flag = |v: f64, what: &str| match v {
            0.0 => Ok(0u8),
            1.0 => Ok(1u8),
            _ => Err(format_err(
                path,
                format!("row {}: {what} must be 0 or 1, got {v}", i + 1),
            )),
        };
        y.push(1.0 - flag(r[1], "y")? as f64);
        e.push(flag(r[2], "e")?);
    }
    let rand_t: Vec<u8> = (0..n).filter(|&i| e[i] == 1).map(|i| t[i]).collect();
    if !rand_t.contains(&0) || !rand_t.contains(&1) {
        return Err(format_err(
            path,
            "randomized subset must contain treated and control units",
        ));
    }
    let mut warnings = Vec::new();
    let stray = (0..n).filter(|&i| t[i] == 1 && e[i] == 0).count();
    if stray > 0 {
        warnings.push(format!(
            "{stray} treated rows are outside the randomized subset (e = 0)"
        ));
    }
    let x = Array2::from_shape_fn((n, JOBS_COVARIATES), |(i, j)| rows[i][3 + j]);
    let x = Standardizer::fit(&x)?.transform(&x)?;
    let mut data =
        SampleSet::new(x, t, Array1::from(y)).map_err(|err| format_err(path, err.to_string()))?;
    data.randomized = Some(e);
    Ok(JobsLoad { data, warnings })
}

/// One evaluated (method, dataset, replication) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub method: String,
    pub dataset: String,
    pub rep: usize,
    pub seed: u64,
    pub pehe_in: Option<f64>,
    pub pehe_out: Option<f64>,
    pub policy_risk_in: Option<f64>,
    pub policy_risk_out: Option<f64>,
    pub ate_err: Option<f64>,
    pub wall_seconds: f64,
    pub config_hash: String,
}

pub const RESULTS_HEADER: &str =
    "method,dataset,rep,seed,pehe_in,pehe_out,policy_risk_in,policy_risk_out,ate_err,wall_seconds,config_hash";

impl RunResult {
    pub fn has_metric(&self) -> bool {
        [
            self.pehe_in,
            self.pehe_out,
            self.policy_risk_in,
            self.policy_risk_out,
            self.ate_err,
        ]
        .iter()
        .any(Option::is_some)
    }
}

pub fn write_results(results: &[RunResult], path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(File::create(path).map_err(|e| io_err(path, e))?);
    w.write_record(RESULTS_HEADER.split(','))
        .map_err(|e| write_err(path, e))?;
    for r in results {
        w.serialize(r).map_err(|e| write_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn read_results(path: &Path) -> Result<Vec<RunResult>> {
    let mut rdr = open_csv(path, None)?;
    let header: Vec<&str> = RESULTS_HEADER.split(',').collect();
    let got = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    if got.iter().collect::<Vec<_>>() != header {
        return Err(format_err(
            path,
            format!("results header must be {RESULTS_HEADER}"),
        ));
    }
    rdr.deserialize()
        .map(|r| r.map_err(|e| csv_err(path, e)))
        .collect()
}
