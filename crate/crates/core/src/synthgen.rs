//! Synthetic data-generating processes with known potential outcomes.
//!
//! Covariates are i.i.d. standard normal and laid out in index order as
//! `[X_c | X_o | X_t | X_τ | noise]`. Both settings share
//!
//! ```text
//! μ₀(x) = Σ (X_c² + X_o²)
//! π(x)  = expit(ξ · (mean(X_c²) − ω)),  ω = sample median of mean(X_c²)
//! ```
//!
//! Setting `S1` has `μ₁ = μ₀` (no effect); `S2` adds `Σ X_τ²` to `μ₁` using
//! the five coordinates that follow `X_t`.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Number of effect-modifying covariates in setting `S2`.
pub const TAU_DIM: usize = 5;

/// Observational dataset with optional ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub x: Array2<f64>,
    /// Treatment indicator, 0 or 1.
    pub t: Vec<u8>,
    /// Observed (factual) outcome.
    pub y: Array1<f64>,
    /// Noisy counterfactual outcome, when the source provides one.
    pub y_cf: Option<Array1<f64>>,
    pub mu0: Option<Array1<f64>>,
    pub mu1: Option<Array1<f64>>,
    pub cate: Option<Array1<f64>>,
    pub propensity: Option<Array1<f64>>,
    /// 1 for units from a randomized experiment.
    pub randomized: Option<Vec<u8>>,
}

impl SampleSet {
    /// Bare observational data without ground truth.
    pub fn new(x: Array2<f64>, t: Vec<u8>, y: Array1<f64>) -> Result<Self> {
        let s = Self {
            x,
            t,
            y,
            y_cf: None,
            mu0: None,
            mu1: None,
            cate: None,
            propensity: None,
            randomized: None,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_treated(&self) -> usize {
        self.t.iter().filter(|&&t| t == 1).count()
    }

    pub fn treated_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.t[i] == 1).collect()
    }

    pub fn control_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.t[i] == 0).collect()
    }

    /// Rows `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Self {
        let pick = |a: &Array1<f64>| Array1::from_iter(idx.iter().map(|&i| a[i]));
        Self {
            x: self.x.select(ndarray::Axis(0), idx),
            t: idx.iter().map(|&i| self.t[i]).collect(),
            y: pick(&self.y),
            y_cf: self.y_cf.as_ref().map(pick),
            mu0: self.mu0.as_ref().map(pick),
            mu1: self.mu1.as_ref().map(pick),
            cate: self.cate.as_ref().map(pick),
            propensity: self.propensity.as_ref().map(pick),
            randomized: self
                .randomized
                .as_ref()
                .map(|r| idx.iter().map(|&i| r[i]).collect()),
        }
    }

    /// Rows of `self` followed by rows of `other`.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.dim() != other.dim() {
            return Err(Error::invalid(
                "cannot concatenate sample sets of different widths",
            ));
        }
        let cat =
            |a: &Array1<f64>, b: &Array1<f64>| ndarray::concatenate![ndarray::Axis(0), *a, *b];
        let both = |a: &Option<Array1<f64>>, b: &Option<Array1<f64>>| match (a, b) {
            (Some(a), Some(b)) => Some(cat(a, b)),
            _ => None,
        };
        let s = Self {
            x: ndarray::concatenate![ndarray::Axis(0), self.x, other.x],
            t: self.t.iter().chain(&other.t).copied().collect(),
            y: cat(&self.y, &other.y),
            y_cf: both(&self.y_cf, &other.y_cf),
            mu0: both(&self.mu0, &other.mu0),
            mu1: both(&self.mu1, &other.mu1),
            cate: both(&self.cate, &other.cate),
            propensity: both(&self.propensity, &other.propensity),
            randomized: match (&self.randomized, &other.randomized) {
                (Some(a), Some(b)) => Some(a.iter().chain(b).copied().collect()),
                _ => None,
            },
        };
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.x.nrows() != n || self.t.len() != n {
            return Err(Error::invalid(format!(
                "row counts disagree: x {}, t {}, y {n}",
                self.x.nrows(),
                self.t.len()
            )));
        }
        if self.t.iter().any(|&t| t > 1) {
            return Err(Error::invalid("treatment must be 0 or 1"));
        }
        for (name, col) in [
            ("y_cf", &self.y_cf),
            ("mu0", &self.mu0),
            ("mu1", &self.mu1),
            ("cate", &self.cate),
            ("propensity", &self.propensity),
        ] {
            if col.as_ref().is_some_and(|c| c.len() != n) {
                return Err(Error::invalid(format!("{name} has the wrong length")));
            }
        }
        if let (Some(m0), Some(m1), Some(c)) = (&self.mu0, &self.mu1, &self.cate) {
            if (0..n).any(|i| c[i] != m1[i] - m0[i]) {
                return Err(Error::invalid("cate must equal mu1 - mu0"));
            }
        }
        if let Some(p) = &self.propensity {
            if p.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
                return Err(Error::invalid("propensity must lie strictly inside (0, 1)"));
            }
        }
        if let Some(r) = &self.randomized {
            if r.len() != n || r.iter().any(|&e| e > 1) {
                return Err(Error::invalid("randomized flag must be 0/1 per row"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Setting {
    /// No treatment effect.
    S1,
    /// Effect `Σ X_τ²`.
    S2,
}

impl std::str::FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "s1" | "1" | "i" => Ok(Setting::S1),
            "s2" | "2" | "ii" => Ok(Setting::S2),
            other => Err(Error::invalid(format!(
                "unknown synthetic setting `{other}`"
            ))),
        }
    }
}

impl std::fmt::Display for Setting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Setting::S1 => "S1",
            Setting::S2 => "S2",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub setting: Setting,
    pub n: usize,
    pub d: usize,
    pub d_c: usize,
    pub d_o: usize,
    pub d_t: usize,
    /// Selection-bias strength.
    pub xi: f64,
    pub noise_sd: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn new(setting: Setting, n: usize, seed: u64) -> Self {
        Self {
            setting,
            n,
            d: 25,
            d_c: 5,
            d_o: 5,
            d_t: 5,
            xi: 3.0,
            noise_sd: 1.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::invalid("need at least two units"));
        }
        if self.d_c == 0 {
            return Err(Error::invalid("d_c must be positive"));
        }
        let used = self.d_c + self.d_o + self.d_t;
        if used > self.d {
            return Err(Error::invalid(format!(
                "block dims {used} exceed d = {}",
                self.d
            )));
        }
        if self.setting == Setting::S2 && self.d < used + TAU_DIM {
            return Err(Error::invalid(format!(
                "setting S2 needs {TAU_DIM} more coordinates after the first {used}"
            )));
        }
        if !self.xi.is_finite() || !(self.noise_sd >= 0.0) {
            return Err(Error::invalid("xi must be finite and noise_sd nonnegative"));
        }
        Ok(())
    }
}

fn expit(v: f64) -> f64 {
    crate::gradcore::sigmoid(v)
}

pub(crate) fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

/// Draw one dataset.
pub fn simulate(cfg: &SynthConfig) -> Result<SampleSet> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.n;
    let x = Array2::from_shape_simple_fn((n, cfg.d), || rng.sample::<f64, _>(StandardNormal));

    let co = cfg.d_c + cfg.d_o;
    let tau_start = co + cfg.d_t;
    let sq_sum =
        |i: usize, r: std::ops::Range<usize>| r.map(|j| x[[i, j]] * x[[i, j]]).sum::<f64>();

    let conf_score: Vec<f64> = (0..n)
        .map(|i| sq_sum(i, 0..cfg.d_c) / cfg.d_c as f64)
        .collect();
    let omega = median(&conf_score);

    let mu0 = Array1::from_shape_fn(n, |i| sq_sum(i, 0..co));
    let mu1 = match cfg.setting {
        Setting::S1 => mu0.clone(),
        Setting::S2 => {
            Array1::from_shape_fn(n, |i| mu0[i] + sq_sum(i, tau_start..tau_start + TAU_DIM))
        }
    };
    let cate = &mu1 - &mu0;
    let propensity = Array1::from_shape_fn(n, |i| {
        expit(cfg.xi * (conf_score[i] - omega)).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON)
    });

    let t: Vec<u8> = (0..n)
        .map(|i| u8::from(rng.random::<f64>() < propensity[i]))
        .collect();
    let mut y = Array1::zeros(n);
    let mut y_cf = Array1::zeros(n);
    for i in 0..n {
        let e_f: f64 = rng.sample(StandardNormal);
        let e_cf: f64 = rng.sample(StandardNormal);
        let (mf, mcf) = if t[i] == 1 {
            (mu1[i], mu0[i])
        } else {
            (mu0[i], mu1[i])
        };
        y[i] = mf + cfg.noise_sd * e_f;
        y_cf[i] = mcf + cfg.noise_sd * e_cf;
    }

    let s = SampleSet {
        x,
        t,
        y,
        y_cf: Some(y_cf),
        mu0: Some(mu0),
        mu1: Some(mu1),
        cate: Some(cate),
        propensity: Some(propensity),
        randomized: None,
    };
    s.validate()?;
    Ok(s)
}

/// SplitMix64 finalizer; mixes replication coordinates into seeds.
pub fn mix_seed(base: u64, parts: &[u64]) -> u64 {
    let mut z = base;
    for &p in parts {
        z ^= p.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

/// One train/test draw of a benchmark suite.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteEntry {
    pub size: usize,
    pub rep: usize,
    pub train_seed: u64,
    pub test_seed: u64,
    pub train: SampleSet,
    pub test: SampleSet,
}

/// Seeds for replication `rep` of train size `size`: `(train, test)`.
pub fn suite_seeds(base_seed: u64, size: usize, rep: usize) -> (u64, u64) {
    (
        mix_seed(base_seed, &[size as u64, rep as u64, 0]),
        mix_seed(base_seed, &[size as u64, rep as u64, 1]),
    )
}

/// Independent train and test draws for every `(size, rep)`, `rep` in
/// `1..=reps`. `cfg_base.n` and `cfg_base.seed` are replaced per draw.
pub fn make_benchmark_suite(
    cfg_base: &SynthConfig,
    sizes: &[usize],
    n_test: usize,
    reps: usize,
) -> Result<Vec<SuiteEntry>> {
    if sizes.is_empty() {
        return Err(Error::invalid("benchmark suite needs at least one size"));
    }
    let mut out = Vec::with_capacity(sizes.len() * reps);
    for &size in sizes {
        for rep in 1..=reps {
            out.push(suite_entry(cfg_base, size, n_test, rep)?);
        }
    }
    Ok(out)
}

/// A single suite draw, identical to the matching element of
/// [`make_benchmark_suite`].
pub fn suite_entry(
    cfg_base: &SynthConfig,
    size: usize,
    n_test: usize,
    rep: usize,
) -> Result<SuiteEntry> {
    let (train_seed, test_seed) = suite_seeds(cfg_base.seed, size, rep);
    let train = simulate(&SynthConfig {
        n: size,
        seed: train_seed,
        ..cfg_base.clone()
    })?;
    let test = simulate(&SynthConfig {
        n: n_test,
        seed: test_seed,
        ..cfg_base.clone()
    })?;
    Ok(SuiteEntry {
        size,
        rep,
        train_seed,
        test_seed,
        train,
        test,
    })
}
