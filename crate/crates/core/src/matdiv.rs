//! Kernel statistics and Bregman matrix divergences.
//!
//! The conditional discrepancy between two groups is measured through centered
//! correntropy matrices: for a group with representation rows `Φᵢ` and outcomes
//! `yᵢ`, `C_{Φy}` is the correntropy matrix of the concatenated vectors
//! `[Φᵢ, yᵢ]` and `C_Φ` its leading block. The divergence from group `p` to
//! group `q` is
//!
//! ```text
//! D(C^p_{Φy} ‖ C^q_{Φy}) − D(C^p_Φ ‖ C^q_Φ)
//! ```
//!
//! with `D` a Bregman matrix divergence (LogDet or von Neumann).
//!
//! All sums over rows are taken in a canonical order (per-column sorted values)
//! so every output is a bit-exact symmetric function of the rows.

use std::cmp::Ordering;

use ndarray::{s, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Flavor {
    /// `φ(A) = −log det A`.
    #[default]
    LogDet,
    /// `φ(A) = tr(A log A − A)`.
    VonNeumann,
}

impl std::str::FromStr for Flavor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "logdet" => Ok(Flavor::LogDet),
            "vonneumann" | "von_neumann" | "vn" => Ok(Flavor::VonNeumann),
            other => Err(Error::invalid(format!(
                "unknown divergence flavor `{other}`"
            ))),
        }
    }
}

impl std::fmt::Display for Flavor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Flavor::LogDet => f.write_str("logdet"),
            Flavor::VonNeumann => f.write_str("vonneumann"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceConfig {
    /// Gaussian kernel width, in units of the (standardized) inputs.
    pub sigma: f64,
    /// Added to the diagonal of every correntropy matrix.
    pub jitter: f64,
    pub flavor: Flavor,
    /// Average both directions instead of `from → to` only.
    pub symmetrize: bool,
}

impl Default for DivergenceConfig {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            jitter: 1e-6,
            flavor: Flavor::LogDet,
            symmetrize: false,
        }
    }
}

impl DivergenceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::invalid(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        if !(self.jitter >= 0.0) || !self.jitter.is_finite() {
            return Err(Error::invalid(format!(
                "jitter must be nonnegative, got {}",
                self.jitter
            )));
        }
        Ok(())
    }
}

/// Symmetric positive-definite matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix {
    entries: Array2<f64>,
}

impl SpdMatrix {
    /// Checks exact symmetry and positive definiteness (Cholesky).
    pub fn new(entries: Array2<f64>) -> Result<Self> {
        let n = linalg::square_dim(entries.view())?;
        for i in 0..n {
            for j in (i + 1)..n {
                if entries[[i, j]] != entries[[j, i]] {
                    return Err(Error::invalid(format!("matrix not symmetric at ({i},{j})")));
                }
            }
        }
        linalg::cholesky(entries.view())?;
        Ok(Self { entries })
    }

    pub fn identity_scaled(dim: usize, c: f64) -> Result<Self> {
        Self::new(Array2::eye(dim) * c)
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.entries
    }

    /// Principal submatrix on the given (sorted, distinct) indices.
    pub fn principal(&self, idx: &[usize]) -> Result<Self> {
        Self::new(principal_submatrix(self.entries.view(), idx))
    }
}

pub(crate) fn principal_submatrix(a: ArrayView2<f64>, idx: &[usize]) -> Array2<f64> {
    let k = idx.len();
    Array2::from_shape_fn((k, k), |(i, j)| a[[idx[i], idx[j]]])
}

/// Gaussian kernel `exp(−(a−b)²/(2σ²))`.
pub fn rbf_kernel(a: f64, b: f64, sigma: f64) -> Result<f64> {
    if !a.is_finite() || !b.is_finite() {
        return Err(Error::invalid("kernel arguments must be finite"));
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    let d = a - b;
    Ok((-d * d / (2.0 * sigma * sigma)).exp())
}

/// Empirical centered correntropy between two equally long samples.
pub fn centered_correntropy(u: &[f64], v: &[f64], sigma: f64) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} vs {}",
            u.len(),
            v.len()
        )));
    }
    if u.len() < 2 {
        return Err(Error::InsufficientSample {
            needed: 2,
            got: u.len(),
        });
    }
    rbf_kernel(0.0, 0.0, sigma)?;
    if u.iter().chain(v).any(|x| !x.is_finite()) {
        return Err(Error::invalid("correntropy inputs must be finite"));
    }
    let z = Array2::from_shape_fn((u.len(), 2), |(i, c)| if c == 0 { u[i] } else { v[i] });
    let est = CorrentropyEstimate::compute(z.view(), sigma, 0.0, false);
    Ok(est.matrix[[0, 1]])
}

/// Centered correntropy matrix of the columns of `z` (rows are samples).
pub fn correntropy_matrix(z: ArrayView2<f64>, cfg: &DivergenceConfig) -> Result<SpdMatrix> {
    cfg.validate()?;
    check_sample(z)?;
    let est = CorrentropyEstimate::compute(z, cfg.sigma, cfg.jitter, false);
    linalg::cholesky(est.matrix.view()).map_err(|e| e.with_batch_size(z.nrows()))?;
    Ok(SpdMatrix {
        entries: est.matrix,
    })
}

fn check_sample(z: ArrayView2<f64>) -> Result<()> {
    if z.nrows() < 2 {
        return Err(Error::InsufficientSample {
            needed: 2,
            got: z.nrows(),
        });
    }
    if z.ncols() == 0 {
        return Err(Error::invalid("correntropy of zero columns"));
    }
    if z.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("correntropy input".into()));
    }
    Ok(())
}

/// Median of pairwise absolute differences within each column, pooled over
/// columns. Useful as a data-driven kernel width.
pub fn median_heuristic_sigma(probe: ArrayView2<f64>) -> Result<f64> {
    check_sample(probe)?;
    let n = probe.nrows();
    let mut diffs = Vec::with_capacity(probe.ncols() * n * (n - 1) / 2);
    for col in probe.axis_iter(Axis(1)) {
        for i in 0..n {
            for j in (i + 1)..n {
                diffs.push((col[i] - col[j]).abs());
            }
        }
    }
    diffs.sort_by(f64::total_cmp);
    let m = diffs.len();
    let med = if m % 2 == 1 {
        diffs[m / 2]
    } else {
        0.5 * (diffs[m / 2 - 1] + diffs[m / 2])
    };
    if !(med > 0.0) {
        return Err(Error::invalid("median pairwise difference is zero"));
    }
    Ok(med)
}

/// Raw correntropy matrix plus what the reverse pass needs.
#[derive(Debug, Clone)]
pub(crate) struct CorrentropyEstimate {
    pub matrix: Array2<f64>,
    z: Array2<f64>,
    sigma: f64,
    /// `cross[(a*d + b)*n + k] = Σ_j κ'(z_ka − z_jb)`; empty when not requested.
    cross: Vec<f64>,
}

impl CorrentropyEstimate {
    pub fn compute(z: ArrayView2<f64>, sigma: f64, jitter: f64, want_grad: bool) -> Self {
        let (n, d) = z.dim();
        let inv2s2 = 1.0 / (2.0 * sigma * sigma);
        let invs2 = 1.0 / (sigma * sigma);
        let nf = n as f64;

        // Canonical orderings per column.
        let mut sorted = Vec::with_capacity(d);
        let mut perms = Vec::with_capacity(d);
        for col in z.axis_iter(Axis(1)) {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.sort_by(|&i, &j| col[i].total_cmp(&col[j]).then(Ordering::Equal));
            sorted.push(perm.iter().map(|&i| col[i]).collect::<Vec<f64>>());
            perms.push(perm);
        }

        let mut cross = if want_grad {
            vec![0.0; d * d * n]
        } else {
            Vec::new()
        };
        let mut matrix = Array2::<f64>::zeros((d, d));
        let mut terms = vec![0.0; n];
        let mut acc_b = vec![0.0; n];

        for a in 0..d {
            let sa = &sorted[a];
            let pa = &perms[a];
            for b in a..d {
                let sb = &sorted[b];
                let pb = &perms[b];

                // Paired term (1/n) Σ_i κ(z_ia, z_ib).
                let paired = if a == b {
                    1.0
                } else {
                    let ca = z.column(a);
                    let cb = z.column(b);
                    for i in 0..n {
                        let dl = ca[i] - cb[i];
                        terms[i] = (-dl * dl * inv2s2).exp();
                    }
                    terms.sort_by(f64::total_cmp);
                    terms.iter().sum::<f64>() / nf
                };

                // Cross term (1/n²) Σ_i Σ_j κ(z_ia, z_jb).
                let mut total = 0.0;
                if a == b {
                    let base = (a * d + a) * n;
                    for p in 0..n {
                        let x = sa[p];
                        let mut row = 0.0;
                        for q in (p + 1)..n {
                            let dl = x - sb[q];
                            let e = (-dl * dl * inv2s2).exp();
                            row += e;
                            if want_grad {
                                let g = -dl * invs2 * e;
                                cross[base + pa[p]] += g;
                                cross[base + pa[q]] -= g;
                            }
                        }
                        total += row;
                    }
                    total = 2.0 * total + nf;
                } else {
                    let base_ab = (a * d + b) * n;
                    let base_ba = (b * d + a) * n;
                    if want_grad {
                        // Column-b accumulators kept in sorted order, scattered once.
                        acc_b.iter_mut().for_each(|v| *v = 0.0);
                        for p in 0..n {
                            let x = sa[p];
                            let mut row = 0.0;
                            let mut grow = 0.0;
                            for (q, &y) in sb.iter().enumerate() {
                                let dl = x - y;
                                let e = (-dl * dl * inv2s2).exp();
                                row += e;
                                let g = -dl * invs2 * e;
                                grow += g;
                                acc_b[q] -= g;
                            }
                            cross[base_ab + pa[p]] += grow;
                            total += row;
                        }
                        for (q, &v) in acc_b.iter().enumerate() {
                            cross[base_ba + pb[q]] += v;
                        }
                    } else {
                        for &x in sa.iter() {
                            let mut row = 0.0;
                            for &y in sb.iter() {
                                let dl = x - y;
                                row += (-dl * dl * inv2s2).exp();
                            }
                            total += row;
                        }
                    }
                }
                let v = paired - total / (nf * nf);
                matrix[[a, b]] = v;
                matrix[[b, a]] = v;
            }
            matrix[[a, a]] += jitter;
        }

        Self {
            matrix,
            z: z.to_owned(),
            sigma,
            cross,
        }
    }

    /// Gradient of `Σ_ab G_ab C_ab` with respect to `z`.
    pub fn backward(&self, upstream: ArrayView2<f64>) -> Array2<f64> {
        assert!(
            !self.cross.is_empty() || self.z.nrows() == 0,
            "correntropy estimate computed without gradient cache"
        );
        let (n, d) = self.z.dim();
        let nf = n as f64;
        let invs2 = 1.0 / (self.sigma * self.sigma);
        let inv2s2 = 0.5 * invs2;
        let mut dz = Array2::<f64>::zeros((n, d));
        for a in 0..d {
            for b in 0..d {
                let w = upstream[[a, b]] + upstream[[b, a]];
                if w == 0.0 {
                    continue;
                }
                let base = (a * d + b) * n;
                for k in 0..n {
                    let direct = if a == b {
                        0.0
                    } else {
                        let dl = self.z[[k, a]] - self.z[[k, b]];
                        -dl * invs2 * (-dl * dl * inv2s2).exp()
                    };
                    dz[[k, a]] += w * (direct / nf - self.cross[base + k] / (nf * nf));
                }
            }
        }
        dz
    }
}

/// Value and closed-form gradients of a Bregman divergence `D(A ‖ B)`.
#[derive(Debug, Clone)]
pub(crate) struct DivergenceWithGrad {
    pub value: f64,
    pub grad_a: Array2<f64>,
    pub grad_b: Array2<f64>,
}

pub(crate) fn logdet_divergence_grad(
    a: ArrayView2<f64>,
    b: ArrayView2<f64>,
) -> Result<DivergenceWithGrad> {
    check_pair(a, b)?;
    let la = linalg::cholesky(a)?;
    let lb = linalg::cholesky(b)?;
    let a_inv = linalg::inverse_from_cholesky(&la);
    let b_inv = linalg::inverse_from_cholesky(&lb);
    let value = trace_of_product(a, b_inv.view()) - linalg::logdet_from_cholesky(&la)
        + linalg::logdet_from_cholesky(&lb)
        - a.nrows() as f64;
    let grad_a = &b_inv - &a_inv;
    let mut grad_b = &b_inv - &b_inv.dot(&a).dot(&b_inv);
    linalg::symmetrize_in_place(&mut grad_b);
    Ok(DivergenceWithGrad {
        value,
        grad_a,
        grad_b,
    })
}

pub(crate) fn vonneumann_divergence_grad(
    a: ArrayView2<f64>,
    b: ArrayView2<f64>,
) -> Result<DivergenceWithGrad> {
    check_pair(a, b)?;
    let (log_a, _) = linalg::logm_spd(a)?;
    let (log_b, eig_b) = linalg::logm_spd(b)?;
    let n = a.nrows();
    let value =
        trace_of_product(a, log_a.view()) - trace_of_product(a, log_b.view()) - a.diag().sum()
            + b.diag().sum();
    let grad_a = &log_a - &log_b;

    // Adjoint Fréchet derivative of log at B, applied to A.
    let v = &eig_b.vectors;
    let w = &eig_b.values;
    let a_rot = v.t().dot(&a).dot(v);
    let mut inner = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let (wi, wj) = (w[i], w[j]);
            let gamma = if (wi - wj).abs() <= 1e-8 * wi.max(wj) {
                2.0 / (wi + wj)
            } else {
                (wi.ln() - wj.ln()) / (wi - wj)
            };
            inner[[i, j]] = a_rot[[i, j]] * gamma;
        }
    }
    let mut grad_b = Array2::<f64>::eye(n) - v.dot(&inner).dot(&v.t());
    linalg::symmetrize_in_place(&mut grad_b);
    Ok(DivergenceWithGrad {
        value,
        grad_a,
        grad_b,
    })
}

pub(crate) fn divergence_grad(
    flavor: Flavor,
    a: ArrayView2<f64>,
    b: ArrayView2<f64>,
) -> Result<DivergenceWithGrad> {
    match flavor {
        Flavor::LogDet => logdet_divergence_grad(a, b),
        Flavor::VonNeumann => vonneumann_divergence_grad(a, b),
    }
}

fn check_pair(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<()> {
    let da = linalg::square_dim(a)?;
    let db = linalg::square_dim(b)?;
    if da != db {
        return Err(Error::invalid(format!("dimension mismatch: {da} vs {db}")));
    }
    Ok(())
}

/// `tr(A B)` for symmetric `B`.
fn trace_of_product(a: ArrayView2<f64>, b: ArrayView2<f64>) -> f64 {
    a.iter().zip(b.t().iter()).map(|(x, y)| x * y).sum()
}

/// LogDet divergence `tr(A B⁻¹) − log det(A B⁻¹) − n`.
pub fn bregman_logdet(a: &SpdMatrix, b: &SpdMatrix) -> Result<f64> {
    check_pair(a.entries.view(), b.entries.view())?;
    let la = linalg::cholesky(a.entries.view())?;
    let lb = linalg::cholesky(b.entries.view())?;
    let b_inv = linalg::inverse_from_cholesky(&lb);
    Ok(
        trace_of_product(a.entries.view(), b_inv.view()) - linalg::logdet_from_cholesky(&la)
            + linalg::logdet_from_cholesky(&lb)
            - a.dim() as f64,
    )
}

/// Von Neumann divergence `tr(A log A − A log B − A + B)`.
pub fn bregman_vonneumann(a: &SpdMatrix, b: &SpdMatrix) -> Result<f64> {
    check_pair(a.entries.view(), b.entries.view())?;
    let (log_a, _) = linalg::logm_spd(a.entries.view())?;
    let (log_b, _) = linalg::logm_spd(b.entries.view())?;
    let av = a.entries.view();
    Ok(trace_of_product(av, log_a.view())
        - trace_of_product(av, log_b.view())
        - a.entries.diag().sum()
        + b.entries.diag().sum())
}

pub fn bregman(flavor: Flavor, a: &SpdMatrix, b: &SpdMatrix) -> Result<f64> {
    match flavor {
        Flavor::LogDet => bregman_logdet(a, b),
        Flavor::VonNeumann => bregman_vonneumann(a, b),
    }
}

/// Conditional divergence of `y | Φ` from the group `(phi_from, y_from)` to
/// the group `(phi_to, y_to)`.
pub fn cond_divergence(
    phi_from: ArrayView2<f64>,
    y_from: ArrayView1<f64>,
    phi_to: ArrayView2<f64>,
    y_to: ArrayView1<f64>,
    cfg: &DivergenceConfig,
) -> Result<f64> {
    cfg.validate()?;
    if phi_from.ncols() != phi_to.ncols() {
        return Err(Error::invalid(format!(
            "representation width mismatch: {} vs {}",
            phi_from.ncols(),
            phi_to.ncols()
        )));
    }
    let joint_from = joint_matrix(phi_from, y_from, cfg)?;
    let joint_to = joint_matrix(phi_to, y_to, cfg)?;
    let r = phi_from.ncols();
    let directed = |p: &SpdMatrix, q: &SpdMatrix| -> Result<f64> {
        let marg_p = SpdMatrix {
            entries: p.entries.slice(s![..r, ..r]).to_owned(),
        };
        let marg_q = SpdMatrix {
            entries: q.entries.slice(s![..r, ..r]).to_owned(),
        };
        Ok(bregman(cfg.flavor, p, q)? - bregman(cfg.flavor, &marg_p, &marg_q)?)
    };
    let forward = directed(&joint_from, &joint_to)?;
    if cfg.symmetrize {
        let backward = directed(&joint_to, &joint_from)?;
        Ok(0.5 * (forward + backward))
    } else {
        Ok(forward)
    }
}

fn joint_matrix(
    phi: ArrayView2<f64>,
    y: ArrayView1<f64>,
    cfg: &DivergenceConfig,
) -> Result<SpdMatrix> {
    if phi.nrows() != y.len() {
        return Err(Error::invalid(format!(
            "{} representation rows but {} outcomes",
            phi.nrows(),
            y.len()
        )));
    }
    let mut z = Array2::<f64>::zeros((phi.nrows(), phi.ncols() + 1));
    z.slice_mut(s![.., ..phi.ncols()]).assign(&phi);
    z.column_mut(phi.ncols()).assign(&y);
    correntropy_matrix(z.view(), cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Brute-force centered correntropy straight from the double sum.
    fn oracle_correntropy(u: &[f64], v: &[f64], sigma: f64) -> f64 {
        let n = u.len() as f64;
        let k = |a: f64, b: f64| (-(a - b) * (a - b) / (2.0 * sigma * sigma)).exp();
        let mut paired = 0.0;
        for i in 0..u.len() {
            paired += k(u[i], v[i]);
        }
        let mut all = 0.0;
        for &a in u {
            for &b in v {
                all += k(a, b);
            }
        }
        paired / n - all / (n * n)
    }

    fn random_spd(rng: &mut ChaCha8Rng, dim: usize) -> SpdMatrix {
        let g = Array2::from_shape_fn((dim, dim), |_| rng.random_range(-1.0..1.0));
        let mut m = g.t().dot(&g) + Array2::<f64>::eye(dim) * 0.1;
        linalg::symmetrize_in_place(&mut m);
        SpdMatrix::new(m).unwrap()
    }

    #[test]
    fn kernel_values() {
        assert_eq!(rbf_kernel(0.0, 0.0, 1.0).unwrap(), 1.0);
        assert!((rbf_kernel(1.0, 0.0, 1.0).unwrap() - 0.606531).abs() < 1e-6);
        assert!((rbf_kernel(3.0, 0.0, 1.0).unwrap() - 0.011109).abs() < 1e-6);
        assert_eq!(
            rbf_kernel(0.3, -1.2, 0.7).unwrap(),
            rbf_kernel(-1.2, 0.3, 0.7).unwrap()
        );
    }

    #[test]
    fn kernel_rejects_bad_arguments() {
        assert!(rbf_kernel(f64::NAN, 0.0, 1.0).is_err());
        assert!(rbf_kernel(0.0, f64::INFINITY, 1.0).is_err());
        assert!(rbf_kernel(0.0, 0.0, 0.0).is_err());
        assert!(rbf_kernel(0.0, 0.0, -1.0).is_err());
    }

    #[test]
    fn correntropy_examples() {
        assert_eq!(
            centered_correntropy(&[2.5; 6], &[2.5; 6], 1.0).unwrap(),
            0.0
        );

        let expected = oracle_correntropy(&[0.0, 1.0], &[0.0, 1.0], 1.0);
        assert!((expected - 0.196734).abs() < 1e-6);
        let got = centered_correntropy(&[0.0, 1.0], &[0.0, 1.0], 1.0).unwrap();
        assert!((got - expected).abs() < 1e-15);

        let expected = oracle_correntropy(&[0.0, 1.0], &[1.0, 0.0], 1.0);
        assert!((expected + 0.196734).abs() < 1e-6);
        let got = centered_correntropy(&[0.0, 1.0], &[1.0, 0.0], 1.0).unwrap();
        assert!((got - expected).abs() < 1e-15);
    }

    #[test]
    fn correntropy_errors() {
        assert!(matches!(
            centered_correntropy(&[1.0], &[1.0], 1.0),
            Err(Error::InsufficientSample { needed: 2, got: 1 })
        ));
        assert!(matches!(
            centered_correntropy(&[1.0, 2.0], &[1.0], 1.0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn correntropy_matrix_of_constant_rows_is_jitter() {
        let z = Array2::from_elem((7, 3), 0.4);
        let cfg = DivergenceConfig {
            jitter: 1e-3,
            ..Default::default()
        };
        let c = correntropy_matrix(z.view(), &cfg).unwrap();
        assert_eq!(c.entries(), &(Array2::<f64>::eye(3) * 1e-3));
    }

    #[test]
    fn correntropy_matrix_single_column() {
        let cfg = DivergenceConfig {
            jitter: 0.0,
            ..Default::default()
        };
        let c = correntropy_matrix(array![[0.0], [1.0]].view(), &cfg).unwrap();
        assert!((c.entries()[[0, 0]] - 0.196734).abs() < 1e-6);
    }

    #[test]
    fn correntropy_matrix_matches_oracle_and_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z = Array2::from_shape_fn((11, 4), |_| rng.random_range(-2.0..2.0));
        let cfg = DivergenceConfig::default();
        let c = correntropy_matrix(z.view(), &cfg).unwrap();
        for a in 0..4 {
            for b in 0..4 {
                let u = z.column(a).to_vec();
                let v = z.column(b).to_vec();
                let mut expected = oracle_correntropy(&u, &v, 1.0);
                if a == b {
                    expected += cfg.jitter;
                }
                assert!((c.entries()[[a, b]] - expected).abs() < 1e-13);
                assert_eq!(c.entries()[[a, b]], c.entries()[[b, a]]);
            }
        }
    }

    #[test]
    fn degenerate_matrix_reports_batch_size() {
        // Two identical columns make the matrix singular without jitter.
        let z = array![[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]];
        let cfg = DivergenceConfig {
            jitter: 0.0,
            ..Default::default()
        };
        match correntropy_matrix(z.view(), &cfg) {
            Err(Error::DegenerateMatrix { batch_size, .. }) => assert_eq!(batch_size, 3),
            other => panic!("expected degenerate matrix, got {other:?}"),
        }
    }

    #[test]
    fn logdet_closed_forms() {
        let two = SpdMatrix::identity_scaled(2, 2.0).unwrap();
        let one = SpdMatrix::identity_scaled(2, 1.0).unwrap();
        let ln2 = 2f64.ln();
        assert!(bregman_logdet(&two, &two).unwrap().abs() < 1e-10);
        assert!((bregman_logdet(&two, &one).unwrap() - (2.0 - 2.0 * ln2)).abs() < 1e-12);
        assert!((bregman_logdet(&one, &two).unwrap() - (2.0 * ln2 - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn vonneumann_closed_forms() {
        let two = SpdMatrix::identity_scaled(2, 2.0).unwrap();
        let one = SpdMatrix::identity_scaled(2, 1.0).unwrap();
        assert!(bregman_vonneumann(&two, &two).unwrap().abs() < 1e-8);
        let v = bregman_vonneumann(&two, &one).unwrap();
        assert!((v - 2.0 * (2.0 * 2f64.ln() - 1.0)).abs() < 1e-12);

        let a = [1.0f64, 2.0];
        let b = [2.0f64, 1.0];
        let oracle: f64 = a
            .iter()
            .zip(&b)
            .map(|(x, y)| x * x.ln() - x * y.ln() - x + y)
            .sum();
        let am = SpdMatrix::new(Array2::from_diag(&Array1::from(a.to_vec()))).unwrap();
        let bm = SpdMatrix::new(Array2::from_diag(&Array1::from(b.to_vec()))).unwrap();
        assert!((bregman_vonneumann(&am, &bm).unwrap() - oracle).abs() < 1e-12);
        assert!((oracle - std::f64::consts::LN_2).abs() < 1e-6);
    }

    #[test]
    fn divergence_dimension_mismatch() {
        let a = SpdMatrix::identity_scaled(2, 1.0).unwrap();
        let b = SpdMatrix::identity_scaled(3, 1.0).unwrap();
        assert!(matches!(
            bregman_logdet(&a, &b),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            bregman_vonneumann(&a, &b),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn spd_matrix_rejects_asymmetry() {
        let m = array![[2.0, 0.1], [0.0, 2.0]];
        assert!(SpdMatrix::new(m).is_err());
    }

    #[test]
    fn closed_form_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for flavor in [Flavor::LogDet, Flavor::VonNeumann] {
            let a = random_spd(&mut rng, 3).into_inner();
            let b = random_spd(&mut rng, 3).into_inner();
            let g = divergence_grad(flavor, a.view(), b.view()).unwrap();
            let h = 1e-6;
            for i in 0..3 {
                for j in 0..3 {
                    // Perturb symmetrically; the gradient of a symmetric
                    // function along E_ij + E_ji is G_ij + G_ji.
                    let mut e = Array2::<f64>::zeros((3, 3));
                    e[[i, j]] += h;
                    e[[j, i]] += h;
                    let f = |a2: &Array2<f64>, b2: &Array2<f64>| {
                        divergence_grad(flavor, a2.view(), b2.view()).unwrap().value
                    };
                    let na = (f(&(&a + &e), &b) - f(&(&a - &e), &b)) / (2.0 * h);
                    let nb = (f(&a, &(&b + &e)) - f(&a, &(&b - &e))) / (2.0 * h);
                    let ga = if i == j {
                        2.0 * g.grad_a[[i, i]]
                    } else {
                        g.grad_a[[i, j]] + g.grad_a[[j, i]]
                    };
                    let gb = if i == j {
                        2.0 * g.grad_b[[i, i]]
                    } else {
                        g.grad_b[[i, j]] + g.grad_b[[j, i]]
                    };
                    assert!(
                        (na - ga).abs() < 1e-6 * (1.0 + na.abs()),
                        "{flavor} dA {i}{j}: {na} vs {ga}"
                    );
                    assert!(
                        (nb - gb).abs() < 1e-6 * (1.0 + nb.abs()),
                        "{flavor} dB {i}{j}: {nb} vs {gb}"
                    );
                }
            }
        }
    }

    #[test]
    fn nonnegative_over_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..100 {
            let dim = rng.random_range(1..=10);
            let a = random_spd(&mut rng, dim);
            let b = random_spd(&mut rng, dim);
            assert!(bregman_logdet(&a, &b).unwrap() >= -1e-10);
            assert!(bregman_vonneumann(&a, &b).unwrap() >= -1e-8);
            assert!(bregman_logdet(&a, &a).unwrap().abs() <= 1e-10);
            assert!(bregman_vonneumann(&a, &a).unwrap().abs() <= 1e-8);
        }
    }

    #[test]
    fn cond_divergence_of_identical_groups_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let phi = Array2::from_shape_fn((20, 3), |_| rng.random_range(-1.0..1.0));
        let y = Array1::from_shape_fn(20, |_| rng.random_range(-1.0..1.0));
        for flavor in [Flavor::LogDet, Flavor::VonNeumann] {
            let cfg = DivergenceConfig {
                flavor,
                ..Default::default()
            };
            let d = cond_divergence(phi.view(), y.view(), phi.view(), y.view(), &cfg).unwrap();
            assert_eq!(d, 0.0);
        }
    }

    #[test]
    fn cond_divergence_requires_two_rows() {
        let phi = array![[0.0, 1.0]];
        let y = array![1.0];
        let phi2 = array![[0.0, 1.0], [1.0, 0.0]];
        let y2 = array![1.0, 2.0];
        let cfg = DivergenceConfig::default();
        assert!(matches!(
            cond_divergence(phi.view(), y.view(), phi2.view(), y2.view(), &cfg),
            Err(Error::InsufficientSample { .. })
        ));
    }

    #[test]
    fn median_heuristic_on_known_column() {
        let z = array![[0.0], [1.0], [3.0]];
        // pairwise |diffs| = 1, 3, 2
        assert_eq!(median_heuristic_sigma(z.view()).unwrap(), 2.0);
    }

    #[test]
    fn correntropy_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let z = Array2::from_shape_fn((6, 3), |_| rng.random_range(-1.5..1.5));
        let weights = Array2::from_shape_fn((3, 3), |_| rng.random_range(-1.0..1.0));
        let sigma = 0.8;
        let f = |zz: &Array2<f64>| {
            let est = CorrentropyEstimate::compute(zz.view(), sigma, 0.0, false);
            (&est.matrix * &weights).sum()
        };
        let est = CorrentropyEstimate::compute(z.view(), sigma, 0.0, true);
        let g = est.backward(weights.view());
        let h = 1e-6;
        for k in 0..6 {
            for a in 0..3 {
                let mut zp = z.clone();
                zp[[k, a]] += h;
                let mut zm = z.clone();
                zm[[k, a]] -= h;
                let num = (f(&zp) - f(&zm)) / (2.0 * h);
                assert!(
                    (num - g[[k, a]]).abs() < 1e-8,
                    "({k},{a}) {num} vs {}",
                    g[[k, a]]
                );
            }
        }
    }

    proptest! {
        #[test]
        fn correntropy_is_row_permutation_invariant(
            seed in 0u64..1000,
            rot in 1usize..9,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let z = Array2::from_shape_fn((10, 3), |_| rng.random_range(-3.0..3.0));
            let mut zp = z.clone();
            for i in 0..10 {
                zp.row_mut(i).assign(&z.row((i + rot) % 10));
            }
            let cfg = DivergenceConfig::default();
            let a = CorrentropyEstimate::compute(z.view(), cfg.sigma, cfg.jitter, false).matrix;
            let b = CorrentropyEstimate::compute(zp.view(), cfg.sigma, cfg.jitter, false).matrix;
            prop_assert_eq!(a, b);
        }

        #[test]
        fn scale_coupling_leaves_matrix_unchanged(seed in 0u64..1000, c in 0.5f64..4.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // Dyadic grid keeps scaled differences exact.
            let z = Array2::from_shape_fn((8, 2), |_| rng.random_range(-16i32..16) as f64 / 8.0);
            let c = (c * 4.0).round() / 4.0;
            let zs = &z * c;
            let a = CorrentropyEstimate::compute(z.view(), 1.0, 0.0, false).matrix;
            let b = CorrentropyEstimate::compute(zs.view(), c, 0.0, false).matrix;
            for (x, y) in a.iter().zip(b.iter()) {
                prop_assert!((x - y).abs() <= 1e-14);
            }
        }

        #[test]
        fn correntropy_diagonal_nonnegative(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let z = Array2::from_shape_fn((9, 4), |_| rng.random_range(-2.0..2.0));
            let m = CorrentropyEstimate::compute(z.view(), 1.0, 0.0, false).matrix;
            for a in 0..4 {
                prop_assert!(m[[a, a]] >= -1e-12);
            }
        }
    }
}
