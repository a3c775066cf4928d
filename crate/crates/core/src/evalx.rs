//! Evaluation metrics: PEHE, absolute ATE error and policy risk.

use ndarray::ArrayView1;

use crate::error::{Error, Result};

/// Threshold rule for the policy: treat iff the predicted effect exceeds
/// `threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PolicySpec {
    pub threshold: f64,
}

fn check_pair(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::invalid("empty effect vectors"));
    }
    Ok(())
}

/// Root mean squared error between estimated and true individual effects.
pub fn pehe(tau_hat: ArrayView1<f64>, tau_true: ArrayView1<f64>) -> Result<f64> {
    check_pair(tau_hat, tau_true)?;
    let mse = tau_hat
        .iter()
        .zip(tau_true.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / tau_hat.len() as f64;
    Ok(mse.sqrt())
}

/// `|mean(τ̂) − mean(τ)|`.
pub fn abs_ate_error(tau_hat: ArrayView1<f64>, tau_true: ArrayView1<f64>) -> Result<f64> {
    check_pair(tau_hat, tau_true)?;
    let n = tau_hat.len() as f64;
    Ok((tau_hat.sum() / n - tau_true.sum() / n).abs())
}

/// Policy risk `1 − (E[Y₁ | π=1]·p(π=1) + E[Y₀ | π=0]·p(π=0))` estimated on
/// the randomized rows (`randomized[i] == 1`).
///
/// `y` must be coded so that 1 is the favorable outcome. A cell is only
/// required to be nonempty when its policy arm has positive probability.
pub fn policy_risk(
    tau_hat: ArrayView1<f64>,
    y: ArrayView1<f64>,
    t: &[u8],
    randomized: &[u8],
    spec: &PolicySpec,
) -> Result<f64> {
    let n = tau_hat.len();
    if y.len() != n || t.len() != n || randomized.len() != n {
        return Err(Error::invalid("policy_risk inputs must have equal lengths"));
    }
    let mut n_rand = 0usize;
    let mut n_treat_policy = 0usize;
    let (mut y1_sum, mut y1_n) = (0.0, 0usize);
    let (mut y0_sum, mut y0_n) = (0.0, 0usize);
    for i in 0..n {
        if randomized[i] != 1 {
            continue;
        }
        n_rand += 1;
        let treat = tau_hat[i] > spec.threshold;
        if treat {
            n_treat_policy += 1;
        }
        match (t[i], treat) {
            (1, true) => {
                y1_sum += y[i];
                y1_n += 1;
            }
            (0, false) => {
                y0_sum += y[i];
                y0_n += 1;
            }
            _ => {}
        }
    }
    if n_rand == 0 {
        return Err(Error::UndefinedCell("no randomized rows".into()));
    }
    let p_treat = n_treat_policy as f64 / n_rand as f64;
    let p_control = 1.0 - p_treat;
    let term1 = if n_treat_policy == 0 {
        0.0
    } else if y1_n == 0 {
        return Err(Error::UndefinedCell(
            "no randomized treated units where the policy treats (t=1, π=1)".into(),
        ));
    } else {
        y1_sum / y1_n as f64 * p_treat
    };
    let term0 = if n_treat_policy == n_rand {
        0.0
    } else if y0_n == 0 {
        return Err(Error::UndefinedCell(
            "no randomized control units where the policy withholds (t=0, π=0)".into(),
        ));
    } else {
        y0_sum / y0_n as f64 * p_control
    };
    Ok(1.0 - (term1 + term0))
}
