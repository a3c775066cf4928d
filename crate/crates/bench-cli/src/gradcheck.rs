//! `gradcheck`: analytic CrossNet gradients against central differences on
//! a tiny model.

use crossnet::gradcore::{finite_diff_grad, grad_check, GradReport};
use crossnet::nets::init_params;
use crossnet::synthgen::SampleSet;
use crossnet::trainer::{evaluate_batch, ModelKind, TrainConfig};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::config::ExperimentConfig;
use crate::error::CliError;

/// Relative errors are measured against `max(|a|, |n|, ABS_FLOOR)`.
const ABS_FLOOR: f64 = 1e-6;

/// Balanced tiny batch with a linear outcome plus noise.
fn tiny_batch(n: usize, d: usize, seed: u64) -> crossnet::Result<SampleSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Array2::from_shape_simple_fn((n, d), || rng.sample::<f64, _>(StandardNormal));
    let t: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    let y = Array1::from_shape_fn(n, |i| {
        let lin: f64 = x
            .row(i)
            .iter()
            .enumerate()
            .map(|(j, v)| v * (j as f64 + 1.0) / d as f64)
            .sum();
        lin + f64::from(t[i]) + 0.1 * rng.sample::<f64, _>(StandardNormal)
    });
    SampleSet::new(x, t, y)
}

/// Training settings of the tiny CrossNet.
pub fn tiny_config(cfg: &ExperimentConfig) -> TrainConfig {
    let g = &cfg.gradcheck;
    TrainConfig {
        model_kind: ModelKind::CrossNet,
        rep_layers: vec![g.rep_width],
        head_layers: vec![g.head_width],
        batch_size: g.n,
        seed: cfg.seed,
        ..cfg.train_config(ModelKind::CrossNet, cfg.seed)
    }
}

/// Compare gradients of the full objective. `corrupt` perturbs one analytic
/// entry, as a negative control for the checker itself.
pub fn run_gradcheck(cfg: &ExperimentConfig, corrupt: bool) -> Result<GradReport, CliError> {
    let g = &cfg.gradcheck;
    let tc = tiny_config(cfg);
    tc.validate()?;
    let batch = tiny_batch(g.n, g.d, cfg.seed)?;
    let mut params = init_params(&tc.net_config(g.d), cfg.seed)?;
    let eval = evaluate_batch(&params, &batch, &tc, true)?;
    if let Some(why) = &eval.penalty_skipped {
        return Err(CliError::Numerical(format!(
            "penalty skipped on the check batch: {why}"
        )));
    }
    let mut analytic = eval.grad;
    if corrupt {
        analytic[0] += 1e-3 * analytic[0].abs().max(1.0);
    }
    let theta = params.to_flat();
    let numeric = finite_diff_grad(
        |th| {
            params.set_flat(th)?;
            Ok(evaluate_batch(&params, &batch, &tc, false)?.parts.total)
        },
        &theta,
        g.step,
    )?;
    Ok(grad_check(&analytic, &numeric, g.tol, ABS_FLOOR))
}

pub fn describe(report: &GradReport) -> String {
    format!(
        "{} params, max relative error {:.3e} (tolerance {:.0e}), max absolute error {:.3e}, worst index {}",
        report.n_params, report.max_rel_err, report.rel_tol, report.max_abs_err, report.worst_param_index
    )
}
