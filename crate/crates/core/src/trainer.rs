//! Objectives and the training loop for CrossNet and the baseline models.
//!
//! CrossNet fits two heads `h₁`, `h₀` on a shared representation `Φ` and
//! penalizes, per minibatch, the discrepancy between the conditional
//! distributions of the outcome given `Φ` across groups, where each group's
//! missing potential outcome is filled in by the other group's head:
//!
//! ```text
//! total = L₁ + L₀ + λ·(D₀ + D₁)
//! D₀ = D(y⁰ | Φ(x⁰)  →  h₀(Φ(x¹)) | Φ(x¹))
//! D₁ = D(h₁(Φ(x⁰)) | Φ(x⁰)  →  y¹ | Φ(x¹))
//! ```
//!
//! Continuous outcomes are standardized with training statistics before they
//! reach the loss; the stored [`OutcomeScale`] maps predictions back.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataio::partition_indices;
use crate::error::{Error, Result};
use crate::gradcore::{Graph, Var};
use crate::matdiv::DivergenceConfig;
use crate::nets::{
    adam_step, forward_head, forward_rep, head_graph, init_params, rep_graph, Activation,
    ModelParams, ModelVars, NetConfig, OptState, OutcomeKind, OutcomeScale,
};
use crate::synthgen::{mix_seed, SampleSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    CrossNet,
    TNet,
    TARNet,
    CFRNet,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::CrossNet,
        ModelKind::TNet,
        ModelKind::TARNet,
        ModelKind::CFRNet,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::CrossNet => "CrossNet",
            ModelKind::TNet => "TNet",
            ModelKind::TARNet => "TARNet",
            ModelKind::CFRNet => "CFRNet",
        }
    }

    /// Whether the objective compares the two groups within a batch.
    pub fn uses_group_penalty(self) -> bool {
        matches!(self, ModelKind::CrossNet | ModelKind::CFRNet)
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::invalid(format!("unknown model `{s}`")))
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossKind {
    #[default]
    Mse,
    Bce,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mse" => Ok(LossKind::Mse),
            "bce" => Ok(LossKind::Bce),
            other => Err(Error::invalid(format!("unknown loss `{other}`"))),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossKind::Mse => "mse",
            LossKind::Bce => "bce",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model_kind: ModelKind,
    /// Penalty weight λ on `D₀ + D₁`.
    pub lambda: f64,
    pub divergence: DivergenceConfig,
    /// Weight of the mean-difference penalty for CFRNet.
    pub cfr_alpha: f64,
    pub loss_kind: LossKind,
    pub rep_layers: Vec<usize>,
    pub head_layers: Vec<usize>,
    pub activation: Activation,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub val_fraction: f64,
    /// Batches with fewer rows in either group skip the group penalty.
    pub min_group_per_batch: usize,
    /// Also evaluate the CrossNet penalty on the whole training split once
    /// per epoch (diagnostic only, quadratic in n).
    pub full_sample_diagnostic: bool,
    /// Standardize each column of `[Φ | y⁰ | y¹]` with statistics pooled
    /// over both groups before the correntropy, so `sigma` is in standard
    /// units. The statistics are part of the graph.
    pub standardize_penalty: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model_kind: ModelKind::CrossNet,
            lambda: 1.0,
            divergence: DivergenceConfig::default(),
            cfr_alpha: 1.0,
            loss_kind: LossKind::Mse,
            rep_layers: vec![200, 200, 200],
            head_layers: vec![100, 100, 100],
            activation: Activation::Elu,
            learning_rate: 1e-3,
            batch_size: 100,
            max_epochs: 300,
            patience: 10,
            val_fraction: 0.3,
            min_group_per_batch: 4,
            full_sample_diagnostic: false,
            standardize_penalty: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be nonnegative, got {}", self.lambda));
        }
        if !(self.cfr_alpha >= 0.0 && self.cfr_alpha.is_finite()) {
            return bad(format!(
                "cfr_alpha must be nonnegative, got {}",
                self.cfr_alpha
            ));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad(format!(
                "val_fraction must lie in (0, 1), got {}",
                self.val_fraction
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if self.batch_size == 0 || self.patience == 0 || self.min_group_per_batch == 0 {
            return bad("batch_size, patience and min_group_per_batch must be positive".into());
        }
        if self.model_kind.uses_group_penalty() && self.batch_size < 2 * self.min_group_per_batch {
            return bad(format!(
                "batch_size {} is below 2 × min_group_per_batch {}",
                self.batch_size, self.min_group_per_batch
            ));
        }
        self.divergence.validate()?;
        self.net_config(1).validate()
    }

    /// Network shape for inputs of width `input_dim`. TNet gets two disjoint
    /// stacks of the same depth.
    pub fn net_config(&self, input_dim: usize) -> NetConfig {
        let cfg = NetConfig {
            input_dim,
            rep_layers: self.rep_layers.clone(),
            head_layers: self.head_layers.clone(),
            activation: self.activation,
            outcome_kind: match self.loss_kind {
                LossKind::Mse => OutcomeKind::Continuous,
                LossKind::Bce => OutcomeKind::Binary,
            },
            share_representation: true,
        };
        if self.model_kind == ModelKind::TNet {
            cfg.without_sharing()
        } else {
            cfg
        }
    }
}

/// Per-batch objective components.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    /// `L₁`, factual loss on treated rows.
    pub factual_treated: f64,
    /// `L₀`, factual loss on control rows.
    pub factual_control: f64,
    /// `D₀`.
    pub disc_y0: f64,
    /// `D₁`.
    pub disc_y1: f64,
    /// Weighted penalty added to the factual losses.
    pub penalty: f64,
    pub total: f64,
}

impl LossParts {
    pub fn factual(&self) -> f64 {
        self.factual_treated + self.factual_control
    }

    fn mean_of(parts: &[LossParts]) -> LossParts {
        let n = parts.len().max(1) as f64;
        let mut m = LossParts::default();
        for p in parts {
            m.factual_treated += p.factual_treated;
            m.factual_control += p.factual_control;
            m.disc_y0 += p.disc_y0;
            m.disc_y1 += p.disc_y1;
            m.penalty += p.penalty;
            m.total += p.total;
        }
        m.factual_treated /= n;
        m.factual_control /= n;
        m.disc_y0 /= n;
        m.disc_y1 /= n;
        m.penalty /= n;
        m.total /= n;
        m
    }
}

/// Objective value, gradient and penalty status on one batch.
#[derive(Debug, Clone)]
pub struct BatchEval {
    pub parts: LossParts,
    /// Flat gradient in [`ModelParams::to_flat`] order (empty if not requested).
    pub grad: Vec<f64>,
    /// Why the group penalty was dropped on this batch, if it was.
    pub penalty_skipped: Option<String>,
}

/// Everything the per-batch observer sees.
#[derive(Debug, Clone)]
pub struct BatchRecord {
    pub epoch: usize,
    pub batch: usize,
    pub n_treated: usize,
    pub n_control: usize,
    pub lambda: f64,
    pub parts: LossParts,
    pub penalty_skipped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Patience,
    MaxEpochs,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    /// Batch-averaged training objective per epoch.
    pub train: Vec<LossParts>,
    /// Validation objective per epoch.
    pub val: Vec<LossParts>,
    /// Validation objective at the initial parameters.
    pub initial_val: LossParts,
    /// Index into `val` of the epoch whose parameters were returned.
    pub best_epoch: usize,
    pub stop_reason: StopReason,
    pub batches_per_epoch: usize,
    /// Training batches per epoch whose group penalty was skipped.
    pub skipped_penalty: Vec<usize>,
    /// Full-training-split `D₀ + D₁` per epoch, when requested.
    pub full_sample_penalty: Vec<f64>,
    pub warnings: Vec<String>,
}

impl TrainHistory {
    pub fn epochs(&self) -> usize {
        self.val.len()
    }

    pub fn best_val(&self) -> &LossParts {
        &self.val[self.best_epoch]
    }
}

/// Outcomes of `data` in model units.
fn model_outcomes(params: &ModelParams, y: &Array1<f64>) -> Array1<f64> {
    let OutcomeScale { shift, scale } = params.outcome;
    y.mapv(|v| (v - shift) / scale)
}

fn to_original(params: &ModelParams, v: Array1<f64>) -> Array1<f64> {
    match params.config.outcome_kind {
        OutcomeKind::Continuous => {
            let OutcomeScale { shift, scale } = params.outcome;
            v.mapv(|h| shift + scale * h)
        }
        OutcomeKind::Binary => v,
    }
}

fn check_width(params: &ModelParams, x: ArrayView2<f64>) -> Result<()> {
    if x.ncols() != params.config.input_dim {
        return Err(Error::invalid(format!(
            "model expects {} covariates, got {}",
            params.config.input_dim,
            x.ncols()
        )));
    }
    Ok(())
}

/// Counterfactual predictions `(h₁(Φ(x⁰)), h₀(Φ(x¹)))` in outcome units.
pub fn counterfactual_predict(
    params: &ModelParams,
    x0: ArrayView2<f64>,
    x1: ArrayView2<f64>,
) -> Result<(Array1<f64>, Array1<f64>)> {
    check_width(params, x0)?;
    check_width(params, x1)?;
    let phi0 = forward_rep(params, x0)?;
    let phi1 = forward_rep(params, x1)?;
    let y10 = forward_head(params, &params.head1, phi0.view())?;
    let y01 = forward_head(params, &params.head0, phi1.view())?;
    Ok((to_original(params, y10), to_original(params, y01)))
}

/// `τ̂(x) = h₁(Φ(x)) − h₀(Φ(x))` in outcome units (probabilities for binary
/// outcomes).
pub fn predict_cate(params: &ModelParams, x: ArrayView2<f64>) -> Result<Array1<f64>> {
    check_width(params, x)?;
    let phi = forward_rep(params, x)?;
    let h1 = forward_head(params, &params.head1, phi.view())?;
    let h0 = forward_head(params, &params.head0, phi.view())?;
    let diff = h1 - h0;
    Ok(match params.config.outcome_kind {
        OutcomeKind::Continuous => diff * params.outcome.scale,
        OutcomeKind::Binary => diff,
    })
}

struct GroupNodes {
    n: usize,
    phi: Var,
    y: Var,
    /// Own-head predictions (`h₁` for treated, `h₀` for control).
    own: Var,
    /// Other-head predictions.
    cross: Option<Var>,
}

fn column(y: &Array1<f64>) -> Array2<f64> {
    y.clone().insert_axis(Axis(1))
}

fn factual(g: &mut Graph, kind: LossKind, pred: Var, target: Var) -> Result<Var> {
    match kind {
        LossKind::Mse => g.mse_mean(pred, target),
        LossKind::Bce => g.bce_mean(pred, target),
    }
}

/// `D(C_from[keep] ‖ C_to[keep]) − D(C_from[..r] ‖ C_to[..r])` on joint
/// correntropy matrices, optionally averaged over both directions.
fn conditional_term(
    g: &mut Graph,
    m_from: Var,
    m_to: Var,
    r: usize,
    y_col: usize,
    cfg: &DivergenceConfig,
) -> Result<Var> {
    let mut joint_idx: Vec<usize> = (0..r).collect();
    joint_idx.push(y_col);
    let marg_idx: Vec<usize> = (0..r).collect();
    let jf = g.principal(m_from, &joint_idx)?;
    let jt = g.principal(m_to, &joint_idx)?;
    let mf = g.principal(m_from, &marg_idx)?;
    let mt = g.principal(m_to, &marg_idx)?;
    let directed = |g: &mut Graph, a_j: Var, b_j: Var, a_m: Var, b_m: Var| -> Result<Var> {
        let dj = g.divergence(a_j, b_j, cfg.flavor)?;
        let dm = g.divergence(a_m, b_m, cfg.flavor)?;
        g.sub(dj, dm)
    };
    let fwd = directed(g, jf, jt, mf, mt)?;
    if cfg.symmetrize {
        let bwd = directed(g, jt, jf, mt, mf)?;
        let both = g.add(fwd, bwd)?;
        Ok(g.scale(both, 0.5))
    } else {
        Ok(fwd)
    }
}

const STANDARDIZE_EPS: f64 = 1e-8;

/// Builds `(D₀, D₁)` nodes from the two groups.
fn crossnet_penalty(
    g: &mut Graph,
    control: &GroupNodes,
    treated: &GroupNodes,
    r: usize,
    cfg: &DivergenceConfig,
    standardize: bool,
) -> Result<(Var, Var)> {
    let (Some(c_cross), Some(t_cross)) = (control.cross, treated.cross) else {
        return Err(Error::invalid("cross predictions missing"));
    };
    // Columns: [Φ | y⁰-slot | y¹-slot].
    let mut z0 = g.hcat(&[control.phi, control.y, c_cross])?;
    let mut z1 = g.hcat(&[treated.phi, t_cross, treated.y])?;
    if standardize {
        let both = g.vcat(&[z0, z1])?;
        let s = g.standardize(both, STANDARDIZE_EPS)?;
        z0 = g.rows(s, 0, control.n)?;
        z1 = g.rows(s, control.n, control.n + treated.n)?;
    }
    let m0 = g
        .correntropy(z0, cfg.sigma, cfg.jitter)
        .map_err(|e| e.with_batch_size(control.n))?;
    let m1 = g
        .correntropy(z1, cfg.sigma, cfg.jitter)
        .map_err(|e| e.with_batch_size(treated.n))?;
    let d0 = conditional_term(g, m0, m1, r, r, cfg)
        .map_err(|e| e.with_batch_size(control.n + treated.n))?;
    let d1 = conditional_term(g, m0, m1, r, r + 1, cfg)
        .map_err(|e| e.with_batch_size(control.n + treated.n))?;
    Ok((d0, d1))
}

/// Errors that drop the penalty for a batch instead of aborting.
fn is_recoverable(e: &Error) -> bool {
    matches!(
        e,
        Error::DegenerateMatrix { .. } | Error::InsufficientSample { .. }
    )
}

/// Loss (and optionally its gradient) of `cfg.model_kind` on one batch.
/// Outcomes in `batch.y` are in original units.
pub fn evaluate_batch(
    params: &ModelParams,
    batch: &SampleSet,
    cfg: &TrainConfig,
    want_grad: bool,
) -> Result<BatchEval> {
    check_width(params, batch.x.view())?;
    let net = &params.config;
    let y_model = model_outcomes(params, &batch.y);
    let idx1 = batch.treated_indices();
    let idx0 = batch.control_indices();

    let mut g = Graph::new();
    let vars = ModelVars::register(&mut g, params);
    let kind = cfg.model_kind;
    let crossnet_active = kind == ModelKind::CrossNet && cfg.lambda > 0.0;

    let build_group = |g: &mut Graph, idx: &[usize], treated: bool| -> Result<Option<GroupNodes>> {
        if idx.is_empty() {
            return Ok(None);
        }
        let x = g.constant(batch.x.select(Axis(0), idx));
        let y = g.constant(column(&Array1::from_iter(idx.iter().map(|&i| y_model[i]))));
        let phi = rep_graph(g, net, &vars, x)?;
        let (own_head, other_head) = if treated {
            (&vars.head1, &vars.head0)
        } else {
            (&vars.head0, &vars.head1)
        };
        let own = head_graph(g, net, own_head, phi)?;
        let cross = if crossnet_active {
            Some(head_graph(g, net, other_head, phi)?)
        } else {
            None
        };
        Ok(Some(GroupNodes {
            n: idx.len(),
            phi,
            y,
            own,
            cross,
        }))
    };
    let treated = build_group(&mut g, &idx1, true)?;
    let control = build_group(&mut g, &idx0, false)?;

    let zero = g.constant(Array2::zeros((1, 1)));
    let l1 = match &treated {
        Some(gr) => factual(&mut g, cfg.loss_kind, gr.own, gr.y)?,
        None => zero,
    };
    let l0 = match &control {
        Some(gr) => factual(&mut g, cfg.loss_kind, gr.own, gr.y)?,
        None => zero,
    };

    let mut skipped = None;
    let mut d0 = zero;
    let mut d1 = zero;
    let mut penalty = zero;
    if kind.uses_group_penalty() && (kind == ModelKind::CFRNet || crossnet_active) {
        let small = idx1.len().min(idx0.len()) < cfg.min_group_per_batch;
        match (&treated, &control) {
            (Some(t), Some(c)) if !small => match kind {
                ModelKind::CrossNet => match crossnet_penalty(
                    &mut g,
                    c,
                    t,
                    net.rep_dim(),
                    &cfg.divergence,
                    cfg.standardize_penalty,
                ) {
                    Ok((a, b)) => {
                        d0 = a;
                        d1 = b;
                        let sum = g.add(d0, d1)?;
                        penalty = g.scale(sum, cfg.lambda);
                    }
                    Err(e) if is_recoverable(&e) => skipped = Some(e.to_string()),
                    Err(e) => return Err(e),
                },
                _ => {
                    let m1 = g.mean_rows(t.phi)?;
                    let m0 = g.mean_rows(c.phi)?;
                    let diff = g.sub(m1, m0)?;
                    let sq = g.sum_squares(diff);
                    penalty = g.scale(sq, cfg.cfr_alpha);
                }
            },
            _ => {
                skipped = Some(format!(
                    "group sizes {} treated / {} control below minimum {}",
                    idx1.len(),
                    idx0.len(),
                    cfg.min_group_per_batch
                ))
            }
        }
    }
    let factual_sum = g.add(l1, l0)?;
    let total = g.add(factual_sum, penalty)?;
    let parts = LossParts {
        factual_treated: g.scalar(l1),
        factual_control: g.scalar(l0),
        disc_y0: g.scalar(d0),
        disc_y1: g.scalar(d1),
        penalty: g.scalar(penalty),
        total: g.scalar(total),
    };
    let grad = if want_grad {
        let grads = g.backward(total)?;
        vars.flat_grad(&grads)
    } else {
        Vec::new()
    };
    Ok(BatchEval {
        parts,
        grad,
        penalty_skipped: skipped,
    })
}

/// CrossNet objective on one batch.
pub fn crossnet_loss(
    params: &ModelParams,
    batch: &SampleSet,
    cfg: &TrainConfig,
) -> Result<LossParts> {
    if cfg.model_kind != ModelKind::CrossNet {
        return Err(Error::invalid("crossnet_loss needs model_kind CrossNet"));
    }
    Ok(evaluate_batch(params, batch, cfg, false)?.parts)
}

/// Objective of a baseline model on one batch.
pub fn baseline_loss(
    params: &ModelParams,
    batch: &SampleSet,
    cfg: &TrainConfig,
) -> Result<LossParts> {
    if cfg.model_kind == ModelKind::CrossNet {
        return Err(Error::invalid("baseline_loss needs a baseline model_kind"));
    }
    Ok(evaluate_batch(params, batch, cfg, false)?.parts)
}

/// Stratified batches: each group is shuffled (when `rng` is given) and dealt
/// into `ceil(n / batch_size)` batches as evenly as possible.
fn stratified_batches(
    t: &[u8],
    batch_size: usize,
    rng: Option<&mut ChaCha8Rng>,
) -> Vec<Vec<usize>> {
    let n = t.len();
    let n_batches = n.div_ceil(batch_size).max(1);
    let mut ctrl: Vec<usize> = (0..n).filter(|&i| t[i] == 0).collect();
    let mut trt: Vec<usize> = (0..n).filter(|&i| t[i] == 1).collect();
    if let Some(rng) = rng {
        trt.shuffle(rng);
        ctrl.shuffle(rng);
    }
    let mut batches = vec![Vec::new(); n_batches];
    for group in [&trt, &ctrl] {
        for (k, batch) in batches.iter_mut().enumerate() {
            let lo = k * group.len() / n_batches;
            let hi = (k + 1) * group.len() / n_batches;
            batch.extend_from_slice(&group[lo..hi]);
        }
    }
    batches.retain(|b| !b.is_empty());
    batches
}

const SEED_INIT: u64 = 1;
const SEED_SPLIT: u64 = 2;
const SEED_BATCH: u64 = 3;

/// Outcome scaling fitted on training outcomes.
pub fn fit_outcome_scale(kind: LossKind, y: &Array1<f64>) -> OutcomeScale {
    match kind {
        LossKind::Bce => OutcomeScale::default(),
        LossKind::Mse => {
            let n = y.len() as f64;
            let mean = y.sum() / n;
            let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0).max(1.0);
            let sd = var.sqrt();
            OutcomeScale {
                shift: mean,
                scale: if sd > 0.0 && sd.is_finite() { sd } else { 1.0 },
            }
        }
    }
}

fn evaluate_set(
    params: &ModelParams,
    batches: &[SampleSet],
    cfg: &TrainConfig,
) -> Result<(LossParts, usize)> {
    let mut parts = Vec::with_capacity(batches.len());
    let mut skipped = 0;
    for b in batches {
        let e = evaluate_batch(params, b, cfg, false)?;
        skipped += usize::from(e.penalty_skipped.is_some());
        parts.push(e.parts);
    }
    Ok((LossParts::mean_of(&parts), skipped))
}

fn check_finite(parts: &LossParts, what: &str) -> Result<()> {
    let vals = [
        parts.factual_treated,
        parts.factual_control,
        parts.disc_y0,
        parts.disc_y1,
        parts.penalty,
        parts.total,
    ];
    if vals.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what}: {parts:?}")))
    }
}

/// Train with an internal stratified train/validation split.
pub fn train(data: &SampleSet, cfg: &TrainConfig) -> Result<(ModelParams, TrainHistory)> {
    train_observed(data, cfg, &mut |_| {})
}

/// [`train`] with a callback invoked after every optimizer step.
pub fn train_observed(
    data: &SampleSet,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&BatchRecord),
) -> Result<(ModelParams, TrainHistory)> {
    cfg.validate()?;
    data.validate()?;
    let n1 = data.n_treated();
    let n0 = data.len() - n1;
    if n1 < 2 || n0 < 2 {
        return Err(Error::InsufficientSample {
            needed: 2,
            got: n1.min(n0),
        });
    }
    let parts = partition_indices(
        &data.t,
        &[1.0 - cfg.val_fraction, cfg.val_fraction],
        true,
        mix_seed(cfg.seed, &[SEED_SPLIT]),
    )?;
    let train_set = data.subset(&parts[0]);
    let val_set = data.subset(&parts[1]);
    train_with_validation(&train_set, &val_set, cfg, observer)
}

/// Train on `train_set`, selecting the epoch by the objective on `val_set`.
pub fn train_with_validation(
    train_set: &SampleSet,
    val_set: &SampleSet,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&BatchRecord),
) -> Result<(ModelParams, TrainHistory)> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::InsufficientSample { needed: 1, got: 0 });
    }
    let net = cfg.net_config(train_set.dim());
    let mut params = init_params(&net, mix_seed(cfg.seed, &[SEED_INIT]))?;
    params.outcome = fit_outcome_scale(cfg.loss_kind, &train_set.y);

    let val_batches: Vec<SampleSet> = stratified_batches(&val_set.t, cfg.batch_size, None)
        .iter()
        .map(|b| val_set.subset(b))
        .collect();
    let (initial_val, _) = evaluate_set(&params, &val_batches, cfg)?;
    check_finite(&initial_val, "validation objective at initialization")?;

    let mut flat = params.to_flat();
    let mut opt = OptState::new(flat.len(), cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, &[SEED_BATCH]));
    let mut history = TrainHistory {
        train: Vec::new(),
        val: Vec::new(),
        initial_val,
        best_epoch: 0,
        stop_reason: StopReason::MaxEpochs,
        batches_per_epoch: 0,
        skipped_penalty: Vec::new(),
        full_sample_penalty: Vec::new(),
        warnings: Vec::new(),
    };
    let mut best: Option<(f64, ModelParams)> = None;
    let penalized = cfg.model_kind.uses_group_penalty()
        && (cfg.model_kind == ModelKind::CFRNet || cfg.lambda > 0.0);

    for epoch in 0..cfg.max_epochs {
        let batches = stratified_batches(&train_set.t, cfg.batch_size, Some(&mut rng));
        history.batches_per_epoch = batches.len();
        let mut epoch_parts = Vec::with_capacity(batches.len());
        let mut skipped = 0;
        for (bi, idx) in batches.iter().enumerate() {
            let batch = train_set.subset(idx);
            let eval = evaluate_batch(&params, &batch, cfg, true)?;
            check_finite(
                &eval.parts,
                &format!("training objective at epoch {epoch}, batch {bi}"),
            )?;
            skipped += usize::from(eval.penalty_skipped.is_some());
            adam_step(&mut flat, &eval.grad, &mut opt).map_err(|e| match e {
                Error::NonFinite(m) => Error::NonFinite(format!("epoch {epoch}, batch {bi}: {m}")),
                other => other,
            })?;
            params.set_flat(&flat)?;
            observer(&BatchRecord {
                epoch,
                batch: bi,
                n_treated: batch.n_treated(),
                n_control: batch.len() - batch.n_treated(),
                lambda: cfg.lambda,
                parts: eval.parts,
                penalty_skipped: eval.penalty_skipped.is_some(),
            });
            epoch_parts.push(eval.parts);
        }
        if penalized && skipped == batches.len() {
            history.warnings.push(format!(
                "epoch {epoch}: every batch skipped the group penalty"
            ));
        }
        history.train.push(LossParts::mean_of(&epoch_parts));
        history.skipped_penalty.push(skipped);

        if cfg.full_sample_diagnostic && cfg.model_kind == ModelKind::CrossNet {
            let diag_cfg = TrainConfig {
                lambda: 1.0,
                ..cfg.clone()
            };
            let e = evaluate_batch(&params, train_set, &diag_cfg, false)?;
            history
                .full_sample_penalty
                .push(e.parts.disc_y0 + e.parts.disc_y1);
        }

        let (val, _) = evaluate_set(&params, &val_batches, cfg)?;
        check_finite(&val, &format!("validation objective at epoch {epoch}"))?;
        history.val.push(val);
        let improved = best.as_ref().is_none_or(|(b, _)| val.total < *b);
        if improved {
            best = Some((val.total, params.clone()));
            history.best_epoch = epoch;
        } else if epoch - history.best_epoch >= cfg.patience {
            history.stop_reason = StopReason::Patience;
            break;
        }
    }
    let params = match best {
        Some((_, p)) => p,
        None => params,
    };
    Ok((params, history))
}

/// Rows of `x` split by `t`, for [`counterfactual_predict`].
pub fn split_by_group(x: ArrayView2<f64>, t: &[u8]) -> (Array2<f64>, Array2<f64>) {
    let idx0: Vec<usize> = (0..t.len()).filter(|&i| t[i] == 0).collect();
    let idx1: Vec<usize> = (0..t.len()).filter(|&i| t[i] == 1).collect();
    (x.select(Axis(0), &idx0), x.select(Axis(0), &idx1))
}
