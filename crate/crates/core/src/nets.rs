//! Representation network `Φ`, the two hypothesis heads `h₁`/`h₀`, parameter
//! initialization and the Adam optimizer.
//!
//! Parameters live in flat vectors with per-layer shape metadata so that the
//! optimizer and finite-difference checks can treat a model as one `&[f64]`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gradcore::{self, Graph, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Elu,
    Relu,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Elu => {
                if v > 0.0 {
                    v
                } else {
                    v.exp_m1()
                }
            }
            Activation::Relu => v.max(0.0),
        }
    }

    fn graph(self, g: &mut Graph, v: Var) -> Var {
        match self {
            Activation::Elu => g.elu(v),
            Activation::Relu => g.relu(v),
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "elu" => Ok(Activation::Elu),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::invalid(format!("unknown activation `{other}`"))),
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Activation::Elu => "elu",
            Activation::Relu => "relu",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutcomeKind {
    #[default]
    Continuous,
    /// Heads end in a sigmoid and predict `P(y = 1)`.
    Binary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    pub input_dim: usize,
    pub rep_layers: Vec<usize>,
    pub head_layers: Vec<usize>,
    pub activation: Activation,
    pub outcome_kind: OutcomeKind,
    /// When false there is no shared representation: `rep_layers` must be
    /// empty and each head works on the raw covariates.
    pub share_representation: bool,
}

impl NetConfig {
    pub fn new(input_dim: usize) -> Self {
        Self {
            input_dim,
            rep_layers: vec![200, 200, 200],
            head_layers: vec![100, 100, 100],
            activation: Activation::Elu,
            outcome_kind: OutcomeKind::Continuous,
            share_representation: true,
        }
    }

    /// Two disjoint networks of the same total depth as `self`: the shared
    /// layers are folded into each head.
    pub fn without_sharing(&self) -> Self {
        let mut head_layers = self.rep_layers.clone();
        head_layers.extend(&self.head_layers);
        Self {
            rep_layers: Vec::new(),
            head_layers,
            share_representation: false,
            ..self.clone()
        }
    }

    pub fn rep_dim(&self) -> usize {
        self.rep_layers.last().copied().unwrap_or(self.input_dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::invalid("input_dim must be positive"));
        }
        if self
            .rep_layers
            .iter()
            .chain(&self.head_layers)
            .any(|&w| w == 0)
        {
            return Err(Error::invalid("layer widths must be positive"));
        }
        if !self.share_representation && !self.rep_layers.is_empty() {
            return Err(Error::invalid(
                "unshared networks take no representation layers; fold them into the heads",
            ));
        }
        Ok(())
    }

    fn rep_shapes(&self) -> Vec<(usize, usize)> {
        chain_shapes(self.input_dim, &self.rep_layers)
    }

    fn head_shapes(&self) -> Vec<(usize, usize)> {
        let mut widths = self.head_layers.clone();
        widths.push(1);
        chain_shapes(self.rep_dim(), &widths)
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        let count =
            |shapes: Vec<(usize, usize)>| shapes.iter().map(|(i, o)| i * o + o).sum::<usize>();
        count(self.rep_shapes()) + 2 * count(self.head_shapes())
    }
}

fn chain_shapes(input: usize, widths: &[usize]) -> Vec<(usize, usize)> {
    let mut shapes = Vec::with_capacity(widths.len());
    let mut fan_in = input;
    for &w in widths {
        shapes.push((fan_in, w));
        fan_in = w;
    }
    shapes
}

/// Weights and biases of a stack of affine layers, flattened layer by layer
/// as `W` (row-major, fan_in × fan_out) followed by `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStack {
    pub shapes: Vec<(usize, usize)>,
    pub data: Vec<f64>,
}

impl ParamStack {
    fn zeros(shapes: Vec<(usize, usize)>) -> Self {
        let n = shapes.iter().map(|(i, o)| i * o + o).sum();
        Self {
            shapes,
            data: vec![0.0; n],
        }
    }

    fn glorot(shapes: Vec<(usize, usize)>, rng: &mut ChaCha8Rng) -> Self {
        let mut data = Vec::new();
        for &(fan_in, fan_out) in &shapes {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            data.extend((0..fan_in * fan_out).map(|_| rng.random_range(-bound..=bound)));
            data.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Self { shapes, data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn num_layers(&self) -> usize {
        self.shapes.len()
    }

    fn offset(&self, layer: usize) -> usize {
        self.shapes[..layer].iter().map(|(i, o)| i * o + o).sum()
    }

    /// Views of layer `l`'s weight matrix and bias.
    pub fn layer(&self, l: usize) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>) {
        let (i, o) = self.shapes[l];
        let off = self.offset(l);
        let w = ArrayView2::from_shape((i, o), &self.data[off..off + i * o]).expect("layer shape");
        let b = ArrayView1::from(&self.data[off + i * o..off + i * o + o]);
        (w, b)
    }

    pub fn layer_mut(
        &mut self,
        l: usize,
    ) -> (
        ndarray::ArrayViewMut2<'_, f64>,
        ndarray::ArrayViewMut1<'_, f64>,
    ) {
        let (i, o) = self.shapes[l];
        let off = self.offset(l);
        let (wpart, rest) = self.data[off..off + i * o + o].split_at_mut(i * o);
        (
            ndarray::ArrayViewMut2::from_shape((i, o), wpart).expect("layer shape"),
            ndarray::ArrayViewMut1::from(rest),
        )
    }
}

/// Affine map from standardized to original outcome units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutcomeScale {
    pub shift: f64,
    pub scale: f64,
}

impl Default for OutcomeScale {
    fn default() -> Self {
        Self {
            shift: 0.0,
            scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: NetConfig,
    pub rep: ParamStack,
    pub head1: ParamStack,
    pub head0: ParamStack,
    /// Not trained; set from the training outcomes for continuous models.
    pub outcome: OutcomeScale,
}

impl ModelParams {
    /// All-zero parameters with the shapes implied by `cfg`.
    pub fn zeros(cfg: &NetConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            config: cfg.clone(),
            rep: ParamStack::zeros(cfg.rep_shapes()),
            head1: ParamStack::zeros(cfg.head_shapes()),
            head0: ParamStack::zeros(cfg.head_shapes()),
            outcome: OutcomeScale::default(),
        })
    }

    pub fn len(&self) -> usize {
        self.rep.len() + self.head1.len() + self.head0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `rep | head1 | head0`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        v.extend(&self.rep.data);
        v.extend(&self.head1.data);
        v.extend(&self.head0.data);
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.len() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                self.len(),
                flat.len()
            )));
        }
        let (r, rest) = flat.split_at(self.rep.len());
        let (h1, h0) = rest.split_at(self.head1.len());
        self.rep.data.copy_from_slice(r);
        self.head1.data.copy_from_slice(h1);
        self.head0.data.copy_from_slice(h0);
        Ok(())
    }

    /// Index ranges of the three stacks inside the flat layout.
    pub fn flat_ranges(&self) -> [std::ops::Range<usize>; 3] {
        let a = self.rep.len();
        let b = a + self.head1.len();
        [0..a, a..b, b..b + self.head0.len()]
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.is_finite())
    }
}

/// Glorot-uniform weights and zero biases, deterministic per seed.
pub fn init_params(cfg: &NetConfig, seed: u64) -> Result<ModelParams> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rep = ParamStack::glorot(cfg.rep_shapes(), &mut rng);
    let head1 = ParamStack::glorot(cfg.head_shapes(), &mut rng);
    let head0 = ParamStack::glorot(cfg.head_shapes(), &mut rng);
    Ok(ModelParams {
        config: cfg.clone(),
        rep,
        head1,
        head0,
        outcome: OutcomeScale::default(),
    })
}

fn dense_forward(
    stack: &ParamStack,
    x: ArrayView2<f64>,
    act: Activation,
    last_linear: bool,
) -> Result<Array2<f64>> {
    let mut h = x.to_owned();
    let n = stack.num_layers();
    for l in 0..n {
        let (w, b) = stack.layer(l);
        if h.ncols() != w.nrows() {
            return Err(Error::invalid(format!(
                "layer {l} expects width {}, got {}",
                w.nrows(),
                h.ncols()
            )));
        }
        h = h.dot(&w) + b;
        if !(last_linear && l + 1 == n) {
            h.mapv_inplace(|v| act.apply(v));
        }
    }
    Ok(h)
}

/// `Φ(X)`; the identity when there are no representation layers.
pub fn forward_rep(params: &ModelParams, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    if x.ncols() != params.config.input_dim {
        return Err(Error::invalid(format!(
            "expected {} covariates, got {}",
            params.config.input_dim,
            x.ncols()
        )));
    }
    dense_forward(&params.rep, x, params.config.activation, false)
}

/// Head output on representation rows: linear for continuous outcomes,
/// sigmoid probabilities for binary ones.
pub fn forward_head(
    params: &ModelParams,
    head: &ParamStack,
    phi: ArrayView2<f64>,
) -> Result<Array1<f64>> {
    let out = dense_forward(head, phi, params.config.activation, true)?;
    let out = out.column(0).to_owned();
    Ok(match params.config.outcome_kind {
        OutcomeKind::Continuous => out,
        OutcomeKind::Binary => out.mapv(gradcore::sigmoid),
    })
}

/// Graph leaves for one stack, in layer order.
#[derive(Debug, Clone)]
pub struct StackVars {
    pub layers: Vec<(Var, Var)>,
}

impl StackVars {
    pub fn register(g: &mut Graph, stack: &ParamStack) -> Self {
        let layers = (0..stack.num_layers())
            .map(|l| {
                let (w, b) = stack.layer(l);
                let wv = g.param(w.to_owned());
                let bv = g.param(b.to_owned().insert_axis(ndarray::Axis(0)));
                (wv, bv)
            })
            .collect();
        Self { layers }
    }

    /// Gradient of every leaf, flattened in the stack's layout.
    pub fn collect_grad(&self, grads: &gradcore::Gradients, out: &mut Vec<f64>) {
        for &(w, b) in &self.layers {
            out.extend(grads.wrt(w).iter());
            out.extend(grads.wrt(b).iter());
        }
    }
}

/// Graph leaves for a whole model.
#[derive(Debug, Clone)]
pub struct ModelVars {
    pub rep: StackVars,
    pub head1: StackVars,
    pub head0: StackVars,
}

impl ModelVars {
    pub fn register(g: &mut Graph, params: &ModelParams) -> Self {
        Self {
            rep: StackVars::register(g, &params.rep),
            head1: StackVars::register(g, &params.head1),
            head0: StackVars::register(g, &params.head0),
        }
    }

    /// Flat gradient in [`ModelParams::to_flat`] order.
    pub fn flat_grad(&self, grads: &gradcore::Gradients) -> Vec<f64> {
        let mut out = Vec::new();
        self.rep.collect_grad(grads, &mut out);
        self.head1.collect_grad(grads, &mut out);
        self.head0.collect_grad(grads, &mut out);
        out
    }
}

fn dense_graph(
    g: &mut Graph,
    stack: &StackVars,
    x: Var,
    act: Activation,
    last_linear: bool,
) -> Result<Var> {
    let mut h = x;
    let n = stack.layers.len();
    for (l, &(w, b)) in stack.layers.iter().enumerate() {
        h = g.affine(h, w, b)?;
        if !(last_linear && l + 1 == n) {
            h = act.graph(g, h);
        }
    }
    Ok(h)
}

pub fn rep_graph(g: &mut Graph, cfg: &NetConfig, vars: &ModelVars, x: Var) -> Result<Var> {
    dense_graph(g, &vars.rep, x, cfg.activation, false)
}

/// n×1 head output node (probabilities for binary outcomes).
pub fn head_graph(g: &mut Graph, cfg: &NetConfig, head: &StackVars, phi: Var) -> Result<Var> {
    let out = dense_graph(g, head, phi, cfg.activation, true)?;
    Ok(match cfg.outcome_kind {
        OutcomeKind::Continuous => out,
        OutcomeKind::Binary => g.sigmoid(out),
    })
}

/// Adam state and hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptState {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut OptState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::invalid(format!(
            "adam: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!(
            "gradient coordinate {i} is {} at optimizer step {}",
            grads[i],
            state.step + 1
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn tiny_cfg(input: usize, rep: Vec<usize>, head: Vec<usize>) -> NetConfig {
        NetConfig {
            input_dim: input,
            rep_layers: rep,
            head_layers: head,
            activation: Activation::Elu,
            outcome_kind: OutcomeKind::Continuous,
            share_representation: true,
        }
    }

    #[test]
    fn init_is_deterministic() {
        let cfg = tiny_cfg(5, vec![8, 4], vec![6]);
        assert_eq!(init_params(&cfg, 7).unwrap(), init_params(&cfg, 7).unwrap());
        assert_ne!(init_params(&cfg, 7).unwrap(), init_params(&cfg, 8).unwrap());
    }

    #[test]
    fn glorot_bound_and_zero_bias() {
        let cfg = tiny_cfg(2, vec![2], vec![]);
        let p = init_params(&cfg, 1).unwrap();
        let (w, b) = p.rep.layer(0);
        assert_eq!(w.len(), 4);
        let bound = (6.0f64 / 4.0).sqrt();
        assert!(w.iter().all(|v| v.abs() <= bound));
        assert!(b.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn parameter_count_closed_form() {
        let cfg = NetConfig::new(25);
        // rep: 25→200→200→200; each head: 200→100→100→100→1
        let rep = (25 * 200 + 200) + 2 * (200 * 200 + 200);
        let head = (200 * 100 + 100) + 2 * (100 * 100 + 100) + (100 + 1);
        assert_eq!(cfg.param_count(), rep + 2 * head);
        assert_eq!(cfg.param_count(), 166_402);
        assert_eq!(init_params(&cfg, 0).unwrap().len(), 166_402);
    }

    #[test]
    fn identity_representation_without_layers() {
        let cfg = tiny_cfg(3, vec![], vec![4]).without_sharing();
        let p = init_params(&cfg, 0).unwrap();
        let x = array![[1.0, -2.0, 0.5], [0.0, 3.0, 1.0]];
        assert_eq!(forward_rep(&p, x.view()).unwrap(), x);
    }

    #[test]
    fn zero_weights_give_zero_representation() {
        let cfg = tiny_cfg(3, vec![4, 4], vec![2]);
        let p = ModelParams::zeros(&cfg).unwrap();
        let x = array![[1.0, -2.0, 0.5], [0.0, 3.0, 1.0]];
        assert!(forward_rep(&p, x.view()).unwrap().iter().all(|&v| v == 0.0));
        assert!(
            forward_head(&p, &p.head1, forward_rep(&p, x.view()).unwrap().view())
                .unwrap()
                .iter()
                .all(|&v| v == 0.0)
        );
        let mut bin = cfg.clone();
        bin.outcome_kind = OutcomeKind::Binary;
        let p = ModelParams::zeros(&bin).unwrap();
        let phi = forward_rep(&p, x.view()).unwrap();
        assert!(forward_head(&p, &p.head0, phi.view())
            .unwrap()
            .iter()
            .all(|&v| v == 0.5));
    }

    #[test]
    fn relu_single_unit() {
        let mut cfg = tiny_cfg(1, vec![1], vec![]);
        cfg.activation = Activation::Relu;
        let mut p = ModelParams::zeros(&cfg).unwrap();
        p.rep.layer_mut(0).0[[0, 0]] = 1.0;
        let phi = forward_rep(&p, array![[-1.0], [2.0]].view()).unwrap();
        assert_eq!(phi, array![[0.0], [2.0]]);
    }

    #[test]
    fn linear_head_example() {
        let cfg = tiny_cfg(1, vec![], vec![]).without_sharing();
        let mut p = ModelParams::zeros(&cfg).unwrap();
        {
            let (mut w, mut b) = p.head1.layer_mut(0);
            w[[0, 0]] = 1.0;
            b[0] = 1.0;
        }
        let out = forward_head(&p, &p.head1, array![[2.0]].view()).unwrap();
        assert_eq!(out, array![3.0]);
    }

    #[test]
    fn head_matches_hand_arithmetic() {
        let cfg = tiny_cfg(2, vec![], vec![3]).without_sharing();
        let p = init_params(&cfg, 3).unwrap();
        let phi = array![[0.4, -1.1], [2.0, 0.3], [-0.7, -0.2]];
        let got = forward_head(&p, &p.head1, phi.view()).unwrap();
        let (w1, b1) = p.head1.layer(0);
        let (w2, b2) = p.head1.layer(1);
        for r in 0..3 {
            let mut out = b2[0];
            for j in 0..3 {
                let mut h = b1[j];
                for k in 0..2 {
                    h += phi[[r, k]] * w1[[k, j]];
                }
                let h = if h > 0.0 { h } else { h.exp() - 1.0 };
                out += h * w2[[j, 0]];
            }
            assert!((got[r] - out).abs() < 1e-12);
        }
    }

    #[test]
    fn graph_forward_matches_plain_forward() {
        let cfg = tiny_cfg(3, vec![5, 4], vec![6]);
        let p = init_params(&cfg, 11).unwrap();
        let x = array![[0.1, 0.2, -0.3], [1.0, -1.5, 0.7]];
        let mut g = Graph::new();
        let vars = ModelVars::register(&mut g, &p);
        let xv = g.constant(x.clone());
        let phi = rep_graph(&mut g, &cfg, &vars, xv).unwrap();
        let h1 = head_graph(&mut g, &cfg, &vars.head1, phi).unwrap();
        let plain_phi = forward_rep(&p, x.view()).unwrap();
        assert_eq!(g.value(phi), &plain_phi);
        let plain = forward_head(&p, &p.head1, plain_phi.view()).unwrap();
        assert_eq!(g.value(h1).column(0), plain);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let cfg = tiny_cfg(3, vec![4], vec![2]);
        let p = init_params(&cfg, 0).unwrap();
        assert!(forward_rep(&p, array![[1.0, 2.0]].view()).is_err());
        assert!(forward_head(&p, &p.head1, array![[1.0, 2.0]].view()).is_err());
    }

    #[test]
    fn unshared_heads_are_isolated() {
        let cfg = tiny_cfg(3, vec![], vec![4, 4]).without_sharing();
        let p = init_params(&cfg, 2).unwrap();
        let mut q = p.clone();
        for v in q.head0.data.iter_mut() {
            *v = *v * -3.0 + 0.25;
        }
        let x = array![[0.3, -0.2, 1.0], [0.0, 0.5, -1.0]];
        let run = |m: &ModelParams| {
            forward_head(m, &m.head1, forward_rep(m, x.view()).unwrap().view()).unwrap()
        };
        assert_eq!(run(&p), run(&q));
    }

    #[test]
    fn adam_first_step_is_signed_lr() {
        let mut theta = vec![1.0, -2.0, 0.5];
        let mut st = OptState::new(3, 0.01);
        adam_step(&mut theta, &[3.0, -0.2, 0.0], &mut st).unwrap();
        assert!((theta[0] - (1.0 - 0.01)).abs() < 1e-9);
        assert!((theta[1] - (-2.0 + 0.01)).abs() < 1e-9);
        assert_eq!(theta[2], 0.5);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn adam_zero_gradient_decays_moments() {
        let mut theta = vec![1.0];
        let mut st = OptState::new(1, 0.1);
        adam_step(&mut theta, &[1.0], &mut st).unwrap();
        let (m, v) = (st.m[0], st.v[0]);
        let before = theta[0];
        let mut frozen = theta.clone();
        let mut st2 = st.clone();
        st2.m[0] = 0.0;
        st2.v[0] = 0.0;
        adam_step(&mut frozen, &[0.0], &mut st2).unwrap();
        assert_eq!(frozen[0], before);
        adam_step(&mut theta, &[0.0], &mut st).unwrap();
        assert!((st.m[0] - 0.9 * m).abs() < 1e-15);
        assert!((st.v[0] - 0.999 * v).abs() < 1e-15);
    }

    #[test]
    fn adam_minimizes_square() {
        // Independent scalar recursion.
        let (mut th, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=100 {
            let g = 2.0 * th;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            th -= 0.1 * mh / (vh.sqrt() + 1e-8);
        }
        assert!(th.abs() < 0.1);

        let mut theta = vec![1.0];
        let mut st = OptState::new(1, 0.1);
        for _ in 0..100 {
            let g = [2.0 * theta[0]];
            adam_step(&mut theta, &g, &mut st).unwrap();
        }
        assert!((theta[0] - th).abs() < 1e-12);
        assert!(theta[0].abs() < 0.1);
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut theta = vec![1.0];
        let mut st = OptState::new(1, 0.1);
        assert!(matches!(
            adam_step(&mut theta, &[f64::NAN], &mut st),
            Err(Error::NonFinite(_))
        ));
        assert_eq!(theta[0], 1.0);
    }

    proptest! {
        #[test]
        fn forward_is_row_permutation_equivariant(seed in 0u64..500, rot in 1usize..6) {
            let cfg = tiny_cfg(3, vec![5], vec![4]);
            let p = init_params(&cfg, seed).unwrap();
            let x = Array2::from_shape_fn((6, 3), |(i, j)| ((i * 7 + j * 3 + seed as usize) % 11) as f64 / 5.0 - 1.0);
            let mut xp = x.clone();
            for i in 0..6 {
                xp.row_mut(i).assign(&x.row((i + rot) % 6));
            }
            let a = forward_head(&p, &p.head1, forward_rep(&p, x.view()).unwrap().view()).unwrap();
            let b = forward_head(&p, &p.head1, forward_rep(&p, xp.view()).unwrap().view()).unwrap();
            for i in 0..6 {
                prop_assert_eq!(b[i], a[(i + rot) % 6]);
            }
        }
    }
}
