//! Reverse-mode differentiation over the closed set of matrix primitives the
//! training objectives use, plus central finite differences and a gradient
//! checker.
//!
//! A [`Graph`] is a tape: every operation evaluates eagerly, records its inputs
//! and whatever it needs for the reverse pass, and returns a [`Var`] handle.
//! [`Graph::backward`] then walks the tape once in reverse.

use ndarray::{s, Array2, Axis};

use crate::error::{Error, Result};
use crate::linalg;
use crate::matdiv::{self, CorrentropyEstimate, Flavor};

/// Clamp for probabilities inside binary cross-entropy.
const BCE_EPS: f64 = 1e-12;

/// The differentiable primitives a graph can contain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Primitive {
    Leaf,
    Affine,
    Elu,
    Relu,
    Sigmoid,
    MseMean,
    BceMean,
    GaussianKernel,
    Sum,
    Mean,
    MeanRows,
    SumSquares,
    Add,
    Sub,
    Scale,
    MatMul,
    Inverse,
    LogDet,
    Trace,
    HCat,
    VCat,
    Rows,
    Standardize,
    Principal,
    Correntropy,
    Divergence,
}

impl Primitive {
    pub const ALL: [Primitive; 26] = [
        Primitive::Leaf,
        Primitive::Affine,
        Primitive::Elu,
        Primitive::Relu,
        Primitive::Sigmoid,
        Primitive::MseMean,
        Primitive::BceMean,
        Primitive::GaussianKernel,
        Primitive::Sum,
        Primitive::Mean,
        Primitive::MeanRows,
        Primitive::SumSquares,
        Primitive::Add,
        Primitive::Sub,
        Primitive::Scale,
        Primitive::MatMul,
        Primitive::Inverse,
        Primitive::LogDet,
        Primitive::Trace,
        Primitive::HCat,
        Primitive::VCat,
        Primitive::Rows,
        Primitive::Standardize,
        Primitive::Principal,
        Primitive::Correntropy,
        Primitive::Divergence,
    ];
}

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Affine {
        x: Var,
        w: Var,
        b: Var,
    },
    Elu(Var),
    Relu(Var),
    Sigmoid(Var),
    MseMean {
        pred: Var,
        target: Var,
    },
    BceMean {
        pred: Var,
        target: Var,
    },
    Kernel {
        a: Var,
        b: Var,
        sigma: f64,
    },
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    SumSquares(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    Inverse(Var),
    LogDet {
        a: Var,
        inv: Array2<f64>,
    },
    Trace(Var),
    HCat(Vec<Var>),
    VCat(Vec<Var>),
    Rows {
        a: Var,
        start: usize,
    },
    Standardize {
        a: Var,
        inv_sd: ndarray::Array1<f64>,
    },
    Principal {
        a: Var,
        idx: Vec<usize>,
    },
    Correntropy {
        z: Var,
        est: Box<CorrentropyEstimate>,
    },
    Divergence {
        a: Var,
        b: Var,
        grad_a: Array2<f64>,
        grad_b: Array2<f64>,
    },
}

impl Op {
    fn primitive(&self) -> Primitive {
        match self {
            Op::Leaf => Primitive::Leaf,
            Op::Affine { .. } => Primitive::Affine,
            Op::Elu(_) => Primitive::Elu,
            Op::Relu(_) => Primitive::Relu,
            Op::Sigmoid(_) => Primitive::Sigmoid,
            Op::MseMean { .. } => Primitive::MseMean,
            Op::BceMean { .. } => Primitive::BceMean,
            Op::Kernel { .. } => Primitive::GaussianKernel,
            Op::Sum(_) => Primitive::Sum,
            Op::Mean(_) => Primitive::Mean,
            Op::MeanRows(_) => Primitive::MeanRows,
            Op::SumSquares(_) => Primitive::SumSquares,
            Op::Add(..) => Primitive::Add,
            Op::Sub(..) => Primitive::Sub,
            Op::Scale(..) => Primitive::Scale,
            Op::MatMul(..) => Primitive::MatMul,
            Op::Inverse(_) => Primitive::Inverse,
            Op::LogDet { .. } => Primitive::LogDet,
            Op::Trace(_) => Primitive::Trace,
            Op::HCat(_) => Primitive::HCat,
            Op::VCat(_) => Primitive::VCat,
            Op::Rows { .. } => Primitive::Rows,
            Op::Standardize { .. } => Primitive::Standardize,
            Op::Principal { .. } => Primitive::Principal,
            Op::Correntropy { .. } => Primitive::Correntropy,
            Op::Divergence { .. } => Primitive::Divergence,
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
    needs_grad: bool,
}

/// Eagerly evaluated computation tape.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar output with respect to every node that needs one.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of `v`, zeros when the output does not depend on it.
    pub fn wrt(&self, v: Var) -> Array2<f64> {
        self.grads[v.0]
            .clone()
            .unwrap_or_else(|| Array2::zeros(self.shapes[v.0]))
    }
}

fn shape_err(op: &str, a: (usize, usize), b: (usize, usize)) -> Error {
    Error::invalid(format!("{op}: incompatible shapes {a:?} and {b:?}"))
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Non-trainable leaf (data, targets).
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn primitive(&self, v: Var) -> Primitive {
        self.nodes[v.0].op.primitive()
    }

    /// `x·w + b`, with `b` a 1×k row broadcast over rows.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.1 != ws.0 {
            return Err(shape_err("affine", xs, ws));
        }
        if bs != (1, ws.1) {
            return Err(shape_err("affine bias", ws, bs));
        }
        let value = self.value(x).dot(self.value(w)) + self.value(b);
        let ng = self.ng(x) || self.ng(w) || self.ng(b);
        Ok(self.push(value, Op::Affine { x, w, b }, ng))
    }

    pub fn elu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|v| if v > 0.0 { v } else { v.exp_m1() });
        let ng = self.ng(a);
        self.push(value, Op::Elu(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|v| v.max(0.0));
        let ng = self.ng(a);
        self.push(value, Op::Relu(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(sigmoid);
        let ng = self.ng(a);
        self.push(value, Op::Sigmoid(a), ng)
    }

    pub fn mse_mean(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.same_shape("mse", pred, target)?;
        let diff = self.value(pred) - self.value(target);
        let v = diff.mapv(|d| d * d).mean().unwrap_or(0.0);
        let ng = self.ng(pred) || self.ng(target);
        Ok(self.push(scalar(v), Op::MseMean { pred, target }, ng))
    }

    /// Mean binary cross-entropy of probabilities `pred` against `target`.
    pub fn bce_mean(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.same_shape("bce", pred, target)?;
        let p = self.value(pred);
        let t = self.value(target);
        let n = p.len() as f64;
        let v = -p
            .iter()
            .zip(t.iter())
            .map(|(&p, &t)| {
                let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
                t * p.ln() + (1.0 - t) * (1.0 - p).ln()
            })
            .sum::<f64>()
            / n;
        let ng = self.ng(pred) || self.ng(target);
        Ok(self.push(scalar(v), Op::BceMean { pred, target }, ng))
    }

    /// Elementwise Gaussian kernel `κ(a_ij, b_ij)`.
    pub fn gaussian_kernel(&mut self, a: Var, b: Var, sigma: f64) -> Result<Var> {
        self.same_shape("kernel", a, b)?;
        if !(sigma > 0.0) {
            return Err(Error::invalid("kernel width must be positive"));
        }
        let c = 1.0 / (2.0 * sigma * sigma);
        let mut value = self.value(a) - self.value(b);
        value.mapv_inplace(|d| (-d * d * c).exp());
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::Kernel { a, b, sigma }, ng))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = self.value(a).sum();
        let ng = self.ng(a);
        self.push(scalar(v), Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a).mean().unwrap_or(0.0);
        let ng = self.ng(a);
        self.push(scalar(v), Op::Mean(a), ng)
    }

    /// Column means as a 1×k row.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        if self.shape(a).0 == 0 {
            return Err(Error::invalid("mean over zero rows"));
        }
        let v = self
            .value(a)
            .mean_axis(Axis(0))
            .expect("nonempty")
            .insert_axis(Axis(0));
        let ng = self.ng(a);
        Ok(self.push(v, Op::MeanRows(a), ng))
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x * x).sum();
        let ng = self.ng(a);
        self.push(scalar(v), Op::SumSquares(a), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.value(a) + self.value(b);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.value(a) - self.value(b);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::Sub(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        let ng = self.ng(a);
        self.push(v, Op::Scale(a, c), ng)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(shape_err("matmul", sa, sb));
        }
        let v = self.value(a).dot(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::MatMul(a, b), ng))
    }

    /// Inverse of (the symmetric part of) an SPD matrix via Cholesky.
    pub fn inverse(&mut self, a: Var) -> Result<Var> {
        let v = linalg::inverse_spd(sym_part(self.value(a)).view())?;
        let ng = self.ng(a);
        Ok(self.push(v, Op::Inverse(a), ng))
    }

    /// `log det` of (the symmetric part of) an SPD matrix via Cholesky.
    pub fn logdet(&mut self, a: Var) -> Result<Var> {
        let l = linalg::cholesky(sym_part(self.value(a)).view())?;
        let v = linalg::logdet_from_cholesky(&l);
        let inv = linalg::inverse_from_cholesky(&l);
        let ng = self.ng(a);
        Ok(self.push(scalar(v), Op::LogDet { a, inv }, ng))
    }

    pub fn trace(&mut self, a: Var) -> Result<Var> {
        linalg::square_dim(self.value(a).view())?;
        let v = self.value(a).diag().sum();
        let ng = self.ng(a);
        Ok(self.push(scalar(v), Op::Trace(a), ng))
    }

    /// Horizontal concatenation of equally tall blocks.
    pub fn hcat(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::invalid("hcat of nothing"));
        };
        let rows = self.shape(first).0;
        let mut cols = 0;
        for &p in parts {
            if self.shape(p).0 != rows {
                return Err(shape_err("hcat", self.shape(first), self.shape(p)));
            }
            cols += self.shape(p).1;
        }
        let mut v = Array2::<f64>::zeros((rows, cols));
        let mut c0 = 0;
        for &p in parts {
            let w = self.shape(p).1;
            v.slice_mut(s![.., c0..c0 + w]).assign(self.value(p));
            c0 += w;
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(v, Op::HCat(parts.to_vec()), ng))
    }

    /// Vertical concatenation of equally wide blocks.
    pub fn vcat(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::invalid("vcat of nothing"));
        };
        let cols = self.shape(first).1;
        let mut rows = 0;
        for &p in parts {
            if self.shape(p).1 != cols {
                return Err(shape_err("vcat", self.shape(first), self.shape(p)));
            }
            rows += self.shape(p).0;
        }
        let mut v = Array2::<f64>::zeros((rows, cols));
        let mut r0 = 0;
        for &p in parts {
            let h = self.shape(p).0;
            v.slice_mut(s![r0..r0 + h, ..]).assign(self.value(p));
            r0 += h;
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(v, Op::VCat(parts.to_vec()), ng))
    }

    /// Rows `start..end` of `a`.
    pub fn rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let n = self.shape(a).0;
        if start >= end || end > n {
            return Err(Error::invalid(format!(
                "row range {start}..{end} out of bounds for {n} rows"
            )));
        }
        let v = self.value(a).slice(s![start..end, ..]).to_owned();
        let ng = self.ng(a);
        Ok(self.push(v, Op::Rows { a, start }, ng))
    }

    /// Per-column z-scores `(x − mean) / sqrt(var + eps)`, with the population
    /// variance over rows.
    pub fn standardize(&mut self, a: Var, eps: f64) -> Result<Var> {
        let (n, _) = self.shape(a);
        if n < 2 {
            return Err(Error::InsufficientSample { needed: 2, got: n });
        }
        if !(eps > 0.0) {
            return Err(Error::invalid("standardize needs eps > 0"));
        }
        let x = self.value(a);
        let mean = x.mean_axis(Axis(0)).expect("nonempty");
        let centered = x - &mean;
        let var = centered
            .mapv(|v| v * v)
            .mean_axis(Axis(0))
            .expect("nonempty");
        let inv_sd = var.mapv(|v| 1.0 / (v + eps).sqrt());
        let v = centered * &inv_sd;
        let ng = self.ng(a);
        Ok(self.push(v, Op::Standardize { a, inv_sd }, ng))
    }

    /// Principal submatrix on `idx`.
    pub fn principal(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let n = linalg::square_dim(self.value(a).view())?;
        if idx.iter().any(|&i| i >= n) {
            return Err(Error::invalid(format!(
                "principal index out of range for {n}x{n}"
            )));
        }
        let v = matdiv::principal_submatrix(self.value(a).view(), idx);
        let ng = self.ng(a);
        Ok(self.push(
            v,
            Op::Principal {
                a,
                idx: idx.to_vec(),
            },
            ng,
        ))
    }

    /// Centered correntropy matrix of the columns of `z`, plus `jitter·I`.
    /// The kernel entries and reductions are fused into one node.
    pub fn correntropy(&mut self, z: Var, sigma: f64, jitter: f64) -> Result<Var> {
        let (n, d) = self.shape(z);
        if n < 2 {
            return Err(Error::InsufficientSample { needed: 2, got: n });
        }
        if d == 0 || !(sigma > 0.0) || jitter < 0.0 {
            return Err(Error::invalid(
                "correntropy: bad width, jitter or column count",
            ));
        }
        if self.value(z).iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("correntropy input".into()));
        }
        let ng = self.ng(z);
        let est = CorrentropyEstimate::compute(self.value(z).view(), sigma, jitter, ng);
        let v = est.matrix.clone();
        Ok(self.push(
            v,
            Op::Correntropy {
                z,
                est: Box::new(est),
            },
            ng,
        ))
    }

    /// Bregman divergence `D(A ‖ B)` between the symmetric parts of `A` and
    /// `B`, with closed-form gradients.
    pub fn divergence(&mut self, a: Var, b: Var, flavor: Flavor) -> Result<Var> {
        let sa = sym_part(self.value(a));
        let sb = sym_part(self.value(b));
        let r = matdiv::divergence_grad(flavor, sa.view(), sb.view())?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(
            scalar(r.value),
            Op::Divergence {
                a,
                b,
                grad_a: r.grad_a,
                grad_b: r.grad_b,
            },
            ng,
        ))
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, out: Var) -> Result<Gradients> {
        if self.shape(out) != (1, 1) {
            return Err(Error::invalid(format!(
                "backward needs a scalar output, got {:?}",
                self.shape(out)
            )));
        }
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(scalar(1.0));

        for idx in (0..=out.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.dim()).collect(),
        })
    }

    fn propagate(&self, node: &Node, g: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        let mut acc = |v: Var, d: Array2<f64>| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => *existing += &d,
                slot => *slot = Some(d),
            }
        };
        let gs = g[[0, 0]];
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::Affine { x, w, b } => {
                if self.ng(*x) {
                    acc(*x, g.dot(&val(*w).t()));
                }
                if self.ng(*w) {
                    acc(*w, val(*x).t().dot(g));
                }
                if self.ng(*b) {
                    acc(*b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::Elu(a) => {
                let mut d = node.value.mapv(|o| if o > 0.0 { 1.0 } else { o + 1.0 });
                // Subgradient 1 at exactly zero input would give o+1 = 1 too.
                d *= g;
                acc(*a, d);
            }
            Op::Relu(a) => {
                let mut d = val(*a).mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
                d *= g;
                acc(*a, d);
            }
            Op::Sigmoid(a) => {
                let mut d = node.value.mapv(|s| s * (1.0 - s));
                d *= g;
                acc(*a, d);
            }
            Op::MseMean { pred, target } => {
                let n = val(*pred).len() as f64;
                let d = (val(*pred) - val(*target)) * (2.0 * gs / n);
                if self.ng(*target) {
                    acc(*target, -&d);
                }
                acc(*pred, d);
            }
            Op::BceMean { pred, target } => {
                let p = val(*pred);
                let t = val(*target);
                let n = p.len() as f64;
                let mut dp = Array2::<f64>::zeros(p.dim());
                let mut dt = Array2::<f64>::zeros(p.dim());
                for ((o, ot), (&pv, &tv)) in
                    dp.iter_mut().zip(dt.iter_mut()).zip(p.iter().zip(t.iter()))
                {
                    let pc = pv.clamp(BCE_EPS, 1.0 - BCE_EPS);
                    let inside = pv > BCE_EPS && pv < 1.0 - BCE_EPS;
                    *o = if inside {
                        gs * (pc - tv) / (pc * (1.0 - pc)) / n
                    } else {
                        0.0
                    };
                    *ot = -gs * (pc.ln() - (1.0 - pc).ln()) / n;
                }
                acc(*pred, dp);
                if self.ng(*target) {
                    acc(*target, dt);
                }
            }
            Op::Kernel { a, b, sigma } => {
                let diff = val(*a) - val(*b);
                let mut d = &node.value * &diff * (-1.0 / (sigma * sigma));
                d *= g;
                if self.ng(*b) {
                    acc(*b, -&d);
                }
                acc(*a, d);
            }
            Op::Sum(a) => acc(*a, Array2::from_elem(self.shape(*a), gs)),
            Op::Mean(a) => {
                let n = val(*a).len() as f64;
                acc(*a, Array2::from_elem(self.shape(*a), gs / n));
            }
            Op::MeanRows(a) => {
                let (n, k) = self.shape(*a);
                let row = g.row(0).mapv(|v| v / n as f64);
                let d = row.broadcast((n, k)).expect("broadcast row").to_owned();
                acc(*a, d);
            }
            Op::SumSquares(a) => acc(*a, val(*a) * (2.0 * gs)),
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, -g);
            }
            Op::Scale(a, c) => acc(*a, g * *c),
            Op::MatMul(a, b) => {
                if self.ng(*a) {
                    acc(*a, g.dot(&val(*b).t()));
                }
                if self.ng(*b) {
                    acc(*b, val(*a).t().dot(g));
                }
            }
            Op::Inverse(a) => {
                let inv = &node.value;
                acc(*a, -sym_part(&inv.dot(g).dot(inv)));
            }
            Op::LogDet { a, inv } => acc(*a, inv.t().to_owned() * gs),
            Op::Trace(a) => {
                let n = self.shape(*a).0;
                acc(*a, Array2::eye(n) * gs);
            }
            Op::HCat(parts) => {
                let mut c0 = 0;
                for &p in parts {
                    let w = self.shape(p).1;
                    acc(p, g.slice(s![.., c0..c0 + w]).to_owned());
                    c0 += w;
                }
            }
            Op::VCat(parts) => {
                let mut r0 = 0;
                for &p in parts {
                    let h = self.shape(p).0;
                    acc(p, g.slice(s![r0..r0 + h, ..]).to_owned());
                    r0 += h;
                }
            }
            Op::Rows { a, start } => {
                let mut d = Array2::<f64>::zeros(self.shape(*a));
                let h = g.nrows();
                d.slice_mut(s![*start..*start + h, ..]).assign(g);
                acc(*a, d);
            }
            Op::Standardize { a, inv_sd } => {
                let y = &node.value;
                let g_mean = g.mean_axis(Axis(0)).expect("nonempty");
                let gy_mean = (g * y).mean_axis(Axis(0)).expect("nonempty");
                let d = (g - &g_mean - y * &gy_mean) * inv_sd;
                acc(*a, d);
            }
            Op::Principal { a, idx } => {
                let n = self.shape(*a).0;
                let mut d = Array2::<f64>::zeros((n, n));
                for (i, &ri) in idx.iter().enumerate() {
                    for (j, &cj) in idx.iter().enumerate() {
                        d[[ri, cj]] += g[[i, j]];
                    }
                }
                acc(*a, d);
            }
            Op::Correntropy { z, est } => acc(*z, est.backward(g.view())),
            Op::Divergence {
                a,
                b,
                grad_a,
                grad_b,
            } => {
                if self.ng(*a) {
                    acc(*a, grad_a * gs);
                }
                if self.ng(*b) {
                    acc(*b, grad_b * gs);
                }
            }
        }
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn sym_part(m: &Array2<f64>) -> Array2<f64> {
    let mut out = m.clone();
    linalg::symmetrize_in_place(&mut out);
    out
}

fn scalar(v: f64) -> Array2<f64> {
    Array2::from_elem((1, 1), v)
}

/// Central finite differences `(f(θ+h·eᵢ) − f(θ−h·eᵢ)) / 2h`.
pub fn finite_diff_grad<F>(mut f: F, params: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(step > 0.0) {
        return Err(Error::invalid(format!("step must be positive, got {step}")));
    }
    let mut theta = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let orig = theta[i];
        theta[i] = orig + step;
        let fp = f(&theta)?;
        theta[i] = orig - step;
        let fm = f(&theta)?;
        theta[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite(format!("objective at coordinate {i}")));
        }
        out.push((fp - fm) / (2.0 * step));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    pub worst_param_index: usize,
    pub n_params: usize,
    pub rel_tol: f64,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.rel_tol
    }
}

/// Compare analytic and numeric gradients coordinate by coordinate.
///
/// Relative error is `|a − n| / max(|a|, |n|, abs_floor)`.
pub fn grad_check(analytic: &[f64], numeric: &[f64], rel_tol: f64, abs_floor: f64) -> GradReport {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    let mut report = GradReport {
        max_abs_err: 0.0,
        max_rel_err: 0.0,
        worst_param_index: 0,
        n_params: analytic.len(),
        rel_tol,
    };
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        let abs = (a - n).abs();
        let rel = abs / a.abs().max(n.abs()).max(abs_floor);
        let rel = if rel.is_nan() { f64::INFINITY } else { rel };
        report.max_abs_err = report.max_abs_err.max(abs);
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst_param_index = i;
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
    }

    fn rand_spd(rng: &mut ChaCha8Rng, n: usize) -> Array2<f64> {
        let g = rand_mat(rng, n, n);
        let mut m = g.t().dot(&g) + Array2::<f64>::eye(n) * 0.5;
        linalg::symmetrize_in_place(&mut m);
        m
    }

    /// Builds a scalar from the given leaves; the closure receives the graph
    /// and the parameter leaves.
    fn check_builder(
        leaves: &[Array2<f64>],
        build: &dyn Fn(&mut Graph, &[Var]) -> Result<Var>,
        tol: f64,
    ) -> Primitive {
        let mut g = Graph::new();
        let vars: Vec<Var> = leaves.iter().map(|l| g.param(l.clone())).collect();
        let out = build(&mut g, &vars).unwrap();
        let grads = g.backward(out).unwrap();
        let analytic: Vec<f64> = vars
            .iter()
            .flat_map(|&v| grads.wrt(v).into_iter())
            .collect();
        let flat: Vec<f64> = leaves.iter().flat_map(|l| l.iter().copied()).collect();
        let numeric = finite_diff_grad(
            |theta| {
                let mut g = Graph::new();
                let mut off = 0;
                let vars: Vec<Var> = leaves
                    .iter()
                    .map(|l| {
                        let m = Array2::from_shape_vec(l.dim(), theta[off..off + l.len()].to_vec())
                            .unwrap();
                        off += l.len();
                        g.param(m)
                    })
                    .collect();
                let out = build(&mut g, &vars)?;
                Ok(g.scalar(out))
            },
            &flat,
            1e-6,
        )
        .unwrap();
        let report = grad_check(&analytic, &numeric, tol, 1e-6);
        assert!(report.passed(), "{report:?}");
        // Report which primitive produced the output for coverage bookkeeping.
        g.primitive(out)
    }

    #[test]
    fn every_primitive_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut covered = HashSet::new();
        covered.insert(Primitive::Leaf);
        let w = rand_mat(&mut rng, 3, 2);
        let x = rand_mat(&mut rng, 4, 3);
        let b = rand_mat(&mut rng, 1, 2);
        let tol = 1e-6;

        let mut seen = |p: Primitive, also: &[Primitive]| {
            covered.insert(p);
            covered.extend(also.iter().copied());
        };

        // Affine followed by a weighted sum keeps the test sensitive to every
        // output entry.
        let weights = rand_mat(&mut rng, 4, 2);
        let wsum = move |g: &mut Graph, v: Var| -> Result<Var> {
            let c = g.constant(weights.clone());
            let k = g.gaussian_kernel(v, c, 1.5)?;
            Ok(g.sum(k))
        };

        let p = check_builder(
            &[x.clone(), w.clone(), b.clone()],
            &|g, v| {
                let a = g.affine(v[0], v[1], v[2])?;
                wsum(g, a)
            },
            tol,
        );
        seen(p, &[Primitive::Affine, Primitive::GaussianKernel]);

        // Shift away from the kinks so central differences are exact enough.
        let xa = x.mapv(|v| if v.abs() < 0.05 { v + 0.1 } else { v });
        for (prim, f) in [
            (Primitive::Elu, Graph::elu as fn(&mut Graph, Var) -> Var),
            (Primitive::Relu, Graph::relu),
            (Primitive::Sigmoid, Graph::sigmoid),
        ] {
            check_builder(
                std::slice::from_ref(&xa),
                &|g, v| {
                    let a = f(g, v[0]);
                    let t = g.constant(Array2::from_elem((4, 3), 0.3));
                    g.mse_mean(a, t)
                },
                tol,
            );
            seen(prim, &[Primitive::MseMean]);
        }

        let probs = x.mapv(|v| 0.5 + 0.4 * v);
        check_builder(
            &[probs, x.mapv(|v| 0.5 + 0.3 * v)],
            &|g, v| g.bce_mean(v[0], v[1]),
            tol,
        );
        seen(Primitive::BceMean, &[]);

        check_builder(std::slice::from_ref(&x), &|g, v| Ok(g.mean(v[0])), tol);
        seen(Primitive::Mean, &[]);

        check_builder(
            &[x.clone(), xa.clone()],
            &|g, v| {
                let m1 = g.mean_rows(v[0])?;
                let m0 = g.mean_rows(v[1])?;
                let d = g.sub(m1, m0)?;
                let s = g.sum_squares(d);
                let t = g.add(s, s)?;
                Ok(g.scale(t, 0.7))
            },
            tol,
        );
        seen(
            Primitive::Scale,
            &[
                Primitive::MeanRows,
                Primitive::Sub,
                Primitive::SumSquares,
                Primitive::Add,
            ],
        );

        let a = rand_spd(&mut rng, 3);
        let bm = rand_spd(&mut rng, 3);
        check_builder(
            &[a.clone(), bm.clone()],
            &|g, v| {
                let inv = g.inverse(v[1])?;
                let p = g.matmul(v[0], inv)?;
                let t = g.trace(p)?;
                let la = g.logdet(v[0])?;
                g.sub(t, la)
            },
            tol,
        );
        seen(
            Primitive::Sub,
            &[
                Primitive::Inverse,
                Primitive::MatMul,
                Primitive::Trace,
                Primitive::LogDet,
            ],
        );

        let z = rand_mat(&mut rng, 7, 2);
        let y = rand_mat(&mut rng, 7, 1);
        for flavor in [Flavor::LogDet, Flavor::VonNeumann] {
            let a = a.clone();
            check_builder(
                &[z.clone(), y.clone()],
                &move |g, v| {
                    let h = g.hcat(&[v[0], v[1]])?;
                    let c = g.correntropy(h, 1.0, 1e-3)?;
                    let sub = g.principal(c, &[0, 2])?;
                    let reference =
                        g.constant(matdiv::principal_submatrix(a.view(), &[0, 2]) * 0.1);
                    g.divergence(sub, reference, flavor)
                },
                1e-5,
            );
        }
        seen(
            Primitive::Divergence,
            &[
                Primitive::HCat,
                Primitive::Correntropy,
                Primitive::Principal,
                Primitive::Sum,
            ],
        );

        let z0 = rand_mat(&mut rng, 4, 3);
        let z1 = rand_mat(&mut rng, 5, 3);
        let mix = rand_mat(&mut rng, 9, 3);
        check_builder(
            &[z0, z1],
            &move |g, v| {
                let all = g.vcat(&[v[0], v[1]])?;
                let s = g.standardize(all, 1e-8)?;
                let m = g.constant(mix.clone());
                let k = g.gaussian_kernel(s, m, 1.0)?;
                let top = g.rows(k, 0, 4)?;
                let bottom = g.rows(k, 4, 9)?;
                let a = g.sum_squares(top);
                let b = g.sum(bottom);
                g.add(a, b)
            },
            tol,
        );
        seen(
            Primitive::Add,
            &[Primitive::VCat, Primitive::Standardize, Primitive::Rows],
        );

        for p in Primitive::ALL {
            assert!(covered.contains(&p), "primitive {p:?} not gradient-checked");
        }
    }

    #[test]
    fn quadratic_gradient_is_two_theta() {
        let theta = array![[0.3, -1.2, 2.0, 0.7]];
        let mut g = Graph::new();
        let v = g.param(theta.clone());
        let out = g.sum_squares(v);
        let grads = g.backward(out).unwrap();
        let analytic: Vec<f64> = grads.wrt(v).iter().copied().collect();
        let flat: Vec<f64> = theta.iter().copied().collect();
        let numeric = finite_diff_grad(|t| Ok(t.iter().map(|x| x * x).sum()), &flat, 1e-5).unwrap();
        for (a, t) in analytic.iter().zip(&flat) {
            assert_eq!(*a, 2.0 * t);
        }
        assert!(grad_check(&analytic, &numeric, 1e-8, 1e-8).passed());
    }

    #[test]
    fn logdet_gradient_is_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = rand_spd(&mut rng, 4);
        let mut g = Graph::new();
        let v = g.param(a.clone());
        let out = g.logdet(v).unwrap();
        let grad = g.backward(out).unwrap().wrt(v);
        let inv = linalg::inverse_spd(a.view()).unwrap();
        for (x, y) in grad.iter().zip(inv.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
        // Symmetric perturbations against central differences.
        let h = 1e-6;
        for i in 0..4 {
            for j in 0..4 {
                let mut e = Array2::<f64>::zeros((4, 4));
                e[[i, j]] += h;
                e[[j, i]] += h;
                let num = (linalg::logdet_spd((&a + &e).view()).unwrap()
                    - linalg::logdet_spd((&a - &e).view()).unwrap())
                    / (2.0 * h);
                let ana = if i == j {
                    2.0 * grad[[i, i]]
                } else {
                    grad[[i, j]] + grad[[j, i]]
                };
                assert!((num - ana).abs() <= 1e-6 * ana.abs().max(1e-6));
            }
        }
    }

    #[test]
    fn finite_diff_examples() {
        let g = finite_diff_grad(|t| Ok(t[0]), &[0.4, 7.0, -2.0], 1e-5).unwrap();
        assert!((g[0] - 1.0).abs() < 1e-9);
        assert_eq!(&g[1..], &[0.0, 0.0]);
        let g = finite_diff_grad(|t| Ok(t[0] * t[1]), &[2.0, 3.0], 1e-5).unwrap();
        assert!((g[0] - 3.0).abs() < 1e-9 && (g[1] - 2.0).abs() < 1e-9);
        assert!(finite_diff_grad(|_| Ok(f64::NAN), &[1.0], 1e-5).is_err());
        assert!(finite_diff_grad(|t| Ok(t[0]), &[1.0], 0.0).is_err());
    }

    #[test]
    fn grad_check_examples() {
        let r = grad_check(&[1.0, 2.0], &[1.0, 2.0], 1e-4, 1e-8);
        assert_eq!(r.max_rel_err, 0.0);
        assert!(r.passed());
        let r = grad_check(&[1.0], &[1.001], 1e-4, 1e-8);
        assert!((r.max_rel_err - 0.001 / 1.001).abs() < 1e-12);
        assert!((r.max_rel_err - 9.99e-4).abs() < 1e-6);
        assert!(!r.passed());
        assert_eq!(r.worst_param_index, 0);
    }

    #[test]
    fn backward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let z = rand_mat(&mut rng, 9, 3);
        let run = || {
            let mut g = Graph::new();
            let v = g.param(z.clone());
            let c = g.correntropy(v, 1.0, 1e-6).unwrap();
            let l = g.logdet(c).unwrap();
            g.backward(l).unwrap().wrt(v)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn shape_errors_at_construction() {
        let mut g = Graph::new();
        let a = g.constant(Array2::zeros((2, 3)));
        let b = g.constant(Array2::zeros((2, 3)));
        assert!(g.matmul(a, b).is_err());
        let c = g.constant(Array2::zeros((3, 3)));
        assert!(g.add(a, c).is_err());
        assert!(g.backward(a).is_err());
    }
}
