//! Compositional representations `G = g^n ∘ ... ∘ g^1`, their dimension
//! sparsity and complexity, composition-norm intervals, growth functions
//! and implantation of Lipschitz-stable networks.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lip_interp::{self, GridSpec, InterpError, SampledFunction};
use crate::relu_net::{self, compose, parallelize_on, Aabb, GateBuilder, Layer, LayerBuilder, NetError, ReluNetwork};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CompError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Interp(#[from] InterpError),
    #[error("representation is invalid: {0}")]
    Invalid(String),
    #[error("growth function argument {0} outside its domain")]
    Domain(f64),
    #[error("eps must be positive, got {0}")]
    NonPositiveEps(f64),
    #[error("factor {factor}: sampled Lipschitz quotient {sampled} exceeds declared constant {declared}")]
    LipschitzViolation { factor: usize, sampled: f64, declared: f64 },
    #[error("component grid with {nodes} nodes exceeds the limit of {limit}")]
    Infeasible { nodes: usize, limit: usize },
    #[error("cannot implant: {0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, CompError>;

pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Maximum number of grid nodes for a single implanted component.
pub const MAX_COMPONENT_NODES: usize = 4_000_000;

/// One scalar component `g_i` of a factor.
#[derive(Clone)]
pub enum Component {
    /// `x_idx`, weight 0.
    Identity(usize),
    /// `b + Σ w_k x_k`; counts `count` towards the complexity.
    Linear { terms: Vec<(usize, f64)>, bias: f64, count: usize },
    /// `Σ c_k Π_{j∈S_k} x_j`; counts `count`.
    Multilinear { terms: Vec<(f64, Vec<usize>)>, count: usize },
    /// A Lipschitz function of the variables `deps` on `bbox`.
    Function { deps: Vec<usize>, eval: ScalarFn, lip: f64, sup: f64, bbox: Aabb },
}

impl std::fmt::Debug for Component {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Component::Identity(i) => write!(f, "Identity({i})"),
            Component::Linear { terms, bias, count } => write!(f, "Linear({terms:?}, {bias}, count={count})"),
            Component::Multilinear { terms, count } => write!(f, "Multilinear({terms:?}, count={count})"),
            Component::Function { deps, lip, sup, .. } => write!(f, "Function(deps={deps:?}, lip={lip}, sup={sup})"),
        }
    }
}

impl Component {
    pub fn projection(idx: usize) -> Self {
        Component::Linear { terms: vec![(idx, 1.0)], bias: 0.0, count: 1 }
    }

    pub fn function<F>(deps: Vec<usize>, f: F, lip: f64, sup: f64, bbox: Aabb) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Component::Function { deps, eval: Arc::new(f), lip, sup, bbox }
    }

    fn eval(&self, x: &[f64], buf: &mut Vec<f64>) -> f64 {
        match self {
            Component::Identity(i) => x[*i],
            Component::Linear { terms, bias, .. } => bias + terms.iter().map(|(i, w)| w * x[*i]).sum::<f64>(),
            Component::Multilinear { terms, .. } => {
                terms.iter().map(|(c, f)| c * f.iter().map(|i| x[*i]).product::<f64>()).sum()
            }
            Component::Function { deps, eval, .. } => {
                buf.clear();
                buf.extend(deps.iter().map(|i| x[*i]));
                eval(buf)
            }
        }
    }

    /// Variables this component reads.
    pub fn inputs(&self) -> Vec<usize> {
        let mut v: Vec<usize> = match self {
            Component::Identity(i) => vec![*i],
            Component::Linear { terms, .. } => terms.iter().map(|t| t.0).collect(),
            Component::Multilinear { terms, .. } => terms.iter().flat_map(|t| t.1.iter().copied()).collect(),
            Component::Function { deps, .. } => deps.clone(),
        };
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Weighted dimension `s(g_i)`: identity 0, (multi)linear 1, else the
    /// number of dependencies.
    pub fn s_weight(&self) -> usize {
        match self {
            Component::Identity(_) => 0,
            Component::Linear { .. } | Component::Multilinear { .. } => 1,
            Component::Function { deps, .. } => deps.len(),
        }
    }

    /// Contribution to the compositional complexity.
    pub fn count(&self) -> usize {
        match self {
            Component::Identity(_) => 0,
            Component::Linear { count, .. } | Component::Multilinear { count, .. } => *count,
            Component::Function { deps, .. } => deps.len(),
        }
    }

    fn shifted(&self, by: usize) -> Self {
        match self {
            Component::Identity(i) => Component::Identity(i + by),
            Component::Linear { terms, bias, count } => {
                Component::Linear { terms: terms.iter().map(|(i, w)| (i + by, *w)).collect(), bias: *bias, count: *count }
            }
            Component::Multilinear { terms, count } => Component::Multilinear {
                terms: terms.iter().map(|(c, f)| (*c, f.iter().map(|i| i + by).collect())).collect(),
                count: *count,
            },
            Component::Function { deps, eval, lip, sup, bbox } => Component::Function {
                deps: deps.iter().map(|i| i + by).collect(),
                eval: eval.clone(),
                lip: *lip,
                sup: *sup,
                bbox: bbox.clone(),
            },
        }
    }

    fn multilinear_terms(&self) -> Option<Vec<(f64, Vec<usize>)>> {
        match self {
            Component::Identity(i) => Some(vec![(1.0, vec![*i])]),
            Component::Linear { terms, bias, .. } => {
                let mut t: Vec<(f64, Vec<usize>)> = terms.iter().map(|(i, w)| (*w, vec![*i])).collect();
                if *bias != 0.0 {
                    t.push((*bias, vec![]));
                }
                Some(t)
            }
            Component::Multilinear { terms, .. } => Some(terms.clone()),
            Component::Function { .. } => None,
        }
    }
}

/// Kind of a factor, derived from its components.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FactorKind {
    Identity,
    Linear,
    Multilinear,
    Generic,
    Net,
}

/// Norm on the input space of a factor. `Max` is the max norm; `Grouped`
/// uses `max(|x_rest|_∞, Σ_g |x_g|_∞)`, the groups being disjoint index sets.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub enum InputNorm {
    #[default]
    Max,
    Grouped(Vec<Vec<usize>>),
}

impl InputNorm {
    /// Norm of a vector whose entries are all bounded by 1.
    pub fn unit_bound(&self) -> f64 {
        match self {
            InputNorm::Max => 1.0,
            InputNorm::Grouped(groups) => (groups.len() as f64).max(1.0),
        }
    }

    pub fn dist(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            InputNorm::Max => relu_net::max_dist(a, b),
            InputNorm::Grouped(groups) => {
                let mut in_group = vec![false; a.len()];
                let mut sum = 0.0;
                for g in groups {
                    let mut m = 0.0f64;
                    for &i in g {
                        in_group[i] = true;
                        m = m.max((a[i] - b[i]).abs());
                    }
                    sum += m;
                }
                (0..a.len()).filter(|i| !in_group[*i]).map(|i| (a[i] - b[i]).abs()).fold(sum, f64::max)
            }
        }
    }
}

/// One factor `g^j : R^{d_{j-1}} -> R^{d_j}` with a declared max-norm
/// Lipschitz constant.
#[derive(Clone, Debug)]
pub enum Factor {
    Components { in_dim: usize, comps: Vec<Component>, lip: f64, norm: InputNorm },
    Net { net: Arc<ReluNetwork>, lip: f64 },
}

impl Factor {
    pub fn identity(n: usize) -> Self {
        Factor::Components { in_dim: n, comps: (0..n).map(Component::Identity).collect(), lip: 1.0, norm: InputNorm::Max }
    }

    /// `x -> W x + b` with `W` given row-wise; Lipschitz constant is the
    /// max absolute row sum.
    pub fn linear(in_dim: usize, rows: Vec<Vec<(usize, f64)>>, bias: Vec<f64>) -> Self {
        let lip = rows.iter().map(|r| r.iter().map(|t| t.1.abs()).sum::<f64>()).fold(0.0, f64::max);
        let comps = rows
            .into_iter()
            .zip(bias)
            .map(|(terms, bias)| Component::Linear { terms, bias, count: 1 })
            .collect();
        Factor::Components { in_dim, comps, lip, norm: InputNorm::Max }
    }

    pub fn multilinear(in_dim: usize, outputs: Vec<Vec<(f64, Vec<usize>)>>, lip: f64) -> Self {
        let comps = outputs.into_iter().map(|terms| Component::Multilinear { terms, count: 1 }).collect();
        Factor::Components { in_dim, comps, lip, norm: InputNorm::Max }
    }

    pub fn generic(in_dim: usize, comps: Vec<Component>, lip: f64) -> Self {
        Factor::Components { in_dim, comps, lip, norm: InputNorm::Max }
    }

    pub fn net(net: Arc<ReluNetwork>, lip: f64) -> Self {
        Factor::Net { net, lip }
    }

    /// Replaces the norm in which the factor's Lipschitz constant is
    /// measured on its inputs.
    pub fn with_input_norm(mut self, n: InputNorm) -> Self {
        if let Factor::Components { norm, .. } = &mut self {
            *norm = n;
        }
        self
    }

    pub fn input_norm(&self) -> &InputNorm {
        match self {
            Factor::Components { norm, .. } => norm,
            Factor::Net { .. } => &InputNorm::Max,
        }
    }

    pub fn in_dim(&self) -> usize {
        match self {
            Factor::Components { in_dim, .. } => *in_dim,
            Factor::Net { net, .. } => net.in_dim(),
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            Factor::Components { comps, .. } => comps.len(),
            Factor::Net { net, .. } => net.out_dim(),
        }
    }

    pub fn lip(&self) -> f64 {
        match self {
            Factor::Components { lip, .. } | Factor::Net { lip, .. } => *lip,
        }
    }

    pub fn kind(&self) -> FactorKind {
        match self {
            Factor::Net { .. } => FactorKind::Net,
            Factor::Components { comps, .. } => {
                if comps.iter().any(|c| matches!(c, Component::Function { .. })) {
                    FactorKind::Generic
                } else if comps.iter().any(|c| matches!(c, Component::Multilinear { .. })) {
                    FactorKind::Multilinear
                } else if comps.iter().all(|c| matches!(c, Component::Identity(_))) {
                    FactorKind::Identity
                } else {
                    FactorKind::Linear
                }
            }
        }
    }

    /// `s_∞(g^j)`.
    pub fn s_infinity(&self) -> usize {
        match self {
            Factor::Components { comps, .. } => comps.iter().map(Component::s_weight).max().unwrap_or(0),
            Factor::Net { net, .. } => net.output_supports().iter().map(Vec::len).max().unwrap_or(0),
        }
    }

    /// `Σ_i s(g^j_i)`.
    pub fn complexity(&self) -> usize {
        match self {
            Factor::Components { comps, .. } => comps.iter().map(Component::count).sum(),
            Factor::Net { net, .. } => net.output_supports().iter().map(Vec::len).sum(),
        }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Factor::Components { comps, .. } => {
                let mut buf = Vec::new();
                comps.iter().map(|c| c.eval(x, &mut buf)).collect()
            }
            Factor::Net { net, .. } => net.eval(x).expect("factor dimensions validated"),
        }
    }

    fn components(&self) -> Option<&[Component]> {
        match self {
            Factor::Components { comps, .. } => Some(comps),
            Factor::Net { .. } => None,
        }
    }
}

/// Ordered factor list `(g^1, ..., g^n)` representing `g^n ∘ ... ∘ g^1`.
#[derive(Clone, Debug)]
pub struct CompRep {
    factors: Vec<Factor>,
}

impl CompRep {
    /// Validates dimensional compatibility and that the last factor is
    /// finitely parametrized (linear, multilinear, identity or a network).
    pub fn new(factors: Vec<Factor>) -> Result<Self> {
        let last = factors.last().ok_or_else(|| CompError::Invalid("no factors".into()))?;
        for (k, w) in factors.windows(2).enumerate() {
            if w[0].out_dim() != w[1].in_dim() {
                return Err(CompError::Invalid(format!(
                    "factor {} outputs {} values, factor {} expects {}",
                    k + 1,
                    w[0].out_dim(),
                    k + 2,
                    w[1].in_dim()
                )));
            }
        }
        for (k, f) in factors.iter().enumerate() {
            if let Some(comps) = f.components() {
                for c in comps {
                    if c.inputs().iter().any(|i| *i >= f.in_dim()) {
                        return Err(CompError::Invalid(format!("factor {} reads an input out of range", k + 1)));
                    }
                    if let Component::Function { deps, bbox, .. } = c {
                        if bbox.dim() != deps.len() {
                            return Err(CompError::Invalid("function box dimension differs from dependency count".into()));
                        }
                    }
                }
            }
            if let InputNorm::Grouped(groups) = f.input_norm() {
                let mut seen = vec![false; f.in_dim()];
                for &i in groups.iter().flatten() {
                    if i >= f.in_dim() || std::mem::replace(&mut seen[i], true) {
                        return Err(CompError::Invalid(format!("factor {} has overlapping or out-of-range norm groups", k + 1)));
                    }
                }
            }
            if !(f.lip() >= 0.0) || !f.lip().is_finite() {
                return Err(CompError::Invalid(format!("factor {} lacks a finite Lipschitz constant", k + 1)));
            }
        }
        if last.kind() == FactorKind::Generic {
            return Err(CompError::Invalid("last factor must be linear or multilinear".into()));
        }
        Ok(Self { factors })
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn depth(&self) -> usize {
        self.factors.len()
    }

    pub fn in_dim(&self) -> usize {
        self.factors[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.factors.last().expect("nonempty").out_dim()
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.factors.iter().fold(x.to_vec(), |z, f| f.eval(&z))
    }

    /// All intermediate values `z_0 = x, z_j = g^j(z_{j-1})`.
    pub fn trace(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut out = vec![x.to_vec()];
        for f in &self.factors {
            let z = f.eval(out.last().expect("nonempty"));
            out.push(z);
        }
        out
    }
}

/// Descriptor of one component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentDoc {
    pub kind: String,
    pub deps: Vec<usize>,
    pub s: usize,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorDoc {
    pub kind: FactorKind,
    pub in_dim: usize,
    pub out_dim: usize,
    pub lip: f64,
    pub components: Vec<ComponentDoc>,
}

/// Structural description of a [`CompRep`]; evaluators are not serialized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepDoc {
    pub factors: Vec<FactorDoc>,
    pub s_infinity: usize,
    pub complexity: usize,
}

impl CompRep {
    pub fn describe(&self) -> RepDoc {
        let factors = self
            .factors
            .iter()
            .map(|f| {
                let components = match f {
                    Factor::Components { comps, .. } => comps
                        .iter()
                        .map(|c| ComponentDoc {
                            kind: match c {
                                Component::Identity(_) => "identity",
                                Component::Linear { .. } => "linear",
                                Component::Multilinear { .. } => "multilinear",
                                Component::Function { .. } => "function",
                            }
                            .into(),
                            deps: c.inputs(),
                            s: c.s_weight(),
                            count: c.count(),
                        })
                        .collect(),
                    Factor::Net { net, .. } => net
                        .output_supports()
                        .into_iter()
                        .map(|deps| ComponentDoc { kind: "net".into(), s: deps.len(), count: deps.len(), deps })
                        .collect(),
                };
                FactorDoc { kind: f.kind(), in_dim: f.in_dim(), out_dim: f.out_dim(), lip: f.lip(), components }
            })
            .collect();
        RepDoc { factors, s_infinity: s_infinity(self), complexity: complexity(self) }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.describe()).expect("descriptor serializes")
    }
}

/// Depth-two representation of an affine parametric field
/// `a(x, y) = Σ_j y_j ω_j a°_j(x)` at a fixed time. Inputs are
/// `(x_1..x_m, y_1..y_dy)`; `comps[j*m + i]` is the `i`-th coordinate of
/// `a°_j`, bounded by `a0_sup` with Lipschitz constant `lam`. The first factor
/// outputs `y` and `ω_j a°_j / κ` with `κ = Λ|ω|₁`, the second factor is
/// `κ Σ_j y_j r^j`. With the `a_j` block measured in the grouped norm the
/// factor constants are `1` and `a_bound + κ`.
pub fn affine_field_rep(
    x_box: &Aabb,
    omega: &[f64],
    comps: Vec<ScalarFn>,
    a0_sup: f64,
    lam: f64,
    a_bound: f64,
) -> Result<CompRep> {
    let m = x_box.dim();
    let dy = omega.len();
    if comps.len() != m * dy {
        return Err(CompError::Invalid(format!("need {} field components, got {}", m * dy, comps.len())));
    }
    let w1: f64 = omega.iter().map(|w| w.abs()).sum();
    let kappa = if lam * w1 > 0.0 { lam * w1 } else { 1.0 };
    let mut g1: Vec<Component> = (0..dy).map(|j| Component::projection(m + j)).collect();
    for (k, f) in comps.into_iter().enumerate() {
        let c = omega[k / m] / kappa;
        g1.push(Component::Function {
            deps: (0..m).collect(),
            eval: Arc::new(move |x: &[f64]| c * f(x)),
            lip: c.abs() * lam,
            sup: c.abs() * a0_sup,
            bbox: x_box.clone(),
        });
    }
    let g1 = Factor::generic(m + dy, g1, 1.0);
    let outputs = (0..m)
        .map(|i| (0..dy).map(|j| (kappa, vec![j, dy + j * m + i])).collect())
        .collect();
    let groups = (0..dy).map(|j| (dy + j * m..dy + (j + 1) * m).collect()).collect();
    let g2 = Factor::multilinear(dy + dy * m, outputs, a_bound + lam * w1).with_input_norm(InputNorm::Grouped(groups));
    CompRep::new(vec![g1, g2])
}

/// `s_∞` of a representation: maximum over non-final factors, or the single
/// factor's weight when there is only one.
pub fn s_infinity(rep: &CompRep) -> usize {
    let n = rep.factors.len();
    if n == 1 {
        return rep.factors[0].s_infinity();
    }
    rep.factors[..n - 1].iter().map(Factor::s_infinity).max().unwrap_or(0)
}

/// Compositional complexity `𝔑 = Σ_j Σ_i s(g^j_i)`.
pub fn complexity(rep: &CompRep) -> usize {
    rep.factors.iter().map(Factor::complexity).sum()
}

/// Representation of `outer ∘ inner`.
pub fn compose_reps(outer: &CompRep, inner: &CompRep) -> Result<CompRep> {
    let mut f = inner.factors.clone();
    f.extend(outer.factors.iter().cloned());
    CompRep::new(f)
}

/// Representation of `a + b` by parallel factors, padding the shorter one
/// with identity factors; the final components are merged and keep the
/// sum of their counts.
pub fn sum_reps(a: &CompRep, b: &CompRep) -> Result<CompRep> {
    if a.in_dim() != b.in_dim() || a.out_dim() != b.out_dim() {
        return Err(CompError::Invalid("sum of representations needs equal dimensions".into()));
    }
    let padded = |r: &CompRep, n: usize| -> Result<Vec<Vec<Component>>> {
        let mut out = Vec::new();
        for f in &r.factors[..r.factors.len() - 1] {
            out.push(f.components().map(<[Component]>::to_vec).ok_or_else(|| {
                CompError::Unsupported("sum_reps needs component factors".into())
            })?);
        }
        let width = r.factors[r.factors.len() - 1].in_dim();
        while out.len() < n - 1 {
            out.push((0..width).map(Component::Identity).collect());
        }
        out.push(
            r.factors
                .last()
                .and_then(Factor::components)
                .ok_or_else(|| CompError::Unsupported("sum_reps needs component factors".into()))?
                .to_vec(),
        );
        Ok(out)
    };
    let n = a.depth().max(b.depth());
    let fa = padded(a, n)?;
    let fb = padded(b, n)?;
    let lips = |r: &CompRep, j: usize| -> f64 {
        let d = r.depth();
        if j + 1 == n {
            r.factors[d - 1].lip()
        } else if j < d - 1 {
            r.factors[j].lip()
        } else {
            1.0
        }
    };
    let mut factors = Vec::with_capacity(n);
    let mut wa = a.in_dim();
    let mut in_dim = a.in_dim();
    for j in 0..n {
        let lip = lips(a, j).max(lips(b, j));
        if j + 1 < n {
            let shift = if j == 0 { 0 } else { wa };
            let mut comps = fa[j].clone();
            comps.extend(fb[j].iter().map(|c| c.shifted(shift)));
            let out_a = fa[j].len();
            factors.push(Factor::generic(in_dim, comps.clone(), lip));
            in_dim = comps.len();
            wa = out_a;
        } else {
            let shift = if j == 0 { 0 } else { wa };
            let mut comps = Vec::new();
            for (ca, cb) in fa[j].iter().zip(&fb[j]) {
                let cb = cb.shifted(shift);
                let count = ca.count().max(1) + cb.count().max(1);
                let merged = match (ca, &cb) {
                    (Component::Linear { terms: t1, bias: b1, .. }, Component::Linear { terms: t2, bias: b2, .. }) => {
                        let mut terms = t1.clone();
                        terms.extend(t2.iter().copied());
                        Component::Linear { terms, bias: b1 + b2, count }
                    }
                    _ => {
                        let mut terms = ca.multilinear_terms().expect("final factor is not generic");
                        terms.extend(cb.multilinear_terms().expect("final factor is not generic"));
                        Component::Multilinear { terms, count }
                    }
                };
                comps.push(merged);
            }
            factors.push(Factor::generic(in_dim, comps, lips(a, j) + lips(b, j)));
        }
    }
    CompRep::new(factors)
}

/// Which regularizer to bound.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regularizer {
    /// Factor constants and all trailing partial compositions.
    LipFull,
    /// Factor constants only.
    LipFactors,
}

/// Sampled and certified bounds for one partial composition
/// `L_{[n,k]} = Lip(g^n ∘ ... ∘ g^k)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartialBound {
    pub k: usize,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormInterval {
    pub lower: f64,
    pub upper: f64,
    pub factor_lower: Vec<f64>,
    pub partials: Vec<PartialBound>,
}

/// Interval for the regularizer of `rep` on `bbox`: the upper bound uses
/// declared factor constants and products, the lower bound sampled
/// difference quotients of pushed-forward pairs.
pub fn comp_norm_interval(rep: &CompRep, reg: Regularizer, bbox: &Aabb, n_samples: usize, seed: u64) -> Result<NormInterval> {
    if bbox.dim() != rep.in_dim() {
        return Err(NetError::DimensionMismatch { expected: rep.in_dim(), got: bbox.dim() }.into());
    }
    if bbox.is_degenerate() {
        return Err(NetError::DegenerateBox.into());
    }
    let n = rep.depth();
    let lips: Vec<f64> = rep.factors.iter().map(Factor::lip).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut factor_lower = vec![0.0f64; n];
    // partial_lower[k-1] for k = 1..=n
    let mut partial_lower = vec![0.0f64; n];
    for s in 0..n_samples {
        let (x, xp) = relu_net::sample_pair(bbox, s, &mut rng);
        let ta = rep.trace(&x);
        let tb = rep.trace(&xp);
        let dist = |j: usize, a: &[f64], b: &[f64]| {
            if j < n {
                rep.factors[j].input_norm().dist(a, b)
            } else {
                relu_net::max_dist(a, b)
            }
        };
        let out = dist(n, &ta[n], &tb[n]);
        for j in 0..n {
            let d = dist(j, &ta[j], &tb[j]);
            if d > 0.0 {
                let quot = dist(j + 1, &ta[j + 1], &tb[j + 1]) / d;
                // rounding of the output difference relative to d
                let mag = ta[j + 1].iter().chain(&tb[j + 1]).fold(0.0f64, |m, v| m.max(v.abs()));
                let slack = 1e-9 * lips[j] + 1e-12 + 64.0 * f64::EPSILON * mag / d;
                if quot > lips[j] + slack {
                    return Err(CompError::LipschitzViolation { factor: j + 1, sampled: quot, declared: lips[j] });
                }
                factor_lower[j] = factor_lower[j].max(quot);
                partial_lower[j] = partial_lower[j].max(out / d);
            }
        }
    }
    for j in 0..n {
        factor_lower[j] = factor_lower[j].min(lips[j]);
    }
    let partial_upper = |k: usize| lips[k - 1..].iter().product::<f64>();
    let partials: Vec<PartialBound> = (1..=n)
        .map(|k| PartialBound { k, lower: partial_lower[k - 1].min(partial_upper(k)), upper: partial_upper(k) })
        .collect();
    let max_factor_upper = lips.iter().copied().fold(0.0, f64::max);
    let max_factor_lower = factor_lower.iter().copied().fold(0.0, f64::max);
    let (lower, upper) = match reg {
        Regularizer::LipFactors => (max_factor_lower, max_factor_upper),
        Regularizer::LipFull => {
            let up = partials.iter().filter(|p| p.k >= 2).map(|p| p.upper).fold(max_factor_upper, f64::max);
            let lo = partials.iter().filter(|p| p.k >= 2).map(|p| p.lower).fold(max_factor_lower, f64::max);
            (lo, up)
        }
    };
    Ok(NormInterval { lower, upper, factor_lower, partials })
}

/// Rate law `γ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum GrowthFunction {
    /// `γ(r) = c r^alpha`
    Alg { c: f64, alpha: f64 },
    /// `γ(r) = c e^{alpha r}`
    Exp { c: f64, alpha: f64 },
}

impl GrowthFunction {
    pub fn eval(&self, r: f64) -> f64 {
        match *self {
            GrowthFunction::Alg { c, alpha } => c * r.powf(alpha),
            GrowthFunction::Exp { c, alpha } => c * (alpha * r).exp(),
        }
    }

    pub fn inverse(&self, s: f64) -> Result<f64> {
        gamma_inverse(self, s)
    }
}

/// Exact inverse of `γ`.
pub fn gamma_inverse(gf: &GrowthFunction, s: f64) -> Result<f64> {
    if !(s > 0.0) {
        return Err(CompError::Domain(s));
    }
    match *gf {
        GrowthFunction::Alg { c, alpha } => {
            if !(c > 0.0 && alpha > 0.0) {
                return Err(CompError::Domain(s));
            }
            Ok((s / c).powf(1.0 / alpha))
        }
        GrowthFunction::Exp { c, alpha } => {
            if !(c > 0.0 && alpha > 0.0) || s <= c {
                return Err(CompError::Domain(s));
            }
            Ok((s / c).ln() / alpha)
        }
    }
}

/// Ceiling that ignores floating-point noise just above an integer.
pub fn robust_ceil(x: f64) -> f64 {
    (x - 1e-9 * x.abs().max(1.0)).ceil()
}

/// `N_ε = ⌈γ^{-1}(|v| / ε)⌉`.
pub fn n_epsilon(gf: &GrowthFunction, seminorm: f64, eps: f64) -> Result<usize> {
    if !(eps > 0.0) {
        return Err(CompError::NonPositiveEps(eps));
    }
    Ok(robust_ceil(gamma_inverse(gf, seminorm / eps)?).max(1.0) as usize)
}

/// Near-inverse of `φ(s) = b1 s^ζ |log2(b2 s)|^β`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NearInverse {
    pub b1: f64,
    pub b2: f64,
    pub zeta: f64,
    pub beta: f64,
}

impl NearInverse {
    pub fn eval(&self, r: f64) -> f64 {
        let NearInverse { b1, b2, zeta, beta } = *self;
        b1.powf(-1.0 / zeta) * zeta.powf(beta / zeta) * r.powf(1.0 / zeta) * (b2.powf(zeta) * r / b1).log2().abs().powf(-beta / zeta)
    }

    /// The forward map `φ`.
    pub fn phi(&self, s: f64) -> f64 {
        self.b1 * s.powf(self.zeta) * (self.b2 * s).log2().abs().powf(self.beta)
    }
}

pub fn near_inverse(b1: f64, b2: f64, zeta: f64, beta: f64) -> Result<NearInverse> {
    if !(b1 > 0.0 && b2 > 0.0 && zeta > 0.0) || !beta.is_finite() {
        return Err(CompError::Domain(zeta));
    }
    Ok(NearInverse { b1, b2, zeta, beta })
}

/// Upper estimate `max_N γ(N) (err_N + γ(N)^{-1} norm_N)` of the
/// approximation-class seminorm over the given approximants.
pub fn aclass_seminorm_upper(samples: &[(usize, f64, f64)], gf: &GrowthFunction) -> Result<f64> {
    if samples.is_empty() {
        return Err(CompError::Invalid("no samples".into()));
    }
    Ok(samples
        .iter()
        .map(|(n, err, norm)| {
            let g = gf.eval(*n as f64);
            g * err + norm
        })
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Result of [`implant`].
#[derive(Clone, Debug)]
pub struct Implanted {
    pub net: ReluNetwork,
    pub error_bound: f64,
    /// Networks replacing each factor, in order.
    pub factor_nets: Vec<ReluNetwork>,
}

/// Replaces each function component of factor `j` by a `deltas[j]`-accurate
/// Lipschitz-stable network; (multi)linear and identity components are
/// realized exactly. Component boxes are inflated by the accumulated
/// upstream error bound.
pub fn implant(rep: &CompRep, deltas: &[f64]) -> Result<Implanted> {
    if deltas.len() != rep.depth() {
        return Err(CompError::Invalid(format!("need {} tolerances, got {}", rep.depth(), deltas.len())));
    }
    let mut upstream = 0.0f64;
    let mut factor_nets = Vec::with_capacity(rep.depth());
    let n = rep.depth();
    for (j, f) in rep.factors.iter().enumerate() {
        let (net, exact) = factor_net(f, deltas[j], upstream)?;
        let scale = if j + 1 < n { rep.factors[j + 1].input_norm().unit_bound() } else { 1.0 };
        upstream = f.lip() * upstream + if exact { 0.0 } else { scale * deltas[j] };
        factor_nets.push(net);
    }
    let mut net = factor_nets[0].clone();
    for fnet in &factor_nets[1..] {
        net = compose(fnet, &net)?;
    }
    Ok(Implanted { net, error_bound: upstream, factor_nets })
}

fn gate_net(in_dim: usize, comps: &[Component]) -> Result<ReluNetwork> {
    let mut g = GateBuilder::new(in_dim);
    for c in comps {
        for (coef, f) in c.multilinear_terms().expect("no function components") {
            g.term(coef, &f);
        }
        g.end_output();
    }
    Ok(ReluNetwork::new(vec![Layer::Gate(g.finish()?)])?)
}

fn linear_net(in_dim: usize, comps: &[Component]) -> Result<ReluNetwork> {
    let mut b = LayerBuilder::new(in_dim);
    for c in comps {
        match c {
            Component::Identity(i) => b.push_row([(*i, 1.0)], 0.0),
            Component::Linear { terms, bias, .. } => b.push_row(terms.iter().copied(), *bias),
            _ => unreachable!("linear factor"),
        }
    }
    Ok(ReluNetwork::new(vec![Layer::Affine(b.finish(relu_net::Activation::Identity)?)])?)
}

/// Network for one function component on its box inflated by `pad`.
pub fn implant_component(comp: &Component, delta: f64, pad: f64) -> Result<ReluNetwork> {
    let Component::Function { eval, lip, sup, bbox, .. } = comp else {
        return Err(CompError::Unsupported("only function components are interpolated".into()));
    };
    let bbox = bbox.inflate(pad);
    let s = bbox.dim();
    let q = lip_interp::required_q(&GridSpec::new(1, bbox.clone())?, *lip, delta);
    let nodes = (q + 1).checked_pow(s as u32).unwrap_or(usize::MAX);
    if nodes > MAX_COMPONENT_NODES {
        return Err(CompError::Infeasible { nodes, limit: MAX_COMPONENT_NODES });
    }
    let e = eval.clone();
    let sf = SampledFunction::from_fn(GridSpec::new(q, bbox)?, move |x| e(x), *lip, *sup)?;
    Ok(lip_interp::lip_stable_net(&sf, delta)?.net)
}

fn factor_net(f: &Factor, delta: f64, pad: f64) -> Result<(ReluNetwork, bool)> {
    let (in_dim, comps) = match f {
        Factor::Net { net, .. } => return Ok(((**net).clone(), true)),
        Factor::Components { in_dim, comps, .. } => (*in_dim, comps),
    };
    match f.kind() {
        FactorKind::Identity | FactorKind::Linear => Ok((linear_net(in_dim, comps)?, true)),
        FactorKind::Multilinear => Ok((gate_net(in_dim, comps)?, true)),
        FactorKind::Net => unreachable!(),
        FactorKind::Generic => {
            if comps.iter().any(|c| matches!(c, Component::Multilinear { .. })) {
                return Err(CompError::Unsupported("factor mixes multilinear and function components".into()));
            }
            let mut nets = Vec::with_capacity(comps.len());
            let mut inputs = Vec::with_capacity(comps.len());
            for c in comps {
                match c {
                    Component::Function { deps, .. } => {
                        nets.push(implant_component(c, delta, pad)?);
                        inputs.push(deps.clone());
                    }
                    _ => {
                        let idx = c.inputs();
                        let local: Vec<Component> = vec![match c {
                            Component::Identity(_) => Component::Identity(0),
                            Component::Linear { terms, bias, count } => Component::Linear {
                                terms: terms.iter().map(|(i, w)| (idx.binary_search(i).expect("own input"), *w)).collect(),
                                bias: *bias,
                                count: *count,
                            },
                            _ => unreachable!(),
                        }];
                        let dim = idx.len().max(1);
                        nets.push(linear_net(dim, &local)?);
                        inputs.push(if idx.is_empty() { vec![0] } else { idx });
                    }
                }
            }
            let parts: Vec<(&ReluNetwork, &[usize])> = nets.iter().zip(&inputs).map(|(n, i)| (n, i.as_slice())).collect();
            Ok((parallelize_on(in_dim, &parts)?, false))
        }
    }
}

/// Outcome of [`implant_for_accuracy`].
#[derive(Clone, Debug)]
pub struct AccuracyBuild {
    pub net: ReluNetwork,
    pub n_eps: usize,
    pub delta: f64,
    /// `γ(N_ε)^{-1}|v|`, bound for the representation error.
    pub approx_bound: f64,
    pub implant_bound: f64,
    pub size: usize,
    /// Shape `(‖v‖/ε)^s γ^{-1}(2|v|/ε)^{s+1} |log2 γ^{-1}(2|v|/ε)|`.
    pub predicted: f64,
}

/// Picks `N_ε` for target `ε/2`, implants `G_{N_ε}` with the uniform
/// tolerance `δ(ε) = ε / (2‖v‖ γ^{-1}(2|v|/ε))`.
pub fn implant_for_accuracy(
    rep_family: &dyn Fn(usize) -> Result<CompRep>,
    gf: &GrowthFunction,
    norm: f64,
    seminorm: f64,
    eps: f64,
) -> Result<AccuracyBuild> {
    if !(eps > 0.0) {
        return Err(CompError::NonPositiveEps(eps));
    }
    let ginv = gamma_inverse(gf, 2.0 * seminorm / eps)?;
    let n_eps = robust_ceil(ginv).max(1.0) as usize;
    let delta = (eps / (2.0 * norm.max(1.0) * ginv.max(1.0))).min(0.5);
    let rep = rep_family(n_eps)?;
    let imp = implant(&rep, &vec![delta; rep.depth()])?;
    let s = s_infinity(&rep).max(1) as i32;
    let predicted = (norm / eps).powi(s) * ginv.powi(s + 1) * ginv.log2().abs().max(1.0);
    Ok(AccuracyBuild {
        size: imp.net.size(),
        net: imp.net,
        n_eps,
        delta,
        approx_bound: seminorm / gf.eval(n_eps as f64),
        implant_bound: imp.error_bound,
        predicted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_inverse_examples() {
        let alg = GrowthFunction::Alg { c: 1.0, alpha: 2.0 };
        assert!((gamma_inverse(&alg, 9.0).unwrap() - 3.0).abs() < 1e-12);
        let ex = GrowthFunction::Exp { c: 1.0, alpha: 1.0 };
        assert!((gamma_inverse(&ex, std::f64::consts::E).unwrap() - 1.0).abs() < 1e-12);
        let alg = GrowthFunction::Alg { c: 2.0, alpha: 0.5 };
        assert!((gamma_inverse(&alg, 8.0).unwrap() - 16.0).abs() < 1e-9);
        assert!(gamma_inverse(&ex, 0.5).is_err());
        assert!(gamma_inverse(&ex, -1.0).is_err());
    }

    #[test]
    fn n_epsilon_examples() {
        assert_eq!(n_epsilon(&GrowthFunction::Alg { c: 1.0, alpha: 1.0 }, 1.0, 0.1).unwrap(), 10);
        let e2 = std::f64::consts::E.powi(2);
        assert_eq!(n_epsilon(&GrowthFunction::Exp { c: 1.0, alpha: 1.0 }, e2, 1.0).unwrap(), 2);
        assert_eq!(n_epsilon(&GrowthFunction::Alg { c: 2.0, alpha: 2.0 }, 8.0, 0.5).unwrap(), 3);
        assert!(n_epsilon(&GrowthFunction::Alg { c: 1.0, alpha: 1.0 }, 1.0, 0.0).is_err());
    }

    #[test]
    fn near_inverse_square_root() {
        let ni = near_inverse(1.0, 1.0, 2.0, 0.0).unwrap();
        assert!((ni.eval(25.0) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn seminorm_examples() {
        let gf = GrowthFunction::Alg { c: 1.0, alpha: 1.0 };
        assert_eq!(aclass_seminorm_upper(&[(1, 0.0, 1.0)], &gf).unwrap(), 1.0);
        let samples: Vec<(usize, f64, f64)> = (1..20).map(|n| (n, 1.0 / n as f64, 1.0)).collect();
        assert!((aclass_seminorm_upper(&samples, &gf).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn single_linear_factor() {
        let rep = CompRep::new(vec![Factor::linear(2, vec![vec![(0, 2.0), (1, 1.0)]], vec![0.0])]).unwrap();
        assert_eq!(s_infinity(&rep), 1);
        let id = CompRep::new(vec![Factor::identity(3)]).unwrap();
        assert_eq!(s_infinity(&id), 0);
        assert_eq!(complexity(&id), 0);
    }
}
