//! Hat functions, product networks and Lipschitz-stable interpolation networks.
//!
//! Boxes are mapped to the unit cube; grids have `q` cells per axis and
//! nodes `i*h`, `h = 1/q`.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::relu_net::{
    self, compose, parallelize, parallelize_on, Aabb, Activation, AffineLayer, CompiledNet, LayerBuilder, NetError,
    ReluNetwork,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InterpError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("delta must lie in (0, 1), got {0}")]
    DeltaOutOfRange(f64),
    #[error("grid too coarse: q = {have} cells per axis, at least {required} required")]
    GridTooCoarse { have: usize, required: usize },
    #[error("sampled values violate the declared {what} bound")]
    BoundViolation { what: &'static str },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
}

pub type Result<T> = std::result::Result<T, InterpError>;

/// Uniform tensor grid with `q` cells per axis on `bbox`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dim: usize,
    pub q: usize,
    pub bbox: Aabb,
}

impl GridSpec {
    pub fn new(q: usize, bbox: Aabb) -> Result<Self> {
        if q == 0 {
            return Err(InterpError::InvalidGrid("q must be positive".into()));
        }
        if bbox.is_degenerate() {
            return Err(NetError::DegenerateBox.into());
        }
        Ok(Self { dim: bbox.dim(), q, bbox })
    }

    pub fn unit(dim: usize, q: usize) -> Result<Self> {
        Self::new(q, Aabb::unit(dim))
    }

    pub fn h(&self) -> f64 {
        1.0 / self.q as f64
    }

    pub fn node_count(&self) -> usize {
        (self.q + 1).pow(self.dim as u32)
    }

    /// Multi-index of flat node `k` (first coordinate fastest).
    pub fn index(&self, mut k: usize) -> Vec<usize> {
        let n = self.q + 1;
        (0..self.dim)
            .map(|_| {
                let i = k % n;
                k /= n;
                i
            })
            .collect()
    }

    pub fn flat(&self, idx: &[usize]) -> usize {
        idx.iter().rev().fold(0, |acc, i| acc * (self.q + 1) + i)
    }

    /// Coordinates of a node in the original box.
    pub fn node(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter()
            .enumerate()
            .map(|(j, i)| {
                if *i == self.q {
                    self.bbox.hi[j]
                } else {
                    self.bbox.lo[j] + self.bbox.width(j) * (*i as f64) / self.q as f64
                }
            })
            .collect()
    }

    /// Maps a point of the box to unit-cube coordinates.
    pub fn to_unit(&self, x: &[f64]) -> Vec<f64> {
        x.iter().enumerate().map(|(j, v)| (v - self.bbox.lo[j]) / self.bbox.width(j)).collect()
    }

    /// Max-norm Lipschitz constant in unit coordinates for a function with
    /// constant `lip` in box coordinates.
    pub fn unit_lip(&self, lip: f64) -> f64 {
        lip * self.bbox.max_width()
    }
}

pub type SourceFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Values of a function at all grid nodes with declared bounds.
#[derive(Clone)]
pub struct SampledFunction {
    pub grid: GridSpec,
    pub values: Vec<f64>,
    pub lip_bound: f64,
    pub sup_bound: f64,
    pub source: Option<SourceFn>,
}

impl std::fmt::Debug for SampledFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SampledFunction")
            .field("grid", &self.grid)
            .field("values", &self.values.len())
            .field("lip_bound", &self.lip_bound)
            .field("sup_bound", &self.sup_bound)
            .finish()
    }
}

impl SampledFunction {
    pub fn new(grid: GridSpec, values: Vec<f64>, lip_bound: f64, sup_bound: f64) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(NetError::DimensionMismatch { expected: grid.node_count(), got: values.len() }.into());
        }
        let sf = Self { grid, values, lip_bound, sup_bound, source: None };
        sf.check_bounds(0x5eed)?;
        Ok(sf)
    }

    pub fn from_fn<F>(grid: GridSpec, f: F, lip_bound: f64, sup_bound: f64) -> Result<Self>
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        let values = (0..grid.node_count()).map(|k| f(&grid.node(&grid.index(k)))).collect();
        let mut sf = Self::new(grid, values, lip_bound, sup_bound)?;
        sf.source = Some(Arc::new(f));
        Ok(sf)
    }

    /// Checks the sup bound on all nodes and the Lipschitz bound on random
    /// node pairs.
    pub fn check_bounds(&self, seed: u64) -> Result<()> {
        let tol = 1e-12 * (1.0 + self.sup_bound);
        if self.values.iter().any(|v| !v.is_finite() || v.abs() > self.sup_bound + tol) {
            return Err(InterpError::BoundViolation { what: "sup" });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.values.len();
        for _ in 0..n.min(2000) {
            let a = rng.gen_range(0..n);
            let b = rng.gen_range(0..n);
            let (xa, xb) = (self.grid.node(&self.grid.index(a)), self.grid.node(&self.grid.index(b)));
            let d = max_dist(&xa, &xb);
            if (self.values[a] - self.values[b]).abs() > self.lip_bound * d * (1.0 + 1e-9) + tol {
                return Err(InterpError::BoundViolation { what: "Lipschitz" });
            }
        }
        Ok(())
    }

    /// Direct evaluation of the multilinear interpolant `g_h`.
    pub fn interpolant(&self, x: &[f64]) -> f64 {
        let u = self.grid.to_unit(x);
        let q = self.grid.q;
        let s = self.grid.dim;
        let mut base = Vec::with_capacity(s);
        let mut frac = Vec::with_capacity(s);
        for v in &u {
            let t = (v * q as f64).clamp(0.0, q as f64);
            let i = (t.floor() as usize).min(q.saturating_sub(1));
            base.push(i);
            frac.push(t - i as f64);
        }
        let mut total = 0.0;
        let mut idx = vec![0; s];
        for corner in 0..(1usize << s) {
            let mut w = 1.0;
            for j in 0..s {
                let bit = (corner >> j) & 1;
                idx[j] = base[j] + bit;
                w *= if bit == 1 { frac[j] } else { 1.0 - frac[j] };
            }
            if w != 0.0 {
                total += w * self.values[self.grid.flat(&idx)];
            }
        }
        total
    }
}

fn max_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Calibrated constants of the interpolation construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// size <= c1 * Lip^s * delta^-s * log2(1/delta)
    pub c1: f64,
    /// depth <= c2 * log2(1/delta)
    pub c2: f64,
    /// Lip(net) <= c3 * (1 + sup) * Lip
    pub c3: f64,
}

impl Default for Calibration {
    fn default() -> Self {
        Self { c1: 512.0, c2: 4.0, c3: 1.0 }
    }
}

/// Interpolation constant: `|g - g_h| <= C h Lip` in the max norm.
pub fn interp_constant(s: usize) -> f64 {
    if s == 1 {
        0.5
    } else {
        1.0
    }
}

/// Inner product-network tolerance factor `c* = 1/(2 * max #active nodes)`.
pub fn c_star(s: usize) -> f64 {
    1.0 / (2.0 * (1u64 << s) as f64)
}

/// One neuron `c * σ(w x + b)` of a univariate hat sum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HatTerm {
    pub w: f64,
    pub b: f64,
    pub c: f64,
}

/// Neurons realizing the piecewise-linear interpolant of `values` on the
/// uniform grid over `[lo, hi]` (`values.len() - 1` cells). Neurons with a
/// zero output coefficient are omitted.
pub fn hat_sum_terms(lo: f64, hi: f64, values: &[f64]) -> Vec<HatTerm> {
    let q = values.len() - 1;
    let h = (hi - lo) / q as f64;
    let w = 1.0 / h;
    let b0 = -lo / h;
    let g = |k: i64| if k < 0 || k > q as i64 { 0.0 } else { values[k as usize] };
    (-1..=(q as i64 + 1))
        .filter_map(|k| {
            let c = g(k + 1) - 2.0 * g(k) + g(k - 1);
            (c != 0.0).then(|| HatTerm { w, b: b0 - k as f64, c })
        })
        .collect()
}

fn hat_sum_net(lo: f64, hi: f64, values: &[f64]) -> std::result::Result<ReluNetwork, NetError> {
    let terms = hat_sum_terms(lo, hi, values);
    let mut l1 = LayerBuilder::with_capacity(1, terms.len(), terms.len());
    for t in &terms {
        l1.push_row([(0, t.w)], t.b);
    }
    let mut l2 = LayerBuilder::new(terms.len());
    l2.push_row(terms.iter().enumerate().map(|(k, t)| (k, t.c)), 0.0);
    ReluNetwork::from_affine(vec![l1.finish(Activation::Relu)?, l2.finish(Activation::Identity)?])
}

/// Exact network for `φ(x/h − i)`, `φ(x) = (1 − |x|)_+`.
pub fn hat1d(h: f64, i: i64) -> Result<ReluNetwork> {
    if !(h > 0.0) {
        return Err(NetError::InvalidArgument("h must be positive".into()).into());
    }
    let b0 = 0.0;
    let mut l1 = LayerBuilder::new(1);
    for k in [i - 1, i, i + 1] {
        l1.push_row([(0, 1.0 / h)], b0 - k as f64);
    }
    let mut l2 = LayerBuilder::new(3);
    l2.push_row([(0, 1.0), (1, -2.0), (2, 1.0)], 0.0);
    Ok(ReluNetwork::from_affine(vec![l1.finish(Activation::Relu)?, l2.finish(Activation::Identity)?])?)
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(InterpError::DeltaOutOfRange(delta))
    }
}

/// Number of sawtooth teeth used for squaring at tolerance `delta`.
pub fn square_teeth(delta: f64) -> usize {
    ((1.0 / delta).log2().ceil() as usize + 1).max(1)
}

/// Clamped two-input product on `[0,1]^2` with `r` sawtooth teeth:
/// `xy = 2 sq((x+y)/2) − sq(x)/2 − sq(y)/2`.
fn pair_product(r: usize) -> std::result::Result<ReluNetwork, NetError> {
    let mut layers = Vec::with_capacity(r + 2);
    let mut l0 = LayerBuilder::new(2);
    l0.push_row([(0, 1.0)], 0.0);
    l0.push_row([(0, 1.0)], -1.0);
    l0.push_row([(1, 1.0)], 0.0);
    l0.push_row([(1, 1.0)], -1.0);
    layers.push(l0.finish(Activation::Relu)?);
    // chain inputs in terms of the clamp neurons
    let inputs: [Vec<(usize, f64)>; 3] = [
        vec![(0, 0.5), (1, -0.5), (2, 0.5), (3, -0.5)],
        vec![(0, 1.0), (1, -1.0)],
        vec![(2, 1.0), (3, -1.0)],
    ];
    // layer 1: A, B per chain
    let mut l1 = LayerBuilder::new(4);
    for u in &inputs {
        l1.push_row(u.iter().copied(), 0.0);
        l1.push_row(u.iter().copied(), -0.5);
    }
    layers.push(l1.finish(Activation::Relu)?);
    // layout of layer k >= 2: per chain [A, B, acc]; layer 1: [A, B]
    let stride = |k: usize| if k == 1 { 2 } else { 3 };
    for k in 2..=r {
        let s = stride(k - 1);
        let mut b = LayerBuilder::new(3 * s);
        let scale = 0.25f64.powi(k as i32 - 1);
        for c in 0..3 {
            let (a, bb) = (c * s, c * s + 1);
            b.push_row([(a, 2.0), (bb, -4.0)], 0.0);
            b.push_row([(a, 2.0), (bb, -4.0)], -0.5);
            let acc = if k == 2 { a } else { c * s + 2 };
            b.push_row([(acc, 1.0), (a, -2.0 * scale), (bb, 4.0 * scale)], 0.0);
        }
        layers.push(b.finish(Activation::Relu)?);
    }
    let s = stride(r);
    let scale = 0.25f64.powi(r as i32);
    let mut out = LayerBuilder::new(3 * s);
    let mut row = Vec::new();
    for (c, coef) in [2.0, -0.5, -0.5].into_iter().enumerate() {
        let (a, bb) = (c * s, c * s + 1);
        let acc = if r == 1 { a } else { c * s + 2 };
        row.push((acc, coef));
        row.push((a, -2.0 * scale * coef));
        row.push((bb, 4.0 * scale * coef));
    }
    out.push_row(row, 0.0);
    layers.push(out.finish(Activation::Identity)?);
    ReluNetwork::from_affine(layers)
}

/// Approximate product `ν ↦ Π ν_j` on `[0,1]^s` with sup error at most
/// `delta`. Inputs are clamped to `[0,1]` and the network maps 0 to 0.
pub fn product_net(s: usize, delta: f64) -> Result<ReluNetwork> {
    check_delta(delta)?;
    if s < 2 {
        return Err(NetError::InvalidArgument("product_net needs s >= 2".into()).into());
    }
    let r = square_teeth(delta / (s - 1) as f64);
    let pair = pair_product(r)?;
    let one = relu_net::identity(1);
    let mut width = s;
    let mut net: Option<ReluNetwork> = None;
    while width > 1 {
        let pairs = width / 2;
        let idx: Vec<[usize; 2]> = (0..pairs).map(|p| [2 * p, 2 * p + 1]).collect();
        let last = [width - 1];
        let mut parts: Vec<(&ReluNetwork, &[usize])> = idx.iter().map(|i| (&pair, &i[..])).collect();
        if width % 2 == 1 {
            parts.push((&one, &last[..]));
        }
        let level = parallelize_on(width, &parts)?;
        net = Some(match net {
            None => level,
            Some(prev) => compose(&level, &prev)?,
        });
        width = pairs + width % 2;
    }
    Ok(net.expect("s >= 2 gives at least one level"))
}

/// Front layers computing `v_j = 1 − |u_j|`, `u_j = (x_j − lo_j)/(w_j h) − i_j`.
fn hat_front(idx: &[i64], h: f64, bbox: &Aabb) -> std::result::Result<ReluNetwork, NetError> {
    let s = idx.len();
    let mut l1 = LayerBuilder::new(s);
    for (j, i) in idx.iter().enumerate() {
        let w = 1.0 / (bbox.width(j) * h);
        let b0 = -bbox.lo[j] * w;
        let b = b0 - *i as f64;
        l1.push_row([(j, w)], b);
        l1.push_row([(j, -w)], -b);
    }
    let mut l2 = LayerBuilder::new(2 * s);
    for j in 0..s {
        l2.push_row([(2 * j, -1.0), (2 * j + 1, -1.0)], 1.0);
    }
    ReluNetwork::from_affine(vec![l1.finish(Activation::Relu)?, l2.finish(Activation::Identity)?])
}

/// `min_j clamp(v_j, 0, 1)` via `min(a,b) = a − σ(a − b)` on a binary tree.
fn clamped_min(s: usize) -> std::result::Result<ReluNetwork, NetError> {
    let mut l0 = LayerBuilder::new(s);
    for j in 0..s {
        l0.push_row([(j, 1.0)], 0.0);
        l0.push_row([(j, 1.0)], -1.0);
    }
    let mut l1 = LayerBuilder::new(2 * s);
    for j in 0..s {
        l1.push_row([(2 * j, 1.0), (2 * j + 1, -1.0)], 0.0);
    }
    let mut net = ReluNetwork::from_affine(vec![l0.finish(Activation::Relu)?, l1.finish(Activation::Identity)?])?;
    let mut width = s;
    while width > 1 {
        let pairs = width / 2;
        let mut a = LayerBuilder::new(width);
        for p in 0..pairs {
            a.push_row([(2 * p, 1.0)], 0.0);
            a.push_row([(2 * p, 1.0), (2 * p + 1, -1.0)], 0.0);
        }
        if width % 2 == 1 {
            a.push_row([(width - 1, 1.0)], 0.0);
        }
        let mut b = LayerBuilder::new(a.rows());
        for p in 0..pairs {
            b.push_row([(2 * p, 1.0), (2 * p + 1, -1.0)], 0.0);
        }
        if width % 2 == 1 {
            b.push_row([(2 * pairs, 1.0)], 0.0);
        }
        let level = ReluNetwork::from_affine(vec![a.finish(Activation::Relu)?, b.finish(Activation::Identity)?])?;
        net = compose(&level, &net)?;
        width = pairs + width % 2;
    }
    Ok(net)
}

/// `(P, M) ↦ min(σ(P), M)` for `M >= 0`, as `σ(P) − σ(σ(P) − M)`.
fn min_gate() -> std::result::Result<ReluNetwork, NetError> {
    let mut l1 = LayerBuilder::new(2);
    l1.push_row([(0, 1.0)], 0.0);
    l1.push_row([(1, 1.0)], 0.0);
    let mut l2 = LayerBuilder::new(2);
    l2.push_row([(0, 1.0)], 0.0);
    l2.push_row([(0, 1.0), (1, -1.0)], 0.0);
    let mut l3 = LayerBuilder::new(2);
    l3.push_row([(0, 1.0), (1, -1.0)], 0.0);
    ReluNetwork::from_affine(vec![
        l1.finish(Activation::Relu)?,
        l2.finish(Activation::Relu)?,
        l3.finish(Activation::Identity)?,
    ])
}

/// Tensor hat on the unit cube; see [`tensor_hat_in_box`].
pub fn tensor_hat(idx: &[i64], h: f64, delta: f64) -> Result<ReluNetwork> {
    tensor_hat_in_box(idx, h, delta, &Aabb::unit(idx.len()))
}

/// Approximation of `Π_j φ(u_j − i_j)` (unit coordinates `u` of `bbox`) with
/// sup error at most `delta`, exactly zero outside the support.
pub fn tensor_hat_in_box(idx: &[i64], h: f64, delta: f64, bbox: &Aabb) -> Result<ReluNetwork> {
    check_delta(delta)?;
    if !(h > 0.0) || bbox.dim() != idx.len() || idx.is_empty() {
        return Err(NetError::InvalidArgument("tensor_hat needs h > 0 and a matching box".into()).into());
    }
    let s = idx.len();
    let front = hat_front(idx, h, bbox)?;
    if s == 1 {
        let clamp = clamped_min(1)?;
        return Ok(compose(&clamp, &front)?);
    }
    let p = product_net(s, delta)?;
    let m = clamped_min(s)?;
    let both = parallelize(&[&p, &m])?;
    let gated = compose(&min_gate()?, &both)?;
    Ok(compose(&gated, &front)?)
}

/// Build report of [`lip_stable_net`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipBuildReport {
    pub s: usize,
    pub q: usize,
    pub h: f64,
    pub delta: f64,
    pub delta_star: f64,
    pub size: usize,
    pub depth: usize,
    pub measured_sup_error: Option<f64>,
    pub validation_points: usize,
}

/// Network plus the data needed for fast structured evaluation.
#[derive(Clone, Debug)]
pub struct LipStableNet {
    pub net: ReluNetwork,
    pub report: LipBuildReport,
    grid: GridSpec,
    values: Vec<f64>,
    compiled: Option<CompiledNet>,
    template: Option<ReluNetwork>,
}

impl LipStableNet {
    /// Evaluates the network. For `s = 1` this runs the compiled network;
    /// for `s >= 2` only the tensor hats active at `x` are evaluated.
    pub fn eval(&self, x: &[f64]) -> f64 {
        if let Some(c) = &self.compiled {
            return c.eval(x)[0];
        }
        let template = self.template.as_ref().expect("template for s >= 2");
        let s = self.grid.dim;
        let q = self.grid.q;
        let u = self.grid.to_unit(x);
        let h = self.grid.h();
        let mut base = Vec::with_capacity(s);
        for v in &u {
            let t = v * q as f64;
            if t < -1.0 || t > q as f64 + 1.0 {
                return 0.0;
            }
            base.push(t.floor() as i64);
        }
        let mut total = 0.0;
        let mut shifted = vec![0.0; s];
        let mut idx = vec![0usize; s];
        'corner: for corner in 0..(1usize << s) {
            for j in 0..s {
                let i = base[j] + ((corner >> j) & 1) as i64;
                if i < 0 || i > q as i64 {
                    continue 'corner;
                }
                idx[j] = i as usize;
                shifted[j] = u[j] - i as f64 * h;
            }
            let g = self.values[self.grid.flat(&idx)];
            if g != 0.0 {
                total += g * template.eval(&shifted).expect("template dimension")[0];
            }
        }
        total
    }
}

/// Smallest grid resolution accepted by [`lip_stable_net`].
pub fn required_q(sf_grid: &GridSpec, lip: f64, delta: f64) -> usize {
    let s = sf_grid.dim;
    let lu = sf_grid.unit_lip(lip);
    if lu == 0.0 {
        return 1;
    }
    ((2.0 * interp_constant(s) * lu / delta) * (1.0 - 1e-12)).ceil().max(1.0) as usize
}

/// Inner tolerance for the tensor hats.
pub fn delta_star(s: usize, delta: f64, sup: f64) -> f64 {
    2.0 * c_star(s) * delta / (2.0 * sup.max(1.0))
}

/// Lipschitz-stable approximation of `sf` within `delta`: the interpolant
/// `g_h` realized with hat sums (`s = 1`) or tensor hats of tolerance
/// `delta_star` (`s >= 2`). Refuses when the sampled grid is coarser than
/// required.
pub fn lip_stable_net(sf: &SampledFunction, delta: f64) -> Result<LipStableNet> {
    check_delta(delta)?;
    let s = sf.grid.dim;
    let req = required_q(&sf.grid, sf.lip_bound, delta);
    if sf.grid.q < req {
        return Err(InterpError::GridTooCoarse { have: sf.grid.q, required: req });
    }
    let q = sf.grid.q;
    let h = sf.grid.h();
    let ds = delta_star(s, delta, sf.sup_bound);
    let (net, compiled, template) = if s == 1 {
        let net = if sf.values.iter().all(|v| *v == 0.0) {
            zero_net(1)?
        } else {
            hat_sum_net(sf.grid.bbox.lo[0], sf.grid.bbox.hi[0], &sf.values)?
        };
        let c = CompiledNet::new(&net);
        (net, Some(c), None)
    } else {
        let mut nets = Vec::new();
        for k in 0..sf.values.len() {
            let g = sf.values[k];
            if g == 0.0 {
                continue;
            }
            let idx: Vec<i64> = sf.grid.index(k).into_iter().map(|i| i as i64).collect();
            let th = tensor_hat_in_box(&idx, h, ds, &sf.grid.bbox)?;
            nets.push(relu_net::scale(&th, g)?);
        }
        let net = if nets.is_empty() {
            zero_net(s)?
        } else {
            let refs: Vec<&ReluNetwork> = nets.iter().collect();
            relu_net::sum(&refs)?
        };
        let zero: Vec<i64> = vec![0; s];
        let template = tensor_hat(&zero, h, ds)?;
        (net, None, Some(template))
    };
    let report = LipBuildReport {
        s,
        q,
        h,
        delta,
        delta_star: ds,
        size: net.size(),
        depth: net.depth(),
        measured_sup_error: None,
        validation_points: 0,
    };
    let mut out = LipStableNet { net, report, grid: sf.grid.clone(), values: sf.values.clone(), compiled, template };
    if let Some(src) = &sf.source {
        let pts = validation_points(&sf.grid);
        let err = pts.iter().map(|x| (out.eval(x) - src(x)).abs()).fold(0.0, f64::max);
        out.report.measured_sup_error = Some(err);
        out.report.validation_points = pts.len();
    }
    Ok(out)
}

fn zero_net(dim: usize) -> std::result::Result<ReluNetwork, NetError> {
    ReluNetwork::from_affine(vec![AffineLayer::from_rows(dim, &[vec![]], &[0.0], Activation::Identity)?])
}

/// Validation grid: 2001 points in 1D, 101^2 in 2D, 9^s points for s >= 3.
pub fn validation_points(grid: &GridSpec) -> Vec<Vec<f64>> {
    let n: usize = match grid.dim {
        1 => 2001,
        2 => 101,
        _ => 9,
    };
    let total = n.pow(grid.dim as u32);
    (0..total)
        .map(|mut k| {
            (0..grid.dim)
                .map(|j| {
                    let i = k % n;
                    k /= n;
                    grid.bbox.lo[j] + grid.bbox.width(j) * i as f64 / (n - 1) as f64
                })
                .collect()
        })
        .collect()
}

/// Exact size of `lip_stable_net` output without building it, for a grid
/// `q` on `bbox` where every node value is nonzero.
pub fn plan_size(bbox: &Aabb, q: usize, delta: f64, sup: f64) -> Result<usize> {
    check_delta(delta)?;
    let s = bbox.dim();
    let n = q + 1;
    if s == 1 {
        // generic values: all q+3 neurons have nonzero coefficient, every
        // bias nonzero except possibly one
        let h = bbox.width(0) / q as f64;
        let b0 = -bbox.lo[0] / h;
        let zero_bias = (-1..=(q as i64 + 1)).filter(|k| b0 - *k as f64 == 0.0).count();
        return Ok(3 * (q + 3) - zero_bias);
    }
    let h = 1.0 / q as f64;
    let ds = delta_star(s, delta, sup);
    let zeros: Vec<i64> = vec![0; s];
    let probe = tensor_hat_in_box(&zeros, h, ds, &Aabb::unit(s))?;
    let base = probe.size(); // all front biases zero
    let mut total = n.pow(s as u32) * base;
    for j in 0..s {
        let w = 1.0 / (bbox.width(j) * h);
        let b0 = -bbox.lo[j] * w;
        let nonzero = (0..n).filter(|i| b0 - *i as f64 != 0.0).count();
        total += 2 * nonzero * n.pow(s as u32 - 1);
    }
    Ok(total)
}

/// Calibration record for one build.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub s: usize,
    pub delta: f64,
    pub q: usize,
    pub size: usize,
    pub depth: usize,
    pub lip_measured: f64,
    pub lip_data: f64,
    pub sup_data: f64,
    pub sup_error: f64,
}

/// Calibration report: constants fitted as maxima over the evidence points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    #[serde(rename = "C")]
    pub c_interp: Vec<f64>,
    pub c_star: Vec<f64>,
    pub s: Vec<usize>,
    pub evidence: Vec<CalibrationPoint>,
}

/// Builds interpolants of fixed test functions over a delta ladder and
/// records measured size, depth, Lipschitz constant and error.
pub fn calibrate(deltas: &[f64], dims: &[usize], seed: u64) -> Result<CalibrationReport> {
    let mut evidence = Vec::new();
    for &s in dims {
        for &delta in deltas {
            let (lip, sup) = (1.0, 1.0);
            let f = move |x: &[f64]| -> f64 {
                let m = x.iter().map(|v| (v - 0.5).abs()).fold(0.0, f64::max);
                1.0 - m
            };
            let grid = GridSpec::unit(s, 1)?;
            let q = required_q(&grid, lip, delta);
            let sf = SampledFunction::from_fn(GridSpec::unit(s, q)?, f, lip, sup)?;
            let net = lip_stable_net(&sf, delta)?;
            let bbox = Aabb::unit(s);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut lip_measured = 0.0f64;
            for k in 0..2000 {
                let (x, y) = relu_net::sample_pair(&bbox, k, &mut rng);
                let d = relu_net::max_dist(&x, &y);
                if d > 0.0 {
                    lip_measured = lip_measured.max((net.eval(&x) - net.eval(&y)).abs() / d);
                }
            }
            evidence.push(CalibrationPoint {
                s,
                delta,
                q,
                size: net.report.size,
                depth: net.report.depth,
                lip_measured,
                lip_data: lip,
                sup_data: sup,
                sup_error: net.report.measured_sup_error.unwrap_or(f64::NAN),
            });
        }
    }
    let ratio = |f: &dyn Fn(&CalibrationPoint) -> f64| evidence.iter().map(f).fold(0.0, f64::max);
    let c1 = ratio(&|p| p.size as f64 / (p.lip_data.powi(p.s as i32) * p.delta.powi(-(p.s as i32)) * (1.0 / p.delta).log2()));
    let c2 = ratio(&|p| p.depth as f64 / (1.0 / p.delta).log2());
    let c3 = ratio(&|p| p.lip_measured / ((1.0 + p.sup_data) * p.lip_data));
    Ok(CalibrationReport {
        c1,
        c2,
        c3,
        c_interp: dims.iter().map(|s| interp_constant(*s)).collect(),
        c_star: dims.iter().map(|s| c_star(*s)).collect(),
        s: dims.to_vec(),
        evidence,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn phi(x: f64) -> f64 {
        (1.0 - x.abs()).max(0.0)
    }

    #[test]
    fn hat_values() {
        assert_eq!(hat1d(1.0, 0).unwrap().eval(&[0.0]).unwrap()[0], 1.0);
        let n = hat1d(0.5, 2).unwrap();
        assert_eq!(n.eval(&[1.0]).unwrap()[0], 1.0);
        assert_eq!(n.eval(&[1.25]).unwrap()[0], 0.5);
        let n = hat1d(0.25, 1).unwrap();
        for k in 0..=1000 {
            let x = k as f64 / 1000.0;
            assert!((n.eval(&[x]).unwrap()[0] - phi(x / 0.25 - 1.0)).abs() <= 1e-14);
        }
    }

    #[test]
    fn hat_sum_reproduces_nodes() {
        let vals = [0.3, -1.0, 2.0, 0.5];
        let net = hat_sum_net(-1.0, 2.0, &vals).unwrap();
        for (i, v) in vals.iter().enumerate() {
            let x = -1.0 + i as f64;
            assert!((net.eval(&[x]).unwrap()[0] - v).abs() < 1e-13);
        }
        assert!((net.eval(&[-0.5]).unwrap()[0] - (-0.35)).abs() < 1e-13);
    }

    #[test]
    fn product_net_zero_and_corner() {
        for &d in &[0.1, 1e-3] {
            let p = product_net(2, d).unwrap();
            assert_eq!(p.eval(&[0.0, 0.0]).unwrap()[0], 0.0);
            assert!(p.eval(&[0.0, 0.7]).unwrap()[0].abs() <= d);
            assert!((p.eval(&[1.0, 1.0]).unwrap()[0] - 1.0).abs() <= d);
        }
    }

    #[test]
    fn tensor_hat_support_is_exact() {
        let t = tensor_hat(&[1, 2], 0.25, 1e-3).unwrap();
        assert!((t.eval(&[0.25, 0.5]).unwrap()[0] - 1.0).abs() <= 1e-3);
        assert_eq!(t.eval(&[0.0, 0.5]).unwrap()[0], 0.0);
        assert_eq!(t.eval(&[0.9, 0.1]).unwrap()[0], 0.0);
        assert_eq!(t.eval(&[0.3, 0.76]).unwrap()[0], 0.0);
    }

    #[test]
    fn structured_eval_matches_network() {
        let grid = GridSpec::new(6, Aabb::new(vec![-1.0, 0.5], vec![1.0, 2.0]).unwrap()).unwrap();
        let sf = SampledFunction::from_fn(grid, |x| 0.3 * x[0] - 0.2 * x[1] + 0.5, 0.5, 1.0).unwrap();
        let n = lip_stable_net(&sf, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let x = sf.grid.bbox.sample(&mut rng);
            let a = n.net.eval(&x).unwrap()[0];
            assert!((a - n.eval(&x)).abs() < 1e-10, "{a} vs {}", n.eval(&x));
        }
    }

    #[test]
    fn plan_matches_build() {
        for (bbox, q) in [
            (Aabb::unit(1), 7),
            (Aabb::new(vec![-2.0], vec![3.0]).unwrap(), 5),
            (Aabb::unit(2), 4),
            (Aabb::new(vec![-1.0, 0.0], vec![1.0, 2.0]).unwrap(), 4),
        ] {
            let grid = GridSpec::new(q, bbox.clone()).unwrap();
            let sf = SampledFunction::from_fn(grid, |x| 2.0 + 0.01 * x.iter().map(|v| v * v).sum::<f64>(), 0.1, 2.2).unwrap();
            let built = lip_stable_net(&sf, 0.1).unwrap();
            assert_eq!(plan_size(&bbox, q, 0.1, 2.2).unwrap(), built.report.size);
        }
    }

    #[test]
    fn refuses_coarse_grid() {
        let sf = SampledFunction::from_fn(GridSpec::unit(1, 4).unwrap(), |x| x[0], 1.0, 1.0).unwrap();
        match lip_stable_net(&sf, 0.01) {
            Err(InterpError::GridTooCoarse { required, .. }) => assert_eq!(required, 100),
            other => panic!("unexpected {other:?}"),
        }
    }
}
