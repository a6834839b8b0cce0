//! Feed-forward ReLU networks with exact weight accounting and a small
//! composition algebra (compose, parallelize, sum, depth padding).
//!
//! Weights are stored row-compressed; `size()` counts nonzero weights plus
//! nonzero biases. Besides affine layers a network may contain exact
//! multilinear gate layers, which evaluate sparse products of their inputs.

mod chain;
mod compiled;
mod serial;

pub use chain::{ChainStage, NetChain};
pub use compiled::CompiledNet;
pub use serial::{LayerDoc, NetworkDoc, TermDoc};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("empty network list")]
    Empty,
    #[error("invalid network: {0}")]
    Invalid(String),
    #[error("degenerate box: every side must have positive length")]
    DegenerateBox,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("serialization error: {0}")]
    Serialization(String),
}

pub type Result<T> = std::result::Result<T, NetError>;

/// Axis-aligned box `[lo_1,hi_1] x ... x [lo_d,hi_d]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Aabb {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(NetError::DimensionMismatch { expected: lo.len(), got: hi.len() });
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a <= b) || !a.is_finite() || !b.is_finite()) {
            return Err(NetError::InvalidArgument("box bounds must be finite with lo <= hi".into()));
        }
        Ok(Self { lo, hi })
    }

    pub fn cube(dim: usize, lo: f64, hi: f64) -> Self {
        Self { lo: vec![lo; dim], hi: vec![hi; dim] }
    }

    pub fn unit(dim: usize) -> Self {
        Self::cube(dim, 0.0, 1.0)
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn width(&self, i: usize) -> f64 {
        self.hi[i] - self.lo[i]
    }

    pub fn max_width(&self) -> f64 {
        (0..self.dim()).map(|i| self.width(i)).fold(0.0, f64::max)
    }

    pub fn is_degenerate(&self) -> bool {
        self.dim() == 0 || (0..self.dim()).any(|i| !(self.width(i) > 0.0))
    }

    pub fn inflate(&self, r: f64) -> Self {
        Self {
            lo: self.lo.iter().map(|v| v - r).collect(),
            hi: self.hi.iter().map(|v| v + r).collect(),
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (a, b))| *a <= *v && *v <= *b)
    }

    /// Cartesian product `self x other`.
    pub fn product(&self, other: &Aabb) -> Self {
        let mut lo = self.lo.clone();
        lo.extend_from_slice(&other.lo);
        let mut hi = self.hi.clone();
        hi.extend_from_slice(&other.hi);
        Self { lo, hi }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.dim()).map(|i| self.lo[i] + rng.gen::<f64>() * self.width(i)).collect()
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for (i, v) in x.iter_mut().enumerate() {
            *v = v.clamp(self.lo[i], self.hi[i]);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

#[inline]
pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Affine map `x -> act(W x + b)` with `W` stored row-compressed.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineLayer {
    in_dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
    biases: Vec<f64>,
    activation: Activation,
}

/// Row-by-row constructor for [`AffineLayer`]. Zero entries are dropped and
/// repeated columns within a row are summed.
#[derive(Clone, Debug)]
pub struct LayerBuilder {
    in_dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
    biases: Vec<f64>,
    scratch: Vec<(usize, f64)>,
}

impl LayerBuilder {
    pub fn new(in_dim: usize) -> Self {
        Self { in_dim, row_ptr: vec![0], cols: Vec::new(), vals: Vec::new(), biases: Vec::new(), scratch: Vec::new() }
    }

    pub fn with_capacity(in_dim: usize, rows: usize, nnz: usize) -> Self {
        let mut b = Self::new(in_dim);
        b.row_ptr.reserve(rows);
        b.biases.reserve(rows);
        b.cols.reserve(nnz);
        b.vals.reserve(nnz);
        b
    }

    pub fn push_row<I: IntoIterator<Item = (usize, f64)>>(&mut self, entries: I, bias: f64) {
        self.scratch.clear();
        self.scratch.extend(entries);
        let sorted = self.scratch.windows(2).all(|w| w[0].0 < w[1].0);
        if !sorted {
            self.scratch.sort_by_key(|e| e.0);
        }
        let mut k = 0;
        while k < self.scratch.len() {
            let c = self.scratch[k].0;
            let mut v = self.scratch[k].1;
            k += 1;
            while k < self.scratch.len() && self.scratch[k].0 == c {
                v += self.scratch[k].1;
                k += 1;
            }
            if v != 0.0 {
                self.cols.push(c as u32);
                self.vals.push(v);
            }
        }
        self.row_ptr.push(self.cols.len());
        self.biases.push(bias);
    }

    pub fn rows(&self) -> usize {
        self.biases.len()
    }

    pub fn finish(self, activation: Activation) -> Result<AffineLayer> {
        if let Some(&c) = self.cols.iter().find(|&&c| c as usize >= self.in_dim) {
            return Err(NetError::Invalid(format!("column {c} out of range for input dimension {}", self.in_dim)));
        }
        if self.biases.iter().chain(&self.vals).any(|v| !v.is_finite()) {
            return Err(NetError::Invalid("non-finite weight or bias".into()));
        }
        Ok(AffineLayer {
            in_dim: self.in_dim,
            row_ptr: self.row_ptr,
            cols: self.cols,
            vals: self.vals,
            biases: self.biases,
            activation,
        })
    }
}

impl AffineLayer {
    /// Builds a layer from a dense row-major weight matrix.
    pub fn from_dense(rows: usize, cols: usize, weights: &[f64], biases: &[f64], activation: Activation) -> Result<Self> {
        if weights.len() != rows * cols {
            return Err(NetError::DimensionMismatch { expected: rows * cols, got: weights.len() });
        }
        if biases.len() != rows {
            return Err(NetError::DimensionMismatch { expected: rows, got: biases.len() });
        }
        let mut b = LayerBuilder::with_capacity(cols, rows, weights.len());
        for r in 0..rows {
            b.push_row((0..cols).map(|c| (c, weights[r * cols + c])), biases[r]);
        }
        b.finish(activation)
    }

    pub fn from_rows(in_dim: usize, rows: &[Vec<(usize, f64)>], biases: &[f64], activation: Activation) -> Result<Self> {
        if biases.len() != rows.len() {
            return Err(NetError::DimensionMismatch { expected: rows.len(), got: biases.len() });
        }
        let mut b = LayerBuilder::new(in_dim);
        for (row, &bias) in rows.iter().zip(biases) {
            b.push_row(row.iter().copied(), bias);
        }
        b.finish(activation)
    }

    pub fn identity(n: usize) -> Self {
        let mut b = LayerBuilder::with_capacity(n, n, n);
        for i in 0..n {
            b.push_row([(i, 1.0)], 0.0);
        }
        b.finish(Activation::Identity).expect("identity layer is valid")
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.biases.len()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    pub fn row(&self, r: usize) -> (&[u32], &[f64]) {
        let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
        (&self.cols[a..b], &self.vals[a..b])
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Nonzero weights plus nonzero biases.
    pub fn size(&self) -> usize {
        self.vals.len() + self.biases.iter().filter(|b| **b != 0.0).count()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.out_dim() * self.in_dim];
        for r in 0..self.out_dim() {
            let (c, v) = self.row(r);
            for (cc, vv) in c.iter().zip(v) {
                w[r * self.in_dim + *cc as usize] = *vv;
            }
        }
        w
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.reserve(self.out_dim());
        for r in 0..self.out_dim() {
            let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
            let mut s = self.biases[r];
            for k in a..b {
                s += self.vals[k] * x[self.cols[k] as usize];
            }
            out.push(match self.activation {
                Activation::Relu => relu(s),
                Activation::Identity => s,
            });
        }
    }

    fn map_rows(&self, f: impl Fn(usize, &[u32], &[f64], f64, &mut LayerBuilder), in_dim: usize) -> LayerBuilder {
        let mut b = LayerBuilder::with_capacity(in_dim, self.out_dim(), self.nnz());
        for r in 0..self.out_dim() {
            let (c, v) = self.row(r);
            f(r, c, v, self.biases[r], &mut b);
        }
        b
    }

    fn scaled(&self, s: f64) -> Self {
        self.map_rows(|_, c, v, bias, b| b.push_row(c.iter().zip(v).map(|(c, v)| (*c as usize, v * s)), bias * s), self.in_dim)
            .finish(self.activation)
            .expect("scaling preserves validity")
    }
}

/// Exact multilinear layer: output `o` is `sum_k coef_k * prod_{j in S_k} x_j`
/// (an empty `S_k` gives a constant term).
#[derive(Clone, Debug, PartialEq)]
pub struct GateLayer {
    in_dim: usize,
    out_ptr: Vec<usize>,
    coefs: Vec<f64>,
    fac_ptr: Vec<usize>,
    factors: Vec<u32>,
}

#[derive(Clone, Debug)]
pub struct GateBuilder {
    layer: GateLayer,
}

impl GateBuilder {
    pub fn new(in_dim: usize) -> Self {
        Self { layer: GateLayer { in_dim, out_ptr: vec![0], coefs: Vec::new(), fac_ptr: vec![0], factors: Vec::new() } }
    }

    /// Adds a term to the output currently being assembled.
    pub fn term(&mut self, coef: f64, factors: &[usize]) {
        if coef == 0.0 {
            return;
        }
        self.layer.coefs.push(coef);
        self.layer.factors.extend(factors.iter().map(|f| *f as u32));
        self.layer.fac_ptr.push(self.layer.factors.len());
    }

    /// Closes the current output.
    pub fn end_output(&mut self) {
        self.layer.out_ptr.push(self.layer.coefs.len());
    }

    pub fn finish(self) -> Result<GateLayer> {
        let l = self.layer;
        if l.factors.iter().any(|f| *f as usize >= l.in_dim) {
            return Err(NetError::Invalid("gate factor index out of range".into()));
        }
        if l.coefs.iter().any(|c| !c.is_finite()) {
            return Err(NetError::Invalid("non-finite gate coefficient".into()));
        }
        Ok(l)
    }
}

impl GateLayer {
    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_ptr.len() - 1
    }

    /// One unit per monomial term.
    pub fn size(&self) -> usize {
        self.coefs.len()
    }

    pub fn terms(&self, o: usize) -> impl Iterator<Item = (f64, &[u32])> + '_ {
        (self.out_ptr[o]..self.out_ptr[o + 1]).map(move |k| (self.coefs[k], &self.factors[self.fac_ptr[k]..self.fac_ptr[k + 1]]))
    }

    pub fn max_degree(&self) -> usize {
        self.fac_ptr.windows(2).map(|w| w[1] - w[0]).max().unwrap_or(0)
    }

    pub fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.reserve(self.out_dim());
        for o in 0..self.out_dim() {
            let mut s = 0.0;
            for k in self.out_ptr[o]..self.out_ptr[o + 1] {
                let mut p = self.coefs[k];
                for f in &self.factors[self.fac_ptr[k]..self.fac_ptr[k + 1]] {
                    p *= x[*f as usize];
                }
                s += p;
            }
            out.push(s);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Affine(AffineLayer),
    Gate(GateLayer),
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        match self {
            Layer::Affine(l) => l.in_dim(),
            Layer::Gate(g) => g.in_dim(),
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            Layer::Affine(l) => l.out_dim(),
            Layer::Gate(g) => g.out_dim(),
        }
    }

    pub fn size(&self) -> usize {
        match self {
            Layer::Affine(l) => l.size(),
            Layer::Gate(g) => g.size(),
        }
    }

    pub fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        match self {
            Layer::Affine(l) => l.apply(x, out),
            Layer::Gate(g) => g.apply(x, out),
        }
    }

    pub fn as_affine(&self) -> Option<&AffineLayer> {
        match self {
            Layer::Affine(l) => Some(l),
            Layer::Gate(_) => None,
        }
    }

    fn is_linear_output(&self) -> bool {
        match self {
            Layer::Affine(l) => l.activation == Activation::Identity,
            Layer::Gate(_) => true,
        }
    }
}

/// A feed-forward network. Layers are applied in order; the last layer is
/// linear (identity activation) or a multilinear gate.
#[derive(Clone, Debug, PartialEq)]
pub struct ReluNetwork {
    in_dim: usize,
    out_dim: usize,
    layers: Vec<Layer>,
}

impl ReluNetwork {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        let first = layers.first().ok_or(NetError::Empty)?;
        let in_dim = first.in_dim();
        for w in layers.windows(2) {
            if w[0].out_dim() != w[1].in_dim() {
                return Err(NetError::DimensionMismatch { expected: w[0].out_dim(), got: w[1].in_dim() });
            }
        }
        let last = layers.last().expect("nonempty");
        if !last.is_linear_output() {
            return Err(NetError::Invalid("final layer must have identity activation".into()));
        }
        if in_dim == 0 || last.out_dim() == 0 {
            return Err(NetError::Invalid("input and output dimensions must be positive".into()));
        }
        Ok(Self { in_dim, out_dim: last.out_dim(), layers })
    }

    pub fn from_affine(layers: Vec<AffineLayer>) -> Result<Self> {
        Self::new(layers.into_iter().map(Layer::Affine).collect())
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn into_layers(self) -> Vec<Layer> {
        self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn size(&self) -> usize {
        self.layers.iter().map(Layer::size).sum()
    }

    /// True when all hidden layers are affine ReLU layers and the output
    /// layer is affine with identity activation.
    pub fn is_standard(&self) -> bool {
        let n = self.layers.len();
        self.layers.iter().enumerate().all(|(k, l)| match l {
            Layer::Affine(a) => (k + 1 == n) == (a.activation == Activation::Identity),
            Layer::Gate(_) => false,
        })
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.in_dim {
            return Err(NetError::DimensionMismatch { expected: self.in_dim, got: x.len() });
        }
        let mut a = x.to_vec();
        let mut b = Vec::new();
        for l in &self.layers {
            l.apply(&a, &mut b);
            std::mem::swap(&mut a, &mut b);
        }
        Ok(a)
    }

    pub fn to_doc(&self) -> NetworkDoc {
        NetworkDoc::from_network(self)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_doc()).expect("network documents always serialize")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: NetworkDoc = serde_json::from_str(s).map_err(|e| NetError::Serialization(e.to_string()))?;
        doc.into_network()
    }

    /// Indices of the inputs each output depends on structurally.
    pub fn output_supports(&self) -> Vec<Vec<usize>> {
        let mut sup: Vec<Vec<usize>> = (0..self.in_dim).map(|i| vec![i]).collect();
        for l in &self.layers {
            let mut next = Vec::with_capacity(l.out_dim());
            for o in 0..l.out_dim() {
                let mut s: Vec<usize> = Vec::new();
                match l {
                    Layer::Affine(a) => {
                        for c in a.row(o).0 {
                            s.extend_from_slice(&sup[*c as usize]);
                        }
                    }
                    Layer::Gate(g) => {
                        for (_, f) in g.terms(o) {
                            for c in f {
                                s.extend_from_slice(&sup[*c as usize]);
                            }
                        }
                    }
                }
                s.sort_unstable();
                s.dedup();
                next.push(s);
            }
            sup = next;
        }
        sup
    }
}

/// Single identity layer on `R^n`.
pub fn identity(n: usize) -> ReluNetwork {
    ReluNetwork::from_affine(vec![AffineLayer::identity(n)]).expect("identity network is valid")
}

/// Single affine layer `x -> W x + b` with identity activation.
pub fn affine(in_dim: usize, rows: &[Vec<(usize, f64)>], biases: &[f64]) -> Result<ReluNetwork> {
    ReluNetwork::from_affine(vec![AffineLayer::from_rows(in_dim, rows, biases, Activation::Identity)?])
}

/// Selects coordinates `idx` of an `in_dim`-vector.
pub fn select(in_dim: usize, idx: &[usize]) -> Result<ReluNetwork> {
    let rows: Vec<Vec<(usize, f64)>> = idx.iter().map(|i| vec![(*i, 1.0)]).collect();
    affine(in_dim, &rows, &vec![0.0; idx.len()])
}

fn fuse(outer: &AffineLayer, inner: &AffineLayer) -> AffineLayer {
    let mut acc = vec![0.0; inner.in_dim];
    let mut mark = vec![false; inner.in_dim];
    let mut touched: Vec<usize> = Vec::new();
    let mut b = LayerBuilder::new(inner.in_dim);
    for r in 0..outer.out_dim() {
        let (oc, ov) = outer.row(r);
        let mut bias = outer.biases[r];
        for (k, w) in oc.iter().zip(ov) {
            let k = *k as usize;
            bias += w * inner.biases[k];
            let (ic, iv) = inner.row(k);
            for (c, v) in ic.iter().zip(iv) {
                let c = *c as usize;
                if !mark[c] {
                    mark[c] = true;
                    touched.push(c);
                }
                acc[c] += w * v;
            }
        }
        touched.sort_unstable();
        b.push_row(touched.iter().map(|c| (*c, acc[*c])), bias);
        for c in touched.drain(..) {
            acc[c] = 0.0;
            mark[c] = false;
        }
    }
    b.finish(outer.activation).expect("fusion of valid layers is valid")
}

/// `outer ∘ inner`. When `inner` ends with an affine identity layer and
/// `outer` starts with an affine layer the two are fused into one layer.
pub fn compose(outer: &ReluNetwork, inner: &ReluNetwork) -> Result<ReluNetwork> {
    compose_reported(outer, inner).map(|(n, _)| n)
}

/// Like [`compose`], also returning the fusion term
/// `size(result) - size(outer) - size(inner)`.
pub fn compose_reported(outer: &ReluNetwork, inner: &ReluNetwork) -> Result<(ReluNetwork, i64)> {
    if inner.out_dim != outer.in_dim {
        return Err(NetError::DimensionMismatch { expected: outer.in_dim, got: inner.out_dim });
    }
    let n_in = inner.layers.len();
    let fusable = matches!(
        (&inner.layers[n_in - 1], &outer.layers[0]),
        (Layer::Affine(a), Layer::Affine(_)) if a.activation == Activation::Identity
    );
    let net = if fusable {
        let (Layer::Affine(il), Layer::Affine(ol)) = (&inner.layers[n_in - 1], &outer.layers[0]) else { unreachable!() };
        let mut layers: Vec<Layer> = inner.layers[..n_in - 1].to_vec();
        layers.push(Layer::Affine(fuse(ol, il)));
        layers.extend_from_slice(&outer.layers[1..]);
        ReluNetwork::new(layers)?
    } else {
        stack(outer, inner)?
    };
    let term = net.size() as i64 - outer.size() as i64 - inner.size() as i64;
    Ok((net, term))
}

/// `outer ∘ inner` by concatenating layers without fusion.
pub fn stack(outer: &ReluNetwork, inner: &ReluNetwork) -> Result<ReluNetwork> {
    if inner.out_dim != outer.in_dim {
        return Err(NetError::DimensionMismatch { expected: outer.in_dim, got: inner.out_dim });
    }
    let mut layers = inner.layers.clone();
    layers.extend_from_slice(&outer.layers);
    ReluNetwork::new(layers)
}

fn final_affine(net: &ReluNetwork) -> Result<&AffineLayer> {
    match net.layers.last() {
        Some(Layer::Affine(a)) if a.activation == Activation::Identity => Ok(a),
        _ => Err(NetError::Invalid("depth padding needs an affine identity output layer".into())),
    }
}

/// Size added by [`pad_to_depth`]: the negated copy of the output layer,
/// `4r` weights per extra passthrough layer and `2r` for the recombination,
/// where `r` is the output dimension. Zero when no padding is needed.
pub fn passthrough_cost(net: &ReluNetwork, depth: usize) -> usize {
    let d = net.depth();
    if depth <= d {
        return 0;
    }
    let r = net.out_dim;
    let last = net.layers.last().map(Layer::size).unwrap_or(0);
    last + 4 * r * (depth - d - 1) + 2 * r
}

/// Pads `net` to `depth` layers with the exact passthrough `x = σ(x) − σ(−x)`.
pub fn pad_to_depth(net: &ReluNetwork, depth: usize) -> Result<ReluNetwork> {
    let d = net.depth();
    if depth < d {
        return Err(NetError::InvalidArgument(format!("cannot pad depth {d} down to {depth}")));
    }
    if depth == d {
        return Ok(net.clone());
    }
    let last = final_affine(net)?;
    let r = net.out_dim;
    let mut layers: Vec<Layer> = net.layers[..d - 1].to_vec();
    let mut b = LayerBuilder::with_capacity(last.in_dim, 2 * r, 2 * last.nnz());
    for sign in [1.0, -1.0] {
        for o in 0..r {
            let (c, v) = last.row(o);
            b.push_row(c.iter().zip(v).map(|(c, v)| (*c as usize, sign * v)), sign * last.biases[o]);
        }
    }
    layers.push(Layer::Affine(b.finish(Activation::Relu)?));
    for _ in 0..depth - d - 1 {
        let mut b = LayerBuilder::with_capacity(2 * r, 2 * r, 4 * r);
        for o in 0..r {
            b.push_row([(o, 1.0), (r + o, -1.0)], 0.0);
        }
        for o in 0..r {
            b.push_row([(o, -1.0), (r + o, 1.0)], 0.0);
        }
        layers.push(Layer::Affine(b.finish(Activation::Relu)?));
    }
    let mut b = LayerBuilder::with_capacity(2 * r, r, 2 * r);
    for o in 0..r {
        b.push_row([(o, 1.0), (r + o, -1.0)], 0.0);
    }
    layers.push(Layer::Affine(b.finish(Activation::Identity)?));
    ReluNetwork::new(layers)
}

/// Runs the nets side by side on the same input and stacks their outputs.
pub fn parallelize(nets: &[&ReluNetwork]) -> Result<ReluNetwork> {
    let first = nets.first().ok_or(NetError::Empty)?;
    let all: Vec<usize> = (0..first.in_dim).collect();
    let parts: Vec<(&ReluNetwork, &[usize])> = nets.iter().map(|n| (*n, all.as_slice())).collect();
    for n in nets {
        if n.in_dim != first.in_dim {
            return Err(NetError::DimensionMismatch { expected: first.in_dim, got: n.in_dim });
        }
    }
    parallelize_on(first.in_dim, &parts)
}

/// Parallelization where part `p` reads the input coordinates `inputs_p`
/// (in order) of a shared `in_dim`-vector. Shallower parts are padded to the
/// common depth.
pub fn parallelize_on(in_dim: usize, parts: &[(&ReluNetwork, &[usize])]) -> Result<ReluNetwork> {
    if parts.is_empty() {
        return Err(NetError::Empty);
    }
    for (net, idx) in parts {
        if idx.len() != net.in_dim {
            return Err(NetError::DimensionMismatch { expected: net.in_dim, got: idx.len() });
        }
        if let Some(i) = idx.iter().find(|i| **i >= in_dim) {
            return Err(NetError::InvalidArgument(format!("input index {i} out of range")));
        }
    }
    let depth = parts.iter().map(|(n, _)| n.depth()).max().expect("nonempty");
    let padded: Vec<ReluNetwork> = parts.iter().map(|(n, _)| pad_to_depth(n, depth)).collect::<Result<_>>()?;
    let mut layers = Vec::with_capacity(depth);
    for l in 0..depth {
        let act = match &padded[0].layers[l] {
            Layer::Affine(a) => a.activation,
            Layer::Gate(_) => return Err(NetError::Invalid("parallelization of gate layers is not supported".into())),
        };
        let rows: usize = padded.iter().map(|n| n.layers[l].out_dim()).sum();
        let nnz: usize = padded.iter().map(|n| n.layers[l].as_affine().map_or(0, AffineLayer::nnz)).sum();
        let width: usize = if l == 0 { in_dim } else { padded.iter().map(|n| n.layers[l - 1].out_dim()).sum() };
        let mut b = LayerBuilder::with_capacity(width, rows, nnz);
        let mut offset = 0;
        for (p, net) in padded.iter().enumerate() {
            let layer = match &net.layers[l] {
                Layer::Affine(a) if a.activation == act => a,
                _ => return Err(NetError::Invalid(format!("layer kinds differ across parallel parts at depth {l}"))),
            };
            for o in 0..layer.out_dim() {
                let (c, v) = layer.row(o);
                if l == 0 {
                    let idx = parts[p].1;
                    b.push_row(c.iter().zip(v).map(|(c, v)| (idx[*c as usize], *v)), layer.biases[o]);
                } else {
                    b.push_row(c.iter().zip(v).map(|(c, v)| (offset + *c as usize, *v)), layer.biases[o]);
                }
            }
            if l > 0 {
                offset += layer.in_dim;
            }
        }
        layers.push(Layer::Affine(b.finish(act)?));
    }
    ReluNetwork::new(layers)
}

/// Pointwise sum of nets with equal input and output dimensions.
pub fn sum(nets: &[&ReluNetwork]) -> Result<ReluNetwork> {
    let first = nets.first().ok_or(NetError::Empty)?;
    for n in nets {
        if n.out_dim != first.out_dim {
            return Err(NetError::DimensionMismatch { expected: first.out_dim, got: n.out_dim });
        }
    }
    let par = parallelize(nets)?;
    let mut layers = par.into_layers();
    let last = match layers.pop() {
        Some(Layer::Affine(a)) => a,
        _ => unreachable!("parallelize yields affine layers"),
    };
    let r = first.out_dim;
    let mut b = LayerBuilder::with_capacity(last.in_dim, r, last.nnz());
    let mut entries = Vec::new();
    for o in 0..r {
        entries.clear();
        let mut bias = 0.0;
        for p in 0..nets.len() {
            let (c, v) = last.row(p * r + o);
            entries.extend(c.iter().zip(v).map(|(c, v)| (*c as usize, *v)));
            bias += last.biases[p * r + o];
        }
        b.push_row(entries.iter().copied(), bias);
    }
    layers.push(Layer::Affine(b.finish(Activation::Identity)?));
    ReluNetwork::new(layers)
}

/// Multiplies the output by `s`.
pub fn scale(net: &ReluNetwork, s: f64) -> Result<ReluNetwork> {
    let mut layers = net.layers.clone();
    let last = layers.pop().expect("nonempty");
    match last {
        Layer::Affine(a) => layers.push(Layer::Affine(a.scaled(s))),
        Layer::Gate(mut g) => {
            for c in &mut g.coefs {
                *c *= s;
            }
            layers.push(Layer::Gate(g));
        }
    }
    ReluNetwork::new(layers)
}

pub fn negate(net: &ReluNetwork) -> Result<ReluNetwork> {
    scale(net, -1.0)
}

/// Quadrature gates `ρ_i(t) = σ(t − τ_{i−1}) − σ(t − τ_i)`, `τ_i = lo + i(hi−lo)/q`.
pub fn rho_gate(lo: f64, hi: f64, q: usize) -> Result<ReluNetwork> {
    if q == 0 || !(hi > lo) {
        return Err(NetError::InvalidArgument("rho_gate needs q >= 1 and a nonempty interval".into()));
    }
    let mut b = LayerBuilder::with_capacity(1, q + 1, q + 1);
    for i in 0..=q {
        b.push_row([(0, 1.0)], -rho_breakpoint(lo, hi, q, i));
    }
    let l1 = b.finish(Activation::Relu)?;
    let mut b = LayerBuilder::with_capacity(q + 1, q, 2 * q);
    for i in 1..=q {
        b.push_row([(i - 1, 1.0), (i, -1.0)], 0.0);
    }
    ReluNetwork::from_affine(vec![l1, b.finish(Activation::Identity)?])
}

/// Breakpoint `τ_i` used by [`rho_gate`].
pub fn rho_breakpoint(lo: f64, hi: f64, q: usize, i: usize) -> f64 {
    lo + (i as f64) * (hi - lo) / (q as f64)
}

/// Direct evaluation of the gates, used as the reference in tests.
pub fn rho_values(lo: f64, hi: f64, q: usize, t: f64) -> Vec<f64> {
    (1..=q).map(|i| relu(t - rho_breakpoint(lo, hi, q, i - 1)) - relu(t - rho_breakpoint(lo, hi, q, i))).collect()
}

/// Sampled lower bound for the max-norm Lipschitz constant of `net` on `bbox`.
/// Half of the pairs are independent uniform points, half are local
/// perturbations at random scales.
pub fn lip_lower_bound(net: &ReluNetwork, bbox: &Aabb, n_samples: usize, seed: u64) -> Result<f64> {
    if bbox.dim() != net.in_dim {
        return Err(NetError::DimensionMismatch { expected: net.in_dim, got: bbox.dim() });
    }
    if bbox.is_degenerate() {
        return Err(NetError::DegenerateBox);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = 0.0f64;
    for k in 0..n_samples {
        let (x, xp) = sample_pair(bbox, k, &mut rng);
        let d = max_dist(&x, &xp);
        if d == 0.0 {
            continue;
        }
        let fx = net.eval(&x)?;
        let fp = net.eval(&xp)?;
        best = best.max(max_dist(&fx, &fp) / d);
    }
    Ok(best)
}

pub(crate) fn sample_pair<R: Rng>(bbox: &Aabb, k: usize, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    let x = bbox.sample(rng);
    let xp = if k % 2 == 0 {
        bbox.sample(rng)
    } else {
        let scale = bbox.max_width() * 10f64.powf(-rng.gen_range(1.0..5.0));
        let mut p: Vec<f64> = x.iter().map(|v| v + scale * rng.gen_range(-1.0..1.0)).collect();
        bbox.clamp(&mut p);
        p
    };
    (x, xp)
}

pub(crate) fn max_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
