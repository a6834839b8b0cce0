use std::sync::Arc;

use super::{Convection, Result, TransportError, TransportProblem};
use crate::comp_calculus::{gamma_inverse, implant, robust_ceil};
use crate::lip_interp::{self, hat_sum_terms, required_q, GridSpec, SampledFunction};
use crate::relu_net::{
    self, parallelize_on, rho_gate, stack, Activation, Aabb, GateBuilder, Layer, LayerBuilder, NetChain, ReluNetwork,
};

/// Field network of one quadrature cell. `terms[k]` lists the products
/// `(coef, y index, output index)` forming coordinate `k` of the cell
/// increment rate.
struct Block {
    net: ReluNetwork,
    reads_y: bool,
    terms: Vec<Vec<(f64, Option<usize>, usize)>>,
}

/// Networks of one slab `[lo, lo + len]`. State layout is
/// `(t, w, y, Z_1, .., Z_q)` where `Z_i ∈ R^m` holds the current iterate at
/// the midpoint of cell `i`.
#[derive(Clone, Debug)]
pub struct SlabNet {
    /// `(t, w, y) ↦ (t, w, y, w, .., w)`.
    pub init: Arc<ReluNetwork>,
    /// One discretized Picard sweep on the midpoint values.
    pub picard: Arc<ReluNetwork>,
    /// Final sweep evaluated at `t`; outputs `(t, w', y)`, or `w'` for the
    /// last slab.
    pub quad: Arc<ReluNetwork>,
    pub lo: f64,
    pub len: f64,
    pub q: usize,
    pub m: usize,
    pub dy: usize,
    pub last: bool,
}

impl SlabNet {
    /// Chain `quad ∘ picard^{μ−1} ∘ init`, i.e. `μ` sweeps.
    pub fn chain(&self, mu: usize) -> Result<NetChain> {
        let mut c = NetChain::new();
        c.push(self.init.clone(), 1)?;
        c.push(self.picard.clone(), mu.saturating_sub(1))?;
        c.push(self.quad.clone(), 1)?;
        Ok(c)
    }

    /// The one-step map `(t, x, y) ↦ P(z̄_x)(t)` as a single network.
    pub fn one_step_network(&self) -> Result<ReluNetwork> {
        Ok(stack(&self.quad, &self.init)?)
    }

    /// Size of `μ` sweeps.
    pub fn size(&self, mu: usize) -> u64 {
        (self.init.size() + mu.saturating_sub(1) * self.picard.size() + self.quad.size()) as u64
    }
}

/// Discretization of one slab.
#[derive(Clone, Debug, PartialEq)]
pub(super) struct SlabParams {
    pub q: usize,
    pub delta: f64,
    pub hat_q: usize,
    pub n_rep: Option<usize>,
}

impl SlabParams {
    /// Cells, tolerance and grid for one-step tolerance `tau` on a slab of
    /// length `len`.
    pub fn for_tau(conv: &Convection, len: f64, tau: f64, interp_box: &Aabb) -> Result<Self> {
        Ok(match conv {
            Convection::Affine(a) => {
                let q = super::q_affine(a.a_bound(), len, tau);
                let w1 = a.omega_l1();
                let delta = if w1 > 0.0 { super::delta_affine(tau, len, w1).min(0.5) } else { 0.5 };
                let hat_q = required_q(&GridSpec::new(1, interp_box.clone())?, a.lambda(), delta);
                SlabParams { q, delta, hat_q, n_rep: None }
            }
            Convection::General(g) => {
                let q = (robust_ceil(2.0 * (1.0 + g.a_bound) * g.norm * len * len / tau) as usize).max(1);
                let n = robust_ceil(gamma_inverse(&g.gf, 2.0 * len * g.norm / tau)?).max(1.0) as usize;
                SlabParams { q, delta: (tau / (2.0 * g.norm)).min(0.5), hat_q: 0, n_rep: Some(n) }
            }
        })
    }
}

/// One-step network on `[lo, lo + len]` with one-step tolerance `tau`;
/// field networks live on `interp_box`.
pub fn build_slab_net(problem: &TransportProblem, lo: f64, len: f64, tau: f64, interp_box: &Aabb) -> Result<SlabNet> {
    if !(len > 0.0) || !(tau > 0.0) {
        return Err(TransportError::Invalid("slab length and tau must be positive".into()));
    }
    let params = SlabParams::for_tau(&problem.convection, len, tau, interp_box)?;
    build_slab(problem, lo, len, &params, interp_box, true)
}

pub(super) fn build_slab(
    problem: &TransportProblem,
    lo: f64,
    len: f64,
    p: &SlabParams,
    interp_box: &Aabb,
    last: bool,
) -> Result<SlabNet> {
    let conv = &problem.convection;
    let (m, dy) = (conv.m(), conv.dy());
    let q = p.q;
    let h = len / q as f64;
    let blocks: Vec<Block> = (0..q)
        .map(|i| {
            let (a, b) = (lo + h * i as f64, lo + h * (i + 1) as f64);
            match conv {
                Convection::Affine(af) => affine_block(af, a, b, p, interp_box),
                Convection::General(g) => general_block(g, 0.5 * (a + b), p),
            }
        })
        .collect::<Result<_>>()?;
    let base = 1 + m + dy;
    let n_s = base + q * m;

    let mut init = LayerBuilder::with_capacity(base, n_s, n_s);
    for r in 0..base {
        init.push_row([(r, 1.0)], 0.0);
    }
    for _ in 0..q {
        for k in 0..m {
            init.push_row([(1 + k, 1.0)], 0.0);
        }
    }
    let init = ReluNetwork::from_affine(vec![init.finish(Activation::Identity)?])?;

    let pass = relu_net::identity(base);
    let all_base: Vec<usize> = (0..base).collect();
    let ys: Vec<usize> = (1 + m..base).collect();
    let block_inputs: Vec<Vec<usize>> = (0..q)
        .map(|i| {
            let mut idx: Vec<usize> = (base + i * m..base + (i + 1) * m).collect();
            if blocks[i].reads_y {
                idx.extend_from_slice(&ys);
            }
            idx
        })
        .collect();

    // Picard sweep: field values, cell increments, prefix sums, midpoints.
    let mut parts: Vec<(&ReluNetwork, &[usize])> = vec![(&pass, &all_base)];
    parts.extend(blocks.iter().zip(&block_inputs).map(|(b, i)| (&b.net, i.as_slice())));
    let front = parallelize_on(n_s, &parts)?;
    let offsets = block_offsets(&blocks, base);
    let mut g = GateBuilder::new(front.out_dim());
    for r in 0..base {
        g.term(1.0, &[r]);
        g.end_output();
    }
    for (i, blk) in blocks.iter().enumerate() {
        for k in 0..m {
            for (coef, yj, loc) in &blk.terms[k] {
                match yj {
                    Some(j) => g.term(coef * h, &[1 + m + j, offsets[i] + loc]),
                    None => g.term(coef * h, &[offsets[i] + loc]),
                }
            }
            g.end_output();
        }
    }
    let mut layers = front.into_layers();
    layers.push(Layer::Gate(g.finish()?));
    let mut shift = 1;
    while shift < q {
        let mut b = LayerBuilder::with_capacity(n_s, n_s, base + 2 * q * m);
        for r in 0..base {
            b.push_row([(r, 1.0)], 0.0);
        }
        for i in 0..q {
            for k in 0..m {
                let c = base + i * m + k;
                if i >= shift {
                    b.push_row([(c - shift * m, 1.0), (c, 1.0)], 0.0);
                } else {
                    b.push_row([(c, 1.0)], 0.0);
                }
            }
        }
        layers.push(Layer::Affine(b.finish(Activation::Identity)?));
        shift *= 2;
    }
    let mut b = LayerBuilder::with_capacity(n_s, n_s, base + 3 * q * m);
    for r in 0..base {
        b.push_row([(r, 1.0)], 0.0);
    }
    for i in 0..q {
        for k in 0..m {
            let c = base + i * m + k;
            if i > 0 {
                b.push_row([(1 + k, 1.0), (c - m, 0.5), (c, 0.5)], 0.0);
            } else {
                b.push_row([(1 + k, 1.0), (c, 0.5)], 0.0);
            }
        }
    }
    layers.push(Layer::Affine(b.finish(Activation::Identity)?));
    let picard = ReluNetwork::new(layers)?;

    // Quadrature at t: gates, field values, trilinear products.
    let rho = rho_gate(lo, lo + len, q)?;
    let t_idx = [0usize];
    let mut parts: Vec<(&ReluNetwork, &[usize])> = vec![(&pass, &all_base), (&rho, &t_idx)];
    parts.extend(blocks.iter().zip(&block_inputs).map(|(b, i)| (&b.net, i.as_slice())));
    let front = parallelize_on(n_s, &parts)?;
    let offsets = block_offsets(&blocks, base + q);
    let mut g = GateBuilder::new(front.out_dim());
    if !last {
        g.term(1.0, &[0]);
        g.end_output();
    }
    for k in 0..m {
        g.term(1.0, &[1 + k]);
        for (i, blk) in blocks.iter().enumerate() {
            for (coef, yj, loc) in &blk.terms[k] {
                match yj {
                    Some(j) => g.term(*coef, &[base + i, 1 + m + j, offsets[i] + loc]),
                    None => g.term(*coef, &[base + i, offsets[i] + loc]),
                }
            }
        }
        g.end_output();
    }
    if !last {
        for j in 0..dy {
            g.term(1.0, &[1 + m + j]);
            g.end_output();
        }
    }
    let mut layers = front.into_layers();
    layers.push(Layer::Gate(g.finish()?));
    let quad = ReluNetwork::new(layers)?;

    Ok(SlabNet {
        init: Arc::new(init),
        picard: Arc::new(picard),
        quad: Arc::new(quad),
        lo,
        len,
        q,
        m,
        dy,
        last,
    })
}

fn block_offsets(blocks: &[Block], start: usize) -> Vec<usize> {
    let mut off = start;
    blocks
        .iter()
        .map(|b| {
            let o = off;
            off += b.net.out_dim();
            o
        })
        .collect()
}

/// Slab averages `a°_{j,J}` on the interpolation grid, one hat-sum network
/// per `(j, k)`; tensor-hat interpolants for `m ≥ 2`.
fn affine_block(af: &super::AffineConvection, a: f64, b: f64, p: &SlabParams, interp_box: &Aabb) -> Result<Block> {
    let (m, dy) = (af.m(), af.dy());
    let grid = GridSpec::new(p.hat_q, interp_box.clone())?;
    let terms: Vec<Vec<(f64, Option<usize>, usize)>> =
        (0..m).map(|k| (0..dy).map(|j| (af.omega()[j], Some(j), j * m + k)).collect()).collect();
    if m == 1 {
        let (lo, hi) = (interp_box.lo[0], interp_box.hi[0]);
        let mut hidden = LayerBuilder::new(1);
        let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(dy);
        let mut out = [0.0];
        for c in af.components() {
            let values: Vec<f64> = (0..=p.hat_q)
                .map(|n| {
                    c.average_into(a, b, &grid.node(&[n]), &mut out);
                    out[0]
                })
                .collect();
            let mut row = Vec::new();
            for t in hat_sum_terms(lo, hi, &values) {
                row.push((hidden.rows(), t.c));
                hidden.push_row([(0, t.w)], t.b);
            }
            rows.push(row);
        }
        if hidden.rows() == 0 {
            hidden.push_row(std::iter::empty(), 0.0);
        }
        let n_hidden = hidden.rows();
        let mut outl = LayerBuilder::with_capacity(n_hidden, dy, n_hidden);
        for r in rows {
            outl.push_row(r, 0.0);
        }
        let net = ReluNetwork::from_affine(vec![hidden.finish(Activation::Relu)?, outl.finish(Activation::Identity)?])?;
        return Ok(Block { net, reads_y: false, terms });
    }
    let mut nets = Vec::with_capacity(dy * m);
    for (j, c) in af.components().iter().enumerate() {
        for k in 0..m {
            let c = c.clone();
            let sf = SampledFunction::from_fn(
                grid.clone(),
                move |x: &[f64]| {
                    let mut o = vec![0.0; x.len()];
                    c.average_into(a, b, x, &mut o);
                    o[k]
                },
                af.lambda(),
                af.a_circ()[j],
            )?;
            nets.push(lip_interp::lip_stable_net(&sf, p.delta)?.net);
        }
    }
    let all: Vec<usize> = (0..m).collect();
    let parts: Vec<(&ReluNetwork, &[usize])> = nets.iter().map(|n| (n, all.as_slice())).collect();
    Ok(Block { net: parallelize_on(m, &parts)?, reads_y: false, terms })
}

/// Implanted representation of `a(ξ, ·; ·)` with error at most `δ`.
fn general_block(g: &super::GeneralConvection, xi: f64, p: &SlabParams) -> Result<Block> {
    let n = p.n_rep.expect("general schedule has N");
    let rep = (g.builder)(xi, n)?;
    let m = g.field.m();
    if rep.in_dim() != m + g.field.dy() || rep.out_dim() != m {
        return Err(TransportError::Invalid(format!(
            "representation maps R^{} to R^{}, expected R^{} to R^{m}",
            rep.in_dim(),
            rep.out_dim(),
            m + g.field.dy()
        )));
    }
    let mut d = p.delta;
    let mut imp = implant(&rep, &vec![d; rep.depth()])?;
    if imp.error_bound > p.delta {
        d *= p.delta / imp.error_bound;
        imp = implant(&rep, &vec![d; rep.depth()])?;
    }
    if imp.net.layers().iter().any(|l| matches!(l, Layer::Gate(_))) {
        return Err(TransportError::Unsupported(
            "general-field slabs need representations whose implanted networks are pure ReLU".into(),
        ));
    }
    let terms = (0..m).map(|k| vec![(1.0, None, k)]).collect();
    Ok(Block { net: imp.net, reads_y: true, terms })
}
