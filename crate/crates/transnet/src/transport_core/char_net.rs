use serde::{Deserialize, Serialize};

use super::schedule::{macro_grid, schedule, Limits, MacroGrid, Schedule};
use super::slab::{build_slab, SlabNet, SlabParams};
use super::{Convection, Result, TransportProblem};
use crate::lip_interp::Calibration;
use crate::relu_net::{Aabb, NetChain};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
}

impl std::str::FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "forward" => Ok(Direction::Forward),
            "backward" => Ok(Direction::Backward),
            _ => Err(format!("unknown direction {s:?}, expected forward or backward")),
        }
    }
}

/// Per-slab build metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlabInfo {
    pub lo: f64,
    pub len: f64,
    pub q: usize,
    pub mu: usize,
    pub size: u64,
    pub depth: usize,
    /// Error budget `Σ_{j≤k} (η + 2τ) e^{(k−j)/2}` at the end of the slab.
    pub budget: f64,
}

/// Network `(t, x, y) ↦ z` on `[0, T̂] × D × [-1,1]^{d_y}`.
///
/// Forward: `z(t; 0, x)`. Backward: the characteristic through `(T̂, x)`
/// evaluated at `T̂ − t`, built from the reversed field.
#[derive(Clone, Debug)]
pub struct CharNetwork {
    pub direction: Direction,
    pub t_hat: f64,
    pub m: usize,
    pub dy: usize,
    pub domain: Aabb,
    pub grid: MacroGrid,
    pub schedule: Schedule,
    pub slabs: Vec<SlabInfo>,
    /// `L̂ = A + T̂^{-1} + c3 (1 + A°) Λ |ω|₁`.
    pub lip_hat: f64,
    /// Time-Lipschitz threshold `A + |ω|₁ δ`.
    pub t_bound: f64,
    /// The stability threshold uses the pessimistic general-field bound.
    pub pessimistic: bool,
    chain: NetChain,
    nets: Vec<SlabNet>,
    slab_chains: Vec<NetChain>,
}

impl CharNetwork {
    pub fn eval(&self, t: f64, x: &[f64], y: &[f64]) -> Vec<f64> {
        let mut p = Vec::with_capacity(1 + self.m + self.dy);
        p.push(t);
        p.extend_from_slice(x);
        p.extend_from_slice(y);
        self.chain.eval(&p).expect("input dimension checked by construction")
    }

    /// Layer-by-layer reference evaluation.
    pub fn eval_exact(&self, t: f64, x: &[f64], y: &[f64]) -> Vec<f64> {
        let mut p = vec![t];
        p.extend_from_slice(x);
        p.extend_from_slice(y);
        self.chain.eval_exact(&p).expect("input dimension checked by construction")
    }

    pub fn chain(&self) -> &NetChain {
        &self.chain
    }

    pub fn slab_nets(&self) -> &[SlabNet] {
        &self.nets
    }

    pub fn size(&self) -> u64 {
        self.chain.size()
    }

    pub fn depth(&self) -> usize {
        self.chain.depth()
    }

    /// Slab `k` alone started from `w` at its left end, evaluated at `t`.
    pub fn eval_slab(&self, k: usize, t: f64, w: &[f64], y: &[f64]) -> Vec<f64> {
        let c = &self.slab_chains[k];
        let mut p = vec![t];
        p.extend_from_slice(w);
        p.extend_from_slice(y);
        let out = c.eval(&p).expect("input dimension checked by construction");
        if self.nets[k].last {
            out
        } else {
            out[1..1 + self.m].to_vec()
        }
    }

    /// Junction values `w_0 = x, w_k = slab_{k-1}(t_k, w_{k-1})`.
    pub fn junction_values(&self, x: &[f64], y: &[f64]) -> Vec<Vec<f64>> {
        let mut w = vec![x.to_vec()];
        for k in 0..self.slabs.len() {
            let t = self.grid.junction(k + 1);
            let next = self.eval_slab(k, t, w.last().expect("nonempty"), y);
            w.push(next);
        }
        w
    }

    /// `|slab_k(t_{k+1}) − slab_{k+1}(t_{k+1})|` for each interior junction.
    pub fn junction_gaps(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let w = self.junction_values(x, y);
        (1..self.slabs.len())
            .map(|k| {
                let t = self.grid.junction(k);
                let next = self.eval_slab(k, t, &w[k], y);
                next.iter().zip(&w[k]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
            })
            .collect()
    }
}

/// Characteristic network with certified error `eps` on
/// `[0, T̂] × D × [-1,1]^{d_y}`.
pub fn build_char_net(problem: &TransportProblem, eps: f64, direction: Direction, limits: &Limits) -> Result<CharNetwork> {
    let conv = match direction {
        Direction::Forward => problem.convection.clone(),
        Direction::Backward => problem.convection.reversed(problem.t_hat),
    };
    let work = TransportProblem { convection: conv, ..problem.clone() };
    let grid = macro_grid(problem.t_hat, work.convection.norm())?;
    let sched = schedule(eps, &grid, &work, limits)?;
    let params = SlabParams { q: sched.q, delta: sched.delta, hat_q: sched.hat_q, n_rep: sched.n_rep };
    let mut chain = NetChain::new();
    let mut nets = Vec::with_capacity(grid.k);
    let mut slabs = Vec::with_capacity(grid.k);
    let mut slab_chains = Vec::with_capacity(grid.k);
    let per_slab = sched.eta + 2.0 * sched.tau;
    let mut budget = 0.0;
    for k in 0..grid.k {
        let lo = grid.junction(k);
        let len = grid.junction(k + 1) - lo;
        let net = build_slab(&work, lo, len, &params, &sched.interp_box, k + 1 == grid.k)?;
        let mu = sched.mu[k];
        let sc = net.chain(mu)?;
        for st in sc.stages() {
            chain.push_compiled(st.net.clone(), st.compiled.clone(), st.repeat)?;
        }
        slab_chains.push(sc);
        budget = budget * 0.5f64.exp() + per_slab;
        slabs.push(SlabInfo {
            lo,
            len,
            q: net.q,
            mu,
            size: net.size(mu),
            depth: net.init.depth() + mu.saturating_sub(1) * net.picard.depth() + net.quad.depth(),
            budget,
        });
        nets.push(net);
    }
    let c3 = Calibration::default().c3;
    let (lip_hat, t_bound, pessimistic) = match &work.convection {
        Convection::Affine(a) => (
            a.a_bound() + 1.0 / problem.t_hat + c3 * (1.0 + a.a_circ_max()) * a.lambda() * a.omega_l1(),
            a.a_bound() + a.omega_l1() * sched.delta,
            false,
        ),
        Convection::General(g) => {
            (g.a_bound + 1.0 / problem.t_hat + c3 * (1.0 + g.a_bound) * g.norm, g.a_bound + sched.delta, true)
        }
    };
    Ok(CharNetwork {
        direction,
        t_hat: problem.t_hat,
        m: work.convection.m(),
        dy: work.convection.dy(),
        domain: problem.domain.clone(),
        grid,
        schedule: sched,
        slabs,
        lip_hat,
        t_bound,
        pessimistic,
        chain,
        nets,
        slab_chains,
    })
}
