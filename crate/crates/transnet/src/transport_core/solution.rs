use serde::{Deserialize, Serialize};

use super::char_net::{build_char_net, CharNetwork, Direction};
use super::schedule::Limits;
use super::{Datum, Result, TransportError, TransportProblem};
use crate::lip_interp::{lip_stable_net, required_q, GridSpec, LipStableNet, SampledFunction};
use crate::relu_net::{relu, rho_breakpoint, rho_gate, Aabb, CompiledNet};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolutionOptions {
    /// Assemble `u0 − Σ ρ_i f_i` instead of `u0 + Σ ρ_i f_i`.
    pub minus_sign: bool,
    pub limits: Limits,
}

#[derive(Clone, Debug)]
enum DataNet {
    Zero,
    Const(f64),
    Stable(Box<LipStableNet>),
}

impl DataNet {
    fn build(d: &Datum, t: f64, bbox: &Aabb, eta: f64) -> Result<Self> {
        match d {
            Datum::Zero => Ok(DataNet::Zero),
            Datum::Constant { value } => Ok(DataNet::Const(*value)),
            Datum::Profile { profile } => {
                let lip = profile.lip_x();
                let q = required_q(&GridSpec::new(1, bbox.clone())?, lip, eta);
                let p = profile.clone();
                let sf = SampledFunction::from_fn(GridSpec::new(q, bbox.clone())?, move |x| p.eval(t, x), lip, profile.sup())?;
                Ok(DataNet::Stable(Box::new(lip_stable_net(&sf, eta.min(0.5))?)))
            }
        }
    }

    fn eval(&self, x: &[f64]) -> f64 {
        match self {
            DataNet::Zero => 0.0,
            DataNet::Const(c) => *c,
            DataNet::Stable(n) => n.eval(x),
        }
    }

    fn size(&self) -> u64 {
        match self {
            DataNet::Zero => 0,
            DataNet::Const(c) => u64::from(*c != 0.0),
            DataNet::Stable(n) => n.net.size() as u64,
        }
    }

    fn depth(&self) -> usize {
        match self {
            DataNet::Stable(n) => n.net.depth(),
            _ => 1,
        }
    }
}

/// `u(t, x, y) ≈ N_u0(N_z(t, x, y)) ± Σ_i ρ_i(t) N_f(ξ_i, N_z((t − ξ_i)_+, x, y))`
/// where `N_z` is the backward characteristic network of the time-independent
/// field.
#[derive(Clone, Debug)]
pub struct SolutionNetwork {
    pub char_net: CharNetwork,
    pub eps: f64,
    /// `ε̃ = ε / (7 T̂ M)`.
    pub eps_tilde: f64,
    /// `M = max{1, ‖u0‖, ‖f‖}`.
    pub data_norm: f64,
    /// Data tolerance `M^{−1/α} ε̃^{1+1/α}`.
    pub eta: f64,
    /// Source quadrature cells on `[0, T̂]`.
    pub q: usize,
    pub xi: Vec<f64>,
    pub sign: f64,
    pub t_hat: f64,
    pub m: usize,
    pub dy: usize,
    pub(super) lip_u0: f64,
    pub(super) lip_f: f64,
    pub(super) sup_f: f64,
    u0: DataNet,
    f: Vec<DataNet>,
    f_shared: bool,
    rho: CompiledNet,
    rho_size: u64,
}

impl SolutionNetwork {
    /// Initial-datum part and source part; the value is `u0 + sign · f`.
    pub fn eval_parts(&self, t: f64, x: &[f64], y: &[f64]) -> (f64, f64) {
        let z0 = self.char_net.eval(t, x, y);
        let u = self.u0.eval(&z0);
        let rho = self.rho.eval(&[t]);
        let mut s = 0.0;
        for (i, r) in rho.iter().enumerate() {
            // ρ_i(t) = 0 annihilates the product exactly
            if *r == 0.0 {
                continue;
            }
            let fi = if self.f_shared { &self.f[0] } else { &self.f[i] };
            s += r * match fi {
                DataNet::Zero => 0.0,
                DataNet::Const(c) => *c,
                DataNet::Stable(_) => fi.eval(&self.char_net.eval(relu(t - self.xi[i]), x, y)),
            };
        }
        (u, s)
    }

    pub fn eval(&self, t: f64, x: &[f64], y: &[f64]) -> f64 {
        let (u, s) = self.eval_parts(t, x, y);
        u + self.sign * s
    }

    /// `size(N_u0) + (1 + q) size(N_z) + Σ_i size(N_f,i) + size(ρ) + 4q + 1`:
    /// the `q` shifted copies of `N_z` need `(t − ξ_i)_+` (2 each), the
    /// products one gate term each, the final sum `q + 1` weights.
    pub fn size(&self) -> u64 {
        let q = self.q as u64;
        let f: u64 = if self.f_shared { q * self.f[0].size() } else { self.f.iter().map(DataNet::size).sum() };
        self.u0.size() + (1 + q) * self.char_net.size() + f + self.rho_size + 4 * q + 1
    }

    pub fn depth(&self) -> usize {
        let data = self.f.iter().map(DataNet::depth).chain([self.u0.depth()]).max().unwrap_or(1);
        1 + self.char_net.depth() + data + 2
    }
}

/// Solution network with error `eps`; requires a time-independent field.
pub fn build_solution_net(problem: &TransportProblem, eps: f64, opts: &SolutionOptions) -> Result<SolutionNetwork> {
    if !(eps > 0.0) {
        return Err(TransportError::Invalid(format!("eps must be positive, got {eps}")));
    }
    if !problem.convection.time_independent() {
        return Err(TransportError::Unsupported(
            "solution networks reuse one characteristic network and need a time-independent field".into(),
        ));
    }
    let t_hat = problem.t_hat;
    let m_norm = problem.data_norm();
    let eps_tilde = eps / (7.0 * t_hat * m_norm);
    let alpha = problem.alpha;
    let eta = m_norm.powf(-1.0 / alpha) * eps_tilde.powf(1.0 + 1.0 / alpha);
    let q = (robust_q(t_hat / (2.0 * eps_tilde))).max(1);
    let char_net = build_char_net(problem, eps_tilde, Direction::Backward, &opts.limits)?;
    let bbox = char_net.schedule.interp_box.clone();
    let u0 = DataNet::build(&problem.u0, 0.0, &bbox, eta)?;
    let xi: Vec<f64> =
        (0..q).map(|i| 0.5 * (rho_breakpoint(0.0, t_hat, q, i) + rho_breakpoint(0.0, t_hat, q, i + 1))).collect();
    let f_shared = problem.f.time_independent();
    let f = if f_shared {
        vec![DataNet::build(&problem.f, 0.0, &bbox, eta)?]
    } else {
        xi.iter().map(|s| DataNet::build(&problem.f, *s, &bbox, eta)).collect::<Result<_>>()?
    };
    let rho_net = rho_gate(0.0, t_hat, q)?;
    Ok(SolutionNetwork {
        eps,
        eps_tilde,
        data_norm: m_norm,
        eta,
        q,
        xi,
        sign: if opts.minus_sign { -1.0 } else { 1.0 },
        t_hat,
        m: problem.convection.m(),
        dy: problem.convection.dy(),
        lip_u0: problem.u0.lip_x(),
        lip_f: problem.f.lip_x(),
        sup_f: problem.f.sup(),
        u0,
        f,
        f_shared,
        rho: CompiledNet::new(&rho_net),
        rho_size: rho_net.size() as u64,
        char_net,
    })
}

fn robust_q(x: f64) -> usize {
    crate::comp_calculus::robust_ceil(x) as usize
}
