use serde::{Deserialize, Serialize};

use super::{Convection, Result, TransportError, TransportProblem};
use super::slab::SlabParams;
use crate::comp_calculus::robust_ceil;
use crate::lip_interp::plan_size;
use crate::oracle::VectorField;
use crate::relu_net::{rho_breakpoint, rho_values, Aabb};

/// Partition of `[0, T̂]` into `K` slabs with `|I| ‖a‖ = 1/2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MacroGrid {
    pub t_hat: f64,
    /// Maximal slab length `|I| = 1 / (2‖a‖)`.
    pub slab_max: f64,
    pub k: usize,
}

impl MacroGrid {
    /// Length `T̂ / K ≤ |I|` of the slabs actually used.
    pub fn slab_len(&self) -> f64 {
        self.t_hat / self.k as f64
    }

    /// Junction `t_k = k T̂ / K`.
    pub fn junction(&self, k: usize) -> f64 {
        if k == self.k {
            self.t_hat
        } else {
            k as f64 * self.slab_len()
        }
    }

    /// Slab owning `t`, clamped to `0..K`.
    pub fn slab_of(&self, t: f64) -> usize {
        ((t / self.slab_len()).floor().max(0.0) as usize).min(self.k - 1)
    }
}

pub fn macro_grid(t_hat: f64, a_norm: f64) -> Result<MacroGrid> {
    if !(t_hat > 0.0) || !t_hat.is_finite() {
        return Err(TransportError::Invalid(format!("T_hat must be positive, got {t_hat}")));
    }
    if !(a_norm >= 1.0) || !a_norm.is_finite() {
        return Err(TransportError::Invalid(format!("||a|| must be at least 1, got {a_norm}")));
    }
    let slab_max = 1.0 / (2.0 * a_norm);
    let k = (robust_ceil(2.0 * a_norm * t_hat) as usize).max(1);
    Ok(MacroGrid { t_hat, slab_max, k })
}

/// Per-slab tolerance `(e^{1/2} − 1) ε e^{−K/2}`.
pub fn eta_for(eps: f64, k: usize) -> f64 {
    (0.5f64.exp() - 1.0) * eps * (-(k as f64) / 2.0).exp()
}

/// Picard sweeps `⌈log2(1 / (2η))⌉`, at least 1.
pub fn mu_for(eta: f64) -> usize {
    robust_ceil((1.0 / (2.0 * eta)).log2()).max(1.0) as usize
}

/// One-step tolerance `e^{−1/2} η`.
pub fn tau_for(eta: f64) -> f64 {
    (-0.5f64).exp() * eta
}

/// Quadrature cells `⌈2 A |I| / τ⌉`.
pub fn q_affine(a: f64, slab: f64, tau: f64) -> usize {
    (robust_ceil(2.0 * a * slab / tau) as usize).max(1)
}

/// Interpolation tolerance `τ / (2 |I| |ω|₁)`.
pub fn delta_affine(tau: f64, slab: f64, omega_l1: f64) -> f64 {
    tau / (2.0 * slab * omega_l1)
}

/// Ceiling on the number of stored parameters of a build.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Limits {
    pub max_params: f64,
}

impl Default for Limits {
    fn default() -> Self {
        Self { max_params: 3e7 }
    }
}

/// Parameters of a characteristic build.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub eps: f64,
    pub eps_internal: f64,
    pub k: usize,
    pub slab_len: f64,
    pub eta: f64,
    pub tau: f64,
    /// Picard sweeps per slab.
    pub mu: Vec<usize>,
    /// Quadrature cells per slab.
    pub q: usize,
    /// Implantation tolerance of the field networks.
    pub delta: f64,
    /// Interpolation grid resolution per axis (affine fields).
    pub hat_q: usize,
    /// Representation budget `N` (general fields).
    pub n_rep: Option<usize>,
    pub interp_box: Aabb,
    /// Stored parameters expected before the build (0 when unknown).
    pub predicted_params: f64,
}

/// Schedule for a characteristic build with certified error `eps`; the
/// internal target is `eps / 2`.
pub fn schedule(eps: f64, grid: &MacroGrid, problem: &TransportProblem, limits: &Limits) -> Result<Schedule> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(TransportError::Invalid(format!("eps must be positive, got {eps}")));
    }
    let eps_internal = eps / 2.0;
    let eta = eta_for(eps_internal, grid.k);
    let mu = mu_for(eta);
    let tau = tau_for(eta);
    let slab = grid.slab_len();
    let interp_box = problem.reach_box(eps.max(0.1));
    let m = problem.convection.m();
    let p = SlabParams::for_tau(&problem.convection, slab, tau, &interp_box)?;
    let predicted = match &problem.convection {
        Convection::Affine(a) => {
            let per_component = if m == 1 {
                3.0 * (p.hat_q as f64 + 3.0)
            } else {
                let nodes = (p.hat_q as f64 + 1.0).powi(m as i32);
                if nodes > 4e6 {
                    return Err(TransportError::ResourceCeiling {
                        what: format!("field interpolant with {nodes:.0} nodes"),
                        predicted: nodes,
                        limit: 4e6,
                    });
                }
                plan_size(&interp_box, p.hat_q, p.delta, a.a_circ_max())? as f64
            };
            2.0 * grid.k as f64 * p.q as f64 * (a.dy() * m) as f64 * per_component
        }
        Convection::General(_) => 0.0,
    };
    let SlabParams { q, delta, hat_q, n_rep } = p;
    if predicted > limits.max_params {
        return Err(TransportError::ResourceCeiling {
            what: format!("characteristic network at eps = {eps}"),
            predicted,
            limit: limits.max_params,
        });
    }
    Ok(Schedule {
        eps,
        eps_internal,
        k: grid.k,
        slab_len: slab,
        eta,
        tau,
        mu: vec![mu; grid.k],
        q,
        delta,
        hat_q,
        n_rep,
        interp_box,
        predicted_params: predicted,
    })
}

/// Picard iterates on a uniform time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct PicardTrajectory {
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl PicardTrajectory {
    /// Linear interpolation between grid values.
    pub fn at(&self, t: f64) -> Vec<f64> {
        let n = self.times.len() - 1;
        let (lo, hi) = (self.times[0], self.times[n]);
        if n == 0 || hi == lo {
            return self.values[0].clone();
        }
        let u = ((t - lo) / (hi - lo) * n as f64).clamp(0.0, n as f64);
        let i = (u.floor() as usize).min(n - 1);
        let s = u - i as f64;
        self.values[i].iter().zip(&self.values[i + 1]).map(|(a, b)| a + s * (b - a)).collect()
    }
}

/// `k` Picard iterates `Φ^k(z̄_x)` on `I = [lo, hi]`, started from the
/// constant `x`, with composite-midpoint quadrature on `n_grid` cells.
#[allow(clippy::too_many_arguments)]
pub fn picard_numeric(
    field: &dyn VectorField,
    lip: f64,
    lo: f64,
    hi: f64,
    x: &[f64],
    y: &[f64],
    k: usize,
    n_grid: usize,
) -> Result<PicardTrajectory> {
    let len = hi - lo;
    if !(len > 0.0) || n_grid == 0 {
        return Err(TransportError::Invalid("need a nonempty interval and at least one cell".into()));
    }
    if len * lip > 0.5 * (1.0 + 1e-12) {
        return Err(TransportError::Contraction(len * lip));
    }
    let h = len / n_grid as f64;
    let times: Vec<f64> = (0..=n_grid).map(|i| lo + h * i as f64).collect();
    let mut traj = PicardTrajectory { times, values: vec![x.to_vec(); n_grid + 1] };
    let m = x.len();
    let mut a = vec![0.0; m];
    for _ in 0..k {
        let mut next = Vec::with_capacity(n_grid + 1);
        let mut acc = x.to_vec();
        next.push(acc.clone());
        for c in 0..n_grid {
            let zm: Vec<f64> = traj.values[c].iter().zip(&traj.values[c + 1]).map(|(p, q)| 0.5 * (p + q)).collect();
            field.eval_into(lo + h * (c as f64 + 0.5), &zm, y, &mut a);
            for (v, ai) in acc.iter_mut().zip(&a) {
                *v += h * ai;
            }
            next.push(acc.clone());
        }
        traj.values = next;
    }
    Ok(traj)
}

/// `Σ_i ρ_i(t) g(ξ_i)` with midpoints `ξ_i` of the `q` cells of `[lo, hi]`.
pub fn rho_sum<G: Fn(f64) -> f64>(g: G, lo: f64, hi: f64, q: usize, t: f64) -> f64 {
    rho_values(lo, hi, q, t)
        .iter()
        .enumerate()
        .map(|(i, r)| r * g(0.5 * (rho_breakpoint(lo, hi, q, i) + rho_breakpoint(lo, hi, q, i + 1))))
        .sum()
}

/// `Σ_i ρ_i(t) avg(J_i)` where `avg(a, b)` is the mean of `g` over `[a, b]`.
pub fn rho_sum_avg<G: Fn(f64, f64) -> f64>(avg: G, lo: f64, hi: f64, q: usize, t: f64) -> f64 {
    rho_values(lo, hi, q, t)
        .iter()
        .enumerate()
        .map(|(i, r)| r * avg(rho_breakpoint(lo, hi, q, i), rho_breakpoint(lo, hi, q, i + 1)))
        .sum()
}

/// `|I|² L′ / (2q)`, error of [`rho_sum`] for `L′`-Lipschitz `g`.
pub fn quad_bound_lip(len: f64, lip: f64, q: usize) -> f64 {
    len * len * lip / (2.0 * q as f64)
}

/// `|I| ‖g‖ / (2q)`, error of [`rho_sum_avg`] for bounded `g`.
pub fn quad_bound_avg(len: f64, sup: f64, q: usize) -> f64 {
    len * sup / (2.0 * q as f64)
}
