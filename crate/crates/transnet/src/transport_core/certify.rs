use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::char_net::{CharNetwork, Direction};
use super::solution::SolutionNetwork;
use super::{Convection, Result, TransportError, TransportProblem};
use crate::comp_calculus::GrowthFunction;
use crate::oracle::{rk4_char, solution_oracle, OdeConfig};
use crate::relu_net::Aabb;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Char,
    Solution,
}

impl std::str::FromStr for Kind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "char" => Ok(Kind::Char),
            "solution" => Ok(Kind::Solution),
            _ => Err(format!("unknown kind {s:?}, expected char or solution")),
        }
    }
}

/// A built network on `[0, T̂] × D × [-1,1]^{d_y}` with stability thresholds.
pub trait Certifiable {
    /// Box of `(t, x, y)`.
    fn in_box(&self) -> Aabb;
    fn eval_point(&self, p: &[f64]) -> Vec<f64>;
    /// Thresholds `(xy, t)`.
    fn lip_bounds(&self) -> (f64, f64);
    fn pessimistic(&self) -> bool {
        false
    }
}

impl Certifiable for CharNetwork {
    fn in_box(&self) -> Aabb {
        Aabb::cube(1, 0.0, self.t_hat).product(&self.domain).product(&Aabb::cube(self.dy, -1.0, 1.0))
    }

    fn eval_point(&self, p: &[f64]) -> Vec<f64> {
        self.eval(p[0], &p[1..1 + self.m], &p[1 + self.m..])
    }

    fn lip_bounds(&self) -> (f64, f64) {
        ((self.lip_hat * self.t_hat).exp(), self.t_bound)
    }

    fn pessimistic(&self) -> bool {
        self.pessimistic
    }
}

impl Certifiable for SolutionNetwork {
    fn in_box(&self) -> Aabb {
        self.char_net.in_box()
    }

    fn eval_point(&self, p: &[f64]) -> Vec<f64> {
        vec![self.eval(p[0], &p[1..1 + self.m], &p[1 + self.m..])]
    }

    /// `(Lip u0 + T̂ Lip f) e^{L̂T̂}` and `Lip u0 B_t + ‖f‖ + T̂ Lip f B_t`.
    fn lip_bounds(&self) -> (f64, f64) {
        let (zxy, bt) = self.char_net.lip_bounds();
        let xy = (self.lip_u0 + self.t_hat * self.lip_f) * zxy;
        let t = self.lip_u0 * bt + self.sup_f + self.t_hat * self.lip_f * bt;
        (xy, t)
    }

    fn pessimistic(&self) -> bool {
        self.char_net.pessimistic
    }
}

/// Sampled error of a characteristic network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CharCert {
    pub eps: f64,
    pub sup_err: f64,
    pub mean_err: f64,
    /// Largest error among samples with `t` in each slab.
    pub per_slab: Vec<f64>,
    pub budgets: Vec<f64>,
    pub n_samples: usize,
    pub oracle_tol: f64,
    pub pass: bool,
}

/// Sup error of `net` against RK4 at tolerance `eps / 100` on `n` uniform
/// samples of `[0, T̂] × D × [-1,1]^{d_y}`.
pub fn certify_char(net: &CharNetwork, problem: &TransportProblem, n: usize, seed: u64) -> Result<CharCert> {
    let eps = net.schedule.eps;
    let cfg = OdeConfig::for_certificate(eps);
    cfg.check_against(eps)?;
    let field = problem.convection.field();
    let bbox = net.in_box();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (m, t_hat) = (net.m, net.t_hat);
    let mut per_slab = vec![0.0f64; net.slabs.len()];
    let (mut sup, mut sum) = (0.0f64, 0.0);
    for _ in 0..n {
        let p = bbox.sample(&mut rng);
        let (t, x, y) = (p[0], &p[1..1 + m], &p[1 + m..]);
        let exact = match net.direction {
            Direction::Forward => rk4_char(field, 0.0, t, x, y, cfg)?.z,
            Direction::Backward => rk4_char(field, t_hat, t_hat - t, x, y, cfg)?.z,
        };
        let got = net.eval(t, x, y);
        let e = got.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let k = net.grid.slab_of(t);
        per_slab[k] = per_slab[k].max(e);
        sup = sup.max(e);
        sum += e;
    }
    let tol = match cfg {
        OdeConfig::Tolerance { tol } => tol,
        OdeConfig::Steps { .. } => 0.0,
    };
    Ok(CharCert {
        eps,
        sup_err: sup,
        mean_err: if n > 0 { sum / n as f64 } else { 0.0 },
        per_slab,
        budgets: net.slabs.iter().map(|s| s.budget).collect(),
        n_samples: n,
        oracle_tol: tol,
        pass: sup <= eps,
    })
}

/// Sampled error of a solution network; `sup_err_minus` is the error of the
/// same evaluation assembled with the opposite sign of the source term.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionCert {
    pub eps: f64,
    pub sup_err: f64,
    pub sup_err_minus: f64,
    pub n_samples: usize,
    pub pass: bool,
}

pub fn certify_solution(sol: &SolutionNetwork, problem: &TransportProblem, n: usize, seed: u64) -> Result<SolutionCert> {
    let eps = sol.eps;
    let cfg = OdeConfig::for_certificate(eps);
    cfg.check_against(eps)?;
    let field = problem.convection.field();
    let bbox = sol.in_box();
    let m = sol.m;
    let u0 = |x: &[f64], _y: &[f64]| problem.u0.eval(0.0, x);
    let f = |s: f64, x: &[f64], _y: &[f64]| problem.f.eval(s, x);
    let f_ref: Option<&dyn Fn(f64, &[f64], &[f64]) -> f64> = if problem.f.is_zero() { None } else { Some(&f) };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut sup, mut sup_minus) = (0.0f64, 0.0f64);
    for _ in 0..n {
        let p = bbox.sample(&mut rng);
        let (t, x, y) = (p[0], &p[1..1 + m], &p[1 + m..]);
        let exact = solution_oracle(field, &u0, f_ref, None, t, x, y, cfg)?.value;
        let (u, s) = sol.eval_parts(t, x, y);
        sup = sup.max((u + sol.sign * s - exact).abs());
        sup_minus = sup_minus.max((u - sol.sign * s - exact).abs());
    }
    Ok(SolutionCert { eps, sup_err: sup, sup_err_minus: sup_minus, n_samples: n, pass: sup <= eps })
}

/// Sampled Lipschitz lower bounds in `t` and in `(x, y)` separately.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipReport {
    pub lip_xy: f64,
    pub lip_t: f64,
    pub bound_xy: f64,
    pub bound_t: f64,
    pub pass: bool,
    /// The `(x, y)` threshold comes from the general-field estimate.
    pub pessimistic: bool,
}

/// Difference quotients over `n_samples` pairs per direction; half of the
/// pairs are uniform, half are local perturbations of size up to `1e-2` of
/// the box width.
pub fn lipschitz_certificate(net: &dyn Certifiable, n_samples: usize, seed: u64) -> LipReport {
    let bbox = net.in_box();
    let d = bbox.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let quotient = |axes: std::ops::Range<usize>, rng: &mut ChaCha8Rng| -> f64 {
        let mut best = 0.0f64;
        for i in 0..n_samples {
            let p = bbox.sample(rng);
            let mut q = if i % 2 == 0 {
                let r = bbox.sample(rng);
                let mut q = p.clone();
                q[axes.clone()].copy_from_slice(&r[axes.clone()]);
                q
            } else {
                let mut q = p.clone();
                for a in axes.clone() {
                    q[a] += 1e-2 * bbox.width(a) * (2.0 * rng.gen::<f64>() - 1.0);
                }
                q
            };
            bbox.clamp(&mut q);
            let dist = axes.clone().map(|a| (p[a] - q[a]).abs()).fold(0.0, f64::max);
            if dist < 1e-12 {
                continue;
            }
            let (fp, fq) = (net.eval_point(&p), net.eval_point(&q));
            let diff = fp.iter().zip(&fq).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            best = best.max(diff / dist);
        }
        best
    };
    let lip_t = quotient(0..1, &mut rng);
    let lip_xy = quotient(1..d, &mut rng);
    let (bound_xy, bound_t) = net.lip_bounds();
    // rounding slack on the threshold comparison
    let slack = 1.0 + 1e-9;
    LipReport {
        lip_xy,
        lip_t,
        bound_xy,
        bound_t,
        pass: lip_xy <= bound_xy * slack && lip_t <= bound_t * slack,
        pessimistic: net.pessimistic(),
    }
}

/// Closed-form size prediction times `constant`.
///
/// With `r = e^{LT̂}/ε`:
/// - char, affine field: `d_y m² A T̂ r^{m+1} |log₂ r|²`
/// - char, general field (`s = m`): `A T̂ 2^s ‖a‖^{2s}` times
///   `C^{−1/α} r^{(1+s)(1+α)/α} |log₂ r|²` (algebraic γ) or
///   `α^{−(1+s)} r^{1+s} |log₂ r|^{3+s}` (exponential γ)
/// - solution: `d_y r^{m+1+β} |log₂ r|²`, `β = max{1, (m+1)/α}`
pub fn predicted_complexity(problem: &TransportProblem, eps: f64, kind: Kind, constant: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(TransportError::Invalid(format!("eps must be positive, got {eps}")));
    }
    let conv = &problem.convection;
    let (m, dy, t_hat) = (conv.m() as f64, conv.dy() as f64, problem.t_hat);
    let r = (conv.norm() * t_hat).exp() / eps;
    let lg = r.log2().abs();
    let v = match (kind, conv) {
        (Kind::Char, Convection::Affine(a)) => dy * m * m * a.a_bound() * t_hat * r.powf(m + 1.0) * lg * lg,
        (Kind::Char, Convection::General(g)) => {
            let s = m;
            let pre = g.a_bound * t_hat * 2f64.powf(s) * g.norm.powf(2.0 * s);
            match g.gf {
                GrowthFunction::Alg { c, alpha } => {
                    pre * c.powf(-1.0 / alpha) * r.powf((1.0 + s) * (1.0 + alpha) / alpha) * lg * lg
                }
                GrowthFunction::Exp { alpha, .. } => pre * alpha.powf(-(1.0 + s)) * r.powf(1.0 + s) * lg.powf(3.0 + s),
            }
        }
        (Kind::Solution, _) => {
            let beta = beta(m as usize, problem.alpha);
            dy * r.powf(m + 1.0 + beta) * lg * lg
        }
    };
    Ok(constant * v)
}

/// `β = max{1, (m+1)/α}`.
pub fn beta(m: usize, alpha: f64) -> f64 {
    1f64.max((m as f64 + 1.0) / alpha)
}
