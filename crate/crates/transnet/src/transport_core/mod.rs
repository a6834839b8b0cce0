//! Characteristic and solution networks for parametric transport
//! `u_t + a(t, x; y)·∇u = f`.
//!
//! The characteristic network is a chain of slab networks. Each slab runs a
//! fixed number of discretized Picard sweeps on the midpoint values of the
//! current iterate and ends in a quadrature stage evaluated at `t`. Slabs
//! pass `t` through and their quadrature gates clamp it, so the composed
//! chain equals the slab that owns `t` started from the previous junction
//! values.

mod catalog;
mod certify;
mod char_net;
mod schedule;
mod slab;
mod solution;

use std::sync::Arc;

use thiserror::Error;

use crate::comp_calculus::{compose_reps, CompError, CompRep, Factor, GrowthFunction};
use crate::lip_interp::InterpError;
use crate::oracle::{OracleError, VectorField};
use crate::relu_net::{Aabb, NetError};

pub use catalog::{CatalogComponent, ComponentField, Datum, FnComponent, Profile};
pub use certify::{
    beta, certify_char, certify_solution, lipschitz_certificate, predicted_complexity, Certifiable, CharCert, Kind,
    LipReport, SolutionCert,
};
pub use char_net::{build_char_net, CharNetwork, Direction, SlabInfo};
pub use schedule::{
    delta_affine, eta_for, macro_grid, mu_for, picard_numeric, q_affine, quad_bound_avg, quad_bound_lip, rho_sum,
    rho_sum_avg, schedule, tau_for, Limits, MacroGrid, PicardTrajectory, Schedule,
};
pub use slab::{build_slab_net, SlabNet};
pub use solution::{build_solution_net, SolutionNetwork, SolutionOptions};

#[derive(Debug, Error)]
pub enum TransportError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Interp(#[from] InterpError),
    #[error(transparent)]
    Comp(#[from] CompError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("invalid problem: {0}")]
    Invalid(String),
    #[error("declared bound violated: {0}")]
    Bound(String),
    #[error("build refused: {what} needs about {predicted:.3e} stored parameters, ceiling is {limit:.3e}")]
    ResourceCeiling { what: String, predicted: f64, limit: f64 },
    #[error("contraction precondition violated: |I| L = {0} > 1/2")]
    Contraction(f64),
    #[error("unsupported: {0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, TransportError>;

/// `a(t, x; y) = Σ_j y_j ω_j a°_j(t, x)` with `y ∈ [-1, 1]^{d_y}`.
#[derive(Clone)]
pub struct AffineConvection {
    m: usize,
    omega: Vec<f64>,
    components: Vec<Arc<dyn ComponentField>>,
    a_circ: Vec<f64>,
    lambda: f64,
    a_bound: f64,
}

impl std::fmt::Debug for AffineConvection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AffineConvection")
            .field("m", &self.m)
            .field("omega", &self.omega)
            .field("a_circ", &self.a_circ)
            .field("lambda", &self.lambda)
            .field("a_bound", &self.a_bound)
            .finish()
    }
}

impl AffineConvection {
    /// `a_circ[j]` bounds `|a°_j|` (max norm), `lambda` bounds the spatial
    /// Lipschitz constants. `A` defaults to `max(1, Σ ω_j A°_j)`.
    pub fn new(omega: Vec<f64>, components: Vec<Arc<dyn ComponentField>>, a_circ: Vec<f64>, lambda: f64) -> Result<Self> {
        let dy = omega.len();
        if dy == 0 || components.len() != dy || a_circ.len() != dy {
            return Err(TransportError::Invalid(format!(
                "need one component and one bound per weight: {} weights, {} components, {} bounds",
                dy,
                components.len(),
                a_circ.len()
            )));
        }
        let m = components[0].m();
        if m == 0 || components.iter().any(|c| c.m() != m) {
            return Err(TransportError::Invalid("components must share a positive spatial dimension".into()));
        }
        if omega.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(TransportError::Invalid("weights must be finite and nonnegative".into()));
        }
        if a_circ.iter().any(|a| !(*a >= 0.0) || !a.is_finite()) || !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(TransportError::Invalid("component bounds must be finite and nonnegative".into()));
        }
        let sum: f64 = omega.iter().zip(&a_circ).map(|(w, a)| w * a).sum();
        Ok(Self { m, omega, components, a_circ, lambda, a_bound: sum.max(1.0) })
    }

    /// Field from catalog profiles, `profiles[j][i]` the `i`-th coordinate of
    /// `a°_j`. Bounds are taken from the profiles.
    pub fn from_catalog(omega: Vec<f64>, profiles: Vec<Vec<Profile>>) -> Result<Self> {
        let mut comps: Vec<Arc<dyn ComponentField>> = Vec::new();
        let mut a_circ = Vec::new();
        let mut lambda = 0.0f64;
        for p in profiles {
            let c = CatalogComponent::new(p)?;
            a_circ.push(c.sup());
            lambda = lambda.max(c.lip_x());
            comps.push(Arc::new(c));
        }
        Self::new(omega, comps, a_circ, lambda)
    }

    /// Declares `A` explicitly; it must dominate `Σ ω_j A°_j` and be at least 1.
    pub fn with_a_bound(mut self, a: f64) -> Result<Self> {
        let sum: f64 = self.omega.iter().zip(&self.a_circ).map(|(w, a)| w * a).sum();
        if !(a >= 1.0) {
            return Err(TransportError::Bound(format!("A = {a} < 1; rescale time so that A >= 1")));
        }
        if a < sum {
            return Err(TransportError::Bound(format!("A = {a} is below sum_j w_j A°_j = {sum}")));
        }
        self.a_bound = a;
        Ok(self)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn dy(&self) -> usize {
        self.omega.len()
    }

    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    pub fn omega_l1(&self) -> f64 {
        self.omega.iter().sum()
    }

    pub fn components(&self) -> &[Arc<dyn ComponentField>] {
        &self.components
    }

    pub fn a_circ(&self) -> &[f64] {
        &self.a_circ
    }

    pub fn a_circ_max(&self) -> f64 {
        self.a_circ.iter().copied().fold(0.0, f64::max)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn a_bound(&self) -> f64 {
        self.a_bound
    }

    /// `L = A + Λ|ω|₁`.
    pub fn lip(&self) -> f64 {
        self.a_bound + self.lambda * self.omega_l1()
    }

    pub fn time_independent(&self) -> bool {
        self.components.iter().all(|c| c.time_independent())
    }

    /// `ã(s, x; y) = -a(t_ref - s, x; y)`.
    pub fn reversed(&self, t_ref: f64) -> Self {
        let components = self
            .components
            .iter()
            .map(|c| Arc::new(catalog::ReversedComponent { inner: c.clone(), t_ref }) as Arc<dyn ComponentField>)
            .collect();
        Self { components, ..self.clone() }
    }

    /// Sampled check of the declared sup and Lipschitz bounds on
    /// `[0, t_max] × x_box`. Returns the sampled `(max_j sup ratio, Λ)`.
    pub fn check_bounds(&self, t_max: f64, x_box: &Aabb, n: usize, seed: u64) -> Result<(f64, f64)> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let m = self.m;
        let (mut a, mut b) = (vec![0.0; m], vec![0.0; m]);
        let mut sup_ratio = 0.0f64;
        let mut lam = 0.0f64;
        for _ in 0..n {
            let t = rng.gen_range(0.0..=t_max);
            let x = x_box.sample(&mut rng);
            let mut xp = x.clone();
            let h = x_box.max_width() * 10f64.powf(-rng.gen_range(1.0..4.0));
            for v in xp.iter_mut() {
                *v += rng.gen_range(-h..=h);
            }
            let d = x.iter().zip(&xp).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
            for (j, c) in self.components.iter().enumerate() {
                c.eval_into(t, &x, &mut a);
                c.eval_into(t, &xp, &mut b);
                let s = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                if s > self.a_circ[j] * (1.0 + 1e-12) + 1e-15 {
                    return Err(TransportError::Bound(format!("|a°_{j}| reaches {s} > declared {}", self.a_circ[j])));
                }
                if self.a_circ[j] > 0.0 {
                    sup_ratio = sup_ratio.max(s / self.a_circ[j]);
                }
                if d > 0.0 {
                    let q = a.iter().zip(&b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max) / d;
                    if q > self.lambda * (1.0 + 1e-9) + 1e-12 {
                        return Err(TransportError::Bound(format!(
                            "Lipschitz quotient {q} of a°_{j} exceeds declared {}",
                            self.lambda
                        )));
                    }
                    lam = lam.max(q);
                }
            }
        }
        Ok((sup_ratio, lam))
    }
}

impl VectorField for AffineConvection {
    fn m(&self) -> usize {
        self.m
    }

    fn dy(&self) -> usize {
        self.omega.len()
    }

    fn eval_into(&self, t: f64, x: &[f64], y: &[f64], out: &mut [f64]) {
        let mut buf = [0.0f64; 8];
        let mut heap;
        let tmp: &mut [f64] = if self.m <= 8 {
            &mut buf[..self.m]
        } else {
            heap = vec![0.0; self.m];
            &mut heap
        };
        out.iter_mut().for_each(|v| *v = 0.0);
        for (j, c) in self.components.iter().enumerate() {
            let w = self.omega[j] * y[j];
            if w == 0.0 {
                continue;
            }
            c.eval_into(t, x, tmp);
            for (o, v) in out.iter_mut().zip(tmp.iter()) {
                *o += w * v;
            }
        }
    }
}

/// Builder `(t, N) ↦ G_N` of a compositional representation of `a(t, ·; ·)`
/// with inputs `(x, y)` and `m` outputs.
pub type RepBuilder = Arc<dyn Fn(f64, usize) -> std::result::Result<CompRep, CompError> + Send + Sync>;

/// Field known through an evaluator, bounds, and a representation builder
/// with `‖a(t) − G_N‖ ≤ ‖a‖ / γ(N)`.
#[derive(Clone)]
pub struct GeneralConvection {
    pub field: Arc<dyn VectorField>,
    pub a_bound: f64,
    /// `‖a‖`, the declared composition-class norm; also used as `L`.
    pub norm: f64,
    /// Time Lipschitz constant `L_t`.
    pub lip_t: f64,
    pub gf: GrowthFunction,
    pub builder: RepBuilder,
}

impl std::fmt::Debug for GeneralConvection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GeneralConvection")
            .field("a_bound", &self.a_bound)
            .field("norm", &self.norm)
            .field("lip_t", &self.lip_t)
            .field("gf", &self.gf)
            .finish()
    }
}

impl GeneralConvection {
    pub fn new(
        field: Arc<dyn VectorField>,
        a_bound: f64,
        norm: f64,
        lip_t: f64,
        gf: GrowthFunction,
        builder: RepBuilder,
    ) -> Result<Self> {
        if !(a_bound >= 1.0) || !(norm >= a_bound) {
            return Err(TransportError::Bound(format!("need 1 <= A <= ||a||, got A = {a_bound}, ||a|| = {norm}")));
        }
        if !(lip_t >= 0.0) {
            return Err(TransportError::Invalid("L_t must be nonnegative".into()));
        }
        Ok(Self { field, a_bound, norm, lip_t, gf, builder })
    }

    /// Spot check of the builder contract at time `t` on `n` random points
    /// of `x_box × [-1,1]^{d_y}`. Returns the largest observed error.
    pub fn check_builder(&self, t: f64, n_rep: usize, x_box: &Aabb, n: usize, seed: u64) -> Result<f64> {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let rep = (self.builder)(t, n_rep)?;
        let m = self.field.m();
        let ybox = Aabb::cube(self.field.dy(), -1.0, 1.0);
        let bound = self.norm / self.gf.eval(n_rep as f64);
        let mut worst = 0.0f64;
        for _ in 0..n {
            let x = x_box.sample(&mut rng);
            let y = ybox.sample(&mut rng);
            let mut xy = x.clone();
            xy.extend_from_slice(&y);
            let g = rep.eval(&xy);
            let a = self.field.eval(t, &x, &y);
            let e = (0..m).map(|i| (g[i] - a[i]).abs()).fold(0.0, f64::max);
            worst = worst.max(e);
        }
        if worst > bound * (1.0 + 1e-9) {
            return Err(TransportError::Bound(format!("builder error {worst} exceeds ||a||/gamma(N) = {bound}")));
        }
        Ok(worst)
    }
}

/// Convection field of a transport problem.
#[derive(Clone, Debug)]
pub enum Convection {
    Affine(AffineConvection),
    General(GeneralConvection),
}

impl Convection {
    pub fn m(&self) -> usize {
        match self {
            Convection::Affine(a) => a.m(),
            Convection::General(g) => g.field.m(),
        }
    }

    pub fn dy(&self) -> usize {
        match self {
            Convection::Affine(a) => a.dy(),
            Convection::General(g) => g.field.dy(),
        }
    }

    pub fn a_bound(&self) -> f64 {
        match self {
            Convection::Affine(a) => a.a_bound(),
            Convection::General(g) => g.a_bound,
        }
    }

    /// `‖a‖`: `L` for affine fields, the declared norm otherwise.
    pub fn norm(&self) -> f64 {
        match self {
            Convection::Affine(a) => a.lip(),
            Convection::General(g) => g.norm,
        }
    }

    pub fn field(&self) -> &dyn VectorField {
        match self {
            Convection::Affine(a) => a,
            Convection::General(g) => g.field.as_ref(),
        }
    }

    /// Time-reversed negated field `ã(s) = −a(t_ref − s)`.
    pub fn reversed(&self, t_ref: f64) -> Self {
        match self {
            Convection::Affine(a) => Convection::Affine(a.reversed(t_ref)),
            Convection::General(g) => {
                let inner = g.builder.clone();
                let m = g.field.m();
                let builder: RepBuilder = Arc::new(move |s: f64, n: usize| {
                    let rep = inner(t_ref - s, n)?;
                    let neg = Factor::linear(m, (0..m).map(|i| vec![(i, -1.0)]).collect(), vec![0.0; m]);
                    compose_reps(&CompRep::new(vec![neg])?, &rep)
                });
                Convection::General(GeneralConvection {
                    field: Arc::new(OwnedReversed { inner: g.field.clone(), t_ref }),
                    builder,
                    ..g.clone()
                })
            }
        }
    }

    pub fn time_independent(&self) -> bool {
        match self {
            Convection::Affine(a) => a.time_independent(),
            Convection::General(g) => g.lip_t == 0.0,
        }
    }
}

struct OwnedReversed {
    inner: Arc<dyn VectorField>,
    t_ref: f64,
}

impl VectorField for OwnedReversed {
    fn m(&self) -> usize {
        self.inner.m()
    }
    fn dy(&self) -> usize {
        self.inner.dy()
    }
    fn eval_into(&self, s: f64, x: &[f64], y: &[f64], out: &mut [f64]) {
        self.inner.eval_into(self.t_ref - s, x, y, out);
        out.iter_mut().for_each(|v| *v = -*v);
    }
}

/// Cauchy problem on `[0, T̂] × D × [-1,1]^{d_y}`.
#[derive(Clone, Debug)]
pub struct TransportProblem {
    pub convection: Convection,
    pub u0: Datum,
    pub f: Datum,
    pub t_hat: f64,
    pub domain: Aabb,
    /// Exponent `α` of the algebraic growth function of the data classes.
    pub alpha: f64,
}

impl TransportProblem {
    pub fn new(convection: Convection, u0: Datum, f: Datum, t_hat: f64, domain: Aabb) -> Result<Self> {
        let m = convection.m();
        if domain.dim() != m {
            return Err(TransportError::Invalid(format!("domain has dimension {}, field has m = {m}", domain.dim())));
        }
        if domain.is_degenerate() {
            return Err(TransportError::Invalid("domain box is degenerate".into()));
        }
        if !(t_hat > 0.0) || !t_hat.is_finite() {
            return Err(TransportError::Invalid(format!("T_hat must be positive, got {t_hat}")));
        }
        u0.validate(m)?;
        f.validate(m)?;
        Ok(Self { convection, u0, f, t_hat, domain, alpha: (m + 1) as f64 })
    }

    /// Problem used only for characteristics (`u0 = f = 0`).
    pub fn characteristics(convection: Convection, t_hat: f64, domain: Aabb) -> Result<Self> {
        Self::new(convection, Datum::Zero, Datum::Zero, t_hat, domain)
    }

    pub fn with_alpha(mut self, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(TransportError::Invalid("alpha must be positive".into()));
        }
        self.alpha = alpha;
        Ok(self)
    }

    /// Box holding every characteristic started in `D` up to `T̂`, widened
    /// by `margin` for approximation errors.
    pub fn reach_box(&self, margin: f64) -> Aabb {
        self.domain.inflate(self.convection.a_bound() * self.t_hat + margin)
    }

    /// Sampling box of `(t, x, y)`.
    pub fn sample_box(&self) -> Aabb {
        Aabb::cube(1, 0.0, self.t_hat).product(&self.domain).product(&Aabb::cube(self.convection.dy(), -1.0, 1.0))
    }

    /// `M = max{1, ‖u0‖, ‖f‖}`.
    pub fn data_norm(&self) -> f64 {
        1f64.max(self.u0.norm()).max(self.f.norm())
    }
}
