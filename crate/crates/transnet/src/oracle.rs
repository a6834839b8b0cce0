//! Reference solvers: fixed-step RK4 with step-halving error estimates,
//! adaptive Simpson quadrature, solution values by backward tracing and
//! closed forms for constant fields.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::relu_net::Aabb;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("field returned a non-finite value at t = {t}")]
    NonFinite { t: f64 },
    #[error("invalid oracle configuration: {0}")]
    Config(String),
    #[error("tolerance {tol} not reached with {steps} steps (estimate {estimate})")]
    NotConverged { tol: f64, steps: usize, estimate: f64 },
    #[error("field is not constant in (t, x): deviation {0}")]
    NotConstant(f64),
}

pub type Result<T> = std::result::Result<T, OracleError>;

/// `a(t, x; y)` with `x ∈ R^m`, `y ∈ R^{d_y}`.
pub trait VectorField: Send + Sync {
    fn m(&self) -> usize;
    fn dy(&self) -> usize;
    fn eval_into(&self, t: f64, x: &[f64], y: &[f64], out: &mut [f64]);

    fn eval(&self, t: f64, x: &[f64], y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.m()];
        self.eval_into(t, x, y, &mut out);
        out
    }
}

/// Field given by a closure.
pub struct FnField<F> {
    pub m: usize,
    pub dy: usize,
    pub f: F,
}

impl<F> VectorField for FnField<F>
where
    F: Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync,
{
    fn m(&self) -> usize {
        self.m
    }
    fn dy(&self) -> usize {
        self.dy
    }
    fn eval_into(&self, t: f64, x: &[f64], y: &[f64], out: &mut [f64]) {
        (self.f)(t, x, y, out)
    }
}

/// `-a(t_ref - s, x; y)`: the field whose forward flow is the backward flow
/// of `a` started at `t_ref`.
pub struct Reversed<'a> {
    pub inner: &'a dyn VectorField,
    pub t_ref: f64,
}

impl VectorField for Reversed<'_> {
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

/// Step control for [`rk4_char`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum OdeConfig {
    /// Fixed number of steps; with `richardson` the run is repeated with
    /// half the step and the difference gives the error estimate.
    Steps { n: usize, richardson: bool },
    /// Doubles the step count until the step-halving estimate is below `tol`.
    Tolerance { tol: f64 },
}

impl OdeConfig {
    /// Configuration for checking a certificate at tolerance `cert`: the
    /// oracle tolerance is `cert / 100`.
    pub fn for_certificate(cert: f64) -> Self {
        OdeConfig::Tolerance { tol: cert / 100.0 }
    }

    /// Rejects configurations that are not at least ten times tighter than
    /// `cert`.
    pub fn check_against(&self, cert: f64) -> Result<()> {
        match *self {
            OdeConfig::Tolerance { tol } if tol * 10.0 > cert => {
                Err(OracleError::Config(format!("oracle tolerance {tol} is not 10x below {cert}")))
            }
            OdeConfig::Steps { richardson: false, .. } => {
                Err(OracleError::Config("fixed steps without an error estimate cannot certify".into()))
            }
            _ => Ok(()),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            OdeConfig::Steps { n, .. } if n < 4 => Err(OracleError::Config("at least 4 steps".into())),
            OdeConfig::Tolerance { tol } if !(tol > 0.0) => Err(OracleError::Config("tolerance must be positive".into())),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OdeSolution {
    pub z: Vec<f64>,
    /// Max-norm step-halving estimate (`|z_{n} - z_{2n}| / 15`), 0 without one.
    pub err_estimate: f64,
    pub steps: usize,
}

const MAX_STEPS: usize = 1 << 22;

fn rk4_fixed(field: &dyn VectorField, t0: f64, t1: f64, x: &[f64], y: &[f64], n: usize) -> Result<Vec<f64>> {
    let m = x.len();
    let h = (t1 - t0) / n as f64;
    let mut z = x.to_vec();
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m]);
    let mut tmp = vec![0.0; m];
    for i in 0..n {
        let t = t0 + h * i as f64;
        field.eval_into(t, &z, y, &mut k1);
        for j in 0..m {
            tmp[j] = z[j] + 0.5 * h * k1[j];
        }
        field.eval_into(t + 0.5 * h, &tmp, y, &mut k2);
        for j in 0..m {
            tmp[j] = z[j] + 0.5 * h * k2[j];
        }
        field.eval_into(t + 0.5 * h, &tmp, y, &mut k3);
        for j in 0..m {
            tmp[j] = z[j] + h * k3[j];
        }
        field.eval_into(t + h, &tmp, y, &mut k4);
        for j in 0..m {
            z[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(OracleError::NonFinite { t });
        }
    }
    Ok(z)
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
}

/// Endpoint `z(t1)` of `ż = a(t, z; y)`, `z(t0) = x`. Integrates backwards
/// when `t1 < t0`.
pub fn rk4_char(field: &dyn VectorField, t0: f64, t1: f64, x: &[f64], y: &[f64], cfg: OdeConfig) -> Result<OdeSolution> {
    cfg.validate()?;
    if x.len() != field.m() || y.len() != field.dy() {
        return Err(OracleError::Config(format!(
            "expected x in R^{} and y in R^{}, got {} and {}",
            field.m(),
            field.dy(),
            x.len(),
            y.len()
        )));
    }
    if t0 == t1 {
        return Ok(OdeSolution { z: x.to_vec(), err_estimate: 0.0, steps: 0 });
    }
    match cfg {
        OdeConfig::Steps { n, richardson: false } => {
            Ok(OdeSolution { z: rk4_fixed(field, t0, t1, x, y, n)?, err_estimate: 0.0, steps: n })
        }
        OdeConfig::Steps { n, richardson: true } => {
            let coarse = rk4_fixed(field, t0, t1, x, y, n)?;
            let fine = rk4_fixed(field, t0, t1, x, y, 2 * n)?;
            Ok(OdeSolution { err_estimate: max_diff(&coarse, &fine) / 15.0, z: fine, steps: 2 * n })
        }
        OdeConfig::Tolerance { tol } => {
            let mut n = 8usize.max((8.0 * (t1 - t0).abs()).ceil() as usize);
            let mut coarse = rk4_fixed(field, t0, t1, x, y, n)?;
            loop {
                let fine = rk4_fixed(field, t0, t1, x, y, 2 * n)?;
                let est = max_diff(&coarse, &fine) / 15.0;
                if est <= tol {
                    return Ok(OdeSolution { z: fine, err_estimate: est, steps: 2 * n });
                }
                n *= 2;
                if n > MAX_STEPS {
                    return Err(OracleError::NotConverged { tol, steps: n, estimate: est });
                }
                coarse = fine;
            }
        }
    }
}

/// Trajectory on a uniform grid of `n` RK4 steps with node derivatives, for
/// cubic Hermite dense output.
#[derive(Clone, Debug)]
pub struct DenseTrajectory {
    pub t0: f64,
    pub t1: f64,
    pub z: Vec<Vec<f64>>,
    pub dz: Vec<Vec<f64>>,
}

impl DenseTrajectory {
    pub fn new(field: &dyn VectorField, t0: f64, t1: f64, x: &[f64], y: &[f64], n: usize) -> Result<Self> {
        let n = n.max(1);
        let h = (t1 - t0) / n as f64;
        let mut z = vec![x.to_vec()];
        let mut dz = vec![field.eval(t0, x, y)];
        for i in 0..n {
            let t = t0 + h * i as f64;
            let next = rk4_fixed(field, t, t + h, z.last().expect("nonempty"), y, 1)?;
            dz.push(field.eval(t + h, &next, y));
            z.push(next);
        }
        Ok(Self { t0, t1, z, dz })
    }

    pub fn at(&self, t: f64) -> Vec<f64> {
        let n = self.z.len() - 1;
        let h = (self.t1 - self.t0) / n as f64;
        let u = ((t - self.t0) / h).clamp(0.0, n as f64);
        let i = (u.floor() as usize).min(n - 1);
        let s = u - i as f64;
        let (h00, h10, h01, h11) = (
            2.0 * s.powi(3) - 3.0 * s * s + 1.0,
            s.powi(3) - 2.0 * s * s + s,
            -2.0 * s.powi(3) + 3.0 * s * s,
            s.powi(3) - s * s,
        );
        (0..self.z[i].len())
            .map(|j| h00 * self.z[i][j] + h10 * h * self.dz[i][j] + h01 * self.z[i + 1][j] + h11 * h * self.dz[i + 1][j])
            .collect()
    }
}

/// Adaptive Simpson quadrature of `f` on `[a, b]` to absolute tolerance
/// `tol`, recursion depth at most 50.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let diff = left + right - whole;
        if depth == 0 || diff.abs() <= 15.0 * tol {
            return left + right + diff / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    if a == b {
        return 0.0;
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(&f, a, b, fa, fm, fb, whole, tol, 50)
}

/// Value of the transport solution with its provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct SolutionValue {
    pub value: f64,
    pub foot: Vec<f64>,
    /// The foot point left `support`; `u0` was replaced by its extension by zero.
    pub out_of_support: bool,
    pub ode_estimate: f64,
}

/// `u(t, x, y) = u0(z(0), y) + ∫_0^t f(s, z(s), y) ds` where `z` is the
/// characteristic through `(t, x)`, traced backwards.
#[allow(clippy::too_many_arguments)]
pub fn solution_oracle(
    field: &dyn VectorField,
    u0: &dyn Fn(&[f64], &[f64]) -> f64,
    f: Option<&dyn Fn(f64, &[f64], &[f64]) -> f64>,
    support: Option<&Aabb>,
    t: f64,
    x: &[f64],
    y: &[f64],
    cfg: OdeConfig,
) -> Result<SolutionValue> {
    let end = rk4_char(field, t, 0.0, x, y, cfg)?;
    let out_of_support = support.is_some_and(|b| !b.contains(&end.z));
    let mut value = if out_of_support { 0.0 } else { u0(&end.z, y) };
    if let Some(f) = f {
        let (n, tol) = match cfg {
            OdeConfig::Steps { n, .. } => (n, 1e-10),
            OdeConfig::Tolerance { tol } => (end.steps.max(8), tol),
        };
        let traj = DenseTrajectory::new(field, t, 0.0, x, y, n)?;
        value += adaptive_simpson(|s| f(s, &traj.at(s), y), 0.0, t, tol);
    }
    Ok(SolutionValue { value, foot: end.z, out_of_support, ode_estimate: end.err_estimate })
}

/// Closed forms for a field `a(y)` that is constant in `(t, x)`.
pub struct ExactConst<'a> {
    field: &'a dyn VectorField,
}

impl<'a> ExactConst<'a> {
    /// Checks constancy in `(t, x)` at `n` deterministic points of
    /// `[0, t_max] × x_box` for each listed parameter.
    pub fn new(field: &'a dyn VectorField, t_max: f64, x_box: &Aabb, ys: &[Vec<f64>], n: usize) -> Result<Self> {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let tb = Aabb::cube(1, 0.0, t_max.max(1e-12));
        for y in ys {
            let a0 = field.eval(0.0, &x_box.lo, y);
            for _ in 0..n {
                let t = tb.sample(&mut rng)[0];
                let x = x_box.sample(&mut rng);
                let dev = max_diff(&field.eval(t, &x, y), &a0);
                if dev > 1e-14 * (1.0 + a0.iter().fold(0.0f64, |m, v| m.max(v.abs()))) {
                    return Err(OracleError::NotConstant(dev));
                }
            }
        }
        Ok(Self { field })
    }

    /// `z(t; x; y) = x + t a(y)` (characteristic starting at time 0).
    pub fn z(&self, t: f64, x: &[f64], y: &[f64]) -> Vec<f64> {
        let a = self.field.eval(0.0, x, y);
        x.iter().zip(a).map(|(xi, ai)| xi + t * ai).collect()
    }

    /// `u(t, x, y) = u0(x - t a(y), y)` for a source-free problem.
    pub fn u(&self, u0: &dyn Fn(&[f64], &[f64]) -> f64, t: f64, x: &[f64], y: &[f64]) -> f64 {
        u0(&self.z(-t, x, y), y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hermite_reproduces_linear_motion() {
        let f = FnField { m: 1, dy: 1, f: |_t: f64, _x: &[f64], y: &[f64], o: &mut [f64]| o[0] = y[0] };
        let tr = DenseTrajectory::new(&f, 0.0, 1.0, &[0.5], &[0.3], 7).unwrap();
        assert!((tr.at(0.37)[0] - (0.5 + 0.3 * 0.37)).abs() < 1e-14);
    }

    #[test]
    fn simpson_polynomial_exact() {
        let v = adaptive_simpson(|x| x * x * x - x, 0.0, 2.0, 1e-12);
        assert!((v - 2.0).abs() < 1e-12);
    }
}
