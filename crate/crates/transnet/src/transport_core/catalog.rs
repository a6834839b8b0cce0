use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Result, TransportError};
use crate::oracle::adaptive_simpson;

/// Scalar profile `g(t, x)` from the built-in catalog.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Profile {
    Constant {
        value: f64,
    },
    /// `amp · cos(freq·x + phase) · cos(time_freq · t + time_phase)`.
    Cosine {
        amp: f64,
        freq: Vec<f64>,
        #[serde(default)]
        phase: f64,
        #[serde(default)]
        time_freq: f64,
        #[serde(default)]
        time_phase: f64,
    },
    /// `height · (1 − |x − center|_∞ / radius)_+`.
    Bump { center: Vec<f64>, radius: f64, height: f64 },
    /// Linear interpolation of `values` at `knots` along `x[axis]`, constant
    /// outside the knot range.
    PiecewiseLinear { axis: usize, knots: Vec<f64>, values: Vec<f64> },
}

impl Profile {
    pub fn validate(&self, m: usize) -> Result<()> {
        let bad = |s: &str| Err(TransportError::Invalid(s.into()));
        match self {
            Profile::Constant { value } if !value.is_finite() => bad("constant must be finite"),
            Profile::Cosine { freq, .. } if freq.len() != m => bad("cosine frequency vector must have length m"),
            Profile::Bump { center, radius, .. } if center.len() != m || !(*radius > 0.0) => {
                bad("bump needs a center of length m and a positive radius")
            }
            Profile::PiecewiseLinear { axis, knots, values } => {
                if *axis >= m || knots.len() < 2 || knots.len() != values.len() {
                    return bad("piecewise-linear profile needs axis < m and at least two knots with values");
                }
                if knots.windows(2).any(|w| !(w[1] > w[0])) {
                    return bad("knots must be strictly increasing");
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn eval(&self, t: f64, x: &[f64]) -> f64 {
        match self {
            Profile::Constant { value } => *value,
            Profile::Cosine { amp, freq, phase, time_freq, time_phase } => {
                let s: f64 = freq.iter().zip(x).map(|(k, v)| k * v).sum();
                amp * (s + phase).cos() * (time_freq * t + time_phase).cos()
            }
            Profile::Bump { center, radius, height } => {
                let d = center.iter().zip(x).map(|(c, v)| (v - c).abs()).fold(0.0, f64::max);
                height * (1.0 - d / radius).max(0.0)
            }
            Profile::PiecewiseLinear { axis, knots, values } => {
                let v = x[*axis];
                let n = knots.len();
                if v <= knots[0] {
                    return values[0];
                }
                if v >= knots[n - 1] {
                    return values[n - 1];
                }
                let k = knots.partition_point(|k| *k <= v) - 1;
                let s = (v - knots[k]) / (knots[k + 1] - knots[k]);
                values[k] + s * (values[k + 1] - values[k])
            }
        }
    }

    /// `|J|^{-1} ∫_J g(s, x) ds` for `J = [lo, hi]`.
    pub fn time_average(&self, lo: f64, hi: f64, x: &[f64]) -> f64 {
        match self {
            Profile::Cosine { amp, freq, phase, time_freq, time_phase } => {
                let s: f64 = freq.iter().zip(x).map(|(k, v)| k * v).sum();
                let len = hi - lo;
                let tavg = if *time_freq == 0.0 || len.abs() < 1e-12 {
                    (time_freq * 0.5 * (lo + hi) + time_phase).cos()
                } else {
                    ((time_freq * hi + time_phase).sin() - (time_freq * lo + time_phase).sin()) / (time_freq * len)
                };
                amp * (s + phase).cos() * tavg
            }
            _ => self.eval(lo, x),
        }
    }

    pub fn sup(&self) -> f64 {
        match self {
            Profile::Constant { value } => value.abs(),
            Profile::Cosine { amp, .. } => amp.abs(),
            Profile::Bump { height, .. } => height.abs(),
            Profile::PiecewiseLinear { values, .. } => values.iter().fold(0.0, |m, v| m.max(v.abs())),
        }
    }

    /// Lipschitz constant in `x` with respect to the max norm.
    pub fn lip_x(&self) -> f64 {
        match self {
            Profile::Constant { .. } => 0.0,
            Profile::Cosine { amp, freq, .. } => amp.abs() * freq.iter().map(|k| k.abs()).sum::<f64>(),
            Profile::Bump { radius, height, .. } => height.abs() / radius,
            Profile::PiecewiseLinear { knots, values, .. } => knots
                .windows(2)
                .zip(values.windows(2))
                .map(|(k, v)| ((v[1] - v[0]) / (k[1] - k[0])).abs())
                .fold(0.0, f64::max),
        }
    }

    pub fn lip_t(&self) -> f64 {
        match self {
            Profile::Cosine { amp, time_freq, .. } => amp.abs() * time_freq.abs(),
            _ => 0.0,
        }
    }

    pub fn time_independent(&self) -> bool {
        match self {
            Profile::Cosine { time_freq, .. } => *time_freq == 0.0,
            _ => true,
        }
    }
}

/// One field component `a°_j : (t, x) ↦ R^m`.
pub trait ComponentField: Send + Sync {
    fn m(&self) -> usize;
    fn eval_into(&self, t: f64, x: &[f64], out: &mut [f64]);

    /// Time average over `[lo, hi]`; adaptive Simpson unless overridden.
    fn average_into(&self, lo: f64, hi: f64, x: &[f64], out: &mut [f64]) {
        let m = self.m();
        for (i, o) in out.iter_mut().enumerate().take(m) {
            let v = adaptive_simpson(
                |s| {
                    let mut b = vec![0.0; m];
                    self.eval_into(s, x, &mut b);
                    b[i]
                },
                lo,
                hi,
                1e-12,
            );
            *o = if hi > lo { v / (hi - lo) } else { 0.0 };
        }
    }

    fn time_independent(&self) -> bool {
        false
    }
}

/// Component whose coordinates are catalog profiles.
#[derive(Clone, Debug, PartialEq)]
pub struct CatalogComponent(Vec<Profile>);

impl CatalogComponent {
    pub fn new(profiles: Vec<Profile>) -> Result<Self> {
        let m = profiles.len();
        if m == 0 {
            return Err(TransportError::Invalid("component needs at least one coordinate".into()));
        }
        for p in &profiles {
            p.validate(m)?;
        }
        Ok(Self(profiles))
    }

    pub fn profiles(&self) -> &[Profile] {
        &self.0
    }

    pub fn sup(&self) -> f64 {
        self.0.iter().map(Profile::sup).fold(0.0, f64::max)
    }

    pub fn lip_x(&self) -> f64 {
        self.0.iter().map(Profile::lip_x).fold(0.0, f64::max)
    }
}

impl ComponentField for CatalogComponent {
    fn m(&self) -> usize {
        self.0.len()
    }

    fn eval_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        for (o, p) in out.iter_mut().zip(&self.0) {
            *o = p.eval(t, x);
        }
    }

    fn average_into(&self, lo: f64, hi: f64, x: &[f64], out: &mut [f64]) {
        for (o, p) in out.iter_mut().zip(&self.0) {
            *o = p.time_average(lo, hi, x);
        }
    }

    fn time_independent(&self) -> bool {
        self.0.iter().all(Profile::time_independent)
    }
}

/// Component given by a closure; averages use adaptive quadrature.
pub struct FnComponent<F> {
    pub m: usize,
    pub f: F,
    pub time_independent: bool,
}

impl<F> ComponentField for FnComponent<F>
where
    F: Fn(f64, &[f64], &mut [f64]) + Send + Sync,
{
    fn m(&self) -> usize {
        self.m
    }

    fn eval_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (self.f)(t, x, out)
    }

    fn average_into(&self, lo: f64, hi: f64, x: &[f64], out: &mut [f64]) {
        if self.time_independent {
            return (self.f)(lo, x, out);
        }
        let m = self.m;
        for (i, o) in out.iter_mut().enumerate().take(m) {
            let v = adaptive_simpson(
                |s| {
                    let mut b = vec![0.0; m];
                    (self.f)(s, x, &mut b);
                    b[i]
                },
                lo,
                hi,
                1e-12,
            );
            *o = if hi > lo { v / (hi - lo) } else { 0.0 };
        }
    }

    fn time_independent(&self) -> bool {
        self.time_independent
    }
}

/// `-a°(t_ref - s, x)`.
pub(super) struct ReversedComponent {
    pub inner: Arc<dyn ComponentField>,
    pub t_ref: f64,
}

impl ComponentField for ReversedComponent {
    fn m(&self) -> usize {
        self.inner.m()
    }

    fn eval_into(&self, s: f64, x: &[f64], out: &mut [f64]) {
        self.inner.eval_into(self.t_ref - s, x, out);
        out.iter_mut().for_each(|v| *v = -*v);
    }

    fn average_into(&self, lo: f64, hi: f64, x: &[f64], out: &mut [f64]) {
        self.inner.average_into(self.t_ref - hi, self.t_ref - lo, x, out);
        out.iter_mut().for_each(|v| *v = -*v);
    }

    fn time_independent(&self) -> bool {
        self.inner.time_independent()
    }
}

/// Initial datum `u0(x)` or source `f(t, x)`; data do not depend on `y`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Datum {
    #[default]
    Zero,
    Constant {
        value: f64,
    },
    Profile {
        profile: Profile,
    },
}

impl Datum {
    pub fn validate(&self, m: usize) -> Result<()> {
        match self {
            Datum::Zero => Ok(()),
            Datum::Constant { value } if value.is_finite() => Ok(()),
            Datum::Constant { .. } => Err(TransportError::Invalid("datum constant must be finite".into())),
            Datum::Profile { profile } => profile.validate(m),
        }
    }

    pub fn eval(&self, t: f64, x: &[f64]) -> f64 {
        match self {
            Datum::Zero => 0.0,
            Datum::Constant { value } => *value,
            Datum::Profile { profile } => profile.eval(t, x),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Datum::Zero => true,
            Datum::Constant { value } => *value == 0.0,
            Datum::Profile { .. } => false,
        }
    }

    pub fn sup(&self) -> f64 {
        match self {
            Datum::Zero => 0.0,
            Datum::Constant { value } => value.abs(),
            Datum::Profile { profile } => profile.sup(),
        }
    }

    pub fn lip_x(&self) -> f64 {
        match self {
            Datum::Profile { profile } => profile.lip_x(),
            _ => 0.0,
        }
    }

    pub fn lip_t(&self) -> f64 {
        match self {
            Datum::Profile { profile } => profile.lip_t(),
            _ => 0.0,
        }
    }

    pub fn time_independent(&self) -> bool {
        match self {
            Datum::Profile { profile } => profile.time_independent(),
            _ => true,
        }
    }

    /// `max(sup, Lip_x)`, the norm entering `M`.
    pub fn norm(&self) -> f64 {
        self.sup().max(self.lip_x())
    }
}
