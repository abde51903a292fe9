//! Built-in chart models: flat space/torus, round spheres, hyperbolic space,
//! the cigar soliton and closure-backed static metrics.

use std::f64::consts::TAU;

use super::{conformal_christoffel, ChartPoint, Christoffel, MetricFamily};
use crate::error::{Error, Result};
use crate::linalg::{Mat, Vect};

/// Sphere chart switch trigger `|x| > 1.5`.
pub const DEFAULT_SWITCH_RADIUS: f64 = 1.5;

/// Stereographic coordinates beyond this radius are rejected outright.
pub const SPHERE_HARD_RADIUS: f64 = 10.0;

const CIGAR_HARD_RADIUS: f64 = 1e6;

/// Flat metric on `ℝ^n`, or on the torus `(ℝ / 2πℤ)^n` when periodic.
///
/// Ricci-flat, so it solves the Ricci flow for any `κ`; the reported `κ` is
/// whatever the caller asks for.
#[derive(Clone, Debug)]
pub struct Euclidean<const N: usize> {
    kappa: f64,
    periodic: bool,
}

impl<const N: usize> Euclidean<N> {
    pub fn new(kappa: f64) -> Self {
        Self { kappa, periodic: false }
    }

    pub fn torus(kappa: f64) -> Self {
        Self { kappa, periodic: true }
    }
}

impl<const N: usize> MetricFamily<N> for Euclidean<N> {
    fn name(&self) -> &str {
        if self.periodic {
            "flat_torus"
        } else {
            "euclidean"
        }
    }

    fn flow_kappa(&self) -> f64 {
        self.kappa
    }

    fn in_domain(&self, p: &ChartPoint<N>) -> bool {
        p.is_finite()
    }

    fn is_periodic(&self) -> bool {
        self.periodic
    }

    fn metric(&self, _t: f64, _p: &ChartPoint<N>) -> Mat<N> {
        Mat::<N>::identity()
    }

    fn dt_metric(&self, _t: f64, _p: &ChartPoint<N>) -> Mat<N> {
        Mat::<N>::zeros()
    }

    fn closed_christoffel(&self, _t: f64, _p: &ChartPoint<N>) -> Option<Christoffel<N>> {
        Some(Christoffel::zeros())
    }

    fn closed_ricci(&self, _t: f64, _p: &ChartPoint<N>) -> Option<Mat<N>> {
        Some(Mat::<N>::zeros())
    }

    fn wrap(&self, p: &mut ChartPoint<N>) {
        if self.periodic {
            p.coords.apply(|v| *v = v.rem_euclid(TAU));
        }
    }

    fn reference_distance(&self, a: &ChartPoint<N>, b: &ChartPoint<N>) -> Option<f64> {
        let mut d = a.coords - b.coords;
        if self.periodic {
            d.apply(|v| *v = periodic_offset(*v));
        }
        Some(d.norm())
    }
}

/// Signed offset in `[-π, π)` equivalent to `v` modulo `2π`.
pub(crate) fn periodic_offset(v: f64) -> f64 {
    (v + std::f64::consts::PI).rem_euclid(TAU) - std::f64::consts::PI
}

/// The round sphere `S^n` with `g(t) = (s - κ(n-1)t) g_round`, in two
/// stereographic charts (chart 0 projects from the north pole, chart 1 from
/// the south pole; `y = x / |x|²` between them).
///
/// `s` is the initial squared radius. `κ > 0` is the shrinking Ricci flow,
/// `κ < 0` the backward flow and `κ = 0` the static sphere.
#[derive(Clone, Debug)]
pub struct Sphere<const N: usize> {
    kappa: f64,
    scale: f64,
    switch_radius: f64,
}

impl<const N: usize> Sphere<N> {
    pub fn new(kappa: f64) -> Self {
        Self { kappa, scale: 1.0, switch_radius: DEFAULT_SWITCH_RADIUS }
    }

    pub fn static_round() -> Self {
        Self::new(0.0)
    }

    /// Initial metric `scale · g_round`.
    pub fn with_scale(mut self, scale: f64) -> Self {
        assert!(scale > 0.0, "sphere scale must be positive");
        self.scale = scale;
        self
    }

    pub fn with_switch_radius(mut self, radius: f64) -> Self {
        assert!(radius > 1.0 && radius < SPHERE_HARD_RADIUS, "switch radius must lie in (1, {SPHERE_HARD_RADIUS})");
        self.switch_radius = radius;
        self
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Conformal factor `a(t)` with `g(t) = a(t) g_round`.
    pub fn factor(&self, t: f64) -> f64 {
        self.scale - self.shrink_rate() * t
    }

    /// `κ (n - 1)`.
    pub fn shrink_rate(&self) -> f64 {
        self.kappa * (N as f64 - 1.0)
    }

    /// Clock `τ(t) = ∫_0^t ds / a(s) · s_0`, mapping the evolving sphere onto
    /// Brownian motion of the initial metric: `X_t = B_{τ(t)}` in law.
    pub fn time_change(&self, t: f64) -> f64 {
        let c = self.shrink_rate();
        if c == 0.0 {
            t
        } else {
            -(1.0 - c * t / self.scale).ln() * self.scale / c
        }
    }

    /// Embedding of a chart point into the sphere of radius one in `ℝ^{n+1}`.
    pub fn embed(&self, p: &ChartPoint<N>) -> Vec<f64> {
        let r2 = p.coords.norm_squared();
        let mut out: Vec<f64> = p.coords.iter().map(|x| 2.0 * x / (1.0 + r2)).collect();
        let h = (r2 - 1.0) / (1.0 + r2);
        out.push(if p.chart == 0 { h } else { -h });
        out
    }

    /// Rows `∂X_a / ∂x` of the embedding, `a = 0..=n`.
    pub fn embed_jacobian(&self, p: &ChartPoint<N>) -> Vec<Vect<N>> {
        let x = p.coords;
        let r2 = x.norm_squared();
        let q = 1.0 + r2;
        let mut rows: Vec<Vect<N>> = (0..N)
            .map(|a| Vect::<N>::from_fn(|k, _| if a == k { 2.0 / q } else { 0.0 } - 4.0 * x[a] * x[k] / (q * q)))
            .collect();
        let sign = if p.chart == 0 { 1.0 } else { -1.0 };
        rows.push(x * (sign * 4.0 / (q * q)));
        rows
    }

    /// Chart point for a unit vector of `ℝ^{n+1}`, in whichever chart keeps it closer to the origin.
    pub fn chart_point(&self, unit: &[f64]) -> ChartPoint<N> {
        assert_eq!(unit.len(), N + 1);
        let h = unit[N];
        // chart 0 is singular at the north pole h = 1
        let (chart, denom) = if h <= 0.0 { (0, 1.0 - h) } else { (1, 1.0 + h) };
        ChartPoint::new(chart, Vect::<N>::from_fn(|i, _| unit[i] / denom))
    }

    fn conformal(&self, p: &ChartPoint<N>) -> (f64, Vect<N>) {
        let r2 = p.coords.norm_squared();
        let phi = 4.0 / ((1.0 + r2) * (1.0 + r2));
        (phi, p.coords * (-4.0 / (1.0 + r2)))
    }
}

impl<const N: usize> MetricFamily<N> for Sphere<N> {
    fn name(&self) -> &str {
        "sphere"
    }

    fn t_max(&self) -> f64 {
        let c = self.shrink_rate();
        if c > 0.0 {
            self.scale / c
        } else {
            f64::INFINITY
        }
    }

    fn flow_kappa(&self) -> f64 {
        self.kappa
    }

    fn chart_count(&self) -> u8 {
        2
    }

    fn in_domain(&self, p: &ChartPoint<N>) -> bool {
        p.chart < 2 && p.coords.norm() < SPHERE_HARD_RADIUS
    }

    fn metric(&self, t: f64, p: &ChartPoint<N>) -> Mat<N> {
        Mat::<N>::identity() * (self.factor(t) * self.conformal(p).0)
    }

    fn dt_metric(&self, _t: f64, p: &ChartPoint<N>) -> Mat<N> {
        Mat::<N>::identity() * (-self.shrink_rate() * self.conformal(p).0)
    }

    fn closed_christoffel(&self, _t: f64, p: &ChartPoint<N>) -> Option<Christoffel<N>> {
        Some(conformal_christoffel(&self.conformal(p).1))
    }

    fn closed_ricci(&self, _t: f64, p: &ChartPoint<N>) -> Option<Mat<N>> {
        // Ric = (n - 1) g_round, independent of the scale factor.
        Some(Mat::<N>::identity() * ((N as f64 - 1.0) * self.conformal(p).0))
    }

    fn switch_target(&self, p: &ChartPoint<N>) -> Option<u8> {
        (p.coords.norm() > self.switch_radius).then_some(1 - p.chart)
    }

    fn transition(&self, p: &ChartPoint<N>, target: u8) -> Result<(ChartPoint<N>, Mat<N>)> {
        if target == p.chart {
            return Ok((*p, Mat::<N>::identity()));
        }
        let x = p.coords;
        let r2 = x.norm_squared();
        if r2 < 1e-24 {
            return Err(Error::NoOverlap { from: p.chart, to: target, coords: x.as_slice().to_vec() });
        }
        let y = x / r2;
        let jac = (Mat::<N>::identity() * r2 - x * x.transpose() * 2.0) / (r2 * r2);
        Ok((ChartPoint::new(target, y), jac))
    }

    fn reference_distance(&self, a: &ChartPoint<N>, b: &ChartPoint<N>) -> Option<f64> {
        let dot: f64 = self.embed(a).iter().zip(self.embed(b)).map(|(u, v)| u * v).sum();
        Some(self.scale.sqrt() * dot.clamp(-1.0, 1.0).acos())
    }
}

/// Hyperbolic space `H^n(-1)` in the Poincaré ball with
/// `g(t) = (s + κ(n-1)t) g_hyp` (expanding under the Ricci flow).
#[derive(Clone, Debug)]
pub struct Hyperbolic<const N: usize> {
    kappa: f64,
    scale: f64,
}

impl<const N: usize> Hyperbolic<N> {
    pub fn new(kappa: f64) -> Self {
        Self { kappa, scale: 1.0 }
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        assert!(scale > 0.0);
        self.scale = scale;
        self
    }

    pub fn factor(&self, t: f64) -> f64 {
        self.scale + self.kappa * (N as f64 - 1.0) * t
    }

    /// `τ(t) = s_0 ∫_0^t ds / a(s)`.
    pub fn time_change(&self, t: f64) -> f64 {
        let c = self.kappa * (N as f64 - 1.0);
        if c == 0.0 {
            t
        } else {
            (1.0 + c * t / self.scale).ln() * self.scale / c
        }
    }

    fn conformal(&self, p: &ChartPoint<N>) -> (f64, Vect<N>) {
        let r2 = p.coords.norm_squared();
        let phi = 4.0 / ((1.0 - r2) * (1.0 - r2));
        (phi, p.coords * (4.0 / (1.0 - r2)))
    }
}

impl<const N: usize> MetricFamily<N> for Hyperbolic<N> {
    fn name(&self) -> &str {
        "hyperbolic"
    }

    fn t_max(&self) -> f64 {
        let c = self.kappa * (N as f64 - 1.0);
        if c < 0.0 {
            -self.scale / c
        } else {
            f64::INFINITY
        }
    }

    fn flow_kappa(&self) -> f64 {
        self.kappa
    }

    fn in_domain(&self, p: &ChartPoint<N>) -> bool {
        p.coords.norm_squared() < 1.0 - 1e-12
    }

    fn metric(&self, t: f64, p: &ChartPoint<N>) -> Mat<N> {
        Mat::<N>::identity() * (self.factor(t) * self.conformal(p).0)
    }

    fn dt_metric(&self, _t: f64, p: &ChartPoint<N>) -> Mat<N> {
        Mat::<N>::identity() * (self.kappa * (N as f64 - 1.0) * self.conformal(p).0)
    }

    fn closed_christoffel(&self, _t: f64, p: &ChartPoint<N>) -> Option<Christoffel<N>> {
        Some(conformal_christoffel(&self.conformal(p).1))
    }

    fn closed_ricci(&self, _t: f64, p: &ChartPoint<N>) -> Option<Mat<N>> {
        Some(Mat::<N>::identity() * (-(N as f64 - 1.0) * self.conformal(p).0))
    }

    fn reference_distance(&self, a: &ChartPoint<N>, b: &ChartPoint<N>) -> Option<f64> {
        let (x, y) = (a.coords, b.coords);
        let arg = 1.0 + 2.0 * (x - y).norm_squared() / ((1.0 - x.norm_squared()) * (1.0 - y.norm_squared()));
        Some(self.scale.sqrt() * arg.max(1.0).acosh())
    }
}

/// Hamilton's cigar soliton on `ℝ²`: `g(t) = δ / (e^{2κt} + |x|²)`.
///
/// With `κ = 2` this is the explicit solution of `∂_t g = -2 Ric` started at
/// `g(0) = δ / (1 + |x|²)`.
#[derive(Clone, Debug)]
pub struct Cigar {
    kappa: f64,
}

impl Cigar {
    pub fn new(kappa: f64) -> Self {
        Self { kappa }
    }

    /// Ratio `Δ_t / Δ_0 = (e^{2κt} + |x|²) / (1 + |x|²)` driving the path-dependent clock.
    pub fn clock_rate(&self, t: f64, x: &Vect<2>) -> f64 {
        let r2 = x.norm_squared();
        ((2.0 * self.kappa * t).exp() + r2) / (1.0 + r2)
    }

    fn denom(&self, t: f64, p: &ChartPoint<2>) -> (f64, f64) {
        let e = (2.0 * self.kappa * t).exp();
        (e, e + p.coords.norm_squared())
    }
}

impl MetricFamily<2> for Cigar {
    fn name(&self) -> &str {
        "cigar"
    }

    fn flow_kappa(&self) -> f64 {
        self.kappa
    }

    fn in_domain(&self, p: &ChartPoint<2>) -> bool {
        p.coords.norm() < CIGAR_HARD_RADIUS
    }

    fn metric(&self, t: f64, p: &ChartPoint<2>) -> Mat<2> {
        Mat::<2>::identity() / self.denom(t, p).1
    }

    fn dt_metric(&self, t: f64, p: &ChartPoint<2>) -> Mat<2> {
        let (e, a) = self.denom(t, p);
        Mat::<2>::identity() * (-2.0 * self.kappa * e / (a * a))
    }

    fn closed_christoffel(&self, t: f64, p: &ChartPoint<2>) -> Option<Christoffel<2>> {
        let (_, a) = self.denom(t, p);
        Some(conformal_christoffel(&(p.coords * (-2.0 / a))))
    }

    fn closed_ricci(&self, t: f64, p: &ChartPoint<2>) -> Option<Mat<2>> {
        let (e, a) = self.denom(t, p);
        Some(Mat::<2>::identity() * (2.0 * e / (a * a)))
    }

    fn reference_distance(&self, a: &ChartPoint<2>, b: &ChartPoint<2>) -> Option<f64> {
        // g(0) is rotationally symmetric with radial arclength asinh(r).
        if a.coords == Vect::<2>::zeros() {
            Some(b.coords.norm().asinh())
        } else if b.coords == Vect::<2>::zeros() {
            Some(a.coords.norm().asinh())
        } else {
            None
        }
    }
}

type MetricFn<const N: usize> = dyn Fn(&Vect<N>) -> Mat<N> + Send + Sync;

/// A static metric known only through point evaluations; Christoffel symbols
/// and curvature come from finite differences.
pub struct StaticCustom<const N: usize> {
    name: String,
    periodic: bool,
    metric: Box<MetricFn<N>>,
}

impl<const N: usize> StaticCustom<N> {
    pub fn new(name: impl Into<String>, periodic: bool, metric: impl Fn(&Vect<N>) -> Mat<N> + Send + Sync + 'static) -> Self {
        Self { name: name.into(), periodic, metric: Box::new(metric) }
    }
}

impl StaticCustom<2> {
    /// Torus of revolution in `ℝ³` with tube radius `minor` and centre radius `major`,
    /// `g = diag(minor², (major + minor cos θ)²)` in periodic angles `(θ, φ)`.
    pub fn donut(major: f64, minor: f64) -> Self {
        assert!(major > minor && minor > 0.0);
        Self::new("static_custom", true, move |x| {
            let w = major + minor * x[0].cos();
            Mat::<2>::new(minor * minor, 0.0, 0.0, w * w)
        })
    }
}

impl<const N: usize> std::fmt::Debug for StaticCustom<N> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StaticCustom").field("name", &self.name).field("periodic", &self.periodic).finish()
    }
}

impl<const N: usize> MetricFamily<N> for StaticCustom<N> {
    fn name(&self) -> &str {
        &self.name
    }

    fn flow_kappa(&self) -> f64 {
        0.0
    }

    fn in_domain(&self, p: &ChartPoint<N>) -> bool {
        p.is_finite()
    }

    fn is_periodic(&self) -> bool {
        self.periodic
    }

    fn metric(&self, _t: f64, p: &ChartPoint<N>) -> Mat<N> {
        (self.metric)(&p.coords)
    }

    fn dt_metric(&self, _t: f64, _p: &ChartPoint<N>) -> Mat<N> {
        Mat::<N>::zeros()
    }

    fn wrap(&self, p: &mut ChartPoint<N>) {
        if self.periodic {
            p.coords.apply(|v| *v = v.rem_euclid(TAU));
        }
    }
}
