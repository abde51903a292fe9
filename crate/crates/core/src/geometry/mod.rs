//! Time-dependent metric families in explicit charts.
//!
//! A [`MetricFamily`] supplies `g(t, x)` and `∂_t g(t, x)` in a chart, and
//! optionally closed forms for the Christoffel symbols and the Ricci tensor.
//! Everything else (validated evaluation, finite-difference fallbacks,
//! curvature summaries, chart changes) is provided on top of those.
//!
//! Conventions: a Ricci-flow family satisfies `∂_t g = -κ Ric` with `κ`
//! reported by [`MetricFamily::flow_kappa`]. `κ = 1` is the probabilistic
//! convention, `κ = 2` the geometric one, negative values run the flow
//! backwards and `κ = 0` marks a family that is not a Ricci flow (or a static
//! Ricci-flat one).

mod conformal;
mod models;
mod wrappers;

pub use conformal::{conformal_christoffel, conformal_ricci};
pub use models::{Cigar, Euclidean, Hyperbolic, Sphere, StaticCustom, DEFAULT_SWITCH_RADIUS, SPHERE_HARD_RADIUS};
pub use wrappers::{Frozen, Scaled};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vect};

/// Evaluators refuse metric times beyond this fraction of a finite lifetime.
pub const LIFETIME_FRACTION: f64 = 0.95;

/// Relative finite-difference step; the absolute step is `FD_REL_STEP * max(1, |x_i|)`.
pub const FD_REL_STEP: f64 = 1e-4;

/// A point expressed in one chart of a family's atlas.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChartPoint<const N: usize> {
    pub chart: u8,
    pub coords: Vect<N>,
}

impl<const N: usize> ChartPoint<N> {
    pub fn new(chart: u8, coords: Vect<N>) -> Self {
        Self { chart, coords }
    }

    pub fn origin() -> Self {
        Self { chart: 0, coords: Vect::<N>::zeros() }
    }

    pub fn from_slice(chart: u8, coords: &[f64]) -> Self {
        Self { chart, coords: Vect::<N>::from_column_slice(coords) }
    }

    pub fn is_finite(&self) -> bool {
        self.coords.iter().all(|v| v.is_finite())
    }
}

/// Christoffel symbols `Γ^i_{jk}`, stored as one symmetric `(j, k)` matrix per upper index.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Christoffel<const N: usize>(pub [Mat<N>; N]);

impl<const N: usize> Christoffel<N> {
    pub fn zeros() -> Self {
        Self([Mat::<N>::zeros(); N])
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.0[i][(j, k)]
    }

    /// `Γ^i_{jk} a^j b^k`.
    #[inline]
    pub fn contract(&self, a: &Vect<N>, b: &Vect<N>) -> Vect<N> {
        Vect::<N>::from_fn(|i, _| a.dot(&(self.0[i] * b)))
    }

    /// The contracted symbol `g^{kl} Γ^i_{kl}` that enters the Itô drift of Brownian motion.
    #[inline]
    pub fn trace_with(&self, g_inv: &Mat<N>) -> Vect<N> {
        Vect::<N>::from_fn(|i, _| self.0[i].component_mul(g_inv).sum())
    }

    /// Largest violation of `Γ^i_{jk} = Γ^i_{kj}`.
    pub fn asymmetry(&self) -> f64 {
        self.0.iter().map(|m| linalg::max_abs(&(m - m.transpose()))).fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| linalg::max_abs(&(a - b)))
            .fold(0.0, f64::max)
    }
}

/// Ricci tensor, its `g`-raised endomorphism, scalar curvature and the
/// (real, ascending) eigenvalues of the raised operator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvatureData<const N: usize> {
    pub ricci: Mat<N>,
    pub ricci_sharp: Mat<N>,
    pub scalar: f64,
    pub eigenvalues: Vect<N>,
}

impl<const N: usize> CurvatureData<N> {
    pub fn from_ricci(ricci: Mat<N>, metric: &Mat<N>) -> Result<Self> {
        let ricci = (ricci + ricci.transpose()) * 0.5;
        let g_inv = linalg::spd_inverse(metric)?;
        let ricci_sharp = g_inv * ricci;
        // g^{1/2} Ric^# g^{-1/2} = g^{-1/2} Ric g^{-1/2} is symmetric.
        let inv_sqrt = linalg::sym_inv_sqrt(metric)?;
        let eigenvalues = linalg::sorted_eigenvalues(&(inv_sqrt * ricci * inv_sqrt));
        Ok(Self { ricci, ricci_sharp, scalar: ricci_sharp.trace(), eigenvalues })
    }
}

/// A family `t ↦ g(t)` of Riemannian metrics on a manifold with an explicit atlas.
///
/// Implementors provide the raw evaluators; callers normally go through the
/// validating `*_at` methods.
pub trait MetricFamily<const N: usize>: Send + Sync {
    fn name(&self) -> &str;

    /// Supremum of valid metric times (the lifetime of the flow).
    fn t_max(&self) -> f64 {
        f64::INFINITY
    }

    /// `κ` in `∂_t g = -κ Ric`, or 0 for families that are not Ricci flows.
    fn flow_kappa(&self) -> f64;

    fn chart_count(&self) -> u8 {
        1
    }

    /// Hard validity region of the point's chart.
    fn in_domain(&self, p: &ChartPoint<N>) -> bool;

    /// Periodic charts wrap their coordinates and have no boundary.
    fn is_periodic(&self) -> bool {
        false
    }

    fn metric(&self, t: f64, p: &ChartPoint<N>) -> Mat<N>;

    fn dt_metric(&self, t: f64, p: &ChartPoint<N>) -> Mat<N>;

    /// Closed-form Levi-Civita symbols, if the family has them.
    fn closed_christoffel(&self, _t: f64, _p: &ChartPoint<N>) -> Option<Christoffel<N>> {
        None
    }

    /// Closed-form Ricci tensor, if the family has it.
    fn closed_ricci(&self, _t: f64, _p: &ChartPoint<N>) -> Option<Mat<N>> {
        None
    }

    /// Chart the point should move to, if the switching trigger fires.
    fn switch_target(&self, _p: &ChartPoint<N>) -> Option<u8> {
        None
    }

    /// Raw chart change returning the new point and `∂(new)/∂(old)`.
    fn transition(&self, p: &ChartPoint<N>, target: u8) -> Result<(ChartPoint<N>, Mat<N>)> {
        if p.chart == target {
            Ok((*p, Mat::<N>::identity()))
        } else {
            Err(Error::NoOverlap { from: p.chart, to: target, coords: p.coords.as_slice().to_vec() })
        }
    }

    /// Bring coordinates back into the canonical fundamental domain (periodic charts).
    fn wrap(&self, _p: &mut ChartPoint<N>) {}

    /// Geodesic distance for the reference metric `g(0)`, where it has a closed form.
    fn reference_distance(&self, _a: &ChartPoint<N>, _b: &ChartPoint<N>) -> Option<f64> {
        None
    }

    // ----- validated evaluation -----

    fn check_time(&self, t: f64) -> Result<()> {
        let t_max = self.t_max();
        let limit = if t_max.is_finite() { LIFETIME_FRACTION * t_max } else { f64::INFINITY };
        if !(t >= -1e-12 && t <= limit) {
            return Err(Error::TimeOutOfRange { t, limit });
        }
        Ok(())
    }

    fn check_point(&self, p: &ChartPoint<N>) -> Result<()> {
        if p.chart >= self.chart_count() {
            return Err(Error::InvalidChart(p.chart));
        }
        if !p.is_finite() || !self.in_domain(p) {
            return Err(Error::Domain { chart: p.chart, coords: p.coords.as_slice().to_vec() });
        }
        Ok(())
    }

    fn metric_at(&self, t: f64, p: &ChartPoint<N>) -> Result<Mat<N>> {
        self.check_time(t)?;
        self.check_point(p)?;
        Ok(self.metric(t, p))
    }

    fn dt_metric_at(&self, t: f64, p: &ChartPoint<N>) -> Result<Mat<N>> {
        self.check_time(t)?;
        self.check_point(p)?;
        Ok(self.dt_metric(t, p))
    }

    fn christoffel_closed(&self, t: f64, p: &ChartPoint<N>) -> Result<Christoffel<N>> {
        self.check_time(t)?;
        self.check_point(p)?;
        self.closed_christoffel(t, p).ok_or(Error::Unsupported("closed-form Christoffel symbols"))
    }

    /// Central-difference Christoffel symbols from the metric alone.
    fn christoffel_fd(&self, t: f64, p: &ChartPoint<N>, h_rel: f64) -> Result<Christoffel<N>> {
        self.check_time(t)?;
        self.check_point(p)?;
        let steps = fd_steps(p, h_rel);
        self.check_stencil(p, &steps)?;
        let mut dg = [Mat::<N>::zeros(); N];
        for (l, dgl) in dg.iter_mut().enumerate() {
            let (plus, minus) = shifted(p, l, steps[l]);
            *dgl = (self.metric(t, &plus) - self.metric(t, &minus)) / (2.0 * steps[l]);
        }
        let g_inv = linalg::spd_inverse(&self.metric(t, p))?;
        Ok(christoffel_from_metric_derivatives(&g_inv, &dg))
    }

    /// Closed form when available, finite differences otherwise.
    fn christoffel_at(&self, t: f64, p: &ChartPoint<N>) -> Result<Christoffel<N>> {
        self.check_time(t)?;
        self.check_point(p)?;
        match self.closed_christoffel(t, p) {
            Some(c) => Ok(c),
            None => self.christoffel_fd(t, p, FD_REL_STEP),
        }
    }

    /// Ricci tensor by finite differences of the Christoffel symbols.
    fn ricci_fd(&self, t: f64, p: &ChartPoint<N>, h_rel: f64) -> Result<Mat<N>> {
        self.check_time(t)?;
        self.check_point(p)?;
        let steps = fd_steps(p, h_rel);
        // The inner Christoffel evaluation needs its own stencil around each shifted point.
        let outer: [f64; N] = std::array::from_fn(|i| 3.0 * steps[i]);
        self.check_stencil(p, &outer)?;
        let gamma = self.christoffel_at(t, p)?;
        let mut d_gamma = [Christoffel::<N>::zeros(); N];
        for (m, dgm) in d_gamma.iter_mut().enumerate() {
            let (plus, minus) = shifted(p, m, steps[m]);
            let gp = self.christoffel_at(t, &plus)?;
            let gm = self.christoffel_at(t, &minus)?;
            for i in 0..N {
                dgm.0[i] = (gp.0[i] - gm.0[i]) / (2.0 * steps[m]);
            }
        }
        let mut ric = Mat::<N>::zeros();
        for j in 0..N {
            for k in 0..N {
                let mut acc = 0.0;
                for i in 0..N {
                    acc += d_gamma[i].get(i, j, k) - d_gamma[k].get(i, i, j);
                    for q in 0..N {
                        acc += gamma.get(i, i, q) * gamma.get(q, j, k) - gamma.get(i, k, q) * gamma.get(q, i, j);
                    }
                }
                ric[(j, k)] = acc;
            }
        }
        Ok((ric + ric.transpose()) * 0.5)
    }

    fn curvature_at(&self, t: f64, p: &ChartPoint<N>) -> Result<CurvatureData<N>> {
        let g = self.metric_at(t, p)?;
        let ric = match self.closed_ricci(t, p) {
            Some(r) => r,
            None => self.ricci_fd(t, p, FD_REL_STEP)?,
        };
        CurvatureData::from_ricci(ric, &g)
    }

    /// The same manifold point in `target`, with the Jacobian `∂(new)/∂(old)`.
    fn chart_transition(&self, p: &ChartPoint<N>, target: u8) -> Result<(ChartPoint<N>, Mat<N>)> {
        self.check_point(p)?;
        if target >= self.chart_count() {
            return Err(Error::InvalidChart(target));
        }
        self.transition(p, target)
    }

    #[doc(hidden)]
    fn check_stencil(&self, p: &ChartPoint<N>, steps: &[f64; N]) -> Result<()> {
        if self.is_periodic() {
            return Ok(());
        }
        for (l, &h) in steps.iter().enumerate() {
            let (plus, minus) = shifted(p, l, 2.0 * h);
            if !self.in_domain(&plus) || !self.in_domain(&minus) {
                return Err(Error::BoundaryProximity { h, coords: p.coords.as_slice().to_vec() });
            }
        }
        Ok(())
    }
}

fn fd_steps<const N: usize>(p: &ChartPoint<N>, h_rel: f64) -> [f64; N] {
    std::array::from_fn(|i| h_rel * p.coords[i].abs().max(1.0))
}

fn shifted<const N: usize>(p: &ChartPoint<N>, axis: usize, h: f64) -> (ChartPoint<N>, ChartPoint<N>) {
    let mut plus = *p;
    let mut minus = *p;
    plus.coords[axis] += h;
    minus.coords[axis] -= h;
    (plus, minus)
}

/// `Γ^i_{jk} = ½ g^{il} (∂_j g_{lk} + ∂_k g_{lj} - ∂_l g_{jk})`, with `dg[l] = ∂_l g`.
pub fn christoffel_from_metric_derivatives<const N: usize>(g_inv: &Mat<N>, dg: &[Mat<N>; N]) -> Christoffel<N> {
    // lowered[l][(j, k)] = Γ_{l j k}
    let lowered: [Mat<N>; N] =
        std::array::from_fn(|l| Mat::<N>::from_fn(|j, k| 0.5 * (dg[j][(l, k)] + dg[k][(l, j)] - dg[l][(j, k)])));
    let mut out = Christoffel::<N>::zeros();
    for i in 0..N {
        for (l, low) in lowered.iter().enumerate() {
            out.0[i] += low * g_inv[(i, l)];
        }
    }
    out
}

/// `(∂_t g)^#`-style raising of a bilinear form: `g^{-1} b`.
pub fn raise<const N: usize>(g: &Mat<N>, b: &Mat<N>) -> Result<Mat<N>> {
    Ok(linalg::spd_inverse(g)? * b)
}

#[cfg(test)]
mod tests;
