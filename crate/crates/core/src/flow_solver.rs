//! Normalized Ricci flow of conformal metrics `e^u δ` on the flat torus.
//!
//! The flow `∂_t g = (r - R) g` becomes `∂_t u = r - R` with the scalar
//! curvature `R = -e^{-u} Δ₀u` and `r` its volume average (zero on the torus,
//! but recomputed every step). Space is Fourier pseudo-spectral, time is RK4.

use std::f64::consts::TAU;
use std::path::Path;
use std::sync::{Arc, OnceLock};

use crate::error::{Error, Result};
use crate::geometry::{conformal_christoffel, ChartPoint, Christoffel, MetricFamily};
use crate::linalg::{Mat, Vect};
use crate::snapshot::{Snapshot, SnapshotKind};
use crate::spectral::{cubic_stencil, Spectral2d};

/// `dt ≤ STABILITY_C · h² · min e^u`.
pub const STABILITY_C: f64 = 0.2;

/// Off-grid evaluation uses cubic interpolation on a band-limited refinement
/// with at least this many points per axis.
pub const FINE_GRID_MIN: usize = 128;

/// Growth of `max |u|` beyond this factor of its initial value is reported as instability.
pub const BLOWUP_FACTOR: f64 = 10.0;

/// Sampled solution of the torus flow.
#[derive(Debug)]
pub struct TorusFlowSolution {
    grid_n: usize,
    times: Vec<f64>,
    u: Vec<Vec<f64>>,
    scalar: Vec<Vec<f64>>,
    average: Vec<f64>,
    max_step_average: f64,
    fine: OnceLock<FineFields>,
}

/// Values of the flow fields at one space-time point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowPoint {
    pub u: f64,
    pub grad_u: Vect<2>,
    pub scalar: f64,
    pub grad_scalar: Vect<2>,
    /// Volume-averaged scalar curvature `r`.
    pub average: f64,
}

#[derive(Debug)]
struct FineFields {
    m: usize,
    /// Per time: `[u, ∂₁u, ∂₂u, R, ∂₁R, ∂₂R]` per fine node.
    frames: Vec<Vec<[f64; 6]>>,
}

impl TorusFlowSolution {
    /// The flat metric (`u ≡ 0`) sampled at `0` and `t_end`.
    pub fn flat(grid_n: usize, t_end: f64) -> Result<Self> {
        Spectral2d::new(grid_n)?;
        let zeros = vec![0.0; grid_n * grid_n];
        Self::from_samples(grid_n, vec![0.0, t_end], vec![zeros.clone(), zeros.clone()], vec![zeros.clone(), zeros])
    }

    /// Assemble a solution from stored samples (for example a loaded snapshot).
    pub fn from_samples(grid_n: usize, times: Vec<f64>, u: Vec<Vec<f64>>, scalar: Vec<Vec<f64>>) -> Result<Self> {
        let sp = Spectral2d::new(grid_n)?;
        if times.is_empty() || times.len() != u.len() || times.len() != scalar.len() {
            return Err(Error::Snapshot(format!(
                "{} times but {} u samples and {} R samples",
                times.len(),
                u.len(),
                scalar.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) || times.iter().any(|t| !t.is_finite()) {
            return Err(Error::Snapshot("sample times must be finite and strictly increasing".into()));
        }
        for field in u.iter().chain(&scalar) {
            if field.len() != grid_n * grid_n {
                return Err(Error::Snapshot(format!("field of length {} on a {grid_n}² grid", field.len())));
            }
            if field.iter().any(|v| !v.is_finite()) {
                return Err(Error::Snapshot("non-finite field value".into()));
            }
        }
        let average: Vec<f64> = u.iter().zip(&scalar).map(|(u, r)| volume_average(&sp, u, r)).collect();
        let max_step_average = average.iter().fold(0.0f64, |a, r| a.max(r.abs()));
        Ok(Self { grid_n, times, u, scalar, average, max_step_average, fine: OnceLock::new() })
    }

    pub fn grid_n(&self) -> usize {
        self.grid_n
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().expect("at least one sample")
    }

    /// Conformal factor at sample `k`.
    pub fn u(&self, k: usize) -> &[f64] {
        &self.u[k]
    }

    /// Scalar curvature at sample `k`.
    pub fn scalar(&self, k: usize) -> &[f64] {
        &self.scalar[k]
    }

    /// Average scalar curvature `r` at sample `k`.
    pub fn average_curvature(&self, k: usize) -> f64 {
        self.average[k]
    }

    /// Largest `|r|` seen over all solver steps (over samples for loaded solutions).
    pub fn max_abs_average(&self) -> f64 {
        self.max_step_average
    }

    /// Total area `∫ e^u` at sample `k`.
    pub fn volume(&self, k: usize) -> f64 {
        let sp = Spectral2d::new(self.grid_n).expect("validated grid");
        let w: Vec<f64> = self.u[k].iter().map(|v| v.exp()).collect();
        sp.integrate(&w)
    }

    pub fn max_abs_u(&self, k: usize) -> f64 {
        self.u[k].iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }

    /// Keep only the listed samples (in order).
    pub fn subset(&self, keep: &[usize]) -> Result<Self> {
        let pick = |v: &Vec<Vec<f64>>| keep.iter().map(|&k| v[k].clone()).collect::<Vec<_>>();
        Self::from_samples(self.grid_n, keep.iter().map(|&k| self.times[k]).collect(), pick(&self.u), pick(&self.scalar))
    }

    fn check_time(&self, t: f64) -> Result<()> {
        let (lo, hi) = (self.times[0], self.t_end());
        if !(t >= lo - 1e-12 && t <= hi + 1e-12) {
            return Err(Error::TimeOutOfRange { t, limit: hi });
        }
        Ok(())
    }

    /// Interpolated fields at flow time `t` and position `x` (any representative mod 2π).
    pub fn point(&self, t: f64, x: &Vect<2>) -> Result<FlowPoint> {
        self.check_time(t)?;
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::Domain { chart: 0, coords: x.as_slice().to_vec() });
        }
        Ok(self.point_unchecked(t, x))
    }

    fn point_unchecked(&self, t: f64, x: &Vect<2>) -> FlowPoint {
        let fine = self.fine.get_or_init(|| FineFields::build(self));
        let (k0, tw) = lagrange_weights(&self.times, t);
        let m = fine.m;
        let h = TAU / m as f64;
        let (i0, wx) = cubic_stencil(x[0].rem_euclid(TAU), h);
        let (j0, wy) = cubic_stencil(x[1].rem_euclid(TAU), h);
        let mut acc = [0.0f64; 6];
        let mut average = 0.0;
        for (dk, &wt) in tw.iter().enumerate() {
            if wt == 0.0 {
                continue;
            }
            average += wt * self.average[k0 + dk];
            let frame = &fine.frames[k0 + dk];
            for (a, &wa) in wx.iter().enumerate() {
                let row = (i0 + a as i64).rem_euclid(m as i64) as usize * m;
                for (b, &wb) in wy.iter().enumerate() {
                    let col = (j0 + b as i64).rem_euclid(m as i64) as usize;
                    let node = &frame[row + col];
                    let w = wt * wa * wb;
                    for q in 0..6 {
                        acc[q] += w * node[q];
                    }
                }
            }
        }
        FlowPoint {
            u: acc[0],
            grad_u: Vect::<2>::new(acc[1], acc[2]),
            scalar: acc[3],
            grad_scalar: Vect::<2>::new(acc[4], acc[5]),
            average,
        }
    }

    /// The `g(t)`-gradient `e^{-u} ∇₀R` of the scalar curvature.
    pub fn scalar_curvature_gradient(&self, t: f64, x: &Vect<2>) -> Result<Vect<2>> {
        let p = self.point(t, x)?;
        Ok(p.grad_scalar * (-p.u).exp())
    }

    /// `sup_x ‖∇R(t, x)‖_{g(t)}` over grid nodes of sample `k`.
    pub fn max_scalar_gradient_norm(&self, k: usize) -> f64 {
        let sp = Spectral2d::new(self.grid_n).expect("validated grid");
        let d = sp.derivatives(&self.scalar[k]);
        // ‖e^{-u}∇R‖_g = e^{-u/2} |∇R|
        (0..self.u[k].len())
            .map(|i| (-0.5 * self.u[k][i]).exp() * d.dx[i].hypot(d.dy[i]))
            .fold(0.0, f64::max)
    }

    pub fn to_snapshot(&self) -> Snapshot {
        Snapshot {
            kind: SnapshotKind::Flow,
            grid_n: self.grid_n,
            times: self.times.clone(),
            fields: vec![self.u.concat(), self.scalar.concat()],
        }
    }

    pub fn from_snapshot(snap: &Snapshot) -> Result<Self> {
        if snap.kind != SnapshotKind::Flow || snap.fields.len() != 2 {
            return Err(Error::Snapshot("expected a flow snapshot with fields u and R".into()));
        }
        snap.validate()?;
        let block = snap.grid_n * snap.grid_n;
        let split = |f: &Vec<f64>| f.chunks(block).map(<[f64]>::to_vec).collect::<Vec<_>>();
        Self::from_samples(snap.grid_n, snap.times.clone(), split(&snap.fields[0]), split(&snap.fields[1]))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_snapshot().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_snapshot(&Snapshot::load(path)?)
    }
}

impl FineFields {
    fn build(sol: &TorusFlowSolution) -> Self {
        let coarse = Spectral2d::new(sol.grid_n).expect("validated grid");
        let m = sol.grid_n.max(FINE_GRID_MIN);
        let fine = Spectral2d::new(m).expect("fine grid");
        let frames = sol
            .u
            .iter()
            .zip(&sol.scalar)
            .map(|(u, r)| {
                let uf = coarse.resample(u, &fine);
                let rf = coarse.resample(r, &fine);
                let du = fine.derivatives(&uf);
                let dr = fine.derivatives(&rf);
                (0..m * m).map(|i| [uf[i], du.dx[i], du.dy[i], rf[i], dr.dx[i], dr.dy[i]]).collect()
            })
            .collect();
        Self { m, frames }
    }
}

/// Cubic (or lower, with fewer samples) Lagrange weights on the nearest
/// samples; returns the first sample index and the weights.
pub(crate) fn lagrange_weights(times: &[f64], t: f64) -> (usize, Vec<f64>) {
    let len = times.len();
    let width = len.min(4);
    if width == 1 {
        return (0, vec![1.0]);
    }
    let upper = times.partition_point(|&s| s <= t).clamp(1, len - 1);
    let start = (upper as i64 - 2).clamp(0, (len - width) as i64) as usize;
    let nodes = &times[start..start + width];
    if let Some(hit) = nodes.iter().position(|&s| s == t) {
        let mut w = vec![0.0; width];
        w[hit] = 1.0;
        return (start, w);
    }
    let w = (0..width)
        .map(|a| {
            (0..width)
                .filter(|&b| b != a)
                .map(|b| (t - nodes[b]) / (nodes[a] - nodes[b]))
                .product()
        })
        .collect();
    (start, w)
}

fn volume_average(sp: &Spectral2d, u: &[f64], scalar: &[f64]) -> f64 {
    let weights: Vec<f64> = u.iter().map(|v| v.exp()).collect();
    let weighted: Vec<f64> = weights.iter().zip(scalar).map(|(w, r)| w * r).collect();
    sp.integrate(&weighted) / sp.integrate(&weights)
}

struct NrfRhs<'a> {
    sp: &'a Spectral2d,
}

struct RhsEval {
    du: Vec<f64>,
    scalar: Vec<f64>,
    average: f64,
}

impl NrfRhs<'_> {
    fn scalar_curvature(&self, u: &[f64]) -> Vec<f64> {
        let lap = self.sp.laplacian(u);
        u.iter().zip(&lap).map(|(u, l)| -(-u).exp() * l).collect()
    }

    fn eval(&self, u: &[f64]) -> RhsEval {
        let scalar = self.scalar_curvature(u);
        let average = volume_average(self.sp, u, &scalar);
        let raw: Vec<f64> = scalar.iter().map(|r| average - r).collect();
        let mut spec = self.sp.to_spectrum(&raw);
        self.sp.dealias(&mut spec);
        RhsEval { du: self.sp.to_field(spec), scalar, average }
    }
}

/// Integrate the normalized flow from `u0` up to `t_end`, storing samples
/// roughly every `sample_dt` (and always at `0` and `t_end`).
///
/// `dt` is shrunk to divide `t_end` evenly. The initial field is projected
/// onto the two-thirds band so that the explicit step stays inside the RK4
/// stability region at the stated step bound.
pub fn solve_nrf(u0: &[f64], grid_n: usize, t_end: f64, dt: f64, sample_dt: f64) -> Result<TorusFlowSolution> {
    let sp = Spectral2d::new(grid_n)?;
    if u0.len() != grid_n * grid_n {
        return Err(Error::Config(format!("initial field has {} values, grid needs {}", u0.len(), grid_n * grid_n)));
    }
    if !(t_end > 0.0 && dt > 0.0 && sample_dt > 0.0) || !t_end.is_finite() {
        return Err(Error::Config("t_end, dt and sample_dt must be positive".into()));
    }
    if u0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config("initial field is not finite".into()));
    }
    let n_steps = ((t_end / dt) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    let dt = t_end / n_steps as f64;
    let stride = ((sample_dt / dt).round() as usize).max(1);

    let mut spec = sp.to_spectrum(u0);
    sp.dealias(&mut spec);
    let mut u = sp.to_field(spec);
    let initial_max = u.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let h = sp.spacing();
    let rhs = NrfRhs { sp: &sp };

    let mut times = Vec::new();
    let mut us = Vec::new();
    let mut scalars = Vec::new();
    let mut max_step_average = 0.0f64;

    for step in 0..=n_steps {
        let t = step as f64 * dt;
        let k1 = rhs.eval(&u);
        max_step_average = max_step_average.max(k1.average.abs());
        if step % stride == 0 || step == n_steps {
            times.push(t);
            us.push(u.clone());
            scalars.push(k1.scalar.clone());
        }
        if step == n_steps {
            break;
        }
        let min_u = u.iter().copied().fold(f64::INFINITY, f64::min);
        let bound = STABILITY_C * h * h * min_u.exp();
        if dt > bound {
            return Err(Error::StepTooLarge { dt, bound });
        }
        let stage = |base: &[f64], k: &[f64], a: f64| base.iter().zip(k).map(|(u, k)| u + a * k).collect::<Vec<_>>();
        let k2 = rhs.eval(&stage(&u, &k1.du, 0.5 * dt));
        let k3 = rhs.eval(&stage(&u, &k2.du, 0.5 * dt));
        let k4 = rhs.eval(&stage(&u, &k3.du, dt));
        for i in 0..u.len() {
            u[i] += dt / 6.0 * (k1.du[i] + 2.0 * k2.du[i] + 2.0 * k3.du[i] + k4.du[i]);
        }
        let max_abs = u.iter().fold(0.0f64, |a, v| if v.is_finite() { a.max(v.abs()) } else { f64::INFINITY });
        if max_abs > BLOWUP_FACTOR * initial_max {
            return Err(Error::Unstable { t: t + dt, max_abs });
        }
    }
    let mut sol = TorusFlowSolution::from_samples(grid_n, times, us, scalars)?;
    sol.max_step_average = max_step_average;
    Ok(sol)
}

/// The torus flow viewed as a metric family on `[0, 2π)²`.
///
/// Family time `t` is flow time `κ t / 2`, so that `∂_t g = -κ Ric`
/// (`Ric = (R/2) g` on a surface). The stored flow has `r ≈ 0`.
#[derive(Clone, Debug)]
pub struct TorusNrf {
    sol: Arc<TorusFlowSolution>,
    kappa: f64,
}

impl TorusNrf {
    pub fn new(sol: Arc<TorusFlowSolution>, kappa: f64) -> Result<Self> {
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::Config(format!("torus flow family needs κ > 0, got {kappa}")));
        }
        Ok(Self { sol, kappa })
    }

    pub fn solution(&self) -> &Arc<TorusFlowSolution> {
        &self.sol
    }

    /// Flow time of family time `t`.
    pub fn flow_time(&self, t: f64) -> f64 {
        0.5 * self.kappa * t
    }

    /// Last admissible family time.
    pub fn horizon(&self) -> f64 {
        2.0 * self.sol.t_end() / self.kappa
    }

    fn fields(&self, t: f64, p: &ChartPoint<2>) -> FlowPoint {
        let s = self.flow_time(t).clamp(self.sol.times[0], self.sol.t_end());
        self.sol.point_unchecked(s, &p.coords)
    }
}

impl MetricFamily<2> for TorusNrf {
    fn name(&self) -> &str {
        "torus_nrf"
    }

    fn flow_kappa(&self) -> f64 {
        self.kappa
    }

    fn in_domain(&self, p: &ChartPoint<2>) -> bool {
        p.is_finite()
    }

    fn is_periodic(&self) -> bool {
        true
    }

    fn metric(&self, t: f64, p: &ChartPoint<2>) -> Mat<2> {
        Mat::<2>::identity() * self.fields(t, p).u.exp()
    }

    fn dt_metric(&self, t: f64, p: &ChartPoint<2>) -> Mat<2> {
        let f = self.fields(t, p);
        Mat::<2>::identity() * (0.5 * self.kappa * (f.average - f.scalar) * f.u.exp())
    }

    fn closed_christoffel(&self, t: f64, p: &ChartPoint<2>) -> Option<Christoffel<2>> {
        Some(conformal_christoffel(&self.fields(t, p).grad_u))
    }

    fn closed_ricci(&self, t: f64, p: &ChartPoint<2>) -> Option<Mat<2>> {
        let f = self.fields(t, p);
        Some(Mat::<2>::identity() * (0.5 * f.scalar * f.u.exp()))
    }

    fn wrap(&self, p: &mut ChartPoint<2>) {
        p.coords.apply(|v| *v = v.rem_euclid(TAU));
    }

    fn check_time(&self, t: f64) -> Result<()> {
        let limit = self.horizon();
        if !(t >= -1e-12 && t <= limit * (1.0 + 1e-12)) {
            return Err(Error::TimeOutOfRange { t, limit });
        }
        Ok(())
    }
}
