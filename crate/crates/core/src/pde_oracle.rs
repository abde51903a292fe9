//! Deterministic reference solutions: heat and conjugate heat equations on
//! the torus with a conformal metric `e^u δ`, and the heat equation on the
//! evolving round sphere through its time change.

use std::f64::consts::TAU;
use std::path::Path;

use rustfft::num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow_solver::{lagrange_weights, TorusNrf};
use crate::geometry::{ChartPoint, MetricFamily, Sphere};
use crate::linalg::{spd_inverse, Vect};
use crate::sde::TimeDirection;
use crate::snapshot::{Snapshot, SnapshotKind};
use crate::spectral::Spectral2d;
use crate::stats::pairwise_sum;

/// Real-axis stability limit used for explicit RK4 on diffusion problems.
pub const RK4_DIFFUSION_LIMIT: f64 = 2.5;

/// Values below this are reported as negative density.
pub const NEGATIVE_DENSITY_TOL: f64 = 1e-8;

/// Solution of `∂_t f = (σ/2) Δ_t f` evaluated through the library API.
pub trait HeatSolution<const N: usize>: Send + Sync {
    fn value(&self, t: f64, p: &ChartPoint<N>) -> Result<f64>;

    /// The `g(t)`-gradient `g(t)^{-1} df` in chart coordinates.
    fn gradient(&self, t: f64, p: &ChartPoint<N>) -> Result<Vect<N>>;
}

/// A conformal metric `e^{u(t)} δ` on `[0, 2π)²`.
#[derive(Clone, Debug)]
pub enum ConformalTorus {
    /// Time independent factor sampled on a grid.
    Static { grid_n: usize, u: Vec<f64> },
    /// A torus flow family.
    Flow(TorusNrf),
}

impl ConformalTorus {
    pub fn flat(grid_n: usize) -> Self {
        ConformalTorus::Static { grid_n, u: vec![0.0; grid_n * grid_n] }
    }

    pub fn horizon(&self) -> f64 {
        match self {
            ConformalTorus::Static { .. } => f64::INFINITY,
            ConformalTorus::Flow(fam) => fam.horizon(),
        }
    }

    /// `u(t, x)` off the grid.
    pub fn log_factor(&self, t: f64, x: &Vect<2>) -> Result<f64> {
        match self {
            ConformalTorus::Static { grid_n, u } => {
                let sp = Spectral2d::new(*grid_n)?;
                Ok(sp.evaluate(&sp.to_spectrum(u), x[0], x[1]))
            }
            ConformalTorus::Flow(fam) => {
                fam.check_time(t)?;
                Ok(fam.solution().point(fam.flow_time(t), x)?.u)
            }
        }
    }

    /// `Tr(½ g^{-1} ∂_t g) = ∂_t u` off the grid.
    pub fn trace_term(&self, t: f64, x: &Vect<2>) -> Result<f64> {
        match self {
            ConformalTorus::Static { .. } => Ok(0.0),
            ConformalTorus::Flow(fam) => {
                let p = ChartPoint::new(0, *x);
                let g = fam.metric_at(t, &p)?;
                let dg = fam.dt_metric_at(t, &p)?;
                Ok(0.5 * (spd_inverse(&g)? * dg).trace())
            }
        }
    }

    fn sampler(&self, grid_n: usize) -> Result<Sampler> {
        let sp = Spectral2d::new(grid_n)?;
        match self {
            ConformalTorus::Static { grid_n: m, u } => {
                if u.len() != m * m {
                    return Err(Error::Config(format!("conformal factor has {} values, grid needs {}", u.len(), m * m)));
                }
                let u = refine(&Spectral2d::new(*m)?, u, &sp)?;
                Ok(Sampler::Static { u })
            }
            ConformalTorus::Flow(fam) => {
                let sol = fam.solution();
                let coarse = Spectral2d::new(sol.grid_n())?;
                let kappa = fam.flow_kappa();
                let u = (0..sol.times().len()).map(|k| refine(&coarse, sol.u(k), &sp)).collect::<Result<_>>()?;
                Ok(Sampler::Flow { times: sol.times().to_vec(), kappa, u })
            }
        }
    }
}

fn refine(from: &Spectral2d, field: &[f64], to: &Spectral2d) -> Result<Vec<f64>> {
    if from.n() == to.n() {
        Ok(field.to_vec())
    } else if from.n() < to.n() {
        Ok(from.resample(field, to))
    } else {
        Err(Error::Config(format!("oracle grid {} is coarser than the metric grid {}", to.n(), from.n())))
    }
}

enum Sampler {
    Static { u: Vec<f64> },
    Flow { times: Vec<f64>, kappa: f64, u: Vec<Vec<f64>> },
}

impl Sampler {
    /// `u` on the grid at family time `t`.
    fn at(&self, t: f64) -> Vec<f64> {
        match self {
            Sampler::Static { u } => u.clone(),
            Sampler::Flow { times, kappa, u } => {
                let s = (0.5 * kappa * t).clamp(times[0], *times.last().unwrap());
                let (k0, w) = lagrange_weights(times, s);
                let len = u[0].len();
                let mut a = vec![0.0; len];
                for (dk, &wk) in w.iter().enumerate() {
                    for i in 0..len {
                        a[i] += wk * u[k0 + dk][i];
                    }
                }
                a
            }
        }
    }

    fn max_inverse_factor(&self) -> f64 {
        let max_neg = |u: &[f64]| u.iter().map(|v| (-v).exp()).fold(0.0, f64::max);
        match self {
            Sampler::Static { u } => max_neg(u),
            Sampler::Flow { u, .. } => u.iter().map(|f| max_neg(f)).fold(0.0, f64::max),
        }
    }
}

/// Grid and time stepping for the torus solvers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GridSolve {
    pub grid_n: usize,
    pub horizon: f64,
    pub speed: f64,
    pub dt: f64,
    pub sample_dt: f64,
    /// Clock `s` reads the metric at `s` (forward) or at `horizon - s` (reversed).
    pub direction: TimeDirection,
}

impl GridSolve {
    pub fn new(grid_n: usize, horizon: f64) -> Self {
        Self { grid_n, horizon, speed: 1.0, dt: 1e-3, sample_dt: 0.01, direction: TimeDirection::Forward }
    }

    pub fn reversed(mut self) -> Self {
        self.direction = TimeDirection::Reversed;
        self
    }

    pub fn metric_clock(&self, s: f64) -> f64 {
        match self.direction {
            TimeDirection::Forward => s,
            TimeDirection::Reversed => self.horizon - s,
        }
    }

    pub fn speed(mut self, speed: f64) -> Self {
        self.speed = speed;
        self
    }

    pub fn steps(mut self, dt: f64, sample_dt: f64) -> Self {
        self.dt = dt;
        self.sample_dt = sample_dt;
        self
    }

    fn validate(&self, bg: &ConformalTorus) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite() && self.dt > 0.0 && self.sample_dt > 0.0 && self.speed > 0.0) {
            return Err(Error::Config("horizon, speed, dt and sample_dt must be positive".into()));
        }
        if self.horizon > bg.horizon() * (1.0 + 1e-12) {
            return Err(Error::TimeOutOfRange { t: self.horizon, limit: bg.horizon() });
        }
        Ok(())
    }
}

/// Integrate `y' = L(t) y` by RK4, returning `(times, samples)`.
fn rk4_linear(
    sampler: &Sampler,
    sp: &Spectral2d,
    setup: &GridSolve,
    y0: Vec<f64>,
    rhs: impl Fn(&[f64], &[f64]) -> Vec<f64>,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let (n_steps, dt, stride) = setup.validate_for(sampler, sp)?;
    let mut y = y0;
    let mut times = vec![0.0];
    let mut out = vec![y.clone()];
    for step in 0..n_steps {
        let t = step as f64 * dt;
        let u0 = sampler.at(setup.metric_clock(t));
        let um = sampler.at(setup.metric_clock(t + 0.5 * dt));
        let u1 = sampler.at(setup.metric_clock(t + dt));
        let stage = |k: &[f64], a: f64| y.iter().zip(k).map(|(y, k)| y + a * k).collect::<Vec<_>>();
        let k1 = rhs(&y, &u0);
        let k2 = rhs(&stage(&k1, 0.5 * dt), &um);
        let k3 = rhs(&stage(&k2, 0.5 * dt), &um);
        let k4 = rhs(&stage(&k3, dt), &u1);
        for i in 0..y.len() {
            y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Unstable { t: t + dt, max_abs: f64::INFINITY });
        }
        if (step + 1) % stride == 0 || step + 1 == n_steps {
            times.push((step + 1) as f64 * dt);
            out.push(y.clone());
        }
    }
    Ok((times, out))
}

impl GridSolve {
    fn validate_for(&self, sampler: &Sampler, sp: &Spectral2d) -> Result<(usize, f64, usize)> {
        let n_steps = ((self.horizon / self.dt) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        let dt = self.horizon / n_steps as f64;
        let k_max = (sp.n() / 2) as f64;
        let lambda = 0.5 * self.speed * sampler.max_inverse_factor() * 2.0 * k_max * k_max;
        let bound = RK4_DIFFUSION_LIMIT / lambda;
        if dt > bound {
            return Err(Error::StepTooLarge { dt, bound });
        }
        let stride = ((self.sample_dt / dt).round() as usize).max(1);
        Ok((n_steps, dt, stride))
    }
}

/// Spectral heat solution on a conformal torus.
#[derive(Clone, Debug)]
pub struct TorusHeatSolution {
    background: ConformalTorus,
    sp: Spectral2d,
    setup: GridSolve,
    times: Vec<f64>,
    fields: Vec<Vec<f64>>,
    spectra: Vec<Vec<Complex64>>,
}

/// Solve `∂_s f = (σ/2) e^{-u} Δ₀ f` from the grid field `f0`, with `u` read
/// at the metric time of clock `s`.
pub fn heat_solve_torus(bg: &ConformalTorus, f0: &[f64], setup: &GridSolve) -> Result<TorusHeatSolution> {
    setup.validate(bg)?;
    let sp = Spectral2d::new(setup.grid_n)?;
    if f0.len() != setup.grid_n * setup.grid_n {
        return Err(Error::Config(format!("initial field has {} values, grid needs {}", f0.len(), setup.grid_n * setup.grid_n)));
    }
    let sampler = bg.sampler(setup.grid_n)?;
    let half = 0.5 * setup.speed;
    let (times, fields) = rk4_linear(&sampler, &sp, setup, f0.to_vec(), |f, u| {
        let lap = sp.laplacian(f);
        lap.iter().zip(u).map(|(l, u)| half * (-u).exp() * l).collect()
    })?;
    let spectra = fields.iter().map(|f| sp.to_spectrum(f)).collect();
    Ok(TorusHeatSolution { background: bg.clone(), sp, setup: *setup, times, fields, spectra })
}

impl TorusHeatSolution {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn field(&self, k: usize) -> &[f64] {
        &self.fields[k]
    }

    pub fn grid_n(&self) -> usize {
        self.sp.n()
    }

    fn weights(&self, t: f64) -> Result<(usize, Vec<f64>)> {
        let end = *self.times.last().unwrap();
        if !(t >= -1e-12 && t <= end + 1e-12) {
            return Err(Error::TimeOutOfRange { t, limit: end });
        }
        Ok(lagrange_weights(&self.times, t))
    }

    fn interpolate(&self, t: f64, eval: impl Fn(&[Complex64]) -> f64) -> Result<f64> {
        let (k0, w) = self.weights(t)?;
        Ok(w.iter().enumerate().filter(|(_, w)| **w != 0.0).map(|(dk, wk)| wk * eval(&self.spectra[k0 + dk])).sum())
    }

    fn coordinate_gradient(&self, t: f64, x: &Vect<2>) -> Result<Vect<2>> {
        let mut d = [0.0; 2];
        for (axis, slot) in d.iter_mut().enumerate() {
            *slot = self.interpolate(t, |spec| {
                let derived = differentiate(&self.sp, spec, axis);
                self.sp.evaluate(&derived, x[0], x[1])
            })?;
        }
        Ok(Vect::<2>::new(d[0], d[1]))
    }

    /// `|∂_t f - (σ/2) Δ_t f|` at `x` for an interior sample `k`, using the
    /// centred difference of the neighbouring samples (which must be equally spaced).
    pub fn collocation_residual(&self, k: usize, x: &Vect<2>) -> Result<f64> {
        if k == 0 || k + 1 >= self.times.len() {
            return Err(Error::Config(format!("sample {k} has no neighbours on both sides")));
        }
        let (a, b) = (self.times[k] - self.times[k - 1], self.times[k + 1] - self.times[k]);
        if ((a - b) / a).abs() > 1e-9 {
            return Err(Error::Config("residual needs equally spaced samples".into()));
        }
        let at = |j: usize| self.sp.evaluate(&self.spectra[j], x[0], x[1]);
        let ft = (at(k + 1) - at(k - 1)) / (a + b);
        let mut lap = self.spectra[k].clone();
        scale_by_symbol(&self.sp, &mut lap, |kx, ky| -(kx * kx + ky * ky));
        let u = self.background.log_factor(self.setup.metric_clock(self.times[k]), x)?;
        let rhs = 0.5 * self.setup.speed * (-u).exp() * self.sp.evaluate(&lap, x[0], x[1]);
        Ok((ft - rhs).abs())
    }
}

impl HeatSolution<2> for TorusHeatSolution {
    fn value(&self, t: f64, p: &ChartPoint<2>) -> Result<f64> {
        self.interpolate(t, |spec| self.sp.evaluate(spec, p.coords[0], p.coords[1]))
    }

    fn gradient(&self, t: f64, p: &ChartPoint<2>) -> Result<Vect<2>> {
        let d = self.coordinate_gradient(t, &p.coords)?;
        Ok(d * (-self.background.log_factor(self.setup.metric_clock(t), &p.coords)?).exp())
    }
}

fn wavenumber(n: usize, k: usize) -> f64 {
    if k <= n / 2 {
        k as f64
    } else {
        k as f64 - n as f64
    }
}

fn scale_by_symbol(sp: &Spectral2d, spec: &mut [Complex64], symbol: impl Fn(f64, f64) -> f64) {
    let n = sp.n();
    for i in 0..n {
        for j in 0..n {
            spec[i * n + j] *= symbol(wavenumber(n, i), wavenumber(n, j));
        }
    }
}

fn differentiate(sp: &Spectral2d, spec: &[Complex64], axis: usize) -> Vec<Complex64> {
    let n = sp.n();
    let mut out = spec.to_vec();
    for i in 0..n {
        for j in 0..n {
            let k = if axis == 0 { i } else { j };
            let w = if k == n / 2 { 0.0 } else { wavenumber(n, k) };
            out[i * n + j] *= Complex64::new(0.0, w);
        }
    }
    out
}

/// Periodic Gaussian used as a smoothed point mass.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Mollifier {
    pub center: [f64; 2],
    pub width: f64,
}

impl Mollifier {
    /// Width `max(2 h, 0.05)` for a grid of `grid_n` points per axis.
    pub fn default_width(grid_n: usize) -> f64 {
        (2.0 * TAU / grid_n as f64).max(0.05)
    }

    pub fn new(center: Vect<2>, width: f64) -> Self {
        Self { center: [center[0], center[1]], width }
    }

    /// Lebesgue density of the wrapped Gaussian.
    pub fn density(&self, x: f64, y: f64) -> f64 {
        wrapped_normal(x - self.center[0], self.width) * wrapped_normal(y - self.center[1], self.width)
    }

    /// Map a standard normal pair to a sample of the mollifier.
    pub fn sample(&self, z: &Vect<2>) -> Vect<2> {
        Vect::<2>::new(
            (self.center[0] + self.width * z[0]).rem_euclid(TAU),
            (self.center[1] + self.width * z[1]).rem_euclid(TAU),
        )
    }
}

/// Density at `d` of a normal with standard deviation `s` wrapped onto the circle of length 2π.
pub fn wrapped_normal(d: f64, s: f64) -> f64 {
    let d = d.rem_euclid(TAU);
    let images = (6.0 * s / TAU).ceil() as i64 + 1;
    let norm = 1.0 / (s * TAU.sqrt());
    (-images..=images).map(|m| norm * (-(d + m as f64 * TAU).powi(2) / (2.0 * s * s)).exp()).sum()
}

/// Density of the Brownian motion against the moving volume `μ_t`, sampled at clock times.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DensityField {
    pub grid_n: usize,
    pub times: Vec<f64>,
    /// `h(t_k, node)`, row-major per time.
    pub values: Vec<Vec<f64>>,
    /// `e^{u(t_k, node)}`, the density of `μ_t` against Lebesgue measure.
    pub measure_weights: Vec<Vec<f64>>,
    pub mollifier_width: f64,
    /// Most negative value before clipping.
    pub min_value: f64,
    /// Number of node values clipped to zero.
    pub clipped: usize,
}

/// Solve `∂_t h + h Tr(½ g^{-1} ∂_t g) = (σ/2) Δ_t h` from a mollified point mass at `x0`.
///
/// The Lebesgue density `ρ = h e^u` is evolved (`∂_t ρ = (σ/2) Δ₀(e^{-u} ρ)`),
/// which keeps the total mass exact up to round-off.
pub fn conjugate_solve_torus(bg: &ConformalTorus, x0: &Vect<2>, width: Option<f64>, setup: &GridSolve) -> Result<DensityField> {
    setup.validate(bg)?;
    let n = setup.grid_n;
    let sp = Spectral2d::new(n)?;
    let width = width.unwrap_or_else(|| Mollifier::default_width(n));
    let min_width = 2.0 * sp.spacing();
    if width < min_width * (1.0 - 1e-12) {
        return Err(Error::Config(format!("mollifier width {width} is below two grid cells ({min_width})")));
    }
    let moll = Mollifier::new(*x0, width);
    let mut rho0 = sp.sample(|x, y| moll.density(x, y));
    let mass = sp.integrate(&rho0);
    rho0.iter_mut().for_each(|v| *v /= mass);

    let sampler = bg.sampler(n)?;
    let half = 0.5 * setup.speed;
    let (times, rhos) = rk4_linear(&sampler, &sp, setup, rho0, |rho, u| {
        let h: Vec<f64> = rho.iter().zip(u).map(|(r, u)| r * (-u).exp()).collect();
        sp.laplacian(&h).into_iter().map(|l| half * l).collect()
    })?;

    let mut min_value = f64::INFINITY;
    let mut clipped = 0;
    let mut values = Vec::with_capacity(times.len());
    let mut weights = Vec::with_capacity(times.len());
    for (t, rho) in times.iter().zip(&rhos) {
        let u = sampler.at(setup.metric_clock(*t));
        let w: Vec<f64> = u.iter().map(|v| v.exp()).collect();
        let mut h: Vec<f64> = rho.iter().zip(&w).map(|(r, w)| r / w).collect();
        for v in h.iter_mut() {
            min_value = min_value.min(*v);
            if *v < -NEGATIVE_DENSITY_TOL {
                *v = 0.0;
                clipped += 1;
            }
        }
        values.push(h);
        weights.push(w);
    }
    Ok(DensityField { grid_n: n, times, values, measure_weights: weights, mollifier_width: width, min_value, clipped })
}

impl DensityField {
    pub fn cell_area(&self) -> f64 {
        (TAU / self.grid_n as f64).powi(2)
    }

    /// `∫ h dμ_t` at sample `k`.
    pub fn mass(&self, k: usize) -> f64 {
        let w: Vec<f64> = self.values[k].iter().zip(&self.measure_weights[k]).map(|(h, w)| h * w).collect();
        pairwise_sum(&w) * self.cell_area()
    }

    pub fn max_mass_defect(&self) -> f64 {
        (0..self.times.len()).map(|k| (self.mass(k) - 1.0).abs()).fold(0.0, f64::max)
    }

    /// Probability of each grid-centred cell at sample `k` (midpoint rule).
    pub fn cell_probabilities(&self, k: usize) -> Vec<f64> {
        let a = self.cell_area();
        self.values[k].iter().zip(&self.measure_weights[k]).map(|(h, w)| h * w * a).collect()
    }

    pub fn to_snapshot(&self) -> Snapshot {
        Snapshot {
            kind: SnapshotKind::Density,
            grid_n: self.grid_n,
            times: self.times.clone(),
            fields: vec![self.values.concat(), self.measure_weights.concat()],
        }
    }

    pub fn from_snapshot(snap: &Snapshot) -> Result<Self> {
        snap.validate()?;
        if snap.kind != SnapshotKind::Density || snap.fields.len() != 2 {
            return Err(Error::Snapshot("not a density snapshot".into()));
        }
        let block = snap.grid_n * snap.grid_n;
        let split = |f: &[f64]| f.chunks(block).map(|c| c.to_vec()).collect::<Vec<_>>();
        let values = split(&snap.fields[0]);
        let min_value = values.iter().flatten().copied().fold(f64::INFINITY, f64::min);
        Ok(Self {
            grid_n: snap.grid_n,
            times: snap.times.clone(),
            values,
            measure_weights: split(&snap.fields[1]),
            mollifier_width: Mollifier::default_width(snap.grid_n),
            min_value,
            clipped: 0,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_snapshot().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_snapshot(&Snapshot::load(path)?)
    }
}

/// Harmonic polynomial of degree at most two restricted to the unit sphere in `ℝ^{n+1}`:
/// `c + a·y + yᵀ B y` with `B` symmetric and trace free.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SphereHarmonics {
    pub constant: f64,
    pub linear: Vec<f64>,
    pub quadratic: Vec<Vec<f64>>,
}

impl SphereHarmonics {
    pub fn constant(c: f64) -> Self {
        Self { constant: c, linear: Vec::new(), quadratic: Vec::new() }
    }

    pub fn linear(a: Vec<f64>) -> Self {
        Self { constant: 0.0, linear: a, quadratic: Vec::new() }
    }

    pub fn with_quadratic(mut self, b: Vec<Vec<f64>>) -> Self {
        self.quadratic = b;
        self
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if !self.linear.is_empty() && self.linear.len() != dim {
            return Err(Error::Config(format!("linear part needs {dim} coefficients")));
        }
        if !self.quadratic.is_empty() {
            if self.quadratic.len() != dim || self.quadratic.iter().any(|r| r.len() != dim) {
                return Err(Error::Config(format!("quadratic part must be {dim} × {dim}")));
            }
            let trace: f64 = (0..dim).map(|i| self.quadratic[i][i]).sum();
            let asym = (0..dim)
                .flat_map(|i| (0..dim).map(move |j| (i, j)))
                .map(|(i, j)| (self.quadratic[i][j] - self.quadratic[j][i]).abs())
                .fold(0.0, f64::max);
            if trace.abs() > 1e-12 || asym > 1e-12 {
                return Err(Error::Config("quadratic part must be symmetric and trace free".into()));
            }
        }
        Ok(())
    }

    /// Degree-wise values `[ℓ = 0, 1, 2]` at a unit vector.
    fn parts(&self, y: &[f64]) -> [f64; 3] {
        let lin = self.linear.iter().zip(y).map(|(a, y)| a * y).sum();
        let quad = self
            .quadratic
            .iter()
            .enumerate()
            .map(|(i, row)| row.iter().zip(y).map(|(b, yj)| y[i] * b * yj).sum::<f64>())
            .sum();
        [self.constant, lin, quad]
    }

    /// Degree-wise Euclidean gradients in `ℝ^{n+1}`.
    fn part_gradients(&self, y: &[f64]) -> [Vec<f64>; 3] {
        let d = y.len();
        let lin = if self.linear.is_empty() { vec![0.0; d] } else { self.linear.clone() };
        let quad = (0..d)
            .map(|i| if self.quadratic.is_empty() { 0.0 } else { 2.0 * (0..d).map(|j| self.quadratic[i][j] * y[j]).sum::<f64>() })
            .collect();
        [vec![0.0; d], lin, quad]
    }
}

/// Closed-form heat solution on the evolving round sphere.
#[derive(Clone, Debug)]
pub struct SphereHeatSolution<const N: usize> {
    sphere: Sphere<N>,
    f0: SphereHarmonics,
    speed: f64,
}

pub fn heat_solve_sphere<const N: usize>(sphere: &Sphere<N>, f0: SphereHarmonics, speed: f64) -> Result<SphereHeatSolution<N>> {
    f0.validate(N + 1)?;
    if !(speed > 0.0 && speed.is_finite()) {
        return Err(Error::Config(format!("diffusion speed must be positive, got {speed}")));
    }
    Ok(SphereHeatSolution { sphere: sphere.clone(), f0, speed })
}

impl<const N: usize> SphereHeatSolution<N> {
    /// Multiplier of the degree-`ℓ` component at time `t`: `exp(-½ σ ℓ(ℓ+n-1) τ(t) / s)`.
    pub fn decay(&self, degree: usize, t: f64) -> f64 {
        let l = degree as f64;
        let lambda = l * (l + N as f64 - 1.0) / self.sphere.scale();
        (-0.5 * self.speed * lambda * self.sphere.time_change(t)).exp()
    }

    pub fn sphere(&self) -> &Sphere<N> {
        &self.sphere
    }
}

impl<const N: usize> HeatSolution<N> for SphereHeatSolution<N> {
    fn value(&self, t: f64, p: &ChartPoint<N>) -> Result<f64> {
        self.sphere.check_time(t)?;
        self.sphere.check_point(p)?;
        let parts = self.f0.parts(&self.sphere.embed(p));
        Ok((0..3).map(|l| self.decay(l, t) * parts[l]).sum())
    }

    fn gradient(&self, t: f64, p: &ChartPoint<N>) -> Result<Vect<N>> {
        let g = self.sphere.metric_at(t, p)?;
        let y = self.sphere.embed(p);
        let grads = self.f0.part_gradients(&y);
        let jac = self.sphere.embed_jacobian(p);
        let mut df = Vect::<N>::zeros();
        for (l, grad) in grads.iter().enumerate() {
            let decay = self.decay(l, t);
            for (a, row) in jac.iter().enumerate() {
                df += row * (decay * grad[a]);
            }
        }
        Ok(spd_inverse(&g)? * df)
    }
}

/// One line of the oracle self-consistency suite.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SelfTestItem {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl SelfTestItem {
    fn new(name: &str, value: f64, tolerance: f64) -> Self {
        Self { name: name.into(), value, tolerance, pass: value.is_finite() && value <= tolerance }
    }
}

/// `u` used by the self tests: a smooth non-flat static conformal factor.
pub fn sample_conformal_factor(grid_n: usize) -> Result<Vec<f64>> {
    Ok(Spectral2d::new(grid_n)?.sample(|x, y| 0.3 * x.cos() + 0.2 * (x + y).sin()))
}

/// Internal consistency checks of the torus and sphere oracles.
pub fn self_test() -> Result<Vec<SelfTestItem>> {
    let mut items = Vec::new();

    let n = 32;
    let sp = Spectral2d::new(n)?;
    let flat = ConformalTorus::flat(n);
    let setup = GridSolve::new(n, 0.5).steps(1e-3, 0.05);
    let heat = heat_solve_torus(&flat, &sp.sample(|x, _| x.cos()), &setup)?;
    let last = heat.times().len() - 1;
    let exact = sp.sample(|x, _| (-0.25f64).exp() * x.cos());
    let err = heat.field(last).iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    items.push(SelfTestItem::new("single_mode_heat_error", err, 1e-8));

    let x0 = Vect::<2>::new(2.0, 3.5);
    let density = conjugate_solve_torus(&flat, &x0, None, &setup)?;
    let var = density.mollifier_width.powi(2) + 0.5;
    let k = density.times.len() - 1;
    let theta = sp.sample(|x, y| wrapped_normal(x - x0[0], var.sqrt()) * wrapped_normal(y - x0[1], var.sqrt()));
    let err = density.values[k].iter().zip(&theta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    items.push(SelfTestItem::new("flat_heat_kernel_error", err, 1e-6));
    items.push(SelfTestItem::new("flat_mass_defect", density.max_mass_defect(), 1e-6));

    let bg = ConformalTorus::Static { grid_n: n, u: sample_conformal_factor(n)? };
    let f0 = sp.sample(|x, y| (x - 2.0 * y).sin() + 0.5 * (2.0 * x).cos());
    let heat = heat_solve_torus(&bg, &f0, &setup)?;
    let density = conjugate_solve_torus(&bg, &x0, None, &setup)?;
    let moll = Mollifier::new(x0, density.mollifier_width);
    let mut rho0 = sp.sample(|x, y| moll.density(x, y));
    let mass = sp.integrate(&rho0);
    rho0.iter_mut().for_each(|v| *v /= mass);
    let last = heat.times().len() - 1;
    let lhs: Vec<f64> = heat.field(last).iter().zip(&rho0).map(|(f, r)| f * r).collect();
    let k = density.times.len() - 1;
    let rhs: Vec<f64> = (0..n * n).map(|i| f0[i] * density.values[k][i] * density.measure_weights[k][i]).collect();
    items.push(SelfTestItem::new("duality_defect", (sp.integrate(&lhs) - sp.integrate(&rhs)).abs(), 1e-5));
    items.push(SelfTestItem::new("conformal_mass_defect", density.max_mass_defect(), 1e-6));

    let sphere = Sphere::<2>::new(2.0);
    let sol = heat_solve_sphere(&sphere, SphereHarmonics::linear(vec![0.0, 0.0, 1.0]), 1.0)?;
    // τ(0.2) = ln(0.6) / -2, decay e^{-τ}
    let want = 0.6f64.sqrt();
    items.push(SelfTestItem::new("sphere_degree_one_decay", (sol.decay(1, 0.2) - want).abs(), 1e-14));
    Ok(items)
}

/// Index of the grid-centred cell containing `x`.
pub fn cell_index(grid_n: usize, x: &Vect<2>) -> usize {
    let h = TAU / grid_n as f64;
    let idx = |v: f64| (((v.rem_euclid(TAU) / h) + 0.5).floor() as usize) % grid_n;
    idx(x[0]) * grid_n + idx(x[1])
}
