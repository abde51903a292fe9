//! Transports along a simulated path: the moving-metric parallel transport,
//! the damped transport, the variation transport and the reaction transports.
//!
//! The frame `U` solves the Stratonovich equation
//! `du = -Γ(dx, u) - ½ (dg/ds)^# u ds` column by column (Heun), where
//! `dg/ds` is the derivative of the metric along the simulation clock.
//! The other transports `Q` are integrated in frame coordinates,
//! `Q̂ = U_s⁻¹ Q U_0`, by explicit Euler on
//! `dQ̂ = U_s⁻¹ K(s, X_s) U_s Q̂ ds` for a generator `K` read off the chart,
//! so chart switches act on `U` only.

use std::io::Write;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow_solver::TorusNrf;
use crate::geometry::{ChartPoint, Christoffel, MetricFamily};
use crate::linalg::{self, Mat};
use crate::sde::{csv_error, PathSample, SimConfig, TimeDirection};

/// Default Gram tolerance factor: `tol_frame = FRAME_TOL_FACTOR · dt`.
pub const FRAME_TOL_FACTOR: f64 = 50.0;

/// Coefficients needed by the transports at one space-time point.
#[derive(Clone, Copy, Debug)]
pub struct LocalGeometry<const N: usize> {
    pub metric: Mat<N>,
    pub metric_inv: Mat<N>,
    pub christoffel: Christoffel<N>,
    /// `g⁻¹ dg/ds`, with `dg/ds = ± ∂_t g` according to the clock direction.
    pub dgds_sharp: Mat<N>,
}

impl<const N: usize> LocalGeometry<N> {
    pub fn at(family: &impl MetricFamily<N>, cfg: &SimConfig, t: f64, p: &ChartPoint<N>) -> Result<Self> {
        let metric = family.metric_at(t, p)?;
        let metric_inv = linalg::spd_inverse(&metric)?;
        let christoffel = family.christoffel_at(t, p)?;
        let dgds_sharp = metric_inv * family.dt_metric_at(t, p)? * cfg.clock_sign();
        Ok(Self { metric, metric_inv, christoffel, dgds_sharp })
    }

    /// `-Γ(dx, ·) - ½ (dg/ds)^# ds` as a matrix acting on frame columns.
    fn frame_generator(&self, dx: &crate::linalg::Vect<N>, ds: f64) -> Mat<N> {
        let mut m = Mat::<N>::zeros();
        for i in 0..N {
            let row = dx.transpose() * self.christoffel.0[i];
            for k in 0..N {
                m[(i, k)] = -row[k];
            }
        }
        m - self.dgds_sharp * (0.5 * ds)
    }
}

/// A `g`-orthonormal frame at `p`: the columns of `g^{-1/2}`.
pub fn orthonormal_frame<const N: usize>(family: &impl MetricFamily<N>, t: f64, p: &ChartPoint<N>) -> Result<Mat<N>> {
    linalg::sym_inv_sqrt(&family.metric_at(t, p)?)
}

/// `‖Uᵀ g U − I‖_∞`.
pub fn gram_defect<const N: usize>(frame: &Mat<N>, metric: &Mat<N>) -> f64 {
    linalg::max_abs(&(frame.transpose() * metric * frame - Mat::<N>::identity()))
}

/// Frames along a path, in the chart of each path point.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameTrace<const N: usize> {
    pub first_step: usize,
    pub frames: Vec<Mat<N>>,
    pub gram_defect: Vec<f64>,
    pub tol: f64,
}

impl<const N: usize> FrameTrace<N> {
    /// Frame at path point `k`.
    pub fn frame(&self, k: usize) -> &Mat<N> {
        &self.frames[k - self.first_step]
    }

    pub fn last_step(&self) -> usize {
        self.first_step + self.frames.len() - 1
    }

    /// `∥_{first,k} = U_k U_first⁻¹`.
    pub fn parallel(&self, k: usize) -> Mat<N> {
        self.frame(k) * self.frames[0].try_inverse().expect("frame is invertible")
    }

    pub fn max_defect(&self) -> f64 {
        self.gram_defect.iter().copied().fold(0.0, f64::max)
    }
}

/// Evolve the frame `u0` (orthonormal at the first path point) along the whole path.
pub fn evolve_frame<const N: usize>(
    path: &PathSample<N>,
    family: &impl MetricFamily<N>,
    cfg: &SimConfig,
    u0: &Mat<N>,
    tol: Option<f64>,
) -> Result<FrameTrace<N>> {
    evolve_frame_between(path, family, cfg, 0, path.n_steps(), u0, tol)
}

/// Evolve from path point `from` to path point `to`.
pub fn evolve_frame_between<const N: usize>(
    path: &PathSample<N>,
    family: &impl MetricFamily<N>,
    cfg: &SimConfig,
    from: usize,
    to: usize,
    u0: &Mat<N>,
    tol: Option<f64>,
) -> Result<FrameTrace<N>> {
    if from > to || to > path.n_steps() {
        return Err(Error::Config(format!("invalid step range {from}..{to} on a path of {} steps", path.n_steps())));
    }
    let tol = tol.unwrap_or(FRAME_TOL_FACTOR * cfg.dt());
    let mut frames = Vec::with_capacity(to - from + 1);
    let mut defects = Vec::with_capacity(to - from + 1);
    let mut geo = LocalGeometry::at(family, cfg, path.metric_times[from], &path.points[from])?;
    let mut u = *u0;
    defects.push(gram_defect(&u, &geo.metric));
    frames.push(u);
    for k in from..to {
        let ds = path.times[k + 1] - path.times[k];
        let dx = path.dx[k];
        let t_end = path.metric_times[k + 1];
        let event = path.event_at(k);
        let mut reached = ChartPoint::new(path.points[k].chart, path.points[k].coords + dx);
        if let Some(ev) = event {
            reached = ev.before;
        }
        let geo_end = LocalGeometry::at(family, cfg, t_end, &reached)?;
        let a0 = geo.frame_generator(&dx, ds);
        let a1 = geo_end.frame_generator(&dx, ds);
        let predictor = u + a0 * u;
        u += (a0 * u + a1 * predictor) * 0.5;
        let next = &path.points[k + 1];
        geo = if event.is_none() && reached == *next { geo_end } else { LocalGeometry::at(family, cfg, t_end, next)? };
        if let Some(ev) = event {
            u = ev.jacobian * u;
        }
        let defect = gram_defect(&u, &geo.metric);
        if !(defect <= tol) {
            return Err(Error::GramDrift { step: k + 1, defect, tol });
        }
        frames.push(u);
        defects.push(defect);
    }
    Ok(FrameTrace { first_step: from, frames, gram_defect: defects, tol })
}

/// A transport stored in frame coordinates `Q̂_k = U_k⁻¹ Q_k U_0`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransportTrace<const N: usize> {
    pub hat: Vec<Mat<N>>,
}

impl<const N: usize> TransportTrace<N> {
    /// `Q_k` as a map between chart tangent spaces.
    pub fn in_chart(&self, frames: &FrameTrace<N>, k: usize) -> Mat<N> {
        frames.frame(k) * self.hat[k - frames.first_step] * frames.frames[0].try_inverse().expect("invertible frame")
    }

    /// `∥⁻¹ Q_k`, an endomorphism of the initial tangent space.
    pub fn pulled_back(&self, frames: &FrameTrace<N>, k: usize) -> Mat<N> {
        let u0 = frames.frames[0];
        u0 * self.hat[k - frames.first_step] * u0.try_inverse().expect("invertible frame")
    }

    pub fn last(&self) -> &Mat<N> {
        self.hat.last().expect("non-empty trace")
    }

    /// `‖∥⁻¹ Q − I‖_∞` at the final step.
    pub fn gap(&self, frames: &FrameTrace<N>) -> f64 {
        linalg::max_abs(&(self.pulled_back(frames, frames.last_step()) - Mat::<N>::identity()))
    }

    /// Largest deviation of `Q` from an isometry, `max_k ‖Q̂_kᵀ Q̂_k − I‖_∞`.
    pub fn isometry_defect(&self) -> f64 {
        self.hat.iter().map(|q| linalg::max_abs(&(q.transpose() * q - Mat::<N>::identity()))).fold(0.0, f64::max)
    }

    /// Columns `step, s, q11..qnn, gram_defect` with the chart matrix of `Q`.
    pub fn write_csv(&self, path: &PathSample<N>, frames: &FrameTrace<N>, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["step".to_string(), "s".into()];
        for i in 1..=N {
            for j in 1..=N {
                header.push(format!("q{i}{j}"));
            }
        }
        header.push("gram_defect".into());
        out.write_record(&header).map_err(csv_error)?;
        for (idx, _) in self.hat.iter().enumerate() {
            let k = frames.first_step + idx;
            let q = self.in_chart(frames, k);
            let mut row = vec![k.to_string(), path.times[k].to_string()];
            for i in 0..N {
                for j in 0..N {
                    row.push(q[(i, j)].to_string());
                }
            }
            row.push(frames.gram_defect[idx].to_string());
            out.write_record(&row).map_err(csv_error)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Euler integration of `dQ̂ = U⁻¹ K U Q̂ ds` with `K` given per path point.
pub fn integrate_conjugated<const N: usize>(
    path: &PathSample<N>,
    frames: &FrameTrace<N>,
    mut generator: impl FnMut(usize) -> Result<Mat<N>>,
) -> Result<TransportTrace<N>> {
    let mut q = Mat::<N>::identity();
    let mut hat = Vec::with_capacity(frames.frames.len());
    hat.push(q);
    for k in frames.first_step..frames.last_step() {
        let ds = path.times[k + 1] - path.times[k];
        let u = frames.frame(k);
        let u_inv = u.try_inverse().ok_or(Error::GramDrift { step: k, defect: f64::INFINITY, tol: frames.tol })?;
        q += u_inv * generator(k)? * u * q * ds;
        hat.push(q);
    }
    Ok(TransportTrace { hat })
}

fn ricci_sharp<const N: usize>(family: &impl MetricFamily<N>, t: f64, p: &ChartPoint<N>) -> Result<Mat<N>> {
    Ok(family.curvature_at(t, p)?.ricci_sharp)
}

fn dgds_sharp<const N: usize>(family: &impl MetricFamily<N>, cfg: &SimConfig, t: f64, p: &ChartPoint<N>) -> Result<Mat<N>> {
    Ok(linalg::spd_inverse(&family.metric_at(t, p)?)? * family.dt_metric_at(t, p)? * cfg.clock_sign())
}

/// Damped transport: `K = -½ (Ric^# − (dg/ds)^#)`.
pub fn evolve_damped<const N: usize>(
    path: &PathSample<N>,
    family: &impl MetricFamily<N>,
    cfg: &SimConfig,
    frames: &FrameTrace<N>,
) -> Result<TransportTrace<N>> {
    integrate_conjugated(path, frames, |k| {
        let (t, p) = (path.metric_times[k], &path.points[k]);
        Ok((ricci_sharp(family, t, p)? - dgds_sharp(family, cfg, t, p)?) * -0.5)
    })
}

/// Variation of the stochastic flow: `K = ½ ((dg/ds)^# − Ric^#)`.
pub fn evolve_variation<const N: usize>(
    path: &PathSample<N>,
    family: &impl MetricFamily<N>,
    cfg: &SimConfig,
    frames: &FrameTrace<N>,
) -> Result<TransportTrace<N>> {
    integrate_conjugated(path, frames, |k| {
        let (t, p) = (path.metric_times[k], &path.points[k]);
        Ok((dgds_sharp(family, cfg, t, p)? - ricci_sharp(family, t, p)?) * 0.5)
    })
}

/// Covariant reaction transport `K = -(Ric^# − ½ (dg/ds)^# − F′ I)`, with
/// `reaction(t, p)` returning `F′(f(t, p))` at metric time `t`.
pub fn evolve_theta<const N: usize>(
    path: &PathSample<N>,
    family: &impl MetricFamily<N>,
    cfg: &SimConfig,
    frames: &FrameTrace<N>,
    reaction: impl Fn(f64, &ChartPoint<N>) -> f64,
) -> Result<TransportTrace<N>> {
    integrate_conjugated(path, frames, |k| {
        let (t, p) = (path.metric_times[k], &path.points[k]);
        let k_mat = ricci_sharp(family, t, p)? - dgds_sharp(family, cfg, t, p)? * 0.5;
        Ok(Mat::<N>::identity() * reaction(t, p) - k_mat)
    })
}

/// The surface reaction transport on the torus flow: `K = -(3r/2 − 2R) I`,
/// with `R` and `r` read at flow time `T − s`.
///
/// Requires the flow itself as the family (`κ = 2`), speed `σ = 2` and the reversed clock.
pub fn evolve_phi(path: &PathSample<2>, family: &TorusNrf, cfg: &SimConfig, frames: &FrameTrace<2>) -> Result<TransportTrace<2>> {
    if family.flow_kappa() != 2.0 || cfg.speed != 2.0 || cfg.direction != TimeDirection::Reversed {
        return Err(Error::Config("φ transport needs the κ = 2 torus flow, speed 2 and the reversed clock".into()));
    }
    let sol: &Arc<_> = family.solution();
    integrate_conjugated(path, frames, |k| {
        let f = sol.point(family.flow_time(path.metric_times[k]), &path.points[k].coords)?;
        Ok(Mat::<2>::identity() * (2.0 * f.scalar - 1.5 * f.average))
    })
}

/// Final-time equivalence diagnostics on one path.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EquivalenceGap {
    pub gap_w: f64,
    pub gap_tx: f64,
    /// `max_k ‖Ŵ_kᵀ Ŵ_k − I‖_∞`: zero iff `W` maps `g(T)` isometrically onto `g(T − s)`.
    pub isometry_defect_w: f64,
    pub max_gram_defect: f64,
}

pub fn equivalence_gap<const N: usize>(
    path: &PathSample<N>,
    family: &impl MetricFamily<N>,
    cfg: &SimConfig,
    tol: Option<f64>,
) -> Result<EquivalenceGap> {
    let u0 = orthonormal_frame(family, path.metric_times[0], &path.points[0])?;
    let frames = evolve_frame(path, family, cfg, &u0, tol)?;
    let w = evolve_damped(path, family, cfg, &frames)?;
    let tx = evolve_variation(path, family, cfg, &frames)?;
    Ok(EquivalenceGap {
        gap_w: w.gap(&frames),
        gap_tx: tx.gap(&frames),
        isometry_defect_w: w.isometry_defect(),
        max_gram_defect: frames.max_defect(),
    })
}

#[cfg(test)]
mod tests;
