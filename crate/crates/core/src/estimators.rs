//! Monte Carlo estimators built on simulated paths and their transports.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow_solver::{TorusFlowSolution, TorusNrf};
use crate::geometry::{Cigar, ChartPoint, Euclidean, Frozen, Hyperbolic, MetricFamily, Sphere};
use crate::linalg::{spd_inverse, Mat, Vect};
use crate::pde_oracle::{cell_index, conjugate_solve_torus, ConformalTorus, GridSolve, HeatSolution, Mollifier};
use crate::sde::{
    coefficients, csv_error, derive_seed, distances_from, run_paths, simulate_path, terminal_points, NoiseStream,
    PathSample, SimConfig, TimeDirection,
};
use crate::stats::{ks_two_sample, pairwise_sum, MeanEstimate};
use crate::transport::{evolve_damped, evolve_frame, evolve_phi, orthonormal_frame, FrameTrace};

/// Default bound on normalized residuals `|mean| / std_error`.
pub const DEFAULT_RESIDUAL_THRESHOLD: f64 = 3.0;

/// Default KS p-value threshold for law comparisons.
pub const DEFAULT_KS_THRESHOLD: f64 = 0.01;

/// Everything needed to rerun an estimator bitwise.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConfigEcho {
    pub family: String,
    pub kappa: f64,
    pub sim: SimConfig,
    pub dt: f64,
    pub params: BTreeMap<String, f64>,
}

impl ConfigEcho {
    pub fn new<const N: usize>(family: &impl MetricFamily<N>, sim: &SimConfig) -> Self {
        Self { family: family.name().to_string(), kappa: family.flow_kappa(), sim: *sim, dt: sim.dt(), params: BTreeMap::new() }
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }
}

/// A numeric table exported as CSV.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self { columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(&self.columns).map_err(csv_error)?;
        for row in &self.rows {
            out.write_record(row.iter().map(|v| v.to_string())).map_err(csv_error)?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EstimatorReport {
    pub estimator: String,
    pub estimate: Vec<f64>,
    pub std_error: Vec<f64>,
    pub n_paths: u64,
    pub diagnostics: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
    /// `None` when the estimator carries no threshold.
    pub pass: Option<bool>,
    pub config_echo: ConfigEcho,
    /// Per-path statistics, written in long format.
    #[serde(skip)]
    pub per_path: Vec<(String, Vec<f64>)>,
    /// Auxiliary tables (curves, CDFs).
    #[serde(skip)]
    pub tables: BTreeMap<String, Table>,
}

impl EstimatorReport {
    pub fn new(estimator: &str, echo: ConfigEcho, n_paths: u64) -> Self {
        Self {
            estimator: estimator.to_string(),
            estimate: Vec::new(),
            std_error: Vec::new(),
            n_paths,
            diagnostics: BTreeMap::new(),
            warnings: Vec::new(),
            pass: None,
            config_echo: echo,
            per_path: Vec::new(),
            tables: BTreeMap::new(),
        }
    }

    fn push_estimate(&mut self, est: &MeanEstimate) {
        self.estimate.push(est.mean);
        self.std_error.push(est.std_error);
    }

    fn diag(&mut self, key: &str, value: f64) {
        self.diagnostics.insert(key.to_string(), value);
    }

    fn require(&mut self, ok: bool) {
        self.pass = Some(self.pass.unwrap_or(true) && ok);
    }

    /// Columns `path, statistic, value`.
    pub fn write_long_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["path", "statistic", "value"]).map_err(csv_error)?;
        for (name, values) in &self.per_path {
            for (i, v) in values.iter().enumerate() {
                out.write_record([i.to_string(), name.clone(), v.to_string()]).map_err(csv_error)?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Empirical mean and covariance of vector samples.
fn vector_moments<const N: usize>(samples: &[Vect<N>]) -> (Vect<N>, Mat<N>) {
    let n = samples.len() as f64;
    let mean = Vect::<N>::from_fn(|i, _| pairwise_sum(&samples.iter().map(|s| s[i]).collect::<Vec<_>>()) / n);
    let mut cov = Mat::<N>::zeros();
    if samples.len() > 1 {
        for i in 0..N {
            for j in 0..N {
                let prod: Vec<f64> = samples.iter().map(|s| (s[i] - mean[i]) * (s[j] - mean[j])).collect();
                cov[(i, j)] = pairwise_sum(&prod) / (n - 1.0);
            }
        }
    }
    (mean, cov)
}

/// Time profile `a(s)` of the Bismut weight `k_s = a(s) U₀⁻¹ v`; it is
/// normalized so that its left Riemann sum over the step grid equals one.
pub type WeightProfile<'a> = &'a (dyn Fn(f64) -> f64 + Sync);

fn profile_weights(cfg: &SimConfig, profile: Option<WeightProfile<'_>>) -> Result<Vec<f64>> {
    let raw: Vec<f64> = (0..cfg.n_steps).map(|k| profile.map_or(1.0, |a| a(cfg.clock(k)))).collect();
    let total: f64 = (0..cfg.n_steps).map(|k| raw[k] * (cfg.clock(k + 1) - cfg.clock(k))).sum();
    if !(total.abs() > 1e-300) || !total.is_finite() {
        return Err(Error::Config("weight profile integrates to zero".into()));
    }
    Ok(raw.into_iter().map(|a| a / total).collect())
}

/// Per-path samples of the gradient covector `df(T, ·)_x`, so that
/// `df(T, ·)_x v` is estimated by the mean of `G · v`.
///
/// `G = f₀(X_T) U₀^{-T} Σ_k a_k Ŵ_kᵀ ΔW_k` with `ΔW_k = U_k⁻¹ σ_k ΔB_k` the
/// frame-coordinate Brownian increment and `Ŵ` the damped transport.
pub fn bismut_covectors<const N: usize, F: MetricFamily<N>>(
    family: &F,
    cfg: &SimConfig,
    f0: &(dyn Fn(&ChartPoint<N>) -> f64 + Sync),
    x: &ChartPoint<N>,
    n_paths: u64,
    profile: Option<WeightProfile<'_>>,
) -> Result<Vec<Vect<N>>> {
    if cfg.direction != TimeDirection::Reversed {
        return Err(Error::Config("the Bismut formula runs on the reversed clock".into()));
    }
    if cfg.speed != 1.0 {
        return Err(Error::Config("the Bismut formula is implemented for speed 1".into()));
    }
    cfg.validate(family)?;
    let weights = profile_weights(cfg, profile)?;
    let u0 = orthonormal_frame(family, cfg.metric_clock(0.0), x)?;
    let u0_inv_t = u0.try_inverse().ok_or_else(|| Error::Degenerate("singular initial frame".into()))?.transpose();
    run_paths(n_paths, |i| {
        let path = simulate_path(family, cfg, x, i)?;
        let frames = evolve_frame(&path, family, cfg, &u0, None)?;
        let damped = evolve_damped(&path, family, cfg, &frames)?;
        let mut z = Vect::<N>::zeros();
        for k in 0..path.n_steps() {
            let (_, diffusion) = coefficients(family, cfg.speed, path.metric_times[k], &path.points[k])?;
            let u_inv = frames.frame(k).try_inverse().ok_or_else(|| Error::Degenerate("singular frame".into()))?;
            let dw = u_inv * diffusion * path.dw[k];
            z += damped.hat[k].transpose() * dw * weights[k];
        }
        Ok(u0_inv_t * z * f0(path.terminal()))
    })
}

/// Directional derivative `df(T, ·)_x v` of the heat solution with initial data `f0`.
pub fn bismut_gradient<const N: usize, F: MetricFamily<N>>(
    family: &F,
    cfg: &SimConfig,
    f0: &(dyn Fn(&ChartPoint<N>) -> f64 + Sync),
    x: &ChartPoint<N>,
    v: &Vect<N>,
    n_paths: u64,
    profile: Option<WeightProfile<'_>>,
) -> Result<EstimatorReport> {
    let g = bismut_covectors(family, cfg, f0, x, n_paths, profile)?;
    let samples: Vec<f64> = g.iter().map(|c| c.dot(v)).collect();
    let est = MeanEstimate::from_samples(&samples);
    let mut echo = ConfigEcho::new(family, cfg);
    for i in 0..N {
        echo = echo.with(&format!("x{}", i + 1), x.coords[i]).with(&format!("v{}", i + 1), v[i]);
    }
    let mut report = EstimatorReport::new("bismut_gradient", echo.with("chart", x.chart as f64), n_paths);
    report.push_estimate(&est);
    report.diag("sample_variance", est.std_error.powi(2) * n_paths as f64);
    report.per_path.push(("weighted_value".into(), samples));
    Ok(report)
}

/// `‖∇^T f(T, x)‖_{g(T)}` from Bismut covector samples, with a delta-method standard error.
pub fn gradient_norm<const N: usize>(covectors: &[Vect<N>], metric: &Mat<N>) -> Result<MeanEstimate> {
    let (mean, cov) = vector_moments(covectors);
    let g_inv = spd_inverse(metric)?;
    let norm = (mean.transpose() * g_inv * mean)[0].max(0.0).sqrt();
    let n = covectors.len() as f64;
    let std_error = if norm > 0.0 {
        let d = g_inv * mean / norm;
        ((d.transpose() * cov * d)[0] / n).max(0.0).sqrt()
    } else {
        (cov.trace() / n).max(0.0).sqrt()
    };
    Ok(MeanEstimate { mean: norm, std_error, n: covectors.len() })
}

/// Sup over `points` of the estimated gradient norm at each horizon in `horizons`,
/// checked against `‖f₀‖_∞ / √T` and for decrease in `T`.
#[allow(clippy::too_many_arguments)]
pub fn gradient_bound_check<const N: usize, F: MetricFamily<N>>(
    family: &F,
    base: &SimConfig,
    f0: &(dyn Fn(&ChartPoint<N>) -> f64 + Sync),
    sup_norm: f64,
    horizons: &[f64],
    points: &[ChartPoint<N>],
    n_paths: u64,
    sigmas: f64,
) -> Result<EstimatorReport> {
    if horizons.is_empty() || points.is_empty() {
        return Err(Error::Config("gradient bound check needs horizons and sample points".into()));
    }
    let dt = base.dt();
    let mut report = EstimatorReport::new(
        "gradient_bound",
        ConfigEcho::new(family, base).with("sup_norm", sup_norm).with("n_points", points.len() as f64),
        n_paths,
    );
    let mut table = Table::new(&["T", "point", "norm", "std_error", "bound"]);
    let mut sups: Vec<MeanEstimate> = Vec::new();
    for (h, &t) in horizons.iter().enumerate() {
        let cfg = SimConfig::with_dt(t, dt).reversed().seed(derive_seed(base.master_seed, h as u64));
        let bound = sup_norm / t.sqrt();
        let mut best: Option<MeanEstimate> = None;
        for (j, p) in points.iter().enumerate() {
            let g = bismut_covectors(family, &cfg, f0, p, n_paths, None)?;
            let est = gradient_norm(&g, &family.metric_at(t, p)?)?;
            table.push(vec![t, j as f64, est.mean, est.std_error, bound]);
            if best.as_ref().is_none_or(|b| est.mean > b.mean) {
                best = Some(est);
            }
        }
        let best = best.expect("non-empty points");
        report.push_estimate(&best);
        report.diag(&format!("bound_T{t}"), bound);
        report.diag(&format!("slack_T{t}"), bound + sigmas * best.std_error - best.mean);
        report.require(best.mean <= bound + sigmas * best.std_error);
        sups.push(best);
    }
    let ordered = sups.windows(2).all(|w| w[1].mean <= w[0].mean + sigmas * w[0].std_error.hypot(w[1].std_error));
    report.diag("ordered_decreasing", if ordered { 1.0 } else { 0.0 });
    report.require(ordered);
    report.tables.insert("gradient_norms".into(), table);
    Ok(report)
}

/// `E[M_{t_k} - M_0] = 0` at each checkpoint, from one series per path.
pub fn martingale_drift_test(series: &[Vec<f64>], checkpoints: &[usize], threshold: f64, echo: ConfigEcho) -> Result<EstimatorReport> {
    if series.is_empty() || checkpoints.is_empty() {
        return Err(Error::Config("drift test needs paths and checkpoints".into()));
    }
    let mut report = EstimatorReport::new("martingale_drift", echo.with("threshold", threshold), series.len() as u64);
    let mut worst = 0.0f64;
    let mut degenerate = 0usize;
    let mut table = Table::new(&["step", "mean", "std_error", "normalized"]);
    for &k in checkpoints {
        let incr: Vec<f64> = series
            .iter()
            .map(|m| m.get(k).map(|v| v - m[0]).ok_or_else(|| Error::Config(format!("checkpoint {k} beyond series length"))))
            .collect::<Result<_>>()?;
        let est = MeanEstimate::from_samples(&incr);
        let z = if est.std_error > 0.0 {
            est.mean.abs() / est.std_error
        } else {
            degenerate += 1;
            if est.mean == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        };
        worst = worst.max(z);
        table.push(vec![k as f64, est.mean, est.std_error, z]);
        report.push_estimate(&est);
    }
    if degenerate > 0 {
        report.warnings.push(format!("{degenerate} checkpoint(s) with zero sample variance"));
    }
    report.diag("max_normalized_residual", worst);
    report.diag("degenerate_checkpoints", degenerate as f64);
    report.require(worst <= threshold);
    report.tables.insert("checkpoints".into(), table);
    Ok(report)
}

/// `k·n/m` for `k = 1..=m`.
pub fn even_checkpoints(n_steps: usize, count: usize) -> Vec<usize> {
    (1..=count).map(|k| k * n_steps / count).collect()
}

/// `M_k = f(X_k) - f(X_0) - (σ/2) Σ_{j<k} Δ_t f(X_j) Δs` along a path
/// (`laplacian(t, p)` is `Δ_t f` at metric time `t`).
pub fn compensated_series<const N: usize>(
    path: &PathSample<N>,
    speed: f64,
    f: impl Fn(&ChartPoint<N>) -> f64,
    laplacian: impl Fn(f64, &ChartPoint<N>) -> f64,
) -> Vec<f64> {
    let f0 = f(&path.points[0]);
    let mut comp = 0.0;
    let mut out = Vec::with_capacity(path.points.len());
    out.push(0.0);
    for k in 0..path.n_steps() {
        comp += 0.5 * speed * laplacian(path.metric_times[k], &path.points[k]) * (path.times[k + 1] - path.times[k]);
        out.push(f(&path.points[k + 1]) - f0 - comp);
    }
    out
}

/// `M_k = df(T - s_k, ·)(W_k v)` along a reversed-clock path.
pub fn damped_gradient_series<const N: usize, F: MetricFamily<N>>(
    path: &PathSample<N>,
    family: &F,
    cfg: &SimConfig,
    frames: &FrameTrace<N>,
    heat: &impl HeatSolution<N>,
    v: &Vect<N>,
) -> Result<Vec<f64>> {
    let w = evolve_damped(path, family, cfg, frames)?;
    (0..=path.n_steps())
        .map(|k| {
            let t = path.metric_times[k];
            let p = &path.points[k];
            let df = family.metric_at(t, p)? * heat.gradient(t, p)?;
            Ok(df.dot(&(w.in_chart(frames, k) * v)))
        })
        .collect()
}

/// `M_k = dR(T - s_k, ·)(φ_k v)` along a torus-flow path.
pub fn phi_gradient_series(path: &PathSample<2>, family: &TorusNrf, cfg: &SimConfig, frames: &FrameTrace<2>, v: &Vect<2>) -> Result<Vec<f64>> {
    let phi = evolve_phi(path, family, cfg, frames)?;
    let sol = family.solution();
    (0..=path.n_steps())
        .map(|k| {
            let s = family.flow_time(path.metric_times[k]);
            let dr = sol.point(s, &path.points[k].coords)?.grad_scalar;
            Ok(dr.dot(&(phi.in_chart(frames, k) * v)))
        })
        .collect()
}

/// Law comparison of the evolving-metric process with a time-changed Brownian motion of `g(0)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeChangeModel {
    Sphere,
    Hyperbolic,
    Cigar,
}

/// Accumulated clock of a reference path.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeChange {
    pub tau: Vec<f64>,
}

impl TimeChange {
    /// Deterministic clock on a uniform grid of `n_steps` over `[0, horizon]`.
    pub fn deterministic(horizon: f64, n_steps: usize, tau: impl Fn(f64) -> f64) -> Self {
        Self { tau: (0..=n_steps).map(|k| tau(horizon * k as f64 / n_steps as f64)).collect() }
    }

    pub fn is_valid(&self) -> bool {
        self.tau.first() == Some(&0.0) && self.tau.windows(2).all(|w| w[1] > w[0])
    }
}

/// The cigar reference point at family time `horizon`: a `g(0)`-Brownian path
/// `B_σ` is run in its own time and the family clock `t(σ)` is integrated along
/// it by the trapezoid rule from `dt/dσ = 1 / rate(t, B_σ)`; the point is read
/// off where `t(σ) = horizon` by linear interpolation.
pub fn cigar_reference_point(cigar: &Cigar, horizon: f64, dt: f64, seed: u64, path_index: u64) -> Result<(ChartPoint<2>, TimeChange)> {
    let frozen = Frozen::new(cigar.clone(), 0.0);
    // rate ≤ e^{2κT}, so σ = T e^{2κT} always reaches family time T
    let sigma_max = horizon * (2.0 * cigar.flow_kappa() * horizon).exp() * 1.05;
    let cfg = SimConfig::with_dt(sigma_max, dt).seed(seed);
    let path = simulate_path(&frozen, &cfg, &ChartPoint::origin(), path_index)?;
    let mut t = 0.0;
    for k in 0..path.n_steps() {
        let h = path.times[k + 1] - path.times[k];
        let a = 1.0 / cigar.clock_rate(t, &path.points[k].coords);
        let predictor = t + h * a;
        let b = 1.0 / cigar.clock_rate(predictor, &path.points[k + 1].coords);
        let next = t + 0.5 * h * (a + b);
        if next >= horizon {
            let frac = (horizon - t) / (next - t);
            let x = path.points[k].coords * (1.0 - frac) + path.points[k + 1].coords * frac;
            let mut tau: Vec<f64> = path.times[..=k].to_vec();
            tau.push(path.times[k] + frac * h);
            return Ok((ChartPoint::new(0, x), TimeChange { tau }));
        }
        t = next;
    }
    Err(Error::Degenerate(format!("reference clock reached only {t} < {horizon}")))
}

/// Two-sample KS comparison of `g(0)`-distance from `x0` between `X_T` and
/// the time-changed reference `B_{τ(T)}`.
pub fn time_change_law_test(model: TimeChangeModel, cfg: &SimConfig, n_paths: u64, threshold: f64) -> Result<EstimatorReport> {
    let x0 = ChartPoint::<2>::origin();
    let ref_seed = derive_seed(cfg.master_seed, 0x7A0);
    let dt = cfg.dt();
    let (echo, sample, reference, tau) = match model {
        TimeChangeModel::Sphere => {
            let fam = Sphere::<2>::new(2.0);
            let tau = fam.time_change(cfg.horizon);
            let (a, b) = deterministic_pair(&fam, cfg, &x0, n_paths, tau, ref_seed)?;
            (ConfigEcho::new(&fam, cfg), a, b, tau)
        }
        TimeChangeModel::Hyperbolic => {
            let fam = Hyperbolic::<2>::new(2.0);
            let tau = fam.time_change(cfg.horizon);
            let (a, b) = deterministic_pair(&fam, cfg, &x0, n_paths, tau, ref_seed)?;
            (ConfigEcho::new(&fam, cfg), a, b, tau)
        }
        TimeChangeModel::Cigar => {
            let fam = Cigar::new(2.0);
            let ends = terminal_points(&fam, cfg, &x0, n_paths)?;
            let a = distances_from(&fam, &x0, &ends)?;
            let refs = run_paths(n_paths, |i| cigar_reference_point(&fam, cfg.horizon, dt, ref_seed, i))?;
            let taus: Vec<f64> = refs.iter().map(|(_, c)| *c.tau.last().unwrap()).collect();
            let pts: Vec<ChartPoint<2>> = refs.into_iter().map(|(p, _)| p).collect();
            let b = distances_from(&fam, &x0, &pts)?;
            (ConfigEcho::new(&fam, cfg), a, b, MeanEstimate::from_samples(&taus).mean)
        }
    };
    let ks = ks_two_sample(&sample, &reference)?;
    let mut report = EstimatorReport::new("time_change_law", echo.with("reference_seed", ref_seed as f64), n_paths);
    let (a, b) = (MeanEstimate::from_samples(&sample), MeanEstimate::from_samples(&reference));
    report.push_estimate(&a);
    report.push_estimate(&b);
    report.diag("ks_statistic", ks.statistic);
    report.diag("ks_p_value", ks.p_value);
    report.diag("tau", tau);
    report.require(ks.p_value > threshold);
    report.tables.insert("ks_cdf".into(), ecdf_table(&sample, &reference));
    report.per_path.push(("distance".into(), sample));
    report.per_path.push(("reference_distance".into(), reference));
    Ok(report)
}

fn deterministic_pair<F: MetricFamily<2> + Clone>(
    family: &F,
    cfg: &SimConfig,
    x0: &ChartPoint<2>,
    n_paths: u64,
    tau: f64,
    ref_seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let ends = terminal_points(family, cfg, x0, n_paths)?;
    let frozen = Frozen::new(family.clone(), 0.0);
    let ref_cfg = SimConfig::with_dt(tau, cfg.dt()).seed(ref_seed);
    let ref_cfg = SimConfig { n_steps: ref_cfg.n_steps.max(10), ..ref_cfg };
    let refs = terminal_points(&frozen, &ref_cfg, x0, n_paths)?;
    Ok((distances_from(family, x0, &ends)?, distances_from(family, x0, &refs)?))
}

/// Empirical CDFs of two samples on the merged support: `value, cdf_a, cdf_b`.
pub fn ecdf_table(a: &[f64], b: &[f64]) -> Table {
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(f64::total_cmp);
    sb.sort_by(f64::total_cmp);
    let mut grid: Vec<f64> = sa.iter().chain(&sb).copied().collect();
    grid.sort_by(f64::total_cmp);
    let step = (grid.len() / 200).max(1);
    let mut table = Table::new(&["value", "cdf_a", "cdf_b"]);
    for v in grid.iter().step_by(step) {
        let fa = sa.partition_point(|x| x <= v) as f64 / sa.len() as f64;
        let fb = sb.partition_point(|x| x <= v) as f64 / sb.len() as f64;
        table.push(vec![*v, fa, fb]);
    }
    table
}

/// `L` in frame coordinates of the initial tangent space and its realized
/// and predicted quadratic variation.
#[derive(Clone, Debug, PartialEq)]
pub struct IntrinsicMartingale<const N: usize> {
    pub l: Vec<Vect<N>>,
    pub realized_qv: Vec<f64>,
    pub predicted_qv: Vec<f64>,
}

/// `dL = U_s⁻¹ Ric^# U_s dW` with `dW = U_s⁻¹ σ_s dB` the frame-coordinate
/// Brownian increment; the prediction integrates `Σ λᵢ²` by the left rule.
pub fn intrinsic_martingale<const N: usize, F: MetricFamily<N>>(
    path: &PathSample<N>,
    family: &F,
    cfg: &SimConfig,
    frames: &FrameTrace<N>,
) -> Result<IntrinsicMartingale<N>> {
    let n = path.n_steps();
    let mut l = vec![Vect::<N>::zeros()];
    let mut realized = vec![0.0];
    let mut predicted = vec![0.0];
    for k in 0..n {
        let (t, p) = (path.metric_times[k], &path.points[k]);
        let curv = family.curvature_at(t, p)?;
        let u = frames.frame(k);
        let u_inv = u.try_inverse().ok_or_else(|| Error::Degenerate("singular frame".into()))?;
        let (_, diffusion) = coefficients(family, cfg.speed, t, p)?;
        let dw = u_inv * diffusion * path.dw[k];
        let dl = u_inv * curv.ricci_sharp * u * dw;
        let ds = path.times[k + 1] - path.times[k];
        l.push(l[k] + dl);
        realized.push(realized[k] + dl.norm_squared());
        predicted.push(predicted[k] + curv.eigenvalues.norm_squared() * ds * cfg.speed);
    }
    Ok(IntrinsicMartingale { l, realized_qv: realized, predicted_qv: predicted })
}

/// Mean realized `[L, L]_T` against the predicted value, and `E[L_T] = 0`.
pub fn intrinsic_martingale_check<const N: usize, F: MetricFamily<N>>(
    family: &F,
    cfg: &SimConfig,
    x0: &ChartPoint<N>,
    n_paths: u64,
    qv_tolerance: f64,
    sigmas: f64,
) -> Result<EstimatorReport> {
    cfg.validate(family)?;
    let u0 = orthonormal_frame(family, cfg.metric_clock(0.0), x0)?;
    let runs = run_paths(n_paths, |i| {
        let path = simulate_path(family, cfg, x0, i)?;
        let frames = evolve_frame(&path, family, cfg, &u0, None)?;
        intrinsic_martingale(&path, family, cfg, &frames)
    })?;
    let n = cfg.n_steps;
    let mut report = EstimatorReport::new(
        "intrinsic_martingale",
        ConfigEcho::new(family, cfg).with("qv_tolerance", qv_tolerance),
        n_paths,
    );
    let realized: Vec<f64> = runs.iter().map(|r| r.realized_qv[n]).collect();
    let predicted: Vec<f64> = runs.iter().map(|r| r.predicted_qv[n]).collect();
    let (re, pr) = (MeanEstimate::from_samples(&realized), MeanEstimate::from_samples(&predicted));
    report.push_estimate(&re);
    report.push_estimate(&pr);
    let rel = if pr.mean != 0.0 { (re.mean - pr.mean).abs() / pr.mean.abs() } else { re.mean.abs() };
    report.diag("qv_relative_error", rel);
    report.require(rel <= qv_tolerance);
    let mut worst = 0.0f64;
    for i in 0..N {
        let comp: Vec<f64> = runs.iter().map(|r| r.l[n][i]).collect();
        let est = MeanEstimate::from_samples(&comp);
        let z = est.z_score(0.0);
        worst = worst.max(z);
        report.push_estimate(&est);
    }
    report.diag("max_abs_l", runs.iter().flat_map(|r| r.l.iter().map(|v| v.amax())).fold(0.0, f64::max));
    report.diag("mean_l_normalized", worst);
    report.require(worst <= sigmas);
    let mut curve = Table::new(&["t", "realized_qv", "predicted_qv"]);
    let stride = (n / 200).max(1);
    for k in (0..=n).step_by(stride) {
        let r: Vec<f64> = runs.iter().map(|x| x.realized_qv[k]).collect();
        let p: Vec<f64> = runs.iter().map(|x| x.predicted_qv[k]).collect();
        curve.push(vec![cfg.clock(k), pairwise_sum(&r) / r.len() as f64, pairwise_sum(&p) / p.len() as f64]);
    }
    report.tables.insert("qv_curve".into(), curve);
    report.per_path.push(("realized_qv".into(), realized));
    report.per_path.push(("predicted_qv".into(), predicted));
    Ok(report)
}

/// Thresholds of the conjugate-heat comparison.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ConjugateThresholds {
    pub l1: f64,
    pub mass: f64,
}

impl Default for ConjugateThresholds {
    fn default() -> Self {
        Self { l1: 0.05, mass: 1e-6 }
    }
}

/// Histogram of `X_T` (started from the mollified point mass) over grid-centred
/// cells against the conjugate-heat density of the same background.
///
/// Static backgrounds must be flat (they are simulated as the Euclidean torus).
#[allow(clippy::too_many_arguments)]
pub fn conjugate_heat_consistency(
    background: &ConformalTorus,
    cfg: &SimConfig,
    x0: &Vect<2>,
    n_paths: u64,
    grid_n: usize,
    pde_dt: f64,
    thresholds: ConjugateThresholds,
) -> Result<EstimatorReport> {
    let mut setup = GridSolve::new(grid_n, cfg.horizon).speed(cfg.speed).steps(pde_dt, cfg.horizon);
    setup.direction = cfg.direction;
    let density = conjugate_solve_torus(background, x0, None, &setup)?;
    let moll = Mollifier::new(*x0, density.mollifier_width);
    let start_seed = derive_seed(cfg.master_seed, 0x5747);
    let start = |i: u64| ChartPoint::new(0, moll.sample(&NoiseStream::new(start_seed, i, 1.0).increment::<2>()));
    let (ends, echo) = match background {
        ConformalTorus::Static { u, .. } => {
            if u.iter().any(|v| *v != 0.0) {
                return Err(Error::Unsupported("Monte Carlo on a non-flat static torus"));
            }
            let fam = Euclidean::<2>::torus(0.0);
            cfg.validate(&fam)?;
            let ends = run_paths(n_paths, |i| simulate_path(&fam, cfg, &start(i), i).map(|p| *p.terminal()))?;
            (ends, ConfigEcho::new(&fam, cfg))
        }
        ConformalTorus::Flow(fam) => {
            cfg.validate(fam)?;
            let ends = run_paths(n_paths, |i| simulate_path(fam, cfg, &start(i), i).map(|p| *p.terminal()))?;
            (ends, ConfigEcho::new(fam, cfg))
        }
    };
    let mut counts = vec![0u64; grid_n * grid_n];
    for p in &ends {
        counts[cell_index(grid_n, &p.coords)] += 1;
    }
    let last = density.times.len() - 1;
    let pde = density.cell_probabilities(last);
    let total = n_paths as f64;
    let l1: f64 = pairwise_sum(&counts.iter().zip(&pde).map(|(&c, p)| (c as f64 / total - p).abs()).collect::<Vec<_>>());
    let noise: f64 = (2.0 / (std::f64::consts::PI * total)).sqrt() * pde.iter().map(|p| p.max(0.0).sqrt()).sum::<f64>();
    let mass_defect = density.max_mass_defect();
    let mut report = EstimatorReport::new(
        "conjugate_heat",
        echo.with("grid_n", grid_n as f64).with("pde_dt", pde_dt).with("mollifier_width", density.mollifier_width),
        n_paths,
    );
    report.estimate.push(l1);
    report.std_error.push(f64::NAN);
    report.diag("l1_distance", l1);
    report.diag("l1_noise_floor", noise);
    report.diag("mass_defect", mass_defect);
    report.diag("initial_mass_defect", (density.mass(0) - 1.0).abs());
    report.diag("min_density", density.min_value);
    report.diag("clipped_values", density.clipped as f64);
    if density.clipped > 0 {
        report.warnings.push(format!("{} negative density values clipped (min {})", density.clipped, density.min_value));
    }
    if n_paths < 10 * (grid_n * grid_n) as u64 {
        report.warnings.push(format!("histogram underfilled: {n_paths} paths for {} cells", grid_n * grid_n));
    }
    report.require(l1 <= thresholds.l1 && mass_defect <= thresholds.mass);
    let mut table = Table::new(&["x1", "x2", "mc", "pde"]);
    let h = std::f64::consts::TAU / grid_n as f64;
    for (idx, (&c, p)) in counts.iter().zip(&pde).enumerate() {
        table.push(vec![(idx / grid_n) as f64 * h, (idx % grid_n) as f64 * h, c as f64 / total, *p]);
    }
    report.tables.insert("histogram".into(), table);
    Ok(report)
}

/// Both sides of the pointwise gradient estimate for the surface flow (`r = 0`):
/// `‖∇R(T, x)‖_T ≤ sup ‖∇R(0)‖_0 · E[exp ∫₀ᵀ 2R(T - s, X_s) ds]`.
pub fn scalar_gradient_estimate_check(sol: Arc<TorusFlowSolution>, cfg: &SimConfig, x: &ChartPoint<2>, n_paths: u64) -> Result<EstimatorReport> {
    let family = TorusNrf::new(sol.clone(), 2.0)?;
    if cfg.direction != TimeDirection::Reversed || cfg.speed != 2.0 {
        return Err(Error::Config("the surface estimate needs speed 2 on the reversed clock".into()));
    }
    cfg.validate(&family)?;
    let t = cfg.horizon;
    let lhs = {
        let g = sol.scalar_curvature_gradient(family.flow_time(t), &x.coords)?;
        let u = sol.point(family.flow_time(t), &x.coords)?.u;
        g.norm() * (0.5 * u).exp()
    };
    let sup0 = sol.max_scalar_gradient_norm(0);
    let growth = run_paths(n_paths, |i| {
        let path = simulate_path(&family, cfg, x, i)?;
        let r: Vec<f64> = (0..=path.n_steps())
            .map(|k| sol.point(family.flow_time(path.metric_times[k]), &path.points[k].coords).map(|p| p.scalar))
            .collect::<Result<_>>()?;
        let integral: f64 = (0..path.n_steps()).map(|k| (r[k] + r[k + 1]) * (path.times[k + 1] - path.times[k])).sum();
        Ok(integral.exp())
    })?;
    let est = MeanEstimate::from_samples(&growth);
    let rhs = sup0 * est.mean;
    let mut report = EstimatorReport::new(
        "scalar_gradient_estimate",
        ConfigEcho::new(&family, cfg).with("x1", x.coords[0]).with("x2", x.coords[1]),
        n_paths,
    );
    report.estimate = vec![lhs, rhs];
    report.std_error = vec![0.0, sup0 * est.std_error];
    report.diag("lhs", lhs);
    report.diag("rhs", rhs);
    report.diag("sup_initial_gradient", sup0);
    report.diag("mean_growth", est.mean);
    report.diag("slack", rhs - lhs);
    report.require(rhs - lhs >= 0.0);
    report.per_path.push(("growth".into(), growth));
    Ok(report)
}
