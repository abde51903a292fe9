//! Euler–Maruyama simulation of `g(t)`-Brownian motion in local charts.
//!
//! In a chart the process solves the Itô equation
//! `dX = √σ √(g⁻¹) dB − (σ/2) g^{kl} Γ_{kl} dt`, with every coefficient taken
//! at the metric time of the current clock value. `σ = 1` gives generator
//! `½Δ_t`, `σ = 2` gives `Δ_t`.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ChartPoint, MetricFamily, Scaled};
use crate::linalg::{self, Mat, Vect};
use crate::stats::{ks_two_sample, KsOutcome, MeanEstimate};

/// Which metric the simulation clock `s` reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeDirection {
    /// `g(s)`.
    Forward,
    /// `g(T - s)`.
    Reversed,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub horizon: f64,
    pub n_steps: usize,
    pub speed: f64,
    pub direction: TimeDirection,
    pub master_seed: u64,
}

impl SimConfig {
    pub fn new(horizon: f64, n_steps: usize) -> Self {
        Self { horizon, n_steps, speed: 1.0, direction: TimeDirection::Forward, master_seed: 0 }
    }

    /// Step count for a target step size.
    pub fn with_dt(horizon: f64, dt: f64) -> Self {
        Self::new(horizon, (horizon / dt).round().max(1.0) as usize)
    }

    pub fn speed(mut self, speed: f64) -> Self {
        self.speed = speed;
        self
    }

    pub fn reversed(mut self) -> Self {
        self.direction = TimeDirection::Reversed;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.master_seed = seed;
        self
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    /// Clock value after `k` steps.
    pub fn clock(&self, k: usize) -> f64 {
        if k == self.n_steps {
            self.horizon
        } else {
            k as f64 * self.dt()
        }
    }

    pub fn metric_clock(&self, s: f64) -> f64 {
        match self.direction {
            TimeDirection::Forward => s,
            TimeDirection::Reversed => self.horizon - s,
        }
    }

    /// `d(metric time)/ds`.
    pub fn clock_sign(&self) -> f64 {
        match self.direction {
            TimeDirection::Forward => 1.0,
            TimeDirection::Reversed => -1.0,
        }
    }

    pub fn validate<const N: usize>(&self, family: &impl MetricFamily<N>) -> Result<()> {
        if self.n_steps < 10 {
            return Err(Error::Config(format!("n_steps must be at least 10, got {}", self.n_steps)));
        }
        if !(self.speed > 0.0 && self.speed.is_finite()) {
            return Err(Error::Config(format!("speed must be positive, got {}", self.speed)));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::Config(format!("horizon must be positive, got {}", self.horizon)));
        }
        family.check_time(0.0)?;
        family.check_time(self.horizon)
    }
}

/// Independent seed for a named sub-experiment (SplitMix64 finalizer).
pub fn derive_seed(master: u64, tag: u64) -> u64 {
    let mut z = master ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Gaussian increments of one path: stream `path_index` of the generator keyed by the master seed.
#[derive(Clone, Debug)]
pub struct NoiseStream {
    rng: ChaCha8Rng,
    sd: f64,
}

impl NoiseStream {
    pub fn new(master_seed: u64, path_index: u64, dt: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(path_index);
        Self { rng, sd: dt.sqrt() }
    }

    /// `N(0, dt I)` increment.
    pub fn increment<const N: usize>(&mut self) -> Vect<N> {
        Vect::<N>::from_fn(|_, _| {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            z * self.sd
        })
    }
}

/// A chart switch performed after step `step`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChartEvent<const N: usize> {
    pub step: usize,
    pub from: u8,
    pub to: u8,
    /// `∂(new)/∂(old)` at the switching point.
    pub jacobian: Mat<N>,
    /// The post-step point in the old chart.
    pub before: ChartPoint<N>,
}

/// One Euler–Maruyama step with its bookkeeping.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome<const N: usize> {
    pub point: ChartPoint<N>,
    /// Chart displacement in the chart of the starting point (before wrapping or switching).
    pub dx: Vect<N>,
    pub switch: Option<ChartEvent<N>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathSample<const N: usize> {
    pub times: Vec<f64>,
    pub metric_times: Vec<f64>,
    pub points: Vec<ChartPoint<N>>,
    pub dw: Vec<Vect<N>>,
    pub dx: Vec<Vect<N>>,
    pub chart_events: Vec<ChartEvent<N>>,
}

impl<const N: usize> PathSample<N> {
    pub fn n_steps(&self) -> usize {
        self.dw.len()
    }

    pub fn terminal(&self) -> &ChartPoint<N> {
        self.points.last().expect("path has a start point")
    }

    /// Chart switch performed at the end of step `k`, if any.
    pub fn event_at(&self, k: usize) -> Option<&ChartEvent<N>> {
        self.chart_events.iter().find(|e| e.step == k)
    }

    /// Columns `step, s, metric_t, chart, x1..xn, dW1..dWn`; the last row has empty increments.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["step".to_string(), "s".into(), "metric_t".into(), "chart".into()];
        header.extend((1..=N).map(|i| format!("x{i}")));
        header.extend((1..=N).map(|i| format!("dW{i}")));
        out.write_record(&header).map_err(csv_error)?;
        for (k, p) in self.points.iter().enumerate() {
            let mut row = vec![k.to_string(), self.times[k].to_string(), self.metric_times[k].to_string(), p.chart.to_string()];
            row.extend(p.coords.iter().map(|v| v.to_string()));
            match self.dw.get(k) {
                Some(dw) => row.extend(dw.iter().map(|v| v.to_string())),
                None => row.extend(std::iter::repeat_n(String::new(), N)),
            }
            out.write_record(&row).map_err(csv_error)?;
        }
        out.flush()?;
        Ok(())
    }
}

pub(crate) fn csv_error(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

/// Drift and diffusion coefficients at `(t, p)`: `(−(σ/2) g^{kl}Γ_{kl}, √σ √(g⁻¹))`.
pub fn coefficients<const N: usize>(
    family: &impl MetricFamily<N>,
    speed: f64,
    t: f64,
    p: &ChartPoint<N>,
) -> Result<(Vect<N>, Mat<N>)> {
    let g = family.metric_at(t, p)?;
    let g_inv = linalg::spd_inverse(&g)?;
    let root = linalg::sym_inv_sqrt(&g)?;
    let gamma = family.christoffel_at(t, p)?;
    Ok((gamma.trace_with(&g_inv) * (-0.5 * speed), root * speed.sqrt()))
}

/// Euler–Maruyama step from clock value `s` with increment `dw` (step size `cfg.dt()`).
pub fn em_step<const N: usize>(
    family: &impl MetricFamily<N>,
    cfg: &SimConfig,
    s: f64,
    p: &ChartPoint<N>,
    dw: &Vect<N>,
) -> Result<ChartPoint<N>> {
    Ok(em_step_detailed(family, cfg, s, cfg.dt(), p, dw, 0)?.point)
}

/// As [`em_step`], with an explicit step size and the chart bookkeeping.
pub fn em_step_detailed<const N: usize>(
    family: &impl MetricFamily<N>,
    cfg: &SimConfig,
    s: f64,
    dt: f64,
    p: &ChartPoint<N>,
    dw: &Vect<N>,
    step: usize,
) -> Result<StepOutcome<N>> {
    let t = cfg.metric_clock(s);
    let (drift, diffusion) = coefficients(family, cfg.speed, t, p)?;
    let dx = diffusion * dw + drift * dt;
    let mut next = ChartPoint::new(p.chart, p.coords + dx);
    family.wrap(&mut next);
    family.check_point(&next)?;
    let mut switch = None;
    if let Some(target) = family.switch_target(&next) {
        let (moved, jacobian) = family.chart_transition(&next, target)?;
        switch = Some(ChartEvent { step, from: next.chart, to: target, jacobian, before: next });
        next = moved;
    }
    Ok(StepOutcome { point: next, dx, switch })
}

/// A full replayable path driven by stream `path_index`.
pub fn simulate_path<const N: usize>(
    family: &impl MetricFamily<N>,
    cfg: &SimConfig,
    x0: &ChartPoint<N>,
    path_index: u64,
) -> Result<PathSample<N>> {
    let mut noise = NoiseStream::new(cfg.master_seed, path_index, cfg.dt());
    let n = cfg.n_steps;
    let annotate = |step: usize, e: Error| Error::Step { path: path_index, step, source: Box::new(e) };
    family.check_time(cfg.metric_clock(0.0)).map_err(|e| annotate(0, e))?;
    family.check_point(x0).map_err(|e| annotate(0, e))?;
    let mut sample = PathSample {
        times: Vec::with_capacity(n + 1),
        metric_times: Vec::with_capacity(n + 1),
        points: Vec::with_capacity(n + 1),
        dw: Vec::with_capacity(n),
        dx: Vec::with_capacity(n),
        chart_events: Vec::new(),
    };
    let mut p = *x0;
    sample.times.push(0.0);
    sample.metric_times.push(cfg.metric_clock(0.0));
    sample.points.push(p);
    for k in 0..n {
        let s = cfg.clock(k);
        let h = cfg.clock(k + 1) - s;
        let dw = noise.increment::<N>();
        let out = em_step_detailed(family, cfg, s, h, &p, &dw, k).map_err(|e| annotate(k, e))?;
        p = out.point;
        sample.times.push(cfg.clock(k + 1));
        sample.metric_times.push(cfg.metric_clock(cfg.clock(k + 1)));
        sample.points.push(p);
        sample.dw.push(dw);
        sample.dx.push(out.dx);
        if let Some(ev) = out.switch {
            sample.chart_events.push(ev);
        }
    }
    Ok(sample)
}

/// Map `f` over path indices `0..n_paths` in parallel, keeping index order.
pub fn run_paths<T: Send>(n_paths: u64, f: impl Fn(u64) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    (0..n_paths).into_par_iter().map(f).collect()
}

/// Terminal points of `n_paths` independent paths.
pub fn terminal_points<const N: usize>(
    family: &impl MetricFamily<N>,
    cfg: &SimConfig,
    x0: &ChartPoint<N>,
    n_paths: u64,
) -> Result<Vec<ChartPoint<N>>> {
    cfg.validate(family)?;
    run_paths(n_paths, |i| simulate_path(family, cfg, x0, i).map(|p| *p.terminal()))
}

/// `g(0)`-distance from `x0` for each point, using the family's closed form.
pub fn distances_from<const N: usize>(
    family: &impl MetricFamily<N>,
    x0: &ChartPoint<N>,
    points: &[ChartPoint<N>],
) -> Result<Vec<f64>> {
    points
        .iter()
        .map(|p| family.reference_distance(x0, p).ok_or(Error::Unsupported("closed-form reference distance")))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalingReport {
    pub c: f64,
    pub n_paths: u64,
    pub ks: KsOutcome,
    pub base_mean: MeanEstimate,
    pub scaled_mean: MeanEstimate,
}

/// Compare `X_T` under `g` with `Y_{cT}` under `c·g(t/c)` through the law of
/// the `g(0)`-distance from the start.
///
/// With `coupled` both runs use the same seed (same Gaussian increments);
/// otherwise the scaled run uses an independent seed.
pub fn scaling_check<const N: usize, F: MetricFamily<N>>(
    family: &F,
    cfg: &SimConfig,
    x0: &ChartPoint<N>,
    c: f64,
    n_paths: u64,
    coupled: bool,
) -> Result<ScalingReport> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::Config(format!("blow-up factor must be positive, got {c}")));
    }
    let scaled = Scaled::new(family, c);
    let mut scaled_cfg = *cfg;
    scaled_cfg.horizon = c * cfg.horizon;
    if !coupled {
        scaled_cfg.master_seed = derive_seed(cfg.master_seed, 0x5CA1E);
    }
    let base = distances_from(family, x0, &terminal_points(family, cfg, x0, n_paths)?)?;
    let blown = distances_from(family, x0, &terminal_points(&scaled, &scaled_cfg, x0, n_paths)?)?;
    Ok(ScalingReport {
        c,
        n_paths,
        ks: ks_two_sample(&base, &blown)?,
        base_mean: MeanEstimate::from_samples(&base),
        scaled_mean: MeanEstimate::from_samples(&blown),
    })
}
