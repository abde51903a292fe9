//! Subcommand drivers: build the family, run the estimator, write the artifacts.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use gtbm_core::estimators::{
    bismut_gradient, conjugate_heat_consistency, gradient_bound_check, intrinsic_martingale_check,
    scalar_gradient_estimate_check, time_change_law_test, ConfigEcho, ConjugateThresholds, EstimatorReport, Table,
};
use gtbm_core::flow_solver::{solve_nrf, TorusFlowSolution, TorusNrf};
use gtbm_core::geometry::{Cigar, ChartPoint, Euclidean, Hyperbolic, MetricFamily, Sphere, StaticCustom};
use gtbm_core::linalg::Vect;
use gtbm_core::pde_oracle::{heat_solve_sphere, sample_conformal_factor, self_test, ConformalTorus, HeatSolution, SphereHarmonics};
use gtbm_core::sde::{run_paths, simulate_path, SimConfig};
use gtbm_core::spectral::Spectral2d;
use gtbm_core::stats::MeanEstimate;
use gtbm_core::transport::{equivalence_gap, evolve_damped, evolve_frame, orthonormal_frame};

use crate::config::{ExperimentConfig, FamilyKind, TestFunction};
use crate::Command;

type Family<const N: usize> = Box<dyn MetricFamily<N>>;
type TestFn<const N: usize> = Box<dyn Fn(&ChartPoint<N>) -> f64 + Sync>;

struct Built<const N: usize> {
    family: Family<N>,
    sphere: Option<Sphere<N>>,
    nrf: Option<TorusNrf>,
}

fn generic_family<const N: usize>(cfg: &ExperimentConfig) -> Result<Built<N>> {
    let f = &cfg.family;
    let (family, sphere): (Family<N>, _) = match f.kind {
        FamilyKind::Sphere => {
            let s = Sphere::<N>::new(f.kappa).with_scale(f.scale);
            (Box::new(s.clone()), Some(s))
        }
        FamilyKind::StaticSphere => {
            let s = Sphere::<N>::static_round().with_scale(f.scale);
            (Box::new(s.clone()), Some(s))
        }
        FamilyKind::Hyperbolic => (Box::new(Hyperbolic::<N>::new(f.kappa).with_scale(f.scale)), None),
        FamilyKind::Euclidean => (Box::new(Euclidean::<N>::new(f.kappa)), None),
        FamilyKind::FlatTorus => (Box::new(Euclidean::<N>::torus(f.kappa)), None),
        other => bail!("family {other:?} is not available in dimension {N}"),
    };
    Ok(Built { family, sphere, nrf: None })
}

/// Flow time reached at the sim horizon, the default `nrf.t_end`.
fn nrf_t_end(cfg: &ExperimentConfig) -> f64 {
    cfg.nrf.t_end.unwrap_or(cfg.sim.horizon * cfg.family.kappa.abs().max(f64::MIN_POSITIVE) / 2.0)
}

fn nrf_initial(cfg: &ExperimentConfig) -> Result<Vec<f64>> {
    let n = cfg.nrf.grid_n;
    if cfg.nrf.modes.is_empty() {
        return Ok(sample_conformal_factor(n)?);
    }
    let sp = Spectral2d::new(n)?;
    Ok(sp.sample(|x, y| cfg.nrf.modes.iter().map(|[k1, k2, a, b]| a * (k1 * x + k2 * y).cos() + b * (k1 * x + k2 * y).sin()).sum()))
}

fn nrf_solution(cfg: &ExperimentConfig) -> Result<TorusFlowSolution> {
    if let Some(path) = &cfg.nrf.snapshot {
        return TorusFlowSolution::load(path).with_context(|| format!("loading {}", path.display()));
    }
    let n = &cfg.nrf;
    Ok(solve_nrf(&nrf_initial(cfg)?, n.grid_n, nrf_t_end(cfg), n.dt, n.sample_dt)?)
}

fn family_2d(cfg: &ExperimentConfig) -> Result<Built<2>> {
    let f = &cfg.family;
    match f.kind {
        FamilyKind::Cigar => Ok(Built { family: Box::new(Cigar::new(f.kappa)), sphere: None, nrf: None }),
        FamilyKind::StaticCustom => Ok(Built { family: Box::new(StaticCustom::donut(2.0, 1.0)), sphere: None, nrf: None }),
        FamilyKind::TorusNrf => {
            let nrf = TorusNrf::new(Arc::new(nrf_solution(cfg)?), f.kappa)?;
            Ok(Built { family: Box::new(nrf.clone()), sphere: None, nrf: Some(nrf) })
        }
        _ => generic_family::<2>(cfg),
    }
}

fn start<const N: usize>(cfg: &ExperimentConfig) -> ChartPoint<N> {
    let e = &cfg.estimator;
    if e.x0.is_empty() {
        ChartPoint::origin()
    } else {
        ChartPoint::from_slice(e.chart, &e.x0)
    }
}

fn direction<const N: usize>(cfg: &ExperimentConfig) -> Vect<N> {
    if cfg.estimator.v.is_empty() {
        Vect::<N>::from_fn(|i, _| if i == 0 { 1.0 } else { 0.0 })
    } else {
        Vect::<N>::from_fn(|i, _| cfg.estimator.v[i])
    }
}

fn test_function<const N: usize>(cfg: &ExperimentConfig, built: &Built<N>) -> Result<(TestFn<N>, Option<f64>)> {
    let f0 = cfg.estimator.f0.clone().ok_or_else(|| anyhow!("estimator.f0 is required"))?;
    Ok(match f0 {
        TestFunction::Constant { value } => (Box::new(move |_| value), Some(value.abs())),
        TestFunction::Fourier { k, amplitude, phase } => {
            let k = Vect::<N>::from_fn(|i, _| k[i]);
            (Box::new(move |p| amplitude * (k.dot(&p.coords) + phase).cos()), Some(amplitude.abs()))
        }
        TestFunction::Harmonic { constant, linear, quadratic } => {
            let sphere = built.sphere.clone().ok_or_else(|| anyhow!("harmonic test functions need a sphere family"))?;
            let sup = quadratic
                .is_empty()
                .then(|| constant.abs() + linear.iter().map(|a| a * a).sum::<f64>().sqrt());
            let sol = heat_solve_sphere(&sphere, SphereHarmonics { constant, linear, quadratic }, 1.0)?;
            (Box::new(move |p| sol.value(0.0, p).unwrap_or(f64::NAN)), sup)
        }
    })
}

fn with_step(sim: &SimConfig, dt: f64) -> SimConfig {
    let mut c = SimConfig::with_dt(sim.horizon, dt).speed(sim.speed).seed(sim.master_seed);
    c.direction = sim.direction;
    c
}

fn step_sizes(cfg: &ExperimentConfig, sim: &SimConfig) -> Vec<f64> {
    if cfg.estimator.dts.is_empty() {
        vec![sim.dt()]
    } else {
        cfg.estimator.dts.clone()
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn max(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, f64::max)
}

fn simulate<const N: usize>(cfg: &ExperimentConfig, built: &Built<N>, dir: &Path) -> Result<EstimatorReport> {
    let sim = cfg.sim()?;
    let fam = &built.family;
    sim.validate(fam)?;
    let x0 = start::<N>(cfg);
    let n = cfg.estimator.n_paths;
    let runs = run_paths(n, |i| simulate_path(fam, &sim, &x0, i).map(|p| (*p.terminal(), p.chart_events.len())))?;
    simulate_path(fam, &sim, &x0, 0)?.write_csv(create(&dir.join("simulate_path0.csv"))?)?;

    let mut report = EstimatorReport::new("simulate", ConfigEcho::new(fam, &sim), n);
    for i in 0..N {
        let est = MeanEstimate::from_samples(&runs.iter().map(|(p, _)| p.coords[i]).collect::<Vec<_>>());
        report.estimate.push(est.mean);
        report.std_error.push(est.std_error);
        report.per_path.push((format!("x{}", i + 1), runs.iter().map(|(p, _)| p.coords[i]).collect()));
    }
    let events: Vec<f64> = runs.iter().map(|(_, e)| *e as f64).collect();
    report.diagnostics.insert("mean_chart_events".into(), MeanEstimate::from_samples(&events).mean);
    let distances: Option<Vec<f64>> = runs.iter().map(|(p, _)| fam.reference_distance(&x0, p)).collect();
    if let Some(d) = distances {
        let est = MeanEstimate::from_samples(&d);
        report.diagnostics.insert("mean_reference_distance".into(), est.mean);
        report.diagnostics.insert("mean_reference_distance_se".into(), est.std_error);
        report.per_path.push(("reference_distance".into(), d));
    }
    report.per_path.push(("chart".into(), runs.iter().map(|(p, _)| p.chart as f64).collect()));
    report.per_path.push(("chart_events".into(), events));
    Ok(report)
}

fn transport_check<const N: usize>(cfg: &ExperimentConfig, built: &Built<N>, dir: &Path) -> Result<EstimatorReport> {
    let sim = cfg.sim()?;
    let fam = &built.family;
    sim.validate(fam)?;
    let x0 = start::<N>(cfg);
    let n = cfg.estimator.n_paths;
    let tol = cfg.estimator.thresholds.tol_frame;
    let u0 = orthonormal_frame(fam, sim.metric_clock(0.0), &x0)?;
    let mut table = Table::new(&["dt", "max_gram_defect", "median_gram_defect"]);
    let mut worst = Vec::new();
    for dt in step_sizes(cfg, &sim) {
        let c = with_step(&sim, dt);
        let defects = run_paths(n, |i| {
            let path = simulate_path(fam, &c, &x0, i)?;
            Ok(evolve_frame(&path, fam, &c, &u0, Some(f64::INFINITY))?.max_defect())
        })?;
        worst.push(max(defects.iter().copied()));
        table.push(vec![dt, *worst.last().unwrap(), median(defects)]);
    }
    let path = simulate_path(fam, &sim, &x0, 0)?;
    let frames = evolve_frame(&path, fam, &sim, &u0, Some(f64::INFINITY))?;
    evolve_damped(&path, fam, &sim, &frames)?.write_csv(&path, &frames, create(&dir.join("transport-check_trace.csv"))?)?;

    let mut report = EstimatorReport::new("transport_check", ConfigEcho::new(fam, &sim).with("tol_frame", tol), n);
    report.estimate.push(*worst.last().unwrap());
    report.std_error.push(f64::NAN);
    report.diagnostics.insert("max_gram_defect".into(), max(worst.iter().copied()));
    report.pass = Some(worst.iter().all(|w| *w <= tol));
    report.tables.insert("convergence".into(), table);
    Ok(report)
}

fn equivalence<const N: usize>(cfg: &ExperimentConfig, built: &Built<N>) -> Result<EstimatorReport> {
    let sim = cfg.sim()?;
    let fam = &built.family;
    sim.validate(fam)?;
    let x0 = start::<N>(cfg);
    let n = cfg.estimator.n_paths;
    let tol = cfg.estimator.thresholds.gap;
    let mut table = Table::new(&["dt", "max_gap_w", "max_gap_tx", "max_isometry_defect_w", "median_gram_defect"]);
    let mut last = (0.0, 0.0, 0.0);
    for dt in step_sizes(cfg, &sim) {
        let c = with_step(&sim, dt);
        let gaps = run_paths(n, |i| {
            let path = simulate_path(fam, &c, &x0, i)?;
            equivalence_gap(&path, fam, &c, Some(f64::INFINITY))
        })?;
        last = (
            max(gaps.iter().map(|g| g.gap_w)),
            max(gaps.iter().map(|g| g.gap_tx)),
            max(gaps.iter().map(|g| g.isometry_defect_w)),
        );
        table.push(vec![dt, last.0, last.1, last.2, median(gaps.iter().map(|g| g.max_gram_defect).collect())]);
    }
    let mut report = EstimatorReport::new("equivalence", ConfigEcho::new(fam, &sim).with("gap_threshold", tol), n);
    report.estimate = vec![last.0, last.1];
    report.std_error = vec![f64::NAN, f64::NAN];
    report.diagnostics.insert("gap_w".into(), last.0);
    report.diagnostics.insert("gap_tx".into(), last.1);
    report.diagnostics.insert("isometry_defect_w".into(), last.2);
    report.pass = Some(last.0 <= tol && last.1 <= tol);
    report.tables.insert("convergence".into(), table);
    Ok(report)
}

fn bismut<const N: usize>(cfg: &ExperimentConfig, built: &Built<N>) -> Result<EstimatorReport> {
    let sim = cfg.sim()?;
    let (f0, _) = test_function(cfg, built)?;
    let mut report =
        bismut_gradient(&built.family, &sim, f0.as_ref(), &start::<N>(cfg), &direction::<N>(cfg), cfg.estimator.n_paths, None)?;
    if let Some(reference) = cfg.estimator.reference {
        let z = (report.estimate[0] - reference).abs() / report.std_error[0];
        report.diagnostics.insert("reference".into(), reference);
        report.diagnostics.insert("z_score".into(), z);
        report.pass = Some(z <= cfg.estimator.thresholds.residual_sigmas);
    }
    Ok(report)
}

fn gradient_bound<const N: usize>(cfg: &ExperimentConfig, built: &Built<N>) -> Result<EstimatorReport> {
    let sim = cfg.sim()?;
    let (f0, sup) = test_function(cfg, built)?;
    let sup_norm = cfg
        .estimator
        .sup_norm
        .or(sup)
        .ok_or_else(|| anyhow!("estimator.sup_norm is required for this test function"))?;
    let e = &cfg.estimator;
    let points: Vec<ChartPoint<N>> = e.points.iter().map(|p| ChartPoint::from_slice(e.chart, p)).collect();
    Ok(gradient_bound_check(
        &built.family,
        &sim,
        f0.as_ref(),
        sup_norm,
        &e.horizons,
        &points,
        e.n_paths,
        e.thresholds.residual_sigmas,
    )?)
}

fn martingale_l<const N: usize>(cfg: &ExperimentConfig, built: &Built<N>) -> Result<EstimatorReport> {
    let sim = cfg.sim()?;
    let t = &cfg.estimator.thresholds;
    Ok(intrinsic_martingale_check(&built.family, &sim, &start::<N>(cfg), cfg.estimator.n_paths, t.qv_rel, t.residual_sigmas)?)
}

fn time_change(cfg: &ExperimentConfig) -> Result<EstimatorReport> {
    let model = cfg.estimator.model.ok_or_else(|| anyhow!("time-change needs estimator.model"))?;
    Ok(time_change_law_test(model, &cfg.sim()?, cfg.estimator.n_paths, cfg.estimator.thresholds.ks_p)?)
}

fn conjugate_heat(cfg: &ExperimentConfig) -> Result<EstimatorReport> {
    let e = &cfg.estimator;
    let background = match cfg.family.kind {
        FamilyKind::FlatTorus => ConformalTorus::flat(e.grid_n),
        FamilyKind::TorusNrf => ConformalTorus::Flow(TorusNrf::new(Arc::new(nrf_solution(cfg)?), cfg.family.kappa)?),
        other => bail!("conjugate-heat does not support family {other:?}"),
    };
    let x0 = if e.x0.is_empty() { Vect::<2>::zeros() } else { Vect::<2>::new(e.x0[0], e.x0[1]) };
    let thresholds = ConjugateThresholds { l1: e.thresholds.l1, mass: e.thresholds.mass };
    Ok(conjugate_heat_consistency(&background, &cfg.sim()?, &x0, e.n_paths, e.grid_n, e.pde_dt, thresholds)?)
}

fn scalar_estimate(cfg: &ExperimentConfig, built: &Built<2>) -> Result<EstimatorReport> {
    let nrf = built.nrf.as_ref().ok_or_else(|| anyhow!("scalar-estimate needs family.kind = \"torus_nrf\""))?;
    Ok(scalar_gradient_estimate_check(nrf.solution().clone(), &cfg.sim()?, &start::<2>(cfg), cfg.estimator.n_paths)?)
}

fn nrf_solve(cfg: &ExperimentConfig, dir: &Path) -> Result<EstimatorReport> {
    let sol = nrf_solution(cfg)?;
    sol.save(dir.join("nrf-solve_flow.snap"))?;
    let k_last = sol.times().len() - 1;
    let v0 = sol.volume(0);
    let mut table = Table::new(&["t", "volume", "average_curvature", "max_abs_u"]);
    for (k, &t) in sol.times().iter().enumerate() {
        table.push(vec![t, sol.volume(k), sol.average_curvature(k), sol.max_abs_u(k)]);
    }
    let drift = max((0..=k_last).map(|k| ((sol.volume(k) - v0) / v0).abs()));
    let sim = SimConfig::new(sol.t_end(), 1);
    let echo = ConfigEcho::new(&Euclidean::<2>::torus(0.0), &sim)
        .with("grid_n", sol.grid_n() as f64)
        .with("dt", cfg.nrf.dt)
        .with("sample_dt", cfg.nrf.sample_dt)
        .with("t_end", sol.t_end());
    let mut report = EstimatorReport::new("nrf_solve", ConfigEcho { family: "torus_nrf".into(), ..echo }, 0);
    report.estimate = vec![sol.max_abs_u(k_last)];
    report.std_error = vec![0.0];
    let t = &cfg.estimator.thresholds;
    for (k, v) in [
        ("volume_drift", drift),
        ("max_abs_average_curvature", sol.max_abs_average()),
        ("initial_max_abs_u", sol.max_abs_u(0)),
        ("final_max_abs_u", sol.max_abs_u(k_last)),
    ] {
        report.diagnostics.insert(k.into(), v);
    }
    report.pass = Some(drift <= t.volume && sol.max_abs_average() <= t.average);
    report.tables.insert("samples".into(), table);
    Ok(report)
}

fn oracle_selftest() -> Result<EstimatorReport> {
    let items = self_test()?;
    let echo = ConfigEcho::new(&Euclidean::<2>::torus(0.0), &SimConfig::new(1.0, 1));
    let mut report = EstimatorReport::new("oracle_selftest", echo, 0);
    for item in &items {
        report.diagnostics.insert(item.name.clone(), item.value);
        report.diagnostics.insert(format!("{}_tolerance", item.name), item.tolerance);
        if !item.pass {
            report.warnings.push(format!("{} = {} exceeds {}", item.name, item.value, item.tolerance));
        }
    }
    report.pass = Some(items.iter().all(|i| i.pass));
    Ok(report)
}

fn dispatch<const N: usize>(command: Command, cfg: &ExperimentConfig, built: &Built<N>, dir: &Path) -> Result<EstimatorReport> {
    match command {
        Command::Simulate => simulate(cfg, built, dir),
        Command::TransportCheck => transport_check(cfg, built, dir),
        Command::Equivalence => equivalence(cfg, built),
        Command::Bismut => bismut(cfg, built),
        Command::GradientBound => gradient_bound(cfg, built),
        Command::MartingaleL => martingale_l(cfg, built),
        _ => unreachable!("family-independent command routed through dispatch"),
    }
}

/// Run `command` and write its artifacts; returns the report's verdict.
pub fn run(command: Command, cfg: &ExperimentConfig) -> Result<Option<bool>> {
    let dir = cfg.output.dir.as_path();
    let report = match command {
        Command::TimeChange => time_change(cfg)?,
        Command::ConjugateHeat => conjugate_heat(cfg)?,
        Command::NrfSolve => nrf_solve(cfg, dir)?,
        Command::OracleSelftest => oracle_selftest()?,
        Command::ScalarEstimate => scalar_estimate(cfg, &family_2d(cfg)?)?,
        _ if cfg.family.dim == 3 => dispatch(command, cfg, &generic_family::<3>(cfg)?, dir)?,
        _ => dispatch(command, cfg, &family_2d(cfg)?, dir)?,
    };
    write_report(&report, command.name(), dir, cfg.output.per_path)?;
    Ok(report.pass)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("cannot create {}", path.display()))?))
}

/// `<dir>/<name>.json`, one `<dir>/<name>_<table>.csv` per table and the
/// long-format `<dir>/<name>_per_path.csv`.
pub fn write_report(report: &EstimatorReport, name: &str, dir: &Path, per_path: bool) -> Result<()> {
    let json = serde_json::to_string_pretty(report)?;
    std::fs::write(dir.join(format!("{name}.json")), json + "\n")?;
    for (table_name, table) in &report.tables {
        table.write_csv(create(&dir.join(format!("{name}_{table_name}.csv")))?)?;
    }
    if per_path && !report.per_path.is_empty() {
        report.write_long_csv(create(&dir.join(format!("{name}_per_path.csv")))?)?;
    }
    Ok(())
}
