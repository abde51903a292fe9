use super::*;
use crate::flow_solver::{solve_nrf, TorusFlowSolution};
use crate::geometry::{Euclidean, Sphere};
use crate::sde::{run_paths, simulate_path};
use crate::spectral::Spectral2d;

fn frames_on<const N: usize>(path: &PathSample<N>, fam: &impl MetricFamily<N>, cfg: &SimConfig) -> FrameTrace<N> {
    let u0 = orthonormal_frame(fam, path.metric_times[0], &path.points[0]).unwrap();
    evolve_frame(path, fam, cfg, &u0, None).unwrap()
}

#[test]
fn flat_frames_and_transports_are_constant() {
    let fam = Euclidean::<3>::new(0.0);
    let cfg = SimConfig::new(1.0, 200).seed(1);
    let path = simulate_path(&fam, &cfg, &ChartPoint::origin(), 0).unwrap();
    let frames = frames_on(&path, &fam, &cfg);
    assert!(frames.frames.iter().all(|u| *u == Mat::<3>::identity()));
    let gap = equivalence_gap(&path, &fam, &cfg, None).unwrap();
    assert!(gap.gap_w <= 1e-10 && gap.gap_tx <= 1e-10);
    let tx = evolve_variation(&path, &fam, &cfg, &frames).unwrap();
    assert!(tx.hat.iter().all(|q| *q == Mat::<3>::identity()));
}

#[test]
fn static_sphere_frames_stay_orthonormal() {
    let fam = Sphere::<2>::static_round();
    let cfg = SimConfig::with_dt(1.0, 1e-3).seed(2);
    for i in 0..5 {
        let path = simulate_path(&fam, &cfg, &ChartPoint::from_slice(0, &[0.4, -0.3]), i).unwrap();
        let frames = frames_on(&path, &fam, &cfg);
        assert!(frames.max_defect() <= 10.0 * cfg.dt(), "defect {}", frames.max_defect());
    }
}

#[test]
fn shrinking_sphere_frame_norms() {
    // g(t) = (1 - 2t) g(0): a g(t)-unit vector has g(0)-norm (1 - 2t)^{-1/2}.
    let fam = Sphere::<2>::new(2.0);
    let cfg = SimConfig::with_dt(0.2, 1e-3).seed(3);
    let path = simulate_path(&fam, &cfg, &ChartPoint::from_slice(0, &[0.2, 0.5]), 0).unwrap();
    let frames = frames_on(&path, &fam, &cfg);
    for k in [50, 100, 200] {
        let t = path.metric_times[k];
        let p = &path.points[k];
        let u = frames.frame(k).column(0).into_owned();
        let now = (u.transpose() * fam.metric_at(t, p).unwrap() * u)[0].sqrt();
        let initial = (u.transpose() * fam.metric_at(0.0, p).unwrap() * u)[0].sqrt();
        assert!((now - 1.0).abs() <= 10.0 * cfg.dt());
        assert!((initial * (1.0 - 2.0 * t).sqrt() - 1.0).abs() <= 10.0 * cfg.dt());
    }
}

#[test]
fn forward_flow_damped_transport_is_parallel() {
    let fam = Sphere::<2>::new(1.0);
    let cfg = SimConfig::with_dt(0.5, 1e-3).reversed().seed(4);
    let path = simulate_path(&fam, &cfg, &ChartPoint::from_slice(0, &[0.1, 0.2]), 0).unwrap();
    let frames = frames_on(&path, &fam, &cfg);
    let w = evolve_damped(&path, &fam, &cfg, &frames).unwrap();
    let tx = evolve_variation(&path, &fam, &cfg, &frames).unwrap();
    assert!(w.gap(&frames) <= 1e-12 && tx.gap(&frames) <= 1e-12);
    assert_eq!(w, tx);
}

#[test]
fn static_sphere_damped_transport_decays() {
    // Ric^# = I on the unit sphere: ∥⁻¹W = e^{-s/2} I.
    let fam = Sphere::<2>::static_round();
    let cfg = SimConfig::with_dt(1.0, 1e-3).seed(5);
    let path = simulate_path(&fam, &cfg, &ChartPoint::origin(), 0).unwrap();
    let frames = frames_on(&path, &fam, &cfg);
    let w = evolve_damped(&path, &fam, &cfg, &frames).unwrap();
    let want = (-0.5f64).exp();
    let got = w.pulled_back(&frames, path.n_steps());
    assert!((got - Mat::<2>::identity() * want).amax() <= 0.01 * want);
    let tx = evolve_variation(&path, &fam, &cfg, &frames).unwrap();
    assert!((tx.gap(&frames) - (1.0 - want)).abs() <= 0.01 * (1.0 - want));
}

#[test]
fn backward_flow_damped_transport_matches_the_scalar_ode() {
    // κ = -1: a(t) = 1 + t, and on the reversed clock ∥⁻¹W = exp(-∫ ds / a(T - s)) = 1 / (1 + T).
    let fam = Sphere::<2>::new(-1.0);
    let horizon = 0.5;
    let cfg = SimConfig::with_dt(horizon, 1e-4).reversed().seed(6);
    let path = simulate_path(&fam, &cfg, &ChartPoint::from_slice(0, &[0.3, 0.0]), 0).unwrap();
    let frames = frames_on(&path, &fam, &cfg);
    let w = evolve_damped(&path, &fam, &cfg, &frames).unwrap();
    let want = 1.0 / (1.0 + horizon);
    let got = w.pulled_back(&frames, path.n_steps());
    assert!((got - Mat::<2>::identity() * want).amax() <= 0.01 * want, "{got}");
}

#[test]
fn equivalence_dichotomy() {
    let cfg = SimConfig::with_dt(1.0, 1e-3).seed(7);
    let fam = Sphere::<2>::static_round();
    let path = simulate_path(&fam, &cfg, &ChartPoint::origin(), 0).unwrap();
    let gap = equivalence_gap(&path, &fam, &cfg, None).unwrap();
    assert!(gap.gap_tx >= 0.1);
    assert!((gap.gap_tx - (1.0 - (-0.5f64).exp())).abs() < 0.01);

    let shrinking = Sphere::<2>::new(1.0);
    let cfg = SimConfig::with_dt(0.5, 1e-3).reversed().seed(7);
    let path = simulate_path(&shrinking, &cfg, &ChartPoint::origin(), 0).unwrap();
    let gap = equivalence_gap(&path, &shrinking, &cfg, None).unwrap();
    assert!(gap.gap_w <= 5e-2 && gap.gap_tx <= 5e-2 && gap.isometry_defect_w <= 5e-2);
}

#[test]
fn composition_of_transports() {
    let fam = Sphere::<2>::new(2.0);
    let cfg = SimConfig::with_dt(0.3, 1e-3).seed(8);
    let path = simulate_path(&fam, &cfg, &ChartPoint::from_slice(0, &[0.7, 0.1]), 0).unwrap();
    let whole = frames_on(&path, &fam, &cfg);
    let mid = 120;
    let fresh = orthonormal_frame(&fam, path.metric_times[mid], &path.points[mid]).unwrap();
    let second = evolve_frame_between(&path, &fam, &cfg, mid, path.n_steps(), &fresh, None).unwrap();
    let composed = second.parallel(path.n_steps()) * whole.parallel(mid);
    let direct = whole.parallel(path.n_steps());
    assert!((composed - direct).amax() <= 2.0 * whole.tol);
}

#[test]
fn gram_drift_is_reported() {
    let fam = Sphere::<2>::new(2.0);
    let cfg = SimConfig::with_dt(0.3, 1e-2).seed(9);
    let path = simulate_path(&fam, &cfg, &ChartPoint::origin(), 0).unwrap();
    let u0 = orthonormal_frame(&fam, 0.0, &ChartPoint::origin()).unwrap();
    assert!(matches!(evolve_frame(&path, &fam, &cfg, &u0, Some(1e-12)), Err(Error::GramDrift { .. })));
}

#[test]
fn theta_reductions() {
    // F′ = 0 on the κ = 2 flow: Θ = ∥.
    let fam = Sphere::<2>::new(2.0);
    let cfg = SimConfig::with_dt(0.3, 1e-3).reversed().seed(10);
    let path = simulate_path(&fam, &cfg, &ChartPoint::origin(), 0).unwrap();
    let frames = frames_on(&path, &fam, &cfg);
    let theta = evolve_theta(&path, &fam, &cfg, &frames, |_, _| 0.0).unwrap();
    assert!(theta.gap(&frames) <= 1e-12);

    // Static flat metric with constant F′ = c: Θ̂ = e^{cs} I up to Euler error.
    let flat = Euclidean::<2>::new(0.0);
    let cfg = SimConfig::with_dt(1.0, 1e-4).seed(10);
    let path = simulate_path(&flat, &cfg, &ChartPoint::origin(), 0).unwrap();
    let frames = frames_on(&path, &flat, &cfg);
    let theta = evolve_theta(&path, &flat, &cfg, &frames, |_, _| 0.7).unwrap();
    assert!((theta.last()[(0, 0)] - 0.7f64.exp()).abs() <= 1e-3 * 0.7f64.exp());
    assert_eq!(theta.last()[(0, 1)], 0.0);
}

fn single_mode_flow() -> Arc<TorusFlowSolution> {
    let sp = Spectral2d::new(16).unwrap();
    Arc::new(solve_nrf(&sp.sample(|x, _| 0.3 * x.cos()), 16, 0.5, 5e-3, 0.01).unwrap())
}

#[test]
fn phi_on_the_flat_torus_is_the_identity() {
    let fam = TorusNrf::new(Arc::new(TorusFlowSolution::flat(16, 1.0).unwrap()), 2.0).unwrap();
    let cfg = SimConfig::with_dt(1.0, 1e-3).speed(2.0).reversed().seed(11);
    let path = simulate_path(&fam, &cfg, &ChartPoint::from_slice(0, &[1.0, 1.0]), 0).unwrap();
    let frames = frames_on(&path, &fam, &cfg);
    let phi = evolve_phi(&path, &fam, &cfg, &frames).unwrap();
    assert!(phi.hat.iter().all(|q| *q == Mat::<2>::identity()));
    assert!(frames.frames.iter().all(|u| *u == Mat::<2>::identity()));
}

#[test]
fn phi_growth_matches_the_curvature_quadrature() {
    let sol = single_mode_flow();
    let fam = TorusNrf::new(sol.clone(), 2.0).unwrap();
    let horizon = 0.4;
    let cfg = SimConfig::with_dt(horizon, 1e-4).speed(2.0).reversed().seed(12);
    for i in 0..3 {
        let path = simulate_path(&fam, &cfg, &ChartPoint::from_slice(0, &[0.5, 2.0]), i).unwrap();
        let frames = frames_on(&path, &fam, &cfg);
        let phi = evolve_phi(&path, &fam, &cfg, &frames).unwrap();
        // trapezoid quadrature of 2R(T - s, X_s)
        let r: Vec<f64> = (0..=path.n_steps())
            .map(|k| sol.point(path.metric_times[k], &path.points[k].coords).unwrap().scalar)
            .collect();
        let integral: f64 = (0..path.n_steps()).map(|k| (r[k] + r[k + 1]) * cfg.dt()).sum();
        let v = crate::linalg::Vect::<2>::new(0.6, -0.8);
        let g_start = fam.metric_at(horizon, &path.points[0]).unwrap();
        let g_end = fam.metric_at(0.0, path.terminal()).unwrap();
        let image = phi.in_chart(&frames, path.n_steps()) * v;
        let lhs = (image.transpose() * g_end * image)[0];
        let rhs = (v.transpose() * g_start * v)[0] * (2.0 * integral).exp();
        assert!((lhs / rhs - 1.0).abs() <= 0.01, "{lhs} vs {rhs}");
        let log_rate = phi.last()[(0, 0)].ln();
        assert!((log_rate - integral).abs() <= 20.0 * cfg.dt() * integral.abs().max(1.0));
    }
}

#[test]
fn theta_with_quadratic_reaction_coincides_with_phi() {
    let sol = single_mode_flow();
    let fam = TorusNrf::new(sol.clone(), 2.0).unwrap();
    let cfg = SimConfig::with_dt(0.4, 1e-3).speed(2.0).reversed().seed(13);
    let worst = run_paths(100, |i| {
        let path = simulate_path(&fam, &cfg, &ChartPoint::from_slice(0, &[3.0, 1.0]), i)?;
        let frames = frames_on(&path, &fam, &cfg);
        let phi = evolve_phi(&path, &fam, &cfg, &frames)?;
        // F(x) = x (x - r) evaluated on f = R: F′ = 2R - r
        let theta = evolve_theta(&path, &fam, &cfg, &frames, |t, p| {
            let f = sol.point(t, &p.coords).unwrap();
            2.0 * f.scalar - f.average
        })?;
        Ok((theta.last() - phi.last()).amax() / phi.last().amax())
    })
    .unwrap()
    .into_iter()
    .fold(0.0, f64::max);
    assert!(worst <= 0.01, "relative mismatch {worst}");
}

#[test]
fn phi_requires_the_surface_conventions() {
    let fam = TorusNrf::new(single_mode_flow(), 2.0).unwrap();
    let cfg = SimConfig::with_dt(0.2, 1e-3).seed(14);
    let path = simulate_path(&fam, &cfg, &ChartPoint::origin(), 0).unwrap();
    let frames = frames_on(&path, &fam, &cfg);
    assert!(matches!(evolve_phi(&path, &fam, &cfg, &frames), Err(Error::Config(_))));
}

#[test]
fn transport_csv_schema() {
    let fam = Sphere::<2>::new(1.0);
    let cfg = SimConfig::new(0.2, 20).reversed();
    let path = simulate_path(&fam, &cfg, &ChartPoint::origin(), 0).unwrap();
    let frames = frames_on(&path, &fam, &cfg);
    let w = evolve_damped(&path, &fam, &cfg, &frames).unwrap();
    let mut buf = Vec::new();
    w.write_csv(&path, &frames, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().next().unwrap(), "step,s,q11,q12,q21,q22,gram_defect");
    assert_eq!(text.lines().count(), 22);
}

fn worst_defect<const N: usize>(fam: &impl MetricFamily<N>, cfg: &SimConfig, x0: &ChartPoint<N>, index: u64) -> f64 {
    let path = simulate_path(fam, cfg, x0, index).unwrap();
    frames_on(&path, fam, cfg).max_defect()
}

mod properties {
    use super::*;
    use crate::geometry::{Cigar, Hyperbolic, StaticCustom};
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn frames_stay_orthonormal_on_every_family(which in 0usize..8, seed in 0u64..1000, index in 0u64..1000, a in -0.8f64..0.8, b in -0.8f64..0.8) {
            let dt = 1e-3;
            let x = ChartPoint::from_slice(0, &[a, b]);
            let worst = match which {
                0 => worst_defect(&Euclidean::<3>::new(0.0), &SimConfig::with_dt(0.2, dt).seed(seed), &ChartPoint::from_slice(0, &[a, b, 0.1]), index),
                1 => worst_defect(&Sphere::<2>::new(2.0), &SimConfig::with_dt(0.2, dt).seed(seed), &x, index),
                2 => worst_defect(&Sphere::<3>::new(1.0), &SimConfig::with_dt(0.2, dt).seed(seed), &ChartPoint::from_slice(0, &[a, b, 0.1]), index),
                3 => worst_defect(&Sphere::<2>::static_round(), &SimConfig::with_dt(0.3, dt).seed(seed), &x, index),
                4 => worst_defect(&Hyperbolic::<2>::new(1.0), &SimConfig::with_dt(0.3, dt).seed(seed), &ChartPoint::from_slice(0, &[0.5 * a, 0.5 * b]), index),
                5 => worst_defect(&Cigar::new(2.0), &SimConfig::with_dt(0.25, dt).seed(seed), &x, index),
                6 => worst_defect(&StaticCustom::donut(2.0, 1.0), &SimConfig::with_dt(0.3, dt).seed(seed), &x, index),
                _ => {
                    let fam = TorusNrf::new(single_mode_flow(), 2.0).unwrap();
                    worst_defect(&fam, &SimConfig::with_dt(0.3, dt).speed(2.0).reversed().seed(seed), &x, index)
                }
            };
            prop_assert!(worst <= FRAME_TOL_FACTOR * dt, "family {} defect {}", which, worst);
        }

        #[test]
        fn transports_compose(seed in 0u64..1000, mid in 1usize..299) {
            let fam = Sphere::<2>::new(2.0);
            let cfg = SimConfig::with_dt(0.3, 1e-3).seed(seed);
            let path = simulate_path(&fam, &cfg, &ChartPoint::from_slice(0, &[0.7, 0.1]), 0).unwrap();
            let whole = frames_on(&path, &fam, &cfg);
            let fresh = orthonormal_frame(&fam, path.metric_times[mid], &path.points[mid]).unwrap();
            let second = evolve_frame_between(&path, &fam, &cfg, mid, path.n_steps(), &fresh, None).unwrap();
            let composed = second.parallel(path.n_steps()) * whole.parallel(mid);
            prop_assert!((composed - whole.parallel(path.n_steps())).amax() <= 2.0 * whole.tol);
        }
    }
}
