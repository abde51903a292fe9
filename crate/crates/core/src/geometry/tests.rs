use std::f64::consts::PI;

use approx::assert_abs_diff_eq;
use proptest::prelude::*;

use super::*;

fn pt2(x: f64, y: f64) -> ChartPoint<2> {
    ChartPoint::from_slice(0, &[x, y])
}

#[test]
fn euclidean_metric_is_identity() {
    let e = Euclidean::<2>::new(0.0);
    for t in [0.0, 1.0, 17.0] {
        assert_eq!(e.metric_at(t, &pt2(3.0, -4.0)).unwrap(), Mat::<2>::identity());
    }
    assert_eq!(e.christoffel_closed(0.3, &pt2(1.0, 1.0)).unwrap(), Christoffel::zeros());
    let c = e.curvature_at(0.0, &pt2(0.2, 0.1)).unwrap();
    assert_eq!(c.scalar, 0.0);
    assert_eq!(c.ricci, Mat::<2>::zeros());
    assert_eq!(e.dt_metric_at(0.5, &pt2(0.0, 0.0)).unwrap(), Mat::<2>::zeros());
}

#[test]
fn shrinking_sphere_scales_initial_metric() {
    let s2 = Sphere::<2>::new(2.0);
    let p = pt2(0.4, -0.7);
    let g0 = s2.metric_at(0.0, &p).unwrap();
    for t in [0.1, 0.2, 0.4] {
        let g = s2.metric_at(t, &p).unwrap();
        assert_abs_diff_eq!(g, g0 * (1.0 - 2.0 * t), epsilon = 1e-14);
        assert_abs_diff_eq!(s2.dt_metric_at(t, &p).unwrap(), g0 * -2.0, epsilon = 1e-14);
    }
    let s3 = Sphere::<3>::new(2.0);
    let p3 = ChartPoint::from_slice(0, &[0.1, 0.2, -0.3]);
    let g30 = s3.metric_at(0.0, &p3).unwrap();
    assert_abs_diff_eq!(s3.metric_at(0.2, &p3).unwrap(), g30 * (1.0 - 4.0 * 0.2), epsilon = 1e-14);
    assert_abs_diff_eq!(s3.dt_metric_at(0.2, &p3).unwrap(), g30 * -4.0, epsilon = 1e-14);
}

#[test]
fn expanding_hyperbolic_scales_initial_metric() {
    let h = Hyperbolic::<3>::new(2.0);
    let p = ChartPoint::from_slice(0, &[0.1, 0.5, 0.2]);
    let g0 = h.metric_at(0.0, &p).unwrap();
    assert_abs_diff_eq!(h.metric_at(0.7, &p).unwrap(), g0 * (1.0 + 4.0 * 0.7), epsilon = 1e-13);
}

#[test]
fn lifetime_and_domain_errors() {
    let s2 = Sphere::<2>::new(2.0);
    assert_eq!(s2.t_max(), 0.5);
    assert!(s2.metric_at(0.47, &pt2(0.0, 0.0)).is_ok());
    assert!(matches!(s2.metric_at(0.48, &pt2(0.0, 0.0)), Err(Error::TimeOutOfRange { .. })));
    assert!(matches!(s2.metric_at(0.5, &pt2(0.0, 0.0)), Err(Error::TimeOutOfRange { .. })));
    assert!(matches!(s2.metric_at(0.1, &pt2(11.0, 0.0)), Err(Error::Domain { .. })));
    assert!(matches!(s2.metric_at(0.1, &ChartPoint::from_slice(2, &[0.0, 0.0])), Err(Error::InvalidChart(2))));
    assert!(matches!(s2.metric_at(-0.1, &pt2(0.0, 0.0)), Err(Error::TimeOutOfRange { .. })));
    let h = Hyperbolic::<2>::new(2.0);
    assert!(matches!(h.metric_at(0.1, &pt2(0.8, 0.7)), Err(Error::Domain { .. })));
    let bad = ChartPoint::from_slice(0, &[f64::NAN, 0.0]);
    assert!(Euclidean::<2>::new(0.0).metric_at(0.0, &bad).is_err());
}

#[test]
fn conformal_christoffel_matches_textbook_entries() {
    // Cigar: g = e^w δ with w = -ln(e^{4t} + |x|²); entries in terms of ∂w.
    let cigar = Cigar::new(2.0);
    let (t, x, y) = (0.1, 0.6, -0.4);
    let a = (0.4f64).exp() + x * x + y * y;
    let (w1, w2) = (-2.0 * x / a, -2.0 * y / a);
    let g = cigar.christoffel_closed(t, &pt2(x, y)).unwrap();
    assert_abs_diff_eq!(g.get(0, 0, 0), 0.5 * w1, epsilon = 1e-15);
    assert_abs_diff_eq!(g.get(0, 1, 1), -0.5 * w1, epsilon = 1e-15);
    assert_abs_diff_eq!(g.get(0, 0, 1), 0.5 * w2, epsilon = 1e-15);
    assert_abs_diff_eq!(g.get(1, 1, 1), 0.5 * w2, epsilon = 1e-15);
    let fd = cigar.christoffel_fd(t, &pt2(x, y), FD_REL_STEP).unwrap();
    assert!(fd.max_abs_diff(&g) < 1e-8);
}

#[test]
fn cigar_origin_is_symmetric() {
    let cigar = Cigar::new(2.0);
    let g = cigar.christoffel_closed(0.0, &pt2(0.0, 0.0)).unwrap();
    assert_eq!(g, Christoffel::zeros());
    let fd = cigar.christoffel_fd(0.0, &pt2(0.0, 0.0), FD_REL_STEP).unwrap();
    assert!(fd.max_abs_diff(&g) < 1e-10);
    let c = cigar.curvature_at(0.0, &pt2(0.0, 0.0)).unwrap();
    assert_abs_diff_eq!(c.scalar, 4.0, epsilon = 1e-12);
    // R = 4 e^{4t} / (e^{4t} + |x|²) away from the origin too.
    let (t, x) = (0.3f64, pt2(1.2, 0.5));
    let e = (4.0 * t).exp();
    let c = cigar.curvature_at(t, &x).unwrap();
    assert_abs_diff_eq!(c.scalar, 4.0 * e / (e + 1.69), epsilon = 1e-12);
}

#[test]
fn sphere_fd_christoffel_close_to_closed_form() {
    let s2 = Sphere::<2>::new(2.0);
    let p = pt2(0.3, 0.0);
    for t in [0.0, 0.2] {
        let closed = s2.christoffel_closed(t, &p).unwrap();
        let fd = s2.christoffel_fd(t, &p, 1e-4).unwrap();
        assert!(closed.max_abs_diff(&fd) <= 1e-6, "diff {}", closed.max_abs_diff(&fd));
    }
}

#[test]
fn round_sphere_curvature() {
    let s2 = Sphere::<2>::new(2.0);
    let p = pt2(0.5, 0.25);
    let c = s2.curvature_at(0.0, &p).unwrap();
    let g = s2.metric_at(0.0, &p).unwrap();
    assert_abs_diff_eq!(c.scalar, 2.0, epsilon = 1e-12);
    assert_abs_diff_eq!(c.ricci, g, epsilon = 1e-12);
    assert_abs_diff_eq!(c.eigenvalues, Vect::<2>::new(1.0, 1.0), epsilon = 1e-12);
    // Numerical Ricci from the Christoffel symbols agrees with Ric = (n-1) g.
    let fd = s2.ricci_fd(0.0, &p, FD_REL_STEP).unwrap();
    assert_abs_diff_eq!(fd, g, epsilon = 1e-6);
    let s3 = Sphere::<3>::new(1.0);
    let p3 = ChartPoint::from_slice(0, &[0.2, -0.1, 0.4]);
    let c3 = s3.curvature_at(0.3, &p3).unwrap();
    assert_abs_diff_eq!(c3.scalar, 6.0 / (1.0 - 2.0 * 0.3), epsilon = 1e-12);
    let fd3 = s3.ricci_fd(0.3, &p3, FD_REL_STEP).unwrap();
    assert_abs_diff_eq!(fd3, c3.ricci, epsilon = 1e-6);
}

#[test]
fn numeric_family_has_no_closed_christoffels() {
    let donut = StaticCustom::donut(3.0, 1.0);
    let p = pt2(0.7, 2.0);
    assert!(matches!(donut.christoffel_closed(0.0, &p), Err(Error::Unsupported(_))));
    // Gaussian curvature of the torus of revolution: K = cos θ / (r (R + r cos θ)).
    for theta in [0.0, 0.7, PI / 2.0, 2.5, PI] {
        let p = pt2(theta, 1.3);
        let c = donut.curvature_at(0.0, &p).unwrap();
        let k = theta.cos() / (3.0 + theta.cos());
        assert_abs_diff_eq!(c.scalar, 2.0 * k, epsilon = 1e-6);
        assert_abs_diff_eq!(c.eigenvalues, Vect::<2>::new(k, k), epsilon = 1e-6);
    }
}

#[test]
fn stencil_near_boundary_is_rejected() {
    let h = Hyperbolic::<2>::new(2.0);
    let p = pt2(0.99995, 0.0);
    assert!(matches!(h.christoffel_fd(0.0, &p, FD_REL_STEP), Err(Error::BoundaryProximity { .. })));
}

#[test]
fn stereographic_transition_examples() {
    let s2 = Sphere::<2>::new(2.0);
    let (q, _) = s2.chart_transition(&pt2(1.0, 0.0), 1).unwrap();
    assert_eq!(q, ChartPoint::from_slice(1, &[1.0, 0.0]));
    let (q, _) = s2.chart_transition(&pt2(2.0, 0.0), 1).unwrap();
    assert_abs_diff_eq!(q.coords, Vect::<2>::new(0.5, 0.0), epsilon = 1e-15);
    let p = pt2(0.3, -1.7);
    let (q, j1) = s2.chart_transition(&p, 1).unwrap();
    let (back, j2) = s2.chart_transition(&q, 0).unwrap();
    assert_eq!(back.chart, 0);
    assert_abs_diff_eq!(back.coords, p.coords, epsilon = 1e-12);
    assert_abs_diff_eq!(j2 * j1, Mat::<2>::identity(), epsilon = 1e-12);
    assert!(matches!(s2.chart_transition(&pt2(0.0, 0.0), 1), Err(Error::NoOverlap { .. })));
    assert!(matches!(s2.chart_transition(&p, 5), Err(Error::InvalidChart(5))));
    // both charts describe the same point of the sphere
    let e1 = s2.embed(&p);
    let e2 = s2.embed(&q);
    for (a, b) in e1.iter().zip(e2) {
        assert_abs_diff_eq!(*a, b, epsilon = 1e-14);
    }
}

#[test]
fn embedding_and_distance() {
    let s2 = Sphere::<2>::new(2.0);
    let south = ChartPoint::<2>::origin();
    let north = ChartPoint::from_slice(1, &[0.0, 0.0]);
    assert_abs_diff_eq!(s2.reference_distance(&south, &north).unwrap(), PI, epsilon = 1e-12);
    assert_abs_diff_eq!(s2.reference_distance(&south, &pt2(1.0, 0.0)).unwrap(), PI / 2.0, epsilon = 1e-12);
    let p = pt2(0.3, 0.8);
    let back = s2.chart_point(&s2.embed(&p));
    assert_abs_diff_eq!(back.coords, p.coords, epsilon = 1e-14);
    // embedding jacobian against finite differences
    let jac = s2.embed_jacobian(&p);
    for k in 0..2 {
        let mut a = p;
        let mut b = p;
        a.coords[k] += 1e-6;
        b.coords[k] -= 1e-6;
        let (ea, eb) = (s2.embed(&a), s2.embed(&b));
        for r in 0..3 {
            assert_abs_diff_eq!(jac[r][k], (ea[r] - eb[r]) / 2e-6, epsilon = 1e-8);
        }
    }
    let h = Hyperbolic::<2>::new(2.0);
    let d = h.reference_distance(&ChartPoint::origin(), &pt2(0.5, 0.0)).unwrap();
    assert_abs_diff_eq!(d, 2.0 * 0.5f64.atanh(), epsilon = 1e-12);
    let tor = Euclidean::<2>::torus(1.0);
    assert_abs_diff_eq!(tor.reference_distance(&pt2(0.1, 0.0), &pt2(6.2, 0.0)).unwrap(), 2.0 * PI - 6.1, epsilon = 1e-12);
}

#[test]
fn scaled_and_frozen_wrappers() {
    let s2 = Sphere::<2>::new(2.0);
    let scaled = Scaled::new(s2.clone(), 2.0);
    let p = pt2(0.2, 0.1);
    assert_eq!(scaled.t_max(), 1.0);
    assert_abs_diff_eq!(scaled.metric_at(0.4, &p).unwrap(), s2.metric_at(0.2, &p).unwrap() * 2.0, epsilon = 1e-14);
    // c g(t/c) of a sphere is again a sphere with a larger initial radius
    let direct = Sphere::<2>::new(2.0).with_scale(2.0);
    assert_abs_diff_eq!(scaled.metric_at(0.4, &p).unwrap(), direct.metric_at(0.4, &p).unwrap(), epsilon = 1e-14);
    assert_abs_diff_eq!(scaled.dt_metric_at(0.4, &p).unwrap(), direct.dt_metric_at(0.4, &p).unwrap(), epsilon = 1e-14);
    let frozen = Frozen::new(s2.clone(), 0.0);
    assert_eq!(frozen.t_max(), f64::INFINITY);
    assert_eq!(frozen.metric_at(3.0, &p).unwrap(), s2.metric_at(0.0, &p).unwrap());
    assert_eq!(frozen.dt_metric_at(3.0, &p).unwrap(), Mat::<2>::zeros());
}

fn families() -> Vec<(Box<dyn MetricFamily<2>>, f64)> {
    vec![
        (Box::new(Sphere::<2>::new(2.0)), 0.45),
        (Box::new(Sphere::<2>::new(1.0)), 0.9),
        (Box::new(Hyperbolic::<2>::new(2.0)), 3.0),
        (Box::new(Cigar::new(2.0)), 2.0),
        (Box::new(Cigar::new(1.0)), 2.0),
        (Box::new(Euclidean::<2>::new(1.0)), 5.0),
    ]
}

fn sample_point(f: &dyn MetricFamily<2>, a: f64, b: f64) -> ChartPoint<2> {
    // keep hyperbolic samples inside the ball
    let scale = if f.name() == "hyperbolic" { 0.35 } else { 1.5 };
    pt2(a * scale, b * scale)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metric_is_positive_definite(u in 0.0f64..1.0, a in -1.0f64..1.0, b in -1.0f64..1.0) {
        for (f, tmax) in families() {
            let p = sample_point(f.as_ref(), a, b);
            let g = f.metric_at(u * tmax, &p).unwrap();
            prop_assert!(crate::linalg::sorted_eigenvalues(&g)[0] > 0.0);
        }
    }

    #[test]
    fn ricci_flow_consistency(u in 0.0f64..1.0, a in -1.0f64..1.0, b in -1.0f64..1.0) {
        for (f, tmax) in families() {
            let p = sample_point(f.as_ref(), a, b);
            let t = u * tmax;
            let kappa = f.flow_kappa();
            // closed forms
            let closed = f.dt_metric_at(t, &p).unwrap() + f.curvature_at(t, &p).unwrap().ricci * kappa;
            prop_assert!(crate::linalg::max_abs(&closed) <= 1e-6);
            // independent route: time differences of the metric, Ricci from differentiated Christoffels
            let h = 1e-5;
            let t0 = (t - h).max(0.0);
            let dt = (f.metric_at(t0 + 2.0 * h, &p).unwrap() - f.metric_at(t0, &p).unwrap()) / (2.0 * h);
            let dt_mid = f.dt_metric_at(t0 + h, &p).unwrap();
            prop_assert!(crate::linalg::max_abs(&(dt - dt_mid)) <= 1e-6);
            let ric = f.ricci_fd(t0 + h, &p, FD_REL_STEP).unwrap();
            prop_assert!(crate::linalg::max_abs(&(dt + ric * kappa)) <= 1e-6, "{} residual", f.name());
        }
    }

    #[test]
    fn christoffel_symmetric_and_metric_compatible(u in 0.0f64..1.0, a in -1.0f64..1.0, b in -1.0f64..1.0) {
        for (f, tmax) in families() {
            let p = sample_point(f.as_ref(), a, b);
            let t = u * tmax;
            let gam = f.christoffel_at(t, &p).unwrap();
            prop_assert_eq!(gam.asymmetry(), 0.0);
            let g = f.metric_at(t, &p).unwrap();
            let h = 1e-5;
            for k in 0..2 {
                let mut pp = p;
                let mut pm = p;
                pp.coords[k] += h;
                pm.coords[k] -= h;
                let dg = (f.metric_at(t, &pp).unwrap() - f.metric_at(t, &pm).unwrap()) / (2.0 * h);
                for i in 0..2 {
                    for j in 0..2 {
                        let mut r = dg[(i, j)];
                        for l in 0..2 {
                            r -= gam.get(l, k, i) * g[(l, j)] + gam.get(l, k, j) * g[(i, l)];
                        }
                        prop_assert!(r.abs() <= 1e-5, "compatibility residual {r}");
                    }
                }
            }
        }
    }

    #[test]
    fn chart_covariance(t in 0.0f64..0.45, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        prop_assume!(a * a + b * b > 0.01);
        let s2 = Sphere::<2>::new(2.0);
        let p = pt2(a, b);
        let (q, j) = s2.chart_transition(&p, 1).unwrap();
        let pulled = j.transpose() * s2.metric_at(t, &q).unwrap() * j;
        let g = s2.metric_at(t, &p).unwrap();
        prop_assert!(crate::linalg::max_abs(&(pulled - g)) <= 1e-10 * (1.0 + crate::linalg::max_abs(&g)));
    }
}
