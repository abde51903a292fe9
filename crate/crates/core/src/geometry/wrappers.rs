use super::{ChartPoint, Christoffel, MetricFamily};
use crate::error::Result;
use crate::linalg::Mat;

/// Parabolic blow-up `t ↦ c · g(t / c)` of a family.
///
/// Christoffel symbols and the Ricci tensor are invariant under constant
/// rescaling, so they are the inner ones evaluated at `t / c`.
#[derive(Clone, Debug)]
pub struct Scaled<F> {
    inner: F,
    c: f64,
}

impl<F> Scaled<F> {
    pub fn new(inner: F, c: f64) -> Self {
        assert!(c > 0.0, "blow-up factor must be positive");
        Self { inner, c }
    }

    pub fn factor(&self) -> f64 {
        self.c
    }

    pub fn inner(&self) -> &F {
        &self.inner
    }
}

impl<F: MetricFamily<N>, const N: usize> MetricFamily<N> for Scaled<F> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn t_max(&self) -> f64 {
        self.c * self.inner.t_max()
    }

    fn flow_kappa(&self) -> f64 {
        self.inner.flow_kappa()
    }

    fn chart_count(&self) -> u8 {
        self.inner.chart_count()
    }

    fn in_domain(&self, p: &ChartPoint<N>) -> bool {
        self.inner.in_domain(p)
    }

    fn is_periodic(&self) -> bool {
        self.inner.is_periodic()
    }

    fn metric(&self, t: f64, p: &ChartPoint<N>) -> Mat<N> {
        self.inner.metric(t / self.c, p) * self.c
    }

    fn dt_metric(&self, t: f64, p: &ChartPoint<N>) -> Mat<N> {
        self.inner.dt_metric(t / self.c, p)
    }

    fn closed_christoffel(&self, t: f64, p: &ChartPoint<N>) -> Option<Christoffel<N>> {
        self.inner.closed_christoffel(t / self.c, p)
    }

    fn closed_ricci(&self, t: f64, p: &ChartPoint<N>) -> Option<Mat<N>> {
        self.inner.closed_ricci(t / self.c, p)
    }

    fn switch_target(&self, p: &ChartPoint<N>) -> Option<u8> {
        self.inner.switch_target(p)
    }

    fn transition(&self, p: &ChartPoint<N>, target: u8) -> Result<(ChartPoint<N>, Mat<N>)> {
        self.inner.transition(p, target)
    }

    fn wrap(&self, p: &mut ChartPoint<N>) {
        self.inner.wrap(p)
    }

    fn reference_distance(&self, a: &ChartPoint<N>, b: &ChartPoint<N>) -> Option<f64> {
        self.inner.reference_distance(a, b).map(|d| d * self.c.sqrt())
    }

    fn check_time(&self, t: f64) -> Result<()> {
        self.inner.check_time(t / self.c)
    }
}

/// The static metric `g(t_0)` of a family, for all times.
#[derive(Clone, Debug)]
pub struct Frozen<F> {
    inner: F,
    at: f64,
}

impl<F> Frozen<F> {
    pub fn new(inner: F, at: f64) -> Self {
        Self { inner, at }
    }

    pub fn inner(&self) -> &F {
        &self.inner
    }
}

impl<F: MetricFamily<N>, const N: usize> MetricFamily<N> for Frozen<F> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn flow_kappa(&self) -> f64 {
        0.0
    }

    fn chart_count(&self) -> u8 {
        self.inner.chart_count()
    }

    fn in_domain(&self, p: &ChartPoint<N>) -> bool {
        self.inner.in_domain(p)
    }

    fn is_periodic(&self) -> bool {
        self.inner.is_periodic()
    }

    fn metric(&self, _t: f64, p: &ChartPoint<N>) -> Mat<N> {
        self.inner.metric(self.at, p)
    }

    fn dt_metric(&self, _t: f64, _p: &ChartPoint<N>) -> Mat<N> {
        Mat::<N>::zeros()
    }

    fn closed_christoffel(&self, _t: f64, p: &ChartPoint<N>) -> Option<Christoffel<N>> {
        self.inner.closed_christoffel(self.at, p)
    }

    fn closed_ricci(&self, _t: f64, p: &ChartPoint<N>) -> Option<Mat<N>> {
        self.inner.closed_ricci(self.at, p)
    }

    fn switch_target(&self, p: &ChartPoint<N>) -> Option<u8> {
        self.inner.switch_target(p)
    }

    fn transition(&self, p: &ChartPoint<N>, target: u8) -> Result<(ChartPoint<N>, Mat<N>)> {
        self.inner.transition(p, target)
    }

    fn wrap(&self, p: &mut ChartPoint<N>) {
        self.inner.wrap(p)
    }

    fn reference_distance(&self, a: &ChartPoint<N>, b: &ChartPoint<N>) -> Option<f64> {
        self.inner.reference_distance(a, b)
    }
}

// Shared references and boxes forward to the underlying family.
impl<F: MetricFamily<N> + ?Sized, const N: usize> MetricFamily<N> for &F {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn t_max(&self) -> f64 {
        (**self).t_max()
    }
    fn flow_kappa(&self) -> f64 {
        (**self).flow_kappa()
    }
    fn chart_count(&self) -> u8 {
        (**self).chart_count()
    }
    fn in_domain(&self, p: &ChartPoint<N>) -> bool {
        (**self).in_domain(p)
    }
    fn is_periodic(&self) -> bool {
        (**self).is_periodic()
    }
    fn metric(&self, t: f64, p: &ChartPoint<N>) -> Mat<N> {
        (**self).metric(t, p)
    }
    fn dt_metric(&self, t: f64, p: &ChartPoint<N>) -> Mat<N> {
        (**self).dt_metric(t, p)
    }
    fn closed_christoffel(&self, t: f64, p: &ChartPoint<N>) -> Option<Christoffel<N>> {
        (**self).closed_christoffel(t, p)
    }
    fn closed_ricci(&self, t: f64, p: &ChartPoint<N>) -> Option<Mat<N>> {
        (**self).closed_ricci(t, p)
    }
    fn switch_target(&self, p: &ChartPoint<N>) -> Option<u8> {
        (**self).switch_target(p)
    }
    fn transition(&self, p: &ChartPoint<N>, target: u8) -> Result<(ChartPoint<N>, Mat<N>)> {
        (**self).transition(p, target)
    }
    fn wrap(&self, p: &mut ChartPoint<N>) {
        (**self).wrap(p)
    }
    fn reference_distance(&self, a: &ChartPoint<N>, b: &ChartPoint<N>) -> Option<f64> {
        (**self).reference_distance(a, b)
    }
    fn check_time(&self, t: f64) -> Result<()> {
        (**self).check_time(t)
    }
}

impl<F: MetricFamily<N> + ?Sized, const N: usize> MetricFamily<N> for Box<F> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn t_max(&self) -> f64 {
        (**self).t_max()
    }
    fn flow_kappa(&self) -> f64 {
        (**self).flow_kappa()
    }
    fn chart_count(&self) -> u8 {
        (**self).chart_count()
    }
    fn in_domain(&self, p: &ChartPoint<N>) -> bool {
        (**self).in_domain(p)
    }
    fn is_periodic(&self) -> bool {
        (**self).is_periodic()
    }
    fn metric(&self, t: f64, p: &ChartPoint<N>) -> Mat<N> {
        (**self).metric(t, p)
    }
    fn dt_metric(&self, t: f64, p: &ChartPoint<N>) -> Mat<N> {
        (**self).dt_metric(t, p)
    }
    fn closed_christoffel(&self, t: f64, p: &ChartPoint<N>) -> Option<Christoffel<N>> {
        (**self).closed_christoffel(t, p)
    }
    fn closed_ricci(&self, t: f64, p: &ChartPoint<N>) -> Option<Mat<N>> {
        (**self).closed_ricci(t, p)
    }
    fn switch_target(&self, p: &ChartPoint<N>) -> Option<u8> {
        (**self).switch_target(p)
    }
    fn transition(&self, p: &ChartPoint<N>, target: u8) -> Result<(ChartPoint<N>, Mat<N>)> {
        (**self).transition(p, target)
    }
    fn wrap(&self, p: &mut ChartPoint<N>) {
        (**self).wrap(p)
    }
    fn reference_distance(&self, a: &ChartPoint<N>, b: &ChartPoint<N>) -> Option<f64> {
        (**self).reference_distance(a, b)
    }
    fn check_time(&self, t: f64) -> Result<()> {
        (**self).check_time(t)
    }
}
