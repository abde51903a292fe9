//! Fourier pseudo-spectral calculus on the periodic square `[0, 2π)²`.
//!
//! Grid fields are stored row-major with `field[i * n + j]` the value at
//! `(x₁, x₂) = (i h, j h)`, `h = 2π / n`.

use std::f64::consts::TAU;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Spatial derivatives of one field.
#[derive(Clone, Debug, PartialEq)]
pub struct Derivatives {
    pub dx: Vec<f64>,
    pub dy: Vec<f64>,
    pub laplacian: Vec<f64>,
}

/// FFT plans and wavenumbers for one grid size.
#[derive(Clone)]
pub struct Spectral2d {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    /// Wavenumbers used for first derivatives (Nyquist zeroed).
    k_odd: Vec<f64>,
    /// Wavenumbers used for second derivatives.
    k_even: Vec<f64>,
}

impl std::fmt::Debug for Spectral2d {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Spectral2d").field("n", &self.n).finish()
    }
}

impl Spectral2d {
    pub fn new(n: usize) -> Result<Self> {
        if n < 8 {
            return Err(Error::Resolution(n));
        }
        if !n.is_multiple_of(2) {
            return Err(Error::Config(format!("grid resolution must be even, got {n}")));
        }
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let k_even: Vec<f64> = (0..n).map(|k| if k <= n / 2 { k as f64 } else { k as f64 - n as f64 }).collect();
        let k_odd: Vec<f64> = k_even.iter().enumerate().map(|(k, &v)| if k == n / 2 { 0.0 } else { v }).collect();
        Ok(Self { n, forward, inverse, k_odd, k_even })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn spacing(&self) -> f64 {
        TAU / self.n as f64
    }

    /// Grid coordinate of index `i` along either axis.
    pub fn coord(&self, i: usize) -> f64 {
        i as f64 * self.spacing()
    }

    /// Evaluate `f(x₁, x₂)` on the grid.
    pub fn sample(&self, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let n = self.n;
        (0..n * n).map(|idx| f(self.coord(idx / n), self.coord(idx % n))).collect()
    }

    pub fn to_spectrum(&self, field: &[f64]) -> Vec<Complex64> {
        assert_eq!(field.len(), self.n * self.n);
        let mut data: Vec<Complex64> = field.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut data, &self.forward);
        data
    }

    pub fn to_field(&self, mut spectrum: Vec<Complex64>) -> Vec<f64> {
        self.transform(&mut spectrum, &self.inverse);
        let norm = 1.0 / (self.n * self.n) as f64;
        spectrum.into_iter().map(|c| c.re * norm).collect()
    }

    fn transform(&self, data: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        let n = self.n;
        // rows (x₂ direction) are contiguous
        plan.process(data);
        let mut column = vec![Complex64::new(0.0, 0.0); n];
        for j in 0..n {
            for i in 0..n {
                column[i] = data[i * n + j];
            }
            plan.process(&mut column);
            for i in 0..n {
                data[i * n + j] = column[i];
            }
        }
    }

    pub fn derivatives(&self, field: &[f64]) -> Derivatives {
        let spec = self.to_spectrum(field);
        let n = self.n;
        let mut sx = spec.clone();
        let mut sy = spec.clone();
        let mut sl = spec;
        for i in 0..n {
            for j in 0..n {
                let idx = i * n + j;
                let c = sl[idx];
                sx[idx] = Complex64::new(0.0, self.k_odd[i]) * c;
                sy[idx] = Complex64::new(0.0, self.k_odd[j]) * c;
                sl[idx] = c * -(self.k_even[i] * self.k_even[i] + self.k_even[j] * self.k_even[j]);
            }
        }
        Derivatives { dx: self.to_field(sx), dy: self.to_field(sy), laplacian: self.to_field(sl) }
    }

    pub fn laplacian(&self, field: &[f64]) -> Vec<f64> {
        let mut spec = self.to_spectrum(field);
        let n = self.n;
        for i in 0..n {
            for j in 0..n {
                spec[i * n + j] *= -(self.k_even[i] * self.k_even[i] + self.k_even[j] * self.k_even[j]);
            }
        }
        self.to_field(spec)
    }

    /// Zero every mode with `|k₁|` or `|k₂|` above `n / 3` (the two-thirds rule).
    pub fn dealias(&self, spectrum: &mut [Complex64]) {
        let n = self.n;
        let cut = (n / 3) as f64;
        for i in 0..n {
            for j in 0..n {
                if self.k_even[i].abs() > cut || self.k_even[j].abs() > cut {
                    spectrum[i * n + j] = Complex64::new(0.0, 0.0);
                }
            }
        }
    }

    /// Band-limited resampling onto a finer `m × m` grid (zero padding).
    ///
    /// The Nyquist coefficient is split between `±n/2` so that the result is
    /// the real trigonometric interpolant of the input.
    pub fn resample(&self, field: &[f64], fine: &Spectral2d) -> Vec<f64> {
        let (n, m) = (self.n, fine.n);
        assert!(m >= n, "resampling only refines");
        let spec = self.to_spectrum(field);
        let targets = |k: usize| -> Vec<(usize, f64)> {
            if k < n / 2 {
                vec![(k, 1.0)]
            } else if k > n / 2 {
                vec![(m - (n - k), 1.0)]
            } else {
                vec![(n / 2, 0.5), (m - n / 2, 0.5)]
            }
        };
        let mut out = vec![Complex64::new(0.0, 0.0); m * m];
        let scale = (m * m) as f64 / (n * n) as f64;
        for i in 0..n {
            for (ti, wi) in targets(i) {
                for j in 0..n {
                    for (tj, wj) in targets(j) {
                        out[ti * m + tj] += spec[i * n + j] * (wi * wj * scale);
                    }
                }
            }
        }
        fine.to_field(out)
    }

    /// `∫ f dx dy` by the (spectrally accurate) periodic trapezoid rule.
    pub fn integrate(&self, field: &[f64]) -> f64 {
        let h = self.spacing();
        crate::stats::pairwise_sum(field) * h * h
    }

    /// Trigonometric interpolation at an arbitrary point (O(n²), for tests and oracles).
    ///
    /// The Nyquist mode is split evenly between `±n/2`, i.e. it contributes a cosine.
    pub fn evaluate(&self, spectrum: &[Complex64], x: f64, y: f64) -> f64 {
        let n = self.n;
        let basis = |k: usize, s: f64| {
            if k == n / 2 {
                Complex64::new((self.k_even[k] * s).cos(), 0.0)
            } else {
                Complex64::from_polar(1.0, self.k_even[k] * s)
            }
        };
        let ex: Vec<Complex64> = (0..n).map(|k| basis(k, x)).collect();
        let ey: Vec<Complex64> = (0..n).map(|k| basis(k, y)).collect();
        let mut acc = Complex64::new(0.0, 0.0);
        for i in 0..n {
            for j in 0..n {
                acc += spectrum[i * n + j] * ex[i] * ey[j];
            }
        }
        acc.re / (n * n) as f64
    }
}

/// Four-point periodic Lagrange weights around `x` on a grid of spacing `h`.
///
/// Returns the index of the first stencil node (may be negative before wrapping)
/// and the weights for nodes `i0 .. i0 + 4`.
#[inline]
pub(crate) fn cubic_stencil(x: f64, h: f64) -> (i64, [f64; 4]) {
    let s = x / h;
    let base = s.floor();
    let f = s - base;
    // nodes at -1, 0, 1, 2 relative to base
    let w = [
        -f * (f - 1.0) * (f - 2.0) / 6.0,
        (f + 1.0) * (f - 1.0) * (f - 2.0) / 2.0,
        -(f + 1.0) * f * (f - 2.0) / 2.0,
        (f + 1.0) * f * (f - 1.0) / 6.0,
    ];
    (base as i64 - 1, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivatives_of_single_modes_are_exact() {
        let sp = Spectral2d::new(16).unwrap();
        let f = sp.sample(|x, y| (2.0 * x).sin() * y.cos() + 0.5);
        let d = sp.derivatives(&f);
        let ex = sp.sample(|x, y| 2.0 * (2.0 * x).cos() * y.cos());
        let ey = sp.sample(|x, y| -(2.0 * x).sin() * y.sin());
        let el = sp.sample(|x, y| -5.0 * (2.0 * x).sin() * y.cos());
        for i in 0..f.len() {
            assert!((d.dx[i] - ex[i]).abs() < 1e-12);
            assert!((d.dy[i] - ey[i]).abs() < 1e-12);
            assert!((d.laplacian[i] - el[i]).abs() < 1e-12);
        }
        assert!((sp.integrate(&f) - 0.5 * TAU * TAU).abs() < 1e-12);
    }

    #[test]
    fn trigonometric_interpolation_off_grid() {
        let sp = Spectral2d::new(16).unwrap();
        let g = |x: f64, y: f64| (x + 2.0 * y).cos() + 0.3 * (3.0 * x).sin();
        let spec = sp.to_spectrum(&sp.sample(g));
        for (x, y) in [(0.123, 4.5), (2.0, 0.7), (6.1, 6.2)] {
            assert!((sp.evaluate(&spec, x, y) - g(x, y)).abs() < 1e-12);
        }
    }

    #[test]
    fn resampling_is_exact_for_band_limited_fields() {
        let coarse = Spectral2d::new(8).unwrap();
        let fine = Spectral2d::new(24).unwrap();
        let g = |x: f64, y: f64| (x - y).sin() + 0.2 * (4.0 * x).cos() + 0.1 * (3.0 * y).cos();
        let up = coarse.resample(&coarse.sample(g), &fine);
        let exact = fine.sample(g);
        for (a, b) in up.iter().zip(&exact) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dealiasing_keeps_low_modes() {
        let sp = Spectral2d::new(12).unwrap();
        let low = sp.sample(|x, y| (4.0 * x).cos() * (2.0 * y).sin());
        let mut spec = sp.to_spectrum(&low);
        sp.dealias(&mut spec);
        let back = sp.to_field(spec);
        assert!(back.iter().zip(&low).all(|(a, b)| (a - b).abs() < 1e-12));
        let mut high = sp.to_spectrum(&sp.sample(|x, _| (5.0 * x).cos()));
        sp.dealias(&mut high);
        assert!(sp.to_field(high).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn rejects_small_or_odd_grids() {
        assert!(matches!(Spectral2d::new(4), Err(Error::Resolution(4))));
        assert!(Spectral2d::new(9).is_err());
    }

    #[test]
    fn cubic_weights_reproduce_cubics() {
        let h = 0.25;
        for x in [0.0, 0.1, 0.37, 1.99] {
            let (i0, w) = cubic_stencil(x, h);
            let p = |s: f64| 1.0 - 2.0 * s + 0.5 * s * s - 0.3 * s * s * s;
            let v: f64 = (0..4).map(|k| w[k] * p((i0 + k as i64) as f64 * h)).sum();
            assert!((v - p(x)).abs() < 1e-13);
        }
    }
}
