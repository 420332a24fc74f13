//! Small numerical helpers shared by the other modules.

use std::cell::RefCell;
use std::f64::consts::SQRT_2;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

/// Neumaier's compensated summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = CompensatedSum::new();
        for x in iter {
            s.add(x);
        }
        s
    }
}

/// Pairwise (tree) summation. The reduction order depends only on the length,
/// so results are reproducible however the inputs were produced.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if xs.len() <= BLOCK {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Standard normal CDF, `Φ(x) = erfc(-x/√2)/2`.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// Mean together with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStderr {
    pub mean: f64,
    pub stderr: f64,
}

impl MeanStderr {
    /// Sample mean and `sd/√n`. With a single sample the standard error is NaN.
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = pairwise_sum(xs) / n;
        let dev: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
        let var = pairwise_sum(&dev) / (n - 1.0);
        MeanStderr {
            mean,
            stderr: (var / n).sqrt(),
        }
    }

    /// `(mean - target) / stderr`.
    pub fn z_score(&self, target: f64) -> f64 {
        (self.mean - target) / self.stderr
    }
}

/// Sample variance with a standard error based on the fourth central moment.
pub fn variance_with_stderr(xs: &[f64]) -> MeanStderr {
    let n = xs.len() as f64;
    let mean = pairwise_sum(xs) / n;
    let dev: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&dev) / (n - 1.0);
    // Delta-method standard error using the fourth central moment.
    let m4: Vec<f64> = dev.iter().map(|d| d * d).collect();
    let m4 = pairwise_sum(&m4) / n;
    let se = ((m4 - var * var * (n - 3.0) / (n - 1.0)) / n).max(0.0).sqrt();
    MeanStderr { mean: var, stderr: se }
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Sample standard deviation (n-1 denominator).
pub fn std_dev(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = pairwise_sum(xs) / n;
    let dev: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    (pairwise_sum(&dev) / (n - 1.0)).sqrt()
}

/// Ordinary least squares `y ≈ intercept + slope·x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<LinearFit> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    Some(LinearFit {
        slope,
        intercept: my - slope * mx,
    })
}

/// Distinct values `⌊γ^i⌋` in `[1, n_max]`, always including `n_max`.
pub fn geometric_grid(n_max: usize, gamma: f64) -> Vec<usize> {
    assert!(gamma > 1.0, "grid ratio must exceed 1");
    let mut out = Vec::new();
    let mut x = 1.0_f64;
    while (x as usize) <= n_max {
        let k = x.floor() as usize;
        if out.last() != Some(&k) {
            out.push(k);
        }
        x *= gamma;
    }
    if out.last() != Some(&n_max) && n_max >= 1 {
        out.push(n_max);
    }
    out
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Forward FFT plan of length `len`, cached per thread.
pub fn fft_forward(len: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(len))
}

/// Inverse (unnormalized) FFT plan of length `len`, cached per thread.
pub fn fft_inverse(len: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(len))
}

/// Symmetric Toeplitz operator `T_{kl} = c(|k-l|)` of size `n`, applied through
/// a power-of-two circulant embedding.
pub struct SymmetricToeplitz {
    n: usize,
    len: usize,
    spectrum: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl SymmetricToeplitz {
    /// `column[d]` is `c(d)` for `d = 0..n`.
    pub fn new(column: &[f64]) -> Self {
        let n = column.len();
        let len = (2 * n).next_power_of_two().max(2);
        let mut buf = vec![Complex64::new(0.0, 0.0); len];
        for (d, &c) in column.iter().enumerate() {
            buf[d].re = c;
            if d > 0 {
                buf[len - d].re = c;
            }
        }
        let forward = fft_forward(len);
        let inverse = fft_inverse(len);
        forward.process(&mut buf);
        let spectrum = buf.iter().map(|z| z.re / len as f64).collect();
        SymmetricToeplitz {
            n,
            len,
            spectrum,
            forward,
            inverse,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Computes `T·u` and `T·v` with one complex transform pair.
    pub fn apply_pair(&self, u: &[f64], v: &[f64], tu: &mut [f64], tv: &mut [f64]) {
        let mut buf = vec![Complex64::new(0.0, 0.0); self.len];
        for k in 0..self.n {
            buf[k] = Complex64::new(u[k], v[k]);
        }
        self.forward.process(&mut buf);
        for (z, s) in buf.iter_mut().zip(&self.spectrum) {
            *z *= *s;
        }
        self.inverse.process(&mut buf);
        for k in 0..self.n {
            tu[k] = buf[k].re;
            tv[k] = buf[k].im;
        }
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let zeros = vec![0.0; self.n];
        let mut out = vec![0.0; self.n];
        let mut scratch = vec![0.0; self.n];
        self.apply_pair(u, &zeros, &mut out, &mut scratch);
        out
    }
}

/// Cross-correlations `xc[d + (n-1)] = Σ_k a_k b_{k+d}` for `d ∈ (-n, n)`.
pub fn cross_correlation(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = a.len();
    assert_eq!(n, b.len());
    if n == 0 {
        return Vec::new();
    }
    let len = (2 * n).next_power_of_two();
    let fwd = fft_forward(len);
    let inv = fft_inverse(len);
    let mut fa = vec![Complex64::new(0.0, 0.0); len];
    let mut fb = vec![Complex64::new(0.0, 0.0); len];
    for k in 0..n {
        fa[k].re = a[k];
        fb[k].re = b[k];
    }
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x = x.conj() * y;
    }
    inv.process(&mut fa);
    let scale = 1.0 / len as f64;
    let mut out = vec![0.0; 2 * n - 1];
    for d in 0..n {
        out[n - 1 + d] = fa[d].re * scale;
        if d > 0 {
            out[n - 1 - d] = fa[len - d].re * scale;
        }
    }
    out
}
