//! Log-averaged empirical measures, Kolmogorov distances, the statistic
//! `Δ_n(t) = (1/log n) Σ_{k≤n} (1/k)(e^{itG_k} - φ(t))` and numerical
//! diagnostics for the summability conditions behind an almost-sure CLT.
//!
//! Series are never proven summable here: every diagnostic reports partial
//! sums, a fitted decay exponent and a verdict derived from that exponent.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::kernels::{contraction_norm_sq, ContractionMethod};
use crate::malliavin::moment_bounds;
use crate::numerics::{geometric_grid, linear_fit, normal_cdf, pairwise_sum, CompensatedSum, MeanStderr};
use crate::sequences::{fbm_scaled_covariance, GSeriesBuilder, Regime, SequenceSpec, VarianceProfile};
use crate::sim::{NormalSource, SamplerKind, StationarySampler};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Divide by `log n`; total mass `H_n / log n ≠ 1`.
    LogN,
    /// Divide by `H_n = Σ_{k≤n} 1/k`; a probability measure.
    Harmonic,
}

/// `Σ_{k≤n} (1/k) δ_{G_k}`, normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct LogAveragedMeasure {
    /// `(value, weight)` sorted by value.
    pub atoms: Vec<(f64, f64)>,
    pub normalization: Normalization,
    pub n: usize,
}

pub fn harmonic_number(n: usize) -> f64 {
    let mut s = CompensatedSum::new();
    for k in (1..=n).rev() {
        s.add(1.0 / k as f64);
    }
    s.value()
}

impl LogAveragedMeasure {
    pub fn from_values(values: &[f64], normalization: Normalization) -> Result<Self> {
        let n = values.len();
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite value {v}")));
        }
        let norm = match normalization {
            Normalization::LogN => {
                if n < 2 {
                    return Err(Error::InvalidArgument("log n normalization needs n ≥ 2".into()));
                }
                (n as f64).ln()
            }
            Normalization::Harmonic => {
                if n == 0 {
                    return Err(Error::InvalidArgument("empty series".into()));
                }
                harmonic_number(n)
            }
        };
        let mut atoms: Vec<(f64, f64)> = values
            .iter()
            .enumerate()
            .map(|(k, &v)| (v, 1.0 / ((k + 1) as f64 * norm)))
            .collect();
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(LogAveragedMeasure {
            atoms,
            normalization,
            n,
        })
    }

    pub fn total_mass(&self) -> f64 {
        let w: Vec<f64> = self.atoms.iter().map(|a| a.1).collect();
        pairwise_sum(&w)
    }

    /// `∫ φ dμ`.
    pub fn integrate<F: Fn(f64) -> f64>(&self, phi: F) -> f64 {
        let t: Vec<f64> = self.atoms.iter().map(|(v, w)| w * phi(*v)).collect();
        pairwise_sum(&t)
    }
}

pub fn log_average_measure(g: &crate::sequences::GSeries, normalization: Normalization) -> Result<LogAveragedMeasure> {
    LogAveragedMeasure::from_values(&g.values, normalization)
}

/// `(1/H_n) Σ_{k≤n} φ(G_k)/k`, without sorting.
pub fn harmonic_average<F: Fn(f64) -> f64>(values: &[f64], phi: F) -> f64 {
    let mut s = CompensatedSum::new();
    for (k, &v) in values.iter().enumerate() {
        s.add(phi(v) / (k + 1) as f64);
    }
    s.value() / harmonic_number(values.len())
}

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    StdNormal,
    /// Weighted atoms `(value, weight)`; weights sum to one.
    Empirical(Vec<(f64, f64)>),
}

impl Target {
    pub fn from_sample(sample: &[f64]) -> Self {
        let w = 1.0 / sample.len() as f64;
        let mut atoms: Vec<(f64, f64)> = sample.iter().map(|&v| (v, w)).collect();
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        Target::Empirical(atoms)
    }

    pub fn from_measure(m: &LogAveragedMeasure) -> Self {
        Target::Empirical(m.atoms.clone())
    }
}

/// Merges tied values so that each entry is one jump of the step CDF.
fn jumps(atoms: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(atoms.len());
    for &(v, w) in atoms {
        match out.last_mut() {
            Some(last) if last.0 == v => last.1 += w,
            _ => out.push((v, w)),
        }
    }
    out
}

/// Exact `sup_x |F_μ(x) - F_target(x)|`, evaluated at the jumps using both
/// one-sided limits.
pub fn ks_distance(m: &LogAveragedMeasure, target: &Target) -> Result<f64> {
    if m.normalization != Normalization::Harmonic {
        return Err(Error::InvalidArgument(
            "KS distance needs the harmonic (probability) normalization".into(),
        ));
    }
    let mine = jumps(&m.atoms);
    match target {
        Target::StdNormal => {
            let mut cdf = CompensatedSum::new();
            let mut best: f64 = 0.0;
            for (x, w) in mine {
                let phi = normal_cdf(x);
                best = best.max((cdf.value() - phi).abs());
                cdf.add(w);
                best = best.max((cdf.value() - phi).abs());
            }
            Ok(best)
        }
        Target::Empirical(atoms) => {
            let mut sorted = atoms.clone();
            sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
            let theirs = jumps(&sorted);
            let (mut i, mut j) = (0, 0);
            let (mut fa, mut fb) = (CompensatedSum::new(), CompensatedSum::new());
            let mut best: f64 = 0.0;
            while i < mine.len() || j < theirs.len() {
                let xa = mine.get(i).map_or(f64::INFINITY, |a| a.0);
                let xb = theirs.get(j).map_or(f64::INFINITY, |b| b.0);
                let x = xa.min(xb);
                if xa == x {
                    fa.add(mine[i].1);
                    i += 1;
                }
                if xb == x {
                    fb.add(theirs[j].1);
                    j += 1;
                }
                best = best.max((fa.value() - fb.value()).abs());
            }
            Ok(best)
        }
    }
}

/// `Δ_n(t)` for the series `values` (`G_1..G_n`) against `target_cf = φ(t)`.
pub fn delta_stat(values: &[f64], t: f64, target_cf: f64) -> Result<Complex64> {
    let n = values.len();
    if n < 2 {
        return Err(Error::InvalidArgument("Δ_n needs n ≥ 2".into()));
    }
    let (mut re, mut im) = (CompensatedSum::new(), CompensatedSum::new());
    for (k, &g) in values.iter().enumerate() {
        let w = 1.0 / (k + 1) as f64;
        let (s, c) = (t * g).sin_cos();
        re.add(w * (c - target_cf));
        im.add(w * s);
    }
    let l = (n as f64).ln();
    Ok(Complex64::new(re.value() / l, im.value() / l))
}

/// `Δ_m(t)` for every `m` in `ns` (increasing, each ≤ `values.len()`), in one pass.
pub fn delta_prefixes(values: &[f64], t: f64, target_cf: f64, ns: &[usize]) -> Result<Vec<Complex64>> {
    let mut out = Vec::with_capacity(ns.len());
    let (mut re, mut im) = (CompensatedSum::new(), CompensatedSum::new());
    let mut k = 0;
    for &m in ns {
        if m < 2 || m > values.len() || m < k {
            return Err(Error::InvalidArgument(format!("bad prefix length {m}")));
        }
        while k < m {
            let w = 1.0 / (k + 1) as f64;
            let (s, c) = (t * values[k]).sin_cos();
            re.add(w * (c - target_cf));
            im.add(w * s);
            k += 1;
        }
        let l = (m as f64).ln();
        out.push(Complex64::new(re.value() / l, im.value() / l));
    }
    Ok(out)
}

/// `(1/log n) Σ_{k≤n} 2/k`, the triangle-inequality bound on `|Δ_n(t)|`.
pub fn delta_triangle_bound(n: usize) -> f64 {
    2.0 * harmonic_number(n) / (n as f64).ln()
}

pub fn gaussian_cf(t: f64) -> f64 {
    (-0.5 * t * t).exp()
}

/// Estimates of `E|Δ_n(t)|²` and of the mean `E Δ_n(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaMoments {
    pub mean_sq: MeanStderr,
    pub mean_re: f64,
    pub mean_im: f64,
    /// Standard error of `|mean|`, combining both parts.
    pub mean_stderr: f64,
}

impl DeltaMoments {
    pub fn exact(mean_sq: f64) -> Self {
        DeltaMoments {
            mean_sq: MeanStderr { mean: mean_sq, stderr: 0.0 },
            mean_re: 0.0,
            mean_im: 0.0,
            mean_stderr: 0.0,
        }
    }

    pub fn from_replicates(z: &[Complex64]) -> Self {
        if z.iter().all(|v| v.norm_sqr() == 0.0) {
            return DeltaMoments::exact(0.0);
        }
        let sq: Vec<f64> = z.iter().map(|v| v.norm_sqr()).collect();
        let re: Vec<f64> = z.iter().map(|v| v.re).collect();
        let im: Vec<f64> = z.iter().map(|v| v.im).collect();
        let (mr, mi) = (MeanStderr::from_samples(&re), MeanStderr::from_samples(&im));
        DeltaMoments {
            mean_sq: MeanStderr::from_samples(&sq),
            mean_re: mr.mean,
            mean_im: mi.mean,
            mean_stderr: mr.stderr.hypot(mi.stderr),
        }
    }

    /// `|E Δ|²` less the sampling inflation `s.e.²`, floored at zero.
    pub fn bias_sq(&self) -> f64 {
        (self.mean_re.powi(2) + self.mean_im.powi(2) - self.mean_stderr.powi(2)).max(0.0)
    }

    /// Whether `|E Δ|` exceeds four standard errors.
    pub fn bias_significant(&self) -> bool {
        self.mean_re.hypot(self.mean_im) > 4.0 * self.mean_stderr
    }
}

/// Replicate values of `Δ_n(t)` and their moments.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaEstimate {
    pub t: f64,
    pub n: usize,
    pub per_replicate: Vec<Complex64>,
    pub moments: DeltaMoments,
    pub target_cf: f64,
}

impl DeltaEstimate {
    pub fn from_replicates(t: f64, n: usize, target_cf: f64, per_replicate: Vec<Complex64>) -> Self {
        DeltaEstimate {
            t,
            n,
            moments: DeltaMoments::from_replicates(&per_replicate),
            per_replicate,
            target_cf,
        }
    }

    pub fn mean_sq(&self) -> MeanStderr {
        self.moments.mean_sq
    }
}

/// Monte-Carlo `E|Δ_n(t)|²` for every `n` in `n_grid` and `t` in `t_grid`
/// from `replicates` independent paths. Indexed `[n][t]`.
pub fn delta_monte_carlo(
    spec: &SequenceSpec,
    n_grid: &[usize],
    t_grid: &[f64],
    replicates: usize,
    master_seed: u64,
) -> Result<Vec<Vec<DeltaEstimate>>> {
    let n_max = *n_grid
        .last()
        .ok_or_else(|| Error::InvalidArgument("empty n grid".into()))?;
    let sampler = StationarySampler::new(&spec.model(), n_max, SamplerKind::Auto)?;
    let builder = GSeriesBuilder::new(spec, n_max)?;
    let per: Vec<Result<Vec<Vec<Complex64>>>> = (0..replicates as u64)
        .into_par_iter()
        .map(|rep| {
            let mut src = NormalSource::new(master_seed, rep);
            let mut x = vec![0.0; n_max];
            sampler.sample_with(&mut src, &mut x);
            let g = builder.values_from(&x)?;
            t_grid
                .iter()
                .map(|&t| delta_prefixes(&g, t, gaussian_cf(t), n_grid))
                .collect()
        })
        .collect();
    let per: Vec<Vec<Vec<Complex64>>> = per.into_iter().collect::<Result<_>>()?;
    Ok(n_grid
        .iter()
        .enumerate()
        .map(|(ni, &n)| {
            t_grid
                .iter()
                .enumerate()
                .map(|(ti, &t)| {
                    let vals = per.iter().map(|r| r[ti][ni]).collect();
                    DeltaEstimate::from_replicates(t, n, gaussian_cf(t), vals)
                })
                .collect()
        })
        .collect())
}

/// Largest `n` for which the exact Gaussian formula sums every pair.
pub const EXACT_DELTA_MAX: usize = 1 << 12;
const BLOCK_RATIO: f64 = 1.01;
const BLOCK_SINGLETONS: usize = 256;

/// `E|Δ_n(t)|² = (1/log² n) Σ_{k,l} e^{-t²}(e^{E(G_kG_l)t²} - 1)/(kl)` for a
/// jointly Gaussian unit-variance sequence. Exact for `n ≤ 2^12`; above that the
/// indices are grouped into geometric blocks with ratio 1.01 and each block is
/// represented by one index.
pub fn exact_gaussian_delta_sq(spec: &SequenceSpec, n: usize, t: f64) -> Result<f64> {
    if !spec.is_gaussian() {
        return Err(Error::NonGaussian);
    }
    if n < 2 {
        return Err(Error::InvalidArgument("Δ_n needs n ≥ 2".into()));
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    let profile = match spec {
        SequenceSpec::FbmScaled { .. } => None,
        _ => Some(spec.variance_profile(n)),
    };
    let cov = |k: usize, l: usize| match (spec, &profile) {
        (SequenceSpec::FbmScaled { hurst }, _) => fbm_scaled_covariance(*hurst, k, l),
        (_, Some(p)) => p.correlation(k, l),
        _ => unreachable!(),
    };
    let t2 = t * t;
    let blocks: Vec<(usize, f64)> = if n <= EXACT_DELTA_MAX {
        (1..=n).map(|k| (k, 1.0 / k as f64)).collect()
    } else {
        log_blocks(n)
    };
    let rows: Vec<f64> = blocks
        .par_iter()
        .enumerate()
        .map(|(a, &(k, wk))| {
            let mut s = CompensatedSum::new();
            s.add(wk * wk * t2.exp_m1());
            for &(l, wl) in &blocks[a + 1..] {
                s.add(2.0 * wk * wl * (cov(k, l) * t2).exp_m1());
            }
            s.value()
        })
        .collect();
    let l = (n as f64).ln();
    Ok((-t2).exp() * pairwise_sum(&rows) / (l * l))
}

/// Representative index and total weight `Σ 1/k` of geometric blocks covering `1..=n`.
fn log_blocks(n: usize) -> Vec<(usize, f64)> {
    let mut out = Vec::new();
    let mut start = 1usize;
    while start <= n {
        let end = if start <= BLOCK_SINGLETONS {
            start
        } else {
            (((start as f64) * BLOCK_RATIO).ceil() as usize).min(n)
        };
        let w: f64 = (start..=end).map(|k| 1.0 / k as f64).sum();
        let rep = ((start as f64) * (end as f64)).sqrt().round() as usize;
        out.push((rep.clamp(start, end), w));
        start = end + 1;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Consistent,
    Flagged,
    NotApplicable,
}

/// Decay exponent `β` in `E|Δ_n(t)|² ≈ C (log n)^{-β}` needed to call a row
/// consistent; the same threshold applies to `|E Δ_n(t)|²` when the mean is
/// distinguishable from zero.
pub const IL_BETA_MIN: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IlRow {
    pub t: f64,
    pub mean_sq: Vec<f64>,
    pub stderr: Vec<f64>,
    /// `|E Δ_n(t)|²`, zero for exact rows.
    pub bias_sq: Vec<f64>,
    /// `E|Δ_n(t)|²/(n log n)`.
    pub summand: Vec<f64>,
    /// Trapezoid approximation in `log n` of `Σ_{m≤n} E|Δ_m(t)|²/(m log m)`.
    pub partial_sums: Vec<f64>,
    pub fitted_beta: Option<f64>,
    pub fitted_bias_beta: Option<f64>,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IlReport {
    pub n_grid: Vec<usize>,
    pub rows: Vec<IlRow>,
    /// Supremum over `t` of the partial sums at each `n`.
    pub sup_partial_sums: Vec<f64>,
    pub verdict: Verdict,
}

/// Settings for Monte-Carlo estimation when no exact formula exists.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarlo {
    pub replicates: usize,
    pub master_seed: u64,
}

/// Ibragimov–Lifshits diagnostic: exact for Gaussian sequences, Monte Carlo
/// (requires `mc`) otherwise.
pub fn il_series_diagnostic(
    spec: &SequenceSpec,
    t_grid: &[f64],
    n_grid: &[usize],
    mc: Option<MonteCarlo>,
) -> Result<IlReport> {
    if n_grid.is_empty() || n_grid[0] < 2 || n_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("n grid must be increasing and start at ≥ 2".into()));
    }
    let table: Vec<Vec<DeltaMoments>> = if spec.is_gaussian() {
        t_grid
            .iter()
            .map(|&t| {
                n_grid
                    .iter()
                    .map(|&n| Ok(DeltaMoments::exact(exact_gaussian_delta_sq(spec, n, t)?)))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?
    } else {
        let mc = mc.ok_or_else(|| {
            Error::InvalidArgument("non-Gaussian sequences need Monte-Carlo settings".into())
        })?;
        let est = delta_monte_carlo(spec, n_grid, t_grid, mc.replicates, mc.master_seed)?;
        (0..t_grid.len())
            .map(|ti| est.iter().map(|row| row[ti].moments).collect())
            .collect()
    };
    il_report_from(t_grid, n_grid, &table)
}

/// `β` in `v_n ≈ C (log n)^{-β}` over the positive entries.
fn log_decay(values: &[f64], logn: &[f64]) -> Option<f64> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = values
        .iter()
        .zip(logn)
        .filter(|(v, _)| **v > 0.0)
        .map(|(v, l)| (l.ln(), v.ln()))
        .unzip();
    linear_fit(&xs, &ys).map(|f| -f.slope)
}

/// Builds the report from moment estimates indexed `[t][n]`.
pub fn il_report_from(t_grid: &[f64], n_grid: &[usize], table: &[Vec<DeltaMoments>]) -> Result<IlReport> {
    let logn: Vec<f64> = n_grid.iter().map(|&n| (n as f64).ln()).collect();
    let mut rows = Vec::with_capacity(t_grid.len());
    for (&t, est) in t_grid.iter().zip(table) {
        let mean_sq: Vec<f64> = est.iter().map(|e| e.mean_sq.mean).collect();
        let stderr: Vec<f64> = est.iter().map(|e| e.mean_sq.stderr).collect();
        let bias_sq: Vec<f64> = est.iter().map(|e| e.bias_sq()).collect();
        let summand: Vec<f64> = mean_sq
            .iter()
            .zip(n_grid)
            .zip(&logn)
            .map(|((m, &n), l)| m / (n as f64 * l))
            .collect();
        // Σ_m a_m/(m log m) ≈ ∫ a(x)/log x d(log x).
        let mut partial = Vec::with_capacity(n_grid.len());
        let mut acc = 0.0;
        for i in 0..n_grid.len() {
            if i > 0 {
                let f0 = mean_sq[i - 1] / logn[i - 1];
                let f1 = mean_sq[i] / logn[i];
                acc += 0.5 * (f0 + f1) * (logn[i] - logn[i - 1]);
            }
            partial.push(acc);
        }
        let (beta, bias_beta, verdict) = if mean_sq.iter().all(|m| *m == 0.0) {
            (None, None, Verdict::Consistent)
        } else {
            let beta = log_decay(&mean_sq, &logn);
            let biased = est.last().is_some_and(|e| e.bias_significant());
            let bias_beta = if biased { log_decay(&bias_sq, &logn) } else { None };
            let ok = beta.is_some_and(|b| b >= IL_BETA_MIN) && (!biased || bias_beta.is_some_and(|b| b >= IL_BETA_MIN));
            (beta, bias_beta, if ok { Verdict::Consistent } else { Verdict::Flagged })
        };
        rows.push(IlRow {
            t,
            mean_sq,
            stderr,
            bias_sq,
            summand,
            partial_sums: partial,
            fitted_beta: beta,
            fitted_bias_beta: bias_beta,
            verdict,
        });
    }
    let sup_partial_sums = (0..n_grid.len())
        .map(|i| rows.iter().map(|r| r.partial_sums[i]).fold(0.0, f64::max))
        .collect();
    let verdict = if rows.iter().all(|r| r.verdict == Verdict::Consistent) {
        Verdict::Consistent
    } else {
        Verdict::Flagged
    };
    Ok(IlReport {
        n_grid: n_grid.to_vec(),
        rows,
        sup_partial_sums,
        verdict,
    })
}

/// Minimum fitted exponent for the covariance-decay and contraction-decay conditions.
pub const DECAY_ALPHA_MIN: f64 = 0.05;
/// Minimum fitted `β` in `a_k ≈ C (log k)^{-β}` for the contraction conditions.
pub const LOG_DECAY_BETA_MIN: f64 = 0.1;
/// Largest `n` for which the double-sum conditions are accumulated exactly.
pub const CRITERIA_EXACT_MAX: usize = 1 << 14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub name: String,
    pub fitted_alpha: Option<f64>,
    #[serde(rename = "fitted_C")]
    pub fitted_c: Option<f64>,
    /// Fitted `β` in `a_k ≈ C (log k)^{-β}` where a logarithmic rate applies.
    pub fitted_log_beta: Option<f64>,
    pub partial_sums: Vec<f64>,
    pub verdict: Verdict,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriteriaReport {
    pub n_grid: Vec<usize>,
    pub conditions: Vec<Condition>,
}

/// Smallest `l/k` entering the slope fit; nearer pairs only set `C`.
pub const DECAY_FIT_MIN_RATIO: usize = 16;

/// Fits `|c(k,l)| ≤ C (k/l)^α`: `α` is the least-squares slope over pairs with
/// `l ≥ 16k`, and `C` the supremum of `|c|/(k/l)^α` over all pairs `k ≤ l`.
pub fn fit_covariance_decay(pairs: &[(usize, usize, f64)]) -> Option<(f64, f64)> {
    let pts: Vec<(f64, f64)> = pairs
        .iter()
        .filter(|(k, l, c)| *l >= DECAY_FIT_MIN_RATIO * k && c.abs() > 0.0)
        .map(|(k, l, c)| ((*k as f64 / *l as f64).ln(), c.abs().ln()))
        .collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = pts.iter().copied().unzip();
    let fit = linear_fit(&xs, &ys)?;
    let alpha = fit.slope;
    let c = pairs
        .iter()
        .filter(|(k, l, _)| k <= l)
        .map(|(k, l, c)| c.abs() / (*k as f64 / *l as f64).powf(alpha))
        .fold(0.0, f64::max);
    Some((alpha, c))
}

/// `Σ_{m=2}^{n} (1/(m log³m)) Σ_{k,l≤m} |c(k,l)|/(kl)` at each grid point.
fn double_sum_series<F: Fn(usize, usize) -> f64 + Sync>(c: F, n_grid: &[usize]) -> Vec<f64> {
    let n_max = *n_grid.last().unwrap();
    let mut out = Vec::with_capacity(n_grid.len());
    let mut inner = CompensatedSum::new();
    let mut outer = CompensatedSum::new();
    let mut gi = 0;
    for m in 1..=n_max {
        let row: Vec<f64> = (1..m).map(|k| c(k, m).abs() / (k * m) as f64).collect();
        inner.add(2.0 * pairwise_sum(&row) + c(m, m).abs() / (m * m) as f64);
        if m >= 2 {
            let lm = (m as f64).ln();
            outer.add(inner.value() / (m as f64 * lm * lm * lm));
        }
        while gi < n_grid.len() && n_grid[gi] == m {
            out.push(outer.value());
            gi += 1;
        }
    }
    out
}

/// `Σ_{m=2}^{n} (1/(m log²m)) Σ_{k≤m} a_k/k`, with `a` given at every `k`.
fn single_sum_series(a: &[f64], n_grid: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(n_grid.len());
    let mut inner = CompensatedSum::new();
    let mut outer = CompensatedSum::new();
    let mut gi = 0;
    for m in 1..=a.len() {
        inner.add(a[m - 1] / m as f64);
        if m >= 2 {
            let lm = (m as f64).ln();
            outer.add(inner.value() / (m as f64 * lm * lm));
        }
        while gi < n_grid.len() && n_grid[gi] == m {
            out.push(outer.value());
            gi += 1;
        }
    }
    out
}

/// Fits `a_k ≈ C k^{-α}` and `a_k ≈ C (log k)^{-β}`; returns `(α, C, β)`.
fn fit_decay(ks: &[usize], a: &[f64]) -> (Option<f64>, Option<f64>, Option<f64>) {
    let pts: Vec<(f64, f64, f64)> = ks
        .iter()
        .zip(a)
        .filter(|(k, v)| **k >= 3 && **v > 0.0)
        .map(|(k, v)| ((*k as f64).ln(), (*k as f64).ln().ln(), v.ln()))
        .collect();
    let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let ls: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.2).collect();
    let power = linear_fit(&xs, &ys);
    let logd = linear_fit(&ls, &ys);
    (
        power.map(|f| -f.slope),
        power.map(|f| f.intercept.exp()),
        logd.map(|f| -f.slope),
    )
}

/// Piecewise log-log interpolation of `a` (known on increasing `ks`) to `1..=n`.
fn interpolate_loglog(ks: &[usize], a: &[f64], n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    let mut j = 0;
    for k in 1..=n {
        while j + 1 < ks.len() && ks[j + 1] <= k {
            j += 1;
        }
        if ks[j] == k || j + 1 >= ks.len() || a[j] <= 0.0 || a[j + 1] <= 0.0 {
            out.push(a[j]);
            continue;
        }
        let (x0, x1) = ((ks[j] as f64).ln(), (ks[j + 1] as f64).ln());
        let s = ((k as f64).ln() - x0) / (x1 - x0);
        out.push((a[j].ln() * (1.0 - s) + a[j + 1].ln() * s).exp());
    }
    out
}

fn na(name: &str, note: &str, len: usize) -> Condition {
    Condition {
        name: name.into(),
        fitted_alpha: None,
        fitted_c: None,
        fitted_log_beta: None,
        partial_sums: vec![0.0; len],
        verdict: Verdict::NotApplicable,
        note: note.into(),
    }
}

/// Numerical evidence for the summability conditions, evaluated on `n_grid`
/// (increasing, at most [`CRITERIA_EXACT_MAX`]).
pub fn criteria_diagnostic(spec: &SequenceSpec, n_grid: &[usize]) -> Result<CriteriaReport> {
    if n_grid.is_empty() || n_grid[0] < 2 || n_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("n grid must be increasing and start at ≥ 2".into()));
    }
    let n_max = *n_grid.last().unwrap();
    if n_max > CRITERIA_EXACT_MAX {
        return Err(Error::InvalidArgument(format!(
            "criteria are accumulated exactly up to n = {CRITERIA_EXACT_MAX}"
        )));
    }
    let len = n_grid.len();
    let pair_grid = geometric_grid(n_max, 1.25);
    let covariance_condition = |name: &str, profile: Option<&VarianceProfile>, scale: f64| -> Condition {
        let c = |k: usize, l: usize| -> f64 {
            match (spec, profile) {
                (SequenceSpec::FbmScaled { hurst }, _) => fbm_scaled_covariance(*hurst, k, l),
                (_, Some(p)) => p.correlation(k, l) / scale,
                _ => unreachable!(),
            }
        };
        let pairs: Vec<(usize, usize, f64)> = pair_grid
            .iter()
            .flat_map(|&k| pair_grid.iter().filter(move |&&l| l >= k).map(move |&l| (k, l)))
            .map(|(k, l)| (k, l, c(k, l)))
            .collect();
        let fit = fit_covariance_decay(&pairs);
        let partial = double_sum_series(c, n_grid);
        let verdict = match fit {
            Some((a, _)) if a > DECAY_ALPHA_MIN => Verdict::Consistent,
            _ => Verdict::Flagged,
        };
        Condition {
            name: name.into(),
            fitted_alpha: fit.map(|f| f.0),
            fitted_c: fit.map(|f| f.1),
            fitted_log_beta: None,
            partial_sums: partial,
            verdict,
            note: "fit of |E[G_k G_l]| ≤ C (k/l)^α over pairs k < l on a ratio-1.25 grid".into(),
        }
    };
    let contraction_condition = |name: &str, ks: &[usize], a: &[f64], note: &str| -> Condition {
        let (alpha, c, beta) = fit_decay(ks, a);
        let full = interpolate_loglog(ks, a, n_max);
        let partial = single_sum_series(&full, n_grid);
        let ok = alpha.is_some_and(|x| x > DECAY_ALPHA_MIN) || beta.is_some_and(|b| b > LOG_DECAY_BETA_MIN);
        Condition {
            name: name.into(),
            fitted_alpha: alpha,
            fitted_c: c,
            fitted_log_beta: beta,
            partial_sums: partial,
            verdict: if ok { Verdict::Consistent } else { Verdict::Flagged },
            note: note.into(),
        }
    };
    let conditions = match spec {
        SequenceSpec::FbmScaled { .. } => vec![
            Condition {
                name: "A1".into(),
                fitted_alpha: None,
                fitted_c: None,
                fitted_log_beta: None,
                partial_sums: vec![0.0; len],
                verdict: Verdict::Consistent,
                note: "D²G vanishes for a first-chaos sequence".into(),
            },
            covariance_condition("A2", None, 1.0),
        ],
        SequenceSpec::HermiteVariation {
            regime: Regime::Supercritical,
            ..
        } => vec![
            na("A'1", "no Gaussian normalization in the supercritical regime", len),
            na("A'2", "no Gaussian normalization in the supercritical regime", len),
        ],
        SequenceSpec::HermiteVariation { model, q, .. } => {
            let profile = spec.variance_profile(n_max);
            let qf = crate::hermite::factorial(*q);
            let ks: Vec<usize> = pair_grid.clone();
            let mut conds = Vec::new();
            for r in 1..*q {
                let norms: Vec<f64> = ks
                    .iter()
                    .map(|&k| {
                        contraction_norm_sq(model, *q, r, k, ContractionMethod::Trace).map(|v| v.value.max(0.0).sqrt())
                    })
                    .collect::<Result<_>>()?;
                conds.push(contraction_condition(
                    &format!("A'1(r={r})"),
                    &ks,
                    &norms,
                    "‖f_k ⊗_r f_k‖ exact on a ratio-1.25 grid, log-log interpolated between grid points",
                ));
            }
            conds.push(covariance_condition("A'2", Some(&profile), qf));
            conds
        }
        SequenceSpec::GeneralF { .. } => {
            let ks: Vec<usize> = pair_grid.clone();
            let bounds: Vec<f64> = ks
                .iter()
                .map(|&k| moment_bounds(spec, k, 1.0).map(|b| b.d2g.powf(0.25)))
                .collect::<Result<_>>()?;
            let profile = spec.variance_profile(n_max);
            vec![
                contraction_condition(
                    "A1",
                    &ks,
                    &bounds,
                    "upper bound E[‖D²G_k⊗_1D²G_k‖²] ≤ E f''(N)⁴ (Σ|ρ|)³/(σ_k⁴ k), raised to 1/4",
                ),
                covariance_condition("A2", Some(&profile), 1.0),
            ]
        }
    };
    Ok(CriteriaReport {
        n_grid: n_grid.to_vec(),
        conditions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn harmonic_weights() {
        let m = LogAveragedMeasure::from_values(&[0.3, -0.1], Normalization::Harmonic).unwrap();
        assert_abs_diff_eq!(m.atoms[0].1, 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.atoms[1].1, 2.0 / 3.0, epsilon = 1e-15);
        let m = LogAveragedMeasure::from_values(&[0.3, -0.1], Normalization::LogN).unwrap();
        assert_abs_diff_eq!(m.total_mass(), 1.5 / 2f64.ln(), epsilon = 1e-15);
        assert!(LogAveragedMeasure::from_values(&[0.3], Normalization::LogN).is_err());
    }

    #[test]
    fn ks_single_atom() {
        let m = LogAveragedMeasure::from_values(&[0.0], Normalization::Harmonic).unwrap();
        assert_abs_diff_eq!(ks_distance(&m, &Target::StdNormal).unwrap(), 0.5, epsilon = 1e-15);
        assert_eq!(ks_distance(&m, &Target::from_measure(&m)).unwrap(), 0.0);
        let l = LogAveragedMeasure::from_values(&[0.0, 1.0], Normalization::LogN).unwrap();
        assert!(ks_distance(&l, &Target::StdNormal).is_err());
    }

    #[test]
    fn delta_at_zero_frequency() {
        let d = delta_stat(&[0.5, -1.0, 2.0], 0.0, 1.0).unwrap();
        assert_eq!(d, Complex64::new(0.0, 0.0));
        let p = delta_prefixes(&[0.5, -1.0, 2.0], 1.3, gaussian_cf(1.3), &[2, 3]).unwrap();
        assert_abs_diff_eq!(p[1].re, delta_stat(&[0.5, -1.0, 2.0], 1.3, gaussian_cf(1.3)).unwrap().re, epsilon = 1e-15);
    }

    #[test]
    fn exact_delta_iid_small() {
        let spec = SequenceSpec::fbm_scaled(0.5).unwrap();
        let t: f64 = 1.0;
        let n = 4;
        let mut want = 0.0;
        for k in 1..=n {
            for l in 1..=n {
                let c = ((k.min(l) as f64) / (k.max(l) as f64)).sqrt();
                want += (-t * t).exp() * ((c * t * t).exp() - 1.0) / (k * l) as f64;
            }
        }
        want /= (n as f64).ln().powi(2);
        assert_abs_diff_eq!(exact_gaussian_delta_sq(&spec, n, t).unwrap(), want, epsilon = 1e-14);
        let sub = SequenceSpec::hermite_variation(crate::covariance::CovarianceModel::Iid, 2, Regime::Subcritical).unwrap();
        assert!(matches!(exact_gaussian_delta_sq(&sub, 8, 1.0), Err(Error::NonGaussian)));
    }

    #[test]
    fn block_approximation_is_close() {
        let spec = SequenceSpec::fbm_scaled(0.7).unwrap();
        let n = EXACT_DELTA_MAX;
        let exact = exact_gaussian_delta_sq(&spec, n, 1.0).unwrap();
        let blocks = log_blocks(n);
        let total: f64 = blocks.iter().map(|b| b.1).sum();
        assert_abs_diff_eq!(total, harmonic_number(n), epsilon = 1e-12);
        let approx: f64 = {
            let t2: f64 = 1.0;
            let mut s = 0.0;
            for &(k, wk) in &blocks {
                for &(l, wl) in &blocks {
                    s += wk * wl * (fbm_scaled_covariance(0.7, k, l) * t2).exp_m1();
                }
            }
            (-t2).exp() * s / (n as f64).ln().powi(2)
        };
        assert!((approx - exact).abs() < 1e-3 * exact);
    }
}
