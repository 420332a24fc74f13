//! Normalized functional sequences `G_1..G_n` built from one path, with exact
//! normalizations and cross-covariances, and the self-similar sequence `Z_n`.
//!
//! Indexing: a path `X_1..X_n` is stored 0-based, and on an fBm grid the
//! increment `B_{k+1} - B_k` plays the role of `X_{k+1}`. `V_k` is the partial
//! sum of the first `k` terms, and every Gaussian-limit `G_k` is `V_k / √E[V_k²]`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::covariance::{rho_power_sum, CovarianceModel, TailSum};
use crate::hermite::{factorial, hermite_unchecked, HermiteExpansion, TestFunction};
use crate::numerics::CompensatedSum;
use crate::sim::{FbmGrid, GaussianPath};
use crate::{Error, Result};

/// Tolerance used when comparing `H` with the critical value `1 - 1/(2q)`.
pub const REGIME_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Subcritical,
    Critical,
    Supercritical,
}

/// Breuer–Major regime of `H_q(X)` partial sums under `model`.
pub fn classify_regime(model: &CovarianceModel, q: u32) -> Regime {
    match model.hurst() {
        Some(h) => {
            let crit = 1.0 - 1.0 / (2.0 * q as f64);
            if (h - crit).abs() <= REGIME_TOL {
                Regime::Critical
            } else if h < crit {
                Regime::Subcritical
            } else {
                Regime::Supercritical
            }
        }
        None => Regime::Subcritical,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpecRepr", into = "SpecRepr")]
pub enum SequenceSpec {
    /// `G_k = B^H_k / k^H`.
    FbmScaled { hurst: f64 },
    /// Partial sums of `H_q(X_k)`.
    HermiteVariation {
        model: CovarianceModel,
        q: u32,
        regime: Regime,
    },
    /// Partial sums of `f(X_k) - E f(N)`.
    GeneralF {
        model: CovarianceModel,
        f: TestFunction,
        expansion: HermiteExpansion,
    },
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
enum SpecRepr {
    FbmScaled {
        #[serde(rename = "H")]
        hurst: f64,
    },
    HermiteVariation {
        model: CovarianceModel,
        q: u32,
        regime: Regime,
    },
    GeneralF {
        model: CovarianceModel,
        f: TestFunction,
        qmax: u32,
    },
}

impl TryFrom<SpecRepr> for SequenceSpec {
    type Error = Error;

    fn try_from(r: SpecRepr) -> Result<Self> {
        match r {
            SpecRepr::FbmScaled { hurst } => SequenceSpec::fbm_scaled(hurst),
            SpecRepr::HermiteVariation { model, q, regime } => {
                SequenceSpec::hermite_variation(model, q, regime)
            }
            SpecRepr::GeneralF { model, f, qmax } => SequenceSpec::general_f(model, f, qmax),
        }
    }
}

impl From<SequenceSpec> for SpecRepr {
    fn from(s: SequenceSpec) -> Self {
        match s {
            SequenceSpec::FbmScaled { hurst } => SpecRepr::FbmScaled { hurst },
            SequenceSpec::HermiteVariation { model, q, regime } => {
                SpecRepr::HermiteVariation { model, q, regime }
            }
            SequenceSpec::GeneralF { model, f, expansion } => SpecRepr::GeneralF {
                model,
                f,
                qmax: expansion.qmax,
            },
        }
    }
}

impl SequenceSpec {
    pub fn fbm_scaled(hurst: f64) -> Result<Self> {
        CovarianceModel::fgn(hurst)?;
        Ok(SequenceSpec::FbmScaled { hurst })
    }

    /// Validates that `regime` is the one implied by `(model, q)` and that the
    /// limiting variance `Σ_r ρ(r)^q` is not degenerate.
    pub fn hermite_variation(model: CovarianceModel, q: u32, regime: Regime) -> Result<Self> {
        if q == 0 {
            return Err(Error::InvalidArgument("Hermite order must be ≥ 1".into()));
        }
        if q == 1 && model.hurst().is_some() {
            return Err(Error::InvalidArgument(
                "first-order variation of fGn is the fbm_scaled sequence".into(),
            ));
        }
        let actual = classify_regime(&model, q);
        if actual != regime {
            return Err(Error::RegimeMismatch(format!(
                "{model} with q = {q} is {actual:?}, not {regime:?}"
            )));
        }
        if regime == Regime::Subcritical {
            let s = rho_power_sum(&model, q)?;
            if s.upper() <= 1e-12 {
                return Err(Error::InvalidModel(format!(
                    "Σ ρ(r)^{q} = {:.3e} is not positive",
                    s.partial
                )));
            }
        }
        Ok(SequenceSpec::HermiteVariation { model, q, regime })
    }

    pub fn general_f(model: CovarianceModel, f: TestFunction, qmax: u32) -> Result<Self> {
        if !model.is_power_summable(1.0) {
            return Err(Error::Divergent(format!("Σ|ρ(r)| diverges for {model}")));
        }
        let expansion = HermiteExpansion::of(f, qmax)?;
        if expansion.rank.is_none() {
            crate::hermite::hermite_rank(&expansion, crate::hermite::DEFAULT_RANK_TOL)?;
        }
        Ok(SequenceSpec::GeneralF { model, f, expansion })
    }

    pub fn model(&self) -> CovarianceModel {
        match self {
            SequenceSpec::FbmScaled { hurst } => CovarianceModel::Fgn { hurst: *hurst },
            SequenceSpec::HermiteVariation { model, .. } | SequenceSpec::GeneralF { model, .. } => {
                model.clone()
            }
        }
    }

    /// Whether every `G_k` is Gaussian (first-chaos sequences).
    pub fn is_gaussian(&self) -> bool {
        match self {
            SequenceSpec::FbmScaled { .. } => true,
            SequenceSpec::HermiteVariation { q, .. } => *q == 1,
            SequenceSpec::GeneralF { .. } => false,
        }
    }

    /// Whether `G_n` has a standard normal limit.
    pub fn has_gaussian_limit(&self) -> bool {
        !matches!(
            self,
            SequenceSpec::HermiteVariation {
                regime: Regime::Supercritical,
                ..
            }
        )
    }

    /// Stationary covariance `κ(d) = Cov(g(X_1), g(X_{1+d}))` of the summands.
    pub fn kappa(&self, n: usize) -> Vec<f64> {
        let model = self.model();
        let rho = model.rho_table(n);
        match self {
            SequenceSpec::FbmScaled { .. } => rho,
            SequenceSpec::HermiteVariation { q, .. } => {
                let qf = factorial(*q);
                rho.iter().map(|r| qf * r.powi(*q as i32)).collect()
            }
            SequenceSpec::GeneralF { expansion, .. } => {
                let weights: Vec<f64> = (1..=expansion.qmax).map(|q| expansion.chaos_variance(q)).collect();
                rho.iter()
                    .map(|&r| {
                        let mut s = CompensatedSum::new();
                        let mut p = 1.0;
                        for w in &weights {
                            p *= r;
                            s.add(w * p);
                        }
                        s.value()
                    })
                    .collect()
            }
        }
    }

    pub fn variance_profile(&self, n: usize) -> VarianceProfile {
        VarianceProfile::new(self.kappa(n))
    }

    /// Exact `E[G_k G_l]`, computed in `O(k + l)`.
    pub fn cross_covariance(&self, k: usize, l: usize) -> Result<f64> {
        if k == 0 || l == 0 {
            return Err(Error::InvalidArgument("indices start at 1".into()));
        }
        if let SequenceSpec::FbmScaled { hurst } = self {
            return Ok(fbm_scaled_covariance(*hurst, k, l));
        }
        Ok(self.variance_profile(k.max(l)).correlation(k, l))
    }

    /// `q!·Σ_r ρ(r)^q` (or its analogue summed over chaoses), with the
    /// closed form `2q!(H(2H-1))^q` in the critical fGn case.
    pub fn sigma_limit(&self) -> Result<TailSum> {
        match self {
            SequenceSpec::FbmScaled { .. } => Err(Error::InvalidArgument(
                "fbm_scaled sequences are normalized exactly; no σ limit".into(),
            )),
            SequenceSpec::HermiteVariation { model, q, .. } => sigma_limit(model, *q),
            SequenceSpec::GeneralF { model, expansion, .. } => {
                let mut value = CompensatedSum::new();
                let mut bound = 0.0;
                for q in 1..=expansion.qmax {
                    let w = expansion.chaos_variance(q);
                    if w == 0.0 {
                        continue;
                    }
                    let s = rho_power_sum(model, q)?;
                    value.add(w * s.partial);
                    bound += w * s.remainder_bound;
                }
                // Each omitted chaos contributes c_q² q! Σρ^q ≤ c_q² q! Σ|ρ|.
                let abs_sum = crate::covariance::abs_rho_power_tail(model, 1, 0)?;
                bound += expansion.tail_bound * (1.0 + abs_sum.upper());
                Ok(TailSum {
                    partial: value.value(),
                    remainder_bound: bound,
                    cutoff: abs_sum.cutoff,
                })
            }
        }
    }
}

/// `E[B_k B_l]/(k^H l^H)`.
pub fn fbm_scaled_covariance(hurst: f64, k: usize, l: usize) -> f64 {
    let a = 2.0 * hurst;
    let (k, l) = (k as f64, l as f64);
    0.5 * (k.powf(a) + l.powf(a) - (k - l).abs().powf(a)) / (k * l).powf(hurst)
}

/// Second moments `P_m = Σ_{i,j≤m} κ(i-j)` of partial sums of a stationary
/// sequence, for `m = 0..=n`.
#[derive(Debug, Clone)]
pub struct VarianceProfile {
    kappa: Vec<f64>,
    p: Vec<f64>,
}

impl VarianceProfile {
    pub fn new(kappa: Vec<f64>) -> Self {
        let n = kappa.len();
        let mut p = Vec::with_capacity(n + 1);
        p.push(0.0);
        let mut pm = CompensatedSum::new();
        let mut lag_sum = CompensatedSum::new();
        for m in 1..=n {
            // P_m = P_{m-1} + κ(0) + 2 Σ_{d=1}^{m-1} κ(d)
            if m >= 2 {
                lag_sum.add(kappa[m - 1]);
            }
            pm.add(kappa[0]);
            pm.add(2.0 * lag_sum.value());
            p.push(pm.value());
        }
        VarianceProfile { kappa, p }
    }

    pub fn len(&self) -> usize {
        self.kappa.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kappa.is_empty()
    }

    pub fn kappa(&self) -> &[f64] {
        &self.kappa
    }

    /// `E[V_m²]`.
    pub fn second_moment(&self, m: usize) -> f64 {
        self.p[m]
    }

    /// `E[V_k V_l] = Σ_{i≤k, j≤l} κ(i-j) = ½(P_k + P_l - P_{|l-k|})`.
    pub fn cross(&self, k: usize, l: usize) -> f64 {
        0.5 * (self.p[k] + self.p[l] - self.p[k.abs_diff(l)])
    }

    pub fn correlation(&self, k: usize, l: usize) -> f64 {
        if k == l {
            return 1.0;
        }
        self.cross(k, l) / (self.p[k] * self.p[l]).sqrt()
    }
}

/// `Σ_{i≤k, j≤l} κ(i-j)` by counting how often each lag `d = i - j` occurs.
pub fn lag_count_double_sum<F: Fn(i64) -> f64>(kappa: F, k: usize, l: usize) -> f64 {
    let (k, l) = (k as i64, l as i64);
    let mut s = CompensatedSum::new();
    for d in (1 - l)..=(k - 1) {
        // i ranges over [max(1, 1+d), min(k, l+d)]
        let count = (k.min(l + d) - 1.max(1 + d) + 1).max(0);
        if count > 0 {
            s.add(count as f64 * kappa(d));
        }
    }
    s.value()
}

/// `σ_n² = E[V_n²]/n` (or `/(n log n)` in the critical regime) for
/// `V_n = Σ H_q(X_k)`.
pub fn sigma_n_squared(model: &CovarianceModel, q: u32, n: usize, regime: Regime) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be ≥ 1".into()));
    }
    if classify_regime(model, q) != regime {
        return Err(Error::RegimeMismatch(format!("{model}, q = {q} is not {regime:?}")));
    }
    let spec = SequenceSpec::HermiteVariation {
        model: model.clone(),
        q,
        regime,
    };
    let p = spec.variance_profile(n).second_moment(n);
    match regime {
        Regime::Critical => {
            if n < 2 {
                return Err(Error::InvalidArgument("critical normalization needs n ≥ 2".into()));
            }
            Ok(p / (n as f64 * (n as f64).ln()))
        }
        _ => Ok(p / n as f64),
    }
}

/// Limit of [`sigma_n_squared`].
pub fn sigma_limit(model: &CovarianceModel, q: u32) -> Result<TailSum> {
    match classify_regime(model, q) {
        Regime::Supercritical => Err(Error::NoGaussianNormalizer),
        Regime::Critical => {
            let h = model.hurst().expect("critical regime needs fGn");
            let v = 2.0 * factorial(q) * (h * (2.0 * h - 1.0)).powi(q as i32);
            Ok(TailSum {
                partial: v,
                remainder_bound: 0.0,
                cutoff: 0,
            })
        }
        Regime::Subcritical => {
            let s = rho_power_sum(model, q)?;
            let qf = factorial(q);
            Ok(TailSum {
                partial: qf * s.partial,
                remainder_bound: qf * s.remainder_bound,
                cutoff: s.cutoff,
            })
        }
    }
}

/// Realized `G_1..G_n` together with the normalizers used.
#[derive(Debug, Clone, PartialEq)]
pub struct GSeries {
    pub spec: SequenceSpec,
    pub n: usize,
    pub values: Vec<f64>,
    /// `σ_k`, so that `G_k = V_k/(σ_k √k)` (or `√(k log k)` when critical,
    /// with `σ_1 = ∞`); for fbm_scaled, `σ_k = k^H` and `G_k = B_k/σ_k`.
    pub sigmas: Vec<f64>,
    pub master_seed: Option<u64>,
    pub replicate_id: Option<u64>,
}

impl GSeries {
    /// CSV with columns `k,G_k,sigma_k`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "k,G_k,sigma_k")?;
        for (k, (g, s)) in self.values.iter().zip(&self.sigmas).enumerate() {
            writeln!(w, "{},{g:?},{s:?}", k + 1)?;
        }
        Ok(())
    }
}

/// Builds many [`GSeries`] of one spec and length, sharing the normalization.
pub struct GSeriesBuilder {
    spec: SequenceSpec,
    n: usize,
    norms: Vec<f64>,
    sigmas: Vec<f64>,
    centre: f64,
}

impl GSeriesBuilder {
    pub fn new(spec: &SequenceSpec, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("n must be ≥ 1".into()));
        }
        let (norms, sigmas, centre) = match spec {
            SequenceSpec::FbmScaled { hurst } => {
                let s: Vec<f64> = (1..=n).map(|k| (k as f64).powf(*hurst)).collect();
                (s.clone(), s, 0.0)
            }
            _ => {
                let profile = spec.variance_profile(n);
                let critical = matches!(
                    spec,
                    SequenceSpec::HermiteVariation {
                        regime: Regime::Critical,
                        ..
                    }
                );
                let mut norms = Vec::with_capacity(n);
                let mut sigmas = Vec::with_capacity(n);
                for k in 1..=n {
                    let p = profile.second_moment(k);
                    if !(p > 0.0) {
                        return Err(Error::ConstantFunction);
                    }
                    norms.push(p.sqrt());
                    let kf = k as f64;
                    let scale = if critical { kf * kf.ln() } else { kf };
                    sigmas.push((p / scale).sqrt());
                }
                let centre = match spec {
                    SequenceSpec::GeneralF { expansion, .. } => expansion.coeffs[0],
                    _ => 0.0,
                };
                (norms, sigmas, centre)
            }
        };
        Ok(GSeriesBuilder {
            spec: spec.clone(),
            n,
            norms,
            sigmas,
            centre,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn spec(&self) -> &SequenceSpec {
        &self.spec
    }

    /// `G_1..G_n` from the first `n` values of the stationary sequence `x`.
    pub fn values_from(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() < self.n {
            return Err(Error::InvalidArgument(format!(
                "path of length {} is shorter than n = {}",
                x.len(),
                self.n
            )));
        }
        let mut out = Vec::with_capacity(self.n);
        let mut v = 0.0;
        for (k, &xk) in x[..self.n].iter().enumerate() {
            v += match &self.spec {
                SequenceSpec::FbmScaled { .. } => xk,
                SequenceSpec::HermiteVariation { q, .. } => hermite_unchecked(*q, xk),
                SequenceSpec::GeneralF { f, .. } => f.eval(xk) - self.centre,
            };
            out.push(v / self.norms[k]);
        }
        Ok(out)
    }

    pub fn build(&self, path: &GaussianPath) -> Result<GSeries> {
        if path.model != self.spec.model() {
            return Err(Error::InvalidArgument(format!(
                "path model {} does not match spec model {}",
                path.model,
                self.spec.model()
            )));
        }
        Ok(GSeries {
            spec: self.spec.clone(),
            n: self.n,
            values: self.values_from(&path.values)?,
            sigmas: self.sigmas.clone(),
            master_seed: Some(path.master_seed),
            replicate_id: Some(path.replicate_id),
        })
    }
}

pub fn build_gseries(path: &GaussianPath, spec: &SequenceSpec, n: usize) -> Result<GSeries> {
    GSeriesBuilder::new(spec, n)?.build(path)
}

/// `Z_n = n^{q(1-H)-1} Σ_{k<n} H_q(n^H (B_{(k+1)/n} - B_{k/n}))` for `n = 2^J`.
pub fn zn_dyadic(grid: &FbmGrid, q: u32, levels: &[u32]) -> Result<Vec<f64>> {
    let h = grid.hurst;
    if h <= 1.0 - 1.0 / (2.0 * q as f64) + REGIME_TOL {
        return Err(Error::RegimeMismatch(format!(
            "Z_n needs H > 1 - 1/(2q); got H = {h}, q = {q}"
        )));
    }
    levels
        .iter()
        .map(|&j| {
            let n = 1usize
                .checked_shl(j)
                .filter(|n| *n <= grid.n_fine)
                .ok_or_else(|| Error::InvalidArgument(format!("level {j} finer than the grid")))?;
            let x = grid.unit_increments(n)?;
            let s: f64 = x.iter().map(|&v| hermite_unchecked(q, v)).sum();
            Ok((n as f64).powf(q as f64 * (1.0 - h) - 1.0) * s)
        })
        .collect()
}

/// `E[Z_n²] = n^{2q(1-H)-2} q! Σ_{|r|<n} (n - |r|) ρ(r)^q`.
pub fn zn_second_moment(hurst: f64, q: u32, n: usize) -> Result<f64> {
    zn_cross_moment(hurst, q, n, n)
}

/// `E[Z_n Z_m]` for dyadic `n, m` (one must divide the other), in `O(max)`.
pub fn zn_cross_moment(hurst: f64, q: u32, n: usize, m: usize) -> Result<f64> {
    let (n, m) = (n.min(m), n.max(m));
    if n == 0 || m % n != 0 {
        return Err(Error::InvalidArgument(format!("{n} does not divide {m}")));
    }
    let s = (m / n) as i64;
    let a = 2.0 * hurst;
    let pw = |x: i64| (x.unsigned_abs() as f64).powf(a);
    // Covariance of unit-scaled increments k (coarse) and l (fine) depends on
    // d = l - k·s; in units of m^{-2H} it is ½(|s-d|^a + |d+1|^a - |s-d-1|^a - |d|^a).
    let scale = (s as f64).powf(-hurst);
    let (ni, mi) = (n as i64, m as i64);
    let mut total = CompensatedSum::new();
    for d in (-(ni - 1) * s)..mi {
        // k with 0 ≤ k < n and 0 ≤ d + k s ≤ m-1
        let lo = (-d).div_euclid(s) + if (-d).rem_euclid(s) != 0 { 1 } else { 0 };
        let hi = (mi - 1 - d).div_euclid(s);
        let count = (hi.min(ni - 1) - lo.max(0) + 1).max(0);
        if count == 0 {
            continue;
        }
        let c = 0.5 * (pw(s - d) + pw(d + 1) - pw(s - d - 1) - pw(d)) * scale;
        total.add(count as f64 * c.powi(q as i32));
    }
    let e = q as f64 * (1.0 - hurst) - 1.0;
    Ok((n as f64).powf(e) * (m as f64).powf(e) * factorial(q) * total.value())
}

/// `lim E[Z_n²] = q! (H(2H-1))^q · 2/((1-a)(2-a))` with `a = (2-2H)q`.
pub fn zn_limit_second_moment(hurst: f64, q: u32) -> f64 {
    let a = (2.0 - 2.0 * hurst) * q as f64;
    factorial(q) * (hurst * (2.0 * hurst - 1.0)).powi(q as i32) * 2.0 / ((1.0 - a) * (2.0 - a))
}

/// The sequence `k ↦ Z_{2^⌊log₂ k⌋}`, `k = 1..=n`, from one grid.
pub fn zn_dyadic_series(grid: &FbmGrid, q: u32, n: usize) -> Result<Vec<f64>> {
    if n == 0 || n > grid.n_fine {
        return Err(Error::InvalidArgument(format!("n must be in 1..={}", grid.n_fine)));
    }
    let top = usize::BITS - 1 - n.leading_zeros();
    let levels: Vec<u32> = (0..=top).collect();
    let z = zn_dyadic(grid, q, &levels)?;
    Ok((1..=n)
        .map(|k| z[(usize::BITS - 1 - k.leading_zeros()) as usize])
        .collect())
}
