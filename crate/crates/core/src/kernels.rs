//! Discrete chaos kernels `f_n = (1/√E[V_n²]) Σ_{k≤n} ε_k^{⊗q}`, their
//! contractions and inner products, plus small dense kernels for oracles.
//!
//! The basis vectors `ε_k` are not orthonormal: `⟨ε_k, ε_l⟩ = ρ(k-l)`.
//! Contractions therefore pair indices through the Gram matrix.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::CovarianceModel;
use crate::hermite::factorial;
use crate::numerics::{pairwise_sum, CompensatedSum};
use crate::sequences::{classify_regime, Regime, SequenceSpec, VarianceProfile};
use crate::{Error, Result};

/// Largest number of coefficients a dense kernel may hold.
pub const DENSE_MAX: usize = 1_000_000;
pub const BRUTE_FORCE_MAX_N: usize = 12;
pub const LAG_SUM_MAX_N: usize = 1024;

/// A (not necessarily symmetric) tensor in `H^{⊗order}` expanded on
/// `ε_1..ε_dim`, row-major in its indices.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseKernel {
    order: usize,
    dim: usize,
    coeffs: Vec<f64>,
    gram: Vec<f64>,
}

fn checked_size(dim: usize, order: usize) -> Result<usize> {
    let mut size: usize = 1;
    for _ in 0..order {
        size = size
            .checked_mul(dim)
            .filter(|s| *s <= DENSE_MAX)
            .ok_or_else(|| Error::InvalidArgument(format!("dim^order exceeds {DENSE_MAX}")))?;
    }
    Ok(size)
}

impl DenseKernel {
    /// Symmetrizes `coeffs` over all index permutations.
    pub fn symmetric(model: &CovarianceModel, order: usize, dim: usize, coeffs: Vec<f64>) -> Result<Self> {
        let size = checked_size(dim, order)?;
        if coeffs.len() != size {
            return Err(Error::InvalidArgument(format!(
                "expected {size} coefficients, got {}",
                coeffs.len()
            )));
        }
        let rho = model.rho_table(dim);
        let gram = (0..dim * dim).map(|ij| rho[(ij / dim).abs_diff(ij % dim)]).collect();
        let mut k = DenseKernel {
            order,
            dim,
            coeffs,
            gram,
        };
        k.symmetrize();
        Ok(k)
    }

    /// `Σ_{k≤n} ε_k^{⊗q}`.
    pub fn diagonal(model: &CovarianceModel, q: usize, n: usize) -> Result<Self> {
        let size = checked_size(n, q)?;
        let mut coeffs = vec![0.0; size];
        let stride: usize = (0..q).map(|a| n.pow(a as u32)).sum();
        for k in 0..n {
            coeffs[k * stride] = 1.0;
        }
        DenseKernel::symmetric(model, q, n, coeffs)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn scale(&mut self, s: f64) {
        for c in &mut self.coeffs {
            *c *= s;
        }
    }

    fn symmetrize(&mut self) {
        if self.order < 2 {
            return;
        }
        let perms = permutations(self.order);
        let mut out = vec![0.0; self.coeffs.len()];
        let mut idx = vec![0usize; self.order];
        for (flat, o) in out.iter_mut().enumerate() {
            unflatten(flat, self.dim, &mut idx);
            let mut s = 0.0;
            for p in &perms {
                let mut f = 0;
                for &a in p {
                    f = f * self.dim + idx[a];
                }
                s += self.coeffs[f];
            }
            *o = s / perms.len() as f64;
        }
        self.coeffs = out;
    }

    /// Applies the Gram matrix along axis `axis` of a tensor with the given order.
    fn apply_gram(&self, data: &[f64], order: usize, axis: usize) -> Vec<f64> {
        let d = self.dim;
        let inner = d.pow((order - axis - 1) as u32);
        let outer = d.pow(axis as u32);
        let mut out = vec![0.0; data.len()];
        for o in 0..outer {
            for i in 0..d {
                for j in 0..d {
                    let g = self.gram[i * d + j];
                    if g == 0.0 {
                        continue;
                    }
                    let dst = (o * d + i) * inner;
                    let src = (o * d + j) * inner;
                    for t in 0..inner {
                        out[dst + t] += g * data[src + t];
                    }
                }
            }
        }
        out
    }

    /// `⟨f, g⟩` in `H^{⊗order}`.
    pub fn inner(&self, other: &DenseKernel) -> Result<f64> {
        if self.order != other.order || self.dim != other.dim || self.gram != other.gram {
            return Err(Error::InvalidArgument("kernels live in different spaces".into()));
        }
        let mut g = other.coeffs.clone();
        for axis in 0..self.order {
            g = self.apply_gram(&g, self.order, axis);
        }
        Ok(self.coeffs.iter().zip(&g).map(|(a, b)| a * b).sum())
    }

    pub fn norm_sq(&self) -> f64 {
        self.inner(self).expect("same space")
    }

    /// `f ⊗_r g`: pairs the last `r` indices of `f` with the last `r` of `g`.
    /// `r = 0` is the tensor product; `r = p = q` is the scalar `⟨f, g⟩`
    /// returned as an order-0 kernel.
    pub fn contract(&self, other: &DenseKernel, r: usize) -> Result<DenseKernel> {
        let (p, q) = (self.order, other.order);
        if r > p.min(q) {
            return Err(Error::InvalidArgument(format!("contraction order {r} exceeds min({p}, {q})")));
        }
        if self.dim != other.dim || self.gram != other.gram {
            return Err(Error::InvalidArgument("kernels live in different spaces".into()));
        }
        let out_order = p + q - 2 * r;
        checked_size(self.dim, out_order)?;
        let d = self.dim;
        let paired = d.pow(r as u32);
        let rows_f = d.pow((p - r) as u32);
        let rows_g = d.pow((q - r) as u32);
        let mut g = other.coeffs.clone();
        for axis in (q - r)..q {
            g = self.apply_gram(&g, q, axis);
        }
        let mut coeffs = vec![0.0; rows_f * rows_g];
        for i in 0..rows_f {
            let fi = &self.coeffs[i * paired..(i + 1) * paired];
            for j in 0..rows_g {
                let gj = &g[j * paired..(j + 1) * paired];
                coeffs[i * rows_g + j] = fi.iter().zip(gj).map(|(a, b)| a * b).sum();
            }
        }
        Ok(DenseKernel {
            order: out_order,
            dim: d,
            coeffs,
            gram: self.gram.clone(),
        })
    }
}

fn unflatten(mut flat: usize, dim: usize, idx: &mut [usize]) {
    for slot in idx.iter_mut().rev() {
        *slot = flat % dim;
        flat /= dim;
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// How `‖f_n ⊗_r f_n‖²` is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum ContractionMethod {
    /// Direct quadruple sum, `n ≤ 12`.
    BruteForce,
    /// Exact triple sum over lags with multiplicity counts, `O(n³)`.
    LagSum,
    /// Exact `tr((AB)²)` for the Toeplitz matrices `A = ρ^r`, `B = ρ^{q-r}`, `O(n²)`.
    #[default]
    Trace,
    /// Lag sum restricted to `|a|, |b|, |c| ≤ lag`, with an error bound.
    Truncated { lag: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContractionValue {
    pub value: f64,
    /// Bound on `|value - exact|`; zero for exact methods.
    pub truncation_bound: f64,
}

/// Number of `(k, l, i, j) ∈ [1, n]⁴` with `k - l = a`, `i - j = b`, `k - i = c`.
pub fn lag_multiplicity(n: i64, a: i64, b: i64, c: i64) -> i64 {
    let lo = 1.max(1 + a).max(1 + c).max(1 + c + b);
    let hi = n.min(n + a).min(n + c).min(n + c + b);
    (hi - lo + 1).max(0)
}

/// `‖f_n ⊗_r f_n‖²` for the normalized kernel of `Σ_{k≤n} H_q(X_k)`.
pub fn contraction_norm_sq(
    model: &CovarianceModel,
    q: u32,
    r: u32,
    n: usize,
    method: ContractionMethod,
) -> Result<ContractionValue> {
    if r == 0 || r >= q {
        return Err(Error::InvalidArgument(format!("need 1 ≤ r ≤ q-1, got r = {r}, q = {q}")));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("n must be ≥ 1".into()));
    }
    let rho = model.rho_table(n.max(3 * n - 2));
    let alpha: Vec<f64> = rho.iter().map(|x| x.powi(r as i32)).collect();
    let beta: Vec<f64> = rho.iter().map(|x| x.powi((q - r) as i32)).collect();
    let qf = factorial(q);
    let pn: f64 = {
        let kappa: Vec<f64> = rho[..n].iter().map(|x| qf * x.powi(q as i32)).collect();
        VarianceProfile::new(kappa).second_moment(n)
    };
    let at = |v: &[f64], d: i64| v[d.unsigned_abs() as usize];
    let (raw, bound) = match method {
        ContractionMethod::BruteForce => {
            if n > BRUTE_FORCE_MAX_N {
                return Err(Error::InvalidArgument(format!(
                    "brute force limited to n ≤ {BRUTE_FORCE_MAX_N}"
                )));
            }
            let ni = n as i64;
            let mut s = CompensatedSum::new();
            for i in 0..ni {
                for j in 0..ni {
                    for k in 0..ni {
                        for l in 0..ni {
                            s.add(at(&alpha, k - l) * at(&alpha, i - j) * at(&beta, k - i) * at(&beta, l - j));
                        }
                    }
                }
            }
            (s.value(), 0.0)
        }
        ContractionMethod::LagSum => {
            if n > LAG_SUM_MAX_N {
                return Err(Error::InvalidArgument(format!("lag sum limited to n ≤ {LAG_SUM_MAX_N}")));
            }
            let m = n as i64 - 1;
            (lag_sum(&alpha, &beta, n as i64, m, m), 0.0)
        }
        ContractionMethod::Trace => (trace_form(&alpha, &beta, n), 0.0),
        ContractionMethod::Truncated { lag } => {
            if lag == 0 {
                return Err(Error::InvalidArgument("truncation lag must be ≥ 1".into()));
            }
            let m = n as i64 - 1;
            let l = (lag as i64).min(m);
            let raw = lag_sum(&alpha, &beta, n as i64, l, l);
            (raw, truncation_bound(&rho, q, r, n, l as usize))
        }
    };
    Ok(ContractionValue {
        value: raw / (pn * pn),
        truncation_bound: bound / (pn * pn),
    })
}

/// `Σ mult(a,b,c) α(a) α(b) β(c) β(c-a+b)` over `|a|,|b| ≤ la`, `|c| ≤ lc`.
fn lag_sum(alpha: &[f64], beta: &[f64], n: i64, la: i64, lc: i64) -> f64 {
    let at = |v: &[f64], d: i64| v[d.unsigned_abs() as usize];
    let per_a: Vec<f64> = (-la..=la)
        .into_par_iter()
        .map(|a| {
            let mut s = CompensatedSum::new();
            let aa = at(alpha, a);
            for b in -la..=la {
                let ab = aa * at(alpha, b);
                if ab == 0.0 {
                    continue;
                }
                for c in -lc..=lc {
                    let mult = lag_multiplicity(n, a, b, c);
                    if mult > 0 {
                        s.add(mult as f64 * ab * at(beta, c) * at(beta, c - a + b));
                    }
                }
            }
            s.value()
        })
        .collect();
    pairwise_sum(&per_a)
}

/// `tr(C²)` with `C = AB`, `A_{kl} = α(k-l)`, `B_{kl} = β(k-l)`, using the
/// diagonal recurrence
/// `C_{k+1,i+1} = C_{k,i} + α(k+1)β(i+1) - α(n-1-k)β(n-1-i)` (0-based).
fn trace_form(alpha: &[f64], beta: &[f64], n: usize) -> f64 {
    let ni = n as i64;
    let at = |v: &[f64], d: i64| v[d.unsigned_abs() as usize];
    let start = |k: i64, i: i64| -> f64 {
        let mut s = CompensatedSum::new();
        for l in 0..ni {
            s.add(at(alpha, k - l) * at(beta, l - i));
        }
        s.value()
    };
    let walk = |k0: i64, i0: i64| -> Vec<f64> {
        let len = (ni - k0.max(i0)) as usize;
        let mut out = Vec::with_capacity(len);
        let mut c = start(k0, i0);
        let (mut k, mut i) = (k0, i0);
        out.push(c);
        for _ in 1..len {
            c += at(alpha, k + 1) * at(beta, -1 - i) - at(alpha, k - ni + 1) * at(beta, ni - 1 - i);
            k += 1;
            i += 1;
            out.push(c);
        }
        out
    };
    let per_d: Vec<f64> = (0..ni)
        .into_par_iter()
        .map(|d| {
            let lower = walk(d, 0);
            if d == 0 {
                let sq: Vec<f64> = lower.iter().map(|x| x * x).collect();
                return pairwise_sum(&sq);
            }
            let upper = walk(0, d);
            let prod: Vec<f64> = lower.iter().zip(&upper).map(|(x, y)| x * y).collect();
            2.0 * pairwise_sum(&prod)
        })
        .collect();
    pairwise_sum(&per_d)
}

/// Hölder bound on the lag-sum mass outside the `L`-box.
fn truncation_bound(rho: &[f64], q: u32, r: u32, n: usize, lag: usize) -> f64 {
    let pw = |d: usize| rho[d].abs().powi(q as i32);
    let two_sided = |lo: usize, hi: usize| -> f64 {
        let mut s = CompensatedSum::new();
        for d in lo..=hi {
            s.add(if d == 0 { pw(0) } else { 2.0 * pw(d) });
        }
        s.value()
    };
    let s1 = two_sided(0, n - 1);
    let s3 = two_sided(0, 3 * (n - 1));
    let tl = if lag >= n - 1 { 0.0 } else { two_sided(lag + 1, n - 1) };
    let (fr, fs) = (r as f64 / q as f64, (q - r) as f64 / q as f64);
    let width = (2 * n - 1) as f64;
    let u = width * (tl * s1).powf(fr) * (s1 * s3).powf(fs);
    let w = width * s1.powf(2.0 * fr) * (tl * s3).powf(fs);
    n as f64 * (2.0 * u + w)
}

/// `⟨f_k, f_l⟩ = E[G_k G_l]/q!`.
pub fn kernel_inner(model: &CovarianceModel, q: u32, k: usize, l: usize) -> Result<f64> {
    if q == 0 || k == 0 || l == 0 {
        return Err(Error::InvalidArgument("need q, k, l ≥ 1".into()));
    }
    let spec = SequenceSpec::HermiteVariation {
        model: model.clone(),
        q,
        regime: classify_regime(model, q),
    };
    Ok(spec.variance_profile(k.max(l)).correlation(k, l) / factorial(q))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnerProduct {
    pub k: usize,
    pub l: usize,
    pub value: f64,
}

/// Norms, contractions and inner products of the kernels `f_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelStats {
    pub model: CovarianceModel,
    pub q: u32,
    pub n: usize,
    /// `σ_n` in the regime convention (`√(E[V_n²]/n)`, or `/(n log n)` when critical).
    pub sigma_n: f64,
    pub contraction_norms: BTreeMap<u32, f64>,
    pub inner: Vec<InnerProduct>,
    pub method: ContractionMethod,
    pub truncation_bound: f64,
}

pub fn kernel_stats(
    model: &CovarianceModel,
    q: u32,
    n: usize,
    method: ContractionMethod,
    pair_grid: &[usize],
) -> Result<KernelStats> {
    let regime = classify_regime(model, q);
    let spec = SequenceSpec::HermiteVariation {
        model: model.clone(),
        q,
        regime,
    };
    let top = pair_grid.iter().copied().max().unwrap_or(0).max(n);
    let profile = spec.variance_profile(top);
    let nf = n as f64;
    let scale = if regime == Regime::Critical { nf * nf.ln() } else { nf };
    let mut norms = BTreeMap::new();
    let mut bound: f64 = 0.0;
    for r in 1..q {
        let v = contraction_norm_sq(model, q, r, n, method)?;
        norms.insert(r, v.value);
        bound = bound.max(v.truncation_bound);
    }
    let qf = factorial(q);
    let mut inner = Vec::new();
    for (a, &k) in pair_grid.iter().enumerate() {
        for &l in &pair_grid[a..] {
            inner.push(InnerProduct {
                k,
                l,
                value: profile.correlation(k, l) / qf,
            });
        }
    }
    Ok(KernelStats {
        model: model.clone(),
        q,
        n,
        sigma_n: (profile.second_moment(n) / scale).sqrt(),
        contraction_norms: norms,
        inner,
        method,
        truncation_bound: bound,
    })
}

/// CSV rows `n,r,norm_sq`.
pub fn write_contraction_csv<W: Write>(mut w: W, rows: &[(usize, u32, f64)]) -> Result<()> {
    writeln!(w, "n,r,norm_sq")?;
    for (n, r, v) in rows {
        writeln!(w, "{n},{r},{v:?}")?;
    }
    Ok(())
}
