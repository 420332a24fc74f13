//! Pathwise Malliavin functionals of `G_n = V_n/√W`, `W = E[V_n²]`:
//! `‖DG_n‖²`, `‖D²G_n ⊗_1 D²G_n‖²`, the variance identity and the
//! characteristic-function gap bound.
//!
//! With `a_k = f'(X_k)` and `b_k = f''(X_k)`,
//! `‖DG‖² = (1/W) Σ a_k a_l ρ(k-l)` and
//! `‖D²G ⊗_1 D²G‖² = (1/W²) Σ_{k,i} b_k b_i S_{ki}²` where `S = R diag(b) R`
//! and `R_{kl} = ρ(k-l)`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::covariance::{abs_rho_power_tail, CovarianceModel};
use crate::hermite::{default_nodes, hermite_unchecked, GaussHermite, TestFunction};
use crate::numerics::{cross_correlation, pairwise_sum, MeanStderr, SymmetricToeplitz};
use crate::sequences::SequenceSpec;
use crate::{Error, Result};

pub const MIN_CF_REPLICATES: usize = 100;

/// Which lags enter the pathwise quadratic forms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LagCutoff {
    /// All lags `|k - l| < n`; exact.
    #[default]
    Full,
    /// Lags up to `L` only, with a bound on the omitted part.
    Lag(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounded {
    pub value: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MalliavinSample {
    pub n: usize,
    pub dg_norm_sq: f64,
    pub d2g_contraction_norm_sq: Option<f64>,
    pub cutoff: LagCutoff,
    pub bound: f64,
}

/// Precomputed data for evaluating Malliavin functionals of one spec and `n`.
pub struct MalliavinEvaluator {
    spec: SequenceSpec,
    n: usize,
    rho: Vec<f64>,
    toeplitz: SymmetricToeplitz,
    w: f64,
    g_coeffs: Vec<f64>,
}

impl MalliavinEvaluator {
    pub fn new(spec: &SequenceSpec, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("n must be ≥ 1".into()));
        }
        let model = spec.model();
        let rho = model.rho_table(n);
        let w = spec.variance_profile(n).second_moment(n);
        // g = Σ_q c_q H_{q-1}, so that -DL⁻¹G = (1/√W) Σ g(X_k) ε_k.
        let g_coeffs = match spec {
            SequenceSpec::GeneralF { expansion, .. } => expansion.coeffs[1..].to_vec(),
            _ => Vec::new(),
        };
        Ok(MalliavinEvaluator {
            spec: spec.clone(),
            n,
            toeplitz: SymmetricToeplitz::new(&rho),
            rho,
            w,
            g_coeffs,
        })
    }

    pub fn second_moment(&self) -> f64 {
        self.w
    }

    fn first_derivatives(&self, x: &[f64]) -> Vec<f64> {
        match &self.spec {
            SequenceSpec::FbmScaled { .. } => vec![1.0; self.n],
            SequenceSpec::HermiteVariation { q, .. } => {
                let qf = *q as f64;
                x[..self.n].iter().map(|&v| qf * hermite_unchecked(q - 1, v)).collect()
            }
            SequenceSpec::GeneralF { f, .. } => x[..self.n].iter().map(|&v| f.d1(v)).collect(),
        }
    }

    fn second_derivatives(&self, x: &[f64]) -> Vec<f64> {
        match &self.spec {
            SequenceSpec::FbmScaled { .. } => vec![0.0; self.n],
            SequenceSpec::HermiteVariation { q, .. } => {
                if *q < 2 {
                    return vec![0.0; self.n];
                }
                let c = (q * (q - 1)) as f64;
                x[..self.n].iter().map(|&v| c * hermite_unchecked(q - 2, v)).collect()
            }
            SequenceSpec::GeneralF { f, .. } => x[..self.n].iter().map(|&v| f.d2(v)).collect(),
        }
    }

    fn check_len(&self, x: &[f64]) -> Result<()> {
        if x.len() < self.n {
            return Err(Error::InvalidArgument(format!(
                "path of length {} shorter than n = {}",
                x.len(),
                self.n
            )));
        }
        Ok(())
    }

    /// `(1/W) Σ u_k v_l ρ(k-l)`, truncated to `|k-l| ≤ L` if requested.
    fn quadratic_form(&self, u: &[f64], v: &[f64], cutoff: LagCutoff) -> Result<Bounded> {
        match cutoff {
            LagCutoff::Full => {
                let tv = self.toeplitz.apply(v);
                let s: Vec<f64> = u.iter().zip(&tv).map(|(a, b)| a * b).collect();
                Ok(Bounded {
                    value: pairwise_sum(&s) / self.w,
                    bound: 0.0,
                })
            }
            LagCutoff::Lag(l) => {
                if l == 0 || l > self.n {
                    return Err(Error::InvalidArgument(format!("lag cutoff must be in 1..={}", self.n)));
                }
                let n = self.n;
                let xc = cross_correlation(u, v);
                let mut terms = Vec::with_capacity(2 * l + 1);
                for d in 0..n.min(l + 1) {
                    let c = xc[n - 1 + d] + if d > 0 { xc[n - 1 - d] } else { 0.0 };
                    terms.push(self.rho[d] * c);
                }
                let tail: f64 = self.rho.iter().skip(l + 1).map(|r| 2.0 * r.abs()).sum();
                let nu: f64 = u.iter().map(|a| a * a).sum::<f64>().sqrt();
                let nv: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
                Ok(Bounded {
                    value: pairwise_sum(&terms) / self.w,
                    bound: tail * nu * nv / self.w,
                })
            }
        }
    }

    pub fn dg_norm_sq(&self, x: &[f64], cutoff: LagCutoff) -> Result<Bounded> {
        self.check_len(x)?;
        if let SequenceSpec::FbmScaled { .. } = self.spec {
            return Ok(Bounded { value: 1.0, bound: 0.0 });
        }
        let a = self.first_derivatives(x);
        self.quadratic_form(&a, &a, cutoff)
    }

    /// `⟨DG, -DL⁻¹G⟩`; its expectation is `E[G²] = 1`.
    pub fn variance_identity(&self, x: &[f64]) -> Result<f64> {
        self.check_len(x)?;
        match &self.spec {
            SequenceSpec::FbmScaled { .. } => Ok(1.0),
            SequenceSpec::HermiteVariation { q, .. } => {
                Ok(self.dg_norm_sq(x, LagCutoff::Full)?.value / *q as f64)
            }
            SequenceSpec::GeneralF { .. } => {
                let a = self.first_derivatives(x);
                let g: Vec<f64> = x[..self.n]
                    .iter()
                    .map(|&v| {
                        self.g_coeffs
                            .iter()
                            .enumerate()
                            .map(|(j, c)| c * hermite_unchecked(j as u32, v))
                            .sum()
                    })
                    .collect();
                Ok(self.quadratic_form(&a, &g, LagCutoff::Full)?.value)
            }
        }
    }

    pub fn d2g_contraction_norm_sq(&self, x: &[f64], cutoff: LagCutoff) -> Result<Bounded> {
        self.check_len(x)?;
        let n = self.n;
        let b = self.second_derivatives(x);
        if b.iter().all(|v| *v == 0.0) {
            if let LagCutoff::Lag(l) = cutoff {
                if l == 0 || l > n {
                    return Err(Error::InvalidArgument(format!("lag cutoff must be in 1..={n}")));
                }
            }
            return Ok(Bounded { value: 0.0, bound: 0.0 });
        }
        let w2 = self.w * self.w;
        match cutoff {
            LagCutoff::Full => {
                // Column i of S is R(b ⊙ R e_i); two columns share one transform.
                let mut terms = vec![0.0; n];
                let mut u = vec![0.0; n];
                let mut v = vec![0.0; n];
                let mut su = vec![0.0; n];
                let mut sv = vec![0.0; n];
                let mut i = 0;
                while i < n {
                    let j = (i + 1).min(n - 1);
                    for k in 0..n {
                        u[k] = b[k] * self.rho[k.abs_diff(i)];
                        v[k] = b[k] * self.rho[k.abs_diff(j)];
                    }
                    self.toeplitz.apply_pair(&u, &v, &mut su, &mut sv);
                    let col_sum = |s: &[f64], c: usize| -> f64 {
                        let t: Vec<f64> = s.iter().zip(&b).map(|(x, bk)| bk * x * x).collect();
                        b[c] * pairwise_sum(&t)
                    };
                    terms[i] = col_sum(&su, i);
                    if j != i {
                        terms[j] = col_sum(&sv, j);
                    }
                    i += 2;
                }
                Ok(Bounded {
                    value: pairwise_sum(&terms) / w2,
                    bound: 0.0,
                })
            }
            LagCutoff::Lag(l) => {
                if l == 0 || l > n {
                    return Err(Error::InvalidArgument(format!("lag cutoff must be in 1..={n}")));
                }
                let band = l.min(n - 1);
                let rl = |d: usize| if d <= band { self.rho[d] } else { 0.0 };
                let mut terms = Vec::with_capacity(n);
                for k in 0..n {
                    let mut s = 0.0;
                    let lo = k.saturating_sub(2 * band);
                    let hi = (k + 2 * band).min(n - 1);
                    for i in lo..=hi {
                        let mid_lo = k.max(i).saturating_sub(band);
                        let mid_hi = (k.min(i) + band).min(n - 1);
                        let mut ski = 0.0;
                        for m in mid_lo..=mid_hi {
                            ski += rl(k.abs_diff(m)) * b[m] * rl(m.abs_diff(i));
                        }
                        s += b[i] * ski * ski;
                    }
                    terms.push(b[k] * s);
                }
                let bmax = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                let abs_all: f64 = self.rho.iter().enumerate().map(|(d, r)| if d == 0 { r.abs() } else { 2.0 * r.abs() }).sum();
                let abs_in: f64 = self.rho[..=band]
                    .iter()
                    .enumerate()
                    .map(|(d, r)| if d == 0 { r.abs() } else { 2.0 * r.abs() })
                    .sum();
                let sup_out = self.rho.iter().skip(band + 1).fold(0.0f64, |m, r| m.max(r.abs()));
                let rho_inf = self.rho.iter().fold(0.0f64, |m, r| m.max(r.abs()));
                let bound = n as f64
                    * bmax.powi(4)
                    * (rho_inf * (abs_all.powi(3) - abs_in.powi(3)) + abs_in.powi(3) * sup_out)
                    / w2;
                Ok(Bounded {
                    value: pairwise_sum(&terms) / w2,
                    bound,
                })
            }
        }
    }

    pub fn sample(&self, x: &[f64], cutoff: LagCutoff, with_d2g: bool) -> Result<MalliavinSample> {
        let dg = self.dg_norm_sq(x, cutoff)?;
        let (d2g, b2) = if with_d2g {
            let v = self.d2g_contraction_norm_sq(x, cutoff)?;
            (Some(v.value), v.bound)
        } else {
            (None, 0.0)
        };
        Ok(MalliavinSample {
            n: self.n,
            dg_norm_sq: dg.value,
            d2g_contraction_norm_sq: d2g,
            cutoff,
            bound: dg.bound.max(b2),
        })
    }
}

pub fn dg_norm_sq(path: &[f64], spec: &SequenceSpec, cutoff: LagCutoff) -> Result<Bounded> {
    MalliavinEvaluator::new(spec, path.len())?.dg_norm_sq(path, cutoff)
}

pub fn d2g_contraction_norm_sq(path: &[f64], spec: &SequenceSpec, cutoff: LagCutoff) -> Result<Bounded> {
    MalliavinEvaluator::new(spec, path.len())?.d2g_contraction_norm_sq(path, cutoff)
}

/// `(|t|/2)·√10·E[‖D²G⊗_1D²G‖²]^{1/4}·E[‖DG‖⁴]^{1/4}`, the bound on
/// `|E e^{itG} - e^{-t²/2}|` when `E[G²] = 1`.
pub fn cf_gap_bound(t: f64, d2g_mean: f64, dg4_mean: f64) -> f64 {
    0.5 * t.abs() * 10f64.sqrt() * d2g_mean.max(0.0).powf(0.25) * dg4_mean.max(0.0).powf(0.25)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfGap {
    pub n: usize,
    pub t: f64,
    pub cf_gap_mc: f64,
    pub cf_gap_stderr: f64,
    pub cf_gap_bound: f64,
    pub dg4_mean: f64,
    pub d2g_mean: f64,
}

/// Monte-Carlo gap `|mean e^{itG_n} - e^{-t²/2}|` next to its bound, from
/// per-replicate `G_n`, `‖DG_n‖²` and `‖D²G_n⊗_1D²G_n‖²`.
pub fn cf_gap_estimate(n: usize, t: f64, g: &[f64], dg: &[f64], d2g: &[f64]) -> Result<CfGap> {
    let r = g.len();
    if r < MIN_CF_REPLICATES || dg.len() != r || d2g.len() != r {
        return Err(Error::InvalidArgument(format!(
            "need at least {MIN_CF_REPLICATES} matched replicates, got {r}"
        )));
    }
    let cos: Vec<f64> = g.iter().map(|x| (t * x).cos()).collect();
    let sin: Vec<f64> = g.iter().map(|x| (t * x).sin()).collect();
    let mc = MeanStderr::from_samples(&cos);
    let ms = MeanStderr::from_samples(&sin);
    let target = (-0.5 * t * t).exp();
    let gap = (mc.mean - target).hypot(ms.mean);
    let stderr = if t == 0.0 { 0.0 } else { mc.stderr.hypot(ms.stderr) };
    let dg4: Vec<f64> = dg.iter().map(|x| x * x).collect();
    let dg4_mean = pairwise_sum(&dg4) / r as f64;
    let d2g_mean = pairwise_sum(d2g) / r as f64;
    Ok(CfGap {
        n,
        t,
        cf_gap_mc: gap,
        cf_gap_stderr: stderr,
        cf_gap_bound: cf_gap_bound(t, d2g_mean, dg4_mean),
        dg4_mean,
        d2g_mean,
    })
}

pub fn write_cf_gap_csv<W: Write>(mut w: W, rows: &[CfGap]) -> Result<()> {
    writeln!(w, "n,t,cf_gap_mc,cf_gap_bound,dg4_mean,d2g_mean")?;
    for r in rows {
        writeln!(
            w,
            "{},{:?},{:?},{:?},{:?},{:?}",
            r.n, r.t, r.cf_gap_mc, r.cf_gap_bound, r.dg4_mean, r.d2g_mean
        )?;
    }
    Ok(())
}

/// `E[φ(N)]` for the derivatives of the summand function.
fn derivative_moment(spec: &SequenceSpec, order: u8) -> Result<f64> {
    let rule = GaussHermite::new(default_nodes(20))?;
    let m = match spec {
        SequenceSpec::FbmScaled { .. } => {
            return Err(Error::InvalidArgument("bound needs a nonlinear functional".into()))
        }
        SequenceSpec::HermiteVariation { q, .. } => {
            let q = *q;
            rule.expect(|x| {
                let d = match order {
                    1 => q as f64 * hermite_unchecked(q - 1, x),
                    _ if q >= 2 => (q * (q - 1)) as f64 * hermite_unchecked(q - 2, x),
                    _ => 0.0,
                };
                d.powi(4)
            })
        }
        SequenceSpec::GeneralF { f, .. } => {
            let f: TestFunction = *f;
            rule.expect(|x| if order == 1 { f.d1(x) } else { f.d2(x) }.powi(4))
        }
    };
    Ok(m)
}

/// Bounds on `E‖DG_n‖⁴` and `E‖D²G_n⊗_1D²G_n‖²` built from `E f'(N)⁴`,
/// `E f''(N)⁴`, `Σ|ρ|` and `‖ρ‖_∞ = 1`. The moment enters raised to `exponent`;
/// `1/4` reproduces the printed inequalities, `1` is what Hölder's inequality
/// gives for a product of four factors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentBounds {
    pub exponent: f64,
    pub dg4: f64,
    pub d2g: f64,
}

pub fn moment_bounds(spec: &SequenceSpec, n: usize, exponent: f64) -> Result<MomentBounds> {
    let model: CovarianceModel = spec.model();
    let abs_sum = 1.0 + abs_rho_power_tail(&model, 1, 0)?.upper();
    let w = spec.variance_profile(n).second_moment(n);
    let sigma4 = (w / n as f64).powi(2);
    let m1 = derivative_moment(spec, 1)?;
    let m2 = derivative_moment(spec, 2)?;
    Ok(MomentBounds {
        exponent,
        dg4: m1.powf(exponent) * abs_sum.powi(2) / sigma4,
        d2g: m2.powf(exponent) * abs_sum.powi(3) / (sigma4 * n as f64),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GebeleinRow {
    pub lag: usize,
    pub cov_mc: f64,
    pub stderr: f64,
    pub bound: f64,
}

/// Monte-Carlo `Cov(f(X_i), f(X_{i+d}))` against `|ρ(d)|·Var f(N)`.
pub fn gebelein_check(
    model: &CovarianceModel,
    f: TestFunction,
    paths: &[Vec<f64>],
    max_lag: usize,
) -> Result<Vec<GebeleinRow>> {
    if paths.len() < 2 {
        return Err(Error::InvalidArgument("need at least two replicates".into()));
    }
    let n = paths[0].len();
    if max_lag >= n || paths.iter().any(|p| p.len() != n) {
        return Err(Error::InvalidArgument("paths must share a length exceeding max_lag".into()));
    }
    let rule = GaussHermite::new(default_nodes(20))?;
    let mean = rule.expect(|x| f.eval(x));
    let var = rule.expect(|x| (f.eval(x) - mean).powi(2));
    let centred: Vec<Vec<f64>> = paths
        .iter()
        .map(|p| p.iter().map(|&x| f.eval(x) - mean).collect())
        .collect();
    Ok((1..=max_lag)
        .map(|d| {
            let per: Vec<f64> = centred
                .iter()
                .map(|c| (0..n - d).map(|k| c[k] * c[k + d]).sum::<f64>() / (n - d) as f64)
                .collect();
            let m = MeanStderr::from_samples(&per);
            GebeleinRow {
                lag: d,
                cov_mc: m.mean,
                stderr: m.stderr,
                bound: model.rho(d as i64).abs() * var,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sequences::Regime;
    use approx::assert_abs_diff_eq;

    fn dense_quadratic(rho: &[f64], u: &[f64], v: &[f64]) -> f64 {
        let n = u.len();
        let mut s = 0.0;
        for k in 0..n {
            for l in 0..n {
                s += u[k] * v[l] * rho[k.abs_diff(l)];
            }
        }
        s
    }

    #[test]
    fn dg_matches_dense_sum() {
        let model = CovarianceModel::fgn(0.3).unwrap();
        let spec = SequenceSpec::hermite_variation(model.clone(), 2, Regime::Subcritical).unwrap();
        let x: Vec<f64> = (0..37).map(|k| ((k * 7919) % 101) as f64 / 50.0 - 1.0).collect();
        let ev = MalliavinEvaluator::new(&spec, 37).unwrap();
        let a: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let want = dense_quadratic(&model.rho_table(37), &a, &a) / ev.second_moment();
        let got = ev.dg_norm_sq(&x, LagCutoff::Full).unwrap();
        assert_abs_diff_eq!(got.value, want, epsilon = 1e-12);
        let t = ev.dg_norm_sq(&x, LagCutoff::Lag(5)).unwrap();
        assert!((t.value - want).abs() <= t.bound);
        assert!(ev.dg_norm_sq(&x, LagCutoff::Lag(0)).is_err());
    }

    #[test]
    fn d2g_iid_q2_is_four_over_n() {
        let spec = SequenceSpec::hermite_variation(CovarianceModel::Iid, 2, Regime::Subcritical).unwrap();
        let x = vec![0.3; 64];
        let v = d2g_contraction_norm_sq(&x, &spec, LagCutoff::Full).unwrap();
        assert_abs_diff_eq!(v.value, 4.0 / 64.0, epsilon = 1e-14);
    }

    #[test]
    fn d2g_matches_quadruple_sum() {
        let model = CovarianceModel::fgn(0.3).unwrap();
        let spec = SequenceSpec::general_f(model.clone(), TestFunction::Quartic, 8).unwrap();
        let n = 9;
        let x: Vec<f64> = (0..n).map(|k| (k as f64 * 0.37).sin() * 1.5).collect();
        let b: Vec<f64> = x.iter().map(|v| 12.0 * v * v).collect();
        let rho = model.rho_table(n);
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        s += b[i] * b[j] * b[k] * b[l] * rho[k.abs_diff(l)] * rho[i.abs_diff(j)] * rho[k.abs_diff(i)] * rho[l.abs_diff(j)];
                    }
                }
            }
        }
        let ev = MalliavinEvaluator::new(&spec, n).unwrap();
        let w = ev.second_moment();
        let got = ev.d2g_contraction_norm_sq(&x, LagCutoff::Full).unwrap();
        assert_abs_diff_eq!(got.value, s / (w * w), epsilon = 1e-10 * s / (w * w));
        for l in [1, 3, n] {
            let t = ev.d2g_contraction_norm_sq(&x, LagCutoff::Lag(l)).unwrap();
            assert!((t.value - got.value).abs() <= t.bound + 1e-12, "L = {l}");
        }
        assert!(ev.d2g_contraction_norm_sq(&x, LagCutoff::Lag(n + 1)).is_err());
    }

    #[test]
    fn fbm_scaled_has_unit_derivative_norm() {
        let spec = SequenceSpec::fbm_scaled(0.7).unwrap();
        assert_eq!(dg_norm_sq(&[0.1, 2.0], &spec, LagCutoff::Full).unwrap().value, 1.0);
    }

    #[test]
    fn cf_gap_vanishes_at_zero() {
        let g: Vec<f64> = (0..200).map(|k| k as f64 / 100.0 - 1.0).collect();
        let ones = vec![1.0; 200];
        let e = cf_gap_estimate(10, 0.0, &g, &ones, &ones).unwrap();
        assert_eq!(e.cf_gap_mc, 0.0);
        assert_eq!(e.cf_gap_bound, 0.0);
        assert!(cf_gap_estimate(10, 1.0, &g[..50], &ones[..50], &ones[..50]).is_err());
    }
}
