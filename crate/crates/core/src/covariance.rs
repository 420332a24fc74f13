//! Stationary unit-variance autocovariance models.
//!
//! The fGn covariance `ρ(r) = ½(|r+1|^{2H} + |r-1|^{2H} - 2|r|^{2H})` is a second
//! difference of nearby powers and cancels catastrophically for large lags. For
//! `|r| ≥ 4` it is evaluated through the binomial series
//! `ρ(r) = r^{2H} Σ_{k≥1} C(2H, 2k) r^{-2k}`, whose terms all share one sign.

use serde::{Deserialize, Serialize};

use crate::numerics::CompensatedSum;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelRepr", into = "ModelRepr")]
pub enum CovarianceModel {
    /// Fractional Gaussian noise with Hurst index `H ∈ (0, 1)`.
    Fgn { hurst: f64 },
    Iid,
    /// `values[d] = ρ(d)` for `d = 0..values.len()`, zero beyond.
    Table { values: Vec<f64> },
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum ModelRepr {
    Fgn {
        #[serde(rename = "H")]
        hurst: f64,
    },
    Iid,
    Table {
        values: Vec<(i64, f64)>,
    },
}

impl TryFrom<ModelRepr> for CovarianceModel {
    type Error = Error;

    fn try_from(repr: ModelRepr) -> Result<Self> {
        match repr {
            ModelRepr::Fgn { hurst } => CovarianceModel::fgn(hurst),
            ModelRepr::Iid => Ok(CovarianceModel::Iid),
            ModelRepr::Table { values } => CovarianceModel::table(&values),
        }
    }
}

impl From<CovarianceModel> for ModelRepr {
    fn from(m: CovarianceModel) -> Self {
        match m {
            CovarianceModel::Fgn { hurst } => ModelRepr::Fgn { hurst },
            CovarianceModel::Iid => ModelRepr::Iid,
            CovarianceModel::Table { values } => ModelRepr::Table {
                values: values
                    .into_iter()
                    .enumerate()
                    .map(|(d, v)| (d as i64, v))
                    .collect(),
            },
        }
    }
}

impl CovarianceModel {
    pub fn fgn(hurst: f64) -> Result<Self> {
        if !(hurst > 0.0 && hurst < 1.0) {
            return Err(Error::InvalidModel(format!(
                "Hurst index must lie in (0, 1), got {hurst}"
            )));
        }
        Ok(CovarianceModel::Fgn { hurst })
    }

    /// Builds a table model from `(lag, value)` pairs. Negative lags are folded
    /// onto positive ones and must agree with any positive entry.
    pub fn table(pairs: &[(i64, f64)]) -> Result<Self> {
        let max_lag = pairs.iter().map(|(d, _)| d.unsigned_abs()).max().unwrap_or(0) as usize;
        let mut values: Vec<Option<f64>> = vec![None; max_lag + 1];
        for &(d, v) in pairs {
            if !v.is_finite() || v.abs() > 1.0 + 1e-12 {
                return Err(Error::InvalidModel(format!(
                    "table entry at lag {d} must be finite with |ρ| ≤ 1, got {v}"
                )));
            }
            let slot = &mut values[d.unsigned_abs() as usize];
            match slot {
                Some(prev) if *prev != v => {
                    return Err(Error::InvalidModel(format!(
                        "lags {d} and {} disagree: {prev} vs {v}",
                        -d
                    )))
                }
                _ => *slot = Some(v),
            }
        }
        match values[0] {
            Some(v0) if (v0 - 1.0).abs() <= 1e-12 => {}
            other => {
                return Err(Error::InvalidModel(format!(
                    "table must set ρ(0) = 1, got {other:?}"
                )))
            }
        }
        let mut values: Vec<f64> = values.into_iter().map(|v| v.unwrap_or(0.0)).collect();
        values[0] = 1.0;
        while values.len() > 1 && *values.last().unwrap() == 0.0 {
            values.pop();
        }
        Ok(CovarianceModel::Table { values })
    }

    pub fn hurst(&self) -> Option<f64> {
        match self {
            CovarianceModel::Fgn { hurst } => Some(*hurst),
            _ => None,
        }
    }

    /// Autocovariance at lag `r`.
    pub fn rho(&self, r: i64) -> f64 {
        let d = r.unsigned_abs();
        match self {
            CovarianceModel::Iid => {
                if d == 0 {
                    1.0
                } else {
                    0.0
                }
            }
            CovarianceModel::Table { values } => values.get(d as usize).copied().unwrap_or(0.0),
            CovarianceModel::Fgn { hurst } => fgn_rho(*hurst, d),
        }
    }

    /// `ρ(0), …, ρ(n-1)`.
    pub fn rho_table(&self, n: usize) -> Vec<f64> {
        (0..n as i64).map(|r| self.rho(r)).collect()
    }

    /// Whether `Σ_r |ρ(r)|^p < ∞`.
    pub fn is_power_summable(&self, p: f64) -> bool {
        match self {
            CovarianceModel::Fgn { hurst } if *hurst > 0.5 => (2.0 - 2.0 * hurst) * p > 1.0,
            _ => true,
        }
    }

    /// Largest lag with a possibly nonzero covariance, if finite.
    pub fn support(&self) -> Option<usize> {
        match self {
            CovarianceModel::Iid => Some(0),
            CovarianceModel::Table { values } => Some(values.len() - 1),
            CovarianceModel::Fgn { hurst } if *hurst == 0.5 => Some(0),
            CovarianceModel::Fgn { .. } => None,
        }
    }
}

impl std::fmt::Display for CovarianceModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CovarianceModel::Fgn { hurst } => write!(f, "fgn(H={hurst})"),
            CovarianceModel::Iid => write!(f, "iid"),
            CovarianceModel::Table { values } => write!(f, "table(support={})", values.len() - 1),
        }
    }
}

fn fgn_rho(hurst: f64, d: u64) -> f64 {
    if d == 0 {
        return 1.0;
    }
    let a = 2.0 * hurst;
    if d < 4 {
        let r = d as f64;
        return 0.5 * ((r + 1.0).powf(a) + (r - 1.0).powf(a) - 2.0 * r.powf(a));
    }
    let r = d as f64;
    let x = 1.0 / (r * r);
    // C(a, 2k) via the ratio C(a,2k+2)/C(a,2k) = (a-2k)(a-2k-1)/((2k+1)(2k+2)).
    let mut coeff = 0.5 * a * (a - 1.0);
    let mut pow = x;
    let mut sum = 0.0;
    for k in 1..200 {
        let term = coeff * pow;
        sum += term;
        if term.abs() <= 1e-18 * sum.abs() || term == 0.0 {
            break;
        }
        let kk = k as f64;
        coeff *= (a - 2.0 * kk) * (a - 2.0 * kk - 1.0) / ((2.0 * kk + 1.0) * (2.0 * kk + 2.0));
        pow *= x;
    }
    r.powf(a) * sum
}

/// Large-lag equivalent `H(2H-1)|r|^{2H-2}` of the fGn covariance.
pub fn rho_asymptotic(hurst: f64, r: i64) -> Result<f64> {
    if r == 0 {
        return Err(Error::InvalidArgument("asymptotic form undefined at r = 0".into()));
    }
    let d = r.unsigned_abs() as f64;
    Ok(hurst * (2.0 * hurst - 1.0) * d.powf(2.0 * hurst - 2.0))
}

/// A series value: explicit terms up to `cutoff` plus an estimate of the rest.
/// The exact sum lies within `remainder_bound` of `partial`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailSum {
    pub partial: f64,
    pub remainder_bound: f64,
    pub cutoff: u64,
}

impl TailSum {
    pub fn lower(&self) -> f64 {
        self.partial - self.remainder_bound
    }

    pub fn upper(&self) -> f64 {
        self.partial + self.remainder_bound
    }
}

const TAIL_REL_TOL: f64 = 1e-12;
const MAX_CUTOFF: u64 = 1 << 23;

/// `Σ_{|r|>m} |ρ(r)|^q` with a rigorous error bound.
pub fn abs_rho_power_tail(model: &CovarianceModel, q: u32, m: u64) -> Result<TailSum> {
    power_tail(model, q, m, true)
}

/// `Σ_{r∈ℤ} ρ(r)^q` (signed) with a bound on the omitted tail.
pub fn rho_power_sum(model: &CovarianceModel, q: u32) -> Result<TailSum> {
    let tail = power_tail(model, q, 0, false)?;
    Ok(TailSum {
        partial: 1.0 + tail.partial,
        ..tail
    })
}

fn power_tail(model: &CovarianceModel, q: u32, m: u64, abs: bool) -> Result<TailSum> {
    if q == 0 {
        return Err(Error::InvalidArgument("power q must be ≥ 1".into()));
    }
    let term = |r: u64| {
        let v = model.rho(r as i64).powi(q as i32);
        if abs {
            v.abs()
        } else {
            v
        }
    };
    if let Some(support) = model.support() {
        let mut s = CompensatedSum::new();
        for r in (m + 1)..=(support as u64).max(m) {
            s.add(2.0 * term(r));
        }
        return Ok(TailSum {
            partial: s.value(),
            remainder_bound: 0.0,
            cutoff: (support as u64).max(m),
        });
    }
    let hurst = model.hurst().expect("only fGn has infinite support");
    let p = (2.0 - 2.0 * hurst) * q as f64;
    if p <= 1.0 {
        return Err(Error::Divergent(format!(
            "Σ|ρ(r)|^{q} diverges for H = {hurst} since (2-2H)q = {p} ≤ 1"
        )));
    }
    // Beyond R ≥ 4 every ρ(r) has the sign of 2H-1 and
    // c·r^{2H-2} ≤ |ρ(r)| ≤ c·(1 + 1/(R²-1))·r^{2H-2} with c = |H(2H-1)|.
    // Integral comparison then brackets the tail; the midpoint is added to the
    // partial sum and the half-width is the remainder bound.
    let c = (hurst * (2.0 * hurst - 1.0)).abs();
    let sign = if !abs && hurst < 0.5 && q % 2 == 1 { -1.0 } else { 1.0 };
    let bracket = |r_cut: u64| {
        let rc = r_cut as f64;
        let upper_c = c * (1.0 + 1.0 / (rc * rc - 1.0));
        let hi = 2.0 * upper_c.powi(q as i32) * rc.powf(1.0 - p) / (p - 1.0);
        let lo = 2.0 * c.powi(q as i32) * (rc + 1.0).powf(1.0 - p) / (p - 1.0);
        (0.5 * (hi + lo), 0.5 * (hi - lo))
    };
    let mut s = CompensatedSum::new();
    let mut next = m + 1;
    let mut cutoff = (m + 1).max(64);
    loop {
        for r in next..=cutoff {
            s.add(2.0 * term(r));
        }
        next = cutoff + 1;
        let (mid, half) = bracket(cutoff);
        let total = s.value() + sign * mid;
        if half <= TAIL_REL_TOL * total.abs() || cutoff >= MAX_CUTOFF.max(m + 1) {
            return Ok(TailSum {
                partial: total,
                remainder_bound: half,
                cutoff,
            });
        }
        cutoff *= 2;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn fgn_reference_values() {
        let m = CovarianceModel::fgn(0.75).unwrap();
        assert_eq!(m.rho(0), 1.0);
        assert_abs_diff_eq!(m.rho(1), 2f64.sqrt() - 1.0, epsilon = 1e-15);
        assert_eq!(CovarianceModel::fgn(0.5).unwrap().rho(3), 0.0);
    }

    #[test]
    fn series_matches_direct_formula_at_switch() {
        for &h in &[0.1, 0.3, 0.7, 0.95] {
            let a = 2.0 * h;
            for r in 4..40u64 {
                let x = r as f64;
                let direct = 0.5 * ((x + 1.0).powf(a) + (x - 1.0).powf(a) - 2.0 * x.powf(a));
                let got = fgn_rho(h, r);
                // The direct form loses about eps·r^{2H} to cancellation.
                let tol = 64.0 * f64::EPSILON * x.powf(a);
                assert!((got - direct).abs() <= tol, "H={h} r={r}");
            }
        }
    }

    #[test]
    fn table_round_trip_and_validation() {
        let m = CovarianceModel::table(&[(0, 1.0), (1, 0.25), (-1, 0.25)]).unwrap();
        assert_eq!(m.rho(-1), 0.25);
        assert_eq!(m.rho(7), 0.0);
        let js = serde_json::to_string(&m).unwrap();
        let back: CovarianceModel = serde_json::from_str(&js).unwrap();
        assert_eq!(back, m);
        assert!(CovarianceModel::table(&[(0, 1.0), (1, 0.2), (-1, 0.3)]).is_err());
        assert!(CovarianceModel::table(&[(1, 0.2)]).is_err());
    }

    #[test]
    fn json_forms() {
        let m: CovarianceModel = serde_json::from_str(r#"{"kind":"fgn","H":0.7}"#).unwrap();
        assert_eq!(m, CovarianceModel::Fgn { hurst: 0.7 });
        let m: CovarianceModel = serde_json::from_str(r#"{"kind":"iid"}"#).unwrap();
        assert_eq!(m, CovarianceModel::Iid);
        assert!(serde_json::from_str::<CovarianceModel>(r#"{"kind":"fgn","H":1.2}"#).is_err());
    }

    #[test]
    fn asymptotic_rejects_zero_lag() {
        assert!(rho_asymptotic(0.7, 0).is_err());
        assert_abs_diff_eq!(rho_asymptotic(0.9, 10).unwrap(), 0.72 * 10f64.powf(-0.2), epsilon = 1e-15);
    }

    #[test]
    fn tail_bounds() {
        let t = abs_rho_power_tail(&CovarianceModel::Iid, 2, 0).unwrap();
        assert_eq!(t.partial, 0.0);
        let fgn = CovarianceModel::fgn(0.9).unwrap();
        assert!(matches!(abs_rho_power_tail(&fgn, 1, 5), Err(Error::Divergent(_))));
        let fgn = CovarianceModel::fgn(0.3).unwrap();
        let a = abs_rho_power_tail(&fgn, 2, 10).unwrap();
        let b = abs_rho_power_tail(&fgn, 2, 20).unwrap();
        assert!(a.partial > b.partial && b.partial > 0.0);
        assert!(a.remainder_bound <= 1e-12 * a.partial);
    }
}
