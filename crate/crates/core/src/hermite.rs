//! Probabilists' Hermite polynomials, Gauss–Hermite quadrature and Hermite
//! expansions of test functions.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::numerics::CompensatedSum;
use crate::{Error, Result};

pub const MAX_DEGREE: u32 = 60;
pub const MAX_EXPANSION_ORDER: u32 = 40;
pub const MAX_NODES: usize = 256;
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// `H_q(x)` from `H_{q+1} = x H_q - q H_{q-1}`.
pub fn hermite_eval(q: u32, x: f64) -> Result<f64> {
    if q > MAX_DEGREE {
        return Err(Error::InvalidArgument(format!(
            "Hermite degree {q} exceeds {MAX_DEGREE}"
        )));
    }
    Ok(hermite_unchecked(q, x))
}

pub(crate) fn hermite_unchecked(q: u32, x: f64) -> f64 {
    let (mut h0, mut h1) = (1.0, x);
    if q == 0 {
        return h0;
    }
    for k in 1..q {
        let h2 = x * h1 - k as f64 * h0;
        h0 = h1;
        h1 = h2;
    }
    h1
}

/// Fills `out[k] = H_k(x)/√(k!)` for `k < out.len()`.
pub fn normalized_hermite_all(x: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    out[0] = 1.0;
    if out.len() > 1 {
        out[1] = x;
    }
    for k in 1..out.len() - 1 {
        let kf = k as f64;
        out[k + 1] = (x * out[k] - kf.sqrt() * out[k - 1]) / (kf + 1.0).sqrt();
    }
}

pub fn factorial(q: u32) -> f64 {
    (1..=q).map(f64::from).product()
}

/// Gauss–Hermite rule for the standard normal law: `E g(N) ≈ Σ w_i g(x_i)`.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    /// Golub–Welsch nodes polished by Newton steps; Christoffel weights.
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 || n > MAX_NODES {
            return Err(Error::InvalidArgument(format!(
                "node count must be in 1..={MAX_NODES}, got {n}"
            )));
        }
        let jacobi = DMatrix::from_fn(n, n, |i, j| {
            if i.abs_diff(j) == 1 {
                (i.max(j) as f64).sqrt()
            } else {
                0.0
            }
        });
        let mut nodes: Vec<f64> = SymmetricEigen::new(jacobi).eigenvalues.iter().copied().collect();
        nodes.sort_by(|a, b| a.total_cmp(b));
        let mut he = vec![0.0; n + 1];
        for x in nodes.iter_mut() {
            for _ in 0..3 {
                normalized_hermite_all(*x, &mut he);
                let step = he[n] / ((n as f64).sqrt() * he[n - 1]);
                if !step.is_finite() {
                    break;
                }
                *x -= step;
            }
        }
        // Enforce exact symmetry about zero.
        for i in 0..n / 2 {
            let m = 0.5 * (nodes[n - 1 - i] - nodes[i]);
            nodes[i] = -m;
            nodes[n - 1 - i] = m;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        let weights = nodes
            .iter()
            .map(|&x| {
                normalized_hermite_all(x, &mut he[..n]);
                1.0 / he[..n].iter().map(|h| h * h).sum::<f64>()
            })
            .collect();
        Ok(GaussHermite { nodes, weights })
    }

    pub fn expect<F: Fn(f64) -> f64>(&self, g: F) -> f64 {
        let mut s = CompensatedSum::new();
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            s.add(w * g(*x));
        }
        s.value()
    }
}

/// Built-in test functions selectable by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestFunction {
    Square,
    Quartic,
    Arctan,
    Hermite(u32),
}

impl TestFunction {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            TestFunction::Square => x * x,
            TestFunction::Quartic => x * x * x * x,
            TestFunction::Arctan => x.atan(),
            TestFunction::Hermite(q) => hermite_unchecked(*q, x),
        }
    }

    pub fn d1(&self, x: f64) -> f64 {
        match self {
            TestFunction::Square => 2.0 * x,
            TestFunction::Quartic => 4.0 * x * x * x,
            TestFunction::Arctan => 1.0 / (1.0 + x * x),
            TestFunction::Hermite(0) => 0.0,
            TestFunction::Hermite(q) => *q as f64 * hermite_unchecked(q - 1, x),
        }
    }

    pub fn d2(&self, x: f64) -> f64 {
        match self {
            TestFunction::Square => 2.0,
            TestFunction::Quartic => 12.0 * x * x,
            TestFunction::Arctan => {
                let d = 1.0 + x * x;
                -2.0 * x / (d * d)
            }
            TestFunction::Hermite(q) if *q < 2 => 0.0,
            TestFunction::Hermite(q) => (q * (q - 1)) as f64 * hermite_unchecked(q - 2, x),
        }
    }

    pub fn is_even(&self) -> bool {
        match self {
            TestFunction::Square | TestFunction::Quartic => true,
            TestFunction::Arctan => false,
            TestFunction::Hermite(q) => q % 2 == 0,
        }
    }
}

impl fmt::Display for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TestFunction::Square => write!(f, "square"),
            TestFunction::Quartic => write!(f, "quartic"),
            TestFunction::Arctan => write!(f, "arctan"),
            TestFunction::Hermite(q) => write!(f, "hermite:{q}"),
        }
    }
}

impl FromStr for TestFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "square" => Ok(TestFunction::Square),
            "quartic" => Ok(TestFunction::Quartic),
            "arctan" => Ok(TestFunction::Arctan),
            _ => {
                let q = s
                    .strip_prefix("hermite:")
                    .and_then(|d| d.parse::<u32>().ok())
                    .ok_or_else(|| Error::InvalidArgument(format!("unknown test function {s:?}")))?;
                if q > MAX_DEGREE {
                    return Err(Error::InvalidArgument(format!("Hermite degree {q} too large")));
                }
                Ok(TestFunction::Hermite(q))
            }
        }
    }
}

impl Serialize for TestFunction {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TestFunction {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Hermite expansion `f = Σ c_q H_q`, where `q! c_q = E[f(N) H_q(N)]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HermiteExpansion {
    pub coeffs: Vec<f64>,
    pub qmax: u32,
    pub rank: Option<u32>,
    #[serde(rename = "var_fN")]
    pub var_f_n: f64,
    /// `Var f(N) - Σ_{1≤q≤qmax} c_q² q!`, an estimate of the truncated part.
    pub tail_bound: f64,
}

/// Quadrature size used when the caller does not choose one.
pub fn default_nodes(qmax: u32) -> usize {
    (4 * qmax as usize + 64).clamp(2 * qmax as usize + 16, MAX_NODES)
}

pub fn expand<F: Fn(f64) -> f64>(f: F, qmax: u32, quad_nodes: usize) -> Result<HermiteExpansion> {
    if qmax > MAX_EXPANSION_ORDER {
        return Err(Error::InvalidArgument(format!(
            "qmax {qmax} exceeds {MAX_EXPANSION_ORDER}"
        )));
    }
    if quad_nodes < 2 * qmax as usize + 16 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2·qmax+16 = {} nodes, got {quad_nodes}",
            2 * qmax + 16
        )));
    }
    let rule = GaussHermite::new(quad_nodes)?;
    let values: Vec<f64> = rule.nodes.iter().map(|&x| f(x)).collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "f is not finite at node {}",
            rule.nodes[i]
        )));
    }
    let q_len = qmax as usize + 1;
    let mut proj = vec![CompensatedSum::new(); q_len];
    let mut mean = CompensatedSum::new();
    let mut second = CompensatedSum::new();
    let mut he = vec![0.0; q_len];
    for ((&x, &w), &fx) in rule.nodes.iter().zip(&rule.weights).zip(&values) {
        normalized_hermite_all(x, &mut he);
        for (p, h) in proj.iter_mut().zip(&he) {
            p.add(w * fx * h);
        }
        mean.add(w * fx);
        second.add(w * fx * fx);
    }
    let mean = mean.value();
    let var_f_n = (second.value() - mean * mean).max(0.0);
    // E[f he_q] is the coefficient in the orthonormal basis; c_q = E[f he_q]/√q!.
    let proj: Vec<f64> = proj.iter().map(|p| p.value()).collect();
    let coeffs: Vec<f64> = proj
        .iter()
        .enumerate()
        .map(|(q, p)| p / factorial(q as u32).sqrt())
        .collect();
    let explained: f64 = proj.iter().skip(1).map(|p| p * p).sum();
    let tail = var_f_n - explained;
    if tail < -1e-8 {
        return Err(Error::InsufficientResolution(format!(
            "Parseval defect {tail:.3e}: increase the number of quadrature nodes"
        )));
    }
    let mut exp = HermiteExpansion {
        coeffs,
        qmax,
        rank: None,
        var_f_n,
        tail_bound: tail.max(0.0),
    };
    exp.rank = hermite_rank(&exp, DEFAULT_RANK_TOL).ok();
    Ok(exp)
}

impl HermiteExpansion {
    pub fn of(f: TestFunction, qmax: u32) -> Result<Self> {
        expand(|x| f.eval(x), qmax, default_nodes(qmax))
    }

    /// `c_q² q!`, the variance carried by chaos `q`.
    pub fn chaos_variance(&self, q: u32) -> f64 {
        let c = self.coeffs[q as usize];
        c * c * factorial(q)
    }

    /// Coefficient of the derivative: `f' = Σ q c_q H_{q-1}`.
    pub fn derivative_coeffs(&self) -> Vec<f64> {
        (1..self.coeffs.len())
            .map(|q| q as f64 * self.coeffs[q])
            .collect()
    }
}

/// Smallest `q ≥ 1` with `|c_q|·√(q!) > rank_tol·√Var f(N)`.
pub fn hermite_rank(exp: &HermiteExpansion, rank_tol: f64) -> Result<u32> {
    let scale = exp.var_f_n.sqrt();
    if scale <= 1e-14 * (exp.coeffs[0].abs() + 1.0) {
        return Err(Error::ConstantFunction);
    }
    (1..=exp.qmax)
        .find(|&q| exp.coeffs[q as usize].abs() * factorial(q).sqrt() > rank_tol * scale)
        .ok_or_else(|| {
            Error::InsufficientResolution(format!("Hermite rank exceeds qmax = {}", exp.qmax))
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn low_order_values() {
        assert_eq!(hermite_eval(1, 2.0).unwrap(), 2.0);
        assert_eq!(hermite_eval(2, 2.0).unwrap(), 3.0);
        assert_eq!(hermite_eval(3, 2.0).unwrap(), 2.0);
        assert!(hermite_eval(61, 0.0).is_err());
    }

    #[test]
    fn quadrature_weights_sum_to_one() {
        let r = GaussHermite::new(40).unwrap();
        assert_abs_diff_eq!(r.weights.iter().sum::<f64>(), 1.0, epsilon = 1e-13);
        assert_abs_diff_eq!(r.expect(|x| x.powi(4)), 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.expect(|x| x.powi(6)), 15.0, epsilon = 1e-11);
    }

    #[test]
    fn quartic_expansion() {
        let e = HermiteExpansion::of(TestFunction::Quartic, 6).unwrap();
        let want = [3.0, 0.0, 6.0, 0.0, 1.0, 0.0, 0.0];
        for (c, w) in e.coeffs.iter().zip(want) {
            assert_abs_diff_eq!(*c, w, epsilon = 1e-12);
        }
        assert_eq!(e.rank, Some(2));
        assert_abs_diff_eq!(e.var_f_n, 96.0, epsilon = 1e-10);
    }

    #[test]
    fn constant_has_no_rank() {
        let e = expand(|_| 5.0, 4, 32).unwrap();
        assert!(matches!(hermite_rank(&e, 1e-10), Err(Error::ConstantFunction)));
        assert!(expand(|_| 5.0, 4, 8).is_err());
    }

    #[test]
    fn names_round_trip() {
        for s in ["square", "quartic", "arctan", "hermite:3"] {
            let f: TestFunction = s.parse().unwrap();
            assert_eq!(f.to_string(), s);
        }
        assert!("cubic".parse::<TestFunction>().is_err());
        let js = serde_json::to_string(&TestFunction::Hermite(4)).unwrap();
        assert_eq!(js, "\"hermite:4\"");
    }

    #[test]
    fn derivatives_match_finite_differences() {
        for f in [TestFunction::Square, TestFunction::Quartic, TestFunction::Arctan, TestFunction::Hermite(4)] {
            for &x in &[-1.3, 0.2, 2.1] {
                let h = 1e-5;
                let d1 = (f.eval(x + h) - f.eval(x - h)) / (2.0 * h);
                let d2 = (f.d1(x + h) - f.d1(x - h)) / (2.0 * h);
                assert!((f.d1(x) - d1).abs() < 1e-6 * (1.0 + d1.abs()), "{f} d1 at {x}");
                assert!((f.d2(x) - d2).abs() < 1e-6 * (1.0 + d2.abs()), "{f} d2 at {x}");
            }
        }
    }
}
