use asclt_core::covariance::CovarianceModel;
use asclt_core::hermite::factorial;
use asclt_core::kernels::{contraction_norm_sq, kernel_inner, ContractionMethod, DenseKernel};
use asclt_core::numerics::{geometric_grid, linear_fit};
use asclt_core::sim::NormalSource;

fn models() -> Vec<CovarianceModel> {
    vec![
        CovarianceModel::Iid,
        CovarianceModel::fgn(0.3).unwrap(),
        CovarianceModel::fgn(0.75).unwrap(),
    ]
}

/// Direct quadruple sum over `i, j, k, l ∈ 1..=n`, normalized by `(q! Σ_{k,l} ρ^q)²`.
fn quadruple_sum(model: &CovarianceModel, q: u32, r: u32, n: usize) -> f64 {
    let rho = |d: i64| model.rho(d);
    let mut p = 0.0;
    for k in 0..n as i64 {
        for l in 0..n as i64 {
            p += rho(k - l).powi(q as i32);
        }
    }
    p *= factorial(q);
    let mut s = 0.0;
    for i in 0..n as i64 {
        for j in 0..n as i64 {
            for k in 0..n as i64 {
                for l in 0..n as i64 {
                    s += rho(k - l).powi(r as i32)
                        * rho(i - j).powi(r as i32)
                        * rho(k - i).powi((q - r) as i32)
                        * rho(l - j).powi((q - r) as i32);
                }
            }
        }
    }
    s / (p * p)
}

#[test]
fn lag_sum_matches_brute_force() {
    for model in models() {
        for q in [2u32, 3] {
            for r in 1..q {
                for n in 1..=12 {
                    let direct = quadruple_sum(&model, q, r, n);
                    for method in [ContractionMethod::BruteForce, ContractionMethod::LagSum, ContractionMethod::Trace] {
                        let v = contraction_norm_sq(&model, q, r, n, method).unwrap().value;
                        assert!(
                            (v - direct).abs() <= 1e-10,
                            "{model} q={q} r={r} n={n} {method:?}: {v} vs {direct}"
                        );
                    }
                }
            }
        }
    }
}

#[test]
fn trace_matches_lag_sum_at_moderate_n() {
    for model in models() {
        for q in [2u32, 3, 4] {
            for r in 1..q {
                for n in [37usize, 100, 257] {
                    let a = contraction_norm_sq(&model, q, r, n, ContractionMethod::LagSum).unwrap().value;
                    let b = contraction_norm_sq(&model, q, r, n, ContractionMethod::Trace).unwrap().value;
                    assert!((a - b).abs() <= 1e-10 * a.abs().max(1e-3), "{model} q={q} r={r} n={n}: {a} vs {b}");
                }
            }
        }
    }
}

#[test]
fn truncation_bound_is_sound() {
    for model in [CovarianceModel::fgn(0.3).unwrap(), CovarianceModel::fgn(0.6).unwrap()] {
        let n = 400;
        let exact = contraction_norm_sq(&model, 2, 1, n, ContractionMethod::LagSum).unwrap().value;
        for lag in [2usize, 8, 32, 128] {
            let t = contraction_norm_sq(&model, 2, 1, n, ContractionMethod::Truncated { lag }).unwrap();
            let bound = t.truncation_bound;
            assert!((t.value - exact).abs() <= bound, "{model} L={lag}: |{} - {exact}| > {bound}", t.value);
        }
    }
}

fn random_symmetric(model: &CovarianceModel, dim: usize, src: &mut NormalSource) -> DenseKernel {
    let coeffs = (0..dim * dim).map(|_| src.normal()).collect();
    DenseKernel::symmetric(model, 2, dim, coeffs).unwrap()
}

/// `Σ f(a,c) ρ(c-d) g(d,b)` evaluated then normed over every index tuple.
fn contraction_norm_direct(f: &[f64], g: &[f64], gram: &[Vec<f64>], m: usize) -> f64 {
    let mut h = vec![0.0; m * m];
    for a in 0..m {
        for b in 0..m {
            let mut s = 0.0;
            for c in 0..m {
                for d in 0..m {
                    s += f[a * m + c] * gram[c][d] * g[d * m + b];
                }
            }
            h[a * m + b] = s;
        }
    }
    let mut s = 0.0;
    for a in 0..m {
        for b in 0..m {
            for a2 in 0..m {
                for b2 in 0..m {
                    s += h[a * m + b] * h[a2 * m + b2] * gram[a][a2] * gram[b][b2];
                }
            }
        }
    }
    s
}

#[test]
fn first_contraction_identity_on_random_kernels() {
    let dim = 5;
    for (mi, model) in models().into_iter().chain([CovarianceModel::fgn(0.7).unwrap()]).enumerate() {
        let gram: Vec<Vec<f64>> = (0..dim as i64)
            .map(|i| (0..dim as i64).map(|j| model.rho(i - j)).collect())
            .collect();
        let mut src = NormalSource::new(17, mi as u64);
        for _ in 0..100 {
            let f = random_symmetric(&model, dim, &mut src);
            let g = random_symmetric(&model, dim, &mut src);
            let fg = f.contract(&g, 1).unwrap();
            let lhs = fg.norm_sq();
            let rhs = f.contract(&f, 1).unwrap().inner(&g.contract(&g, 1).unwrap()).unwrap();
            let direct = contraction_norm_direct(f.coeffs(), g.coeffs(), &gram, dim);
            let scale = lhs.abs().max(1.0);
            assert!((lhs - rhs).abs() <= 1e-10 * scale, "{model}: {lhs} vs {rhs}");
            assert!((lhs - direct).abs() <= 1e-10 * scale, "{model}: {lhs} vs {direct}");
        }
    }
}

#[test]
fn full_contraction_is_the_inner_product() {
    let model = CovarianceModel::fgn(0.7).unwrap();
    let mut src = NormalSource::new(3, 0);
    let f = random_symmetric(&model, 4, &mut src);
    let g = random_symmetric(&model, 4, &mut src);
    let c = f.contract(&g, 2).unwrap();
    assert_eq!(c.order(), 0);
    assert!((c.coeffs()[0] - f.inner(&g).unwrap()).abs() < 1e-12);
}

#[test]
fn kernels_have_unit_chaos_norm() {
    for model in models() {
        for q in [2u32, 3] {
            for n in geometric_grid(4096, 2.0) {
                let v = factorial(q) * kernel_inner(&model, q, n, n).unwrap();
                assert!((v - 1.0).abs() <= 1e-12, "{model} q={q} n={n}: {v}");
            }
        }
    }
    let v = kernel_inner(&CovarianceModel::Iid, 2, 2, 8).unwrap();
    assert!((v - 0.25).abs() < 1e-15);
}

#[test]
fn critical_inner_products_obey_the_log_bound() {
    let model = CovarianceModel::fgn(0.75).unwrap();
    let grid = geometric_grid(1 << 14, 2.0);
    let mut worst: f64 = 0.0;
    for &k in grid.iter().filter(|&&k| k >= 2) {
        for &l in grid.iter().filter(|&&l| l > k) {
            let c = 2.0 * kernel_inner(&model, 2, k, l).unwrap();
            let b = ((k as f64 * (l as f64).ln()) / (l as f64 * (k as f64).ln())).sqrt();
            worst = worst.max(c.abs() / b);
        }
    }
    assert!(worst < 2.0, "sup ratio {worst}");
}

#[test]
fn subcritical_contraction_norm_decays() {
    let model = CovarianceModel::fgn(0.3).unwrap();
    let ns: Vec<usize> = (6..=14).map(|j| 1usize << j).collect();
    let norms: Vec<f64> = ns
        .iter()
        .map(|&n| contraction_norm_sq(&model, 2, 1, n, ContractionMethod::Trace).unwrap().value.sqrt())
        .collect();
    assert!(norms.windows(2).all(|w| w[1] < w[0]), "{norms:?}");
    let xs: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = norms.iter().map(|v| v.ln()).collect();
    let fit = linear_fit(&xs, &ys).unwrap();
    assert!(fit.slope < 0.0);
}
