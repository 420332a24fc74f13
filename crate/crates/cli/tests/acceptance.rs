//! Acceptance criteria, one PASS/FAIL line each. Exits non-zero if any fail.

use std::time::Instant;

use asclt_core::asclt::Verdict;
use asclt_core::covariance::CovarianceModel;
use asclt_core::hermite::factorial;
use asclt_core::kernels::{contraction_norm_sq, ContractionMethod, DenseKernel};
use asclt_core::sim::{empirical_autocovariance, ensemble_map, NormalSource, SamplerKind, StationarySampler};
use asclt_lab::config::{default_config, resolve, ConfigFile};
use asclt_lab::{run, Experiment, RunOutput};

type Check = (bool, String);

fn fgn(h: f64) -> CovarianceModel {
    CovarianceModel::fgn(h).unwrap()
}

fn configured(e: Experiment, edit: impl FnOnce(&mut ConfigFile)) -> asclt_lab::ExperimentConfig {
    let mut f = default_config(e);
    edit(&mut f);
    resolve(f).unwrap()
}

fn execute(e: Experiment, edit: impl FnOnce(&mut ConfigFile)) -> RunOutput {
    run(&configured(e, edit)).unwrap()
}

/// Verdict lines whose name starts with `prefix`, all required consistent.
fn verdicts(out: &RunOutput, prefix: &str) -> Check {
    let hits: Vec<_> = out.report.verdicts.iter().filter(|v| v.name.starts_with(prefix)).collect();
    let ok = !hits.is_empty() && hits.iter().all(|v| v.verdict == Verdict::Consistent);
    let detail = hits.iter().map(|v| format!("{}: {}", v.name, v.detail)).collect::<Vec<_>>().join("; ");
    (ok, detail)
}

fn all(checks: Vec<Check>) -> Check {
    let ok = checks.iter().all(|c| c.0);
    (ok, checks.into_iter().map(|c| c.1).collect::<Vec<_>>().join(" | "))
}

fn sampler_exactness() -> Check {
    let n = 1 << 12;
    let mut worst: f64 = 0.0;
    for h in [0.3, 0.5, 0.7, 0.9] {
        let model = fgn(h);
        let sampler = StationarySampler::new(&model, n, SamplerKind::Auto).unwrap();
        let paths = ensemble_map(2000, |rep| sampler.sample(1, rep));
        for r in 0..=5 {
            let m = empirical_autocovariance(&paths, r).unwrap();
            let want = 0.5 * ((r + 1) as f64).powf(2.0 * h) + 0.5 * ((r - 1) as f64).abs().powf(2.0 * h) - (r as f64).powf(2.0 * h);
            worst = worst.max(((m.mean - want) / m.stderr).abs());
        }
    }
    (worst <= 4.0, format!("max |z| over H, lags 0..5: {worst:.3}"))
}

fn quadruple_sum(model: &CovarianceModel, q: u32, r: u32, n: usize) -> f64 {
    let rho = |d: i64| model.rho(d);
    let n = n as i64;
    let mut p = 0.0;
    for k in 0..n {
        for l in 0..n {
            p += rho(k - l).powi(q as i32);
        }
    }
    p *= factorial(q);
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for l in 0..n {
                    s += (rho(k - l) * rho(i - j)).powi(r as i32) * (rho(k - i) * rho(l - j)).powi((q - r) as i32);
                }
            }
        }
    }
    s / (p * p)
}

fn kernel_oracles() -> Check {
    let mut worst: f64 = 0.0;
    for model in [CovarianceModel::Iid, fgn(0.3), fgn(0.75)] {
        for q in [2u32, 3] {
            for r in 1..q {
                for n in 1..=12 {
                    let lag = contraction_norm_sq(&model, q, r, n, ContractionMethod::LagSum).unwrap().value;
                    let brute = contraction_norm_sq(&model, q, r, n, ContractionMethod::BruteForce).unwrap().value;
                    let direct = quadruple_sum(&model, q, r, n);
                    worst = worst.max((lag - brute).abs()).max((lag - direct).abs());
                }
            }
        }
    }
    (worst <= 1e-10, format!("max |lagsum - brute force| = {worst:.2e}"))
}

fn contraction_lemma() -> Check {
    let dim = 5;
    let mut worst: f64 = 0.0;
    for (mi, model) in [CovarianceModel::Iid, fgn(0.3), fgn(0.75)].into_iter().enumerate() {
        let gram: Vec<Vec<f64>> = (0..dim as i64).map(|i| (0..dim as i64).map(|j| model.rho(i - j)).collect()).collect();
        let mut src = NormalSource::new(2024, mi as u64);
        for _ in 0..100 {
            let mut kernel = || {
                let c = (0..dim * dim).map(|_| src.normal()).collect();
                DenseKernel::symmetric(&model, 2, dim, c).unwrap()
            };
            let (f, g) = (kernel(), kernel());
            let lhs = f.contract(&g, 1).unwrap().norm_sq();
            let rhs = f.contract(&f, 1).unwrap().inner(&g.contract(&g, 1).unwrap()).unwrap();
            // ‖f ⊗_1 g‖² with f ⊗_1 g = F Γ G in matrix form: tr(H Γ Hᵀ Γ).
            let (fc, gc) = (f.coeffs(), g.coeffs());
            let mut h = vec![0.0; dim * dim];
            for a in 0..dim {
                for b in 0..dim {
                    for c in 0..dim {
                        for d in 0..dim {
                            h[a * dim + b] += fc[a * dim + c] * gram[c][d] * gc[d * dim + b];
                        }
                    }
                }
            }
            let mut direct = 0.0;
            for a in 0..dim {
                for b in 0..dim {
                    for a2 in 0..dim {
                        for b2 in 0..dim {
                            direct += h[a * dim + b] * h[a2 * dim + b2] * gram[a][a2] * gram[b][b2];
                        }
                    }
                }
            }
            let scale = lhs.abs().max(1.0);
            worst = worst.max((lhs - rhs).abs() / scale).max((lhs - direct).abs() / scale);
        }
    }
    (worst <= 1e-10, format!("max relative defect over 300 pairs: {worst:.2e}"))
}

fn sigma_limits() -> Check {
    let sub = execute(Experiment::SigmaLimits, |f| {
        f.params.model = Some(fgn(0.3));
        f.n_grid = Some(vec![100_000]);
        f.n_max = None;
    });
    let crit = execute(Experiment::SigmaLimits, |_| {});
    all(vec![verdicts(&sub, "sigma_limit"), verdicts(&crit, "sigma_")])
}

fn delta_exactness() -> Check {
    all([0.2, 0.5, 0.8]
        .into_iter()
        .map(|h| {
            let out = execute(Experiment::DeltaExactness, |f| {
                f.params.model = Some(fgn(h));
                f.n_grid = Some(vec![1024]);
                f.n_max = None;
            });
            let (ok, d) = verdicts(&out, "delta_exactness");
            (ok, format!("H={h}: {d}"))
        })
        .collect())
}

fn fbm_trend() -> Check {
    all([0.2, 0.5, 0.8]
        .into_iter()
        .map(|h| {
            let out = execute(Experiment::AscltFbm, |f| f.params.model = Some(fgn(h)));
            let (ok, d) = verdicts(&out, "ks_trend");
            (ok, format!("H={h}: {d}"))
        })
        .collect())
}

fn subcritical_trend() -> Check {
    let out = execute(Experiment::AscltHermiteSub, |_| {});
    all(vec![verdicts(&out, "ks_trend"), verdicts(&out, "contraction_decay")])
}

fn critical_case() -> Check {
    let out = execute(Experiment::AscltHermiteCrit, |_| {});
    all(vec![verdicts(&out, "contraction_log_rate"), verdicts(&out, "ks_trend")])
}

fn non_gaussian() -> Vec<(&'static str, Check)> {
    let out = execute(Experiment::NonGaussian, |f| f.t_grid = Some(vec![]));
    vec![
        ("9a Z_n second moment", verdicts(&out, "zn_second_moment")),
        ("9b Z_n Cauchy decrease", verdicts(&out, "zn_cauchy")),
        ("9c log-average spread", verdicts(&out, "log_average_spread")),
    ]
}

fn malliavin() -> Check {
    let out = execute(Experiment::MalliavinBounds, |_| {});
    all(vec![verdicts(&out, "variance_identity"), verdicts(&out, "cf_gap"), verdicts(&out, "gebelein")])
}

fn reproducibility() -> Check {
    let cases: Vec<(Experiment, Box<dyn Fn(&mut ConfigFile)>)> = vec![
        (
            Experiment::DeltaExactness,
            Box::new(|f| {
                f.n_grid = Some(vec![64, 256]);
                f.n_max = None;
                f.seeds.as_mut().unwrap().replicates = 300;
            }),
        ),
        (
            Experiment::AscltHermiteSub,
            Box::new(|f| {
                f.n_grid = Some(vec![1 << 10, 1 << 12]);
                f.n_max = None;
                f.seeds.as_mut().unwrap().replicates = 8;
            }),
        ),
        (
            Experiment::NonGaussian,
            Box::new(|f| {
                f.n_grid = Some(vec![16, 256, 4096]);
                f.n_max = None;
                f.seeds.as_mut().unwrap().replicates = 10;
            }),
        ),
    ];
    let mut diffs = Vec::new();
    for (e, edit) in cases {
        let reports: Vec<String> = [1usize, 4]
            .into_iter()
            .map(|w| {
                let mut cfg = configured(e, &edit);
                cfg.workers = Some(w);
                run(&cfg).unwrap().report_json()
            })
            .collect();
        if reports[0] != reports[1] {
            diffs.push(e.name());
        }
    }
    (diffs.is_empty(), format!("report.json differs between 1 and 4 workers for {diffs:?}"))
}

fn main() {
    let criteria: Vec<(&str, fn() -> Check)> = vec![
        ("1 sampler exactness", sampler_exactness),
        ("2 kernel oracle equivalence", kernel_oracles),
        ("3 contraction identity", contraction_lemma),
        ("4 sigma limits", sigma_limits),
        ("5 delta exactness", delta_exactness),
        ("6 fbm ASCLT trend", fbm_trend),
        ("7 subcritical ASCLT trend", subcritical_trend),
        ("8 critical case", critical_case),
    ];
    let mut failed = 0;
    let mut report = |name: &str, (ok, detail): Check, secs: f64| {
        if !ok {
            failed += 1;
        }
        println!("{} {name} ({secs:.1} s): {detail}", if ok { "PASS" } else { "FAIL" });
    };
    for (name, f) in criteria {
        let t = Instant::now();
        let c = f();
        report(name, c, t.elapsed().as_secs_f64());
    }
    let t = Instant::now();
    let ng = non_gaussian();
    let secs = t.elapsed().as_secs_f64();
    for (name, c) in ng {
        report(name, c, secs);
    }
    for (name, f) in [("10 Malliavin identities", malliavin as fn() -> Check), ("11 reproducibility", reproducibility)] {
        let t = Instant::now();
        let c = f();
        report(name, c, t.elapsed().as_secs_f64());
    }
    println!("{failed} criteria failed");
    if failed > 0 {
        std::process::exit(1);
    }
}
