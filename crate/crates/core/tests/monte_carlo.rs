use asclt_core::asclt::{delta_monte_carlo, exact_gaussian_delta_sq};
use asclt_core::covariance::CovarianceModel;
use asclt_core::hermite::TestFunction;
use asclt_core::malliavin::{cf_gap_estimate, gebelein_check, LagCutoff, MalliavinEvaluator};
use asclt_core::numerics::{variance_with_stderr, MeanStderr};
use asclt_core::sequences::{GSeriesBuilder, Regime, SequenceSpec};
use asclt_core::sim::{
    circulant_eigenvalues, empirical_autocovariance, ensemble_map, sample_stationary, NormalSource, SamplerKind,
    StationarySampler,
};

fn within(m: &MeanStderr, target: f64, k: f64) -> bool {
    (m.mean - target).abs() <= k * m.stderr
}

#[test]
fn both_samplers_reproduce_the_autocovariance() {
    let model = CovarianceModel::fgn(0.7).unwrap();
    let n = 64;
    for kind in [SamplerKind::Circulant, SamplerKind::Cholesky] {
        let sampler = StationarySampler::new(&model, n, kind).unwrap();
        let paths = ensemble_map(10_000, |rep| sampler.sample(11, rep));
        for r in 0..=5 {
            let m = empirical_autocovariance(&paths, r).unwrap();
            assert!(within(&m, model.rho(r), 4.0), "{kind:?} lag {r}: {m:?}");
        }
    }
}

#[test]
fn ensembles_do_not_depend_on_thread_count() {
    let model = CovarianceModel::fgn(0.35).unwrap();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| ensemble_map(16, |rep| sample_stationary(&model, 1000, 5, rep).unwrap().values))
    };
    let a = run(1);
    let b = run(4);
    for (x, y) in a.iter().zip(&b) {
        assert!(x.iter().zip(y).all(|(u, v)| u.to_bits() == v.to_bits()));
    }
}

#[test]
fn fgn_embedding_is_nonnegative() {
    for h in [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9] {
        let model = CovarianceModel::fgn(h).unwrap();
        for j in (8..=20).step_by(3) {
            let min = circulant_eigenvalues(&model, 1 << j).into_iter().fold(f64::INFINITY, f64::min);
            assert!(min >= -1e-10, "H={h} n=2^{j}: {min}");
        }
    }
}

fn specs() -> Vec<SequenceSpec> {
    vec![
        SequenceSpec::fbm_scaled(0.3).unwrap(),
        SequenceSpec::hermite_variation(CovarianceModel::fgn(0.3).unwrap(), 2, Regime::Subcritical).unwrap(),
        SequenceSpec::hermite_variation(CovarianceModel::fgn(0.75).unwrap(), 2, Regime::Critical).unwrap(),
        SequenceSpec::hermite_variation(CovarianceModel::fgn(0.9).unwrap(), 2, Regime::Supercritical).unwrap(),
        SequenceSpec::general_f(CovarianceModel::fgn(0.3).unwrap(), TestFunction::Arctan, 20).unwrap(),
    ]
}

fn series(spec: &SequenceSpec, n: usize, reps: usize, seed: u64) -> Vec<Vec<f64>> {
    let sampler = StationarySampler::new(&spec.model(), n, SamplerKind::Auto).unwrap();
    let builder = GSeriesBuilder::new(spec, n).unwrap();
    ensemble_map(reps, |rep| {
        let mut src = NormalSource::new(seed, rep);
        let mut x = vec![0.0; n];
        sampler.sample_with(&mut src, &mut x);
        builder.values_from(&x).unwrap()
    })
}

#[test]
fn series_have_unit_variance_and_the_exact_covariance() {
    let n = 128;
    let mut rng = NormalSource::new(99, 0);
    let pairs: Vec<(usize, usize)> = (0..20)
        .map(|_| {
            let a = 1 + (rng.uniform() * n as f64) as usize % n;
            let b = 1 + (rng.uniform() * n as f64) as usize % n;
            (a.min(b), a.max(b))
        })
        .collect();
    for spec in specs() {
        let g = series(&spec, n, 4000, 21);
        for k in [1usize, 7, 128] {
            let col: Vec<f64> = g.iter().map(|s| s[k - 1]).collect();
            let sq: Vec<f64> = col.iter().map(|v| v * v).collect();
            let m = MeanStderr::from_samples(&sq);
            assert!(within(&m, 1.0, 4.0), "{spec:?} k={k}: {m:?}");
        }
        for &(k, l) in &pairs {
            let prod: Vec<f64> = g.iter().map(|s| s[k - 1] * s[l - 1]).collect();
            let m = MeanStderr::from_samples(&prod);
            let exact = spec.cross_covariance(k, l).unwrap();
            assert!(within(&m, exact, 4.0), "{spec:?} ({k},{l}): {m:?} vs {exact}");
        }
    }
}

#[test]
fn delta_monte_carlo_agrees_with_the_closed_form() {
    let spec = SequenceSpec::fbm_scaled(0.8).unwrap();
    let ts = [0.5, 1.0, 2.0];
    let ns = [16usize, 256];
    let est = delta_monte_carlo(&spec, &ns, &ts, 3000, 8).unwrap();
    for (row, &n) in est.iter().zip(&ns) {
        for e in row {
            let exact = exact_gaussian_delta_sq(&spec, n, e.t).unwrap();
            assert!(e.mean_sq().z_score(exact).abs() <= 4.0, "n={n} t={}: {:?} vs {exact}", e.t, e.mean_sq());
            for z in &e.per_replicate {
                assert!(z.norm() <= asclt_core::asclt::delta_triangle_bound(n) + 1e-12);
            }
        }
    }
}

#[test]
fn variance_identity_and_cf_gap() {
    for spec in [
        SequenceSpec::hermite_variation(CovarianceModel::fgn(0.3).unwrap(), 2, Regime::Subcritical).unwrap(),
        SequenceSpec::general_f(CovarianceModel::fgn(0.4).unwrap(), TestFunction::Arctan, 20).unwrap(),
    ] {
        let n = 256;
        let eval = MalliavinEvaluator::new(&spec, n).unwrap();
        let sampler = StationarySampler::new(&spec.model(), n, SamplerKind::Auto).unwrap();
        let builder = GSeriesBuilder::new(&spec, n).unwrap();
        let rows = ensemble_map(2000, |rep| {
            let mut src = NormalSource::new(4, rep);
            let mut x = vec![0.0; n];
            sampler.sample_with(&mut src, &mut x);
            let g = *builder.values_from(&x).unwrap().last().unwrap();
            let s = eval.sample(&x, LagCutoff::Full, true).unwrap();
            (g, eval.variance_identity(&x).unwrap(), s.dg_norm_sq, s.d2g_contraction_norm_sq.unwrap())
        });
        let ident: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let m = MeanStderr::from_samples(&ident);
        assert!(within(&m, 1.0, 4.0), "{spec:?}: {m:?}");
        let g: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let dg: Vec<f64> = rows.iter().map(|r| r.2).collect();
        let d2g: Vec<f64> = rows.iter().map(|r| r.3).collect();
        for t in [0.5, 1.0, 2.0] {
            let gap = cf_gap_estimate(n, t, &g, &dg, &d2g).unwrap();
            assert!(gap.cf_gap_mc <= gap.cf_gap_bound + 4.0 * gap.cf_gap_stderr, "{gap:?}");
        }
        let var = variance_with_stderr(&g);
        assert!(within(&var, 1.0, 4.0), "{spec:?}: {var:?}");
    }
}

#[test]
fn gebelein_bound_holds_for_arctan() {
    let model = CovarianceModel::fgn(0.7).unwrap();
    let sampler = StationarySampler::new(&model, 512, SamplerKind::Auto).unwrap();
    let paths = ensemble_map(1000, |rep| sampler.sample(2, rep).values);
    for row in gebelein_check(&model, TestFunction::Arctan, &paths, 20).unwrap() {
        assert!(row.cov_mc.abs() <= row.bound + 4.0 * row.stderr, "{row:?}");
    }
}
