use asclt_core::asclt::{criteria_diagnostic, il_series_diagnostic, MonteCarlo, Verdict};
use asclt_core::covariance::CovarianceModel;
use asclt_core::hermite::TestFunction;
use asclt_core::sequences::{Regime, SequenceSpec};

fn dyadic(lo: u32, hi: u32) -> Vec<usize> {
    (lo..=hi).map(|j| 1usize << j).collect()
}

#[test]
fn fbm_covariance_condition_recovers_the_hurst_exponent() {
    let spec = SequenceSpec::fbm_scaled(0.3).unwrap();
    let r = criteria_diagnostic(&spec, &dyadic(4, 12)).unwrap();
    let a2 = r.conditions.iter().find(|c| c.name == "A2").unwrap();
    let alpha = a2.fitted_alpha.unwrap();
    let c = a2.fitted_c.unwrap();
    println!("alpha={alpha} C={c}");
    assert!((alpha - 0.3).abs() < 0.05, "{alpha}");
    assert!((c - 1.0).abs() < 0.1, "{c}");
    assert_eq!(a2.verdict, Verdict::Consistent);
    assert!(a2.partial_sums.windows(2).all(|w| w[1] >= w[0]));
}

#[test]
fn subcritical_contractions_decay() {
    let spec = SequenceSpec::hermite_variation(CovarianceModel::fgn(0.3).unwrap(), 2, Regime::Subcritical).unwrap();
    let r = criteria_diagnostic(&spec, &dyadic(4, 12)).unwrap();
    for c in &r.conditions {
        println!("{} {:?} {:?} {:?} {:?}", c.name, c.fitted_alpha, c.fitted_c, c.fitted_log_beta, c.partial_sums);
        assert_eq!(c.verdict, Verdict::Consistent, "{c:?}");
    }
    let a1 = &r.conditions[0];
    assert!(a1.fitted_alpha.unwrap() > 0.0);
}

#[test]
fn critical_and_general_conditions() {
    let crit = SequenceSpec::hermite_variation(CovarianceModel::fgn(0.75).unwrap(), 2, Regime::Critical).unwrap();
    let gen = SequenceSpec::general_f(CovarianceModel::fgn(0.3).unwrap(), TestFunction::Arctan, 20).unwrap();
    for spec in [crit, gen] {
        let r = criteria_diagnostic(&spec, &dyadic(4, 11)).unwrap();
        for c in &r.conditions {
            println!("{} {:?} {:?} {:?}", c.name, c.fitted_alpha, c.fitted_log_beta, c.verdict);
            assert_eq!(c.verdict, Verdict::Consistent, "{c:?}");
        }
    }
}

#[test]
fn supercritical_conditions_are_not_applicable() {
    let spec = SequenceSpec::hermite_variation(CovarianceModel::fgn(0.9).unwrap(), 2, Regime::Supercritical).unwrap();
    let r = criteria_diagnostic(&spec, &dyadic(4, 8)).unwrap();
    assert!(r.conditions.iter().all(|c| c.verdict == Verdict::NotApplicable));
}

#[test]
fn gaussian_il_series_flattens() {
    let spec = SequenceSpec::fbm_scaled(0.5).unwrap();
    let ns = dyadic(2, 12);
    let r = il_series_diagnostic(&spec, &[0.0, 0.5, 1.0, 2.0], &ns, None).unwrap();
    assert!(r.rows[0].mean_sq.iter().all(|v| *v == 0.0));
    for row in &r.rows[1..] {
        println!("t={} beta={:?} {:?}", row.t, row.fitted_beta, row.partial_sums);
        assert!(row.summand.windows(2).all(|w| w[1] < w[0]));
        let inc: Vec<f64> = row.partial_sums.windows(2).map(|w| w[1] - w[0]).collect();
        assert!(inc.windows(2).all(|w| w[1] < w[0]), "{inc:?}");
    }
    assert_eq!(r.verdict, Verdict::Consistent);
}

#[test]
fn supercritical_il_series_is_flagged() {
    let spec = SequenceSpec::hermite_variation(CovarianceModel::fgn(0.9).unwrap(), 2, Regime::Supercritical).unwrap();
    let ns = dyadic(4, 12);
    let mc = MonteCarlo { replicates: 200, master_seed: 1 };
    let r = il_series_diagnostic(&spec, &[1.0], &ns, Some(mc)).unwrap();
    println!("{:?} {:?}", r.rows[0].mean_sq, r.rows[0].fitted_beta);
    assert_eq!(r.verdict, Verdict::Flagged);
    let m = &r.rows[0].mean_sq;
    assert!(m.last().unwrap() > &(0.2 * m[0]));
}
