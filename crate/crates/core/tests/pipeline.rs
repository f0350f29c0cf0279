use survtmle::data::Arm;
use survtmle::estimators::{estimate, plugin_curve, tmle_one_step, IterativeOptions, Method, OneStepOptions};
use survtmle::nuisance::{fit_nuisance, predict_matrices, Basis};
use survtmle::sim::{dgp_nuisance_config, run_study, simulate, DgpConfig, StudyReport};
use survtmle::{Curve, Curve32, Dataset, Dataset32, StudyConfig};

fn interior(report: &StudyReport) -> Vec<usize> {
    (1..=report.t_max)
        .filter(|&t| (0.05..=0.95).contains(&report.oracle[t - 1]))
        .collect()
}

fn mean_abs_bias(report: &StudyReport, m: Method, ts: &[usize]) -> f64 {
    let s = report.method(m).unwrap();
    ts.iter().map(|&t| s.metrics[t - 1].bias.abs()).sum::<f64>() / ts.len() as f64
}

#[test]
fn f32_and_f64_pipelines_agree() {
    let cfg = DgpConfig::default().with_n(300).with_seed(21);
    let ds64: Dataset = simulate(&cfg).unwrap();
    let ds32: Dataset32 = simulate(&cfg).unwrap();
    assert_eq!(ds64.t_max(), ds32.t_max());

    let fit64 = fit_nuisance(&ds64, &dgp_nuisance_config(&cfg)).unwrap();
    let fit32 = fit_nuisance(&ds32, &dgp_nuisance_config(&cfg)).unwrap();
    let c64: Curve = tmle_one_step(&ds64, &predict_matrices(&fit64, &ds64, Arm::Treated), &OneStepOptions::default()).unwrap();
    let c32: Curve32 = tmle_one_step(&ds32, &predict_matrices(&fit32, &ds32, Arm::Treated), &OneStepOptions::default()).unwrap();
    assert!(c32.is_monotone());
    for (a, b) in c64.psi.iter().zip(&c32.psi) {
        assert!((a - *b as f64).abs() < 1e-2, "{a} vs {b}");
    }
}

#[test]
fn every_method_runs_on_simulated_data() {
    let cfg = DgpConfig::default().with_n(250).with_seed(5);
    let ds: Dataset = simulate(&cfg).unwrap();
    let fit = fit_nuisance(&ds, &dgp_nuisance_config(&cfg)).unwrap();
    for arm in Arm::both() {
        let pred = predict_matrices(&fit, &ds, arm);
        for m in Method::ALL {
            let est = estimate(m, &ds, &pred, &IterativeOptions::default(), &OneStepOptions::default()).unwrap();
            assert_eq!(est.psi.len(), ds.t_max());
            assert!(est.psi.iter().all(|p| p.is_finite()), "{m}");
            if matches!(m, Method::KaplanMeier | Method::Plugin | Method::MossL2 | Method::MossL1) {
                assert!(est.is_monotone(), "{m} arm {arm:?}");
            }
        }
    }
}

#[test]
fn one_step_starts_from_the_plugin() {
    let cfg = DgpConfig::default().with_n(200).with_seed(9);
    let ds: Dataset = simulate(&cfg).unwrap();
    let fit = fit_nuisance(&ds, &dgp_nuisance_config(&cfg)).unwrap();
    let pred = predict_matrices(&fit, &ds, Arm::Control);
    let frozen = OneStepOptions {
        max_iter: 0,
        ..Default::default()
    };
    let est = tmle_one_step(&ds, &pred, &frozen).unwrap();
    assert_eq!(est.psi, plugin_curve(&ds, &pred).unwrap().psi);
}

/// A wrong failure-hazard model is rescued by correct propensity and censoring models.
#[test]
fn one_step_is_doubly_robust() {
    let dgp = DgpConfig::default().with_n(2000).with_seed(42);
    let methods = vec![Method::Plugin, Method::MossL2];
    let mut correct: StudyConfig = StudyConfig::new(dgp.clone(), 10, Arm::Treated, methods.clone());
    correct.oracle_draws = 200_000;
    let mut wrong = correct.clone();
    wrong.nuisance.failure_basis = Basis::intercept_only();

    let good = run_study(&correct).unwrap();
    let bad = run_study(&wrong).unwrap();
    let ts = interior(&good);
    assert!(!ts.is_empty());

    let targeted_good = mean_abs_bias(&good, Method::MossL2, &ts);
    let targeted_bad = mean_abs_bias(&bad, Method::MossL2, &ts);
    let plugin_bad = mean_abs_bias(&bad, Method::Plugin, &ts);
    assert!(targeted_bad <= 3.0 * targeted_good, "{targeted_bad} vs {targeted_good}");
    assert!(targeted_bad <= plugin_bad / 3.0, "{targeted_bad} vs plug-in {plugin_bad}");
}
