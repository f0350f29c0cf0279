//! One-step TMLE: a recursion of small norm-bounded logistic fluctuations of a
//! single hazard, with one clever-covariate column per target time. The output is
//! the plug-in of one survival matrix and is therefore monotone.

use serde::{Deserialize, Serialize};

use super::{event_loglik, initial_logits, plugin_psi, CurveEstimate, Method, TargetingTrace, TraceStep};
use crate::data::SurvivalDataset;
use crate::eif::{eif_matrix, CleverTensor};
use crate::error::{Error, Result};
use crate::glm::{constrained_step, Penalty};
use crate::linalg::{dot, Matrix};
use crate::nuisance::{hazard_to_survival, Predictions};
use crate::scalar::{expit, Scalar};

/// Consecutive increases of `max_t |mean EIF|` that trigger halving the step bound.
const OSCILLATION_WINDOW: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneStepOptions<F> {
    /// Norm bound on each fluctuation vector.
    pub step_bound: F,
    /// Relative EIF tolerance: exit once
    /// `max_t |mean D_t| <= max(stop_norm, 1/(sqrt(n) ln n)) * max_t sigma_t`.
    pub stop_norm: F,
    pub penalty: Penalty,
    pub max_iter: usize,
}

impl<F: Scalar> Default for OneStepOptions<F> {
    fn default() -> Self {
        Self {
            step_bound: F::lit(0.01),
            stop_norm: F::lit(1e-3),
            penalty: Penalty::L2,
            max_iter: 500,
        }
    }
}

/// Tolerance on `max_t |mean D_t|` given the EIF scale `sigma = max_t sigma_t`.
///
/// The scale is the curve's, not the column's: where no event can occur yet every
/// `D[i][t]` has the same sign, so `|mean| / sigma_t` stays of order one however
/// far the hazard is pushed towards zero.
pub fn eif_tolerance<F: Scalar>(sigma: F, n: usize, stop_norm: F) -> F {
    let nf = F::from_count(n.max(2));
    let rate = F::one() / (nf.sqrt() * nf.ln());
    sigma * stop_norm.max(rate)
}

fn survival_from_logits<F: Scalar>(logits: &Matrix<F>) -> (Matrix<F>, Matrix<F>) {
    let (n, t) = (logits.nrows(), logits.ncols());
    let mut hazard = Matrix::zeros(n, t);
    let mut survival = Matrix::zeros(n, t);
    for i in 0..n {
        for (h, &l) in hazard.row_mut(i).iter_mut().zip(logits.row(i)) {
            *h = expit(l);
        }
        let s = hazard_to_survival(hazard.row(i));
        survival.row_mut(i).copy_from_slice(&s);
    }
    (hazard, survival)
}

pub fn tmle_one_step<F: Scalar>(
    ds: &SurvivalDataset<F>,
    pred: &Predictions<F>,
    opts: &OneStepOptions<F>,
) -> Result<CurveEstimate<F>> {
    super::check_alignment(ds, pred)?;
    if !(opts.step_bound > F::zero()) || !(opts.stop_norm >= F::zero()) {
        return Err(Error::InvalidArgument(
            "step_bound must be positive and stop_norm non-negative".into(),
        ));
    }
    let method = match opts.penalty {
        Penalty::L2 => Method::MossL2,
        Penalty::L1 => Method::MossL1,
    };
    let n = ds.len();
    let t_max = ds.t_max();
    let mut logits = initial_logits(pred);
    let mut bound = opts.step_bound;
    let mut trace = TargetingTrace::default();
    let converged;
    let mut increases = 0usize;
    let mut last_max = F::infinity();

    // response rows never change
    let mut fit_rows = Vec::new();
    let mut y = Vec::new();
    for (i, o) in ds.observations().iter().enumerate() {
        if o.a != pred.arm {
            continue;
        }
        for k in 1..=o.t_tilde {
            fit_rows.push((i, k));
            y.push(if o.delta && k == o.t_tilde { F::one() } else { F::zero() });
        }
    }

    let (mut hazard, mut survival) = survival_from_logits(&logits);
    let mut eif;
    let mut iter = 0usize;
    loop {
        let psi = plugin_psi(&survival);
        let h = CleverTensor::build(ds, pred.arm, &pred.propensity, &pred.censor_survival_left, &survival);
        eif = eif_matrix(&h, ds, &hazard, &survival, &psi)?;
        let means = eif.column_means();
        let scale = eif.sigma().into_iter().fold(F::zero(), F::max);
        let max_abs = means.iter().fold(F::zero(), |m, &v| m.max(v.abs()));
        let solved = max_abs <= eif_tolerance(scale, n, opts.stop_norm);
        let loglik = event_loglik(ds, pred.arm, &logits);
        if solved || iter >= opts.max_iter || fit_rows.is_empty() {
            trace.steps.push(TraceStep {
                epsilon: vec![F::zero(); t_max],
                norm: F::zero(),
                max_abs_mean_eif: max_abs,
                loglik,
            });
            converged = solved;
            break;
        }

        if max_abs > last_max {
            increases += 1;
            if increases >= OSCILLATION_WINDOW && !trace.bound_halved {
                bound = bound / F::lit(2.0);
                trace.bound_halved = true;
            }
        } else {
            increases = 0;
        }
        last_max = max_abs;

        let mut design = Vec::with_capacity(fit_rows.len() * t_max);
        let mut offset = Vec::with_capacity(fit_rows.len());
        for &(i, k) in &fit_rows {
            design.extend_from_slice(h.counterfactual_row(i, k));
            offset.push(logits[(i, k - 1)]);
        }
        let design = Matrix::from_row_major(fit_rows.len(), t_max, design)?;
        let step = constrained_step(&design, &y, &offset, bound, opts.penalty)?;
        trace.steps.push(TraceStep {
            epsilon: step.epsilon.clone(),
            norm: step.norm,
            max_abs_mean_eif: max_abs,
            loglik,
        });
        iter += 1;
        if step.norm == F::zero() {
            // score vanished at working precision
            converged = true;
            break;
        }
        for i in 0..n {
            for k in 1..=t_max {
                logits[(i, k - 1)] += dot(h.counterfactual_row(i, k), &step.epsilon);
            }
        }
        (hazard, survival) = survival_from_logits(&logits);
    }

    Ok(CurveEstimate {
        method,
        arm: pred.arm,
        psi: eif.psi.clone(),
        eif: Some(eif),
        se: None,
        trace: Some(trace),
        converged,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::data::Arm;
    use crate::estimators::plugin_curve;
    use crate::estimators::testkit::{adversarial, dataset, predictions, rng};

    fn case(seed: u64) -> (SurvivalDataset<f64>, Predictions<f64>) {
        let mut r = rng(seed);
        let ds = dataset(&mut r, 60, 6);
        let pred = predictions(&mut r, &ds, Arm::Treated, 0.05, 0.4);
        (ds, pred)
    }

    #[test]
    fn loose_tolerance_returns_the_plugin() {
        let (ds, pred) = case(1);
        let opts = OneStepOptions {
            stop_norm: 1e6,
            ..Default::default()
        };
        let est = tmle_one_step(&ds, &pred, &opts).unwrap();
        let plug = plugin_curve(&ds, &pred).unwrap();
        assert!(est.converged);
        assert_eq!(est.trace.as_ref().unwrap().iterations(), 0);
        for (a, b) in est.psi.iter().zip(&plug.psi) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn exit_satisfies_the_eif_criterion() {
        for seed in 0..5 {
            let (ds, pred) = case(seed);
            let opts = OneStepOptions::default();
            let est = tmle_one_step(&ds, &pred, &opts).unwrap();
            assert!(est.converged, "seed {seed}");
            let eif = est.eif.as_ref().unwrap();
            let scale = eif.sigma().into_iter().fold(0.0, f64::max);
            let worst = eif.column_means().iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(worst <= eif_tolerance(scale, ds.len(), opts.stop_norm));
        }
    }

    #[test]
    fn loglik_never_decreases_along_the_path() {
        let (ds, pred) = case(7);
        let est = tmle_one_step(&ds, &pred, &OneStepOptions::default()).unwrap();
        let steps = &est.trace.unwrap().steps;
        assert!(steps.len() > 2);
        for w in steps.windows(2) {
            assert!(w[1].loglik >= w[0].loglik - 1e-9, "{} -> {}", w[0].loglik, w[1].loglik);
        }
    }

    #[test]
    fn every_step_respects_the_bound() {
        let (ds, pred) = case(3);
        for penalty in [Penalty::L2, Penalty::L1] {
            let opts = OneStepOptions {
                penalty,
                ..Default::default()
            };
            let est = tmle_one_step(&ds, &pred, &opts).unwrap();
            for s in &est.trace.unwrap().steps {
                assert!(s.norm <= opts.step_bound + 1e-12);
                assert!((penalty.norm(&s.epsilon) - s.norm).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn l1_variant_converges_to_a_monotone_curve() {
        let (ds, pred) = case(11);
        let opts = OneStepOptions {
            penalty: Penalty::L1,
            ..Default::default()
        };
        let est = tmle_one_step(&ds, &pred, &opts).unwrap();
        assert_eq!(est.method, Method::MossL1);
        assert!(est.converged);
        assert!(est.is_monotone());
    }

    #[test]
    fn rejects_bad_options() {
        let (ds, pred) = case(2);
        let bad = OneStepOptions {
            step_bound: 0.0,
            ..Default::default()
        };
        assert!(tmle_one_step(&ds, &pred, &bad).is_err());
    }

    #[test]
    fn tolerance_uses_the_larger_of_the_two_rates() {
        // 1 / (sqrt(100) ln 100) = 0.0217
        assert!((eif_tolerance(2.0, 100, 1e-3) - 2.0 / (10.0 * 100f64.ln())).abs() < 1e-15);
        assert_eq!(eif_tolerance(2.0, 100, 0.5), 1.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn adversarial_fits_stay_monotone(seed in any::<u64>(), n in 2usize..40, t_max in 1usize..8, l1 in any::<bool>()) {
            let mut r = rng(seed);
            let ds = dataset(&mut r, n, t_max);
            let pred = adversarial(&mut r, &ds, Arm::Treated);
            let opts = OneStepOptions {
                penalty: if l1 { Penalty::L1 } else { Penalty::L2 },
                max_iter: 100,
                ..Default::default()
            };
            let est = tmle_one_step(&ds, &pred, &opts).unwrap();
            prop_assert!(est.psi.iter().all(|p| (0.0..=1.0).contains(p)));
            prop_assert!(est.psi.windows(2).all(|w| w[1] <= w[0]));
        }
    }
}
