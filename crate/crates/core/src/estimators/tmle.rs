//! Classic TMLE: one scalar logistic fluctuation per target time, iterated.

use serde::{Deserialize, Serialize};

use super::{event_loglik, CurveEstimate, Method, TargetingTrace, TraceStep};
use crate::data::SurvivalDataset;
use crate::eif::{EifMatrix, SURVIVAL_FLOOR};
use crate::error::{Error, Result};
use crate::glm::fit_logistic;
use crate::linalg::Matrix;
use crate::nuisance::{hazard_to_survival, Predictions};
use crate::scalar::{expit, mean, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterativeOptions<F> {
    pub max_iter: usize,
    /// Exit once `|mean_i D[i][t]| <= tol * max(sigma_t, sigma_floor)`.
    pub tol: F,
    /// Lower bound on the EIF scale. [`tmle_curve_iterative`] raises it to the
    /// largest initial `sigma_t` so that columns without any possible event,
    /// where `|mean| / sigma_t` cannot shrink, still terminate.
    pub sigma_floor: F,
}

impl<F: Scalar> Default for IterativeOptions<F> {
    fn default() -> Self {
        Self {
            max_iter: 50,
            tol: F::lit(1e-3),
            sigma_floor: F::zero(),
        }
    }
}

/// Result of targeting a single time point.
#[derive(Debug, Clone, PartialEq)]
pub struct TmlePoint<F> {
    pub t: usize,
    pub psi: F,
    /// Updated hazard `λ*(k | a, W_i)`, n x t_max.
    pub hazard: Matrix<F>,
    /// `D[i][t]` at the targeted fit.
    pub eif: Vec<F>,
    pub trace: TargetingTrace<F>,
    pub converged: bool,
}

struct PointState<F> {
    survival: Vec<Vec<F>>,
    clever: Vec<Vec<F>>,
    eif: Vec<F>,
    psi: F,
}

/// Survival rows, clever covariates `h_t(k)` for `k <= t`, and `D[·][t]`.
fn evaluate<F: Scalar>(
    ds: &SurvivalDataset<F>,
    pred: &Predictions<F>,
    logits: &Matrix<F>,
    t: usize,
) -> PointState<F> {
    let floor = F::lit(SURVIVAL_FLOOR);
    let n = ds.len();
    let survival: Vec<Vec<F>> = (0..n)
        .map(|i| {
            let lam: Vec<F> = logits.row(i).iter().map(|&l| expit(l)).collect();
            hazard_to_survival(&lam)
        })
        .collect();
    let clever: Vec<Vec<F>> = (0..n)
        .map(|i| {
            let s = &survival[i];
            (1..=t)
                .map(|k| {
                    -s[t - 1]
                        / (pred.propensity[i]
                            * pred.censor_survival_left[(i, k - 1)]
                            * s[k - 1].max(floor))
                })
                .collect()
        })
        .collect();
    let psi = mean(&survival.iter().map(|s| s[t - 1]).collect::<Vec<_>>());
    let eif = ds
        .observations()
        .iter()
        .enumerate()
        .map(|(i, o)| {
            let mut d = survival[i][t - 1] - psi;
            if o.a == pred.arm {
                for k in 1..=o.t_tilde.min(t) {
                    let event = if o.delta && k == o.t_tilde { F::one() } else { F::zero() };
                    d += clever[i][k - 1] * (event - expit(logits[(i, k - 1)]));
                }
            }
            d
        })
        .collect();
    PointState {
        survival,
        clever,
        eif,
        psi,
    }
}

/// Iterative TMLE of `Ψ_a(t)` along the logistic submodel with clever covariate `h_t`.
pub fn tmle_iterative<F: Scalar>(
    ds: &SurvivalDataset<F>,
    pred: &Predictions<F>,
    t: usize,
    opts: &IterativeOptions<F>,
) -> Result<TmlePoint<F>> {
    super::check_alignment(ds, pred)?;
    if t == 0 || t > ds.t_max() {
        return Err(Error::InvalidArgument(format!(
            "target time {t} outside 1..={}",
            ds.t_max()
        )));
    }
    let mut logits = super::initial_logits(pred);
    let mut trace = TargetingTrace::default();
    let mut converged = false;
    let mut state = evaluate(ds, pred, &logits, t);
    for iter in 0..=opts.max_iter {
        let m = mean(&state.eif);
        let sigma = mean(&state.eif.iter().map(|&d| d * d).collect::<Vec<_>>()).sqrt();
        let loglik = event_loglik(ds, pred.arm, &logits);
        if m.abs() <= opts.tol * sigma.max(opts.sigma_floor) {
            trace.steps.push(TraceStep {
                epsilon: vec![F::zero()],
                norm: F::zero(),
                max_abs_mean_eif: m.abs(),
                loglik,
            });
            converged = true;
            break;
        }
        if iter == opts.max_iter {
            break;
        }
        // arm-a person-time rows up to t carry the fluctuation
        let mut h = Vec::new();
        let mut y = Vec::new();
        let mut offset = Vec::new();
        for (i, o) in ds.observations().iter().enumerate() {
            if o.a != pred.arm {
                continue;
            }
            for k in 1..=o.t_tilde.min(t) {
                h.push(state.clever[i][k - 1]);
                y.push(if o.delta && k == o.t_tilde { F::one() } else { F::zero() });
                offset.push(logits[(i, k - 1)]);
            }
        }
        if h.is_empty() {
            break;
        }
        let x = Matrix::from_row_major(h.len(), 1, h)?;
        let fit = fit_logistic(&x, &y, Some(&offset), None)?;
        let eps = fit.coefficients[0];
        trace.steps.push(TraceStep {
            epsilon: vec![eps],
            norm: eps.abs(),
            max_abs_mean_eif: m.abs(),
            loglik,
        });
        if eps == F::zero() {
            break;
        }
        for i in 0..pred.n() {
            for k in 1..=t {
                logits[(i, k - 1)] += eps * state.clever[i][k - 1];
            }
        }
        state = evaluate(ds, pred, &logits, t);
    }
    let mut hazard = logits;
    for i in 0..hazard.nrows() {
        for v in hazard.row_mut(i) {
            *v = expit(*v);
        }
    }
    debug_assert!(state.survival.len() == ds.len());
    Ok(TmlePoint {
        t,
        psi: state.psi,
        hazard,
        eif: state.eif,
        trace,
        converged,
    })
}

/// Runs [`tmle_iterative`] separately for every `t`; each time point has its own
/// targeted hazard, so the resulting curve need not be monotone.
pub fn tmle_curve_iterative<F: Scalar>(
    ds: &SurvivalDataset<F>,
    pred: &Predictions<F>,
    opts: &IterativeOptions<F>,
) -> Result<CurveEstimate<F>> {
    super::check_alignment(ds, pred)?;
    let t_max = ds.t_max();
    let scale = super::initial_eif(ds, pred)?
        .sigma()
        .into_iter()
        .fold(F::zero(), F::max);
    let opts = &IterativeOptions {
        sigma_floor: opts.sigma_floor.max(scale),
        ..opts.clone()
    };
    let mut psi = Vec::with_capacity(t_max);
    let mut columns = Vec::with_capacity(t_max);
    let mut trace = TargetingTrace::default();
    let mut converged = true;
    for t in 1..=t_max {
        let point = tmle_iterative(ds, pred, t, opts)?;
        psi.push(point.psi);
        columns.push(point.eif);
        converged &= point.converged;
        trace.steps.extend(point.trace.steps);
    }
    let values = (0..ds.len())
        .map(|i| columns.iter().map(|c| c[i]).collect())
        .collect();
    Ok(CurveEstimate {
        method: Method::Tmle,
        arm: pred.arm,
        eif: Some(EifMatrix {
            arm: pred.arm,
            values,
            psi: psi.clone(),
        }),
        psi,
        se: None,
        trace: Some(trace),
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Arm;
    use crate::estimators::plugin_curve;
    use crate::estimators::testkit::{dataset, predictions, rng};

    fn case(seed: u64) -> (SurvivalDataset<f64>, Predictions<f64>) {
        let mut r = rng(seed);
        let ds = dataset(&mut r, 80, 5);
        let pred = predictions(&mut r, &ds, Arm::Control, 0.05, 0.4);
        (ds, pred)
    }

    #[test]
    fn loose_tolerance_returns_the_plugin() {
        let (ds, pred) = case(4);
        let plug = plugin_curve(&ds, &pred).unwrap();
        let opts = IterativeOptions {
            tol: 1e6,
            ..Default::default()
        };
        for t in 1..=ds.t_max() {
            let p = tmle_iterative(&ds, &pred, t, &opts).unwrap();
            assert!(p.converged);
            assert_eq!(p.trace.iterations(), 0);
            assert!((p.psi - plug.psi[t - 1]).abs() < 1e-12);
        }
    }

    #[test]
    fn targeted_point_solves_its_eif() {
        for seed in 0..4 {
            let (ds, pred) = case(seed);
            let opts = IterativeOptions::default();
            let t = 3;
            let p = tmle_iterative(&ds, &pred, t, &opts).unwrap();
            assert!(p.converged, "seed {seed}");
            let m = mean(&p.eif).abs();
            let rms = (p.eif.iter().map(|d| d * d).sum::<f64>() / p.eif.len() as f64).sqrt();
            assert!(m <= opts.tol * rms, "seed {seed}: {m}");
        }
    }

    #[test]
    fn curve_columns_match_single_points() {
        let (ds, pred) = case(9);
        let opts = IterativeOptions::default();
        let curve = tmle_curve_iterative(&ds, &pred, &opts).unwrap();
        let eif = curve.eif.as_ref().unwrap();
        let floor = crate::estimators::initial_eif(&ds, &pred)
            .unwrap()
            .sigma()
            .into_iter()
            .fold(0.0, f64::max);
        let floored = IterativeOptions {
            sigma_floor: floor,
            ..opts
        };
        for t in 1..=ds.t_max() {
            let p = tmle_iterative(&ds, &pred, t, &floored).unwrap();
            assert_eq!(p.psi, curve.psi[t - 1]);
            assert_eq!(p.eif, eif.column(t));
        }
    }

    #[test]
    fn rejects_out_of_range_times() {
        let (ds, pred) = case(1);
        let opts = IterativeOptions::default();
        assert!(tmle_iterative(&ds, &pred, 0, &opts).is_err());
        assert!(tmle_iterative(&ds, &pred, ds.t_max() + 1, &opts).is_err());
    }
}
