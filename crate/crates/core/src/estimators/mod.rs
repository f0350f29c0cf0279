//! The estimator ladder for `Ψ_a(t) = E[P(T > t | A = a, W)]`: Kaplan-Meier,
//! G-computation plug-in, IPCW, estimating equations, the per-time-point
//! iterative TMLE and the one-step TMLE that targets the whole curve.

mod one_step;
mod tmle;

pub use one_step::{eif_tolerance, tmle_one_step, OneStepOptions};
pub use tmle::{tmle_curve_iterative, tmle_iterative, IterativeOptions, TmlePoint};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{Arm, SurvivalDataset};
use crate::eif::{clever_covariates, eif_matrix, EifMatrix};
use crate::error::{Error, Result};
use crate::glm::Penalty;
use crate::linalg::Matrix;
use crate::nuisance::Predictions;
use crate::scalar::{clamp_prob, is_non_increasing, logit, mean, Scalar};

/// Estimator tags as used on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "km")]
    KaplanMeier,
    #[serde(rename = "plugin")]
    Plugin,
    #[serde(rename = "ipcw")]
    Ipcw,
    #[serde(rename = "ee")]
    Ee,
    #[serde(rename = "tmle")]
    Tmle,
    #[serde(rename = "moss-l2")]
    MossL2,
    #[serde(rename = "moss-l1")]
    MossL1,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::KaplanMeier,
        Method::Plugin,
        Method::Ipcw,
        Method::Ee,
        Method::Tmle,
        Method::MossL2,
        Method::MossL1,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Method::KaplanMeier => "km",
            Method::Plugin => "plugin",
            Method::Ipcw => "ipcw",
            Method::Ee => "ee",
            Method::Tmle => "tmle",
            Method::MossL2 => "moss-l2",
            Method::MossL1 => "moss-l1",
        }
    }

    /// Whether the estimate is a plug-in of a survival matrix and so stays in `[0, 1]`.
    pub fn is_plugin(self) -> bool {
        matches!(
            self,
            Method::Plugin | Method::Tmle | Method::MossL2 | Method::MossL1 | Method::KaplanMeier
        )
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.tag() == s)
            .ok_or_else(|| Error::Config(format!("unknown method '{s}'")))
    }
}

/// One targeting iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep<F> {
    pub epsilon: Vec<F>,
    pub norm: F,
    /// `max_t |mean_i D[i][t]|` at the fit the step was computed from.
    pub max_abs_mean_eif: F,
    /// Pooled event-process log-likelihood at that fit.
    pub loglik: F,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TargetingTrace<F> {
    pub steps: Vec<TraceStep<F>>,
    /// Set when the oscillation guard halved the step bound.
    pub bound_halved: bool,
}

impl<F: Scalar> TargetingTrace<F> {
    pub fn iterations(&self) -> usize {
        self.steps.iter().filter(|s| s.norm > F::zero()).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveEstimate<F> {
    pub method: Method,
    pub arm: Arm,
    /// Estimates for `t = 1..=t_max`.
    pub psi: Vec<F>,
    /// Influence values used for inference, when the method has them.
    pub eif: Option<EifMatrix<F>>,
    /// Standard errors supplied directly by the method (Greenwood for Kaplan-Meier).
    pub se: Option<Vec<F>>,
    pub trace: Option<TargetingTrace<F>>,
    pub converged: bool,
}

impl<F: Scalar> CurveEstimate<F> {
    fn new(method: Method, arm: Arm, psi: Vec<F>) -> Self {
        Self {
            method,
            arm,
            psi,
            eif: None,
            se: None,
            trace: None,
            converged: true,
        }
    }

    pub fn t_max(&self) -> usize {
        self.psi.len()
    }

    /// Non-increasing within `1e-12`.
    pub fn is_monotone(&self) -> bool {
        is_non_increasing(&self.psi, F::lit(1e-12))
    }

    pub fn in_unit_interval(&self) -> bool {
        self.psi.iter().all(|&p| p >= F::zero() && p <= F::one())
    }
}

/// Product-limit estimate on the arm-`a` subsample with Greenwood standard errors.
pub fn kaplan_meier<F: Scalar>(ds: &SurvivalDataset<F>, a: Arm) -> Result<CurveEstimate<F>> {
    let t_max = ds.t_max();
    let mut events = vec![0usize; t_max + 1];
    let mut exits = vec![0usize; t_max + 1];
    let mut at_risk = 0usize;
    for o in ds.observations().iter().filter(|o| o.a == a) {
        at_risk += 1;
        exits[o.t_tilde] += 1;
        if o.delta {
            events[o.t_tilde] += 1;
        }
    }
    if at_risk == 0 {
        return Err(Error::EmptyData(format!("arm {a} has no subjects")));
    }
    let mut s = F::one();
    let mut greenwood = F::zero();
    let mut psi = Vec::with_capacity(t_max);
    let mut se = Vec::with_capacity(t_max);
    for t in 1..=t_max {
        let (d, r) = (events[t], at_risk);
        if r > 0 && d > 0 {
            let (df, rf) = (F::from_count(d), F::from_count(r));
            s *= F::one() - df / rf;
            if r > d {
                greenwood += df / (rf * (rf - df));
            }
        }
        psi.push(s);
        se.push(s * greenwood.sqrt());
        at_risk -= exits[t];
    }
    let mut est = CurveEstimate::new(Method::KaplanMeier, a, psi);
    est.se = Some(se);
    Ok(est)
}

/// Mean over subjects of each column of `survival`.
pub fn plugin_psi<F: Scalar>(survival: &Matrix<F>) -> Vec<F> {
    (0..survival.ncols()).map(|t| mean(&survival.column(t))).collect()
}

fn check_alignment<F: Scalar>(ds: &SurvivalDataset<F>, pred: &Predictions<F>) -> Result<()> {
    if pred.n() != ds.len() || pred.t_max() != ds.t_max() {
        return Err(Error::InvalidArgument(format!(
            "predictions are {}x{} but dataset is {}x{}",
            pred.n(),
            pred.t_max(),
            ds.len(),
            ds.t_max()
        )));
    }
    Ok(())
}

/// EIF at the untargeted fit, centered at its own plug-in.
fn initial_eif<F: Scalar>(ds: &SurvivalDataset<F>, pred: &Predictions<F>) -> Result<EifMatrix<F>> {
    let psi = plugin_psi(&pred.survival);
    let h = clever_covariates(pred, ds);
    eif_matrix(&h, ds, &pred.hazard, &pred.survival, &psi)
}

/// G-computation: `psi(t) = mean_i S_N(t | a, W_i)`.
pub fn plugin_curve<F: Scalar>(ds: &SurvivalDataset<F>, pred: &Predictions<F>) -> Result<CurveEstimate<F>> {
    check_alignment(ds, pred)?;
    let mut est = CurveEstimate::new(Method::Plugin, pred.arm, plugin_psi(&pred.survival));
    est.eif = Some(initial_eif(ds, pred)?);
    Ok(est)
}

/// `psi(t) = (1/n) sum_i I(T_i > t, Δ_i = 1, A_i = a) / (S_Ac(T_i | W_i, a) g_a(W_i))`.
///
/// The attached influence values are the centered summands.
pub fn ipcw<F: Scalar>(ds: &SurvivalDataset<F>, pred: &Predictions<F>) -> Result<CurveEstimate<F>> {
    check_alignment(ds, pred)?;
    let t_max = ds.t_max();
    let weights: Vec<F> = ds
        .observations()
        .iter()
        .enumerate()
        .map(|(i, o)| {
            if o.delta && o.a == pred.arm {
                F::one() / (pred.censor_survival[(i, o.t_tilde - 1)] * pred.propensity[i])
            } else {
                F::zero()
            }
        })
        .collect();
    let terms: Vec<Vec<F>> = ds
        .observations()
        .iter()
        .zip(&weights)
        .map(|(o, &wt)| {
            (1..=t_max)
                .map(|t| if o.t_tilde > t { wt } else { F::zero() })
                .collect()
        })
        .collect();
    let psi: Vec<F> = (0..t_max)
        .map(|t| mean(&terms.iter().map(|r| r[t]).collect::<Vec<_>>()))
        .collect();
    let ic = terms
        .into_iter()
        .map(|r| r.into_iter().zip(&psi).map(|(x, &p)| x - p).collect())
        .collect();
    let mut est = CurveEstimate::new(Method::Ipcw, pred.arm, psi.clone());
    est.eif = Some(EifMatrix {
        arm: pred.arm,
        values: ic,
        psi,
    });
    Ok(est)
}

/// IPCW plus the sample mean of the EIF at the initial estimators. Reported unclipped.
pub fn ee<F: Scalar>(ds: &SurvivalDataset<F>, pred: &Predictions<F>) -> Result<CurveEstimate<F>> {
    let base = ipcw(ds, pred)?;
    let d = initial_eif(ds, pred)?;
    let psi: Vec<F> = base
        .psi
        .iter()
        .zip(d.column_means())
        .map(|(&p, m)| p + m)
        .collect();
    let mut est = CurveEstimate::new(Method::Ee, pred.arm, psi);
    est.eif = Some(d);
    Ok(est)
}

/// `logit λ` of the initial hazard, clamped so hand-built 0/1 hazards stay finite.
pub(crate) fn initial_logits<F: Scalar>(pred: &Predictions<F>) -> Matrix<F> {
    let mut logits = Matrix::zeros(pred.n(), pred.t_max());
    for i in 0..pred.n() {
        for (l, &lam) in logits.row_mut(i).iter_mut().zip(pred.hazard.row(i)) {
            *l = logit(clamp_prob(lam));
        }
    }
    logits
}

/// Pooled Bernoulli log-likelihood of the failure process over arm-`a`
/// person-time rows, hazards given on the logit scale.
pub fn event_loglik<F: Scalar>(ds: &SurvivalDataset<F>, arm: Arm, logits: &Matrix<F>) -> F {
    let mut ll = F::zero();
    for (i, o) in ds.observations().iter().enumerate() {
        if o.a != arm {
            continue;
        }
        for k in 1..=o.t_tilde {
            let p = clamp_prob(crate::scalar::expit(logits[(i, k - 1)]));
            ll += if o.delta && k == o.t_tilde {
                p.ln()
            } else {
                (F::one() - p).ln()
            };
        }
    }
    ll
}

/// Runs one estimator by tag. Kaplan-Meier ignores the nuisance predictions.
pub fn estimate<F: Scalar>(
    method: Method,
    ds: &SurvivalDataset<F>,
    pred: &Predictions<F>,
    iterative: &IterativeOptions<F>,
    one_step: &OneStepOptions<F>,
) -> Result<CurveEstimate<F>> {
    match method {
        Method::KaplanMeier => kaplan_meier(ds, pred.arm),
        Method::Plugin => plugin_curve(ds, pred),
        Method::Ipcw => ipcw(ds, pred),
        Method::Ee => ee(ds, pred),
        Method::Tmle => tmle_curve_iterative(ds, pred, iterative),
        Method::MossL2 => tmle_one_step(
            ds,
            pred,
            &OneStepOptions {
                penalty: Penalty::L2,
                ..one_step.clone()
            },
        ),
        Method::MossL1 => tmle_one_step(
            ds,
            pred,
            &OneStepOptions {
                penalty: Penalty::L1,
                ..one_step.clone()
            },
        ),
    }
}
