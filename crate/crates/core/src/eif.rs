//! Clever covariates, the efficient influence function of the treatment-specific
//! survival curve, and inverse-weight diagnostics.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{Arm, SurvivalDataset};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nuisance::Predictions;
use crate::scalar::{mean, Scalar};

/// Floor applied to `S_N(k)` before it is used as a denominator.
pub const SURVIVAL_FLOOR: f64 = 1e-12;

/// Clever covariates `h[i][k][t']` for target times `t' = 1..=t_max`.
///
/// Values are stored for every `k <= t_max` evaluated at treatment `a`, which is
/// what the hazard update needs; [`CleverTensor::observed`] applies the
/// `I(A_i = a)` and `k <= t_tilde_i` restrictions of the observed-data rows.
#[derive(Debug, Clone, PartialEq)]
pub struct CleverTensor<F> {
    arm: Arm,
    t_max: usize,
    t_tilde: Vec<usize>,
    in_arm: Vec<bool>,
    values: Vec<F>,
}

impl<F: Scalar> CleverTensor<F> {
    /// `h_{t'}(k, a, W_i) = -I(k <= t') / (g_a(W_i) S_Ac(k- | a, W_i)) * S_N(t' | a, W_i) / S_N(k | a, W_i)`.
    pub fn build(
        ds: &SurvivalDataset<F>,
        arm: Arm,
        propensity: &[F],
        censor_survival_left: &Matrix<F>,
        survival: &Matrix<F>,
    ) -> Self {
        let n = ds.len();
        let t_max = survival.ncols();
        let floor = F::lit(SURVIVAL_FLOOR);
        let mut values = vec![F::zero(); n * t_max * t_max];
        for i in 0..n {
            let s = survival.row(i);
            let sc = censor_survival_left.row(i);
            let base = i * t_max * t_max;
            for k in 1..=t_max {
                let denom = propensity[i] * sc[k - 1] * s[k - 1].max(floor);
                let scale = -F::one() / denom;
                let row = &mut values[base + (k - 1) * t_max..base + k * t_max];
                for t in k..=t_max {
                    row[t - 1] = scale * s[t - 1];
                }
            }
        }
        Self {
            arm,
            t_max,
            t_tilde: ds.observations().iter().map(|o| o.t_tilde).collect(),
            in_arm: ds.observations().iter().map(|o| o.a == arm).collect(),
            values,
        }
    }

    pub fn arm(&self) -> Arm {
        self.arm
    }

    pub fn t_max(&self) -> usize {
        self.t_max
    }

    pub fn n(&self) -> usize {
        self.t_tilde.len()
    }

    /// Row of `h(i, k, ·)` over target times, at treatment `a` (no observed-data indicator).
    #[inline]
    pub fn counterfactual_row(&self, i: usize, k: usize) -> &[F] {
        let base = i * self.t_max * self.t_max + (k - 1) * self.t_max;
        &self.values[base..base + self.t_max]
    }

    #[inline]
    pub fn counterfactual(&self, i: usize, k: usize, t: usize) -> F {
        self.counterfactual_row(i, k)[t - 1]
    }

    /// Observed-data clever covariate: zero unless `A_i = a`, `k <= t_tilde_i` and `k <= t`.
    #[inline]
    pub fn observed(&self, i: usize, k: usize, t: usize) -> F {
        if self.in_arm[i] && k <= self.t_tilde[i] {
            self.counterfactual(i, k, t)
        } else {
            F::zero()
        }
    }

    pub fn contributes(&self, i: usize) -> bool {
        self.in_arm[i]
    }
}

/// Convenience wrapper building the tensor from initial predictions.
pub fn clever_covariates<F: Scalar>(pred: &Predictions<F>, ds: &SurvivalDataset<F>) -> CleverTensor<F> {
    CleverTensor::build(
        ds,
        pred.arm,
        &pred.propensity,
        &pred.censor_survival_left,
        &pred.survival,
    )
}

/// `D[i][t]` for every subject and target time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EifMatrix<F> {
    pub arm: Arm,
    /// One row per subject, column `t - 1`.
    pub values: Vec<Vec<F>>,
    /// Curve used in the centering term.
    pub psi: Vec<F>,
}

impl<F: Scalar> EifMatrix<F> {
    pub fn n(&self) -> usize {
        self.values.len()
    }

    pub fn t_max(&self) -> usize {
        self.psi.len()
    }

    pub fn column(&self, t: usize) -> Vec<F> {
        self.values.iter().map(|r| r[t - 1]).collect()
    }

    pub fn column_means(&self) -> Vec<F> {
        (1..=self.t_max()).map(|t| mean(&self.column(t))).collect()
    }

    /// `sigma_t = sqrt(mean_i D[i][t]^2)`.
    pub fn sigma(&self) -> Vec<F> {
        (1..=self.t_max())
            .map(|t| {
                let sq: Vec<F> = self.column(t).iter().map(|&d| d * d).collect();
                mean(&sq).sqrt()
            })
            .collect()
    }

    /// Elementwise `self - other`, the influence function of a difference of curves.
    pub fn difference(&self, other: &EifMatrix<F>) -> Result<EifMatrix<F>> {
        if self.n() != other.n() || self.t_max() != other.t_max() {
            return Err(Error::InvalidArgument("EIF shapes differ".into()));
        }
        Ok(EifMatrix {
            arm: self.arm,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a.iter().zip(b).map(|(&x, &y)| x - y).collect())
                .collect(),
            psi: self.psi.iter().zip(&other.psi).map(|(&x, &y)| x - y).collect(),
        })
    }
}

/// Event-process part `D1[i][t] = sum_{k <= t_tilde_i} h(i,k,t) (I(T=k, Δ=1) - λ(k | a, W_i))`.
pub fn event_part<F: Scalar>(h: &CleverTensor<F>, ds: &SurvivalDataset<F>, hazard: &Matrix<F>) -> Vec<Vec<F>> {
    let t_max = h.t_max();
    ds.observations()
        .iter()
        .enumerate()
        .map(|(i, o)| {
            let mut d1 = vec![F::zero(); t_max];
            if !h.contributes(i) {
                return d1;
            }
            for k in 1..=o.t_tilde.min(t_max) {
                let event = if o.delta && k == o.t_tilde { F::one() } else { F::zero() };
                let resid = event - hazard[(i, k - 1)];
                let row = h.counterfactual_row(i, k);
                for t in k..=t_max {
                    d1[t - 1] += row[t - 1] * resid;
                }
            }
            d1
        })
        .collect()
}

/// Full efficient influence values `D = D1 + S_N(t | a, W_i) - psi(t)`.
pub fn eif_matrix<F: Scalar>(
    h: &CleverTensor<F>,
    ds: &SurvivalDataset<F>,
    hazard: &Matrix<F>,
    survival: &Matrix<F>,
    psi: &[F],
) -> Result<EifMatrix<F>> {
    if psi.len() != h.t_max() || survival.ncols() != h.t_max() {
        return Err(Error::InvalidArgument(format!(
            "curve length {} does not match t_max {}",
            psi.len(),
            h.t_max()
        )));
    }
    let mut values = event_part(h, ds, hazard);
    for (i, row) in values.iter_mut().enumerate() {
        for (t, d) in row.iter_mut().enumerate() {
            *d += survival[(i, t)] - psi[t];
        }
    }
    Ok(EifMatrix {
        arm: h.arm(),
        values,
        psi: psi.to_vec(),
    })
}

/// Distribution of `1 / (g_a(W_i) S_Ac(t | a, W_i))` at one time point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSummary {
    pub t: usize,
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub q1: f64,
    pub q3: f64,
    pub max: f64,
}

/// Linear-interpolation quantile of sorted data (type 7).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn inverse_weight_summary<F: Scalar>(pred: &Predictions<F>) -> Vec<WeightSummary> {
    (1..=pred.t_max())
        .map(|t| {
            let mut w: Vec<f64> = (0..pred.n())
                .map(|i| 1.0 / (pred.propensity[i] * pred.censor_survival[(i, t - 1)]).as_f64())
                .collect();
            let n = w.len() as f64;
            let m = w.iter().sum::<f64>() / n;
            let var = if w.len() > 1 {
                w.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            w.sort_by(f64::total_cmp);
            WeightSummary {
                t,
                mean: m,
                sd: var.sqrt(),
                min: w[0],
                q1: quantile_sorted(&w, 0.25),
                q3: quantile_sorted(&w, 0.75),
                max: w[w.len() - 1],
            }
        })
        .collect()
}

/// CSV with columns `Time,Mean,St.Dev.,Min,Pctl(25),Pctl(75),Max`.
pub fn write_weight_summary_csv<W: Write>(rows: &[WeightSummary], out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Numerical(format!("csv write: {e}"));
    wtr.write_record(["Time", "Mean", "St.Dev.", "Min", "Pctl(25)", "Pctl(75)", "Max"])
        .map_err(io)?;
    for r in rows {
        wtr.write_record(&[
            r.t.to_string(),
            r.mean.to_string(),
            r.sd.to_string(),
            r.min.to_string(),
            r.q1.to_string(),
            r.q3.to_string(),
            r.max.to_string(),
        ])
        .map_err(io)?;
    }
    wtr.flush().map_err(|e| Error::Io {
        path: "<weight summary>".into(),
        source: e,
    })
}
