//! Initial estimators of the likelihood components: pooled-logistic hazards for
//! failure and censoring, the propensity score, and hazard/survival transforms.

mod basis;

pub use basis::{Basis, Term};

use serde::{Deserialize, Serialize};

use crate::data::{to_long, Arm, LongRow, SurvivalDataset};
use crate::error::{Error, Result};
use crate::glm::fit_logistic;
use crate::linalg::{self, Matrix};
use crate::scalar::{expit, Scalar};

pub const DEFAULT_HAZARD_BOUNDS: (f64, f64) = (1e-5, 1.0 - 1e-5);
pub const DEFAULT_PROPENSITY_BOUNDS: (f64, f64) = (0.01, 0.99);

/// Column centering/scaling learned on the fitting rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Standardizer<F> {
    center: Vec<F>,
    scale: Vec<F>,
}

impl<F: Scalar> Standardizer<F> {
    fn learn(x: &Matrix<F>) -> Self {
        let n = F::from_count(x.nrows().max(1));
        let d = x.ncols();
        let mut center = vec![F::zero(); d];
        let mut scale = vec![F::one(); d];
        for j in 0..d {
            let col = x.column(j);
            let m = col.iter().copied().sum::<F>() / n;
            let var = col.iter().map(|&v| (v - m) * (v - m)).sum::<F>() / n;
            // constant columns (intercepts) pass through untouched
            if var > F::lit(1e-24) * (F::one() + m * m) {
                center[j] = m;
                scale[j] = var.sqrt();
            }
        }
        Self { center, scale }
    }

    fn apply(&self, row: &mut [F]) {
        for ((v, &c), &s) in row.iter_mut().zip(&self.center).zip(&self.scale) {
            *v = (*v - c) / s;
        }
    }
}

/// Pooled logistic model for a discrete-time hazard `λ(k | A, W)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardModel<F> {
    pub basis: Basis,
    pub coefficients: Vec<F>,
    standardizer: Standardizer<F>,
    pub bounds: (F, F),
    pub converged: bool,
}

impl<F: Scalar> HazardModel<F> {
    pub fn logit(&self, k: usize, a: Arm, w: &[F], scratch: &mut Vec<F>) -> F {
        self.basis.row_into(k, a, w, scratch);
        self.standardizer.apply(scratch);
        linalg::dot(scratch, &self.coefficients)
    }

    /// Clamped hazard prediction.
    pub fn predict(&self, k: usize, a: Arm, w: &[F]) -> F {
        let mut scratch = Vec::with_capacity(self.basis.len());
        self.predict_with(k, a, w, &mut scratch)
    }

    fn predict_with(&self, k: usize, a: Arm, w: &[F], scratch: &mut Vec<F>) -> F {
        let p = expit(self.logit(k, a, w, scratch));
        p.max(self.bounds.0).min(self.bounds.1)
    }
}

/// Logistic model for `g(W) = P(A = 1 | W)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityModel<F> {
    pub basis: Basis,
    pub coefficients: Vec<F>,
    standardizer: Standardizer<F>,
    pub bounds: (F, F),
    pub converged: bool,
}

impl<F: Scalar> PropensityModel<F> {
    /// Clamped `P(A = 1 | W = w)`.
    pub fn predict(&self, w: &[F]) -> F {
        let mut row = Vec::with_capacity(self.basis.len());
        self.basis.row_into(1, Arm::Control, w, &mut row);
        self.standardizer.apply(&mut row);
        let p = expit(linalg::dot(&row, &self.coefficients));
        p.max(self.bounds.0).min(self.bounds.1)
    }

    /// `P(A = a | W = w)`.
    pub fn predict_arm(&self, w: &[F], a: Arm) -> F {
        let g1 = self.predict(w);
        match a {
            Arm::Treated => g1,
            Arm::Control => F::one() - g1,
        }
    }
}

fn check_bounds<F: Scalar>(bounds: (F, F), what: &str) -> Result<()> {
    if !(bounds.0 > F::zero() && bounds.0 < bounds.1 && bounds.1 < F::one()) {
        return Err(Error::Config(format!(
            "{what} bounds must satisfy 0 < lo < hi < 1, got ({}, {})",
            bounds.0, bounds.1
        )));
    }
    Ok(())
}

fn fit_pooled_hazard<F: Scalar>(
    long: &[LongRow<'_, F>],
    basis: &Basis,
    bounds: (F, F),
    response: impl Fn(&LongRow<'_, F>) -> bool,
) -> Result<HazardModel<F>> {
    check_bounds(bounds, "hazard")?;
    let rows: Vec<&LongRow<'_, F>> = long.iter().filter(|r| r.at_risk).collect();
    if rows.is_empty() {
        return Err(Error::EmptyData("no at-risk person-time rows".into()));
    }
    basis.validate(rows[0].w.len(), false)?;
    let d = basis.len();
    let mut data = Vec::with_capacity(rows.len() * d);
    let mut scratch = Vec::with_capacity(d);
    for r in &rows {
        basis.row_into(r.k, r.a, r.w, &mut scratch);
        data.extend_from_slice(&scratch);
    }
    let mut x = Matrix::from_row_major(rows.len(), d, data)?;
    let standardizer = Standardizer::learn(&x);
    for i in 0..x.nrows() {
        standardizer.apply(x.row_mut(i));
    }
    let y: Vec<F> = rows
        .iter()
        .map(|r| if response(r) { F::one() } else { F::zero() })
        .collect();
    let fit = fit_logistic(&x, &y, None, None)?;
    Ok(HazardModel {
        basis: basis.clone(),
        coefficients: fit.coefficients,
        standardizer,
        bounds,
        converged: fit.converged,
    })
}

/// Pooled logistic regression of `dN` over all at-risk person-time rows.
pub fn fit_failure_hazard<F: Scalar>(
    long: &[LongRow<'_, F>],
    basis: &Basis,
    bounds: (F, F),
) -> Result<HazardModel<F>> {
    fit_pooled_hazard(long, basis, bounds, |r| r.d_n)
}

/// Same as [`fit_failure_hazard`] with `dAc` as the response.
pub fn fit_censor_hazard<F: Scalar>(
    long: &[LongRow<'_, F>],
    basis: &Basis,
    bounds: (F, F),
) -> Result<HazardModel<F>> {
    fit_pooled_hazard(long, basis, bounds, |r| r.d_ac)
}

pub fn fit_propensity<F: Scalar>(
    ds: &SurvivalDataset<F>,
    basis: &Basis,
    bounds: (F, F),
) -> Result<PropensityModel<F>> {
    check_bounds(bounds, "propensity")?;
    basis.validate(ds.n_covariates(), true)?;
    if ds.arm_count(Arm::Treated) == 0 || ds.arm_count(Arm::Control) == 0 {
        return Err(Error::InvalidArgument(
            "propensity fit needs both treatment arms present".into(),
        ));
    }
    let d = basis.len();
    let mut data = Vec::with_capacity(ds.len() * d);
    let mut scratch = Vec::with_capacity(d);
    for o in ds.observations() {
        basis.row_into(1, Arm::Control, &o.w, &mut scratch);
        data.extend_from_slice(&scratch);
    }
    let mut x = Matrix::from_row_major(ds.len(), d, data)?;
    let standardizer = Standardizer::learn(&x);
    for i in 0..x.nrows() {
        standardizer.apply(x.row_mut(i));
    }
    let y: Vec<F> = ds
        .observations()
        .iter()
        .map(|o| if o.a == Arm::Treated { F::one() } else { F::zero() })
        .collect();
    let fit = fit_logistic(&x, &y, None, None)?;
    Ok(PropensityModel {
        basis: basis.clone(),
        coefficients: fit.coefficients,
        standardizer,
        bounds,
        converged: fit.converged,
    })
}

/// `S(t) = prod_{k <= t} (1 - λ(k))` for `t = 1..=len`.
pub fn hazard_to_survival<F: Scalar>(hazard: &[F]) -> Vec<F> {
    let mut s = F::one();
    hazard
        .iter()
        .map(|&l| {
            s *= F::one() - l;
            s
        })
        .collect()
}

/// Inverse of [`hazard_to_survival`] wherever `S(k-1) > 0`; `NaN` elsewhere.
pub fn survival_to_hazard<F: Scalar>(surv: &[F]) -> Vec<F> {
    let mut prev = F::one();
    surv.iter()
        .map(|&s| {
            let l = if prev > F::zero() { F::one() - s / prev } else { F::nan() };
            prev = s;
            l
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceConfig<F> {
    pub failure_basis: Basis,
    pub censor_basis: Basis,
    pub propensity_basis: Basis,
    pub hazard_bounds: (F, F),
    pub propensity_bounds: (F, F),
}

impl<F: Scalar> NuisanceConfig<F> {
    /// Main-terms bases with linear time for both hazards.
    pub fn main_terms(n_covariates: usize) -> Self {
        let mut hazard = Basis::main_terms(n_covariates, true);
        hazard.terms.push(Term::Time { degree: 1 });
        Self {
            failure_basis: hazard.clone(),
            censor_basis: hazard,
            propensity_basis: Basis::main_terms(n_covariates, false),
            hazard_bounds: (F::lit(DEFAULT_HAZARD_BOUNDS.0), F::lit(DEFAULT_HAZARD_BOUNDS.1)),
            propensity_bounds: (
                F::lit(DEFAULT_PROPENSITY_BOUNDS.0),
                F::lit(DEFAULT_PROPENSITY_BOUNDS.1),
            ),
        }
    }
}

/// The fitted likelihood components plus the empirical covariate distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceFit<F> {
    pub failure_hazard: HazardModel<F>,
    pub censor_hazard: HazardModel<F>,
    pub propensity: PropensityModel<F>,
    /// Covariate rows, each carrying mass `1/n`.
    pub empirical_w: Vec<Vec<F>>,
}

pub fn fit_nuisance<F: Scalar>(ds: &SurvivalDataset<F>, cfg: &NuisanceConfig<F>) -> Result<NuisanceFit<F>> {
    let long = to_long(ds);
    Ok(NuisanceFit {
        failure_hazard: fit_failure_hazard(&long, &cfg.failure_basis, cfg.hazard_bounds)?,
        censor_hazard: fit_censor_hazard(&long, &cfg.censor_basis, cfg.hazard_bounds)?,
        propensity: fit_propensity(ds, &cfg.propensity_basis, cfg.propensity_bounds)?,
        empirical_w: ds.observations().iter().map(|o| o.w.clone()).collect(),
    })
}

/// Per-subject grids under treatment fixed to `a`, columns indexed by `t - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions<F> {
    pub arm: Arm,
    /// `λ_N(k | a, W_i)`.
    pub hazard: Matrix<F>,
    /// `S_N(t | a, W_i)`.
    pub survival: Matrix<F>,
    /// `S_Ac(t | a, W_i)`.
    pub censor_survival: Matrix<F>,
    /// Left limit `S_Ac(k- | a, W_i) = S_Ac(k - 1 | a, W_i)`, with `S_Ac(0) = 1`.
    pub censor_survival_left: Matrix<F>,
    /// `P(A = a | W_i)`.
    pub propensity: Vec<F>,
}

impl<F: Scalar> Predictions<F> {
    pub fn n(&self) -> usize {
        self.hazard.nrows()
    }

    pub fn t_max(&self) -> usize {
        self.hazard.ncols()
    }

    /// Builds predictions from explicit grids, e.g. for hand-constructed cases.
    pub fn from_parts(
        arm: Arm,
        hazard: Matrix<F>,
        censor_hazard: &Matrix<F>,
        propensity: Vec<F>,
    ) -> Result<Self> {
        let (n, t) = (hazard.nrows(), hazard.ncols());
        if censor_hazard.nrows() != n || censor_hazard.ncols() != t || propensity.len() != n {
            return Err(Error::InvalidArgument("prediction grid shapes disagree".into()));
        }
        let mut survival = Matrix::zeros(n, t);
        let mut censor_survival = Matrix::zeros(n, t);
        let mut censor_left = Matrix::zeros(n, t);
        for i in 0..n {
            survival.row_mut(i).copy_from_slice(&hazard_to_survival(hazard.row(i)));
            let sc = hazard_to_survival(censor_hazard.row(i));
            let left = censor_left.row_mut(i);
            if t > 0 {
                left[0] = F::one();
                left[1..].copy_from_slice(&sc[..t - 1]);
            }
            censor_survival.row_mut(i).copy_from_slice(&sc);
        }
        Ok(Self {
            arm,
            hazard,
            survival,
            censor_survival,
            censor_survival_left: censor_left,
            propensity,
        })
    }
}

pub fn predict_matrices<F: Scalar>(fit: &NuisanceFit<F>, ds: &SurvivalDataset<F>, a: Arm) -> Predictions<F> {
    let (n, t_max) = (ds.len(), ds.t_max());
    let mut hazard = Matrix::zeros(n, t_max);
    let mut censor = Matrix::zeros(n, t_max);
    let mut scratch = Vec::new();
    let mut g = Vec::with_capacity(n);
    for (i, o) in ds.observations().iter().enumerate() {
        for k in 1..=t_max {
            hazard[(i, k - 1)] = fit.failure_hazard.predict_with(k, a, &o.w, &mut scratch);
            censor[(i, k - 1)] = fit.censor_hazard.predict_with(k, a, &o.w, &mut scratch);
        }
        g.push(fit.propensity.predict_arm(&o.w, a));
    }
    Predictions::from_parts(a, hazard, &censor, g).expect("shapes built consistently")
}
