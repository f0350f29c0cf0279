//! Term descriptors for pooled logistic working models.

use serde::{Deserialize, Serialize};

use crate::data::Arm;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One column of a basis expansion of `(t, A, W)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Term {
    Intercept,
    Treatment,
    Covariate { index: usize },
    /// `t^degree`, degree 1 to 3.
    Time { degree: u32 },
    LogTime,
    /// `I(W[covariate] > threshold)`.
    Indicator { covariate: usize, threshold: f64 },
    /// `A * t`.
    TreatmentTime,
    Product { terms: Vec<Term> },
}

impl Term {
    fn uses_time(&self) -> bool {
        match self {
            Term::Time { .. } | Term::LogTime | Term::TreatmentTime => true,
            Term::Product { terms } => terms.iter().any(Term::uses_time),
            _ => false,
        }
    }

    fn uses_treatment(&self) -> bool {
        match self {
            Term::Treatment | Term::TreatmentTime => true,
            Term::Product { terms } => terms.iter().any(Term::uses_treatment),
            _ => false,
        }
    }

    fn max_covariate(&self) -> Option<usize> {
        match self {
            Term::Covariate { index } => Some(*index),
            Term::Indicator { covariate, .. } => Some(*covariate),
            Term::Product { terms } => terms.iter().filter_map(Term::max_covariate).max(),
            _ => None,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Term::Time { degree } if !(1..=3).contains(degree) => Err(Error::Config(format!(
                "time polynomial degree must be 1..=3, got {degree}"
            ))),
            Term::Product { terms } if terms.is_empty() => {
                Err(Error::Config("product term needs at least one factor".into()))
            }
            Term::Product { terms } => terms.iter().try_for_each(Term::validate),
            _ => Ok(()),
        }
    }

    pub fn eval<F: Scalar>(&self, t: usize, a: Arm, w: &[F]) -> F {
        match self {
            Term::Intercept => F::one(),
            Term::Treatment => F::from_u8(a.as_u8()).unwrap_or_else(F::zero),
            Term::Covariate { index } => w[*index],
            Term::Time { degree } => F::from_count(t).powi(*degree as i32),
            Term::LogTime => F::from_count(t).ln(),
            Term::Indicator {
                covariate,
                threshold,
            } => {
                if w[*covariate] > F::lit(*threshold) {
                    F::one()
                } else {
                    F::zero()
                }
            }
            Term::TreatmentTime => F::from_u8(a.as_u8()).unwrap_or_else(F::zero) * F::from_count(t),
            Term::Product { terms } => terms.iter().fold(F::one(), |acc, x| acc * x.eval(t, a, w)),
        }
    }
}

/// Ordered list of terms; the design row is their evaluation in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Basis {
    pub terms: Vec<Term>,
}

impl Basis {
    pub fn new(terms: Vec<Term>) -> Self {
        Self { terms }
    }

    pub fn intercept_only() -> Self {
        Self::new(vec![Term::Intercept])
    }

    /// Intercept, treatment and every covariate as main terms.
    pub fn main_terms(n_covariates: usize, with_treatment: bool) -> Self {
        let mut terms = vec![Term::Intercept];
        if with_treatment {
            terms.push(Term::Treatment);
        }
        terms.extend((0..n_covariates).map(|index| Term::Covariate { index }));
        Self::new(terms)
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Checks the basis against the covariate dimension; `baseline_only`
    /// forbids time and treatment terms (propensity models).
    pub fn validate(&self, n_covariates: usize, baseline_only: bool) -> Result<()> {
        if self.terms.is_empty() {
            return Err(Error::Config("basis has no terms".into()));
        }
        for term in &self.terms {
            term.validate()?;
            if let Some(j) = term.max_covariate() {
                if j >= n_covariates {
                    return Err(Error::Config(format!(
                        "basis references covariate {j} but data has {n_covariates}"
                    )));
                }
            }
            if baseline_only && (term.uses_time() || term.uses_treatment()) {
                return Err(Error::Config(
                    "propensity basis may only use covariate terms".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn row_into<F: Scalar>(&self, t: usize, a: Arm, w: &[F], out: &mut Vec<F>) {
        out.clear();
        out.extend(self.terms.iter().map(|term| term.eval(t, a, w)));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluates_terms() {
        let b = Basis::new(vec![
            Term::Intercept,
            Term::Treatment,
            Term::Covariate { index: 1 },
            Term::Time { degree: 2 },
            Term::LogTime,
            Term::Indicator {
                covariate: 0,
                threshold: 0.75,
            },
            Term::TreatmentTime,
            Term::Product {
                terms: vec![Term::Covariate { index: 0 }, Term::LogTime],
            },
        ]);
        let mut row = Vec::new();
        b.row_into(3, Arm::Treated, &[1.0f64, -2.0], &mut row);
        let l3 = 3f64.ln();
        assert_eq!(row, vec![1.0, 1.0, -2.0, 9.0, l3, 1.0, 3.0, l3]);
        b.validate(2, false).unwrap();
        assert!(b.validate(1, false).is_err());
        assert!(b.validate(2, true).is_err());
    }

    #[test]
    fn json_round_trip() {
        let b = Basis::new(vec![
            Term::Intercept,
            Term::Indicator {
                covariate: 0,
                threshold: 0.75,
            },
            Term::Time { degree: 3 },
        ]);
        let s = serde_json::to_string(&b).unwrap();
        assert!(s.contains("\"type\":\"indicator\""));
        let back: Basis = serde_json::from_str(&s).unwrap();
        assert_eq!(back, b);
        assert!(Basis::new(vec![Term::Time { degree: 4 }]).validate(0, false).is_err());
    }
}
