//! Logistic regression with offsets: unconstrained IRLS plus the norm-bounded
//! steps used by the targeting loops.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::scalar::{clamp_prob, expit, Scalar};

/// Coefficient magnitude at which a fit is declared quasi-separated.
pub const COEFFICIENT_CAP: f64 = 20.0;
const MAX_NEWTON: usize = 100;
const MAX_HALVINGS: usize = 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit<F> {
    pub coefficients: Vec<F>,
    pub offset_used: bool,
    pub converged: bool,
    pub iterations: usize,
    pub final_negloglik: F,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Penalty {
    L2,
    L1,
}

impl Penalty {
    pub fn norm<F: Scalar>(self, v: &[F]) -> F {
        match self {
            Penalty::L2 => linalg::norm_l2(v),
            Penalty::L1 => linalg::norm_l1(v),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstrainedStep<F> {
    pub epsilon: Vec<F>,
    /// Norm of `epsilon` in the penalty's geometry.
    pub norm: F,
    /// Euclidean norm of the score `Hᵀ(y - expit(offset))`.
    pub score_norm_at_zero: F,
    /// Whether the norm bound was active.
    pub bound_active: bool,
}

/// Weighted Bernoulli log-likelihood of `y` under `logit p = offset + X beta`.
pub fn loglik<F: Scalar>(x: &Matrix<F>, y: &[F], offset: &[F], weights: Option<&[F]>, beta: &[F]) -> F {
    let mut ll = F::zero();
    for i in 0..x.nrows() {
        let w = weights.map_or(F::one(), |w| w[i]);
        if w == F::zero() {
            continue;
        }
        let eta = offset[i] + linalg::dot(x.row(i), beta);
        let p = clamp_prob(expit(eta));
        ll += w * (y[i] * p.ln() + (F::one() - y[i]) * (F::one() - p).ln());
    }
    ll
}

/// Score vector and Fisher information at `beta`.
fn score_and_information<F: Scalar>(
    x: &Matrix<F>,
    y: &[F],
    offset: &[F],
    weights: Option<&[F]>,
    beta: &[F],
) -> (Vec<F>, Matrix<F>) {
    let d = x.ncols();
    let mut score = vec![F::zero(); d];
    let mut info = Matrix::zeros(d, d);
    for i in 0..x.nrows() {
        let w = weights.map_or(F::one(), |w| w[i]);
        if w == F::zero() {
            continue;
        }
        let row = x.row(i);
        let p = expit(offset[i] + linalg::dot(row, beta));
        let r = w * (y[i] - p);
        let v = w * p * (F::one() - p);
        for a in 0..d {
            let xa = row[a];
            if xa == F::zero() {
                continue;
            }
            score[a] += xa * r;
            let vxa = v * xa;
            for b in a..d {
                info[(a, b)] += vxa * row[b];
            }
        }
    }
    for a in 0..d {
        for b in 0..a {
            info[(a, b)] = info[(b, a)];
        }
    }
    (score, info)
}

fn check_dims<F: Scalar>(x: &Matrix<F>, y: &[F], offset: &[F], weights: Option<&[F]>) -> Result<()> {
    let n = x.nrows();
    if n == 0 {
        return Err(Error::InvalidArgument("logistic fit needs at least one row".into()));
    }
    if y.len() != n || offset.len() != n || weights.is_some_and(|w| w.len() != n) {
        return Err(Error::InvalidArgument(format!(
            "dimension mismatch: X has {n} rows, y {}, offset {}",
            y.len(),
            offset.len()
        )));
    }
    if y.iter().any(|&v| v != F::zero() && v != F::one()) {
        return Err(Error::InvalidArgument("responses must be 0 or 1".into()));
    }
    if weights.is_some_and(|w| w.iter().any(|&v| !(v >= F::zero()))) {
        return Err(Error::InvalidArgument("weights must be non-negative".into()));
    }
    Ok(())
}

/// Maximum-likelihood logistic regression by Newton/IRLS with step halving.
///
/// Iterates stop on an absolute negloglik change below `1e-10` (widened to the
/// type's precision) or after 100 Newton steps. A step that would push any
/// coefficient past magnitude 20 is shortened onto that bound and the fit is
/// returned with `converged = false`.
pub fn fit_logistic<F: Scalar>(
    x: &Matrix<F>,
    y: &[F],
    offset: Option<&[F]>,
    weights: Option<&[F]>,
) -> Result<LogisticFit<F>> {
    let zeros;
    let off = match offset {
        Some(o) => o,
        None => {
            zeros = vec![F::zero(); x.nrows()];
            &zeros
        }
    };
    check_dims(x, y, off, weights)?;
    let d = x.ncols();
    let cap = F::lit(COEFFICIENT_CAP);
    let mut beta = vec![F::zero(); d];
    let mut nll = -loglik(x, y, off, weights, &beta);
    if d == 0 {
        return Ok(LogisticFit {
            coefficients: beta,
            offset_used: offset.is_some(),
            converged: true,
            iterations: 0,
            final_negloglik: nll,
        });
    }
    let mut converged = false;
    let mut capped = false;
    let mut iterations = 0;
    let mut polish = false;
    while iterations < MAX_NEWTON {
        iterations += 1;
        let (score, info) = score_and_information(x, y, off, weights, &beta);
        if score.iter().all(|&s| s == F::zero()) {
            converged = true;
            break;
        }
        let delta = linalg::solve_spd(&info, &score, "logistic information matrix")?;
        let mut step = F::one();
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let cand: Vec<F> = beta.iter().zip(&delta).map(|(&b, &dl)| b + step * dl).collect();
            let cand_nll = -loglik(x, y, off, weights, &cand);
            if cand_nll <= nll {
                accepted = Some((cand, cand_nll));
                break;
            }
            step = step / F::lit(2.0);
        }
        let Some((mut cand, mut cand_nll)) = accepted else {
            // No descent possible at working precision.
            converged = true;
            break;
        };
        if cand.iter().any(|b| b.abs() > cap) {
            let mut s = F::one();
            for (b, c) in beta.iter().zip(&cand) {
                if c.abs() > cap {
                    let dir = *c - *b;
                    let limit = if dir > F::zero() { cap - *b } else { -cap - *b };
                    s = s.min(limit / dir);
                }
            }
            cand = beta
                .iter()
                .zip(&cand)
                .map(|(&b, &c)| (b + s * (c - b)).max(-cap).min(cap))
                .collect();
            cand_nll = -loglik(x, y, off, weights, &cand);
            beta = cand;
            nll = cand_nll;
            capped = true;
            break;
        }
        let change = (nll - cand_nll).abs();
        beta = cand;
        nll = cand_nll;
        if polish {
            converged = true;
            break;
        }
        let tol = F::lit(1e-10).max(F::lit(16.0) * F::epsilon() * nll.abs());
        if change < tol {
            // one more Newton step drives the score to working precision
            polish = true;
        }
    }
    if polish && !capped {
        converged = true;
    }
    if !nll.is_finite() || beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::Numerical("logistic fit produced non-finite values".into()));
    }
    Ok(LogisticFit {
        coefficients: beta,
        offset_used: offset.is_some(),
        converged: converged && !capped,
        iterations,
        final_negloglik: nll,
    })
}

/// Euclidean projection onto `{v : ||v||_1 <= radius}` (sort-based soft threshold).
pub fn project_l1_ball<F: Scalar>(v: &[F], radius: F) -> Vec<F> {
    if linalg::norm_l1(v) <= radius {
        return v.to_vec();
    }
    let mut mags: Vec<F> = v.iter().map(|x| x.abs()).collect();
    mags.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let mut cum = F::zero();
    let mut theta = F::zero();
    for (j, &m) in mags.iter().enumerate() {
        cum += m;
        let t = (cum - radius) / F::from_count(j + 1);
        if m > t {
            theta = t;
        } else {
            break;
        }
    }
    v.iter()
        .map(|&x| x.signum() * (x.abs() - theta).max(F::zero()))
        .collect()
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration.
fn spectral_radius<F: Scalar>(m: &Matrix<F>) -> F {
    let d = m.nrows();
    let mut v = vec![F::one() / F::from_count(d).sqrt(); d];
    let mut lambda = F::zero();
    for _ in 0..100 {
        let w = m.mul_vec(&v);
        let nw = linalg::norm_l2(&w);
        if nw == F::zero() {
            return F::zero();
        }
        let next = nw;
        v = w.iter().map(|&x| x / nw).collect();
        if (next - lambda).abs() <= F::lit(1e-10) * next {
            return next;
        }
        lambda = next;
    }
    lambda
}

/// One likelihood-increasing step along `logit p = offset + H eps` with
/// `||eps|| <= bound` in the chosen geometry.
///
/// When the unconstrained maximizer lies inside the ball it is returned as is.
/// Otherwise the L2 step is the score direction scaled to the bound and the L1
/// step is projected gradient ascent on the local quadratic model; either is
/// halved until the log-likelihood does not fall below its value at zero.
pub fn constrained_step<F: Scalar>(
    h: &Matrix<F>,
    y: &[F],
    offset: &[F],
    bound: F,
    penalty: Penalty,
) -> Result<ConstrainedStep<F>> {
    if !(bound > F::zero()) {
        return Err(Error::InvalidArgument("step bound must be positive".into()));
    }
    check_dims(h, y, offset, None)?;
    let d = h.ncols();
    let zero_eps = vec![F::zero(); d];
    let (score, info) = score_and_information(h, y, offset, None, &zero_eps);
    let score_norm = linalg::norm_l2(&score);
    let score_floor = F::epsilon() * F::from_count(h.nrows().max(1));
    if d == 0 || linalg::norm_inf(&score) <= score_floor {
        return Ok(ConstrainedStep {
            epsilon: zero_eps,
            norm: F::zero(),
            score_norm_at_zero: F::zero(),
            bound_active: false,
        });
    }

    // A first Newton step far outside the ball means the unconstrained
    // maximizer is too; skip the full fit in that case.
    let newton = linalg::solve_spd(&info, &score, "targeting information matrix").ok();
    let try_unconstrained = newton
        .as_ref()
        .is_some_and(|nw| penalty.norm(nw) <= F::lit(4.0) * bound);
    if try_unconstrained {
        let fit = fit_logistic(h, y, Some(offset), None)?;
        if penalty.norm(&fit.coefficients) <= bound {
            let norm = penalty.norm(&fit.coefficients);
            return Ok(ConstrainedStep {
                epsilon: fit.coefficients,
                norm,
                score_norm_at_zero: score_norm,
                bound_active: false,
            });
        }
    }

    let mut eps = match penalty {
        Penalty::L2 => score.iter().map(|&s| s * bound / score_norm).collect::<Vec<F>>(),
        Penalty::L1 => l1_quadratic_ascent(&score, &info, bound),
    };
    let ll0 = loglik(h, y, offset, None, &zero_eps);
    let mut halvings = 0;
    while loglik(h, y, offset, None, &eps) < ll0 {
        halvings += 1;
        if halvings > 60 {
            eps = zero_eps.clone();
            break;
        }
        for e in &mut eps {
            *e = *e / F::lit(2.0);
        }
    }
    let norm = penalty.norm(&eps);
    Ok(ConstrainedStep {
        epsilon: eps,
        norm,
        score_norm_at_zero: score_norm,
        bound_active: true,
    })
}

/// Maximizes `sᵀe - eᵀIe/2` over the L1 ball by projected gradient ascent.
fn l1_quadratic_ascent<F: Scalar>(score: &[F], info: &Matrix<F>, bound: F) -> Vec<F> {
    let d = score.len();
    let lmax = spectral_radius(info);
    if !(lmax > F::zero()) {
        return project_l1_ball(&score.iter().map(|&s| s * F::lit(1e12)).collect::<Vec<_>>(), bound);
    }
    let eta = F::one() / lmax;
    let mut eps = vec![F::zero(); d];
    for _ in 0..500 {
        let ie = info.mul_vec(&eps);
        let cand: Vec<F> = (0..d).map(|j| eps[j] + eta * (score[j] - ie[j])).collect();
        let next = project_l1_ball(&cand, bound);
        let moved = next
            .iter()
            .zip(&eps)
            .fold(F::zero(), |m, (&a, &b)| m.max((a - b).abs()));
        eps = next;
        if moved <= F::lit(1e-12) * bound {
            break;
        }
    }
    eps
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::logit;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn col(v: &[f64]) -> Matrix<f64> {
        Matrix::from_row_major(v.len(), 1, v.to_vec()).unwrap()
    }

    #[test]
    fn intercept_only_recovers_logit_mean() {
        let y = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        let x = col(&[1.0; 8]);
        let fit = fit_logistic(&x, &y, None, None).unwrap();
        assert!(fit.converged);
        assert!((fit.coefficients[0] - logit(0.25)).abs() < 1e-9);
        assert!((fit.coefficients[0] + 1.0986122886681098).abs() < 1e-9);
    }

    #[test]
    fn symmetric_two_points() {
        let fit = fit_logistic(&col(&[1.0, 1.0]), &[0.0, 1.0], None, None).unwrap();
        assert!(fit.coefficients[0].abs() < 1e-12);
        assert!(fit.converged);
    }

    #[test]
    fn offset_already_saturating() {
        // y mean equals expit(offset) exactly: score is zero at the origin
        let offset = [logit(0.25); 4];
        let y = [1.0, 0.0, 0.0, 0.0];
        let fit = fit_logistic(&col(&[1.0; 4]), &y, Some(&offset), None).unwrap();
        assert!(fit.coefficients[0].abs() < 1e-10);
        let empty = Matrix::<f64>::zeros(4, 0);
        let fit = fit_logistic(&empty, &y, Some(&offset), None).unwrap();
        assert!(fit.coefficients.is_empty() && fit.converged);
        let zero_col = col(&[0.0; 4]);
        let fit = fit_logistic(&zero_col, &y, Some(&offset), None).unwrap();
        assert_eq!(fit.coefficients, vec![0.0]);
    }

    #[test]
    fn separation_hits_cap() {
        let x = Matrix::from_rows(&[vec![1.0, -1.0], vec![1.0, -2.0], vec![1.0, 1.0], vec![1.0, 2.0]])
            .unwrap();
        let fit = fit_logistic::<f64>(&x, &[0.0, 0.0, 1.0, 1.0], None, None).unwrap();
        assert!(!fit.converged);
        assert!(fit.coefficients.iter().all(|b| b.abs() <= 20.0 + 1e-12));
        assert!(fit.coefficients.iter().any(|b| (b.abs() - 20.0).abs() < 1e-9));
    }

    #[test]
    fn weights_act_as_replication() {
        let x = Matrix::from_rows(&[vec![1.0, 0.3], vec![1.0, -0.4], vec![1.0, 1.2], vec![1.0, 0.1]])
            .unwrap();
        let y = [1.0, 0.0, 1.0, 0.0];
        let w = [2.0, 1.0, 1.0, 3.0];
        let weighted = fit_logistic(&x, &y, None, Some(&w)).unwrap();
        let mut rows = Vec::new();
        let mut yy = Vec::new();
        for i in 0..4 {
            for _ in 0..(w[i] as usize) {
                rows.push(x.row(i).to_vec());
                yy.push(y[i]);
            }
        }
        let expanded = fit_logistic::<f64>(&Matrix::from_rows(&rows).unwrap(), &yy, None, None).unwrap();
        for (a, b) in weighted.coefficients.iter().zip(&expanded.coefficients) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(fit_logistic(&col(&[1.0]), &[0.5], None, None).is_err());
        assert!(fit_logistic(&col(&[1.0, 1.0]), &[0.0], None, None).is_err());
        assert!(fit_logistic(&Matrix::<f64>::zeros(0, 1), &[], None, None).is_err());
    }

    #[test]
    fn f32_intercept() {
        let x = Matrix::from_row_major(4, 1, vec![1.0f32; 4]).unwrap();
        let fit = fit_logistic(&x, &[1.0, 0.0, 0.0, 0.0], None, None).unwrap();
        assert!((fit.coefficients[0] + 1.0986123).abs() < 1e-4);
    }

    #[test]
    fn zero_score_gives_zero_step() {
        let offset = [0.0, 0.0];
        let step = constrained_step(&col(&[1.0, 1.0]), &[0.0, 1.0], &offset, 0.01, Penalty::L2).unwrap();
        assert_eq!(step.epsilon, vec![0.0]);
        assert_eq!(step.score_norm_at_zero, 0.0);
    }

    #[test]
    fn one_dimensional_bound_binds() {
        // y mean 0.6 with zero offset: unconstrained optimum logit(0.6) = 0.405
        let y = [1.0, 1.0, 1.0, 0.0, 0.0];
        let h = col(&[1.0; 5]);
        let off = [0.0; 5];
        let opt = fit_logistic(&h, &y, Some(&off), None).unwrap().coefficients[0];
        assert!(opt > 0.4);
        for pen in [Penalty::L2, Penalty::L1] {
            let s = constrained_step(&h, &y, &off, 0.01, pen).unwrap();
            assert!((s.epsilon[0] - 0.01).abs() < 1e-12, "{pen:?} {:?}", s.epsilon);
            assert!(s.bound_active);
        }
        let yneg = [0.0, 0.0, 0.0, 1.0, 0.0];
        let s = constrained_step(&h, &yneg, &off, 0.01, Penalty::L2).unwrap();
        assert!((s.epsilon[0] + 0.01).abs() < 1e-12);
    }

    #[test]
    fn large_bound_matches_unconstrained_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 200;
        let mut rows = Vec::new();
        let mut y = Vec::new();
        let mut off = Vec::new();
        for _ in 0..n {
            let r = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let o: f64 = rng.random_range(-0.5..0.5);
            let p = expit(o + 0.3 * r[0] - 0.2 * r[1]);
            y.push(if rng.random::<f64>() < p { 1.0 } else { 0.0 });
            rows.push(r);
            off.push(o);
        }
        let h = Matrix::from_rows(&rows).unwrap();
        let fit = fit_logistic(&h, &y, Some(&off), None).unwrap();
        let step = constrained_step(&h, &y, &off, 1e6, Penalty::L2).unwrap();
        assert!(!step.bound_active);
        for (a, b) in fit.coefficients.iter().zip(&step.epsilon) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn l1_projection() {
        let p = project_l1_ball::<f64>(&[3.0, -1.0, 0.5], 2.0);
        assert!((linalg::norm_l1(&p) - 2.0).abs() < 1e-12);
        assert!((p[0] - 2.0).abs() < 1e-12 && p[1] == 0.0 && p[2] == 0.0);
        let q = project_l1_ball::<f64>(&[1.0, -1.0], 1.0);
        assert!((q[0] - 0.5).abs() < 1e-12 && (q[1] + 0.5).abs() < 1e-12);
    }
}
