//! Wald intervals and simultaneous bands built from the influence matrix.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::eif::{quantile_sorted, EifMatrix};
use crate::error::{Error, Result};
use crate::linalg::{cholesky, Matrix};
use crate::scalar::Scalar;

pub const DEFAULT_MC_DRAWS: usize = 10_000;

/// Columns with `Σ_tt` below this are treated as degenerate.
pub const DEGENERATE_VARIANCE: f64 = 1e-14;

/// Draws per RNG substream. Fixed so the quantile does not depend on the thread count.
const BLOCK: usize = 1024;

const JITTER_LADDER: [f64; 5] = [1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandResult<F> {
    pub alpha: F,
    pub psi: Vec<F>,
    /// `sigma_t / sqrt(n)`.
    pub se: Vec<F>,
    /// `q_{1-alpha/2}` of the standard normal.
    pub pointwise_quantile: F,
    pub lo_pw: Vec<F>,
    pub hi_pw: Vec<F>,
    pub simultaneous: Option<SimultaneousBand<F>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimultaneousBand<F> {
    /// Monte-Carlo `1 - alpha` quantile of `max_t |Z_t|`.
    pub quantile: F,
    pub lo: Vec<F>,
    pub hi: Vec<F>,
    /// `(1/n) sum_i D_i D_iᵀ`, row-major `t_max x t_max`.
    pub covariance: Vec<Vec<F>>,
    pub mc_draws: usize,
    /// Diagonal jitter that made the correlation factorizable.
    pub jitter: f64,
}

impl<F: Scalar> BandResult<F> {
    pub fn t_max(&self) -> usize {
        self.psi.len()
    }

    /// Pointwise limits clipped to `[0, 1]`; the stored limits stay unclipped.
    pub fn clipped_pointwise(&self) -> (Vec<F>, Vec<F>) {
        (clip(&self.lo_pw), clip(&self.hi_pw))
    }

    pub fn clipped_simultaneous(&self) -> Option<(Vec<F>, Vec<F>)> {
        self.simultaneous.as_ref().map(|s| (clip(&s.lo), clip(&s.hi)))
    }
}

fn clip<F: Scalar>(v: &[F]) -> Vec<F> {
    v.iter().map(|&x| x.max(F::zero()).min(F::one())).collect()
}

fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

fn check_alpha<F: Scalar>(alpha: F) -> Result<()> {
    if alpha > F::zero() && alpha < F::one() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

/// Wald intervals from explicit standard errors (used for Greenwood).
pub fn wald_from_se<F: Scalar>(psi: &[F], se: &[F], alpha: F) -> Result<BandResult<F>> {
    check_alpha(alpha)?;
    if psi.len() != se.len() {
        return Err(Error::InvalidArgument("psi and se lengths differ".into()));
    }
    let q = F::lit(normal_quantile(1.0 - alpha.as_f64() / 2.0));
    Ok(BandResult {
        alpha,
        psi: psi.to_vec(),
        se: se.to_vec(),
        pointwise_quantile: q,
        lo_pw: psi.iter().zip(se).map(|(&p, &s)| p - q * s).collect(),
        hi_pw: psi.iter().zip(se).map(|(&p, &s)| p + q * s).collect(),
        simultaneous: None,
    })
}

/// `psi(t) ± q_{1-alpha/2} sigma_t / sqrt(n)` with `sigma_t² = (1/n) sum_i D[i][t]²`.
pub fn pointwise_ci<F: Scalar>(eif: &EifMatrix<F>, psi: &[F], alpha: F) -> Result<BandResult<F>> {
    if eif.n() < 2 {
        return Err(Error::InvalidArgument("inference needs at least two subjects".into()));
    }
    if eif.t_max() != psi.len() {
        return Err(Error::InvalidArgument(format!(
            "EIF has {} time points, curve has {}",
            eif.t_max(),
            psi.len()
        )));
    }
    let root_n = F::from_count(eif.n()).sqrt();
    let se: Vec<F> = eif.sigma().into_iter().map(|s| s / root_n).collect();
    wald_from_se(psi, &se, alpha)
}

/// Empirical second-moment matrix of the EIF rows.
pub fn eif_covariance<F: Scalar>(eif: &EifMatrix<F>) -> Matrix<F> {
    let t = eif.t_max();
    let mut sigma = Matrix::zeros(t, t);
    for row in &eif.values {
        for r in 0..t {
            for c in 0..=r {
                sigma[(r, c)] += row[r] * row[c];
            }
        }
    }
    let nf = F::from_count(eif.n());
    for r in 0..t {
        for c in 0..=r {
            let v = sigma[(r, c)] / nf;
            sigma[(r, c)] = v;
            sigma[(c, r)] = v;
        }
    }
    sigma
}

/// Correlation of the non-degenerate columns, with the indices kept.
fn correlation(sigma: &Matrix<f64>) -> (Matrix<f64>, Vec<usize>) {
    let keep: Vec<usize> = (0..sigma.nrows())
        .filter(|&t| sigma[(t, t)] >= DEGENERATE_VARIANCE)
        .collect();
    let m = keep.len();
    let mut rho = Matrix::zeros(m, m);
    for (r, &tr) in keep.iter().enumerate() {
        for (c, &tc) in keep.iter().enumerate() {
            rho[(r, c)] = if r == c {
                1.0
            } else {
                sigma[(tr, tc)] / (sigma[(tr, tr)] * sigma[(tc, tc)]).sqrt()
            };
        }
    }
    (rho, keep)
}

fn factor_with_jitter(rho: &Matrix<f64>) -> Result<(Matrix<f64>, f64)> {
    let mut last_minor = 0;
    for &j in &JITTER_LADDER {
        let mut a = rho.clone();
        for i in 0..a.nrows() {
            a[(i, i)] += j;
        }
        match cholesky(&a) {
            Ok(l) => return Ok((l, j)),
            Err(minor) => last_minor = minor,
        }
    }
    Err(Error::Cholesky {
        minor: last_minor,
        jitter: JITTER_LADDER[JITTER_LADDER.len() - 1],
    })
}

/// Monte-Carlo `1 - alpha` quantile of `max_t |Z_t|` for `Z = L u`, `u ~ N(0, I)`.
///
/// Draw `j` always comes from substream `j / BLOCK` of the seed, so the result is the
/// same however rayon splits the blocks.
pub fn max_abs_quantile(l: &Matrix<f64>, alpha: f64, draws: usize, seed: u64) -> f64 {
    let m = l.nrows();
    if m == 0 || draws == 0 {
        return 0.0;
    }
    let blocks = draws.div_ceil(BLOCK);
    let mut maxima: Vec<f64> = (0..blocks)
        .into_par_iter()
        .flat_map_iter(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let count = BLOCK.min(draws - b * BLOCK);
            let mut u = vec![0.0; m];
            (0..count)
                .map(|_| {
                    for x in u.iter_mut() {
                        *x = StandardNormal.sample(&mut rng);
                    }
                    (0..m)
                        .map(|r| l.row(r)[..=r].iter().zip(&u).map(|(a, b)| a * b).sum::<f64>().abs())
                        .fold(0.0, f64::max)
                })
                .collect::<Vec<_>>()
        })
        .collect();
    maxima.sort_by(f64::total_cmp);
    quantile_sorted(&maxima, 1.0 - alpha)
}

/// Pointwise intervals plus the simultaneous band
/// `psi(t) ± q_{1-alpha} sqrt(Σ_tt / n)`, with `q` the Monte-Carlo quantile of
/// `max_t |Z_t|`, `Z ~ N(0, ρ)`. Degenerate columns get zero width and are left out
/// of the max.
pub fn simultaneous_band<F: Scalar>(
    eif: &EifMatrix<F>,
    psi: &[F],
    alpha: F,
    mc_draws: usize,
    seed: u64,
) -> Result<BandResult<F>> {
    let mut band = pointwise_ci(eif, psi, alpha)?;
    if mc_draws == 0 {
        return Err(Error::InvalidArgument("mc_draws must be positive".into()));
    }
    let sigma = eif_covariance(eif);
    let t = sigma.nrows();
    let sigma64 = Matrix::from_row_major(t, t, sigma.as_slice().iter().map(|v| v.as_f64()).collect())?;
    let (rho, _) = correlation(&sigma64);
    let (l, jitter) = factor_with_jitter(&rho)?;
    let q = F::lit(max_abs_quantile(&l, alpha.as_f64(), mc_draws, seed));
    let width: Vec<F> = band.se.iter().map(|&s| q * s).collect();
    band.simultaneous = Some(SimultaneousBand {
        quantile: q,
        lo: psi.iter().zip(&width).map(|(&p, &w)| p - w).collect(),
        hi: psi.iter().zip(&width).map(|(&p, &w)| p + w).collect(),
        covariance: (0..t).map(|r| sigma.row(r).to_vec()).collect(),
        mc_draws,
        jitter,
    });
    Ok(band)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Arm;
    use approx::assert_abs_diff_eq;

    fn eif_from(cols: &[Vec<f64>]) -> EifMatrix<f64> {
        let n = cols[0].len();
        EifMatrix {
            arm: Arm::Treated,
            values: (0..n).map(|i| cols.iter().map(|c| c[i]).collect()).collect(),
            psi: vec![0.5; cols.len()],
        }
    }

    #[test]
    fn half_width_for_unit_sigma() {
        let col: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let b = pointwise_ci(&eif_from(&[col]), &[0.5], 0.05).unwrap();
        assert_abs_diff_eq!(b.hi_pw[0] - 0.5, 0.1959964, epsilon = 1e-6);
    }

    #[test]
    fn zero_eif_gives_zero_width() {
        let b = pointwise_ci(&eif_from(&[vec![0.0; 10]]), &[0.3], 0.05).unwrap();
        assert_eq!(b.lo_pw, b.hi_pw);
    }

    #[test]
    fn one_sigma_level() {
        let col: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let b = pointwise_ci(&eif_from(&[col]), &[0.5], 0.32).unwrap();
        assert_abs_diff_eq!(b.hi_pw[0] - 0.5, 0.0994458, epsilon = 1e-6);
    }

    #[test]
    fn single_time_quantile_is_normal() {
        let col = vec![1.0, -1.0, 1.0, -1.0];
        let b = simultaneous_band(&eif_from(&[col]), &[0.5], 0.05, DEFAULT_MC_DRAWS, 7).unwrap();
        assert_abs_diff_eq!(b.simultaneous.unwrap().quantile, 1.96, epsilon = 0.03);
    }

    #[test]
    fn independent_pair_quantile() {
        // P(|Z| <= q)^2 = 0.95
        let exact = normal_quantile(0.5 + 0.95f64.sqrt() / 2.0);
        assert_abs_diff_eq!(exact, 2.236, epsilon = 1e-3);
        let d = eif_from(&[vec![1.0, -1.0, 1.0, -1.0], vec![1.0, 1.0, -1.0, -1.0]]);
        let b = simultaneous_band(&d, &[0.5, 0.4], 0.05, DEFAULT_MC_DRAWS, 7).unwrap();
        assert_abs_diff_eq!(b.simultaneous.unwrap().quantile, exact, epsilon = 0.03);
    }

    #[test]
    fn perfectly_correlated_quantile() {
        let col = vec![1.0, -1.0, 1.0, -1.0];
        let d = eif_from(&[col.clone(), col.clone(), col]);
        let b = simultaneous_band(&d, &[0.5, 0.4, 0.3], 0.05, DEFAULT_MC_DRAWS, 7).unwrap();
        assert_abs_diff_eq!(b.simultaneous.unwrap().quantile, 1.96, epsilon = 0.03);
    }

    #[test]
    fn degenerate_columns_have_zero_width() {
        let d = eif_from(&[vec![0.0; 4], vec![1.0, -1.0, 1.0, -1.0]]);
        let b = simultaneous_band(&d, &[1.0, 0.4], 0.05, 2000, 1).unwrap();
        let s = b.simultaneous.unwrap();
        assert_eq!(s.lo[0], 1.0);
        assert_eq!(s.hi[0], 1.0);
        assert_abs_diff_eq!(s.quantile, 1.96, epsilon = 0.06);
    }

    #[test]
    fn band_is_seeded() {
        let d = eif_from(&[vec![1.0, -0.5, 0.2, -0.7], vec![0.3, 1.0, -1.0, -0.3]]);
        let a = simultaneous_band(&d, &[0.5, 0.4], 0.05, 3000, 11).unwrap();
        let b = simultaneous_band(&d, &[0.5, 0.4], 0.05, 3000, 11).unwrap();
        assert_eq!(a, b);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let c = pool.install(|| simultaneous_band(&d, &[0.5, 0.4], 0.05, 3000, 11).unwrap());
        assert_eq!(a, c);
    }

    #[test]
    fn simultaneous_contains_pointwise() {
        let d = eif_from(&[vec![1.0, -0.5, 0.2, -0.7], vec![0.3, 1.0, -1.0, -0.3]]);
        let b = simultaneous_band(&d, &[0.5, 0.4], 0.05, DEFAULT_MC_DRAWS, 3).unwrap();
        let s = b.simultaneous.as_ref().unwrap();
        let slack = 3.0 / (DEFAULT_MC_DRAWS as f64).sqrt();
        assert!(s.quantile >= b.pointwise_quantile - slack);
    }

    #[test]
    fn clipping_keeps_raw_limits() {
        let b = wald_from_se(&[0.99], &[0.1], 0.05).unwrap();
        assert!(b.hi_pw[0] > 1.0);
        assert_eq!(b.clipped_pointwise().1[0], 1.0);
    }

    #[test]
    fn rejects_bad_alpha() {
        assert!(wald_from_se(&[0.5], &[0.1], 1.5).is_err());
    }
}
