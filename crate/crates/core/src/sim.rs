//! Simulation harness: the log-normal/Weibull data-generating process, oracle
//! curves, Monte-Carlo studies and the subsampling monotonicity experiment.

use std::io::Write;
use std::time::Instant;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Uniform, Weibull};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{preprocess, Arm, Observation, SurvivalDataset};
use crate::error::{Error, Result};
use crate::estimators::{estimate, CurveEstimate, IterativeOptions, Method, OneStepOptions};
use crate::inference::{simultaneous_band, wald_from_se, DEFAULT_MC_DRAWS};
use crate::nuisance::{
    fit_nuisance, predict_matrices, Basis, NuisanceConfig, Term, DEFAULT_HAZARD_BOUNDS,
    DEFAULT_PROPENSITY_BOUNDS,
};
use crate::scalar::{pairwise_sum, Scalar};

/// Monte-Carlo draws behind [`oracle_curve`].
pub const ORACLE_DRAWS: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DgpConfig {
    pub n: usize,
    pub seed: u64,
    /// `W ~ Unif(0, w_upper)`.
    pub w_upper: f64,
    /// `P(A = 1 | W) = treat_base + treat_bump * I(W > treat_threshold)`.
    pub treat_base: f64,
    pub treat_bump: f64,
    pub treat_threshold: f64,
    /// `log T ~ N(mu_intercept + mu_covariate * W + mu_treatment * A, sigma)`.
    pub mu_intercept: f64,
    pub mu_covariate: f64,
    pub mu_treatment: f64,
    pub sigma: f64,
    /// `C ~ Weibull(shape = censor_shape + censor_shape_w * W, scale = censor_scale)`.
    pub censor_shape: f64,
    pub censor_shape_w: f64,
    pub censor_scale: f64,
    /// Follow-up past this time is administratively censored.
    pub t_cap: usize,
}

impl Default for DgpConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            seed: 1,
            w_upper: 1.5,
            treat_base: 0.4,
            treat_bump: 0.5,
            treat_threshold: 0.75,
            mu_intercept: 2.0,
            mu_covariate: -1.0,
            mu_treatment: 1.0,
            sigma: 0.01,
            censor_shape: 1.0,
            censor_shape_w: 0.5,
            censor_scale: 75.0,
            t_cap: 21,
        }
    }
}

impl DgpConfig {
    pub fn with_n(mut self, n: usize) -> Self {
        self.n = n;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let p_hi = self.treat_base + self.treat_bump.max(0.0);
        let p_lo = self.treat_base + self.treat_bump.min(0.0);
        let ok = self.n >= 1
            && self.w_upper > 0.0
            && (0.0..=1.0).contains(&p_lo)
            && (0.0..=1.0).contains(&p_hi)
            && self.sigma > 0.0
            && self.censor_shape > 0.0
            && self.censor_shape + self.censor_shape_w * self.w_upper > 0.0
            && self.censor_scale > 0.0
            && self.t_cap >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid DGP parameters: {self:?}")))
        }
    }

    fn propensity(&self, w: f64) -> f64 {
        self.treat_base + if w > self.treat_threshold { self.treat_bump } else { 0.0 }
    }

    fn log_mean(&self, w: f64, a: Arm) -> f64 {
        self.mu_intercept + self.mu_covariate * w + self.mu_treatment * f64::from(a.as_u8())
    }
}

/// Continuous time to the 1-based grid.
fn grid_time(x: f64) -> usize {
    (x.ceil() as usize).max(1)
}

/// One dataset drawn from `rng`.
pub fn simulate_with<F: Scalar, R: Rng>(cfg: &DgpConfig, rng: &mut R) -> Result<SurvivalDataset<F>> {
    cfg.validate()?;
    let unif = Uniform::new(0.0, cfg.w_upper).map_err(|e| Error::Config(e.to_string()))?;
    let mut obs = Vec::with_capacity(cfg.n);
    for id in 0..cfg.n {
        let w = unif.sample(rng);
        let a = if rng.random::<f64>() < cfg.propensity(w) {
            Arm::Treated
        } else {
            Arm::Control
        };
        let t = LogNormal::new(cfg.log_mean(w, a), cfg.sigma)
            .map_err(|e| Error::Config(e.to_string()))?
            .sample(rng);
        let c = Weibull::new(cfg.censor_scale, cfg.censor_shape + cfg.censor_shape_w * w)
            .map_err(|e| Error::Config(e.to_string()))?
            .sample(rng);
        obs.push(Observation {
            id: id as i64,
            w: vec![F::lit(w)],
            a,
            t_tilde: grid_time(t).min(grid_time(c)),
            delta: t <= c,
        });
    }
    let ds = SurvivalDataset::new(obs, vec!["W".into()])?;
    preprocess(&ds, Some(cfg.t_cap), None)
}

/// Dataset for `cfg.seed`.
pub fn simulate<F: Scalar>(cfg: &DgpConfig) -> Result<SurvivalDataset<F>> {
    simulate_with(cfg, &mut ChaCha8Rng::seed_from_u64(cfg.seed))
}

/// Generator for replicate `rep` of a study seeded with `seed`.
pub fn replicate_rng(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep + 1);
    rng
}

/// `P(T_a > t)` in the `sigma -> 0` limit, where `T_a = exp(mu_a(W))` exactly.
pub fn oracle_closed_form(cfg: &DgpConfig, a: Arm, t: usize) -> f64 {
    let b = cfg.mu_covariate;
    let base = cfg.mu_intercept + cfg.mu_treatment * f64::from(a.as_u8());
    let lt = (t as f64).ln();
    if b == 0.0 {
        return if base > lt { 1.0 } else { 0.0 };
    }
    // mu_a(W) > ln t  <=>  W on one side of (ln t - base) / b
    let cut = ((lt - base) / b / cfg.w_upper).clamp(0.0, 1.0);
    if b < 0.0 {
        cut
    } else {
        1.0 - cut
    }
}

/// `Psi_a(t) = P(T_a > t)` for `t = 1..=t_max` from `draws` samples of the
/// failure-time marginal.
pub fn oracle_curve(cfg: &DgpConfig, a: Arm, t_max: usize, draws: usize, seed: u64) -> Result<Vec<f64>> {
    if draws == 0 {
        return Err(Error::InvalidArgument("oracle needs at least one draw".into()));
    }
    let unif = Uniform::new(0.0, cfg.w_upper).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut exceed = vec![0usize; t_max];
    for _ in 0..draws {
        let w = unif.sample(&mut rng);
        let z: f64 = rng.sample(rand_distr::StandardNormal);
        let t = (cfg.log_mean(w, a) + cfg.sigma * z).exp();
        for (s, count) in exceed.iter_mut().enumerate() {
            if t > (s + 1) as f64 {
                *count += 1;
            } else {
                break;
            }
        }
    }
    Ok(exceed.into_iter().map(|c| c as f64 / draws as f64).collect())
}

/// Working models that contain the truth of the default DGP up to the
/// logistic approximation of a near-deterministic failure time.
pub fn dgp_nuisance_config<F: Scalar>(cfg: &DgpConfig) -> NuisanceConfig<F> {
    let w = Term::Covariate { index: 0 };
    NuisanceConfig {
        failure_basis: Basis::new(vec![Term::Intercept, Term::LogTime, w.clone(), Term::Treatment]),
        censor_basis: Basis::new(vec![
            Term::Intercept,
            w.clone(),
            Term::LogTime,
            Term::Product {
                terms: vec![w, Term::LogTime],
            },
        ]),
        propensity_basis: Basis::new(vec![
            Term::Intercept,
            Term::Indicator {
                covariate: 0,
                threshold: cfg.treat_threshold,
            },
        ]),
        hazard_bounds: (F::lit(DEFAULT_HAZARD_BOUNDS.0), F::lit(DEFAULT_HAZARD_BOUNDS.1)),
        propensity_bounds: (
            F::lit(DEFAULT_PROPENSITY_BOUNDS.0),
            F::lit(DEFAULT_PROPENSITY_BOUNDS.1),
        ),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig<F> {
    pub dgp: DgpConfig,
    pub reps: usize,
    pub arm: Arm,
    pub methods: Vec<Method>,
    pub nuisance: NuisanceConfig<F>,
    pub iterative: IterativeOptions<F>,
    pub one_step: OneStepOptions<F>,
    /// Compute interval coverage as well as point metrics.
    pub coverage: bool,
    pub alpha: F,
    pub mc_draws: usize,
    pub oracle_draws: usize,
}

impl<F: Scalar> StudyConfig<F> {
    pub fn new(dgp: DgpConfig, reps: usize, arm: Arm, methods: Vec<Method>) -> Self {
        Self {
            nuisance: dgp_nuisance_config(&dgp),
            dgp,
            reps,
            arm,
            methods,
            iterative: IterativeOptions::default(),
            one_step: OneStepOptions::default(),
            coverage: false,
            alpha: F::lit(0.05),
            mc_draws: DEFAULT_MC_DRAWS,
            oracle_draws: ORACLE_DRAWS,
        }
    }
}

/// What one method produced on one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepOutcome {
    pub psi: Vec<f64>,
    pub converged: bool,
    pub monotone: bool,
    /// Per-t containment of the oracle in the pointwise interval.
    pub pointwise_cover: Option<Vec<bool>>,
    /// Per-t containment of the oracle in the simultaneous band.
    pub band_cover: Option<Vec<bool>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub rep: usize,
    pub t_max: usize,
    /// Indexed like `StudyConfig::methods`; `Err` holds the failure message.
    pub outcomes: Vec<std::result::Result<RepOutcome, String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub t: usize,
    pub bias: f64,
    pub variance: f64,
    pub mse: f64,
    /// `MSE_tmle / MSE_method`, when the iterative TMLE is part of the study.
    pub re: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub successes: usize,
    pub failures: usize,
    pub non_converged: usize,
    pub monotone_fraction: f64,
    pub metrics: Vec<MetricRow>,
    pub pointwise_coverage: Option<Vec<f64>>,
    /// Fraction of replicates whose band contains the oracle at every `t` of the
    /// common grid with `0 < oracle(t) < 1`.
    pub simultaneous_coverage: Option<f64>,
}

impl MethodSummary {
    pub fn mean_mse(&self) -> f64 {
        self.metrics.iter().map(|m| m.mse).sum::<f64>() / self.metrics.len().max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub n: usize,
    pub reps: usize,
    pub arm: Arm,
    /// Metrics are reported on `t = 1..=t_max`, the shortest grid over replicates.
    pub t_max: usize,
    pub oracle: Vec<f64>,
    pub methods: Vec<MethodSummary>,
    #[serde(skip)]
    pub replicates: Vec<RepRecord>,
    #[serde(skip)]
    pub runtime_secs: f64,
}

impl StudyReport {
    pub fn method(&self, m: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|s| s.method == m)
    }

    /// Long CSV: `method,t,bias,var,mse,re`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let e = |e: csv::Error| Error::Numerical(format!("csv write: {e}"));
        wtr.write_record(["method", "t", "bias", "var", "mse", "re"]).map_err(e)?;
        for s in &self.methods {
            for m in &s.metrics {
                wtr.write_record([
                    s.method.tag().to_string(),
                    m.t.to_string(),
                    m.bias.to_string(),
                    m.variance.to_string(),
                    m.mse.to_string(),
                    m.re.map(|r| r.to_string()).unwrap_or_default(),
                ])
                .map_err(e)?;
            }
        }
        wtr.flush().map_err(|source| Error::Io {
            path: "<csv>".into(),
            source,
        })
    }
}

fn covered(lo: &[f64], hi: &[f64], truth: &[f64]) -> Vec<bool> {
    lo.iter()
        .zip(hi)
        .zip(truth)
        .map(|((&l, &h), &o)| l <= o && o <= h)
        .collect()
}

fn run_method<F: Scalar>(
    cfg: &StudyConfig<F>,
    method: Method,
    ds: &SurvivalDataset<F>,
    pred: &crate::nuisance::Predictions<F>,
    oracle: &[f64],
    band_seed: u64,
) -> Result<RepOutcome> {
    let est: CurveEstimate<F> = estimate(method, ds, pred, &cfg.iterative, &cfg.one_step)?;
    let psi: Vec<f64> = est.psi.iter().map(|p| p.as_f64()).collect();
    if psi.iter().any(|p| !p.is_finite()) {
        return Err(Error::Numerical(format!("{method} produced a non-finite estimate")));
    }
    let truth = &oracle[..psi.len().min(oracle.len())];
    let mut out = RepOutcome {
        monotone: est.is_monotone(),
        converged: est.converged,
        psi,
        pointwise_cover: None,
        band_cover: None,
    };
    if cfg.coverage {
        let to64 = |v: &[F]| v.iter().map(|x| x.as_f64()).collect::<Vec<_>>();
        if let Some(eif) = &est.eif {
            let band = simultaneous_band(eif, &est.psi, cfg.alpha, cfg.mc_draws, band_seed)?;
            let t = truth.len();
            out.pointwise_cover = Some(covered(&to64(&band.lo_pw)[..t], &to64(&band.hi_pw)[..t], truth));
            let s = band.simultaneous.as_ref().expect("band requested");
            out.band_cover = Some(covered(&to64(&s.lo)[..t], &to64(&s.hi)[..t], truth));
        } else if let Some(se) = &est.se {
            let band = wald_from_se(&est.psi, se, cfg.alpha)?;
            let t = truth.len();
            out.pointwise_cover = Some(covered(&to64(&band.lo_pw)[..t], &to64(&band.hi_pw)[..t], truth));
        }
    }
    Ok(out)
}

fn run_rep<F: Scalar>(cfg: &StudyConfig<F>, rep: usize, oracle: &[f64]) -> RepRecord {
    let mut rng = replicate_rng(cfg.dgp.seed, rep as u64);
    let fail_all = |msg: String, t_max: usize| RepRecord {
        rep,
        t_max,
        outcomes: cfg.methods.iter().map(|_| Err(msg.clone())).collect(),
    };
    let ds: SurvivalDataset<F> = match simulate_with(&cfg.dgp, &mut rng) {
        Ok(ds) => ds,
        Err(e) => return fail_all(e.to_string(), 0),
    };
    let fit = match fit_nuisance(&ds, &cfg.nuisance) {
        Ok(f) => f,
        Err(e) => return fail_all(e.to_string(), ds.t_max()),
    };
    let pred = predict_matrices(&fit, &ds, cfg.arm);
    let band_seed = cfg.dgp.seed ^ (rep as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    RepRecord {
        rep,
        t_max: ds.t_max(),
        outcomes: cfg
            .methods
            .iter()
            .map(|&m| run_method(cfg, m, &ds, &pred, oracle, band_seed).map_err(|e| e.to_string()))
            .collect(),
    }
}

/// Population moments over replicates, aggregated in replicate order.
fn metric_row(t: usize, values: &[f64], truth: f64) -> MetricRow {
    let r = values.len() as f64;
    let m = pairwise_sum(values) / r;
    let centered: Vec<f64> = values.iter().map(|v| (v - m) * (v - m)).collect();
    let errors: Vec<f64> = values.iter().map(|v| (v - truth) * (v - truth)).collect();
    MetricRow {
        t,
        bias: m - truth,
        variance: pairwise_sum(&centered) / r,
        mse: pairwise_sum(&errors) / r,
        re: None,
    }
}

fn summarize(
    method: Method,
    j: usize,
    records: &[RepRecord],
    t_max: usize,
    oracle: &[f64],
) -> MethodSummary {
    let ok: Vec<&RepOutcome> = records.iter().filter_map(|r| r.outcomes[j].as_ref().ok()).collect();
    let successes = ok.len();
    let metrics = if successes == 0 {
        Vec::new()
    } else {
        (1..=t_max)
            .map(|t| {
                let vals: Vec<f64> = ok.iter().map(|o| o.psi[t - 1]).collect();
                metric_row(t, &vals, oracle[t - 1])
            })
            .collect()
    };
    let frac = |count: usize, of: usize| if of == 0 { f64::NAN } else { count as f64 / of as f64 };
    let with_pw: Vec<&Vec<bool>> = ok.iter().filter_map(|o| o.pointwise_cover.as_ref()).collect();
    let pointwise_coverage = (!with_pw.is_empty()).then(|| {
        (0..t_max)
            .map(|t| frac(with_pw.iter().filter(|c| c[t]).count(), with_pw.len()))
            .collect()
    });
    let with_band: Vec<&Vec<bool>> = ok.iter().filter_map(|o| o.band_cover.as_ref()).collect();
    let simultaneous_coverage = (!with_band.is_empty()).then(|| {
        let hits = with_band
            .iter()
            .filter(|c| (0..t_max).all(|t| c[t] || oracle[t] <= 0.0 || oracle[t] >= 1.0))
            .count();
        frac(hits, with_band.len())
    });
    MethodSummary {
        method,
        successes,
        failures: records.len() - successes,
        non_converged: ok.iter().filter(|o| !o.converged).count(),
        monotone_fraction: frac(ok.iter().filter(|o| o.monotone).count(), successes),
        metrics,
        pointwise_coverage,
        simultaneous_coverage,
    }
}

/// Replicates are independent substreams of `dgp.seed`, so the report does not
/// depend on how rayon schedules them.
pub fn run_study<F: Scalar>(cfg: &StudyConfig<F>) -> Result<StudyReport> {
    if cfg.reps < 2 {
        return Err(Error::InvalidArgument("a study needs at least two replicates".into()));
    }
    if cfg.methods.is_empty() {
        return Err(Error::InvalidArgument("no methods requested".into()));
    }
    cfg.dgp.validate()?;
    let start = Instant::now();
    let oracle = oracle_curve(&cfg.dgp, cfg.arm, cfg.dgp.t_cap, cfg.oracle_draws, cfg.dgp.seed)?;
    let records: Vec<RepRecord> = (0..cfg.reps)
        .into_par_iter()
        .map(|rep| run_rep(cfg, rep, &oracle))
        .collect();
    let t_max = records
        .iter()
        .filter(|r| r.outcomes.iter().any(|o| o.is_ok()))
        .map(|r| r.t_max)
        .min()
        .ok_or_else(|| Error::Numerical("every replicate failed".into()))?;
    let mut methods: Vec<MethodSummary> = cfg
        .methods
        .iter()
        .enumerate()
        .map(|(j, &m)| summarize(m, j, &records, t_max, &oracle))
        .collect();
    if let Some(reference) = methods.iter().find(|s| s.method == Method::Tmle).map(|s| s.metrics.clone()) {
        for s in &mut methods {
            for (row, base) in s.metrics.iter_mut().zip(&reference) {
                row.re = Some(base.mse / row.mse);
            }
        }
    }
    Ok(StudyReport {
        n: cfg.dgp.n,
        reps: cfg.reps,
        arm: cfg.arm,
        t_max,
        oracle: oracle[..t_max].to_vec(),
        methods,
        replicates: records,
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityRow {
    pub n: usize,
    /// Per method, in request order: percentage of successful runs with a
    /// non-increasing curve.
    pub percent: Vec<f64>,
    pub failures: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityTable {
    pub methods: Vec<Method>,
    pub rows: Vec<MonotonicityRow>,
}

impl MonotonicityTable {
    /// CSV with one row per subsample size and one column per method.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let e = |e: csv::Error| Error::Numerical(format!("csv write: {e}"));
        let mut header = vec!["n".to_string()];
        header.extend(self.methods.iter().map(|m| m.tag().to_string()));
        wtr.write_record(&header).map_err(e)?;
        for row in &self.rows {
            let mut rec = vec![row.n.to_string()];
            rec.extend(row.percent.iter().map(|p| p.to_string()));
            wtr.write_record(&rec).map_err(e)?;
        }
        wtr.flush().map_err(|source| Error::Io {
            path: "<csv>".into(),
            source,
        })
    }
}

/// Repeated subsampling without replacement; for each size and method the
/// percentage of curves that are non-increasing within `1e-12`.
#[allow(clippy::too_many_arguments)]
pub fn monotonicity_experiment<F: Scalar>(
    ds: &SurvivalDataset<F>,
    subsample_sizes: &[usize],
    reps: usize,
    methods: &[Method],
    arm: Arm,
    nuisance: &NuisanceConfig<F>,
    one_step: &OneStepOptions<F>,
    seed: u64,
) -> Result<MonotonicityTable> {
    if let Some(&m) = subsample_sizes.iter().find(|&&m| m > ds.len() || m == 0) {
        return Err(Error::InvalidArgument(format!(
            "subsample size {m} outside 1..={}",
            ds.len()
        )));
    }
    let iterative = IterativeOptions::default();
    let rows = subsample_sizes
        .iter()
        .enumerate()
        .map(|(s, &m)| {
            let runs: Vec<Vec<Option<bool>>> = (0..reps)
                .into_par_iter()
                .map(|r| {
                    let mut rng = replicate_rng(seed, (s * reps + r) as u64);
                    let idx = sample(&mut rng, ds.len(), m).into_vec();
                    let fitted = ds.subset(&idx).and_then(|sub| {
                        let fit = fit_nuisance(&sub, nuisance)?;
                        let pred = predict_matrices(&fit, &sub, arm);
                        Ok((sub, pred))
                    });
                    methods
                        .iter()
                        .map(|&method| {
                            let (sub, pred) = fitted.as_ref().ok()?;
                            estimate(method, sub, pred, &iterative, one_step)
                                .ok()
                                .map(|e| e.is_monotone())
                        })
                        .collect()
                })
                .collect();
            let mut percent = Vec::with_capacity(methods.len());
            let mut failures = Vec::with_capacity(methods.len());
            for j in 0..methods.len() {
                let ok: Vec<bool> = runs.iter().filter_map(|r| r[j]).collect();
                failures.push(reps - ok.len());
                percent.push(if ok.is_empty() {
                    f64::NAN
                } else {
                    100.0 * ok.iter().filter(|&&b| b).count() as f64 / ok.len() as f64
                });
            }
            MonotonicityRow {
                n: m,
                percent,
                failures,
            }
        })
        .collect();
    Ok(MonotonicityTable {
        methods: methods.to_vec(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covariate_within_support() {
        let ds: SurvivalDataset<f64> = simulate(&DgpConfig::default().with_n(2000)).unwrap();
        assert!(ds.observations().iter().all(|o| (0.0..=1.5).contains(&o.w[0])));
        assert!(ds.t_max() <= 21);
    }

    #[test]
    fn treatment_rate_above_threshold() {
        let ds: SurvivalDataset<f64> = simulate(&DgpConfig::default().with_n(100_000).with_seed(5)).unwrap();
        let above: Vec<_> = ds.observations().iter().filter(|o| o.w[0] > 0.75).collect();
        let p = above.iter().filter(|o| o.a == Arm::Treated).count() as f64 / above.len() as f64;
        let se = (0.9f64 * 0.1 / above.len() as f64).sqrt();
        assert!((p - 0.9).abs() < 3.0 * se, "p = {p}");
    }

    #[test]
    fn narrow_lognormal_lands_near_e_cubed() {
        let cfg = DgpConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = LogNormal::new(cfg.log_mean(0.0, Arm::Treated), cfg.sigma).unwrap();
        for _ in 0..1000 {
            let t = grid_time(d.sample(&mut rng));
            assert!(t == 20 || t == 21, "t = {t}");
        }
    }

    #[test]
    fn simulation_is_seeded() {
        let cfg = DgpConfig::default().with_n(300).with_seed(9);
        let a: SurvivalDataset<f64> = simulate(&cfg).unwrap();
        let b: SurvivalDataset<f64> = simulate(&cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn closed_form_support_points() {
        let cfg = DgpConfig::default();
        assert!((oracle_closed_form(&cfg, Arm::Treated, 10) - 0.464_99).abs() < 1e-4);
        for t in 1..=4 {
            assert_eq!(oracle_closed_form(&cfg, Arm::Treated, t), 1.0);
        }
        for t in 8..=30 {
            assert_eq!(oracle_closed_form(&cfg, Arm::Control, t), 0.0);
        }
    }

    #[test]
    fn monte_carlo_oracle_matches_closed_form() {
        let cfg = DgpConfig::default();
        for a in Arm::both() {
            let mc = oracle_curve(&cfg, a, 21, 200_000, 1).unwrap();
            for (t, &v) in mc.iter().enumerate() {
                assert!((v - oracle_closed_form(&cfg, a, t + 1)).abs() < 0.005, "a={a} t={}", t + 1);
            }
            assert!(crate::scalar::is_non_increasing(&mc, 0.0));
        }
    }

    #[test]
    fn metric_identity() {
        let vals = [0.3, 0.5, 0.45, 0.61, 0.2];
        let m = metric_row(1, &vals, 0.4);
        assert!((m.mse - (m.bias * m.bias + m.variance)).abs() < 1e-12);
    }
}
