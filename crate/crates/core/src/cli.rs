//! Command-line front end. `run` parses arguments, merges them over an optional
//! JSON config file and dispatches to `estimate`, `simulate` or `diagnose`.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::data::{load_csv, preprocess, Arm, CsvSchema, Discretizer, SurvivalDataset};
use crate::eif::{inverse_weight_summary, write_weight_summary_csv, EifMatrix};
use crate::error::{Error, Result};
use crate::estimators::{estimate, CurveEstimate, IterativeOptions, Method, OneStepOptions};
use crate::inference::{pointwise_ci, simultaneous_band, wald_from_se, BandResult, DEFAULT_MC_DRAWS};
use crate::nuisance::{fit_nuisance, predict_matrices, NuisanceConfig};
use crate::sim::{dgp_nuisance_config, monotonicity_experiment, run_study, DgpConfig, StudyConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => EXIT_CONFIG,
        Error::Io { .. } | Error::Parse { .. } | Error::Schema(_) | Error::EmptyData(_) => EXIT_DATA,
        Error::Singular { .. } | Error::Cholesky { .. } | Error::Numerical(_) => EXIT_NUMERICAL,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
pub enum ArmChoice {
    #[serde(rename = "0")]
    #[value(name = "0")]
    Control,
    #[serde(rename = "1")]
    #[value(name = "1")]
    Treated,
    #[default]
    #[serde(rename = "both")]
    Both,
}

impl ArmChoice {
    fn arms(self) -> Vec<Arm> {
        match self {
            ArmChoice::Control => vec![Arm::Control],
            ArmChoice::Treated => vec![Arm::Treated],
            ArmChoice::Both => Arm::both().to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BandKind {
    None,
    #[default]
    Pointwise,
    Simultaneous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
    #[default]
    Both,
}

impl OutputFormat {
    fn csv(self) -> bool {
        matches!(self, OutputFormat::Csv | OutputFormat::Both)
    }

    fn json(self) -> bool {
        matches!(self, OutputFormat::Json | OutputFormat::Both)
    }
}

/// Every knob of every command. Written to `manifest.json` next to the outputs;
/// passing that file back through `--config` repeats the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub schema: CsvSchema,
    pub truncate_at: Option<usize>,
    pub rescale: Option<usize>,
    pub methods: Vec<Method>,
    pub arm: ArmChoice,
    pub alpha: f64,
    pub band: BandKind,
    pub mc_draws: usize,
    /// Working models; `None` means main terms plus linear time.
    pub nuisance: Option<NuisanceConfig<f64>>,
    pub step_bound: f64,
    pub stop_norm: f64,
    pub max_iter: usize,
    pub tmle_max_iter: usize,
    pub tmle_tol: f64,
    pub seed: u64,
    pub reps: usize,
    pub n: usize,
    pub dgp: DgpConfig,
    pub coverage: bool,
    pub monotonicity_sizes: Vec<usize>,
    pub monotonicity_reps: usize,
    pub out: PathBuf,
    pub format: OutputFormat,
}

impl Default for RunConfig {
    fn default() -> Self {
        let one = OneStepOptions::<f64>::default();
        let it = IterativeOptions::<f64>::default();
        Self {
            input: None,
            schema: CsvSchema::default(),
            truncate_at: None,
            rescale: None,
            methods: Vec::new(),
            arm: ArmChoice::Both,
            alpha: 0.05,
            band: BandKind::Pointwise,
            mc_draws: DEFAULT_MC_DRAWS,
            nuisance: None,
            step_bound: one.step_bound,
            stop_norm: one.stop_norm,
            max_iter: one.max_iter,
            tmle_max_iter: it.max_iter,
            tmle_tol: it.tol,
            seed: 1,
            reps: 100,
            n: 1000,
            dgp: DgpConfig::default(),
            coverage: false,
            monotonicity_sizes: Vec::new(),
            monotonicity_reps: 100,
            out: PathBuf::from("survtmle-out"),
            format: OutputFormat::Both,
        }
    }
}

impl RunConfig {
    fn one_step(&self) -> OneStepOptions<f64> {
        OneStepOptions {
            step_bound: self.step_bound,
            stop_norm: self.stop_norm,
            max_iter: self.max_iter,
            ..OneStepOptions::default()
        }
    }

    fn iterative(&self) -> IterativeOptions<f64> {
        IterativeOptions {
            max_iter: self.tmle_max_iter,
            tol: self.tmle_tol,
            ..IterativeOptions::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.step_bound > 0.0) || !(self.stop_norm >= 0.0) || !(self.tmle_tol >= 0.0) {
            return Err(Error::Config("step_bound must be positive, tolerances non-negative".into()));
        }
        if self.mc_draws == 0 {
            return Err(Error::Config("mc_draws must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Parser)]
#[command(name = "survtmle", version, about = "Counterfactual survival curves from right-censored data")]
struct Cli {
    /// Worker threads for replicates and band sampling; output does not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit nuisance models and estimate survival curves for a CSV dataset.
    Estimate(CommonArgs),
    /// Monte-Carlo study on the built-in data-generating process.
    Simulate(CommonArgs),
    /// Inverse-weight distribution per time point, plus optional monotonicity experiment.
    Diagnose(CommonArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// JSON file with any subset of the run configuration; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    id_col: Option<String>,
    #[arg(long)]
    time_col: Option<String>,
    #[arg(long)]
    event_col: Option<String>,
    #[arg(long)]
    treatment_col: Option<String>,
    /// Comma-separated covariate columns.
    #[arg(long, value_delimiter = ',')]
    covariates: Option<Vec<String>>,
    #[arg(long, value_enum)]
    discretizer: Option<DiscretizerArg>,
    #[arg(long)]
    truncate_at: Option<usize>,
    #[arg(long)]
    rescale: Option<usize>,
    /// Comma-separated: km, plugin, ipcw, ee, tmle, moss-l2, moss-l1.
    #[arg(long = "method", value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[arg(long, value_enum)]
    arm: Option<ArmChoice>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, value_enum)]
    band: Option<BandKind>,
    #[arg(long)]
    mc_draws: Option<usize>,
    #[arg(long)]
    step_bound: Option<f64>,
    #[arg(long)]
    stop_norm: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    /// Report interval coverage in simulation studies.
    #[arg(long)]
    coverage: bool,
    /// Comma-separated subsample sizes for the monotonicity experiment.
    #[arg(long, value_delimiter = ',')]
    monotonicity_sizes: Option<Vec<usize>>,
    #[arg(long)]
    monotonicity_reps: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<OutputFormat>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DiscretizerArg {
    Integer,
    Ceil,
}

fn read_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let bad = |e: serde_json::Error| Error::Config(format!("{}: {e}", path.display()));
    let mut value: serde_json::Value = serde_json::from_str(&text).map_err(bad)?;
    // a manifest wraps the config it was produced from
    if let Some(inner) = value.get_mut("config").filter(|_| text.contains("\"command\"")) {
        value = inner.take();
    }
    serde_json::from_value(value).map_err(bad)
}

fn resolve(args: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => read_config(p)?,
        None => RunConfig::default(),
    };
    macro_rules! take {
        ($field:ident) => {
            if let Some(v) = &args.$field {
                cfg.$field = v.clone();
            }
        };
    }
    if args.input.is_some() {
        cfg.input = args.input.clone();
    }
    if args.id_col.is_some() {
        cfg.schema.id = args.id_col.clone();
    }
    if let Some(v) = &args.time_col {
        cfg.schema.time = v.clone();
    }
    if let Some(v) = &args.event_col {
        cfg.schema.event = v.clone();
    }
    if let Some(v) = &args.treatment_col {
        cfg.schema.treatment = v.clone();
    }
    if let Some(v) = &args.covariates {
        cfg.schema.covariates = v.clone();
    }
    if let Some(d) = args.discretizer {
        cfg.schema.discretizer = match d {
            DiscretizerArg::Integer => Discretizer::Integer,
            DiscretizerArg::Ceil => Discretizer::Ceil,
        };
    }
    if args.truncate_at.is_some() {
        cfg.truncate_at = args.truncate_at;
    }
    if args.rescale.is_some() {
        cfg.rescale = args.rescale;
    }
    if let Some(tags) = &args.methods {
        cfg.methods = tags.iter().map(|t| t.parse()).collect::<Result<_>>()?;
    }
    take!(arm);
    take!(alpha);
    take!(band);
    take!(mc_draws);
    take!(step_bound);
    take!(stop_norm);
    take!(max_iter);
    take!(seed);
    take!(reps);
    take!(n);
    take!(monotonicity_sizes);
    take!(monotonicity_reps);
    take!(out);
    take!(format);
    if args.coverage {
        cfg.coverage = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_vec_pretty(value).map_err(|e| Error::Numerical(format!("json: {e}")))?;
    s.push(b'\n');
    Ok(s)
}

fn csv_bytes(write: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    Ok(buf)
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    config: &'a RunConfig,
}

fn write_manifest(cfg: &RunConfig, command: &str) -> Result<()> {
    let m = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        config: cfg,
    };
    write_file(&cfg.out.join("manifest.json"), &to_json(&m)?)
}

fn create_out(cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out).map_err(|source| Error::Io {
        path: cfg.out.display().to_string(),
        source,
    })
}

fn load_input(cfg: &RunConfig) -> Result<(SurvivalDataset<f64>, usize)> {
    let path = cfg
        .input
        .as_ref()
        .ok_or_else(|| Error::Config("--input is required".into()))?;
    let report = load_csv::<f64>(path, &cfg.schema)?;
    let ds = if cfg.truncate_at.is_some() || cfg.rescale.is_some() {
        preprocess(&report.dataset, cfg.truncate_at, cfg.rescale)?
    } else {
        report.dataset
    };
    Ok((ds, report.dropped))
}

fn nuisance_for(cfg: &RunConfig, ds: &SurvivalDataset<f64>) -> NuisanceConfig<f64> {
    cfg.nuisance
        .clone()
        .unwrap_or_else(|| NuisanceConfig::main_terms(ds.n_covariates()))
}

/// One output curve: an arm or the treated-minus-control difference.
#[derive(Debug, Serialize)]
struct CurveRecord {
    method: Method,
    arm: String,
    t: Vec<usize>,
    psi: Vec<f64>,
    se: Option<Vec<f64>>,
    lo: Option<Vec<f64>>,
    hi: Option<Vec<f64>>,
    lo_raw: Option<Vec<f64>>,
    hi_raw: Option<Vec<f64>>,
    simultaneous: Option<SimultaneousRecord>,
    /// Not reported for difference curves, which need not be monotone.
    monotone: Option<bool>,
    in_unit_interval: bool,
    converged: bool,
    iterations: Option<usize>,
}

#[derive(Debug, Serialize)]
struct SimultaneousRecord {
    quantile: f64,
    lo: Vec<f64>,
    hi: Vec<f64>,
    lo_raw: Vec<f64>,
    hi_raw: Vec<f64>,
    mc_draws: usize,
}

#[derive(Debug, Serialize)]
struct EstimateOutput {
    n: usize,
    t_max: usize,
    dropped_rows: usize,
    curves: Vec<CurveRecord>,
}

fn clip_to(v: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    v.iter().map(|x| x.max(lo).min(hi)).collect()
}

fn inference_for(
    cfg: &RunConfig,
    psi: &[f64],
    eif: Option<&EifMatrix<f64>>,
    se: Option<&Vec<f64>>,
) -> Result<Option<BandResult<f64>>> {
    match (cfg.band, eif, se) {
        (BandKind::None, _, _) => Ok(None),
        (BandKind::Simultaneous, Some(d), _) => {
            simultaneous_band(d, psi, cfg.alpha, cfg.mc_draws, cfg.seed).map(Some)
        }
        (BandKind::Pointwise, Some(d), _) => pointwise_ci(d, psi, cfg.alpha).map(Some),
        (_, None, Some(se)) => wald_from_se(psi, se, cfg.alpha).map(Some),
        (_, None, None) => Ok(None),
    }
}

fn curve_record(
    method: Method,
    arm: String,
    psi: Vec<f64>,
    band: Option<&BandResult<f64>>,
    est: Option<&CurveEstimate<f64>>,
    range: (f64, f64),
) -> CurveRecord {
    let monotone = (arm != "diff").then(|| crate::scalar::is_non_increasing(&psi, 1e-12));
    CurveRecord {
        method,
        t: (1..=psi.len()).collect(),
        in_unit_interval: psi.iter().all(|&p| (0.0..=1.0).contains(&p)),
        monotone,
        converged: est.is_none_or(|e| e.converged),
        iterations: est.and_then(|e| e.trace.as_ref()).map(|t| t.iterations()),
        se: band.map(|b| b.se.clone()),
        lo: band.map(|b| clip_to(&b.lo_pw, range.0, range.1)),
        hi: band.map(|b| clip_to(&b.hi_pw, range.0, range.1)),
        lo_raw: band.map(|b| b.lo_pw.clone()),
        hi_raw: band.map(|b| b.hi_pw.clone()),
        simultaneous: band.and_then(|b| b.simultaneous.as_ref()).map(|s| SimultaneousRecord {
            quantile: s.quantile,
            lo: clip_to(&s.lo, range.0, range.1),
            hi: clip_to(&s.hi, range.0, range.1),
            lo_raw: s.lo.clone(),
            hi_raw: s.hi.clone(),
            mc_draws: s.mc_draws,
        }),
        arm,
        psi,
    }
}

fn opt_cell(v: &Option<Vec<f64>>, i: usize) -> String {
    v.as_ref().map(|x| x[i].to_string()).unwrap_or_default()
}

fn write_curves_csv(records: &[CurveRecord], out: &mut Vec<u8>) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    let e = |e: csv::Error| Error::Numerical(format!("csv write: {e}"));
    wtr.write_record(["t", "psi", "se", "lo", "hi", "method", "arm"]).map_err(e)?;
    for r in records {
        for i in 0..r.psi.len() {
            wtr.write_record([
                r.t[i].to_string(),
                r.psi[i].to_string(),
                opt_cell(&r.se, i),
                opt_cell(&r.lo, i),
                opt_cell(&r.hi, i),
                r.method.tag().to_string(),
                r.arm.clone(),
            ])
            .map_err(e)?;
        }
    }
    wtr.flush().map_err(|source| Error::Io {
        path: "curves.csv".into(),
        source,
    })
}

fn write_band_csv(r: &CurveRecord, out: &mut Vec<u8>) -> Result<()> {
    let s = r.simultaneous.as_ref().expect("band present");
    let mut wtr = csv::Writer::from_writer(out);
    let e = |e: csv::Error| Error::Numerical(format!("csv write: {e}"));
    wtr.write_record(["t", "psi", "se", "lo_pw", "hi_pw", "lo_simul", "hi_simul"])
        .map_err(e)?;
    for i in 0..r.psi.len() {
        wtr.write_record([
            r.t[i].to_string(),
            r.psi[i].to_string(),
            opt_cell(&r.se, i),
            opt_cell(&r.lo, i),
            opt_cell(&r.hi, i),
            s.lo[i].to_string(),
            s.hi[i].to_string(),
        ])
        .map_err(e)?;
    }
    wtr.flush().map_err(|source| Error::Io {
        path: "band.csv".into(),
        source,
    })
}

fn cmd_estimate(cfg: &RunConfig) -> Result<()> {
    let (ds, dropped) = load_input(cfg)?;
    let methods = if cfg.methods.is_empty() {
        vec![Method::MossL2]
    } else {
        cfg.methods.clone()
    };
    let fit = fit_nuisance(&ds, &nuisance_for(cfg, &ds))?;
    let (iterative, one_step) = (cfg.iterative(), cfg.one_step());
    let arms = cfg.arm.arms();
    let mut records = Vec::new();
    for &method in &methods {
        let mut per_arm = Vec::new();
        for &a in &arms {
            let pred = predict_matrices(&fit, &ds, a);
            let est = estimate(method, &ds, &pred, &iterative, &one_step)?;
            let band = inference_for(cfg, &est.psi, est.eif.as_ref(), est.se.as_ref())?;
            records.push(curve_record(
                method,
                a.as_u8().to_string(),
                est.psi.clone(),
                band.as_ref(),
                Some(&est),
                (0.0, 1.0),
            ));
            per_arm.push(est);
        }
        if let [treated, control] = per_arm.as_slice() {
            let psi: Vec<f64> = treated.psi.iter().zip(&control.psi).map(|(a, b)| a - b).collect();
            let eif = match (&treated.eif, &control.eif) {
                (Some(a), Some(b)) => Some(a.difference(b)?),
                _ => None,
            };
            let se = match (&treated.se, &control.se) {
                (Some(a), Some(b)) => Some(a.iter().zip(b).map(|(x, y)| x.hypot(*y)).collect()),
                _ => None,
            };
            let band = inference_for(cfg, &psi, eif.as_ref(), se.as_ref())?;
            let mut rec = curve_record(method, "diff".into(), psi, band.as_ref(), None, (-1.0, 1.0));
            rec.converged = treated.converged && control.converged;
            records.push(rec);
        }
    }
    create_out(cfg)?;
    if cfg.format.csv() {
        write_file(&cfg.out.join("curves.csv"), &csv_bytes(|b| write_curves_csv(&records, b))?)?;
        for r in records.iter().filter(|r| r.simultaneous.is_some()) {
            let name = format!("band_{}_{}.csv", r.method.tag(), r.arm);
            write_file(&cfg.out.join(name), &csv_bytes(|b| write_band_csv(r, b))?)?;
        }
    }
    if cfg.format.json() {
        let out = EstimateOutput {
            n: ds.len(),
            t_max: ds.t_max(),
            dropped_rows: dropped,
            curves: records,
        };
        write_file(&cfg.out.join("estimates.json"), &to_json(&out)?)?;
    }
    write_manifest(cfg, "estimate")
}

fn cmd_simulate(cfg: &RunConfig) -> Result<()> {
    let methods = if cfg.methods.is_empty() {
        Method::ALL.to_vec()
    } else {
        cfg.methods.clone()
    };
    let dgp = cfg.dgp.clone().with_n(cfg.n).with_seed(cfg.seed);
    create_out(cfg)?;
    for a in cfg.arm.arms() {
        let mut study = StudyConfig::new(dgp.clone(), cfg.reps, a, methods.clone());
        if let Some(n) = &cfg.nuisance {
            study.nuisance = n.clone();
        } else {
            study.nuisance = dgp_nuisance_config(&dgp);
        }
        study.iterative = cfg.iterative();
        study.one_step = cfg.one_step();
        study.coverage = cfg.coverage;
        study.alpha = cfg.alpha;
        study.mc_draws = cfg.mc_draws;
        let report = run_study(&study)?;
        let stem = format!("study_arm{}", a.as_u8());
        if cfg.format.csv() {
            write_file(
                &cfg.out.join(format!("{stem}.csv")),
                &csv_bytes(|b| report.write_csv(b))?,
            )?;
        }
        if cfg.format.json() {
            write_file(&cfg.out.join(format!("{stem}.json")), &to_json(&report)?)?;
        }
    }
    write_manifest(cfg, "simulate")
}

fn cmd_diagnose(cfg: &RunConfig) -> Result<()> {
    let (ds, _) = load_input(cfg)?;
    let ncfg = nuisance_for(cfg, &ds);
    let fit = fit_nuisance(&ds, &ncfg)?;
    create_out(cfg)?;
    for a in cfg.arm.arms() {
        let pred = predict_matrices(&fit, &ds, a);
        let rows = inverse_weight_summary(&pred);
        let name = format!("weights_arm{}.csv", a.as_u8());
        write_file(&cfg.out.join(name), &csv_bytes(|b| write_weight_summary_csv(&rows, b))?)?;
        if !cfg.monotonicity_sizes.is_empty() {
            let methods = if cfg.methods.is_empty() {
                vec![Method::KaplanMeier, Method::Ipcw, Method::Ee, Method::Tmle, Method::MossL2]
            } else {
                cfg.methods.clone()
            };
            let table = monotonicity_experiment(
                &ds,
                &cfg.monotonicity_sizes,
                cfg.monotonicity_reps,
                &methods,
                a,
                &ncfg,
                &cfg.one_step(),
                cfg.seed,
            )?;
            let name = format!("monotonicity_arm{}.csv", a.as_u8());
            write_file(&cfg.out.join(name), &csv_bytes(|b| table.write_csv(b))?)?;
        }
    }
    write_manifest(cfg, "diagnose")
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    error: ErrorBody<'a>,
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    kind: &'a str,
    message: String,
    exit_code: i32,
}

fn report_error(kind: &str, message: String, code: i32) -> i32 {
    let body = ErrorReport {
        error: ErrorBody {
            kind,
            message,
            exit_code: code,
        },
    };
    eprintln!("{}", serde_json::to_string(&body).unwrap_or_default());
    code
}

/// Runs the CLI on `args` (including the program name) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return EXIT_OK;
        }
        Err(e) => return report_error("usage", e.to_string().trim_end().to_string(), EXIT_CONFIG),
    };
    let (name, args) = match &cli.command {
        Command::Estimate(a) => ("estimate", a),
        Command::Simulate(a) => ("simulate", a),
        Command::Diagnose(a) => ("diagnose", a),
    };
    let work = || -> Result<()> {
        let cfg = resolve(args)?;
        match name {
            "estimate" => cmd_estimate(&cfg),
            "simulate" => cmd_simulate(&cfg),
            _ => cmd_diagnose(&cfg),
        }
    };
    let result = match cli.threads {
        Some(0) => Err(Error::Config("--threads must be positive".into())),
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::Config(e.to_string()))
            .and_then(|pool| pool.install(work)),
        None => work(),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => report_error(e.kind(), e.to_string(), exit_code(&e)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips() {
        let cfg = RunConfig {
            methods: vec![Method::MossL1, Method::Ee],
            arm: ArmChoice::Treated,
            ..RunConfig::default()
        };
        let text = serde_json::to_string(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"alpah": 0.1}"#).is_err());
    }

    #[test]
    fn exit_codes_by_class() {
        assert_eq!(exit_code(&Error::Config("x".into())), EXIT_CONFIG);
        assert_eq!(exit_code(&Error::Schema("x".into())), EXIT_DATA);
        assert_eq!(exit_code(&Error::Numerical("x".into())), EXIT_NUMERICAL);
    }

    #[test]
    fn unknown_flag_is_usage_error() {
        assert_eq!(run(["survtmle", "estimate", "--bogus"]), EXIT_CONFIG);
    }

    #[test]
    fn missing_input_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap();
        assert_eq!(run(["survtmle", "estimate", "--out", out]), EXIT_CONFIG);
    }
}
