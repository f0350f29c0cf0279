//! Observed-data model on a 1-based integer time grid, person-time expansion
//! and CSV ingestion.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Binary baseline treatment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Arm {
    Control,
    Treated,
}

impl Arm {
    pub fn from_u8(v: u8) -> Option<Arm> {
        match v {
            0 => Some(Arm::Control),
            1 => Some(Arm::Treated),
            _ => None,
        }
    }

    pub fn as_u8(self) -> u8 {
        match self {
            Arm::Control => 0,
            Arm::Treated => 1,
        }
    }

    pub fn other(self) -> Arm {
        match self {
            Arm::Control => Arm::Treated,
            Arm::Treated => Arm::Control,
        }
    }

    pub fn both() -> [Arm; 2] {
        [Arm::Treated, Arm::Control]
    }
}

impl std::fmt::Display for Arm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.as_u8())
    }
}

/// One subject: covariates `w`, treatment `a`, follow-up `t_tilde` and event flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation<F> {
    pub id: i64,
    pub w: Vec<F>,
    pub a: Arm,
    pub t_tilde: usize,
    /// `true` when the failure was observed, `false` when censored.
    pub delta: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalDataset<F> {
    observations: Vec<Observation<F>>,
    t_max: usize,
    covariate_names: Vec<String>,
}

impl<F: Scalar> SurvivalDataset<F> {
    /// Validates the observations; `t_max` is the largest follow-up time.
    pub fn new(observations: Vec<Observation<F>>, covariate_names: Vec<String>) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::EmptyData("no observations".into()));
        }
        let p = covariate_names.len();
        let mut ids = HashSet::with_capacity(observations.len());
        for o in &observations {
            if o.w.len() != p {
                return Err(Error::InvalidArgument(format!(
                    "observation {} has {} covariates, expected {p}",
                    o.id,
                    o.w.len()
                )));
            }
            if o.t_tilde == 0 {
                return Err(Error::InvalidArgument(format!(
                    "observation {} has follow-up time 0; the grid starts at 1",
                    o.id
                )));
            }
            if !ids.insert(o.id) {
                return Err(Error::InvalidArgument(format!("duplicate id {}", o.id)));
            }
        }
        let t_max = observations.iter().map(|o| o.t_tilde).max().unwrap_or(1);
        Ok(Self {
            observations,
            t_max,
            covariate_names,
        })
    }

    pub fn observations(&self) -> &[Observation<F>] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn t_max(&self) -> usize {
        self.t_max
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn n_covariates(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn arm_count(&self, a: Arm) -> usize {
        self.observations.iter().filter(|o| o.a == a).count()
    }

    /// New dataset holding the observations at `indices` (in that order).
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let obs = indices
            .iter()
            .map(|&i| self.observations[i].clone())
            .collect();
        Self::new(obs, self.covariate_names.clone())
    }

    /// Copy with every event indicator flipped; failures become censorings and vice versa.
    pub fn with_delta_flipped(&self) -> Self {
        let mut out = self.clone();
        for o in &mut out.observations {
            o.delta = !o.delta;
        }
        out
    }
}

/// Administrative truncation followed by coarsening of the time grid.
///
/// Follow-up beyond `truncate_at` is censored at `truncate_at`; then every time
/// maps to `ceil(t / rescale)`.
pub fn preprocess<F: Scalar>(
    ds: &SurvivalDataset<F>,
    truncate_at: Option<usize>,
    rescale: Option<usize>,
) -> Result<SurvivalDataset<F>> {
    if truncate_at == Some(0) {
        return Err(Error::InvalidArgument("truncate_at must be >= 1".into()));
    }
    if rescale == Some(0) {
        return Err(Error::InvalidArgument("rescale must be >= 1".into()));
    }
    let mut obs = ds.observations.clone();
    for o in &mut obs {
        if let Some(cut) = truncate_at {
            if o.t_tilde > cut {
                o.t_tilde = cut;
                o.delta = false;
            }
        }
        if let Some(r) = rescale {
            o.t_tilde = o.t_tilde.div_ceil(r);
        }
    }
    SurvivalDataset::new(obs, ds.covariate_names.clone())
}

/// One person-time row. Rows after the terminal event are never emitted.
#[derive(Debug, Clone, PartialEq)]
pub struct LongRow<'a, F> {
    pub id: i64,
    /// Index of the subject within the dataset.
    pub subject: usize,
    pub k: usize,
    pub d_n: bool,
    pub d_ac: bool,
    pub at_risk: bool,
    pub a: Arm,
    pub w: &'a [F],
}

pub fn to_long<F: Scalar>(ds: &SurvivalDataset<F>) -> Vec<LongRow<'_, F>> {
    let total: usize = ds.observations.iter().map(|o| o.t_tilde).sum();
    let mut rows = Vec::with_capacity(total);
    for (subject, o) in ds.observations.iter().enumerate() {
        for k in 1..=o.t_tilde {
            let last = k == o.t_tilde;
            rows.push(LongRow {
                id: o.id,
                subject,
                k,
                d_n: last && o.delta,
                d_ac: last && !o.delta,
                at_risk: true,
                a: o.a,
                w: &o.w,
            });
        }
    }
    rows
}

/// Writes person-time rows as `id,k,dN,dAc,a,w1..wp`.
pub fn write_long_csv<F: Scalar, W: Write>(rows: &[LongRow<'_, F>], n_cov: usize, out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    let mut header = vec![
        "id".to_string(),
        "k".into(),
        "dN".into(),
        "dAc".into(),
        "a".into(),
    ];
    header.extend((1..=n_cov).map(|j| format!("w{j}")));
    wtr.write_record(&header).map_err(csv_io)?;
    for r in rows {
        let mut rec = vec![
            r.id.to_string(),
            r.k.to_string(),
            u8::from(r.d_n).to_string(),
            u8::from(r.d_ac).to_string(),
            r.a.as_u8().to_string(),
        ];
        rec.extend(r.w.iter().map(|x| x.to_string()));
        wtr.write_record(&rec).map_err(csv_io)?;
    }
    wtr.flush().map_err(|e| Error::Io {
        path: "<long csv>".into(),
        source: e,
    })
}

fn csv_io(e: csv::Error) -> Error {
    Error::Numerical(format!("csv write: {e}"))
}

/// How raw times map to the integer grid.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Discretizer {
    /// Times must already be positive integers.
    #[default]
    Integer,
    /// Positive reals mapped by `ceil`.
    Ceil,
}

/// Named-column mapping for CSV ingestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvSchema {
    pub id: Option<String>,
    pub time: String,
    pub event: String,
    pub treatment: String,
    pub covariates: Vec<String>,
    pub discretizer: Discretizer,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            id: None,
            time: "time".into(),
            event: "event".into(),
            treatment: "treatment".into(),
            covariates: Vec::new(),
            discretizer: Discretizer::Integer,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LoadReport<F> {
    pub dataset: SurvivalDataset<F>,
    /// Rows discarded because some mapped field was missing.
    pub dropped: usize,
}

fn is_missing(field: &str) -> bool {
    let f = field.trim();
    f.is_empty() || f.eq_ignore_ascii_case("na") || f.eq_ignore_ascii_case("nan") || f == "."
}

pub fn load_csv<F: Scalar>(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<LoadReport<F>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    read_csv(file, schema)
}

/// Complete-case ingestion: rows with any missing mapped field are dropped and counted.
pub fn read_csv<F: Scalar, R: Read>(input: R, schema: &CsvSchema) -> Result<LoadReport<F>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(input);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            msg: e.to_string(),
        })?
        .clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Schema(format!("column '{name}' not found in header")))
    };
    let id_col = schema.id.as_deref().map(col).transpose()?;
    let time_col = col(&schema.time)?;
    let event_col = col(&schema.event)?;
    let trt_col = col(&schema.treatment)?;
    let cov_cols = schema
        .covariates
        .iter()
        .map(|c| col(c))
        .collect::<Result<Vec<_>>>()?;

    let mut obs = Vec::new();
    let mut dropped = 0usize;
    for (idx, rec) in rdr.records().enumerate() {
        // header is line 1
        let line = idx + 2;
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(line, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let mut mapped = vec![time_col, event_col, trt_col];
        mapped.extend(&cov_cols);
        mapped.extend(id_col);
        if mapped.iter().any(|&c| rec.get(c).is_none_or(is_missing)) {
            dropped += 1;
            continue;
        }
        let field = |c: usize| rec.get(c).unwrap_or("").trim();
        let num = |c: usize, what: &str| -> Result<f64> {
            field(c).parse::<f64>().map_err(|_| Error::Parse {
                line,
                msg: format!("{what} value '{}' is not numeric", field(c)),
            })
        };
        let raw_t = num(time_col, "time")?;
        if !(raw_t > 0.0) || !raw_t.is_finite() {
            return Err(Error::Parse {
                line,
                msg: format!("time must be positive, got {raw_t}"),
            });
        }
        let t_tilde = match schema.discretizer {
            Discretizer::Integer => {
                if raw_t.fract() != 0.0 {
                    return Err(Error::Parse {
                        line,
                        msg: format!("time {raw_t} is not an integer; declare a discretizer"),
                    });
                }
                raw_t as usize
            }
            Discretizer::Ceil => raw_t.ceil() as usize,
        };
        let binary = |c: usize, what: &str| -> Result<u8> {
            let v = num(c, what)?;
            if v == 0.0 {
                Ok(0)
            } else if v == 1.0 {
                Ok(1)
            } else {
                Err(Error::Schema(format!(
                    "{what} must be 0 or 1, got {v} at line {line}"
                )))
            }
        };
        let delta = binary(event_col, "event")? == 1;
        let a = Arm::from_u8(binary(trt_col, "treatment")?).expect("validated binary");
        let w = cov_cols
            .iter()
            .map(|&c| num(c, "covariate").map(F::lit))
            .collect::<Result<Vec<F>>>()?;
        let id = match id_col {
            Some(c) => field(c).parse::<i64>().map_err(|_| Error::Parse {
                line,
                msg: format!("id '{}' is not an integer", field(c)),
            })?,
            None => (idx + 1) as i64,
        };
        obs.push(Observation {
            id,
            w,
            a,
            t_tilde,
            delta,
        });
    }
    if obs.is_empty() {
        return Err(Error::EmptyData(format!(
            "no complete rows ({dropped} dropped for missing values)"
        )));
    }
    let dataset = SurvivalDataset::new(obs, schema.covariates.clone())?;
    Ok(LoadReport { dataset, dropped })
}
