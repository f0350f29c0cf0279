#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use survtmle::sim::{simulate, DgpConfig};
use survtmle::Dataset;

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_survtmle")
}

pub fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("spawn survtmle")
}

/// Simulated data written as `pid,time,event,trt,W`.
pub fn write_dgp_csv(path: &Path, n: usize, seed: u64) -> Dataset {
    let cfg = DgpConfig::default().with_n(n).with_seed(seed);
    let ds: Dataset = simulate(&cfg).unwrap();
    let mut wtr = csv::Writer::from_path(path).unwrap();
    wtr.write_record(["pid", "time", "event", "trt", "W"]).unwrap();
    for o in ds.observations() {
        wtr.write_record([
            o.id.to_string(),
            o.t_tilde.to_string(),
            u8::from(o.delta).to_string(),
            o.a.as_u8().to_string(),
            o.w[0].to_string(),
        ])
        .unwrap();
    }
    wtr.flush().unwrap();
    ds
}

pub const SCHEMA: [&str; 10] = [
    "--id-col", "pid", "--time-col", "time", "--event-col", "event", "--treatment-col", "trt", "--covariates", "W",
];

/// Every CSV under `dir`, sorted by name, with its bytes.
pub fn csv_files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|p| {
            let bytes = std::fs::read(&p).unwrap();
            (p.file_name().unwrap().into(), bytes)
        })
        .collect()
}
