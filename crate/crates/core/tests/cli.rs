mod common;

use common::{csv_files, run, write_dgp_csv, SCHEMA};

fn estimate(dir: &std::path::Path, input: &std::path::Path, threads: &str, extra: &[&str]) -> std::process::Output {
    let mut args = vec!["--threads", threads, "estimate", "--input", input.to_str().unwrap()];
    args.extend(SCHEMA);
    args.extend(["--out", dir.to_str().unwrap(), "--seed", "5"]);
    args.extend(extra);
    run(&args)
}

#[test]
fn estimate_writes_curves_and_bands() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("d.csv");
    write_dgp_csv(&input, 150, 3);
    let out = tmp.path().join("o");
    let res = estimate(&out, &input, "1", &["--method", "moss-l2,ee", "--band", "simultaneous"]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));

    let curves = std::fs::read_to_string(out.join("curves.csv")).unwrap();
    assert!(curves.starts_with("t,psi,se,lo,hi,method,arm\n"));
    for arm in ["0", "1", "diff"] {
        let band = std::fs::read_to_string(out.join(format!("band_moss-l2_{arm}.csv"))).unwrap();
        assert!(band.starts_with("t,psi,se,lo_pw,hi_pw,lo_simul,hi_simul\n"));
    }

    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("estimates.json")).unwrap()).unwrap();
    for c in json["curves"].as_array().unwrap() {
        match (c["method"].as_str().unwrap(), c["arm"].as_str().unwrap()) {
            (_, "diff") => assert!(c["monotone"].is_null()),
            ("moss-l2", _) => assert_eq!(c["monotone"], true),
            _ => assert!(c["monotone"].is_boolean()),
        }
    }
}

#[test]
fn estimate_is_identical_across_thread_counts_and_replays() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("d.csv");
    write_dgp_csv(&input, 120, 8);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let methods = ["--method", "tmle,moss-l2,ipcw", "--band", "simultaneous"];
    assert!(estimate(&a, &input, "1", &methods).status.success());
    assert!(estimate(&b, &input, "4", &methods).status.success());
    assert_eq!(csv_files(&a), csv_files(&b));

    let c = tmp.path().join("c");
    let replay = run(&[
        "estimate",
        "--config",
        a.join("manifest.json").to_str().unwrap(),
        "--out",
        c.to_str().unwrap(),
    ]);
    assert!(replay.status.success(), "{}", String::from_utf8_lossy(&replay.stderr));
    assert_eq!(csv_files(&a), csv_files(&c));
}

#[test]
fn simulate_and_diagnose_are_identical_across_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = |dir: &std::path::Path, threads: &str| {
        run(&[
            "--threads", threads, "simulate", "--n", "80", "--reps", "6", "--seed", "11", "--method", "ee,tmle,moss-l2",
            "--coverage", "--out", dir.to_str().unwrap(),
        ])
    };
    let (a, b) = (tmp.path().join("sa"), tmp.path().join("sb"));
    assert!(sim(&a, "1").status.success());
    assert!(sim(&b, "3").status.success());
    assert!(!csv_files(&a).is_empty());
    assert_eq!(csv_files(&a), csv_files(&b));

    let input = tmp.path().join("d.csv");
    write_dgp_csv(&input, 200, 4);
    let diag = |dir: &std::path::Path, threads: &str| {
        let mut args = vec!["--threads", threads, "diagnose", "--input", input.to_str().unwrap()];
        args.extend(SCHEMA);
        args.extend([
            "--monotonicity-sizes", "40,80", "--monotonicity-reps", "5", "--seed", "2", "--out", dir.to_str().unwrap(),
        ]);
        run(&args)
    };
    let (c, d) = (tmp.path().join("dc"), tmp.path().join("dd"));
    assert!(diag(&c, "1").status.success());
    assert!(diag(&d, "4").status.success());
    let files = csv_files(&c);
    assert!(files.iter().any(|(p, _)| p.to_str().unwrap().starts_with("monotonicity")));
    assert_eq!(files, csv_files(&d));
}

#[test]
fn exit_codes_and_error_json() {
    let tmp = tempfile::tempdir().unwrap();
    let res = run(&["estimate", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&res.stderr).unwrap();
    assert_eq!(err["error"]["exit_code"], 2);

    assert_eq!(run(&["estimate", "--no-such-flag"]).status.code(), Some(2));

    let bad = tmp.path().join("bad.csv");
    std::fs::write(&bad, "pid,time,event,trt,W\n1,-3,1,1,0.2\n2,2,0,0,0.4\n").unwrap();
    let mut args = vec!["estimate", "--input", bad.to_str().unwrap()];
    args.extend(SCHEMA);
    args.extend(["--out", tmp.path().to_str().unwrap()]);
    assert_eq!(run(&args).status.code(), Some(3));
}
