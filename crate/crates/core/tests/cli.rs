//! Black-box tests of the command-line interface.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn gridagg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gridagg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

#[test]
fn keygen_writes_expected_files_deterministically() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let run = |dir: &Path| {
        let out = gridagg(&[
            "keygen",
            "--bits",
            "512",
            "--group-size",
            "10",
            "--groups",
            "10",
            "--seed",
            "42",
            "--out",
            dir.to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0));
    };
    run(dir_a.path());
    run(dir_b.path());

    let names = |dir: &Path| {
        let mut v: Vec<String> = fs::read_dir(dir)
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        v.sort();
        v
    };
    let files = names(dir_a.path());
    // 100 meter keys + params + aggregator, factors only behind the flag
    assert_eq!(files.len(), 102);
    assert!(files.contains(&"params.txt".to_string()));
    assert!(files.contains(&"aggregator.txt".to_string()));
    assert!(!files.contains(&"factors.txt".to_string()));
    assert_eq!(files.iter().filter(|f| f.starts_with("meter_")).count(), 100);

    // same seed, byte-identical outputs
    assert_eq!(files, names(dir_b.path()));
    for name in &files {
        assert_eq!(
            fs::read(dir_a.path().join(name)).unwrap(),
            fs::read(dir_b.path().join(name)).unwrap(),
            "{name} differs between runs"
        );
    }

    // params file carries the version header
    let params = fs::read_to_string(dir_a.path().join("params.txt")).unwrap();
    assert!(params.starts_with("format=1\n"));
}

#[test]
fn keygen_emit_factors_is_gated() {
    let dir = tempfile::tempdir().unwrap();
    let out = gridagg(&[
        "keygen",
        "--bits",
        "64",
        "--group-size",
        "2",
        "--groups",
        "1",
        "--seed",
        "1",
        "--out",
        dir.path().to_str().unwrap(),
        "--emit-factors",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let factors = fs::read_to_string(dir.path().join("factors.txt")).unwrap();
    assert!(factors.contains("p="));
    assert!(factors.contains("q="));
    // nothing secret on stdout
    let text = stdout(&out);
    for line in factors.lines().filter(|l| l.starts_with(['p', 'q'])) {
        let value = line.split_once('=').unwrap().1;
        assert!(!text.contains(value));
    }
}

#[test]
fn keygen_requires_out_flag() {
    let out = gridagg(&["keygen", "--bits", "64"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--out"));
}

#[test]
fn simulate_zero_faults_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("scenario.txt");
    fs::write(&config, "n=20\nd=5\nrounds=3\nbits=128\nseed=6\nfault_model=none\n").unwrap();
    let out = gridagg(&["simulate", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.contains("max_abs_rel_error=0"));
    assert!(text.contains("substitutions=0"));

    let again = gridagg(&["simulate", "--config", config.to_str().unwrap()]);
    assert_eq!(stdout(&again), text);
}

#[test]
fn simulate_with_faults_records_stream() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("scenario.txt");
    fs::write(&config, "n=100\nd=10\nrounds=2\nbits=128\nseed=7\nfault_model=fixed:5\n").unwrap();
    let outfile = dir.path().join("rounds.csv");
    let out = gridagg(&[
        "simulate",
        "--config",
        config.to_str().unwrap(),
        "--out",
        outfile.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = fs::read_to_string(&outfile).unwrap();
    assert!(text.starts_with("round,S,S_prime,rel_error,faults,substitutions,failed_groups\n"));
    assert!(text.contains("sub_mod_exps="));
}

#[test]
fn simulate_rejects_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("scenario.txt");
    // d does not divide n
    fs::write(&config, "n=21\nd=5\n").unwrap();
    let out = gridagg(&["simulate", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("divide"));
}

#[test]
fn sweep_fig2_defaults_match_error_bound() {
    let out = gridagg(&["sweep-fig2"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.starts_with("N,M,e_os\n"));
    let max_line = text.lines().find(|l| l.starts_with("max=")).unwrap();
    let max: f64 = max_line.trim_start_matches("max=").parse().unwrap();
    assert!(max < 0.0007);
    let mean_line = text.lines().find(|l| l.starts_with("mean=")).unwrap();
    let mean: f64 = mean_line.trim_start_matches("mean=").parse().unwrap();
    assert!((0.00015..=0.00025).contains(&mean));
}

#[test]
fn sweep_fig4_emits_paired_curves() {
    let out = gridagg(&["sweep-fig4", "--d", "10"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "x,e_os,e_dgaped");
    assert_eq!(lines.next().unwrap(), "0,0,0");
}

#[test]
fn sweep_rejects_bad_ranges() {
    let out = gridagg(&["sweep-fig2", "--n-start", "100", "--n-end", "50"]);
    assert_eq!(out.status.code(), Some(2));
    let out = gridagg(&["sweep-fig4", "--steps", "0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn crossover_default_calibration() {
    let out = gridagg(&["crossover", "--gcal", "13", "--mcal", "1.666"]);
    assert_eq!(out.status.code(), Some(0));
    let x: f64 = stdout(&out).trim().parse().unwrap();
    assert!((x - 0.9985).abs() < 5e-4, "crossover {x}");
}

#[test]
fn selftest_passes_and_prints_fixture_sum() {
    let out = gridagg(&["selftest"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.contains("toy fixture M_sum=7"));
    assert!(text.contains("discrepancy:"));
}

#[test]
fn selftest_names_failing_params_check() {
    let dir = tempfile::tempdir().unwrap();
    let keys = dir.path().join("keys");
    let out = gridagg(&[
        "keygen",
        "--bits",
        "64",
        "--group-size",
        "2",
        "--groups",
        "1",
        "--seed",
        "3",
        "--out",
        keys.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let params = keys.join("params.txt");

    // valid file passes
    let out = gridagg(&["selftest", "--params", params.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));

    // corrupt n_sq and expect the named check to fail
    let text = fs::read_to_string(&params).unwrap();
    let corrupted: String = text
        .lines()
        .map(|l| {
            if let Some(rest) = l.strip_prefix("n_sq=") {
                format!("n_sq={}1\n", rest)
            } else {
                format!("{l}\n")
            }
        })
        .collect();
    fs::write(&params, corrupted).unwrap();
    let out = gridagg(&["selftest", "--params", params.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stdout(&out).contains("FAIL params-file"));
    assert!(String::from_utf8_lossy(&out.stderr).contains("params-file"));
}
