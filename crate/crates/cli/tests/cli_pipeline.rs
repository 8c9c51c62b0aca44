//! End-to-end tests driving the compiled binary the way a user would.

use chrono::Datelike;
use std::path::Path;
use std::process::{Command, Output};

fn sarp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sarp"))
        .args(args)
        .output()
        .expect("binary should spawn")
}

fn assert_ok(out: &Output, context: &str) {
    assert!(
        out.status.success(),
        "{context} failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read_bytes(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
}

fn line_count(path: &Path) -> usize {
    String::from_utf8(read_bytes(path)).unwrap().lines().count()
}

#[test]
fn seeded_smoke_produces_every_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let out_s = out.to_str().unwrap();
    let config = dir.path().join("smoke.conf");
    std::fs::write(&config, "gen_assets = 50\ngen_months = 36\n").unwrap();
    let conf_s = config.to_str().unwrap();

    for cmd in ["gen", "project", "sort", "report", "verify"] {
        let res = sarp(&[cmd, "--config", conf_s, "--out", out_s, "--seed", "11"]);
        assert_ok(&res, cmd);
    }

    let expected = [
        "run_manifest.csv",
        "daily.csv",
        "monthly.csv",
        "rf.csv",
        "factors_daily.csv",
        "factors_monthly.csv",
        "characteristics.csv",
        "macro.csv",
        "truth.csv",
        "projections.csv",
        "weights.csv",
        "bins.csv",
        "bins_min_risky.csv",
        "bins_bivariate.csv",
        "characteristics_summary.csv",
        "report.csv",
        "corr.csv",
        "perf.csv",
        "verification.csv",
        "plotdata/log_cumulative.csv",
        "plotdata/rolling.csv",
        "plotdata/avg_r2.csv",
    ];
    for name in expected {
        let path = out.join(name);
        assert!(path.exists(), "{name} missing");
        assert!(line_count(&path) > 1, "{name} has no data rows");
    }

    // 36 generated months leave 23 eligible projection month-ends.
    assert_eq!(line_count(&out.join("projections.csv")), 1 + 23 * 50);
}

#[test]
fn rerun_and_worker_count_leave_outputs_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let out_s = out.to_str().unwrap();

    assert_ok(&sarp(&["gen", "--out", out_s, "--seed", "3"]), "gen");
    assert_ok(&sarp(&["project", "--out", out_s, "--seed", "3"]), "project one worker");
    let first_proj = read_bytes(&out.join("projections.csv"));
    let first_weights = read_bytes(&out.join("weights.csv"));

    // Same command again: all projection outputs must be byte-identical.
    assert_ok(&sarp(&["project", "--out", out_s, "--seed", "3"]), "project rerun");
    assert_eq!(first_proj, read_bytes(&out.join("projections.csv")), "rerun changed bytes");

    // A different worker count must not change a single byte either.
    assert_ok(
        &sarp(&["project", "--out", out_s, "--seed", "3", "--workers", "4"]),
        "project four workers",
    );
    assert_eq!(first_proj, read_bytes(&out.join("projections.csv")), "workers changed bytes");
    assert_eq!(first_weights, read_bytes(&out.join("weights.csv")), "workers changed bytes");
}

/// Builds a panel where every asset has exactly 60 trading days inside the
/// final trailing-year window, plus one early row so the panel spans a full
/// year and the final month-end is an eligible projection date.
#[test]
fn min_days_above_coverage_yields_zero_records_and_warning() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    std::fs::create_dir_all(&out).unwrap();
    let out_s = out.to_str().unwrap();

    let assets = ["A00000", "A00001", "A00002"];
    // 60 weekdays ending 2002-06-28 (a Friday).
    let mut days = Vec::new();
    let mut d = chrono::NaiveDate::from_ymd_opt(2002, 6, 28).unwrap();
    while days.len() < 60 {
        if matches!(
            d.weekday(),
            chrono::Weekday::Sat | chrono::Weekday::Sun
        ) {
            d = d.pred_opt().unwrap();
            continue;
        }
        days.push(d);
        d = d.pred_opt().unwrap();
    }
    days.reverse();

    let mut daily = String::from("date,asset_id,return\n");
    for (i, asset) in assets.iter().enumerate() {
        daily.push_str(&format!("2001-05-01,{asset},0.00{i}\n"));
        for (j, day) in days.iter().enumerate() {
            daily.push_str(&format!("{day},{asset},0.00{}\n", (i + j) % 7));
        }
    }
    std::fs::write(out.join("daily.csv"), daily).unwrap();

    let mut monthly = String::from("date,asset_id,return\n");
    for asset in assets {
        monthly.push_str(&format!("2002-06-30,{asset},0.01\n"));
        monthly.push_str(&format!("2002-07-31,{asset},0.02\n"));
    }
    std::fs::write(out.join("monthly.csv"), monthly).unwrap();
    std::fs::write(out.join("rf.csv"), "date,rf\n2002-06-30,0.001\n2002-07-31,0.001\n")
        .unwrap();

    let res = sarp(&["project", "--out", out_s, "--min-days", "61", "--months", "2002-06..2002-06"]);
    assert_ok(&res, "project with unreachable min-days");
    let stderr = String::from_utf8_lossy(&res.stderr);
    assert!(stderr.contains("zero records"), "missing warning, stderr: {stderr}");
    assert_eq!(line_count(&out.join("projections.csv")), 1, "expected header only");
    assert_eq!(line_count(&out.join("weights.csv")), 1, "expected header only");
}

#[test]
fn unknown_flag_exits_with_usage() {
    let res = sarp(&["project", "--definitely-not-a-flag"]);
    assert_eq!(res.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&res.stderr);
    assert!(stderr.contains("--definitely-not-a-flag"), "stderr: {stderr}");
}

#[test]
fn missing_inputs_fail_with_single_error_line() {
    let dir = tempfile::tempdir().unwrap();
    let out_s = dir.path().to_str().unwrap().to_string();
    let res = sarp(&["project", "--out", &out_s]);
    assert_eq!(res.status.code(), Some(1));
    let stderr = String::from_utf8(res.stderr).unwrap();
    let lines: Vec<&str> = stderr.trim_end().lines().collect();
    assert_eq!(lines.len(), 1, "expected one error line, got: {stderr}");
    assert!(lines[0].starts_with("error: project: "), "got: {}", lines[0]);
}
