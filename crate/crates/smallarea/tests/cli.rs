//! End-to-end checks of the binary: exit-code contract, determinism, and
//! CSV round-tripping through the report emitter.

use std::io::Write;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_smallarea"))
}

fn fixture_path() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("data/seinc15.csv")
}

#[test]
fn fit_succeeds_on_bundled_data() {
    let out = bin()
        .args(["fit"])
        .arg(fixture_path())
        .args(["--method", "reml", "--measures", "pr,morris"])
        .output()
        .expect("binary runs");
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("# schema_version=1"));
    assert_eq!(text.lines().count(), 2 + 15); // metadata, header, 15 rows
}

#[test]
fn same_invocation_is_byte_identical() {
    let run = || {
        bin()
            .args(["fit"])
            .arg(fixture_path())
            .args([
                "--method",
                "fh-moment",
                "--measures",
                "pr,hb",
                "--seed",
                "9",
            ])
            .output()
            .expect("binary runs")
            .stdout
    };
    assert_eq!(run(), run());
}

#[test]
fn json_format_parses() {
    let out = bin()
        .args(["fit"])
        .arg(fixture_path())
        .args(["--format", "json"])
        .output()
        .expect("binary runs");
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["rows"].as_array().unwrap().len(), 15);
}

#[test]
fn validation_failures_exit_2() {
    // nonpositive variance in row 3
    let tmp = tempfile_path("bad_v");
    {
        let mut f = std::fs::File::create(&tmp).unwrap();
        writeln!(f, "area_id,y,x1,V").unwrap();
        writeln!(f, "a,1.0,2.0,1.0").unwrap();
        writeln!(f, "b,2.0,3.0,0").unwrap();
        writeln!(f, "c,3.0,4.0,1.0").unwrap();
    }
    let out = bin().args(["fit"]).arg(&tmp).output().expect("binary runs");
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("line 3"), "{err}");
    std::fs::remove_file(&tmp).ok();

    // unknown method is a validation failure too
    let out = bin()
        .args(["fit"])
        .arg(fixture_path())
        .args(["--method", "nope"])
        .output()
        .expect("binary runs");
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn numerical_failures_exit_3() {
    // data on an exact plane forces Â = 0, so width-corrected intervals
    // are refused with the boundary diagnostic
    let tmp = tempfile_path("boundary");
    {
        let mut f = std::fs::File::create(&tmp).unwrap();
        writeln!(f, "area_id,y,x1,V").unwrap();
        for i in 0..10 {
            writeln!(f, "s{i},{}.0,{}.0,1.0", 2 * i + 1, i).unwrap();
        }
    }
    let out = bin()
        .args(["intervals"])
        .arg(&tmp)
        .args(["--method", "reml"])
        .output()
        .expect("binary runs");
    assert_eq!(out.status.code(), Some(3));
    std::fs::remove_file(&tmp).ok();
}

#[test]
fn coverage_emits_contracted_csv() {
    let out = bin()
        .args([
            "coverage", "--m", "20", "--b", "0.4", "--reps", "2000", "--modes", "naive", "--seed",
            "3",
        ])
        .output()
        .expect("binary runs");
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "mode,B,m,reps,coverage,se");
    let row = lines.next().unwrap();
    assert!(row.starts_with("naive,0.4,20,2000,"));
    // numbers use '.' and reparse
    for field in row.split(',').skip(4) {
        field.parse::<f64>().unwrap();
    }
}

#[test]
fn reproduce_reports_deviations() {
    let out = bin()
        .args(["reproduce", "--tol", "1e-6"])
        .output()
        .expect("binary runs");
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("reproduction report"));
    assert!(text.contains("EB column"));
    // deviations are emitted even where they exceed tolerances
    assert!(text.contains("rel dev"));
}

#[test]
fn unit_fit_round_trip() {
    let units = tempfile_path("units");
    let areas = tempfile_path("areas");
    {
        let mut f = std::fs::File::create(&units).unwrap();
        writeln!(f, "area_id,y,x1").unwrap();
        let ys = [
            ("a", [1.2, 0.9, 1.4]),
            ("b", [2.1, 2.4, 2.0]),
            ("c", [0.4, 0.8, 0.2]),
            ("d", [1.7, 1.2, 1.5]),
        ];
        for (id, vals) in ys {
            for (j, v) in vals.iter().enumerate() {
                writeln!(f, "{id},{v},{}", 0.3 * j as f64).unwrap();
            }
        }
        let mut f = std::fs::File::create(&areas).unwrap();
        writeln!(f, "area_id,N,Xbar_1").unwrap();
        for id in ["a", "b", "c", "d"] {
            writeln!(f, "{id},9,0.35").unwrap();
        }
    }
    let out = bin()
        .args(["unit-fit"])
        .arg(&units)
        .arg(&areas)
        .args(["--measures", "pr"])
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("sigma2_e="));
    assert_eq!(text.lines().count(), 2 + 4);
    std::fs::remove_file(&units).ok();
    std::fs::remove_file(&areas).ok();
}

fn tempfile_path(tag: &str) -> std::path::PathBuf {
    std::env::temp_dir().join(format!("smallarea_test_{tag}_{}.csv", std::process::id()))
}
