use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_morris-shore"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn data_rows(csv: &str) -> Vec<Vec<String>> {
    csv.lines()
        .filter(|l| !l.starts_with('#') && !l.is_empty())
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn column_names(csv: &str) -> Vec<String> {
    let header = csv.lines().rfind(|l| l.starts_with('#')).unwrap();
    header.trim_start_matches("# ").split(',').map(str::to_string).collect()
}

#[test]
fn eigencompare_reproduces_the_small_shift_regime() {
    let csv = stdout(&run(&[
        "eigencompare",
        "--model",
        "lambda",
        "--os",
        "1.25",
        "--op",
        "1.37",
        "--delta-over-rms",
        "0:0.02:41",
    ]));
    assert_eq!(
        column_names(&csv),
        ["delta_over_rms", "delta", "index", "exact", "approx", "abs_error"]
    );
    let rows = data_rows(&csv);
    assert_eq!(rows.len(), 41 * 3);
    let rms = f64::hypot(1.25, 1.37);
    let at_one_percent = rows
        .iter()
        .find(|r| r[2] == "2" && (r[0].parse::<f64>().unwrap() - 0.01).abs() < 1e-12)
        .unwrap();
    let err: f64 = at_one_percent[5].parse().unwrap();
    assert!(err / rms < 5e-4, "{err}");
}

#[test]
fn csv_numbers_round_trip() {
    let csv = stdout(&run(&["eigencompare", "--model", "tripod", "--delta-over-rms", "0:0.01:5"]));
    for row in data_rows(&csv) {
        for field in row {
            if field.contains('e') {
                let x: f64 = field.parse().unwrap();
                assert_eq!(format!("{x:.16e}"), field);
            }
        }
    }
}

#[test]
fn identical_runs_write_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str| {
        let path = dir.path().join(name);
        let out = run(&[
            "sweep",
            "--model",
            "double-lambda",
            "--od",
            "0.6",
            "--oc",
            "1.1",
            "--delta-over-rms",
            "0.001:0.01:3",
            "--t-final",
            "5",
            "--steps",
            "20",
            "--output",
            path.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        std::fs::read(path).unwrap()
    };
    let a = write("a.csv");
    let b = write("b.csv");
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    let slope_line = text.lines().find(|l| l.starts_with("# loglog_slope max_population_gap")).unwrap();
    let slope: f64 = slope_line.rsplit(' ').next().unwrap().parse().unwrap();
    assert!(slope >= 1.0, "{slope_line}");
}

#[test]
fn propagate_writes_normalized_populations() {
    let csv = stdout(&run(&[
        "propagate",
        "--model",
        "lambda",
        "--delta",
        "0.02",
        "--t-final",
        "10",
        "--steps",
        "50",
        "--envelope",
        "gaussian:2:5:2",
        "--hamiltonians",
        "full,effective,degenerate",
    ]));
    let cols = column_names(&csv);
    assert_eq!(cols.len(), 1 + 3 * 3);
    assert_eq!(cols[1], "full_p0");
    assert_eq!(cols[9], "degenerate_p2");
    let rows = data_rows(&csv);
    assert_eq!(rows.len(), 51);
    for row in rows {
        let p: Vec<f64> = row.iter().map(|x| x.parse().unwrap()).collect();
        for block in p[1..].chunks(3) {
            assert!((block.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        }
    }
}

#[test]
fn effective_reports_identity_q_without_shifts() {
    let doc: Value = serde_json::from_str(&stdout(&run(&["effective", "--model", "lambda", "--delta", "0"]))).unwrap();
    assert_eq!(doc["q_is_identity"], Value::Bool(true));
    assert_eq!(doc["command"], "effective");
    assert_eq!(doc["h_eff"].as_array().unwrap().len(), 3);
}

#[test]
fn decompose_tripod_matches_the_printed_bright_state() {
    let (p, s, c) = (1.0f64, 0.7f64, 1.6f64);
    let doc: Value = serde_json::from_str(&stdout(&run(&[
        "decompose", "--model", "tripod", "--op", "1.0", "--os", "0.7", "--oc", "1.6", "--delta", "0.01",
    ])))
    .unwrap();
    let rms = (p * p + s * s + c * c).sqrt();
    let bright = &doc["transform"][2];
    for (k, x) in [p, s, c, 0.0].iter().enumerate() {
        let re = bright[k][0].as_f64().unwrap();
        assert!((re.abs() - x / rms).abs() < 1e-14);
        assert_eq!(bright[k][1].as_f64().unwrap(), 0.0);
    }
    assert_eq!(doc["dark_states"].as_array().unwrap().len(), 2);
    assert_eq!(doc["pairing"], serde_json::json!([2, 3, 0, 1]));
    assert!(doc["flags"][0].as_str().unwrap().starts_with("dark state 2"));
}

#[test]
fn config_file_with_inline_system_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(
        &cfg,
        r#"{
  "system": {
    "coupling": [[1.0, [0.0, 0.4]], [0.3, 0.9], [0.5, 0.0]],
    "shifts": [{"name": "d", "value": 0.01, "weights": [1, -1, 0, 0, 2]}]
  },
  "t_final": 4,
  "steps": 8
}"#,
    )
    .unwrap();
    let csv = stdout(&run(&["propagate", "--config", cfg.to_str().unwrap(), "--steps", "4"]));
    assert_eq!(data_rows(&csv).len(), 5);
    assert!(csv.contains("#   \"steps\": 4"));
}

fn exit_code(args: &[&str]) -> i32 {
    run(args).status.code().unwrap()
}

#[test]
fn exit_codes() {
    assert_eq!(exit_code(&["decompose", "--model", "lambda"]), 0);
    assert_eq!(exit_code(&["decompose", "--model", "pentagon"]), 2);
    assert_eq!(exit_code(&["decompose", "--model", "lambda", "--oc", "1"]), 2);
    assert_eq!(exit_code(&["decompose", "--model", "lambda", "--format", "csv"]), 2);
    assert_eq!(exit_code(&["eigencompare", "--model", "lambda", "--delta-over-rms", "0:-1:3"]), 2);
    assert_eq!(exit_code(&["propagate", "--model", "lambda", "--initial", "7"]), 2);
    assert_eq!(exit_code(&["propagate", "--model", "lambda", "--envelope", "sin2:1:0:0"]), 2);
    assert_eq!(exit_code(&["decompose", "--config", "/nonexistent/run.json"]), 2);
    // shifts far beyond the linear regime
    assert_eq!(exit_code(&["eigencompare", "--model", "lambda", "--delta-over-rms", "2:2:1"]), 3);
}

#[test]
fn config_errors_name_the_field_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, "{\n  \"model\": {\"kind\": \"lambda\"},\n  \"t_fnial\": 3\n}\n").unwrap();
    let out = run(&["propagate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("t_fnial") && err.contains("line 3"), "{err}");
}
