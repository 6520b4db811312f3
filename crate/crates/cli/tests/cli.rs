use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use supnorm_gof::model::RateVector;
use supnorm_gof::rates::{poisson_rate, RateProfile};
use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_supnorm-gof"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn rate_of_a_single_unit_rate() {
    let o = run(&["rate", "--null", r#"{"model": "poisson", "rates": [1.0]}"#]);
    assert!(o.status.success(), "{}", stderr(&o));
    let prof: RateProfile = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(prof.j_star, 1);
    assert!((prof.epsilon_star - 2.0).abs() < 1e-12);
}

#[test]
fn rate_of_three_unit_rates() {
    // 1 + Γ(ln 3e) with Γ(x) = x / (1 + ln x) for x > 1.
    let x = 1.0 + 3f64.ln();
    let expected = 1.0 + x / (1.0 + x.ln());
    let o = run(&["rate", "--null", r#"{"model": "poisson", "rates": [1, 1, 1]}"#]);
    let prof: RateProfile = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(prof.j_star, 3);
    assert!((prof.epsilon_star - expected).abs() < 1e-12);
}

#[test]
fn rate_json_round_trips() {
    let dir = TempDir::new().unwrap();
    let rates = [7.5, 3.0, 3.0, 1.25, 0.4, 0.01];
    let null = write(dir.path(), "null.json", &format!(r#"{{"model": "poisson", "rates": {rates:?}}}"#));
    let out = dir.path().join("rate.json");
    let o = run(&["rate", "--null", &null, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).is_empty());
    let parsed: RateProfile = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    let direct = poisson_rate(&RateVector::new(rates.to_vec()).unwrap()).unwrap();
    assert_eq!(parsed, direct);
}

#[test]
fn multinomial_rate_needs_n() {
    let o = run(&["rate", "--null", r#"{"model": "multinomial", "probs": [0.5, 0.5]}"#]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("null_spec.n"), "{}", stderr(&o));
}

#[test]
fn test_mode_without_data_is_a_config_error() {
    let o = run(&["test", "--null", r#"{"model": "poisson", "rates": [1.0, 1.0]}"#]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("data_path"), "{}", stderr(&o));
}

#[test]
fn bad_eta_names_the_field() {
    let dir = TempDir::new().unwrap();
    let data = write(dir.path(), "x.csv", "1,1\n");
    let o = run(&["test", "--null", r#"{"model": "poisson", "rates": [1, 1]}"#, "--data", &data, "--eta", "1.5"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("eta"));
}

#[test]
fn malformed_data_is_a_data_error() {
    let dir = TempDir::new().unwrap();
    let null = r#"{"model": "poisson", "rates": [1, 1]}"#;
    for text in ["1,2,3\n", "1,2\n3,x\n", "count_a,count_b\n"] {
        let data = write(dir.path(), "x.csv", text);
        let o = run(&["test", "--null", null, "--data", &data]);
        assert_eq!(o.status.code(), Some(2), "{text:?}: {}", stderr(&o));
    }
}

#[test]
fn oversized_enumeration_is_a_numeric_failure() {
    let rates = vec!["20"; 40].join(",");
    let o = run(&["verify", "flattening", "--null", &format!(r#"{{"model": "poisson", "rates": [{rates}]}}"#)]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn test_rows_follow_the_input_labels() {
    let dir = TempDir::new().unwrap();
    let a = write(dir.path(), "a.csv", "count_1,count_2\n9,0\n1,3\n");
    let b = write(dir.path(), "b.csv", "0,9\n3,1\n");
    let oa = run(&["test", "--null", r#"{"model": "poisson", "rates": [1, 3]}"#, "--data", &a]);
    let ob = run(&["test", "--null", r#"{"model": "poisson", "rates": [3, 1]}"#, "--data", &b]);
    assert!(oa.status.success() && ob.status.success());
    assert_eq!(stdout(&oa), stdout(&ob));
    let lines: Vec<serde_json::Value> = stdout(&oa).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0]["statistic"], 8.0);
    assert_eq!(lines[0]["decision"], "reject");
    assert_eq!(lines[1]["decision"], "accept");
    assert!(stderr(&oa).contains("2 rows, 1 rejected"));
}

#[test]
fn multinomial_test_reports_both_parts() {
    let dir = TempDir::new().unwrap();
    let data = write(dir.path(), "x.csv", "50,30,20\n90,5,5\n");
    let o = run(&[
        "test",
        "--null",
        r#"{"model": "multinomial", "probs": [0.5, 0.3, 0.2], "n": 100}"#,
        "--data",
        &data,
        "--format",
        "csv",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("# schema=1"));
    assert_eq!(lines.next(), Some("row,statistic,threshold,decision"));
    let rows: Vec<&str> = lines.collect();
    assert!(rows[0].ends_with(",accept") && rows[1].ends_with(",reject"));
}

#[test]
fn sweep_csv_is_deterministic_and_lossless() {
    let dir = TempDir::new().unwrap();
    let null = write(dir.path(), "null.json", r#"{"model": "poisson", "rates": [2, 2, 2, 2, 2, 2, 2, 2]}"#);
    let mut files = Vec::new();
    for name in ["a.csv", "b.csv"] {
        let out = dir.path().join(name);
        let o = run(&[
            "sweep", "--null", &null, "--trials", "400", "--seed", "11", "--xi-grid", "0.5,2", "--alpha-rule", "3",
            "--out", out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert_eq!(stderr(&o).lines().count(), 1);
        files.push(fs::read(&out).unwrap());
    }
    assert_eq!(files[0], files[1]);

    let text = String::from_utf8(files.remove(0)).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("# schema=1"));
    assert_eq!(lines.next(), Some("xi,epsilon,type1,type2,total,ci,trials,seed,regime"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2);
    for row in &rows {
        assert_eq!(row.len(), 9);
        for field in &row[..6] {
            let v: f64 = field.parse().unwrap();
            assert_eq!(format!("{v:.16e}"), *field);
            let digits = field.split('e').next().unwrap().replace(['.', '-'], "");
            assert_eq!(digits.len(), 17);
        }
        assert_eq!(row[6], "400");
        assert_eq!(row[7], "11");
    }
    let total = |r: &Vec<&str>| r[4].parse::<f64>().unwrap();
    assert!(total(&rows[0]) > total(&rows[1]));

    let other = dir.path().join("c.csv");
    run(&[
        "sweep", "--null", &null, "--trials", "400", "--seed", "12", "--xi-grid", "0.5,2", "--alpha-rule", "3",
        "--out", other.to_str().unwrap(),
    ]);
    assert_ne!(fs::read_to_string(&other).unwrap(), text);
}

#[test]
fn failed_runs_leave_existing_output_alone() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("result.json");
    fs::write(&out, "previous\n").unwrap();
    let data = write(dir.path(), "x.csv", "1,2,3\n");
    let o = run(&[
        "test", "--null", r#"{"model": "poisson", "rates": [1, 1]}"#, "--data", &data, "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(fs::read_to_string(&out).unwrap(), "previous\n");

    let o = run(&["rate", "--null", r#"{"model": "poisson", "rates": [1]}"#, "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(fs::read_to_string(&out).unwrap().starts_with("{\"epsilon_star\":2.0"));
    let names: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names.len(), 2, "stray files: {names:?}");
}

#[test]
fn prior_draws_are_seeded_and_separated() {
    let null = r#"{"model": "poisson", "rates": [1, 4, 1, 1, 2]}"#;
    let a = run(&["prior", "--null", null, "--draws", "50", "--seed", "3"]);
    let b = run(&["prior", "--null", null, "--draws", "50", "--seed", "3"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let base = [1.0, 4.0, 1.0, 1.0, 2.0];
    for line in stdout(&a).lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let idx = v["index"].as_u64().unwrap() as usize;
        let rates: Vec<f64> = serde_json::from_value(v["rates"].clone()).unwrap();
        for (j, (r, b)) in rates.iter().zip(&base).enumerate() {
            if j + 1 == idx {
                assert!(r > b);
            } else {
                assert_eq!(r, b);
            }
        }
    }
}

#[test]
fn multinomial_prior_draws_lie_in_the_simplex() {
    let o = run(&[
        "prior", "--null", r#"{"model": "multinomial", "probs": [0.05, 0.3, 0.1, 0.25, 0.3], "n": 400}"#,
        "--draws", "20",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for line in stdout(&o).lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let q: Vec<f64> = serde_json::from_value(v["probs"].clone()).unwrap();
        assert!(q.iter().all(|&x| x >= 0.0));
        assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn verify_flattening_reports_both_sides() {
    let o = run(&["verify", "flattening", "--null", r#"{"model": "poisson", "rates": [2, 1, 0.5]}"#]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(v["lhs"].as_f64().unwrap() <= v["rhs"].as_f64().unwrap() + 1e-8);
    assert_eq!(v["holds"], true);

    let o = run(&["verify", "flattening", "--null", r#"{"model": "multinomial", "probs": [0.5, 0.5], "n": 10}"#]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn risk_reports_an_estimate() {
    let o = run(&[
        "risk", "--null", r#"{"model": "poisson", "rates": [1, 1, 1, 1, 1]}"#, "--trials", "1000", "--c", "3",
        "--eta", "0.2",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let total = v["total"].as_f64().unwrap();
    assert!((v["type1"].as_f64().unwrap() + v["type2"].as_f64().unwrap() - total).abs() < 1e-12);
    assert_eq!(v["trials"], 1000);

    let o = run(&["risk", "--null", r#"{"model": "poisson", "rates": [1]}"#, "--trials", "5"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("trials"));
}
