use std::path::Path;
use std::process::{Command, Output};

use rrqss_cli::sweep::{SweepRecord, COLUMNS};

fn rrqss(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rrqss")).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

fn read_csv(path: &Path) -> Vec<SweepRecord> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path).unwrap();
    r.deserialize().map(|x| x.unwrap()).collect()
}

const SMALL: &str = r#"
objectives = ["inside", "outside", "plob"]
[sweep]
start = 100.0
stop = 300.0
step = 100.0
[search]
mu_points = 21
L_values = [64, 512]
nu_th_values = [4, 16]
"#;

#[test]
fn sweep_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.toml", SMALL);
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();
    let mut bytes = Vec::new();
    for _ in 0..2 {
        let o = rrqss(&["sweep", "--config", &cfg, "--out", out, "--no-timestamp"]);
        assert!(o.status.success(), "{}", stderr(&o));
        bytes.push(std::fs::read(Path::new(out).join("sweep.csv")).unwrap());
    }
    assert_eq!(bytes[0], bytes[1]);
    let text = String::from_utf8(bytes.remove(0)).unwrap();
    assert_eq!(text.lines().next().unwrap(), COLUMNS.join(","));
    assert_eq!(text.lines().count(), 1 + 3 * 3);
}

#[test]
fn timestamp_header_is_optional() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.toml", SMALL);
    let o = rrqss(&["sweep", "--config", &cfg, "--distance", "200"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("# generated_unix_time: "));
    assert_eq!(text.lines().nth(1).unwrap(), COLUMNS.join(","));
}

#[test]
fn flags_override_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.toml", &format!("{SMALL}\n[system]\ne_d = 0.04\n"));
    let out = dir.path().to_str().unwrap();
    let o = rrqss(&["sweep", "--config", &cfg, "--ed", "0.06", "--distance", "150", "--out", out]);
    assert!(o.status.success(), "{}", stderr(&o));
    let recs = read_csv(&dir.path().join("sweep.csv"));
    assert_eq!(recs.len(), 3);
    assert!(recs.iter().all(|r| r.e_d == 0.06 && r.distance_km == 150.0));
}

#[test]
fn empty_objectives_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.toml", "objectives = []\n");
    let o = rrqss(&["sweep", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("objective"), "{}", stderr(&o));
}

#[test]
fn malformed_config_rejected() {
    let dir = tempfile::tempdir().unwrap();
    for text in ["[system\n", "[system]\neta = 0.5\n", "[sweep]\nstep = -10.0\n", "objectives = [\"nope\"]\n"] {
        let cfg = write(dir.path(), "bad.toml", text);
        let o = rrqss(&["sweep", "--config", &cfg]);
        assert_eq!(o.status.code(), Some(2), "{text}");
        assert!(stderr(&o).starts_with("error:"), "{}", stderr(&o));
    }
    let o = rrqss(&["sweep", "--config", "/nonexistent/run.toml"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn optimize_single_distance_json() {
    let o = rrqss(&["optimize", "--distance", "600", "--format", "json", "--no-timestamp"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let recs: Vec<SweepRecord> = serde_json::from_value(v["records"].clone()).unwrap();
    assert_eq!(recs.len(), 3);
    let inside = recs.iter().find(|r| r.objective.as_str() == "inside").unwrap();
    assert!(inside.rate > 0.0 && !inside.clamped);
    assert!(inside.rate > inside.plob);

    let o = rrqss(&["optimize"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn finite_flags_reach_the_records() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "fin.toml", "objectives = [\"inside_finite\"]\n");
    let o = rrqss(&["optimize", "--config", &cfg, "--distance", "300", "--N", "100000", "--s", "50", "--no-timestamp"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut r = csv::Reader::from_reader(&o.stdout[..]);
    let recs: Vec<SweepRecord> = r.deserialize().map(|x| x.unwrap()).collect();
    assert_eq!(recs.len(), 1);
    assert_eq!((recs[0].n_sifted, recs[0].s), (Some(100_000), Some(50)));
}

#[test]
fn check_without_trains_runs_equivalence_only() {
    let o = rrqss(&["check", "--trains", "0", "--no-timestamp"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["pass"], true);
    let kinds: Vec<&str> = v["checks"].as_array().unwrap().iter().map(|c| c["kind"].as_str().unwrap()).collect();
    assert!(kinds.contains(&"equivalence"));
    assert!(!kinds.contains(&"simulation"));
}

const ONE_POINT: &str = r#"
[check]
trains = 30000
points = [{ distance = 50.0, mu = 0.5, L = 64 }]
equivalence_L = [4]
equivalence_trials = 5
"#;

#[test]
fn check_passes_then_fails_under_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "check.toml", ONE_POINT);
    let o = rrqss(&["check", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let o = rrqss(&["check", "--config", &cfg, "--corrupt", "misalignment"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("check failed: simulation:D=50,mu=0.5,L=64"), "{}", stderr(&o));
}

#[test]
fn simulate_writes_report_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.jsonl");
    let out = dir.path().to_str().unwrap();
    let o = rrqss(&[
        "simulate", "--distance", "50", "--mu", "0.5", "--L", "32", "--trains", "20000", "--seed", "9", "--out", out,
        "--trace", trace.to_str().unwrap(), "--no-timestamp",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rep: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("simulate.json")).unwrap()).unwrap();
    assert_eq!(rep["pass"], true);
    assert_eq!(rep["config"]["trains"], 20000);
    let lines: Vec<serde_json::Value> = std::fs::read_to_string(&trace)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 20000);
    let effective = lines.iter().filter(|l| !l["announcement"].is_null()).count() as u64;
    assert_eq!(Some(effective), rep["stats"]["effective_count"].as_u64());
}

#[test]
fn verbose_logs_stay_on_stderr() {
    let o = rrqss(&["optimize", "--distance", "100", "-v", "--no-timestamp"]);
    assert!(o.status.success());
    assert!(stderr(&o).contains("done D = 100"), "{}", stderr(&o));
    let quiet = rrqss(&["optimize", "--distance", "100", "--no-timestamp"]);
    assert_eq!(o.stdout, quiet.stdout);
    assert!(quiet.stderr.is_empty());
}

fn assert_matches_golden(preset: &str) {
    let dir = tempfile::tempdir().unwrap();
    let o = rrqss(&["plot-data", preset, "--no-timestamp", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let got = read_csv(&dir.path().join(format!("{preset}.csv")));
    let want = read_csv(&Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("tests/golden/{preset}.v1.csv")));
    assert_eq!(got.len(), want.len());
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs()) + 1e-300;
    for (g, w) in got.iter().zip(&want) {
        assert_eq!((g.distance_km, g.e_d, g.objective, g.n_sifted), (w.distance_km, w.e_d, w.objective, w.n_sifted));
        assert_eq!((g.train_len, g.nu_th, g.clamped), (w.train_len, w.nu_th, w.clamped), "{g:?}");
        assert!(close(g.rate, w.rate) && close(g.plob, w.plob), "{g:?} vs {w:?}");
        assert!(g.rate >= 0.0);
        if g.clamped {
            assert_eq!(g.rate, 0.0);
        }
    }
}

#[test]
fn fig3_matches_golden() {
    assert_matches_golden("fig3");
}

#[test]
fn fig4_matches_golden() {
    assert_matches_golden("fig4");
}

#[test]
fn fig5_matches_golden() {
    assert_matches_golden("fig5");
}

#[test]
fn documented_config_parses() {
    let doc = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../book/src/cli.md")).unwrap();
    let start = doc.find("```toml\n").unwrap() + "```toml\n".len();
    let body = &doc[start..start + doc[start..].find("```").unwrap()];
    let cfg = rrqss_cli::config::RunConfig::from_toml(body).unwrap();
    cfg.validate().unwrap();
    let default = rrqss_cli::config::RunConfig::default();
    assert_eq!((cfg.system, &cfg.search, &cfg.sweep), (default.system, &default.search, &default.sweep));
}
