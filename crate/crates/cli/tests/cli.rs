use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use rdvdl_core::data::load_csv;
use rdvdl_core::monitor::{fit_limit, training_statistics, MonitorModel};
use sha2::{Digest, Sha256};
use tempfile::TempDir;

const TRAIN_ARGS: [&str; 4] = ["--atoms", "12", "--max-iter", "40"];

fn rdvdl<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    Command::new(env!("CARGO_BIN_EXE_rdvdl"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "status {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Shared data and model: 500 normal training samples (seed 1), 400-sample
/// test files for faults 1, 5 and 9 (seed 3), and a small trained model.
struct Fixture {
    _dir: TempDir,
    train_csv: PathBuf,
    test_dir: PathBuf,
    model_dir: PathBuf,
}

impl Fixture {
    fn model(&self) -> PathBuf {
        self.model_dir.join("model.json")
    }

    fn fault(&self, id: u32) -> PathBuf {
        self.test_dir.join(format!("fault_{id}.csv"))
    }
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        let train_dir = dir.path().join("train");
        let test_dir = dir.path().join("test");
        let model_dir = dir.path().join("model");
        ok(rdvdl([
            "simulate",
            "--output-dir",
            p(&train_dir),
            "--seed",
            "1",
            "-n",
            "500",
            "--normal-only",
        ]));
        ok(rdvdl([
            "simulate",
            "--output-dir",
            p(&test_dir),
            "--seed",
            "3",
            "-n",
            "400",
        ]));
        let train_csv = train_dir.join("normal.csv");
        let mut args = vec!["train", "--input", p(&train_csv), "--output-dir", p(&model_dir)];
        args.extend(TRAIN_ARGS);
        ok(rdvdl(args));
        Fixture {
            _dir: dir,
            train_csv,
            test_dir,
            model_dir,
        }
    })
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(str::to_string).collect())
        .collect();
    (header, rows)
}

fn column(header: &[String], name: &str) -> usize {
    header
        .iter()
        .position(|h| h == name)
        .unwrap_or_else(|| panic!("no column {name}"))
}

fn report_json(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("training_report.json")).unwrap()).unwrap()
}

#[test]
fn help_documents_flags_and_defaults() {
    let expect: [(&str, &[&str]); 6] = [
        (
            "simulate",
            &[
                "--output-dir",
                "--seed",
                "--samples",
                "--fault-id",
                "--onset",
                "--propagate",
                "--normal-only",
                "--scenario",
                "[default: 1000]",
                "[default: 1,5,9]",
                "[default: 201]",
            ],
        ),
        (
            "train",
            &[
                "--input",
                "--seed",
                "--alpha",
                "--lags",
                "--rank",
                "--lambda",
                "--atoms",
                "--tmax",
                "--tol",
                "--max-iter",
                "--restarts",
                "--a0",
                "--b0",
                "--c0",
                "--d0",
                "--e0",
                "--f0",
                "--static-weight",
                "--model",
                "[default: 0.95]",
                "[default: 2]",
                "[default: 300]",
                "[default: 0.000001]",
            ],
        ),
        (
            "detect",
            &["--input", "--model", "--output-dir", "--debounce", "--fail-threshold"],
        ),
        (
            "diagnose",
            &["--input", "--model", "--onset", "--window", "[default: 201]"],
        ),
        (
            "baseline",
            &[
                "--input",
                "--train",
                "--model",
                "--onset",
                "--settle",
                "--variance-fraction",
                "--components",
            ],
        ),
        ("report", &["--input", "--output-dir"]),
    ];
    for (cmd, needles) in expect {
        let help = ok(rdvdl([cmd, "--help"]));
        for n in needles {
            assert!(help.contains(n), "{cmd} --help lacks {n}:\n{help}");
        }
    }
    let top = ok(rdvdl(["--help"]));
    for cmd in ["simulate", "train", "detect", "diagnose", "baseline", "report"] {
        assert!(top.contains(cmd));
    }
}

#[test]
fn simulate_is_deterministic_and_shares_the_prefix() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for d in [&a, &b] {
        ok(rdvdl([
            "simulate",
            "--output-dir",
            p(d),
            "--seed",
            "7",
            "-n",
            "250",
            "--fault-id",
            "1,9",
        ]));
    }
    for name in ["normal.csv", "fault_1.csv", "fault_9.csv"] {
        let x = fs::read(a.join(name)).unwrap();
        assert_eq!(x, fs::read(b.join(name)).unwrap(), "{name} differs between runs");
    }
    let (header, normal) = read_csv(&a.join("normal.csv"));
    assert_eq!(header.len(), 32);
    assert_eq!(normal.len(), 250);
    let (_, fault) = read_csv(&a.join("fault_1.csv"));
    assert_eq!(fault.len(), 250);
    assert_eq!(normal[..200], fault[..200]);
    assert_ne!(normal[200..], fault[200..]);
}

#[test]
fn conflicting_or_missing_inputs_exit_2() {
    let out = rdvdl(["train", "--input", "x.csv", "--rank", "2", "--lambda", "0.1"]);
    assert_eq!(out.status.code(), Some(2));
    let dir = TempDir::new().unwrap();
    let out = rdvdl([
        "train",
        "--input",
        "/nonexistent/data.csv",
        "--output-dir",
        p(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/data.csv"));
    let out = rdvdl(["simulate", "--output-dir", p(dir.path()), "--fault-id", "11"]);
    assert_eq!(out.status.code(), Some(2));
    let out = rdvdl([
        "train",
        "--input",
        "x.csv",
        "--alpha",
        "1.0",
        "--output-dir",
        p(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn degenerate_training_data_exits_3() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("flat.csv");
    let mut text = String::from("a,b,c,d\n");
    for _ in 0..100 {
        text.push_str("1,2,3,4\n");
    }
    fs::write(&csv, text).unwrap();
    let out = rdvdl([
        "train",
        "--input",
        p(&csv),
        "--output-dir",
        p(dir.path()),
        "--max-iter",
        "5",
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn retraining_reproduces_the_bundle() {
    let f = fixture();
    let dir = TempDir::new().unwrap();
    let mut args = vec!["train", "--input", p(&f.train_csv), "--output-dir", p(dir.path())];
    args.extend(TRAIN_ARGS);
    ok(rdvdl(args));
    let first = fs::read(f.model()).unwrap();
    let second = fs::read(dir.path().join("model.json")).unwrap();
    assert_eq!(first, second);
    let rep = report_json(dir.path());
    assert_eq!(rep["bundle_sha256"], format!("{:x}", Sha256::digest(&second)));
    assert_eq!(report_json(&f.model_dir)["bundle_sha256"], rep["bundle_sha256"]);
}

#[test]
fn training_report_matches_the_model() {
    let f = fixture();
    let rep = report_json(&f.model_dir);
    assert_eq!(rep["elbo_monotone"], true);
    let trace: Vec<f64> = serde_json::from_value(rep["elbo_trace"].clone()).unwrap();
    assert!(trace.windows(2).all(|w| w[1] >= w[0] - 1e-8 * w[0].abs()));
    assert_eq!(rep["atom_budget"], 12);
    assert_eq!(rep["samples"], 500);

    let model = MonitorModel::load(f.model()).unwrap();
    let data = load_csv(&f.train_csv, true).unwrap();
    let (t2d, t2s) = training_statistics(&model, data.values()).unwrap();
    let cl_d = fit_limit(&t2d, 0.95).unwrap().cl;
    let cl_s = fit_limit(&t2s, 0.95).unwrap().cl;
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * b.abs().max(1.0);
    assert!(close(rep["cl_d"].as_f64().unwrap(), cl_d));
    assert!(close(rep["cl_s"].as_f64().unwrap(), cl_s));
    for key in ["training_alarm_fraction_d", "training_alarm_fraction_s"] {
        let frac = rep[key].as_f64().unwrap();
        assert!((0.02..=0.08).contains(&frac), "{key} = {frac}");
    }
}

#[test]
fn detection_table_agrees_with_its_limits() {
    let f = fixture();
    let dir = TempDir::new().unwrap();
    ok(rdvdl([
        "detect",
        "--input",
        p(&f.fault(1)),
        "--model",
        p(&f.model()),
        "--output-dir",
        p(dir.path()),
    ]));
    let (header, rows) = read_csv(&dir.path().join("detection.csv"));
    assert_eq!(rows.len(), 400);
    for (stat, cl, alarm) in [("t2d", "cl_d", "alarm_d"), ("t2s", "cl_s", "alarm_s")] {
        let (s, c, a) = (column(&header, stat), column(&header, cl), column(&header, alarm));
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row[0], (i + 1).to_string());
            let expected = match row[s].as_str() {
                "" => false,
                v => v.parse::<f64>().unwrap() > row[c].parse::<f64>().unwrap(),
            };
            assert_eq!(row[a] == "1", expected, "row {} {stat}", i + 1);
        }
    }
    assert!(rows[..2].iter().all(|r| r[column(&header, "t2d")].is_empty()));
    let svg = fs::read_to_string(dir.path().join("detection.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
    assert_eq!(svg.matches("class=\"panel\"").count(), 2);
    assert!(svg.contains("class=\"limit\""));
}

#[test]
fn fail_threshold_exits_4() {
    let f = fixture();
    let dir = TempDir::new().unwrap();
    let (input, model) = (f.fault(5), f.model());
    let base = [
        "detect",
        "--input",
        p(&input),
        "--model",
        p(&model),
        "--output-dir",
        p(dir.path()),
    ];
    let out = rdvdl(base.iter().chain(&["--fail-threshold", "0"]));
    assert_eq!(out.status.code(), Some(4));
    assert!(dir.path().join("detection.csv").exists());
    ok(rdvdl(base.iter().chain(&["--fail-threshold", "1"])));
    let out = rdvdl(base.iter().chain(&["--fail-threshold", "1.5"]));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn debounce_only_removes_alarms() {
    let f = fixture();
    let raw = TempDir::new().unwrap();
    let deb = TempDir::new().unwrap();
    let (input, model) = (f.fault(9), f.model());
    let base = ["detect", "--input", p(&input), "--model", p(&model)];
    ok(rdvdl(base.iter().chain(&["--output-dir", p(raw.path())])));
    ok(rdvdl(base.iter().chain(&["--output-dir", p(deb.path()), "--debounce"])));
    let (header, a) = read_csv(&raw.path().join("detection.csv"));
    let (_, b) = read_csv(&deb.path().join("detection.csv"));
    let cols = [column(&header, "alarm_d"), column(&header, "alarm_s")];
    let count = |rows: &[Vec<String>]| {
        rows.iter()
            .flat_map(|r| cols.map(|c| &r[c]))
            .filter(|v| *v == "1")
            .count()
    };
    assert!(count(&b) <= count(&a));
    for (x, y) in a.iter().zip(&b) {
        for c in cols {
            assert!(!(y[c] == "1" && x[c] == "0"));
        }
    }
}

#[test]
fn diagnose_ranks_the_seeded_variables() {
    let f = fixture();
    let dir = TempDir::new().unwrap();
    ok(rdvdl([
        "diagnose",
        "--input",
        p(&f.fault(1)),
        "--model",
        p(&f.model()),
        "--output-dir",
        p(dir.path()),
    ]));
    let (header, rows) = read_csv(&dir.path().join("rbc.csv"));
    assert_eq!(rows.len(), 32);
    let (name, norm, rank) = (
        column(&header, "name"),
        column(&header, "normalized"),
        column(&header, "rank"),
    );
    let values: Vec<f64> = rows.iter().map(|r| r[norm].parse().unwrap()).collect();
    assert!((values.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    let argmax = (0..32).max_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap();
    assert_eq!(rows[argmax][rank], "1");
    let top3: Vec<&str> = rows
        .iter()
        .filter(|r| r[rank].parse::<usize>().unwrap() <= 3)
        .map(|r| r[name].as_str())
        .collect();
    for seeded in ["PV6", "PV16", "PV17"] {
        assert!(top3.contains(&seeded), "top three {top3:?}");
    }
    let svg = fs::read_to_string(dir.path().join("rbc.svg")).unwrap();
    assert_eq!(svg.matches("class=\"bar\"").count(), 32);
}

#[test]
fn baseline_summary_and_report() {
    let f = fixture();
    let dir = TempDir::new().unwrap();
    ok(rdvdl([
        "baseline",
        "--input",
        p(&f.fault(1)),
        "--train",
        p(&f.train_csv),
        "--model",
        p(&f.model()),
        "--output-dir",
        p(dir.path()),
    ]));
    let (header, rows) = read_csv(&dir.path().join("summary.csv"));
    let methods: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(methods, ["RDVDL", "PCA", "DPCA", "DiPCA", "DiCCA"]);
    let delay = column(&header, "detection_delay");
    let delays: Vec<Option<usize>> = rows.iter().map(|r| r[delay].parse().ok()).collect();
    let ours = delays[0].expect("RDVDL detects fault 1");
    let best = delays[1..].iter().flatten().min().copied().unwrap_or(usize::MAX);
    assert!(ours <= best.saturating_add(20), "delays {delays:?}");
    for m in ["rdvdl", "pca", "dpca", "dipca", "dicca"] {
        assert!(dir.path().join(format!("detection_{m}.svg")).exists());
    }

    for m in ["rdvdl", "pca"] {
        fs::remove_file(dir.path().join(format!("detection_{m}.svg"))).unwrap();
    }
    let out = dir.path().join("report");
    ok(rdvdl(["report", "--input", p(dir.path()), "--output-dir", p(&out)]));
    for m in ["rdvdl", "pca", "dpca", "dipca", "dicca"] {
        assert!(out.join(format!("detection_{m}.svg")).exists());
    }
    let md = fs::read_to_string(out.join("report.md")).unwrap();
    assert!(md.contains("| RDVDL |"));
    assert!(md.contains("detection_dicca.svg"));

    let empty = TempDir::new().unwrap();
    assert_eq!(rdvdl(["report", "--input", p(empty.path())]).status.code(), Some(2));
}

#[test]
fn scenario_file_drives_simulation() {
    let dir = TempDir::new().unwrap();
    let scenario = dir.path().join("s.toml");
    fs::write(
        &scenario,
        "samples = 300\nseed = 5\n\n[[faults]]\nid = 2\nonset = 101\n\n\
         [[faults.effects]]\nvariable = \"PV3\"\nkind = \"step\"\nmagnitude = 4.0\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    ok(rdvdl(["simulate", "--scenario", p(&scenario), "--output-dir", p(&out)]));
    let (header, normal) = read_csv(&out.join("normal.csv"));
    let (_, fault) = read_csv(&out.join("fault_2.csv"));
    assert_eq!(normal.len(), 300);
    assert_eq!(normal[..100], fault[..100]);
    let pv3 = column(&header, "PV3");
    for (n, f) in normal.iter().zip(&fault).skip(100) {
        for j in 0..header.len() {
            if j != pv3 {
                assert_eq!(n[j], f[j]);
            }
        }
    }
}

#[test]
fn bundled_scenarios_simulate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let mut count = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_none_or(|e| e != "toml") {
            continue;
        }
        let out = TempDir::new().unwrap();
        ok(rdvdl(["simulate", "--scenario", p(&path), "--output-dir", p(out.path())]));
        let manifest: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out.path().join("scenario.json")).unwrap()).unwrap();
        for fault in manifest["faults"].as_array().unwrap() {
            assert!(out.path().join(format!("fault_{}.csv", fault["fault_id"])).exists());
        }
        count += 1;
    }
    assert!(count >= 3);
}
