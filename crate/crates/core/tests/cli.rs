//! End-to-end checks of the `sim` binary and of properties asserted on the
//! tables it produces.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use cavity_correlations::scenario::{run, Scenario, ScenarioConfig};

fn sim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sim"))
        .args(args)
        .output()
        .expect("sim runs")
}

fn read(path: &Path) -> String {
    fs::read_to_string(path).expect("output written")
}

/// Header, rows and metadata of a written table.
fn parse_csv(text: &str) -> (Vec<String>, Vec<Vec<f64>>, Vec<(String, String)>) {
    let mut meta = Vec::new();
    let mut lines = text.lines().filter(|l| {
        if let Some(m) = l.strip_prefix("# ") {
            if let Some((k, v)) = m.split_once(" = ") {
                meta.push((k.to_string(), v.to_string()));
            }
            false
        } else {
            true
        }
    });
    let header: Vec<String> = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines
        .map(|l| l.split(',').map(|c| c.parse::<f64>().unwrap()).collect())
        .collect();
    (header, rows, meta)
}

#[test]
fn output_is_byte_identical_across_runs_and_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let common = [
        "fig3-thermal",
        "--set",
        "sweep_values=0,1,5",
        "--no-timestamp",
    ];
    let run_with = |out: &Path, workers: &str| {
        let mut args = common.to_vec();
        args.extend(["--out", out.to_str().unwrap(), "--workers", workers]);
        let o = sim(&args);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    };
    run_with(&a, "1");
    run_with(&b, "3");
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert!(!read(&a).contains("timestamp_unix"));

    let c = dir.path().join("c.csv");
    let o = sim(&[
        "fig3-thermal",
        "--set",
        "sweep_values=0",
        "--out",
        c.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert!(read(&c).contains("# timestamp_unix = "));
}

#[test]
fn config_file_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("run.conf");
    fs::write(
        &conf,
        "# single atom in a lab-frame cavity\nn_atoms = 1\ng = 0.001\nepsilon = 0.5\nframe = lab-rotating\nn_max = 12\n\
         mode = steady\ninitial_atoms = all-g\nobservables = nbar, g2\n",
    )
    .unwrap();
    let out = dir.path().join("out.csv");
    // `--key value` and `--set key=value` both override the file; the later one wins.
    let o = sim(&[
        "custom",
        "--config",
        conf.to_str().unwrap(),
        "--epsilon",
        "2",
        "--set",
        "epsilon=1",
        "--out",
        out.to_str().unwrap(),
        "--no-timestamp",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows, meta) = parse_csv(&read(&out));
    assert_eq!(header, ["nbar", "g2"]);
    let meta: BTreeMap<_, _> = meta.into_iter().collect();
    assert_eq!(meta["config.epsilon"], "1");
    assert_eq!(meta["config.frame"], "lab-rotating");
    assert_eq!(meta["scenario"], "custom");
    // Coherent state with |α|² = (ε/κ)² = 1.
    assert!((rows[0][0] - 1.0).abs() < 1e-3);
    assert!((rows[0][1] - 1.0).abs() < 1e-3);
}

#[test]
fn partial_failure_exits_nonzero_and_keeps_the_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("partial.csv");
    let o = sim(&[
        "fig3-thermal",
        "--set",
        "sweep_values=0,5",
        "--set",
        "probes=qd,eof,nbar",
        "--set",
        "truncation_limit=4",
        "--set",
        "initial_atoms=all-g",
        "--out",
        out.to_str().unwrap(),
        "--no-timestamp",
    ]);
    assert_eq!(o.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("1 point(s) failed"), "{stderr}");
    assert!(stderr.contains("n_th=5"), "{stderr}");
    let text = read(&out);
    assert!(text.contains("# failure = "));
    let (_, rows, _) = parse_csv(&text);
    assert_eq!(rows.len(), 2);
    assert!(rows[0][5].is_finite());
    assert!(rows[1][5].is_nan());
}

#[test]
fn invalid_input_exits_with_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.csv");
    let o = sim(&[
        "custom",
        "--set",
        "no_such_key=1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown key"));
    let o = sim(&[
        "fig3-thermal",
        "--set",
        "epsilon=1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let o = sim(&[
        "custom",
        "--config",
        "/nonexistent/run.conf",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn window_report_through_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("w.csv");
    let o = sim(&[
        "window-report",
        "--g",
        "0.01",
        "--atom_counts",
        "1,4",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let (header, rows, _) = parse_csv(&read(&out));
    let hi = header.iter().position(|h| h == "window_hi").unwrap();
    assert!((rows[0][hi] - 1e4).abs() < 1e-6);
    assert!((rows[1][hi] - 2.5e3).abs() < 1e-6);
}

fn resolve(scenario: Scenario, items: &[(&str, &str)]) -> ScenarioConfig {
    let pairs: Vec<(String, String)> = items
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    ScenarioConfig::resolve(scenario, &pairs).unwrap()
}

/// Over the last decade of the drive sweep, discord moves monotonically
/// towards its strong-drive value wherever the whole decade has ε ≥ 10 g.
/// Entanglement is absent there while discord stays finite.
#[test]
fn strong_drive_endpoint_of_the_sweep() {
    let cfg = resolve(
        Scenario::Fig2Sweep,
        &[
            ("g_values", "0.01,0.1"),
            ("sweep_range", "1:10"),
            ("initial_atoms", "e-g,all-g"),
        ],
    );
    let table = run(&cfg).unwrap();
    assert!(table.failures().is_empty());
    let col = |name: &str| table.column(name).unwrap();
    let (g, init, eps, qd, eof) = (
        col("g"),
        col("initial"),
        col("epsilon"),
        col("qd"),
        col("eof"),
    );
    for gv in [0.01, 0.1] {
        for iv in [0.0, 1.0] {
            let mut curve: Vec<(f64, f64, f64)> = (0..g.len())
                .filter(|&k| g[k] == gv && init[k] == iv)
                .map(|k| (eps[k], qd[k], eof[k]))
                .collect();
            curve.sort_by(|a, b| a.0.total_cmp(&b.0));
            assert_eq!(curve.len(), 13);
            let end = curve.last().unwrap().1;
            let dist: Vec<f64> = curve.iter().map(|c| (c.1 - end).abs()).collect();
            for w in dist.windows(2) {
                assert!(w[1] <= w[0] + 1e-9, "g={gv} initial={iv}: {dist:?}");
            }
            for c in &curve {
                assert!(c.2 < 1e-3 && c.1 > 0.1, "g={gv} initial={iv} eps={}", c.0);
            }
        }
    }
}
