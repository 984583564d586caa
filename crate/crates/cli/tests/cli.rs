use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gridsp::fixtures::{ieee14, ieee14_dc_injections};
use gridsp::netmodel::build_dc;
use gridsp::powerflow::solve_dc;
use serde_json::Value;
use tempfile::TempDir;

fn data(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/data")
        .join(name)
        .display()
        .to_string()
}

fn gridsp(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gridsp"))
        .arg("--out-dir")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn report(out: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap()
}

fn column(path: &Path, name: &str) -> Vec<f64> {
    let mut rd = csv::Reader::from_path(path).unwrap();
    let idx = rd.headers().unwrap().iter().position(|h| h == name).unwrap();
    rd.records().map(|r| r.unwrap()[idx].parse().unwrap()).collect()
}

fn run_ok(out: &Path, args: &[&str]) -> Value {
    let o = gridsp(out, args);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rep = report(out);
    assert_eq!(rep["version"], 1);
    assert_eq!(rep["status"], "ok");
    // stdout carries the same report
    let printed: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(printed["result"], rep["result"]);
    rep
}

#[test]
fn dc_power_flow_writes_angles() {
    let dir = TempDir::new().unwrap();
    let rep = run_ok(
        dir.path(),
        &[
            "pf",
            "dc",
            "--case",
            &data("case14.json"),
            "--injections",
            &data("p14.json"),
            "--ref",
            "1",
        ],
    );
    assert_eq!(rep["inputs"].as_object().unwrap().len(), 2);
    let theta = column(&dir.path().join("theta.csv"), "theta");
    let dc = build_dc(&ieee14());
    let oracle = solve_dc(&dc, &ieee14_dc_injections(), 0).unwrap();
    assert_eq!(theta.len(), 14);
    for (a, b) in theta.iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }
    assert_eq!(column(&dir.path().join("flows.csv"), "flow").len(), 20);
}

fn simulate_dc(out: &Path, seed: &str) -> PathBuf {
    run_ok(
        out,
        &[
            "se",
            "simulate",
            "--case",
            &data("case14.json"),
            "--spec",
            &data("spec14.json"),
            "--plan",
            "dc",
            "--sigma",
            "0.01",
            "--seed",
            seed,
        ],
    );
    out.join("meas.json")
}

#[test]
fn bad_data_lists_the_corrupted_reading() {
    let dir = TempDir::new().unwrap();
    let meas = simulate_dc(&dir.path().join("sim"), "11");
    let mut z: Vec<Value> = serde_json::from_str(&fs::read_to_string(&meas).unwrap()).unwrap();
    let bumped = z[17]["value"].as_f64().unwrap() + 10.0 * z[17]["sigma"].as_f64().unwrap();
    z[17]["value"] = bumped.into();
    let corrupt = dir.path().join("z.json");
    fs::write(&corrupt, serde_json::to_string(&z).unwrap()).unwrap();
    let out = dir.path().join("scan");
    let rep = run_ok(
        &out,
        &[
            "se",
            "baddata",
            "--case",
            &data("case14.json"),
            "--meas",
            corrupt.to_str().unwrap(),
            "--lnrt",
            "3.0",
        ],
    );
    assert_eq!(rep["result"]["removed"], serde_json::json!([17]));
    assert_eq!(rep["result"]["chi2_detected"], true);
    assert_eq!(column(&out.join("theta.csv"), "theta").len(), 14);
}

#[test]
fn distributed_charging_trace_never_rises() {
    let dir = TempDir::new().unwrap();
    let rep = run_ok(
        dir.path(),
        &[
            "pev",
            "distributed",
            "--fleet",
            &data("fleet.json"),
            "--iters",
            "500",
            "--tol",
            "1e-6",
        ],
    );
    let obj = column(&dir.path().join("trace.csv"), "objective");
    assert!(obj.len() > 1);
    assert!(obj.windows(2).all(|w| w[1] <= w[0] + 1e-9 * w[0].abs()), "{obj:?}");
    let central = run_ok(
        &dir.path().join("c"),
        &["pev", "central", "--fleet", &data("fleet.json")],
    );
    let a = rep["result"]["aggregate"].as_array().unwrap();
    let b = central["result"]["aggregate"].as_array().unwrap();
    for (x, y) in a.iter().zip(b) {
        assert!((x.as_f64().unwrap() - y.as_f64().unwrap()).abs() < 1e-4);
    }
}

#[test]
fn attack_passes_the_detector() {
    let dir = TempDir::new().unwrap();
    let meas = simulate_dc(&dir.path().join("sim"), "2");
    let out = dir.path().join("atk");
    let rep = run_ok(
        &out,
        &[
            "se",
            "attack",
            "--case",
            &data("case14.json"),
            "--meas",
            meas.to_str().unwrap(),
            "--seed",
            "9",
        ],
    );
    let r = &rep["result"];
    assert!(r["residual_change"].as_f64().unwrap() < 1e-10);
    assert!(r["shift_error"].as_f64().unwrap() < 1e-8);
    assert_eq!(r["detected"], false);
    let scan = run_ok(
        &dir.path().join("scan"),
        &[
            "se",
            "baddata",
            "--case",
            &data("case14.json"),
            "--meas",
            out.join("attacked.json").to_str().unwrap(),
        ],
    );
    assert_eq!(scan["result"]["removed"], serde_json::json!([]));
    let before = run_ok(
        &dir.path().join("scan0"),
        &[
            "se",
            "baddata",
            "--case",
            &data("case14.json"),
            "--meas",
            meas.to_str().unwrap(),
        ],
    );
    let shift = r["shift"].as_array().unwrap();
    let t0 = before["result"]["theta"].as_array().unwrap();
    let t1 = scan["result"]["theta"].as_array().unwrap();
    for i in 0..14 {
        let d = t1[i].as_f64().unwrap() - t0[i].as_f64().unwrap() - shift[i].as_f64().unwrap();
        assert!(d.abs() < 1e-8);
    }
}

fn strip_timing(mut rep: Value) -> Value {
    rep.as_object_mut().unwrap().remove("wall_time_s");
    rep
}

#[test]
fn seeded_commands_are_reproducible() {
    let runs: [&[&str]; 3] = [
        &[
            "se", "simulate", "--case", "CASE", "--spec", "SPEC", "--sigma", "0.02", "--seed", "42",
        ],
        &[
            "se", "attack", "--case", "CASE", "--meas", "MEAS", "--seed", "42", "--scale", "0.1",
        ],
        &[
            "outage",
            "omp",
            "--case",
            "CASE",
            "--simulate",
            "3,12",
            "--snr-db",
            "30",
            "--seed",
            "42",
            "--k",
            "2",
        ],
    ];
    let dir = TempDir::new().unwrap();
    let meas = simulate_dc(&dir.path().join("sim"), "1");
    for (n, args) in runs.iter().enumerate() {
        let args: Vec<String> = args
            .iter()
            .map(|a| match *a {
                "CASE" => data("case14.json"),
                "SPEC" => data("spec14.json"),
                "MEAS" => meas.display().to_string(),
                other => other.to_string(),
            })
            .collect();
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let (a, b) = (dir.path().join(format!("{n}a")), dir.path().join(format!("{n}b")));
        let ra = strip_timing(run_ok(&a, &args));
        let rb = strip_timing(run_ok(&b, &args));
        assert_eq!(ra["result"], rb["result"]);
        for file in ra["outputs"].as_array().unwrap() {
            let f = file.as_str().unwrap();
            if f != "report.json" {
                assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
            }
        }
    }
    // a different seed moves the draws
    let other = dir.path().join("other");
    run_ok(
        &other,
        &[
            "se",
            "simulate",
            "--case",
            &data("case14.json"),
            "--spec",
            &data("spec14.json"),
            "--seed",
            "43",
        ],
    );
    assert_ne!(
        fs::read(other.join("meas.json")).unwrap(),
        fs::read(dir.path().join("0a/meas.json")).unwrap()
    );
}

#[test]
fn estimation_recovers_the_power_flow() {
    let dir = TempDir::new().unwrap();
    let sim = dir.path().join("sim");
    let truth = run_ok(
        &sim,
        &[
            "se",
            "simulate",
            "--case",
            &data("case14.json"),
            "--spec",
            &data("spec14.json"),
            "--sigma",
            "0",
        ],
    );
    let est = dir.path().join("est");
    run_ok(
        &est,
        &[
            "se",
            "run",
            "--case",
            &data("case14.json"),
            "--meas",
            sim.join("meas.json").to_str().unwrap(),
        ],
    );
    let va = column(&est.join("state.csv"), "va");
    let vm = column(&est.join("state.csv"), "vm");
    for i in 0..14 {
        assert!((va[i] - truth["result"]["va"][i].as_f64().unwrap()).abs() < 1e-8);
        assert!((vm[i] - truth["result"]["vm"][i].as_f64().unwrap()).abs() < 1e-8);
    }
    let obs = run_ok(
        &dir.path().join("obs"),
        &[
            "se",
            "observe",
            "--case",
            &data("case14.json"),
            "--meas",
            sim.join("meas.json").to_str().unwrap(),
        ],
    );
    assert_eq!(obs["result"]["observable"], true);
    assert_eq!(obs["result"]["agree"], true);
}

#[test]
fn ac_power_flow_and_case_summary() {
    let dir = TempDir::new().unwrap();
    let rep = run_ok(dir.path(), &["case", "validate", "--case", &data("case14.json")]);
    assert_eq!(rep["result"]["buses"], 14);
    assert_eq!(rep["result"]["slack"], 1);
    let rep = run_ok(
        &dir.path().join("ac"),
        &[
            "pf",
            "ac",
            "--case",
            &data("case14.json"),
            "--spec",
            &data("spec14.json"),
        ],
    );
    assert!(rep["result"]["mismatch"].as_f64().unwrap() < 1e-8);
    assert_eq!(column(&dir.path().join("ac/voltages.csv"), "vm")[0], 1.06);
}

#[test]
fn outage_methods_agree_on_a_double_outage() {
    let dir = TempDir::new().unwrap();
    let mut found = Vec::new();
    for method in ["omp", "exhaustive"] {
        let rep = run_ok(
            &dir.path().join(method),
            &[
                "outage",
                method,
                "--case",
                &data("case14.json"),
                "--simulate",
                "2,9",
                "--k",
                "2",
            ],
        );
        found.push(rep["result"]["estimate"]["lines"].clone());
    }
    assert_eq!(found[0], serde_json::json!([2, 9]));
    assert_eq!(found[0], found[1]);
}

#[test]
fn waveform_commands() {
    let dir = TempDir::new().unwrap();
    let rep = run_ok(
        dir.path(),
        &[
            "signal",
            "phasor",
            "--record",
            &data("wave.csv"),
            "--f0",
            "60",
            "--start",
            "5",
        ],
    );
    let r = &rep["result"];
    assert!((r["magnitude"].as_f64().unwrap() - 1.5).abs() < 1e-12);
    assert!((r["angle"].as_f64().unwrap() + 0.7).abs() < 1e-12);
    run_ok(
        dir.path(),
        &["signal", "modes", "--record", &data("swing.csv"), "--order", "2"],
    );
    let f = column(&dir.path().join("modes.csv"), "frequency_hz");
    let s = column(&dir.path().join("modes.csv"), "decay_rate");
    assert!((f[0] - 0.5).abs() < 1e-6 && (s[0] - 0.1).abs() < 1e-6);
}

#[test]
fn market_commands() {
    let dir = TempDir::new().unwrap();
    let ed = run_ok(dir.path(), &["ed", "--offers", &data("offers.json"), "--demand", "3"]);
    assert!(ed["result"]["agreement"].as_f64().unwrap() < 1e-6);
    let p: f64 = ed["result"]["p_gen"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .sum();
    assert!((p - 3.0).abs() < 1e-8);

    let opf = run_ok(&dir.path().join("opf"), &["opf", "--case", &data("ring3.json")]);
    assert_eq!(opf["result"]["binding"].as_array().unwrap().len(), 1);
    let lmp = column(&dir.path().join("opf/prices.csv"), "lmp");
    assert!(lmp[0] < lmp[1] && lmp[1] < lmp[2]);

    let uc = run_ok(&dir.path().join("uc"), &["uc", "--instance", &data("uc.json")]);
    assert!((uc["result"]["cost"].as_f64().unwrap() - 12.0).abs() < 1e-6);
    assert!(uc["result"]["dual_bound"].as_f64().unwrap() <= 12.0 + 1e-9);
    assert_eq!(column(&dir.path().join("uc/schedule.csv"), "on"), vec![0.0, 1.0]);

    let dual = run_ok(
        &dir.path().join("dual"),
        &["dr", "--instance", &data("dr.json"), "--mode", "dual"],
    );
    let central = run_ok(
        &dir.path().join("central"),
        &["dr", "--instance", &data("dr.json"), "--mode", "central"],
    );
    for (a, b) in dual["result"]["prices"]
        .as_array()
        .unwrap()
        .iter()
        .zip(central["result"]["prices"].as_array().unwrap())
    {
        assert!((a.as_f64().unwrap() - b.as_f64().unwrap()).abs() < 1e-4);
    }
    assert!(dir.path().join("dual/trace.csv").exists());

    let cut = run_ok(
        &dir.path().join("cut"),
        &["curtail", "--users", &data("users.json"), "--deficit", "2"],
    );
    let cuts: Vec<f64> = cut["result"]["cuts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert!((cuts.iter().sum::<f64>() - 2.0).abs() < 1e-8);
    // unsaturated users share one marginal discomfort
    let price = cut["result"]["price"].as_f64().unwrap();
    assert!((2.0 * cuts[0] - price).abs() < 1e-6 && (4.0 * cuts[1] - price).abs() < 1e-6);
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    assert_eq!(gridsp(dir.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(gridsp(dir.path(), &["pf", "dc"]).status.code(), Some(2));
    assert_eq!(
        gridsp(dir.path(), &["uc", "--instance", "x", "--iters", "many"])
            .status
            .code(),
        Some(2)
    );

    let missing = gridsp(dir.path(), &["case", "validate", "--case", "/no/such/case.json"]);
    assert_eq!(missing.status.code(), Some(1));
    let rep = report(dir.path());
    assert_eq!(rep["status"], "error");
    assert!(rep["error"].as_str().unwrap().contains("/no/such/case.json"));

    let unbalanced = dir.path().join("p.json");
    fs::write(&unbalanced, r#"{"2": 1.0}"#).unwrap();
    let o = gridsp(
        dir.path(),
        &[
            "pf",
            "dc",
            "--case",
            &data("case14.json"),
            "--injections",
            unbalanced.to_str().unwrap(),
        ],
    );
    assert_eq!(o.status.code(), Some(1));

    let heavy = dir.path().join("heavy.json");
    fs::write(
        &heavy,
        r#"[{"bus":1,"type":"slack","v":1.0},{"bus":2,"type":"pq","p":-40,"q":-20},{"bus":3,"type":"pq","p":-40,"q":-20}]"#,
    )
    .unwrap();
    let o = gridsp(
        &dir.path().join("heavy"),
        &[
            "pf",
            "ac",
            "--case",
            &data("ring3.json"),
            "--spec",
            heavy.to_str().unwrap(),
        ],
    );
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(report(&dir.path().join("heavy"))["status"], "not_converged");
}
