use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_phasewalk"))
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("phasewalk-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, body).unwrap();
    p
}

#[test]
fn enumerate_ring_seven() {
    let o = run(&["enumerate", "--ring", "7"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim(), "N=7 |V|=29");
}

#[test]
fn enumerate_lists_states() {
    let o = run(&["enumerate", "--ring", "5", "--list"]);
    let lines: Vec<String> = stdout(&o).lines().map(str::to_owned).collect();
    assert_eq!(lines.len(), 12);
    assert_eq!(lines[1], "00000");
    assert_eq!(lines[11], "10100");
}

#[test]
fn bad_arguments_exit_one() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["enumerate", "--ring", "2"]).status.code(), Some(1));
    assert_eq!(run(&["prep-product", "--ring", "7", "--target", "0000111"]).status.code(), Some(1));
    assert_eq!(run(&["prep-product", "--ring", "7", "--target", "01"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn empty_depth_list_is_rejected() {
    let dir = scratch("empty-depths");
    let cfg = write_config(
        &dir,
        r#"{"graph": {"kind": "ring", "sizes": [5]}, "ansatz": "product", "targets": ["half"], "depths": []}"#,
    );
    let o = run(&["run", "--config", cfg.to_str().unwrap(), "--out", dir.join("out").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("depths"), "{}", stderr(&o));
    assert!(!dir.join("out").exists());
}

#[test]
fn unknown_fields_report_their_location() {
    let dir = scratch("unknown-field");
    let cfg = write_config(
        &dir,
        "{\n  \"graph\": {\"kind\": \"ring\", \"sizes\": [5]},\n  \"ansatz\": \"product\",\n  \"targets\": [\"half\"],\n  \"deepths\": [1]\n}",
    );
    let o = run(&["run", "--config", cfg.to_str().unwrap(), "--out", dir.join("out").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("deepths") && err.contains("line 5"), "{err}");
}

#[test]
fn invalid_channel_is_rejected() {
    let dir = scratch("bad-channel");
    let cfg = write_config(
        &dir,
        r#"{"graph": {"kind": "ring", "sizes": [5]}, "ansatz": "product", "targets": ["half"], "channel": {"p00": 1.2, "p11": 0.9}}"#,
    );
    let o = run(&["run", "--config", cfg.to_str().unwrap(), "--out", dir.join("out").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("channel"));
}

#[derive(Debug, serde::Deserialize)]
struct TableRow {
    n: usize,
    size: usize,
    state: String,
    p: usize,
    tau0: f64,
    tau1: f64,
    j_eff: f64,
    perfect: f64,
}

#[derive(Debug, serde::Deserialize)]
struct OutRow {
    #[serde(rename = "N")]
    n: usize,
    size: usize,
    state: String,
    p: usize,
    tau0: f64,
    tau1: f64,
    #[serde(rename = "J_eff")]
    j_eff: f64,
    #[serde(rename = "P_ctqw")]
    p_ctqw: f64,
}

#[test]
fn product_table_run_matches_golden_rows() {
    let dir = scratch("golden");
    let out = dir.join("out");
    let o = run(&["run", "--config", data("product_table.json").to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("product.csv")).unwrap();
    let golden = std::fs::read_to_string(data("product_golden.csv")).unwrap();
    assert_eq!(csv, golden);

    // and against the published rows
    let ours: Vec<OutRow> = csv::Reader::from_reader(csv.as_bytes()).deserialize().map(Result::unwrap).collect();
    let table: Vec<TableRow> =
        csv::Reader::from_path(data("product_table.csv")).unwrap().deserialize().map(Result::unwrap).collect();
    for t in &table {
        let r = ours
            .iter()
            .find(|r| r.n == t.n && r.state == t.state && r.p == t.p)
            .unwrap_or_else(|| panic!("missing row N={} {} p={}", t.n, t.state, t.p));
        assert_eq!(r.size, t.size);
        assert!((r.tau0 - t.tau0).abs() <= 0.02, "tau0 {:?} vs {:?}", r, t);
        assert!((r.tau1 - t.tau1).abs() <= 0.02, "tau1 {:?} vs {:?}", r, t);
        assert!((r.j_eff - t.j_eff).abs() <= 0.02, "J_eff {:?} vs {:?}", r, t);
        // the published success column scatters like a finite-shot estimate
        assert!((r.p_ctqw - t.perfect).abs() <= 0.025, "P {:?} vs {:?}", r, t);
    }

    for f in ["fig4_half_ctqw.csv", "fig4_mis_ctqw.csv", "fits.json", "manifest.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["schema_version"], 1);
    assert_eq!(m["config_sha256"].as_str().unwrap().len(), 64);
    assert!(m["failures"].as_array().unwrap().is_empty());
    assert_eq!(m["instances"].as_array().unwrap().len(), 27);
}

#[test]
fn runs_are_byte_identical() {
    let dir = scratch("determinism");
    let cfg = write_config(
        &dir,
        r#"{"graph": {"kind": "ring", "sizes": [5, 6]}, "ansatz": "product", "targets": ["half"], "depths": [1],
            "backends": ["ctqw", "shots"], "shots": {"count": 500, "resamples": 50}, "seed": 11}"#,
    );
    let a = dir.join("a");
    let b = dir.join("b");
    let c = dir.join("c");
    for (out, workers) in [(&a, "1"), (&b, "1"), (&c, "2")] {
        let o = run(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--workers", workers]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for f in ["product.csv", "fig4_half_ctqw.csv", "fig4_half_shots.csv", "fits.json"] {
        let x = std::fs::read(a.join(f)).unwrap();
        assert_eq!(x, std::fs::read(b.join(f)).unwrap(), "{f}");
        assert_eq!(x, std::fs::read(c.join(f)).unwrap(), "{f} with two workers");
    }
    let head = std::fs::read_to_string(a.join("product.csv")).unwrap();
    assert!(head.starts_with("N,size,state,p,tau0,tau1,J_eff,P_ctqw,P_naive,P_em,ci_low,ci_high\n"));

    let other = dir.join("d");
    let o = run(&["run", "--config", cfg.to_str().unwrap(), "--out", other.to_str().unwrap(), "--seed", "12"]);
    assert!(o.status.success());
    assert_ne!(std::fs::read(a.join("product.csv")).unwrap(), std::fs::read(other.join("product.csv")).unwrap());
}

#[test]
fn failing_instances_are_isolated() {
    let dir = scratch("partial");
    // 0000011 is not an independent set of the 7-ring; the N=5 instance still runs
    let cfg = write_config(
        &dir,
        r#"{"graph": {"kind": "ring", "sizes": [5, 7]}, "ansatz": "product", "targets": ["00101", "0000011"], "depths": [1]}"#,
    );
    let out = dir.join("out");
    let o = run(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let csv = std::fs::read_to_string(out.join("product.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["failures"].as_array().unwrap().len(), 1);
}

#[test]
fn prep_compile_emulate_chain() {
    let dir = scratch("chain");
    let prep = dir.join("prep.json");
    let prog = dir.join("prog.json");
    let o = run(&["prep-product", "--ring", "5", "--target", "00101", "--p", "1", "--out", prep.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&prep).unwrap()).unwrap();
    assert!((v["solution"]["success"].as_f64().unwrap() - 0.966).abs() < 0.005);

    let o = run(&["compile", "--schedule", prep.to_str().unwrap(), "--out", prog.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&prog).unwrap()).unwrap();
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["kind"], "program");
    let export = &v["export"];
    assert_eq!(export["n"], 5);
    assert_eq!(export["positions_um"].as_array().unwrap().len(), 5);
    for key in ["rabi_amplitude", "rabi_phase", "global_detuning", "local_detuning", "site_weights"] {
        assert!(export["waveforms"][key].is_array(), "{key}");
    }

    let o = run(&["emulate", "--program", prog.to_str().unwrap(), "--target", "00101"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let p = v["target"]["success"].as_f64().unwrap();
    let leak = v["leakage"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&p) && (0.0..=1.0).contains(&leak));
    let total: f64 = v["probabilities"].as_object().unwrap().values().map(|x| x.as_f64().unwrap()).sum();
    assert!((total + leak - 1.0).abs() < 1e-6);
}

#[test]
fn mitigate_synthetic_shots() {
    let dir = scratch("mitigate");
    let prep = dir.join("prep.json");
    let shots = dir.join("shots.txt");
    assert!(run(&["prep-product", "--ring", "7", "--target", "0000101", "--out", prep.to_str().unwrap()]).status.success());
    let o = run(&[
        "sample", "--input", prep.to_str().unwrap(), "--shots", "1000", "--p00", "0.90", "--p11", "0.93", "--seed", "5",
        "--out", shots.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&shots).unwrap();
    assert!(text.starts_with("# n=7 shots=1000 p00=0.9 p11=0.93 seed=5"));
    let o = run(&["mitigate", "--shots", shots.to_str().unwrap(), "--target", "0000101", "--resamples", "200"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let r = &v["result"];
    let (lo, hi, est) = (r["ci"][0].as_f64().unwrap(), r["ci"][1].as_f64().unwrap(), r["target"].as_f64().unwrap());
    assert!(lo <= est && est <= hi);
    // exact probability at these times is 0.7115
    assert!((est - 0.7115).abs() < 0.08, "{est}");
    assert!(v["naive"].as_f64().unwrap() < est);
}

#[test]
fn analyze_fits_an_amplification_table() {
    let dir = scratch("analyze");
    let table = dir.join("amp.csv");
    let mut body = String::from("N,size,p,success,amplification\n");
    for (k, v) in [11usize, 18, 29, 47, 76, 123].iter().enumerate() {
        let a = 1.1 * (*v as f64).powf(0.9);
        body += &format!("{},{v},1,{},{a}\n", k + 5, a / *v as f64);
    }
    std::fs::write(&table, body).unwrap();
    let o = run(&["analyze", "--input", table.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let f = &v["fits"][0]["fit"];
    assert!((f["alpha"].as_f64().unwrap() - 0.9).abs() < 1e-8);
    assert!((f["c"].as_f64().unwrap() - 1.1).abs() < 1e-8);
}

#[test]
fn quench_starts_on_the_orbit() {
    let o = run(&["quench", "--ring", "6", "--orbit", "000101", "--tau-max", "1", "--dtau", "0.25"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "tau,density_coherent,density_incoherent,orbit_coherent,orbit_incoherent");
    let first: Vec<f64> = lines.next().unwrap().split(',').map(|x| x.parse().unwrap()).collect();
    assert_eq!(first, vec![0.0, 2.0 / 6.0_f64, 2.0 / 6.0, 1.0, 1.0].iter().map(|x| (x * 1e8).round() / 1e8).collect::<Vec<_>>());
    assert_eq!(text.lines().count(), 6);
}
