use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ylab::config::RunManifest;
use ylab::report::{report, Audit};
use ylab::run::simulate;
use ylab_core::flow::parse_monitor_csv;

fn ylab(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ylab"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("YLAB_OUT")
        .output()
        .expect("spawn ylab")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn dir_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_flat_for_ten_steps() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "flat.ini", "[grid]\nintervals = 64\n[flow]\nmax_steps = 10\n[monitor]\nevery = 2\n");
    let out = ylab(&tmp.path().join("o"), &["simulate", "--config", dir_str(&cfg)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let run = tmp.path().join("o").join("flat");
    let series = parse_monitor_csv(&fs::read_to_string(run.join("monitor.csv")).unwrap()).unwrap();
    // the initial state plus one row per cadence
    assert_eq!(series.records.len(), 1 + 10 / 2);
    assert_eq!(series.records.last().unwrap().step_index, 10);

    let manifest: RunManifest = serde_json::from_str(&fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert!(manifest.created_at.is_some() && manifest.flow_config.is_some());
    for rel in manifest.artifact_paths.values() {
        assert!(run.join(rel).exists(), "{rel} missing");
    }
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("summary.json")).unwrap()).unwrap();
    for key in ["halted", "final_t", "final_sup_R", "mass_series_endpoints"] {
        assert!(summary.get(key).is_some(), "{key}");
    }
}

#[test]
fn existing_runs_need_force() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "r.ini", "[grid]\nintervals = 32\n[flow]\nmax_steps = 2\n");
    let o = tmp.path().join("o");
    assert_eq!(code(&ylab(&o, &["simulate", "--config", dir_str(&cfg)])), 0);
    let again = ylab(&o, &["simulate", "--config", dir_str(&cfg)]);
    assert_eq!(code(&again), 2);
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));
    assert_eq!(code(&ylab(&o, &["simulate", "--config", dir_str(&cfg), "--force"])), 0);
}

#[test]
fn bad_configs_exit_with_status_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.ini", "[flow]\ndt0 = -1\n");
    assert_eq!(code(&ylab(tmp.path(), &["simulate", "--config", dir_str(&cfg)])), 2);
    let cfg = write_config(tmp.path(), "typo.ini", "[grid]\nintervls = 10\n");
    let out = ylab(tmp.path(), &["simulate", "--config", dir_str(&cfg)]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("typo.ini:2"));
    assert!(!tmp.path().join("typo").exists());
}

#[test]
fn schwarzschild_report_passes_fixed_point_and_mass_drift() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "schw.ini",
        "[grid]\nr_in = 0.5\nr_max = 200\nintervals = 1024\n[initial]\nfamily = schwarzschild\nm = 1\n\
         [flow]\nt_end = 5\ndt0 = 0.01\n",
    );
    let o = tmp.path().join("o");
    assert_eq!(code(&ylab(&o, &["simulate", "--config", dir_str(&cfg)])), 0);
    let run = o.join("schw");
    let out = ylab(&o, &["report", dir_str(&run), "--require", "fixed-point,mass-drift", "--svg"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.contains("fixed-point") && table.contains("overall: PASS"));
    for chart in ["sup_R.svg", "lp_R.svg", "mass.svg", "u_range.svg"] {
        let svg = fs::read_to_string(run.join("plots").join(chart)).unwrap();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }
    let aggregate: serde_json::Value = serde_json::from_str(&fs::read_to_string(o.join("report.json")).unwrap()).unwrap();
    assert_eq!(aggregate["pass"], true);
    assert!(run.join("report.json").exists());
}

#[test]
fn sweep_separates_blow_up_from_convergence() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "dich.ini",
        "[grid]\nr_max = 200\nintervals = 512\n[flow]\nt_end = 1e14\ndt_max = 1e13\nmax_u_cap = 1e3\n[monitor]\nevery = 10\n",
    );
    let o = tmp.path().join("o");
    let out = ylab(
        &o,
        &[
            "--jobs",
            "2",
            "sweep",
            "--config",
            dir_str(&cfg),
            "--param",
            "background.name=synthetic:A=-50,rc=2,sigma=1,tau=1|synthetic:A=0.01,rc=2,sigma=1,tau=1",
        ],
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(code(&out), 0, "{stdout}{}", String::from_utf8_lossy(&out.stderr));
    let index = fs::read_to_string(o.join("dich").join("index.jsonl")).unwrap();
    let mut statuses: Vec<(String, String)> = index
        .lines()
        .map(|l| {
            let v: serde_json::Value = serde_json::from_str(l).unwrap();
            (v["run_id"].as_str().unwrap().to_string(), v["status"].as_str().unwrap().to_string())
        })
        .collect();
    statuses.sort();
    assert_eq!(
        statuses,
        vec![("dich-000".into(), "halted".into()), ("dich-001".into(), "completed".into())]
    );
    assert!(stdout.contains("Y<=0; halted") && stdout.contains("Y>0; completed"), "{stdout}");
    for id in ["dich-000", "dich-001"] {
        assert!(o.join("dich").join(id).join("monitor.csv").exists());
    }
}

#[test]
fn sweep_params_are_validated_before_any_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "s.ini", "[grid]\nintervals = 32\n");
    let o = tmp.path().join("o");
    assert_eq!(code(&ylab(&o, &["sweep", "--config", dir_str(&cfg), "--param", "flow.dt0=0.01|-1"])), 2);
    assert_eq!(code(&ylab(&o, &["sweep", "--config", dir_str(&cfg), "--param", "solver.x=1"])), 2);
    assert!(!o.join("s").join("index.jsonl").exists());
}

#[test]
fn elliptic_commands_write_their_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let o = tmp.path().join("o");
    let flat = ylab(&o, &["yamabe-sign", "--background", "flat3"]);
    assert_eq!(code(&flat), 0);
    let sign: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(o.join("default").join("sign.json")).unwrap()).unwrap();
    assert_eq!(sign["verified"], true);
    assert_eq!(sign["sign"], "positive");

    let cfg = write_config(tmp.path(), "well.ini", "[grid]\nr_max = 200\nintervals = 1024\n[background]\nname = synthetic:A=-50,rc=2\n");
    assert_eq!(code(&ylab(&o, &["yamabe-sign", "--config", dir_str(&cfg)])), 0);
    let sign: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(o.join("well").join("sign.json")).unwrap()).unwrap();
    assert_eq!((&sign["sign"], &sign["verified"]), (&serde_json::json!("nonpositive"), &serde_json::json!(true)));
    assert_eq!(code(&ylab(&o, &["scalar-flat", "--config", dir_str(&cfg)])), 3);

    assert_eq!(code(&ylab(&o, &["scalar-flat"])), 0);
    assert!(o.join("default").join("u_inf.csv").exists());

    assert_eq!(code(&ylab(&o, &["prescribe", "--target", "neg-power:c=0.1,tau=1"])), 0);
    assert!(o.join("default").join("phi.csv").exists());
    // R' > R_0 = 0 violates the hypothesis
    let target = tmp.path().join("positive.csv");
    let grid = RunManifest::parse_str("", "t", "t").unwrap().grid.build().unwrap();
    let mut csv = String::from("r,value\n");
    for r in grid.nodes() {
        csv.push_str(&format!("{r:.17e},{:.17e}\n", 0.1 * (-r * r).exp()));
    }
    fs::write(&target, csv).unwrap();
    assert_eq!(code(&ylab(&o, &["prescribe", "--target", dir_str(&target)])), 2);
}

#[test]
fn repeated_runs_are_bit_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let text = "[grid]\nr_max = 32\nintervals = 128\n[initial]\nfamily = gaussian-bump\n[flow]\nt_end = 4\n[monitor]\ncheckpoint_every = 3\n";
    let manifest = RunManifest::parse_str(text, "t", "det").unwrap();
    let a = simulate(&manifest, &tmp.path().join("a"), false).unwrap();
    let b = simulate(&manifest, &tmp.path().join("b"), false).unwrap();
    for name in ["monitor.csv", "final_state.csv", "summary.json"] {
        assert_eq!(fs::read(a.run_dir.join(name)).unwrap(), fs::read(b.run_dir.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn unreadable_series_fail_required_audits() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = RunManifest::parse_str("[grid]\nintervals = 64\n[flow]\nmax_steps = 8\n", "t", "s").unwrap();
    let run = simulate(&manifest, tmp.path(), false).unwrap();
    let agg = tmp.path().join("agg.json");
    assert!(report(&[run.run_dir.clone()], None, false, &agg).unwrap().pass);

    let monitor = run.run_dir.join("monitor.csv");
    let text = fs::read_to_string(&monitor).unwrap();
    fs::write(&monitor, text.replace("lp_R[1.5]", "lp_R[x]")).unwrap();
    let outcome = report(&[run.run_dir.clone()], Some(&[Audit::MinR]), false, &agg).unwrap();
    assert_eq!(outcome.exit_code(), 4);
    assert_eq!(code(&ylab(tmp.path(), &["report", dir_str(&run.run_dir)])), 4);
    assert_eq!(code(&ylab(tmp.path(), &["report", dir_str(&run.run_dir), "--require", "nonsense"])), 2);
}

#[test]
fn nonpositive_backgrounds_halt_with_status_three() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "w.ini",
        "[grid]\nr_max = 200\nintervals = 512\n[background]\nname = synthetic:A=-50,rc=2\n\
         [flow]\nt_end = 1e14\ndt_max = 1e13\nmax_u_cap = 1e3\n[monitor]\nevery = 25\n",
    );
    let o = tmp.path().join("o");
    assert_eq!(code(&ylab(&o, &["simulate", "--config", dir_str(&cfg)])), 3);
    let out = ylab(&o, &["report", dir_str(&o.join("w"))]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    assert!(String::from_utf8_lossy(&out.stdout).contains("blow-up"));
}
