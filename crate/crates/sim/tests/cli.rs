use std::path::Path;
use std::process::{Command, Output};

use dersec_core::engine::{run_scenario, Scenario, Trace};
use dersec_core::scenarios;
use dersec_sim::io::{self, read_summary, read_trace_csv, trace_header, MCA_HEADER, PACKET_HEADER};

fn dersec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dersec")).args(args).output().expect("spawn dersec")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn first_line(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap().lines().next().unwrap_or_default().to_string()
}

#[test]
fn list_scenarios_prints_every_builtin() {
    let o = dersec(&["list-scenarios"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for name in scenarios::names() {
        assert!(text.contains(&name), "{name}");
    }
}

#[test]
fn run_writes_trace_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = dersec(&["run", "builtin:la-69", "--seed", "7", "--out", out, "--packets", "--mca-trace"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = read_summary(&dir.path().join("summary.json")).unwrap();
    assert_eq!(s.schema_version, io::SCHEMA_VERSION);
    assert_eq!(s.seed, Some(7));
    assert!(s.mca_enabled && s.trigger_count > 0);
    let table = read_trace_csv(&dir.path().join("trace.csv")).unwrap();
    assert_eq!(table.header, trace_header(9));
    assert_eq!(table.rows.len(), 15_000);
    assert_eq!(first_line(&dir.path().join("packets.csv")), PACKET_HEADER.join(","));
    assert_eq!(first_line(&dir.path().join("mca.csv")), MCA_HEADER.join(","));
}

#[test]
fn trace_csv_round_trips_bit_exactly() {
    let Some(Scenario::Plant(mut c)) = scenarios::builtin("tsa-69") else { panic!() };
    c.t_end = 5.2;
    let tr = run_scenario(&c).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.csv");
    io::write_trace_csv(&tr, &path).unwrap();
    let table = read_trace_csv(&path).unwrap();
    assert_eq!(table.rows.len(), tr.rows.len());
    for (row, r) in table.rows.iter().zip(&tr.rows) {
        assert_eq!(row[0] as u64, r.step);
        assert_eq!(row[1].to_bits(), r.t.to_bits());
        for (j, a) in r.agents.iter().enumerate() {
            let base = 2 + j * io::AGENT_COLUMNS.len();
            let expect = [a.omega, a.p_filt, a.q_filt, a.mp_p, a.nq_q, a.v_d, a.zeta_p, a.zeta_q, a.zeta_pf, a.zeta_qf, a.d_omega, a.d_v];
            for (k, v) in expect.iter().enumerate() {
                assert_eq!(row[base + k].to_bits(), v.to_bits());
            }
        }
    }
}

#[test]
fn empty_trace_gives_header_only_csv() {
    let tr = Trace {
        n_agents: 2,
        dt: 1e-3,
        omega_nom: 1.0,
        mca_enabled: false,
        rows: vec![],
        packets: vec![],
        attack_stats: Default::default(),
        trigger_counts: vec![0; 2],
        clock_skew: 0,
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.csv");
    io::write_trace_csv(&tr, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert_eq!(read_trace_csv(&path).unwrap().rows.len(), 0);
}

#[test]
fn converged_summary_json_says_so() {
    let dir = tempfile::tempdir().unwrap();
    let o = dersec(&["run", "builtin:k5-nominal-47", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(dir.path().join("summary.json")).unwrap();
    assert!(text.contains("\"converged\": true"));
    let s = read_summary(&dir.path().join("summary.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["conv_time"].as_f64().unwrap().to_bits(), s.conv_time.unwrap().to_bits());
}

#[test]
fn no_mca_overrides_the_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let o = dersec(&["run", "builtin:la-69", "--no-mca", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success());
    let s = read_summary(&dir.path().join("summary.json")).unwrap();
    assert!(!s.mca_enabled);
    assert_eq!(s.trigger_count, 0);
}

#[test]
fn sweep_delay_on_k5_splits_at_the_bound() {
    let dir = tempfile::tempdir().unwrap();
    let o = dersec(&["sweep-delay", "builtin:abstract-k5", "--taus", "0.28,0.47", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][1], "true");
    assert_eq!(rows[1][1], "false");
    assert!(stdout(&o).contains("true"));
}

#[test]
fn compare_prints_both_reports() {
    let o = dersec(&["compare", "builtin:fdia-unbalanced-47"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let without = text.lines().find(|l| l.starts_with("without mca")).unwrap();
    assert!(text.lines().any(|l| l.starts_with("with mca")));
    assert!(without.contains("converged=false"));
}

#[test]
fn scenario_file_with_base() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("s.toml");
    std::fs::write(&file, "base = \"builtin:k5-nominal-47\"\nname = \"short\"\nt_end = 6.0\n[mca]\nenabled = true\n").unwrap();
    let out = dir.path().join("out");
    let o = dersec(&["run", file.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = read_summary(&out.join("summary.json")).unwrap();
    assert_eq!(s.scenario, "short");
    assert!(s.mca_enabled);
    assert_eq!(read_trace_csv(&out.join("trace.csv")).unwrap().rows.len(), 6000);
}

#[test]
fn validation_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("bad.toml");
    std::fs::write(&file, "base = \"builtin:la-69\"\ndt = -1.0\n").unwrap();
    let o = dersec(&["run", file.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("dt"));
    assert_eq!(dersec(&["run", "builtin:nope"]).status.code(), Some(1));
    assert_eq!(dersec(&["run", "/no/such/file.toml"]).status.code(), Some(1));
    assert_eq!(dersec(&["sweep-delay", "builtin:abstract-k5", "--taus", "-1"]).status.code(), Some(1));
}

#[test]
fn divergence_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("wild.toml");
    std::fs::write(&file, "base = \"builtin:k5-nominal-47\"\n[sc]\nkp_omega = 1e3\nki_omega = 1e9\nkp_v = 1e3\nki_v = 1e9\n").unwrap();
    let out = dir.path().join("out");
    let o = dersec(&["run", file.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let s = read_summary(&out.join("summary.json")).unwrap();
    assert!(s.diverged.is_some() && !s.converged);
}
