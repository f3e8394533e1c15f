use cfisac::harness::*;
use cfisac::scenario::ScenarioConfig;
use cfisac::SystemParams;

fn cfg(schemes: &[&str], seeds: usize) -> ExperimentConfig {
    ExperimentConfig { schemes: schemes.iter().map(|s| s.to_string()).collect(), seeds, ..Default::default() }
}

fn tmp(name: &str) -> std::path::PathBuf {
    let d = std::env::temp_dir().join(format!("cfisac-harness-{name}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    d
}

#[test]
fn one_seed_one_scheme_gives_one_row() {
    let out = run_sweep(&cfg(&["heuristic"], 1), 4, &PolicySet::new()).unwrap();
    assert_eq!(out.rows.len(), 1);
    assert_eq!(out.rows[0].status, "ok");
    assert_eq!(out.rows[0].scenario_seed, scenario_seed(4, 0));
    assert_eq!(out.summary.len(), 1);
    assert_eq!(out.summary[0].ok, 1);
}

#[test]
fn sweep_rows_cover_every_point_and_scheme() {
    let c = ExperimentConfig { sweep: Some(Sweep { var: SweepVar::K, values: vec![1, 3] }), ..cfg(&["heuristic", "zf"], 3) };
    let out = run_sweep(&c, 2, &PolicySet::new()).unwrap();
    assert_eq!(out.rows.len(), 2 * 3 * 2);
    assert!(out.rows.iter().all(|r| r.sweep_var == "K" && (r.value == 1 || r.value == 3)));
    // paired realisations across schemes
    for pair in out.rows.chunks(2) {
        assert_eq!(pair[0].scenario_seed, pair[1].scenario_seed);
    }
}

#[test]
fn result_files_are_deterministic() {
    let c = cfg(&["heuristic", "cf_fixed"], 2);
    let (a, b) = (tmp("a"), tmp("b"));
    write_sweep(&run_sweep(&c, 9, &PolicySet::new()).unwrap(), "none", &a).unwrap();
    write_sweep(&run_sweep(&c, 9, &PolicySet::new()).unwrap(), "none", &b).unwrap();
    for f in ["results.csv", "summary.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let _ = (std::fs::remove_dir_all(a), std::fs::remove_dir_all(b));
}

#[test]
fn missing_policy_is_an_error_row() {
    let out = run_sweep(&cfg(&["heuristic", "marl"], 2), 1, &PolicySet::new()).unwrap();
    let bad: Vec<_> = out.rows.iter().filter(|r| r.scheme == "marl").collect();
    assert_eq!(bad.len(), 2);
    assert!(bad.iter().all(|r| r.status == "error" && r.tr_crb.is_nan() && !r.note.is_empty()));
    assert!(out.rows.iter().filter(|r| r.scheme == "heuristic").all(|r| r.status == "ok"));
    assert_eq!(out.timing.len(), 2);
}

#[test]
fn config_json_round_trip() {
    let c = ExperimentConfig {
        scenario: ScenarioConfig { num_aps: 5, ..Default::default() },
        params: SystemParams { p_th: 0.3, ..Default::default() },
        sweep: Some(Sweep { var: SweepVar::M, values: vec![2, 4] }),
        ..cfg(&["cf_joint", "dolg"], 7)
    };
    assert_eq!(ExperimentConfig::from_json(&c.to_json().unwrap()).unwrap(), c);
    // omitted fields fall back to defaults
    let partial = ExperimentConfig::from_json(r#"{"seeds": 3}"#).unwrap();
    assert_eq!(partial.seeds, 3);
    assert_eq!(partial.schemes, ExperimentConfig::default().schemes);
}

#[test]
fn invalid_configs_are_rejected() {
    assert!(ExperimentConfig::from_json(r#"{"seeds": 0}"#).is_err());
    assert!(ExperimentConfig::from_json(r#"{"schemes": ["bogus"]}"#).is_err());
    assert!(ExperimentConfig::from_json(r#"{"schemes": []}"#).is_err());
    assert!(ExperimentConfig::from_json(r#"{"sweep": {"var": "K", "values": [0]}}"#).is_err());
}

#[test]
fn summary_statistics() {
    let s = Stat::of(&[1.0, 3.0]);
    assert_eq!((s.mean, s.std), (2.0, 1.0));
    assert!(Stat::of(&[]).mean.is_nan());
}
