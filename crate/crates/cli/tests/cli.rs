use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use proptest::prelude::*;
use tzpc::ident::{learn_model_set, Dataset};
use tzpc::simloop::RunOptions;
use tzpc::synth::synthesize;
use tzpc_cli::config::{GainConfig, ScenarioConfig};
use tzpc_cli::pipeline::{
    collect_data, covering_delta, load_bundle, load_data, load_model, ocp_spec, read_run_csv,
    run_seed, synthesis_options, Artifacts,
};

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios")
        .join(format!("{name}.json"))
}

fn double_integrator() -> ScenarioConfig {
    ScenarioConfig::load(&scenario("example1_double_integrator")).unwrap()
}

fn tzpc(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tzpc"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn write_config(dir: &Path, cfg: &ScenarioConfig) -> PathBuf {
    let path = dir.join("scenario.json");
    std::fs::write(&path, cfg.to_json()).unwrap();
    path
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn packaged_scenarios_parse_and_round_trip() {
    for name in ["example1_double_integrator", "example2_building"] {
        let cfg = ScenarioConfig::load(&scenario(name)).unwrap();
        cfg.validate().unwrap();
        assert_eq!(ScenarioConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn config_round_trips_any_finite_values(
        a in prop::array::uniform4(-1e6f64..1e6),
        x0 in prop::array::uniform2(-1e3f64..1e3),
        l1 in 0.0f64..10.0,
        theta in 1e-6f64..0.99,
    ) {
        let mut cfg = double_integrator();
        cfg.system.a_true = vec![vec![a[0], a[1]], vec![a[2], a[3]]];
        cfg.system.x0 = x0.to_vec();
        cfg.cost.l1_weight = l1;
        cfg.tube.theta = theta;
        let back = ScenarioConfig::from_json(&cfg.to_json()).unwrap();
        prop_assert_eq!(back, cfg);
    }
}

#[test]
fn simulate_without_offline_is_a_missing_prerequisite() {
    let dir = tempfile::tempdir().unwrap();
    let o = tzpc(
        &["simulate"],
        &scenario("example1_double_integrator"),
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(3));
    assert!(
        stderr(&o).contains("run `tzpc offline` first"),
        "{}",
        stderr(&o)
    );
}

#[test]
fn learn_without_data_is_a_missing_prerequisite() {
    let dir = tempfile::tempdir().unwrap();
    let o = tzpc(
        &["learn"],
        &scenario("example1_double_integrator"),
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("run `tzpc generate-data` first"));
}

#[test]
fn reach_without_runs_is_a_missing_prerequisite() {
    let dir = tempfile::tempdir().unwrap();
    let config = scenario("example1_double_integrator");
    for stage in ["generate-data", "learn"] {
        assert_eq!(
            tzpc(&[stage, "--quiet"], &config, dir.path()).status.code(),
            Some(0)
        );
    }
    let o = tzpc(&["reach"], &config, dir.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("run `tzpc simulate` first"));
}

#[test]
fn malformed_or_missing_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ \"name\": 3 }").unwrap();
    assert_eq!(tzpc(&["check"], &bad, dir.path()).status.code(), Some(2));
    let missing = dir.path().join("absent.json");
    assert_eq!(
        tzpc(&["check"], &missing, dir.path()).status.code(),
        Some(2)
    );

    let mut cfg = double_integrator();
    cfg.system.x0 = vec![0.0];
    let path = write_config(dir.path(), &cfg);
    assert_eq!(tzpc(&["check"], &path, dir.path()).status.code(), Some(2));
}

#[test]
fn rank_deficient_data_fails_the_rank_check() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = double_integrator();
    cfg.data.n_traj = 1;
    cfg.data.traj_len = 3;
    let path = write_config(dir.path(), &cfg);
    let o = tzpc(&["check"], &path, dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(
        stdout(&o).contains("FAIL  data rank condition"),
        "{}",
        stdout(&o)
    );

    cfg.data.traj_len = 1;
    let path = write_config(dir.path(), &cfg);
    let o = tzpc(&["check"], &path, dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL  data rank condition"));
    assert_eq!(
        tzpc(&["generate-data"], &path, dir.path()).status.code(),
        Some(1)
    );
}

#[test]
fn zero_gain_fails_lyapunov_verification() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = double_integrator();
    cfg.gains = GainConfig::Provided {
        k: vec![vec![0.0, 0.0]],
        p: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
    };
    let path = write_config(dir.path(), &cfg);
    let o = tzpc(&["check"], &path, dir.path());
    assert_eq!(o.status.code(), Some(1));
    let text = stdout(&o);
    assert!(
        text.contains("FAIL  Lyapunov vertex verification"),
        "{text}"
    );
    assert!(text.contains("SKIP  RPI certificate"));
}

#[test]
fn check_passes_on_the_double_integrator() {
    let dir = tempfile::tempdir().unwrap();
    let o = tzpc(
        &["check"],
        &scenario("example1_double_integrator"),
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(!stdout(&o).contains("FAIL"));
}

#[test]
fn stored_artifacts_equal_in_memory_results() {
    let cfg = double_integrator();
    let dir = tempfile::tempdir().unwrap();
    let config = scenario("example1_double_integrator");
    for stage in ["generate-data", "learn", "offline"] {
        assert_eq!(
            tzpc(&[stage, "--quiet"], &config, dir.path()).status.code(),
            Some(0)
        );
    }
    let o = tzpc(
        &["simulate", "--quiet", "--seed", "3", "--steps", "12"],
        &config,
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0));
    let art = Artifacts::new(dir.path());

    let d = Dataset::assemble(collect_data(&cfg).unwrap()).unwrap();
    assert_eq!(load_data(&art).unwrap(), d);

    let ms = learn_model_set(&d, &cfg.noise_set().unwrap()).unwrap();
    let (stored_ms, delta) = load_model(&art).unwrap();
    assert_eq!(stored_ms, ms);
    assert_eq!(delta, covering_delta(&cfg, &d).unwrap());

    let bundle = synthesize(&d, &ms, &synthesis_options(&cfg, delta).unwrap()).unwrap();
    assert_eq!(load_bundle(&art).unwrap(), bundle);

    let spec = ocp_spec(&cfg, &bundle).unwrap();
    let opts = RunOptions {
        steps: 12,
        timing: false,
    };
    let log = run_seed(&cfg, &bundle, &spec, 3, opts).unwrap();
    let (states, inputs) = read_run_csv(&art.run(3), 2, 1).unwrap();
    let expect_x: Vec<_> = log.records.iter().map(|r| r.x.clone()).collect();
    let expect_u: Vec<_> = log.records.iter().map(|r| r.u.clone()).collect();
    assert_eq!(states, expect_x);
    assert_eq!(inputs, expect_u);
}

#[test]
fn all_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let o = tzpc(
        &["all", "--steps", "5"],
        &scenario("example1_double_integrator"),
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let art = Artifacts::new(dir.path());
    assert!(art.model_set().is_file());
    assert!(art.bundle().is_file());
    for seed in 1..=20 {
        assert!(art.run(seed).is_file());
        assert!(art.reach(seed).is_file());
    }
    assert!(art.trajectory(19).is_file());
    assert!(!art.trajectory(20).exists());
    assert_eq!(stdout(&o).matches("simulate: seed").count(), 20);
}

#[test]
fn infeasible_setpoint_fails_offline_with_check_code() {
    let dir = tempfile::tempdir().unwrap();
    let config = scenario("example2_building");
    for stage in ["generate-data", "learn"] {
        assert_eq!(
            tzpc(&[stage, "--quiet"], &config, dir.path()).status.code(),
            Some(0)
        );
    }
    let o = tzpc(&["offline"], &config, dir.path());
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(!Artifacts::new(dir.path()).bundle().exists());
}
