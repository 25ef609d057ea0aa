use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use moalign::env::{generate_environment, EnvConfig, Environment};

const SMALL: [&str; 10] = [
    "--env.num_prompts",
    "300",
    "--hyper.epochs",
    "5",
    "--hyper.pairs_per_objective",
    "100",
    "--hyper.iterations",
    "3",
    "--env.seed",
    "4",
];

fn moalign(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_moalign"))
        .current_dir(dir)
        .env_remove("MOALIGN_SEED")
        .env("RUST_LOG", "error")
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Relative path -> bytes for every file under `root`.
fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(PathBuf, Vec<u8>)>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out.sort();
    out
}

#[test]
fn env_gen_round_trips_and_is_deterministic() {
    let t = tempfile::tempdir().unwrap();
    let a = moalign(t.path(), &["env-gen", "--out", "a.json"]);
    assert_eq!(code(&a), 0, "{}", stderr(&a));
    let stdout = String::from_utf8_lossy(&a.stdout);
    assert!(stdout.contains("groups") && stdout.contains("capacity"), "{stdout}");
    assert_eq!(code(&moalign(t.path(), &["env-gen", "--out", "b.json"])), 0);
    let bytes = fs::read(t.path().join("a.json")).unwrap();
    assert_eq!(bytes, fs::read(t.path().join("b.json")).unwrap());
    let loaded: Environment = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(loaded, generate_environment(&EnvConfig::default()).unwrap());
}

#[test]
fn seed_variable_overrides_config_seed() {
    let t = tempfile::tempdir().unwrap();
    let via_flag = moalign(t.path(), &["--env.seed", "5", "--env.num_prompts", "50", "env-gen", "--out", "flag.json"]);
    assert_eq!(code(&via_flag), 0);
    let via_var = Command::new(env!("CARGO_BIN_EXE_moalign"))
        .current_dir(t.path())
        .env("MOALIGN_SEED", "5")
        .args(["--env.num_prompts", "50", "env-gen", "--out", "var.json"])
        .output()
        .unwrap();
    assert_eq!(code(&via_var), 0);
    assert_eq!(fs::read(t.path().join("flag.json")).unwrap(), fs::read(t.path().join("var.json")).unwrap());
}

#[test]
fn invalid_configs_fail_before_any_work() {
    let t = tempfile::tempdir().unwrap();
    let d1 = moalign(t.path(), &["--output_dir", "never", "--env.dim", "1", "iterate"]);
    assert_eq!(code(&d1), 1);
    assert!(stderr(&d1).contains("centering constraint"), "{}", stderr(&d1));
    let unknown = moalign(t.path(), &["--output_dir", "never", "--hyper.epoch", "3", "iterate"]);
    assert_eq!(code(&unknown), 1);
    assert!(stderr(&unknown).contains("epoch"));
    fs::write(t.path().join("bad.toml"), "[env]\ndim = \"four\"\n").unwrap();
    assert_eq!(code(&moalign(t.path(), &["--config", "bad.toml", "env-gen"])), 1);
    assert_eq!(code(&moalign(t.path(), &["no-such-command"])), 1);
    assert_eq!(code(&moalign(t.path(), &["--help"])), 0);
    assert!(!t.path().join("never").exists());
}

#[test]
fn data_build_writes_one_file_per_objective() {
    let t = tempfile::tempdir().unwrap();
    let p = t.path();
    assert_eq!(code(&moalign(p, &["--env.num_prompts", "200", "env-gen", "--out", "env.json"])), 0);
    let build = |out: &str, k: &str| moalign(p, &["--hyper.pairs_per_objective", k, "data-build", "--env", "env.json", "--out", out]);
    assert_eq!(code(&build("a", "50")), 0);
    assert_eq!(code(&build("b", "50")), 0);
    assert_eq!(tree(&p.join("a")), tree(&p.join("b")));
    for k in 0..3 {
        let text = fs::read_to_string(p.join("a").join(format!("objective_{k}.jsonl"))).unwrap();
        assert!(text.lines().next().unwrap().contains("\"schema\":\"moalign.dataset\""));
        assert!(text.lines().count() > 1);
    }
    assert!(p.join("a/build_report.json").exists());

    assert_eq!(code(&build("zero", "0")), 0);
    for k in 0..3 {
        let text = fs::read_to_string(p.join("zero").join(format!("objective_{k}.jsonl"))).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(text.contains("\"schema_version\":1") && text.contains("\"pairs\":0"));
    }

    fs::write(p.join("broken.json"), "{\"schema\":").unwrap();
    assert_eq!(code(&moalign(p, &["data-build", "--env", "broken.json"])), 3);
}

#[test]
fn iterate_layout_determinism_and_resume() {
    let t = tempfile::tempdir().unwrap();
    let p = t.path();
    let mut args: Vec<&str> = SMALL.to_vec();
    args.extend(["--output_dir", "run", "iterate"]);
    assert_eq!(code(&moalign(p, &args)), 0);
    for i in 1..=3 {
        let it = p.join(format!("run/iter_{i}"));
        for f in ["metrics.csv", "fronts_0_1.csv", "fronts_0_2.csv", "fronts_1_2.csv", "checkpoint.json"] {
            assert!(it.join(f).exists(), "{f} missing in iter_{i}");
        }
        assert_eq!(fs::read_dir(it.join("datasets")).unwrap().count(), 3);
        assert!(fs::read_dir(it.join("policies")).unwrap().count() >= 10);
    }
    assert!(!p.join("run/iter_4").exists());
    for f in ["summary.csv", "progression.csv", "chosen_quantiles.csv", "baseline/metrics.csv"] {
        assert!(p.join("run").join(f).exists(), "{f}");
    }

    // same config and seed, same directory: identical tree
    fs::rename(p.join("run"), p.join("first")).unwrap();
    assert_eq!(code(&moalign(p, &args)), 0);
    assert_eq!(tree(&p.join("first")), tree(&p.join("run")));

    // worker count does not change any output
    let mut jobs = vec!["--jobs", "1"];
    jobs.extend(args.iter());
    fs::rename(p.join("run"), p.join("second")).unwrap();
    assert_eq!(code(&moalign(p, &jobs)), 0);
    assert_eq!(tree(&p.join("first")), tree(&p.join("run")));

    let mut resume: Vec<&str> = SMALL.to_vec();
    resume.extend(["--output_dir", "resumed", "iterate", "--resume", "first/iter_1"]);
    assert_eq!(code(&moalign(p, &resume)), 0);
    assert!(!p.join("resumed/iter_1").exists());
    for i in [2, 3] {
        let name = format!("iter_{i}");
        assert_eq!(tree(&p.join("first").join(&name)), tree(&p.join("resumed").join(&name)), "{name}");
    }
}

#[test]
fn zero_iterations_emit_sft_metrics_only() {
    let t = tempfile::tempdir().unwrap();
    let out = moalign(
        t.path(),
        &["--env.num_prompts", "100", "--hyper.iterations", "0", "--output_dir", "run", "iterate"],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let metrics = fs::read_to_string(t.path().join("run/baseline/metrics.csv")).unwrap();
    assert!(metrics.starts_with("# moalign.metrics v1\n"));
    assert_eq!(metrics.lines().filter(|l| l.starts_with("sft,")).count(), 4);
    assert!(!t.path().join("run/iter_1").exists());
    assert!(!t.path().join("run/progression.csv").exists());
}

#[test]
fn verify_exit_status_follows_violation_fraction() {
    let t = tempfile::tempdir().unwrap();
    let p = t.path();
    for which in ["lemma1", "theorem1"] {
        let loose = moalign(p, &["--theory.trials", "100", "--theory.c", "100", "verify", which, "--out", "loose"]);
        assert_eq!(code(&loose), 0, "{}", stderr(&loose));
        let csv = fs::read_to_string(p.join(format!("loose/{which}.csv"))).unwrap();
        let rows: Vec<&str> = csv.lines().skip(2).collect();
        assert!(!rows.is_empty());
        assert!(rows.iter().all(|r| r.ends_with(",false")), "{which} had violations at C = 100");

        let again = moalign(p, &["--theory.trials", "100", "--theory.c", "100", "verify", which, "--out", "again"]);
        assert_eq!(code(&again), 0);
        assert_eq!(tree(&p.join("loose")), tree(&p.join("again")));

        let tight = moalign(p, &["--theory.trials", "100", "--theory.c", "0.001", "verify", which, "--out", "tight"]);
        assert_eq!(code(&tight), 2);
    }
    assert_eq!(code(&moalign(p, &["--theory.trials", "99", "verify", "lemma1"])), 1);
}

#[test]
fn pareto_rebuilds_fronts_from_metrics() {
    let t = tempfile::tempdir().unwrap();
    let p = t.path();
    let mut args: Vec<&str> = SMALL.to_vec();
    args[7] = "1";
    args.extend(["--output_dir", "run", "iterate"]);
    assert_eq!(code(&moalign(p, &args)), 0);
    assert_eq!(code(&moalign(p, &["pareto", "--dir", "run/iter_1", "--out", "fronts"])), 0);
    let written = tree(&p.join("fronts"));
    assert_eq!(written.len(), 3);
    for (name, bytes) in &written {
        assert_eq!(bytes, &fs::read(p.join("run/iter_1").join(name)).unwrap(), "{}", name.display());
    }
    let front = String::from_utf8(written[0].1.clone()).unwrap();
    assert!(front.contains("lower-better"), "objective 0 is the lower-better scorer");

    assert_eq!(code(&moalign(p, &["pareto", "--dir", "run/iter_1", "--axes", "1,2", "--out", "one"])), 0);
    assert_eq!(tree(&p.join("one")).len(), 1);
    assert_eq!(code(&moalign(p, &["pareto", "--dir", "missing"])), 3);
}

#[test]
fn pareto_singleton_grid_is_on_front() {
    let t = tempfile::tempdir().unwrap();
    let dir = t.path().join("iter");
    fs::create_dir(&dir).unwrap();
    fs::write(
        dir.join("metrics.csv"),
        "# moalign.metrics v1\n\
         policy,weight,w_0,w_1,score_0,score_1,direction_0,direction_1\n\
         trained,0.5_0.5,5e-1,5e-1,2e-1,3e-1,lower-better,higher-better\n",
    )
    .unwrap();
    assert_eq!(code(&moalign(t.path(), &["pareto", "--dir", "iter"])), 0);
    let text = fs::read_to_string(dir.join("fronts_0_1.csv")).unwrap();
    let rows: Vec<&str> = text.lines().skip(2).collect();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].starts_with("5.0000000000000000e-1,5.0000000000000000e-1,-2.0000000000000001e-1,"), "{}", rows[0]);
    assert!(rows[0].ends_with(",lower-better,higher-better,true"));
}
