use std::path::Path;
use std::process::{Command, Output};

fn splitree(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_splitree"))
        .args(args)
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.display().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: &str = r#"
preset = "birth-death"
[constants]
joint_replicates = 200
m_nodes = 8
[experiment]
t = 4.0
replicates = 1000
k_list = [1, 2]
theta_grid = [0.0, 0.8, 1.6]
[simulate]
times = [1.0, 3.0]
theta_evals = [0.5, 1.0]
replicates = 20
k_max = 4
"#;

#[test]
fn missing_config_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.toml");
    let o = splitree(&[
        "scale",
        "--config",
        missing.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("nope.toml"), "{}", stderr(&o));
}

#[test]
fn unknown_keys_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.toml",
        "preset = \"yule\"\n[experiment]\nreplicate = 5\n",
    );
    let o = splitree(&[
        "scale",
        "--config",
        &cfg,
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(
        stderr(&o).contains("experiment.replicate"),
        "{}",
        stderr(&o)
    );
}

#[test]
fn validate_markov_preset_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("v");
    let o = splitree(&[
        "validate",
        "--preset",
        "birth-death",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["passed"], true);
    assert!(summary["checks"].as_array().unwrap().len() >= 5);
}

#[test]
fn clonal_supercritical_m_is_a_hypothesis_rejection() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.toml",
        "preset = \"birth-death\"\n[model]\ntheta = 0.2\n",
    );
    let o = splitree(&[
        "constants",
        "--config",
        &cfg,
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn observation_beyond_the_table_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.toml",
        "preset = \"birth-death\"\n[grid]\nt_max = 10.0\n[simulate]\ntimes = [12.0]\n",
    );
    let o = splitree(&[
        "simulate",
        "--config",
        &cfg,
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

fn run_all(cfg: &str, out: &Path, seed: &str, threads: &str) {
    for cmd in ["scale", "constants", "simulate", "clt", "ehh"] {
        let o = splitree(&[
            cmd,
            "--config",
            cfg,
            "--out",
            out.to_str().unwrap(),
            "--seed",
            seed,
            "--threads",
            threads,
        ]);
        assert_eq!(o.status.code(), Some(0), "{cmd}: {}", stderr(&o));
    }
}

#[test]
fn reruns_are_byte_identical_and_schemas_hold() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_all(&cfg, &a, "7", "1");
    run_all(&cfg, &b, "7", "3");
    let headers = [
        ("scale.csv", "t,W,W_theta,survival_prob,expected_N"),
        ("constants.csv", "k,c_k,tail_bound"),
        ("spectrum_ts.csv", "replicate,time,theta_eval,k,count,N,Z0"),
        ("clt_samples.csv", "replicate,k,statistic,kind"),
        ("diagnostics.csv", "t,k,var_emp,var_theory,ks,l2"),
        (
            "ehh.csv",
            "theta,ehh_exact_mean,ehh_exact_sd,ehh_approx,rel_error",
        ),
    ];
    for (name, header) in headers {
        let x = std::fs::read(a.join(name)).unwrap();
        let y = std::fs::read(b.join(name)).unwrap();
        assert!(x == y, "{name} differs between runs");
        let text = String::from_utf8(x).unwrap();
        assert_eq!(text.lines().next(), Some(header));
        assert!(text.lines().count() > 1 && !text.contains('\r'));
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 7);
    for f in manifest["outputs"].as_array().unwrap() {
        let len = std::fs::metadata(a.join(f.as_str().unwrap()))
            .unwrap()
            .len();
        assert!(len > 0);
    }
}

#[test]
fn seed_changes_the_sample() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for (out, seed) in [(&a, "1"), (&b, "2")] {
        let o = splitree(&[
            "simulate",
            "--config",
            &cfg,
            "--out",
            out.to_str().unwrap(),
            "--seed",
            seed,
        ]);
        assert_eq!(o.status.code(), Some(0));
    }
    assert_ne!(
        std::fs::read(a.join("spectrum_ts.csv")).unwrap(),
        std::fs::read(b.join("spectrum_ts.csv")).unwrap()
    );
}

#[test]
fn forward_mode_adds_the_limit_column() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.toml",
        &format!("{SMALL}mode = \"forward\"\n"),
    );
    let out = dir.path().join("f");
    let o = splitree(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(out.join("spectrum_ts.csv")).unwrap();
    assert_eq!(
        text.lines().next(),
        Some("replicate,time,theta_eval,k,count,N,Z0,E_hat")
    );
    // 20 replicates x 2 times x 2 rates x (k = 0..4)
    assert_eq!(text.lines().count(), 1 + 20 * 2 * 2 * 5);
}
