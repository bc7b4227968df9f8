mod common;

use common::{hypochain, read_csv, summary, write_config};

const SMALL: &str = r#"
[model]
key = "bs_asian"
s0 = 100.0
vol = 0.3

[run]
seed = 11
paths = 20000
steps = 32
t = 0.05
t_grid = [0.1, 0.05]
"#;

#[test]
fn unknown_field_is_rejected_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.toml", "[model]\nkey = \"kolmogorov\"\n[run]\nn_path = 10\n");
    let out = hypochain("simulate", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("n_path"), "{err}");
    assert!(!dir.path().join("out/simulate.csv").exists());
}

#[test]
fn unknown_model_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.toml", "[model]\nkey = \"heston\"\n");
    let out = hypochain("validate", &cfg, dir.path(), &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("heston"));
}

#[test]
fn summary_has_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", SMALL);
    // Few paths, so price assertions may fail; only the artifacts matter here.
    let out = hypochain("price", &cfg, dir.path(), &["--seed", "5", "--paths", "5000"]);
    assert!(out.status.code().is_some_and(|c| c <= 1), "{}", String::from_utf8_lossy(&out.stderr));
    let s = summary(dir.path(), "price");
    assert_eq!(s["seed"], 5);
    assert_eq!(s["paths"], 5000);
    assert_eq!(s["model_key"], "bs_asian");
    assert_eq!(s["subcommand"], "price");
    assert!(s["version"].as_str().unwrap().starts_with(env!("CARGO_PKG_VERSION")));
    assert!(s["wall_clock_seconds"].as_f64().unwrap() >= 0.0);
    assert_eq!(s["config_text"], SMALL);
    assert_eq!(s["config"]["run"]["seed"], 5);
    assert!(s["checks"].as_array().unwrap().iter().all(|c| c["assertion"].is_boolean()));
    let rows = read_csv(&dir.path().join("price.csv"));
    assert_eq!(rows.len(), 2);
    // 17 significant digits in scientific notation.
    let mc = &rows[0]["mc"];
    assert_eq!(mc.split('e').next().unwrap().replace(['-', '.'], "").len(), 17, "{mc}");
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", &format!("{SMALL}write_samples = true\nrecord = \"joint_n\"\n"));
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(hypochain("simulate", &cfg, &a, &["--workers", "1"]).status.success());
    assert!(hypochain("simulate", &cfg, &b, &["--workers", "3"]).status.success());
    for f in ["simulate.csv", "simulate.samples.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let samples = read_csv(&a.join("simulate.samples.csv"));
    assert_eq!(samples.len(), 20000);
    assert_eq!(samples[0].len(), 4);
}

#[test]
fn far_point_is_flagged_as_insufficient_tail_mass() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.toml",
        "[model]\nkey = \"kolmogorov\"\n[run]\npaths = 20000\nt_grid = [1.0, 0.1]\ny_bar = [6.0, 0.0]\n",
    );
    let out = hypochain("converge", &cfg, dir.path(), &[]);
    assert!(out.status.success());
    let rows = read_csv(&dir.path().join("converge.csv"));
    assert!(rows.iter().all(|r| r["status"] == "insufficient tail mass"));
}

#[test]
fn nonlinear_decay_is_unsupported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", "[model]\nkey = \"quadratic_asian\"\nxi1 = 1.0\n");
    let out = hypochain("diagonal-decay", &cfg, dir.path(), &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not linear"));
}

#[test]
fn failing_assertion_sets_exit_status() {
    // A near-zero tolerance makes the density comparison fail.
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.toml",
        "[model]\nkey = \"kolmogorov\"\n[run]\npaths = 20000\ntolerance = 1e-9\n",
    );
    let out = hypochain("converge", &cfg, dir.path(), &[]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(summary(dir.path(), "converge")["passed"], false);
    assert!(dir.path().join("converge.csv").exists());
}

#[test]
fn price_requires_a_basket() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", "[model]\nkey = \"kolmogorov\"\n");
    let out = hypochain("price", &cfg, dir.path(), &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn shipped_configs_parse() {
    for entry in std::fs::read_dir(common::configs()).unwrap() {
        let path = entry.unwrap().path();
        let loaded = hypochain::LoadedConfig::load(&path).unwrap();
        hypochain::registry::build(&loaded.config.model).unwrap();
    }
}
