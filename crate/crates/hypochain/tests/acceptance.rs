//! End-to-end acceptance checks, one test per criterion. Each test drives the
//! binary on a shipped configuration, recomputes the expected values from
//! closed forms and prints a single PASS/FAIL line.

mod common;

use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use common::{configs, hypochain, num, read_csv, slope, summary, write_config};

type Row = HashMap<String, String>;

/// Prints the verdict outside the test harness capture, then fails on FAIL.
fn verdict(criterion: u32, title: &str, failures: Vec<String>, detail: String) {
    let status = if failures.is_empty() { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "criterion {criterion:>2} [{status}] {title}: {detail}");
    let _ = out.flush();
    assert!(failures.is_empty(), "criterion {criterion}: {failures:?}");
}

fn run_ok(cmd: &str, config: &Path, out: &Path, extra: &[&str]) {
    let o = hypochain(cmd, config, out, extra);
    assert!(
        o.status.code().is_some_and(|c| c <= 1),
        "{cmd} {}: {}",
        config.display(),
        String::from_utf8_lossy(&o.stderr)
    );
}

fn rows_where<'a>(rows: &'a [Row], key: &str, value: &str) -> Vec<&'a Row> {
    rows.iter().filter(|r| r[key] == value).collect()
}

/// `Q(l, j) = 1 / ((l + j - 1) (l - 1)! (j - 1)!)`, 1-based.
fn q_entry(l: usize, j: usize) -> f64 {
    let fact = |k: usize| (1..=k).map(|v| v as f64).product::<f64>();
    1.0 / ((l + j - 1) as f64 * fact(l - 1) * fact(j - 1))
}

#[test]
fn criterion_01_exact_linear_covariance() {
    let dir = tempfile::tempdir().unwrap();
    run_ok("simulate", &configs().join("kolmogorov.toml"), dir.path(), &[]);
    let rows = read_csv(&dir.path().join("simulate.csv"));
    let t: f64 = 1.0;
    let exact = [[t, t * t / 2.0], [t * t / 2.0, t.powi(3) / 3.0]];
    let mut failures = Vec::new();
    let mut worst: f64 = 0.0;
    for r in rows_where(&rows, "quantity", "cov_x") {
        let (i, j) = (num(r, "i") as usize - 1, num(r, "j") as usize - 1);
        let z = (num(r, "estimate") - exact[i][j]).abs() / num(r, "se");
        worst = worst.max(z);
        if z > 3.0 {
            failures.push(format!("cov({i},{j}) off by {z:.2} se"));
        }
    }
    let paths = summary(dir.path(), "simulate")["paths"].as_u64().unwrap();
    if paths < 1_000_000 {
        failures.push(format!("only {paths} paths"));
    }
    verdict(
        1,
        "sample covariance of X_1 vs [[t, t^2/2], [t^2/2, t^3/3]]",
        failures,
        format!("{paths} paths, max |z| = {worst:.3}"),
    );
}

fn density_at_origin(dir: &Path) -> Vec<(f64, f64)> {
    read_csv(&dir.join("density.csv"))
        .iter()
        .filter(|r| r["point"] == "0")
        .map(|r| (num(r, "t"), num(r, "chi_density")))
        .collect()
}

#[test]
fn criterion_02_density_limit() {
    let dir = tempfile::tempdir().unwrap();
    let (k, b) = (dir.path().join("k"), dir.path().join("b"));
    run_ok("density", &configs().join("kolmogorov.toml"), &k, &[]);
    run_ok("density", &configs().join("bs_asian.toml"), &b, &["--paths", "1000000"]);
    let mut failures = Vec::new();
    let mut details = Vec::new();

    let kolmogorov_limit = 12f64.sqrt() / (2.0 * PI);
    for (t, p) in density_at_origin(&k) {
        let rel = (p - kolmogorov_limit).abs() / kolmogorov_limit;
        details.push(format!("kolmogorov t={t}: {rel:.4}"));
        if rel > 0.05 {
            failures.push(format!("kolmogorov t={t}: relative error {rel:.4}"));
        }
    }
    // A = diag(vol s0, vol s0), so the limit at 0 is 1/(2π vol² s0² √det Q).
    let bs_limit = 1.0 / (2.0 * PI * (0.2f64 * 100.0).powi(2) * (1.0f64 / 12.0).sqrt());
    let bs = density_at_origin(&b);
    match bs.iter().find(|(t, _)| (*t - 0.01).abs() < 1e-12) {
        Some((_, p)) => {
            let rel = (p - bs_limit).abs() / bs_limit;
            details.push(format!("bs_asian t=0.01: {rel:.4}"));
            if rel > 0.10 {
                failures.push(format!("bs_asian relative error {rel:.4}"));
            }
        }
        None => failures.push("no bs_asian row at t = 0.01".into()),
    }
    // The change of variables is exact, so the heat-kernel route must agree.
    for dir in [&k, &b] {
        let s = summary(dir, "density");
        for c in s["checks"].as_array().unwrap() {
            if c["name"].as_str().unwrap().starts_with("change_of_variables") && c["passed"] != true {
                failures.push(format!("{}", c["detail"]));
            }
        }
    }
    verdict(2, "rescaled density vs limit at the origin", failures, details.join(", "));
}

#[test]
fn criterion_03_theta_covariance() {
    let dir = tempfile::tempdir().unwrap();
    run_ok("simulate", &configs().join("kolmogorov3_joint.toml"), dir.path(), &[]);
    let rows = read_csv(&dir.path().join("simulate.csv"));
    let mut failures = Vec::new();
    let mut worst: f64 = 0.0;
    let cov = rows_where(&rows, "quantity", "cov_theta");
    if cov.len() != 6 {
        failures.push(format!("expected 6 covariance entries, got {}", cov.len()));
    }
    for r in cov {
        let (l, j) = (num(r, "i") as usize, num(r, "j") as usize);
        let z = (num(r, "estimate") - q_entry(l, j)).abs() / num(r, "se");
        worst = worst.max(z);
        if z > 3.0 {
            failures.push(format!("Q({l},{j}) off by {z:.2} se"));
        }
    }
    let paths = summary(dir.path(), "simulate")["paths"].as_u64().unwrap();
    verdict(
        3,
        "covariance of rescaled iterated integrals vs Q (n = 3)",
        failures,
        format!("{paths} paths, max |z| = {worst:.3}"),
    );
}

#[test]
fn criterion_04_taylor_residual() {
    let dir = tempfile::tempdir().unwrap();
    let (b, k) = (dir.path().join("b"), dir.path().join("k"));
    run_ok("taylor-check", &configs().join("bs_asian_taylor.toml"), &b, &[]);
    run_ok("taylor-check", &configs().join("kolmogorov.toml"), &k, &["--paths", "100000"]);
    let mut failures = Vec::new();
    let mut details = Vec::new();

    let rows = read_csv(&b.join("taylor-check.csv"));
    for j in 1..=2 {
        let block: Vec<&Row> = rows_where(&rows, "block", &j.to_string());
        let lt: Vec<f64> = block.iter().map(|r| num(r, "t").ln()).collect();
        let lr: Vec<f64> = block.iter().map(|r| num(r, "residual_l2").ln()).collect();
        let lo = block.iter().map(|r| num(r, "t")).fold(f64::INFINITY, f64::min);
        let hi = block.iter().map(|r| num(r, "t")).fold(0.0, f64::max);
        if lo < 0.02 - 1e-12 || hi > 0.2 + 1e-12 {
            failures.push(format!("time grid [{lo}, {hi}] leaves [0.02, 0.2]"));
        }
        let s = slope(&lt, &lr);
        details.push(format!("bs block {j} slope {s:.4}"));
        if (s - j as f64).abs() > 0.2 {
            failures.push(format!("block {j}: slope {s:.4}"));
        }
    }
    let worst = read_csv(&k.join("taylor-check.csv"))
        .iter()
        .map(|r| num(r, "relative_residual"))
        .fold(0.0, f64::max);
    details.push(format!("linear max relative residual {worst:.2e}"));
    if worst > 1e-6 {
        failures.push(format!("linear residual {worst:.3e}"));
    }
    verdict(4, "stochastic Taylor residual slopes", failures, details.join(", "));
}

#[test]
fn criterion_05_multiscale_moments() {
    let dir = tempfile::tempdir().unwrap();
    run_ok("taylor-check", &configs().join("kolmogorov3_moments.toml"), dir.path(), &[]);
    let rows = read_csv(&dir.path().join("taylor-check.csv"));
    let mut failures = Vec::new();
    let mut details = Vec::new();
    for j in 1..=3 {
        let block = rows_where(&rows, "block", &j.to_string());
        let lt: Vec<f64> = block.iter().map(|r| num(r, "t").ln()).collect();
        let lm: Vec<f64> = block.iter().map(|r| num(r, "moment_norm").ln()).collect();
        let s = slope(&lt, &lm);
        details.push(format!("block {j}: {s:.4}"));
        if (s - (j as f64 - 0.5)).abs() > 0.15 {
            failures.push(format!("block {j}: slope {s:.4}"));
        }
    }
    verdict(5, "moment slopes j - 1/2 on a three-level chain", failures, details.join(", "));
}

fn matrix_from(rows: &[Row], name: &str) -> Vec<Vec<f64>> {
    let entries = rows_where(rows, "matrix", name);
    let size = entries.iter().map(|r| num(r, "i") as usize).max().unwrap_or(0);
    let mut m = vec![vec![0.0; size]; size];
    for r in entries {
        m[num(r, "i") as usize - 1][num(r, "j") as usize - 1] = num(r, "value");
    }
    m
}

#[test]
fn criterion_06_hormander_structure() {
    let dir = tempfile::tempdir().unwrap();
    let models = [
        ("kolmogorov.toml", 1),
        ("kolmogorov3_joint.toml", 1),
        ("bs_asian.toml", 1),
        ("quadratic_asian.toml", 1),
        ("basket.toml", 2),
    ];
    let mut failures = Vec::new();
    let mut details = Vec::new();
    for (file, d) in models {
        let out = dir.path().join(file);
        run_ok("limits", &configs().join(file), &out, &[]);
        let rows = read_csv(&out.join("limits.csv"));
        let h = matrix_from(&rows, "hormander");
        let a = matrix_from(&rows, "A");
        let dim = h.len();
        let (mut below, mut total) = (0.0, 0.0);
        for i in 0..dim {
            for j in 0..dim {
                total += h[i][j] * h[i][j];
                if i / d > j / d {
                    below += h[i][j] * h[i][j];
                }
            }
        }
        let ratio = (below / total).sqrt();
        let mut diag_err: f64 = 0.0;
        for b in 0..dim / d {
            let (mut plus, mut minus, mut norm) = (0.0, 0.0, 0.0);
            for i in b * d..(b + 1) * d {
                for j in b * d..(b + 1) * d {
                    plus += (h[i][j] - a[i][j]).powi(2);
                    minus += (h[i][j] + a[i][j]).powi(2);
                    norm += a[i][j] * a[i][j];
                }
            }
            diag_err = diag_err.max(f64::min(plus, minus).sqrt() / norm.sqrt());
        }
        details.push(format!("{file}: below {ratio:.1e}, diagonal {diag_err:.1e}"));
        if ratio > 1e-6 {
            failures.push(format!("{file}: below-diagonal mass {ratio:.3e}"));
        }
        if diag_err > 1e-6 {
            failures.push(format!("{file}: diagonal blocks differ from A by {diag_err:.3e}"));
        }
    }
    verdict(6, "bracket matrix is block upper triangular with ±A diagonal", failures, details.join("; "));
}

/// Lower band below the envelope at every tail level from the knee on.
fn envelope_holds(rows: &[&Row], column: &str, knee: f64, t: f64) -> bool {
    rows.iter()
        .filter(|r| num(r, "level") >= knee && num(r, "count") >= 50.0 && num(r, "probability") <= 1e-2)
        .filter(|r| column != "lognormal" || num(r, "level") * t.sqrt() > 1.0)
        .all(|r| num(r, "lower") <= num(r, column) * (1.0 + 1e-12))
}

#[test]
fn criterion_07_envelope_regimes() {
    let dir = tempfile::tempdir().unwrap();
    let (k, b) = (dir.path().join("k"), dir.path().join("b"));
    run_ok("tails", &configs().join("kolmogorov.toml"), &k, &[]);
    run_ok("tails", &configs().join("bs_asian_tails.toml"), &b, &[]);
    let mut failures = Vec::new();
    let mut details = Vec::new();
    let mut expect = |dir: &Path, model: &str, regime: &str, pass: bool| {
        let fit = &summary(dir, "tails")["results"][regime];
        let passed = fit["passed"] == true;
        details.push(format!("{model} {regime} {}", if passed { "passes" } else { "fails" }));
        if passed != pass {
            failures.push(format!("{model}: {regime} fit passed = {passed}"));
            return;
        }
        // Re-check the verdict from the tabulated envelope.
        let rows = read_csv(&dir.join("tails.csv"));
        let chi = rows_where(&rows, "source", "chi");
        let knee = fit["knee"].as_f64().unwrap_or(f64::INFINITY);
        let t = summary(dir, "tails")["results"]["t"].as_f64().unwrap();
        if pass && !envelope_holds(&chi, regime, knee, t) {
            failures.push(format!("{model}: {regime} envelope undercuts the lower band"));
        }
        if !pass && knee.is_finite() && envelope_holds(&chi, regime, knee, t) {
            failures.push(format!("{model}: {regime} envelope dominates although the fit failed"));
        }
    };
    expect(&k, "kolmogorov", "gaussian", true);
    expect(&k, "kolmogorov", "polynomial", true);
    expect(&b, "bs_asian", "lognormal", true);
    expect(&b, "bs_asian", "gaussian", false);
    expect(&b, "bs_asian", "polynomial", true);
    verdict(7, "tail envelope regimes", failures, details.join(", "));
}

#[test]
fn criterion_08_asian_pricing() {
    let dir = tempfile::tempdir().unwrap();
    let (s, m) = (dir.path().join("s"), dir.path().join("m"));
    run_ok("price", &configs().join("bs_asian.toml"), &s, &[]);
    run_ok("price", &configs().join("basket.toml"), &m, &[]);
    let mut failures = Vec::new();
    let mut details = Vec::new();

    let mut rows = read_csv(&s.join("price.csv"));
    rows.sort_by(|a, b| num(b, "t").total_cmp(&num(a, "t")));
    let paths = summary(&s, "price")["paths"].as_u64().unwrap();
    if paths < 1_000_000 {
        failures.push(format!("only {paths} paths"));
    }
    let mut gaps = Vec::new();
    for r in &rows {
        let t = num(r, "t");
        let oracle = 20.0 * (t / (6.0 * PI)).sqrt();
        if (num(r, "asymptotic") - oracle).abs() > 1e-12 * oracle {
            failures.push(format!("asymptotic price at t={t}"));
        }
        let ratio = num(r, "mc") / oracle;
        gaps.push((ratio - 1.0).abs());
        if (t - 0.01).abs() < 1e-12 {
            details.push(format!("t=0.01 ratio {ratio:.5} (oracle {oracle:.5})"));
            if !(0.98..=1.02).contains(&ratio) {
                failures.push(format!("ratio {ratio:.5} at t = 0.01"));
            }
        }
    }
    let ts: Vec<f64> = rows.iter().map(|r| num(r, "t")).collect();
    if ts != [0.1, 0.05, 0.02, 0.01] {
        failures.push(format!("time grid {ts:?}"));
    }
    if !gaps.windows(2).all(|w| w[1] <= w[0]) {
        failures.push(format!("|ratio - 1| not monotone: {gaps:?}"));
    }
    details.push(format!("|ratio - 1| by decreasing t {:?}", gaps.iter().map(|g| format!("{g:.2e}")).collect::<Vec<_>>()));

    // w'σσ'w / 3 for the two-asset basket, σ = diag(s0) diag(vol) L.
    let (s0, vol, w, rho) = ([100.0, 60.0], [0.2, 0.3], [0.7, 0.3], 0.4);
    let a = [w[0] * vol[0] * s0[0], w[1] * vol[1] * s0[1]];
    let variance = (a[0] * a[0] + a[1] * a[1] + 2.0 * rho * a[0] * a[1]) / 3.0;
    let basket = read_csv(&m.join("price.csv"));
    let got = num(&basket[0], "limit_variance");
    if (got - variance).abs() > 1e-10 * variance {
        failures.push(format!("basket limit variance {got} vs {variance}"));
    }
    let routes = summary(&m, "price")["checks"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["name"] == "limit_variance_routes_agree")
        .cloned()
        .unwrap();
    details.push(format!("basket routes: {}", routes["detail"].as_str().unwrap()));
    if routes["passed"] != true {
        failures.push("block formula and A Q At disagree".into());
    }
    verdict(8, "ATM Asian pricing", failures, details.join(", "));
}

#[test]
fn criterion_09_diagonal_decay() {
    let dir = tempfile::tempdir().unwrap();
    run_ok("diagonal-decay", &configs().join("kolmogorov_drifted.toml"), dir.path(), &[]);
    let rows = read_csv(&dir.path().join("diagonal-decay.csv"));
    let mut failures = Vec::new();
    let ts: Vec<f64> = rows.iter().map(|r| num(r, "t")).collect();
    if ts.first() != Some(&0.1) || ts.last() != Some(&0.001) {
        failures.push(format!("time grid {ts:?}"));
    }
    let mut sup = f64::NEG_INFINITY;
    for r in &rows {
        let t = num(r, "t");
        // X_t ~ N((1, t), [[t, t²/2], [t²/2, t³/3]]) and y = (1, 0):
        // log p = -log(2π t² / √12) - 6 / t.
        let exact = -(2.0 * PI * t * t / 12f64.sqrt()).ln() - 6.0 / t;
        let got = num(r, "log_density");
        if (got - exact).abs() > 1e-8 * exact.abs() {
            failures.push(format!("t={t}: log density {got} vs {exact}"));
        }
        sup = sup.max(num(r, "scaled"));
    }
    if !(sup < 0.0) {
        failures.push(format!("largest t log p = {sup}"));
    }
    verdict(
        9,
        "t log p_t(xi, xi) on the drifted linear chain",
        failures,
        format!("sup over t in [0.001, 0.1] = {sup:.4}"),
    );
}

#[test]
fn criterion_10_reproducibility() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(configs().join("kolmogorov3_joint.toml")).unwrap();
    let cfg = write_config(dir.path(), "sim.toml", &format!("{text}write_samples = true\n"));
    let mut failures = Vec::new();
    let runs: [(&str, &Path, &[&str], &[&str]); 3] = [
        ("simulate", &cfg, &["--paths", "50000"], &["simulate.csv", "simulate.samples.csv"]),
        ("price", &configs().join("bs_asian.toml"), &["--paths", "50000"], &["price.csv"]),
        ("converge", &configs().join("kolmogorov.toml"), &["--paths", "50000"], &["converge.csv"]),
    ];
    let mut compared = 0;
    for (cmd, config, extra, files) in runs {
        let outs: Vec<_> = [("a", "8"), ("b", "8"), ("c", "1")]
            .iter()
            .map(|(name, workers)| {
                let out = dir.path().join(cmd).join(name);
                let mut args = extra.to_vec();
                args.extend(["--workers", workers]);
                run_ok(cmd, config, &out, &args);
                out
            })
            .collect();
        for f in files {
            let reference = std::fs::read(outs[0].join(f)).unwrap();
            for other in &outs[1..] {
                compared += 1;
                if std::fs::read(other.join(f)).unwrap() != reference {
                    failures.push(format!("{cmd}: {f} differs in {}", other.display()));
                }
            }
        }
    }
    verdict(
        10,
        "byte-identical CSVs across reruns and 8 vs 1 workers",
        failures,
        format!("{compared} file comparisons"),
    );
}
