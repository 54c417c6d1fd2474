use std::path::{Path, PathBuf};
use std::process::Command;

use levy_parametrix::mc_oracle::read_samples_file;
use levy_parametrix_cli::{EXIT_ASSUMPTION, EXIT_CONFIG, EXIT_DELTA_MISMATCH, EXIT_DIVERGENCE, EXIT_OK, EXIT_ORACLE_BAND};

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn levypx(config: &Path, out: &Path, args: &[&str], env: &[(&str, &str)]) -> Run {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_levypx"));
    for (k, _) in std::env::vars().filter(|(k, _)| k.starts_with("PARAMETRIX_")) {
        cmd.env_remove(k);
    }
    cmd.args(args).arg("--config").arg(config).arg("--out").arg(out).envs(env.iter().copied());
    let o = cmd.output().expect("binary runs");
    Run {
        code: o.status.code().expect("exit code"),
        stdout: String::from_utf8_lossy(&o.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&o.stderr).into_owned(),
    }
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn manifest(out: &Path, command: &str) -> serde_json::Value {
    let text = std::fs::read_to_string(out.join(format!("manifest-{command}.json"))).unwrap();
    serde_json::from_str(&text).unwrap()
}

/// Data rows of a CSV artifact, header excluded.
fn rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

const CAUCHY: &str = r#"
[noise]
alpha = 1.0

[horizon]
big_t = 1.0
x = 0.0
lattice = { start = -12.8, step = 0.05, count = 512 }
"#;

const CAUCHY_MC: &str = r#"
[mc]
n_steps = 1
n_paths = 1000000
seed = 11
bandwidth = { rule = "fixed", h = 0.05 }
compare = "density.csv"
window = [-5.0, 5.0]
"#;

const ACCEPTANCE: &str = r#"
[noise]
alpha = 1.5

[coefficients]
drift = { kind = "sinusoidal", a = 0.0, b = 0.2, c = 1.0, d = 1.5707963267948966 }
sigma = { kind = "sinusoidal", a = 1.0, b = 0.3, c = 1.0 }

[horizon]
big_t = 1.0
y = 0.5
lattice = { start = -6.3, step = 0.1, count = 128 }

[parametrix]
probe_points = 7
"#;

#[test]
fn validate_accepts_constant_coefficients() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", CAUCHY);
    let out = dir.path().join("out");
    let r = levypx(&cfg, &out, &["validate"], &[]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    let m = manifest(&out, "validate");
    assert!(m["checks"].as_array().unwrap().iter().all(|c| c["pass"] == true));
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn validate_reports_vanishing_sigma() {
    let dir = tempfile::tempdir().unwrap();
    let text = CAUCHY.replace("[horizon]", "[coefficients]\nsigma = { kind = \"sinusoidal\", a = 1.0, b = 1.0, c = 1.0 }\n\n[horizon]");
    let cfg = write_config(dir.path(), "c.toml", &text);
    let out = dir.path().join("out");
    let r = levypx(&cfg, &out, &["validate"], &[]);
    assert_eq!(r.code, EXIT_ASSUMPTION);
    assert!(r.stderr.contains("ellipticity") && r.stderr.contains("(t, x)"), "{}", r.stderr);
    assert!(!out.exists());
}

#[test]
fn validate_rejects_drift_below_alpha_one() {
    let dir = tempfile::tempdir().unwrap();
    let text = CAUCHY
        .replace("alpha = 1.0", "alpha = 0.8")
        .replace("[horizon]", "[coefficients]\ndrift = { kind = \"constant\", value = 0.1 }\n\n[horizon]");
    let cfg = write_config(dir.path(), "c.toml", &text);
    let r = levypx(&cfg, &dir.path().join("out"), &["validate"], &[]);
    assert_eq!(r.code, EXIT_ASSUMPTION);
    assert!(r.stderr.contains("drift must vanish"), "{}", r.stderr);
}

#[test]
fn config_problems_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let missing = levypx(&dir.path().join("nope.toml"), &out, &["density"], &[]);
    assert_eq!(missing.code, EXIT_CONFIG);
    let cfg = write_config(dir.path(), "c.toml", &CAUCHY.replace("count = 512", "count = 500"));
    assert_eq!(levypx(&cfg, &out, &["density"], &[]).code, EXIT_CONFIG);
    let cfg = write_config(dir.path(), "d.toml", CAUCHY);
    assert_eq!(levypx(&cfg, &out, &["stability"], &[]).code, EXIT_CONFIG);
    assert_eq!(levypx(&cfg, &out, &["oracle"], &[]).code, EXIT_CONFIG);
    let r = levypx(&cfg, &out, &["density"], &[("PARAMETRIX_PARAMETRIX__K_MAX", "0")]);
    assert_eq!(r.code, EXIT_CONFIG, "{}", r.stderr);
    assert!(!out.exists());
}

#[test]
fn density_reproduces_cauchy_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", CAUCHY);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(levypx(&cfg, &a, &["density"], &[]).code, EXIT_OK);
    assert_eq!(levypx(&cfg, &b, &["density", "--quiet"], &[]).code, EXIT_OK);
    for row in rows(&a.join("density.csv")) {
        let (y, v): (f64, f64) = (row[0].parse().unwrap(), row[1].parse().unwrap());
        let exact = 1.0 / (std::f64::consts::PI * (1.0 + y * y));
        assert!(((v - exact) / exact).abs() < 1e-6, "y = {y}: {v} vs {exact}");
    }
    let terms = rows(&a.join("terms.csv"));
    assert_eq!(terms[0][3], "");
    assert!(terms[1..].iter().all(|t| t[1] == "0"));
    let m = manifest(&a, "density");
    let listed: Vec<&str> = m["artifacts"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert_eq!(listed, ["density.csv", "terms.csv"]);
    for name in ["density.csv", "terms.csv", "manifest-density.json"] {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn csv_header_carries_hash_and_version() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", CAUCHY);
    let out = dir.path().join("out");
    let r = levypx(&cfg, &out, &["density", "--quiet"], &[]);
    assert!(r.stdout.is_empty());
    let hash = manifest(&out, "density")["config_hash"].as_str().unwrap().to_string();
    let text = std::fs::read_to_string(out.join("density.csv")).unwrap();
    let head: Vec<&str> = text.lines().take(4).collect();
    assert_eq!(head[0], format!("# levypx {}", env!("CARGO_PKG_VERSION")));
    assert_eq!(head[2], format!("# config_hash: {hash}"));
    assert_eq!(head[3], "y,value,error");
}

#[test]
fn long_horizon_with_rough_sigma_diverges() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"
[noise]
alpha = 1.5

[coefficients]
drift = { kind = "sinusoidal", a = 0.0, b = 2.0, c = 1.0 }
sigma = { kind = "sinusoidal", a = 1.0, b = 0.8, c = 3.0 }
kappa = 200.0

[horizon]
big_t = 50.0
y = 0.0
lattice = { start = -16.0, step = 0.25, count = 128 }
"#;
    let cfg = write_config(dir.path(), "c.toml", text);
    let out = dir.path().join("out");
    let r = levypx(&cfg, &out, &["density"], &[]);
    assert_eq!(r.code, EXIT_DIVERGENCE, "{}", r.stderr);
    assert!(!out.exists());
    let short = levypx(&cfg, &out, &["density", "--quiet"], &[("PARAMETRIX_HORIZON__BIG_T", "0.25")]);
    assert_eq!(short.code, EXIT_OK, "{}", short.stderr);
}

#[test]
fn identical_family_is_an_exact_match() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{ACCEPTANCE}\n[coefficients.perturbation]\nkind = \"identical\"\namplitude = 0.1\nn = [1, 2]\n");
    let cfg = write_config(dir.path(), "c.toml", &text);
    let out = dir.path().join("out");
    let r = levypx(&cfg, &out, &["stability"], &[]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    for row in rows(&out.join("stability.csv")) {
        assert_eq!(row[1], "0");
        assert!(row[2..5].iter().all(String::is_empty));
    }
    assert!(r.stdout.contains("exact match"));
}

#[test]
fn drift_family_has_bounded_ratios() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{ACCEPTANCE}\n[coefficients.perturbation]\nkind = \"drift\"\namplitude = 0.1\nn = [2, 4, 8]\n");
    let cfg = write_config(dir.path(), "c.toml", &text);
    let out = dir.path().join("out");
    let r = levypx(&cfg, &out, &["stability"], &[]);
    assert_eq!(r.code, EXIT_OK, "{}{}", r.stdout, r.stderr);
    let table = rows(&out.join("stability.csv"));
    assert_eq!(table.len(), 3);
    let deltas: Vec<f64> = table.iter().map(|r| r[1].parse().unwrap()).collect();
    assert!((deltas[0] - 0.05).abs() < 1e-12 && (deltas[2] - 0.0125).abs() < 1e-12);
    assert_eq!(manifest(&out, "stability")["constants"]["R_n"].as_array().unwrap().len(), 3);
}

#[test]
fn invisible_bump_exits_5() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!(
        "{}\n[coefficients.perturbation]\nkind = \"sigma_bump\"\ncenter = 0.25\nwidth = 0.2\namplitude = 0.5\nn = [1, 2]\ntest_range = [-10.0, 10.0]\n",
        ACCEPTANCE.replace("drift = { kind = \"sinusoidal\", a = 0.0, b = 0.2, c = 1.0, d = 1.5707963267948966 }\n", "")
    );
    let cfg = write_config(dir.path(), "c.toml", &text);
    let out = dir.path().join("out");
    let r = levypx(&cfg, &out, &["stability"], &[]);
    assert_eq!(r.code, EXIT_DELTA_MISMATCH, "{}", r.stderr);
    assert!(r.stderr.contains("Δ_n = 0"));
    assert!(!out.exists());
}

#[test]
fn oracle_agrees_with_the_closed_form_density() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", &format!("{CAUCHY}{CAUCHY_MC}"));
    let out = dir.path().to_path_buf();
    assert_eq!(levypx(&cfg, &out, &["density", "--quiet"], &[]).code, EXIT_OK);
    let r = levypx(&cfg, &out, &["oracle"], &[]);
    assert_eq!(r.code, EXIT_OK, "{}{}", r.stdout, r.stderr);
    let samples = read_samples_file(&out.join("samples.bin")).unwrap();
    assert_eq!(samples.len(), 1_000_000);
    let sidecar: toml::Table = std::fs::read_to_string(out.join("samples.toml")).unwrap().parse().unwrap();
    assert_eq!(sidecar["count"].as_integer(), Some(1_000_000));
    assert_eq!(sidecar["seed"].as_integer(), Some(11));
    let cmp = rows(&out.join("comparison.csv"));
    assert_eq!(cmp.len(), 201);
    assert!(cmp.iter().all(|r| r[5] == "1"));
    assert_eq!(rows(&out.join("kde.csv")).len(), 512);
    let m = manifest(&out, "oracle");
    let listed: Vec<&str> = m["artifacts"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert_eq!(listed, ["samples.bin", "samples.toml", "kde.csv", "comparison.csv"]);
}

#[test]
fn oracle_against_the_wrong_horizon_exits_6() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", &format!("{CAUCHY}{CAUCHY_MC}"));
    let out = dir.path().to_path_buf();
    let d = levypx(&cfg, &out, &["density", "--quiet"], &[("PARAMETRIX_HORIZON__BIG_T", "0.5")]);
    assert_eq!(d.code, EXIT_OK);
    let r = levypx(&cfg, &out, &["oracle"], &[]);
    assert_eq!(r.code, EXIT_ORACLE_BAND, "{}", r.stdout);
    assert!(r.stdout.contains("FAIL oracle_band"));
    assert!(rows(&out.join("comparison.csv")).iter().any(|r| r[5] == "0"));
}

#[test]
fn few_paths_pass_with_a_warning() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", &format!("{CAUCHY}{}", CAUCHY_MC.replace("n_paths = 1000000", "n_paths = 100")));
    let out = dir.path().join("out");
    let r = levypx(&cfg, &out, &["oracle"], &[]);
    assert_eq!(r.code, EXIT_OK);
    assert!(r.stderr.contains("warning: only 100 paths"), "{}", r.stderr);
    assert!(!out.join("kde.csv").exists());
    assert_eq!(read_samples_file(&out.join("samples.bin")).unwrap().len(), 100);
}

#[test]
fn seed_flag_and_environment_change_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", &format!("{CAUCHY}{}", CAUCHY_MC.replace("n_paths = 1000000", "n_paths = 100")));
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(levypx(&cfg, &a, &["oracle", "--quiet"], &[]).code, EXIT_OK);
    assert_eq!(levypx(&cfg, &b, &["oracle", "--quiet", "--seed", "7"], &[("PARAMETRIX_MC__N_STEPS", "2")]).code, EXIT_OK);
    let sidecar: toml::Table = std::fs::read_to_string(b.join("samples.toml")).unwrap().parse().unwrap();
    assert_eq!(sidecar["seed"].as_integer(), Some(7));
    assert_eq!(sidecar["n_steps"].as_integer(), Some(2));
    let (ma, mb) = (manifest(&a, "oracle"), manifest(&b, "oracle"));
    assert_ne!(ma["config_hash"], mb["config_hash"]);
    assert_eq!(mb["overrides"], serde_json::json!(["mc.n_steps", "mc.seed"]));
    assert_ne!(std::fs::read(a.join("samples.bin")).unwrap(), std::fs::read(b.join("samples.bin")).unwrap());
}

#[test]
fn bounds_hold_for_the_acceptance_model() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{ACCEPTANCE}\n[coefficients.perturbation]\nkind = \"combined\"\namplitude = 0.1\nn = [2, 4, 8]\n");
    let cfg = write_config(dir.path(), "c.toml", &text);
    let out = dir.path().join("out");
    let r = levypx(&cfg, &out, &["bounds"], &[]);
    assert_eq!(r.code, EXIT_OK, "{}{}", r.stdout, r.stderr);
    let m = manifest(&out, "bounds");
    let names: Vec<&str> = m["checks"].as_array().unwrap().iter().map(|c| c["name"].as_str().unwrap()).collect();
    assert_eq!(
        names,
        ["frozen_symmetry", "frozen_envelope", "kernel_bound", "chain", "series_consistency", "frozen_perturbation"]
    );
    assert_eq!(m["constants"]["C_H"]["values"].as_array().unwrap().len(), 3);
}

#[test]
fn bounds_check_scaling_for_pure_stable_noise() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", &CAUCHY.replace("alpha = 1.0", "alpha = 1.5"));
    let out = dir.path().join("out");
    let r = levypx(&cfg, &out, &["bounds"], &[]);
    assert_eq!(r.code, EXIT_OK, "{}{}", r.stdout, r.stderr);
    assert!(r.stdout.contains("PASS frozen_scaling"));
    assert!(r.stdout.contains("PASS kernel_bound: kernel vanishes"));
}
