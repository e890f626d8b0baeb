use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pme_selfsim::pde::Manifest;
use pme_selfsim_cli::RunConfig;

const BIN: &str = env!("CARGO_BIN_EXE_pme-selfsim");

fn params(alpha: f64) -> String {
    format!("[params]\nN = 3\nm = 2.0\ngamma = 0.5\nalpha = {alpha}\nb = 1.0\nc = 1.0\n")
}

/// Fresh scratch directory per test.
fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("pme-cli-{name}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(cmd: &str, dir: &Path, config: &str, extra: &[&str]) -> Output {
    let path = dir.join("run.toml");
    fs::write(&path, config).unwrap();
    Command::new(BIN)
        .arg(cmd)
        .arg("--config")
        .arg(&path)
        .arg("--out")
        .arg(dir.join("out"))
        .args(extra)
        .output()
        .unwrap()
}

fn manifest(dir: &Path) -> Manifest {
    Manifest::parse(&fs::read_to_string(dir.join("out/manifest.txt")).unwrap()).unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn csv_files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "csv") {
                out.push(p);
            }
        }
    }
    out.sort();
    out
}

#[test]
fn profile_smoke() {
    let dir = scratch("profile");
    let o = run("profile", &dir, &params(1.0), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let text = fs::read_to_string(dir.join("out/profile.csv")).unwrap();
    let mut rows = text.lines().filter(|l| !l.starts_with('#'));
    let header: Vec<&str> = rows.next().unwrap().split(',').collect();
    let g_col = header.iter().position(|h| *h == "G").unwrap();
    let g: Vec<f64> = rows.map(|l| l.split(',').nth(g_col).unwrap().parse().unwrap()).collect();
    assert!(g.len() > 100);
    assert!(g.windows(2).all(|w| w[1] <= w[0]));
    assert!(text.contains("# residual_10p="));
    let m = manifest(&dir);
    assert_eq!(m.get("profile.dichotomy"), Some("Transition"));
    assert_eq!(m.get("status"), Some("PASS"));
}

#[test]
fn out_of_range_alpha_is_a_config_error() {
    let dir = scratch("alpha");
    let o = run("profile", &dir, &params(2.6), &[]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("alpha must satisfy alpha < N − gamma"), "{err}");
    assert!(!dir.join("out").exists());
}

#[test]
fn unknown_keys_are_rejected() {
    let dir = scratch("unknown");
    let o = run("profile", &dir, &(params(1.0) + "[grid]\nspacing = 2\n"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("spacing"));
}

#[test]
fn incompatible_experiment_kind_is_a_config_error() {
    let dir = scratch("kind");
    let o = run("barrier", &dir, &(params(1.0) + "[experiment]\nkind = \"convergence\"\n"), &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn critical_alpha_is_everywhere_decreasing() {
    let dir = scratch("critical");
    let o = run("profile", &dir, &params(0.5), &[]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(manifest(&dir).get("profile.dichotomy"), Some("EverywhereDecreasing"));
    let csv = fs::read_to_string(dir.join("out/profile.csv")).unwrap();
    assert!(csv.contains("# dichotomy=EverywhereDecreasing"));
}

#[test]
fn echoed_config_reparses_identically() {
    let dir = scratch("echo");
    let text = params(1.0) + "[grid]\ncells = 32\n[time]\noutputs = 4\n[experiment]\nbarrier_t_end = 1.0\n";
    let o = run("barrier", &dir, &text, &["--seed", "42", "--workers", "2"]);
    assert!(o.status.code().is_some_and(|c| c <= 1));
    let echoed = RunConfig::parse(&fs::read_to_string(dir.join("out/config.toml")).unwrap()).unwrap();
    let mut expected = RunConfig::parse(&text).unwrap();
    expected.output.dir = dir.join("out");
    expected.experiment.seed = 42;
    expected.experiment.workers = 2;
    assert_eq!(echoed, expected);
    assert_eq!(RunConfig::parse(&echoed.to_toml()).unwrap(), echoed);
}

#[test]
fn shipped_configs_round_trip() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for e in fs::read_dir(root).unwrap() {
        let p = e.unwrap().path();
        let cfg = RunConfig::parse(&fs::read_to_string(&p).unwrap()).unwrap();
        assert_eq!(RunConfig::parse(&cfg.to_toml()).unwrap(), cfg, "{}", p.display());
        seen += 1;
    }
    assert!(seen >= 8);
}

#[test]
fn same_seed_gives_identical_outputs() {
    let text = params(1.0)
        + "[weight]\nkind = \"bounded\"\n[datum]\nkind = \"perturbed\"\namplitude = 4.0\nlo = 1.0\nhi = 2.0\n"
        + "[experiment]\nmonte_carlo_samples = 20000\n";
    let dirs: Vec<PathBuf> = ["a", "b", "c"].iter().map(|s| scratch(&format!("seed-{s}"))).collect();
    let seeds = ["5", "5", "6"];
    for (d, s) in dirs.iter().zip(seeds) {
        let o = run("norms", d, &text, &["--seed", s]);
        assert!(o.status.code().is_some_and(|c| c <= 1), "{}", stdout(&o));
    }
    let files = csv_files(&dirs[0].join("out"));
    assert!(!files.is_empty());
    for f in &files {
        let rel = f.strip_prefix(dirs[0].join("out")).unwrap();
        assert_eq!(fs::read(f).unwrap(), fs::read(dirs[1].join("out").join(rel)).unwrap());
    }
    let mc = |d: &Path| manifest(d).get("zero_norm.monte_carlo").unwrap().to_string();
    assert_eq!(mc(&dirs[0]), mc(&dirs[1]));
    assert_ne!(mc(&dirs[0]), mc(&dirs[2]));
}

#[test]
fn exact_datum_converges_at_the_floor() {
    let dir = scratch("exact");
    let text = params(1.0)
        + "[datum]\nkind = \"self-similar\"\nt0 = 1.0\n[grid]\ncells = 256\n"
        + "[time]\nstart = 1.0\nt0 = 2.0\nhorizon = 16.0\n[experiment]\nouter = \"self-similar\"\n";
    let o = run("converge", &dir, &text, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let out = stdout(&o);
    assert!(out.contains("PASS lp1_at_floor") && out.contains("PASS uniform_at_floor"), "{out}");
}

#[test]
fn perturbed_datum_gives_decreasing_curves() {
    let dir = scratch("perturbed");
    let text = fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/converge.toml")).unwrap();
    let o = run("converge", &dir, &text, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let out = stdout(&o);
    for name in ["lp1", "lp2", "uniform"] {
        assert!(out.contains(&format!("PASS {name}_decreasing")), "{out}");
        assert!(out.contains(&format!("PASS {name}_ratio")), "{out}");
    }
    let curve = fs::read_to_string(dir.join("out/curves/lp1.csv")).unwrap();
    assert!(curve.starts_with("t,error,norm_kind\n"));
    assert_eq!(curve.lines().count(), 9);
    assert!(dir.join("out/trajectory/u_0000.csv").exists());
    assert!(!dir.join("out/FAILED").exists());
}

#[test]
fn barrier_from_below_passes() {
    let dir = scratch("barrier");
    let text = params(1.0) + "[grid]\ncells = 64\n[experiment]\nbarrier_value = 1.0\nbarrier_initial = 0.0\n";
    let o = run("barrier", &dir, &text, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("PASS monotone"));
    let curve = fs::read_to_string(dir.join("out/curves/barrier.csv")).unwrap();
    assert!(curve.lines().nth(1).unwrap().ends_with(",Linf"));
}

#[test]
fn failed_assertion_exits_one_with_marker() {
    let dir = scratch("assert");
    let text = params(1.0) + "[grid]\ncells = 32\n[experiment]\nbarrier_t_end = 0.01\n";
    let o = run("barrier", &dir, &text, &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL final_error"));
    assert!(dir.join("out/FAILED").exists());
    assert_eq!(manifest(&dir).get("status"), Some("FAIL"));
}

#[test]
fn numeric_failure_exits_three_and_keeps_partial_output() {
    let dir = scratch("numeric");
    let text = "[params]\nN = 3\nm = 8.0\ngamma = 0.5\nalpha = 1.0\nb = 1.0\nc = 1.0\n\
                [datum]\nkind = \"compact\"\namplitude = 1e8\nlo = 0.5\nhi = 0.6\n\
                [grid]\nr_max = 10.0\ncells = 64\n\
                [time]\nt0 = 1000.0\nhorizon = 1000.0\n\
                [experiment]\ndt = 100.0\nouter = \"no-flux\"\n";
    let o = run("simulate", &dir, text, &[]);
    assert_eq!(o.status.code(), Some(3));
    assert!(dir.join("out/FAILED").exists());
    assert!(dir.join("out/config.toml").exists());
    assert_eq!(manifest(&dir).get("status"), Some("ERROR"));
}
