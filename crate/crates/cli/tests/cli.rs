use std::path::Path;
use std::process::{Command, Output};

fn sedq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sedq")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

fn csv_column(text: &str, col: usize) -> Vec<f64> {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').nth(col).unwrap().parse().unwrap())
        .collect()
}

#[test]
fn solve_writes_a_normalized_distribution() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("p.csv");
    let o = sedq(&["solve", "--s", "3", "--rho", "0.75", "--q", "0.4", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = read(&out);
    assert_eq!(text.lines().next(), Some("m,n,r,q1,q2,probability"));
    let total: f64 = csv_column(&text, 5).iter().sum();
    assert!((total - 1.0).abs() < 1e-12);
    let err = stderr(&o);
    for key in ["N = 1", "M = 3", "K = 40", "states = ", "truncation mass", "wall time"] {
        assert!(err.contains(key), "{err}");
    }
}

#[test]
fn unstable_load_is_invalid_input() {
    let o = sedq(&["solve", "--s", "2", "--rho", "1.0", "--q", "0.5"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("rho"));
    assert!(o.stdout.is_empty());
}

#[test]
fn jsq_output_is_symmetric() {
    let o = sedq(&["solve", "--s", "1", "--rho", "0.5", "--q", "0.5", "--format", "json"]);
    assert_eq!(code(&o), 0);
    let recs: Vec<serde_json::Value> = serde_json::from_slice(&o.stdout).unwrap();
    let mut map = std::collections::HashMap::new();
    for r in &recs {
        map.insert((r["q1"].as_u64().unwrap(), r["q2"].as_u64().unwrap()), r["probability"].as_f64().unwrap());
    }
    for (&(a, b), &v) in &map {
        if let Some(&w) = map.get(&(b, a)) {
            assert!((v - w).abs() <= 1e-9 * v.max(w) + 1e-300, "({a},{b})");
        }
    }
}

#[test]
fn output_is_byte_stable() {
    let args = ["solve", "--s", "2", "--rho", "0.6", "--q", "0.3"];
    assert_eq!(sedq(&args).stdout, sedq(&args).stdout);
}

#[test]
fn config_file_drives_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    let printed = sedq(&["solve", "--s", "2", "--rho", "0.5", "--q", "0.4", "--eps", "1e-8", "--print-config"]);
    assert_eq!(code(&printed), 0);
    std::fs::write(&cfg, &printed.stdout).unwrap();
    let again = sedq(&["solve", "--config", cfg.to_str().unwrap(), "--print-config"]);
    assert_eq!(printed.stdout, again.stdout);
    let from_file = sedq(&["solve", "--config", cfg.to_str().unwrap()]);
    let from_flags = sedq(&["solve", "--s", "2", "--rho", "0.5", "--q", "0.4", "--eps", "1e-8"]);
    assert_eq!(from_file.stdout, from_flags.stdout);
    std::fs::write(&cfg, "s = 2\nrho = 0.5\nspeed = 3\n").unwrap();
    assert_eq!(code(&sedq(&["solve", "--config", cfg.to_str().unwrap()])), 2);
}

#[test]
fn tree_dump_has_a_record_per_term() {
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("tree.txt");
    let o = sedq(&["solve", "--s", "2", "--rho", "0.5", "--q", "0.4", "--dump-tree", dump.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let text = read(&dump);
    assert!(text.lines().count() > 3);
}

#[test]
fn heatmap_header_and_grid() {
    let o = sedq(&["heatmap", "--s", "3", "--rho", "0.9", "--q", "0.4", "--q1max", "30", "--q2max", "60"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("q1 + 1 = (q2 + 1) / s"));
    assert!(text.contains("q1 = q2 / s"));
    let probs = csv_column(&text, 2);
    assert_eq!(probs.len(), 30 * 60);
    let mass: f64 = probs.iter().sum();
    assert!(mass > 0.99 && mass <= 1.0 + 1e-12);
}

#[test]
fn heatmap_rejects_bad_grids() {
    let o = sedq(&["heatmap", "--s", "3", "--rho", "0.9", "--q", "0.4", "--q1max", "0", "--q2max", "0"]);
    assert_eq!(code(&o), 2);
    let o = sedq(&["heatmap", "--s", "3", "--rho", "0.9", "--q", "0.4", "--k", "10", "--q1max", "30", "--q2max", "60"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("truncation"));
}

#[test]
fn nindex_table() {
    let o = sedq(&["nindex", "--q", "0.4", "--s-list", "2,5", "--rho-list", "0.1,0.3,0.5,0.7,0.9"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().next(), Some("s,rho,q,N"));
    let ns = csv_column(&text, 3);
    assert_eq!(ns, vec![1.0; 10]);
    let o = sedq(&["nindex", "--q", "0.4", "--s-list", "2", "--rho-list", "0.5"]);
    assert_eq!(String::from_utf8(o.stdout).unwrap(), "s,rho,q,N\n2,0.5,0.4,1\n");
    let o = sedq(&["nindex", "--q", "0.4", "--s-list", "2", "--rho-list", "0.5,1.2"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn validate_passes_and_fails_on_tolerance() {
    let o = sedq(&["validate", "--s", "2", "--rho", "0.5", "--q", "0.4", "--box", "40x80"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("max_rel_err = "));
    let o = sedq(&["validate", "--s", "2", "--rho", "0.5", "--q", "0.4", "--eps", "0.5", "--m", "2", "--k", "3", "--tol", "1e-12"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("at state ("));
}

#[test]
fn validate_surfaces_small_boxes() {
    let o = sedq(&["validate", "--s", "1", "--rho", "0.5", "--q", "0.4", "--box", "6x6"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("box too small"));
    let o = sedq(&["validate", "--s", "2", "--rho", "0.5", "--q", "0.4", "--box", "6x6"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn validate_simulation_is_deterministic() {
    let args = ["validate", "--s", "2", "--rho", "0.5", "--q", "0.4", "--simulate", "--events", "1e6", "--seed", "42"];
    let a = sedq(&args);
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, sedq(&args).stdout);
    assert!(String::from_utf8(a.stdout).unwrap().contains("sim_seed = 42"));
}

fn lmap(eps: &str) -> Vec<(i64, i64, usize)> {
    let o = sedq(&["lmap", "--s", "4", "--rho", "0.8", "--q", "0.4", "--eps", eps, "--radius", "12"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    String::from_utf8(o.stdout)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].parse().unwrap(), f[1].parse().unwrap(), f[2].parse().unwrap())
        })
        .collect()
}

#[test]
fn lmap_is_monotone_in_eps_and_peaks_near_origin() {
    let tight = lmap("1e-4");
    let loose = lmap("1e-2");
    assert_eq!(tight.len(), 13 * 13);
    for (a, b) in loose.iter().zip(&tight) {
        assert_eq!((a.0, a.1), (b.0, b.1));
        assert!(a.2 <= b.2, "{a:?} vs {b:?}");
    }
    let max = tight.iter().map(|c| c.2).max().unwrap();
    let near = tight.iter().filter(|c| c.0 + c.1.abs() <= 2).map(|c| c.2).max().unwrap();
    assert_eq!(near, max);
}

#[test]
fn exit_code_for_unknown_flag() {
    assert_eq!(code(&sedq(&["solve", "--bogus"])), 2);
    assert_eq!(code(&sedq(&["solve", "--s", "2", "--q", "0.4"])), 2);
}
