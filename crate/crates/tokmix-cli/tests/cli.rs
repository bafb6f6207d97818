//! End-to-end checks of the binary: exit codes, file outputs, idempotence.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_tokmix")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

struct Fixture {
    #[allow(dead_code)]
    dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn new() -> Fixture {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        Fixture { dir, root }
    }

    fn write(&self, name: &str, content: &str) -> PathBuf {
        let path = self.root.join(name);
        fs::write(&path, content).unwrap();
        path
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
}

/// Three categories with disjoint alphabets, enough structure for a toy
/// attack to pin the mixture.
fn toy_corpus(f: &Fixture) -> PathBuf {
    let mut a = String::new();
    let mut b = String::new();
    let mut c = String::new();
    for i in 0..400 {
        a.push_str(if i % 3 == 0 { "abab aab ab\n" } else { "ab abab bba\n" });
        b.push_str(if i % 4 == 0 { "cdcd ccd cd\n" } else { "cd dcd cdcd\n" });
        c.push_str(if i % 5 == 0 { "efef fee ef\n" } else { "ef efef eff\n" });
    }
    f.write("cat_a.txt", &a);
    f.write("cat_b.txt", &b);
    f.write("cat_c.txt", &c);
    f.write(
        "cats.tsv",
        "0\talpha\tcat_a.txt\n1\tbeta\tcat_b.txt\n2\tgamma\tcat_c.txt\n",
    )
}

#[test]
fn train_writes_a_plain_merge_file() {
    let f = Fixture::new();
    let manifest = toy_corpus(&f);
    let out = f.path("merges.txt");
    let res = run(&[
        "train",
        "--manifest",
        manifest.to_str().unwrap(),
        "--num-merges",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 0, "stderr: {}", String::from_utf8_lossy(&res.stderr));
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 3, "expected 3 rules, got:\n{text}");
}

#[test]
fn train_zero_merges_writes_empty_file() {
    let f = Fixture::new();
    let manifest = toy_corpus(&f);
    let out = f.path("empty.txt");
    let res = run(&[
        "train",
        "--manifest",
        manifest.to_str().unwrap(),
        "--num-merges",
        "0",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 0);
    assert_eq!(fs::read_to_string(&out).unwrap(), "");
}

#[test]
fn train_missing_manifest_is_config_error() {
    let f = Fixture::new();
    let res = run(&[
        "train",
        "--manifest",
        f.path("absent.tsv").to_str().unwrap(),
        "--num-merges",
        "3",
        "--out",
        f.path("x.txt").to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 2);
}

fn train_toy(f: &Fixture, manifest: &Path, merges_out: &Path, n: usize) {
    let res = run(&[
        "train",
        "--manifest",
        manifest.to_str().unwrap(),
        "--num-merges",
        &n.to_string(),
        "--out",
        merges_out.to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 0, "stderr: {}", String::from_utf8_lossy(&res.stderr));
}

#[test]
fn attack_recovers_toy_mixture_and_is_idempotent() {
    let f = Fixture::new();
    let manifest = toy_corpus(&f);
    let merges = f.path("merges.txt");
    train_toy(&f, &manifest, &merges, 30);

    let out = f.path("estimate.csv");
    let args = [
        "attack",
        "--merges",
        merges.to_str().unwrap(),
        "--manifest",
        manifest.to_str().unwrap(),
        "--pretokenize",
        "discard",
        "--out",
        out.to_str().unwrap(),
    ];
    let res = run(&args);
    assert_eq!(code(&res), 0, "stderr: {}", String::from_utf8_lossy(&res.stderr));
    let text = fs::read_to_string(&out).unwrap();
    let mut est = Vec::new();
    for line in text.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        est.push(cols[2].parse::<f64>().unwrap());
    }
    // Training data is an equal concatenation of the three categories and
    // estimation uses the very same files: near-exact thirds.
    for a in &est {
        assert!((a - 1.0 / 3.0).abs() < 0.02, "estimate off: {est:?}");
    }
    let diag = fs::read_to_string(f.path("estimate.csv.diag")).unwrap();
    assert!(diag.contains("converged = true"), "{diag}");

    // Same inputs, same outputs.
    let first = text.clone();
    let res2 = run(&args);
    assert_eq!(code(&res2), 0);
    assert_eq!(fs::read_to_string(&out).unwrap(), first);
}

#[test]
fn attack_with_cache_reuses_timelines() {
    let f = Fixture::new();
    let manifest = toy_corpus(&f);
    let merges = f.path("merges.txt");
    train_toy(&f, &manifest, &merges, 20);
    let cache = f.path("cache");
    let out = f.path("estimate.csv");
    let args = [
        "attack",
        "--merges",
        merges.to_str().unwrap(),
        "--manifest",
        manifest.to_str().unwrap(),
        "--pretokenize",
        "discard",
        "--cache",
        cache.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    assert_eq!(code(&run(&args)), 0);
    let entries: Vec<_> = fs::read_dir(&cache).unwrap().collect();
    assert_eq!(entries.len(), 3);
    let first = fs::read_to_string(&out).unwrap();
    assert_eq!(code(&run(&args)), 0);
    assert_eq!(fs::read_to_string(&out).unwrap(), first);
}

#[test]
fn attack_timelines_dir_mode_works() {
    let f = Fixture::new();
    let manifest = toy_corpus(&f);
    let merges = f.path("merges.txt");
    train_toy(&f, &manifest, &merges, 20);
    let cache = f.path("cache");
    let out1 = f.path("est1.csv");
    assert_eq!(
        code(&run(&[
            "attack",
            "--merges",
            merges.to_str().unwrap(),
            "--manifest",
            manifest.to_str().unwrap(),
            "--pretokenize",
            "discard",
            "--cache",
            cache.to_str().unwrap(),
            "--out",
            out1.to_str().unwrap(),
        ])),
        0
    );
    let out2 = f.path("est2.csv");
    let res = run(&[
        "attack",
        "--merges",
        merges.to_str().unwrap(),
        "--timelines",
        cache.to_str().unwrap(),
        "--out",
        out2.to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 0, "stderr: {}", String::from_utf8_lossy(&res.stderr));
    let a: Vec<String> = fs::read_to_string(&out1)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap().to_string())
        .collect();
    let b: Vec<String> = fs::read_to_string(&out2)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap().to_string())
        .collect();
    assert_eq!(a, b);
}

#[test]
fn attack_horizon_larger_than_list_is_config_error() {
    let f = Fixture::new();
    let manifest = toy_corpus(&f);
    let merges = f.path("merges.txt");
    train_toy(&f, &manifest, &merges, 10);
    let res = run(&[
        "attack",
        "--merges",
        merges.to_str().unwrap(),
        "--manifest",
        manifest.to_str().unwrap(),
        "--T",
        "10000",
        "--out",
        f.path("x.csv").to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 2);
}

#[test]
fn attack_offset_runs_on_suffix() {
    let f = Fixture::new();
    let manifest = toy_corpus(&f);
    let merges = f.path("merges.txt");
    train_toy(&f, &manifest, &merges, 30);
    let trained = fs::read_to_string(&merges).unwrap().lines().count();
    assert!(trained > 10, "toy corpus produced only {trained} merges");
    let out = f.path("suffix.csv");
    let res = run(&[
        "attack",
        "--merges",
        merges.to_str().unwrap(),
        "--manifest",
        manifest.to_str().unwrap(),
        "--pretokenize",
        "discard",
        "--offset",
        "10",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 0, "stderr: {}", String::from_utf8_lossy(&res.stderr));
    let diag = fs::read_to_string(f.path("suffix.csv.diag")).unwrap();
    assert!(diag.contains("offset = 10"), "{diag}");
    assert!(diag.contains(&format!("T = {}", trained - 10)), "{diag}");
}

#[test]
fn inspect_displays_space_as_underscore() {
    let f = Fixture::new();
    // A tiny hf-merges file whose first rule is the space-t merge.
    let merges = f.write("hf.txt", "#version: 0.2\nĠ t\nh e\n");
    let res = run(&[
        "inspect",
        "--merges",
        merges.to_str().unwrap(),
        "--top",
        "50",
    ]);
    assert_eq!(code(&res), 0);
    let stdout = String::from_utf8_lossy(&res.stdout);
    let first_rule = stdout
        .lines()
        .find(|l| l.trim_start().starts_with('0'))
        .expect("rule line");
    assert!(first_rule.contains("_ t"), "{stdout}");

    // K = 0 prints the header only.
    let res = run(&["inspect", "--merges", merges.to_str().unwrap(), "--top", "0"]);
    let stdout = String::from_utf8_lossy(&res.stdout);
    assert!(!stdout.lines().any(|l| l.trim_start().starts_with('0')));
}

#[test]
fn experiment_runs_and_writes_csvs() {
    let f = Fixture::new();
    let config = f.write(
        "exp.cfg",
        "mode = controlled\n\
         categories = synthetic-disjoint\n\
         pool = 3\n\
         n = 3\n\
         trials = 2\n\
         train_bytes = 60KB\n\
         estimate_bytes = 25KB\n\
         source_bytes = 120KB\n\
         vocab_words = 300\n\
         num_merges = 120\n\
         T = 120\n\
         methods = attack,random\n\
         seed = 5\n",
    );
    let out_dir = f.path("report");
    let res = run(&[
        "experiment",
        "--config",
        config.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 0, "stderr: {}", String::from_utf8_lossy(&res.stderr));
    let rows = fs::read_to_string(out_dir.join("rows.csv")).unwrap();
    assert!(rows.starts_with("trial,method,category,true_weight,est_weight\n"));
    assert!(rows.lines().count() > 1);
    let summary = fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    assert!(summary.starts_with("method,mean_log10_mse,std_log10_mse\n"));
    assert!(out_dir.join("trials.csv").exists());
}

#[test]
fn experiment_empty_trials_writes_empty_csvs() {
    let f = Fixture::new();
    let config = f.write(
        "exp.cfg",
        "mode = controlled\npool = 3\nn = 3\ntrials = 0\nsource_bytes = 50KB\nvocab_words = 200\n",
    );
    let out_dir = f.path("report");
    let res = run(&[
        "experiment",
        "--config",
        config.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 0);
    let rows = fs::read_to_string(out_dir.join("rows.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1); // header only
}

#[test]
fn experiment_malformed_config_is_config_error_with_line() {
    let f = Fixture::new();
    let config = f.write("exp.cfg", "mode = controlled\nwat\n");
    let res = run(&[
        "experiment",
        "--config",
        config.to_str().unwrap(),
        "--out-dir",
        f.path("r").to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 2);
    let stderr = String::from_utf8_lossy(&res.stderr);
    assert!(stderr.contains("line 2"), "{stderr}");
}

#[test]
fn unknown_flags_are_rejected() {
    let res = run(&["train", "--bogus"]);
    assert_eq!(code(&res), 2);
}
