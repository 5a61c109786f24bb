use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use knockoff_sim::cli::verify_manifest;

const BIN: &str = env!("CARGO_BIN_EXE_knockoff-sim");
const CC_MODEL: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/models/case_control_hmm.toml");

fn run(args: &[&str], cwd: &Path) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(cwd)
        .env("SOURCE_DATE_EPOCH", "1700000000")
        .env_remove("KNOCKOFF_SIM_OUT")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect()
}

#[test]
fn validate_names_the_bad_row() {
    let dir = tempfile::tempdir().unwrap();
    let text = "type = \"markov_chain\"\np = 3\ninitial = [0.5, 0.5]\ntransition = [[0.9, 0.1],\n              [0.5, 0.48]]\n";
    fs::write(dir.path().join("m.toml"), text).unwrap();
    let o = run(&["validate", "m.toml"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let msg = stderr(&o);
    assert!(msg.contains("m.toml:5") && msg.contains("row 1 sums to 0.98"), "{msg}");
}

#[test]
fn validate_accepts_committed_models() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["validate", CC_MODEL], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}

#[test]
fn unknown_flag_prints_usage_and_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["filter", "--frobnicate"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"));
}

#[test]
fn singular_second_order_without_shrinkage_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    // column x2 duplicates x0
    let mut csv = String::from("x0,x1,x2\n");
    for i in 0..40 {
        let a = (i as f64 * 0.37).sin();
        let b = (i as f64 * 1.3).cos();
        csv.push_str(&format!("{a},{b},{a}\n"));
    }
    fs::write(dir.path().join("d.csv"), csv).unwrap();
    let o = run(
        &["knockoff", "--data", "d.csv", "--provenance", "gaussian_second_order", "--gamma", "0", "--out", "k"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--gamma"), "{}", stderr(&o));
    let o = run(
        &["knockoff", "--data", "d.csv", "--provenance", "gaussian_second_order", "--gamma", "0.1", "--out", "k"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}

#[test]
fn runtime_failures_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["validate", "missing.toml"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

/// Run the whole sample → knockoff → stats → filter chain into `root`.
fn pipeline(root: &Path) -> Vec<PathBuf> {
    let steps: [(&str, Vec<&str>); 4] = [
        ("s", vec!["sample", "--model", CC_MODEL, "--n", "200", "--signals", "5", "--seed", "3"]),
        ("k", vec!["knockoff", "--data", "s/dataset.csv", "--model", CC_MODEL, "--seed", "4"]),
        ("t", vec!["stats", "--data", "k/augmented.csv", "--seed", "5", "--folds", "5"]),
        ("f", vec!["filter", "--stats", "t/stats.csv", "--q", "0.2"]),
    ];
    let mut dirs = Vec::new();
    for (out, mut args) in steps {
        args.extend(["--out", out]);
        let o = run(&args, root);
        assert_eq!(o.status.code(), Some(0), "{args:?}: {}", stderr(&o));
        verify_manifest(&root.join(out)).unwrap();
        dirs.push(PathBuf::from(out));
    }
    dirs
}

#[test]
fn every_subcommand_is_byte_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    // same relative layout, so recorded input paths agree
    let dirs = pipeline(a.path());
    pipeline(b.path());
    for d in dirs {
        let fa = files(&a.path().join(&d));
        assert!(fa.len() >= 2);
        assert_eq!(fa, files(&b.path().join(&d)), "{}", d.display());
    }
}

#[test]
fn adversarial_experiment_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &'static str| {
        vec!["experiment", "adversarial", "--replicates", "2", "--seed", "7", "--out", out]
    };
    for out in ["one", "two"] {
        let o = run(&args(out), dir.path());
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let one = files(&dir.path().join("one"));
    let two = files(&dir.path().join("two"));
    for f in ["report.csv", "summary.csv", "figure_data_fig4_fdr_power.csv", "manifest.json"] {
        assert!(one.contains_key(f), "missing {f}");
    }
    assert_eq!(one, two);
    let m = verify_manifest(&dir.path().join("one")).unwrap();
    assert_eq!(m.seeds, vec![7, 8]);
    assert_eq!(m.config["replicates"], 2);
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    for (out, threads) in [("a", "1"), ("b", "3")] {
        let o = run(
            &["experiment", "case_control", "--replicates", "3", "--threads", threads, "--out", out],
            dir.path(),
        );
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    assert_eq!(files(&dir.path().join("a")), files(&dir.path().join("b")));
}

#[test]
fn experiment_config_typos_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.toml"), "replicates = 2\nampltude = 0.3\n").unwrap();
    let o = run(&["experiment", "adversarial", "--config", "c.toml"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("c.toml:2"), "{}", stderr(&o));
}

#[test]
fn output_root_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(BIN)
        .args(["experiment", "permutation_identities", "--replicates", "5"])
        .current_dir(dir.path())
        .env("KNOCKOFF_SIM_OUT", "results")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    verify_manifest(&dir.path().join("results/permutation_identities")).unwrap();
}
