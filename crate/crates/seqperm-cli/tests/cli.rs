//! End-to-end tests for the `seqperm` binary: exit codes, determinism,
//! file formats, and the statistical behaviour of each subcommand on
//! deterministic planted datasets.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn seqperm() -> Command {
    Command::new(env!("CARGO_BIN_EXE_seqperm"))
}

fn run(cmd: &mut Command) -> (i32, String, String) {
    let Output {
        status,
        stdout,
        stderr,
    } = cmd.output().expect("spawning seqperm");
    (
        status.code().expect("signal-free exit"),
        String::from_utf8(stdout).expect("utf-8 stdout"),
        String::from_utf8(stderr).expect("utf-8 stderr"),
    )
}

// -- deterministic planted data ----------------------------------------------
//
// Labels are 0 for the first half of the rows and 1 for the second half.
// "up"/"down" columns are perfectly separated between the groups, so their
// Mann-Whitney statistic is at the extreme of the permutation distribution;
// "null" columns scramble the row index with a fixed multiplier, giving a
// central statistic far from significance. No RNG is involved, so every
// assertion below is about the engine's seeded stream, not the data.

const N_SAMPLES: usize = 40;

/// Deterministic column generator: row index and group label to value.
type ColumnGen = fn(usize, u8) -> f64;

fn up(i: usize, label: u8) -> f64 {
    if label == 1 {
        1000.0 + i as f64
    } else {
        i as f64
    }
}

fn down(i: usize, label: u8) -> f64 {
    -up(i, label)
}

fn null_a(i: usize, _label: u8) -> f64 {
    ((i * 37) % 83) as f64
}

fn null_b(i: usize, _label: u8) -> f64 {
    ((i * 53) % 97) as f64
}

fn null_c(i: usize, _label: u8) -> f64 {
    ((i * 29) % 71) as f64
}

fn zero(_i: usize, _label: u8) -> f64 {
    0.0
}

fn write_matrix(path: &Path, cols: &[(&str, ColumnGen)]) {
    let mut text = String::from("group");
    for (name, _) in cols {
        write!(text, "\t{name}").unwrap();
    }
    text.push('\n');
    for i in 0..N_SAMPLES {
        let label = u8::from(i >= N_SAMPLES / 2);
        write!(text, "{label}").unwrap();
        for (_, gen) in cols {
            write!(text, "\t{}", gen(i, label)).unwrap();
        }
        text.push('\n');
    }
    fs::write(path, text).expect("writing test matrix");
}

/// Parses a results table into (name, rejected) pairs.
fn rejected_map(table: &str) -> Vec<(String, bool)> {
    table
        .lines()
        .skip(1)
        .map(|line| {
            let fields: Vec<&str> = line.split('\t').collect();
            (fields[0].to_owned(), fields[3] == "true")
        })
        .collect()
}

// -- test subcommand ----------------------------------------------------------

#[test]
fn test_run_is_deterministic_and_writes_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let matrix = dir.path().join("m.tsv");
    write_matrix(
        &matrix,
        &[
            ("alpha_up", up),
            ("beta_up", up),
            ("gamma_up", up),
            ("null_a", null_a),
            ("null_b", null_b),
            ("null_c", null_c),
        ],
    );

    let args = |out: &str, manifest: &str| {
        let mut cmd = seqperm();
        cmd.args(["test", "-i"])
            .arg(&matrix)
            .args(["--label-col", "group", "--seed", "7", "-o"])
            .arg(dir.path().join(out))
            .arg("--manifest")
            .arg(dir.path().join(manifest));
        cmd
    };
    let (code, _, stderr) = run(&mut args("r1.tsv", "m1.json"));
    assert_eq!(code, 0, "stderr: {stderr}");
    let (code, _, _) = run(&mut args("r2.tsv", "m2.json"));
    assert_eq!(code, 0);

    let r1 = fs::read_to_string(dir.path().join("r1.tsv")).unwrap();
    let r2 = fs::read_to_string(dir.path().join("r2.tsv")).unwrap();
    assert_eq!(r1, r2, "same seed must give byte-identical tables");

    for (name, rejected) in rejected_map(&r1) {
        assert_eq!(
            rejected,
            name.ends_with("_up"),
            "unexpected decision for {name}"
        );
    }

    let m1: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("m1.json")).unwrap()).unwrap();
    let mut m2: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("m2.json")).unwrap()).unwrap();
    assert_eq!(m1["flavor"], "AvbcAdaptive");
    assert_eq!(m1["statistic"], "mann-whitney");
    assert_eq!(m1["seed"], 7);
    assert_eq!(m1["two_sided"], false);
    assert_eq!(m1["hypotheses"].as_array().unwrap().len(), 6);
    assert!(m1["library_versions"]["seqperm"].is_string());
    // Identical runs agree on everything except wall-clock duration.
    let mut m1 = m1;
    m1["duration_seconds"] = 0.into();
    m2["duration_seconds"] = 0.into();
    assert_eq!(m1, m2);
}

#[test]
fn test_defaults_manifest_path_next_to_output() {
    let dir = tempfile::tempdir().unwrap();
    let matrix = dir.path().join("m.tsv");
    write_matrix(&matrix, &[("alpha_up", up), ("null_a", null_a)]);

    let (code, _, _) = run(seqperm()
        .args(["test", "-i"])
        .arg(&matrix)
        .args(["--label-col", "group", "-o"])
        .arg(dir.path().join("out.tsv")));
    assert_eq!(code, 0);
    assert!(dir.path().join("out.manifest.json").exists());

    // Without --output the table goes to stdout and the manifest to ./manifest.json.
    let (code, stdout, _) = run(seqperm()
        .current_dir(dir.path())
        .args(["test", "-i"])
        .arg(&matrix)
        .args(["--label-col", "group"]));
    assert_eq!(code, 0);
    assert!(stdout.starts_with("name\ttau\tp_value\trejected\trejection_time\n"));
    assert!(dir.path().join("manifest.json").exists());
}

#[test]
fn two_sided_flag_detects_downshifted_genes() {
    let dir = tempfile::tempdir().unwrap();
    let matrix = dir.path().join("m.tsv");
    write_matrix(
        &matrix,
        &[
            ("alpha_dn", down),
            ("beta_dn", down),
            ("gamma_dn", down),
            ("null_a", null_a),
            ("null_b", null_b),
            ("null_c", null_c),
        ],
    );

    let one_sided = run(seqperm()
        .args(["test", "-i"])
        .arg(&matrix)
        .args(["--label-col", "group", "--seed", "3", "-o"])
        .arg(dir.path().join("one.tsv")));
    assert_eq!(one_sided.0, 0, "stderr: {}", one_sided.2);
    let one = fs::read_to_string(dir.path().join("one.tsv")).unwrap();
    assert!(
        rejected_map(&one).iter().all(|(_, rejected)| !rejected),
        "an upper-tail test must miss genes shifted downward"
    );

    let two_sided = run(seqperm()
        .args(["test", "-i"])
        .arg(&matrix)
        .args(["--label-col", "group", "--seed", "3", "--two-sided", "-o"])
        .arg(dir.path().join("two.tsv")));
    assert_eq!(two_sided.0, 0, "stderr: {}", two_sided.2);
    let two = fs::read_to_string(dir.path().join("two.tsv")).unwrap();
    for (name, rejected) in rejected_map(&two) {
        assert_eq!(
            rejected,
            name.ends_with("_dn"),
            "unexpected decision for {name}"
        );
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("two.manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["two_sided"], true);
}

#[test]
fn filter_zeros_warns_and_records_removed_columns() {
    let dir = tempfile::tempdir().unwrap();
    let matrix = dir.path().join("m.tsv");
    write_matrix(
        &matrix,
        &[("alpha_up", up), ("deadgene", zero), ("null_a", null_a)],
    );

    let (code, _, stderr) = run(seqperm()
        .args(["test", "-i"])
        .arg(&matrix)
        .args(["--label-col", "group", "--filter-zeros", "-o"])
        .arg(dir.path().join("out.tsv")));
    assert_eq!(code, 0);
    assert!(stderr.contains("deadgene"), "stderr: {stderr}");

    let table = fs::read_to_string(dir.path().join("out.tsv")).unwrap();
    assert!(!table.contains("deadgene"));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out.manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["filtered_genes"], serde_json::json!(["deadgene"]));
    assert_eq!(manifest["hypotheses"].as_array().unwrap().len(), 2);
}

// -- exit codes ----------------------------------------------------------------

#[test]
fn missing_input_file_is_a_data_error() {
    let (code, _, stderr) =
        run(seqperm().args(["test", "-i", "no_such_file.tsv", "--label-col", "group"]));
    assert_eq!(code, 1);
    assert!(stderr.contains("no_such_file.tsv"), "stderr: {stderr}");
}

#[test]
fn missing_label_source_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let matrix = dir.path().join("m.tsv");
    write_matrix(&matrix, &[("alpha_up", up)]);
    let (code, _, stderr) = run(seqperm().args(["test", "-i"]).arg(&matrix));
    assert_eq!(code, 2);
    assert!(stderr.contains("--label-col") && stderr.contains("--labels"));
}

#[test]
fn bad_cell_is_reported_with_row_and_column() {
    let dir = tempfile::tempdir().unwrap();
    let matrix = dir.path().join("bad.tsv");
    fs::write(&matrix, "group\tg1\n0\t1.0\n1\toops\n").unwrap();
    let (code, _, stderr) = run(seqperm()
        .args(["test", "-i"])
        .arg(&matrix)
        .args(["--label-col", "group"]));
    assert_eq!(code, 1);
    assert!(
        stderr.contains("row 2") && stderr.contains("'g1'") && stderr.contains("oops"),
        "stderr: {stderr}"
    );
}

// -- bound ----------------------------------------------------------------------

#[test]
fn bound_prints_schedule_and_worst_case_anchor() {
    let (code, stdout, _) =
        run(seqperm().args(["bound", "--M", "1000", "--h", "10", "--alpha", "0.1"]));
    assert_eq!(code, 0);
    // B_1 = 10*1000/0.1 - 1 and B_M = 10/0.1 - 1.
    assert!(stdout.contains("1\t99999"), "stdout: {stdout}");
    assert!(stdout.contains("1000\t99"), "stdout: {stdout}");
    // Worst-case average permutation count per hypothesis rounds to 789.
    assert!(stdout.contains("789.27"), "stdout: {stdout}");
}

// -- simulate --------------------------------------------------------------------

#[test]
fn simulate_csv_is_identical_across_worker_counts() {
    let args = [
        "simulate",
        "--m",
        "40",
        "--reps",
        "15",
        "--cap",
        "1500",
        "--seed",
        "11",
        "--methods",
        "avbc,binmix",
        "--emit-csv",
    ];
    let (code, serial, _) = run(seqperm().args(args).env("SEQPERM_THREADS", "1"));
    assert_eq!(code, 0);
    let (code, parallel, _) = run(seqperm().args(args).env("SEQPERM_THREADS", "3"));
    assert_eq!(code, 0);
    assert!(serial.starts_with("method,metric,value\n"));
    assert!(serial.contains("avbc(h=10),power,"));
    assert_eq!(
        serial, parallel,
        "results must not depend on the worker count"
    );
}

// -- maxt -------------------------------------------------------------------------

#[test]
fn maxt_rejects_only_the_separated_genes() {
    let dir = tempfile::tempdir().unwrap();
    let matrix = dir.path().join("m.tsv");
    write_matrix(
        &matrix,
        &[
            ("alpha_up", up),
            ("beta_up", up),
            ("gamma_up", up),
            ("null_a", null_a),
            ("null_b", null_b),
            ("null_c", null_c),
        ],
    );

    let (code, _, stderr) = run(seqperm()
        .args(["maxt", "-i"])
        .arg(&matrix)
        .args([
            "--label-col",
            "group",
            "--alpha",
            "0.1",
            "--seed",
            "5",
            "-o",
        ])
        .arg(dir.path().join("mx.tsv")));
    assert_eq!(code, 0, "stderr: {stderr}");

    let table = fs::read_to_string(dir.path().join("mx.tsv")).unwrap();
    assert!(table.starts_with("name\tstatistic\trejected\tsettled_round\n"));
    for line in table.lines().skip(1) {
        let fields: Vec<&str> = line.split('\t').collect();
        let expect = fields[0].ends_with("_up");
        assert_eq!(
            fields[2] == "true",
            expect,
            "unexpected decision for {}",
            fields[0]
        );
        assert_ne!(fields[3], "NA", "every hypothesis should settle: {line}");
    }
}
