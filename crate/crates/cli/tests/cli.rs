use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mgqe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mgqe"))
        .args(args)
        .env_remove("MGQE_DATA_DIR")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        stdout(out),
        String::from_utf8_lossy(&out.stderr)
    );
}

const SMALL: [&str; 16] = [
    "--data",
    "synthetic",
    "--set",
    "synth_users=150",
    "--set",
    "synth_items=100",
    "--d",
    "8",
    "--D",
    "4",
    "--K",
    "16",
    "--epochs",
    "2",
    "--set",
    "r=4",
];

fn train_small(out: &Path, scheme: &str) -> Output {
    let mut args = vec!["train", "--scheme", scheme, "--out", out.to_str().unwrap()];
    args.extend(SMALL);
    mgqe(&args)
}

#[test]
fn size_report_for_one_table() {
    let out = mgqe(&["size-report", "--scheme", "dpq", "--n", "1000", "--d", "64", "--D", "8", "--K", "256"]);
    assert_ok(&out);
    // 1000 * 8 codes of 8 bits, plus a 256 x 64 float codebook.
    assert!(stdout(&out).contains("embedding bits: 588288"), "{}", stdout(&out));
}

#[test]
fn size_report_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("size.csv");
    let out = mgqe(&[
        "size-report",
        "--scheme",
        "mgqe",
        "--users",
        "6040",
        "--items",
        "3416",
        "--csv",
        csv.to_str().unwrap(),
    ]);
    assert_ok(&out);
    assert!(fs::read_to_string(csv).unwrap().lines().count() > 2);
}

#[test]
fn train_writes_artifacts_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_ok(&train_small(&a, "mgqe"));
    assert_ok(&train_small(&b, "mgqe"));
    for file in ["config.txt", "epochs.csv", "model.mgqe", "metrics.csv", "size.csv"] {
        assert!(a.join(file).is_file(), "missing {file}");
    }
    assert_eq!(fs::read_to_string(a.join("epochs.csv")).unwrap().lines().count(), 3);
    let model = a.join("model.mgqe");
    let out = mgqe(&["import-check", model.to_str().unwrap(), "--against", b.join("model.mgqe").to_str().unwrap()]);
    assert_ok(&out);
    assert!(stdout(&out).contains("round trip ok"));
}

#[test]
fn checkpoints_are_written_on_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let mut args = vec!["train", "--scheme", "dpq", "--out", out_dir.to_str().unwrap()];
    args.extend(SMALL);
    args.extend(["--set", "checkpoint_every=1"]);
    assert_ok(&mgqe(&args));
    for epoch in 1..=2 {
        let path = out_dir.join(format!("checkpoints/epoch_{epoch:03}.mgqe"));
        assert_ok(&mgqe(&["import-check", path.to_str().unwrap()]));
    }
}

#[test]
fn export_evaluate_and_similarity_on_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    assert_ok(&train_small(&run, "mgqe"));
    let model = run.join("model.mgqe");
    let copy = dir.path().join("copy.mgqe");
    assert_ok(&mgqe(&["export", model.to_str().unwrap(), "--output", copy.to_str().unwrap()]));
    assert_eq!(fs::read(&model).unwrap(), fs::read(&copy).unwrap());

    let mut args = vec!["evaluate", copy.to_str().unwrap()];
    args.extend(SMALL);
    let out = mgqe(&args);
    assert_ok(&out);
    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(stdout(&out), metrics);

    let mut args = vec!["code-similarity", copy.to_str().unwrap(), "--sample", "20"];
    args.extend(SMALL);
    let out = mgqe(&args);
    assert_ok(&out);
    assert_eq!(stdout(&out).lines().count(), 5);
}

#[test]
fn generated_movielens_files_load_like_the_real_ones() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("ml");
    assert_ok(&mgqe(&[
        "synth-data",
        "--out",
        data.to_str().unwrap(),
        "--set",
        "synth_users=150",
        "--set",
        "synth_items=100",
    ]));
    assert!(data.join("ratings.dat").is_file() && data.join("movies.dat").is_file());
    let out = mgqe(&[
        "prepare-data",
        "--data-dir",
        data.to_str().unwrap(),
        "--out",
        dir.path().join("prep").to_str().unwrap(),
    ]);
    assert_ok(&out);
    assert!(stdout(&out).contains("users 150"), "{}", stdout(&out));
}

#[test]
fn repro_table_writes_one_row_per_configuration() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("table2.csv");
    let mut args = vec!["repro-table", "table2", "--repeats", "2", "--output", csv.to_str().unwrap()];
    args.extend(SMALL);
    args.extend(["--set", "epochs=1"]);
    assert_ok(&mgqe(&args));
    let text = fs::read_to_string(csv).unwrap();
    assert_eq!(text.lines().count(), 11);
    assert!(text.starts_with("table,model,scheme,repeats,hr_at_k,ndcg_at_k,rmse,size_pct,packed_size_pct"));
}

#[test]
fn exit_codes_distinguish_failures() {
    assert_eq!(mgqe(&["--help"]).status.code(), Some(0));
    assert_eq!(mgqe(&["train", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(mgqe(&["train", "--set", "epochs=abc"]).status.code(), Some(1));

    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing");
    let out = mgqe(&["train", "--data-dir", missing.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    let junk = dir.path().join("junk.mgqe");
    fs::write(&junk, b"not a model").unwrap();
    assert_eq!(mgqe(&["import-check", junk.to_str().unwrap()]).status.code(), Some(2));
}
