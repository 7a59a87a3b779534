use std::path::Path;
use std::process::{Command, Output};

fn lvseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lvseg")).args(args).output().expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn synth(dir: &Path) {
    let o = lvseg(&["synth", "--out", path(dir), "--count", "10", "--size", "32", "--seed", "7"]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn synth_train_eval_report_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data);

    let ckpt = tmp.path().join("model.ckpt");
    let o = lvseg(&[
        "train", "--data", path(&data), "--variant", "gbu", "--epochs", "2", "--batch", "4", "--seed", "1",
        "--depth", "1", "--base-channels", "4", "--groups", "2", "--out", path(&ckpt), "--sequential",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.lines().any(|l| l.starts_with("config ") && l.contains("\"resolved_train_config\"")));
    assert!(out.contains("\"epochs\":2"));
    assert!(ckpt.exists());

    let csv = tmp.path().join("test.csv");
    let o = lvseg(&["eval", "--ckpt", path(&ckpt), "--data", path(&data), "--split", "test", "--report", path(&csv)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("case,slice,dice,sensitivity,apd_mm,empty_pred\n"));
    assert!(text.contains("# dice_mean="));
    // 10 phantoms split 4:0:1 leave 2 test slices.
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 3);

    let o = lvseg(&["report", "--csv", path(&csv), "--csv", path(&csv)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = stdout(&o);
    assert_eq!(table.lines().filter(|l| l.starts_with("gbu with augmentation")).count(), 2);
    assert!(table.contains("Dice mean"));
}

#[test]
fn invalid_variant_is_a_one_line_usage_error() {
    let o = lvseg(&["train", "--data", "d", "--out", "x", "--variant", "xyz"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error kind=usage message="));
    assert!(err.contains("xyz"));
}

#[test]
fn unknown_flag_rejected() {
    let o = lvseg(&["synth", "--out", "d", "--colour", "red"]);
    assert!(!o.status.success());
    assert!(stderr(&o).starts_with("error kind=usage"));
}

#[test]
fn missing_checkpoint_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data);
    let o = lvseg(&[
        "eval", "--ckpt", path(&tmp.path().join("none.ckpt")), "--data", path(&data), "--report",
        path(&tmp.path().join("r.csv")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error kind=io message="), "{}", stderr(&o));
}

#[test]
fn corrupt_checkpoint_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data);
    let bad = tmp.path().join("bad.ckpt");
    std::fs::write(&bad, b"not a checkpoint at all").unwrap();
    let o = lvseg(&["eval", "--ckpt", path(&bad), "--data", path(&data), "--report", path(&tmp.path().join("r.csv"))]);
    assert!(stderr(&o).starts_with("error kind=checkpoint_magic"), "{}", stderr(&o));
}

#[test]
fn augment_preview_writes_only_pgm_pairs_under_out() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data);
    let before: Vec<_> = std::fs::read_dir(&data).unwrap().map(|e| e.unwrap().path()).collect();
    let out = tmp.path().join("preview");
    let o = lvseg(&["augment-preview", "--data", path(&data), "--out", path(&out), "--seed", "3", "--count", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));

    let mut files: Vec<_> = std::fs::read_dir(&out).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    assert_eq!(files.len(), 8);
    for f in &files {
        let bytes = std::fs::read(f).unwrap();
        assert!(bytes.starts_with(b"P5\n32 32\n255\n"));
        assert_eq!(bytes.len(), "P5\n32 32\n255\n".len() + 32 * 32);
    }
    let after: Vec<_> = std::fs::read_dir(&data).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(before.len(), after.len());
    let mut top: Vec<_> = std::fs::read_dir(tmp.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    top.sort();
    assert_eq!(top, ["data", "preview"]);
}

#[test]
fn preview_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        assert!(lvseg(&["augment-preview", "--data", path(&data), "--out", path(out), "--seed", "5"]).status.success());
    }
    for entry in std::fs::read_dir(&a).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(std::fs::read(a.join(&name)).unwrap(), std::fs::read(b.join(&name)).unwrap());
    }
}

#[test]
fn gradcheck_passes_on_this_build() {
    let o = lvseg(&["gradcheck"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("model gbu depth=1"));
    assert!(!out.contains("FAIL"));
}

#[test]
fn gradcheck_with_absurd_step_fails_nonzero() {
    let o = lvseg(&["gradcheck", "--step", "0.5"]);
    assert!(!o.status.success());
    assert!(stderr(&o).starts_with("error kind=gradcheck_failed"));
}
