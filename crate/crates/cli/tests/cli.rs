use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ssvt_core::artifacts;
use ssvt_core::data_io::load_checkpoint;

const MICRO: &str = "model.image_size = 32\nmodel.embed_dim = 32\nmodel.depth = 2\nmodel.heads = 2\nmodel.proj_dim = 64\ndistill.batch_size = 4\nprobe.epochs = 20\n";

fn ssvt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ssvt"))
        .args(args)
        .env("SSVT_THREADS", "1")
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    _tmp: tempfile::TempDir,
    dir: PathBuf,
    data: PathBuf,
    conf: PathBuf,
}

fn fixture() -> Fixture {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().to_path_buf();
    let data = dir.join("data");
    let out = ssvt(&["synth", "--out", s(&data), "--classes", "2", "--per-class", "6", "--size", "32", "--seed", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let conf = dir.join("micro.conf");
    std::fs::write(&conf, MICRO).unwrap();
    Fixture { _tmp: tmp, dir, data, conf }
}

impl Fixture {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn pretrain(&self, name: &str, epochs: &str) -> PathBuf {
        let out = self.path(name);
        let o = ssvt(&["pretrain", "--config", s(&self.conf), "--data", s(&self.data), "--out", s(&out), "--epochs", epochs]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        out
    }

    fn probe(&self, encoder: &Path, name: &str) -> PathBuf {
        let out = self.path(name);
        let o = ssvt(&["probe", "--encoder", s(encoder), "--data", s(&self.data), "--out", s(&out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        out
    }
}

#[test]
fn missing_data_is_a_data_error() {
    let f = fixture();
    let o = ssvt(&["pretrain", "--config", s(&f.conf), "--out", s(&f.path("x.ckpt"))]);
    assert_eq!(o.status.code(), Some(2));
    let o = ssvt(&["pretrain", "--config", s(&f.conf), "--data", s(&f.path("nowhere")), "--out", s(&f.path("x.ckpt"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_configuration_exits_one() {
    let f = fixture();
    let bad = f.path("bad.conf");
    std::fs::write(&bad, "model.depth = zero\n").unwrap();
    let o = ssvt(&["pretrain", "--config", s(&bad), "--data", s(&f.data), "--out", s(&f.path("x.ckpt"))]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(ssvt(&["pretrain", "--bogus"]).status.code(), Some(1));

    let enc = f.pretrain("enc.ckpt", "0");
    let o = ssvt(&["probe", "--encoder", s(&enc), "--data", s(&f.data), "--split", "0.5,0.5,0.5", "--out", s(&f.path("h"))]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn zero_epochs_keeps_teacher_equal_to_student() {
    let f = fixture();
    let enc = f.pretrain("enc.ckpt", "0");
    let ck = load_checkpoint(&enc).unwrap();
    let (_, teacher) = artifacts::params_from_checkpoint(&ck, artifacts::TEACHER_PREFIX).unwrap();
    let (cfg, student) = artifacts::params_from_checkpoint(&ck, artifacts::STUDENT_PREFIX).unwrap();
    assert!(teacher.bits_eq(&student));
    assert_eq!(cfg.model.image_size, 32);
    assert_eq!(ck.meta("epoch"), Some("0"));
    let loss = std::fs::read_to_string(artifacts::sibling(&enc, ".loss.csv")).unwrap();
    assert_eq!(loss.trim(), "epoch,mean_loss,teacher_entropy");
}

#[test]
fn probe_eval_and_export_round_trip() {
    let f = fixture();
    let enc = f.pretrain("enc.ckpt", "1");
    let head = f.probe(&enc, "head.ckpt");
    let split = artifacts::sibling(&head, ".split.csv");
    let first = std::fs::read(&split).unwrap();
    let again = f.probe(&enc, "head2.ckpt");
    assert_eq!(first, std::fs::read(artifacts::sibling(&again, ".split.csv")).unwrap());
    assert_eq!(std::fs::read(&head).unwrap(), std::fs::read(&again).unwrap());

    let report = f.path("report.json");
    let o = ssvt(&[
        "eval", "--encoder", s(&enc), "--head", s(&head), "--data", s(&f.data), "--split-file", s(&split), "--report", s(&report),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    for key in ["accuracy", "auc_per_class", "auc_mean", "class_counts", "split"] {
        assert!(json.get(key).is_some(), "missing {key}");
    }
    assert_eq!(json["split"], "test");
    assert_eq!(json["auc_per_class"].as_array().unwrap().len(), 2);

    let emb = f.path("emb.csv");
    let o = ssvt(&["export-embeddings", "--encoder", s(&enc), "--data", s(&f.data), "--out", s(&emb)]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(&emb).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 13);
    assert!(lines.iter().all(|l| l.split(',').count() == 32 + 2));
    assert!(lines[0].starts_with("filename,label,f0,"));
}

#[test]
fn mismatched_split_file_is_rejected() {
    let f = fixture();
    let enc = f.pretrain("enc.ckpt", "0");
    let head = f.probe(&enc, "head.ckpt");
    let split = artifacts::sibling(&head, ".split.csv");
    let text = std::fs::read_to_string(&split).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines.pop();
    let truncated = f.path("short.csv");
    std::fs::write(&truncated, lines.join("\n")).unwrap();
    let o = ssvt(&[
        "eval", "--encoder", s(&enc), "--head", s(&head), "--data", s(&f.data), "--split-file", s(&truncated), "--report",
        s(&f.path("r.json")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("does not cover"));
}

#[test]
fn unlabeled_data_cannot_be_probed() {
    let f = fixture();
    let enc = f.pretrain("enc.ckpt", "0");
    std::fs::remove_file(f.data.join("labels.csv")).unwrap();
    let o = ssvt(&["probe", "--encoder", s(&enc), "--data", s(&f.data), "--out", s(&f.path("h"))]);
    assert_eq!(o.status.code(), Some(2));
    let emb = f.path("emb.csv");
    let o = ssvt(&["export-embeddings", "--encoder", s(&enc), "--data", s(&f.data), "--out", s(&emb)]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(&emb).unwrap();
    assert!(text.lines().skip(1).all(|l| l.split(',').nth(1) == Some("")));
}

#[test]
fn invalid_thread_count_is_a_config_error() {
    let o = Command::new(env!("CARGO_BIN_EXE_ssvt"))
        .args(["gradcheck"])
        .env("SSVT_THREADS", "none")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}
