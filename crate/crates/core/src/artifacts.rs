//! On-disk artifacts shared by the command line and the tests: encoder and
//! head checkpoints, loss traces, split files and embedding tables.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::data_io::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::distill::{DistillState, EpochRecord};
use crate::error::{Error, Result};
use crate::probe::{LinearHead, ProbeEpoch, SplitAssignment, PARTITIONS};
use crate::tensor::Tensor;
use crate::vit::ModelParams;

pub const TEACHER_PREFIX: &str = "teacher.";
pub const STUDENT_PREFIX: &str = "student.";

/// `<path>` with `suffix` appended to its file name (`enc.ckpt` → `enc.ckpt.loss.csv`).
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    path.with_file_name(name)
}

pub fn encoder_checkpoint(state: &DistillState, config: &RunConfig) -> Checkpoint {
    let mut tensors = Vec::with_capacity(2 * state.teacher.len());
    for (prefix, params) in [(TEACHER_PREFIX, &state.teacher), (STUDENT_PREFIX, &state.student)] {
        for (name, t) in params.iter() {
            tensors.push((format!("{prefix}{name}"), t.clone().with_requires_grad(false)));
        }
    }
    let mut metadata = config.metadata();
    metadata.push(("epoch".into(), state.epoch.to_string()));
    metadata.push(("kind".into(), "encoder".into()));
    Checkpoint { tensors, metadata }
}

pub fn save_encoder(path: &Path, state: &DistillState, config: &RunConfig) -> Result<()> {
    let ck = encoder_checkpoint(state, config);
    save_checkpoint(path, &ck.tensors, &ck.metadata)
}

fn embedded_config(ck: &Checkpoint) -> Result<RunConfig> {
    let text = ck
        .meta("config")
        .ok_or_else(|| Error::Checkpoint("checkpoint has no embedded config".into()))?;
    RunConfig::parse(text).map_err(|e| Error::Checkpoint(format!("embedded config: {e}")))
}

/// Embedded config and the parameters stored under `prefix`.
pub fn params_from_checkpoint(ck: &Checkpoint, prefix: &str) -> Result<(RunConfig, ModelParams)> {
    let config = embedded_config(ck)?;
    let tensors: BTreeMap<String, Tensor> = ck
        .with_prefix(prefix)
        .map(|(n, t)| (n.to_string(), t.clone()))
        .collect();
    let params = ModelParams::from_tensors(config.model.clone(), tensors)
        .map_err(|e| Error::Checkpoint(format!("{prefix}* tensors: {e}")))?;
    Ok((config, params))
}

/// Config and frozen teacher weights of an encoder checkpoint.
pub fn load_teacher(path: &Path) -> Result<(RunConfig, ModelParams)> {
    params_from_checkpoint(&load_checkpoint(path)?, TEACHER_PREFIX)
}

pub fn save_head(path: &Path, head: &LinearHead, config: &RunConfig, split: &SplitAssignment) -> Result<()> {
    let tensors = vec![
        (LinearHead::WEIGHT.to_string(), head.weight.clone()),
        (LinearHead::BIAS.to_string(), head.bias.clone()),
    ];
    let mut metadata = config.metadata();
    metadata.push(("kind".into(), "probe".into()));
    metadata.push(("num_classes".into(), head.num_classes().to_string()));
    metadata.push(("split_ratios".into(), format_ratios(split.ratios)));
    metadata.push(("split_seed".into(), split.seed.to_string()));
    save_checkpoint(path, &tensors, &metadata)
}

pub fn load_head(path: &Path) -> Result<LinearHead> {
    let ck = load_checkpoint(path)?;
    let get = |n: &str| {
        ck.tensor(n)
            .cloned()
            .ok_or_else(|| Error::Checkpoint(format!("{}: missing tensor {n}", path.display())))
    };
    let head = LinearHead {
        weight: get(LinearHead::WEIGHT)?,
        bias: get(LinearHead::BIAS)?,
    };
    if head.weight.rank() != 2 || head.weight.shape()[1] != head.bias.numel() {
        return Err(Error::Checkpoint(format!(
            "{}: head weight {:?} and bias {:?} disagree",
            path.display(),
            head.weight.shape(),
            head.bias.shape()
        )));
    }
    Ok(head)
}

pub fn format_ratios(r: [f64; 3]) -> String {
    format!("{},{},{}", r[0], r[1], r[2])
}

pub fn parse_ratios(text: &str) -> Result<[f64; 3]> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    let bad = || Error::Config(format!("split must be three comma-separated fractions, got {text:?}"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let mut r = [0.0; 3];
    for (slot, p) in r.iter_mut().zip(&parts) {
        *slot = p.parse().map_err(|_| bad())?;
    }
    crate::probe::validate_ratios(r)?;
    Ok(r)
}

pub fn write_loss_csv(path: &Path, trace: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "mean_loss", "teacher_entropy"])?;
    for r in trace {
        w.write_record([r.epoch.to_string(), format!("{:?}", r.mean_loss), format!("{:?}", r.teacher_entropy)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_probe_trace(path: &Path, trace: &[ProbeEpoch]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "train_loss", "val_accuracy"])?;
    for r in trace {
        w.write_record([r.epoch.to_string(), format!("{:?}", r.train_loss), format!("{:?}", r.val_accuracy)])?;
    }
    w.flush()?;
    Ok(())
}

/// Split file: header `filename,label,partition`, one row per dataset item in
/// dataset order, partition one of `train`, `val`, `test`.
pub fn write_split(path: &Path, split: &SplitAssignment, filenames: &[String], labels: &[usize]) -> Result<()> {
    let assignment = split.assignment(filenames.len());
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["filename", "label", "partition"])?;
    for (i, name) in filenames.iter().enumerate() {
        let part = assignment[i]
            .map(|p| PARTITIONS[p])
            .ok_or_else(|| Error::Consistency(format!("{name} is in no partition")))?;
        w.write_record([name.as_str(), &labels[i].to_string(), part])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a split file and checks it names exactly the dataset's files with
/// the same labels.
pub fn read_split(path: &Path, filenames: &[String], labels: &[usize]) -> Result<SplitAssignment> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != ["filename", "label", "partition"] {
        return Err(Error::Consistency(format!(
            "{}: header {header:?} is not filename,label,partition",
            path.display()
        )));
    }
    let index: BTreeMap<&str, usize> = filenames.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let mut parts: [Vec<usize>; 3] = Default::default();
    let mut seen = vec![false; filenames.len()];
    for row in r.records() {
        let row = row?;
        let (name, label, part) = (&row[0], &row[1], &row[2]);
        let i = *index
            .get(name)
            .ok_or_else(|| Error::Consistency(format!("split file names {name:?}, which is not in the dataset")))?;
        if std::mem::replace(&mut seen[i], true) {
            return Err(Error::Consistency(format!("split file lists {name:?} twice")));
        }
        if label.parse::<usize>().ok() != Some(labels[i]) {
            return Err(Error::Consistency(format!(
                "split file label {label:?} for {name:?} differs from the dataset label {}",
                labels[i]
            )));
        }
        let p = PARTITIONS
            .iter()
            .position(|&q| q == part)
            .ok_or_else(|| Error::Consistency(format!("unknown partition {part:?} for {name:?}")))?;
        parts[p].push(i);
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(Error::Consistency(format!(
            "split file does not cover {:?}",
            filenames[i]
        )));
    }
    for p in &mut parts {
        p.sort_unstable();
    }
    let [train, val, test] = parts;
    Ok(SplitAssignment {
        train,
        val,
        test,
        ratios: [f64::NAN; 3],
        seed: 0,
    })
}

/// Header `filename,label,f0..f{d-1}`; the label cell is empty for unlabeled data.
pub fn write_embeddings(path: &Path, filenames: &[String], labels: Option<&[usize]>, features: &Tensor) -> Result<()> {
    let d = features.shape()[1];
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["filename".to_string(), "label".to_string()];
    header.extend((0..d).map(|j| format!("f{j}")));
    w.write_record(&header)?;
    for (i, name) in filenames.iter().enumerate() {
        let mut row = vec![name.clone(), labels.map(|l| l[i].to_string()).unwrap_or_default()];
        row.extend(features.data()[i * d..(i + 1) * d].iter().map(|v| format!("{v:?}")));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
