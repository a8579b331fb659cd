//! Directory datasets: `images/*.ppm|*.pgm` plus an optional `labels.csv`
//! with header `filename,label`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::data_io::pnm;
use crate::error::{Error, Result};
use crate::par;
use crate::tensor::Tensor;

pub const IMAGES_DIR: &str = "images";
pub const LABELS_FILE: &str = "labels.csv";

#[derive(Clone, Debug)]
pub struct DatasetEntry {
    /// File name inside `images/`.
    pub filename: String,
    /// `[3 × H × W]` in `[0, 1]`.
    pub image: Tensor,
    pub label: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    /// Sorted by filename.
    pub entries: Vec<DatasetEntry>,
    /// Present iff `labels.csv` was found.
    pub num_classes: Option<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_labeled(&self) -> bool {
        self.num_classes.is_some()
    }

    pub fn images(&self) -> Vec<Tensor> {
        self.entries.iter().map(|e| e.image.clone()).collect()
    }

    pub fn filenames(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.filename.clone()).collect()
    }

    /// All labels, or an input error for an unlabeled dataset.
    pub fn labels(&self) -> Result<Vec<usize>> {
        self.entries
            .iter()
            .map(|e| {
                e.label
                    .ok_or_else(|| Error::Input(format!("{} has no label", e.filename)))
            })
            .collect()
    }
}

fn is_image(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("ppm" | "pgm" | "pnm")
    )
}

/// Lists `images/` in lexicographic filename order.
pub fn list_images(root: &Path) -> Result<Vec<String>> {
    let dir = root.join(IMAGES_DIR);
    let mut names = Vec::new();
    for entry in fs::read_dir(&dir).map_err(|e| Error::Input(format!("{}: {e}", dir.display())))? {
        let path = entry?.path();
        if path.is_file() && is_image(&path) {
            if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
                names.push(name.to_string());
            }
        }
    }
    names.sort();
    Ok(names)
}

fn read_labels(path: &Path, known: &[String]) -> Result<BTreeMap<String, i64>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.len() != 2 || &headers[0] != "filename" || &headers[1] != "label" {
        return Err(Error::Labels(format!(
            "expected header \"filename,label\", found {:?}",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut labels = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        let file = record[0].trim().to_string();
        let label: i64 = record[1]
            .trim()
            .parse()
            .map_err(|_| Error::Labels(format!("non-integer label {:?} for {file:?}", &record[1])))?;
        if known.binary_search(&file).is_err() {
            return Err(Error::MissingImage(file));
        }
        if labels.insert(file.clone(), label).is_some() {
            return Err(Error::Labels(format!("{file:?} listed twice")));
        }
    }
    Ok(labels)
}

/// Loads every image under `root/images` and, if present, `root/labels.csv`.
///
/// With labels, the class count is the largest label plus one unless
/// `num_classes` is given, and every image must be labeled.
pub fn load_dataset_with(root: &Path, num_classes: Option<usize>) -> Result<Dataset> {
    let names = list_images(root)?;
    let labels_path = root.join(LABELS_FILE);
    let labels = if labels_path.is_file() {
        Some(read_labels(&labels_path, &names)?)
    } else {
        None
    };

    let images_dir = root.join(IMAGES_DIR);
    let images: Vec<Result<Tensor>> = par::map_range(names.len(), |i| {
        let path = images_dir.join(&names[i]);
        let bytes = fs::read(&path)?;
        Ok(pnm::decode(&bytes, &path)?.to_tensor())
    });

    let classes = match (&labels, num_classes) {
        (None, _) => None,
        (Some(_), Some(c)) => Some(c),
        (Some(l), None) => Some(l.values().copied().max().map_or(0, |m| (m.max(0) + 1) as usize)),
    };

    let mut entries = Vec::with_capacity(names.len());
    for (name, image) in names.into_iter().zip(images) {
        let label = match (&labels, classes) {
            (Some(l), Some(c)) => {
                let raw = *l
                    .get(&name)
                    .ok_or_else(|| Error::Labels(format!("no label row for {name:?}")))?;
                if raw < 0 || raw as usize >= c {
                    return Err(Error::LabelOutOfRange {
                        file: name,
                        label: raw,
                        num_classes: c,
                    });
                }
                Some(raw as usize)
            }
            _ => None,
        };
        entries.push(DatasetEntry {
            filename: name,
            image: image?,
            label,
        });
    }
    Ok(Dataset {
        root: root.to_path_buf(),
        entries,
        num_classes: classes,
    })
}

pub fn load_dataset(root: &Path) -> Result<Dataset> {
    load_dataset_with(root, None)
}
