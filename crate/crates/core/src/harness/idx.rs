//! IDX files (the MNIST container format): a big-endian header
//! `0x00 0x00 <type> <ndims>` followed by `ndims` u32 sizes and the raw payload.
//! Only unsigned-byte payloads (type `0x08`) are supported.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{IbmError, Result};
use crate::harness::data::{Split, TaskDataset};
use crate::tensor::Matrix;

const TYPE_U8: u8 = 0x08;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

impl IdxArray {
    /// Number of items along the first axis.
    pub fn items(&self) -> usize {
        self.dims.first().copied().unwrap_or(0)
    }

    /// Size of one item (product of the remaining axes).
    pub fn item_len(&self) -> usize {
        self.dims.iter().skip(1).product()
    }

    pub fn item(&self, i: usize) -> &[u8] {
        let n = self.item_len();
        &self.data[i * n..(i + 1) * n]
    }
}

fn idx_err(offset: usize, reason: impl Into<String>) -> IbmError {
    IbmError::Idx {
        offset,
        reason: reason.into(),
    }
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray> {
    if bytes.len() < 4 {
        return Err(idx_err(bytes.len(), "file shorter than the 4-byte magic"));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(idx_err(0, format!("magic must start with two zero bytes, got {:#04x} {:#04x}", bytes[0], bytes[1])));
    }
    if bytes[2] != TYPE_U8 {
        return Err(idx_err(2, format!("unsupported element type {:#04x}", bytes[2])));
    }
    let ndims = bytes[3] as usize;
    if ndims == 0 {
        return Err(idx_err(3, "zero dimensions"));
    }
    let header = 4 + 4 * ndims;
    if bytes.len() < header {
        return Err(idx_err(bytes.len(), format!("truncated header: {ndims} dimensions need {header} bytes")));
    }
    let mut dims = Vec::with_capacity(ndims);
    let mut expected: usize = 1;
    for d in 0..ndims {
        let at = 4 + 4 * d;
        let size = u32::from_be_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as usize;
        expected = expected
            .checked_mul(size)
            .ok_or_else(|| idx_err(at, "dimension product overflows"))?;
        dims.push(size);
    }
    let payload = &bytes[header..];
    if payload.len() != expected {
        let offset = header + payload.len().min(expected);
        let reason = if payload.len() < expected {
            format!("truncated payload: {} of {expected} bytes", payload.len())
        } else {
            format!("{} trailing bytes after payload", payload.len() - expected)
        };
        return Err(idx_err(offset, reason));
    }
    Ok(IdxArray {
        dims,
        data: payload.to_vec(),
    })
}

pub fn encode_idx(array: &IdxArray) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * array.dims.len() + array.data.len());
    out.extend_from_slice(&[0, 0, TYPE_U8, array.dims.len() as u8]);
    for &d in &array.dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(&array.data);
    out
}

pub fn read_idx(path: &Path) -> Result<IdxArray> {
    let bytes = std::fs::read(path).map_err(|e| IbmError::io(path, e))?;
    parse_idx(&bytes).map_err(|e| match e {
        IbmError::Idx { offset, reason } => idx_err(offset, format!("{}: {reason}", path.display())),
        other => other,
    })
}

pub fn write_idx(path: &Path, array: &IdxArray) -> Result<()> {
    std::fs::write(path, encode_idx(array)).map_err(|e| IbmError::io(path, e))
}

/// Where to find the four IDX files and how to carve classes into tasks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdxSpec {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
    /// Consecutive class ids per task, e.g. 2 gives {0,1}, {2,3}, …
    pub classes_per_task: usize,
    /// Explicit class groups; overrides `classes_per_task` when non-empty.
    pub groups: Vec<Vec<usize>>,
}

impl Default for IdxSpec {
    fn default() -> Self {
        Self {
            train_images: PathBuf::from("train-images-idx3-ubyte"),
            train_labels: PathBuf::from("train-labels-idx1-ubyte"),
            test_images: PathBuf::from("t10k-images-idx3-ubyte"),
            test_labels: PathBuf::from("t10k-labels-idx1-ubyte"),
            classes_per_task: 2,
            groups: Vec::new(),
        }
    }
}

impl IdxSpec {
    pub fn validate(&self) -> Result<()> {
        if self.groups.is_empty() && self.classes_per_task == 0 {
            return Err(IbmError::Config("classes_per_task must be >= 1".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for g in &self.groups {
            if g.is_empty() {
                return Err(IbmError::Config("empty class group".into()));
            }
            for c in g {
                if !seen.insert(*c) {
                    return Err(IbmError::Config(format!("class {c} appears in two groups")));
                }
            }
        }
        Ok(())
    }

    /// Class groups for a label set with `num_classes` classes.
    pub fn class_groups(&self, num_classes: usize) -> Vec<Vec<usize>> {
        if !self.groups.is_empty() {
            return self.groups.clone();
        }
        (0..num_classes)
            .collect::<Vec<_>>()
            .chunks(self.classes_per_task)
            .map(<[usize]>::to_vec)
            .collect()
    }
}

/// Splits labelled IDX arrays into per-task datasets. Pixels are scaled to `[0, 1]`
/// and labels remapped to their position within the task's class group.
pub fn split_into_tasks(
    train: (&IdxArray, &IdxArray),
    test: (&IdxArray, &IdxArray),
    spec: &IdxSpec,
) -> Result<Vec<TaskDataset>> {
    spec.validate()?;
    for (images, labels) in [train, test] {
        if images.items() != labels.items() || labels.dims.len() != 1 {
            return Err(idx_err(
                4,
                format!("{} images but {} labels", images.items(), labels.items()),
            ));
        }
    }
    let width = train.0.item_len();
    if test.0.item_len() != width {
        return Err(idx_err(8, "train and test images differ in size"));
    }
    let num_classes = train
        .1
        .data
        .iter()
        .chain(&test.1.data)
        .map(|&l| l as usize + 1)
        .max()
        .unwrap_or(0);
    let groups = spec.class_groups(num_classes);
    groups
        .iter()
        .enumerate()
        .map(|(t, group)| {
            Ok(TaskDataset {
                task_id: t,
                train: select_classes(train.0, train.1, group, width)?,
                test: select_classes(test.0, test.1, group, width)?,
                classes: group.len(),
                informative: Vec::new(),
                source_classes: group.clone(),
            })
        })
        .collect()
}

fn select_classes(images: &IdxArray, labels: &IdxArray, group: &[usize], width: usize) -> Result<Split> {
    let mut data = Vec::new();
    let mut y = Vec::new();
    for (i, &label) in labels.data.iter().enumerate() {
        if let Some(pos) = group.iter().position(|&c| c == label as usize) {
            data.extend(images.item(i).iter().map(|&p| p as f64 / 255.0));
            y.push(pos);
        }
    }
    Ok(Split {
        x: Matrix::new(y.len(), width, data)?,
        y,
    })
}

pub fn ingest_idx(spec: &IdxSpec) -> Result<Vec<TaskDataset>> {
    let train_images = read_idx(&spec.train_images)?;
    let train_labels = read_idx(&spec.train_labels)?;
    let test_images = read_idx(&spec.test_images)?;
    let test_labels = read_idx(&spec.test_labels)?;
    split_into_tasks(
        (&train_images, &train_labels),
        (&test_images, &test_labels),
        spec,
    )
}

/// Writes tasks back out as IDX image/label pairs with their original class ids.
/// Image dimensions after the item axis are given by `item_dims`.
pub fn export_tasks(tasks: &[TaskDataset], item_dims: &[usize], test: bool) -> Result<(IdxArray, IdxArray)> {
    let width: usize = item_dims.iter().product();
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for task in tasks {
        let split = if test { &task.test } else { &task.train };
        split.x.ensure_shape("export_tasks", (split.len(), width))?;
        for v in split.x.data() {
            pixels.push((v * 255.0).round().clamp(0.0, 255.0) as u8);
        }
        for &l in &split.y {
            labels.push(task.source_classes[l] as u8);
        }
    }
    let mut dims = vec![labels.len()];
    dims.extend_from_slice(item_dims);
    Ok((
        IdxArray { dims, data: pixels },
        IdxArray {
            dims: vec![labels.len()],
            data: labels,
        },
    ))
}
