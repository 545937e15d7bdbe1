//! Task datasets and the split-Gaussian benchmark generator.
//!
//! Every generated task is a two-class problem whose class means differ only on a
//! private block of input dimensions; all other dimensions are pure noise. The block
//! indices are recorded, so mask precision can be scored against ground truth.

use serde::{Deserialize, Serialize};

use crate::error::{IbmError, Result};
use crate::tensor::{Matrix, SeededRng};

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub x: Matrix,
    pub y: Vec<usize>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// The first `n` rows (or all of them).
    pub fn head_rows(&self, n: usize) -> Matrix {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.x.select_rows(&idx)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskDataset {
    pub task_id: usize,
    pub train: Split,
    pub test: Split,
    pub classes: usize,
    /// Input dimensions that carry the label signal, when known.
    pub informative: Vec<usize>,
    /// Original class labels, in the order they were remapped to `0..classes`.
    pub source_classes: Vec<usize>,
}

impl TaskDataset {
    pub fn input_width(&self) -> usize {
        self.train.x.cols()
    }

    pub fn validate(&self) -> Result<()> {
        for split in [&self.train, &self.test] {
            if split.x.rows() != split.y.len() {
                return Err(IbmError::ShapeMismatch {
                    context: "dataset labels",
                    expected: (split.x.rows(), 1),
                    found: (split.y.len(), 1),
                });
            }
            if let Some(&label) = split.y.iter().find(|&&l| l >= self.classes) {
                return Err(IbmError::LabelOutOfRange {
                    label,
                    classes: self.classes,
                });
            }
        }
        if self.train.is_empty() {
            return Err(IbmError::Empty("training split"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaussianSpec {
    pub tasks: usize,
    pub dims: usize,
    pub informative_per_task: usize,
    pub train_per_task: usize,
    pub test_per_task: usize,
    /// Distance between the two class means, in units of the noise standard deviation.
    pub separation: f64,
}

impl Default for GaussianSpec {
    fn default() -> Self {
        Self {
            tasks: 5,
            dims: 20,
            informative_per_task: 1,
            train_per_task: 2048,
            test_per_task: 1000,
            separation: 4.5,
        }
    }
}

impl GaussianSpec {
    pub fn validate(&self) -> Result<()> {
        if self.tasks == 0 || self.informative_per_task == 0 || self.dims == 0 {
            return Err(IbmError::Config(
                "tasks, dims and informative_per_task must be >= 1".into(),
            ));
        }
        if self.tasks * self.informative_per_task > self.dims {
            return Err(IbmError::Config(format!(
                "{} tasks x {} informative dims do not fit in {} dims",
                self.tasks, self.informative_per_task, self.dims
            )));
        }
        if self.train_per_task == 0 {
            return Err(IbmError::Config("train_per_task must be >= 1".into()));
        }
        if !(self.separation >= 0.0 && self.separation.is_finite()) {
            return Err(IbmError::Config(format!(
                "separation must be >= 0, got {}",
                self.separation
            )));
        }
        Ok(())
    }

    /// Ground-truth informative dimensions of `task`.
    pub fn informative_block(&self, task: usize) -> Vec<usize> {
        let k = self.informative_per_task;
        (task * k..(task + 1) * k).collect()
    }
}

/// Draws every task of the benchmark from `rng`.
pub fn generate_split_gaussians(spec: &GaussianSpec, rng: &mut SeededRng) -> Result<Vec<TaskDataset>> {
    spec.validate()?;
    (0..spec.tasks)
        .map(|t| {
            let block = spec.informative_block(t);
            let train = sample_split(spec, &block, spec.train_per_task, rng)?;
            let test = sample_split(spec, &block, spec.test_per_task, rng)?;
            Ok(TaskDataset {
                task_id: t,
                train,
                test,
                classes: 2,
                informative: block,
                source_classes: vec![0, 1],
            })
        })
        .collect()
}

fn sample_split(spec: &GaussianSpec, block: &[usize], n: usize, rng: &mut SeededRng) -> Result<Split> {
    let shift = 0.5 * spec.separation / (block.len() as f64).sqrt();
    let mut data = Vec::with_capacity(n * spec.dims);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let label = usize::from(rng.bernoulli(0.5));
        let sign = if label == 1 { 1.0 } else { -1.0 };
        let start = data.len();
        data.extend((0..spec.dims).map(|_| rng.standard_normal()));
        for &d in block {
            data[start + d] += sign * shift;
        }
        y.push(label);
    }
    Ok(Split {
        x: Matrix::new(n, spec.dims, data)?,
        y,
    })
}
