//! Sub-network masks: the sparsity statistic `α = μ²/σ²`, mask extraction, the
//! OR-combined frozen set `M_all`, gradient freezing and re-initialization of the
//! unselected variational parameters.

use log::warn;

use crate::error::{IbmError, Result};
use crate::network::{Head, Network};
use crate::tensor::{Matrix, SeededRng};
use crate::vib::{init_va_params, VaParams, VibLayer};

/// Default selection threshold; selection is strict (`α > threshold`).
pub const ALPHA_THRESHOLD: f64 = 1.0;

/// Fraction of free weights below which a layer is reported as nearly saturated.
pub const LOW_CAPACITY_FRACTION: f64 = 0.01;

/// One 0/1 matrix per layer, shaped like that layer's weight.
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryMask {
    pub layers: Vec<Matrix>,
}

impl BinaryMask {
    pub fn zeros(shapes: &[(usize, usize)]) -> Self {
        Self::filled(shapes, 0.0)
    }

    pub fn filled(shapes: &[(usize, usize)], value: f64) -> Self {
        Self {
            layers: shapes.iter().map(|&(r, c)| Matrix::filled(r, c, value)).collect(),
        }
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(Matrix::shape).collect()
    }

    pub fn ensure_shapes(&self, shapes: &[(usize, usize)]) -> Result<()> {
        if self.layers.len() != shapes.len() {
            return Err(IbmError::ShapeMismatch {
                context: "mask layer count",
                expected: (shapes.len(), 0),
                found: (self.layers.len(), 0),
            });
        }
        for (m, &s) in self.layers.iter().zip(shapes) {
            m.ensure_shape("mask layer", s)?;
        }
        Ok(())
    }

    /// Number of ones in each layer.
    pub fn counts(&self) -> Vec<usize> {
        self.layers.iter().map(count_ones).collect()
    }

    pub fn total_selected(&self) -> usize {
        self.counts().iter().sum()
    }

    pub fn total_weights(&self) -> usize {
        self.layers.iter().map(Matrix::len).sum()
    }
}

/// The frozen-weight indicator `M_all`. Same representation as a task mask.
pub type CumulativeMask = BinaryMask;

fn count_ones(m: &Matrix) -> usize {
    m.data().iter().filter(|&&v| v != 0.0).count()
}

/// Everything needed to re-create one task's sub-network after the fact.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskArtifact {
    pub task_id: usize,
    pub masks: BinaryMask,
    pub va_params: Vec<VaParams>,
    pub gammas: Vec<f64>,
    pub head: Head,
}

impl TaskArtifact {
    pub fn check_against(&self, shapes: &[(usize, usize)]) -> Result<()> {
        self.masks.ensure_shapes(shapes)?;
        if self.va_params.len() != shapes.len() || self.gammas.len() != shapes.len() {
            return Err(IbmError::ShapeMismatch {
                context: "artifact snapshot count",
                expected: (shapes.len(), shapes.len()),
                found: (self.va_params.len(), self.gammas.len()),
            });
        }
        for (p, &s) in self.va_params.iter().zip(shapes) {
            p.mu.ensure_shape("artifact mu", s)?;
            p.log_sigma.ensure_shape("artifact log_sigma", s)?;
        }
        Ok(())
    }

    /// Snapshot of the current network with every weight selected. Baselines use this
    /// to evaluate an unmasked backbone through the same inference path.
    pub fn dense(net: &Network, task: usize) -> Result<Self> {
        Ok(Self {
            task_id: task,
            masks: BinaryMask::filled(&net.layer_shapes(), 1.0),
            va_params: net.layers.iter().map(VibLayer::va_params).collect(),
            gammas: net.layers.iter().map(|l| l.gamma).collect(),
            head: net.head(task)?.clone(),
        })
    }
}

/// `α = μ² / σ²`, elementwise.
pub fn compute_alpha(layer: &VibLayer) -> Matrix {
    layer
        .mu
        .zip_map(&layer.log_sigma, |mu, ls| mu * mu * (-2.0 * ls).exp())
        .expect("layer invariant: mu and log_sigma share a shape")
}

/// 1 where `α > threshold`, else 0.
pub fn extract_mask(alpha: &Matrix, threshold: f64) -> Matrix {
    alpha.map(|a| if a > threshold { 1.0 } else { 0.0 })
}

/// Elementwise OR of every mask in the pool, starting from all zeros.
pub fn combine_masks(pool: &[TaskArtifact], shapes: &[(usize, usize)]) -> Result<CumulativeMask> {
    let mut all = BinaryMask::zeros(shapes);
    for artifact in pool {
        artifact.masks.ensure_shapes(shapes)?;
        for (acc, m) in all.layers.iter_mut().zip(&artifact.masks.layers) {
            for (a, &b) in acc.data_mut().iter_mut().zip(m.data()) {
                if b != 0.0 {
                    *a = 1.0;
                }
            }
        }
    }
    Ok(all)
}

/// `∇W ⊙ (1 − M_all)` for every layer.
pub fn freeze_gradients(grads: &[Matrix], m_all: &CumulativeMask) -> Result<Vec<Matrix>> {
    if grads.len() != m_all.layers.len() {
        return Err(IbmError::ShapeMismatch {
            context: "freeze_gradients layer count",
            expected: (m_all.layers.len(), 0),
            found: (grads.len(), 0),
        });
    }
    grads
        .iter()
        .zip(&m_all.layers)
        .map(|(g, m)| g.zip_map(m, |g, m| if m != 0.0 { 0.0 } else { g }))
        .collect()
}

/// Keeps μ and log σ where `M_all = 1` and redraws them from the initialization
/// distribution everywhere else. A full-size fresh draw is taken from `rng`, so an
/// all-zero mask reproduces a fresh initialization from the same stream.
pub fn reinit_va_params(layer: &mut VibLayer, m_all: &Matrix, rng: &mut SeededRng) -> Result<()> {
    m_all.ensure_shape("reinit mask", layer.shape())?;
    let (fresh_mu, fresh_ls) = init_va_params(layer.outputs(), layer.inputs(), rng);
    let keep = m_all.data();
    for (i, &k) in keep.iter().enumerate() {
        if k == 0.0 {
            layer.mu.data_mut()[i] = fresh_mu.data()[i];
            layer.log_sigma.data_mut()[i] = fresh_ls.data()[i];
        }
    }
    Ok(())
}

/// Free/frozen accounting for one layer of `M_all`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerCapacity {
    pub layer: usize,
    pub frozen: usize,
    pub total: usize,
}

impl LayerCapacity {
    pub fn free(&self) -> usize {
        self.total - self.frozen
    }

    pub fn free_fraction(&self) -> f64 {
        self.free() as f64 / self.total as f64
    }
}

pub fn capacity(m_all: &CumulativeMask) -> Vec<LayerCapacity> {
    m_all
        .layers
        .iter()
        .enumerate()
        .map(|(layer, m)| LayerCapacity {
            layer,
            frozen: count_ones(m),
            total: m.len(),
        })
        .collect()
}

/// Warns about nearly saturated layers and refuses to start `task` only when a layer
/// has neither free weights nor any selected ones.
pub fn check_capacity(m_all: &CumulativeMask, task: usize) -> Result<Vec<LayerCapacity>> {
    let report = capacity(m_all);
    for c in &report {
        if c.free() == 0 && c.frozen == 0 {
            return Err(IbmError::CapacityExhausted {
                layer: c.layer,
                task,
            });
        }
        if c.free_fraction() < LOW_CAPACITY_FRACTION {
            warn!(
                "task {task}: layer {} has {} of {} weights free ({:.3}%)",
                c.layer,
                c.free(),
                c.total,
                100.0 * c.free_fraction()
            );
        }
    }
    Ok(report)
}

/// The append-only store of finalized task artifacts.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MemoryPool {
    pub artifacts: Vec<TaskArtifact>,
}

impl MemoryPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.artifacts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.artifacts.is_empty()
    }

    pub fn get(&self, task: usize) -> Option<&TaskArtifact> {
        self.artifacts.iter().find(|a| a.task_id == task)
    }

    pub fn cumulative_mask(&self, shapes: &[(usize, usize)]) -> Result<CumulativeMask> {
        combine_masks(&self.artifacts, shapes)
    }

    /// Extracts the task's masks from the current α, snapshots the variational
    /// parameters, γ and head, and appends the artifact to the pool.
    pub fn finalize_task(&mut self, net: &Network, task: usize, threshold: f64) -> Result<&TaskArtifact> {
        if self.get(task).is_some() {
            return Err(IbmError::DuplicateTask(task));
        }
        let masks = BinaryMask {
            layers: net
                .layers
                .iter()
                .map(|l| extract_mask(&compute_alpha(l), threshold))
                .collect(),
        };
        self.artifacts.push(TaskArtifact {
            task_id: task,
            masks,
            va_params: net.layers.iter().map(VibLayer::va_params).collect(),
            gammas: net.layers.iter().map(|l| l.gamma).collect(),
            head: net.head(task)?.clone(),
        });
        Ok(self.artifacts.last().expect("just pushed"))
    }
}
