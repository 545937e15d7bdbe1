//! Accuracy matrix bookkeeping and the ACC / BWT / FWT suite.
//!
//! `A[i][j]` is the accuracy on task `j` right after training task `i` (0-based
//! storage, lower triangular).

use serde::{Deserialize, Serialize};

use crate::error::{IbmError, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AccuracyMatrix {
    rows: Vec<Vec<f64>>,
}

impl AccuracyMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a matrix from complete lower-triangular rows (row `i` has `i + 1` entries).
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let mut m = Self::new();
        for row in rows {
            m.push_row(row)?;
        }
        Ok(m)
    }

    /// Appends the evaluation row after training the next task.
    pub fn push_row(&mut self, row: Vec<f64>) -> Result<()> {
        let expected = self.rows.len() + 1;
        if row.len() != expected {
            return Err(IbmError::ShapeMismatch {
                context: "accuracy matrix row",
                expected: (1, expected),
                found: (1, row.len()),
            });
        }
        if let Some(bad) = row.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(IbmError::Config(format!("accuracy {bad} outside [0, 1]")));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn tasks(&self) -> usize {
        self.rows.len()
    }

    /// Accuracy on task `task` after training task `after` (0-based, `task <= after`).
    pub fn get(&self, after: usize, task: usize) -> Option<f64> {
        self.rows.get(after).and_then(|r| r.get(task)).copied()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.rows.iter().enumerate().map(|(i, r)| r[i]).collect()
    }

    pub fn last_row(&self) -> Option<&[f64]> {
        self.rows.last().map(Vec::as_slice)
    }
}

/// Which diagonal entries enter FWT.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FwtRange {
    /// Tasks `1..T-1`, averaged over `T - 1`; the last task is excluded.
    #[default]
    Leading,
    /// All `T` tasks, averaged over `T`.
    All,
}

/// Mean accuracy over all tasks after the final one.
pub fn acc(a: &AccuracyMatrix) -> Result<f64> {
    let last = a.last_row().ok_or(IbmError::Empty("accuracy matrix"))?;
    Ok(last.iter().sum::<f64>() / last.len() as f64)
}

/// `(1/(T−1)) Σ_{i<T} (A[T][i] − A[i][i])`; `None` when `T < 2`.
pub fn bwt(a: &AccuracyMatrix) -> Option<f64> {
    let t = a.tasks();
    if t < 2 {
        return None;
    }
    let last = &a.rows[t - 1];
    let sum: f64 = (0..t - 1).map(|i| last[i] - a.rows[i][i]).sum();
    Some(sum / (t - 1) as f64)
}

/// `(1/(T−1)) Σ_{i<T} (A[i][i] − MT[i])` under [`FwtRange::Leading`]; `None` when `T < 2`
/// (or `T < 1` for [`FwtRange::All`]).
pub fn fwt(a: &AccuracyMatrix, multitask: &[f64], range: FwtRange) -> Result<Option<f64>> {
    let t = a.tasks();
    if multitask.len() != t {
        return Err(IbmError::ShapeMismatch {
            context: "multi-task baseline",
            expected: (t, 1),
            found: (multitask.len(), 1),
        });
    }
    let n = match range {
        FwtRange::Leading => t.saturating_sub(1),
        FwtRange::All => t,
    };
    if n == 0 {
        return Ok(None);
    }
    let sum: f64 = (0..n).map(|i| a.rows[i][i] - multitask[i]).sum();
    Ok(Some(sum / n as f64))
}

/// Fraction of matching entries.
pub fn accuracy(predictions: &[usize], labels: &[usize]) -> f64 {
    assert_eq!(predictions.len(), labels.len());
    if labels.is_empty() {
        return 0.0;
    }
    let hits = predictions.iter().zip(labels).filter(|(p, y)| p == y).count();
    hits as f64 / labels.len() as f64
}
