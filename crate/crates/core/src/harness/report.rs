//! Run reports: a key/value header followed by CSV sections.
//!
//! Floats are written in Rust's shortest round-trip form, so a parsed report holds
//! exactly the values that were computed. Wall-clock timings are kept out of the
//! report so identical runs produce identical files; they go to `timings.csv`.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{IbmError, Result};
use crate::metrics::{acc, bwt, fwt, AccuracyMatrix, FwtRange};

pub const REPORT_FORMAT: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Ibm,
    Finetune,
    Multitask,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Ibm => "ibm",
            Strategy::Finetune => "finetune",
            Strategy::Multitask => "multitask",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ibm" => Some(Strategy::Ibm),
            "finetune" => Some(Strategy::Finetune),
            "multitask" => Some(Strategy::Multitask),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MaskCount {
    pub task: usize,
    pub layer: usize,
    pub selected: usize,
    pub total: usize,
    /// Weights in `M_all` once this task's mask is included.
    pub frozen: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GammaRecord {
    pub task: usize,
    pub epoch: usize,
    pub layer: usize,
    pub gamma: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub strategy: Strategy,
    pub seed: u64,
    pub accuracy: AccuracyMatrix,
    pub acc: f64,
    pub bwt: Option<f64>,
    pub fwt: Option<f64>,
    pub fwt_range: FwtRange,
    /// Multi-task baseline accuracies used for FWT.
    pub multitask: Option<Vec<f64>>,
    /// Mean training loss over the last epoch of each task.
    pub final_losses: Vec<f64>,
    pub mask_counts: Vec<MaskCount>,
    pub gamma_history: Vec<GammaRecord>,
    /// Seconds per task; not part of the report text.
    pub wall_clock: Vec<f64>,
}

impl RunReport {
    pub fn new(strategy: Strategy, seed: u64, accuracy: AccuracyMatrix, fwt_range: FwtRange) -> Result<Self> {
        Ok(Self {
            strategy,
            seed,
            acc: acc(&accuracy)?,
            bwt: bwt(&accuracy),
            fwt: None,
            fwt_range,
            accuracy,
            multitask: None,
            final_losses: Vec::new(),
            mask_counts: Vec::new(),
            gamma_history: Vec::new(),
            wall_clock: Vec::new(),
        })
    }

    pub fn tasks(&self) -> usize {
        self.accuracy.tasks()
    }

    /// Attaches multi-task baseline accuracies and computes FWT from them.
    pub fn attach_multitask(&mut self, multitask: Vec<f64>) -> Result<()> {
        self.fwt = fwt(&self.accuracy, &multitask, self.fwt_range)?;
        self.multitask = Some(multitask);
        Ok(())
    }

    /// Recomputes ACC/BWT/FWT from the stored matrix and baseline.
    pub fn recompute_metrics(&mut self) -> Result<()> {
        self.acc = acc(&self.accuracy)?;
        self.bwt = bwt(&self.accuracy);
        self.fwt = match &self.multitask {
            Some(mt) => fwt(&self.accuracy, mt, self.fwt_range)?,
            None => None,
        };
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "null".to_string(), |x| x.to_string());
        let mut s = String::new();
        let _ = writeln!(s, "# ibm run report");
        let _ = writeln!(s, "format = {REPORT_FORMAT}");
        let _ = writeln!(s, "strategy = {}", self.strategy.name());
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "tasks = {}", self.tasks());
        let _ = writeln!(s, "acc = {}", self.acc);
        let _ = writeln!(s, "bwt = {}", opt(self.bwt));
        let _ = writeln!(s, "fwt = {}", opt(self.fwt));
        let _ = writeln!(
            s,
            "fwt_range = {}",
            match self.fwt_range {
                FwtRange::Leading => "leading",
                FwtRange::All => "all",
            }
        );

        let _ = writeln!(s, "\n[accuracy]\nafter_task,task,accuracy");
        for (i, row) in self.accuracy.rows().iter().enumerate() {
            for (j, a) in row.iter().enumerate() {
                let _ = writeln!(s, "{i},{j},{a}");
            }
        }
        if let Some(mt) = &self.multitask {
            let _ = writeln!(s, "\n[multitask]\ntask,accuracy");
            for (i, a) in mt.iter().enumerate() {
                let _ = writeln!(s, "{i},{a}");
            }
        }
        let _ = writeln!(s, "\n[losses]\ntask,final_epoch_loss");
        for (i, l) in self.final_losses.iter().enumerate() {
            let _ = writeln!(s, "{i},{l}");
        }
        let _ = writeln!(s, "\n[mask_counts]\ntask,layer,selected,total,frozen");
        for m in &self.mask_counts {
            let _ = writeln!(s, "{},{},{},{},{}", m.task, m.layer, m.selected, m.total, m.frozen);
        }
        let _ = writeln!(s, "\n[gamma_history]\ntask,epoch,layer,gamma");
        for g in &self.gamma_history {
            let _ = writeln!(s, "{},{},{},{}", g.task, g.epoch, g.layer, g.gamma);
        }
        s
    }

    pub fn timings_csv(&self) -> String {
        let mut s = String::from("task,seconds\n");
        for (i, t) in self.wall_clock.iter().enumerate() {
            let _ = writeln!(s, "{i},{t}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut header = std::collections::BTreeMap::new();
        let mut sections: Vec<(String, Vec<Vec<String>>)> = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                sections.push((name.to_string(), Vec::new()));
                continue;
            }
            match sections.last_mut() {
                None => {
                    let (k, v) = line
                        .split_once('=')
                        .ok_or_else(|| IbmError::Report(format!("expected key = value, got {line:?}")))?;
                    header.insert(k.trim().to_string(), v.trim().to_string());
                }
                Some((_, rows)) => rows.push(line.split(',').map(str::to_string).collect()),
            }
        }
        let get = |k: &str| {
            header
                .get(k)
                .map(String::as_str)
                .ok_or_else(|| IbmError::Report(format!("missing header key {k:?}")))
        };
        if get("format")? != REPORT_FORMAT.to_string() {
            return Err(IbmError::Report(format!("unsupported format {}", get("format")?)));
        }
        let strategy = Strategy::parse(get("strategy")?)
            .ok_or_else(|| IbmError::Report(format!("unknown strategy {:?}", get("strategy"))))?;
        let seed: u64 = num(get("seed")?)?;
        let fwt_range = match get("fwt_range")? {
            "leading" => FwtRange::Leading,
            "all" => FwtRange::All,
            other => return Err(IbmError::Report(format!("unknown fwt_range {other:?}"))),
        };

        let section = |name: &str| -> Result<Vec<Vec<String>>> {
            let rows = sections
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, r)| r.clone())
                .unwrap_or_default();
            // drop the column header
            Ok(rows.into_iter().skip(1).collect())
        };

        let mut matrix_rows: Vec<Vec<f64>> = Vec::new();
        for row in section("accuracy")? {
            let [i, j, a] = fields::<3>(&row)?;
            let (i, j): (usize, usize) = (num(&i)?, num(&j)?);
            if i == matrix_rows.len() {
                matrix_rows.push(Vec::new());
            }
            if i + 1 != matrix_rows.len() || j != matrix_rows[i].len() {
                return Err(IbmError::Report(format!("accuracy entry ({i},{j}) out of order")));
            }
            matrix_rows[i].push(num(&a)?);
        }
        let accuracy = AccuracyMatrix::from_rows(matrix_rows)?;
        let mut report = RunReport::new(strategy, seed, accuracy, fwt_range)?;

        let mt: Vec<f64> = section("multitask")?
            .iter()
            .map(|r| fields::<2>(r).and_then(|[_, a]| num(&a)))
            .collect::<Result<_>>()?;
        if sections.iter().any(|(n, _)| n == "multitask") {
            report.attach_multitask(mt)?;
        }
        report.final_losses = section("losses")?
            .iter()
            .map(|r| fields::<2>(r).and_then(|[_, l]| num(&l)))
            .collect::<Result<_>>()?;
        report.mask_counts = section("mask_counts")?
            .iter()
            .map(|r| {
                let [t, l, s, tot, f] = fields::<5>(r)?;
                Ok(MaskCount {
                    task: num(&t)?,
                    layer: num(&l)?,
                    selected: num(&s)?,
                    total: num(&tot)?,
                    frozen: num(&f)?,
                })
            })
            .collect::<Result<_>>()?;
        report.gamma_history = section("gamma_history")?
            .iter()
            .map(|r| {
                let [t, e, l, g] = fields::<4>(r)?;
                Ok(GammaRecord {
                    task: num(&t)?,
                    epoch: num(&e)?,
                    layer: num(&l)?,
                    gamma: num(&g)?,
                })
            })
            .collect::<Result<_>>()?;

        // stored metrics must agree with the matrix they summarize
        let stored_acc: f64 = num(get("acc")?)?;
        if stored_acc.to_bits() != report.acc.to_bits() {
            return Err(IbmError::Report(format!(
                "stored acc {stored_acc} disagrees with the accuracy matrix ({})",
                report.acc
            )));
        }
        Ok(report)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| IbmError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| IbmError::io(path, e))?;
        Self::from_text(&text)
    }
}

fn num<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| IbmError::Report(format!("cannot parse {s:?}")))
}

fn fields<const N: usize>(row: &[String]) -> Result<[String; N]> {
    row.to_vec()
        .try_into()
        .map_err(|_| IbmError::Report(format!("expected {N} columns, got {row:?}")))
}
