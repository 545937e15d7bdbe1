//! Per-layer compression multipliers from the spectrum of hidden representations.
//!
//! For each layer the smallest rank `k` whose best rank-`k` approximation keeps a
//! fraction `δ` of the Frobenius energy is found, and `γ_l = kl_scale · k / channels`.

use log::debug;

use crate::error::{IbmError, Result};
use crate::network::Network;
use crate::tensor::{svd, Matrix};

pub const DEFAULT_DELTA: f64 = 0.97;
pub const DEFAULT_INTERVAL: usize = 2;
pub const DEFAULT_PROBE_ROWS: usize = 256;

/// γ before the first decomposition event, as a fraction of `kl_scale`.
pub const INITIAL_GAMMA_FRACTION: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GammaEvent {
    pub epoch: usize,
    pub layer: usize,
    pub gamma: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompressionSchedule {
    pub delta: f64,
    pub interval_epochs: usize,
    pub kl_scale: f64,
    pub gammas: Vec<f64>,
    pub history: Vec<GammaEvent>,
}

impl CompressionSchedule {
    pub fn new(delta: f64, interval_epochs: usize, kl_scale: f64, layers: usize) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(IbmError::InvalidDelta(delta));
        }
        if interval_epochs == 0 {
            return Err(IbmError::Config("fd_interval must be >= 1".into()));
        }
        if kl_scale.is_nan() || kl_scale < 0.0 || !kl_scale.is_finite() {
            return Err(IbmError::Config(format!("kl_scale must be >= 0, got {kl_scale}")));
        }
        Ok(Self {
            delta,
            interval_epochs,
            kl_scale,
            gammas: vec![INITIAL_GAMMA_FRACTION * kl_scale; layers],
            history: Vec::new(),
        })
    }

    /// Resets every γ to its initial value (start of a task).
    pub fn reset(&mut self) {
        let g = INITIAL_GAMMA_FRACTION * self.kl_scale;
        self.gammas.iter_mut().for_each(|v| *v = g);
    }

    pub fn is_due(&self, epoch: usize) -> bool {
        epoch.is_multiple_of(self.interval_epochs)
    }
}

/// Smallest `k` with `Σ_{i≤k} s_i² ≥ δ · Σ s_i²`.
pub fn k_rank(singular_values: &[f64], delta: f64) -> Result<usize> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(IbmError::InvalidDelta(delta));
    }
    let total: f64 = singular_values.iter().map(|s| s * s).sum();
    if total.is_nan() || total <= 0.0 {
        return Err(IbmError::ZeroSpectrum);
    }
    let target = delta * total;
    let mut kept = 0.0;
    for (i, s) in singular_values.iter().enumerate() {
        kept += s * s;
        if kept >= target {
            return Ok(i + 1);
        }
    }
    // rounding in the running sum can leave the last partial sum a hair short
    Ok(singular_values.len())
}

/// `k / channels` for a `batch × channels` representation.
pub fn decompose_ratio(h: &Matrix, delta: f64) -> Result<f64> {
    if h.is_empty() {
        return Err(IbmError::Empty("decompose_ratio"));
    }
    let d = svd(h)?;
    let k = k_rank(&d.singular_values, delta)?;
    Ok(k as f64 / h.cols() as f64)
}

/// On epochs divisible by the interval, recomputes every layer's γ from a deterministic
/// (ε = 0) forward pass over `probe` and writes it into the network. Layers whose
/// representation is identically zero keep their previous γ. Returns whether an update
/// happened.
pub fn update_schedule(
    net: &mut Network,
    schedule: &mut CompressionSchedule,
    probe: &Matrix,
    epoch: usize,
) -> Result<bool> {
    if !schedule.is_due(epoch) {
        return Ok(false);
    }
    let hidden = net.deterministic_hidden(probe)?;
    for (l, h) in hidden.iter().enumerate() {
        match decompose_ratio(h, schedule.delta) {
            Ok(ratio) => schedule.gammas[l] = schedule.kl_scale * ratio,
            Err(IbmError::ZeroSpectrum) => {
                debug!("epoch {epoch}: layer {l} representation is all zero; gamma kept");
            }
            Err(e) => return Err(e),
        }
        schedule.history.push(GammaEvent {
            epoch,
            layer: l,
            gamma: schedule.gammas[l],
        });
    }
    net.set_gammas(&schedule.gammas);
    Ok(true)
}
