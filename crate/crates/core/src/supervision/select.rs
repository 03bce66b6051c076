use serde::{Deserialize, Serialize};

use super::LabelMask;
use crate::error::{invalid_arg, Result};

/// Linear ramp of the pseudo-label selection ratio, stepped once per epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionSchedule {
    pub r_start: f64,
    pub r_end: f64,
    pub ramp_epochs: usize,
}

impl Default for SelectionSchedule {
    fn default() -> Self {
        Self {
            r_start: 0.2,
            r_end: 0.9,
            ramp_epochs: 10,
        }
    }
}

impl SelectionSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.r_start && self.r_start <= self.r_end && self.r_end <= 1.0) {
            return Err(invalid_arg(format!(
                "selection ratios must satisfy 0 <= r_start <= r_end <= 1, got {} and {}",
                self.r_start, self.r_end
            )));
        }
        if self.ramp_epochs == 0 {
            return Err(invalid_arg("ramp_epochs must be at least 1"));
        }
        Ok(())
    }
}

/// `R(T) = r_start + (r_end − r_start)·min(T / ramp_epochs, 1)`.
pub fn selection_ratio(epoch: usize, sched: &SelectionSchedule) -> f64 {
    let t = (epoch as f64 / sched.ramp_epochs.max(1) as f64).min(1.0);
    sched.r_start + (sched.r_end - sched.r_start) * t
}

/// Picks the `⌈R·N⌉` foreground cells with the smallest loss, where `N` counts the set cells of
/// `mask`. Equal losses are ordered by linear index. Returned indices are ascending.
pub fn select_small_loss(per_cell: &[f64], mask: &LabelMask, ratio: f64) -> Vec<usize> {
    let mut fg = mask.indices();
    let n = ((ratio.clamp(0.0, 1.0) * fg.len() as f64).ceil() as usize).min(fg.len());
    fg.sort_by(|&a, &b| per_cell[a].total_cmp(&per_cell[b]).then(a.cmp(&b)));
    let mut picked = fg[..n].to_vec();
    picked.sort_unstable();
    picked
}
