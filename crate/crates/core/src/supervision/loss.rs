use log::warn;
use serde::{Deserialize, Serialize};

use super::{select_small_loss, GroundTruthFlow, LabelMask};
use crate::error::{invalid_arg, Result};
use crate::matching::FlowField;

/// Weight of the pseudo-label term.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda: 10.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.lambda >= 0.0 && self.lambda.is_finite() {
            Ok(())
        } else {
            Err(invalid_arg(format!(
                "lambda must be nonnegative, got {}",
                self.lambda
            )))
        }
    }
}

/// Per-cell masked endpoint errors and their mean over the mask.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedLoss {
    pub per_cell: Vec<f64>,
    pub mean: f64,
}

fn check_shapes(a: &FlowField, b: &FlowField, m: &LabelMask) -> Result<()> {
    if a.height != b.height || a.width != b.width || a.height != m.height || a.width != m.width {
        return Err(invalid_arg(format!(
            "shape mismatch: flows {}x{} and {}x{}, mask {}x{}",
            a.height, a.width, b.height, b.width, m.height, m.width
        )));
    }
    Ok(())
}

fn masked_l2(a: &FlowField, b: &FlowField, m: &LabelMask) -> Vec<f64> {
    let n = a.cells();
    (0..n)
        .map(|p| {
            if !m.values[p] {
                return 0.0;
            }
            let dx = a.values[p] - b.values[p];
            let dy = a.values[n + p] - b.values[n + p];
            dx.hypot(dy)
        })
        .collect()
}

/// Endpoint error at labeled cells; the mean is 0 (with a warning) for an empty mask.
pub fn gt_loss(f_hat: &FlowField, f_gt: &GroundTruthFlow, mask: &LabelMask) -> Result<MaskedLoss> {
    check_shapes(f_hat, f_gt, mask)?;
    let per_cell = masked_l2(f_hat, f_gt, mask);
    let n = mask.count();
    let mean = if n == 0 {
        warn!("label mask is empty; ground-truth loss set to 0");
        0.0
    } else {
        per_cell.iter().sum::<f64>() / n as f64
    };
    Ok(MaskedLoss { per_cell, mean })
}

/// Endpoint error against pseudo-labels on the dilated mask. `f_pseudo` is treated as a constant.
pub fn pseudo_loss_masked(
    f_hat: &FlowField,
    f_pseudo: &FlowField,
    mask: &LabelMask,
) -> Result<Vec<f64>> {
    check_shapes(f_hat, f_pseudo, mask)?;
    Ok(masked_l2(f_hat, f_pseudo, mask))
}

/// Mean of `per_cell` over `selected`, 0 when nothing is selected.
pub fn selected_mean(per_cell: &[f64], selected: &[usize]) -> f64 {
    if selected.is_empty() {
        0.0
    } else {
        selected.iter().map(|&p| per_cell[p]).sum::<f64>() / selected.len() as f64
    }
}

/// Gradient of the mean endpoint error over `cells` w.r.t. `f_hat`, scaled by `scale`.
/// Cells with zero error contribute the zero subgradient.
fn add_mean_epe_grad(
    f_hat: &FlowField,
    target: &FlowField,
    cells: &[usize],
    scale: f64,
    grad: &mut [f64],
) {
    if cells.is_empty() {
        return;
    }
    let n = f_hat.cells();
    let s = scale / cells.len() as f64;
    for &p in cells {
        let dx = f_hat.values[p] - target.values[p];
        let dy = f_hat.values[n + p] - target.values[n + p];
        let norm = dx.hypot(dy);
        if norm > 0.0 {
            grad[p] += s * dx / norm;
            grad[n + p] += s * dy / norm;
        }
    }
}

/// Gradient of [`gt_loss`]'s mean w.r.t. `f_hat`.
pub fn gt_loss_grad(f_hat: &FlowField, f_gt: &GroundTruthFlow, mask: &LabelMask) -> Vec<f64> {
    let mut g = vec![0.0; f_hat.values.len()];
    add_mean_epe_grad(f_hat, f_gt, &mask.indices(), 1.0, &mut g);
    g
}

/// Gradient of [`selected_mean`] of the pseudo loss w.r.t. `f_hat`.
pub fn selected_mean_grad(f_hat: &FlowField, f_pseudo: &FlowField, selected: &[usize]) -> Vec<f64> {
    let mut g = vec![0.0; f_hat.values.len()];
    add_mean_epe_grad(f_hat, f_pseudo, selected, 1.0, &mut g);
    g
}

/// `mean_gt + λ·mean_pseudo`.
pub fn combined_objective(mean_gt: f64, mean_pseudo: f64, w: &LossWeights) -> f64 {
    mean_gt + w.lambda * mean_pseudo
}

/// Pseudo-label supervision for one pair: the peer's or teacher's flow and the dilated mask.
#[derive(Clone, Copy, Debug)]
pub struct PseudoTarget<'a> {
    pub flow: &'a FlowField,
    pub mask: &'a LabelMask,
    pub ratio: f64,
}

/// Objective of a single pair together with its gradient on the predicted flow.
#[derive(Clone, Debug, PartialEq)]
pub struct PairLoss {
    pub total: f64,
    pub gt: f64,
    pub pseudo: f64,
    pub selected: Vec<usize>,
    pub grad: Vec<f64>,
}

/// Ground-truth loss plus, if given, the λ-weighted small-loss selected pseudo loss.
///
/// With `pseudo = None` or `λ = 0` the result and its gradient reduce exactly to the
/// ground-truth term.
pub fn pair_objective(
    f_hat: &FlowField,
    f_gt: &GroundTruthFlow,
    mask: &LabelMask,
    pseudo: Option<PseudoTarget<'_>>,
    weights: &LossWeights,
) -> Result<PairLoss> {
    let gt = gt_loss(f_hat, f_gt, mask)?;
    let mut grad = gt_loss_grad(f_hat, f_gt, mask);
    let (mut pseudo_mean, mut selected) = (0.0, Vec::new());
    if let Some(p) = pseudo {
        let per_cell = pseudo_loss_masked(f_hat, p.flow, p.mask)?;
        selected = select_small_loss(&per_cell, p.mask, p.ratio);
        pseudo_mean = selected_mean(&per_cell, &selected);
        if weights.lambda != 0.0 {
            add_mean_epe_grad(f_hat, p.flow, &selected, weights.lambda, &mut grad);
        }
    }
    let total = if weights.lambda == 0.0 {
        gt.mean
    } else {
        combined_objective(gt.mean, pseudo_mean, weights)
    };
    Ok(PairLoss {
        total,
        gt: gt.mean,
        pseudo: pseudo_mean,
        selected,
        grad,
    })
}
