//! Sparse label masks, masked flow losses, spatial-prior mask dilation and small-loss
//! pseudo-label selection.

mod loss;
mod mask;
mod select;

pub use loss::{
    combined_objective, gt_loss, gt_loss_grad, pair_objective, pseudo_loss_masked, selected_mean,
    selected_mean_grad, LossWeights, MaskedLoss, PairLoss, PseudoTarget,
};
pub use mask::{build_label_mask, dilate_mask, GroundTruthFlow, KeypointPair, LabelMask};
pub use select::{select_small_loss, selection_ratio, SelectionSchedule};
