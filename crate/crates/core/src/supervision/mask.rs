use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, Result};
use crate::matching::FlowField;

/// Annotated correspondence in pixels: `source` matches `target`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeypointPair {
    pub source: (f64, f64),
    pub target: (f64, f64),
}

/// Binary validity grid `[height × width]`, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMask {
    pub height: usize,
    pub width: usize,
    pub values: Vec<bool>,
}

impl LabelMask {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            values: vec![false; height * width],
        }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        self.values[r * self.width + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: bool) {
        self.values[r * self.width + c] = v;
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|v| **v).count()
    }

    /// Linear indices of the set cells, ascending.
    pub fn indices(&self) -> Vec<usize> {
        self.values
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.then_some(i))
            .collect()
    }

    pub fn is_subset_of(&self, other: &LabelMask) -> bool {
        self.values.len() == other.values.len()
            && self.values.iter().zip(&other.values).all(|(a, b)| !a || *b)
    }
}

/// Ground-truth source coordinates; meaningful only where the companion mask is set.
pub type GroundTruthFlow = FlowField;

/// Rasterizes target keypoints onto the flow grid.
///
/// A target point `(x, y)` lands in cell `(⌊y/stride⌋, ⌊x/stride⌋)` (points on the far border
/// go to the last cell) and that cell stores the exact subpixel source coordinate. When two
/// points share a cell the first one is kept. Points outside the grid extent are skipped;
/// both cases are logged.
pub fn build_label_mask(
    pairs: &[KeypointPair],
    grid: (usize, usize),
    stride: f64,
) -> (LabelMask, GroundTruthFlow) {
    let (h, w) = grid;
    let mut mask = LabelMask::zeros(h, w);
    let mut flow = FlowField::zeros(h, w, stride);
    let (ext_x, ext_y) = (w as f64 * stride, h as f64 * stride);
    for (n, p) in pairs.iter().enumerate() {
        let (x, y) = p.target;
        if !(0.0..=ext_x).contains(&x) || !(0.0..=ext_y).contains(&y) || h == 0 || w == 0 {
            warn!("keypoint {n} at ({x}, {y}) lies outside the {ext_x}x{ext_y} grid; skipped");
            continue;
        }
        let r = ((y / stride).floor() as usize).min(h - 1);
        let c = ((x / stride).floor() as usize).min(w - 1);
        if mask.get(r, c) {
            warn!("keypoint {n} collides with an earlier keypoint in cell ({r}, {c}); skipped");
            continue;
        }
        mask.set(r, c, true);
        flow.set(r, c, p.source);
    }
    (mask, flow)
}

/// Morphological dilation with a `k×k` window of ones under zero padding.
pub fn dilate_mask(m: &LabelMask, k: usize) -> Result<LabelMask> {
    if k.is_multiple_of(2) {
        return Err(invalid_arg(format!("dilation kernel must be odd, got {k}")));
    }
    let rad = k / 2;
    let (h, w) = (m.height, m.width);
    // the square window is separable: dilate rows, then columns
    let mut rows = vec![false; h * w];
    for r in 0..h {
        for c in 0..w {
            let lo = c.saturating_sub(rad);
            let hi = (c + rad).min(w.saturating_sub(1));
            rows[r * w + c] = (lo..=hi).any(|cc| m.values[r * w + cc]);
        }
    }
    let mut out = LabelMask::zeros(h, w);
    for r in 0..h {
        let lo = r.saturating_sub(rad);
        let hi = (r + rad).min(h.saturating_sub(1));
        for c in 0..w {
            out.values[r * w + c] = (lo..=hi).any(|rr| rows[rr * w + c]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kp(s: (f64, f64), t: (f64, f64)) -> KeypointPair {
        KeypointPair {
            source: s,
            target: t,
        }
    }

    #[test]
    fn empty_list_gives_empty_mask() {
        let (m, _) = build_label_mask(&[], (4, 4), 4.0);
        assert_eq!(m.count(), 0);
    }

    #[test]
    fn floor_rule() {
        let (m, f) = build_label_mask(&[kp((3.0, 9.5), (10.2, 7.8))], (4, 4), 4.0);
        assert_eq!(m.indices(), vec![6]);
        assert_eq!(f.get(1, 2), (3.0, 9.5));
    }

    #[test]
    fn collisions_keep_first() {
        let pairs = [kp((1.0, 1.0), (5.0, 5.0)), kp((9.0, 9.0), (6.0, 6.5))];
        let (m, f) = build_label_mask(&pairs, (4, 4), 4.0);
        assert_eq!(m.count(), 1);
        assert_eq!(f.get(1, 1), (1.0, 1.0));
    }

    #[test]
    fn outside_points_skipped_and_border_kept() {
        let pairs = [kp((0.0, 0.0), (-1.0, 2.0)), kp((2.0, 2.0), (16.0, 16.0))];
        let (m, _) = build_label_mask(&pairs, (4, 4), 4.0);
        assert_eq!(m.indices(), vec![15]);
    }

    #[test]
    fn dilation_examples() {
        let mut m = LabelMask::zeros(5, 5);
        m.set(2, 2, true);
        assert_eq!(dilate_mask(&m, 1).unwrap(), m);
        let d = dilate_mask(&m, 3).unwrap();
        assert_eq!(d.count(), 9);
        assert!(d.get(1, 1) && d.get(3, 3) && !d.get(0, 2));

        let mut corner = LabelMask::zeros(5, 5);
        corner.set(0, 0, true);
        assert_eq!(dilate_mask(&corner, 3).unwrap().indices(), vec![0, 1, 5, 6]);
        assert!(dilate_mask(&m, 4).is_err());
    }
}
