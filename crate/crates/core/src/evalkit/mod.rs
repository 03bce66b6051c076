//! Keypoint transfer accuracy (PCK), per-class aggregation and report formatting.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::datakit::{normalize, PairSample};
use crate::error::{invalid_arg, invalid_input, Result};
use crate::matching::{transfer_keypoints, FlowField};
use crate::model::Network;

/// Where the PCK threshold dimensions come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Basis {
    /// Source image height and width.
    Image,
    /// Source-side ground-truth bounding box.
    Bbox,
}

impl std::str::FromStr for Basis {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "image" | "img" => Ok(Basis::Image),
            "bbox" => Ok(Basis::Bbox),
            _ => Err(invalid_arg(format!(
                "unknown PCK basis '{s}' (expected image or bbox)"
            ))),
        }
    }
}

fn threshold(alpha: f64, dims: (f64, f64)) -> f64 {
    alpha * dims.0.max(dims.1)
}

/// Number of predictions within `α·max(h, w)` of their ground truth (boundary inclusive).
/// Missing predictions count as wrong.
pub fn pck_count(
    pred: &[Option<(f64, f64)>],
    gt: &[(f64, f64)],
    alpha: f64,
    dims: (f64, f64),
) -> Result<usize> {
    if pred.len() != gt.len() {
        return Err(invalid_arg(format!(
            "{} predictions for {} ground-truth keypoints",
            pred.len(),
            gt.len()
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(invalid_arg(format!(
            "alpha must lie in [0, 1], got {alpha}"
        )));
    }
    let t = threshold(alpha, dims);
    Ok(pred
        .iter()
        .zip(gt)
        .filter(|(p, g)| p.is_some_and(|p| (p.0 - g.0).hypot(p.1 - g.1) <= t))
        .count())
}

/// Fraction of predictions within `α·max(h, w)` pixels of the ground truth; `dims = (h, w)`.
/// An empty list scores 0.
pub fn pck(pred: &[(f64, f64)], gt: &[(f64, f64)], alpha: f64, dims: (f64, f64)) -> Result<f64> {
    let wrapped: Vec<_> = pred.iter().map(|p| Some(*p)).collect();
    let n = pck_count(&wrapped, gt, alpha, dims)?;
    Ok(if gt.is_empty() {
        0.0
    } else {
        n as f64 / gt.len() as f64
    })
}

/// Anything that predicts a dense target→source flow for a pair.
pub trait FlowModel {
    fn predict_flow(&self, sample: &PairSample) -> Result<FlowField>;
}

impl FlowModel for Network {
    fn predict_flow(&self, sample: &PairSample) -> Result<FlowField> {
        self.predict(&normalize(&sample.source)?, &normalize(&sample.target)?)
    }
}

/// Predicts that every target pixel matches the same location in the source.
pub struct IdentityModel;

impl FlowModel for IdentityModel {
    fn predict_flow(&self, sample: &PairSample) -> Result<FlowField> {
        Ok(FlowField::identity(
            sample.target.height,
            sample.target.width,
            1.0,
        ))
    }
}

/// Returns the sample's dense ground-truth flow.
pub struct OracleModel;

impl FlowModel for OracleModel {
    fn predict_flow(&self, sample: &PairSample) -> Result<FlowField> {
        sample
            .flow
            .clone()
            .ok_or_else(|| invalid_input("oracle model needs samples with dense ground-truth flow"))
    }
}

/// Correct counts for one class at every α.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub keypoints: usize,
    pub correct: Vec<usize>,
    pub pck: Vec<f64>,
}

/// Per-class and keypoint-weighted overall PCK.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub alphas: Vec<f64>,
    pub basis: Basis,
    pub samples: usize,
    pub keypoints: usize,
    pub per_class: BTreeMap<String, ClassScore>,
    pub overall: Vec<f64>,
}

impl EvalReport {
    /// Human-readable table: one row per class plus the overall row.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = write!(s, "{:<16} {:>6}", "class", "kps");
        for a in &self.alphas {
            let _ = write!(s, " {:>9}", format!("PCK@{a}"));
        }
        s.push('\n');
        for (name, c) in &self.per_class {
            let _ = write!(s, "{name:<16} {:>6}", c.keypoints);
            for p in &c.pck {
                let _ = write!(s, " {:>9.4}", p);
            }
            s.push('\n');
        }
        let _ = write!(s, "{:<16} {:>6}", "overall", self.keypoints);
        for p in &self.overall {
            let _ = write!(s, " {:>9.4}", p);
        }
        s.push('\n');
        s
    }
}

fn basis_dims(sample: &PairSample, basis: Basis) -> Result<(f64, f64)> {
    match basis {
        Basis::Image => Ok((sample.source.height as f64, sample.source.width as f64)),
        Basis::Bbox => sample
            .bbox_source
            .map(|b| (b.height(), b.width()))
            .ok_or_else(|| invalid_input("bbox basis requested but a sample has no source box")),
    }
}

/// Predicts every pair, transfers its target keypoints and scores them per class.
pub fn evaluate(
    model: &dyn FlowModel,
    data: &[PairSample],
    alphas: &[f64],
    basis: Basis,
) -> Result<EvalReport> {
    if alphas.is_empty() {
        return Err(invalid_arg("at least one alpha is required"));
    }
    let mut per_class: BTreeMap<String, ClassScore> = BTreeMap::new();
    for sample in data {
        let dims = basis_dims(sample, basis)?;
        let flow = model.predict_flow(sample)?;
        let targets: Vec<_> = sample.keypoints.iter().map(|k| k.target).collect();
        let gt: Vec<_> = sample.keypoints.iter().map(|k| k.source).collect();
        let pred = transfer_keypoints(&flow, &targets);
        let entry = per_class
            .entry(sample.category.clone())
            .or_insert_with(|| ClassScore {
                keypoints: 0,
                correct: vec![0; alphas.len()],
                pck: vec![0.0; alphas.len()],
            });
        entry.keypoints += gt.len();
        for (i, &a) in alphas.iter().enumerate() {
            entry.correct[i] += pck_count(&pred, &gt, a, dims)?;
        }
    }
    let keypoints: usize = per_class.values().map(|c| c.keypoints).sum();
    let mut overall = vec![0.0; alphas.len()];
    for c in per_class.values_mut() {
        for i in 0..alphas.len() {
            c.pck[i] = if c.keypoints == 0 {
                0.0
            } else {
                c.correct[i] as f64 / c.keypoints as f64
            };
        }
    }
    if keypoints > 0 {
        for (i, o) in overall.iter_mut().enumerate() {
            *o = per_class.values().map(|c| c.correct[i]).sum::<usize>() as f64 / keypoints as f64;
        }
    }
    Ok(EvalReport {
        alphas: alphas.to_vec(),
        basis,
        samples: data.len(),
        keypoints,
        per_class,
        overall,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datakit::{synth_warp_pairs, BBox, SynthConfig};
    use crate::img::Image;
    use crate::supervision::KeypointPair;

    #[test]
    fn pck_basics() {
        let gt = [(10.0, 10.0), (20.0, 20.0), (30.0, 30.0), (40.0, 40.0)];
        assert_eq!(pck(&gt, &gt, 0.1, (256.0, 256.0)).unwrap(), 1.0);
        let edge = [(10.0 + 25.6, 10.0)];
        assert_eq!(pck(&edge, &gt[..1], 0.1, (256.0, 256.0)).unwrap(), 1.0);
        let pred = [(10.0, 10.0), (20.0, 21.0), (30.0, 30.0), (90.0, 40.0)];
        assert_eq!(pck(&pred, &gt, 0.1, (64.0, 64.0)).unwrap(), 0.75);
        assert!(pck(&pred[..2], &gt, 0.1, (64.0, 64.0)).is_err());
        assert!(pck(&pred, &gt, 1.5, (64.0, 64.0)).is_err());
    }

    fn pair(cat: &str, kps: Vec<KeypointPair>) -> PairSample {
        PairSample {
            source: Image::filled(3, 32, 32, 0.5),
            target: Image::filled(3, 32, 32, 0.5),
            keypoints: kps,
            category: cat.into(),
            flow: Some(FlowField::identity(32, 32, 1.0)),
            bbox_source: Some(BBox([0.0, 0.0, 10.0, 20.0])),
            bbox_target: None,
        }
    }

    #[test]
    fn hand_built_fixture() {
        // identity predictions: error = |source - target|
        let kp = |s: (f64, f64), t: (f64, f64)| KeypointPair {
            source: s,
            target: t,
        };
        let data = vec![
            pair(
                "a",
                vec![
                    kp((10.0, 10.0), (10.0, 10.0)),
                    kp((10.0, 10.0), (13.0, 14.0)),
                ],
            ),
            pair(
                "b",
                vec![
                    kp((5.0, 5.0), (5.0, 6.0)),
                    kp((20.0, 20.0), (20.0, 29.0)),
                    kp((1.0, 1.0), (1.0, 1.0)),
                ],
            ),
        ];
        let r = evaluate(&IdentityModel, &data, &[0.1, 0.2], Basis::Image).unwrap();
        // thresholds 3.2 and 6.4 px; errors a: 0, 5; b: 1, 9, 0
        assert_eq!(r.per_class["a"].correct, vec![1, 2]);
        assert_eq!(r.per_class["b"].correct, vec![2, 2]);
        assert_eq!(r.overall, vec![3.0 / 5.0, 4.0 / 5.0]);
        let rb = evaluate(&IdentityModel, &data, &[0.25], Basis::Bbox).unwrap();
        // bbox max side 20 -> 5 px, boundary inclusive
        assert_eq!(rb.per_class["a"].correct, vec![2]);
        assert!(r.table().contains("overall"));
    }

    #[test]
    fn oracle_is_perfect_on_synthetic_pairs() {
        let data = synth_warp_pairs(4, 4, &SynthConfig::default()).unwrap();
        let r = evaluate(&OracleModel, &data, &[0.05, 0.1], Basis::Image).unwrap();
        assert_eq!(r.overall, vec![1.0, 1.0]);
        assert_eq!(r.keypoints, 32);
    }
}
