//! Built-in oracle checks, runnable from the command line without the test harness.
//!
//! Each check compares a fast library routine against a brute-force reimplementation or
//! finite differences on random inputs from a fixed seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::datakit::{synth_warp_pairs, SynthConfig};
use crate::encoder::{
    dense_offsets, self_similarity_dense, self_similarity_sparse, sparse_offsets, FeatureMap,
    FusionWeights,
};
use crate::evalkit::{evaluate, Basis, OracleModel};
use crate::matching::{kernel_soft_argmax, CorrelationVolume, SoftArgmaxParams};
use crate::model::Head;
use crate::supervision::{dilate_mask, gt_loss, gt_loss_grad, select_small_loss, LabelMask};

/// Outcome of one check.
#[derive(Clone, Debug, Serialize)]
pub struct SelfCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn random_map<R: Rng>(rng: &mut R, c: usize, h: usize, w: usize) -> FeatureMap {
    FeatureMap::new(
        c,
        h,
        w,
        16,
        (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .expect("valid shape")
}

fn sce_equivalence(rng: &mut ChaCha8Rng) -> (bool, String) {
    let mut worst: f64 = 0.0;
    for k in [3, 5, 7] {
        let f = random_map(rng, 32, 16, 16);
        let sparse = self_similarity_sparse(&f, k).expect("odd k");
        let dense = self_similarity_dense(&f, k).expect("odd k");
        let dofs = dense_offsets(k).expect("odd k");
        for (d, off) in sparse_offsets(k).expect("odd k").iter().enumerate() {
            let j = dofs
                .iter()
                .position(|o| o == off)
                .expect("ray offset in window");
            for i in 0..f.height {
                for c in 0..f.width {
                    worst = worst.max((sparse.at(d, i, c) - dense.at(j, i, c)).abs());
                }
            }
        }
    }
    (worst < 1e-6, format!("max |sparse - dense| = {worst:.3e}"))
}

fn dilation_scan(rng: &mut ChaCha8Rng) -> (bool, String) {
    for trial in 0..20 {
        let m = LabelMask {
            height: 16,
            width: 16,
            values: (0..256).map(|_| rng.gen_bool(0.05)).collect(),
        };
        let k = [1, 3, 5, 7][trial % 4];
        let d = dilate_mask(&m, k).expect("odd k");
        let r = (k / 2) as isize;
        for i in 0..16isize {
            for j in 0..16isize {
                let mut hit = false;
                for di in -r..=r {
                    for dj in -r..=r {
                        let (a, b) = (i + di, j + dj);
                        if (0..16).contains(&a) && (0..16).contains(&b) {
                            hit |= m.get(a as usize, b as usize);
                        }
                    }
                }
                if hit != d.get(i as usize, j as usize) {
                    return (false, format!("trial {trial}: mismatch at ({i}, {j})"));
                }
            }
        }
    }
    (true, "20 random masks match the window scan".into())
}

fn selection_sort(rng: &mut ChaCha8Rng) -> (bool, String) {
    for trial in 0..20 {
        let n = 64;
        // coarse values force ties
        let losses: Vec<f64> = (0..n).map(|_| rng.gen_range(0..6) as f64 * 0.5).collect();
        let m = LabelMask {
            height: 8,
            width: 8,
            values: (0..n).map(|_| rng.gen_bool(0.6)).collect(),
        };
        let ratio = rng.gen_range(0.0..=1.0);
        let mut fg: Vec<(f64, usize)> = m.indices().into_iter().map(|p| (losses[p], p)).collect();
        fg.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let count = (ratio * fg.len() as f64).ceil() as usize;
        let mut want: Vec<usize> = fg[..count].iter().map(|x| x.1).collect();
        want.sort_unstable();
        if select_small_loss(&losses, &m, ratio) != want {
            return (
                false,
                format!("trial {trial}: selection differs from the sort oracle"),
            );
        }
    }
    (true, "20 random instances match the sort oracle".into())
}

fn one_hot_readout() -> (bool, String) {
    let n: usize = 8;
    let mut v = vec![0.0; n.pow(4)];
    let (k0, l0) = (5, 2);
    for t in 0..n * n {
        v[(k0 * n + l0) * n * n + t] = 1.0;
    }
    let c = CorrelationVolume {
        src_h: n,
        src_w: n,
        tgt_h: n,
        tgt_w: n,
        stride: 1.0,
        values: v,
    };
    let f = kernel_soft_argmax(&c, &SoftArgmaxParams::default()).expect("valid volume");
    let mut worst: f64 = 0.0;
    for r in 0..n {
        for col in 0..n {
            let (x, y) = f.get(r, col);
            worst = worst
                .max((x - 0.5 - l0 as f64).abs())
                .max((y - 0.5 - k0 as f64).abs());
        }
    }
    (worst < 1e-4, format!("max deviation {worst:.3e} cells"))
}

/// Relative error between the analytic gradient of a masked endpoint loss through the matching
/// head and central finite differences, w.r.t. both feature maps, on 3×3 grids.
pub fn head_gradient_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let channels = 4;
    let head = Head {
        kernel_size: 3,
        upsample: 4,
        soft_argmax: SoftArgmaxParams::default(),
        fusion: FusionWeights::init(channels + 8, 6, &mut rng),
    };
    let fa = random_map(&mut rng, channels, 3, 3);
    let fb = random_map(&mut rng, channels, 3, 3);
    let (flow, cache) = head.forward(&fa, &fb).expect("valid head");
    let mask = LabelMask {
        height: flow.height,
        width: flow.width,
        values: (0..flow.cells()).map(|_| rng.gen_bool(0.3)).collect(),
    };
    let mut gt = flow.clone();
    gt.values
        .iter_mut()
        .for_each(|v| *v = rng.gen_range(0.0..48.0));
    let loss = |a: &FeatureMap, b: &FeatureMap| {
        let (f, _) = head.forward(a, b).expect("valid head");
        gt_loss(&f, &gt, &mask).expect("shapes").mean
    };
    let grads = head
        .backward(&cache, &gt_loss_grad(&flow, &gt, &mask))
        .expect("valid cache");
    let h = 1e-6;
    let (mut num, mut den_a, mut den_n) = (0.0, 0.0, 0.0);
    for (which, analytic) in [(0, &grads.source), (1, &grads.target)] {
        for i in 0..analytic.len() {
            let (mut pa, mut pb) = (fa.clone(), fb.clone());
            let (mut ma, mut mb) = (fa.clone(), fb.clone());
            if which == 0 {
                pa.values[i] += h;
                ma.values[i] -= h;
            } else {
                pb.values[i] += h;
                mb.values[i] -= h;
            }
            let fd = (loss(&pa, &pb) - loss(&ma, &mb)) / (2.0 * h);
            num += (fd - analytic[i]).powi(2);
            den_a += analytic[i].powi(2);
            den_n += fd.powi(2);
        }
    }
    num.sqrt() / den_a.sqrt().max(den_n.sqrt()).max(1e-12)
}

fn gradient_check() -> (bool, String) {
    let errs: Vec<f64> = (0..5).map(head_gradient_error).collect();
    let worst = errs.iter().cloned().fold(0.0, f64::max);
    (
        worst < 1e-3,
        format!("worst relative error {worst:.3e} over 5 trials"),
    )
}

fn oracle_pck() -> (bool, String) {
    let data = synth_warp_pairs(11, 5, &SynthConfig::default()).expect("n >= 1");
    let r = evaluate(&OracleModel, &data, &[0.01, 0.1], Basis::Image).expect("dense flows");
    (
        r.overall.iter().all(|p| *p == 1.0),
        format!("oracle PCK {:?}", r.overall),
    )
}

/// Runs every check with a fixed seed.
pub fn run() -> Vec<SelfCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut out = Vec::new();
    let mut push = |name, (passed, detail): (bool, String)| {
        out.push(SelfCheck {
            name,
            passed,
            detail,
        })
    };
    push("sce_sparse_matches_dense", sce_equivalence(&mut rng));
    push("dilation_matches_window_scan", dilation_scan(&mut rng));
    push("selection_matches_sort", selection_sort(&mut rng));
    push("soft_argmax_one_hot", one_hot_readout());
    push("head_gradient_check", gradient_check());
    push("oracle_flow_pck", oracle_pck());
    out
}

#[cfg(test)]
mod tests {
    #[test]
    fn all_checks_pass() {
        for c in super::run() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
