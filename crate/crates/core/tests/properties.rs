//! Property tests for the invariants of each pipeline stage.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use scorr_core::encoder::{
    dense_offsets, fuse_context, self_similarity_dense, self_similarity_sparse, sparse_offsets,
    FeatureMap, FusionWeights,
};
use scorr_core::evalkit::pck;
use scorr_core::matching::{
    correlation_4d, kernel_soft_argmax, mutual_nn_filter, transfer_keypoints, upsample_correlation,
    CorrelationVolume, FlowField, SoftArgmaxParams,
};
use scorr_core::supervision::{
    dilate_mask, gt_loss, pseudo_loss_masked, select_small_loss, selection_ratio, LabelMask,
    SelectionSchedule,
};

fn odd_kernel() -> impl Strategy<Value = usize> {
    (1usize..6).prop_map(|r| 2 * r + 1)
}

fn feature_map(max_c: usize, max_hw: usize) -> impl Strategy<Value = FeatureMap> {
    (1..=max_c, 1..=max_hw, 1..=max_hw).prop_flat_map(|(c, h, w)| {
        prop::collection::vec(-2.0..2.0f64, c * h * w)
            .prop_map(move |v| FeatureMap::new(c, h, w, 16, v).unwrap())
    })
}

fn volume(max_side: usize) -> impl Strategy<Value = CorrelationVolume> {
    (1..=max_side, 1..=max_side, 1..=max_side, 1..=max_side).prop_flat_map(|(a, b, c, d)| {
        prop::collection::vec(0.0..1.0f64, a * b * c * d).prop_map(move |values| {
            CorrelationVolume {
                src_h: a,
                src_w: b,
                tgt_h: c,
                tgt_w: d,
                stride: 4.0,
                values,
            }
        })
    })
}

fn mask(max_hw: usize) -> impl Strategy<Value = LabelMask> {
    (1..=max_hw, 1..=max_hw).prop_flat_map(|(h, w)| {
        prop::collection::vec(prop::bool::weighted(0.2), h * w).prop_map(move |values| LabelMask {
            height: h,
            width: w,
            values,
        })
    })
}

fn flow_pair(max_hw: usize) -> impl Strategy<Value = (FlowField, FlowField)> {
    (1..=max_hw, 1..=max_hw).prop_flat_map(|(h, w)| {
        let n = 2 * h * w;
        (
            prop::collection::vec(-50.0..50.0f64, n),
            prop::collection::vec(-50.0..50.0f64, n),
        )
            .prop_map(move |(a, b)| {
                let mut fa = FlowField::zeros(h, w, 4.0);
                let mut fb = FlowField::zeros(h, w, 4.0);
                fa.values = a;
                fb.values = b;
                (fa, fb)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sparse_offsets_are_symmetric_rays(k in odd_kernel()) {
        let s = sparse_offsets(k).unwrap();
        let d = dense_offsets(k).unwrap();
        prop_assert_eq!(s.len(), 4 * (k - 1));
        prop_assert_eq!(d.len(), k * k - 1);
        for &(r, c) in &s {
            prop_assert!(s.contains(&(-r, -c)));
            prop_assert!(d.contains(&(r, c)));
            prop_assert!(r == 0 || c == 0 || r.abs() == c.abs());
        }
    }

    #[test]
    fn descriptors_lie_in_unit_range(f in feature_map(6, 7), k in odd_kernel()) {
        let s = self_similarity_sparse(&f, k).unwrap();
        prop_assert_eq!(s.len, 4 * (k - 1));
        prop_assert!(s.values.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn sparse_matches_dense_at_ray_offsets(f in feature_map(5, 8), k in prop::sample::select(vec![3usize, 5, 7])) {
        let s = self_similarity_sparse(&f, k).unwrap();
        let d = self_similarity_dense(&f, k).unwrap();
        let dofs = dense_offsets(k).unwrap();
        for (i, off) in sparse_offsets(k).unwrap().iter().enumerate() {
            let j = dofs.iter().position(|o| o == off).unwrap();
            for r in 0..f.height {
                for c in 0..f.width {
                    prop_assert!((s.at(i, r, c) - d.at(j, r, c)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn fused_features_are_nonnegative(f in feature_map(4, 5), seed in any::<u64>()) {
        let s = self_similarity_sparse(&f, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = FusionWeights::init(f.channels + s.len, 6, &mut rng);
        let g = fuse_context(&f, &s, &w).unwrap();
        prop_assert!(g.values.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn correlation_is_clamped_cosine(a in feature_map(4, 4), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = FeatureMap::new(a.channels, 3, 2, a.stride,
            (0..a.channels * 6).map(|_| rand::Rng::gen_range(&mut rng, -1.0..1.0)).collect()).unwrap();
        let c = correlation_4d(&a, &b).unwrap();
        prop_assert_eq!(c.values.len(), a.cells() * b.cells());
        prop_assert!(c.values.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn mutual_filter_never_increases_scores(c in volume(3)) {
        let f = mutual_nn_filter(&c).unwrap();
        for (a, b) in f.values.iter().zip(&c.values) {
            prop_assert!(*a >= 0.0 && *a <= *b);
        }
    }

    #[test]
    fn upsampling_by_one_is_identity_and_stays_in_range(c in volume(3), factor in 1usize..4) {
        prop_assert_eq!(&upsample_correlation(&c, 1).unwrap(), &c);
        let u = upsample_correlation(&c, factor).unwrap();
        let lo = c.values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = c.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(u.values.iter().all(|v| *v >= lo - 1e-12 && *v <= hi + 1e-12));
        prop_assert!(u.at(0, 0, 0, 0) == c.at(0, 0, 0, 0));
    }

    #[test]
    fn soft_argmax_stays_in_source_hull(
        c in volume(4),
        sigma in 0.5..10.0f64,
        tau in 0.005..1.0f64,
    ) {
        let f = kernel_soft_argmax(&c, &SoftArgmaxParams { sigma, tau }).unwrap();
        let s = c.stride;
        for r in 0..f.height {
            for col in 0..f.width {
                let (x, y) = f.get(r, col);
                prop_assert!(x >= 0.5 * s - 1e-9 && x <= (c.src_w as f64 - 0.5) * s + 1e-9);
                prop_assert!(y >= 0.5 * s - 1e-9 && y <= (c.src_h as f64 - 0.5) * s + 1e-9);
            }
        }
    }

    #[test]
    fn transfer_is_linear_in_the_flow(
        (f, g) in flow_pair(5),
        a in -2.0..2.0f64,
        b in -2.0..2.0f64,
        u in 0.0..1.0f64,
        v in 0.0..1.0f64,
    ) {
        let pt = [(u * f.width as f64 * f.stride, v * f.height as f64 * f.stride)];
        let mut mix = f.clone();
        for (m, (x, y)) in mix.values.iter_mut().zip(f.values.iter().zip(&g.values)) {
            *m = a * x + b * y;
        }
        let pf = transfer_keypoints(&f, &pt)[0].unwrap();
        let pg = transfer_keypoints(&g, &pt)[0].unwrap();
        let pm = transfer_keypoints(&mix, &pt)[0].unwrap();
        prop_assert!((pm.0 - (a * pf.0 + b * pg.0)).abs() < 1e-9);
        prop_assert!((pm.1 - (a * pf.1 + b * pg.1)).abs() < 1e-9);
    }

    #[test]
    fn identity_flow_transfers_interior_points_to_themselves(h in 2usize..6, w in 2usize..6, u in 0.0..1.0f64, v in 0.0..1.0f64) {
        let f = FlowField::identity(h, w, 4.0);
        let x = 2.0 + u * (w as f64 - 1.0) * 4.0;
        let y = 2.0 + v * (h as f64 - 1.0) * 4.0;
        let p = transfer_keypoints(&f, &[(x, y)])[0].unwrap();
        prop_assert!((p.0 - x).abs() < 1e-9 && (p.1 - y).abs() < 1e-9);
    }

    #[test]
    fn dilation_is_extensive_and_monotone(m in mask(10), k in odd_kernel()) {
        let d = dilate_mask(&m, k).unwrap();
        let d2 = dilate_mask(&m, k + 2).unwrap();
        prop_assert!(m.is_subset_of(&d));
        prop_assert!(d.is_subset_of(&d2));
        prop_assert_eq!(dilate_mask(&m, 1).unwrap(), m);
    }

    #[test]
    fn selection_takes_the_smallest_ceil_fraction(
        m in mask(8),
        seed in any::<u64>(),
        ratio in 0.0..=1.0f64,
        shift in -5i32..5,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = m.values.len();
        // small integer losses make ties common and shifts exact
        let losses: Vec<f64> = (0..n).map(|_| rand::Rng::gen_range(&mut rng, 0..5) as f64).collect();
        let sel = select_small_loss(&losses, &m, ratio);
        let fg = m.indices();
        prop_assert_eq!(sel.len(), (ratio * fg.len() as f64).ceil() as usize);
        prop_assert!(sel.windows(2).all(|p| p[0] < p[1]));
        prop_assert!(sel.iter().all(|p| m.values[*p]));
        let worst_in = sel.iter().map(|&p| losses[p]).fold(f64::NEG_INFINITY, f64::max);
        for p in fg.iter().filter(|p| !sel.contains(p)) {
            prop_assert!(losses[*p] >= worst_in);
        }
        let shifted: Vec<f64> = losses.iter().map(|l| l + shift as f64).collect();
        prop_assert_eq!(select_small_loss(&shifted, &m, ratio), sel);
    }

    #[test]
    fn selection_ratio_ramps_monotonically(
        r0 in 0.0..=1.0f64,
        span in 0.0..=1.0f64,
        ramp in 1usize..20,
        t in 0usize..40,
    ) {
        let s = SelectionSchedule { r_start: r0, r_end: r0 + (1.0 - r0) * span, ramp_epochs: ramp };
        let a = selection_ratio(t, &s);
        let b = selection_ratio(t + 1, &s);
        prop_assert!(a <= b);
        prop_assert!(a >= s.r_start - 1e-12 && a <= s.r_end + 1e-12);
        prop_assert_eq!(selection_ratio(0, &s), s.r_start);
        prop_assert!((selection_ratio(ramp + t, &s) - s.r_end).abs() < 1e-12);
    }

    #[test]
    fn masked_losses_are_nonnegative_and_masked((a, b) in flow_pair(6), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = LabelMask {
            height: a.height,
            width: a.width,
            values: (0..a.cells()).map(|_| rand::Rng::gen_bool(&mut rng, 0.4)).collect(),
        };
        let l = gt_loss(&a, &b, &m).unwrap();
        prop_assert!(l.mean >= 0.0);
        let p = pseudo_loss_masked(&a, &b, &m).unwrap();
        for (i, v) in p.iter().enumerate() {
            prop_assert!(*v >= 0.0);
            if !m.values[i] {
                prop_assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn pck_is_translation_invariant_and_monotone_in_alpha(
        pts in prop::collection::vec((0i32..64, 0i32..64, -10i32..10, -10i32..10), 1..20),
        t in (-30i32..30, -30i32..30),
        a1 in 0.0..0.5f64,
        da in 0.0..0.5f64,
    ) {
        let gt: Vec<(f64, f64)> = pts.iter().map(|p| (p.0 as f64, p.1 as f64)).collect();
        let pred: Vec<(f64, f64)> = pts.iter().map(|p| ((p.0 + p.2) as f64, (p.1 + p.3) as f64)).collect();
        let mv = |v: &[(f64, f64)]| v.iter().map(|p| (p.0 + t.0 as f64, p.1 + t.1 as f64)).collect::<Vec<_>>();
        let dims = (64.0, 48.0);
        let base = pck(&pred, &gt, a1, dims).unwrap();
        prop_assert_eq!(pck(&mv(&pred), &mv(&gt), a1, dims).unwrap(), base);
        prop_assert!(pck(&pred, &gt, a1 + da, dims).unwrap() >= base);
        prop_assert!((0.0..=1.0).contains(&base));
    }
}
