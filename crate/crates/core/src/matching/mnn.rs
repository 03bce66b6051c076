use super::CorrelationVolume;
use crate::error::{invalid_input, Result};

/// Division guard for the max ratios.
pub const MNN_EPS: f64 = 1e-30;

/// Per-target maximum over sources and per-source maximum over targets, with the
/// first index attaining each maximum.
struct Maxima {
    tgt_max: Vec<f64>,
    tgt_arg: Vec<usize>,
    src_max: Vec<f64>,
    src_arg: Vec<usize>,
}

fn maxima(c: &CorrelationVolume) -> Maxima {
    let (ns, nt) = (c.sources(), c.targets());
    let mut m = Maxima {
        tgt_max: vec![f64::NEG_INFINITY; nt],
        tgt_arg: vec![0; nt],
        src_max: vec![f64::NEG_INFINITY; ns],
        src_arg: vec![0; ns],
    };
    for s in 0..ns {
        let row = &c.values[s * nt..(s + 1) * nt];
        for (t, &v) in row.iter().enumerate() {
            if v > m.tgt_max[t] {
                m.tgt_max[t] = v;
                m.tgt_arg[t] = s;
            }
            if v > m.src_max[s] {
                m.src_max[s] = v;
                m.src_arg[s] = t;
            }
        }
    }
    m
}

/// Mutual nearest neighbor soft filtering:
/// `ĉ = c · (c / (max_src c + ε)) · (c / (max_tgt c + ε))`.
///
/// The first ratio compares an entry to the best source for its target, the second to the
/// best target for its source. Requires nonnegative input.
pub fn mutual_nn_filter(c: &CorrelationVolume) -> Result<CorrelationVolume> {
    if c.values.iter().any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(invalid_input(
            "mutual nearest neighbor filter needs finite nonnegative scores",
        ));
    }
    let m = maxima(c);
    let nt = c.targets();
    let mut out = c.clone();
    for (idx, v) in out.values.iter_mut().enumerate() {
        let (s, t) = (idx / nt, idx % nt);
        let x = *v;
        *v = x * (x / (m.tgt_max[t] + MNN_EPS)) * (x / (m.src_max[s] + MNN_EPS));
    }
    Ok(out)
}

/// Gradient w.r.t. the unfiltered volume, including the paths through both maxima.
pub fn mutual_nn_backward(c: &CorrelationVolume, grad: &[f64]) -> Vec<f64> {
    let m = maxima(c);
    let nt = c.targets();
    let mut out = vec![0.0; c.values.len()];
    for (idx, (&x, &g)) in c.values.iter().zip(grad).enumerate() {
        if g == 0.0 || x == 0.0 {
            continue;
        }
        let (s, t) = (idx / nt, idx % nt);
        let dt = m.tgt_max[t] + MNN_EPS;
        let ds = m.src_max[s] + MNN_EPS;
        let cube = x * x * x;
        out[idx] += g * 3.0 * x * x / (dt * ds);
        out[m.tgt_arg[t] * nt + t] -= g * cube / (dt * dt * ds);
        out[s * nt + m.src_arg[s]] -= g * cube / (dt * ds * ds);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn volume(dims: [usize; 4], values: Vec<f64>) -> CorrelationVolume {
        CorrelationVolume {
            src_h: dims[0],
            src_w: dims[1],
            tgt_h: dims[2],
            tgt_w: dims[3],
            stride: 16.0,
            values,
        }
    }

    fn random(seed: u64) -> CorrelationVolume {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        volume(
            [3, 3, 3, 3],
            (0..81).map(|_| rng.gen_range(0.0..1.0)).collect(),
        )
    }

    #[test]
    fn single_entry_is_unchanged() {
        let out = mutual_nn_filter(&volume([1, 1, 1, 1], vec![0.42])).unwrap();
        assert!((out.values[0] - 0.42).abs() < 1e-15);
    }

    #[test]
    fn uniform_volume_is_unchanged() {
        let out = mutual_nn_filter(&volume([2, 2, 2, 2], vec![0.3; 16])).unwrap();
        assert!(out.values.iter().all(|v| (v - 0.3).abs() < 1e-15));
    }

    #[test]
    fn matches_formula_loop() {
        let c = random(3);
        let out = mutual_nn_filter(&c).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    for l in 0..3 {
                        let mut max_src = 0.0f64;
                        let mut max_tgt = 0.0f64;
                        for a in 0..3 {
                            for b in 0..3 {
                                max_src = max_src.max(c.at(a, b, k, l));
                                max_tgt = max_tgt.max(c.at(i, j, a, b));
                            }
                        }
                        let x = c.at(i, j, k, l);
                        let expect = x * (x / (max_src + MNN_EPS)) * (x / (max_tgt + MNN_EPS));
                        assert!((out.at(i, j, k, l) - expect).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn negative_input_rejected() {
        let mut c = random(1);
        c.values[5] = -0.1;
        assert!(mutual_nn_filter(&c).is_err());
    }

    #[test]
    fn never_increases_and_keeps_mutual_maxima() {
        let c = random(9);
        let out = mutual_nn_filter(&c).unwrap();
        let nt = c.targets();
        for (idx, (a, b)) in c.values.iter().zip(&out.values).enumerate() {
            assert!(b <= a);
            let (s, t) = (idx / nt, idx % nt);
            let row_max = c.values[s * nt..(s + 1) * nt]
                .iter()
                .cloned()
                .fold(0.0, f64::max);
            let col_max = (0..c.sources())
                .map(|q| c.values[q * nt + t])
                .fold(0.0, f64::max);
            if *a == row_max && *a == col_max {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let c = random(12);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let probe: Vec<f64> = (0..81).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let loss = |v: &CorrelationVolume| -> f64 {
            let o = mutual_nn_filter(v).unwrap();
            o.values.iter().zip(&probe).map(|(a, b)| a * b).sum()
        };
        let an = mutual_nn_backward(&c, &probe);
        let eps = 1e-7;
        for idx in 0..81 {
            let mut p = c.clone();
            p.values[idx] += eps;
            let mut m = c.clone();
            m.values[idx] -= eps;
            let fd = (loss(&p) - loss(&m)) / (2.0 * eps);
            assert!((fd - an[idx]).abs() < 1e-5, "{idx}: {fd} vs {}", an[idx]);
        }
    }
}
