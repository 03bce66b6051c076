use super::{dense_offsets, sparse_offsets, ContextDescriptorMap, FeatureMap};
use crate::error::{invalid_arg, Result};

fn check(f: &FeatureMap, k: usize) -> Result<()> {
    if k < 3 || k.is_multiple_of(2) {
        return Err(invalid_arg(format!(
            "self-similarity kernel must be odd and at least 3, got {k}"
        )));
    }
    f.ensure_finite()
}

fn neighbor(i: usize, j: usize, (dr, dc): (isize, isize), h: usize, w: usize) -> Option<usize> {
    let r = i as isize + dr;
    let c = j as isize + dc;
    (r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w).then(|| r as usize * w + c as usize)
}

/// Cosine self-similarity at each cell against the given neighbor offsets.
///
/// Out-of-bounds neighbors and zero-norm vectors produce 0.
pub fn self_similarity_with_offsets(
    f: &FeatureMap,
    offsets: &[(isize, isize)],
    kernel_size: usize,
) -> ContextDescriptorMap {
    let (h, w, ch) = (f.height, f.width, f.channels);
    let n = h * w;
    let pm = f.to_pixel_major();
    let norms: Vec<f64> = pm
        .chunks_exact(ch)
        .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let mut values = vec![0.0; offsets.len() * n];
    for (d, &off) in offsets.iter().enumerate() {
        let out = &mut values[d * n..(d + 1) * n];
        for i in 0..h {
            for j in 0..w {
                let p = i * w + j;
                let Some(q) = neighbor(i, j, off, h, w) else {
                    continue;
                };
                let denom = norms[p] * norms[q];
                if denom > 0.0 {
                    let dot: f64 = pm[p * ch..(p + 1) * ch]
                        .iter()
                        .zip(&pm[q * ch..(q + 1) * ch])
                        .map(|(a, b)| a * b)
                        .sum();
                    out[p] = (dot / denom).clamp(-1.0, 1.0);
                }
            }
        }
    }
    ContextDescriptorMap {
        len: offsets.len(),
        height: h,
        width: w,
        kernel_size,
        values,
    }
}

/// Sparse context descriptor: similarity along the eight rays of a `k×k` window, `4·(k−1)` slots.
pub fn self_similarity_sparse(f: &FeatureMap, k: usize) -> Result<ContextDescriptorMap> {
    check(f, k)?;
    Ok(self_similarity_with_offsets(f, &sparse_offsets(k)?, k))
}

/// Full `k×k` self-similarity (`k²−1` slots, row-major offsets).
///
/// Written as a direct per-cell loop over the channel-major map so it can serve as an
/// independent reference for the sparse kernel.
pub fn self_similarity_dense(f: &FeatureMap, k: usize) -> Result<ContextDescriptorMap> {
    check(f, k)?;
    let offsets = dense_offsets(k)?;
    let (h, w) = (f.height, f.width);
    let mut values = vec![0.0; offsets.len() * h * w];
    for i in 0..h {
        for j in 0..w {
            for (d, &(dr, dc)) in offsets.iter().enumerate() {
                let r = i as isize + dr;
                let c = j as isize + dc;
                if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
                    continue;
                }
                let (r, c) = (r as usize, c as usize);
                let mut dot = 0.0;
                let mut na = 0.0;
                let mut nb = 0.0;
                for ch in 0..f.channels {
                    let a = f.at(ch, i, j);
                    let b = f.at(ch, r, c);
                    dot += a * b;
                    na += a * a;
                    nb += b * b;
                }
                if na > 0.0 && nb > 0.0 {
                    values[(d * h + i) * w + j] = (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0);
                }
            }
        }
    }
    Ok(ContextDescriptorMap {
        len: offsets.len(),
        height: h,
        width: w,
        kernel_size: k,
        values,
    })
}

/// Gradient of a loss w.r.t. the feature map, given its gradient w.r.t. the descriptor.
///
/// For `s = cos(u, v)`: `∂s/∂u = (v̂ − s·û)/‖u‖`, symmetrically for `v`.
pub fn self_similarity_backward(
    f: &FeatureMap,
    offsets: &[(isize, isize)],
    grad: &ContextDescriptorMap,
) -> Vec<f64> {
    let (h, w, ch) = (f.height, f.width, f.channels);
    let n = h * w;
    let pm = f.to_pixel_major();
    let norms: Vec<f64> = pm
        .chunks_exact(ch)
        .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let mut gpm = vec![0.0; pm.len()];
    for (d, &off) in offsets.iter().enumerate() {
        for i in 0..h {
            for j in 0..w {
                let p = i * w + j;
                let g = grad.values[d * n + p];
                if g == 0.0 {
                    continue;
                }
                let Some(q) = neighbor(i, j, off, h, w) else {
                    continue;
                };
                let (nu, nv) = (norms[p], norms[q]);
                if nu == 0.0 || nv == 0.0 {
                    continue;
                }
                let u = &pm[p * ch..(p + 1) * ch];
                let v = &pm[q * ch..(q + 1) * ch];
                let s = u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() / (nu * nv);
                for c in 0..ch {
                    let uh = u[c] / nu;
                    let vh = v[c] / nv;
                    gpm[p * ch + c] += g * (vh - s * uh) / nu;
                    gpm[q * ch + c] += g * (uh - s * vh) / nv;
                }
            }
        }
    }
    let mut out = vec![0.0; pm.len()];
    for p in 0..n {
        for c in 0..ch {
            out[c * n + p] = gpm[p * ch + c];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_map(seed: u64, ch: usize, h: usize, w: usize) -> FeatureMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..ch * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        FeatureMap::new(ch, h, w, 16, values).unwrap()
    }

    #[test]
    fn constant_map_interior_is_one() {
        let f = FeatureMap::new(3, 5, 5, 16, vec![0.7; 75]).unwrap();
        let s = self_similarity_sparse(&f, 3).unwrap();
        assert_eq!(s.len, 8);
        for d in 0..8 {
            assert_eq!(s.at(d, 2, 2), 1.0);
        }
        // top-left corner: N neighbor missing
        assert_eq!(s.at(0, 0, 0), 0.0);
        let dense = self_similarity_dense(&f, 3).unwrap();
        assert!((0..8).all(|d| dense.at(d, 1, 1) == 1.0));
    }

    #[test]
    fn zero_map_gives_zero_descriptor() {
        let f = FeatureMap::zeros(4, 4, 4, 16);
        let s = self_similarity_sparse(&f, 3).unwrap();
        assert!(s.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sparse_matches_dense_gather_k5() {
        let f = random_map(3, 4, 8, 8);
        let sparse = self_similarity_sparse(&f, 5).unwrap();
        let dense = self_similarity_dense(&f, 5).unwrap();
        let doffs = dense_offsets(5).unwrap();
        for (d, off) in sparse_offsets(5).unwrap().iter().enumerate() {
            let dd = doffs.iter().position(|o| o == off).unwrap();
            for i in 0..8 {
                for j in 0..8 {
                    assert!((sparse.at(d, i, j) - dense.at(dd, i, j)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn rejects_bad_kernels_and_nan() {
        let f = random_map(1, 2, 3, 3);
        assert!(self_similarity_sparse(&f, 1).is_err());
        assert!(self_similarity_sparse(&f, 4).is_err());
        let mut bad = f.clone();
        bad.values[0] = f64::NAN;
        assert!(self_similarity_sparse(&bad, 3).is_err());
        assert!(self_similarity_dense(&bad, 3).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let f = random_map(11, 3, 4, 4);
        let offs = sparse_offsets(3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let weights: Vec<f64> = (0..offs.len() * 16)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let loss = |m: &FeatureMap| -> f64 {
            let s = self_similarity_with_offsets(m, &offs, 3);
            s.values.iter().zip(&weights).map(|(a, b)| a * b).sum()
        };
        let grad_desc = ContextDescriptorMap {
            len: offs.len(),
            height: 4,
            width: 4,
            kernel_size: 3,
            values: weights.clone(),
        };
        let analytic = self_similarity_backward(&f, &offs, &grad_desc);
        let eps = 1e-6;
        for idx in 0..f.values.len() {
            let mut plus = f.clone();
            plus.values[idx] += eps;
            let mut minus = f.clone();
            minus.values[idx] -= eps;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * eps);
            assert!(
                (fd - analytic[idx]).abs() < 1e-6,
                "idx {idx}: {fd} vs {}",
                analytic[idx]
            );
        }
    }
}
