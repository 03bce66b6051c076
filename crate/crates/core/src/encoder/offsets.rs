use crate::error::{invalid_arg, Result};

/// Unit steps of the eight rays, clockwise from north: N, NE, E, SE, S, SW, W, NW.
const RAYS: [(isize, isize); 8] = [
    (-1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
    (1, 0),
    (1, -1),
    (0, -1),
    (-1, -1),
];

fn check_kernel(k: usize) -> Result<()> {
    if k == 0 || k.is_multiple_of(2) {
        return Err(invalid_arg(format!(
            "kernel size must be a positive odd integer, got {k}"
        )));
    }
    Ok(())
}

/// Offsets `(dr, dc)` on the criss-cross and diagonal lines of a `k×k` window, center excluded.
///
/// Rays are visited in the order N, NE, E, SE, S, SW, W, NW and each ray runs from
/// radius 1 out to `k / 2`, giving `4·(k−1)` offsets.
pub fn sparse_offsets(k: usize) -> Result<Vec<(isize, isize)>> {
    check_kernel(k)?;
    let radius = (k / 2) as isize;
    Ok(RAYS
        .iter()
        .flat_map(|&(dr, dc)| (1..=radius).map(move |r| (dr * r, dc * r)))
        .collect())
}

/// Every offset of a `k×k` window except the center, in row-major order.
pub fn dense_offsets(k: usize) -> Result<Vec<(isize, isize)>> {
    check_kernel(k)?;
    let radius = (k / 2) as isize;
    let mut out = Vec::with_capacity(k * k - 1);
    for dr in -radius..=radius {
        for dc in -radius..=radius {
            if (dr, dc) != (0, 0) {
                out.push((dr, dc));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn k3_is_the_unit_ring_in_ray_order() {
        assert_eq!(
            sparse_offsets(3).unwrap(),
            vec![
                (-1, 0),
                (-1, 1),
                (0, 1),
                (1, 1),
                (1, 0),
                (1, -1),
                (0, -1),
                (-1, -1)
            ]
        );
    }

    #[test]
    fn counts() {
        assert_eq!(sparse_offsets(7).unwrap().len(), 24);
        assert!(sparse_offsets(1).unwrap().is_empty());
        assert_eq!(dense_offsets(7).unwrap().len(), 48);
    }

    #[test]
    fn rejects_even_and_zero() {
        assert!(sparse_offsets(4).is_err());
        assert!(sparse_offsets(0).is_err());
        assert!(dense_offsets(2).is_err());
    }

    #[test]
    fn k7_rays_hold_three_steps_each() {
        let offs = sparse_offsets(7).unwrap();
        for (ray, chunk) in offs.chunks(3).enumerate() {
            let (dr, dc) = RAYS[ray];
            assert_eq!(chunk, &[(dr, dc), (2 * dr, 2 * dc), (3 * dr, 3 * dc)]);
        }
    }

    #[test]
    fn unique_symmetric_and_centerless() {
        for k in (1..=31).step_by(2) {
            let offs = sparse_offsets(k).unwrap();
            let set: HashSet<_> = offs.iter().copied().collect();
            assert_eq!(set.len(), offs.len());
            assert!(!set.contains(&(0, 0)));
            for &(r, c) in &offs {
                assert!(set.contains(&(-r, -c)));
            }
            let dense: HashSet<_> = dense_offsets(k).unwrap().into_iter().collect();
            assert!(set.is_subset(&dense));
        }
    }
}
