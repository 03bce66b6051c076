use super::FlowField;

/// Bilinearly interpolates the flow at subpixel target locations.
///
/// Cell centers sit at `(idx + 0.5)·stride`; locations between the outermost centers and the
/// image border take the nearest border value. Points outside `[0, width·stride] ×
/// [0, height·stride]` yield `None`.
pub fn transfer_keypoints(f: &FlowField, points: &[(f64, f64)]) -> Vec<Option<(f64, f64)>> {
    let ext_x = f.width as f64 * f.stride;
    let ext_y = f.height as f64 * f.stride;
    points
        .iter()
        .map(|&(x, y)| {
            if f.cells() == 0 || !(0.0..=ext_x).contains(&x) || !(0.0..=ext_y).contains(&y) {
                return None;
            }
            let gx = (x / f.stride - 0.5).clamp(0.0, (f.width - 1) as f64);
            let gy = (y / f.stride - 0.5).clamp(0.0, (f.height - 1) as f64);
            let c0 = (gx.floor() as usize).min(f.width.saturating_sub(2));
            let r0 = (gy.floor() as usize).min(f.height.saturating_sub(2));
            let c1 = (c0 + 1).min(f.width - 1);
            let r1 = (r0 + 1).min(f.height - 1);
            let tx = gx - c0 as f64;
            let ty = gy - r0 as f64;
            let lerp = |a: (f64, f64), b: (f64, f64), t: f64| {
                (a.0 + (b.0 - a.0) * t, a.1 + (b.1 - a.1) * t)
            };
            let top = lerp(f.get(r0, c0), f.get(r0, c1), tx);
            let bottom = lerp(f.get(r1, c0), f.get(r1, c1), tx);
            Some(lerp(top, bottom, ty))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_flow_is_close_to_identity() {
        let f = FlowField::identity(16, 16, 4.0);
        for &(x, y) in &[(0.0, 0.0), (10.3, 33.7), (63.9, 64.0), (31.0, 2.5)] {
            let (px, py) = transfer_keypoints(&f, &[(x, y)])[0].unwrap();
            assert!((px - x).abs() <= 2.0 && (py - y).abs() <= 2.0);
        }
        // exact away from the border
        let (px, py) = transfer_keypoints(&f, &[(10.3, 33.7)])[0].unwrap();
        assert!((px - 10.3).abs() < 1e-12 && (py - 33.7).abs() < 1e-12);
    }

    #[test]
    fn constant_offset_shifts_prediction() {
        let id = FlowField::identity(8, 8, 8.0);
        let mut shifted = id.clone();
        for v in &mut shifted.values[..64] {
            *v += 5.0;
        }
        let pts = [(12.5, 40.0), (1.0, 63.0)];
        let a = transfer_keypoints(&id, &pts);
        let b = transfer_keypoints(&shifted, &pts);
        for (a, b) in a.iter().zip(&b) {
            let (a, b) = (a.unwrap(), b.unwrap());
            assert!((b.0 - a.0 - 5.0).abs() < 1e-12 && (b.1 - a.1).abs() < 1e-12);
        }
    }

    #[test]
    fn outside_points_are_flagged() {
        let f = FlowField::identity(4, 4, 16.0);
        let out = transfer_keypoints(&f, &[(-0.1, 3.0), (20.0, 64.5), (64.0, 64.0)]);
        assert_eq!(out[0], None);
        assert_eq!(out[1], None);
        assert!(out[2].is_some());
    }

    #[test]
    fn single_cell_flow() {
        let mut f = FlowField::zeros(1, 1, 16.0);
        f.set(0, 0, (3.0, 4.0));
        assert_eq!(transfer_keypoints(&f, &[(15.0, 1.0)])[0], Some((3.0, 4.0)));
    }
}
