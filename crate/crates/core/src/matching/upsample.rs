use super::CorrelationVolume;
use crate::error::{invalid_arg, Result};

/// Two-tap corner-aligned interpolation weights `(i0, i1, t)` for each output index.
fn taps(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    (0..n_out)
        .map(|o| {
            if n_in == 1 || n_out == 1 {
                return (0, 0, 0.0);
            }
            let pos = o as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
            let i0 = (pos.floor() as usize).min(n_in - 2);
            (i0, i0 + 1, pos - i0 as f64)
        })
        .collect()
}

fn split(dims: &[usize; 4], axis: usize) -> (usize, usize) {
    let outer: usize = dims[..axis].iter().product();
    let inner: usize = dims[axis + 1..].iter().product();
    (outer, inner)
}

fn interp_axis(data: &[f64], dims: &mut [usize; 4], axis: usize, n_out: usize) -> Vec<f64> {
    let n_in = dims[axis];
    let (outer, inner) = split(dims, axis);
    let tap = taps(n_in, n_out);
    let mut out = vec![0.0; outer * n_out * inner];
    for o in 0..outer {
        let src = &data[o * n_in * inner..(o + 1) * n_in * inner];
        let dst = &mut out[o * n_out * inner..(o + 1) * n_out * inner];
        for (q, &(i0, i1, t)) in tap.iter().enumerate() {
            let a = &src[i0 * inner..(i0 + 1) * inner];
            let b = &src[i1 * inner..(i1 + 1) * inner];
            for (d, (x, y)) in dst[q * inner..(q + 1) * inner]
                .iter_mut()
                .zip(a.iter().zip(b))
            {
                *d = (1.0 - t) * x + t * y;
            }
        }
    }
    dims[axis] = n_out;
    out
}

fn interp_axis_transpose(
    grad: &[f64],
    dims: &mut [usize; 4],
    axis: usize,
    n_in: usize,
) -> Vec<f64> {
    let n_out = dims[axis];
    let (outer, inner) = split(dims, axis);
    let tap = taps(n_in, n_out);
    let mut out = vec![0.0; outer * n_in * inner];
    for o in 0..outer {
        let src = &grad[o * n_out * inner..(o + 1) * n_out * inner];
        let dst = &mut out[o * n_in * inner..(o + 1) * n_in * inner];
        for (q, &(i0, i1, t)) in tap.iter().enumerate() {
            let g = &src[q * inner..(q + 1) * inner];
            for (e, gv) in g.iter().enumerate() {
                dst[i0 * inner + e] += (1.0 - t) * gv;
                dst[i1 * inner + e] += t * gv;
            }
        }
    }
    dims[axis] = n_in;
    out
}

/// Corner-aligned separable bilinear upsampling of all four axes by `factor`.
///
/// Target axes are interpolated first, then source axes. Each axis of length `n` becomes
/// `n·factor` and the corner entries are reproduced exactly. The output stride is the
/// input stride divided by `factor`.
pub fn upsample_correlation(c: &CorrelationVolume, factor: usize) -> Result<CorrelationVolume> {
    if factor < 1 {
        return Err(invalid_arg("upsampling factor must be at least 1"));
    }
    if factor == 1 {
        return Ok(c.clone());
    }
    let mut dims = c.dims();
    let mut data = c.values.clone();
    for axis in [3, 2, 1, 0] {
        let n_out = dims[axis] * factor;
        data = interp_axis(&data, &mut dims, axis, n_out);
    }
    Ok(CorrelationVolume {
        src_h: dims[0],
        src_w: dims[1],
        tgt_h: dims[2],
        tgt_w: dims[3],
        stride: c.stride / factor as f64,
        values: data,
    })
}

/// Adjoint of [`upsample_correlation`]: maps a gradient on the fine volume to the coarse one.
pub fn upsample_correlation_backward(
    coarse: &CorrelationVolume,
    factor: usize,
    grad: &[f64],
) -> Vec<f64> {
    if factor <= 1 {
        return grad.to_vec();
    }
    let coarse_dims = coarse.dims();
    let mut dims = coarse_dims.map(|d| d * factor);
    let mut g = grad.to_vec();
    for axis in [0, 1, 2, 3] {
        g = interp_axis_transpose(&g, &mut dims, axis, coarse_dims[axis]);
    }
    g
}
