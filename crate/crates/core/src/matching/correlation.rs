use super::CorrelationVolume;
use crate::encoder::ContextFeatureMap;
use crate::error::{invalid_arg, Result};
use crate::linalg::{gemm, Op};

/// Unit-normalized pixel-major vectors plus their norms; zero vectors stay zero.
fn normalized(g: &ContextFeatureMap) -> (Vec<f64>, Vec<f64>) {
    let d = g.channels;
    let mut pm = g.to_pixel_major();
    let mut norms = Vec::with_capacity(g.cells());
    for v in pm.chunks_exact_mut(d) {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.0 {
            v.iter_mut().for_each(|x| *x /= n);
        }
        norms.push(n);
    }
    (pm, norms)
}

fn check(a: &ContextFeatureMap, b: &ContextFeatureMap) -> Result<()> {
    if a.channels != b.channels {
        return Err(invalid_arg(format!(
            "correlation needs equal channel counts, got {} and {}",
            a.channels, b.channels
        )));
    }
    Ok(())
}

/// `c[i,j,k,l] = max(0, cos(g_a(i,j), g_b(k,l)))`, zero when either vector has zero norm.
pub fn correlation_4d(a: &ContextFeatureMap, b: &ContextFeatureMap) -> Result<CorrelationVolume> {
    check(a, b)?;
    let (na, nb, d) = (a.cells(), b.cells(), a.channels);
    let (ua, _) = normalized(a);
    let (ub, _) = normalized(b);
    let mut values = vec![0.0; na * nb];
    gemm(na, d, nb, 1.0, &ua, Op::N, &ub, Op::T, 0.0, &mut values);
    values.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    Ok(CorrelationVolume {
        src_h: a.height,
        src_w: a.width,
        tgt_h: b.height,
        tgt_w: b.width,
        stride: a.stride as f64,
        values,
    })
}

fn unnormalize_grad(pm_unit: &[f64], norms: &[f64], grad_unit: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; grad_unit.len()];
    for (p, &n) in norms.iter().enumerate() {
        if n == 0.0 {
            continue;
        }
        let u = &pm_unit[p * d..(p + 1) * d];
        let g = &grad_unit[p * d..(p + 1) * d];
        let proj: f64 = u.iter().zip(g).map(|(a, b)| a * b).sum();
        for c in 0..d {
            out[p * d + c] = (g[c] - proj * u[c]) / n;
        }
    }
    out
}

fn to_channel_major(pm: &[f64], cells: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; pm.len()];
    for p in 0..cells {
        for c in 0..d {
            out[c * cells + p] = pm[p * d + c];
        }
    }
    out
}

/// Gradients w.r.t. both feature maps (channel-major) given the gradient w.r.t. the volume.
pub fn correlation_4d_backward(
    a: &ContextFeatureMap,
    b: &ContextFeatureMap,
    volume: &CorrelationVolume,
    grad: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    check(a, b)?;
    let (na, nb, d) = (a.cells(), b.cells(), a.channels);
    if grad.len() != na * nb {
        return Err(invalid_arg("correlation gradient has the wrong size"));
    }
    let (ua, norm_a) = normalized(a);
    let (ub, norm_b) = normalized(b);
    let masked: Vec<f64> = grad
        .iter()
        .zip(&volume.values)
        .map(|(g, c)| if *c > 0.0 { *g } else { 0.0 })
        .collect();
    let mut gua = vec![0.0; na * d];
    gemm(na, nb, d, 1.0, &masked, Op::N, &ub, Op::N, 0.0, &mut gua);
    let mut gub = vec![0.0; nb * d];
    gemm(nb, na, d, 1.0, &masked, Op::T, &ua, Op::N, 0.0, &mut gub);
    let ga = unnormalize_grad(&ua, &norm_a, &gua, d);
    let gb = unnormalize_grad(&ub, &norm_b, &gub, d);
    Ok((to_channel_major(&ga, na, d), to_channel_major(&gb, nb, d)))
}
