use serde::{Deserialize, Serialize};

use super::{CorrelationVolume, FlowField};
use crate::error::{invalid_arg, invalid_input, Result};

/// Readout parameters: Gaussian window width `sigma` in grid cells and softmax temperature `tau`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SoftArgmaxParams {
    pub sigma: f64,
    pub tau: f64,
}

impl Default for SoftArgmaxParams {
    fn default() -> Self {
        Self {
            sigma: 5.0,
            tau: 0.02,
        }
    }
}

impl SoftArgmaxParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(invalid_arg(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(invalid_arg(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        Ok(())
    }
}

/// Per-target softmax weights over all sources, plus the Gaussian window used to build them.
struct Column {
    weights: Vec<f64>,
    window: Vec<f64>,
    er: f64,
    ec: f64,
}

fn gaussian_table(n: usize, sigma: f64) -> Vec<f64> {
    (0..n)
        .map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp())
        .collect()
}

fn column(
    c: &CorrelationVolume,
    t: usize,
    params: &SoftArgmaxParams,
    gr: &[f64],
    gc: &[f64],
    scratch: &mut Vec<f64>,
) -> Column {
    let nt = c.targets();
    let ns = c.sources();
    scratch.clear();
    scratch.extend((0..ns).map(|s| c.values[s * nt + t]));

    // first maximum wins
    let mut m = 0;
    for (s, v) in scratch.iter().enumerate() {
        if *v > scratch[m] {
            m = s;
        }
    }
    let (mr, mc) = (m / c.src_w, m % c.src_w);

    let mut window = vec![0.0; ns];
    let mut weights = vec![0.0; ns];
    let mut top = f64::NEG_INFINITY;
    for s in 0..ns {
        let (a, b) = (s / c.src_w, s % c.src_w);
        let g = gr[a.abs_diff(mr)] * gc[b.abs_diff(mc)];
        window[s] = g;
        weights[s] = scratch[s] * g / params.tau;
        top = top.max(weights[s]);
    }
    let mut z = 0.0;
    for w in weights.iter_mut() {
        *w = (*w - top).exp();
        z += *w;
    }
    let (mut er, mut ec) = (0.0, 0.0);
    for (s, w) in weights.iter_mut().enumerate() {
        *w /= z;
        er += *w * (s / c.src_w) as f64;
        ec += *w * (s % c.src_w) as f64;
    }
    Column {
        weights,
        window,
        er,
        ec,
    }
}

/// Kernel soft-argmax readout of a target→source flow.
///
/// For every target cell the hard argmax over sources (first maximum in row-major order) centers
/// a Gaussian window; the window-weighted scores pass through a softmax at temperature `tau` and
/// the expected source grid position becomes the flow, in pixels `(index + 0.5)·stride`.
pub fn kernel_soft_argmax(c: &CorrelationVolume, params: &SoftArgmaxParams) -> Result<FlowField> {
    params.validate()?;
    if c.sources() == 0 || c.targets() == 0 {
        return Err(invalid_input("correlation volume is empty"));
    }
    let gr = gaussian_table(c.src_h, params.sigma);
    let gc = gaussian_table(c.src_w, params.sigma);
    let mut flow = FlowField::zeros(c.tgt_h, c.tgt_w, c.stride);
    let mut scratch = Vec::with_capacity(c.sources());
    for t in 0..c.targets() {
        let col = column(c, t, params, &gr, &gc, &mut scratch);
        flow.set(
            t / c.tgt_w,
            t % c.tgt_w,
            ((col.ec + 0.5) * c.stride, (col.er + 0.5) * c.stride),
        );
    }
    Ok(flow)
}

/// Gradient of a loss with respect to the volume, given its gradient `grad` on the flow
/// (`[2 × tgt_h × tgt_w]`). The hard argmax is treated as a constant.
pub fn kernel_soft_argmax_backward(
    c: &CorrelationVolume,
    params: &SoftArgmaxParams,
    grad: &[f64],
) -> Vec<f64> {
    let nt = c.targets();
    let gr = gaussian_table(c.src_h, params.sigma);
    let gc = gaussian_table(c.src_w, params.sigma);
    let mut out = vec![0.0; c.values.len()];
    let mut scratch = Vec::with_capacity(c.sources());
    for t in 0..nt {
        let gx = grad[t] * c.stride;
        let gy = grad[nt + t] * c.stride;
        if gx == 0.0 && gy == 0.0 {
            continue;
        }
        let col = column(c, t, params, &gr, &gc, &mut scratch);
        for (s, w) in col.weights.iter().enumerate() {
            let a = (s / c.src_w) as f64;
            let b = (s % c.src_w) as f64;
            let dlogit = w * ((a - col.er) * gy + (b - col.ec) * gx);
            out[s * nt + t] = dlogit * col.window[s] / params.tau;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn vol(n: usize, values: Vec<f64>) -> CorrelationVolume {
        CorrelationVolume {
            src_h: n,
            src_w: n,
            tgt_h: n,
            tgt_w: n,
            stride: 4.0,
            values,
        }
    }

    #[test]
    fn one_hot_recovers_peak() {
        let n: usize = 6;
        let mut v = vec![0.0; n.pow(4)];
        let (k0, l0) = (4, 1);
        for t in 0..n * n {
            v[(k0 * n + l0) * n * n + t] = 1.0;
        }
        let flow = kernel_soft_argmax(&vol(n, v), &SoftArgmaxParams::default()).unwrap();
        for r in 0..n {
            for c in 0..n {
                let (x, y) = flow.get(r, c);
                assert!((x / 4.0 - 0.5 - l0 as f64).abs() < 1e-4);
                assert!((y / 4.0 - 0.5 - k0 as f64).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn uniform_volume_gives_window_centroid() {
        let n: usize = 4;
        let p = SoftArgmaxParams {
            sigma: 1.5,
            tau: 0.5,
        };
        let flow = kernel_soft_argmax(&vol(n, vec![0.7; n.pow(4)]), &p).unwrap();
        let (mut z, mut er, mut ec) = (0.0, 0.0, 0.0);
        for a in 0..n {
            for b in 0..n {
                let g = (-((a * a + b * b) as f64) / (2.0 * 1.5 * 1.5)).exp();
                let w = (0.7 * g / 0.5).exp();
                z += w;
                er += w * a as f64;
                ec += w * b as f64;
            }
        }
        let (x, y) = flow.get(2, 3);
        assert!((x - (ec / z + 0.5) * 4.0).abs() < 1e-9);
        assert!((y - (er / z + 0.5) * 4.0).abs() < 1e-9);
    }

    #[test]
    fn equal_peaks_resolve_to_first() {
        let n: usize = 8;
        let mut v = vec![0.0; n.pow(4)];
        for t in 0..n * n {
            v[(n + 1) * n * n + t] = 1.0; // (1,1)
            v[(6 * n + 6) * n * n + t] = 1.0; // (6,6)
        }
        let p = SoftArgmaxParams {
            sigma: 1.0,
            tau: 0.02,
        };
        let flow = kernel_soft_argmax(&vol(n, v), &p).unwrap();
        let (x, y) = flow.get(0, 0);
        assert!((x - 6.0).abs() < 1e-6 && (y - 6.0).abs() < 1e-6, "{x} {y}");
    }

    #[test]
    fn rejects_bad_params_and_empty() {
        let c = vol(2, vec![0.1; 16]);
        assert!(kernel_soft_argmax(
            &c,
            &SoftArgmaxParams {
                sigma: 0.0,
                tau: 1.0
            }
        )
        .is_err());
        assert!(kernel_soft_argmax(
            &c,
            &SoftArgmaxParams {
                sigma: 1.0,
                tau: -1.0
            }
        )
        .is_err());
        assert!(kernel_soft_argmax(&vol(0, vec![]), &SoftArgmaxParams::default()).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 3;
        let c = vol(n, (0..81).map(|_| rng.gen_range(0.0..1.0)).collect());
        let p = SoftArgmaxParams {
            sigma: 2.0,
            tau: 0.3,
        };
        let g: Vec<f64> = (0..18).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let loss = |c: &CorrelationVolume| -> f64 {
            let f = kernel_soft_argmax(c, &p).unwrap();
            f.values.iter().zip(&g).map(|(a, b)| a * b).sum()
        };
        let an = kernel_soft_argmax_backward(&c, &p, &g);
        let h = 1e-6;
        for i in 0..c.values.len() {
            let mut cp = c.clone();
            cp.values[i] += h;
            let mut cm = c.clone();
            cm.values[i] -= h;
            let fd = (loss(&cp) - loss(&cm)) / (2.0 * h);
            assert!(
                (fd - an[i]).abs() < 1e-6 * (1.0 + fd.abs()),
                "{i}: {fd} vs {}",
                an[i]
            );
        }
    }
}
