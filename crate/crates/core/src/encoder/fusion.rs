use super::{ContextDescriptorMap, ContextFeatureMap, FeatureMap};
use crate::error::{invalid_arg, Result};
use crate::linalg::{gemm, Op};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Linear fusion of `[z; s]` into `d_g` channels: `matrix` is row-major `(d_z + D) × d_g`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights {
    pub in_dim: usize,
    pub out_dim: usize,
    pub matrix: Vec<f64>,
    pub bias: Vec<f64>,
}

impl FusionWeights {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            matrix: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    /// Uniform `±1/√in_dim` matrix entries, zero bias.
    pub fn init<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        Self {
            in_dim,
            out_dim,
            matrix: (0..in_dim * out_dim)
                .map(|_| rng.gen_range(-bound..bound))
                .collect(),
            bias: vec![0.0; out_dim],
        }
    }

    fn check(&self, f: &FeatureMap, s: &ContextDescriptorMap) -> Result<()> {
        if f.height != s.height || f.width != s.width {
            return Err(invalid_arg(format!(
                "feature grid {}x{} does not match descriptor grid {}x{}",
                f.height, f.width, s.height, s.width
            )));
        }
        if self.in_dim != f.channels + s.len {
            return Err(invalid_arg(format!(
                "fusion expects {} input channels, got {} + {}",
                self.in_dim, f.channels, s.len
            )));
        }
        if self.matrix.len() != self.in_dim * self.out_dim || self.bias.len() != self.out_dim {
            return Err(invalid_arg("fusion weight buffers have inconsistent sizes"));
        }
        Ok(())
    }
}

/// Gradients produced by [`fuse_context_backward`].
#[derive(Clone, Debug)]
pub struct FusionGrads {
    pub features: Vec<f64>,
    pub descriptor: Vec<f64>,
    pub weights: FusionWeights,
}

fn stacked_input(f: &FeatureMap, s: &ContextDescriptorMap) -> Vec<f64> {
    let mut x = Vec::with_capacity(f.values.len() + s.values.len());
    x.extend_from_slice(&f.values);
    x.extend_from_slice(&s.values);
    x
}

/// `g(i,j) = ReLU(Wᵀ·[z(i,j); s(i,j)] + b)`.
pub fn fuse_context(
    f: &FeatureMap,
    s: &ContextDescriptorMap,
    w: &FusionWeights,
) -> Result<ContextFeatureMap> {
    w.check(f, s)?;
    let n = f.cells();
    // channel-major stacking is already the transposed design matrix [in × cells]
    let x = stacked_input(f, s);
    let mut out = vec![0.0; w.out_dim * n];
    for (o, row) in out.chunks_exact_mut(n).enumerate() {
        row.fill(w.bias[o]);
    }
    gemm(
        w.out_dim,
        w.in_dim,
        n,
        1.0,
        &w.matrix,
        Op::T,
        &x,
        Op::N,
        1.0,
        &mut out,
    );
    for v in &mut out {
        *v = v.max(0.0);
    }
    FeatureMap::new(w.out_dim, f.height, f.width, f.stride, out)
}

/// Backpropagates `grad` (w.r.t. the fused output `g`) to features, descriptor and weights.
pub fn fuse_context_backward(
    f: &FeatureMap,
    s: &ContextDescriptorMap,
    w: &FusionWeights,
    output: &ContextFeatureMap,
    grad: &[f64],
) -> Result<FusionGrads> {
    w.check(f, s)?;
    let n = f.cells();
    if grad.len() != w.out_dim * n || output.values.len() != grad.len() {
        return Err(invalid_arg("fusion gradient has the wrong size"));
    }
    let pre: Vec<f64> = grad
        .iter()
        .zip(&output.values)
        .map(|(g, o)| if *o > 0.0 { *g } else { 0.0 })
        .collect();
    let x = stacked_input(f, s);
    let mut gw = FusionWeights::zeros(w.in_dim, w.out_dim);
    gemm(
        w.in_dim,
        n,
        w.out_dim,
        1.0,
        &x,
        Op::N,
        &pre,
        Op::T,
        0.0,
        &mut gw.matrix,
    );
    for (o, row) in pre.chunks_exact(n).enumerate() {
        gw.bias[o] = row.iter().sum();
    }
    let mut gx = vec![0.0; w.in_dim * n];
    gemm(
        w.in_dim,
        w.out_dim,
        n,
        1.0,
        &w.matrix,
        Op::N,
        &pre,
        Op::N,
        0.0,
        &mut gx,
    );
    let descriptor = gx.split_off(f.values.len());
    Ok(FusionGrads {
        features: gx,
        descriptor,
        weights: gw,
    })
}
