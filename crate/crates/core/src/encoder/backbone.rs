use super::FeatureMap;
use crate::error::{invalid_input, Result};
use crate::img::Image;
use crate::linalg::{gemm, Op};
use rand::Rng;
use serde::{Deserialize, Serialize};

const KERNEL: usize = 3;
const STEP: usize = 2;
const PAD: usize = 1;

/// Anything that turns a normalized RGB image into a feature map.
///
/// A pretrained extractor can be plugged in here as long as it honours `stride()`.
pub trait FeatureExtractor {
    fn extract(&self, image: &Image) -> Result<FeatureMap>;
    fn stride(&self) -> usize;
    fn out_channels(&self) -> usize;
}

/// 3×3 convolution, stride 2, zero padding 1, followed by ReLU.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub in_ch: usize,
    pub out_ch: usize,
    /// Row-major `[out_ch × (in_ch·3·3)]`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

fn out_len(n: usize) -> usize {
    (n + 2 * PAD - KERNEL) / STEP + 1
}

impl ConvLayer {
    pub fn zeros(in_ch: usize, out_ch: usize) -> Self {
        Self {
            in_ch,
            out_ch,
            weight: vec![0.0; out_ch * in_ch * KERNEL * KERNEL],
            bias: vec![0.0; out_ch],
        }
    }

    /// Weights and biases uniform in `±1/√fan_in`.
    pub fn init<R: Rng>(in_ch: usize, out_ch: usize, rng: &mut R) -> Self {
        let fan_in = in_ch * KERNEL * KERNEL;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut layer = Self::zeros(in_ch, out_ch);
        layer
            .weight
            .iter_mut()
            .for_each(|w| *w = rng.gen_range(-bound..bound));
        layer
            .bias
            .iter_mut()
            .for_each(|b| *b = rng.gen_range(-bound..bound));
        layer
    }

    fn im2col(&self, input: &[f64], h: usize, w: usize) -> Vec<f64> {
        let (ho, wo) = (out_len(h), out_len(w));
        let cols_n = ho * wo;
        let mut cols = vec![0.0; self.in_ch * KERNEL * KERNEL * cols_n];
        for c in 0..self.in_ch {
            let plane = &input[c * h * w..(c + 1) * h * w];
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let row = (c * KERNEL + ky) * KERNEL + kx;
                    let dst = &mut cols[row * cols_n..(row + 1) * cols_n];
                    for oy in 0..ho {
                        let y = (oy * STEP + ky) as isize - PAD as isize;
                        if y < 0 || y >= h as isize {
                            continue;
                        }
                        let src = &plane[y as usize * w..(y as usize + 1) * w];
                        for ox in 0..wo {
                            let x = (ox * STEP + kx) as isize - PAD as isize;
                            if x >= 0 && x < w as isize {
                                dst[oy * wo + ox] = src[x as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[f64], h: usize, w: usize) -> Vec<f64> {
        let (ho, wo) = (out_len(h), out_len(w));
        let cols_n = ho * wo;
        let mut out = vec![0.0; self.in_ch * h * w];
        for c in 0..self.in_ch {
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let row = (c * KERNEL + ky) * KERNEL + kx;
                    let src = &cols[row * cols_n..(row + 1) * cols_n];
                    for oy in 0..ho {
                        let y = (oy * STEP + ky) as isize - PAD as isize;
                        if y < 0 || y >= h as isize {
                            continue;
                        }
                        for ox in 0..wo {
                            let x = (ox * STEP + kx) as isize - PAD as isize;
                            if x >= 0 && x < w as isize {
                                out[(c * h + y as usize) * w + x as usize] += src[oy * wo + ox];
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Returns `(post-ReLU output, im2col buffer)`.
    fn forward(&self, input: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
        let (ho, wo) = (out_len(h), out_len(w));
        let n = ho * wo;
        let cols = self.im2col(input, h, w);
        let mut out = vec![0.0; self.out_ch * n];
        for (o, row) in out.chunks_exact_mut(n).enumerate() {
            row.fill(self.bias[o]);
        }
        let k = self.in_ch * KERNEL * KERNEL;
        gemm(
            self.out_ch,
            k,
            n,
            1.0,
            &self.weight,
            Op::N,
            &cols,
            Op::N,
            1.0,
            &mut out,
        );
        out.iter_mut().for_each(|v| *v = v.max(0.0));
        (out, cols)
    }
}

/// Stack of stride-2 conv stages; four stages give stride 16.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Backbone {
    pub layers: Vec<ConvLayer>,
}

/// Intermediate activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct BackboneCache {
    shapes: Vec<(usize, usize)>,
    cols: Vec<Vec<f64>>,
    outputs: Vec<Vec<f64>>,
}

/// Gradient container with the same layout as the backbone.
pub type BackboneGrads = Backbone;

impl Backbone {
    /// Default desk channel plan.
    pub const CHANNELS: [usize; 4] = [16, 32, 64, 128];

    pub fn init<R: Rng>(in_ch: usize, plan: &[usize], rng: &mut R) -> Self {
        let mut prev = in_ch;
        let layers = plan
            .iter()
            .map(|&c| {
                let layer = ConvLayer::init(prev, c, rng);
                prev = c;
                layer
            })
            .collect();
        Self { layers }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| ConvLayer::zeros(l.in_ch, l.out_ch))
                .collect(),
        }
    }

    fn check(&self, image: &Image) -> Result<()> {
        let expected = self.layers.first().map_or(image.channels, |l| l.in_ch);
        if image.channels != expected {
            return Err(invalid_input(format!(
                "backbone expects {expected} input channels, got {}",
                image.channels
            )));
        }
        if image.data.iter().any(|v| !v.is_finite()) {
            return Err(invalid_input("image contains non-finite values"));
        }
        Ok(())
    }

    pub fn forward_cached(&self, image: &Image) -> Result<(FeatureMap, BackboneCache)> {
        self.check(image)?;
        let (mut h, mut w) = (image.height, image.width);
        let mut cur = image.data.clone();
        let mut cache = BackboneCache {
            shapes: Vec::with_capacity(self.layers.len()),
            cols: Vec::with_capacity(self.layers.len()),
            outputs: Vec::with_capacity(self.layers.len()),
        };
        for layer in &self.layers {
            cache.shapes.push((h, w));
            let (out, cols) = layer.forward(&cur, h, w);
            h = out_len(h);
            w = out_len(w);
            cache.cols.push(cols);
            cache.outputs.push(out.clone());
            cur = out;
        }
        let channels = self.layers.last().map_or(image.channels, |l| l.out_ch);
        let map = FeatureMap::new(channels, h, w, self.stride(), cur)?;
        Ok((map, cache))
    }

    /// Backpropagates the gradient w.r.t. the output feature map into parameter gradients.
    pub fn backward(&self, cache: &BackboneCache, grad: &[f64]) -> BackboneGrads {
        let mut grads = self.zeros_like();
        let mut g = grad.to_vec();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let (h, w) = cache.shapes[idx];
            let n = out_len(h) * out_len(w);
            let out = &cache.outputs[idx];
            g.iter_mut().zip(out).for_each(|(gv, o)| {
                if *o <= 0.0 {
                    *gv = 0.0;
                }
            });
            let k = layer.in_ch * KERNEL * KERNEL;
            let gl = &mut grads.layers[idx];
            gemm(
                layer.out_ch,
                n,
                k,
                1.0,
                &g,
                Op::N,
                &cache.cols[idx],
                Op::T,
                0.0,
                &mut gl.weight,
            );
            for (o, row) in g.chunks_exact(n).enumerate() {
                gl.bias[o] = row.iter().sum();
            }
            if idx > 0 {
                let mut dcols = vec![0.0; k * n];
                gemm(
                    k,
                    layer.out_ch,
                    n,
                    1.0,
                    &layer.weight,
                    Op::T,
                    &g,
                    Op::N,
                    0.0,
                    &mut dcols,
                );
                g = layer.col2im(&dcols, h, w);
            }
        }
        grads
    }
}

impl FeatureExtractor for Backbone {
    fn extract(&self, image: &Image) -> Result<FeatureMap> {
        self.forward_cached(image).map(|(f, _)| f)
    }

    fn stride(&self) -> usize {
        STEP.pow(self.layers.len() as u32)
    }

    fn out_channels(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_ch)
    }
}
