//! End-to-end correspondence network: backbone, context encoder and matching head,
//! with a hand-written backward pass.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{
    fuse_context, fuse_context_backward, self_similarity_backward, self_similarity_with_offsets,
    sparse_offsets, Backbone, BackboneCache, ContextDescriptorMap, FeatureExtractor, FeatureMap,
    FusionWeights,
};
use crate::error::{invalid_arg, Result};
use crate::img::Image;
use crate::matching::{
    correlation_4d, correlation_4d_backward, kernel_soft_argmax, kernel_soft_argmax_backward,
    mutual_nn_backward, mutual_nn_filter, upsample_correlation, upsample_correlation_backward,
    CorrelationVolume, FlowField, SoftArgmaxParams,
};

/// Architecture and readout settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Input image channels.
    pub in_channels: usize,
    /// Output channels of each stride-2 backbone stage.
    pub backbone_channels: Vec<usize>,
    /// Self-similarity kernel size `K` (odd, ≥ 3).
    pub kernel_size: usize,
    /// Fused feature dimension `d_g`.
    pub fusion_dim: usize,
    /// Correlation upsampling factor.
    pub upsample: usize,
    pub soft_argmax: SoftArgmaxParams,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            backbone_channels: Backbone::CHANNELS.to_vec(),
            kernel_size: 7,
            fusion_dim: 64,
            upsample: 4,
            soft_argmax: SoftArgmaxParams::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kernel_size < 3 || self.kernel_size.is_multiple_of(2) {
            return Err(invalid_arg(format!(
                "kernel_size must be odd and at least 3, got {}",
                self.kernel_size
            )));
        }
        if self.in_channels == 0 || self.fusion_dim == 0 || self.backbone_channels.contains(&0) {
            return Err(invalid_arg("channel counts must be positive"));
        }
        if self.upsample == 0 {
            return Err(invalid_arg("upsample factor must be at least 1"));
        }
        self.soft_argmax.validate()
    }

    /// Feature channels entering the fusion layer.
    pub fn feature_dim(&self) -> usize {
        *self.backbone_channels.last().unwrap_or(&self.in_channels)
    }

    pub fn descriptor_len(&self) -> usize {
        4 * (self.kernel_size - 1)
    }
}

/// Context encoder plus matching head acting on backbone features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Head {
    pub kernel_size: usize,
    pub upsample: usize,
    pub soft_argmax: SoftArgmaxParams,
    pub fusion: FusionWeights,
}

struct Side {
    features: FeatureMap,
    descriptor: ContextDescriptorMap,
    fused: FeatureMap,
}

/// Activations of one head forward pass.
pub struct HeadCache {
    a: Side,
    b: Side,
    corr: CorrelationVolume,
    filtered: CorrelationVolume,
    up: CorrelationVolume,
}

/// Head gradients: both input feature maps (channel-major) and the fusion weights.
pub struct HeadGrads {
    pub source: Vec<f64>,
    pub target: Vec<f64>,
    pub fusion: FusionWeights,
}

impl Head {
    fn offsets(&self) -> Vec<(isize, isize)> {
        sparse_offsets(self.kernel_size).expect("kernel size validated at construction")
    }

    fn side(&self, f: &FeatureMap, offsets: &[(isize, isize)]) -> Result<Side> {
        f.ensure_finite()?;
        let descriptor = self_similarity_with_offsets(f, offsets, self.kernel_size);
        let fused = fuse_context(f, &descriptor, &self.fusion)?;
        Ok(Side {
            features: f.clone(),
            descriptor,
            fused,
        })
    }

    /// Flow from target to source features.
    pub fn forward(&self, fa: &FeatureMap, fb: &FeatureMap) -> Result<(FlowField, HeadCache)> {
        let offsets = self.offsets();
        let a = self.side(fa, &offsets)?;
        let b = self.side(fb, &offsets)?;
        let corr = correlation_4d(&a.fused, &b.fused)?;
        let filtered = mutual_nn_filter(&corr)?;
        let up = upsample_correlation(&filtered, self.upsample)?;
        let flow = kernel_soft_argmax(&up, &self.soft_argmax)?;
        Ok((
            flow,
            HeadCache {
                a,
                b,
                corr,
                filtered,
                up,
            },
        ))
    }

    pub fn backward(&self, cache: &HeadCache, grad_flow: &[f64]) -> Result<HeadGrads> {
        let g_up = kernel_soft_argmax_backward(&cache.up, &self.soft_argmax, grad_flow);
        let g_filtered = upsample_correlation_backward(&cache.filtered, self.upsample, &g_up);
        let g_corr = mutual_nn_backward(&cache.corr, &g_filtered);
        let (gga, ggb) =
            correlation_4d_backward(&cache.a.fused, &cache.b.fused, &cache.corr, &g_corr)?;
        let offsets = self.offsets();
        let mut fusion = FusionWeights::zeros(self.fusion.in_dim, self.fusion.out_dim);
        let mut side_grad = |side: &Side, g: &[f64]| -> Result<Vec<f64>> {
            let fg = fuse_context_backward(
                &side.features,
                &side.descriptor,
                &self.fusion,
                &side.fused,
                g,
            )?;
            for (acc, v) in fusion.matrix.iter_mut().zip(&fg.weights.matrix) {
                *acc += v;
            }
            for (acc, v) in fusion.bias.iter_mut().zip(&fg.weights.bias) {
                *acc += v;
            }
            let gd = ContextDescriptorMap {
                values: fg.descriptor,
                ..side.descriptor.clone()
            };
            let through_sim = self_similarity_backward(&side.features, &offsets, &gd);
            Ok(fg
                .features
                .iter()
                .zip(&through_sim)
                .map(|(a, b)| a + b)
                .collect())
        };
        let source = side_grad(&cache.a, &gga)?;
        let target = side_grad(&cache.b, &ggb)?;
        Ok(HeadGrads {
            source,
            target,
            fusion,
        })
    }
}

/// Full network. Parameters live in two groups: the backbone and everything else.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub config: ModelConfig,
    pub backbone: Backbone,
    pub head: Head,
}

/// Activations of one network forward pass.
pub struct ForwardCache {
    source: BackboneCache,
    target: BackboneCache,
    head: HeadCache,
}

impl Network {
    /// Seed-deterministic initialization: backbone stages first, then the fusion layer, all drawn
    /// from one ChaCha8 stream seeded with `seed`.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let backbone = Backbone::init(config.in_channels, &config.backbone_channels, &mut rng);
        let fusion = FusionWeights::init(
            config.feature_dim() + config.descriptor_len(),
            config.fusion_dim,
            &mut rng,
        );
        Ok(Self {
            config: config.clone(),
            backbone,
            head: Head {
                kernel_size: config.kernel_size,
                upsample: config.upsample,
                soft_argmax: config.soft_argmax,
                fusion,
            },
        })
    }

    /// All-zero parameters with this network's shapes, used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for p in z.params_mut() {
            p.fill(0.0);
        }
        z
    }

    pub fn forward(&self, source: &Image, target: &Image) -> Result<(FlowField, ForwardCache)> {
        let (fa, ca) = self.backbone.forward_cached(source)?;
        let (fb, cb) = self.backbone.forward_cached(target)?;
        let (flow, head) = self.head.forward(&fa, &fb)?;
        Ok((
            flow,
            ForwardCache {
                source: ca,
                target: cb,
                head,
            },
        ))
    }

    pub fn predict(&self, source: &Image, target: &Image) -> Result<FlowField> {
        self.forward(source, target).map(|(f, _)| f)
    }

    /// Parameter gradients given the gradient of a loss w.r.t. the predicted flow.
    pub fn backward(&self, cache: &ForwardCache, grad_flow: &[f64]) -> Result<Network> {
        let hg = self.head.backward(&cache.head, grad_flow)?;
        let ga = self.backbone.backward(&cache.source, &hg.source);
        let gb = self.backbone.backward(&cache.target, &hg.target);
        let mut grads = self.zeros_like();
        for ((acc, a), b) in grads
            .backbone
            .layers
            .iter_mut()
            .zip(&ga.layers)
            .zip(&gb.layers)
        {
            for (w, (x, y)) in acc.weight.iter_mut().zip(a.weight.iter().zip(&b.weight)) {
                *w = x + y;
            }
            for (w, (x, y)) in acc.bias.iter_mut().zip(a.bias.iter().zip(&b.bias)) {
                *w = x + y;
            }
        }
        grads.head.fusion = hg.fusion;
        Ok(grads)
    }

    /// Output stride of the flow in input pixels.
    pub fn flow_stride(&self) -> f64 {
        self.backbone.stride() as f64 / self.head.upsample as f64
    }

    /// Parameter tensors in a fixed order; the first `backbone_tensors()` belong to the backbone.
    pub fn params(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for l in &self.backbone.layers {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        out.push(&self.head.fusion.matrix);
        out.push(&self.head.fusion.bias);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.backbone.layers {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out.push(&mut self.head.fusion.matrix);
        out.push(&mut self.head.fusion.bias);
        out
    }

    pub fn backbone_tensors(&self) -> usize {
        2 * self.backbone.layers.len()
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}
