use rand::Rng;
use serde::{Deserialize, Serialize};

use super::PairSample;
use crate::img::Image;

/// Photometric jitter magnitudes; each factor is drawn uniformly from `[1 − m, 1 + m]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JitterConfig {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
}

impl Default for JitterConfig {
    fn default() -> Self {
        Self {
            brightness: 0.2,
            contrast: 0.2,
            saturation: 0.2,
        }
    }
}

impl JitterConfig {
    pub fn none() -> Self {
        Self {
            brightness: 0.0,
            contrast: 0.0,
            saturation: 0.0,
        }
    }

    pub fn is_none(&self) -> bool {
        self.brightness == 0.0 && self.contrast == 0.0 && self.saturation == 0.0
    }
}

const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

fn factor<R: Rng>(rng: &mut R, m: f64) -> f64 {
    if m > 0.0 {
        rng.gen_range((1.0 - m).max(0.0)..=1.0 + m)
    } else {
        1.0
    }
}

fn jitter<R: Rng>(img: &Image, cfg: &JitterConfig, rng: &mut R) -> Image {
    let b = factor(rng, cfg.brightness);
    let c = factor(rng, cfg.contrast);
    let s = factor(rng, cfg.saturation);
    let mut out = img.clone();
    if img.channels != 3 {
        return out;
    }
    let n = img.height * img.width;
    let (r, rest) = out.data.split_at_mut(n);
    let (g, bl) = rest.split_at_mut(n);
    for p in 0..n {
        for v in [&mut r[p], &mut g[p], &mut bl[p]] {
            *v *= b;
        }
    }
    let gray = |r: f64, g: f64, b: f64| LUMA[0] * r + LUMA[1] * g + LUMA[2] * b;
    let mean = (0..n).map(|p| gray(r[p], g[p], bl[p])).sum::<f64>() / n as f64;
    for p in 0..n {
        for v in [&mut r[p], &mut g[p], &mut bl[p]] {
            *v = mean + c * (*v - mean);
        }
        let y = gray(r[p], g[p], bl[p]);
        for v in [&mut r[p], &mut g[p], &mut bl[p]] {
            *v = (y + s * (*v - y)).clamp(0.0, 1.0);
        }
    }
    out
}

/// Brightness, contrast and saturation jitter drawn independently for each image.
/// Geometry (keypoints, flow, boxes) is never touched; zero magnitudes return the sample as is.
pub fn augment_pair<R: Rng>(sample: &PairSample, cfg: &JitterConfig, rng: &mut R) -> PairSample {
    if cfg.is_none() {
        return sample.clone();
    }
    PairSample {
        source: jitter(&sample.source, cfg, rng),
        target: jitter(&sample.target, cfg, rng),
        ..sample.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datakit::{synth_warp_pairs, SynthConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_jitter_is_identity_and_geometry_is_kept() {
        let s = &synth_warp_pairs(1, 1, &SynthConfig::default()).unwrap()[0];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(&augment_pair(s, &JitterConfig::none(), &mut rng), s);
        let a = augment_pair(s, &JitterConfig::default(), &mut rng);
        assert_ne!(a.source, s.source);
        assert_eq!(a.keypoints, s.keypoints);
        assert_eq!(a.flow, s.flow);
        assert!(a.source.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn seeded_jitter_is_reproducible() {
        let s = &synth_warp_pairs(2, 1, &SynthConfig::default()).unwrap()[0];
        let run = || {
            augment_pair(
                s,
                &JitterConfig::default(),
                &mut ChaCha8Rng::seed_from_u64(9),
            )
        };
        assert_eq!(run(), run());
    }
}
