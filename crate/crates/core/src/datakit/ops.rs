use crate::error::{invalid_input, Result};
use crate::img::Image;

/// Per-channel ImageNet statistics used for normalization.
pub const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

/// Bilinear resize with half-pixel centers: output pixel `x` samples input location
/// `(x + 0.5)·W_in/W_out`, clamping at the borders. Same-size resizes copy exactly.
pub fn resize_bilinear(image: &Image, height: usize, width: usize) -> Result<Image> {
    if image.height == 0 || image.width == 0 || image.channels == 0 {
        return Err(invalid_input("cannot resize an empty image"));
    }
    if height == 0 || width == 0 {
        return Err(invalid_input("target size must be positive"));
    }
    if height == image.height && width == image.width {
        return Ok(image.clone());
    }
    let sx = image.width as f64 / width as f64;
    let sy = image.height as f64 / height as f64;
    let mut out = Image::filled(image.channels, height, width, 0.0);
    for c in 0..image.channels {
        for y in 0..height {
            for x in 0..width {
                *out.at_mut(c, y, x) =
                    image.sample(c, (x as f64 + 0.5) * sx, (y as f64 + 0.5) * sy);
            }
        }
    }
    Ok(out)
}

/// `(v − mean)/std` per channel; three-channel images only.
pub fn normalize(image: &Image) -> Result<Image> {
    if image.channels != 3 {
        return Err(invalid_input(format!(
            "normalization expects 3 channels, got {}",
            image.channels
        )));
    }
    let mut out = image.clone();
    let n = image.height * image.width;
    for c in 0..3 {
        for v in &mut out.data[c * n..(c + 1) * n] {
            *v = (*v - IMAGENET_MEAN[c]) / IMAGENET_STD[c];
        }
    }
    Ok(out)
}

/// Square bilinear resize followed by normalization.
pub fn resize_normalize(image: &Image, size: usize) -> Result<Image> {
    normalize(&resize_bilinear(image, size, size)?)
}
