use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{resize_bilinear, BBox, PairSample};
use crate::error::{Error, Result};
use crate::img::Image;
use crate::supervision::KeypointPair;

/// Parallel source/target keypoint lists, `[x, y]` in original-image pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestKeypoints {
    pub source: Vec<[f64; 2]>,
    pub target: Vec<[f64; 2]>,
}

/// One line of a JSON Lines manifest. Relative paths resolve against the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub source_path: String,
    pub target_path: String,
    pub keypoints: ManifestKeypoints,
    pub category: String,
    #[serde(default)]
    pub bbox_source: Option<[f64; 4]>,
    #[serde(default)]
    pub bbox_target: Option<[f64; 4]>,
}

fn read_rgb(path: &Path) -> Result<Image> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = Image::filled(3, h, w, 0.0);
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            *out.at_mut(c, y as usize, x as usize) = px.0[c] as f64 / 255.0;
        }
    }
    Ok(out)
}

fn in_extent(p: [f64; 2], img: &Image) -> bool {
    (0.0..=img.width as f64).contains(&p[0]) && (0.0..=img.height as f64).contains(&p[1])
}

fn load_record(
    rec: &ManifestRecord,
    base: &Path,
    size: Option<usize>,
) -> std::result::Result<PairSample, String> {
    if rec.keypoints.source.len() != rec.keypoints.target.len() {
        return Err(format!(
            "keypoint arrays differ in length ({} source, {} target)",
            rec.keypoints.source.len(),
            rec.keypoints.target.len()
        ));
    }
    let load = |p: &str| read_rgb(&base.join(p)).map_err(|e| e.to_string());
    let mut source = load(&rec.source_path)?;
    let mut target = load(&rec.target_path)?;
    for (s, t) in rec.keypoints.source.iter().zip(&rec.keypoints.target) {
        if !in_extent(*s, &source) || !in_extent(*t, &target) {
            return Err(format!(
                "keypoint pair {s:?} -> {t:?} lies outside its image"
            ));
        }
    }
    let (mut ssx, mut ssy, mut tsx, mut tsy) = (1.0, 1.0, 1.0, 1.0);
    if let Some(n) = size {
        ssx = n as f64 / source.width as f64;
        ssy = n as f64 / source.height as f64;
        tsx = n as f64 / target.width as f64;
        tsy = n as f64 / target.height as f64;
        source = resize_bilinear(&source, n, n).map_err(|e| e.to_string())?;
        target = resize_bilinear(&target, n, n).map_err(|e| e.to_string())?;
    }
    let keypoints = rec
        .keypoints
        .source
        .iter()
        .zip(&rec.keypoints.target)
        .map(|(s, t)| KeypointPair {
            source: (s[0] * ssx, s[1] * ssy),
            target: (t[0] * tsx, t[1] * tsy),
        })
        .collect();
    Ok(PairSample {
        source,
        target,
        keypoints,
        category: rec.category.clone(),
        flow: None,
        bbox_source: rec.bbox_source.map(|b| BBox(b).scaled(ssx, ssy)),
        bbox_target: rec.bbox_target.map(|b| BBox(b).scaled(tsx, tsy)),
    })
}

/// Loads every record in file order, resizing images to `size × size` when given and scaling
/// keypoints and boxes by the same factors. Blank lines are skipped; record indices count
/// non-blank lines from 0.
pub fn load_manifest(path: &Path, size: Option<usize>) -> Result<Vec<PairSample>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let index = out.len();
        let rec: ManifestRecord = serde_json::from_str(&line).map_err(|e| Error::Record {
            index,
            reason: e.to_string(),
        })?;
        out.push(load_record(&rec, &base, size).map_err(|reason| Error::Record { index, reason })?);
    }
    Ok(out)
}

fn write_png(img: &Image, path: &Path) -> Result<()> {
    let mut buf = image::RgbImage::new(img.width as u32, img.height as u32);
    for (x, y, px) in buf.enumerate_pixels_mut() {
        for c in 0..3 {
            let v = img.at(c, y as usize, x as usize).clamp(0.0, 1.0);
            px.0[c] = (v * 255.0).round() as u8;
        }
    }
    buf.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes a Middlebury `.flo` file holding per-pixel displacements (source − target center).
fn write_flo(flow: &crate::matching::FlowField, path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(12 + 8 * flow.cells());
    bytes.extend_from_slice(b"PIEH");
    bytes.extend_from_slice(&(flow.width as u32).to_le_bytes());
    bytes.extend_from_slice(&(flow.height as u32).to_le_bytes());
    for r in 0..flow.height {
        for c in 0..flow.width {
            let (x, y) = flow.get(r, c);
            let cx = (c as f64 + 0.5) * flow.stride;
            let cy = (r as f64 + 0.5) * flow.stride;
            bytes.extend_from_slice(&((x - cx) as f32).to_le_bytes());
            bytes.extend_from_slice(&((y - cy) as f32).to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes images as PNG, dense flows as `.flo` sidecars under `flows/` and a
/// `manifest.jsonl` describing every pair. Returns the manifest path.
pub fn write_manifest(dir: &Path, samples: &[PairSample]) -> Result<PathBuf> {
    for sub in ["images", "flows"] {
        fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(dir.join(sub), e))?;
    }
    let manifest = dir.join("manifest.jsonl");
    let mut text = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        let src = format!("images/{i:05}_source.png");
        let tgt = format!("images/{i:05}_target.png");
        write_png(&s.source, &dir.join(&src))?;
        write_png(&s.target, &dir.join(&tgt))?;
        if let Some(f) = &s.flow {
            write_flo(f, &dir.join(format!("flows/{i:05}.flo")))?;
        }
        let rec = ManifestRecord {
            source_path: src,
            target_path: tgt,
            keypoints: ManifestKeypoints {
                source: s
                    .keypoints
                    .iter()
                    .map(|k| [k.source.0, k.source.1])
                    .collect(),
                target: s
                    .keypoints
                    .iter()
                    .map(|k| [k.target.0, k.target.1])
                    .collect(),
            },
            category: s.category.clone(),
            bbox_source: s.bbox_source.map(|b| b.0),
            bbox_target: s.bbox_target.map(|b| b.0),
        };
        serde_json::to_writer(&mut text, &rec)?;
        text.write_all(b"\n").map_err(|e| Error::io(&manifest, e))?;
    }
    fs::write(&manifest, text).map_err(|e| Error::io(&manifest, e))?;
    Ok(manifest)
}
