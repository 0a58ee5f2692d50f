//! On-disk dataset layout:
//!
//! ```text
//! {root}/manifest.json
//! {root}/{split}/{class}/{clip_id}/frame_%05d.ppm
//! {root}/{split}/{class}/{clip_id}/flow_x_%05d.pgm
//! {root}/{split}/{class}/{clip_id}/flow_y_%05d.pgm
//! {root}/{split}/{class}/{clip_id}/mask_%05d.pgm
//! ```
//!
//! Flow images carry a `# flow_bound <B>` header comment.

use std::fs;
use std::path::{Path, PathBuf};

use super::dataset::{Dataset, Manifest, ManifestEntry, Split};
use super::render::{ClipSample, Mask};
use crate::error::{FcanError, Result};
use crate::flow::{decode_gray, encode_gray, Homography};
use crate::imageio::{GrayImage, RgbImage};
use crate::tensor::Tensor;

/// Header comment key carrying the flow bound of a flow image.
pub const BOUND_TAG: &str = "flow_bound";

fn frame_name(t: usize) -> String {
    format!("frame_{t:05}.ppm")
}

fn flow_names(t: usize) -> (String, String) {
    (format!("flow_x_{t:05}.pgm"), format!("flow_y_{t:05}.pgm"))
}

fn mask_name(t: usize) -> String {
    format!("mask_{t:05}.pgm")
}

pub fn clip_dir(root: &Path, manifest: &Manifest, entry: &ManifestEntry) -> Result<PathBuf> {
    let class = manifest.classes.get(entry.label)?;
    Ok(root.join(entry.split.name()).join(class.name()).join(&entry.id))
}

/// Writes one video's frames, flow images, and masks into `dir`.
pub fn save_clip(clip: &ClipSample, dir: &Path, bound: f64) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| FcanError::io(dir, e))?;
    let (f, h, w) = (clip.frames(), clip.height(), clip.width());
    let plane = h * w;
    let data = clip.rgb.data();
    for t in 0..f {
        let mut px = Vec::with_capacity(3 * plane);
        for i in 0..plane {
            for c in 0..3 {
                px.push((data[(c * f + t) * plane + i] * 255.0).round().clamp(0.0, 255.0) as u8);
            }
        }
        RgbImage::new(w, h, px)?.write_ppm(&dir.join(frame_name(t)))?;
        clip.masks[t].to_image().write_pgm(&dir.join(mask_name(t)))?;
    }
    let comment = format!("{BOUND_TAG} {bound}");
    for (t, fl) in clip.flow.iter().enumerate() {
        let (gx, gy) = encode_gray(fl, bound)?;
        let (nx, ny) = flow_names(t);
        gx.write_pgm_with_comment(&dir.join(nx), &comment)?;
        gy.write_pgm_with_comment(&dir.join(ny), &comment)?;
    }
    Ok(())
}

/// Reads a flow component image, rejecting a header bound other than `bound`.
pub fn read_flow_image(path: &Path, bound: f64) -> Result<GrayImage> {
    let (img, comments) = GrayImage::read_pgm_with_comments(path)?;
    let tagged = comments
        .iter()
        .find_map(|c| c.strip_prefix(BOUND_TAG).map(|v| v.trim().parse::<f64>()));
    match tagged {
        Some(Ok(b)) if b == bound => Ok(img),
        Some(Ok(b)) => Err(FcanError::format(
            path,
            format!("flow bound {b} in the file header disagrees with manifest bound {bound}"),
        )),
        Some(Err(_)) => Err(FcanError::format(path, "unreadable flow bound in header")),
        None => Ok(img),
    }
}

fn check_extent(path: &Path, w: usize, h: usize, want: (usize, usize)) -> Result<()> {
    if (w, h) != want {
        return Err(FcanError::format(
            path,
            format!("image is {w}x{h}, expected {}x{}", want.0, want.1),
        ));
    }
    Ok(())
}

/// Reconstructs a video from `dir`. Flow is decoded with the manifest's
/// bound; the exact flow is not stored, so `flow_gt` is `None`.
pub fn load_clip_from_files(dir: &Path, entry: &ManifestEntry, bound: f64) -> Result<ClipSample> {
    let f = entry.frames;
    if f < 2 {
        return Err(FcanError::format(dir, format!("manifest entry lists {f} frames")));
    }
    let mut missing = Vec::new();
    for (pattern, n, name) in [
        ("frame_%05d.ppm", f, frame_name as fn(usize) -> String),
        ("flow_x_%05d.pgm", f - 1, |t| flow_names(t).0),
        ("flow_y_%05d.pgm", f - 1, |t| flow_names(t).1),
        ("mask_%05d.pgm", f, mask_name),
    ] {
        if (0..n).any(|t| !dir.join(name(t)).is_file()) {
            missing.push(pattern);
        }
    }
    if !missing.is_empty() {
        return Err(FcanError::format(dir, format!("missing files: {}", missing.join(", "))));
    }

    let first = RgbImage::read_ppm(&dir.join(frame_name(0)))?;
    let (w, h) = (first.width(), first.height());
    let plane = w * h;
    let mut rgb = vec![0.0f32; 3 * f * plane];
    let mut masks = Vec::with_capacity(f);
    for t in 0..f {
        let path = dir.join(frame_name(t));
        let img = if t == 0 { first.clone() } else { RgbImage::read_ppm(&path)? };
        check_extent(&path, img.width(), img.height(), (w, h))?;
        for (i, px) in img.pixels().chunks(3).enumerate() {
            for c in 0..3 {
                rgb[(c * f + t) * plane + i] = f32::from(px[c]) / 255.0;
            }
        }
        let path = dir.join(mask_name(t));
        let m = GrayImage::read_pgm(&path)?;
        check_extent(&path, m.width(), m.height(), (w, h))?;
        masks.push(Mask::from_image(&m));
    }
    let mut flow = Vec::with_capacity(f - 1);
    for t in 0..f - 1 {
        let (nx, ny) = flow_names(t);
        let (px, py) = (dir.join(nx), dir.join(ny));
        let gx = read_flow_image(&px, bound)?;
        let gy = read_flow_image(&py, bound)?;
        check_extent(&px, gx.width(), gx.height(), (w, h))?;
        check_extent(&py, gy.width(), gy.height(), (w, h))?;
        flow.push(decode_gray(&gx, &gy, bound)?);
    }
    if entry.camera.len() != f - 1 {
        return Err(FcanError::format(
            dir,
            format!("manifest lists {} homographies for {f} frames", entry.camera.len()),
        ));
    }
    let camera = entry
        .camera
        .iter()
        .map(|&m| Homography::from_rows(m))
        .collect::<Result<_>>()?;
    Ok(ClipSample {
        label: entry.label,
        seed: entry.seed,
        rgb: Tensor::from_vec(&[3, f, h, w], rgb)?,
        flow,
        flow_gt: None,
        masks,
        camera,
    })
}

pub fn save_dataset(ds: &Dataset, root: &Path) -> Result<()> {
    fs::create_dir_all(root).map_err(|e| FcanError::io(root, e))?;
    let mut train = ds.train.iter();
    let mut test = ds.test.iter();
    for entry in &ds.manifest.clips {
        let clip = match entry.split {
            Split::Train => train.next(),
            Split::Test => test.next(),
        }
        .ok_or_else(|| FcanError::Config("manifest lists more clips than the dataset holds".into()))?;
        save_clip(clip, &clip_dir(root, &ds.manifest, entry)?, ds.manifest.flow_bound)?;
    }
    let path = root.join("manifest.json");
    let json = serde_json::to_string_pretty(&ds.manifest)?;
    fs::write(&path, json).map_err(|e| FcanError::io(&path, e))
}

pub fn read_manifest(root: &Path) -> Result<Manifest> {
    let path = root.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| FcanError::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| FcanError::format(&path, e.to_string()))
}

pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let manifest = read_manifest(root)?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for entry in &manifest.clips {
        let clip = load_clip_from_files(&clip_dir(root, &manifest, entry)?, entry, manifest.flow_bound)?;
        match entry.split {
            Split::Train => train.push(clip),
            Split::Test => test.push(clip),
        }
    }
    Ok(Dataset { manifest, train, test })
}
