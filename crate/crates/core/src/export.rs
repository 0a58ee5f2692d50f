//! Attention maps as grayscale images.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{FcanError, Result};
use crate::imageio::GrayImage;
use crate::network::FcanModel;
use crate::synth::PreparedVideo;
use crate::tensor::{Real, Tensor};
use crate::train::{center_window, make_batch};

/// Attention maps `[1,1,T_l,H_l,W_l]` for the center clip of `video`, one
/// per cross-link.
pub fn clip_attention<T: Real>(model: &FcanModel<T>, video: &PreparedVideo) -> Result<Vec<Tensor<T>>> {
    if model.crosslinks.is_empty() || model.temporal.is_none() {
        return Err(FcanError::arg("export_attention", "model has no cross-link"));
    }
    let start = video.frames().saturating_sub(model.config.frames) / 2;
    let win = center_window(model, video, start);
    let (rgb, flow, _) = make_batch(model, &[video], &[win])?;
    Ok(model.infer(&rgb, Some(&flow))?.attention)
}

/// Nearest-neighbour upsampling of one `[H_l, W_l]` slice to `h x w`, with
/// pixels `round(255 a)`.
pub fn attention_image<T: Real>(map: &[T], hl: usize, wl: usize, h: usize, w: usize) -> Result<GrayImage> {
    let px = (0..h * w)
        .map(|i| {
            let (y, x) = (i / w, i % w);
            let a = map[(y * hl / h) * wl + x * wl / w].to_f64_lossy();
            (255.0 * a).round().clamp(0.0, 255.0) as u8
        })
        .collect();
    GrayImage::new(w, h, px)
}

/// Writes `attn_pool{l}_t{t:02}.pgm` for every cross-link `l` and attention
/// time step `t`, upsampled to the network input size.
pub fn export_attention<T: Real>(model: &FcanModel<T>, video: &PreparedVideo, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let maps = clip_attention(model, video)?;
    fs::create_dir_all(out_dir).map_err(|e| FcanError::io(out_dir, e))?;
    let (h, w) = (model.config.height, model.config.width);
    let mut written = Vec::new();
    for (link, map) in model.crosslinks.iter().zip(&maps) {
        let [_, _, tl, hl, wl] = map.dims5("export_attention")?;
        for (t, slice) in map.data().chunks(hl * wl).enumerate().take(tl) {
            let path = out_dir.join(format!("attn_pool{}_t{t:02}.pgm", link.placement));
            attention_image(slice, hl, wl, h, w)?.write_pgm(&path)?;
            written.push(path);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn upsampling_is_nearest_neighbour() {
        let map = [0.0f64, 1.0, 0.5, 0.25];
        let img = attention_image(&map, 2, 2, 4, 4).unwrap();
        let want = [
            0, 0, 255, 255, //
            0, 0, 255, 255, //
            128, 128, 64, 64, //
            128, 128, 64, 64,
        ];
        assert_eq!(img.pixels(), &want);
    }
}
