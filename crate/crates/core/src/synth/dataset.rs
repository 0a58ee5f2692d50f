//! Labeled splits of generated videos and their conversion to network input.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::render::{generate_clip, ClipSample};
use super::scene::{ClassSet, SceneConfig};
use crate::error::{FcanError, Result};
use crate::flow::{compensate, fit_homography, quantize, Homography, RansacConfig};
use crate::tensor::Tensor;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub split: Split,
    pub label: usize,
    pub seed: u64,
    pub frames: usize,
    /// Background homographies `t -> t+1`, row-major.
    pub camera: Vec<[[f64; 3]; 3]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub seed: u64,
    pub n_per_class: usize,
    pub split_ratio: f64,
    /// Rescaling bound of the stored flow images, px/frame.
    pub flow_bound: f64,
    /// FNV-1a of the JSON-serialized class set and scene config.
    pub config_hash: String,
    pub classes: ClassSet,
    pub scene: SceneConfig,
    pub clips: Vec<ManifestEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub train: Vec<ClipSample>,
    pub test: Vec<ClipSample>,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn config_hash(classes: &ClassSet, scene: &SceneConfig) -> Result<String> {
    let json = serde_json::to_string(&(classes, scene))?;
    Ok(format!("{:016x}", fnv1a(json.as_bytes())))
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Per-clip seed derived from the dataset seed, class, and index.
pub fn clip_seed(dataset_seed: u64, label: usize, index: usize) -> u64 {
    splitmix(splitmix(dataset_seed) ^ ((label as u64) << 32 | index as u64))
}

/// Number of training clips per class for a split ratio.
pub fn train_count(n_per_class: usize, split_ratio: f64) -> usize {
    ((n_per_class as f64 * split_ratio).round() as usize).clamp(1, n_per_class - 1)
}

/// Generates `n_per_class` videos per class; the first `round(n * ratio)` of
/// each class go to train and the rest to test.
pub fn generate_dataset(
    classes: &ClassSet,
    scene: &SceneConfig,
    n_per_class: usize,
    split_ratio: f64,
    seed: u64,
) -> Result<Dataset> {
    if n_per_class < 2 {
        return Err(FcanError::Config(format!("n_per_class must be >= 2, got {n_per_class}")));
    }
    if !(split_ratio > 0.0 && split_ratio < 1.0) {
        return Err(FcanError::Config(format!("split_ratio must be in (0, 1), got {split_ratio}")));
    }
    if classes.is_empty() {
        return Err(FcanError::Config("class set is empty".into()));
    }
    scene.validate()?;
    let n_train = train_count(n_per_class, split_ratio);
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut entries = Vec::new();
    for label in 0..classes.len() {
        for i in 0..n_per_class {
            let s = clip_seed(seed, label, i);
            let clip = generate_clip(classes, label, scene, s)?;
            let split = if i < n_train { Split::Train } else { Split::Test };
            entries.push(ManifestEntry {
                id: format!("clip_{i:04}"),
                split,
                label,
                seed: s,
                frames: scene.frames,
                camera: clip.camera.iter().map(|h| h.rows()).collect(),
            });
            match split {
                Split::Train => train.push(clip),
                Split::Test => test.push(clip),
            }
        }
    }
    Ok(Dataset {
        manifest: Manifest {
            version: MANIFEST_VERSION,
            seed,
            n_per_class,
            split_ratio,
            flow_bound: scene.flow_bound,
            config_hash: config_hash(classes, scene)?,
            classes: classes.clone(),
            scene: scene.clone(),
            clips: entries,
        },
        train,
        test,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Crop {
    pub top: usize,
    pub left: usize,
    pub size: usize,
}

impl Crop {
    pub fn random<R: Rng + ?Sized>(height: usize, width: usize, size: usize, rng: &mut R) -> Result<Crop> {
        if size == 0 || size > height || size > width {
            return Err(FcanError::arg(
                "random_crop",
                format!("crop size {size} does not fit {width}x{height}"),
            ));
        }
        Ok(Crop {
            top: rng.gen_range(0..=height - size),
            left: rng.gen_range(0..=width - size),
            size,
        })
    }

    pub fn center(height: usize, width: usize, size: usize) -> Crop {
        Crop {
            top: (height - size) / 2,
            left: (width - size) / 2,
            size,
        }
    }
}

/// Applies one crop window to the frames, every flow field, and every mask.
/// Flow vectors keep their values; camera homographies are re-expressed in
/// the cropped pixel frame.
pub fn aligned_crop(sample: &ClipSample, crop: Crop) -> Result<ClipSample> {
    let (f, h, w) = (sample.frames(), sample.height(), sample.width());
    let Crop { top, left, size } = crop;
    if size == 0 || top + size > h || left + size > w {
        return Err(FcanError::arg(
            "aligned_crop",
            format!("{size}x{size} window at ({top}, {left}) exceeds {w}x{h}"),
        ));
    }
    let src = sample.rgb.data();
    let mut rgb = Vec::with_capacity(3 * f * size * size);
    for cf in 0..3 * f {
        let base = cf * h * w;
        for y in top..top + size {
            rgb.extend_from_slice(&src[base + y * w + left..base + y * w + left + size]);
        }
    }
    let shift = Homography::translation(left as f64, top as f64);
    let unshift = Homography::translation(-(left as f64), -(top as f64));
    let camera = sample
        .camera
        .iter()
        .map(|hm| unshift.compose(&hm.compose(&shift)?))
        .collect::<Result<_>>()?;
    let crop_flows = |v: &Vec<crate::flow::FlowField>| v.iter().map(|fl| fl.crop(top, left, size, size)).collect();
    Ok(ClipSample {
        label: sample.label,
        seed: sample.seed,
        rgb: Tensor::from_vec(&[3, f, size, size], rgb)?,
        flow: crop_flows(&sample.flow),
        flow_gt: sample.flow_gt.as_ref().map(crop_flows),
        masks: sample.masks.iter().map(|m| m.crop(top, left, size)).collect(),
        camera,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowMode {
    Raw,
    /// Camera motion removed per frame pair before quantization.
    Compensated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputConfig {
    pub flow_mode: FlowMode,
    /// Multiplies decoded flow (px/frame) before it enters the network.
    pub flow_scale: f64,
    pub ransac: RansacConfig,
}

impl Default for InputConfig {
    fn default() -> Self {
        InputConfig {
            flow_mode: FlowMode::Compensated,
            flow_scale: 0.5,
            ransac: RansacConfig::default(),
        }
    }
}

/// A video as network-ready tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedVideo {
    pub label: usize,
    /// `[3, F, H, W]`, centered to `[-0.5, 0.5]`.
    pub rgb: Tensor<f32>,
    /// `[2, F, H, W]`; frame `t` holds flow `t -> t+1`, the last frame
    /// repeats the final field.
    pub flow: Tensor<f32>,
    pub masks: Vec<super::render::Mask>,
    /// Frame pairs where the homography fit fell back to identity.
    pub low_confidence: usize,
}

impl PreparedVideo {
    pub fn frames(&self) -> usize {
        self.rgb.shape()[1]
    }

    /// Frames `start .. start + len` as `([3,L,H,W], [2,L,H,W])`.
    pub fn clip(&self, start: usize, len: usize) -> Result<(Tensor<f32>, Tensor<f32>)> {
        if len == 0 || start + len > self.frames() {
            return Err(FcanError::arg(
                "clip",
                format!("window {start}..{} exceeds {} frames", start + len, self.frames()),
            ));
        }
        Ok((window(&self.rgb, start, len)?, window(&self.flow, start, len)?))
    }
}

fn window(t: &Tensor<f32>, start: usize, len: usize) -> Result<Tensor<f32>> {
    let s = t.shape();
    let (c, f, plane) = (s[0], s[1], s[2] * s[3]);
    let mut out = Vec::with_capacity(c * len * plane);
    for ch in 0..c {
        let base = (ch * f + start) * plane;
        out.extend_from_slice(&t.data()[base..base + len * plane]);
    }
    Tensor::from_vec(&[c, len, s[2], s[3]], out)
}

/// Converts a sample to network input: centered RGB and (optionally
/// camera-compensated) flow passed through the 8-bit codec.
pub fn prepare_video(sample: &ClipSample, cfg: &InputConfig, bound: f64) -> Result<PreparedVideo> {
    let (f, h, w) = (sample.frames(), sample.height(), sample.width());
    if sample.flow.len() + 1 != f {
        return Err(FcanError::shape(
            "prepare_video",
            format!("{} frames need {} flow fields, got {}", f, f - 1, sample.flow.len()),
        ));
    }
    let mut low_confidence = 0;
    let mut fields = Vec::with_capacity(f - 1);
    for field in &sample.flow {
        let field = match cfg.flow_mode {
            FlowMode::Raw => field.clone(),
            FlowMode::Compensated => {
                let fit = fit_homography(field, &cfg.ransac)?;
                low_confidence += usize::from(fit.low_confidence);
                compensate(field, &fit.homography)?
            }
        };
        fields.push(quantize(&field, bound)?);
    }
    let plane = h * w;
    let mut flow = vec![0.0f32; 2 * f * plane];
    for t in 0..f {
        let field = &fields[t.min(f - 2)];
        for (i, (&u, &v)) in field.u().iter().zip(field.v()).enumerate() {
            flow[t * plane + i] = (u * cfg.flow_scale) as f32;
            flow[(f + t) * plane + i] = (v * cfg.flow_scale) as f32;
        }
    }
    Ok(PreparedVideo {
        label: sample.label,
        rgb: sample.rgb.map(|v| v - 0.5),
        flow: Tensor::from_vec(&[2, f, h, w], flow)?,
        masks: sample.masks.clone(),
        low_confidence,
    })
}

/// Start frames of `segments` equally spaced `len`-frame windows.
pub fn segment_starts(frames: usize, len: usize, segments: usize) -> Result<Vec<usize>> {
    if segments == 0 || len == 0 || len > frames {
        return Err(FcanError::arg(
            "segment_starts",
            format!("{segments} segments of {len} frames from a {frames}-frame video"),
        ));
    }
    let span = frames - len;
    if segments == 1 {
        return Ok(vec![span / 2]);
    }
    Ok((0..segments)
        .map(|i| ((i * span) as f64 / (segments - 1) as f64).round() as usize)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::scene::CameraMotion;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_scene() -> SceneConfig {
        SceneConfig {
            frames: 8,
            camera: CameraMotion::Identity,
            ..SceneConfig::default()
        }
    }

    #[test]
    fn split_counts_and_disjoint_seeds() {
        let d = generate_dataset(&ClassSet::default(), &small_scene(), 4, 0.5, 1).unwrap();
        assert_eq!(d.train.len(), 8);
        assert_eq!(d.test.len(), 8);
        for label in 0..4 {
            assert_eq!(d.train.iter().filter(|c| c.label == label).count(), 2);
            assert_eq!(d.test.iter().filter(|c| c.label == label).count(), 2);
        }
        let mut seeds: Vec<u64> = d.manifest.clips.iter().map(|e| e.seed).collect();
        seeds.sort();
        seeds.dedup();
        assert_eq!(seeds.len(), 16);
        let again = generate_dataset(&ClassSet::default(), &small_scene(), 4, 0.5, 1).unwrap();
        assert_eq!(again.manifest, d.manifest);
    }

    #[test]
    fn crop_index_arithmetic() {
        let c = generate_clip(&ClassSet::default(), 1, &small_scene(), 9).unwrap();
        let full = aligned_crop(&c, Crop { top: 0, left: 0, size: 32 }).unwrap();
        assert_eq!(full, c);
        let k = aligned_crop(&c, Crop { top: 4, left: 4, size: 24 }).unwrap();
        for t in 0..8 {
            for i in 0..24 {
                for j in 0..24 {
                    for ch in 0..3 {
                        assert_eq!(k.rgb.at(&[ch, t, i, j]), c.rgb.at(&[ch, t, i + 4, j + 4]));
                    }
                    assert_eq!(k.masks[t].get(j, i), c.masks[t].get(j + 4, i + 4));
                    if t < 7 {
                        assert_eq!(k.flow[t].at(j, i), c.flow[t].at(j + 4, i + 4));
                    }
                }
            }
        }
        assert!(aligned_crop(&c, Crop { top: 9, left: 0, size: 24 }).is_err());
        let mut r1 = ChaCha8Rng::seed_from_u64(3);
        let mut r2 = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(Crop::random(32, 32, 24, &mut r1).unwrap(), Crop::random(32, 32, 24, &mut r2).unwrap());
    }

    #[test]
    fn segments_are_equally_spaced() {
        assert_eq!(segment_starts(20, 16, 5).unwrap(), vec![0, 1, 2, 3, 4]);
        assert_eq!(segment_starts(20, 16, 1).unwrap(), vec![2]);
        assert_eq!(segment_starts(16, 16, 3).unwrap(), vec![0, 0, 0]);
        assert!(segment_starts(8, 16, 2).is_err());
    }

    #[test]
    fn prepared_flow_repeats_last_field() {
        let c = generate_clip(&ClassSet::default(), 0, &small_scene(), 2).unwrap();
        let cfg = InputConfig {
            flow_mode: FlowMode::Raw,
            flow_scale: 1.0,
            ..InputConfig::default()
        };
        let p = prepare_video(&c, &cfg, 20.0).unwrap();
        assert_eq!(p.flow.shape(), &[2, 8, 32, 32]);
        for ch in 0..2 {
            for i in 0..32 {
                assert_eq!(p.flow.at(&[ch, 7, i, 5]), p.flow.at(&[ch, 6, i, 5]));
            }
        }
        let (r, f) = p.clip(2, 4).unwrap();
        assert_eq!(r.shape(), &[3, 4, 32, 32]);
        assert_eq!(f.at(&[1, 0, 3, 3]), p.flow.at(&[1, 2, 3, 3]));
        assert!(p.clip(5, 4).is_err());
    }
}
