//! Rendering of one labeled video with exact flow, masks, and camera motion.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::scene::{ActionClass, BackgroundPattern, CameraMotion, ClassSet, SceneConfig, SpriteShape, FRAME_MARGIN};
use crate::error::{FcanError, Result};
use crate::flow::{FlowField, Homography};
use crate::imageio::GrayImage;
use crate::tensor::Tensor;

/// Binary foreground mask of one frame.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(FcanError::shape(
                "mask",
                format!("{width}x{height} needs {} entries, got {}", width * height, data.len()),
            ));
        }
        Ok(Mask { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn fraction(&self) -> f64 {
        self.count() as f64 / self.data.len() as f64
    }

    pub fn to_image(&self) -> GrayImage {
        let px = self.data.iter().map(|&b| if b { 255 } else { 0 }).collect();
        GrayImage::new(self.width, self.height, px).expect("mask extent")
    }

    /// Pixels at or above 128 count as foreground.
    pub fn from_image(img: &GrayImage) -> Self {
        Mask {
            width: img.width(),
            height: img.height(),
            data: img.pixels().iter().map(|&p| p >= 128).collect(),
        }
    }

    pub fn crop(&self, top: usize, left: usize, size: usize) -> Mask {
        let data = (0..size)
            .flat_map(|y| (0..size).map(move |x| (x, y)))
            .map(|(x, y)| self.get(left + x, top + y))
            .collect();
        Mask {
            width: size,
            height: size,
            data,
        }
    }
}

/// One generated video.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipSample {
    pub label: usize,
    pub seed: u64,
    /// `[3, F, H, W]`, values on the 8-bit grid `k/255`.
    pub rgb: Tensor<f32>,
    /// Observed flow, frame `t -> t+1`, `F - 1` fields.
    pub flow: Vec<FlowField>,
    /// Exact flow; absent for clips loaded from disk.
    pub flow_gt: Option<Vec<FlowField>>,
    /// One mask per frame.
    pub masks: Vec<Mask>,
    /// Background motion `t -> t+1`, `F - 1` homographies.
    pub camera: Vec<Homography>,
}

impl ClipSample {
    pub fn frames(&self) -> usize {
        self.rgb.shape()[1]
    }

    pub fn height(&self) -> usize {
        self.rgb.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.rgb.shape()[3]
    }
}

struct Grating {
    kx: f64,
    ky: f64,
    phase: f64,
    amp: f64,
}

struct Background {
    pattern: BackgroundPattern,
    channels: [Vec<Grating>; 3],
    tint: [f64; 3],
}

impl Background {
    fn sample(pattern: BackgroundPattern, tint: [f64; 3], rng: &mut ChaCha8Rng) -> Self {
        let channels = std::array::from_fn(|_| {
            (0..3)
                .map(|_| {
                    let freq = rng.gen_range(0.15..0.5);
                    let angle = rng.gen_range(0.0..TAU);
                    Grating {
                        kx: freq * angle.cos(),
                        ky: freq * angle.sin(),
                        phase: rng.gen_range(0.0..TAU),
                        amp: rng.gen_range(0.04..0.1),
                    }
                })
                .collect()
        });
        Background {
            pattern,
            channels,
            tint,
        }
    }

    fn color(&self, x: f64, y: f64) -> [f64; 3] {
        std::array::from_fn(|c| {
            let base = 0.5 + self.tint[c];
            match self.pattern {
                BackgroundPattern::Flat => base,
                BackgroundPattern::Gratings => {
                    base + self.channels[c]
                        .iter()
                        .map(|g| g.amp * (g.kx * x + g.ky * y + g.phase).sin())
                        .sum::<f64>()
                }
            }
        })
    }
}

#[derive(Clone)]
struct Appearance {
    shape: SpriteShape,
    radius: f64,
    color: [f64; 3],
    stripe_period: f64,
}

impl Appearance {
    /// Coverage and color at sprite-local point `q` (scale-1 px), for a
    /// sprite drawn at `scale`.
    fn sample(&self, q: (f64, f64), scale: f64) -> (f64, [f64; 3]) {
        let d = match self.shape {
            SpriteShape::Disc => q.0.hypot(q.1),
            SpriteShape::Square => q.0.abs().max(q.1.abs()),
        };
        let alpha = ((self.radius - d) * scale + 0.5).clamp(0.0, 1.0);
        let stripe = 0.8 + 0.2 * (TAU * q.0 / self.stripe_period).cos();
        (alpha, self.color.map(|c| c * stripe))
    }

    fn inside(&self, q: (f64, f64)) -> bool {
        match self.shape {
            SpriteShape::Disc => q.0.hypot(q.1) <= self.radius,
            SpriteShape::Square => q.0.abs().max(q.1.abs()) <= self.radius,
        }
    }
}

fn camera_path(scene: &SceneConfig, rng: &mut ChaCha8Rng) -> Result<Vec<Homography>> {
    let f = scene.frames;
    let (cx, cy) = ((scene.width as f64 - 1.0) / 2.0, (scene.height as f64 - 1.0) / 2.0);
    match scene.camera {
        CameraMotion::Identity => Ok(vec![Homography::identity(); f]),
        CameraMotion::Translation { tx, ty } => Ok((0..f)
            .map(|t| Homography::translation(tx * t as f64, ty * t as f64))
            .collect()),
        CameraMotion::TranslationRotation { tx, ty, degrees } => {
            let step = Homography::translation(tx, ty).compose(&Homography::rotation_about(degrees.to_radians(), cx, cy))?;
            let mut out = vec![Homography::identity()];
            for t in 1..f {
                out.push(step.compose(&out[t - 1])?);
            }
            Ok(out)
        }
        CameraMotion::Pan {
            amplitude,
            rotation_degrees,
            period_frames,
        } => {
            let mut omega = || TAU / rng.gen_range(period_frames[0]..=period_frames[1]);
            let (wx, wy, wr) = (omega(), omega(), omega());
            let (px, py, pr) = (rng.gen_range(0.0..TAU), rng.gen_range(0.0..TAU), rng.gen_range(0.0..TAU));
            let rot = rotation_degrees.to_radians();
            (0..f)
                .map(|t| {
                    let t = t as f64;
                    let shift = Homography::translation(amplitude * (wx * t + px).sin(), amplitude * (wy * t + py).sin());
                    shift.compose(&Homography::rotation_about(rot * (wr * t + pr).sin(), cx, cy))
                })
                .collect()
        }
    }
}

/// Sprite center offsets (world px, relative to the start) and scales per frame.
fn sprite_path(class: ActionClass, scene: &SceneConfig, rng: &mut ChaCha8Rng) -> Vec<((f64, f64), f64)> {
    let f = scene.frames;
    let k = scene.motion_scale;
    match class {
        ActionClass::MovesLeft | ActionClass::MovesRight => {
            let [lo, hi] = scene.sprite_speed;
            let v = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
            let dir = if class == ActionClass::MovesLeft { -1.0 } else { 1.0 };
            (0..f).map(|t| ((dir * v * k * t as f64, 0.0), 1.0)).collect()
        }
        ActionClass::OscillatesVertically => {
            let phase = rng.gen_range(0.0..TAU);
            let a = scene.oscillation_amplitude * k;
            let w = TAU / scene.oscillation_period;
            (0..f)
                .map(|t| ((0.0, a * ((w * t as f64 + phase).sin() - phase.sin())), 1.0))
                .collect()
        }
        ActionClass::GrowsThenShrinks => {
            let g = (scene.peak_scale - 1.0) * k;
            let span = (f - 1).max(1) as f64;
            (0..f)
                .map(|t| ((0.0, 0.0), 1.0 + g * (PI * t as f64 / span).sin()))
                .collect()
        }
    }
}

fn start_range(lo: f64, hi: f64, offsets: impl Iterator<Item = f64> + Clone) -> Option<(f64, f64)> {
    let min = offsets.clone().fold(f64::INFINITY, f64::min);
    let max = offsets.fold(f64::NEG_INFINITY, f64::max);
    let (a, b) = (lo - min, hi - max);
    (a <= b).then_some((a, b))
}

fn pick(rng: &mut ChaCha8Rng, (a, b): (f64, f64)) -> f64 {
    if b > a {
        rng.gen_range(a..=b)
    } else {
        a
    }
}

/// An independently moving sprite.
struct Mover {
    look: Appearance,
    path: Vec<((f64, f64), f64)>,
    /// Sprite local (scale-1 px) to image, per frame.
    to_image: Vec<Homography>,
    to_local: Vec<Homography>,
}

impl Mover {
    fn new(look: Appearance, path: Vec<((f64, f64), f64)>, start: (f64, f64), cams: &[Homography]) -> Result<Self> {
        let to_image: Vec<Homography> = path
            .iter()
            .zip(cams)
            .map(|(&((dx, dy), s), cam)| {
                let local = Homography::translation(start.0 + dx, start.1 + dy).compose(&Homography::scale_about(s, 0.0, 0.0))?;
                cam.compose(&local)
            })
            .collect::<Result<_>>()?;
        let to_local = to_image.iter().map(|g| g.inverse()).collect::<Result<_>>()?;
        Ok(Mover {
            look,
            path,
            to_image,
            to_local,
        })
    }
}

/// Renders one video of class `label`. Everything is a pure function of
/// `(classes, label, scene, seed)`.
pub fn generate_clip(classes: &ClassSet, label: usize, scene: &SceneConfig, seed: u64) -> Result<ClipSample> {
    scene.validate()?;
    let class = classes.get(label)?;
    let (w, h, f) = (scene.width, scene.height, scene.frames);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let cams = camera_path(scene, &mut rng)?;

    let tint = if classes.scene_confound {
        std::array::from_fn(|c| if c == label % 3 { 0.12 } else { -0.04 })
    } else {
        [0.0; 3]
    };
    let background = Background::sample(scene.background, tint, &mut rng);
    // The actor is warm-colored and striped; moving decoys are cool-colored.
    let warm = |rng: &mut ChaCha8Rng| [rng.gen_range(0.8..0.95), rng.gen_range(0.3..0.7), rng.gen_range(0.03..0.15)];
    let look = Appearance {
        shape: scene.sprite_shape,
        radius: scene.sprite_radius,
        color: warm(&mut rng),
        stripe_period: rng.gen_range(2.5..4.0),
    };

    // Keep each bounding circle inside the margin for every frame.
    let excursion = scene.camera.max_excursion(f, w, h);
    let reach = |s: f64| scene.sprite_radius * scene.corner_factor() * s;
    let trajectory = || FcanError::Config("sprite trajectory leaves the frame".into());
    let place = |path: &[((f64, f64), f64)], rng: &mut ChaCha8Rng| -> Result<(f64, f64)> {
        let s_max = path.iter().map(|p| p.1).fold(1.0, f64::max);
        let lo = FRAME_MARGIN + excursion + reach(s_max);
        let rx = start_range(lo, w as f64 - 1.0 - lo, path.iter().map(|p| p.0 .0)).ok_or_else(trajectory)?;
        let ry = start_range(lo, h as f64 - 1.0 - lo, path.iter().map(|p| p.0 .1)).ok_or_else(trajectory)?;
        Ok((pick(rng, rx), pick(rng, ry)))
    };

    let mut movers = Vec::with_capacity(scene.movers + 1);
    for _ in 0..scene.movers {
        let others: Vec<usize> = (0..classes.len()).filter(|&i| i != label).collect();
        let decoy = if others.is_empty() {
            class
        } else {
            classes.get(others[rng.gen_range(0..others.len())])?
        };
        let path = sprite_path(decoy, scene, &mut rng);
        let start = place(&path, &mut rng)?;
        let [r, g, b] = warm(&mut rng);
        let appearance = Appearance {
            shape: scene.sprite_shape,
            radius: scene.sprite_radius,
            color: [b, g, r],
            stripe_period: f64::INFINITY,
        };
        movers.push(Mover::new(appearance, path, start, &cams)?);
    }
    let path = sprite_path(class, scene, &mut rng);
    let start = place(&path, &mut rng)?;

    let distractors: Vec<(f64, f64)> = (0..scene.distractors)
        .map(|_| {
            let r = reach(1.0);
            (
                rng.gen_range(-r..w as f64 - 1.0 + r),
                rng.gen_range(-r..h as f64 - 1.0 + r),
            )
        })
        .collect();
    // Drawn last, so on top.
    movers.push(Mover::new(look.clone(), path, start, &cams)?);
    let image_to_world: Vec<Homography> = cams.iter().map(|m| m.inverse()).collect::<Result<_>>()?;

    for m in &movers {
        for (t, g) in m.to_image.iter().enumerate() {
            let (x, y) = g.apply(0.0, 0.0).ok_or_else(trajectory)?;
            let r = reach(m.path[t].1);
            let e = FRAME_MARGIN;
            if x - r < e || y - r < e || x + r > w as f64 - 1.0 - e || y + r > h as f64 - 1.0 - e {
                return Err(trajectory());
            }
        }
    }

    let noise = Normal::new(0.0, scene.noise_sigma.max(1e-300)).expect("finite sigma");
    let plane = h * w;
    let mut rgb = vec![0.0f32; 3 * f * plane];
    let mut masks = Vec::with_capacity(f);
    // Index of the topmost mover covering each pixel, per frame.
    let mut owner: Vec<Vec<Option<usize>>> = Vec::with_capacity(f);
    for t in 0..f {
        let mut own = vec![None; plane];
        for y in 0..h {
            for x in 0..w {
                let p = (x as f64, y as f64);
                let wp = image_to_world[t].apply(p.0, p.1).ok_or_else(trajectory)?;
                let mut px = background.color(wp.0, wp.1);
                for d in &distractors {
                    let (a, c) = look.sample((wp.0 - d.0, wp.1 - d.1), 1.0);
                    for k in 0..3 {
                        px[k] += a * (c[k] - px[k]);
                    }
                }
                for (i, m) in movers.iter().enumerate() {
                    let q = m.to_local[t].apply(p.0, p.1).ok_or_else(trajectory)?;
                    let (a, c) = m.look.sample(q, m.path[t].1);
                    for k in 0..3 {
                        px[k] += a * (c[k] - px[k]);
                    }
                    if m.look.inside(q) {
                        own[y * w + x] = Some(i);
                    }
                }
                for (k, v) in px.iter().enumerate() {
                    let v = if scene.noise_sigma > 0.0 { v + noise.sample(&mut rng) } else { *v };
                    let q8 = (v.clamp(0.0, 1.0) * 255.0).round();
                    rgb[(k * f + t) * plane + y * w + x] = (q8 / 255.0) as f32;
                }
            }
        }
        masks.push(Mask::new(w, h, own.iter().map(Option::is_some).collect())?);
        owner.push(own);
    }

    let mut camera = Vec::with_capacity(f - 1);
    let mut flow_gt = Vec::with_capacity(f - 1);
    for t in 0..f - 1 {
        let bg = cams[t + 1].compose(&image_to_world[t])?;
        let fg: Vec<Homography> = movers
            .iter()
            .map(|m| m.to_image[t + 1].compose(&m.to_local[t]))
            .collect::<Result<_>>()?;
        let mut u = Vec::with_capacity(plane);
        let mut v = Vec::with_capacity(plane);
        for y in 0..h {
            for x in 0..w {
                let hm = owner[t][y * w + x].map_or(&bg, |i| &fg[i]);
                let (qx, qy) = hm.apply(x as f64, y as f64).ok_or_else(trajectory)?;
                u.push(qx - x as f64);
                v.push(qy - y as f64);
            }
        }
        flow_gt.push(FlowField::new(w, h, u, v)?);
        camera.push(bg);
    }

    let flow = if scene.flow_noise_sigma > 0.0 {
        let n = Normal::new(0.0, scene.flow_noise_sigma).expect("finite sigma");
        flow_gt
            .iter()
            .map(|fl| {
                FlowField::from_fn(w, h, |x, y| {
                    let (a, b) = fl.at(x, y);
                    (a + n.sample(&mut rng), b + n.sample(&mut rng))
                })
            })
            .collect()
    } else {
        flow_gt.clone()
    };

    Ok(ClipSample {
        label,
        seed,
        rgb: Tensor::from_vec(&[3, f, h, w], rgb)?,
        flow,
        flow_gt: Some(flow_gt),
        masks,
        camera,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::induced_flow;

    #[test]
    fn default_clip_shapes_and_ranges() {
        let scene = SceneConfig::default();
        let c = generate_clip(&ClassSet::default(), 2, &scene, 11).unwrap();
        assert_eq!(c.rgb.shape(), &[3, scene.frames, 32, 32]);
        assert_eq!(c.flow.len(), scene.frames - 1);
        assert_eq!(c.masks.len(), scene.frames);
        assert_eq!(c.camera.len(), scene.frames - 1);
        assert!(c.rgb.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        for m in &c.masks {
            assert!((0.02..=0.30).contains(&m.fraction()), "{}", m.fraction());
        }
    }

    #[test]
    fn outside_mask_is_camera_flow() {
        let c = generate_clip(&ClassSet::default(), 0, &SceneConfig::default(), 3).unwrap();
        let gt = c.flow_gt.as_ref().unwrap();
        for t in 0..gt.len() {
            let bg = induced_flow(&c.camera[t], 32, 32).unwrap();
            for y in 0..32 {
                for x in 0..32 {
                    if !c.masks[t].get(x, y) {
                        assert_eq!(gt[t].at(x, y), bg.at(x, y));
                    }
                }
            }
        }
    }

    #[test]
    fn bad_label_rejected() {
        assert!(generate_clip(&ClassSet::default(), 4, &SceneConfig::default(), 0).is_err());
    }

    #[test]
    fn deterministic_in_seed() {
        let s = SceneConfig::default();
        let a = generate_clip(&ClassSet::default(), 3, &s, 42).unwrap();
        let b = generate_clip(&ClassSet::default(), 3, &s, 42).unwrap();
        assert_eq!(a, b);
        let c = generate_clip(&ClassSet::default(), 3, &s, 43).unwrap();
        assert_ne!(a.rgb, c.rgb);
    }
}
