//! Scene and class configuration for the synthetic video generator.

use serde::{Deserialize, Serialize};

use crate::error::{FcanError, Result};
use crate::flow::DEFAULT_FLOW_BOUND;

/// Camera motion between consecutive frames, expressed as the motion of the
/// background in the image (px/frame, degrees/frame).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CameraMotion {
    Identity,
    Translation {
        tx: f64,
        ty: f64,
    },
    TranslationRotation {
        tx: f64,
        ty: f64,
        degrees: f64,
    },
    /// Smooth random shake drawn per clip: an oscillating offset of up to
    /// `amplitude` px plus an oscillating rotation of up to `rotation_degrees`
    /// about the frame center, with periods in `period_frames`.
    Pan {
        amplitude: f64,
        rotation_degrees: f64,
        period_frames: [f64; 2],
    },
}

impl CameraMotion {
    /// Upper bound on how far the camera can displace any point of a
    /// `width x height` frame, accumulated over `frames` frames.
    pub(crate) fn max_excursion(&self, frames: usize, width: usize, height: usize) -> f64 {
        let steps = frames.saturating_sub(1) as f64;
        let radius = 0.5 * (width as f64).hypot(height as f64);
        match *self {
            CameraMotion::Identity => 0.0,
            CameraMotion::Translation { tx, ty } => steps * tx.hypot(ty),
            CameraMotion::TranslationRotation { tx, ty, degrees } => {
                steps * (tx.hypot(ty) + degrees.abs().to_radians() * radius)
            }
            CameraMotion::Pan {
                amplitude,
                rotation_degrees,
                ..
            } => std::f64::consts::SQRT_2 * amplitude + rotation_degrees.abs().to_radians() * radius,
        }
    }

    /// Upper bound on the per-frame background displacement.
    pub(crate) fn max_step(&self, width: usize, height: usize) -> f64 {
        let radius = 0.5 * (width as f64).hypot(height as f64);
        match *self {
            CameraMotion::Identity => 0.0,
            CameraMotion::Translation { tx, ty } => tx.hypot(ty),
            CameraMotion::TranslationRotation { tx, ty, degrees } => {
                tx.hypot(ty) + degrees.abs().to_radians() * radius
            }
            CameraMotion::Pan {
                amplitude,
                rotation_degrees,
                period_frames,
            } => {
                let w = std::f64::consts::TAU / period_frames[0];
                w * (std::f64::consts::SQRT_2 * amplitude + rotation_degrees.abs().to_radians() * radius)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpriteShape {
    Disc,
    Square,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackgroundPattern {
    Flat,
    /// Sum of random low-frequency color gratings.
    Gratings,
}

/// The motion-defined action classes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionClass {
    MovesLeft,
    MovesRight,
    OscillatesVertically,
    GrowsThenShrinks,
}

impl ActionClass {
    pub const ALL: [ActionClass; 4] = [
        ActionClass::MovesLeft,
        ActionClass::MovesRight,
        ActionClass::OscillatesVertically,
        ActionClass::GrowsThenShrinks,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ActionClass::MovesLeft => "moves_left",
            ActionClass::MovesRight => "moves_right",
            ActionClass::OscillatesVertically => "oscillates_vertically",
            ActionClass::GrowsThenShrinks => "grows_then_shrinks",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassSet {
    pub classes: Vec<ActionClass>,
    /// Tints the background per class, giving the RGB stream an appearance
    /// shortcut. Off by default so only motion separates the classes.
    pub scene_confound: bool,
}

impl Default for ClassSet {
    fn default() -> Self {
        ClassSet {
            classes: ActionClass::ALL.to_vec(),
            scene_confound: false,
        }
    }
}

impl ClassSet {
    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn get(&self, label: usize) -> Result<ActionClass> {
        self.classes.get(label).copied().ok_or_else(|| {
            FcanError::arg(
                "generate_clip",
                format!("label {label} out of range for {} classes", self.classes.len()),
            )
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    /// Frames per generated video; clips are windows of this.
    pub frames: usize,
    pub background: BackgroundPattern,
    pub camera: CameraMotion,
    pub sprite_shape: SpriteShape,
    /// Sprite radius (half side for squares) in px at scale 1.
    pub sprite_radius: f64,
    /// Speed of the left/right classes, px/frame, drawn uniformly per clip.
    pub sprite_speed: [f64; 2],
    /// Peak displacement of the vertical oscillation, px.
    pub oscillation_amplitude: f64,
    pub oscillation_period: f64,
    /// Peak scale of the grow-then-shrink class.
    pub peak_scale: f64,
    /// Multiplies every class motion; 0 freezes the sprite in the world.
    pub motion_scale: f64,
    /// Static copies of the sprite scattered over the background.
    pub distractors: usize,
    /// Cool-colored sprites performing another class's motion; they count
    /// as foreground.
    pub movers: usize,
    pub noise_sigma: f64,
    /// Gaussian noise added to the observed flow (the ground truth stays exact).
    pub flow_noise_sigma: f64,
    pub flow_bound: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            height: 32,
            width: 32,
            frames: 20,
            background: BackgroundPattern::Gratings,
            camera: CameraMotion::Pan {
                amplitude: 2.0,
                rotation_degrees: 1.5,
                period_frames: [8.0, 16.0],
            },
            sprite_shape: SpriteShape::Disc,
            sprite_radius: 3.5,
            sprite_speed: [0.45, 0.65],
            oscillation_amplitude: 3.0,
            oscillation_period: 8.0,
            peak_scale: 1.7,
            motion_scale: 1.0,
            distractors: 3,
            movers: 1,
            noise_sigma: 1.0 / 255.0,
            flow_noise_sigma: 0.0,
            flow_bound: DEFAULT_FLOW_BOUND,
        }
    }
}

/// Keep-out margin between the sprite and the frame border, px.
pub const FRAME_MARGIN: f64 = 2.0;

impl SceneConfig {
    /// Largest sprite scale reached by any class.
    pub(crate) fn max_scale(&self) -> f64 {
        1.0 + (self.peak_scale - 1.0).max(0.0) * self.motion_scale
    }

    /// Half-diagonal factor of the sprite's bounding circle.
    pub(crate) fn corner_factor(&self) -> f64 {
        match self.sprite_shape {
            SpriteShape::Disc => 1.0,
            SpriteShape::Square => std::f64::consts::SQRT_2,
        }
    }

    /// Width and height swept by the sprite relative to the world, px.
    pub(crate) fn required_room(&self, class: ActionClass) -> (f64, f64) {
        let d = 2.0 * self.sprite_radius * self.corner_factor();
        let steps = self.frames.saturating_sub(1) as f64;
        match class {
            ActionClass::MovesLeft | ActionClass::MovesRight => {
                (d + self.sprite_speed[1] * steps * self.motion_scale, d)
            }
            ActionClass::OscillatesVertically => (d, d + 2.0 * self.oscillation_amplitude * self.motion_scale),
            ActionClass::GrowsThenShrinks => (d * self.max_scale(), d * self.max_scale()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FcanError::Config(m));
        if self.height < 8 || self.width < 8 {
            return bad(format!("scene must be at least 8x8, got {}x{}", self.width, self.height));
        }
        if self.frames < 2 {
            return bad(format!("need at least 2 frames, got {}", self.frames));
        }
        if !(self.sprite_radius > 0.0) {
            return bad("sprite_radius must be > 0".into());
        }
        if !(self.sprite_speed[0] >= 0.0 && self.sprite_speed[0] <= self.sprite_speed[1]) {
            return bad(format!("sprite_speed {:?} must be an ordered non-negative range", self.sprite_speed));
        }
        if !(self.peak_scale >= 1.0) || !(self.motion_scale >= 0.0) {
            return bad("peak_scale must be >= 1 and motion_scale >= 0".into());
        }
        if !(self.oscillation_period > 0.0) || !(self.oscillation_amplitude >= 0.0) {
            return bad("oscillation period must be > 0 and amplitude >= 0".into());
        }
        if !(self.noise_sigma >= 0.0) || !(self.flow_noise_sigma >= 0.0) {
            return bad("noise levels must be >= 0".into());
        }
        if !(self.flow_bound > 0.0) {
            return bad("flow_bound must be > 0".into());
        }
        if let CameraMotion::Pan { period_frames, .. } = self.camera {
            if !(period_frames[0] > 0.0 && period_frames[0] <= period_frames[1]) {
                return bad(format!("pan period range {period_frames:?} is invalid"));
            }
        }

        let area = (self.width * self.height) as f64;
        let unit_area = match self.sprite_shape {
            SpriteShape::Disc => std::f64::consts::PI,
            SpriteShape::Square => 4.0,
        };
        let smallest = unit_area * self.sprite_radius.powi(2) / area;
        let largest = smallest * self.max_scale().powi(2) * (1 + self.movers) as f64;
        if smallest < 0.02 || largest > 0.30 {
            return bad(format!(
                "sprites cover {:.1}%..{:.1}% of the frame, outside [2%, 30%]",
                100.0 * smallest,
                100.0 * largest
            ));
        }

        let step = self.camera.max_step(self.width, self.height);
        if step > self.flow_bound {
            return bad(format!(
                "camera moves up to {step:.2} px/frame, beyond the flow bound {}",
                self.flow_bound
            ));
        }

        let cam = 2.0 * self.camera.max_excursion(self.frames, self.width, self.height);
        for class in ActionClass::ALL {
            let (rx, ry) = self.required_room(class);
            let (need_x, need_y) = (rx + cam + 2.0 * FRAME_MARGIN, ry + cam + 2.0 * FRAME_MARGIN);
            if need_x > self.width as f64 - 1.0 || need_y > self.height as f64 - 1.0 {
                return bad(format!(
                    "sprite trajectory for class {} leaves the frame: needs {need_x:.1}x{need_y:.1} px of room, frame is {}x{}",
                    class.name(),
                    self.width,
                    self.height
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        SceneConfig::default().validate().unwrap();
    }

    #[test]
    fn fast_translation_rejected() {
        let cfg = SceneConfig {
            camera: CameraMotion::Translation { tx: 2.0, ty: 0.0 },
            ..SceneConfig::default()
        };
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("leaves the frame"), "{msg}");
    }

    #[test]
    fn tiny_sprite_rejected() {
        let cfg = SceneConfig {
            sprite_radius: 1.0,
            ..SceneConfig::default()
        };
        assert!(cfg.validate().unwrap_err().to_string().contains("2%"));
    }

    #[test]
    fn json_round_trip() {
        let cfg = SceneConfig::default();
        let s = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<SceneConfig>(&s).unwrap(), cfg);
        let partial: SceneConfig = serde_json::from_str(r#"{"camera":{"kind":"identity"}}"#).unwrap();
        assert_eq!(partial.camera, CameraMotion::Identity);
        assert!(serde_json::from_str::<SceneConfig>(r#"{"bogus":1}"#).is_err());
    }
}
