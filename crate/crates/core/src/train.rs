//! Momentum SGD on the summed spatial and temporal cross-entropy.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Tape;
use crate::error::{FcanError, Result};
use crate::network::{FcanModel, ForwardOptions};
use crate::synth::PreparedVideo;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Both streams and the cross-links from the first iteration.
    Joint,
    /// Temporal stream alone for the first half, then the spatial stream and
    /// cross-links with the temporal stream frozen.
    Stagewise,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr_initial: f64,
    pub lr_decay_factor: f64,
    pub decay_iters: Vec<usize>,
    pub total_iters: usize,
    pub batch_size: usize,
    pub momentum: f64,
    pub dropout_fc: [f64; 2],
    pub seed: u64,
    pub detach_crosslink: bool,
    pub mode: TrainMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_initial: 1e-4,
            lr_decay_factor: 0.1,
            decay_iters: vec![600, 900],
            total_iters: 1000,
            batch_size: 16,
            momentum: 0.9,
            dropout_fc: [0.5, 0.5],
            seed: 0,
            detach_crosslink: false,
            mode: TrainMode::Joint,
        }
    }
}

impl TrainConfig {
    /// Dropout of the larger model the schedule was first tuned on.
    pub const PAPER_SCALE_DROPOUT: [f64; 2] = [0.9, 0.8];

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FcanError::Config(m));
        if !(self.lr_initial > 0.0 && self.lr_initial.is_finite()) {
            return bad(format!("lr_initial must be positive, got {}", self.lr_initial));
        }
        if !(self.lr_decay_factor > 0.0) {
            return bad("lr_decay_factor must be > 0".into());
        }
        if self.total_iters == 0 || self.batch_size == 0 {
            return bad("total_iters and batch_size must be >= 1".into());
        }
        if self.decay_iters.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("decay_iters {:?} must be strictly increasing", self.decay_iters));
        }
        if self.decay_iters.last().is_some_and(|&d| d >= self.total_iters) {
            return bad(format!(
                "decay_iters {:?} must stay below total_iters {}",
                self.decay_iters, self.total_iters
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if self.dropout_fc.iter().any(|p| !(0.0..1.0).contains(p)) {
            return bad(format!("dropout probabilities {:?} must lie in [0, 1)", self.dropout_fc));
        }
        Ok(())
    }

    /// Step schedule: `lr_initial * factor^(number of boundaries <= iter)`.
    pub fn lr_at(&self, iter: usize) -> f64 {
        let k = self.decay_iters.iter().filter(|&&d| d <= iter).count();
        self.lr_initial * self.lr_decay_factor.powi(k as i32)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub iter: usize,
    pub lr: f64,
    pub loss: f64,
}

/// Plain momentum SGD, `v = mu v + lr g; w -= v`.
#[derive(Clone, Debug)]
pub struct Sgd<T> {
    pub momentum: f64,
    velocity: Vec<Vec<T>>,
}

impl<T: Real> Sgd<T> {
    pub fn new(momentum: f64) -> Self {
        Sgd {
            momentum,
            velocity: Vec::new(),
        }
    }

    /// Updates `params[i]` with `grads[i]`; `None` leaves a tensor untouched.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[Option<&[T]>], lr: f64) {
        if self.velocity.len() != params.len() {
            self.velocity = params.iter().map(|p| vec![T::zero(); p.numel()]).collect();
        }
        let mu = T::from_f64_lossy(self.momentum);
        let lr = T::from_f64_lossy(lr);
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            let Some(g) = g else { continue };
            for ((w, &gi), vi) in p.data_mut().iter_mut().zip(g.iter()).zip(v.iter_mut()) {
                *vi = mu * *vi + lr * gi;
                *w -= *vi;
            }
        }
    }
}

/// Where a training clip is cut from its video.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub start: usize,
    pub top: usize,
    pub left: usize,
}

/// Cuts a `[C, L, h, w]` window out of a `[C, F, H, W]` video tensor.
pub fn cut<T: Real>(video: &Tensor<f32>, win: Window, len: usize, h: usize, w: usize) -> Result<Tensor<T>> {
    let s = video.shape();
    let (c, f, vh, vw) = (s[0], s[1], s[2], s[3]);
    if win.start + len > f || win.top + h > vh || win.left + w > vw {
        return Err(FcanError::arg(
            "cut",
            format!("window {win:?} of {len}x{h}x{w} exceeds video {s:?}"),
        ));
    }
    let mut out = Vec::with_capacity(c * len * h * w);
    let data = video.data();
    for ch in 0..c {
        for t in win.start..win.start + len {
            for y in win.top..win.top + h {
                let base = ((ch * f + t) * vh + y) * vw + win.left;
                out.extend(data[base..base + w].iter().map(|&v| T::from_f32(v).unwrap()));
            }
        }
    }
    Tensor::from_vec(&[c, len, h, w], out)
}

/// Network-sized batch from a set of videos and windows.
pub fn make_batch<T: Real>(
    model: &FcanModel<T>,
    videos: &[&PreparedVideo],
    windows: &[Window],
) -> Result<(Tensor<T>, Tensor<T>, Vec<usize>)> {
    let c = &model.config;
    let mut rgb = Vec::with_capacity(videos.len());
    let mut flow = Vec::with_capacity(videos.len());
    for (v, &win) in videos.iter().zip(windows) {
        rgb.push(cut(&v.rgb, win, c.frames, c.height, c.width)?);
        flow.push(cut(&v.flow, win, c.frames, c.height, c.width)?);
    }
    let labels = videos.iter().map(|v| v.label).collect();
    Ok((Tensor::stack(&rgb)?, Tensor::stack(&flow)?, labels))
}

/// Centered window of the network's input size.
pub fn center_window<T: Real>(model: &FcanModel<T>, video: &PreparedVideo, start: usize) -> Window {
    let s = video.rgb.shape();
    Window {
        start,
        top: (s[2] - model.config.height) / 2,
        left: (s[3] - model.config.width) / 2,
    }
}

fn check_videos<T: Real>(model: &FcanModel<T>, videos: &[PreparedVideo]) -> Result<()> {
    let c = &model.config;
    for (i, v) in videos.iter().enumerate() {
        let s = v.rgb.shape();
        if s[1] < c.frames || s[2] < c.height || s[3] < c.width {
            return Err(FcanError::shape(
                "train",
                format!(
                    "video {i} {s:?} is smaller than the network input {}x{}x{}",
                    c.frames, c.height, c.width
                ),
            ));
        }
        if v.label >= c.num_classes {
            return Err(FcanError::arg(
                "train",
                format!("video {i} has label {} but the model has {} classes", v.label, c.num_classes),
            ));
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub loss_curve: Vec<LossPoint>,
}

/// Trains `model` in place. Each iteration draws `batch_size` videos from a
/// per-epoch shuffle and cuts a random temporal (and, for videos larger than
/// the input, spatial) window from each, identical for RGB and flow.
pub fn train<T: Real>(
    model: &mut FcanModel<T>,
    videos: &[PreparedVideo],
    cfg: &TrainConfig,
    mut progress: Option<&mut dyn FnMut(&LossPoint)>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if videos.is_empty() {
        return Err(FcanError::arg("train", "training set is empty"));
    }
    check_videos(model, videos)?;
    model.config.dropout_fc = cfg.dropout_fc;
    let (len, h, w) = (model.config.frames, model.config.height, model.config.width);
    let two_stream = model.temporal.is_some();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = Vec::new();
    let mut sgd = Sgd::new(cfg.momentum);
    let mut curve = Vec::with_capacity(cfg.total_iters);
    let stage_switch = cfg.total_iters / 2;

    for iter in 0..cfg.total_iters {
        let mut picks = Vec::with_capacity(cfg.batch_size);
        let mut windows = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            if order.is_empty() {
                order = (0..videos.len()).collect();
                order.shuffle(&mut rng);
            }
            let v = &videos[order.pop().unwrap()];
            let s = v.rgb.shape();
            windows.push(Window {
                start: rng.gen_range(0..=s[1] - len),
                top: rng.gen_range(0..=s[2] - h),
                left: rng.gen_range(0..=s[3] - w),
            });
            picks.push(v);
        }
        let (rgb, flow, labels) = make_batch(model, &picks, &windows)?;
        let lr = cfg.lr_at(iter);

        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, true);
        let r = tape.constant(rgb);
        let f = tape.constant(flow);
        let opts = ForwardOptions {
            training: true,
            detach_crosslink: cfg.detach_crosslink,
            dropout_seed: rng.gen(),
        };
        let temporal_stage = two_stream && cfg.mode == TrainMode::Stagewise && iter < stage_switch;
        let loss = if temporal_stage {
            let (logits, _) = model.forward_temporal(&mut tape, &bound, f, opts)?;
            tape.softmax_cross_entropy(logits, &labels)?
        } else {
            let out = model.forward(&mut tape, &bound, r, two_stream.then_some(f), opts)?;
            let ls = tape.softmax_cross_entropy(out.spatial_logits, &labels)?;
            match out.temporal_logits {
                Some(t) if cfg.mode == TrainMode::Joint => {
                    let lt = tape.softmax_cross_entropy(t, &labels)?;
                    tape.add(ls, lt)?
                }
                _ => ls,
            }
        };
        let value = tape.value(loss).data()[0].to_f64_lossy();
        if !value.is_finite() {
            return Err(FcanError::NonFiniteLoss { iter, lr });
        }
        tape.backward(loss)?;

        let frozen_temporal = two_stream && cfg.mode == TrainMode::Stagewise && !temporal_stage;
        let n_spatial = model.spatial.convs.len() * 2 + 6;
        let n_temporal = if two_stream { n_spatial } else { 0 };
        let grads: Vec<Option<&[T]>> = bound
            .params
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                let temporal = i >= n_spatial && i < n_spatial + n_temporal;
                if (temporal && frozen_temporal) || (!temporal && temporal_stage) {
                    None
                } else {
                    tape.grad_slice(p)
                }
            })
            .collect();
        let mut params: Vec<&mut Tensor<T>> = model.parameters_mut().into_iter().map(|(_, t)| t).collect();
        sgd.step(&mut params, &grads, lr);

        let point = LossPoint { iter, lr, loss: value };
        if let Some(cb) = progress.as_mut() {
            cb(&point);
        }
        curve.push(point);
    }
    Ok(TrainReport { loss_curve: curve })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_steps_by_factor() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.lr_at(0), 1e-4);
        assert_eq!(cfg.lr_at(599), 1e-4);
        assert!((cfg.lr_at(600) - 1e-5).abs() < 1e-20);
        assert!((cfg.lr_at(899) - 1e-5).abs() < 1e-20);
        assert!((cfg.lr_at(900) - 1e-6).abs() < 1e-21);
    }

    #[test]
    fn invalid_schedules_rejected() {
        for cfg in [
            TrainConfig {
                decay_iters: vec![900, 600],
                ..TrainConfig::default()
            },
            TrainConfig {
                decay_iters: vec![600, 1000],
                ..TrainConfig::default()
            },
            TrainConfig {
                momentum: 1.0,
                ..TrainConfig::default()
            },
        ] {
            assert!(cfg.validate().is_err());
        }
    }

    #[test]
    fn plain_sgd_step_on_half_norm() {
        // loss = 0.5 |w|^2 has gradient w, so one step gives w (1 - lr).
        let mut w = Tensor::from_vec(&[3], vec![1.0f64, -2.0, 0.5]).unwrap();
        let g = w.data().to_vec();
        let mut sgd = Sgd::new(0.0);
        sgd.step(&mut [&mut w], &[Some(&g)], 0.1);
        assert_eq!(w.data(), &[0.9, -1.8, 0.45]);
    }

    #[test]
    fn momentum_accumulates() {
        let mut w = Tensor::from_vec(&[1], vec![0.0f64]).unwrap();
        let mut sgd = Sgd::new(0.5);
        sgd.step(&mut [&mut w], &[Some(&[1.0])], 1.0);
        sgd.step(&mut [&mut w], &[Some(&[1.0])], 1.0);
        assert_eq!(w.data(), &[-2.5]);
    }
}
