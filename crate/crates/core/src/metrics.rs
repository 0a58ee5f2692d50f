//! Clip and video accuracy, mean average precision, and attention alignment
//! with the foreground masks.

use serde::{Deserialize, Serialize};

use crate::error::{FcanError, Result};
use crate::network::{argmax, predict_video, FcanModel, FusionWeights};
use crate::synth::{segment_starts, PreparedVideo};
use crate::tensor::Real;
use crate::train::{center_window, cut, make_batch, LossPoint, Window};

/// Videos evaluated per forward pass.
const EVAL_CHUNK: usize = 16;

fn check_nonempty(videos: &[PreparedVideo], op: &'static str) -> Result<()> {
    if videos.is_empty() {
        return Err(FcanError::arg(op, "no videos given"));
    }
    Ok(())
}

fn center_start<T: Real>(model: &FcanModel<T>, v: &PreparedVideo) -> usize {
    (v.frames().saturating_sub(model.config.frames)) / 2
}

/// Fused class scores of the center clip of every video, `[n][K]`.
pub fn clip_scores<T: Real>(model: &FcanModel<T>, videos: &[PreparedVideo], fusion: FusionWeights) -> Result<Vec<Vec<f64>>> {
    let k = model.config.num_classes;
    let mut out = Vec::with_capacity(videos.len());
    for chunk in videos.chunks(EVAL_CHUNK) {
        let refs: Vec<&PreparedVideo> = chunk.iter().collect();
        let windows: Vec<Window> = chunk
            .iter()
            .map(|v| center_window(model, v, center_start(model, v)))
            .collect();
        let (rgb, flow, _) = make_batch(model, &refs, &windows)?;
        let flow = model.temporal.is_some().then_some(flow);
        let scores = model.fused_scores(&rgb, flow.as_ref(), fusion)?;
        out.extend(
            scores
                .data()
                .chunks(k)
                .map(|row| row.iter().map(|v| v.to_f64_lossy()).collect()),
        );
    }
    Ok(out)
}

/// Fraction of videos whose center clip's fused argmax equals the label.
pub fn eval_clip_accuracy<T: Real>(model: &FcanModel<T>, videos: &[PreparedVideo], fusion: FusionWeights) -> Result<f64> {
    check_nonempty(videos, "eval_clip_accuracy")?;
    let scores = clip_scores(model, videos, fusion)?;
    Ok(accuracy(&scores, videos.iter().map(|v| v.label)))
}

/// Segment-averaged fused scores for each video, `[n][K]`.
pub fn video_scores<T: Real>(
    model: &FcanModel<T>,
    videos: &[PreparedVideo],
    segments: usize,
    fusion: FusionWeights,
) -> Result<Vec<Vec<f64>>> {
    let len = model.config.frames;
    videos
        .iter()
        .map(|v| {
            let starts = segment_starts(v.frames(), len, segments)?;
            let segs = starts
                .iter()
                .map(|&s| {
                    let win = center_window(model, v, s);
                    let (h, w) = (model.config.height, model.config.width);
                    Ok((cut::<T>(&v.rgb, win, len, h, w)?, cut::<T>(&v.flow, win, len, h, w)?))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(predict_video(model, &segs, fusion)?.scores)
        })
        .collect()
}

/// Fraction of videos whose `segments`-segment prediction equals the label.
pub fn eval_video_accuracy<T: Real>(
    model: &FcanModel<T>,
    videos: &[PreparedVideo],
    segments: usize,
    fusion: FusionWeights,
) -> Result<f64> {
    check_nonempty(videos, "eval_video_accuracy")?;
    let scores = video_scores(model, videos, segments, fusion)?;
    Ok(accuracy(&scores, videos.iter().map(|v| v.label)))
}

/// Fraction of rows whose argmax (lowest index on ties) equals the label.
pub fn accuracy(scores: &[Vec<f64>], labels: impl IntoIterator<Item = usize>) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    let correct = scores
        .iter()
        .zip(labels)
        .filter(|(s, l)| argmax(s) == *l)
        .count();
    correct as f64 / scores.len() as f64
}

/// Precision averaged at the rank of each positive. Scores are sorted
/// descending; equal scores keep their original order. `None` when there
/// are no positives.
pub fn average_precision(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if positive[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    (hits > 0).then(|| sum / hits as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapReport {
    pub map: f64,
    pub per_class: Vec<Option<f64>>,
    /// Classes without a single positive, left out of the mean.
    pub excluded: Vec<usize>,
}

/// Mean of per-class average precision over `scores[n][k]` and
/// `labels[n][k]`.
pub fn eval_map(scores: &[Vec<f64>], labels: &[Vec<bool>]) -> Result<MapReport> {
    if scores.is_empty() || scores.len() != labels.len() {
        return Err(FcanError::arg(
            "eval_map",
            format!("{} score rows vs {} label rows", scores.len(), labels.len()),
        ));
    }
    let k = scores[0].len();
    if scores.iter().any(|r| r.len() != k) || labels.iter().any(|r| r.len() != k) {
        return Err(FcanError::shape("eval_map", "rows have differing class counts"));
    }
    let mut per_class = Vec::with_capacity(k);
    let mut excluded = Vec::new();
    for c in 0..k {
        let s: Vec<f64> = scores.iter().map(|r| r[c]).collect();
        let p: Vec<bool> = labels.iter().map(|r| r[c]).collect();
        let ap = average_precision(&s, &p);
        if ap.is_none() {
            excluded.push(c);
        }
        per_class.push(ap);
    }
    let kept: Vec<f64> = per_class.iter().flatten().copied().collect();
    if kept.is_empty() {
        return Err(FcanError::arg("eval_map", "no class has a positive example"));
    }
    Ok(MapReport {
        map: kept.iter().sum::<f64>() / kept.len() as f64,
        per_class,
        excluded,
    })
}

/// One-hot label rows for [`eval_map`].
pub fn one_hot(labels: &[usize], k: usize) -> Vec<Vec<bool>> {
    labels.iter().map(|&l| (0..k).map(|c| c == l).collect()).collect()
}

/// Mean of `a` inside `mask` divided by its mean outside; `None` when
/// either region is empty.
pub fn fg_ratio(a: &[f64], mask: &[bool]) -> Option<f64> {
    let (mut si, mut ni, mut so, mut no) = (0.0, 0usize, 0.0, 0usize);
    for (&v, &m) in a.iter().zip(mask) {
        if m {
            si += v;
            ni += 1;
        } else {
            so += v;
            no += 1;
        }
    }
    if ni == 0 || no == 0 {
        return None;
    }
    Some((si / ni as f64) / (so / no as f64))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FgRatio {
    pub ratio: f64,
    pub clips: usize,
    /// Clips whose mask vanished or filled the map at attention resolution.
    pub skipped: usize,
}

/// Max-pools the masks of frames `win.start ..` inside the crop window to
/// a `[t, h, w]` grid.
fn pooled_mask(v: &PreparedVideo, win: Window, input: [usize; 3], grid: [usize; 3]) -> Vec<bool> {
    let [kt, kh, kw] = [input[0] / grid[0], input[1] / grid[1], input[2] / grid[2]];
    let mut out = vec![false; grid.iter().product()];
    for t in 0..grid[0] {
        for y in 0..grid[1] {
            for x in 0..grid[2] {
                let mut any = false;
                'win: for dt in 0..kt {
                    let m = &v.masks[win.start + t * kt + dt];
                    for dy in 0..kh {
                        for dx in 0..kw {
                            if m.get(win.left + x * kw + dx, win.top + y * kh + dy) {
                                any = true;
                                break 'win;
                            }
                        }
                    }
                }
                out[(t * grid[1] + y) * grid[2] + x] = any;
            }
        }
    }
    out
}

/// Attention inside the foreground over attention outside it, at the
/// cross-link after pool `layer` (1-based), averaged over the center clips.
pub fn attention_fg_ratio<T: Real>(model: &FcanModel<T>, videos: &[PreparedVideo], layer: usize) -> Result<FgRatio> {
    check_nonempty(videos, "attention_fg_ratio")?;
    if layer == 0 || layer > model.crosslinks.len() || model.temporal.is_none() {
        return Err(FcanError::arg(
            "attention_fg_ratio",
            format!("no cross-link after pool{layer}; model has {}", model.crosslinks.len()),
        ));
    }
    let c = &model.config;
    let grid = c.stage_extents()?[layer - 1];
    let input = [c.frames, c.height, c.width];
    let mut sum = 0.0;
    let mut clips = 0;
    let mut skipped = 0;
    for chunk in videos.chunks(EVAL_CHUNK) {
        let refs: Vec<&PreparedVideo> = chunk.iter().collect();
        let windows: Vec<Window> = chunk
            .iter()
            .map(|v| center_window(model, v, center_start(model, v)))
            .collect();
        let (rgb, flow, _) = make_batch(model, &refs, &windows)?;
        let out = model.infer(&rgb, Some(&flow))?;
        let maps = &out.attention[layer - 1];
        let per: usize = grid.iter().product();
        for (i, v) in chunk.iter().enumerate() {
            let a: Vec<f64> = maps.data()[i * per..(i + 1) * per]
                .iter()
                .map(|x| x.to_f64_lossy())
                .collect();
            match fg_ratio(&a, &pooled_mask(v, windows[i], input, grid)) {
                Some(r) => {
                    sum += r;
                    clips += 1;
                }
                None => skipped += 1,
            }
        }
    }
    if clips == 0 {
        return Err(FcanError::arg(
            "attention_fg_ratio",
            format!("all {skipped} clips had an empty or full mask at attention resolution"),
        ));
    }
    Ok(FgRatio {
        ratio: sum / clips as f64,
        clips,
        skipped,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub clip_accuracy: f64,
    pub video_accuracy: f64,
    pub map: f64,
    pub attention_fg_ratio: Option<f64>,
    pub attention_skipped: usize,
    pub segments: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub loss_curve: Vec<LossPoint>,
}

impl Metrics {
    /// `metric,value` rows; an absent attention ratio is written as `nan`.
    pub fn to_csv(&self) -> String {
        let ratio = self.attention_fg_ratio.unwrap_or(f64::NAN);
        let mut s = String::from("metric,value\n");
        for (k, v) in [
            ("clip_accuracy", self.clip_accuracy),
            ("video_accuracy", self.video_accuracy),
            ("map", self.map),
            ("attention_fg_ratio", ratio),
            ("attention_skipped", self.attention_skipped as f64),
            ("segments", self.segments as f64),
        ] {
            s.push_str(&format!("{k},{v}\n"));
        }
        if let Some(last) = self.loss_curve.last() {
            s.push_str(&format!("final_loss,{}\n", last.loss));
        }
        s
    }
}

pub fn loss_curve_csv(curve: &[LossPoint]) -> String {
    let mut s = String::from("iter,lr,loss\n");
    for p in curve {
        s.push_str(&format!("{},{},{}\n", p.iter, p.lr, p.loss));
    }
    s
}

/// Clip and video accuracy, mAP over video scores, and (for models with a
/// cross-link) the pool1 attention ratio.
pub fn evaluate<T: Real>(
    model: &FcanModel<T>,
    videos: &[PreparedVideo],
    segments: usize,
    fusion: FusionWeights,
) -> Result<Metrics> {
    check_nonempty(videos, "evaluate")?;
    let labels: Vec<usize> = videos.iter().map(|v| v.label).collect();
    let clip = clip_scores(model, videos, fusion)?;
    let video = video_scores(model, videos, segments, fusion)?;
    let map = eval_map(&video, &one_hot(&labels, model.config.num_classes))?;
    let (ratio, skipped) = if model.crosslinks.is_empty() || model.temporal.is_none() {
        (None, 0)
    } else {
        match attention_fg_ratio(model, videos, 1) {
            Ok(r) => (Some(r.ratio), r.skipped),
            Err(_) => (None, videos.len()),
        }
    };
    Ok(Metrics {
        clip_accuracy: accuracy(&clip, labels.iter().copied()),
        video_accuracy: accuracy(&video, labels.iter().copied()),
        map: map.map,
        attention_fg_ratio: ratio,
        attention_skipped: skipped,
        segments,
        loss_curve: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ap_hand_example() {
        let ap = average_precision(&[0.9, 0.8, 0.7], &[true, false, true]).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn ap_single_positive_last() {
        let n = 7;
        let scores: Vec<f64> = (0..n).map(|i| (n - i) as f64).collect();
        let mut pos = vec![false; n];
        pos[n - 1] = true;
        assert!((average_precision(&scores, &pos).unwrap() - 1.0 / n as f64).abs() < 1e-15);
    }

    #[test]
    fn ties_keep_index_order() {
        // Positive at index 1 ties with a negative at index 0 and ranks second.
        let ap = average_precision(&[0.5, 0.5], &[false, true]).unwrap();
        assert_eq!(ap, 0.5);
    }

    #[test]
    fn map_excludes_classes_without_positives() {
        let scores = vec![vec![0.9, 0.1, 0.0], vec![0.2, 0.8, 0.0]];
        let labels = one_hot(&[0, 1], 3);
        let r = eval_map(&scores, &labels).unwrap();
        assert_eq!(r.map, 1.0);
        assert_eq!(r.excluded, vec![2]);
    }

    #[test]
    fn accuracy_counts() {
        let scores: Vec<Vec<f64>> = (0..10).map(|i| vec![f64::from(u8::from(i < 7)), 0.5]).collect();
        assert_eq!(accuracy(&scores, std::iter::repeat(0)), 0.7);
        let uniform = vec![vec![0.0; 4]; 8];
        assert_eq!(accuracy(&uniform, (0..8).map(|i| i % 4)), 0.25);
    }

    #[test]
    fn fg_ratio_examples() {
        let mask = [true, false, false, true];
        assert_eq!(fg_ratio(&[0.5; 4], &mask), Some(1.0));
        assert_eq!(fg_ratio(&[1.0, 0.5, 0.5, 1.0], &mask), Some(2.0));
        assert_eq!(fg_ratio(&[0.5; 2], &[true, true]), None);
    }
}
