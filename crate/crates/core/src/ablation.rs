//! Cross-link depth sweep: one trained model per (depth, seed).

use serde::{Deserialize, Serialize};

use crate::error::{FcanError, Result};
use crate::metrics::{accuracy, clip_scores, video_scores};
use crate::network::{FcanModel, FusionWeights, NetworkConfig};
use crate::synth::PreparedVideo;
use crate::tensor::Real;
use crate::train::{train, TrainConfig};

pub const MAX_DEPTH: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub depth: usize,
    pub seed: u64,
    pub clip_acc: f64,
    pub video_acc: f64,
    /// Set when training or evaluation failed; accuracies are then NaN.
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub depth: usize,
    pub median_clip_acc: f64,
    pub median_video_acc: f64,
    pub runs: usize,
    pub failed: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub cells: Vec<AblationCell>,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// One line per cell: `depth,seed,clip_acc,video_acc`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("depth,seed,clip_acc,video_acc\n");
        for c in &self.cells {
            s.push_str(&format!("{},{},{},{}\n", c.depth, c.seed, c.clip_acc, c.video_acc));
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from("depth,median_clip_acc,median_video_acc,runs,failed\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                r.depth, r.median_clip_acc, r.median_video_acc, r.runs, r.failed
            ));
        }
        s
    }
}

/// Median of the finite values; NaN when there are none.
pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Clone, Debug)]
pub struct AblationSetup<'a> {
    pub network: &'a NetworkConfig,
    pub train: &'a TrainConfig,
    pub train_videos: &'a [PreparedVideo],
    pub test_videos: &'a [PreparedVideo],
    pub segments: usize,
    pub fusion: FusionWeights,
}

fn run_cell<T: Real>(setup: &AblationSetup, depth: usize, seed: u64) -> Result<(f64, f64)> {
    let net = NetworkConfig {
        crosslink_depth: depth,
        seed,
        ..setup.network.clone()
    };
    let tcfg = TrainConfig {
        seed,
        ..setup.train.clone()
    };
    let mut model = FcanModel::<T>::build(&net)?;
    train(&mut model, setup.train_videos, &tcfg, None)?;
    let labels = || setup.test_videos.iter().map(|v| v.label);
    let clip = clip_scores(&model, setup.test_videos, setup.fusion)?;
    let video = video_scores(&model, setup.test_videos, setup.segments, setup.fusion)?;
    Ok((accuracy(&clip, labels()), accuracy(&video, labels())))
}

/// Trains and evaluates every (depth, seed) pair. A failing cell is recorded
/// with its error and the sweep continues.
pub fn ablation_crosslink_depth<T: Real>(
    depths: &[usize],
    seeds: &[u64],
    setup: &AblationSetup,
    mut progress: Option<&mut dyn FnMut(&AblationCell)>,
) -> Result<AblationTable> {
    if depths.is_empty() || seeds.is_empty() {
        return Err(FcanError::Config("ablation needs at least one depth and one seed".into()));
    }
    let blocks = setup.network.num_blocks();
    if let Some(&d) = depths.iter().find(|&&d| d > MAX_DEPTH || d > blocks) {
        return Err(FcanError::Config(format!(
            "depth {d} is out of range; the network has {blocks} blocks and at most {MAX_DEPTH} cross-links are supported"
        )));
    }
    if setup.test_videos.is_empty() {
        return Err(FcanError::Config("ablation needs test videos".into()));
    }
    let mut cells = Vec::with_capacity(depths.len() * seeds.len());
    let mut rows = Vec::with_capacity(depths.len());
    for &depth in depths {
        let start = cells.len();
        for &seed in seeds {
            let cell = match run_cell::<T>(setup, depth, seed) {
                Ok((clip_acc, video_acc)) => AblationCell {
                    depth,
                    seed,
                    clip_acc,
                    video_acc,
                    error: None,
                },
                Err(e) => AblationCell {
                    depth,
                    seed,
                    clip_acc: f64::NAN,
                    video_acc: f64::NAN,
                    error: Some(e.to_string()),
                },
            };
            if let Some(cb) = progress.as_mut() {
                cb(&cell);
            }
            cells.push(cell);
        }
        let mine = &cells[start..];
        rows.push(AblationRow {
            depth,
            median_clip_acc: median(&mine.iter().map(|c| c.clip_acc).collect::<Vec<_>>()),
            median_video_acc: median(&mine.iter().map(|c| c.video_acc).collect::<Vec<_>>()),
            runs: mine.len(),
            failed: mine.iter().filter(|c| c.error.is_some()).count(),
        });
    }
    Ok(AblationTable { cells, rows })
}
