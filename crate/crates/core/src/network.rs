//! Two-stream 3D CNN with flow-guided cross-links.
//!
//! Each stream is a stack of blocks `conv3d -> relu -> maxpool3d` followed by
//! a head `fc6 -> relu -> dropout -> fc7 -> relu -> dropout -> fc8`. The
//! spatial stream sees RGB, the temporal stream sees 2-channel flow, and the
//! topologies are otherwise identical, so pooled feature maps line up stage
//! by stage. A cross-link at stage `l` gates the spatial pool-`l` output with
//! attention computed from the temporal pool-`l` output.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{apply_attention, attention_map, CrossLinkLayer};
use crate::autograd::{pooled_extents, Conv3dParams, Tape, Var};
use crate::checkpoint::Checkpoint;
use crate::error::{FcanError, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub spatial_in_channels: usize,
    pub temporal_in_channels: usize,
    pub conv_channels: Vec<usize>,
    pub kernel: [usize; 3],
    /// Window (= stride) of the max pool closing each block.
    pub pools: Vec<[usize; 3]>,
    pub fc_hidden: usize,
    pub num_classes: usize,
    pub crosslink_depth: usize,
    /// Drop probabilities after fc6 and fc7.
    pub dropout_fc: [f64; 2],
    /// `false` builds the spatial stream alone (no temporal stream, no links).
    pub two_stream: bool,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            frames: 16,
            height: 32,
            width: 32,
            spatial_in_channels: 3,
            temporal_in_channels: 2,
            conv_channels: vec![16, 32, 64],
            kernel: [3, 3, 3],
            pools: vec![[1, 2, 2], [2, 2, 2], [2, 2, 2]],
            fc_hidden: 128,
            num_classes: 4,
            crosslink_depth: 1,
            dropout_fc: [0.5, 0.5],
            two_stream: true,
            seed: 0,
        }
    }
}

impl NetworkConfig {
    pub fn num_blocks(&self) -> usize {
        self.conv_channels.len()
    }

    /// Spatio-temporal extents `[T, H, W]` after each block's pool.
    pub fn stage_extents(&self) -> Result<Vec<[usize; 3]>> {
        const DIMS: [&str; 3] = ["T", "H", "W"];
        let mut cur = [self.frames, self.height, self.width];
        let mut out = Vec::with_capacity(self.pools.len());
        for (i, p) in self.pools.iter().enumerate() {
            for d in 0..3 {
                if p[d] == 0 || cur[d] % p[d] != 0 {
                    return Err(FcanError::Config(format!(
                        "pool{} window {} does not divide extent {} = {} (pooled shape would not be integral)",
                        i + 1,
                        p[d],
                        DIMS[d],
                        cur[d]
                    )));
                }
            }
            cur = pooled_extents(cur, *p, *p)?;
            out.push(cur);
        }
        Ok(out)
    }

    /// Length of the flattened last pool output that feeds fc6.
    pub fn flat_features(&self) -> Result<usize> {
        let last = *self
            .stage_extents()?
            .last()
            .ok_or_else(|| FcanError::Config("at least one conv block is required".into()))?;
        Ok(self.conv_channels.last().unwrap() * last.iter().product::<usize>())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FcanError::Config(m));
        if self.conv_channels.is_empty() {
            return bad("at least one conv block is required".into());
        }
        if self.pools.len() != self.conv_channels.len() {
            return bad(format!(
                "{} pool specs for {} conv blocks",
                self.pools.len(),
                self.conv_channels.len()
            ));
        }
        if self.conv_channels.contains(&0)
            || self.spatial_in_channels == 0
            || self.temporal_in_channels == 0
            || self.fc_hidden == 0
        {
            return bad("channel counts and fc_hidden must be >= 1".into());
        }
        if self.num_classes < 2 {
            return bad(format!("num_classes must be >= 2, got {}", self.num_classes));
        }
        if self.kernel.iter().any(|&k| k % 2 == 0) {
            return bad(format!("conv kernel {:?} must be odd in every dimension", self.kernel));
        }
        if self.crosslink_depth > self.num_blocks() {
            return bad(format!(
                "crosslink_depth {} exceeds the {} pooling blocks",
                self.crosslink_depth,
                self.num_blocks()
            ));
        }
        if !self.two_stream && self.crosslink_depth > 0 {
            return bad("cross-links need the temporal stream (two_stream = true)".into());
        }
        if self.dropout_fc.iter().any(|p| !(0.0..1.0).contains(p)) {
            return bad(format!("dropout probabilities {:?} must lie in [0, 1)", self.dropout_fc));
        }
        if self.frames == 0 || self.height == 0 || self.width == 0 {
            return bad("input extents must be >= 1".into());
        }
        self.stage_extents().map(|_| ())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer<T> {
    /// `[C_out, C_in, kT, kH, kW]`.
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer<T> {
    /// `[D_in, D_out]`.
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// One stream: conv blocks and the fc6/fc7/fc8 head.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamNet<T> {
    pub convs: Vec<ConvLayer<T>>,
    pub fc: [DenseLayer<T>; 3],
}

fn glorot<T: Real>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(shape, |_| T::from_f64_lossy(rng.gen_range(-limit..limit)))
}

impl<T: Real> StreamNet<T> {
    fn init(cfg: &NetworkConfig, in_channels: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let k = cfg.kernel;
        let kvol: usize = k.iter().product();
        let mut cin = in_channels;
        let mut convs = Vec::with_capacity(cfg.num_blocks());
        for &cout in &cfg.conv_channels {
            convs.push(ConvLayer {
                weight: glorot(&[cout, cin, k[0], k[1], k[2]], cin * kvol, cout * kvol, rng),
                bias: Tensor::zeros(&[cout]),
            });
            cin = cout;
        }
        let dims = [cfg.flat_features()?, cfg.fc_hidden, cfg.fc_hidden, cfg.num_classes];
        let fc = std::array::from_fn(|i| DenseLayer {
            weight: glorot(&[dims[i], dims[i + 1]], dims[i], dims[i + 1], rng),
            bias: Tensor::zeros(&[dims[i + 1]]),
        });
        Ok(StreamNet { convs, fc })
    }

    fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        for (i, c) in self.convs.iter().enumerate() {
            out.push((format!("{prefix}.conv{}.weight", i + 1), &c.weight));
            out.push((format!("{prefix}.conv{}.bias", i + 1), &c.bias));
        }
        for (i, f) in self.fc.iter().enumerate() {
            out.push((format!("{prefix}.fc{}.weight", i + 6), &f.weight));
            out.push((format!("{prefix}.fc{}.bias", i + 6), &f.bias));
        }
    }

    fn named_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        for (i, c) in self.convs.iter_mut().enumerate() {
            out.push((format!("{prefix}.conv{}.weight", i + 1), &mut c.weight));
            out.push((format!("{prefix}.conv{}.bias", i + 1), &mut c.bias));
        }
        for (i, f) in self.fc.iter_mut().enumerate() {
            out.push((format!("{prefix}.fc{}.weight", i + 6), &mut f.weight));
            out.push((format!("{prefix}.fc{}.bias", i + 6), &mut f.bias));
        }
    }

}

fn bind_stream(blocks: usize, next: &mut impl FnMut() -> Var) -> BoundStream {
    let convs = (0..blocks).map(|_| (next(), next())).collect();
    let fc = std::array::from_fn(|_| (next(), next()));
    BoundStream { convs, fc }
}

/// Tape handles of one stream's parameters.
#[derive(Clone, Debug)]
pub struct BoundStream {
    pub convs: Vec<(Var, Var)>,
    pub fc: [(Var, Var); 3],
}

/// Tape handles of every model parameter, in [`FcanModel::parameters`] order.
#[derive(Clone, Debug)]
pub struct BoundModel {
    pub spatial: BoundStream,
    pub temporal: Option<BoundStream>,
    pub links: Vec<Var>,
    pub params: Vec<Var>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForwardOptions {
    pub training: bool,
    /// Blocks gradient from the spatial loss into the temporal stream; the
    /// cross-link weights still learn.
    pub detach_crosslink: bool,
    /// Seeds the dropout masks; each stream draws from its own generator.
    pub dropout_seed: u64,
}

impl ForwardOptions {
    pub fn inference() -> Self {
        ForwardOptions {
            training: false,
            detach_crosslink: false,
            dropout_seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub spatial_logits: Var,
    pub temporal_logits: Option<Var>,
    /// One `[N,1,T_l,H_l,W_l]` map per cross-link, in stage order.
    pub attention: Vec<Var>,
}

/// Relative weights of the spatial and temporal scores in late fusion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights {
    pub spatial: f64,
    pub temporal: f64,
}

impl Default for FusionWeights {
    fn default() -> Self {
        FusionWeights {
            spatial: 1.0,
            temporal: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FcanModel<T> {
    pub config: NetworkConfig,
    pub spatial: StreamNet<T>,
    pub temporal: Option<StreamNet<T>>,
    pub crosslinks: Vec<CrossLinkLayer<T>>,
}

const SPATIAL_STREAM: u64 = 1;
const TEMPORAL_STREAM: u64 = 2;

impl<T: Real> FcanModel<T> {
    /// Deterministic initialization from `cfg.seed`.
    pub fn build(cfg: &NetworkConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let spatial = StreamNet::init(cfg, cfg.spatial_in_channels, &mut rng)?;
        let temporal = if cfg.two_stream {
            Some(StreamNet::init(cfg, cfg.temporal_in_channels, &mut rng)?)
        } else {
            None
        };
        let crosslinks = (0..cfg.crosslink_depth)
            .map(|l| CrossLinkLayer::init(cfg.conv_channels[l], l + 1))
            .collect::<Result<_>>()?;
        Ok(FcanModel {
            config: cfg.clone(),
            spatial,
            temporal,
            crosslinks,
        })
    }

    /// Every trainable tensor with its unique name, in a fixed order.
    pub fn parameters(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        self.spatial.named("spatial", &mut out);
        if let Some(t) = &self.temporal {
            t.named("temporal", &mut out);
        }
        for l in &self.crosslinks {
            out.push((format!("crosslink{}.weight", l.placement), &l.w_link));
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        self.spatial.named_mut("spatial", &mut out);
        if let Some(t) = &mut self.temporal {
            t.named_mut("temporal", &mut out);
        }
        for l in &mut self.crosslinks {
            out.push((format!("crosslink{}.weight", l.placement), &mut l.w_link));
        }
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.parameters().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Places every parameter on `tape`, as trainable leaves or constants.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> BoundModel {
        let vars: Vec<Var> = self
            .parameters()
            .into_iter()
            .map(|(_, t)| tape.leaf(t.clone(), trainable))
            .collect();
        self.bind_vars(&vars).expect("one var per parameter")
    }

    /// Treats `vars` (in [`parameters`](Self::parameters) order) as the
    /// model's parameters.
    pub fn bind_vars(&self, vars: &[Var]) -> Result<BoundModel> {
        let want = self.parameters().len();
        if vars.len() != want {
            return Err(FcanError::arg(
                "bind_vars",
                format!("model has {want} parameter tensors, got {} vars", vars.len()),
            ));
        }
        let mut it = vars.iter().copied();
        let mut next = || it.next().unwrap();
        let blocks = self.spatial.convs.len();
        let spatial = bind_stream(blocks, &mut next);
        let temporal = self.temporal.as_ref().map(|_| bind_stream(blocks, &mut next));
        let links = self.crosslinks.iter().map(|_| next()).collect();
        Ok(BoundModel {
            spatial,
            temporal,
            links,
            params: vars.to_vec(),
        })
    }

    fn check_input(&self, tape: &Tape<T>, x: Var, channels: usize, what: &str) -> Result<usize> {
        let c = &self.config;
        let s = tape.value(x).shape();
        if s.len() != 5 || s[1..] != [channels, c.frames, c.height, c.width] {
            return Err(FcanError::shape(
                "forward",
                format!(
                    "{what} input {s:?} does not match [N, {channels}, {}, {}, {}]",
                    c.frames, c.height, c.width
                ),
            ));
        }
        Ok(s[0])
    }

    fn block(&self, tape: &mut Tape<T>, x: Var, (w, b): (Var, Var), stage: usize) -> Result<Var> {
        let y = tape.conv3d(x, w, Some(b), Conv3dParams::same(self.config.kernel))?;
        let y = tape.relu(y);
        let p = self.config.pools[stage];
        tape.maxpool3d(y, p, p)
    }

    fn head(&self, tape: &mut Tape<T>, x: Var, s: &BoundStream, training: bool, rng: &mut ChaCha8Rng) -> Result<Var> {
        let mut h = tape.flatten(x)?;
        for i in 0..2 {
            h = tape.fully_connected(h, s.fc[i].0, s.fc[i].1)?;
            h = tape.relu(h);
            h = tape.dropout(h, self.config.dropout_fc[i], training, rng)?;
        }
        tape.fully_connected(h, s.fc[2].0, s.fc[2].1)
    }

    fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        rng
    }

    /// Spatial stream alone, without any cross-link gating.
    pub fn forward_spatial(&self, tape: &mut Tape<T>, bound: &BoundModel, rgb: Var, opts: ForwardOptions) -> Result<Var> {
        self.check_input(tape, rgb, self.config.spatial_in_channels, "rgb")?;
        let mut rng = Self::stream_rng(opts.dropout_seed, SPATIAL_STREAM);
        let mut x = rgb;
        for (l, &wb) in bound.spatial.convs.iter().enumerate() {
            x = self.block(tape, x, wb, l)?;
        }
        self.head(tape, x, &bound.spatial, opts.training, &mut rng)
    }

    /// Temporal stream alone; also returns every pooled feature map.
    pub fn forward_temporal(
        &self,
        tape: &mut Tape<T>,
        bound: &BoundModel,
        flow: Var,
        opts: ForwardOptions,
    ) -> Result<(Var, Vec<Var>)> {
        let stream = bound
            .temporal
            .as_ref()
            .ok_or_else(|| FcanError::arg("forward_temporal", "model has no temporal stream"))?;
        self.check_input(tape, flow, self.config.temporal_in_channels, "flow")?;
        let mut rng = Self::stream_rng(opts.dropout_seed, TEMPORAL_STREAM);
        let mut x = flow;
        let mut pooled = Vec::with_capacity(stream.convs.len());
        for (l, &wb) in stream.convs.iter().enumerate() {
            x = self.block(tape, x, wb, l)?;
            pooled.push(x);
        }
        let logits = self.head(tape, x, stream, opts.training, &mut rng)?;
        Ok((logits, pooled))
    }

    /// Full two-stream forward. The temporal stream runs first; its pool-`l`
    /// output drives the attention that gates the spatial pool-`l` output
    /// before it enters block `l+1`.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        bound: &BoundModel,
        rgb: Var,
        flow: Option<Var>,
        opts: ForwardOptions,
    ) -> Result<ForwardOutput> {
        let n = self.check_input(tape, rgb, self.config.spatial_in_channels, "rgb")?;
        let (temporal_logits, pooled) = match (&bound.temporal, flow) {
            (None, _) => (None, Vec::new()),
            (Some(_), Some(f)) => {
                let nf = self.check_input(tape, f, self.config.temporal_in_channels, "flow")?;
                if nf != n {
                    return Err(FcanError::shape(
                        "forward",
                        format!("batch sizes differ: rgb {n}, flow {nf}"),
                    ));
                }
                let (logits, pooled) = self.forward_temporal(tape, bound, f, opts)?;
                (Some(logits), pooled)
            }
            (Some(_), None) => return Err(FcanError::arg("forward", "two-stream model needs a flow input")),
        };

        let mut rng = Self::stream_rng(opts.dropout_seed, SPATIAL_STREAM);
        let mut attention = Vec::with_capacity(self.crosslinks.len());
        let mut x = rgb;
        for (l, &wb) in bound.spatial.convs.iter().enumerate() {
            x = self.block(tape, x, wb, l)?;
            if let Some(link) = self.crosslinks.get(l) {
                let mut xf = pooled[l];
                if opts.detach_crosslink {
                    xf = tape.detach(xf);
                }
                let a = attention_map(tape, bound.links[l], xf, link.eps)?;
                x = apply_attention(tape, x, a)?;
                attention.push(a);
            }
        }
        let spatial_logits = self.head(tape, x, &bound.spatial, opts.training, &mut rng)?;
        Ok(ForwardOutput {
            spatial_logits,
            temporal_logits,
            attention,
        })
    }

    /// Inference-mode logits and attention maps as plain tensors.
    pub fn infer(&self, rgb: &Tensor<T>, flow: Option<&Tensor<T>>) -> Result<Inference<T>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let r = tape.constant(rgb.clone());
        let f = flow.map(|f| tape.constant(f.clone()));
        let out = self.forward(&mut tape, &bound, r, f, ForwardOptions::inference())?;
        Ok(Inference {
            spatial: tape.value(out.spatial_logits).clone(),
            temporal: out.temporal_logits.map(|v| tape.value(v).clone()),
            attention: out.attention.iter().map(|&a| tape.value(a).clone()).collect(),
        })
    }

    /// Late-fused class scores `[N, K]`; a spatial-only model returns its
    /// spatial scores.
    pub fn fused_scores(&self, rgb: &Tensor<T>, flow: Option<&Tensor<T>>, fusion: FusionWeights) -> Result<Tensor<T>> {
        let out = self.infer(rgb, flow)?;
        match &out.temporal {
            Some(t) => late_fuse(&out.spatial, t, fusion),
            None => Ok(out.spatial),
        }
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        Ok(Checkpoint {
            config_json: serde_json::to_string(&self.config)?,
            tensors: self
                .parameters()
                .into_iter()
                .map(|(n, t)| (n, t.cast::<f32>()))
                .collect(),
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let cfg: NetworkConfig = serde_json::from_str(&ck.config_json)?;
        let mut model = Self::build(&cfg)?;
        let mut slots = model.parameters_mut();
        if slots.len() != ck.tensors.len() {
            return Err(FcanError::Config(format!(
                "checkpoint holds {} tensors, config implies {}",
                ck.tensors.len(),
                slots.len()
            )));
        }
        for ((name, slot), (ck_name, t)) in slots.iter_mut().zip(&ck.tensors) {
            if name != ck_name || slot.shape() != t.shape() {
                return Err(FcanError::Config(format!(
                    "checkpoint tensor {ck_name} {:?} does not match parameter {name} {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            **slot = t.cast();
        }
        Ok(model)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Inference<T> {
    pub spatial: Tensor<T>,
    pub temporal: Option<Tensor<T>>,
    pub attention: Vec<Tensor<T>>,
}

/// Weighted mean of raw (pre-softmax) class scores.
pub fn late_fuse<T: Real>(spatial: &Tensor<T>, temporal: &Tensor<T>, w: FusionWeights) -> Result<Tensor<T>> {
    if spatial.shape() != temporal.shape() {
        return Err(FcanError::shape(
            "late_fuse",
            format!("{:?} vs {:?}", spatial.shape(), temporal.shape()),
        ));
    }
    let total = w.spatial + w.temporal;
    if !(w.spatial >= 0.0 && w.temporal >= 0.0 && total > 0.0) {
        return Err(FcanError::arg(
            "late_fuse",
            format!("weights ({}, {}) must be non-negative with a positive sum", w.spatial, w.temporal),
        ));
    }
    let ws = T::from_f64_lossy(w.spatial / total);
    let wt = T::from_f64_lossy(w.temporal / total);
    let data = spatial
        .data()
        .iter()
        .zip(temporal.data())
        .map(|(&s, &t)| ws * s + wt * t)
        .collect();
    Tensor::from_vec(spatial.shape(), data)
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax<T: Real>(scores: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in scores.iter().enumerate() {
        if v > scores[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoPrediction {
    pub scores: Vec<f64>,
    pub label: usize,
}

/// Averages fused scores over segments `(rgb [C,T,H,W], flow [2,T,H,W])`.
pub fn predict_video<T: Real>(
    model: &FcanModel<T>,
    segments: &[(Tensor<T>, Tensor<T>)],
    fusion: FusionWeights,
) -> Result<VideoPrediction> {
    if segments.is_empty() {
        return Err(FcanError::arg("predict_video", "no segments given"));
    }
    let rgb: Vec<Tensor<T>> = segments.iter().map(|s| s.0.clone()).collect();
    let rgb = Tensor::stack(&rgb)?;
    let flow = if model.temporal.is_some() {
        let f: Vec<Tensor<T>> = segments.iter().map(|s| s.1.clone()).collect();
        Some(Tensor::stack(&f)?)
    } else {
        None
    };
    let fused = model.fused_scores(&rgb, flow.as_ref(), fusion)?;
    let k = model.config.num_classes;
    // Sorting each class column before summing makes the mean independent of
    // segment order.
    let scores: Vec<f64> = (0..k)
        .map(|c| {
            let mut col: Vec<f64> = fused.data().chunks(k).map(|row| row[c].to_f64_lossy()).collect();
            col.sort_by(f64::total_cmp);
            col.iter().sum::<f64>() / col.len() as f64
        })
        .collect();
    let label = argmax(&scores);
    Ok(VideoPrediction { scores, label })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny(depth: usize) -> NetworkConfig {
        NetworkConfig {
            frames: 4,
            height: 8,
            width: 8,
            conv_channels: vec![3, 4],
            pools: vec![[1, 2, 2], [2, 2, 2]],
            fc_hidden: 6,
            num_classes: 3,
            crosslink_depth: depth,
            seed: 5,
            ..NetworkConfig::default()
        }
    }

    #[test]
    fn default_config_shapes() {
        let cfg = NetworkConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.stage_extents().unwrap(), vec![[16, 16, 16], [8, 8, 8], [4, 4, 4]]);
        assert_eq!(cfg.flat_features().unwrap(), 64 * 64);
        let m = FcanModel::<f32>::build(&cfg).unwrap();
        assert_eq!(m.crosslinks.len(), 1);
        assert_eq!(m.crosslinks[0].channels(), 16);
        assert_eq!(m.crosslinks[0].placement, 1);
    }

    #[test]
    fn indivisible_extent_named() {
        let cfg = NetworkConfig {
            height: 30,
            ..NetworkConfig::default()
        };
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("pool2") && msg.contains("H = 15"), "{msg}");
        let cfg = NetworkConfig {
            crosslink_depth: 4,
            ..NetworkConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn init_is_seeded_and_glorot_bounded() {
        let a = FcanModel::<f32>::build(&tiny(1)).unwrap();
        let b = FcanModel::<f32>::build(&tiny(1)).unwrap();
        assert_eq!(a, b);
        let c = FcanModel::<f32>::build(&NetworkConfig { seed: 6, ..tiny(1) }).unwrap();
        assert_ne!(a, c);
        let w = &a.spatial.convs[0].weight;
        let limit = (6.0f64 / (3.0 * 27.0 + 3.0 * 27.0)).sqrt() as f32;
        assert!(w.data().iter().all(|v| v.abs() <= limit));
        assert!(a.spatial.convs[0].bias.data().iter().all(|&v| v == 0.0));
        let names: Vec<String> = a.parameters().into_iter().map(|(n, _)| n).collect();
        let mut uniq = names.clone();
        uniq.sort();
        uniq.dedup();
        assert_eq!(uniq.len(), names.len());
        assert_eq!(names.last().unwrap(), "crosslink1.weight");
    }

    #[test]
    fn late_fuse_examples() {
        let s = Tensor::from_vec(&[1, 2], vec![1.0f64, 3.0]).unwrap();
        let t = Tensor::from_vec(&[1, 2], vec![3.0f64, 1.0]).unwrap();
        assert_eq!(late_fuse(&s, &t, FusionWeights::default()).unwrap().data(), &[2.0, 2.0]);
        let only = FusionWeights {
            spatial: 1.0,
            temporal: 0.0,
        };
        assert_eq!(late_fuse(&s, &t, only).unwrap(), s);
        let a = Tensor::from_vec(&[1, 3], vec![2.0f64, 1.0, 0.0]).unwrap();
        let b = Tensor::from_vec(&[1, 3], vec![0.0f64, 1.0, 2.0]).unwrap();
        let f = late_fuse(&a, &b, FusionWeights::default()).unwrap();
        assert_eq!(f.data(), &[1.0, 1.0, 1.0]);
        assert_eq!(argmax(f.data()), 0);
        assert!(late_fuse(&s, &a, FusionWeights::default()).is_err());
    }

    #[test]
    fn empty_segments_rejected() {
        let m = FcanModel::<f64>::build(&tiny(1)).unwrap();
        assert!(predict_video(&m, &[], FusionWeights::default()).is_err());
    }
}
