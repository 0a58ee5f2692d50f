use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use fcan::ablation::{ablation_crosslink_depth, AblationSetup};
use fcan::autograd::suite::gradient_suite;
use fcan::autograd::gradcheck::GradCheckReport;
use fcan::config::{Precision, Preset, RunConfig};
use fcan::export::export_attention;
use fcan::flow::{compensate as compensate_flow, decode_gray, encode_gray, fit_homography};
use fcan::metrics::{evaluate, loss_curve_csv, Metrics};
use fcan::network::FcanModel;
use fcan::synth::{
    clip_dir, generate_dataset, load_dataset, prepare_video, read_flow_image, save_dataset, Dataset,
    PreparedVideo, BOUND_TAG,
};
use fcan::train::{train as train_model, TrainReport};
use fcan::Real;

use crate::{AblateArgs, Common, CompensateArgs, EvalArgs, GradcheckArgs, PrecisionArg, PresetArg};

/// Bad flags or configuration; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) if !p.is_file() => Err(usage(format!("config file {} does not exist", p.display()))),
        Some(p) => RunConfig::load(p).map_err(|e| usage(e.to_string())),
    }
}

fn precision(p: PrecisionArg) -> Precision {
    match p {
        PrecisionArg::F32 => Precision::F32,
        PrecisionArg::F64 => Precision::F64,
    }
}

/// Config file with command-line overrides applied.
fn resolve(c: &Common) -> Result<RunConfig> {
    let mut cfg = load_config(c.config.as_deref())?;
    if let Some(p) = c.preset {
        cfg.apply_preset(match p {
            PresetArg::Desk => Preset::Desk,
            PresetArg::PaperScale => Preset::PaperScale,
        });
    }
    if let Some(d) = &c.data_dir {
        cfg.data_dir = d.clone();
    }
    if let Some(d) = &c.out_dir {
        cfg.out_dir = d.clone();
    }
    if let Some(s) = c.seed {
        cfg.data.seed = s;
        cfg.network.seed = s;
        cfg.train.seed = s;
    }
    if let Some(d) = c.depth {
        cfg.network.crosslink_depth = d;
    }
    if let Some(s) = c.segments {
        cfg.eval.segments = s;
    }
    if let Some(p) = c.precision {
        cfg.precision = precision(p);
    }
    if c.detach_crosslink {
        cfg.train.detach_crosslink = true;
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    write(path, &serde_json::to_string_pretty(value)?)
}

fn load_data(cfg: &RunConfig) -> Result<Dataset> {
    if !cfg.data_dir.join("manifest.json").is_file() {
        bail!(
            "no dataset in {} (run `fcan gen` first)",
            cfg.data_dir.display()
        );
    }
    Ok(load_dataset(&cfg.data_dir)?)
}

fn prepare(cfg: &RunConfig, ds: &Dataset, test: bool) -> Result<Vec<PreparedVideo>> {
    let clips = if test { &ds.test } else { &ds.train };
    clips
        .iter()
        .map(|c| prepare_video(c, &cfg.input, ds.manifest.flow_bound).map_err(Into::into))
        .collect()
}

fn checkpoint_path(cfg: &RunConfig, explicit: Option<&PathBuf>) -> PathBuf {
    explicit.cloned().unwrap_or_else(|| cfg.out_dir.join("model.fcan"))
}

pub fn gen(c: &Common) -> Result<ExitCode> {
    let cfg = resolve(c)?;
    let d = &cfg.data;
    let start = Instant::now();
    let ds = generate_dataset(&d.classes, &d.scene, d.n_per_class, d.split_ratio, d.seed)?;
    save_dataset(&ds, &cfg.data_dir)?;
    println!(
        "wrote {} train and {} test videos to {} in {:.1}s",
        ds.train.len(),
        ds.test.len(),
        cfg.data_dir.display(),
        start.elapsed().as_secs_f64()
    );
    Ok(ExitCode::SUCCESS)
}

pub fn train(c: &Common) -> Result<ExitCode> {
    let cfg = resolve(c)?;
    match cfg.precision {
        Precision::F32 => train_with::<f32>(&cfg),
        Precision::F64 => train_with::<f64>(&cfg),
    }
}

fn train_with<T: Real>(cfg: &RunConfig) -> Result<ExitCode> {
    let ds = load_data(cfg)?;
    let videos = prepare(cfg, &ds, false)?;
    let mut model = FcanModel::<T>::build(&cfg.network)?;
    create_dir(&cfg.out_dir)?;
    println!(
        "training {} parameters on {} videos for {} iterations",
        model.num_parameters(),
        videos.len(),
        cfg.train.total_iters
    );
    let start = Instant::now();
    let every = (cfg.train.total_iters / 20).max(1);
    let mut progress = |p: &fcan::train::LossPoint| {
        if p.iter % every == 0 || p.iter + 1 == cfg.train.total_iters {
            println!("iter {:>6}  lr {:.1e}  loss {:.4}", p.iter, p.lr, p.loss);
        }
    };
    let report = train_model(&mut model, &videos, &cfg.train, Some(&mut progress))?;
    println!("trained in {:.1}s", start.elapsed().as_secs_f64());
    model.save(&cfg.out_dir.join("model.fcan"))?;
    write(&cfg.out_dir.join("loss_curve.csv"), &loss_curve_csv(&report.loss_curve))?;
    write_json(&cfg.out_dir.join("train_report.json"), &report)?;
    write_json(&cfg.out_dir.join("run_config.json"), cfg)?;
    Ok(ExitCode::SUCCESS)
}

pub fn eval(a: &EvalArgs) -> Result<ExitCode> {
    let cfg = resolve(&a.common)?;
    match cfg.precision {
        Precision::F32 => eval_with::<f32>(&cfg, a),
        Precision::F64 => eval_with::<f64>(&cfg, a),
    }
}

fn load_model<T: Real>(cfg: &RunConfig, a: &EvalArgs) -> Result<FcanModel<T>> {
    let path = checkpoint_path(cfg, a.checkpoint.as_ref());
    if !path.is_file() {
        bail!("no checkpoint at {} (run `fcan train` first)", path.display());
    }
    Ok(FcanModel::<T>::load(&path)?)
}

fn eval_with<T: Real>(cfg: &RunConfig, a: &EvalArgs) -> Result<ExitCode> {
    let model = load_model::<T>(cfg, a)?;
    let ds = load_data(cfg)?;
    let videos = prepare(cfg, &ds, true)?;
    let mut metrics: Metrics = evaluate(&model, &videos, cfg.eval.segments, cfg.eval.fusion)?;
    let report_path = cfg.out_dir.join("train_report.json");
    if let Ok(text) = fs::read_to_string(&report_path) {
        let report: TrainReport = serde_json::from_str(&text)
            .with_context(|| format!("cannot parse {}", report_path.display()))?;
        metrics.loss_curve = report.loss_curve;
    }
    create_dir(&cfg.out_dir)?;
    write(&cfg.out_dir.join("metrics.csv"), &metrics.to_csv())?;
    write_json(&cfg.out_dir.join("metrics.json"), &metrics)?;
    print!("{}", metrics.to_csv());
    Ok(ExitCode::SUCCESS)
}

pub fn attn(a: &EvalArgs) -> Result<ExitCode> {
    let cfg = resolve(&a.common)?;
    match cfg.precision {
        Precision::F32 => attn_with::<f32>(&cfg, a),
        Precision::F64 => attn_with::<f64>(&cfg, a),
    }
}

fn attn_with<T: Real>(cfg: &RunConfig, a: &EvalArgs) -> Result<ExitCode> {
    let model = load_model::<T>(cfg, a)?;
    if model.crosslinks.is_empty() {
        bail!("the checkpoint has no cross-link layer, so there is no attention to export");
    }
    let ds = load_data(cfg)?;
    let videos = prepare(cfg, &ds, true)?;
    let entries: Vec<_> = ds
        .manifest
        .clips
        .iter()
        .filter(|e| e.split == fcan::synth::Split::Test)
        .collect();
    let root = cfg.out_dir.join("attention");
    let mut count = 0;
    for (video, entry) in videos.iter().zip(&entries).take(cfg.eval.attention_videos) {
        let rel = clip_dir(Path::new(""), &ds.manifest, entry)?;
        let dir = root.join(rel.to_string_lossy().replace(std::path::MAIN_SEPARATOR, "_"));
        count += export_attention(&model, video, &dir)?.len();
    }
    println!("wrote {count} attention images under {}", root.display());
    Ok(ExitCode::SUCCESS)
}

pub fn ablate(a: &AblateArgs) -> Result<ExitCode> {
    let mut cfg = resolve(&a.common)?;
    if let Some(d) = &a.depths {
        cfg.ablation.depths = d.clone();
    }
    if let Some(s) = &a.seeds {
        cfg.ablation.seeds = s.clone();
    }
    match cfg.precision {
        Precision::F32 => ablate_with::<f32>(&cfg),
        Precision::F64 => ablate_with::<f64>(&cfg),
    }
}

fn ablate_with<T: Real>(cfg: &RunConfig) -> Result<ExitCode> {
    let ds = load_data(cfg)?;
    let train_videos = prepare(cfg, &ds, false)?;
    let test_videos = prepare(cfg, &ds, true)?;
    let setup = AblationSetup {
        network: &cfg.network,
        train: &cfg.train,
        train_videos: &train_videos,
        test_videos: &test_videos,
        segments: cfg.eval.segments,
        fusion: cfg.eval.fusion,
    };
    let mut progress = |c: &fcan::ablation::AblationCell| match &c.error {
        None => println!(
            "depth {} seed {}: clip {:.3} video {:.3}",
            c.depth, c.seed, c.clip_acc, c.video_acc
        ),
        Some(e) => println!("depth {} seed {}: failed: {e}", c.depth, c.seed),
    };
    let table = ablation_crosslink_depth::<T>(
        &cfg.ablation.depths,
        &cfg.ablation.seeds,
        &setup,
        Some(&mut progress),
    )
    .map_err(|e| usage(e.to_string()))?;
    create_dir(&cfg.out_dir)?;
    write(&cfg.out_dir.join("ablation.csv"), &table.to_csv())?;
    write(&cfg.out_dir.join("ablation_summary.csv"), &table.summary_csv())?;
    write_json(&cfg.out_dir.join("ablation.json"), &table)?;
    print!("{}", table.summary_csv());
    Ok(ExitCode::SUCCESS)
}

pub fn gradcheck(a: &GradcheckArgs) -> Result<ExitCode> {
    if let Some(p) = &a.config {
        load_config(Some(p))?;
    }
    if a.trials == 0 {
        return Err(usage("--trials must be >= 1"));
    }
    let start = Instant::now();
    let mut reports: Vec<GradCheckReport> = Vec::new();
    if !matches!(a.precision, Some(PrecisionArg::F32)) {
        reports.extend(gradient_suite::<f64>(a.trials, a.seed)?);
    }
    if !matches!(a.precision, Some(PrecisionArg::F64)) {
        reports.extend(gradient_suite::<f32>(a.trials, a.seed)?);
    }
    println!(
        "{:<24} {:<9} {:>6} {:>8} {:>8} {:>12} {:>10}  result",
        "check", "precision", "trials", "entries", "at_kink", "max_rel_err", "tolerance"
    );
    for r in &reports {
        println!(
            "{:<24} {:<9} {:>6} {:>8} {:>8} {:>12.3e} {:>10.0e}  {}",
            r.name,
            r.precision,
            r.trials,
            r.checked,
            r.skipped,
            r.max_rel_err,
            r.tolerance,
            if r.passed() { "pass" } else { "FAIL" }
        );
    }
    println!("{} checks in {:.1}s", reports.len(), start.elapsed().as_secs_f64());
    if let Some(dir) = &a.out_dir {
        create_dir(dir)?;
        write_json(&dir.join("gradcheck.json"), &reports)?;
    }
    Ok(if reports.iter().all(GradCheckReport::passed) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

#[derive(Serialize)]
struct FrameFit {
    frame: usize,
    homography: [[f64; 3]; 3],
    inlier_fraction: f64,
    low_confidence: bool,
}

pub fn compensate(a: &CompensateArgs) -> Result<ExitCode> {
    let cfg = load_config(a.config.as_deref())?;
    let bound = a.bound.unwrap_or(cfg.data.scene.flow_bound);
    if !(bound > 0.0 && bound.is_finite()) {
        return Err(usage(format!("--bound must be positive, got {bound}")));
    }
    let out = a.out_dir.clone().unwrap_or_else(|| cfg.out_dir.join("compensated"));
    let name = |axis: &str, t: usize| format!("flow_{axis}_{t:05}.pgm");
    let mut t = 0;
    let mut fits = Vec::new();
    while a.input.join(name("x", t)).is_file() {
        let gx = read_flow_image(&a.input.join(name("x", t)), bound)?;
        let gy = read_flow_image(&a.input.join(name("y", t)), bound)?;
        let flow = decode_gray(&gx, &gy, bound)?;
        let fit = fit_homography(&flow, &cfg.input.ransac)?;
        let residual = compensate_flow(&flow, &fit.homography)?;
        let (cx, cy) = encode_gray(&residual, bound)?;
        if t == 0 {
            create_dir(&out)?;
        }
        let comment = format!("{BOUND_TAG} {bound}");
        cx.write_pgm_with_comment(&out.join(name("x", t)), &comment)?;
        cy.write_pgm_with_comment(&out.join(name("y", t)), &comment)?;
        fits.push(FrameFit {
            frame: t,
            homography: fit.homography.rows(),
            inlier_fraction: fit.inlier_fraction,
            low_confidence: fit.low_confidence,
        });
        t += 1;
    }
    if t == 0 {
        bail!("no flow_x_00000.pgm in {}", a.input.display());
    }
    write_json(&out.join("homographies.json"), &fits)?;
    let low = fits.iter().filter(|f| f.low_confidence).count();
    println!("compensated {t} flow fields into {} ({low} low-confidence fits)", out.display());
    Ok(ExitCode::SUCCESS)
}
