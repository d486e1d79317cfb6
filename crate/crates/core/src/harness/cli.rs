//! Command-line driver. Every subcommand reads an optional JSON config and
//! writes its outputs plus a `manifest.json` under `--out`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{compute_metrics, evaluate_run};
use super::scene::{gen_sequence, SceneConfig};
use super::selftest;
use crate::error::{ensure, Error, Result};
use crate::image::Image;
use crate::motion_seg::{seg_run, SegConfig};
use crate::predictor::{Predictor, PredictorConfig};
use crate::tensor_io::{read_json, read_pgm, write_json, write_pgm, write_velocity_artifacts, Frame, RunManifest, VelocityArtifactPaths};
use crate::transform_model::{train, TMParams, TrainConfig, TransformModel};

#[derive(Debug, Parser)]
#[command(name = "lfdtn", version, about = "Local frequency-domain video prediction and motion segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON config for the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Frame count (gen, train) or number of input frames to use.
    #[arg(long, global = true)]
    frames: Option<usize>,
    /// Trained transform model (`.lfdt` with its `.json` sidecar).
    #[arg(long, global = true)]
    model: Option<PathBuf>,
    /// Input directory written by `gen` or `predict`.
    #[arg(long, global = true)]
    input: Option<PathBuf>,
    /// Ground-truth directory written by `gen` (eval).
    #[arg(long, global = true)]
    truth: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic sequence with ground truth.
    Gen,
    /// Closed-loop prediction from the seed frames of a generated sequence.
    Predict,
    /// Train a transform model on generated sequences.
    Train,
    /// Foreground/background/alpha segmentation of a sequence.
    Segment,
    /// Score predicted frames against ground truth.
    Eval,
    /// Measured velocity overlays for every consecutive frame pair.
    Viz,
    /// Run the built-in invariant checks.
    Selftest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictJob {
    pub predictor: PredictorConfig,
    /// Frames to predict; all remaining frames of the input when unset.
    pub horizon: Option<usize>,
    pub arrow_scale: f64,
}

impl Default for PredictJob {
    fn default() -> Self {
        Self {
            predictor: PredictorConfig::default(),
            horizon: None,
            arrow_scale: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainJob {
    /// Template for the training sequences; sequence `i` uses seed `scene.seed + i`.
    pub scene: SceneConfig,
    pub sequences: usize,
    pub train: TrainConfig,
}

impl Default for TrainJob {
    fn default() -> Self {
        Self {
            scene: SceneConfig::default(),
            sequences: 500,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentJob {
    pub predictor: PredictorConfig,
    pub segmentation: SegConfig,
    /// Open-loop frames after the observed ones.
    pub horizon: usize,
    pub arrow_scale: f64,
}

impl Default for SegmentJob {
    fn default() -> Self {
        Self {
            predictor: PredictorConfig::default(),
            segmentation: SegConfig::default(),
            horizon: 0,
            arrow_scale: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VizJob {
    pub predictor: PredictorConfig,
    pub arrow_scale: f64,
}

impl Default for VizJob {
    fn default() -> Self {
        Self {
            predictor: PredictorConfig::default(),
            arrow_scale: 2.0,
        }
    }
}

/// Parses `argv` (including the program name), runs the subcommand and
/// returns the process exit code: 0 success, 1 invalid input, 2 runtime or
/// numerical failure.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    let outcome = match cli.command {
        Command::Gen => cmd_gen(&cli),
        Command::Predict => cmd_predict(&cli),
        Command::Train => cmd_train(&cli),
        Command::Segment => cmd_segment(&cli),
        Command::Eval => cmd_eval(&cli),
        Command::Viz => cmd_viz(&cli),
        Command::Selftest => Ok(if selftest::run_all() { 0 } else { 2 }),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}

fn load_config<T: Default + for<'de> Deserialize<'de>>(cli: &Cli) -> Result<T> {
    match &cli.config {
        Some(p) => read_json(p),
        None => Ok(T::default()),
    }
}

fn out_dir(cli: &Cli) -> Result<&Path> {
    cli.out
        .as_deref()
        .ok_or_else(|| Error::Validation("--out is required".into()))
}

fn input_dir(cli: &Cli) -> Result<&Path> {
    cli.input
        .as_deref()
        .ok_or_else(|| Error::Validation("--input is required".into()))
}

fn to_json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("config types serialize to JSON")
}

/// Frames of a `gen` or `predict` directory in time order, with the seed
/// count recorded in its manifest when present.
fn read_sequence(dir: &Path) -> Result<(Vec<Image>, Option<usize>)> {
    let manifest_path = dir.join("manifest.json");
    let mut seed_count = None;
    let mut names: Vec<String> = Vec::new();
    if manifest_path.exists() {
        let m: RunManifest = read_json(&manifest_path)?;
        seed_count = m.config.get("seed_count").and_then(|v| v.as_u64()).map(|v| v as usize);
        names = m.paths.into_iter().filter(|p| p.starts_with("frames/")).collect();
    }
    if names.is_empty() {
        let frames_dir = dir.join("frames");
        let rd = std::fs::read_dir(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;
        for entry in rd {
            let entry = entry.map_err(|e| Error::io(&frames_dir, e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if name.ends_with(".pgm") {
                names.push(format!("frames/{name}"));
            }
        }
        names.sort();
    }
    ensure!(!names.is_empty(), Validation, "{} contains no frames", dir.display());
    let frames = names
        .iter()
        .map(|n| read_pgm(dir.join(n)).map(|f| f.to_image()))
        .collect::<Result<Vec<_>>>()?;
    Ok((frames, seed_count))
}

fn load_model(cli: &Cli) -> Result<TransformModel> {
    match &cli.model {
        Some(p) => Ok(TransformModel::Learned(TMParams::load(p)?)),
        None => Ok(TransformModel::Identity),
    }
}

fn cmd_gen(cli: &Cli) -> Result<i32> {
    let mut cfg: SceneConfig = load_config(cli)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(n) = cli.frames {
        cfg.frames = n;
    }
    let out = out_dir(cli)?;
    let scene = gen_sequence(&cfg)?;
    let paths = scene.write(out)?;
    let manifest = RunManifest {
        grid: Some(scene.truth.grid),
        window: None,
        paths,
        seed: Some(cfg.seed),
        arrow_scale: None,
        config: to_json(&cfg),
    };
    write_json(&manifest, out.join("manifest.json"))?;
    log::info!("wrote {} frames to {}", cfg.frames, out.display());
    Ok(0)
}

fn cmd_predict(cli: &Cli) -> Result<i32> {
    let job: PredictJob = load_config(cli)?;
    let input = input_dir(cli)?;
    let out = out_dir(cli)?;
    let (mut frames, seeds) = read_sequence(input)?;
    if let Some(n) = cli.frames {
        ensure!(n <= frames.len(), Validation, "--frames {} exceeds the {} available", n, frames.len());
        frames.truncate(n);
    }
    let seed_count = seeds.unwrap_or(2);
    ensure!(frames.len() >= seed_count, Validation, "input has fewer frames than its {} seeds", seed_count);
    let horizon = job.horizon.unwrap_or(frames.len() - seed_count);
    let (h, w) = frames[0].dims();
    let pred = Predictor::new(job.predictor, load_model(cli)?, h, w)?;
    let roll = pred.rollout(&frames[..seed_count], horizon)?;
    let mut all: Vec<Image> = frames[..seed_count].to_vec();
    all.extend(roll.frames.iter().cloned());
    let mut paths = Vec::new();
    for (t, f) in all.iter().enumerate() {
        let p = format!("frames/{t:04}.pgm");
        write_pgm(&Frame::from_image(f), out.join(&p))?;
        paths.push(p);
    }
    for (k, vf) in roll.refined.iter().enumerate() {
        let t = seed_count + k;
        let art = VelocityArtifactPaths {
            csv: out.join(format!("velocity/{t:04}.csv")),
            overlay: out.join(format!("velocity/{t:04}.ppm")),
            manifest: out.join(format!("velocity/{t:04}.json")),
        };
        write_velocity_artifacts(vf, &Frame::from_image(&all[t - 1]), &art, job.arrow_scale, Some(pred.window.describe()))?;
        paths.push(format!("velocity/{t:04}.csv"));
    }
    let n = all.len().min(frames.len());
    if n > seed_count {
        let eval = evaluate_run(&all[..n], &frames[..n], seed_count)?;
        crate::tensor_io::write_bytes(&out.join("metrics.csv"), eval.to_csv().as_bytes())?;
        paths.push("metrics.csv".into());
        log::info!("mean mse {:.6}, psnr {:.2}", eval.mean.mse, eval.mean.psnr);
    }
    let manifest = RunManifest {
        grid: Some(pred.grid),
        window: Some(pred.window.describe()),
        paths,
        seed: cli.seed,
        arrow_scale: Some(job.arrow_scale),
        config: serde_json::json!({
            "job": job,
            "seed_count": seed_count,
            "input": input.display().to_string(),
            "model": cli.model.as_ref().map(|p| p.display().to_string()),
        }),
    };
    write_json(&manifest, out.join("manifest.json"))?;
    Ok(0)
}

fn cmd_train(cli: &Cli) -> Result<i32> {
    let mut job: TrainJob = load_config(cli)?;
    if let Some(s) = cli.seed {
        job.train.seed = s;
        job.scene.seed = s;
    }
    if let Some(n) = cli.frames {
        job.scene.frames = n;
    }
    let out = out_dir(cli)?;
    ensure!(job.sequences >= 1, Validation, "sequences must be positive");
    job.scene.validate()?;
    let base = job.scene.seed;
    let data: Vec<Vec<Image>> = (0..job.sequences as u64)
        .into_par_iter()
        .map(|i| {
            let cfg = SceneConfig {
                seed: base.wrapping_add(i),
                ..job.scene.clone()
            };
            gen_sequence(&cfg).map(|s| s.frames)
        })
        .collect::<Result<_>>()?;
    let mut cfg = job.train.clone();
    cfg.log_path = Some(out.join("train_log.csv"));
    let outcome = train(&data, job.scene.seed_count, &cfg)?;
    let model_path = out.join("model.lfdt");
    outcome.params.save(
        &model_path,
        serde_json::json!({ "predictor": cfg.predictor, "diverged": outcome.diverged, "epochs": outcome.log.len() }),
    )?;
    crate::tensor_io::write_bytes(&out.join("train_log.csv"), outcome.log_csv().as_bytes())?;
    let manifest = RunManifest {
        grid: None,
        window: None,
        paths: vec!["model.lfdt".into(), "model.lfdt.json".into(), "train_log.csv".into()],
        seed: Some(job.train.seed),
        arrow_scale: None,
        config: to_json(&job),
    };
    write_json(&manifest, out.join("manifest.json"))?;
    if outcome.diverged {
        eprintln!("error: training diverged; saved the last finite parameters");
        return Ok(2);
    }
    Ok(0)
}

fn cmd_segment(cli: &Cli) -> Result<i32> {
    let job: SegmentJob = load_config(cli)?;
    let input = input_dir(cli)?;
    let out = out_dir(cli)?;
    let (mut frames, seeds) = read_sequence(input)?;
    if let Some(n) = cli.frames {
        ensure!(n <= frames.len(), Validation, "--frames {} exceeds the {} available", n, frames.len());
        frames.truncate(n);
    }
    let seed_count = seeds.unwrap_or(2);
    let (h, w) = frames[0].dims();
    let pred = Predictor::new(job.predictor, load_model(cli)?, h, w)?;
    let steps = seg_run(&frames, seed_count, job.horizon, &pred, &job.segmentation)?;
    let masks_dir = input.join("gt/masks");
    let mut csv = String::from("t,observed,mse,iou\n");
    let mut paths = Vec::new();
    for s in &steps {
        let t = s.t;
        for (name, img) in [("fg", &s.state.fg), ("bg", &s.state.bg), ("alpha", &s.state.alpha)] {
            let p = format!("{name}/{t:04}.pgm");
            write_pgm(&Frame::from_image(&img.clamp01()), out.join(&p))?;
            paths.push(p);
        }
        let mut mse = String::new();
        if let Some(pf) = &s.predicted {
            let p = format!("predicted/{t:04}.pgm");
            write_pgm(&Frame::from_image(&pf.clamp01()), out.join(&p))?;
            paths.push(p);
            if t < frames.len() {
                mse = compute_metrics(&pf.clamp01(), &frames[t])?.mse.to_string();
            }
        }
        if let Some(vf) = &s.velocity {
            let art = VelocityArtifactPaths {
                csv: out.join(format!("velocity/{t:04}.csv")),
                overlay: out.join(format!("velocity/{t:04}.ppm")),
                manifest: out.join(format!("velocity/{t:04}.json")),
            };
            write_velocity_artifacts(vf, &Frame::from_image(&s.state.fg.clamp01()), &art, job.arrow_scale, Some(pred.window.describe()))?;
            paths.push(format!("velocity/{t:04}.csv"));
        }
        let mask_path = masks_dir.join(format!("{t:04}.pgm"));
        let iou = if mask_path.exists() {
            mask_iou(&s.state.alpha, &read_pgm(&mask_path)?.to_image()).to_string()
        } else {
            String::new()
        };
        csv += &format!("{t},{},{mse},{iou}\n", s.observed);
    }
    crate::tensor_io::write_bytes(&out.join("segmentation.csv"), csv.as_bytes())?;
    paths.push("segmentation.csv".into());
    let manifest = RunManifest {
        grid: Some(pred.grid),
        window: Some(pred.window.describe()),
        paths,
        seed: cli.seed,
        arrow_scale: Some(job.arrow_scale),
        config: serde_json::json!({
            "job": job,
            "seed_count": seed_count,
            "input": input.display().to_string(),
            "model": cli.model.as_ref().map(|p| p.display().to_string()),
        }),
    };
    write_json(&manifest, out.join("manifest.json"))?;
    Ok(0)
}

/// Intersection over union of `alpha > 0.5` and `mask > 0.5`; 1 when both are empty.
pub fn mask_iou(alpha: &Image, mask: &Image) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&a, &m) in alpha.data().iter().zip(mask.data()) {
        let (p, q) = (a > 0.5, m > 0.5);
        inter += (p && q) as usize;
        union += (p || q) as usize;
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

fn cmd_eval(cli: &Cli) -> Result<i32> {
    let input = input_dir(cli)?;
    let truth = cli
        .truth
        .as_deref()
        .ok_or_else(|| Error::Validation("--truth is required".into()))?;
    let (pred, pred_seeds) = read_sequence(input)?;
    let (gt, gt_seeds) = read_sequence(truth)?;
    let seed_count = gt_seeds.or(pred_seeds).unwrap_or(2);
    let n = cli.frames.unwrap_or(gt.len());
    ensure!(
        n <= pred.len() && n <= gt.len(),
        Shape,
        "prediction has {} frames, ground truth {}, {} requested",
        pred.len(),
        gt.len(),
        n
    );
    let eval = evaluate_run(&pred[..n], &gt[..n], seed_count)?;
    let out = cli.out.as_deref().unwrap_or(input);
    crate::tensor_io::write_bytes(&out.join("metrics.csv"), eval.to_csv().as_bytes())?;
    print!("{}", eval.to_csv());
    Ok(0)
}

fn cmd_viz(cli: &Cli) -> Result<i32> {
    let job: VizJob = load_config(cli)?;
    let input = input_dir(cli)?;
    let out = out_dir(cli)?;
    let (frames, _) = read_sequence(input)?;
    ensure!(frames.len() >= 2, Validation, "viz needs at least 2 frames");
    let (h, w) = frames[0].dims();
    let pred = Predictor::new(job.predictor, TransformModel::Identity, h, w)?;
    let spectra = frames.iter().map(|f| pred.spectra(f)).collect::<Result<Vec<_>>>()?;
    let mut paths = Vec::new();
    for t in 1..frames.len() {
        let vf = pred.measure(&spectra[t - 1], &spectra[t])?;
        let art = VelocityArtifactPaths {
            csv: out.join(format!("viz/{t:04}.csv")),
            overlay: out.join(format!("viz/{t:04}.ppm")),
            manifest: out.join(format!("viz/{t:04}.json")),
        };
        write_velocity_artifacts(&vf, &Frame::from_image(&frames[t]), &art, job.arrow_scale, Some(pred.window.describe()))?;
        paths.push(format!("viz/{t:04}.ppm"));
    }
    let manifest = RunManifest {
        grid: Some(pred.grid),
        window: Some(pred.window.describe()),
        paths,
        seed: cli.seed,
        arrow_scale: Some(job.arrow_scale),
        config: serde_json::json!({ "job": job, "input": input.display().to_string() }),
    };
    write_json(&manifest, out.join("manifest.json"))?;
    Ok(0)
}
