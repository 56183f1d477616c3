//! The `phasematch` command line.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::convnet::{
    load_model, save_model, train_with_progress, ConvNetError, HeadKind, LossKind, NetSpec, StepDecay,
    TrainConfig,
};
use crate::dataset::{
    build_manifest, synth_pair, AlignedPair, AugmentOps, BuildConfig, DatasetError, Manifest, Provenance,
    Split, SplitRatios, SynthParams,
};
use crate::eval::{repeatability, score_samples, EvalReport, PairEval, RocReport};
use crate::geometry::Similarity;
use crate::imaging::{load_gray, save_gray, GrayImage, ImageError};
use crate::matcher::{
    read_matches, run_pipeline, write_matches, GeometricModel, MatchFile, MatcherConfig, MatcherError,
    NccScorer, NetScorer, PatchScorer,
};
use crate::pc::{
    compute_pc_maps, detect_keypoints, write_keypoints, BankParams, DetectParams, KindSelection, LogGaborBank,
    PcError, Threshold,
};
use crate::rng::substream;

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INPUT: i32 = 3;
pub const EXIT_PIPELINE: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Missing, unreadable, or malformed inputs and bad parameter values.
    #[error("{0}")]
    Input(String),
    /// The inputs were fine but a processing stage failed.
    #[error("{0}")]
    Pipeline(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Pipeline(_) => EXIT_PIPELINE,
        }
    }
}

impl From<ImageError> for CliError {
    fn from(e: ImageError) -> Self {
        match e {
            ImageError::Invalid(_) | ImageError::OutOfBounds { .. } => CliError::Pipeline(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::NoValidWindows | DatasetError::CannotDerange(_) => CliError::Pipeline(e.to_string()),
            DatasetError::Image(i) => i.into(),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<ConvNetError> for CliError {
    fn from(e: ConvNetError) -> Self {
        match e {
            ConvNetError::IoFailure(_)
            | ConvNetError::BadMagic
            | ConvNetError::VersionMismatch { .. }
            | ConvNetError::ChecksumMismatch
            | ConvNetError::InvalidSpec(_)
            | ConvNetError::InvalidConfig(_) => CliError::Input(e.to_string()),
            _ => CliError::Pipeline(e.to_string()),
        }
    }
}

impl From<MatcherError> for CliError {
    fn from(e: MatcherError) -> Self {
        match e {
            MatcherError::InvalidConfig(_) | MatcherError::ModelShapeMismatch { .. } | MatcherError::MatchFile(_) => {
                CliError::Input(e.to_string())
            }
            MatcherError::Image(i) => i.into(),
            _ => CliError::Pipeline(e.to_string()),
        }
    }
}

impl From<PcError> for CliError {
    fn from(e: PcError) -> Self {
        match e {
            PcError::InvalidBankParams(_) | PcError::KeypointFile(_) => CliError::Input(e.to_string()),
            _ => CliError::Pipeline(e.to_string()),
        }
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Input(format!("{}: {e}", path.display()))
}

fn require_file(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Input(format!("file not found: {}", path.display())))
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    require_file(path)?;
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Pipeline(e.to_string()))?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

#[derive(Parser, Debug)]
#[command(name = "phasematch", version, about = "Match images with nonlinear intensity differences")]
pub struct Cli {
    /// Worker threads; 1 gives fully deterministic scheduling.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate synthetic aligned image pairs with ground truth.
    Synth(SynthArgs),
    /// Detect phase-congruency keypoints in one image.
    Detect(DetectArgs),
    /// Slice aligned pairs into a labeled patch manifest.
    BuildDataset(BuildArgs),
    /// Train the 2-channel similarity network on a manifest.
    Train(TrainArgs),
    /// Match two images and write matches plus a side-by-side raster.
    Match(MatchArgs),
    /// Score match results against ground truth.
    Eval(EvalArgs),
}

#[derive(Args, Debug, Clone)]
pub struct DetectFlags {
    /// Filter bank parameters as JSON.
    #[arg(long)]
    pub bank: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub nms_radius: usize,
    /// Keep maxima above mean + k * stddev of the moment map.
    #[arg(long, default_value_t = 1.0)]
    pub threshold_k: f64,
    #[arg(long, default_value_t = 500)]
    pub max_kp: usize,
    #[arg(long, default_value_t = 16)]
    pub border: usize,
    #[arg(long, value_enum, default_value_t = KindArg::Corners)]
    pub kinds: KindArg,
    /// Disable the noise threshold on filter energy.
    #[arg(long)]
    pub no_noise_comp: bool,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum KindArg {
    Corners,
    Edges,
    Both,
}

impl DetectFlags {
    fn params(&self) -> DetectParams {
        DetectParams {
            nms_radius: self.nms_radius,
            threshold: Threshold::MeanPlusStd(self.threshold_k),
            max_count: self.max_kp,
            border: self.border,
            kinds: match self.kinds {
                KindArg::Corners => KindSelection::Corners,
                KindArg::Edges => KindSelection::Edges,
                KindArg::Both => KindSelection::Both,
            },
        }
    }

    fn bank(&self) -> Result<BankParams, CliError> {
        let b = match &self.bank {
            Some(p) => read_json(p)?,
            None => BankParams::default(),
        };
        b.validate()?;
        Ok(b)
    }
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Synthesis parameters as JSON; missing fields take defaults.
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct DetectArgs {
    pub image: PathBuf,
    /// Keypoint text file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write moment maps as `<prefix>_max.pgm` and `<prefix>_min.pgm`.
    #[arg(long)]
    pub maps: Option<PathBuf>,
    #[command(flatten)]
    pub detect: DetectFlags,
}

#[derive(Args, Debug)]
pub struct BuildArgs {
    /// Directory written by `synth` (or with the same layout).
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    #[arg(long, default_value_t = 16)]
    pub stride: usize,
    /// train,val,test
    #[arg(long, default_value = "0.7,0.15,0.15")]
    pub ratios: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Pair negatives across all pairs instead of within each pair.
    #[arg(long)]
    pub cross_pair: bool,
    #[arg(long)]
    pub hflip: bool,
    #[arg(long)]
    pub vflip: bool,
    #[arg(long)]
    pub rot90: bool,
    /// lo,hi
    #[arg(long)]
    pub gamma_jitter: Option<String>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossArg {
    Hinge,
    Logistic,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// History CSV; defaults to `<out>.history.csv`.
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.5)]
    pub decay_factor: f64,
    #[arg(long, default_value_t = 6)]
    pub decay_period: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, value_enum, default_value_t = LossArg::Hinge)]
    pub loss: LossArg,
    #[arg(long)]
    pub no_channel_swap: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum DescriptorArg {
    Cnn,
    Ncc,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelArg {
    Translation,
    Similarity,
}

#[derive(Args, Debug, Clone)]
pub struct MatchFlags {
    /// Trained model; required for the CNN descriptor.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = DescriptorArg::Cnn)]
    pub descriptor: DescriptorArg,
    /// Patch size for the NCC descriptor (the CNN uses its own).
    #[arg(long, default_value_t = 32)]
    pub patch_size: usize,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub threshold: f64,
    /// Chebyshev search radius in pixels; omit to score all pairs.
    #[arg(long)]
    pub search_radius: Option<f64>,
    #[arg(long)]
    pub no_mutual: bool,
    #[arg(long, value_enum, default_value_t = ModelArg::Translation)]
    pub geometry: ModelArg,
    #[arg(long, default_value_t = 500)]
    pub iterations: usize,
    #[arg(long, default_value_t = 2.0)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 4)]
    pub min_inliers: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub detect: DetectFlags,
}

#[derive(Args, Debug)]
pub struct MatchArgs {
    pub image_a: PathBuf,
    pub image_b: PathBuf,
    /// Writes `<out>.matches.txt` and `<out>.viz.pgm`.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub flags: MatchFlags,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Pair directory holding ground truth (`<name>.json`) and, for
    /// in-process matching, the images.
    #[arg(long)]
    pub pairs: PathBuf,
    /// Directory of `<name>.matches.txt` files; when absent every pair is
    /// matched in-process with the match flags.
    #[arg(long)]
    pub matches: Option<PathBuf>,
    /// Labeled manifest for ROC analysis (uses the test split when tagged).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Radius for keypoint repeatability.
    #[arg(long, default_value_t = 2.0)]
    pub repeat_radius: f64,
    /// Writes `<out>.json` and `<out>.csv`.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub flags: MatchFlags,
}

/// Ground-truth sidecar written next to each synthetic pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub transform: Similarity,
    pub provenance: Provenance,
}

fn pair_name(i: usize) -> String {
    format!("pair_{i:04}")
}

fn image_paths(dir: &Path, name: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{name}_a.pgm")), dir.join(format!("{name}_b.pgm")))
}

/// Pair names in `dir`, found through their ground-truth files, sorted.
/// Pair names in `dir`: every `<name>.json`, restricted to names whose A
/// image exists when `need_images` is set.
fn list_pairs(dir: &Path, need_images: bool) -> Result<Vec<String>, CliError> {
    if !dir.is_dir() {
        return Err(CliError::Input(format!("directory not found: {}", dir.display())));
    }
    let mut names: Vec<String> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            let stem = name.strip_suffix(".json")?.to_string();
            (!need_images || image_paths(dir, &stem).0.is_file()).then_some(stem)
        })
        .collect();
    names.sort();
    Ok(names)
}

fn load_pair(dir: &Path, name: &str) -> Result<AlignedPair, CliError> {
    let gt: GroundTruth = read_json(&dir.join(format!("{name}.json")))?;
    let (pa, pb) = image_paths(dir, name);
    Ok(AlignedPair::new(load_gray(&pa)?, load_gray(&pb)?, gt.transform, gt.provenance)?)
}

fn cmd_synth(a: &SynthArgs) -> Result<(), CliError> {
    let params: SynthParams = match &a.params {
        Some(p) => read_json(p)?,
        None => SynthParams::default(),
    };
    params.validate()?;
    fs::create_dir_all(&a.out).map_err(io_err(&a.out))?;
    (0..a.count).into_par_iter().try_for_each(|i| {
        let seed: u64 = substream(a.seed, i as u64).random();
        let pair = synth_pair(&params, seed)?;
        let name = pair_name(i);
        let (pa, pb) = image_paths(&a.out, &name);
        save_gray(&pair.img_a, &pa)?;
        save_gray(&pair.img_b, &pb)?;
        write_json(
            &a.out.join(format!("{name}.json")),
            &GroundTruth {
                transform: pair.transform,
                provenance: pair.provenance,
            },
        )
    })
}

fn cmd_detect(a: &DetectArgs) -> Result<(), CliError> {
    let img = load_gray(&a.image)?;
    let bank = LogGaborBank::build(&a.detect.bank()?, img.width(), img.height())?;
    let maps = compute_pc_maps(&img, &bank, !a.detect.no_noise_comp)?;
    let kps = detect_keypoints(&maps, &a.detect.params());
    write_keypoints(&a.out, &kps)?;
    if let Some(prefix) = &a.maps {
        let with = |suffix: &str| {
            let mut s = prefix.as_os_str().to_owned();
            s.push(suffix);
            PathBuf::from(s)
        };
        save_gray(&GrayImage::rescaled(maps.width(), maps.height(), maps.max_moment())?, with("_max.pgm"))?;
        save_gray(&GrayImage::rescaled(maps.width(), maps.height(), maps.min_moment())?, with("_min.pgm"))?;
    }
    Ok(())
}

fn parse_floats(s: &str, n: usize, what: &str) -> Result<Vec<f64>, CliError> {
    let v: Result<Vec<f64>, _> = s.split(',').map(|p| p.trim().parse::<f64>()).collect();
    match v {
        Ok(v) if v.len() == n => Ok(v),
        _ => Err(CliError::Input(format!("{what} expects {n} comma-separated numbers, got {s:?}"))),
    }
}

fn cmd_build_dataset(a: &BuildArgs) -> Result<(), CliError> {
    let r = parse_floats(&a.ratios, 3, "--ratios")?;
    let ratios = SplitRatios::new(r[0], r[1], r[2])?;
    let gamma_jitter = match &a.gamma_jitter {
        Some(s) => {
            let g = parse_floats(s, 2, "--gamma-jitter")?;
            Some((g[0], g[1]))
        }
        None => None,
    };
    let names = list_pairs(&a.pairs, true)?;
    if names.is_empty() {
        return Err(CliError::Input(format!("no pairs found in {}", a.pairs.display())));
    }
    let pairs: Vec<(u32, AlignedPair)> = names
        .iter()
        .enumerate()
        .map(|(i, n)| Ok((i as u32, load_pair(&a.pairs, n)?)))
        .collect::<Result<_, CliError>>()?;
    let cfg = BuildConfig {
        size: a.size,
        stride: a.stride,
        cross_pair: a.cross_pair,
        ratios,
        augment: AugmentOps {
            hflip: a.hflip,
            vflip: a.vflip,
            rot90: a.rot90,
            gamma_jitter,
        },
        seed: a.seed,
    };
    let manifest = build_manifest(&pairs, &cfg)?;
    manifest.write(&a.out)?;
    Ok(())
}

fn read_manifest(path: &Path) -> Result<Manifest, CliError> {
    require_file(path)?;
    Ok(Manifest::read(path)?)
}

fn cmd_train(a: &TrainArgs) -> Result<(), CliError> {
    let manifest = read_manifest(&a.manifest)?;
    let size = manifest
        .records
        .first()
        .map(|r| r.size())
        .ok_or_else(|| CliError::Input("manifest has no records".into()))?;
    let train = manifest.subset(Split::Train);
    let val = manifest.subset(Split::Val);
    if train.is_empty() || val.is_empty() {
        return Err(CliError::Input("manifest needs train and val records".into()));
    }
    let spec = NetSpec::default_for(size, HeadKind::TwoChannel)?;
    let config = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        base_lr: a.lr,
        lr_schedule: StepDecay {
            factor: a.decay_factor,
            period: a.decay_period,
        },
        weight_decay: a.weight_decay,
        momentum: a.momentum,
        seed: a.seed,
        loss: match a.loss {
            LossArg::Hinge => LossKind::Hinge,
            LossArg::Logistic => LossKind::Logistic,
        },
        channel_swap: !a.no_channel_swap,
    };
    let history_path = a.history.clone().unwrap_or_else(|| {
        let mut s = a.out.as_os_str().to_owned();
        s.push(".history.csv");
        PathBuf::from(s)
    });
    let mut history = String::from("epoch,train_loss,val_loss,val_acc,lr\n");
    let outcome = train_with_progress(&train, &val, &spec, &config, |e| {
        history.push_str(&format!(
            "{},{},{},{},{}\n",
            e.epoch, e.train_loss, e.val_loss, e.val_acc, e.lr
        ));
        eprintln!(
            "epoch {:>3}  lr {:.2e}  train loss {:.4} acc {:.3}  val loss {:.4} acc {:.3}",
            e.epoch, e.lr, e.train_loss, e.train_acc, e.val_loss, e.val_acc
        );
    })?;
    save_model(&outcome.params, &a.out)?;
    fs::write(&history_path, history).map_err(io_err(&history_path))?;
    Ok(())
}

impl MatchFlags {
    fn config(&self, patch_size: usize) -> MatcherConfig {
        MatcherConfig {
            patch_size,
            score_threshold: self.threshold,
            mutual_best: !self.no_mutual,
            search_radius: self.search_radius,
            coarse_alignment: None,
            model: match self.geometry {
                ModelArg::Translation => GeometricModel::Translation,
                ModelArg::Similarity => GeometricModel::Similarity,
            },
            iterations: self.iterations,
            tolerance: self.tolerance,
            min_inliers: self.min_inliers,
            seed: self.seed,
            detect: self.detect.params(),
            noise_compensation: !self.detect.no_noise_comp,
        }
    }

    fn scorer(&self) -> Result<Box<dyn PatchScorer>, CliError> {
        match self.descriptor {
            DescriptorArg::Ncc => Ok(Box::new(NccScorer::new(self.patch_size))),
            DescriptorArg::Cnn => {
                let path = self
                    .model
                    .as_ref()
                    .ok_or_else(|| CliError::Input("--model is required for the cnn descriptor".into()))?;
                require_file(path)?;
                Ok(Box::new(NetScorer::new(&load_model(path)?)?))
            }
        }
    }
}

/// Outcome of matching one pair, kept even when verification fails.
struct Matched {
    file: MatchFile,
    keypoints_a: Vec<crate::pc::Keypoint>,
    keypoints_b: Vec<crate::pc::Keypoint>,
    timings: crate::matcher::StageTimings,
    failure: Option<MatcherError>,
}

fn match_images(
    a: &GrayImage,
    b: &GrayImage,
    scorer: &dyn PatchScorer,
    flags: &MatchFlags,
) -> Result<Matched, CliError> {
    let cfg = flags.config(scorer.patch_size());
    let run = run_pipeline(a, b, scorer, &cfg, &flags.detect.bank()?)?;
    let (file, failure) = match run.result {
        Ok(r) => (MatchFile::from_result(&r, &run.keypoints_a, &run.keypoints_b), None),
        Err(e) => (
            MatchFile::unverified(&run.selected, &run.keypoints_a, &run.keypoints_b, run.counts),
            Some(e),
        ),
    };
    Ok(Matched {
        file,
        keypoints_a: run.keypoints_a,
        keypoints_b: run.keypoints_b,
        timings: run.timings,
        failure,
    })
}

/// A and B side by side on a black canvas with inlier matches joined by
/// white segments.
pub fn render_matches(a: &GrayImage, b: &GrayImage, file: &MatchFile) -> Result<GrayImage, ImageError> {
    let w = a.width() + b.width();
    let h = a.height().max(b.height());
    let mut px = vec![0.0; w * h];
    for (img, x0) in [(a, 0), (b, a.width())] {
        for y in 0..img.height() {
            for x in 0..img.width() {
                px[y * w + x0 + x] = img.get(x, y);
            }
        }
    }
    for l in file.lines.iter().filter(|l| l.inlier) {
        let (x0, y0) = (l.ax as i64, l.ay as i64);
        let (x1, y1) = ((l.bx + a.width()) as i64, l.by as i64);
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = ((x1 - x0).signum(), (y1 - y0).signum());
        let (mut x, mut y, mut err) = (x0, y0, dx + dy);
        loop {
            if (0..w as i64).contains(&x) && (0..h as i64).contains(&y) {
                px[y as usize * w + x as usize] = 1.0;
            }
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }
    GrayImage::new(w, h, px)
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn cmd_match(a: &MatchArgs) -> Result<(), CliError> {
    let img_a = load_gray(&a.image_a)?;
    let img_b = load_gray(&a.image_b)?;
    let scorer = a.flags.scorer()?;
    let m = match_images(&img_a, &img_b, scorer.as_ref(), &a.flags)?;
    write_matches(&with_suffix(&a.out, ".matches.txt"), &m.file)?;
    save_gray(&render_matches(&img_a, &img_b, &m.file)?, with_suffix(&a.out, ".viz.pgm"))?;
    match m.failure {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

fn cmd_eval(a: &EvalArgs) -> Result<(), CliError> {
    let names = list_pairs(&a.pairs, a.matches.is_none())?;
    let scorer = if a.matches.is_none() || a.manifest.is_some() {
        Some(a.flags.scorer()?)
    } else {
        None
    };
    let mut evals = Vec::with_capacity(names.len());
    for name in &names {
        let gt: GroundTruth = read_json(&a.pairs.join(format!("{name}.json")))?;
        let mut eval = match &a.matches {
            Some(dir) => {
                let path = dir.join(format!("{name}.matches.txt"));
                require_file(&path)?;
                let f = read_matches(&path)?;
                PairEval::new(name.clone(), &f.lines, f.transform.as_ref(), &gt.transform, f.counts.keypoints_a, a.flags.tolerance)
            }
            None => {
                let pair = load_pair(&a.pairs, name)?;
                let scorer = scorer.as_deref().ok_or_else(|| CliError::Input("no descriptor".into()))?;
                let start = Instant::now();
                let m = match match_images(&pair.img_a, &pair.img_b, scorer, &a.flags) {
                    Ok(m) => m,
                    Err(CliError::Pipeline(msg)) => {
                        eprintln!("{name}: {msg}");
                        let mut e = PairEval::new(name.clone(), &[], None, &gt.transform, 0, a.flags.tolerance);
                        e.runtimes.detect_ms = start.elapsed().as_secs_f64() * 1e3;
                        evals.push(e);
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                let mut e = PairEval::new(
                    name.clone(),
                    &m.file.lines,
                    m.file.transform.as_ref(),
                    &gt.transform,
                    m.keypoints_a.len(),
                    a.flags.tolerance,
                );
                e.repeatability = repeatability(
                    &m.keypoints_a,
                    &m.keypoints_b,
                    &gt.transform,
                    a.repeat_radius,
                    (pair.img_b.width(), pair.img_b.height()),
                );
                e.runtimes = m.timings;
                e
            }
        };
        if eval.repeatability.is_none() && a.matches.is_some() {
            let (pa, pb) = image_paths(&a.pairs, name);
            if pa.is_file() && pb.is_file() {
                let (ia, ib) = (load_gray(&pa)?, load_gray(&pb)?);
                let bank = a.flags.detect.bank()?;
                let det = |img: &GrayImage| -> Result<_, CliError> {
                    let bank = LogGaborBank::build(&bank, img.width(), img.height())?;
                    let maps = compute_pc_maps(img, &bank, !a.flags.detect.no_noise_comp)?;
                    Ok(detect_keypoints(&maps, &a.flags.detect.params()))
                };
                eval.repeatability = repeatability(&det(&ia)?, &det(&ib)?, &gt.transform, a.repeat_radius, (ib.width(), ib.height()));
            }
        }
        evals.push(eval);
    }
    let roc = match &a.manifest {
        Some(path) => {
            let manifest = read_manifest(path)?;
            let test = manifest.subset(Split::Test);
            let records = if test.is_empty() {
                manifest.records.iter().collect()
            } else {
                test
            };
            let scorer = scorer.as_deref().ok_or_else(|| CliError::Input("no descriptor".into()))?;
            if records.first().is_some_and(|r| r.size() != scorer.patch_size()) {
                return Err(CliError::Input("manifest patch size differs from the descriptor's".into()));
            }
            Some(RocReport::from_scores(&score_samples(&records, scorer)))
        }
        None => None,
    };
    let report = EvalReport::new(a.flags.tolerance, evals, roc);
    let json = with_suffix(&a.out, ".json");
    report.write_json(&json).map_err(io_err(&json))?;
    let csv = with_suffix(&a.out, ".csv");
    report.write_csv(&csv).map_err(io_err(&csv))?;
    let s = &report.summary;
    let mut err = std::io::stderr();
    let _ = writeln!(
        err,
        "{} pairs: median precision {:.3}, median inliers {}, translation ok {}/{}",
        s.pairs, s.median_precision, s.median_inliers, s.translation_ok, s.pairs
    );
    Ok(())
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Input("--threads must be at least 1".into()));
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Detect(a) => cmd_detect(a),
        Command::BuildDataset(a) => cmd_build_dataset(a),
        Command::Train(a) => cmd_train(a),
        Command::Match(a) => cmd_match(a),
        Command::Eval(a) => cmd_eval(a),
    }
}

/// Parses `args`, runs the command, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn viz_dimensions_and_lines() {
        let a = GrayImage::filled(40, 30, 0.2).unwrap();
        let b = GrayImage::filled(50, 45, 0.2).unwrap();
        let file = MatchFile {
            lines: vec![crate::matcher::MatchLine { ax: 5, ay: 10, bx: 7, by: 10, score: 1.0, inlier: true }],
            transform: None,
            counts: Default::default(),
        };
        let v = render_matches(&a, &b, &file).unwrap();
        assert_eq!((v.width(), v.height()), (90, 45));
        for x in 5..=47 {
            assert_eq!(v.get(x, 10), 1.0);
        }
        assert_eq!(v.get(30, 11), 0.2);
        assert_eq!(v.get(20, 40), 0.0);
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(main_with_args(["phasematch", "frobnicate"]), EXIT_USAGE);
        assert_eq!(main_with_args(["phasematch", "synth"]), EXIT_USAGE);
    }

    #[test]
    fn bad_ratios_exit_three() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("m.txt");
        let code = main_with_args([
            "phasematch".as_ref(),
            "build-dataset".as_ref(),
            "--pairs".as_ref(),
            dir.path().as_os_str(),
            "--ratios".as_ref(),
            "0.5,0.5,0.1".as_ref(),
            "--out".as_ref(),
            out.as_os_str(),
        ] as [&std::ffi::OsStr; 8]);
        assert_eq!(code, EXIT_INPUT);
    }
}
