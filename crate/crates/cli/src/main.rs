use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};

use mchsr::colorspace::{clamp_to_srgb_tensor, linear_to_srgb_tensor};
use mchsr::compositor::{compose_final, validate};
use mchsr::data::SppPair;
use mchsr::data::{
    dataset_root, generate_dataset, load_layer_dir, load_rgb, nearest_downsample, parse_bin_edges, pixel_histogram,
    read_pfm, write_pfm, DatasetManifest, Split, SynthConfig, GROUND_TRUTH_SPP,
};
use mchsr::gradcheck::run_suite;
use mchsr::harness::{default_eval_pair, evaluate, infer, train, with_env_threads, TrainConfig};
use mchsr::network::load_checkpoint;
use mchsr::objective::MetricPreset;
use mchsr::{Error, NetworkConfig, Tensor};

#[derive(Parser)]
#[command(
    name = "mchsr",
    version,
    about = "Super-resolution of Monte Carlo renders from paired low-resolution and low-sample inputs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network on the train split, selecting the best epoch on val.
    Train(TrainArgs),
    /// Super-resolve one view from its LRHS and HRLS layer directories.
    Infer(InferArgs),
    /// Per-image and mean RelMSE / PSNR of a checkpoint on a split.
    Eval(EvalArgs),
    /// Compose the final image from a directory of render layers.
    Composite(CompositeArgs),
    /// Nearest-neighbour (top-left) downsampling of a PFM image.
    Downsample(DownsampleArgs),
    /// Convert a scene-linear PFM to sRGB; an 8-bit PNG preview is written next to it.
    Tosrgb(TosrgbArgs),
    /// Pixel-value histogram of the ground-truth renders in a manifest.
    Stats(StatsArgs),
    /// Finite-difference gradient checks of every layer and a micro network.
    Gradcheck(GradcheckArgs),
    /// Write a small procedural dataset with a manifest.
    Synth(SynthArgs),
}

#[derive(clap::Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_parser = parse_scale)]
    scale: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 500)]
    epochs: u64,
    #[arg(long, default_value_t = 16)]
    batch: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 0.1)]
    beta: f64,
    #[arg(long, default_value_t = 64)]
    feat: usize,
    #[arg(long, default_value_t = 3)]
    groups: usize,
    #[arg(long, default_value_t = 5)]
    blocks: usize,
    #[arg(long)]
    out: PathBuf,
    /// Stop after this many optimizer steps in total.
    #[arg(long)]
    steps: Option<u64>,
    /// HR patch side (default 96 / 128 / 256 for x2 / x4 / x8).
    #[arg(long)]
    patch: Option<usize>,
    /// Side of the pre-cropped tiles.
    #[arg(long, default_value_t = 300)]
    tile: usize,
    /// Validation spp pair as "LRHS,HRLS" (default scale^2 and 1).
    #[arg(long, value_parser = parse_pair)]
    val_spp: Option<(u32, u32)>,
    /// Replace the HRLS variance layer by this constant.
    #[arg(long)]
    variance_const: Option<f32>,
    /// Continue the run stored in --out.
    #[arg(long)]
    resume: bool,
}

#[derive(clap::Args)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    lrhs: PathBuf,
    #[arg(long)]
    hrls: PathBuf,
    #[arg(long)]
    variance_const: Option<f32>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Bcr,
    Gharbi,
}

impl From<PresetArg> for MetricPreset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Bcr => MetricPreset::Bcr,
            PresetArg::Gharbi => MetricPreset::Gharbi,
        }
    }
}

#[derive(clap::Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
    #[arg(long, value_enum)]
    preset: PresetArg,
    #[arg(long)]
    out: PathBuf,
    /// Input spp pair as "LRHS,HRLS" (default scale^2 and 1).
    #[arg(long, value_parser = parse_pair)]
    spp: Option<(u32, u32)>,
    #[arg(long)]
    variance_const: Option<f32>,
}

#[derive(clap::Args)]
struct CompositeArgs {
    #[arg(long)]
    layers: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Only report problems with the layer set; nothing is written.
    #[arg(long)]
    validate_only: bool,
}

#[derive(clap::Args)]
struct DownsampleArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    scale: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum RuleArg {
    Eq3,
    Clamp,
}

#[derive(clap::Args)]
struct TosrgbArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, value_enum)]
    rule: RuleArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct StatsArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "0,1,2,...,200")]
    bins: String,
    /// Restrict to one split.
    #[arg(long)]
    split: Option<Split>,
    /// Spp level to read (default: ground truth).
    #[arg(long, default_value_t = GROUND_TRUTH_SPP)]
    spp: u32,
}

#[derive(clap::Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(clap::Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 12)]
    train: usize,
    #[arg(long, default_value_t = 2)]
    val: usize,
    #[arg(long, default_value_t = 2)]
    test: usize,
    /// Image side in pixels.
    #[arg(long, default_value_t = 48)]
    size: usize,
    #[arg(long, default_value_t = 0.5)]
    noise: f64,
    #[arg(long, default_value_t = 0.4)]
    texture: f64,
}

fn parse_scale(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(v @ (2 | 4 | 8)) => Ok(v),
        _ => Err(format!("scale must be 2, 4 or 8, got \"{s}\"")),
    }
}

fn parse_pair(s: &str) -> Result<(u32, u32), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected \"LRHS,HRLS\", got \"{s}\""))?;
    let p = |t: &str| t.trim().parse::<u32>().map_err(|_| format!("bad spp \"{t}\""));
    Ok((p(a)?, p(b)?))
}

fn run_train(a: TrainArgs) -> anyhow::Result<()> {
    let mut cfg = TrainConfig::new(&a.manifest, &a.out, a.scale, a.seed);
    cfg.net = NetworkConfig {
        scale: a.scale,
        feat_ch: a.feat,
        groups: a.groups,
        blocks: a.blocks,
        ..NetworkConfig::default()
    };
    cfg.epochs = a.epochs;
    cfg.max_steps = a.steps;
    cfg.batch = a.batch;
    cfg.lr = a.lr;
    cfg.beta = a.beta;
    cfg.patch = a.patch;
    cfg.tile = a.tile;
    cfg.val_pair = a.val_spp;
    cfg.variance_const = a.variance_const;
    cfg.resume = a.resume;
    let s = train(&cfg)?;
    println!("steps {} epochs {}", s.steps, s.epochs_completed);
    if let (Some(first), Some(last)) = (s.first_loss, s.last_loss) {
        println!("loss {first:.6} -> {last:.6}");
    }
    if let (Some(v), Some(e)) = (s.best_val, s.best_epoch) {
        println!("best val RelMSE {v:.6} at epoch {e}");
    }
    match &s.best_checkpoint {
        Some(p) => println!("best checkpoint {}", p.display()),
        None => println!("no epoch completed, so no best checkpoint; last checkpoint {}", s.last_checkpoint.display()),
    }
    println!("log {}", s.log.display());
    Ok(())
}

fn run_infer(a: InferArgs) -> anyhow::Result<()> {
    let params = load_checkpoint(&a.checkpoint)?;
    let out = infer(&params, &a.lrhs, &a.hrls, a.variance_const)?;
    write_pfm(&a.out, &out)?;
    let s = out.shape();
    println!("wrote {}x{} image to {}", s.w, s.h, a.out.display());
    Ok(())
}

fn run_eval(a: EvalArgs) -> anyhow::Result<()> {
    let params = load_checkpoint(&a.checkpoint)?;
    let scale = params.config().scale;
    let pair = match a.spp {
        Some((l, h)) => SppPair::new(scale, l, h)?,
        None => default_eval_pair(scale)?,
    };
    let manifest = DatasetManifest::load(&a.manifest)?;
    let table =
        evaluate(&params, &manifest, &dataset_root(&a.manifest), a.split, a.preset.into(), pair, a.variance_const)?;
    std::fs::write(&a.out, table.to_csv()).with_context(|| format!("writing {}", a.out.display()))?;
    println!("{table}");
    Ok(())
}

fn run_composite(a: CompositeArgs) -> anyhow::Result<()> {
    let layers = load_layer_dir(&a.layers)?;
    let report = validate(&layers);
    print!("{report}");
    if report.has_errors() {
        bail!(Error::Data(format!("layer set in {} is not composable", a.layers.display())));
    }
    if a.validate_only {
        return Ok(());
    }
    let Some(out) = a.out else {
        bail!(Error::Usage("--out is required unless --validate-only is given".into()));
    };
    write_pfm(&out, &compose_final(&layers)?)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn run_downsample(a: DownsampleArgs) -> anyhow::Result<()> {
    let img = read_pfm(&a.input)?;
    write_pfm(&a.out, &nearest_downsample(&img, a.scale)?)?;
    Ok(())
}

/// 8-bit preview of a display-referred image, values clamped to `[0, 1]`.
fn write_preview(path: &Path, img: &Tensor<f32>) -> anyhow::Result<()> {
    let s = img.shape();
    let q = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let (w, h) = (s.w as u32, s.h as u32);
    let res = match s.c {
        1 => image::GrayImage::from_fn(w, h, |x, y| image::Luma([q(img.at(0, 0, y as usize, x as usize))])).save(path),
        3 => image::RgbImage::from_fn(w, h, |x, y| {
            image::Rgb([0, 1, 2].map(|c| q(img.at(0, c, y as usize, x as usize))))
        })
        .save(path),
        c => bail!(Error::Usage(format!("cannot preview a {c}-channel image"))),
    };
    res.with_context(|| format!("writing {}", path.display()))
}

fn run_tosrgb(a: TosrgbArgs) -> anyhow::Result<()> {
    let img = read_pfm(&a.input)?;
    let out = match a.rule {
        RuleArg::Eq3 => linear_to_srgb_tensor(&img),
        RuleArg::Clamp => clamp_to_srgb_tensor(&img),
    };
    write_pfm(&a.out, &out)?;
    let preview = a.out.with_extension("png");
    write_preview(&preview, &out)?;
    println!("wrote {} and {}", a.out.display(), preview.display());
    Ok(())
}

fn run_stats(a: StatsArgs) -> anyhow::Result<()> {
    let edges = parse_bin_edges(&a.bins)?;
    let manifest = DatasetManifest::load(&a.manifest)?;
    let root = dataset_root(&a.manifest);
    let mut imgs = Vec::new();
    for e in &manifest.entries {
        if a.split.is_some_and(|s| s != e.split) {
            continue;
        }
        imgs.push(load_rgb(&e.spp_dir(&root, a.spp)?)?);
    }
    let refs: Vec<&Tensor<f32>> = imgs.iter().collect();
    let h = pixel_histogram(&refs, &edges)?;
    println!("lo,hi,count");
    for (i, c) in h.counts.iter().enumerate() {
        println!("{},{},{}", h.edges[i], h.edges[i + 1], c);
    }
    println!("# images {} values {}", imgs.len(), h.total);
    println!("# underflow {} overflow {} nonfinite {}", h.underflow, h.overflow, h.nonfinite);
    println!("# fraction in [0, 10]: {:.6}", h.fraction_0_10);
    Ok(())
}

fn run_gradcheck(a: GradcheckArgs) -> anyhow::Result<bool> {
    let report = run_suite(a.seed)?;
    print!("{report}");
    let ok = report.passed();
    println!("{}", if ok { "gradcheck passed" } else { "gradcheck FAILED" });
    Ok(ok)
}

fn run_synth(a: SynthArgs) -> anyhow::Result<()> {
    let cfg = SynthConfig {
        seed: a.seed,
        width: a.size,
        height: a.size,
        train: a.train,
        val: a.val,
        test: a.test,
        noise: a.noise,
        texture: a.texture,
        ..SynthConfig::default()
    };
    let manifest = generate_dataset(&a.out, &cfg)?;
    println!("wrote {} images and {}", manifest.entries.len(), a.out.join(mchsr::data::MANIFEST_FILE).display());
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Train(a) => run_train(a),
        Command::Infer(a) => run_infer(a),
        Command::Eval(a) => run_eval(a),
        Command::Composite(a) => run_composite(a),
        Command::Downsample(a) => run_downsample(a),
        Command::Tosrgb(a) => run_tosrgb(a),
        Command::Stats(a) => run_stats(a),
        Command::Gradcheck(a) => return run_gradcheck(a),
        Command::Synth(a) => run_synth(a),
    }
    .map(|()| true)
}

/// Usage and configuration problems exit with 2, everything else with 1.
fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::Usage(_) | Error::Config(_)) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match with_env_threads(move || run(cli)).map_err(anyhow::Error::from).and_then(|r| r) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
