use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use chroma_core::autodiff::gradcheck::DEFAULT_TOLERANCE;
use chroma_core::colorspace::RgbImage;
use chroma_core::dataset::{self, Corpus};
use chroma_core::inference::{self, GanColorizer};
use chroma_core::training::{self, Checkpoint, Mode, NetworkGradCheck, TrainConfig, Trainer};
use clap::{Args, Parser, Subcommand};
use log::info;

#[derive(Parser)]
#[command(name = "chroma", version, about = "Grayscale-to-color GAN colorization in CIELAB space")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Crop and resize a folder of images into a training-ready set.
    Prepare(PrepareArgs),
    /// Train the two per-channel GANs.
    Train(TrainArgs),
    /// Colorize one image with a trained checkpoint.
    Colorize(ColorizeArgs),
    /// Score a checkpoint on a prepared test folder.
    Evaluate(EvaluateArgs),
    /// Compare analytic and finite-difference gradients on tiny networks.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct PrepareArgs {
    #[arg(long)]
    input: PathBuf,
    /// Lines of `relative/path [x y w h]`.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = dataset::DEFAULT_TARGET_SIZE)]
    size: usize,
    /// Fraction for `out/train`; the rest goes to `out/test`.
    #[arg(long)]
    split: Option<f64>,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// `key = value` settings; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    size: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    momentum: Option<String>,
    #[arg(long)]
    batch: Option<String>,
    #[arg(long = "w-adv")]
    w_adv: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    width: Option<String>,
    #[arg(long = "batch-norm")]
    batch_norm: Option<String>,
    /// Continue from a checkpoint; only `--epochs` may change.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct ColorizeArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long = "z-seed", default_value_t = inference::DEFAULT_Z_SEED)]
    z_seed: u64,
    /// Number of noise draws; more than one writes `<out>_1.png`, ...
    #[arg(long, default_value_t = 1)]
    variants: usize,
    /// Must equal the size the checkpoint was trained at.
    #[arg(long)]
    size: Option<usize>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    grid: Option<PathBuf>,
    #[arg(long = "z-seed", default_value_t = inference::DEFAULT_Z_SEED)]
    z_seed: u64,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 16)]
    size: usize,
    #[arg(long, default_value_t = 4)]
    width: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Coordinates sampled per loss.
    #[arg(long, default_value_t = 200)]
    coords: usize,
    #[arg(long, default_value = "makeup")]
    mode: String,
    #[arg(long, hide = true)]
    inject_bug: bool,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<chroma_core::Error> for Failure {
    fn from(e: chroma_core::Error) -> Self {
        match e {
            chroma_core::Error::Config { .. } => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let result = match cli.command {
        Command::Prepare(a) => prepare(a),
        Command::Train(a) => train(a),
        Command::Colorize(a) => colorize(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Gradcheck(a) => gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("run `chroma --help` for usage");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn require_dir(path: &Path, flag: &str) -> CmdResult {
    if path.is_dir() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("{flag} {} is not a directory", path.display())))
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

fn prepare(a: PrepareArgs) -> CmdResult {
    require_dir(&a.input, "--input")?;
    dataset::validate_image_size(a.size, "size")?;
    let crops = match &a.manifest {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Failure::Usage(format!("--manifest {}: {e}", p.display())))?;
            Some(dataset::parse_crop_manifest(&text)?)
        }
        None => None,
    };
    let scan = dataset::scan(&a.input, crops.as_ref())?;
    let manifest = scan.manifest.with_target_size(a.size)?;
    let jobs: Vec<(PathBuf, Vec<dataset::ManifestEntry>)> = match a.split {
        Some(frac) => {
            let (train, test) = dataset::split(&manifest.entries, frac, a.split_seed)?;
            vec![(a.out.join("train"), train), (a.out.join("test"), test)]
        }
        None => vec![(a.out.clone(), manifest.entries.clone())],
    };
    let (mut written, mut failed) = (0, 0);
    let mut parts = Vec::new();
    for (dir, entries) in &jobs {
        let report = dataset::prepare(&manifest, entries, dir)?;
        for (path, err) in &report.failed {
            eprintln!("failed: {}: {err}", path.display());
        }
        written += report.processed();
        failed += report.failed.len();
        parts.push(format!("{}={}", dir.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned()), report.processed()));
    }
    let mut line = format!("prepared={written} skipped={} failed={failed}", scan.skipped);
    if a.split.is_some() {
        line.push(' ');
        line.push_str(&parts.join(" "));
    }
    println!("{line}");
    if failed > 0 {
        return Err(Failure::Runtime(format!("{failed} file(s) could not be prepared")));
    }
    Ok(())
}

impl TrainArgs {
    /// Flag settings in config-file spelling.
    fn overrides(&self) -> Vec<(&'static str, &str)> {
        [
            ("mode", &self.mode),
            ("image_size", &self.size),
            ("epochs", &self.epochs),
            ("learning_rate", &self.lr),
            ("momentum", &self.momentum),
            ("batch_size", &self.batch),
            ("adversarial_weight", &self.w_adv),
            ("seed", &self.seed),
            ("base_width", &self.width),
            ("batch_norm", &self.batch_norm),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.as_deref().map(|v| (k, v)))
        .collect()
    }

    fn config(&self) -> Result<TrainConfig, Failure> {
        let mut cfg = TrainConfig::default();
        if let Some(p) = &self.config {
            let text = fs::read_to_string(p).map_err(|e| Failure::Usage(format!("--config {}: {e}", p.display())))?;
            for (k, v) in training::parse_key_values(&text)? {
                cfg.set(&k, &v)?;
            }
        }
        for (k, v) in self.overrides() {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn train(a: TrainArgs) -> CmdResult {
    let mut trainer = match &a.resume {
        Some(ckpt) => {
            if a.config.is_some() || a.overrides().iter().any(|(k, _)| *k != "epochs") {
                return Err(Failure::Usage("only --epochs may be given together with --resume".into()));
            }
            let mut t = Checkpoint::load(ckpt)?.into_trainer()?;
            if let Some(e) = &a.epochs {
                t.config.set("epochs", e)?;
                t.config.validate()?;
            }
            info!("resuming after epoch {} (step {})", t.epoch, t.step);
            t
        }
        None => Trainer::new(a.config()?)?,
    };
    require_dir(&a.data, "--data")?;
    let corpus = Corpus::load(&a.data, trainer.config.image_size)?;
    info!(
        "training on {} images at {}x{}, {} epochs, mode {}",
        corpus.len(),
        trainer.config.image_size,
        trainer.config.image_size,
        trainer.config.epochs,
        trainer.config.mode
    );
    trainer.fit(&corpus, &a.out)?;
    println!(
        "epochs={} steps={} checkpoint={}",
        trainer.epoch,
        trainer.step,
        training::checkpoint_path(&a.out, trainer.epoch).display()
    );
    Ok(())
}

fn colorize(a: ColorizeArgs) -> CmdResult {
    if a.variants == 0 {
        return Err(Failure::Usage("--variants must be at least 1".into()));
    }
    let colorizer = GanColorizer::load(&a.ckpt, a.size).map_err(|e| match e {
        chroma_core::Error::Config { .. } => Failure::Runtime(e.to_string()),
        other => other.into(),
    })?;
    let input = RgbImage::from_rgb8(&dataset::load_rgb8(&a.input)?);
    let seeds = inference::variant_seeds(a.z_seed, a.variants);
    for (k, seed) in seeds.iter().enumerate() {
        let result = inference::colorize(&colorizer, &input, *seed, None)?;
        let path = if a.variants == 1 {
            a.out.clone()
        } else {
            inference::variant_path(&a.out, k + 1)
        };
        result.output.save_png(&path)?;
        println!("{}", path.display());
    }
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> CmdResult {
    let colorizer = GanColorizer::load(&a.ckpt, None)?;
    let corpus = Corpus::load(&a.data, inference::Colorizer::image_size(&colorizer))?;
    let report = inference::evaluate(&colorizer, &corpus.examples, a.z_seed)?;
    fs::write(&a.report, report.to_csv()).map_err(|e| io_failure(&a.report, e))?;
    if let Some(grid) = &a.grid {
        let (w, h) = inference::emit_grid(&report.grid_items(), grid)?;
        info!("wrote {}x{} grid to {}", w, h, grid.display());
    }
    println!("{}", report.summary_line());
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> CmdResult {
    let mode: Mode = a.mode.parse()?;
    let check = NetworkGradCheck {
        image_size: a.size,
        base_width: a.width,
        seed: a.seed,
        mode,
        coords: a.coords,
        gradient_scale: if a.inject_bug { 1.5 } else { 1.0 },
        ..NetworkGradCheck::default()
    };
    let start = Instant::now();
    let report = check.run()?;
    info!("checked {} coordinates in {:.2?}", report.checked, start.elapsed());
    println!("max_rel_err={:e}", report.max_rel_err);
    if report.passes(DEFAULT_TOLERANCE) {
        Ok(())
    } else {
        Err(Failure::Runtime(format!(
            "gradient check failed (tolerance {DEFAULT_TOLERANCE:e}): worst coordinate {:?}, analytic {:e}, numeric {:e}",
            report.worst_index, report.worst_analytic, report.worst_numeric
        )))
    }
}
