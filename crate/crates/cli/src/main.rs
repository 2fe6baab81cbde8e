//! `grayanchor` command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical or
//! training failure.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use grayanchor::detect::{Amount, DetectorParams};
use grayanchor::eval::{self, BenchConfig, GpNetModel, Method, METHOD_IDS};
use grayanchor::gpnet::{self, Arch, InputMode, LossConfig, NetParams, TrainConfig};
use grayanchor::imageio::{self, DEFAULT_DARK_FRAC, DEFAULT_SAT_FRAC};
use grayanchor::synth::{self, Field, SceneDistribution};
use grayanchor::{Error, GraynessMap, LinearImage, Mask};
use image::{ImageBuffer, Luma};

#[derive(Parser, Debug)]
#[command(name = "grayanchor", version, about = "Illuminant estimation from gray pixels")]
struct Cli {
    /// Seed for every random choice (folds, training, synthesis).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads; falls back to GRAYANCHOR_THREADS, then all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Suppress progress output on stderr.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the estimated illuminant of one image as `er eg eb`.
    Estimate(EstimateArgs),
    /// Write a 16-bit grayness map of one image.
    Map(MapArgs),
    /// Evaluate a method over a dataset manifest and write the CSV report.
    Bench(BenchArgs),
    /// Train GPNet on a dataset manifest and write a checkpoint.
    Train(TrainArgs),
    /// Write a synthetic dataset with a manifest.
    Synth(SynthArgs),
}

#[derive(Args, Debug, Clone)]
struct ImageArgs {
    #[arg(long)]
    image: PathBuf,
    /// Manifest whose exclusion polygons apply to the image (matched by file name).
    #[arg(long)]
    mask_manifest: Option<PathBuf>,
    #[command(flatten)]
    levels: LevelArgs,
}

#[derive(Args, Debug, Clone, Copy)]
struct LevelArgs {
    #[arg(long, default_value_t = 0.0)]
    black_level: f64,
    #[arg(long, default_value_t = DEFAULT_DARK_FRAC)]
    dark_frac: f64,
    #[arg(long, default_value_t = DEFAULT_SAT_FRAC)]
    sat_frac: f64,
}

#[derive(Args, Debug, Clone)]
struct SelectArgs {
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(METHOD_IDS))]
    method: String,
    /// Number of gray pixels to keep (detectors), or the Top-K count at the
    /// reference area (gpnet).
    #[arg(long, conflicts_with = "frac")]
    k: Option<usize>,
    /// Fraction of valid pixels to keep (detectors only).
    #[arg(long)]
    frac: Option<f64>,
    /// Trained GPNet parameters.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    #[command(flatten)]
    image: ImageArgs,
    #[command(flatten)]
    select: SelectArgs,
}

#[derive(Args, Debug)]
struct MapArgs {
    #[command(flatten)]
    image: ImageArgs,
    #[arg(long, value_parser = ["gray-pixel-edge", "gray-pixel-std", "grayness-index", "gpnet"])]
    method: String,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Output PNG path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    select: SelectArgs,
    /// Cross-validation folds for gpnet without a checkpoint.
    #[arg(long, default_value_t = 3)]
    folds: usize,
    /// Report path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    levels: LevelArgs,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    levels: LevelArgs,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Args, Debug, Clone)]
struct TrainFlags {
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr0: f64,
    #[arg(long, default_value_t = 1e-3)]
    lr_peak: f64,
    /// Side of the square training patch.
    #[arg(long, default_value_t = 256)]
    resize: usize,
    /// Divide every layer width by this factor.
    #[arg(long, default_value_t = 1)]
    slim: usize,
    /// Feed raw RGB to every pathway instead of the constrained features.
    #[arg(long)]
    raw_input: bool,
    /// Top-K count at the reference area used when estimating.
    #[arg(long, default_value_t = 5000)]
    top_k: usize,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 160)]
    width: usize,
    #[arg(long, default_value_t = 160)]
    height: usize,
    #[arg(long, default_value_t = 4)]
    rows: usize,
    #[arg(long, default_value_t = 4)]
    cols: usize,
    #[arg(long, default_value_t = 0.125)]
    gray_fraction: f64,
    #[arg(long, default_value_t = 0.05)]
    texture: f64,
    /// Strength of a smooth illumination ramp; 0 gives uniform light.
    #[arg(long, default_value_t = 0.0)]
    field_strength: f64,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Lib(e.into())
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Lib(Error::Usage(_) | Error::Config(_) | Error::Split { .. }) => 1,
            Failure::Lib(e) if e.is_numerical() => 3,
            Failure::Lib(_) => 2,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => f.write_str(m),
            Failure::Lib(e) => write!(f, "{e}"),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("grayanchor: {f}");
            ExitCode::from(f.code())
        }
    }
}

fn run(cli: &Cli) -> CliResult<()> {
    init_threads(cli.threads)?;
    match &cli.command {
        Command::Estimate(a) => estimate(a),
        Command::Map(a) => map(a),
        Command::Bench(a) => bench(a, cli.seed),
        Command::Train(a) => train(a, cli.seed, cli.quiet),
        Command::Synth(a) => synthesize(a, cli.seed, cli.quiet),
    }
}

fn init_threads(flag: Option<usize>) -> CliResult<()> {
    let threads = match flag {
        Some(n) => Some(n),
        None => match std::env::var("GRAYANCHOR_THREADS") {
            Ok(v) => Some(
                v.trim()
                    .parse()
                    .map_err(|_| Failure::Usage(format!("GRAYANCHOR_THREADS={v:?} is not a thread count")))?,
            ),
            Err(_) => None,
        },
    };
    if let Some(n) = threads {
        if n == 0 {
            return Err(Failure::Usage("thread count must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(e.to_string()))?;
    }
    Ok(())
}

fn load_image_and_mask(a: &ImageArgs) -> CliResult<(LinearImage, Mask)> {
    let img = imageio::load_image(&a.image, a.levels.black_level)?;
    let polygons = match &a.mask_manifest {
        None => Vec::new(),
        Some(m) => {
            let data = imageio::load_manifest(m)?;
            let name = a.image.file_name();
            data.entries
                .iter()
                .find(|e| Path::new(&e.image_path).file_name() == name)
                .map(|e| e.polygons.clone())
                .ok_or_else(|| {
                    Failure::Lib(Error::Input(format!(
                        "{} is not listed in {}",
                        a.image.display(),
                        m.display()
                    )))
                })?
        }
    };
    let mask = imageio::valid_mask(&img, &polygons, a.levels.dark_frac, a.levels.sat_frac)?;
    Ok((img, mask))
}

fn load_checkpoint(path: Option<&PathBuf>) -> CliResult<NetParams> {
    let path = path.ok_or_else(|| Failure::Usage("gpnet needs --checkpoint".into()))?;
    Ok(gpnet::load_params(path, None)?)
}

/// Library method for `id` with the selection flags applied. `gpnet` uses the
/// checkpoint when one is given and is otherwise trained per fold.
fn build_method(s: &SelectArgs, train: Option<(&TrainFlags, &LevelArgs, u64)>) -> CliResult<Method> {
    let mut method = Method::from_id(&s.method)?;
    match &mut method {
        Method::Minkowski { .. } => {
            if s.k.is_some() || s.frac.is_some() || s.checkpoint.is_some() {
                return Err(Failure::Usage(format!("--k, --frac and --checkpoint do not apply to {}", s.method)));
            }
        }
        Method::Detector { amount, .. } => {
            if s.checkpoint.is_some() {
                return Err(Failure::Usage(format!("--checkpoint does not apply to {}", s.method)));
            }
            if let Some(k) = s.k {
                *amount = Amount::TopK(k);
            }
            if let Some(f) = s.frac {
                if !(f > 0.0 && f <= 1.0) {
                    return Err(Failure::Usage(format!("--frac {f} must lie in (0, 1]")));
                }
                *amount = Amount::TopFrac(f);
            }
        }
        Method::GpNet { k_ref, model } => {
            if s.frac.is_some() {
                return Err(Failure::Usage("gpnet takes --k, not --frac".into()));
            }
            match (&s.checkpoint, train) {
                (Some(c), _) => *model = GpNetModel::Trained(load_checkpoint(Some(c))?),
                (None, Some((flags, levels, seed))) => {
                    *model = GpNetModel::Learn {
                        train: train_config(flags, levels)?,
                        loss: LossConfig::default(),
                        seed,
                    }
                }
                (None, None) => return Err(Failure::Usage("gpnet needs --checkpoint".into())),
            }
            *k_ref = s.k.or(train.map(|t| t.0.top_k)).unwrap_or(*k_ref);
        }
    }
    Ok(method)
}

fn estimate(a: &EstimateArgs) -> CliResult<()> {
    let method = build_method(&a.select, None)?;
    let (img, mask) = load_image_and_mask(&a.image)?;
    let e = method.estimate(&img, &mask)?;
    let [r, g, b] = e.rgb();
    println!("{r:.6} {g:.6} {b:.6}");
    Ok(())
}

fn map(a: &MapArgs) -> CliResult<()> {
    let (img, mask) = load_image_and_mask(&a.image)?;
    let map = if a.method == "gpnet" {
        gpnet::gpnet_grayness(&img, &load_checkpoint(a.checkpoint.as_ref())?, &mask)?
    } else {
        if a.checkpoint.is_some() {
            return Err(Failure::Usage(format!("--checkpoint does not apply to {}", a.method)));
        }
        match Method::from_id(&a.method)? {
            Method::Detector { detector, .. } => detector.grayness(&img, &mask, &DetectorParams::default())?,
            _ => unreachable!("map methods are detectors"),
        }
    };
    let scale = write_map_png(&map, &a.out)?;
    println!("scale {scale:.6}");
    Ok(())
}

/// Writes `map / scale` as 16-bit gray, where `scale` is the 99th percentile
/// of the valid values. Values above the scale and excluded pixels saturate.
fn write_map_png(map: &GraynessMap, path: &Path) -> CliResult<f64> {
    let mut valid: Vec<f64> = map.values().iter().copied().filter(|v| v.is_finite()).collect();
    if valid.is_empty() {
        return Err(Failure::Lib(Error::Detector("grayness map has no valid pixels")));
    }
    valid.sort_by(f64::total_cmp);
    let p99 = eval::quantile(&valid, 0.99);
    let scale = if p99 > 0.0 { p99 } else { 1.0 };
    let raw: Vec<u16> = map
        .values()
        .iter()
        .map(|&v| {
            if v.is_finite() {
                (v / scale * 65535.0).round().clamp(0.0, 65535.0) as u16
            } else {
                u16::MAX
            }
        })
        .collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(map.width() as u32, map.height() as u32, raw).expect("buffer size matches");
    buf.save(path).map_err(|e| {
        Failure::Lib(Error::Decode {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    })?;
    Ok(scale)
}

fn train_config(flags: &TrainFlags, levels: &LevelArgs) -> CliResult<TrainConfig> {
    if flags.slim == 0 {
        return Err(Failure::Usage("--slim must be at least 1".into()));
    }
    let mode = if flags.raw_input {
        InputMode::Raw
    } else {
        InputMode::Constrained
    };
    let cfg = TrainConfig {
        arch: Arch::slimmed(flags.slim).with_mode(mode),
        lr0: flags.lr0,
        lr_peak: flags.lr_peak,
        epochs: flags.epochs,
        batch_size: flags.batch_size,
        resize: flags.resize,
        top_k: flags.top_k,
        black_level: levels.black_level,
        dark_frac: levels.dark_frac,
        sat_frac: levels.sat_frac,
        ..Default::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

fn bench(a: &BenchArgs, seed: u64) -> CliResult<()> {
    let method = build_method(&a.select, Some((&a.train, &a.levels, seed)))?;
    let data = imageio::load_manifest(&a.manifest)?;
    let folds = if method.is_learned() {
        Some(eval::kfold(&data, a.folds, seed)?)
    } else {
        None
    };
    let cfg = BenchConfig {
        black_level: a.levels.black_level,
        dark_frac: a.levels.dark_frac,
        sat_frac: a.levels.sat_frac,
    };
    let report = eval::run_benchmark(&data, &method, folds.as_ref(), &cfg)?;
    let csv = report.to_csv();
    match &a.out {
        Some(p) => std::fs::write(p, csv)?,
        None => std::io::stdout().write_all(csv.as_bytes())?,
    }
    Ok(())
}

fn train(a: &TrainArgs, seed: u64, quiet: bool) -> CliResult<()> {
    let cfg = train_config(&a.train, &a.levels)?;
    let data = imageio::load_manifest(&a.manifest)?;
    let samples = gpnet::train::load_samples(&data, &cfg)?;
    let outcome = gpnet::train_samples(&samples, &cfg, &LossConfig::default(), seed, None, |epoch, loss| {
        if !quiet {
            eprintln!("epoch {:>4}/{} loss {loss:.6}", epoch + 1, cfg.epochs);
        }
    })?;
    gpnet::save_params(&a.out, &outcome.params)?;
    Ok(())
}

fn synthesize(a: &SynthArgs, seed: u64, quiet: bool) -> CliResult<()> {
    let field = if a.field_strength == 0.0 {
        Field::Uniform
    } else {
        Field::Smooth {
            strength: a.field_strength,
        }
    };
    let dist = SceneDistribution {
        width: a.width,
        height: a.height,
        rows: a.rows,
        cols: a.cols,
        gray_fraction: a.gray_fraction,
        texture: a.texture,
        field,
        noise_std: a.noise,
    };
    let data = synth::make_dataset(a.n, &dist, seed, &a.out)?;
    if !quiet {
        eprintln!("wrote {} scenes to {}", data.len(), a.out.display());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_error_kind() {
        assert_eq!(Failure::Usage("x".into()).code(), 1);
        assert_eq!(Failure::Lib(Error::Config("x".into())).code(), 1);
        assert_eq!(Failure::Lib(Error::Input("x".into())).code(), 2);
        assert_eq!(Failure::Lib(Error::Training { step: 3, loss: f64::NAN }).code(), 3);
        assert_eq!(Failure::Lib(Error::Selection { needed: 1, available: 0 }).code(), 3);
    }

    #[test]
    fn parses_every_subcommand() {
        for argv in [
            "grayanchor estimate --method gray-world --image a.png",
            "grayanchor map --method grayness-index --image a.png --out m.png",
            "grayanchor bench --manifest m.csv --method gpnet --folds 3 --epochs 2",
            "grayanchor --seed 4 train --manifest m.csv --out c.bin --slim 4",
            "grayanchor synth --n 3 --out d --quiet",
        ] {
            assert!(Cli::try_parse_from(argv.split(' ')).is_ok(), "{argv}");
        }
        assert!(Cli::try_parse_from(["grayanchor", "estimate", "--method", "nope", "--image", "a"]).is_err());
        assert!(Cli::try_parse_from(["grayanchor", "estimate", "--method", "gray-world", "--image", "a", "--k", "3", "--frac", "0.1"]).is_err());
        assert!(Cli::try_parse_from(["grayanchor", "synth", "--n", "1", "--out", "d", "--bogus"]).is_err());
    }

    #[test]
    fn detector_amount_flags() {
        let s = SelectArgs {
            method: "gray-pixel-std".into(),
            k: Some(7),
            frac: None,
            checkpoint: None,
        };
        match build_method(&s, None).unwrap() {
            Method::Detector { amount, .. } => assert_eq!(amount, Amount::TopK(7)),
            m => panic!("{m:?}"),
        }
        let s = SelectArgs {
            method: "gray-world".into(),
            k: Some(7),
            ..s
        };
        assert!(matches!(build_method(&s, None), Err(Failure::Usage(_))));
    }
}
