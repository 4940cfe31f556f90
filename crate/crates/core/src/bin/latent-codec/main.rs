mod benchmark;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use latent_codec::container::DEFAULT_TILE_SIZE;
use latent_codec::pca::DEFAULT_MAX_PATCHES;
use latent_codec::quantizer::codebook::KCB_MAGIC;
use latent_codec::quantizer::int8::I8R_MAGIC;
use latent_codec::{
    build_report, calibrate_int8_range, compress_image, decompress_image, fit_codebook, fit_linear_codec, psnr,
    read_container, read_lif, write_container, Codebook, CodebookScope, CodecError, Dictionary, EmbeddingVector,
    ErrorKind, ImageBuffer, Int8Range, KMeansParams, LatentLayout, LatentTensor, LinearCodecModel, QuantMode,
};

#[derive(Parser)]
#[command(name = "latent-codec", version, about = "Latent-space codec for pathology image tiles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a patch-PCA codec on a directory of PNG/PPM images.
    FitPca(FitPcaArgs),
    /// Fit a K-means codebook on latents.
    FitCodebook(FitCodebookArgs),
    /// Derive a symmetric int8 range from latents.
    CalibrateInt8(CalibrateArgs),
    /// Encode an image into a PLC1 container.
    Compress(CompressArgs),
    /// Reconstruct an image from a PLC1 container.
    Decompress(DecompressArgs),
    /// Print a rate-distortion report as JSON.
    Report(ReportArgs),
    /// Run a manifest of images through a matrix of layouts and modes.
    Benchmark(benchmark::BenchmarkArgs),
}

#[derive(Args)]
struct FitPcaArgs {
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    factor: u32,
    #[arg(long)]
    channels: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_MAX_PATCHES)]
    max_patches: usize,
    /// Identifier stored in the model; defaults to the preset name for
    /// known shapes and `f{F}c{C}` otherwise.
    #[arg(long)]
    model_id: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

/// Where latent samples come from: LIF files, or images run through a model.
#[derive(Args)]
struct LatentSource {
    /// Glob matching LIF files.
    #[arg(long)]
    latents: Option<String>,
    /// Directory of images, encoded with `--model`.
    #[arg(long, requires = "model")]
    images: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScopeArg {
    Global,
    PerChannel,
}

#[derive(Args)]
struct FitCodebookArgs {
    #[command(flatten)]
    source: LatentSource,
    #[arg(long, default_value_t = 256)]
    k: usize,
    #[arg(long, value_enum, default_value_t = ScopeArg::Global)]
    scope: ScopeArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1 << 20)]
    max_samples: usize,
    #[arg(long, default_value_t = 100)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    rel_tol: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    source: LatentSource,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompressArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// raw, int8 or kmeans.
    #[arg(long, value_parser = parse_mode)]
    mode: QuantMode,
    /// KCB1 codebook (kmeans) or I8R1 range (int8).
    #[arg(long)]
    dict: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_TILE_SIZE)]
    tile_size: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DecompressArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Original image.
    #[arg(long)]
    original: PathBuf,
    /// PLC1 container of the original.
    #[arg(long)]
    container: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Reconstruction to score; decoded from the container when omitted.
    #[arg(long)]
    reconstruction: Option<PathBuf>,
    /// EEF embedding of the original.
    #[arg(long, requires = "embed_reconstruction")]
    embed_original: Option<PathBuf>,
    /// EEF embedding of the reconstruction.
    #[arg(long, requires = "embed_original")]
    embed_reconstruction: Option<PathBuf>,
    /// Write JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_mode(s: &str) -> std::result::Result<QuantMode, String> {
    QuantMode::from_label(s).ok_or_else(|| format!("unknown mode {s:?} (expected raw, int8 or kmeans)"))
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    CodecError::InvalidArgument(msg.into()).into()
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

pub(crate) fn load_model(path: &Path) -> Result<LinearCodecModel> {
    LinearCodecModel::from_bytes(&read(path)?).with_context(|| format!("loading model {}", path.display()))
}

/// Loads a KCB1 codebook or I8R1 range, telling them apart by magic.
pub(crate) fn load_dictionary(path: &Path) -> Result<Dictionary> {
    let bytes = read(path)?;
    let dict = if bytes.starts_with(KCB_MAGIC.as_bytes()) {
        Codebook::from_bytes(&bytes).map(Dictionary::Kmeans)
    } else if bytes.starts_with(I8R_MAGIC.as_bytes()) {
        Int8Range::from_bytes(&bytes).map(Dictionary::Int8)
    } else {
        let mut found = [0u8; 4];
        let n = bytes.len().min(4);
        found[..n].copy_from_slice(&bytes[..n]);
        Err(CodecError::BadMagic {
            expected: "KCB1 or I8R1",
            found,
        })
    };
    dict.with_context(|| format!("loading dictionary {}", path.display()))
}

pub(crate) fn load_image(path: &Path) -> Result<ImageBuffer> {
    ImageBuffer::load(path).with_context(|| format!("loading image {}", path.display()))
}

fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase());
        if matches!(ext.as_deref(), Some("png" | "ppm" | "pnm")) {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(usage(format!("no PNG or PPM images in {}", dir.display())));
    }
    Ok(files)
}

fn collect_latents(source: &LatentSource) -> Result<Vec<LatentTensor>> {
    let mut out = Vec::new();
    if let Some(pattern) = &source.latents {
        let mut paths = glob::glob(pattern)
            .map_err(|e| usage(format!("bad glob {pattern:?}: {e}")))?
            .collect::<std::result::Result<Vec<_>, _>>()?;
        paths.sort();
        if paths.is_empty() {
            return Err(usage(format!("no files match {pattern:?}")));
        }
        for p in paths {
            out.push(read_lif(&read(&p)?).with_context(|| format!("reading latent {}", p.display()))?);
        }
    }
    if let Some(dir) = &source.images {
        let model = load_model(source.model.as_deref().expect("clap enforces --model"))?;
        for p in image_files(dir)? {
            out.push(model.encode(&load_image(&p)?)?);
        }
    }
    if source.latents.is_none() && source.images.is_none() {
        return Err(usage("no latent source: pass --latents GLOB or --images DIR --model FILE"));
    }
    Ok(out)
}

fn fit_pca(args: FitPcaArgs) -> Result<()> {
    let model_id = match &args.model_id {
        Some(id) => id.clone(),
        None => ["sd15-like", "sd3-like", "dcae-like"]
            .into_iter()
            .filter_map(LatentLayout::preset)
            .find(|l| l.factor() == args.factor && l.channels() == args.channels)
            .map(|l| l.model_id().to_string())
            .unwrap_or_else(|| format!("f{}c{}", args.factor, args.channels)),
    };
    let layout = LatentLayout::new(args.factor, args.channels, model_id)?;
    if layout.channels() as usize > layout.patch_dim() {
        return Err(usage(format!(
            "{} channels exceed 3·{}² = {}",
            layout.channels(),
            layout.factor(),
            layout.patch_dim()
        )));
    }
    let images = image_files(&args.images)?
        .iter()
        .map(|p| load_image(p))
        .collect::<Result<Vec<_>>>()?;
    let model = fit_linear_codec(&images, layout, args.seed, args.max_patches)?;
    write(&args.out, &model.to_bytes()?)?;
    if let Some(stats) = model.train_stats() {
        println!(
            "layout {}: retained variance {:.6} over {} patches",
            model.layout(),
            stats.retained_variance_fraction,
            stats.sample_count
        );
    }
    Ok(())
}

fn fit_codebook_cmd(args: FitCodebookArgs) -> Result<()> {
    if args.k == 0 || args.k > 256 {
        return Err(usage(format!("--k must be in 1..=256, got {}", args.k)));
    }
    let latents = collect_latents(&args.source)?;
    let params = KMeansParams {
        k: args.k,
        scope: match args.scope {
            ScopeArg::Global => CodebookScope::Global,
            ScopeArg::PerChannel => CodebookScope::PerChannel,
        },
        seed: args.seed,
        max_samples: args.max_samples,
        max_iters: args.max_iters,
        rel_tol: args.rel_tol,
    };
    let fit = fit_codebook(&latents, &params)?;
    write(&args.out, &fit.codebook.to_bytes())?;
    for (unit, stats) in fit.units.iter().enumerate() {
        let first = stats.sse_history.first().copied().unwrap_or(0.0);
        println!(
            "unit {unit}: {} samples, {} centroids, {} iterations{}, sse {:.6e} -> {:.6e}",
            stats.samples,
            stats.distinct_centroids,
            stats.iterations,
            if stats.converged { "" } else { " (iteration cap)" },
            first,
            stats.final_sse()
        );
    }
    if fit.codebook.is_degenerate() {
        eprintln!("warning: fewer than 256 distinct centroids; unused slots repeat the largest value");
    }
    Ok(())
}

fn calibrate(args: CalibrateArgs) -> Result<()> {
    let latents = collect_latents(&args.source)?;
    let range = calibrate_int8_range(&latents)?;
    write(&args.out, &range.to_bytes())?;
    println!("int8 range [{}, {}], bin width {:.6e}", range.min(), range.max(), range.bin_width());
    Ok(())
}

fn compress(args: CompressArgs) -> Result<()> {
    let image = load_image(&args.input)?;
    let model = load_model(&args.model)?;
    let dictionary = match (args.mode, &args.dict) {
        (QuantMode::RawF32, None) => None,
        (QuantMode::RawF32, Some(_)) => return Err(usage("raw mode takes no --dict")),
        (_, None) => return Err(usage(format!("{} mode requires --dict", args.mode.label()))),
        (_, Some(p)) => Some(load_dictionary(p)?),
    };
    let container = compress_image(&image, &model, args.mode, dictionary.as_ref(), args.tile_size)?;
    write(&args.out, &write_container(&container)?)?;
    let reconstruction = decompress_image(&container, &model)?;
    println!(
        "payload {} B, total {} B, psnr {} dB",
        container.payload_bytes(),
        container.total_bytes(),
        latent_codec::metrics::format_db(psnr(&image, &reconstruction)?)
    );
    Ok(())
}

fn decompress(args: DecompressArgs) -> Result<()> {
    let container = read_container(&read(&args.input)?).with_context(|| format!("reading {}", args.input.display()))?;
    let model = load_model(&args.model)?;
    let image = decompress_image(&container, &model)?;
    image.save(&args.out).with_context(|| format!("writing {}", args.out.display()))?;
    Ok(())
}

fn report(args: ReportArgs) -> Result<()> {
    let original = load_image(&args.original)?;
    let container = read_container(&read(&args.container)?).with_context(|| format!("reading {}", args.container.display()))?;
    let reconstruction = match &args.reconstruction {
        Some(p) => load_image(p)?,
        None => decompress_image(&container, &load_model(&args.model)?)?,
    };
    let embeddings = match (&args.embed_original, &args.embed_reconstruction) {
        (Some(a), Some(b)) => Some((EmbeddingVector::load(a)?, EmbeddingVector::load(b)?)),
        _ => None,
    };
    let report = build_report(
        &original,
        &container,
        &reconstruction,
        embeddings.as_ref().map(|(a, b)| (a, b)),
    )?;
    let json = serde_json::to_string_pretty(&report)? + "\n";
    match &args.out {
        Some(p) => write(p, json.as_bytes())?,
        None => print!("{json}"),
    }
    Ok(())
}

/// Exit code for an error chain: the first codec error decides, plain I/O
/// failures are I/O, anything else is a format problem.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<CodecError>() {
            return e.kind().exit_code() as u8;
        }
        if cause.is::<std::io::Error>() {
            return ErrorKind::Io.exit_code() as u8;
        }
    }
    ErrorKind::Format.exit_code() as u8
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::FitPca(a) => fit_pca(a),
        Command::FitCodebook(a) => fit_codebook_cmd(a),
        Command::CalibrateInt8(a) => calibrate(a),
        Command::Compress(a) => compress(a),
        Command::Decompress(a) => decompress(a),
        Command::Report(a) => report(a),
        Command::Benchmark(a) => benchmark::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
