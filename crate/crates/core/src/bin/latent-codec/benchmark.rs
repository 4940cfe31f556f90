//! `benchmark`: every manifest entry through every (layout, mode) cell, plus
//! externally produced reference reconstructions, as one CSV.
//!
//! Manifest (JSON, paths relative to the manifest's directory):
//!
//! ```json
//! {
//!   "tile_size": 256,
//!   "layouts": [
//!     { "name": "sd15-like", "model": "sd15.pca", "codebook": "sd15.kcb", "int8": "sd15.i8r" }
//!   ],
//!   "modes": ["raw", "int8", "kmeans"],
//!   "entries": [
//!     {
//!       "image": "tile0.png",
//!       "embedding": "tile0.eef",
//!       "reconstruction_embeddings": { "sd15-like/kmeans": "tile0.sd15.kmeans.eef" },
//!       "references": [
//!         { "label": "jpeg-75", "image": "tile0.q75.png", "bytes": 10240, "embedding": "tile0.q75.eef" }
//!       ]
//!     }
//!   ]
//! }
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, Context, Result};
use clap::Args;
use latent_codec::container::DEFAULT_TILE_SIZE;
use latent_codec::metrics::{embed_cosine, embed_l1, format_db, psnr, ssim};
use latent_codec::{compress_image, decompress_image, Dictionary, EmbeddingVector, ImageBuffer, LinearCodecModel, QuantMode};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{load_dictionary, load_image, load_model, usage};

pub const THREADS_ENV: &str = "LATENT_CODEC_THREADS";

#[derive(Args)]
pub struct BenchmarkArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Worker threads; LATENT_CODEC_THREADS takes precedence when set.
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    #[serde(default = "default_tile_size")]
    tile_size: usize,
    #[serde(default)]
    layouts: Vec<LayoutSpec>,
    #[serde(default)]
    modes: Vec<String>,
    entries: Vec<EntrySpec>,
}

fn default_tile_size() -> usize {
    DEFAULT_TILE_SIZE
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LayoutSpec {
    name: String,
    model: PathBuf,
    codebook: Option<PathBuf>,
    int8: Option<PathBuf>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EntrySpec {
    image: PathBuf,
    embedding: Option<PathBuf>,
    #[serde(default)]
    reconstruction_embeddings: BTreeMap<String, PathBuf>,
    #[serde(default)]
    references: Vec<ReferenceSpec>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ReferenceSpec {
    label: String,
    image: PathBuf,
    bytes: usize,
    embedding: Option<PathBuf>,
}

#[derive(Serialize, Default)]
struct Row {
    entry: usize,
    image: String,
    layout: String,
    mode: String,
    payload_bytes: Option<usize>,
    total_bytes: Option<usize>,
    psnr_db: Option<String>,
    ssim: Option<String>,
    embed_cosine: Option<String>,
    embed_l1: Option<String>,
    error: Option<String>,
}

/// A loaded resource, or the message describing why it could not be loaded.
type Loaded<T> = std::result::Result<Arc<T>, String>;

fn load<T>(f: impl FnOnce() -> Result<T>) -> Loaded<T> {
    f().map(Arc::new).map_err(|e| format!("{e:#}"))
}

struct LayoutRes {
    name: String,
    model: Loaded<LinearCodecModel>,
    codebook: Option<Loaded<Dictionary>>,
    int8: Option<Loaded<Dictionary>>,
}

enum Cell<'a> {
    Codec { layout: &'a LayoutRes, mode: QuantMode },
    Reference(&'a ReferenceSpec),
}

struct Job<'a> {
    entry: usize,
    spec: &'a EntrySpec,
    cell: Cell<'a>,
}

fn threads(flag: usize) -> Result<usize> {
    let n = match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| usage(format!("{THREADS_ENV}={v:?} is not a thread count")))?,
        Err(_) => flag,
    };
    if n == 0 {
        return Err(usage("thread count must be at least 1"));
    }
    Ok(n)
}

pub fn run(args: BenchmarkArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.manifest).with_context(|| format!("reading {}", args.manifest.display()))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| usage(format!("manifest {}: {e}", args.manifest.display())))?;
    let modes = manifest
        .modes
        .iter()
        .map(|m| QuantMode::from_label(m).ok_or_else(|| usage(format!("unknown mode {m:?} in manifest"))))
        .collect::<Result<Vec<_>>>()?;
    let has_references = manifest.entries.iter().any(|e| !e.references.is_empty());
    if (manifest.layouts.is_empty() || modes.is_empty()) && !has_references {
        return Err(usage("empty mode matrix: manifest needs at least one layout and one mode"));
    }
    if manifest.entries.is_empty() {
        return Err(usage("manifest lists no entries"));
    }
    let base = args.manifest.parent().unwrap_or(Path::new(".")).to_path_buf();
    let resolve = |p: &Path| base.join(p);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads(args.threads)?)
        .build()
        .map_err(|e| anyhow!("thread pool: {e}"))?;

    let layouts: Vec<LayoutRes> = pool.install(|| {
        manifest
            .layouts
            .par_iter()
            .map(|l| LayoutRes {
                name: l.name.clone(),
                model: load(|| load_model(&resolve(&l.model))),
                codebook: l.codebook.as_ref().map(|p| load(|| load_dictionary(&resolve(p)))),
                int8: l.int8.as_ref().map(|p| load(|| load_dictionary(&resolve(p)))),
            })
            .collect()
    });

    let mut jobs = Vec::new();
    for (entry, spec) in manifest.entries.iter().enumerate() {
        for layout in &layouts {
            for &mode in &modes {
                jobs.push(Job {
                    entry,
                    spec,
                    cell: Cell::Codec { layout, mode },
                });
            }
        }
        for r in &spec.references {
            jobs.push(Job {
                entry,
                spec,
                cell: Cell::Reference(r),
            });
        }
    }

    let originals: Vec<Loaded<ImageBuffer>> = pool.install(|| {
        manifest
            .entries
            .par_iter()
            .map(|e| load(|| load_image(&resolve(&e.image))))
            .collect()
    });
    let rows: Vec<Row> = pool.install(|| {
        jobs.par_iter()
            .map(|job| evaluate(job, &originals[job.entry], manifest.tile_size, &resolve))
            .collect()
    });

    let failures = rows.iter().filter(|r| r.error.is_some()).count();
    let mut writer = csv::Writer::from_path(&args.out).with_context(|| format!("writing {}", args.out.display()))?;
    for row in &rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    if failures > 0 {
        log::warn!("{failures} of {} rows failed; see the error column in {}", rows.len(), args.out.display());
        eprintln!("warning: {failures} of {} rows failed", rows.len());
    }
    println!("{} rows written to {}", rows.len(), args.out.display());
    Ok(())
}

fn evaluate(job: &Job, original: &Loaded<ImageBuffer>, tile_size: usize, resolve: &dyn Fn(&Path) -> PathBuf) -> Row {
    let (layout, mode, embed_key) = match &job.cell {
        Cell::Codec { layout, mode } => (
            layout.name.clone(),
            mode.label().to_string(),
            format!("{}/{}", layout.name, mode.label()),
        ),
        Cell::Reference(r) => ("reference".to_string(), r.label.clone(), r.label.clone()),
    };
    let mut row = Row {
        entry: job.entry,
        image: job.spec.image.display().to_string(),
        layout,
        mode,
        ..Row::default()
    };
    match measure(job, original, tile_size, resolve, &embed_key) {
        Ok(m) => {
            row.payload_bytes = Some(m.payload_bytes);
            row.total_bytes = Some(m.total_bytes);
            row.psnr_db = Some(if m.psnr.is_infinite() { format_db(m.psnr) } else { format!("{:.6}", m.psnr) });
            row.ssim = Some(format!("{:.6}", m.ssim));
            if let Some((cos, l1)) = m.embed {
                row.embed_cosine = Some(format!("{cos:.6}"));
                row.embed_l1 = Some(format!("{l1:.6}"));
            }
        }
        Err(e) => row.error = Some(e),
    }
    row
}

struct Measured {
    payload_bytes: usize,
    total_bytes: usize,
    psnr: f64,
    ssim: f64,
    embed: Option<(f64, f64)>,
}

fn measure(
    job: &Job,
    original: &Loaded<ImageBuffer>,
    tile_size: usize,
    resolve: &dyn Fn(&Path) -> PathBuf,
    embed_key: &str,
) -> std::result::Result<Measured, String> {
    let original = original.as_ref().map_err(Clone::clone)?;
    let fail = |e: anyhow::Error| format!("{e:#}");
    let (payload_bytes, total_bytes, reconstruction, embed_path) = match &job.cell {
        Cell::Codec { layout, mode } => {
            let model = layout.model.as_ref().map_err(Clone::clone)?;
            let dictionary = match mode {
                QuantMode::RawF32 => None,
                QuantMode::StaticInt8 => Some(pick(&layout.int8, "int8", &layout.name)?),
                QuantMode::Kmeans8 => Some(pick(&layout.codebook, "codebook", &layout.name)?),
            };
            let container = compress_image(original, model, *mode, dictionary.as_deref(), tile_size)
                .map_err(|e| fail(e.into()))?;
            let reconstruction = decompress_image(&container, model).map_err(|e| fail(e.into()))?;
            (
                container.payload_bytes(),
                container.total_bytes(),
                reconstruction,
                job.spec.reconstruction_embeddings.get(embed_key).cloned(),
            )
        }
        Cell::Reference(r) => {
            let reconstruction = load_image(&resolve(&r.image)).map_err(fail)?;
            (r.bytes, r.bytes, reconstruction, r.embedding.clone())
        }
    };
    let psnr = psnr(original, &reconstruction).map_err(|e| fail(e.into()))?;
    let ssim = ssim(original, &reconstruction).map_err(|e| fail(e.into()))?;
    let embed = match (&job.spec.embedding, embed_path) {
        (Some(a), Some(b)) => {
            let load_eef = |p: &Path| EmbeddingVector::load(resolve(p)).with_context(|| format!("loading {}", p.display()));
            let a = load_eef(a).map_err(fail)?;
            let b = load_eef(&b).map_err(fail)?;
            Some((
                embed_cosine(&a, &b).map_err(|e| fail(e.into()))?,
                embed_l1(&a, &b).map_err(|e| fail(e.into()))?,
            ))
        }
        _ => None,
    };
    Ok(Measured {
        payload_bytes,
        total_bytes,
        psnr,
        ssim,
        embed,
    })
}

fn pick(res: &Option<Loaded<Dictionary>>, what: &str, layout: &str) -> std::result::Result<Arc<Dictionary>, String> {
    match res {
        None => Err(format!("layout {layout} has no {what} file")),
        Some(r) => r.clone(),
    }
}
