//! 256-entry scalar codebooks learned by K-means, and their standalone file format.
//!
//! ```text
//! "KCB1" | u8 scope (0 = global, 1 = per-channel) | u32 channels | u64 seed
//! units × 256 f32 LE   (units = 1 for global, channels for per-channel)
//! ```

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::lloyd;
use crate::error::{CodecError, Result};
use crate::latent::LatentTensor;
use crate::wire::Reader;

pub const CODEBOOK_SIZE: usize = 256;
pub const KCB_MAGIC: &str = "KCB1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CodebookScope {
    Global,
    PerChannel,
}

impl CodebookScope {
    pub fn code(self) -> u8 {
        match self {
            CodebookScope::Global => 0,
            CodebookScope::PerChannel => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(CodebookScope::Global),
            1 => Ok(CodebookScope::PerChannel),
            other => Err(CodecError::UnsupportedField(format!("codebook scope {other}"))),
        }
    }
}

/// Sorted 256-slot centroid tables, one per scope unit.
///
/// Each table is strictly ascending over its first `distinct` slots; any
/// remaining slots repeat the largest centroid, which marks the table
/// degenerate. Equality compares scope, channels and centroids only; the
/// fit seed and sample count are provenance.
#[derive(Debug, Clone)]
pub struct Codebook {
    scope: CodebookScope,
    channels: u32,
    tables: Vec<Vec<f32>>,
    distinct: Vec<usize>,
    // midpoints between consecutive distinct centroids
    boundaries: Vec<Vec<f64>>,
    seed: u64,
    source_count: Option<u64>,
}

impl Codebook {
    /// Builds a codebook from per-unit centroid lists (each ascending, at most
    /// 256 entries). Duplicates are collapsed and short lists padded.
    pub fn from_centroids(
        scope: CodebookScope,
        channels: u32,
        centroids: Vec<Vec<f32>>,
        seed: u64,
    ) -> Result<Self> {
        let units = match scope {
            CodebookScope::Global => {
                if channels != 1 {
                    return Err(CodecError::InvalidArgument(
                        "a global codebook has channels = 1".into(),
                    ));
                }
                1
            }
            CodebookScope::PerChannel => channels as usize,
        };
        if centroids.len() != units || units == 0 {
            return Err(CodecError::ShapeMismatch {
                expected: units,
                actual: centroids.len(),
            });
        }
        let mut tables = Vec::with_capacity(units);
        let mut distinct = Vec::with_capacity(units);
        for mut list in centroids {
            if list.is_empty() || list.len() > CODEBOOK_SIZE {
                return Err(CodecError::InvalidArgument(format!(
                    "codebook table needs 1..={CODEBOOK_SIZE} centroids, got {}",
                    list.len()
                )));
            }
            if let Some(index) = list.iter().position(|v| !v.is_finite()) {
                return Err(CodecError::NonFinite { index });
            }
            if list.windows(2).any(|w| w[0] > w[1]) {
                return Err(CodecError::InvalidArgument("centroids not sorted".into()));
            }
            list.dedup();
            distinct.push(list.len());
            let max = *list.last().unwrap();
            list.resize(CODEBOOK_SIZE, max);
            tables.push(list);
        }
        let boundaries = tables
            .iter()
            .zip(&distinct)
            .map(|(t, &d)| {
                t[..d]
                    .windows(2)
                    .map(|w| 0.5 * (w[0] as f64 + w[1] as f64))
                    .collect()
            })
            .collect();
        Ok(Self {
            scope,
            channels,
            tables,
            distinct,
            boundaries,
            seed,
            source_count: None,
        })
    }

    pub fn scope(&self) -> CodebookScope {
        self.scope
    }

    pub fn channels(&self) -> u32 {
        self.channels
    }

    pub fn units(&self) -> usize {
        self.tables.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of scalars the fit saw after subsampling; not persisted.
    pub fn source_count(&self) -> Option<u64> {
        self.source_count
    }

    pub fn centroids(&self, unit: usize) -> &[f32] {
        &self.tables[unit]
    }

    pub fn distinct(&self, unit: usize) -> usize {
        self.distinct[unit]
    }

    pub fn is_degenerate(&self) -> bool {
        self.distinct.iter().any(|&d| d < CODEBOOK_SIZE)
    }

    /// Scope unit used for latent channel `channel`.
    pub fn unit_for_channel(&self, channel: usize) -> usize {
        match self.scope {
            CodebookScope::Global => 0,
            CodebookScope::PerChannel => channel,
        }
    }

    /// Whether this codebook can quantize latents with `channels` channels.
    pub fn check_channels(&self, channels: u32) -> Result<()> {
        if self.scope == CodebookScope::PerChannel && self.channels != channels {
            return Err(CodecError::DimensionMismatch(format!(
                "per-channel codebook has {} channels, latent has {channels}",
                self.channels
            )));
        }
        Ok(())
    }

    /// Index of the nearest centroid; exact midpoints go to the lower index.
    #[inline]
    pub fn assign(&self, unit: usize, value: f32) -> u8 {
        let v = value as f64;
        self.boundaries[unit].partition_point(|&b| b < v) as u8
    }

    /// Largest gap between adjacent distinct centroids of `unit`.
    pub fn max_gap(&self, unit: usize) -> f32 {
        self.tables[unit][..self.distinct[unit]]
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f32::max)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(17 + self.units() * CODEBOOK_SIZE * 4);
        out.extend_from_slice(KCB_MAGIC.as_bytes());
        out.push(self.scope.code());
        out.extend_from_slice(&self.channels.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        self.write_tables(&mut out);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(KCB_MAGIC)?;
        let scope = CodebookScope::from_code(r.u8()?)?;
        let channels = r.u32()?;
        let seed = r.u64()?;
        let cb = Self::read_tables(&mut r, scope, channels, seed)?;
        r.finish()?;
        Ok(cb)
    }

    /// Raw centroid blocks only, as embedded in a container.
    pub(crate) fn write_tables(&self, out: &mut Vec<u8>) {
        for t in &self.tables {
            crate::wire::put_f32s(out, t);
        }
    }

    pub(crate) fn read_tables(r: &mut Reader<'_>, scope: CodebookScope, channels: u32, seed: u64) -> Result<Self> {
        let units = match scope {
            CodebookScope::Global => 1,
            CodebookScope::PerChannel => channels as usize,
        };
        if channels == 0 || channels > crate::latent::MAX_CHANNELS {
            return Err(CodecError::UnsupportedField(format!("codebook channels {channels}")));
        }
        let mut tables = Vec::with_capacity(units);
        for _ in 0..units {
            let t = r.f32_vec(CODEBOOK_SIZE)?;
            if t.iter().any(|v| !v.is_finite()) {
                return Err(CodecError::UnsupportedField("non-finite centroid".into()));
            }
            let d = 1 + t.windows(2).take_while(|w| w[0] < w[1]).count();
            if t[d..].iter().any(|&v| v != t[d - 1]) {
                return Err(CodecError::UnsupportedField(
                    "centroid table is not ascending with a constant tail".into(),
                ));
            }
            tables.push(t[..d].to_vec());
        }
        Self::from_centroids(scope, channels, tables, seed)
            .map_err(|e| CodecError::UnsupportedField(e.to_string()))
    }
}

impl PartialEq for Codebook {
    fn eq(&self, other: &Self) -> bool {
        self.scope == other.scope && self.channels == other.channels && self.tables == other.tables
    }
}

/// Knobs for [`fit_codebook`]. Defaults are the production settings.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansParams {
    /// Clusters per table; 256 in production, smaller only for oracle tests.
    pub k: usize,
    pub scope: CodebookScope,
    pub seed: u64,
    pub max_samples: usize,
    pub max_iters: usize,
    pub rel_tol: f64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self {
            k: CODEBOOK_SIZE,
            scope: CodebookScope::Global,
            seed: 0,
            max_samples: 1 << 20,
            max_iters: 100,
            rel_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct UnitFitStats {
    pub samples: usize,
    pub distinct_centroids: usize,
    pub iterations: usize,
    pub converged: bool,
    pub sse_history: Vec<f64>,
}

impl UnitFitStats {
    pub fn final_sse(&self) -> f64 {
        self.sse_history.last().copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone)]
pub struct CodebookFit {
    pub codebook: Codebook,
    pub units: Vec<UnitFitStats>,
}

/// Learns one codebook (or one per channel) from the scalar values of `samples`.
pub fn fit_codebook(samples: &[LatentTensor], params: &KMeansParams) -> Result<CodebookFit> {
    if samples.is_empty() {
        return Err(CodecError::EmptySamples);
    }
    if params.k == 0 || params.k > CODEBOOK_SIZE {
        return Err(CodecError::InvalidArgument(format!(
            "k must be in 1..={CODEBOOK_SIZE}, got {}",
            params.k
        )));
    }
    if params.max_iters == 0 || params.max_samples == 0 {
        return Err(CodecError::InvalidArgument(
            "max_iters and max_samples must be positive".into(),
        ));
    }

    let channels = match params.scope {
        CodebookScope::Global => 1,
        CodebookScope::PerChannel => {
            let c = samples[0].layout().channels();
            if let Some(bad) = samples.iter().find(|s| s.layout().channels() != c) {
                return Err(CodecError::DimensionMismatch(format!(
                    "per-channel fit needs equal channel counts ({c} vs {})",
                    bad.layout().channels()
                )));
            }
            c
        }
    };
    let units = match params.scope {
        CodebookScope::Global => 1,
        CodebookScope::PerChannel => channels as usize,
    };

    let mut tables = Vec::with_capacity(units);
    let mut stats = Vec::with_capacity(units);
    let mut total_used = 0u64;
    for unit in 0..units {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        rng.set_stream(unit as u64);

        let values: Vec<f64> = match params.scope {
            CodebookScope::Global => samples
                .iter()
                .flat_map(|s| s.values().iter().map(|&v| v as f64))
                .collect(),
            CodebookScope::PerChannel => samples
                .iter()
                .flat_map(|s| s.channel(unit).iter().map(|&v| v as f64))
                .collect(),
        };
        let mut sorted = if values.len() > params.max_samples {
            let mut picked = index::sample(&mut rng, values.len(), params.max_samples).into_vec();
            picked.sort_unstable();
            picked.into_iter().map(|i| values[i]).collect()
        } else {
            values
        };
        sorted.sort_by(f64::total_cmp);
        total_used += sorted.len() as u64;

        let fit = lloyd::fit_sorted(&sorted, params.k, params.max_iters, params.rel_tol, &mut rng);
        let mut table: Vec<f32> = fit.centroids.iter().map(|&c| c as f32).collect();
        table.dedup();
        if table.len() < CODEBOOK_SIZE {
            log::warn!(
                "codebook unit {unit}: only {} distinct centroids; table is degenerate",
                table.len()
            );
        }
        stats.push(UnitFitStats {
            samples: sorted.len(),
            distinct_centroids: table.len(),
            iterations: fit.iterations,
            converged: fit.converged,
            sse_history: fit.sse_history,
        });
        tables.push(table);
    }

    let mut codebook = Codebook::from_centroids(params.scope, channels, tables, params.seed)?;
    codebook.source_count = Some(total_used);
    Ok(CodebookFit {
        codebook,
        units: stats,
    })
}
