//! Latent-space image codec for pathology tiles.
//!
//! Images are encoded into `c × h × w` latent grids by a patch-PCA codec, the
//! latent values are quantized to 8-bit indices with a learned K-means
//! codebook (or static int8 binning), and tiles are packed into a checksummed
//! container. [`metrics`] measures what the round trip costs.

pub mod container;
pub mod embedding;
pub mod error;
pub mod image;
pub mod latent;
pub mod lif;
pub mod metrics;
pub mod pca;
pub mod quantizer;
pub mod synthetic;
mod wire;

pub use container::{compress_image, decompress_image, decompress_tile, read_container, write_container, CompressedContainer};
pub use embedding::EmbeddingVector;
pub use error::{CodecError, ErrorKind, Result};
pub use image::ImageBuffer;
pub use latent::{latent_byte_size, latent_grid_for_image, LatentLayout, LatentTensor, QuantMode};
pub use lif::{read_lif, write_lif};
pub use metrics::{build_report, embed_cosine, embed_l1, psnr, ssim, RateDistortionReport};
pub use pca::{fit_linear_codec, LinearCodecModel};
pub use quantizer::{
    calibrate_int8_range, dequantize, fit_codebook, quantize_int8, quantize_kmeans, Codebook, CodebookScope, Dictionary,
    Int8Range, KMeansParams, QuantizedLatent,
};
