use thiserror::Error;

pub type Result<T> = std::result::Result<T, CodecError>;

/// Coarse error classes; the CLI maps each one to a process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Io,
    Format,
    Numeric,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Usage => 2,
            ErrorKind::Io => 3,
            ErrorKind::Format => 4,
            ErrorKind::Numeric => 5,
        }
    }
}

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("invalid layout: {0}")]
    InvalidLayout(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("byte size overflows for the requested dimensions")]
    SizeOverflow,
    #[error("value count {actual} does not match shape ({expected} expected)")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: &'static str, found: [u8; 4] },
    #[error("unsupported version {0}")]
    UnsupportedVersion(u8),
    #[error("unsupported dtype {0}")]
    UnsupportedDtype(u8),
    #[error("unsupported field value: {0}")]
    UnsupportedField(String),
    #[error("truncated payload: expected {expected} bytes, got {actual}")]
    TruncatedPayload { expected: usize, actual: usize },
    #[error("trailing bytes after payload: {0}")]
    TrailingBytes(usize),
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("corrupt payload in tile {tile}: expected {expected} bytes, got {actual}")]
    CorruptPayload {
        tile: usize,
        expected: usize,
        actual: usize,
    },
    #[error("layout mismatch: expected {expected}, got {actual}")]
    LayoutMismatch { expected: String, actual: String },
    #[error("quantization mode and dictionary disagree: {0}")]
    ModeMismatch(String),

    #[error("no samples supplied")]
    EmptySamples,
    #[error("degenerate int8 range: max must exceed min (min {min}, max {max})")]
    DegenerateRange { min: f32, max: f32 },
    #[error("training patches have zero variance")]
    DegenerateVariance,
    #[error("too few training patches: need at least {needed}, got {got}")]
    TooFewPatches { needed: usize, got: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("image {width}x{height} is smaller than the {window}x{window} window")]
    ImageTooSmall {
        width: usize,
        height: usize,
        window: usize,
    },
    #[error("zero-norm embedding vector")]
    ZeroVector,

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("image decode/encode error: {0}")]
    Image(String),
}

impl CodecError {
    pub fn kind(&self) -> ErrorKind {
        use CodecError::*;
        match self {
            InvalidArgument(_) | InvalidLayout(_) => ErrorKind::Usage,
            Io(_) => ErrorKind::Io,
            BadMagic { .. }
            | UnsupportedVersion(_)
            | UnsupportedDtype(_)
            | UnsupportedField(_)
            | TruncatedPayload { .. }
            | TrailingBytes(_)
            | Checksum { .. }
            | CorruptPayload { .. }
            | LayoutMismatch { .. }
            | ModeMismatch(_)
            | Image(_) => ErrorKind::Format,
            SizeOverflow
            | ShapeMismatch { .. }
            | NonFinite { .. }
            | EmptySamples
            | DegenerateRange { .. }
            | DegenerateVariance
            | TooFewPatches { .. }
            | DimensionMismatch(_)
            | ImageTooSmall { .. }
            | ZeroVector => ErrorKind::Numeric,
        }
    }
}
