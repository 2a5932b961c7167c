use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid scenario or parameter combination.
    #[error("configuration error: {0}")]
    Config(String),

    /// Scenario file could not be read or parsed.
    #[error("scenario error: {0}")]
    Scenario(String),

    /// A field was applied to an operator built for a different grid.
    #[error("grid mismatch: field grid {field} vs operator grid {expected}")]
    GridMismatch { field: u64, expected: u64 },

    /// Operator shapes are incompatible.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// Source and destination samples coincide; the kernel is singular there.
    #[error("coincident points: source #{src} and destination #{dst}")]
    CoincidentPoints { src: usize, dst: usize },

    /// A field became non-finite during optimization.
    #[error("non-finite field at layer {layer}, sweep {sweep}")]
    NonFinite { layer: usize, sweep: usize },

    /// Intensity never falls to half maximum on one side of the peak.
    #[error("no half-maximum crossing on the {side} side of the {axis} cut")]
    NoHalfMaxCrossing {
        axis: &'static str,
        side: &'static str,
    },

    /// The intensity peak sits on the window edge; the cut cannot be measured.
    #[error("intensity peak not interior to the {axis} window; widen the window")]
    PeakNotInterior { axis: &'static str },

    /// Fitted quadratic phase coefficient is non-negative.
    #[error("diverging wavefront: fitted quadratic coefficient {a2} >= 0")]
    DivergingWavefront { a2: f64 },

    /// Misalignment term drives the aperture utilization to zero or below.
    #[error("aperture collapse: misalignment term {term} >= 1")]
    ApertureCollapse { term: f64 },

    /// Not enough distinct radii to fit the requested polynomial order.
    #[error("rank-deficient phase fit: {radii} distinct radii for order {order}")]
    RankDeficientFit { radii: usize, order: usize },

    /// A requested calibration coefficient cannot be identified from the data.
    #[error("coefficient {0} is unidentifiable: its driving setting is not varied in the dataset")]
    Unidentifiable(String),

    /// A shifted layer no longer overlaps the aperture lattice.
    #[error("misaligned layer {layer} leaves the aperture support (shift {shift} m)")]
    ShiftOutsideAperture { layer: usize, shift: f64 },

    /// An input collection that must be non-empty was empty.
    #[error("empty {0}")]
    Empty(&'static str),

    /// Both inputs to a normalized comparison must have nonzero norm.
    #[error("zero-norm field in {0}")]
    ZeroNorm(&'static str),

    /// Binary operator dump is malformed.
    #[error("operator dump corrupt: {0}")]
    DumpCorrupt(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by user-supplied configuration rather than
    /// numerical failure; the CLI maps these to exit code 2.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Scenario(_) | Error::Unidentifiable(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
