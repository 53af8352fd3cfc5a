use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("fields live on different grids (M = {left} vs M = {right})")]
    GridMismatch { left: usize, right: usize },

    #[error("mollifier support of diameter {diameter:.4} spans {nodes:.2} grid nodes; at least {required} are needed")]
    UnderResolved {
        diameter: f64,
        nodes: f64,
        required: f64,
    },

    #[error("band {band} exceeds the grid limit {limit}")]
    BandTooLarge { band: usize, limit: usize },

    #[error("noise field is not divergence-free: eps . kappa = {dot}")]
    NotDivergenceFree { dot: f64 },

    #[error("noise term index {index} out of range (model has {len} terms)")]
    NoSuchNoiseTerm { index: usize, len: usize },

    #[error("initial vorticity vanishes identically; importance density is undefined")]
    ZeroVorticity,

    #[error("non-finite state at step {step} (t = {time}): {what}")]
    BlowUp { step: u64, time: f64, what: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),

    #[error("malformed snapshot: {0}")]
    Snapshot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
