use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("need at least 2 particles, got {0}")]
    TooFewParticles(usize),

    #[error("horizon must be finite and positive, got {0}")]
    InvalidHorizon(f64),

    #[error("requested time {requested} is past the stream horizon {horizon}")]
    BeyondHorizon { requested: f64, horizon: f64 },

    #[error("negative energy in collision input ({0}, {1})")]
    NegativeEnergy(f64, f64),

    #[error("particle index {index} out of range for {len} particles")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("event at time {event} precedes state time {state}")]
    EventInPast { event: f64, state: f64 },

    #[error("events are not sorted by strictly increasing time (position {0})")]
    UnsortedEvents(usize),

    #[error("formulation {formulation} cannot drive a {state} state")]
    FormulationMismatch {
        formulation: &'static str,
        state: &'static str,
    },

    #[error("invalid initial condition: {0}")]
    InvalidInit(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("empty sample")]
    EmptySample,

    #[error("need at least {needed} values, got {got}")]
    NotEnoughData { needed: usize, got: usize },

    #[error("non-positive value {value} at index {index} cannot be log-fitted")]
    NonPositiveValue { index: usize, value: f64 },

    #[error("invalid time series: {0}")]
    InvalidSeries(String),

    #[error("time grids differ")]
    GridMismatch,

    #[error("series is identically zero")]
    DegenerateSeries,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config field `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("config parse error: {0}")]
    ConfigParse(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
