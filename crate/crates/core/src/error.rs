use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, PartialEq)]
pub enum Error {
    #[error("cannot schedule at tick {at}: clock is already at {now}")]
    ScheduleInPast { at: u64, now: u64 },
    #[error("invalid timebase {num}/{den}")]
    InvalidTimebase { num: u64, den: u64 },
    #[error("invalid `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },
    #[error("sampling grid must be strictly increasing")]
    GridNotIncreasing,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("record received at {r} before it was generated at {g}")]
    ReceivedBeforeGenerated { g: u64, r: u64 },
    #[error("history out of order: reception {got} after {last}")]
    HistoryOutOfOrder { last: u64, got: u64 },
    #[error("symbol {symbol} outside alphabet of size {q}")]
    SymbolOutOfAlphabet { symbol: usize, q: usize },
    #[error("device {device} needs power {power} above limit {limit}")]
    PowerLimitExceeded { device: usize, power: f64, limit: f64 },
    #[error("policy {policy} cannot be used for a {expected} decision")]
    WrongPolicyKind { policy: String, expected: &'static str },
    #[error("action {0} is out of range")]
    InvalidAction(usize),
    #[error("state {0} is terminal or not a free cell")]
    InvalidState(usize),
    #[error("goal {to} is unreachable from {from}")]
    UnreachableGoal { from: usize, to: usize },
    #[error("instance with {vertices} vertices exceeds the oracle limit of {max}")]
    InstanceTooLarge { vertices: usize, max: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("{k} acknowledgments exceed the maximum of {k_max}")]
    TooManyAcks { k: usize, k_max: usize },
    #[error("duplicate user id {0}")]
    DuplicateId(u64),
    #[error("user id {id} outside population of {n}")]
    IdOutOfRange { id: u64, n: u64 },
    #[error("malformed feedback: {0}")]
    MalformedFeedback(String),
    #[error("unstable system: queue reached {queue} tasks")]
    Unstable { queue: usize },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub fn invalid(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
