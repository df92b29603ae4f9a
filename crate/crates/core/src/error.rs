use crate::clock::Timestamp;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum Error {
    #[error("all {max} thread slots are registered")]
    RegistryFull { max: usize },
    #[error("history before {horizon} has been reclaimed (requested {requested})")]
    HistoryReclaimed { requested: Timestamp, horizon: Timestamp },
    #[error("snapshot {requested} is ahead of the clock ({now})")]
    FutureSnapshot { requested: Timestamp, now: Timestamp },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}
