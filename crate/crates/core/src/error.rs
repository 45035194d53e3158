use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid array geometry: {0}")]
    InvalidGeometry(String),

    #[error(
        "grid points {first} and {second} share the cosine {cosine}; dictionary is rank deficient"
    )]
    DegenerateGrid {
        first: usize,
        second: usize,
        cosine: f64,
    },

    #[error("window of {window} grid points cannot be split into {k} equal subranges")]
    IndivisibleWindow { window: usize, k: usize },

    #[error("{n} antennas is not a power of the branching factor {k}")]
    NotPowerOfK { n: usize, k: usize },

    #[error("stage {stage} is outside 1..={stages}")]
    StageOutOfRange { stage: usize, stages: usize },

    #[error("subrange {k} is outside 1..={max}")]
    SubrangeOutOfRange { k: usize, max: usize },

    #[error("dictionary is rank deficient (smallest singular value {0:e})")]
    RankDeficient(f64),

    #[error("candidate {candidate} is outside 1..={max}")]
    CandidateOutOfRange { candidate: usize, max: usize },

    #[error("noise variance must be positive, got {0}")]
    NonPositiveNoise(f64),

    #[error("no observations recorded for candidate {0}")]
    NoObservations(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
