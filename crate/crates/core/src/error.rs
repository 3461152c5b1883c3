use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("line {line}: malformed record: {message}")]
    MalformedLine { line: usize, message: String },

    #[error("line {line}: set index out of range: {set_index} (num_sets = {num_sets})")]
    SetIndexOutOfRange {
        line: usize,
        set_index: usize,
        num_sets: usize,
    },

    #[error("line {line}: duplicate set_index {set_index} for question {question_id:?}")]
    DuplicateSetIndex {
        line: usize,
        question_id: String,
        set_index: usize,
    },

    #[error("question {question_id:?}: missing set indices {missing:?}")]
    MissingSetIndex {
        question_id: String,
        missing: Vec<usize>,
    },

    #[error("line {line}: label count mismatch: manifest has {expected} labels, record has {found}")]
    LabelCountMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("line {line}: beam count mismatch: manifest has {expected} beams per set, record has {found}")]
    BeamCountMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("line {line}: invalid probability: {message}")]
    InvalidProbability { line: usize, message: String },

    #[error("line {line}: {message}")]
    InvalidRecord { line: usize, message: String },

    #[error("degenerate distribution ({context}): {message}")]
    DegenerateDistribution { context: String, message: String },

    #[error("distribution is off the simplex: sum = {sum}")]
    OffSimplex { sum: f64 },

    #[error("score-weighted aggregation requires a sequence_score on every beam ({context})")]
    MissingSequenceScore { context: String },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("undefined AUROC: need at least one correct and one incorrect item (correct = {correct}, incorrect = {incorrect})")]
    UndefinedAuroc { correct: usize, incorrect: usize },

    #[error("baseline and target runs share no question ids")]
    DisjointRuns,

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("unknown {kind} {name:?} (available: {available})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        available: String,
    },

    #[error("report: {0}")]
    Report(String),

    #[error("synthetic task: {0}")]
    Task(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Report(e.to_string())
    }
}
