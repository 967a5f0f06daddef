use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// A position inside an input file, used to point operators at bad records.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Location {
    pub file: PathBuf,
    pub line: usize,
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.file.display(), self.line)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntegrityError {
    #[error("duplicate {kind} id `{id}` at {}", join_locations(.locations))]
    DuplicateId {
        kind: &'static str,
        id: String,
        locations: Vec<Location>,
    },
    #[error("{from} references unknown {kind} id `{id}`{}", .location.as_ref().map(|l| format!(" at {l}")).unwrap_or_default())]
    DanglingReference {
        from: String,
        kind: &'static str,
        id: String,
        location: Option<Location>,
    },
    #[error("instruction is for ({instruction_pc}, {instruction_sa}) but the prompt targets ({pc}, {sa})")]
    PairMismatch {
        instruction_pc: String,
        instruction_sa: String,
        pc: String,
        sa: String,
    },
    #[error("no gold label for case `{0}`")]
    MissingGold(String),
    #[error("prediction sets cover different cases: {0}")]
    CaseSetMismatch(String),
}

fn join_locations(locations: &[Location]) -> String {
    locations
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{location}: {message}")]
    Parse { location: Location, message: String },

    #[error(transparent)]
    Integrity(#[from] IntegrityError),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("backend error{}: {message}", .status.map(|s| format!(" (status {s})")).unwrap_or_default())]
    Backend { status: Option<u16>, message: String },

    #[error("could not parse model output: {0}")]
    OutputParse(String),

    #[error("instruction generation failed for ({pc_id}, {sa_id}): {reason}")]
    Generation {
        pc_id: String,
        sa_id: String,
        reason: String,
    },

    #[error("no instructions available for attribute `{0}`")]
    MissingSa(String),

    #[error("no instruction for ({pc_id}, {sa_id})")]
    MissingInstruction { pc_id: String, sa_id: String },

    #[error("instruction set does not cover {} pair(s): {}", .0.len(), .0.iter().map(|(p, s)| format!("({p}, {s})")).collect::<Vec<_>>().join(", "))]
    Coverage(Vec<(String, String)>),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    /// Process exit code for the command line: 2 for configuration and
    /// validation failures, 1 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. }
            | Error::Integrity(_)
            | Error::Argument(_)
            | Error::Config(_)
            | Error::Coverage(_)
            | Error::MissingInstruction { .. } => 2,
            Error::Backend { .. }
            | Error::OutputParse(_)
            | Error::Generation { .. }
            | Error::MissingSa(_)
            | Error::Io { .. }
            | Error::Json { .. } => 1,
        }
    }
}
