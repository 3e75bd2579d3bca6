use thiserror::Error;

use crate::ast::{Atom, PredId};
use crate::diagnostics::Diagnostic;

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation failed with {} diagnostic(s)", .0.len())]
    Validation(Vec<Diagnostic>),
    #[error("predicate {0} has conflicting roles")]
    RoleConflict(PredId),
    #[error("atom {0} is not ground")]
    NonGround(Atom),
    #[error("{0} is not a base predicate")]
    NotBasePredicate(PredId),
    #[error("unknown predicate {0}")]
    UnknownPredicate(PredId),
    #[error("no provider registered for external predicate {0}")]
    ExternalUnavailable(PredId),
    #[error("snapshot version {snapshot} was never produced (latest {latest})")]
    StaleSnapshot { snapshot: u64, latest: u64 },
    #[error("builtin {atom}: {reason}")]
    BuiltinDomain { atom: Atom, reason: String },
    #[error("derived fact count exceeded limit of {0}")]
    ResourceLimit(usize),
    #[error("round both adds and retracts {atom} (rules {added_by} and {retracted_by})")]
    ConflictingEffects { atom: Atom, added_by: String, retracted_by: String },
    #[error("{0} is not a declared event")]
    NotAnEvent(PredId),
    #[error("no quiescence after {0} rounds")]
    NonQuiescent(usize),
    #[error("contract is incompatible with the simulator: {0}")]
    IncompatibleContract(String),
    #[error("contract is terminated")]
    Terminated,
    #[error("expected exactly one status, found {0:?}")]
    AmbiguousStatus(Vec<String>),
    #[error("replay diverged at round {round}")]
    ReplayDivergence { round: usize },
    #[error("unknown FAQ `{0}`")]
    UnknownFaq(String),
    #[error("contract has no clause map")]
    NoClauseMap,
    #[error("override `{pattern}` matched nothing in contract {contract}")]
    OverrideMismatch { contract: String, pattern: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("missing file {0}")]
    MissingFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable code, mirrored one-to-one by the HTTP API.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Validation(_) => "validation_failed",
            Error::RoleConflict(_) => "role_conflict",
            Error::NonGround(_) => "non_ground",
            Error::NotBasePredicate(_) => "not_base_predicate",
            Error::UnknownPredicate(_) => "unknown_predicate",
            Error::ExternalUnavailable(_) => "external_unavailable",
            Error::StaleSnapshot { .. } => "stale_snapshot",
            Error::BuiltinDomain { .. } => "builtin_domain_error",
            Error::ResourceLimit(_) => "resource_limit",
            Error::ConflictingEffects { .. } => "conflicting_effects",
            Error::NotAnEvent(_) => "not_an_event",
            Error::NonQuiescent(_) => "non_quiescent",
            Error::IncompatibleContract(_) => "incompatible_contract",
            Error::Terminated => "terminated",
            Error::AmbiguousStatus(_) => "ambiguous_status",
            Error::ReplayDivergence { .. } => "replay_divergence",
            Error::UnknownFaq(_) => "unknown_faq",
            Error::NoClauseMap => "no_clause_map",
            Error::OverrideMismatch { .. } => "override_mismatch",
            Error::InvalidConfig(_) => "invalid_config",
            Error::InvalidInput(_) => "invalid_input",
            Error::MissingFile(_) => "missing_file",
            Error::Io(_) => "io_error",
            Error::Json(_) => "json_error",
        }
    }

    pub fn diagnostics(&self) -> &[Diagnostic] {
        match self {
            Error::Validation(d) => d,
            _ => &[],
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
