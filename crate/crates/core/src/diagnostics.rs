//! Load-time diagnostics and their text/JSON renderings.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ast::SourceSpan;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Error,
    Warning,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Severity::Error => "error",
            Severity::Warning => "warning",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Code {
    ParseError,
    ArityMismatch,
    UnsafeVariable,
    Unstratifiable,
    RoleConflict,
    NonGroundFact,
    InvalidTerm,
    NegatedBuiltin,
    BuiltinEffect,
    UnknownClause,
    DuplicateRuleId,
    TrailingConjunction,
    MissingFile,
    InvalidFaq,
    PrettyNameCollision,
    /// A load step failed with an engine error rather than a source problem.
    LoadError,
}

impl Code {
    pub fn as_str(&self) -> &'static str {
        match self {
            Code::ParseError => "parse_error",
            Code::ArityMismatch => "arity_mismatch",
            Code::UnsafeVariable => "unsafe_variable",
            Code::Unstratifiable => "unstratifiable",
            Code::RoleConflict => "role_conflict",
            Code::NonGroundFact => "non_ground_fact",
            Code::InvalidTerm => "invalid_term",
            Code::NegatedBuiltin => "negated_builtin",
            Code::BuiltinEffect => "builtin_effect",
            Code::UnknownClause => "unknown_clause",
            Code::DuplicateRuleId => "duplicate_rule_id",
            Code::TrailingConjunction => "trailing_conjunction",
            Code::MissingFile => "missing_file",
            Code::InvalidFaq => "invalid_faq",
            Code::PrettyNameCollision => "pretty_name_collision",
            Code::LoadError => "load_error",
        }
    }
}

impl fmt::Display for Code {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub code: Code,
    pub message: String,
    pub span: SourceSpan,
}

impl Diagnostic {
    pub fn error(code: Code, message: impl Into<String>, span: SourceSpan) -> Self {
        Diagnostic { severity: Severity::Error, code, message: message.into(), span }
    }

    pub fn warning(code: Code, message: impl Into<String>, span: SourceSpan) -> Self {
        Diagnostic { severity: Severity::Warning, code, message: message.into(), span }
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }
}

/// `file:line:col: severity[code]: message`
impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}:{}: {}[{}]: {}",
            self.span.file, self.span.start_line, self.span.start_col, self.severity, self.code, self.message
        )
    }
}

pub fn render_text(diags: &[Diagnostic]) -> String {
    diags.iter().map(|d| format!("{d}\n")).collect()
}

pub fn render_json(diags: &[Diagnostic]) -> String {
    serde_json::to_string_pretty(diags).expect("diagnostics serialize")
}

pub fn has_errors(diags: &[Diagnostic]) -> bool {
    diags.iter().any(Diagnostic::is_error)
}
