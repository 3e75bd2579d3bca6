//! Contract Definition Language: parsing, static checks, stratified
//! evaluation, state transitions, lifecycle simulation, FAQ answering and
//! portfolio what-if analysis.

pub mod ast;
pub mod builtins;
pub mod contract;
pub mod diagnostics;
pub mod error;
pub mod eval;
pub mod faq;
pub mod parser;
pub mod portfolio;
pub mod printer;
pub mod reference;
pub mod simulator;
pub mod store;
pub mod transition;

pub use ast::{Atom, Literal, PredId, Program, Role, SourceSpan, Symbol, Term};
pub use contract::{BundleSources, Contract};
pub use diagnostics::{Code, Diagnostic, Severity};
pub use error::{Error, Result};
pub use eval::{Derivation, EvalOptions, Evaluator, Model};
pub use portfolio::{DiffReport, Portfolio, Scenario};
pub use simulator::{Command, SimConfig, SimState, Trace};
pub use store::{Binding, FactStore, Snapshot};
pub use transition::{FiredInstance, StepRecord};
