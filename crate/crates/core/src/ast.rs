//! Abstract syntax and value model of the contract language.
//!
//! A [`Program`] is a set of ground facts, view rules (`head :- body`) and
//! dynamic rules (`condition ==> effects`). All values here are immutable
//! once built and can be shared freely between readers.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use num_bigint::BigInt;
use num_traits::ToPrimitive;
use serde::{Deserialize, Serialize};

use crate::builtins;
use crate::error::Error;

/// Interned-ish identifier. Cheap to clone.
pub type Symbol = Arc<str>;

pub fn sym(s: &str) -> Symbol {
    Arc::from(s)
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    Const(Symbol),
    Var(Symbol),
    Int(BigInt),
    Str(Symbol),
    Compound(Symbol, Vec<Term>),
}

impl Term {
    pub fn constant(name: &str) -> Self {
        Term::Const(sym(name))
    }

    pub fn var(name: &str) -> Self {
        Term::Var(sym(name))
    }

    pub fn int(value: i64) -> Self {
        Term::Int(BigInt::from(value))
    }

    pub fn string(value: &str) -> Self {
        Term::Str(sym(value))
    }

    pub fn is_ground(&self) -> bool {
        match self {
            Term::Var(_) => false,
            Term::Compound(_, args) => args.iter().all(Term::is_ground),
            _ => true,
        }
    }

    pub fn as_int(&self) -> Option<&BigInt> {
        match self {
            Term::Int(i) => Some(i),
            _ => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        self.as_int().and_then(|i| i.to_i64())
    }

    pub fn as_const(&self) -> Option<&str> {
        match self {
            Term::Const(s) => Some(s),
            _ => None,
        }
    }

    /// Collects variables in first-occurrence order.
    pub fn collect_vars(&self, out: &mut Vec<Symbol>) {
        match self {
            Term::Var(v) => {
                if !out.contains(v) {
                    out.push(v.clone());
                }
            }
            Term::Compound(_, args) => args.iter().for_each(|a| a.collect_vars(out)),
            _ => {}
        }
    }

    /// JSON rendering used by traces and the HTTP API: integers become
    /// numbers, constants and strings become JSON strings.
    pub fn to_json(&self) -> serde_json::Value {
        match self {
            Term::Int(i) => match i.to_i64() {
                Some(v) => serde_json::Value::from(v),
                None => serde_json::Value::String(i.to_string()),
            },
            Term::Const(s) | Term::Str(s) => serde_json::Value::String(s.to_string()),
            other => serde_json::Value::String(other.to_string()),
        }
    }

    /// Inverse of [`Term::to_json`] for ground scalars. Strings that are
    /// valid constant symbols become constants, others become strings.
    pub fn from_json(value: &serde_json::Value) -> Result<Term, Error> {
        match value {
            serde_json::Value::Number(n) => n
                .as_i64()
                .map(Term::int)
                .ok_or_else(|| Error::InvalidInput(format!("{n} is not an integer"))),
            serde_json::Value::String(s) if is_constant_symbol(s) => Ok(Term::constant(s)),
            serde_json::Value::String(s) => match s.parse::<BigInt>() {
                Ok(i) => Ok(Term::Int(i)),
                Err(_) => Ok(Term::string(s)),
            },
            other => Err(Error::InvalidInput(format!("{other} is not a term"))),
        }
    }
}

/// `[a-z][a-zA-Z0-9_]*`
pub fn is_constant_symbol(s: &str) -> bool {
    let mut chars = s.chars();
    chars.next().is_some_and(|c| c.is_ascii_lowercase()) && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Const(s) | Term::Var(s) => f.write_str(s),
            Term::Int(i) => write!(f, "{i}"),
            Term::Str(s) => {
                f.write_str("\"")?;
                for c in s.chars() {
                    match c {
                        '"' => f.write_str("\\\"")?,
                        '\\' => f.write_str("\\\\")?,
                        c => write!(f, "{c}")?,
                    }
                }
                f.write_str("\"")
            }
            Term::Compound(functor, args) => {
                write!(f, "{functor}(")?;
                write_comma_separated(f, args)?;
                f.write_str(")")
            }
        }
    }
}

fn write_comma_separated<T: fmt::Display>(f: &mut fmt::Formatter<'_>, items: &[T]) -> fmt::Result {
    for (i, item) in items.iter().enumerate() {
        if i > 0 {
            f.write_str(",")?;
        }
        write!(f, "{item}")?;
    }
    Ok(())
}

/// Predicate identity: name and arity.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PredId {
    pub name: Symbol,
    pub arity: usize,
}

impl PredId {
    pub fn new(name: &str, arity: usize) -> Self {
        PredId { name: sym(name), arity }
    }
}

impl fmt::Display for PredId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.name, self.arity)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Atom {
    pub pred: Symbol,
    pub args: Vec<Term>,
}

impl Atom {
    pub fn new(pred: &str, args: Vec<Term>) -> Self {
        Atom { pred: sym(pred), args }
    }

    pub fn pred_id(&self) -> PredId {
        PredId { name: self.pred.clone(), arity: self.args.len() }
    }

    pub fn is_ground(&self) -> bool {
        self.args.iter().all(Term::is_ground)
    }

    pub fn vars(&self) -> Vec<Symbol> {
        let mut out = Vec::new();
        self.args.iter().for_each(|a| a.collect_vars(&mut out));
        out
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.pred)?;
        if !self.args.is_empty() {
            f.write_str("(")?;
            write_comma_separated(f, &self.args)?;
            f.write_str(")")?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LiteralKind {
    Ordinary,
    Builtin,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Literal {
    pub negated: bool,
    pub atom: Atom,
    pub kind: LiteralKind,
}

impl Literal {
    /// Builds a literal, classifying it against the builtin registry.
    pub fn new(negated: bool, atom: Atom) -> Self {
        let kind = if builtins::lookup(&atom.pred_id()).is_some() {
            LiteralKind::Builtin
        } else {
            LiteralKind::Ordinary
        };
        Literal { negated, atom, kind }
    }

    pub fn positive(atom: Atom) -> Self {
        Literal::new(false, atom)
    }

    pub fn negative(atom: Atom) -> Self {
        Literal::new(true, atom)
    }

    pub fn is_builtin(&self) -> bool {
        self.kind == LiteralKind::Builtin
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.negated {
            f.write_str("~")?;
        }
        write!(f, "{}", self.atom)
    }
}

/// Source position of a statement or diagnostic. 1-based, inclusive start.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SourceSpan {
    pub file: String,
    pub start_line: u32,
    pub start_col: u32,
    pub end_line: u32,
    pub end_col: u32,
}

impl SourceSpan {
    pub fn new(file: &str, start: (u32, u32), end: (u32, u32)) -> Self {
        SourceSpan {
            file: file.to_string(),
            start_line: start.0,
            start_col: start.1,
            end_line: end.0,
            end_col: end.1,
        }
    }
}

impl fmt::Display for SourceSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.file, self.start_line, self.start_col)
    }
}

// Spans are positional metadata and are ignored by equality on statements,
// so that parse(print(p)) == p holds.

#[derive(Clone, Debug)]
pub struct Fact {
    pub atom: Atom,
    pub span: SourceSpan,
    pub clause_id: Option<Symbol>,
}

impl PartialEq for Fact {
    fn eq(&self, other: &Self) -> bool {
        self.atom == other.atom && self.clause_id == other.clause_id
    }
}

#[derive(Clone, Debug)]
pub struct ViewRule {
    pub head: Atom,
    pub body: Vec<Literal>,
    pub span: SourceSpan,
    pub clause_id: Option<Symbol>,
}

impl PartialEq for ViewRule {
    fn eq(&self, other: &Self) -> bool {
        self.head == other.head && self.body == other.body && self.clause_id == other.clause_id
    }
}

impl fmt::Display for ViewRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} :- ", self.head)?;
        write_conjunction(f, &self.body)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectKind {
    Add,
    Retract,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Effect {
    pub kind: EffectKind,
    pub atom: Atom,
}

impl fmt::Display for Effect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.kind == EffectKind::Retract {
            f.write_str("~")?;
        }
        write!(f, "{}", self.atom)
    }
}

#[derive(Clone, Debug)]
pub struct DynamicRule {
    pub condition: Vec<Literal>,
    pub effects: Vec<Effect>,
    pub span: SourceSpan,
    pub clause_id: Option<Symbol>,
    pub rule_id: Symbol,
}

impl PartialEq for DynamicRule {
    fn eq(&self, other: &Self) -> bool {
        self.condition == other.condition
            && self.effects == other.effects
            && self.clause_id == other.clause_id
            && self.rule_id == other.rule_id
    }
}

impl fmt::Display for DynamicRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_conjunction(f, &self.condition)?;
        f.write_str(" ==> ")?;
        write_conjunction(f, &self.effects)
    }
}

fn write_conjunction<T: fmt::Display>(f: &mut fmt::Formatter<'_>, items: &[T]) -> fmt::Result {
    for (i, item) in items.iter().enumerate() {
        if i > 0 {
            f.write_str(" & ")?;
        }
        write!(f, "{item}")?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClauseEntry {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub source_lines: Option<(u32, u32)>,
}

/// Links clause ids to the natural-language paragraphs they formalize.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClauseMap {
    pub entries: Vec<ClauseEntry>,
}

impl ClauseMap {
    pub fn from_json(text: &str) -> Result<Self, Error> {
        let map: ClauseMap = serde_json::from_str(text)?;
        let mut seen = BTreeSet::new();
        for e in &map.entries {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate clause id `{}`", e.id)));
            }
        }
        Ok(map)
    }

    pub fn get(&self, id: &str) -> Option<&ClauseEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.get(id).is_some()
    }
}

/// Position of a statement in source order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StatementRef {
    Fact(usize),
    View(usize),
    Dynamic(usize),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Program {
    pub facts: Vec<Fact>,
    pub views: Vec<ViewRule>,
    pub dynamics: Vec<DynamicRule>,
    pub clause_map: Option<ClauseMap>,
    pub declared_externals: BTreeSet<PredId>,
    /// Predicates declared with `#event`.
    pub events: BTreeSet<PredId>,
    /// Source order of statements; empty means facts, views, dynamics.
    pub order: Vec<StatementRef>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Base,
    View,
    External,
}

pub type Signature = BTreeMap<PredId, Role>;

impl Program {
    pub fn push_fact(&mut self, fact: Fact) {
        self.order.push(StatementRef::Fact(self.facts.len()));
        self.facts.push(fact);
    }

    pub fn push_view(&mut self, rule: ViewRule) {
        self.order.push(StatementRef::View(self.views.len()));
        self.views.push(rule);
    }

    pub fn push_dynamic(&mut self, rule: DynamicRule) {
        self.order.push(StatementRef::Dynamic(self.dynamics.len()));
        self.dynamics.push(rule);
    }

    /// Statements in source order.
    pub fn statements(&self) -> Vec<StatementRef> {
        if self.order.len() == self.facts.len() + self.views.len() + self.dynamics.len() {
            return self.order.clone();
        }
        let mut out: Vec<StatementRef> = (0..self.facts.len()).map(StatementRef::Fact).collect();
        out.extend((0..self.views.len()).map(StatementRef::View));
        out.extend((0..self.dynamics.len()).map(StatementRef::Dynamic));
        out
    }

    /// Appends all statements and declarations of `other`.
    pub fn merge(&mut self, other: Program) {
        for stmt in other.statements() {
            match stmt {
                StatementRef::Fact(i) => self.push_fact(other.facts[i].clone()),
                StatementRef::View(i) => self.push_view(other.views[i].clone()),
                StatementRef::Dynamic(i) => self.push_dynamic(other.dynamics[i].clone()),
            }
        }
        self.declared_externals.extend(other.declared_externals);
        self.events.extend(other.events);
        if self.clause_map.is_none() {
            self.clause_map = other.clause_map;
        }
    }

    pub fn view_preds(&self) -> BTreeSet<PredId> {
        self.views.iter().map(|r| r.head.pred_id()).collect()
    }

    pub fn is_event(&self, pred: &PredId) -> bool {
        self.events.contains(pred)
    }

    /// Every predicate with its single role. Fails with `RoleConflict` if a
    /// predicate is both a view head and a base, effect, event or external
    /// predicate.
    pub fn predicate_signature(&self) -> Result<Signature, Error> {
        let views = self.view_preds();
        let mut sig = Signature::new();
        for v in &views {
            sig.insert(v.clone(), Role::View);
        }
        let mut assign = |pred: PredId, role: Role| -> Result<(), Error> {
            if builtins::lookup(&pred).is_some() {
                return Err(Error::RoleConflict(pred));
            }
            match sig.get(&pred) {
                Some(existing) if *existing != role => Err(Error::RoleConflict(pred)),
                _ => {
                    sig.insert(pred, role);
                    Ok(())
                }
            }
        };
        for ext in &self.declared_externals {
            assign(ext.clone(), Role::External)?;
        }
        for fact in &self.facts {
            assign(fact.atom.pred_id(), Role::Base)?;
        }
        for ev in &self.events {
            assign(ev.clone(), Role::Base)?;
        }
        for rule in &self.dynamics {
            for eff in &rule.effects {
                assign(eff.atom.pred_id(), Role::Base)?;
            }
        }
        // Body-only predicates are base relations supplied by instance data.
        let bodies = self
            .views
            .iter()
            .flat_map(|r| r.body.iter())
            .chain(self.dynamics.iter().flat_map(|r| r.condition.iter()));
        for lit in bodies {
            if lit.is_builtin() {
                continue;
            }
            let id = lit.atom.pred_id();
            sig.entry(id).or_insert(Role::Base);
        }
        Ok(sig)
    }

    /// Clause id attached to a stored fact, if the fact comes from a tagged
    /// statement.
    pub fn fact_clause(&self, atom: &Atom) -> Option<&Symbol> {
        self.facts
            .iter()
            .find(|f| &f.atom == atom)
            .and_then(|f| f.clause_id.as_ref())
    }

    pub fn fact_position(&self, atom: &Atom) -> Option<usize> {
        self.facts.iter().position(|f| &f.atom == atom)
    }
}
