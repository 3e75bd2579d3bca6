//! Frequently asked questions bound to goals, rendered through pretty
//! names and linked back to the clause map.

use std::collections::{BTreeMap, BTreeSet};

use serde::Deserialize;
use serde_json::{json, Value};

use crate::ast::{Atom, Literal, PredId, Program, SourceSpan, StatementRef, Symbol, Term};
use crate::contract::Contract;
use crate::diagnostics::{Code, Diagnostic};
use crate::error::{Error, Result};
use crate::eval::{Derivation, Evaluator, Model};
use crate::parser::check::unsafe_variables;
use crate::parser::parse_goal;
use crate::store::{Binding, FactStore};
use crate::transition::binding_json;

pub const PRETTY_NAME: &str = "has_pretty_name";

#[derive(Clone, Debug, PartialEq)]
pub struct FaqEntry {
    pub id: String,
    pub question: String,
    pub goal_text: String,
    pub goal: Vec<Literal>,
    pub template: String,
    pub empty_text: String,
}

impl FaqEntry {
    pub fn to_json(&self) -> Value {
        json!({ "id": self.id, "question": self.question, "goal": self.goal_text })
    }
}

#[derive(Deserialize)]
struct RawFaq {
    id: String,
    question: String,
    goal: String,
    template: String,
    #[serde(default)]
    empty_text: String,
}

/// `{Name}` placeholders in order of appearance.
pub fn placeholders(template: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        let Some(close) = after.find('}') else { break };
        out.push(&after[..close]);
        rest = &after[close + 1..];
    }
    out
}

fn faq_span(index: usize) -> SourceSpan {
    let line = u32::try_from(index + 1).unwrap_or(u32::MAX);
    SourceSpan::new(crate::contract::FAQ_FILE, (line, 1), (line, 1))
}

/// Parses the sidecar. Entries with unparsable or unsafe goals, unknown
/// placeholders or duplicate ids are dropped with an `invalid_faq` error.
pub fn parse_faq_file(text: &str, program: &Program) -> (Vec<FaqEntry>, Vec<Diagnostic>) {
    let raw: Vec<RawFaq> = match serde_json::from_str(text) {
        Ok(r) => r,
        Err(e) => return (Vec::new(), vec![Diagnostic::error(Code::InvalidFaq, e.to_string(), faq_span(0))]),
    };
    let signature = program.predicate_signature().unwrap_or_default();
    let mut entries: Vec<FaqEntry> = Vec::new();
    let mut diags = Vec::new();
    for (i, r) in raw.into_iter().enumerate() {
        let reject = |msg: String| Diagnostic::error(Code::InvalidFaq, format!("FAQ `{}`: {msg}", r.id), faq_span(i));
        if entries.iter().any(|e| e.id == r.id) {
            diags.push(reject("duplicate id".into()));
            continue;
        }
        let goal = match parse_goal(&r.goal) {
            Ok(g) => g,
            Err(d) => {
                diags.push(reject(d.message));
                continue;
            }
        };
        let unsafe_vars = unsafe_variables(&goal, &[]);
        if !unsafe_vars.is_empty() {
            let names: Vec<&str> = unsafe_vars.iter().map(|s| &**s).collect();
            diags.push(reject(format!("unsafe goal variable(s) {}", names.join(", "))));
            continue;
        }
        if let Some(lit) = goal.iter().find(|l| !l.is_builtin() && !signature.contains_key(&l.atom.pred_id())) {
            diags.push(Diagnostic::warning(
                Code::InvalidFaq,
                format!("FAQ `{}`: goal predicate {} is not used by the contract", r.id, lit.atom.pred_id()),
                faq_span(i),
            ));
        }
        let mut vars = Vec::new();
        for lit in &goal {
            lit.atom.args.iter().for_each(|t| t.collect_vars(&mut vars));
        }
        if let Some(p) = placeholders(&r.template).into_iter().find(|p| !vars.iter().any(|v| &**v == *p)) {
            diags.push(reject(format!("placeholder {{{p}}} is not a goal variable")));
            continue;
        }
        entries.push(FaqEntry { id: r.id, question: r.question, goal_text: r.goal, goal, template: r.template, empty_text: r.empty_text });
    }
    (entries, diags)
}

/// Warns when two symbols share a pretty name.
pub fn pretty_name_collisions(program: &Program) -> Vec<Diagnostic> {
    let mut seen: BTreeMap<String, (&Term, &SourceSpan)> = BTreeMap::new();
    let mut out = Vec::new();
    for f in program.facts.iter().filter(|f| &*f.atom.pred == PRETTY_NAME && f.atom.args.len() == 2) {
        let name = match &f.atom.args[1] {
            Term::Str(s) | Term::Const(s) => s.to_string(),
            other => other.to_string(),
        };
        match seen.get(&name) {
            Some((sym, _)) if *sym != &f.atom.args[0] => out.push(Diagnostic::warning(
                Code::PrettyNameCollision,
                format!("`{}` and `{}` share the pretty name \"{name}\"", sym, f.atom.args[0]),
                f.span.clone(),
            )),
            Some(_) => {}
            None => {
                seen.insert(name, (&f.atom.args[0], &f.span));
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct Answer {
    pub faq_id: String,
    pub lines: Vec<String>,
    pub bindings: Vec<Binding>,
    pub derivations: Vec<Derivation>,
    pub clause_links: BTreeSet<Symbol>,
}

impl Answer {
    pub fn to_json(&self) -> Value {
        json!({
            "faq_id": self.faq_id,
            "lines": self.lines,
            "bindings": self.bindings.iter().map(binding_json).collect::<Vec<_>>(),
            "clause_links": self.clause_links.iter().map(|c| c.to_string()).collect::<Vec<_>>(),
            "derivations": self.derivations.iter().map(Derivation::to_json).collect::<Vec<_>>(),
        })
    }
}

fn pretty_names(model: &Model<'_>) -> Result<BTreeMap<Term, String>> {
    let goal = vec![Literal::positive(Atom::new(PRETTY_NAME, vec![Term::var("X"), Term::var("N")]))];
    let rows = match model.query(&goal) {
        Ok(rows) => rows,
        Err(Error::UnknownPredicate(_)) => return Ok(BTreeMap::new()),
        Err(e) => return Err(e),
    };
    let (x, n) = (Symbol::from("X"), Symbol::from("N"));
    let mut out = BTreeMap::new();
    for row in rows {
        let name = match &row[&n] {
            Term::Str(s) => s.to_string(),
            other => other.to_string(),
        };
        out.entry(row[&x].clone()).or_insert(name);
    }
    Ok(out)
}

/// Display text of a bound value.
pub fn render_term(term: &Term, names: &BTreeMap<Term, String>) -> String {
    match (names.get(term), term) {
        (Some(n), _) => n.clone(),
        (None, Term::Str(s)) => s.to_string(),
        (None, t) => t.to_string(),
    }
}

pub fn render_template(template: &str, binding: &Binding, names: &BTreeMap<Term, String>) -> String {
    let mut out = template.to_string();
    for p in placeholders(template) {
        if let Some(v) = binding.get(p) {
            out = out.replace(&format!("{{{p}}}"), &render_term(v, names));
        }
    }
    out
}

/// Source positions of the statements a proof rests on, root first.
fn provenance_key(d: &Derivation, program: &Program, order: &[StatementRef]) -> Vec<usize> {
    let pos = |s: StatementRef| order.iter().position(|o| *o == s).unwrap_or(usize::MAX);
    match d {
        Derivation::RuleNode { rule: Some(r), .. } => vec![pos(StatementRef::View(r.index))],
        Derivation::RuleNode { rule: None, children, .. } => {
            children.iter().flat_map(|c| provenance_key(c, program, order)).collect()
        }
        Derivation::FactLeaf { atom, .. } => {
            vec![program.fact_position(atom).map(|i| pos(StatementRef::Fact(i))).unwrap_or(usize::MAX)]
        }
        Derivation::BuiltinLeaf { .. } | Derivation::NegationLeaf { .. } => Vec::new(),
    }
}

/// Answers one FAQ against `store` without changing it. Lines follow the
/// source order of the statements that support them.
pub fn answer(contract: &Contract, ev: &Evaluator, store: &FactStore, faq_id: &str) -> Result<Answer> {
    let entry = contract.faqs.iter().find(|f| f.id == faq_id).ok_or_else(|| Error::UnknownFaq(faq_id.to_string()))?;
    let model = ev.model(store)?;
    let names = pretty_names(&model)?;
    let program = ev.program();
    let order = program.statements();
    let mut results = model.derive_with_proof(&entry.goal)?;
    results.sort_by_cached_key(|(b, d)| (provenance_key(d, program, &order), b.clone()));

    let known = |c: &Symbol| program.clause_map.as_ref().is_some_and(|m| m.contains(c));
    let mut clause_links = BTreeSet::new();
    let mut lines = Vec::new();
    let mut bindings = Vec::new();
    let mut derivations = Vec::new();
    for (b, d) in results {
        clause_links.extend(d.clause_links().into_iter().filter(known));
        lines.push(render_template(&entry.template, &b, &names));
        bindings.push(b);
        derivations.push(d);
    }
    if lines.is_empty() {
        lines.push(entry.empty_text.clone());
    }
    Ok(Answer { faq_id: entry.id.clone(), lines, bindings, derivations, clause_links })
}

/// Predicates a goal can depend on through view rules.
fn reachable_predicates(program: &Program, goal: &[Literal]) -> BTreeSet<PredId> {
    let mut reached: BTreeSet<PredId> = BTreeSet::new();
    let mut work: Vec<PredId> = goal.iter().filter(|l| !l.is_builtin()).map(|l| l.atom.pred_id()).collect();
    while let Some(p) = work.pop() {
        if !reached.insert(p.clone()) {
            continue;
        }
        for r in program.views.iter().filter(|r| r.head.pred_id() == p) {
            work.extend(r.body.iter().filter(|l| !l.is_builtin()).map(|l| l.atom.pred_id()));
        }
    }
    reached
}

/// Clauses behind one goal: tagged views in its dependency cone, tagged
/// facts of reachable predicates, and tagged dynamic rules that write a
/// reachable predicate.
pub fn clauses_for_goal(program: &Program, goal: &[Literal]) -> BTreeSet<Symbol> {
    let reached = reachable_predicates(program, goal);
    let mut out = BTreeSet::new();
    for r in &program.views {
        if let (Some(c), true) = (&r.clause_id, reached.contains(&r.head.pred_id())) {
            out.insert(c.clone());
        }
    }
    for f in &program.facts {
        if let (Some(c), true) = (&f.clause_id, reached.contains(&f.atom.pred_id())) {
            out.insert(c.clone());
        }
    }
    for r in &program.dynamics {
        if let (Some(c), true) = (&r.clause_id, r.effects.iter().any(|e| reached.contains(&e.atom.pred_id()))) {
            out.insert(c.clone());
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Coverage {
    pub per_faq: BTreeMap<String, BTreeSet<Symbol>>,
    /// Clause-map ids backed by no FAQ, in map order.
    pub uncovered: Vec<String>,
}

impl Coverage {
    pub fn to_json(&self) -> Value {
        json!({
            "per_faq": self.per_faq.iter().map(|(k, v)| (k.clone(), json!(v.iter().map(|c| c.to_string()).collect::<Vec<_>>()))).collect::<serde_json::Map<_, _>>(),
            "uncovered": self.uncovered,
        })
    }
}

pub fn coverage(contract: &Contract) -> Result<Coverage> {
    let map = contract.program.clause_map.as_ref().ok_or(Error::NoClauseMap)?;
    let per_faq: BTreeMap<String, BTreeSet<Symbol>> =
        contract.faqs.iter().map(|f| (f.id.clone(), clauses_for_goal(&contract.program, &f.goal))).collect();
    let covered: BTreeSet<&str> = per_faq.values().flatten().map(|s| &**s).collect();
    let uncovered = map.entries.iter().filter(|e| !covered.contains(e.id.as_str())).map(|e| e.id.clone()).collect();
    Ok(Coverage { per_faq, uncovered })
}

pub fn coverage_report(contract: &Contract) -> Result<Vec<String>> {
    Ok(coverage(contract)?.uncovered)
}
