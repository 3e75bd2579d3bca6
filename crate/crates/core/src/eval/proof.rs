use std::collections::BTreeSet;

use serde_json::{json, Value};

use crate::ast::{Atom, SourceSpan, Symbol};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FactSource {
    Stored,
    /// Answered by the provider with this descriptor.
    External(String),
}

/// The view rule used at a proof node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RuleRef {
    /// Position in `Program::views`.
    pub index: usize,
    pub span: SourceSpan,
    pub clause_id: Option<Symbol>,
}

/// Proof tree for one ground answer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Derivation {
    FactLeaf { atom: Atom, source: FactSource, clause_id: Option<Symbol> },
    BuiltinLeaf { atom: Atom },
    /// Certified by the completed lower strata; carries no subtree.
    NegationLeaf { atom: Atom },
    /// `rule` is `None` only for the synthetic root of a conjunctive goal.
    RuleNode { rule: Option<RuleRef>, head: Atom, children: Vec<Derivation> },
}

impl Derivation {
    /// The ground atom this node establishes (for negation leaves, the atom
    /// shown to be absent).
    pub fn atom(&self) -> &Atom {
        match self {
            Derivation::FactLeaf { atom, .. } | Derivation::BuiltinLeaf { atom } | Derivation::NegationLeaf { atom } => atom,
            Derivation::RuleNode { head, .. } => head,
        }
    }

    pub fn children(&self) -> &[Derivation] {
        match self {
            Derivation::RuleNode { children, .. } => children,
            _ => &[],
        }
    }

    pub fn depth(&self) -> usize {
        1 + self.children().iter().map(Derivation::depth).max().unwrap_or(0)
    }

    /// Clause ids cited anywhere in the tree.
    pub fn clause_links(&self) -> BTreeSet<Symbol> {
        let mut out = BTreeSet::new();
        self.collect_clauses(&mut out);
        out
    }

    fn collect_clauses(&self, out: &mut BTreeSet<Symbol>) {
        match self {
            Derivation::FactLeaf { clause_id: Some(c), .. } => {
                out.insert(c.clone());
            }
            Derivation::RuleNode { rule, children, .. } => {
                if let Some(c) = rule.as_ref().and_then(|r| r.clause_id.clone()) {
                    out.insert(c);
                }
                children.iter().for_each(|c| c.collect_clauses(out));
            }
            _ => {}
        }
    }

    pub fn to_json(&self) -> Value {
        match self {
            Derivation::FactLeaf { atom, source, clause_id } => json!({
                "kind": "fact",
                "atom": atom.to_string(),
                "source": match source {
                    FactSource::Stored => "stored".to_string(),
                    FactSource::External(d) => format!("external:{d}"),
                },
                "clause_id": clause_id.as_deref(),
            }),
            Derivation::BuiltinLeaf { atom } => json!({ "kind": "builtin", "atom": atom.to_string() }),
            Derivation::NegationLeaf { atom } => json!({ "kind": "negation", "atom": atom.to_string() }),
            Derivation::RuleNode { rule, head, children } => json!({
                "kind": "rule",
                "head": head.to_string(),
                "rule": rule.as_ref().map(|r| json!({
                    "index": r.index,
                    "clause_id": r.clause_id.as_deref(),
                    "span": r.span,
                })),
                "children": children.iter().map(Derivation::to_json).collect::<Vec<_>>(),
            }),
        }
    }

    /// Indented multi-line rendering for terminals.
    pub fn render(&self) -> String {
        let mut out = String::new();
        self.render_into(0, &mut out);
        out
    }

    fn render_into(&self, indent: usize, out: &mut String) {
        let pad = "  ".repeat(indent);
        let line = match self {
            Derivation::FactLeaf { atom, source: FactSource::Stored, clause_id } => match clause_id {
                Some(c) => format!("{atom}  [fact, clause {c}]"),
                None => format!("{atom}  [fact]"),
            },
            Derivation::FactLeaf { atom, source: FactSource::External(d), .. } => format!("{atom}  [external {d}]"),
            Derivation::BuiltinLeaf { atom } => format!("{atom}  [builtin]"),
            Derivation::NegationLeaf { atom } => format!("~{atom}  [not derivable]"),
            Derivation::RuleNode { rule: None, head, .. } => format!("{head}"),
            Derivation::RuleNode { rule: Some(r), head, .. } => match &r.clause_id {
                Some(c) => format!("{head}  [rule at {}, clause {c}]", r.span),
                None => format!("{head}  [rule at {}]", r.span),
            },
        };
        out.push_str(&pad);
        out.push_str(&line);
        out.push('\n');
        for c in self.children() {
            c.render_into(indent + 1, out);
        }
    }
}
