//! Canonical text rendering of a [`Program`]. The output re-parses to a
//! structurally equal program.

use std::fmt::Write;

use crate::ast::*;

pub fn pretty_print(program: &Program) -> String {
    let mut out = String::new();
    let decl = |out: &mut String, keyword: &str, preds: &std::collections::BTreeSet<PredId>| {
        if !preds.is_empty() {
            let list: Vec<String> = preds.iter().map(ToString::to_string).collect();
            writeln!(out, "#{keyword} {}", list.join(", ")).unwrap();
        }
    };
    decl(&mut out, "event", &program.events);
    decl(&mut out, "external", &program.declared_externals);
    for stmt in program.statements() {
        let clause = match stmt {
            StatementRef::Fact(i) => &program.facts[i].clause_id,
            StatementRef::View(i) => &program.views[i].clause_id,
            StatementRef::Dynamic(i) => &program.dynamics[i].clause_id,
        };
        if let Some(id) = clause {
            writeln!(out, "#clause {id}").unwrap();
        }
        match stmt {
            StatementRef::Fact(i) => writeln!(out, "{}", program.facts[i].atom).unwrap(),
            StatementRef::View(i) => writeln!(out, "{}", program.views[i]).unwrap(),
            StatementRef::Dynamic(i) => {
                let rule = &program.dynamics[i];
                writeln!(out, "#rule {}", rule.rule_id).unwrap();
                writeln!(out, "{rule}").unwrap();
            }
        }
    }
    out
}
