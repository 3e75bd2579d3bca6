//! Static checks run before a program may be evaluated: arity consistency,
//! term placement, predicate roles, range restriction and stratification.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use petgraph::algo::tarjan_scc;
use petgraph::graph::{DiGraph, NodeIndex};

use crate::ast::*;
use crate::builtins::{self, Mode};
use crate::diagnostics::{Code, Diagnostic};
use crate::error::Error;

/// Stratum index per view predicate. Base and external predicates are
/// implicitly stratum 0.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StratumAssignment {
    pub strata: BTreeMap<PredId, usize>,
}

impl StratumAssignment {
    pub fn stratum(&self, pred: &PredId) -> usize {
        self.strata.get(pred).copied().unwrap_or(0)
    }

    pub fn max_stratum(&self) -> usize {
        self.strata.values().copied().max().unwrap_or(0)
    }
}

/// All static checks. Returns diagnostics in a deterministic order.
pub fn check_program(program: &Program) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    check_arity(program, &mut diags);
    check_terms(program, &mut diags);
    check_roles(program, &mut diags);
    check_rule_ids(program, &mut diags);
    if diags.iter().any(Diagnostic::is_error) {
        return diags;
    }
    let safety = check_safety(program);
    let unsafe_program = !safety.is_empty();
    diags.extend(safety);
    if !unsafe_program {
        if let Err(d) = check_stratification(program) {
            diags.push(d);
        }
    }
    diags
}

struct Occurrence<'a> {
    pred: PredId,
    span: &'a SourceSpan,
}

fn occurrences(program: &Program) -> Vec<Occurrence<'_>> {
    let mut out = Vec::new();
    for stmt in program.statements() {
        match stmt {
            StatementRef::Fact(i) => {
                let f = &program.facts[i];
                out.push(Occurrence { pred: f.atom.pred_id(), span: &f.span });
            }
            StatementRef::View(i) => {
                let r = &program.views[i];
                out.push(Occurrence { pred: r.head.pred_id(), span: &r.span });
                out.extend(r.body.iter().map(|l| Occurrence { pred: l.atom.pred_id(), span: &r.span }));
            }
            StatementRef::Dynamic(i) => {
                let r = &program.dynamics[i];
                out.extend(r.condition.iter().map(|l| Occurrence { pred: l.atom.pred_id(), span: &r.span }));
                out.extend(r.effects.iter().map(|e| Occurrence { pred: e.atom.pred_id(), span: &r.span }));
            }
        }
    }
    out
}

fn check_arity(program: &Program, diags: &mut Vec<Diagnostic>) {
    let mut first: HashMap<Symbol, usize> = HashMap::new();
    let default_span = SourceSpan::default();
    for decl in program.events.iter().chain(&program.declared_externals) {
        if let Some(&arity) = first.get(&decl.name) {
            if arity != decl.arity {
                diags.push(Diagnostic::error(
                    Code::ArityMismatch,
                    format!("{} declared with arity {} and {}", decl.name, arity, decl.arity),
                    default_span.clone(),
                ));
            }
        }
        first.entry(decl.name.clone()).or_insert(decl.arity);
    }
    let mut reported = BTreeSet::new();
    for occ in occurrences(program) {
        if builtins::is_builtin_name(&occ.pred.name) {
            if builtins::lookup(&occ.pred).is_none() && reported.insert(occ.pred.clone()) {
                diags.push(Diagnostic::error(
                    Code::ArityMismatch,
                    format!("builtin {} used with arity {}", occ.pred.name, occ.pred.arity),
                    occ.span.clone(),
                ));
            }
            continue;
        }
        match first.get(&occ.pred.name) {
            Some(&arity) if arity != occ.pred.arity => {
                if reported.insert(occ.pred.clone()) {
                    diags.push(Diagnostic::error(
                        Code::ArityMismatch,
                        format!("{} used with arity {} but first seen with arity {}", occ.pred.name, occ.pred.arity, arity),
                        occ.span.clone(),
                    ));
                }
            }
            Some(_) => {}
            None => {
                first.insert(occ.pred.name.clone(), occ.pred.arity);
            }
        }
    }
}

/// Compound terms may only appear as builtin arguments.
pub(crate) fn check_literal_terms(literals: &[Literal], span: &SourceSpan) -> Option<Diagnostic> {
    for lit in literals {
        if lit.is_builtin() {
            let spec = builtins::lookup(&lit.atom.pred_id()).expect("builtin literal is registered");
            if lit.negated && !spec.negatable {
                return Some(Diagnostic::error(Code::NegatedBuiltin, format!("builtin {} cannot be negated", lit.atom.pred), span.clone()));
            }
            for (arg, mode) in lit.atom.args.iter().zip(spec.modes) {
                if let Term::Compound(f, _) = arg {
                    let allowed = &*lit.atom.pred == "evaluate" && *mode == Mode::In;
                    if !allowed || !valid_expression(arg) {
                        return Some(Diagnostic::error(
                            Code::InvalidTerm,
                            format!("compound term `{arg}` is not a valid argument of {}; `{f}` is not an expression functor here", lit.atom.pred),
                            span.clone(),
                        ));
                    }
                }
            }
        } else if let Some(t) = lit.atom.args.iter().find(|a| matches!(a, Term::Compound(..))) {
            return Some(Diagnostic::error(
                Code::InvalidTerm,
                format!("compound term `{t}` may only appear inside builtins"),
                span.clone(),
            ));
        }
    }
    None
}

fn valid_expression(term: &Term) -> bool {
    match term {
        Term::Compound(f, args) => {
            builtins::EXPRESSION_FUNCTORS.contains(&&**f) && args.len() == 2 && args.iter().all(valid_expression)
        }
        Term::Int(_) | Term::Var(_) => true,
        _ => false,
    }
}

fn check_terms(program: &Program, diags: &mut Vec<Diagnostic>) {
    for f in &program.facts {
        if !f.atom.is_ground() {
            diags.push(Diagnostic::error(Code::NonGroundFact, format!("fact `{}` contains variables", f.atom), f.span.clone()));
        } else if f.atom.args.iter().any(|a| matches!(a, Term::Compound(..))) {
            diags.push(Diagnostic::error(Code::InvalidTerm, format!("fact `{}` contains a compound term", f.atom), f.span.clone()));
        }
    }
    for r in &program.views {
        if builtins::is_builtin_name(&r.head.pred) {
            diags.push(Diagnostic::error(Code::RoleConflict, format!("cannot define builtin {}", r.head.pred), r.span.clone()));
        }
        let head = Literal::positive(r.head.clone());
        if let Some(d) = check_literal_terms(std::slice::from_ref(&head), &r.span).or_else(|| check_literal_terms(&r.body, &r.span)) {
            diags.push(d);
        }
    }
    for r in &program.dynamics {
        if let Some(d) = check_literal_terms(&r.condition, &r.span) {
            diags.push(d);
        }
        for e in &r.effects {
            if builtins::is_builtin_name(&e.atom.pred) {
                diags.push(Diagnostic::error(Code::BuiltinEffect, format!("effect `{}` targets a builtin", e.atom), r.span.clone()));
            } else if e.atom.args.iter().any(|a| matches!(a, Term::Compound(..))) {
                diags.push(Diagnostic::error(Code::InvalidTerm, format!("effect `{}` contains a compound term", e.atom), r.span.clone()));
            }
        }
    }
}

fn check_roles(program: &Program, diags: &mut Vec<Diagnostic>) {
    if let Err(Error::RoleConflict(pred)) = program.predicate_signature() {
        let span = occurrences(program)
            .into_iter()
            .find(|o| o.pred == pred)
            .map(|o| o.span.clone())
            .unwrap_or_default();
        diags.push(Diagnostic::error(
            Code::RoleConflict,
            format!("{pred} is defined by view rules and also used as a base, event, effect or external predicate"),
            span,
        ));
    }
}

fn check_rule_ids(program: &Program, diags: &mut Vec<Diagnostic>) {
    let mut seen = BTreeSet::new();
    for r in &program.dynamics {
        if !seen.insert(r.rule_id.clone()) {
            diags.push(Diagnostic::error(Code::DuplicateRuleId, format!("duplicate rule id `{}`", r.rule_id), r.span.clone()));
        }
    }
}

/// Variables that violate left-to-right range restriction in `body`, plus
/// any of `required` (head or effect variables) left unbound at the end.
pub fn unsafe_variables(body: &[Literal], required: &[Symbol]) -> Vec<Symbol> {
    let mut bound: BTreeSet<Symbol> = BTreeSet::new();
    let mut bad: Vec<Symbol> = Vec::new();
    let flag = |vars: Vec<Symbol>, bound: &BTreeSet<Symbol>, bad: &mut Vec<Symbol>| {
        for v in vars {
            if !bound.contains(&v) && !bad.contains(&v) {
                bad.push(v);
            }
        }
    };
    for lit in body {
        if lit.is_builtin() {
            let spec = builtins::lookup(&lit.atom.pred_id()).expect("registered");
            let mut outputs = Vec::new();
            for (arg, mode) in lit.atom.args.iter().zip(spec.modes) {
                let mut vars = Vec::new();
                arg.collect_vars(&mut vars);
                if *mode == Mode::In || lit.negated {
                    flag(vars, &bound, &mut bad);
                } else {
                    outputs.extend(vars);
                }
            }
            bound.extend(outputs);
        } else if lit.negated {
            flag(lit.atom.vars(), &bound, &mut bad);
        } else {
            bound.extend(lit.atom.vars());
        }
    }
    flag(required.to_vec(), &bound, &mut bad);
    bad
}

/// Range-restriction diagnostics for every rule; empty when all are safe.
pub fn check_safety(program: &Program) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    let report = |vars: Vec<Symbol>, span: &SourceSpan, diags: &mut Vec<Diagnostic>| {
        for v in vars {
            diags.push(Diagnostic::error(
                Code::UnsafeVariable,
                format!("variable {v} is not bound by an earlier positive literal"),
                span.clone(),
            ));
        }
    };
    for stmt in program.statements() {
        match stmt {
            StatementRef::Fact(_) => {}
            StatementRef::View(i) => {
                let r = &program.views[i];
                report(unsafe_variables(&r.body, &r.head.vars()), &r.span, &mut diags);
            }
            StatementRef::Dynamic(i) => {
                let r = &program.dynamics[i];
                let mut required = Vec::new();
                for e in &r.effects {
                    for v in e.atom.vars() {
                        if !required.contains(&v) {
                            required.push(v);
                        }
                    }
                }
                report(unsafe_variables(&r.condition, &required), &r.span, &mut diags);
            }
        }
    }
    diags
}

struct DepGraph {
    graph: DiGraph<PredId, bool>,
    index: BTreeMap<PredId, NodeIndex>,
}

/// Edges point from a view head to the view predicates its body uses;
/// the weight is true for negated uses.
fn dependency_graph(program: &Program) -> DepGraph {
    let views = program.view_preds();
    let mut graph = DiGraph::new();
    let index: BTreeMap<PredId, NodeIndex> = views.iter().map(|p| (p.clone(), graph.add_node(p.clone()))).collect();
    for rule in &program.views {
        let head = index[&rule.head.pred_id()];
        for lit in &rule.body {
            if let Some(&dep) = index.get(&lit.atom.pred_id()) {
                graph.add_edge(head, dep, lit.negated);
            }
        }
    }
    DepGraph { graph, index }
}

/// Assigns strata to view predicates, or reports a negative cycle.
pub fn check_stratification(program: &Program) -> Result<StratumAssignment, Diagnostic> {
    let dg = dependency_graph(program);
    if let Some(cycle) = negative_cycle(&dg) {
        let names: Vec<String> = cycle.iter().map(|p| p.to_string()).collect();
        let span = program
            .views
            .iter()
            .find(|r| r.head.pred_id() == cycle[0])
            .map(|r| r.span.clone())
            .unwrap_or_default();
        return Err(Diagnostic::error(
            Code::Unstratifiable,
            format!("negation inside a recursive cycle: {} -> {}", names.join(" -> "), names[0]),
            span,
        ));
    }
    let mut assignment = StratumAssignment::default();
    // tarjan_scc yields components dependencies-first.
    for scc in tarjan_scc(&dg.graph) {
        let members: BTreeSet<NodeIndex> = scc.iter().copied().collect();
        let mut stratum = 1;
        for &node in &scc {
            for edge in dg.graph.edges(node) {
                use petgraph::visit::EdgeRef;
                if members.contains(&edge.target()) {
                    continue;
                }
                let dep = &dg.graph[edge.target()];
                let s = assignment.strata[dep] + usize::from(*edge.weight());
                stratum = stratum.max(s);
            }
        }
        for node in scc {
            assignment.strata.insert(dg.graph[node].clone(), stratum);
        }
    }
    Ok(assignment)
}

/// A cycle through at least one negated dependency, as the list of
/// predicates along it, or `None` when the program is stratifiable.
pub fn find_negative_cycle(program: &Program) -> Option<Vec<PredId>> {
    negative_cycle(&dependency_graph(program))
}

fn negative_cycle(dg: &DepGraph) -> Option<Vec<PredId>> {
    use petgraph::visit::EdgeRef;
    let mut component: HashMap<NodeIndex, usize> = HashMap::new();
    for (i, scc) in tarjan_scc(&dg.graph).into_iter().enumerate() {
        for n in scc {
            component.insert(n, i);
        }
    }
    // Deterministic choice: the smallest head predicate with a negative
    // in-component edge.
    for &from in dg.index.values() {
        for edge in dg.graph.edges(from) {
            let to = edge.target();
            if !*edge.weight() || component[&from] != component[&to] {
                continue;
            }
            // Path from `to` back to `from` inside the component.
            let mut prev: HashMap<NodeIndex, NodeIndex> = HashMap::new();
            let mut queue = VecDeque::from([to]);
            let mut seen = BTreeSet::from([to]);
            while let Some(n) = queue.pop_front() {
                if n == from {
                    break;
                }
                let mut next: Vec<NodeIndex> = dg.graph.neighbors(n).filter(|m| component[m] == component[&from]).collect();
                next.sort_by(|a, b| dg.graph[*a].cmp(&dg.graph[*b]));
                for m in next {
                    if seen.insert(m) {
                        prev.insert(m, n);
                        queue.push_back(m);
                    }
                }
            }
            let mut path = vec![from];
            let mut cur = from;
            while cur != to {
                cur = prev[&cur];
                path.push(cur);
            }
            // path runs from `from` backwards to `to`; the cycle is
            // from -> to -> ... -> from.
            let mut cycle = vec![dg.graph[from].clone()];
            cycle.extend(path[1..].iter().rev().map(|n| dg.graph[*n].clone()));
            if from == to {
                cycle.truncate(1);
            }
            return Some(cycle);
        }
    }
    None
}
