//! Bottom-up evaluation under stratified negation-as-failure.
//!
//! Strata are evaluated in order; within a stratum, rules are iterated
//! semi-naively until no new atom appears. Every derived atom records the
//! `(stratum, iteration)` at which it first appeared. A rule instance
//! fired at iteration `k` only reads atoms from earlier iterations, so these
//! ranks give a well-founded order for rebuilding proofs.

mod proof;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

pub use proof::{Derivation, FactSource, RuleRef};

use crate::ast::*;
use crate::builtins::{self, Calendar};
use crate::diagnostics::Diagnostic;
use crate::error::{Error, Result};
use crate::parser::{check_stratification, StratumAssignment};
use crate::store::{scan_relation, Binding, ExternalCache, FactStore, Relation, Tuple};

pub const DEFAULT_MAX_DERIVED: usize = 1_000_000;

#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub calendar: Calendar,
    /// Upper bound on derived view atoms per model.
    pub max_derived: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { calendar: Calendar::default(), max_derived: DEFAULT_MAX_DERIVED }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub(crate) enum CTerm {
    Var(usize),
    Val(Term),
    Compound(Symbol, Vec<CTerm>),
}

#[derive(Clone, Debug)]
pub(crate) struct CLit {
    pub negated: bool,
    pub builtin: bool,
    pub pred: PredId,
    pub args: Vec<CTerm>,
}

/// A rule body or goal with variables mapped to environment slots.
#[derive(Clone, Debug, Default)]
pub(crate) struct CBody {
    pub lits: Vec<CLit>,
    pub vars: Vec<Symbol>,
}

pub(crate) type Env = Vec<Option<Term>>;

impl CBody {
    pub fn new() -> Self {
        CBody::default()
    }

    fn slot(&mut self, v: &Symbol) -> usize {
        match self.vars.iter().position(|x| x == v) {
            Some(i) => i,
            None => {
                self.vars.push(v.clone());
                self.vars.len() - 1
            }
        }
    }

    pub fn term(&mut self, t: &Term) -> CTerm {
        match t {
            Term::Var(v) => CTerm::Var(self.slot(v)),
            Term::Compound(f, args) => CTerm::Compound(f.clone(), args.iter().map(|a| self.term(a)).collect()),
            other => CTerm::Val(other.clone()),
        }
    }

    pub fn args(&mut self, args: &[Term]) -> Vec<CTerm> {
        args.iter().map(|a| self.term(a)).collect()
    }

    pub fn push(&mut self, lit: &Literal) {
        let args = self.args(&lit.atom.args);
        self.lits.push(CLit { negated: lit.negated, builtin: lit.is_builtin(), pred: lit.atom.pred_id(), args });
    }

    pub fn compile(body: &[Literal]) -> Self {
        let mut c = CBody::new();
        for lit in body {
            c.push(lit);
        }
        c
    }

    pub fn env(&self) -> Env {
        vec![None; self.vars.len()]
    }

    /// Named binding of the non-anonymous variables.
    pub fn binding(&self, env: &[Option<Term>]) -> Binding {
        self.vars
            .iter()
            .zip(env)
            .filter(|(v, _)| !v.starts_with('_'))
            .filter_map(|(v, t)| t.clone().map(|t| (v.clone(), t)))
            .collect()
    }
}

pub(crate) fn instantiate(t: &CTerm, env: &[Option<Term>]) -> Option<Term> {
    match t {
        CTerm::Var(i) => env[*i].clone(),
        CTerm::Val(v) => Some(v.clone()),
        CTerm::Compound(f, args) => {
            let args = args.iter().map(|a| instantiate(a, env)).collect::<Option<Vec<_>>>()?;
            Some(Term::Compound(f.clone(), args))
        }
    }
}

pub(crate) fn instantiate_atom(pred: &PredId, args: &[CTerm], env: &[Option<Term>]) -> Atom {
    Atom {
        pred: pred.name.clone(),
        args: args
            .iter()
            .map(|a| instantiate(a, env).expect("safe rules ground every literal they reach"))
            .collect(),
    }
}

/// Binds variables in `args` against `values`. On failure every binding
/// made here is undone. Returns the slots that were bound.
pub(crate) fn match_args(args: &[CTerm], values: &[Term], env: &mut Env, trail: &mut Vec<usize>) -> bool {
    let mark = trail.len();
    for (a, v) in args.iter().zip(values) {
        let ok = match a {
            CTerm::Var(i) => match &env[*i] {
                Some(existing) => existing == v,
                None => {
                    env[*i] = Some(v.clone());
                    trail.push(*i);
                    true
                }
            },
            CTerm::Val(t) => t == v,
            CTerm::Compound(..) => instantiate(a, env).as_ref() == Some(v),
        };
        if !ok {
            undo(env, trail, mark);
            return false;
        }
    }
    true
}

pub(crate) fn undo(env: &mut Env, trail: &mut Vec<usize>, mark: usize) {
    for i in trail.drain(mark..) {
        env[i] = None;
    }
}

/// Where a body's ordinary literals find their tuples.
pub(crate) trait TupleSource {
    /// Calls `f` with each candidate tuple for the literal at body position
    /// `pos`. Candidates may over-approximate `pattern`; callers match.
    fn scan(&self, pos: usize, pred: &PredId, pattern: &[Option<Term>], f: &mut dyn FnMut(&[Term]) -> Result<bool>) -> Result<bool>;

    /// Whether a ground tuple holds, for negated literals.
    fn holds(&self, pred: &PredId, tuple: &[Term]) -> Result<bool>;
}

/// Enumerates solutions of `lits[i..]` left to right. `emit` returns false
/// to stop the search; the function then returns false as well.
pub(crate) fn solve(
    lits: &[CLit],
    i: usize,
    env: &mut Env,
    src: &dyn TupleSource,
    calendar: &Calendar,
    emit: &mut dyn FnMut(&Env) -> Result<bool>,
) -> Result<bool> {
    let Some(lit) = lits.get(i) else { return emit(env) };
    let pattern: Vec<Option<Term>> = lit.args.iter().map(|a| instantiate(a, env)).collect();
    let mut trail = Vec::new();
    if lit.builtin {
        let result = builtins::call(&lit.pred, &pattern, calendar)?;
        return match (lit.negated, result) {
            (false, Some(values)) => {
                if match_args(&lit.args, &values, env, &mut trail) {
                    let go = solve(lits, i + 1, env, src, calendar, emit)?;
                    undo(env, &mut trail, 0);
                    Ok(go)
                } else {
                    Ok(true)
                }
            }
            (true, None) => solve(lits, i + 1, env, src, calendar, emit),
            _ => Ok(true),
        };
    }
    if lit.negated {
        let tuple: Tuple = pattern.into_iter().map(|t| t.expect("negated literal is ground")).collect();
        if src.holds(&lit.pred, &tuple)? {
            return Ok(true);
        }
        return solve(lits, i + 1, env, src, calendar, emit);
    }
    src.scan(i, &lit.pred, &pattern, &mut |tuple| {
        if !match_args(&lit.args, tuple, env, &mut trail) {
            return Ok(true);
        }
        let go = solve(lits, i + 1, env, src, calendar, emit)?;
        undo(env, &mut trail, 0);
        Ok(go)
    })
}

fn scan_rel(rel: Option<&Relation>, pattern: &[Option<Term>], f: &mut dyn FnMut(&[Term]) -> Result<bool>) -> Result<bool> {
    let Some(rel) = rel else { return Ok(true) };
    let mut go = true;
    // The closure stops feeding tuples once `f` asks to stop.
    scan_relation(rel, pattern.first().and_then(Option::as_ref), |t| {
        if go {
            go = f(t)?;
        }
        Ok::<_, Error>(())
    })?;
    Ok(go)
}

#[derive(Clone, Debug)]
pub(crate) struct CRule {
    pub index: usize,
    pub head: PredId,
    pub head_args: Vec<CTerm>,
    pub body: CBody,
}

#[derive(Clone, Debug)]
pub(crate) struct CDynamic {
    pub index: usize,
    pub body: CBody,
    /// (is_add, pred, args)
    pub effects: Vec<(bool, PredId, Vec<CTerm>)>,
}

/// Derivation order key: `(stratum, iteration)`; base facts are `(0, 0)`.
pub type Rank = (usize, usize);

/// A checked program prepared for evaluation.
#[derive(Debug)]
pub struct Evaluator {
    program: Arc<Program>,
    signature: Signature,
    strata: StratumAssignment,
    rules: Vec<CRule>,
    by_stratum: Vec<Vec<usize>>,
    pub(crate) dynamics: Vec<CDynamic>,
    options: EvalOptions,
}

impl Evaluator {
    pub fn new(program: Arc<Program>, options: EvalOptions) -> Result<Self> {
        let signature = program.predicate_signature()?;
        let strata = check_stratification(&program).map_err(|d: Diagnostic| Error::Validation(vec![d]))?;
        let rules: Vec<CRule> = program
            .views
            .iter()
            .enumerate()
            .map(|(index, r)| {
                let mut body = CBody::compile(&r.body);
                let head_args = body.args(&r.head.args);
                CRule { index, head: r.head.pred_id(), head_args, body }
            })
            .collect();
        let mut by_stratum = vec![Vec::new(); strata.max_stratum() + 1];
        for r in &rules {
            by_stratum[strata.stratum(&r.head)].push(r.index);
        }
        let dynamics = program
            .dynamics
            .iter()
            .enumerate()
            .map(|(index, r)| {
                let mut body = CBody::compile(&r.condition);
                let effects = r
                    .effects
                    .iter()
                    .map(|e| (e.kind == EffectKind::Add, e.atom.pred_id(), body.args(&e.atom.args)))
                    .collect();
                CDynamic { index, body, effects }
            })
            .collect();
        Ok(Evaluator { program, signature, strata, rules, by_stratum, dynamics, options })
    }

    pub fn with_defaults(program: Program) -> Result<Self> {
        Evaluator::new(Arc::new(program), EvalOptions::default())
    }

    pub fn program(&self) -> &Arc<Program> {
        &self.program
    }

    pub fn strata(&self) -> &StratumAssignment {
        &self.strata
    }

    pub fn options(&self) -> &EvalOptions {
        &self.options
    }

    pub fn calendar(&self) -> &Calendar {
        &self.options.calendar
    }

    /// The perfect model of the program over `store`.
    pub fn model(&self, store: &FactStore) -> Result<Model<'_>> {
        let mut model = Model {
            ev: self,
            store: store.clone(),
            derived: BTreeMap::new(),
            ranks: HashMap::new(),
            cache: ExternalCache::default(),
            count: 0,
        };
        for stratum in 1..self.by_stratum.len() {
            model.saturate(stratum)?;
        }
        Ok(model)
    }

    pub fn query(&self, store: &FactStore, goal: &[Literal]) -> Result<BTreeSet<Binding>> {
        self.model(store)?.query(goal)
    }

    pub fn derive_with_proof(&self, store: &FactStore, goal: &[Literal]) -> Result<Vec<(Binding, Derivation)>> {
        self.model(store)?.derive_with_proof(goal)
    }

    /// All derivable view atoms.
    pub fn stratified_model(&self, store: &FactStore) -> Result<BTreeSet<Atom>> {
        Ok(self.model(store)?.derived_atoms())
    }

    fn role(&self, store: &FactStore, pred: &PredId) -> Option<Role> {
        store.role(pred).filter(|r| *r == Role::External).or_else(|| self.signature.get(pred).copied()).or_else(|| store.role(pred))
    }
}

/// Evaluates a single builtin atom whose inputs are bound.
pub fn evaluate_builtin(atom: &Atom, calendar: &Calendar) -> Result<BTreeSet<Binding>> {
    let pred = atom.pred_id();
    if builtins::lookup(&pred).is_none() {
        return Err(Error::UnknownPredicate(pred));
    }
    let body = CBody::compile(&[Literal::positive(atom.clone())]);
    let mut out = BTreeSet::new();
    solve(&body.lits, 0, &mut body.env(), &NoFacts, calendar, &mut |env| {
        out.insert(body.binding(env));
        Ok(true)
    })?;
    Ok(out)
}

struct NoFacts;

impl TupleSource for NoFacts {
    fn scan(&self, _: usize, _: &PredId, _: &[Option<Term>], _: &mut dyn FnMut(&[Term]) -> Result<bool>) -> Result<bool> {
        Ok(true)
    }

    fn holds(&self, _: &PredId, _: &[Term]) -> Result<bool> {
        Ok(false)
    }
}

/// The computed perfect model over one store. External lookups are
/// memoized for the lifetime of the model.
pub struct Model<'e> {
    ev: &'e Evaluator,
    store: FactStore,
    derived: BTreeMap<PredId, Relation>,
    ranks: HashMap<PredId, HashMap<Tuple, Rank>>,
    cache: ExternalCache,
    count: usize,
}

/// Reads views from `derived` (optionally a delta at one body position),
/// base facts from the store, and external predicates through the cache.
struct Reader<'a> {
    model: &'a Model<'a>,
    delta: Option<(usize, &'a BTreeMap<PredId, Relation>)>,
    /// When set, view tuples must have a rank strictly below this.
    below: Option<Rank>,
}

impl TupleSource for Reader<'_> {
    fn scan(&self, pos: usize, pred: &PredId, pattern: &[Option<Term>], f: &mut dyn FnMut(&[Term]) -> Result<bool>) -> Result<bool> {
        if let Some((p, delta)) = self.delta {
            if p == pos {
                return scan_rel(delta.get(pred), pattern, f);
            }
        }
        match self.model.ev.role(&self.model.store, pred) {
            Some(Role::View) => match self.below {
                None => scan_rel(self.model.derived.get(pred), pattern, f),
                Some(limit) => {
                    let ranks = self.model.ranks.get(pred);
                    scan_rel(self.model.derived.get(pred), pattern, &mut |t| {
                        if ranks.and_then(|r| r.get(t)).is_some_and(|r| *r < limit) {
                            f(t)
                        } else {
                            Ok(true)
                        }
                    })
                }
            },
            Some(Role::External) => {
                let rows = self.model.external(pred, pattern)?;
                for row in rows.iter() {
                    if !f(row)? {
                        return Ok(false);
                    }
                }
                Ok(true)
            }
            _ => scan_rel(self.model.store.relation(pred), pattern, f),
        }
    }

    fn holds(&self, pred: &PredId, tuple: &[Term]) -> Result<bool> {
        self.model.holds(pred, tuple)
    }
}

impl<'e> Model<'e> {
    pub fn evaluator(&self) -> &'e Evaluator {
        self.ev
    }

    pub fn store(&self) -> &FactStore {
        &self.store
    }

    fn external(&self, pred: &PredId, pattern: &[Option<Term>]) -> Result<Arc<Vec<Tuple>>> {
        let provider = self.store.provider(pred).ok_or_else(|| Error::ExternalUnavailable(pred.clone()))?;
        self.cache.lookup(provider.as_ref(), pred, pattern)
    }

    fn holds(&self, pred: &PredId, tuple: &[Term]) -> Result<bool> {
        match self.ev.role(&self.store, pred) {
            Some(Role::View) => Ok(self.derived.get(pred).is_some_and(|r| r.contains(tuple))),
            Some(Role::External) => {
                let pattern: Vec<Option<Term>> = tuple.iter().cloned().map(Some).collect();
                Ok(!self.external(pred, &pattern)?.is_empty())
            }
            _ => Ok(self.store.relation(pred).is_some_and(|r| r.contains(tuple))),
        }
    }

    pub fn contains(&self, atom: &Atom) -> Result<bool> {
        self.holds(&atom.pred_id(), &atom.args)
    }

    pub(crate) fn rank(&self, atom: &Atom) -> Option<Rank> {
        self.ranks.get(&atom.pred_id()).and_then(|r| r.get(&atom.args)).copied()
    }

    fn reader(&self) -> Reader<'_> {
        Reader { model: self, delta: None, below: None }
    }

    fn saturate(&mut self, stratum: usize) -> Result<()> {
        let ev = self.ev;
        let rules: Vec<&CRule> = ev.by_stratum[stratum].iter().map(|&i| &ev.rules[i]).collect();
        let same_stratum = |pred: &PredId| ev.signature.get(pred) == Some(&Role::View) && ev.strata.stratum(pred) == stratum;
        let mut iteration = 0;
        let mut delta: BTreeMap<PredId, Relation> = BTreeMap::new();
        loop {
            let mut fresh: BTreeMap<PredId, Relation> = BTreeMap::new();
            {
                let this: &Model = self;
                let mut fire = |rule: &CRule, src: &dyn TupleSource| -> Result<()> {
                    let mut env = rule.body.env();
                    solve(&rule.body.lits, 0, &mut env, src, &ev.options.calendar, &mut |env| {
                        let tuple: Tuple = rule.head_args.iter().map(|a| instantiate(a, env).expect("safe head")).collect();
                        if !this.derived.get(&rule.head).is_some_and(|r| r.contains(&tuple)) {
                            fresh.entry(rule.head.clone()).or_default().insert(tuple);
                        }
                        Ok(true)
                    })?;
                    Ok(())
                };
                for rule in &rules {
                    if iteration == 0 {
                        fire(rule, &this.reader())?;
                        continue;
                    }
                    for (pos, lit) in rule.body.lits.iter().enumerate() {
                        if !lit.negated && !lit.builtin && same_stratum(&lit.pred) && delta.contains_key(&lit.pred) {
                            fire(rule, &Reader { model: this, delta: Some((pos, &delta)), below: None })?;
                        }
                    }
                }
            }
            if fresh.is_empty() {
                return Ok(());
            }
            for (pred, tuples) in &fresh {
                let ranks = self.ranks.entry(pred.clone()).or_default();
                let rel = self.derived.entry(pred.clone()).or_default();
                for t in tuples {
                    if rel.insert(t.clone()) {
                        ranks.insert(t.clone(), (stratum, iteration + 1));
                        self.count += 1;
                    }
                }
            }
            if self.count > ev.options.max_derived {
                return Err(Error::ResourceLimit(ev.options.max_derived));
            }
            delta = fresh;
            iteration += 1;
        }
    }

    pub fn derived_atoms(&self) -> BTreeSet<Atom> {
        self.derived
            .iter()
            .flat_map(|(p, rel)| rel.iter().map(move |t| Atom { pred: p.name.clone(), args: t.clone() }))
            .collect()
    }

    fn check_goal(&self, goal: &[Literal]) -> Result<()> {
        let unsafe_vars = crate::parser::check::unsafe_variables(goal, &[]);
        if !unsafe_vars.is_empty() {
            let names: Vec<&str> = unsafe_vars.iter().map(|v| &**v).collect();
            return Err(Error::Validation(vec![Diagnostic::error(
                crate::diagnostics::Code::UnsafeVariable,
                format!("goal variable(s) {} are not range-restricted", names.join(", ")),
                SourceSpan::new("<goal>", (1, 1), (1, 1)),
            )]));
        }
        for lit in goal {
            let pred = lit.atom.pred_id();
            if !lit.is_builtin() && self.ev.role(&self.store, &pred).is_none() {
                return Err(Error::UnknownPredicate(pred));
            }
        }
        Ok(())
    }

    /// Solutions of `body`, each with its full environment.
    pub(crate) fn solutions(&self, body: &CBody) -> Result<Vec<Env>> {
        let mut out = Vec::new();
        solve(&body.lits, 0, &mut body.env(), &self.reader(), &self.ev.options.calendar, &mut |env| {
            out.push(env.clone());
            Ok(true)
        })?;
        Ok(out)
    }

    pub fn query(&self, goal: &[Literal]) -> Result<BTreeSet<Binding>> {
        self.check_goal(goal)?;
        let body = CBody::compile(goal);
        Ok(self.solutions(&body)?.iter().map(|env| body.binding(env)).collect())
    }

    /// Whether the ground or variable goal has at least one solution.
    pub fn holds_goal(&self, goal: &[Literal]) -> Result<bool> {
        Ok(!self.query(goal)?.is_empty())
    }

    pub fn derive_with_proof(&self, goal: &[Literal]) -> Result<Vec<(Binding, Derivation)>> {
        self.check_goal(goal)?;
        let body = CBody::compile(goal);
        let mut first: BTreeMap<Binding, Env> = BTreeMap::new();
        for env in self.solutions(&body)? {
            first.entry(body.binding(&env)).or_insert(env);
        }
        let mut memo = HashMap::new();
        let mut out = Vec::new();
        for (binding, env) in first {
            let mut children = Vec::new();
            for lit in &body.lits {
                children.push(self.prove_literal(lit, &env, &mut memo)?);
            }
            let proof = if children.len() == 1 {
                children.pop().expect("one child")
            } else {
                let head = Atom { pred: sym("goal"), args: binding.values().cloned().collect() };
                Derivation::RuleNode { rule: None, head, children }
            };
            out.push((binding, proof));
        }
        Ok(out)
    }

    fn prove_literal(&self, lit: &CLit, env: &Env, memo: &mut HashMap<Atom, Derivation>) -> Result<Derivation> {
        let atom = instantiate_atom(&lit.pred, &lit.args, env);
        Ok(if lit.builtin {
            Derivation::BuiltinLeaf { atom }
        } else if lit.negated {
            Derivation::NegationLeaf { atom }
        } else {
            self.prove_atom(&atom, memo)?
        })
    }

    /// Proof of a ground atom that holds in the model.
    pub fn prove_atom(&self, atom: &Atom, memo: &mut HashMap<Atom, Derivation>) -> Result<Derivation> {
        if let Some(d) = memo.get(atom) {
            return Ok(d.clone());
        }
        let pred = atom.pred_id();
        let proof = match self.ev.role(&self.store, &pred) {
            Some(Role::View) => {
                let rank = self.rank(atom).ok_or_else(|| Error::InvalidInput(format!("`{atom}` does not hold")))?;
                let reader = Reader { model: self, delta: None, below: Some(rank) };
                let mut found = None;
                for rule in self.ev.rules.iter().filter(|r| r.head == pred) {
                    let mut env = rule.body.env();
                    let mut trail = Vec::new();
                    if !match_args(&rule.head_args, &atom.args, &mut env, &mut trail) {
                        continue;
                    }
                    solve(&rule.body.lits, 0, &mut env, &reader, &self.ev.options.calendar, &mut |env| {
                        found = Some((rule, env.clone()));
                        Ok(false)
                    })?;
                    if found.is_some() {
                        break;
                    }
                }
                let (rule, env) = found.expect("every ranked atom has a lower-ranked rule instance");
                let children = rule
                    .body
                    .lits
                    .iter()
                    .map(|lit| self.prove_literal(lit, &env, memo))
                    .collect::<Result<Vec<_>>>()?;
                let source = &self.ev.program.views[rule.index];
                Derivation::RuleNode {
                    rule: Some(RuleRef { index: rule.index, span: source.span.clone(), clause_id: source.clause_id.clone() }),
                    head: atom.clone(),
                    children,
                }
            }
            Some(Role::External) => {
                let descriptor = self.store.provider(&pred).map(|p| p.descriptor().to_string()).unwrap_or_default();
                Derivation::FactLeaf { atom: atom.clone(), source: FactSource::External(descriptor), clause_id: None }
            }
            _ => Derivation::FactLeaf {
                atom: atom.clone(),
                source: FactSource::Stored,
                clause_id: self.ev.program.fact_clause(atom).cloned(),
            },
        };
        memo.insert(atom.clone(), proof.clone());
        Ok(proof)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::{parse_atom, parse_goal, parse_program};
    use crate::store::JsonFileProvider;

    const DATASET: &str = "class(financial_institution)
class(customer)
class(automatic_payment_agreement)
class(auto_finance_account)
instance_of(afa,auto_finance_account)
instance_of(apa,automatic_payment_agreement)
has_apa(afa, apa)
instance_of(bank_1, financial_institution)
has_permission(bank_1, apa)
";

    const VIEWS: &str = "has_obligation(C,make_payment) :- instance_of(C,customer) & ~existing_apa & today(M,D,Y) & new_apa_from(M1,D1,Y1) & date_before(M,D,Y,M1,D1,Y1)
existing_apa :- has_apa(afa,APA) & instance_of(APA,automatic_payment_agreement)
";

    fn setup(src: &str) -> (Evaluator, FactStore) {
        let p = parse_program(src, "t").unwrap();
        let store = FactStore::for_program(&p).unwrap();
        (Evaluator::with_defaults(p).unwrap(), store)
    }

    fn q(ev: &Evaluator, store: &FactStore, goal: &str) -> Vec<String> {
        ev.query(store, &parse_goal(goal).unwrap())
            .unwrap()
            .iter()
            .map(|b| b.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(","))
            .collect()
    }

    #[test]
    fn permission_lookup() {
        let (ev, store) = setup(DATASET);
        assert_eq!(q(&ev, &store, "has_permission(bank_1, P)"), ["P=apa"]);
    }

    #[test]
    fn existing_apa_blocks_obligation() {
        let (ev, store) = setup(&format!("{DATASET}{VIEWS}"));
        assert_eq!(q(&ev, &store, "existing_apa"), [""]);
        assert!(q(&ev, &store, "has_obligation(C, make_payment)").is_empty());
        let model = ev.stratified_model(&store).unwrap();
        assert_eq!(model.into_iter().map(|a| a.to_string()).collect::<Vec<_>>(), ["existing_apa"]);
    }

    #[test]
    fn obligation_without_prior_agreement() {
        let src = format!(
            "{}{VIEWS}instance_of(cust_1, customer)\ntoday(1,15,2025)\nnew_apa_from(3,1,2025)\n",
            DATASET.replace("has_apa(afa, apa)\n", "")
        );
        let (ev, store) = setup(&src);
        assert_eq!(q(&ev, &store, "has_obligation(C, make_payment)"), ["C=cust_1"]);
        let proofs = ev.derive_with_proof(&store, &parse_goal("has_obligation(C, make_payment)").unwrap()).unwrap();
        let Derivation::RuleNode { children, .. } = &proofs[0].1 else { panic!("expected rule node") };
        assert!(matches!(&children[1], Derivation::NegationLeaf { atom } if atom.to_string() == "existing_apa"));
        assert!(matches!(&children[4], Derivation::BuiltinLeaf { atom } if atom.to_string() == "date_before(1,15,2025,3,1,2025)"));
    }

    #[test]
    fn existing_apa_proof_has_two_fact_leaves() {
        let (ev, store) = setup(&format!("{DATASET}{VIEWS}"));
        let proofs = ev.derive_with_proof(&store, &parse_goal("existing_apa").unwrap()).unwrap();
        assert_eq!(proofs.len(), 1);
        let Derivation::RuleNode { children, rule, .. } = &proofs[0].1 else { panic!() };
        assert_eq!(rule.as_ref().unwrap().index, 1);
        assert_eq!(children.len(), 2);
        assert!(children.iter().all(|c| matches!(c, Derivation::FactLeaf { source: FactSource::Stored, .. })));
    }

    #[test]
    fn unknown_predicate_in_goal() {
        let (ev, store) = setup(DATASET);
        assert!(matches!(ev.query(&store, &parse_goal("hass_permission(X, Y)").unwrap()), Err(Error::UnknownPredicate(_))));
    }

    #[test]
    fn builtin_domain_error_propagates() {
        let (ev, store) = setup("m(13)\nnext(N) :- m(M) & mp1(M, N)\n");
        match ev.query(&store, &parse_goal("next(N)").unwrap()) {
            Err(Error::BuiltinDomain { atom, .. }) => assert_eq!(atom.pred.as_ref(), "mp1"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn recursion_and_stratified_negation() {
        let (ev, store) = setup(
            "edge(a,b)\nedge(b,c)\nedge(c,a)\nedge(d,e)\nnode(a)\nnode(b)\nnode(c)\nnode(d)\nnode(e)\npath(X,Y) :- edge(X,Y)\npath(X,Z) :- path(X,Y) & edge(Y,Z)\nunreached(X) :- node(X) & ~path(a,X)\n",
        );
        assert_eq!(q(&ev, &store, "unreached(X)"), ["X=d", "X=e"]);
        assert_eq!(q(&ev, &store, "path(a, X)").len(), 3);
        let proofs = ev.derive_with_proof(&store, &parse_goal("path(a,a)").unwrap()).unwrap();
        assert_eq!(proofs[0].1.depth(), 4);
    }

    #[test]
    fn external_provider_in_rule() {
        let p = parse_program(
            "#external has_apa/2\ninstance_of(apa, automatic_payment_agreement)\nexisting_apa :- has_apa(afa,APA) & instance_of(APA,automatic_payment_agreement)\n",
            "t",
        )
        .unwrap();
        let provider = JsonFileProvider::from_json("accounts-db", r#"{"has_apa": [["afa","apa"]]}"#).unwrap();
        let store = FactStore::for_program(&p)
            .unwrap()
            .with_provider(PredId::new("has_apa", 2), Arc::new(provider))
            .unwrap();
        let ev = Evaluator::with_defaults(p).unwrap();
        let proofs = ev.derive_with_proof(&store, &parse_goal("existing_apa").unwrap()).unwrap();
        let Derivation::RuleNode { children, .. } = &proofs[0].1 else { panic!() };
        assert_eq!(children[0], Derivation::FactLeaf {
            atom: parse_atom("has_apa(afa,apa)").unwrap(),
            source: FactSource::External("accounts-db".into()),
            clause_id: None
        });
    }

    #[test]
    fn missing_provider_is_reported() {
        let (ev, store) = setup("#external has_apa/2\nexisting_apa :- has_apa(afa,APA)\n");
        assert!(matches!(ev.query(&store, &parse_goal("existing_apa").unwrap()), Err(Error::ExternalUnavailable(_))));
    }

    #[test]
    fn resource_limit() {
        let p = parse_program("s(0)\nn(X) :- s(X)\nn(Y) :- n(X) & less_than(X, 100000) & evaluate(plus(X,1), Y)\n", "t").unwrap();
        let store = FactStore::for_program(&p).unwrap();
        let ev = Evaluator::new(Arc::new(p), EvalOptions { max_derived: 50, ..Default::default() }).unwrap();
        assert!(matches!(ev.stratified_model(&store), Err(Error::ResourceLimit(50))));
    }

    #[test]
    fn builtins_directly() {
        let cal = Calendar::default();
        let one = |s: &str| evaluate_builtin(&parse_atom(s).unwrap(), &cal).unwrap();
        assert_eq!(one("mp1(12, X)").iter().next().unwrap()["X"], Term::int(1));
        assert_eq!(one("evaluate(minus(500,500), X)").iter().next().unwrap()["X"], Term::int(0));
        assert_eq!(one("date_before(1,31,2025,2,1,2025)").len(), 1);
        assert!(one("date_before(2,1,2025,2,1,2025)").is_empty());
        assert!(evaluate_builtin(&parse_atom("mp1(X, Y)").unwrap(), &cal).is_err());
    }
}
