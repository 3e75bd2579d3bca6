//! Independent oracles shared by the integration tests. Nothing here calls
//! into the engine's evaluator, calendar or transition code.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use cdl_core::eval::{Derivation, FactSource};
use cdl_core::{Atom, Literal, Program, Term};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------------
// Naive stratified Datalog over small integers

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum NTerm {
    Var(&'static str),
    Int(i64),
}

#[derive(Clone, Debug)]
pub struct NAtom {
    pub pred: String,
    pub args: Vec<NTerm>,
}

#[derive(Clone, Copy, Debug)]
pub enum Cmp {
    LessThan,
    Distinct,
}

#[derive(Clone, Debug)]
pub struct NRule {
    pub head: NAtom,
    pub pos: Vec<NAtom>,
    pub neg: Vec<NAtom>,
    pub cmp: Vec<(Cmp, NTerm, NTerm)>,
}

#[derive(Clone, Debug, Default)]
pub struct NProgram {
    pub arity: BTreeMap<String, usize>,
    pub facts: Vec<(String, Vec<i64>)>,
    pub rules: Vec<NRule>,
}

pub type Model = BTreeMap<String, BTreeSet<Vec<i64>>>;

fn term_src(t: &NTerm) -> String {
    match t {
        NTerm::Var(v) => v.to_string(),
        NTerm::Int(i) => i.to_string(),
    }
}

fn atom_src(a: &NAtom) -> String {
    let args: Vec<String> = a.args.iter().map(term_src).collect();
    format!("{}({})", a.pred, args.join(","))
}

impl NProgram {
    /// Source text in the contract language, rules in `rule_order`.
    pub fn to_source_ordered(&self, rule_order: &[usize]) -> String {
        let mut out = String::new();
        for (p, args) in &self.facts {
            let args: Vec<String> = args.iter().map(i64::to_string).collect();
            out.push_str(&format!("{p}({})\n", args.join(",")));
        }
        for &i in rule_order {
            let r = &self.rules[i];
            let mut body: Vec<String> = r.pos.iter().map(atom_src).collect();
            body.extend(r.neg.iter().map(|a| format!("~{}", atom_src(a))));
            for (c, a, b) in &r.cmp {
                let name = match c {
                    Cmp::LessThan => "less_than",
                    Cmp::Distinct => "distinct",
                };
                body.push(format!("{name}({},{})", term_src(a), term_src(b)));
            }
            out.push_str(&format!("{} :- {}\n", atom_src(&r.head), body.join(" & ")));
        }
        out
    }

    pub fn to_source(&self) -> String {
        self.to_source_ordered(&(0..self.rules.len()).collect::<Vec<_>>())
    }

    /// Predicates that occur anywhere in the text.
    pub fn mentioned(&self) -> BTreeSet<String> {
        let mut out: BTreeSet<String> = self.facts.iter().map(|(p, _)| p.clone()).collect();
        for r in &self.rules {
            out.insert(r.head.pred.clone());
            out.extend(r.pos.iter().chain(&r.neg).map(|a| a.pred.clone()));
        }
        out
    }

    /// Strata by relaxation: positive edges need `>=`, negative edges `>`.
    pub fn strata(&self) -> Option<BTreeMap<String, usize>> {
        let mut s: BTreeMap<String, usize> = self.mentioned().into_iter().map(|p| (p, 0)).collect();
        let bound = s.len() + 1;
        loop {
            let mut changed = false;
            for r in &self.rules {
                let mut need = s[&r.head.pred];
                for a in &r.pos {
                    need = need.max(s[&a.pred]);
                }
                for a in &r.neg {
                    need = need.max(s[&a.pred] + 1);
                }
                if need > s[&r.head.pred] {
                    if need > bound {
                        return None;
                    }
                    s.insert(r.head.pred.clone(), need);
                    changed = true;
                }
            }
            if !changed {
                return Some(s);
            }
        }
    }

    /// Perfect model by naive iteration inside each stratum.
    pub fn naive_model(&self) -> Model {
        let strata = self.strata().expect("generated programs are stratified");
        let mut model: Model = self.mentioned().into_iter().map(|p| (p, BTreeSet::new())).collect();
        for (p, args) in &self.facts {
            model.get_mut(p).unwrap().insert(args.clone());
        }
        let top = strata.values().copied().max().unwrap_or(0);
        for level in 0..=top {
            let rules: Vec<&NRule> = self.rules.iter().filter(|r| strata[&r.head.pred] == level).collect();
            loop {
                let mut new = Vec::new();
                for r in &rules {
                    for env in join(&r.pos, &model) {
                        if !r.neg.iter().all(|a| !model[&a.pred].contains(&ground(a, &env))) {
                            continue;
                        }
                        if !r.cmp.iter().all(|(c, a, b)| compare(*c, value(a, &env), value(b, &env))) {
                            continue;
                        }
                        let fact = ground(&r.head, &env);
                        if !model[&r.head.pred].contains(&fact) {
                            new.push((r.head.pred.clone(), fact));
                        }
                    }
                }
                if new.is_empty() {
                    break;
                }
                for (p, f) in new {
                    model.get_mut(&p).unwrap().insert(f);
                }
            }
        }
        model
    }
}

pub fn compare(c: Cmp, a: i64, b: i64) -> bool {
    match c {
        Cmp::LessThan => a < b,
        Cmp::Distinct => a != b,
    }
}

fn value(t: &NTerm, env: &BTreeMap<&'static str, i64>) -> i64 {
    match t {
        NTerm::Int(i) => *i,
        NTerm::Var(v) => env[v],
    }
}

fn ground(a: &NAtom, env: &BTreeMap<&'static str, i64>) -> Vec<i64> {
    a.args.iter().map(|t| value(t, env)).collect()
}

/// Every assignment satisfying all positive atoms, by nested loops.
fn join(pos: &[NAtom], model: &Model) -> Vec<BTreeMap<&'static str, i64>> {
    let mut envs = vec![BTreeMap::new()];
    for a in pos {
        let mut next = Vec::new();
        for env in &envs {
            'tuple: for tuple in &model[&a.pred] {
                let mut env2 = env.clone();
                for (t, v) in a.args.iter().zip(tuple) {
                    match t {
                        NTerm::Int(i) if i != v => continue 'tuple,
                        NTerm::Int(_) => {}
                        NTerm::Var(x) => match env2.get(x) {
                            Some(old) if old != v => continue 'tuple,
                            Some(_) => {}
                            None => {
                                env2.insert(*x, *v);
                            }
                        },
                    }
                }
                next.push(env2);
            }
        }
        envs = next;
    }
    envs
}

const VARS: [&str; 4] = ["X", "Y", "Z", "W"];
const DOMAIN: i64 = 5;

/// A random stratified, range-restricted program: at most 8 predicates,
/// 20 rules and 40 facts over the integers `0..5`.
pub fn random_program(seed: u64) -> NProgram {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_base = rng.random_range(1..=3);
    let n_view = rng.random_range(1..=(8 - n_base).min(5));
    let mut arity = BTreeMap::new();
    let mut level = BTreeMap::new();
    for i in 0..n_base {
        arity.insert(format!("b{i}"), rng.random_range(1..=2));
        level.insert(format!("b{i}"), 0usize);
    }
    let views: Vec<String> = (0..n_view).map(|i| format!("v{i}")).collect();
    for v in &views {
        arity.insert(v.clone(), rng.random_range(1..=2));
        level.insert(v.clone(), rng.random_range(0..=2));
    }
    let bases: Vec<String> = (0..n_base).map(|i| format!("b{i}")).collect();

    let mut facts = Vec::new();
    let n_facts = rng.random_range(0..=40);
    for _ in 0..n_facts {
        let p = bases[rng.random_range(0..bases.len())].clone();
        let args = (0..arity[&p]).map(|_| rng.random_range(0..DOMAIN)).collect();
        facts.push((p, args));
    }

    let mut rules = Vec::new();
    let n_rules = rng.random_range(1..=20);
    for _ in 0..n_rules {
        let head_pred = views[rng.random_range(0..views.len())].clone();
        let hl = level[&head_pred];
        let pos_cands: Vec<&String> = arity.keys().filter(|p| level[*p] <= hl).collect();
        let neg_cands: Vec<&String> = arity.keys().filter(|p| bases.contains(p) || level[*p] < hl).collect();
        let term = |rng: &mut ChaCha8Rng, pool: &[&'static str]| {
            if !pool.is_empty() && rng.random_bool(0.8) {
                NTerm::Var(pool[rng.random_range(0..pool.len())])
            } else {
                NTerm::Int(rng.random_range(0..DOMAIN))
            }
        };
        let mut pos = Vec::new();
        for _ in 0..rng.random_range(1..=3) {
            let p = pos_cands[rng.random_range(0..pos_cands.len())].clone();
            let args = (0..arity[&p]).map(|_| term(&mut rng, &VARS)).collect();
            pos.push(NAtom { pred: p, args });
        }
        let bound: Vec<&'static str> = {
            let mut b = BTreeSet::new();
            for a in &pos {
                for t in &a.args {
                    if let NTerm::Var(v) = t {
                        b.insert(*v);
                    }
                }
            }
            b.into_iter().collect()
        };
        let mut neg = Vec::new();
        if rng.random_bool(0.4) {
            let p = neg_cands[rng.random_range(0..neg_cands.len())].clone();
            let args = (0..arity[&p]).map(|_| term(&mut rng, &bound)).collect();
            neg.push(NAtom { pred: p, args });
        }
        let mut cmp = Vec::new();
        if !bound.is_empty() && rng.random_bool(0.3) {
            let c = if rng.random_bool(0.5) { Cmp::LessThan } else { Cmp::Distinct };
            cmp.push((c, term(&mut rng, &bound), term(&mut rng, &bound)));
        }
        let head = NAtom { args: (0..arity[&head_pred]).map(|_| term(&mut rng, &bound)).collect(), pred: head_pred };
        rules.push(NRule { head, pos, neg, cmp });
    }
    NProgram { arity, facts, rules }
}

/// A random permutation of `0..n`.
pub fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut v: Vec<usize> = (0..n).collect();
    v.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    v
}

/// Converts an engine tuple of integers.
pub fn ints(args: &[Term]) -> Vec<i64> {
    args.iter().map(|t| t.as_i64().expect("integer term")).collect()
}

// ---------------------------------------------------------------------
// Proof replay

/// Checks a proof tree against the oracle model: leaves are stored facts,
/// true comparisons or absent atoms, and every rule node is an instance of
/// the cited rule whose children are exactly the instantiated body.
pub fn check_proof(d: &Derivation, program: &Program, model: &Model, path: &mut Vec<Atom>) -> Result<(), String> {
    let holds = |a: &Atom| model.get(a.pred.as_ref()).is_some_and(|s| s.contains(&ints(&a.args)));
    match d {
        Derivation::FactLeaf { atom, source, .. } => {
            if *source != FactSource::Stored || !program.facts.iter().any(|f| &f.atom == atom) {
                return Err(format!("{atom} is not a stored fact"));
            }
        }
        Derivation::BuiltinLeaf { atom } => {
            let v = ints(&atom.args);
            let ok = match atom.pred.as_ref() {
                "less_than" => compare(Cmp::LessThan, v[0], v[1]),
                "distinct" => compare(Cmp::Distinct, v[0], v[1]),
                other => return Err(format!("unexpected builtin {other}")),
            };
            if !ok {
                return Err(format!("{atom} is false"));
            }
        }
        Derivation::NegationLeaf { atom } => {
            if holds(atom) {
                return Err(format!("negated {atom} holds"));
            }
        }
        Derivation::RuleNode { rule, head, children } => {
            if path.contains(head) {
                return Err(format!("{head} depends on itself"));
            }
            if rule.is_some() && !holds(head) {
                return Err(format!("{head} is not in the model"));
            }
            if let Some(r) = rule {
                let view = &program.views[r.index];
                if !instance_of(&view.head, &view.body, head, children) {
                    return Err(format!("{head} is not an instance of rule {}", r.index));
                }
            }
            path.push(head.clone());
            for c in children {
                check_proof(c, program, model, path)?;
            }
            path.pop();
        }
    }
    Ok(())
}

fn unify(pattern: &[Term], ground: &[Term], env: &mut BTreeMap<String, Term>) -> bool {
    if pattern.len() != ground.len() {
        return false;
    }
    for (p, g) in pattern.iter().zip(ground) {
        match p {
            Term::Var(v) => match env.get(v.as_ref()) {
                Some(old) if old != g => return false,
                Some(_) => {}
                None => {
                    env.insert(v.to_string(), g.clone());
                }
            },
            _ if p != g => return false,
            _ => {}
        }
    }
    true
}

fn instance_of(rule_head: &Atom, body: &[Literal], head: &Atom, children: &[Derivation]) -> bool {
    let mut env = BTreeMap::new();
    if rule_head.pred != head.pred || !unify(&rule_head.args, &head.args, &mut env) || body.len() != children.len() {
        return false;
    }
    let mut used = vec![false; children.len()];
    assign(body, children, &mut used, env)
}

fn assign(body: &[Literal], children: &[Derivation], used: &mut [bool], env: BTreeMap<String, Term>) -> bool {
    let Some((lit, rest)) = body.split_first() else { return true };
    for (i, c) in children.iter().enumerate() {
        if used[i] || c.atom().pred != lit.atom.pred {
            continue;
        }
        let kind_ok = match c {
            Derivation::NegationLeaf { .. } => lit.negated,
            Derivation::BuiltinLeaf { .. } => lit.is_builtin(),
            _ => !lit.negated && !lit.is_builtin(),
        };
        let mut env2 = env.clone();
        if kind_ok && unify(&lit.atom.args, &c.atom().args, &mut env2) {
            used[i] = true;
            if assign(rest, children, used, env2) {
                return true;
            }
            used[i] = false;
        }
    }
    false
}

// ---------------------------------------------------------------------
// Gregorian calendar

pub fn is_leap(y: i64) -> bool {
    (y % 4 == 0 && y % 100 != 0) || y % 400 == 0
}

pub fn days_in_month(m: i64, y: i64) -> i64 {
    match m {
        4 | 6 | 9 | 11 => 30,
        2 if is_leap(y) => 29,
        2 => 28,
        _ => 31,
    }
}

/// ISO day of week, Monday = 1 through Sunday = 7 (Sakamoto).
pub fn weekday(m: i64, d: i64, y: i64) -> i64 {
    const T: [i64; 12] = [0, 3, 2, 5, 0, 3, 5, 1, 4, 6, 2, 4];
    let y = if m < 3 { y - 1 } else { y };
    match (y + y / 4 - y / 100 + y / 400 + T[(m - 1) as usize] + d) % 7 {
        0 => 7,
        w => w,
    }
}

pub fn next_month(m: i64, y: i64) -> (i64, i64) {
    if m == 12 {
        (1, y + 1)
    } else {
        (m + 1, y)
    }
}

// ---------------------------------------------------------------------
// Ledger

pub const LATE_CHARGE: i64 = 25;
pub const RETURN_FEE: i64 = 30;

/// Balance recomputed from the rules that fired, with amounts taken from
/// the oracle's own state rather than the engine's bindings where the
/// contract fixes them.
#[derive(Clone, Debug)]
pub struct Ledger {
    pub balance: i64,
    pub payment: i64,
}

impl Ledger {
    pub fn new(payment: i64) -> Self {
        Ledger { balance: 0, payment }
    }

    /// The withdrawal amount for the current balance: the payment, capped
    /// at what is owed, never negative.
    pub fn pending(&self) -> i64 {
        self.balance.clamp(0, self.payment)
    }

    pub fn apply(&mut self, rule: &str, binding: &BTreeMap<std::sync::Arc<str>, Term>) {
        let get = |v: &str| binding.get(v).and_then(Term::as_i64).expect("integer binding");
        match rule {
            "invoice" => self.balance += self.payment,
            "apply_payment_amount" => self.balance -= get("N"),
            "apply_overpayment" | "apply_first_overpayment" => self.balance = 0,
            "apply_automatic_payment" => self.balance -= self.pending(),
            "late_charge" => self.balance += LATE_CHARGE,
            "second_return" => self.balance += RETURN_FEE,
            "payment_amount_change" => self.payment = get("N"),
            _ => {}
        }
    }
}
