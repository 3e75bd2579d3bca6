//! Libraries of contract instances: cross-contract queries and what-if
//! analysis under fact overrides.
//!
//! A scenario never touches the stored instances. Each selected contract
//! is evaluated on a derived store and the original is kept as is.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::ast::{Atom, Literal, Term};
use crate::contract::{BundleSources, Contract, CONFIG_FILE, SHARED_FILE};
use crate::diagnostics::{Code, Diagnostic};
use crate::error::{Error, Result};
use crate::parser::check::unsafe_variables;
use crate::parser::{parse_atom, parse_goal};
use crate::reference;
use crate::simulator::{init_simulation, SimConfig, SimState};
use crate::store::Binding;
use crate::transition::binding_json;

#[derive(Clone, Debug, Default)]
pub struct Portfolio {
    pub contracts: BTreeMap<String, SimState>,
    pub shared_rules: Option<String>,
    /// Contracts that failed to load, with the reasons.
    pub failures: BTreeMap<String, Vec<Diagnostic>>,
}

fn error_diagnostics(id: &str, e: Error) -> Vec<Diagnostic> {
    match e {
        Error::Validation(d) => d,
        other => vec![Diagnostic::error(Code::LoadError, other.to_string(), crate::ast::SourceSpan::new(id, (1, 1), (1, 1)))],
    }
}

fn load_one(id: &str, sources: &BundleSources) -> Result<SimState> {
    let contract = Contract::from_sources(id, sources)?;
    let config = contract
        .config
        .clone()
        .ok_or_else(|| Error::Validation(vec![Diagnostic::error(Code::MissingFile, format!("no {CONFIG_FILE}"), crate::ast::SourceSpan::new(id, (1, 1), (1, 1)))]))?;
    init_simulation(Arc::new(contract), config)
}

impl Portfolio {
    /// Loads every bundle in parallel; failures are collected, not fatal.
    pub fn from_bundles(bundles: Vec<(String, BundleSources)>, shared_rules: Option<String>) -> Portfolio {
        let loaded: Vec<(String, Result<SimState>)> = bundles
            .into_par_iter()
            .map(|(id, mut sources)| {
                sources.shared = shared_rules.clone();
                let result = load_one(&id, &sources);
                (id, result)
            })
            .collect();
        let mut portfolio = Portfolio { shared_rules, ..Portfolio::default() };
        for (id, result) in loaded {
            match result {
                Ok(sim) => {
                    portfolio.contracts.insert(id, sim);
                }
                Err(e) => {
                    let diags = error_diagnostics(&id, e);
                    portfolio.failures.insert(id, diags);
                }
            }
        }
        portfolio
    }

    /// One contract per subdirectory (named by the directory), plus an
    /// optional `shared.cdl` at the top level.
    pub fn load_dir(dir: &Path) -> Result<Portfolio> {
        let shared = dir.join(SHARED_FILE);
        let shared = if shared.is_file() { Some(std::fs::read_to_string(shared)?) } else { None };
        let mut subdirs: Vec<_> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_dir())
            .collect();
        subdirs.sort();
        let mut bundles = Vec::new();
        let mut failures = BTreeMap::new();
        for sub in subdirs {
            let id = sub.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            match BundleSources::read_dir(&sub) {
                Ok(s) => bundles.push((id, s)),
                Err(e) => {
                    let diags = error_diagnostics(&id, e);
                    failures.insert(id, diags);
                }
            }
        }
        let mut portfolio = Portfolio::from_bundles(bundles, shared);
        portfolio.failures.extend(failures);
        Ok(portfolio)
    }

    pub fn len(&self) -> usize {
        self.contracts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contracts.is_empty()
    }

    /// Store versions by contract, for isolation checks.
    pub fn versions(&self) -> BTreeMap<String, u64> {
        self.contracts.iter().map(|(id, s)| (id.clone(), s.store.version())).collect()
    }

    /// Advances every contract `times` times; the first error per contract
    /// is returned in the map.
    pub fn advance_all(&mut self, times: usize) -> BTreeMap<String, Error> {
        self.contracts
            .par_iter_mut()
            .filter_map(|(id, sim)| (0..times).try_for_each(|_| sim.advance()).err().map(|e| (id.clone(), e)))
            .collect()
    }

    /// Per-contract answers; a contract lacking a predicate reports
    /// `UnknownPredicate` on its own entry.
    pub fn run_query_all(&self, goal: &[Literal]) -> BTreeMap<String, Result<BTreeSet<Binding>>> {
        self.contracts.par_iter().map(|(id, sim)| (id.clone(), sim.query(goal))).collect()
    }

    pub fn whatif(&self, scenario: &Scenario, goal: &[Literal]) -> DiffReport {
        let entries: Vec<ContractDiff> =
            self.contracts.par_iter().map(|(id, sim)| contract_whatif(id, sim, scenario, goal)).collect();
        DiffReport::new(&scenario.name, entries)
    }
}

/// One fact rewrite: in contracts where `filter` holds, every stored match
/// of `retract` is replaced by `assert`, whose variables come from the
/// match and from the `compute` literals.
#[derive(Clone, Debug, PartialEq)]
pub struct Override {
    pub filter: Vec<Literal>,
    pub retract: Atom,
    pub compute: Vec<Literal>,
    pub assert: Atom,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub overrides: Vec<Override>,
    /// Report a retract pattern with no match as a warning instead of an error.
    pub mismatch_is_warning: bool,
}

#[derive(Deserialize)]
struct RawOverride {
    #[serde(default)]
    filter: Option<String>,
    retract: String,
    #[serde(default)]
    compute: Option<String>,
    assert: String,
}

#[derive(Deserialize)]
struct RawScenario {
    name: String,
    #[serde(default)]
    overrides: Vec<RawOverride>,
    #[serde(default)]
    mismatch_is_warning: bool,
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

impl Override {
    pub fn parse(filter: Option<&str>, retract: &str, compute: Option<&str>, assert: &str) -> Result<Override> {
        let goal = |s: Option<&str>| -> Result<Vec<Literal>> {
            match s.map(str::trim).filter(|s| !s.is_empty()) {
                Some(s) => parse_goal(s).map_err(|d| invalid(d.message)),
                None => Ok(Vec::new()),
            }
        };
        let filter = goal(filter)?;
        // The compute literals read variables bound by the retract pattern,
        // so they are parsed together with it.
        let body = match compute.map(str::trim).filter(|c| !c.is_empty()) {
            Some(c) => goal(Some(&format!("{retract} & {c}")))?,
            None => goal(Some(retract))?,
        };
        let retract_atom = match body.first() {
            Some(l) if !l.negated && !l.is_builtin() => l.atom.clone(),
            _ => return Err(invalid(format!("retract pattern `{retract}` must be a stored predicate"))),
        };
        let compute = body[1..].to_vec();
        let assert_atom = parse_atom(assert).map_err(|d| invalid(d.message))?;
        if !unsafe_variables(&filter, &[]).is_empty() {
            return Err(invalid(format!("filter `{}` is not range-restricted", filter.iter().map(ToString::to_string).collect::<Vec<_>>().join(" & "))));
        }
        let unbound = unsafe_variables(&body, &assert_atom.vars());
        if !unbound.is_empty() {
            let names: Vec<&str> = unbound.iter().map(|v| &**v).collect();
            return Err(invalid(format!("override variable(s) {} are not bound by the retract pattern", names.join(", "))));
        }
        let text = format!("{retract} => {assert}");
        Ok(Override { filter, retract: retract_atom, compute, assert: assert_atom, text })
    }
}

impl Scenario {
    pub fn empty(name: &str) -> Scenario {
        Scenario { name: name.to_string(), overrides: Vec::new(), mismatch_is_warning: false }
    }

    /// `{"name", "overrides": [{"filter", "retract", "compute", "assert"}]}`
    pub fn from_json(text: &str) -> Result<Scenario> {
        let raw: RawScenario = serde_json::from_str(text)?;
        let overrides = raw
            .overrides
            .iter()
            .map(|o| Override::parse(o.filter.as_deref(), &o.retract, o.compute.as_deref(), &o.assert))
            .collect::<Result<Vec<_>>>()?;
        Ok(Scenario { name: raw.name, overrides, mismatch_is_warning: raw.mismatch_is_warning })
    }

    /// Monthly payment raised by `bp` basis points, rounded down.
    pub fn payment_increase(bp: i64) -> Scenario {
        let o = Override::parse(
            Some("instance_of(_, auto_finance_account)"),
            "monthly_payment(A, P)",
            Some(&format!("evaluate(plus(P, div(times(P, {bp}), 10000)), P2)")),
            "monthly_payment(A, P2)",
        )
        .expect("well-formed override");
        Scenario { name: format!("payment +{bp}bp"), overrides: vec![o], mismatch_is_warning: false }
    }
}

fn substitute(term: &Term, b: &Binding) -> Term {
    match term {
        Term::Var(v) => b.get(v).cloned().unwrap_or_else(|| term.clone()),
        Term::Compound(f, args) => Term::Compound(f.clone(), args.iter().map(|a| substitute(a, b)).collect()),
        other => other.clone(),
    }
}

fn substitute_atom(atom: &Atom, b: &Binding) -> Atom {
    Atom { pred: atom.pred.clone(), args: atom.args.iter().map(|t| substitute(t, b)).collect() }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContractDiff {
    pub contract_id: String,
    pub selected: bool,
    pub before: Option<BTreeSet<Binding>>,
    pub after: Option<BTreeSet<Binding>>,
    pub changed: bool,
    /// Engine error (including `OverrideMismatch`) that stopped the analysis.
    pub error: Option<(String, String)>,
    pub warnings: Vec<String>,
}

fn contract_whatif(id: &str, sim: &SimState, scenario: &Scenario, goal: &[Literal]) -> ContractDiff {
    let mut diff = ContractDiff {
        contract_id: id.to_string(),
        selected: false,
        before: None,
        after: None,
        changed: false,
        error: None,
        warnings: Vec::new(),
    };
    let before = match sim.query(goal) {
        Ok(b) => b,
        Err(e) => {
            diff.error = Some((e.code().to_string(), e.to_string()));
            return diff;
        }
    };
    diff.before = Some(before.clone());
    match apply_overrides(id, sim, scenario, &mut diff) {
        Ok(Some(store)) => match sim.evaluator().query(&store, goal) {
            Ok(after) => {
                diff.changed = after != before;
                diff.after = Some(after);
            }
            Err(e) => diff.error = Some((e.code().to_string(), e.to_string())),
        },
        Ok(None) => diff.after = Some(before),
        Err(e) => diff.error = Some((e.code().to_string(), e.to_string())),
    }
    diff
}

/// The rewritten store, or `None` if no override selected this contract.
fn apply_overrides(id: &str, sim: &SimState, scenario: &Scenario, diff: &mut ContractDiff) -> Result<Option<crate::store::FactStore>> {
    let ev = sim.evaluator();
    let snapshot = sim.store.snapshot();
    let mut store = sim.store.clone();
    let mut touched = false;
    for o in &scenario.overrides {
        let model = ev.model(&store)?;
        if !o.filter.is_empty() && !model.holds_goal(&o.filter)? {
            continue;
        }
        touched = true;
        let mut body = vec![Literal::positive(o.retract.clone())];
        body.extend(o.compute.iter().cloned());
        let matches = model.query(&body)?;
        if matches.is_empty() {
            if scenario.mismatch_is_warning {
                diff.warnings.push(format!("override `{}` matched nothing", o.text));
                continue;
            }
            return Err(Error::OverrideMismatch { contract: id.to_string(), pattern: o.retract.to_string() });
        }
        let retracts: Vec<Atom> = matches.iter().map(|b| substitute_atom(&o.retract, b)).collect();
        let adds: Vec<Atom> = matches.iter().map(|b| substitute_atom(&o.assert, b)).collect();
        store = store.apply(&retracts, &adds)?;
    }
    diff.selected = touched;
    // The scratch store shares history with the original; restoring the
    // snapshot proves the original version is still reachable.
    store.restore(&snapshot)?;
    Ok(touched.then_some(store))
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiffReport {
    pub scenario: String,
    /// Ordered by contract id.
    pub entries: Vec<ContractDiff>,
    pub total: usize,
    pub selected: usize,
    pub changed: usize,
    pub errors: usize,
    /// Answers gained and lost across all contracts.
    pub answers_added: usize,
    pub answers_removed: usize,
}

fn bindings_text(b: &Option<BTreeSet<Binding>>) -> String {
    let Some(set) = b else { return String::new() };
    set.iter()
        .map(|row| {
            let parts: Vec<String> = row.iter().map(|(k, v)| format!("{k}={v}")).collect();
            format!("{{{}}}", parts.join(","))
        })
        .collect::<Vec<_>>()
        .join(" ")
}

impl DiffReport {
    fn new(scenario: &str, mut entries: Vec<ContractDiff>) -> DiffReport {
        entries.sort_by(|a, b| a.contract_id.cmp(&b.contract_id));
        let mut added = 0;
        let mut removed = 0;
        for e in &entries {
            if let (Some(b), Some(a)) = (&e.before, &e.after) {
                added += a.difference(b).count();
                removed += b.difference(a).count();
            }
        }
        DiffReport {
            scenario: scenario.to_string(),
            total: entries.len(),
            selected: entries.iter().filter(|e| e.selected).count(),
            changed: entries.iter().filter(|e| e.changed).count(),
            errors: entries.iter().filter(|e| e.error.is_some()).count(),
            answers_added: added,
            answers_removed: removed,
            entries,
        }
    }

    pub fn to_json(&self) -> Value {
        let set = |b: &Option<BTreeSet<Binding>>| b.as_ref().map(|s| s.iter().map(binding_json).collect::<Vec<_>>());
        json!({
            "scenario": self.scenario,
            "aggregate": {
                "total": self.total,
                "selected": self.selected,
                "changed": self.changed,
                "errors": self.errors,
                "answers_added": self.answers_added,
                "answers_removed": self.answers_removed,
            },
            "contracts": self.entries.iter().map(|e| json!({
                "contract_id": e.contract_id,
                "selected": e.selected,
                "changed": e.changed,
                "before": set(&e.before),
                "after": set(&e.after),
                "error": e.error.as_ref().map(|(code, message)| json!({"code": code, "message": message})),
                "warnings": e.warnings,
            })).collect::<Vec<_>>(),
        })
    }

    /// `contract_id,changed,before,after`
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["contract_id", "changed", "before", "after"]).map_err(|e| invalid(e.to_string()))?;
        for e in &self.entries {
            let changed = if e.changed { "true" } else { "false" };
            w.write_record([e.contract_id.as_str(), changed, &bindings_text(&e.before), &bindings_text(&e.after)])
                .map_err(|e| invalid(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| invalid(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| invalid(e.to_string()))
    }
}

/// Parameters of one generated instance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GeneratedInstance {
    pub id: String,
    pub config: SimConfig,
    pub interest_rate_bp: i64,
}

/// Deterministic synthetic instances of the reference agreement with
/// varied payment, due day, dates and an added interest rate fact.
pub fn generate_instances(count: usize, seed: u64) -> Vec<GeneratedInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = count.max(1).to_string().len().max(4);
    (0..count)
        .map(|i| {
            let start_year = rng.random_range(2023..=2025);
            let start = [rng.random_range(1..=12), rng.random_range(1..=28), start_year];
            let end = [start[0], start[1], start_year + rng.random_range(2..=5)];
            let mut config = SimConfig::new(start, rng.random_range(20..=400) * 5, rng.random_range(1..=31), end);
            config.grace_days = rng.random_range(5..=15);
            config.externals = vec!["accounts.json".to_string()];
            GeneratedInstance { id: format!("apa-{i:0width$}"), config, interest_rate_bp: rng.random_range(200..=1200) }
        })
        .collect()
}

impl GeneratedInstance {
    /// The reference bundle with this instance's config and rate fact.
    pub fn bundle(&self) -> BundleSources {
        let mut sources = reference::reference_sources();
        let facts = sources.facts.take().unwrap_or_default();
        sources.facts = Some(format!("{facts}\ninterest_rate_bp(afa,{})\n", self.interest_rate_bp));
        sources.config = Some(serde_json::to_string_pretty(&self.config).expect("config serializes"));
        sources
    }
}

pub fn generated_portfolio(count: usize, seed: u64) -> Portfolio {
    let bundles = generate_instances(count, seed).into_iter().map(|g| (g.id.clone(), g.bundle())).collect();
    Portfolio::from_bundles(bundles, None)
}

/// Writes generated instances as bundle subdirectories of `dir`.
pub fn write_instances(dir: &Path, instances: &[GeneratedInstance]) -> Result<()> {
    for g in instances {
        let sub = dir.join(&g.id);
        std::fs::create_dir_all(&sub)?;
        let b = g.bundle();
        let files = [
            ("contract.cdl", b.contract),
            ("facts.cdl", b.facts),
            ("clauses.json", b.clauses),
            ("faq.json", b.faq),
            ("config.json", b.config),
        ];
        for (name, text) in files {
            if let Some(text) = text {
                std::fs::write(sub.join(name), text)?;
            }
        }
        for (name, text) in &b.externals {
            std::fs::write(sub.join(name), text)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn goal(s: &str) -> Vec<Literal> {
        parse_goal(s).unwrap()
    }

    #[test]
    fn three_instances_answer_individually() {
        let p = generated_portfolio(3, 7);
        assert_eq!(p.len(), 3);
        let results = p.run_query_all(&goal("monthly_payment(A, P)"));
        assert!(results.values().all(|r| r.as_ref().unwrap().len() == 1));
        let typo = p.run_query_all(&goal("monthly_paymnet(A, P)"));
        assert!(typo.values().all(|r| matches!(r, Err(Error::UnknownPredicate(_)))));
    }

    #[test]
    fn unpaid_portfolio_goes_overdue() {
        let mut p = generated_portfolio(3, 11);
        assert!(p.advance_all(6).is_empty());
        let results = p.run_query_all(&goal("status_overdue"));
        assert!(results.values().all(|r| r.as_ref().unwrap().len() == 1));
    }

    #[test]
    fn empty_cases() {
        let p = generated_portfolio(3, 1);
        let r = p.whatif(&Scenario::empty("none"), &goal("obligation_total(A, T)"));
        assert_eq!((r.total, r.changed, r.selected), (3, 0, 0));
        let empty = Portfolio::default();
        let r = empty.whatif(&Scenario::payment_increase(1000), &goal("obligation_total(A, T)"));
        assert!(r.entries.is_empty());
    }

    #[test]
    fn payment_increase_changes_totals_without_mutation() {
        let p = generated_portfolio(5, 3);
        let versions = p.versions();
        let r = p.whatif(&Scenario::payment_increase(1000), &goal("obligation_total(A, T)"));
        assert_eq!(p.versions(), versions);
        assert_eq!(r.changed, 5);
        for (e, g) in r.entries.iter().zip(generate_instances(5, 3)) {
            let p0 = g.config.monthly_payment;
            let t = |set: &Option<BTreeSet<Binding>>| set.as_ref().unwrap().iter().next().unwrap()["T"].as_i64().unwrap();
            assert_eq!(t(&e.before), p0);
            assert_eq!(t(&e.after), p0 + p0 * 1000 / 10000);
        }
        let csv = r.to_csv().unwrap();
        assert_eq!(csv.lines().count(), 6);
        assert!(csv.starts_with("contract_id,changed,before,after\n"));
    }

    #[test]
    fn mismatch_is_reported_per_contract() {
        let p = generated_portfolio(2, 5);
        let mut s = Scenario {
            name: "x".into(),
            overrides: vec![Override::parse(None, "interest_rate_bp(A, 1)", None, "interest_rate_bp(A, 2)").unwrap()],
            mismatch_is_warning: false,
        };
        let r = p.whatif(&s, &goal("interest_rate_bp(A, R)"));
        assert_eq!(r.errors, 2);
        assert_eq!(r.entries[0].error.as_ref().unwrap().0, "override_mismatch");
        s.mismatch_is_warning = true;
        let r = p.whatif(&s, &goal("interest_rate_bp(A, R)"));
        assert_eq!(r.errors, 0);
        assert_eq!(r.entries[0].warnings.len(), 1);
    }

    #[test]
    fn unsafe_templates_are_rejected() {
        assert!(Override::parse(None, "monthly_payment(A, P)", None, "monthly_payment(A, Q)").is_err());
        let json = r#"{"name":"rate","overrides":[{"retract":"interest_rate_bp(A,R)","compute":"evaluate(plus(R,50),R2)","assert":"interest_rate_bp(A,R2)"}]}"#;
        assert_eq!(Scenario::from_json(json).unwrap().overrides.len(), 1);
    }

    #[test]
    fn directory_load_with_a_broken_contract() {
        let dir = tempfile::tempdir().unwrap();
        write_instances(dir.path(), &generate_instances(3, 2)).unwrap();
        let broken = dir.path().join("apa-0001/contract.cdl");
        std::fs::write(&broken, "p :- ~q\nq :- ~p\n").unwrap();
        let p = Portfolio::load_dir(dir.path()).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p.failures.len(), 1);
        assert_eq!(p.failures["apa-0001"][0].code, Code::Unstratifiable);
        let empty = tempfile::tempdir().unwrap();
        assert!(Portfolio::load_dir(empty.path()).unwrap().is_empty());
    }

    #[test]
    fn shared_rules_are_visible_to_every_contract() {
        let dir = tempfile::tempdir().unwrap();
        write_instances(dir.path(), &generate_instances(2, 4)).unwrap();
        std::fs::write(dir.path().join("shared.cdl"), "high_rate(A) :- interest_rate_bp(A,R) & leq(600,R)\nany_rate :- interest_rate_bp(A,R)\n").unwrap();
        let p = Portfolio::load_dir(dir.path()).unwrap();
        let r = p.run_query_all(&goal("any_rate"));
        assert!(r.values().all(|x| x.as_ref().unwrap().len() == 1));
    }
}
