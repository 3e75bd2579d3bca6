//! Ground fact store with snapshots and external providers.
//!
//! A [`FactStore`] is a persistent value: every mutation returns a new store
//! and leaves the original untouched. Facts are kept per predicate in a
//! sorted set of argument tuples, which doubles as the first-argument index
//! (a range scan over tuples starting with a given term).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use crate::ast::*;
use crate::builtins;
use crate::error::{Error, Result};

pub type Tuple = Vec<Term>;
pub type Relation = BTreeSet<Tuple>;
pub type Binding = BTreeMap<Symbol, Term>;

/// Calls `f` for each tuple of `rel`, restricted to tuples whose first
/// argument is `first` when given.
pub fn scan_relation<E>(rel: &Relation, first: Option<&Term>, mut f: impl FnMut(&Tuple) -> Result<(), E>) -> Result<(), E> {
    match first {
        None => rel.iter().try_for_each(f),
        Some(first) => {
            for t in rel.range(vec![first.clone()]..) {
                if t.first() != Some(first) {
                    break;
                }
                f(t)?;
            }
            Ok(())
        }
    }
}

/// Read-only source of ground tuples for one predicate.
pub trait ExternalProvider: Send + Sync {
    /// Human-readable source name, reported in provenance.
    fn descriptor(&self) -> &str;

    /// Tuples matching `pattern`, where `Some` positions are bound.
    fn lookup(&self, pred: &PredId, pattern: &[Option<Term>]) -> Result<Vec<Tuple>>;
}

/// Provider backed by a JSON object `{"pred": [[arg, ...], ...]}`.
pub struct JsonFileProvider {
    descriptor: String,
    tables: BTreeMap<PredId, Relation>,
}

impl JsonFileProvider {
    pub fn from_json(descriptor: &str, text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let object = value
            .as_object()
            .ok_or_else(|| Error::InvalidInput(format!("{descriptor}: expected a JSON object of predicates")))?;
        let mut tables: BTreeMap<PredId, Relation> = BTreeMap::new();
        for (name, rows) in object {
            let rows = rows
                .as_array()
                .ok_or_else(|| Error::InvalidInput(format!("{descriptor}: `{name}` must map to an array of rows")))?;
            if rows.is_empty() {
                continue;
            }
            for row in rows {
                let row = row
                    .as_array()
                    .ok_or_else(|| Error::InvalidInput(format!("{descriptor}: rows of `{name}` must be arrays")))?;
                let tuple = row.iter().map(Term::from_json).collect::<Result<Tuple>>()?;
                tables.entry(PredId::new(name, tuple.len())).or_default().insert(tuple);
            }
        }
        Ok(JsonFileProvider { descriptor: descriptor.to_string(), tables })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|_| Error::MissingFile(path.display().to_string()))?;
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        Self::from_json(&name, &text)
    }

    pub fn predicates(&self) -> impl Iterator<Item = &PredId> {
        self.tables.keys()
    }
}

impl ExternalProvider for JsonFileProvider {
    fn descriptor(&self) -> &str {
        &self.descriptor
    }

    fn lookup(&self, pred: &PredId, pattern: &[Option<Term>]) -> Result<Vec<Tuple>> {
        let Some(rel) = self.tables.get(pred) else { return Ok(Vec::new()) };
        let mut out = Vec::new();
        scan_relation(rel, pattern.first().and_then(Option::as_ref), |t| {
            if matches_pattern(t, pattern) {
                out.push(t.clone());
            }
            Ok::<_, Error>(())
        })?;
        Ok(out)
    }
}

fn matches_pattern(tuple: &[Term], pattern: &[Option<Term>]) -> bool {
    tuple.len() == pattern.len() && tuple.iter().zip(pattern).all(|(t, p)| p.as_ref().is_none_or(|p| p == t))
}

pub type ProviderRef = Arc<dyn ExternalProvider>;

/// Memoizes provider answers for the duration of one evaluation, so a
/// single query or step sees a consistent external world.
#[derive(Default)]
pub struct ExternalCache {
    answers: Mutex<HashMap<(PredId, Vec<Option<Term>>), Arc<Vec<Tuple>>>>,
}

impl ExternalCache {
    pub fn lookup(&self, provider: &dyn ExternalProvider, pred: &PredId, pattern: &[Option<Term>]) -> Result<Arc<Vec<Tuple>>> {
        let key = (pred.clone(), pattern.to_vec());
        if let Some(hit) = self.answers.lock().expect("cache lock").get(&key) {
            return Ok(hit.clone());
        }
        let rows = Arc::new(provider.lookup(pred, pattern)?);
        self.answers.lock().expect("cache lock").insert(key, rows.clone());
        Ok(rows)
    }
}

#[derive(Clone)]
pub struct FactStore {
    facts: Arc<BTreeMap<PredId, Relation>>,
    version: u64,
    roles: Arc<Signature>,
    externals: Arc<BTreeMap<PredId, ProviderRef>>,
    /// Highest version produced by any store derived from the same root.
    family_max: Arc<AtomicU64>,
}

impl fmt::Debug for FactStore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FactStore")
            .field("version", &self.version)
            .field("facts", &self.facts)
            .field("externals", &self.externals.keys().collect::<Vec<_>>())
            .finish()
    }
}

impl Default for FactStore {
    fn default() -> Self {
        FactStore::new(Signature::new())
    }
}

/// Opaque capture of a store's facts and version.
#[derive(Clone, Debug)]
pub struct Snapshot {
    facts: Arc<BTreeMap<PredId, Relation>>,
    pub version: u64,
}

impl Snapshot {
    pub fn atoms(&self) -> Vec<Atom> {
        atoms_of(&self.facts)
    }
}

fn atoms_of(facts: &BTreeMap<PredId, Relation>) -> Vec<Atom> {
    facts
        .iter()
        .flat_map(|(p, rel)| rel.iter().map(move |t| Atom { pred: p.name.clone(), args: t.clone() }))
        .collect()
}

impl FactStore {
    /// Empty store. `roles` names the program's predicates; predicates it
    /// does not mention are accepted as base predicates.
    pub fn new(roles: Signature) -> Self {
        FactStore {
            facts: Arc::new(BTreeMap::new()),
            version: 0,
            roles: Arc::new(roles),
            externals: Arc::new(BTreeMap::new()),
            family_max: Arc::new(AtomicU64::new(0)),
        }
    }

    /// Store seeded with the program's facts at version 0.
    pub fn for_program(program: &Program) -> Result<Self> {
        let mut store = FactStore::new(program.predicate_signature()?);
        let mut facts: BTreeMap<PredId, Relation> = BTreeMap::new();
        for f in &program.facts {
            store.check_base(&f.atom)?;
            facts.entry(f.atom.pred_id()).or_default().insert(f.atom.args.clone());
        }
        store.facts = Arc::new(facts);
        Ok(store)
    }

    /// Registers `provider` for `pred`. The predicate must not be a view
    /// and must have no stored facts.
    pub fn with_provider(mut self, pred: PredId, provider: ProviderRef) -> Result<Self> {
        match self.roles.get(&pred) {
            Some(Role::View) => return Err(Error::RoleConflict(pred)),
            _ if self.facts.contains_key(&pred) => return Err(Error::RoleConflict(pred)),
            _ => {}
        }
        let mut roles = (*self.roles).clone();
        roles.insert(pred.clone(), Role::External);
        self.roles = Arc::new(roles);
        Arc::make_mut(&mut self.externals).insert(pred, provider);
        Ok(self)
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn role(&self, pred: &PredId) -> Option<Role> {
        if self.externals.contains_key(pred) {
            return Some(Role::External);
        }
        self.roles.get(pred).copied().or_else(|| self.facts.contains_key(pred).then_some(Role::Base))
    }

    pub fn roles(&self) -> &Signature {
        &self.roles
    }

    pub fn provider(&self, pred: &PredId) -> Option<&ProviderRef> {
        self.externals.get(pred)
    }

    pub fn relation(&self, pred: &PredId) -> Option<&Relation> {
        self.facts.get(pred)
    }

    pub fn contains(&self, atom: &Atom) -> bool {
        self.facts.get(&atom.pred_id()).is_some_and(|r| r.contains(&atom.args))
    }

    pub fn len(&self) -> usize {
        self.facts.values().map(BTreeSet::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All stored facts, ordered by predicate then arguments.
    pub fn atoms(&self) -> Vec<Atom> {
        atoms_of(&self.facts)
    }

    pub fn facts_by_predicate(&self) -> &BTreeMap<PredId, Relation> {
        &self.facts
    }

    fn check_base(&self, atom: &Atom) -> Result<()> {
        if !atom.is_ground() {
            return Err(Error::NonGround(atom.clone()));
        }
        if atom.args.iter().any(|a| matches!(a, Term::Compound(..))) {
            return Err(Error::InvalidInput(format!("fact `{atom}` contains a compound term")));
        }
        let pred = atom.pred_id();
        if builtins::is_builtin_name(&pred.name) {
            return Err(Error::NotBasePredicate(pred));
        }
        match self.role(&pred) {
            Some(Role::View) | Some(Role::External) => Err(Error::NotBasePredicate(pred)),
            _ => Ok(()),
        }
    }

    /// One mutation batch: retractions first, then additions. The version
    /// advances by exactly one even if the fact set is unchanged.
    pub fn apply(&self, retracts: &[Atom], adds: &[Atom]) -> Result<FactStore> {
        for a in retracts.iter().chain(adds) {
            self.check_base(a)?;
        }
        let mut facts = (*self.facts).clone();
        for a in retracts {
            let pred = a.pred_id();
            if let Some(rel) = facts.get_mut(&pred) {
                rel.remove(&a.args);
                if rel.is_empty() {
                    facts.remove(&pred);
                }
            }
        }
        for a in adds {
            facts.entry(a.pred_id()).or_default().insert(a.args.clone());
        }
        let version = self.version + 1;
        self.family_max.fetch_max(version, Ordering::SeqCst);
        Ok(FactStore { facts: Arc::new(facts), version, ..self.clone() })
    }

    pub fn assert_fact(&self, atom: &Atom) -> Result<FactStore> {
        self.apply(&[], std::slice::from_ref(atom))
    }

    pub fn retract_fact(&self, atom: &Atom) -> Result<FactStore> {
        self.apply(std::slice::from_ref(atom), &[])
    }

    /// Bindings of the pattern's variables against stored facts or the
    /// registered provider.
    pub fn lookup(&self, pattern: &Atom) -> Result<BTreeSet<Binding>> {
        let pred = pattern.pred_id();
        let bound: Vec<Option<Term>> = pattern.args.iter().map(|a| a.is_ground().then(|| a.clone())).collect();
        let rows: Vec<Tuple> = match self.role(&pred) {
            None => return Err(Error::UnknownPredicate(pred)),
            Some(Role::View) => return Err(Error::NotBasePredicate(pred)),
            Some(Role::External) => {
                let provider = self.externals.get(&pred).ok_or_else(|| Error::ExternalUnavailable(pred.clone()))?;
                provider.lookup(&pred, &bound)?
            }
            Some(Role::Base) => {
                let mut rows = Vec::new();
                if let Some(rel) = self.facts.get(&pred) {
                    scan_relation(rel, bound.first().and_then(Option::as_ref), |t| {
                        rows.push(t.clone());
                        Ok::<_, Error>(())
                    })?;
                }
                rows
            }
        };
        Ok(rows.iter().filter_map(|row| unify_pattern(&pattern.args, row)).collect())
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot { facts: self.facts.clone(), version: self.version }
    }

    /// Store whose facts equal the snapshot's. Providers and roles are kept
    /// from `self`.
    pub fn restore(&self, snapshot: &Snapshot) -> Result<FactStore> {
        let latest = self.family_max.load(Ordering::SeqCst);
        if snapshot.version > latest {
            return Err(Error::StaleSnapshot { snapshot: snapshot.version, latest });
        }
        Ok(FactStore { facts: snapshot.facts.clone(), version: snapshot.version, ..self.clone() })
    }
}

/// Matches pattern arguments against a ground tuple, binding variables.
/// Repeated variables must match equal values.
pub fn unify_pattern(pattern: &[Term], tuple: &[Term]) -> Option<Binding> {
    if pattern.len() != tuple.len() {
        return None;
    }
    let mut binding = Binding::new();
    for (p, t) in pattern.iter().zip(tuple) {
        match p {
            Term::Var(v) => match binding.get(v) {
                Some(existing) if existing != t => return None,
                Some(_) => {}
                None => {
                    binding.insert(v.clone(), t.clone());
                }
            },
            ground if ground == t => {}
            _ => return None,
        }
    }
    Some(binding)
}
