//! Synchronous execution of dynamic rules.
//!
//! One round evaluates every dynamic rule against the pre-state's perfect
//! model, then applies all retractions followed by all additions as a
//! single store mutation. Rule declaration order never affects the
//! resulting store; it cannot affect the record either, because fired
//! instances are listed in `(rule_id, binding)` order.

use std::collections::BTreeSet;

use serde_json::{json, Value};

use crate::ast::*;
use crate::error::{Error, Result};
use crate::eval::{instantiate_atom, Evaluator, Model};
use crate::parser::parse_ground_atom;
use crate::store::{Binding, FactStore};

pub const DEFAULT_MAX_ROUNDS: usize = 100;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct FiredInstance {
    pub rule_id: Symbol,
    pub binding: Binding,
    pub adds: BTreeSet<Atom>,
    pub retracts: BTreeSet<Atom>,
}

impl FiredInstance {
    pub fn to_json(&self) -> Value {
        json!({
            "rule_id": &*self.rule_id,
            "binding": binding_json(&self.binding),
            "adds": self.adds.iter().map(ToString::to_string).collect::<Vec<_>>(),
            "retracts": self.retracts.iter().map(ToString::to_string).collect::<Vec<_>>(),
        })
    }
}

pub fn binding_json(binding: &Binding) -> Value {
    Value::Object(binding.iter().map(|(k, v)| (k.to_string(), v.to_json())).collect())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StepRecord {
    pub round_index: usize,
    pub fired: Vec<FiredInstance>,
    pub pre_version: u64,
    pub post_version: u64,
    pub injected_events: Vec<Atom>,
}

impl StepRecord {
    /// One JSON object with keys in a fixed (sorted) order.
    pub fn to_json(&self) -> Value {
        json!({
            "round_index": self.round_index,
            "pre_version": self.pre_version,
            "post_version": self.post_version,
            "injected_events": self.injected_events.iter().map(ToString::to_string).collect::<Vec<_>>(),
            "fired": self.fired.iter().map(FiredInstance::to_json).collect::<Vec<_>>(),
        })
    }

    pub fn to_json_line(&self) -> String {
        self.to_json().to_string()
    }

    /// Inverse of [`StepRecord::to_json`]. Binding values come back through
    /// [`Term::from_json`], so constants and strings that print alike merge.
    pub fn from_json(value: &Value) -> Result<StepRecord> {
        let bad = |what: &str| Error::InvalidInput(format!("step record: bad `{what}`"));
        let num = |key: &str| value[key].as_u64().ok_or_else(|| bad(key));
        let atoms = |v: &Value, key: &str| -> Result<Vec<Atom>> {
            v[key]
                .as_array()
                .ok_or_else(|| bad(key))?
                .iter()
                .map(|a| {
                    let text = a.as_str().ok_or_else(|| bad(key))?;
                    parse_ground_atom(text).map_err(|d| Error::InvalidInput(d.message))
                })
                .collect()
        };
        let mut fired = Vec::new();
        for f in value["fired"].as_array().ok_or_else(|| bad("fired"))? {
            let mut binding = Binding::new();
            for (k, v) in f["binding"].as_object().ok_or_else(|| bad("binding"))? {
                binding.insert(sym(k), Term::from_json(v)?);
            }
            fired.push(FiredInstance {
                rule_id: sym(f["rule_id"].as_str().ok_or_else(|| bad("rule_id"))?),
                binding,
                adds: atoms(f, "adds")?.into_iter().collect(),
                retracts: atoms(f, "retracts")?.into_iter().collect(),
            });
        }
        Ok(StepRecord {
            round_index: usize::try_from(num("round_index")?).map_err(|_| bad("round_index"))?,
            fired,
            pre_version: num("pre_version")?,
            post_version: num("post_version")?,
            injected_events: atoms(value, "injected_events")?,
        })
    }
}

/// Rule instances whose condition holds in `model`, with effects
/// instantiated, in canonical order.
pub fn applicable_in(model: &Model<'_>) -> Result<Vec<FiredInstance>> {
    let ev = model.evaluator();
    let program = ev.program();
    let mut out = BTreeSet::new();
    for rule in &ev.dynamics {
        let source = &program.dynamics[rule.index];
        for env in model.solutions(&rule.body)? {
            let mut adds = BTreeSet::new();
            let mut retracts = BTreeSet::new();
            for (is_add, pred, args) in &rule.effects {
                let atom = instantiate_atom(pred, args, &env);
                if *is_add {
                    adds.insert(atom);
                } else {
                    retracts.insert(atom);
                }
            }
            // An instance that both retracts and adds one atom leaves it present.
            retracts.retain(|a| !adds.contains(a));
            out.insert(FiredInstance { rule_id: source.rule_id.clone(), binding: rule.body.binding(&env), adds, retracts });
        }
    }
    Ok(out.into_iter().collect())
}

pub fn applicable_instances(ev: &Evaluator, store: &FactStore) -> Result<Vec<FiredInstance>> {
    applicable_in(&ev.model(store)?)
}

/// One synchronized round. When nothing fires the store is returned
/// unchanged (same version).
pub fn step(ev: &Evaluator, store: &FactStore) -> Result<(FactStore, StepRecord)> {
    let fired = applicable_instances(ev, store)?;
    let pre_version = store.version();
    if fired.is_empty() {
        let record = StepRecord { round_index: 0, fired, pre_version, post_version: pre_version, injected_events: Vec::new() };
        return Ok((store.clone(), record));
    }
    let mut adds: BTreeSet<Atom> = BTreeSet::new();
    let mut retracts: BTreeSet<Atom> = BTreeSet::new();
    for f in &fired {
        adds.extend(f.adds.iter().cloned());
        retracts.extend(f.retracts.iter().cloned());
    }
    if let Some(atom) = adds.intersection(&retracts).next() {
        let by = |pick: fn(&FiredInstance) -> &BTreeSet<Atom>| {
            fired.iter().find(|f| pick(f).contains(atom)).map(|f| f.rule_id.to_string()).unwrap_or_default()
        };
        return Err(Error::ConflictingEffects { atom: atom.clone(), added_by: by(|f| &f.adds), retracted_by: by(|f| &f.retracts) });
    }
    let retracts: Vec<Atom> = retracts.into_iter().collect();
    let adds: Vec<Atom> = adds.into_iter().collect();
    let next = store.apply(&retracts, &adds)?;
    let record = StepRecord { round_index: 0, fired, pre_version, post_version: next.version(), injected_events: Vec::new() };
    Ok((next, record))
}

/// Steps until a round fires nothing. Only rounds that fired are recorded.
pub fn run_until_quiescent(ev: &Evaluator, store: &FactStore, max_rounds: usize) -> Result<(FactStore, Vec<StepRecord>)> {
    let mut current = store.clone();
    let mut records = Vec::new();
    for round in 0..max_rounds {
        let (next, mut record) = step(ev, &current)?;
        if record.fired.is_empty() {
            return Ok((current, records));
        }
        record.round_index = round;
        records.push(record);
        current = next;
    }
    // One more evaluation decides whether the last allowed round was final.
    if applicable_instances(ev, &current)?.is_empty() {
        Ok((current, records))
    } else {
        Err(Error::NonQuiescent(max_rounds))
    }
}

/// Asserts an event fact. Only `#event`-declared predicates qualify.
pub fn inject_event(program: &Program, store: &FactStore, event: &Atom) -> Result<FactStore> {
    let pred = event.pred_id();
    if !program.is_event(&pred) {
        return Err(Error::NotAnEvent(pred));
    }
    store.assert_fact(event)
}
