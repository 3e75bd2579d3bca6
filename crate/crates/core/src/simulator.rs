//! Lifecycle simulation of one contract instance.
//!
//! Time advances by injecting the `tick` event; the contract's own rules
//! decide what a tick means. Every command (advance or event) ends with a
//! run to quiescence, so the store between commands is always stable.

use std::sync::Arc;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::ast::{is_constant_symbol, Atom, Literal, PredId, Role, Term};
use crate::builtins::Calendar;
use crate::contract::Contract;
use crate::error::{Error, Result};
use crate::eval::{EvalOptions, Evaluator};
use crate::parser::parse_ground_atom;
use crate::store::FactStore;
use crate::transition::{inject_event, run_until_quiescent, StepRecord, DEFAULT_MAX_ROUNDS};

pub const STATUS_LABELS: [&str; 5] = ["active", "invoiced", "payment_pending", "overdue", "terminated"];
pub const TICK: &str = "tick";

/// Form data and fixtures for one instance. Dates are `[month, day, year]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimConfig {
    pub start_date: [i64; 3],
    pub monthly_payment: i64,
    pub invoice_day: i64,
    pub termination_date: [i64; 3],
    #[serde(default = "default_grace_days")]
    pub grace_days: i64,
    #[serde(default = "default_account")]
    pub account_id: String,
    #[serde(default)]
    pub holidays: Vec<[i64; 3]>,
    #[serde(default)]
    pub externals: Vec<String>,
}

fn default_grace_days() -> i64 {
    10
}

fn default_account() -> String {
    "afa".to_string()
}

fn to_date(d: &[i64; 3]) -> Option<NaiveDate> {
    NaiveDate::from_ymd_opt(i32::try_from(d[2]).ok()?, u32::try_from(d[0]).ok()?, u32::try_from(d[1]).ok()?)
}

impl SimConfig {
    pub fn new(start_date: [i64; 3], monthly_payment: i64, invoice_day: i64, termination_date: [i64; 3]) -> Self {
        SimConfig {
            start_date,
            monthly_payment,
            invoice_day,
            termination_date,
            grace_days: default_grace_days(),
            account_id: default_account(),
            holidays: Vec::new(),
            externals: Vec::new(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SimConfig = serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        let Some(start) = to_date(&self.start_date) else { return bad(format!("start_date {:?} is not a date", self.start_date)) };
        let Some(end) = to_date(&self.termination_date) else {
            return bad(format!("termination_date {:?} is not a date", self.termination_date));
        };
        if start >= end {
            return bad("start_date must be before termination_date".into());
        }
        if !(1..=31).contains(&self.invoice_day) {
            return bad(format!("invoice_day {} is outside 1..31", self.invoice_day));
        }
        if self.monthly_payment < 0 || self.grace_days < 0 {
            return bad("monthly_payment and grace_days must be non-negative".into());
        }
        if !is_constant_symbol(&self.account_id) {
            return bad(format!("account_id `{}` is not a constant symbol", self.account_id));
        }
        if let Some(h) = self.holidays.iter().find(|h| to_date(h).is_none()) {
            return bad(format!("holiday {h:?} is not a date"));
        }
        Ok(())
    }

    pub fn calendar(&self) -> Calendar {
        Calendar::with_holidays(self.holidays.iter().filter_map(to_date))
    }

    /// Facts seeded into the store at initialization.
    pub fn form_facts(&self) -> Vec<Atom> {
        let a = || Term::constant(&self.account_id);
        let i = Term::int;
        let [m, d, y] = self.start_date;
        let [tm, td, ty] = self.termination_date;
        vec![
            Atom::new("today", vec![i(m), i(d), i(y)]),
            Atom::new("monthly_payment", vec![a(), i(self.monthly_payment)]),
            Atom::new("has_invoice_day", vec![a(), i(self.invoice_day)]),
            Atom::new("has_termination_date", vec![a(), i(tm), i(td), i(ty)]),
            Atom::new("current_balance", vec![a(), i(0)]),
            Atom::new("pending_withdrawal", vec![a(), i(0)]),
            Atom::new("grace_days", vec![a(), i(self.grace_days)]),
        ]
    }
}

/// A script command.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Command {
    Advance,
    Event(Atom),
}

impl Command {
    /// `advance` or `event <atom>`; blank lines and `%` comments yield `None`.
    pub fn parse_line(line: &str) -> Result<Option<Command>> {
        let line = line.trim();
        if line.is_empty() || line.starts_with('%') {
            return Ok(None);
        }
        if line == "advance" {
            return Ok(Some(Command::Advance));
        }
        if let Some(rest) = line.strip_prefix("event ") {
            let atom = parse_ground_atom(rest.trim()).map_err(|d| Error::InvalidInput(d.message))?;
            return Ok(Some(Command::Event(atom)));
        }
        Err(Error::InvalidInput(format!("unknown script command `{line}`")))
    }

    pub fn parse_script(text: &str) -> Result<Vec<Command>> {
        text.lines().filter_map(|l| Command::parse_line(l).transpose()).collect()
    }
}

fn required_base() -> [PredId; 6] {
    [
        PredId::new("today", 3),
        PredId::new("monthly_payment", 2),
        PredId::new("has_invoice_day", 2),
        PredId::new("has_termination_date", 4),
        PredId::new("current_balance", 2),
        PredId::new("pending_withdrawal", 2),
    ]
}

fn status_view(label: &str) -> PredId {
    PredId::new(&format!("status_{label}"), 0)
}

/// Fails with `IncompatibleContract` unless the program declares the
/// seeded form predicates as base relations, the five status views and
/// the `tick` event.
pub fn check_compatible(program: &crate::ast::Program) -> Result<()> {
    let sig = program.predicate_signature()?;
    let mut missing = Vec::new();
    for p in required_base() {
        if sig.get(&p) != Some(&Role::Base) {
            missing.push(p.to_string());
        }
    }
    for label in STATUS_LABELS {
        let p = status_view(label);
        if sig.get(&p) != Some(&Role::View) {
            missing.push(p.to_string());
        }
    }
    if !program.is_event(&PredId::new(TICK, 0)) {
        missing.push("#event tick/0".to_string());
    }
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::IncompatibleContract(format!("missing {}", missing.join(", "))))
    }
}

/// Exactly one status view must hold.
pub fn status_of(ev: &Evaluator, store: &FactStore) -> Result<&'static str> {
    let model = ev.model(store)?;
    let mut holding = Vec::new();
    for label in STATUS_LABELS {
        let view = status_view(label);
        if model.contains(&Atom::new(&view.name, Vec::new()))? {
            holding.push(label);
        }
    }
    match holding.as_slice() {
        [one] => Ok(one),
        _ => Err(Error::AmbiguousStatus(holding.iter().map(|s| s.to_string()).collect())),
    }
}

#[derive(Clone)]
pub struct SimState {
    pub contract: Arc<Contract>,
    pub config: SimConfig,
    evaluator: Arc<Evaluator>,
    pub store: FactStore,
    pub history: Vec<StepRecord>,
    pub status: &'static str,
    queued: Vec<Atom>,
}

impl std::fmt::Debug for SimState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SimState")
            .field("contract", &self.contract.id)
            .field("status", &self.status)
            .field("version", &self.store.version())
            .field("history", &self.history.len())
            .finish_non_exhaustive()
    }
}

/// Seeds the form facts and labels the initial status.
pub fn init_simulation(contract: Arc<Contract>, config: SimConfig) -> Result<SimState> {
    config.validate()?;
    check_compatible(&contract.program)?;
    let options = EvalOptions { calendar: config.calendar(), ..EvalOptions::default() };
    let evaluator = Arc::new(Evaluator::new(contract.program.clone(), options)?);
    let mut fixtures = contract.config.as_ref().map(|c| c.externals.clone()).unwrap_or_default();
    fixtures.extend(config.externals.iter().cloned());
    fixtures.dedup();
    let store = contract.store_with(&fixtures)?.apply(&[], &config.form_facts())?;
    let status = status_of(&evaluator, &store)?;
    Ok(SimState { contract, config, evaluator, store, history: Vec::new(), status, queued: Vec::new() })
}

impl SimState {
    pub fn evaluator(&self) -> &Arc<Evaluator> {
        &self.evaluator
    }

    /// Events delivered with the next `advance`.
    pub fn queued(&self) -> &[Atom] {
        &self.queued
    }

    pub fn queue_event(&mut self, event: Atom) -> Result<()> {
        if !self.contract.program.is_event(&event.pred_id()) {
            return Err(Error::NotAnEvent(event.pred_id()));
        }
        if !event.is_ground() {
            return Err(Error::NonGround(event));
        }
        self.queued.push(event);
        Ok(())
    }

    /// Delivers queued events together with one `tick`.
    pub fn advance(&mut self) -> Result<()> {
        let mut events = std::mem::take(&mut self.queued);
        events.push(Atom::new(TICK, Vec::new()));
        let result = self.deliver(events.clone());
        if result.is_err() {
            events.pop();
            self.queued = events;
        }
        result
    }

    pub fn send_event(&mut self, event: Atom) -> Result<()> {
        if !self.contract.program.is_event(&event.pred_id()) {
            return Err(Error::NotAnEvent(event.pred_id()));
        }
        self.deliver(vec![event])
    }

    pub fn run(&mut self, command: &Command) -> Result<()> {
        match command {
            Command::Advance => self.advance(),
            Command::Event(e) => self.send_event(e.clone()),
        }
    }

    /// All-or-nothing: on error the state is unchanged.
    fn deliver(&mut self, events: Vec<Atom>) -> Result<()> {
        if self.status == "terminated" {
            return Err(Error::Terminated);
        }
        let program = &self.contract.program;
        let mut store = self.store.clone();
        let pre_version = store.version();
        for e in &events {
            if !e.is_ground() {
                return Err(Error::NonGround(e.clone()));
            }
            store = inject_event(program, &store, e)?;
        }
        let (after, mut records) = run_until_quiescent(&self.evaluator, &store, DEFAULT_MAX_ROUNDS)?;
        let status = status_of(&self.evaluator, &after)?;
        let base = self.history.len();
        if records.is_empty() {
            records.push(StepRecord {
                round_index: 0,
                fired: Vec::new(),
                pre_version,
                post_version: after.version(),
                injected_events: Vec::new(),
            });
        }
        records[0].injected_events = events;
        records[0].pre_version = pre_version;
        for (i, r) in records.iter_mut().enumerate() {
            r.round_index = base + i;
        }
        self.history.extend(records);
        self.store = after;
        self.status = status;
        Ok(())
    }

    /// First value of a single-answer base fact such as `current_balance`.
    pub fn fact_value(&self, pred: &str, arity: usize, position: usize) -> Option<Term> {
        let rel = self.store.relation(&PredId::new(pred, arity))?;
        rel.iter().next().map(|t| t[position].clone())
    }

    pub fn balance(&self) -> Option<i64> {
        self.fact_value("current_balance", 2, 1).and_then(|t| t.as_i64())
    }

    pub fn pending_withdrawal(&self) -> Option<i64> {
        self.fact_value("pending_withdrawal", 2, 1).and_then(|t| t.as_i64())
    }

    /// `(month, day, year)` of `today`.
    pub fn today(&self) -> Option<(i64, i64, i64)> {
        let rel = self.store.relation(&PredId::new("today", 3))?;
        let t = rel.iter().next()?;
        Some((t[0].as_i64()?, t[1].as_i64()?, t[2].as_i64()?))
    }

    pub fn query(&self, goal: &[Literal]) -> Result<std::collections::BTreeSet<crate::store::Binding>> {
        self.evaluator.query(&self.store, goal)
    }

    /// `{"status", "facts": {pred: [[args]...]}, "history_len"}`
    pub fn state_json(&self) -> Value {
        json!({
            "contract_id": self.contract.id,
            "status": self.status,
            "version": self.store.version(),
            "today": self.today().map(|(m, d, y)| [m, d, y]),
            "balance": self.balance(),
            "pending_withdrawal": self.pending_withdrawal(),
            "queued": self.queued.iter().map(|a| a.to_string()).collect::<Vec<_>>(),
            "facts": facts_json(&self.store),
            "history_len": self.history.len(),
        })
    }

    pub fn export_trace(&self) -> Trace {
        Trace {
            config: self.config.clone(),
            records: self.history.clone(),
            final_status: self.status.to_string(),
            final_facts: sorted_fact_strings(&self.store),
        }
    }
}

/// Stored facts grouped by predicate name; arities share a key only if a
/// name is used with several arities, which the checker rejects.
pub fn facts_json(store: &FactStore) -> Value {
    let mut out = serde_json::Map::new();
    for (pred, rel) in store.facts_by_predicate() {
        let rows: Vec<Value> = rel.iter().map(|t| Value::Array(t.iter().map(Term::to_json).collect())).collect();
        out.insert(pred.name.to_string(), Value::Array(rows));
    }
    Value::Object(out)
}

fn sorted_fact_strings(store: &FactStore) -> Vec<String> {
    let mut v: Vec<String> = store.atoms().iter().map(ToString::to_string).collect();
    v.sort();
    v
}

/// Config, every recorded round, and the final state.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trace {
    pub config: SimConfig,
    pub records: Vec<StepRecord>,
    pub final_status: String,
    pub final_facts: Vec<String>,
}

impl Trace {
    /// JSON lines: a config header, one line per round, a final line.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        out.push_str(&json!({ "kind": "config", "config": self.config.to_json() }).to_string());
        out.push('\n');
        for r in &self.records {
            let mut v = r.to_json();
            v["kind"] = json!("step");
            out.push_str(&v.to_string());
            out.push('\n');
        }
        out.push_str(&json!({ "kind": "final", "status": self.final_status, "facts": self.final_facts }).to_string());
        out.push('\n');
        out
    }

    pub fn from_json_lines(text: &str) -> Result<Trace> {
        let mut config = None;
        let mut records = Vec::new();
        let mut final_status = None;
        let mut final_facts = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let v: Value = serde_json::from_str(line)?;
            match v["kind"].as_str() {
                Some("config") => {
                    let cfg: SimConfig = serde_json::from_value(v["config"].clone())?;
                    config = Some(cfg);
                }
                Some("step") => records.push(StepRecord::from_json(&v)?),
                Some("final") => {
                    final_status = v["status"].as_str().map(str::to_string);
                    final_facts = serde_json::from_value(v["facts"].clone())?;
                }
                other => return Err(Error::InvalidInput(format!("unknown trace line kind {other:?}"))),
            }
        }
        Ok(Trace {
            config: config.ok_or_else(|| Error::InvalidInput("trace has no config line".into()))?,
            records,
            final_status: final_status.ok_or_else(|| Error::InvalidInput("trace has no final line".into()))?,
            final_facts,
        })
    }
}

/// Re-runs the commands recorded in `trace`. Each command starts at a
/// record with injected events. Fails with `ReplayDivergence` at the first
/// round whose record differs, or at `records.len()` if only the final
/// state differs.
pub fn replay_trace(contract: Arc<Contract>, trace: &Trace) -> Result<SimState> {
    let mut sim = init_simulation(contract, trace.config.clone())?;
    let mut i = 0;
    while i < trace.records.len() {
        let injected = &trace.records[i].injected_events;
        if injected.is_empty() {
            return Err(Error::ReplayDivergence { round: i });
        }
        let before = sim.history.len();
        if sim.deliver(injected.clone()).is_err() {
            return Err(Error::ReplayDivergence { round: i });
        }
        for (offset, produced) in sim.history[before..].iter().enumerate() {
            let round = before + offset;
            match trace.records.get(round) {
                Some(expected) if expected.to_json() == produced.to_json() => {}
                _ => return Err(Error::ReplayDivergence { round }),
            }
        }
        i = sim.history.len();
        if trace.records.get(i).is_some_and(|r| r.injected_events.is_empty()) {
            return Err(Error::ReplayDivergence { round: i });
        }
    }
    if sim.status != trace.final_status || sorted_fact_strings(&sim.store) != trace.final_facts {
        return Err(Error::ReplayDivergence { round: trace.records.len() });
    }
    Ok(sim)
}
