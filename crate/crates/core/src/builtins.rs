//! Builtin predicates: integer arithmetic, disequality, and calendar helpers.
//!
//! Each builtin has fixed argument modes. Input positions must be bound when
//! the builtin is called; the parser's safety check reads the same table, so
//! evaluation order and load-time checking cannot disagree.

use std::collections::BTreeSet;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{ToPrimitive, Zero};

use crate::ast::{Atom, PredId, Term};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    In,
    Out,
}

use Mode::{In, Out};

#[derive(Debug)]
pub struct BuiltinSpec {
    pub name: &'static str,
    pub modes: &'static [Mode],
    /// Whether `~name(...)` is accepted.
    pub negatable: bool,
}

impl BuiltinSpec {
    pub fn arity(&self) -> usize {
        self.modes.len()
    }
}

pub static REGISTRY: &[BuiltinSpec] = &[
    BuiltinSpec { name: "evaluate", modes: &[In, Out], negatable: false },
    BuiltinSpec { name: "distinct", modes: &[In, In], negatable: true },
    BuiltinSpec { name: "date_before", modes: &[In, In, In, In, In, In], negatable: false },
    BuiltinSpec { name: "mp1", modes: &[In, Out], negatable: false },
    BuiltinSpec { name: "yp1", modes: &[In, In, Out], negatable: false },
    BuiltinSpec { name: "last_day", modes: &[In, In, Out], negatable: false },
    BuiltinSpec { name: "day_of_week", modes: &[In, In, In, Out], negatable: false },
    BuiltinSpec { name: "less_than", modes: &[In, In], negatable: false },
    BuiltinSpec { name: "leq", modes: &[In, In], negatable: false },
    BuiltinSpec { name: "add_days", modes: &[In, In, In, In, Out, Out, Out], negatable: false },
    BuiltinSpec { name: "next_business_day", modes: &[In, In, In, Out, Out, Out], negatable: false },
    BuiltinSpec { name: "business_days_between", modes: &[In, In, In, In, In, In, Out], negatable: false },
];

/// Functors accepted inside `evaluate`.
pub const EXPRESSION_FUNCTORS: &[&str] = &["plus", "minus", "times", "div"];

pub fn lookup(pred: &PredId) -> Option<&'static BuiltinSpec> {
    REGISTRY.iter().find(|b| b.name == &*pred.name && b.arity() == pred.arity)
}

pub fn is_builtin_name(name: &str) -> bool {
    REGISTRY.iter().any(|b| b.name == name)
}

/// Jurisdiction data consulted by business-day builtins.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Calendar {
    pub holidays: BTreeSet<NaiveDate>,
}

impl Calendar {
    pub fn with_holidays<I: IntoIterator<Item = NaiveDate>>(holidays: I) -> Self {
        Calendar { holidays: holidays.into_iter().collect() }
    }

    /// Sundays and listed holidays are not business days.
    pub fn is_business_day(&self, date: NaiveDate) -> bool {
        date.weekday() != Weekday::Sun && !self.holidays.contains(&date)
    }
}

/// Calls a builtin. `args` holds `Some` for bound positions; every input
/// position must be bound. Returns the completed argument list when the
/// builtin holds, `None` when it fails.
pub fn call(pred: &PredId, args: &[Option<Term>], calendar: &Calendar) -> Result<Option<Vec<Term>>> {
    let spec = lookup(pred).ok_or_else(|| Error::UnknownPredicate(pred.clone()))?;
    let partial_atom = || Atom {
        pred: pred.name.clone(),
        args: args.iter().map(|a| a.clone().unwrap_or_else(|| Term::var("_"))).collect(),
    };
    let input = |i: usize| -> Result<&Term> {
        args[i].as_ref().ok_or_else(|| Error::BuiltinDomain {
            atom: partial_atom(),
            reason: format!("input argument {} is unbound", i + 1),
        })
    };
    let domain = |reason: String| Error::BuiltinDomain { atom: partial_atom(), reason };

    let int = |i: usize| -> Result<BigInt> {
        input(i)?.as_int().cloned().ok_or_else(|| domain(format!("argument {} is not an integer", i + 1)))
    };
    let small = |i: usize| -> Result<i64> {
        int(i)?.to_i64().ok_or_else(|| domain(format!("argument {} is out of range", i + 1)))
    };
    let month = |i: usize| -> Result<u32> {
        let m = small(i)?;
        if (1..=12).contains(&m) {
            Ok(m as u32)
        } else {
            Err(domain(format!("month {m} is not in 1..12")))
        }
    };
    let year = |i: usize| -> Result<i32> {
        let y = small(i)?;
        if (1..=9999).contains(&y) {
            Ok(y as i32)
        } else {
            Err(domain(format!("year {y} is not in 1..9999")))
        }
    };
    let date = |i: usize| -> Result<NaiveDate> {
        let (m, y) = (month(i)?, year(i + 2)?);
        let d = small(i + 1)?;
        u32::try_from(d)
            .ok()
            .and_then(|d| NaiveDate::from_ymd_opt(y, m, d))
            .ok_or_else(|| domain(format!("{m}/{d}/{y} is not a valid date")))
    };

    let outputs: Vec<Term> = match spec.name {
        "evaluate" => {
            let value = eval_expr(input(0)?).map_err(domain)?;
            vec![Term::Int(value)]
        }
        "distinct" => return Ok((input(0)? != input(1)?).then(|| bound(args))),
        "date_before" => return Ok((date(0)? < date(3)?).then(|| bound(args))),
        "less_than" => return Ok((int(0)? < int(1)?).then(|| bound(args))),
        "leq" => return Ok((int(0)? <= int(1)?).then(|| bound(args))),
        "mp1" => vec![Term::int(next_month(month(0)?) as i64)],
        "yp1" => {
            let (m, y) = (month(0)?, year(1)?);
            vec![Term::int(if m == 12 { y as i64 + 1 } else { y as i64 })]
        }
        "last_day" => vec![Term::int(last_day_of_month(month(0)?, year(1)?) as i64)],
        "day_of_week" => vec![Term::int(date(0)?.weekday().number_from_monday() as i64)],
        "add_days" => {
            let n = small(3)?;
            let shifted = date(0)?
                .checked_add_signed(Duration::days(n))
                .ok_or_else(|| domain(format!("cannot shift by {n} days")))?;
            date_terms(shifted)
        }
        "next_business_day" => {
            let mut d = date(0)?;
            while !calendar.is_business_day(d) {
                d = d.succ_opt().ok_or_else(|| domain("calendar overflow".into()))?;
            }
            date_terms(d)
        }
        "business_days_between" => {
            let (from, to) = (date(0)?, date(3)?);
            let mut count = 0i64;
            let mut d = from;
            while d < to {
                d = d.succ_opt().ok_or_else(|| domain("calendar overflow".into()))?;
                if calendar.is_business_day(d) {
                    count += 1;
                }
            }
            vec![Term::int(count)]
        }
        other => unreachable!("builtin {other} has no implementation"),
    };

    let out_positions: Vec<usize> = spec.modes.iter().enumerate().filter(|(_, m)| **m == Out).map(|(i, _)| i).collect();
    debug_assert_eq!(out_positions.len(), outputs.len());
    let mut result = Vec::with_capacity(args.len());
    let mut outs = outputs.into_iter();
    for (i, arg) in args.iter().enumerate() {
        if out_positions.contains(&i) {
            let computed = outs.next().expect("output count matches modes");
            match arg {
                Some(existing) if *existing != computed => return Ok(None),
                _ => result.push(computed),
            }
        } else {
            result.push(arg.clone().expect("inputs checked above"));
        }
    }
    Ok(Some(result))
}

fn bound(args: &[Option<Term>]) -> Vec<Term> {
    args.iter().map(|a| a.clone().expect("boolean builtins take inputs only")).collect()
}

fn date_terms(d: NaiveDate) -> Vec<Term> {
    vec![Term::int(d.month() as i64), Term::int(d.day() as i64), Term::int(d.year() as i64)]
}

fn eval_expr(term: &Term) -> std::result::Result<BigInt, String> {
    match term {
        Term::Int(i) => Ok(i.clone()),
        Term::Compound(f, args) if args.len() == 2 => {
            let a = eval_expr(&args[0])?;
            let b = eval_expr(&args[1])?;
            match &**f {
                "plus" => Ok(a + b),
                "minus" => Ok(a - b),
                "times" => Ok(a * b),
                "div" => {
                    if b.is_zero() {
                        Err("division by zero".into())
                    } else {
                        Ok(a.div_floor(&b))
                    }
                }
                other => Err(format!("unknown expression functor `{other}`")),
            }
        }
        other => Err(format!("`{other}` is not an integer expression")),
    }
}

pub fn next_month(m: u32) -> u32 {
    m % 12 + 1
}

pub fn last_day_of_month(m: u32, y: i32) -> u32 {
    let (nm, ny) = if m == 12 { (1, y + 1) } else { (m + 1, y) };
    NaiveDate::from_ymd_opt(ny, nm, 1)
        .and_then(|d| d.pred_opt())
        .map(|d| d.day())
        // December 9999 overflows chrono's successor; December always has 31 days.
        .unwrap_or(31)
}
