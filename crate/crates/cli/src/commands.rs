//! Subcommand implementations. Each returns the text for stdout or a
//! `Failure` carrying the process exit code.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use cdl_core::diagnostics::{render_json, render_text};
use cdl_core::faq::{answer, coverage};
use cdl_core::parser::parse_goal;
use cdl_core::portfolio::{generate_instances, generated_portfolio, write_instances};
use cdl_core::reference::{build_reference, REFERENCE_ID};
use cdl_core::simulator::init_simulation;
use cdl_core::{BundleSources, Command, Contract, Diagnostic, Error, Evaluator, FactStore, Portfolio, Scenario, SimConfig, SimState};
use serde_json::json;

pub const EXIT_DIAGNOSTICS: u8 = 1;
pub const EXIT_INTERNAL: u8 = 2;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub text: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io(_) | Error::Json(_) => EXIT_INTERNAL,
            _ => EXIT_DIAGNOSTICS,
        };
        let text = match &e {
            Error::Validation(d) => render_text(d),
            other => format!("error[{}]: {other}\n", other.code()),
        };
        Failure { code, text }
    }
}

impl From<Diagnostic> for Failure {
    fn from(d: Diagnostic) -> Self {
        Failure { code: EXIT_DIAGNOSTICS, text: format!("{d}\n") }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure { code: EXIT_INTERNAL, text: format!("error: {e}\n") }
    }
}

pub type Outcome = Result<String, Failure>;

/// `apa-ref` names the built-in reference bundle; a directory is read as a
/// bundle; a file is the rule text. `facts` files are appended to the
/// bundle's facts.
pub fn open_contract(path: &str, facts: &[PathBuf]) -> cdl_core::Result<Contract> {
    if path == REFERENCE_ID {
        return Ok(build_reference());
    }
    let p = Path::new(path);
    let id = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| path.to_string());
    let mut sources = if p.is_dir() {
        BundleSources::read_dir(p)?
    } else if p.is_file() {
        BundleSources { contract: Some(std::fs::read_to_string(p)?), ..Default::default() }
    } else {
        return Err(Error::MissingFile(path.to_string()));
    };
    if !facts.is_empty() {
        let mut text = sources.facts.take().unwrap_or_default();
        for f in facts {
            text.push('\n');
            text.push_str(&std::fs::read_to_string(f)?);
        }
        sources.facts = Some(text);
    }
    let mut contract = Contract::from_sources(&id, &sources)?;
    contract.base_dir = Some(if p.is_dir() { p.to_path_buf() } else { p.parent().map(Path::to_path_buf).unwrap_or_default() });
    Ok(contract)
}

fn load_contract(path: &str, facts: &[PathBuf]) -> Result<Contract, Failure> {
    Ok(open_contract(path, facts)?)
}

fn read_config(contract: &Contract, path: Option<&Path>) -> Result<SimConfig, Failure> {
    match path {
        Some(p) => Ok(SimConfig::from_json(&std::fs::read_to_string(p)?)?),
        None => contract
            .config
            .clone()
            .ok_or_else(|| Failure { code: EXIT_DIAGNOSTICS, text: "error: no --config and the bundle has no config.json\n".into() }),
    }
}

/// Starts a simulation and runs the script, if any.
pub fn session(contract: Contract, config: Option<&Path>, script: Option<&Path>) -> Result<SimState, Failure> {
    let cfg = read_config(&contract, config)?;
    let mut sim = init_simulation(Arc::new(contract), cfg)?;
    if let Some(script) = script {
        let text = std::fs::read_to_string(script)?;
        for (i, line) in text.lines().enumerate() {
            let Some(cmd) = Command::parse_line(line)? else { continue };
            sim.run(&cmd).map_err(|e| {
                let f = Failure::from(e);
                Failure { code: f.code, text: format!("{}:{}: {}", script.display(), i + 1, f.text) }
            })?;
        }
    }
    Ok(sim)
}

pub fn check(paths: &[String], facts: &[PathBuf], json_out: bool) -> Outcome {
    let mut all = Vec::new();
    let mut summary = String::new();
    let mut failed = false;
    for path in paths {
        match open_contract(path, facts) {
            Ok(c) => {
                all.extend(c.diagnostics.iter().cloned());
                let p = &c.program;
                summary.push_str(&format!(
                    "{path}: ok ({} facts, {} views, {} dynamic rules, {} FAQs)\n",
                    p.facts.len(),
                    p.views.len(),
                    p.dynamics.len(),
                    c.faqs.len()
                ));
                failed |= c.has_errors();
            }
            Err(Error::Validation(d)) => {
                failed = true;
                all.extend(d);
            }
            Err(e) => return Err(e.into()),
        }
    }
    let text = if json_out { render_json(&all) + "\n" } else { format!("{}{summary}", render_text(&all)) };
    if failed {
        Err(Failure { code: EXIT_DIAGNOSTICS, text })
    } else {
        Ok(text)
    }
}

pub struct QueryArgs<'a> {
    pub contract: &'a str,
    pub facts: &'a [PathBuf],
    pub config: Option<&'a Path>,
    pub script: Option<&'a Path>,
    pub goal: &'a str,
    pub proof: bool,
    pub json: bool,
}

pub fn query(a: QueryArgs<'_>) -> Outcome {
    let contract = load_contract(a.contract, a.facts)?;
    let goal = parse_goal(a.goal)?;
    let (ev, store): (Arc<Evaluator>, FactStore) = if a.config.is_some() || a.script.is_some() {
        let sim = session(contract, a.config, a.script)?;
        (sim.evaluator().clone(), sim.store.clone())
    } else {
        let store = contract.base_store()?;
        (Arc::new(Evaluator::new(contract.program.clone(), Default::default())?), store)
    };
    let answers = ev.derive_with_proof(&store, &goal)?;
    if a.json {
        let rows: Vec<_> = answers
            .iter()
            .map(|(b, d)| {
                let mut v = json!({ "binding": cdl_core::transition::binding_json(b) });
                if a.proof {
                    v["proof"] = d.to_json();
                }
                v
            })
            .collect();
        return Ok(serde_json::to_string_pretty(&rows).expect("json") + "\n");
    }
    let mut out = String::new();
    if answers.is_empty() {
        out.push_str("no\n");
    }
    for (binding, proof) in &answers {
        if binding.is_empty() {
            out.push_str("yes\n");
        } else {
            let parts: Vec<String> = binding.iter().map(|(k, v)| format!("{k} = {v}")).collect();
            out.push_str(&parts.join(", "));
            out.push('\n');
        }
        if a.proof {
            out.push_str(&proof.render());
        }
    }
    Ok(out)
}

pub fn simulate(contract: &str, facts: &[PathBuf], config: Option<&Path>, script: Option<&Path>, trace: Option<&Path>) -> Outcome {
    let sim = session(load_contract(contract, facts)?, config, script)?;
    let lines = sim.export_trace().to_json_lines();
    match trace {
        Some(p) if p.as_os_str() == "-" => return Ok(lines),
        Some(p) => std::fs::write(p, &lines)?,
        None => {}
    }
    Ok(serde_json::to_string_pretty(&sim.state_json()).expect("json") + "\n")
}

pub fn faq(contract: &str, config: Option<&Path>, script: Option<&Path>, id: Option<&str>, show_coverage: bool, json_out: bool) -> Outcome {
    let c = load_contract(contract, &[])?;
    if show_coverage {
        let cov = coverage(&c)?;
        let text = if json_out {
            serde_json::to_string_pretty(&cov.to_json()).expect("json") + "\n"
        } else if cov.uncovered.is_empty() {
            "every clause backs at least one FAQ\n".to_string()
        } else {
            cov.uncovered.iter().map(|c| format!("uncovered clause {c}\n")).collect()
        };
        return if cov.uncovered.is_empty() { Ok(text) } else { Err(Failure { code: EXIT_DIAGNOSTICS, text }) };
    }
    let sim = session(c, config, script)?;
    let Some(id) = id else {
        return Ok(if json_out {
            serde_json::to_string_pretty(&sim.contract.faqs.iter().map(|f| f.to_json()).collect::<Vec<_>>()).expect("json") + "\n"
        } else {
            sim.contract.faqs.iter().map(|f| format!("{}\t{}\n", f.id, f.question)).collect()
        });
    };
    let a = answer(&sim.contract, sim.evaluator(), &sim.store, id)?;
    if json_out {
        return Ok(serde_json::to_string_pretty(&a.to_json()).expect("json") + "\n");
    }
    let mut out: String = a.lines.iter().map(|l| format!("{l}\n")).collect();
    if !a.clause_links.is_empty() {
        let links: Vec<&str> = a.clause_links.iter().map(|c| &**c).collect();
        out.push_str(&format!("clauses: {}\n", links.join(", ")));
    }
    Ok(out)
}

pub struct WhatifArgs<'a> {
    pub portfolio: Option<&'a Path>,
    pub generate: Option<usize>,
    pub seed: u64,
    pub scenario: Option<&'a Path>,
    pub payment_bp: Option<i64>,
    pub goal: &'a str,
    pub csv: bool,
}

pub fn whatif(a: WhatifArgs<'_>) -> Outcome {
    let portfolio = match (a.portfolio, a.generate) {
        (Some(dir), _) => Portfolio::load_dir(dir)?,
        (None, Some(n)) => generated_portfolio(n, a.seed),
        (None, None) => return Err(Failure { code: EXIT_DIAGNOSTICS, text: "error: give --portfolio or --generate\n".into() }),
    };
    let scenario = match (a.scenario, a.payment_bp) {
        (Some(p), _) => Scenario::from_json(&std::fs::read_to_string(p)?)?,
        (None, Some(bp)) => Scenario::payment_increase(bp),
        (None, None) => return Err(Failure { code: EXIT_DIAGNOSTICS, text: "error: give --scenario or --payment-bp\n".into() }),
    };
    let goal = parse_goal(a.goal)?;
    let report = portfolio.whatif(&scenario, &goal);
    let mut out = if a.csv { report.to_csv()? } else { serde_json::to_string_pretty(&report.to_json()).expect("json") + "\n" };
    for (id, diags) in &portfolio.failures {
        out.push_str(&format!("# {id} failed to load\n{}", render_text(diags)));
    }
    Ok(out)
}

pub fn generate(count: usize, seed: u64, out: &Path) -> Outcome {
    let instances = generate_instances(count, seed);
    write_instances(out, &instances)?;
    Ok(format!("wrote {count} bundles to {}\n", out.display()))
}
