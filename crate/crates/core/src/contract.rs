//! Contract bundles: rules, instance facts, clause map, FAQ sidecar,
//! simulator defaults and external fixtures, loaded and checked together.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::ast::{ClauseMap, PredId, Program, SourceSpan, StatementRef};
use crate::diagnostics::{has_errors, Code, Diagnostic};
use crate::error::{Error, Result};
use crate::faq::{self, FaqEntry};
use crate::parser;
use crate::simulator::SimConfig;
use crate::store::{FactStore, JsonFileProvider, ProviderRef};

pub const CONTRACT_FILE: &str = "contract.cdl";
pub const FACTS_FILE: &str = "facts.cdl";
pub const CLAUSES_FILE: &str = "clauses.json";
pub const FAQ_FILE: &str = "faq.json";
pub const CONFIG_FILE: &str = "config.json";
pub const SHARED_FILE: &str = "shared.cdl";

/// Raw bundle contents. Only `contract` is required.
#[derive(Clone, Debug, Default)]
pub struct BundleSources {
    pub contract: Option<String>,
    /// Rules shared across a portfolio, loaded ahead of `contract`.
    pub shared: Option<String>,
    pub facts: Option<String>,
    pub clauses: Option<String>,
    pub faq: Option<String>,
    pub config: Option<String>,
    /// External fixture files by name, as referenced from the config.
    pub externals: BTreeMap<String, String>,
}

impl BundleSources {
    /// Reads the standard file names from `dir`; absent files stay `None`.
    /// External fixtures named in `config.json` are read relative to `dir`.
    pub fn read_dir(dir: &Path) -> Result<Self> {
        let read = |name: &str| -> Result<Option<String>> {
            let path = dir.join(name);
            if path.is_file() {
                Ok(Some(std::fs::read_to_string(path)?))
            } else {
                Ok(None)
            }
        };
        let mut sources = BundleSources {
            contract: read(CONTRACT_FILE)?,
            shared: None,
            facts: read(FACTS_FILE)?,
            clauses: read(CLAUSES_FILE)?,
            faq: read(FAQ_FILE)?,
            config: read(CONFIG_FILE)?,
            externals: BTreeMap::new(),
        };
        if let Some(cfg) = &sources.config {
            let cfg = SimConfig::from_json(cfg)?;
            for name in &cfg.externals {
                let text = std::fs::read_to_string(dir.join(name)).map_err(|_| Error::MissingFile(name.clone()))?;
                sources.externals.insert(name.clone(), text);
            }
        }
        Ok(sources)
    }
}

/// A loaded, statically checked contract.
#[derive(Clone)]
pub struct Contract {
    pub id: String,
    pub program: Arc<Program>,
    pub faqs: Vec<FaqEntry>,
    pub config: Option<SimConfig>,
    /// Fixture texts by name; simulator configs refer to these names.
    pub externals: BTreeMap<String, String>,
    /// Warnings, and errors confined to optional parts (rejected FAQ entries).
    pub diagnostics: Vec<Diagnostic>,
    pub base_dir: Option<PathBuf>,
}

impl std::fmt::Debug for Contract {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Contract").field("id", &self.id).field("faqs", &self.faqs.len()).finish_non_exhaustive()
    }
}

fn bundle_span(file: &str) -> SourceSpan {
    SourceSpan::new(file, (1, 1), (1, 1))
}

impl Contract {
    /// Parses and checks a bundle. Fails with `Validation` when the rules
    /// or facts do not pass static checks or `contract.cdl` is absent.
    pub fn from_sources(id: &str, sources: &BundleSources) -> Result<Contract> {
        let Some(contract_src) = &sources.contract else {
            return Err(Error::Validation(vec![Diagnostic::error(
                Code::MissingFile,
                format!("bundle has no {CONTRACT_FILE}"),
                bundle_span(CONTRACT_FILE),
            )]));
        };
        let mut files = Vec::new();
        if let Some(shared) = &sources.shared {
            files.push((SHARED_FILE, shared.as_str()));
        }
        files.push((CONTRACT_FILE, contract_src.as_str()));
        if let Some(facts) = &sources.facts {
            files.push((FACTS_FILE, facts.as_str()));
        }
        let (program, mut diags) = parser::load(&files);
        let Some(mut program) = program else { return Err(Error::Validation(diags)) };

        if let Some(text) = &sources.clauses {
            let map = ClauseMap::from_json(text).map_err(|e| {
                Error::Validation(vec![Diagnostic::error(Code::ParseError, e.to_string(), bundle_span(CLAUSES_FILE))])
            })?;
            diags.extend(unknown_clauses(&program, &map));
            program.clause_map = Some(map);
        }
        diags.extend(faq::pretty_name_collisions(&program));

        let config = match &sources.config {
            Some(text) => Some(SimConfig::from_json(text).map_err(|e| {
                Error::Validation(vec![Diagnostic::error(Code::ParseError, e.to_string(), bundle_span(CONFIG_FILE))])
            })?),
            None => None,
        };
        let faqs = match &sources.faq {
            Some(text) => {
                let (entries, faq_diags) = faq::parse_faq_file(text, &program);
                diags.extend(faq_diags);
                entries
            }
            None => Vec::new(),
        };
        Ok(Contract {
            id: id.to_string(),
            program: Arc::new(program),
            faqs,
            config,
            externals: sources.externals.clone(),
            diagnostics: diags,
            base_dir: None,
        })
    }

    pub fn load_dir(id: &str, dir: &Path) -> Result<Contract> {
        let sources = BundleSources::read_dir(dir)?;
        let mut contract = Contract::from_sources(id, &sources)?;
        contract.base_dir = Some(dir.to_path_buf());
        Ok(contract)
    }

    pub fn has_errors(&self) -> bool {
        has_errors(&self.diagnostics)
    }

    /// Provider for a fixture name: a bundled text, else a file resolved
    /// against the bundle directory.
    pub fn provider(&self, name: &str) -> Result<JsonFileProvider> {
        if let Some(text) = self.externals.get(name) {
            return JsonFileProvider::from_json(name, text);
        }
        let path = match &self.base_dir {
            Some(dir) if Path::new(name).is_relative() => dir.join(name),
            _ => PathBuf::from(name),
        };
        JsonFileProvider::from_file(&path)
    }

    /// The program's stored facts with every declared external bound to a
    /// provider from `fixtures`. A provider that lists the predicate wins;
    /// otherwise the first fixture answers (possibly with no rows).
    pub fn store_with(&self, fixtures: &[String]) -> Result<FactStore> {
        let providers = fixtures
            .iter()
            .map(|name| self.provider(name).map(|p| Arc::new(p)))
            .collect::<Result<Vec<_>>>()?;
        let mut store = FactStore::for_program(&self.program)?;
        for pred in &self.program.declared_externals {
            let chosen = providers
                .iter()
                .find(|p| p.predicates().any(|q| q == pred))
                .or_else(|| providers.first());
            if let Some(p) = chosen {
                let provider: ProviderRef = p.clone();
                store = store.with_provider(pred.clone(), provider)?;
            }
        }
        Ok(store)
    }

    /// Store bound to the fixtures named in the bundle's own config.
    pub fn base_store(&self) -> Result<FactStore> {
        let fixtures = self.config.as_ref().map(|c| c.externals.clone()).unwrap_or_default();
        self.store_with(&fixtures)
    }

    pub fn declares(&self, pred: &PredId) -> bool {
        self.program.predicate_signature().map(|s| s.contains_key(pred)).unwrap_or(false)
    }
}

/// Tagged statements whose clause id is absent from the map.
fn unknown_clauses(program: &Program, map: &ClauseMap) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    for stmt in program.statements() {
        let (clause, span) = match stmt {
            StatementRef::Fact(i) => (&program.facts[i].clause_id, &program.facts[i].span),
            StatementRef::View(i) => (&program.views[i].clause_id, &program.views[i].span),
            StatementRef::Dynamic(i) => (&program.dynamics[i].clause_id, &program.dynamics[i].span),
        };
        if let Some(c) = clause {
            if !map.contains(c) {
                out.push(Diagnostic::warning(Code::UnknownClause, format!("clause `{c}` is not in the clause map"), span.clone()));
            }
        }
    }
    out
}
