//! The shipped Automatic Payment Agreement bundle, embedded at compile time.

use crate::contract::{BundleSources, Contract};

pub const REFERENCE_ID: &str = "apa-ref";

pub const CONTRACT_CDL: &str = include_str!("../contracts/apa/contract.cdl");
pub const FACTS_CDL: &str = include_str!("../contracts/apa/facts.cdl");
pub const CLAUSES_JSON: &str = include_str!("../contracts/apa/clauses.json");
pub const FAQ_JSON: &str = include_str!("../contracts/apa/faq.json");
pub const CONFIG_JSON: &str = include_str!("../contracts/apa/config.json");
pub const ACCOUNTS_JSON: &str = include_str!("../contracts/apa/accounts.json");

pub fn reference_sources() -> BundleSources {
    BundleSources {
        contract: Some(CONTRACT_CDL.to_string()),
        shared: None,
        facts: Some(FACTS_CDL.to_string()),
        clauses: Some(CLAUSES_JSON.to_string()),
        faq: Some(FAQ_JSON.to_string()),
        config: Some(CONFIG_JSON.to_string()),
        externals: [("accounts.json".to_string(), ACCOUNTS_JSON.to_string())].into_iter().collect(),
    }
}

/// The reference bundle. Panics only if the embedded files are broken,
/// which the tests below rule out.
pub fn build_reference() -> Contract {
    Contract::from_sources(REFERENCE_ID, &reference_sources()).expect("reference bundle loads")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast::PredId;

    #[test]
    fn loads_without_diagnostics() {
        let c = build_reference();
        assert!(c.diagnostics.is_empty(), "{:?}", c.diagnostics);
        assert_eq!(c.faqs.len(), 5);
        assert_eq!(c.program.clause_map.as_ref().unwrap().entries.len(), 8);
    }

    #[test]
    fn declares_lifecycle_events() {
        let c = build_reference();
        for (name, arity) in [
            ("payment_received", 0),
            ("payment_received_amount", 1),
            ("payment_returned", 0),
            ("notice_of_change", 1),
            ("cancel_request", 0),
            ("institution_cancel", 1),
            ("agreement_processed", 0),
            ("tick", 0),
        ] {
            assert!(c.program.is_event(&PredId::new(name, arity)), "{name}");
        }
    }

    #[test]
    fn on_disk_bundle_matches_embedded() {
        let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("contracts/apa");
        let c = Contract::load_dir(REFERENCE_ID, &dir).unwrap();
        assert_eq!(*c.program, *build_reference().program);
        assert!(c.base_store().is_ok());
    }
}
