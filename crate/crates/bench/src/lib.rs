//! Workloads shared by the benchmarks.

use cdl_core::parser::load;
use cdl_core::reference::build_reference;
use cdl_core::simulator::init_simulation;
use cdl_core::{Program, SimState};
use std::sync::Arc;

/// Transitive closure over a path of `n` edges, plus its complement on
/// nodes, so both recursion and a negated stratum are exercised.
pub fn chain_program(n: usize) -> Program {
    let mut src = String::new();
    for i in 0..n {
        src.push_str(&format!("edge({i},{})\n", i + 1));
    }
    src.push_str("node(X) :- edge(X,Y)\n");
    src.push_str("node(Y) :- edge(X,Y)\n");
    src.push_str("reach(X,Y) :- edge(X,Y)\n");
    src.push_str("reach(X,Z) :- reach(X,Y) & edge(Y,Z)\n");
    src.push_str("unreached(X,Y) :- node(X) & node(Y) & ~reach(X,Y)\n");
    let (program, diags) = load(&[("chain", &src)]);
    program.unwrap_or_else(|| panic!("chain program rejected: {diags:?}"))
}

pub fn reference_session() -> SimState {
    let contract = build_reference();
    let config = contract.config.clone().expect("reference config");
    init_simulation(Arc::new(contract), config).expect("reference session")
}

#[cfg(test)]
mod tests {
    use super::*;
    use cdl_core::parser::parse_goal;
    use cdl_core::{Evaluator, FactStore};

    #[test]
    fn chain_closure_size() {
        let n = 12;
        let program = chain_program(n);
        let store = FactStore::for_program(&program).unwrap();
        let ev = Evaluator::with_defaults(program).unwrap();
        let reach = ev.query(&store, &parse_goal("reach(X, Y)").unwrap()).unwrap();
        assert_eq!(reach.len(), n * (n + 1) / 2);
        let nodes = n + 1;
        let unreached = ev.query(&store, &parse_goal("unreached(X, Y)").unwrap()).unwrap();
        assert_eq!(unreached.len(), nodes * nodes - reach.len());
    }

    #[test]
    fn reference_session_starts_active() {
        assert_eq!(reference_session().status, "active");
    }
}
