use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use cdl_cli::api::{router, AppState};
use cdl_cli::commands::{self, Failure, Outcome, QueryArgs, WhatifArgs, EXIT_DIAGNOSTICS, EXIT_INTERNAL};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cdl", version, about = "Load, check, query and simulate CDL contracts")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Parse and statically check contracts.
    Check {
        /// Bundle directories, rule files, or `apa-ref`.
        #[arg(required = true)]
        paths: Vec<String>,
        #[arg(long)]
        facts: Vec<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Evaluate a goal against the initial facts, or a simulated state.
    Query {
        contract: String,
        goal: String,
        #[arg(long)]
        facts: Vec<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        script: Option<PathBuf>,
        #[arg(long)]
        proof: bool,
        #[arg(long)]
        json: bool,
    },
    /// Run a lifecycle script and print the final state.
    Simulate {
        contract: String,
        #[arg(long)]
        facts: Vec<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        script: Option<PathBuf>,
        /// Write the trace here; `-` prints it instead of the state.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// List FAQs, answer one, or report clause coverage.
    Faq {
        contract: String,
        id: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        script: Option<PathBuf>,
        #[arg(long)]
        coverage: bool,
        #[arg(long)]
        json: bool,
    },
    /// Apply a scenario to every contract in a portfolio and diff a goal.
    Whatif {
        #[arg(long, conflicts_with = "generate")]
        portfolio: Option<PathBuf>,
        #[arg(long)]
        generate: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, conflicts_with = "payment_bp")]
        scenario: Option<PathBuf>,
        /// Raise every monthly payment by this many basis points.
        #[arg(long, allow_hyphen_values = true)]
        payment_bp: Option<i64>,
        #[arg(long)]
        goal: String,
        #[arg(long)]
        csv: bool,
    },
    /// Write synthetic contract bundles.
    Generate {
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the JSON API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Extra bundles to register, by directory.
        #[arg(long)]
        contract: Vec<PathBuf>,
        /// Directories the what-if endpoint may read.
        #[arg(long)]
        portfolio_root: Vec<PathBuf>,
    },
}

fn serve(addr: SocketAddr, bundles: Vec<PathBuf>, roots: Vec<PathBuf>) -> Outcome {
    let mut state = AppState::with_reference();
    {
        let s = std::sync::Arc::get_mut(&mut state).expect("fresh state");
        s.portfolio_roots = roots;
        for dir in &bundles {
            let c = commands::open_contract(&dir.to_string_lossy(), &[])?;
            let id = s.register(c);
            eprintln!("registered {id}");
        }
    }
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, router(state)).await
    })?;
    Ok(String::new())
}

fn dispatch(cmd: Cmd) -> Outcome {
    match cmd {
        Cmd::Check { paths, facts, json } => commands::check(&paths, &facts, json),
        Cmd::Query { contract, goal, facts, config, script, proof, json } => commands::query(QueryArgs {
            contract: &contract,
            facts: &facts,
            config: config.as_deref(),
            script: script.as_deref(),
            goal: &goal,
            proof,
            json,
        }),
        Cmd::Simulate { contract, facts, config, script, trace } => {
            commands::simulate(&contract, &facts, config.as_deref(), script.as_deref(), trace.as_deref())
        }
        Cmd::Faq { contract, id, config, script, coverage, json } => {
            commands::faq(&contract, config.as_deref(), script.as_deref(), id.as_deref(), coverage, json)
        }
        Cmd::Whatif { portfolio, generate, seed, scenario, payment_bp, goal, csv } => commands::whatif(WhatifArgs {
            portfolio: portfolio.as_deref(),
            generate,
            seed,
            scenario: scenario.as_deref(),
            payment_bp,
            goal: &goal,
            csv,
        }),
        Cmd::Generate { count, seed, out } => commands::generate(count, seed, &out),
        Cmd::Serve { addr, contract, portfolio_root } => serve(addr, contract, portfolio_root),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_DIAGNOSTICS } else { 0 });
        }
    };
    match dispatch(cli.command) {
        Ok(text) => {
            let _ = std::io::stdout().write_all(text.as_bytes());
            ExitCode::SUCCESS
        }
        Err(Failure { code, text }) => {
            // Diagnostics belong on stdout so `--json` output stays parseable.
            if code == EXIT_INTERNAL {
                let _ = std::io::stderr().write_all(text.as_bytes());
            } else {
                let _ = std::io::stdout().write_all(text.as_bytes());
            }
            ExitCode::from(code)
        }
    }
}
