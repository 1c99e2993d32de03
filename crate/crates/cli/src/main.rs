use std::collections::BTreeMap;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use parley_core::domain::load_domain_config_file;
use parley_core::engine::{to_jsonl_line, Engine, SessionSettings};
use parley_gateway::Gateway;
use parley_sim::metrics::compute_metrics;
use parley_sim::persona::Persona;
use parley_sim::policy::Policy;
use parley_sim::runner::{run_session, session_rng, RunSpec};
use parley_sim::suite::{read_report, run_suite, summary_rows, to_csv, write_report, Suite};

#[derive(Parser)]
#[command(name = "parley", about = "Screening and negotiation governance engine", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one session and print its metrics.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        persona: PathBuf,
        #[arg(long, default_value = "responsive")]
        policy: Policy,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        no_stcc: bool,
        #[arg(long)]
        no_preflight: bool,
        /// Write the audit log here as JSON lines.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run every arm and scenario of a suite over a seed range.
    Suite {
        #[arg(long)]
        suite: PathBuf,
        /// Half-open range such as `0..5`.
        #[arg(long, default_value = "0..5", value_parser = parse_seeds)]
        seeds: Range<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the summary of a suite output directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Serve the HTTP gateway.
    Serve {
        /// Domain config files to load; repeatable.
        #[arg(long, required = true)]
        config: Vec<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Csv,
}

fn parse_seeds(s: &str) -> Result<Range<u64>, String> {
    let (a, b) = s.split_once("..").ok_or("expected n..m")?;
    let a: u64 = a.trim().parse().map_err(|e| format!("start: {e}"))?;
    let b: u64 = b.trim().parse().map_err(|e| format!("end: {e}"))?;
    if a >= b {
        return Err("empty seed range".into());
    }
    Ok(a..b)
}

type Res = Result<(), String>;

fn run(config: &Path, persona: &Path, policy: Policy, seed: u64, settings: SessionSettings, trace: Option<&Path>) -> Res {
    let config = Arc::new(load_domain_config_file(config).map_err(|e| e.to_string())?);
    let persona = Persona::load(persona).map_err(|e| e.to_string())?;
    let job = RunSpec {
        session_id: format!("{}-{seed}", persona.persona_id),
        config: config.clone(),
        persona: &persona,
        policy,
        settings,
        seed,
        metadata: BTreeMap::new(),
    };
    let result = run_session(&Engine::default(), job, &mut session_rng(seed, 0)).map_err(|e| e.to_string())?;
    if let Some(path) = trace {
        let lines: String = result.trace.iter().map(|e| to_jsonl_line(e) + "\n").collect();
        std::fs::write(path, lines).map_err(|e| format!("{}: {e}", path.display()))?;
    }
    let metrics = compute_metrics(&result.trace, &config).map_err(|e| e.to_string())?;
    println!("{}", serde_json::to_string_pretty(&metrics).map_err(|e| e.to_string())?);
    Ok(())
}

const TABLE_COLUMNS: &[&str] = &[
    "arm_id",
    "sessions",
    "agreement_rate",
    "total_rounds_mean",
    "screening_rounds_mean",
    "ig_total_bits_mean",
    "round1_ig_bits_mean",
    "normalized_utility_mean",
    "escalations_per_session",
    "violation_rate_high",
];

fn table(header: &[String], rows: &[Vec<String>]) -> String {
    let idx: Vec<usize> = TABLE_COLUMNS.iter().filter_map(|c| header.iter().position(|h| h == c)).collect();
    let widths: Vec<usize> =
        idx.iter().map(|&i| rows.iter().map(|r| r[i].len()).chain([header[i].len()]).max().unwrap_or(0)).collect();
    let line = |cells: Vec<&str>| {
        cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect::<Vec<_>>().join("  ").trim_end().to_string()
    };
    let mut out = line(idx.iter().map(|&i| header[i].as_str()).collect()) + "\n";
    for r in rows {
        out += &(line(idx.iter().map(|&i| r[i].as_str()).collect()) + "\n");
    }
    out
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res: Res = match cli.command {
        Command::Run { config, persona, policy, seed, no_stcc, no_preflight, trace } => {
            let settings = SessionSettings { stcc_enabled: !no_stcc, preflight_enabled: !no_preflight, ..Default::default() };
            run(&config, &persona, policy, seed, settings, trace.as_deref())
        }
        Command::Suite { suite, seeds, out } => (|| {
            let suite = Suite::load(&suite).map_err(|e| e.to_string())?;
            let report = run_suite(&suite, seeds, &Engine::default()).map_err(|e| e.to_string())?;
            write_report(&report, &out).map_err(|e| e.to_string())?;
            let (h, rows) = summary_rows(&report);
            print!("{}", table(&h, &rows));
            eprintln!("wrote {} sessions to {}", report.sessions.len(), out.display());
            Ok(())
        })(),
        Command::Report { input, format } => (|| {
            let report = read_report(&input).map_err(|e| e.to_string())?;
            let (h, rows) = summary_rows(&report);
            match format {
                Format::Table => print!("{}", table(&h, &rows)),
                Format::Csv => print!("{}", to_csv(&h, &rows).map_err(|e| e.to_string())?),
            }
            Ok(())
        })(),
        Command::Serve { config, addr } => (|| {
            let configs = config
                .iter()
                .map(|p| load_domain_config_file(p).map_err(|e| e.to_string()))
                .collect::<Result<Vec<_>, _>>()?;
            let gateway = Arc::new(Gateway::new(Engine::default(), configs));
            eprintln!("serving {} on http://{addr}", gateway.domains().collect::<Vec<_>>().join(", "));
            let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
            rt.block_on(parley_gateway::serve(gateway, &addr)).map_err(|e| e.to_string())
        })(),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
