use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use srvnp::fixtures;
use srvnp::routing::compute_eq1;
use srvnp::sim::{self, InvariantReport};
use srvnp::sweep::{self, SweepParam, SweepSpec};
use srvnp::{run_scenario, Protocol, ScenarioConfig};

#[derive(Parser)]
#[command(name = "srvnp", version, about = "Power-aware on-demand routing simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and print its CSV row.
    Run {
        config: PathBuf,
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        protocol: Option<Protocol>,
    },
    /// Run a parameter sweep over a base scenario.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        param: SweepParam,
        /// Comma-separated parameter values.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        values: Vec<f64>,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        seeds: Vec<u64>,
        /// Comma-separated protocols; the config's protocol when omitted with
        /// --protocol, both otherwise.
        #[arg(long, value_delimiter = ',')]
        protocols: Vec<Protocol>,
        #[arg(long)]
        protocol: Option<Protocol>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a built-in worked example.
    Fixtures {
        name: FixtureName,
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Parse and check a scenario file.
    Validate { config: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum FixtureName {
    Fig1,
    Fig2,
    Table1,
}

enum Failure {
    Usage(String),
    Invariant(String),
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

fn load(path: &Path) -> Result<ScenarioConfig, Failure> {
    ScenarioConfig::from_file(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| Failure::Usage(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn check(inv: &InvariantReport) -> Result<(), Failure> {
    if inv.is_clean() {
        Ok(())
    } else {
        Err(Failure::Invariant(format!("invariant violation: {inv:?}")))
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run {
            config,
            trace,
            out,
            protocol,
        } => {
            let mut cfg = load(&config)?;
            if let Some(p) = protocol {
                cfg.protocol = p;
            }
            let res = run_scenario(&cfg, trace.is_some()).map_err(|e| Failure::Usage(e.to_string()))?;
            if let (Some(path), Some(text)) = (trace.as_deref(), res.trace.as_deref()) {
                fs::write(path, text)?;
            }
            write_or_print(out.as_deref(), &sim::to_csv(std::slice::from_ref(&res)))?;
            check(&res.invariants)
        }
        Command::Sweep {
            config,
            param,
            values,
            seeds,
            protocols,
            protocol,
            out,
        } => {
            let base = load(&config)?;
            let protocols = match (protocols.is_empty(), protocol) {
                (false, _) => protocols,
                (true, Some(p)) => vec![p],
                (true, None) => vec![Protocol::Srvnp, Protocol::AodvBaseline],
            };
            let spec = SweepSpec {
                param,
                values,
                seeds,
                protocols,
            };
            let rows = sweep::sweep(&spec, &base).map_err(|e| Failure::Usage(e.to_string()))?;
            write_or_print(out.as_deref(), &sweep::to_csv(&spec, &rows))?;
            for r in &rows {
                check(&r.result.invariants)?;
            }
            Ok(())
        }
        Command::Fixtures { name, trace } => {
            let text = match name {
                FixtureName::Table1 => {
                    let mut s = String::from("node,vn,min_ttl,hops,power,total,printed\n");
                    for r in fixtures::table1() {
                        s.push_str(&format!(
                            "{},{},{},{},{},{},{}\n",
                            r.node,
                            r.ctx.vn_count,
                            r.ctx.min_rpr_ttl,
                            r.ctx.hops_to_sender,
                            r.ctx.power,
                            compute_eq1(&r.ctx),
                            r.printed_total
                        ));
                    }
                    s.push_str(&format!(
                        "selected among L,P1,P: {}\n",
                        fixtures::table1_selection().unwrap_or("none")
                    ));
                    s
                }
                FixtureName::Fig1 => {
                    let o = fixtures::run_fig1().map_err(|e| Failure::Usage(e.to_string()))?;
                    if let Some(p) = &trace {
                        fs::write(p, &o.trace)?;
                    }
                    format!(
                        "discovered: {}\nrepaired: {}\nE virtual nodes for D: {}\n",
                        o.discovered.as_deref().unwrap_or("none"),
                        o.repaired.as_deref().unwrap_or("none"),
                        o.e_vns_for_d.join(",")
                    )
                }
                FixtureName::Fig2 => {
                    let o = fixtures::run_fig2().map_err(|e| Failure::Usage(e.to_string()))?;
                    if let Some(p) = &trace {
                        fs::write(p, &o.trace)?;
                    }
                    let cands: Vec<String> = o
                        .candidates
                        .iter()
                        .map(|c| format!("{}={} ({})", c.node, c.score, c.zone.as_str()))
                        .collect();
                    format!(
                        "before: {}\ncandidates: {}\nselected: {}\nrepair via: {} score {}\nrepaired: {}\n",
                        o.before.as_deref().unwrap_or("none"),
                        cands.join(", "),
                        o.selected.as_deref().unwrap_or("none"),
                        o.repair_via.as_deref().unwrap_or("none"),
                        o.repair_score.map_or("NA".into(), |s| s.to_string()),
                        o.repaired.as_deref().unwrap_or("none"),
                    )
                }
            };
            print!("{text}");
            Ok(())
        }
        Command::Validate { config } => {
            load(&config)?;
            println!("{}: ok", config.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Invariant(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
