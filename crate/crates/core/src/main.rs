use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};

use privlms::harness::{self, ScenarioConfig};
use privlms::simulate::{Algorithm, NoiseSource};
use privlms::{Error, Result};

#[derive(Parser)]
#[command(name = "privlms", version, about = "Privacy-preserving adapt-then-project LMS experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run theory and Monte-Carlo curves and write outputs.
    Simulate(Common),
    /// Evaluate the analytic curves only.
    Theory(Common),
    /// Build the network and print the assumption report.
    Validate(Common),
    /// Print the resolved scenario configuration.
    PresetDump(Common),
}

#[derive(Args)]
struct Common {
    /// Preset name (line, dense, tracking, desk) or path to a JSON config.
    #[arg(long, default_value = "line")]
    scenario: String,
    #[arg(long, value_delimiter = ',')]
    rho: Option<Vec<f64>>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_delimiter = ',', value_parser = parse_algo)]
    algos: Option<Vec<Algorithm>>,
    #[arg(long = "noise-source", value_delimiter = ',', value_parser = parse_source)]
    noise_source: Option<Vec<NoiseSource>>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Continue even when required assumption checks fail.
    #[arg(long)]
    force: bool,
}

fn parse_algo(s: &str) -> std::result::Result<Algorithm, String> {
    serde_json::from_value(Value::String(s.replace('-', "_"))).map_err(|_| format!("unknown algorithm '{s}'"))
}

fn parse_source(s: &str) -> std::result::Result<NoiseSource, String> {
    serde_json::from_value(Value::String(s.replace('-', "_"))).map_err(|_| format!("unknown noise source '{s}'"))
}

fn resolve(c: &Common) -> Result<ScenarioConfig> {
    let mut o = Map::new();
    if let Some(v) = &c.rho {
        o.insert("rho".into(), json!(v));
    }
    if let Some(v) = c.runs {
        o.insert("runs".into(), json!(v));
    }
    if let Some(v) = c.iters {
        o.insert("iterations".into(), json!(v));
    }
    if let Some(v) = c.seed {
        o.insert("seed".into(), json!(v));
    }
    if let Some(v) = &c.algos {
        o.insert("algorithms".into(), json!(v));
    }
    if let Some(v) = &c.noise_source {
        o.insert("noise_sources".into(), json!(v));
    }
    let overrides = Value::Object(o);
    let is_file = c.scenario.ends_with(".json") || std::path::Path::new(&c.scenario).is_file();
    if !is_file {
        return harness::preset(&c.scenario, Some(&overrides));
    }
    let text = std::fs::read_to_string(&c.scenario).map_err(|e| Error::io(&c.scenario, e))?;
    let base = ScenarioConfig::from_json(&text)?;
    let cfg = harness::merge(base, &overrides)?;
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::PresetDump(c) => {
            println!("{}", resolve(&c)?.to_json());
        }
        Command::Validate(c) => {
            let cfg = resolve(&c)?;
            let built = harness::build_scenario(&cfg)?;
            let text = serde_json::to_string_pretty(&built.report).map_err(|e| Error::Serialization(e.to_string()))?;
            println!("{text}");
            if !built.report.required_pass() && !c.force {
                return Err(Error::Assumption("required assumption checks failed".into()));
            }
        }
        Command::Simulate(c) => experiment(&c, true)?,
        Command::Theory(c) => experiment(&c, false)?,
    }
    Ok(())
}

fn experiment(c: &Common, simulate: bool) -> Result<()> {
    let mut cfg = resolve(c)?;
    if !simulate {
        cfg.simulate = false;
        cfg.theory = true;
    }
    let bundle = harness::run_experiment(&cfg, c.force)?;
    for note in &bundle.summary.notices {
        eprintln!("notice: {note}");
    }
    for path in harness::emit(&bundle, &c.out)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
