use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use llc_consolidation::model::ServerProfile;
use llc_consolidation::scenario::{self, Comparison, RunReport, Scenario, ScenarioConfig};
use llc_consolidation::synth::{self, GeneratorParams};
use llc_consolidation::Error;

#[derive(Parser)]
#[command(
    name = "consolidate",
    version,
    about = "Cache-aware workload consolidation simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic degradation table for a server preset.
    GenerateProfile(GenerateArgs),
    /// Run one sequence through the greedy allocator.
    Run(RunArgs),
    /// Run sequences over a list of α values and write a summary CSV.
    Sweep(SweepArgs),
    /// Compare greedy placement with the exhaustive optimum.
    Compare(CompareArgs),
    /// Check a scenario and optionally a table file, then exit.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Preset name (M1 or M2).
    #[arg(long)]
    server: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    baseline: Option<f64>,
    #[arg(long)]
    penalty: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
    /// Output path, or - for stdout.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario JSON file. The bundled four-server example is used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the scenario seed used for generated tables.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    exhaustive_limit: Option<usize>,
    /// Reject off-grid sizes instead of snapping them.
    #[arg(long)]
    no_snap: bool,
}

impl ScenarioArgs {
    fn load(&self) -> Result<Scenario> {
        let mut config = match &self.config {
            Some(path) => ScenarioConfig::load(path)
                .with_context(|| format!("reading scenario {}", path.display()))?,
            None => scenario::four_server_example(),
        };
        if let Some(seed) = self.seed {
            config.options.seed = seed;
        }
        if let Some(limit) = self.exhaustive_limit {
            config.options.exhaustive_limit = limit;
        }
        if self.no_snap {
            config.options.snap = false;
        }
        let scenario = Scenario::from_config(&config)?;
        for w in &scenario.warnings {
            eprintln!("warning: {w}");
        }
        Ok(scenario)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long)]
    sequence: String,
    /// Defaults to the first α of the scenario sweep.
    #[arg(long)]
    alpha: Option<f64>,
    /// Report JSON path, or - for stdout.
    #[arg(long)]
    out: PathBuf,
    /// Optional per-decision CSV.
    #[arg(long)]
    decisions: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Sequences to run; all when omitted.
    #[arg(long = "sequence")]
    sequences: Vec<String>,
    /// Comma-separated α list overriding the scenario sweep.
    #[arg(long, value_delimiter = ',')]
    alphas: Vec<f64>,
    /// Summary CSV path, or - for stdout.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    decisions: Option<PathBuf>,
    /// Optional JSON array of every report.
    #[arg(long)]
    reports: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long)]
    sequence: String,
    #[arg(long)]
    alpha: Option<f64>,
    /// Comparison JSON path, or - for stdout.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Degradation table file to check.
    #[arg(long)]
    table: Option<PathBuf>,
}

fn open_output(path: &Path) -> Result<Box<dyn Write>> {
    if path == Path::new("-") {
        return Ok(Box::new(io::stdout().lock()));
    }
    let file = File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(Box::new(BufWriter::new(file)))
}

fn open_optional(path: Option<&PathBuf>) -> Result<Option<Box<dyn Write>>> {
    path.map(|p| open_output(p)).transpose()
}

fn write_json<T: serde::Serialize>(value: &T, mut out: Box<dyn Write>) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

fn default_alpha(scenario: &Scenario, alpha: Option<f64>) -> f64 {
    alpha.unwrap_or_else(|| scenario.sweep_alphas()[0])
}

fn generate(args: GenerateArgs) -> Result<()> {
    let profile = ServerProfile::preset(&args.server, args.server.as_str())
        .ok_or_else(|| Error::InvalidConfig(format!("unknown preset {:?}", args.server)))?;
    let mut params = GeneratorParams::default().with_seed(args.seed);
    if let Some(v) = args.baseline {
        params.baseline_coefficient = v;
    }
    if let Some(v) = args.penalty {
        params.cache_penalty = v;
    }
    if let Some(v) = args.noise {
        params.noise_amplitude = v;
    }
    params.check()?;
    let mut out = open_output(&args.out)?;
    let table = synth::generate_table(&profile, &params)?;
    synth::write_table(&table, &mut out)?;
    out.flush()?;
    Ok(())
}

fn run(args: RunArgs) -> Result<()> {
    let out = open_output(&args.out)?;
    let decisions = open_optional(args.decisions.as_ref())?;
    let scenario = args.scenario.load()?;
    let alpha = default_alpha(&scenario, args.alpha);
    let report = scenario::run_scenario(&scenario, &args.sequence, alpha)?;
    if let Some(w) = decisions {
        scenario::write_decisions_csv(std::slice::from_ref(&report), w)?;
    }
    write_json(&report, out)
}

fn sweep(args: SweepArgs) -> Result<()> {
    let out = open_output(&args.out)?;
    let decisions = open_optional(args.decisions.as_ref())?;
    let reports_out = open_optional(args.reports.as_ref())?;
    let scenario = args.scenario.load()?;
    let alphas = if args.alphas.is_empty() {
        scenario.sweep_alphas()
    } else {
        args.alphas
    };
    let sequences = if args.sequences.is_empty() {
        scenario.sequences.keys().cloned().collect()
    } else {
        args.sequences
    };
    let mut reports: Vec<RunReport> = Vec::new();
    for name in &sequences {
        for &alpha in &alphas {
            reports.push(scenario::run_scenario(&scenario, name, alpha)?);
        }
    }
    if let Some(w) = decisions {
        scenario::write_decisions_csv(&reports, w)?;
    }
    if let Some(w) = reports_out {
        write_json(&reports, w)?;
    }
    scenario::write_summary_csv(&reports, out)?;
    Ok(())
}

fn compare(args: CompareArgs) -> Result<()> {
    let out = open_output(&args.out)?;
    let scenario = args.scenario.load()?;
    let alpha = default_alpha(&scenario, args.alpha);
    let comparison: Comparison = scenario::compare_with_oracle(&scenario, &args.sequence, alpha)?;
    eprintln!(
        "greedy {:.6}, oracle {:.6}, gap {:.4}",
        comparison.greedy.objective, comparison.oracle.objective, comparison.gap
    );
    write_json(&comparison, out)
}

fn validate(args: ValidateArgs) -> Result<()> {
    let scenario = args.scenario.load()?;
    for alpha in scenario.sweep_alphas() {
        scenario.check_initial(alpha)?;
    }
    if let Some(path) = &args.table {
        let table =
            synth::load_table(path).with_context(|| format!("checking {}", path.display()))?;
        eprintln!(
            "{}: {} entries, llc {} bytes",
            path.display(),
            table.entries().len(),
            table.llc_size()
        );
    }
    eprintln!(
        "ok: {} servers, {} sequences",
        scenario.servers.len(),
        scenario.sequences.len()
    );
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_capacity_error() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::GenerateProfile(a) => generate(a),
        Command::Run(a) => run(a),
        Command::Sweep(a) => sweep(a),
        Command::Compare(a) => compare(a),
        Command::Validate(a) => validate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
