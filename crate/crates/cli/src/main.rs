use std::path::PathBuf;
use std::process::ExitCode;

use chrono::{DateTime, Utc};
use clap::{Args, Parser, Subcommand};
use hrpkit::{AddressFormat, ErrorPolicy, Protocol};

mod commands;

/// Detect highly responsive /24 prefixes in IPv4 scan output and plan
/// application-layer scans around them.
#[derive(Parser, Debug)]
#[command(name = "hrpkit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Aggregate scan files into per-/24 counts and classify HRPs.
    Detect(DetectArgs),
    /// Attach origin AS and covering route to prefix stats.
    Enrich(EnrichArgs),
    /// Compare HRPs across services (one stats file per service).
    Portmatrix(PortmatrixArgs),
    /// HRP address share per scan and persistence across scans of one service.
    Stability(StabilityArgs),
    /// Compare HRP sets of two vantage points.
    Vantage(VantageArgs),
    /// Join application-layer results with the HRP classification.
    Applayer(ApplayerArgs),
    /// Build a sampled target list.
    Plan(PlanArgs),
    /// Score a plan against full-scan ground truth.
    Evaluate(EvaluateArgs),
}

#[derive(Args, Debug)]
struct Output {
    /// Report destination; standard output when absent.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Counters destination; standard error when absent.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ScanInput {
    #[arg(long, default_value = "plain")]
    format: AddressFormat,
    #[arg(long, default_value = "lenient")]
    policy: ErrorPolicy,
}

/// Expected service; inferred from the first stats row when `--port` is absent.
#[derive(Args, Debug)]
struct ServiceFilter {
    #[arg(long)]
    port: Option<u16>,
    #[arg(long)]
    proto: Option<Protocol>,
}

#[derive(Args, Debug)]
struct DetectArgs {
    #[arg(long)]
    port: u16,
    #[arg(long, default_value = "tcp")]
    proto: Protocol,
    #[arg(long, default_value_t = 0.90)]
    threshold: f64,
    #[command(flatten)]
    input: ScanInput,
    /// Defaults to the first input's file stem.
    #[arg(long)]
    scan_id: Option<String>,
    /// RFC 3339; defaults to the Unix epoch.
    #[arg(long)]
    timestamp: Option<DateTime<Utc>>,
    #[arg(long)]
    vantage: Option<String>,
    /// Write json-lines instead of csv.
    #[arg(long)]
    jsonl: bool,
    /// Also write the responsiveness histogram as csv.
    #[arg(long)]
    histogram: Option<PathBuf>,
    #[command(flatten)]
    out: Output,
    #[arg(required = true)]
    scans: Vec<PathBuf>,
}

#[derive(Args, Debug)]
struct EnrichArgs {
    /// `prefix/len,asn` per line.
    #[arg(long)]
    routes: PathBuf,
    #[arg(long, default_value = "lenient")]
    policy: ErrorPolicy,
    /// Also write the per-AS summary as json.
    #[arg(long)]
    as_summary: Option<PathBuf>,
    #[arg(long)]
    jsonl: bool,
    #[command(flatten)]
    out: Output,
    #[arg(required = true)]
    stats: Vec<PathBuf>,
}

#[derive(Args, Debug)]
struct PortmatrixArgs {
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(required = true)]
    stats: Vec<PathBuf>,
}

#[derive(Args, Debug)]
struct StabilityArgs {
    #[command(flatten)]
    service: ServiceFilter,
    /// One RFC 3339 timestamp per input, comma separated. Without it inputs
    /// are taken in the order given.
    #[arg(long, value_delimiter = ',')]
    timestamps: Vec<DateTime<Utc>>,
    #[arg(long, default_value_t = hrpkit::analytics::DEFAULT_MISSING_N)]
    persistence_n: u32,
    /// Also write the per-scan series as csv.
    #[arg(long)]
    series_csv: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(required = true)]
    stats: Vec<PathBuf>,
}

#[derive(Args, Debug)]
struct VantageArgs {
    #[command(flatten)]
    service: ServiceFilter,
    #[arg(long)]
    output: Option<PathBuf>,
    a: PathBuf,
    b: PathBuf,
}

#[derive(Args, Debug)]
struct ApplayerArgs {
    #[command(flatten)]
    service: ServiceFilter,
    /// Raw scan the stats were computed from; supplies responsive addresses.
    #[arg(long)]
    scan: PathBuf,
    #[command(flatten)]
    input: ScanInput,
    /// `ip,port,proto,status,identifier` csv.
    #[arg(long)]
    results: PathBuf,
    /// Drop app_error outcomes from the success denominator.
    #[arg(long)]
    exclude_app_errors: bool,
    /// Also write the per-HRP success count distribution as csv.
    #[arg(long)]
    cdf: Option<PathBuf>,
    /// Include one entry per HRP in the report.
    #[arg(long)]
    per_prefix: bool,
    #[arg(long)]
    output: Option<PathBuf>,
    stats: PathBuf,
}

#[derive(Args, Debug)]
struct PlanArgs {
    #[command(flatten)]
    service: ServiceFilter,
    #[arg(long, default_value_t = 10)]
    k: u16,
    #[arg(long, default_value_t = 0)]
    rng_seed: u64,
    #[arg(long, default_value_t = 0.10)]
    proxy_max_success: f64,
    #[arg(long, default_value_t = 0.90)]
    cdn_min_success: f64,
    /// Skip seeds that did not respond in the scan.
    #[arg(long)]
    responsive_seeds_only: bool,
    /// Raw scan the stats were computed from; supplies responsive addresses.
    #[arg(long)]
    scan: PathBuf,
    #[command(flatten)]
    input: ScanInput,
    /// Results of probing the sample; diverse prefixes are escalated.
    #[arg(long)]
    sample_results: Option<PathBuf>,
    /// Also write the bare target addresses, one per line.
    #[arg(long)]
    ip_list: Option<PathBuf>,
    #[command(flatten)]
    out: Output,
    stats: PathBuf,
    /// `ip,name_count` csv.
    seeds: PathBuf,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    output: Option<PathBuf>,
    plan: PathBuf,
    /// Full-scan application-layer results.
    truth: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Detect(a) => commands::detect(a),
        Command::Enrich(a) => commands::enrich(a),
        Command::Portmatrix(a) => commands::portmatrix(a),
        Command::Stability(a) => commands::stability(a),
        Command::Vantage(a) => commands::vantage(a),
        Command::Applayer(a) => commands::applayer(a),
        Command::Plan(a) => commands::plan(a),
        Command::Evaluate(a) => commands::evaluate(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("hrpkit: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}
