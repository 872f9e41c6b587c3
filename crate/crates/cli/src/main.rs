use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mvad_core::evaluation::{match_reports, read_labels, FpUnit, SyntheticSpec, DEFAULT_K};
use mvad_core::ingestion::SourceKind;
use mvad_core::output::read_report_detections;
use mvad_core::pipeline::{self, RunConfig};

#[derive(Parser)]
#[command(name = "mvad", version, about = "Online anomaly detection for multivariate time series")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Detect anomalies in a CSV file, stdin (`-`) or a TCP line stream (`tcp://host:port`).
    Run(RunArgs),
    /// Score a reports file against labels.
    Evaluate(EvaluateArgs),
    /// Generate a labeled synthetic data set.
    GenSynth(GenSynthArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML configuration file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    source: Option<String>,
    /// Seconds between samples when replaying.
    #[arg(long)]
    interval: Option<f64>,
    /// Correlation window length.
    #[arg(long)]
    p: Option<usize>,
    /// Correlation threshold; peers with |r| >= thd-pos take part in polling.
    #[arg(long = "thd-pos", allow_negative_numbers = true)]
    thd_pos: Option<f64>,
    /// Threshold window of each detector.
    #[arg(long)]
    window: Option<usize>,
    /// Model initialization seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Reports file (JSON lines); stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-variable detector trace (CSV).
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Per-variable status and joint involvement (CSV).
    #[arg(long)]
    plot: Option<PathBuf>,
    /// Run summary (JSON).
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Abort on the first malformed record.
    #[arg(long, conflicts_with = "permissive")]
    strict: bool,
    /// Skip malformed records with a warning.
    #[arg(long)]
    permissive: bool,
    /// The input has no header line; variables are named V1..VN.
    #[arg(long)]
    no_header: bool,
    /// Include per-seed poll results in reports.
    #[arg(long)]
    verbose: bool,
    /// Print the effective configuration and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    reports: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    /// Matching tolerance in time points.
    #[arg(short, long, default_value_t = DEFAULT_K)]
    k: u64,
    /// Print the metrics as JSON.
    #[arg(long)]
    json: bool,
    /// Count false positives per reported time point or per (time point, variable).
    #[arg(long, value_enum, default_value_t = FpCount::Time)]
    fp_unit: FpCount,
}

#[derive(Clone, Copy, ValueEnum)]
enum FpCount {
    Time,
    Variable,
}

#[derive(Args)]
struct GenSynthArgs {
    /// Generator settings (TOML); defaults are used for missing keys.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Data file (CSV).
    #[arg(long)]
    out: PathBuf,
    /// Labels file (CSV).
    #[arg(long)]
    labels: PathBuf,
    /// Number of single-point noise spikes to add.
    #[arg(long)]
    spikes: Option<usize>,
}

enum Failure {
    Validation(Vec<String>),
    Runtime(String),
}

impl From<mvad_core::Error> for Failure {
    fn from(e: mvad_core::Error) -> Self {
        match e {
            mvad_core::Error::InvalidConfig(msg) => Failure::Validation(vec![msg]),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path)
        .map_err(|e| Failure::Validation(vec![format!("{}: {e}", path.display())]))
}

fn open(path: &Path) -> Result<BufReader<File>, Failure> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn in_file(path: &Path, e: mvad_core::Error) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

fn run_config(args: &RunArgs) -> Result<RunConfig, Failure> {
    let mut config = match &args.config {
        Some(path) => toml::from_str(&read_text(path)?)
            .map_err(|e| Failure::Validation(vec![format!("{}: {e}", path.display())]))?,
        None => RunConfig::default(),
    };
    let mut problems = Vec::new();
    if let Some(source) = &args.source {
        config.source.location = source.clone();
    }
    let loc = &config.source.location;
    config.source.kind = if loc == "-" || loc.starts_with("tcp://") {
        SourceKind::LineStream
    } else {
        SourceKind::CsvReplay
    };
    if let Some(secs) = args.interval {
        match Duration::try_from_secs_f64(secs) {
            Ok(d) => config.source.interval = d,
            Err(_) => problems.push(format!("interval must be a non-negative number of seconds, got {secs}")),
        }
    }
    if let Some(p) = args.p {
        config.correlation_window = p;
    }
    if let Some(thd) = args.thd_pos {
        config.thd_pos = thd;
    }
    if let Some(w) = args.window {
        config.detector.window = w;
    }
    if let Some(seed) = args.seed {
        config.detector.training.rng_seed = seed;
    }
    if args.strict {
        config.source.strict = true;
    }
    if args.permissive {
        config.source.strict = false;
    }
    if args.no_header {
        config.source.header_required = false;
    }
    let out = &mut config.output;
    for (slot, flag) in [
        (&mut out.reports, &args.out),
        (&mut out.trace, &args.trace),
        (&mut out.plot, &args.plot),
        (&mut out.summary, &args.summary),
    ] {
        if flag.is_some() {
            slot.clone_from(flag);
        }
    }
    out.verbose |= args.verbose;

    if args.print_config && problems.is_empty() {
        return Ok(config);
    }
    if let Err(found) = config.validate() {
        problems.extend(found);
    }
    if problems.is_empty() {
        Ok(config)
    } else {
        Err(Failure::Validation(problems))
    }
}

fn run(args: RunArgs) -> Result<(), Failure> {
    let config = run_config(&args)?;
    if args.print_config {
        let text = toml::to_string_pretty(&config).map_err(|e| Failure::Runtime(e.to_string()))?;
        print!("{text}");
        return Ok(());
    }

    let stop = Arc::new(AtomicBool::new(false));
    let flag = Arc::clone(&stop);
    if let Err(e) = ctrlc::set_handler(move || flag.store(true, Ordering::Relaxed)) {
        log::warn!("cannot install interrupt handler: {e}");
    }

    let summary = pipeline::run(&config, &mut [], Some(&stop))?;
    eprintln!(
        "samples={} reports={} anomalous_verdicts={} retrains={} latency_mean={:.6}s latency_std={:.6}s latency_max={:.6}s elapsed={:.3}s{}",
        summary.samples,
        summary.reports,
        summary.anomalous_verdicts,
        summary.retrains,
        summary.latency.mean_seconds,
        summary.latency_std_seconds,
        summary.latency.max_seconds,
        summary.elapsed_seconds,
        if summary.interrupted { " (interrupted)" } else { "" }
    );
    Ok(())
}

fn evaluate(args: EvaluateArgs) -> Result<(), Failure> {
    let detections = read_report_detections(open(&args.reports)?).map_err(|e| in_file(&args.reports, e))?;
    let labels = read_labels(open(&args.labels)?).map_err(|e| in_file(&args.labels, e))?;
    let unit = match args.fp_unit {
        FpCount::Time => FpUnit::TimePoint,
        FpCount::Variable => FpUnit::VariablePoint,
    };
    let metrics = match_reports(&detections, &labels, args.k, unit)?;
    if args.json {
        println!("{}", serde_json::to_string(&metrics).map_err(|e| Failure::Runtime(e.to_string()))?);
    } else {
        println!("{metrics}");
    }
    Ok(())
}

fn gen_synth(args: GenSynthArgs) -> Result<(), Failure> {
    let mut spec: SyntheticSpec = match &args.spec {
        Some(path) => toml::from_str(&read_text(path)?)
            .map_err(|e| Failure::Validation(vec![format!("{}: {e}", path.display())]))?,
        None => SyntheticSpec::default(),
    };
    if let Some(n) = args.spikes {
        spec.spikes = n;
    }
    let series = spec.generate(args.seed)?;
    let write = |path: &Path, text: String| {
        fs::write(path, text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
    };
    write(&args.out, series.to_csv())?;
    write(&args.labels, series.labels_csv())?;
    for (group, r) in spec.groups.iter().zip(&series.group_correlation) {
        let names: Vec<&str> = group.iter().map(|&v| series.names[v].as_str()).collect();
        println!("group {}: min |r| = {r:.6}", names.join(","));
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Evaluate(args) => evaluate(args),
        Command::GenSynth(args) => gen_synth(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(problems)) => {
            eprintln!("invalid configuration:");
            for p in problems {
                eprintln!("  {p}");
            }
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
