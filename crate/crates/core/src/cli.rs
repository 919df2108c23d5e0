//! The `mtpenergy` command line.
//!
//! Exit codes: 0 success, 1 validation errors, 2 bad usage, 3 I/O or parse
//! failure, 4 network failure.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::caex::CaexDocument;
use crate::enrg::MidRegistry;
use crate::mtp::{
    add_measurement_instance, extract_measurement_registry, inject_energy_library,
    parse_measurement_specs, validate_energy_mtp, GuidSource, MtpError,
};
use crate::pol::{
    aggregate_report, monitor, render_report, Budget, MonitorOptions, PolError, ReportFormat,
    SampleLog,
};
use crate::sim::{run_server, ServeOptions, SimError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NETWORK: i32 = 4;

/// Environment variable naming a MID registry file to use instead of the bundled one.
pub const MID_REGISTRY_ENV: &str = "MTPENERGY_MID_REGISTRY";

#[derive(Debug, Parser)]
#[command(
    name = "mtpenergy",
    version,
    about = "Energy data for Module Type Package manifests"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a manifest's energy model and print the findings
    Validate(ValidateArgs),
    /// Add the EnRGView library and measurement instances to a manifest
    Inject(InjectArgs),
    /// Serve a manifest's energy nodes from a simulated PEA
    Serve(ServeArgs),
    /// Subscribe to a PEA's energy nodes and record a sample log
    Monitor(MonitorArgs),
    /// Aggregate a sample log into an energy report
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ValidateFormat {
    Text,
    Json,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    mtp: PathBuf,
    #[arg(long, value_enum, default_value = "text")]
    format: ValidateFormat,
}

#[derive(Debug, Args)]
struct InjectArgs {
    #[arg(long)]
    mtp: PathBuf,
    #[arg(long)]
    measurements: PathBuf,
    /// Output file, or `-` for standard output
    #[arg(long)]
    out: PathBuf,
    /// Seed for reproducible GUIDs
    #[arg(long)]
    seed: Option<u64>,
    /// Allow `--out` to name the input file
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long)]
    mtp: PathBuf,
    #[arg(long)]
    profile: PathBuf,
    #[arg(long)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Run simulated time this many times faster than wall time
    #[arg(long, default_value_t = 1.0)]
    accelerate: f64,
    /// Exit after this many ticks
    #[arg(long)]
    ticks: Option<u64>,
    /// Hold the clock until the first subscription
    #[arg(long)]
    start_on_subscribe: bool,
}

#[derive(Debug, Args)]
struct MonitorArgs {
    #[arg(long)]
    mtp: PathBuf,
    /// `host:port`; defaults to the manifest's server endpoint
    #[arg(long)]
    connect: Option<String>,
    /// Stop after this many seconds
    #[arg(long, conflicts_with = "ticks")]
    duration: Option<f64>,
    /// Stop after this many update rounds
    #[arg(long)]
    ticks: Option<u64>,
    #[arg(long)]
    log: PathBuf,
    #[arg(long, default_value_t = 100)]
    interval_ms: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OutputFormat {
    Csv,
    Json,
    Text,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long)]
    log: PathBuf,
    #[arg(long)]
    mtp: PathBuf,
    #[arg(long, value_enum, default_value = "text")]
    format: OutputFormat,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A failure with its exit code; the message goes to standard error.
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn io(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_IO,
            message: message.into(),
        }
    }

    fn validation(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_VALIDATION,
            message: message.into(),
        }
    }
}

impl From<MtpError> for Failure {
    fn from(e: MtpError) -> Self {
        match e {
            MtpError::SpecParse(_) | MtpError::Caex(_) => Failure::io(e.to_string()),
            MtpError::ExtractionFailed(ref report) => {
                Failure::validation(format!("{e}\n{}", report.render_text()))
            }
            other => Failure::validation(other.to_string()),
        }
    }
}

impl From<PolError> for Failure {
    fn from(e: PolError) -> Self {
        let code = match e {
            PolError::ConnectFailure { .. } | PolError::ProtocolError { .. } => EXIT_NETWORK,
            PolError::ValidationFailed(_) => EXIT_VALIDATION,
            PolError::InsufficientSamples { .. }
            | PolError::UnitMismatch { .. }
            | PolError::LogParse { .. }
            | PolError::Io(_) => EXIT_IO,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        let code = match e {
            SimError::InvalidManifest(_) => EXIT_VALIDATION,
            SimError::BindFailure { .. } => EXIT_NETWORK,
            SimError::ParseError(_)
            | SimError::UnknownNode(_)
            | SimError::BadGenerator(_)
            | SimError::Io(_) => EXIT_IO,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type Outcome = Result<i32, Failure>;

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::io(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::io(format!("{}: {e}", path.display())))
}

fn load_doc(path: &Path) -> Result<CaexDocument, Failure> {
    let text = read_text(path)?;
    CaexDocument::parse(&text).map_err(|e| Failure::io(format!("{}: {e}", path.display())))
}

/// The bundled MID registry, or the file named by `MTPENERGY_MID_REGISTRY`.
pub fn mid_registry() -> Result<MidRegistry, String> {
    match std::env::var_os(MID_REGISTRY_ENV) {
        Some(path) => {
            let path = PathBuf::from(path);
            let text = fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
            MidRegistry::load(&text).map_err(|e| format!("{}: {e}", path.display()))
        }
        None => Ok(MidRegistry::builtin()),
    }
}

fn same_file(a: &Path, b: &Path) -> bool {
    match (fs::canonicalize(a), fs::canonicalize(b)) {
        (Ok(a), Ok(b)) => a == b,
        _ => a == b,
    }
}

fn cmd_validate(args: &ValidateArgs, mids: &MidRegistry, out: &mut dyn Write) -> Outcome {
    let doc = load_doc(&args.mtp)?;
    let report = validate_energy_mtp(&doc, mids);
    let text = match args.format {
        ValidateFormat::Text => report.render_text(),
        ValidateFormat::Json => {
            serde_json::to_string_pretty(&report).expect("reports serialize") + "\n"
        }
    };
    out.write_all(text.as_bytes())
        .map_err(|e| Failure::io(e.to_string()))?;
    Ok(if report.has_errors() {
        EXIT_VALIDATION
    } else {
        EXIT_OK
    })
}

fn cmd_inject(
    args: &InjectArgs,
    mids: &MidRegistry,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Outcome {
    let to_stdout = args.out.as_os_str() == "-";
    if !to_stdout && !args.force && same_file(&args.mtp, &args.out) {
        return Err(Failure {
            code: EXIT_USAGE,
            message: format!(
                "refusing to overwrite {} in place; pass --force",
                args.mtp.display()
            ),
        });
    }
    let mut doc = load_doc(&args.mtp)?;
    let specs = parse_measurement_specs(&read_text(&args.measurements)?)?;
    let mut guids = match args.seed {
        Some(seed) => GuidSource::seeded(seed),
        None => GuidSource::random(),
    };
    inject_energy_library(&mut doc)?;
    for spec in &specs {
        add_measurement_instance(&mut doc, spec, &mut guids, mids)?;
    }
    let report = validate_energy_mtp(&doc, mids);
    if report.has_errors() {
        let _ = err.write_all(report.render_text().as_bytes());
        return Ok(EXIT_VALIDATION);
    }
    let xml = doc.to_xml();
    if to_stdout {
        out.write_all(xml.as_bytes())
            .map_err(|e| Failure::io(e.to_string()))?;
    } else {
        write_text(&args.out, &xml)?;
    }
    Ok(EXIT_OK)
}

fn cmd_serve(args: &ServeArgs, mids: &MidRegistry, err: &mut dyn Write) -> Outcome {
    if !(args.accelerate > 0.0 && args.accelerate.is_finite()) {
        return Err(Failure {
            code: EXIT_USAGE,
            message: "--accelerate must be a positive number".into(),
        });
    }
    let options = ServeOptions {
        bind: format!("{}:{}", args.host, args.port),
        accelerate: args.accelerate,
        ticks: args.ticks,
        start_on_subscribe: args.start_on_subscribe,
    };
    run_server(&args.mtp, &args.profile, mids, options, |addr| {
        let _ = writeln!(err, "listening {addr}");
        let _ = err.flush();
    })?;
    Ok(EXIT_OK)
}

fn cmd_monitor(args: &MonitorArgs, mids: &MidRegistry) -> Outcome {
    let budget = match (args.duration, args.ticks) {
        (Some(secs), _) if secs.is_finite() && secs > 0.0 => {
            Budget::Duration(Duration::from_secs_f64(secs))
        }
        (Some(_), _) => {
            return Err(Failure {
                code: EXIT_USAGE,
                message: "--duration must be a positive number of seconds".into(),
            })
        }
        (None, Some(ticks)) => Budget::Ticks(ticks),
        (None, None) => Budget::UntilClose,
    };
    let doc = load_doc(&args.mtp)?;
    let options = MonitorOptions {
        endpoint: args.connect.clone(),
        interval_ms: args.interval_ms,
        budget,
    };
    let log = monitor(&doc, mids, &options)?;
    write_text(&args.log, &log.to_ndjson())?;
    Ok(EXIT_OK)
}

fn cmd_report(args: &ReportArgs, mids: &MidRegistry, out: &mut dyn Write) -> Outcome {
    let log = SampleLog::from_ndjson(&read_text(&args.log)?)?;
    let doc = load_doc(&args.mtp)?;
    let registry = extract_measurement_registry(&doc, mids)?;
    let format = match args.format {
        OutputFormat::Csv => ReportFormat::Csv,
        OutputFormat::Json => ReportFormat::Json,
        OutputFormat::Text => ReportFormat::Text,
    };
    let text = render_report(&aggregate_report(&log, &registry, mids), format);
    match &args.out {
        Some(path) => write_text(path, &text)?,
        None => out
            .write_all(text.as_bytes())
            .map_err(|e| Failure::io(e.to_string()))?,
    }
    Ok(EXIT_OK)
}

/// Runs the command line `argv` (including the program name), writing data to
/// `out` and diagnostics to `err`. Returns the exit code.
pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = out.write_all(text.as_bytes());
                    EXIT_OK
                }
                _ => {
                    let _ = err.write_all(text.as_bytes());
                    EXIT_USAGE
                }
            };
        }
    };
    let mids = match mid_registry() {
        Ok(mids) => mids,
        Err(message) => {
            let _ = writeln!(err, "error: MID registry {message}");
            return EXIT_IO;
        }
    };
    let outcome = match &cli.command {
        Command::Validate(args) => cmd_validate(args, &mids, out),
        Command::Inject(args) => cmd_inject(args, &mids, out, err),
        Command::Serve(args) => cmd_serve(args, &mids, err),
        Command::Monitor(args) => cmd_monitor(args, &mids),
        Command::Report(args) => cmd_report(args, &mids, out),
    };
    let _ = out.flush();
    match outcome {
        Ok(code) => code,
        Err(failure) => {
            let _ = writeln!(err, "error: {}", failure.message);
            failure.code
        }
    }
}

/// Runs the process command line against standard output and error.
pub fn run() -> i32 {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock())
}
