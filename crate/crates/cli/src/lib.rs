//! The `powerbench` command: an experimenter client for the coordinator,
//! a local scenario runner, and launchers for the coordinator and agent
//! services.

mod config;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{CommandFactory, Parser, Subcommand, ValueEnum};
use powerbench_core::agent::AgentConfig;
use powerbench_core::coordinator::{CoordinatorConfig, JobManifest, JobRecord, VantagePointManifest};
use powerbench_core::scenario::{self, build_report, evaluate, write_report, JobInput, Report, Scenario};
use powerbench_net::{Client, ClientError};
use serde::Serialize;
use serde_json::json;

pub use config::{CliConfig, FileConfig, OutputFormat};

const POLL_INTERVAL: Duration = Duration::from_secs(1);

#[derive(Debug, Parser)]
#[command(name = "powerbench", version, about = "Battery measurement testbed client")]
struct Cli {
    /// Coordinator HTTP endpoint, host:port or URL.
    #[arg(long, global = true, env = "BL_COORDINATOR")]
    coordinator: Option<String>,
    /// Bearer token.
    #[arg(long, global = true, env = "BL_TOKEN", hide_env_values = true)]
    token: Option<String>,
    /// Client config file [default: ~/.powerbench.toml].
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    output: Option<OutputFormat>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// List the fleet's devices.
    Devices,
    /// Submit a job manifest.
    Submit {
        #[arg(long, value_name = "FILE")]
        manifest: PathBuf,
        #[arg(long)]
        repetitions: Option<u32>,
        #[arg(long, value_enum)]
        mirroring: Option<Toggle>,
        /// Network profile the job must run under.
        #[arg(long, value_name = "NAME")]
        profile: Option<String>,
    },
    /// Show a job.
    Status { job: u64 },
    /// Cancel a queued or running job.
    Cancel { job: u64 },
    /// Download a job's artifacts.
    Artifacts {
        job: u64,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Register a vantage point (admin).
    Register {
        #[arg(long, value_name = "FILE")]
        manifest: PathBuf,
    },
    /// Built-in and file-based experiment suites.
    Scenario {
        #[command(subcommand)]
        action: ScenarioCommand,
    },
    /// Analyse finished jobs and write report.json plus plot files.
    Report {
        #[arg(required = true)]
        jobs: Vec<u64>,
        #[arg(long, value_name = "DIR", default_value = "report")]
        out: PathBuf,
    },
    /// Run the coordinator service.
    Coordinator {
        #[arg(long, value_name = "FILE")]
        config: PathBuf,
    },
    /// Run a vantage point agent.
    Agent {
        #[arg(long, value_name = "FILE")]
        config: PathBuf,
        /// Serve the console's static files under /console.
        #[arg(long, value_name = "DIR")]
        console: Option<PathBuf>,
        /// Only advance the simulated clock while jobs run.
        #[arg(long)]
        virtual_clock: bool,
    },
}

#[derive(Debug, Subcommand)]
enum ScenarioCommand {
    /// Run a scenario and check its expectations.
    Run {
        /// Built-in name or path to a scenario file.
        name: String,
        /// Submit to the coordinator instead of simulating locally.
        #[arg(long)]
        remote: bool,
        /// Agent config for local runs [default: reference vantage point].
        #[arg(long, value_name = "FILE")]
        agent_config: Option<PathBuf>,
        /// Report directory [default: reports/NAME].
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// List the built-in scenarios.
    List,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Remote { code: String, message: String },
    Failed(String),
}

impl Failure {
    fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 2,
            _ => 1,
        }
    }

    fn code(&self) -> &str {
        match self {
            Failure::Usage(_) => "Usage",
            Failure::Remote { code, .. } => code,
            Failure::Failed(_) => "Failed",
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Failed(m) => m,
            Failure::Remote { message, .. } => message,
        }
    }
}

impl From<ClientError> for Failure {
    fn from(e: ClientError) -> Self {
        Failure::Remote {
            code: e.code().to_string(),
            message: e.to_string(),
        }
    }
}

/// What a command produced: a JSON document and its text rendering.
struct Output {
    json: serde_json::Value,
    text: String,
    exit: i32,
}

impl Output {
    fn new(json: impl Serialize, text: impl Into<String>) -> Self {
        Self {
            json: serde_json::to_value(json).expect("outputs serialize"),
            text: text.into(),
            exit: 0,
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            let code = e.exit_code();
            if code != 0 && !e.render().to_string().contains("Usage:") {
                eprintln!("\n{}", Cli::command().render_usage());
            }
            return code;
        }
    };
    let serving = matches!(cli.command, Command::Coordinator { .. } | Command::Agent { .. });
    init_tracing(if serving { "info" } else { "warn" });

    let file = match load_file_config(cli.config.as_deref()) {
        Ok(f) => f,
        Err(e) => return report_failure(&Failure::Usage(e), cli.output.unwrap_or_default()),
    };
    let format = cli.output.or(file.output).unwrap_or_default();
    match dispatch(&cli, &file, format) {
        Ok(out) => {
            match format {
                OutputFormat::Json => println!("{}", serde_json::to_string_pretty(&out.json).expect("json")),
                OutputFormat::Text if out.text.is_empty() => {}
                OutputFormat::Text => println!("{}", out.text.trim_end()),
            }
            out.exit
        }
        Err(f) => report_failure(&f, format),
    }
}

fn report_failure(f: &Failure, format: OutputFormat) -> i32 {
    eprintln!("error: {}: {}", f.code(), f.message());
    if let Failure::Usage(_) = f {
        eprintln!("usage: powerbench [OPTIONS] <COMMAND>; see `powerbench --help`");
    }
    if format == OutputFormat::Json {
        let doc = json!({"error": {"code": f.code(), "message": f.message()}});
        println!("{}", serde_json::to_string_pretty(&doc).expect("json"));
    }
    f.exit_code()
}

fn init_tracing(default: &str) {
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

fn load_file_config(explicit: Option<&Path>) -> Result<FileConfig, String> {
    match explicit {
        Some(p) => FileConfig::load(p, true),
        None => match config::default_path() {
            Some(p) => FileConfig::load(&p, false),
            None => Ok(FileConfig::default()),
        },
    }
}

fn dispatch(cli: &Cli, file: &FileConfig, format: OutputFormat) -> Result<Output, Failure> {
    let client = || -> Result<Client, Failure> {
        let c = CliConfig::resolve(file, cli.coordinator.as_deref(), cli.token.as_deref(), Some(format))
            .map_err(Failure::Usage)?;
        Ok(Client::new(&c.endpoint, &c.token))
    };
    match &cli.command {
        Command::Devices => devices(&client()?),
        Command::Submit {
            manifest,
            repetitions,
            mirroring,
            profile,
        } => {
            let mut m: JobManifest = read_document(manifest)?;
            if let Some(n) = repetitions {
                m.repetitions = *n;
            }
            if let Some(t) = mirroring {
                m.mirroring = *t == Toggle::On;
            }
            if let Some(p) = profile {
                m.constraints.network_profile = Some(p.clone());
            }
            let id = client()?.submit(&m)?;
            Ok(Output::new(json!({"job_id": id}), id.to_string()))
        }
        Command::Status { job } => {
            let rec = client()?.job(*job)?;
            let text = status_line(&rec);
            Ok(Output::new(rec, text))
        }
        Command::Cancel { job } => {
            client()?.cancel(*job)?;
            Ok(Output::new(json!({"job_id": job, "status": "CANCELLED"}), format!("{job} CANCELLED")))
        }
        Command::Artifacts { job, out } => {
            let bundle = client()?.artifacts(*job)?;
            let mut names = Vec::new();
            for f in &bundle.files {
                let path = safe_join(out, &f.name)?;
                if let Some(parent) = path.parent() {
                    std::fs::create_dir_all(parent).map_err(|e| io_failure(parent, e))?;
                }
                std::fs::write(&path, &f.bytes).map_err(|e| io_failure(&path, e))?;
                names.push(f.name.clone());
            }
            let text = format!("{} files written to {}", names.len(), out.display());
            Ok(Output::new(json!({"job_id": job, "out": out, "files": names}), text))
        }
        Command::Register { manifest } => {
            let m: VantagePointManifest = read_document(manifest)?;
            let vp = client()?.register(&m)?;
            Ok(Output::new(json!({"vp_id": vp}), vp))
        }
        Command::Scenario {
            action: ScenarioCommand::List,
        } => {
            let names: Vec<&str> = Scenario::builtin_names().collect();
            Ok(Output::new(&names, names.join("\n")))
        }
        Command::Scenario {
            action:
                ScenarioCommand::Run {
                    name,
                    remote,
                    agent_config,
                    out,
                },
        } => {
            let sc = load_scenario(name)?;
            let (report, inputs) = if *remote {
                run_remote(&sc, &client()?)?
            } else {
                let cfg = match agent_config {
                    Some(p) => AgentConfig::load(p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?,
                    None => AgentConfig::reference(),
                };
                scenario::run_and_report(&sc, &cfg).map_err(|e| Failure::Failed(e.to_string()))?
            };
            let dir = out.clone().unwrap_or_else(|| Path::new("reports").join(&sc.name));
            finish_report(report, &inputs, &dir, true)
        }
        Command::Report { jobs, out } => {
            let c = client()?;
            let mut inputs = Vec::new();
            for id in jobs {
                let rec = c.job(*id)?;
                inputs.push(JobInput {
                    label: rec.manifest.label.clone().unwrap_or_else(|| format!("job{id}")),
                    bundle: c.artifacts(*id)?,
                });
            }
            finish_report(build_report(None, &inputs), &inputs, out, false)
        }
        Command::Coordinator { config } => {
            let text = std::fs::read_to_string(config).map_err(|e| io_usage(config, e))?;
            let cfg: CoordinatorConfig =
                toml::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", config.display())))?;
            serve_coordinator(cfg)
        }
        Command::Agent {
            config,
            console,
            virtual_clock,
        } => {
            let cfg = AgentConfig::load(config).map_err(|e| Failure::Usage(format!("{}: {e}", config.display())))?;
            let opts = powerbench_net::agent::AgentOptions {
                coordinator: None,
                realtime: !virtual_clock,
                static_dir: console.clone(),
            };
            serve_agent(cfg, opts)
        }
    }
}

fn devices(c: &Client) -> Result<Output, Failure> {
    let list = c.devices()?;
    let text = list
        .iter()
        .map(|d| format!("{}/{} {} {}", d.vp_id, d.device_id, word(&d.os), word(&d.state)))
        .collect::<Vec<_>>()
        .join("\n");
    Ok(Output::new(&list, text))
}

/// A unit enum variant as it appears on the wire.
fn word(v: &impl Serialize) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        Ok(other) => other.to_string(),
        Err(_) => "?".into(),
    }
}

fn status_line(rec: &JobRecord) -> String {
    let mut s = format!("{} {}", rec.job_id, word(&rec.status));
    if let Some(label) = &rec.manifest.label {
        s.push_str(&format!(" {label}"));
    }
    if let Some(a) = &rec.assigned {
        s.push_str(&format!(" on {}/{}", a.vp_id, a.device_id));
    }
    if let Some(r) = &rec.reason {
        s.push_str(&format!(" ({r})"));
    }
    s
}

fn read_document<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| io_usage(path, e))?;
    let parsed = if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).map_err(|e| e.to_string())
    } else {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn load_scenario(name: &str) -> Result<Scenario, Failure> {
    if let Ok(sc) = Scenario::builtin(name) {
        return Ok(sc);
    }
    let path = Path::new(name);
    if !path.exists() {
        let known: Vec<&str> = Scenario::builtin_names().collect();
        return Err(Failure::Usage(format!(
            "unknown scenario {name}; built-ins are {}",
            known.join(", ")
        )));
    }
    let text = std::fs::read_to_string(path).map_err(|e| io_usage(path, e))?;
    Scenario::from_json(&text).map_err(|e| Failure::Usage(format!("{name}: {e}")))
}

fn io_usage(path: &Path, e: std::io::Error) -> Failure {
    Failure::Usage(format!("{}: {e}", path.display()))
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Failed(format!("{}: {e}", path.display()))
}

/// Joins an artifact name under `dir`, refusing names that escape it.
fn safe_join(dir: &Path, name: &str) -> Result<PathBuf, Failure> {
    let rel = Path::new(name);
    let ok = rel
        .components()
        .all(|c| matches!(c, std::path::Component::Normal(_)));
    if !ok || name.is_empty() {
        return Err(Failure::Failed(format!("refusing artifact path {name:?}")));
    }
    Ok(dir.join(rel))
}

fn run_remote(sc: &Scenario, c: &Client) -> Result<(Report, Vec<JobInput>), Failure> {
    let jobs = sc.jobs().map_err(|e| Failure::Failed(e.to_string()))?;
    let mut submitted = Vec::new();
    for job in &jobs {
        if let Some(w) = job.wiring {
            eprintln!(
                "warning: {} wants {} wiring; the fleet measures with whatever wiring its vantage points have",
                job.label(),
                word(&w)
            );
        }
        let id = c.submit(&job.manifest)?;
        tracing::info!(job = %job.label(), id, "submitted");
        submitted.push((job.label(), id));
    }
    let mut pending: Vec<u64> = submitted.iter().map(|(_, id)| *id).collect();
    while !pending.is_empty() {
        std::thread::sleep(POLL_INTERVAL);
        let mut still = Vec::new();
        for id in pending {
            if !c.job(id)?.status.is_terminal() {
                still.push(id);
            }
        }
        pending = still;
        if !pending.is_empty() {
            eprintln!("{} of {} jobs still running", pending.len(), submitted.len());
        }
    }
    let mut inputs = Vec::new();
    for (label, id) in submitted {
        match c.artifacts(id) {
            Ok(bundle) => inputs.push(JobInput { label, bundle }),
            Err(e) => eprintln!("warning: job {id} ({label}) has no artifacts: {}", e.code()),
        }
    }
    let mut report = build_report(Some(&sc.name), &inputs);
    report.checks = evaluate(&sc.checks, &report);
    Ok((report, inputs))
}

fn finish_report(report: Report, inputs: &[JobInput], dir: &Path, judged: bool) -> Result<Output, Failure> {
    let files = write_report(&report, inputs, dir).map_err(|e| io_failure(dir, e))?;
    eprintln!("wrote {} under {}", files.join(", "), dir.display());
    let mut out = Output::new(&report, render_report(&report));
    // A failed check still produces the report; only the exit code changes.
    if judged && !report.passed() {
        eprintln!("error: scenario checks failed");
        out.exit = 1;
    }
    Ok(out)
}

fn render_report(r: &Report) -> String {
    let mut t = String::new();
    if let Some(name) = &r.scenario {
        t.push_str(&format!("scenario {name}\n"));
    }
    for s in &r.series {
        let d = s
            .discharge
            .map_or("-".to_string(), |d| format!("{:.3} ± {:.3} mAh", d.mean, d.std));
        t.push_str(&format!("{:<12} {:<12} runs={} discharge={d}\n", s.group, s.variant, s.runs));
    }
    for (variant, cmp) in &r.comparisons {
        t.push_str(&format!("order[{variant}]: {}\n", cmp.names().join(" < ")));
    }
    for f in &r.failures {
        t.push_str(&format!("FAILED {}:{} {} {}\n", f.group, f.variant, f.code, f.reason));
    }
    for c in &r.checks {
        let verdict = if c.passed { "PASS" } else { "FAIL" };
        t.push_str(&format!("{verdict} {} ({})\n", c.check, c.detail));
    }
    t
}

fn runtime() -> Result<tokio::runtime::Runtime, Failure> {
    tokio::runtime::Runtime::new().map_err(|e| Failure::Failed(e.to_string()))
}

fn serve_coordinator(cfg: CoordinatorConfig) -> Result<Output, Failure> {
    runtime()?.block_on(async move {
        let handle = powerbench_net::coordinator::serve(cfg)
            .await
            .map_err(|e| Failure::Failed(format!("cannot start coordinator: {e}")))?;
        tracing::info!(agents = %handle.agent_addr(), http = %handle.http_addr(), "coordinator up");
        let _ = tokio::signal::ctrl_c().await;
        handle.shutdown().await;
        Ok(Output::new(json!({"stopped": "coordinator"}), ""))
    })
}

fn serve_agent(cfg: AgentConfig, opts: powerbench_net::agent::AgentOptions) -> Result<Output, Failure> {
    runtime()?.block_on(async move {
        let vp = cfg.vp_id.clone();
        let handle = powerbench_net::agent::serve(cfg, opts)
            .await
            .map_err(|e| Failure::Failed(format!("cannot start agent: {e}")))?;
        tracing::info!(
            vp,
            control = %handle.control_addr(),
            sessions = %handle.session_addr(),
            console = %handle.console_addr(),
            "agent up"
        );
        let _ = tokio::signal::ctrl_c().await;
        handle.shutdown().await;
        Ok(Output::new(json!({"stopped": vp}), ""))
    })
}
