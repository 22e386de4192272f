use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use geodata::agent::{run_session, select_source, AgentConfig, DataRequest, DeclaredFormat};
use geodata::llm::{LlmClient, ModelConfig, TransportMode};
use geodata::prompting::{build_fetch_prompt, build_selection_prompt, Selection};
use geodata::registry::Registry;
use geodata::sandbox::RuntimeConfig;
use geodata::secrets::{Secret, SecretStore};

const CONFIG_ERROR: u8 = 1;

#[derive(Parser)]
#[command(
    name = "geodata",
    version,
    about = "Retrieve geospatial data with an LLM-driven fetch agent"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Select a source, generate a fetch program, run and debug it
    Fetch(FetchArgs),
}

#[derive(clap::Args)]
struct FetchArgs {
    /// Natural-language data request
    #[arg(long)]
    request: String,
    /// File or directory the data should be saved to
    #[arg(long)]
    out: PathBuf,
    /// Registry root containing sources/<alias>/
    #[arg(long, default_value = "./registry")]
    registry: PathBuf,
    /// Chat-completions endpoint URL
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    /// Debug re-generations after the first attempt
    #[arg(long, default_value_t = 10)]
    max_debug: usize,
    /// Per-execution timeout in seconds
    #[arg(long, default_value_t = 300)]
    timeout: u64,
    #[arg(long, value_enum, default_value = "live")]
    transport: TransportMode,
    /// Cassette file for record/replay
    #[arg(long)]
    cassette: Option<PathBuf>,
    /// Serve the generated programs' HTTP calls from this fixture directory
    #[arg(long)]
    http_fixtures: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<DeclaredFormat>,
    /// Print the selection and fetch prompts; execute nothing
    #[arg(long)]
    dry_run: bool,
    /// Write the session report (JSON) here
    #[arg(long)]
    report: Option<PathBuf>,
    /// Scratch directory for generated programs (default: a temporary one)
    #[arg(long)]
    work_dir: Option<PathBuf>,
    /// Secrets file with <alias>:<key_name>=<secret> lines
    #[arg(long)]
    secrets_file: Option<PathBuf>,
    /// Interpreter used to run generated programs
    #[arg(long, default_value = "python3")]
    interpreter: String,
}

fn model_config(args: &FetchArgs) -> ModelConfig {
    let mut cfg = ModelConfig {
        transport: args.transport,
        cassette_path: args.cassette.clone(),
        timeout: Duration::from_secs(args.timeout.max(1)),
        ..ModelConfig::default()
    };
    if let Some(e) = &args.endpoint {
        cfg.endpoint = e.clone();
    }
    if let Some(m) = &args.model {
        cfg.model_name = m.clone();
    }
    cfg.api_key = ["GEODATA_LLM_API_KEY", "OPENAI_API_KEY"]
        .iter()
        .find_map(|k| std::env::var(k).ok().filter(|v| !v.is_empty()))
        .map(Secret::new);
    cfg
}

fn absolute(p: &Path) -> Result<PathBuf> {
    Ok(if p.is_absolute() {
        p.to_path_buf()
    } else {
        std::env::current_dir()?.join(p)
    })
}

/// Directory the generated program runs in: `out` itself when it is a
/// directory, otherwise its parent.
fn output_dir(out: &Path) -> Result<PathBuf> {
    let dir = if out.is_dir() {
        out.to_path_buf()
    } else {
        out.parent().map(Path::to_path_buf).unwrap_or_default()
    };
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(std::fs::canonicalize(&dir)?)
}

fn fetch(args: FetchArgs) -> Result<u8> {
    if args.transport != TransportMode::Live && args.cassette.is_none() {
        bail!(
            "--transport {} needs --cassette",
            format!("{:?}", args.transport).to_lowercase()
        );
    }
    let registry = Registry::load(&args.registry)
        .with_context(|| format!("loading registry {}", args.registry.display()))?;
    let llm = LlmClient::new(model_config(&args))?;
    let out_dir = output_dir(&absolute(&args.out)?)?;
    let out_path = match args.out.file_name() {
        Some(name) if !args.out.is_dir() => out_dir.join(name),
        _ => out_dir.clone(),
    };
    let request = DataRequest::new(args.request.clone(), out_path, args.format)?;
    let agent_cfg = AgentConfig {
        max_debug_iterations: args.max_debug,
        ..AgentConfig::default()
    };

    if args.dry_run {
        let mission = request.mission_text(&out_dir);
        let index = registry.render_index()?;
        print!("{}", build_selection_prompt(&mission, &index)?);
        let selection = select_source(&mission, &registry, &llm, agent_cfg.selection_retries)?;
        let Selection::Source(s) = selection else {
            eprintln!("selection: Unknown");
            return Ok(2);
        };
        let Some(alias) = registry.match_selection(&s) else {
            eprintln!("selection {s:?} is not in the registry");
            return Ok(2);
        };
        println!("\n----\n");
        print!(
            "{}",
            build_fetch_prompt(&mission, alias, registry.resolve_handbook(alias)?)?
        );
        return Ok(0);
    }

    let mut secrets = SecretStore::from_process_env();
    if let Some(f) = &args.secrets_file {
        secrets = secrets.load_file(f)?;
    }
    let scratch;
    let work_dir = match &args.work_dir {
        Some(d) => {
            std::fs::create_dir_all(d)?;
            d.clone()
        }
        None => {
            scratch = tempfile::tempdir()?;
            scratch.path().to_path_buf()
        }
    };
    let mut sandbox_cfg = RuntimeConfig::python(work_dir, out_dir);
    sandbox_cfg.interpreter_command = vec![args.interpreter.clone()];
    sandbox_cfg.timeout = Duration::from_secs(args.timeout.max(1));
    if let Some(f) = &args.http_fixtures {
        sandbox_cfg.http_fixtures = Some(f.clone());
        sandbox_cfg.network_allowed = false;
    }

    let report = run_session(
        &request,
        &registry,
        &llm,
        &sandbox_cfg,
        &secrets,
        &agent_cfg,
    )?;
    if let Some(path) = &args.report {
        std::fs::write(path, report.to_json())
            .with_context(|| format!("writing {}", path.display()))?;
    }
    eprintln!(
        "status: {}, source: {}, attempts: {}",
        serde_json::to_value(report.status)?
            .as_str()
            .unwrap_or_default(),
        report.selected_source,
        report.attempts.len()
    );
    Ok(report.status.exit_code() as u8)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { CONFIG_ERROR } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Fetch(args) => fetch(args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(CONFIG_ERROR)
        }
    }
}
