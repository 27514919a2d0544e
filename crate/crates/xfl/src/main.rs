use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use xfl::orchestration::status::{read_status_lines, render_report};
use xfl::orchestration::{run_networked, standalone_run, OrchestrationError, RunEnv, TaskConfig};

/// Federated learning tasks from a JSON configuration.
#[derive(Debug, Parser)]
#[command(name = "xfl", version)]
struct Cli {
    #[arg(long, value_enum, default_value_t = LogLevel::Warn, global = true)]
    log_level: LogLevel,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LogLevel {
    Error,
    Warn,
    Info,
    Debug,
    Trace,
}

impl LogLevel {
    fn filter(self) -> log::LevelFilter {
        match self {
            Self::Error => log::LevelFilter::Error,
            Self::Warn => log::LevelFilter::Warn,
            Self::Info => log::LevelFilter::Info,
            Self::Debug => log::LevelFilter::Debug,
            Self::Trace => log::LevelFilter::Trace,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a configuration and print it with presets filled in.
    Validate {
        #[arg(long)]
        config: PathBuf,
        /// Print the resolved configuration as JSON.
        #[arg(long)]
        resolved: bool,
    },
    /// Run one party (or the scheduler) of a multi-process task over TCP.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        role: String,
        #[arg(long, env = "XFL_WORKDIR", default_value = "work")]
        workdir: PathBuf,
    },
    /// Run every role of a task in this process.
    Standalone {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, env = "XFL_WORKDIR", default_value = "work")]
        workdir: PathBuf,
    },
    /// Print per-stage metrics recorded under the workdir.
    Report {
        #[arg(long, env = "XFL_WORKDIR", default_value = "work")]
        workdir: PathBuf,
        /// Only this session.
        #[arg(long)]
        session: Option<String>,
    },
}

const OK: u8 = 0;
const FAILED: u8 = 1;
const ENVIRONMENT: u8 = 2;

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().filter_level(cli.log_level.filter()).format_timestamp(None).init();
    ExitCode::from(match cli.command {
        Command::Validate { config, resolved } => validate(&config, resolved),
        Command::Run { config, role, workdir } => execute(&config, &workdir, Some(&role)),
        Command::Standalone { config, workdir } => execute(&config, &workdir, None),
        Command::Report { workdir, session } => report(&workdir, session.as_deref()),
    })
}

fn load(path: &Path) -> Result<TaskConfig, u8> {
    let text = fs::read_to_string(path).map_err(|e| {
        eprintln!("error: cannot read {}: {e}", path.display());
        ENVIRONMENT
    })?;
    TaskConfig::parse(&text).map_err(|e| {
        eprintln!("error: {}: {e}", path.display());
        FAILED
    })
}

fn validate(path: &Path, resolved: bool) -> u8 {
    match load(path) {
        Ok(cfg) => {
            if resolved {
                println!("{}", serde_json::to_string_pretty(&cfg.resolved()).unwrap_or_default());
            } else {
                println!(
                    "{}: valid ({} parties, {} stages)",
                    path.display(),
                    cfg.parties.len(),
                    cfg.stages.len()
                );
            }
            OK
        }
        Err(code) => code,
    }
}

fn failure_code(e: &OrchestrationError) -> u8 {
    eprintln!("error: {e}");
    if e.is_environment() {
        ENVIRONMENT
    } else {
        FAILED
    }
}

fn execute(config: &Path, workdir: &Path, role: Option<&str>) -> u8 {
    let cfg = match load(config) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let config_dir = config.parent().unwrap_or(Path::new("."));
    let env = match RunEnv::new(workdir, config_dir) {
        Ok(e) => e,
        Err(e) => return failure_code(&e),
    };
    match role {
        Some(role) => match run_networked(&cfg, &env, role) {
            Ok(true) => OK,
            Ok(false) => {
                eprintln!("error: task {} failed; see {}", cfg.session_id, env.session_dir(&cfg.session_id).display());
                FAILED
            }
            Err(e) => failure_code(&e),
        },
        None => match standalone_run(&cfg, &env) {
            Ok(status) => {
                print!("{}", render_report(&cfg.session_id, &status.lines));
                match status.first_failure() {
                    None => OK,
                    Some(f) => {
                        eprintln!(
                            "error: stage {} failed at {}: {}",
                            f.stage,
                            f.party,
                            f.error.as_deref().unwrap_or("unknown cause")
                        );
                        FAILED
                    }
                }
            }
            Err(e) => failure_code(&e),
        },
    }
}

fn report(workdir: &Path, session: Option<&str>) -> u8 {
    let files: Vec<(String, PathBuf)> = match session {
        Some(s) => vec![(s.to_owned(), workdir.join(s).join("status.jsonl"))],
        None => {
            let mut found = Vec::new();
            if let Ok(entries) = fs::read_dir(workdir) {
                for e in entries.flatten() {
                    let p = e.path().join("status.jsonl");
                    if p.is_file() {
                        found.push((e.file_name().to_string_lossy().into_owned(), p));
                    }
                }
            }
            found.sort();
            found
        }
    };
    if files.is_empty() || files.iter().any(|(_, p)| !p.is_file()) {
        eprintln!("error: no status.jsonl found under {}; run a task first", workdir.display());
        return ENVIRONMENT;
    }
    let mut code = OK;
    for (session, path) in files {
        match read_status_lines(&path) {
            Ok(lines) if lines.is_empty() => {
                eprintln!("error: {} holds no status lines", path.display());
                code = FAILED;
            }
            Ok(lines) => print!("{}", render_report(&session, &lines)),
            Err(e) => {
                eprintln!("error: {e}");
                code = FAILED;
            }
        }
    }
    code
}
