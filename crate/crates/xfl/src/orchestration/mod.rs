//! Roles, task configuration, the scheduler and party loops, and the
//! operator pipeline.
//!
//! The scheduler sends each stage to its participants on `sched/stage`,
//! collects one `sched/done` report per participant, and moves on only when
//! every report succeeded. On the first failure it sends `sched/abort` to the
//! remaining participants and halts the pipeline. Every party runs its stages
//! strictly in order.
//!
//! Files live under `<workdir>/<session>/`: `status.jsonl` written by the
//! scheduler, and `<stage>/<party>/` holding that party's metrics and
//! artifacts for the stage.

pub mod config;
mod operators;
mod runtime;
pub mod status;

use std::path::{Path, PathBuf};

use thiserror::Error;
use xfl_core::data::DataError;

pub use config::{ConfigError, Operator, Role, Stage, TaskConfig};
pub use runtime::{run_networked, run_party, run_scheduler, standalone_run, standalone_run_on};
pub use status::{StageState, StatusLine, TaskStatus};

use crate::io::IoError;
use crate::protocol::ProtocolError;
use crate::transport::TransportError;

#[derive(Debug, Error)]
pub enum OrchestrationError {
    #[error("invalid configuration: {0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("malformed control message: {0}")]
    Control(String),
    #[error("{0}")]
    Usage(String),
}

impl OrchestrationError {
    /// Whether the failure comes from the environment (files, sockets)
    /// rather than from the configuration or a protocol run.
    pub fn is_environment(&self) -> bool {
        match self {
            Self::Io(_) => true,
            Self::Transport(e) => matches!(e, TransportError::Io(_)),
            _ => false,
        }
    }
}

/// Where a process keeps its files and resolves relative dataset paths.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunEnv {
    pub workdir: PathBuf,
    pub config_dir: PathBuf,
}

impl RunEnv {
    /// Relative paths are taken against the current directory.
    pub fn new(workdir: &Path, config_dir: &Path) -> Result<Self, OrchestrationError> {
        let cwd = std::env::current_dir().map_err(|e| IoError::io(Path::new("."), e))?;
        Ok(Self { workdir: cwd.join(workdir), config_dir: cwd.join(config_dir) })
    }

    pub fn session_dir(&self, session: &str) -> PathBuf {
        self.workdir.join(session)
    }

    pub fn stage_dir(&self, session: &str, stage: usize, party: &str) -> PathBuf {
        self.workdir.join(session).join(stage.to_string()).join(party)
    }
}
