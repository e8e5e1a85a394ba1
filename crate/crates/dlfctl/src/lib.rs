//! `dlfctl`: drives the Dataset control plane from the command line and runs
//! the end-to-end scenarios against an in-process S3 stub.

pub mod cache;
pub mod cli;
pub mod cluster;
pub mod commands;
pub mod mount;
pub mod report;
pub mod scenario;
pub mod session;
pub mod workload;

pub use report::{ScenarioReport, Step};

/// Why a command did not succeed. The split decides the exit code.
#[derive(Debug, thiserror::Error)]
pub enum Failure {
    /// Bad input, missing objects, rejected requests.
    #[error("{0}")]
    User(String),
    /// A scenario or self-check whose assertions did not hold.
    #[error("{0}")]
    Assertion(String),
}

impl Failure {
    pub fn user(msg: impl Into<String>) -> Self {
        Failure::User(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::User(_) => 1,
            Failure::Assertion(_) => 2,
        }
    }
}

pub type CmdResult<T = ()> = Result<T, Failure>;
