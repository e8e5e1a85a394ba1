//! Sessions persist the store between invocations as a snapshot file.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use dlf_core::reconciler::{HttpProber, Prober, StaticProber};
use dlf_core::statestore::{dump_snapshot, load_snapshot, Store};

use crate::cluster::Cluster;
use crate::{CmdResult, Failure};

#[derive(Debug, Clone)]
pub struct SessionOptions {
    pub path: PathBuf,
    pub workers: usize,
    /// Probe storage over the network; otherwise every probe succeeds.
    pub probe: bool,
    pub allow_pending_datasets: bool,
}

pub struct Session {
    path: PathBuf,
    pub cluster: Cluster,
}

fn read_store(path: &Path) -> CmdResult<Arc<Store>> {
    match std::fs::read_to_string(path) {
        Ok(text) => load_snapshot(&text)
            .map_err(|e| Failure::user(format!("session {}: {e}", path.display()))),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Store::new()),
        Err(e) => Err(Failure::user(format!("session {}: {e}", path.display()))),
    }
}

impl Session {
    /// Loads the session and starts the operator on it.
    pub fn open(opts: &SessionOptions) -> CmdResult<Session> {
        let store = read_store(&opts.path)?;
        let prober: Arc<dyn Prober> = if opts.probe {
            Arc::new(HttpProber::default())
        } else {
            Arc::new(StaticProber::reachable())
        };
        let mut cluster = Cluster::start(store, prober, opts.workers);
        cluster.admission.allow_pending_datasets = opts.allow_pending_datasets;
        Ok(Session {
            path: opts.path.clone(),
            cluster,
        })
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.cluster.store
    }

    /// Waits for the operator, stops it and writes the snapshot.
    pub fn commit(self) -> CmdResult {
        self.cluster.settle()?;
        let store = self.cluster.shutdown();
        write_atomically(&self.path, &dump_snapshot(&store))
    }
}

/// Reads a session without starting an operator, for inspection commands.
pub fn inspect(path: &Path) -> CmdResult<Arc<Store>> {
    read_store(path)
}

fn write_atomically(path: &Path, text: &str) -> CmdResult {
    let tmp = path.with_extension("tmp");
    let io = |e: std::io::Error| Failure::user(format!("session {}: {e}", path.display()));
    std::fs::write(&tmp, text).map_err(io)?;
    std::fs::rename(&tmp, path).map_err(io)
}
