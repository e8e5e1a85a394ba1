use std::collections::HashMap;
use std::sync::Mutex;
use std::time::Duration;

use crate::model::ArchiveFormat;
use crate::s3probe::{self, Credentials, ProbeResult, DEFAULT_PROBE_TIMEOUT};

/// What the operator checks before declaring a Dataset ready.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProbeTarget {
    Cos {
        endpoint: String,
        bucket: String,
        credentials: Credentials,
    },
    Nfs {
        server: String,
        share: String,
    },
    Archive {
        url: String,
        format: ArchiveFormat,
    },
}

impl ProbeTarget {
    /// Short identifier used in messages and by [`StaticProber`] overrides.
    pub fn locator(&self) -> String {
        match self {
            ProbeTarget::Cos {
                endpoint, bucket, ..
            } => format!("{}/{}", endpoint.trim_end_matches('/'), bucket),
            ProbeTarget::Nfs { server, share } => format!("{server}:{share}"),
            ProbeTarget::Archive { url, .. } => url.clone(),
        }
    }
}

pub trait Prober: Send + Sync {
    fn probe(&self, target: &ProbeTarget) -> ProbeResult;
}

/// Probes over the network: bucket `HEAD` for COS, `HEAD` of the archive URL,
/// TCP connect for NFS.
#[derive(Debug, Clone)]
pub struct HttpProber {
    pub timeout: Duration,
}

impl Default for HttpProber {
    fn default() -> Self {
        HttpProber {
            timeout: DEFAULT_PROBE_TIMEOUT,
        }
    }
}

impl HttpProber {
    pub fn new(timeout: Duration) -> Self {
        HttpProber { timeout }
    }
}

impl Prober for HttpProber {
    fn probe(&self, target: &ProbeTarget) -> ProbeResult {
        let outcome = match target {
            ProbeTarget::Cos {
                endpoint,
                bucket,
                credentials,
            } => s3probe::probe_cos(endpoint, bucket, credentials, self.timeout),
            ProbeTarget::Archive { url, .. } => s3probe::probe_archive(url, self.timeout),
            ProbeTarget::Nfs { server, .. } => Ok(s3probe::probe_nfs(server, self.timeout)),
        };
        outcome.unwrap_or_else(|e| ProbeResult::unreachable(e.to_string(), Duration::ZERO))
    }
}

/// Answers from a table instead of the network. Targets without an override
/// get the default result. Every call is counted.
pub struct StaticProber {
    default: ProbeResult,
    overrides: Mutex<HashMap<String, ProbeResult>>,
    calls: Mutex<Vec<String>>,
}

impl StaticProber {
    pub fn new(default: ProbeResult) -> Self {
        StaticProber {
            default,
            overrides: Mutex::new(HashMap::new()),
            calls: Mutex::new(Vec::new()),
        }
    }

    pub fn reachable() -> Self {
        StaticProber::new(ProbeResult::ok(Duration::ZERO))
    }

    pub fn unreachable() -> Self {
        StaticProber::new(ProbeResult::unreachable("connection refused", Duration::ZERO))
    }

    pub fn set(&self, locator: impl Into<String>, result: ProbeResult) {
        self.overrides
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(locator.into(), result);
    }

    /// Locators probed so far, in call order.
    pub fn calls(&self) -> Vec<String> {
        self.calls.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

impl Prober for StaticProber {
    fn probe(&self, target: &ProbeTarget) -> ProbeResult {
        let loc = target.locator();
        self.calls
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .push(loc.clone());
        self.overrides
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .get(&loc)
            .cloned()
            .unwrap_or_else(|| self.default.clone())
    }
}
