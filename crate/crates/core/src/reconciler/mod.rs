//! The Dataset operator.
//!
//! Each pass over a live Dataset probes its storage, stores COS credentials
//! in a Secret named after the Dataset, keeps a VolumeClaim of the same name
//! and records the outcome in the Dataset's status. Both dependents carry an
//! owner reference to the Dataset and are removed before its cleanup
//! finalizer is released.

mod controller;
mod probe;
mod queue;
mod reconcile;

use std::fmt;

pub use controller::{run_controller, ControllerConfig, ControllerHandle, ControllerStats};
pub use probe::{HttpProber, ProbeTarget, Prober, StaticProber};
pub use queue::{Backoff, WorkQueue};
pub use reconcile::{
    desired_claim, desired_secret, garbage_collect, reconcile, submitted_fingerprint, Action,
    ReconcileOutcome, SECRET_KEY_ID, SECRET_KEY_SECRET,
};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DatasetKey {
    pub namespace: String,
    pub name: String,
}

impl DatasetKey {
    pub fn new(namespace: &str, name: &str) -> Self {
        DatasetKey {
            namespace: namespace.to_string(),
            name: name.to_string(),
        }
    }
}

impl fmt::Display for DatasetKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.namespace, self.name)
    }
}
