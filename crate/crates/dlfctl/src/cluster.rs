//! A store with a running operator, as used by sessions and scenarios.

use std::sync::Arc;
use std::time::{Duration, Instant};

use dlf_core::admission::{admit_and_create, AdmissionConfig, MONITOR_LABEL, MONITOR_VALUE};
use dlf_core::model::{Dataset, Kind, Phase};
use dlf_core::reconciler::{run_controller, ControllerConfig, ControllerHandle, HttpProber, Prober};
use dlf_core::statestore::{Store, StoreError, StoredObject};

use crate::{CmdResult, Failure};

pub const SETTLE_TIMEOUT: Duration = Duration::from_secs(30);

pub struct Cluster {
    pub store: Arc<Store>,
    controller: Option<ControllerHandle>,
    pub admission: AdmissionConfig,
}

impl Cluster {
    pub fn start(store: Arc<Store>, prober: Arc<dyn Prober>, workers: usize) -> Self {
        let controller = run_controller(
            Arc::clone(&store),
            prober,
            ControllerConfig::with_workers(workers.max(1)),
        );
        Cluster {
            store,
            controller: Some(controller),
            admission: AdmissionConfig::default(),
        }
    }

    /// Fresh store probing over the network.
    pub fn with_http_probes(workers: usize) -> Self {
        Cluster::start(Store::new(), Arc::new(HttpProber::default()), workers)
    }

    fn controller(&self) -> &ControllerHandle {
        self.controller.as_ref().expect("controller runs until shutdown")
    }

    /// Waits until the operator has handled every change. Datasets stuck in
    /// probe retries do not hold this up.
    pub fn settle(&self) -> CmdResult {
        if self.controller().wait_settled(SETTLE_TIMEOUT) {
            Ok(())
        } else {
            Err(Failure::Assertion(format!(
                "operator did not settle within {SETTLE_TIMEOUT:?}"
            )))
        }
    }

    pub fn reconciles(&self) -> u64 {
        self.controller().stats().reconciles
    }

    pub fn shutdown(mut self) -> Arc<Store> {
        if let Some(c) = self.controller.take() {
            c.stop();
        }
        Arc::clone(&self.store)
    }

    /// Creates the namespace if needed and labels it for pod admission.
    pub fn monitor_namespace(&self, ns: &str) -> CmdResult {
        label_namespace(&self.store, ns, MONITOR_LABEL, MONITOR_VALUE)
    }

    /// Creates a Dataset and waits for it to become Ready.
    pub fn provision(&self, ds: Dataset) -> CmdResult<Dataset> {
        let (ns, name) = (ds.meta.namespace.clone(), ds.meta.name.clone());
        self.store
            .create(ds.into())
            .map_err(|e| Failure::user(e.to_string()))?;
        self.wait_phase(&ns, &name, Phase::Ready, SETTLE_TIMEOUT)
    }

    pub fn wait_phase(&self, ns: &str, name: &str, phase: Phase, timeout: Duration) -> CmdResult<Dataset> {
        let deadline = Instant::now() + timeout;
        loop {
            let ds = self
                .store
                .get_dataset(ns, name)
                .map_err(|e| Failure::Assertion(e.to_string()))?;
            if ds.status.phase == phase {
                return Ok(ds);
            }
            if Instant::now() >= deadline {
                return Err(Failure::Assertion(format!(
                    "dataset {ns}/{name} is {} ({}), expected {phase}",
                    ds.status.phase, ds.status.message
                )));
            }
            std::thread::sleep(Duration::from_millis(2));
        }
    }

    /// Runs a pod through admission and stores it.
    pub fn admit(&self, pod: StoredObject) -> CmdResult<StoredObject> {
        admit_and_create(pod, &self.store, self.admission).map_err(Failure::User)
    }
}

impl Drop for Cluster {
    fn drop(&mut self) {
        if let Some(c) = self.controller.take() {
            c.stop();
        }
    }
}

/// Sets one label on a namespace, creating the namespace when absent.
pub fn label_namespace(store: &Store, ns: &str, key: &str, value: &str) -> CmdResult {
    let user = |e: StoreError| Failure::user(e.to_string());
    match store.get(Kind::Namespace, "", ns) {
        Ok(existing) => {
            if existing.meta.labels.get(key).map(String::as_str) == Some(value) {
                return Ok(());
            }
            let version = existing.meta.resource_version;
            store
                .update(existing.with_label(key, value), version)
                .map(|_| ())
                .map_err(user)
        }
        Err(StoreError::NotFound(_)) => store
            .create(StoredObject::namespace(ns).with_label(key, value))
            .map(|_| ())
            .map_err(user),
        Err(e) => Err(user(e)),
    }
}
