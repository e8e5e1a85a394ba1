//! Pod admission: turns dataset labels on a pod into volumes, mounts and
//! environment variables.
//!
//! Only pods created in namespaces labelled `monitor-pods-datasets=enabled`
//! are touched. The result is an RFC 6902 patch against the pod document
//! `{"metadata": ..., "spec": ...}`.

mod convention;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::model::{Dataset, DatasetSpec, Phase};
use crate::reconciler::{SECRET_KEY_ID, SECRET_KEY_SECRET};
use crate::resources::{ClaimSource, EnvVar, PodSpec, Volume, VolumeMount};
use crate::statestore::{Store, StoreError, StoredObject};

pub use convention::{
    default_mount_path, env_prefix, extract_dataset_refs, has_dataset_pair, namespace_monitored,
    DatasetRef, UseAs, MONITOR_LABEL, MONITOR_VALUE, MOUNT_ROOT,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AdmissionError {
    #[error("malformed dataset labels: {0}")]
    MalformedConvention(String),
    #[error("dataset not found: {0}")]
    DatasetNotFound(String),
    #[error("dataset not ready: {0}")]
    DatasetNotReady(String),
    #[error("mount path collision in container {container}: {path}")]
    MountPathCollision { container: String, path: String },
    #[error("invalid pod: {0}")]
    InvalidPod(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Op {
    Add,
    Replace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchOp {
    pub op: Op,
    pub path: String,
    pub value: Value,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AdmissionPatch {
    pub operations: Vec<PatchOp>,
}

impl AdmissionPatch {
    pub fn is_empty(&self) -> bool {
        self.operations.is_empty()
    }

    pub fn len(&self) -> usize {
        self.operations.len()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("patch serializes")
    }

    /// Applies the patch to a pod spec and validates the result.
    pub fn apply(&self, spec: &PodSpec) -> Result<PodSpec, String> {
        let mut doc = serde_json::json!({ "spec": spec });
        let patch: json_patch::Patch =
            serde_json::from_value(serde_json::to_value(self).map_err(|e| e.to_string())?)
                .map_err(|e| e.to_string())?;
        json_patch::patch(&mut doc, &patch).map_err(|e| e.to_string())?;
        let out: PodSpec = serde_json::from_value(doc["spec"].take()).map_err(|e| e.to_string())?;
        out.validate()?;
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AdmissionConfig {
    /// Admit pods whose datasets exist but are not Ready yet.
    pub allow_pending_datasets: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AdmissionDecision {
    Allowed(AdmissionPatch),
    Rejected(String),
}

/// Gate: monitored namespace and at least one id/useas label pair.
pub fn should_mutate(pod: &StoredObject, namespace: &StoredObject) -> bool {
    namespace_monitored(&namespace.meta.labels) && has_dataset_pair(&pod.meta.labels)
}

fn lookup(store: &Store, ns: &str, id: &str, config: AdmissionConfig) -> Result<Dataset, AdmissionError> {
    let ds = match store.get_dataset(ns, id) {
        Ok(ds) => ds,
        Err(StoreError::NotFound(_)) => return Err(AdmissionError::DatasetNotFound(id.to_string())),
        Err(e) => return Err(AdmissionError::InvalidPod(e.to_string())),
    };
    if ds.meta.deletion_requested {
        return Err(AdmissionError::DatasetNotFound(id.to_string()));
    }
    if ds.status.phase != Phase::Ready && !config.allow_pending_datasets {
        return Err(AdmissionError::DatasetNotReady(id.to_string()));
    }
    Ok(ds)
}

/// Environment variables injected for a `configmap` ref.
pub fn dataset_env(ds: &Dataset) -> Vec<EnvVar> {
    let p = env_prefix(&ds.meta.name);
    match &ds.spec {
        DatasetSpec::Cos(c) => {
            let secret = ds
                .status
                .bound_secret
                .clone()
                .or_else(|| c.secret_ref.clone())
                .unwrap_or_else(|| ds.meta.name.clone());
            vec![
                EnvVar::literal(format!("{p}_ENDPOINT"), c.endpoint.clone()),
                EnvVar::literal(format!("{p}_BUCKET"), c.bucket.clone()),
                EnvVar::from_secret(format!("{p}_ACCESS_KEY_ID"), &secret, SECRET_KEY_ID),
                EnvVar::from_secret(format!("{p}_SECRET_ACCESS_KEY"), &secret, SECRET_KEY_SECRET),
            ]
        }
        DatasetSpec::Nfs(n) => vec![
            EnvVar::literal(format!("{p}_SERVER"), n.server.clone()),
            EnvVar::literal(format!("{p}_SHARE"), n.share.clone()),
        ],
        DatasetSpec::Archive(a) => vec![
            EnvVar::literal(format!("{p}_URL"), a.url.clone()),
            EnvVar::literal(format!("{p}_FORMAT"), a.format.as_str()),
        ],
    }
}

fn json<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("pod types serialize")
}

/// Accumulates operations while mirroring them on a working copy, so each
/// op knows whether the array it appends to exists yet.
struct Builder {
    work: PodSpec,
    ops: Vec<PatchOp>,
}

impl Builder {
    fn push(&mut self, op: Op, path: String, value: Value) {
        self.ops.push(PatchOp { op, path, value });
    }

    fn add_volume(&mut self, vol: Volume) {
        if self.work.volumes.is_empty() {
            self.push(Op::Add, "/spec/volumes".into(), json(&[&vol]));
        } else {
            self.push(Op::Add, "/spec/volumes/-".into(), json(&vol));
        }
        self.work.volumes.push(vol);
    }

    fn add_mount(&mut self, c: usize, mount: VolumeMount) {
        let base = format!("/spec/containers/{c}/volumeMounts");
        if self.work.containers[c].volume_mounts.is_empty() {
            self.push(Op::Add, base, json(&[&mount]));
        } else {
            self.push(Op::Add, format!("{base}/-"), json(&mount));
        }
        self.work.containers[c].volume_mounts.push(mount);
    }

    fn set_env(&mut self, c: usize, var: EnvVar) {
        let base = format!("/spec/containers/{c}/env");
        let env = &self.work.containers[c].env;
        match env.iter().position(|e| e.name == var.name) {
            Some(i) if env[i] == var => {}
            Some(i) => {
                self.push(Op::Replace, format!("{base}/{i}"), json(&var));
                self.work.containers[c].env[i] = var;
            }
            None if env.is_empty() => {
                self.push(Op::Add, base, json(&[&var]));
                self.work.containers[c].env.push(var);
            }
            None => {
                self.push(Op::Add, format!("{base}/-"), json(&var));
                self.work.containers[c].env.push(var);
            }
        }
    }
}

/// Builds the patch for `refs` in order. A mount ref whose volume is already
/// present contributes nothing, so admitting a patched pod again is a no-op.
pub fn build_patch(
    pod: &StoredObject,
    refs: &[DatasetRef],
    store: &Store,
    config: AdmissionConfig,
) -> Result<AdmissionPatch, AdmissionError> {
    let spec = pod
        .as_pod()
        .ok_or_else(|| AdmissionError::InvalidPod("object is not a pod".into()))?;
    let ns = &pod.meta.namespace;
    let mut b = Builder {
        work: spec.clone(),
        ops: Vec::new(),
    };
    for r in refs {
        let ds = lookup(store, ns, &r.id, config)?;
        match r.useas {
            UseAs::Mount => {
                if b.work.volumes.iter().any(|v| v.name == r.id) {
                    continue;
                }
                let path = r.mount_path();
                for c in &b.work.containers {
                    if c.volume_mounts.iter().any(|m| m.mount_path == path) {
                        return Err(AdmissionError::MountPathCollision {
                            container: c.name.clone(),
                            path,
                        });
                    }
                }
                b.add_volume(Volume {
                    name: r.id.clone(),
                    persistent_volume_claim: Some(ClaimSource {
                        claim_name: r.id.clone(),
                    }),
                });
                for c in 0..b.work.containers.len() {
                    b.add_mount(
                        c,
                        VolumeMount {
                            name: r.id.clone(),
                            mount_path: path.clone(),
                        },
                    );
                }
            }
            UseAs::ConfigMap => {
                let vars = dataset_env(&ds);
                for c in 0..b.work.containers.len() {
                    for var in &vars {
                        b.set_env(c, var.clone());
                    }
                }
            }
        }
    }
    b.work.validate().map_err(AdmissionError::InvalidPod)?;
    Ok(AdmissionPatch { operations: b.ops })
}

/// Full admission: gate, parse labels, build the patch. Errors become a
/// rejection carrying the error text.
pub fn admit(
    pod: &StoredObject,
    namespace: &StoredObject,
    store: &Store,
    config: AdmissionConfig,
) -> AdmissionDecision {
    if !should_mutate(pod, namespace) {
        return AdmissionDecision::Allowed(AdmissionPatch::default());
    }
    let result = extract_dataset_refs(&pod.meta.labels)
        .and_then(|refs| build_patch(pod, &refs, store, config));
    match result {
        Ok(patch) => AdmissionDecision::Allowed(patch),
        Err(e) => AdmissionDecision::Rejected(e.to_string()),
    }
}

/// Admits `pod` and, if allowed, stores it with the patch applied. Returns
/// the stored pod or the rejection text.
pub fn admit_and_create(
    pod: StoredObject,
    store: &Store,
    config: AdmissionConfig,
) -> Result<StoredObject, String> {
    let namespace = store
        .get(crate::model::Kind::Namespace, "", &pod.meta.namespace)
        .unwrap_or_else(|_| StoredObject::namespace(pod.meta.namespace.clone()));
    match admit(&pod, &namespace, store, config) {
        AdmissionDecision::Rejected(reason) => Err(reason),
        AdmissionDecision::Allowed(patch) => {
            let spec = pod.as_pod().ok_or("object is not a pod")?;
            let patched = patch.apply(spec)?;
            let obj = StoredObject::new(pod.meta, crate::statestore::Payload::Pod(patched));
            store.create(obj).map_err(|e| e.to_string())
        }
    }
}

/// Mount paths per container, for assertions.
pub fn mount_paths(spec: &PodSpec) -> Vec<Vec<String>> {
    spec.containers
        .iter()
        .map(|c| c.volume_mounts.iter().map(|m| m.mount_path.clone()).collect())
        .collect()
}

/// Volume names, checked unique.
pub fn volume_names(spec: &PodSpec) -> Result<Vec<String>, String> {
    let mut seen = HashSet::new();
    spec.volumes
        .iter()
        .map(|v| {
            if seen.insert(v.name.as_str()) {
                Ok(v.name.clone())
            } else {
                Err(format!("duplicate volume {}", v.name))
            }
        })
        .collect()
}
