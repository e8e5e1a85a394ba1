//! The Dataset resource: metadata, typed storage specification and status
//! lifecycle.

mod fingerprint;
pub(crate) mod manifest;
mod validate;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use fingerprint::{canonical_bytes, spec_fingerprint};
pub use manifest::{parse_manifest, serialize_dataset, ManifestError, API_VERSION, DATASET_KIND};
pub use validate::{
    is_dns_label, is_valid_bucket_name, validate_dataset, validate_meta, FieldError,
    ValidationResult,
};

/// Finalizer the operator places on every Dataset it manages.
pub const CLEANUP_FINALIZER: &str = "dlf/cleanup";

/// Annotation carrying the fingerprint of the last reconciled spec.
pub const FINGERPRINT_ANNOTATION: &str = "dlf/spec-fingerprint";

/// Object kinds known to the simulated cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Kind {
    Dataset,
    VolumeClaim,
    Secret,
    ConfigMap,
    Pod,
    Namespace,
}

impl Kind {
    pub const ALL: [Kind; 6] = [
        Kind::Dataset,
        Kind::VolumeClaim,
        Kind::Secret,
        Kind::ConfigMap,
        Kind::Pod,
        Kind::Namespace,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Dataset => "Dataset",
            Kind::VolumeClaim => "VolumeClaim",
            Kind::Secret => "Secret",
            Kind::ConfigMap => "ConfigMap",
            Kind::Pod => "Pod",
            Kind::Namespace => "Namespace",
        }
    }

    /// Namespaces are the only cluster-scoped kind.
    pub fn is_namespaced(self) -> bool {
        self != Kind::Namespace
    }

    /// Case-insensitive lookup that also accepts the usual short names.
    pub fn parse(s: &str) -> Option<Kind> {
        match s.to_ascii_lowercase().as_str() {
            "dataset" | "datasets" => Some(Kind::Dataset),
            "volumeclaim" | "volumeclaims" | "pvc" => Some(Kind::VolumeClaim),
            "secret" | "secrets" => Some(Kind::Secret),
            "configmap" | "configmaps" | "cm" => Some(Kind::ConfigMap),
            "pod" | "pods" => Some(Kind::Pod),
            "namespace" | "namespaces" | "ns" => Some(Kind::Namespace),
            _ => None,
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OwnerRef {
    pub kind: Kind,
    pub name: String,
    pub uid: String,
}

/// Standard resource metadata.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ObjectMeta {
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub namespace: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub uid: String,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub resource_version: u64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub labels: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub annotations: BTreeMap<String, String>,
    #[serde(default, rename = "ownerReferences", skip_serializing_if = "Vec::is_empty")]
    pub owner_refs: Vec<OwnerRef>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub finalizers: Vec<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub deletion_requested: bool,
}

fn is_zero(v: &u64) -> bool {
    *v == 0
}

impl ObjectMeta {
    pub fn new(namespace: impl Into<String>, name: impl Into<String>) -> Self {
        ObjectMeta {
            name: name.into(),
            namespace: namespace.into(),
            ..Default::default()
        }
    }

    pub fn with_label(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.labels.insert(key.into(), value.into());
        self
    }

    pub fn is_owned_by(&self, uid: &str) -> bool {
        self.owner_refs.iter().any(|r| r.uid == uid)
    }

    pub fn has_finalizer(&self, name: &str) -> bool {
        self.finalizers.iter().any(|f| f == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DatasetType {
    #[serde(rename = "COS")]
    Cos,
    #[serde(rename = "NFS")]
    Nfs,
    #[serde(rename = "ARCHIVE")]
    Archive,
}

impl DatasetType {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetType::Cos => "COS",
            DatasetType::Nfs => "NFS",
            DatasetType::Archive => "ARCHIVE",
        }
    }

    pub fn parse(s: &str) -> Option<DatasetType> {
        match s {
            "COS" => Some(DatasetType::Cos),
            "NFS" => Some(DatasetType::Nfs),
            "ARCHIVE" => Some(DatasetType::Archive),
            _ => None,
        }
    }

    /// Storage class the operator assigns to claims for this dataset type.
    pub fn storage_class(self) -> &'static str {
        match self {
            DatasetType::Cos => "csi-s3",
            DatasetType::Nfs => "csi-nfs",
            DatasetType::Archive => "csi-h3",
        }
    }
}

impl fmt::Display for DatasetType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// S3-compatible bucket reference.
///
/// Credentials are held inline when the Dataset is submitted. Once the operator
/// has copied them into a Secret, both key fields are cleared and `secret_ref`
/// names the Secret instead.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CosSpec {
    pub endpoint: String,
    pub bucket: String,
    pub access_key_id: String,
    pub secret_access_key: String,
    pub region: Option<String>,
    pub secret_ref: Option<String>,
}

impl CosSpec {
    pub fn new(
        endpoint: impl Into<String>,
        bucket: impl Into<String>,
        access_key_id: impl Into<String>,
        secret_access_key: impl Into<String>,
    ) -> Self {
        CosSpec {
            endpoint: endpoint.into(),
            bucket: bucket.into(),
            access_key_id: access_key_id.into(),
            secret_access_key: secret_access_key.into(),
            region: None,
            secret_ref: None,
        }
    }

    pub fn is_scrubbed(&self) -> bool {
        self.secret_ref.is_some() && self.access_key_id.is_empty() && self.secret_access_key.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NfsSpec {
    pub server: String,
    pub share: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ArchiveFormat {
    Raw,
    Tar,
    Targz,
}

impl ArchiveFormat {
    pub fn as_str(self) -> &'static str {
        match self {
            ArchiveFormat::Raw => "raw",
            ArchiveFormat::Tar => "tar",
            ArchiveFormat::Targz => "targz",
        }
    }

    pub fn parse(s: &str) -> Option<ArchiveFormat> {
        match s {
            "raw" => Some(ArchiveFormat::Raw),
            "tar" => Some(ArchiveFormat::Tar),
            "targz" => Some(ArchiveFormat::Targz),
            _ => None,
        }
    }
}

/// HTTP-fetched archive.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ArchiveSpec {
    pub url: String,
    pub format: ArchiveFormat,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum DatasetSpec {
    Cos(CosSpec),
    Nfs(NfsSpec),
    Archive(ArchiveSpec),
}

impl DatasetSpec {
    pub fn dataset_type(&self) -> DatasetType {
        match self {
            DatasetSpec::Cos(_) => DatasetType::Cos,
            DatasetSpec::Nfs(_) => DatasetType::Nfs,
            DatasetSpec::Archive(_) => DatasetType::Archive,
        }
    }

    pub fn as_cos(&self) -> Option<&CosSpec> {
        match self {
            DatasetSpec::Cos(c) => Some(c),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Phase {
    #[default]
    Pending,
    Provisioning,
    Ready,
    Failed,
    Terminating,
}

impl Phase {
    pub const ALL: [Phase; 5] = [
        Phase::Pending,
        Phase::Provisioning,
        Phase::Ready,
        Phase::Failed,
        Phase::Terminating,
    ];

    /// Lifecycle edges. Staying in the same phase is not a transition and is
    /// always allowed.
    pub fn can_transition_to(self, next: Phase) -> bool {
        use Phase::*;
        if self == next {
            return true;
        }
        matches!(
            (self, next),
            (Pending, Provisioning)
                | (Provisioning, Ready)
                | (Provisioning, Failed)
                | (Failed, Provisioning)
                | (Ready, Provisioning)
                | (_, Terminating)
        )
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid phase transition {from} -> {to}")]
pub struct InvalidTransition {
    pub from: Phase,
    pub to: Phase,
}

/// Outcome of the last endpoint probe, as recorded in status.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ProbeSummary {
    pub at_unix_ms: u64,
    pub reachable: bool,
    pub authorized: bool,
    pub bucket_exists: bool,
    pub latency_ms: u64,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct DatasetStatus {
    #[serde(default)]
    pub phase: Phase,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound_claim: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound_secret: Option<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub cached: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_probe: Option<ProbeSummary>,
}

impl DatasetStatus {
    pub fn transition(&mut self, next: Phase) -> Result<(), InvalidTransition> {
        if !self.phase.can_transition_to(next) {
            return Err(InvalidTransition {
                from: self.phase,
                to: next,
            });
        }
        self.phase = next;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub meta: ObjectMeta,
    pub spec: DatasetSpec,
    pub status: DatasetStatus,
}

impl Dataset {
    pub fn new(namespace: impl Into<String>, name: impl Into<String>, spec: DatasetSpec) -> Self {
        Dataset {
            meta: ObjectMeta::new(namespace, name),
            spec,
            status: DatasetStatus::default(),
        }
    }

    pub fn name(&self) -> &str {
        &self.meta.name
    }
}
