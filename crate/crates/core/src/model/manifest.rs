//! Dataset manifest reading and writing.
//!
//! ```yaml
//! apiVersion: com.ie.ibm.hpsys/v1alpha1
//! kind: Dataset
//! metadata:
//!   name: example-dataset
//! spec:
//!   local:
//!     type: "COS"
//!     endpoint: "http://s3.example.test"
//!     bucket: "example-bucket"
//!     accessKeyID: "k"
//!     secretAccessKey: "s"
//! ```
//!
//! Parsing is strict: duplicate keys, unknown keys and keys that belong to a
//! different dataset type are rejected.

use serde::{Deserialize, Serialize};

use super::{
    ArchiveFormat, ArchiveSpec, CosSpec, Dataset, DatasetSpec, DatasetStatus, DatasetType, NfsSpec,
    ObjectMeta,
};

pub const API_VERSION: &str = "com.ie.ibm.hpsys/v1alpha1";
pub const DATASET_KIND: &str = "Dataset";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ManifestError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("duplicate key `{key}` (mapping at line {line}, column {column})")]
    DuplicateKey {
        key: String,
        line: usize,
        column: usize,
    },
    #[error("unknown datasetType: {0}")]
    UnknownDatasetType(String),
    #[error("unknown field `{field}` for datasetType {dataset_type}")]
    ForeignField {
        field: String,
        dataset_type: DatasetType,
    },
    #[error("unsupported apiVersion `{0}`")]
    ApiVersion(String),
    #[error("expected kind `{expected}`, found `{found}`")]
    WrongKind { expected: String, found: String },
    #[error("{field}: {reason}")]
    InvalidValue { field: String, reason: String },
}

impl ManifestError {
    pub(crate) fn from_yaml(err: &serde_yaml::Error) -> Self {
        let (line, column) = err
            .location()
            .map(|l| (l.line(), l.column()))
            .unwrap_or((0, 0));
        let message = err.to_string();
        if let Some(key) = duplicate_key(&message) {
            return ManifestError::DuplicateKey { key, line, column };
        }
        ManifestError::Syntax {
            line,
            column,
            message,
        }
    }
}

fn duplicate_key(message: &str) -> Option<String> {
    if let Some(idx) = message.find("duplicate entry with key \"") {
        let rest = &message[idx + "duplicate entry with key \"".len()..];
        return rest.split('"').next().map(str::to_string);
    }
    if let Some(idx) = message.find("duplicate field `") {
        let rest = &message[idx + "duplicate field `".len()..];
        return rest.split('`').next().map(str::to_string);
    }
    None
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub(crate) struct DatasetDoc {
    api_version: String,
    kind: String,
    metadata: ObjectMeta,
    spec: SpecDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    status: Option<DatasetStatus>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecDoc {
    local: LocalDoc,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LocalDoc {
    #[serde(rename = "type")]
    dataset_type: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bucket: Option<String>,
    #[serde(default, rename = "accessKeyID", skip_serializing_if = "Option::is_none")]
    access_key_id: Option<String>,
    #[serde(default, rename = "secretAccessKey", skip_serializing_if = "Option::is_none")]
    secret_access_key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    region: Option<String>,
    #[serde(default, rename = "secretRef", skip_serializing_if = "Option::is_none")]
    secret_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    server: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    share: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    format: Option<String>,
}

impl LocalDoc {
    fn into_spec(self) -> Result<DatasetSpec, ManifestError> {
        let ty = DatasetType::parse(&self.dataset_type)
            .ok_or_else(|| ManifestError::UnknownDatasetType(self.dataset_type.clone()))?;
        let present: [(&str, bool); 10] = [
            ("endpoint", self.endpoint.is_some()),
            ("bucket", self.bucket.is_some()),
            ("accessKeyID", self.access_key_id.is_some()),
            ("secretAccessKey", self.secret_access_key.is_some()),
            ("region", self.region.is_some()),
            ("secretRef", self.secret_ref.is_some()),
            ("server", self.server.is_some()),
            ("share", self.share.is_some()),
            ("url", self.url.is_some()),
            ("format", self.format.is_some()),
        ];
        let allowed: &[&str] = match ty {
            DatasetType::Cos => &[
                "endpoint",
                "bucket",
                "accessKeyID",
                "secretAccessKey",
                "region",
                "secretRef",
            ],
            DatasetType::Nfs => &["server", "share"],
            DatasetType::Archive => &["url", "format"],
        };
        if let Some((field, _)) = present
            .iter()
            .find(|(name, set)| *set && !allowed.contains(name))
        {
            return Err(ManifestError::ForeignField {
                field: format!("spec.local.{field}"),
                dataset_type: ty,
            });
        }
        Ok(match ty {
            DatasetType::Cos => DatasetSpec::Cos(CosSpec {
                endpoint: self.endpoint.unwrap_or_default(),
                bucket: self.bucket.unwrap_or_default(),
                access_key_id: self.access_key_id.unwrap_or_default(),
                secret_access_key: self.secret_access_key.unwrap_or_default(),
                region: self.region,
                secret_ref: self.secret_ref,
            }),
            DatasetType::Nfs => DatasetSpec::Nfs(NfsSpec {
                server: self.server.unwrap_or_default(),
                share: self.share.unwrap_or_default(),
            }),
            DatasetType::Archive => {
                let raw = self.format.ok_or_else(|| ManifestError::InvalidValue {
                    field: "spec.local.format".into(),
                    reason: "required".into(),
                })?;
                let format =
                    ArchiveFormat::parse(&raw).ok_or_else(|| ManifestError::InvalidValue {
                        field: "spec.local.format".into(),
                        reason: format!("unknown archive format `{raw}`"),
                    })?;
                DatasetSpec::Archive(ArchiveSpec {
                    url: self.url.unwrap_or_default(),
                    format,
                })
            }
        })
    }

    fn from_spec(spec: &DatasetSpec) -> Self {
        let non_empty = |s: &str| (!s.is_empty()).then(|| s.to_string());
        let mut doc = LocalDoc {
            dataset_type: spec.dataset_type().as_str().to_string(),
            ..Default::default()
        };
        match spec {
            DatasetSpec::Cos(c) => {
                doc.endpoint = non_empty(&c.endpoint);
                doc.bucket = non_empty(&c.bucket);
                doc.access_key_id = non_empty(&c.access_key_id);
                doc.secret_access_key = non_empty(&c.secret_access_key);
                doc.region = c.region.clone();
                doc.secret_ref = c.secret_ref.clone();
            }
            DatasetSpec::Nfs(n) => {
                doc.server = non_empty(&n.server);
                doc.share = non_empty(&n.share);
            }
            DatasetSpec::Archive(a) => {
                doc.url = non_empty(&a.url);
                doc.format = Some(a.format.as_str().to_string());
            }
        }
        doc
    }
}

impl DatasetDoc {
    pub(crate) fn into_dataset(self) -> Result<Dataset, ManifestError> {
        if self.api_version != API_VERSION {
            return Err(ManifestError::ApiVersion(self.api_version));
        }
        if self.kind != DATASET_KIND {
            return Err(ManifestError::WrongKind {
                expected: DATASET_KIND.into(),
                found: self.kind,
            });
        }
        let mut meta = self.metadata;
        if meta.namespace.is_empty() {
            meta.namespace = "default".into();
        }
        Ok(Dataset {
            meta,
            spec: self.spec.local.into_spec()?,
            status: self.status.unwrap_or_default(),
        })
    }

    pub(crate) fn from_dataset(ds: &Dataset) -> Self {
        DatasetDoc {
            api_version: API_VERSION.into(),
            kind: DATASET_KIND.into(),
            metadata: ds.meta.clone(),
            spec: SpecDoc {
                local: LocalDoc::from_spec(&ds.spec),
            },
            status: (ds.status != DatasetStatus::default()).then(|| ds.status.clone()),
        }
    }
}

/// Parses a single Dataset manifest. The namespace defaults to `default` and a
/// missing status block yields phase `Pending`.
pub fn parse_manifest(text: &str) -> Result<Dataset, ManifestError> {
    // The untyped pass catches duplicate keys, which typed maps would silently
    // collapse; the typed pass reports unknown fields with their position.
    serde_yaml::from_str::<serde_yaml::Value>(text).map_err(|e| ManifestError::from_yaml(&e))?;
    let doc: DatasetDoc = serde_yaml::from_str(text).map_err(|e| ManifestError::from_yaml(&e))?;
    doc.into_dataset()
}

pub fn serialize_dataset(ds: &Dataset) -> String {
    serde_yaml::to_string(&DatasetDoc::from_dataset(ds)).expect("dataset documents always serialize")
}
