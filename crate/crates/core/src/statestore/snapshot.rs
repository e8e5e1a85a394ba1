//! Multi-document snapshot files. Datasets use the Dataset manifest layout;
//! the other kinds use `apiVersion: v1` documents with `spec` or `data`.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{Payload, Store, StoreError, StoredObject};
use crate::model::manifest::DatasetDoc;
use crate::model::{Kind, ManifestError, ObjectMeta};
use crate::resources::{ConfigMapData, PodSpec, SecretData, VolumeClaimSpec};

const CORE_API_VERSION: &str = "v1";

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct SpecDoc<T> {
    api_version: String,
    kind: String,
    metadata: ObjectMeta,
    spec: T,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct DataDoc {
    api_version: String,
    kind: String,
    metadata: ObjectMeta,
    #[serde(default)]
    data: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct BareDoc {
    api_version: String,
    kind: String,
    metadata: ObjectMeta,
}

fn typed<T: DeserializeOwned>(value: serde_yaml::Value) -> Result<T, ManifestError> {
    serde_yaml::from_value(value).map_err(|e| ManifestError::from_yaml(&e))
}

fn check_api(found: &str) -> Result<(), ManifestError> {
    if found != CORE_API_VERSION {
        return Err(ManifestError::ApiVersion(found.to_string()));
    }
    Ok(())
}

fn object_from_value(value: serde_yaml::Value) -> Result<StoredObject, ManifestError> {
    let kind_name = value
        .get("kind")
        .and_then(|k| k.as_str())
        .ok_or_else(|| ManifestError::InvalidValue {
            field: "kind".into(),
            reason: "required".into(),
        })?
        .to_string();
    let kind = match kind_name.as_str() {
        "Dataset" => Kind::Dataset,
        "VolumeClaim" => Kind::VolumeClaim,
        "Secret" => Kind::Secret,
        "ConfigMap" => Kind::ConfigMap,
        "Pod" => Kind::Pod,
        "Namespace" => Kind::Namespace,
        _ => {
            return Err(ManifestError::WrongKind {
                expected: "one of Dataset, VolumeClaim, Secret, ConfigMap, Pod, Namespace".into(),
                found: kind_name,
            })
        }
    };
    let obj = match kind {
        Kind::Dataset => typed::<DatasetDoc>(value)?.into_dataset()?.into(),
        Kind::VolumeClaim => {
            let d: SpecDoc<VolumeClaimSpec> = typed(value)?;
            check_api(&d.api_version)?;
            StoredObject::new(d.metadata, Payload::VolumeClaim(d.spec))
        }
        Kind::Pod => {
            let d: SpecDoc<PodSpec> = typed(value)?;
            check_api(&d.api_version)?;
            let mut meta = d.metadata;
            if meta.namespace.is_empty() {
                meta.namespace = "default".into();
            }
            StoredObject::new(meta, Payload::Pod(d.spec))
        }
        Kind::Secret | Kind::ConfigMap => {
            let d: DataDoc = typed(value)?;
            check_api(&d.api_version)?;
            let payload = if kind == Kind::Secret {
                Payload::Secret(SecretData { data: d.data })
            } else {
                Payload::ConfigMap(ConfigMapData { data: d.data })
            };
            StoredObject::new(d.metadata, payload)
        }
        Kind::Namespace => {
            let d: BareDoc = typed(value)?;
            check_api(&d.api_version)?;
            StoredObject::new(d.metadata, Payload::Namespace)
        }
    };
    Ok(obj)
}

fn object_to_value(obj: &StoredObject) -> serde_yaml::Value {
    let meta = obj.meta.clone();
    let kind = obj.kind().as_str().to_string();
    let api_version = CORE_API_VERSION.to_string();
    let v = match &obj.payload {
        Payload::Dataset(_) => serde_yaml::to_value(DatasetDoc::from_dataset(
            &obj.as_dataset().expect("dataset payload"),
        )),
        Payload::VolumeClaim(spec) => serde_yaml::to_value(SpecDoc {
            api_version,
            kind,
            metadata: meta,
            spec,
        }),
        Payload::Pod(spec) => serde_yaml::to_value(SpecDoc {
            api_version,
            kind,
            metadata: meta,
            spec,
        }),
        Payload::Secret(SecretData { data }) | Payload::ConfigMap(ConfigMapData { data }) => {
            serde_yaml::to_value(DataDoc {
                api_version,
                kind,
                metadata: meta,
                data: data.clone(),
            })
        }
        Payload::Namespace => serde_yaml::to_value(BareDoc {
            api_version,
            kind,
            metadata: meta,
        }),
    };
    v.expect("object documents always serialize")
}

/// Parses a `---`-separated stream of object documents.
pub fn parse_documents(text: &str) -> Result<Vec<StoredObject>, ManifestError> {
    let mut out = Vec::new();
    for doc in serde_yaml::Deserializer::from_str(text) {
        let value = serde_yaml::Value::deserialize(doc).map_err(|e| ManifestError::from_yaml(&e))?;
        if value.is_null() {
            continue;
        }
        out.push(object_from_value(value)?);
    }
    Ok(out)
}

pub fn render_documents(objects: &[StoredObject]) -> String {
    let mut out = String::new();
    for obj in objects {
        out.push_str("---\n");
        out.push_str(
            &serde_yaml::to_string(&object_to_value(obj)).expect("value always serializes"),
        );
    }
    out
}

/// Every live object of the store, in key order.
pub fn dump_snapshot(store: &Store) -> String {
    render_documents(&store.all_objects())
}

#[derive(Debug, thiserror::Error)]
pub enum SnapshotError {
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Builds a fresh store holding the snapshot's objects. The event history of
/// the new store starts empty.
pub fn load_snapshot(text: &str) -> Result<Arc<Store>, SnapshotError> {
    let objects = parse_documents(text)?;
    let store = Store::new();
    store.restore(objects)?;
    Ok(store)
}
