//! Stand-in for the storage driver behind dataset volumes.
//!
//! A container's mounts are resolved the way a node would resolve them:
//! volume, then claim, then the claim's storage class and attributes, then
//! the credentials Secret. Reads and writes under a mount path become object
//! requests against the backing bucket. Consumer code only sees paths.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use dlf_core::model::{DatasetType, Kind};
use dlf_core::reconciler::{SECRET_KEY_ID, SECRET_KEY_SECRET};
use dlf_core::s3probe::{Credentials, S3Client};
use dlf_core::statestore::{Store, StoredObject};

use crate::{CmdResult, Failure};

const IO_TIMEOUT: Duration = Duration::from_secs(10);

enum Backend {
    Bucket { client: S3Client, bucket: String },
    /// A single read-only file fetched from `url`.
    Archive { url: String, file: String },
    /// Claim types without a wire implementation here (NFS).
    Opaque(String),
}

struct Mount {
    path: String,
    backend: Backend,
}

/// The dataset mounts of one container.
pub struct MountTable {
    mounts: Vec<Mount>,
    reads: AtomicU64,
    writes: AtomicU64,
}

fn attr<'a>(attrs: &'a std::collections::BTreeMap<String, String>, key: &str, claim: &str) -> CmdResult<&'a str> {
    attrs
        .get(key)
        .map(String::as_str)
        .ok_or_else(|| Failure::user(format!("claim {claim} lacks attribute {key}")))
}

fn backend_for(store: &Store, ns: &str, claim_name: &str) -> CmdResult<Backend> {
    let claim = store
        .get(Kind::VolumeClaim, ns, claim_name)
        .map_err(|e| Failure::user(e.to_string()))?;
    let spec = claim
        .as_claim()
        .ok_or_else(|| Failure::user(format!("{claim_name} is not a claim")))?;
    let attrs = &spec.volume_attributes;
    let class = spec.storage_class_name.as_str();
    if class == DatasetType::Cos.storage_class() {
        let secret_name = attr(attrs, "secretName", claim_name)?;
        let secret = store
            .get(Kind::Secret, ns, secret_name)
            .map_err(|e| Failure::user(e.to_string()))?;
        let data = &secret
            .as_secret()
            .ok_or_else(|| Failure::user(format!("{secret_name} is not a secret")))?
            .data;
        let creds = match (data.get(SECRET_KEY_ID), data.get(SECRET_KEY_SECRET)) {
            (Some(id), Some(key)) => Credentials::new(id.clone(), key.clone()),
            _ => return Err(Failure::user(format!("secret {secret_name} lacks credentials"))),
        };
        let client = S3Client::new(attr(attrs, "endpoint", claim_name)?, Some(creds), IO_TIMEOUT)
            .map_err(|e| Failure::user(e.to_string()))?;
        Ok(Backend::Bucket {
            client,
            bucket: attr(attrs, "bucket", claim_name)?.to_string(),
        })
    } else if class == DatasetType::Archive.storage_class() {
        let url = attr(attrs, "url", claim_name)?.to_string();
        let file = url
            .rsplit('/')
            .next()
            .filter(|s| !s.is_empty())
            .unwrap_or("archive")
            .to_string();
        Ok(Backend::Archive { url, file })
    } else {
        Ok(Backend::Opaque(class.to_string()))
    }
}

/// Resolves every claim-backed mount of `container` in `pod`.
pub fn mount_container(store: &Store, pod: &StoredObject, container: &str) -> CmdResult<MountTable> {
    let spec = pod
        .as_pod()
        .ok_or_else(|| Failure::user(format!("{} is not a pod", pod.meta.name)))?;
    let c = spec
        .containers
        .iter()
        .find(|c| c.name == container)
        .ok_or_else(|| Failure::user(format!("pod {} has no container {container}", pod.meta.name)))?;
    let mut mounts = Vec::new();
    for m in &c.volume_mounts {
        let Some(claim) = spec
            .volumes
            .iter()
            .find(|v| v.name == m.name)
            .and_then(|v| v.persistent_volume_claim.as_ref())
        else {
            continue;
        };
        mounts.push(Mount {
            path: m.mount_path.trim_end_matches('/').to_string(),
            backend: backend_for(store, &pod.meta.namespace, &claim.claim_name)?,
        });
    }
    Ok(MountTable {
        mounts,
        reads: AtomicU64::new(0),
        writes: AtomicU64::new(0),
    })
}

impl MountTable {
    pub fn mount_paths(&self) -> Vec<&str> {
        self.mounts.iter().map(|m| m.path.as_str()).collect()
    }

    /// The mount holding `path` and the path relative to it.
    fn locate<'a>(&self, path: &'a str) -> Result<(&Mount, &'a str), String> {
        self.mounts
            .iter()
            .filter_map(|m| {
                let rest = path.strip_prefix(m.path.as_str())?;
                if rest.is_empty() {
                    Some((m, rest))
                } else {
                    rest.strip_prefix('/').map(|r| (m, r))
                }
            })
            .max_by_key(|(m, _)| m.path.len())
            .ok_or_else(|| format!("{path}: not under any dataset mount"))
    }

    pub fn read(&self, path: &str) -> Result<Vec<u8>, String> {
        let (m, rel) = self.locate(path)?;
        self.reads.fetch_add(1, Ordering::SeqCst);
        match &m.backend {
            Backend::Bucket { client, bucket } => client.get_object(bucket, rel).map_err(|e| format!("{path}: {e}")),
            Backend::Archive { url, file } => {
                if rel != file {
                    return Err(format!("{path}: no such file"));
                }
                let resp = ureq::get(url)
                    .timeout(IO_TIMEOUT)
                    .call()
                    .map_err(|e| format!("{path}: {e}"))?;
                let mut body = Vec::new();
                std::io::Read::read_to_end(&mut resp.into_reader(), &mut body).map_err(|e| format!("{path}: {e}"))?;
                Ok(body)
            }
            Backend::Opaque(class) => Err(format!("{path}: {class} volumes are not readable here")),
        }
    }

    pub fn write(&self, path: &str, content: &[u8]) -> Result<(), String> {
        let (m, rel) = self.locate(path)?;
        match &m.backend {
            Backend::Bucket { client, bucket } => {
                self.writes.fetch_add(1, Ordering::SeqCst);
                client
                    .put_object(bucket, rel, content)
                    .map(|_| ())
                    .map_err(|e| format!("{path}: {e}"))
            }
            Backend::Archive { .. } => Err(format!("{path}: read-only file system")),
            Backend::Opaque(class) => Err(format!("{path}: {class} volumes are not writable here")),
        }
    }

    /// Full paths of the files under directory `dir`.
    pub fn list(&self, dir: &str) -> Result<Vec<String>, String> {
        let dir = dir.trim_end_matches('/');
        let (m, rel) = self.locate(dir)?;
        let prefix = if rel.is_empty() { String::new() } else { format!("{rel}/") };
        let names = match &m.backend {
            Backend::Bucket { client, bucket } => client.list_objects(bucket, &prefix).map_err(|e| format!("{dir}: {e}"))?,
            Backend::Archive { file, .. } => {
                if prefix.is_empty() {
                    vec![file.clone()]
                } else {
                    Vec::new()
                }
            }
            Backend::Opaque(class) => return Err(format!("{dir}: {class} volumes are not listable here")),
        };
        Ok(names.into_iter().map(|n| format!("{}/{n}", m.path)).collect())
    }

    pub fn reads(&self) -> u64 {
        self.reads.load(Ordering::SeqCst)
    }

    pub fn writes(&self) -> u64 {
        self.writes.load(Ordering::SeqCst)
    }
}
