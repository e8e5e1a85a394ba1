//! Payloads of the non-Dataset kinds held by the store.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct VolumeClaimSpec {
    pub storage_class_name: String,
    pub access_modes: Vec<String>,
    /// Dataset this claim materializes.
    pub dataset: String,
    /// Driver parameters: endpoint/bucket/secret for COS, server/share for
    /// NFS, url/format for archives.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub volume_attributes: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SecretData {
    #[serde(default)]
    pub data: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigMapData {
    #[serde(default)]
    pub data: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct VolumeMount {
    pub name: String,
    pub mount_path: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SecretKeyRef {
    pub name: String,
    pub key: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct EnvSource {
    pub secret_key_ref: SecretKeyRef,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct EnvVar {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value_from: Option<EnvSource>,
}

impl EnvVar {
    pub fn literal(name: impl Into<String>, value: impl Into<String>) -> Self {
        EnvVar {
            name: name.into(),
            value: Some(value.into()),
            value_from: None,
        }
    }

    pub fn from_secret(name: impl Into<String>, secret: &str, key: &str) -> Self {
        EnvVar {
            name: name.into(),
            value: None,
            value_from: Some(EnvSource {
                secret_key_ref: SecretKeyRef {
                    name: secret.into(),
                    key: key.into(),
                },
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Container {
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub image: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub volume_mounts: Vec<VolumeMount>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub env: Vec<EnvVar>,
}

impl Container {
    pub fn new(name: impl Into<String>, image: impl Into<String>) -> Self {
        Container {
            name: name.into(),
            image: image.into(),
            volume_mounts: Vec::new(),
            env: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ClaimSource {
    pub claim_name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Volume {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub persistent_volume_claim: Option<ClaimSource>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct PodSpec {
    pub containers: Vec<Container>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub volumes: Vec<Volume>,
}

impl PodSpec {
    pub fn single(container: Container) -> Self {
        PodSpec {
            containers: vec![container],
            volumes: Vec::new(),
        }
    }

    /// Structural rules a pod must satisfy to be stored.
    pub fn validate(&self) -> Result<(), String> {
        if self.containers.is_empty() {
            return Err("pod must declare at least one container".into());
        }
        let mut names = HashSet::new();
        for v in &self.volumes {
            if v.name.is_empty() {
                return Err("volume name must not be empty".into());
            }
            if !names.insert(v.name.as_str()) {
                return Err(format!("duplicate volume `{}`", v.name));
            }
        }
        let mut container_names = HashSet::new();
        for c in &self.containers {
            if !container_names.insert(c.name.as_str()) {
                return Err(format!("duplicate container `{}`", c.name));
            }
            let mut paths = HashSet::new();
            for m in &c.volume_mounts {
                if !names.contains(m.name.as_str()) {
                    return Err(format!(
                        "container `{}` mounts unknown volume `{}`",
                        c.name, m.name
                    ));
                }
                if !m.mount_path.starts_with('/') {
                    return Err(format!("mount path `{}` is not absolute", m.mount_path));
                }
                if !paths.insert(m.mount_path.as_str()) {
                    return Err(format!(
                        "container `{}` has two mounts at `{}`",
                        c.name, m.mount_path
                    ));
                }
            }
            let mut envs = HashSet::new();
            for e in &c.env {
                if !envs.insert(e.name.as_str()) {
                    return Err(format!("container `{}` repeats env `{}`", c.name, e.name));
                }
                if e.value.is_some() == e.value_from.is_some() {
                    return Err(format!(
                        "env `{}` must set exactly one of value and valueFrom",
                        e.name
                    ));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pod_validation() {
        let mut pod = PodSpec::single(Container::new("main", "busybox"));
        assert!(pod.validate().is_ok());
        pod.containers[0].volume_mounts.push(VolumeMount {
            name: "data".into(),
            mount_path: "/mnt/datasets/data".into(),
        });
        assert!(pod.validate().unwrap_err().contains("unknown volume"));
        pod.volumes.push(Volume {
            name: "data".into(),
            persistent_volume_claim: Some(ClaimSource {
                claim_name: "data".into(),
            }),
        });
        assert!(pod.validate().is_ok());
        pod.volumes.push(pod.volumes[0].clone());
        assert!(pod.validate().unwrap_err().contains("duplicate volume"));
        assert!(PodSpec {
            containers: vec![],
            volumes: vec![]
        }
        .validate()
        .is_err());
    }
}
