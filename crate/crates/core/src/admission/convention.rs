//! Pod label convention.
//!
//! ```text
//! dataset.<N>.id        = <dataset name>
//! dataset.<N>.useas     = mount | configmap      (alias: dataset.<N>.uses)
//! dataset.<N>.mountpath = <absolute path>        (optional, mount only)
//! ```

use std::collections::BTreeMap;
use std::fmt;

use crate::model::is_dns_label;

use super::AdmissionError;

pub const MONITOR_LABEL: &str = "monitor-pods-datasets";
pub const MONITOR_VALUE: &str = "enabled";
pub const MOUNT_ROOT: &str = "/mnt/datasets";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UseAs {
    Mount,
    ConfigMap,
}

impl UseAs {
    pub fn parse(s: &str) -> Option<UseAs> {
        match s {
            "mount" => Some(UseAs::Mount),
            "configmap" => Some(UseAs::ConfigMap),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            UseAs::Mount => "mount",
            UseAs::ConfigMap => "configmap",
        }
    }
}

impl fmt::Display for UseAs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetRef {
    pub index: u32,
    pub id: String,
    pub useas: UseAs,
    pub mount_path_override: Option<String>,
}

impl DatasetRef {
    /// Where a mount ref lands inside the containers.
    pub fn mount_path(&self) -> String {
        self.mount_path_override
            .clone()
            .unwrap_or_else(|| default_mount_path(&self.id))
    }
}

pub fn default_mount_path(id: &str) -> String {
    format!("{MOUNT_ROOT}/{id}")
}

#[derive(Default)]
struct Slot<'a> {
    id: Option<&'a str>,
    useas: Option<&'a str>,
    uses: Option<&'a str>,
    mountpath: Option<&'a str>,
}

fn malformed(msg: String) -> AdmissionError {
    AdmissionError::MalformedConvention(msg)
}

/// Splits `dataset.<N>.<field>` into `(N, field)`. `N` is a decimal index
/// without leading zeros.
fn split_key(key: &str) -> Option<Result<(u32, &str), AdmissionError>> {
    let rest = key.strip_prefix("dataset.")?;
    let parsed = rest.split_once('.').and_then(|(n, field)| {
        let canonical = !n.is_empty()
            && n.bytes().all(|b| b.is_ascii_digit())
            && (n == "0" || !n.starts_with('0'));
        if !canonical {
            return None;
        }
        Some((n.parse::<u32>().ok()?, field))
    });
    Some(parsed.ok_or_else(|| malformed(format!("label `{key}` does not match dataset.<N>.<field>"))))
}

/// Parses every `dataset.<N>.*` label into refs ordered by `N`. Labels
/// outside the `dataset.` prefix are ignored.
pub fn extract_dataset_refs(
    labels: &BTreeMap<String, String>,
) -> Result<Vec<DatasetRef>, AdmissionError> {
    let mut slots: BTreeMap<u32, Slot<'_>> = BTreeMap::new();
    for (key, value) in labels {
        let Some(split) = split_key(key) else {
            continue;
        };
        let (n, field) = split?;
        let slot = slots.entry(n).or_default();
        let target = match field {
            "id" => &mut slot.id,
            "useas" => &mut slot.useas,
            "uses" => &mut slot.uses,
            "mountpath" => &mut slot.mountpath,
            _ => return Err(malformed(format!("unknown dataset label field `{key}`"))),
        };
        *target = Some(value.as_str());
    }

    let mut refs = Vec::with_capacity(slots.len());
    for (n, slot) in slots {
        let Some(id) = slot.id else {
            return Err(malformed(format!("dataset.{n} has no id")));
        };
        if !is_dns_label(id) {
            return Err(malformed(format!("dataset.{n}.id `{id}` is not a valid dataset name")));
        }
        let raw = match (slot.useas, slot.uses) {
            (Some(a), Some(b)) if a != b => {
                return Err(malformed(format!(
                    "dataset.{n}.useas `{a}` disagrees with dataset.{n}.uses `{b}`"
                )))
            }
            (Some(a), _) | (None, Some(a)) => a,
            (None, None) => return Err(malformed(format!("dataset.{n}.id has no useas"))),
        };
        let useas = UseAs::parse(raw)
            .ok_or_else(|| malformed(format!("dataset.{n}.useas has unknown value `{raw}`")))?;
        let mount_path_override = match slot.mountpath {
            None => None,
            Some(_) if useas == UseAs::ConfigMap => {
                return Err(malformed(format!(
                    "dataset.{n}.mountpath given for a configmap dataset"
                )))
            }
            Some(p) if !p.starts_with('/') => {
                return Err(malformed(format!("dataset.{n}.mountpath `{p}` is not absolute")))
            }
            Some(p) => Some(p.to_string()),
        };
        refs.push(DatasetRef {
            index: n,
            id: id.to_string(),
            useas,
            mount_path_override,
        });
    }

    let mut mounted = std::collections::HashSet::new();
    for r in refs.iter().filter(|r| r.useas == UseAs::Mount) {
        if !mounted.insert(r.id.as_str()) {
            return Err(malformed(format!("dataset {} is mounted twice", r.id)));
        }
    }
    Ok(refs)
}

/// True when some index carries both an id and a use mode.
pub fn has_dataset_pair(labels: &BTreeMap<String, String>) -> bool {
    labels.keys().any(|k| {
        let Some(Ok((n, "id"))) = split_key(k) else {
            return false;
        };
        ["useas", "uses"]
            .iter()
            .any(|f| labels.contains_key(&format!("dataset.{n}.{f}")))
    })
}

pub fn namespace_monitored(labels: &BTreeMap<String, String>) -> bool {
    labels.get(MONITOR_LABEL).map(String::as_str) == Some(MONITOR_VALUE)
}

/// `my-dataset` → `MY_DATASET`.
pub fn env_prefix(id: &str) -> String {
    id.to_ascii_uppercase().replace('-', "_")
}
