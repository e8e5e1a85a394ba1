use std::collections::BTreeMap;

use dlf_core::model::ObjectMeta;
use dlf_core::resources::{Container, PodSpec};
use dlf_core::statestore::{Payload, StoredObject};

/// A bare pod with a single container named `main`.
pub fn pod(ns: &str, name: &str, labels: &[(&str, &str)]) -> StoredObject {
    let mut meta = ObjectMeta::new(ns, name);
    for (k, v) in labels {
        meta.labels.insert(k.to_string(), v.to_string());
    }
    StoredObject::new(meta, Payload::Pod(PodSpec::single(Container::new("main", "busybox"))))
}

/// Labels asking admission to mount each dataset, in index order.
pub fn mount_labels(ids: &[&str]) -> Vec<(String, String)> {
    ids.iter()
        .enumerate()
        .flat_map(|(i, id)| {
            [
                (format!("dataset.{i}.id"), id.to_string()),
                (format!("dataset.{i}.useas"), "mount".to_string()),
            ]
        })
        .collect()
}

pub fn pod_with(ns: &str, name: &str, labels: &[(String, String)]) -> StoredObject {
    let pairs: Vec<(&str, &str)> = labels.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
    pod(ns, name, &pairs)
}

/// A replicated workload. Admission acts on the pods it stamps out, never on
/// the template itself.
#[derive(Debug, Clone)]
pub struct Deployment {
    pub namespace: String,
    pub name: String,
    pub replicas: usize,
    pub template_labels: BTreeMap<String, String>,
    pub template: PodSpec,
}

impl Deployment {
    /// Pods for one rollout. `generation` keeps names unique across rollouts.
    pub fn expand(&self, generation: u32) -> Vec<StoredObject> {
        (0..self.replicas)
            .map(|i| {
                let mut meta = ObjectMeta::new(self.namespace.clone(), format!("{}-{generation}-{i}", self.name));
                meta.labels = self.template_labels.clone();
                meta.labels.insert("app".into(), self.name.clone());
                StoredObject::new(meta, Payload::Pod(self.template.clone()))
            })
            .collect()
    }
}
