//! A training job writes event files into a dataset; a replicated viewer,
//! labelled with `dataset.0.id` / `dataset.0.uses`, reads them back. All pods
//! are then deleted and a fresh replica must still see every byte.

use std::collections::BTreeMap;
use std::sync::Arc;

use dlf_core::admission::mount_paths;
use dlf_core::model::{CosSpec, Dataset, DatasetSpec, Kind};
use dlf_core::reconciler::HttpProber;
use dlf_core::resources::{Container, PodSpec};
use dlf_core::s3probe::{StubBucketConfig, StubOptions, StubServer, Verb};
use dlf_core::statestore::Store;

use super::{harness, random_bytes, random_credentials, seeded_rng, stub_failed, ScenarioOptions};
use crate::cluster::Cluster;
use crate::mount::mount_container;
use crate::workload::{mount_labels, pod_with, Deployment};
use crate::{Failure, ScenarioReport};

pub const DEFAULT_EVENT_FILES: usize = 8;
const REPLICAS: usize = 2;
const BUCKET: &str = "training-logs";
const DATASET: &str = "tb-logs";
const NAMESPACE: &str = "kubeflow-user";

pub fn run(opts: &ScenarioOptions) -> ScenarioReport {
    let files = opts.scale.unwrap_or(DEFAULT_EVENT_FILES);
    harness("tensorboard", |report| body(files, opts, report))
}

fn viewer(ns: &str) -> Deployment {
    Deployment {
        namespace: ns.into(),
        name: "tensorboard".into(),
        replicas: REPLICAS,
        template_labels: [
            ("dataset.0.id".to_string(), DATASET.to_string()),
            ("dataset.0.uses".to_string(), "mount".to_string()),
        ]
        .into(),
        template: PodSpec {
            containers: vec![Container::new("main", "tensorboard"), Container::new("proxy", "envoy")],
            volumes: vec![],
        },
    }
}

fn body(files: usize, opts: &ScenarioOptions, report: &mut ScenarioReport) -> Result<(), Failure> {
    let mut rng = seeded_rng(opts.seed, 2);
    let creds = random_credentials(&mut rng, "tb-writer");
    let stub = StubServer::start(vec![StubBucketConfig::new(BUCKET, creds.clone())], StubOptions::default())
        .map_err(stub_failed)?;
    let cluster = Cluster::start(Store::new(), Arc::new(HttpProber::default()), opts.workers);
    cluster.monitor_namespace(NAMESPACE)?;
    let spec = CosSpec::new(stub.endpoint(), BUCKET, creds.access_key_id.clone(), creds.secret_access_key.clone());
    cluster.provision(Dataset::new(NAMESPACE, DATASET, DatasetSpec::Cos(spec)))?;
    let root = format!("/mnt/datasets/{DATASET}");
    let mut mutated = 0u64;

    // The training job writes event files through its own mount.
    let trainer = cluster.admit(pod_with(NAMESPACE, "trainer", &mount_labels(&[DATASET])))?;
    mutated += 1;
    let written: BTreeMap<String, Vec<u8>> = (0..files)
        .map(|i| (format!("{root}/run-1/events.out.tfevents.{i:04}"), random_bytes(&mut rng, 128, 1024)))
        .collect();
    let trainer_mounts = mount_container(&cluster.store, &trainer, "main")?;
    for (path, bytes) in &written {
        trainer_mounts.write(path, bytes).map_err(Failure::Assertion)?;
    }
    report.count("metadataObjectsWritten", trainer_mounts.writes());

    let deployment = viewer(NAMESPACE);
    let mut reads = 0u64;
    let mut read_all = |pod: &dlf_core::statestore::StoredObject, report: &mut ScenarioReport| -> Result<(), Failure> {
        let mounts = mount_container(&cluster.store, pod, "main")?;
        let listed = mounts.list(&format!("{root}/run-1")).map_err(Failure::Assertion)?;
        let mut seen = BTreeMap::new();
        for path in listed {
            let bytes = mounts.read(&path).map_err(Failure::Assertion)?;
            seen.insert(path, bytes);
        }
        reads += mounts.reads();
        report.check(format!("{} reads every event file", pod.meta.name), seen == written, "");
        Ok(())
    };

    let first = deployment.expand(1);
    for p in first {
        let admitted = cluster.admit(p)?;
        mutated += 1;
        let spec = admitted.as_pod().expect("pod");
        let want = vec![vec![root.clone()]; spec.containers.len()];
        report.check_eq(&format!("{} mounts the dataset in every container", admitted.meta.name), mount_paths(spec), want);
        let claim = spec.volumes.iter().find_map(|v| v.persistent_volume_claim.as_ref());
        report.check_eq(
            &format!("{} volume points at the dataset claim", admitted.meta.name),
            claim.map(|c| c.claim_name.as_str()),
            Some(DATASET),
        );
        read_all(&admitted, report)?;
    }

    // Tear every pod down; the data lives in the bucket, not in the pods.
    let pods = cluster.store.list(Kind::Pod, Some(NAMESPACE), &BTreeMap::new());
    for p in &pods {
        cluster
            .store
            .delete(Kind::Pod, NAMESPACE, &p.meta.name)
            .map_err(|e| Failure::Assertion(e.to_string()))?;
    }
    report.count("podsDeleted", pods.len() as u64);
    report.check_eq(
        "no pods remain",
        cluster.store.list(Kind::Pod, Some(NAMESPACE), &BTreeMap::new()).len(),
        0,
    );

    let again = deployment.expand(2).into_iter().next().expect("replicas > 0");
    let readmitted = cluster.admit(again)?;
    mutated += 1;
    read_all(&readmitted, report)?;

    report.count("podsMutated", mutated);
    report.count("metadataObjectsRead", reads);
    report.count("stubPuts", stub.request_count(BUCKET, Verb::Put));
    report.count("stubGets", stub.request_count(BUCKET, Verb::Get));
    report.check_eq("every write reached the bucket", stub.request_count(BUCKET, Verb::Put), files as u64);
    report.check_eq("every read was served by the bucket", stub.request_count(BUCKET, Verb::Get), reads);
    report.check_eq("reads cover every replica", reads, (files * (REPLICAS + 1)) as u64);
    report.count("originRequests", stub.total_accepted());
    cluster.settle()?;
    Ok(())
}
