//! A notebook processes every image of a bucket, once with explicit
//! downloads (path A) and once through a dataset mounted into its pod
//! (path B).

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use dlf_core::model::{CosSpec, Dataset, DatasetSpec};
use dlf_core::reconciler::HttpProber;
use dlf_core::s3probe::{S3Client, StubBucketConfig, StubOptions, StubServer, Verb};
use dlf_core::statestore::Store;

use super::{harness, random_bytes, random_credentials, seeded_rng, stub_failed, ScenarioOptions};
use crate::cluster::Cluster;
use crate::mount::MountTable;
use crate::workload::{mount_labels, pod_with};
use crate::{Failure, ScenarioReport};

pub const DEFAULT_OBJECTS: usize = 50;
const BUCKET: &str = "notebook-images";
const DATASET: &str = "images";
const NAMESPACE: &str = "notebooks";

/// The user code. It can fetch objects itself or open files; only the
/// former counts as a download call.
struct Notebook {
    client: S3Client,
    download_calls: u64,
}

impl Notebook {
    fn download(&mut self, key: &str) -> Result<Vec<u8>, Failure> {
        self.download_calls += 1;
        self.client
            .get_object(BUCKET, key)
            .map_err(|e| Failure::Assertion(format!("download {key}: {e}")))
    }

    fn open(&self, mounts: &MountTable, path: &str) -> Result<Vec<u8>, Failure> {
        mounts.read(path).map_err(Failure::Assertion)
    }
}

pub fn run(opts: &ScenarioOptions) -> ScenarioReport {
    let n = opts.scale.unwrap_or(DEFAULT_OBJECTS);
    harness("notebook", |report| body(n, opts, report))
}

fn body(n: usize, opts: &ScenarioOptions, report: &mut ScenarioReport) -> Result<(), Failure> {
    let mut rng = seeded_rng(opts.seed, 1);
    let creds = random_credentials(&mut rng, "notebook-user");
    let images: BTreeMap<String, Vec<u8>> = (0..n)
        .map(|i| (format!("img-{i:05}.png"), random_bytes(&mut rng, 64, 512)))
        .collect();
    let mut bucket = StubBucketConfig::new(BUCKET, creds.clone());
    bucket.objects = images.clone();
    let stub = StubServer::start(vec![bucket], StubOptions::default()).map_err(stub_failed)?;
    let gets = || stub.request_count(BUCKET, Verb::Get);
    let client = S3Client::new(&stub.endpoint(), Some(creds.clone()), Duration::from_secs(10))
        .map_err(|e| Failure::Assertion(e.to_string()))?;
    report.count("objects", n as u64);

    // Path A: list, then download every object before processing.
    let mut nb = Notebook { client: client.clone(), download_calls: 0 };
    let before_a = gets();
    let keys = client
        .list_objects(BUCKET, "")
        .map_err(|e| Failure::Assertion(e.to_string()))?;
    let mut fetched_a = BTreeMap::new();
    for key in &keys {
        fetched_a.insert(key.clone(), nb.download(key)?);
    }
    let downloads_a = nb.download_calls;
    let stub_gets_a = gets() - before_a;
    report.count("downloadCallsA", downloads_a);
    report.count("stubGetsA", stub_gets_a);
    report.check_eq("path A downloads every object", downloads_a, n as u64);
    report.check_eq("path A download calls match the stub's GET log", stub_gets_a, downloads_a);
    report.check("path A bytes equal the bucket", fetched_a == images, "");

    // Path B: the same notebook, with the bucket declared as a dataset.
    let cluster = Cluster::start(Store::new(), Arc::new(HttpProber::default()), opts.workers);
    cluster.monitor_namespace(NAMESPACE)?;
    let spec = CosSpec::new(stub.endpoint(), BUCKET, creds.access_key_id.clone(), creds.secret_access_key.clone());
    cluster.provision(Dataset::new(NAMESPACE, DATASET, DatasetSpec::Cos(spec)))?;
    report.check("dataset reached Ready", true, "");

    let pod = cluster.admit(pod_with(NAMESPACE, "notebook-b", &mount_labels(&[DATASET])))?;
    let mounts = crate::mount::mount_container(&cluster.store, &pod, "main")?;
    let mount_path = format!("/mnt/datasets/{DATASET}");
    report.check_eq("pod mounts the dataset at the default path", mounts.mount_paths(), vec![mount_path.as_str()]);

    let nb = Notebook { client, download_calls: 0 };
    let before_b = gets();
    let files = mounts.list(&mount_path).map_err(Failure::Assertion)?;
    let mut fetched_b = BTreeMap::new();
    for path in &files {
        let name = path.rsplit('/').next().unwrap_or_default().to_string();
        fetched_b.insert(name, nb.open(&mounts, path)?);
    }
    let stub_gets_b = gets() - before_b;
    let downloads_b = nb.download_calls;
    report.count("downloadCallsB", downloads_b);
    report.count("mountReadsB", mounts.reads());
    report.count("stubGetsB", stub_gets_b);
    report.count("podsMutated", 1);
    report.check_eq("path B makes no download calls", downloads_b, 0);
    report.check_eq("every GET in path B is a mount read", stub_gets_b, mounts.reads() + downloads_b);
    report.check("path B bytes equal the bucket", fetched_b == images, "");

    report.count("originRequests", stub.total_accepted());
    let per_verb: u64 = stub.counters().values().sum();
    report.check_eq("stub counters add up to accepted requests", per_verb, stub.total_accepted());
    cluster.settle()?;
    Ok(())
}
