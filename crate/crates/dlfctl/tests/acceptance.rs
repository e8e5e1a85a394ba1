//! Acceptance suite. Prints one PASS/FAIL line per criterion and fails if any
//! criterion fails. Every size, seed and tolerance is pinned in the constants
//! below; expected values come from oracles written out in this file.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use dlf_core::admission::{admit, AdmissionConfig, AdmissionDecision, MONITOR_LABEL, MONITOR_VALUE};
use dlf_core::cachemgr::LruIndex;
use dlf_core::model::{
    ArchiveFormat, ArchiveSpec, CosSpec, Dataset, DatasetSpec, Kind, NfsSpec, ObjectMeta, Phase,
};
use dlf_core::reconciler::{
    reconcile, run_controller, Action, ControllerConfig, DatasetKey, StaticProber,
};
use dlf_core::resources::{ConfigMapData, Container, PodSpec, SecretData};
use dlf_core::s3probe::{probe_cos, Credentials, StubBucketConfig, StubOptions, StubServer};
use dlf_core::statestore::{EventType, Payload, Store, StoreError, StoredObject};
use dlfctl::cache::{run_trace, TraceOptions};
use dlfctl::scenario::g1k::{run_mode, ContentionModel, Mode, StepKind};
use dlfctl::scenario::{notebook, ScenarioOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

const SEED: u64 = 0xacce_97ed;

const C1_SPECS: usize = 200;
const C1_MAX_WRITE_PASSES: usize = 3;
const C1_BUDGET: Duration = Duration::from_secs(10);

const C2_DATASETS: usize = 100;
const C2_WORKERS: usize = 4;
const C2_BUDGET: Duration = Duration::from_secs(10);

const C3_RANDOM_IDS: usize = 1000;

const C4_SIZES: [usize; 3] = [1, 50, 500];

const C5_CHUNKS: [usize; 3] = [4, 8, 16];

const C6_MIN_HIT_RATIO: f64 = 0.6;
const C6_REUSE: usize = 3;
const C6_ORIGIN_LATENCY: Duration = Duration::from_millis(4);
const C6_LRU_OPS: usize = 10_000;

const C8_BUDGET: Duration = Duration::from_secs(60);
const C8_CAS_THREADS: u32 = 8;
const C8_CAS_PER_THREAD: u32 = 50;
const C8_REPLAY_OPS: usize = 2000;

const NS: &str = "accept";
const RETRY: Duration = Duration::from_millis(20);
const WAIT: Duration = Duration::from_secs(10);

type Verdict = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- C1 / C2

#[derive(Debug, Clone)]
enum Submitted {
    CosInline { bucket: String, key: String, secret: String, region: Option<String> },
    CosRef { bucket: String, key: String, secret: String },
    Nfs { server: String, share: String },
    Archive { url: String, format: usize },
}

const FORMATS: [ArchiveFormat; 3] = [ArchiveFormat::Raw, ArchiveFormat::Tar, ArchiveFormat::Targz];
const FORMAT_NAMES: [&str; 3] = ["raw", "tar", "targz"];

fn word(rng: &mut ChaCha8Rng, alphabet: &[u8], min: usize, max: usize) -> String {
    let n = rng.gen_range(min..=max);
    (0..n).map(|_| alphabet[rng.gen_range(0..alphabet.len())] as char).collect()
}

const LOWER: &[u8] = b"abcdefghijklmnopqrstuvwxyz";
const LOWER_DIGITS: &[u8] = b"abcdefghijklmnopqrstuvwxyz0123456789";
const TOKEN: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789";

fn random_submission(rng: &mut ChaCha8Rng) -> Submitted {
    let bucket = |rng: &mut ChaCha8Rng| {
        format!("{}{}", word(rng, LOWER, 1, 1), word(rng, LOWER_DIGITS, 2, 20))
    };
    match rng.gen_range(0..4) {
        0 => Submitted::CosInline {
            bucket: bucket(rng),
            key: word(rng, TOKEN, 1, 20),
            secret: word(rng, TOKEN, 1, 40),
            region: rng.gen_bool(0.5).then(|| format!("{}-{}-1", word(rng, LOWER, 2, 2), word(rng, LOWER, 4, 4))),
        },
        1 => Submitted::CosRef {
            bucket: bucket(rng),
            key: word(rng, TOKEN, 1, 20),
            secret: word(rng, TOKEN, 1, 40),
        },
        2 => Submitted::Nfs {
            server: format!("{}.example.test", word(rng, LOWER, 1, 10)),
            share: format!("/{}/{}", word(rng, LOWER, 1, 8), word(rng, LOWER_DIGITS, 1, 8)),
        },
        _ => Submitted::Archive {
            url: format!("https://files.example.test/{}.bin", word(rng, LOWER_DIGITS, 1, 12)),
            format: rng.gen_range(0..3),
        },
    }
}

fn submit(store: &Store, name: &str, s: &Submitted) {
    let spec = match s {
        Submitted::CosInline { bucket, key, secret, region } => DatasetSpec::Cos(CosSpec {
            region: region.clone(),
            ..CosSpec::new("http://s3.example.test", bucket.clone(), key.clone(), secret.clone())
        }),
        Submitted::CosRef { bucket, key, secret } => {
            let data = BTreeMap::from([
                ("accessKeyID".to_string(), key.clone()),
                ("secretAccessKey".to_string(), secret.clone()),
            ]);
            store
                .create(StoredObject::new(
                    ObjectMeta::new(NS, format!("{name}-creds")),
                    Payload::Secret(SecretData { data }),
                ))
                .unwrap();
            DatasetSpec::Cos(CosSpec {
                secret_ref: Some(format!("{name}-creds")),
                ..CosSpec::new("http://s3.example.test", bucket.clone(), "", "")
            })
        }
        Submitted::Nfs { server, share } => DatasetSpec::Nfs(NfsSpec {
            server: server.clone(),
            share: share.clone(),
        }),
        Submitted::Archive { url, format } => DatasetSpec::Archive(ArchiveSpec {
            url: url.clone(),
            format: FORMATS[*format],
        }),
    };
    store.create(Dataset::new(NS, name, spec).into()).unwrap();
}

/// Expected claim class and attributes for a submission.
fn expected_claim(name: &str, s: &Submitted) -> (&'static str, BTreeMap<String, String>) {
    let m = |pairs: &[(&str, &str)]| pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
    match s {
        Submitted::CosInline { bucket, region, .. } => {
            let mut attrs: BTreeMap<String, String> =
                m(&[("endpoint", "http://s3.example.test"), ("bucket", bucket), ("secretName", name)]);
            if let Some(r) = region {
                attrs.insert("region".into(), r.clone());
            }
            ("csi-s3", attrs)
        }
        Submitted::CosRef { bucket, .. } => (
            "csi-s3",
            m(&[("endpoint", "http://s3.example.test"), ("bucket", bucket), ("secretName", name)]),
        ),
        Submitted::Nfs { server, share } => ("csi-nfs", m(&[("server", server), ("share", share)])),
        Submitted::Archive { url, format } => ("csi-h3", m(&[("url", url), ("format", FORMAT_NAMES[*format])])),
    }
}

fn check_converged(store: &Store, name: &str, s: &Submitted) -> Result<(), String> {
    let ds = store.get_dataset(NS, name).map_err(|e| format!("{name}: {e}"))?;
    ensure(ds.status.phase == Phase::Ready, || format!("{name}: phase {:?}", ds.status.phase))?;
    let claim_obj = store.get(Kind::VolumeClaim, NS, name).map_err(|e| format!("{name}: {e}"))?;
    ensure(claim_obj.meta.owner_refs.iter().any(|r| r.uid == ds.meta.uid), || {
        format!("{name}: claim not owned by the dataset")
    })?;
    let claim = claim_obj.as_claim().ok_or("claim payload")?;
    let (class, attrs) = expected_claim(name, s);
    ensure(claim.storage_class_name == class, || format!("{name}: class {}", claim.storage_class_name))?;
    ensure(claim.volume_attributes == attrs, || format!("{name}: attrs {:?}", claim.volume_attributes))?;
    let secret = store.get(Kind::Secret, NS, name);
    match s {
        Submitted::CosInline { key, secret: sk, .. } | Submitted::CosRef { key, secret: sk, .. } => {
            let secret = secret.map_err(|e| format!("{name}: {e}"))?;
            let data = &secret.as_secret().ok_or("secret payload")?.data;
            ensure(data.get("accessKeyID") == Some(key) && data.get("secretAccessKey") == Some(sk), || {
                format!("{name}: secret data differs")
            })?;
        }
        _ => ensure(secret.is_err(), || format!("{name}: unexpected secret"))?,
    }
    Ok(())
}

fn c1() -> Verdict {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let specs: Vec<Submitted> = (0..C1_SPECS).map(|_| random_submission(&mut rng)).collect();
    let names: Vec<String> = (0..C1_SPECS).map(|i| format!("ds-{i:03}")).collect();

    // Route 1: passes invoked directly.
    let store = Store::new();
    let prober = StaticProber::reachable();
    let mut worst = 0;
    for (name, s) in names.iter().zip(&specs) {
        submit(&store, name, s);
        let key = DatasetKey::new(NS, name);
        let mut writes = 0;
        let mut settled = false;
        for pass in 1..=C1_MAX_WRITE_PASSES {
            let action = reconcile(&key, &store, &prober, RETRY).action;
            match action {
                Action::NoChange => settled = true,
                Action::Created | Action::Updated if !settled => writes += 1,
                other => return Err(format!("{name}: pass {pass} gave {other:?}")),
            }
        }
        let seq = store.current_sequence();
        let fourth = reconcile(&key, &store, &prober, RETRY).action;
        ensure(fourth == Action::NoChange, || format!("{name}: fourth pass gave {fourth:?}"))?;
        ensure(store.current_sequence() == seq, || format!("{name}: fourth pass wrote"))?;
        worst = worst.max(writes);
        check_converged(&store, name, s)?;
    }

    // Route 2: the same submissions through the concurrent controller.
    let store2 = Store::new();
    let ctl = run_controller(Arc::clone(&store2), Arc::new(StaticProber::reachable()), ControllerConfig::with_workers(4));
    for (name, s) in names.iter().zip(&specs) {
        submit(&store2, name, s);
    }
    ensure(ctl.wait_idle(WAIT), || "controller did not go idle".into())?;
    ctl.stop();
    let seq = store2.current_sequence();
    for (name, s) in names.iter().zip(&specs) {
        check_converged(&store2, name, s)?;
        let action = reconcile(&DatasetKey::new(NS, name), &store2, &prober, RETRY).action;
        ensure(action == Action::NoChange, || format!("{name}: controller state not a fixed point: {action:?}"))?;
    }
    ensure(store2.current_sequence() == seq, || "controller state was not a fixed point".into())?;

    let elapsed = started.elapsed();
    ensure(elapsed < C1_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{C1_SPECS} specs, at most {worst} writing passes, 4th pass NoChange for {C1_SPECS}/{C1_SPECS}, controller agrees, {elapsed:.2?}"
    ))
}

fn owned_dependents(store: &Store) -> usize {
    store
        .all_objects()
        .iter()
        .filter(|o| matches!(o.kind(), Kind::Secret | Kind::VolumeClaim))
        .filter(|o| o.meta.owner_refs.iter().any(|r| r.kind == Kind::Dataset))
        .count()
}

fn c2() -> Verdict {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 2);
    let specs: Vec<Submitted> = (0..C2_DATASETS).map(|_| random_submission(&mut rng)).collect();
    let cos = specs
        .iter()
        .filter(|s| matches!(s, Submitted::CosInline { .. } | Submitted::CosRef { .. }))
        .count();
    let store = Store::new();
    let ctl = run_controller(
        Arc::clone(&store),
        Arc::new(StaticProber::reachable()),
        ControllerConfig::with_workers(C2_WORKERS),
    );
    for (i, s) in specs.iter().enumerate() {
        submit(&store, &format!("gc-{i}"), s);
    }
    ensure(ctl.wait_idle(WAIT), || "controller did not go idle after creates".into())?;
    let peak = owned_dependents(&store);
    ensure(peak == C2_DATASETS + cos, || format!("{peak} owned dependents, expected {}", C2_DATASETS + cos))?;
    for i in 0..C2_DATASETS {
        store.delete(Kind::Dataset, NS, &format!("gc-{i}")).map_err(|e| e.to_string())?;
    }
    ensure(ctl.wait_idle(WAIT), || "controller did not go idle after deletes".into())?;
    ctl.stop();
    let left = owned_dependents(&store);
    let datasets = store.list(Kind::Dataset, None, &BTreeMap::new()).len();
    ensure(left == 0 && datasets == 0, || format!("{left} owned dependents and {datasets} datasets remain"))?;
    let elapsed = started.elapsed();
    ensure(elapsed < C2_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!("{C2_DATASETS} datasets, {C2_WORKERS} workers, {peak} dependents created, 0 remain, {elapsed:.2?}"))
}

// ---------------------------------------------------------------- C3

fn ready(store: &Store, name: &str, spec: DatasetSpec) {
    let mut ds = Dataset::new(NS, name, spec);
    ds.status.phase = Phase::Ready;
    store.create(ds.into()).unwrap();
}

fn pod_with(labels: &[(&str, &str)]) -> StoredObject {
    let mut meta = ObjectMeta::new(NS, "p");
    meta.labels = labels.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
    StoredObject::new(meta, Payload::Pod(PodSpec::single(Container::new("main", "img"))))
}

enum Want {
    Patch(serde_json::Value),
    Reject(&'static str),
}

fn mount_patch(id: &str, path: &str) -> serde_json::Value {
    json!([
        {"op": "add", "path": "/spec/volumes", "value": [{"name": id, "persistentVolumeClaim": {"claimName": id}}]},
        {"op": "add", "path": "/spec/containers/0/volumeMounts", "value": [{"name": id, "mountPath": path}]},
    ])
}

fn c3() -> Verdict {
    let store = Store::new();
    ready(&store, "my-dataset", DatasetSpec::Nfs(NfsSpec { server: "nfs.test".into(), share: "/s".into() }));
    let monitored = StoredObject::namespace(NS).with_label(MONITOR_LABEL, MONITOR_VALUE);
    let plain_ns = StoredObject::namespace(NS);

    let rows: Vec<(&str, Vec<(&str, &str)>, &StoredObject, Want)> = vec![
        ("no labels", vec![], &monitored, Want::Patch(json!([]))),
        (
            "unmonitored namespace",
            vec![("dataset.0.id", "my-dataset"), ("dataset.0.useas", "mount")],
            &plain_ns,
            Want::Patch(json!([])),
        ),
        (
            "id with useas mount",
            vec![("dataset.0.id", "my-dataset"), ("dataset.0.useas", "mount")],
            &monitored,
            Want::Patch(mount_patch("my-dataset", "/mnt/datasets/my-dataset")),
        ),
        (
            "uses alias",
            vec![("dataset.0.id", "my-dataset"), ("dataset.0.uses", "mount")],
            &monitored,
            Want::Patch(mount_patch("my-dataset", "/mnt/datasets/my-dataset")),
        ),
        (
            "mountpath override",
            vec![("dataset.0.id", "my-dataset"), ("dataset.0.useas", "mount"), ("dataset.0.mountpath", "/data/in")],
            &monitored,
            Want::Patch(mount_patch("my-dataset", "/data/in")),
        ),
        (
            "useas configmap",
            vec![("dataset.0.id", "my-dataset"), ("dataset.0.useas", "configmap")],
            &monitored,
            Want::Patch(json!([
                {"op": "add", "path": "/spec/containers/0/env", "value": [{"name": "MY_DATASET_SERVER", "value": "nfs.test"}]},
                {"op": "add", "path": "/spec/containers/0/env/-", "value": {"name": "MY_DATASET_SHARE", "value": "/s"}},
            ])),
        ),
        // Without any well-formed pair the gate stays closed.
        ("missing id, no other pair", vec![("dataset.0.useas", "mount")], &monitored, Want::Patch(json!([]))),
        (
            "missing id beside a valid pair",
            vec![("dataset.0.id", "my-dataset"), ("dataset.0.useas", "mount"), ("dataset.1.useas", "mount")],
            &monitored,
            Want::Reject("malformed dataset labels: dataset.1 has no id"),
        ),
        (
            "id without useas beside a valid pair",
            vec![("dataset.0.id", "my-dataset"), ("dataset.0.useas", "mount"), ("dataset.1.id", "my-dataset")],
            &monitored,
            Want::Reject("malformed dataset labels: dataset.1.id has no useas"),
        ),
        (
            "unknown useas",
            vec![("dataset.0.id", "my-dataset"), ("dataset.0.useas", "copy")],
            &monitored,
            Want::Reject("malformed dataset labels: dataset.0.useas has unknown value `copy`"),
        ),
        (
            "duplicate mount",
            vec![
                ("dataset.0.id", "my-dataset"),
                ("dataset.0.useas", "mount"),
                ("dataset.1.id", "my-dataset"),
                ("dataset.1.useas", "mount"),
            ],
            &monitored,
            Want::Reject("malformed dataset labels: dataset my-dataset is mounted twice"),
        ),
        (
            "unknown dataset",
            vec![("dataset.0.id", "absent"), ("dataset.0.useas", "mount")],
            &monitored,
            Want::Reject("dataset not found: absent"),
        ),
    ];
    let total_rows = rows.len();
    for (what, labels, ns, want) in rows {
        let got = admit(&pod_with(&labels), ns, &store, AdmissionConfig::default());
        match (want, got) {
            (Want::Patch(w), AdmissionDecision::Allowed(p)) => {
                let p = serde_json::to_value(&p).map_err(|e| e.to_string())?;
                ensure(p == w, || format!("{what}: patch {p}"))?;
            }
            (Want::Reject(w), AdmissionDecision::Rejected(r)) => {
                ensure(r == w, || format!("{what}: rejected with `{r}`"))?;
            }
            (_, other) => return Err(format!("{what}: unexpected {other:?}")),
        }
    }

    // Default mount path law over random ids, through full admission.
    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 3);
    let mut ids = BTreeSet::new();
    while ids.len() < C3_RANDOM_IDS {
        let mid = word(&mut rng, b"abcdefghijklmnopqrstuvwxyz0123456789-", 0, 40);
        let id = format!("{}{mid}{}", word(&mut rng, LOWER, 1, 1), word(&mut rng, LOWER_DIGITS, 0, 1));
        if id.ends_with('-') {
            continue;
        }
        ids.insert(id);
    }
    let store = Store::new();
    for id in &ids {
        ready(&store, id, DatasetSpec::Nfs(NfsSpec { server: "nfs.test".into(), share: "/s".into() }));
    }
    for id in &ids {
        let want = format!("/mnt/datasets/{id}");
        let got = admit(&pod_with(&[("dataset.0.id", id), ("dataset.0.useas", "mount")]), &monitored, &store, AdmissionConfig::default());
        let AdmissionDecision::Allowed(p) = got else {
            return Err(format!("{id}: {got:?}"));
        };
        let p = serde_json::to_value(&p).map_err(|e| e.to_string())?;
        ensure(p == mount_patch(id, &want), || format!("{id}: patch {p}"))?;
    }
    Ok(format!("{total_rows}/{total_rows} convention rows exact, {C3_RANDOM_IDS}/{C3_RANDOM_IDS} random ids mount at /mnt/datasets/<id>"))
}

// ---------------------------------------------------------------- C4

fn c4() -> Verdict {
    let mut parts = Vec::new();
    for n in C4_SIZES {
        let opts = ScenarioOptions { seed: SEED, ..ScenarioOptions::with_scale(n) };
        let report = notebook::run(&opts);
        let a = report.counter("downloadCallsA");
        let b = report.counter("downloadCallsB");
        ensure(report.passed(), || format!("N={n}: failed steps {:?}", report.failed_steps()))?;
        ensure(a == Some(n as u64) && b == Some(0), || format!("N={n}: downloadCallsA={a:?} downloadCallsB={b:?}"))?;
        parts.push(format!("N={n}: A={n} B=0"));
    }
    Ok(parts.join(", "))
}

// ---------------------------------------------------------------- C5

/// Closed form for the staged layout: with sorted ready times a_1..a_K and a
/// FIFO volume taking `w` per write, the last write lands at
/// max_j (a_j + (K - j + 1) w); uploads then run back to back.
fn before_oracle(m: &ContentionModel, compute: &[Duration]) -> Duration {
    let k = compute.len() as u32;
    let mut ready: Vec<Duration> = compute
        .iter()
        .map(|c| m.fetch + m.sidecar_startup + m.read_inputs + *c)
        .collect();
    ready.sort();
    let last_write = ready
        .iter()
        .enumerate()
        .map(|(j, a)| *a + m.staging_write * (k - j as u32))
        .max()
        .unwrap_or_default();
    last_write + m.upload * k
}

fn after_oracle(m: &ContentionModel, compute: &[Duration]) -> Duration {
    let slowest = compute.iter().copied().max().unwrap_or_default();
    m.read_inputs + slowest + m.direct_write
}

fn c5() -> Verdict {
    let mut parts = Vec::new();
    for k in C5_CHUNKS {
        let opts = ScenarioOptions { seed: SEED, ..ScenarioOptions::with_scale(k) };
        let before = run_mode(Mode::Before, &opts);
        let after = run_mode(Mode::After, &opts);
        for run in [&before, &after] {
            ensure(run.report.passed(), || format!("K={k} {:?}: {:?}", run.mode, run.report.failed_steps()))?;
        }
        let m = &opts.contention;
        ensure(before.count(StepKind::Sidecar) == k && before.count(StepKind::Uploader) >= 1 && before.staging_writes >= k as u64, || {
            format!("K={k}: staged layout lacks its sidecars, uploader or staging writes")
        })?;
        ensure(after.count(StepKind::Uploader) == 0 && after.count(StepKind::Sidecar) == 0, || {
            format!("K={k}: after layout has uploader/sidecar steps")
        })?;
        ensure(after.report.counter("uploaderSteps") == Some(0) && after.report.counter("sidecarSteps") == Some(0), || {
            format!("K={k}: report counters disagree with steps")
        })?;
        ensure(after.staging_writes == 0 && after.report.counter("stagingWrites") == Some(0), || {
            format!("K={k}: {} staging writes after", after.staging_writes)
        })?;
        ensure(before.simulated == before_oracle(m, &before.compute), || {
            format!("K={k}: before {:?} vs oracle {:?}", before.simulated, before_oracle(m, &before.compute))
        })?;
        ensure(after.simulated == after_oracle(m, &after.compute), || {
            format!("K={k}: after {:?} vs oracle {:?}", after.simulated, after_oracle(m, &after.compute))
        })?;
        ensure(after.simulated < before.simulated, || {
            format!("K={k}: after {:?} not below before {:?}", after.simulated, before.simulated)
        })?;
        ensure(after.outputs == before.outputs && after.outputs.len() == k, || format!("K={k}: outputs differ"))?;
        parts.push(format!(
            "K={k}: {}ms<{}ms",
            after.simulated.as_millis(),
            before.simulated.as_millis()
        ));
    }
    Ok(format!("0 uploader/sidecar steps, 0 staging writes; {}", parts.join(", ")))
}

// ---------------------------------------------------------------- C6

/// Reference LRU keyed on a logical clock: the victim is the smallest stamp.
struct StampLru {
    capacity: u64,
    clock: u64,
    entries: HashMap<String, (u64, u64)>,
}

impl StampLru {
    fn used(&self) -> u64 {
        self.entries.values().map(|(size, _)| size).sum()
    }

    fn tick(&mut self) -> u64 {
        self.clock += 1;
        self.clock
    }

    fn touch(&mut self, key: &str) -> bool {
        let now = self.tick();
        match self.entries.get_mut(key) {
            Some(e) => {
                e.1 = now;
                true
            }
            None => false,
        }
    }

    fn remove(&mut self, key: &str) -> bool {
        self.entries.remove(key).is_some()
    }

    fn insert(&mut self, key: &str, size: u64) -> Option<Vec<String>> {
        if size > self.capacity {
            return None;
        }
        self.entries.remove(key);
        let mut evicted = Vec::new();
        while self.used() + size > self.capacity {
            let victim = self.entries.iter().min_by_key(|(_, (_, stamp))| *stamp).map(|(k, _)| k.clone())?;
            self.entries.remove(&victim);
            evicted.push(victim);
        }
        let now = self.tick();
        self.entries.insert(key.to_string(), (size, now));
        Some(evicted)
    }

    fn order(&self) -> Vec<String> {
        let mut v: Vec<(&String, u64)> = self.entries.iter().map(|(k, (_, s))| (k, *s)).collect();
        v.sort_by_key(|(_, s)| *s);
        v.into_iter().map(|(k, _)| k.clone()).collect()
    }
}

fn c6() -> Verdict {
    let opts = TraceOptions {
        reuse: C6_REUSE,
        origin_latency: C6_ORIGIN_LATENCY,
        seed: SEED,
        ..TraceOptions::default()
    };
    let run = run_trace(&opts).map_err(|e| e.to_string())?;
    let reduction = run.origin_gets_direct - run.origin_gets_cached;
    ensure(run.hit_ratio >= C6_MIN_HIT_RATIO, || format!("hit ratio {:.3}", run.hit_ratio))?;
    ensure(reduction == run.stats.hits, || format!("origin GETs fell by {reduction}, hits {}", run.stats.hits))?;
    ensure(run.fidelity_failures == 0, || format!("{} fidelity failures", run.fidelity_failures))?;
    ensure(run.capacity_violations == 0 && run.peak_cached_bytes <= run.capacity_bytes, || {
        format!("capacity exceeded: peak {} of {}", run.peak_cached_bytes, run.capacity_bytes)
    })?;
    ensure(run.reads == (opts.objects * opts.reuse) as u64, || format!("{} reads", run.reads))?;

    // Under eviction pressure the identities must still hold.
    let tight = run_trace(&TraceOptions { capacity_bytes: Some(6000), seed: SEED ^ 6, ..opts.clone() })
        .map_err(|e| e.to_string())?;
    ensure(tight.violations().is_empty(), || format!("tight capacity: {:?}", tight.violations()))?;
    ensure(tight.stats.evictions > 0, || "tight capacity run never evicted".into())?;

    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 66);
    let capacity = 100;
    let mut lru = LruIndex::new(capacity);
    let mut reference = StampLru { capacity, clock: 0, entries: HashMap::new() };
    for step in 0..C6_LRU_OPS {
        let key = format!("k{}", rng.gen_range(0..24));
        let agree = match rng.gen_range(0..10) {
            0..=4 => lru.touch(&key) == reference.touch(&key),
            5..=8 => {
                let size = rng.gen_range(1..=40) + if rng.gen_ratio(1, 50) { 100 } else { 0 };
                lru.insert(&key, size) == reference.insert(&key, size)
            }
            _ => lru.remove(&key) == reference.remove(&key),
        };
        ensure(agree, || format!("LRU diverged at op {step}"))?;
        ensure(lru.used() == reference.used() && lru.used() <= capacity, || format!("LRU size off at op {step}"))?;
        ensure(lru.keys_by_recency() == reference.order(), || format!("LRU order off at op {step}"))?;
    }
    Ok(format!(
        "hit ratio {:.3}, origin GETs {}->{} (-{} = hits), fidelity {}/{}, peak {}/{} bytes, LRU agrees on {C6_LRU_OPS} ops",
        run.hit_ratio,
        run.origin_gets_direct,
        run.origin_gets_cached,
        reduction,
        run.reads,
        run.reads,
        run.peak_cached_bytes,
        run.capacity_bytes
    ))
}

// ---------------------------------------------------------------- C7

fn c7() -> Verdict {
    let right = Credentials::new("AKIDACCEPT", "accept-secret");
    let wrong = Credentials::new("AKIDACCEPT", "wrong-secret");
    let stub = StubServer::start(vec![StubBucketConfig::new("present", right.clone())], StubOptions::default())
        .map_err(|e| e.to_string())?;
    let live = stub.endpoint();
    let dead = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").map_err(|e| e.to_string())?;
        format!("http://{}", l.local_addr().map_err(|e| e.to_string())?)
    };
    let mut cells = 0;
    let mut outcomes = BTreeSet::new();
    for up in [true, false] {
        for good in [true, false] {
            for present in [true, false] {
                let r = probe_cos(
                    if up { &live } else { &dead },
                    if present { "present" } else { "absent" },
                    if good { &right } else { &wrong },
                    Duration::from_secs(2),
                )
                .map_err(|e| e.to_string())?;
                let want = (up, up && good, up && good && present);
                let got = (r.reachable, r.authorized, r.bucket_exists);
                ensure(got == want && r.is_consistent(), || {
                    format!("up={up} creds={good} bucket={present}: {r:?}")
                })?;
                outcomes.insert(got);
                cells += 1;
            }
        }
    }
    Ok(format!("{cells}/8 cells match, {} distinct consistent outcomes", outcomes.len()))
}

// ---------------------------------------------------------------- C8

fn config_map(name: &str, value: u32) -> StoredObject {
    let data = BTreeMap::from([("v".to_string(), value.to_string())]);
    StoredObject::new(ObjectMeta::new("ns", name), Payload::ConfigMap(ConfigMapData { data }))
}

fn value_of(obj: &StoredObject) -> u32 {
    match &obj.payload {
        Payload::ConfigMap(c) => c.data["v"].parse().unwrap_or(u32::MAX),
        _ => u32::MAX,
    }
}

fn cas_linearizability() -> Result<(), String> {
    let store = Store::new();
    store.create(config_map("ctr", 0)).map_err(|e| e.to_string())?;
    let mut watch = store.watch(Some(Kind::ConfigMap), None, 0).map_err(|e| e.to_string())?;
    let handles: Vec<_> = (0..C8_CAS_THREADS)
        .map(|_| {
            let store = Arc::clone(&store);
            thread::spawn(move || {
                for _ in 0..C8_CAS_PER_THREAD {
                    loop {
                        let cur = store.get(Kind::ConfigMap, "ns", "ctr").unwrap();
                        match store.update(config_map("ctr", value_of(&cur) + 1), cur.meta.resource_version) {
                            Ok(_) => break,
                            Err(StoreError::Conflict { .. }) => continue,
                            Err(e) => panic!("{e}"),
                        }
                    }
                }
            })
        })
        .collect();
    for h in handles {
        h.join().map_err(|_| "CAS thread panicked".to_string())?;
    }
    let total = C8_CAS_THREADS * C8_CAS_PER_THREAD;
    let events = watch.drain().map_err(|e| e.to_string())?;
    ensure(events.len() as u32 == total + 1, || format!("{} events for {total} increments", events.len()))?;
    for (i, ev) in events.iter().enumerate() {
        ensure(value_of(&ev.object) == i as u32 && ev.object.meta.resource_version == i as u64 + 1, || {
            format!("event {i} out of sequence")
        })?;
    }
    Ok(())
}

/// Folding the full watch log must rebuild the live store exactly.
fn watch_replay() -> Result<(), String> {
    let store = Store::new();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 8);
    for i in 0..C8_REPLAY_OPS {
        let name = format!("o{}", rng.gen_range(0..12));
        match store.get(Kind::ConfigMap, "ns", &name) {
            Ok(_) if rng.gen_bool(0.3) => {
                store.delete(Kind::ConfigMap, "ns", &name).map_err(|e| e.to_string())?;
            }
            Ok(cur) => {
                store
                    .update(config_map(&name, i as u32), cur.meta.resource_version)
                    .map_err(|e| e.to_string())?;
            }
            Err(_) => {
                store.create(config_map(&name, i as u32)).map_err(|e| e.to_string())?;
            }
        }
    }
    let mut watch = store.watch(None, None, 0).map_err(|e| e.to_string())?;
    let events = watch.drain().map_err(|e| e.to_string())?;
    ensure(events.len() == C8_REPLAY_OPS, || format!("{} events for {C8_REPLAY_OPS} writes", events.len()))?;
    let mut folded: BTreeMap<String, StoredObject> = BTreeMap::new();
    for (i, ev) in events.iter().enumerate() {
        ensure(ev.sequence == i as u64 + 1, || format!("gap at event {i}"))?;
        let name = ev.object.meta.name.clone();
        match ev.event_type {
            EventType::Added | EventType::Modified => {
                folded.insert(name, ev.object.clone());
            }
            EventType::Deleted => {
                folded.remove(&name);
            }
        }
    }
    let live: BTreeMap<String, StoredObject> = store
        .list(Kind::ConfigMap, None, &BTreeMap::new())
        .into_iter()
        .map(|o| (o.meta.name.clone(), o))
        .collect();
    ensure(folded == live, || "replayed log differs from the live store".into())
}

fn c8(started: Instant, earlier_passed: bool) -> Verdict {
    cas_linearizability().map_err(|e| format!("linearizability: {e}"))?;
    watch_replay().map_err(|e| format!("watch replay: {e}"))?;
    let elapsed = started.elapsed();
    ensure(earlier_passed, || "an earlier criterion failed".into())?;
    ensure(elapsed < C8_BUDGET, || format!("suite took {elapsed:?}"))?;
    Ok(format!(
        "C1-C7 pass, {C8_CAS_THREADS}x{C8_CAS_PER_THREAD} CAS linearizable, {C8_REPLAY_OPS}-write watch replay exact, {elapsed:.2?} total on loopback"
    ))
}

// ---------------------------------------------------------------- driver

fn run(f: impl FnOnce() -> Verdict) -> Verdict {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    })
}

#[test]
fn acceptance() {
    let started = Instant::now();
    let criteria: [(&str, fn() -> Verdict); 7] = [
        ("C1 reconciler convergence and idempotence", c1),
        ("C2 garbage-collection soundness", c2),
        ("C3 admission convention conformance", c3),
        ("C4 download elimination", c4),
        ("C5 pipeline simplification", c5),
        ("C6 cache correctness and effect", c6),
        ("C7 probe truth table", c7),
    ];
    let mut lines = Vec::new();
    let mut all = true;
    for (name, f) in criteria {
        let verdict = run(f);
        all &= verdict.is_ok();
        lines.push((name, verdict));
    }
    let c8_verdict = run(|| c8(started, all));
    all &= c8_verdict.is_ok();
    lines.push(("C8 end-to-end suite", c8_verdict));

    for (name, verdict) in &lines {
        match verdict {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => println!("FAIL {name}: {why}"),
        }
    }
    assert!(all, "acceptance criteria failed");
}
