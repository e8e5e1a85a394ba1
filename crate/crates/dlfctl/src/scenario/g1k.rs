//! Scatter pipeline over K genome chunks, run in two layouts.
//!
//! `Before`: two fetch steps copy the reference and the query list onto a
//! shared staging volume; each worker gets its chunk through a sidecar and
//! writes its result back to staging; an uploader step then pushes every
//! result to the output bucket.
//!
//! `After`: the four locations are datasets. Each worker pod gets them
//! mounted by admission, reads its inputs from the mounts and writes its
//! result straight into the output dataset.
//!
//! Data really moves through the stub in both layouts. Durations come from
//! [`ContentionModel`], not from the wall clock: staging writes hold the
//! shared volume exclusively, everything else runs in parallel.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::Rng;

use dlf_core::model::{ArchiveFormat, ArchiveSpec, CosSpec, Dataset, DatasetSpec};
use dlf_core::reconciler::HttpProber;
use dlf_core::s3probe::{Credentials, S3Client, StubBucketConfig, StubOptions, StubServer, Verb};
use dlf_core::statestore::Store;

use super::{harness, random_bytes, random_credentials, seeded_rng, stub_failed, ScenarioOptions};
use crate::cluster::Cluster;
use crate::mount::mount_container;
use crate::workload::{mount_labels, pod_with};
use crate::{Failure, ScenarioReport};

pub const DEFAULT_CHUNKS: usize = 8;
const NAMESPACE: &str = "g1k";
const REFERENCE: &str = "g1k-reference";
const QUERIES: &str = "g1k-queries";
const GENOMES: &str = "g1k-genomes";
const OUTPUT: &str = "g1k-output";

/// Cost model for one pipeline run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContentionModel {
    /// One input fetch step. The two fetch steps run side by side.
    pub fetch: Duration,
    /// Sidecar start-up before a worker can reach its chunk.
    pub sidecar_startup: Duration,
    /// Reading a worker's inputs, the same in both layouts.
    pub read_inputs: Duration,
    /// Mean compute time per chunk.
    pub compute: Duration,
    /// Compute times vary uniformly by this fraction around the mean.
    pub compute_jitter: f64,
    /// Exclusive hold of the shared staging volume per result write.
    pub staging_write: Duration,
    /// A worker writing its result to its own output path.
    pub direct_write: Duration,
    /// Uploader cost per result, one result at a time.
    pub upload: Duration,
}

impl Default for ContentionModel {
    fn default() -> Self {
        ContentionModel {
            fetch: Duration::from_millis(30),
            sidecar_startup: Duration::from_millis(20),
            read_inputs: Duration::from_millis(10),
            compute: Duration::from_millis(100),
            compute_jitter: 0.2,
            staging_write: Duration::from_millis(40),
            direct_write: Duration::from_millis(15),
            upload: Duration::from_millis(25),
        }
    }
}

impl ContentionModel {
    /// Seeded per-chunk compute times.
    pub fn compute_times(&self, chunks: usize, seed: u64) -> Vec<Duration> {
        let mut r = seeded_rng(seed, 3);
        (0..chunks)
            .map(|_| {
                let f = if self.compute_jitter > 0.0 {
                    1.0 + r.gen_range(-self.compute_jitter..=self.compute_jitter)
                } else {
                    1.0
                };
                self.compute.mul_f64(f.max(0.0))
            })
            .collect()
    }

    /// Staging writes are served one at a time in the order workers become
    /// ready; the uploader starts once the last one lands.
    pub fn before_duration(&self, compute: &[Duration]) -> Duration {
        let start = self.fetch + self.sidecar_startup + self.read_inputs;
        let mut ready: Vec<Duration> = compute.iter().map(|c| start + *c).collect();
        ready.sort();
        let mut volume_free = Duration::ZERO;
        for r in ready {
            volume_free = volume_free.max(r) + self.staging_write;
        }
        volume_free + self.upload * compute.len() as u32
    }

    pub fn after_duration(&self, compute: &[Duration]) -> Duration {
        compute
            .iter()
            .map(|c| self.read_inputs + *c + self.direct_write)
            .max()
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Before,
    After,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Before => "before",
            Mode::After => "after",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepKind {
    Fetch,
    Worker,
    Sidecar,
    Uploader,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PipelineStep {
    pub name: String,
    pub kind: StepKind,
}

/// Result of one layout.
#[derive(Debug, Clone)]
pub struct ModeRun {
    pub mode: Mode,
    pub steps: Vec<PipelineStep>,
    pub staging_writes: u64,
    pub compute: Vec<Duration>,
    pub simulated: Duration,
    /// Output bucket content after the run.
    pub outputs: BTreeMap<String, Vec<u8>>,
    pub output_puts: u64,
    pub report: ScenarioReport,
}

impl ModeRun {
    pub fn count(&self, kind: StepKind) -> usize {
        self.steps.iter().filter(|s| s.kind == kind).count()
    }
}

/// Shared read-write-many volume. Writers hold it exclusively.
#[derive(Default)]
struct StagingVolume {
    files: Mutex<BTreeMap<String, Vec<u8>>>,
    writes: AtomicU64,
}

impl StagingVolume {
    fn write(&self, path: &str, bytes: Vec<u8>) {
        let mut files = self.files.lock().unwrap_or_else(|e| e.into_inner());
        self.writes.fetch_add(1, Ordering::SeqCst);
        files.insert(path.to_string(), bytes);
    }

    fn read(&self, path: &str) -> Result<Vec<u8>, Failure> {
        self.files
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .get(path)
            .cloned()
            .ok_or_else(|| Failure::Assertion(format!("staging: {path} missing")))
    }

    fn list(&self, prefix: &str) -> Vec<String> {
        let files = self.files.lock().unwrap_or_else(|e| e.into_inner());
        files.keys().filter(|k| k.starts_with(prefix)).cloned().collect()
    }
}

/// Toy variant caller: positions where the chunk differs from the reference,
/// plus a checksum, as one text line.
pub fn call_variants(name: &str, reference: &[u8], chunk: &[u8]) -> Vec<u8> {
    let mut variants = 0u64;
    let mut digest: u64 = 0xcbf2_9ce4_8422_2325;
    for (i, b) in chunk.iter().enumerate() {
        if reference.is_empty() || reference[i % reference.len()] != *b {
            variants += 1;
            digest = (digest ^ i as u64).wrapping_mul(0x0100_0000_01b3);
        }
    }
    format!("{name}\tvariants={variants}\tdigest={digest:016x}\n").into_bytes()
}

struct Inputs {
    reference: Vec<u8>,
    chunks: BTreeMap<String, Vec<u8>>,
    queries: Vec<u8>,
    creds: Credentials,
}

fn inputs(k: usize, seed: u64) -> Inputs {
    let mut r = seeded_rng(seed, 4);
    let reference = random_bytes(&mut r, 4096, 4096);
    let chunks: BTreeMap<String, Vec<u8>> = (0..k)
        .map(|i| (format!("HG{i:05}.bam"), random_bytes(&mut r, 1024, 2048)))
        .collect();
    let queries = chunks.keys().map(|n| format!("{n}\n")).collect::<String>().into_bytes();
    Inputs {
        reference,
        chunks,
        queries,
        creds: random_credentials(&mut r, "g1k"),
    }
}

fn start_stub(inp: &Inputs) -> Result<StubServer, Failure> {
    let c = &inp.creds;
    let mut genomes = StubBucketConfig::new(GENOMES, c.clone());
    genomes.objects = inp.chunks.clone();
    StubServer::start(
        vec![
            StubBucketConfig::new(REFERENCE, Credentials::new("public", "public"))
                .with_object("reference.fa", inp.reference.clone())
                .public(),
            StubBucketConfig::new(QUERIES, c.clone()).with_object("queries.txt", inp.queries.clone()),
            genomes,
            StubBucketConfig::new(OUTPUT, c.clone()),
        ],
        StubOptions::default(),
    )
    .map_err(stub_failed)
}

fn s3(stub: &StubServer, creds: &Credentials) -> Result<S3Client, Failure> {
    S3Client::new(&stub.endpoint(), Some(creds.clone()), Duration::from_secs(10))
        .map_err(|e| Failure::Assertion(e.to_string()))
}

fn query_for(queries: &[u8], index: usize) -> Result<String, Failure> {
    String::from_utf8_lossy(queries)
        .lines()
        .nth(index)
        .map(str::to_string)
        .ok_or_else(|| Failure::Assertion(format!("query list has no entry {index}")))
}

fn assertion<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Assertion(e.to_string())
}

fn run_before(inp: &Inputs, stub: &StubServer, steps: &mut Vec<PipelineStep>) -> Result<u64, Failure> {
    let staging = StagingVolume::default();
    let client = s3(stub, &inp.creds)?;

    steps.push(PipelineStep { name: "fetch-reference".into(), kind: StepKind::Fetch });
    let url = format!("{}/{REFERENCE}/reference.fa", stub.endpoint());
    let mut reference = Vec::new();
    std::io::Read::read_to_end(&mut ureq::get(&url).call().map_err(assertion)?.into_reader(), &mut reference)
        .map_err(assertion)?;
    staging.write("reference.fa", reference);

    steps.push(PipelineStep { name: "fetch-queries".into(), kind: StepKind::Fetch });
    staging.write("queries.txt", client.get_object(QUERIES, "queries.txt").map_err(assertion)?);

    let k = inp.chunks.len();
    for i in 0..k {
        steps.push(PipelineStep { name: format!("call-variants-{i}"), kind: StepKind::Worker });
        steps.push(PipelineStep { name: format!("genome-sidecar-{i}"), kind: StepKind::Sidecar });
    }
    std::thread::scope(|s| -> Result<(), Failure> {
        let handles: Vec<_> = (0..k)
            .map(|i| {
                let (staging, client) = (&staging, client.clone());
                s.spawn(move || -> Result<(), Failure> {
                    let name = query_for(&staging.read("queries.txt")?, i)?;
                    // The sidecar is the only path to the genome store.
                    let chunk = client.get_object(GENOMES, &name).map_err(assertion)?;
                    let out = call_variants(&name, &staging.read("reference.fa")?, &chunk);
                    staging.write(&format!("results/{name}.vcf"), out);
                    Ok(())
                })
            })
            .collect();
        for h in handles {
            h.join().map_err(|_| Failure::Assertion("worker panicked".into()))??;
        }
        Ok(())
    })?;

    steps.push(PipelineStep { name: "upload-results".into(), kind: StepKind::Uploader });
    for path in staging.list("results/") {
        let key = path.trim_start_matches("results/");
        client.put_object(OUTPUT, key, &staging.read(&path)?).map_err(assertion)?;
    }
    Ok(staging.writes.load(Ordering::SeqCst))
}

fn run_after(inp: &Inputs, stub: &StubServer, opts: &ScenarioOptions, steps: &mut Vec<PipelineStep>) -> Result<u64, Failure> {
    let cluster = Cluster::start(Store::new(), Arc::new(HttpProber::default()), opts.workers);
    cluster.monitor_namespace(NAMESPACE)?;
    let c = &inp.creds;
    let cos = |bucket: &str| {
        DatasetSpec::Cos(CosSpec::new(stub.endpoint(), bucket, c.access_key_id.clone(), c.secret_access_key.clone()))
    };
    let reference = DatasetSpec::Archive(ArchiveSpec {
        url: format!("{}/{REFERENCE}/reference.fa", stub.endpoint()),
        format: ArchiveFormat::Raw,
    });
    for (name, spec) in [(REFERENCE, reference), (QUERIES, cos(QUERIES)), (GENOMES, cos(GENOMES)), (OUTPUT, cos(OUTPUT))] {
        cluster.provision(Dataset::new(NAMESPACE, name, spec))?;
    }

    let k = inp.chunks.len();
    let labels = mount_labels(&[REFERENCE, QUERIES, GENOMES, OUTPUT]);
    let mut pods = Vec::new();
    for i in 0..k {
        steps.push(PipelineStep { name: format!("call-variants-{i}"), kind: StepKind::Worker });
        pods.push(cluster.admit(pod_with(NAMESPACE, &format!("call-variants-{i}"), &labels))?);
    }
    let root = "/mnt/datasets";
    std::thread::scope(|s| -> Result<(), Failure> {
        let handles: Vec<_> = pods
            .iter()
            .enumerate()
            .map(|(i, pod)| {
                let store = &cluster.store;
                s.spawn(move || -> Result<(), Failure> {
                    let m = mount_container(store, pod, "main")?;
                    let name = query_for(&m.read(&format!("{root}/{QUERIES}/queries.txt")).map_err(Failure::Assertion)?, i)?;
                    let reference = m.read(&format!("{root}/{REFERENCE}/reference.fa")).map_err(Failure::Assertion)?;
                    let chunk = m.read(&format!("{root}/{GENOMES}/{name}")).map_err(Failure::Assertion)?;
                    let out = call_variants(&name, &reference, &chunk);
                    m.write(&format!("{root}/{OUTPUT}/{name}.vcf"), &out).map_err(Failure::Assertion)
                })
            })
            .collect();
        for h in handles {
            h.join().map_err(|_| Failure::Assertion("worker panicked".into()))??;
        }
        Ok(())
    })?;
    cluster.settle()?;
    Ok(0)
}

/// Runs one layout end to end.
pub fn run_mode(mode: Mode, opts: &ScenarioOptions) -> ModeRun {
    let k = opts.scale.unwrap_or(DEFAULT_CHUNKS);
    let inp = inputs(k, opts.seed);
    let compute = opts.contention.compute_times(k, opts.seed);
    let mut steps = Vec::new();
    let mut staging_writes = 0;
    let mut outputs = BTreeMap::new();
    let mut output_puts = 0;
    let report = harness(&format!("g1k-{}", mode.as_str()), |report| {
        let stub = start_stub(&inp)?;
        staging_writes = match mode {
            Mode::Before => run_before(&inp, &stub, &mut steps)?,
            Mode::After => run_after(&inp, &stub, opts, &mut steps)?,
        };
        output_puts = stub.request_count(OUTPUT, Verb::Put);
        for key in stub.object_keys(OUTPUT) {
            let bytes = stub.peek(OUTPUT, &key).unwrap_or_default();
            outputs.insert(key, bytes);
        }
        let want: BTreeMap<String, Vec<u8>> = inp
            .chunks
            .iter()
            .map(|(n, c)| (format!("{n}.vcf"), call_variants(n, &inp.reference, c)))
            .collect();
        report.check_eq("one result per chunk reached the output bucket", output_puts, k as u64);
        report.check("results equal the reference computation", outputs == want, "");
        report.simulated_duration = match mode {
            Mode::Before => opts.contention.before_duration(&compute),
            Mode::After => opts.contention.after_duration(&compute),
        };
        Ok(())
    });
    let mut run = ModeRun {
        mode,
        steps,
        staging_writes,
        compute,
        simulated: report.simulated_duration,
        outputs,
        output_puts,
        report,
    };
    let counters = [
        ("chunks", k as u64),
        ("pipelineSteps", run.steps.len() as u64),
        ("workerSteps", run.count(StepKind::Worker) as u64),
        ("sidecarSteps", run.count(StepKind::Sidecar) as u64),
        ("uploaderSteps", run.count(StepKind::Uploader) as u64),
        ("fetchSteps", run.count(StepKind::Fetch) as u64),
        ("stagingWrites", run.staging_writes),
        ("outputPuts", run.output_puts),
    ];
    for (name, v) in counters {
        run.report.count(name, v);
    }
    run
}

/// Both layouts with the same inputs, compared.
pub fn run(opts: &ScenarioOptions) -> ScenarioReport {
    let before = run_mode(Mode::Before, opts);
    let after = run_mode(Mode::After, opts);
    let mut report = ScenarioReport::new("g1k");
    for run in [&before, &after] {
        let prefix = run.mode.as_str();
        for (name, v) in &run.report.counters {
            report.count(&format!("{prefix}.{name}"), *v);
        }
        report.count(&format!("{prefix}.simulatedMs"), run.simulated.as_millis() as u64);
        for s in run.report.steps() {
            report.check(format!("{prefix}: {}", s.description), s.passed, s.detail.clone());
        }
    }
    report.check_eq("after: no uploader steps", after.count(StepKind::Uploader), 0);
    report.check_eq("after: no sidecar steps", after.count(StepKind::Sidecar), 0);
    report.check_eq("after: no staging writes", after.staging_writes, 0);
    report.check(
        "after has fewer pipeline steps",
        after.steps.len() < before.steps.len(),
        format!("{} vs {}", after.steps.len(), before.steps.len()),
    );
    report.check(
        "after finishes sooner under the contention model",
        after.simulated < before.simulated,
        format!("{:?} vs {:?}", after.simulated, before.simulated),
    );
    report.check("both layouts produce identical results", after.outputs == before.outputs, "");
    report.simulated_duration = after.simulated;
    report
}
