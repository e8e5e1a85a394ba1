use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use dlf_core::admission::{admit, AdmissionDecision};
use dlf_core::model::{validate_dataset, Dataset, Kind, FINGERPRINT_ANNOTATION};
use dlf_core::reconciler::submitted_fingerprint;
use dlf_core::resources::ConfigMapData;
use dlf_core::statestore::{
    parse_documents, render_documents, DeletionOutcome, Payload, Store, StoreError, StoredObject,
};

use crate::cache::{run_trace, TraceOptions};
use crate::session::{inspect, Session, SessionOptions};
use crate::{CmdResult, Failure};

fn read_file(path: &Path) -> CmdResult<String> {
    std::fs::read_to_string(path).map_err(|e| Failure::user(format!("{}: {e}", path.display())))
}

fn parse_file(path: &Path) -> CmdResult<Vec<StoredObject>> {
    parse_documents(&read_file(path)?).map_err(|e| Failure::user(format!("{}: {e}", path.display())))
}

fn store_err(e: StoreError) -> Failure {
    Failure::user(e.to_string())
}

fn parse_kind(kind: &str) -> CmdResult<Kind> {
    Kind::parse(kind).ok_or_else(|| Failure::user(format!("unknown kind `{kind}`")))
}

fn label(obj: &StoredObject) -> String {
    format!("{}/{}", obj.kind().as_str().to_ascii_lowercase(), obj.meta.name)
}

/// Validates every Dataset in `objects`, reporting all field errors at once.
fn validate_all(objects: &[StoredObject]) -> CmdResult {
    let mut text = String::new();
    for obj in objects {
        if let Some(ds) = obj.as_dataset() {
            if let Err(errs) = validate_dataset(&ds.spec) {
                for e in errs {
                    let _ = writeln!(text, "{}: {e}", label(obj));
                }
            }
        }
    }
    if text.is_empty() {
        Ok(())
    } else {
        Err(Failure::User(text.trim_end().to_string()))
    }
}

/// Create-or-update for one Dataset. An unchanged fingerprint and label set
/// leaves the stored object alone.
fn apply_dataset(store: &Store, ds: Dataset) -> CmdResult<&'static str> {
    let existing = match store.get_dataset(&ds.meta.namespace, &ds.meta.name) {
        Ok(existing) => existing,
        Err(StoreError::NotFound(_)) => {
            store.create(ds.into()).map_err(store_err)?;
            return Ok("created");
        }
        Err(e) => return Err(store_err(e)),
    };
    if existing.meta.deletion_requested {
        return Err(Failure::user(format!("dataset {} is being deleted", ds.meta.name)));
    }
    let same_spec = match existing.meta.annotations.get(FINGERPRINT_ANNOTATION) {
        Some(recorded) => submitted_fingerprint(store, &ds).as_ref() == Some(recorded),
        None => existing.spec == ds.spec,
    };
    if same_spec && existing.meta.labels == ds.meta.labels {
        return Ok("unchanged");
    }
    let version = existing.meta.resource_version;
    let mut next = existing;
    next.spec = ds.spec;
    next.meta.labels = ds.meta.labels;
    store.update(next.into(), version).map_err(store_err)?;
    Ok("configured")
}

fn apply_other(session: &Session, obj: StoredObject) -> CmdResult<&'static str> {
    let store = session.store();
    if obj.kind() == Kind::Pod {
        session.cluster.admit(obj)?;
        return Ok("created");
    }
    match store.get(obj.kind(), &obj.meta.namespace, &obj.meta.name) {
        Ok(existing) => {
            if existing.payload == obj.payload && existing.meta.labels == obj.meta.labels {
                return Ok("unchanged");
            }
            let version = existing.meta.resource_version;
            let mut next = existing;
            next.payload = obj.payload;
            next.meta.labels = obj.meta.labels;
            store.update(next, version).map_err(store_err)?;
            Ok("configured")
        }
        Err(StoreError::NotFound(_)) => {
            store.create(obj).map_err(store_err)?;
            Ok("created")
        }
        Err(e) => Err(store_err(e)),
    }
}

pub fn apply(opts: &SessionOptions, file: &Path) -> CmdResult<String> {
    let objects = parse_file(file)?;
    validate_all(&objects)?;
    let session = Session::open(opts)?;
    let mut out = String::new();
    // Namespaces first, pods last, so admission sees labels and datasets.
    let mut ordered = objects;
    ordered.sort_by_key(|o| match o.kind() {
        Kind::Namespace => 0,
        Kind::Pod => 2,
        _ => 1,
    });
    let mut pods = Vec::new();
    for obj in ordered {
        let name = label(&obj);
        let verdict = match (obj.as_dataset(), obj.kind()) {
            (Some(ds), _) => apply_dataset(session.store(), ds)?,
            (None, Kind::Pod) => {
                pods.push(obj);
                continue;
            }
            (None, _) => apply_other(&session, obj)?,
        };
        let _ = writeln!(out, "{name} {verdict}");
    }
    if !pods.is_empty() {
        session.cluster.settle()?;
    }
    for pod in pods {
        let name = label(&pod);
        let verdict = apply_other(&session, pod)?;
        let _ = writeln!(out, "{name} {verdict}");
    }
    session.commit()?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Output {
    Table,
    Yaml,
}

fn table(kind: Kind, objects: &[StoredObject]) -> String {
    let mut rows: Vec<[String; 4]> = vec![match kind {
        Kind::Dataset => ["NAMESPACE", "NAME", "TYPE", "PHASE"].map(String::from),
        _ => ["NAMESPACE", "NAME", "KIND", "LABELS"].map(String::from),
    }];
    for o in objects {
        let ns = if o.meta.namespace.is_empty() { "-".to_string() } else { o.meta.namespace.clone() };
        rows.push(match o.as_dataset() {
            Some(ds) => [ns, ds.meta.name.clone(), ds.spec.dataset_type().to_string(), ds.status.phase.to_string()],
            None => {
                let labels: Vec<String> = o.meta.labels.iter().map(|(k, v)| format!("{k}={v}")).collect();
                [ns, o.meta.name.clone(), kind.to_string(), labels.join(",")]
            }
        });
    }
    let widths: Vec<usize> = (0..4).map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for r in rows {
        let line = format!(
            "{:w0$}  {:w1$}  {:w2$}  {}",
            r[0],
            r[1],
            r[2],
            r[3],
            w0 = widths[0],
            w1 = widths[1],
            w2 = widths[2]
        );
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

pub fn get(session: &Path, kind: &str, name: Option<&str>, ns: &str, output: Output) -> CmdResult<String> {
    let kind = parse_kind(kind)?;
    let store = inspect(session)?;
    let ns = if kind.is_namespaced() { ns } else { "" };
    let objects = match name {
        Some(name) => vec![store.get(kind, ns, name).map_err(|_| {
            Failure::user(format!("NotFound: {} {}", kind.as_str().to_ascii_lowercase(), name))
        })?],
        None => store.list(kind, kind.is_namespaced().then_some(ns), &BTreeMap::new()),
    };
    Ok(match output {
        Output::Yaml => render_documents(&objects),
        Output::Table => table(kind, &objects),
    })
}

pub fn delete(opts: &SessionOptions, kind: &str, name: &str, ns: &str) -> CmdResult<String> {
    let kind = parse_kind(kind)?;
    let ns = if kind.is_namespaced() { ns } else { "" };
    let session = Session::open(opts)?;
    let outcome = session
        .store()
        .delete(kind, ns, name)
        .map_err(|_| Failure::user(format!("NotFound: {} {name}", kind.as_str().to_ascii_lowercase())))?;
    session.cluster.settle()?;
    let gone = matches!(session.store().get(kind, ns, name), Err(StoreError::NotFound(_)));
    session.commit()?;
    let what = format!("{}/{name}", kind.as_str().to_ascii_lowercase());
    Ok(match (outcome, gone) {
        (DeletionOutcome::Removed, _) | (_, true) => format!("{what} deleted\n"),
        (DeletionOutcome::TerminatingPending, false) => format!("{what} terminating\n"),
    })
}

pub fn label_namespace(opts: &SessionOptions, ns: &str, key: &str, value: &str) -> CmdResult<String> {
    let session = Session::open(opts)?;
    crate::cluster::label_namespace(session.store(), ns, key, value)?;
    session.commit()?;
    Ok(format!("namespace/{ns} labeled {key}={value}\n"))
}

fn single_pod(path: &Path, ns: Option<&str>) -> CmdResult<StoredObject> {
    let mut objects = parse_file(path)?;
    if objects.len() != 1 || objects[0].kind() != Kind::Pod {
        return Err(Failure::user(format!("{}: expected exactly one Pod document", path.display())));
    }
    let mut pod = objects.remove(0);
    if let Some(ns) = ns {
        pod.meta.namespace = ns.to_string();
    }
    Ok(pod)
}

pub fn admit_pod(opts: &SessionOptions, file: &Path, ns: Option<&str>, dry_run: bool) -> CmdResult<String> {
    let pod = single_pod(file, ns)?;
    if !dry_run {
        let session = Session::open(opts)?;
        let stored = session.cluster.admit(pod).map_err(|e| Failure::User(format!("rejected: {e}")))?;
        session.commit()?;
        return Ok(format!("pod/{} created\n", stored.meta.name));
    }
    let store = inspect(&opts.path)?;
    let namespace = store
        .get(Kind::Namespace, "", &pod.meta.namespace)
        .unwrap_or_else(|_| StoredObject::namespace(pod.meta.namespace.clone()));
    let config = dlf_core::admission::AdmissionConfig {
        allow_pending_datasets: opts.allow_pending_datasets,
    };
    match admit(&pod, &namespace, &store, config) {
        AdmissionDecision::Allowed(patch) if patch.is_empty() => Ok("no mutation\n".into()),
        AdmissionDecision::Allowed(patch) => Ok(format!("{}\n", patch.to_json())),
        AdmissionDecision::Rejected(reason) => Err(Failure::User(format!("rejected: {reason}"))),
    }
}

const STATS_NAMESPACE: &str = "dlf-system";
const STATS_NAME: &str = "cache-stats";

pub fn cache_run(opts: &SessionOptions, trace: &TraceOptions) -> CmdResult<String> {
    let run = run_trace(trace)?;
    let session = Session::open(opts)?;
    let store = session.store();
    let mut obj = StoredObject::new(
        dlf_core::model::ObjectMeta::new(STATS_NAMESPACE, STATS_NAME),
        Payload::ConfigMap(ConfigMapData { data: run.to_map() }),
    );
    match store.get(Kind::ConfigMap, STATS_NAMESPACE, STATS_NAME) {
        Ok(existing) => {
            obj.meta = existing.meta.clone();
            store.update(obj, existing.meta.resource_version).map_err(store_err)?;
        }
        Err(_) => {
            store.create(obj).map_err(store_err)?;
        }
    }
    session.commit()?;
    let text = run.to_yaml();
    let violations = run.violations();
    if violations.is_empty() {
        Ok(text)
    } else {
        Err(Failure::Assertion(format!("{text}{}", violations.join("\n"))))
    }
}

pub fn cache_stats(session: &Path) -> CmdResult<String> {
    let store = inspect(session)?;
    let obj = store
        .get(Kind::ConfigMap, STATS_NAMESPACE, STATS_NAME)
        .map_err(|_| Failure::user("no cache statistics recorded; run `dlfctl cache run` first"))?;
    let Payload::ConfigMap(cm) = &obj.payload else {
        return Err(Failure::user("cache statistics object has the wrong kind"));
    };
    Ok(serde_yaml::to_string(&cm.data).expect("map serializes"))
}
