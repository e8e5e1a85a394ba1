use std::collections::BTreeMap;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use crate::model::{
    spec_fingerprint, validate_dataset, CosSpec, Dataset, DatasetSpec, DatasetStatus, Kind,
    ObjectMeta, OwnerRef, Phase, CLEANUP_FINALIZER, FINGERPRINT_ANNOTATION,
};
use crate::resources::{SecretData, VolumeClaimSpec};
use crate::s3probe::Credentials;
use crate::statestore::{Payload, Store, StoreError, StoredObject};

use super::{DatasetKey, ProbeTarget, Prober};

/// Secret data key holding the access key id.
pub const SECRET_KEY_ID: &str = "accessKeyID";
/// Secret data key holding the secret access key.
pub const SECRET_KEY_SECRET: &str = "secretAccessKey";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    NoChange,
    Created,
    Updated,
    Deleted,
    RequeueAfter(Duration),
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReconcileOutcome {
    pub action: Action,
    /// Dependent objects written or deleted during the pass, in order.
    pub objects_touched: Vec<(Kind, String)>,
}

impl ReconcileOutcome {
    fn new(action: Action, objects_touched: Vec<(Kind, String)>) -> Self {
        ReconcileOutcome {
            action,
            objects_touched,
        }
    }

    fn no_change() -> Self {
        ReconcileOutcome::new(Action::NoChange, Vec::new())
    }
}

fn now_unix_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

/// Moves `status` to `target`, passing through Provisioning when there is no
/// direct edge.
fn move_to(status: &mut DatasetStatus, target: Phase) {
    if status.transition(target).is_err() {
        status
            .transition(Phase::Provisioning)
            .expect("every non-terminating phase reaches Provisioning");
        status
            .transition(target)
            .expect("Provisioning reaches Ready and Failed");
    }
}

fn fingerprint_text(spec: &DatasetSpec) -> String {
    format!("{:016x}", spec_fingerprint(spec))
}

fn owner_ref(ds: &Dataset) -> OwnerRef {
    OwnerRef {
        kind: Kind::Dataset,
        name: ds.meta.name.clone(),
        uid: ds.meta.uid.clone(),
    }
}

fn dependent_meta(ds: &Dataset) -> ObjectMeta {
    let mut meta = ObjectMeta::new(ds.meta.namespace.clone(), ds.meta.name.clone());
    meta.owner_refs.push(owner_ref(ds));
    meta
}

/// Whether `obj` was created for a Dataset called `name`, whatever its uid.
fn managed_for(obj: &StoredObject, name: &str) -> bool {
    obj.meta
        .owner_refs
        .iter()
        .any(|r| r.kind == Kind::Dataset && r.name == name)
}

/// The claim the operator keeps for `ds`. `effective` carries inline
/// credentials; they never reach the claim.
pub fn desired_claim(ds: &Dataset, effective: &DatasetSpec) -> StoredObject {
    let mut attrs = BTreeMap::new();
    match effective {
        DatasetSpec::Cos(c) => {
            attrs.insert("endpoint".to_string(), c.endpoint.clone());
            attrs.insert("bucket".to_string(), c.bucket.clone());
            if let Some(r) = &c.region {
                attrs.insert("region".to_string(), r.clone());
            }
            attrs.insert("secretName".to_string(), ds.meta.name.clone());
        }
        DatasetSpec::Nfs(n) => {
            attrs.insert("server".to_string(), n.server.clone());
            attrs.insert("share".to_string(), n.share.clone());
        }
        DatasetSpec::Archive(a) => {
            attrs.insert("url".to_string(), a.url.clone());
            attrs.insert("format".to_string(), a.format.as_str().to_string());
        }
    }
    StoredObject::new(
        dependent_meta(ds),
        Payload::VolumeClaim(VolumeClaimSpec {
            storage_class_name: effective.dataset_type().storage_class().to_string(),
            access_modes: vec!["ReadWriteMany".to_string()],
            dataset: ds.meta.name.clone(),
            volume_attributes: attrs,
        }),
    )
}

pub fn desired_secret(ds: &Dataset, creds: &Credentials) -> StoredObject {
    let mut data = BTreeMap::new();
    data.insert(SECRET_KEY_ID.to_string(), creds.access_key_id.clone());
    data.insert(SECRET_KEY_SECRET.to_string(), creds.secret_access_key.clone());
    StoredObject::new(dependent_meta(ds), Payload::Secret(SecretData { data }))
}

fn secret_credentials(secret: &StoredObject) -> Option<Credentials> {
    let data = &secret.as_secret()?.data;
    Some(Credentials::new(
        data.get(SECRET_KEY_ID)?.clone(),
        data.get(SECRET_KEY_SECRET)?.clone(),
    ))
}

enum Resolve {
    Done(DatasetSpec, Option<Credentials>),
    Missing(String),
    Store(StoreError),
}

/// Rebuilds the spec as submitted: credentials inline, no secret reference.
/// This is what the fingerprint covers, so scrubbing does not change it.
fn effective_spec(store: &Store, ds: &Dataset) -> Resolve {
    let DatasetSpec::Cos(c) = &ds.spec else {
        return Resolve::Done(ds.spec.clone(), None);
    };
    let creds = if !c.access_key_id.is_empty() || !c.secret_access_key.is_empty() {
        Credentials::new(c.access_key_id.clone(), c.secret_access_key.clone())
    } else {
        let secret_name = c.secret_ref.as_deref().unwrap_or(&ds.meta.name);
        match store.get(Kind::Secret, &ds.meta.namespace, secret_name) {
            Ok(obj) => match secret_credentials(&obj) {
                Some(creds) => creds,
                None => {
                    return Resolve::Missing(format!(
                        "secret {secret_name} lacks {SECRET_KEY_ID}/{SECRET_KEY_SECRET}"
                    ))
                }
            },
            Err(StoreError::NotFound(_)) => {
                return Resolve::Missing(format!("credentials secret {secret_name} not found"))
            }
            Err(e) => return Resolve::Store(e),
        }
    };
    let spec = DatasetSpec::Cos(CosSpec {
        access_key_id: creds.access_key_id.clone(),
        secret_access_key: creds.secret_access_key.clone(),
        secret_ref: None,
        ..c.clone()
    });
    Resolve::Done(spec, Some(creds))
}

/// Fingerprint of `ds` as submitted, resolved against `store` the same way a
/// pass resolves it. `None` while referenced credentials are missing.
pub fn submitted_fingerprint(store: &Store, ds: &Dataset) -> Option<String> {
    match effective_spec(store, ds) {
        Resolve::Done(spec, _) => Some(fingerprint_text(&spec)),
        Resolve::Missing(_) | Resolve::Store(_) => None,
    }
}

fn probe_target(effective: &DatasetSpec, creds: Option<&Credentials>) -> ProbeTarget {
    match effective {
        DatasetSpec::Cos(c) => ProbeTarget::Cos {
            endpoint: c.endpoint.clone(),
            bucket: c.bucket.clone(),
            credentials: creds.cloned().unwrap_or_else(|| {
                Credentials::new(c.access_key_id.clone(), c.secret_access_key.clone())
            }),
        },
        DatasetSpec::Nfs(n) => ProbeTarget::Nfs {
            server: n.server.clone(),
            share: n.share.clone(),
        },
        DatasetSpec::Archive(a) => ProbeTarget::Archive {
            url: a.url.clone(),
            format: a.format,
        },
    }
}

struct Pass<'a> {
    store: &'a Store,
    retry: Duration,
    touched: Vec<(Kind, String)>,
    created: bool,
}

enum Step {
    Clean,
    Wrote,
    Stop(ReconcileOutcome),
}

impl<'a> Pass<'a> {
    fn stop(&mut self, action: Action) -> ReconcileOutcome {
        ReconcileOutcome::new(action, std::mem::take(&mut self.touched))
    }

    fn requeue(&mut self) -> ReconcileOutcome {
        let retry = self.retry;
        self.stop(Action::RequeueAfter(retry))
    }

    fn store_error(&mut self, err: StoreError) -> ReconcileOutcome {
        match err {
            StoreError::InvalidObject(msg) => self.stop(Action::Failed(msg)),
            _ => self.requeue(),
        }
    }

    fn record(&mut self, kind: Kind, name: &str) {
        self.touched.push((kind, name.to_string()));
    }

    /// Writes a Failed status carrying `message` unless it is already there.
    fn fail(&mut self, ds: &Dataset, message: String, action: Action) -> ReconcileOutcome {
        if ds.status.phase == Phase::Failed && ds.status.message == message {
            return self.stop(action);
        }
        let mut next = ds.clone();
        move_to(&mut next.status, Phase::Failed);
        next.status.message = message;
        let version = ds.meta.resource_version;
        match self.store.update(next.into(), version) {
            Ok(_) => self.stop(action),
            Err(e) => self.store_error(e),
        }
    }

    fn delete_dependent(&mut self, kind: Kind, ns: &str, name: &str) -> Result<(), StoreError> {
        match self.store.delete(kind, ns, name) {
            Ok(_) => {
                self.record(kind, name);
                Ok(())
            }
            Err(StoreError::NotFound(_)) => Ok(()),
            Err(e) => Err(e),
        }
    }

    /// Makes the stored dependent equal `desired`. A same-named object that
    /// this operator did not create is left alone and reported.
    fn ensure(&mut self, ds: &Dataset, desired: StoredObject) -> Step {
        let kind = desired.kind();
        let (ns, name) = (ds.meta.namespace.as_str(), ds.meta.name.as_str());
        match self.store.get(kind, ns, name) {
            Ok(existing) => {
                if !managed_for(&existing, name) {
                    let msg = format!("{kind} {name} exists and is not managed by this dataset");
                    return Step::Stop(self.fail(ds, msg.clone(), Action::Failed(msg)));
                }
                if !existing.meta.is_owned_by(&ds.meta.uid) {
                    // Left over from an earlier Dataset of the same name.
                    if let Err(e) = self.delete_dependent(kind, ns, name) {
                        return Step::Stop(self.store_error(e));
                    }
                    return self.create(desired);
                }
                if existing.payload == desired.payload
                    && existing.meta.owner_refs == desired.meta.owner_refs
                {
                    return Step::Clean;
                }
                let mut next = desired;
                next.meta.labels = existing.meta.labels.clone();
                next.meta.annotations = existing.meta.annotations.clone();
                next.meta.finalizers = existing.meta.finalizers.clone();
                match self.store.update(next, existing.meta.resource_version) {
                    Ok(_) => {
                        self.record(kind, name);
                        Step::Wrote
                    }
                    Err(e) => Step::Stop(self.store_error(e)),
                }
            }
            Err(StoreError::NotFound(_)) => self.create(desired),
            Err(e) => Step::Stop(self.store_error(e)),
        }
    }

    fn create(&mut self, desired: StoredObject) -> Step {
        let (kind, name) = (desired.kind(), desired.meta.name.clone());
        match self.store.create(desired) {
            Ok(_) => {
                self.record(kind, &name);
                self.created = true;
                Step::Wrote
            }
            Err(e) => Step::Stop(self.store_error(e)),
        }
    }

    /// Whether the stored dependent already equals `desired`. Read-only.
    fn matches(&self, desired: &StoredObject) -> bool {
        self.store
            .get(desired.kind(), &desired.meta.namespace, &desired.meta.name)
            .map_or(false, |o| {
                o.payload == desired.payload && o.meta.owner_refs == desired.meta.owner_refs
            })
    }

    fn run(&mut self, mut ds: Dataset, prober: &dyn Prober) -> ReconcileOutcome {
        if let Err(errs) = validate_dataset(&ds.spec) {
            let text: Vec<String> = errs.iter().map(ToString::to_string).collect();
            let msg = format!("invalid spec: {}", text.join("; "));
            return self.fail(&ds, msg.clone(), Action::Failed(msg));
        }

        let (effective, creds) = match effective_spec(self.store, &ds) {
            Resolve::Done(spec, creds) => (spec, creds),
            Resolve::Missing(msg) => {
                let retry = self.retry;
                return self.fail(&ds, msg, Action::RequeueAfter(retry));
            }
            Resolve::Store(e) => return self.store_error(e),
        };
        let fingerprint = fingerprint_text(&effective);
        let desired_secret = creds.as_ref().map(|c| desired_secret(&ds, c));
        let desired_claim = desired_claim(&ds, &effective);

        let recorded = ds.meta.annotations.get(FINGERPRINT_ANNOTATION).cloned();
        let scrubbed = ds.spec.as_cos().map_or(true, CosSpec::is_scrubbed);
        if recorded.as_deref() == Some(fingerprint.as_str())
            && ds.status.phase == Phase::Ready
            && scrubbed
            && ds.meta.has_finalizer(CLEANUP_FINALIZER)
            && desired_secret.as_ref().map_or(true, |s| self.matches(s))
            && self.matches(&desired_claim)
        {
            return ReconcileOutcome::no_change();
        }

        if !ds.meta.has_finalizer(CLEANUP_FINALIZER) {
            let mut next = ds.clone();
            next.meta.finalizers.push(CLEANUP_FINALIZER.to_string());
            match self.store.update(next.into(), ds.meta.resource_version) {
                Ok(obj) => ds = obj.as_dataset().expect("dataset payload"),
                Err(StoreError::NotFound(_)) => return ReconcileOutcome::no_change(),
                Err(e) => return self.store_error(e),
            }
        }

        // A changed spec gets fresh dependents rather than edited ones.
        if recorded.is_some() && recorded.as_deref() != Some(fingerprint.as_str()) {
            let (ns, name) = (ds.meta.namespace.clone(), ds.meta.name.clone());
            for kind in [Kind::Secret, Kind::VolumeClaim] {
                if let Ok(obj) = self.store.get(kind, &ns, &name) {
                    if !obj.meta.is_owned_by(&ds.meta.uid) {
                        continue;
                    }
                }
                if let Err(e) = self.delete_dependent(kind, &ns, &name) {
                    return self.store_error(e);
                }
            }
        }

        if let Some(secret) = desired_secret {
            let foreign_source = ds
                .spec
                .as_cos()
                .and_then(|c| c.secret_ref.as_deref())
                .map_or(false, |r| r == ds.meta.name)
                && self
                    .store
                    .get(Kind::Secret, &ds.meta.namespace, &ds.meta.name)
                    .map_or(false, |o| !managed_for(&o, &ds.meta.name));
            if !foreign_source {
                if let Step::Stop(out) = self.ensure(&ds, secret) {
                    return out;
                }
            }
        }
        if let Step::Stop(out) = self.ensure(&ds, desired_claim) {
            return out;
        }

        let result = prober.probe(&probe_target(&effective, creds.as_ref()));

        let mut next = ds.clone();
        if let DatasetSpec::Cos(c) = &mut next.spec {
            c.access_key_id.clear();
            c.secret_access_key.clear();
            c.secret_ref = Some(ds.meta.name.clone());
        }
        next.meta
            .annotations
            .insert(FINGERPRINT_ANNOTATION.to_string(), fingerprint);
        next.status.last_probe = Some(result.summary(now_unix_ms()));
        next.status.bound_claim = Some(ds.meta.name.clone());
        next.status.bound_secret = creds.as_ref().map(|_| ds.meta.name.clone());
        let ready = result.reachable && result.authorized && result.bucket_exists;
        if ready {
            move_to(&mut next.status, Phase::Ready);
            next.status.message.clear();
        } else {
            move_to(&mut next.status, Phase::Failed);
            next.status.message = if result.detail.is_empty() {
                format!(
                    "probe failed: reachable={} authorized={} bucketExists={}",
                    result.reachable, result.authorized, result.bucket_exists
                )
            } else {
                format!("probe failed: {}", result.detail)
            };
        }
        if let Err(e) = self.store.update(next.into(), ds.meta.resource_version) {
            return self.store_error(e);
        }
        if !ready {
            return self.requeue();
        }
        let action = if self.created {
            Action::Created
        } else {
            Action::Updated
        };
        self.stop(action)
    }
}

/// One reconciliation pass for the Dataset at `key`.
///
/// `retry` is the delay reported with [`Action::RequeueAfter`]; the work queue
/// stretches it with its per-key backoff.
pub fn reconcile(
    key: &DatasetKey,
    store: &Store,
    prober: &dyn Prober,
    retry: Duration,
) -> ReconcileOutcome {
    let mut pass = Pass {
        store,
        retry,
        touched: Vec::new(),
        created: false,
    };
    let ds = match store.get_dataset(&key.namespace, &key.name) {
        Ok(ds) => ds,
        Err(StoreError::NotFound(_)) => return sweep_orphans(&mut pass, key),
        Err(e) => return pass.store_error(e),
    };
    if ds.meta.deletion_requested {
        return collect(&mut pass, &ds);
    }
    pass.run(ds, prober)
}

/// Deletes everything `dataset` owns, then releases its cleanup finalizer.
pub fn garbage_collect(dataset: &Dataset, store: &Store, retry: Duration) -> ReconcileOutcome {
    let mut pass = Pass {
        store,
        retry,
        touched: Vec::new(),
        created: false,
    };
    collect(&mut pass, dataset)
}

fn collect(pass: &mut Pass<'_>, dataset: &Dataset) -> ReconcileOutcome {
    let ns = dataset.meta.namespace.as_str();
    let none = BTreeMap::new();
    for kind in [Kind::Secret, Kind::VolumeClaim] {
        for obj in pass.store.list(kind, Some(ns), &none) {
            if obj.meta.is_owned_by(&dataset.meta.uid) {
                if let Err(e) = pass.delete_dependent(kind, ns, &obj.meta.name) {
                    return pass.store_error(e);
                }
            }
        }
    }
    let current = match pass.store.get_dataset(ns, &dataset.meta.name) {
        Ok(ds) if ds.meta.uid == dataset.meta.uid => ds,
        Ok(_) | Err(StoreError::NotFound(_)) => return pass.stop(Action::Deleted),
        Err(e) => return pass.store_error(e),
    };
    if !current.meta.has_finalizer(CLEANUP_FINALIZER) {
        let action = if pass.touched.is_empty() {
            Action::NoChange
        } else {
            Action::Deleted
        };
        return pass.stop(action);
    }
    let mut next = current.clone();
    next.meta.finalizers.retain(|f| f != CLEANUP_FINALIZER);
    move_to_terminating(&mut next.status);
    match pass.store.update(next.into(), current.meta.resource_version) {
        Ok(_) => pass.stop(Action::Deleted),
        Err(e) => pass.store_error(e),
    }
}

fn move_to_terminating(status: &mut DatasetStatus) {
    status
        .transition(Phase::Terminating)
        .expect("any phase may terminate");
}

/// With the Dataset gone, same-named dependents created for it are orphans.
fn sweep_orphans(pass: &mut Pass<'_>, key: &DatasetKey) -> ReconcileOutcome {
    for kind in [Kind::Secret, Kind::VolumeClaim] {
        match pass.store.get(kind, &key.namespace, &key.name) {
            Ok(obj) if managed_for(&obj, &key.name) => {
                if let Err(e) = pass.delete_dependent(kind, &key.namespace, &key.name) {
                    return pass.store_error(e);
                }
            }
            Ok(_) | Err(StoreError::NotFound(_)) => {}
            Err(e) => return pass.store_error(e),
        }
    }
    if pass.touched.is_empty() {
        ReconcileOutcome::no_change()
    } else {
        pass.stop(Action::Deleted)
    }
}
