use std::fmt;

use super::{ArchiveSpec, CosSpec, DatasetSpec, NfsSpec, ObjectMeta};

/// One rule violation, addressed by its logical field path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldError {
    pub path: String,
    pub reason: String,
}

impl FieldError {
    fn new(path: &str, reason: impl Into<String>) -> Self {
        FieldError {
            path: path.to_string(),
            reason: reason.into(),
        }
    }
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.reason)
    }
}

pub type ValidationResult = Result<(), Vec<FieldError>>;

/// Checks every field rule for the declared dataset type and reports all
/// violations at once.
pub fn validate_dataset(spec: &DatasetSpec) -> ValidationResult {
    let mut errs = Vec::new();
    match spec {
        DatasetSpec::Cos(c) => validate_cos(c, &mut errs),
        DatasetSpec::Nfs(n) => validate_nfs(n, &mut errs),
        DatasetSpec::Archive(a) => validate_archive(a, &mut errs),
    }
    if errs.is_empty() {
        Ok(())
    } else {
        Err(errs)
    }
}

fn validate_cos(c: &CosSpec, errs: &mut Vec<FieldError>) {
    if c.endpoint.is_empty() {
        errs.push(FieldError::new("spec.endpoint", "required"));
    } else if let Err(reason) = check_http_url(&c.endpoint) {
        errs.push(FieldError::new("spec.endpoint", reason));
    }
    if c.bucket.is_empty() {
        errs.push(FieldError::new("spec.bucket", "required"));
    } else if !is_valid_bucket_name(&c.bucket) {
        errs.push(FieldError::new("spec.bucket", "must match S3 bucket grammar"));
    }
    match &c.secret_ref {
        Some(name) => {
            if !is_dns_label(name) {
                errs.push(FieldError::new("spec.secretRef", "must be a DNS label"));
            }
        }
        None => {
            if c.access_key_id.is_empty() {
                errs.push(FieldError::new("spec.accessKeyID", "required"));
            }
            if c.secret_access_key.is_empty() {
                errs.push(FieldError::new("spec.secretAccessKey", "required"));
            }
        }
    }
    if let Some(region) = &c.region {
        if region.is_empty() {
            errs.push(FieldError::new("spec.region", "must not be empty when set"));
        }
    }
}

fn validate_nfs(n: &NfsSpec, errs: &mut Vec<FieldError>) {
    if n.server.is_empty() {
        errs.push(FieldError::new("spec.server", "required"));
    } else if url::Host::parse(&n.server).is_err() || n.server.contains(['/', ':', ' ']) {
        errs.push(FieldError::new("spec.server", "must be a host name or address"));
    }
    if n.share.is_empty() {
        errs.push(FieldError::new("spec.share", "required"));
    } else if !n.share.starts_with('/') {
        errs.push(FieldError::new("spec.share", "must be an absolute path"));
    }
}

fn validate_archive(a: &ArchiveSpec, errs: &mut Vec<FieldError>) {
    if a.url.is_empty() {
        errs.push(FieldError::new("spec.url", "required"));
    } else if let Err(reason) = check_http_url(&a.url) {
        errs.push(FieldError::new("spec.url", reason));
    }
}

fn check_http_url(s: &str) -> Result<(), &'static str> {
    let parsed = url::Url::parse(s).map_err(|_| "must be an absolute URL")?;
    if !matches!(parsed.scheme(), "http" | "https") {
        return Err("scheme must be http or https");
    }
    if parsed.host_str().map_or(true, str::is_empty) {
        return Err("must name a host");
    }
    Ok(())
}

/// S3 bucket naming rules.
/// Four dot-separated groups of one to three digits, zero padding included.
fn looks_like_ipv4(name: &str) -> bool {
    let groups: Vec<&str> = name.split('.').collect();
    groups.len() == 4
        && groups
            .iter()
            .all(|g| (1..=3).contains(&g.len()) && g.bytes().all(|b| b.is_ascii_digit()))
}

pub fn is_valid_bucket_name(name: &str) -> bool {
    let bytes = name.as_bytes();
    if !(3..=63).contains(&bytes.len()) {
        return false;
    }
    if !bytes
        .iter()
        .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || *b == b'.' || *b == b'-')
    {
        return false;
    }
    let first = bytes[0];
    let last = bytes[bytes.len() - 1];
    if !first.is_ascii_alphanumeric() || !last.is_ascii_alphanumeric() {
        return false;
    }
    if name.contains("..") {
        return false;
    }
    if looks_like_ipv4(name) {
        return false;
    }
    const RESERVED_PREFIXES: [&str; 2] = ["xn--", "sthree-"];
    const RESERVED_SUFFIXES: [&str; 2] = ["-s3alias", "--ol-s3"];
    !RESERVED_PREFIXES.iter().any(|p| name.starts_with(p))
        && !RESERVED_SUFFIXES.iter().any(|s| name.ends_with(s))
}

/// `[a-z0-9]([-a-z0-9]*[a-z0-9])?`, at most 63 characters.
pub fn is_dns_label(s: &str) -> bool {
    let b = s.as_bytes();
    if b.is_empty() || b.len() > 63 {
        return false;
    }
    let alnum = |c: u8| c.is_ascii_lowercase() || c.is_ascii_digit();
    alnum(b[0]) && alnum(b[b.len() - 1]) && b.iter().all(|&c| alnum(c) || c == b'-')
}

/// Name and namespace rules for a stored object.
pub fn validate_meta(meta: &ObjectMeta, namespaced: bool) -> ValidationResult {
    let mut errs = Vec::new();
    if !is_dns_label(&meta.name) {
        errs.push(FieldError::new("metadata.name", "must be a DNS label"));
    }
    if namespaced && !is_dns_label(&meta.namespace) {
        errs.push(FieldError::new("metadata.namespace", "must be a DNS label"));
    }
    if !namespaced && !meta.namespace.is_empty() {
        errs.push(FieldError::new("metadata.namespace", "must be empty for cluster-scoped kinds"));
    }
    if errs.is_empty() {
        Ok(())
    } else {
        Err(errs)
    }
}
