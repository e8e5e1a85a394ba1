//! Minimal S3-compatible client, endpoint prober and an in-process stub
//! server speaking the same subset.
//!
//! Addressing is path style: `http://host:port/<bucket>/<key>`. Supported
//! calls are bucket `HEAD`, object `GET`/`PUT`/`DELETE`/`HEAD` and prefix
//! listing (`GET /<bucket>?prefix=<p>`, answered as `{"keys": [...]}`).
//! Stored object versions are returned in the `x-dlf-version` header.

mod auth;
mod stub;

use std::io::Read;
use std::net::{TcpStream, ToSocketAddrs};
use std::time::{Duration, Instant};

use percent_encoding::{utf8_percent_encode, AsciiSet, NON_ALPHANUMERIC};
use serde::Deserialize;

use crate::model::ProbeSummary;

pub use auth::{parse_authorization, Credentials, AUTH_SCHEME, SIGNATURE_HEADER};
pub use stub::{
    start_stub, LatencyModel, RequestRecord, StubBucketConfig, StubError, StubOptions, StubServer,
    Verb,
};

pub const DEFAULT_PROBE_TIMEOUT: Duration = Duration::from_secs(2);
pub const VERSION_HEADER: &str = "x-dlf-version";
/// Error code of a failed request, mirrored from the body so that `HEAD`
/// responses carry it too.
pub const ERROR_HEADER: &str = "x-dlf-error";

/// Key characters sent unescaped; `/` stays literal so keys keep their
/// hierarchy in the request path.
const KEY_ESCAPE: &AsciiSet = &NON_ALPHANUMERIC
    .remove(b'-')
    .remove(b'_')
    .remove(b'.')
    .remove(b'~')
    .remove(b'/');

/// Result of checking a storage endpoint. Each flag implies the previous one:
/// `bucket_exists` ⇒ `authorized` ⇒ `reachable`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbeResult {
    pub reachable: bool,
    pub authorized: bool,
    pub bucket_exists: bool,
    pub latency: Duration,
    pub detail: String,
}

impl ProbeResult {
    pub fn unreachable(detail: impl Into<String>, latency: Duration) -> Self {
        ProbeResult {
            reachable: false,
            authorized: false,
            bucket_exists: false,
            latency,
            detail: detail.into(),
        }
    }

    pub fn denied(detail: impl Into<String>, latency: Duration) -> Self {
        ProbeResult {
            reachable: true,
            ..ProbeResult::unreachable(detail, latency)
        }
    }

    pub fn missing(detail: impl Into<String>, latency: Duration) -> Self {
        ProbeResult {
            authorized: true,
            ..ProbeResult::denied(detail, latency)
        }
    }

    pub fn ok(latency: Duration) -> Self {
        ProbeResult {
            reachable: true,
            authorized: true,
            bucket_exists: true,
            latency,
            detail: String::new(),
        }
    }

    pub fn is_consistent(&self) -> bool {
        (!self.authorized || self.reachable) && (!self.bucket_exists || self.authorized)
    }

    pub fn summary(&self, at_unix_ms: u64) -> ProbeSummary {
        ProbeSummary {
            at_unix_ms,
            reachable: self.reachable,
            authorized: self.authorized,
            bucket_exists: self.bucket_exists,
            latency_ms: self.latency.as_millis() as u64,
            detail: self.detail.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum S3Error {
    #[error("invalid endpoint `{0}`")]
    InvalidEndpoint(String),
    #[error("no such bucket: {0}")]
    NoSuchBucket(String),
    #[error("no such key: {0}")]
    NoSuchKey(String),
    #[error("access denied")]
    AccessDenied,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("unexpected status {status}: {body}")]
    Unexpected { status: u16, body: String },
}

fn parse_endpoint(endpoint: &str) -> Result<url::Url, S3Error> {
    let url = url::Url::parse(endpoint).map_err(|_| S3Error::InvalidEndpoint(endpoint.into()))?;
    if !matches!(url.scheme(), "http" | "https") || url.host_str().is_none() {
        return Err(S3Error::InvalidEndpoint(endpoint.into()));
    }
    Ok(url)
}

fn object_path(bucket: &str, key: &str) -> String {
    format!("/{}/{}", bucket, utf8_percent_encode(key, KEY_ESCAPE))
}

#[derive(Deserialize)]
struct ListResponse {
    keys: Vec<String>,
}

/// Blocking client bound to one endpoint and credential pair. Cheap to clone
/// and safe to share between threads.
#[derive(Clone)]
pub struct S3Client {
    base: url::Url,
    creds: Option<Credentials>,
    agent: ureq::Agent,
}

impl S3Client {
    pub fn new(
        endpoint: &str,
        creds: Option<Credentials>,
        timeout: Duration,
    ) -> Result<Self, S3Error> {
        let base = parse_endpoint(endpoint)?;
        let agent = ureq::AgentBuilder::new()
            .timeout_connect(timeout)
            .timeout(timeout)
            .build();
        Ok(S3Client { base, creds, agent })
    }

    fn request(&self, method: &str, path: &str, query: Option<(&str, &str)>) -> ureq::Request {
        let mut url = self.base.clone();
        url.set_path(path);
        if let Some((k, v)) = query {
            url.query_pairs_mut().append_pair(k, v);
        }
        let mut req = self.agent.request_url(method, &url);
        if let Some(c) = &self.creds {
            req = req
                .set("Authorization", &c.authorization_header())
                .set(SIGNATURE_HEADER, &c.sign(method, path));
        }
        req
    }

    fn map_error(err: ureq::Error, bucket: &str, key: &str) -> S3Error {
        match err {
            ureq::Error::Status(status, resp) => {
                let code = resp.header(ERROR_HEADER).map(str::to_string);
                let body = resp.into_string().unwrap_or_default();
                match (status, code.as_deref().unwrap_or(body.trim())) {
                    (403, _) => S3Error::AccessDenied,
                    (404, "NoSuchKey") => S3Error::NoSuchKey(key.into()),
                    (404, _) => S3Error::NoSuchBucket(bucket.into()),
                    _ => S3Error::Unexpected { status, body },
                }
            }
            ureq::Error::Transport(t) => S3Error::Transport(t.to_string()),
        }
    }

    /// Bucket `HEAD`: `Ok(())` when the bucket exists and the credentials
    /// grant access.
    pub fn head_bucket(&self, bucket: &str) -> Result<(), S3Error> {
        self.request("HEAD", &format!("/{bucket}"), None)
            .call()
            .map(|_| ())
            .map_err(|e| Self::map_error(e, bucket, ""))
    }

    pub fn head_object(&self, bucket: &str, key: &str) -> Result<u64, S3Error> {
        let resp = self
            .request("HEAD", &object_path(bucket, key), None)
            .call()
            .map_err(|e| Self::map_error(e, bucket, key))?;
        Ok(version_of(&resp))
    }

    pub fn get_object(&self, bucket: &str, key: &str) -> Result<Vec<u8>, S3Error> {
        let resp = self
            .request("GET", &object_path(bucket, key), None)
            .call()
            .map_err(|e| Self::map_error(e, bucket, key))?;
        let mut buf = Vec::new();
        resp.into_reader()
            .read_to_end(&mut buf)
            .map_err(|e| S3Error::Transport(e.to_string()))?;
        Ok(buf)
    }

    /// Stores `content` under `key` and returns the new per-key version.
    pub fn put_object(&self, bucket: &str, key: &str, content: &[u8]) -> Result<u64, S3Error> {
        let resp = self
            .request("PUT", &object_path(bucket, key), None)
            .send_bytes(content)
            .map_err(|e| Self::map_error(e, bucket, key))?;
        Ok(version_of(&resp))
    }

    pub fn delete_object(&self, bucket: &str, key: &str) -> Result<(), S3Error> {
        self.request("DELETE", &object_path(bucket, key), None)
            .call()
            .map(|_| ())
            .map_err(|e| Self::map_error(e, bucket, key))
    }

    /// Keys starting with `prefix`, in lexicographic order.
    pub fn list_objects(&self, bucket: &str, prefix: &str) -> Result<Vec<String>, S3Error> {
        let resp = self
            .request("GET", &format!("/{bucket}"), Some(("prefix", prefix)))
            .call()
            .map_err(|e| Self::map_error(e, bucket, ""))?;
        let list: ListResponse = serde_json::from_reader(resp.into_reader())
            .map_err(|e| S3Error::Transport(e.to_string()))?;
        Ok(list.keys)
    }
}

fn version_of(resp: &ureq::Response) -> u64 {
    resp.header(VERSION_HEADER)
        .and_then(|v| v.parse().ok())
        .unwrap_or(0)
}

/// Connects to `endpoint` and checks that `bucket` exists and accepts
/// `creds`. Remote failures are folded into the result; only a malformed
/// endpoint is an error.
pub fn probe_cos(
    endpoint: &str,
    bucket: &str,
    creds: &Credentials,
    timeout: Duration,
) -> Result<ProbeResult, S3Error> {
    let client = S3Client::new(endpoint, Some(creds.clone()), timeout)?;
    let start = Instant::now();
    let outcome = client.head_bucket(bucket);
    let latency = start.elapsed();
    Ok(match outcome {
        Ok(()) => ProbeResult::ok(latency),
        Err(S3Error::AccessDenied) => ProbeResult::denied("access denied", latency),
        Err(S3Error::NoSuchBucket(b)) => ProbeResult::missing(format!("no such bucket: {b}"), latency),
        Err(S3Error::Transport(t)) => ProbeResult::unreachable(t, latency),
        Err(other) => ProbeResult::denied(other.to_string(), latency),
    })
}

/// Checks that an archive URL answers a `HEAD` with success.
pub fn probe_archive(url: &str, timeout: Duration) -> Result<ProbeResult, S3Error> {
    let parsed = parse_endpoint(url)?;
    let agent = ureq::AgentBuilder::new()
        .timeout_connect(timeout)
        .timeout(timeout)
        .build();
    let start = Instant::now();
    let outcome = agent.request_url("HEAD", &parsed).call();
    let latency = start.elapsed();
    Ok(match outcome {
        Ok(_) => ProbeResult::ok(latency),
        Err(ureq::Error::Status(403, _)) => ProbeResult::denied("access denied", latency),
        Err(ureq::Error::Status(404, _)) => ProbeResult::missing("archive not found", latency),
        Err(ureq::Error::Status(code, _)) => ProbeResult::denied(format!("status {code}"), latency),
        Err(ureq::Error::Transport(t)) => ProbeResult::unreachable(t.to_string(), latency),
    })
}

/// TCP reachability of an NFS server on the standard port.
pub fn probe_nfs(server: &str, timeout: Duration) -> ProbeResult {
    let start = Instant::now();
    let addrs = match (server, 2049).to_socket_addrs() {
        Ok(a) => a.collect::<Vec<_>>(),
        Err(e) => return ProbeResult::unreachable(e.to_string(), start.elapsed()),
    };
    for addr in addrs {
        if TcpStream::connect_timeout(&addr, timeout).is_ok() {
            return ProbeResult::ok(start.elapsed());
        }
    }
    ProbeResult::unreachable("nfs port not reachable", start.elapsed())
}
