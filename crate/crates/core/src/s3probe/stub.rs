//! In-process S3-subset server for tests and scenarios.

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use percent_encoding::percent_decode_str;
use tiny_http::{Header, Method, Request, Response, Server};

use super::auth::{parse_authorization, Credentials, SIGNATURE_HEADER};
use super::{ERROR_HEADER, VERSION_HEADER};

/// Deterministic delay applied before answering a request:
/// `fixed + per_byte * payload_bytes`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LatencyModel {
    pub fixed: Duration,
    pub per_byte: Duration,
}

impl LatencyModel {
    pub fn new(fixed: Duration, per_byte: Duration) -> Self {
        LatencyModel { fixed, per_byte }
    }

    pub fn delay_for(&self, bytes: usize) -> Duration {
        self.fixed + self.per_byte * bytes as u32
    }
}

#[derive(Debug, Clone)]
pub struct StubBucketConfig {
    pub bucket_name: String,
    pub credentials: Credentials,
    pub objects: BTreeMap<String, Vec<u8>>,
    pub latency: LatencyModel,
    /// Allows unauthenticated `GET`/`HEAD`, as for a public archive server.
    pub public_read: bool,
}

impl StubBucketConfig {
    pub fn new(bucket_name: impl Into<String>, credentials: Credentials) -> Self {
        StubBucketConfig {
            bucket_name: bucket_name.into(),
            credentials,
            objects: BTreeMap::new(),
            latency: LatencyModel::default(),
            public_read: false,
        }
    }

    pub fn with_object(mut self, key: impl Into<String>, content: impl Into<Vec<u8>>) -> Self {
        self.objects.insert(key.into(), content.into());
        self
    }

    pub fn with_latency(mut self, latency: LatencyModel) -> Self {
        self.latency = latency;
        self
    }

    pub fn public(mut self) -> Self {
        self.public_read = true;
        self
    }
}

#[derive(Debug, Clone)]
pub struct StubOptions {
    /// 0 picks an ephemeral port.
    pub port: u16,
    /// Verify the request signature header in addition to the key id and
    /// secret digest.
    pub verify_signatures: bool,
    pub workers: usize,
}

impl Default for StubOptions {
    fn default() -> Self {
        StubOptions {
            port: 0,
            verify_signatures: false,
            workers: 32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Verb {
    Head,
    Get,
    Put,
    Delete,
    List,
}

/// One routed request as seen by the stub.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequestRecord {
    pub bucket: String,
    pub verb: Verb,
    pub key: String,
    pub status: u16,
    pub bytes: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum StubError {
    #[error("cannot bind stub server: {0}")]
    Bind(String),
    #[error("duplicate bucket `{0}`")]
    DuplicateBucket(String),
}

struct BucketState {
    credentials: Credentials,
    latency: LatencyModel,
    public_read: bool,
    objects: BTreeMap<String, (Vec<u8>, u64)>,
}

struct StubState {
    buckets: Mutex<BTreeMap<String, BucketState>>,
    verify_signatures: bool,
    counters: Mutex<HashMap<(String, Verb), u64>>,
    accepted: AtomicU64,
    log: Mutex<Vec<RequestRecord>>,
}

struct Reply {
    status: u16,
    body: Vec<u8>,
    version: Option<u64>,
    delay: Duration,
}

impl Reply {
    fn status(status: u16, body: &str) -> Self {
        Reply {
            status,
            body: body.as_bytes().to_vec(),
            version: None,
            delay: Duration::ZERO,
        }
    }
}

impl StubState {
    fn record(&self, rec: RequestRecord) {
        *self
            .counters
            .lock()
            .unwrap()
            .entry((rec.bucket.clone(), rec.verb))
            .or_insert(0) += 1;
        self.accepted.fetch_add(1, Ordering::SeqCst);
        self.log.lock().unwrap().push(rec);
    }

    /// `Some(creds)` when the request authenticates against any known
    /// credential pair, `None` for anonymous requests, `Err` for bad ones.
    fn authenticate(&self, req: &Request, method: &str, path: &str) -> Result<Option<Credentials>, ()> {
        let Some(header) = header_value(req, "Authorization") else {
            return Ok(None);
        };
        let (id, digest) = parse_authorization(&header).ok_or(())?;
        let buckets = self.buckets.lock().unwrap();
        let creds = buckets
            .values()
            .map(|b| &b.credentials)
            .find(|c| c.access_key_id == id && c.secret_digest() == digest)
            .cloned()
            .ok_or(())?;
        drop(buckets);
        if self.verify_signatures {
            let sig = header_value(req, SIGNATURE_HEADER).ok_or(())?;
            if sig != creds.sign(method, path) {
                return Err(());
            }
        }
        Ok(Some(creds))
    }

    fn handle(&self, mut req: Request) {
        let method = req.method().clone();
        let url = req.url().to_string();
        let (raw_path, query) = url.split_once('?').unwrap_or((url.as_str(), ""));
        let trimmed = raw_path.trim_start_matches('/');
        let (bucket, raw_key) = trimmed.split_once('/').unwrap_or((trimmed, ""));
        let bucket = bucket.to_string();
        let key = percent_decode_str(raw_key).decode_utf8_lossy().into_owned();

        let verb = match (&method, key.is_empty()) {
            (Method::Head, _) => Verb::Head,
            (Method::Get, true) => Verb::List,
            (Method::Get, false) => Verb::Get,
            (Method::Put, false) => Verb::Put,
            (Method::Delete, false) => Verb::Delete,
            _ => {
                let _ = req.respond(Response::from_string("MethodNotAllowed").with_status_code(405));
                return;
            }
        };
        if bucket.is_empty() {
            let _ = req.respond(Response::from_string("InvalidBucketName").with_status_code(400));
            return;
        }

        let mut body = Vec::new();
        if verb == Verb::Put && req.as_reader().read_to_end(&mut body).is_err() {
            let _ = req.respond(Response::from_string("IncompleteBody").with_status_code(400));
            return;
        }

        let reply = match self.authenticate(&req, method.as_str(), raw_path) {
            Err(()) => Reply::status(403, "AccessDenied"),
            Ok(creds) => self.execute(verb, &bucket, &key, query, creds, body),
        };
        self.record(RequestRecord {
            bucket,
            verb,
            key,
            status: reply.status,
            bytes: reply.body.len(),
        });
        if !reply.delay.is_zero() {
            std::thread::sleep(reply.delay);
        }
        let error_code = (reply.status >= 400)
            .then(|| String::from_utf8_lossy(&reply.body).into_owned());
        let mut resp = Response::from_data(reply.body).with_status_code(reply.status);
        if let Some(code) = error_code {
            resp = resp.with_header(
                Header::from_bytes(ERROR_HEADER.as_bytes(), code.as_bytes()).expect("ascii code"),
            );
        }
        if let Some(v) = reply.version {
            resp = resp.with_header(
                Header::from_bytes(VERSION_HEADER.as_bytes(), v.to_string().as_bytes())
                    .expect("static header"),
            );
        }
        let _ = req.respond(resp);
    }

    fn execute(
        &self,
        verb: Verb,
        bucket: &str,
        key: &str,
        query: &str,
        creds: Option<Credentials>,
        body: Vec<u8>,
    ) -> Reply {
        let mut buckets = self.buckets.lock().unwrap();
        let Some(state) = buckets.get_mut(bucket) else {
            return if creds.is_some() {
                Reply::status(404, "NoSuchBucket")
            } else {
                Reply::status(403, "AccessDenied")
            };
        };
        let allowed = match &creds {
            Some(c) => *c == state.credentials,
            None => state.public_read && matches!(verb, Verb::Head | Verb::Get | Verb::List),
        };
        if !allowed {
            return Reply::status(403, "AccessDenied");
        }
        let latency = state.latency;
        let mut reply = match verb {
            Verb::Head if key.is_empty() => Reply::status(200, ""),
            Verb::Head => match state.objects.get(key) {
                Some((_, v)) => Reply {
                    version: Some(*v),
                    ..Reply::status(200, "")
                },
                None => Reply::status(404, "NoSuchKey"),
            },
            Verb::Get => match state.objects.get(key) {
                Some((data, v)) => Reply {
                    status: 200,
                    body: data.clone(),
                    version: Some(*v),
                    delay: Duration::ZERO,
                },
                None => Reply::status(404, "NoSuchKey"),
            },
            Verb::Put => {
                let len = body.len();
                let version = state.objects.get(key).map_or(1, |(_, v)| v + 1);
                state.objects.insert(key.to_string(), (body, version));
                Reply {
                    version: Some(version),
                    delay: latency.delay_for(len),
                    ..Reply::status(200, "")
                }
            }
            Verb::Delete => {
                state.objects.remove(key);
                Reply::status(204, "")
            }
            Verb::List => {
                let prefix = url::form_urlencoded::parse(query.as_bytes())
                    .find(|(k, _)| k == "prefix")
                    .map(|(_, v)| v.into_owned())
                    .unwrap_or_default();
                let keys: Vec<&String> = state
                    .objects
                    .keys()
                    .filter(|k| k.starts_with(&prefix))
                    .collect();
                let body = serde_json::to_vec(&serde_json::json!({ "keys": keys }))
                    .expect("key list serializes");
                Reply {
                    status: 200,
                    body,
                    version: None,
                    delay: Duration::ZERO,
                }
            }
        };
        if reply.delay.is_zero() {
            reply.delay = latency.delay_for(reply.body.len());
        }
        reply
    }
}

/// Loopback listener whose accepted sockets inherit `TCP_NODELAY`. Replies
/// are written as a header chunk then a body chunk; with Nagle enabled the
/// second write waits on the client's delayed ACK.
fn bind_nodelay(port: u16) -> Result<std::net::TcpListener, StubError> {
    use socket2::{Domain, Protocol, Socket, Type};
    let bind = |e: std::io::Error| StubError::Bind(e.to_string());
    let socket = Socket::new(Domain::IPV4, Type::STREAM, Some(Protocol::TCP)).map_err(bind)?;
    socket.set_nodelay(true).map_err(bind)?;
    socket.set_reuse_address(true).map_err(bind)?;
    let addr: SocketAddr = ([127, 0, 0, 1], port).into();
    socket.bind(&addr.into()).map_err(bind)?;
    socket.listen(1024).map_err(bind)?;
    Ok(socket.into())
}

fn header_value(req: &Request, name: &str) -> Option<String> {
    req.headers()
        .iter()
        .find(|h| h.field.as_str().as_str().eq_ignore_ascii_case(name))
        .map(|h| h.value.as_str().to_string())
}

/// Handle to a running stub. Stops on drop.
pub struct StubServer {
    addr: SocketAddr,
    state: Arc<StubState>,
    stop: Arc<AtomicBool>,
    workers: Vec<JoinHandle<()>>,
    server: Option<Arc<Server>>,
}

/// Starts a stub serving `configs` on loopback.
pub fn start_stub(configs: Vec<StubBucketConfig>, port: u16) -> Result<StubServer, StubError> {
    StubServer::start(
        configs,
        StubOptions {
            port,
            ..StubOptions::default()
        },
    )
}

impl StubServer {
    pub fn start(configs: Vec<StubBucketConfig>, options: StubOptions) -> Result<Self, StubError> {
        let mut buckets = BTreeMap::new();
        for cfg in configs {
            if buckets.contains_key(&cfg.bucket_name) {
                return Err(StubError::DuplicateBucket(cfg.bucket_name));
            }
            buckets.insert(
                cfg.bucket_name.clone(),
                BucketState {
                    credentials: cfg.credentials,
                    latency: cfg.latency,
                    public_read: cfg.public_read,
                    objects: cfg.objects.into_iter().map(|(k, v)| (k, (v, 1))).collect(),
                },
            );
        }
        let server = Server::from_listener(bind_nodelay(options.port)?, None)
            .map_err(|e| StubError::Bind(e.to_string()))?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| StubError::Bind("not an IP listener".into()))?;
        let server = Arc::new(server);
        let state = Arc::new(StubState {
            buckets: Mutex::new(buckets),
            verify_signatures: options.verify_signatures,
            counters: Mutex::new(HashMap::new()),
            accepted: AtomicU64::new(0),
            log: Mutex::new(Vec::new()),
        });
        let stop = Arc::new(AtomicBool::new(false));
        let workers = (0..options.workers.max(1))
            .map(|_| {
                let server = Arc::clone(&server);
                let state = Arc::clone(&state);
                let stop = Arc::clone(&stop);
                std::thread::spawn(move || {
                    while !stop.load(Ordering::SeqCst) {
                        match server.recv_timeout(Duration::from_millis(20)) {
                            Ok(Some(req)) => state.handle(req),
                            Ok(None) => {}
                            Err(_) => break,
                        }
                    }
                })
            })
            .collect();
        Ok(StubServer {
            addr,
            state,
            stop,
            workers,
            server: Some(server),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// `http://127.0.0.1:<port>`
    pub fn endpoint(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn request_count(&self, bucket: &str, verb: Verb) -> u64 {
        self.state
            .counters
            .lock()
            .unwrap()
            .get(&(bucket.to_string(), verb))
            .copied()
            .unwrap_or(0)
    }

    pub fn counters(&self) -> BTreeMap<(String, Verb), u64> {
        self.state
            .counters
            .lock()
            .unwrap()
            .iter()
            .map(|(k, v)| (k.clone(), *v))
            .collect()
    }

    pub fn total_accepted(&self) -> u64 {
        self.state.accepted.load(Ordering::SeqCst)
    }

    pub fn requests(&self) -> Vec<RequestRecord> {
        self.state.log.lock().unwrap().clone()
    }

    /// Reads an object without going through HTTP or the counters.
    pub fn peek(&self, bucket: &str, key: &str) -> Option<Vec<u8>> {
        self.state
            .buckets
            .lock()
            .unwrap()
            .get(bucket)
            .and_then(|b| b.objects.get(key))
            .map(|(d, _)| d.clone())
    }

    pub fn object_keys(&self, bucket: &str) -> Vec<String> {
        self.state
            .buckets
            .lock()
            .unwrap()
            .get(bucket)
            .map(|b| b.objects.keys().cloned().collect())
            .unwrap_or_default()
    }

    pub fn stop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
        self.server = None;
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.stop();
    }
}
