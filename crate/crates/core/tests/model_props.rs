use std::collections::BTreeMap;

use dlf_core::model::{
    is_valid_bucket_name, parse_manifest, serialize_dataset, spec_fingerprint, validate_dataset,
    ArchiveFormat, ArchiveSpec, CosSpec, Dataset, DatasetSpec, DatasetStatus, NfsSpec, ObjectMeta,
    Phase, ProbeSummary,
};
use proptest::prelude::*;
use regex::Regex;

// Rules as published for general purpose S3 buckets.
#[test]
fn bucket_grammar_table() {
    let rows: &[(&str, bool)] = &[
        ("example-bucket", true),
        ("abc", true),
        ("a1.b2.c3", true),
        ("my.bucket-01", true),
        (&"a".repeat(63), true),
        ("ab", false),
        ("AB", false),
        (&"a".repeat(64), false),
        ("-abc", false),
        ("abc-", false),
        (".abc", false),
        ("abc.", false),
        ("a..b", false),
        ("under_score", false),
        ("192.168.5.4", false),
        ("1.2.3.4", false),
        ("1.2.3.4.5", true),
        ("xn--abc", false),
        ("sthree-abc", false),
        ("bucket-s3alias", false),
        ("bucket--ol-s3", false),
        ("has space", false),
        ("", false),
    ];
    for (name, ok) in rows {
        assert_eq!(is_valid_bucket_name(name), *ok, "{name}");
    }
}

fn bucket_oracle(name: &str) -> bool {
    let shape = Regex::new(r"^[a-z0-9][a-z0-9.-]{1,61}[a-z0-9]$").unwrap();
    let ipv4 = Regex::new(r"^\d{1,3}\.\d{1,3}\.\d{1,3}\.\d{1,3}$").unwrap();
    shape.is_match(name)
        && !name.contains("..")
        && !ipv4.is_match(name)
        && !name.starts_with("xn--")
        && !name.starts_with("sthree-")
        && !name.ends_with("-s3alias")
        && !name.ends_with("--ol-s3")
}

proptest! {
    #[test]
    fn bucket_grammar_matches_regex_oracle(name in "[a-z0-9.\\-A_]{0,66}") {
        prop_assert_eq!(is_valid_bucket_name(&name), bucket_oracle(&name));
    }

    #[test]
    fn bucket_grammar_matches_oracle_on_dotted_digits(name in "[0-9]{1,3}(\\.[0-9]{1,3}){2,4}") {
        prop_assert_eq!(is_valid_bucket_name(&name), bucket_oracle(&name));
    }
}

// Pools of field values with their validity known by construction. `None`
// validity means "empty", reported as required.
const ENDPOINTS: &[(&str, Option<bool>)] = &[
    ("http://s3.example.test", Some(true)),
    ("https://10.0.0.1:9000", Some(true)),
    ("http://localhost:8080/prefix", Some(true)),
    ("ftp://s3.example.test", Some(false)),
    ("s3.example.test", Some(false)),
    ("not a url", Some(false)),
    ("", None),
];
const BUCKETS: &[(&str, Option<bool>)] = &[
    ("example-bucket", Some(true)),
    ("data.set-1", Some(true)),
    ("AB", Some(false)),
    ("a", Some(false)),
    ("10.1.2.3", Some(false)),
    ("", None),
];
const KEYS: &[&str] = &["", "k", "AKIA0000"];
const REGIONS: &[(Option<&str>, bool)] = &[(None, true), (Some("us-east-1"), true), (Some(""), false)];
const SECRET_REFS: &[(Option<&str>, bool)] = &[(None, true), (Some("creds"), true), (Some("Bad_Ref"), false)];
const SERVERS: &[(&str, Option<bool>)] = &[
    ("nfs.example.test", Some(true)),
    ("10.0.0.7", Some(true)),
    ("nfs.example.test:2049", Some(false)),
    ("a/b", Some(false)),
    ("", None),
];
const SHARES: &[(&str, Option<bool>)] = &[
    ("/exports/data", Some(true)),
    ("/", Some(true)),
    ("exports", Some(false)),
    ("", None),
];
const URLS: &[(&str, Option<bool>)] = &[
    ("https://ftp.example.test/ref.tar.gz", Some(true)),
    ("http://127.0.0.1:1/a", Some(true)),
    ("file:///tmp/a.tar", Some(false)),
    ("ref.tar.gz", Some(false)),
    ("", None),
];

#[derive(Debug, Clone)]
enum Pick {
    Cos(usize, usize, usize, usize, usize, usize),
    Nfs(usize, usize),
    Archive(usize, usize),
}

fn pick() -> impl Strategy<Value = Pick> {
    prop_oneof![
        (
            0..ENDPOINTS.len(),
            0..BUCKETS.len(),
            0..KEYS.len(),
            0..KEYS.len(),
            0..REGIONS.len(),
            0..SECRET_REFS.len()
        )
            .prop_map(|(a, b, c, d, e, f)| Pick::Cos(a, b, c, d, e, f)),
        (0..SERVERS.len(), 0..SHARES.len()).prop_map(|(a, b)| Pick::Nfs(a, b)),
        (0..URLS.len(), 0..3usize).prop_map(|(a, b)| Pick::Archive(a, b)),
    ]
}

fn build(p: &Pick) -> DatasetSpec {
    match *p {
        Pick::Cos(e, b, k, s, r, sr) => DatasetSpec::Cos(CosSpec {
            endpoint: ENDPOINTS[e].0.into(),
            bucket: BUCKETS[b].0.into(),
            access_key_id: KEYS[k].into(),
            secret_access_key: KEYS[s].into(),
            region: REGIONS[r].0.map(str::to_string),
            secret_ref: SECRET_REFS[sr].0.map(str::to_string),
        }),
        Pick::Nfs(s, h) => DatasetSpec::Nfs(NfsSpec {
            server: SERVERS[s].0.into(),
            share: SHARES[h].0.into(),
        }),
        Pick::Archive(u, f) => DatasetSpec::Archive(ArchiveSpec {
            url: URLS[u].0.into(),
            format: [ArchiveFormat::Raw, ArchiveFormat::Tar, ArchiveFormat::Targz][f],
        }),
    }
}

/// Field table: path of every rule violated by the picked values.
fn expected_errors(p: &Pick) -> Vec<&'static str> {
    let mut out = Vec::new();
    let mut check = |path: &'static str, v: Option<bool>| {
        if v != Some(true) {
            out.push(path);
        }
    };
    match *p {
        Pick::Cos(e, b, k, s, r, sr) => {
            check("spec.endpoint", ENDPOINTS[e].1);
            check("spec.bucket", BUCKETS[b].1);
            match SECRET_REFS[sr] {
                (Some(_), ok) => check("spec.secretRef", Some(ok)),
                (None, _) => {
                    check("spec.accessKeyID", Some(!KEYS[k].is_empty()));
                    check("spec.secretAccessKey", Some(!KEYS[s].is_empty()));
                }
            }
            check("spec.region", Some(REGIONS[r].1));
        }
        Pick::Nfs(s, h) => {
            check("spec.server", SERVERS[s].1);
            check("spec.share", SHARES[h].1);
        }
        Pick::Archive(u, _) => check("spec.url", URLS[u].1),
    }
    out.sort_unstable();
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn validation_agrees_with_field_table(p in pick()) {
        let spec = build(&p);
        let expected = expected_errors(&p);
        match validate_dataset(&spec) {
            Ok(()) => prop_assert!(expected.is_empty(), "accepted, expected {:?}", expected),
            Err(errs) => {
                let mut got: Vec<&str> = errs.iter().map(|e| e.path.as_str()).collect();
                got.sort_unstable();
                prop_assert_eq!(got, expected);
            }
        }
    }
}

#[test]
fn validation_examples() {
    let ok = DatasetSpec::Cos(CosSpec::new(
        "http://s3.example.test",
        "example-bucket",
        "k",
        "s",
    ));
    assert_eq!(validate_dataset(&ok), Ok(()));

    let mut missing = CosSpec::new("http://s3.example.test", "example-bucket", "k", "");
    missing.secret_access_key.clear();
    let errs = validate_dataset(&DatasetSpec::Cos(missing)).unwrap_err();
    assert_eq!(errs.len(), 1);
    assert_eq!(errs[0].to_string(), "spec.secretAccessKey: required");

    let bad = DatasetSpec::Cos(CosSpec::new("http://s3.example.test", "AB", "k", "s"));
    let errs = validate_dataset(&bad).unwrap_err();
    assert_eq!(errs[0].to_string(), "spec.bucket: must match S3 bucket grammar");
}

// Independent fingerprint: canonical entries gathered in a sorted map, then
// FNV-1a with the published 64-bit parameters.
fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(14_695_981_039_346_656_037u64, |h, b| {
        (h ^ u64::from(*b)).wrapping_mul(1_099_511_628_211)
    })
}

fn oracle_fingerprint(spec: &DatasetSpec) -> u64 {
    let mut fields: BTreeMap<&str, String> = BTreeMap::new();
    let ty = match spec {
        DatasetSpec::Cos(c) => {
            fields.insert("endpoint", c.endpoint.clone());
            fields.insert("bucket", c.bucket.clone());
            fields.insert("accessKeyID", c.access_key_id.clone());
            fields.insert("secretAccessKey", c.secret_access_key.clone());
            if let Some(r) = &c.region {
                fields.insert("region", r.clone());
            }
            if let Some(r) = &c.secret_ref {
                fields.insert("secretRef", r.clone());
            }
            "COS"
        }
        DatasetSpec::Nfs(n) => {
            fields.insert("server", n.server.clone());
            fields.insert("share", n.share.clone());
            "NFS"
        }
        DatasetSpec::Archive(a) => {
            fields.insert("url", a.url.clone());
            fields.insert("format", a.format.as_str().to_string());
            "ARCHIVE"
        }
    };
    let mut text = format!("4:type={}:{}\n", ty.len(), ty).into_bytes();
    for (k, v) in fields {
        text.extend(format!("{}:{}={}:{}\n", k.len(), k, v.len(), v).into_bytes());
    }
    fnv1a64(&text)
}

#[test]
fn fnv_reference_vectors() {
    assert_eq!(fnv1a64(b""), 0xcbf2_9ce4_8422_2325);
    assert_eq!(fnv1a64(b"a"), 0xaf63_dc4c_8601_ec8c);
    assert_eq!(fnv1a64(b"foobar"), 0x8594_4171_f739_67e8);
}

proptest! {
    #[test]
    fn fingerprint_matches_reference(p in pick(), tail in "[ -~]{0,12}") {
        let mut spec = build(&p);
        if let DatasetSpec::Cos(c) = &mut spec {
            c.secret_access_key.push_str(&tail);
        }
        prop_assert_eq!(spec_fingerprint(&spec), oracle_fingerprint(&spec));
        prop_assert_eq!(spec_fingerprint(&spec), spec_fingerprint(&spec.clone()));
    }

    #[test]
    fn rotated_secret_changes_fingerprint(a in "[a-z0-9]{1,16}", b in "[a-z0-9]{1,16}") {
        prop_assume!(a != b);
        let x = DatasetSpec::Cos(CosSpec::new("http://e.test", "bkt", "k", a));
        let y = DatasetSpec::Cos(CosSpec::new("http://e.test", "bkt", "k", b));
        prop_assert_ne!(spec_fingerprint(&x), spec_fingerprint(&y));
    }
}

// Strings that YAML would read as something other than a string unless the
// serializer quotes them.
const TRICKY: &[&str] = &[
    "yes", "no", "null", "~", "1.0", "0x1f", "true", "- a", "a: b", "#x", "'q'", "\"dq\"", " pad ",
    "multi\nline", "",
];

fn dns_label() -> impl Strategy<Value = String> {
    "[a-z]([a-z0-9-]{0,20}[a-z0-9])?"
}

fn text() -> impl Strategy<Value = String> {
    prop_oneof![
        "[ -~]{0,24}",
        (0..TRICKY.len()).prop_map(|i| TRICKY[i].to_string()),
    ]
}

fn nonempty_text() -> impl Strategy<Value = String> {
    text().prop_map(|s| if s.is_empty() { "x".into() } else { s })
}

fn any_spec() -> impl Strategy<Value = DatasetSpec> {
    prop_oneof![
        (
            nonempty_text(),
            nonempty_text(),
            nonempty_text(),
            nonempty_text(),
            proptest::option::of(text()),
            proptest::option::of(dns_label())
        )
            .prop_map(|(e, b, k, s, r, sr)| DatasetSpec::Cos(CosSpec {
                endpoint: e,
                bucket: b,
                access_key_id: k,
                secret_access_key: s,
                region: r,
                secret_ref: sr,
            })),
        (nonempty_text(), nonempty_text())
            .prop_map(|(server, share)| DatasetSpec::Nfs(NfsSpec { server, share })),
        (nonempty_text(), 0..3usize).prop_map(|(url, f)| DatasetSpec::Archive(ArchiveSpec {
            url,
            format: [ArchiveFormat::Raw, ArchiveFormat::Tar, ArchiveFormat::Targz][f],
        })),
    ]
}

fn any_status() -> impl Strategy<Value = DatasetStatus> {
    (
        0..Phase::ALL.len(),
        text(),
        proptest::option::of(dns_label()),
        any::<bool>(),
        proptest::option::of((any::<u32>(), any::<bool>(), text())),
    )
        .prop_map(|(p, message, claim, cached, probe)| DatasetStatus {
            phase: Phase::ALL[p],
            message,
            bound_claim: claim.clone(),
            bound_secret: claim,
            cached,
            last_probe: probe.map(|(t, ok, detail)| ProbeSummary {
                at_unix_ms: u64::from(t),
                reachable: ok,
                authorized: ok,
                bucket_exists: ok,
                latency_ms: 3,
                detail,
            }),
        })
}

fn any_dataset() -> impl Strategy<Value = Dataset> {
    (
        dns_label(),
        dns_label(),
        proptest::collection::btree_map("[a-z./-]{1,12}", text(), 0..3),
        proptest::collection::vec(dns_label(), 0..2),
        any_spec(),
        any_status(),
    )
        .prop_map(|(name, ns, labels, finalizers, spec, status)| {
            let mut meta = ObjectMeta::new(ns, name);
            meta.labels = labels;
            meta.finalizers = finalizers;
            Dataset { meta, spec, status }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn parse_inverts_serialize(ds in any_dataset()) {
        let text = serialize_dataset(&ds);
        let back = parse_manifest(&text);
        prop_assert_eq!(back.as_ref(), Ok(&ds), "{}", text);
    }
}
