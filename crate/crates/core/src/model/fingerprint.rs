use super::DatasetSpec;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Canonical byte form of a spec: the dataset type followed by every present
/// field in lexicographic key order, each entry length-prefixed as
/// `<klen>:<key>=<vlen>:<value>\n`. Credentials are included.
pub fn canonical_bytes(spec: &DatasetSpec) -> Vec<u8> {
    let mut fields: Vec<(&str, &str)> = vec![("type", spec.dataset_type().as_str())];
    match spec {
        DatasetSpec::Cos(c) => {
            fields.push(("accessKeyID", &c.access_key_id));
            fields.push(("bucket", &c.bucket));
            fields.push(("endpoint", &c.endpoint));
            if let Some(r) = &c.region {
                fields.push(("region", r));
            }
            fields.push(("secretAccessKey", &c.secret_access_key));
            if let Some(s) = &c.secret_ref {
                fields.push(("secretRef", s));
            }
        }
        DatasetSpec::Nfs(n) => {
            fields.push(("server", &n.server));
            fields.push(("share", &n.share));
        }
        DatasetSpec::Archive(a) => {
            fields.push(("format", a.format.as_str()));
            fields.push(("url", &a.url));
        }
    }
    let mut out = Vec::new();
    for (k, v) in fields {
        out.extend_from_slice(format!("{}:{}={}:", k.len(), k, v.len()).as_bytes());
        out.extend_from_slice(v.as_bytes());
        out.push(b'\n');
    }
    out
}

/// 64-bit FNV-1a digest of [`canonical_bytes`].
pub fn spec_fingerprint(spec: &DatasetSpec) -> u64 {
    let mut h = FNV_OFFSET;
    for b in canonical_bytes(spec) {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}
