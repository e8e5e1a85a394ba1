//! Request authentication for the S3 subset.
//!
//! Every authenticated request carries
//!
//! ```text
//! Authorization: DLF-SIMPLE <accessKeyID>:<hex sha256(secretAccessKey)>
//! X-Dlf-Signature: <hex hmac-sha256(secretAccessKey, "<METHOD>\n<path>")>
//! ```
//!
//! The stub always checks the key id and secret digest. The signature is only
//! verified when the server runs with signature checking enabled.

use hmac::{Hmac, Mac};
use sha2::{Digest, Sha256};

pub const AUTH_SCHEME: &str = "DLF-SIMPLE";
pub const SIGNATURE_HEADER: &str = "X-Dlf-Signature";

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Credentials {
    pub access_key_id: String,
    pub secret_access_key: String,
}

impl Credentials {
    pub fn new(access_key_id: impl Into<String>, secret_access_key: impl Into<String>) -> Self {
        Credentials {
            access_key_id: access_key_id.into(),
            secret_access_key: secret_access_key.into(),
        }
    }

    pub fn secret_digest(&self) -> String {
        hex::encode(Sha256::digest(self.secret_access_key.as_bytes()))
    }

    pub fn authorization_header(&self) -> String {
        format!("{AUTH_SCHEME} {}:{}", self.access_key_id, self.secret_digest())
    }

    pub fn sign(&self, method: &str, path: &str) -> String {
        let mut mac = Hmac::<Sha256>::new_from_slice(self.secret_access_key.as_bytes())
            .expect("hmac accepts any key length");
        mac.update(method.as_bytes());
        mac.update(b"\n");
        mac.update(path.as_bytes());
        hex::encode(mac.finalize().into_bytes())
    }
}

/// Splits an authorization header into `(access key id, secret digest)`.
pub fn parse_authorization(header: &str) -> Option<(&str, &str)> {
    let rest = header.strip_prefix(AUTH_SCHEME)?.strip_prefix(' ')?;
    let (id, digest) = rest.split_once(':')?;
    if id.is_empty() || digest.is_empty() {
        return None;
    }
    Some((id, digest))
}
