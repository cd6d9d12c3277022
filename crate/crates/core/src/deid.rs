//! Deidentification tokens: HMAC-SHA256 of the user id under a service
//! secret, truncated to 128 bits and hex encoded.

use alloc::string::String;

use hmac::{Hmac, Mac};
use sha2::{Digest, Sha256};

pub const TOKEN_HEX_LEN: usize = 32;

pub fn deid_token(secret: &[u8], user_id: &str) -> String {
    let mut mac = <Hmac<Sha256> as Mac>::new_from_slice(secret).expect("hmac accepts any key length");
    mac.update(user_id.as_bytes());
    let tag = mac.finalize().into_bytes();
    hex::encode(&tag[..TOKEN_HEX_LEN / 2])
}

/// Hex SHA-256 of a credential, as stored in profiles.
pub fn fingerprint(secret: &str) -> String {
    hex::encode(Sha256::digest(secret.as_bytes()))
}

pub fn is_fingerprint(s: &str) -> bool {
    s.len() == 64 && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'))
}
