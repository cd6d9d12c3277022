//! Section-scoped sealed payloads.
//!
//! Each message is sealed to a section public key with a fresh ephemeral
//! X25519 keypair. The shared secret is expanded with HKDF-SHA256 (salt is
//! the ephemeral public key followed by the recipient public key) into a
//! ChaCha20-Poly1305 key. Ciphertext layout:
//!
//! ```text
//! ephemeral public key (32) | nonce (12) | sealed plaintext + tag (len + 16)
//! ```

use alloc::vec::Vec;

use chacha20poly1305::aead::{Aead, KeyInit};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use hkdf::Hkdf;
use rand_core::{CryptoRng, RngCore};
use sha2::Sha256;
use x25519_dalek::{PublicKey, StaticSecret};

/// Identifier of the default (and currently only) suite.
pub const SUITE_ID: &str = "x25519-hkdf-sha256-chacha20poly1305";

pub const KEY_LEN: usize = 32;
pub const NONCE_LEN: usize = 12;
pub const TAG_LEN: usize = 16;
/// Bytes added to every plaintext.
pub const OVERHEAD: usize = KEY_LEN + NONCE_LEN + TAG_LEN;

const HKDF_INFO: &[u8] = b"dhlink/section-payload/v1";

pub type PublicKeyBytes = [u8; KEY_LEN];
pub type SecretKeyBytes = [u8; KEY_LEN];

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum CryptoError {
    #[error("plaintext must not be empty")]
    EmptyPlaintext,
    #[error("decrypt-failure")]
    DecryptFailure,
}

/// Generates a fresh section keypair, returned as `(public, secret)`.
pub fn generate_keypair<R: RngCore + CryptoRng>(rng: &mut R) -> (PublicKeyBytes, SecretKeyBytes) {
    let secret = StaticSecret::random_from_rng(rng);
    (PublicKey::from(&secret).to_bytes(), secret.to_bytes())
}

/// Derives the public key belonging to `secret`.
pub fn public_key_of(secret: &SecretKeyBytes) -> PublicKeyBytes {
    PublicKey::from(&StaticSecret::from(*secret)).to_bytes()
}

fn derive_cipher(shared: &[u8; 32], ephemeral: &PublicKeyBytes, recipient: &PublicKeyBytes) -> ChaCha20Poly1305 {
    let mut salt = [0u8; 2 * KEY_LEN];
    salt[..KEY_LEN].copy_from_slice(ephemeral);
    salt[KEY_LEN..].copy_from_slice(recipient);
    let hk = Hkdf::<Sha256>::new(Some(&salt), shared);
    let mut okm = [0u8; KEY_LEN];
    // 32 bytes is always a valid HKDF-SHA256 output length.
    hk.expand(HKDF_INFO, &mut okm).expect("hkdf output length");
    ChaCha20Poly1305::new(Key::from_slice(&okm))
}

/// Seals `plaintext` to the section public key.
pub fn encrypt_payload<R: RngCore + CryptoRng>(
    rng: &mut R,
    recipient: &PublicKeyBytes,
    plaintext: &[u8],
) -> Result<Vec<u8>, CryptoError> {
    if plaintext.is_empty() {
        return Err(CryptoError::EmptyPlaintext);
    }
    let ephemeral = StaticSecret::random_from_rng(&mut *rng);
    let ephemeral_pub = PublicKey::from(&ephemeral).to_bytes();
    let shared = ephemeral.diffie_hellman(&PublicKey::from(*recipient));
    let cipher = derive_cipher(shared.as_bytes(), &ephemeral_pub, recipient);

    let mut nonce = [0u8; NONCE_LEN];
    rng.fill_bytes(&mut nonce);
    let sealed = cipher
        .encrypt(Nonce::from_slice(&nonce), plaintext)
        .map_err(|_| CryptoError::DecryptFailure)?;

    let mut out = Vec::with_capacity(KEY_LEN + NONCE_LEN + sealed.len());
    out.extend_from_slice(&ephemeral_pub);
    out.extend_from_slice(&nonce);
    out.extend_from_slice(&sealed);
    Ok(out)
}

/// Opens a payload sealed with [`encrypt_payload`].
pub fn decrypt_payload(secret: &SecretKeyBytes, ciphertext: &[u8]) -> Result<Vec<u8>, CryptoError> {
    if ciphertext.len() < OVERHEAD {
        return Err(CryptoError::DecryptFailure);
    }
    let (ephemeral_pub, rest) = ciphertext.split_at(KEY_LEN);
    let (nonce, sealed) = rest.split_at(NONCE_LEN);
    let mut eph = [0u8; KEY_LEN];
    eph.copy_from_slice(ephemeral_pub);

    let secret = StaticSecret::from(*secret);
    let recipient = PublicKey::from(&secret).to_bytes();
    let shared = secret.diffie_hellman(&PublicKey::from(eph));
    if !shared.was_contributory() {
        return Err(CryptoError::DecryptFailure);
    }
    derive_cipher(shared.as_bytes(), &eph, &recipient)
        .decrypt(Nonce::from_slice(nonce), sealed)
        .map_err(|_| CryptoError::DecryptFailure)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn rng() -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(7)
    }

    #[test]
    fn round_trip_random_messages() {
        let mut rng = rng();
        let (public, secret) = generate_keypair(&mut rng);
        for _ in 0..1000 {
            let len = rng.gen_range(1..512);
            let m: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
            let ct = encrypt_payload(&mut rng, &public, &m).unwrap();
            assert_eq!(ct.len(), m.len() + 32 + 12 + 16);
            assert_eq!(decrypt_payload(&secret, &ct).unwrap(), m);
        }
    }

    #[test]
    fn encryption_is_randomized() {
        let mut rng = rng();
        let (public, _) = generate_keypair(&mut rng);
        let a = encrypt_payload(&mut rng, &public, b"same").unwrap();
        let b = encrypt_payload(&mut rng, &public, b"same").unwrap();
        assert_ne!(a, b);
        assert_ne!(a[..32], b[..32]);
        assert_ne!(a[32..44], b[32..44]);
    }

    #[test]
    fn wrong_key_never_opens() {
        let mut rng = rng();
        for _ in 0..1000 {
            let (public, _) = generate_keypair(&mut rng);
            let (_, other) = generate_keypair(&mut rng);
            let ct = encrypt_payload(&mut rng, &public, b"{\"score\":5}").unwrap();
            assert_eq!(decrypt_payload(&other, &ct), Err(CryptoError::DecryptFailure));
        }
    }

    #[test]
    fn any_single_bit_flip_is_detected() {
        let mut rng = rng();
        let (public, secret) = generate_keypair(&mut rng);
        let ct = encrypt_payload(&mut rng, &public, b"hi!").unwrap();
        for bit in 0..ct.len() * 8 {
            let mut bad = ct.clone();
            bad[bit / 8] ^= 1 << (bit % 8);
            assert_eq!(decrypt_payload(&secret, &bad), Err(CryptoError::DecryptFailure), "bit {bit}");
        }
    }

    #[test]
    fn truncated_and_empty() {
        let mut rng = rng();
        let (public, secret) = generate_keypair(&mut rng);
        let ct = encrypt_payload(&mut rng, &public, b"x").unwrap();
        for n in 0..ct.len() {
            assert_eq!(decrypt_payload(&secret, &ct[..n]), Err(CryptoError::DecryptFailure));
        }
        assert_eq!(encrypt_payload(&mut rng, &public, b""), Err(CryptoError::EmptyPlaintext));
    }

    #[test]
    fn public_key_derivation_matches() {
        let mut rng = rng();
        let (public, secret) = generate_keypair(&mut rng);
        assert_eq!(public_key_of(&secret), public);
    }
}
