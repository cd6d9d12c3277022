//! The routed message unit and its textual wire form.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::schema::SchemaRef;
use crate::Millis;

/// Header metadata plus a payload that is ciphertext when `encrypted` is set.
///
/// Serializes to the same JSON object as [`Envelope::encode`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Wire", into = "Wire")]
pub struct Envelope {
    pub topic: String,
    pub section: String,
    pub schema: SchemaRef,
    pub sender: String,
    pub message_id: String,
    pub sent_at: Millis,
    pub encrypted: bool,
    /// Present iff `encrypted`.
    pub key_id: Option<String>,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EnvelopeError {
    #[error("malformed envelope: {0}")]
    Malformed(String),
    #[error("malformed envelope: encrypted flag and keyId disagree")]
    KeyIdMismatch,
    #[error("malformed envelope: empty payload")]
    EmptyPayload,
    #[error("malformed envelope: payload is not base64url")]
    InvalidBase64,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
#[doc(hidden)]
pub struct Wire {
    topic: String,
    section: String,
    schema: String,
    schema_version: u32,
    sender: String,
    message_id: String,
    sent_at: Millis,
    encrypted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    key_id: Option<String>,
    payload: String,
}

impl Envelope {
    /// Checks the envelope invariants.
    pub fn check(&self) -> Result<(), EnvelopeError> {
        if self.encrypted != self.key_id.is_some() {
            return Err(EnvelopeError::KeyIdMismatch);
        }
        if self.payload.is_empty() {
            return Err(EnvelopeError::EmptyPayload);
        }
        Ok(())
    }

    /// Encodes the envelope into its one-object JSON wire form.
    pub fn encode(&self) -> Result<Vec<u8>, EnvelopeError> {
        self.check()?;
        serde_json::to_vec(self).map_err(|e| EnvelopeError::Malformed(e.to_string()))
    }

    /// Parses the wire form. Never needs the schema.
    pub fn parse(bytes: &[u8]) -> Result<Self, EnvelopeError> {
        let wire: Wire =
            serde_json::from_slice(bytes).map_err(|e| EnvelopeError::Malformed(e.to_string()))?;
        Self::from_wire(wire)
    }

    /// Parses the wire form from an already-decoded JSON value.
    pub fn from_json(value: &serde_json::Value) -> Result<Self, EnvelopeError> {
        let wire: Wire =
            Wire::deserialize(value).map_err(|e| EnvelopeError::Malformed(e.to_string()))?;
        Self::from_wire(wire)
    }

    pub fn to_json(&self) -> Result<serde_json::Value, EnvelopeError> {
        self.check()?;
        serde_json::to_value(self).map_err(|e| EnvelopeError::Malformed(e.to_string()))
    }

    fn from_wire(wire: Wire) -> Result<Self, EnvelopeError> {
        let payload = URL_SAFE_NO_PAD
            .decode(wire.payload.as_bytes())
            .map_err(|_| EnvelopeError::InvalidBase64)?;
        let env = Envelope {
            topic: wire.topic,
            section: wire.section,
            schema: SchemaRef::new(wire.schema, wire.schema_version),
            sender: wire.sender,
            message_id: wire.message_id,
            sent_at: wire.sent_at,
            encrypted: wire.encrypted,
            key_id: wire.key_id,
            payload,
        };
        env.check()?;
        Ok(env)
    }
}

impl From<Envelope> for Wire {
    fn from(e: Envelope) -> Self {
        Wire {
            topic: e.topic,
            section: e.section,
            schema: e.schema.name,
            schema_version: e.schema.version,
            sender: e.sender,
            message_id: e.message_id,
            sent_at: e.sent_at,
            encrypted: e.encrypted,
            key_id: e.key_id,
            payload: URL_SAFE_NO_PAD.encode(&e.payload),
        }
    }
}

impl TryFrom<Wire> for Envelope {
    type Error = EnvelopeError;

    fn try_from(w: Wire) -> Result<Self, Self::Error> {
        Envelope::from_wire(w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn sample() -> Envelope {
        Envelope {
            topic: "alerts".into(),
            section: "sec-0000".into(),
            schema: SchemaRef::new("AnomalyAlert", 1),
            sender: "ai2-detector".into(),
            message_id: "ai2-detector-1".into(),
            sent_at: 1_700_000_000_000,
            encrypted: false,
            key_id: None,
            payload: vec![0x7b],
        }
    }

    #[test]
    fn one_byte_payload_round_trip() {
        let e = sample();
        assert_eq!(Envelope::parse(&e.encode().unwrap()).unwrap(), e);
    }

    #[test]
    fn wire_form_is_the_documented_object() {
        let mut e = sample();
        e.encrypted = true;
        e.key_id = Some("k1".into());
        e.payload = vec![0xfb, 0xff];
        let text = String::from_utf8(e.encode().unwrap()).unwrap();
        assert_eq!(
            text,
            r#"{"topic":"alerts","section":"sec-0000","schema":"AnomalyAlert","schemaVersion":1,"sender":"ai2-detector","messageId":"ai2-detector-1","sentAt":1700000000000,"encrypted":true,"keyId":"k1","payload":"-_8"}"#
        );
    }

    #[test]
    fn encrypted_without_key_id_is_malformed() {
        let bytes = br#"{"topic":"t","section":"s","schema":"S","schemaVersion":1,"sender":"a","messageId":"m","sentAt":0,"encrypted":true,"payload":"AA"}"#;
        assert_eq!(Envelope::parse(bytes), Err(EnvelopeError::KeyIdMismatch));
    }

    #[test]
    fn key_id_without_encryption_is_malformed() {
        let bytes = br#"{"topic":"t","section":"s","schema":"S","schemaVersion":1,"sender":"a","messageId":"m","sentAt":0,"encrypted":false,"keyId":"k","payload":"AA"}"#;
        assert_eq!(Envelope::parse(bytes), Err(EnvelopeError::KeyIdMismatch));
    }

    #[test]
    fn missing_field_and_bad_base64() {
        let missing = br#"{"topic":"t","section":"s","schema":"S","schemaVersion":1,"messageId":"m","sentAt":0,"encrypted":false,"payload":"AA"}"#;
        assert!(matches!(Envelope::parse(missing), Err(EnvelopeError::Malformed(_))));
        let bad = br#"{"topic":"t","section":"s","schema":"S","schemaVersion":1,"sender":"a","messageId":"m","sentAt":0,"encrypted":false,"payload":"A+/="}"#;
        assert_eq!(Envelope::parse(bad), Err(EnvelopeError::InvalidBase64));
        let empty = br#"{"topic":"t","section":"s","schema":"S","schemaVersion":1,"sender":"a","messageId":"m","sentAt":0,"encrypted":false,"payload":""}"#;
        assert_eq!(Envelope::parse(empty), Err(EnvelopeError::EmptyPayload));
    }

    fn arb_envelope() -> impl Strategy<Value = Envelope> {
        (
            "[a-z0-9-]{1,64}",
            "[A-Za-z0-9._-]{1,20}",
            ("[A-Za-z]{1,12}", 1u32..50),
            "[A-Za-z0-9._-]{1,20}",
            "\\PC{1,24}",
            any::<i64>(),
            proptest::option::of("[A-Za-z0-9-]{1,16}"),
            proptest::collection::vec(any::<u8>(), 1..300),
        )
            .prop_map(|(topic, section, (sn, sv), sender, message_id, sent_at, key_id, payload)| Envelope {
                topic,
                section,
                schema: SchemaRef::new(sn, sv),
                sender,
                message_id,
                sent_at,
                encrypted: key_id.is_some(),
                key_id,
                payload,
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn random_envelopes_round_trip_byte_exactly(e in arb_envelope()) {
            let bytes = e.encode().unwrap();
            let back = Envelope::parse(&bytes).unwrap();
            prop_assert_eq!(&back, &e);
            prop_assert_eq!(back.encode().unwrap(), bytes);
        }
    }
}
