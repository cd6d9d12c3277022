//! Allocation-only core of the DHLink platform.
//!
//! Everything in this crate is pure: no files, sockets, threads or clocks.
//! Time is always passed in as milliseconds since the Unix epoch, and
//! randomness comes from a caller-supplied CSPRNG. The `dhlink` crate
//! layers persistence, HTTP services, connectors and the CLIs on top.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod acl;
pub mod crypto;
pub mod deid;
pub mod dbscan;
pub mod envelope;
pub mod geo;
pub mod ident;
pub mod keycache;
pub mod lifecycle;
pub mod log;
pub mod proximity;
pub mod questionnaire;
pub mod schema;
pub mod value;

pub use envelope::Envelope;
pub use schema::{DataSchema, FieldKind, FieldSpec, ValidationReport};
pub use value::Value;

/// Milliseconds since the Unix epoch, UTC.
pub type Millis = i64;

pub const MS_PER_SECOND: Millis = 1_000;
pub const MS_PER_DAY: Millis = 86_400_000;
