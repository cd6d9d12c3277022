//! DHLink platform services and tooling.
//!
//! - [`broker`], [`discovery`] and [`security`] are the core services,
//!   usable in-process or over HTTP ([`http`]).
//! - [`connector`] holds the source and sink pipelines.
//! - [`admin`] drives application lifecycles.
//! - [`services`] are the reusable health microservices.
//! - [`scenario`] runs the two reference applications on simulated time.

pub mod admin;
pub mod api;
pub mod broker;
pub mod clock;
pub mod connector;
pub mod discovery;
pub mod http;
pub mod error;
pub mod persist;
pub mod platform;
pub mod scenario;
pub mod schemas;
pub mod security;
pub mod services;

pub use dhlink_core as core;
pub use error::{Code, Error, Result};
