//! Reusable health microservices: a watchable store, user management with
//! deidentification, questionnaires and GPS proximity tracing.
//!
//! Each is a plain library object; the scenarios attach them to topics
//! through connectors.

pub mod gps;
pub mod questionnaire;
pub mod store;
pub mod users;

pub use gps::GpsService;
pub use questionnaire::QuestionnaireService;
pub use store::{Change, Store, Watcher};
pub use users::{Session, UserRecord, UserService};
