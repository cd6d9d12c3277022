use std::fmt;

use serde::{Deserialize, Serialize};

/// Machine-readable failure kind, carried in every HTTP error body.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Code {
    BadRequest,
    NotAdmin,
    Unauthorized,
    UnknownService,
    BadCredential,
    DuplicateName,
    UnknownSchema,
    UnknownTopic,
    UnknownSection,
    TopicRetired,
    TopicNotReady,
    EnvelopeMismatch,
    NotSectionOwner,
    MalformedEnvelope,
    DuplicateEntry,
    UnknownEntry,
    ActiveKeyExists,
    NotFound,
    UnknownName,
    IllegalTransition,
    InvalidInfo,
    SchemaViolation,
    KeyUnavailable,
    DecryptFailure,
    BrokerUnreachable,
    EndpointUnreachable,
    DuplicateApp,
    UnknownApp,
    MalformedProposal,
    WrongState,
    PartialFailure,
    ConnectivityCheckFailed,
    NotConfirmed,
    Locked,
    UnknownQuestionnaire,
    InvalidAnswer,
    DuplicateUser,
    UnknownUser,
    SetupIncomplete,
    InfeasiblePlant,
    Io,
    Internal,
}

impl Code {
    pub fn as_str(self) -> &'static str {
        match self {
            Code::BadRequest => "bad-request",
            Code::NotAdmin => "not-admin",
            Code::Unauthorized => "unauthorized",
            Code::UnknownService => "unknown-service",
            Code::BadCredential => "bad-credential",
            Code::DuplicateName => "duplicate-name",
            Code::UnknownSchema => "unknown-schema",
            Code::UnknownTopic => "unknown-topic",
            Code::UnknownSection => "unknown-section",
            Code::TopicRetired => "topic-retired",
            Code::TopicNotReady => "topic-not-ready",
            Code::EnvelopeMismatch => "envelope-mismatch",
            Code::NotSectionOwner => "not-section-owner",
            Code::MalformedEnvelope => "malformed-envelope",
            Code::DuplicateEntry => "duplicate-entry",
            Code::UnknownEntry => "unknown-entry",
            Code::ActiveKeyExists => "active-key-exists",
            Code::NotFound => "not-found",
            Code::UnknownName => "unknown-name",
            Code::IllegalTransition => "illegal-transition",
            Code::InvalidInfo => "invalid-info",
            Code::SchemaViolation => "schema-violation",
            Code::KeyUnavailable => "key-unavailable",
            Code::DecryptFailure => "decrypt-failure",
            Code::BrokerUnreachable => "broker-unreachable",
            Code::EndpointUnreachable => "endpoint-unreachable",
            Code::DuplicateApp => "duplicate-app",
            Code::UnknownApp => "unknown-app",
            Code::MalformedProposal => "malformed-proposal",
            Code::WrongState => "wrong-state",
            Code::PartialFailure => "partial-failure",
            Code::ConnectivityCheckFailed => "connectivity-check-failed",
            Code::NotConfirmed => "not-confirmed",
            Code::Locked => "locked",
            Code::UnknownQuestionnaire => "unknown-questionnaire",
            Code::InvalidAnswer => "invalid-answer",
            Code::DuplicateUser => "duplicate-user",
            Code::UnknownUser => "unknown-user",
            Code::SetupIncomplete => "setup-incomplete",
            Code::InfeasiblePlant => "infeasible-plant",
            Code::Io => "io",
            Code::Internal => "internal",
        }
    }

    pub fn http_status(self) -> u16 {
        use Code::*;
        match self {
            BadRequest | MalformedEnvelope | EnvelopeMismatch | InvalidInfo | SchemaViolation | MalformedProposal
            | InvalidAnswer | NotConfirmed | InfeasiblePlant | DecryptFailure => 400,
            UnknownService | BadCredential => 401,
            NotAdmin | Unauthorized | NotSectionOwner => 403,
            UnknownSchema | UnknownTopic | UnknownSection | UnknownEntry | NotFound | UnknownName | UnknownApp
            | UnknownQuestionnaire | UnknownUser => 404,
            DuplicateName | TopicRetired | TopicNotReady | DuplicateEntry | ActiveKeyExists | IllegalTransition
            | DuplicateApp | WrongState | PartialFailure | Locked | DuplicateUser | KeyUnavailable
            | SetupIncomplete => 409,
            BrokerUnreachable | EndpointUnreachable | ConnectivityCheckFailed => 503,
            Io | Internal => 500,
        }
    }

    /// Process exit code used by the command line tools.
    pub fn exit_code(self) -> i32 {
        use Code::*;
        match self {
            WrongState | IllegalTransition | NotConfirmed | DuplicateApp | DuplicateName | DuplicateEntry
            | ActiveKeyExists | TopicRetired | TopicNotReady | PartialFailure | Locked => 3,
            BrokerUnreachable | EndpointUnreachable | ConnectivityCheckFailed | Io => 4,
            _ => 2,
        }
    }
}

impl fmt::Display for Code {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Error {
    #[serde(rename = "error")]
    pub code: Code,
    pub message: String,
}

impl Error {
    pub fn new(code: Code, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }

    pub fn is(&self, code: Code) -> bool {
        self.code == code
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.message.is_empty() {
            write!(f, "{}", self.code)
        } else {
            write!(f, "{}: {}", self.code, self.message)
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::new(Code::Io, e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::new(Code::BadRequest, e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Shorthand for `Err(Error::new(code, msg))`.
pub fn fail<T>(code: Code, message: impl Into<String>) -> Result<T> {
    Err(Error::new(code, message))
}
