//! User management and deidentification.
//!
//! User records live in their own store. Everything shared beyond this
//! service carries only the deidentification token.

use std::path::Path;
use std::sync::{Arc, Mutex};

use rand::rngs::OsRng;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use dhlink_core::deid::{deid_token, fingerprint};

use crate::error::{fail, Code, Error, Result};
use crate::persist;
use crate::services::store::Store;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct UserRecord {
    pub user_id: String,
    pub display_name: String,
    pub credential_fingerprint: String,
    pub roles: Vec<String>,
    pub deid_token: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Session {
    pub user_id: String,
    pub deid_token: String,
    pub roles: Vec<String>,
}

/// Reads the service secret at `path`, creating a random one (owner-only)
/// on first use.
pub fn load_or_create_secret(path: &Path) -> Result<Vec<u8>> {
    match std::fs::read(path) {
        Ok(bytes) if !bytes.is_empty() => Ok(bytes),
        Ok(_) => fail(Code::Io, format!("{} is empty", path.display())),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            if let Some(d) = path.parent() {
                std::fs::create_dir_all(d)?;
            }
            let mut secret = vec![0u8; 32];
            OsRng.fill_bytes(&mut secret);
            persist::write_atomic(path, &secret, true)?;
            Ok(secret)
        }
        Err(e) => Err(e.into()),
    }
}

pub struct UserService {
    secret: Vec<u8>,
    store: Arc<Store>,
    register: Mutex<()>,
}

const PREFIX: &str = "users/";

impl UserService {
    pub fn new(store: Arc<Store>, secret: Vec<u8>) -> Self {
        Self { secret, store, register: Mutex::new(()) }
    }

    fn record(&self, user_id: &str) -> Result<UserRecord> {
        let v = self
            .store
            .get(&format!("{PREFIX}{user_id}"))
            .ok_or_else(|| Error::new(Code::UnknownUser, format!("no user `{user_id}`")))?;
        serde_json::from_value(v).map_err(|e| Error::new(Code::Internal, e.to_string()))
    }

    pub fn users(&self) -> Vec<UserRecord> {
        self.store.scan_prefix(PREFIX).into_iter().filter_map(|(_, v)| serde_json::from_value(v).ok()).collect()
    }

    pub fn register_user(&self, display_name: &str, credential: &str, roles: &[&str]) -> Result<String> {
        if display_name.is_empty() || credential.is_empty() {
            return fail(Code::BadRequest, "display name and credential are required");
        }
        let _g = self.register.lock().unwrap_or_else(|e| e.into_inner());
        let users = self.users();
        if users.iter().any(|u| u.display_name == display_name) {
            return fail(Code::DuplicateUser, format!("user `{display_name}` exists"));
        }
        let user_id = format!("user-{:06}", users.len() + 1);
        let rec = UserRecord {
            user_id: user_id.clone(),
            display_name: display_name.into(),
            credential_fingerprint: fingerprint(credential),
            roles: roles.iter().map(|r| r.to_string()).collect(),
            deid_token: deid_token(&self.secret, &user_id),
        };
        let v = serde_json::to_value(&rec).map_err(|e| Error::new(Code::Internal, e.to_string()))?;
        self.store.put(&format!("{PREFIX}{user_id}"), v)?;
        Ok(user_id)
    }

    pub fn deidentify(&self, user_id: &str) -> Result<String> {
        self.record(user_id)?;
        Ok(deid_token(&self.secret, user_id))
    }

    pub fn authenticate_user(&self, display_name: &str, credential: &str) -> Result<Session> {
        let fp = fingerprint(credential);
        self.users()
            .into_iter()
            .find(|u| u.display_name == display_name && u.credential_fingerprint == fp)
            .map(|u| Session { user_id: u.user_id, deid_token: u.deid_token, roles: u.roles })
            .ok_or_else(|| Error::new(Code::BadCredential, "unknown user or wrong credential"))
    }
}
