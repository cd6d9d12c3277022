//! The schema registry shared by discovery (which serves it) and the broker
//! (which checks topic schema references against it).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use dhlink_core::schema::{DataSchema, SchemaRef};

use crate::error::{fail, Code, Result};
use crate::persist;

pub struct SchemaRegistry {
    path: Option<PathBuf>,
    schemas: RwLock<BTreeMap<(String, u32), DataSchema>>,
}

impl SchemaRegistry {
    pub fn open(path: Option<&Path>) -> Result<Self> {
        let list: Vec<DataSchema> = match path {
            Some(p) => persist::read_json(p)?.unwrap_or_default(),
            None => Vec::new(),
        };
        let schemas = list.into_iter().map(|s| ((s.name.clone(), s.version), s)).collect();
        Ok(Self { path: path.map(Path::to_path_buf), schemas: RwLock::new(schemas) })
    }

    /// Registers `schema`. Re-registering an identical document is a no-op
    /// and returns `false`.
    pub fn register(&self, schema: &DataSchema) -> Result<bool> {
        if let Err(e) = schema.check() {
            return fail(Code::BadRequest, format!("schema {}: {e}", schema.name));
        }
        let mut map = self.schemas.write().unwrap_or_else(|e| e.into_inner());
        let key = (schema.name.clone(), schema.version);
        match map.get(&key) {
            Some(existing) if existing == schema => return Ok(false),
            Some(_) => return fail(Code::DuplicateName, format!("{} is registered with different fields", schema.reference())),
            None => {}
        }
        map.insert(key, schema.clone());
        if let Some(p) = &self.path {
            persist::write_json(p, &map.values().collect::<Vec<_>>())?;
        }
        Ok(true)
    }

    pub fn get(&self, r: &SchemaRef) -> Option<DataSchema> {
        self.schemas.read().unwrap_or_else(|e| e.into_inner()).get(&(r.name.clone(), r.version)).cloned()
    }

    pub fn contains(&self, r: &SchemaRef) -> bool {
        self.get(r).is_some()
    }
}
