//! Questionnaire definitions per study and response collection.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Arc, RwLock};

use dhlink_core::questionnaire::{QuestionnaireDef, QuestionnaireError, QuestionnaireResponse};

use crate::error::{fail, Code, Error, Result};
use crate::services::store::Store;

impl From<QuestionnaireError> for Error {
    fn from(e: QuestionnaireError) -> Self {
        let code = match e {
            QuestionnaireError::UnknownQuestionnaire(_) => Code::UnknownQuestionnaire,
            QuestionnaireError::InvalidAnswer { .. } => Code::InvalidAnswer,
            QuestionnaireError::MalformedDefinition(_) => Code::BadRequest,
        };
        Error::new(code, e.to_string())
    }
}

/// Store key of a response.
pub fn response_key(user_token: &str, questionnaire_id: &str, submitted_at: i64) -> String {
    format!("responses/{user_token}/{questionnaire_id}/{submitted_at:015}")
}

pub struct QuestionnaireService {
    defs: RwLock<BTreeMap<String, QuestionnaireDef>>,
    store: Arc<Store>,
}

impl QuestionnaireService {
    pub fn new(store: Arc<Store>) -> Self {
        Self { defs: RwLock::new(BTreeMap::new()), store }
    }

    /// Registers every `*.json` definition in `dir`, in file-name order.
    pub fn load_dir(&self, dir: &Path) -> Result<usize> {
        let mut paths: Vec<_> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        for p in &paths {
            let def: QuestionnaireDef = serde_json::from_slice(&std::fs::read(p)?)
                .map_err(|e| Error::new(Code::BadRequest, format!("{}: {e}", p.display())))?;
            self.register(def)?;
        }
        Ok(paths.len())
    }

    /// Adds or replaces a definition.
    pub fn register(&self, def: QuestionnaireDef) -> Result<()> {
        def.check()?;
        self.defs.write().unwrap_or_else(|e| e.into_inner()).insert(def.questionnaire_id.clone(), def);
        Ok(())
    }

    pub fn definition(&self, questionnaire_id: &str) -> Option<QuestionnaireDef> {
        self.defs.read().unwrap_or_else(|e| e.into_inner()).get(questionnaire_id).cloned()
    }

    pub fn definitions_for_study(&self, study_id: &str) -> Vec<QuestionnaireDef> {
        let defs = self.defs.read().unwrap_or_else(|e| e.into_inner());
        defs.values().filter(|d| d.study_id == study_id).cloned().collect()
    }

    /// Validates and stores a response, returning its store key.
    pub fn submit_response(&self, resp: &QuestionnaireResponse) -> Result<String> {
        let Some(def) = self.definition(&resp.questionnaire_id) else {
            return fail(Code::UnknownQuestionnaire, format!("no questionnaire `{}`", resp.questionnaire_id));
        };
        def.validate(resp)?;
        let key = response_key(&resp.user_token, &resp.questionnaire_id, resp.submitted_at);
        let v = serde_json::to_value(resp).map_err(|e| Error::new(Code::Internal, e.to_string()))?;
        self.store.put(&key, v)?;
        Ok(key)
    }

    /// Most recent stored response of a user to any questionnaire.
    pub fn latest_response(&self, user_token: &str) -> Option<QuestionnaireResponse> {
        self.store
            .scan_prefix(&format!("responses/{user_token}/"))
            .into_iter()
            .filter_map(|(_, v)| serde_json::from_value::<QuestionnaireResponse>(v).ok())
            .max_by_key(|r| r.submitted_at)
    }
}
