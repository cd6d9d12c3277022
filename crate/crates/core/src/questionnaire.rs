//! Questionnaire definitions and answer validation.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::value::Value;
use crate::Millis;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum QuestionKind {
    SingleChoice,
    MultiChoice,
    NumericScale { min: f64, max: f64 },
    FreeText,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Question {
    pub qid: String,
    pub text: String,
    #[serde(flatten)]
    pub kind: QuestionKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub options: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct QuestionnaireDef {
    pub study_id: String,
    pub questionnaire_id: String,
    pub questions: Vec<Question>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub qid: String,
    pub value: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct QuestionnaireResponse {
    pub user_token: String,
    pub questionnaire_id: String,
    pub answers: Vec<Answer>,
    pub submitted_at: Millis,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum QuestionnaireError {
    #[error("unknown-questionnaire `{0}`")]
    UnknownQuestionnaire(String),
    #[error("invalid-answer for `{qid}`: {constraint}")]
    InvalidAnswer { qid: String, constraint: String },
    #[error("malformed definition: {0}")]
    MalformedDefinition(String),
}

fn invalid(qid: &str, constraint: impl Into<String>) -> QuestionnaireError {
    QuestionnaireError::InvalidAnswer { qid: qid.into(), constraint: constraint.into() }
}

impl QuestionnaireDef {
    pub fn check(&self) -> Result<(), QuestionnaireError> {
        let mut seen = BTreeSet::new();
        for q in &self.questions {
            if !seen.insert(q.qid.as_str()) {
                return Err(QuestionnaireError::MalformedDefinition(format!("duplicate qid `{}`", q.qid)));
            }
            match q.kind {
                QuestionKind::SingleChoice | QuestionKind::MultiChoice if q.options.is_empty() => {
                    return Err(QuestionnaireError::MalformedDefinition(format!("`{}` has no options", q.qid)));
                }
                QuestionKind::NumericScale { min, max } if !(min <= max) => {
                    return Err(QuestionnaireError::MalformedDefinition(format!("`{}` has min > max", q.qid)));
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn question(&self, qid: &str) -> Option<&Question> {
        self.questions.iter().find(|q| q.qid == qid)
    }

    /// Checks every answer against its question's constraint.
    pub fn validate(&self, resp: &QuestionnaireResponse) -> Result<(), QuestionnaireError> {
        if resp.questionnaire_id != self.questionnaire_id {
            return Err(QuestionnaireError::UnknownQuestionnaire(resp.questionnaire_id.clone()));
        }
        let mut answered = BTreeSet::new();
        for a in &resp.answers {
            let q = self.question(&a.qid).ok_or_else(|| invalid(&a.qid, "no such question"))?;
            if !answered.insert(a.qid.as_str()) {
                return Err(invalid(&a.qid, "answered twice"));
            }
            match (&q.kind, &a.value) {
                (QuestionKind::SingleChoice, Value::String(s)) => {
                    if !q.options.contains(s) {
                        return Err(invalid(&a.qid, format!("`{s}` is not an option")));
                    }
                }
                (QuestionKind::MultiChoice, Value::Array(items)) => {
                    for item in items {
                        match item.as_str() {
                            Some(s) if q.options.iter().any(|o| o == s) => {}
                            _ => return Err(invalid(&a.qid, "every choice must be an option")),
                        }
                    }
                }
                (QuestionKind::NumericScale { min, max }, Value::Number(n)) => {
                    let x = n.as_f64().unwrap_or(f64::NAN);
                    if !(*min <= x && x <= *max) {
                        return Err(invalid(&a.qid, format!("must be within [{min}, {max}]")));
                    }
                }
                (QuestionKind::FreeText, Value::String(_)) => {}
                _ => return Err(invalid(&a.qid, "wrong answer kind")),
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use serde_json::json;

    fn def() -> QuestionnaireDef {
        serde_json::from_value(json!({
            "studyId": "mindtick",
            "questionnaireId": "daily-mood",
            "questions": [
                {"qid": "mood", "text": "Mood today", "kind": "numeric-scale", "min": 0.0, "max": 10.0},
                {"qid": "sleep", "text": "Slept well?", "kind": "single-choice", "options": ["yes", "no"]},
                {"qid": "tags", "text": "Tags", "kind": "multi-choice", "options": ["a", "b"]},
                {"qid": "note", "text": "Anything else", "kind": "free-text"}
            ]
        }))
        .unwrap()
    }

    fn resp(answers: Vec<Answer>) -> QuestionnaireResponse {
        QuestionnaireResponse { user_token: "t".into(), questionnaire_id: "daily-mood".into(), answers, submitted_at: 0 }
    }

    fn ans(qid: &str, value: Value) -> Answer {
        Answer { qid: qid.into(), value }
    }

    #[test]
    fn definition_is_well_formed() {
        def().check().unwrap();
    }

    #[test]
    fn numeric_scale_bounds() {
        assert!(def().validate(&resp(vec![ans("mood", json!(5))])).is_ok());
        assert_eq!(
            def().validate(&resp(vec![ans("mood", json!(11))])),
            Err(invalid("mood", "must be within [0, 10]"))
        );
    }

    #[test]
    fn choice_constraints() {
        assert!(def().validate(&resp(vec![ans("sleep", json!("yes")), ans("tags", json!(["a", "b"]))])).is_ok());
        assert!(matches!(
            def().validate(&resp(vec![ans("sleep", json!("maybe"))])),
            Err(QuestionnaireError::InvalidAnswer { qid, .. }) if qid == "sleep"
        ));
        assert!(def().validate(&resp(vec![ans("tags", json!(["c"]))])).is_err());
    }

    #[test]
    fn unknown_qid_and_duplicates() {
        assert!(def().validate(&resp(vec![ans("zzz", json!("x"))])).is_err());
        assert!(def().validate(&resp(vec![ans("note", json!("x")), ans("note", json!("y"))])).is_err());
        assert!(def().validate(&resp(vec![ans("note", json!(3))])).is_err());
    }

    #[test]
    fn malformed_definitions() {
        let mut d = def();
        d.questions[1].options.clear();
        assert!(d.check().is_err());
        let mut d = def();
        d.questions[0].kind = QuestionKind::NumericScale { min: 3.0, max: 1.0 };
        assert!(d.check().is_err());
    }
}
