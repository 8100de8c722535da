//! Agent-assisted program generation for aggregate features: ask the model
//! for a program in the aggregation language, then parse, type-check, and
//! dry-run it before accepting.

use super::{evaluate, parse, AggregationProgram, PatientValues};
use crate::llm::{AgentRole, ChatRequest, LlmClient, LlmError};
use thiserror::Error;

pub const AGG_PROGRAM_SCHEMA_ID: &str = "aggregation_program_v1";

pub fn program_schema() -> serde_json::Value {
    serde_json::json!({
        "type": "object",
        "required": ["program"],
        "properties": {
            "program": {"type": "string"}
        }
    })
}

pub fn register_program_schema(client: &mut LlmClient) -> Result<(), LlmError> {
    client.register_schema(AGG_PROGRAM_SCHEMA_ID, &program_schema())
}

#[derive(Debug, Error)]
pub enum CodegenError {
    #[error("aggregate {feature}: no valid program after {attempts} attempts; last error: {last_error}")]
    Failed {
        feature: String,
        attempts: usize,
        last_error: String,
    },
    #[error("aggregate {0}: declared source list is empty")]
    NoSources(String),
    #[error(transparent)]
    Llm(#[from] LlmError),
}

#[derive(Debug, Clone)]
pub struct CodegenOutcome {
    pub program: AggregationProgram,
    /// Program texts in the order tried; more than one entry means the
    /// first emission failed and was repaired.
    pub attempts: Vec<String>,
}

const GRAMMAR_HINT: &str = "Write one expression in the aggregation language: numbers, \
feature references (scalar `total_cores_count`, per-subgroup wildcard `cancer_presence.*`, \
side-filtered `cancer_presence.left_*`), aggregators max/min/mean/sum/count/count_nonzero/\
count_if(cmp)/ratio/percent/any/all, arithmetic + - * /, comparisons < <= > >= == !=, and \
boolean and/or/not. Reference only the declared source features.";

/// Ask the agent for an aggregation program and validate it. A program must
/// parse, type-check, reference only declared sources, and survive a dry
/// run on sample patients. One repair retry with the parser diagnostics is
/// allowed before giving up.
pub fn generate_program(
    feature_name: &str,
    description: &str,
    instructions: &str,
    declared_sources: &[String],
    client: &LlmClient,
    seed: u64,
    dry_run_patients: &[PatientValues],
) -> Result<CodegenOutcome, CodegenError> {
    if declared_sources.is_empty() {
        return Err(CodegenError::NoSources(feature_name.to_string()));
    }

    let context = serde_json::json!({
        "op": "generate_program",
        "feature": feature_name,
        "sources": declared_sources,
    });
    let base_user = format!(
        "Aggregate feature: {feature_name}\nDescription: {description}\nComputation: {instructions}\n\
         Declared sources: {sources}\n{GRAMMAR_HINT}\n\
         Context: <<<{context}>>>\n\
         Respond with JSON {{\"program\": \"<expression>\"}}.",
        sources = declared_sources.join(", "),
    );

    let mut attempts = Vec::new();
    let mut last_error = String::new();
    for round in 0..2 {
        let user_text = if round == 0 {
            base_user.clone()
        } else {
            format!("{base_user}\n\nThe previous program was rejected: {last_error}\nEmit a corrected program.")
        };
        let req = ChatRequest::new(
            AgentRole::Aggregation,
            "You translate aggregate feature definitions into programs in a restricted aggregation language.",
            &user_text,
            AGG_PROGRAM_SCHEMA_ID,
        )
        .with_seed(seed);
        let payload = client.complete_structured(&req)?;
        let text = payload["program"].as_str().unwrap_or_default().to_string();
        attempts.push(text.clone());

        match parse(feature_name, &text, declared_sources) {
            Ok(program) => {
                for patient in dry_run_patients {
                    let _ = evaluate(&program, patient); // must be total; result may be missing
                }
                return Ok(CodegenOutcome { program, attempts });
            }
            Err(e) => last_error = e.to_string(),
        }
    }

    Err(CodegenError::Failed {
        feature: feature_name.to_string(),
        attempts: attempts.len(),
        last_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{Backend, MockResponder};
    use serde_json::json;
    use std::sync::{Arc, Mutex};

    struct ScriptedResponder {
        scripts: Mutex<Vec<serde_json::Value>>,
    }

    impl MockResponder for ScriptedResponder {
        fn respond(&self, _req: &ChatRequest) -> Result<serde_json::Value, String> {
            let mut s = self.scripts.lock().unwrap();
            if s.len() > 1 {
                Ok(s.remove(0))
            } else {
                Ok(s[0].clone())
            }
        }
    }

    fn client(scripts: Vec<serde_json::Value>) -> LlmClient {
        let mut c = LlmClient::new(Backend::Mock(Arc::new(ScriptedResponder {
            scripts: Mutex::new(scripts),
        })))
        .unwrap();
        register_program_schema(&mut c).unwrap();
        c
    }

    fn sources() -> Vec<String> {
        vec!["tumor_percentage".to_string()]
    }

    #[test]
    fn valid_program_is_accepted_first_try() {
        let c = client(vec![json!({"program": "max(tumor_percentage.*)"})]);
        let out = generate_program("max_tumor_percentage", "d", "i", &sources(), &c, 0, &[])
            .unwrap();
        assert_eq!(out.attempts.len(), 1);
        assert_eq!(out.program.source_text, "max(tumor_percentage.*)");
    }

    #[test]
    fn unparseable_then_valid_is_accepted_with_repair_history() {
        let c = client(vec![
            json!({"program": "max("}),
            json!({"program": "max(tumor_percentage.*)"}),
        ]);
        let out = generate_program("max_tumor_percentage", "d", "i", &sources(), &c, 0, &[])
            .unwrap();
        assert_eq!(out.attempts.len(), 2);
    }

    #[test]
    fn two_failures_give_up() {
        let c = client(vec![json!({"program": "max("})]);
        let err = generate_program("max_tumor_percentage", "d", "i", &sources(), &c, 0, &[])
            .unwrap_err();
        assert!(matches!(err, CodegenError::Failed { attempts: 2, .. }), "{err}");
    }

    #[test]
    fn empty_sources_is_a_precondition_error() {
        let c = client(vec![json!({"program": "1"})]);
        let err = generate_program("x", "d", "i", &[], &c, 0, &[]).unwrap_err();
        assert!(matches!(err, CodegenError::NoSources(_)));
    }
}
