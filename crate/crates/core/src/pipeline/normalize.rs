//! Maps free-text failure reasons from external datasets to taxonomy codes
//! through the classifier prompt.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::par_map;
use crate::gateway::{ChatMessage, Gateway, AGENT_TEMPERATURE};
use crate::prompts::render_classifier_prompt;
use crate::taxonomy::{canonical_mode, AttributionMap, ErrorMode};

/// An externally labeled record. Fields other than the ones named here are
/// carried through untouched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalRecord {
    pub id: String,
    #[serde(default, alias = "agent_name", skip_serializing_if = "Option::is_none")]
    pub mistake_agent: Option<String>,
    pub mistake_reason: String,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedRecord {
    #[serde(flatten)]
    pub record: ExternalRecord,
    pub error_type: Option<ErrorMode>,
    pub unmapped: bool,
    /// Classifier calls made for this record.
    pub attempts: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl NormalizedRecord {
    /// Single-entry label for records with a known agent and a mapped code.
    pub fn attribution(&self) -> Option<AttributionMap> {
        let agent = self.record.mistake_agent.as_deref()?.trim();
        if agent.is_empty() {
            return None;
        }
        Some(AttributionMap::from_pairs([(agent, self.error_type?)]))
    }
}

/// Accepts a bare code, tolerating surrounding whitespace, quotes, backticks
/// and a trailing period.
pub fn parse_classifier_output(text: &str) -> Option<ErrorMode> {
    let trimmed = text.trim().trim_end_matches('.').trim_matches(|c: char| c == '"' || c == '\'' || c == '`' || c.is_whitespace());
    canonical_mode(trimmed).ok()
}

pub fn normalize_record(record: ExternalRecord, gateway: &Gateway) -> NormalizedRecord {
    let prompt = render_classifier_prompt(&record.mistake_reason);
    let req = gateway.request(vec![ChatMessage::user(prompt)], AGENT_TEMPERATURE);
    let mut last_output = None;
    for attempt in 1..=2 {
        match gateway.complete(&req) {
            Ok(text) => {
                if let Some(mode) = parse_classifier_output(&text) {
                    return NormalizedRecord { record, error_type: Some(mode), unmapped: false, attempts: attempt, note: None };
                }
                last_output = Some(text);
            }
            Err(e) => {
                return NormalizedRecord {
                    record,
                    error_type: None,
                    unmapped: true,
                    attempts: attempt,
                    note: Some(format!("gateway error: {e}")),
                }
            }
        }
    }
    NormalizedRecord {
        record,
        error_type: None,
        unmapped: true,
        attempts: 2,
        note: last_output.map(|o| format!("invalid classifier output: {:?}", o.trim())),
    }
}

/// Normalizes every record; failures flag the record and never abort the
/// batch. Output order matches input order.
pub fn normalize_external_labels(records: Vec<ExternalRecord>, gateway: &Gateway, parallel: usize) -> Vec<NormalizedRecord> {
    par_map(&records, parallel, |r| normalize_record(r.clone(), gateway))
}
