//! Completion backends for the three LLM-aware passes (contract extraction,
//! binding extraction, rewrite cleanup).
//!
//! The trait is deliberately thin: a backend turns (system prompt, user
//! payload) into raw text, and all validation happens downstream in the
//! stage's deterministic post-checks. The mock backend is rule-based and
//! fully offline; it is what CI and `--backend mock` runs use.

use std::collections::BTreeMap;

use serde_json::{json, Value};

use crate::error::{Error, Result};

/// System prompt for the stage-3 contract extractor.
pub const CONTRACT_EXTRACTOR_PROMPT: &str = include_str!("prompts/contract_extractor.txt");
/// System prompt for the binding-extraction (BE) pass.
pub const BINDING_EXTRACTION_PROMPT: &str = include_str!("prompts/binding_extraction.txt");
/// System prompt for the rewrite-cleanup (RC) pass.
pub const REWRITE_CLEANUP_PROMPT: &str = include_str!("prompts/rewrite_cleanup.txt");

/// A completion backend. Returns raw text; validity is the caller's problem.
pub trait CompletionBackend {
    fn complete(&self, system: &str, user: &str) -> Result<String>;
}

/// Decoding knobs surfaced to live backends. Defaults to temperature 0.
#[derive(Debug, Clone)]
pub struct DecodingConfig {
    pub temperature: f64,
    pub max_tokens: Option<u32>,
}

impl Default for DecodingConfig {
    fn default() -> Self {
        Self { temperature: 0.0, max_tokens: None }
    }
}

/// Rule-based offline backend.
///
/// * Contract extraction: answers from a canned table keyed by cluster id
///   when one is loaded, otherwise synthesizes a draft from the cluster's
///   shared tokens.
/// * Binding extraction: judges a unit spurious when its heading marks it as
///   a resource list or risk note, otherwise binds each input by looking for
///   `<input words> (<value>)` in the unit text.
/// * Rewrite cleanup: rewrites `Action: put X in/on Y` conflict lines into
///   the invoke form using the parent's recorded bindings.
#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    canned_contracts: BTreeMap<String, Value>,
}

impl MockBackend {
    pub fn new() -> Self {
        Self::default()
    }

    /// Load canned contract drafts: a JSON object mapping cluster id to the
    /// raw draft object the "model" should return.
    pub fn with_canned_contracts(mut self, table: Value) -> Result<Self> {
        let obj = table
            .as_object()
            .ok_or_else(|| Error::Config("canned contract table must be a JSON object".into()))?;
        for (k, v) in obj {
            self.canned_contracts.insert(k.clone(), v.clone());
        }
        Ok(self)
    }

    pub fn from_canned_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let table: Value = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("bad canned contract file: {e}")))?;
        Self::new().with_canned_contracts(table)
    }

    fn extract_contract(&self, payload: &Value) -> String {
        let cluster_id = payload["cluster_id"].as_str().unwrap_or_default();
        if let Some(canned) = self.canned_contracts.get(cluster_id) {
            return canned.to_string();
        }
        synthesize_draft(cluster_id, payload).to_string()
    }

    fn judge_binding(&self, payload: &Value) -> String {
        let heading = payload["unit_heading"].as_str().unwrap_or_default().to_lowercase();
        let unit_text = payload["unit_text"].as_str().unwrap_or_default();
        if heading.contains("resource") || heading.contains("risk") {
            return json!({
                "should_invoke": false,
                "confidence": "high",
                "bindings": {},
                "residual_parent_text": "",
                "rationale": "unit mentions the contract's domain without invoking it"
            })
            .to_string();
        }
        let mut bindings = serde_json::Map::new();
        let mut all_bound = true;
        if let Some(inputs) = payload["contract"]["input_schema"].as_array() {
            for input in inputs {
                let name = input["name"].as_str().unwrap_or_default();
                match find_parenthesized_value(unit_text, name) {
                    Some(value) => {
                        bindings.insert(name.to_string(), Value::String(value));
                    }
                    None => all_bound = false,
                }
            }
        }
        let residual = unit_text
            .lines()
            .find(|l| l.trim_start().starts_with("Note:"))
            .map(|l| l.trim().to_string())
            .unwrap_or_default();
        json!({
            "should_invoke": all_bound,
            "confidence": if all_bound { "high" } else { "low" },
            "bindings": Value::Object(bindings),
            "residual_parent_text": residual,
            "rationale": if all_bound { "all inputs grounded in the unit text" } else { "missing grounded binding" }
        })
        .to_string()
    }

    fn cleanup_rewrite(&self, payload: &Value) -> String {
        let skeleton = payload["skeleton"].as_str().unwrap_or_default();
        let contracts = payload["contracts"].as_array().cloned().unwrap_or_default();
        let mut out_lines: Vec<String> = Vec::new();
        let mut skip_next_observation = false;
        for line in skeleton.lines() {
            let trimmed = line.trim_start();
            if skip_next_observation && trimmed.starts_with("Observation:") {
                skip_next_observation = false;
                continue;
            }
            if let Some(rest) = trimmed.strip_prefix("Action: put ") {
                if let Some((obj, target)) = rest.split_once(" in/on ") {
                    if let Some(call) = render_conflict_invoke(&contracts, obj.trim(), target.trim())
                    {
                        out_lines.push(format!("Action: {call}"));
                        skip_next_observation = true;
                        continue;
                    }
                }
            }
            out_lines.push(line.to_string());
        }
        let mut cleaned = out_lines.join("\n");
        if skeleton.ends_with('\n') {
            cleaned.push('\n');
        }
        json!({ "skeleton": cleaned }).to_string()
    }
}

/// Find `... <input words> (<value>)` in prose; underscores in the input name
/// match spaces in the text.
fn find_parenthesized_value(text: &str, input_name: &str) -> Option<String> {
    let needle = input_name.replace('_', " ").to_lowercase();
    let lower = text.to_lowercase();
    let mut search = 0;
    while let Some(pos) = lower[search..].find(&needle) {
        let after = search + pos + needle.len();
        let rest = &text[after..];
        let rest_trim = rest.trim_start();
        if let Some(inner) = rest_trim.strip_prefix('(') {
            if let Some(end) = inner.find(')') {
                let value = inner[..end].trim();
                if !value.is_empty() {
                    return Some(value.to_string());
                }
            }
        }
        search = after;
    }
    None
}

/// Build the invoke call for a conflicting `put X in/on Y` line from the
/// first contract whose recorded bindings mention the object.
fn render_conflict_invoke(contracts: &[Value], object: &str, target: &str) -> Option<String> {
    for contract in contracts {
        let id = contract["id"].as_str()?;
        let bindings = contract["bindings_for_parent"].as_object();
        if let Some(map) = bindings {
            let mentions_object = map.values().any(|v| v.as_str() == Some(object));
            let mentions_target = map.values().any(|v| v.as_str() == Some(target));
            if mentions_object || mentions_target {
                let mut parts: Vec<String> = map
                    .iter()
                    .map(|(k, v)| format!("{k}=\"{}\"", v.as_str().unwrap_or_default()))
                    .collect();
                parts.sort();
                return Some(format!("invoke({id}, {{{}}})", parts.join(", ")));
            }
        }
    }
    None
}

/// Deterministic draft for clusters without a canned answer: shared tokens
/// become the trigger and inputs.
fn synthesize_draft(cluster_id: &str, payload: &Value) -> Value {
    let verb = payload["frame"]["verb"].as_str().unwrap_or("perform");
    let empty = Vec::new();
    let units = payload["units"].as_array().unwrap_or(&empty);
    let mut shared: Option<std::collections::BTreeSet<String>> = None;
    for unit in units {
        let toks = crate::text::token_set(unit["text"].as_str().unwrap_or_default());
        shared = Some(match shared {
            None => toks,
            Some(prev) => prev.intersection(&toks).cloned().collect(),
        });
    }
    let objects: Vec<String> = payload["frame"]["objects"]
        .as_array()
        .map(|a| a.iter().filter_map(|v| v.as_str().map(String::from)).collect())
        .unwrap_or_default();
    let shared = shared.unwrap_or_default();
    let inputs: Vec<Value> = objects
        .iter()
        .filter(|o| shared.contains(*o))
        .take(3)
        .map(|name| json!({ "name": name, "type": "text", "required": true }))
        .collect();
    json!({
        "id": format!("auto-{cluster_id}"),
        "trigger": format!("{verb} {}", inputs.iter().filter_map(|i| i["name"].as_str()).collect::<Vec<_>>().join(" ")),
        "input_schema": inputs,
        "output_schema": [{ "name": "result", "type": "text" }],
        "preconditions": [],
        "postconditions": [],
        "side_effects": [],
        "rationale": "synthesized from shared cluster tokens"
    })
}

impl CompletionBackend for MockBackend {
    fn complete(&self, system: &str, user: &str) -> Result<String> {
        let payload: Value = serde_json::from_str(user).unwrap_or(Value::Null);
        if system == CONTRACT_EXTRACTOR_PROMPT {
            Ok(self.extract_contract(&payload))
        } else if system == BINDING_EXTRACTION_PROMPT {
            Ok(self.judge_binding(&payload))
        } else if system == REWRITE_CLEANUP_PROMPT {
            Ok(self.cleanup_rewrite(&payload))
        } else {
            Err(Error::Backend {
                context: "mock".into(),
                message: "unrecognized system prompt".into(),
            })
        }
    }
}

/// Live backend speaking the common chat-completions wire shape.
#[cfg(feature = "remote")]
pub struct HttpCompletionBackend {
    pub base_url: String,
    pub model: String,
    pub api_key: String,
    pub decoding: DecodingConfig,
    client: reqwest::blocking::Client,
}

#[cfg(feature = "remote")]
impl HttpCompletionBackend {
    pub fn new(base_url: String, model: String, api_key: String, decoding: DecodingConfig) -> Self {
        Self { base_url, model, api_key, decoding, client: reqwest::blocking::Client::new() }
    }
}

#[cfg(feature = "remote")]
impl CompletionBackend for HttpCompletionBackend {
    fn complete(&self, system: &str, user: &str) -> Result<String> {
        let url = format!("{}/chat/completions", self.base_url.trim_end_matches('/'));
        let mut body = json!({
            "model": self.model,
            "temperature": self.decoding.temperature,
            "messages": [
                { "role": "system", "content": system },
                { "role": "user", "content": user }
            ]
        });
        if let Some(max) = self.decoding.max_tokens {
            body["max_tokens"] = json!(max);
        }
        let resp = self
            .client
            .post(&url)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| Error::Backend { context: "chat".into(), message: e.to_string() })?;
        let status = resp.status();
        let value: Value = resp
            .json()
            .map_err(|e| Error::Backend { context: "chat".into(), message: e.to_string() })?;
        if !status.is_success() {
            return Err(Error::Backend {
                context: "chat".into(),
                message: format!("status {status}: {value}"),
            });
        }
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(String::from)
            .ok_or_else(|| Error::Backend {
                context: "chat".into(),
                message: "response missing choices[0].message.content".into(),
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mock_routes_by_system_prompt() {
        let mock = MockBackend::new();
        let err = mock.complete("something else", "{}").unwrap_err();
        assert!(matches!(err, Error::Backend { .. }));
    }

    #[test]
    fn canned_contract_wins_over_synthesizer() {
        let mock = MockBackend::new()
            .with_canned_contracts(json!({ "cluster-000": { "id": "canned" } }))
            .unwrap();
        let payload = json!({ "cluster_id": "cluster-000" }).to_string();
        let out = mock.complete(CONTRACT_EXTRACTOR_PROMPT, &payload).unwrap();
        assert!(out.contains("canned"));
    }

    #[test]
    fn be_mock_binds_parenthesized_values() {
        let mock = MockBackend::new();
        let payload = json!({
            "contract": { "input_schema": [
                { "name": "object", "type": "text", "required": true },
                { "name": "source_receptacle", "type": "text", "required": true }
            ]},
            "parent_id": "p",
            "unit_heading": "Transport Procedure",
            "unit_text": "Move the object (laptop 1) from the source receptacle (bed 2) now."
        })
        .to_string();
        let out = mock.complete(BINDING_EXTRACTION_PROMPT, &payload).unwrap();
        let v: Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["should_invoke"], Value::Bool(true));
        assert_eq!(v["bindings"]["object"], "laptop 1");
        assert_eq!(v["bindings"]["source_receptacle"], "bed 2");
    }

    #[test]
    fn be_mock_drops_resource_and_risk_units() {
        let mock = MockBackend::new();
        for heading in ["Bundled Resources", "Risk"] {
            let payload = json!({
                "contract": { "input_schema": [] },
                "parent_id": "p",
                "unit_heading": heading,
                "unit_text": "mentions the object (x) but is not an invocation"
            })
            .to_string();
            let out = mock.complete(BINDING_EXTRACTION_PROMPT, &payload).unwrap();
            let v: Value = serde_json::from_str(&out).unwrap();
            assert_eq!(v["should_invoke"], Value::Bool(false), "heading {heading}");
        }
    }

    #[test]
    fn rc_mock_rewrites_put_conflict() {
        let mock = MockBackend::new();
        let payload = json!({
            "parent_id": "p",
            "skeleton": "## Examples\nAction: put laptop 1 in/on desk 1\nObservation: You put the laptop 1 in/on the desk 1.\n",
            "contracts": [{
                "id": "alfworld-object-management",
                "bindings_for_parent": {
                    "object": "laptop 1",
                    "source_receptacle": "bed 2",
                    "target_receptacle": "desk 1"
                }
            }]
        })
        .to_string();
        let out = mock.complete(REWRITE_CLEANUP_PROMPT, &payload).unwrap();
        let v: Value = serde_json::from_str(&out).unwrap();
        let skeleton = v["skeleton"].as_str().unwrap();
        assert!(skeleton.contains(
            "invoke(alfworld-object-management, {object=\"laptop 1\", source_receptacle=\"bed 2\", target_receptacle=\"desk 1\"})"
        ));
        assert!(!skeleton.contains("put laptop 1 in/on desk 1"));
        assert!(!skeleton.contains("Observation:"));
    }
}
