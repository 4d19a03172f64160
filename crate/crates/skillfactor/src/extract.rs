//! Stage 3: draft one typed contract per candidate cluster through a
//! completion backend, with a strict schema validator and structural refusal.
//!
//! The backend gets one call per cluster. Its raw text is validated against
//! the contract schema: schema-valid drafts pass through, an explicit
//! `_extraction_failed` marker becomes a refusal, and anything else gets one
//! bounded re-ask with the schema error appended before being refused as a
//! schema error. Refusals are data, not errors; the pipeline records them and
//! moves on.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::backend::{CompletionBackend, CONTRACT_EXTRACTOR_PROMPT};
use crate::error::Result;
use crate::parser::SkillLibrary;
use crate::propose::CandidateCluster;
use crate::verify::VerifierProfile;

/// A typed input field of a contract.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputField {
    pub name: String,
    #[serde(rename = "type", default = "default_type")]
    pub type_tag: String,
    #[serde(default = "default_true")]
    pub required: bool,
}

/// A typed output field of a contract.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputField {
    pub name: String,
    #[serde(rename = "type", default = "default_type")]
    pub type_tag: String,
}

fn default_type() -> String {
    "text".into()
}

fn default_true() -> bool {
    true
}

/// The typed pseudocode contract: the structured surrogate for a cluster.
///
/// `bindings` and `verifier_stats` start empty on a fresh draft; the verifier
/// and the binding-extraction pass fill them in later.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Contract {
    pub id: String,
    /// One-line natural-language invocation condition.
    pub trigger: String,
    pub input_schema: Vec<InputField>,
    pub output_schema: Vec<OutputField>,
    #[serde(default)]
    pub preconditions: Vec<String>,
    #[serde(default)]
    pub postconditions: Vec<String>,
    /// Bundled scripts, references, external tools.
    #[serde(default)]
    pub resources: Vec<String>,
    /// Declared filesystem / network / user-visible effects.
    #[serde(default)]
    pub side_effects: Vec<String>,
    #[serde(default)]
    pub source_parents: BTreeSet<String>,
    /// Per-call-site map `parent#ordinal -> input name -> verbatim substring`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub bindings: BTreeMap<String, BTreeMap<String, String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verifier_stats: Option<VerifierProfile>,
    /// Unknown draft fields, preserved verbatim.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extras: BTreeMap<String, Value>,
}

impl Contract {
    pub fn required_inputs(&self) -> impl Iterator<Item = &InputField> {
        self.input_schema.iter().filter(|i| i.required)
    }

    /// All contract-side text: id, trigger, schemas, predicates. Used by the
    /// no-new-content containment checks.
    pub fn full_text(&self) -> String {
        let mut parts: Vec<String> = vec![self.id.clone(), self.trigger.clone()];
        for i in &self.input_schema {
            parts.push(i.name.clone());
            parts.push(i.type_tag.clone());
        }
        for o in &self.output_schema {
            parts.push(o.name.clone());
            parts.push(o.type_tag.clone());
        }
        parts.extend(self.preconditions.iter().cloned());
        parts.extend(self.postconditions.iter().cloned());
        parts.extend(self.resources.iter().cloned());
        parts.extend(self.side_effects.iter().cloned());
        parts.join("\n")
    }
}

/// Why a cluster did not produce a contract.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefusalReason {
    /// The model judged the cluster too heterogeneous to unify.
    ExtractionFailed,
    /// The reply never validated against the contract schema.
    SchemaError,
}

/// Outcome of drafting one cluster: a draft or a refusal, never both.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum ExtractionOutcome {
    Draft { contract: Contract },
    Refusal { reason: RefusalReason, detail: String },
}

impl ExtractionOutcome {
    pub fn as_draft(&self) -> Option<&Contract> {
        match self {
            ExtractionOutcome::Draft { contract } => Some(contract),
            ExtractionOutcome::Refusal { .. } => None,
        }
    }
}

/// First schema violation found in a draft, as a field path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemaError {
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for SchemaError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

const KNOWN_FIELDS: &[&str] = &[
    "id", "trigger", "input_schema", "output_schema", "preconditions",
    "postconditions", "resources", "side_effects",
];

/// Validate raw backend text against the contract schema.
///
/// Accepts only JSON objects carrying the required IR fields with correct
/// shapes; unknown fields are preserved in [`Contract::extras`]. Total on
/// arbitrary text: any input produces either a draft or a `SchemaError`.
pub fn validate_draft(raw: &str) -> std::result::Result<Contract, SchemaError> {
    let value = parse_lenient_json(raw)
        .ok_or_else(|| SchemaError { path: "$".into(), message: "not a JSON object".into() })?;
    let obj = value
        .as_object()
        .ok_or_else(|| SchemaError { path: "$".into(), message: "not a JSON object".into() })?;

    let id = require_string(obj, "id")?;
    if id.is_empty() {
        return Err(SchemaError { path: "id".into(), message: "must be non-empty".into() });
    }
    let trigger = require_string(obj, "trigger")?;

    let input_schema = require_array(obj, "input_schema")?
        .iter()
        .enumerate()
        .map(|(idx, entry)| parse_input_field(entry, idx))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let output_schema = require_array(obj, "output_schema")?
        .iter()
        .enumerate()
        .map(|(idx, entry)| parse_output_field(entry, idx))
        .collect::<std::result::Result<Vec<_>, _>>()?;

    let preconditions = optional_string_list(obj, "preconditions")?;
    let postconditions = optional_string_list(obj, "postconditions")?;
    let resources = optional_string_list(obj, "resources")?;
    let side_effects = optional_string_list(obj, "side_effects")?;

    let extras: BTreeMap<String, Value> = obj
        .iter()
        .filter(|(k, _)| !KNOWN_FIELDS.contains(&k.as_str()))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();

    Ok(Contract {
        id,
        trigger,
        input_schema,
        output_schema,
        preconditions,
        postconditions,
        resources,
        side_effects,
        source_parents: BTreeSet::new(),
        bindings: BTreeMap::new(),
        verifier_stats: None,
        extras,
    })
}

/// Parse raw text as JSON, tolerating a fenced ```json block around it.
pub fn parse_lenient_json(raw: &str) -> Option<Value> {
    if let Ok(v) = serde_json::from_str::<Value>(raw.trim()) {
        return Some(v);
    }
    let trimmed = raw.trim();
    if let Some(start) = trimmed.find("```") {
        let after = &trimmed[start + 3..];
        let after = after.strip_prefix("json").unwrap_or(after);
        if let Some(end) = after.find("```") {
            if let Ok(v) = serde_json::from_str::<Value>(after[..end].trim()) {
                return Some(v);
            }
        }
    }
    // last resort: first balanced object
    let start = trimmed.find('{')?;
    let mut depth = 0;
    for (idx, ch) in trimmed[start..].char_indices() {
        match ch {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return serde_json::from_str(&trimmed[start..start + idx + 1]).ok();
                }
            }
            _ => {}
        }
    }
    None
}

fn require_string(
    obj: &serde_json::Map<String, Value>,
    key: &str,
) -> std::result::Result<String, SchemaError> {
    match obj.get(key) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(SchemaError { path: key.into(), message: "must be a string".into() }),
        None => Err(SchemaError { path: key.into(), message: "missing required field".into() }),
    }
}

fn require_array<'a>(
    obj: &'a serde_json::Map<String, Value>,
    key: &str,
) -> std::result::Result<&'a Vec<Value>, SchemaError> {
    match obj.get(key) {
        Some(Value::Array(a)) => Ok(a),
        Some(_) => Err(SchemaError { path: key.into(), message: "must be an array".into() }),
        None => Err(SchemaError { path: key.into(), message: "missing required field".into() }),
    }
}

fn optional_string_list(
    obj: &serde_json::Map<String, Value>,
    key: &str,
) -> std::result::Result<Vec<String>, SchemaError> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(Vec::new()),
        Some(Value::Array(a)) => a
            .iter()
            .enumerate()
            .map(|(idx, v)| {
                v.as_str().map(String::from).ok_or_else(|| SchemaError {
                    path: format!("{key}[{idx}]"),
                    message: "must be a string".into(),
                })
            })
            .collect(),
        Some(_) => Err(SchemaError { path: key.into(), message: "must be an array".into() }),
    }
}

fn parse_input_field(entry: &Value, idx: usize) -> std::result::Result<InputField, SchemaError> {
    let obj = entry.as_object().ok_or_else(|| SchemaError {
        path: format!("input_schema[{idx}]"),
        message: "must be an object".into(),
    })?;
    let name = obj.get("name").and_then(|v| v.as_str()).ok_or_else(|| SchemaError {
        path: format!("input_schema[{idx}].name"),
        message: "missing required field".into(),
    })?;
    if name.is_empty() {
        return Err(SchemaError {
            path: format!("input_schema[{idx}].name"),
            message: "must be non-empty".into(),
        });
    }
    Ok(InputField {
        name: name.to_string(),
        type_tag: obj.get("type").and_then(|v| v.as_str()).unwrap_or("text").to_string(),
        required: obj.get("required").and_then(|v| v.as_bool()).unwrap_or(true),
    })
}

fn parse_output_field(entry: &Value, idx: usize) -> std::result::Result<OutputField, SchemaError> {
    let obj = entry.as_object().ok_or_else(|| SchemaError {
        path: format!("output_schema[{idx}]"),
        message: "must be an object".into(),
    })?;
    let name = obj.get("name").and_then(|v| v.as_str()).ok_or_else(|| SchemaError {
        path: format!("output_schema[{idx}].name"),
        message: "missing required field".into(),
    })?;
    Ok(OutputField {
        name: name.to_string(),
        type_tag: obj.get("type").and_then(|v| v.as_str()).unwrap_or("text").to_string(),
    })
}

/// Check for the explicit `_extraction_failed` refusal marker.
fn refusal_of(raw: &str) -> Option<String> {
    let value = parse_lenient_json(raw)?;
    if value.get("_extraction_failed").and_then(|v| v.as_bool()) == Some(true) {
        let reason = value
            .get("reason")
            .and_then(|v| v.as_str())
            .unwrap_or("unspecified")
            .to_string();
        return Some(reason);
    }
    None
}

/// The user payload handed to the extraction backend for one cluster.
pub fn extraction_payload(cluster: &CandidateCluster, library: &SkillLibrary) -> Value {
    let units: Vec<Value> = cluster
        .member_units
        .iter()
        .filter_map(|r| {
            let parent = library.parent(&r.parent_id)?;
            let unit = parent.units.get(r.ordinal)?;
            Some(json!({
                "parent_id": r.parent_id,
                "ordinal": r.ordinal,
                "heading": unit.heading,
                "text": unit.text(),
            }))
        })
        .collect();
    json!({
        "cluster_id": cluster.id,
        "frame": {
            "verb": cluster.frame_signature.verb,
            "objects": cluster.frame_signature.objects,
            "code_langs": cluster.frame_signature.code_langs,
            "linked_scripts": cluster.frame_signature.linked_scripts,
        },
        "units": units,
    })
}

/// Draft a contract for one cluster: one backend call on the happy path, at
/// most two including the bounded re-ask.
pub fn draft_contract(
    cluster: &CandidateCluster,
    library: &SkillLibrary,
    backend: &dyn CompletionBackend,
) -> Result<ExtractionOutcome> {
    let payload = extraction_payload(cluster, library).to_string();
    let raw = backend.complete(CONTRACT_EXTRACTOR_PROMPT, &payload)?;

    if let Some(reason) = refusal_of(&raw) {
        return Ok(ExtractionOutcome::Refusal {
            reason: RefusalReason::ExtractionFailed,
            detail: reason,
        });
    }
    let first_err = match validate_draft(&raw) {
        Ok(contract) => return Ok(finish_draft(contract, cluster)),
        Err(e) => e,
    };

    // One corrective retry with the schema error appended, then refuse.
    let retry_payload = json!({
        "cluster_id": cluster.id,
        "schema_error": first_err.to_string(),
        "previous_reply": raw,
        "instruction": "Return ONLY the corrected strict-JSON contract object.",
        "original": serde_json::from_str::<Value>(&payload).unwrap_or(Value::Null),
    })
    .to_string();
    let raw2 = backend.complete(CONTRACT_EXTRACTOR_PROMPT, &retry_payload)?;
    if let Some(reason) = refusal_of(&raw2) {
        return Ok(ExtractionOutcome::Refusal {
            reason: RefusalReason::ExtractionFailed,
            detail: reason,
        });
    }
    match validate_draft(&raw2) {
        Ok(contract) => Ok(finish_draft(contract, cluster)),
        Err(second_err) => Ok(ExtractionOutcome::Refusal {
            reason: RefusalReason::SchemaError,
            detail: format!("first: {first_err}; retry: {second_err}"),
        }),
    }
}

fn finish_draft(mut contract: Contract, cluster: &CandidateCluster) -> ExtractionOutcome {
    contract.source_parents = cluster.source_parents.clone();
    ExtractionOutcome::Draft { contract }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::MockBackend;
    use crate::embed::LocalEmbedder;
    use crate::parser::parse_document;
    use crate::propose::cluster_candidates;
    use std::cell::Cell;
    use std::path::Path;

    fn minimal_draft() -> Value {
        json!({
            "id": "k1",
            "trigger": "do the thing",
            "input_schema": [{ "name": "object", "type": "text", "required": true }],
            "output_schema": [{ "name": "result", "type": "text" }],
            "preconditions": []
        })
    }

    #[test]
    fn minimal_valid_draft_accepted() {
        let contract = validate_draft(&minimal_draft().to_string()).unwrap();
        assert_eq!(contract.id, "k1");
        assert!(contract.preconditions.is_empty());
        assert!(contract.postconditions.is_empty());
    }

    #[test]
    fn missing_trigger_is_schema_error() {
        let mut draft = minimal_draft();
        draft.as_object_mut().unwrap().remove("trigger");
        let err = validate_draft(&draft.to_string()).unwrap_err();
        assert_eq!(err.path, "trigger");
    }

    #[test]
    fn input_entry_without_name_is_schema_error() {
        let mut draft = minimal_draft();
        draft["input_schema"][0].as_object_mut().unwrap().remove("name");
        let err = validate_draft(&draft.to_string()).unwrap_err();
        assert_eq!(err.path, "input_schema[0].name");
    }

    #[test]
    fn unknown_fields_land_in_extras() {
        let mut draft = minimal_draft();
        draft["rationale"] = json!("because");
        let contract = validate_draft(&draft.to_string()).unwrap();
        assert_eq!(contract.extras.get("rationale"), Some(&json!("because")));
    }

    #[test]
    fn fenced_json_still_validates() {
        let raw = format!("```json\n{}\n```", minimal_draft());
        assert!(validate_draft(&raw).is_ok());
    }

    struct CountingBackend<'a> {
        inner: &'a dyn CompletionBackend,
        calls: Cell<usize>,
    }

    impl CompletionBackend for CountingBackend<'_> {
        fn complete(&self, system: &str, user: &str) -> crate::Result<String> {
            self.calls.set(self.calls.get() + 1);
            self.inner.complete(system, user)
        }
    }

    struct FixedBackend(String);

    impl CompletionBackend for FixedBackend {
        fn complete(&self, _system: &str, _user: &str) -> crate::Result<String> {
            Ok(self.0.clone())
        }
    }

    fn two_unit_cluster() -> (SkillLibrary, CandidateCluster) {
        let a = parse_document(
            Path::new("a.md"),
            "## Move\nMove the object (salt 1) from the source (counter 1) to the target (cabinet 2).\n",
            vec![],
        );
        let b = parse_document(
            Path::new("b.md"),
            "## Move\nMove the object (mug 1) from the source (table 1) to the target (shelf 2).\n",
            vec![],
        );
        let lib = SkillLibrary { source_dir: String::new(), parents: vec![a, b] };
        let clusters = cluster_candidates(&lib, &LocalEmbedder, 0.5).unwrap();
        assert_eq!(clusters.len(), 1);
        (lib, clusters.into_iter().next().unwrap())
    }

    #[test]
    fn canned_object_transfer_draft_round_trips() {
        let (lib, cluster) = two_unit_cluster();
        let canned = json!({
            &cluster.id: {
                "id": "object-transfer",
                "trigger": "move an object from a source to a target",
                "input_schema": [
                    { "name": "object", "type": "text", "required": true },
                    { "name": "source", "type": "text", "required": true },
                    { "name": "target", "type": "text", "required": true }
                ],
                "output_schema": [{ "name": "object_at_target", "type": "state" }],
                "preconditions": ["the object is at the source"],
                "postconditions": ["the object is at the target"]
            }
        });
        let mock = MockBackend::new().with_canned_contracts(canned).unwrap();
        let counting = CountingBackend { inner: &mock, calls: Cell::new(0) };
        let outcome = draft_contract(&cluster, &lib, &counting).unwrap();
        let contract = outcome.as_draft().expect("draft");
        assert_eq!(contract.id, "object-transfer");
        let names: Vec<&str> = contract.input_schema.iter().map(|i| i.name.as_str()).collect();
        assert_eq!(names, vec!["object", "source", "target"]);
        assert_eq!(contract.source_parents.len(), 2);
        // exactly one backend call on the happy path
        assert_eq!(counting.calls.get(), 1);
    }

    #[test]
    fn explicit_refusal_marker_becomes_refusal() {
        let (lib, cluster) = two_unit_cluster();
        let backend =
            FixedBackend(json!({ "_extraction_failed": true, "reason": "heterogeneous" }).to_string());
        let outcome = draft_contract(&cluster, &lib, &backend).unwrap();
        match outcome {
            ExtractionOutcome::Refusal { reason, detail } => {
                assert_eq!(reason, RefusalReason::ExtractionFailed);
                assert_eq!(detail, "heterogeneous");
            }
            _ => panic!("expected refusal"),
        }
    }

    #[test]
    fn persistent_prose_refused_after_one_retry() {
        let (lib, cluster) = two_unit_cluster();
        let prose = FixedBackend("I cannot express this as JSON, sorry.".into());
        let counting = CountingBackend { inner: &prose, calls: Cell::new(0) };
        let outcome = draft_contract(&cluster, &lib, &counting).unwrap();
        match outcome {
            ExtractionOutcome::Refusal { reason, .. } => {
                assert_eq!(reason, RefusalReason::SchemaError)
            }
            _ => panic!("expected refusal"),
        }
        // at most two calls including the bounded re-ask
        assert_eq!(counting.calls.get(), 2);
    }

    #[test]
    fn validator_total_on_arbitrary_text() {
        for raw in ["", "{", "null", "[1,2]", "{\"id\": 3}", "```json\n{\n```"] {
            let _ = validate_draft(raw);
        }
    }
}
