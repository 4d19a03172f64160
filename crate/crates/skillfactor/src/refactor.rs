//! Stage 5: refactor the library around verified contracts.
//!
//! For each promoted contract the stage (i) detects call-sites
//! deterministically — one per member unit of the contract's cluster — then
//! (ii) runs the Binding Extraction (BE) pass, whose backend judgment is
//! gated by a deterministic post-check (no empty bindings, every binding
//! token-overlaps the unit), (iii) rewrites each parent skeleton by replacing
//! confirmed call-site units with one-line `invoke(contract, {args})`
//! placeholders, and (iv) runs the Rewrite Cleanup (RC) pass, again gated: a
//! cleaned skeleton must keep every invoked contract referenced and must not
//! introduce content absent from the original parent and the contracts.
//! BE and RC failures degrade gracefully; they never abort the build.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::backend::{CompletionBackend, BINDING_EXTRACTION_PROMPT, REWRITE_CLEANUP_PROMPT};
use crate::error::{Error, Result};
use crate::extract::Contract;
use crate::parser::{ParentSkill, SkillLibrary};
use crate::propose::CandidateCluster;
use crate::text;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SiteStatus {
    Detected,
    BeConfirmed,
    BeDropped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BeConfidence {
    Low,
    Medium,
    High,
}

/// One potential `invoke` location inside a parent.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CallSite {
    pub parent_id: String,
    pub ordinal: usize,
    pub contract_id: String,
    pub status: SiteStatus,
    /// Verbatim source substrings per input name, filled by BE.
    #[serde(default)]
    pub bindings: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub be_confidence: Option<BeConfidence>,
    /// Parent-specific text BE wants kept next to the placeholder.
    #[serde(default)]
    pub residual_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drop_reason: Option<String>,
}

impl CallSite {
    pub fn site_key(&self) -> String {
        format!("{}#{}", self.parent_id, self.ordinal)
    }
}

/// Deterministic call-site detection: one detected site per member unit of
/// the contract's cluster. No model involved.
pub fn detect_call_sites(contract_id: &str, cluster: &CandidateCluster) -> Vec<CallSite> {
    cluster
        .member_units
        .iter()
        .map(|unit_ref| CallSite {
            parent_id: unit_ref.parent_id.clone(),
            ordinal: unit_ref.ordinal,
            contract_id: contract_id.to_string(),
            status: SiteStatus::Detected,
            bindings: BTreeMap::new(),
            be_confidence: None,
            residual_text: String::new(),
            drop_reason: None,
        })
        .collect()
}

/// A parsed BE backend judgment, before the deterministic post-check.
#[derive(Debug, Clone, Deserialize)]
pub struct BeJudgment {
    pub should_invoke: bool,
    #[serde(default)]
    pub confidence: Option<String>,
    #[serde(default)]
    pub bindings: BTreeMap<String, String>,
    #[serde(default)]
    pub residual_parent_text: String,
}

fn parse_judgment(raw: &str) -> Option<BeJudgment> {
    let value = crate::extract::parse_lenient_json(raw)?;
    serde_json::from_value(value).ok()
}

/// The deterministic BE post-check. Pure; fuzzed directly in tests.
///
/// Drops the site when the judgment says not to invoke, when any required
/// input lacks a binding, or when any provided binding's tokens do not
/// overlap the unit text.
pub fn be_post_check(
    judgment: &BeJudgment,
    contract: &Contract,
    unit_text: &str,
) -> std::result::Result<(), String> {
    if !judgment.should_invoke {
        return Err("should_invoke_false".into());
    }
    for input in contract.required_inputs() {
        if !judgment.bindings.contains_key(&input.name) {
            return Err(format!("missing_binding:{}", input.name));
        }
    }
    let unit_tokens = text::token_set(unit_text);
    for (name, value) in &judgment.bindings {
        let value_tokens = text::token_set(value);
        if value_tokens.is_empty() || value_tokens.intersection(&unit_tokens).next().is_none() {
            return Err(format!("binding_overlap:{name}"));
        }
    }
    Ok(())
}

fn confidence_of(raw: &Option<String>) -> Option<BeConfidence> {
    match raw.as_deref() {
        Some("low") => Some(BeConfidence::Low),
        Some("medium") => Some(BeConfidence::Medium),
        Some("high") => Some(BeConfidence::High),
        _ => None,
    }
}

/// Run the BE pass on one detected call-site.
///
/// One backend call, one bounded re-ask on a malformed judgment, then the
/// post-check decides confirmed vs dropped.
pub fn be_pass(
    mut site: CallSite,
    contract: &Contract,
    library: &SkillLibrary,
    backend: &dyn CompletionBackend,
) -> Result<CallSite> {
    let unit = library
        .parent(&site.parent_id)
        .and_then(|p| p.units.get(site.ordinal))
        .ok_or_else(|| {
            Error::Integrity(format!("call-site {} points at a missing unit", site.site_key()))
        })?;
    let unit_text = unit.text();
    let payload = json!({
        "contract": {
            "id": contract.id,
            "trigger": contract.trigger,
            "input_schema": contract.input_schema,
        },
        "parent_id": site.parent_id,
        "unit_heading": unit.heading,
        "unit_text": unit_text,
    })
    .to_string();

    let raw = backend.complete(BINDING_EXTRACTION_PROMPT, &payload)?;
    let judgment = match parse_judgment(&raw) {
        Some(j) => Some(j),
        None => {
            let retry = backend.complete(BINDING_EXTRACTION_PROMPT, &payload)?;
            parse_judgment(&retry)
        }
    };
    let Some(judgment) = judgment else {
        site.status = SiteStatus::BeDropped;
        site.drop_reason = Some("judgment_unparseable".into());
        return Ok(site);
    };

    match be_post_check(&judgment, contract, &unit_text) {
        Ok(()) => {
            site.status = SiteStatus::BeConfirmed;
            site.bindings = judgment.bindings;
            site.be_confidence = confidence_of(&judgment.confidence);
            site.residual_text = judgment.residual_parent_text;
        }
        Err(reason) => {
            site.status = SiteStatus::BeDropped;
            site.drop_reason = Some(reason);
        }
    }
    Ok(site)
}

/// Render the one-line placeholder: `invoke(id, {a="x", b="y"})`, names
/// sorted so diffs are stable.
pub fn render_invoke(contract_id: &str, bindings: &BTreeMap<String, String>) -> String {
    let args: Vec<String> =
        bindings.iter().map(|(k, v)| format!("{k}=\"{v}\"")).collect();
    format!("invoke({contract_id}, {{{}}})", args.join(", "))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RcStatus {
    NotRun,
    Clean,
    Rewritten,
    Failed,
}

/// One placeholder spliced into a rewritten parent.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlaceholderBlock {
    pub placeholder: String,
    pub contract_id: String,
    pub ordinal: usize,
    pub bindings: BTreeMap<String, String>,
    pub residual_text: String,
    /// The verbatim unit body the placeholder replaced.
    pub original_unit_text: String,
}

/// A parent rewritten around invoke placeholders.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RewrittenParent {
    pub parent_id: String,
    pub skeleton: String,
    pub invoked_contracts: BTreeSet<String>,
    /// Placeholder line -> verbatim replaced unit body (bundle input).
    pub original_unit_texts: BTreeMap<String, String>,
    pub blocks: Vec<PlaceholderBlock>,
    pub rc_status: RcStatus,
}

/// Replace each confirmed site's unit body with its placeholder line.
///
/// Headings are retained, BE residual text lands directly below the
/// placeholder, and untouched sections are preserved verbatim.
pub fn rewrite_parent(
    parent: &ParentSkill,
    sites: &[CallSite],
    contracts: &BTreeMap<String, Contract>,
) -> Result<RewrittenParent> {
    let mut by_ordinal: BTreeMap<usize, &CallSite> = BTreeMap::new();
    for site in sites {
        if site.status != SiteStatus::BeConfirmed {
            continue;
        }
        if site.parent_id != parent.id {
            return Err(Error::Integrity(format!(
                "site {} does not belong to parent {}",
                site.site_key(),
                parent.id
            )));
        }
        if by_ordinal.insert(site.ordinal, site).is_some() {
            return Err(Error::Integrity(format!(
                "overlapping call-sites in unit {}",
                site.site_key()
            )));
        }
    }

    let mut skeleton = String::with_capacity(parent.render().len());
    skeleton.push_str(&parent.frontmatter_raw);
    let mut blocks = Vec::new();
    let mut invoked = BTreeSet::new();
    let mut originals = BTreeMap::new();

    for unit in &parent.units {
        skeleton.push_str(&unit.heading_raw);
        match by_ordinal.get(&unit.ordinal) {
            None => skeleton.push_str(&unit.body),
            Some(site) => {
                let contract = contracts.get(&site.contract_id).ok_or_else(|| {
                    Error::Integrity(format!(
                        "site {} references unknown contract {}",
                        site.site_key(),
                        site.contract_id
                    ))
                })?;
                let placeholder = render_invoke(&contract.id, &site.bindings);
                skeleton.push_str(&placeholder);
                skeleton.push('\n');
                if !site.residual_text.is_empty() {
                    skeleton.push_str(&site.residual_text);
                    skeleton.push('\n');
                }
                skeleton.push('\n');
                invoked.insert(contract.id.clone());
                originals.insert(placeholder.clone(), unit.body.clone());
                blocks.push(PlaceholderBlock {
                    placeholder,
                    contract_id: contract.id.clone(),
                    ordinal: unit.ordinal,
                    bindings: site.bindings.clone(),
                    residual_text: site.residual_text.clone(),
                    original_unit_text: unit.body.clone(),
                });
            }
        }
    }

    Ok(RewrittenParent {
        parent_id: parent.id.clone(),
        skeleton,
        invoked_contracts: invoked,
        original_unit_texts: originals,
        blocks,
        rc_status: RcStatus::NotRun,
    })
}

/// Tokens a cleaned skeleton line may use: the original parent, the invoked
/// contracts, and the placeholder grammar itself.
fn allowed_tokens(parent: &ParentSkill, contracts: &BTreeMap<String, Contract>) -> BTreeSet<String> {
    let mut allowed = text::token_set(&parent.render());
    for contract in contracts.values() {
        allowed.extend(text::token_set(&contract.full_text()));
    }
    allowed.insert("invoke".into());
    allowed
}

/// Check that every non-empty skeleton line is token-contained in the
/// allowed set. Returns the first offending line.
pub fn no_new_content(
    skeleton: &str,
    parent: &ParentSkill,
    contracts: &BTreeMap<String, Contract>,
) -> std::result::Result<(), String> {
    let allowed = allowed_tokens(parent, contracts);
    for line in skeleton.lines() {
        for token in text::token_set(line) {
            if !allowed.contains(&token) {
                return Err(format!("line introduces `{token}`: {line}"));
            }
        }
    }
    Ok(())
}

/// Run the RC pass on one rewritten parent: a single backend call proposing
/// a cleaned skeleton, accepted only if its deterministic post-check holds.
/// Any failure keeps the pre-RC skeleton and marks the parent `failed`.
pub fn rc_pass(
    mut rewritten: RewrittenParent,
    parent: &ParentSkill,
    contracts: &BTreeMap<String, Contract>,
    backend: &dyn CompletionBackend,
) -> RewrittenParent {
    if rewritten.blocks.is_empty() {
        return rewritten;
    }
    let contract_payload: Vec<Value> = rewritten
        .invoked_contracts
        .iter()
        .filter_map(|id| contracts.get(id))
        .map(|c| {
            let bindings_for_parent = rewritten
                .blocks
                .iter()
                .find(|b| b.contract_id == c.id)
                .map(|b| b.bindings.clone())
                .unwrap_or_default();
            json!({
                "id": c.id,
                "trigger": c.trigger,
                "input_schema": c.input_schema,
                "output_schema": c.output_schema,
                "bindings_for_parent": bindings_for_parent,
            })
        })
        .collect();
    let payload = json!({
        "parent_id": rewritten.parent_id,
        "skeleton": rewritten.skeleton,
        "contracts": contract_payload,
    })
    .to_string();

    let cleaned = backend
        .complete(REWRITE_CLEANUP_PROMPT, &payload)
        .ok()
        .and_then(|raw| crate::extract::parse_lenient_json(&raw))
        .and_then(|v| v.get("skeleton").and_then(|s| s.as_str()).map(String::from));

    let Some(cleaned) = cleaned else {
        rewritten.rc_status = RcStatus::Failed;
        return rewritten;
    };

    let references_kept = rewritten
        .invoked_contracts
        .iter()
        .all(|id| cleaned.contains(id.as_str()));
    if !references_kept || no_new_content(&cleaned, parent, contracts).is_err() {
        rewritten.rc_status = RcStatus::Failed;
        return rewritten;
    }

    rewritten.rc_status =
        if cleaned == rewritten.skeleton { RcStatus::Clean } else { RcStatus::Rewritten };
    rewritten.skeleton = cleaned;
    rewritten
}

/// Index entry for one parent of the refactored library.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PassthroughParent {
    pub parent_id: String,
    pub rel_path: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RefactorSummary {
    pub sites_detected: usize,
    pub sites_confirmed: usize,
    pub sites_dropped: usize,
    pub drop_reasons: BTreeMap<String, usize>,
    pub rc_clean: usize,
    pub rc_rewritten: usize,
    pub rc_failed: usize,
}

/// The converted library: rewritten parents, the child-contract store, and
/// the untouched parents passed through.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RefactoredLibrary {
    /// Promoted contracts keyed by id, bindings filled per call-site.
    pub children: BTreeMap<String, Contract>,
    pub rewritten: Vec<RewrittenParent>,
    pub passthrough: Vec<PassthroughParent>,
    pub call_sites: Vec<CallSite>,
    pub summary: RefactorSummary,
}

impl RefactoredLibrary {
    pub fn rewritten_parent(&self, parent_id: &str) -> Option<&RewrittenParent> {
        self.rewritten.iter().find(|r| r.parent_id == parent_id)
    }
}

/// Assemble the refactored library and write its artifacts under `out_dir`:
///
/// * `library/<rel_path>` — every parent, rewritten content where touched
/// * `library/<child_id>/SKILL.md` + `contract.json` — child contract dirs
/// * `rewritten/<parent_id>.rewritten.md` — one per touched parent
pub fn emit_refactored_library(
    library: &SkillLibrary,
    rewritten: Vec<RewrittenParent>,
    contracts: &BTreeMap<String, Contract>,
    call_sites: Vec<CallSite>,
    out_dir: &Path,
) -> Result<RefactoredLibrary> {
    for id in contracts.keys() {
        if let Some(parent) = library.parent(id) {
            return Err(Error::Integrity(format!(
                "child contract id `{id}` collides with parent at {}; refusing to emit",
                parent.rel_path
            )));
        }
    }

    let touched: BTreeSet<&str> =
        rewritten.iter().map(|r| r.parent_id.as_str()).collect();
    let lib_dir = out_dir.join("library");
    let rewritten_dir = out_dir.join("rewritten");
    std::fs::create_dir_all(&lib_dir).map_err(|e| Error::io(lib_dir.display().to_string(), e))?;
    std::fs::create_dir_all(&rewritten_dir)
        .map_err(|e| Error::io(rewritten_dir.display().to_string(), e))?;

    let mut passthrough = Vec::new();
    for parent in &library.parents {
        let dest = lib_dir.join(&parent.rel_path);
        if let Some(dir) = dest.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        }
        let content = match rewritten.iter().find(|r| r.parent_id == parent.id) {
            Some(r) => r.skeleton.clone(),
            None => parent.render(),
        };
        std::fs::write(&dest, &content).map_err(|e| Error::io(dest.display().to_string(), e))?;
        if !touched.contains(parent.id.as_str()) {
            passthrough.push(PassthroughParent {
                parent_id: parent.id.clone(),
                rel_path: parent.rel_path.clone(),
            });
        }
    }

    for r in &rewritten {
        let dest = rewritten_dir.join(format!("{}.rewritten.md", r.parent_id));
        std::fs::write(&dest, &r.skeleton)
            .map_err(|e| Error::io(dest.display().to_string(), e))?;
    }

    for (id, contract) in contracts {
        let child_dir = lib_dir.join(id);
        std::fs::create_dir_all(&child_dir)
            .map_err(|e| Error::io(child_dir.display().to_string(), e))?;
        let record = serde_json::to_string_pretty(contract)
            .map_err(|e| Error::Other(format!("serialize contract {id}: {e}")))?;
        std::fs::write(child_dir.join("contract.json"), record)
            .map_err(|e| Error::io(child_dir.display().to_string(), e))?;
        std::fs::write(child_dir.join("SKILL.md"), child_summary(contract))
            .map_err(|e| Error::io(child_dir.display().to_string(), e))?;
    }

    let mut summary = RefactorSummary::default();
    for site in &call_sites {
        match site.status {
            SiteStatus::Detected => {}
            SiteStatus::BeConfirmed => summary.sites_confirmed += 1,
            SiteStatus::BeDropped => {
                summary.sites_dropped += 1;
                let reason = site.drop_reason.clone().unwrap_or_else(|| "unspecified".into());
                *summary.drop_reasons.entry(reason).or_insert(0) += 1;
            }
        }
        summary.sites_detected += 1;
    }
    for r in &rewritten {
        match r.rc_status {
            RcStatus::Clean => summary.rc_clean += 1,
            RcStatus::Rewritten => summary.rc_rewritten += 1,
            RcStatus::Failed => summary.rc_failed += 1,
            RcStatus::NotRun => {}
        }
    }

    Ok(RefactoredLibrary {
        children: contracts.clone(),
        rewritten,
        passthrough,
        call_sites,
        summary,
    })
}

/// Human-readable child skill document generated from the contract record.
fn child_summary(contract: &Contract) -> String {
    let mut out = String::new();
    out.push_str("---\n");
    out.push_str(&format!("name: {}\n", contract.id));
    out.push_str(&format!("description: {}\n", contract.trigger));
    out.push_str("---\n");
    out.push_str(&format!("# {}\n\n", contract.id));
    out.push_str(&format!("Trigger: {}\n\n", contract.trigger));
    out.push_str("## Inputs\n");
    for input in &contract.input_schema {
        let req = if input.required { "required" } else { "optional" };
        out.push_str(&format!("- {} ({}, {})\n", input.name, input.type_tag, req));
    }
    out.push_str("\n## Outputs\n");
    for output in &contract.output_schema {
        out.push_str(&format!("- {} ({})\n", output.name, output.type_tag));
    }
    if !contract.preconditions.is_empty() {
        out.push_str("\n## Preconditions\n");
        for p in &contract.preconditions {
            out.push_str(&format!("- {p}\n"));
        }
    }
    if !contract.postconditions.is_empty() {
        out.push_str("\n## Postconditions\n");
        for p in &contract.postconditions {
            out.push_str(&format!("- {p}\n"));
        }
    }
    if !contract.resources.is_empty() {
        out.push_str("\n## Resources\n");
        for r in &contract.resources {
            out.push_str(&format!("- {r}\n"));
        }
    }
    if !contract.side_effects.is_empty() {
        out.push_str("\n## Side effects\n");
        for s in &contract.side_effects {
            out.push_str(&format!("- {s}\n"));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::MockBackend;
    use crate::extract::{InputField, OutputField};
    use crate::parser::parse_document;

    fn contract(id: &str, inputs: &[&str]) -> Contract {
        Contract {
            id: id.into(),
            trigger: format!("{id} trigger"),
            input_schema: inputs
                .iter()
                .map(|n| InputField { name: n.to_string(), type_tag: "text".into(), required: true })
                .collect(),
            output_schema: vec![OutputField { name: "result".into(), type_tag: "text".into() }],
            preconditions: vec![],
            postconditions: vec![],
            resources: vec![],
            side_effects: vec![],
            source_parents: Default::default(),
            bindings: Default::default(),
            verifier_stats: None,
            extras: Default::default(),
        }
    }

    fn judgment(bindings: &[(&str, &str)], should_invoke: bool) -> BeJudgment {
        BeJudgment {
            should_invoke,
            confidence: Some("high".into()),
            bindings: bindings.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
            residual_parent_text: String::new(),
        }
    }

    #[test]
    fn post_check_accepts_overlapping_bindings() {
        let k = contract("object-transfer", &["object", "source", "target"]);
        let unit = "take salt from counter, move salt to cabinet";
        let j = judgment(&[("object", "salt"), ("source", "counter"), ("target", "cabinet")], true);
        assert!(be_post_check(&j, &k, unit).is_ok());
    }

    #[test]
    fn post_check_drops_empty_bindings() {
        let k = contract("object-transfer", &["object"]);
        let j = judgment(&[], true);
        assert_eq!(be_post_check(&j, &k, "anything").unwrap_err(), "missing_binding:object");
    }

    #[test]
    fn post_check_drops_non_overlapping_binding() {
        let k = contract("object-transfer", &["object"]);
        let j = judgment(&[("object", "banana")], true);
        let err = be_post_check(&j, &k, "take salt from counter").unwrap_err();
        assert_eq!(err, "binding_overlap:object");
    }

    #[test]
    fn post_check_respects_should_invoke_false() {
        let k = contract("object-transfer", &[]);
        let j = judgment(&[], false);
        assert_eq!(be_post_check(&j, &k, "x").unwrap_err(), "should_invoke_false");
    }

    #[test]
    fn render_invoke_sorts_names() {
        let bindings: BTreeMap<String, String> = [
            ("target_receptacle", "desk 1"),
            ("object", "laptop 1"),
            ("source_receptacle", "bed 2"),
        ]
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
        assert_eq!(
            render_invoke("alfworld-object-management", &bindings),
            "invoke(alfworld-object-management, {object=\"laptop 1\", source_receptacle=\"bed 2\", target_receptacle=\"desk 1\"})"
        );
    }

    fn demo_parent() -> ParentSkill {
        parse_document(
            std::path::Path::new("demo/SKILL.md"),
            "---\nname: demo\n---\n# Demo\nintro\n## Move It\nMove the object (salt 1) from the source (counter 1) to the target (cabinet 2).\n## Keep\nuntouched text\n",
            vec![],
        )
    }

    #[test]
    fn rewrite_replaces_unit_and_keeps_rest() {
        let parent = demo_parent();
        let k = contract("object-transfer", &["object", "source", "target"]);
        let contracts: BTreeMap<String, Contract> = [("object-transfer".to_string(), k)].into();
        let site = CallSite {
            parent_id: "demo".into(),
            ordinal: 1,
            contract_id: "object-transfer".into(),
            status: SiteStatus::BeConfirmed,
            bindings: [("object", "salt 1"), ("source", "counter 1"), ("target", "cabinet 2")]
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
            be_confidence: Some(BeConfidence::High),
            residual_text: String::new(),
            drop_reason: None,
        };
        let rewritten = rewrite_parent(&parent, &[site], &contracts).unwrap();
        assert!(rewritten.skeleton.contains("## Move It\n"));
        assert!(rewritten
            .skeleton
            .contains("invoke(object-transfer, {object=\"salt 1\", source=\"counter 1\", target=\"cabinet 2\"})"));
        assert!(rewritten.skeleton.contains("untouched text"));
        assert!(!rewritten.skeleton.contains("Move the object (salt 1)"));
        assert_eq!(rewritten.blocks.len(), 1);
        assert_eq!(
            rewritten.original_unit_texts.values().next().unwrap(),
            "Move the object (salt 1) from the source (counter 1) to the target (cabinet 2).\n"
        );
        // no-new-content holds for the deterministic rewrite
        assert!(no_new_content(&rewritten.skeleton, &parent, &contracts).is_ok());
    }

    #[test]
    fn zero_confirmed_sites_is_passthrough() {
        let parent = demo_parent();
        let contracts = BTreeMap::new();
        let rewritten = rewrite_parent(&parent, &[], &contracts).unwrap();
        assert_eq!(rewritten.skeleton, parent.render());
        assert_eq!(rewritten.rc_status, RcStatus::NotRun);
        assert!(rewritten.blocks.is_empty());
    }

    #[test]
    fn rc_failure_keeps_pre_rc_skeleton() {
        struct DeletingBackend;
        impl CompletionBackend for DeletingBackend {
            fn complete(&self, _s: &str, _u: &str) -> crate::Result<String> {
                // proposes a skeleton that drops the contract reference
                Ok(serde_json::json!({ "skeleton": "## Move It\nnothing here\n" }).to_string())
            }
        }
        let parent = demo_parent();
        let k = contract("object-transfer", &["object"]);
        let contracts: BTreeMap<String, Contract> = [("object-transfer".to_string(), k)].into();
        let site = CallSite {
            parent_id: "demo".into(),
            ordinal: 1,
            contract_id: "object-transfer".into(),
            status: SiteStatus::BeConfirmed,
            bindings: [("object".to_string(), "salt 1".to_string())].into(),
            be_confidence: None,
            residual_text: String::new(),
            drop_reason: None,
        };
        let rewritten = rewrite_parent(&parent, &[site], &contracts).unwrap();
        let before = rewritten.skeleton.clone();
        let after = rc_pass(rewritten, &parent, &contracts, &DeletingBackend);
        assert_eq!(after.rc_status, RcStatus::Failed);
        assert_eq!(after.skeleton, before);
    }

    #[test]
    fn rc_clean_when_mock_finds_no_conflict() {
        let parent = demo_parent();
        let k = contract("object-transfer", &["object"]);
        let contracts: BTreeMap<String, Contract> = [("object-transfer".to_string(), k)].into();
        let site = CallSite {
            parent_id: "demo".into(),
            ordinal: 1,
            contract_id: "object-transfer".into(),
            status: SiteStatus::BeConfirmed,
            bindings: [("object".to_string(), "salt 1".to_string())].into(),
            be_confidence: None,
            residual_text: String::new(),
            drop_reason: None,
        };
        let rewritten = rewrite_parent(&parent, &[site], &contracts).unwrap();
        let after = rc_pass(rewritten, &parent, &contracts, &MockBackend::new());
        assert_eq!(after.rc_status, RcStatus::Clean);
    }
}
