//! Stage 4: the four deterministic verifier checks and the three-tier
//! decision policy.
//!
//! Given a (cluster, contract) pair the verifier computes four rule-based
//! scores — coverage, binding, replacement, risk — and combines them into a
//! scalar promotion score
//! `s = w_b * binding + w_c * coverage + w_r * replacement - w_s * risk`.
//! Decisions are grounded: a candidate whose risk crosses the hard-reject
//! line, or whose core checks fall below the per-check floor, is rejected
//! with the failing check named. Only candidates that pass every check gate
//! are placed on the scalar's three tiers (`auto_promote`, `review`,
//! `reject`). There is no soft-classifier score anywhere in this module; a
//! rejection always names its cause.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extract::Contract;
use crate::parser::{ParentSkill, SkillLibrary};
use crate::propose::CandidateCluster;
use crate::text;

/// Weights, thresholds, and gates of the decision policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub w_b: f64,
    pub w_c: f64,
    pub w_r: f64,
    pub w_s: f64,
    pub tau_auto: f64,
    pub tau_rev: f64,
    /// Risk at or above this value rejects regardless of the other scores.
    pub risk_hard_reject: f64,
    /// A core check (binding, coverage, replacement) below this floor rejects
    /// with that check named; the scalar tiers only see gate-passing
    /// candidates.
    pub check_floor: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            w_b: 0.4,
            w_c: 0.3,
            w_r: 0.3,
            w_s: 1.0,
            tau_auto: 0.30,
            tau_rev: 0.10,
            risk_hard_reject: 0.80,
            check_floor: 0.60,
        }
    }
}

impl PolicyConfig {
    /// The stricter sensitivity variant (promotes fewer candidates).
    pub fn strict() -> Self {
        Self { tau_auto: 0.65, tau_rev: 0.35, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tau_auto < self.tau_rev {
            return Err(Error::Config(format!(
                "tau_auto ({}) must be >= tau_rev ({})",
                self.tau_auto, self.tau_rev
            )));
        }
        for (name, w) in
            [("w_b", self.w_b), ("w_c", self.w_c), ("w_r", self.w_r), ("w_s", self.w_s)]
        {
            if w < 0.0 {
                return Err(Error::Config(format!("weight {name} must be non-negative")));
            }
        }
        if !(0.0..=1.0).contains(&self.risk_hard_reject) {
            return Err(Error::Config("risk_hard_reject must be in [0,1]".into()));
        }
        if !(0.0..=1.0).contains(&self.check_floor) {
            return Err(Error::Config("check_floor must be in [0,1]".into()));
        }
        Ok(())
    }

    pub fn with_thresholds(&self, tau_auto: f64, tau_rev: f64) -> Self {
        Self { tau_auto, tau_rev, ..self.clone() }
    }
}

/// The named checks a rejection can be grounded in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckName {
    Binding,
    CoverageRecall,
    Replacement,
    Risk,
}

impl std::fmt::Display for CheckName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            CheckName::Binding => "binding",
            CheckName::CoverageRecall => "coverage_recall",
            CheckName::Replacement => "replacement",
            CheckName::Risk => "risk",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    AutoPromote,
    Review,
    Reject,
}

/// The verifier's output profile for one candidate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifierProfile {
    pub coverage: f64,
    pub binding_rate: f64,
    pub replacement_rate: f64,
    pub risk: f64,
    pub score: f64,
    pub decision: Decision,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_failed_check: Option<CheckName>,
}

/// Raw check scores before a decision is applied.
#[derive(Debug, Clone, Copy)]
pub struct CheckScores {
    pub coverage: f64,
    pub binding: f64,
    pub replacement: f64,
    pub risk: f64,
}

/// Token recall of the contract's trigger and I/O strings against each
/// source parent's member-unit text; the minimum over parents is the score,
/// so one mismatched parent fails the whole candidate. Catches misnamed or
/// swapped contracts.
pub fn check_coverage(
    cluster: &CandidateCluster,
    contract: &Contract,
    library: &SkillLibrary,
) -> f64 {
    let contract_tokens = contract_surface_tokens(contract);
    if contract_tokens.is_empty() {
        return 1.0;
    }
    let mut min_recall = 1.0f64;
    for parent_id in &cluster.source_parents {
        let parent_tokens = member_text_tokens(cluster, parent_id, library);
        let hits = contract_tokens.intersection(&parent_tokens).count();
        let recall = hits as f64 / contract_tokens.len() as f64;
        min_recall = min_recall.min(recall);
    }
    min_recall
}

/// Fraction of (parent, required input) pairs whose unit text mentions the
/// input name. Catches over-wide clusters where a contract's inputs only
/// exist in some parents.
pub fn check_binding(
    cluster: &CandidateCluster,
    contract: &Contract,
    library: &SkillLibrary,
) -> f64 {
    let required: Vec<&str> = contract.required_inputs().map(|i| i.name.as_str()).collect();
    if required.is_empty() {
        return 1.0;
    }
    let mut counted = 0usize;
    let mut total = 0usize;
    for parent_id in &cluster.source_parents {
        let parent_tokens = member_text_tokens(cluster, parent_id, library);
        for input in &required {
            total += 1;
            let name_tokens = text::identifier_tokens(input);
            if name_tokens.iter().any(|t| parent_tokens.contains(t)) {
                counted += 1;
            }
        }
    }
    if total == 0 {
        1.0
    } else {
        counted as f64 / total as f64
    }
}

/// Fraction of parents whose member units can be excised for a one-line
/// invoke placeholder without structural damage: the unit has a real
/// heading, no other unit links to its anchor, and its body closes every
/// code fence it opens. Catches control-flow entanglement.
pub fn check_replacement(
    cluster: &CandidateCluster,
    _contract: &Contract,
    library: &SkillLibrary,
) -> f64 {
    let parents: Vec<&str> = cluster.source_parents.iter().map(String::as_str).collect();
    if parents.is_empty() {
        return 1.0;
    }
    let mut passing = 0usize;
    for parent_id in &parents {
        let Some(parent) = library.parent(parent_id) else { continue };
        let ordinals: Vec<usize> = cluster
            .member_units
            .iter()
            .filter(|r| r.parent_id == *parent_id)
            .map(|r| r.ordinal)
            .collect();
        if ordinals.iter().all(|&o| unit_replaceable(parent, o)) {
            passing += 1;
        }
    }
    passing as f64 / parents.len() as f64
}

fn unit_replaceable(parent: &ParentSkill, ordinal: usize) -> bool {
    let Some(unit) = parent.units.get(ordinal) else { return false };
    if unit.heading.is_empty() {
        return false;
    }
    let anchor = format!("#{}", text::heading_slug(&unit.heading));
    let inbound = parent
        .units
        .iter()
        .filter(|u| u.ordinal != ordinal)
        .any(|u| u.body.contains(&anchor));
    if inbound {
        return false;
    }
    let fence_lines = unit
        .body
        .lines()
        .filter(|l| {
            let t = l.trim_start();
            t.starts_with("```") || t.starts_with("~~~")
        })
        .count();
    fence_lines % 2 == 0
}

const OPAQUE_RESOURCE_WEIGHT: f64 = 0.2;

/// One class of unsafe sink the risk scan looks for.
struct SinkClass {
    name: &'static str,
    weight: f64,
    /// side_effects keywords that declare (and therefore exempt) this class.
    declares: &'static [&'static str],
}

const SINK_CLASSES: &[SinkClass] = &[
    SinkClass {
        name: "recursive_delete",
        weight: 0.8,
        declares: &["delete", "remove", "filesystem"],
    },
    SinkClass { name: "dynamic_eval", weight: 0.8, declares: &["eval", "dynamic"] },
    SinkClass {
        name: "shell_interpolation",
        weight: 0.5,
        declares: &["shell", "subprocess", "command"],
    },
    SinkClass {
        name: "network_egress",
        weight: 0.4,
        declares: &["network", "egress", "http", "upload", "download"],
    },
];

fn sink_detected(class: &SinkClass, body: &str) -> bool {
    match class.name {
        "recursive_delete" => {
            let re = regex::Regex::new(r"rm\s+-[a-z]*[rf][a-z]*\s|shutil\.rmtree|\brmtree\s*\(|RemoveAll\s*\(|fs\.rm(Sync)?\s*\(.*recursive").unwrap();
            re.is_match(body)
        }
        "dynamic_eval" => {
            let re = regex::Regex::new(r"\beval\s*\(|\bexec\s*\(|new\s+Function\s*\(").unwrap();
            re.is_match(body)
        }
        "shell_interpolation" => {
            let spawn =
                regex::Regex::new(r#"os\.system\s*\(|subprocess\.\w+\s*\(|\b(sh|bash)\s+-c\b|shell\s*=\s*True"#)
                    .unwrap();
            let interp = regex::Regex::new(r#"[$+%]|f""#).unwrap();
            body.lines().any(|l| spawn.is_match(l) && interp.is_match(l))
        }
        "network_egress" => {
            let re = regex::Regex::new(
                r"requests\.\w+\s*\(|urllib|urlopen|https?://|\bcurl\s|\bwget\s|socket\.(socket|connect)|fetch\s*\(",
            )
            .unwrap();
            re.is_match(body)
        }
        _ => false,
    }
}

/// Lightweight syntactic scan of the contract's linked scripts and resources
/// for unsafe sinks. Each detected sink class contributes its weight unless a
/// `side_effects` entry declares it; unresolvable resources contribute the
/// opaque-resource weight. Additive, capped at 1.
pub fn check_risk(contract: &Contract, library: &SkillLibrary) -> f64 {
    let declared: Vec<String> =
        contract.side_effects.iter().map(|s| s.to_lowercase()).collect();
    let class_declared = |class: &SinkClass| {
        declared.iter().any(|entry| class.declares.iter().any(|kw| entry.contains(kw)))
    };

    let mut risk = 0.0f64;
    let mut detected: BTreeSet<&'static str> = BTreeSet::new();

    for resource in &contract.resources {
        let mut body: Option<&str> = None;
        let mut is_reference = false;
        for parent_id in &contract.source_parents {
            let Some(parent) = library.parent(parent_id) else { continue };
            if let Some(script) = parent.scripts.iter().find(|s| &s.name == resource) {
                body = Some(&script.body);
                break;
            }
            if parent.references.iter().any(|r| r == resource || r.ends_with(resource)) {
                is_reference = true;
            }
        }
        match body {
            Some(body) => {
                for class in SINK_CLASSES {
                    if sink_detected(class, body) {
                        detected.insert(class.name);
                    }
                }
            }
            None if is_reference => {}
            None => risk += OPAQUE_RESOURCE_WEIGHT,
        }
    }

    for class in SINK_CLASSES {
        if detected.contains(class.name) && !class_declared(class) {
            risk += class.weight;
        }
    }

    risk.min(1.0)
}

/// Apply the decision policy to raw check scores.
///
/// Order of grounds: the risk hard-reject dominates, then the per-check
/// floor, then the scalar tiers. `first_failed_check` on a rejection is the
/// lowest-scoring core check (ties broken binding < coverage < replacement),
/// or `risk` when hard-rejected.
pub fn decide(scores: CheckScores, policy: &PolicyConfig) -> VerifierProfile {
    let score = policy.w_b * scores.binding + policy.w_c * scores.coverage
        + policy.w_r * scores.replacement
        - policy.w_s * scores.risk;

    let lowest_core = || {
        let ordered = [
            (scores.binding, CheckName::Binding),
            (scores.coverage, CheckName::CoverageRecall),
            (scores.replacement, CheckName::Replacement),
        ];
        let mut best = ordered[0];
        for candidate in &ordered[1..] {
            if candidate.0 < best.0 {
                best = *candidate;
            }
        }
        best.1
    };

    let (decision, first_failed) = if scores.risk >= policy.risk_hard_reject {
        (Decision::Reject, Some(CheckName::Risk))
    } else if scores.binding < policy.check_floor
        || scores.coverage < policy.check_floor
        || scores.replacement < policy.check_floor
    {
        (Decision::Reject, Some(lowest_core()))
    } else if score >= policy.tau_auto {
        (Decision::AutoPromote, None)
    } else if score >= policy.tau_rev {
        (Decision::Review, None)
    } else {
        (Decision::Reject, Some(lowest_core()))
    };

    VerifierProfile {
        coverage: scores.coverage,
        binding_rate: scores.binding,
        replacement_rate: scores.replacement,
        risk: scores.risk,
        score,
        decision,
        first_failed_check: first_failed,
    }
}

/// Run all four checks and the decision for one candidate.
pub fn verify_candidate(
    cluster: &CandidateCluster,
    contract: &Contract,
    library: &SkillLibrary,
    policy: &PolicyConfig,
) -> VerifierProfile {
    let scores = CheckScores {
        coverage: check_coverage(cluster, contract, library),
        binding: check_binding(cluster, contract, library),
        replacement: check_replacement(cluster, contract, library),
        risk: check_risk(contract, library),
    };
    decide(scores, policy)
}

/// One verified candidate in the report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateVerdict {
    pub cluster_id: String,
    pub contract_id: String,
    pub profile: VerifierProfile,
}

/// The verifier report artifact: per-candidate profiles plus tier counts and
/// the per-check rejection histogram.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifierReport {
    pub policy: PolicyConfig,
    pub verdicts: Vec<CandidateVerdict>,
    pub summary: VerifierSummary,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct VerifierSummary {
    pub auto_promote: usize,
    pub review: usize,
    pub reject: usize,
    /// First-failed histogram; also carries the upstream
    /// `extraction_failed` bucket so the breakdown covers every rejection.
    pub rejections_by_check: BTreeMap<String, usize>,
}

impl VerifierReport {
    pub fn new(policy: PolicyConfig, verdicts: Vec<CandidateVerdict>, refusals: usize) -> Self {
        let mut summary = VerifierSummary::default();
        if refusals > 0 {
            summary.rejections_by_check.insert("extraction_failed".into(), refusals);
        }
        for verdict in &verdicts {
            match verdict.profile.decision {
                Decision::AutoPromote => summary.auto_promote += 1,
                Decision::Review => summary.review += 1,
                Decision::Reject => {
                    summary.reject += 1;
                    if let Some(check) = verdict.profile.first_failed_check {
                        *summary.rejections_by_check.entry(check.to_string()).or_insert(0) += 1;
                    }
                }
            }
        }
        Self { policy, verdicts, summary }
    }
}

/// Tokens of the contract's retrievable surface: trigger plus input and
/// output names.
fn contract_surface_tokens(contract: &Contract) -> BTreeSet<String> {
    let mut tokens: BTreeSet<String> = text::token_set(&contract.trigger);
    for input in &contract.input_schema {
        tokens.extend(text::identifier_tokens(&input.name));
    }
    for output in &contract.output_schema {
        tokens.extend(text::identifier_tokens(&output.name));
    }
    tokens
}

/// Token set of one parent's member-unit text within a cluster.
fn member_text_tokens(
    cluster: &CandidateCluster,
    parent_id: &str,
    library: &SkillLibrary,
) -> BTreeSet<String> {
    let Some(parent) = library.parent(parent_id) else {
        return BTreeSet::new();
    };
    let mut tokens = BTreeSet::new();
    for unit_ref in cluster.member_units.iter().filter(|r| r.parent_id == parent_id) {
        if let Some(unit) = parent.units.get(unit_ref.ordinal) {
            tokens.extend(text::token_set(&unit.text()));
        }
    }
    tokens
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_document;
    use crate::propose::{cluster_candidates, DEFAULT_THRESHOLD};
    use crate::embed::LocalEmbedder;
    use std::path::Path;

    fn contract(trigger: &str, inputs: &[&str], outputs: &[&str]) -> Contract {
        Contract {
            id: "k".into(),
            trigger: trigger.into(),
            input_schema: inputs
                .iter()
                .map(|n| crate::extract::InputField {
                    name: n.to_string(),
                    type_tag: "text".into(),
                    required: true,
                })
                .collect(),
            output_schema: outputs
                .iter()
                .map(|n| crate::extract::OutputField { name: n.to_string(), type_tag: "text".into() })
                .collect(),
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

    fn library_and_cluster(doc_a: &str, doc_b: &str) -> (SkillLibrary, CandidateCluster) {
        let a = parse_document(Path::new("a.md"), doc_a, vec![]);
        let b = parse_document(Path::new("b.md"), doc_b, vec![]);
        let lib = SkillLibrary { source_dir: String::new(), parents: vec![a, b] };
        let clusters = cluster_candidates(&lib, &LocalEmbedder, DEFAULT_THRESHOLD).unwrap();
        assert_eq!(clusters.len(), 1, "expected exactly one test cluster");
        (lib, clusters.into_iter().next().unwrap())
    }

    fn transfer_pair() -> (SkillLibrary, CandidateCluster) {
        library_and_cluster(
            "## Move It\nMove the object (salt 1) from the source (counter 1) to the target (cabinet 2).\n",
            "## Move It\nMove the object (mug 1) from the source (table 1) to the target (shelf 2).\n",
        )
    }

    #[test]
    fn coverage_full_when_all_tokens_present() {
        let (lib, cluster) = transfer_pair();
        let mut k = contract("move the object from the source to the target", &["object", "source", "target"], &[]);
        k.source_parents = cluster.source_parents.clone();
        assert_eq!(check_coverage(&cluster, &k, &lib), 1.0);
    }

    #[test]
    fn coverage_is_minimum_over_parents() {
        // second parent lacks half the contract tokens
        let (lib, cluster) = library_and_cluster(
            "## Go\nMove the object widget gadget holder now.\n",
            "## Go\nMove the object widget box now.\n",
        );
        let mut k = contract("move object widget gadget", &[], &[]);
        k.source_parents = cluster.source_parents.clone();
        // tokens {move, object, widget, gadget}: parent b has 3 of 4
        let cov = check_coverage(&cluster, &k, &lib);
        assert!((cov - 0.75).abs() < 1e-9, "got {cov}");
    }

    #[test]
    fn binding_vacuous_without_required_inputs() {
        let (lib, cluster) = transfer_pair();
        let k = contract("move", &[], &[]);
        assert_eq!(check_binding(&cluster, &k, &lib), 1.0);
    }

    #[test]
    fn binding_counts_identifier_token_hits() {
        let (lib, cluster) = library_and_cluster(
            "## Move\nMove the object into the source receptacle carefully today.\n",
            "## Move\nMove the object into the target receptacle carefully today.\n",
        );
        let k = contract("move", &["object", "source_receptacle", "target_receptacle"], &[]);
        // both parents: object yes; source_receptacle via "receptacle" in both;
        // target_receptacle likewise -> 6/6
        assert_eq!(check_binding(&cluster, &k, &lib), 1.0);
    }

    #[test]
    fn near_miss_binding_is_half() {
        let (lib, cluster) = library_and_cluster(
            "## Validate\nValidate the email of the sender record now please.\n",
            "## Validate\nValidate the sender record now please again ok.\n",
        );
        let k = contract("validate", &["email", "phone"], &[]);
        let rate = check_binding(&cluster, &k, &lib);
        assert!((rate - 0.25).abs() < 1e-9, "one of four pairs binds, got {rate}");
    }

    #[test]
    fn replacement_fails_on_inbound_anchor() {
        let doc_a = "## Take and Move\nMove the salt crate box now.\n## Workflow\nFollow [the steps](#take-and-move) closely.\n";
        let doc_b = "## Take and Move\nMove the salt crate box now.\n";
        let (lib, cluster) = library_and_cluster(doc_a, doc_b);
        let k = contract("move", &[], &[]);
        let rate = check_replacement(&cluster, &k, &lib);
        assert!((rate - 0.5).abs() < 1e-9, "entangled parent fails, got {rate}");
    }

    #[test]
    fn replacement_full_when_clean() {
        let (lib, cluster) = transfer_pair();
        let k = contract("move", &[], &[]);
        assert_eq!(check_replacement(&cluster, &k, &lib), 1.0);
    }

    #[test]
    fn risk_zero_with_empty_resources() {
        let lib = SkillLibrary { source_dir: String::new(), parents: vec![] };
        let k = contract("move", &[], &[]);
        assert_eq!(check_risk(&k, &lib), 0.0);
    }

    #[test]
    fn undeclared_recursive_delete_hard_rejects() {
        let mut parent = parse_document(Path::new("p/SKILL.md"), "## Purge\nRun purge.sh now.\n", vec![]);
        parent.scripts = vec![crate::parser::Script {
            name: "purge.sh".into(),
            body: "#!/bin/sh\nrm -rf \"$BUILD_DIR\"\n".into(),
            lang: "sh".into(),
        }];
        let lib = SkillLibrary { source_dir: String::new(), parents: vec![parent] };
        let mut k = contract("purge the build directory", &[], &[]);
        k.resources = vec!["purge.sh".into()];
        k.source_parents = ["p".to_string()].into_iter().collect();
        let risk = check_risk(&k, &lib);
        assert!(risk >= 0.80, "got {risk}");

        // declaring the effect exempts the sink
        k.side_effects = vec!["filesystem: deletes the build directory recursively".into()];
        let declared_risk = check_risk(&k, &lib);
        assert!(declared_risk < 0.80, "got {declared_risk}");
    }

    #[test]
    fn declared_network_sink_contributes_zero() {
        let mut parent = parse_document(Path::new("p/SKILL.md"), "## Sync\nRun sync.py now.\n", vec![]);
        parent.scripts = vec![crate::parser::Script {
            name: "sync.py".into(),
            body: "import requests\nrequests.post('https://api.example.com', json=data)\n".into(),
            lang: "py".into(),
        }];
        let lib = SkillLibrary { source_dir: String::new(), parents: vec![parent] };
        let mut k = contract("sync", &[], &[]);
        k.resources = vec!["sync.py".into()];
        k.source_parents = ["p".to_string()].into_iter().collect();
        assert!(check_risk(&k, &lib) > 0.0);
        k.side_effects = vec!["network: uploads the report to the sync endpoint".into()];
        assert_eq!(check_risk(&k, &lib), 0.0);
    }

    #[test]
    fn unresolvable_resource_is_opaque() {
        let parent = parse_document(Path::new("p/SKILL.md"), "## Run\nbody\n", vec![]);
        let lib = SkillLibrary { source_dir: String::new(), parents: vec![parent] };
        let mut k = contract("run", &[], &[]);
        k.resources = vec!["ghost.py".into()];
        k.source_parents = ["p".to_string()].into_iter().collect();
        assert!((check_risk(&k, &lib) - OPAQUE_RESOURCE_WEIGHT).abs() < 1e-9);
    }

    #[test]
    fn perfect_profile_auto_promotes() {
        let profile = decide(
            CheckScores { coverage: 1.0, binding: 1.0, replacement: 1.0, risk: 0.0 },
            &PolicyConfig::default(),
        );
        assert!((profile.score - 1.0).abs() < 1e-9);
        assert_eq!(profile.decision, Decision::AutoPromote);
        assert!(profile.first_failed_check.is_none());
    }

    #[test]
    fn hard_reject_dominates_any_score() {
        let policy = PolicyConfig::default();
        let profile = decide(
            CheckScores { coverage: 1.0, binding: 1.0, replacement: 1.0, risk: 0.85 },
            &policy,
        );
        assert_eq!(profile.decision, Decision::Reject);
        assert_eq!(profile.first_failed_check, Some(CheckName::Risk));
    }

    #[test]
    fn floor_rejects_name_the_lowest_check() {
        let policy = PolicyConfig::default();
        let profile = decide(
            CheckScores { coverage: 0.7, binding: 0.5, replacement: 1.0, risk: 0.0 },
            &policy,
        );
        assert_eq!(profile.decision, Decision::Reject);
        assert_eq!(profile.first_failed_check, Some(CheckName::Binding));

        let profile = decide(
            CheckScores { coverage: 0.2, binding: 0.5, replacement: 1.0, risk: 0.0 },
            &policy,
        );
        assert_eq!(profile.first_failed_check, Some(CheckName::CoverageRecall));
    }

    #[test]
    fn ties_break_binding_before_coverage() {
        let profile = decide(
            CheckScores { coverage: 0.0, binding: 0.0, replacement: 1.0, risk: 0.0 },
            &PolicyConfig::default(),
        );
        assert_eq!(profile.first_failed_check, Some(CheckName::Binding));
    }

    #[test]
    fn raising_tau_auto_never_creates_promotions() {
        let scores = CheckScores { coverage: 0.9, binding: 0.9, replacement: 0.9, risk: 0.0 };
        let relaxed = decide(scores, &PolicyConfig::default());
        let strict = decide(scores, &PolicyConfig::strict());
        assert_eq!(relaxed.decision, Decision::AutoPromote);
        assert_eq!(strict.decision, Decision::AutoPromote);
        let very_strict = decide(scores, &PolicyConfig::default().with_thresholds(0.95, 0.10));
        assert_eq!(very_strict.decision, Decision::Review);
    }

    #[test]
    fn invalid_policy_is_config_error() {
        let bad = PolicyConfig { tau_auto: 0.1, tau_rev: 0.3, ..PolicyConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn rejected_profiles_always_carry_a_cause() {
        let policy = PolicyConfig::default();
        for scores in [
            CheckScores { coverage: 0.0, binding: 0.9, replacement: 0.9, risk: 0.0 },
            CheckScores { coverage: 0.9, binding: 0.9, replacement: 0.1, risk: 0.0 },
            CheckScores { coverage: 1.0, binding: 1.0, replacement: 1.0, risk: 0.9 },
        ] {
            let profile = decide(scores, &policy);
            assert_eq!(profile.decision, Decision::Reject);
            assert!(profile.first_failed_check.is_some());
        }
    }
}
