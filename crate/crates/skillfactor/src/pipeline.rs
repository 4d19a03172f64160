//! Stage orchestration: resumable artifacts, configuration, backend
//! selection, and summary reporting.
//!
//! Each stage reads only its declared upstream artifacts plus the config,
//! and writes its own artifact atomically (temp file, then rename), so a
//! crashed or cancelled run resumes from the last completed stage. Stage
//! order: parse, propose, extract, verify, controls, calibrate, refactor,
//! pool.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::{CompletionBackend, MockBackend};
use crate::bundle::{build_pool, RetrievalPool};
use crate::calibrate::{
    generate_controls, grid_search, NegativeControl, DEFAULT_FP_CEILING_PERCENT, DEFAULT_GRID,
    DEFAULT_N_PER_CLASS,
};
use crate::embed::{EmbeddingProvider, LocalEmbedder};
use crate::error::{Error, Result};
use crate::extract::{draft_contract, Contract, ExtractionOutcome};
use crate::parser::{parse_library, SkillLibrary};
use crate::propose::{cluster_candidates, CandidateCluster, DEFAULT_THRESHOLD};
use crate::refactor::{
    be_pass, detect_call_sites, emit_refactored_library, rc_pass, rewrite_parent, CallSite,
    RefactoredLibrary, RewrittenParent, SiteStatus,
};
use crate::verify::{
    decide, verify_candidate, CandidateVerdict, Decision, PolicyConfig, VerifierReport,
};

/// Environment variable holding the live-backend credential.
pub const API_KEY_ENV: &str = "SKILLFACTOR_API_KEY";
/// Fallback credential variable, for OpenAI-compatible setups.
pub const API_KEY_ENV_FALLBACK: &str = "OPENAI_API_KEY";
/// Environment variable overriding the backend base URL.
pub const BASE_URL_ENV: &str = "SKILLFACTOR_BASE_URL";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendMode {
    Mock,
    Live,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderMode {
    Local,
    Remote,
}

/// Everything a pipeline run needs to know.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub lib_dir: PathBuf,
    pub out_dir: PathBuf,
    pub backend: BackendMode,
    pub embedder: EmbedderMode,
    /// Explicit policy file; otherwise the calibrated policy artifact is
    /// used when present, and the default policy as a last resort.
    pub policy_path: Option<PathBuf>,
    pub clustering_threshold: f32,
    pub n_per_class: usize,
    pub grid: Vec<(f64, f64)>,
    pub fp_ceiling_percent: f64,
    pub seed: u64,
    /// Stage-internal parallelism bound. Stages are order-stable regardless;
    /// the current implementation runs batches sequentially.
    pub parallelism: usize,
    /// Canned mock drafts keyed by cluster id (fixture file).
    pub mock_contracts: Option<PathBuf>,
    /// Run the BE pass against the live backend instead of the mock.
    pub llm_bindings: bool,
    pub include_children: bool,
    pub model: String,
    pub embed_model: String,
}

impl PipelineConfig {
    pub fn new(lib_dir: PathBuf, out_dir: PathBuf) -> Self {
        Self {
            lib_dir,
            out_dir,
            backend: BackendMode::Mock,
            embedder: EmbedderMode::Local,
            policy_path: None,
            clustering_threshold: DEFAULT_THRESHOLD,
            n_per_class: DEFAULT_N_PER_CLASS,
            grid: DEFAULT_GRID.to_vec(),
            fp_ceiling_percent: DEFAULT_FP_CEILING_PERCENT,
            seed: 1,
            parallelism: 1,
            mock_contracts: None,
            llm_bindings: false,
            include_children: false,
            model: "gpt-4o-mini".into(),
            embed_model: "text-embedding-3-small".into(),
        }
    }

    /// Mock + local modes require no network; live modes require the
    /// credential to be present at startup.
    pub fn validate(&self) -> Result<()> {
        let needs_credential =
            self.backend == BackendMode::Live || self.embedder == EmbedderMode::Remote;
        if needs_credential && api_key().is_none() {
            return Err(Error::Config(format!(
                "live backend selected but neither {API_KEY_ENV} nor {API_KEY_ENV_FALLBACK} is set"
            )));
        }
        if !(0.0..=1.0).contains(&self.clustering_threshold) || self.clustering_threshold <= 0.0 {
            return Err(Error::Config("clustering threshold must be in (0, 1]".into()));
        }
        Ok(())
    }

    fn completion_backend(&self, live_for_this_pass: bool) -> Result<Box<dyn CompletionBackend>> {
        if live_for_this_pass {
            #[cfg(feature = "remote")]
            {
                let key = api_key().ok_or_else(|| {
                    Error::Config(format!("{API_KEY_ENV} not set for live backend"))
                })?;
                return Ok(Box::new(crate::backend::HttpCompletionBackend::new(
                    base_url(),
                    self.model.clone(),
                    key,
                    crate::backend::DecodingConfig::default(),
                )));
            }
            #[cfg(not(feature = "remote"))]
            return Err(Error::Config("built without the `remote` feature".into()));
        }
        let mut mock = MockBackend::new();
        if let Some(path) = &self.mock_contracts {
            mock = MockBackend::from_canned_file(path)?;
        }
        Ok(Box::new(mock))
    }

    fn embedding_provider(&self) -> Result<Box<dyn EmbeddingProvider>> {
        match self.embedder {
            EmbedderMode::Local => Ok(Box::new(LocalEmbedder)),
            EmbedderMode::Remote => {
                #[cfg(feature = "remote")]
                {
                    let key = api_key().ok_or_else(|| {
                        Error::Config(format!("{API_KEY_ENV} not set for remote embedder"))
                    })?;
                    Ok(Box::new(crate::embed::RemoteEmbedder::new(
                        base_url(),
                        self.embed_model.clone(),
                        key,
                        1536,
                    )))
                }
                #[cfg(not(feature = "remote"))]
                Err(Error::Config("built without the `remote` feature".into()))
            }
        }
    }
}

fn api_key() -> Option<String> {
    std::env::var(API_KEY_ENV).ok().or_else(|| std::env::var(API_KEY_ENV_FALLBACK).ok())
}

fn base_url() -> String {
    std::env::var(BASE_URL_ENV).unwrap_or_else(|_| "https://api.openai.com/v1".into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Parse,
    Propose,
    Extract,
    Verify,
    Controls,
    Calibrate,
    Refactor,
    Pool,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Parse,
        Stage::Propose,
        Stage::Extract,
        Stage::Verify,
        Stage::Controls,
        Stage::Calibrate,
        Stage::Refactor,
        Stage::Pool,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Stage::Parse => "parse",
            Stage::Propose => "propose",
            Stage::Extract => "extract",
            Stage::Verify => "verify",
            Stage::Controls => "controls",
            Stage::Calibrate => "calibrate",
            Stage::Refactor => "refactor",
            Stage::Pool => "pool",
        }
    }

    /// The artifact this stage writes, relative to the out dir.
    pub fn artifact(&self) -> &'static str {
        match self {
            Stage::Parse => "parents.json",
            Stage::Propose => "candidates.json",
            Stage::Extract => "contracts.json",
            Stage::Verify => "verifier_report.json",
            Stage::Controls => "controls.json",
            Stage::Calibrate => "calibrated_policy.json",
            Stage::Refactor => "refactored_library.json",
            Stage::Pool => "pool.json",
        }
    }

    /// Upstream stages whose artifacts this stage reads.
    pub fn prerequisites(&self) -> &'static [Stage] {
        match self {
            Stage::Parse => &[],
            Stage::Propose => &[Stage::Parse],
            Stage::Extract => &[Stage::Parse, Stage::Propose],
            Stage::Verify => &[Stage::Parse, Stage::Propose, Stage::Extract],
            Stage::Controls => &[Stage::Parse, Stage::Propose, Stage::Extract],
            Stage::Calibrate => &[Stage::Verify, Stage::Controls],
            Stage::Refactor => &[Stage::Parse, Stage::Propose, Stage::Extract, Stage::Verify],
            Stage::Pool => &[Stage::Parse, Stage::Refactor],
        }
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .iter()
            .find(|stage| stage.name() == s)
            .copied()
            .ok_or_else(|| Error::Config(format!("unknown stage `{s}`")))
    }
}

/// Per-cluster extraction record in the contracts artifact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterOutcome {
    pub cluster_id: String,
    #[serde(flatten)]
    pub outcome: ExtractionOutcome,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidatesArtifact {
    pub threshold: f32,
    pub clusters: Vec<CandidateCluster>,
}

/// Controls artifact: the corpus plus each control's verifier profile, so
/// grid search never re-runs a check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ControlsArtifact {
    pub seed: u64,
    pub n_per_class: usize,
    pub records: Vec<ControlRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ControlRecord {
    pub control: NegativeControl,
    pub profile: crate::verify::VerifierProfile,
}

/// One stage's result: its artifact path, a one-line yield summary, and the
/// digests of the inputs it declared.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: String,
    pub line: String,
    pub artifact: String,
    pub input_digests: BTreeMap<String, String>,
}

pub fn artifact_path(out_dir: &Path, stage: Stage) -> PathBuf {
    out_dir.join(stage.artifact())
}

/// Serialize to pretty JSON and write atomically (temp file then rename).
pub fn write_artifact<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    }
    let mut body = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Other(format!("serialize {}: {e}", path.display())))?;
    body.push('\n');
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, &body).map_err(|e| Error::io(tmp.display().to_string(), e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

pub fn read_artifact<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let body =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::from_str(&body)
        .map_err(|e| Error::Integrity(format!("artifact {} is corrupt: {e}", path.display())))
}

/// Hex SHA-256 of a file, recorded per stage input.
pub fn file_digest(path: &Path) -> Result<String> {
    let body = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut hasher = Sha256::new();
    hasher.update(&body);
    Ok(format!("{:x}", hasher.finalize()))
}

fn check_prerequisites(stage: Stage, out_dir: &Path) -> Result<BTreeMap<String, String>> {
    let mut digests = BTreeMap::new();
    for dep in stage.prerequisites() {
        let path = artifact_path(out_dir, *dep);
        if !path.exists() {
            return Err(Error::Prerequisite {
                stage: stage.name().into(),
                missing: dep.artifact().into(),
                producer: dep.name().into(),
            });
        }
        digests.insert(dep.artifact().into(), file_digest(&path)?);
    }
    Ok(digests)
}

/// The policy in effect: explicit file, else the calibrated artifact when
/// present, else the default.
pub fn effective_policy(config: &PipelineConfig) -> Result<PolicyConfig> {
    let policy: PolicyConfig = if let Some(path) = &config.policy_path {
        read_artifact(path)?
    } else {
        let calibrated = artifact_path(&config.out_dir, Stage::Calibrate);
        if calibrated.exists() {
            read_artifact(&calibrated)?
        } else {
            PolicyConfig::default()
        }
    };
    policy.validate()?;
    Ok(policy)
}

/// Run one stage. Prerequisite artifacts must already exist.
pub fn run_stage(stage: Stage, config: &PipelineConfig) -> Result<StageSummary> {
    config.validate()?;
    let input_digests = check_prerequisites(stage, &config.out_dir)?;
    let line = match stage {
        Stage::Parse => stage_parse(config)?,
        Stage::Propose => stage_propose(config)?,
        Stage::Extract => stage_extract(config)?,
        Stage::Verify => stage_verify(config)?,
        Stage::Controls => stage_controls(config)?,
        Stage::Calibrate => stage_calibrate(config)?,
        Stage::Refactor => stage_refactor(config)?,
        Stage::Pool => stage_pool(config)?,
    };
    Ok(StageSummary {
        stage: stage.name().into(),
        line,
        artifact: stage.artifact().into(),
        input_digests,
    })
}

fn stage_parse(config: &PipelineConfig) -> Result<String> {
    let library = parse_library(&config.lib_dir)?;
    let docs = library.parents.len();
    let units: usize = library.parents.iter().map(|p| p.units.len()).sum();
    let diagnostics: usize = library.parents.iter().map(|p| p.diagnostics.len()).sum();
    write_artifact(&artifact_path(&config.out_dir, Stage::Parse), &library)?;
    let mut line = format!("parse: {docs} documents -> {units} units");
    if diagnostics > 0 {
        line.push_str(&format!(" ({diagnostics} diagnostics)"));
    }
    Ok(line)
}

fn stage_propose(config: &PipelineConfig) -> Result<String> {
    let library: SkillLibrary = read_artifact(&artifact_path(&config.out_dir, Stage::Parse))?;
    let provider = config.embedding_provider()?;
    let clusters = cluster_candidates(&library, provider.as_ref(), config.clustering_threshold)?;
    let units: usize = library.parents.iter().map(|p| p.units.len()).sum();
    let covered: usize = clusters.iter().map(|c| c.member_units.len()).sum();
    let parents: std::collections::BTreeSet<String> = clusters
        .iter()
        .flat_map(|c| c.source_parents.iter().cloned())
        .collect();
    let artifact =
        CandidatesArtifact { threshold: config.clustering_threshold, clusters };
    write_artifact(&artifact_path(&config.out_dir, Stage::Propose), &artifact)?;
    Ok(format!(
        "propose: {units} units -> {} clusters ({covered} units across {} parents)",
        artifact.clusters.len(),
        parents.len()
    ))
}

fn stage_extract(config: &PipelineConfig) -> Result<String> {
    let library: SkillLibrary = read_artifact(&artifact_path(&config.out_dir, Stage::Parse))?;
    let candidates: CandidatesArtifact =
        read_artifact(&artifact_path(&config.out_dir, Stage::Propose))?;
    let backend = config.completion_backend(config.backend == BackendMode::Live)?;
    let mut outcomes = Vec::new();
    let mut drafts = 0usize;
    let mut refusals = 0usize;
    for cluster in &candidates.clusters {
        let outcome = draft_contract(cluster, &library, backend.as_ref())?;
        match &outcome {
            ExtractionOutcome::Draft { .. } => drafts += 1,
            ExtractionOutcome::Refusal { .. } => refusals += 1,
        }
        outcomes.push(ClusterOutcome { cluster_id: cluster.id.clone(), outcome });
    }
    write_artifact(&artifact_path(&config.out_dir, Stage::Extract), &outcomes)?;
    Ok(format!(
        "extract: {} clusters -> {drafts} drafts, {refusals} refusals",
        candidates.clusters.len()
    ))
}

fn load_drafts(config: &PipelineConfig) -> Result<Vec<(String, Contract)>> {
    let outcomes: Vec<ClusterOutcome> =
        read_artifact(&artifact_path(&config.out_dir, Stage::Extract))?;
    Ok(outcomes
        .into_iter()
        .filter_map(|o| match o.outcome {
            ExtractionOutcome::Draft { contract } => Some((o.cluster_id, contract)),
            ExtractionOutcome::Refusal { .. } => None,
        })
        .collect())
}

fn stage_verify(config: &PipelineConfig) -> Result<String> {
    let library: SkillLibrary = read_artifact(&artifact_path(&config.out_dir, Stage::Parse))?;
    let candidates: CandidatesArtifact =
        read_artifact(&artifact_path(&config.out_dir, Stage::Propose))?;
    let outcomes: Vec<ClusterOutcome> =
        read_artifact(&artifact_path(&config.out_dir, Stage::Extract))?;
    let policy = effective_policy_for_verify(config)?;

    let mut verdicts = Vec::new();
    let mut refusals = 0usize;
    for outcome in &outcomes {
        match &outcome.outcome {
            ExtractionOutcome::Refusal { .. } => refusals += 1,
            ExtractionOutcome::Draft { contract } => {
                let cluster = candidates
                    .clusters
                    .iter()
                    .find(|c| c.id == outcome.cluster_id)
                    .ok_or_else(|| {
                        Error::Integrity(format!(
                            "contracts artifact references unknown cluster {}",
                            outcome.cluster_id
                        ))
                    })?;
                let profile = verify_candidate(cluster, contract, &library, &policy);
                verdicts.push(CandidateVerdict {
                    cluster_id: cluster.id.clone(),
                    contract_id: contract.id.clone(),
                    profile,
                });
            }
        }
    }
    let report = VerifierReport::new(policy, verdicts, refusals);
    let summary = report.summary.clone();
    write_artifact(&artifact_path(&config.out_dir, Stage::Verify), &report)?;
    Ok(format!(
        "verify: {} candidates -> {} auto / {} review / {} reject",
        report.verdicts.len(),
        summary.auto_promote,
        summary.review,
        summary.reject
    ))
}

/// The verify and controls stages must not read the calibrate artifact (it
/// is downstream); they use the explicit policy file or the default.
fn effective_policy_for_verify(config: &PipelineConfig) -> Result<PolicyConfig> {
    let policy: PolicyConfig = match &config.policy_path {
        Some(path) => read_artifact(path)?,
        None => PolicyConfig::default(),
    };
    policy.validate()?;
    Ok(policy)
}

fn stage_controls(config: &PipelineConfig) -> Result<String> {
    let library: SkillLibrary = read_artifact(&artifact_path(&config.out_dir, Stage::Parse))?;
    let candidates: CandidatesArtifact =
        read_artifact(&artifact_path(&config.out_dir, Stage::Propose))?;
    let drafts = load_drafts(config)?;
    let policy = effective_policy_for_verify(config)?;

    let controls = generate_controls(
        &library,
        &candidates.clusters,
        &drafts,
        config.n_per_class,
        config.seed,
    )?;
    let mut per_class: BTreeMap<String, usize> = BTreeMap::new();
    let records: Vec<ControlRecord> = controls
        .into_iter()
        .map(|control| {
            *per_class.entry(control.class_tag.to_string()).or_insert(0) += 1;
            let profile =
                verify_candidate(&control.cluster, &control.contract, &library, &policy);
            ControlRecord { control, profile }
        })
        .collect();
    let artifact = ControlsArtifact {
        seed: config.seed,
        n_per_class: config.n_per_class,
        records,
    };
    write_artifact(&artifact_path(&config.out_dir, Stage::Controls), &artifact)?;
    let breakdown: Vec<String> =
        per_class.iter().map(|(class, n)| format!("{n} {class}")).collect();
    Ok(format!(
        "controls: {} generated ({})",
        artifact.records.len(),
        breakdown.join(", ")
    ))
}

fn stage_calibrate(config: &PipelineConfig) -> Result<String> {
    let report: VerifierReport = read_artifact(&artifact_path(&config.out_dir, Stage::Verify))?;
    let controls: ControlsArtifact =
        read_artifact(&artifact_path(&config.out_dir, Stage::Controls))?;

    let candidate_profiles: Vec<crate::verify::VerifierProfile> =
        report.verdicts.iter().map(|v| v.profile.clone()).collect();
    let control_profiles: Vec<crate::verify::VerifierProfile> =
        controls.records.iter().map(|r| r.profile.clone()).collect();

    let calibration = grid_search(
        &candidate_profiles,
        &control_profiles,
        &config.grid,
        &report.policy,
        config.fp_ceiling_percent,
    )?;
    let selected = calibration.selected.clone().ok_or_else(|| {
        Error::Integrity(format!(
            "no grid row meets the fp ceiling of {}%",
            config.fp_ceiling_percent
        ))
    })?;
    write_artifact(&config.out_dir.join("calibration_report.json"), &calibration)?;
    write_artifact(&artifact_path(&config.out_dir, Stage::Calibrate), &selected)?;
    let zero_fp = calibration.rows.iter().filter(|r| r.fp_percent == 0.0).count();
    Ok(format!(
        "calibrate: {} rows, selected ({:.2}, {:.2}), monotonic {}, {zero_fp}/{} rows at 0% fp",
        calibration.rows.len(),
        selected.tau_auto,
        selected.tau_rev,
        calibration.monotonic,
        calibration.rows.len()
    ))
}

fn stage_refactor(config: &PipelineConfig) -> Result<String> {
    let library: SkillLibrary = read_artifact(&artifact_path(&config.out_dir, Stage::Parse))?;
    let candidates: CandidatesArtifact =
        read_artifact(&artifact_path(&config.out_dir, Stage::Propose))?;
    let report: VerifierReport = read_artifact(&artifact_path(&config.out_dir, Stage::Verify))?;
    let drafts = load_drafts(config)?;
    let policy = effective_policy(config)?;

    // Tier guard: only auto_promote contracts reach call-site detection.
    // Decisions are re-derived from the stored scores under the effective
    // (possibly calibrated) policy; checks never re-run here.
    let mut promoted: BTreeMap<String, Contract> = BTreeMap::new();
    let mut cluster_of: BTreeMap<String, String> = BTreeMap::new();
    for verdict in &report.verdicts {
        let decision = decide(verdict.profile.scores(), &policy);
        if decision.decision != Decision::AutoPromote {
            continue;
        }
        let Some((_, contract)) = drafts.iter().find(|(cid, _)| cid == &verdict.cluster_id)
        else {
            continue;
        };
        let mut contract = contract.clone();
        contract.verifier_stats = Some(decision);
        cluster_of.insert(contract.id.clone(), verdict.cluster_id.clone());
        promoted.insert(contract.id.clone(), contract);
    }

    let be_live = config.backend == BackendMode::Live && config.llm_bindings;
    let be_backend = config.completion_backend(be_live)?;
    let rc_backend = config.completion_backend(config.backend == BackendMode::Live)?;

    let mut all_sites: Vec<CallSite> = Vec::new();
    for (contract_id, contract) in &promoted {
        let cluster_id = &cluster_of[contract_id];
        let cluster = candidates
            .clusters
            .iter()
            .find(|c| &c.id == cluster_id)
            .ok_or_else(|| Error::Integrity(format!("missing cluster {cluster_id}")))?;
        for site in detect_call_sites(contract_id, cluster) {
            all_sites.push(be_pass(site, contract, &library, be_backend.as_ref())?);
        }
    }

    // record confirmed bindings on the contracts
    for site in &all_sites {
        if site.status == SiteStatus::BeConfirmed {
            if let Some(contract) = promoted.get_mut(&site.contract_id) {
                contract.bindings.insert(site.site_key(), site.bindings.clone());
            }
        }
    }

    let mut rewritten: Vec<RewrittenParent> = Vec::new();
    for parent in &library.parents {
        let parent_sites: Vec<CallSite> = all_sites
            .iter()
            .filter(|s| s.parent_id == parent.id && s.status == SiteStatus::BeConfirmed)
            .cloned()
            .collect();
        if parent_sites.is_empty() {
            continue;
        }
        let r = rewrite_parent(parent, &parent_sites, &promoted)?;
        let r = rc_pass(r, parent, &promoted, rc_backend.as_ref());
        rewritten.push(r);
    }

    let refactored = emit_refactored_library(
        &library,
        rewritten,
        &promoted,
        all_sites,
        &config.out_dir,
    )?;
    let s = &refactored.summary;
    let line = format!(
        "refactor: {} sites -> {} confirmed, {} dropped; rewrote {} parents ({} passthrough), rc {} rewritten / {} clean / {} failed",
        s.sites_detected,
        s.sites_confirmed,
        s.sites_dropped,
        refactored.rewritten.len(),
        refactored.passthrough.len(),
        s.rc_rewritten,
        s.rc_clean,
        s.rc_failed
    );
    write_artifact(&artifact_path(&config.out_dir, Stage::Refactor), &refactored)?;
    Ok(line)
}

fn stage_pool(config: &PipelineConfig) -> Result<String> {
    let library: SkillLibrary = read_artifact(&artifact_path(&config.out_dir, Stage::Parse))?;
    let refactored: RefactoredLibrary =
        read_artifact(&artifact_path(&config.out_dir, Stage::Refactor))?;
    let provider = config.embedding_provider()?;
    let pool = build_pool(&refactored, &library, provider.as_ref(), config.include_children)?;
    let children = pool.entries.iter().filter(|e| e.is_child).count();
    let line = format!("pool: {} entries ({} children)", pool.entries.len(), children);
    write_artifact(&artifact_path(&config.out_dir, Stage::Pool), &pool)?;
    Ok(line)
}

/// The final report of a full run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineReport {
    pub stages: Vec<StageSummary>,
    pub skipped: Vec<String>,
    pub verifier_summary: Option<crate::verify::VerifierSummary>,
}

/// Run every stage in order. Stages whose artifact already exists are
/// skipped unless `force` is set, which is what makes interrupted runs
/// resumable: delete an artifact to recompute from that stage on.
pub fn run_all(config: &PipelineConfig, force: bool) -> Result<PipelineReport> {
    config.validate()?;
    let mut stages = Vec::new();
    let mut skipped = Vec::new();
    for stage in Stage::ALL {
        let path = artifact_path(&config.out_dir, stage);
        if !force && path.exists() {
            skipped.push(stage.name().to_string());
            continue;
        }
        stages.push(run_stage(stage, config)?);
    }
    let verifier_summary = {
        let path = artifact_path(&config.out_dir, Stage::Verify);
        if path.exists() {
            let report: VerifierReport = read_artifact(&path)?;
            Some(report.summary)
        } else {
            None
        }
    };
    Ok(PipelineReport { stages, skipped, verifier_summary })
}

/// Load a previously built pool, or build one on the fly from artifacts.
pub fn load_or_build_pool(config: &PipelineConfig, include_children: bool) -> Result<RetrievalPool> {
    let pool_path = artifact_path(&config.out_dir, Stage::Pool);
    if pool_path.exists() {
        let pool: RetrievalPool = read_artifact(&pool_path)?;
        if pool.include_children == include_children {
            return Ok(pool);
        }
    }
    let library: SkillLibrary = read_artifact(&artifact_path(&config.out_dir, Stage::Parse))?;
    let refactored: RefactoredLibrary =
        read_artifact(&artifact_path(&config.out_dir, Stage::Refactor))?;
    let provider = config.embedding_provider()?;
    build_pool(&refactored, &library, provider.as_ref(), include_children)
}
