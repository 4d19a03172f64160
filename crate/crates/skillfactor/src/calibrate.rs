//! Negative-control generation and threshold calibration.
//!
//! Three single-library control classes, ten of each by default:
//!
//! * `B_same_domain_distinct` — units from different (verb, object) frames
//!   forced into one cluster; a sound verifier rejects.
//! * `C_near_miss` — same verb but different object; the binding check fails
//!   per-parent because each parent only has its own object word.
//! * `D_swapped_contract` — a real cluster paired with a contract from a
//!   different cluster; the coverage check fails.
//!
//! Grid search then re-decides every stored profile at each threshold pair;
//! it never re-runs a check. The selected row is the most permissive one
//! whose false-positive rate on the controls stays under the ceiling.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extract::{Contract, InputField};
use crate::parser::SkillLibrary;
use crate::propose::{extract_frame, CandidateCluster, Frame};
use crate::text;
use crate::verify::{decide, CheckScores, Decision, PolicyConfig, VerifierProfile};

/// The App-style 13-row default grid from (0.30, 0.10) to (0.90, 0.70).
pub const DEFAULT_GRID: [(f64, f64); 13] = [
    (0.30, 0.10),
    (0.35, 0.15),
    (0.40, 0.20),
    (0.45, 0.25),
    (0.50, 0.30),
    (0.55, 0.35),
    (0.60, 0.40),
    (0.65, 0.35),
    (0.70, 0.50),
    (0.75, 0.55),
    (0.80, 0.60),
    (0.85, 0.65),
    (0.90, 0.70),
];

/// Default number of controls per class.
pub const DEFAULT_N_PER_CLASS: usize = 10;

/// Default false-positive ceiling for row selection, in percent.
pub const DEFAULT_FP_CEILING_PERCENT: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ControlClass {
    #[serde(rename = "B_same_domain_distinct")]
    SameDomainDistinct,
    #[serde(rename = "C_near_miss")]
    NearMiss,
    #[serde(rename = "D_swapped_contract")]
    SwappedContract,
}

impl std::fmt::Display for ControlClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ControlClass::SameDomainDistinct => "B_same_domain_distinct",
            ControlClass::NearMiss => "C_near_miss",
            ControlClass::SwappedContract => "D_swapped_contract",
        };
        f.write_str(s)
    }
}

/// A synthetic adversarial (cluster, contract) pair a sound verifier must
/// reject.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NegativeControl {
    pub id: String,
    pub class_tag: ControlClass,
    pub cluster: CandidateCluster,
    pub contract: Contract,
    /// How this control was manufactured, for audit.
    pub provenance: String,
}

/// Generate `n_per_class` controls per class from real library material.
///
/// The corpus is reproducible from `seed`. Classes B and C error when the
/// library lacks enough raw material; class D cycles through the available
/// swapped pairings when there are fewer than requested.
pub fn generate_controls(
    library: &SkillLibrary,
    clusters: &[CandidateCluster],
    contracts: &[(String, Contract)],
    n_per_class: usize,
    seed: u64,
) -> Result<Vec<NegativeControl>> {
    if n_per_class == 0 {
        return Ok(Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut controls = Vec::new();
    controls.extend(class_b(library, n_per_class, &mut rng)?);
    controls.extend(class_c(library, n_per_class, &mut rng)?);
    controls.extend(class_d(clusters, contracts, n_per_class, &mut rng)?);
    Ok(controls)
}

struct UnitInfo {
    unit_ref: crate::parser::UnitRef,
    frame: Frame,
    text_tokens: BTreeSet<String>,
    first_sentence: String,
}

fn unit_infos(library: &SkillLibrary) -> Vec<UnitInfo> {
    let mut infos: Vec<UnitInfo> = library
        .units()
        .map(|(_, unit)| UnitInfo {
            unit_ref: unit.unit_ref(),
            frame: extract_frame(unit),
            text_tokens: text::token_set(&unit.text()),
            first_sentence: text::first_sentence(&unit.body).to_string(),
        })
        .filter(|info| !info.frame.verb.is_empty())
        .collect();
    infos.sort_by(|a, b| a.unit_ref.cmp(&b.unit_ref));
    infos
}

fn forced_cluster(id: &str, a: &UnitInfo, b: &UnitInfo) -> CandidateCluster {
    let mut members = vec![a.unit_ref.clone(), b.unit_ref.clone()];
    members.sort();
    let source_parents =
        members.iter().map(|r| r.parent_id.clone()).collect::<BTreeSet<String>>();
    let mut signature = a.frame.clone();
    signature.objects.extend(b.frame.objects.iter().cloned());
    CandidateCluster {
        id: id.to_string(),
        member_units: members,
        frame_signature: signature,
        min_pairwise_cosine: 0.0,
        source_parents,
    }
}

fn synth_contract(id: &str, trigger: &str, inputs: &[String]) -> Contract {
    Contract {
        id: id.to_string(),
        trigger: trigger.to_string(),
        input_schema: inputs
            .iter()
            .map(|name| InputField { name: name.clone(), type_tag: "text".into(), required: true })
            .collect(),
        output_schema: Vec::new(),
        preconditions: Vec::new(),
        postconditions: Vec::new(),
        resources: Vec::new(),
        side_effects: Vec::new(),
        source_parents: BTreeSet::new(),
        bindings: Default::default(),
        verifier_stats: None,
        extras: Default::default(),
    }
}

/// Class B: units from different (verb, object) frames forced together; the
/// contract is synthesized from the first unit only, so the second parent
/// cannot cover it.
fn class_b(
    library: &SkillLibrary,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<NegativeControl>> {
    let infos = unit_infos(library);
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for i in 0..infos.len() {
        for j in (i + 1)..infos.len() {
            let (a, b) = (&infos[i], &infos[j]);
            if a.unit_ref.parent_id == b.unit_ref.parent_id {
                continue;
            }
            if a.frame.shares_with(&b.frame) {
                continue;
            }
            if a.frame.objects.is_empty() {
                continue;
            }
            pairs.push((i, j));
        }
    }
    if pairs.len() < n {
        return Err(Error::InsufficientControls {
            class: "B_same_domain_distinct".into(),
            detail: format!("need {n} non-sharing cross-parent unit pairs, found {}", pairs.len()),
        });
    }
    let chosen: Vec<(usize, usize)> =
        pairs.choose_multiple(rng, n).copied().collect();
    Ok(chosen
        .into_iter()
        .enumerate()
        .map(|(k, (i, j))| {
            let (a, b) = (&infos[i], &infos[j]);
            let id = format!("control-b-{k:02}");
            let inputs: Vec<String> = a.frame.objects.iter().take(3).cloned().collect();
            let contract = synth_contract(&id, &a.first_sentence, &inputs);
            NegativeControl {
                id: id.clone(),
                class_tag: ControlClass::SameDomainDistinct,
                cluster: forced_cluster(&id, a, b),
                contract,
                provenance: format!(
                    "forced {} (frame {}) with {} (frame {})",
                    a.unit_ref, a.frame.verb, b.unit_ref, b.frame.verb
                ),
            }
        })
        .collect())
}

/// Class C: same verb, different object. The contract names one distinctive
/// object from each member, so every parent can bind only its own.
fn class_c(
    library: &SkillLibrary,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<NegativeControl>> {
    let infos = unit_infos(library);
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for i in 0..infos.len() {
        for j in (i + 1)..infos.len() {
            let (a, b) = (&infos[i], &infos[j]);
            if a.unit_ref.parent_id == b.unit_ref.parent_id {
                continue;
            }
            if a.frame.verb != b.frame.verb || a.frame.verb.is_empty() {
                continue;
            }
            if a.frame.objects.is_empty() || b.frame.objects.is_empty() {
                continue;
            }
            if a.frame.objects.intersection(&b.frame.objects).next().is_some() {
                continue;
            }
            // the near-miss must be strict: neither unit's text mentions the
            // other's distinguishing object
            let a_obj = a.frame.objects.iter().next().unwrap();
            let b_obj = b.frame.objects.iter().next().unwrap();
            if a.text_tokens.contains(b_obj) || b.text_tokens.contains(a_obj) {
                continue;
            }
            pairs.push((i, j));
        }
    }
    if pairs.len() < n {
        return Err(Error::InsufficientControls {
            class: "C_near_miss".into(),
            detail: format!("need {n} same-verb distinct-object pairs, found {}", pairs.len()),
        });
    }
    let chosen: Vec<(usize, usize)> =
        pairs.choose_multiple(rng, n).copied().collect();
    Ok(chosen
        .into_iter()
        .enumerate()
        .map(|(k, (i, j))| {
            let (a, b) = (&infos[i], &infos[j]);
            let id = format!("control-c-{k:02}");
            let inputs =
                vec![a.frame.objects.iter().next().unwrap().clone(), b.frame.objects.iter().next().unwrap().clone()];
            let contract = synth_contract(&id, &a.frame.verb, &inputs);
            NegativeControl {
                id: id.clone(),
                class_tag: ControlClass::NearMiss,
                cluster: forced_cluster(&id, a, b),
                contract,
                provenance: format!(
                    "near-miss verb `{}`: {} vs {}",
                    a.frame.verb, a.unit_ref, b.unit_ref
                ),
            }
        })
        .collect())
}

/// Class D: a real cluster paired with a real contract from a different
/// cluster. When fewer distinct pairings exist than requested, the pairings
/// cycle (a small library has only |clusters|^2 - |clusters| swaps).
fn class_d(
    clusters: &[CandidateCluster],
    contracts: &[(String, Contract)],
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<NegativeControl>> {
    let with_draft: Vec<(&CandidateCluster, &Contract)> = clusters
        .iter()
        .filter_map(|c| {
            contracts.iter().find(|(cid, _)| cid == &c.id).map(|(_, k)| (c, k))
        })
        .collect();
    if with_draft.len() < 2 {
        return Err(Error::InsufficientControls {
            class: "D_swapped_contract".into(),
            detail: format!("need >= 2 real clusters with valid drafts, found {}", with_draft.len()),
        });
    }
    let mut swaps: Vec<(usize, usize)> = Vec::new();
    for i in 0..with_draft.len() {
        for j in 0..with_draft.len() {
            if i != j {
                swaps.push((i, j));
            }
        }
    }
    swaps.shuffle(rng);
    Ok((0..n)
        .map(|k| {
            let (ci, kj) = swaps[k % swaps.len()];
            let (cluster, _) = with_draft[ci];
            let (_, contract) = with_draft[kj];
            let id = format!("control-d-{k:02}");
            let mut cluster = cluster.clone();
            cluster.id = id.clone();
            NegativeControl {
                id: id.clone(),
                class_tag: ControlClass::SwappedContract,
                cluster,
                contract: contract.clone(),
                provenance: format!(
                    "cluster {} paired with contract `{}` from {}",
                    with_draft[ci].0.id, contract.id, with_draft[kj].0.id
                ),
            }
        })
        .collect())
}

/// One grid row of the calibration report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridRow {
    pub tau_auto: f64,
    pub tau_rev: f64,
    /// Real candidates auto-promoted at these thresholds.
    pub n_auto: usize,
    /// Real candidates sent to review.
    pub n_review: usize,
    /// Percent of controls deciding anything other than reject.
    pub fp_percent: f64,
}

/// The calibration artifact: the grid, the selected policy, and whether the
/// promotion counts were monotone.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub rows: Vec<GridRow>,
    pub selected: Option<PolicyConfig>,
    pub monotonic: bool,
    pub fp_ceiling_percent: f64,
    pub n_candidates: usize,
    pub n_controls: usize,
}

/// Re-decide stored profiles over a threshold grid.
///
/// Scores are fixed; only thresholds move. A control counts as a false
/// positive when it decides `auto_promote` or `review` (anything a human
/// might see as accepted). The selected row is the lowest-threshold row with
/// `fp_percent <= ceiling`, ties broken by larger `n_auto`.
pub fn grid_search(
    candidates: &[VerifierProfile],
    controls: &[VerifierProfile],
    grid: &[(f64, f64)],
    weights: &PolicyConfig,
    fp_ceiling_percent: f64,
) -> Result<CalibrationReport> {
    if grid.is_empty() {
        return Err(Error::Config("calibration grid must not be empty".into()));
    }
    let mut rows = Vec::with_capacity(grid.len());
    for &(tau_auto, tau_rev) in grid {
        let policy = weights.with_thresholds(tau_auto, tau_rev);
        policy.validate()?;
        let mut n_auto = 0;
        let mut n_review = 0;
        for profile in candidates {
            match decide(profile.scores(), &policy).decision {
                Decision::AutoPromote => n_auto += 1,
                Decision::Review => n_review += 1,
                Decision::Reject => {}
            }
        }
        let fp = controls
            .iter()
            .filter(|p| decide(p.scores(), &policy).decision != Decision::Reject)
            .count();
        let fp_percent = if controls.is_empty() {
            0.0
        } else {
            100.0 * fp as f64 / controls.len() as f64
        };
        rows.push(GridRow { tau_auto, tau_rev, n_auto, n_review, fp_percent });
    }

    let mut by_threshold: Vec<&GridRow> = rows.iter().collect();
    by_threshold.sort_by(|a, b| {
        (a.tau_auto, a.tau_rev)
            .partial_cmp(&(b.tau_auto, b.tau_rev))
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(b.n_auto.cmp(&a.n_auto))
    });
    let monotonic = by_threshold.windows(2).all(|w| w[0].n_auto >= w[1].n_auto);
    let selected = by_threshold
        .iter()
        .find(|row| row.fp_percent <= fp_ceiling_percent)
        .map(|row| weights.with_thresholds(row.tau_auto, row.tau_rev));

    Ok(CalibrationReport {
        rows,
        selected,
        monotonic,
        fp_ceiling_percent,
        n_candidates: candidates.len(),
        n_controls: controls.len(),
    })
}

impl VerifierProfile {
    /// The raw check scores, for score-free re-decisions.
    pub fn scores(&self) -> CheckScores {
        CheckScores {
            coverage: self.coverage,
            binding: self.binding_rate,
            replacement: self.replacement_rate,
            risk: self.risk,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile(binding: f64, coverage: f64, replacement: f64, risk: f64) -> VerifierProfile {
        decide(CheckScores { coverage, binding, replacement, risk }, &PolicyConfig::default())
    }

    #[test]
    fn zero_controls_requested_is_empty() {
        let lib = SkillLibrary { source_dir: String::new(), parents: vec![] };
        let controls = generate_controls(&lib, &[], &[], 0, 1).unwrap();
        assert!(controls.is_empty());
    }

    #[test]
    fn empty_grid_is_config_error() {
        let err = grid_search(&[], &[], &[], &PolicyConfig::default(), 5.0).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn grid_counts_and_monotonicity() {
        // three strong candidates, one borderline
        let candidates = vec![
            profile(1.0, 1.0, 1.0, 0.0),
            profile(0.95, 0.9, 1.0, 0.0),
            profile(0.9, 0.85, 0.9, 0.0),
            profile(0.7, 0.65, 0.7, 0.0),
        ];
        let controls = vec![profile(0.5, 0.2, 1.0, 0.0), profile(0.0, 0.0, 1.0, 0.9)];
        let report = grid_search(
            &candidates,
            &controls,
            &DEFAULT_GRID,
            &PolicyConfig::default(),
            DEFAULT_FP_CEILING_PERCENT,
        )
        .unwrap();
        assert_eq!(report.rows.len(), 13);
        assert!(report.monotonic);
        assert!(report.rows.iter().all(|r| r.fp_percent == 0.0));
        let selected = report.selected.expect("a selected row");
        assert_eq!(selected.tau_auto, 0.30);
        assert_eq!(selected.tau_rev, 0.10);
        // strictest row promotes the fewest
        let first = report.rows.first().unwrap().n_auto;
        let last = report.rows.last().unwrap().n_auto;
        assert!(last <= first);
    }

    #[test]
    fn insufficient_class_d_material_is_named() {
        let lib = SkillLibrary { source_dir: String::new(), parents: vec![] };
        let err = generate_controls(&lib, &[], &[], 2, 7).unwrap_err();
        match err {
            Error::InsufficientControls { class, .. } => {
                // class B runs first and fails first on an empty library
                assert_eq!(class, "B_same_domain_distinct");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }
}
