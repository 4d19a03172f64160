//! Stage 2: candidate proposal.
//!
//! Each procedural unit gets a shallow *frame* — head verb, noun-like
//! objects, code-fence languages, linked scripts — and an embedding of its
//! text. Single-linkage clustering then joins units connected by a chain of
//! pairs that share a frame and sit at cosine similarity at or above the
//! threshold. The stage is intentionally high-recall: over-clustering is
//! acceptable because the verifier filters downstream.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::embed::{cosine, EmbeddingProvider};
use crate::error::Result;
use crate::parser::{ProceduralUnit, SkillLibrary, UnitRef};
use crate::text;

/// Default clustering threshold.
pub const DEFAULT_THRESHOLD: f32 = 0.65;

/// Shallow frame for one procedural unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frame {
    /// First non-stopword token of the unit's first sentence, lowercased.
    pub verb: String,
    /// Remaining alphabetic tokens of the first sentence, length >= 3.
    pub objects: BTreeSet<String>,
    pub code_langs: BTreeSet<String>,
    pub linked_scripts: BTreeSet<String>,
}

impl Frame {
    /// Two frames share iff the verbs are equal and there is object-level
    /// evidence: intersecting objects, intersecting linked scripts, or both
    /// object sets empty.
    pub fn shares_with(&self, other: &Frame) -> bool {
        if self.verb.is_empty() || self.verb != other.verb {
            return false;
        }
        let objects_intersect = self.objects.intersection(&other.objects).next().is_some();
        let scripts_intersect =
            self.linked_scripts.intersection(&other.linked_scripts).next().is_some();
        objects_intersect
            || scripts_intersect
            || (self.objects.is_empty() && other.objects.is_empty())
    }

    fn merge(&mut self, other: &Frame) {
        self.objects.extend(other.objects.iter().cloned());
        self.code_langs.extend(other.code_langs.iter().cloned());
        self.linked_scripts.extend(other.linked_scripts.iter().cloned());
    }
}

/// Extract the frame of a unit via shallow token rules.
pub fn extract_frame(unit: &ProceduralUnit) -> Frame {
    let sentence = text::first_sentence(&unit.body);
    let filtered: Vec<String> = text::raw_tokens(sentence)
        .into_iter()
        .filter(|t| !text::is_stopword(t))
        .collect();
    let verb = filtered.first().cloned().unwrap_or_default();
    let objects = filtered
        .iter()
        .skip(1)
        .filter(|t| t.len() >= text::MIN_TOKEN_LEN && t.chars().all(|c| c.is_alphabetic()))
        .cloned()
        .collect();
    Frame {
        verb,
        objects,
        code_langs: unit.code_blocks.iter().map(|(lang, _)| lang.clone()).filter(|l| !l.is_empty()).collect(),
        linked_scripts: unit.linked_scripts.iter().cloned().collect(),
    }
}

/// A set of units hypothesised to describe one procedure.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateCluster {
    pub id: String,
    /// Members sorted by (parent id, ordinal).
    pub member_units: Vec<UnitRef>,
    /// Union of the member frames (common verb, merged evidence).
    pub frame_signature: Frame,
    /// Minimum cosine over the linkage edges inside the cluster.
    pub min_pairwise_cosine: f32,
    pub source_parents: BTreeSet<String>,
}

impl CandidateCluster {
    pub fn smallest_member(&self) -> &UnitRef {
        // member_units is sorted on construction
        &self.member_units[0]
    }
}

/// Single-linkage clustering over all units of the library.
///
/// Two units are linked when their frames share and their embeddings have
/// cosine similarity >= `threshold`; clusters are the connected components,
/// singletons discarded. Output order (and therefore cluster ids) is fixed by
/// the smallest member id, independent of input enumeration order.
pub fn cluster_candidates(
    library: &SkillLibrary,
    provider: &dyn EmbeddingProvider,
    threshold: f32,
) -> Result<Vec<CandidateCluster>> {
    let mut units: Vec<&ProceduralUnit> =
        library.units().map(|(_, u)| u).collect();
    units.sort_by(|a, b| (&a.parent_id, a.ordinal).cmp(&(&b.parent_id, b.ordinal)));

    let frames: Vec<Frame> = units.iter().map(|u| extract_frame(u)).collect();
    let texts: Vec<String> = units.iter().map(|u| u.text()).collect();
    let embeddings = provider.embed(&texts)?;

    let n = units.len();
    let mut dsu = DisjointSet::new(n);
    let mut edge_cosines: Vec<(usize, usize, f32)> = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if !frames[i].shares_with(&frames[j]) {
                continue;
            }
            let sim = cosine(&embeddings[i], &embeddings[j]);
            if sim >= threshold {
                dsu.union(i, j);
                edge_cosines.push((i, j, sim));
            }
        }
    }

    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        groups.entry(dsu.find(i)).or_default().push(i);
    }

    let mut clusters: Vec<CandidateCluster> = Vec::new();
    for (_, members) in groups {
        if members.len() < 2 {
            continue;
        }
        let mut refs: Vec<UnitRef> = members.iter().map(|&i| units[i].unit_ref()).collect();
        refs.sort();
        let mut signature = frames[members[0]].clone();
        for &i in &members[1..] {
            signature.merge(&frames[i]);
        }
        let member_set: BTreeSet<usize> = members.iter().copied().collect();
        let min_cos = edge_cosines
            .iter()
            .filter(|(i, j, _)| member_set.contains(i) && member_set.contains(j))
            .map(|&(_, _, s)| s)
            .fold(f32::INFINITY, f32::min);
        let source_parents = refs.iter().map(|r| r.parent_id.clone()).collect();
        clusters.push(CandidateCluster {
            id: String::new(),
            member_units: refs,
            frame_signature: signature,
            min_pairwise_cosine: if min_cos.is_finite() { min_cos } else { 0.0 },
            source_parents,
        });
    }

    clusters.sort_by(|a, b| a.smallest_member().cmp(b.smallest_member()));
    for (idx, cluster) in clusters.iter_mut().enumerate() {
        cluster.id = format!("cluster-{idx:03}");
    }
    Ok(clusters)
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // deterministic: smaller index wins as root
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::LocalEmbedder;
    use crate::parser::parse_document;
    use std::path::Path;

    fn unit(body: &str) -> ProceduralUnit {
        ProceduralUnit {
            parent_id: "p".into(),
            ordinal: 0,
            heading: String::new(),
            heading_level: 0,
            heading_raw: String::new(),
            body: body.into(),
            code_blocks: Vec::new(),
            linked_scripts: Vec::new(),
        }
    }

    #[test]
    fn frame_of_imperative_sentence() {
        let f = extract_frame(&unit("take salt from counter"));
        assert_eq!(f.verb, "take");
        assert_eq!(
            f.objects,
            ["salt", "counter"].iter().map(|s| s.to_string()).collect()
        );
    }

    #[test]
    fn empty_body_gives_empty_frame() {
        let f = extract_frame(&unit(""));
        assert_eq!(f.verb, "");
        assert!(f.objects.is_empty());
        assert!(f.code_langs.is_empty());
        assert!(f.linked_scripts.is_empty());
    }

    #[test]
    fn code_lang_copied_into_frame() {
        let mut u = unit("Run the export.\n```python\nprint()\n```\n");
        u.code_blocks = vec![("python".into(), "print()\n".into())];
        let f = extract_frame(&u);
        assert!(f.code_langs.contains("python"));
    }

    #[test]
    fn frame_sharing_rules() {
        let take_salt = extract_frame(&unit("take the salt from the counter"));
        let take_mug = extract_frame(&unit("take the mug from the counter"));
        let move_salt = extract_frame(&unit("move the salt to the cabinet"));
        let take_phone = extract_frame(&unit("take the phone to the desk"));
        assert!(take_salt.shares_with(&take_mug)); // same verb, "counter" shared
        assert!(!take_salt.shares_with(&move_salt)); // different verb
        assert!(!take_salt.shares_with(&take_phone)); // same verb, disjoint objects
    }

    #[test]
    fn identical_units_in_two_parents_form_one_cluster() {
        let a = parse_document(Path::new("a.md"), "## Go\ntake salt from the counter now\n", vec![]);
        let b = parse_document(Path::new("b.md"), "## Go\ntake salt from the counter now\n", vec![]);
        let lib = SkillLibrary { source_dir: String::new(), parents: vec![a, b] };
        let clusters = cluster_candidates(&lib, &LocalEmbedder, DEFAULT_THRESHOLD).unwrap();
        assert_eq!(clusters.len(), 1);
        assert_eq!(clusters[0].member_units.len(), 2);
        assert!((clusters[0].min_pairwise_cosine - 1.0).abs() < 1e-6);
        assert_eq!(clusters[0].id, "cluster-000");
    }

    #[test]
    fn singletons_are_discarded() {
        let a = parse_document(Path::new("a.md"), "## One\nvalidate the email address\n", vec![]);
        let b = parse_document(Path::new("b.md"), "## Two\nheat the object with the appliance\n", vec![]);
        let lib = SkillLibrary { source_dir: String::new(), parents: vec![a, b] };
        let clusters = cluster_candidates(&lib, &LocalEmbedder, DEFAULT_THRESHOLD).unwrap();
        assert!(clusters.is_empty());
    }
}
