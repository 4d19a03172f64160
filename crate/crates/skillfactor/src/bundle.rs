//! Retrieval pool and substituted bundles.
//!
//! The pool is hierarchical-only by default: it indexes parent skills, never
//! child contracts, so a child can only be reached through a parent's invoke
//! placeholder. For each retrieved parent that was rewritten, the bundle
//! re-presents the pipeline's outputs in the order an agent consumes them:
//! concrete action templates first, then the rewritten skeleton, then the
//! inlined child contracts. The bundle adds no content of its own beyond a
//! fixed notation header and section labels.

use serde::{Deserialize, Serialize};

use crate::embed::{cosine, EmbeddingProvider};
use crate::error::{Error, Result};
use crate::parser::SkillLibrary;
use crate::refactor::RefactoredLibrary;

/// Default number of results returned by the pool.
pub const DEFAULT_K: usize = 8;

/// Fixed notice rendered at the top of a substituted bundle.
pub const BUNDLE_HEADER: &str = "The invoke(contract, {args}) lines below are notation marking \
where this skill delegates to a typed child contract; they are not actions to emit. Read the \
action templates first for the concrete steps, then the skeleton, then the contract blocks for \
what each call guarantees.";

/// Fixed section labels of the rendered bundle. Containment checks treat
/// these, like the header, as render furniture rather than content.
pub const SECTION_TEMPLATES: &str = "## Action templates";
pub const SECTION_SKELETON: &str = "## Rewritten skeleton";
pub const SECTION_CONTRACTS: &str = "## Child contracts";

/// Every fixed string the renderer may emit, for containment oracles.
pub fn render_furniture() -> String {
    format!(
        "{BUNDLE_HEADER}\n{SECTION_TEMPLATES}\n{SECTION_SKELETON}\n{SECTION_CONTRACTS}\n\
         bindings trigger inputs outputs preconditions postconditions contract template \
         required optional state"
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoolEntry {
    pub id: String,
    /// Indexed text: name plus frontmatter description (or trigger for
    /// children in ablation mode).
    pub text: String,
    pub vector: Vec<f32>,
    pub is_child: bool,
}

/// The retrieval index.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetrievalPool {
    pub entries: Vec<PoolEntry>,
    pub include_children: bool,
    pub k_default: usize,
}

/// Build the pool: one entry per parent; child contracts only in the
/// explicit ablation mode.
pub fn build_pool(
    refactored: &RefactoredLibrary,
    library: &SkillLibrary,
    provider: &dyn EmbeddingProvider,
    include_children: bool,
) -> Result<RetrievalPool> {
    let mut ids_texts: Vec<(String, String, bool)> = library
        .parents
        .iter()
        .map(|p| {
            let text = format!("{}\n{}", p.name(), p.description());
            (p.id.clone(), text, false)
        })
        .collect();
    if include_children {
        for (id, contract) in &refactored.children {
            ids_texts.push((id.clone(), format!("{id}\n{}", contract.trigger), true));
        }
    }
    ids_texts.sort_by(|a, b| a.0.cmp(&b.0));

    let texts: Vec<String> = ids_texts.iter().map(|(_, t, _)| t.clone()).collect();
    let vectors = provider.embed(&texts)?;
    let entries = ids_texts
        .into_iter()
        .zip(vectors)
        .map(|((id, text, is_child), vector)| PoolEntry { id, text, vector, is_child })
        .collect();
    Ok(RetrievalPool { entries, include_children, k_default: DEFAULT_K })
}

/// Cosine top-k over the pool; deterministic ties broken by entry id.
///
/// This is an interface-compatible stand-in for heavier rerank retrievers:
/// the pool contract (parents only, top-K inline) is what matters here.
pub fn retrieve(
    query: &str,
    pool: &RetrievalPool,
    provider: &dyn EmbeddingProvider,
    k: usize,
) -> Result<Vec<(String, f32)>> {
    if pool.entries.is_empty() {
        return Err(Error::Config("retrieval pool is empty".into()));
    }
    if k == 0 {
        return Err(Error::Config("k must be >= 1".into()));
    }
    let qv = provider
        .embed(&[query.to_string()])?
        .into_iter()
        .next()
        .ok_or_else(|| Error::Provider { batch: 0, message: "empty embedding".into() })?;
    let mut scored: Vec<(String, f32)> = pool
        .entries
        .iter()
        .map(|e| (e.id.clone(), cosine(&qv, &e.vector)))
        .collect();
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal).then(a.0.cmp(&b.0))
    });
    scored.truncate(k);
    Ok(scored)
}

/// The concrete "how": one per placeholder, read before the skeleton.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TemplateBlock {
    pub placeholder: String,
    /// Verbatim unit body the placeholder replaced.
    pub original_unit_text: String,
    pub bindings: std::collections::BTreeMap<String, String>,
    pub residual_text: String,
}

/// The abstract "what": the inlined child contract interface.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContractBlock {
    pub id: String,
    pub trigger: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub preconditions: Vec<String>,
    pub postconditions: Vec<String>,
}

/// The retrieval-time rendering of one parent.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubstitutedBundle {
    pub parent_id: String,
    /// Empty for untouched parents, which pass through as raw markdown.
    pub header: String,
    pub template_blocks: Vec<TemplateBlock>,
    pub skeleton: String,
    pub contract_blocks: Vec<ContractBlock>,
}

/// Build the bundle for one parent.
///
/// Touched parents yield the full bundle; untouched parents yield their raw
/// markdown with empty template and contract sections.
pub fn substitute(
    parent_id: &str,
    refactored: &RefactoredLibrary,
    library: &SkillLibrary,
) -> Result<SubstitutedBundle> {
    let Some(rewritten) = refactored.rewritten_parent(parent_id) else {
        let parent = library.parent(parent_id).ok_or_else(|| {
            Error::Config(format!("unknown parent id `{parent_id}`"))
        })?;
        return Ok(SubstitutedBundle {
            parent_id: parent_id.to_string(),
            header: String::new(),
            template_blocks: Vec::new(),
            skeleton: parent.render(),
            contract_blocks: Vec::new(),
        });
    };

    let template_blocks: Vec<TemplateBlock> = rewritten
        .blocks
        .iter()
        .map(|b| TemplateBlock {
            placeholder: b.placeholder.clone(),
            original_unit_text: b.original_unit_text.clone(),
            bindings: b.bindings.clone(),
            residual_text: b.residual_text.clone(),
        })
        .collect();

    let mut contract_blocks = Vec::new();
    for id in &rewritten.invoked_contracts {
        let contract = refactored.children.get(id).ok_or_else(|| {
            Error::Integrity(format!(
                "skeleton of `{parent_id}` invokes `{id}` but the child store has no such contract"
            ))
        })?;
        contract_blocks.push(ContractBlock {
            id: contract.id.clone(),
            trigger: contract.trigger.clone(),
            inputs: contract
                .input_schema
                .iter()
                .map(|i| {
                    let req = if i.required { "required" } else { "optional" };
                    format!("{} ({}, {req})", i.name, i.type_tag)
                })
                .collect(),
            outputs: contract
                .output_schema
                .iter()
                .map(|o| format!("{} ({})", o.name, o.type_tag))
                .collect(),
            preconditions: contract.preconditions.clone(),
            postconditions: contract.postconditions.clone(),
        });
    }

    Ok(SubstitutedBundle {
        parent_id: parent_id.to_string(),
        header: BUNDLE_HEADER.to_string(),
        template_blocks,
        skeleton: rewritten.skeleton.clone(),
        contract_blocks,
    })
}

/// Render the bundle as markdown: header, templates, skeleton, contracts —
/// in that order, always.
pub fn render_bundle(bundle: &SubstitutedBundle) -> String {
    if bundle.header.is_empty() {
        return bundle.skeleton.clone();
    }
    let mut out = String::new();
    out.push_str(&bundle.header);
    out.push_str("\n\n");
    out.push_str(SECTION_TEMPLATES);
    out.push('\n');
    for block in &bundle.template_blocks {
        out.push('\n');
        out.push_str(&block.placeholder);
        out.push('\n');
        out.push_str(block.original_unit_text.trim_end());
        out.push('\n');
        if !block.bindings.is_empty() {
            let args: Vec<String> =
                block.bindings.iter().map(|(k, v)| format!("{k}=\"{v}\"")).collect();
            out.push_str(&format!("bindings: {}\n", args.join(", ")));
        }
        if !block.residual_text.is_empty() {
            out.push_str(&block.residual_text);
            out.push('\n');
        }
    }
    out.push('\n');
    out.push_str(SECTION_SKELETON);
    out.push_str("\n\n");
    out.push_str(bundle.skeleton.trim_end());
    out.push_str("\n\n");
    out.push_str(SECTION_CONTRACTS);
    out.push('\n');
    for block in &bundle.contract_blocks {
        out.push('\n');
        out.push_str(&format!("contract {}\n", block.id));
        out.push_str(&format!("trigger: {}\n", block.trigger));
        out.push_str(&format!("inputs: {}\n", block.inputs.join(", ")));
        out.push_str(&format!("outputs: {}\n", block.outputs.join(", ")));
        for p in &block.preconditions {
            out.push_str(&format!("preconditions: {p}\n"));
        }
        for p in &block.postconditions {
            out.push_str(&format!("postconditions: {p}\n"));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::LocalEmbedder;
    use crate::refactor::{RefactorSummary, RefactoredLibrary};
    use std::collections::BTreeMap;

    fn empty_refactored() -> RefactoredLibrary {
        RefactoredLibrary {
            children: BTreeMap::new(),
            rewritten: Vec::new(),
            passthrough: Vec::new(),
            call_sites: Vec::new(),
            summary: RefactorSummary::default(),
        }
    }

    #[test]
    fn empty_library_builds_empty_pool() {
        let lib = SkillLibrary { source_dir: String::new(), parents: vec![] };
        let pool = build_pool(&empty_refactored(), &lib, &LocalEmbedder, false).unwrap();
        assert!(pool.entries.is_empty());
        assert_eq!(pool.k_default, DEFAULT_K);
    }

    #[test]
    fn retrieve_on_empty_pool_is_error() {
        let pool = RetrievalPool { entries: vec![], include_children: false, k_default: DEFAULT_K };
        assert!(retrieve("q", &pool, &LocalEmbedder, 3).is_err());
    }

    #[test]
    fn self_similar_entry_ranks_first() {
        let lib = SkillLibrary {
            source_dir: String::new(),
            parents: vec![
                crate::parser::parse_document(
                    std::path::Path::new("a.md"),
                    "---\nname: mover\ndescription: move objects between receptacles\n---\nbody\n",
                    vec![],
                ),
                crate::parser::parse_document(
                    std::path::Path::new("b.md"),
                    "---\nname: emailer\ndescription: validate email addresses\n---\nbody\n",
                    vec![],
                ),
            ],
        };
        let pool = build_pool(&empty_refactored(), &lib, &LocalEmbedder, false).unwrap();
        let hits = retrieve("mover\nmove objects between receptacles", &pool, &LocalEmbedder, 1)
            .unwrap();
        assert_eq!(hits[0].0, "a");
    }
}
