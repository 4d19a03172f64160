//! Stage 1: parse a directory of markdown skill documents into parents and
//! heading-delimited procedural units.
//!
//! The parse is a pure partition of each document's bytes: YAML frontmatter,
//! then one unit per level-2/3 heading (content before the first heading is a
//! preamble unit with an empty heading). [`ParentSkill::render`] concatenates
//! the pieces back and must reproduce the input byte-for-byte; that property
//! is what lets the refactor stage splice placeholder lines into a parent
//! without disturbing anything it did not touch.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::error::{Error, Result};

/// A parsed skill library: one [`ParentSkill`] per markdown document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SkillLibrary {
    pub source_dir: String,
    pub parents: Vec<ParentSkill>,
}

impl SkillLibrary {
    pub fn parent(&self, id: &str) -> Option<&ParentSkill> {
        self.parents.iter().find(|p| p.id == id)
    }

    /// All units across the library in (parent, ordinal) order.
    pub fn units(&self) -> impl Iterator<Item = (&ParentSkill, &ProceduralUnit)> {
        self.parents.iter().flat_map(|p| p.units.iter().map(move |u| (p, u)))
    }
}

/// One skill document: frontmatter, ordered units, bundled scripts, links.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParentSkill {
    pub id: String,
    /// Path relative to the library root, for artifact traceability.
    pub rel_path: String,
    /// Key/value pairs from the YAML header; values kept as raw text.
    pub frontmatter: BTreeMap<String, String>,
    /// The verbatim frontmatter block including its `---` fences, empty when
    /// the document has none. Needed for byte-exact rendering.
    pub frontmatter_raw: String,
    pub units: Vec<ProceduralUnit>,
    pub scripts: Vec<Script>,
    /// Markdown link targets found anywhere in the document.
    pub references: Vec<String>,
    /// Best-effort parse problems; a diagnosed parent is still emitted.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<String>,
}

impl ParentSkill {
    /// Reassemble the original document bytes.
    pub fn render(&self) -> String {
        let mut out = String::with_capacity(self.frontmatter_raw.len() + 256);
        out.push_str(&self.frontmatter_raw);
        for unit in &self.units {
            out.push_str(&unit.heading_raw);
            out.push_str(&unit.body);
        }
        out
    }

    /// Display name: frontmatter `name`, falling back to the parent id.
    pub fn name(&self) -> &str {
        self.frontmatter.get("name").map(String::as_str).unwrap_or(&self.id)
    }

    /// Frontmatter `description`, falling back to the first preamble line.
    pub fn description(&self) -> String {
        if let Some(desc) = self.frontmatter.get("description") {
            return desc.clone();
        }
        self.units
            .first()
            .map(|u| crate::text::first_sentence(&u.body).to_string())
            .unwrap_or_default()
    }
}

/// A heading-delimited section of a parent.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProceduralUnit {
    pub parent_id: String,
    /// Contiguous from 0 in document order.
    pub ordinal: usize,
    /// Heading text without the `#` markers; empty for the preamble unit.
    pub heading: String,
    /// 2 or 3 for real headings, 0 for the preamble.
    pub heading_level: u8,
    /// The verbatim heading line including markers and trailing newline.
    pub heading_raw: String,
    /// Everything after the heading line up to the next unit boundary.
    pub body: String,
    /// (language tag, fence body) for each fenced block in the body.
    pub code_blocks: Vec<(String, String)>,
    /// Names of parent-owned scripts mentioned verbatim in the body.
    pub linked_scripts: Vec<String>,
}

impl ProceduralUnit {
    pub fn unit_ref(&self) -> UnitRef {
        UnitRef { parent_id: self.parent_id.clone(), ordinal: self.ordinal }
    }

    /// Text used for embeddings and token-level checks.
    pub fn text(&self) -> String {
        if self.heading.is_empty() {
            self.body.clone()
        } else {
            format!("{}\n{}", self.heading, self.body)
        }
    }
}

/// Stable address of a unit inside a library.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct UnitRef {
    pub parent_id: String,
    pub ordinal: usize,
}

impl std::fmt::Display for UnitRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}#{}", self.parent_id, self.ordinal)
    }
}

/// A bundled script from the skill's `scripts/` directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Script {
    pub name: String,
    pub body: String,
    /// Language tag derived from the file extension.
    pub lang: String,
}

/// Parse every markdown document under `source_dir`.
///
/// Document order is lexicographic by relative path, which fixes the order of
/// everything downstream. A malformed document is recorded as a diagnostic on
/// its parent rather than aborting the parse.
pub fn parse_library(source_dir: &Path) -> Result<SkillLibrary> {
    if !source_dir.is_dir() {
        return Err(Error::Io {
            path: source_dir.display().to_string(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "not a readable directory"),
        });
    }

    let mut doc_paths: Vec<PathBuf> = WalkDir::new(source_dir)
        .follow_links(false)
        .into_iter()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().is_file())
        .map(|e| e.into_path())
        .filter(|p| {
            p.extension().map(|e| e == "md").unwrap_or(false)
                && !p.components().any(|c| c.as_os_str() == "scripts")
        })
        .collect();
    doc_paths.sort();

    let mut parents = Vec::new();
    for path in doc_paths {
        let rel = path.strip_prefix(source_dir).unwrap_or(&path).to_path_buf();
        let content = std::fs::read_to_string(&path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let scripts = load_sibling_scripts(&path)?;
        parents.push(parse_document(&rel, &content, scripts));
    }

    Ok(SkillLibrary { source_dir: source_dir.display().to_string(), parents })
}

/// Parse one document body that has already been read.
pub fn parse_document(rel_path: &Path, content: &str, scripts: Vec<Script>) -> ParentSkill {
    let id = parent_id(rel_path);
    let mut diagnostics = Vec::new();

    let (frontmatter_raw, body) = split_frontmatter(content, &mut diagnostics);
    let frontmatter = parse_frontmatter(frontmatter_raw);

    let mut units = segment_units(body);
    for (ordinal, unit) in units.iter_mut().enumerate() {
        unit.parent_id = id.clone();
        unit.ordinal = ordinal;
        unit.code_blocks = extract_code_blocks(&unit.body, &mut diagnostics);
        unit.linked_scripts = scripts
            .iter()
            .filter(|s| unit.body.contains(&s.name))
            .map(|s| s.name.clone())
            .collect();
    }

    let references = extract_references(content);

    ParentSkill {
        id,
        rel_path: rel_path.display().to_string(),
        frontmatter,
        frontmatter_raw: frontmatter_raw.to_string(),
        units,
        scripts,
        references,
        diagnostics,
    }
}

/// Derive a stable parent id from the document path.
///
/// `SKILL.md` files take their directory name (the `skills_500` convention);
/// any other markdown file uses its relative path with separators replaced by
/// `-` and the extension stripped.
pub fn parent_id(rel_path: &Path) -> String {
    let is_skill_md = rel_path
        .file_name()
        .map(|f| f.eq_ignore_ascii_case("SKILL.md"))
        .unwrap_or(false);
    if is_skill_md {
        if let Some(dir) = rel_path.parent().filter(|d| !d.as_os_str().is_empty()) {
            return dir
                .components()
                .map(|c| c.as_os_str().to_string_lossy().into_owned())
                .collect::<Vec<_>>()
                .join("-");
        }
    }
    let stem = rel_path.with_extension("");
    stem.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("-")
}

/// Split body text into procedural units at level-2/3 headings.
///
/// Content before the first such heading becomes a preamble unit with an
/// empty heading (level-1 titles stay inside the preamble). Heading markers
/// inside fenced code blocks never start a unit. Total on any input.
pub fn segment_units(body: &str) -> Vec<ProceduralUnit> {
    let mut units: Vec<ProceduralUnit> = Vec::new();
    let mut current_heading_raw = String::new();
    let mut current_heading = String::new();
    let mut current_level: u8 = 0;
    let mut current_body = String::new();
    let mut started = false;
    let mut in_fence = false;

    let push_unit = |heading_raw: &mut String,
                         heading: &mut String,
                         level: u8,
                         body: &mut String,
                         units: &mut Vec<ProceduralUnit>| {
        units.push(ProceduralUnit {
            parent_id: String::new(),
            ordinal: units.len(),
            heading: std::mem::take(heading),
            heading_level: level,
            heading_raw: std::mem::take(heading_raw),
            body: std::mem::take(body),
            code_blocks: Vec::new(),
            linked_scripts: Vec::new(),
        });
    };

    for line in split_lines_keep_ends(body) {
        let trimmed = line.trim_start();
        if trimmed.starts_with("```") || trimmed.starts_with("~~~") {
            in_fence = !in_fence;
        }
        let heading_level = if in_fence { None } else { heading_level_of(line) };
        match heading_level {
            Some(level) => {
                if started || !current_body.is_empty() || !current_heading_raw.is_empty() {
                    push_unit(
                        &mut current_heading_raw,
                        &mut current_heading,
                        current_level,
                        &mut current_body,
                        &mut units,
                    );
                }
                current_heading_raw = line.to_string();
                current_heading = line
                    .trim_end()
                    .trim_start_matches('#')
                    .trim()
                    .to_string();
                current_level = level;
                started = true;
            }
            None => {
                current_body.push_str(line);
                if !started {
                    started = true;
                }
            }
        }
    }

    if started || !current_body.is_empty() {
        push_unit(
            &mut current_heading_raw,
            &mut current_heading,
            current_level,
            &mut current_body,
            &mut units,
        );
    }

    units
}

fn heading_level_of(line: &str) -> Option<u8> {
    let hashes = line.chars().take_while(|&c| c == '#').count();
    if (hashes == 2 || hashes == 3) && line[hashes..].starts_with(' ') {
        Some(hashes as u8)
    } else {
        None
    }
}

/// Line iterator that keeps line endings so concatenation is byte-exact.
fn split_lines_keep_ends(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    for (idx, _) in text.match_indices('\n') {
        out.push(&text[start..=idx]);
        start = idx + 1;
    }
    if start < text.len() {
        out.push(&text[start..]);
    }
    out
}

/// Split a leading `---` frontmatter block from the body.
///
/// Returns (frontmatter including both fences and the trailing newline, body).
fn split_frontmatter<'a>(content: &'a str, diagnostics: &mut Vec<String>) -> (&'a str, &'a str) {
    if !(content.starts_with("---\n") || content.starts_with("---\r\n")) {
        return ("", content);
    }
    let mut offset = 0;
    for (i, line) in split_lines_keep_ends(content).into_iter().enumerate() {
        if i > 0 && line.trim_end() == "---" {
            let end = offset + line.len();
            return (&content[..end], &content[end..]);
        }
        offset += line.len();
    }
    diagnostics.push("unterminated frontmatter fence; treating document as plain body".into());
    ("", content)
}

/// Parse `key: value` lines; values kept as raw text with quotes trimmed.
fn parse_frontmatter(raw: &str) -> BTreeMap<String, String> {
    let mut map = BTreeMap::new();
    for line in raw.lines() {
        if line == "---" || line.trim().is_empty() || line.starts_with(' ') {
            continue;
        }
        if let Some((key, value)) = line.split_once(':') {
            let key = key.trim();
            if key.is_empty() {
                continue;
            }
            let value = value.trim().trim_matches('"').trim_matches('\'').to_string();
            map.insert(key.to_string(), value);
        }
    }
    map
}

fn extract_code_blocks(body: &str, diagnostics: &mut Vec<String>) -> Vec<(String, String)> {
    let mut blocks = Vec::new();
    let mut lang = String::new();
    let mut acc = String::new();
    let mut open = false;
    for line in body.lines() {
        let trimmed = line.trim_start();
        if trimmed.starts_with("```") || trimmed.starts_with("~~~") {
            if open {
                blocks.push((std::mem::take(&mut lang), std::mem::take(&mut acc)));
                open = false;
            } else {
                lang = trimmed.trim_start_matches(['`', '~']).trim().to_string();
                open = true;
            }
            continue;
        }
        if open {
            acc.push_str(line);
            acc.push('\n');
        }
    }
    if open {
        diagnostics.push("unterminated code fence".into());
        blocks.push((lang, acc));
    }
    blocks
}

fn extract_references(content: &str) -> Vec<String> {
    let mut refs = Vec::new();
    let bytes = content.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'[' {
            if let Some(close) = content[i..].find("](") {
                let target_start = i + close + 2;
                if let Some(end) = content[target_start..].find(')') {
                    let target = &content[target_start..target_start + end];
                    if !target.is_empty() {
                        refs.push(target.to_string());
                    }
                    i = target_start + end + 1;
                    continue;
                }
            }
        }
        i += 1;
    }
    refs
}

fn load_sibling_scripts(doc_path: &Path) -> Result<Vec<Script>> {
    let Some(dir) = doc_path.parent() else {
        return Ok(Vec::new());
    };
    let scripts_dir = dir.join("scripts");
    if !scripts_dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut entries: Vec<PathBuf> = std::fs::read_dir(&scripts_dir)
        .map_err(|e| Error::io(scripts_dir.display().to_string(), e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_file())
        .collect();
    entries.sort();
    let mut scripts = Vec::new();
    for path in entries {
        let name = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let body = std::fs::read_to_string(&path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let lang = path
            .extension()
            .map(|e| e.to_string_lossy().into_owned())
            .unwrap_or_default();
        scripts.push(Script { name, body, lang });
    }
    Ok(scripts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_bodies(units: &[ProceduralUnit]) -> Vec<(&str, &str)> {
        units.iter().map(|u| (u.heading.as_str(), u.body.as_str())).collect()
    }

    #[test]
    fn no_headings_yields_single_preamble_unit() {
        let units = segment_units("just prose\nno headings\n");
        assert_eq!(units.len(), 1);
        assert_eq!(units[0].heading, "");
        assert_eq!(units[0].heading_level, 0);
        assert_eq!(units[0].body, "just prose\nno headings\n");
    }

    #[test]
    fn two_sections_segment_cleanly() {
        let units = segment_units("## A\nx\n## B\ny");
        assert_eq!(unit_bodies(&units), vec![("A", "x\n"), ("B", "y")]);
    }

    #[test]
    fn fenced_heading_does_not_split() {
        let body = "## Top\nbefore\n```\n## fake\n```\nafter\n";
        let units = segment_units(body);
        assert_eq!(units.len(), 1);
        assert_eq!(units[0].body, "before\n```\n## fake\n```\nafter\n");
    }

    #[test]
    fn level_one_heading_stays_in_preamble() {
        let units = segment_units("# Title\nintro\n## Section\nbody\n");
        assert_eq!(units.len(), 2);
        assert_eq!(units[0].heading, "");
        assert_eq!(units[0].body, "# Title\nintro\n");
        assert_eq!(units[1].heading, "Section");
    }

    #[test]
    fn frontmatter_two_sections() {
        let doc = "---\nname: demo\n---\n## A\none\n## B\ntwo\n";
        let parent = parse_document(Path::new("demo.md"), doc, Vec::new());
        assert_eq!(parent.frontmatter.get("name").map(String::as_str), Some("demo"));
        assert_eq!(parent.units.len(), 2);
        assert!(parent.diagnostics.is_empty());
        assert_eq!(parent.render(), doc);
    }

    #[test]
    fn unterminated_frontmatter_is_diagnosed_not_fatal() {
        let doc = "---\nname: broken\n## A\nbody\n";
        let parent = parse_document(Path::new("broken.md"), doc, Vec::new());
        assert!(!parent.diagnostics.is_empty());
        assert_eq!(parent.render(), doc);
    }

    #[test]
    fn parent_id_rules() {
        assert_eq!(parent_id(Path::new("alfworld-object-transporter/SKILL.md")), "alfworld-object-transporter");
        assert_eq!(parent_id(Path::new("notes/cleanup.md")), "notes-cleanup");
        assert_eq!(parent_id(Path::new("toplevel.md")), "toplevel");
    }

    #[test]
    fn ordinals_are_contiguous_and_bodies_exclude_heading() {
        let doc = "intro\n## One\na\n### Two\nb\n";
        let parent = parse_document(Path::new("d.md"), doc, Vec::new());
        let ordinals: Vec<usize> = parent.units.iter().map(|u| u.ordinal).collect();
        assert_eq!(ordinals, vec![0, 1, 2]);
        assert!(parent.units[1].body.starts_with('a'));
        assert_eq!(parent.units[2].heading_level, 3);
    }

    #[test]
    fn code_blocks_and_script_links() {
        let doc = "## Run\nInvoke cleanup.py now.\n```python\nprint('hi')\n```\n";
        let scripts = vec![Script { name: "cleanup.py".into(), body: String::new(), lang: "py".into() }];
        let parent = parse_document(Path::new("d.md"), doc, scripts);
        assert_eq!(parent.units[0].code_blocks, vec![("python".to_string(), "print('hi')\n".to_string())]);
        assert_eq!(parent.units[0].linked_scripts, vec!["cleanup.py".to_string()]);
    }

    #[test]
    fn references_extracted() {
        let doc = "See [the guide](references/guide.md) and [anchor](#take-and-move).\n";
        let parent = parse_document(Path::new("d.md"), doc, Vec::new());
        assert_eq!(parent.references, vec!["references/guide.md".to_string(), "#take-and-move".to_string()]);
    }
}
