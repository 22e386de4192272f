//! The data source index and handbook inventory.
//!
//! A registry is loaded from a directory tree, one subdirectory per source:
//!
//! ```text
//! <root>/sources/<dir>/entry.json    {"alias", "display_name", "description", "auth_placeholders"?}
//! <root>/sources/<dir>/handbook.md   numbered guideline items
//! <root>/sources/<dir>/runtime.txt   runtime id, then entry-function name
//! <root>/sources/<dir>/template.txt  optional reference program
//! ```
//!
//! Dropping a new directory in adds a source; removing it takes the source
//! away. No code changes are involved.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::runtime::{self, RuntimeProfile};
use crate::secrets::{scan_placeholders, Placeholder};

/// Reserved selection value meaning "no suitable source".
pub const UNKNOWN_SOURCE: &str = "Unknown";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RegistryError {
    #[error("alias {0:?} is declared more than once")]
    DuplicateAlias(String),
    #[error("malformed manifest in {path}: {reason}")]
    MalformedManifest { path: String, reason: String },
    #[error("source directory {0} has no handbook.md")]
    MissingHandbook(String),
    #[error("registry has no data sources")]
    EmptyRegistry,
    #[error("unknown data source alias {0:?}")]
    UnknownAlias(String),
    #[error("entry alias {entry:?} does not match handbook alias {handbook:?}")]
    AliasMismatch { entry: String, handbook: String },
    #[error("cannot read registry: {0}")]
    Io(String),
}

fn malformed(path: impl AsRef<Path>, reason: impl Into<String>) -> RegistryError {
    RegistryError::MalformedManifest {
        path: path.as_ref().display().to_string(),
        reason: reason.into(),
    }
}

/// One line of the data source index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataSourceEntry {
    pub alias: String,
    pub display_name: String,
    pub description: String,
}

impl DataSourceEntry {
    pub fn new(
        alias: impl Into<String>,
        display_name: impl Into<String>,
        description: impl Into<String>,
    ) -> Result<Self, String> {
        let entry = Self {
            alias: alias.into(),
            display_name: display_name.into(),
            description: description.into(),
        };
        entry.validate()?;
        Ok(entry)
    }

    fn validate(&self) -> Result<(), String> {
        if self.alias.trim().is_empty() || self.alias.contains(['\n', '\r']) {
            return Err("alias must be non-empty and single-line".into());
        }
        if self.alias == UNKNOWN_SOURCE {
            return Err(format!("alias {UNKNOWN_SOURCE:?} is reserved"));
        }
        if self.display_name.trim().is_empty() || self.display_name.contains('\n') {
            return Err("display_name must be non-empty and single-line".into());
        }
        if self.description.trim().is_empty() {
            return Err("description must not be empty".into());
        }
        if self.description.lines().any(|l| l.trim().is_empty()) {
            return Err("description must be a single paragraph".into());
        }
        Ok(())
    }

    /// The index line without its number.
    pub fn index_text(&self) -> String {
        let description = self
            .description
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ");
        format!("{}. {}", self.display_name, description)
    }
}

/// How a generated program must be packaged in the model's reply.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplyContract {
    pub entry_function: String,
    pub runtime: &'static RuntimeProfile,
}

/// Per-source technical guide embedded in fetch and debug prompts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Handbook {
    pub alias: String,
    pub guidelines: Vec<String>,
    pub template_program: Option<String>,
    pub reply_contract: ReplyContract,
    pub runtime_id: String,
    pub auth_placeholders: Vec<Placeholder>,
}

impl Handbook {
    pub fn new(
        alias: impl Into<String>,
        guidelines: Vec<String>,
        template_program: Option<String>,
        runtime_id: &str,
        entry_function: &str,
        auth_placeholders: Vec<Placeholder>,
    ) -> Result<Self, String> {
        let runtime = runtime::profile(runtime_id)
            .ok_or_else(|| format!("unknown runtime {runtime_id:?}"))?;
        if !runtime::is_identifier(entry_function) {
            return Err(format!(
                "entry function {entry_function:?} is not an identifier"
            ));
        }
        if guidelines.is_empty() {
            return Err("handbook has no guidelines".into());
        }
        if guidelines.iter().any(|g| g.trim().is_empty()) {
            return Err("handbook has an empty guideline".into());
        }
        let texts = guidelines.iter().chain(template_program.iter());
        for text in texts {
            for (_, ph) in scan_placeholders(text) {
                let ph = ph.map_err(|e| e.to_string())?;
                if !auth_placeholders.contains(&ph) {
                    return Err(format!("placeholder {ph} is used but not declared"));
                }
            }
        }
        Ok(Self {
            alias: alias.into(),
            guidelines,
            template_program,
            reply_contract: ReplyContract {
                entry_function: entry_function.to_string(),
                runtime,
            },
            runtime_id: runtime_id.to_string(),
            auth_placeholders,
        })
    }
}

/// Splits handbook text into numbered items. A line starting with
/// `<digits>. ` opens an item; following lines continue it. Markdown
/// headings before the first item are ignored.
pub fn parse_guidelines(text: &str) -> Result<Vec<String>, String> {
    let mut items: Vec<Vec<&str>> = Vec::new();
    for line in text.lines() {
        if let Some(rest) = numbered_item(line) {
            if rest.trim().is_empty() {
                return Err(format!("empty guideline item: {line:?}"));
            }
            items.push(vec![rest]);
        } else if let Some(current) = items.last_mut() {
            current.push(line);
        } else if !(line.trim().is_empty() || line.starts_with('#')) {
            return Err(format!("text before the first numbered item: {line:?}"));
        }
    }
    Ok(items
        .into_iter()
        .map(|lines| lines.join("\n").trim_end().to_string())
        .collect())
}

fn numbered_item(line: &str) -> Option<&str> {
    let digits = line.chars().take_while(char::is_ascii_digit).count();
    if digits == 0 {
        return None;
    }
    line[digits..].strip_prefix(". ")
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EntryManifest {
    alias: String,
    display_name: String,
    description: String,
    #[serde(default)]
    auth_placeholders: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Registry {
    entries: BTreeMap<String, DataSourceEntry>,
    handbooks: BTreeMap<String, Handbook>,
    root: Option<PathBuf>,
}

impl Default for Registry {
    fn default() -> Self {
        Self::empty()
    }
}

impl Registry {
    pub fn empty() -> Self {
        Self {
            entries: BTreeMap::new(),
            handbooks: BTreeMap::new(),
            root: None,
        }
    }

    pub fn load(root: &Path) -> Result<Self, RegistryError> {
        if !root.is_dir() {
            return Err(RegistryError::Io(format!(
                "{} is not a directory",
                root.display()
            )));
        }
        let mut reg = Self::empty();
        reg.root = Some(root.to_path_buf());
        let sources = root.join("sources");
        if !sources.is_dir() {
            return Ok(reg);
        }
        let mut dirs: Vec<PathBuf> = std::fs::read_dir(&sources)
            .map_err(|e| RegistryError::Io(e.to_string()))?
            .filter_map(|d| d.ok().map(|d| d.path()))
            .filter(|p| p.is_dir())
            .collect();
        dirs.sort();
        for dir in dirs {
            if !dir.join("entry.json").is_file() {
                log::warn!("skipping {}: no entry.json", dir.display());
                continue;
            }
            let (entry, handbook) = load_source(&dir)?;
            if reg.entries.contains_key(&entry.alias) {
                return Err(RegistryError::DuplicateAlias(entry.alias));
            }
            reg.handbooks.insert(entry.alias.clone(), handbook);
            reg.entries.insert(entry.alias.clone(), entry);
        }
        Ok(reg)
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Aliases in index order (lexicographic).
    pub fn order(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn entry(&self, alias: &str) -> Option<&DataSourceEntry> {
        self.entries.get(alias)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&DataSourceEntry, &Handbook)> {
        self.entries
            .values()
            .map(|e| (e, &self.handbooks[&e.alias]))
    }

    /// The numbered index embedded in the selection prompt.
    pub fn render_index(&self) -> Result<String, RegistryError> {
        if self.is_empty() {
            return Err(RegistryError::EmptyRegistry);
        }
        Ok(self
            .entries
            .values()
            .enumerate()
            .map(|(i, e)| format!("{}. {}", i + 1, e.index_text()))
            .collect::<Vec<_>>()
            .join("\n"))
    }

    pub fn resolve_handbook(&self, alias: &str) -> Result<&Handbook, RegistryError> {
        self.handbooks
            .get(alias)
            .ok_or_else(|| RegistryError::UnknownAlias(alias.to_string()))
    }

    /// Maps a model's selection onto an alias: exact alias match first, then
    /// exact display-name match (the index shows display names).
    pub fn match_selection(&self, selected: &str) -> Option<&str> {
        let selected = selected.trim();
        if let Some((k, _)) = self.entries.get_key_value(selected) {
            return Some(k);
        }
        let mut by_name = self.entries.values().filter(|e| e.display_name == selected);
        match (by_name.next(), by_name.next()) {
            (Some(e), None) => Some(&e.alias),
            _ => None,
        }
    }

    pub fn register_source(
        &self,
        entry: DataSourceEntry,
        handbook: Handbook,
    ) -> Result<Self, RegistryError> {
        if entry.alias != handbook.alias {
            return Err(RegistryError::AliasMismatch {
                entry: entry.alias,
                handbook: handbook.alias,
            });
        }
        entry
            .validate()
            .map_err(|reason| malformed(&entry.alias, reason))?;
        if self.entries.contains_key(&entry.alias) {
            return Err(RegistryError::DuplicateAlias(entry.alias));
        }
        let mut next = self.clone();
        next.handbooks.insert(entry.alias.clone(), handbook);
        next.entries.insert(entry.alias.clone(), entry);
        Ok(next)
    }
}

fn read_text(path: &Path) -> Result<String, RegistryError> {
    std::fs::read_to_string(path).map_err(|e| RegistryError::Io(format!("{}: {e}", path.display())))
}

fn load_source(dir: &Path) -> Result<(DataSourceEntry, Handbook), RegistryError> {
    let entry_path = dir.join("entry.json");
    let manifest: EntryManifest = serde_json::from_str(&read_text(&entry_path)?)
        .map_err(|e| malformed(&entry_path, e.to_string()))?;
    let entry = DataSourceEntry {
        alias: manifest.alias,
        display_name: manifest.display_name,
        description: manifest.description,
    };
    entry.validate().map_err(|r| malformed(&entry_path, r))?;

    let placeholders = manifest
        .auth_placeholders
        .iter()
        .map(|t| Placeholder::parse(t))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| malformed(&entry_path, e.to_string()))?;

    let handbook_path = dir.join("handbook.md");
    if !handbook_path.is_file() {
        return Err(RegistryError::MissingHandbook(dir.display().to_string()));
    }
    let guidelines =
        parse_guidelines(&read_text(&handbook_path)?).map_err(|r| malformed(&handbook_path, r))?;

    let runtime_path = dir.join("runtime.txt");
    if !runtime_path.is_file() {
        return Err(malformed(&runtime_path, "missing runtime.txt"));
    }
    let runtime_text = read_text(&runtime_path)?;
    let mut lines = runtime_text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty());
    let (runtime_id, entry_function) = match (lines.next(), lines.next(), lines.next()) {
        (Some(r), Some(f), None) => (r, f),
        _ => {
            return Err(malformed(
                &runtime_path,
                "expected runtime id and entry-function name, one per line",
            ))
        }
    };

    let template_path = dir.join("template.txt");
    let template = if template_path.is_file() {
        Some(read_text(&template_path)?.trim_end().to_string())
    } else {
        None
    };

    let handbook = Handbook::new(
        entry.alias.clone(),
        guidelines,
        template,
        runtime_id,
        entry_function,
        placeholders,
    )
    .map_err(|r| malformed(dir, r))?;
    Ok((entry, handbook))
}
