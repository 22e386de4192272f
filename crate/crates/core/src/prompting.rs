//! Prompt rendering and reply parsing.
//!
//! Three prompt kinds go to the model: source selection, program
//! generation ("fetch") and debugging. Two reply kinds come back: a
//! selection object and a fenced program.

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::registry::{Handbook, ReplyContract, UNKNOWN_SOURCE};

pub const FENCE: &str = "```";

const ROLE: &str = "A professional Python programmer in geographic information science (GIScience). You have worked on GIScience for more than 20 years and know every detail and pitfall when collecting data and coding. You know which websites you can get suitable spatial data and know the methods or tricks to download data, such as OpenStreetMap, Census Bureau, or various APIs. You are also experienced in processing the downloaded data, including saving them in suitable formats, map projections, and creating detailed and useful meta-data.";

const ROLE_HANDBOOK: &str = "When downloading geospatial data, the technical handbook for a particular data source is provided; you can follow it, and write Python code carefully to download the data.";

const SELECTION_REQUIREMENTS: &[&str] = &[
    "Return the exact name of the data source as the given names.",
    "If a data source is given in the task, e.g., OpenStreetMap or Census Bureau, you need to select that given data source.",
    "If you need to download the administrative boundary of a place without mentioning the data sources, you can get data from OpenStreetMap. If you need to download the US Census tract and block group boundaries, download them from Census Bureau. Follow the given JSON format.",
    "If you cannot find a suitable data source in the given sources, return a data source you think is most appropriate.",
    "DO NOT make fake data source. If you cannot find any suitable data source, return 'Unknown' as for the 'Selected data source' key in the reply JSON format. DO NOT use ``json and ``",
];

const SELECTION_REPLY_EXAMPLE: &str = r#"{'Explanation': "According to the use requests of US state administrative boundary from OpenStreetMap, I should download data from OpenStreetMap.", "Selected data source": 'OpenStreetMap'}"#;

pub const SELECTED_KEY: &str = "Selected data source";
pub const EXPLANATION_KEY: &str = "Explanation";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("data request is empty")]
    EmptyRequest,
    #[error("data source index is empty")]
    EmptyIndex,
    #[error("alias {alias:?} does not match handbook alias {handbook:?}")]
    AliasMismatch { alias: String, handbook: String },
    #[error("error report is empty")]
    EmptyErrorReport,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ReplyError {
    #[error("reply has no parsable selection object: {0}")]
    UnparsableReply(String),
    #[error("reply contained no code block")]
    NoCodeBlock,
    #[error("no code block defines the entry function {0}()")]
    MissingEntryFunction(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    Selection,
    Fetch,
    Debug,
}

/// A prompt as ordered, labelled sections. `full_text` is always the plain
/// concatenation of the section texts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub kind: PromptKind,
    sections: Vec<(&'static str, String)>,
    full_text: String,
}

impl RenderedPrompt {
    fn new(kind: PromptKind, sections: Vec<(&'static str, String)>) -> Self {
        let full_text = sections.iter().map(|(_, t)| t.as_str()).collect();
        Self {
            kind,
            sections,
            full_text,
        }
    }

    pub fn sections(&self) -> &[(&'static str, String)] {
        &self.sections
    }

    pub fn section(&self, label: &str) -> Option<&str> {
        self.sections
            .iter()
            .find(|(l, _)| *l == label)
            .map(|(_, t)| t.as_str())
    }

    pub fn labels(&self) -> Vec<&'static str> {
        self.sections.iter().map(|(l, _)| *l).collect()
    }

    pub fn full_text(&self) -> &str {
        &self.full_text
    }
}

impl fmt::Display for RenderedPrompt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.full_text)
    }
}

fn numbered(items: impl IntoIterator<Item = impl AsRef<str>>) -> String {
    items
        .into_iter()
        .enumerate()
        .map(|(i, s)| format!("{}. {}", i + 1, s.as_ref()))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn build_selection_prompt(
    request: &str,
    index_text: &str,
) -> Result<RenderedPrompt, PromptError> {
    if request.trim().is_empty() {
        return Err(PromptError::EmptyRequest);
    }
    if index_text.trim().is_empty() {
        return Err(PromptError::EmptyIndex);
    }
    Ok(RenderedPrompt::new(
        PromptKind::Selection,
        vec![
            ("role", format!("Your role: {ROLE}\n\n")),
            (
                "mission",
                format!("Your mission: select a suitable data source from the given list to download the requested geospatial data for this task: {request}\n\n"),
            ),
            (
                "requirements",
                format!("Requirements:\n\n{}\n\n", numbered(SELECTION_REQUIREMENTS)),
            ),
            ("data-sources", format!("Data sources:\n\n{index_text}\n\n")),
            (
                "reply-example",
                format!("Your reply example: {SELECTION_REPLY_EXAMPLE}\n"),
            ),
        ],
    ))
}

fn handbook_section(handbook: &Handbook) -> String {
    let mut text = format!(
        "Technical handbook:\n\n{}\n",
        numbered(&handbook.guidelines)
    );
    if let Some(template) = &handbook.template_program {
        text.push_str(template);
        text.push('\n');
    }
    text
}

fn fenced(tag: &str, body: &str) -> String {
    let nl = if body.ends_with('\n') { "" } else { "\n" };
    format!("{FENCE}{tag}\n{body}{nl}{FENCE}")
}

pub fn build_fetch_prompt(
    request: &str,
    alias: &str,
    handbook: &Handbook,
) -> Result<RenderedPrompt, PromptError> {
    if request.trim().is_empty() {
        return Err(PromptError::EmptyRequest);
    }
    if handbook.alias != alias {
        return Err(PromptError::AliasMismatch {
            alias: alias.to_string(),
            handbook: handbook.alias.clone(),
        });
    }
    let contract = &handbook.reply_contract;
    let example = contract.runtime.example_program(&contract.entry_function);
    Ok(RenderedPrompt::new(
        PromptKind::Fetch,
        vec![
            ("role", format!("Your role: {ROLE} {ROLE_HANDBOOK}\n\n")),
            (
                "mission",
                format!("Your mission: download geospatial data from the given data source for this task: {request}\n\n"),
            ),
            ("data-source", format!("Data source:{alias}\n\n")),
            (
                "reply-example",
                format!(
                    "Your reply example:\n\n{}\n\n",
                    fenced(contract.runtime.fence_tag, &example)
                ),
            ),
            ("technical-handbook", handbook_section(handbook)),
        ],
    ))
}

pub fn build_debug_prompt(
    request: &str,
    handbook: &Handbook,
    program: &GeneratedProgram,
    error_report: &str,
) -> Result<RenderedPrompt, PromptError> {
    if request.trim().is_empty() {
        return Err(PromptError::EmptyRequest);
    }
    if error_report.trim().is_empty() {
        return Err(PromptError::EmptyErrorReport);
    }
    let contract = &handbook.reply_contract;
    let tag = contract.runtime.fence_tag;
    let entry = &contract.entry_function;
    let requirements = [
        "Find the cause of the error and fix it; keep the parts of the program that already work.".to_string(),
        "Follow the technical handbook above.".to_string(),
        format!("Put the complete corrected program into a single code block enclosed by {FENCE}{tag} and {FENCE}; explanation can be comments at the beginning of the code block."),
        format!("The download code is only in a function named '{entry}()'. The last line is to execute this function."),
        "Throw an error if the program fails to download the data; no need to handle the exceptions.".to_string(),
    ];
    Ok(RenderedPrompt::new(
        PromptKind::Debug,
        vec![
            ("role", format!("Your role: {ROLE} {ROLE_HANDBOOK}\n\n")),
            (
                "mission",
                format!(
                    "Your mission: correct the program below so that it downloads geospatial data from the given data source for this task: {request}\n\nData source:{}\n\n",
                    handbook.alias
                ),
            ),
            ("technical-handbook", format!("{}\n", handbook_section(handbook))),
            (
                "failed-program",
                format!(
                    "The program that failed:\n\n{}\n\n",
                    fenced(tag, &program.source_text)
                ),
            ),
            (
                "error-report",
                format!("The error it raised:\n\n{}\n\n", fenced("", error_report)),
            ),
            (
                "debugging-requirements",
                format!("Debugging requirements:\n\n{}\n", numbered(&requirements)),
            ),
        ],
    ))
}

/// The model's choice of source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    Source(String),
    Unknown,
}

impl Selection {
    pub fn as_str(&self) -> &str {
        match self {
            Selection::Source(s) => s,
            Selection::Unknown => UNKNOWN_SOURCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionReply {
    pub explanation: String,
    pub selected: Selection,
}

impl SelectionReply {
    /// Renders the reply the way the model is asked to, using `quote` for
    /// keys and values.
    pub fn render(&self, quote: char) -> String {
        let q = |s: &str| {
            let escaped = s
                .replace('\\', "\\\\")
                .replace(quote, &format!("\\{quote}"));
            format!("{quote}{escaped}{quote}")
        };
        format!(
            "{{{}: {}, {}: {}}}",
            q(EXPLANATION_KEY),
            q(&self.explanation),
            q(SELECTED_KEY),
            q(self.selected.as_str())
        )
    }
}

/// Lenient reader for the selection object: single or double quotes,
/// trailing commas, bare scalar values, surrounding prose and fences.
struct ObjectReader<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> ObjectReader<'a> {
    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(char::is_whitespace) {
            self.bump();
        }
    }

    /// True if, after whitespace, the next char is one of `terms` (or EOF).
    fn followed_by(&self, at: usize, terms: &[char]) -> bool {
        match self.src[at..].trim_start().chars().next() {
            Some(c) => terms.contains(&c),
            None => true,
        }
    }

    fn string(&mut self, terms: &[char]) -> Option<String> {
        let quote = self.bump()?;
        let mut out = String::new();
        loop {
            let c = self.bump()?;
            match c {
                '\\' => match self.bump()? {
                    'n' => out.push('\n'),
                    't' => out.push('\t'),
                    other => out.push(other),
                },
                // An unescaped quote only closes the string when a delimiter
                // follows; otherwise it is an apostrophe inside the text.
                c if c == quote && self.followed_by(self.pos, terms) => return Some(out),
                c => out.push(c),
            }
        }
    }

    fn bare(&mut self) -> Option<String> {
        let start = self.pos;
        while self.peek().is_some_and(|c| c != ',' && c != '}') {
            self.bump();
        }
        let v = self.src[start..self.pos].trim();
        (!v.is_empty()).then(|| v.to_string())
    }

    fn object(&mut self) -> Option<Vec<(String, String)>> {
        if self.bump()? != '{' {
            return None;
        }
        let mut pairs = Vec::new();
        loop {
            self.skip_ws();
            match self.peek()? {
                '}' => {
                    self.bump();
                    return Some(pairs);
                }
                ',' => {
                    self.bump();
                    continue;
                }
                '\'' | '"' => {}
                _ => return None,
            }
            let key = self.string(&[':'])?;
            self.skip_ws();
            if self.bump()? != ':' {
                return None;
            }
            self.skip_ws();
            let value = match self.peek()? {
                '\'' | '"' => self.string(&[',', '}'])?,
                '{' | '[' => return None,
                _ => self.bare()?,
            };
            pairs.push((key, value));
        }
    }
}

pub fn parse_selection_reply(text: &str) -> Result<SelectionReply, ReplyError> {
    let mut saw_object = false;
    for (start, _) in text.match_indices('{') {
        let mut reader = ObjectReader {
            src: text,
            pos: start,
        };
        let Some(pairs) = reader.object() else {
            continue;
        };
        saw_object = true;
        let find = |key: &str| {
            pairs
                .iter()
                .find(|(k, _)| k.trim().eq_ignore_ascii_case(key))
                .map(|(_, v)| v.trim().to_string())
        };
        let Some(selected) = find(SELECTED_KEY) else {
            continue;
        };
        if selected.is_empty() {
            return Err(ReplyError::UnparsableReply(
                "empty selected data source".into(),
            ));
        }
        let selected = if selected == UNKNOWN_SOURCE {
            Selection::Unknown
        } else {
            Selection::Source(selected)
        };
        return Ok(SelectionReply {
            explanation: find(EXPLANATION_KEY).unwrap_or_default(),
            selected,
        });
    }
    let reason = if saw_object {
        format!("object lacks a {SELECTED_KEY:?} key")
    } else {
        "no brace-delimited object".to_string()
    };
    Err(ReplyError::UnparsableReply(reason))
}

/// Program text pulled out of a model reply.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedProgram {
    pub source_text: String,
    pub entry_function: String,
    pub extraction_span: Range<usize>,
}

struct Fence {
    body: Range<usize>,
}

fn fences(text: &str) -> Vec<Fence> {
    let mut out = Vec::new();
    let mut open: Option<usize> = None;
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let content = line.trim_end_matches(['\n', '\r']);
        match open {
            None if content.trim_start().starts_with(FENCE) => {
                open = Some(offset + line.len());
            }
            Some(body_start) if content.trim() == FENCE => {
                out.push(Fence {
                    body: body_start..offset,
                });
                open = None;
            }
            _ => {}
        }
        offset += line.len();
    }
    // Unterminated fence runs to the end of the reply.
    if let Some(body_start) = open {
        out.push(Fence {
            body: body_start.min(text.len())..text.len(),
        });
    }
    out
}

pub fn extract_program(
    text: &str,
    contract: &ReplyContract,
) -> Result<GeneratedProgram, ReplyError> {
    let found = fences(text);
    if found.is_empty() {
        return Err(ReplyError::NoCodeBlock);
    }
    let entry = &contract.entry_function;
    let runtime = contract.runtime;
    let fence = found
        .into_iter()
        .find(|f| runtime.defines(&text[f.body.clone()], entry))
        .ok_or_else(|| ReplyError::MissingEntryFunction(entry.clone()))?;

    let mut source = text[fence.body.clone()].replace("\r\n", "\n");
    if !source.ends_with('\n') {
        source.push('\n');
    }
    let last = source.lines().rev().find(|l| !l.trim().is_empty());
    if !last.is_some_and(|l| runtime.is_invocation(l, entry)) {
        source.push_str(&runtime.invocation(entry));
        source.push('\n');
    }
    Ok(GeneratedProgram {
        source_text: source,
        entry_function: entry.clone(),
        extraction_span: fence.body,
    })
}

/// Wraps a program in a fence the way a model reply would.
pub fn fence_program(program: &GeneratedProgram, tag: &str) -> String {
    format!("{}\n", fenced(tag, &program.source_text))
}
