//! Credentials for data sources that need them.
//!
//! Secrets never live in the registry tree. Handbooks and generated programs
//! refer to them through placeholder tokens of the form
//! `{{KEY:<alias>:<key_name>}}`, which are swapped for the real value only
//! right before a program is executed.
//!
//! Two stores feed the lookup, checked in this order:
//!
//! 1. a secrets file with lines `<alias>:<key_name>=<secret>`
//!    (blank lines and lines starting with `#` are ignored);
//! 2. environment variables named `GEODATA_KEY_<ALIAS>_<KEYNAME>`, where
//!    alias and key name are uppercased and every non-alphanumeric
//!    character becomes `_`.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::path::Path;

use thiserror::Error;

pub const PLACEHOLDER_OPEN: &str = "{{KEY:";
pub const PLACEHOLDER_CLOSE: &str = "}}";
pub const ENV_PREFIX: &str = "GEODATA_KEY_";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SecretError {
    #[error("no secret bound to placeholder {0}")]
    MissingSecret(String),
    #[error("malformed placeholder token {0:?}")]
    MalformedPlaceholder(String),
    #[error("secrets file line {line}: {reason}")]
    MalformedSecretsFile { line: usize, reason: String },
    #[error("cannot read secrets file: {0}")]
    Io(String),
}

/// A reference to one credential, written into handbooks and programs
/// instead of the credential itself.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Placeholder {
    pub alias: String,
    pub key_name: String,
}

fn valid_part(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| !c.is_whitespace() && !matches!(c, ':' | '{' | '}'))
}

impl Placeholder {
    pub fn new(alias: &str, key_name: &str) -> Result<Self, SecretError> {
        if !valid_part(alias) || !valid_part(key_name) {
            return Err(SecretError::MalformedPlaceholder(format!(
                "{PLACEHOLDER_OPEN}{alias}:{key_name}{PLACEHOLDER_CLOSE}"
            )));
        }
        Ok(Self {
            alias: alias.to_string(),
            key_name: key_name.to_string(),
        })
    }

    /// Parses a complete token, e.g. `{{KEY:OpenWeather:api_key}}`.
    pub fn parse(token: &str) -> Result<Self, SecretError> {
        let malformed = || SecretError::MalformedPlaceholder(token.to_string());
        let inner = token
            .strip_prefix(PLACEHOLDER_OPEN)
            .and_then(|rest| rest.strip_suffix(PLACEHOLDER_CLOSE))
            .ok_or_else(malformed)?;
        let (alias, key_name) = inner.split_once(':').ok_or_else(malformed)?;
        if !valid_part(alias) || !valid_part(key_name) {
            return Err(malformed());
        }
        Ok(Self {
            alias: alias.to_string(),
            key_name: key_name.to_string(),
        })
    }

    pub fn token(&self) -> String {
        format!(
            "{PLACEHOLDER_OPEN}{}:{}{PLACEHOLDER_CLOSE}",
            self.alias, self.key_name
        )
    }

    pub fn env_var_name(&self) -> String {
        let norm = |s: &str| -> String {
            s.chars()
                .map(|c| {
                    if c.is_ascii_alphanumeric() {
                        c.to_ascii_uppercase()
                    } else {
                        '_'
                    }
                })
                .collect()
        };
        format!("{ENV_PREFIX}{}_{}", norm(&self.alias), norm(&self.key_name))
    }
}

impl fmt::Display for Placeholder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.token())
    }
}

/// Every `{{KEY:...}}` occurrence in `text`, with its byte span. Occurrences
/// that open a token but do not parse are reported as errors so callers can
/// reject them instead of silently leaving them in place.
pub fn scan_placeholders(text: &str) -> Vec<(Range<usize>, Result<Placeholder, SecretError>)> {
    let mut found = Vec::new();
    let mut from = 0;
    while let Some(rel) = text[from..].find(PLACEHOLDER_OPEN) {
        let start = from + rel;
        let body_start = start + PLACEHOLDER_OPEN.len();
        // A token never spans lines.
        let line_end = text[body_start..]
            .find('\n')
            .map_or(text.len(), |i| body_start + i);
        match text[body_start..line_end].find(PLACEHOLDER_CLOSE) {
            Some(close) => {
                let end = body_start + close + PLACEHOLDER_CLOSE.len();
                found.push((start..end, Placeholder::parse(&text[start..end])));
                from = end;
            }
            None => {
                found.push((
                    start..line_end,
                    Err(SecretError::MalformedPlaceholder(
                        text[start..line_end].to_string(),
                    )),
                ));
                from = line_end;
            }
        }
    }
    found
}

/// A credential value. Debug and Display never print it.
#[derive(Clone, PartialEq, Eq)]
pub struct Secret(String);

impl Secret {
    pub fn new(value: impl Into<String>) -> Self {
        Self(value.into())
    }

    pub fn expose(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for Secret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Secret(***)")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Injection {
    /// Exported to the program's environment under its `GEODATA_KEY_*` name,
    /// in addition to placeholder substitution.
    EnvVariable,
    /// Only substituted into the program text.
    PlaceholderSubstitution,
}

#[derive(Debug, Clone)]
pub struct AuthRecord {
    pub alias: String,
    pub key_name: String,
    pub secret: Secret,
    pub injection: Injection,
}

impl AuthRecord {
    pub fn placeholder(&self) -> Placeholder {
        Placeholder {
            alias: self.alias.clone(),
            key_name: self.key_name.clone(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SecretStore {
    file_records: BTreeMap<(String, String), AuthRecord>,
    env: BTreeMap<String, Secret>,
}

impl SecretStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Snapshot of every `GEODATA_KEY_*` variable in the process environment.
    pub fn from_process_env() -> Self {
        Self::new().with_env_vars(std::env::vars())
    }

    pub fn with_env_vars(mut self, vars: impl IntoIterator<Item = (String, String)>) -> Self {
        for (name, value) in vars {
            if name.starts_with(ENV_PREFIX) && !value.is_empty() {
                self.env.insert(name, Secret::new(value));
            }
        }
        self
    }

    pub fn load_file(mut self, path: &Path) -> Result<Self, SecretError> {
        let text = std::fs::read_to_string(path).map_err(|e| SecretError::Io(e.to_string()))?;
        self.add_file_lines(&text)?;
        Ok(self)
    }

    fn add_file_lines(&mut self, text: &str) -> Result<(), SecretError> {
        for (i, line) in text.lines().enumerate() {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            // The reason never echoes the line: it may hold a secret.
            let bad = |reason: &str| SecretError::MalformedSecretsFile {
                line: i + 1,
                reason: reason.to_string(),
            };
            let (lhs, secret) = trimmed
                .split_once('=')
                .ok_or_else(|| bad("expected <alias>:<key_name>=<secret>"))?;
            let (alias, key_name) = lhs
                .split_once(':')
                .ok_or_else(|| bad("expected <alias>:<key_name> before '='"))?;
            let ph = Placeholder::new(alias.trim(), key_name.trim())
                .map_err(|_| bad("invalid alias or key name"))?;
            if secret.is_empty() {
                return Err(bad("empty secret"));
            }
            self.insert(AuthRecord {
                alias: ph.alias,
                key_name: ph.key_name,
                secret: Secret::new(secret),
                injection: Injection::PlaceholderSubstitution,
            });
        }
        Ok(())
    }

    pub fn insert(&mut self, record: AuthRecord) {
        match record.injection {
            Injection::PlaceholderSubstitution => {
                self.file_records
                    .insert((record.alias.clone(), record.key_name.clone()), record);
            }
            Injection::EnvVariable => {
                self.env
                    .insert(record.placeholder().env_var_name(), record.secret);
            }
        }
    }

    pub fn lookup(&self, placeholder: &Placeholder) -> Option<&Secret> {
        self.file_records
            .get(&(placeholder.alias.clone(), placeholder.key_name.clone()))
            .map(|r| &r.secret)
            .or_else(|| self.env.get(&placeholder.env_var_name()))
    }

    /// Looks up the secret for a complete placeholder token.
    pub fn resolve_secret(&self, token: &str) -> Result<&Secret, SecretError> {
        let ph = Placeholder::parse(token)?;
        self.lookup(&ph)
            .ok_or_else(|| SecretError::MissingSecret(ph.token()))
    }

    /// Variables to export into a sandboxed program's environment.
    pub fn env_exports(&self) -> impl Iterator<Item = (&str, &Secret)> {
        self.env.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn is_empty(&self) -> bool {
        self.file_records.is_empty() && self.env.is_empty()
    }

    /// Replaces every known secret value in `text` with `[REDACTED]`.
    pub fn redact(&self, text: &str) -> String {
        let mut values: Vec<&str> = self
            .file_records
            .values()
            .map(|r| r.secret.expose())
            .chain(self.env.values().map(Secret::expose))
            .filter(|s| !s.is_empty())
            .collect();
        // Longest first so a secret containing another is fully masked.
        values.sort_by_key(|s| std::cmp::Reverse(s.len()));
        let mut out = text.to_string();
        for v in values {
            if out.contains(v) {
                out = out.replace(v, "[REDACTED]");
            }
        }
        out
    }
}
