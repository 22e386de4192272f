//! Script runtimes that generated programs target.
//!
//! A runtime profile knows how a program in that language declares and
//! invokes the entry function, which fence tag and file extension it uses,
//! and how to route its HTTP calls to recorded fixtures.

/// Static description of a script runtime.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RuntimeProfile {
    pub id: &'static str,
    pub fence_tag: &'static str,
    pub extension: &'static str,
    pub default_interpreter: &'static [&'static str],
    /// Import lines shown in the reply example of the fetch prompt.
    pub example_preamble: &'static [&'static str],
    /// Source of a startup hook that serves HTTP from a fixture directory,
    /// written as `fixture_shim_file` into a directory on the module path.
    pub fixture_shim: Option<(&'static str, &'static str)>,
    /// Environment variable naming that module path directory.
    pub module_path_var: Option<&'static str>,
}

pub const PYTHON: RuntimeProfile = RuntimeProfile {
    id: "python",
    fence_tag: "python",
    extension: "py",
    default_interpreter: &["python3"],
    example_preamble: &["import geopandas as gpd", "import osmnx as ox"],
    fixture_shim: Some(("sitecustomize.py", PYTHON_FIXTURE_SHIM)),
    module_path_var: Some("PYTHONPATH"),
};

const KNOWN: &[RuntimeProfile] = &[PYTHON];

pub fn profile(id: &str) -> Option<&'static RuntimeProfile> {
    KNOWN.iter().find(|p| p.id == id)
}

pub fn is_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c == '_' || c.is_ascii_alphabetic())
        && chars.all(|c| c == '_' || c.is_ascii_alphanumeric())
}

impl RuntimeProfile {
    /// True if `line` defines a function called `name`.
    pub fn is_definition(&self, line: &str, name: &str) -> bool {
        let t = line.trim_start();
        let t = t.strip_prefix("async ").map(str::trim_start).unwrap_or(t);
        t.strip_prefix("def ")
            .map(|rest| {
                rest.trim_start()
                    .strip_prefix(name)
                    .is_some_and(|after| after.trim_start().starts_with('('))
            })
            .unwrap_or(false)
    }

    pub fn defines(&self, source: &str, name: &str) -> bool {
        source.lines().any(|l| self.is_definition(l, name))
    }

    /// True if `line` is a top-level call of `name`.
    pub fn is_invocation(&self, line: &str, name: &str) -> bool {
        if line.starts_with(char::is_whitespace) {
            return false;
        }
        let t = line.trim_end();
        t.strip_prefix(name)
            .map(|rest| rest.trim_start())
            .is_some_and(|rest| rest.starts_with('(') && rest.ends_with(')'))
    }

    pub fn invocation(&self, name: &str) -> String {
        format!("{name}()")
    }

    /// A minimal program body used in the reply example.
    pub fn example_program(&self, name: &str) -> String {
        let mut lines: Vec<String> = self
            .example_preamble
            .iter()
            .map(|s| s.to_string())
            .collect();
        lines.push(format!("def {name}():"));
        lines.push(" # data downloading code".into());
        lines.push(" # downloaded code".into());
        lines.push(self.invocation(name));
        lines.join("\n")
    }
}

const PYTHON_FIXTURE_SHIM: &str = r#"# Serves HTTP requests made through `requests` from a recorded fixture
# directory instead of the network. Installed by the geodata sandbox.
import hashlib
import json
import os

_FIXTURE_DIR = os.environ.get("GEODATA_HTTP_FIXTURES")


def _load(directory):
    table = {}
    for name in sorted(os.listdir(directory)):
        if not name.endswith(".json"):
            continue
        with open(os.path.join(directory, name), "r", encoding="utf-8") as f:
            meta = json.load(f)
        key = (meta["method"].upper(), meta["url"], meta.get("body_sha256", hashlib.sha256(b"").hexdigest()))
        table.setdefault(key, []).append((meta, os.path.join(directory, meta["body_file"])))
    return table


def _install(directory):
    try:
        import requests
        from requests.adapters import HTTPAdapter
        from requests.models import Response
        from requests.structures import CaseInsensitiveDict
    except ImportError:
        return
    table = _load(directory)

    def send(self, request, **kwargs):
        body = request.body or b""
        if isinstance(body, str):
            body = body.encode("utf-8")
        key = (request.method.upper(), request.url, hashlib.sha256(body).hexdigest())
        hits = table.get(key)
        if not hits:
            raise requests.exceptions.ConnectionError(
                "no recorded fixture for %s %s" % (request.method, request.url))
        meta, body_path = hits[0]
        with open(body_path, "rb") as f:
            content = f.read()
        resp = Response()
        resp.status_code = int(meta.get("status", 200))
        resp.headers = CaseInsensitiveDict(meta.get("headers", {}))
        resp._content = content
        resp.encoding = "utf-8"
        resp.url = request.url
        resp.request = request
        resp.reason = "OK" if resp.status_code < 400 else "Error"
        return resp

    HTTPAdapter.send = send


if _FIXTURE_DIR:
    _install(_FIXTURE_DIR)
"#;
