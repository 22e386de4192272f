//! The select → generate → execute → debug loop and output verification.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::geo::tiles::is_raster;
use crate::llm::{ChatModel, LlmError};
use crate::prompting::{
    build_debug_prompt, build_fetch_prompt, build_selection_prompt, extract_program,
    parse_selection_reply, GeneratedProgram, PromptError, PromptKind, RenderedPrompt, ReplyError,
    Selection,
};
use crate::registry::{Handbook, Registry, RegistryError, UNKNOWN_SOURCE};
use crate::sandbox::{
    inject_secrets, ExecutionResult, ProducedFile, RuntimeConfig, Sandbox, SandboxError,
};
use crate::secrets::SecretStore;

/// Largest error report handed to the debug prompt.
pub const ERROR_REPORT_CAP: usize = 16 * 1024;
pub const NO_CODE_BLOCK: &str = "reply contained no code block";

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("data request text is empty")]
    EmptyRequest,
    #[error("output path is empty")]
    EmptyOutputPath,
    #[error("selection reply unparsable after {attempts} attempt(s): {reason}")]
    SelectionUnparsable { attempts: usize, reason: String },
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum DeclaredFormat {
    Geojson,
    Csv,
    Image,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataRequest {
    pub text: String,
    pub output_path: PathBuf,
    pub declared_format: Option<DeclaredFormat>,
}

impl DataRequest {
    pub fn new(
        text: impl Into<String>,
        output_path: impl Into<PathBuf>,
        declared_format: Option<DeclaredFormat>,
    ) -> Result<Self, AgentError> {
        let text = text.into();
        let output_path = output_path.into();
        if text.trim().is_empty() {
            return Err(AgentError::EmptyRequest);
        }
        if output_path.as_os_str().is_empty() {
            return Err(AgentError::EmptyOutputPath);
        }
        Ok(Self {
            text,
            output_path,
            declared_format,
        })
    }

    /// The task text shown to the model. Programs run with `cwd` as their
    /// working directory, so the save location is given relative to it;
    /// it is appended only when the request does not already name it.
    pub fn mission_text(&self, cwd: &Path) -> String {
        let shown = self
            .output_path
            .strip_prefix(cwd)
            .unwrap_or(&self.output_path);
        let shown = if shown.as_os_str().is_empty() {
            ".".to_string()
        } else {
            shown.display().to_string()
        };
        let text = self.text.trim_end();
        if text.contains(&shown) {
            text.to_string()
        } else {
            format!("{text}\nSave the downloaded data to: {shown}")
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub max_debug_iterations: usize,
    pub selection_retries: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            max_debug_iterations: 10,
            selection_retries: 1,
        }
    }
}

/// One generate-and-run step. `program` and `result` are absent when the
/// model reply could not be turned into a runnable program; the reason is
/// then in `generation_error`. Programs are stored before secret injection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub index: usize,
    pub prompt_kind: PromptKind,
    pub program: Option<GeneratedProgram>,
    pub result: Option<ExecutionResult>,
    pub generation_error: Option<String>,
}

impl AttemptRecord {
    pub fn succeeded(&self) -> bool {
        self.result.as_ref().is_some_and(|r| r.succeeded)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Success,
    SelectionFailed,
    ExhaustedDebug,
    VerificationFailed,
}

impl SessionStatus {
    pub fn exit_code(self) -> i32 {
        match self {
            Self::Success => 0,
            Self::SelectionFailed => 2,
            Self::ExhaustedDebug => 3,
            Self::VerificationFailed => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", content = "reason", rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub request: DataRequest,
    pub selected_source: String,
    /// Why selection failed, when it did.
    pub selection_error: Option<String>,
    pub attempts: Vec<AttemptRecord>,
    pub status: SessionStatus,
    pub verification: Option<Verdict>,
    pub output_files: Vec<PathBuf>,
    pub total_duration: f64,
}

impl SessionReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is serializable")
    }
}

/// Asks the model for a source. Unparsable replies are retried up to
/// `retries` times with the same prompt.
pub fn select_source(
    request_text: &str,
    registry: &Registry,
    llm: &dyn ChatModel,
    retries: usize,
) -> Result<Selection, AgentError> {
    let index = registry.render_index()?;
    let prompt = build_selection_prompt(request_text, &index)?;
    let mut last = String::new();
    for attempt in 0..=retries {
        let reply = llm.complete(&prompt)?;
        match parse_selection_reply(&reply) {
            Ok(parsed) => return Ok(parsed.selected),
            Err(e) => {
                log::warn!("selection reply {} unparsable: {e}", attempt + 1);
                last = e.to_string();
            }
        }
    }
    Err(AgentError::SelectionUnparsable {
        attempts: retries + 1,
        reason: last,
    })
}

fn tail(text: &str, cap: usize) -> &str {
    if text.len() <= cap {
        return text;
    }
    let mut start = text.len() - cap;
    while !text.is_char_boundary(start) {
        start += 1;
    }
    &text[start..]
}

/// The text fed back to the model after a failed run: stderr, or stdout
/// when stderr is empty, keeping the last 16 KiB.
pub fn error_report(result: &ExecutionResult) -> String {
    let stream = if result.stderr.trim().is_empty() {
        &result.stdout
    } else {
        &result.stderr
    };
    let mut report = String::new();
    if result.timed_out {
        report.push_str(&format!(
            "program timed out after {:.0} s\n",
            result.duration
        ));
    }
    if stream.trim().is_empty() {
        report.push_str(&format!(
            "program exited with code {} and printed nothing",
            result.exit_code
        ));
    } else {
        report.push_str(tail(stream, ERROR_REPORT_CAP));
    }
    report
}

struct Generated {
    program: Option<GeneratedProgram>,
    error: Option<String>,
}

fn generate(
    llm: &dyn ChatModel,
    prompt: Result<RenderedPrompt, PromptError>,
    handbook: &Handbook,
) -> Generated {
    let reply = prompt
        .map_err(|e| e.to_string())
        .and_then(|p| llm.complete(&p).map_err(|e| e.to_string()));
    match reply {
        Err(e) => Generated {
            program: None,
            error: Some(e),
        },
        Ok(text) => match extract_program(&text, &handbook.reply_contract) {
            Ok(p) => Generated {
                program: Some(p),
                error: None,
            },
            Err(ReplyError::NoCodeBlock) => Generated {
                program: None,
                error: Some(NO_CODE_BLOCK.to_string()),
            },
            Err(e) => Generated {
                program: None,
                error: Some(e.to_string()),
            },
        },
    }
}

/// Runs one request end to end. Model, parsing and program failures are
/// reported through the session status; only an unusable sandbox or
/// registry aborts with an error.
pub fn run_session(
    request: &DataRequest,
    registry: &Registry,
    llm: &dyn ChatModel,
    sandbox_cfg: &RuntimeConfig,
    secrets: &SecretStore,
    cfg: &AgentConfig,
) -> Result<SessionReport, AgentError> {
    let started = Instant::now();
    let mission = request.mission_text(&sandbox_cfg.output_dir);
    let mut report = SessionReport {
        request: request.clone(),
        selected_source: UNKNOWN_SOURCE.to_string(),
        selection_error: None,
        attempts: Vec::new(),
        status: SessionStatus::SelectionFailed,
        verification: None,
        output_files: Vec::new(),
        total_duration: 0.0,
    };
    let finish = |mut r: SessionReport| {
        r.total_duration = started.elapsed().as_secs_f64();
        Ok(r)
    };

    let selection = match select_source(&mission, registry, llm, cfg.selection_retries) {
        Ok(s) => s,
        Err(e @ (AgentError::Registry(_) | AgentError::Prompt(_))) => return Err(e),
        Err(e) => {
            report.selection_error = Some(secrets.redact(&e.to_string()));
            return finish(report);
        }
    };
    let alias = match &selection {
        Selection::Unknown => {
            report.selection_error = Some("model answered Unknown".into());
            return finish(report);
        }
        Selection::Source(s) => match registry.match_selection(s) {
            Some(a) => a.to_string(),
            None => {
                report.selection_error =
                    Some(format!("selected source {s:?} is not in the registry"));
                return finish(report);
            }
        },
    };
    log::info!("selected source {alias}");
    report.selected_source = alias.clone();
    let handbook = registry.resolve_handbook(&alias)?;

    let mut run_cfg = sandbox_cfg.clone();
    run_cfg.env.extend(
        secrets
            .env_exports()
            .map(|(k, v)| (k.to_string(), v.expose().to_string())),
    );
    let sandbox = Sandbox::new(run_cfg);

    let mut generated = generate(
        llm,
        build_fetch_prompt(&mission, &alias, handbook),
        handbook,
    );
    for index in 1..=cfg.max_debug_iterations + 1 {
        let prompt_kind = if index == 1 {
            PromptKind::Fetch
        } else {
            PromptKind::Debug
        };
        let mut record = AttemptRecord {
            index,
            prompt_kind,
            program: generated.program.clone(),
            result: None,
            generation_error: generated.error.clone(),
        };
        if let Some(program) = &generated.program {
            match inject_secrets(program, secrets) {
                Ok(injected) => {
                    let result = sandbox.execute(&injected, index)?.redacted(secrets);
                    record.result = Some(result);
                }
                Err(e) => record.generation_error = Some(e.to_string()),
            }
        }
        let succeeded = record.succeeded();
        let feedback = match (&record.result, &record.generation_error) {
            (Some(r), _) => error_report(r),
            (None, Some(e)) => e.clone(),
            (None, None) => unreachable!("attempt has neither result nor error"),
        };
        let failed_program = record.program.clone().unwrap_or_else(|| GeneratedProgram {
            source_text: String::new(),
            entry_function: handbook.reply_contract.entry_function.clone(),
            extraction_span: 0..0,
        });
        report.attempts.push(record);
        if succeeded {
            let result = report
                .attempts
                .last()
                .and_then(|a| a.result.as_ref())
                .expect("run succeeded");
            let produced = &result.produced_files;
            let verdict = verify_output(produced, request);
            report.output_files = produced.iter().map(|f| f.path.clone()).collect();
            report.status = if verdict == Verdict::Pass {
                SessionStatus::Success
            } else {
                SessionStatus::VerificationFailed
            };
            report.verification = Some(verdict);
            return finish(report);
        }
        if index > cfg.max_debug_iterations {
            break;
        }
        log::info!("attempt {index} failed, requesting a fix");
        generated = generate(
            llm,
            build_debug_prompt(&mission, handbook, &failed_program, &feedback),
            handbook,
        );
    }
    report.status = SessionStatus::ExhaustedDebug;
    finish(report)
}

fn resolve(path: &Path, base: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

/// Checks that the requested output exists, is non-empty and, when a
/// format was declared, is valid in that format. Relative output paths are
/// taken relative to the process working directory.
pub fn verify_output(produced: &[ProducedFile], request: &DataRequest) -> Verdict {
    let cwd = std::env::current_dir().unwrap_or_default();
    let target = resolve(&request.output_path, &cwd);
    let files: Vec<PathBuf> = if target.is_file() {
        vec![target]
    } else if target.is_dir() {
        let canon = std::fs::canonicalize(&target).unwrap_or(target);
        let under: Vec<PathBuf> = produced
            .iter()
            .map(|f| f.path.clone())
            .filter(|p| p.starts_with(&canon) && p.is_file())
            .collect();
        if under.is_empty() {
            return Verdict::Fail(format!("no files produced under {}", canon.display()));
        }
        under
    } else {
        return Verdict::Fail(format!("output {} does not exist", target.display()));
    };
    for f in &files {
        let bytes = match std::fs::read(f) {
            Ok(b) => b,
            Err(e) => return Verdict::Fail(format!("{}: {e}", f.display())),
        };
        if bytes.is_empty() {
            return Verdict::Fail(format!("empty output: {}", f.display()));
        }
        let check = match request.declared_format {
            Some(DeclaredFormat::Geojson) => check_geojson(&bytes),
            Some(DeclaredFormat::Csv) => check_csv(&bytes),
            Some(DeclaredFormat::Image) => is_raster(&bytes)
                .then_some(())
                .ok_or_else(|| "not a raster image".to_string()),
            Some(DeclaredFormat::Other) | None => Ok(()),
        };
        if let Err(reason) = check {
            return Verdict::Fail(format!("format: {}: {reason}", f.display()));
        }
    }
    Verdict::Pass
}

fn check_csv(bytes: &[u8]) -> Result<(), String> {
    let mut r = csv::Reader::from_reader(bytes);
    let header = r.headers().map_err(|e| e.to_string())?;
    if header.iter().all(|h| h.trim().is_empty()) {
        return Err("no header row".into());
    }
    for rec in r.records() {
        rec.map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn check_position(v: &Value) -> Result<(), String> {
    let arr = v.as_array().ok_or("position is not an array")?;
    if arr.len() < 2 {
        return Err("position has fewer than two numbers".into());
    }
    let nums: Option<Vec<f64>> = arr.iter().map(Value::as_f64).collect();
    let nums = nums.ok_or("position has a non-number")?;
    let (lon, lat) = (nums[0], nums[1]);
    if !nums.iter().all(|n| n.is_finite())
        || !(-180.0..=180.0).contains(&lon)
        || !(-90.0..=90.0).contains(&lat)
    {
        return Err(format!("position out of range: {lon}, {lat}"));
    }
    Ok(())
}

fn check_positions(v: &Value, min: usize) -> Result<(), String> {
    let arr = v.as_array().ok_or("coordinates are not an array")?;
    if arr.len() < min {
        return Err(format!("need at least {min} positions"));
    }
    arr.iter().try_for_each(check_position)
}

fn check_ring(v: &Value) -> Result<(), String> {
    check_positions(v, 4)?;
    let arr = v.as_array().expect("checked");
    if arr.first() != arr.last() {
        return Err("ring is not closed".into());
    }
    Ok(())
}

fn each<'a>(v: &'a Value, what: &str) -> Result<&'a Vec<Value>, String> {
    v.as_array()
        .ok_or_else(|| format!("{what} is not an array"))
}

fn check_geometry(g: &Value) -> Result<(), String> {
    if g.is_null() {
        return Ok(());
    }
    let kind = g
        .get("type")
        .and_then(Value::as_str)
        .ok_or("geometry without type")?;
    if kind == "GeometryCollection" {
        return each(&g["geometries"], "geometries")?
            .iter()
            .try_for_each(check_geometry);
    }
    let c = g.get("coordinates").ok_or("geometry without coordinates")?;
    match kind {
        "Point" => check_position(c),
        "MultiPoint" => check_positions(c, 0),
        "LineString" => check_positions(c, 2),
        "MultiLineString" => each(c, "lines")?
            .iter()
            .try_for_each(|l| check_positions(l, 2)),
        "Polygon" => each(c, "rings")?.iter().try_for_each(check_ring),
        "MultiPolygon" => each(c, "polygons")?
            .iter()
            .try_for_each(|p| each(p, "rings")?.iter().try_for_each(check_ring)),
        other => Err(format!("unknown geometry type {other:?}")),
    }
}

fn check_geojson(bytes: &[u8]) -> Result<(), String> {
    let v: Value = serde_json::from_slice(bytes).map_err(|e| format!("not JSON: {e}"))?;
    match v.get("type").and_then(Value::as_str) {
        Some("FeatureCollection") => each(&v["features"], "features")?
            .iter()
            .try_for_each(|f| check_geometry(f.get("geometry").unwrap_or(&Value::Null))),
        Some("Feature") => check_geometry(v.get("geometry").unwrap_or(&Value::Null)),
        Some(_) => check_geometry(&v),
        None => Err("no GeoJSON type".into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request(path: &Path, fmt: Option<DeclaredFormat>) -> DataRequest {
        DataRequest::new("get it", path, fmt).unwrap()
    }

    #[test]
    fn mission_appends_save_location_once() {
        let r = DataRequest::new("Download roads.", "/tmp/x/roads.geojson", None).unwrap();
        assert_eq!(
            r.mission_text(Path::new("/tmp/x")),
            "Download roads.\nSave the downloaded data to: roads.geojson"
        );
        let r = DataRequest::new(
            "Download roads to roads.geojson",
            "/tmp/x/roads.geojson",
            None,
        )
        .unwrap();
        assert_eq!(
            r.mission_text(Path::new("/tmp/x")),
            "Download roads to roads.geojson"
        );
        assert!(DataRequest::new(" ", "a", None).is_err());
        assert!(DataRequest::new("a", "", None).is_err());
    }

    #[test]
    fn error_report_prefers_stderr_and_keeps_tail() {
        let mut r = ExecutionResult {
            succeeded: false,
            exit_code: 1,
            stdout: "out".into(),
            stderr: String::new(),
            duration: 0.1,
            produced_files: vec![],
            timed_out: false,
        };
        assert_eq!(error_report(&r), "out");
        r.stderr = format!("{}END", "x".repeat(20_000));
        let rep = error_report(&r);
        assert_eq!(rep.len(), ERROR_REPORT_CAP);
        assert!(rep.ends_with("END"));
    }

    #[test]
    fn verdicts() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("a.geojson");
        std::fs::write(
            &good,
            r#"{"type":"FeatureCollection","features":[{"type":"Feature","properties":{},"geometry":{"type":"Point","coordinates":[1,2]}}]}"#,
        )
        .unwrap();
        assert_eq!(
            verify_output(&[], &request(&good, Some(DeclaredFormat::Geojson))),
            Verdict::Pass
        );

        let empty = dir.path().join("b.geojson");
        std::fs::write(&empty, "").unwrap();
        assert!(
            matches!(verify_output(&[], &request(&empty, None)), Verdict::Fail(r) if r.contains("empty"))
        );

        let prose = dir.path().join("c.geojson");
        std::fs::write(&prose, "Here are the provinces you asked for.").unwrap();
        assert!(matches!(
            verify_output(&[], &request(&prose, Some(DeclaredFormat::Geojson))),
            Verdict::Fail(r) if r.starts_with("format")
        ));

        let bad_coord = dir.path().join("d.geojson");
        std::fs::write(&bad_coord, r#"{"type":"Point","coordinates":[200,0]}"#).unwrap();
        assert!(matches!(
            verify_output(&[], &request(&bad_coord, Some(DeclaredFormat::Geojson))),
            Verdict::Fail(_)
        ));

        let csv = dir.path().join("e.csv");
        std::fs::write(&csv, "a,b\n1,2\n").unwrap();
        assert_eq!(
            verify_output(&[], &request(&csv, Some(DeclaredFormat::Csv))),
            Verdict::Pass
        );
        assert!(matches!(
            verify_output(&[], &request(&csv, Some(DeclaredFormat::Image))),
            Verdict::Fail(_)
        ));
        assert!(matches!(
            verify_output(&[], &request(&dir.path().join("missing"), None)),
            Verdict::Fail(_)
        ));
    }
}
