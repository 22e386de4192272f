//! Subprocess execution of generated programs.
//!
//! Isolation is at the process level only: the program runs in its own
//! process group with a cleared environment, a scratch directory for the
//! program file and a wall-clock timeout after which the whole group is
//! killed. There is no OS-level containment.
//!
//! The child's working directory is `output_dir`, so relative save paths in
//! generated programs land there. The environment contains only the
//! variables in [`PASS_THROUGH_ENV`], the `GEODATA_KEY_*` secrets marked for
//! environment injection, and whatever the caller puts in
//! [`RuntimeConfig::env`]. With `network_allowed == false` every proxy
//! variable points at a closed local port, and with `http_fixtures` set the
//! runtime's fixture shim answers HTTP calls from recorded files.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant, SystemTime};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::prompting::GeneratedProgram;
use crate::runtime::{RuntimeProfile, PYTHON};
use crate::secrets::{scan_placeholders, SecretError, SecretStore};

pub const PASS_THROUGH_ENV: &[&str] = &[
    "PATH",
    "HOME",
    "LANG",
    "LC_ALL",
    "TZ",
    "TMPDIR",
    "SSL_CERT_FILE",
    "SSL_CERT_DIR",
];

const BLACKHOLE_PROXY: &str = "http://127.0.0.1:9";
const DEFAULT_OUTPUT_CAP: usize = 1 << 20;
const KILL_GRACE: Duration = Duration::from_secs(2);

#[derive(Debug, Error)]
pub enum SandboxError {
    #[error("interpreter {0:?} not found")]
    InterpreterMissing(String),
    #[error("sandbox setup failed: {0}")]
    SandboxSetupError(String),
    #[error("program still contains placeholder {0}")]
    UninjectedPlaceholder(String),
}

#[derive(Debug, Clone)]
pub struct RuntimeConfig {
    pub runtime: &'static RuntimeProfile,
    pub interpreter_command: Vec<String>,
    pub timeout: Duration,
    pub working_dir: PathBuf,
    pub output_dir: PathBuf,
    pub env: BTreeMap<String, String>,
    pub network_allowed: bool,
    pub http_fixtures: Option<PathBuf>,
    /// Per-stream capture limit in bytes; the tail is kept.
    pub output_cap: usize,
}

impl RuntimeConfig {
    pub fn new(
        runtime: &'static RuntimeProfile,
        working_dir: PathBuf,
        output_dir: PathBuf,
    ) -> Self {
        Self {
            runtime,
            interpreter_command: runtime
                .default_interpreter
                .iter()
                .map(|s| s.to_string())
                .collect(),
            timeout: Duration::from_secs(300),
            working_dir,
            output_dir,
            env: BTreeMap::new(),
            network_allowed: true,
            http_fixtures: None,
            output_cap: DEFAULT_OUTPUT_CAP,
        }
    }

    pub fn python(working_dir: PathBuf, output_dir: PathBuf) -> Self {
        Self::new(&PYTHON, working_dir, output_dir)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProducedFile {
    pub path: PathBuf,
    pub size: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub succeeded: bool,
    pub exit_code: i32,
    pub stdout: String,
    pub stderr: String,
    pub duration: f64,
    pub produced_files: Vec<ProducedFile>,
    pub timed_out: bool,
}

impl ExecutionResult {
    /// Replaces any secret value in the captured streams.
    pub fn redacted(mut self, store: &SecretStore) -> Self {
        self.stdout = store.redact(&self.stdout);
        self.stderr = store.redact(&self.stderr);
        self
    }
}

/// Replaces every placeholder token with its secret. All other bytes are
/// left untouched.
pub fn inject_secrets(
    program: &GeneratedProgram,
    store: &SecretStore,
) -> Result<GeneratedProgram, SecretError> {
    let text = &program.source_text;
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    for (span, ph) in scan_placeholders(text) {
        let ph = ph?;
        let secret = store
            .lookup(&ph)
            .ok_or_else(|| SecretError::MissingSecret(ph.token()))?;
        out.push_str(&text[last..span.start]);
        out.push_str(secret.expose());
        last = span.end;
    }
    out.push_str(&text[last..]);
    Ok(GeneratedProgram {
        source_text: out,
        ..program.clone()
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct FileStamp {
    size: u64,
    modified: Option<SystemTime>,
    digest: [u8; 32],
}

fn snapshot(dir: &Path, skip: &Path) -> BTreeMap<PathBuf, FileStamp> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let Ok(rd) = std::fs::read_dir(&d) else {
            continue;
        };
        for entry in rd.flatten() {
            let path = entry.path();
            if path.starts_with(skip) {
                continue;
            }
            let Ok(meta) = entry.metadata() else { continue };
            if meta.is_dir() {
                stack.push(path);
            } else if meta.is_file() {
                let digest = std::fs::read(&path)
                    .map(|b| Sha256::digest(&b).into())
                    .unwrap_or([0; 32]);
                out.insert(
                    path,
                    FileStamp {
                        size: meta.len(),
                        modified: meta.modified().ok(),
                        digest,
                    },
                );
            }
        }
    }
    out
}

/// Collects a stream, keeping only the last `cap` bytes.
fn capture(mut reader: impl Read + Send + 'static, cap: usize) -> thread::JoinHandle<String> {
    thread::spawn(move || {
        let mut kept: Vec<u8> = Vec::new();
        let mut dropped = 0usize;
        let mut buf = [0u8; 8192];
        loop {
            match reader.read(&mut buf) {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    kept.extend_from_slice(&buf[..n]);
                    if kept.len() > cap.saturating_mul(2).max(cap + 1) {
                        let excess = kept.len() - cap;
                        kept.drain(..excess);
                        dropped += excess;
                    }
                }
            }
        }
        if kept.len() > cap {
            let excess = kept.len() - cap;
            kept.drain(..excess);
            dropped += excess;
        }
        let text = String::from_utf8_lossy(&kept).into_owned();
        if dropped > 0 {
            format!("[... truncated {dropped} bytes ...]\n{text}")
        } else {
            text
        }
    })
}

#[cfg(unix)]
fn kill_group(pid: u32) {
    // The child leads its own process group.
    unsafe {
        libc::kill(-(pid as i32), libc::SIGKILL);
    }
}

#[cfg(not(unix))]
fn kill_group(_pid: u32) {}

pub struct Sandbox {
    config: RuntimeConfig,
}

impl Sandbox {
    pub fn new(config: RuntimeConfig) -> Self {
        Self { config }
    }

    pub fn config(&self) -> &RuntimeConfig {
        &self.config
    }

    pub fn program_path(&self, attempt: usize) -> PathBuf {
        self.config.working_dir.join(format!(
            "generated_step_{attempt}.{}",
            self.config.runtime.extension
        ))
    }

    fn prepare(&self) -> Result<BTreeMap<String, String>, SandboxError> {
        let cfg = &self.config;
        if cfg.timeout.is_zero() {
            return Err(SandboxError::SandboxSetupError(
                "timeout must be positive".into(),
            ));
        }
        for dir in [&cfg.working_dir, &cfg.output_dir] {
            if !dir.is_dir() {
                return Err(SandboxError::SandboxSetupError(format!(
                    "{} is not a directory",
                    dir.display()
                )));
            }
        }
        let mut env: BTreeMap<String, String> = PASS_THROUGH_ENV
            .iter()
            .filter_map(|k| std::env::var(k).ok().map(|v| (k.to_string(), v)))
            .collect();
        if !cfg.network_allowed {
            for k in [
                "HTTP_PROXY",
                "HTTPS_PROXY",
                "ALL_PROXY",
                "http_proxy",
                "https_proxy",
                "all_proxy",
            ] {
                env.insert(k.into(), BLACKHOLE_PROXY.into());
            }
            env.insert("NO_PROXY".into(), String::new());
            env.insert("no_proxy".into(), String::new());
        }
        if let Some(fixtures) = &cfg.http_fixtures {
            let (Some((file, source)), Some(var)) =
                (cfg.runtime.fixture_shim, cfg.runtime.module_path_var)
            else {
                return Err(SandboxError::SandboxSetupError(format!(
                    "runtime {} cannot replay HTTP fixtures",
                    cfg.runtime.id
                )));
            };
            let shim_dir = cfg.working_dir.join(".geodata_shim");
            std::fs::create_dir_all(&shim_dir)
                .and_then(|_| std::fs::write(shim_dir.join(file), source))
                .map_err(|e| SandboxError::SandboxSetupError(e.to_string()))?;
            let fixtures = std::fs::canonicalize(fixtures)
                .map_err(|e| SandboxError::SandboxSetupError(format!("fixtures: {e}")))?;
            env.insert(var.into(), shim_dir.display().to_string());
            env.insert(
                "GEODATA_HTTP_FIXTURES".into(),
                fixtures.display().to_string(),
            );
        }
        env.extend(cfg.env.iter().map(|(k, v)| (k.clone(), v.clone())));
        Ok(env)
    }

    /// Runs `program` as attempt number `attempt`. A non-zero exit is a
    /// failed result, not an error.
    pub fn execute(
        &self,
        program: &GeneratedProgram,
        attempt: usize,
    ) -> Result<ExecutionResult, SandboxError> {
        if let Some((span, _)) = scan_placeholders(&program.source_text).into_iter().next() {
            return Err(SandboxError::UninjectedPlaceholder(
                program.source_text[span].to_string(),
            ));
        }
        let env = self.prepare()?;
        let cfg = &self.config;
        let path = self.program_path(attempt);
        std::fs::write(&path, &program.source_text)
            .map_err(|e| SandboxError::SandboxSetupError(format!("{}: {e}", path.display())))?;
        let path = std::fs::canonicalize(&path)
            .map_err(|e| SandboxError::SandboxSetupError(e.to_string()))?;

        let (exe, args) = cfg
            .interpreter_command
            .split_first()
            .ok_or_else(|| SandboxError::SandboxSetupError("empty interpreter command".into()))?;
        let mut cmd = Command::new(exe);
        cmd.args(args)
            .arg(&path)
            .current_dir(&cfg.output_dir)
            .env_clear()
            .envs(&env)
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped());
        #[cfg(unix)]
        {
            use std::os::unix::process::CommandExt;
            cmd.process_group(0);
        }

        let skip =
            std::fs::canonicalize(&cfg.working_dir).unwrap_or_else(|_| cfg.working_dir.clone());
        let output_dir =
            std::fs::canonicalize(&cfg.output_dir).unwrap_or_else(|_| cfg.output_dir.clone());
        let before = snapshot(&output_dir, &skip);

        let started = Instant::now();
        let mut child = cmd.spawn().map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => SandboxError::InterpreterMissing(exe.clone()),
            _ => SandboxError::SandboxSetupError(format!("spawn {exe}: {e}")),
        })?;
        log::debug!("attempt {attempt}: started pid {}", child.id());
        let out = capture(child.stdout.take().expect("piped"), cfg.output_cap);
        let err = capture(child.stderr.take().expect("piped"), cfg.output_cap);

        let deadline = started + cfg.timeout;
        let mut timed_out = false;
        let status = loop {
            match child.try_wait() {
                Ok(Some(status)) => break Some(status),
                Ok(None) if Instant::now() >= deadline => {
                    timed_out = true;
                    kill_group(child.id());
                    let _ = child.kill();
                    break child.wait().ok();
                }
                Ok(None) => thread::sleep(Duration::from_millis(5)),
                Err(_) => break None,
            }
        };
        // Grandchildren may still hold the pipes; take the group down too.
        kill_group(child.id());
        let duration = started.elapsed();
        let join = |h: thread::JoinHandle<String>| {
            let wait_until = Instant::now() + KILL_GRACE;
            while !h.is_finished() && Instant::now() < wait_until {
                thread::sleep(Duration::from_millis(5));
            }
            if h.is_finished() {
                h.join().unwrap_or_default()
            } else {
                String::from("[output unavailable: stream still open]")
            }
        };
        let stdout = join(out);
        let stderr = join(err);

        let after = snapshot(&output_dir, &skip);
        let produced_files = after
            .iter()
            .filter(|(p, stamp)| before.get(*p) != Some(stamp))
            .map(|(p, stamp)| ProducedFile {
                path: p.clone(),
                size: stamp.size,
            })
            .collect();

        let exit_code = status.and_then(|s| s.code()).unwrap_or(-1);
        let succeeded = !timed_out && exit_code == 0;
        log::info!(
            "attempt {attempt}: exit {exit_code}{} in {:.2}s",
            if timed_out { " (timed out)" } else { "" },
            duration.as_secs_f64()
        );
        Ok(ExecutionResult {
            succeeded,
            exit_code,
            stdout,
            stderr,
            duration: duration.as_secs_f64(),
            produced_files,
            timed_out,
        })
    }
}
