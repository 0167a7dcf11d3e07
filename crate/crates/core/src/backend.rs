//! Generation backends behind the manifest-in / PNG-out contract.
//!
//! A backend receives the path of a job's `manifest.json` and must leave a PNG at the
//! manifest's `output_path` with the manifest's width and height. A backend that cannot
//! serve the job may write `failure.json` (`{"reason": "..."}`) next to the manifest.

use std::fmt;
use std::io::Read;
use std::path::Path;
use std::process::{Command, Stdio};
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use wait_timeout::ChildExt;

use crate::error::{Error, Result};
use crate::model::{BurnMask, Pipeline, Tile};
use crate::runner::JobManifest;

/// Burned pixels of the stub's inpaint output are scaled by this factor.
pub const STUB_DARKEN: f64 = 0.3;
pub const STUB_BASE_BURNED: [f64; 3] = [60.0, 60.0, 60.0];
pub const STUB_BASE_INTACT: [f64; 3] = [140.0, 190.0, 110.0];

pub trait GenerationBackend: Send + Sync {
    fn describe(&self) -> String;

    fn generate(&self, manifest_path: &Path, manifest: &JobManifest, timeout: Duration) -> Result<()>;
}

/// Backend selection as written in configuration: `stub`, `subprocess:<command>` or
/// `http:<url>`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum BackendSpec {
    #[default]
    Stub,
    /// Command template; `{manifest}` is replaced with the manifest path.
    Subprocess(String),
    Http(String),
}

impl FromStr for BackendSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "stub" {
            return Ok(BackendSpec::Stub);
        }
        if let Some(cmd) = s.strip_prefix("subprocess:") {
            if !cmd.contains("{manifest}") {
                return Err(Error::Config(format!(
                    "subprocess backend template {cmd:?} lacks a {{manifest}} placeholder"
                )));
            }
            return Ok(BackendSpec::Subprocess(cmd.to_string()));
        }
        if let Some(url) = s.strip_prefix("http:") {
            // accept both `http:http://host/x` and `http://host/x`
            let url = if url.starts_with("//") {
                format!("http:{url}")
            } else {
                url.to_string()
            };
            return Ok(BackendSpec::Http(url));
        }
        Err(Error::Config(format!(
            "unknown backend {s:?} (stub | subprocess:<command> | http:<url>)"
        )))
    }
}

impl fmt::Display for BackendSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendSpec::Stub => f.write_str("stub"),
            BackendSpec::Subprocess(cmd) => write!(f, "subprocess:{cmd}"),
            BackendSpec::Http(url) => write!(f, "http:{url}"),
        }
    }
}

impl TryFrom<String> for BackendSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<BackendSpec> for String {
    fn from(b: BackendSpec) -> String {
        b.to_string()
    }
}

impl BackendSpec {
    pub fn build(&self) -> Result<Box<dyn GenerationBackend>> {
        Ok(match self {
            BackendSpec::Stub => Box::new(StubBackend),
            BackendSpec::Subprocess(cmd) => Box::new(SubprocessBackend::new(cmd)?),
            BackendSpec::Http(url) => Box::new(HttpBackend::new(url)),
        })
    }
}

/// Deterministic weight-free generator.
///
/// Inpaint jobs copy the conditioning before image and darken burned pixels by
/// [`STUB_DARKEN`]; Base jobs paint the mask dark gray on light green.
#[derive(Debug, Clone, Copy, Default)]
pub struct StubBackend;

impl StubBackend {
    pub fn render(manifest: &JobManifest) -> Result<Tile> {
        let mask = BurnMask::load_png(&manifest.mask_path)?;
        let (w, h) = (manifest.params.width, manifest.params.height);
        mask_dims_ok(&mask, w, h)?;
        match manifest.pipeline {
            Pipeline::Inpaint => {
                let before_path = manifest
                    .before_path
                    .as_deref()
                    .ok_or_else(|| Error::Backend("inpaint manifest without before_path".into()))?;
                let before = Tile::load_png(before_path)?;
                before.ensure_dims("conditioning before image", w, h)?;
                before.map_pixels(|i, px| {
                    if mask.is_burned(i) {
                        px.map(|v| v * STUB_DARKEN)
                    } else {
                        px
                    }
                })
            }
            Pipeline::Base => Tile::from_fn(w, h, |x, y| {
                if mask.is_burned((y * w + x) as usize) {
                    STUB_BASE_BURNED
                } else {
                    STUB_BASE_INTACT
                }
            }),
        }
    }
}

fn mask_dims_ok(mask: &BurnMask, w: u32, h: u32) -> Result<()> {
    crate::model::ensure_dims("conditioning mask", mask.dims(), (w, h))
}

impl GenerationBackend for StubBackend {
    fn describe(&self) -> String {
        "stub".into()
    }

    fn generate(&self, _manifest_path: &Path, manifest: &JobManifest, _timeout: Duration) -> Result<()> {
        StubBackend::render(manifest)?.save_png(&manifest.output_path)
    }
}

#[derive(Debug, Deserialize)]
struct FailureFile {
    reason: String,
}

fn failure_reason(manifest_path: &Path) -> Option<String> {
    let path = manifest_path.with_file_name("failure.json");
    let text = std::fs::read_to_string(path).ok()?;
    Some(
        serde_json::from_str::<FailureFile>(&text)
            .map(|f| f.reason)
            .unwrap_or(text),
    )
}

/// Runs an external command per job.
#[derive(Debug, Clone)]
pub struct SubprocessBackend {
    template: Vec<String>,
}

impl SubprocessBackend {
    pub fn new(template: &str) -> Result<Self> {
        let template = shlex::split(template)
            .filter(|t| !t.is_empty())
            .ok_or_else(|| Error::Config(format!("cannot parse command template {template:?}")))?;
        Ok(SubprocessBackend { template })
    }
}

impl GenerationBackend for SubprocessBackend {
    fn describe(&self) -> String {
        format!("subprocess:{}", self.template.join(" "))
    }

    fn generate(&self, manifest_path: &Path, manifest: &JobManifest, timeout: Duration) -> Result<()> {
        let manifest_arg = manifest_path.display().to_string();
        let args: Vec<String> = self
            .template
            .iter()
            .map(|a| a.replace("{manifest}", &manifest_arg))
            .collect();
        let mut child = Command::new(&args[0])
            .args(&args[1..])
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| Error::Backend(format!("cannot start {:?}: {e}", args[0])))?;
        let mut stderr = child.stderr.take().expect("piped stderr");
        let drain = std::thread::spawn(move || {
            let mut buf = String::new();
            let _ = stderr.read_to_string(&mut buf);
            buf
        });
        let status = match child.wait_timeout(timeout).map_err(|e| Error::Backend(e.to_string()))? {
            Some(status) => status,
            None => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(Error::Backend(format!("timed out after {}s", timeout.as_secs())));
            }
        };
        let stderr = drain.join().unwrap_or_default();
        if let Some(reason) = failure_reason(manifest_path) {
            return Err(Error::Backend(reason));
        }
        if !status.success() {
            let lines: Vec<&str> = stderr.lines().collect();
            let tail = lines[lines.len().saturating_sub(5)..].join("\n");
            return Err(Error::Backend(format!("exited with {status}: {tail}")));
        }
        if !manifest.output_path.is_file() {
            return Err(Error::Backend("no output image written".into()));
        }
        Ok(())
    }
}

/// POSTs the manifest JSON to an endpoint. A PNG response body is written to
/// `output_path`; any other 2xx response means the backend wrote the file itself.
#[derive(Debug, Clone)]
pub struct HttpBackend {
    url: String,
}

impl HttpBackend {
    pub fn new(url: &str) -> Self {
        HttpBackend { url: url.to_string() }
    }
}

impl GenerationBackend for HttpBackend {
    fn describe(&self) -> String {
        format!("http:{}", self.url)
    }

    fn generate(&self, manifest_path: &Path, manifest: &JobManifest, timeout: Duration) -> Result<()> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        let body = serde_json::to_string(manifest)?;
        let mut resp = agent
            .post(&self.url)
            .content_type("application/json")
            .send(body)
            .map_err(|e| Error::Backend(format!("POST {}: {e}", self.url)))?;
        let is_png = resp
            .headers()
            .get("content-type")
            .and_then(|v| v.to_str().ok())
            .is_some_and(|v| v.starts_with("image/png"));
        if is_png {
            let bytes = resp
                .body_mut()
                .with_config()
                .limit(256 * 1024 * 1024)
                .read_to_vec()
                .map_err(|e| Error::Backend(format!("reading response: {e}")))?;
            std::fs::write(&manifest.output_path, bytes).map_err(|e| Error::io(&manifest.output_path, e))?;
        }
        if let Some(reason) = failure_reason(manifest_path) {
            return Err(Error::Backend(reason));
        }
        if !manifest.output_path.is_file() {
            return Err(Error::Backend("no output image written".into()));
        }
        Ok(())
    }
}
