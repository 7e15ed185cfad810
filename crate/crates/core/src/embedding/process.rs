//! Adapter for encoders living in another process (typically a Python
//! script wrapping pretrained weights).
//!
//! The child reads one JSON request per line on stdin and answers with one
//! JSON line on stdout. Requests:
//!
//! ```text
//! {"op":"describe","role":"joint"|"text"}  -> {"model_id":..,"dim":..,"max_text_tokens":..,"logit_scale":..}
//! {"op":"joint_text","text":..}             -> {"vector":[..]}
//! {"op":"joint_image","path":..,"box":[x0,y0,x1,y1]} -> {"vector":[..]}
//! {"op":"text_tokens","text":..}            -> {"vectors":[[..],..]}
//! {"op":"text_mean","text":..}              -> {"vector":[..]}
//! ```
//!
//! Any response may instead be `{"error":"..."}`. Calls are serialized.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use serde::Deserialize;
use serde_json::{json, Value};

use super::{
    BackendDescriptor, BackendKind, JointEncoder, TextEncoder, DEFAULT_LOGIT_SCALE,
    DEFAULT_MAX_TEXT_TOKENS,
};
use crate::error::{Error, Result};
use crate::picture::Picture;
use crate::regions::BoundingBox;

struct Pipe {
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

pub struct ProcessBackend {
    descriptor: BackendDescriptor,
    pipe: Mutex<Pipe>,
    child: Mutex<Child>,
}

#[derive(Deserialize)]
struct Describe {
    model_id: String,
    dim: usize,
    #[serde(default)]
    max_text_tokens: Option<usize>,
    #[serde(default)]
    logit_scale: Option<f64>,
}

fn unavailable(msg: impl std::fmt::Display) -> Error {
    Error::BackendUnavailable(msg.to_string())
}

impl ProcessBackend {
    /// Spawns `command` through `sh -c` and performs the describe handshake.
    /// `role` must be `JointPretrained` or `TextPretrained`.
    pub fn spawn(command: &str, role: BackendKind) -> Result<Self> {
        let role_name = match role {
            BackendKind::JointPretrained => "joint",
            BackendKind::TextPretrained => "text",
            other => {
                return Err(Error::InvalidConfig(format!(
                    "process backend cannot act as {other}"
                )))
            }
        };
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| unavailable(format!("cannot spawn `{command}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        let mut backend = ProcessBackend {
            descriptor: BackendDescriptor::new(role, String::new(), 1),
            pipe: Mutex::new(Pipe { stdin, stdout }),
            child: Mutex::new(child),
        };
        let reply = backend.request(json!({"op": "describe", "role": role_name}))?;
        let d: Describe = serde_json::from_value(reply)?;
        let mut descriptor = BackendDescriptor::new(role, d.model_id, d.dim);
        descriptor.max_text_tokens = d.max_text_tokens.unwrap_or(DEFAULT_MAX_TEXT_TOKENS);
        descriptor.logit_scale = d.logit_scale.unwrap_or(DEFAULT_LOGIT_SCALE);
        descriptor.validate()?;
        backend.descriptor = descriptor;
        Ok(backend)
    }

    fn request(&self, req: Value) -> Result<Value> {
        let mut pipe = self.pipe.lock().expect("pipe lock");
        let mut line = serde_json::to_string(&req)?;
        line.push('\n');
        pipe.stdin
            .write_all(line.as_bytes())
            .and_then(|_| pipe.stdin.flush())
            .map_err(|e| unavailable(format!("backend process closed stdin: {e}")))?;
        let mut reply = String::new();
        let n = pipe
            .stdout
            .read_line(&mut reply)
            .map_err(|e| unavailable(format!("reading backend reply: {e}")))?;
        if n == 0 {
            return Err(unavailable("backend process exited"));
        }
        let value: Value = serde_json::from_str(&reply)?;
        if let Some(err) = value.get("error") {
            return Err(unavailable(format!("backend error: {err}")));
        }
        Ok(value)
    }

    fn vector(&self, req: Value) -> Result<Vec<f64>> {
        let reply = self.request(req)?;
        let v = reply
            .get("vector")
            .cloned()
            .ok_or_else(|| unavailable("reply lacks `vector`"))?;
        Ok(serde_json::from_value(v)?)
    }
}

impl Drop for ProcessBackend {
    fn drop(&mut self) {
        if let Ok(mut child) = self.child.lock() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

impl JointEncoder for ProcessBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn encode_text(&self, text: &str) -> Result<Vec<f64>> {
        self.vector(json!({"op": "joint_text", "text": text}))
    }

    fn encode_region(&self, picture: &Picture, region: BoundingBox) -> Result<Vec<f64>> {
        let path = picture
            .path
            .as_ref()
            .ok_or_else(|| unavailable("process backend needs a picture loaded from disk"))?;
        self.vector(json!({
            "op": "joint_image",
            "path": path,
            "box": [region.x0, region.y0, region.x1, region.y1],
        }))
    }
}

impl TextEncoder for ProcessBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn token_vectors(&self, text: &str) -> Result<Vec<Vec<f64>>> {
        let reply = self.request(json!({"op": "text_tokens", "text": text}))?;
        let v = reply
            .get("vectors")
            .cloned()
            .ok_or_else(|| unavailable("reply lacks `vectors`"))?;
        Ok(serde_json::from_value(v)?)
    }

    fn mean_vector(&self, text: &str) -> Result<Vec<f64>> {
        self.vector(json!({"op": "text_mean", "text": text}))
    }
}
