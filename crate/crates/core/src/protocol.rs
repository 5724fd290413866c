//! Coordinator/agent wire protocol: 4-byte big-endian length, then one UTF-8
//! JSON object with a `type` tag.

use std::io::{self, Read, Write};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::agent::{ApiCall, ApiResult, HealthReport};
use crate::coordinator::{ArtifactBundle, JobManifest, JobStatus};

/// Largest frame either side accepts.
pub const MAX_FRAME_BYTES: usize = 16 * 1024 * 1024;
/// Artifact payload bytes per ARTIFACT_CHUNK.
pub const ARTIFACT_CHUNK_BYTES: usize = 256 * 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiFailure {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Message {
    /// Agent introduction; the coordinator echoes it (token blank) to accept.
    Hello { vp_id: String, token: String },
    Heartbeat {
        vp_id: String,
        #[serde(default)]
        health: Option<HealthReport>,
    },
    Dispatch {
        job_id: u64,
        device_id: String,
        manifest: JobManifest,
    },
    Status {
        job_id: u64,
        status: JobStatus,
        #[serde(default)]
        reason: Option<String>,
    },
    /// Piece of one artifact file; `data` is base64.
    ArtifactChunk {
        job_id: u64,
        name: String,
        offset: u64,
        total: u64,
        data: String,
    },
    /// Controller API call forwarded to an agent, and its answer.
    ApiProxy {
        request_id: u64,
        #[serde(default)]
        call: Option<ApiCall>,
        #[serde(default)]
        result: Option<ApiResult>,
        #[serde(default)]
        error: Option<ApiFailure>,
    },
}

impl Message {
    pub fn kind(&self) -> &'static str {
        match self {
            Message::Hello { .. } => "HELLO",
            Message::Heartbeat { .. } => "HEARTBEAT",
            Message::Dispatch { .. } => "DISPATCH",
            Message::Status { .. } => "STATUS",
            Message::ArtifactChunk { .. } => "ARTIFACT_CHUNK",
            Message::ApiProxy { .. } => "API_PROXY",
        }
    }
}

pub fn encode(msg: &Message) -> io::Result<Vec<u8>> {
    let body = serde_json::to_vec(msg).map_err(io::Error::other)?;
    if body.len() > MAX_FRAME_BYTES {
        return Err(io::Error::new(
            io::ErrorKind::InvalidInput,
            "frame too large",
        ));
    }
    let mut out = Vec::with_capacity(4 + body.len());
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(&body);
    Ok(out)
}

pub fn decode_body(body: &[u8]) -> io::Result<Message> {
    serde_json::from_slice(body).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}

/// Validates a length prefix.
pub fn frame_len(prefix: [u8; 4]) -> io::Result<usize> {
    let len = u32::from_be_bytes(prefix) as usize;
    if len > MAX_FRAME_BYTES {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("frame of {len} bytes exceeds limit"),
        ));
    }
    Ok(len)
}

pub fn write_message<W: Write>(w: &mut W, msg: &Message) -> io::Result<()> {
    w.write_all(&encode(msg)?)?;
    w.flush()
}

/// Reads one message; `Ok(None)` on a clean end of stream.
pub fn read_message<R: Read>(r: &mut R) -> io::Result<Option<Message>> {
    let mut prefix = [0u8; 4];
    match r.read_exact(&mut prefix) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let mut body = vec![0u8; frame_len(prefix)?];
    r.read_exact(&mut body)?;
    decode_body(&body).map(Some)
}

/// Splits a bundle into ARTIFACT_CHUNK messages. Empty files still get
/// one chunk so the receiver learns their name.
pub fn bundle_chunks(job_id: u64, bundle: &ArtifactBundle) -> Vec<Message> {
    let mut out = Vec::new();
    for f in &bundle.files {
        let total = f.bytes.len() as u64;
        let mut offset = 0usize;
        loop {
            let end = (offset + ARTIFACT_CHUNK_BYTES).min(f.bytes.len());
            out.push(Message::ArtifactChunk {
                job_id,
                name: f.name.clone(),
                offset: offset as u64,
                total,
                data: STANDARD.encode(&f.bytes[offset..end]),
            });
            offset = end;
            if offset >= f.bytes.len() {
                break;
            }
        }
    }
    out
}

/// Reassembles chunks for one job, in arrival order.
#[derive(Debug, Default, Clone)]
pub struct BundleAssembler {
    files: Vec<(String, u64, Vec<u8>)>,
}

impl BundleAssembler {
    pub fn push(&mut self, name: &str, offset: u64, total: u64, data: &str) -> io::Result<()> {
        let bytes = STANDARD
            .decode(data)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
        let idx = match self.files.iter().position(|(n, _, _)| n == name) {
            Some(i) => i,
            None => {
                self.files.push((name.to_string(), total, Vec::new()));
                self.files.len() - 1
            }
        };
        let (_, expected_total, buf) = &mut self.files[idx];
        if *expected_total != total || buf.len() as u64 != offset {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                format!("chunk for {name} out of sequence"),
            ));
        }
        buf.extend_from_slice(&bytes);
        if buf.len() as u64 > total {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                "chunk overruns file",
            ));
        }
        Ok(())
    }

    /// The finished bundle, or an error if a file is short.
    pub fn finish(self) -> io::Result<ArtifactBundle> {
        let mut bundle = ArtifactBundle::default();
        for (name, total, bytes) in self.files {
            if bytes.len() as u64 != total {
                return Err(io::Error::new(
                    io::ErrorKind::UnexpectedEof,
                    format!("{name} incomplete"),
                ));
            }
            bundle.push(name, bytes);
        }
        Ok(bundle)
    }
}
