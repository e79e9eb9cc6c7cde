//! Remote backend client. One HTTP POST per conversation turn: the request
//! carries the base64 image, the rendered prompt and a token budget; the
//! response carries text, token offsets and a row-major float32 embedding
//! array.

use std::io::{Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{BackendDescriptor, BackendError, GenerationResult, MllmBackend, Token};
use crate::tensor::Mat;

#[derive(Serialize, Deserialize)]
pub struct GenerateRequest {
    pub image_b64: String,
    pub prompt: String,
    pub max_tokens: usize,
    pub layer: String,
}

#[derive(Serialize, Deserialize)]
pub struct GenerateResponse {
    pub text: String,
    pub tokens: Vec<Token>,
    /// Row-major `tokens.len() x width` float32 values.
    pub embeddings: Vec<f32>,
    pub width: usize,
    #[serde(default)]
    pub layer: String,
}

pub struct RemoteBackend {
    descriptor: BackendDescriptor,
    host: String,
    path: String,
    pub max_tokens: usize,
    pub timeout: Duration,
}

impl RemoteBackend {
    pub fn new(descriptor: BackendDescriptor) -> Result<Self, BackendError> {
        descriptor.validate()?;
        let endpoint = descriptor
            .endpoint
            .clone()
            .ok_or_else(|| BackendError::Descriptor("remote backend needs an endpoint".into()))?;
        let (host, path) = match endpoint.find('/') {
            Some(i) => (endpoint[..i].to_string(), endpoint[i..].to_string()),
            None => (endpoint, "/generate".to_string()),
        };
        Ok(Self { descriptor, host, path, max_tokens: 512, timeout: Duration::from_secs(30) })
    }

    fn post(&self, body: &str) -> Result<String, BackendError> {
        let addr = self
            .host
            .to_socket_addrs()
            .map_err(|e| BackendError::Transport(format!("resolve {}: {e}", self.host)))?
            .next()
            .ok_or_else(|| BackendError::Transport(format!("no address for {}", self.host)))?;
        let mut stream = TcpStream::connect_timeout(&addr, self.timeout)
            .map_err(|e| BackendError::Transport(format!("connect {}: {e}", self.host)))?;
        stream.set_read_timeout(Some(self.timeout)).ok();
        stream.set_write_timeout(Some(self.timeout)).ok();
        let request = format!(
            "POST {} HTTP/1.1\r\nHost: {}\r\nContent-Type: application/json\r\n\
             Content-Length: {}\r\nConnection: close\r\n\r\n{}",
            self.path,
            self.host,
            body.len(),
            body
        );
        stream
            .write_all(request.as_bytes())
            .map_err(|e| BackendError::Transport(format!("send: {e}")))?;
        let mut raw = Vec::new();
        stream
            .read_to_end(&mut raw)
            .map_err(|e| BackendError::Transport(format!("recv: {e}")))?;
        let text = String::from_utf8_lossy(&raw);
        let header_end = text
            .find("\r\n\r\n")
            .ok_or_else(|| BackendError::Transport("malformed HTTP response".into()))?;
        let status_line = text.lines().next().unwrap_or_default();
        if !status_line.contains("200") {
            return Err(BackendError::Transport(format!("server said: {status_line}")));
        }
        Ok(text[header_end + 4..].to_string())
    }
}

impl MllmBackend for RemoteBackend {
    fn generate(&self, image: &[u8], rendered_history: &str) -> Result<GenerationResult, BackendError> {
        let request = GenerateRequest {
            image_b64: base64_encode(image),
            prompt: rendered_history.to_string(),
            max_tokens: self.max_tokens,
            layer: self.descriptor.layer.clone(),
        };
        let body = serde_json::to_string(&request).expect("request serializes");
        let started = Instant::now();
        let response_body = self.post(&body)?;
        let latency_ms = started.elapsed().as_secs_f64() * 1e3;
        let response: GenerateResponse = serde_json::from_str(&response_body)
            .map_err(|e| BackendError::Protocol(format!("bad response body: {e}")))?;
        if response.width != self.descriptor.embedding_width {
            return Err(BackendError::Protocol(format!(
                "server embedding width {} != descriptor width {}",
                response.width, self.descriptor.embedding_width
            )));
        }
        if response.embeddings.len() != response.tokens.len() * response.width {
            return Err(BackendError::Protocol(format!(
                "embedding array length {} != {} tokens x {} width",
                response.embeddings.len(),
                response.tokens.len(),
                response.width
            )));
        }
        let embeddings = Mat::from_vec(
            response.tokens.len(),
            response.width,
            response.embeddings.iter().map(|&v| v as f64).collect(),
        );
        GenerationResult::new(response.text, response.tokens, embeddings, latency_ms)
    }

    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }
}

const B64_ALPHABET: &[u8; 64] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

pub fn base64_encode(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len().div_ceil(3) * 4);
    for chunk in bytes.chunks(3) {
        let b = [chunk[0], *chunk.get(1).unwrap_or(&0), *chunk.get(2).unwrap_or(&0)];
        let n = ((b[0] as u32) << 16) | ((b[1] as u32) << 8) | b[2] as u32;
        out.push(B64_ALPHABET[(n >> 18) as usize & 63] as char);
        out.push(B64_ALPHABET[(n >> 12) as usize & 63] as char);
        out.push(if chunk.len() > 1 { B64_ALPHABET[(n >> 6) as usize & 63] as char } else { '=' });
        out.push(if chunk.len() > 2 { B64_ALPHABET[n as usize & 63] as char } else { '=' });
    }
    out
}

pub fn base64_decode(text: &str) -> Result<Vec<u8>, BackendError> {
    let value = |c: u8| -> Result<u32, BackendError> {
        B64_ALPHABET
            .iter()
            .position(|&a| a == c)
            .map(|i| i as u32)
            .ok_or_else(|| BackendError::Protocol(format!("bad base64 byte {c}")))
    };
    let clean: Vec<u8> = text.bytes().filter(|&b| !b.is_ascii_whitespace()).collect();
    if !clean.len().is_multiple_of(4) {
        return Err(BackendError::Protocol("base64 length not a multiple of 4".into()));
    }
    let mut out = Vec::with_capacity(clean.len() / 4 * 3);
    for chunk in clean.chunks(4) {
        let pad = chunk.iter().filter(|&&c| c == b'=').count();
        let mut n = 0u32;
        for (i, &c) in chunk.iter().enumerate() {
            let v = if c == b'=' { 0 } else { value(c)? };
            n |= v << (18 - 6 * i);
        }
        out.push((n >> 16) as u8);
        if pad < 2 {
            out.push((n >> 8) as u8);
        }
        if pad < 1 {
            out.push(n as u8);
        }
    }
    Ok(out)
}
