//! Loopback echo stub implementing the remote wire protocol. The response
//! text echoes the prompt; tokens and embeddings come from the mock
//! tokenizer, so integration tests can assert exact counts.

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use super::remote::{GenerateRequest, GenerateResponse};
use super::scripted::{token_embedding, tokenize_with_offsets, MOCK_EMBED_SEED};

pub struct EchoStub {
    addr: std::net::SocketAddr,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
    width: usize,
}

impl EchoStub {
    pub fn spawn(width: usize) -> std::io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let stop_flag = Arc::clone(&stop);
        let handle = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if stop_flag.load(Ordering::SeqCst) {
                    break;
                }
                if let Ok(stream) = stream {
                    let _ = handle_connection(stream, width);
                }
            }
        });
        Ok(Self { addr, stop, handle: Some(handle), width })
    }

    /// Endpoint string in descriptor form, e.g. `127.0.0.1:41234/generate`.
    pub fn endpoint(&self) -> String {
        format!("{}/generate", self.addr)
    }

    pub fn width(&self) -> usize {
        self.width
    }
}

impl Drop for EchoStub {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Unblock the accept loop.
        let _ = TcpStream::connect(self.addr);
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}

fn handle_connection(mut stream: TcpStream, width: usize) -> std::io::Result<()> {
    let mut buf = Vec::new();
    let mut chunk = [0u8; 4096];
    let header_end;
    loop {
        let n = stream.read(&mut chunk)?;
        if n == 0 {
            return Ok(());
        }
        buf.extend_from_slice(&chunk[..n]);
        if let Some(pos) = find_header_end(&buf) {
            header_end = pos;
            break;
        }
    }
    let header = String::from_utf8_lossy(&buf[..header_end]).into_owned();
    let content_length: usize = header
        .lines()
        .find_map(|l| l.to_ascii_lowercase().strip_prefix("content-length:").map(str::to_string))
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(0);
    let body_start = header_end + 4;
    while buf.len() < body_start + content_length {
        let n = stream.read(&mut chunk)?;
        if n == 0 {
            break;
        }
        buf.extend_from_slice(&chunk[..n]);
    }
    let body = &buf[body_start..(body_start + content_length).min(buf.len())];

    let response_body = match serde_json::from_slice::<GenerateRequest>(body) {
        Ok(request) => {
            let text = request.prompt;
            let tokens = tokenize_with_offsets(&text);
            let mut embeddings = Vec::with_capacity(tokens.len() * width);
            for t in &tokens {
                embeddings
                    .extend(token_embedding(&t.text, width, MOCK_EMBED_SEED).iter().map(|&v| v as f32));
            }
            let response = GenerateResponse {
                text,
                tokens,
                embeddings,
                width,
                layer: request.layer,
            };
            serde_json::to_string(&response).expect("response serializes")
        }
        Err(e) => {
            let reply = format!(
                "HTTP/1.1 400 Bad Request\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{e}",
                e.to_string().len()
            );
            stream.write_all(reply.as_bytes())?;
            return Ok(());
        }
    };
    let reply = format!(
        "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{response_body}",
        response_body.len()
    );
    stream.write_all(reply.as_bytes())
}

fn find_header_end(buf: &[u8]) -> Option<usize> {
    buf.windows(4).position(|w| w == b"\r\n\r\n")
}
