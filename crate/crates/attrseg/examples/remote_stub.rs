//! Talk to a remote backend over the wire protocol, served here by the
//! loopback echo stub.
//!
//! ```bash
//! cargo run -p attrseg --release --example remote_stub
//! ```

use attrseg::backend::remote::RemoteBackend;
use attrseg::backend::stub::EchoStub;
use attrseg::backend::{slice_embeddings, BackendDescriptor, BackendKind, MllmBackend};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let stub = EchoStub::spawn(64)?;
    println!("echo stub listening at {}", stub.endpoint());

    let backend = RemoteBackend::new(BackendDescriptor {
        kind: BackendKind::Remote,
        endpoint: Some(stub.endpoint()),
        script: None,
        embedding_width: 64,
        model: "echo-stub".into(),
        layer: "final".into(),
    })?;

    let prompt = "What is the object or part that is hot in this image?";
    let result = backend.generate(b"example image bytes", prompt)?;
    println!("response text: {}", result.text);
    println!("tokens ({}):", result.token_count());
    for t in &result.tokens {
        print!("[{}] ", t.text);
    }
    println!();
    println!(
        "embeddings: {} x {} (latency {:.2} ms)",
        result.embeddings.rows(),
        result.embeddings.cols(),
        result.latency_ms
    );
    let span = 0..2;
    let first_two = slice_embeddings(&result, std::slice::from_ref(&span))?;
    println!("first-two-token slice: {} x {}", first_two.rows(), first_two.cols());
    Ok(())
}
