//! Talk to a chat endpoint over HTTP. A throwaway server on localhost answers
//! `/v1/chat`, failing the first call with 503 so the retry is visible.
//!
//! `cargo run --example remote_backend`

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::time::{Duration, Instant};

use traffic_rag::backend::{query_model, ModelRequest, RemoteBackend};
use traffic_rag::prompting::extract_answer;

fn serve(listener: TcpListener) {
    for (n, stream) in listener.incoming().enumerate() {
        let mut stream = stream.expect("accept");
        let mut reader = BufReader::new(stream.try_clone().expect("clone"));
        let mut len = 0;
        let mut line = String::new();
        loop {
            line.clear();
            reader.read_line(&mut line).expect("read header");
            if line == "\r\n" || line.is_empty() {
                break;
            }
            if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                len = v.trim().parse().expect("length");
            }
        }
        let mut body = vec![0; len];
        reader.read_exact(&mut body).expect("read body");
        let request: serde_json::Value = serde_json::from_slice(&body).expect("json body");
        eprintln!(
            "server: call {} with {} media refs",
            n + 1,
            request["media"].as_array().map_or(0, Vec::len)
        );

        let (status, reply) = if n == 0 {
            ("503 Service Unavailable", r#"{"error":"warming up"}"#.to_string())
        } else {
            (
                "200 OK",
                serde_json::json!({"text": "The sign shows a no-entry symbol. Answer: C"}).to_string(),
            )
        };
        let _ = write!(
            stream,
            "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
            reply.len()
        );
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let endpoint = format!("http://{}", listener.local_addr()?);
    std::thread::spawn(move || serve(listener));

    let backend = RemoteBackend::connect(&endpoint, Duration::from_secs(5)).with_api_key(None);
    let options: Vec<String> = ["Turn left", "Park", "Do not enter"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let request = ModelRequest::new("Which action does the sign forbid?\n\nA. Turn left\nB. Park\nC. Do not enter")
        .with_media((0..8).map(|i| format!("frame:{i}")).collect());

    let start = Instant::now();
    let response = query_model(&request, &backend)?;
    println!(
        "backend {} replied after {:?}: {}",
        response.backend_id,
        start.elapsed(),
        response.text
    );
    let answer = extract_answer(&response.text, &options)?;
    println!("parsed choice: {}", options[answer.choice_index]);
    Ok(())
}
