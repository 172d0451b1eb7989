//! The OpenAI-compatible client talking to a throwaway local server that
//! answers one chat and one embeddings call.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;

use cuberag::llm::{complete, embed, ChatRequest, HttpConfig, OpenAiCompatible};

fn serve(listener: TcpListener, replies: Vec<&'static str>) -> std::thread::JoinHandle<Vec<String>> {
    std::thread::spawn(move || {
        let mut paths = Vec::new();
        for body in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream);
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            paths.push(request_line.split_whitespace().nth(1).unwrap_or("").to_string());
            let mut length = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line.trim().is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap();
                }
            }
            let mut sink = vec![0; length];
            reader.read_exact(&mut sink).unwrap();
            let mut stream = reader.into_inner();
            write!(
                stream,
                "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
        paths
    })
}

pub fn run_example() -> anyhow::Result<()> {
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let base_url = format!("http://{}/v1", listener.local_addr()?);
    let server = serve(
        listener,
        vec![
            r#"{"choices":[{"message":{"role":"assistant","content":"PERSON"}}],"usage":{"prompt_tokens":12,"completion_tokens":1}}"#,
            r#"{"data":[{"index":0,"embedding":[3.0,4.0]}]}"#,
        ],
    );

    let client = OpenAiCompatible::new(HttpConfig {
        base_url,
        api_key: Some("sk-local".into()),
        max_attempts: 1,
        ..HttpConfig::default()
    })?;
    let req = ChatRequest::new("Which cube covers directors?");
    println!("request body: {}", client.chat_body(&req));
    let reply = complete(&client, &req)?;
    println!("reply: {} ({:?})", reply.text, reply.usage);
    let vectors = embed(&client, &["Charlie Day".to_string()])?;
    println!("embedding: {:?}", vectors[0]);

    let paths = server.join().expect("server thread");
    println!("served: {}", paths.join(", "));
    anyhow::ensure!(reply.text == "PERSON");
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
