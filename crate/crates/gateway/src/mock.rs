//! Scripted in-process HTTP endpoint for tests: serves one canned response
//! per request, records what arrived, then refuses further connections.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

/// One scripted reply.
#[derive(Clone, Debug)]
pub enum MockResponse {
    /// 200 with a well-formed chat-completion body carrying this content.
    Content(String),
    /// A bare status code with an empty JSON body.
    Status(u16),
    /// 200 with this raw body.
    Raw(String),
}

/// What one request looked like.
#[derive(Clone, Debug)]
pub struct RecordedRequest {
    pub path: String,
    pub authorization: Option<String>,
    pub body: String,
}

pub struct MockEndpoint {
    addr: String,
    requests: Arc<Mutex<Vec<RecordedRequest>>>,
    handle: Option<JoinHandle<()>>,
}

fn handle_connection(
    stream: &mut TcpStream,
    response: &MockResponse,
    recorded: &Mutex<Vec<RecordedRequest>>,
) -> Option<()> {
    stream.set_read_timeout(Some(Duration::from_secs(5))).ok()?;
    let mut reader = BufReader::new(stream.try_clone().ok()?);
    let mut request_line = String::new();
    reader.read_line(&mut request_line).ok()?;
    let path = request_line.split_whitespace().nth(1)?.to_string();

    let mut authorization = None;
    let mut content_length = 0usize;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line).ok()?;
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            match name.to_ascii_lowercase().as_str() {
                "authorization" => authorization = Some(value.trim().to_string()),
                "content-length" => content_length = value.trim().parse().unwrap_or(0),
                _ => {}
            }
        }
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body).ok()?;

    // Record before replying so counts are settled once the client has a
    // response in hand.
    recorded.lock().unwrap().push(RecordedRequest {
        path,
        authorization,
        body: String::from_utf8_lossy(&body).into_owned(),
    });

    let (status, reason, payload) = match response {
        MockResponse::Content(content) => (
            200,
            "OK",
            format!(
                r#"{{"choices":[{{"message":{{"role":"assistant","content":{}}}}}]}}"#,
                serde_json::to_string(content).unwrap()
            ),
        ),
        MockResponse::Status(code) => (*code, "Scripted", "{}".to_string()),
        MockResponse::Raw(raw) => (200, "OK", raw.clone()),
    };
    let reply = format!(
        "HTTP/1.1 {status} {reason}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{payload}",
        payload.len()
    );
    stream.write_all(reply.as_bytes()).ok()?;
    stream.flush().ok()?;
    Some(())
}

impl MockEndpoint {
    /// Bind a local port and serve the script, one response per connection.
    pub fn start(script: Vec<MockResponse>) -> MockEndpoint {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind mock endpoint");
        let addr = format!("http://{}", listener.local_addr().unwrap());
        let requests: Arc<Mutex<Vec<RecordedRequest>>> = Arc::new(Mutex::new(Vec::new()));
        let recorded = Arc::clone(&requests);
        let handle = std::thread::spawn(move || {
            for response in script {
                let Ok((mut stream, _)) = listener.accept() else {
                    break;
                };
                let _ = handle_connection(&mut stream, &response, &recorded);
            }
            // Listener drops here; later connections are refused.
        });
        MockEndpoint {
            addr,
            requests,
            handle: Some(handle),
        }
    }

    /// Base URL to point a client at.
    pub fn url(&self) -> &str {
        &self.addr
    }

    pub fn request_count(&self) -> usize {
        self.requests.lock().unwrap().len()
    }

    pub fn requests(&self) -> Vec<RecordedRequest> {
        self.requests.lock().unwrap().clone()
    }

    /// Wait for the script to finish serving.
    pub fn join(mut self) -> Vec<RecordedRequest> {
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
        self.requests.lock().unwrap().clone()
    }
}
