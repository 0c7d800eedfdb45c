use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use serde_json::{json, Value};

use critsel::select::llm::{ChatMessage, ChatRequest, ChatTransport};
use critsel::select::{select_with_llm, EndpointConfig, HttpTransport, SelectorPromptConfig};
use critsel::trajectory::{Step, Trajectory};

struct Captured {
    request_line: String,
    headers: Vec<(String, String)>,
    body: Value,
}

/// Serve one canned `(status, body)` per connection, in order, and report
/// what each request looked like.
fn serve(replies: Vec<(u16, String)>) -> (String, mpsc::Receiver<Captured>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for (status, reply) in replies {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let mut headers = Vec::new();
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                let (k, v) = line.split_once(':').unwrap();
                headers.push((k.trim().to_ascii_lowercase(), v.trim().to_string()));
            }
            let len: usize =
                headers.iter().find(|(k, _)| k == "content-length").map(|(_, v)| v.parse().unwrap()).unwrap_or(0);
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            tx.send(Captured {
                request_line: request_line.trim_end().to_string(),
                headers,
                body: serde_json::from_slice(&body).unwrap_or(Value::Null),
            })
            .unwrap();
            let reason = if status == 200 { "OK" } else { "Error" };
            write!(
                stream,
                "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                reply.len()
            )
            .unwrap();
            stream.flush().unwrap();
        }
    });
    (format!("http://{addr}/v1"), rx)
}

fn completion(content: &str) -> String {
    json!({"id": "x", "choices": [{"index": 0, "message": {"role": "assistant", "content": content}}]}).to_string()
}

fn endpoint(base_url: String, key_var: &str) -> EndpointConfig {
    EndpointConfig {
        base_url,
        model_name: "test-model".into(),
        api_key_env_var: key_var.into(),
        max_retries: 2,
        timeout: Duration::from_secs(10),
        temperature: 0.0,
        retry_backoff_ms: 1,
    }
}

#[test]
fn request_shape_and_reply_parsing() {
    std::env::set_var("CRITSEL_TEST_KEY_SHAPE", "sekrit");
    let (url, rx) = serve(vec![(200, completion("hello"))]);
    let ep = endpoint(url, "CRITSEL_TEST_KEY_SHAPE");
    let req = ChatRequest {
        model: ep.model_name.clone(),
        messages: vec![ChatMessage { role: "user".into(), content: "prompt text".into() }],
        temperature: 0.0,
    };
    assert_eq!(HttpTransport.complete(&ep, &req).unwrap(), "hello");
    let got = rx.recv().unwrap();
    assert_eq!(got.request_line, "POST /v1/chat/completions HTTP/1.1");
    assert!(got.headers.contains(&("authorization".into(), "Bearer sekrit".into())));
    assert_eq!(
        got.body,
        json!({"model": "test-model", "messages": [{"role": "user", "content": "prompt text"}], "temperature": 0.0})
    );
}

#[test]
fn server_errors_are_retried() {
    let t = Trajectory {
        id: "r".into(),
        environment: "e".into(),
        instruction: "do it".into(),
        steps: (0..4)
            .map(|i| Step { index: i, thought: "t".into(), action: "a".into(), observation: "o".into() })
            .collect(),
        final_reward: Some(1.0),
    };
    let answer = "The high-level plan is: x.\nThe critical steps are: conversation[2]\nReason: pivotal action.";
    let (url, rx) = serve(vec![(500, "{}".into()), (200, "not json".into()), (200, completion(answer))]);
    let ep = endpoint(url, "CRITSEL_TEST_KEY_UNSET");
    let sel = select_with_llm(&t, &SelectorPromptConfig::default(), &ep, &HttpTransport, None).unwrap();
    assert_eq!(sel.indices, vec![1]);
    let first = rx.recv().unwrap();
    assert!(!first.headers.iter().any(|(k, _)| k == "authorization"));
    let prompt = first.body["messages"][0]["content"].as_str().unwrap();
    assert!(prompt.contains("conversation[1]") && prompt.contains("conversation[4]"));
    assert_eq!(rx.iter().take(2).count(), 2);
}

#[test]
fn exhausted_retries_are_selector_unavailable() {
    let (url, _rx) = serve(vec![(503, "{}".into()), (503, "{}".into()), (503, "{}".into())]);
    let ep = endpoint(url, "CRITSEL_TEST_KEY_UNSET");
    let t = Trajectory {
        id: "u".into(),
        environment: "e".into(),
        instruction: "i".into(),
        steps: vec![Step { index: 0, thought: String::new(), action: "a".into(), observation: String::new() }],
        final_reward: None,
    };
    let err = select_with_llm(&t, &SelectorPromptConfig::default(), &ep, &HttpTransport, None).unwrap_err();
    assert_eq!(err.class(), "selector-unavailable");
    assert!(err.to_string().contains("503"), "{err}");
}
