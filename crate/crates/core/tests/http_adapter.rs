use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use wfshap_core::evaluation::{
    run_attribution, CoalitionCache, EvalError, EvaluatorAdapter, RunOptions,
};
use wfshap_core::{ComponentSet, EstimatorConfig};

/// Serves `requests` connections; each answer scores a task 1 if "a" is in the coalition.
/// Requests listed in `fail_first` get a 503 instead.
fn serve(requests: usize, fail_first: usize) -> (String, Arc<AtomicUsize>, thread::JoinHandle<()>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/evaluate", listener.local_addr().unwrap());
    let seen = Arc::new(AtomicUsize::new(0));
    let counter = seen.clone();
    let handle = thread::spawn(move || {
        for stream in listener.incoming().take(requests) {
            let mut stream = stream.unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut length = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                if let Some((k, v)) = line.split_once(':') {
                    if k.eq_ignore_ascii_case("content-length") {
                        length = v.trim().parse().unwrap();
                    }
                }
            }
            let mut body = vec![0; length];
            reader.read_exact(&mut body).unwrap();
            let k = counter.fetch_add(1, Ordering::SeqCst);
            let response = if k < fail_first {
                "HTTP/1.1 503 Service Unavailable\r\nContent-Length: 0\r\nConnection: close\r\n\r\n"
                    .to_string()
            } else {
                let mut out = String::new();
                for line in String::from_utf8(body).unwrap().lines() {
                    let req: serde_json::Value = serde_json::from_str(line).unwrap();
                    let has_a = req["coalition"]
                        .as_array()
                        .unwrap()
                        .iter()
                        .any(|c| c == "a");
                    out.push_str(&format!(
                        "{{\"task_id\":{},\"score\":{}}}\n",
                        req["task_id"],
                        if has_a { 1 } else { 0 }
                    ));
                }
                format!(
                    "HTTP/1.1 200 OK\r\nContent-Type: application/x-ndjson\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{out}",
                    out.len()
                )
            };
            stream.write_all(response.as_bytes()).unwrap();
        }
    });
    (url, seen, handle)
}

#[test]
fn http_endpoint_round_trip() {
    let (url, seen, handle) = serve(4, 0);
    let adapter = EvaluatorAdapter::http(url, Duration::from_secs(10), 0).unwrap();
    let components = ComponentSet::new(["a", "b"]).unwrap();
    let tasks = vec!["x".to_string(), "y".to_string()];
    let out = run_attribution(
        &adapter,
        &components,
        &tasks,
        &EstimatorConfig::exact(),
        &CoalitionCache::in_memory(),
        &RunOptions::default(),
    )
    .unwrap();
    handle.join().unwrap();
    assert_eq!(seen.load(Ordering::SeqCst), 4);
    assert_eq!(out.result.phi, vec![1.0, 0.0]);
}

#[test]
fn http_errors_are_retried() {
    let (url, _seen, handle) = serve(3, 2);
    let adapter = EvaluatorAdapter::http(url, Duration::from_secs(10), 2).unwrap();
    let components = ComponentSet::new(["a"]).unwrap();
    let responses = adapter
        .call(
            wfshap_core::Coalition::from_mask(1),
            &components,
            &["t".to_string()],
        )
        .unwrap();
    handle.join().unwrap();
    assert_eq!(responses[0].score, Some(1.0));
    assert_eq!(adapter.attempts(), 3);
}

#[test]
fn unreachable_endpoint_is_a_transport_error() {
    let port = TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let adapter = EvaluatorAdapter::http(
        format!("http://127.0.0.1:{port}/"),
        Duration::from_secs(2),
        1,
    )
    .unwrap();
    let err = adapter
        .call(
            wfshap_core::Coalition::EMPTY,
            &ComponentSet::new(["a"]).unwrap(),
            &["t".to_string()],
        )
        .unwrap_err();
    assert!(
        matches!(err, EvalError::Transport { attempts: 2, .. }),
        "{err}"
    );
}
