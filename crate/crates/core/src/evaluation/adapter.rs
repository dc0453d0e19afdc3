//! Pluggable evaluators that score a task list under one coalition.
//!
//! Wire protocol (subprocess and HTTP): the request is one JSON line per task,
//! `{"coalition": [labels...], "task_id": "t0001"}`, and the response is one JSON
//! line per task in the same order, `{"task_id": "t0001", "score": 0.5}`. A
//! `null` score marks a task that failed inside the workflow. Text is UTF-8.
//!
//! A subprocess is started with `sh -c <command>` once per coalition; requests go
//! to stdin, responses come from stdout and a nonzero exit is a transport
//! failure. The HTTP form POSTs the request lines and reads the response lines
//! from the body; a non-2xx status is a transport failure.

use std::io::{Read, Write};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::thread;
use std::time::{Duration, Instant};

use serde_json::Value;

use super::records::TaskResponse;
use super::EvalError;
use crate::game::{Coalition, ComponentSet};
use crate::simulator::{draw_scores, success_rate, SyntheticGameSpec};

/// Retry ceiling accepted by [`EvaluatorAdapter`].
pub const MAX_RETRIES: u32 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdapterKind {
    Subprocess,
    HttpEndpoint,
    InProcessSimulator,
}

/// Failure of one evaluation attempt.
#[derive(Debug, Clone, PartialEq)]
pub enum AttemptError {
    /// Retryable: spawn/exit/timeout/HTTP failures.
    Transport(String),
    /// Not retryable: the evaluator answered but the answer is malformed.
    Protocol { line: String, reason: String },
}

/// Performs one evaluation attempt.
pub trait Backend: Send + Sync {
    fn evaluate(
        &self,
        coalition: Coalition,
        labels: &[&str],
        tasks: &[String],
        timeout: Duration,
    ) -> Result<Vec<TaskResponse>, AttemptError>;
}

/// Request lines for one coalition.
pub fn encode_requests(labels: &[&str], tasks: &[String]) -> String {
    let mut out = String::new();
    for t in tasks {
        let line = serde_json::json!({ "coalition": labels, "task_id": t });
        out.push_str(&line.to_string());
        out.push('\n');
    }
    out
}

/// Parses response lines, requiring one per task in request order.
pub fn decode_responses(text: &str, tasks: &[String]) -> Result<Vec<TaskResponse>, AttemptError> {
    let proto = |line: &str, reason: String| AttemptError::Protocol {
        line: line.to_string(),
        reason,
    };
    let mut out = Vec::with_capacity(tasks.len());
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let Some(expected) = tasks.get(out.len()) else {
            return Err(proto(line, format!("more than {} responses", tasks.len())));
        };
        let value: Value =
            serde_json::from_str(line).map_err(|e| proto(line, format!("not JSON: {e}")))?;
        let task_id = value
            .get("task_id")
            .and_then(Value::as_str)
            .ok_or_else(|| proto(line, "missing string field task_id".into()))?;
        if task_id != expected {
            return Err(proto(
                line,
                format!("expected task_id {expected:?}, got {task_id:?}"),
            ));
        }
        let score = match value.get("score") {
            Some(Value::Null) => None,
            Some(Value::Number(n)) => {
                let s = n.as_f64().unwrap_or(f64::NAN);
                if !(0.0..=1.0).contains(&s) {
                    return Err(proto(line, format!("score {n} outside [0, 1]")));
                }
                Some(s)
            }
            Some(other) => {
                return Err(proto(
                    line,
                    format!("score must be a number or null, got {other}"),
                ))
            }
            None => return Err(proto(line, "missing field score".into())),
        };
        out.push(TaskResponse {
            task_id: task_id.to_string(),
            score,
        });
    }
    if out.len() < tasks.len() {
        return Err(proto(
            "<end of stream>",
            format!("expected {} responses, got {}", tasks.len(), out.len()),
        ));
    }
    Ok(out)
}

pub struct SubprocessBackend {
    pub command: String,
}

impl Backend for SubprocessBackend {
    fn evaluate(
        &self,
        _coalition: Coalition,
        labels: &[&str],
        tasks: &[String],
        timeout: Duration,
    ) -> Result<Vec<TaskResponse>, AttemptError> {
        let input = encode_requests(labels, tasks);
        let stdout = run_with_timeout(&self.command, input, timeout)?;
        let text = String::from_utf8(stdout).map_err(|e| AttemptError::Protocol {
            line: String::from_utf8_lossy(e.as_bytes())
                .lines()
                .next()
                .unwrap_or("")
                .to_string(),
            reason: "response is not UTF-8".into(),
        })?;
        decode_responses(&text, tasks)
    }
}

fn run_with_timeout(
    command: &str,
    input: String,
    timeout: Duration,
) -> Result<Vec<u8>, AttemptError> {
    let transport = |m: String| AttemptError::Transport(m);
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(command)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| transport(format!("cannot start {command:?}: {e}")))?;

    let mut stdin = child.stdin.take().expect("piped stdin");
    let mut stdout = child.stdout.take().expect("piped stdout");
    let mut stderr = child.stderr.take().expect("piped stderr");
    // a child that exits without reading stdin surfaces through its exit status
    let writer = thread::spawn(move || {
        let _ = stdin.write_all(input.as_bytes());
    });
    let out_reader = thread::spawn(move || {
        let mut buf = Vec::new();
        stdout.read_to_end(&mut buf).map(|_| buf)
    });
    let err_reader = thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = stderr.read_to_end(&mut buf);
        buf
    });

    let deadline = Instant::now() + timeout;
    let status = loop {
        match child.try_wait() {
            Ok(Some(status)) => break status,
            Ok(None) if Instant::now() >= deadline => {
                let _ = child.kill();
                let _ = child.wait();
                let _ = writer.join();
                return Err(transport(format!(
                    "evaluator timed out after {:.3}s",
                    timeout.as_secs_f64()
                )));
            }
            Ok(None) => thread::sleep(Duration::from_millis(2)),
            Err(e) => return Err(transport(format!("waiting for evaluator: {e}"))),
        }
    };
    let _ = writer.join();
    let stdout = out_reader
        .join()
        .expect("reader thread")
        .map_err(|e| transport(format!("reading evaluator output: {e}")))?;
    let stderr = err_reader.join().expect("reader thread");
    if !status.success() {
        let tail = String::from_utf8_lossy(&stderr);
        let tail = tail.trim();
        return Err(transport(format!("evaluator exited with {status}: {tail}")));
    }
    Ok(stdout)
}

pub struct HttpBackend {
    pub url: String,
}

impl Backend for HttpBackend {
    fn evaluate(
        &self,
        _coalition: Coalition,
        labels: &[&str],
        tasks: &[String],
        timeout: Duration,
    ) -> Result<Vec<TaskResponse>, AttemptError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let mut resp = agent
            .post(&self.url)
            .header("Content-Type", "application/x-ndjson")
            .send(encode_requests(labels, tasks))
            .map_err(|e| AttemptError::Transport(format!("POST {}: {e}", self.url)))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(AttemptError::Transport(format!(
                "POST {} returned {status}",
                self.url
            )));
        }
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| AttemptError::Transport(format!("reading response body: {e}")))?;
        decode_responses(&text, tasks)
    }
}

/// Draws Bernoulli scores from a synthetic game.
pub struct SimulatorBackend {
    pub spec: SyntheticGameSpec,
    pub seed: u64,
}

impl Backend for SimulatorBackend {
    fn evaluate(
        &self,
        coalition: Coalition,
        _labels: &[&str],
        tasks: &[String],
        _timeout: Duration,
    ) -> Result<Vec<TaskResponse>, AttemptError> {
        let p = success_rate(&self.spec, coalition).map_err(|e| AttemptError::Protocol {
            line: "<simulator>".into(),
            reason: e.to_string(),
        })?;
        Ok(tasks
            .iter()
            .zip(draw_scores(p, coalition, tasks, self.seed))
            .map(|(t, s)| TaskResponse {
                task_id: t.clone(),
                score: Some(s),
            })
            .collect())
    }
}

/// An evaluator plus its timeout/retry policy and invocation counters.
pub struct EvaluatorAdapter {
    pub kind: AdapterKind,
    pub target: String,
    pub timeout: Duration,
    pub max_retries: u32,
    backend: Box<dyn Backend>,
    evaluations: AtomicU64,
    attempts: AtomicU64,
}

impl std::fmt::Debug for EvaluatorAdapter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EvaluatorAdapter")
            .field("kind", &self.kind)
            .field("target", &self.target)
            .field("timeout", &self.timeout)
            .field("max_retries", &self.max_retries)
            .finish()
    }
}

impl EvaluatorAdapter {
    pub fn with_backend(
        kind: AdapterKind,
        target: impl Into<String>,
        backend: Box<dyn Backend>,
        timeout: Duration,
        max_retries: u32,
    ) -> Result<Self, EvalError> {
        if timeout.is_zero() {
            return Err(EvalError::Config("timeout must be positive".into()));
        }
        if max_retries > MAX_RETRIES {
            return Err(EvalError::Config(format!(
                "max_retries {max_retries} exceeds {MAX_RETRIES}"
            )));
        }
        Ok(EvaluatorAdapter {
            kind,
            target: target.into(),
            timeout,
            max_retries,
            backend,
            evaluations: AtomicU64::new(0),
            attempts: AtomicU64::new(0),
        })
    }

    pub fn subprocess(
        command: impl Into<String>,
        timeout: Duration,
        max_retries: u32,
    ) -> Result<Self, EvalError> {
        let command = command.into();
        let backend = Box::new(SubprocessBackend {
            command: command.clone(),
        });
        Self::with_backend(
            AdapterKind::Subprocess,
            command,
            backend,
            timeout,
            max_retries,
        )
    }

    pub fn http(
        url: impl Into<String>,
        timeout: Duration,
        max_retries: u32,
    ) -> Result<Self, EvalError> {
        let url = url.into();
        let backend = Box::new(HttpBackend { url: url.clone() });
        Self::with_backend(
            AdapterKind::HttpEndpoint,
            url,
            backend,
            timeout,
            max_retries,
        )
    }

    pub fn simulator(spec: SyntheticGameSpec, seed: u64) -> Result<Self, EvalError> {
        spec.check()?;
        let target = format!("simulator(n={}, seed={seed})", spec.n());
        let backend = Box::new(SimulatorBackend { spec, seed });
        Self::with_backend(
            AdapterKind::InProcessSimulator,
            target,
            backend,
            Duration::from_secs(60),
            0,
        )
    }

    /// Coalitions sent to the backend (cache misses), regardless of retries.
    pub fn evaluations(&self) -> u64 {
        self.evaluations.load(Ordering::SeqCst)
    }

    /// Individual backend attempts, including retries.
    pub fn attempts(&self) -> u64 {
        self.attempts.load(Ordering::SeqCst)
    }

    /// Scores `tasks` under `coalition`, retrying transport failures.
    pub fn call(
        &self,
        coalition: Coalition,
        components: &ComponentSet,
        tasks: &[String],
    ) -> Result<Vec<TaskResponse>, EvalError> {
        self.evaluations.fetch_add(1, Ordering::SeqCst);
        let labels = components.coalition_labels(coalition);
        let mut last = String::new();
        for _ in 0..=self.max_retries {
            self.attempts.fetch_add(1, Ordering::SeqCst);
            match self
                .backend
                .evaluate(coalition, &labels, tasks, self.timeout)
            {
                Ok(responses) => return Ok(responses),
                Err(AttemptError::Protocol { line, reason }) => {
                    return Err(EvalError::Protocol {
                        mask: coalition.mask(),
                        line,
                        reason,
                    })
                }
                Err(AttemptError::Transport(message)) => last = message,
            }
        }
        Err(EvalError::Transport {
            mask: coalition.mask(),
            failed_tasks: tasks.to_vec(),
            attempts: self.max_retries + 1,
            message: last,
        })
    }
}
