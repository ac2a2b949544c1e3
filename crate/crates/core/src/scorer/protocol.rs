//! Line-delimited JSON protocol for external reply-to scorers.
//!
//! The client writes one message per line to the scorer's stdin and reads
//! one message per line from its stdout:
//!
//! ```text
//! -> {"type":"hello","version":1}
//! <- {"type":"ready","scorer":"name"}
//! -> {"type":"score","pair_id":"7","text_a":"...","text_b":"..."}
//! <- {"type":"result","pair_id":"7","score":0.83}
//! -> {"type":"bye"}
//! ```
//!
//! A scorer may answer a request it cannot process with
//! `{"type":"error","pair_id":...,"message":...}`.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::cache::ScoreCache;
use super::{ReplyScorer, ScoreError, ScoreRequest};

pub const PROTOCOL_VERSION: u32 = 1;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Request {
    Hello { version: u32 },
    Score { pair_id: String, text_a: String, text_b: String },
    Bye,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Response {
    Ready { scorer: String },
    Result { pair_id: String, score: f64 },
    Error {
        #[serde(default)]
        pair_id: Option<String>,
        message: String,
    },
}

pub struct ProtocolClient {
    writer: Box<dyn Write + Send>,
    lines: Receiver<std::io::Result<String>>,
    child: Option<Child>,
    scorer: String,
    timeout: Duration,
    next_id: u64,
}

impl ProtocolClient {
    /// Start `command` with piped stdio and perform the handshake.
    pub fn spawn(command: &mut Command, timeout: Duration) -> Result<Self, ScoreError> {
        let mut child = command
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| ScoreError::Transport {
                message: format!("failed to start scorer: {e}"),
                completed: 0,
                total: 0,
            })?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let mut client = Self::unconnected(stdout, stdin, timeout);
        client.child = Some(child);
        client.handshake()?;
        Ok(client)
    }

    /// Talk to a scorer over arbitrary streams and perform the handshake.
    pub fn connect<R, W>(reader: R, writer: W, timeout: Duration) -> Result<Self, ScoreError>
    where
        R: Read + Send + 'static,
        W: Write + Send + 'static,
    {
        let mut client = Self::unconnected(reader, writer, timeout);
        client.handshake()?;
        Ok(client)
    }

    fn unconnected<R, W>(reader: R, writer: W, timeout: Duration) -> Self
    where
        R: Read + Send + 'static,
        W: Write + Send + 'static,
    {
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(reader).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Self {
            writer: Box::new(writer),
            lines: rx,
            child: None,
            scorer: String::new(),
            timeout,
            next_id: 0,
        }
    }

    fn handshake(&mut self) -> Result<(), ScoreError> {
        self.send(&Request::Hello {
            version: PROTOCOL_VERSION,
        })?;
        let deadline = Instant::now() + self.timeout;
        match self.recv(deadline, 0, 0)? {
            Response::Ready { scorer } => {
                self.scorer = scorer;
                Ok(())
            }
            other => Err(ScoreError::ProtocolViolation(format!(
                "expected ready, got {other:?}"
            ))),
        }
    }

    /// Name announced by the scorer during the handshake.
    pub fn scorer_name(&self) -> &str {
        &self.scorer
    }

    fn send(&mut self, msg: &Request) -> Result<(), ScoreError> {
        let line = serde_json::to_string(msg).expect("requests serialize");
        self.send_raw(&line)
    }

    /// Write one line verbatim. Used by the conformance checks.
    pub fn send_raw(&mut self, line: &str) -> Result<(), ScoreError> {
        let res = self
            .writer
            .write_all(line.as_bytes())
            .and_then(|_| self.writer.write_all(b"\n"))
            .and_then(|_| self.writer.flush());
        res.map_err(|e| ScoreError::Transport {
            message: format!("write failed: {e}"),
            completed: 0,
            total: 0,
        })
    }

    /// Read and decode the next message before `deadline`.
    pub fn recv(&mut self, deadline: Instant, completed: usize, total: usize) -> Result<Response, ScoreError> {
        let wait = deadline.saturating_duration_since(Instant::now());
        let line = match self.lines.recv_timeout(wait) {
            Ok(Ok(line)) => line,
            Ok(Err(e)) => {
                return Err(ScoreError::Transport {
                    message: format!("read failed: {e}"),
                    completed,
                    total,
                })
            }
            Err(RecvTimeoutError::Timeout) => {
                return Err(ScoreError::Timeout {
                    after: self.timeout,
                    completed,
                    total,
                })
            }
            Err(RecvTimeoutError::Disconnected) => {
                return Err(ScoreError::Transport {
                    message: "scorer closed its output".into(),
                    completed,
                    total,
                })
            }
        };
        serde_json::from_str(&line)
            .map_err(|e| ScoreError::ProtocolViolation(format!("bad message `{line}`: {e}")))
    }

    /// Score `(text_a, text_b)` pairs. Responses may arrive in any order.
    pub fn score_batch(&mut self, pairs: &[(&str, &str)]) -> Result<Vec<f64>, ScoreError> {
        if pairs.is_empty() {
            return Ok(Vec::new());
        }
        let batch_start = self.next_id;
        // Replies to pairs of an earlier, failed batch may still arrive.
        let stale = |id: &str| id.parse::<u64>().is_ok_and(|n| n < batch_start);
        let mut pending: HashMap<String, usize> = HashMap::with_capacity(pairs.len());
        for (i, (a, b)) in pairs.iter().enumerate() {
            let pair_id = self.next_id.to_string();
            self.next_id += 1;
            self.send(&Request::Score {
                pair_id: pair_id.clone(),
                text_a: (*a).to_string(),
                text_b: (*b).to_string(),
            })?;
            pending.insert(pair_id, i);
        }
        let total = pairs.len();
        let mut scores = vec![f64::NAN; total];
        let deadline = Instant::now() + self.timeout;
        while !pending.is_empty() {
            let completed = total - pending.len();
            match self.recv(deadline, completed, total)? {
                Response::Result { pair_id, .. } if stale(&pair_id) => {
                    log::debug!("ignoring late result for pair {pair_id}");
                }
                Response::Error { pair_id: Some(pair_id), .. } if stale(&pair_id) => {
                    log::debug!("ignoring late error for pair {pair_id}");
                }
                Response::Result { pair_id, score } => {
                    let i = pending.remove(&pair_id).ok_or_else(|| {
                        ScoreError::ProtocolViolation(format!("unexpected pair_id `{pair_id}`"))
                    })?;
                    if !(0.0..=1.0).contains(&score) {
                        return Err(ScoreError::ProtocolViolation(format!(
                            "score {score} for pair `{pair_id}` outside [0, 1]"
                        )));
                    }
                    scores[i] = score;
                }
                Response::Error { pair_id, message } => {
                    return Err(ScoreError::Remote { pair_id, message })
                }
                Response::Ready { .. } => {
                    return Err(ScoreError::ProtocolViolation("unexpected ready".into()))
                }
            }
        }
        Ok(scores)
    }

    /// Send `bye` and wait for a spawned scorer to exit.
    pub fn shutdown(mut self) -> Result<(), ScoreError> {
        let _ = self.send(&Request::Bye);
        // Replacing the writer closes the scorer's stdin.
        self.writer = Box::new(std::io::sink());
        if let Some(mut child) = self.child.take() {
            let deadline = Instant::now() + self.timeout;
            while child.try_wait()?.is_none() {
                if Instant::now() >= deadline {
                    let _ = child.kill();
                    let _ = child.wait();
                    return Err(ScoreError::Timeout {
                        after: self.timeout,
                        completed: 0,
                        total: 0,
                    });
                }
                thread::sleep(Duration::from_millis(10));
            }
        }
        Ok(())
    }
}

impl Drop for ProtocolClient {
    fn drop(&mut self) {
        if let Some(child) = self.child.as_mut() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// External scorer with write-through caching; cached pairs are never re-sent.
pub struct ExternalScorer<'c> {
    client: ProtocolClient,
    cache: &'c mut ScoreCache,
}

impl<'c> ExternalScorer<'c> {
    pub fn new(client: ProtocolClient, cache: &'c mut ScoreCache) -> Self {
        Self { client, cache }
    }

    pub fn into_client(self) -> ProtocolClient {
        self.client
    }
}

impl ReplyScorer for ExternalScorer<'_> {
    fn name(&self) -> String {
        self.client.scorer_name().to_string()
    }

    fn score_batch(&mut self, requests: &[ScoreRequest<'_>]) -> Result<Vec<f64>, ScoreError> {
        external_score_batch(&mut self.client, self.cache, requests)
    }
}

/// Score requests through the client, serving cached pairs locally and
/// writing every new score through to `cache`.
pub fn external_score_batch(
    client: &mut ProtocolClient,
    cache: &mut ScoreCache,
    requests: &[ScoreRequest<'_>],
) -> Result<Vec<f64>, ScoreError> {
    let mut out = vec![f64::NAN; requests.len()];
    let mut todo = Vec::new();
    for (i, r) in requests.iter().enumerate() {
        match cache.get(r.child_id, r.parent_id) {
            Some(s) => out[i] = s,
            None => todo.push(i),
        }
    }
    let texts: Vec<(&str, &str)> = todo
        .iter()
        .map(|&i| (requests[i].text_a, requests[i].text_b))
        .collect();
    let scores = client.score_batch(&texts)?;
    for (&i, s) in todo.iter().zip(scores) {
        cache.insert(requests[i].child_id, requests[i].parent_id, s)?;
        out[i] = s;
    }
    Ok(out)
}

/// Reference scorer loop: answers the protocol on `input`/`output` using
/// `score`. Malformed requests get an error reply and the loop continues.
pub fn serve<R, W, F>(input: R, mut output: W, name: &str, score: F) -> std::io::Result<()>
where
    R: BufRead,
    W: Write,
    F: Fn(&str, &str) -> f64,
{
    let reply = |msg: &Response, out: &mut W| -> std::io::Result<()> {
        serde_json::to_writer(&mut *out, msg)?;
        out.write_all(b"\n")?;
        out.flush()
    };
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Request>(&line) {
            Ok(Request::Hello { .. }) => reply(
                &Response::Ready {
                    scorer: name.to_string(),
                },
                &mut output,
            )?,
            Ok(Request::Score {
                pair_id,
                text_a,
                text_b,
            }) => {
                let s = score(&text_a, &text_b);
                reply(&Response::Result { pair_id, score: s }, &mut output)?
            }
            Ok(Request::Bye) => return Ok(()),
            Err(e) => {
                let pair_id = serde_json::from_str::<serde_json::Value>(&line)
                    .ok()
                    .and_then(|v| v.get("pair_id").and_then(|p| p.as_str()).map(String::from));
                reply(
                    &Response::Error {
                        pair_id,
                        message: e.to_string(),
                    },
                    &mut output,
                )?
            }
        }
    }
    Ok(())
}

/// Outcome of one conformance check against an external scorer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConformanceCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Exercise a connected scorer: handshake, a 100-pair batch, edge-case
/// texts, determinism and recovery after a malformed request.
pub fn run_conformance(client: &mut ProtocolClient) -> Vec<ConformanceCheck> {
    let mut checks = Vec::new();
    let mut push = |name, res: Result<(), String>| {
        checks.push(ConformanceCheck {
            name,
            passed: res.is_ok(),
            detail: res.err().unwrap_or_default(),
        })
    };
    push(
        "handshake",
        if client.scorer_name().is_empty() {
            Err("empty scorer name".into())
        } else {
            Ok(())
        },
    );

    let texts: Vec<(String, String)> = (0..100)
        .map(|i| (format!("parent comment {i}"), "x".repeat(i % 17)))
        .collect();
    let refs: Vec<(&str, &str)> = texts.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
    push(
        "batch-100",
        client
            .score_batch(&refs)
            .map_err(|e| e.to_string())
            .and_then(|s| if s.len() == 100 { Ok(()) } else { Err(format!("{} scores", s.len())) }),
    );

    let long = "word ".repeat(5000);
    push(
        "score-range",
        client
            .score_batch(&[("", ""), (&long, "short"), ("ünïcødé ✓", &long)])
            .map(|_| ())
            .map_err(|e| e.to_string()),
    );

    let twice = client.score_batch(&[("same a", "same b"), ("same a", "same b")]);
    push(
        "determinism",
        match twice {
            Ok(s) if s[0].to_bits() == s[1].to_bits() => Ok(()),
            Ok(s) => Err(format!("{} != {}", s[0], s[1])),
            Err(e) => Err(e.to_string()),
        },
    );

    let recovery = (|| -> Result<(), String> {
        client
            .send_raw(r#"{"type":"score","pair_id":"malformed"}"#)
            .map_err(|e| e.to_string())?;
        let deadline = Instant::now() + client.timeout;
        match client.recv(deadline, 0, 1).map_err(|e| e.to_string())? {
            Response::Error { .. } => {}
            other => return Err(format!("expected error reply, got {other:?}")),
        }
        client
            .score_batch(&[("after", "malformed")])
            .map(|_| ())
            .map_err(|e| e.to_string())
    })();
    push("malformed-recovery", recovery);
    checks
}
