use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Objective, ObjectiveError};
use crate::assembly::{to_json, ArchGraph};

/// One line sent to the evaluator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    pub term: String,
    pub graph: serde_json::Value,
}

/// One line read back: exactly one of `value` and `error` is set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

struct Running {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

/// Client for a long-lived evaluator process speaking JSON lines on its
/// standard streams. The process is started on first use and restarted
/// after a timeout or crash.
pub struct ExternalEvaluator {
    command: Vec<String>,
    timeout: Duration,
    next_id: u64,
    running: Option<Running>,
}

impl ExternalEvaluator {
    pub fn new(command: Vec<String>, timeout: Duration) -> Self {
        ExternalEvaluator { command, timeout, next_id: 0, running: None }
    }

    fn start(&mut self) -> Result<&mut Running, ObjectiveError> {
        if self.running.is_none() {
            let (prog, args) = self
                .command
                .split_first()
                .ok_or_else(|| ObjectiveError::Spec("empty external command".into()))?;
            let mut child = Command::new(prog)
                .args(args)
                .stdin(Stdio::piped())
                .stdout(Stdio::piped())
                .stderr(Stdio::inherit())
                .spawn()
                .map_err(|source| ObjectiveError::Spawn { command: self.command.join(" "), source })?;
            let stdin = child.stdin.take().expect("piped stdin");
            let stdout = child.stdout.take().expect("piped stdout");
            let (tx, rx) = mpsc::channel();
            thread::spawn(move || {
                for line in BufReader::new(stdout).lines() {
                    if tx.send(line).is_err() {
                        break;
                    }
                }
            });
            self.running = Some(Running { child, stdin, lines: rx });
        }
        Ok(self.running.as_mut().unwrap())
    }

    fn kill(&mut self) {
        if let Some(mut r) = self.running.take() {
            let _ = r.child.kill();
            let _ = r.child.wait();
        }
    }

    /// Sends one request and waits for its response.
    pub fn request(&mut self, term: &str, graph: &ArchGraph) -> Result<f64, ObjectiveError> {
        let id = self.next_id;
        self.next_id += 1;
        let req = Request { id, term: term.to_string(), graph: to_json(graph, Some(term)) };
        let line = serde_json::to_string(&req).expect("request serializes");
        let timeout = self.timeout;
        let result = (|| {
            let r = self.start()?;
            writeln!(r.stdin, "{line}")?;
            r.stdin.flush()?;
            let reply = match r.lines.recv_timeout(timeout) {
                Ok(Ok(reply)) => reply,
                Ok(Err(e)) => return Err(ObjectiveError::Io(e)),
                Err(RecvTimeoutError::Timeout) => return Err(ObjectiveError::Timeout(timeout)),
                Err(RecvTimeoutError::Disconnected) => {
                    let status = r.child.wait().map(|s| s.to_string()).unwrap_or_else(|e| e.to_string());
                    return Err(ObjectiveError::Exited(status));
                }
            };
            let resp: Response = serde_json::from_str(reply.trim())
                .map_err(|e| ObjectiveError::Malformed(format!("{e}: {}", reply.trim())))?;
            if resp.id != id {
                return Err(ObjectiveError::Malformed(format!("expected id {id}, got {}", resp.id)));
            }
            match (resp.value, resp.error) {
                (_, Some(err)) => Err(ObjectiveError::Worker(err)),
                (Some(v), None) if v.is_finite() => Ok(v),
                (Some(v), None) => Err(ObjectiveError::Malformed(format!("non-finite value {v}"))),
                (None, None) => Err(ObjectiveError::Malformed("response has neither value nor error".into())),
            }
        })();
        if matches!(
            result,
            Err(ObjectiveError::Timeout(_) | ObjectiveError::Exited(_) | ObjectiveError::Io(_) | ObjectiveError::Malformed(_))
        ) {
            // the stream may be out of step now; start over next time
            self.kill();
        }
        result
    }
}

impl Drop for ExternalEvaluator {
    fn drop(&mut self) {
        if let Some(mut r) = self.running.take() {
            drop(r.stdin);
            // give the worker a moment to exit on end of input
            for _ in 0..50 {
                if let Ok(Some(_)) = r.child.try_wait() {
                    return;
                }
                thread::sleep(Duration::from_millis(20));
            }
            let _ = r.child.kill();
            let _ = r.child.wait();
        }
    }
}

impl Objective for ExternalEvaluator {
    fn evaluate(&mut self, term: &str, graph: &ArchGraph) -> Result<f64, ObjectiveError> {
        self.request(term, graph)
    }
}
