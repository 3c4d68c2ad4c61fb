//! Evaluator running as a child process that speaks the line protocol on its
//! standard input and output.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use tracing::warn;

use crate::error::{Error, Result};
use crate::gateway::{AblationQuery, Evaluation, Evaluator, EvaluatorInfo};
use crate::protocol::{Message, PROTOCOL_VERSION};
use crate::space::ModelShape;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(600);

#[derive(Debug, Clone)]
pub struct SubprocessConfig {
    pub command: String,
    pub args: Vec<String>,
    /// Maximum wait for any single response.
    pub timeout: Duration,
    /// Requests kept in flight at once.
    pub concurrency: usize,
}

impl SubprocessConfig {
    pub fn new(command: impl Into<String>, args: Vec<String>) -> Self {
        Self {
            command: command.into(),
            args,
            timeout: DEFAULT_TIMEOUT,
            concurrency: 1,
        }
    }
}

struct Channel {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
    /// Set after a timeout or exit; later requests fail fast.
    broken: Option<String>,
}

pub struct SubprocessEvaluator {
    config: SubprocessConfig,
    info: EvaluatorInfo,
    channel: Mutex<Channel>,
}

impl SubprocessEvaluator {
    /// Starts the child and performs the hello/ready handshake.
    pub fn spawn(config: SubprocessConfig) -> Result<Self> {
        let mut child = Command::new(&config.command)
            .args(&config.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Transport {
                query_id: "handshake".into(),
                message: format!("cannot start {}: {e}", config.command),
            })?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        let mut channel = Channel {
            child,
            stdin,
            lines: rx,
            broken: None,
        };
        send(&mut channel, &Message::Hello {
            protocol: PROTOCOL_VERSION,
        }, "handshake")?;
        let info = loop {
            match receive(&mut channel, config.timeout, "handshake")? {
                Message::Ready {
                    n_layers,
                    heads_per_layer,
                    task,
                    metadata,
                } => {
                    break EvaluatorInfo {
                        task,
                        shape: ModelShape::new(n_layers, heads_per_layer)?,
                        metadata,
                    }
                }
                Message::Error { message, .. } => {
                    return Err(Error::Transport {
                        query_id: "handshake".into(),
                        message,
                    })
                }
                other => warn!("ignoring {} before handshake", other.to_line()),
            }
        };
        Ok(Self {
            config,
            info,
            channel: Mutex::new(channel),
        })
    }

    pub fn config(&self) -> &SubprocessConfig {
        &self.config
    }
}

fn send(ch: &mut Channel, msg: &Message, query_id: &str) -> Result<()> {
    let line = msg.to_line();
    let res = writeln!(ch.stdin, "{line}").and_then(|_| ch.stdin.flush());
    res.map_err(|e| {
        let message = format!("write failed: {e}");
        ch.broken = Some(message.clone());
        Error::Transport {
            query_id: query_id.into(),
            message,
        }
    })
}

fn receive(ch: &mut Channel, timeout: Duration, query_id: &str) -> Result<Message> {
    let fail = |ch: &mut Channel, message: String| {
        ch.broken = Some(message.clone());
        Error::Transport {
            query_id: query_id.into(),
            message,
        }
    };
    loop {
        match ch.lines.recv_timeout(timeout) {
            Ok(Ok(line)) if line.trim().is_empty() => continue,
            Ok(Ok(line)) => return Message::parse(&line),
            Ok(Err(e)) => return Err(fail(ch, format!("read failed: {e}"))),
            Err(RecvTimeoutError::Timeout) => {
                return Err(fail(ch, format!("no response within {:.1}s", timeout.as_secs_f64())))
            }
            Err(RecvTimeoutError::Disconnected) => {
                return Err(fail(ch, "evaluator exited".into()))
            }
        }
    }
}

impl Evaluator for SubprocessEvaluator {
    fn info(&self) -> EvaluatorInfo {
        self.info.clone()
    }

    fn evaluate(&self, query: &AblationQuery) -> Result<Evaluation> {
        self.evaluate_many(std::slice::from_ref(query), 1)
            .pop()
            .expect("one result")
    }

    /// Pipelines up to `concurrency` requests; responses are matched by id.
    fn evaluate_many(&self, queries: &[AblationQuery], concurrency: usize) -> Vec<Result<Evaluation>> {
        let mut ch = self.channel.lock().unwrap();
        let mut out: Vec<Option<Result<Evaluation>>> = (0..queries.len()).map(|_| None).collect();
        if let Some(reason) = ch.broken.clone() {
            return queries
                .iter()
                .map(|q| {
                    Err(Error::Transport {
                        query_id: q.id.clone(),
                        message: reason.clone(),
                    })
                })
                .collect();
        }
        let window = concurrency.max(1);
        let mut in_flight: HashMap<String, usize> = HashMap::new();
        // Oldest outstanding first, for error attribution.
        let mut order: Vec<String> = Vec::new();
        let mut next = 0;
        while next < queries.len() || !in_flight.is_empty() {
            while next < queries.len() && in_flight.len() < window {
                let q = &queries[next];
                if let Err(e) = send(&mut ch, &Message::eval(q), &q.id) {
                    out[next] = Some(Err(e));
                    next += 1;
                    break;
                }
                in_flight.insert(q.id.clone(), next);
                order.push(q.id.clone());
                next += 1;
            }
            if ch.broken.is_some() && in_flight.is_empty() {
                break;
            }
            if in_flight.is_empty() {
                continue;
            }
            let oldest = order
                .iter()
                .find(|id| in_flight.contains_key(*id))
                .cloned()
                .expect("in-flight query");
            match receive(&mut ch, self.config.timeout, &oldest) {
                Ok(Message::Result {
                    id,
                    accuracy,
                    n_samples,
                }) => match in_flight.remove(&id) {
                    Some(slot) => out[slot] = Some(Ok(Evaluation { accuracy, n_samples })),
                    None => warn!("dropping result for unknown query {id}"),
                },
                Ok(Message::Error { id: Some(id), message }) => match in_flight.remove(&id) {
                    Some(slot) => {
                        out[slot] = Some(Err(Error::Evaluator {
                            query_id: id,
                            message,
                        }))
                    }
                    None => warn!("evaluator error for unknown query {id}: {message}"),
                },
                Ok(other) => warn!("ignoring unexpected message {}", other.to_line()),
                Err(Error::Protocol(msg)) => warn!("{msg}"),
                Err(e) => {
                    let message = match &e {
                        Error::Transport { message, .. } => message.clone(),
                        other => other.to_string(),
                    };
                    for (id, slot) in in_flight.drain() {
                        out[slot] = Some(Err(Error::Transport {
                            query_id: id,
                            message: message.clone(),
                        }));
                    }
                    break;
                }
            }
        }
        let reason = ch.broken.clone().unwrap_or_else(|| "not sent".into());
        out.into_iter()
            .zip(queries)
            .map(|(r, q)| {
                r.unwrap_or_else(|| {
                    Err(Error::Transport {
                        query_id: q.id.clone(),
                        message: reason.clone(),
                    })
                })
            })
            .collect()
    }

    fn default_concurrency(&self) -> usize {
        self.config.concurrency
    }
}

impl Drop for SubprocessEvaluator {
    fn drop(&mut self) {
        if let Ok(ch) = self.channel.get_mut() {
            let _ = ch.child.kill();
            let _ = ch.child.wait();
        }
    }
}
