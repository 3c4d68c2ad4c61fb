//! Line-delimited JSON protocol between the gateway and an out-of-process
//! evaluator. One object per line, UTF-8:
//!
//! ```text
//! -> {"type":"hello","protocol":1}
//! <- {"type":"ready","n_layers":L,"heads_per_layer":H,"task":"gsm8k"}
//! -> {"type":"eval","id":"q0","ablate":[[15,13],[16,21]]}
//! <- {"type":"result","id":"q0","accuracy":0.43,"n_samples":100}
//! <- {"type":"error","id":"q0","message":"..."}
//! ```
//!
//! Responses may arrive in any order; ids correlate them with requests.
//! Extra keys in `ready` are kept as evaluator metadata.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::gateway::{AblationQuery, Evaluator};
use crate::space::{HeadId, HeadSet};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Message {
    Hello {
        protocol: u32,
    },
    Ready {
        n_layers: usize,
        heads_per_layer: usize,
        task: String,
        #[serde(flatten)]
        metadata: Map<String, Value>,
    },
    Eval {
        id: String,
        ablate: Vec<[usize; 2]>,
    },
    Result {
        id: String,
        accuracy: f64,
        n_samples: usize,
    },
    Error {
        #[serde(default)]
        id: Option<String>,
        message: String,
    },
}

impl Message {
    pub fn eval(query: &AblationQuery) -> Self {
        Message::Eval {
            id: query.id.clone(),
            ablate: query.ablated.iter().map(|h| [h.layer, h.head]).collect(),
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("protocol messages always serialise")
    }

    pub fn parse(line: &str) -> Result<Self> {
        serde_json::from_str(line).map_err(|e| Error::Protocol(format!("bad message {line:?}: {e}")))
    }
}

/// Evaluator side of the protocol: answers requests from `input` on
/// `output` until end of input.
pub fn serve<R: BufRead, W: Write>(evaluator: &dyn Evaluator, input: R, mut output: W) -> Result<()> {
    let info = evaluator.info();
    let mut send = |msg: Message| -> Result<()> {
        writeln!(output, "{}", msg.to_line())?;
        output.flush()?;
        Ok(())
    };
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = match Message::parse(&line) {
            Ok(Message::Hello { protocol }) if protocol == PROTOCOL_VERSION => Message::Ready {
                n_layers: info.shape.n_layers(),
                heads_per_layer: info.shape.heads_per_layer(),
                task: info.task.clone(),
                metadata: info.metadata.clone(),
            },
            Ok(Message::Hello { protocol }) => Message::Error {
                id: None,
                message: format!("unsupported protocol version {protocol}"),
            },
            Ok(Message::Eval { id, ablate }) => {
                let heads = ablate.iter().map(|&[l, h]| HeadId::new(l, h));
                match HeadSet::from_heads(info.shape, heads) {
                    Err(e) => Message::Error {
                        id: Some(id),
                        message: e.to_string(),
                    },
                    Ok(ablated) => {
                        let query = AblationQuery { id: id.clone(), ablated };
                        match evaluator.evaluate(&query) {
                            Ok(e) => Message::Result {
                                id,
                                accuracy: e.accuracy,
                                n_samples: e.n_samples,
                            },
                            Err(e) => Message::Error {
                                id: Some(id),
                                message: e.to_string(),
                            },
                        }
                    }
                }
            }
            Ok(other) => Message::Error {
                id: None,
                message: format!("unexpected message {}", other.to_line()),
            },
            Err(e) => Message::Error {
                id: None,
                message: e.to_string(),
            },
        };
        send(reply)?;
    }
    Ok(())
}
