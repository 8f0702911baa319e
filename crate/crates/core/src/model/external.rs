//! Adapter for externally hosted models.
//!
//! Wire protocol, one JSON object per line (subprocess stdio) or per
//! request body (`POST {url}/predict`):
//!
//! ```text
//! → {"id": "123", "text": "..."}
//! ← {"id": "123", "scores": {"S": 0.2, "A": 0.7, "O": 0.1}}
//! ```
//!
//! Scores whose sum is within 1e-3 of 1 are renormalized; anything else is
//! rejected. A reply may carry `{"id": .., "error": ".."}` instead of scores.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{ClassProbs, ModelError};
use crate::corpus::Tweet;

const SUM_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "transport", rename_all = "lowercase")]
pub enum Transport {
    Subprocess { command: Vec<String> },
    Http { url: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndpointConfig {
    #[serde(flatten)]
    pub transport: Transport,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

fn default_timeout_ms() -> u64 {
    30_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictRequest {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    #[serde(rename = "S")]
    pub s: f64,
    #[serde(rename = "A")]
    pub a: f64,
    #[serde(rename = "O")]
    pub o: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<Scores>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl PredictResponse {
    /// Validates the reply against the request id and normalizes the scores.
    pub fn into_probs(self, expected_id: &str) -> Result<ClassProbs, ModelError> {
        if self.id != expected_id {
            return Err(ModelError::OrderViolation {
                expected: expected_id.to_string(),
                got: self.id,
            });
        }
        if let Some(err) = self.error {
            return Err(ModelError::Endpoint(err));
        }
        let s = self
            .scores
            .ok_or_else(|| ModelError::Malformed("response has neither scores nor error".into()))?;
        normalize_scores([s.s, s.a, s.o])
    }
}

pub(crate) fn normalize_scores(raw: [f64; 3]) -> Result<ClassProbs, ModelError> {
    if raw.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(ModelError::Malformed(format!("scores must be finite and non-negative: {raw:?}")));
    }
    let sum: f64 = raw.iter().sum();
    if (sum - 1.0).abs() >= SUM_TOLERANCE {
        return Err(ModelError::Malformed(format!("scores sum to {sum}, not 1")));
    }
    Ok(ClassProbs(raw.map(|x| x / sum)))
}

struct SubprocessConn {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
}

impl SubprocessConn {
    fn spawn(command: &[String]) -> Result<Self, ModelError> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| ModelError::Endpoint("empty subprocess command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child.stdin.take();
        let stdout = child
            .stdout
            .take()
            .ok_or_else(|| ModelError::Endpoint("subprocess stdout unavailable".into()))?;
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(SubprocessConn {
            child,
            stdin,
            lines: rx,
        })
    }

    fn round_trip(&mut self, line: &str, timeout: Duration) -> Result<String, ModelError> {
        let stdin = self
            .stdin
            .as_mut()
            .ok_or_else(|| ModelError::Endpoint("subprocess stdin closed".into()))?;
        stdin.write_all(line.as_bytes())?;
        stdin.write_all(b"\n")?;
        stdin.flush()?;
        match self.lines.recv_timeout(timeout) {
            Ok(Ok(reply)) => Ok(reply),
            Ok(Err(e)) => Err(e.into()),
            Err(RecvTimeoutError::Timeout) => Err(ModelError::Timeout(timeout.as_millis() as u64)),
            Err(RecvTimeoutError::Disconnected) => Err(ModelError::Endpoint("subprocess exited".into())),
        }
    }
}

impl Drop for SubprocessConn {
    fn drop(&mut self) {
        // Closing stdin asks a well-behaved endpoint to exit.
        self.stdin.take();
        for _ in 0..50 {
            if let Ok(Some(_)) = self.child.try_wait() {
                return;
            }
            thread::sleep(Duration::from_millis(10));
        }
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

enum State {
    Idle,
    Subprocess(SubprocessConn),
    Http(ureq::Agent),
    /// A timed-out or desynchronized stream cannot be trusted again.
    Broken(String),
}

/// One connection to an external model; handles one request at a time.
pub struct ExternalEndpoint {
    config: EndpointConfig,
    state: Mutex<State>,
}

impl ExternalEndpoint {
    pub fn new(config: EndpointConfig) -> Self {
        ExternalEndpoint {
            config,
            state: Mutex::new(State::Idle),
        }
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    fn timeout(&self) -> Duration {
        Duration::from_millis(self.config.timeout_ms)
    }

    pub fn request(&self, tweet: &Tweet) -> Result<ClassProbs, ModelError> {
        let req = PredictRequest {
            id: tweet.id.clone(),
            text: tweet.text.clone(),
        };
        let mut state = self.state.lock().unwrap_or_else(|e| e.into_inner());
        if let State::Idle = *state {
            *state = match &self.config.transport {
                Transport::Subprocess { command } => State::Subprocess(SubprocessConn::spawn(command)?),
                Transport::Http { .. } => State::Http(
                    ureq::Agent::config_builder()
                        .timeout_global(Some(self.timeout()))
                        .build()
                        .into(),
                ),
            };
        }
        let result = match &mut *state {
            State::Subprocess(conn) => {
                let line = serde_json::to_string(&req).map_err(|e| ModelError::Malformed(e.to_string()))?;
                conn.round_trip(&line, self.timeout()).and_then(|reply| {
                    serde_json::from_str::<PredictResponse>(&reply)
                        .map_err(|e| ModelError::Malformed(format!("{e}: {reply}")))
                })
            }
            State::Http(agent) => {
                let Transport::Http { url } = &self.config.transport else {
                    unreachable!("http state only for http transport")
                };
                http_predict(agent, url, &req, self.config.timeout_ms)
            }
            State::Broken(reason) => return Err(ModelError::Endpoint(format!("endpoint unusable: {reason}"))),
            State::Idle => unreachable!("connected above"),
        };
        let result = result.and_then(|resp| resp.into_probs(&req.id));
        if let (State::Subprocess(_), Err(e @ (ModelError::Timeout(_) | ModelError::OrderViolation { .. } | ModelError::Io(_)))) =
            (&*state, &result)
        {
            *state = State::Broken(e.to_string());
        }
        result
    }
}

fn http_predict(agent: &ureq::Agent, url: &str, req: &PredictRequest, timeout_ms: u64) -> Result<PredictResponse, ModelError> {
    let endpoint = format!("{}/predict", url.trim_end_matches('/'));
    let mut resp = agent.post(&endpoint).send_json(req).map_err(|e| match e {
        ureq::Error::Timeout(_) => ModelError::Timeout(timeout_ms),
        ureq::Error::StatusCode(code) => ModelError::Endpoint(format!("HTTP {code}")),
        other => ModelError::Endpoint(other.to_string()),
    })?;
    resp.body_mut()
        .read_json::<PredictResponse>()
        .map_err(|e| ModelError::Malformed(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::LabelCoarse;

    #[test]
    fn passthrough_scores() {
        let resp: PredictResponse = serde_json::from_str(r#"{"id":"1","scores":{"S":0.2,"A":0.7,"O":0.1}}"#).unwrap();
        let p = resp.into_probs("1").unwrap();
        assert_eq!(p.argmax(), LabelCoarse::A);
        assert!((p.0.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn renormalizes_small_drift_rejects_large() {
        let p = normalize_scores([0.5, 0.3, 0.2005]).unwrap();
        assert!((p.0.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(normalize_scores([0.5, 0.3, 0.25]).is_err());
        assert!(normalize_scores([1.1, -0.1, 0.0]).is_err());
        assert!(normalize_scores([f64::NAN, 0.5, 0.5]).is_err());
    }

    #[test]
    fn id_mismatch_and_error_replies() {
        let resp: PredictResponse = serde_json::from_str(r#"{"id":"2","scores":{"S":1,"A":0,"O":0}}"#).unwrap();
        assert!(matches!(resp.into_probs("1"), Err(ModelError::OrderViolation { .. })));
        let resp: PredictResponse = serde_json::from_str(r#"{"id":"1","error":"oom"}"#).unwrap();
        assert!(matches!(resp.into_probs("1"), Err(ModelError::Endpoint(m)) if m == "oom"));
        let resp: PredictResponse = serde_json::from_str(r#"{"id":"1"}"#).unwrap();
        assert!(matches!(resp.into_probs("1"), Err(ModelError::Malformed(_))));
    }

    #[test]
    fn config_json_shape() {
        let cfg: EndpointConfig =
            serde_json::from_str(r#"{"transport":"subprocess","command":["python3","m.py"],"timeout_ms":500}"#).unwrap();
        assert_eq!(
            cfg.transport,
            Transport::Subprocess {
                command: vec!["python3".into(), "m.py".into()]
            }
        );
        let cfg: EndpointConfig = serde_json::from_str(r#"{"transport":"http","url":"http://localhost:9"}"#).unwrap();
        assert_eq!(cfg.timeout_ms, 30_000);
    }

    #[test]
    fn subprocess_round_trip_with_shell_echo() {
        // A line-oriented shell endpoint that answers every request with fixed scores.
        let script = r#"while IFS= read -r line; do id=$(printf '%s' "$line" | sed 's/.*"id":"\([^"]*\)".*/\1/'); printf '{"id":"%s","scores":{"S":0.1,"A":0.2,"O":0.7}}\n' "$id"; done"#;
        let ep = ExternalEndpoint::new(EndpointConfig {
            transport: Transport::Subprocess {
                command: vec!["sh".into(), "-c".into(), script.into()],
            },
            timeout_ms: 5_000,
        });
        for i in 0..5 {
            let t = Tweet::new(format!("t{i}"), "hi", crate::corpus::Lang::En, chrono::Utc::now());
            assert_eq!(ep.request(&t).unwrap().argmax(), LabelCoarse::O);
        }
    }

    #[test]
    fn subprocess_timeout_breaks_endpoint() {
        let ep = ExternalEndpoint::new(EndpointConfig {
            transport: Transport::Subprocess {
                command: vec!["sh".into(), "-c".into(), "sleep 5".into()],
            },
            timeout_ms: 100,
        });
        let t = Tweet::new("x", "hi", crate::corpus::Lang::En, chrono::Utc::now());
        assert!(matches!(ep.request(&t), Err(ModelError::Timeout(100))));
        assert!(matches!(ep.request(&t), Err(ModelError::Endpoint(_))));
    }
}
