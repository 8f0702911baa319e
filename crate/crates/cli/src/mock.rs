//! Deterministic stand-in for an external classifier, used by the
//! `mock-endpoint` binary and the integration tests.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use anyhow::{Context, Result};
use serde::Deserialize;
use sha2::{Digest, Sha256};
use solidarity_core::model::{PredictRequest, PredictResponse, Scores};
use solidarity_core::LabelCoarse;

/// Pseudo-random but stable scores for a request, summing to 1.
pub fn scores_for(id: &str, text: &str) -> [f64; 3] {
    let mut h = Sha256::new();
    h.update(id.as_bytes());
    h.update([0u8]);
    h.update(text.as_bytes());
    let d = h.finalize();
    let raw: Vec<f64> = (0..3).map(|i| 1.0 + f64::from(u16::from_le_bytes([d[2 * i], d[2 * i + 1]]))).collect();
    let sum: f64 = raw.iter().sum();
    [raw[0] / sum, raw[1] / sum, raw[2] / sum]
}

/// How the mock answers.
#[derive(Debug, Clone, Default)]
pub struct MockBehavior {
    /// Fixed label per tweet id; ids not listed fall back to [`scores_for`].
    pub table: BTreeMap<String, LabelCoarse>,
    /// Reply with a different id than requested.
    pub wrong_id: bool,
    pub delay_ms: u64,
}

#[derive(Deserialize)]
struct TableRow {
    id: String,
    label: LabelCoarse,
}

impl MockBehavior {
    /// Reads `{"id":..,"label":..}` lines.
    pub fn load_table(&mut self, data: &[u8]) -> Result<()> {
        for (i, line) in data.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row: TableRow = serde_json::from_str(&line).with_context(|| format!("table line {}", i + 1))?;
            self.table.insert(row.id, row.label);
        }
        Ok(())
    }

    pub fn respond(&self, req: &PredictRequest) -> PredictResponse {
        if self.delay_ms > 0 {
            std::thread::sleep(std::time::Duration::from_millis(self.delay_ms));
        }
        let p = match self.table.get(&req.id) {
            Some(l) => {
                let mut p = [0.1; 3];
                p[l.index()] = 0.8;
                p
            }
            None => scores_for(&req.id, &req.text),
        };
        let id = if self.wrong_id { format!("{}-x", req.id) } else { req.id.clone() };
        PredictResponse {
            id,
            scores: Some(Scores { s: p[0], a: p[1], o: p[2] }),
            error: None,
        }
    }

    /// Parses one request line and produces one response line (no newline).
    pub fn respond_line(&self, line: &str) -> String {
        let resp = match serde_json::from_str::<PredictRequest>(line) {
            Ok(req) => self.respond(&req),
            Err(e) => PredictResponse {
                id: String::new(),
                scores: None,
                error: Some(format!("bad request: {e}")),
            },
        };
        serde_json::to_string(&resp).expect("response serializes")
    }

    /// Line-delimited JSON over stdin/stdout until EOF.
    pub fn serve_stdio<R: BufRead, W: Write>(&self, input: R, mut output: W) -> Result<()> {
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            writeln!(output, "{}", self.respond_line(&line))?;
            output.flush()?;
        }
        Ok(())
    }

    /// Serves `POST /predict` until the process is killed.
    pub fn serve_http(&self, server: &tiny_http::Server) -> Result<()> {
        let json = tiny_http::Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..]).expect("static header");
        for mut req in server.incoming_requests() {
            if req.url() != "/predict" || *req.method() != tiny_http::Method::Post {
                let _ = req.respond(tiny_http::Response::from_string("not found").with_status_code(404));
                continue;
            }
            let mut body = String::new();
            if req.as_reader().read_to_string(&mut body).is_err() {
                let _ = req.respond(tiny_http::Response::from_string("bad body").with_status_code(400));
                continue;
            }
            let resp = tiny_http::Response::from_string(self.respond_line(&body)).with_header(json.clone());
            let _ = req.respond(resp);
        }
        Ok(())
    }
}
