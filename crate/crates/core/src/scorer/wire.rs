//! Newline-delimited JSON protocol for external scorers, and the client side
//! of it.
//!
//! Request:
//! `{"id":7,"mode":"batch-nll","context":[...],"candidates":[[...],...]}` or
//! `{"id":7,"mode":"matrix","context":[...],"sequence":[[...],...],"candidate_set":[[...],...]}`.
//! Response: `{"id":7,"nll":[...]}`, `{"id":7,"matrix":[[...],...]}` or
//! `{"id":7,"error":"..."}`.
//!
//! Tokens are integer ids or surface strings. `sequence` and
//! `candidate_set` hold word units, each a list of tokens; a bare token is
//! accepted as a one-token unit. Over HTTP the same body is POSTed to
//! `/score`, one request per call.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scorer::{validate_batch, validate_candidate_set, NllMatrix, Scorer};
use crate::tokenize::{TokenId, Vocab, WordUnit};

pub const TIMEOUT_ENV: &str = "IBIS_SCORER_TIMEOUT_MS";
pub const DEFAULT_TIMEOUT_MS: u64 = 60_000;

pub fn timeout_from_env() -> Duration {
    let ms = std::env::var(TIMEOUT_ENV)
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(DEFAULT_TIMEOUT_MS);
    Duration::from_millis(ms)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WireToken {
    Id(u32),
    Surface(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WireUnit {
    Tokens(Vec<WireToken>),
    Single(WireToken),
}

impl WireUnit {
    pub fn tokens(&self) -> &[WireToken] {
        match self {
            WireUnit::Tokens(t) => t,
            WireUnit::Single(t) => std::slice::from_ref(t),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WireMode {
    #[serde(rename = "batch-nll")]
    BatchNll,
    #[serde(rename = "matrix")]
    Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub id: u64,
    pub mode: WireMode,
    #[serde(default)]
    pub context: Vec<WireToken>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub candidates: Vec<Vec<WireToken>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sequence: Vec<WireUnit>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub candidate_set: Vec<WireUnit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    pub id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nll: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl WireResponse {
    pub fn error(id: u64, message: impl Into<String>) -> Self {
        WireResponse { id, nll: None, matrix: None, error: Some(message.into()) }
    }
}

fn finite_nonneg(values: &[f64]) -> bool {
    values.iter().all(|v| v.is_finite() && *v >= 0.0)
}

/// Structural validation of a response against the request it answers.
pub fn validate_response(request: &WireRequest, response: &WireResponse) -> Result<()> {
    if response.id != request.id {
        return Err(Error::Protocol(format!("response id {} does not match request id {}", response.id, request.id)));
    }
    if let Some(e) = &response.error {
        return Err(Error::Protocol(format!("scorer reported an error: {e}")));
    }
    match request.mode {
        WireMode::BatchNll => {
            let nll = response.nll.as_ref().ok_or_else(|| Error::Protocol("batch response without \"nll\"".into()))?;
            if nll.len() != request.candidates.len() {
                return Err(Error::Protocol(format!(
                    "expected {} NLLs, got {}",
                    request.candidates.len(),
                    nll.len()
                )));
            }
            if !finite_nonneg(nll) {
                return Err(Error::Protocol("NLLs must be finite and nonnegative".into()));
            }
        }
        WireMode::Matrix => {
            let m = response.matrix.as_ref().ok_or_else(|| Error::Protocol("matrix response without \"matrix\"".into()))?;
            if m.len() != request.sequence.len() + 1 {
                return Err(Error::Protocol(format!(
                    "expected {} matrix rows, got {}",
                    request.sequence.len() + 1,
                    m.len()
                )));
            }
            if m.iter().any(|row| row.len() != request.candidate_set.len()) {
                return Err(Error::Protocol("matrix row length differs from candidate set size".into()));
            }
            if !m.iter().all(|row| finite_nonneg(row)) {
                return Err(Error::Protocol("matrix entries must be finite and nonnegative".into()));
            }
        }
    }
    Ok(())
}

/// Carries one request to a scorer and returns its answer.
pub trait Transport: Send + Sync {
    fn exchange(&self, request: &WireRequest) -> Result<WireResponse>;
}

/// A scorer process speaking the protocol on its stdin/stdout. Requests are
/// serialized; responses are matched to requests by id.
pub struct StdioTransport {
    inner: Mutex<StdioInner>,
    timeout: Duration,
}

struct StdioInner {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
    stash: HashMap<u64, WireResponse>,
}

impl StdioTransport {
    /// Runs `command` through `sh -c`.
    pub fn spawn(command: &str, timeout: Duration) -> Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::ScorerUnavailable(format!("cannot start {command:?}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(StdioTransport {
            inner: Mutex::new(StdioInner { child, stdin, lines: rx, stash: HashMap::new() }),
            timeout,
        })
    }
}

impl Transport for StdioTransport {
    fn exchange(&self, request: &WireRequest) -> Result<WireResponse> {
        let mut inner = self.inner.lock().map_err(|_| Error::ScorerUnavailable("scorer connection poisoned".into()))?;
        if let Some(r) = inner.stash.remove(&request.id) {
            return Ok(r);
        }
        let line = serde_json::to_string(request).map_err(|e| Error::Protocol(e.to_string()))?;
        writeln!(inner.stdin, "{line}")
            .and_then(|_| inner.stdin.flush())
            .map_err(|e| Error::ScorerUnavailable(format!("write to scorer failed: {e}")))?;
        loop {
            let line = match inner.lines.recv_timeout(self.timeout) {
                Ok(Ok(line)) => line,
                Ok(Err(e)) => return Err(Error::ScorerUnavailable(format!("read from scorer failed: {e}"))),
                Err(RecvTimeoutError::Timeout) => {
                    return Err(Error::ScorerUnavailable(format!("no response within {:?}", self.timeout)))
                }
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(Error::ScorerUnavailable("scorer process closed its output".into()))
                }
            };
            if line.trim().is_empty() {
                continue;
            }
            let response: WireResponse =
                serde_json::from_str(&line).map_err(|e| Error::Protocol(format!("bad response line: {e}")))?;
            if response.id == request.id {
                return Ok(response);
            }
            inner.stash.insert(response.id, response);
        }
    }
}

impl Drop for StdioTransport {
    fn drop(&mut self) {
        if let Ok(inner) = self.inner.get_mut() {
            let _ = inner.child.kill();
            let _ = inner.child.wait();
        }
    }
}

/// POSTs each request to `<base>/score`.
pub struct HttpTransport {
    agent: ureq::Agent,
    url: String,
}

impl HttpTransport {
    pub fn new(base: &str, timeout: Duration) -> Self {
        let base = base.trim_end_matches('/');
        let url = if base.ends_with("/score") { base.to_owned() } else { format!("{base}/score") };
        let agent: ureq::Agent = ureq::Agent::config_builder().timeout_global(Some(timeout)).build().into();
        HttpTransport { agent, url }
    }
}

impl Transport for HttpTransport {
    fn exchange(&self, request: &WireRequest) -> Result<WireResponse> {
        let body = serde_json::to_string(request).map_err(|e| Error::Protocol(e.to_string()))?;
        let mut response = self
            .agent
            .post(&self.url)
            .header("content-type", "application/json")
            .send(body)
            .map_err(|e| Error::ScorerUnavailable(format!("POST {} failed: {e}", self.url)))?;
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| Error::ScorerUnavailable(format!("reading response from {} failed: {e}", self.url)))?;
        serde_json::from_str(&text).map_err(|e| Error::Protocol(format!("bad response body: {e}")))
    }
}

/// How token ids are written on the wire.
#[derive(Debug, Clone)]
pub enum Payload {
    Ids,
    /// Surface strings, for scorers that run their own tokenizer.
    Surfaces(Arc<Vocab>),
}

impl Payload {
    fn encode(&self, t: TokenId) -> Result<WireToken> {
        match self {
            Payload::Ids => Ok(WireToken::Id(t.0)),
            Payload::Surfaces(vocab) => vocab
                .surface(t)
                .map(|s| WireToken::Surface(s.to_owned()))
                .ok_or_else(|| Error::UnknownToken(format!("id {t}"))),
        }
    }

    fn encode_all(&self, tokens: &[TokenId]) -> Result<Vec<WireToken>> {
        tokens.iter().map(|&t| self.encode(t)).collect()
    }

    fn encode_units(&self, units: &[WordUnit]) -> Result<Vec<WireUnit>> {
        units.iter().map(|u| self.encode_all(u.tokens()).map(WireUnit::Tokens)).collect()
    }
}

/// A [`Scorer`] backed by an external process or service.
pub struct RemoteScorer {
    transport: Box<dyn Transport>,
    payload: Payload,
    end_token: Option<TokenId>,
    next_id: AtomicU64,
}

impl RemoteScorer {
    pub fn new(transport: Box<dyn Transport>, payload: Payload) -> Self {
        RemoteScorer { transport, payload, end_token: None, next_id: AtomicU64::new(1) }
    }

    /// Declares the token the remote model uses to close a sequence.
    pub fn with_end_token(mut self, end: Option<TokenId>) -> Self {
        self.end_token = end;
        self
    }

    fn call(&self, mut request: WireRequest) -> Result<WireResponse> {
        request.id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let response = self.transport.exchange(&request)?;
        validate_response(&request, &response)?;
        Ok(response)
    }
}

impl Scorer for RemoteScorer {
    fn score_batch(&self, context: &[TokenId], candidates: &[Vec<TokenId>]) -> Result<Vec<f64>> {
        validate_batch(candidates)?;
        let request = WireRequest {
            id: 0,
            mode: WireMode::BatchNll,
            context: self.payload.encode_all(context)?,
            candidates: candidates.iter().map(|c| self.payload.encode_all(c)).collect::<Result<_>>()?,
            sequence: Vec::new(),
            candidate_set: Vec::new(),
        };
        Ok(self.call(request)?.nll.expect("validated"))
    }

    fn next_token_matrix(
        &self,
        context: &[TokenId],
        sequence: &[WordUnit],
        candidate_set: &[WordUnit],
    ) -> Result<NllMatrix> {
        validate_candidate_set(candidate_set)?;
        let request = WireRequest {
            id: 0,
            mode: WireMode::Matrix,
            context: self.payload.encode_all(context)?,
            candidates: Vec::new(),
            sequence: self.payload.encode_units(sequence)?,
            candidate_set: self.payload.encode_units(candidate_set)?,
        };
        NllMatrix::from_rows(self.call(request)?.matrix.expect("validated"))
    }

    fn end_token(&self) -> Option<TokenId> {
        self.end_token
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_shape() {
        let req = WireRequest {
            id: 3,
            mode: WireMode::Matrix,
            context: vec![WireToken::Id(4)],
            candidates: vec![],
            sequence: vec![WireUnit::Tokens(vec![WireToken::Surface("a".into())])],
            candidate_set: vec![WireUnit::Tokens(vec![WireToken::Id(1), WireToken::Id(2)])],
        };
        let json = serde_json::to_string(&req).unwrap();
        assert_eq!(json, r#"{"id":3,"mode":"matrix","context":[4],"sequence":[["a"]],"candidate_set":[[1,2]]}"#);
        let back: WireRequest = serde_json::from_str(&json).unwrap();
        assert_eq!(back, req);
    }

    #[test]
    fn bare_tokens_are_units() {
        let req: WireRequest =
            serde_json::from_str(r#"{"id":1,"mode":"matrix","context":[],"sequence":["a",["b","c"]],"candidate_set":[5]}"#)
                .unwrap();
        assert_eq!(req.sequence[0].tokens(), &[WireToken::Surface("a".into())]);
        assert_eq!(req.sequence[1].tokens().len(), 2);
        assert_eq!(req.candidate_set[0].tokens(), &[WireToken::Id(5)]);
    }

    #[test]
    fn response_validation() {
        let req = WireRequest {
            id: 9,
            mode: WireMode::BatchNll,
            context: vec![],
            candidates: vec![vec![WireToken::Id(1)], vec![WireToken::Id(2)]],
            sequence: vec![],
            candidate_set: vec![],
        };
        let ok = WireResponse { id: 9, nll: Some(vec![0.5, 1.5]), matrix: None, error: None };
        assert!(validate_response(&req, &ok).is_ok());
        let wrong_id = WireResponse { id: 8, ..ok.clone() };
        assert!(validate_response(&req, &wrong_id).is_err());
        let short = WireResponse { nll: Some(vec![0.5]), ..ok.clone() };
        assert!(validate_response(&req, &short).is_err());
        let negative = WireResponse { nll: Some(vec![0.5, -1.0]), ..ok.clone() };
        assert!(validate_response(&req, &negative).is_err());
        assert!(validate_response(&req, &WireResponse::error(9, "boom")).is_err());
    }

    #[test]
    fn unreachable_http_scorer() {
        let scorer = RemoteScorer::new(
            Box::new(HttpTransport::new("http://127.0.0.1:9", Duration::from_millis(500))),
            Payload::Ids,
        );
        let err = scorer.score_batch(&[], &[vec![TokenId(1)]]).unwrap_err();
        assert!(matches!(err, Error::ScorerUnavailable(_)), "{err:?}");
    }

    #[test]
    fn dead_stdio_scorer() {
        let scorer = RemoteScorer::new(
            Box::new(StdioTransport::spawn("exit 0", Duration::from_millis(2000)).unwrap()),
            Payload::Ids,
        );
        let err = scorer.score_batch(&[], &[vec![TokenId(1)]]).unwrap_err();
        assert!(err.is_scorer_failure(), "{err:?}");
    }
}
