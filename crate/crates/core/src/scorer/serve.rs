//! Server side of the wire protocol: exposes any local [`Scorer`] over
//! stdio or HTTP, and the conformance checks an external scorer must pass.

use std::io::{BufRead, Write};
use std::net::SocketAddr;

use crate::error::{Error, Result};
use crate::scorer::wire::{WireMode, WireRequest, WireResponse, WireToken, WireUnit};
use crate::scorer::Scorer;
use crate::tokenize::{TokenId, Vocab, WordUnit};

pub struct WireServer<S> {
    scorer: S,
    vocab: Vocab,
}

impl<S: Scorer> WireServer<S> {
    /// `vocab` resolves surface-string tokens. Unknown surfaces map to the
    /// vocabulary's unknown token, or fail the request when it has none.
    pub fn new(scorer: S, vocab: Vocab) -> Self {
        WireServer { scorer, vocab }
    }

    fn decode(&self, t: &WireToken) -> Result<TokenId> {
        match t {
            WireToken::Id(id) => Ok(TokenId(*id)),
            WireToken::Surface(s) => self
                .vocab
                .get(s)
                .or_else(|| self.vocab.unk())
                .ok_or_else(|| Error::UnknownToken(s.clone())),
        }
    }

    fn decode_all(&self, tokens: &[WireToken]) -> Result<Vec<TokenId>> {
        tokens.iter().map(|t| self.decode(t)).collect()
    }

    fn decode_units(&self, units: &[WireUnit]) -> Result<Vec<WordUnit>> {
        units.iter().map(|u| WordUnit::new(self.decode_all(u.tokens())?)).collect()
    }

    fn answer(&self, request: &WireRequest) -> Result<WireResponse> {
        let context = self.decode_all(&request.context)?;
        let mut response = WireResponse { id: request.id, nll: None, matrix: None, error: None };
        match request.mode {
            WireMode::BatchNll => {
                let candidates: Vec<Vec<TokenId>> =
                    request.candidates.iter().map(|c| self.decode_all(c)).collect::<Result<_>>()?;
                response.nll = Some(self.scorer.score_batch(&context, &candidates)?);
            }
            WireMode::Matrix => {
                let sequence = self.decode_units(&request.sequence)?;
                let set = self.decode_units(&request.candidate_set)?;
                response.matrix = Some(self.scorer.next_token_matrix(&context, &sequence, &set)?.to_rows());
            }
        }
        Ok(response)
    }

    pub fn handle(&self, request: &WireRequest) -> WireResponse {
        self.answer(request).unwrap_or_else(|e| WireResponse::error(request.id, e.to_string()))
    }

    /// Answers one protocol line. Malformed requests get an error record
    /// echoing the id when one can be recovered.
    pub fn handle_line(&self, line: &str) -> String {
        let response = match serde_json::from_str::<WireRequest>(line) {
            Ok(request) => self.handle(&request),
            Err(e) => {
                let id = serde_json::from_str::<serde_json::Value>(line)
                    .ok()
                    .and_then(|v| v.get("id").and_then(serde_json::Value::as_u64))
                    .unwrap_or(0);
                WireResponse::error(id, format!("malformed request: {e}"))
            }
        };
        serde_json::to_string(&response).expect("responses always serialize")
    }

    /// Serves newline-delimited requests until end of input.
    pub fn serve_lines<R: BufRead, W: Write>(&self, input: R, mut output: W) -> Result<()> {
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            writeln!(output, "{}", self.handle_line(&line))?;
            output.flush()?;
        }
        Ok(())
    }
}

/// Minimal HTTP front end: `POST /score` and `GET /health`.
pub struct HttpServer {
    server: tiny_http::Server,
}

impl HttpServer {
    pub fn bind(addr: &str) -> Result<Self> {
        let server = tiny_http::Server::http(addr)
            .map_err(|e| Error::InvalidConfig(format!("cannot listen on {addr}: {e}")))?;
        Ok(HttpServer { server })
    }

    pub fn local_addr(&self) -> Option<SocketAddr> {
        self.server.server_addr().to_ip()
    }

    /// Stops a running [`HttpServer::run`] loop.
    pub fn unblock(&self) {
        self.server.unblock();
    }

    pub fn run<S: Scorer>(&self, handler: &WireServer<S>) -> Result<()> {
        for mut request in self.server.incoming_requests() {
            let (status, body) = match (request.method(), request.url()) {
                (tiny_http::Method::Get, "/health") => (200, "ok".to_owned()),
                (tiny_http::Method::Post, "/score") => {
                    let mut body = String::new();
                    match request.as_reader().read_to_string(&mut body) {
                        Ok(_) => (200, handler.handle_line(&body)),
                        Err(e) => (400, e.to_string()),
                    }
                }
                _ => (404, "not found".to_owned()),
            };
            let header = tiny_http::Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..])
                .expect("static header");
            let response = tiny_http::Response::from_string(body).with_status_code(status).with_header(header);
            if let Err(e) = request.respond(response) {
                log::warn!("failed to send response: {e}");
            }
        }
        Ok(())
    }
}

/// One line of a conformance report.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Runs the protocol conformance checks against `scorer` using the given
/// sentences (single-token units): structural validity, cross-mode
/// consistency of matrix diagonals with batch per-token NLLs, and batching
/// equivalence, both within `tolerance`.
pub fn conformance<S: Scorer + ?Sized>(scorer: &S, sentences: &[Vec<TokenId>], tolerance: f64) -> Vec<Check> {
    let mut checks = Vec::new();
    let mut push = |name: &str, result: Result<String>| {
        let (passed, detail) = match result {
            Ok(d) => (true, d),
            Err(e) => (false, e.to_string()),
        };
        checks.push(Check { name: name.to_owned(), passed, detail });
    };

    push(
        "batch-structure",
        scorer.score_batch(&[], sentences).map(|v| format!("{} candidates scored", v.len())),
    );

    push(
        "matrix-structure",
        (|| {
            for s in sentences {
                let units: Vec<WordUnit> = s.iter().map(|&t| WordUnit::single(t)).collect();
                let mut set = units.clone();
                set.sort();
                set.dedup();
                let m = scorer.next_token_matrix(&[], &units, &set)?;
                if m.rows() != units.len() + 1 || m.cols() != set.len() {
                    return Err(Error::Protocol(format!("matrix is {}x{}", m.rows(), m.cols())));
                }
            }
            Ok(format!("{} matrices well-formed", sentences.len()))
        })(),
    );

    push(
        "cross-mode",
        (|| {
            let mut worst = 0.0f64;
            for s in sentences {
                let prefixes: Vec<Vec<TokenId>> = (1..=s.len()).map(|i| s[..i].to_vec()).collect();
                let totals = scorer.score_batch(&[], &prefixes)?;
                let units: Vec<WordUnit> = s.iter().map(|&t| WordUnit::single(t)).collect();
                let mut set = units.clone();
                set.sort();
                set.dedup();
                let m = scorer.next_token_matrix(&[], &units, &set)?;
                for (i, unit) in units.iter().enumerate() {
                    let per_token = totals[i] - if i == 0 { 0.0 } else { totals[i - 1] };
                    let col = set.binary_search(unit).expect("unit is in its own candidate set");
                    worst = worst.max((m.get(i, col) - per_token).abs());
                }
            }
            if worst <= tolerance {
                Ok(format!("max deviation {worst:.3e}"))
            } else {
                Err(Error::Protocol(format!("matrix diagonal deviates from batch NLLs by {worst:.3e}")))
            }
        })(),
    );

    push(
        "batching-equivalence",
        (|| {
            let batched = scorer.score_batch(&[], sentences)?;
            let mut worst = 0.0f64;
            for (s, b) in sentences.iter().zip(&batched) {
                let single = scorer.score_batch(&[], std::slice::from_ref(s))?[0];
                worst = worst.max((single - b).abs());
            }
            if worst <= tolerance {
                Ok(format!("max deviation {worst:.3e}"))
            } else {
                Err(Error::Protocol(format!("batched and single NLLs differ by {worst:.3e}")))
            }
        })(),
    );

    checks
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ngram::{NGramModel, Smoothing};

    fn server() -> WireServer<NGramModel> {
        let lines = ["a b c", "b c a"];
        let vocab = Vocab::from_corpus(&lines, false);
        let model = NGramModel::train_on_text(&lines, vocab.clone(), 2, Smoothing::AddK(0.1)).unwrap();
        WireServer::new(model, vocab)
    }

    #[test]
    fn malformed_request_echoes_id() {
        let s = server();
        let out = s.handle_line(r#"{"id":42,"mode":"nonsense"}"#);
        let r: WireResponse = serde_json::from_str(&out).unwrap();
        assert_eq!(r.id, 42);
        assert!(r.error.is_some());
        let out = s.handle_line("not json");
        assert!(serde_json::from_str::<WireResponse>(&out).unwrap().error.is_some());
    }

    #[test]
    fn surfaces_and_ids_agree() {
        let s = server();
        let a = s.vocab.get("a").unwrap().0;
        let b = s.vocab.get("b").unwrap().0;
        let by_id = s.handle_line(&format!(r#"{{"id":1,"mode":"batch-nll","context":[],"candidates":[[{a},{b}]]}}"#));
        let by_surface = s.handle_line(r#"{"id":1,"mode":"batch-nll","context":[],"candidates":[["a","b"]]}"#);
        assert_eq!(by_id, by_surface);
        let unknown = s.handle_line(r#"{"id":2,"mode":"batch-nll","context":[],"candidates":[["zzz"]]}"#);
        assert!(unknown.contains("error"));
    }
}
