//! The scoring abstraction every search routine goes through.
//!
//! A scorer answers two kinds of query about token sequences following a
//! fixed context:
//!
//! * batch NLL: the total negative log-likelihood of each candidate,
//! * next-token matrix: for each prefix of a sequence of word units, the NLL
//!   of each unit in a candidate set appearing next.
//!
//! Multi-subtoken candidates are scored by their first subtoken in matrix
//! mode. The matrix only ranks proposals; acceptance decisions always use
//! batch NLLs.
//!
//! Scorers that model sequence termination expose an end token. Complete
//! sequences are scored with that token appended (see [`score_complete`]).

pub mod serve;
pub mod wire;

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::tokenize::{flatten, TokenId, WordUnit, WordUnitSeq};

pub use wire::{RemoteScorer, Transport};

pub trait Scorer: Send + Sync {
    /// Total NLL (nats) of each candidate, conditioned on `context`.
    fn score_batch(&self, context: &[TokenId], candidates: &[Vec<TokenId>]) -> Result<Vec<f64>>;

    /// Row `i` holds the NLL of each candidate's first token given `context`
    /// followed by the first `i` units of `sequence`.
    fn next_token_matrix(
        &self,
        context: &[TokenId],
        sequence: &[WordUnit],
        candidate_set: &[WordUnit],
    ) -> Result<NllMatrix>;

    /// Token that closes a complete sequence, when the model has one.
    fn end_token(&self) -> Option<TokenId> {
        None
    }
}

impl<S: Scorer + ?Sized> Scorer for &S {
    fn score_batch(&self, context: &[TokenId], candidates: &[Vec<TokenId>]) -> Result<Vec<f64>> {
        (**self).score_batch(context, candidates)
    }

    fn next_token_matrix(
        &self,
        context: &[TokenId],
        sequence: &[WordUnit],
        candidate_set: &[WordUnit],
    ) -> Result<NllMatrix> {
        (**self).next_token_matrix(context, sequence, candidate_set)
    }

    fn end_token(&self) -> Option<TokenId> {
        (**self).end_token()
    }
}

impl<S: Scorer + ?Sized> Scorer for Box<S> {
    fn score_batch(&self, context: &[TokenId], candidates: &[Vec<TokenId>]) -> Result<Vec<f64>> {
        (**self).score_batch(context, candidates)
    }

    fn next_token_matrix(
        &self,
        context: &[TokenId],
        sequence: &[WordUnit],
        candidate_set: &[WordUnit],
    ) -> Result<NllMatrix> {
        (**self).next_token_matrix(context, sequence, candidate_set)
    }

    fn end_token(&self) -> Option<TokenId> {
        (**self).end_token()
    }
}

/// Dense `(positions + 1) x candidates` matrix of NLLs in nats.
#[derive(Debug, Clone, PartialEq)]
pub struct NllMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl NllMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_rows = rows.len();
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Protocol("ragged NLL matrix".into()));
        }
        let values: Vec<f64> = rows.into_iter().flatten().collect();
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::Protocol(format!("NLL matrix entry {v} is not a finite nonnegative value")));
        }
        Ok(NllMatrix { rows: n_rows, cols, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.values[row * self.cols..(row + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|r| self.row(r).to_vec()).collect()
    }
}

/// Checks the request invariants shared by every scorer implementation.
pub fn validate_batch(candidates: &[Vec<TokenId>]) -> Result<()> {
    if candidates.is_empty() {
        return Err(Error::InvalidInput("batch request with no candidates".into()));
    }
    if candidates.iter().any(Vec::is_empty) {
        return Err(Error::InvalidInput("empty candidate sequence".into()));
    }
    Ok(())
}

pub fn validate_candidate_set(candidate_set: &[WordUnit]) -> Result<()> {
    if candidate_set.is_empty() {
        return Err(Error::InvalidInput("empty candidate set".into()));
    }
    let mut seen = HashSet::with_capacity(candidate_set.len());
    if !candidate_set.iter().all(|u| seen.insert(u.tokens())) {
        return Err(Error::InvalidInput("candidate set has duplicate units".into()));
    }
    Ok(())
}

/// Scores complete sequences, closing each with the scorer's end token.
pub fn score_complete<S: Scorer + ?Sized>(
    scorer: &S,
    context: &[TokenId],
    sequences: &[Vec<TokenId>],
) -> Result<Vec<f64>> {
    match scorer.end_token() {
        Some(end) => {
            let closed: Vec<Vec<TokenId>> = sequences
                .iter()
                .map(|s| {
                    let mut s = s.clone();
                    s.push(end);
                    s
                })
                .collect();
            scorer.score_batch(context, &closed)
        }
        None => scorer.score_batch(context, sequences),
    }
}

/// NLL of a complete sequence of units after its own context.
pub fn sequence_nll<S: Scorer + ?Sized>(scorer: &S, seq: &WordUnitSeq) -> Result<f64> {
    let nll = score_complete(scorer, &seq.context, &[flatten(&seq.units)])?;
    Ok(nll[0])
}
